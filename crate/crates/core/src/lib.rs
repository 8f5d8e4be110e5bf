pub mod diagnosis;
pub mod episode;
pub mod error;
pub mod features;
pub mod kinematics;
pub mod learning;
pub mod oracle;
pub mod planner;
pub mod report;
pub mod scenario;
pub mod session;
pub mod trajectory;
pub mod world;

pub use error::{Error, Result};
