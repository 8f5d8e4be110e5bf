//! Driving a live session the way the correction UI does: step until the
//! robot waits for input, drag one waypoint, and read back the events.
//!
//! The drag is the one whose joint torque matches the simulated human's
//! push in the same scenario, so the session aligns the laptop feature.

use realign::kinematics::Point;
use realign::scenario::Scenario;
use realign::session::{DragCorrection, Session, SessionMode, SessionParams};

fn main() -> realign::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/laptop_moved.json");
    let params = SessionParams {
        mode: SessionMode::Live,
        ..Default::default()
    };
    let mut session = Session::new(Scenario::load(path)?, params)?;
    session.step()?;
    println!("phase {:?}", session.phase());

    let drag = DragCorrection {
        waypoint_index: 9,
        drag: Point::new(1.3, 0.65),
    };
    let outcome = session.apply_drag(&drag)?;
    println!("drag became torque {:.3?}, phase {:?}", outcome.correction.torque, outcome.phase);

    let mut cursor = 0;
    while !session.phase().is_done() {
        session.step()?;
        for e in session.events_since(cursor) {
            println!("{:3} {}", e.seq, e.kind.name());
        }
        cursor = session.events().len();
    }
    let snap = session.snapshot();
    println!("weights {:.3?}, beta {:.3}, corrections {}", snap.weights, snap.beta, snap.corrections);
    Ok(())
}
