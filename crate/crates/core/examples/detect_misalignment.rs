//! Confidence that a correction is explained by the robot's own features.
//!
//! The same push is judged twice: once where training and test layouts
//! agree and once after the laptop moved. Only the second should look
//! unexplainable.

use realign::episode::Episode;
use realign::report::EventKind;
use realign::scenario::Scenario;

fn main() -> realign::Result<()> {
    for name in ["aligned", "laptop_moved"] {
        let path = format!("{}/../../scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"));
        let mut episode = Episode::new(Scenario::load(path)?)?;
        episode.advance()?;
        episode.oracle_step()?;
        let detection = episode.events().iter().find_map(|e| match &e.kind {
            EventKind::Detection(d) => Some(d.clone()),
            _ => None,
        });
        let Some(d) = detection else {
            println!("{name}: the human did not correct the first plan");
            continue;
        };
        println!("{name}: best beta {:.3}, misaligned {}", d.beta, d.misaligned);
        for f in &d.per_feature {
            println!(
                "  {:<20} beta {:7.3}  |u*|^2 {:.4}  involved {}",
                f.feature_id, f.beta, f.optimal_effort, f.involved
            );
        }
    }
    Ok(())
}
