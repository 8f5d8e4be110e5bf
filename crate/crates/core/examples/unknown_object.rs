//! A second laptop appears that the robot never trained with. Each known
//! object is tried as a stand-in and the best-scoring one donates a copy of
//! its feature.

use realign::kinematics::Point;
use realign::episode::run_episode;
use realign::report::EventKind;
use realign::scenario::Scenario;

fn xy(p: &Point) -> String {
    format!("({:.3}, {:.3})", p.x, p.y)
}

fn main() -> realign::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/new_object.json");
    let report = run_episode(&Scenario::load(path)?)?;
    for e in &report.events {
        match &e.kind {
            EventKind::Diagnosis(d) => {
                for h in &d.hypotheses {
                    println!(
                        "{} as {}: delta {}, best beta {:.3}",
                        h.new_object.as_deref().unwrap_or("?"),
                        h.object_id,
                        xy(&h.delta),
                        h.max_beta
                    );
                }
            }
            EventKind::FeatureAdded { feature, weight, .. } => {
                println!("added {} at {} with weight {weight}", feature.id, xy(&feature.peak()));
            }
            _ => {}
        }
    }
    for c in &report.metrics.clearance {
        println!("clearance to {}: {:.3} -> {:.3}", c.object_id, c.before, c.after);
    }
    Ok(())
}
