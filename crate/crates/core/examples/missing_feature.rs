//! When no moved object explains a correction, ask the human for samples of
//! what they care about and fit a new feature.

use realign::kinematics::Point;
use realign::episode::run_episode;
use realign::report::EventKind;
use realign::scenario::Scenario;

fn xy(p: &Point) -> String {
    format!("({:.3}, {:.3})", p.x, p.y)
}

fn main() -> realign::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/missing_feature.json");
    let report = run_episode(&Scenario::load(path)?)?;
    for e in &report.events {
        match &e.kind {
            EventKind::Diagnosis(d) => println!("cycle {}: missing feature {}", e.cycle, d.missing_feature),
            EventKind::Query { query, answered } => println!(
                "cycle {}: asked for {} samples in [{:.2}, {:.2}] x [{:.2}, {:.2}], got {answered}",
                e.cycle, query.samples, query.min.x, query.max.x, query.min.y, query.max.y
            ),
            EventKind::FeatureAdded { feature, weight, .. } => println!(
                "cycle {}: learned {} at {} (width {:.3}), weight {weight}",
                e.cycle,
                feature.id,
                xy(&feature.peak()),
                feature.width()
            ),
            _ => {}
        }
    }
    println!("final weights {:?}", report.final_weights);
    println!("outcome {:?} after {} corrections", report.metrics.outcome, report.metrics.corrections);
    Ok(())
}
