//! Run one scenario end to end and print its event log.
//!
//! `cargo run --example episode -- scenarios/laptop_moved.json`

use realign::kinematics::Point;
use realign::episode::run_episode;
use realign::report::EventKind;
use realign::scenario::Scenario;

fn xy(p: &Point) -> String {
    format!("({:.3}, {:.3})", p.x, p.y)
}

fn main() -> realign::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/laptop_moved.json").into());
    let report = run_episode(&Scenario::load(path)?)?;
    for e in &report.events {
        let detail = match &e.kind {
            EventKind::Plan { cost, clearance, .. } => format!("cost {cost:.4}, clearance {clearance:.3?}"),
            EventKind::Correction { waypoint, effort, .. } => format!("waypoint {waypoint}, |u|^2 {effort:.4}"),
            EventKind::Detection(d) | EventKind::Recomputed(d) => {
                format!("beta {:.3}, misaligned {}", d.beta, d.misaligned)
            }
            EventKind::Alignment { feature_id, anchor, .. } => format!("{feature_id} now at {}", xy(anchor)),
            EventKind::Update { before, after, .. } => format!("{before:.3?} -> {after:.3?}"),
            EventKind::Finished { outcome } => format!("{outcome:?}"),
            _ => String::new(),
        };
        println!("{:3} c{} {:<13} {detail}", e.seq, e.cycle, e.kind.name());
    }
    println!("human effort {:.4} over {} corrections", report.metrics.total_effort, report.metrics.corrections);
    Ok(())
}
