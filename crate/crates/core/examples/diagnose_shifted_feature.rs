//! Explaining a correction by re-reading it in the moved object's frame,
//! then aligning the feature that the shift explains.

use realign::diagnosis::{diagnose_and_correct, DiagnosisContext, Observation};
use realign::kinematics::Point;
use realign::episode::Episode;
use realign::report::EventKind;
use realign::scenario::Scenario;
use realign::trajectory::{deform, CorrectionEvent};

fn xy(p: &Point) -> String {
    format!("({:.3}, {:.3})", p.x, p.y)
}

fn main() -> realign::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/laptop_moved.json");
    let scenario = Scenario::load(path)?;
    let mut episode = Episode::new(scenario.clone())?;
    episode.advance()?;
    let original = episode.trajectory().expect("a plan").clone();
    episode.oracle_step()?;
    let correction = episode
        .events()
        .iter()
        .find_map(|e| match &e.kind {
            EventKind::Correction { waypoint, torque, .. } => Some(CorrectionEvent::new(*waypoint, torque.clone(), 0)),
            _ => None,
        })
        .expect("the human corrects the first plan");
    let deformed = deform(&original, &correction, episode.shape())?;

    let obs = Observation {
        original: &original,
        correction: &correction,
        deformed: &deformed,
    };
    let ctx = DiagnosisContext {
        model: &scenario.arm,
        shape: episode.shape(),
        learner: &scenario.learner,
        solver: &scenario.solver,
        params: &scenario.diagnosis,
    };
    let features = scenario.feature_set()?;
    let d = diagnose_and_correct(&obs, &features, &scenario.training_env, &scenario.test_env, &ctx)?;

    println!("observed |u_H| {:.3}", correction.effort().sqrt());
    for object in &d.report.objects {
        println!("object {:?} moved by {}", object.object_id, xy(&object.delta));
        for f in &object.per_feature {
            println!(
                "  {:<20} beta {:7.3}  |u*| {:.3}  {:?}{}",
                f.feature_id,
                f.beta_delta,
                f.optimal_norm,
                f.verdict,
                f.issue.map(|i| format!(" ({i:?})")).unwrap_or_default()
            );
        }
        if let Some(b) = object.recheck_beta {
            println!("  beta after alignment {b:.3}");
        }
    }
    for (before, after) in features.iter().zip(d.features.iter()) {
        println!("{}: peak {} -> {}", before.id, xy(&before.peak()), xy(&after.peak()));
    }
    Ok(())
}
