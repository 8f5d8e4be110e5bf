//! Recovering feature weights from demonstrations before any correction.

use realign::features::{FeatureSet, TrainedFeature};
use realign::kinematics::{ArmModel, JointConfig, Point};
use realign::learning::{fit_offline, FitParams};
use realign::planner::{plan, PlannerParams};
use realign::world::Environment;

fn main() -> realign::Result<()> {
    let arm = ArmModel::default_three_link();
    let env = Environment::new("training", vec![])?;
    let features = FeatureSet::new(vec![
        TrainedFeature::radial("near_path", Point::new(1.6, 1.4), 0.3, env.clone())?,
        TrainedFeature::radial("far_away", Point::new(-2.0, -2.0), 0.3, env)?,
    ])?;
    let start = JointConfig::new(vec![-1.0, 0.9, 0.6]);
    let goal = JointConfig::new(vec![0.8, 0.7, 0.5]);

    // The demonstrator cares about the first feature only.
    let demos = [3.0, 5.0, 8.0]
        .iter()
        .enumerate()
        .map(|(i, w)| Ok(plan(&arm, &features, &[*w, 0.0], &start, &goal, &PlannerParams::default(), i as u64)?.trajectory))
        .collect::<realign::Result<Vec<_>>>()?;

    let fit = fit_offline(&demos, &features, &arm, &FitParams { samples: 50, seed: 1, ..Default::default() })?;
    println!("weights {:?}", fit.weights);
    println!("log likelihood {:.4} after {} iterations", fit.log_likelihood, fit.iterations);
    Ok(())
}
