//! Planning around an obstacle feature with increasing weight.

use realign::features::{FeatureSet, TrainedFeature};
use realign::kinematics::{end_effector, ArmModel, JointConfig};
use realign::planner::{plan, PlannerParams};
use realign::trajectory::Trajectory;
use realign::world::Environment;

fn main() -> realign::Result<()> {
    let arm = ArmModel::default_three_link();
    // The default cap stops well inside the flat tail; allow the full run.
    let params = PlannerParams { max_iterations: 20_000, ..Default::default() };
    let start = JointConfig::new(vec![-1.0, 0.9, 0.6]);
    let goal = JointConfig::new(vec![0.8, 0.7, 0.5]);

    // Put the obstacle right on the straight-line path.
    let line = Trajectory::straight_line(&start, &goal, params.horizon)?;
    let obstacle = end_effector(&arm, &line.waypoints()[params.horizon / 2])?;
    let env = Environment::new("desk", vec![])?;
    let features = FeatureSet::new(vec![TrainedFeature::radial("obstacle", obstacle, 0.3, env)?])?;

    for weight in [0.0, 1.0, 4.0, 16.0] {
        let out = plan(&arm, &features, &[weight], &start, &goal, &params, 0)?;
        println!(
            "weight {weight:5.1}: clearance {:.3}, cost {:.4}, {} iterations{}",
            out.trajectory.clearance(&arm, &obstacle)?,
            out.cost,
            out.iterations,
            if out.converged { "" } else { " (not converged)" }
        );
    }
    Ok(())
}
