//! How one push at one waypoint spreads along a trajectory.

use realign::kinematics::JointConfig;
use realign::trajectory::{deform, CorrectionEvent, DeformationParams, DeformationShape, Trajectory};

fn main() -> realign::Result<()> {
    let params = DeformationParams::default();
    let shape = DeformationShape::new(&params)?;
    let line = Trajectory::straight_line(
        &JointConfig::new(vec![-1.0, 0.9, 0.6]),
        &JointConfig::new(vec![0.8, 0.7, 0.5]),
        params.horizon,
    )?;
    for waypoint in [5, 10, 15] {
        let pushed = deform(&line, &CorrectionEvent::new(waypoint, vec![1.0, 0.0, 0.0], 0), &shape)?;
        let bump: Vec<String> = line
            .waypoints()
            .iter()
            .zip(pushed.waypoints())
            .map(|(a, b)| format!("{:.3}", b.angles()[0] - a.angles()[0]))
            .collect();
        println!("push at {waypoint:2}: {}", bump.join(" "));
    }
    Ok(())
}
