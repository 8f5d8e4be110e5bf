//! Forward and inverse kinematics of the default three-link arm, and moving
//! a whole trajectory's end-effector path by a fixed offset.

use realign::kinematics::{
    end_effector, inverse_kinematics, jacobian, shift_trajectory_end_effector, ArmModel, IkParams, JointConfig, Point,
};
use realign::trajectory::Trajectory;

fn main() -> realign::Result<()> {
    let arm = ArmModel::default_three_link();
    let q = JointConfig::new(vec![0.3, 0.6, -0.4]);
    let p = end_effector(&arm, &q)?;
    println!("end effector at {:.4}, {:.4}", p.x, p.y);
    println!("jacobian:{:.4}", jacobian(&arm, &q)?);

    let target = Point::new(1.2, 1.8);
    let solved = inverse_kinematics(&arm, &q, &target, &IkParams::default())?;
    let reached = end_effector(&arm, &solved)?;
    println!("ik to ({}, {}): {:?}, error {:.2e}", target.x, target.y, solved.angles(), (reached - target).norm());

    let line = Trajectory::straight_line(&q, &JointConfig::new(vec![1.1, 0.5, 0.2]), 8)?;
    let moved = shift_trajectory_end_effector(&arm, &line, &Point::new(-0.2, 0.1), &IkParams::default())?;
    for (a, b) in line.end_effector_path(&arm)?.iter().zip(moved.end_effector_path(&arm)?) {
        println!("({:+.3}, {:+.3}) -> ({:+.3}, {:+.3})", a.x, a.y, b.x, b.y);
    }
    Ok(())
}
