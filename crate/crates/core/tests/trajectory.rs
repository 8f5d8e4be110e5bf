use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use realign::features::{align_feature, FeatureSet, TrainedFeature};
use realign::kinematics::{end_effector, inverse_kinematics, ArmModel, IkParams, JointConfig, Point};
use realign::trajectory::{
    deform, feature_sum, shifted_feature_sum, CorrectionEvent, DeformationParams, DeformationShape, Trajectory,
};
use realign::world::Environment;

fn env() -> Environment {
    Environment::new("training", vec![]).unwrap()
}

fn radial(id: &str, anchor: Point, width: f64) -> TrainedFeature {
    TrainedFeature::radial(id, anchor, width, env()).unwrap()
}

fn line(horizon: usize) -> Trajectory {
    Trajectory::straight_line(
        &JointConfig::new(vec![-0.5, 0.8, 0.4]),
        &JointConfig::new(vec![0.9, 0.6, 0.7]),
        horizon,
    )
    .unwrap()
}

/// End-effector path along `from → to`, each waypoint solved from the last.
fn cartesian_line(model: &ArmModel, from: Point, to: Point, horizon: usize) -> Trajectory {
    let ik = IkParams {
        tolerance: 1e-13,
        ..Default::default()
    };
    let mut q = JointConfig::new(vec![-0.6, 1.0, 0.6]);
    let mut waypoints = Vec::new();
    for t in 0..=horizon {
        let target = from + (to - from) * (t as f64 / horizon as f64);
        q = inverse_kinematics(model, &q, &target, &ik).unwrap();
        waypoints.push(q.clone());
    }
    Trajectory::new(waypoints).unwrap()
}

#[test]
fn unit_push_in_the_middle_is_a_symmetric_bump() {
    let horizon = 20;
    let magnitude = 0.15;
    let shape = DeformationShape::new(&DeformationParams { horizon, magnitude }).unwrap();
    let traj = line(horizon);
    let c = horizon / 2;
    let pushed = deform(&traj, &CorrectionEvent::new(c, vec![1.0, 0.0, 0.0], 0), &shape).unwrap();

    // Independent oracle: build KᵀK by hand, solve it densely, and apply
    // the same peak-one normalisation.
    let n = horizon - 1;
    let mut k = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = -2.0;
        if i + 1 < n {
            k[(i, i + 1)] = 1.0;
            k[(i + 1, i)] = 1.0;
        }
    }
    let a = k.transpose() * &k;
    let lu = a.clone().lu();
    let columns: Vec<DVector<f64>> = (0..n)
        .map(|j| lu.solve(&DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 })).unwrap())
        .collect();
    let peak = columns.iter().map(|c| c.max()).fold(f64::MIN, f64::max);
    let column = &columns[c - 1];

    let bump: Vec<f64> = (0..=horizon)
        .map(|t| pushed.waypoints()[t].angles()[0] - traj.waypoints()[t].angles()[0])
        .collect();
    assert_eq!(bump[0], 0.0);
    assert_eq!(bump[horizon], 0.0);
    for t in 1..horizon {
        let expected = magnitude * column[t - 1] / peak;
        assert!((bump[t] - expected).abs() < 1e-12, "waypoint {t}: {} vs {expected}", bump[t]);
        assert!((bump[t] - bump[horizon - t]).abs() < 1e-12);
        assert!(bump[t] <= bump[c]);
    }
    assert!((bump[c] - magnitude).abs() < 1e-12);
    for t in 0..=horizon {
        for j in 1..3 {
            assert_eq!(pushed.waypoints()[t].angles()[j], traj.waypoints()[t].angles()[j]);
        }
    }
}

#[test]
fn far_trajectory_has_zero_feature_sums() {
    let model = ArmModel::default_three_link();
    let features = FeatureSet::new(vec![
        radial("a", Point::new(1.5, 1.0), 0.1),
        radial("b", Point::new(-0.5, 1.2), 0.1),
    ])
    .unwrap();
    let traj = cartesian_line(&model, Point::new(1.5, -1.5), Point::new(2.5, -0.5), 20);
    let phi = feature_sum(&traj, &features, &model).unwrap();
    assert!(phi.iter().all(|v| v.abs() < 1e-12), "{phi:?}");
}

#[test]
fn one_waypoint_on_the_anchor_contributes_one() {
    let model = ArmModel::default_three_link();
    let far = JointConfig::new(vec![-1.5, 0.0, 0.0]);
    let at = JointConfig::new(vec![0.3, 0.4, -0.2]);
    let anchor = end_effector(&model, &at).unwrap();
    let features = FeatureSet::new(vec![radial("a", anchor, 0.1)]).unwrap();
    let traj = Trajectory::new(vec![far.clone(), far.clone(), at, far.clone(), far]).unwrap();
    let phi = feature_sum(&traj, &features, &model).unwrap();
    assert!((phi[0] - 1.0).abs() < 1e-6);
}

#[test]
fn grazing_the_new_position_only_shows_after_the_shift() {
    let model = ArmModel::default_three_link();
    let old = Point::new(1.5, 1.0);
    let new = Point::new(2.1, 0.6);
    let features = FeatureSet::new(vec![
        radial("laptop", old, 0.05),
        radial("vase", Point::new(-0.5, 1.2), 0.05),
    ])
    .unwrap();
    // Passes straight through the new laptop position at waypoint 10.
    let traj = cartesian_line(&model, Point::new(2.1, -0.1), Point::new(2.1, 1.3), 20);
    assert!((end_effector(&model, &traj.waypoints()[10]).unwrap() - new).norm() < 1e-9);

    let plain = feature_sum(&traj, &features, &model).unwrap();
    let shifted = shifted_feature_sum(&traj, &(old - new), &features, &model, &IkParams::default()).unwrap();
    assert!(plain[0].abs() < 1e-12 && plain[1].abs() < 1e-12, "{plain:?}");
    assert!(shifted[0] > 0.5, "{shifted:?}");
    assert!(shifted[1].abs() < 1e-12);
}

#[test]
fn shifting_equals_aligning_the_other_way() {
    let model = ArmModel::default_three_link();
    let features = FeatureSet::new(vec![
        radial("a", Point::new(1.5, 1.0), 0.5),
        radial("b", Point::new(-0.5, 1.2), 0.4),
    ])
    .unwrap();
    let ik = IkParams {
        tolerance: 1e-13,
        ..Default::default()
    };
    let traj = Trajectory::straight_line(
        &JointConfig::new(vec![-0.5, 1.3, 0.9]),
        &JointConfig::new(vec![0.9, 1.1, 0.9]),
        20,
    )
    .unwrap();
    for delta in [Point::zeros(), Point::new(-0.6, 0.4), Point::new(0.25, 0.1)] {
        let shifted = shifted_feature_sum(&traj, &delta, &features, &model, &ik).unwrap();
        let aligned =
            FeatureSet::new(features.iter().map(|f| align_feature(f, &-delta)).collect()).unwrap();
        let expected = feature_sum(&traj, &aligned, &model).unwrap();
        for (s, e) in shifted.iter().zip(&expected) {
            assert!((s - e).abs() <= 1e-9, "delta {delta}: {s} vs {e}");
        }
    }
    let zero = shifted_feature_sum(&traj, &Point::zeros(), &features, &model, &ik).unwrap();
    assert_eq!(zero, feature_sum(&traj, &features, &model).unwrap());
}

fn torque() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, 3)
}

proptest! {
    #[test]
    fn deformation_is_linear_and_keeps_endpoints(u in torque(), c in 1usize..20) {
        let shape = DeformationShape::new(&DeformationParams::default()).unwrap();
        let traj = line(20);
        let once = deform(&traj, &CorrectionEvent::new(c, u.clone(), 0), &shape).unwrap();
        let double: Vec<f64> = u.iter().map(|x| 2.0 * x).collect();
        let twice = deform(&traj, &CorrectionEvent::new(c, double, 0), &shape).unwrap();
        prop_assert_eq!(&once.waypoints()[0], &traj.waypoints()[0]);
        prop_assert_eq!(&once.waypoints()[20], &traj.waypoints()[20]);
        for t in 0..=20 {
            for j in 0..3 {
                let base = traj.waypoints()[t].angles()[j];
                let d1 = once.waypoints()[t].angles()[j] - base;
                let d2 = twice.waypoints()[t].angles()[j] - base;
                prop_assert!((d2 - 2.0 * d1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sums_match_a_plain_loop(
        angles in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 3), 3..12),
        anchors in prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64, 0.05..1.0f64), 1..5),
    ) {
        let model = ArmModel::default_three_link();
        let traj = Trajectory::new(angles.into_iter().map(JointConfig::new).collect()).unwrap();
        let list: Vec<TrainedFeature> = anchors
            .iter()
            .enumerate()
            .map(|(i, (x, y, w))| radial(&format!("f{i}"), Point::new(*x, *y), *w))
            .collect();
        let features = FeatureSet::new(list.clone()).unwrap();
        let phi = feature_sum(&traj, &features, &model).unwrap();
        for (i, f) in list.iter().enumerate() {
            let mut total = 0.0;
            for q in traj.waypoints() {
                let p = end_effector(&model, q).unwrap();
                let (x, y) = (p.x - f.peak().x, p.y - f.peak().y);
                total += (-(x * x + y * y) / (2.0 * f.width() * f.width())).exp();
            }
            prop_assert!((phi[i] - total).abs() < 1e-12);
            prop_assert!(phi[i] >= 0.0 && phi[i] <= traj.waypoints().len() as f64);
        }

        let reversed = FeatureSet::new(list.iter().rev().cloned().collect()).unwrap();
        let mut phi_rev = feature_sum(&traj, &reversed, &model).unwrap();
        phi_rev.reverse();
        prop_assert_eq!(phi_rev, phi);
    }
}
