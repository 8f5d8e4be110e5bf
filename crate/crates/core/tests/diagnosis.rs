use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use realign::diagnosis::{
    diagnose_and_correct, diagnose_unknown_object, explain_shift, learn_missing_feature, shifted_optimal_correction,
    DeltaHypothesis, DiagnosisContext, DiagnosisIssue, MissingFeatureQuery, Observation, Verdict,
};
use realign::episode::{run_episode, Episode};
use realign::features::{FeatureSet, TrainedFeature};
use realign::kinematics::{end_effector, shift_trajectory_end_effector, Point};
use realign::learning::{detect, optimal_correction};
use realign::report::EventKind;
use realign::scenario::Scenario;
use realign::trajectory::{deform, CorrectionEvent, Trajectory};

fn scenario(name: &str) -> Scenario {
    Scenario::load(format!("{}/../../scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

/// The first planned trajectory of a scenario and the oracle's correction to it.
struct Observed {
    scenario: Scenario,
    episode: Episode,
    original: Trajectory,
    correction: CorrectionEvent,
    deformed: Trajectory,
}

impl Observed {
    fn new(name: &str) -> Self {
        let scenario = scenario(name);
        let mut episode = Episode::new(scenario.clone()).unwrap();
        episode.advance().unwrap();
        let original = episode.trajectory().unwrap().clone();
        episode.oracle_step().unwrap();
        let correction = episode
            .events()
            .iter()
            .find_map(|e| match &e.kind {
                EventKind::Correction { waypoint, torque, .. } => Some(CorrectionEvent::new(*waypoint, torque.clone(), 0)),
                _ => None,
            })
            .expect("the oracle corrects the first plan");
        let deformed = deform(&original, &correction, episode.shape()).unwrap();
        Self {
            scenario,
            episode,
            original,
            correction,
            deformed,
        }
    }

    fn obs(&self) -> Observation<'_> {
        Observation {
            original: &self.original,
            correction: &self.correction,
            deformed: &self.deformed,
        }
    }

    fn ctx(&self) -> DiagnosisContext<'_> {
        DiagnosisContext {
            model: &self.scenario.arm,
            shape: self.episode.shape(),
            learner: &self.scenario.learner,
            solver: &self.scenario.solver,
            params: &self.scenario.diagnosis,
        }
    }

    fn features(&self) -> FeatureSet {
        self.scenario.feature_set().unwrap()
    }

    fn laptop_delta(&self) -> Point {
        self.scenario.training_env.position("laptop").unwrap() - self.scenario.test_env.position("laptop").unwrap()
    }
}

#[test]
fn zero_shift_solves_the_unshifted_problem() {
    let o = Observed::new("laptop_moved");
    let fs = o.features();
    let s = &o.scenario;
    for i in 0..fs.len() {
        let plain = optimal_correction(&o.original, &o.deformed, i, o.episode.shape(), &s.arm, &fs, &s.solver).unwrap();
        let shifted = shifted_optimal_correction(
            &o.original,
            &o.deformed,
            &Point::zeros(),
            i,
            o.episode.shape(),
            &s.arm,
            &fs,
            &s.solver,
            &s.diagnosis.ik,
        )
        .unwrap();
        assert!((plain.effort - shifted.effort).abs() <= s.solver.tolerance, "{} vs {}", plain.effort, shifted.effort);
    }
}

#[test]
fn laptop_explains_the_shifted_push_and_vase_needs_nothing() {
    let o = Observed::new("laptop_moved");
    let per_feature = explain_shift(&o.obs(), &o.laptop_delta(), &o.features(), &o.ctx()).unwrap();
    let laptop = &per_feature[0];
    let vase = &per_feature[1];

    assert_eq!(vase.optimal_norm, 0.0);
    assert_eq!(vase.issue, Some(DiagnosisIssue::Uninvolved));
    assert_eq!(vase.verdict, Verdict::Unrelated);

    let observed = o.correction.effort().sqrt();
    assert_eq!(laptop.verdict, Verdict::ShiftedWithObject);
    assert!(laptop.issue.is_none());
    assert!(laptop.optimal_norm > 0.0 && laptop.optimal_norm <= observed + 1e-9);
    // Shifting the arm's configurations changes its leverage, so the
    // shifted optimum recovers most but not all of the observed effort.
    assert!(laptop.optimal_norm / observed > 0.6, "{} of {observed}", laptop.optimal_norm);
}

#[test]
fn far_features_are_never_attributed() {
    let o = Observed::new("laptop_moved");
    let delta = o.laptop_delta();
    let far_anchor = Point::new(-2.2, -1.6);
    let width = 0.1;
    let ik = &o.scenario.diagnosis.ik;
    let model = &o.scenario.arm;
    let trajectories = [
        o.original.clone(),
        o.deformed.clone(),
        shift_trajectory_end_effector(model, &o.original, &delta, ik).unwrap(),
        shift_trajectory_end_effector(model, &o.deformed, &delta, ik).unwrap(),
    ];
    for t in &trajectories {
        for q in t.waypoints() {
            assert!((end_effector(model, q).unwrap() - far_anchor).norm() >= 10.0 * width);
        }
    }
    let far = TrainedFeature::radial("far", far_anchor, width, o.scenario.training_env.clone()).unwrap();
    let fs = o.features().with_appended(far).unwrap();
    let per_feature = explain_shift(&o.obs(), &delta, &fs, &o.ctx()).unwrap();
    assert_eq!(per_feature[2].verdict, Verdict::Unrelated);
}

#[test]
fn aligned_features_explain_the_same_correction() {
    let o = Observed::new("laptop_moved");
    let s = &o.scenario;
    let d = diagnose_and_correct(&o.obs(), &o.features(), &s.training_env, &s.test_env, &o.ctx()).unwrap();
    assert!(d.report.is_consistent());
    assert_eq!(d.report.aligned_feature_ids, ["distance_to_laptop"]);
    assert!(!d.report.missing_feature);
    assert!(d.query.is_none());
    let recheck = detect(
        &o.original,
        &o.deformed,
        &o.correction,
        &d.features,
        &s.arm,
        o.episode.shape(),
        &s.learner,
        &s.solver,
    )
    .unwrap();
    assert!(recheck.beta >= s.learner.threshold, "{}", recheck.beta);
}

#[test]
fn single_true_hypothesis_matches_the_known_object_path() {
    let o = Observed::new("laptop_moved");
    let s = &o.scenario;
    let known = diagnose_and_correct(&o.obs(), &o.features(), &s.training_env, &s.test_env, &o.ctx()).unwrap();
    let hypothesis = DeltaHypothesis {
        object_id: "laptop".into(),
        delta: o.laptop_delta(),
        new_object: None,
        max_beta: 0.0,
    };
    let unknown = diagnose_unknown_object(&o.obs(), &o.features(), &[hypothesis], &o.ctx()).unwrap();
    assert_eq!(unknown.features, known.features);
    assert_eq!(unknown.report.objects[0].per_feature, known.report.objects[0].per_feature);
    assert_eq!(unknown.report.aligned_feature_ids, known.report.aligned_feature_ids);
}

#[test]
fn decoy_displacement_loses() {
    let o = Observed::new("laptop_moved");
    let decoy_delta = Point::new(-2.0, -2.0);
    // Precondition: the decoy shift keeps both paths well clear of every
    // anchor, so no feature can explain the push under it.
    let ik = &o.scenario.diagnosis.ik;
    let model = &o.scenario.arm;
    let anchors: Vec<Point> = o.features().iter().map(|f| f.peak()).collect();
    for t in [&o.original, &o.deformed] {
        let shifted = shift_trajectory_end_effector(model, t, &decoy_delta, ik).unwrap();
        for q in shifted.waypoints() {
            let p = end_effector(model, q).unwrap();
            for a in &anchors {
                assert!((p - a).norm() >= 1.0, "{p} is near {a}");
            }
        }
    }
    let truth = DeltaHypothesis {
        object_id: "laptop".into(),
        delta: o.laptop_delta(),
        new_object: None,
        max_beta: 0.0,
    };
    let decoy = DeltaHypothesis {
        object_id: "vase".into(),
        delta: decoy_delta,
        new_object: None,
        max_beta: 0.0,
    };
    for order in [[decoy.clone(), truth.clone()], [truth.clone(), decoy.clone()]] {
        let d = diagnose_unknown_object(&o.obs(), &o.features(), &order, &o.ctx()).unwrap();
        assert_eq!(d.report.objects[0].object_id.as_deref(), Some("laptop"));
        assert_eq!(d.report.aligned_feature_ids, ["distance_to_laptop"]);
        let score = |id: &str| d.report.hypotheses.iter().find(|h| h.object_id == id).unwrap().max_beta;
        assert!(score("laptop") > score("vase"), "{:?}", d.report.hypotheses);
    }
}

#[test]
fn no_good_hypothesis_means_a_missing_feature() {
    let o = Observed::new("missing_feature");
    let hypotheses: Vec<DeltaHypothesis> = [Point::new(-0.6, 0.4), Point::new(0.4, 0.2), Point::new(0.0, -0.5)]
        .into_iter()
        .map(|delta| DeltaHypothesis {
            object_id: "laptop".into(),
            delta,
            new_object: None,
            max_beta: 0.0,
        })
        .collect();
    let d = diagnose_unknown_object(&o.obs(), &o.features(), &hypotheses, &o.ctx()).unwrap();
    assert!(d.report.hypotheses.iter().all(|h| h.max_beta < o.scenario.learner.threshold));
    assert!(d.report.missing_feature);
    assert!(d.query.is_some());
    assert_eq!(d.features, o.features());
}

#[test]
fn noisy_answers_still_fit_the_feature() {
    let anchor = Point::new(2.0, 1.3);
    let width = 0.3;
    let truth = |p: &Point| (-(p - anchor).norm_squared() / (2.0 * width * width)).exp();
    let model = realign::kinematics::ArmModel::default_three_link();
    let query = MissingFeatureQuery::around(Point::new(1.8, 1.1), 0.8, 64, 5, &model).unwrap();
    let noise = Normal::new(0.0, 0.02).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut samples = Vec::new();
    for i in 0..8 {
        for j in 0..8 {
            let t = Point::new(i as f64 / 7.0, j as f64 / 7.0);
            let p = query.min + (query.max - query.min).component_mul(&t);
            samples.push((p, truth(&p) + noise.sample(&mut rng)));
        }
    }
    let learned = learn_missing_feature(&query, &samples, "mug", o_env()).unwrap();

    // Held out: a finer grid offset from the training samples.
    let mut sq = 0.0;
    let n = 25;
    for i in 0..n {
        for j in 0..n {
            let t = Point::new((i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64);
            let p = query.min + (query.max - query.min).component_mul(&t);
            sq += (learned.feature.eval_at(&p) - truth(&p)).powi(2);
        }
    }
    let rmse = (sq / (n * n) as f64).sqrt();
    assert!(rmse < 0.05, "held-out rmse {rmse}");
}

fn o_env() -> realign::world::Environment {
    realign::world::Environment::new("training", vec![]).unwrap()
}

#[test]
fn every_shipped_scenario_reports_consistently() {
    for name in ["aligned", "laptop_moved", "missing_feature", "new_object"] {
        let report = run_episode(&scenario(name)).unwrap();
        assert!(report.is_consistent(), "{name}");
        for e in &report.events {
            if let EventKind::Diagnosis(d) = &e.kind {
                assert!(d.is_consistent(), "{name}");
            }
        }
    }
}
