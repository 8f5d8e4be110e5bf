//! Why was a correction unexplainable?
//!
//! When no feature explains a correction in the current frame, both the
//! planned and the corrected trajectory are translated by each moved
//! object's displacement `Δ = o − õ` (training minus test position). A
//! feature that explains the correction in that frame was anchored to the
//! object and is aligned by `−Δ`. If nothing explains it in any frame the
//! robot is missing a feature and asks the human for data.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSet, TrainedFeature};
use crate::kinematics::{end_effector, shift_trajectory_end_effector, ArmModel, IkParams, Point};
use crate::learning::{detect, estimate_beta, optimal_correction, optimal_correction_given, CorrectionSolverParams, LearnerParams, OptimalCorrection};
use crate::trajectory::{feature_sum, CorrectionEvent, DeformationShape, Trajectory};
use crate::world::{object_displacements, Environment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentPolicy {
    /// Align every feature whose shifted confidence is large.
    #[default]
    Permissive,
    /// Align only the feature with the largest shifted confidence.
    Conservative,
}

impl std::str::FromStr for AlignmentPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "permissive" => Ok(Self::Permissive),
            "conservative" => Ok(Self::Conservative),
            other => Err(Error::Scenario(format!(
                "unknown alignment policy `{other}` (expected permissive or conservative)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosisParams {
    pub policy: AlignmentPolicy,
    pub ik: IkParams,
    /// Half edge length of the square a missing-feature query asks about.
    pub query_half_size: f64,
    pub query_samples: usize,
}

impl Default for DiagnosisParams {
    fn default() -> Self {
        Self {
            policy: AlignmentPolicy::Permissive,
            ik: IkParams::default(),
            query_half_size: 1.0,
            query_samples: 64,
        }
    }
}

/// Everything the diagnosis needs besides the observation itself.
#[derive(Debug, Clone, Copy)]
pub struct DiagnosisContext<'a> {
    pub model: &'a ArmModel,
    pub shape: &'a DeformationShape,
    pub learner: &'a LearnerParams,
    pub solver: &'a CorrectionSolverParams,
    pub params: &'a DiagnosisParams,
}

/// A planned trajectory, the correction applied to it and the result.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub original: &'a Trajectory,
    pub correction: &'a CorrectionEvent,
    pub deformed: &'a Trajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    ShiftedWithObject,
    Unrelated,
}

/// Why a feature was declared unrelated without a confidence comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosisIssue {
    /// The shifted trajectories leave the reachable workspace.
    Unreachable,
    /// No single-waypoint correction reproduces the shifted feature change.
    Infeasible,
    /// The correction leaves this feature's shifted sum unchanged.
    Uninvolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDiagnosis {
    pub feature_id: String,
    pub beta_delta: f64,
    /// `‖u*_Δ‖`.
    pub optimal_norm: f64,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issue: Option<DiagnosisIssue>,
}

/// Shifted analysis for one displacement hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDiagnosis {
    /// `None` when no object moved and the analysis ran with `Δ = 0`.
    pub object_id: Option<String>,
    pub delta: Point,
    pub per_feature: Vec<FeatureDiagnosis>,
    /// Confidence of the unshifted re-check after this object's alignment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recheck_beta: Option<f64>,
}

impl ObjectDiagnosis {
    /// Largest shifted confidence among features the correction touched.
    pub fn best_beta(&self) -> f64 {
        self.per_feature
            .iter()
            .filter(|f| f.issue.is_none())
            .map(|f| f.beta_delta)
            .fold(0.0, f64::max)
    }

    pub fn feature(&self, id: &str) -> Option<&FeatureDiagnosis> {
        self.per_feature.iter().find(|f| f.feature_id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaHypothesis {
    /// Object whose displacement this is.
    pub object_id: String,
    pub delta: Point,
    /// Set when the hypothesis is "the unknown object `new_object` plays
    /// the role of `object_id`"; matching features are then copied rather
    /// than moved.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_object: Option<String>,
    /// Best shifted confidence, filled in by the diagnosis.
    #[serde(default)]
    pub max_beta: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClonedFeature {
    pub source_id: String,
    pub new_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub objects: Vec<ObjectDiagnosis>,
    pub missing_feature: bool,
    pub aligned_feature_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cloned_features: Vec<ClonedFeature>,
    /// Scored hypotheses when the moved object was unknown.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hypotheses: Vec<DeltaHypothesis>,
}

impl DiagnosisReport {
    pub fn object(&self, id: &str) -> Option<&ObjectDiagnosis> {
        self.objects.iter().find(|o| o.object_id.as_deref() == Some(id))
    }

    /// `ShiftedWithObject` if any analysed displacement attributed the
    /// correction to this feature.
    pub fn verdict(&self, feature_id: &str) -> Option<Verdict> {
        let mut found = None;
        for f in self.objects.iter().flat_map(|o| &o.per_feature) {
            if f.feature_id == feature_id {
                if f.verdict == Verdict::ShiftedWithObject {
                    return Some(Verdict::ShiftedWithObject);
                }
                found = Some(f.verdict);
            }
        }
        found
    }

    /// Structural invariants: a missing feature is reported iff no feature
    /// shifted with any object, and only shifted features were aligned.
    pub fn is_consistent(&self) -> bool {
        let shifted = |id: &str| self.verdict(id) == Some(Verdict::ShiftedWithObject);
        let any_shifted = self
            .objects
            .iter()
            .flat_map(|o| &o.per_feature)
            .any(|f| f.verdict == Verdict::ShiftedWithObject);
        self.missing_feature != any_shifted
            && self.aligned_feature_ids.iter().all(|id| shifted(id))
            && self.cloned_features.iter().all(|c| shifted(&c.source_id))
    }
}

/// A request for labelled samples of an unmodelled feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingFeatureQuery {
    pub min: Point,
    pub max: Point,
    pub samples: usize,
    /// Waypoint the triggering correction was applied to.
    pub waypoint: usize,
}

impl MissingFeatureQuery {
    /// Square of half size `half_size` around `center`, clipped to the
    /// arm's bounding square.
    pub fn around(center: Point, half_size: f64, samples: usize, waypoint: usize, model: &ArmModel) -> Result<Self> {
        if !(half_size.is_finite() && half_size > 0.0) || !(center.x.is_finite() && center.y.is_finite()) {
            return Err(Error::NonFinite("missing-feature query box"));
        }
        let reach = Point::repeat(model.reach());
        let lo = model.base() - reach;
        let hi = model.base() + reach;
        let min = (center - Point::repeat(half_size)).sup(&lo).inf(&hi);
        let max = (center + Point::repeat(half_size)).inf(&hi).sup(&lo);
        if !(max.x > min.x && max.y > min.y) {
            return Err(Error::Scenario("missing-feature query box is empty".into()));
        }
        Ok(Self {
            min,
            max,
            samples,
            waypoint,
        })
    }

    pub fn contains(&self, p: &Point) -> bool {
        (self.min.x..=self.max.x).contains(&p.x) && (self.min.y..=self.max.y).contains(&p.y)
    }

    pub fn center(&self) -> Point {
        (self.min + self.max) / 2.0
    }
}

/// `u*_Δ`: the optimal correction after shifting both trajectories by `delta`.
#[allow(clippy::too_many_arguments)]
pub fn shifted_optimal_correction(
    original: &Trajectory,
    deformed: &Trajectory,
    delta: &Point,
    feature: usize,
    shape: &DeformationShape,
    model: &ArmModel,
    features: &FeatureSet,
    solver: &CorrectionSolverParams,
    ik: &IkParams,
) -> Result<OptimalCorrection> {
    let shifted_original = shift_trajectory_end_effector(model, original, delta, ik)?;
    let shifted_deformed = shift_trajectory_end_effector(model, deformed, delta, ik)?;
    optimal_correction(&shifted_original, &shifted_deformed, feature, shape, model, features, solver)
}

/// `β̂_Δ`; the same estimator as `β̂`, fed the shifted optimum.
pub fn estimate_beta_delta(observed: &[f64], shifted_optimal: &[f64], params: &LearnerParams) -> f64 {
    estimate_beta(observed, shifted_optimal, params)
}

/// Per-feature shifted confidence and verdict for one displacement.
pub fn explain_shift(
    obs: &Observation<'_>,
    delta: &Point,
    features: &FeatureSet,
    ctx: &DiagnosisContext<'_>,
) -> Result<Vec<FeatureDiagnosis>> {
    let unrelated = |id: &str, issue| FeatureDiagnosis {
        feature_id: id.to_string(),
        beta_delta: 0.0,
        optimal_norm: 0.0,
        verdict: Verdict::Unrelated,
        issue: Some(issue),
    };
    let shift = |t| shift_trajectory_end_effector(ctx.model, t, delta, &ctx.params.ik);
    let (original, deformed) = match (shift(obs.original), shift(obs.deformed)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => {
            tracing::debug!(error = %e, "shifted trajectories are unreachable");
            return Ok(features.iter().map(|f| unrelated(&f.id, DiagnosisIssue::Unreachable)).collect());
        }
    };
    let phi_r = feature_sum(&original, features, ctx.model)?;
    let phi_h = feature_sum(&deformed, features, ctx.model)?;

    let mut out = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        if (phi_h[i] - phi_r[i]).abs() <= ctx.solver.tolerance {
            // Nothing to reproduce, so `u*_Δ = 0`; never attributed to the shift.
            let zero = vec![0.0; obs.correction.torque.len()];
            out.push(FeatureDiagnosis {
                beta_delta: estimate_beta_delta(&obs.correction.torque, &zero, ctx.learner),
                ..unrelated(&f.id, DiagnosisIssue::Uninvolved)
            });
            continue;
        }
        match optimal_correction_given(&original, &deformed, obs.correction, i, ctx.shape, ctx.model, features, ctx.solver) {
            Ok(star) => {
                let beta = estimate_beta_delta(&obs.correction.torque, &star.torque, ctx.learner);
                out.push(FeatureDiagnosis {
                    feature_id: f.id.clone(),
                    beta_delta: beta,
                    optimal_norm: star.effort.sqrt(),
                    verdict: if beta >= ctx.learner.threshold {
                        Verdict::ShiftedWithObject
                    } else {
                        Verdict::Unrelated
                    },
                    issue: None,
                });
            }
            Err(Error::Infeasible { .. }) => out.push(unrelated(&f.id, DiagnosisIssue::Infeasible)),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Indices of features to align under `policy`.
fn select(per_feature: &[FeatureDiagnosis], policy: AlignmentPolicy) -> Vec<usize> {
    let shifted = per_feature
        .iter()
        .enumerate()
        .filter(|(_, f)| f.verdict == Verdict::ShiftedWithObject);
    match policy {
        AlignmentPolicy::Permissive => shifted.map(|(i, _)| i).collect(),
        AlignmentPolicy::Conservative => shifted
            .max_by(|a, b| a.1.beta_delta.total_cmp(&b.1.beta_delta).then(b.0.cmp(&a.0)))
            .map(|(i, _)| vec![i])
            .unwrap_or_default(),
    }
}

/// Result of a diagnosis: the (possibly) aligned features, what was found,
/// and a query for the human when a feature is missing.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnosis {
    pub features: FeatureSet,
    pub report: DiagnosisReport,
    pub query: Option<MissingFeatureQuery>,
}

fn missing_query(obs: &Observation<'_>, ctx: &DiagnosisContext<'_>) -> Result<MissingFeatureQuery> {
    let waypoint = obs.correction.waypoint;
    let center = end_effector(ctx.model, &obs.original.waypoints()[waypoint])?;
    MissingFeatureQuery::around(
        center,
        ctx.params.query_half_size,
        ctx.params.query_samples,
        waypoint,
        ctx.model,
    )
}

fn finish(
    obs: &Observation<'_>,
    features: FeatureSet,
    objects: Vec<ObjectDiagnosis>,
    aligned_feature_ids: Vec<String>,
    cloned_features: Vec<ClonedFeature>,
    hypotheses: Vec<DeltaHypothesis>,
    ctx: &DiagnosisContext<'_>,
) -> Result<Diagnosis> {
    let missing_feature = !objects
        .iter()
        .flat_map(|o| &o.per_feature)
        .any(|f| f.verdict == Verdict::ShiftedWithObject);
    let query = if missing_feature { Some(missing_query(obs, ctx)?) } else { None };
    Ok(Diagnosis {
        features,
        report: DiagnosisReport {
            objects,
            missing_feature,
            aligned_feature_ids,
            cloned_features,
            hypotheses,
        },
        query,
    })
}

/// Shifted analysis per moved object, in the training layout's order,
/// aligning attributed features and stopping as soon as the unshifted
/// confidence is large again. With no moved object a single `Δ = 0`
/// analysis runs, which can only conclude that a feature is missing.
pub fn diagnose_and_correct(
    obs: &Observation<'_>,
    features: &FeatureSet,
    env_train: &Environment,
    env_test: &Environment,
    ctx: &DiagnosisContext<'_>,
) -> Result<Diagnosis> {
    let moved: Vec<_> = object_displacements(env_train, env_test)?
        .into_iter()
        .filter(|d| !d.is_zero())
        .collect();
    if moved.is_empty() {
        let per_feature = explain_shift(obs, &Point::zeros(), features, ctx)?;
        let object = ObjectDiagnosis {
            object_id: None,
            delta: Point::zeros(),
            per_feature,
            recheck_beta: None,
        };
        return finish(obs, features.clone(), vec![object], Vec::new(), Vec::new(), Vec::new(), ctx);
    }

    let mut current = features.clone();
    let mut objects = Vec::new();
    let mut aligned = Vec::new();
    for d in moved {
        let per_feature = explain_shift(obs, &d.delta, &current, ctx)?;
        let chosen = select(&per_feature, ctx.params.policy);
        for &i in &chosen {
            let f = current.get(i).expect("diagnosis index within feature set");
            aligned.push(f.id.clone());
            current = current.with_replaced(i, f.aligned_for_object(&d.object_id, &-d.delta))?;
        }
        let mut object = ObjectDiagnosis {
            object_id: Some(d.object_id),
            delta: d.delta,
            per_feature,
            recheck_beta: None,
        };
        if !chosen.is_empty() {
            let recheck = detect(
                obs.original,
                obs.deformed,
                obs.correction,
                &current,
                ctx.model,
                ctx.shape,
                ctx.learner,
                ctx.solver,
            )?;
            object.recheck_beta = Some(recheck.beta);
            objects.push(object);
            if !recheck.misaligned {
                break;
            }
        } else {
            objects.push(object);
        }
    }
    finish(obs, current, objects, aligned, Vec::new(), Vec::new(), ctx)
}

/// One hypothesis per (training object, new object) pair, with `Δ` from
/// the new object's position to the training object's.
pub fn new_object_hypotheses(env_train: &Environment, env_test: &Environment) -> Vec<DeltaHypothesis> {
    let mut out = Vec::new();
    for new in env_test.objects().iter().filter(|o| !env_train.contains(&o.id)) {
        for old in env_train.objects() {
            out.push(DeltaHypothesis {
                object_id: old.id.clone(),
                delta: old.position - new.position,
                new_object: Some(new.id.clone()),
                max_beta: 0.0,
            });
        }
    }
    out
}

/// Scores every hypothesis and acts on the best one: features attributed to
/// it are aligned, or copied for a new object. Ties prefer the smaller
/// displacement, then the earlier hypothesis.
pub fn diagnose_unknown_object(
    obs: &Observation<'_>,
    features: &FeatureSet,
    hypotheses: &[DeltaHypothesis],
    ctx: &DiagnosisContext<'_>,
) -> Result<Diagnosis> {
    if hypotheses.is_empty() {
        return Err(Error::Scenario("at least one displacement hypothesis is required".into()));
    }
    let mut scored = Vec::with_capacity(hypotheses.len());
    let mut analyses = Vec::with_capacity(hypotheses.len());
    for h in hypotheses {
        let per_feature = explain_shift(obs, &h.delta, features, ctx)?;
        let object = ObjectDiagnosis {
            object_id: Some(h.object_id.clone()),
            delta: h.delta,
            per_feature,
            recheck_beta: None,
        };
        scored.push(DeltaHypothesis {
            max_beta: object.best_beta(),
            ..h.clone()
        });
        analyses.push(object);
    }
    let best = (0..scored.len())
        .min_by(|&a, &b| {
            scored[b]
                .max_beta
                .total_cmp(&scored[a].max_beta)
                .then(scored[a].delta.norm().total_cmp(&scored[b].delta.norm()))
                .then(a.cmp(&b))
        })
        .expect("non-empty hypotheses");
    let hypothesis = &scored[best];
    let object = analyses.swap_remove(best);

    let chosen = select(&object.per_feature, ctx.params.policy);
    let mut current = features.clone();
    let mut aligned = Vec::new();
    let mut cloned = Vec::new();
    for &i in &chosen {
        let source = features.get(i).expect("diagnosis index within feature set");
        match &hypothesis.new_object {
            Some(_) => {
                let (next, idx) = current.with_clone_for_new_object(i, &-hypothesis.delta)?;
                cloned.push(ClonedFeature {
                    source_id: source.id.clone(),
                    new_id: next.get(idx).expect("appended feature").id.clone(),
                });
                current = next;
            }
            None => {
                aligned.push(source.id.clone());
                current = current.with_replaced(i, source.aligned_for_object(&hypothesis.object_id, &-hypothesis.delta))?;
            }
        }
    }
    finish(obs, current, vec![object], aligned, cloned, scored, ctx)
}

/// A feature fitted to the human's answers, with its in-sample error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedFeature {
    pub feature: TrainedFeature,
    pub rmse: f64,
}

pub const MIN_FEATURE_SAMPLES: usize = 8;

fn fit_residuals(samples: &[(Point, f64)], params: &Vector3<f64>) -> Vec<(f64, Vector3<f64>)> {
    let anchor = Point::new(params[0], params[1]);
    let sigma = params[2].exp();
    let inv = 1.0 / (sigma * sigma);
    samples
        .iter()
        .map(|(p, v)| {
            let d = p - anchor;
            let r2 = d.norm_squared();
            let value = (-0.5 * r2 * inv).exp();
            // d value / d (ax, ay, ln σ)
            let grad = Vector3::new(value * d.x * inv, value * d.y * inv, value * r2 * inv);
            (value - v, grad)
        })
        .collect()
}

fn sse(samples: &[(Point, f64)], params: &Vector3<f64>) -> f64 {
    fit_residuals(samples, params).iter().map(|(r, _)| r * r).sum()
}

fn levenberg_marquardt(samples: &[(Point, f64)], start: Vector3<f64>) -> (Vector3<f64>, f64) {
    let mut x = start;
    let mut cost = sse(samples, &x);
    let mut damping = 1e-3;
    for _ in 0..200 {
        let residuals = fit_residuals(samples, &x);
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (r, g) in &residuals {
            jtj += g * g.transpose();
            jtr += g * *r;
        }
        let mut improved = false;
        while damping < 1e12 {
            let mut lhs = jtj;
            for k in 0..3 {
                lhs[(k, k)] += damping * (1.0 + jtj[(k, k)]);
            }
            let Some(step) = lhs.lu().solve(&-jtr) else {
                damping *= 10.0;
                continue;
            };
            let trial = x + step;
            let trial_cost = sse(samples, &trial);
            if trial_cost.is_finite() && trial_cost < cost {
                let done = cost - trial_cost <= 1e-15 * (1.0 + cost) || step.norm() < 1e-12;
                x = trial;
                cost = trial_cost;
                damping = (damping * 0.3).max(1e-12);
                improved = !done;
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (x, cost)
}

/// Radial basis `(anchor, σ)` fitted by nonlinear least squares to the
/// human's samples, seeded from a grid over the query box.
pub fn learn_missing_feature(
    query: &MissingFeatureQuery,
    samples: &[(Point, f64)],
    id: impl Into<String>,
    training_env: Environment,
) -> Result<LearnedFeature> {
    if samples.len() < MIN_FEATURE_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_FEATURE_SAMPLES,
            got: samples.len(),
        });
    }
    if samples.iter().any(|(p, v)| !(p.x.is_finite() && p.y.is_finite() && v.is_finite())) {
        return Err(Error::NonFinite("feature samples"));
    }
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, v)| (lo.min(*v), hi.max(*v)));
    if hi - lo <= 1e-9 {
        return Err(Error::DegenerateFit);
    }

    let extent = (query.max - query.min).max();
    let mut seeds: Vec<(f64, Vector3<f64>)> = Vec::new();
    for i in 0..5 {
        for j in 0..5 {
            let a = query.min + (query.max - query.min).component_mul(&Point::new(i as f64 / 4.0, j as f64 / 4.0));
            for scale in [0.1, 0.2, 0.4] {
                let x = Vector3::new(a.x, a.y, (scale * extent).ln());
                seeds.push((sse(samples, &x), x));
            }
        }
    }
    seeds.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (params, cost) = seeds
        .iter()
        .take(4)
        .map(|(_, x)| levenberg_marquardt(samples, *x))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty seed grid");

    let feature = TrainedFeature::radial(id, Point::new(params[0], params[1]), params[2].exp(), training_env)?;
    Ok(LearnedFeature {
        feature,
        rmse: (cost / samples.len() as f64).sqrt(),
    })
}
