//! Simulated human who knows the true cost.
//!
//! The human's features are radial bases anchored at the *current* object
//! positions, which is exactly the generalisation the robot's trained
//! features lack. Each correction targets one feature: the one whose cost
//! the human could cut the most with a single push, net of effort.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use crate::diagnosis::MissingFeatureQuery;
use crate::error::{Error, Result};
use crate::features::{FeatureSet, TrainedFeature};
use crate::kinematics::{end_effector, jacobian, ArmModel, Point};
use crate::trajectory::{deform_raw, feature_sum, CorrectionEvent, DeformationShape, Trajectory};
use crate::world::Environment;

/// A true feature: a radial basis at an object's current position plus a
/// fixed offset, or at a fixed point when `object` is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrueFeatureSpec {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
    #[serde(default = "Point::zeros")]
    pub offset: Point,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanSpec {
    pub features: Vec<TrueFeatureSpec>,
    /// `θ_true`.
    pub weights: Vec<f64>,
    /// `λ` in the human's cost/effort trade-off.
    #[serde(default = "default_effort")]
    pub effort: f64,
    /// Least cost reduction worth a correction.
    #[serde(default = "default_trigger")]
    pub correction_trigger: f64,
    /// Boltzmann inverse temperature; `None` picks the best correction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationality: Option<f64>,
    /// Standard deviation of the noise on answers to feature queries.
    #[serde(default)]
    pub query_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_effort() -> f64 {
    0.5
}

fn default_trigger() -> f64 {
    0.2
}

impl HumanSpec {
    pub fn validate(&self, env: &Environment) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Scenario("human.features must not be empty".into()));
        }
        if self.features.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                what: "human.weights",
                expected: self.features.len(),
                found: self.weights.len(),
            });
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Scenario("human.weights must be finite and non-negative".into()));
        }
        if !(self.effort.is_finite() && self.effort > 0.0) {
            return Err(Error::Scenario("human.effort must be positive".into()));
        }
        if !(self.correction_trigger.is_finite() && self.correction_trigger >= 0.0) {
            return Err(Error::Scenario("human.correction_trigger must be non-negative".into()));
        }
        if self.rationality.is_some_and(|r| !(r.is_finite() && r > 0.0)) {
            return Err(Error::Scenario("human.rationality must be positive".into()));
        }
        if !(self.query_noise.is_finite() && self.query_noise >= 0.0) {
            return Err(Error::Scenario("human.query_noise must be non-negative".into()));
        }
        for f in &self.features {
            if let Some(o) = &f.object {
                if !env.contains(o) {
                    return Err(Error::UnknownObject(o.clone()));
                }
            }
        }
        self.true_features(env).map(|_| ())
    }

    /// The human's features for the layout `env`.
    pub fn true_features(&self, env: &Environment) -> Result<FeatureSet> {
        let features = self
            .features
            .iter()
            .map(|f| {
                let base = match &f.object {
                    Some(o) => env.position(o).ok_or_else(|| Error::UnknownObject(o.clone()))?,
                    None => Point::zeros(),
                };
                TrainedFeature::radial(f.id.clone(), base + f.offset, f.width, env.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        FeatureSet::new(features)
    }

    /// `θ_trueᵀ Φ̃(ξ)`.
    pub fn true_cost(&self, traj: &Trajectory, env: &Environment, model: &ArmModel) -> Result<f64> {
        let phi = feature_sum(traj, &self.true_features(env)?, model)?;
        Ok(self.weights.iter().zip(&phi).map(|(w, p)| w * p).sum())
    }
}

/// Best single-waypoint correction for one feature at one waypoint.
struct Candidate {
    waypoint: usize,
    torque: Vec<f64>,
    /// `θ_i Φ̃_i(deformed) + λ‖u‖²`.
    objective: f64,
}

/// `θ_i Φ̃_i(ξ + μA⁻¹ e_c u) + λ‖u‖²` and its gradient in `u`.
#[allow(clippy::too_many_arguments)]
fn feature_objective(
    traj: &Trajectory,
    feature: &TrainedFeature,
    weight: f64,
    effort: f64,
    shape: &DeformationShape,
    model: &ArmModel,
    waypoint: usize,
    u: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    let mut value = effort * u.norm_squared();
    let mut grad = u * (2.0 * effort);
    for (t, q) in traj.waypoints().iter().enumerate() {
        let w = shape.influence(t, waypoint);
        let mut moved = q.clone();
        for (a, du) in moved.angles_mut().iter_mut().zip(u.iter()) {
            *a += w * du;
        }
        let p = end_effector(model, &moved)?;
        let (v, dp) = feature.eval_with_gradient(&p);
        value += weight * v;
        if w != 0.0 {
            grad += (jacobian(model, &moved)?.transpose() * dp) * (weight * w);
        }
    }
    Ok((value, grad))
}

type Objective<'a> = dyn Fn(&DVector<f64>) -> Result<(f64, DVector<f64>)> + 'a;

/// BFGS with Armijo backtracking from `start`.
fn minimise(
    f: &Objective<'_>,
    start: DVector<f64>,
) -> Result<(DVector<f64>, f64)> {
    let n = start.len();
    let mut x = start;
    let (mut fx, mut g) = f(&x)?;
    let mut h = DMatrix::<f64>::identity(n, n);
    for _ in 0..200 {
        if g.norm() < 1e-9 {
            break;
        }
        let mut dir = -(&h * &g);
        if dir.dot(&g) >= 0.0 {
            h = DMatrix::identity(n, n);
            dir = -g.clone();
        }
        let slope = dir.dot(&g);
        let mut alpha = 1.0;
        let mut next = None;
        for _ in 0..40 {
            let trial = &x + &dir * alpha;
            let (ft, gt) = f(&trial)?;
            if ft <= fx + 1e-4 * alpha * slope {
                next = Some((trial, ft, gt));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fxn, gn)) = next else { break };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let left = &i - &s * y.transpose() * rho;
            let right = &i - &y * s.transpose() * rho;
            h = &left * &h * &right + &s * s.transpose() * rho;
        }
        let done = (fx - fxn).abs() <= 1e-14 * (1.0 + fx.abs());
        x = xn;
        fx = fxn;
        g = gn;
        if done {
            break;
        }
    }
    Ok((x, fx))
}

/// Stateful oracle: separate random streams for corrections and for
/// answers to queries keep each deterministic on its own.
#[derive(Debug, Clone)]
pub struct TrueHuman {
    spec: HumanSpec,
    correction_rng: ChaCha8Rng,
    query_rng: ChaCha8Rng,
    last_target: Option<usize>,
}

/// Number of candidate waypoints and torque scales in stochastic mode.
const STOCHASTIC_WAYPOINTS: usize = 9;
const STOCHASTIC_SCALES: usize = 21;
const STOCHASTIC_MAX_SCALE: f64 = 2.0;

impl TrueHuman {
    pub fn new(spec: HumanSpec) -> Self {
        let correction_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let query_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
        Self {
            spec,
            correction_rng,
            query_rng,
            last_target: None,
        }
    }

    pub fn spec(&self) -> &HumanSpec {
        &self.spec
    }

    /// Index of the true feature the last correction targeted.
    pub fn last_target(&self) -> Option<usize> {
        self.last_target
    }

    fn best_at_waypoint(
        &self,
        traj: &Trajectory,
        feature: &TrainedFeature,
        weight: f64,
        shape: &DeformationShape,
        model: &ArmModel,
        waypoint: usize,
    ) -> Result<Candidate> {
        let objective = |u: &DVector<f64>| {
            feature_objective(traj, feature, weight, self.spec.effort, shape, model, waypoint, u)
        };
        let zero = DVector::zeros(traj.dof());
        let (_, g0) = objective(&zero)?;
        let mut best = minimise(&objective, zero)?;
        if g0.norm() > 0.0 {
            // A second start along steepest descent escapes the flat tail of
            // the basis when the waypoint sits far from it.
            let start = -&g0 / g0.norm();
            let other = minimise(&objective, start)?;
            if other.1 < best.1 {
                best = other;
            }
        }
        Ok(Candidate {
            waypoint,
            torque: best.0.iter().copied().collect(),
            objective: best.1,
        })
    }

    /// The correction the human applies to `traj`, if any.
    pub fn maybe_correct(
        &mut self,
        traj: &Trajectory,
        env: &Environment,
        model: &ArmModel,
        shape: &DeformationShape,
        step: u64,
    ) -> Result<Option<CorrectionEvent>> {
        let features = self.spec.true_features(env)?;
        let phi = feature_sum(traj, &features, model)?;
        let total: f64 = self.spec.weights.iter().zip(&phi).map(|(w, p)| w * p).sum();

        let mut options = Vec::new();
        for (i, f) in features.iter().enumerate() {
            let weight = self.spec.weights[i];
            let current = weight * phi[i];
            if current <= self.spec.correction_trigger {
                continue;
            }
            let mut per_waypoint = Vec::new();
            for c in shape.interior() {
                per_waypoint.push(self.best_at_waypoint(traj, f, weight, shape, model, c)?);
            }
            let best = per_waypoint
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.objective.total_cmp(&b.1.objective).then(a.0.cmp(&b.0)))
                .map(|(k, _)| k)
                .expect("at least one interior waypoint");
            let regret = current - per_waypoint[best].objective;
            if regret > self.spec.correction_trigger {
                options.push((regret, i, per_waypoint, best));
            }
        }
        options.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

        let (weights, effort) = (self.spec.weights.clone(), self.spec.effort);
        let full_cost = |waypoint: usize, torque: &[f64]| -> Result<f64> {
            let deformed = deform_raw(traj, shape, waypoint, torque);
            let phi = feature_sum(&deformed, &features, model)?;
            let feature_cost: f64 = weights.iter().zip(&phi).map(|(w, p)| w * p).sum();
            Ok(feature_cost + effort * torque.iter().map(|u| u * u).sum::<f64>())
        };

        for (_, i, per_waypoint, best) in options {
            let chosen = match self.spec.rationality {
                None => {
                    let c = &per_waypoint[best];
                    (full_cost(c.waypoint, &c.torque)? < total).then(|| (c.waypoint, c.torque.clone()))
                }
                Some(rationality) => {
                    let weight = self.spec.weights[i];
                    let f = features.get(i).expect("feature index");
                    let picks = spread(per_waypoint.len(), STOCHASTIC_WAYPOINTS);
                    let mut candidates = Vec::new();
                    for k in picks {
                        let c = &per_waypoint[k];
                        for s in 0..STOCHASTIC_SCALES {
                            let scale = STOCHASTIC_MAX_SCALE * s as f64 / (STOCHASTIC_SCALES - 1) as f64;
                            let torque: Vec<f64> = c.torque.iter().map(|u| u * scale).collect();
                            if full_cost(c.waypoint, &torque)? >= total {
                                continue;
                            }
                            let u = DVector::from_column_slice(&torque);
                            let (energy, _) = feature_objective(traj, f, weight, effort, shape, model, c.waypoint, &u)?;
                            candidates.push((c.waypoint, torque, energy));
                        }
                    }
                    self.sample(candidates, rationality)
                }
            };
            if let Some((waypoint, torque)) = chosen {
                self.last_target = Some(i);
                return Ok(Some(CorrectionEvent::new(waypoint, torque, step)));
            }
        }
        Ok(None)
    }

    fn sample(&mut self, candidates: Vec<(usize, Vec<f64>, f64)>, rationality: f64) -> Option<(usize, Vec<f64>)> {
        let low = candidates.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = candidates.iter().map(|c| (-rationality * (c.2 - low)).exp()).collect();
        let total: f64 = weights.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return None;
        }
        let mut draw = self.correction_rng.random::<f64>() * total;
        for (c, w) in candidates.into_iter().zip(weights) {
            if draw < w {
                return Some((c.0, c.1));
            }
            draw -= w;
        }
        None
    }

    /// Labelled samples of the feature the human was last correcting for,
    /// on a jittered grid over the query box.
    pub fn answer_feature_query(&mut self, query: &MissingFeatureQuery, env: &Environment) -> Result<Vec<(Point, f64)>> {
        let target = self.last_target.unwrap_or(0);
        let features = self.spec.true_features(env)?;
        let feature = features.get(target).ok_or(Error::IndexOutOfRange {
            index: target,
            min: 0,
            max: features.len().saturating_sub(1),
        })?;
        let noise = Normal::new(0.0, self.spec.query_noise).map_err(|_| Error::NonFinite("query noise"))?;
        let side = (query.samples as f64).sqrt().ceil().max(1.0) as usize;
        let cell = (query.max - query.min) / side as f64;
        let mut out = Vec::with_capacity(query.samples);
        'grid: for i in 0..side {
            for j in 0..side {
                if out.len() == query.samples {
                    break 'grid;
                }
                let jitter = Point::new(self.query_rng.random::<f64>(), self.query_rng.random::<f64>());
                let p = query.min + cell.component_mul(&(Point::new(i as f64, j as f64) + jitter));
                let mut v = feature.eval_at(&p);
                if self.spec.query_noise > 0.0 {
                    v += noise.sample(&mut self.query_rng);
                }
                out.push((p, v));
            }
        }
        Ok(out)
    }
}

/// `count` indices spread evenly over `0..len`.
fn spread(len: usize, count: usize) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    let mut out: Vec<usize> = (0..count)
        .map(|k| ((k as f64 + 0.5) * len as f64 / count as f64) as usize)
        .collect();
    out.dedup();
    out
}
