//! Minimum-effort single-waypoint correction reproducing one feature's sum.
//!
//! For each interior waypoint the feasible set `{u : Φ_i(ξ_R + μA⁻¹u) = Φ_i(ξ_H)}`
//! is located by scanning rays from the origin for a sign change of the
//! residual. The closest crossings seed a quadratic-penalty solve of
//! `‖u‖² + ρ r(u)²` (Gauss-Newton, `ρ` raised along a fixed schedule),
//! followed by a short Newton projection back onto the constraint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSet, TrainedFeature};
use crate::kinematics::{cos_sin, end_effector, jacobian, ArmModel, JointConfig};
use crate::trajectory::{check_correction, feature_sum, CorrectionEvent, DeformationShape, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectionSolverParams {
    /// Feature-sum tolerance `tol_Φ` for feasibility.
    pub tolerance: f64,
    /// Penalty continuation schedule.
    pub penalties: Vec<f64>,
    pub max_inner_iterations: usize,
    /// Largest torque norm searched.
    pub scan_radius: f64,
    pub scan_step: f64,
    /// Ray crossings polished per waypoint.
    pub seeds_per_waypoint: usize,
}

impl Default for CorrectionSolverParams {
    fn default() -> Self {
        Self {
            tolerance: 1e-3,
            penalties: vec![1e2, 1e3, 1e4],
            max_inner_iterations: 60,
            scan_radius: 8.0,
            scan_step: 0.05,
            seeds_per_waypoint: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalCorrection {
    pub waypoint: usize,
    pub torque: Vec<f64>,
    /// `‖u*‖²`.
    pub effort: f64,
    /// `Φ_i(ξ_R + μA⁻¹u*) − Φ_i(ξ_H)`.
    pub residual: f64,
}

/// Residual of one feature's sum as a function of the torque at one waypoint.
struct WaypointResidual<'a> {
    model: &'a ArmModel,
    feature: &'a TrainedFeature,
    base: Vec<&'a JointConfig>,
    influence: Vec<f64>,
    /// Feature sum over the waypoints this torque cannot move, minus target.
    offset: f64,
}

impl<'a> WaypointResidual<'a> {
    fn new(
        original: &'a Trajectory,
        feature: &'a TrainedFeature,
        model: &'a ArmModel,
        shape: &DeformationShape,
        waypoint: usize,
        target: f64,
    ) -> Result<Self> {
        let mut base = Vec::new();
        let mut influence = Vec::new();
        let mut offset = -target;
        for (t, q) in original.waypoints().iter().enumerate() {
            let w = shape.influence(t, waypoint);
            if w == 0.0 {
                offset += feature.eval(model, q)?;
            } else {
                base.push(q);
                influence.push(w);
            }
        }
        Ok(Self {
            model,
            feature,
            base,
            influence,
            offset,
        })
    }

    fn moved(&self, k: usize, torque: &[f64]) -> JointConfig {
        JointConfig::new(
            self.base[k]
                .angles()
                .iter()
                .zip(torque)
                .map(|(a, u)| a + self.influence[k] * u)
                .collect(),
        )
    }

    fn value(&self, torque: &[f64]) -> Result<f64> {
        let mut r = self.offset;
        for k in 0..self.base.len() {
            r += self.feature.eval_at(&end_effector(self.model, &self.moved(k, torque))?);
        }
        Ok(r)
    }

    fn value_and_gradient(&self, torque: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut r = self.offset;
        let mut grad = vec![0.0; torque.len()];
        for k in 0..self.base.len() {
            let q = self.moved(k, torque);
            let p = end_effector(self.model, &q)?;
            let (v, dp) = self.feature.eval_with_gradient(&p);
            r += v;
            let dq = jacobian(self.model, &q)?.transpose() * dp;
            for (g, d) in grad.iter_mut().zip(dq.iter()) {
                *g += self.influence[k] * d;
            }
        }
        Ok((r, grad))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Deterministic ray directions covering the torque space.
pub(crate) fn scan_directions(dof: usize) -> Vec<Vec<f64>> {
    if dof == 2 {
        return (0..16)
            .map(|k| {
                let (c, s) = cos_sin(k as f64 * std::f64::consts::PI / 8.0);
                vec![c, s]
            })
            .collect();
    }
    let mut dirs = Vec::new();
    for i in 0..dof {
        for s in [1.0, -1.0] {
            let mut d = vec![0.0; dof];
            d[i] = s;
            dirs.push(d);
        }
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..dof {
        for j in i + 1..dof {
            for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let mut d = vec![0.0; dof];
                d[i] = si * h;
                d[j] = sj * h;
                dirs.push(d);
            }
        }
    }
    dirs
}

fn scaled(d: &[f64], s: f64) -> Vec<f64> {
    d.iter().map(|x| x * s).collect()
}

/// First crossing of the constraint along `direction`, if any.
fn ray_crossing(res: &WaypointResidual<'_>, r0: f64, direction: &[f64], params: &CorrectionSolverParams) -> Result<Option<f64>> {
    let mut prev = 0.0;
    let mut s = params.scan_step;
    while s <= params.scan_radius + 1e-12 {
        let r = res.value(&scaled(direction, s))?;
        if r == 0.0 || r.signum() != r0.signum() {
            let (mut lo, mut hi) = (prev, s);
            for _ in 0..50 {
                let mid = 0.5 * (lo + hi);
                let rm = res.value(&scaled(direction, mid))?;
                if rm.signum() == r0.signum() && rm != 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Ok(Some(hi));
        }
        prev = s;
        s += params.scan_step;
    }
    Ok(None)
}

/// Penalty continuation from `seed`, then projection onto `r(u) = 0`.
fn polish(res: &WaypointResidual<'_>, seed: Vec<f64>, params: &CorrectionSolverParams) -> Result<(Vec<f64>, f64)> {
    let mut u = seed;
    for &rho in &params.penalties {
        let objective = |u: &[f64], r: f64| norm_sq(u) + rho * r * r;
        for _ in 0..params.max_inner_iterations {
            let (r, g) = res.value_and_gradient(&u)?;
            let current = objective(&u, r);
            // Gauss-Newton on [u; √ρ r]: (I + ρ g gᵀ) δ = −(u + ρ r g).
            let rhs: Vec<f64> = u.iter().zip(&g).map(|(ui, gi)| ui + rho * r * gi).collect();
            let coef = rho * dot(&g, &rhs) / (1.0 + rho * norm_sq(&g));
            let step: Vec<f64> = rhs.iter().zip(&g).map(|(b, gi)| -(b - coef * gi)).collect();
            let mut alpha = 1.0;
            let mut moved = false;
            for _ in 0..30 {
                let trial: Vec<f64> = u.iter().zip(&step).map(|(ui, s)| ui + alpha * s).collect();
                let rt = res.value(&trial)?;
                if objective(&trial, rt) < current {
                    u = trial;
                    moved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !moved || alpha * norm_sq(&step).sqrt() < 1e-12 * (1.0 + norm_sq(&u).sqrt()) {
                break;
            }
        }
    }
    let mut r = 0.0;
    for _ in 0..30 {
        let (rv, g) = res.value_and_gradient(&u)?;
        r = rv;
        let gg = norm_sq(&g);
        if r.abs() <= params.tolerance * 1e-4 || gg < 1e-300 {
            break;
        }
        for (ui, gi) in u.iter_mut().zip(&g) {
            *ui -= r * gi / gg;
        }
    }
    Ok((u, r))
}

/// `min ‖u‖²  s.t.  Φ_i(ξ_R + μA⁻¹u) = Φ_i(ξ_H)` over single-waypoint `u`.
pub fn optimal_correction(
    original: &Trajectory,
    deformed: &Trajectory,
    feature: usize,
    shape: &DeformationShape,
    model: &ArmModel,
    features: &FeatureSet,
    params: &CorrectionSolverParams,
) -> Result<OptimalCorrection> {
    let target = target_sum(original, deformed, feature, model, features)?;
    optimal_correction_for_target(original, target, feature, shape, model, features, params)
}

fn target_sum(
    original: &Trajectory,
    deformed: &Trajectory,
    feature: usize,
    model: &ArmModel,
    features: &FeatureSet,
) -> Result<f64> {
    if original.horizon() != deformed.horizon() {
        return Err(Error::DimensionMismatch {
            what: "deformed trajectory horizon",
            expected: original.horizon(),
            found: deformed.horizon(),
        });
    }
    let single = FeatureSet::new(vec![features
        .get(feature)
        .ok_or(Error::IndexOutOfRange {
            index: feature,
            min: 0,
            max: features.len().saturating_sub(1),
        })?
        .clone()])?;
    Ok(feature_sum(deformed, &single, model)?[0])
}

/// Same problem with the target feature sum given directly.
pub fn optimal_correction_for_target(
    original: &Trajectory,
    target: f64,
    feature: usize,
    shape: &DeformationShape,
    model: &ArmModel,
    features: &FeatureSet,
    params: &CorrectionSolverParams,
) -> Result<OptimalCorrection> {
    solve(original, target, feature, shape, model, features, params, None)
}

/// [`optimal_correction`], also trying the observed correction itself as a
/// candidate so the result never costs more than what the human did.
#[allow(clippy::too_many_arguments)]
pub fn optimal_correction_given(
    original: &Trajectory,
    deformed: &Trajectory,
    observed: &CorrectionEvent,
    feature: usize,
    shape: &DeformationShape,
    model: &ArmModel,
    features: &FeatureSet,
    params: &CorrectionSolverParams,
) -> Result<OptimalCorrection> {
    let target = target_sum(original, deformed, feature, model, features)?;
    let candidate = Some((observed.waypoint, observed.torque.as_slice()));
    solve(original, target, feature, shape, model, features, params, candidate)
}

#[allow(clippy::too_many_arguments)]
fn solve(
    original: &Trajectory,
    target: f64,
    feature: usize,
    shape: &DeformationShape,
    model: &ArmModel,
    features: &FeatureSet,
    params: &CorrectionSolverParams,
    candidate: Option<(usize, &[f64])>,
) -> Result<OptimalCorrection> {
    let f = features.get(feature).ok_or(Error::IndexOutOfRange {
        index: feature,
        min: 0,
        max: features.len().saturating_sub(1),
    })?;
    let dof = original.dof();
    check_correction(original, shape, 1, &vec![0.0; dof])?;
    if !target.is_finite() {
        return Err(Error::NonFinite("target feature sum"));
    }

    let first = *shape.interior().start();
    let probe = WaypointResidual::new(original, f, model, shape, first, target)?;
    let r0 = probe.value(&vec![0.0; dof])?;
    if r0.abs() <= params.tolerance {
        return Ok(OptimalCorrection {
            waypoint: first,
            torque: vec![0.0; dof],
            effort: 0.0,
            residual: r0,
        });
    }

    let mut best: Option<OptimalCorrection> = None;
    let mut best_residual = r0.abs();
    for c in shape.interior() {
        let res = WaypointResidual::new(original, f, model, shape, c, target)?;
        let mut directions = scan_directions(dof);
        let (_, g0) = res.value_and_gradient(&vec![0.0; dof])?;
        let gn = norm_sq(&g0).sqrt();
        if gn > 0.0 {
            directions.push(scaled(&g0, 1.0 / gn));
            directions.push(scaled(&g0, -1.0 / gn));
        }
        let mut crossings = Vec::new();
        for d in &directions {
            if let Some(s) = ray_crossing(&res, r0, d, params)? {
                crossings.push(scaled(d, s));
            }
        }
        if crossings.is_empty() {
            let far = directions
                .iter()
                .map(|d| res.value(&scaled(d, params.scan_radius)).map(f64::abs))
                .collect::<Result<Vec<_>>>()?;
            best_residual = far.into_iter().fold(best_residual, f64::min);
            continue;
        }
        crossings.sort_by(|a, b| norm_sq(a).total_cmp(&norm_sq(b)));
        for seed in crossings.into_iter().take(params.seeds_per_waypoint.max(1)) {
            let seed_residual = res.value(&seed)?;
            let (u, r) = polish(&res, seed.clone(), params)?;
            // Near-degenerate constraints can throw the projection far away;
            // the bisected crossing is feasible on its own.
            let polished_ok = r.abs() <= params.tolerance && norm_sq(&u) <= norm_sq(&seed);
            let (u, r) = if polished_ok { (u, r) } else { (seed, seed_residual) };
            best_residual = best_residual.min(r.abs());
            if r.abs() > params.tolerance {
                continue;
            }
            consider(&mut best, c, u, r);
        }
    }
    if let Some((c, u)) = candidate {
        if shape.interior().contains(&c) && u.len() == dof {
            let r = WaypointResidual::new(original, f, model, shape, c, target)?.value(u)?;
            best_residual = best_residual.min(r.abs());
            if r.abs() <= params.tolerance {
                consider(&mut best, c, u.to_vec(), r);
            }
        }
    }
    best.ok_or(Error::Infeasible { best_residual })
}

fn consider(best: &mut Option<OptimalCorrection>, waypoint: usize, torque: Vec<f64>, residual: f64) {
    let effort = norm_sq(&torque);
    if best.as_ref().is_none_or(|b| effort < b.effort) {
        *best = Some(OptimalCorrection {
            waypoint,
            torque,
            effort,
            residual,
        });
    }
}
