//! Trajectory optimisation: `argmin_ξ θ̂ᵀΦ(ξ) + w_s Σ‖q_{t+1} − q_t‖²` with
//! fixed endpoints.
//!
//! Descent directions are preconditioned by the inverse of the smoothness
//! Hessian (the CHOMP metric), so a step of length one is a Newton step on
//! the smoothness term alone. Step lengths come from a projected Armijo
//! backtracking search and iterates are clamped to the joint limits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::kinematics::{end_effector, jacobian, ArmModel, JointConfig};
use crate::trajectory::{feature_sum, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerParams {
    /// `T`; plans have `T + 1` waypoints.
    pub horizon: usize,
    /// `w_s`.
    pub smoothness: f64,
    /// Convergence threshold on the preconditioned gradient (radians).
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Extra jittered initialisations on top of the straight line.
    pub restarts: usize,
    /// Half-width of the uniform jitter applied to restart seeds (radians).
    pub jitter: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            horizon: 20,
            smoothness: 1.0,
            tolerance: 1e-5,
            max_iterations: 500,
            restarts: 2,
            jitter: 0.3,
            armijo: 1e-4,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub trajectory: Trajectory,
    pub cost: f64,
    /// Euclidean norm of the raw gradient at the returned trajectory.
    pub gradient_norm: f64,
    /// Norm of the preconditioned gradient, the convergence measure.
    pub step_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Which initialisation produced the result; 0 is the straight line.
    pub restart: usize,
}

struct Objective<'a> {
    model: &'a ArmModel,
    features: &'a FeatureSet,
    weights: &'a [f64],
    smoothness: f64,
}

impl Objective<'_> {
    fn cost(&self, traj: &Trajectory) -> Result<f64> {
        let phi = feature_sum(traj, self.features, self.model)?;
        let feature_cost: f64 = self.weights.iter().zip(&phi).map(|(w, p)| w * p).sum();
        Ok(feature_cost + self.smoothness * smoothness_cost(traj))
    }

    fn gradient(&self, traj: &Trajectory) -> Result<Vec<Vec<f64>>> {
        let wp = traj.waypoints();
        let horizon = traj.horizon();
        (1..horizon)
            .map(|t| {
                let q = &wp[t];
                let mut g: Vec<f64> = q
                    .angles()
                    .iter()
                    .zip(wp[t - 1].angles())
                    .zip(wp[t + 1].angles())
                    .map(|((a, prev), next)| 2.0 * self.smoothness * (2.0 * a - prev - next))
                    .collect();
                if self.weights.iter().any(|w| *w != 0.0) {
                    let p = end_effector(self.model, q)?;
                    let mut dp = nalgebra::Vector2::zeros();
                    for (w, f) in self.weights.iter().zip(self.features) {
                        if *w != 0.0 {
                            dp += f.eval_with_gradient(&p).1 * *w;
                        }
                    }
                    let jac = jacobian(self.model, q)?;
                    for (gj, v) in g.iter_mut().zip((jac.transpose() * dp).iter()) {
                        *gj += v;
                    }
                }
                Ok(g)
            })
            .collect()
    }
}

pub fn smoothness_cost(traj: &Trajectory) -> f64 {
    traj.waypoints()
        .windows(2)
        .map(|w| {
            w[0].angles()
                .iter()
                .zip(w[1].angles())
                .map(|(a, b)| (b - a) * (b - a))
                .sum::<f64>()
        })
        .sum()
}

/// Cost `θ̂ᵀΦ(ξ) + w_s Σ‖q_{t+1} − q_t‖²`.
pub fn trajectory_cost(
    traj: &Trajectory,
    features: &FeatureSet,
    weights: &[f64],
    model: &ArmModel,
    smoothness: f64,
) -> Result<f64> {
    check_weights(features, weights)?;
    Objective {
        model,
        features,
        weights,
        smoothness,
    }
    .cost(traj)
}

/// Analytic gradient of the planning cost with respect to each interior
/// waypoint (rows `1..T`).
pub fn cost_gradient(
    traj: &Trajectory,
    features: &FeatureSet,
    weights: &[f64],
    model: &ArmModel,
    smoothness: f64,
) -> Result<Vec<Vec<f64>>> {
    check_weights(features, weights)?;
    Objective {
        model,
        features,
        weights,
        smoothness,
    }
    .gradient(traj)
}

fn check_weights(features: &FeatureSet, weights: &[f64]) -> Result<()> {
    if weights.len() != features.len() {
        return Err(Error::DimensionMismatch {
            what: "weight vector",
            expected: features.len(),
            found: weights.len(),
        });
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("planner weights"));
    }
    Ok(())
}

/// Solves `L x = b` for the tridiagonal `L = tridiag(-1, 2, -1)`.
fn solve_laplacian(b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = -0.5;
    d[0] = b[0] / 2.0;
    for i in 1..n {
        let m = 2.0 + c[i - 1];
        c[i] = -1.0 / m;
        d[i] = (b[i] + d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

fn precondition(gradient: &[Vec<f64>], smoothness: f64) -> Vec<Vec<f64>> {
    if smoothness <= 0.0 {
        return gradient.to_vec();
    }
    let n = gradient.len();
    let dof = gradient[0].len();
    let mut out = vec![vec![0.0; dof]; n];
    for j in 0..dof {
        let column: Vec<f64> = gradient.iter().map(|g| g[j] / (2.0 * smoothness)).collect();
        for (row, x) in out.iter_mut().zip(solve_laplacian(&column)) {
            row[j] = x;
        }
    }
    out
}

fn norm(rows: &[Vec<f64>]) -> f64 {
    rows.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

fn descend(objective: &Objective<'_>, init: Trajectory, params: &PlannerParams) -> Result<PlanOutcome> {
    let mut traj = init;
    let mut cost = objective.cost(&traj)?;
    if !cost.is_finite() {
        return Err(Error::NonFinite("planning cost"));
    }
    let mut iterations = 0;
    loop {
        let gradient = objective.gradient(&traj)?;
        let direction = precondition(&gradient, objective.smoothness);
        let step_norm = norm(&direction);
        if step_norm <= params.tolerance || iterations >= params.max_iterations {
            return Ok(PlanOutcome {
                gradient_norm: norm(&gradient),
                converged: step_norm <= params.tolerance,
                trajectory: traj,
                cost,
                step_norm,
                iterations,
                restart: 0,
            });
        }
        iterations += 1;

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=params.max_backtracks {
            let mut waypoints = traj.waypoints().to_vec();
            let mut decrease = 0.0;
            for (t, (d, g)) in direction.iter().zip(&gradient).enumerate() {
                let q = &mut waypoints[t + 1];
                let before = q.clone();
                for (a, dj) in q.angles_mut().iter_mut().zip(d) {
                    *a -= alpha * dj;
                }
                objective.model.clamp(q);
                decrease += g
                    .iter()
                    .zip(q.angles().iter().zip(before.angles()))
                    .map(|(gj, (after, b))| gj * (after - b))
                    .sum::<f64>();
            }
            let candidate = Trajectory::new(waypoints)?;
            let candidate_cost = objective.cost(&candidate)?;
            if candidate_cost <= cost + params.armijo * decrease && decrease < 0.0 {
                accepted = Some((candidate, candidate_cost));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((next, next_cost)) => {
                traj = next;
                cost = next_cost;
            }
            None => {
                return Ok(PlanOutcome {
                    gradient_norm: norm(&gradient),
                    converged: false,
                    trajectory: traj,
                    cost,
                    step_norm,
                    iterations,
                    restart: 0,
                });
            }
        }
    }
}

/// Plans a locally optimal trajectory from `start` to `goal`.
///
/// Restart 0 starts from the straight joint-space line; further restarts
/// jitter its interior with a generator seeded from `seed`. The lowest cost
/// wins, ties going to the earliest restart.
pub fn plan(
    model: &ArmModel,
    features: &FeatureSet,
    weights: &[f64],
    start: &JointConfig,
    goal: &JointConfig,
    params: &PlannerParams,
    seed: u64,
) -> Result<PlanOutcome> {
    check_weights(features, weights)?;
    model.check(start)?;
    model.check(goal)?;
    for q in [start, goal] {
        if !model.within_limits(q) {
            return Err(Error::Scenario("start and goal must respect the joint limits".into()));
        }
    }
    if params.horizon < 2 {
        return Err(Error::InvalidTrajectory(format!("horizon must be at least 2, got {}", params.horizon)));
    }
    let objective = Objective {
        model,
        features,
        weights,
        smoothness: params.smoothness,
    };
    let line = Trajectory::straight_line(start, goal, params.horizon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<PlanOutcome> = None;
    for restart in 0..=params.restarts {
        let init = if restart == 0 {
            line.clone()
        } else {
            let mut waypoints = line.waypoints().to_vec();
            let last = waypoints.len() - 1;
            for q in &mut waypoints[1..last] {
                for a in q.angles_mut() {
                    *a += rng.random_range(-params.jitter..=params.jitter);
                }
                model.clamp(q);
            }
            Trajectory::new(waypoints)?
        };
        let mut outcome = descend(&objective, init, params)?;
        outcome.restart = restart;
        if best.as_ref().is_none_or(|b| outcome.cost < b.cost) {
            best = Some(outcome);
        }
    }
    Ok(best.expect("at least one initialisation"))
}
