//! Maximum-likelihood weights from demonstrations.
//!
//! The partition function is approximated by the demonstrations plus `S`
//! sampled trajectories (random single-waypoint deformations of each demo
//! and of the straight line between its endpoints). The objective
//!
//! `L(θ) = −Σ_d C_θ(ξ_d) − D · log Σ_{ξ ∈ demos ∪ samples} e^{−C_θ(ξ)} − reg‖θ‖²`
//!
//! is concave, and is maximised by projected gradient ascent on `θ ≥ 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::kinematics::ArmModel;
use crate::trajectory::{deform_raw, feature_sum, DeformationParams, DeformationShape, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitParams {
    pub regularization: f64,
    /// Sampled trajectories added to the partition sum.
    pub samples: usize,
    /// Standard deviation of each sampled torque component.
    pub sample_torque: f64,
    /// `μ` of the deformation used to draw samples.
    pub sample_magnitude: f64,
    pub max_iterations: usize,
    /// Stop once the projected gradient step is below this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            regularization: 0.1,
            samples: 0,
            sample_torque: 3.0,
            sample_magnitude: 0.15,
            max_iterations: 5000,
            tolerance: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub weights: Vec<f64>,
    pub log_likelihood: f64,
    /// Norm of the projected gradient at the returned weights.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct Likelihood {
    demos: Vec<Vec<f64>>,
    /// Demos first, then samples.
    partition: Vec<Vec<f64>>,
    regularization: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Likelihood {
    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = self.demos.len() as f64;
        let neg_cost: Vec<f64> = self.partition.iter().map(|phi| -dot(theta, phi)).collect();
        let top = neg_cost.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = neg_cost.iter().map(|c| (c - top).exp()).collect();
        let z: f64 = weights.iter().sum();
        let lse = top + z.ln();

        let mut value = -d * lse - self.regularization * dot(theta, theta);
        let mut grad: Vec<f64> = theta.iter().map(|t| -2.0 * self.regularization * t).collect();
        for phi in &self.demos {
            value -= dot(theta, phi);
            for (g, p) in grad.iter_mut().zip(phi) {
                *g -= p;
            }
        }
        for (w, phi) in weights.iter().zip(&self.partition) {
            for (g, p) in grad.iter_mut().zip(phi) {
                *g += d * w / z * p;
            }
        }
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("offline log-likelihood"));
        }
        Ok((value, grad))
    }
}

fn project(theta: &[f64]) -> Vec<f64> {
    theta.iter().map(|t| t.max(0.0)).collect()
}

fn draw_samples(demos: &[Trajectory], params: &FitParams) -> Result<Vec<Trajectory>> {
    if params.samples == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let noise = Normal::new(0.0, params.sample_torque)
        .map_err(|_| Error::Scenario(format!("sample_torque must be non-negative, got {}", params.sample_torque)))?;
    let mut out = Vec::with_capacity(params.samples);
    for s in 0..params.samples {
        let demo = &demos[s % demos.len()];
        let base = if (s / demos.len()).is_multiple_of(2) {
            Trajectory::straight_line(demo.start(), demo.goal(), demo.horizon())?
        } else {
            demo.clone()
        };
        let shape = DeformationShape::new(&DeformationParams {
            horizon: base.horizon(),
            magnitude: params.sample_magnitude,
        })?;
        let waypoint = rng.random_range(shape.interior());
        let torque: Vec<f64> = (0..base.dof()).map(|_| noise.sample(&mut rng)).collect();
        out.push(deform_raw(&base, &shape, waypoint, &torque));
    }
    Ok(out)
}

pub fn fit_offline(demos: &[Trajectory], features: &FeatureSet, model: &ArmModel, params: &FitParams) -> Result<FitOutcome> {
    if demos.is_empty() {
        return Err(Error::InvalidTrajectory("at least one demonstration is required".into()));
    }
    if !(params.regularization.is_finite() && params.regularization > 0.0) {
        return Err(Error::Scenario(format!(
            "regularization must be positive, got {}",
            params.regularization
        )));
    }
    let demo_phi = demos
        .iter()
        .map(|d| feature_sum(d, features, model))
        .collect::<Result<Vec<_>>>()?;
    let mut partition = demo_phi.clone();
    for s in draw_samples(demos, params)? {
        partition.push(feature_sum(&s, features, model)?);
    }
    let objective = Likelihood {
        demos: demo_phi,
        partition,
        regularization: params.regularization,
    };

    let mut theta = vec![0.0; features.len()];
    let (mut value, mut grad) = objective.value_and_gradient(&theta)?;
    let mut step = 1.0;
    let mut iterations = 0;
    let mut gradient_norm = projected_norm(&theta, &grad);
    while iterations < params.max_iterations && gradient_norm > params.tolerance {
        iterations += 1;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = project(&theta.iter().zip(&grad).map(|(t, g)| t + step * g).collect::<Vec<_>>());
            let moved: f64 = trial.iter().zip(&theta).map(|(a, b)| (a - b) * (a - b)).sum();
            let (v, g) = objective.value_and_gradient(&trial)?;
            // Sufficient increase for projected ascent.
            if v >= value + 1e-4 / step * moved {
                theta = trial;
                value = v;
                grad = g;
                accepted = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        gradient_norm = projected_norm(&theta, &grad);
        if !accepted {
            break;
        }
    }
    Ok(FitOutcome {
        weights: theta,
        log_likelihood: value,
        gradient_norm,
        iterations,
        converged: gradient_norm <= params.tolerance,
    })
}

/// `‖P(θ + ∇L) − θ‖`: zero exactly at the constrained maximiser.
fn projected_norm(theta: &[f64], grad: &[f64]) -> f64 {
    theta
        .iter()
        .zip(grad)
        .map(|(t, g)| ((t + g).max(0.0) - t).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::TrainedFeature;
    use crate::kinematics::{JointConfig, Point};
    use crate::world::Environment;

    fn fixture() -> (ArmModel, FeatureSet, Trajectory) {
        let model = ArmModel::default_three_link();
        let env = Environment::new("train", vec![]).unwrap();
        let fs = FeatureSet::new(vec![
            TrainedFeature::radial("a", Point::new(1.5, 1.0), 0.5, env.clone()).unwrap(),
            TrainedFeature::radial("b", Point::new(-0.5, 1.2), 0.5, env).unwrap(),
        ])
        .unwrap();
        let demo = Trajectory::straight_line(
            &JointConfig::new(vec![0.0, 0.5, 0.5]),
            &JointConfig::new(vec![1.5, 0.3, 0.2]),
            10,
        )
        .unwrap();
        (model, fs, demo)
    }

    #[test]
    fn single_demo_without_samples_gives_zero() {
        let (model, fs, demo) = fixture();
        let out = fit_offline(&[demo], &fs, &model, &FitParams::default()).unwrap();
        assert!(out.converged);
        assert!(out.weights.iter().all(|w| *w == 0.0));
    }

    #[test]
    fn duplicate_demos_match_single() {
        let (model, fs, demo) = fixture();
        let params = FitParams::default();
        let one = fit_offline(std::slice::from_ref(&demo), &fs, &model, &params).unwrap();
        let two = fit_offline(&[demo.clone(), demo], &fs, &model, &params).unwrap();
        for (a, b) in one.weights.iter().zip(&two.weights) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let (model, fs, demo) = fixture();
        assert!(fit_offline(&[], &fs, &model, &FitParams::default()).is_err());
        let params = FitParams {
            regularization: 0.0,
            ..Default::default()
        };
        assert!(fit_offline(&[demo], &fs, &model, &params).is_err());
    }
}
