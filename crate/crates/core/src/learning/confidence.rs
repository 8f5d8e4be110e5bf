use serde::{Deserialize, Serialize};

use super::LearnerParams;
use crate::error::{Error, Result};

/// `β̂ = k / (2λ(‖u_H‖² − ‖u*‖²))`, clamped to `[0, β_max]`. A vanishing or
/// negative denominator means the observed correction is already as
/// efficient as it can be, so it maps to `β_max`.
pub fn estimate_beta(observed: &[f64], optimal: &[f64], params: &LearnerParams) -> f64 {
    let k = params.action_dim_for(observed.len()) as f64;
    let observed_effort: f64 = observed.iter().map(|u| u * u).sum();
    let optimal_effort: f64 = optimal.iter().map(|u| u * u).sum();
    let gap = observed_effort - optimal_effort;
    if gap.is_nan() || gap <= params.denominator_guard {
        return params.beta_max;
    }
    (k / (2.0 * params.effort * gap)).clamp(0.0, params.beta_max)
}

/// `θ̂ ← θ̂ − α (Φ_H − Φ_R)`.
pub fn naive_update(weights: &[f64], phi_h: &[f64], phi_r: &[f64], learning_rate: f64) -> Vec<f64> {
    weights
        .iter()
        .zip(phi_h.iter().zip(phi_r))
        .map(|(w, (h, r))| w - learning_rate * (h - r))
        .collect()
}

/// `P(E = 1 | β̂)`: logistic in `β̂` centred on the threshold.
pub fn p_explainable(beta: f64, params: &LearnerParams) -> f64 {
    if let Some(p) = params.explainable_override {
        return p;
    }
    let z = params.slope * (beta - params.threshold);
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateOutcome {
    pub weights: Vec<f64>,
    /// `Γ(Φ_H, 1) / (Γ(Φ_H, 1) + Γ(Φ_H, 0))`, the fraction of the naive step
    /// that was taken.
    pub step_weight: f64,
    pub explainable: f64,
}

/// Confidence-weighted update.
///
/// `P(Φ_H | θ, E = 1) ∝ exp(−θ̂ᵀ(Φ_H − Φ_R))` rewards corrections that lower
/// the current cost; `P(Φ_H | θ, E = 0) = (λ/π)^{k/2} exp(−λ‖Φ_H − Φ_R‖²)`
/// only charges for the size of the change. Both are combined in log space.
pub fn confidence_update(
    weights: &[f64],
    phi_h: &[f64],
    phi_r: &[f64],
    beta: f64,
    action_dim: usize,
    params: &LearnerParams,
) -> Result<UpdateOutcome> {
    if weights.len() != phi_h.len() || phi_h.len() != phi_r.len() {
        return Err(Error::DimensionMismatch {
            what: "feature sums",
            expected: weights.len(),
            found: phi_h.len().min(phi_r.len()),
        });
    }
    let explainable = p_explainable(beta, params);
    let step_weight = if explainable >= 1.0 {
        1.0
    } else if explainable <= 0.0 {
        0.0
    } else {
        let diff: Vec<f64> = phi_h.iter().zip(phi_r).map(|(h, r)| h - r).collect();
        let cost_change: f64 = weights.iter().zip(&diff).map(|(w, d)| w * d).sum();
        let size: f64 = diff.iter().map(|d| d * d).sum();
        let k = action_dim as f64;
        let log_explained = explainable.ln() - cost_change;
        let log_unexplained = (1.0 - explainable).ln() + 0.5 * k * (params.effort / std::f64::consts::PI).ln()
            - params.effort * size;
        let z = log_explained - log_unexplained;
        if z.is_nan() {
            return Err(Error::NonFinite("confidence-weighted update"));
        }
        if z >= 0.0 {
            1.0 / (1.0 + (-z).exp())
        } else {
            let e = z.exp();
            e / (1.0 + e)
        }
    };
    let weights = if step_weight == 1.0 {
        naive_update(weights, phi_h, phi_r, params.learning_rate)
    } else {
        naive_update(weights, phi_h, phi_r, params.learning_rate * step_weight)
    };
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("updated weights"));
    }
    Ok(UpdateOutcome {
        weights,
        step_weight,
        explainable,
    })
}
