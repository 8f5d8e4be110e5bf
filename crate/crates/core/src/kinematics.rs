//! Planar serial-link manipulator.
//!
//! Joint angles are relative: link `k` points along the sum of the first
//! `k + 1` joint angles. Every function here is pure.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix2xX, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// A point or displacement in the workspace plane, in meters.
pub type Point = Vector2<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArmModelRepr", into = "ArmModelRepr")]
pub struct ArmModel {
    base: Point,
    link_lengths: Vec<f64>,
    joint_limits: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArmModelRepr {
    #[serde(default = "Point::zeros")]
    base: Point,
    link_lengths: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    joint_limits: Option<Vec<[f64; 2]>>,
}

impl TryFrom<ArmModelRepr> for ArmModel {
    type Error = Error;

    fn try_from(repr: ArmModelRepr) -> Result<Self> {
        match repr.joint_limits {
            Some(limits) => ArmModel::with_limits(repr.base, repr.link_lengths, limits),
            None => ArmModel::new(repr.base, repr.link_lengths),
        }
    }
}

impl From<ArmModel> for ArmModelRepr {
    fn from(model: ArmModel) -> Self {
        ArmModelRepr {
            base: model.base,
            link_lengths: model.link_lengths,
            joint_limits: Some(model.joint_limits),
        }
    }
}

impl ArmModel {
    /// Arm with every joint limited to `[-pi, pi]`.
    pub fn new(base: Point, link_lengths: Vec<f64>) -> Result<Self> {
        let limits = vec![[-PI, PI]; link_lengths.len()];
        Self::with_limits(base, link_lengths, limits)
    }

    pub fn with_limits(base: Point, link_lengths: Vec<f64>, joint_limits: Vec<[f64; 2]>) -> Result<Self> {
        if link_lengths.len() < 2 {
            return Err(Error::InvalidModel(format!(
                "need at least 2 links, got {}",
                link_lengths.len()
            )));
        }
        if let Some(l) = link_lengths.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::InvalidModel(format!("link length {l} must be positive")));
        }
        if joint_limits.len() != link_lengths.len() {
            return Err(Error::DimensionMismatch {
                what: "joint limits",
                expected: link_lengths.len(),
                found: joint_limits.len(),
            });
        }
        if let Some((j, _)) = joint_limits
            .iter()
            .enumerate()
            .find(|(_, [lo, hi])| !(lo.is_finite() && hi.is_finite() && lo < hi))
        {
            return Err(Error::InvalidModel(format!("joint {j} limits must satisfy min < max")));
        }
        if !(base.x.is_finite() && base.y.is_finite()) {
            return Err(Error::NonFinite("arm base"));
        }
        Ok(Self {
            base,
            link_lengths,
            joint_limits,
        })
    }

    /// Three unit links at the origin.
    pub fn default_three_link() -> Self {
        Self::new(Point::zeros(), vec![1.0; 3]).expect("valid default arm")
    }

    pub fn dof(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn base(&self) -> Point {
        self.base
    }

    pub fn link_lengths(&self) -> &[f64] {
        &self.link_lengths
    }

    pub fn joint_limits(&self) -> &[[f64; 2]] {
        &self.joint_limits
    }

    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    /// Smallest distance from the base the end-effector can attain.
    pub fn inner_reach(&self) -> f64 {
        let longest = self.link_lengths.iter().cloned().fold(0.0, f64::max);
        (2.0 * longest - self.reach()).max(0.0)
    }

    pub fn is_reachable(&self, target: &Point) -> bool {
        let d = (target - self.base).norm();
        d <= self.reach() && d >= self.inner_reach()
    }

    pub fn check(&self, q: &JointConfig) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::DimensionMismatch {
                what: "joint configuration",
                expected: self.dof(),
                found: q.len(),
            });
        }
        Ok(())
    }

    pub fn within_limits(&self, q: &JointConfig) -> bool {
        q.angles()
            .iter()
            .zip(&self.joint_limits)
            .all(|(a, [lo, hi])| *a >= *lo && *a <= *hi)
    }

    pub fn clamp(&self, q: &mut JointConfig) {
        for (a, [lo, hi]) in q.angles.iter_mut().zip(&self.joint_limits) {
            *a = a.clamp(*lo, *hi);
        }
    }
}

/// Joint angles in radians, one per link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfig {
    angles: Vec<f64>,
}

impl JointConfig {
    pub fn new(angles: Vec<f64>) -> Self {
        Self { angles }
    }

    pub fn zeros(dof: usize) -> Self {
        Self::new(vec![0.0; dof])
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn angles_mut(&mut self) -> &mut [f64] {
        &mut self.angles
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.angles
    }

    pub fn is_finite(&self) -> bool {
        self.angles.iter().all(|a| a.is_finite())
    }
}

impl From<Vec<f64>> for JointConfig {
    fn from(angles: Vec<f64>) -> Self {
        Self::new(angles)
    }
}

/// Positions of every joint plus the end-effector, base first.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmPose {
    pub points: Vec<Point>,
}

impl ArmPose {
    pub fn end_effector(&self) -> Point {
        *self.points.last().expect("pose has at least the base")
    }
}

/// `(cos x, sin x)` from two separate calls. Optimised builds otherwise fuse
/// the pair into one `sincos`, whose last bit can differ, and results would
/// then depend on the build profile.
pub(crate) fn cos_sin(x: f64) -> (f64, f64) {
    (x.cos(), std::hint::black_box(x).sin())
}

pub fn forward_kinematics(model: &ArmModel, q: &JointConfig) -> Result<ArmPose> {
    model.check(q)?;
    let mut points = Vec::with_capacity(model.dof() + 1);
    let mut p = model.base;
    let mut heading = 0.0;
    points.push(p);
    for (angle, length) in q.angles.iter().zip(&model.link_lengths) {
        heading += angle;
        let (c, s) = cos_sin(heading);
        p += Point::new(c, s) * *length;
        points.push(p);
    }
    Ok(ArmPose { points })
}

pub fn end_effector(model: &ArmModel, q: &JointConfig) -> Result<Point> {
    forward_kinematics(model, q).map(|pose| pose.end_effector())
}

/// Column `j` is the partial derivative of the end-effector position with
/// respect to joint `j`: the perpendicular of the vector from joint `j` to
/// the end-effector.
pub fn jacobian(model: &ArmModel, q: &JointConfig) -> Result<Matrix2xX<f64>> {
    let pose = forward_kinematics(model, q)?;
    let ee = pose.end_effector();
    let mut jac = Matrix2xX::zeros(model.dof());
    for j in 0..model.dof() {
        let r = ee - pose.points[j];
        jac[(0, j)] = -r.y;
        jac[(1, j)] = r.x;
    }
    Ok(jac)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IkParams {
    pub damping: f64,
    /// Largest per-joint change in one iteration, radians.
    pub max_step: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for IkParams {
    fn default() -> Self {
        Self {
            damping: 0.05,
            max_step: 0.2,
            tolerance: 1e-9,
            max_iterations: 500,
        }
    }
}

/// Damped least squares, seeded at `q_init`. Iterates are clamped to the
/// joint limits, so a converged result always respects them.
pub fn inverse_kinematics(
    model: &ArmModel,
    q_init: &JointConfig,
    target: &Point,
    params: &IkParams,
) -> Result<JointConfig> {
    model.check(q_init)?;
    if let Some((joint, angle)) = q_init
        .angles
        .iter()
        .zip(&model.joint_limits)
        .enumerate()
        .find(|(_, (a, [lo, hi]))| !(**a >= *lo && **a <= *hi))
        .map(|(j, (a, _))| (j, *a))
    {
        return Err(Error::JointLimit { joint, angle });
    }
    if !(target.x.is_finite() && target.y.is_finite()) {
        return Err(Error::NonFinite("inverse kinematics target"));
    }
    let distance = (target - model.base).norm();
    if !model.is_reachable(target) {
        return Err(Error::Unreachable {
            distance,
            inner: model.inner_reach(),
            outer: model.reach(),
        });
    }

    let damping_sq = params.damping * params.damping;
    let mut q = q_init.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..=params.max_iterations {
        let pose = forward_kinematics(model, &q)?;
        let error = target - pose.end_effector();
        residual = error.norm();
        if residual <= params.tolerance {
            return Ok(q);
        }
        let jac = jacobian(model, &q)?;
        let damped = jac.clone() * jac.transpose() + Matrix2::identity() * damping_sq;
        let Some(inv) = damped.try_inverse() else {
            break;
        };
        let mut dq = jac.transpose() * (inv * error);
        let largest = dq.amax();
        if largest > params.max_step {
            dq *= params.max_step / largest;
        }
        for (a, d) in q.angles.iter_mut().zip(dq.iter()) {
            *a += d;
        }
        model.clamp(&mut q);
    }
    Err(Error::NoConvergence {
        residual,
        iterations: params.max_iterations,
    })
}

/// Moves every waypoint's end-effector by `delta`, keeping the base fixed.
/// Each waypoint is solved from its own original configuration so the
/// shifted trajectory stays on the same inverse-kinematics branch.
pub fn shift_trajectory_end_effector(
    model: &ArmModel,
    trajectory: &Trajectory,
    delta: &Point,
    ik: &IkParams,
) -> Result<Trajectory> {
    let waypoints = trajectory
        .waypoints()
        .iter()
        .enumerate()
        .map(|(t, q)| {
            let target = end_effector(model, q)? + delta;
            inverse_kinematics(model, q, &target, ik).map_err(|e| Error::ShiftFailed {
                waypoint: t,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(waypoints)
}
