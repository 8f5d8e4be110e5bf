//! Trained features and their alignment.
//!
//! A trained feature is a radial basis (or a product of radial bases) over
//! the end-effector position. Its anchors are fixed in absolute workspace
//! coordinates when it is trained, so a feature learned next to an object
//! keeps peaking where that object *used* to be after the object moves.
//! Evaluation never looks at the current environment; only an explicit
//! alignment offset can move a feature.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{end_effector, jacobian, ArmModel, JointConfig, Point};
use crate::world::Environment;

pub const DEFAULT_WIDTH: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Anchor {
    /// Peak location chosen at training time.
    pub position: Point,
    /// Accumulated alignment offset.
    #[serde(default = "Point::zeros")]
    pub offset: Point,
    /// Object this anchor was trained against, for relational features.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
}

impl Anchor {
    pub fn at(position: Point) -> Self {
        Self {
            position,
            offset: Point::zeros(),
            object: None,
        }
    }

    pub fn aligned_position(&self) -> Point {
        self.position + self.offset
    }

    // `(p - offset) - position` rather than `p - (position + offset)`: this
    // makes an aligned feature at `p` bit-identical to the unaligned one at
    // `p - delta`.
    fn local(&self, p: &Point) -> Point {
        (p - self.offset) - self.position
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Radial,
    Product,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedFeature {
    pub id: String,
    width: f64,
    anchors: Vec<Anchor>,
    training_env: Environment,
}

impl TrainedFeature {
    pub fn radial(id: impl Into<String>, anchor: Point, width: f64, training_env: Environment) -> Result<Self> {
        Self::new(id, vec![Anchor::at(anchor)], width, training_env)
    }

    /// Product of radial bases, one per anchor. Each anchor is tagged with
    /// the object it relates to so alignment can move it independently.
    pub fn relational(
        id: impl Into<String>,
        anchors: Vec<(String, Point)>,
        width: f64,
        training_env: Environment,
    ) -> Result<Self> {
        let anchors = anchors
            .into_iter()
            .map(|(object, position)| Anchor {
                position,
                offset: Point::zeros(),
                object: Some(object),
            })
            .collect();
        Self::new(id, anchors, width, training_env)
    }

    pub fn new(id: impl Into<String>, anchors: Vec<Anchor>, width: f64, training_env: Environment) -> Result<Self> {
        if !(width.is_finite() && width > 0.0) {
            return Err(Error::Scenario(format!("feature width must be positive, got {width}")));
        }
        if anchors.is_empty() {
            return Err(Error::Scenario("a feature needs at least one anchor".into()));
        }
        let finite = |p: &Point| p.x.is_finite() && p.y.is_finite();
        if anchors.iter().any(|a| !finite(&a.position) || !finite(&a.offset)) {
            return Err(Error::NonFinite("feature anchor"));
        }
        Ok(Self {
            id: id.into(),
            width,
            anchors,
            training_env,
        })
    }

    pub fn kind(&self) -> FeatureKind {
        if self.anchors.len() == 1 {
            FeatureKind::Radial
        } else {
            FeatureKind::Product
        }
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn training_env(&self) -> &Environment {
        &self.training_env
    }

    /// Accumulated offset of the first anchor.
    pub fn alignment_offset(&self) -> Point {
        self.anchors[0].offset
    }

    /// Where the (first) anchor currently peaks.
    pub fn peak(&self) -> Point {
        self.anchors[0].aligned_position()
    }

    pub fn eval_at(&self, p: &Point) -> f64 {
        let inv = 1.0 / (2.0 * self.width * self.width);
        let exponent: f64 = self.anchors.iter().map(|a| a.local(p).norm_squared()).sum();
        (-exponent * inv).exp()
    }

    /// Value and gradient with respect to the end-effector position.
    pub fn eval_with_gradient(&self, p: &Point) -> (f64, Point) {
        let value = self.eval_at(p);
        let sum: Point = self.anchors.iter().map(|a| a.local(p)).sum();
        (value, -sum * (value / (self.width * self.width)))
    }

    pub fn eval(&self, model: &ArmModel, q: &JointConfig) -> Result<f64> {
        Ok(self.eval_at(&end_effector(model, q)?))
    }

    /// Gradient of the feature with respect to the joint angles.
    pub fn joint_gradient(&self, model: &ArmModel, q: &JointConfig) -> Result<(f64, Vec<f64>)> {
        let p = end_effector(model, q)?;
        let (value, grad) = self.eval_with_gradient(&p);
        let jac = jacobian(model, q)?;
        Ok((value, (jac.transpose() * grad).iter().cloned().collect()))
    }

    /// Translate every anchor by `delta`.
    pub fn aligned(&self, delta: &Point) -> Self {
        let mut out = self.clone();
        for a in &mut out.anchors {
            a.offset += delta;
        }
        out
    }

    /// Translate only the anchors trained against `object`. Untagged
    /// anchors belong to every object.
    pub fn aligned_for_object(&self, object: &str, delta: &Point) -> Self {
        let mut out = self.clone();
        for a in &mut out.anchors {
            if a.object.as_deref().is_none_or(|o| o == object) {
                a.offset += delta;
            }
        }
        out
    }

    pub fn renamed(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

/// `φ̃ ← φ` with its anchor translated by `delta`.
pub fn align_feature(feature: &TrainedFeature, delta: &Point) -> TrainedFeature {
    feature.aligned(delta)
}

/// Copy of `feature` under a new id, translated by `delta`, for a new
/// object that should be treated like the one `feature` was trained on.
pub fn clone_feature_for_new_object(feature: &TrainedFeature, new_id: impl Into<String>, delta: &Point) -> TrainedFeature {
    feature.aligned(delta).renamed(new_id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct FeatureSet {
    features: Vec<TrainedFeature>,
}

impl FeatureSet {
    pub fn new(features: Vec<TrainedFeature>) -> Result<Self> {
        let mut seen = HashSet::new();
        for f in &features {
            if !seen.insert(f.id.as_str()) {
                return Err(Error::DuplicateId(f.id.clone()));
            }
        }
        Ok(Self { features })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&TrainedFeature> {
        self.features.get(index)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TrainedFeature> {
        self.features.iter()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.features.iter().position(|f| f.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.features.iter().map(|f| f.id.clone()).collect()
    }

    pub fn eval_at(&self, p: &Point) -> Vec<f64> {
        self.features.iter().map(|f| f.eval_at(p)).collect()
    }

    /// New set with feature `index` replaced.
    pub fn with_replaced(&self, index: usize, feature: TrainedFeature) -> Result<Self> {
        let mut features = self.features.clone();
        let slot = features.get_mut(index).ok_or(Error::IndexOutOfRange {
            index,
            min: 0,
            max: self.len().saturating_sub(1),
        })?;
        *slot = feature;
        Self::new(features)
    }

    /// New set with `feature` appended as index `M`.
    pub fn with_appended(&self, feature: TrainedFeature) -> Result<Self> {
        let mut features = self.features.clone();
        features.push(feature);
        Self::new(features)
    }

    /// Id for a feature derived from `base` that does not collide.
    pub fn fresh_id(&self, base: &str) -> String {
        let mut n = self.len() + 1;
        loop {
            let candidate = format!("{base}#{n}");
            if self.index_of(&candidate).is_none() {
                return candidate;
            }
            n += 1;
        }
    }

    /// Appends a translated copy of feature `index` for a new object and
    /// returns the new set together with the appended index.
    pub fn with_clone_for_new_object(&self, index: usize, delta: &Point) -> Result<(Self, usize)> {
        let source = self.get(index).ok_or(Error::IndexOutOfRange {
            index,
            min: 0,
            max: self.len().saturating_sub(1),
        })?;
        let id = self.fresh_id(&source.id);
        let set = self.with_appended(clone_feature_for_new_object(source, id, delta))?;
        let appended = set.len() - 1;
        Ok((set, appended))
    }
}

impl<'a> IntoIterator for &'a FeatureSet {
    type Item = &'a TrainedFeature;
    type IntoIter = std::slice::Iter<'a, TrainedFeature>;

    fn into_iter(self) -> Self::IntoIter {
        self.features.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::world::ObjectPose;

    fn env() -> Environment {
        Environment::new("train", vec![ObjectPose::new("laptop", Point::new(1.5, 1.0))]).unwrap()
    }

    fn laptop() -> TrainedFeature {
        TrainedFeature::radial("laptop", Point::new(1.5, 1.0), 0.5, env()).unwrap()
    }

    #[test]
    fn peak_value_is_one() {
        assert_eq!(laptop().eval_at(&Point::new(1.5, 1.0)), 1.0);
    }

    #[test]
    fn one_width_away() {
        let v = laptop().eval_at(&Point::new(2.0, 1.0));
        assert_relative_eq!(v, (-0.5f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(v, 0.60653, epsilon = 1e-5);
    }

    #[test]
    fn tail_decays_below_1e20() {
        assert!(laptop().eval_at(&Point::new(1.5 + 5.0, 1.0)) < 1e-20);
    }

    #[test]
    fn aligned_peak_moves() {
        let f = laptop().aligned(&Point::new(0.6, -0.4));
        assert_relative_eq!(f.peak(), Point::new(2.1, 0.6), epsilon = 1e-12);
        assert_eq!(f.eval_at(&f.peak()), 1.0);
    }

    #[test]
    fn zero_alignment_is_identity() {
        let f = laptop();
        assert_eq!(align_feature(&f, &Point::zeros()), f);
    }

    #[test]
    fn clone_appends_without_touching_original() {
        let set = FeatureSet::new(vec![laptop()]).unwrap();
        let (grown, idx) = set.with_clone_for_new_object(0, &Point::new(0.3, 0.0)).unwrap();
        assert_eq!(idx, 1);
        assert_eq!(grown.len(), 2);
        assert_eq!(grown.get(0), set.get(0));
        assert_ne!(grown.get(1).unwrap().id, "laptop");
        assert_relative_eq!(grown.get(1).unwrap().peak(), Point::new(1.8, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn zero_clone_duplicates_evaluations() {
        let f = laptop();
        let c = clone_feature_for_new_object(&f, "copy", &Point::zeros());
        for p in [Point::new(0.0, 0.0), Point::new(1.4, 1.1), Point::new(2.0, -1.0)] {
            assert_eq!(c.eval_at(&p), f.eval_at(&p));
        }
    }

    #[test]
    fn relational_alignment_moves_only_tagged_anchor() {
        let f = TrainedFeature::relational(
            "above",
            vec![("vase".into(), Point::new(0.0, 1.0)), ("laptop".into(), Point::new(0.0, 0.5))],
            0.5,
            env(),
        )
        .unwrap();
        assert_eq!(f.kind(), FeatureKind::Product);
        let g = f.aligned_for_object("vase", &Point::new(1.0, 0.0));
        assert_eq!(g.anchors()[0].offset, Point::new(1.0, 0.0));
        assert_eq!(g.anchors()[1].offset, Point::zeros());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let f = TrainedFeature::relational(
            "pair",
            vec![("a".into(), Point::new(0.2, 0.3)), ("b".into(), Point::new(-0.1, 0.6))],
            0.7,
            env(),
        )
        .unwrap();
        let p = Point::new(0.4, 0.1);
        let (_, g) = f.eval_with_gradient(&p);
        let h = 1e-6;
        for k in 0..2 {
            let mut e = Point::zeros();
            e[k] = h;
            let fd = (f.eval_at(&(p + e)) - f.eval_at(&(p - e))) / (2.0 * h);
            assert_relative_eq!(g[k], fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn duplicate_feature_ids_rejected() {
        assert!(FeatureSet::new(vec![laptop(), laptop()]).is_err());
    }
}
