//! Object layouts and per-object displacement between two layouts.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::Point;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectPose {
    pub id: String,
    pub position: Point,
}

impl ObjectPose {
    pub fn new(id: impl Into<String>, position: Point) -> Self {
        Self {
            id: id.into(),
            position,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnvironmentRepr", into = "EnvironmentRepr")]
pub struct Environment {
    label: String,
    objects: Vec<ObjectPose>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvironmentRepr {
    label: String,
    objects: Vec<ObjectPose>,
}

impl TryFrom<EnvironmentRepr> for Environment {
    type Error = Error;

    fn try_from(repr: EnvironmentRepr) -> Result<Self> {
        Environment::new(repr.label, repr.objects)
    }
}

impl From<Environment> for EnvironmentRepr {
    fn from(env: Environment) -> Self {
        EnvironmentRepr {
            label: env.label,
            objects: env.objects,
        }
    }
}

impl Environment {
    pub fn new(label: impl Into<String>, objects: Vec<ObjectPose>) -> Result<Self> {
        let mut seen = HashSet::new();
        for object in &objects {
            if !seen.insert(object.id.as_str()) {
                return Err(Error::DuplicateId(object.id.clone()));
            }
            if !(object.position.x.is_finite() && object.position.y.is_finite()) {
                return Err(Error::NonFinite("object position"));
            }
        }
        Ok(Self {
            label: label.into(),
            objects,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn objects(&self) -> &[ObjectPose] {
        &self.objects
    }

    pub fn position(&self, id: &str) -> Option<Point> {
        self.objects.iter().find(|o| o.id == id).map(|o| o.position)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.position(id).is_some()
    }

    /// Same layout with one object moved.
    pub fn with_moved(&self, id: &str, position: Point) -> Result<Self> {
        if !self.contains(id) {
            return Err(Error::UnknownObject(id.to_string()));
        }
        let objects = self
            .objects
            .iter()
            .map(|o| {
                if o.id == id {
                    ObjectPose::new(id, position)
                } else {
                    o.clone()
                }
            })
            .collect();
        Environment::new(self.label.clone(), objects)
    }
}

/// Displacement of one object between the training and the test layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDisplacement {
    pub object_id: String,
    /// Training position minus test position.
    pub delta: Point,
}

impl ObjectDisplacement {
    pub fn is_zero(&self) -> bool {
        self.delta == Point::zeros()
    }
}

/// `delta_i = o_i - õ_i` for each object, in the training layout's order.
pub fn object_displacements(training: &Environment, test: &Environment) -> Result<Vec<ObjectDisplacement>> {
    if let Some(extra) = test.objects.iter().find(|o| !training.contains(&o.id)) {
        return Err(Error::UnknownObject(extra.id.clone()));
    }
    training
        .objects
        .iter()
        .map(|o| {
            let moved = test
                .position(&o.id)
                .ok_or_else(|| Error::UnknownObject(o.id.clone()))?;
            Ok(ObjectDisplacement {
                object_id: o.id.clone(),
                delta: o.position - moved,
            })
        })
        .collect()
}
