//! Episode event log, derived metrics and their serialisations.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnosis::{DiagnosisReport, MissingFeatureQuery};
use crate::error::{Error, Result};
use crate::features::{FeatureSet, TrainedFeature};
use crate::kinematics::{JointConfig, Point};
use crate::learning::Detection;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionSource {
    Oracle,
    Drag,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// The human had nothing left to correct.
    Converged,
    /// The correction budget ran out while the human still wanted to correct.
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "origin", rename_all = "snake_case")]
pub enum FeatureOrigin {
    /// Fitted to the human's answers to a query.
    Learned { rmse: f64 },
    /// Copied from an existing feature for a new object.
    Cloned { source_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    Plan {
        waypoints: Vec<JointConfig>,
        end_effector: Vec<Point>,
        cost: f64,
        converged: bool,
        iterations: usize,
        /// Minimum end-effector distance to each test-layout object.
        clearance: BTreeMap<String, f64>,
    },
    Correction {
        waypoint: usize,
        torque: Vec<f64>,
        effort: f64,
        source: CorrectionSource,
    },
    Detection(Detection),
    Diagnosis(DiagnosisReport),
    Alignment {
        feature_id: String,
        object_id: String,
        delta: Point,
        anchor: Point,
    },
    FeatureAdded {
        feature: TrainedFeature,
        weight: f64,
        #[serde(flatten)]
        origin: FeatureOrigin,
    },
    Query {
        query: MissingFeatureQuery,
        answered: usize,
    },
    Recomputed(Detection),
    Update {
        before: Vec<f64>,
        after: Vec<f64>,
        beta: f64,
        explainable: f64,
        step_weight: f64,
        naive: bool,
    },
    Finished {
        outcome: Outcome,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Plan { .. } => "plan",
            Self::Correction { .. } => "correction",
            Self::Detection(_) => "detection",
            Self::Diagnosis(_) => "diagnosis",
            Self::Alignment { .. } => "alignment",
            Self::FeatureAdded { .. } => "feature_added",
            Self::Query { .. } => "query",
            Self::Recomputed(_) => "recomputed",
            Self::Update { .. } => "update",
            Self::Finished { .. } => "finished",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Position in the log, starting at 0.
    pub seq: u64,
    /// Plan-correct-update cycle the event belongs to.
    pub cycle: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectClearance {
    pub object_id: String,
    /// On the first plan.
    pub before: f64,
    /// On the last plan.
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub corrections: usize,
    /// `Σ ‖u_H‖²`.
    pub total_effort: f64,
    pub clearance: Vec<ObjectClearance>,
    pub outcome: Option<Outcome>,
}

impl Metrics {
    pub fn from_events(events: &[Event]) -> Self {
        let mut corrections = 0;
        let mut total_effort = 0.0;
        let mut first: Option<&BTreeMap<String, f64>> = None;
        let mut last: Option<&BTreeMap<String, f64>> = None;
        let mut outcome = None;
        for e in events {
            match &e.kind {
                EventKind::Correction { effort, .. } => {
                    corrections += 1;
                    total_effort += effort;
                }
                EventKind::Plan { clearance, .. } => {
                    first.get_or_insert(clearance);
                    last = Some(clearance);
                }
                EventKind::Finished { outcome: o } => outcome = Some(*o),
                _ => {}
            }
        }
        let clearance = match (first, last) {
            (Some(first), Some(last)) => first
                .iter()
                .map(|(id, before)| ObjectClearance {
                    object_id: id.clone(),
                    before: *before,
                    after: last.get(id).copied().unwrap_or(f64::NAN),
                })
                .collect(),
            _ => Vec::new(),
        };
        Self {
            corrections,
            total_effort,
            clearance,
            outcome,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub events: Vec<Event>,
    pub final_weights: Vec<f64>,
    pub final_features: FeatureSet,
    pub metrics: Metrics,
}

impl EpisodeReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text)?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Scenario(format!(
                "unsupported report schema_version {}",
                report.schema_version
            )));
        }
        Ok(report)
    }

    /// Sequence numbers are contiguous and metrics match the log.
    pub fn is_consistent(&self) -> bool {
        self.events.iter().enumerate().all(|(i, e)| e.seq == i as u64)
            && self.events.windows(2).all(|w| w[0].cycle <= w[1].cycle)
            && Metrics::from_events(&self.events) == self.metrics
    }

    pub fn events_of<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Event> + 'a {
        self.events.iter().filter(move |e| e.kind.name() == name)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        write_metrics_csv(std::slice::from_ref(self), out)
    }
}

pub fn emit_report(report: &EpisodeReport, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, report.to_json()? + "\n")?;
    Ok(())
}

pub fn load_report(path: impl AsRef<Path>) -> Result<EpisodeReport> {
    EpisodeReport::from_json(&std::fs::read_to_string(path)?)
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    scenario: &'a str,
    seed: u64,
    outcome: &'a str,
    corrections: usize,
    total_effort: f64,
    object: &'a str,
    clearance_before: f64,
    clearance_after: f64,
}

/// One row per (report, object).
pub fn write_metrics_csv<W: std::io::Write>(reports: &[EpisodeReport], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for r in reports {
        let outcome = match r.metrics.outcome {
            Some(Outcome::Converged) => "converged",
            Some(Outcome::BudgetExhausted) => "budget_exhausted",
            None => "unfinished",
        };
        for c in &r.metrics.clearance {
            writer.serialize(MetricsRow {
                scenario: &r.scenario,
                seed: r.seed,
                outcome,
                corrections: r.metrics.corrections,
                total_effort: r.metrics.total_effort,
                object: &c.object_id,
                clearance_before: c.before,
                clearance_after: c.after,
            })?;
        }
    }
    writer.flush()?;
    Ok(())
}
