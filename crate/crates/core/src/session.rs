//! An [`Episode`] driven from outside: corrections arrive as workspace drags
//! instead of from the simulated human, and state is exposed as snapshots.

use serde::{Deserialize, Serialize};

use crate::episode::{Episode, Phase};
use crate::error::{Error, Result};
use crate::kinematics::{jacobian, ArmModel, JointConfig, Point};
use crate::report::{CorrectionSource, Event, EventKind, Outcome, REPORT_SCHEMA_VERSION};
use crate::scenario::Scenario;
use crate::trajectory::CorrectionEvent;
use crate::world::Environment;

/// Who answers when the episode waits for a correction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    /// Stepping while awaiting input consults the simulated human.
    #[default]
    Oracle,
    /// Only drags correct; stepping while awaiting input means "no correction".
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionParams {
    pub mode: SessionMode,
    /// Largest torque norm a drag may produce.
    pub max_drag_torque: f64,
}

impl Default for SessionParams {
    fn default() -> Self {
        Self {
            mode: SessionMode::Oracle,
            max_drag_torque: 5.0,
        }
    }
}

/// A cursor drag on one waypoint's end effector, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DragCorrection {
    pub waypoint_index: usize,
    pub drag: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DragOutcome {
    /// False for a zero drag, which leaves the session untouched.
    pub accepted: bool,
    pub correction: CorrectionEvent,
    pub phase: Phase,
}

/// `u = Jᵀ(q)·drag`, scaled down to at most `max_norm`.
pub fn drag_to_torque(model: &ArmModel, q: &JointConfig, drag: &Point, max_norm: f64) -> Result<Vec<f64>> {
    if !(drag.x.is_finite() && drag.y.is_finite()) {
        return Err(Error::NonFinite("drag vector"));
    }
    let u = jacobian(model, q)?.transpose() * drag;
    let norm = u.norm();
    let scale = if norm > max_norm { max_norm / norm } else { 1.0 };
    Ok(u.iter().map(|x| x * scale).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryView {
    pub waypoints: Vec<JointConfig>,
    pub end_effector: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureView {
    pub id: String,
    /// Where the feature currently peaks.
    pub anchor: Point,
    /// Accumulated alignment offset.
    pub offset: Point,
    pub width: f64,
    pub weight: f64,
    pub beta: Option<f64>,
    pub beta_delta: Option<f64>,
}

/// Immutable copy of everything a client needs to draw the session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub schema_version: u32,
    pub scenario: String,
    pub mode: SessionMode,
    #[serde(flatten)]
    pub phase: Phase,
    pub cycle: u64,
    pub corrections: usize,
    pub budget: usize,
    pub arm: ArmModel,
    pub training_env: Environment,
    pub test_env: Environment,
    pub trajectory: Option<TrajectoryView>,
    pub features: Vec<FeatureView>,
    pub weights: Vec<f64>,
    pub beta: f64,
    /// Number of events so far; the next event gets this sequence number.
    pub event_cursor: usize,
}

#[derive(Debug, Clone)]
pub struct Session {
    episode: Episode,
    params: SessionParams,
}

impl Session {
    pub fn new(scenario: Scenario, params: SessionParams) -> Result<Self> {
        if !(params.max_drag_torque.is_finite() && params.max_drag_torque > 0.0) {
            return Err(Error::Scenario("max_drag_torque must be positive".into()));
        }
        Ok(Self {
            episode: Episode::new(scenario)?,
            params,
        })
    }

    pub fn episode(&self) -> &Episode {
        &self.episode
    }

    pub fn phase(&self) -> Phase {
        self.episode.phase()
    }

    pub fn params(&self) -> &SessionParams {
        &self.params
    }

    pub fn events(&self) -> &[Event] {
        self.episode.events()
    }

    pub fn events_since(&self, cursor: usize) -> &[Event] {
        let events = self.episode.events();
        &events[cursor.min(events.len())..]
    }

    /// Advances one phase and returns the events it produced.
    pub fn step(&mut self) -> Result<&[Event]> {
        let cursor = self.episode.events().len();
        match (self.episode.phase(), self.params.mode) {
            (Phase::AwaitingInput, SessionMode::Oracle) => self.episode.oracle_step()?,
            (Phase::AwaitingInput, SessionMode::Live) => self.episode.submit_no_correction()?,
            _ => self.episode.advance()?,
        }
        Ok(self.events_since(cursor))
    }

    pub fn apply_drag(&mut self, drag: &DragCorrection) -> Result<DragOutcome> {
        if self.episode.phase() != Phase::AwaitingInput {
            return Err(Error::IllegalPhase {
                phase: self.episode.phase().name().to_string(),
                action: "accept a drag",
            });
        }
        let traj = self.episode.trajectory().expect("a plan exists while awaiting input");
        let t = drag.waypoint_index;
        if t == 0 || t >= traj.horizon() {
            return Err(Error::IndexOutOfRange {
                index: t,
                min: 1,
                max: traj.horizon() - 1,
            });
        }
        let torque = drag_to_torque(
            self.episode.model(),
            &traj.waypoints()[t],
            &drag.drag,
            self.params.max_drag_torque,
        )?;
        let correction = CorrectionEvent::new(t, torque, self.episode.cycle());
        if correction.is_zero() {
            return Ok(DragOutcome {
                accepted: false,
                correction,
                phase: self.episode.phase(),
            });
        }
        self.episode.submit_correction(correction.clone(), CorrectionSource::Drag)?;
        Ok(DragOutcome {
            accepted: true,
            correction,
            phase: self.episode.phase(),
        })
    }

    /// Feeds a joint torque directly, bypassing the drag mapping.
    pub fn apply_torque(&mut self, correction: CorrectionEvent, source: CorrectionSource) -> Result<()> {
        self.episode.submit_correction(correction, source)
    }

    pub fn snapshot(&self) -> Snapshot {
        let ep = &self.episode;
        let s = ep.scenario();
        let trajectory = ep.trajectory().map(|t| TrajectoryView {
            waypoints: t.waypoints().to_vec(),
            end_effector: t.end_effector_path(&s.arm).expect("planned waypoints are valid"),
        });
        let detection = ep.last_detection();
        let diagnosis = ep.events().iter().rev().find_map(|e| match &e.kind {
            EventKind::Diagnosis(d) => Some(d),
            _ => None,
        });
        let features = ep
            .features()
            .iter()
            .zip(&ep.belief().weights)
            .map(|(f, &weight)| FeatureView {
                id: f.id.clone(),
                anchor: f.peak(),
                offset: f.alignment_offset(),
                width: f.width(),
                weight,
                beta: detection
                    .and_then(|d| d.per_feature.iter().find(|x| x.feature_id == f.id))
                    .map(|x| x.beta),
                beta_delta: diagnosis.and_then(|d| {
                    d.objects
                        .iter()
                        .filter_map(|o| o.feature(&f.id))
                        .map(|x| x.beta_delta)
                        .reduce(f64::max)
                }),
            })
            .collect();
        Snapshot {
            schema_version: REPORT_SCHEMA_VERSION,
            scenario: s.name.clone(),
            mode: self.params.mode,
            phase: ep.phase(),
            cycle: ep.cycle(),
            corrections: ep.corrections(),
            budget: s.budget,
            arm: s.arm.clone(),
            training_env: s.training_env.clone(),
            test_env: s.test_env.clone(),
            trajectory,
            features,
            weights: ep.belief().weights.clone(),
            beta: ep.belief().beta,
            event_cursor: ep.events().len(),
        }
    }

    /// Rebuilds a session by re-applying the corrections recorded in `events`.
    pub fn replay(scenario: Scenario, params: SessionParams, events: &[Event]) -> Result<Self> {
        let mut session = Self::new(scenario, params)?;
        let mut corrections = events.iter().filter_map(|e| match &e.kind {
            EventKind::Correction { waypoint, torque, source, .. } => {
                Some((CorrectionEvent::new(*waypoint, torque.clone(), e.cycle), *source))
            }
            _ => None,
        });
        let outcome = events.iter().rev().find_map(|e| match e.kind {
            EventKind::Finished { outcome } => Some(outcome),
            _ => None,
        });
        let ep = &mut session.episode;
        while !ep.phase().is_done() && ep.events().len() < events.len() {
            if ep.phase() != Phase::AwaitingInput {
                ep.advance()?;
                continue;
            }
            match corrections.next() {
                Some((c, source)) => ep.submit_correction(c, source)?,
                None => match outcome {
                    Some(Outcome::Converged) => ep.submit_no_correction()?,
                    Some(Outcome::BudgetExhausted) => ep.exhaust_budget()?,
                    None => break,
                },
            }
        }
        Ok(session)
    }
}
