//! The plan → correct → detect → diagnose → update loop as a state machine.
//!
//! [`Episode`] owns the robot's belief and features and advances one phase
//! per call, so the same machine can be driven by the simulated human
//! ([`run_episode`]) or by live input from the service.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diagnosis::{
    diagnose_and_correct, diagnose_unknown_object, learn_missing_feature, new_object_hypotheses, Diagnosis,
    DiagnosisContext, Observation,
};
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::kinematics::ArmModel;
use crate::learning::{confidence_update, detect, naive_update, Belief, Detection, LearnerParams};
use crate::oracle::TrueHuman;
use crate::planner::plan;
use crate::report::{
    CorrectionSource, EpisodeReport, Event, EventKind, FeatureOrigin, Metrics, Outcome, REPORT_SCHEMA_VERSION,
};
use crate::scenario::Scenario;
use crate::trajectory::{deform, feature_sum, CorrectionEvent, DeformationShape, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", content = "outcome", rename_all = "snake_case")]
pub enum Phase {
    Planning,
    AwaitingInput,
    Diagnosing,
    Updating,
    Done(Outcome),
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Planning => "planning",
            Self::AwaitingInput => "awaiting_input",
            Self::Diagnosing => "diagnosing",
            Self::Updating => "updating",
            Self::Done(_) => "done",
        }
    }

    pub fn is_done(&self) -> bool {
        matches!(self, Self::Done(_))
    }
}

/// Overrides applied on top of a scenario, mirroring the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeOptions {
    pub seed: Option<u64>,
    pub policy: Option<crate::diagnosis::AlignmentPolicy>,
    pub force_naive_update: bool,
    pub budget: Option<usize>,
}

impl EpisodeOptions {
    pub fn apply(&self, scenario: &Scenario) -> Scenario {
        let mut s = scenario.clone();
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(policy) = self.policy {
            s.diagnosis.policy = policy;
        }
        s.force_naive_update |= self.force_naive_update;
        if let Some(budget) = self.budget {
            s.budget = budget;
        }
        s
    }
}

/// The correction currently being processed.
#[derive(Debug, Clone, PartialEq)]
struct Pending {
    correction: CorrectionEvent,
    original: Trajectory,
    deformed: Trajectory,
    detection: Detection,
}

#[derive(Debug, Clone)]
pub struct Episode {
    scenario: Scenario,
    shape: DeformationShape,
    features: FeatureSet,
    belief: Belief,
    trajectory: Option<Trajectory>,
    phase: Phase,
    cycle: u64,
    corrections: usize,
    events: Vec<Event>,
    human: TrueHuman,
    pending: Option<Pending>,
}

impl Episode {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let shape = scenario.shape()?;
        let features = scenario.feature_set()?;
        let belief = Belief::new(scenario.initial_weights.clone());
        let human = TrueHuman::new(scenario.human.clone());
        Ok(Self {
            scenario,
            shape,
            features,
            belief,
            trajectory: None,
            phase: Phase::Planning,
            cycle: 0,
            corrections: 0,
            events: Vec::new(),
            human,
            pending: None,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn model(&self) -> &ArmModel {
        &self.scenario.arm
    }

    pub fn shape(&self) -> &DeformationShape {
        &self.shape
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn features(&self) -> &FeatureSet {
        &self.features
    }

    pub fn belief(&self) -> &Belief {
        &self.belief
    }

    pub fn trajectory(&self) -> Option<&Trajectory> {
        self.trajectory.as_ref()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn corrections(&self) -> usize {
        self.corrections
    }

    /// Whether the correction budget is used up.
    pub fn budget_spent(&self) -> bool {
        self.corrections >= self.scenario.budget
    }

    /// Last detection (or post-diagnosis recomputation) in the log.
    pub fn last_detection(&self) -> Option<&Detection> {
        self.events.iter().rev().find_map(|e| match &e.kind {
            EventKind::Detection(d) | EventKind::Recomputed(d) => Some(d),
            _ => None,
        })
    }

    fn push(&mut self, kind: EventKind) {
        tracing::debug!(cycle = self.cycle, event = kind.name(), "episode event");
        self.events.push(Event {
            seq: self.events.len() as u64,
            cycle: self.cycle,
            kind,
        });
    }

    fn illegal(&self, action: &'static str) -> Error {
        Error::IllegalPhase {
            phase: self.phase.name().to_string(),
            action,
        }
    }

    /// Runs the automatic phase (planning, diagnosing or updating).
    pub fn advance(&mut self) -> Result<()> {
        match self.phase {
            Phase::Planning => self.replan(),
            Phase::Diagnosing => self.diagnose(),
            Phase::Updating => self.update(),
            Phase::AwaitingInput | Phase::Done(_) => Err(self.illegal("advance")),
        }
    }

    fn replan(&mut self) -> Result<()> {
        let s = &self.scenario;
        let outcome = plan(
            &s.arm,
            &self.features,
            &self.belief.weights,
            &s.start,
            &s.goal,
            &s.planner,
            s.seed,
        )?;
        let traj = outcome.trajectory;
        let mut clearance = BTreeMap::new();
        for o in s.test_env.objects() {
            clearance.insert(o.id.clone(), traj.clearance(&s.arm, &o.position)?);
        }
        let end_effector = traj.end_effector_path(&s.arm)?;
        self.push(EventKind::Plan {
            waypoints: traj.waypoints().to_vec(),
            end_effector,
            cost: outcome.cost,
            converged: outcome.converged,
            iterations: outcome.iterations,
            clearance,
        });
        self.trajectory = Some(traj);
        self.phase = Phase::AwaitingInput;
        Ok(())
    }

    /// Feeds a human correction to the robot.
    pub fn submit_correction(&mut self, correction: CorrectionEvent, source: CorrectionSource) -> Result<()> {
        if self.phase != Phase::AwaitingInput {
            return Err(self.illegal("accept a correction"));
        }
        let original = self.trajectory.clone().expect("a plan exists while awaiting input");
        let correction = CorrectionEvent {
            step: self.cycle,
            ..correction
        };
        let deformed = deform(&original, &correction, &self.shape)?;
        if self.budget_spent() {
            return self.finish(Outcome::BudgetExhausted);
        }
        self.corrections += 1;
        self.push(EventKind::Correction {
            waypoint: correction.waypoint,
            torque: correction.torque.clone(),
            effort: correction.effort(),
            source,
        });
        let s = &self.scenario;
        let detection = detect(
            &original,
            &deformed,
            &correction,
            &self.features,
            &s.arm,
            &self.shape,
            &s.learner,
            &s.solver,
        )?;
        self.push(EventKind::Detection(detection.clone()));
        let misaligned = detection.misaligned && !self.scenario.force_naive_update;
        self.pending = Some(Pending {
            correction,
            original,
            deformed,
            detection,
        });
        self.phase = if misaligned { Phase::Diagnosing } else { Phase::Updating };
        Ok(())
    }

    /// The human has nothing to correct on the current plan.
    pub fn submit_no_correction(&mut self) -> Result<()> {
        if self.phase != Phase::AwaitingInput {
            return Err(self.illegal("accept the absence of a correction"));
        }
        self.finish(Outcome::Converged)
    }

    /// Ends the episode because the human still wants to correct but the
    /// budget is used up.
    pub fn exhaust_budget(&mut self) -> Result<()> {
        if self.phase != Phase::AwaitingInput || !self.budget_spent() {
            return Err(self.illegal("end on an exhausted budget"));
        }
        self.finish(Outcome::BudgetExhausted)
    }

    fn finish(&mut self, outcome: Outcome) -> Result<()> {
        self.push(EventKind::Finished { outcome });
        self.phase = Phase::Done(outcome);
        Ok(())
    }

    fn diagnose(&mut self) -> Result<()> {
        let pending = self.pending.clone().expect("a correction is pending while diagnosing");
        let s = &self.scenario;
        let ctx = DiagnosisContext {
            model: &s.arm,
            shape: &self.shape,
            learner: &s.learner,
            solver: &s.solver,
            params: &s.diagnosis,
        };
        let obs = Observation {
            original: &pending.original,
            correction: &pending.correction,
            deformed: &pending.deformed,
        };
        let hypotheses = new_object_hypotheses(&s.training_env, &s.test_env);
        let Diagnosis {
            features,
            report,
            query,
        } = if s.new_object && !hypotheses.is_empty() {
            diagnose_unknown_object(&obs, &self.features, &hypotheses, &ctx)?
        } else {
            diagnose_and_correct(&obs, &self.features, &s.training_env, &s.test_env, &ctx)?
        };
        let before = self.features.clone();
        self.push(EventKind::Diagnosis(report.clone()));

        let mut weights = self.belief.weights.clone();
        for id in &report.aligned_feature_ids {
            let f = features.get(features.index_of(id).expect("aligned feature exists")).expect("index");
            let old = before.get(before.index_of(id).expect("aligned feature existed")).expect("index");
            let object = report
                .objects
                .iter()
                .find(|o| o.feature(id).is_some_and(|d| d.verdict == crate::diagnosis::Verdict::ShiftedWithObject))
                .and_then(|o| o.object_id.clone())
                .unwrap_or_default();
            self.push(EventKind::Alignment {
                feature_id: id.clone(),
                object_id: object,
                delta: f.alignment_offset() - old.alignment_offset(),
                anchor: f.peak(),
            });
        }
        for c in &report.cloned_features {
            let source = before.index_of(&c.source_id).expect("clone source exists");
            let weight = weights[source];
            weights.push(weight);
            let feature = features.get(features.index_of(&c.new_id).expect("clone exists")).expect("index").clone();
            self.push(EventKind::FeatureAdded {
                feature,
                weight,
                origin: FeatureOrigin::Cloned {
                    source_id: c.source_id.clone(),
                },
            });
        }
        let mut features = features;
        if let Some(query) = query {
            let samples = self.human.answer_feature_query(&query, &self.scenario.test_env)?;
            self.push(EventKind::Query {
                query: query.clone(),
                answered: samples.len(),
            });
            let id = features.fresh_id("learned");
            match learn_missing_feature(&query, &samples, id, self.scenario.test_env.clone()) {
                Ok(learned) => {
                    features = features.with_appended(learned.feature.clone())?;
                    weights.push(0.0);
                    self.push(EventKind::FeatureAdded {
                        feature: learned.feature,
                        weight: 0.0,
                        origin: FeatureOrigin::Learned { rmse: learned.rmse },
                    });
                }
                Err(e) => tracing::warn!(error = %e, "could not learn the missing feature"),
            }
        }
        self.features = features;
        self.belief.weights = weights;

        let s = &self.scenario;
        let recomputed = detect(
            &pending.original,
            &pending.deformed,
            &pending.correction,
            &self.features,
            &s.arm,
            &self.shape,
            &s.learner,
            &s.solver,
        )?;
        self.push(EventKind::Recomputed(recomputed.clone()));
        self.pending = Some(Pending {
            detection: recomputed,
            ..pending
        });
        self.phase = Phase::Updating;
        Ok(())
    }

    fn update(&mut self) -> Result<()> {
        let pending = self.pending.take().expect("a correction is pending while updating");
        let s = &self.scenario;
        let phi_r = feature_sum(&pending.original, &self.features, &s.arm)?;
        let phi_h = feature_sum(&pending.deformed, &self.features, &s.arm)?;
        let before = self.belief.weights.clone();
        let beta = pending.detection.beta;
        let (after, explainable, step_weight) = if s.force_naive_update {
            (naive_update(&before, &phi_h, &phi_r, s.learner.learning_rate), 1.0, 1.0)
        } else {
            let k = s.learner.action_dim_for(s.arm.dof());
            let out = confidence_update(&before, &phi_h, &phi_r, beta, k, &s.learner)?;
            (out.weights, out.explainable, out.step_weight)
        };
        self.belief = Belief {
            weights: after.clone(),
            beta,
            explainable,
        };
        self.push(EventKind::Update {
            before,
            after,
            beta,
            explainable,
            step_weight,
            naive: s.force_naive_update,
        });
        self.cycle += 1;
        self.phase = Phase::Planning;
        Ok(())
    }

    /// Lets the simulated human respond to the current plan.
    pub fn oracle_step(&mut self) -> Result<()> {
        if self.phase != Phase::AwaitingInput {
            return Err(self.illegal("consult the simulated human"));
        }
        let traj = self.trajectory.clone().expect("a plan exists while awaiting input");
        let s = &self.scenario;
        match self.human.maybe_correct(&traj, &s.test_env, &s.arm, &self.shape, self.cycle)? {
            Some(c) => self.submit_correction(c, CorrectionSource::Oracle),
            None => self.submit_no_correction(),
        }
    }

    pub fn report(&self) -> EpisodeReport {
        EpisodeReport {
            schema_version: REPORT_SCHEMA_VERSION,
            scenario: self.scenario.name.clone(),
            seed: self.scenario.seed,
            events: self.events.clone(),
            final_weights: self.belief.weights.clone(),
            final_features: self.features.clone(),
            metrics: Metrics::from_events(&self.events),
        }
    }

    /// The scenario this episode ends in, for a follow-up episode.
    pub fn carry_over(&self) -> Result<Scenario> {
        self.scenario.carry_over(&self.features, &self.belief.weights)
    }

    pub fn learner(&self) -> &LearnerParams {
        &self.scenario.learner
    }
}

/// Runs a whole episode against the scenario's simulated human.
pub fn run_episode(scenario: &Scenario) -> Result<EpisodeReport> {
    let mut episode = Episode::new(scenario.clone())?;
    run_to_completion(&mut episode)?;
    Ok(episode.report())
}

pub fn run_to_completion(episode: &mut Episode) -> Result<()> {
    while !episode.phase().is_done() {
        match episode.phase() {
            Phase::AwaitingInput => episode.oracle_step()?,
            _ => episode.advance()?,
        }
    }
    Ok(())
}
