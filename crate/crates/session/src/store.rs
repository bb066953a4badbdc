//! Sessions as append-only event logs: one JSON object per line, replayed on
//! start. A torn last line (no trailing newline) is an uncommitted write and
//! is ignored.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uuscout_core::bandit::{make_policy, Exploration, PolicyKind, TraceStep};
use uuscout_core::oracle::{utility, InteractiveOracle, OracleVerdict, Question, UtilityConfig};
use uuscout_core::{Error, Result};

use crate::config::{OracleMode, SessionConfig};
use crate::pipeline::{partition_summaries, PartitionSummary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceCard {
    pub id: String,
    pub features: Vec<(String, String)>,
    pub predicted_label: String,
}

/// What a session needs after partitioning; the dataset is not read again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub critical_class: String,
    pub classes: Vec<String>,
    pub gamma: f64,
    pub budget: usize,
    pub seed: u64,
    pub policy: PolicyKind,
    pub groups: Vec<Vec<usize>>,
    pub descriptions: Vec<String>,
    pub instances: Vec<InstanceCard>,
    pub costs: Vec<f64>,
    pub partition_report: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created { session_id: String, config: SessionConfig },
    Partitioned { snapshot: Snapshot },
    Step { step: usize, instance_id: String, label: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Partitioned,
    Exploring,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub completed: usize,
    pub budget: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureValue {
    pub name: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionView {
    pub session_id: String,
    pub step: usize,
    pub instance_id: String,
    pub features: Vec<FeatureValue>,
    pub predicted_label: String,
    pub progress: Progress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub phase: Phase,
    pub oracle: OracleMode,
    pub progress: Progress,
    pub pending: Option<QuestionView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session_id: String,
    pub phase: Phase,
    pub progress: Progress,
    pub discovered: usize,
    pub cumulative_utility: f64,
    pub partitions: Vec<PartitionSummary>,
    pub partition_report: String,
    pub trace: Vec<TraceStep>,
}

/// A session being explored, with its log file.
pub struct LiveSession {
    pub id: String,
    pub config: SessionConfig,
    snapshot: Snapshot,
    exploration: Exploration,
    oracle: InteractiveOracle,
    utility: UtilityConfig,
    log: Option<File>,
}

fn append(file: &mut File, event: &Event) -> Result<()> {
    let mut line = serde_json::to_string(event).expect("events serialize");
    line.push('\n');
    file.write_all(line.as_bytes())?;
    file.sync_data()?;
    Ok(())
}

impl LiveSession {
    fn build(id: String, config: SessionConfig, snapshot: Snapshot) -> Result<Self> {
        let costs = snapshot
            .instances
            .iter()
            .zip(&snapshot.costs)
            .map(|(c, &v)| (c.id.clone(), v))
            .collect::<HashMap<_, _>>();
        let oracle = InteractiveOracle::new(snapshot.critical_class.clone(), snapshot.classes.clone(), costs);
        let exploration = Exploration::new(make_policy(snapshot.policy), &snapshot.groups, snapshot.budget, snapshot.seed);
        let utility = UtilityConfig::new(snapshot.gamma, snapshot.critical_class.clone())?;
        let mut s = Self { id, config, snapshot, exploration, oracle, utility, log: None };
        s.advance()?;
        Ok(s)
    }

    /// Starts a new session and writes its first two log records.
    pub fn create(dir: &Path, id: String, config: SessionConfig, snapshot: Snapshot) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = log_path(dir, &id);
        let mut file = OpenOptions::new().create_new(true).append(true).open(&path)?;
        append(&mut file, &Event::Created { session_id: id.clone(), config: config.clone() })?;
        append(&mut file, &Event::Partitioned { snapshot: snapshot.clone() })?;
        let mut s = Self::build(id, config, snapshot)?;
        s.log = Some(file);
        Ok(s)
    }

    /// Rebuilds a session from its log.
    pub fn replay(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let committed = match text.rfind('\n') {
            Some(end) => &text[..=end],
            None => "",
        };
        let mut events = committed.lines().enumerate().map(|(i, line)| {
            serde_json::from_str::<Event>(line).map_err(|e| Error::Parse { line: i as u64 + 1, message: e.to_string() })
        });
        let (id, config) = match events.next().transpose()? {
            Some(Event::Created { session_id, config }) => (session_id, config),
            _ => return Err(Error::Validation(format!("{}: log does not start with a created event", path.display()))),
        };
        let snapshot = match events.next().transpose()? {
            Some(Event::Partitioned { snapshot }) => snapshot,
            _ => return Err(Error::Validation(format!("{}: missing partitioned event", path.display()))),
        };
        let mut s = Self::build(id, config, snapshot)?;
        for event in events {
            match event? {
                Event::Step { step, instance_id, label } => {
                    let pending = s.oracle.pending().map(|q| q.instance_id.clone());
                    if pending.as_deref() != Some(instance_id.as_str()) {
                        return Err(Error::Validation(format!(
                            "{}: step {step} asked {instance_id} but replay asks {pending:?}",
                            path.display()
                        )));
                    }
                    s.apply(step, &label)?;
                }
                other => return Err(Error::Validation(format!("{}: unexpected event {other:?}", path.display()))),
            }
        }
        let file = OpenOptions::new().append(true).open(path)?;
        if committed.len() != text.len() {
            // Drop the torn tail so later appends start on a fresh line.
            file.set_len(committed.len() as u64)?;
        }
        s.log = Some(file);
        Ok(s)
    }

    fn advance(&mut self) -> Result<()> {
        if let Some(q) = self.exploration.next_query() {
            let card = &self.snapshot.instances[q.instance];
            self.oracle.pose(Question {
                step: q.step,
                instance_id: card.id.clone(),
                features: card.features.clone(),
                predicted_label: card.predicted_label.clone(),
            })?;
        }
        Ok(())
    }

    fn apply(&mut self, step: usize, label: &str) -> Result<TraceStep> {
        let verdict: OracleVerdict = self.oracle.answer(step, label)?;
        let u = utility(&verdict, &self.utility);
        let recorded = self.exploration.record(&verdict, u)?.clone();
        self.advance()?;
        Ok(recorded)
    }

    /// Validates, persists, then applies an answer. A wrong step is a
    /// `StaleAnswer`, an unreadable label a `MalformedAnswer`; neither
    /// changes state.
    pub fn submit(&mut self, step: usize, label: &str) -> Result<TraceStep> {
        let expected = self.oracle.pending().map(|q| q.step);
        if expected != Some(step) {
            return Err(Error::StaleAnswer { expected, got: step });
        }
        let resolved = self.oracle.resolve_label(label)?;
        let instance_id = self.oracle.pending().expect("checked above").instance_id.clone();
        if let Some(file) = self.log.as_mut() {
            append(file, &Event::Step { step, instance_id, label: resolved.clone() })?;
        }
        self.apply(step, &resolved)
    }

    pub fn phase(&self) -> Phase {
        if self.exploration.is_done() {
            Phase::Done
        } else if self.exploration.completed_steps() == 0 && self.oracle.pending().is_none() {
            Phase::Partitioned
        } else {
            Phase::Exploring
        }
    }

    pub fn progress(&self) -> Progress {
        Progress { completed: self.exploration.completed_steps(), budget: self.snapshot.budget }
    }

    pub fn question(&self) -> Option<QuestionView> {
        self.oracle.pending().map(|q| QuestionView {
            session_id: self.id.clone(),
            step: q.step,
            instance_id: q.instance_id.clone(),
            features: q.features.iter().map(|(n, v)| FeatureValue { name: n.clone(), value: v.clone() }).collect(),
            predicted_label: q.predicted_label.clone(),
            progress: self.progress(),
        })
    }

    pub fn state(&self) -> SessionState {
        SessionState {
            session_id: self.id.clone(),
            phase: self.phase(),
            oracle: self.config.oracle,
            progress: self.progress(),
            pending: self.question(),
        }
    }

    pub fn report(&self) -> SessionReport {
        let trace = self.exploration.trace();
        SessionReport {
            session_id: self.id.clone(),
            phase: self.phase(),
            progress: self.progress(),
            discovered: trace.discovered(),
            cumulative_utility: trace.cumulative_utility(),
            partitions: partition_summaries(&self.snapshot.descriptions, &self.snapshot.groups, trace),
            partition_report: self.snapshot.partition_report.clone(),
            trace: trace.steps.clone(),
        }
    }

    pub fn snapshot(&self) -> &Snapshot {
        &self.snapshot
    }
}

pub fn log_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.jsonl"))
}

/// Replays every `*.jsonl` log in `dir`, in file-name order.
pub fn load_all(dir: &Path) -> Result<Vec<LiveSession>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths.iter().map(|p| LiveSession::replay(p)).collect()
}
