use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use uuscout_core::bandit::{make_policy, run_policy, ExplorationTrace};
use uuscout_core::corpus::{
    build_search_space, discretize, load_dataset, load_training_features, Dataset, DatasetSchema, SearchSpace, Value,
};
use uuscout_core::dsp::{greedy_partition, tune_lambda, LambdaTuning, LambdaWeights, Partitioning};
use uuscout_core::oracle::{GroundTruth, SimulatedOracle, UtilityConfig};
use uuscout_core::patterns::{mine_patterns, MinerConfig, PatternSet};
use uuscout_core::{Error, Result};

use crate::config::SessionConfig;

/// Ingested data: the raw dataset (for truth and costs) and its discretized copy.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub raw: Dataset,
    pub discretized: Dataset,
    pub training: Option<Vec<Vec<Value>>>,
    pub warnings: Vec<String>,
}

pub fn load_inputs(config: &SessionConfig) -> Result<Inputs> {
    config.validate()?;
    let schema = DatasetSchema::load(&config.schema)?;
    let raw = load_dataset(&config.dataset, &schema)?;
    let training = match &config.training {
        Some(p) => Some(load_training_features(p, &schema)?),
        None => None,
    };
    inputs_from(config, raw, training)
}

pub fn inputs_from(config: &SessionConfig, raw: Dataset, training: Option<Vec<Vec<Value>>>) -> Result<Inputs> {
    config.validate()?;
    if !raw.schema().has_class(&config.critical_class) {
        return Err(Error::Validation(format!("critical class {:?} not in schema", config.critical_class)));
    }
    let d = discretize(&raw, config.bins)?;
    Ok(Inputs { raw, discretized: d.dataset, training, warnings: d.warnings })
}

/// Search space, patterns, tuned weights and the partitioning.
#[derive(Debug, Clone)]
pub struct Partitioned {
    pub space: SearchSpace,
    pub patterns: PatternSet,
    pub tuning: Option<LambdaTuning>,
    pub partitioning: Partitioning,
    pub warnings: Vec<String>,
}

impl Partitioned {
    pub fn groups(&self) -> Vec<Vec<usize>> {
        self.partitioning.member_groups()
    }

    pub fn descriptions(&self) -> Vec<String> {
        self.partitioning.partitions.iter().map(|p| p.pattern.describe(&self.space)).collect()
    }
}

fn miner_config(config: &SessionConfig, n: usize) -> MinerConfig {
    let mut m = MinerConfig::default_for(n);
    if let Some(s) = config.min_support {
        m.min_support = s.min(n.max(1));
    }
    m.max_length = config.max_length;
    m
}

/// Mine, tune and partition an already built search space.
pub fn partition_space(config: &SessionConfig, space: SearchSpace) -> Result<Partitioned> {
    let mut warnings = Vec::new();
    let (lambda, tuning) = match config.lambda {
        Some(l) => (LambdaWeights::new(l)?, None),
        None => {
            let validation = space.sample(config.validation_fraction, config.seed);
            let tuning = match &validation {
                Some(v) => {
                    let set = mine_patterns(v, miner_config(config, v.len()))?;
                    tune_lambda(Some(v), &set, &config.lambda_grid)?
                }
                None => tune_lambda(None, &PatternSet::default(), &config.lambda_grid)?,
            };
            warnings.extend(tuning.warnings.iter().cloned());
            (tuning.lambda, Some(tuning))
        }
    };
    let patterns = mine_patterns(&space, miner_config(config, space.len()))?;
    warnings.extend(patterns.warnings.iter().cloned());
    let partitioning = greedy_partition(&space, &patterns, lambda)?;
    Ok(Partitioned { space, patterns, tuning, partitioning, warnings })
}

pub fn partition_inputs(config: &SessionConfig, inputs: &Inputs) -> Result<Partitioned> {
    let space = build_search_space(&inputs.discretized, &config.critical_class, config.tau)?;
    let mut p = partition_space(config, space)?;
    p.warnings.splice(0..0, inputs.warnings.iter().cloned());
    Ok(p)
}

pub fn ground_truth(config: &SessionConfig, inputs: &Inputs) -> Result<Arc<GroundTruth>> {
    Ok(Arc::new(GroundTruth::from_dataset(&inputs.raw, &config.critical_class, &config.cost_model())?))
}

pub fn utility_config(config: &SessionConfig) -> Result<UtilityConfig> {
    UtilityConfig::new(config.gamma, config.critical_class.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub arm: usize,
    pub description: String,
    pub members: usize,
    pub queried: usize,
    pub discovered: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub policy: String,
    pub seed: u64,
    pub search_space: usize,
    pub budget: usize,
    pub steps: usize,
    pub discovered: usize,
    pub cumulative_utility: f64,
    pub exhausted: bool,
    pub lambda: [f64; 5],
    pub objective: f64,
    pub partitions: Vec<PartitionSummary>,
    pub warnings: Vec<String>,
}

pub fn partition_summaries(descriptions: &[String], groups: &[Vec<usize>], trace: &ExplorationTrace) -> Vec<PartitionSummary> {
    let mut queried: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for s in &trace.steps {
        if let Some(a) = s.arm {
            let e = queried.entry(a).or_default();
            e.0 += 1;
            e.1 += s.is_unknown_unknown as usize;
        }
    }
    descriptions
        .iter()
        .zip(groups)
        .enumerate()
        .map(|(arm, (d, g))| {
            let (q, u) = queried.get(&arm).copied().unwrap_or_default();
            PartitionSummary { arm, description: d.clone(), members: g.len(), queried: q, discovered: u }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub partitioned: Partitioned,
    pub trace: ExplorationTrace,
    pub summary: Summary,
}

impl RunOutput {
    pub fn partition_report(&self) -> String {
        self.partitioned.partitioning.report(&self.partitioned.space)
    }
}

/// The whole pipeline against the simulated oracle.
pub fn run_simulated(config: &SessionConfig, inputs: &Inputs) -> Result<RunOutput> {
    let partitioned = partition_inputs(config, inputs)?;
    let truth = ground_truth(config, inputs)?;
    truth.check_covers(&partitioned.space)?;
    let budget = config.budget_for(partitioned.space.len());
    let groups = partitioned.groups();
    let mut oracle = SimulatedOracle::new(truth, Some(budget));
    let trace = run_policy(
        make_policy(config.policy),
        &groups,
        &partitioned.space,
        &mut oracle,
        &utility_config(config)?,
        budget,
        config.seed,
    )?;
    let summary = Summary {
        policy: config.policy.to_string(),
        seed: config.seed,
        search_space: partitioned.space.len(),
        budget,
        steps: trace.len(),
        discovered: trace.discovered(),
        cumulative_utility: trace.cumulative_utility(),
        exhausted: trace.exhausted,
        lambda: partitioned.partitioning.lambda.0,
        objective: partitioned.partitioning.objective_value,
        partitions: partition_summaries(&partitioned.descriptions(), &groups, &trace),
        warnings: partitioned.warnings.clone(),
    };
    Ok(RunOutput { partitioned, trace, summary })
}

pub const PARTITIONS_FILE: &str = "partitions.tsv";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

/// Writes files via `.partial` siblings renamed at the end; on failure the
/// partial files are removed.
pub fn write_files(dir: &Path, files: &[(&str, String)]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let partial: Vec<PathBuf> = files.iter().map(|(name, _)| dir.join(format!("{name}.partial"))).collect();
    let written = (|| -> std::io::Result<Vec<PathBuf>> {
        for ((_, body), p) in files.iter().zip(&partial) {
            fs::write(p, body)?;
        }
        let mut done = Vec::new();
        for ((name, _), p) in files.iter().zip(&partial) {
            let target = dir.join(name);
            fs::rename(p, &target)?;
            done.push(target);
        }
        Ok(done)
    })();
    match written {
        Ok(done) => Ok(done),
        Err(e) => {
            for p in &partial {
                let _ = fs::remove_file(p);
            }
            Err(e.into())
        }
    }
}

pub fn write_run(dir: &Path, out: &RunOutput) -> Result<Vec<PathBuf>> {
    let summary = serde_json::to_string_pretty(&out.summary).expect("summary serializes") + "\n";
    write_files(
        dir,
        &[(PARTITIONS_FILE, out.partition_report()), (TRACE_FILE, out.trace.to_jsonl()), (SUMMARY_FILE, summary)],
    )
}
