//! Evaluation and generator commands behind the CLI, returning their reports
//! as text.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uuscout_core::bandit::{make_policy, PolicyKind};
use uuscout_core::corpus::write_training_features;
use uuscout_core::eval::synth::{inject_bias, skewed_benchmark, BiasConfig, SkewedConfig, CRITICAL_CLASS};
use uuscout_core::eval::{
    cumulative_regret, end_to_end_baseline, entropy, kmeans_partitions, random_reassignment_entropy, regret_table,
    BaselineKind, Benchmark, EntropyReport, KMeansKind, RegretCurve,
};
use uuscout_core::oracle::SimulatedOracle;
use uuscout_core::{Error, Result};

use crate::config::SessionConfig;
use crate::pipeline::{ground_truth, partition_inputs, utility_config, Inputs, Partitioned};

pub const DEFAULT_TRIALS: usize = 50;

/// DSP entropy next to the random-reassignment bound and the k-means
/// baselines with the same number of groups.
pub fn eval_entropy(config: &SessionConfig, inputs: &Inputs, trials: usize) -> Result<EntropyReport> {
    let p = partition_inputs(config, inputs)?;
    entropy_report(config, inputs, &p, trials)
}

pub fn entropy_report(config: &SessionConfig, inputs: &Inputs, p: &Partitioned, trials: usize) -> Result<EntropyReport> {
    let truth = ground_truth(config, inputs)?;
    let (flags, _) = truth.flags_and_costs(&p.space)?;
    let groups = p.groups();
    let mut report = entropy(&groups, &flags);
    report
        .baseline_entropies
        .insert("random_reassignment".into(), random_reassignment_entropy(&groups, &flags, trials, config.seed));
    for kind in KMeansKind::ALL {
        let g = kmeans_partitions(&p.space, kind, groups.len(), config.seed)?;
        report.baseline_entropies.insert(kind.name().into(), entropy(&g, &flags).entropy);
    }
    Ok(report)
}

pub fn entropy_table(report: &EntropyReport) -> String {
    let mut out = String::from("scheme\tentropy\n");
    out.push_str(&format!("dsp\t{:.6}\n", report.entropy));
    for (name, h) in &report.baseline_entropies {
        out.push_str(&format!("{name}\t{h:.6}\n"));
    }
    out
}

/// Regret of each policy on the DSP partitioning against the optimal policy
/// on the same partitioning, over `runs` matched seeds.
pub fn eval_regret(
    config: &SessionConfig,
    inputs: &Inputs,
    policies: &[PolicyKind],
    runs: usize,
) -> Result<Vec<(String, RegretCurve)>> {
    let p = partition_inputs(config, inputs)?;
    let groups = p.groups();
    let bench = Benchmark {
        space: &p.space,
        groups: &groups,
        truth: ground_truth(config, inputs)?,
        utility: utility_config(config)?,
        budget: config.budget_for(p.space.len()),
    };
    regret_curves(&bench, policies, runs, config.seed)
}

pub fn regret_curves(
    bench: &Benchmark<'_>,
    policies: &[PolicyKind],
    runs: usize,
    base_seed: u64,
) -> Result<Vec<(String, RegretCurve)>> {
    if runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    let optimal = bench.optimal_policy()?;
    let optimal_runs = bench.run_many(|| Box::new(optimal.clone()), runs, base_seed)?;
    policies
        .iter()
        .map(|&kind| {
            let traces = bench.run_many(|| make_policy(kind), runs, base_seed)?;
            Ok((kind.to_string(), cumulative_regret(&traces, &optimal_runs)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub final_regret: f64,
    pub mean_discovered: f64,
}

/// The configured policy on the DSP partitioning against the four
/// partition-free baselines. Regret is measured against the optimal policy
/// on the DSP partitioning; the ordering does not depend on that reference.
pub fn eval_baselines(config: &SessionConfig, inputs: &Inputs, runs: usize) -> Result<Vec<MethodResult>> {
    if runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    let p = partition_inputs(config, inputs)?;
    let groups = p.groups();
    let truth = ground_truth(config, inputs)?;
    let utility = utility_config(config)?;
    let budget = config.budget_for(p.space.len());
    let bench = Benchmark { space: &p.space, groups: &groups, truth: truth.clone(), utility: utility.clone(), budget };
    let optimal = bench.optimal_policy()?;
    let optimal_runs = bench.run_many(|| Box::new(optimal.clone()), runs, config.seed)?;
    let mean_found = |t: &[uuscout_core::bandit::ExplorationTrace]| {
        t.iter().map(|t| t.discovered() as f64).sum::<f64>() / t.len() as f64
    };
    let mut out = Vec::new();
    let dsp = bench.run_many(|| make_policy(config.policy), runs, config.seed)?;
    out.push(MethodResult {
        method: format!("dsp+{}", config.policy),
        final_regret: cumulative_regret(&dsp, &optimal_runs)?.final_regret(),
        mean_discovered: mean_found(&dsp),
    });
    for kind in BaselineKind::ALL {
        let traces = (0..runs as u64)
            .map(|r| {
                let mut oracle = SimulatedOracle::new(truth.clone(), Some(budget));
                end_to_end_baseline(kind, &p.space, inputs.training.as_deref(), &mut oracle, &utility, budget, config.seed + r)
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(MethodResult {
            method: kind.name().into(),
            final_regret: cumulative_regret(&traces, &optimal_runs)?.final_regret(),
            mean_discovered: mean_found(&traces),
        });
    }
    Ok(out)
}

pub fn baselines_table(results: &[MethodResult]) -> String {
    let mut out = String::from("method\tfinal_regret\tmean_discovered\n");
    for r in results {
        out.push_str(&format!("{}\t{:.6}\t{:.3}\n", r.method, r.final_regret, r.mean_discovered));
    }
    out
}

pub fn parse_policies(list: &str) -> Result<Vec<PolicyKind>> {
    list.split(',').map(|s| s.trim().parse::<PolicyKind>()).collect()
}

pub fn regret_report(curves: &[(String, RegretCurve)]) -> String {
    regret_table(curves)
}

/// Reads a regret table written by `regret_report` back into curves.
pub fn parse_regret_table(text: &str) -> Result<Vec<(String, RegretCurve)>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse { line: 1, message: "empty table".into() })?;
    let names: Vec<String> = header.split('\t').skip(1).map(str::to_string).collect();
    let mut curves: Vec<RegretCurve> =
        names.iter().map(|_| RegretCurve { steps: Vec::new(), mean_cumulative_regret: Vec::new(), run_count: 0 }).collect();
    for (i, line) in lines.enumerate() {
        let mut cells = line.split('\t');
        let parse_err = |m: String| Error::Parse { line: i as u64 + 2, message: m };
        let step: usize = cells
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err("bad step".into()))?;
        for (c, cell) in curves.iter_mut().zip(cells) {
            if cell.is_empty() {
                continue;
            }
            let v: f64 = cell.parse().map_err(|e| parse_err(format!("{e}")))?;
            c.steps.push(step);
            c.mean_cumulative_regret.push(v);
        }
    }
    Ok(names.into_iter().zip(curves).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Bias,
    Skewed,
}

impl std::str::FromStr for GeneratorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bias" => Ok(Self::Bias),
            "skewed" => Ok(Self::Skewed),
            _ => Err(Error::Config(format!("unknown generator `{s}` (bias | skewed)"))),
        }
    }
}

/// Writes schema.toml, test.csv, train.csv and a ready-to-run config.toml.
pub fn generate(kind: GeneratorKind, seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let (schema, test, training, critical) = match kind {
        GeneratorKind::Bias => {
            let d = inject_bias(&BiasConfig::cats_and_dogs(200), seed)?;
            (d.schema, d.test, d.training, "cat".to_string())
        }
        GeneratorKind::Skewed => {
            let b = skewed_benchmark(&SkewedConfig::default(), seed)?;
            (b.schema, b.test, b.training, CRITICAL_CLASS.to_string())
        }
    };
    let paths = ["schema.toml", "test.csv", "train.csv", "config.toml"].map(|n| dir.join(n));
    std::fs::write(&paths[0], schema.to_toml_string())?;
    test.write_csv(BufWriter::new(File::create(&paths[1])?))?;
    write_training_features(BufWriter::new(File::create(&paths[2])?), &schema, &training)?;
    let config = SessionConfig {
        dataset: "test.csv".into(),
        schema: "schema.toml".into(),
        training: Some("train.csv".into()),
        critical_class: critical,
        seed,
        ..SessionConfig::default()
    };
    std::fs::write(&paths[3], config.to_toml_string())?;
    Ok(paths.to_vec())
}
