//! Evaluation harness: how concentrated the discovered mistakes are across
//! partitions (entropy), how much utility a policy leaves on the table against
//! the oracle-optimal policy (regret), and end-to-end baselines.

mod baselines;
mod kmeans;
pub mod synth;

pub use baselines::{baseline_ranking, end_to_end_baseline, BaselineKind};
pub use kmeans::{kmeans, kmeans_partitions, KMeansKind, KMEANS_RESTARTS};

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandit::{argmax_lowest, run_policy, ArmState, ExplorationTrace, Policy};
use crate::corpus::SearchSpace;
use crate::error::{Error, Result};
use crate::oracle::{GroundTruth, SimulatedOracle, UtilityConfig};

/// Paper default number of Monte-Carlo runs.
pub const DEFAULT_RUNS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub per_partition_uu_counts: Vec<usize>,
    pub entropy: f64,
    /// No unknown unknowns at all; entropy is reported as 0.
    pub empty: bool,
    pub baseline_entropies: BTreeMap<String, f64>,
}

/// Shannon entropy (bits) of the distribution of counts; zero counts add nothing.
pub fn entropy_of_counts(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

fn uu_counts(groups: &[Vec<usize>], flags: &[bool]) -> Vec<usize> {
    groups
        .iter()
        .map(|g| g.iter().filter(|&&i| flags[i]).count())
        .collect()
}

/// `flags[i]` says whether search-space member `i` is an unknown unknown.
pub fn entropy(groups: &[Vec<usize>], flags: &[bool]) -> EntropyReport {
    let counts = uu_counts(groups, flags);
    EntropyReport {
        entropy: entropy_of_counts(&counts),
        empty: counts.iter().all(|&c| c == 0),
        per_partition_uu_counts: counts,
        baseline_entropies: BTreeMap::new(),
    }
}

/// Mean entropy over random reassignments of all members that keep the
/// number of groups and every group's size.
pub fn random_reassignment_entropy(groups: &[Vec<usize>], flags: &[bool], trials: usize, seed: u64) -> f64 {
    let mut pool: Vec<usize> = groups.iter().flatten().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trials = trials.max(1);
    let mut total = 0.0;
    for _ in 0..trials {
        pool.shuffle(&mut rng);
        let mut counts = Vec::with_capacity(groups.len());
        let mut offset = 0;
        for g in groups {
            counts.push(pool[offset..offset + g.len()].iter().filter(|&&i| flags[i]).count());
            offset += g.len();
        }
        total += entropy_of_counts(&counts);
    }
    total / trials as f64
}

/// Plays the live arm with the highest exact expected one-step utility,
/// `remaining UU share - gamma * mean remaining cost`. Needs ground truth.
#[derive(Debug, Clone)]
pub struct OptimalPolicy {
    flags: Arc<Vec<bool>>,
    costs: Arc<Vec<f64>>,
    gamma: f64,
}

impl OptimalPolicy {
    pub fn new(flags: Arc<Vec<bool>>, costs: Arc<Vec<f64>>, gamma: f64) -> Self {
        Self { flags, costs, gamma }
    }

    pub fn from_truth(truth: &GroundTruth, space: &SearchSpace, gamma: f64) -> Result<Self> {
        let (flags, costs) = truth.flags_and_costs(space)?;
        Ok(Self::new(Arc::new(flags), Arc::new(costs), gamma))
    }

    pub fn expected_utility(&self, arm: &ArmState) -> f64 {
        let rem = arm.remaining();
        let n = rem.len() as f64;
        let uu = rem.iter().filter(|&&i| self.flags[i]).count() as f64;
        let cost: f64 = rem.iter().map(|&i| self.costs[i]).sum();
        uu / n - self.gamma * cost / n
    }
}

impl Policy for OptimalPolicy {
    fn name(&self) -> String {
        "optimal".into()
    }

    fn choose(&mut self, arms: &[ArmState], _t: usize, _rng: &mut ChaCha8Rng) -> Option<usize> {
        argmax_lowest(
            arms.iter()
                .enumerate()
                .filter(|(_, a)| !a.is_exhausted())
                .map(|(i, a)| (i, self.expected_utility(a))),
        )
    }
}

/// Everything needed to run a policy against simulated ground truth.
#[derive(Clone)]
pub struct Benchmark<'a> {
    pub space: &'a SearchSpace,
    pub groups: &'a [Vec<usize>],
    pub truth: Arc<GroundTruth>,
    pub utility: UtilityConfig,
    pub budget: usize,
}

impl Benchmark<'_> {
    pub fn run(&self, policy: Box<dyn Policy>, seed: u64) -> Result<ExplorationTrace> {
        let mut oracle = SimulatedOracle::new(self.truth.clone(), Some(self.budget));
        run_policy(policy, self.groups, self.space, &mut oracle, &self.utility, self.budget, seed)
    }

    /// `runs` independent runs with seeds `base_seed..base_seed + runs`.
    pub fn run_many<F>(&self, make: F, runs: usize, base_seed: u64) -> Result<Vec<ExplorationTrace>>
    where
        F: Fn() -> Box<dyn Policy> + Sync,
    {
        (0..runs as u64)
            .into_par_iter()
            .map(|r| self.run(make(), base_seed + r))
            .collect()
    }

    pub fn optimal_policy(&self) -> Result<OptimalPolicy> {
        OptimalPolicy::from_truth(&self.truth, self.space, self.utility.gamma)
    }
}

/// Per-step mean cumulative utility over traces of equal budget.
pub fn mean_cumulative(traces: &[ExplorationTrace]) -> Result<Vec<f64>> {
    let Some(first) = traces.first() else {
        return Err(Error::validation("no traces to average"));
    };
    let budget = first.budget;
    if traces.iter().any(|t| t.budget != budget) {
        return Err(Error::validation("traces have different budgets"));
    }
    let mut mean = vec![0.0; budget];
    for t in traces {
        for (m, c) in mean.iter_mut().zip(t.cumulative_curve()) {
            *m += c;
        }
    }
    let n = traces.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretCurve {
    pub steps: Vec<usize>,
    pub mean_cumulative_regret: Vec<f64>,
    pub run_count: usize,
}

impl RegretCurve {
    pub fn final_regret(&self) -> f64 {
        self.mean_cumulative_regret.last().copied().unwrap_or(0.0)
    }
}

/// Mean optimal cumulative utility minus mean policy cumulative utility, per step.
pub fn cumulative_regret(policy_runs: &[ExplorationTrace], optimal_runs: &[ExplorationTrace]) -> Result<RegretCurve> {
    let policy = mean_cumulative(policy_runs)?;
    let optimal = mean_cumulative(optimal_runs)?;
    if policy.len() != optimal.len() {
        return Err(Error::validation(format!(
            "budget mismatch: policy {} vs optimal {}",
            policy.len(),
            optimal.len()
        )));
    }
    Ok(RegretCurve {
        steps: (1..=policy.len()).collect(),
        mean_cumulative_regret: optimal.iter().zip(&policy).map(|(o, p)| o - p).collect(),
        run_count: policy_runs.len(),
    })
}

/// Regret curves as plot-ready columns: `step` then one column per policy.
pub fn regret_table(curves: &[(String, RegretCurve)]) -> String {
    let mut out = String::from("step");
    for (name, _) in curves {
        out.push('\t');
        out.push_str(name);
    }
    out.push('\n');
    let len = curves.iter().map(|(_, c)| c.steps.len()).max().unwrap_or(0);
    for s in 0..len {
        out.push_str(&(s + 1).to_string());
        for (_, c) in curves {
            out.push('\t');
            if let Some(v) = c.mean_cumulative_regret.get(s) {
                out.push_str(&format!("{v:.6}"));
            }
        }
        out.push('\n');
    }
    out
}

/// Minimal SVG line chart of regret curves.
pub fn regret_svg(curves: &[(String, RegretCurve)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 48.0;
    const COLORS: [&str; 8] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];
    let len = curves.iter().map(|(_, c)| c.steps.len()).max().unwrap_or(1).max(1);
    let values = curves.iter().flat_map(|(_, c)| c.mean_cumulative_regret.iter().copied());
    let (lo, hi) = values.fold((0.0f64, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let x = |s: usize| PAD + (W - 2.0 * PAD) * s as f64 / (len.max(2) - 1) as f64;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / span;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{PAD}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{ty}\" font-size=\"12\" text-anchor=\"middle\">step</text>\n\
         <text x=\"12\" y=\"{cy}\" font-size=\"12\" transform=\"rotate(-90 12 {cy})\" text-anchor=\"middle\">cumulative regret</text>\n\
         <text x=\"{lx}\" y=\"{b}\" font-size=\"10\" text-anchor=\"end\">{lo:.2}</text>\n\
         <text x=\"{lx}\" y=\"{PAD}\" font-size=\"10\" text-anchor=\"end\">{hi:.2}</text>\n",
        b = H - PAD,
        r = W - PAD,
        cx = W / 2.0,
        ty = H - 12.0,
        cy = H / 2.0,
        lx = PAD - 4.0,
    );
    for (k, (name, curve)) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let points: Vec<String> = curve
            .mean_cumulative_regret
            .iter()
            .enumerate()
            .map(|(s, &v)| format!("{:.2},{:.2}", x(s), y(v)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{:.0}\" y=\"{:.0}\" font-size=\"11\" fill=\"{color}\">{name}</text>\n",
            PAD + 8.0,
            PAD + 14.0 * (k as f64 + 1.0)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::OracleVerdict;

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy_of_counts(&[4, 4]), 1.0);
        assert_eq!(entropy_of_counts(&[8, 0]), 0.0);
        // -(0.75 log2 0.75 + 0.25 log2 0.25)
        assert!((entropy_of_counts(&[3, 1]) - 0.811_278_124_459_132_8).abs() < 1e-12);
        let report = entropy(&[vec![0, 1], vec![2]], &[false, false, false]);
        assert!(report.empty);
        assert_eq!(report.entropy, 0.0);
    }

    #[test]
    fn single_group_reassignment_is_zero() {
        let flags = [true, false, true, true];
        assert_eq!(random_reassignment_entropy(&[vec![0, 1, 2, 3]], &flags, 20, 1), 0.0);
        assert_eq!(random_reassignment_entropy(&[vec![0, 1], vec![2, 3]], &[false; 4], 5, 1), 0.0);
    }

    fn trace(utilities: &[f64], budget: usize) -> ExplorationTrace {
        let mut t = ExplorationTrace::new("p", budget);
        for (i, &u) in utilities.iter().enumerate() {
            let v = OracleVerdict { instance_id: i.to_string(), true_label: String::new(), cost: 0.0, is_unknown_unknown: u > 0.0 };
            t.push(Some(0), &v, u);
        }
        t
    }

    #[test]
    fn regret_examples() {
        let same = vec![trace(&[0.8, -0.2], 2)];
        let c = cumulative_regret(&same, &same).unwrap();
        assert_eq!(c.mean_cumulative_regret, [0.0, 0.0]);
        let c = cumulative_regret(&[trace(&[0.4], 1)], &[trace(&[0.9], 1)]).unwrap();
        assert!((c.final_regret() - 0.5).abs() < 1e-12);
        assert!(cumulative_regret(&[trace(&[0.4], 1)], &[trace(&[0.9, 0.1], 2)]).is_err());
        // A truncated run carries its last cumulative value forward.
        assert_eq!(trace(&[0.8], 3).cumulative_curve(), [0.8, 0.8, 0.8]);
    }

    #[test]
    fn optimal_prefers_higher_expected_utility() {
        let flags = Arc::new(vec![true, true, false, false, false, false, false]);
        let costs = Arc::new(vec![1.0; 7]);
        let mut opt = OptimalPolicy::new(flags, costs, 0.2);
        let arms = vec![ArmState::new(0, vec![0, 1]), ArmState::new(1, vec![2, 3, 4, 5, 6])];
        assert!((opt.expected_utility(&arms[0]) - 0.8).abs() < 1e-12);
        assert!((opt.expected_utility(&arms[1]) + 0.2).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(opt.choose(&arms, 0, &mut rng), Some(0));
        let pure = vec![ArmState::new(0, vec![2, 3]), ArmState::new(1, vec![4, 5])];
        assert_eq!(opt.choose(&pure, 0, &mut rng), Some(0));
    }

    #[test]
    fn regret_table_and_svg() {
        let curve = RegretCurve { steps: vec![1, 2], mean_cumulative_regret: vec![0.1, 0.3], run_count: 1 };
        let table = regret_table(&[("uub".into(), curve.clone())]);
        assert_eq!(table, "step\tuub\n1\t0.100000\n2\t0.300000\n");
        let svg = regret_svg(&[("uub".into(), curve)]);
        assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    }
}
