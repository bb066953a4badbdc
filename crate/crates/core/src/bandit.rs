//! Exploration of partitions as bandit arms with finite, shrinking populations.
//!
//! Every policy here scores arms from their pull history only. Index policies
//! share one estimator: a discounted mean utility plus the bonus
//! `sqrt(2 ln(sum_i N_i) / N_i)` where `N_i` is the discounted pull count.
//! They differ in the discount applied at step `t` to a pull made at step `j`:
//!
//! | policy               | discount                                   |
//! |----------------------|--------------------------------------------|
//! | UUB                  | `(N - pulls_through(t)) / (N - pulls_through(j))` |
//! | discounted UCB       | `gamma^(t - j)`                              |
//! | sliding-window UCB   | `1` if `t - j < window`, else `0`             |
//! | UCB1, greedy         | `1`                                          |
//!
//! The UUB discount is the ratio of the arm's remaining population now to its
//! remaining population right after the pull, so old observations fade only
//! as the arm itself is drained.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::SearchSpace;
use crate::error::{Error, Result};
use crate::oracle::{utility, Oracle, OracleVerdict, UtilityConfig};

/// Paper default budget: 20% of the search space.
pub const DEFAULT_BUDGET_FRACTION: f64 = 0.20;

pub fn default_budget(n: usize) -> usize {
    budget_from_fraction(n, DEFAULT_BUDGET_FRACTION)
}

pub fn budget_from_fraction(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).ceil() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pull {
    pub step: usize,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmState {
    pub id: usize,
    initial_size: usize,
    remaining: Vec<usize>,
    pulls: Vec<Pull>,
}

impl ArmState {
    pub fn new(id: usize, members: Vec<usize>) -> Self {
        Self { id, initial_size: members.len(), remaining: members, pulls: Vec::new() }
    }

    pub fn initial_size(&self) -> usize {
        self.initial_size
    }

    /// Unqueried members.
    pub fn remaining(&self) -> &[usize] {
        &self.remaining
    }

    pub fn remaining_count(&self) -> usize {
        self.remaining.len()
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining.is_empty()
    }

    pub fn pulls(&self) -> &[Pull] {
        &self.pulls
    }

    /// Number of pulls made at steps `<= step`.
    pub fn pulls_through(&self, step: usize) -> usize {
        self.pulls.partition_point(|p| p.step <= step)
    }

    fn draw(&mut self, rng: &mut ChaCha8Rng) -> usize {
        let k = rng.gen_range(0..self.remaining.len());
        self.remaining.swap_remove(k)
    }

    /// Appends a pull at `step`. Steps must increase.
    pub fn record(&mut self, step: usize, utility: f64) {
        debug_assert!(self.pulls.last().is_none_or(|p| p.step < step));
        self.pulls.push(Pull { step, utility });
    }

    /// Builds an arm with a given pull history, for tests and replays.
    pub fn with_history(id: usize, initial_size: usize, pulls: Vec<Pull>) -> Self {
        let left = initial_size.saturating_sub(pulls.len());
        Self { id, initial_size, remaining: (0..left).collect(), pulls }
    }
}

/// Population-ratio discount of a pull made at step `j`, seen from step `t`.
/// Zero when the arm was already empty after step `j`.
pub fn discount_factor(arm: &ArmState, j: usize, t: usize) -> f64 {
    population_discount(arm.initial_size, arm.pulls_through(j), arm.pulls_through(t))
}

pub fn population_discount(initial_size: usize, pulls_through_j: usize, pulls_through_t: usize) -> f64 {
    let denom = initial_size.saturating_sub(pulls_through_j);
    if denom == 0 {
        return 0.0;
    }
    initial_size.saturating_sub(pulls_through_t) as f64 / denom as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Discount {
    Population,
    Geometric(f64),
    Window(usize),
    Undiscounted,
}

impl Discount {
    /// Weight of the `k`-th pull (0-based) of `arm`, made at step `j`, at step `t`.
    fn weight(&self, arm: &ArmState, k: usize, j: usize, t: usize) -> f64 {
        match *self {
            // Pull steps per arm are distinct, so pulls_through(j) == k + 1.
            Discount::Population => population_discount(arm.initial_size, k + 1, arm.pulls_through(t)),
            Discount::Geometric(gamma) => gamma.powi((t - j) as i32),
            Discount::Window(w) => {
                if t - j < w {
                    1.0
                } else {
                    0.0
                }
            }
            Discount::Undiscounted => 1.0,
        }
    }

    /// (effective count, discounted utility sum) over pulls up to step `t`.
    pub fn sums(&self, arm: &ArmState, t: usize) -> (f64, f64) {
        arm.pulls
            .iter()
            .take_while(|p| p.step <= t)
            .enumerate()
            .fold((0.0, 0.0), |(n, s), (k, p)| {
                let w = self.weight(arm, k, p.step, t);
                (n + w, s + w * p.utility)
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmStatistics {
    pub mean_utility: f64,
    pub bonus: f64,
    pub effective_count: f64,
}

impl ArmStatistics {
    pub fn score(&self) -> f64 {
        self.mean_utility + self.bonus
    }
}

pub fn exploration_bonus(total_effective: f64, effective_count: f64) -> f64 {
    if effective_count <= 0.0 {
        return f64::INFINITY;
    }
    (2.0 * total_effective.max(1.0).ln() / effective_count).sqrt()
}

/// Discounted mean and bonus of one arm at step `t`. `None` if the arm has no
/// pull with non-zero weight.
pub fn arm_statistics(arm: &ArmState, t: usize, total_effective: f64, discount: Discount) -> Option<ArmStatistics> {
    let (effective_count, sum) = discount.sums(arm, t);
    if effective_count <= 0.0 {
        return None;
    }
    Some(ArmStatistics {
        mean_utility: sum / effective_count,
        bonus: exploration_bonus(total_effective, effective_count),
        effective_count,
    })
}

/// Which policy to run, with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicyKind {
    Uub,
    Random,
    Greedy,
    EpsilonGreedy(f64),
    Ucb1,
    DiscountedUcb(f64),
    SlidingWindowUcb(usize),
}

impl PolicyKind {
    /// The discounted-UCB sweep used for comparisons.
    pub const DISCOUNT_SWEEP: [f64; 3] = [0.2, 0.5, 0.8];
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::Uub => f.write_str("uub"),
            PolicyKind::Random => f.write_str("random"),
            PolicyKind::Greedy => f.write_str("greedy"),
            PolicyKind::EpsilonGreedy(e) => write!(f, "epsilon_greedy:{e}"),
            PolicyKind::Ucb1 => f.write_str("ucb1"),
            PolicyKind::DiscountedUcb(g) => write!(f, "discounted_ucb:{g}"),
            PolicyKind::SlidingWindowUcb(w) => write!(f, "sliding_window_ucb:{w}"),
        }
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, param) = match s.trim().split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (s.trim(), None),
        };
        let real = |what: &str| -> Result<f64> {
            param
                .ok_or_else(|| Error::config(format!("{name} needs a {what} parameter, e.g. {name}:0.5")))?
                .parse::<f64>()
                .map_err(|_| Error::config(format!("bad {what} for {name}")))
        };
        let kind = match name {
            "uub" => PolicyKind::Uub,
            "random" => PolicyKind::Random,
            "greedy" => PolicyKind::Greedy,
            "ucb1" => PolicyKind::Ucb1,
            "epsilon_greedy" => {
                let e = real("epsilon")?;
                if !(0.0..=1.0).contains(&e) {
                    return Err(Error::config("epsilon must lie in [0,1]"));
                }
                PolicyKind::EpsilonGreedy(e)
            }
            "discounted_ucb" => {
                let g = real("gamma")?;
                if !(g > 0.0 && g < 1.0) {
                    return Err(Error::config("discount gamma must lie in (0,1)"));
                }
                PolicyKind::DiscountedUcb(g)
            }
            "sliding_window_ucb" => {
                let w = real("window")?;
                if w < 1.0 || w.fract() != 0.0 {
                    return Err(Error::config("window must be a positive integer"));
                }
                PolicyKind::SlidingWindowUcb(w as usize)
            }
            other => return Err(Error::config(format!("unknown policy `{other}`"))),
        };
        if param.is_some() && matches!(kind, PolicyKind::Uub | PolicyKind::Random | PolicyKind::Greedy | PolicyKind::Ucb1) {
            return Err(Error::config(format!("policy `{name}` takes no parameter")));
        }
        Ok(kind)
    }
}

impl TryFrom<String> for PolicyKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PolicyKind> for String {
    fn from(k: PolicyKind) -> String {
        k.to_string()
    }
}

/// Chooses the next arm from the arms' pull histories. `t` is the number of
/// completed steps. Returns `None` when every arm is exhausted.
pub trait Policy: Send {
    fn name(&self) -> String;
    fn choose(&mut self, arms: &[ArmState], t: usize, rng: &mut ChaCha8Rng) -> Option<usize>;
}

pub fn make_policy(kind: PolicyKind) -> Box<dyn Policy> {
    let index = |discount, bonus| -> Box<dyn Policy> { Box::new(IndexPolicy { kind, discount, bonus }) };
    match kind {
        PolicyKind::Uub => index(Discount::Population, true),
        PolicyKind::Ucb1 => index(Discount::Undiscounted, true),
        PolicyKind::DiscountedUcb(g) => index(Discount::Geometric(g), true),
        PolicyKind::SlidingWindowUcb(w) => index(Discount::Window(w), true),
        PolicyKind::Greedy => index(Discount::Undiscounted, false),
        PolicyKind::EpsilonGreedy(epsilon) => Box::new(EpsilonGreedy {
            epsilon,
            greedy: IndexPolicy { kind, discount: Discount::Undiscounted, bonus: false },
        }),
        PolicyKind::Random => Box::new(RandomPolicy),
    }
}

/// Initialization round: the first live arm that has never been pulled.
pub fn initialization_arm(arms: &[ArmState]) -> Option<usize> {
    arms.iter().position(|a| a.pulls.is_empty() && !a.is_exhausted())
}

fn live_arms(arms: &[ArmState]) -> Vec<usize> {
    (0..arms.len()).filter(|&i| !arms[i].is_exhausted()).collect()
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax_lowest(scores: impl IntoIterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

struct IndexPolicy {
    kind: PolicyKind,
    discount: Discount,
    bonus: bool,
}

impl IndexPolicy {
    fn scores(&self, arms: &[ArmState], t: usize) -> Vec<Option<ArmStatistics>> {
        let sums: Vec<(f64, f64)> = arms.iter().map(|a| self.discount.sums(a, t)).collect();
        let total: f64 = sums.iter().map(|s| s.0).sum();
        sums.iter()
            .map(|&(n, s)| {
                (n > 0.0).then(|| ArmStatistics {
                    mean_utility: s / n,
                    bonus: if self.bonus { exploration_bonus(total, n) } else { 0.0 },
                    effective_count: n,
                })
            })
            .collect()
    }
}

impl Policy for IndexPolicy {
    fn name(&self) -> String {
        self.kind.to_string()
    }

    fn choose(&mut self, arms: &[ArmState], t: usize, _rng: &mut ChaCha8Rng) -> Option<usize> {
        if let Some(i) = initialization_arm(arms) {
            return Some(i);
        }
        let stats = self.scores(arms, t);
        argmax_lowest(live_arms(arms).into_iter().map(|i| {
            // No weighted evidence left (e.g. outside the window): explore it.
            (i, stats[i].map_or(f64::INFINITY, |s| s.score()))
        }))
    }
}

struct EpsilonGreedy {
    epsilon: f64,
    greedy: IndexPolicy,
}

impl Policy for EpsilonGreedy {
    fn name(&self) -> String {
        self.greedy.kind.to_string()
    }

    fn choose(&mut self, arms: &[ArmState], t: usize, rng: &mut ChaCha8Rng) -> Option<usize> {
        if let Some(i) = initialization_arm(arms) {
            return Some(i);
        }
        if rng.gen::<f64>() < self.epsilon {
            return live_arms(arms).choose(rng).copied();
        }
        self.greedy.choose(arms, t, rng)
    }
}

struct RandomPolicy;

impl Policy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn choose(&mut self, arms: &[ArmState], _t: usize, rng: &mut ChaCha8Rng) -> Option<usize> {
        live_arms(arms).choose(rng).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    pub arm: Option<usize>,
    pub instance_id: String,
    pub is_unknown_unknown: bool,
    pub cost: f64,
    pub utility: f64,
    pub cumulative_utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationTrace {
    pub policy: String,
    pub budget: usize,
    pub steps: Vec<TraceStep>,
    /// Set when the search space ran out before the budget.
    pub exhausted: bool,
}

impl ExplorationTrace {
    pub fn new(policy: impl Into<String>, budget: usize) -> Self {
        Self { policy: policy.into(), budget, steps: Vec::new(), exhausted: false }
    }

    pub fn push(&mut self, arm: Option<usize>, verdict: &OracleVerdict, utility: f64) -> &TraceStep {
        let cumulative_utility = self.cumulative_utility() + utility;
        self.steps.push(TraceStep {
            t: self.steps.len() + 1,
            arm,
            instance_id: verdict.instance_id.clone(),
            is_unknown_unknown: verdict.is_unknown_unknown,
            cost: verdict.cost,
            utility,
            cumulative_utility,
        });
        self.steps.last().expect("just pushed")
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn cumulative_utility(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.cumulative_utility)
    }

    pub fn discovered(&self) -> usize {
        self.steps.iter().filter(|s| s.is_unknown_unknown).count()
    }

    /// Cumulative utility after each of the `budget` steps, carried forward
    /// past an early end.
    pub fn cumulative_curve(&self) -> Vec<f64> {
        let mut curve = Vec::with_capacity(self.budget);
        let mut last = 0.0;
        for t in 0..self.budget {
            if let Some(s) = self.steps.get(t) {
                last = s.cumulative_utility;
            }
            curve.push(last);
        }
        curve
    }

    /// One JSON object per step.
    pub fn to_jsonl(&self) -> String {
        self.steps
            .iter()
            .map(|s| serde_json::to_string(s).expect("trace steps serialize") + "\n")
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    /// 1-based step number.
    pub step: usize,
    pub arm: usize,
    /// Instance index in the search space.
    pub instance: usize,
}

/// A run as an explicit state machine: ask for the next query, obtain a
/// verdict however is appropriate, then record it. The policy and the
/// within-arm sampling draw from separate seeded streams.
pub struct Exploration {
    arms: Vec<ArmState>,
    policy: Box<dyn Policy>,
    policy_rng: ChaCha8Rng,
    sample_rng: ChaCha8Rng,
    pending: Option<Query>,
    trace: ExplorationTrace,
}

impl Exploration {
    pub fn new(policy: Box<dyn Policy>, groups: &[Vec<usize>], budget: usize, seed: u64) -> Self {
        let mut policy_rng = ChaCha8Rng::seed_from_u64(seed);
        policy_rng.set_stream(1);
        let mut sample_rng = ChaCha8Rng::seed_from_u64(seed);
        sample_rng.set_stream(2);
        let arms = groups
            .iter()
            .enumerate()
            .map(|(i, g)| ArmState::new(i, g.clone()))
            .collect();
        let trace = ExplorationTrace::new(policy.name(), budget);
        Self { arms, policy, policy_rng, sample_rng, pending: None, trace }
    }

    pub fn arms(&self) -> &[ArmState] {
        &self.arms
    }

    pub fn completed_steps(&self) -> usize {
        self.trace.len()
    }

    pub fn trace(&self) -> &ExplorationTrace {
        &self.trace
    }

    pub fn into_trace(self) -> ExplorationTrace {
        self.trace
    }

    pub fn pending(&self) -> Option<Query> {
        self.pending
    }

    pub fn is_done(&self) -> bool {
        self.pending.is_none() && (self.trace.len() >= self.trace.budget || self.trace.exhausted)
    }

    /// The pending query, choosing and drawing a new one if none is pending.
    /// `None` once the budget is spent or every arm is exhausted.
    pub fn next_query(&mut self) -> Option<Query> {
        if let Some(q) = self.pending {
            return Some(q);
        }
        if self.trace.len() >= self.trace.budget || self.trace.exhausted {
            return None;
        }
        let t = self.trace.len();
        let Some(arm) = self.policy.choose(&self.arms, t, &mut self.policy_rng) else {
            self.trace.exhausted = true;
            return None;
        };
        assert!(!self.arms[arm].is_exhausted(), "policy chose an exhausted arm");
        let instance = self.arms[arm].draw(&mut self.sample_rng);
        let q = Query { step: t + 1, arm, instance };
        self.pending = Some(q);
        Some(q)
    }

    /// Records the outcome of the pending query.
    pub fn record(&mut self, verdict: &OracleVerdict, utility: f64) -> Result<&TraceStep> {
        let q = self.pending.take().ok_or(Error::StaleAnswer { expected: None, got: self.trace.len() + 1 })?;
        self.arms[q.arm].record(q.step, utility);
        Ok(self.trace.push(Some(q.arm), verdict, utility))
    }
}

/// Runs a policy over the given arms until the budget is spent or the search
/// space is exhausted.
pub fn run_policy(
    policy: Box<dyn Policy>,
    groups: &[Vec<usize>],
    space: &SearchSpace,
    oracle: &mut dyn Oracle,
    utility_config: &UtilityConfig,
    budget: usize,
    seed: u64,
) -> Result<ExplorationTrace> {
    if budget == 0 {
        return Err(Error::config("budget must be at least 1"));
    }
    let mut run = Exploration::new(policy, groups, budget, seed);
    while let Some(q) = run.next_query() {
        let verdict = match oracle.query(&space.instance(q.instance).id) {
            Ok(v) => v,
            Err(Error::BudgetExhausted(_)) => break,
            Err(e) => return Err(e),
        };
        let u = utility(&verdict, utility_config);
        run.record(&verdict, u)?;
    }
    Ok(run.into_trace())
}
