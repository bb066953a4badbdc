use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::ExplorationTrace;
use crate::corpus::{euclidean, SearchSpace, Value};
use crate::error::{Error, Result};
use crate::oracle::{utility, Oracle, UtilityConfig};

/// Model-agnostic query strategies that ignore partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Random,
    MostUncertain,
    LeastAverageSimilarity,
    LeastMaximumSimilarity,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::Random,
        BaselineKind::MostUncertain,
        BaselineKind::LeastAverageSimilarity,
        BaselineKind::LeastMaximumSimilarity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Random => "random_sampling",
            BaselineKind::MostUncertain => "most_uncertain",
            BaselineKind::LeastAverageSimilarity => "least_average_similarity",
            BaselineKind::LeastMaximumSimilarity => "least_maximum_similarity",
        }
    }

    fn needs_training(self) -> bool {
        matches!(self, BaselineKind::LeastAverageSimilarity | BaselineKind::LeastMaximumSimilarity)
    }
}

/// Sort by key descending; equal keys keep search-space order.
fn rank_descending(keys: Vec<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]));
    order
}

/// Query order over the whole search space. Training rows are encoded with
/// the search space's encoder.
pub fn baseline_ranking(
    kind: BaselineKind,
    space: &SearchSpace,
    training: Option<&[Vec<Value>]>,
    seed: u64,
) -> Result<Vec<usize>> {
    let n = space.len();
    let training: Vec<Vec<f64>> = match (kind.needs_training(), training) {
        (true, None) => {
            return Err(Error::config(format!("{} needs a training-features file", kind.name())));
        }
        (true, Some([])) => return Err(Error::config("training-features file is empty")),
        (true, Some(rows)) => rows.iter().map(|r| space.encoder().encode(r)).collect(),
        (false, _) => Vec::new(),
    };
    let distances = |i: usize| training.iter().map(move |t| euclidean(space.encoded(i), t));
    Ok(match kind {
        BaselineKind::Random => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            order
        }
        BaselineKind::MostUncertain => rank_descending((0..n).map(|i| -space.instance(i).confidence).collect()),
        BaselineKind::LeastAverageSimilarity => {
            let m = training.len() as f64;
            rank_descending((0..n).map(|i| distances(i).sum::<f64>() / m).collect())
        }
        BaselineKind::LeastMaximumSimilarity => {
            rank_descending((0..n).map(|i| distances(i).fold(f64::INFINITY, f64::min)).collect())
        }
    })
}

/// Queries the top `budget` instances of the ranking in order.
pub fn end_to_end_baseline(
    kind: BaselineKind,
    space: &SearchSpace,
    training: Option<&[Vec<Value>]>,
    oracle: &mut dyn Oracle,
    utility_config: &UtilityConfig,
    budget: usize,
    seed: u64,
) -> Result<ExplorationTrace> {
    if budget == 0 {
        return Err(Error::config("budget must be at least 1"));
    }
    let order = baseline_ranking(kind, space, training, seed)?;
    let mut trace = ExplorationTrace::new(kind.name(), budget);
    for &i in order.iter().take(budget) {
        let verdict = match oracle.query(&space.instance(i).id) {
            Ok(v) => v,
            Err(Error::BudgetExhausted(_)) => break,
            Err(e) => return Err(e),
        };
        let u = utility(&verdict, utility_config);
        trace.push(None, &verdict, u);
    }
    trace.exhausted = order.len() < budget;
    Ok(trace)
}
