//! Descriptive space partitioning.
//!
//! Every candidate pattern gets five goodness metrics (intra/inter feature
//! distance, intra/inter confidence distance, pattern length). A weighted
//! combination of them is the pattern's weight in a set cover problem, solved
//! greedily by repeatedly taking the pattern with the best ratio of newly
//! covered instances to weight. Instances covered by several selected patterns
//! go to the one whose centroid is closest.
//!
//! The combination subtracts the inter-partition terms, so raw weights can be
//! zero or negative. Selection then runs on weights shifted so the smallest is
//! [`WEIGHT_EPSILON`]; reported objective values always use the raw weights.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{euclidean, SearchSpace};
use crate::error::{Error, Result};
use crate::patterns::{stats_of, covered_by, Pattern, PatternSet, PatternStats};

pub const WEIGHT_EPSILON: f64 = 1e-6;

pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [0.0, 0.25, 0.5, 1.0, 2.0];

/// Fraction of the search space held out for tuning the weights.
pub const VALIDATION_FRACTION: f64 = 0.05;

const MAX_DESCENT_CYCLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaWeights(pub [f64; 5]);

impl LambdaWeights {
    pub const UNIT: LambdaWeights = LambdaWeights([1.0; 5]);

    pub fn new(values: [f64; 5]) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::validation(format!("lambda weights must be non-negative: {values:?}")));
        }
        if values.iter().all(|v| *v == 0.0) {
            return Err(Error::validation("lambda weights must not all be zero"));
        }
        Ok(Self(values))
    }
}

impl Default for LambdaWeights {
    fn default() -> Self {
        Self::UNIT
    }
}

/// The five per-pattern metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Goodness {
    /// Sum of feature distances from covered instances to the pattern centroid.
    pub intra_feature: f64,
    /// Sum of feature distances from covered instances to every other centroid.
    pub inter_feature: f64,
    pub intra_confidence: f64,
    pub inter_confidence: f64,
    /// Number of predicates.
    pub length: f64,
}

impl Goodness {
    /// `l1*g1 - l2*g2 + l3*g3 - l4*g4 + l5*g5`
    pub fn combine(&self, lambda: &LambdaWeights) -> f64 {
        let l = lambda.0;
        l[0] * self.intra_feature - l[1] * self.inter_feature + l[2] * self.intra_confidence
            - l[3] * self.inter_confidence
            + l[4] * self.length
    }
}

fn all_stats(space: &SearchSpace, set: &PatternSet) -> Result<Vec<PatternStats>> {
    set.patterns
        .par_iter()
        .map(|p| stats_of(covered_by(p, space), space))
        .collect()
}

/// Metrics of one pattern of `set`, summed directly over the other patterns'
/// centroids.
pub fn goodness_metrics(pattern: &Pattern, space: &SearchSpace, set: &PatternSet) -> Result<Goodness> {
    let me = set
        .patterns
        .iter()
        .position(|p| p == pattern)
        .ok_or_else(|| Error::validation("pattern is not part of the pattern set"))?;
    let stats = all_stats(space, set)?;
    let own = &stats[me];
    let mut g = Goodness { length: pattern.size() as f64, ..Goodness::default() };
    for &x in &own.covered {
        let fx = space.encoded(x);
        let sx = space.instance(x).confidence;
        g.intra_feature += euclidean(fx, &own.centroid);
        g.intra_confidence += (sx - own.mean_confidence).abs();
        for (q, other) in stats.iter().enumerate() {
            if q != me {
                g.inter_feature += euclidean(fx, &other.centroid);
                g.inter_confidence += (sx - other.mean_confidence).abs();
            }
        }
    }
    Ok(g)
}

/// Coverage statistics and metrics for every pattern of a set.
#[derive(Debug, Clone)]
pub struct MetricTable {
    pub stats: Vec<PatternStats>,
    pub metrics: Vec<Goodness>,
}

impl MetricTable {
    /// Uses `sum_{q' != q} d(x, c_q') = D(x) - d(x, c_q)` with
    /// `D(x) = sum_{q'} d(x, c_q')` precomputed once per instance.
    pub fn compute(space: &SearchSpace, set: &PatternSet) -> Result<Self> {
        let stats = all_stats(space, set)?;
        let totals: Vec<(f64, f64)> = (0..space.len())
            .into_par_iter()
            .map(|x| {
                let fx = space.encoded(x);
                let sx = space.instance(x).confidence;
                stats.iter().fold((0.0, 0.0), |(df, dc), s| {
                    (df + euclidean(fx, &s.centroid), dc + (sx - s.mean_confidence).abs())
                })
            })
            .collect();
        let metrics = set
            .patterns
            .par_iter()
            .zip(&stats)
            .map(|(p, s)| {
                let mut g = Goodness { length: p.size() as f64, ..Goodness::default() };
                for &x in &s.covered {
                    let d = euclidean(space.encoded(x), &s.centroid);
                    let dc = (space.instance(x).confidence - s.mean_confidence).abs();
                    g.intra_feature += d;
                    g.intra_confidence += dc;
                    g.inter_feature += totals[x].0 - d;
                    g.inter_confidence += totals[x].1 - dc;
                }
                g
            })
            .collect();
        Ok(Self { stats, metrics })
    }

    pub fn raw_weights(&self, lambda: &LambdaWeights) -> Vec<f64> {
        self.metrics.iter().map(|g| g.combine(lambda)).collect()
    }
}

/// Shifts weights so that all are strictly positive when any raw weight is
/// `<= 0`. Returns the shifted weights and the shift applied.
pub fn shift_weights(raw: &[f64]) -> (Vec<f64>, f64) {
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = if min <= 0.0 { WEIGHT_EPSILON - min } else { 0.0 };
    (raw.iter().map(|w| w + shift).collect(), shift)
}

/// Combined goodness of every pattern after the positivity shift.
pub fn combined_goodness(metrics: &[Goodness], lambda: &LambdaWeights) -> (Vec<f64>, f64) {
    let raw: Vec<f64> = metrics.iter().map(|g| g.combine(lambda)).collect();
    shift_weights(&raw)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    /// Index of the pattern in the pattern set it was selected from.
    pub pattern_index: usize,
    pub pattern: Pattern,
    /// Member indices into the search space, ascending.
    pub members: Vec<usize>,
    pub stats: PatternStats,
    pub metrics: Goodness,
    pub raw_goodness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partitioning {
    pub partitions: Vec<Partition>,
    pub objective_value: f64,
    pub lambda: LambdaWeights,
    pub shift: f64,
}

impl Partitioning {
    pub fn len(&self) -> usize {
        self.partitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partitions.is_empty()
    }

    pub fn member_groups(&self) -> Vec<Vec<usize>> {
        self.partitions.iter().map(|p| p.members.clone()).collect()
    }

    /// Checks that members are disjoint, non-empty and cover `0..n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        check_groups(&self.member_groups(), n)
    }

    /// Tab-separated report: one row per partition with its description,
    /// member count, members' mean confidence and objective contribution.
    pub fn report(&self, space: &SearchSpace) -> String {
        let mut out = format!(
            "# partitions={} objective={} shift={} lambda={:?}\n",
            self.len(),
            self.objective_value,
            self.shift,
            self.lambda.0
        );
        out.push_str("arm\tmembers\tmean_confidence\tcontribution\tdescription\n");
        for (k, p) in self.partitions.iter().enumerate() {
            let mean_conf = p
                .members
                .iter()
                .map(|&i| space.instance(i).confidence)
                .sum::<f64>()
                / p.members.len() as f64;
            out.push_str(&format!(
                "{k}\t{}\t{mean_conf:.4}\t{}\t{}\n",
                p.members.len(),
                p.raw_goodness,
                p.pattern.describe(space)
            ));
        }
        out
    }
}

pub fn check_groups(groups: &[Vec<usize>], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for (k, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(Error::validation(format!("partition {k} is empty")));
        }
        for &i in g {
            if i >= n || seen[i] {
                return Err(Error::validation(format!("instance {i} assigned twice or out of range")));
            }
            seen[i] = true;
        }
    }
    match seen.iter().filter(|s| !**s).count() {
        0 => Ok(()),
        uncovered => Err(Error::Uncoverable { uncovered }),
    }
}

/// Sum of raw combined goodness over the selected patterns.
pub fn objective_value(partitioning: &Partitioning) -> f64 {
    partitioning.partitions.iter().map(|p| p.raw_goodness).sum()
}

/// Greedy weighted set cover. Returns pattern indices in selection order.
/// Ratio ties go to the lowest pattern index.
pub fn greedy_cover(coverage: &[Vec<usize>], weights: &[f64], n: usize) -> Result<Vec<usize>> {
    let mut uncovered = vec![true; n];
    let mut left = n;
    let mut used = vec![false; coverage.len()];
    let mut order = Vec::new();
    while left > 0 {
        let mut best: Option<(usize, f64)> = None;
        for (q, cov) in coverage.iter().enumerate() {
            if used[q] {
                continue;
            }
            let gain = cov.iter().filter(|&&i| uncovered[i]).count();
            if gain == 0 {
                continue;
            }
            let ratio = gain as f64 / weights[q];
            if best.is_none_or(|(_, r)| ratio > r) {
                best = Some((q, ratio));
            }
        }
        let Some((q, _)) = best else {
            return Err(Error::Uncoverable { uncovered: left });
        };
        used[q] = true;
        order.push(q);
        for &i in &coverage[q] {
            if uncovered[i] {
                uncovered[i] = false;
                left -= 1;
            }
        }
    }
    Ok(order)
}

/// Partitions `space` with the patterns of `set` under the given weights.
pub fn greedy_partition(space: &SearchSpace, set: &PatternSet, lambda: LambdaWeights) -> Result<Partitioning> {
    let table = MetricTable::compute(space, set)?;
    partition_with_table(space, set, &table, lambda)
}

pub fn partition_with_table(
    space: &SearchSpace,
    set: &PatternSet,
    table: &MetricTable,
    lambda: LambdaWeights,
) -> Result<Partitioning> {
    let raw = table.raw_weights(&lambda);
    let (weights, shift) = shift_weights(&raw);
    let coverage: Vec<Vec<usize>> = table.stats.iter().map(|s| s.covered.clone()).collect();
    let order = greedy_cover(&coverage, &weights, space.len())?;

    // Multiply covered instances go to the closest selected centroid; on equal
    // distance the earlier selection wins.
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); order.len()];
    let mut owner: Vec<Option<(usize, f64)>> = vec![None; space.len()];
    for (rank, &q) in order.iter().enumerate() {
        for &x in &coverage[q] {
            let d = euclidean(space.encoded(x), &table.stats[q].centroid);
            if owner[x].is_none_or(|(_, best)| d < best) {
                owner[x] = Some((rank, d));
            }
        }
    }
    for (x, o) in owner.iter().enumerate() {
        let (rank, _) = o.expect("greedy cover assigns every instance");
        members[rank].push(x);
    }

    // A selected pattern can lose all of its instances to closer centroids;
    // the remaining patterns still form a cover, so it is dropped.
    let partitions: Vec<Partition> = order
        .iter()
        .zip(members)
        .filter(|(_, m)| !m.is_empty())
        .map(|(&q, m)| Partition {
            pattern_index: q,
            pattern: set.patterns[q].clone(),
            members: m,
            stats: table.stats[q].clone(),
            metrics: table.metrics[q],
            raw_goodness: raw[q],
        })
        .collect();
    let objective_value = partitions.iter().map(|p| p.raw_goodness).sum();
    Ok(Partitioning { partitions, objective_value, lambda, shift })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaTuning {
    pub lambda: LambdaWeights,
    pub objective: f64,
    pub cycles: usize,
    pub warnings: Vec<String>,
}

/// Coordinate descent over the weight grid, starting from all ones. Each
/// coordinate takes the first grid value reaching the smallest objective on
/// the validation space; cycles repeat until nothing changes (at most 10).
pub fn tune_lambda(validation: Option<&SearchSpace>, set: &PatternSet, grid: &[f64]) -> Result<LambdaTuning> {
    if grid.is_empty() {
        return Err(Error::config("lambda grid is empty"));
    }
    if grid.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::config("lambda grid values must be non-negative"));
    }
    let Some(space) = validation else {
        let msg = "validation space is empty; using unit lambda weights".to_string();
        log::warn!("{msg}");
        return Ok(LambdaTuning {
            lambda: LambdaWeights::UNIT,
            objective: f64::NAN,
            cycles: 0,
            warnings: vec![msg],
        });
    };
    let table = MetricTable::compute(space, set)?;
    let objective = |l: [f64; 5]| -> Result<f64> {
        Ok(partition_with_table(space, set, &table, LambdaWeights(l))?.objective_value)
    };

    let mut current = LambdaWeights::UNIT.0;
    let mut best_obj = objective(current)?;
    let mut cycles = 0;
    while cycles < MAX_DESCENT_CYCLES {
        cycles += 1;
        let mut changed = false;
        for coord in 0..5 {
            let mut choice: Option<(f64, f64)> = None;
            for &v in grid {
                let mut candidate = current;
                candidate[coord] = v;
                if candidate.iter().all(|c| *c == 0.0) {
                    continue;
                }
                let obj = objective(candidate)?;
                if choice.is_none_or(|(_, o)| obj < o) {
                    choice = Some((v, obj));
                }
            }
            if let Some((v, obj)) = choice {
                if v != current[coord] {
                    changed = true;
                }
                current[coord] = v;
                best_obj = obj;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(LambdaTuning {
        lambda: LambdaWeights(current),
        objective: best_obj,
        cycles,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_search_space, Dataset, DatasetSchema, FeatureKind, FeatureSpec, Instance, Value};
    use crate::patterns::{mine_patterns, MinerConfig, Predicate};

    fn space(rows: &[(&[f64], f64)]) -> SearchSpace {
        let width = rows[0].0.len();
        let schema = DatasetSchema::new(
            (0..width)
                .map(|i| FeatureSpec { name: format!("f{i}"), kind: FeatureKind::Numeric })
                .collect(),
            vec!["c".into()],
        )
        .unwrap();
        let insts = rows
            .iter()
            .enumerate()
            .map(|(i, (f, conf))| {
                Instance::new(format!("x{i}"), f.iter().map(|v| Value::Num(*v)).collect(), "c", *conf)
            })
            .collect();
        build_search_space(&Dataset::new(schema, insts).unwrap(), "c", 0.5).unwrap()
    }

    fn eq_pattern(space: &SearchSpace, items: &[(usize, f64)]) -> Pattern {
        Pattern::new(items.iter().map(|&(f, v)| Predicate::eq(f, Value::Num(v))).collect(), space).unwrap()
    }

    #[test]
    fn singleton_has_zero_intra_terms() {
        let sp = space(&[(&[0.0, 1.0], 0.9), (&[1.0, 1.0], 0.8)]);
        let set = PatternSet {
            patterns: vec![eq_pattern(&sp, &[(0, 0.0), (1, 1.0)]), eq_pattern(&sp, &[(1, 1.0)])],
            fallback_count: 0,
            warnings: vec![],
        };
        let g = goodness_metrics(&set.patterns[0], &sp, &set).unwrap();
        assert_eq!((g.intra_feature, g.intra_confidence, g.length), (0.0, 0.0, 2.0));
        assert_eq!(g.combine(&LambdaWeights([1.0, 0.0, 1.0, 0.0, 1.0])), 2.0);
    }

    #[test]
    fn hand_evaluated_sums() {
        // Two identical instances at the origin (conf 0.9) and one at distance 1 (conf 0.7).
        let sp = space(&[(&[0.0], 0.9), (&[0.0], 0.9), (&[1.0], 0.7)]);
        let set = PatternSet {
            patterns: vec![eq_pattern(&sp, &[(0, 0.0)]), eq_pattern(&sp, &[(0, 1.0)])],
            fallback_count: 0,
            warnings: vec![],
        };
        let g = goodness_metrics(&set.patterns[0], &sp, &set).unwrap();
        assert_eq!(g.intra_feature, 0.0);
        assert_eq!(g.intra_confidence, 0.0);
        assert_eq!(g.inter_feature, 2.0);
        assert!((g.inter_confidence - 2.0 * (0.9f64 - 0.7).abs()).abs() < 1e-12);
        let table = MetricTable::compute(&sp, &set).unwrap();
        assert!((table.metrics[0].inter_confidence - g.inter_confidence).abs() < 1e-12);
    }

    #[test]
    fn length_only_weights() {
        let sp = space(&[(&[0.0, 1.0], 0.9), (&[1.0, 1.0], 0.8)]);
        let set = mine_patterns(&sp, MinerConfig { min_support: 1, max_length: 2 }).unwrap();
        let table = MetricTable::compute(&sp, &set).unwrap();
        let raw = table.raw_weights(&LambdaWeights([0.0, 0.0, 0.0, 0.0, 1.0]));
        let sizes: Vec<f64> = set.patterns.iter().map(|p| p.size() as f64).collect();
        assert_eq!(raw, sizes);
    }

    #[test]
    fn shift_rule() {
        let (w, shift) = shift_weights(&[-5.0, 1.0, 3.0]);
        assert_eq!(shift, 5.0 + WEIGHT_EPSILON);
        let want = [WEIGHT_EPSILON, 6.0 + WEIGHT_EPSILON, 8.0 + WEIGHT_EPSILON];
        assert!(w.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-12), "{w:?}");
        let (w, shift) = shift_weights(&[2.0, 3.0]);
        assert_eq!((w, shift), (vec![2.0, 3.0], 0.0));
        let (_, shift) = shift_weights(&[0.0, 3.0]);
        assert_eq!(shift, WEIGHT_EPSILON);
    }

    #[test]
    fn single_covering_pattern_gives_one_partition() {
        let sp = space(&[(&[1.0], 0.9), (&[1.0], 0.8), (&[1.0], 0.7)]);
        let set = mine_patterns(&sp, MinerConfig { min_support: 1, max_length: 1 }).unwrap();
        let part = greedy_partition(&sp, &set, LambdaWeights::UNIT).unwrap();
        assert_eq!(part.len(), 1);
        assert_eq!(part.partitions[0].members, [0, 1, 2]);
        part.validate(sp.len()).unwrap();
    }

    #[test]
    fn disjoint_patterns_both_selected() {
        let sp = space(&[(&[0.0], 0.9), (&[0.0], 0.8), (&[1.0], 0.7), (&[1.0], 0.7)]);
        let set = mine_patterns(&sp, MinerConfig { min_support: 1, max_length: 1 }).unwrap();
        let part = greedy_partition(&sp, &set, LambdaWeights::UNIT).unwrap();
        let mut groups = part.member_groups();
        groups.sort();
        assert_eq!(groups, [vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn uncoverable_set_is_an_error() {
        let sp = space(&[(&[0.0], 0.9), (&[1.0], 0.8)]);
        let set = PatternSet { patterns: vec![eq_pattern(&sp, &[(0, 0.0)])], fallback_count: 0, warnings: vec![] };
        assert!(matches!(
            greedy_partition(&sp, &set, LambdaWeights::UNIT),
            Err(Error::Uncoverable { uncovered: 1 })
        ));
    }

    #[test]
    fn objective_is_sum_of_raw_goodness() {
        let sp = space(&[(&[0.0], 0.9), (&[0.0], 0.8), (&[1.0], 0.7), (&[1.0], 0.75)]);
        let set = mine_patterns(&sp, MinerConfig { min_support: 1, max_length: 1 }).unwrap();
        let part = greedy_partition(&sp, &set, LambdaWeights::UNIT).unwrap();
        let table = MetricTable::compute(&sp, &set).unwrap();
        let (shifted, shift) = combined_goodness(&table.metrics, &LambdaWeights::UNIT);
        assert!(shift > 0.0);
        let shifted_sum: f64 = part.partitions.iter().map(|p| shifted[p.pattern_index]).sum();
        let expected = shifted_sum - shift * part.len() as f64;
        assert!((objective_value(&part) - expected).abs() < 1e-9);
        assert_eq!(objective_value(&part), part.objective_value);
    }

    #[test]
    fn lambda_validation() {
        assert!(LambdaWeights::new([0.0; 5]).is_err());
        assert!(LambdaWeights::new([1.0, -1.0, 0.0, 0.0, 0.0]).is_err());
        assert!(LambdaWeights::new([0.0, 0.0, 0.0, 0.0, 2.0]).is_ok());
    }

    #[test]
    fn unit_grid_tunes_to_ones() {
        let sp = space(&[(&[0.0], 0.9), (&[0.0], 0.8), (&[1.0], 0.7)]);
        let set = mine_patterns(&sp, MinerConfig { min_support: 1, max_length: 1 }).unwrap();
        let t = tune_lambda(Some(&sp), &set, &[1.0]).unwrap();
        assert_eq!(t.lambda, LambdaWeights::UNIT);
        assert_eq!(t.cycles, 1);
    }

    #[test]
    fn empty_validation_falls_back() {
        let sp = space(&[(&[0.0], 0.9)]);
        let set = mine_patterns(&sp, MinerConfig { min_support: 1, max_length: 1 }).unwrap();
        let t = tune_lambda(None, &set, &DEFAULT_LAMBDA_GRID).unwrap();
        assert_eq!(t.lambda, LambdaWeights::UNIT);
        assert_eq!(t.warnings.len(), 1);
        assert!(tune_lambda(Some(&sp), &set, &[]).is_err());
    }

    #[test]
    fn constant_length_term_keeps_first_grid_value() {
        // One pattern covering two identical instances: g1..g4 are zero, so
        // the objective equals l5 and only the non-zero guard constrains l5.
        let sp = space(&[(&[1.0], 0.9), (&[1.0], 0.9)]);
        let set = mine_patterns(&sp, MinerConfig { min_support: 1, max_length: 1 }).unwrap();
        let t = tune_lambda(Some(&sp), &set, &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(&t.lambda.0[..4], &[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(t.lambda.0[4], 1.0);
    }
}
