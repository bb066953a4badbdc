//! Candidate pattern mining and per-pattern coverage statistics.
//!
//! Patterns are mined Apriori-style as conjunctions of equality predicates over
//! (discretized) feature values. Range operators only show up when a binned
//! numeric predicate is rendered for humans, or when a caller builds a pattern
//! by hand.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{SearchSpace, Value};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Operator {
    Eq,
    Ne,
    Le,
    Lt,
    Ge,
    Gt,
}

impl Operator {
    pub fn symbol(self) -> &'static str {
        match self {
            Operator::Eq => "=",
            Operator::Ne => "!=",
            Operator::Le => "<=",
            Operator::Lt => "<",
            Operator::Ge => ">=",
            Operator::Gt => ">",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Predicate {
    pub feature: usize,
    pub op: Operator,
    pub value: Value,
}

impl Predicate {
    pub fn eq(feature: usize, value: Value) -> Self {
        Self { feature, op: Operator::Eq, value }
    }

    /// `edges` are the bin edges of the feature when the stored values are bin
    /// indices. Range operators against a binned feature hold only when the
    /// whole bin lies on the right side of the threshold.
    pub fn matches(&self, x: &Value, edges: Option<&[f64]>) -> bool {
        match self.op {
            Operator::Eq => *x == self.value,
            Operator::Ne => *x != self.value,
            op => {
                let (Some(v), Some(threshold)) = (x.as_f64(), self.value.as_f64()) else {
                    return false;
                };
                match edges {
                    Some(edges) => {
                        let bin = v as usize;
                        let upper = edges.get(bin).copied().unwrap_or(f64::INFINITY);
                        let lower = if bin == 0 {
                            f64::NEG_INFINITY
                        } else {
                            edges.get(bin - 1).copied().unwrap_or(f64::INFINITY)
                        };
                        // Bin b holds values in (lower, upper].
                        match op {
                            Operator::Le => upper <= threshold,
                            Operator::Lt => upper < threshold,
                            Operator::Ge | Operator::Gt => lower >= threshold,
                            _ => unreachable!(),
                        }
                    }
                    None => match op {
                        Operator::Le => v <= threshold,
                        Operator::Lt => v < threshold,
                        Operator::Ge => v >= threshold,
                        Operator::Gt => v > threshold,
                        _ => unreachable!(),
                    },
                }
            }
        }
    }
}

/// A conjunction of predicates on distinct features.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pattern {
    pub predicates: Vec<Predicate>,
    pub support: usize,
}

impl Pattern {
    /// Builds a pattern and counts its support on `space`.
    pub fn new(predicates: Vec<Predicate>, space: &SearchSpace) -> Result<Self> {
        if predicates.is_empty() {
            return Err(Error::validation("pattern needs at least one predicate"));
        }
        for p in &predicates {
            if p.feature >= space.schema().len() {
                return Err(Error::validation(format!("feature index {} out of range", p.feature)));
            }
        }
        let mut pattern = Self { predicates, support: 0 };
        pattern.support = covered_by(&pattern, space).len();
        Ok(pattern)
    }

    pub fn size(&self) -> usize {
        self.predicates.len()
    }

    pub fn matches(&self, features: &[Value], bins: &[Option<Vec<f64>>]) -> bool {
        self.predicates.iter().all(|p| {
            features
                .get(p.feature)
                .is_some_and(|x| p.matches(x, bins.get(p.feature).and_then(|b| b.as_deref())))
        })
    }

    /// Human readable form, e.g. `color=red AND length>12.5`.
    pub fn describe(&self, space: &SearchSpace) -> String {
        self.predicates
            .iter()
            .map(|p| describe_predicate(p, space))
            .collect::<Vec<_>>()
            .join(" AND ")
    }
}

fn describe_predicate(p: &Predicate, space: &SearchSpace) -> String {
    let name = space
        .schema()
        .features
        .get(p.feature)
        .map(|f| f.name.as_str())
        .unwrap_or("?");
    let edges = space.bins().get(p.feature).and_then(|b| b.as_deref());
    match (p.op, edges, p.value.as_f64()) {
        (Operator::Eq, Some(edges), Some(bin)) if !edges.is_empty() => {
            let bin = bin as usize;
            if bin == 0 {
                format!("{name}<={}", edges[0])
            } else if bin >= edges.len() {
                format!("{name}>{}", edges[edges.len() - 1])
            } else {
                format!("{name}>{} AND {name}<={}", edges[bin - 1], edges[bin])
            }
        }
        _ => format!("{name}{}{}", p.op.symbol(), p.value),
    }
}

/// Indices (into `space`) of the instances satisfying every predicate.
pub fn covered_by(pattern: &Pattern, space: &SearchSpace) -> Vec<usize> {
    space
        .instances()
        .iter()
        .enumerate()
        .filter(|(_, inst)| pattern.matches(&inst.features, space.bins()))
        .map(|(i, _)| i)
        .collect()
}

/// Same as [`covered_by`] but by instance id.
pub fn covered_ids(pattern: &Pattern, space: &SearchSpace) -> Vec<String> {
    covered_by(pattern, space)
        .into_iter()
        .map(|i| space.instance(i).id.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternStats {
    pub centroid: Vec<f64>,
    pub mean_confidence: f64,
    pub covered: Vec<usize>,
}

pub fn pattern_stats(pattern: &Pattern, space: &SearchSpace) -> Result<PatternStats> {
    stats_of(covered_by(pattern, space), space)
}

/// Centroid and mean confidence of a set of member indices.
pub fn stats_of(covered: Vec<usize>, space: &SearchSpace) -> Result<PatternStats> {
    if covered.is_empty() {
        return Err(Error::EmptyCoverage);
    }
    let n = covered.len() as f64;
    let mut centroid = vec![0.0; space.encoder().width()];
    let mut conf = 0.0;
    for &i in &covered {
        for (c, x) in centroid.iter_mut().zip(space.encoded(i)) {
            *c += x;
        }
        conf += space.instance(i).confidence;
    }
    centroid.iter_mut().for_each(|c| *c /= n);
    Ok(PatternStats { centroid, mean_confidence: conf / n, covered })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinerConfig {
    pub min_support: usize,
    pub max_length: usize,
}

impl MinerConfig {
    /// `min_support = max(2, ceil(0.05 N))` capped at `N`, `max_length = 3`.
    pub fn default_for(n: usize) -> Self {
        let min_support = ((0.05 * n as f64).ceil() as usize).max(2).min(n.max(1));
        Self { min_support, max_length: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatternSet {
    pub patterns: Vec<Pattern>,
    /// How many of the trailing patterns were appended to restore coverage.
    pub fallback_count: usize,
    pub warnings: Vec<String>,
}

impl PatternSet {
    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    /// One line per pattern: `description | support=k`.
    pub fn to_text(&self, space: &SearchSpace) -> String {
        self.patterns
            .iter()
            .map(|p| format!("{} | support={}\n", p.describe(space), p.support))
            .collect()
    }
}

type Item = (usize, Value);

struct Itemset {
    items: Vec<Item>,
    cover: Vec<usize>,
}

fn intersect(a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

fn single_items(space: &SearchSpace) -> Vec<Itemset> {
    let mut items: std::collections::BTreeMap<Item, Vec<usize>> = Default::default();
    for (idx, inst) in space.instances().iter().enumerate() {
        for (f, v) in inst.features.iter().enumerate() {
            items.entry((f, v.clone())).or_default().push(idx);
        }
    }
    items
        .into_iter()
        .map(|(item, cover)| Itemset { items: vec![item], cover })
        .collect()
}

/// Frequent conjunctions of equality predicates, in lexicographic predicate
/// order. When the frequent patterns leave some instance uncovered, the most
/// frequent single-predicate pattern of each uncovered instance is appended so
/// that a complete cover always exists.
pub fn mine_patterns(space: &SearchSpace, config: MinerConfig) -> Result<PatternSet> {
    let n = space.len();
    if config.min_support == 0 || config.min_support > n.max(1) {
        return Err(Error::validation(format!(
            "min_support {} outside [1, {n}]",
            config.min_support
        )));
    }
    if config.max_length == 0 {
        return Err(Error::validation("max_length must be at least 1"));
    }
    if space.schema().is_empty() {
        return Err(Error::validation("schema has no features to mine"));
    }

    let singles = single_items(space);
    let mut level: Vec<Itemset> = singles
        .iter()
        .filter(|s| s.cover.len() >= config.min_support)
        .map(|s| Itemset { items: s.items.clone(), cover: s.cover.clone() })
        .collect();
    let mut frequent: Vec<Itemset> = Vec::new();
    let mut length = 1;
    while !level.is_empty() {
        let next = if length < config.max_length {
            extend_level(&level, config.min_support)
        } else {
            Vec::new()
        };
        frequent.append(&mut level);
        level = next;
        length += 1;
    }
    frequent.sort_by(|a, b| a.items.cmp(&b.items));

    let mut patterns: Vec<Pattern> = frequent
        .into_iter()
        .map(|s| Pattern {
            support: s.cover.len(),
            predicates: s
                .items
                .into_iter()
                .map(|(f, v)| Predicate::eq(f, v))
                .collect(),
        })
        .collect();

    let mut covered = vec![false; n];
    for s in &patterns {
        for &i in &covered_by(s, space) {
            covered[i] = true;
        }
    }
    let mut warnings = Vec::new();
    let mut fallback_count = 0;
    if covered.iter().any(|c| !c) {
        let support_of = |item: &Item| {
            singles
                .iter()
                .find(|s| s.items[0] == *item)
                .map_or(0, |s| s.cover.len())
        };
        let mut added: HashSet<Item> = HashSet::new();
        for idx in 0..n {
            if covered[idx] {
                continue;
            }
            let features = &space.instance(idx).features;
            // Highest support wins, lowest feature index on ties.
            let item = features
                .iter()
                .enumerate()
                .map(|(f, v)| (f, v.clone()))
                .max_by(|a, b| support_of(a).cmp(&support_of(b)).then(b.0.cmp(&a.0)))
                .expect("schema is non-empty");
            if added.insert(item.clone()) {
                let pattern = Pattern {
                    support: support_of(&item),
                    predicates: vec![Predicate::eq(item.0, item.1)],
                };
                for &i in &covered_by(&pattern, space) {
                    covered[i] = true;
                }
                patterns.push(pattern);
                fallback_count += 1;
            }
        }
        let msg = format!(
            "frequent patterns left instances uncovered; appended {fallback_count} fallback pattern(s)"
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(PatternSet { patterns, fallback_count, warnings })
}

fn extend_level(level: &[Itemset], min_support: usize) -> Vec<Itemset> {
    let known: HashSet<&[Item]> = level.iter().map(|s| s.items.as_slice()).collect();
    let mut sorted: Vec<&Itemset> = level.iter().collect();
    sorted.sort_by(|a, b| a.items.cmp(&b.items));
    let mut next = Vec::new();
    for (i, a) in sorted.iter().enumerate() {
        let k = a.items.len();
        for b in &sorted[i + 1..] {
            if a.items[..k - 1] != b.items[..k - 1] {
                break;
            }
            let (la, lb) = (&a.items[k - 1], &b.items[k - 1]);
            if la.0 == lb.0 {
                continue;
            }
            let mut items = a.items.clone();
            items.push(lb.clone());
            let all_subsets_frequent = (0..items.len() - 2).all(|skip| {
                let sub: Vec<Item> = items
                    .iter()
                    .enumerate()
                    .filter(|(n, _)| *n != skip)
                    .map(|(_, it)| it.clone())
                    .collect();
                known.contains(sub.as_slice())
            });
            if !all_subsets_frequent {
                continue;
            }
            let cover = intersect(&a.cover, &b.cover);
            if cover.len() >= min_support {
                next.push(Itemset { items, cover });
            }
        }
    }
    next
}
