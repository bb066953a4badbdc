use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::SearchSpace;
use crate::error::{Error, Result};

pub const KMEANS_RESTARTS: usize = 25;
const MAX_ITERATIONS: usize = 100;

/// What the clustering baseline sees of each instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KMeansKind {
    Features,
    Conf,
    /// Confidence clusters first, each split on features.
    Both,
}

impl KMeansKind {
    pub const ALL: [KMeansKind; 3] = [KMeansKind::Features, KMeansKind::Conf, KMeansKind::Both];

    pub fn name(self) -> &'static str {
        match self {
            KMeansKind::Features => "kmeans_features",
            KMeansKind::Conf => "kmeans_conf",
            KMeansKind::Both => "kmeans_both",
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seeds(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    let mut centers = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            pick
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen[pick] = true;
        centers.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[pick]));
        }
    }
    centers
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> (Vec<usize>, f64) {
    let dim = points[0].len();
    let k = centers.len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, _) = nearest(p, &centers);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&labels) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &c)| sq_dist(p, &centers[c])).sum();
    (labels, inertia)
}

/// Lloyd's k-means with k-means++ seeding; the lowest-inertia labelling over
/// `restarts` runs wins.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, restarts: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::validation(format!("k = {k} with {n} points")));
    }
    if k == n {
        return Ok((0..n).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let seeds = plus_plus_seeds(points, k, &mut rng);
        let (labels, inertia) = lloyd(points, seeds);
        if best.as_ref().is_none_or(|(_, b)| inertia < *b) {
            best = Some((labels, inertia));
        }
    }
    Ok(best.expect("at least one restart").0)
}

/// Non-empty clusters as member lists, ordered by their first member.
fn groups_from_labels(members: &[usize], labels: &[usize]) -> Vec<Vec<usize>> {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); k];
    for (&m, &l) in members.iter().zip(labels) {
        groups[l].push(m);
    }
    groups.retain(|g| !g.is_empty());
    groups.sort_by_key(|g| g[0]);
    groups
}

/// Clustering baseline partitioning of the whole search space.
pub fn kmeans_partitions(space: &SearchSpace, kind: KMeansKind, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = space.len();
    if k == 0 || k > n {
        return Err(Error::validation(format!("k = {k} exceeds search space of {n}")));
    }
    let all: Vec<usize> = (0..n).collect();
    let features = |idx: &[usize]| -> Vec<Vec<f64>> { idx.iter().map(|&i| space.encoded(i).to_vec()).collect() };
    let confidences = |idx: &[usize]| -> Vec<Vec<f64>> { idx.iter().map(|&i| vec![space.instance(i).confidence]).collect() };
    match kind {
        KMeansKind::Features => Ok(groups_from_labels(&all, &kmeans(&features(&all), k, seed, KMEANS_RESTARTS)?)),
        KMeansKind::Conf => Ok(groups_from_labels(&all, &kmeans(&confidences(&all), k, seed, KMEANS_RESTARTS)?)),
        KMeansKind::Both => {
            let kc = ((k as f64).sqrt().round() as usize).clamp(1, k);
            let kf = k.div_ceil(kc);
            let coarse = groups_from_labels(&all, &kmeans(&confidences(&all), kc, seed, KMEANS_RESTARTS)?);
            let mut out = Vec::new();
            for (c, members) in coarse.iter().enumerate() {
                let sub_k = kf.min(members.len());
                let labels = kmeans(&features(members), sub_k, seed.wrapping_add(c as u64 + 1), KMEANS_RESTARTS)?;
                out.extend(groups_from_labels(members, &labels));
            }
            out.sort_by_key(|g| g[0]);
            Ok(out)
        }
    }
}
