use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::biomarkers::percentile;

use super::EvalError;

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l).count();
    (pos, labels.len() - pos)
}

/// Probability that a random positive outscores a random negative, ties
/// counted ½, from midrank sums in O(n log n).
pub fn c_statistic(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass { pos, neg });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps midranks integral.
    let mut rank2_pos: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share the midrank (i + j + 2) / 2.
        let mid2 = (i + j + 2) as u128;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        rank2_pos += mid2 * tied_pos;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    let u2 = rank2_pos - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores ≥ threshold are called positive; the first point uses +∞.
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC curve with one point per distinct score, and its trapezoidal area.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve, EvalError> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass { pos, neg });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0usize, 0usize);
    // Integer trapezoid sum: twice the area in units of 1/(pos·neg).
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += ((fp - fp0) * (tp + tp0)) as u128;
        points.push(RocPoint { fpr: fp as f64 / neg as f64, tpr: tp as f64 / pos as f64, threshold });
    }
    let auc = area2 as f64 / (2 * pos as u128 * neg as u128) as f64;
    Ok(RocCurve { points, auc })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapCi {
    pub low: f64,
    pub high: f64,
    /// Single-class resamples that were redrawn.
    pub redrawn: usize,
}

/// Percentile bootstrap of the c-statistic, resampling whole clusters
/// (`clusters[i]` names item `i`'s cluster, e.g. its user).
pub fn bootstrap_ci_clustered(
    scores: &[f64],
    labels: &[bool],
    clusters: &[usize],
    n_boot: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapCi, EvalError> {
    let point = c_statistic(scores, labels)?;
    let n_clusters = clusters.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for (i, &c) in clusters.iter().enumerate() {
        members[c].push(i);
    }
    members.retain(|m| !m.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut aucs = Vec::with_capacity(n_boot);
    let mut redrawn = 0;
    let (mut s, mut l) = (Vec::new(), Vec::new());
    while aucs.len() < n_boot {
        s.clear();
        l.clear();
        for _ in 0..members.len() {
            for &i in &members[rng.gen_range(0..members.len())] {
                s.push(scores[i]);
                l.push(labels[i]);
            }
        }
        match c_statistic(&s, &l) {
            Ok(a) => aucs.push(a),
            Err(_) => {
                redrawn += 1;
                if redrawn > n_boot {
                    return Err(EvalError::DegenerateBootstrap { redrawn, kept: aucs.len() });
                }
            }
        }
    }
    if redrawn * 2 > redrawn + aucs.len() {
        return Err(EvalError::DegenerateBootstrap { redrawn, kept: aucs.len() });
    }
    let tail = (1.0 - level) / 2.0;
    let low = percentile(&aucs, tail).unwrap_or(point).min(point);
    let high = percentile(&aucs, 1.0 - tail).unwrap_or(point).max(point);
    Ok(BootstrapCi { low, high, redrawn })
}

/// Item-level percentile bootstrap.
pub fn bootstrap_ci(
    scores: &[f64],
    labels: &[bool],
    n_boot: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapCi, EvalError> {
    let clusters: Vec<usize> = (0..scores.len()).collect();
    bootstrap_ci_clustered(scores, labels, &clusters, n_boot, level, seed)
}
