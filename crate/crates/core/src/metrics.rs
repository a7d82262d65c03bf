//! Evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    MicroF1,
    Auc,
    Mrr,
    Ndcg,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::MicroF1 => "micro-f1",
            Metric::Auc => "auc",
            Metric::Mrr => "mrr",
            Metric::Ndcg => "ndcg",
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Micro-averaged F1 over all classes.
///
/// Every prediction is one true positive (if right) or one false positive for
/// the predicted class plus one false negative for the true class (if wrong),
/// so with a single label per item this is accuracy.
pub fn micro_f1(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::usage(format!(
            "micro-F1 needs equal non-empty inputs, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let tp = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    let wrong = pred.len() - tp;
    let (tp, fp, fn_) = (tp as f64, wrong as f64, wrong as f64);
    Ok(2.0 * tp / (2.0 * tp + fp + fn_))
}

/// Area under the ROC curve: the chance that a random positive outscores a
/// random negative, ties counting one half. Computed from mid-ranks in
/// `O(n log n)`; every intermediate is a multiple of 1/2, so the result is
/// the same double as the pairwise count.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::usage("AUC: scores and labels differ in length"));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::numeric("auc", format!("score {s}")));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::usage("AUC needs both positive and negative labels"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the sum of positive mid-ranks (1-based), kept integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j + 1) as u128;
        let pos_in_tie = order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        twice_rank_sum += twice_mid * pos_in_tie;
        i = j + 1;
    }
    let np = n_pos as u128;
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / 2.0 / (n_pos as f64 * n_neg as f64))
}

/// Mean reciprocal rank over queries; ranks are 1-based.
pub fn mrr(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::usage("MRR of no queries"));
    }
    if ranks.contains(&0) {
        return Err(Error::usage("ranks are 1-based"));
    }
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

fn dcg(rel: &[f64]) -> f64 {
    rel.iter()
        .enumerate()
        .map(|(i, r)| r / ((i + 2) as f64).log2())
        .sum()
}

/// Mean NDCG over queries. Each list holds relevance in ranked order; a
/// query with no relevant item contributes 0.
pub fn ndcg(lists: &[Vec<f64>]) -> Result<f64> {
    if lists.is_empty() || lists.iter().any(|l| l.is_empty()) {
        return Err(Error::usage("NDCG needs non-empty relevance lists"));
    }
    let mut total = 0.0;
    for rel in lists {
        if rel.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::usage("relevance must be finite and non-negative"));
        }
        let mut ideal = rel.clone();
        ideal.sort_by(|a, b| b.total_cmp(a));
        let idcg = dcg(&ideal);
        if idcg > 0.0 {
            total += dcg(rel) / idcg;
        }
    }
    Ok(total / lists.len() as f64)
}

/// 1-based rank of candidate `truth` under `scores`; ties go against it.
pub fn rank_of(scores: &[f64], truth: usize) -> Result<usize> {
    let t = *scores
        .get(truth)
        .ok_or_else(|| Error::usage(format!("candidate {truth} out of {}", scores.len())))?;
    Ok(1 + scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| i != truth && s >= t)
        .count())
}

/// Binary relevance list of `scores` sorted descending, where only `truth` is relevant.
pub fn ranked_relevance(scores: &[f64], truth: usize) -> Result<Vec<f64>> {
    let r = rank_of(scores, truth)?;
    let mut rel = vec![0.0; scores.len()];
    rel[r - 1] = 1.0;
    Ok(rel)
}

/// Index of the largest score (first one on ties).
pub fn argmax(scores: &[f64]) -> usize {
    scores
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bs), (i, &s)| if s > bs { (i, s) } else { (bi, bs) })
        .0
}

/// Sample mean and sample standard deviation (`n − 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::usage("mean of no values"));
    }
    let n = values.len() as f64;
    // shifted by the first value so identical inputs give that value exactly
    let mean = values[0] + values.iter().map(|v| v - values[0]).sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}
