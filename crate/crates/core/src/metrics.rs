//! Evaluation metrics: MSE, Spearman rank correlation, ranking reports.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Input(alloc::format!(
            "length mismatch: {} predictions, {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Input("mse of empty vectors".into()));
    }
    let s: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(s / pred.len() as f64)
}

/// 1-based ranks in ascending order; tied values share their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    // + 0.0 folds -0.0 into 0.0 so signed zeros tie
    order.sort_by(|&a, &b| (values[a] + 0.0).total_cmp(&(values[b] + 0.0)));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j hold ranks i+1..=j+1
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input"));
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Pearson correlation of average ranks.
pub fn spearman(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Input(alloc::format!(
            "length mismatch: {} predictions, {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two samples"));
    }
    pearson(&average_ranks(pred), &average_ranks(target))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    /// Index in the input vectors.
    pub index: usize,
    pub predicted: f64,
    pub actual: f64,
    pub predicted_rank: usize,
    pub actual_rank: usize,
    /// `predicted_rank − actual_rank`.
    pub rank_diff: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub n: usize,
    pub entries: Vec<RankEntry>,
}

/// Descending positions (1-based); ties keep input order.
fn descending_positions(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| (values[b] + 0.0).total_cmp(&(values[a] + 0.0)));
    let mut pos = vec![0; values.len()];
    for (p, &i) in order.iter().enumerate() {
        pos[i] = p + 1;
    }
    pos
}

/// Top-`k` entries by predicted score with their rank offsets against the
/// true ranking.
pub fn ranking_report(pred: &[f64], target: &[f64], k: usize) -> Result<RankingReport> {
    if pred.len() != target.len() {
        return Err(Error::Input("length mismatch".into()));
    }
    let n = pred.len();
    if k > n {
        return Err(Error::Input(alloc::format!("k = {k} exceeds {n} entries")));
    }
    let p_pos = descending_positions(pred);
    let t_pos = descending_positions(target);
    let mut by_pred: Vec<usize> = (0..n).collect();
    by_pred.sort_by_key(|&i| p_pos[i]);
    let entries = by_pred
        .into_iter()
        .take(k)
        .map(|i| RankEntry {
            index: i,
            predicted: pred[i],
            actual: target[i],
            predicted_rank: p_pos[i],
            actual_rank: t_pos[i],
            rank_diff: p_pos[i] as i64 - t_pos[i] as i64,
        })
        .collect();
    Ok(RankingReport { n, entries })
}

/// Per-head MSE and Spearman over N samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub labels: Vec<String>,
    pub mse: Vec<f64>,
    /// `None` where the correlation is undefined (constant vectors).
    pub spearman: Vec<Option<f64>>,
    pub n: usize,
}

impl EvalReport {
    /// `pred[i][k]`, `target[i][k]` for sample `i`, head `k`.
    pub fn compute(labels: Vec<String>, pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<Self> {
        if pred.len() != target.len() {
            return Err(Error::Input("sample count mismatch".into()));
        }
        let k = labels.len();
        if pred.iter().chain(target).any(|r| r.len() != k) {
            return Err(Error::Input("head count mismatch".into()));
        }
        let mut mses = Vec::with_capacity(k);
        let mut rhos = Vec::with_capacity(k);
        for h in 0..k {
            let p: Vec<f64> = pred.iter().map(|r| r[h]).collect();
            let t: Vec<f64> = target.iter().map(|r| r[h]).collect();
            mses.push(mse(&p, &t)?);
            rhos.push(spearman(&p, &t).ok());
        }
        Ok(EvalReport {
            labels,
            mse: mses,
            spearman: rhos,
            n: pred.len(),
        })
    }
}
