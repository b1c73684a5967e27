//! Fold-wise accuracy, average precision and macro mAP.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classifier::ScoreMatrix;
use crate::error::{Error, Result};
use crate::store::RowMeta;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub fold: u32,
    pub value: f64,
}

/// Per-fold accuracy, ordered by fold id.
///
/// Every row in `truth` must carry exactly one label and a fold.
pub fn fold_accuracy(predictions: &[impl AsRef<str>], truth: &[RowMeta]) -> Result<Vec<FoldScore>> {
    if predictions.len() != truth.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} queries",
            predictions.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Contract("no queries to score".into()));
    }
    let mut tally: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for (pred, m) in predictions.iter().zip(truth) {
        let fold = m
            .fold
            .ok_or_else(|| Error::Contract(format!("query {:?} has no fold", m.id)))?;
        let label = m.single_label().ok_or_else(|| {
            Error::Contract(format!("query {:?} does not have exactly one label", m.id))
        })?;
        let entry = tally.entry(fold).or_default();
        entry.1 += 1;
        if pred.as_ref() == label {
            entry.0 += 1;
        }
    }
    Ok(tally
        .into_iter()
        .map(|(fold, (correct, total))| FoldScore {
            fold,
            value: correct as f64 / total as f64,
        })
        .collect())
}

/// Non-interpolated average precision.
///
/// Items are ranked by descending score with ties broken by ascending item
/// index; AP is the mean, over positive items, of the precision at the
/// positive's rank.
pub fn average_precision(scores: &[f64], positives: &[bool]) -> Result<f64> {
    if scores.len() != positives.len() {
        return Err(Error::Contract(format!(
            "{} scores for {} relevance flags",
            scores.len(),
            positives.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Contract("NaN score".into()));
    }
    let n_pos = positives.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return Err(Error::UndefinedAveragePrecision);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0f64;
    for (rank0, &item) in order.iter().enumerate() {
        if positives[item] {
            hits += 1;
            sum += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSummary {
    pub map: f64,
    /// AP per class; `None` for classes without positives.
    pub per_class: Vec<Option<f64>>,
    pub excluded_classes: usize,
}

/// Macro mAP: unweighted mean of per-class AP over classes with at least one
/// positive. `truth` is queries x classes, row-major.
pub fn mean_average_precision(scores: &ScoreMatrix, truth: &[bool]) -> Result<MapSummary> {
    let (nq, nc) = (scores.n_queries(), scores.n_classes());
    if truth.len() != nq * nc || scores.scores.len() != nq * nc {
        return Err(Error::Contract(format!(
            "truth has {} entries, score matrix is {nq}x{nc}",
            truth.len()
        )));
    }
    let mut per_class = Vec::with_capacity(nc);
    for c in 0..nc {
        let col_truth: Vec<bool> = (0..nq).map(|q| truth[q * nc + c]).collect();
        if col_truth.iter().any(|&t| t) {
            per_class.push(Some(average_precision(&scores.column(c), &col_truth)?));
        } else {
            per_class.push(None);
        }
    }
    let aps: Vec<f64> = per_class.iter().flatten().copied().collect();
    if aps.is_empty() {
        return Err(Error::Contract("no class has a positive query".into()));
    }
    Ok(MapSummary {
        map: aps.iter().sum::<f64>() / aps.len() as f64,
        excluded_classes: nc - aps.len(),
        per_class,
    })
}

/// Multi-hot truth, queries x classes, from row labels.
pub fn truth_matrix(meta: &[RowMeta], class_names: &[String]) -> Vec<bool> {
    meta.iter()
        .flat_map(|m| class_names.iter().map(move |c| m.has_label(c)))
        .collect()
}
