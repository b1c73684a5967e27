//! End-to-end evaluation: cross-validated accuracy for single-label data,
//! split-based mAP for multi-label data, and sweeps over `k` and prompt
//! templates.
//!
//! Single-label heads evaluate every fold present in the audio metadata. For
//! each evaluation fold the prototypes come from the pool selected by
//! [`PoolPolicy`] and every clip of the fold is classified.
//!
//! Multi-label heads reuse the fold field as a split marker: fold 0 is the
//! retrieval pool, fold 1 is the test set.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{self, Head};
use crate::config::{PipelineConfig, PoolPolicy, PrototypeSource, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::{self, FoldScore};
use crate::prompt::{render_prompts, PromptTemplate};
use crate::prototype::{self, PrototypeSet};
use crate::store::{EmbeddingTable, RowMeta};

pub const TRAIN_SPLIT: u32 = 0;
pub const TEST_SPLIT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Map,
}

impl Metric {
    pub fn for_head(head: Head) -> Self {
        if head.is_single() {
            Metric::Accuracy
        } else {
            Metric::Map
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: RunConfig,
    pub metric: Metric,
    pub head: Head,
    pub per_fold: Vec<FoldScore>,
    pub aggregate: f64,
    pub n_queries: usize,
    /// Classes without any positive test clip (mAP only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excluded_classes: Option<usize>,
}

impl EvalReport {
    fn new(
        config: RunConfig,
        head: Head,
        per_fold: Vec<FoldScore>,
        n_queries: usize,
        excluded_classes: Option<usize>,
    ) -> Result<Self> {
        if per_fold.is_empty() {
            return Err(Error::Invariant("report without folds".into()));
        }
        let aggregate = per_fold.iter().map(|f| f.value).sum::<f64>() / per_fold.len() as f64;
        let report = Self {
            config,
            metric: Metric::for_head(head),
            head,
            per_fold,
            aggregate,
            n_queries,
            excluded_classes,
        };
        report.check()?;
        Ok(report)
    }

    /// Metric values lie in `[0, 1]` and the aggregate is the fold mean.
    pub fn check(&self) -> Result<()> {
        for f in &self.per_fold {
            if !(0.0..=1.0).contains(&f.value) {
                return Err(Error::Invariant(format!(
                    "fold {} metric {} outside [0, 1]",
                    f.fold, f.value
                )));
            }
        }
        let mean = self.per_fold.iter().map(|f| f.value).sum::<f64>() / self.per_fold.len() as f64;
        if (mean - self.aggregate).abs() > 1e-9 {
            return Err(Error::Invariant(format!(
                "aggregate {} differs from fold mean {mean}",
                self.aggregate
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// A report plus the prototypes built for each evaluation fold.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: EvalReport,
    /// Member indices refer to rows of the full audio table. Empty for
    /// zero-shot heads.
    pub prototypes: Vec<(u32, PrototypeSet)>,
}

fn require_fold(m: &RowMeta) -> Result<u32> {
    m.fold
        .ok_or_else(|| Error::Contract(format!("audio row {:?} has no fold", m.id)))
}

fn build_prototypes(
    audio: &EmbeddingTable,
    text: &EmbeddingTable,
    pool: &[usize],
    cfg: &PipelineConfig,
) -> Result<PrototypeSet> {
    let pool_table = audio.select(pool)?;
    let mut protos = match cfg.prototypes {
        PrototypeSource::TextAnchored => {
            if cfg.k == 0 || cfg.k > pool_table.len() {
                return Err(Error::Bounds(format!(
                    "retrieval pool has {} rows, fewer than k = {}",
                    pool_table.len(),
                    cfg.k
                )));
            }
            prototype::build_text_anchored(text, &pool_table, cfg.k)?
        }
        PrototypeSource::Supervised => {
            let names: Vec<String> = text.ids().map(str::to_owned).collect();
            prototype::build_supervised(&pool_table, &names)?
        }
    };
    protos.remap_members(pool)?;
    Ok(protos)
}

fn select_pool(audio: &EmbeddingTable, policy: PoolPolicy, keep: impl Fn(u32) -> bool) -> Result<Vec<usize>> {
    let mut pool = Vec::new();
    for (i, m) in audio.meta().iter().enumerate() {
        if policy == PoolPolicy::AllAudio || keep(require_fold(m)?) {
            pool.push(i);
        }
    }
    Ok(pool)
}

fn run_single(
    audio: &EmbeddingTable,
    text: &EmbeddingTable,
    cfg: &PipelineConfig,
) -> Result<PipelineRun> {
    let mut folds = BTreeSet::new();
    for m in audio.meta() {
        folds.insert(require_fold(m)?);
        if m.single_label().is_none() {
            return Err(Error::Contract(format!(
                "audio row {:?} does not have exactly one label",
                m.id
            )));
        }
    }
    let mut predictions = vec![String::new(); audio.len()];
    let mut prototypes = Vec::new();
    for &fold in &folds {
        let queries_idx: Vec<usize> = (0..audio.len())
            .filter(|&i| audio.meta()[i].fold == Some(fold))
            .collect();
        let queries = audio.select(&queries_idx)?;
        let labels = if cfg.head.is_zero_shot() {
            classifier::zero_shot_single(&queries, text, cfg.temperature)?.0
        } else {
            let pool = select_pool(audio, cfg.pool_policy, |f| f != fold)?;
            let protos = build_prototypes(audio, text, &pool, cfg)?;
            let labels = classifier::classify_single(&queries, &protos, cfg.temperature)?.0;
            prototypes.push((fold, protos));
            labels
        };
        for (i, label) in queries_idx.into_iter().zip(labels) {
            predictions[i] = label;
        }
    }
    let per_fold = metrics::fold_accuracy(&predictions, audio.meta())?;
    let report = EvalReport::new(RunConfig::for_pipeline(cfg), cfg.head, per_fold, audio.len(), None)?;
    Ok(PipelineRun { report, prototypes })
}

fn run_multi(
    audio: &EmbeddingTable,
    text: &EmbeddingTable,
    cfg: &PipelineConfig,
) -> Result<PipelineRun> {
    let mut test_idx = Vec::new();
    for (i, m) in audio.meta().iter().enumerate() {
        match require_fold(m)? {
            TRAIN_SPLIT => {}
            TEST_SPLIT => {
                if m.labels.is_none() {
                    return Err(Error::Contract(format!("test clip {:?} has no labels", m.id)));
                }
                test_idx.push(i);
            }
            other => {
                return Err(Error::Contract(format!(
                    "multi-label split must be {TRAIN_SPLIT} (train) or {TEST_SPLIT} (test), row {:?} has {other}",
                    m.id
                )))
            }
        }
    }
    if test_idx.is_empty() {
        return Err(Error::Contract("no test clips (fold 1)".into()));
    }
    let queries = audio.select(&test_idx)?;
    let mut prototypes = Vec::new();
    let scores = if cfg.head.is_zero_shot() {
        classifier::zero_shot_multi(&queries, text)?
    } else {
        let pool = select_pool(audio, cfg.pool_policy, |f| f == TRAIN_SPLIT)?;
        let protos = build_prototypes(audio, text, &pool, cfg)?;
        let scores = classifier::score_multi(&queries, &protos)?;
        prototypes.push((TEST_SPLIT, protos));
        scores
    };
    let truth = metrics::truth_matrix(queries.meta(), &scores.class_names);
    let summary = metrics::mean_average_precision(&scores, &truth)?;
    let per_fold = vec![FoldScore {
        fold: TEST_SPLIT,
        value: summary.map,
    }];
    let report = EvalReport::new(
        RunConfig::for_pipeline(cfg),
        cfg.head,
        per_fold,
        queries.len(),
        Some(summary.excluded_classes),
    )?;
    Ok(PipelineRun { report, prototypes })
}

/// Runs the configured head over `audio` with `text` anchors (ids are class
/// names) and keeps the per-fold prototypes.
pub fn run_pipeline_detailed(
    audio: &EmbeddingTable,
    text: &EmbeddingTable,
    cfg: &PipelineConfig,
) -> Result<PipelineRun> {
    text.check_dim(audio)?;
    if audio.is_empty() || text.is_empty() {
        return Err(Error::Contract("audio and text tables must be non-empty".into()));
    }
    if cfg.head.is_single() {
        run_single(audio, text, cfg)
    } else {
        run_multi(audio, text, cfg)
    }
}

pub fn run_pipeline(
    audio: &EmbeddingTable,
    text: &EmbeddingTable,
    cfg: &PipelineConfig,
) -> Result<EvalReport> {
    run_pipeline_detailed(audio, text, cfg).map(|r| r.report)
}

/// One pipeline run per distinct `k`, ascending in `k`.
pub fn sweep_k(
    audio: &EmbeddingTable,
    text: &EmbeddingTable,
    k_values: &[usize],
    cfg: &PipelineConfig,
) -> Result<Vec<(usize, f64)>> {
    let ks: BTreeSet<usize> = k_values.iter().copied().collect();
    if ks.is_empty() {
        return Err(Error::Contract("empty k list".into()));
    }
    ks.into_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|k| {
            let cfg = cfg.clone().with_k(k);
            Ok((k, run_pipeline(audio, text, &cfg)?.aggregate))
        })
        .collect()
}

/// Text anchors for one template: rendered prompts looked up in `lookup`,
/// with the label names as row ids.
pub fn anchors_for_template(
    label_names: &[String],
    template: &PromptTemplate,
    lookup: &HashMap<String, Vec<f32>>,
) -> Result<EmbeddingTable> {
    let rendered = render_prompts(label_names, template)?;
    let mut rows = Vec::with_capacity(rendered.len());
    for prompt in &rendered {
        let v = lookup.get(prompt).ok_or_else(|| Error::MissingEmbedding {
            prompt: prompt.clone(),
        })?;
        rows.push(v.as_slice());
    }
    let meta = label_names
        .iter()
        .map(|l| RowMeta::new(l.clone()).with_labels([l.clone()]))
        .collect();
    EmbeddingTable::from_rows(&rows, meta)
}

/// One evaluation per template, sorted by metric descending (stable).
pub fn sweep_prompts(
    audio: &EmbeddingTable,
    label_names: &[String],
    templates: &[PromptTemplate],
    lookup: &HashMap<String, Vec<f32>>,
    cfg: &PipelineConfig,
) -> Result<Vec<(PromptTemplate, f64)>> {
    if templates.is_empty() {
        return Err(Error::Contract("no templates".into()));
    }
    let mut rows: Vec<(PromptTemplate, f64)> = templates
        .par_iter()
        .map(|t| {
            let text = anchors_for_template(label_names, t, lookup)?;
            Ok((t.clone(), run_pipeline(audio, &text, cfg)?.aggregate))
        })
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(rows)
}

/// Prompt string to embedding, from a table whose ids are rendered prompts.
pub fn lookup_from_table(table: &EmbeddingTable) -> HashMap<String, Vec<f32>> {
    table
        .meta()
        .iter()
        .enumerate()
        .map(|(i, m)| (m.id.clone(), table.row(i).to_vec()))
        .collect()
}

pub fn k_sweep_csv(rows: &[(usize, f64)]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["k", "metric"]).map_err(csv_err)?;
    for (k, m) in rows {
        w.write_record([k.to_string(), m.to_string()]).map_err(csv_err)?;
    }
    finish_csv(w)
}

pub fn prompt_sweep_csv(rows: &[(PromptTemplate, f64)]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["prompt", "metric"]).map_err(csv_err)?;
    for (t, m) in rows {
        w.write_record([t.display_key(), m.to_string()]).map_err(csv_err)?;
    }
    finish_csv(w)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Format(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Invariant(format!("csv not utf-8: {e}")))
}
