//! Classification heads.
//!
//! Every head starts from the cosine similarity between a query row and each
//! class vector. Single-label heads report a softmax over those similarities
//! and predict the argmax; multi-label heads report the per-class sigmoid of
//! the similarity with no threshold. The prototypical heads score against a
//! [`PrototypeSet`]; the zero-shot heads score against text anchors directly.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::prototype::PrototypeSet;
use crate::store::{self, EmbeddingTable};
use crate::vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    ProtoSingle,
    ProtoMulti,
    ZeroshotSingle,
    ZeroshotMulti,
}

impl Head {
    pub fn is_single(self) -> bool {
        matches!(self, Head::ProtoSingle | Head::ZeroshotSingle)
    }

    pub fn is_zero_shot(self) -> bool {
        matches!(self, Head::ZeroshotSingle | Head::ZeroshotMulti)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Head::ProtoSingle => "proto_single",
            Head::ProtoMulti => "proto_multi",
            Head::ZeroshotSingle => "zeroshot_single",
            Head::ZeroshotMulti => "zeroshot_multi",
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Queries x classes scores, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub query_ids: Vec<String>,
    pub class_names: Vec<String>,
    pub scores: Vec<f64>,
    pub head: Head,
}

impl ScoreMatrix {
    pub fn n_queries(&self) -> usize {
        self.query_ids.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn row(&self, q: usize) -> &[f64] {
        let c = self.n_classes();
        &self.scores[q * c..(q + 1) * c]
    }

    pub fn get(&self, q: usize, c: usize) -> f64 {
        self.scores[q * self.n_classes() + c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.n_queries()).map(|q| self.get(q, c)).collect()
    }
}

/// Class vectors seen as one contiguous block.
struct ClassBlock<'a> {
    dim: usize,
    data: &'a [f32],
    names: Vec<String>,
}

impl<'a> ClassBlock<'a> {
    fn from_protos(p: &'a PrototypeSet) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Contract("empty prototype set".into()));
        }
        Ok(Self {
            dim: p.dim(),
            data: p.as_slice(),
            names: p.class_names().to_vec(),
        })
    }

    fn from_table(t: &'a EmbeddingTable) -> Result<Self> {
        if t.is_empty() {
            return Err(Error::Contract("no text anchors".into()));
        }
        Ok(Self {
            dim: t.dim(),
            data: t.as_slice(),
            names: t.ids().map(str::to_owned).collect(),
        })
    }

    fn len(&self) -> usize {
        self.names.len()
    }
}

/// Raw cosine similarities, queries x classes.
fn cosine_block(queries: &EmbeddingTable, classes: &ClassBlock<'_>) -> Result<Vec<f64>> {
    if queries.dim() != classes.dim {
        return Err(Error::DimensionMismatch {
            expected: classes.dim,
            found: queries.dim(),
        });
    }
    let c = classes.len();
    let mut out = vec![0.0f64; queries.len() * c];
    out.par_chunks_mut(c.max(1))
        .enumerate()
        .for_each(|(q, row)| {
            let qv = queries.row(q);
            for (slot, cv) in row.iter_mut().zip(classes.data.chunks_exact(classes.dim)) {
                *slot = vector::dot(qv, cv).clamp(-1.0, 1.0);
            }
        });
    Ok(out)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    best
}

fn softmax_in_place(row: &mut [f64], temperature: f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = ((*x - max) / temperature).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::Contract(format!("temperature must be positive, got {t}")));
    }
    Ok(())
}

fn single(
    queries: &EmbeddingTable,
    classes: ClassBlock<'_>,
    temperature: f64,
    head: Head,
) -> Result<(Vec<String>, ScoreMatrix)> {
    check_temperature(temperature)?;
    let mut scores = cosine_block(queries, &classes)?;
    let c = classes.len();
    let mut labels = Vec::with_capacity(queries.len());
    for row in scores.chunks_exact_mut(c) {
        labels.push(classes.names[argmax(row)].clone());
        softmax_in_place(row, temperature);
    }
    Ok((
        labels,
        ScoreMatrix {
            query_ids: queries.ids().map(str::to_owned).collect(),
            class_names: classes.names,
            scores,
            head,
        },
    ))
}

fn multi(queries: &EmbeddingTable, classes: ClassBlock<'_>, head: Head) -> Result<ScoreMatrix> {
    let mut scores = cosine_block(queries, &classes)?;
    for s in &mut scores {
        *s = sigmoid(*s);
    }
    Ok(ScoreMatrix {
        query_ids: queries.ids().map(str::to_owned).collect(),
        class_names: classes.names,
        scores,
        head,
    })
}

/// Raw cosine similarities between queries and prototypes.
pub fn similarities(queries: &EmbeddingTable, protos: &PrototypeSet) -> Result<Vec<f64>> {
    cosine_block(queries, &ClassBlock::from_protos(protos)?)
}

pub fn classify_single(
    queries: &EmbeddingTable,
    protos: &PrototypeSet,
    temperature: f64,
) -> Result<(Vec<String>, ScoreMatrix)> {
    single(queries, ClassBlock::from_protos(protos)?, temperature, Head::ProtoSingle)
}

pub fn score_multi(queries: &EmbeddingTable, protos: &PrototypeSet) -> Result<ScoreMatrix> {
    multi(queries, ClassBlock::from_protos(protos)?, Head::ProtoMulti)
}

pub fn zero_shot_single(
    queries: &EmbeddingTable,
    anchors: &EmbeddingTable,
    temperature: f64,
) -> Result<(Vec<String>, ScoreMatrix)> {
    single(queries, ClassBlock::from_table(anchors)?, temperature, Head::ZeroshotSingle)
}

pub fn zero_shot_multi(queries: &EmbeddingTable, anchors: &EmbeddingTable) -> Result<ScoreMatrix> {
    multi(queries, ClassBlock::from_table(anchors)?, Head::ZeroshotMulti)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred: Option<String>,
    pub scores: serde_json::Map<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
}

/// One JSONL line per query: id, optional predicted label, and the score
/// for every class in class order.
pub fn prediction_lines(
    scores: &ScoreMatrix,
    preds: Option<&[String]>,
    config: Option<&RunConfig>,
) -> Result<Vec<PredictionLine>> {
    if let Some(p) = preds {
        if p.len() != scores.n_queries() {
            return Err(Error::Contract(format!(
                "{} predictions for {} queries",
                p.len(),
                scores.n_queries()
            )));
        }
    }
    (0..scores.n_queries())
        .map(|q| {
            let mut map = serde_json::Map::with_capacity(scores.n_classes());
            for (c, name) in scores.class_names.iter().enumerate() {
                let v = serde_json::Number::from_f64(scores.get(q, c))
                    .ok_or_else(|| Error::Invariant(format!("non-finite score for {name}")))?;
                map.insert(name.clone(), v.into());
            }
            Ok(PredictionLine {
                id: scores.query_ids[q].clone(),
                pred: preds.map(|p| p[q].clone()),
                scores: map,
                config: config.cloned(),
            })
        })
        .collect()
}

pub fn write_predictions(
    path: impl AsRef<Path>,
    scores: &ScoreMatrix,
    preds: Option<&[String]>,
    config: Option<&RunConfig>,
) -> Result<()> {
    let lines = prediction_lines(scores, preds, config)?;
    store::write_jsonl(path.as_ref(), &lines)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionLine>> {
    store::read_jsonl(path.as_ref())
}
