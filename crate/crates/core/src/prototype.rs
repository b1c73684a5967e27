//! Class prototypes: unit-norm centroids of audio clusters.
//!
//! Two builders are provided. [`build_text_anchored`] uses each text
//! embedding as a query, retrieves its `k` nearest audio rows and averages
//! them. [`build_supervised`] groups audio rows by their ground-truth labels
//! instead and serves as the label-supervised baseline.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::search;
use crate::store::{self, EmbeddingTable, RowMeta};
use crate::vector;

/// Default cluster size, selected by grid search on ESC-50 and reused for
/// every dataset.
pub const DEFAULT_K: usize = 35;

pub const SUPERVISED_ANCHOR: &str = "supervised";

/// Centroids whose pre-normalization norm falls below this are rejected.
const MIN_CENTROID_NORM: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassProvenance {
    pub anchor_id: String,
    /// Rows of the source audio table. For text-anchored prototypes these
    /// are in retrieval rank order; for supervised ones in row order.
    pub members: Vec<usize>,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    class_names: Vec<String>,
    dim: usize,
    vectors: Vec<f32>,
    provenance: Vec<ClassProvenance>,
}

#[derive(Serialize, Deserialize)]
struct PrototypeLine {
    id: String,
    anchor_id: String,
    members: Vec<usize>,
    k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<RunConfig>,
}

impl PrototypeSet {
    fn from_parts(
        class_names: Vec<String>,
        dim: usize,
        vectors: Vec<f32>,
        provenance: Vec<ClassProvenance>,
    ) -> Result<Self> {
        let set = Self {
            class_names,
            dim,
            vectors,
            provenance,
        };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        let n = self.class_names.len();
        if self.vectors.len() != n * self.dim || self.provenance.len() != n {
            return Err(Error::Invariant(format!(
                "prototype set shape mismatch: {n} classes, {} values, {} provenance entries",
                self.vectors.len(),
                self.provenance.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &self.class_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Consistency(format!("duplicate class name {name:?}")));
            }
        }
        for (name, p) in self.class_names.iter().zip(&self.provenance) {
            if p.members.len() != p.k {
                return Err(Error::Consistency(format!(
                    "class {name:?} lists {} members but k = {}",
                    p.members.len(),
                    p.k
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_names.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn vector(&self, class: usize) -> &[f32] {
        &self.vectors[class * self.dim..(class + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.vectors
    }

    pub fn vectors(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.vectors.chunks_exact(self.dim)
    }

    pub fn provenance(&self) -> &[ClassProvenance] {
        &self.provenance
    }

    /// Reinterprets the prototypes as a table whose ids are the class names.
    pub fn to_table(&self) -> Result<EmbeddingTable> {
        let meta = self.class_names.iter().map(RowMeta::new).collect();
        EmbeddingTable::new(self.dim, self.vectors.clone(), meta)
    }

    /// Rewrites member indices through `map` (e.g. from a pool subset back to
    /// the full audio table).
    pub fn remap_members(&mut self, map: &[usize]) -> Result<()> {
        for p in &mut self.provenance {
            for m in &mut p.members {
                *m = *map.get(*m).ok_or_else(|| {
                    Error::Invariant(format!("member {m} outside remap table of {}", map.len()))
                })?;
            }
        }
        Ok(())
    }

    pub fn save(
        &self,
        matrix_path: impl AsRef<Path>,
        meta_path: impl AsRef<Path>,
        config: Option<&RunConfig>,
    ) -> Result<()> {
        store::write_embt(matrix_path, self.dim, &self.vectors)?;
        let lines: Vec<PrototypeLine> = self
            .class_names
            .iter()
            .zip(&self.provenance)
            .map(|(name, p)| PrototypeLine {
                id: name.clone(),
                anchor_id: p.anchor_id.clone(),
                members: p.members.clone(),
                k: p.k,
                config: config.cloned(),
            })
            .collect();
        store::write_jsonl(meta_path.as_ref(), &lines)
    }

    pub fn load(matrix_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<Self> {
        let raw = store::read_embt(matrix_path)?;
        let lines: Vec<PrototypeLine> = store::read_jsonl(meta_path.as_ref())?;
        let meta = lines.iter().map(|l| RowMeta::new(l.id.clone())).collect();
        // Round through a table for the shared count/finite/norm checks.
        let table = EmbeddingTable::new(raw.dim, raw.data, meta)?;
        let mut class_names = Vec::with_capacity(lines.len());
        let mut provenance = Vec::with_capacity(lines.len());
        for l in lines {
            class_names.push(l.id);
            provenance.push(ClassProvenance {
                anchor_id: l.anchor_id,
                members: l.members,
                k: l.k,
            });
        }
        Self::from_parts(class_names, table.dim(), table.as_slice().to_vec(), provenance)
    }
}

/// Arithmetic mean of the given rows (summed in the given order), then
/// normalized.
fn centroid(audio: &EmbeddingTable, members: &[usize], class: &str) -> Result<Vec<f32>> {
    let mut acc = vec![0.0f64; audio.dim()];
    for &m in members {
        for (a, &x) in acc.iter_mut().zip(audio.row(m)) {
            *a += f64::from(x);
        }
    }
    let n = members.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    vector::normalize_f64(&acc, MIN_CENTROID_NORM).ok_or_else(|| Error::DegeneratePrototype {
        class: class.to_owned(),
    })
}

/// Text-anchored prototypes: for each text row, the normalized mean of its
/// `k` nearest audio rows. Clusters of different classes may overlap.
pub fn build_text_anchored(
    text: &EmbeddingTable,
    audio: &EmbeddingTable,
    k: usize,
) -> Result<PrototypeSet> {
    text.check_dim(audio)?;
    if text.is_empty() {
        return Err(Error::Contract("no text anchors".into()));
    }
    if k == 0 || k > audio.len() {
        return Err(Error::Bounds(format!(
            "k = {k} outside 1..={} (audio pool size)",
            audio.len()
        )));
    }
    let built: Vec<(Vec<f32>, ClassProvenance)> = text
        .meta()
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            let members: Vec<usize> = search::knn(text.row(i), audio, k)?
                .into_iter()
                .map(|n| n.row)
                .collect();
            let v = centroid(audio, &members, &m.id)?;
            Ok((
                v,
                ClassProvenance {
                    anchor_id: m.id.clone(),
                    members,
                    k,
                },
            ))
        })
        .collect::<Result<_>>()?;

    let class_names = text.ids().map(str::to_owned).collect();
    let mut vectors = Vec::with_capacity(text.len() * text.dim());
    let mut provenance = Vec::with_capacity(text.len());
    for (v, p) in built {
        vectors.extend_from_slice(&v);
        provenance.push(p);
    }
    PrototypeSet::from_parts(class_names, text.dim(), vectors, provenance)
}

/// Label-supervised prototypes: for each class, the normalized mean of all
/// audio rows labeled with it.
pub fn build_supervised(audio: &EmbeddingTable, class_names: &[String]) -> Result<PrototypeSet> {
    if class_names.is_empty() {
        return Err(Error::Contract("no classes given".into()));
    }
    let built: Vec<(Vec<f32>, ClassProvenance)> = class_names
        .par_iter()
        .map(|class| {
            let members: Vec<usize> = audio
                .meta()
                .iter()
                .enumerate()
                .filter(|(_, m)| m.has_label(class))
                .map(|(i, _)| i)
                .collect();
            if members.is_empty() {
                return Err(Error::EmptyClass {
                    class: class.clone(),
                });
            }
            let v = centroid(audio, &members, class)?;
            let k = members.len();
            Ok((
                v,
                ClassProvenance {
                    anchor_id: SUPERVISED_ANCHOR.to_owned(),
                    members,
                    k,
                },
            ))
        })
        .collect::<Result<_>>()?;

    let mut vectors = Vec::with_capacity(class_names.len() * audio.dim());
    let mut provenance = Vec::with_capacity(class_names.len());
    for (v, p) in built {
        vectors.extend_from_slice(&v);
        provenance.push(p);
    }
    PrototypeSet::from_parts(class_names.to_vec(), audio.dim(), vectors, provenance)
}
