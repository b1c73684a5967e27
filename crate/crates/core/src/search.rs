//! Exact cosine similarity and k-nearest-neighbor retrieval.
//!
//! Rows of an [`EmbeddingTable`] are unit-norm, so cosine similarity is a dot
//! product. Search is a single pass over the contiguous row buffer feeding a
//! bounded heap. Results are ordered by descending score; equal scores are
//! ordered by ascending row index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::store::EmbeddingTable;
use crate::vector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub row: usize,
    pub score: f64,
}

impl Neighbor {
    /// Total order where `Less` means "ranks earlier".
    #[inline]
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.row.cmp(&other.row))
    }
}

/// Heap entry whose `Ord` puts the worst-ranked candidate on top.
struct Worst(Neighbor);

impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Worst {}

impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.rank_cmp(&other.0)
    }
}

#[inline]
fn clamp_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

fn check_query(query: &[f32], table: &EmbeddingTable) -> Result<()> {
    if query.len() != table.dim() {
        return Err(Error::DimensionMismatch {
            expected: table.dim(),
            found: query.len(),
        });
    }
    Ok(())
}

/// Cosine similarity of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(clamp_unit(vector::dot(a, b)))
}

/// The `k` rows of `table` most similar to `query`.
pub fn knn(query: &[f32], table: &EmbeddingTable, k: usize) -> Result<Vec<Neighbor>> {
    check_query(query, table)?;
    let n = table.len();
    if k == 0 || k > n {
        return Err(Error::Bounds(format!("k = {k} outside 1..={n}")));
    }
    let mut heap: BinaryHeap<Worst> = BinaryHeap::with_capacity(k + 1);
    for (row, r) in table.rows().enumerate() {
        let cand = Neighbor {
            row,
            score: clamp_unit(vector::dot(query, r)),
        };
        if heap.len() < k {
            heap.push(Worst(cand));
        } else if let Some(mut top) = heap.peek_mut() {
            if cand.rank_cmp(&top.0) == Ordering::Less {
                *top = Worst(cand);
            }
        }
    }
    Ok(heap.into_sorted_vec().into_iter().map(|w| w.0).collect())
}

/// Every row of `table`, ranked against `query`.
pub fn rank_all(query: &[f32], table: &EmbeddingTable) -> Result<Vec<Neighbor>> {
    check_query(query, table)?;
    if table.is_empty() {
        return Err(Error::Bounds("cannot rank an empty table".into()));
    }
    let mut all: Vec<Neighbor> = table
        .rows()
        .enumerate()
        .map(|(row, r)| Neighbor {
            row,
            score: clamp_unit(vector::dot(query, r)),
        })
        .collect();
    all.sort_unstable_by(Neighbor::rank_cmp);
    Ok(all)
}

/// [`knn`] for every row of `queries`, in parallel. Output order follows
/// query order.
pub fn knn_batch(
    queries: &EmbeddingTable,
    table: &EmbeddingTable,
    k: usize,
) -> Result<Vec<Vec<Neighbor>>> {
    queries.check_dim(table)?;
    (0..queries.len())
        .into_par_iter()
        .map(|i| knn(queries.row(i), table, k))
        .collect()
}
