//! Small dense-vector kernels shared by the store, search and prototype code.
//!
//! Vectors are stored as `f32`; every reduction accumulates in `f64`.

/// Rows whose norm is already within this distance of 1 are left untouched
/// by normalization, which makes re-normalizing a unit row an exact no-op.
const UNIT_SLACK: f64 = 2.0 * f32::EPSILON as f64;

/// Dot product with `f64` accumulation over four independent lanes.
///
/// The summation order is fixed, so the result is deterministic for a given
/// pair of slices. Callers guarantee equal lengths.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += f64::from(x[0]) * f64::from(y[0]);
        acc[1] += f64::from(x[1]) * f64::from(y[1]);
        acc[2] += f64::from(x[2]) * f64::from(y[2]);
        acc[3] += f64::from(x[3]) * f64::from(y[3]);
    }
    let mut tail = 0.0f64;
    for (x, y) in ra.iter().zip(rb) {
        tail += f64::from(*x) * f64::from(*y);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn norm(v: &[f32]) -> f64 {
    v.iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt()
}

/// Normalizes `v` in place. Returns `false` (leaving `v` unchanged) when the
/// norm is zero or not finite.
pub fn normalize_in_place(v: &mut [f32]) -> bool {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    if (n - 1.0).abs() <= UNIT_SLACK {
        return true;
    }
    for x in v.iter_mut() {
        *x = (f64::from(*x) / n) as f32;
    }
    true
}

/// Normalizes an `f64` accumulator into a fresh `f32` vector.
///
/// Returns `None` when the norm is below `min_norm`.
pub fn normalize_f64(v: &[f64], min_norm: f64) -> Option<Vec<f32>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !n.is_finite() || n < min_norm || n == 0.0 {
        return None;
    }
    if (n - 1.0).abs() <= UNIT_SLACK {
        return Some(v.iter().map(|&x| x as f32).collect());
    }
    Some(v.iter().map(|&x| (x / n) as f32).collect())
}
