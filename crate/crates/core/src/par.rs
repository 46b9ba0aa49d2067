//! Index-parallel map used by the per-voxel and per-slice loops.
//!
//! Output order is always index order; callers reduce the returned vector
//! sequentially so sums are independent of scheduling.

use alloc::vec::Vec;

#[cfg(feature = "parallel")]
pub(crate) fn map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Maps each z-slice to a row of outputs and concatenates them in slice order.
pub(crate) fn map_slices<T, F>(depth: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> Vec<T> + Sync + Send,
{
    let rows = map(depth, f);
    let mut out = Vec::with_capacity(rows.iter().map(Vec::len).sum());
    for row in rows {
        out.extend(row);
    }
    out
}
