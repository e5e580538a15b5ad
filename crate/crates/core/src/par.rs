//! Data-parallel helpers. With the `parallel` feature, work is spread over
//! the rayon pool; results are always combined in index order so output
//! does not depend on scheduling.

use crate::error::Result;

/// Rows handled per task in reductions.
pub const CHUNK: usize = 32;

/// `f(i)` for `i in 0..n`, in order.
pub fn map<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Fallible [`map`]; the first error by index is returned.
pub fn try_map<R, F>(n: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync + Send,
{
    map(n, f).into_iter().collect()
}

/// Elementwise sum of `f(i)` (each of length `len`) over `i in 0..n`.
/// Rows are summed sequentially inside fixed chunks of [`CHUNK`], then the
/// chunk sums are added in chunk order.
pub fn try_sum<F>(n: usize, len: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(usize) -> Result<Vec<f64>> + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let partial = try_map(chunks, |c| {
        let mut acc = vec![0.0; len];
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            let v = f(i)?;
            acc.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
        }
        Ok(acc)
    })?;
    let mut total = vec![0.0; len];
    for p in partial {
        total.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
    }
    Ok(total)
}
