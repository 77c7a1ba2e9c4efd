//! Data-parallel helpers. With the default `parallel` feature these fan out
//! over rayon; without it they are plain sequential loops. Output is
//! deterministic either way: chunk results are merged in chunk order, so the
//! per-key accumulation order never depends on scheduling.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::series::SeriesKey;

/// Work below this many pair-products stays sequential.
const PRODUCT_PAR_THRESHOLD: usize = 1 << 14;

#[cfg(feature = "parallel")]
pub fn map_indexed<R: Send, F: Fn(usize) -> R + Sync + Send>(n: usize, f: F) -> Vec<R> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<R, F: Fn(usize) -> R>(n: usize, f: F) -> Vec<R> {
    (0..n).map(f).collect()
}

/// Cauchy-product accumulation over chunks of the left factor's terms.
/// `pair_count` is the total number of coefficient products, the work measure
/// that decides whether fanning out pays off.
pub fn chunked_product<F>(
    terms_a: &[(&SeriesKey, &Complex64)],
    pair_count: usize,
    per_chunk: F,
) -> BTreeMap<SeriesKey, Complex64>
where
    F: Fn(&[(&SeriesKey, &Complex64)]) -> BTreeMap<SeriesKey, Complex64> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if terms_a.len() >= 2 && pair_count >= PRODUCT_PAR_THRESHOLD {
            use rayon::prelude::*;
            let chunk_size = terms_a.len().div_ceil(rayon::current_num_threads().max(1) * 4);
            let partials: Vec<BTreeMap<SeriesKey, Complex64>> = terms_a
                .par_chunks(chunk_size.max(1))
                .map(per_chunk)
                .collect();
            let mut merged = BTreeMap::new();
            for partial in partials {
                for (key, v) in partial {
                    *merged.entry(key).or_insert(Complex64::new(0.0, 0.0)) += v;
                }
            }
            return merged;
        }
    }
    let _ = (PRODUCT_PAR_THRESHOLD, pair_count);
    per_chunk(terms_a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_indexed_preserves_order() {
        let v = map_indexed(100, |i| i * i);
        assert_eq!(v[7], 49);
        assert_eq!(v.len(), 100);
    }
}
