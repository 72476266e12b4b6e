//! Order-preserving map helpers that fan work across a rayon pool when the
//! `parallel` feature is on, with an always-available sequential path.
//!
//! Results are collected in input order and reduced at a single point, so a
//! computation produces bit-identical output regardless of the execution
//! strategy or thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution strategy for data-parallel sections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    /// Plain iteration on the calling thread.
    Sequential,
    /// Rayon work-stealing pool; falls back to sequential when the crate is
    /// built without the `parallel` feature.
    #[default]
    Rayon,
}

/// Maps `f` over `items`, preserving input order in the output.
pub fn map_ordered<T, U, F>(par: Parallelism, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    match par {
        Parallelism::Sequential => items.iter().map(f).collect(),
        Parallelism::Rayon => {
            #[cfg(feature = "parallel")]
            {
                items.par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                items.iter().map(f).collect()
            }
        }
    }
}

/// Maps `f` over indices `0..n`, preserving index order in the output.
pub fn map_indices<U, F>(par: Parallelism, n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    match par {
        Parallelism::Sequential => (0..n).map(f).collect(),
        Parallelism::Rayon => {
            #[cfg(feature = "parallel")]
            {
                (0..n).into_par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                (0..n).map(f).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_ordered_matches_sequential() {
        let items: Vec<u64> = (0..257).collect();
        let seq = map_ordered(Parallelism::Sequential, &items, |x| x * x + 1);
        let par = map_ordered(Parallelism::Rayon, &items, |x| x * x + 1);
        assert_eq!(seq, par);
    }

    #[test]
    fn map_indices_preserves_order() {
        let seq = map_indices(Parallelism::Sequential, 100, |i| i as f64 * 0.5);
        let par = map_indices(Parallelism::Rayon, 100, |i| i as f64 * 0.5);
        assert_eq!(seq, par);
    }
}
