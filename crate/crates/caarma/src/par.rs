//! Data-parallel helpers. With the default `parallel` feature these fan out
//! over rayon; without it they fall back to plain sequential iteration.
//! Output order is index-stable either way, so results are identical.

#[cfg(feature = "parallel")]
pub fn maybe_par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn maybe_par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Always-sequential variant, kept for benchmarking against the parallel path.
pub fn seq_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_matches_sequential_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = maybe_par_map(&xs, |x| x * x);
        let b = seq_map(&xs, |x| x * x);
        assert_eq!(a, b);
    }
}
