//! Order-preserving parallel replication.

use rayon::prelude::*;

/// `f(0), …, f(count−1)` evaluated in parallel, returned in index order.
pub fn replicate<T, F>(count: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..count).into_par_iter().map(f).collect()
}

/// Stream index for replication `rep` at ladder position `level`.
pub fn stream_index(level: usize, rep: u64) -> u64 {
    ((level as u64) << 32) | rep
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_order() {
        let v = replicate(1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, x)| *x == 2 * i as u64));
        assert_ne!(stream_index(1, 0), stream_index(0, 1));
    }
}
