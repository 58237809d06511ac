//! Work partitioning across workers.
//!
//! A [`Workers`] value fixes how many independent work units a job is split
//! into. Whether the units run on the rayon pool or one after another only
//! affects wall time: outputs are identical for the same worker count. With
//! the `parallel` feature disabled every job runs sequentially.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Workers {
    count: usize,
    threaded: bool,
}

impl Default for Workers {
    fn default() -> Self {
        Self::sequential(1)
    }
}

impl Workers {
    /// `count` work units run on the thread pool (when compiled in).
    pub fn threaded(count: usize) -> Self {
        Self { count: count.max(1), threaded: true }
    }

    /// `count` work units run one after another on the calling thread.
    pub fn sequential(count: usize) -> Self {
        Self { count: count.max(1), threaded: false }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_threaded(&self) -> bool {
        self.threaded && cfg!(feature = "parallel")
    }

    /// Applies `f` to `0..n`, returning results in index order.
    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.threaded && n > 1 {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Splits `total` items into `count` contiguous chunk sizes; earlier
    /// chunks take the remainder.
    pub fn split(&self, total: usize) -> Vec<usize> {
        let base = total / self.count;
        let extra = total % self.count;
        (0..self.count)
            .map(|w| base + usize::from(w < extra))
            .filter(|&n| n > 0)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_covers_total() {
        let w = Workers::threaded(4);
        assert_eq!(w.split(10), vec![3, 3, 2, 2]);
        assert_eq!(w.split(2), vec![1, 1]);
        assert_eq!(Workers::sequential(1).split(5), vec![5]);
    }

    #[test]
    fn threaded_and_sequential_agree() {
        let f = |i: usize| i * i;
        assert_eq!(Workers::threaded(3).map(10, f), Workers::sequential(3).map(10, f));
    }
}
