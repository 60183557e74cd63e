//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the helpers run on the rayon pool;
//! without it they run on the calling thread. Every helper preserves input
//! order, so results never depend on the number of worker threads.

/// Execution strategy for the kernels that expose a `*_with` variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Maps `f` over `0..n`, collecting results in index order.
    pub fn map_range<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    /// Maps `f` over a slice, collecting results in slice order.
    pub fn map_slice<S, T, F>(self, items: &[S], f: F) -> Vec<T>
    where
        S: Sync,
        T: Send,
        F: Fn(&S) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }

    /// Fallible map over a slice; the first error in slice order wins.
    pub fn try_map_slice<S, T, E, F>(self, items: &[S], f: F) -> Result<Vec<T>, E>
    where
        S: Sync,
        T: Send,
        E: Send,
        F: Fn(&S) -> Result<T, E> + Sync + Send,
    {
        self.map_slice(items, f).into_iter().collect()
    }
}

pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    Exec::default().map_range(n, f)
}

pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    Exec::default().map_slice(items, f)
}

pub fn try_map_slice<S, T, E, F>(items: &[S], f: F) -> Result<Vec<T>, E>
where
    S: Sync,
    T: Send,
    E: Send,
    F: Fn(&S) -> Result<T, E> + Sync + Send,
{
    Exec::default().try_map_slice(items, f)
}

/// Caps the global worker pool. A no-op without the `parallel` feature.
pub fn set_threads(threads: usize) {
    #[cfg(feature = "parallel")]
    {
        // The global pool can only be built once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_strategies_agree() {
        let f = |i: usize| (i as f64).sqrt() * 3.0;
        let a = Exec::Sequential.map_range(1000, f);
        let b = Exec::Parallel.map_range(1000, f);
        assert_eq!(a, b);
    }

    #[test]
    fn first_error_in_order_wins() {
        let items: Vec<i32> = (0..100).collect();
        let r: Result<Vec<i32>, i32> = try_map_slice(&items, |&x| if x % 30 == 29 { Err(x) } else { Ok(x) });
        assert_eq!(r, Err(29));
    }
}
