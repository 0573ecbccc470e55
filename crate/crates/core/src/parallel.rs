//! Data-parallel map over independent work items.
//!
//! With the `parallel` feature (default) items are distributed over the rayon
//! thread pool; without it, or with [`ExecMode::Sequential`], they run in
//! order on the calling thread. Results always come back in input order, and
//! every reduction in this crate is done sequentially over that ordered
//! output, so the two modes give bit-identical results.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// Whether work is actually spread over threads in this build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }
}

pub fn map<T, R, F>(items: &[T], mode: ExecMode, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode == ExecMode::Parallel {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_keep_order() {
        let items: Vec<u64> = (0..1000).collect();
        let a = map(&items, ExecMode::Sequential, |x| x * x);
        let b = map(&items, ExecMode::Parallel, |x| x * x);
        assert_eq!(a, b);
        assert_eq!(a[999], 998001);
    }
}
