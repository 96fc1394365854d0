//! Index-ordered map that runs on rayon when the `parallel` feature is on.
//!
//! Results are always returned in index order and every task draws from its
//! own index-derived random stream, so output does not depend on the number
//! of worker threads or on whether rayon is used at all.

use std::cell::Cell;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Rayon pool with the given thread count (`None`: rayon's default).
    #[default]
    Parallel,
    Threads(usize),
}

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

/// Run `op` under the given execution mode.
pub fn run_with<R: Send>(exec: Execution, op: impl FnOnce() -> R + Send) -> R {
    match exec {
        Execution::Sequential => {
            let prev = FORCE_SEQUENTIAL.with(|f| f.replace(true));
            let out = op();
            FORCE_SEQUENTIAL.with(|f| f.set(prev));
            out
        }
        Execution::Parallel => op(),
        #[cfg(feature = "parallel")]
        Execution::Threads(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(op),
            Err(_) => op(),
        },
        #[cfg(not(feature = "parallel"))]
        Execution::Threads(_) => op(),
    }
}

pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !FORCE_SEQUENTIAL.with(Cell::get) {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}
