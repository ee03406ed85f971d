//! Sequential or rayon-backed execution of the data-parallel loops.
//!
//! Every parallel loop writes disjoint outputs and reduces in a fixed
//! order, so results are bit-identical whatever executor is used.

#[cfg(feature = "parallel")]
use crate::error::FlowError;
use crate::error::Result;

pub enum Executor {
    Sequential,
    /// The global rayon pool.
    #[cfg(feature = "parallel")]
    Global,
    #[cfg(feature = "parallel")]
    Pool(rayon::ThreadPool),
}

impl Executor {
    /// `1` runs on the calling thread, `0` uses the global pool, and any
    /// other count builds a dedicated pool. Without the `parallel` feature
    /// everything runs sequentially.
    pub fn new(threads: usize) -> Result<Self> {
        #[cfg(feature = "parallel")]
        {
            match threads {
                1 => Ok(Executor::Sequential),
                0 => Ok(Executor::Global),
                n => rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map(Executor::Pool)
                    .map_err(|e| FlowError::InvalidParams(format!("cannot start {n} threads: {e}"))),
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = threads;
            Ok(Executor::Sequential)
        }
    }

    /// Maps every item independently, preserving order.
    pub fn map<T, U, F>(&self, items: Vec<T>, f: F) -> Vec<U>
    where
        T: Send,
        U: Send,
        F: Fn(T) -> U + Sync + Send,
    {
        match self {
            Executor::Sequential => items.into_iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            Executor::Global => {
                use rayon::prelude::*;
                items.into_par_iter().map(f).collect()
            }
            #[cfg(feature = "parallel")]
            Executor::Pool(pool) => pool.install(|| {
                use rayon::prelude::*;
                items.into_par_iter().map(f).collect()
            }),
        }
    }

    /// Calls `f(y, row_a, row_b)` for every row of two equally shaped
    /// row-major buffers.
    pub fn rows<F>(&self, width: usize, a: &mut [f64], b: &mut [f64], f: F)
    where
        F: Fn(usize, &mut [f64], &mut [f64]) + Sync + Send,
    {
        debug_assert_eq!(a.len(), b.len());
        match self {
            Executor::Sequential => {
                for (y, (ra, rb)) in a.chunks_mut(width).zip(b.chunks_mut(width)).enumerate() {
                    f(y, ra, rb);
                }
            }
            #[cfg(feature = "parallel")]
            Executor::Global => par_rows(width, a, b, &f),
            #[cfg(feature = "parallel")]
            Executor::Pool(pool) => pool.install(|| par_rows(width, a, b, &f)),
        }
    }
}

#[cfg(feature = "parallel")]
fn par_rows<F>(width: usize, a: &mut [f64], b: &mut [f64], f: &F)
where
    F: Fn(usize, &mut [f64], &mut [f64]) + Sync + Send,
{
    use rayon::prelude::*;
    a.par_chunks_mut(width)
        .zip(b.par_chunks_mut(width))
        .enumerate()
        .for_each(|(y, (ra, rb))| f(y, ra, rb));
}
