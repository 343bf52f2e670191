//! Data-parallel map over independent jobs, with a sequential fallback when
//! the `parallel` feature is off.

/// Apply `f` to every item in order on the calling thread.
pub fn map_seq<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    F: Fn(T) -> R,
{
    items.into_iter().map(f).collect()
}

/// Apply `f` to every item, using up to `jobs` worker threads (0 = rayon's
/// default). Output order matches input order either way.
#[cfg(feature = "parallel")]
pub fn map<T, R, F>(items: Vec<T>, jobs: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    if jobs == 1 {
        return map_seq(items, f);
    }
    let run = || items.into_par_iter().map(&f).collect();
    if jobs == 0 {
        return run();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, R, F>(items: Vec<T>, _jobs: usize, f: F) -> Vec<R>
where
    F: Fn(T) -> R,
{
    map_seq(items, f)
}
