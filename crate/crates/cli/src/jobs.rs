use crate::error::{CliError, CliResult};

/// `f(i)` for `i in 0..n` on up to `jobs` threads, results in index order.
/// Without the `parallel` feature (or with `jobs == 1`) runs inline.
pub fn map_jobs<T, F>(n: usize, jobs: usize, f: F) -> CliResult<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if jobs == 0 {
        return Err(CliError::config("--jobs", "must be >= 1"));
    }
    #[cfg(feature = "parallel")]
    if jobs > 1 && n > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
        return Ok(pool.install(|| (0..n).into_par_iter().map(&f).collect()));
    }
    Ok((0..n).map(f).collect())
}
