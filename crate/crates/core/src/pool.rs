use crate::{Error, Result};

/// Runs `f` on a dedicated rayon pool of `threads` workers, or inline when
/// `threads <= 1`.
pub(crate) fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    if threads <= 1 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::param(e.to_string()))?;
    Ok(pool.install(f))
}
