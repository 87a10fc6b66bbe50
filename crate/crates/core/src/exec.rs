//! Scheduling abstraction for path-parallel work.

use alloc::vec::Vec;
use core::ops::Range;

/// Maps an index range to results, returned in index order.
///
/// Implementations may run `f` on any number of workers, but the returned
/// vector must always be ordered by index; every reduction in this crate is
/// then performed serially over that vector, which is what makes results
/// independent of the worker count.
pub trait Executor: Sync {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs everything on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl Executor for Serial {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

/// Default number of path blocks. Work is split into blocks whose boundaries
/// depend only on the path count, never on the worker count.
pub const DEFAULT_BLOCKS: usize = 32;

/// Splits `0..n` into at most `blocks` contiguous ranges of near-equal size.
pub fn blocks(n: usize, blocks: usize) -> Vec<Range<usize>> {
    let b = blocks.clamp(1, n.max(1));
    (0..b)
        .map(|i| (i * n / b)..((i + 1) * n / b))
        .filter(|r| !r.is_empty() || n == 0)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_cover_range() {
        for n in [1usize, 5, 32, 33, 1000] {
            let bs = blocks(n, DEFAULT_BLOCKS);
            assert_eq!(bs.first().unwrap().start, 0);
            assert_eq!(bs.last().unwrap().end, n);
            for w in bs.windows(2) {
                assert_eq!(w[0].end, w[1].start);
            }
        }
    }
}
