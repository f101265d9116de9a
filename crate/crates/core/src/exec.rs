//! Chunked work distribution.
//!
//! Sample loops are split into fixed-size chunks whose results come back in
//! chunk order, so any reduction over them is independent of how many
//! workers ran the chunks.

use alloc::vec::Vec;
use core::ops::Range;

pub trait Executor: Sync {
    fn map_chunks<T, F>(&self, len: usize, chunk: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Range<usize>) -> T + Sync;
}

/// Runs every chunk on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map_chunks<T, F>(&self, len: usize, chunk: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Range<usize>) -> T + Sync,
    {
        chunk_ranges(len, chunk).map(f).collect()
    }
}

pub fn chunk_ranges(len: usize, chunk: usize) -> impl Iterator<Item = Range<usize>> {
    let chunk = chunk.max(1);
    (0..len.div_ceil(chunk)).map(move |i| i * chunk..((i + 1) * chunk).min(len))
}
