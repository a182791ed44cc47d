use super::{EpisodeResult, Result, TransformError};
use crate::model::EpisodeRecord;

/// SplitMix64 generator; the state starts at the seed itself.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> SplitMix64 {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Index in `0..n` via the high half of `next_u64() * n`.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }
}

/// Windowed shuffle followed by `take(k)`.
///
/// The buffer is first filled with up to `buffer` episodes. Each output
/// draws slot `i = rng.below(len)`, emits that episode and refills slot
/// `i` with the next input episode; once the input is exhausted the slot
/// is removed with `swap_remove`. The same seed replays the same order.
pub fn sample_episodes<D>(dataset: D, buffer: usize, seed: u64, k: u64) -> Result<SampleEpisodes<D::IntoIter>>
where
    D: IntoIterator<Item = EpisodeResult>,
{
    if buffer == 0 {
        return Err(TransformError::InvalidArgument("shuffle buffer must hold at least one episode".into()));
    }
    Ok(SampleEpisodes {
        inner: dataset.into_iter(),
        buffer: Vec::with_capacity(buffer),
        capacity: buffer,
        rng: SplitMix64::new(seed),
        remaining: k,
        filled: false,
    })
}

pub struct SampleEpisodes<I> {
    inner: I,
    buffer: Vec<EpisodeRecord>,
    capacity: usize,
    rng: SplitMix64,
    remaining: u64,
    filled: bool,
}

impl<I: Iterator<Item = EpisodeResult>> Iterator for SampleEpisodes<I> {
    type Item = EpisodeResult;

    fn next(&mut self) -> Option<EpisodeResult> {
        if self.remaining == 0 {
            return None;
        }
        if !self.filled {
            while self.buffer.len() < self.capacity {
                match self.inner.next() {
                    Some(Ok(ep)) => self.buffer.push(ep),
                    Some(Err(e)) => {
                        self.remaining = 0;
                        return Some(Err(e));
                    }
                    None => break,
                }
            }
            self.filled = true;
        }
        if self.buffer.is_empty() {
            return None;
        }
        let i = self.rng.below(self.buffer.len());
        let out = match self.inner.next() {
            Some(Ok(next)) => std::mem::replace(&mut self.buffer[i], next),
            Some(Err(e)) => {
                self.remaining = 0;
                return Some(Err(e));
            }
            None => self.buffer.swap_remove(i),
        };
        self.remaining -= 1;
        Some(Ok(out))
    }
}
