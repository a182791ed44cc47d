use std::collections::VecDeque;

use super::{EpisodeResult, Result, TransformError};
use crate::model::{StepRecord, TensorTree};

/// Sliding windows over one episode's steps.
///
/// Windows start at step `k * shift` and hold up to `size` consecutive
/// steps. With `drop_remainder` only full windows are emitted; without it
/// every window whose start lies inside the episode is emitted, including
/// the shorter ones at the end. At most `size` steps are buffered.
pub fn batch_steps<I: IntoIterator<Item = StepRecord>>(
    steps: I,
    size: usize,
    shift: usize,
    drop_remainder: bool,
) -> Result<BatchSteps<I::IntoIter>> {
    if size == 0 || shift == 0 {
        return Err(TransformError::InvalidArgument(format!(
            "batch size and shift must be positive, got size={size} shift={shift}"
        )));
    }
    Ok(BatchSteps {
        inner: steps.into_iter(),
        size,
        shift,
        drop_remainder,
        window: VecDeque::with_capacity(size),
        skip: 0,
        exhausted: false,
    })
}

pub struct BatchSteps<I> {
    inner: I,
    size: usize,
    shift: usize,
    drop_remainder: bool,
    window: VecDeque<StepRecord>,
    /// Input steps to discard before the next window starts (shift > size).
    skip: usize,
    exhausted: bool,
}

impl<I: Iterator<Item = StepRecord>> BatchSteps<I> {
    fn pull(&mut self) -> Option<StepRecord> {
        if self.exhausted {
            return None;
        }
        let next = self.inner.next();
        self.exhausted = next.is_none();
        next
    }
}

impl<I: Iterator<Item = StepRecord>> Iterator for BatchSteps<I> {
    type Item = Vec<StepRecord>;

    fn next(&mut self) -> Option<Vec<StepRecord>> {
        while self.skip > 0 {
            self.pull()?;
            self.skip -= 1;
        }
        while self.window.len() < self.size {
            match self.pull() {
                Some(step) => self.window.push_back(step),
                None => break,
            }
        }
        if self.window.is_empty() || (self.window.len() < self.size && self.drop_remainder) {
            return None;
        }
        let out: Vec<StepRecord> = self.window.iter().cloned().collect();
        let drop = self.shift.min(self.window.len());
        self.window.drain(..drop);
        self.skip = self.shift - drop;
        Some(out)
    }
}

/// `batch_steps` applied to each episode separately, so windows never
/// straddle an episode boundary.
pub fn batch_dataset<D>(
    dataset: D,
    size: usize,
    shift: usize,
    drop_remainder: bool,
) -> Result<impl Iterator<Item = Result<Vec<StepRecord>>>>
where
    D: IntoIterator<Item = EpisodeResult>,
{
    batch_steps(std::iter::empty(), size, shift, drop_remainder)?;
    Ok(dataset.into_iter().flat_map(move |ep| {
        let (windows, err) = match ep {
            Ok(ep) => (Some(batch_steps(ep.steps, size, shift, drop_remainder).expect("validated")), None),
            Err(e) => (None, Some(e)),
        };
        windows.into_iter().flatten().map(Ok).chain(err.map(Err))
    }))
}

/// `(s_t, a_t, r_t, s_{t+1})` built from two consecutive steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub observation: TensorTree,
    pub action: TensorTree,
    pub reward: TensorTree,
    pub discount: TensorTree,
    pub next_observation: TensorTree,
    /// Whether the second step ends the episode in a terminal state.
    pub next_is_terminal: bool,
}

impl Transition {
    pub fn from_pair(current: &StepRecord, next: &StepRecord) -> Transition {
        Transition {
            observation: current.observation.clone(),
            action: current.action.clone(),
            reward: current.reward.clone(),
            discount: current.discount.clone(),
            next_observation: next.observation.clone(),
            next_is_terminal: next.is_terminal,
        }
    }
}

/// Transitions of one SAR episode: a window of 2 with shift 1, so an
/// episode of `n` steps yields `n - 1` transitions.
pub fn make_transitions<I: IntoIterator<Item = StepRecord>>(steps: I) -> impl Iterator<Item = Transition> {
    batch_steps(steps, 2, 1, true)
        .expect("constant arguments are valid")
        .map(|w| Transition::from_pair(&w[0], &w[1]))
}

/// `make_transitions` over every episode of a dataset.
pub fn transitions<D>(dataset: D) -> impl Iterator<Item = Result<Transition>>
where
    D: IntoIterator<Item = EpisodeResult>,
{
    dataset.into_iter().flat_map(|ep| {
        let (items, err) = match ep {
            Ok(ep) => (Some(make_transitions(ep.steps)), None),
            Err(e) => (None, Some(e)),
        };
        items.into_iter().flatten().map(Ok).chain(err.map(Err))
    })
}
