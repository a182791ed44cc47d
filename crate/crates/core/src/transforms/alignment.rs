use super::{Result, TransformError};
use crate::model::{canonical_fill, validate_episode, Alignment, DatasetSchema, EpisodeRecord, StepRecord, TensorTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftOutcome {
    Shifted,
    /// Source and target alignment agree; the episode is returned as is.
    AlreadyInTarget,
}

impl ShiftOutcome {
    pub fn code(self) -> Option<&'static str> {
        match self {
            ShiftOutcome::Shifted => None,
            ShiftOutcome::AlreadyInTarget => Some("ALREADY_IN_TARGET"),
        }
    }
}

/// Regroups reward and discount between neighbouring steps.
///
/// SAR to RSA: output step t takes reward/discount from input step t-1 (the
/// first step gets the undefined fill). RSA to SAR is the exact inverse.
/// Observation, action, metadata and flags stay on their step.
pub fn shift_alignment(
    episode: &EpisodeRecord,
    from: Alignment,
    to: Alignment,
    schema: &DatasetSchema,
) -> Result<(EpisodeRecord, ShiftOutcome)> {
    let report = validate_episode(episode, schema, from);
    if !report.is_ok() {
        return Err(TransformError::InvalidEpisode(report.tags().join(", ")));
    }
    if from == to {
        return Ok((episode.clone(), ShiftOutcome::AlreadyInTarget));
    }
    let steps = shift_steps(episode.steps.iter().cloned(), from, to, schema).collect();
    Ok((EpisodeRecord::new(steps, episode.metadata.clone()), ShiftOutcome::Shifted))
}

/// Streaming form of [`shift_alignment`], holding at most one step.
/// Episode boundaries are detected from `is_first`/`is_last`.
pub fn shift_steps<I: IntoIterator<Item = StepRecord>>(
    steps: I,
    from: Alignment,
    to: Alignment,
    schema: &DatasetSchema,
) -> ShiftSteps<I::IntoIter> {
    ShiftSteps {
        inner: steps.into_iter(),
        direction: match (from, to) {
            (Alignment::Sar, Alignment::Rsa) => Direction::SarToRsa,
            (Alignment::Rsa, Alignment::Sar) => Direction::RsaToSar,
            _ => Direction::Identity,
        },
        reward_fill: canonical_fill(&schema.reward),
        discount_fill: canonical_fill(&schema.discount),
        carried: None,
        held: None,
    }
}

#[derive(Debug, Clone, Copy)]
enum Direction {
    Identity,
    SarToRsa,
    RsaToSar,
}

pub struct ShiftSteps<I> {
    inner: I,
    direction: Direction,
    reward_fill: TensorTree,
    discount_fill: TensorTree,
    /// SAR to RSA: reward/discount of the previous step.
    carried: Option<(TensorTree, TensorTree)>,
    /// RSA to SAR: step waiting for its successor's reward.
    held: Option<StepRecord>,
}

impl<I: Iterator<Item = StepRecord>> ShiftSteps<I> {
    fn filled(&self, mut step: StepRecord) -> StepRecord {
        step.reward = self.reward_fill.clone();
        step.discount = self.discount_fill.clone();
        step
    }
}

impl<I: Iterator<Item = StepRecord>> Iterator for ShiftSteps<I> {
    type Item = StepRecord;

    fn next(&mut self) -> Option<StepRecord> {
        match self.direction {
            Direction::Identity => self.inner.next(),
            Direction::SarToRsa => {
                let mut step = self.inner.next()?;
                if step.is_first {
                    self.carried = None;
                }
                let (r, d) = match self.carried.take() {
                    Some(rd) => rd,
                    None => (self.reward_fill.clone(), self.discount_fill.clone()),
                };
                let own_r = std::mem::replace(&mut step.reward, r);
                let own_d = std::mem::replace(&mut step.discount, d);
                if !step.is_last {
                    self.carried = Some((own_r, own_d));
                }
                Some(step)
            }
            Direction::RsaToSar => loop {
                let current = match self.held.take() {
                    Some(s) => s,
                    None => self.inner.next()?,
                };
                if current.is_last {
                    return Some(self.filled(current));
                }
                match self.inner.next() {
                    None => return Some(self.filled(current)),
                    Some(next) if next.is_first => {
                        self.held = Some(next);
                        return Some(self.filled(current));
                    }
                    Some(next) => {
                        let mut out = current;
                        out.reward = next.reward.clone();
                        out.discount = next.discount.clone();
                        self.held = Some(next);
                        return Some(out);
                    }
                }
            },
        }
    }
}
