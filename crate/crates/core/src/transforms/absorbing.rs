use super::{EpisodeResult, Result, TransformError};
use crate::model::{DType, EpisodeRecord, StepRecord, Tensor, TensorData, TensorTree};

/// Appends `make_extra_steps(final step)` when the episode ends in a
/// terminal state; otherwise returns the episode unchanged.
pub fn concat_if_terminal<F, S>(episode: EpisodeRecord, make_extra_steps: F) -> EpisodeRecord
where
    F: FnOnce(&StepRecord) -> S,
    S: IntoIterator<Item = StepRecord>,
{
    let mut episode = episode;
    let extra: Vec<StepRecord> = match episode.steps.last() {
        Some(last) if last.is_terminal => make_extra_steps(last).into_iter().collect(),
        _ => return episode,
    };
    episode.steps.extend(extra);
    episode
}

/// Absorbing-state form of one episode with zeroed absorbing steps.
///
/// A terminal final step is duplicated; every terminal step then has its
/// observation and action zeroed and its `is_terminal`/`is_last` flags
/// cleared. Each observation gains a trailing bit, 1 on absorbing steps.
pub fn absorbing_episode(episode: EpisodeRecord) -> Result<EpisodeRecord> {
    absorbing_episode_with(episode, |step| (step.observation.zeros_like(), step.action.zeros_like()))
}

/// Like [`absorbing_episode`] with a caller-chosen `(observation, action)`
/// for absorbing steps. The returned observation must keep the input
/// observation's dtype and width.
pub fn absorbing_episode_with<F>(episode: EpisodeRecord, mut absorbing: F) -> Result<EpisodeRecord>
where
    F: FnMut(&StepRecord) -> (TensorTree, TensorTree),
{
    for step in &episode.steps {
        check_vector(&step.observation)?;
    }
    let mut episode = concat_if_terminal(episode, |last| [last.clone()]);
    for step in &mut episode.steps {
        let terminal = step.is_terminal;
        if terminal {
            let (observation, action) = absorbing(step);
            step.observation = observation;
            step.action = action;
            step.is_terminal = false;
            step.is_last = false;
        }
        step.observation = append_bit(&step.observation, terminal)?;
    }
    Ok(episode)
}

/// [`absorbing_episode`] over a dataset stream.
pub fn to_absorbing<D>(dataset: D) -> impl Iterator<Item = EpisodeResult>
where
    D: IntoIterator<Item = EpisodeResult>,
{
    dataset.into_iter().map(|ep| ep.and_then(absorbing_episode))
}

fn check_vector(observation: &TensorTree) -> Result<&Tensor> {
    match observation.as_leaf() {
        Some(t) if t.shape().len() == 1 && t.dtype() != DType::Bytes => Ok(t),
        Some(t) => Err(TransformError::NonVectorObservation(format!(
            "expected a rank-1 numeric leaf, got {}{:?}",
            t.dtype(),
            t.shape()
        ))),
        None => Err(TransformError::NonVectorObservation(
            "observation is a nested structure; flatten it first".into(),
        )),
    }
}

fn append_bit(observation: &TensorTree, on: bool) -> Result<TensorTree> {
    let t = check_vector(observation)?;
    let bit = match t.dtype() {
        DType::F32 => TensorData::F32(vec![on as u8 as f32]),
        DType::F64 => TensorData::F64(vec![on as u8 as f64]),
        DType::I32 => TensorData::I32(vec![on as i32]),
        DType::I64 => TensorData::I64(vec![on as i64]),
        DType::U8 => TensorData::U8(vec![on as u8]),
        DType::Bool => TensorData::Bool(vec![on]),
        DType::Bytes => unreachable!("rejected by check_vector"),
    };
    let mut data = t.data().clone();
    data.extend_from(&bit);
    Ok(Tensor::vector(data).into())
}
