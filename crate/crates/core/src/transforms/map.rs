use super::{EpisodeResult, Result, TransformError};
use crate::model::{EpisodeRecord, StepRecord, Tensor, TensorData, TensorTree};

/// Applies `f` to every step, keeping order and episode structure.
/// Errors from `f` carry the `(episode, step)` position in the stream.
pub fn map_steps<D, F>(dataset: D, mut f: F) -> impl Iterator<Item = EpisodeResult>
where
    D: IntoIterator<Item = EpisodeResult>,
    F: FnMut(StepRecord) -> Result<StepRecord>,
{
    dataset.into_iter().enumerate().map(move |(e, ep)| {
        let ep = ep?;
        let steps = ep
            .steps
            .into_iter()
            .enumerate()
            .map(|(s, step)| {
                f(step).map_err(|source| TransformError::AtStep {
                    episode: e as u64,
                    step: s as u64,
                    source: Box::new(source),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EpisodeRecord::new(steps, ep.metadata))
    })
}

/// Applies `f` to every episode; errors carry the episode position.
pub fn apply_episodes<D, F>(dataset: D, mut f: F) -> impl Iterator<Item = EpisodeResult>
where
    D: IntoIterator<Item = EpisodeResult>,
    F: FnMut(EpisodeRecord) -> Result<EpisodeRecord>,
{
    dataset.into_iter().enumerate().map(move |(e, ep)| {
        f(ep?).map_err(|source| TransformError::AtEpisode {
            episode: e as u64,
            source: Box::new(source),
        })
    })
}

/// All steps of all episodes, in order.
pub fn flat_steps<D>(dataset: D) -> impl Iterator<Item = Result<StepRecord>>
where
    D: IntoIterator<Item = EpisodeResult>,
{
    dataset.into_iter().flat_map(|ep| {
        let (steps, err) = match ep {
            Ok(ep) => (Some(ep.steps), None),
            Err(e) => (None, Some(e)),
        };
        steps.into_iter().flatten().map(Ok).chain(err.map(Err))
    })
}

/// Step function replacing the observation with the row-major
/// concatenation of the listed observation leaves, as one rank-1 tensor.
/// All listed leaves must share a dtype.
pub fn flatten_observation(paths: &[&str]) -> impl FnMut(StepRecord) -> Result<StepRecord> {
    let paths: Vec<String> = paths.iter().map(|p| p.to_string()).collect();
    move |mut step| {
        let mut data: Option<TensorData> = None;
        for path in &paths {
            let leaf = step
                .observation
                .get(path)
                .and_then(TensorTree::as_leaf)
                .ok_or_else(|| TransformError::UnknownField(format!("observation/{path}")))?;
            match data.as_mut() {
                None => data = Some(leaf.data().clone()),
                Some(acc) => {
                    if !acc.extend_from(leaf.data()) {
                        return Err(TransformError::UnsupportedDtype(format!(
                            "cannot concatenate {} onto {}",
                            leaf.dtype(),
                            acc.dtype()
                        )));
                    }
                }
            }
        }
        let data = data.ok_or_else(|| TransformError::InvalidArgument("no observation leaves selected".into()))?;
        step.observation = Tensor::vector(data).into();
        Ok(step)
    }
}
