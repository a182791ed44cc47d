use rand::SeedableRng;

use super::agents::{Agent, AgentRng};
use super::recorder::{RecordingEnvironment, StepSink};
use super::{EnvError, Environment};
use crate::model::{canonical_fill, DType, FeatureSpec, Tensor, TensorTree};

/// Episode metadata carrying the generating agent and the episode number.
pub fn id_metadata_spec() -> FeatureSpec {
    FeatureSpec::node([
        ("agent_id", FeatureSpec::scalar(DType::Bytes)),
        ("episode_id", FeatureSpec::scalar(DType::I64)),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GenerateSummary {
    pub episodes: u64,
    /// Stored steps, including each episode's final observation step.
    pub steps: u64,
    /// Episodes that ended in a terminal state.
    pub terminal_episodes: u64,
    pub total_reward: u64,
}

/// Runs `agent` in `env` for `episodes` episodes, recording into `sink`.
///
/// Everything is derived from `seed`: the environment is seeded with
/// `2*seed + 1` and the agent's generator with `2*seed + 2`.
pub fn generate<E, A, S>(env: E, agent: &mut A, episodes: u64, seed: u64, sink: S) -> Result<GenerateSummary, EnvError>
where
    E: Environment,
    A: Agent + ?Sized,
    S: StepSink,
{
    if episodes == 0 {
        return Err(EnvError::InvalidArgument("episodes must be at least 1".into()));
    }
    let md_spec = sink.schema().episode_metadata.clone();
    let with_ids = md_spec == id_metadata_spec();
    let fill = canonical_fill(&md_spec);
    let agent_id = agent.name();
    let mut episode_id = 0i64;

    let mut rec = RecordingEnvironment::new(env, sink)?.with_episode_metadata(move |_| {
        let md = if with_ids {
            TensorTree::node([
                ("agent_id", Tensor::scalar_bytes(agent_id.as_bytes()).into()),
                ("episode_id", Tensor::scalar_i64(episode_id).into()),
            ])
        } else {
            fill.clone()
        };
        episode_id += 1;
        md
    });
    rec.seed(seed.wrapping_mul(2).wrapping_add(1));
    let mut rng = AgentRng::seed_from_u64(seed.wrapping_mul(2).wrapping_add(2));

    let mut summary = GenerateSummary::default();
    for _ in 0..episodes {
        let mut ts = rec.reset()?;
        let mut steps = 1;
        while !ts.is_last() {
            let action = agent.act(&ts.observation, &mut rng)?;
            ts = rec.step(&action)?;
            steps += 1;
            if let Some(r) = ts.reward.as_ref().and_then(TensorTree::as_leaf).and_then(Tensor::as_f64) {
                summary.total_reward += (r > 0.0) as u64;
            }
        }
        summary.episodes += 1;
        summary.steps += steps;
        summary.terminal_episodes += ts.is_terminal() as u64;
    }
    Ok(summary)
}
