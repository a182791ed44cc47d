use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::gridpickplace::GridAction;
use super::EnvError;
use crate::model::{Tensor, TensorData, TensorTree};

pub type AgentRng = ChaCha8Rng;

/// A policy mapping observations to actions.
pub trait Agent {
    fn act(&mut self, observation: &TensorTree, rng: &mut AgentRng) -> Result<TensorTree, EnvError>;

    fn name(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AgentKind {
    /// Shortest-path planner for GridPickPlace taking a uniformly random
    /// action with probability `eps`.
    PlannerEps(f64),
    UniformRandom,
}

#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    kind: AgentKind,
    num_actions: i64,
}

pub fn scripted_agent(kind: AgentKind) -> Result<ScriptedAgent, EnvError> {
    if let AgentKind::PlannerEps(eps) = kind {
        if !(0.0..=1.0).contains(&eps) {
            return Err(EnvError::InvalidArgument(format!("eps must lie in [0, 1], got {eps}")));
        }
    }
    Ok(ScriptedAgent {
        kind,
        num_actions: GridAction::ALL.len() as i64,
    })
}

impl ScriptedAgent {
    pub fn kind(&self) -> AgentKind {
        self.kind
    }

    fn uniform(&self, rng: &mut AgentRng) -> i64 {
        rng.random_range(0..self.num_actions)
    }
}

fn cell(obs: &TensorTree, key: &str) -> Result<[i64; 2], EnvError> {
    match obs.get(key).and_then(TensorTree::as_leaf).map(Tensor::data) {
        Some(TensorData::I64(v)) if v.len() == 2 => Ok([v[0], v[1]]),
        _ => Err(EnvError::InvalidArgument(format!("planner needs an i64[2] `{key}` observation"))),
    }
}

/// Greedy shortest-path action on an obstacle-free grid: fix the row
/// first, then the column; grab on the can, drop on the bin.
pub(crate) fn plan(observation: &TensorTree) -> Result<GridAction, EnvError> {
    let agent = cell(observation, "agent")?;
    let holding = observation
        .get("holding")
        .and_then(TensorTree::as_leaf)
        .and_then(Tensor::as_bool)
        .ok_or_else(|| EnvError::InvalidArgument("planner needs a bool `holding` observation".into()))?;
    let target = if holding {
        cell(observation, "bin")?
    } else {
        cell(observation, "can")?
    };
    Ok(if agent == target {
        if holding {
            GridAction::Drop
        } else {
            GridAction::Grab
        }
    } else if agent[0] < target[0] {
        GridAction::Down
    } else if agent[0] > target[0] {
        GridAction::Up
    } else if agent[1] < target[1] {
        GridAction::Right
    } else {
        GridAction::Left
    })
}

impl Agent for ScriptedAgent {
    fn act(&mut self, observation: &TensorTree, rng: &mut AgentRng) -> Result<TensorTree, EnvError> {
        let id = match self.kind {
            AgentKind::UniformRandom => self.uniform(rng),
            AgentKind::PlannerEps(eps) => {
                if rng.random::<f64>() < eps {
                    self.uniform(rng)
                } else {
                    plan(observation)?.id()
                }
            }
        };
        Ok(Tensor::scalar_i64(id).into())
    }

    fn name(&self) -> String {
        match self.kind {
            AgentKind::PlannerEps(eps) => format!("planner_eps_{eps}"),
            AgentKind::UniformRandom => "uniform_random".into(),
        }
    }
}
