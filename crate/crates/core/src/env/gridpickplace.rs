use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvError, Environment, StepType, TimeStep};
use crate::model::{DType, DatasetSchema, FeatureSpec, Tensor, TensorData, TensorTree};

pub const GRID_SIZE: i64 = 8;
pub const TIME_LIMIT: u32 = 400;
/// Rendered images are `GRID_SIZE * RENDER_CELL_PX` pixels square.
pub const RENDER_CELL_PX: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GridAction {
    Up,
    Down,
    Left,
    Right,
    Grab,
    Drop,
}

impl GridAction {
    pub const ALL: [GridAction; 6] = [
        GridAction::Up,
        GridAction::Down,
        GridAction::Left,
        GridAction::Right,
        GridAction::Grab,
        GridAction::Drop,
    ];

    pub fn id(self) -> i64 {
        self as i64
    }

    pub fn from_id(id: i64) -> Option<GridAction> {
        GridAction::ALL.get(usize::try_from(id).ok()?).copied()
    }

    pub fn to_tree(self) -> TensorTree {
        Tensor::scalar_i64(self.id()).into()
    }
}

type Cell = [i64; 2];

/// Pick-and-place on an 8x8 grid: carry the can onto the bin.
///
/// Reward is 1.0 on the step that drops the can on the bin, which also ends
/// the episode as terminal (discount 0). Otherwise the episode is cut at
/// the time limit with discount 1.
#[derive(Debug, Clone)]
pub struct GridPickPlace {
    rng: ChaCha8Rng,
    agent: Cell,
    can: Cell,
    bin: Cell,
    holding: bool,
    t: u32,
    time_limit: u32,
    end_on_success: bool,
    needs_reset: bool,
}

impl Default for GridPickPlace {
    fn default() -> Self {
        GridPickPlace::new(0)
    }
}

impl GridPickPlace {
    pub fn new(seed: u64) -> GridPickPlace {
        GridPickPlace {
            rng: ChaCha8Rng::seed_from_u64(seed),
            agent: [0, 0],
            can: [0, 0],
            bin: [0, 0],
            holding: false,
            t: 0,
            time_limit: TIME_LIMIT,
            end_on_success: true,
            needs_reset: true,
        }
    }

    pub fn with_time_limit(mut self, limit: u32) -> Self {
        self.time_limit = limit.max(1);
        self
    }

    /// Keeps the episode running after a successful drop, so every
    /// episode lasts exactly the time limit. Each drop on the bin still
    /// pays 1.0.
    pub fn with_fixed_length(mut self) -> Self {
        self.end_on_success = false;
        self
    }

    /// Places agent, can and bin explicitly; the episode restarts from here
    /// without consuming randomness.
    pub fn set_layout(&mut self, agent: Cell, can: Cell, bin: Cell, holding: bool) -> TimeStep {
        self.agent = agent;
        self.can = can;
        self.bin = bin;
        self.holding = holding;
        self.t = 0;
        self.needs_reset = false;
        TimeStep::first(self.observation())
    }

    pub fn observation_spec_static() -> FeatureSpec {
        FeatureSpec::node([
            ("agent", FeatureSpec::leaf(DType::I64, &[2])),
            ("bin", FeatureSpec::leaf(DType::I64, &[2])),
            ("can", FeatureSpec::leaf(DType::I64, &[2])),
            ("holding", FeatureSpec::scalar(DType::Bool)),
        ])
    }

    pub fn action_spec_static() -> FeatureSpec {
        FeatureSpec::scalar(DType::I64)
    }

    /// Dataset schema for recordings of this environment, with agent and
    /// episode ids as episode metadata.
    pub fn schema() -> DatasetSchema {
        DatasetSchema::new(Self::observation_spec_static(), Self::action_spec_static())
            .with_episode_metadata(super::id_metadata_spec())
    }

    /// Same as [`schema`](Self::schema) with the rendered frame as the
    /// `image` step metadata.
    pub fn schema_with_images() -> DatasetSchema {
        let side = GRID_SIZE as usize * RENDER_CELL_PX;
        Self::schema().with_step_metadata(FeatureSpec::node([(
            "image",
            FeatureSpec::leaf(DType::U8, &[side, side, 3]),
        )]))
    }

    fn observation(&self) -> TensorTree {
        let cell = |c: Cell| TensorTree::Leaf(Tensor::vector(TensorData::I64(c.to_vec())));
        TensorTree::node([
            ("agent", cell(self.agent)),
            ("bin", cell(self.bin)),
            ("can", cell(self.can)),
            ("holding", Tensor::scalar_bool(self.holding).into()),
        ])
    }

    fn random_cell(&mut self) -> Cell {
        [self.rng.random_range(0..GRID_SIZE), self.rng.random_range(0..GRID_SIZE)]
    }

    fn transition(&self, reward: f64, discount: f64, step_type: StepType) -> TimeStep {
        TimeStep {
            step_type,
            reward: Some(Tensor::scalar_f64(reward).into()),
            discount: Some(Tensor::scalar_f64(discount).into()),
            observation: self.observation(),
        }
    }
}

impl Environment for GridPickPlace {
    fn observation_spec(&self) -> FeatureSpec {
        Self::observation_spec_static()
    }

    fn action_spec(&self) -> FeatureSpec {
        Self::action_spec_static()
    }

    fn reset(&mut self) -> Result<TimeStep, EnvError> {
        self.agent = self.random_cell();
        self.can = loop {
            let c = self.random_cell();
            if c != self.agent {
                break c;
            }
        };
        self.bin = loop {
            let c = self.random_cell();
            if c != self.agent && c != self.can {
                break c;
            }
        };
        self.holding = false;
        self.t = 0;
        self.needs_reset = false;
        Ok(TimeStep::first(self.observation()))
    }

    fn step(&mut self, action: &TensorTree) -> Result<TimeStep, EnvError> {
        if self.needs_reset {
            return self.reset();
        }
        let id = action
            .as_leaf()
            .filter(|t| t.dtype() == DType::I64 && t.len() == 1)
            .and_then(|t| match t.data() {
                TensorData::I64(v) => Some(v[0]),
                _ => None,
            })
            .ok_or_else(|| EnvError::InvalidAction(format!("expected scalar i64, got {action:?}")))?;
        let action =
            GridAction::from_id(id).ok_or_else(|| EnvError::InvalidAction(format!("action {id} not in 0..=5")))?;

        let mut reward = 0.0;
        let mut terminal = false;
        let clamp = |v: i64| v.clamp(0, GRID_SIZE - 1);
        match action {
            GridAction::Up => self.agent[0] = clamp(self.agent[0] - 1),
            GridAction::Down => self.agent[0] = clamp(self.agent[0] + 1),
            GridAction::Left => self.agent[1] = clamp(self.agent[1] - 1),
            GridAction::Right => self.agent[1] = clamp(self.agent[1] + 1),
            GridAction::Grab => {
                if !self.holding && self.agent == self.can {
                    self.holding = true;
                }
            }
            GridAction::Drop => {
                if self.holding {
                    self.holding = false;
                    self.can = self.agent;
                    if self.can == self.bin {
                        reward = 1.0;
                        terminal = self.end_on_success;
                    }
                }
            }
        }
        if self.holding {
            self.can = self.agent;
        }
        self.t += 1;
        if terminal {
            self.needs_reset = true;
            Ok(self.transition(reward, 0.0, StepType::Last))
        } else if self.t >= self.time_limit {
            self.needs_reset = true;
            Ok(self.transition(reward, 1.0, StepType::Last))
        } else {
            Ok(self.transition(reward, 1.0, StepType::Mid))
        }
    }

    fn render(&self) -> Result<Tensor, EnvError> {
        let px = RENDER_CELL_PX;
        let side = GRID_SIZE as usize * px;
        let mut img = vec![0u8; side * side * 3];
        let mut fill = |cell: Cell, inset: usize, rgb: [u8; 3]| {
            let (r0, c0) = (cell[0] as usize * px, cell[1] as usize * px);
            for y in r0 + inset..r0 + px - inset {
                for x in c0 + inset..c0 + px - inset {
                    img[(y * side + x) * 3..(y * side + x) * 3 + 3].copy_from_slice(&rgb);
                }
            }
        };
        for r in 0..GRID_SIZE {
            for c in 0..GRID_SIZE {
                let shade = if (r + c) % 2 == 0 { 224 } else { 200 };
                fill([r, c], 0, [shade, shade, shade]);
            }
        }
        fill(self.bin, 1, [40, 80, 200]);
        fill(self.agent, 3, [40, 170, 60]);
        let can_inset = if self.holding { 7 } else { 5 };
        fill(self.can, can_inset, [210, 40, 40]);
        Ok(Tensor::new(vec![side, side, 3], TensorData::U8(img)).expect("shape matches buffer"))
    }

    fn seed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.needs_reset = true;
    }
}
