use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::spec::{canonical_fill, DatasetSchema, StepField};
use super::tensor::TensorTree;

/// One agent-environment interaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepRecord {
    pub observation: TensorTree,
    pub action: TensorTree,
    pub reward: TensorTree,
    pub discount: TensorTree,
    pub is_first: bool,
    pub is_last: bool,
    pub is_terminal: bool,
    pub metadata: TensorTree,
}

impl StepRecord {
    /// A step with every field set to the schema's undefined fill and all
    /// flags cleared.
    pub fn filled(schema: &DatasetSchema) -> StepRecord {
        StepRecord {
            observation: canonical_fill(&schema.observation),
            action: canonical_fill(&schema.action),
            reward: canonical_fill(&schema.reward),
            discount: canonical_fill(&schema.discount),
            is_first: false,
            is_last: false,
            is_terminal: false,
            metadata: canonical_fill(&schema.step_metadata),
        }
    }

    pub fn field(&self, field: StepField) -> &TensorTree {
        match field {
            StepField::Observation => &self.observation,
            StepField::Action => &self.action,
            StepField::Reward => &self.reward,
            StepField::Discount => &self.discount,
            StepField::Metadata => &self.metadata,
        }
    }

    /// Resolves a selector like `observation/pos` against this step.
    pub fn select(&self, selector: &str) -> Option<&TensorTree> {
        let (head, rest) = selector.split_once('/').unwrap_or((selector, ""));
        self.field(StepField::parse(head)?).get(rest)
    }

    pub fn flags_byte(&self) -> u8 {
        (self.is_first as u8) | ((self.is_last as u8) << 1) | ((self.is_terminal as u8) << 2)
    }
}

/// An ordered sequence of steps plus episode-level metadata.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EpisodeRecord {
    pub steps: Vec<StepRecord>,
    pub metadata: TensorTree,
}

impl EpisodeRecord {
    pub fn new(steps: Vec<StepRecord>, metadata: TensorTree) -> EpisodeRecord {
        EpisodeRecord { steps, metadata }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn ends_terminal(&self) -> bool {
        self.steps.last().is_some_and(|s| s.is_terminal)
    }
}

/// How reward, discount and action are grouped with observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    /// Step t holds o_t, the action applied to it and the resulting reward.
    #[default]
    Sar,
    /// Step t holds the reward that led to o_t, then o_t and its action.
    Rsa,
}

impl Alignment {
    pub fn name(self) -> &'static str {
        match self {
            Alignment::Sar => "sar",
            Alignment::Rsa => "rsa",
        }
    }

    /// Whether `field` carries a defined value on a step with these flags.
    pub fn is_defined(self, field: StepField, is_first: bool, is_last: bool) -> bool {
        match (self, field) {
            (_, StepField::Observation | StepField::Metadata) => true,
            (Alignment::Sar, _) => !is_last,
            (Alignment::Rsa, StepField::Action) => !is_last,
            (Alignment::Rsa, StepField::Reward | StepField::Discount) => !is_first,
        }
    }

    pub fn undefined_fields(self, is_first: bool, is_last: bool) -> Vec<StepField> {
        [StepField::Action, StepField::Reward, StepField::Discount]
            .into_iter()
            .filter(|f| !self.is_defined(*f, is_first, is_last))
            .collect()
    }
}

impl fmt::Display for Alignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Alignment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sar" => Ok(Alignment::Sar),
            "rsa" => Ok(Alignment::Rsa),
            other => Err(format!("unknown alignment {other:?} (expected sar or rsa)")),
        }
    }
}
