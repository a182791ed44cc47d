use std::fmt;

use super::spec::{canonical_fill, DatasetSchema, StepField};
use super::step::{Alignment, EpisodeRecord};

/// Identifier of a broken episode or step rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    EmptyEpisode,
    FirstNotSet,
    FirstMisplaced,
    LastNotSet,
    LastMisplaced,
    TerminalNotLast,
    SchemaMismatch,
    UndefinedNotFilled,
    EpisodeMetadataMismatch,
}

impl Rule {
    pub fn id(self) -> &'static str {
        match self {
            Rule::EmptyEpisode => "EMPTY_EPISODE",
            Rule::FirstNotSet => "FIRST_NOT_SET",
            Rule::FirstMisplaced => "FIRST_MISPLACED",
            Rule::LastNotSet => "LAST_NOT_SET",
            Rule::LastMisplaced => "LAST_MISPLACED",
            Rule::TerminalNotLast => "TERMINAL_NOT_LAST",
            Rule::SchemaMismatch => "SCHEMA_MISMATCH",
            Rule::UndefinedNotFilled => "UNDEFINED_NOT_FILLED",
            Rule::EpisodeMetadataMismatch => "EPISODE_METADATA_MISMATCH",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Step index, `None` for episode-level rules.
    pub step: Option<usize>,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.step {
            Some(i) => write!(f, "{}@{}", self.rule.id(), i)?,
            None => f.write_str(self.rule.id())?,
        }
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, rule: Rule, step: Option<usize>) -> bool {
        self.violations.iter().any(|v| v.rule == rule && v.step == step)
    }

    /// `RULE@step` tags, in report order.
    pub fn tags(&self) -> Vec<String> {
        self.violations
            .iter()
            .map(|v| match v.step {
                Some(i) => format!("{}@{}", v.rule.id(), i),
                None => v.rule.id().to_string(),
            })
            .collect()
    }
}

/// Checks flag structure, schema conformance and undefined-field fill for
/// every step, collecting all violations.
pub fn validate_episode(episode: &EpisodeRecord, schema: &DatasetSchema, alignment: Alignment) -> ValidationReport {
    let mut violations = Vec::new();
    let mut push = |step: Option<usize>, rule: Rule, detail: String| violations.push(Violation { step, rule, detail });

    if let Some(m) = schema.episode_metadata.mismatch(&episode.metadata) {
        push(None, Rule::EpisodeMetadataMismatch, m);
    }
    if episode.steps.is_empty() {
        push(None, Rule::EmptyEpisode, String::new());
        return ValidationReport { violations };
    }

    let last = episode.steps.len() - 1;
    let fills = [
        (StepField::Action, canonical_fill(&schema.action)),
        (StepField::Reward, canonical_fill(&schema.reward)),
        (StepField::Discount, canonical_fill(&schema.discount)),
    ];
    for (i, step) in episode.steps.iter().enumerate() {
        if i == 0 && !step.is_first {
            push(Some(i), Rule::FirstNotSet, String::new());
        }
        if i != 0 && step.is_first {
            push(Some(i), Rule::FirstMisplaced, String::new());
        }
        if i == last && !step.is_last {
            push(Some(i), Rule::LastNotSet, String::new());
        }
        if i != last && step.is_last {
            push(Some(i), Rule::LastMisplaced, String::new());
        }
        if step.is_terminal && !step.is_last {
            push(Some(i), Rule::TerminalNotLast, String::new());
        }
        let specs = [
            ("observation", &schema.observation, &step.observation),
            ("action", &schema.action, &step.action),
            ("reward", &schema.reward, &step.reward),
            ("discount", &schema.discount, &step.discount),
            ("metadata", &schema.step_metadata, &step.metadata),
        ];
        let mut conforming = true;
        for (name, spec, value) in specs {
            if let Some(m) = spec.mismatch(value) {
                conforming = false;
                push(Some(i), Rule::SchemaMismatch, format!("{name}{m}"));
            }
        }
        if !conforming {
            continue;
        }
        for (field, fill) in &fills {
            if !alignment.is_defined(*field, step.is_first, step.is_last) && step.field(*field) != fill {
                push(
                    Some(i),
                    Rule::UndefinedNotFilled,
                    format!("{field:?} is undefined under {alignment} but not zero-filled"),
                );
            }
        }
    }
    ValidationReport { violations }
}
