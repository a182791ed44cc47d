//! The per-session episode state machine, free of any I/O.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Running,
    Paused,
    /// The environment ended the episode; waiting for the user to confirm
    /// or reject it.
    AwaitingSave,
    Ended,
}

impl Phase {
    pub const ALL: [Phase; 5] = [Phase::Idle, Phase::Running, Phase::Paused, Phase::AwaitingSave, Phase::Ended];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Idle => "idle",
            Phase::Running => "running",
            Phase::Paused => "paused",
            Phase::AwaitingSave => "awaiting_save",
            Phase::Ended => "ended",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Canceled,
    Abandoned,
    Rejected,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [Outcome::Completed, Outcome::Canceled, Outcome::Abandoned, Outcome::Rejected];

    pub fn name(self) -> &'static str {
        match self {
            Outcome::Completed => "completed",
            Outcome::Canceled => "canceled",
            Outcome::Abandoned => "abandoned",
            Outcome::Rejected => "rejected",
        }
    }

    pub fn parse(s: &str) -> Option<Outcome> {
        Outcome::ALL.into_iter().find(|o| o.name() == s)
    }

    /// Whether an episode with this outcome is written to the study log.
    /// Rejected episodes are discarded.
    pub fn is_persisted(self) -> bool {
        self != Outcome::Rejected
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Event kinds, without payloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    StartEpisode,
    Action,
    Pause,
    Unpause,
    PauseTimeout,
    Cancel,
    EpisodeEnd,
    Save,
    SelectEnv,
    EndSession,
}

impl EventKind {
    pub const ALL: [EventKind; 10] = [
        EventKind::StartEpisode,
        EventKind::Action,
        EventKind::Pause,
        EventKind::Unpause,
        EventKind::PauseTimeout,
        EventKind::Cancel,
        EventKind::EpisodeEnd,
        EventKind::Save,
        EventKind::SelectEnv,
        EventKind::EndSession,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EventKind::StartEpisode => "start_episode",
            EventKind::Action => "action",
            EventKind::Pause => "pause",
            EventKind::Unpause => "unpause",
            EventKind::PauseTimeout => "pause_timeout",
            EventKind::Cancel => "cancel",
            EventKind::EpisodeEnd => "episode_end",
            EventKind::Save => "save",
            EventKind::SelectEnv => "select_env",
            EventKind::EndSession => "end_session",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    StartEpisode,
    Action(serde_json::Value),
    Pause,
    Unpause,
    PauseTimeout,
    Cancel,
    EpisodeEnd,
    Save { confirm: bool },
    SelectEnv(usize),
    EndSession,
}

impl Event {
    pub fn kind(&self) -> EventKind {
        match self {
            Event::StartEpisode => EventKind::StartEpisode,
            Event::Action(_) => EventKind::Action,
            Event::Pause => EventKind::Pause,
            Event::Unpause => EventKind::Unpause,
            Event::PauseTimeout => EventKind::PauseTimeout,
            Event::Cancel => EventKind::Cancel,
            Event::EpisodeEnd => EventKind::EpisodeEnd,
            Event::Save { .. } => EventKind::Save,
            Event::SelectEnv(_) => EventKind::SelectEnv,
            Event::EndSession => EventKind::EndSession,
        }
    }
}

/// What the runtime must do alongside a phase change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Effect {
    None,
    BeginEpisode,
    /// Apply the action: step now (sync) or remember it for the next tick
    /// (async).
    Act,
    /// Start the pause countdown.
    ArmDeadline,
    DisarmDeadline,
    SwitchEnv,
    /// The open episode leaves the buffer with this outcome.
    Finish(Outcome),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("event {event} is not allowed while {phase}")]
pub struct IllegalEvent {
    pub phase: Phase,
    pub event: EventKind,
}

/// The complete transition table.
///
/// `end_session` is legal in every live phase; an episode still in the
/// buffer at that point is abandoned. Cancelling is possible while running
/// or paused.
pub fn transition(phase: Phase, event: EventKind) -> Result<(Phase, Effect), IllegalEvent> {
    use EventKind as E;
    use Phase as P;
    let next = match (phase, event) {
        (P::Idle, E::StartEpisode) => (P::Running, Effect::BeginEpisode),
        (P::Idle, E::SelectEnv) => (P::Idle, Effect::SwitchEnv),
        (P::Idle, E::EndSession) => (P::Ended, Effect::None),

        (P::Running, E::Action) => (P::Running, Effect::Act),
        (P::Running, E::Pause) => (P::Paused, Effect::ArmDeadline),
        (P::Running, E::Cancel) => (P::Idle, Effect::Finish(Outcome::Canceled)),
        (P::Running, E::EpisodeEnd) => (P::AwaitingSave, Effect::None),
        (P::Running, E::EndSession) => (P::Ended, Effect::Finish(Outcome::Abandoned)),

        (P::Paused, E::Unpause) => (P::Running, Effect::DisarmDeadline),
        (P::Paused, E::PauseTimeout) => (P::Ended, Effect::Finish(Outcome::Abandoned)),
        (P::Paused, E::Cancel) => (P::Idle, Effect::Finish(Outcome::Canceled)),
        (P::Paused, E::EndSession) => (P::Ended, Effect::Finish(Outcome::Abandoned)),

        (P::AwaitingSave, E::Save) => (P::Idle, Effect::None),
        (P::AwaitingSave, E::EndSession) => (P::Ended, Effect::Finish(Outcome::Abandoned)),

        _ => return Err(IllegalEvent { phase, event }),
    };
    Ok(next)
}

/// Applies `event`, resolving the outcome of a save from its payload.
pub fn apply(phase: Phase, event: &Event) -> Result<(Phase, Effect), IllegalEvent> {
    let (next, effect) = transition(phase, event.kind())?;
    let effect = match event {
        Event::Save { confirm } => Effect::Finish(if *confirm { Outcome::Completed } else { Outcome::Rejected }),
        _ => effect,
    };
    Ok((next, effect))
}
