use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::clock::Clock;
use crate::protocol::{ClientMessage, ServerMessage, TagScopeName};
use crate::runtime::SessionRuntime;
use crate::session::{Event, Phase};
use crate::store::{StudyStore, TagScope, TagValue};
use crate::{CollectError, Result};

struct Slot {
    runtime: SessionRuntime,
    attached: bool,
}

type SharedSlot = Arc<Mutex<Slot>>;

/// Registry of live sessions shared by all connections.
pub struct Hub {
    store: Arc<StudyStore>,
    clock: Arc<dyn Clock>,
    sessions: Mutex<HashMap<u64, SharedSlot>>,
    next_session: AtomicU64,
}

impl Hub {
    pub fn new(store: Arc<StudyStore>, clock: Arc<dyn Clock>) -> Arc<Hub> {
        Arc::new(Hub {
            store,
            clock,
            sessions: Mutex::new(HashMap::new()),
            next_session: AtomicU64::new(1),
        })
    }

    pub fn store(&self) -> &Arc<StudyStore> {
        &self.store
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn connect(self: &Arc<Self>) -> Connection {
        Connection {
            hub: Arc::clone(self),
            slot: None,
        }
    }

    /// Ids of sessions that have not ended.
    pub fn live_sessions(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.sessions.lock().expect("hub lock").keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    /// Advances detached sessions (so abandoned pauses time out) and drops
    /// ended ones.
    pub fn reap(&self) {
        let mut sessions = self.sessions.lock().expect("hub lock");
        sessions.retain(|_, slot| {
            let mut slot = slot.lock().expect("session lock");
            if !slot.attached {
                slot.runtime.poll();
            }
            slot.attached || slot.runtime.phase() != Phase::Ended
        });
    }

    /// Earliest clock time at which a detached session needs [`reap`](Self::reap).
    pub fn next_reap(&self) -> Option<Duration> {
        let sessions = self.sessions.lock().expect("hub lock");
        sessions
            .values()
            .filter_map(|slot| {
                let slot = slot.lock().expect("session lock");
                (!slot.attached).then(|| slot.runtime.next_wakeup()).flatten()
            })
            .min()
    }

    fn open(&self, study: u64, user: Option<String>) -> Result<SharedSlot> {
        let study = self.store.study(study)?;
        let id = self.next_session.fetch_add(1, Ordering::SeqCst);
        let user = user.unwrap_or_else(|| format!("anonymous-{id}"));
        let runtime = SessionRuntime::new(id, study, &user, Arc::clone(&self.store), Arc::clone(&self.clock))?;
        let slot = Arc::new(Mutex::new(Slot {
            runtime,
            attached: true,
        }));
        self.sessions.lock().expect("hub lock").insert(id, Arc::clone(&slot));
        Ok(slot)
    }

    fn resume(&self, study: u64, user: Option<&str>, session: u64) -> Result<SharedSlot> {
        let slot = self
            .sessions
            .lock()
            .expect("hub lock")
            .get(&session)
            .cloned()
            .ok_or(CollectError::UnknownSession(session))?;
        let mut s = slot.lock().expect("session lock");
        let owner_ok = user.is_none_or(|u| u == s.runtime.user());
        if s.attached || s.runtime.study().id != study || !owner_ok || s.runtime.phase() == Phase::Ended {
            return Err(CollectError::UnknownSession(session));
        }
        s.attached = true;
        drop(s);
        Ok(slot)
    }

    fn forget(&self, session: u64) {
        self.sessions.lock().expect("hub lock").remove(&session);
    }
}

/// One client's view of the hub. Messages go in as text and come out as
/// [`ServerMessage`]s.
pub struct Connection {
    hub: Arc<Hub>,
    slot: Option<SharedSlot>,
}

impl Connection {
    pub fn session_id(&self) -> Option<u64> {
        self.slot.as_ref().map(|s| s.lock().expect("session lock").runtime.id())
    }

    pub fn handle_text(&mut self, text: &str) -> Vec<ServerMessage> {
        match ClientMessage::parse(text) {
            Ok(msg) => self.handle(msg),
            Err(e) => vec![ServerMessage::error(&e)],
        }
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Vec<ServerMessage> {
        match self.try_handle(msg) {
            Ok(out) => out,
            Err(e) => vec![ServerMessage::error(&e)],
        }
    }

    fn try_handle(&mut self, msg: ClientMessage) -> Result<Vec<ServerMessage>> {
        if let ClientMessage::StartSession { study, user, session } = msg {
            if self.slot.is_some() {
                return Err(CollectError::BadMessage("a session is already open on this connection".into()));
            }
            let slot = match session {
                Some(id) => self.hub.resume(study, user.as_deref(), id)?,
                None => self.hub.open(study, user)?,
            };
            let state = slot.lock().expect("session lock").runtime.state();
            self.slot = Some(slot);
            return Ok(vec![state]);
        }
        let slot = Arc::clone(self.slot.as_ref().ok_or(CollectError::NoSession)?);
        let mut s = slot.lock().expect("session lock");
        let event = match msg {
            ClientMessage::StartSession { .. } => unreachable!("handled above"),
            ClientMessage::SelectEnv { index } => Event::SelectEnv(index),
            ClientMessage::StartEpisode => Event::StartEpisode,
            ClientMessage::Action { value } => Event::Action(value),
            ClientMessage::Pause => Event::Pause,
            ClientMessage::Unpause => Event::Unpause,
            ClientMessage::Cancel => Event::Cancel,
            ClientMessage::Save { confirm } => Event::Save { confirm },
            ClientMessage::EndSession => Event::EndSession,
            ClientMessage::Tag {
                scope,
                name,
                step,
                value,
                episode,
            } => {
                let scope = match (scope, step) {
                    (TagScopeName::Episode, None) => TagScope::Episode,
                    (TagScopeName::Step, Some(j)) => TagScope::Step(j),
                    (TagScopeName::Episode, Some(_)) => {
                        return Err(CollectError::InvalidTag("episode tags take no step".into()))
                    }
                    (TagScopeName::Step, None) => return Err(CollectError::InvalidTag("step tags need a step".into())),
                };
                let value = value.unwrap_or(TagValue::Bool(true));
                return Ok(vec![s.runtime.tag(scope, &name, value, episode)?]);
            }
        };
        let out = s.runtime.handle(event);
        if s.runtime.phase() == Phase::Ended {
            let id = s.runtime.id();
            drop(s);
            self.hub.forget(id);
            self.slot = None;
        }
        Ok(out)
    }

    pub fn poll(&mut self) -> Vec<ServerMessage> {
        let Some(slot) = self.slot.clone() else {
            return Vec::new();
        };
        let mut s = slot.lock().expect("session lock");
        let out = s.runtime.poll();
        if s.runtime.phase() == Phase::Ended {
            let id = s.runtime.id();
            drop(s);
            self.hub.forget(id);
            self.slot = None;
        }
        out
    }

    pub fn next_wakeup(&self) -> Option<Duration> {
        self.slot
            .as_ref()
            .and_then(|s| s.lock().expect("session lock").runtime.next_wakeup())
    }

    /// Leaves the session resumable: a running episode is paused and its
    /// pause timeout keeps counting.
    pub fn disconnect(&mut self) {
        if let Some(slot) = self.slot.take() {
            let mut s = slot.lock().expect("session lock");
            s.runtime.detach();
            s.attached = false;
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        self.disconnect();
    }
}
