use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use ivirs_core::corpus::{Collection, CorpusError, CorpusFormat};
use ivirs_core::dds::{DdsError, Outbox, ProfileStore};
use ivirs_core::pirs::RankingParams;
use ivirs_core::session::{
    Engine, Outcome, Session, SessionConfig, SummaryView, TranscriptWordView,
};
use ivirs_core::vdm_sim::ErrorModel;
use thiserror::Error;

use crate::config::ServiceConfig;

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("index file {0} does not exist (build one with `ivirs index`)")]
    MissingIndex(PathBuf),
    #[error(transparent)]
    Index(#[from] CorpusError),
    #[error("profiles: {0}")]
    Profiles(#[from] DdsError),
}

/// What every engine built by this server shares besides the collection.
#[derive(Debug, Clone)]
struct EngineTemplate {
    profiles: ProfileStore,
    outbox: PathBuf,
    params: RankingParams,
    session: SessionConfig,
    recognizer_words: Vec<String>,
}

impl EngineTemplate {
    fn build(&self, collection: Collection) -> Engine {
        Engine::new(collection, self.profiles.clone(), Outbox::new(&self.outbox))
            .with_params(self.params)
            .with_config(self.session)
            .with_recognizer_words(self.recognizer_words.iter().cloned())
    }
}

/// One dialog plus what the service remembers for its views.
#[derive(Debug)]
pub(crate) struct SlotInner {
    pub session: Session,
    /// Engine current when the session was opened.
    pub engine: Arc<Engine>,
    pub transcript: Vec<TranscriptWordView>,
    pub summary: Option<SummaryView>,
    pub surely_relevant: Option<usize>,
}

impl SlotInner {
    pub fn absorb(&mut self, outcome: &Outcome) {
        if !outcome.transcript.is_empty() {
            self.transcript = outcome.transcript.clone();
        }
        if outcome.summary.is_some() {
            self.summary = outcome.summary.clone();
        }
        if outcome.surely_relevant.is_some() {
            self.surely_relevant = outcome.surely_relevant;
        }
    }
}

#[derive(Debug)]
pub(crate) struct Slot {
    pub inner: tokio::sync::Mutex<SlotInner>,
    last_seen: Mutex<Instant>,
}

impl Slot {
    fn touch(&self) {
        *self.last_seen.lock().expect("clock lock") = Instant::now();
    }

    fn idle_for(&self, now: Instant) -> Duration {
        now.saturating_duration_since(*self.last_seen.lock().expect("clock lock"))
    }
}

/// Shared server state: the current engine and the open sessions.
#[derive(Debug)]
pub struct AppState {
    engine: RwLock<Arc<Engine>>,
    template: EngineTemplate,
    pub(crate) default_model: ErrorModel,
    pub(crate) default_format: CorpusFormat,
    timeout: Duration,
    sessions: Mutex<HashMap<String, Arc<Slot>>>,
}

impl AppState {
    pub fn new(collection: Collection, profiles: ProfileStore, config: &ServiceConfig) -> Self {
        let template = EngineTemplate {
            profiles,
            outbox: config.outbox.clone(),
            params: config.ranking,
            session: config.session,
            recognizer_words: config.recognizer_words.clone(),
        };
        Self {
            engine: RwLock::new(Arc::new(template.build(collection))),
            template,
            default_model: config.error_model,
            default_format: config.corpus_format,
            timeout: config.session_timeout(),
            sessions: Mutex::new(HashMap::new()),
        }
    }

    /// Loads the index and profile store named by `config`.
    pub fn from_config(config: &ServiceConfig) -> Result<Self, StartupError> {
        if !config.index.is_file() {
            return Err(StartupError::MissingIndex(config.index.clone()));
        }
        let collection = Collection::load(&config.index)?;
        let profiles = match &config.profiles {
            Some(p) => ProfileStore::load(p)?,
            None => ProfileStore::default(),
        };
        Ok(Self::new(collection, profiles, config))
    }

    pub fn engine(&self) -> Arc<Engine> {
        self.engine.read().expect("engine lock").clone()
    }

    /// Replaces the engine for sessions opened from now on.
    pub fn swap_collection(&self, collection: Collection) -> Arc<Engine> {
        let engine = Arc::new(self.template.build(collection));
        *self.engine.write().expect("engine lock") = engine.clone();
        engine
    }

    pub fn session_count(&self) -> usize {
        let mut map = self.sessions.lock().expect("session map lock");
        self.expire(&mut map);
        map.len()
    }

    fn expire(&self, map: &mut HashMap<String, Arc<Slot>>) {
        let now = Instant::now();
        map.retain(|_, slot| slot.idle_for(now) < self.timeout);
    }

    pub(crate) fn open(&self) -> (String, Arc<Slot>) {
        let id = format!("{:032x}", rand::random::<u128>());
        let slot = Arc::new(Slot {
            inner: tokio::sync::Mutex::new(SlotInner {
                session: Session::new(),
                engine: self.engine(),
                transcript: Vec::new(),
                summary: None,
                surely_relevant: None,
            }),
            last_seen: Mutex::new(Instant::now()),
        });
        let mut map = self.sessions.lock().expect("session map lock");
        self.expire(&mut map);
        map.insert(id.clone(), slot.clone());
        (id, slot)
    }

    pub(crate) fn slot(&self, id: &str) -> Option<Arc<Slot>> {
        let mut map = self.sessions.lock().expect("session map lock");
        self.expire(&mut map);
        let slot = map.get(id).cloned()?;
        slot.touch();
        Some(slot)
    }
}
