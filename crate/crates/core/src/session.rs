//! The dialog state machine: login, query capture with confirmation of
//! uncertain words, summary browsing, relevance marking, feedback and
//! delivery.
//!
//! Every accepted action is appended to the event log. Logged actions carry
//! what is needed to replay them (a login is logged by its result, never by
//! the PIN), so replaying a log against the same engine rebuilds the same
//! session.

use std::collections::BTreeSet;
use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Collection;
use crate::dds::{
    self, Channel, DdsError, DeliveryRequest, Format, Outbox, ProfileStore, Receipt,
    RendererRegistry,
};
use crate::dss::{self, SummaryWeights};
use crate::pirs::{
    self, detect_misrecognitions, relevance_feedback, word_similarity, MisrecognitionSuggestion,
    PirsError, QueryOrigin, QueryTerm, RankedList, RankingParams, WeightedQuery,
};
use crate::vdm_sim::{
    self, align_words, derive_seed, AlignOp, ConfusionVocabulary, ErrorModel, PositionedTerm,
    SimError,
};

/// Stream offset for re-utterance seeds, clear of the recognizer streams.
const REUTTER_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Words whose combined confidence falls below this are confirmed.
    pub theta_confirm: f64,
    pub max_login_attempts: u32,
    pub max_alternatives: usize,
    pub summary_weights: SummaryWeights,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            theta_confirm: 0.5,
            max_login_attempts: 3,
            max_alternatives: 3,
            summary_weights: SummaryWeights::default(),
        }
    }
}

/// Everything sessions share: the collection, ranking parameters, users and
/// delivery backends. Immutable once built.
pub struct Engine {
    pub collection: Collection,
    pub params: RankingParams,
    pub config: SessionConfig,
    pub profiles: ProfileStore,
    pub renderers: RendererRegistry,
    pub outbox: Outbox,
    vocabulary: ConfusionVocabulary,
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine")
            .field("documents", &self.collection.documents().len())
            .field("params", &self.params)
            .field("config", &self.config)
            .field("users", &self.profiles.len())
            .field("outbox", &self.outbox.root())
            .finish_non_exhaustive()
    }
}

impl Engine {
    pub fn new(collection: Collection, profiles: ProfileStore, outbox: Outbox) -> Self {
        let vocabulary = ConfusionVocabulary::new(collection.index().vocabulary().iter().cloned());
        Self {
            collection,
            params: RankingParams::default(),
            config: SessionConfig::default(),
            profiles,
            renderers: RendererRegistry::default(),
            outbox,
            vocabulary,
        }
    }

    pub fn with_params(mut self, params: RankingParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_config(mut self, config: SessionConfig) -> Self {
        self.config = config;
        self
    }

    /// Widens the simulated recognizers' lexicon beyond the index vocabulary.
    pub fn with_recognizer_words<I, S>(mut self, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let all = self
            .collection
            .index()
            .vocabulary()
            .iter()
            .cloned()
            .chain(words.into_iter().map(Into::into));
        self.vocabulary = ConfusionVocabulary::new(all);
        self
    }

    /// Confusion vocabulary of the simulated recognizers.
    pub fn vocabulary(&self) -> &ConfusionVocabulary {
        &self.vocabulary
    }

    /// Up to `max_alternatives` index terms most similar to `word`, best first.
    pub fn alternatives(&self, word: &str) -> Vec<String> {
        let word = word.to_lowercase();
        let mut scored: Vec<(f64, &String)> = self
            .collection
            .index()
            .vocabulary()
            .iter()
            .filter(|v| **v != word)
            .map(|v| (word_similarity(&word, v), v))
            .filter(|(s, _)| *s > 0.0)
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        scored
            .into_iter()
            .take(self.config.max_alternatives)
            .map(|(_, v)| v.clone())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    AwaitingLogin,
    AwaitingQuery,
    ConfirmingWords,
    Browsing,
    Closed,
}

impl StateKind {
    pub const ALL: [StateKind; 5] = [
        StateKind::AwaitingLogin,
        StateKind::AwaitingQuery,
        StateKind::ConfirmingWords,
        StateKind::Browsing,
        StateKind::Closed,
    ];
}

impl fmt::Display for StateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StateKind::AwaitingLogin => "AwaitingLogin",
            StateKind::AwaitingQuery => "AwaitingQuery",
            StateKind::ConfirmingWords => "ConfirmingWords",
            StateKind::Browsing => "Browsing",
            StateKind::Closed => "Closed",
        };
        f.write_str(s)
    }
}

/// An uncertain word awaiting the user's decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordConfirmation {
    /// Position in the merged transcript.
    pub position: usize,
    pub surface: String,
    pub confidence: f64,
    pub alternatives: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum SessionState {
    AwaitingLogin,
    AwaitingQuery,
    ConfirmingWords {
        pending: Vec<WordConfirmation>,
    },
    /// `cursor` is the presented entry; `None` before the first one.
    Browsing {
        cursor: Option<usize>,
    },
    Closed,
}

impl SessionState {
    pub fn kind(&self) -> StateKind {
        match self {
            SessionState::AwaitingLogin => StateKind::AwaitingLogin,
            SessionState::AwaitingQuery => StateKind::AwaitingQuery,
            SessionState::ConfirmingWords { .. } => StateKind::ConfirmingWords,
            SessionState::Browsing { .. } => StateKind::Browsing,
            SessionState::Closed => StateKind::Closed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryMode {
    Typed,
    SpokenSimulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub utterance: String,
    pub mode: QueryMode,
    #[serde(default = "one")]
    pub n_recognizers: usize,
    #[serde(default)]
    pub model: ErrorModel,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl QueryRequest {
    pub fn typed(utterance: impl Into<String>) -> Self {
        Self {
            utterance: utterance.into(),
            mode: QueryMode::Typed,
            n_recognizers: 1,
            model: ErrorModel::default(),
            seed: 0,
        }
    }

    pub fn spoken(
        utterance: impl Into<String>,
        n_recognizers: usize,
        model: ErrorModel,
        seed: u64,
    ) -> Self {
        Self {
            utterance: utterance.into(),
            mode: QueryMode::SpokenSimulated,
            n_recognizers,
            model,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "choice", content = "index", rename_all = "snake_case")]
pub enum ConfirmChoice {
    Keep,
    ReUtter,
    Alternative(usize),
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrowseAction {
    Next,
    Repeat,
    MarkRelevant,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Login {
        pin: String,
    },
    SubmitQuery(QueryRequest),
    Confirm {
        position: usize,
        choice: ConfirmChoice,
    },
    Browse {
        browse: BrowseAction,
    },
    Feedback,
    ApproveSuggestion {
        index: usize,
    },
    Deliver(DeliveryRequest),
    Close,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Login,
    SubmitQuery,
    Confirm,
    Browse,
    Feedback,
    ApproveSuggestion,
    Deliver,
    Close,
}

impl ActionKind {
    pub const ALL: [ActionKind; 8] = [
        ActionKind::Login,
        ActionKind::SubmitQuery,
        ActionKind::Confirm,
        ActionKind::Browse,
        ActionKind::Feedback,
        ActionKind::ApproveSuggestion,
        ActionKind::Deliver,
        ActionKind::Close,
    ];
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Login { .. } => ActionKind::Login,
            Action::SubmitQuery(_) => ActionKind::SubmitQuery,
            Action::Confirm { .. } => ActionKind::Confirm,
            Action::Browse { .. } => ActionKind::Browse,
            Action::Feedback => ActionKind::Feedback,
            Action::ApproveSuggestion { .. } => ActionKind::ApproveSuggestion,
            Action::Deliver(_) => ActionKind::Deliver,
            Action::Close => ActionKind::Close,
        }
    }
}

/// Result of a login attempt, as recorded in the event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum LoginResult {
    Accepted { user_id: String },
    Rejected,
    Malformed,
}

/// An action as logged: identical to [`Action`] except that logins carry
/// their result instead of the PIN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum LoggedAction {
    Login(LoginResult),
    SubmitQuery(QueryRequest),
    Confirm {
        position: usize,
        choice: ConfirmChoice,
    },
    Browse {
        browse: BrowseAction,
    },
    Feedback,
    ApproveSuggestion {
        index: usize,
    },
    Deliver(DeliveryRequest),
    Close,
}

impl LoggedAction {
    pub fn kind(&self) -> ActionKind {
        match self {
            LoggedAction::Login(_) => ActionKind::Login,
            LoggedAction::SubmitQuery(_) => ActionKind::SubmitQuery,
            LoggedAction::Confirm { .. } => ActionKind::Confirm,
            LoggedAction::Browse { .. } => ActionKind::Browse,
            LoggedAction::Feedback => ActionKind::Feedback,
            LoggedAction::ApproveSuggestion { .. } => ActionKind::ApproveSuggestion,
            LoggedAction::Deliver(_) => ActionKind::Deliver,
            LoggedAction::Close => ActionKind::Close,
        }
    }
}

/// States an action may lead to from a given state. Pairs not listed are
/// illegal transitions.
pub const TRANSITIONS: &[(StateKind, ActionKind, &[StateKind])] = {
    use ActionKind as A;
    use StateKind as S;
    &[
        (
            S::AwaitingLogin,
            A::Login,
            &[S::AwaitingLogin, S::AwaitingQuery, S::Closed],
        ),
        (
            S::AwaitingQuery,
            A::SubmitQuery,
            &[S::AwaitingQuery, S::ConfirmingWords, S::Browsing],
        ),
        (S::AwaitingQuery, A::Feedback, &[S::Browsing]),
        (S::AwaitingQuery, A::Deliver, &[S::AwaitingQuery]),
        (S::AwaitingQuery, A::Close, &[S::Closed]),
        (
            S::ConfirmingWords,
            A::Confirm,
            &[S::ConfirmingWords, S::AwaitingQuery, S::Browsing],
        ),
        (S::ConfirmingWords, A::Deliver, &[S::ConfirmingWords]),
        (S::ConfirmingWords, A::Close, &[S::Closed]),
        (
            S::Browsing,
            A::SubmitQuery,
            &[S::AwaitingQuery, S::ConfirmingWords, S::Browsing],
        ),
        (S::Browsing, A::Browse, &[S::Browsing, S::AwaitingQuery]),
        (S::Browsing, A::Feedback, &[S::Browsing]),
        (S::Browsing, A::ApproveSuggestion, &[S::Browsing]),
        (S::Browsing, A::Deliver, &[S::Browsing]),
        (S::Browsing, A::Close, &[S::Closed]),
    ]
};

/// Target states of `(state, action)`, or `None` if the pair is illegal.
pub fn transition_targets(state: StateKind, action: ActionKind) -> Option<&'static [StateKind]> {
    TRANSITIONS
        .iter()
        .find(|(s, a, _)| *s == state && *a == action)
        .map(|(_, _, t)| *t)
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("{action:?} is not allowed in state {state}")]
    IllegalTransition {
        state: StateKind,
        action: ActionKind,
    },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Delivery(#[from] DdsError),
    #[error(transparent)]
    Retrieval(#[from] PirsError),
}

/// Things the session tells the user besides state changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "notice", rename_all = "snake_case")]
pub enum Notice {
    LoginFailed { attempts_left: u32 },
    MalformedPin,
    LoggedIn { user_id: String },
    EmptyQuery,
    QueryRejected { reason: String },
    NoResults,
    SurelyRelevant { count: usize },
    NothingRecognized { position: usize },
    ListExhausted,
    NothingToRepeat,
    NothingToMark,
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryView {
    pub doc_id: String,
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptWordView {
    pub surface: String,
    pub confidence: f64,
}

/// What one accepted action produced.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Outcome {
    pub notices: Vec<Notice>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<SummaryView>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub transcript: Vec<TranscriptWordView>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub suggestions: Vec<MisrecognitionSuggestion>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub surely_relevant: Option<usize>,
    /// Full text read out by a voice delivery.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub voice_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub receipt: Option<Receipt>,
}

impl Outcome {
    /// SHA-256 of the outcome without its receipt (receipt ids are random).
    pub fn digest(&self) -> String {
        let mut stable = self.clone();
        stable.receipt = None;
        let json = serde_json::to_vec(&stable).expect("outcome serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub timestamp_ms: u128,
    /// State after the action.
    pub state: StateKind,
    pub action: LoggedAction,
    pub digest: String,
}

pub fn events_to_jsonl(events: &[Event]) -> String {
    events
        .iter()
        .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
        .collect()
}

pub fn events_from_jsonl(text: &str) -> Result<Vec<Event>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("event {seq}: {source}")]
    Rejected {
        seq: u64,
        #[source]
        source: SessionError,
    },
    #[error("event {seq}: replay diverged from the log")]
    Diverged { seq: u64 },
}

/// Context of a spoken query kept while words are being confirmed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SpokenDraft {
    request: QueryRequest,
    reference: Vec<String>,
    merged_surfaces: Vec<String>,
    terms: Vec<PositionedTerm>,
}

/// All session state except the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub state: SessionState,
    pub user_id: Option<String>,
    pub failed_logins: u32,
    pub threshold: f64,
    pub query: Option<WeightedQuery>,
    pub ranked: Option<RankedList>,
    /// Doc ids in presentation order.
    pub presentation: Vec<String>,
    pub retrieved_set: Vec<String>,
    /// Every doc id that has appeared in a ranked list of this session.
    pub ranked_history: BTreeSet<String>,
    pub suggestions: Vec<MisrecognitionSuggestion>,
    draft: Option<SpokenDraft>,
    reutterances: u64,
}

#[derive(Debug, Clone)]
pub struct Session {
    snap: SessionSnapshot,
    events: Vec<Event>,
}

impl Default for Session {
    fn default() -> Self {
        Self::new()
    }
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

impl Session {
    pub fn new() -> Self {
        Self {
            snap: SessionSnapshot {
                state: SessionState::AwaitingLogin,
                user_id: None,
                failed_logins: 0,
                threshold: 0.0,
                query: None,
                ranked: None,
                presentation: Vec::new(),
                retrieved_set: Vec::new(),
                ranked_history: BTreeSet::new(),
                suggestions: Vec::new(),
                draft: None,
                reutterances: 0,
            },
            events: Vec::new(),
        }
    }

    pub fn state(&self) -> &SessionState {
        &self.snap.state
    }

    pub fn snapshot(&self) -> &SessionSnapshot {
        &self.snap
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn user_id(&self) -> Option<&str> {
        self.snap.user_id.as_deref()
    }

    pub fn retrieved_set(&self) -> &[String] {
        &self.snap.retrieved_set
    }

    pub fn query(&self) -> Option<&WeightedQuery> {
        self.snap.query.as_ref()
    }

    pub fn ranked(&self) -> Option<&RankedList> {
        self.snap.ranked.as_ref()
    }

    pub fn suggestions(&self) -> &[MisrecognitionSuggestion] {
        &self.snap.suggestions
    }

    /// Doc id under the browsing cursor.
    pub fn current_doc(&self) -> Option<&str> {
        match self.snap.state {
            SessionState::Browsing { cursor: Some(c) } => {
                self.snap.presentation.get(c).map(String::as_str)
            }
            _ => None,
        }
    }

    /// Applies `action`. Rejected actions leave the session untouched and
    /// are not logged.
    pub fn apply(&mut self, engine: &Engine, action: Action) -> Result<Outcome, SessionError> {
        let logged = match action {
            Action::Login { pin } => {
                self.check(ActionKind::Login)?;
                LoggedAction::Login(match engine.profiles.authenticate(&pin) {
                    Err(_) => LoginResult::Malformed,
                    Ok(Some(p)) => LoginResult::Accepted {
                        user_id: p.user_id.clone(),
                    },
                    Ok(None) => LoginResult::Rejected,
                })
            }
            Action::SubmitQuery(r) => LoggedAction::SubmitQuery(r),
            Action::Confirm { position, choice } => LoggedAction::Confirm { position, choice },
            Action::Browse { browse } => LoggedAction::Browse { browse },
            Action::Feedback => LoggedAction::Feedback,
            Action::ApproveSuggestion { index } => LoggedAction::ApproveSuggestion { index },
            Action::Deliver(r) => LoggedAction::Deliver(r),
            Action::Close => LoggedAction::Close,
        };
        self.apply_logged(engine, logged)
    }

    /// Applies an already resolved action and logs it.
    pub fn apply_logged(
        &mut self,
        engine: &Engine,
        action: LoggedAction,
    ) -> Result<Outcome, SessionError> {
        self.check(action.kind())?;
        let mut next = self.snap.clone();
        let outcome = next.step(engine, &action)?;
        self.snap = next;
        self.events.push(Event {
            seq: self.events.len() as u64,
            timestamp_ms: now_ms(),
            state: self.snap.state.kind(),
            action,
            digest: outcome.digest(),
        });
        Ok(outcome)
    }

    fn check(&self, action: ActionKind) -> Result<(), SessionError> {
        let state = self.snap.state.kind();
        transition_targets(state, action)
            .map(|_| ())
            .ok_or(SessionError::IllegalTransition { state, action })
    }

    /// Rebuilds a session from its log, checking every step against the
    /// recorded state and digest.
    pub fn replay(engine: &Engine, events: &[Event]) -> Result<Session, ReplayError> {
        let mut s = Session::new();
        for e in events {
            let out = s
                .apply_logged(engine, e.action.clone())
                .map_err(|source| ReplayError::Rejected { seq: e.seq, source })?;
            if s.snap.state.kind() != e.state || out.digest() != e.digest {
                return Err(ReplayError::Diverged { seq: e.seq });
            }
        }
        Ok(s)
    }
}

impl SessionSnapshot {
    fn step(&mut self, engine: &Engine, action: &LoggedAction) -> Result<Outcome, SessionError> {
        match action {
            LoggedAction::Login(r) => Ok(self.login(engine, r)),
            LoggedAction::SubmitQuery(r) => self.submit_query(engine, r),
            LoggedAction::Confirm { position, choice } => self.confirm(engine, *position, choice),
            LoggedAction::Browse { browse } => self.browse(engine, *browse),
            LoggedAction::Feedback => self.feedback(engine),
            LoggedAction::ApproveSuggestion { index } => self.approve(engine, *index),
            LoggedAction::Deliver(r) => self.deliver(engine, r),
            LoggedAction::Close => {
                self.state = SessionState::Closed;
                self.draft = None;
                Ok(Outcome::default())
            }
        }
    }

    fn login(&mut self, engine: &Engine, result: &LoginResult) -> Outcome {
        let mut out = Outcome::default();
        match result {
            LoginResult::Malformed => out.notices.push(Notice::MalformedPin),
            LoginResult::Rejected => {
                self.failed_logins += 1;
                let left = engine
                    .config
                    .max_login_attempts
                    .saturating_sub(self.failed_logins);
                out.notices.push(Notice::LoginFailed {
                    attempts_left: left,
                });
                if left == 0 {
                    self.state = SessionState::Closed;
                }
            }
            LoginResult::Accepted { user_id } => {
                self.threshold = engine
                    .profiles
                    .get(user_id)
                    .and_then(|p| p.preferred_threshold)
                    .unwrap_or(engine.params.default_threshold);
                self.user_id = Some(user_id.clone());
                self.state = SessionState::AwaitingQuery;
                out.notices.push(Notice::LoggedIn {
                    user_id: user_id.clone(),
                });
            }
        }
        out
    }

    fn submit_query(
        &mut self,
        engine: &Engine,
        req: &QueryRequest,
    ) -> Result<Outcome, SessionError> {
        let mut out = Outcome::default();
        self.draft = None;
        self.suggestions.clear();
        let analyzer = engine.collection.analyzer();
        match req.mode {
            QueryMode::Typed => {
                let q = WeightedQuery::typed(&req.utterance, analyzer);
                self.run_query(engine, q, &mut out);
            }
            QueryMode::SpokenSimulated => {
                let t = match vdm_sim::transcribe_query(
                    &req.utterance,
                    req.n_recognizers,
                    &req.model,
                    engine.vocabulary(),
                    req.seed,
                ) {
                    Ok(t) => t,
                    Err(SimError::EmptyUtterance) => {
                        self.state = SessionState::AwaitingQuery;
                        out.notices.push(Notice::EmptyQuery);
                        return Ok(out);
                    }
                    Err(e) => {
                        self.state = SessionState::AwaitingQuery;
                        out.notices.push(Notice::QueryRejected {
                            reason: e.to_string(),
                        });
                        return Ok(out);
                    }
                };
                out.transcript = t
                    .merged
                    .words
                    .iter()
                    .map(|w| TranscriptWordView {
                        surface: w.surface.clone(),
                        confidence: w.combined_confidence,
                    })
                    .collect();
                let terms = vdm_sim::spoken_terms(&t.merged, analyzer);
                let pending: Vec<WordConfirmation> = terms
                    .iter()
                    .filter(|p| p.term.confidence < engine.config.theta_confirm)
                    .map(|p| confirmation(engine, p))
                    .collect();
                let draft = SpokenDraft {
                    request: req.clone(),
                    reference: t.reference,
                    merged_surfaces: t.merged.words.iter().map(|w| w.surface.clone()).collect(),
                    terms,
                };
                if pending.is_empty() {
                    let q = draft_query(&draft);
                    self.run_query(engine, q, &mut out);
                } else {
                    self.draft = Some(draft);
                    self.state = SessionState::ConfirmingWords { pending };
                }
            }
        }
        Ok(out)
    }

    fn run_query(&mut self, engine: &Engine, query: WeightedQuery, out: &mut Outcome) {
        if query.is_empty() {
            self.state = SessionState::AwaitingQuery;
            out.notices.push(Notice::EmptyQuery);
            return;
        }
        let ranked = pirs::rank(
            &query,
            engine.collection.index(),
            &engine.params,
            self.threshold,
        );
        self.query = Some(query);
        self.install_ranking(ranked, false, out);
    }

    fn install_ranking(&mut self, ranked: RankedList, exclude_marked: bool, out: &mut Outcome) {
        self.ranked_history
            .extend(ranked.doc_ids().map(str::to_string));
        self.presentation = ranked
            .doc_ids()
            .filter(|d| !exclude_marked || !self.retrieved_set.iter().any(|m| m == d))
            .map(str::to_string)
            .collect();
        let count = ranked.surely_relevant_count();
        let empty = ranked.is_empty();
        self.ranked = Some(ranked);
        out.surely_relevant = Some(count);
        if empty {
            self.state = SessionState::AwaitingQuery;
            out.notices.push(Notice::NoResults);
        } else {
            self.state = SessionState::Browsing { cursor: None };
            out.notices.push(Notice::SurelyRelevant { count });
        }
    }

    fn confirm(
        &mut self,
        engine: &Engine,
        position: usize,
        choice: &ConfirmChoice,
    ) -> Result<Outcome, SessionError> {
        let SessionState::ConfirmingWords { pending } = &self.state else {
            unreachable!("checked by the transition table")
        };
        let mut pending = pending.clone();
        let Some(slot) = pending.iter().position(|p| p.position == position) else {
            return Err(SessionError::Precondition(format!(
                "word {position} is not awaiting confirmation"
            )));
        };
        let mut draft = self.draft.take().expect("confirming without a draft");
        let at = draft
            .terms
            .iter()
            .position(|t| t.position == position)
            .expect("pending word has a term");
        let mut out = Outcome::default();
        match choice {
            ConfirmChoice::Keep => {
                draft.terms[at].term.confidence = 1.0;
                pending.remove(slot);
            }
            ConfirmChoice::Alternative(i) => {
                let Some(alt) = pending[slot].alternatives.get(*i).cloned() else {
                    self.draft = Some(draft);
                    return Err(SessionError::Precondition(format!(
                        "word {position} has no alternative {i}"
                    )));
                };
                draft.terms[at].term = QueryTerm::new(alt.clone(), alt);
                pending.remove(slot);
            }
            ConfirmChoice::Drop => {
                draft.terms.remove(at);
                pending.remove(slot);
            }
            ConfirmChoice::ReUtter => {
                let stream = REUTTER_STREAM + self.reutterances;
                self.reutterances += 1;
                match spoken_word_at(&draft, position) {
                    None => {
                        draft.terms.remove(at);
                        pending.remove(slot);
                    }
                    Some(word) => {
                        let seed = derive_seed(draft.request.seed, stream);
                        let heard = vdm_sim::transcribe_words(
                            vec![word],
                            draft.request.n_recognizers,
                            &draft.request.model,
                            engine.vocabulary(),
                            seed,
                        )
                        .ok()
                        .and_then(|t| {
                            vdm_sim::spoken_terms(&t.merged, engine.collection.analyzer())
                                .into_iter()
                                .next()
                        });
                        match heard {
                            None => out.notices.push(Notice::NothingRecognized { position }),
                            Some(h) => {
                                draft.terms[at].term = h.term;
                                let fresh = &draft.terms[at];
                                if fresh.term.confidence < engine.config.theta_confirm {
                                    pending[slot] = confirmation(engine, fresh);
                                } else {
                                    pending.remove(slot);
                                }
                            }
                        }
                    }
                }
            }
        }
        if pending.is_empty() {
            let q = draft_query(&draft);
            self.run_query(engine, q, &mut out);
        } else {
            self.draft = Some(draft);
            self.state = SessionState::ConfirmingWords { pending };
        }
        Ok(out)
    }

    fn summary_of(&self, engine: &Engine, doc_id: &str) -> SummaryView {
        let doc = engine
            .collection
            .document(doc_id)
            .expect("ranked documents exist in the collection");
        let query = self.query.as_ref().expect("browsing without a query");
        let text = dss::summarize(
            doc,
            engine.collection.analyzer(),
            query,
            &engine.config.summary_weights,
        )
        .map(|s| s.text)
        .unwrap_or_default();
        SummaryView {
            doc_id: doc.doc_id.clone(),
            title: doc.title.clone(),
            text,
        }
    }

    fn browse(&mut self, engine: &Engine, action: BrowseAction) -> Result<Outcome, SessionError> {
        let SessionState::Browsing { cursor } = self.state else {
            unreachable!("checked by the transition table")
        };
        let mut out = Outcome::default();
        match action {
            BrowseAction::Stop => out.notices.push(Notice::Stopped),
            BrowseAction::Repeat => match cursor {
                Some(c) => out.summary = Some(self.summary_of(engine, &self.presentation[c])),
                None => out.notices.push(Notice::NothingToRepeat),
            },
            BrowseAction::MarkRelevant if cursor.is_none() => {
                out.notices.push(Notice::NothingToMark)
            }
            BrowseAction::Next | BrowseAction::MarkRelevant => {
                if let (BrowseAction::MarkRelevant, Some(c)) = (action, cursor) {
                    let doc = self.presentation[c].clone();
                    if !self.retrieved_set.contains(&doc) {
                        self.retrieved_set.push(doc);
                    }
                }
                let next = cursor.map_or(0, |c| c + 1);
                if next >= self.presentation.len() {
                    self.state = SessionState::AwaitingQuery;
                    out.notices.push(Notice::ListExhausted);
                } else {
                    self.state = SessionState::Browsing { cursor: Some(next) };
                    out.summary = Some(self.summary_of(engine, &self.presentation[next]));
                }
            }
        }
        Ok(out)
    }

    fn feedback(&mut self, engine: &Engine) -> Result<Outcome, SessionError> {
        if self.retrieved_set.is_empty() {
            return Err(SessionError::Precondition(
                "no document has been marked relevant".into(),
            ));
        }
        let query = self
            .query
            .as_ref()
            .ok_or_else(|| SessionError::Precondition("no query has been run".into()))?;
        let index = engine.collection.index();
        let suggestions = detect_misrecognitions(
            query,
            &self.retrieved_set,
            index,
            engine.params.sim_threshold,
        )?;
        let refined = relevance_feedback(query, &self.retrieved_set, index, &engine.params)?;
        let ranked = pirs::rank(&refined, index, &engine.params, self.threshold);
        self.query = Some(refined);
        self.suggestions = suggestions.clone();
        let mut out = Outcome {
            suggestions,
            ..Outcome::default()
        };
        self.install_ranking(ranked, true, &mut out);
        if self.state.kind() == StateKind::AwaitingQuery {
            // Feedback always returns to browsing, even over an empty list.
            self.state = SessionState::Browsing { cursor: None };
        }
        Ok(out)
    }

    fn approve(&mut self, engine: &Engine, index: usize) -> Result<Outcome, SessionError> {
        let Some(s) = self.suggestions.get(index).cloned() else {
            return Err(SessionError::Precondition(format!("no suggestion {index}")));
        };
        let query = self.query.as_mut().expect("suggestions come with a query");
        let replacement = QueryTerm::new(s.candidate.clone(), s.candidate.clone());
        let mut replaced = false;
        let mut terms = Vec::with_capacity(query.terms.len());
        for t in query.terms.drain(..) {
            if t.term == s.original.term {
                if !replaced {
                    terms.push(replacement.clone());
                    replaced = true;
                }
            } else if t.term != s.candidate {
                terms.push(t);
            }
        }
        if !replaced {
            terms.push(replacement);
        }
        query.terms = terms;
        query.origin = QueryOrigin::FeedbackRefined;
        self.suggestions
            .retain(|x| x.original.term != s.original.term);
        let ranked = pirs::rank(
            query,
            engine.collection.index(),
            &engine.params,
            self.threshold,
        );
        let mut out = Outcome::default();
        self.install_ranking(ranked, true, &mut out);
        if self.state.kind() == StateKind::AwaitingQuery {
            self.state = SessionState::Browsing { cursor: None };
        }
        Ok(out)
    }

    fn deliver(&mut self, engine: &Engine, req: &DeliveryRequest) -> Result<Outcome, SessionError> {
        let user_id = self.user_id.as_deref().expect("delivery after login");
        let profile = engine
            .profiles
            .get(user_id)
            .ok_or_else(|| DdsError::UnknownUser(user_id.to_string()))?;
        if req.doc_ids.is_empty() {
            return Err(SessionError::Precondition("no documents to deliver".into()));
        }
        let docs =
            req.doc_ids
                .iter()
                .map(|id| {
                    engine.collection.document(id).ok_or_else(|| {
                        SessionError::Retrieval(PirsError::UnknownDocument(id.clone()))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
        let format = if req.channel == Channel::Voice {
            Format::Ascii
        } else {
            req.format
        };
        let mut bytes = Vec::new();
        for (i, d) in docs.iter().enumerate() {
            if i > 0 {
                bytes.push(b'\n');
            }
            bytes.extend(engine.renderers.render(d, format)?);
        }
        let receipt = engine.outbox.deliver(req, &bytes, profile)?;
        let mut out = Outcome::default();
        if req.channel == Channel::Voice {
            out.voice_text = Some(
                docs.iter()
                    .map(|d| dds::render_ascii(d))
                    .collect::<Vec<_>>()
                    .join("\n"),
            );
        }
        out.receipt = Some(receipt);
        Ok(out)
    }
}

fn confirmation(engine: &Engine, p: &PositionedTerm) -> WordConfirmation {
    WordConfirmation {
        position: p.position,
        surface: p.term.surface.clone(),
        confidence: p.term.confidence,
        alternatives: engine.alternatives(&p.term.term),
    }
}

fn draft_query(draft: &SpokenDraft) -> WeightedQuery {
    WeightedQuery::new(
        draft.terms.iter().map(|t| t.term.clone()).collect(),
        QueryOrigin::SpokenSimulated,
    )
}

/// The uttered word behind merged-transcript `position`, found by aligning
/// the merged words to the utterance. `None` for an inserted word.
fn spoken_word_at(draft: &SpokenDraft, position: usize) -> Option<String> {
    align_words(&draft.reference, &draft.merged_surfaces)
        .into_iter()
        .find_map(|op| match op {
            AlignOp::Match {
                reference,
                hypothesis,
            }
            | AlignOp::Substitute {
                reference,
                hypothesis,
            } if hypothesis == position => Some(Some(draft.reference[reference].clone())),
            AlignOp::Insert { hypothesis } if hypothesis == position => Some(None),
            _ => None,
        })
        .flatten()
}
