#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::path::{Path, PathBuf};

use ivirs_core::corpus::{load_corpus, Analyzer, Collection, CorpusFormat, Document};
use ivirs_core::dds::{Channel, DeliveryRequest, Format, Outbox, ProfileStore, UserProfile};
use ivirs_core::experiments::Workbench;
use ivirs_core::pirs::{ConfidenceMode, RankingParams, WeightedQuery};
use ivirs_core::session::{
    transition_targets, Action, ActionKind, BrowseAction, ConfirmChoice, Engine, QueryRequest,
    Session, SessionError, SessionState, StateKind,
};
use ivirs_core::vdm_sim::{ConfidenceRange, ErrorModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PIN: &str = "2468";

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn fixture_collection() -> Collection {
    let an = Analyzer::default();
    let docs = load_corpus(
        &fixtures().join("fixture.trec"),
        CorpusFormat::TrecSgml,
        &an,
    )
    .unwrap();
    Collection::build(docs, an).unwrap()
}

pub fn desk() -> Workbench {
    Workbench::load_dir(&fixtures().join("desk")).unwrap()
}

pub fn profiles() -> ProfileStore {
    let mut store = ProfileStore::default();
    store.insert(
        UserProfile::with_salt("alice", PIN, "fixture-salt")
            .unwrap()
            .with_address(Channel::Email, "alice@example.org"),
    );
    store
}

pub fn fixture_engine(outbox: &Path) -> Engine {
    Engine::new(fixture_collection(), profiles(), Outbox::new(outbox))
}

/// Scores every document straight from its text: no index involved.
pub fn oracle_rank(
    docs: &[Document],
    analyzer: &Analyzer,
    query: &WeightedQuery,
    params: &RankingParams,
) -> Vec<(String, f64)> {
    let tokens: Vec<Vec<String>> = docs
        .iter()
        .map(|d| d.sentences.iter().flat_map(|s| analyzer.terms(s)).collect())
        .collect();
    let n = docs.len();
    let avg = if n == 0 {
        0.0
    } else {
        tokens.iter().map(|t| t.len() as f64).sum::<f64>() / n as f64
    };
    let mut out = Vec::new();
    for (i, d) in docs.iter().enumerate() {
        let len = tokens[i].len() as f64;
        let mut score = 0.0;
        let mut matched = false;
        for qt in &query.terms {
            let tf = tokens[i].iter().filter(|t| **t == qt.term).count();
            if tf == 0 {
                continue;
            }
            matched = true;
            let df = tokens.iter().filter(|t| t.contains(&qt.term)).count();
            let idf = (((n - df) as f64 + 0.5) / (df as f64 + 0.5) + 1.0).ln();
            let ratio = if avg > 0.0 { len / avg } else { 0.0 };
            let tf = tf as f64;
            let sat =
                tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * ratio));
            let conf = match params.confidence_mode {
                ConfidenceMode::Multiplicative => qt.confidence,
                ConfidenceMode::Ignore => 1.0,
            };
            score += conf * qt.weight * idf * sat;
        }
        if matched && score > 0.0 {
            out.push((d.doc_id.clone(), score));
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

const WORDS: &[&str] = &[
    "apple", "pear", "plum", "grape", "melon", "lemon", "lime", "peach", "kiwi", "fig", "date",
    "berry",
];
const STOP: &[&str] = &["the", "of", "and", "a"];

/// A random corpus of at most `max_docs` documents over a small vocabulary
/// (so terms collide), plus a random weighted query of up to `max_terms` terms.
pub fn random_case(
    rng: &mut ChaCha8Rng,
    max_docs: usize,
    max_terms: usize,
) -> (Vec<Document>, WeightedQuery) {
    use ivirs_core::pirs::{QueryOrigin, QueryTerm};
    let an = Analyzer::default();
    let n = rng.random_range(1..=max_docs);
    let docs = (0..n)
        .map(|i| {
            let sentences = (0..rng.random_range(1..=4))
                .map(|_| {
                    let words: Vec<&str> = (0..rng.random_range(1..=10))
                        .map(|_| {
                            if rng.random::<f64>() < 0.2 {
                                STOP[rng.random_range(0..STOP.len())]
                            } else {
                                WORDS[rng.random_range(0..WORDS.len())]
                            }
                        })
                        .collect();
                    let mut s = words.join(" ");
                    s.push('.');
                    let mut c = s.chars();
                    let first = c.next().unwrap().to_ascii_uppercase();
                    std::iter::once(first).chain(c).collect()
                })
                .collect();
            Document::new(format!("d{:02}", (i * 7) % 53), "", sentences, &an)
        })
        .collect::<Vec<_>>();
    let mut seen = BTreeSet::new();
    let docs = docs
        .into_iter()
        .filter(|d| seen.insert(d.doc_id.clone()))
        .collect();
    let terms = (0..rng.random_range(0..=max_terms))
        .map(|_| {
            let w = if rng.random::<f64>() < 0.1 {
                "zebra"
            } else {
                WORDS[rng.random_range(0..WORDS.len())]
            };
            QueryTerm::new(w, w)
                .with_confidence(rng.random_range(0.0..=1.0))
                .with_weight(if rng.random::<bool>() { 1.0 } else { 0.5 })
        })
        .collect();
    (
        docs,
        WeightedQuery::new(terms, QueryOrigin::SpokenSimulated),
    )
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Transitions observed while exploring, as (from, action, to).
pub type Observed = BTreeSet<(StateKind, ActionKind, StateKind)>;

pub fn alphabet() -> Vec<Action> {
    let mut unsure = ErrorModel::default().with_accuracy(1.0);
    unsure.conf_correct = ConfidenceRange::new(0.3, 0.3);
    let mut sure = ErrorModel::default().with_accuracy(1.0);
    sure.conf_correct = ConfidenceRange::new(1.0, 1.0);
    let deliver = |channel| {
        Action::Deliver(DeliveryRequest {
            doc_ids: vec!["D1".into()],
            channel,
            format: Format::Ascii,
        })
    };
    vec![
        Action::Login { pin: PIN.into() },
        Action::Login { pin: "1111".into() },
        Action::Login { pin: "12a4".into() },
        Action::SubmitQuery(QueryRequest::typed("sheep farming")),
        Action::SubmitQuery(QueryRequest::typed("stok market")),
        Action::SubmitQuery(QueryRequest::typed("the")),
        Action::SubmitQuery(QueryRequest::typed("zebra")),
        Action::SubmitQuery(QueryRequest::spoken("sheep farming", 1, unsure, 3)),
        Action::SubmitQuery(QueryRequest::spoken("stock market", 2, sure, 4)),
        Action::Confirm {
            position: 0,
            choice: ConfirmChoice::Keep,
        },
        Action::Confirm {
            position: 1,
            choice: ConfirmChoice::Drop,
        },
        Action::Confirm {
            position: 0,
            choice: ConfirmChoice::Drop,
        },
        Action::Confirm {
            position: 1,
            choice: ConfirmChoice::Alternative(0),
        },
        Action::Confirm {
            position: 0,
            choice: ConfirmChoice::ReUtter,
        },
        Action::Confirm {
            position: 7,
            choice: ConfirmChoice::Keep,
        },
        Action::Browse {
            browse: BrowseAction::Next,
        },
        Action::Browse {
            browse: BrowseAction::Repeat,
        },
        Action::Browse {
            browse: BrowseAction::MarkRelevant,
        },
        Action::Browse {
            browse: BrowseAction::Stop,
        },
        Action::Feedback,
        Action::ApproveSuggestion { index: 0 },
        deliver(Channel::Email),
        deliver(Channel::Fax),
        Action::Close,
    ]
}

pub fn key(s: &Session) -> String {
    serde_json::to_string(s.snapshot()).unwrap()
}

pub fn check_invariants(s: &Session) {
    let snap = s.snapshot();
    for d in &snap.retrieved_set {
        assert!(
            snap.ranked_history.contains(d),
            "{d} marked but never ranked"
        );
    }
    let unique: BTreeSet<_> = snap.retrieved_set.iter().collect();
    assert_eq!(unique.len(), snap.retrieved_set.len());
    if let SessionState::Browsing { cursor: Some(c) } = snap.state {
        assert!(c < snap.presentation.len());
    }
    if let SessionState::ConfirmingWords { pending } = &snap.state {
        assert!(!pending.is_empty());
        for p in pending {
            assert!(p.alternatives.len() <= 3);
        }
    }
    assert_eq!(
        s.events().len() as u64,
        s.events().last().map_or(0, |e| e.seq + 1)
    );
}

/// Breadth-first exploration of every session reachable from a fixed action
/// alphabet, checking each step against the transition table and replaying
/// every visited session from its log. Returns the observed transitions and
/// the number of sessions visited.
pub fn explore(engine: &Engine, depth: usize) -> (Observed, usize) {
    let actions = alphabet();
    let mut seen = HashSet::new();
    let mut queue = VecDeque::new();
    let start = Session::new();
    seen.insert(key(&start));
    queue.push_back((start, 0));
    let mut observed = BTreeSet::new();
    let mut visited = 0;
    while let Some((s, d)) = queue.pop_front() {
        visited += 1;
        check_invariants(&s);
        let replayed = Session::replay(engine, s.events()).unwrap();
        assert_eq!(key(&replayed), key(&s));
        if d == depth {
            continue;
        }
        for a in &actions {
            let from = s.state().kind();
            let kind = a.kind();
            let mut next = s.clone();
            match next.apply(engine, a.clone()) {
                Ok(_) => {
                    let to = next.state().kind();
                    let targets = transition_targets(from, kind).unwrap_or_else(|| {
                        panic!("{kind:?} accepted in {from} but not in the table")
                    });
                    assert!(
                        targets.contains(&to),
                        "{from} --{kind:?}--> {to} not in the table"
                    );
                    assert_eq!(next.events().len(), s.events().len() + 1);
                    assert_eq!(next.events().last().unwrap().state, to);
                    let before: BTreeSet<_> = s.retrieved_set().iter().collect();
                    assert!(before.iter().all(|d| next.retrieved_set().contains(d)));
                    observed.insert((from, kind, to));
                    if seen.insert(key(&next)) {
                        queue.push_back((next, d + 1));
                    }
                }
                Err(SessionError::IllegalTransition { state, action }) => {
                    assert_eq!((state, action), (from, kind));
                    assert!(
                        transition_targets(from, kind).is_none(),
                        "{kind:?} rejected in {from}"
                    );
                    assert_eq!(key(&next), key(&s));
                    assert_eq!(next.events().len(), s.events().len());
                }
                Err(_) => {
                    assert!(transition_targets(from, kind).is_some());
                    assert_eq!(key(&next), key(&s));
                    assert_eq!(next.events().len(), s.events().len());
                }
            }
        }
    }
    (observed, visited)
}
