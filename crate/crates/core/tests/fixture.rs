mod common;

use std::fs;

use common::{fixture_collection, fixture_engine, fixtures, oracle_rank, PIN};
use ivirs_core::corpus::{load_corpus, Analyzer, CorpusError, CorpusFormat};
use ivirs_core::dds::{self, Channel, DeliveryRequest, Format};
use ivirs_core::pirs::{detect_misrecognitions, rank, RankingParams, WeightedQuery};
use ivirs_core::session::{
    events_from_jsonl, events_to_jsonl, Action, BrowseAction, ConfirmChoice, Engine, Notice,
    QueryRequest, Session, SessionState, StateKind,
};
use ivirs_core::synth::{generate, qrels_to_tsv, queries_to_tsv, to_trec, DeskConfig};
use ivirs_core::vdm_sim::{spoken_query, transcribe_query, ErrorModel};

/// Seed under which one default recognizer hears "sheep farming" as "ship farming".
const SHIP_SEED: u64 = 133;

fn engine(dir: &std::path::Path) -> Engine {
    fixture_engine(dir).with_recognizer_words(["ship", "shop"])
}

fn act(s: &mut Session, e: &Engine, a: Action) -> ivirs_core::session::Outcome {
    s.apply(e, a).unwrap()
}

fn browse(b: BrowseAction) -> Action {
    Action::Browse { browse: b }
}

#[test]
fn fixture_index_statistics() {
    let c = fixture_collection();
    let ix = c.index();
    assert_eq!(ix.doc_count(), 3);
    assert_eq!(ix.df("market"), 2);
    assert_eq!(ix.tf("market", ix.doc_ord("D1").unwrap()), 3);
    assert!(!ix.contains_term("ship"));
    assert_eq!(c.document("D1").unwrap().sentences.len(), 3);
    assert_eq!(c.document("D3").unwrap().sentences.len(), 4);
}

#[test]
fn sheep_farming_puts_d2_first() {
    let c = fixture_collection();
    let q = WeightedQuery::typed("sheep farming", c.analyzer());
    let p = RankingParams::default();
    let got = rank(&q, c.index(), &p, 0.0);
    let want = oracle_rank(c.documents(), c.analyzer(), &q, &p);
    assert_eq!(got.entries[0].doc_id, "D2");
    assert_eq!(
        got.entries
            .iter()
            .map(|e| (e.doc_id.clone(), e.score))
            .collect::<Vec<_>>(),
        want
    );
}

#[test]
fn d1_ascii_matches_golden_file() {
    let c = fixture_collection();
    let golden = fs::read(fixtures().join("D1.ascii")).unwrap();
    assert_eq!(
        dds::render_ascii(c.document("D1").unwrap()).as_bytes(),
        golden.as_slice()
    );
}

#[test]
fn corrupted_corpus_reports_offset() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.trec");
    fs::write(&p, "<DOC>\n<DOCNO> X1 </DOCNO>\n<TEXT>\nunterminated\n").unwrap();
    let err = load_corpus(&p, CorpusFormat::TrecSgml, &Analyzer::default()).unwrap_err();
    assert!(matches!(err, CorpusError::Malformed { .. }), "{err}");
    assert!(err.to_string().contains("offset"), "{err}");
}

#[test]
fn shipped_desk_files_match_the_generator() {
    let d = generate(&DeskConfig::default(), &Analyzer::default());
    let dir = fixtures().join("desk");
    assert_eq!(
        fs::read_to_string(dir.join("corpus.trec")).unwrap(),
        to_trec(&d.documents)
    );
    assert_eq!(
        fs::read_to_string(dir.join("queries.tsv")).unwrap(),
        queries_to_tsv(&d.queries)
    );
    assert_eq!(
        fs::read_to_string(dir.join("qrels.tsv")).unwrap(),
        qrels_to_tsv(&d.qrels)
    );
}

#[test]
fn ship_is_confirmed_and_corrected_to_sheep() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    let mut s = Session::new();
    act(&mut s, &e, Action::Login { pin: PIN.into() });
    let out = act(
        &mut s,
        &e,
        Action::SubmitQuery(QueryRequest::spoken(
            "sheep farming",
            1,
            ErrorModel::default(),
            SHIP_SEED,
        )),
    );
    assert_eq!(out.transcript[0].surface, "ship");
    let SessionState::ConfirmingWords { pending } = s.state().clone() else {
        panic!("expected confirmation, got {:?}", s.state())
    };
    assert_eq!(pending.len(), 1);
    assert_eq!(pending[0].surface, "ship");
    assert_eq!(pending[0].alternatives[0], "sheep");
    assert!(pending[0].alternatives.len() <= 3);
    act(
        &mut s,
        &e,
        Action::Confirm {
            position: pending[0].position,
            choice: ConfirmChoice::Alternative(0),
        },
    );
    assert_eq!(s.state().kind(), StateKind::Browsing);
    assert_eq!(s.ranked().unwrap().entries[0].doc_id, "D2");
    assert!(s
        .query()
        .unwrap()
        .terms
        .iter()
        .all(|t| t.confidence == 1.0 || t.term == "farming"));
}

#[test]
fn feedback_suggests_sheep_for_ship() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    let mut s = Session::new();
    act(&mut s, &e, Action::Login { pin: PIN.into() });
    act(
        &mut s,
        &e,
        Action::SubmitQuery(QueryRequest::spoken(
            "sheep farming",
            1,
            ErrorModel::default(),
            SHIP_SEED,
        )),
    );
    act(
        &mut s,
        &e,
        Action::Confirm {
            position: 0,
            choice: ConfirmChoice::Keep,
        },
    );
    assert_eq!(s.query().unwrap().terms[0].confidence, 1.0);
    act(&mut s, &e, browse(BrowseAction::Next));
    assert_eq!(s.current_doc(), Some("D2"));
    act(&mut s, &e, browse(BrowseAction::MarkRelevant));
    let out = act(&mut s, &e, Action::Feedback);
    assert_eq!(out.suggestions[0].original.term, "ship");
    assert_eq!(out.suggestions[0].candidate, "sheep");
    // marked documents are not presented again
    assert!(!s.snapshot().presentation.contains(&"D2".to_string()));
    act(&mut s, &e, Action::ApproveSuggestion { index: 0 });
    let q = s.query().unwrap();
    assert!(q.contains_term("sheep") && !q.contains_term("ship"));
    assert_eq!(
        q.terms
            .iter()
            .find(|t| t.term == "sheep")
            .unwrap()
            .confidence,
        1.0
    );
    assert_eq!(s.ranked().unwrap().entries[0].doc_id, "D2");
}

#[test]
fn rescue_query_marks_d2_and_detection_repairs_spoken_query() {
    let c = fixture_collection();
    let an = c.analyzer();
    let vocab = ivirs_core::vdm_sim::ConfusionVocabulary::new(
        c.index()
            .vocabulary()
            .iter()
            .cloned()
            .chain(["ship".to_string(), "shop".to_string()]),
    );
    let t = transcribe_query(
        "sheep farming",
        1,
        &ErrorModel::default(),
        &vocab,
        SHIP_SEED,
    )
    .unwrap();
    let mut spoken = spoken_query(&t.merged, an);
    spoken.terms.retain(|q| q.term == "ship");
    assert!(rank(&spoken, c.index(), &RankingParams::default(), 0.0).is_empty());
    let rescue = rank(
        &WeightedQuery::typed("sheep farming", an),
        c.index(),
        &RankingParams::default(),
        0.0,
    );
    let marked = vec![rescue.entries[0].doc_id.clone()];
    assert_eq!(marked, ["D2"]);
    let s = detect_misrecognitions(&spoken, &marked, c.index(), 0.75).unwrap();
    assert_eq!(
        (s[0].original.term.as_str(), s[0].candidate.as_str()),
        ("ship", "sheep")
    );
}

#[test]
fn accurate_spoken_query_skips_confirmation() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    let mut model = ErrorModel::default().with_accuracy(1.0);
    model.conf_correct = ivirs_core::vdm_sim::ConfidenceRange::new(1.0, 1.0);
    for seed in 0..20 {
        let mut s = Session::new();
        act(&mut s, &e, Action::Login { pin: PIN.into() });
        act(
            &mut s,
            &e,
            Action::SubmitQuery(QueryRequest::spoken("stock market crash", 3, model, seed)),
        );
        assert_eq!(s.state().kind(), StateKind::Browsing);
    }
}

#[test]
fn low_confidence_word_is_pending_and_keep_raises_it() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    let mut model = ErrorModel::default().with_accuracy(1.0);
    model.conf_correct = ivirs_core::vdm_sim::ConfidenceRange::new(0.3, 0.3);
    let mut s = Session::new();
    act(&mut s, &e, Action::Login { pin: PIN.into() });
    act(
        &mut s,
        &e,
        Action::SubmitQuery(QueryRequest::spoken("market", 1, model, 5)),
    );
    let SessionState::ConfirmingWords { pending } = s.state().clone() else {
        panic!()
    };
    assert_eq!(pending[0].surface, "market");
    assert!((pending[0].confidence - 0.3).abs() < 1e-12);
    act(
        &mut s,
        &e,
        Action::Confirm {
            position: 0,
            choice: ConfirmChoice::Keep,
        },
    );
    assert_eq!(s.query().unwrap().terms[0].confidence, 1.0);

    let mut model = ErrorModel::default().with_accuracy(1.0);
    model.conf_correct = ivirs_core::vdm_sim::ConfidenceRange::new(0.3, 0.3);
    let mut s = Session::new();
    act(&mut s, &e, Action::Login { pin: PIN.into() });
    act(
        &mut s,
        &e,
        Action::SubmitQuery(QueryRequest::spoken("market", 1, model, 5)),
    );
    let out = act(
        &mut s,
        &e,
        Action::Confirm {
            position: 0,
            choice: ConfirmChoice::Drop,
        },
    );
    assert_eq!(s.state().kind(), StateKind::AwaitingQuery);
    assert!(out.notices.contains(&Notice::EmptyQuery));
    assert!(s
        .apply(
            &e,
            Action::Confirm {
                position: 0,
                choice: ConfirmChoice::Keep
            }
        )
        .is_err());
}

#[test]
fn reutter_draws_a_fresh_transcription() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    let mut s = Session::new();
    act(&mut s, &e, Action::Login { pin: PIN.into() });
    act(
        &mut s,
        &e,
        Action::SubmitQuery(QueryRequest::spoken(
            "sheep farming",
            1,
            ErrorModel::default(),
            SHIP_SEED,
        )),
    );
    let mut rounds = 0;
    while s.state().kind() == StateKind::ConfirmingWords {
        act(
            &mut s,
            &e,
            Action::Confirm {
                position: 0,
                choice: ConfirmChoice::ReUtter,
            },
        );
        rounds += 1;
        assert!(rounds < 50, "re-utterance never settled");
    }
    let replayed = Session::replay(&e, s.events()).unwrap();
    assert_eq!(replayed.snapshot(), s.snapshot());
}

#[test]
fn browsing_repeat_and_exhaustion() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    let mut s = Session::new();
    act(&mut s, &e, Action::Login { pin: PIN.into() });
    act(
        &mut s,
        &e,
        Action::SubmitQuery(QueryRequest::typed("market")),
    );
    let first = act(&mut s, &e, browse(BrowseAction::Next)).summary.unwrap();
    let again = act(&mut s, &e, browse(BrowseAction::Repeat))
        .summary
        .unwrap();
    assert_eq!(first, again);
    let stop = act(&mut s, &e, browse(BrowseAction::Stop));
    assert!(stop.summary.is_none());
    assert_eq!(s.state().kind(), StateKind::Browsing);
    act(&mut s, &e, browse(BrowseAction::Next));
    let out = act(&mut s, &e, browse(BrowseAction::Next));
    assert!(out.notices.contains(&Notice::ListExhausted));
    assert_eq!(s.state().kind(), StateKind::AwaitingQuery);
    assert!(matches!(
        s.apply(&e, Action::Feedback),
        Err(ivirs_core::session::SessionError::Precondition(_))
    ));
}

#[test]
fn deliveries_by_email_and_voice() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    let mut s = Session::new();
    act(&mut s, &e, Action::Login { pin: PIN.into() });
    let golden = fs::read_to_string(fixtures().join("D1.ascii")).unwrap();
    let req = |channel| DeliveryRequest {
        doc_ids: vec!["D1".into()],
        channel,
        format: Format::Ascii,
    };
    let out = act(&mut s, &e, Action::Deliver(req(Channel::Email)));
    let receipt = out.receipt.unwrap();
    assert_eq!(receipt.byte_count, golden.len());
    let path = dir
        .path()
        .join("email")
        .join(format!("{}.email", receipt.receipt_id));
    assert_eq!(fs::read_to_string(path).unwrap(), golden);

    let out = act(&mut s, &e, Action::Deliver(req(Channel::Voice)));
    assert_eq!(out.voice_text.unwrap(), golden);

    assert!(s.apply(&e, Action::Deliver(req(Channel::Fax))).is_err());
    let pdf = DeliveryRequest {
        format: Format::Pdf,
        ..req(Channel::Email)
    };
    assert!(s.apply(&e, Action::Deliver(pdf)).is_err());
}

#[test]
fn event_log_round_trips_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    let mut s = Session::new();
    act(&mut s, &e, Action::Login { pin: "1111".into() });
    act(&mut s, &e, Action::Login { pin: PIN.into() });
    act(
        &mut s,
        &e,
        Action::SubmitQuery(QueryRequest::spoken(
            "sheep farming",
            2,
            ErrorModel::default(),
            9,
        )),
    );
    while let SessionState::ConfirmingWords { pending } = s.state().clone() {
        act(
            &mut s,
            &e,
            Action::Confirm {
                position: pending[0].position,
                choice: ConfirmChoice::Keep,
            },
        );
    }
    if s.state().kind() == StateKind::Browsing {
        act(&mut s, &e, browse(BrowseAction::Next));
        act(&mut s, &e, browse(BrowseAction::MarkRelevant));
    }
    let text = events_to_jsonl(s.events());
    assert!(!text.contains(PIN) && !text.contains("1111"));
    let events = events_from_jsonl(&text).unwrap();
    assert_eq!(events, s.events());
    let back = Session::replay(&e, &events).unwrap();
    assert_eq!(
        serde_json::to_string(back.snapshot()).unwrap(),
        serde_json::to_string(s.snapshot()).unwrap()
    );

    let mut tampered = events.clone();
    tampered[0].digest = "00".into();
    assert!(Session::replay(&e, &tampered).is_err());
}
