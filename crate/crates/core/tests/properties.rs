mod common;

use std::collections::BTreeSet;

use common::{oracle_rank, random_case, rng};
use ivirs_core::corpus::{Analyzer, Collection, Document};
use ivirs_core::dss::{summarize, summary_length, SummaryWeights};
use ivirs_core::eval::{evaluate, parse_qrels, parse_run, Qrels, Run};
use ivirs_core::pirs::{
    rank, relevance_feedback, score, soundex, sounds_alike, ConfidenceMode, RankingParams,
};
use ivirs_core::vdm_sim::{
    corrupt, merge_transcripts, word_accuracy, ConfusionVocabulary, ErrorModel, TranscribedWord,
    Transcript,
};
use proptest::prelude::*;

fn collection(docs: Vec<Document>) -> Collection {
    Collection::build(docs, Analyzer::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rank_matches_brute_force(seed in any::<u64>(), ignore in any::<bool>()) {
        let (docs, q) = random_case(&mut rng(seed), 20, 8);
        let c = collection(docs);
        let mut p = RankingParams::default();
        if ignore {
            p.confidence_mode = ConfidenceMode::Ignore;
        }
        let got: Vec<(String, f64)> = rank(&q, c.index(), &p, 0.0)
            .entries.into_iter().map(|e| (e.doc_id, e.score)).collect();
        prop_assert_eq!(got, oracle_rank(c.documents(), c.analyzer(), &q, &p));
    }

    #[test]
    fn raising_confidence_never_lowers_a_score(seed in any::<u64>(), which in any::<prop::sample::Index>()) {
        let (docs, q) = random_case(&mut rng(seed), 10, 6);
        prop_assume!(!q.terms.is_empty());
        let c = collection(docs);
        let p = RankingParams::default();
        let mut up = q.clone();
        let i = which.index(up.terms.len());
        up.terms[i].confidence = 1.0;
        for id in c.index().doc_ids() {
            prop_assert!(score(&up, id, c.index(), &p).unwrap() >= score(&q, id, c.index(), &p).unwrap());
        }
    }

    #[test]
    fn scaling_weights_scales_scores(seed in any::<u64>(), factor in 0.1f64..10.0) {
        let (docs, q) = random_case(&mut rng(seed), 10, 6);
        let c = collection(docs);
        let p = RankingParams::default();
        let mut scaled = q.clone();
        for t in &mut scaled.terms {
            t.weight *= factor;
        }
        let a = rank(&q, c.index(), &p, 0.0);
        let b = rank(&scaled, c.index(), &p, 0.0);
        prop_assert_eq!(a.len(), b.len());
        for e in &a.entries {
            let s = score(&scaled, &e.doc_id, c.index(), &p).unwrap();
            prop_assert!((s - factor * e.score).abs() <= 1e-9 * s.abs().max(1.0));
        }
    }

    #[test]
    fn feedback_only_raises_confidence(seed in any::<u64>(), marks in 1usize..4) {
        let (docs, q) = random_case(&mut rng(seed), 10, 6);
        let c = collection(docs);
        let p = RankingParams::default();
        let marked: Vec<String> = c.index().doc_ids().iter().take(marks).cloned().collect();
        let out = relevance_feedback(&q, &marked, c.index(), &p).unwrap();
        prop_assert!(out.terms.len() <= q.terms.len() + p.k_expansion);
        for (before, after) in q.terms.iter().zip(&out.terms) {
            prop_assert_eq!(&before.term, &after.term);
            prop_assert!(after.confidence >= before.confidence && after.confidence <= 1.0);
        }
        let added = &out.terms[q.terms.len()..];
        let distinct: BTreeSet<_> = added.iter().map(|t| &t.term).collect();
        prop_assert_eq!(distinct.len(), added.len());
        for t in added {
            prop_assert!(!q.contains_term(&t.term));
            prop_assert_eq!(t.weight, p.beta);
            prop_assert_eq!(t.confidence, 1.0);
        }
    }

    #[test]
    fn summaries_respect_length_bounds(seed in any::<u64>()) {
        let (docs, q) = random_case(&mut rng(seed), 5, 4);
        let an = Analyzer::default();
        for d in &docs {
            let s = summarize(d, &an, &q, &SummaryWeights::default()).unwrap();
            let n = d.sentences.len();
            prop_assert_eq!(s.selected.len(), summary_length(n));
            prop_assert!(!s.selected.is_empty() && s.selected.len() <= 5.min((15 * n).div_ceil(100)).max(1));
            prop_assert!(s.selected.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn collection_survives_a_save_and_load(seed in any::<u64>()) {
        let (docs, _) = random_case(&mut rng(seed), 8, 0);
        let c = collection(docs);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ix.json");
        c.save(&path).unwrap();
        prop_assert_eq!(Collection::load(&path).unwrap(), c);
    }

    #[test]
    fn eval_matches_set_arithmetic(
        runs in prop::collection::btree_map("q[0-3]", prop::collection::vec("d[0-9]", 1..8), 1..4),
        rels in prop::collection::btree_map("q[0-4]", prop::collection::btree_set("d[0-9]", 1..6), 0..5),
    ) {
        // dedupe while keeping first occurrence, as a run file cannot rank a document twice
        let run: Run = runs.into_iter().map(|(q, docs)| {
            let mut seen = BTreeSet::new();
            (q, docs.into_iter().filter(|d| seen.insert(d.clone())).collect::<Vec<_>>())
        }).collect();
        let qrels: Qrels = rels;
        let text: String = run.iter().flat_map(|(q, ds)| {
            ds.iter().enumerate().map(move |(i, d)| format!("{q}\t{d}\t{}\n", i + 1))
        }).collect();
        let qtext: String = qrels.iter().flat_map(|(q, ds)| ds.iter().map(move |d| format!("{q}\t{d}\n"))).collect();
        let report = evaluate(&parse_run(&text).unwrap(), &parse_qrels(&qtext).unwrap());
        for r in &report.per_query {
            let ranked = run.get(&r.query_id).cloned().unwrap_or_default();
            let rel = qrels.get(&r.query_id).cloned().unwrap_or_default();
            let hits = ranked.iter().filter(|d| rel.contains(*d)).count() as f64;
            let p = if ranked.is_empty() { 0.0 } else { hits / ranked.len() as f64 };
            let rc = if rel.is_empty() { 0.0 } else { hits / rel.len() as f64 };
            let mut ap = 0.0;
            for k in 1..=ranked.len() {
                if rel.contains(&ranked[k - 1]) {
                    let prec_k = ranked[..k].iter().filter(|d| rel.contains(*d)).count() as f64 / k as f64;
                    ap += prec_k;
                }
            }
            if !rel.is_empty() {
                ap /= rel.len() as f64;
            }
            prop_assert!((r.precision - p).abs() < 1e-12);
            prop_assert!((r.recall - rc).abs() < 1e-12);
            prop_assert!((r.average_precision - ap).abs() < 1e-12);
            for v in [r.precision, r.recall, r.average_precision] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
        let missing = run.keys().filter(|q| !qrels.contains_key(*q)).count();
        prop_assert_eq!(report.warnings.len(), missing);
    }

    #[test]
    fn merging_copies_is_identity(words in prop::collection::vec("[a-z]{2,6}", 1..8), n in 1usize..5) {
        let t = Transcript {
            recognizer_id: "r".into(),
            words: words.iter().map(|w| TranscribedWord { surface: w.clone(), confidence: 0.6, truth: None }).collect(),
            outcomes: Vec::new(),
        };
        let m = merge_transcripts(&vec![t; n]).unwrap();
        prop_assert_eq!(m.surfaces(), words.iter().map(String::as_str).collect::<Vec<_>>());
        for w in &m.words {
            prop_assert_eq!(w.agreement, 1.0);
            prop_assert!((w.combined_confidence - 0.6).abs() < 1e-12);
        }
    }

    #[test]
    fn merged_words_have_unit_interval_scores(seed in any::<u64>(), n in 1usize..5, acc in 0.0f64..1.0) {
        let vocab = ConfusionVocabulary::new(["stock", "market", "crash", "sheep", "ship", "shop", "marked"]);
        let model = ErrorModel::default().with_accuracy(acc);
        let t = ivirs_core::vdm_sim::transcribe_query("stock market crash sheep", n, &model, &vocab, seed).unwrap();
        for w in &t.merged.words {
            prop_assert!(w.agreement > 0.0 && w.agreement <= 1.0);
            prop_assert!((0.0..=1.0).contains(&w.combined_confidence));
        }
        let r = word_accuracy(&t.reference, &t.merged.surfaces()).unwrap();
        prop_assert!(r.wer >= 0.0);
        prop_assert_eq!(r.substitutions + r.deletions + r.insertions, (r.wer * r.reference_len as f64).round() as usize);
    }

    #[test]
    fn perfect_recognizer_is_transparent(words in prop::collection::vec("[a-z]{1,8}", 1..10), seed in any::<u64>()) {
        let model = ErrorModel::default().with_accuracy(1.0);
        let t = corrupt(&words, &model, &ConfusionVocabulary::new(Vec::<String>::new()), seed).unwrap();
        prop_assert_eq!(t.surfaces(), words.iter().map(String::as_str).collect::<Vec<_>>());
        prop_assert_eq!(word_accuracy(&words, &t.surfaces()).unwrap().wer, 0.0);
    }

    #[test]
    fn soundex_shape(word in "[a-zA-Z]{1,12}", other in "[a-zA-Z]{1,12}") {
        let code = soundex(&word).unwrap();
        prop_assert_eq!(code.len(), 4);
        prop_assert_eq!(code.chars().next().unwrap(), word.chars().next().unwrap().to_ascii_uppercase());
        prop_assert!(code.chars().skip(1).all(|c| ('0'..='6').contains(&c)));
        prop_assert_eq!(sounds_alike(&word, &other), sounds_alike(&other, &word));
    }
}
