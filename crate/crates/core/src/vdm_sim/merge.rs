//! Combining several recognizers' transcripts of one utterance.
//!
//! Every transcript is aligned against the first one. Aligned words vote per
//! position; inserted words open extra positions between the anchors. A
//! position yields the plurality surface unless more recognizers emitted
//! nothing there than voted for that surface.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{SimError, Transcript};
use crate::pirs::sounds_alike;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedWord {
    pub surface: String,
    /// Summed confidence of the recognizers emitting `surface`, divided by
    /// the number of recognizers.
    pub combined_confidence: f64,
    /// Fraction of recognizers emitting `surface` at this position.
    pub agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedTranscript {
    pub words: Vec<MergedWord>,
    pub source_count: usize,
}

impl MergedTranscript {
    pub fn surfaces(&self) -> Vec<&str> {
        self.words.iter().map(|w| w.surface.as_str()).collect()
    }
}

const MATCH: u32 = 0;
const SOUND_ALIKE: u32 = 1;
const MISMATCH: u32 = 2;
const GAP: u32 = 2;

enum Step {
    Pair(usize, usize),
    Skip(usize),
    Extra(usize),
}

fn pair_cost(a: &str, b: &str) -> u32 {
    if a == b {
        MATCH
    } else if sounds_alike(a, b) {
        SOUND_ALIKE
    } else {
        MISMATCH
    }
}

fn align(anchor: &[&str], other: &[&str]) -> Vec<Step> {
    let (n, m) = (anchor.len(), other.len());
    let mut d = vec![vec![0u32; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i as u32 * GAP;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j as u32 * GAP;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[i - 1][j - 1] + pair_cost(anchor[i - 1], other[j - 1]);
            d[i][j] = diag.min(d[i - 1][j] + GAP).min(d[i][j - 1] + GAP);
        }
    }
    let mut steps = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + pair_cost(anchor[i - 1], other[j - 1]) {
            steps.push(Step::Pair(i - 1, j - 1));
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + GAP {
            steps.push(Step::Skip(i - 1));
            i -= 1;
        } else {
            steps.push(Step::Extra(j - 1));
            j -= 1;
        }
    }
    steps.reverse();
    steps
}

type Column = Vec<Option<(String, f64)>>;

fn vote(column: &Column, n: usize) -> Option<MergedWord> {
    let mut tally: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    let mut silent = 0;
    for slot in column {
        match slot {
            Some((s, c)) => {
                let e = tally.entry(s.as_str()).or_default();
                e.0 += 1;
                e.1 += c;
            }
            None => silent += 1,
        }
    }
    // BTreeMap iterates in lexicographic order, so on a full tie the first
    // surface seen wins.
    let mut best: Option<(&str, usize, f64)> = None;
    for (&s, &(count, conf)) in &tally {
        let better = match best {
            None => true,
            Some((_, bc, bconf)) => count > bc || (count == bc && conf > bconf),
        };
        if better {
            best = Some((s, count, conf));
        }
    }
    let (surface, count, conf) = best?;
    if silent > count {
        return None;
    }
    Some(MergedWord {
        surface: surface.to_string(),
        combined_confidence: (conf / n as f64).clamp(0.0, 1.0),
        agreement: count as f64 / n as f64,
    })
}

/// Merges `transcripts` into one word sequence with combined confidences.
pub fn merge_transcripts(transcripts: &[Transcript]) -> Result<MergedTranscript, SimError> {
    let n = transcripts.len();
    let Some(first) = transcripts.first() else {
        return Err(SimError::NoTranscripts);
    };
    let anchor: Vec<&str> = first.words.iter().map(|w| w.surface.as_str()).collect();
    let mut anchors: Vec<Column> = first
        .words
        .iter()
        .map(|w| {
            let mut col = vec![None; n];
            col[0] = Some((w.surface.clone(), w.confidence));
            col
        })
        .collect();
    // gaps[s] holds the extra positions before anchor s (s == len: after the last).
    let mut gaps: Vec<Vec<Column>> = vec![Vec::new(); anchor.len() + 1];

    for (k, t) in transcripts.iter().enumerate().skip(1) {
        let words: Vec<&str> = t.words.iter().map(|w| w.surface.as_str()).collect();
        let mut slot = 0;
        let mut run = 0;
        for step in align(&anchor, &words) {
            match step {
                Step::Pair(i, j) => {
                    anchors[i][k] = Some((t.words[j].surface.clone(), t.words[j].confidence));
                    slot = i + 1;
                    run = 0;
                }
                Step::Skip(i) => {
                    slot = i + 1;
                    run = 0;
                }
                Step::Extra(j) => {
                    let gap = &mut gaps[slot];
                    if gap.len() <= run {
                        gap.push(vec![None; n]);
                    }
                    gap[run][k] = Some((t.words[j].surface.clone(), t.words[j].confidence));
                    run += 1;
                }
            }
        }
    }

    let mut words = Vec::new();
    for (s, gap) in gaps.iter().enumerate() {
        words.extend(gap.iter().filter_map(|c| vote(c, n)));
        if let Some(col) = anchors.get(s) {
            words.extend(vote(col, n));
        }
    }
    Ok(MergedTranscript {
        words,
        source_count: n,
    })
}
