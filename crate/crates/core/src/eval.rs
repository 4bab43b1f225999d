//! Set and ranked retrieval metrics over run and qrels files.
//!
//! Run file: `query_id TAB doc_id TAB rank`. Qrels: `query_id TAB doc_id`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub query_id: String,
    pub precision: f64,
    pub recall: f64,
    pub average_precision: f64,
}

/// Ranked documents per query.
pub type Run = BTreeMap<String, Vec<String>>;
/// Relevant documents per query.
pub type Qrels = BTreeMap<String, BTreeSet<String>>;

fn fields(line: &str) -> Vec<&str> {
    line.split('\t').map(str::trim).collect()
}

/// Parses a run file. Entries are ordered by rank, ties by document id;
/// repeated documents keep their best rank.
pub fn parse_run(text: &str) -> Result<Run, EvalError> {
    let mut raw: BTreeMap<String, Vec<(u64, String)>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f = fields(line);
        let err = |reason: String| EvalError::Parse {
            line: i + 1,
            reason,
        };
        if f.len() != 3 {
            return Err(err(format!(
                "expected 3 tab-separated fields, found {}",
                f.len()
            )));
        }
        let rank: u64 = f[2]
            .parse()
            .map_err(|_| err(format!("bad rank {:?}", f[2])))?;
        raw.entry(f[0].to_string())
            .or_default()
            .push((rank, f[1].to_string()));
    }
    Ok(raw
        .into_iter()
        .map(|(q, mut docs)| {
            docs.sort();
            let mut seen = BTreeSet::new();
            let ranked = docs
                .into_iter()
                .filter(|(_, d)| seen.insert(d.clone()))
                .map(|(_, d)| d)
                .collect();
            (q, ranked)
        })
        .collect())
}

pub fn parse_qrels(text: &str) -> Result<Qrels, EvalError> {
    let mut qrels = Qrels::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f = fields(line);
        if f.len() != 2 {
            return Err(EvalError::Parse {
                line: i + 1,
                reason: format!("expected 2 tab-separated fields, found {}", f.len()),
            });
        }
        qrels
            .entry(f[0].to_string())
            .or_default()
            .insert(f[1].to_string());
    }
    Ok(qrels)
}

pub fn format_run(run: &Run) -> String {
    let mut out = String::new();
    for (q, docs) in run {
        for (r, d) in docs.iter().enumerate() {
            let _ = writeln!(out, "{q}\t{d}\t{}", r + 1);
        }
    }
    out
}

/// Uninterpolated average precision of a ranking.
pub fn average_precision<S: AsRef<str>>(ranked: &[S], relevant: &BTreeSet<String>) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranked.iter().enumerate() {
        if relevant.contains(d.as_ref()) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / relevant.len() as f64
}

pub fn evaluate_query<S: AsRef<str>>(
    query_id: &str,
    ranked: &[S],
    relevant: &BTreeSet<String>,
) -> EvalResult {
    let hits = ranked
        .iter()
        .filter(|d| relevant.contains(d.as_ref()))
        .count();
    let ratio = |n: usize| if n == 0 { 0.0 } else { hits as f64 / n as f64 };
    EvalResult {
        query_id: query_id.to_string(),
        precision: ratio(ranked.len()),
        recall: ratio(relevant.len()),
        average_precision: average_precision(ranked, relevant),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_query: Vec<EvalResult>,
    /// Means over `per_query`; `query_id` is "mean".
    pub mean: EvalResult,
    pub warnings: Vec<String>,
}

/// Scores every query of `run`. Queries absent from `qrels` count with no
/// relevant documents and produce a warning.
pub fn evaluate(run: &Run, qrels: &Qrels) -> EvalReport {
    let empty = BTreeSet::new();
    let mut warnings = Vec::new();
    let per_query: Vec<EvalResult> = run
        .iter()
        .map(|(q, docs)| {
            let rel = qrels.get(q).unwrap_or_else(|| {
                warnings.push(format!(
                    "query {q} has no qrels; counted with zero relevant"
                ));
                &empty
            });
            evaluate_query(q, docs, rel)
        })
        .collect();
    let n = per_query.len().max(1) as f64;
    let mean = EvalResult {
        query_id: "mean".into(),
        precision: per_query.iter().map(|r| r.precision).sum::<f64>() / n,
        recall: per_query.iter().map(|r| r.recall).sum::<f64>() / n,
        average_precision: per_query.iter().map(|r| r.average_precision).sum::<f64>() / n,
    };
    EvalReport {
        per_query,
        mean,
        warnings,
    }
}

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

fn render_grid(rows: &[Vec<String>], left_align_first: bool) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 && left_align_first {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Per-query table with a trailing mean row, values in percent.
pub fn format_report(report: &EvalReport) -> String {
    let mut rows = vec![vec![
        "Query".to_string(),
        "P. %".into(),
        "R. %".into(),
        "AP %".into(),
    ]];
    for r in report.per_query.iter().chain(std::iter::once(&report.mean)) {
        rows.push(vec![
            r.query_id.clone(),
            pct(r.precision),
            pct(r.recall),
            pct(r.average_precision),
        ]);
    }
    render_grid(&rows, true)
}

/// One assessment condition's averages, in percent and seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub label: String,
    pub precision_pct: f64,
    pub recall_pct: f64,
    pub time_sec: Option<f64>,
}

/// Conditions as columns, measures as rows.
pub fn format_condition_table(conditions: &[ConditionSummary]) -> String {
    let mut rows = vec![std::iter::once(String::new())
        .chain(conditions.iter().map(|c| c.label.clone()))
        .collect::<Vec<_>>()];
    let row = |label: &str, f: &dyn Fn(&ConditionSummary) -> String| {
        std::iter::once(label.to_string())
            .chain(conditions.iter().map(f))
            .collect::<Vec<_>>()
    };
    rows.push(row("Avg. P. %", &|c| format!("{:.2}", c.precision_pct)));
    rows.push(row("Avg. R. %", &|c| format!("{:.2}", c.recall_pct)));
    rows.push(row("Avg. T. (sec.)", &|c| {
        c.time_sec
            .map_or_else(|| "-".to_string(), |t| format!("{t:.2}"))
    }));
    render_grid(&rows, true)
}

/// Condition summary of an evaluation report (mean set precision and recall).
pub fn condition_from_report(
    label: &str,
    report: &EvalReport,
    time_sec: Option<f64>,
) -> ConditionSummary {
    ConditionSummary {
        label: label.to_string(),
        precision_pct: report.mean.precision * 100.0,
        recall_pct: report.mean.recall * 100.0,
        time_sec,
    }
}
