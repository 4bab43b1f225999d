//! Word-level Levenshtein alignment and word error rate.

use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignOp {
    Match { reference: usize, hypothesis: usize },
    Substitute { reference: usize, hypothesis: usize },
    Delete { reference: usize },
    Insert { hypothesis: usize },
}

/// Minimum-edit alignment. Among optimal paths, matches and substitutions
/// are preferred over deletions, and deletions over insertions.
pub fn align_words<S: AsRef<str>, T: AsRef<str>>(
    reference: &[S],
    hypothesis: &[T],
) -> Vec<AlignOp> {
    let (n, m) = (reference.len(), hypothesis.len());
    let eq = |i: usize, j: usize| reference[i].as_ref() == hypothesis[j].as_ref();
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[i - 1][j - 1] + usize::from(!eq(i - 1, j - 1));
            d[i][j] = diag.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + usize::from(!eq(i - 1, j - 1)) {
            ops.push(if eq(i - 1, j - 1) {
                AlignOp::Match {
                    reference: i - 1,
                    hypothesis: j - 1,
                }
            } else {
                AlignOp::Substitute {
                    reference: i - 1,
                    hypothesis: j - 1,
                }
            });
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            ops.push(AlignOp::Delete { reference: i - 1 });
            i -= 1;
        } else {
            ops.push(AlignOp::Insert { hypothesis: j - 1 });
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WerReport {
    pub wer: f64,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_len: usize,
}

impl WerReport {
    /// `1 − wer`; negative when insertions outnumber the reference.
    pub fn word_accuracy(&self) -> f64 {
        1.0 - self.wer
    }
}

/// `(S + D + I) / |reference|` under optimal alignment.
pub fn word_accuracy<S: AsRef<str>, T: AsRef<str>>(
    reference: &[S],
    hypothesis: &[T],
) -> Result<WerReport, SimError> {
    if reference.is_empty() {
        return Err(SimError::EmptyReference);
    }
    let (mut s, mut d, mut ins) = (0, 0, 0);
    for op in align_words(reference, hypothesis) {
        match op {
            AlignOp::Match { .. } => {}
            AlignOp::Substitute { .. } => s += 1,
            AlignOp::Delete { .. } => d += 1,
            AlignOp::Insert { .. } => ins += 1,
        }
    }
    Ok(WerReport {
        wer: (s + d + ins) as f64 / reference.len() as f64,
        substitutions: s,
        deletions: d,
        insertions: ins,
        reference_len: reference.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identical_is_zero() {
        let r = word_accuracy(&w("a b c"), &w("a b c")).unwrap();
        assert_eq!(r.wer, 0.0);
    }

    #[test]
    fn one_substitution_in_four() {
        let r = word_accuracy(&w("a b c d"), &w("a x c d")).unwrap();
        assert_eq!((r.wer, r.substitutions), (0.25, 1));
    }

    #[test]
    fn one_insertion() {
        let r = word_accuracy(&w("a b c"), &w("a x b c")).unwrap();
        assert_eq!((r.substitutions, r.deletions, r.insertions), (0, 0, 1));
        assert_eq!(r.wer, 1.0 / 3.0);
    }

    #[test]
    fn deletions_and_empty_hypothesis() {
        let r = word_accuracy(&w("a b c"), &w("")).unwrap();
        assert_eq!((r.deletions, r.wer), (3, 1.0));
        assert_eq!(
            word_accuracy(&w(""), &w("a")),
            Err(SimError::EmptyReference)
        );
    }

    #[test]
    fn not_symmetric() {
        let ab = word_accuracy(&w("a b"), &w("a b c d")).unwrap().wer;
        let ba = word_accuracy(&w("a b c d"), &w("a b")).unwrap().wer;
        assert_eq!(ab, 1.0);
        assert_eq!(ba, 0.5);
    }
}
