//! Viseme and word error rates from Levenshtein alignments.

use crate::error::{Error, Result};
use crate::viseme_map::{VisemeClass, VisemeSequence};

/// Substitution, deletion and insertion counts of one alignment, with the
/// reference length used as the rate denominator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    /// `max(|ref|, 1)` so an empty reference never divides by zero.
    pub reference_len: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn rate(&self) -> f64 {
        self.errors() as f64 / self.reference_len.max(1) as f64
    }
}

impl std::ops::Add for EditCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            substitutions: self.substitutions + o.substitutions,
            deletions: self.deletions + o.deletions,
            insertions: self.insertions + o.insertions,
            reference_len: self.reference_len + o.reference_len,
        }
    }
}

impl std::iter::Sum for EditCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

/// Unit-cost Levenshtein alignment. When several optimal scripts exist the
/// backtrace prefers substitution (or match), then deletion, then insertion.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut cost = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        cost[i * w] = i;
    }
    for j in 0..=m {
        cost[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = cost[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let up = cost[(i - 1) * w + j] + 1;
            let left = cost[i * w + j - 1] + 1;
            cost[i * w + j] = diag.min(up).min(left);
        }
    }

    let mut counts = EditCounts {
        reference_len: n.max(1),
        ..EditCounts::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if cost[(i - 1) * w + j - 1] + usize::from(!same) == here {
                if !same {
                    counts.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && cost[(i - 1) * w + j] + 1 == here {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

/// Drops start, end and padding tokens; spaces are scored.
pub fn scoring_tokens(seq: &VisemeSequence) -> Vec<VisemeClass> {
    seq.labels()
        .iter()
        .copied()
        .filter(|&c| c != VisemeClass::SOS && c != VisemeClass::EOS && c != VisemeClass::PAD)
        .collect()
}

/// Corpus-level error counts: per-utterance counts are summed before
/// dividing.
pub fn corpus_counts<T: PartialEq, R: AsRef<[T]>>(refs: &[R], hyps: &[R]) -> Result<EditCounts> {
    if refs.len() != hyps.len() {
        return Err(Error::Length(refs.len(), hyps.len()));
    }
    Ok(refs
        .iter()
        .zip(hyps)
        .map(|(r, h)| edit_distance(r.as_ref(), h.as_ref()))
        .sum())
}

/// Viseme error rate over a corpus.
pub fn ver(refs: &[VisemeSequence], hyps: &[VisemeSequence]) -> Result<f64> {
    let r: Vec<_> = refs.iter().map(scoring_tokens).collect();
    let h: Vec<_> = hyps.iter().map(scoring_tokens).collect();
    corpus_counts(&r, &h).map(|c| c.rate())
}

/// Word error rate over a corpus.
pub fn wer<S: AsRef<str> + PartialEq>(refs: &[Vec<S>], hyps: &[Vec<S>]) -> Result<f64> {
    corpus_counts(refs, hyps).map(|c| c.rate())
}
