//! Cross-entropy and viseme-level KL metric losses.
//!
//! For a batch of predicted distributions `Q` (one row per sequence position)
//! and ground-truth labels `Y`, the representative distribution of class `c`
//! is the mean of the rows labelled `c`. Aligning representatives back onto
//! the label sequence gives a target `P`, and the metric losses are
//! position-averaged KL divergences `D(P || Q)`:
//!
//! * `KL`: normal-speech representatives against silent predictions.
//! * `WKL`: a count-weighted mix `M` of normal and silent representatives
//!   against both predictions.
//! * `NKL` / `SKL`: each speech type against its own representatives.
//!
//! Targets are built from detached values and enter the graph as constants.
//! Special tokens (space, start, end, pad) are excluded from representative
//! averaging; positions carrying them are skipped by every KL term.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};
use crate::viseme_map::NUM_VISEMES;

const SIMPLEX_TOL: f64 = 1e-9;

/// `L x C` matrix whose rows are probability distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbSeq<T>(Tensor<T>);

impl<T: Scalar> ProbSeq<T> {
    pub fn new(rows: Tensor<T>) -> Result<Self> {
        for r in 0..rows.rows() {
            let row = rows.row(r);
            let total: f64 = row.iter().map(|x| x.as_f64()).sum();
            if row.iter().any(|&x| x < T::zero()) || (total - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::Config(format!("row {r} is not on the probability simplex")));
            }
        }
        Ok(Self(rows))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }
}

/// Per-class mean distributions with a presence mask.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentativeSet<T> {
    reps: Tensor<T>,
    present: Vec<bool>,
    counts: Vec<usize>,
}

impl<T: Scalar> RepresentativeSet<T> {
    pub fn num_classes(&self) -> usize {
        self.present.len()
    }

    /// Row `c`, or `None` when class `c` did not occur.
    pub fn rep(&self, c: usize) -> Option<&[T]> {
        self.present.get(c).copied().unwrap_or(false).then(|| self.reps.row(c))
    }

    pub fn is_present(&self, c: usize) -> bool {
        self.present.get(c).copied().unwrap_or(false)
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Masks the special-token classes so only visemes keep representatives.
    pub fn content_only(mut self) -> Self {
        for c in NUM_VISEMES..self.present.len() {
            self.present[c] = false;
        }
        self
    }
}

fn check_labels<T: Scalar>(q: &Tensor<T>, labels: &[usize]) -> Result<()> {
    if q.rows() != labels.len() {
        return Err(Error::Length(q.rows(), labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= q.cols()) {
        return Err(Error::LabelRange(bad));
    }
    Ok(())
}

/// Mean of the rows of `q` sharing each label, summed in ascending position
/// order and divided once by the class count.
pub fn representative_distributions<T: Scalar>(q: &Tensor<T>, labels: &[usize]) -> Result<RepresentativeSet<T>> {
    check_labels(q, labels)?;
    let c = q.cols();
    let mut reps = Tensor::zeros(&[c, c]);
    let mut counts = vec![0usize; c];
    for (l, &y) in labels.iter().enumerate() {
        counts[y] += 1;
        for (acc, &x) in reps.row_mut(y).iter_mut().zip(q.row(l)) {
            *acc += x;
        }
    }
    for (class, &m) in counts.iter().enumerate() {
        if m > 0 {
            let m = T::count(m);
            reps.row_mut(class).iter_mut().for_each(|x| *x /= m);
        }
    }
    Ok(RepresentativeSet {
        reps,
        present: counts.iter().map(|&m| m > 0).collect(),
        counts,
    })
}

/// Gradient-inert target rows aligned to a label sequence. Rows whose class
/// has no representative are zero and not retained.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSeq<T> {
    rows: Tensor<T>,
    retained: Vec<bool>,
}

impl<T: Scalar> TargetSeq<T> {
    pub fn rows(&self) -> &Tensor<T> {
        &self.rows
    }

    pub fn retained(&self) -> &[bool] {
        &self.retained
    }

    pub fn retained_count(&self) -> usize {
        self.retained.iter().filter(|&&r| r).count()
    }

    /// Every row retained, e.g. when comparing two explicit distributions.
    pub fn from_rows(rows: Tensor<T>) -> Self {
        let retained = vec![true; rows.rows()];
        Self { rows, retained }
    }
}

/// `P_l = reps[Y_l]`; every label must have a representative.
pub fn build_target<T: Scalar>(set: &RepresentativeSet<T>, labels: &[usize]) -> Result<TargetSeq<T>> {
    if let Some((position, &label)) = labels.iter().enumerate().find(|(_, &y)| !set.is_present(y)) {
        return Err(Error::MaskedClass { position, label });
    }
    Ok(align_target(set, labels))
}

/// As [`build_target`], skipping positions whose class is absent.
pub fn align_target<T: Scalar>(set: &RepresentativeSet<T>, labels: &[usize]) -> TargetSeq<T> {
    let c = set.num_classes();
    let mut rows = Tensor::zeros(&[labels.len(), c]);
    let mut retained = vec![false; labels.len()];
    for (l, &y) in labels.iter().enumerate() {
        if let Some(rep) = set.rep(y) {
            rows.row_mut(l).copy_from_slice(rep);
            retained[l] = true;
        }
    }
    TargetSeq { rows, retained }
}

/// `(1/L') Σ_l Σ_c P_lc ln(P_lc / max(Q_lc, ε))` over the retained rows,
/// with `0 ln 0 = 0`. Returns a constant zero when nothing is retained.
pub fn kl_seq<T: Scalar>(g: &mut Graph<T>, target: &TargetSeq<T>, q: Var) -> Result<Var> {
    let qv = g.value(q);
    if qv.shape() != target.rows.shape() {
        return Err(Error::shape("kl_seq", target.rows.shape(), qv.shape()));
    }
    let n = target.retained_count();
    if n == 0 {
        return Ok(g.constant(Tensor::scalar(T::zero())));
    }
    let neg_entropy: T = target
        .rows
        .data()
        .iter()
        .filter(|&&p| p > T::zero())
        .map(|&p| p * p.clamped_ln())
        .sum();
    let inv_n = T::one() / T::count(n);

    let p = g.constant(target.rows.clone());
    let log_q = g.log(q)?;
    let cross = g.mul(p, log_q)?;
    let cross = g.sum(cross)?;
    let cross = g.scale(cross, -inv_n)?;
    let h = g.constant(Tensor::scalar(neg_entropy * inv_n));
    g.add(h, cross)
}

/// Value and bookkeeping of one loss term.
#[derive(Clone, Copy, Debug)]
pub struct TermOutput {
    pub value: Var,
    pub retained: usize,
    pub skipped: usize,
}

impl TermOutput {
    /// No position contributed; the value is a constant zero.
    pub fn is_degenerate(&self) -> bool {
        self.retained == 0
    }
}

fn aligned_kl<T: Scalar>(g: &mut Graph<T>, q: Var, labels: &[usize], set: &RepresentativeSet<T>) -> Result<TermOutput> {
    check_labels(g.value(q), labels)?;
    let target = align_target(set, labels);
    let retained = target.retained_count();
    Ok(TermOutput {
        value: kl_seq(g, &target, q)?,
        retained,
        skipped: labels.len() - retained,
    })
}

/// Silent predictions pulled toward normal-speech representatives.
pub fn loss_kl<T: Scalar>(
    g: &mut Graph<T>,
    q_silent: Var,
    y_silent: &[usize],
    normal_reps: &RepresentativeSet<T>,
) -> Result<TermOutput> {
    aligned_kl(g, q_silent, y_silent, normal_reps)
}

/// `M = (N_N S_N + N_S S_S) / (N_N + N_S)` per class; a class present on
/// only one side takes that side's representative.
pub fn weighted_target<T: Scalar>(
    normal: &RepresentativeSet<T>,
    silent: &RepresentativeSet<T>,
    n_normal: usize,
    n_silent: usize,
) -> Result<RepresentativeSet<T>> {
    if n_normal + n_silent == 0 {
        return Err(Error::Config("weighted target needs N_N + N_S > 0".into()));
    }
    if normal.num_classes() != silent.num_classes() {
        return Err(Error::Length(normal.num_classes(), silent.num_classes()));
    }
    let total = T::lit(n_normal as f64 + n_silent as f64);
    let w_n = T::lit(n_normal as f64) / total;
    let w_s = T::lit(n_silent as f64) / total;
    let c = normal.num_classes();
    let mut reps = Tensor::zeros(&[c, c]);
    let mut present = vec![false; c];
    for (class, slot) in present.iter_mut().enumerate() {
        let row: Option<Vec<T>> = match (normal.rep(class), silent.rep(class)) {
            (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(&x, &y)| w_n * x + w_s * y).collect()),
            (Some(a), None) => Some(a.to_vec()),
            (None, Some(b)) => Some(b.to_vec()),
            (None, None) => None,
        };
        if let Some(row) = row {
            reps.row_mut(class).copy_from_slice(&row);
            *slot = true;
        }
    }
    let counts = normal.counts.iter().zip(&silent.counts).map(|(a, b)| a + b).collect();
    Ok(RepresentativeSet { reps, present, counts })
}

/// `D(M || Q_N) + D(M || Q_S)`.
pub fn loss_wkl<T: Scalar>(
    g: &mut Graph<T>,
    q_normal: Var,
    y_normal: &[usize],
    q_silent: Var,
    y_silent: &[usize],
    mixed: &RepresentativeSet<T>,
) -> Result<TermOutput> {
    let a = aligned_kl(g, q_normal, y_normal, mixed)?;
    let b = aligned_kl(g, q_silent, y_silent, mixed)?;
    Ok(TermOutput {
        value: g.add(a.value, b.value)?,
        retained: a.retained + b.retained,
        skipped: a.skipped + b.skipped,
    })
}

/// Within-speech-type term: predictions against their own batch
/// representatives.
pub fn loss_within<T: Scalar>(g: &mut Graph<T>, q: Var, labels: &[usize]) -> Result<TermOutput> {
    let set = representative_distributions(g.value(q), labels)?.content_only();
    loss_within_given(g, q, labels, &set)
}

/// As [`loss_within`] with the representatives supplied.
pub fn loss_within_given<T: Scalar>(g: &mut Graph<T>, q: Var, labels: &[usize], own: &RepresentativeSet<T>) -> Result<TermOutput> {
    aligned_kl(g, q, labels, own)
}

/// `(1/L) Σ_l -ln(max(Q_{l, Y_l}, ε))`.
pub fn cross_entropy<T: Scalar>(g: &mut Graph<T>, q: Var, labels: &[usize]) -> Result<Var> {
    let qv = g.value(q);
    check_labels(qv, labels)?;
    if labels.is_empty() {
        return Err(Error::EmptyBatch("cross_entropy"));
    }
    let mut onehot = Tensor::zeros(&[labels.len(), qv.cols()]);
    for (l, &y) in labels.iter().enumerate() {
        onehot.set(l, y, T::one());
    }
    let mask = g.constant(onehot);
    let log_q = g.log(q)?;
    let picked = g.mul(log_q, mask)?;
    let total = g.sum(picked)?;
    g.scale(total, -T::one() / T::count(labels.len()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LossTerm {
    Nce,
    Sce,
    Kl,
    Wkl,
    Nkl,
    Skl,
}

impl LossTerm {
    pub const ALL: [LossTerm; 6] = [Self::Nce, Self::Sce, Self::Kl, Self::Wkl, Self::Nkl, Self::Skl];

    pub fn name(self) -> &'static str {
        match self {
            Self::Nce => "NCE",
            Self::Sce => "SCE",
            Self::Kl => "KL",
            Self::Wkl => "WKL",
            Self::Nkl => "NKL",
            Self::Skl => "SKL",
        }
    }

    pub fn needs_normal(self) -> bool {
        matches!(self, Self::Nce | Self::Kl | Self::Wkl | Self::Nkl)
    }

    pub fn needs_silent(self) -> bool {
        matches!(self, Self::Sce | Self::Kl | Self::Wkl | Self::Skl)
    }
}

impl fmt::Display for LossTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossTerm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown loss term `{s}`")))
    }
}

/// Active loss terms with their weights, plus training-set sizes per
/// speech type for the weighted target.
#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    weights: BTreeMap<LossTerm, f64>,
    pub n_normal: usize,
    pub n_silent: usize,
}

impl LossConfig {
    pub fn new(terms: &[(LossTerm, f64)], n_normal: usize, n_silent: usize) -> Result<Self> {
        let weights: BTreeMap<_, _> = terms.iter().copied().collect();
        let cfg = Self {
            weights,
            n_normal,
            n_silent,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every listed term at weight 1.
    pub fn unit(terms: &[LossTerm], n_normal: usize, n_silent: usize) -> Result<Self> {
        let t: Vec<_> = terms.iter().map(|&t| (t, 1.0)).collect();
        Self::new(&t, n_normal, n_silent)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.is_active(LossTerm::Nce) && !self.is_active(LossTerm::Sce) {
            return Err(Error::Config("at least one of NCE/SCE must be active".into()));
        }
        if self.is_active(LossTerm::Kl) && self.is_active(LossTerm::Wkl) {
            return Err(Error::Config("KL and WKL are mutually exclusive".into()));
        }
        if let Some((t, w)) = self.weights.iter().find(|(_, &w)| !(w > 0.0 && w.is_finite())) {
            return Err(Error::Config(format!("weight of {t} must be positive, got {w}")));
        }
        if self.is_active(LossTerm::Wkl) && (self.n_normal == 0 || self.n_silent == 0) {
            return Err(Error::Config("WKL needs positive N_N and N_S".into()));
        }
        Ok(())
    }

    pub fn is_active(&self, term: LossTerm) -> bool {
        self.weights.contains_key(&term)
    }

    pub fn weight(&self, term: LossTerm) -> Option<f64> {
        self.weights.get(&term).copied()
    }

    /// Active terms in canonical order.
    pub fn terms(&self) -> impl Iterator<Item = (LossTerm, f64)> + '_ {
        self.weights.iter().map(|(&t, &w)| (t, w))
    }

    pub fn uses_silent(&self) -> bool {
        self.weights.keys().any(|t| t.needs_silent())
    }

    /// `NCE+SCE+WKL` style label.
    pub fn label(&self) -> String {
        self.weights.keys().map(|t| t.name()).collect::<Vec<_>>().join("+")
    }
}

/// Model output for one speech type: stacked probability rows and the
/// matching flattened labels.
#[derive(Clone, Debug)]
pub struct BatchOutput {
    pub probs: Var,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TermRecord {
    pub term: LossTerm,
    pub weight: f64,
    pub value: f64,
    pub retained: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug)]
pub struct LossBreakdown {
    pub total: Var,
    pub terms: Vec<TermRecord>,
}

impl LossBreakdown {
    pub fn value_of(&self, term: LossTerm) -> Option<f64> {
        self.terms.iter().find(|r| r.term == term).map(|r| r.value)
    }
}

/// Content-only representatives of each batch, computed from detached
/// values. Holding them fixed is what makes the targets gradient-inert.
#[derive(Clone, Debug, Default)]
pub struct BatchTargets<T> {
    pub normal: Option<RepresentativeSet<T>>,
    pub silent: Option<RepresentativeSet<T>>,
}

impl<T: Scalar> BatchTargets<T> {
    pub fn from_values(g: &Graph<T>, normal: Option<&BatchOutput>, silent: Option<&BatchOutput>) -> Result<Self> {
        let reps = |b: Option<&BatchOutput>| -> Result<Option<RepresentativeSet<T>>> {
            b.filter(|b| !b.labels.is_empty())
                .map(|b| representative_distributions(g.value(b.probs), &b.labels).map(RepresentativeSet::content_only))
                .transpose()
        };
        Ok(Self {
            normal: reps(normal)?,
            silent: reps(silent)?,
        })
    }
}

/// Weighted sum of the active terms, with targets from the current batch.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    normal: Option<&BatchOutput>,
    silent: Option<&BatchOutput>,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let targets = BatchTargets::from_values(g, normal, silent)?;
    total_loss_with(g, normal, silent, cfg, &targets)
}

/// As [`total_loss`] with explicitly supplied batch representatives.
pub fn total_loss_with<T: Scalar>(
    g: &mut Graph<T>,
    normal: Option<&BatchOutput>,
    silent: Option<&BatchOutput>,
    cfg: &LossConfig,
    targets: &BatchTargets<T>,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    let nonempty = |b: Option<&BatchOutput>| b.filter(|b| !b.labels.is_empty()).cloned();
    let (normal, silent) = (nonempty(normal), nonempty(silent));

    let mut total: Option<Var> = None;
    let mut records = Vec::new();

    for (term, weight) in cfg.terms() {
        let missing = || Error::EmptyBatch(term.name());
        let n = if term.needs_normal() {
            Some((normal.as_ref().ok_or_else(missing)?, targets.normal.as_ref().ok_or_else(missing)?))
        } else {
            None
        };
        let s = if term.needs_silent() {
            Some((silent.as_ref().ok_or_else(missing)?, targets.silent.as_ref().ok_or_else(missing)?))
        } else {
            None
        };

        let out = match term {
            LossTerm::Nce | LossTerm::Sce => {
                let (b, _) = n.or(s).expect("batch checked above");
                let v = cross_entropy(g, b.probs, &b.labels)?;
                TermOutput {
                    value: v,
                    retained: b.labels.len(),
                    skipped: 0,
                }
            }
            LossTerm::Kl => {
                let ((_, rn), (s, _)) = (n.unwrap(), s.unwrap());
                loss_kl(g, s.probs, &s.labels, rn)?
            }
            LossTerm::Wkl => {
                let ((n, rn), (s, rs)) = (n.unwrap(), s.unwrap());
                let m = weighted_target(rn, rs, cfg.n_normal, cfg.n_silent)?;
                loss_wkl(g, n.probs, &n.labels, s.probs, &s.labels, &m)?
            }
            LossTerm::Nkl | LossTerm::Skl => {
                let (b, reps) = n.or(s).expect("batch checked above");
                loss_within_given(g, b.probs, &b.labels, reps)?
            }
        };

        records.push(TermRecord {
            term,
            weight,
            value: g.value(out.value).item().as_f64(),
            retained: out.retained,
            skipped: out.skipped,
        });
        let weighted = if weight == 1.0 {
            out.value
        } else {
            g.scale(out.value, T::lit(weight))?
        };
        total = Some(match total {
            Some(acc) => g.add(acc, weighted)?,
            None => weighted,
        });
    }

    Ok(LossBreakdown {
        total: total.expect("validated config has at least one term"),
        terms: records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn kl_value(p: &[&[f64]], q: &[&[f64]]) -> f64 {
        let mut g = Graph::new();
        let qv = g.constant(t(q));
        let out = kl_seq(&mut g, &TargetSeq::from_rows(t(p)), qv).unwrap();
        g.value(out).item()
    }

    #[test]
    fn representative_mean() {
        let q = t(&[&[0.6, 0.4], &[0.4, 0.6]]);
        let s = representative_distributions(&q, &[1, 1]).unwrap();
        assert_eq!(s.rep(1).unwrap(), &[0.5, 0.5]);
        assert!(!s.is_present(0));
        assert!(s.rep(0).is_none());
        assert_eq!(s.counts(), &[0, 2]);
    }

    #[test]
    fn single_row_representative_is_exact() {
        let q = t(&[&[0.3, 0.7]]);
        let s = representative_distributions(&q, &[0]).unwrap();
        assert_eq!(s.rep(0).unwrap(), q.row(0));
    }

    #[test]
    fn representative_length_mismatch() {
        let q = t(&[&[0.3, 0.7]]);
        assert!(matches!(representative_distributions(&q, &[0, 1]), Err(Error::Length(1, 2))));
        assert!(matches!(representative_distributions(&q, &[5]), Err(Error::LabelRange(5))));
    }

    #[test]
    fn target_alignment() {
        let mut q = Tensor::zeros(&[1, 17]);
        q.set(0, 3, 1.0);
        let s = representative_distributions(&q, &[8]).unwrap();
        let p = build_target(&s, &[8]).unwrap();
        assert_eq!(p.rows().row(0), s.rep(8).unwrap());

        let p = build_target(&s, &[8, 8]).unwrap();
        assert_eq!(p.rows().row(0), p.rows().row(1));
        assert!(matches!(build_target(&s, &[8, 2]), Err(Error::MaskedClass { position: 1, label: 2 })));
    }

    #[test]
    fn kl_hand_values() {
        assert_eq!(kl_value(&[&[0.3, 0.7]], &[&[0.3, 0.7]]), 0.0);
        assert_abs_diff_eq!(kl_value(&[&[1.0, 0.0]], &[&[0.5, 0.5]]), 0.693147, epsilon = 1e-6);
        assert_abs_diff_eq!(kl_value(&[&[0.5, 0.5]], &[&[0.25, 0.75]]), 0.143841, epsilon = 1e-6);
    }

    #[test]
    fn kl_shape_mismatch() {
        let mut g = Graph::new();
        let q = g.constant(t(&[&[0.5, 0.5]]));
        let p = TargetSeq::from_rows(t(&[&[1.0, 0.0, 0.0]]));
        assert!(matches!(kl_seq(&mut g, &p, q), Err(Error::Shape { .. })));
    }

    #[test]
    fn loss_kl_cases() {
        let mut g = Graph::new();
        // normal batch: class 0 only, representative [1, 0]
        let normal = representative_distributions(&t(&[&[1.0, 0.0]]), &[0]).unwrap();
        let qs = g.constant(t(&[&[0.5, 0.5]]));
        let out = loss_kl(&mut g, qs, &[0], &normal).unwrap();
        assert_abs_diff_eq!(g.value(out.value).item(), 2f64.ln(), epsilon = 1e-12);

        let qs = g.constant(t(&[&[1.0, 0.0]]));
        let out = loss_kl(&mut g, qs, &[0], &normal).unwrap();
        assert_eq!(g.value(out.value).item(), 0.0);

        let qs = g.constant(t(&[&[0.5, 0.5]]));
        let out = loss_kl(&mut g, qs, &[1], &normal).unwrap();
        assert!(out.is_degenerate());
        assert_eq!(out.skipped, 1);
        assert_eq!(g.value(out.value).item(), 0.0);
    }

    #[test]
    fn weighted_target_cases() {
        let sn = representative_distributions(&t(&[&[1.0, 0.0]]), &[0]).unwrap();
        let ss = representative_distributions(&t(&[&[0.0, 1.0]]), &[0]).unwrap();
        let m = weighted_target(&sn, &ss, 3, 1).unwrap();
        assert_eq!(m.rep(0).unwrap(), &[0.75, 0.25]);
        let m = weighted_target(&sn, &ss, 5, 5).unwrap();
        assert_eq!(m.rep(0).unwrap(), &[0.5, 0.5]);
        let m = weighted_target(&sn, &ss, 1_000_000_000, 1).unwrap();
        let dev = m.rep(0).unwrap().iter().zip(sn.rep(0).unwrap()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-8);
        assert!(weighted_target(&sn, &ss, 0, 0).is_err());
    }

    #[test]
    fn weighted_target_one_sided_class() {
        let sn = representative_distributions(&t(&[&[0.9, 0.1]]), &[0]).unwrap();
        let ss = representative_distributions(&t(&[&[0.2, 0.8]]), &[1]).unwrap();
        let m = weighted_target(&sn, &ss, 2, 1).unwrap();
        assert_eq!(m.rep(0).unwrap(), sn.rep(0).unwrap());
        assert_eq!(m.rep(1).unwrap(), ss.rep(1).unwrap());
    }

    #[test]
    fn wkl_is_additive() {
        let mut g = Graph::new();
        let m = representative_distributions(&t(&[&[0.8, 0.2]]), &[0]).unwrap();
        let qn = g.constant(t(&[&[0.8, 0.2]]));
        let qs = g.constant(t(&[&[0.5, 0.5]]));
        let out = loss_wkl(&mut g, qn, &[0], qs, &[0], &m).unwrap();
        let single = kl_value(&[&[0.8, 0.2]], &[&[0.5, 0.5]]);
        assert_eq!(g.value(out.value).item(), single);
    }

    #[test]
    fn within_zero_variance_and_split_rows() {
        let mut g = Graph::new();
        let q = g.constant(t(&[&[0.7, 0.3], &[0.7, 0.3]]));
        let out = loss_within(&mut g, q, &[0, 0]).unwrap();
        assert_eq!(g.value(out.value).item(), 0.0);

        let q = g.constant(t(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let out = loss_within(&mut g, q, &[0, 0]).unwrap();
        let v = g.value(out.value).item();
        // Each row: 0.5 ln(0.5/1) + 0.5 ln(0.5/1e-12).
        let expected = 0.5 * 0.5f64.ln() + 0.5 * (0.5f64 / 1e-12).ln();
        assert!(v.is_finite() && v > 0.0);
        assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
    }

    #[test]
    fn cross_entropy_cases() {
        let mut g = Graph::new();
        let q = g.constant(t(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let ce = cross_entropy(&mut g, q, &[0, 1]).unwrap();
        assert_eq!(g.value(ce).item(), 0.0);

        let q = g.constant(Tensor::filled(&[1, 17], 1.0 / 17.0));
        let ce = cross_entropy(&mut g, q, &[4]).unwrap();
        assert_abs_diff_eq!(g.value(ce).item(), 2.8332133, epsilon = 1e-6);

        let mut last = -1.0;
        for p in [0.9, 0.7, 0.5, 0.2] {
            let q = g.constant(t(&[&[p, 1.0 - p]]));
            let ce = cross_entropy(&mut g, q, &[0]).unwrap();
            let v = g.value(ce).item();
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn config_validation() {
        use LossTerm::*;
        assert!(LossConfig::unit(&[Kl, Nkl], 1, 1).is_err());
        assert!(LossConfig::unit(&[Nce, Kl, Wkl], 1, 1).is_err());
        assert!(LossConfig::new(&[(Nce, 0.0)], 1, 1).is_err());
        assert!(LossConfig::unit(&[Nce, Sce, Wkl], 1, 0).is_err());
        let cfg = LossConfig::unit(&[Skl, Nce, Sce], 1, 1).unwrap();
        assert_eq!(cfg.label(), "NCE+SCE+SKL");
        assert_eq!("wkl".parse::<LossTerm>().unwrap(), Wkl);
    }

    #[test]
    fn total_loss_requires_batches() {
        let mut g = Graph::new();
        let q = g.constant(t(&[&[0.5, 0.5]]));
        let b = BatchOutput { probs: q, labels: vec![0] };
        let cfg = LossConfig::unit(&[LossTerm::Nce, LossTerm::Sce], 1, 1).unwrap();
        assert!(matches!(total_loss(&mut g, Some(&b), None, &cfg), Err(Error::EmptyBatch("SCE"))));
        let cfg = LossConfig::unit(&[LossTerm::Nce], 1, 1).unwrap();
        let out = total_loss(&mut g, Some(&b), None, &cfg).unwrap();
        assert_abs_diff_eq!(g.value(out.total).item(), 2f64.ln(), epsilon = 1e-12);
        assert_eq!(out.terms.len(), 1);
    }

    #[test]
    fn prob_seq_validation() {
        assert!(ProbSeq::new(t(&[&[0.5, 0.5]])).is_ok());
        assert!(ProbSeq::new(t(&[&[0.5, 0.6]])).is_err());
        assert!(ProbSeq::new(t(&[&[1.5, -0.5]])).is_err());
    }
}
