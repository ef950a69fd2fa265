//! Every loss term and the total loss against central finite differences,
//! taken with respect to pre-softmax logits. Batch representatives are held
//! at their values for the unperturbed logits, matching the inert targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use visemekl::losses::*;
use visemekl::tensor::{grad_check, Graph, Tensor, Var};
use visemekl::viseme_map::NUM_CLASSES;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

struct Instance {
    logits: Tensor<f64>,
    y_normal: Vec<usize>,
    y_silent: Vec<usize>,
}

impl Instance {
    fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ln = rng.gen_range(2..=6);
        let ls = rng.gen_range(2..=6);
        // Mostly content classes from a small pool so classes repeat and
        // overlap across speech types; occasionally a special token.
        let label = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.15) { rng.gen_range(13..NUM_CLASSES) } else { rng.gen_range(0..5) };
        let y_normal = (0..ln).map(|_| label(&mut rng)).collect();
        let y_silent = (0..ls).map(|_| label(&mut rng)).collect();
        let data = (0..(ln + ls) * NUM_CLASSES).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Self {
            logits: Tensor::matrix(ln + ls, NUM_CLASSES, data).unwrap(),
            y_normal,
            y_silent,
        }
    }

    fn split(&self, g: &mut Graph<f64>, x: Var) -> (BatchOutput, BatchOutput) {
        let ln = self.y_normal.len();
        let q = g.softmax_rows(x).unwrap();
        let qn = g.slice_rows(q, 0, ln).unwrap();
        let qs = g.slice_rows(q, ln, self.logits.rows()).unwrap();
        (
            BatchOutput { probs: qn, labels: self.y_normal.clone() },
            BatchOutput { probs: qs, labels: self.y_silent.clone() },
        )
    }

    fn frozen_targets(&self) -> BatchTargets<f64> {
        let mut g = Graph::new();
        let x = g.constant(self.logits.clone());
        let (n, s) = self.split(&mut g, x);
        BatchTargets::from_values(&g, Some(&n), Some(&s)).unwrap()
    }

    fn n_n(&self) -> usize {
        self.y_normal.len()
    }

    fn n_s(&self) -> usize {
        self.y_silent.len()
    }
}

fn check(name: &str, inst: &Instance, mut f: impl FnMut(&mut Graph<f64>, &BatchOutput, &BatchOutput) -> visemekl::Result<Var>) {
    let report = grad_check(
        |g, x| {
            let (n, s) = inst.split(g, x);
            f(g, &n, &s)
        },
        &inst.logits,
        H,
    )
    .unwrap();
    assert!(report.max_rel_err < TOL, "{name}: {report:?}");
}

#[test]
fn every_term_matches_finite_differences() {
    for seed in 0..20 {
        let inst = Instance::random(seed);
        let t = inst.frozen_targets();
        let (rn, rs) = (t.normal.clone().unwrap(), t.silent.clone().unwrap());
        let m = weighted_target(&rn, &rs, inst.n_n(), inst.n_s()).unwrap();

        check("NCE", &inst, |g, n, _| cross_entropy(g, n.probs, &n.labels));
        check("SCE", &inst, |g, _, s| cross_entropy(g, s.probs, &s.labels));
        check("KL", &inst, |g, _, s| Ok(loss_kl(g, s.probs, &s.labels, &rn)?.value));
        check("WKL", &inst, |g, n, s| Ok(loss_wkl(g, n.probs, &n.labels, s.probs, &s.labels, &m)?.value));
        check("NKL", &inst, |g, n, _| Ok(loss_within_given(g, n.probs, &n.labels, &rn)?.value));
        check("SKL", &inst, |g, _, s| Ok(loss_within_given(g, s.probs, &s.labels, &rs)?.value));

        for terms in [
            &[LossTerm::Nce, LossTerm::Sce, LossTerm::Wkl, LossTerm::Nkl, LossTerm::Skl][..],
            &[LossTerm::Nce, LossTerm::Sce, LossTerm::Kl, LossTerm::Nkl][..],
        ] {
            let weighted: Vec<_> = terms.iter().enumerate().map(|(i, &t)| (t, 0.5 + i as f64 * 0.25)).collect();
            let cfg = LossConfig::new(&weighted, inst.n_n(), inst.n_s()).unwrap();
            check("total", &inst, |g, n, s| Ok(total_loss_with(g, Some(n), Some(s), &cfg, &t)?.total));
        }
    }
}

#[test]
fn frozen_targets_match_live_total() {
    let inst = Instance::random(99);
    let cfg = LossConfig::unit(&[LossTerm::Nce, LossTerm::Sce, LossTerm::Wkl, LossTerm::Nkl, LossTerm::Skl], 3, 2).unwrap();
    let mut g = Graph::new();
    let x = g.constant(inst.logits.clone());
    let (n, s) = inst.split(&mut g, x);
    let live = total_loss(&mut g, Some(&n), Some(&s), &cfg).unwrap();
    let frozen = total_loss_with(&mut g, Some(&n), Some(&s), &cfg, &inst.frozen_targets()).unwrap();
    assert_eq!(g.value(live.total).item(), g.value(frozen.total).item());
}
