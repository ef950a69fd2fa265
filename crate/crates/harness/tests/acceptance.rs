//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria 5 and 6 train the desk-scale campaigns in `configs/acceptance.ini`
//! and take several minutes on one core. The process exits non-zero on a
//! failed criterion only when `ACCEPTANCE_STRICT=1`, so that the workspace
//! test run still reports the remaining criteria. `ACCEPTANCE_ONLY=1,2,8`
//! runs a subset.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use visemekl::losses::*;
use visemekl::metrics::{edit_distance, ver};
use visemekl::models::{Checkpoint, VisualConfig, VisualModel};
use visemekl::tensor::{grad_check, Graph, Tensor, Var};
use visemekl::viseme_map::{Lexicon, VisemeClass, VisemeSequence, NUM_CLASSES, PHRASES};
use visemekl_harness::campaign::{label, run_silent_sweep, run_table_matrix, RunResult, BASELINE, FULL};
use visemekl_harness::config::{load_campaign, CampaignConfig};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("1 gradient correctness", gradients),
        ("2 loss algebra oracles", loss_algebra),
        ("3 edit distance oracle", edit_distance_oracle),
        ("4 pipeline determinism", pipeline),
        ("5 main qualitative claim", main_claim),
        ("6 silent-data sweep", sweep_claim),
        ("7 reproducibility", reproducibility),
        ("8 checkpoint round trip", checkpoint_round_trip),
    ];
    let only: Option<Vec<String>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').map(|s| s.trim().to_string()).collect());
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.iter().any(|id| name.split(' ').next() == Some(id))) {
            continue;
        }
        ran += 1;
        let v = check();
        if !v.pass {
            failed += 1;
        }
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}

// 1

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

    fn split(&self, g: &mut Graph<f64>, x: Var) -> visemekl::Result<(BatchOutput, BatchOutput)> {
        let ln = self.y_normal.len();
        let q = g.softmax_rows(x)?;
        let qn = g.slice_rows(q, 0, ln)?;
        let qs = g.slice_rows(q, ln, self.logits.rows())?;
        Ok((
            BatchOutput { probs: qn, labels: self.y_normal.clone() },
            BatchOutput { probs: qs, labels: self.y_silent.clone() },
        ))
    }

    /// Representatives at the unperturbed logits; targets carry no gradient.
    fn targets(&self) -> visemekl::Result<BatchTargets<f64>> {
        let mut g = Graph::new();
        let x = g.constant(self.logits.clone());
        let (n, s) = self.split(&mut g, x)?;
        BatchTargets::from_values(&g, Some(&n), Some(&s))
    }
}

type TermFn<'a> = Box<dyn Fn(&mut Graph<f64>, &BatchOutput, &BatchOutput) -> visemekl::Result<Var> + 'a>;

fn gradients() -> Verdict {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut run = || -> visemekl::Result<()> {
        for seed in 0..20 {
            let inst = Instance::random(seed);
            let t = inst.targets()?;
            let (rn, rs) = (t.normal.clone().unwrap(), t.silent.clone().unwrap());
            let (nn, ns) = (inst.y_normal.len(), inst.y_silent.len());
            let m = weighted_target(&rn, &rs, nn, ns)?;
            let full = LossConfig::unit(&FULL, nn, ns)?;
            let with_kl = LossConfig::unit(&[LossTerm::Nce, LossTerm::Sce, LossTerm::Kl, LossTerm::Nkl, LossTerm::Skl], nn, ns)?;
            let terms: Vec<(&str, TermFn)> = vec![
                ("NCE", Box::new(|g, n, _| cross_entropy(g, n.probs, &n.labels))),
                ("SCE", Box::new(|g, _, s| cross_entropy(g, s.probs, &s.labels))),
                ("KL", Box::new(|g, _, s| Ok(loss_kl(g, s.probs, &s.labels, &rn)?.value))),
                ("WKL", Box::new(|g, n, s| Ok(loss_wkl(g, n.probs, &n.labels, s.probs, &s.labels, &m)?.value))),
                ("NKL", Box::new(|g, n, _| Ok(loss_within_given(g, n.probs, &n.labels, &rn)?.value))),
                ("SKL", Box::new(|g, _, s| Ok(loss_within_given(g, s.probs, &s.labels, &rs)?.value))),
                ("total(full)", Box::new(|g, n, s| Ok(total_loss_with(g, Some(n), Some(s), &full, &t)?.total))),
                ("total(KL)", Box::new(|g, n, s| Ok(total_loss_with(g, Some(n), Some(s), &with_kl, &t)?.total))),
            ];
            for (name, f) in terms {
                let report = grad_check(
                    |g, x| {
                        let (n, s) = inst.split(g, x)?;
                        f(g, &n, &s)
                    },
                    &inst.logits,
                    1e-5,
                )?;
                if report.max_rel_err > worst.0 || worst.1.is_empty() {
                    worst = (report.max_rel_err, format!("{name} seed {seed}"));
                }
            }
        }
        Ok(())
    };
    if let Err(e) = run() {
        return verdict(false, format!("error: {e}"));
    }
    let elapsed = start.elapsed();
    verdict(
        worst.0 < 1e-4 && elapsed < Duration::from_secs(10),
        format!("max rel err {:.2e} ({}), {:.2}s", worst.0, worst.1, elapsed.as_secs_f64()),
    )
}

// 2

fn random_simplex(rng: &mut ChaCha8Rng, rows: usize) -> Tensor<f64> {
    let mut t = Tensor::matrix(rows, NUM_CLASSES, (0..rows * NUM_CLASSES).map(|_| rng.gen_range(0.001..1.0)).collect()).unwrap();
    for r in 0..rows {
        let s: f64 = t.row(r).iter().sum();
        t.row_mut(r).iter_mut().for_each(|x| *x /= s);
    }
    t
}

fn kl_value(p: &Tensor<f64>, q: &Tensor<f64>) -> visemekl::Result<f64> {
    let mut g = Graph::new();
    let qv = g.constant(q.clone());
    let v = kl_seq(&mut g, &TargetSeq::from_rows(p.clone()), qv)?;
    Ok(g.value(v).item())
}

fn loss_algebra() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let run = |rng: &mut ChaCha8Rng| -> visemekl::Result<(bool, f64, f64, f64)> {
        let mut exact = true;
        for _ in 0..200 {
            let l = rng.gen_range(1..10);
            let q = random_simplex(rng, l);
            let labels: Vec<usize> = (0..l).map(|_| rng.gen_range(0..NUM_CLASSES)).collect();
            let set = representative_distributions(&q, &labels)?;
            for c in 0..NUM_CLASSES {
                let rows: Vec<usize> = (0..l).filter(|&i| labels[i] == c).collect();
                exact &= set.is_present(c) == !rows.is_empty();
                if let Some(rep) = set.rep(c) {
                    for (k, &v) in rep.iter().enumerate() {
                        let mut acc = 0.0;
                        for &i in &rows {
                            acc += q.get(i, k);
                        }
                        exact &= v == acc / rows.len() as f64;
                    }
                }
            }
        }
        let (mut min_kl, mut max_self) = (f64::INFINITY, 0.0f64);
        for _ in 0..1000 {
            let l = rng.gen_range(1..6);
            let p = random_simplex(rng, l);
            let q = random_simplex(rng, l);
            min_kl = min_kl.min(kl_value(&p, &q)?);
            max_self = max_self.max(kl_value(&p, &p)?.abs());
        }
        let mut limit = 0.0f64;
        for _ in 0..20 {
            let labels: Vec<usize> = (0..NUM_CLASSES).collect();
            let sn = representative_distributions(&random_simplex(rng, NUM_CLASSES), &labels)?;
            let ss = representative_distributions(&random_simplex(rng, NUM_CLASSES), &labels)?;
            let m = weighted_target(&sn, &ss, 1_000_000_000, 1)?;
            for c in 0..NUM_CLASSES {
                for (a, b) in m.rep(c).unwrap().iter().zip(sn.rep(c).unwrap()) {
                    limit = limit.max((a - b).abs());
                }
            }
        }
        Ok((exact, min_kl, max_self, limit))
    };
    match run(&mut rng) {
        Ok((exact, min_kl, max_self, limit)) => verdict(
            exact && min_kl >= 0.0 && max_self < 1e-9 && limit < 1e-8,
            format!("brute force exact {exact}, min KL {min_kl:.3e}, max D(P||P) {max_self:.1e}, limit {limit:.1e}"),
        ),
        Err(e) => verdict(false, format!("error: {e}")),
    }
}

// 3

/// Minimum cost over every edit script, enumerated without memoisation.
fn script_cost(a: &[u8], b: &[u8]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let keep = script_cost(ra, rb) + usize::from(x != y);
            let delete = script_cost(ra, b) + 1;
            let insert = script_cost(a, rb) + 1;
            keep.min(delete).min(insert)
        }
    }
}

fn edit_distance_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..500 {
        let seq = |rng: &mut ChaCha8Rng| -> Vec<u8> { (0..rng.gen_range(0..=6)).map(|_| rng.gen_range(0..4)).collect() };
        let a = seq(&mut rng);
        let b = seq(&mut rng);
        if edit_distance(&a, &b).errors() != script_cost(&a, &b) {
            mismatches += 1;
        }
    }
    let ids = |v: &[usize]| VisemeSequence::from_ids(v).unwrap();
    let hand = [
        (ver(&[ids(&[14, 0, 1, 2, 15])], &[ids(&[14, 0, 5, 2, 15])]), 1.0 / 3.0),
        (ver(&[ids(&[0, 1, 2])], &[ids(&[0, 1, 2])]), 0.0),
        (ver(&[ids(&[0, 1, 2])], &[ids(&[0, 2])]), 1.0 / 3.0),
        (ver(&[ids(&[0, 1, 2])], &[ids(&[0, 1, 3, 2])]), 1.0 / 3.0),
    ];
    let hand_ok = hand.iter().all(|(got, want)| matches!(got, Ok(v) if v == want));
    verdict(mismatches == 0 && hand_ok, format!("{mismatches} of 500 pairs differ, hand cases exact {hand_ok}"))
}

// 4

fn pipeline() -> Verdict {
    let lex = Lexicon::bundled();
    let encode_all = || PHRASES.iter().map(|p| lex.encode(p)).collect::<visemekl::Result<Vec<_>>>();
    let (first, second) = match (encode_all(), encode_all()) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return verdict(false, format!("error: {e}")),
    };
    let framed = first.iter().all(|s| {
        let l = s.labels();
        l.len() > 2 && l[0] == VisemeClass::SOS && l[l.len() - 1] == VisemeClass::EOS && l[1..l.len() - 1].iter().all(|c| c.id() <= 13)
    });
    let max_id = first.iter().flat_map(|s| s.labels()[1..s.len() - 1].iter().map(|c| c.id())).max().unwrap_or(0);
    verdict(
        first == second && framed,
        format!("{} phrases, deterministic {}, content ids <= {max_id}", first.len(), first == second),
    )
}

// 5 and 6

fn acceptance_config(name: &str) -> CampaignConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance.ini");
    let mut c = load_campaign(&path).expect("configs/acceptance.ini");
    c.name = name.into();
    c.out_dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    c
}

/// Mean of `f` over successful runs of one loss combination and fraction.
fn mean_of(results: &[RunResult], terms: &[LossTerm], fraction: f64, f: impl Fn(&RunResult) -> Option<f64>) -> Option<f64> {
    let want = label(terms);
    let xs: Vec<f64> = results
        .iter()
        .filter(|r| r.spec == want && r.silent_fraction == fraction)
        .filter_map(f)
        .collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn silent(r: &RunResult) -> Option<f64> {
    r.outcome.as_ref().ok().map(|o| o.ver_silent)
}

fn normal(r: &RunResult) -> Option<f64> {
    r.outcome.as_ref().ok().map(|o| o.ver_normal)
}

fn main_claim() -> Verdict {
    let c = acceptance_config("acceptance-table");
    let start = Instant::now();
    let out = match run_table_matrix(&c) {
        Ok(o) => o,
        Err(e) => return verdict(false, format!("error: {e}")),
    };
    let elapsed = start.elapsed();
    let r = &out.results;
    let nce = [LossTerm::Nce];
    let (Some(base_s), Some(full_s), Some(base_n), Some(nce_s), Some(nce_n)) = (
        mean_of(r, &BASELINE, 1.0, silent),
        mean_of(r, &FULL, 1.0, silent),
        mean_of(r, &BASELINE, 1.0, normal),
        mean_of(r, &nce, 1.0, silent),
        mean_of(r, &nce, 1.0, normal),
    ) else {
        return verdict(false, format!("{} failed runs", out.failures));
    };
    let reduction = (base_s - full_s) / base_s;
    // Gap is silent minus normal: positive when silent speech is harder.
    let gap_nce = nce_s - nce_n;
    let gap_base = base_s - base_n;
    verdict(
        out.failures == 0 && reduction >= 0.10 && gap_nce > gap_base && elapsed < Duration::from_secs(20 * 60),
        format!(
            "silent VER baseline {base_s:.4} full {full_s:.4} (reduction {:.1}%); gap NCE {gap_nce:+.4} baseline {gap_base:+.4}; {:.0}s",
            100.0 * reduction,
            elapsed.as_secs_f64()
        ),
    )
}

fn sweep_claim() -> Verdict {
    let c = acceptance_config("acceptance-sweep");
    let out = match run_silent_sweep(&c) {
        Ok(o) => o,
        Err(e) => return verdict(false, format!("error: {e}")),
    };
    let mut wins = 0;
    let mut cells = Vec::new();
    for &f in &c.fractions {
        match (mean_of(&out.results, &BASELINE, f, silent), mean_of(&out.results, &FULL, f, silent)) {
            (Some(b), Some(full)) => {
                if full <= b {
                    wins += 1;
                }
                cells.push(format!("{f}: {full:.4}/{b:.4}"));
            }
            _ => cells.push(format!("{f}: failed")),
        }
    }
    verdict(
        wins >= 4 && c.fractions.len() == 5,
        format!("full <= baseline at {wins} of {} fractions (full/baseline {})", c.fractions.len(), cells.join(", ")),
    )
}

// 7

fn reproducibility() -> Verdict {
    let read = |dir: &Path, kind: &str| -> std::io::Result<(Vec<u8>, Vec<u8>)> {
        Ok((std::fs::read(dir.join(format!("{kind}.csv")))?, std::fs::read(dir.join(format!("{kind}.md")))?))
    };
    let mut details = Vec::new();
    let mut pass = true;
    for sweep in [false, true] {
        let mut reports = Vec::new();
        for i in 0..2 {
            let mut c = acceptance_config(&format!("repro-{}-{i}", if sweep { "sweep" } else { "table" }));
            c.repeats = 2;
            c.run.train.epochs = 6;
            c.run.language_train.epochs = 6;
            c.rows = Some(vec!["NCE+SCE".into(), label(&FULL)]);
            c.fractions = vec![0.4, 1.0];
            let out = if sweep { run_silent_sweep(&c) } else { run_table_matrix(&c) };
            let kind = if sweep { "sweep" } else { "table" };
            match out.map_err(|e| e.to_string()).and_then(|o| read(&o.dir, kind).map_err(|e| e.to_string())) {
                Ok(r) => reports.push(r),
                Err(e) => return verdict(false, format!("error: {e}")),
            }
        }
        let same = reports[0] == reports[1];
        pass &= same;
        details.push(format!("{} reports identical: {same}", if sweep { "sweep" } else { "table" }));
    }
    verdict(pass, details.join(", "))
}

// 8

fn checkpoint_round_trip() -> Verdict {
    let run = || -> visemekl::Result<usize> {
        let model = VisualModel::<f64>::new(VisualConfig::default(), 8)?;
        let dir = tempfile::tempdir().map_err(|e| visemekl::Error::Checkpoint(e.to_string()))?;
        let path = dir.path().join("visual.bin");
        model.to_checkpoint().save(&path)?;
        let loaded = VisualModel::<f64>::from_checkpoint(&Checkpoint::load(&path)?)?;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut identical = 0;
        for _ in 0..10 {
            let len = rng.gen_range(3..20);
            let frames = 3 * len;
            let x = Tensor::matrix(frames, 8, (0..frames * 8).map(|_| rng.gen_range(-3.0..3.0)).collect())?;
            let a = model.forward(&x, len)?;
            let b = loaded.forward(&x, len)?;
            let bits = |p: &ProbSeq<f64>| p.tensor().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            if bits(&a) == bits(&b) {
                identical += 1;
            }
        }
        Ok(identical)
    };
    match run() {
        Ok(n) => verdict(n == 10, format!("{n} of 10 forwards bitwise identical")),
        Err(e) => verdict(false, format!("error: {e}")),
    }
}
