//! Training runs, the loss ablation matrix and the silent-data sweep.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use visemekl::losses::{LossConfig, LossTerm};
use visemekl::metrics::{ver, wer};
use visemekl::models::{
    predict_visemes, train_language, train_visual, DecodeMode, EpochLog, LanguageModel, LanguagePair, TrainConfig, VisualModel, Vocabulary,
};
use visemekl::synth::{gen_dataset, reduce_silent, Dataset, SpeechType, Utterance};
use visemekl::viseme_map::{Lexicon, VisemeSequence, PHRASES};

use crate::config::{CampaignConfig, RunConfig};
use crate::error::{HarnessError, Result};
use crate::report::{self, CampaignKind};

use LossTerm::{Kl, Nce, Nkl, Sce, Skl, Wkl};

pub const BASELINE: [LossTerm; 2] = [Nce, Sce];
pub const FULL: [LossTerm; 5] = [Nce, Sce, Wkl, Nkl, Skl];

/// The thirteen loss combinations of the ablation table, in row order.
pub fn table_rows() -> Vec<Vec<LossTerm>> {
    let mut rows = vec![vec![Nce]];
    for cross in [None, Some(Kl), Some(Wkl)] {
        let extras: [&[LossTerm]; 4] = [&[], &[Nkl], &[Skl], &[Nkl, Skl]];
        for extra in extras {
            let mut row = BASELINE.to_vec();
            row.extend(cross);
            row.extend_from_slice(extra);
            rows.push(row);
        }
    }
    rows
}

pub fn label(terms: &[LossTerm]) -> String {
    let mut sorted = terms.to_vec();
    sorted.sort();
    sorted.dedup();
    sorted.iter().map(|t| t.name()).collect::<Vec<_>>().join("+")
}

/// One loss combination at one silent-data fraction, repeated over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub terms: Vec<(LossTerm, f64)>,
    pub silent_fraction: f64,
    pub seeds: Vec<u64>,
}

impl ExperimentSpec {
    pub fn new(terms: &[(LossTerm, f64)], silent_fraction: f64, seeds: Vec<u64>) -> Self {
        let plain: Vec<LossTerm> = terms.iter().map(|t| t.0).collect();
        Self {
            name: label(&plain),
            terms: terms.to_vec(),
            silent_fraction,
            seeds,
        }
    }

    pub fn label(&self) -> String {
        label(&self.terms.iter().map(|t| t.0).collect::<Vec<_>>())
    }

    /// Directory name: lowercase label, plus the fraction when below 1.
    pub fn dir_name(&self) -> String {
        let base = self.name.to_lowercase().replace('+', "_");
        if self.silent_fraction < 1.0 {
            format!("{base}-f{}", self.silent_fraction)
        } else {
            base
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rates {
    pub ver_normal: f64,
    pub ver_silent: f64,
    pub wer_normal: Option<f64>,
    pub wer_silent: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub spec: String,
    pub silent_fraction: f64,
    pub seed: u64,
    /// `Err` holds the failure message.
    pub outcome: std::result::Result<Rates, String>,
    pub best_epoch: usize,
    pub n_normal: usize,
    pub n_silent: usize,
    pub epochs: Vec<EpochLog>,
    pub wall_time_s: f64,
}

/// A trained visual run before language-model scoring.
pub struct VisualRun {
    pub result: RunResult,
    pub model: Option<VisualModel<f64>>,
    pub hyps_normal: Vec<VisemeSequence>,
    pub hyps_silent: Vec<VisemeSequence>,
}

pub fn generate(cfg: &RunConfig) -> Result<Dataset<f64>> {
    Ok(gen_dataset(&cfg.gen, &Lexicon::bundled())?)
}

fn test_split(ds: &Dataset<f64>, ty: SpeechType) -> Vec<&Utterance<f64>> {
    Dataset::split_by_type(&ds.test, ty)
}

/// Trains and scores one visual model. Failures are captured in the result.
pub fn run_visual(cfg: &RunConfig, dataset: &Dataset<f64>, spec: &ExperimentSpec, seed: u64) -> VisualRun {
    let start = Instant::now();
    let mut result = RunResult {
        spec: spec.name.clone(),
        silent_fraction: spec.silent_fraction,
        seed,
        outcome: Err(String::new()),
        best_epoch: 0,
        n_normal: 0,
        n_silent: 0,
        epochs: Vec::new(),
        wall_time_s: 0.0,
    };
    let mut run = || -> visemekl::Result<(VisualModel<f64>, Vec<VisemeSequence>, Vec<VisemeSequence>)> {
        let reduced;
        let ds = if spec.silent_fraction < 1.0 {
            reduced = reduce_silent(dataset, spec.silent_fraction, seed)?;
            &reduced
        } else {
            dataset
        };
        result.n_normal = ds.count(&ds.train, SpeechType::Normal);
        result.n_silent = ds.count(&ds.train, SpeechType::Silent);
        let loss = LossConfig::new(&spec.terms, result.n_normal, result.n_silent)?;
        let mut model = VisualModel::new(cfg.visual.clone(), seed)?;
        let train: Vec<_> = ds.train.iter().collect();
        let val: Vec<_> = ds.val.iter().collect();
        let tc = TrainConfig { seed, ..cfg.train.clone() };
        let report = train_visual(&mut model, &train, &val, &loss, &tc)?;
        result.best_epoch = report.best_epoch;
        result.epochs = report.epochs;
        let fpv = cfg.gen.frames_per_viseme;
        let hn = predict_visemes(&model, &test_split(ds, SpeechType::Normal), fpv)?;
        let hs = predict_visemes(&model, &test_split(ds, SpeechType::Silent), fpv)?;
        Ok((model, hn, hs))
    };
    let out = run();
    let mut vr = VisualRun {
        result,
        model: None,
        hyps_normal: Vec::new(),
        hyps_silent: Vec::new(),
    };
    match out {
        Ok((model, hn, hs)) => {
            let refs = |ty| test_split(dataset, ty).iter().map(|u| u.labels.clone()).collect::<Vec<_>>();
            let rates = ver(&refs(SpeechType::Normal), &hn).and_then(|vn| {
                Ok(Rates {
                    ver_normal: vn,
                    ver_silent: ver(&refs(SpeechType::Silent), &hs)?,
                    wer_normal: None,
                    wer_silent: None,
                })
            });
            vr.result.outcome = rates.map_err(|e| e.to_string());
            vr.model = Some(model);
            vr.hyps_normal = hn;
            vr.hyps_silent = hs;
        }
        Err(e) => vr.result.outcome = Err(e.to_string()),
    }
    vr.result.wall_time_s = start.elapsed().as_secs_f64();
    vr
}

/// Trains the language model on a visual model's predictions for the
/// normal-speech train and validation utterances.
pub fn fit_language(cfg: &RunConfig, dataset: &Dataset<f64>, visual: &VisualModel<f64>) -> Result<LanguageModel<f64>> {
    let vocab = Vocabulary::from_phrases(&PHRASES);
    let fpv = cfg.gen.frames_per_viseme;
    let pairs = |split: &[Utterance<f64>]| -> Result<Vec<LanguagePair>> {
        let utts = Dataset::split_by_type(split, SpeechType::Normal);
        let hyps = predict_visemes(visual, &utts, fpv)?;
        Ok(hyps
            .iter()
            .zip(&utts)
            .map(|(h, u)| LanguagePair::new(h, &u.text, &vocab))
            .collect::<visemekl::Result<Vec<_>>>()?)
    };
    let train = pairs(&dataset.train)?;
    let val = pairs(&dataset.val)?;
    let mut lm = LanguageModel::new(cfg.language.clone(), vocab.clone(), cfg.language_train.seed)?;
    train_language(&mut lm, &train, &val, &cfg.language_train)?;
    Ok(lm)
}

fn decode_words(lm: &LanguageModel<f64>, hyps: &[VisemeSequence]) -> visemekl::Result<Vec<Vec<String>>> {
    hyps.iter()
        .map(|h| {
            if h.is_empty() {
                Ok(Vec::new())
            } else {
                lm.forward(&h.ids(), &DecodeMode::Greedy).map(|o| o.words)
            }
        })
        .collect()
}

/// Fills in word error rates for a finished visual run.
pub fn score_words(lm: &LanguageModel<f64>, dataset: &Dataset<f64>, run: &mut VisualRun) {
    let Ok(rates) = &mut run.result.outcome else {
        return;
    };
    let refs = |ty| test_split(dataset, ty).iter().map(|u| u.words()).collect::<Vec<_>>();
    let scored = decode_words(lm, &run.hyps_normal)
        .and_then(|hn| wer(&refs(SpeechType::Normal), &hn))
        .and_then(|wn| Ok((wn, wer(&refs(SpeechType::Silent), &decode_words(lm, &run.hyps_silent)?)?)));
    match scored {
        Ok((wn, ws)) => {
            rates.wer_normal = Some(wn);
            rates.wer_silent = Some(ws);
        }
        Err(e) => run.result.outcome = Err(format!("language decoding: {e}")),
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))
}

/// Runs every spec and seed on the worker pool, trains the language model
/// once on the baseline, and scores words for all runs.
pub fn run_specs(cfg: &RunConfig, dataset: &Dataset<f64>, specs: &[ExperimentSpec], workers: usize) -> Result<(Vec<VisualRun>, Option<LanguageModel<f64>>)> {
    let jobs: Vec<(&ExperimentSpec, u64)> = specs.iter().flat_map(|s| s.seeds.iter().map(move |&seed| (s, seed))).collect();
    let pool = pool(workers)?;
    let mut runs: Vec<VisualRun> = pool.install(|| jobs.par_iter().map(|(spec, seed)| run_visual(cfg, dataset, spec, *seed)).collect());

    let baseline_label = label(&BASELINE);
    let base_pos = jobs
        .iter()
        .position(|(s, _)| s.label() == baseline_label && s.silent_fraction == 1.0);
    let extra;
    let base_model = match base_pos.and_then(|i| runs[i].model.as_ref()) {
        Some(m) => Some(m),
        None => {
            let seed = specs.first().and_then(|s| s.seeds.first().copied()).unwrap_or(0);
            let spec = ExperimentSpec::new(&cfg.weighted(&BASELINE), 1.0, vec![seed]);
            extra = run_visual(cfg, dataset, &spec, seed);
            extra.model.as_ref()
        }
    };
    let lm = match base_model {
        Some(m) => Some(fit_language(cfg, dataset, m)?),
        None => None,
    };
    if let Some(lm) = &lm {
        pool.install(|| runs.par_iter_mut().for_each(|r| score_words(lm, dataset, r)));
    } else {
        for r in &mut runs {
            if r.result.outcome.is_ok() {
                r.result.outcome = Err("baseline model for the language model failed".into());
            }
        }
    }
    Ok((runs, lm))
}

pub fn table_specs(c: &CampaignConfig) -> Result<Vec<ExperimentSpec>> {
    let all: Vec<ExperimentSpec> = table_rows()
        .iter()
        .map(|r| ExperimentSpec::new(&c.run.weighted(r), 1.0, c.seeds()))
        .collect();
    match &c.rows {
        None => Ok(all),
        Some(wanted) => wanted
            .iter()
            .map(|w| {
                let terms: Vec<LossTerm> = w.split('+').map(str::parse).collect::<visemekl::Result<_>>()?;
                let l = label(&terms);
                all.iter()
                    .find(|s| s.name == l)
                    .cloned()
                    .ok_or_else(|| HarnessError::Config(format!("[campaign] `{w}` is not a table row")))
            })
            .collect(),
    }
}

pub fn sweep_specs(c: &CampaignConfig) -> Vec<ExperimentSpec> {
    c.fractions
        .iter()
        .flat_map(|&f| [BASELINE.to_vec(), FULL.to_vec()].map(|t| ExperimentSpec::new(&c.run.weighted(&t), f, c.seeds())))
        .collect()
}

#[derive(Debug)]
pub struct CampaignOutcome {
    pub dir: PathBuf,
    pub results: Vec<RunResult>,
    pub failures: usize,
}

pub fn run_table_matrix(c: &CampaignConfig) -> Result<CampaignOutcome> {
    run_campaign(c, table_specs(c)?, CampaignKind::Table)
}

pub fn run_silent_sweep(c: &CampaignConfig) -> Result<CampaignOutcome> {
    run_campaign(c, sweep_specs(c), CampaignKind::Sweep)
}

fn run_campaign(c: &CampaignConfig, specs: Vec<ExperimentSpec>, kind: CampaignKind) -> Result<CampaignOutcome> {
    let dir = c.dir();
    fs::create_dir_all(&dir)?;
    let dataset = generate(&c.run)?;
    let (runs, lm) = run_specs(&c.run, &dataset, &specs, c.workers)?;
    if let Some(lm) = &lm {
        lm.to_checkpoint().save(&dir.join("language.bin"))?;
    }
    let mut results = Vec::with_capacity(runs.len());
    let jobs = specs.iter().flat_map(|s| s.seeds.iter().map(move |_| s));
    for (order, (run, spec)) in runs.into_iter().zip(jobs).enumerate() {
        let run_dir = dir.join(spec.dir_name()).join(run.result.seed.to_string());
        write_run(&run_dir, &run, order)?;
        results.push(run.result);
    }
    report::write_reports(&dir, kind, &results)?;
    let failures = results.iter().filter(|r| r.outcome.is_err()).count();
    Ok(CampaignOutcome { dir, results, failures })
}

/// Writes `result.csv`, `epochs.csv` and, for successful runs,
/// `checkpoint.bin`.
pub fn write_run(dir: &Path, run: &VisualRun, order: usize) -> Result<()> {
    fs::create_dir_all(dir)?;
    report::write_result_csv(&dir.join("result.csv"), &run.result, order)?;
    report::write_epochs_csv(&dir.join("epochs.csv"), &run.result.epochs)?;
    if let Some(m) = &run.model {
        let mut ck = m.to_checkpoint();
        ck.metadata.insert("spec".into(), run.result.spec.clone());
        ck.metadata.insert("seed".into(), run.result.seed.to_string());
        ck.save(&dir.join("checkpoint.bin"))?;
    }
    Ok(())
}
