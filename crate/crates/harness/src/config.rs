//! INI configuration for runs and campaigns.
//!
//! Sections: `[gen]` dataset generation, `[model]` visual widths, `[train]`
//! visual training, `[language]` language model, `[loss]` active terms and
//! weights, `[campaign]` scheduling. Unknown sections or keys are rejected.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::{Ini, Properties};
use visemekl::losses::LossTerm;
use visemekl::models::{LanguageConfig, TrainConfig, VisualConfig};
use visemekl::synth::GenConfig;

use crate::error::{HarnessError, Result};

const SECTIONS: [&str; 6] = ["gen", "model", "train", "language", "loss", "campaign"];

pub const DEFAULT_FRACTIONS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

/// Everything needed to train and evaluate one run apart from its loss terms
/// and seed.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub gen: GenConfig,
    pub visual: VisualConfig,
    pub train: TrainConfig,
    /// Fraction of silent training utterances kept per speaker.
    pub silent_fraction: f64,
    pub language: LanguageConfig,
    pub language_train: TrainConfig,
    /// Terms for a single `train` run.
    pub terms: Vec<LossTerm>,
    /// Per-term weight overrides; unlisted terms use 1.0.
    pub weights: Vec<(LossTerm, f64)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            gen: GenConfig::default(),
            visual: VisualConfig::default(),
            train: TrainConfig::visual_default(),
            silent_fraction: 1.0,
            language: LanguageConfig::default(),
            language_train: TrainConfig::language_default(),
            terms: vec![LossTerm::Nce, LossTerm::Sce],
            weights: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn weight_of(&self, term: LossTerm) -> f64 {
        self.weights.iter().find(|(t, _)| *t == term).map_or(1.0, |w| w.1)
    }

    pub fn weighted(&self, terms: &[LossTerm]) -> Vec<(LossTerm, f64)> {
        terms.iter().map(|&t| (t, self.weight_of(t))).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CampaignConfig {
    pub name: String,
    pub out_dir: PathBuf,
    pub repeats: usize,
    /// Seeds are `seed, seed + 1, ..., seed + repeats - 1`.
    pub seed: u64,
    /// Worker threads; 0 means one per logical core.
    pub workers: usize,
    /// Table rows to run, by label; `None` runs all of them.
    pub rows: Option<Vec<String>>,
    pub fractions: Vec<f64>,
    pub run: RunConfig,
}

impl CampaignConfig {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repeats as u64).map(|i| self.seed + i).collect()
    }

    pub fn dir(&self) -> PathBuf {
        self.out_dir.join(&self.name)
    }
}

struct Section<'a> {
    name: &'static str,
    props: Option<&'a Properties>,
    used: BTreeSet<String>,
}

impl<'a> Section<'a> {
    fn new(ini: &'a Ini, name: &'static str) -> Self {
        Self {
            name,
            props: ini.section(Some(name)),
            used: BTreeSet::new(),
        }
    }

    fn raw(&mut self, key: &str) -> Option<&'a str> {
        self.used.insert(key.to_string());
        self.props.and_then(|p| p.get(key)).map(str::trim)
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| HarnessError::Config(format!("[{}] {key}: cannot parse `{v}`", self.name))),
        }
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        let name = self.name;
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse().map_err(|_| HarnessError::Config(format!("[{name}] {key}: cannot parse `{s}`"))))
                    .collect()
            })
            .transpose()
    }

    /// Keys present in the file that were never read.
    fn finish(self, extra_ok: impl Fn(&str) -> bool) -> Result<()> {
        if let Some(p) = self.props {
            for (k, _) in p.iter() {
                if !self.used.contains(k) && !extra_ok(k) {
                    return Err(HarnessError::Config(format!("[{}] unknown key `{k}`", self.name)));
                }
            }
        }
        Ok(())
    }
}

fn train_section(s: &mut Section<'_>, d: TrainConfig) -> Result<TrainConfig> {
    Ok(TrainConfig {
        lr: s.get("lr", d.lr)?,
        batch_size: s.get("batch_size", d.batch_size)?,
        epochs: s.get("epochs", d.epochs)?,
        beta1: s.get("beta1", d.beta1)?,
        beta2: s.get("beta2", d.beta2)?,
        eps: s.get("eps", d.eps)?,
        lr_factor: s.get("lr_factor", d.lr_factor)?,
        patience: s.get("patience", d.patience)?,
        seed: s.get("seed", d.seed)?,
    })
}

pub fn parse_run(ini: &Ini) -> Result<RunConfig> {
    for (name, _) in ini.iter() {
        match name {
            None => {}
            Some(n) if SECTIONS.contains(&n) => {}
            Some(n) => return Err(HarnessError::Config(format!("unknown section [{n}]"))),
        }
    }
    let d = RunConfig::default();

    let mut s = Section::new(ini, "gen");
    let g = d.gen;
    let gen = GenConfig {
        train_speakers: s.get("train_speakers", g.train_speakers)?,
        val_speakers: s.get("val_speakers", g.val_speakers)?,
        test_speakers: s.get("test_speakers", g.test_speakers)?,
        reps_per_phrase: s.get("reps_per_phrase", g.reps_per_phrase)?,
        extra_normal_speakers: s.get("extra_normal_speakers", g.extra_normal_speakers)?,
        extra_normal_reps: s.get("extra_normal_reps", g.extra_normal_reps)?,
        feature_dim: s.get("feature_dim", g.feature_dim)?,
        frames_per_viseme: s.get("frames_per_viseme", g.frames_per_viseme)?,
        silent_gain: s.get("silent_gain", g.silent_gain)?,
        noise_std: s.get("noise_std", g.noise_std)?,
        speaker_offset_scale: s.get("speaker_offset_scale", g.speaker_offset_scale)?,
        prototype_scale: s.get("prototype_scale", g.prototype_scale)?,
        prototype_shared_scale: s.get("prototype_shared_scale", g.prototype_shared_scale)?,
        seed: s.get("seed", g.seed)?,
    };
    s.finish(|_| false)?;
    gen.validate()?;

    let mut s = Section::new(ini, "model");
    let v = d.visual;
    let visual = VisualConfig {
        input_dim: gen.feature_dim,
        model_dim: s.get("model_dim", v.model_dim)?,
        ff_dim: s.get("ff_dim", v.ff_dim)?,
        fc_dims: s.list("fc_dims")?.unwrap_or(v.fc_dims),
    };
    s.finish(|_| false)?;
    visual.validate()?;

    let mut s = Section::new(ini, "train");
    let train = train_section(&mut s, d.train)?;
    let silent_fraction = s.get("silent_fraction", d.silent_fraction)?;
    s.finish(|_| false)?;
    check_train(&train, "train")?;
    if !(silent_fraction > 0.0 && silent_fraction <= 1.0) {
        return Err(HarnessError::Config(format!("[train] silent_fraction must lie in (0, 1], got {silent_fraction}")));
    }

    let mut s = Section::new(ini, "language");
    let language_train = train_section(&mut s, d.language_train)?;
    let l = d.language;
    let language = LanguageConfig {
        embed_dim: s.get("embed_dim", l.embed_dim)?,
        hidden_dim: s.get("hidden_dim", l.hidden_dim)?,
        max_words: s.get("max_words", l.max_words)?,
    };
    s.finish(|_| false)?;
    check_train(&language_train, "language")?;

    let mut s = Section::new(ini, "loss");
    let terms = s.list("terms")?.unwrap_or(d.terms);
    let mut weights = Vec::new();
    for t in LossTerm::ALL {
        if let Some(w) = s.raw(&format!("weight.{}", t.name())) {
            let w: f64 = w.parse().map_err(|_| HarnessError::Config(format!("[loss] weight.{t}: cannot parse `{w}`")))?;
            if !(w > 0.0 && w.is_finite()) {
                return Err(HarnessError::Config(format!("[loss] weight.{t} must be positive")));
            }
            weights.push((t, w));
        }
    }
    s.finish(|_| false)?;

    Ok(RunConfig {
        gen,
        visual,
        train,
        silent_fraction,
        language,
        language_train,
        terms,
        weights,
    })
}

fn check_train(t: &TrainConfig, section: &str) -> Result<()> {
    t.validate().map_err(|e| HarnessError::Config(format!("[{section}] {e}")))?;
    if t.patience >= t.epochs {
        return Err(HarnessError::Config(format!("[{section}] patience must be below epochs")));
    }
    Ok(())
}

pub fn parse_campaign(ini: &Ini, base_dir: &Path) -> Result<CampaignConfig> {
    let run = parse_run(ini)?;
    let mut s = Section::new(ini, "campaign");
    let name: String = s.get("name", "campaign".to_string())?;
    if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
        return Err(HarnessError::Config(format!("[campaign] invalid name `{name}`")));
    }
    let out: PathBuf = s.get("out_dir", PathBuf::from("campaign"))?;
    let out_dir = if out.is_absolute() { out } else { base_dir.join(out) };
    let repeats = s.get("repeats", 5usize)?;
    if repeats == 0 {
        return Err(HarnessError::Config("[campaign] repeats must be at least 1".into()));
    }
    let seed = s.get("seed", 0u64)?;
    let workers = s.get("workers", 0usize)?;
    let rows = s.list::<String>("rows")?;
    let fractions = s.list::<f64>("fractions")?.unwrap_or_else(|| DEFAULT_FRACTIONS.to_vec());
    if fractions.is_empty() || fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
        return Err(HarnessError::Config("[campaign] fractions must lie in (0, 1]".into()));
    }
    s.finish(|_| false)?;
    Ok(CampaignConfig {
        name,
        out_dir,
        repeats,
        seed,
        workers,
        rows,
        fractions,
        run,
    })
}

fn load_ini(path: &Path) -> Result<Ini> {
    Ini::load_from_file(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

pub fn load_run(path: &Path) -> Result<RunConfig> {
    parse_run(&load_ini(path)?)
}

/// Relative `out_dir` values resolve against the config file's directory.
pub fn load_campaign(path: &Path) -> Result<CampaignConfig> {
    let base = path.parent().unwrap_or(Path::new("."));
    parse_campaign(&load_ini(path)?, base)
}
