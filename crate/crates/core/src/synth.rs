//! Paired normal/silent synthetic utterances over the phrase inventory.
//!
//! Every class has a fixed random prototype vector: a component shared by all
//! classes (the resting mouth shape) plus a class-specific deviation. A frame
//! of a normal utterance is `prototype + speaker offset + noise`; a silent
//! frame scales the prototype by a gain `γ > 1` before adding the same
//! speaker offset and fresh noise, mimicking the exaggerated articulation of
//! mouthed speech.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::viseme_map::{Lexicon, VisemeSequence, NUM_CLASSES, PHRASES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SpeechType {
    Normal,
    Silent,
}

impl SpeechType {
    pub fn name(self) -> &'static str {
        match self {
            Self::Normal => "normal",
            Self::Silent => "silent",
        }
    }
}

impl fmt::Display for SpeechType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SpeechType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Self::Normal),
            "silent" => Ok(Self::Silent),
            other => Err(Error::Config(format!("unknown speech type `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance<T> {
    pub id: String,
    pub speaker_id: u32,
    pub speech_type: SpeechType,
    pub text: String,
    /// `T x D` frame features.
    pub frames: Tensor<T>,
    pub labels: VisemeSequence,
}

impl<T: Scalar> Utterance<T> {
    pub fn words(&self) -> Vec<String> {
        self.text.split_whitespace().map(str::to_string).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub train_speakers: usize,
    pub val_speakers: usize,
    pub test_speakers: usize,
    /// Repetitions of each phrase per speaker and speech type.
    pub reps_per_phrase: usize,
    /// Additional normal-only training speakers.
    pub extra_normal_speakers: usize,
    pub extra_normal_reps: usize,
    pub feature_dim: usize,
    pub frames_per_viseme: usize,
    pub silent_gain: f64,
    pub noise_std: f64,
    pub speaker_offset_scale: f64,
    /// Std of the class-specific part of each prototype.
    pub prototype_scale: f64,
    /// Std of the part of the prototype shared by all classes.
    pub prototype_shared_scale: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            train_speakers: 20,
            val_speakers: 8,
            test_speakers: 11,
            reps_per_phrase: 5,
            extra_normal_speakers: 0,
            extra_normal_reps: 3,
            feature_dim: 8,
            frames_per_viseme: 3,
            silent_gain: 1.5,
            noise_std: 0.3,
            speaker_offset_scale: 0.5,
            prototype_scale: 1.0,
            prototype_shared_scale: 2.0,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.train_speakers == 0 || self.val_speakers == 0 || self.test_speakers == 0 {
            return bad("every split needs at least one speaker");
        }
        if self.reps_per_phrase == 0 {
            return bad("reps_per_phrase must be positive");
        }
        if self.feature_dim == 0 || self.frames_per_viseme == 0 {
            return bad("feature_dim and frames_per_viseme must be positive");
        }
        if !(self.silent_gain > 0.0) || self.noise_std < 0.0 || self.speaker_offset_scale < 0.0 || !(self.prototype_scale > 0.0) || self.prototype_shared_scale < 0.0 {
            return bad("gain and prototype scale must be positive; noise, offsets and shared scale non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub train: Vec<Utterance<T>>,
    pub val: Vec<Utterance<T>>,
    pub test: Vec<Utterance<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn count(&self, split: &[Utterance<T>], ty: SpeechType) -> usize {
        split.iter().filter(|u| u.speech_type == ty).count()
    }

    pub fn split_by_type(split: &[Utterance<T>], ty: SpeechType) -> Vec<&Utterance<T>> {
        split.iter().filter(|u| u.speech_type == ty).collect()
    }
}

/// Class prototypes, drawn from their own stream so they do not depend on
/// split sizes.
pub fn prototypes(cfg: &GenConfig) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let shared_dist = Normal::new(0.0, cfg.prototype_shared_scale).expect("non-negative scale");
    let shared: Vec<f64> = (0..cfg.feature_dim).map(|_| shared_dist.sample(&mut rng)).collect();
    let dist = Normal::new(0.0, cfg.prototype_scale).expect("positive scale");
    (0..NUM_CLASSES)
        .map(|_| shared.iter().map(|m| m + dist.sample(&mut rng)).collect())
        .collect()
}

pub fn gen_dataset<T: Scalar>(cfg: &GenConfig, lexicon: &Lexicon) -> Result<Dataset<T>> {
    cfg.validate()?;
    let protos = prototypes(cfg);
    let labels: Vec<VisemeSequence> = PHRASES.iter().map(|p| lexicon.encode(p)).collect::<Result<_>>()?;

    let mut offset_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    offset_rng.set_stream(2);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(3);
    let offset_dist = Normal::new(0.0, cfg.speaker_offset_scale).expect("non-negative scale");
    let noise_dist = Normal::new(0.0, cfg.noise_std).expect("non-negative std");

    let mut next_speaker = 0u32;
    let mut make_split = |name: &str, speakers: usize, reps: usize, types: &[SpeechType]| -> Vec<Utterance<T>> {
        let mut out = Vec::new();
        for _ in 0..speakers {
            let speaker = next_speaker;
            next_speaker += 1;
            let offset: Vec<f64> = (0..cfg.feature_dim).map(|_| offset_dist.sample(&mut offset_rng)).collect();
            for &ty in types {
                let gain = match ty {
                    SpeechType::Normal => 1.0,
                    SpeechType::Silent => cfg.silent_gain,
                };
                for (p, phrase) in PHRASES.iter().enumerate() {
                    for rep in 0..reps {
                        let seq = &labels[p];
                        let mut data = Vec::with_capacity(seq.len() * cfg.frames_per_viseme * cfg.feature_dim);
                        for class in seq.labels() {
                            let proto = &protos[class.id()];
                            for _ in 0..cfg.frames_per_viseme {
                                for d in 0..cfg.feature_dim {
                                    let x = gain * proto[d] + offset[d] + noise_dist.sample(&mut noise_rng);
                                    data.push(T::lit(x));
                                }
                            }
                        }
                        let frames = Tensor::matrix(seq.len() * cfg.frames_per_viseme, cfg.feature_dim, data)
                            .expect("frame count matches labels");
                        out.push(Utterance {
                            id: format!("{name}-s{speaker:03}-{ty}-p{p:02}-r{rep}"),
                            speaker_id: speaker,
                            speech_type: ty,
                            text: phrase.to_string(),
                            frames,
                            labels: seq.clone(),
                        });
                    }
                }
            }
        }
        out
    };

    let both = [SpeechType::Normal, SpeechType::Silent];
    let mut train = make_split("train", cfg.train_speakers, cfg.reps_per_phrase, &both);
    let val = make_split("val", cfg.val_speakers, cfg.reps_per_phrase, &both);
    let test = make_split("test", cfg.test_speakers, cfg.reps_per_phrase, &both);
    if cfg.extra_normal_speakers > 0 && cfg.extra_normal_reps > 0 {
        train.extend(make_split("extra", cfg.extra_normal_speakers, cfg.extra_normal_reps, &[SpeechType::Normal]));
    }
    Ok(Dataset { train, val, test })
}

/// Keeps `round(fraction * n)` (at least one) of each training speaker's
/// silent utterances, chosen by a seeded shuffle. Other data is untouched.
pub fn reduce_silent<T: Scalar>(dataset: &Dataset<T>, fraction: f64, seed: u64) -> Result<Dataset<T>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("silent fraction must be in (0, 1], got {fraction}")));
    }
    let mut by_speaker: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, u) in dataset.train.iter().enumerate() {
        if u.speech_type == SpeechType::Silent {
            by_speaker.entry(u.speaker_id).or_default().push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![true; dataset.train.len()];
    for indices in by_speaker.values() {
        let retain = ((fraction * indices.len() as f64).round() as usize).clamp(1, indices.len());
        let mut shuffled = indices.clone();
        shuffled.shuffle(&mut rng);
        for &i in &shuffled[retain..] {
            keep[i] = false;
        }
    }
    Ok(Dataset {
        train: dataset
            .train
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(u, _)| u.clone())
            .collect(),
        val: dataset.val.clone(),
        test: dataset.test.clone(),
    })
}

const MANIFEST: &str = "manifest.tsv";

/// Writes one text file per utterance plus a manifest listing the splits.
pub fn save_dataset<T: Scalar>(dataset: &Dataset<T>, dir: &Path) -> Result<()> {
    let utt_dir = dir.join("utterances");
    fs::create_dir_all(&utt_dir)?;
    let mut manifest = fs::File::create(dir.join(MANIFEST))?;
    for (split, list) in [("train", &dataset.train), ("val", &dataset.val), ("test", &dataset.test)] {
        for u in list {
            let file = format!("utterances/{}.txt", u.id);
            writeln!(manifest, "{split}\t{file}")?;
            let mut out = std::io::BufWriter::new(fs::File::create(dir.join(&file))?);
            writeln!(out, "{}\t{}\t{}\t{}", u.id, u.speaker_id, u.speech_type, u.text)?;
            let ids: Vec<String> = u.labels.ids().iter().map(ToString::to_string).collect();
            writeln!(out, "{}", ids.join(" "))?;
            for r in 0..u.frames.rows() {
                let row: Vec<String> = u.frames.row(r).iter().map(|x| x.as_f64().to_string()).collect();
                writeln!(out, "{}", row.join(" "))?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

pub fn load_dataset<T: Scalar>(dir: &Path) -> Result<Dataset<T>> {
    let manifest = fs::read_to_string(dir.join(MANIFEST))?;
    let mut ds = Dataset {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (i, line) in manifest.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (split, file) = line.split_once('\t').ok_or_else(|| Error::DatasetFormat {
            path: MANIFEST.into(),
            reason: format!("line {}: expected `split<TAB>file`", i + 1),
        })?;
        let u = load_utterance(&dir.join(file))?;
        match split {
            "train" => ds.train.push(u),
            "val" => ds.val.push(u),
            "test" => ds.test.push(u),
            other => {
                return Err(Error::DatasetFormat {
                    path: MANIFEST.into(),
                    reason: format!("unknown split `{other}`"),
                })
            }
        }
    }
    Ok(ds)
}

fn load_utterance<T: Scalar>(path: &Path) -> Result<Utterance<T>> {
    let bad = |reason: String| Error::DatasetFormat {
        path: path.display().to_string(),
        reason,
    };
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().splitn(4, '\t').collect();
    let [id, speaker, ty, phrase] = header[..] else {
        return Err(bad("header needs id, speaker, type and text".into()));
    };
    let ids = lines
        .next()
        .unwrap_or_default()
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| bad(format!("bad label `{t}`"))))
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::new();
    let mut rows = 0;
    let mut cols = None;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map(T::lit).map_err(|_| bad(format!("bad value `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        if *cols.get_or_insert(row.len()) != row.len() {
            return Err(bad(format!("ragged frame row {rows}")));
        }
        data.extend(row);
        rows += 1;
    }
    Ok(Utterance {
        id: id.to_string(),
        speaker_id: speaker.parse().map_err(|_| bad(format!("bad speaker `{speaker}`")))?,
        speech_type: ty.parse()?,
        text: phrase.to_string(),
        frames: Tensor::matrix(rows, cols.unwrap_or(0), data)?,
        labels: VisemeSequence::from_ids(&ids)?,
    })
}
