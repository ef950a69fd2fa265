use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::language::{LanguageModel, Vocabulary};
use super::optim::{Adam, Plateau};
use super::params::ParamSet;
use super::visual::{decode_visemes, pool_frames, VisualModel};
use crate::error::{Error, Result};
use crate::losses::{cross_entropy, total_loss, BatchOutput, LossConfig, LossTerm, ProbSeq};
use crate::scalar::Scalar;
use crate::synth::{SpeechType, Utterance};
use crate::tensor::{Graph, Tensor};
use crate::viseme_map::VisemeSequence;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr_factor: f64,
    pub patience: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn visual_default() -> Self {
        Self {
            lr: 1e-5,
            batch_size: 64,
            epochs: 50,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr_factor: 0.5,
            patience: 5,
            seed: 0,
        }
    }

    pub fn language_default() -> Self {
        Self {
            lr: 5e-4,
            batch_size: 10,
            ..Self::visual_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("lr, batch_size and epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("Adam betas must lie in [0, 1) and eps be positive".into()));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return Err(Error::Config("lr_factor must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean unweighted value of each active term over the epoch's steps.
    pub terms: Vec<(LossTerm, f64)>,
    /// KL positions skipped because their class had no representative.
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

fn diverged(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::Diverged { epoch },
        other => other,
    }
}

/// Splits `n` shuffled items into `steps` contiguous, near-equal chunks.
fn chunk(items: &[usize], step: usize, steps: usize) -> &[usize] {
    let n = items.len();
    &items[step * n / steps..(step + 1) * n / steps]
}

struct Prepared<T> {
    pooled: Vec<Tensor<T>>,
    labels: Vec<Vec<usize>>,
    ty: Vec<SpeechType>,
}

fn prepare<T: Scalar>(utts: &[&Utterance<T>]) -> Result<Prepared<T>> {
    Ok(Prepared {
        pooled: utts.iter().map(|u| pool_frames(&u.frames, u.labels.len())).collect::<Result<_>>()?,
        labels: utts.iter().map(|u| u.labels.ids()).collect(),
        ty: utts.iter().map(|u| u.speech_type).collect(),
    })
}

/// Trains with Adam and a plateau schedule, restoring the parameters of the
/// epoch with the lowest validation loss.
///
/// Validation loss is the cross-entropy on the speech types the loss
/// configuration trains on, so it is comparable across configurations that
/// use the same data.
pub fn train_visual<T: Scalar>(
    model: &mut VisualModel<T>,
    train: &[&Utterance<T>],
    val: &[&Utterance<T>],
    loss: &LossConfig,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    loss.validate()?;
    let use_normal = loss.terms().any(|(t, _)| t.needs_normal());
    let use_silent = loss.terms().any(|(t, _)| t.needs_silent());
    let keep = |u: &&&Utterance<T>| match u.speech_type {
        SpeechType::Normal => use_normal,
        SpeechType::Silent => use_silent,
    };
    let train: Vec<&Utterance<T>> = train.iter().filter(keep).copied().collect();
    let val: Vec<&Utterance<T>> = val.iter().filter(keep).copied().collect();
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(Error::EmptySplit("val"));
    }
    let data = prepare(&train)?;
    let val_data = prepare(&val)?;
    let normal_idx: Vec<usize> = (0..train.len()).filter(|&i| data.ty[i] == SpeechType::Normal).collect();
    let silent_idx: Vec<usize> = (0..train.len()).filter(|&i| data.ty[i] == SpeechType::Silent).collect();
    if (use_normal && normal_idx.is_empty()) || (use_silent && silent_idx.is_empty()) {
        return Err(Error::EmptySplit("train speech type"));
    }
    let mut steps = train.len().div_ceil(cfg.batch_size);
    for (used, idx) in [(use_normal, &normal_idx), (use_silent, &silent_idx)] {
        if used {
            steps = steps.min(idx.len());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(model.params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut sched = Plateau::new(cfg.lr_factor, cfg.patience);
    let mut best: Option<(usize, f64, ParamSet<T>)> = None;
    let mut logs = Vec::with_capacity(cfg.epochs);
    let (mut normal_order, mut silent_order) = (normal_idx.clone(), silent_idx.clone());

    for epoch in 1..=cfg.epochs {
        let err = diverged(epoch);
        normal_order.shuffle(&mut rng);
        silent_order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut term_sums: Vec<(LossTerm, f64)> = loss.terms().map(|(t, _)| (t, 0.0)).collect();
        let mut skipped = 0;
        for step in 0..steps {
            let mut g = Graph::new();
            let vars = model.params().bind(&mut g, true);
            let run = |idx: &[usize], g: &mut Graph<T>| -> Result<Option<BatchOutput>> {
                if idx.is_empty() {
                    return Ok(None);
                }
                let inputs: Vec<&Tensor<T>> = idx.iter().map(|&i| &data.pooled[i]).collect();
                let probs = model.forward_batch(g, &vars, &inputs)?;
                Ok(Some(BatchOutput {
                    probs,
                    labels: idx.iter().flat_map(|&i| data.labels[i].iter().copied()).collect(),
                }))
            };
            let n = run(chunk(&normal_order, step, steps), &mut g).map_err(&err)?;
            let s = run(chunk(&silent_order, step, steps), &mut g).map_err(&err)?;
            let out = total_loss(&mut g, n.as_ref(), s.as_ref(), loss).map_err(&err)?;
            let value = g.value(out.total).item().as_f64();
            if !value.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            g.backward(out.total)?;
            let grads = model.params().grads(&g, &vars);
            if grads.iter().any(|t| !t.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            opt.step(model.params_mut(), &grads);
            loss_sum += value;
            for (rec, acc) in out.terms.iter().zip(&mut term_sums) {
                acc.1 += rec.value;
                skipped += rec.skipped;
            }
        }

        let val_loss = visual_val_loss(model, &val_data).map_err(&err)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        logs.push(EpochLog {
            epoch,
            lr: opt.lr,
            train_loss: loss_sum / steps as f64,
            val_loss,
            terms: term_sums.into_iter().map(|(t, v)| (t, v / steps as f64)).collect(),
            skipped,
        });
        if best.as_ref().map_or(true, |b| val_loss < b.1) {
            best = Some((epoch, val_loss, model.params().clone()));
        }
        opt.lr = sched.step(val_loss, opt.lr);
    }

    let (best_epoch, best_val_loss, params) = best.expect("at least one epoch");
    *model.params_mut() = params;
    Ok(TrainReport {
        epochs: logs,
        best_epoch,
        best_val_loss,
    })
}

const EVAL_CHUNK: usize = 128;

fn visual_val_loss<T: Scalar>(model: &VisualModel<T>, data: &Prepared<T>) -> Result<f64> {
    let mut total = 0.0;
    let mut positions = 0usize;
    let idx: Vec<usize> = (0..data.pooled.len()).collect();
    for part in idx.chunks(EVAL_CHUNK) {
        let mut g = Graph::new();
        let vars = model.params().bind(&mut g, false);
        let inputs: Vec<&Tensor<T>> = part.iter().map(|&i| &data.pooled[i]).collect();
        let q = model.forward_batch(&mut g, &vars, &inputs)?;
        let labels: Vec<usize> = part.iter().flat_map(|&i| data.labels[i].iter().copied()).collect();
        let ce = cross_entropy(&mut g, q, &labels)?;
        total += g.value(ce).item().as_f64() * labels.len() as f64;
        positions += labels.len();
    }
    Ok(total / positions as f64)
}

/// Per-utterance output distributions, with `frames / frames_per_viseme`
/// positions each.
pub fn predict_probs<T: Scalar>(model: &VisualModel<T>, utts: &[&Utterance<T>], frames_per_viseme: usize) -> Result<Vec<ProbSeq<T>>> {
    if frames_per_viseme == 0 {
        return Err(Error::Config("frames_per_viseme must be positive".into()));
    }
    let pooled = utts
        .iter()
        .map(|u| pool_frames(&u.frames, u.frames.rows() / frames_per_viseme))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(utts.len());
    for part in pooled.chunks(EVAL_CHUNK) {
        let mut g = Graph::new();
        let vars = model.params().bind(&mut g, false);
        let inputs: Vec<&Tensor<T>> = part.iter().collect();
        let q = model.forward_batch(&mut g, &vars, &inputs)?;
        let all = g.value(q);
        let mut start = 0;
        for p in part {
            out.push(ProbSeq::new(all.slice_rows(start, start + p.rows())?)?);
            start += p.rows();
        }
    }
    Ok(out)
}

pub fn predict_visemes<T: Scalar>(model: &VisualModel<T>, utts: &[&Utterance<T>], frames_per_viseme: usize) -> Result<Vec<VisemeSequence>> {
    Ok(predict_probs(model, utts, frames_per_viseme)?.iter().map(decode_visemes).collect())
}

/// A viseme input and its reference word ids.
#[derive(Clone, Debug, PartialEq)]
pub struct LanguagePair {
    pub visemes: Vec<usize>,
    pub words: Vec<usize>,
}

impl LanguagePair {
    pub fn new(visemes: &VisemeSequence, text: &str, vocab: &Vocabulary) -> Result<Self> {
        Ok(Self {
            visemes: visemes.ids(),
            words: vocab.encode(text)?,
        })
    }
}

pub fn train_language<T: Scalar>(
    model: &mut LanguageModel<T>,
    train: &[LanguagePair],
    val: &[LanguagePair],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let usable = |p: &&LanguagePair| !p.visemes.is_empty();
    let train: Vec<&LanguagePair> = train.iter().filter(usable).collect();
    let val: Vec<&LanguagePair> = val.iter().filter(usable).collect();
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(Error::EmptySplit("val"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(model.params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut sched = Plateau::new(cfg.lr_factor, cfg.patience);
    let mut best: Option<(usize, f64, ParamSet<T>)> = None;
    let mut logs = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    let as_pairs = |ps: &[&LanguagePair]| -> Vec<(Vec<usize>, Vec<usize>)> { ps.iter().map(|p| (p.visemes.clone(), p.words.clone())).collect() };
    let train_pairs = as_pairs(&train);
    let val_pairs = as_pairs(&val);

    for epoch in 1..=cfg.epochs {
        let err = diverged(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for batch in order.chunks(cfg.batch_size) {
            let pairs: Vec<(&[usize], &[usize])> = batch.iter().map(|&i| (&train_pairs[i].0[..], &train_pairs[i].1[..])).collect();
            let mut g = Graph::new();
            let vars = model.params().bind(&mut g, true);
            let l = model.loss_batch(&mut g, &vars, &pairs).map_err(&err)?;
            let value = g.value(l).item().as_f64();
            g.backward(l)?;
            let grads = model.params().grads(&g, &vars);
            if !value.is_finite() || grads.iter().any(|t| !t.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            opt.step(model.params_mut(), &grads);
            loss_sum += value;
            steps += 1;
        }
        let mut val_sum = 0.0;
        let mut val_tokens = 0usize;
        for part in val_pairs.chunks(EVAL_CHUNK) {
            let pairs: Vec<(&[usize], &[usize])> = part.iter().map(|p| (&p.0[..], &p.1[..])).collect();
            let tokens: usize = part.iter().map(|p| p.1.len() + 1).sum();
            let mut g = Graph::new();
            let vars = model.params().bind(&mut g, false);
            let l = model.loss_batch(&mut g, &vars, &pairs).map_err(&err)?;
            val_sum += g.value(l).item().as_f64() * tokens as f64;
            val_tokens += tokens;
        }
        let val_loss = val_sum / val_tokens as f64;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        logs.push(EpochLog {
            epoch,
            lr: opt.lr,
            train_loss: loss_sum / steps as f64,
            val_loss,
            terms: Vec::new(),
            skipped: 0,
        });
        if best.as_ref().map_or(true, |b| val_loss < b.1) {
            best = Some((epoch, val_loss, model.params().clone()));
        }
        opt.lr = sched.step(val_loss, opt.lr);
    }
    let (best_epoch, best_val_loss, params) = best.expect("at least one epoch");
    *model.params_mut() = params;
    Ok(TrainReport {
        epochs: logs,
        best_epoch,
        best_val_loss,
    })
}
