//! Viseme sequence to word sequence with a GRU encoder, a GRU decoder and
//! dot-product attention.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::params::{Linear, ParamSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};
use crate::viseme_map::NUM_CLASSES;

const MASKED_SCORE: f64 = -1e9;

/// Word inventory with reserved start and end tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
}

impl Vocabulary {
    pub const SOS: usize = 0;
    pub const EOS: usize = 1;

    /// Sorted unique words of `phrases` after the two reserved tokens.
    pub fn from_phrases<S: AsRef<str>>(phrases: &[S]) -> Self {
        let mut set: Vec<String> = phrases
            .iter()
            .flat_map(|p| p.as_ref().split_whitespace().map(str::to_lowercase).collect::<Vec<_>>())
            .collect();
        set.sort();
        set.dedup();
        let mut words = vec!["<s>".to_string(), "</s>".to_string()];
        words.extend(set);
        Self { words }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        let w = word.to_lowercase();
        self.words.iter().skip(2).position(|x| *x == w).map(|i| i + 2)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|w| self.id(w).ok_or_else(|| Error::OutOfVocabulary(w.to_string())))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LanguageConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Greedy decoding stops after this many words.
    pub max_words: usize,
}

impl Default for LanguageConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            hidden_dim: 32,
            max_words: 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Gru {
    w: usize,
    u: usize,
    b: usize,
    bh: usize,
    hidden: usize,
}

impl Gru {
    fn new<T: Scalar>(ps: &mut ParamSet<T>, name: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: ps.push_xavier(&format!("{name}.w"), input, 3 * hidden, rng),
            u: ps.push_xavier(&format!("{name}.u"), hidden, 3 * hidden, rng),
            b: ps.push_zeros(&format!("{name}.b"), 1, 3 * hidden),
            bh: ps.push_zeros(&format!("{name}.bh"), 1, 3 * hidden),
            hidden,
        }
    }

    /// Gates ordered reset, update, candidate.
    fn cell<T: Scalar>(&self, g: &mut Graph<T>, vars: &[Var], x: Var, h: Var) -> Result<Var> {
        let hd = self.hidden;
        let gx = g.matmul(x, vars[self.w])?;
        let gx = g.add_row(gx, vars[self.b])?;
        let gh = g.matmul(h, vars[self.u])?;
        let gh = g.add_row(gh, vars[self.bh])?;
        let (xr, xz, xn) = (g.slice_cols(gx, 0, hd)?, g.slice_cols(gx, hd, 2 * hd)?, g.slice_cols(gx, 2 * hd, 3 * hd)?);
        let (hr, hz, hn) = (g.slice_cols(gh, 0, hd)?, g.slice_cols(gh, hd, 2 * hd)?, g.slice_cols(gh, 2 * hd, 3 * hd)?);
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r)?;
        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z)?;
        let rh = g.mul(r, hn)?;
        let n = g.add(xn, rh)?;
        let n = g.tanh(n)?;
        let d = g.sub(h, n)?;
        let zd = g.mul(z, d)?;
        g.add(n, zd)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    vis_emb: usize,
    word_emb: usize,
    enc: Gru,
    dec: Gru,
    combine: Linear,
    out: Linear,
}

/// Encoder states for a padded batch.
pub struct Encoded {
    states: Vec<Var>,
    score_mask: Var,
    last: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DecodeMode {
    /// Feed the reference words back in; outputs are the argmax at each step.
    TeacherForced(Vec<String>),
    Greedy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LanguageOutput<T> {
    pub words: Vec<String>,
    /// One distribution over the vocabulary per decoder step.
    pub step_probs: Tensor<T>,
    /// Attention weights, one row per decoder step.
    pub attention: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LanguageModel<T> {
    config: LanguageConfig,
    vocab: Vocabulary,
    params: ParamSet<T>,
    layout: Layout,
}

fn one_hot<T: Scalar>(ids: &[usize], width: usize, active: &[bool]) -> Tensor<T> {
    let mut t = Tensor::zeros(&[ids.len(), width]);
    for (r, (&id, &on)) in ids.iter().zip(active).enumerate() {
        if on {
            t.set(r, id, T::one());
        }
    }
    t
}

impl<T: Scalar> LanguageModel<T> {
    pub fn new(config: LanguageConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        if config.embed_dim == 0 || config.hidden_dim == 0 || config.max_words == 0 {
            return Err(Error::Config("language model sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let (e, h) = (config.embed_dim, config.hidden_dim);
        let vis_emb = ps.push_xavier("emb.viseme", NUM_CLASSES, e, &mut rng);
        let word_emb = ps.push_xavier("emb.word", vocab.len(), e, &mut rng);
        let enc = Gru::new(&mut ps, "enc", e, h, &mut rng);
        let dec = Gru::new(&mut ps, "dec", e, h, &mut rng);
        let combine = Linear::new(&mut ps, "combine", 2 * h, h, &mut rng);
        let out = Linear::new(&mut ps, "out", h, vocab.len(), &mut rng);
        Ok(Self {
            config,
            vocab,
            params: ps,
            layout: Layout {
                vis_emb,
                word_emb,
                enc,
                dec,
                combine,
                out,
            },
        })
    }

    pub fn config(&self) -> &LanguageConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn encode_batch(&self, g: &mut Graph<T>, vars: &[Var], inputs: &[&[usize]]) -> Result<Encoded> {
        if inputs.is_empty() || inputs.iter().any(|s| s.is_empty()) {
            return Err(Error::EmptyBatch("language encoder"));
        }
        if let Some(&c) = inputs.iter().flat_map(|s| s.iter()).find(|&&c| c >= NUM_CLASSES) {
            return Err(Error::LabelRange(c));
        }
        let b = inputs.len();
        let t_max = inputs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut h = g.constant(Tensor::zeros(&[b, self.config.hidden_dim]));
        let mut states = Vec::with_capacity(t_max);
        let mut mask = Tensor::zeros(&[b, t_max]);
        for t in 0..t_max {
            let active: Vec<bool> = inputs.iter().map(|s| t < s.len()).collect();
            let ids: Vec<usize> = inputs.iter().map(|s| s.get(t).copied().unwrap_or(0)).collect();
            let x = g.constant(one_hot(&ids, NUM_CLASSES, &active));
            let x = g.matmul(x, vars[self.layout.vis_emb])?;
            let cand = self.layout.enc.cell(g, vars, x, h)?;
            h = if active.iter().all(|&a| a) {
                cand
            } else {
                let m = g.constant(Tensor::matrix(b, 1, active.iter().map(|&a| if a { T::one() } else { T::zero() }).collect())?);
                let d = g.sub(cand, h)?;
                let md = g.mul_col(d, m)?;
                g.add(h, md)?
            };
            for (r, &a) in active.iter().enumerate() {
                if !a {
                    mask.set(r, t, T::lit(MASKED_SCORE));
                }
            }
            states.push(h);
        }
        Ok(Encoded {
            states,
            score_mask: g.constant(mask),
            last: h,
        })
    }

    /// One decoder step. Returns the new state, vocabulary probabilities and
    /// attention weights.
    fn decode_step(&self, g: &mut Graph<T>, vars: &[Var], enc: &Encoded, prev: &[usize], s: Var) -> Result<(Var, Var, Var)> {
        let lay = &self.layout;
        let x = g.constant(one_hot(prev, self.vocab.len(), &vec![true; prev.len()]));
        let x = g.matmul(x, vars[lay.word_emb])?;
        let s = lay.dec.cell(g, vars, x, s)?;
        let mut scores = Vec::with_capacity(enc.states.len());
        for &h in &enc.states {
            let p = g.mul(h, s)?;
            scores.push(g.sum_cols(p)?);
        }
        let e = g.concat_cols(&scores)?;
        let e = g.add(e, enc.score_mask)?;
        let alpha = g.softmax_rows(e)?;
        let mut ctx = None;
        for (t, &h) in enc.states.iter().enumerate() {
            let a = g.slice_cols(alpha, t, t + 1)?;
            let term = g.mul_col(h, a)?;
            ctx = Some(match ctx {
                Some(c) => g.add(c, term)?,
                None => term,
            });
        }
        let joined = g.concat_cols(&[s, ctx.expect("non-empty encoder")])?;
        let c = lay.combine.forward(g, vars, joined)?;
        let c = g.tanh(c)?;
        let logits = lay.out.forward(g, vars, c)?;
        let probs = g.softmax_rows(logits)?;
        Ok((s, probs, alpha))
    }

    /// Teacher-forced mean cross-entropy over target words plus the end token.
    pub fn loss_batch(&self, g: &mut Graph<T>, vars: &[Var], pairs: &[(&[usize], &[usize])]) -> Result<Var> {
        let inputs: Vec<&[usize]> = pairs.iter().map(|p| p.0).collect();
        let enc = self.encode_batch(g, vars, &inputs)?;
        let k_max = pairs.iter().map(|p| p.1.len() + 1).max().unwrap_or(0);
        let mut s = enc.last;
        let mut total = None;
        let mut count = 0usize;
        for k in 0..k_max {
            let prev: Vec<usize> = pairs
                .iter()
                .map(|p| if k == 0 { Vocabulary::SOS } else { p.1.get(k - 1).copied().unwrap_or(Vocabulary::EOS) })
                .collect();
            let active: Vec<bool> = pairs.iter().map(|p| k <= p.1.len()).collect();
            let target: Vec<usize> = pairs.iter().map(|p| p.1.get(k).copied().unwrap_or(Vocabulary::EOS)).collect();
            count += active.iter().filter(|&&a| a).count();
            let (s_new, probs, _) = self.decode_step(g, vars, &enc, &prev, s)?;
            s = s_new;
            let logp = g.log(probs)?;
            let sel = g.constant(one_hot(&target, self.vocab.len(), &active));
            let picked = g.mul(logp, sel)?;
            let picked = g.sum(picked)?;
            total = Some(match total {
                Some(t) => g.add(t, picked)?,
                None => picked,
            });
        }
        g.scale(total.expect("at least one step"), T::lit(-1.0 / count as f64))
    }

    pub fn forward(&self, visemes: &[usize], mode: &DecodeMode) -> Result<LanguageOutput<T>> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let enc = self.encode_batch(&mut g, &vars, &[visemes])?;
        let reference = match mode {
            DecodeMode::TeacherForced(words) => Some(words.iter().map(|w| self.vocab.id(w).ok_or_else(|| Error::OutOfVocabulary(w.clone()))).collect::<Result<Vec<_>>>()?),
            DecodeMode::Greedy => None,
        };
        let steps = reference.as_ref().map_or(self.config.max_words + 1, |r| r.len() + 1);
        let mut s = enc.last;
        let mut prev = Vocabulary::SOS;
        let mut words = Vec::new();
        let mut probs_rows = Vec::new();
        let mut attn_rows = Vec::new();
        for k in 0..steps {
            let (s_new, probs, alpha) = self.decode_step(&mut g, &vars, &enc, &[prev], s)?;
            s = s_new;
            let p = g.value(probs).clone();
            let best = p.argmax_rows()[0];
            probs_rows.push(p.row(0).to_vec());
            attn_rows.push(g.value(alpha).row(0).to_vec());
            match &reference {
                Some(r) => {
                    if best != Vocabulary::EOS && best != Vocabulary::SOS {
                        words.push(self.vocab.word(best).to_string());
                    }
                    prev = r.get(k).copied().unwrap_or(Vocabulary::EOS);
                }
                None => {
                    if best == Vocabulary::EOS || words.len() == self.config.max_words {
                        break;
                    }
                    if best != Vocabulary::SOS {
                        words.push(self.vocab.word(best).to_string());
                    }
                    prev = best;
                }
            }
        }
        Ok(LanguageOutput {
            words,
            step_probs: Tensor::from_rows(&probs_rows)?,
            attention: Tensor::from_rows(&attn_rows)?,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let c = &self.config;
        let vocab: Vec<&str> = (2..self.vocab.len()).map(|i| self.vocab.word(i)).collect();
        let metadata: BTreeMap<String, String> = [
            ("kind", "language".to_string()),
            ("embed_dim", c.embed_dim.to_string()),
            ("hidden_dim", c.hidden_dim.to_string()),
            ("max_words", c.max_words.to_string()),
            ("vocab", vocab.join(" ")),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Checkpoint {
            metadata,
            blocks: self.params.blocks().into_iter().map(|(n, t)| (n, t.cast())).collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta("kind")? != "language" {
            return Err(Error::Checkpoint("not a language model checkpoint".into()));
        }
        let config = LanguageConfig {
            embed_dim: ck.meta_parse("embed_dim")?,
            hidden_dim: ck.meta_parse("hidden_dim")?,
            max_words: ck.meta_parse("max_words")?,
        };
        let vocab = Vocabulary::from_phrases(&[ck.meta("vocab")?]);
        let mut model = Self::new(config, vocab, 0)?;
        let blocks: Vec<_> = ck.blocks.iter().map(|(n, t)| (n.clone(), t.cast())).collect();
        model.params.load_from(&blocks)?;
        Ok(model)
    }
}
