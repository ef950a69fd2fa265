//! Frame features to per-position viseme distributions.
//!
//! Frames are average-pooled into one row per output position, projected to
//! the model width, passed through one single-head self-attention block and a
//! residual feed-forward layer, then a stack of ReLU fully connected blocks
//! and a softmax over the 17 classes.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::params::{Linear, ParamSet};
use crate::error::{Error, Result};
use crate::losses::ProbSeq;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};
use crate::viseme_map::{VisemeClass, VisemeSequence, NUM_CLASSES};

#[derive(Clone, Debug, PartialEq)]
pub struct VisualConfig {
    pub input_dim: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub fc_dims: Vec<usize>,
}

impl Default for VisualConfig {
    fn default() -> Self {
        Self {
            input_dim: 8,
            model_dim: 64,
            ff_dim: 128,
            fc_dims: vec![64, 128, 64],
        }
    }
}

impl VisualConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.model_dim == 0 || self.ff_dim == 0 || self.fc_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("visual model widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    input: Linear,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    ff1: Linear,
    ff2: Linear,
    fc: Vec<Linear>,
    out: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisualModel<T> {
    config: VisualConfig,
    params: ParamSet<T>,
    layout: Layout,
}

impl<T: Scalar> VisualModel<T> {
    pub fn new(config: VisualConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let d = config.model_dim;
        let input = Linear::new(&mut ps, "input", config.input_dim, d, &mut rng);
        let wq = ps.push_xavier("attn.q", d, d, &mut rng);
        let wk = ps.push_xavier("attn.k", d, d, &mut rng);
        let wv = ps.push_xavier("attn.v", d, d, &mut rng);
        let wo = ps.push_xavier("attn.o", d, d, &mut rng);
        let ff1 = Linear::new(&mut ps, "ff1", d, config.ff_dim, &mut rng);
        let ff2 = Linear::new(&mut ps, "ff2", config.ff_dim, d, &mut rng);
        let mut fc = Vec::new();
        let mut width = d;
        for (i, &next) in config.fc_dims.iter().enumerate() {
            fc.push(Linear::new(&mut ps, &format!("fc{i}"), width, next, &mut rng));
            width = next;
        }
        let out = Linear::new(&mut ps, "out", width, NUM_CLASSES, &mut rng);
        Ok(Self {
            config,
            params: ps,
            layout: Layout {
                input,
                wq,
                wk,
                wv,
                wo,
                ff1,
                ff2,
                fc,
                out,
            },
        })
    }

    pub fn config(&self) -> &VisualConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Stacked probability rows for a batch of pooled inputs (`L_i x D` each).
    pub fn forward_batch(&self, g: &mut Graph<T>, vars: &[Var], pooled: &[&Tensor<T>]) -> Result<Var> {
        if pooled.is_empty() {
            return Err(Error::EmptyBatch("visual forward"));
        }
        let lay = &self.layout;
        let stacked = Tensor::concat_rows(pooled)?;
        if stacked.cols() != self.config.input_dim {
            return Err(Error::shape("visual input", &[self.config.input_dim], stacked.shape()));
        }
        let x = g.constant(stacked);
        let h0 = lay.input.forward(g, vars, x)?;
        let q = g.matmul(h0, vars[lay.wq])?;
        let k = g.matmul(h0, vars[lay.wk])?;
        let v = g.matmul(h0, vars[lay.wv])?;
        let inv_sqrt_d = T::lit(1.0 / (self.config.model_dim as f64).sqrt());

        let mut parts = Vec::with_capacity(pooled.len());
        let mut start = 0;
        for p in pooled {
            let end = start + p.rows();
            let qu = g.slice_rows(q, start, end)?;
            let ku = g.slice_rows(k, start, end)?;
            let vu = g.slice_rows(v, start, end)?;
            let kt = g.transpose(ku)?;
            let scores = g.matmul(qu, kt)?;
            let scores = g.scale(scores, inv_sqrt_d)?;
            let attn = g.softmax_rows(scores)?;
            parts.push(g.matmul(attn, vu)?);
            start = end;
        }
        let ctx = g.concat_rows(&parts)?;
        let ctx = g.matmul(ctx, vars[lay.wo])?;
        let h1 = g.add(h0, ctx)?;
        let f = lay.ff1.forward(g, vars, h1)?;
        let f = g.relu(f)?;
        let f = lay.ff2.forward(g, vars, f)?;
        let mut h = g.add(h1, f)?;
        for layer in &lay.fc {
            let z = layer.forward(g, vars, h)?;
            h = g.relu(z)?;
        }
        let logits = lay.out.forward(g, vars, h)?;
        g.softmax_rows(logits)
    }

    /// Inference for one utterance with `target_len` output positions.
    pub fn forward(&self, features: &Tensor<T>, target_len: usize) -> Result<ProbSeq<T>> {
        let pooled = pool_frames(features, target_len)?;
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let probs = self.forward_batch(&mut g, &vars, &[&pooled])?;
        ProbSeq::new(g.value(probs).clone())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let c = &self.config;
        let fc: Vec<String> = c.fc_dims.iter().map(ToString::to_string).collect();
        let metadata: BTreeMap<String, String> = [
            ("kind", "visual".to_string()),
            ("input_dim", c.input_dim.to_string()),
            ("model_dim", c.model_dim.to_string()),
            ("ff_dim", c.ff_dim.to_string()),
            ("fc_dims", fc.join(",")),
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
        if ck.meta("kind")? != "visual" {
            return Err(Error::Checkpoint("not a visual model checkpoint".into()));
        }
        let fc_dims = ck
            .meta("fc_dims")?
            .split(',')
            .map(|s| s.parse().map_err(|_| Error::Checkpoint("bad fc_dims".into())))
            .collect::<Result<Vec<usize>>>()?;
        let config = VisualConfig {
            input_dim: ck.meta_parse("input_dim")?,
            model_dim: ck.meta_parse("model_dim")?,
            ff_dim: ck.meta_parse("ff_dim")?,
            fc_dims,
        };
        let mut model = Self::new(config, 0)?;
        let blocks: Vec<_> = ck.blocks.iter().map(|(n, t)| (n.clone(), t.cast())).collect();
        model.params.load_from(&blocks)?;
        Ok(model)
    }
}

/// Averages `T` frames into `len` contiguous, near-equal bins.
pub fn pool_frames<T: Scalar>(features: &Tensor<T>, len: usize) -> Result<Tensor<T>> {
    let t = features.rows();
    if len == 0 || t < len {
        return Err(Error::Length(t, len));
    }
    let d = features.cols();
    let mut out = Vec::with_capacity(len * d);
    for l in 0..len {
        let (a, b) = (l * t / len, (l + 1) * t / len);
        let inv = T::one() / T::count(b - a);
        for c in 0..d {
            let s: T = (a..b).map(|r| features.get(r, c)).sum();
            out.push(s * inv);
        }
    }
    Tensor::matrix(len, d, out)
}

/// Argmax per position (ties to the lower id) with trailing padding removed.
pub fn decode_visemes<T: Scalar>(q: &ProbSeq<T>) -> VisemeSequence {
    let mut ids = q.tensor().argmax_rows();
    while ids.last() == Some(&VisemeClass::PAD.id()) {
        ids.pop();
    }
    VisemeSequence::new(ids.into_iter().map(|i| VisemeClass::new(i).expect("argmax below class count")).collect())
}
