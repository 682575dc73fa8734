//! The forecaster network.
//!
//! ```text
//! window (W x F) --pad p zero rows--> D (L x F), L = W + p
//! pretreat:  X = denoise(conv(D)) + PE(L, F) . W_pe                (L x d)
//! distill:   maxpool_kxk(conv(probattn(X))) + maxpool_time(X . W_t + b_t)  (L/2 x d/2)
//! attention: layer_norm(Y + mhsa(Y)) . gamma + beta                 (L/2 x d/2)
//! head:      flatten . W_h + b_h                                    (p)
//! ```
//!
//! The per-channel denoiser is non-smooth, so the backward pass treats it as
//! the identity (straight-through).

mod layers;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use layers::{
    active_query_count, full_attention, multi_head_self_attention, positional_encoding, prob_attention,
    sparsity_scores, top_query_mask, AttentionKind, AttentionWeights,
};
pub use train::{evaluate_mse, train, EpochRecord, Example, TrainConfig, TrainOutcome};

use crate::aceemd::{self, AceemdConfig};
use crate::autodiff::{Checkpoint, Graph, Tensor, Var};
use crate::par::{self, Exec};
use crate::{Error, Result};

/// Kernel width of both convolutions.
pub const CONV_KERNEL: usize = 3;
const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenoiseKind {
    #[default]
    Aceemd,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_window: usize,
    pub predict_days: usize,
    pub feature_width: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Sparsity factor `c` of the probability attention.
    pub prob_factor: f64,
    pub pool_k: usize,
    pub seed: u64,
    pub denoise: DenoiseKind,
    /// Ensemble settings for the in-network denoiser.
    pub aceemd: AceemdConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_window: 30,
            predict_days: 2,
            feature_width: 7,
            d_model: 64,
            n_heads: 4,
            prob_factor: 5.0,
            pool_k: 2,
            seed: 0,
            denoise: DenoiseKind::Aceemd,
            aceemd: AceemdConfig { ensemble_size: 2, ..AceemdConfig::default() },
        }
    }
}

impl ModelConfig {
    pub fn padded_len(&self) -> usize {
        self.input_window + self.predict_days
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.pool_k != 2 {
            return fail(format!("pool_k must be 2, got {}", self.pool_k));
        }
        if self.predict_days == 0 {
            return fail("predict_days must be at least 1".into());
        }
        if self.input_window < 4 {
            return fail(format!("input_window must be at least 4, got {}", self.input_window));
        }
        if self.feature_width == 0 {
            return fail("feature_width must be at least 1".into());
        }
        if !self.padded_len().is_multiple_of(self.pool_k) {
            return fail(format!(
                "input_window + predict_days = {} must be divisible by pool_k = {}",
                self.padded_len(),
                self.pool_k
            ));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if !self.d_model.is_multiple_of(self.pool_k) || !(self.d_model / self.pool_k).is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model / pool_k = {} must be divisible by n_heads {}",
                self.d_model / self.pool_k.max(1),
                self.n_heads
            ));
        }
        if !(self.prob_factor > 0.0 && self.prob_factor.is_finite()) {
            return fail(format!("prob_factor must be positive, got {}", self.prob_factor));
        }
        self.aceemd.validate()
    }
}

/// Learnable tensors, in checkpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    EmbedConvW,
    EmbedConvB,
    PosProj,
    DistillWq,
    DistillWk,
    DistillWv,
    DistillWo,
    DistillConvW,
    DistillConvB,
    TimeW,
    TimeB,
    AttnWq,
    AttnWk,
    AttnWv,
    AttnWo,
    NormGamma,
    NormBeta,
    HeadW,
    HeadB,
}

impl Param {
    pub const ALL: [Param; 19] = [
        Param::EmbedConvW,
        Param::EmbedConvB,
        Param::PosProj,
        Param::DistillWq,
        Param::DistillWk,
        Param::DistillWv,
        Param::DistillWo,
        Param::DistillConvW,
        Param::DistillConvB,
        Param::TimeW,
        Param::TimeB,
        Param::AttnWq,
        Param::AttnWk,
        Param::AttnWv,
        Param::AttnWo,
        Param::NormGamma,
        Param::NormBeta,
        Param::HeadW,
        Param::HeadB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::EmbedConvW => "pretreat.conv.weight",
            Param::EmbedConvB => "pretreat.conv.bias",
            Param::PosProj => "pretreat.position.proj",
            Param::DistillWq => "distill.attn.wq",
            Param::DistillWk => "distill.attn.wk",
            Param::DistillWv => "distill.attn.wv",
            Param::DistillWo => "distill.attn.wo",
            Param::DistillConvW => "distill.conv.weight",
            Param::DistillConvB => "distill.conv.bias",
            Param::TimeW => "distill.time.weight",
            Param::TimeB => "distill.time.bias",
            Param::AttnWq => "attention.wq",
            Param::AttnWk => "attention.wk",
            Param::AttnWv => "attention.wv",
            Param::AttnWo => "attention.wo",
            Param::NormGamma => "attention.norm.gamma",
            Param::NormBeta => "attention.norm.beta",
            Param::HeadW => "head.weight",
            Param::HeadB => "head.bias",
        }
    }

    pub fn shape(self, c: &ModelConfig) -> Vec<usize> {
        let (d, f, k) = (c.d_model, c.feature_width, CONV_KERNEL);
        let h = d / c.pool_k;
        let flat = c.padded_len() / c.pool_k * h;
        match self {
            Param::EmbedConvW => vec![d, f, k],
            Param::EmbedConvB | Param::DistillConvB => vec![d],
            Param::PosProj => vec![f, d],
            Param::DistillWq | Param::DistillWk | Param::DistillWv | Param::DistillWo => vec![d, d],
            Param::DistillConvW => vec![d, d, k],
            Param::TimeW => vec![d, h],
            Param::TimeB | Param::NormGamma | Param::NormBeta => vec![h],
            Param::AttnWq | Param::AttnWk | Param::AttnWv | Param::AttnWo => vec![h, h],
            Param::HeadW => vec![flat, c.predict_days],
            Param::HeadB => vec![c.predict_days],
        }
    }
}

/// How the pretreatment stage denoises conv channels in a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum ChannelDenoise<'a> {
    /// Per the model config.
    Configured,
    /// Subtract a fixed `(L, d_model)` component instead of recomputing it.
    Subtract(&'a Tensor),
}

/// Intermediate tensors of the pretreatment stage.
#[derive(Debug, Clone)]
pub struct PretreatParts {
    pub conv: Tensor,
    pub imf1: Tensor,
    pub denoised: Tensor,
    pub position: Tensor,
    pub x_pre: Tensor,
}

struct PretreatVars {
    x_pre: Var,
    conv: Var,
    denoised: Var,
    position: Var,
    imf1: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AceFormer {
    config: ModelConfig,
    params: Vec<Tensor>,
    exec: Exec,
}

fn xavier(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-a..a)).collect()).expect("shape product")
}

/// Pads a `(window, F)` block with `p` zero rows.
pub fn build_padded_input(window: &Tensor, p: usize) -> Result<Tensor> {
    if window.rank() != 2 {
        return Err(Error::invalid(format!("window must be 2-D, got shape {:?}", window.shape())));
    }
    if !window.is_finite() {
        return Err(Error::invalid("window contains non-finite features"));
    }
    let (rows, f) = (window.shape()[0], window.shape()[1]);
    let mut data = window.data().to_vec();
    data.resize((rows + p) * f, 0.0);
    Tensor::new(vec![rows + p, f], data)
}

/// Column-wise view of a 2-D tensor.
fn columns(t: &Tensor) -> Vec<Vec<f64>> {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    (0..c).map(|j| (0..r).map(|i| t.at(i, j)).collect()).collect()
}

fn from_columns(cols: &[Vec<f64>], rows: usize) -> Tensor {
    let c = cols.len();
    let mut data = vec![0.0; rows * c];
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            data[i * c + j] = *v;
        }
    }
    Tensor::new(vec![rows, c], data).expect("rows * cols")
}

impl AceFormer {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = Param::ALL
            .iter()
            .map(|&p| {
                let s = p.shape(&config);
                match p {
                    Param::EmbedConvB | Param::DistillConvB | Param::TimeB | Param::NormBeta | Param::HeadB => {
                        Tensor::zeros(&s)
                    }
                    Param::NormGamma => Tensor::filled(&s, 1.0),
                    Param::EmbedConvW | Param::DistillConvW => xavier(&mut rng, &s, s[1] * s[2], s[0] * s[2]),
                    _ => xavier(&mut rng, &s, s[0], s[1]),
                }
            })
            .collect();
        Ok(Self { config, params, exec: Exec::default() })
    }

    /// Execution strategy for per-channel denoising.
    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, p: Param) -> &Tensor {
        &self.params[p as usize]
    }

    pub fn set_param(&mut self, p: Param, value: Tensor) -> Result<()> {
        let expected = p.shape(&self.config);
        if value.shape() != expected {
            return Err(Error::ShapeMismatch { op: p.name(), left: expected, right: value.shape().to_vec() });
        }
        self.params[p as usize] = value;
        Ok(())
    }

    fn check_window(&self, window: &Tensor) -> Result<()> {
        let want = [self.config.input_window, self.config.feature_width];
        if window.shape() != want {
            return Err(Error::ShapeMismatch {
                op: "model input",
                left: want.to_vec(),
                right: window.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Per-channel IMF1 of the embedding convolution for `padded`; zeros when
    /// the denoiser is disabled.
    fn channel_imf1_of(&self, conv: &Tensor) -> Result<Tensor> {
        let rows = conv.shape()[0];
        if self.config.denoise == DenoiseKind::Identity {
            return Ok(Tensor::zeros(conv.shape()));
        }
        let cols = columns(conv);
        let base = self.config.aceemd;
        let stride = base.ensemble_size as u64;
        let imfs = par::try_map_range(self.exec, cols.len(), |ch| {
            let cfg = AceemdConfig { seed: base.seed.wrapping_add(ch as u64 * stride), ..base };
            aceemd::denoise_values(&cols[ch], &cfg, Exec::Sequential).map(|(imf1, _)| imf1)
        })?;
        Ok(from_columns(&imfs, rows))
    }

    /// The `(L, d_model)` component the configured denoiser removes for
    /// `window`.
    pub fn channel_imf1(&self, window: &Tensor) -> Result<Tensor> {
        Ok(self.pretreat_parts(window)?.imf1)
    }

    /// Runs pretreatment alone and returns every intermediate.
    pub fn pretreat_parts(&self, window: &Tensor) -> Result<PretreatParts> {
        self.check_window(window)?;
        let padded = build_padded_input(window, self.config.predict_days)?;
        let mut g = Graph::new();
        let pv = self.bind(&mut g, false);
        let s = self.pretreat(&mut g, &pv, &padded, ChannelDenoise::Configured)?;
        Ok(PretreatParts {
            conv: g.value(s.conv).clone(),
            imf1: s.imf1,
            denoised: g.value(s.denoised).clone(),
            position: g.value(s.position).clone(),
            x_pre: g.value(s.x_pre).clone(),
        })
    }

    fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params.iter().map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) }).collect()
    }

    fn pretreat(
        &self,
        g: &mut Graph,
        pv: &[Var],
        padded: &Tensor,
        denoise: ChannelDenoise<'_>,
    ) -> Result<PretreatVars> {
        let c = &self.config;
        let tail = &padded.data()[c.input_window * c.feature_width..];
        if tail.iter().any(|v| *v != 0.0) {
            return Err(Error::invalid("the last predict_days input rows must be zero"));
        }
        let d = g.constant(padded.clone());
        let conv = g.conv1d(d, pv[Param::EmbedConvW as usize], Some(pv[Param::EmbedConvB as usize]))?;
        let conv_value = g.value(conv).clone();
        let imf1 = match denoise {
            ChannelDenoise::Configured => self.channel_imf1_of(&conv_value)?,
            ChannelDenoise::Subtract(t) => {
                if t.shape() != conv_value.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "denoise offsets",
                        left: conv_value.shape().to_vec(),
                        right: t.shape().to_vec(),
                    });
                }
                t.clone()
            }
        };
        let r1: Vec<f64> = conv_value.data().iter().zip(imf1.data()).map(|(x, i)| x - i).collect();
        let denoised = g.straight_through(conv, Tensor::new(conv_value.shape().to_vec(), r1)?)?;
        let pe = g.constant(positional_encoding(padded.shape()[0], c.feature_width));
        let position = g.matmul(pe, pv[Param::PosProj as usize])?;
        let x_pre = g.add(denoised, position)?;
        Ok(PretreatVars { x_pre, conv, denoised, position, imf1 })
    }

    /// `maxpool_time(x_pre . W_t + b_t)`.
    fn time_aware(&self, g: &mut Graph, pv: &[Var], x_pre: Var) -> Result<Var> {
        let len = g.shape(x_pre)[0];
        if !len.is_multiple_of(self.config.pool_k) {
            return Err(Error::invalid(format!("time-aware pooling needs an even length, got {len}")));
        }
        let t = g.matmul(x_pre, pv[Param::TimeW as usize])?;
        let t = g.add(t, pv[Param::TimeB as usize])?;
        g.maxpool2d(t, self.config.pool_k, 1)
    }

    fn distill(&self, g: &mut Graph, pv: &[Var], x_pre: Var) -> Result<Var> {
        let c = &self.config;
        let s = g.shape(x_pre);
        if !s[0].is_multiple_of(c.pool_k) || !s[1].is_multiple_of(c.pool_k) {
            return Err(Error::invalid(format!("distillation needs even dimensions, got {s:?}")));
        }
        let w = AttentionWeights {
            wq: pv[Param::DistillWq as usize],
            wk: pv[Param::DistillWk as usize],
            wv: pv[Param::DistillWv as usize],
            wo: pv[Param::DistillWo as usize],
        };
        let a = multi_head_self_attention(g, x_pre, w, c.n_heads, AttentionKind::Prob { factor: c.prob_factor })?;
        let conv = g.conv1d(a, pv[Param::DistillConvW as usize], Some(pv[Param::DistillConvB as usize]))?;
        let pooled = g.maxpool2d(conv, c.pool_k, c.pool_k)?;
        let t = self.time_aware(g, pv, x_pre)?;
        g.add(pooled, t)
    }

    fn attention_block(&self, g: &mut Graph, pv: &[Var], x: Var) -> Result<Var> {
        let w = AttentionWeights {
            wq: pv[Param::AttnWq as usize],
            wk: pv[Param::AttnWk as usize],
            wv: pv[Param::AttnWv as usize],
            wo: pv[Param::AttnWo as usize],
        };
        let a = multi_head_self_attention(g, x, w, self.config.n_heads, AttentionKind::Full)?;
        let y = g.add(x, a)?;
        let y = g.layer_norm(y, LAYER_NORM_EPS)?;
        let y = g.mul(y, pv[Param::NormGamma as usize])?;
        g.add(y, pv[Param::NormBeta as usize])
    }

    fn head(&self, g: &mut Graph, pv: &[Var], x: Var) -> Result<Var> {
        let n = g.value(x).len();
        let flat = g.reshape(x, &[1, n])?;
        let o = g.matmul(flat, pv[Param::HeadW as usize])?;
        let o = g.add(o, pv[Param::HeadB as usize])?;
        g.reshape(o, &[self.config.predict_days])
    }

    /// Records a full forward pass. Returns the `(p)` output and the bound
    /// parameter leaves (trainable when `trainable`).
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        window: &Tensor,
        trainable: bool,
        denoise: ChannelDenoise<'_>,
    ) -> Result<(Var, Vec<Var>)> {
        self.check_window(window)?;
        let padded = build_padded_input(window, self.config.predict_days)?;
        let pv = self.bind(g, trainable);
        let x_pre = self.pretreat(g, &pv, &padded, denoise)?.x_pre;
        let d = self.distill(g, &pv, x_pre)?;
        let y = self.attention_block(g, &pv, d)?;
        let out = self.head(g, &pv, y)?;
        Ok((out, pv))
    }

    /// Distillation output for an explicit `x_pre` (bypassing pretreatment).
    pub fn distill_only(&self, x_pre: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let pv = self.bind(&mut g, false);
        let x = g.constant(x_pre.clone());
        let d = self.distill(&mut g, &pv, x)?;
        Ok(g.value(d).clone())
    }

    /// Time-aware branch alone for an explicit `x_pre`.
    pub fn time_aware_only(&self, x_pre: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let pv = self.bind(&mut g, false);
        let x = g.constant(x_pre.clone());
        let t = self.time_aware(&mut g, &pv, x)?;
        Ok(g.value(t).clone())
    }

    /// `p` normalized closing values for a `(window, F)` block.
    pub fn predict(&self, window: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let (out, _) = self.forward_graph(&mut g, window, false, ChannelDenoise::Configured)?;
        Ok(g.value(out).data().to_vec())
    }

    /// MSE against `targets` and its gradient for every parameter.
    pub fn loss_and_grads(
        &self,
        window: &Tensor,
        targets: &[f64],
        denoise: ChannelDenoise<'_>,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let (out, pv) = self.forward_graph(&mut g, window, true, denoise)?;
        let t = g.constant(Tensor::new(vec![targets.len()], targets.to_vec())?);
        let loss = g.mse_loss(out, t)?;
        g.backward(loss)?;
        Ok((g.value(loss).item()?, pv.iter().map(|&v| g.grad(v)).collect()))
    }

    /// MSE alone (no gradient).
    pub fn loss(&self, window: &Tensor, targets: &[f64], denoise: ChannelDenoise<'_>) -> Result<f64> {
        let mut g = Graph::new();
        let (out, _) = self.forward_graph(&mut g, window, false, denoise)?;
        let t = g.constant(Tensor::new(vec![targets.len()], targets.to_vec())?);
        let loss = g.mse_loss(out, t)?;
        g.value(loss).item()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let c = &self.config;
        let meta = [
            ("input_window", c.input_window.to_string()),
            ("predict_days", c.predict_days.to_string()),
            ("feature_width", c.feature_width.to_string()),
            ("d_model", c.d_model.to_string()),
            ("n_heads", c.n_heads.to_string()),
            ("pool_k", c.pool_k.to_string()),
            ("seed", c.seed.to_string()),
        ];
        Checkpoint {
            meta: meta.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            tensors: Param::ALL.iter().map(|&p| (p.name().to_string(), self.param(p).clone())).collect(),
        }
    }

    /// Loads parameters for `config`; every tensor must be present with the
    /// shape `config` implies.
    pub fn from_checkpoint(config: ModelConfig, ckpt: &Checkpoint) -> Result<Self> {
        let mut model = Self::new(config)?;
        for p in Param::ALL {
            let t = ckpt.tensor(p.name()).ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", p.name())))?;
            let expected = p.shape(&config);
            if t.shape() != expected {
                return Err(Error::Checkpoint(format!(
                    "{}: expected shape {:?}, found {:?}",
                    p.name(),
                    expected,
                    t.shape()
                )));
            }
            model.params[p as usize] = t.clone();
        }
        Ok(model)
    }
}
