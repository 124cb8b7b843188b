//! CRNN backbone with ACCDOA output, environment extractor and attenuation network.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTensor;
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{BnMode, Graph, ParamSet, Scalar, Tensor, Var};
use crate::scene::{LabelRow, LABEL_HOP_S};

pub const N_BLOCKS: usize = 4;
pub const BN_MOMENTUM: f64 = 0.01;
pub const ACCDOA_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub n_mels: usize,
    pub conv_channels: [usize; N_BLOCKS],
    pub pool_time: [usize; N_BLOCKS],
    pub pool_freq: [usize; N_BLOCKS],
    pub gru_hidden: usize,
    pub n_classes: usize,
    /// Feature frame hop in seconds.
    pub frame_hop_s: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            in_channels: 7,
            n_mels: 64,
            conv_channels: [16, 32, 64, 128],
            pool_time: [1, 1, 2, 2],
            pool_freq: [4, 4, 2, 2],
            gru_hidden: 64,
            n_classes: 5,
            frame_hop_s: 320.0 / 24_000.0,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let fp: usize = self.pool_freq.iter().product();
        if self.in_channels == 0 || self.n_classes == 0 || self.gru_hidden == 0 || self.conv_channels.contains(&0) {
            return Err(Error::Config("backbone sizes must be positive".into()));
        }
        if self.pool_time.contains(&0) || self.pool_freq.contains(&0) || fp > self.n_mels {
            return Err(Error::Config(format!("pooling {:?} does not fit {} mel bins", self.pool_freq, self.n_mels)));
        }
        if !(self.frame_hop_s > 0.0) {
            return Err(Error::Config("frame_hop_s must be positive".into()));
        }
        Ok(())
    }

    /// Number of layers `p`: each conv, each batch norm, the GRU and the output layer.
    pub fn n_layers(&self) -> usize {
        2 * N_BLOCKS + 2
    }

    /// Frequency size after each block.
    pub fn freq_sizes(&self) -> [usize; N_BLOCKS] {
        let mut f = self.n_mels;
        std::array::from_fn(|i| {
            f /= self.pool_freq[i];
            f
        })
    }

    pub fn time_pool(&self) -> usize {
        self.pool_time.iter().product()
    }

    /// Output frames for `t` input frames.
    pub fn out_frames(&self, t: usize) -> usize {
        self.pool_time.iter().fold(t, |t, p| t / p)
    }

    pub fn gru_input(&self) -> usize {
        self.conv_channels[N_BLOCKS - 1] * self.freq_sizes()[N_BLOCKS - 1]
    }
}

/// Attenuation network input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AttenuationInput {
    /// Free per-layer logits.
    None,
    /// Per-layer statistics of the support-loss gradient.
    Gradients,
    /// Environment representations from the extractor.
    Representations,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttenuationConfig {
    pub input: AttenuationInput,
    pub hidden: usize,
    /// Initial attenuation value produced for any input.
    pub init_lambda: f64,
}

impl Default for AttenuationConfig {
    fn default() -> Self {
        Self { input: AttenuationInput::Representations, hidden: 1024, init_lambda: 0.95 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    /// Environment representation size `D`, split equally over the conv blocks.
    pub env_dim: usize,
    pub attenuation: AttenuationConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { backbone: BackboneConfig::default(), env_dim: 2048, attenuation: AttenuationConfig::default() }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.env_dim == 0 || self.env_dim % N_BLOCKS != 0 {
            return Err(Error::Config(format!("env_dim {} must be a positive multiple of {N_BLOCKS}", self.env_dim)));
        }
        if self.attenuation.hidden == 0 || !(self.attenuation.init_lambda > 0.0 && self.attenuation.init_lambda < 1.0) {
            return Err(Error::Config("attenuation hidden must be positive and init_lambda in (0,1)".into()));
        }
        Ok(())
    }
}

fn normal_tensor(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let d = Normal::new(0.0, std).unwrap();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| d.sample(rng) as f32).collect())
}

fn uniform_tensor(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let d = Uniform::new_inclusive(-bound, bound);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| d.sample(rng) as f32).collect())
}

/// Random backbone parameters Θ.
pub fn init_backbone(cfg: &BackboneConfig, rng: &mut ChaCha8Rng) -> Result<ParamSet<f32>> {
    cfg.validate()?;
    let mut p = ParamSet::new();
    let mut cin = cfg.in_channels;
    for (b, &cout) in cfg.conv_channels.iter().enumerate() {
        let std = (2.0 / (cin * 9) as f64).sqrt();
        p.insert(&format!("conv{}.w", b + 1), 2 * b + 1, normal_tensor(&[cout, cin, 3, 3], std, rng))?;
        p.insert(&format!("bn{}.gamma", b + 1), 2 * b + 2, Tensor::full(&[cout], 1.0))?;
        p.insert(&format!("bn{}.beta", b + 1), 2 * b + 2, Tensor::zeros(&[cout]))?;
        cin = cout;
    }
    let (d, h) = (cfg.gru_input(), cfg.gru_hidden);
    let bound = 1.0 / (h as f64).sqrt();
    let gl = 2 * N_BLOCKS + 1;
    for dir in ["f", "b"] {
        p.insert(&format!("gru.w_ih_{dir}"), gl, uniform_tensor(&[3 * h, d], bound, rng))?;
        p.insert(&format!("gru.w_hh_{dir}"), gl, uniform_tensor(&[3 * h, h], bound, rng))?;
        p.insert(&format!("gru.b_ih_{dir}"), gl, uniform_tensor(&[3 * h], bound, rng))?;
        p.insert(&format!("gru.b_hh_{dir}"), gl, uniform_tensor(&[3 * h], bound, rng))?;
    }
    let out = 3 * cfg.n_classes;
    let xav = (6.0 / (2 * h + out) as f64).sqrt();
    p.insert("fc.w", gl + 1, uniform_tensor(&[out, 2 * h], xav, rng))?;
    p.insert("fc.b", gl + 1, Tensor::zeros(&[out]))?;
    Ok(p)
}

/// Batch-norm running statistics, one `(mean, var)` pair per block.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<Vec<f32>>,
    pub var: Vec<Vec<f32>>,
}

impl RunningStats {
    pub fn new(cfg: &BackboneConfig) -> Self {
        Self {
            mean: cfg.conv_channels.iter().map(|c| vec![0.0; *c]).collect(),
            var: cfg.conv_channels.iter().map(|c| vec![1.0; *c]).collect(),
        }
    }

    /// Moves each statistic a fraction `momentum` toward the batch statistics
    /// (unbiased variance) recorded by a training-mode forward pass.
    pub fn update<T: Scalar>(&mut self, g: &Graph<T>, out: &BackboneOut, momentum: f64) {
        self.absorb(&BnBatch::collect(g, out), momentum);
    }

    pub fn absorb(&mut self, batch: &BnBatch, momentum: f64) {
        for (i, (m, s)) in batch.mean.iter().zip(&batch.var).enumerate() {
            let count = batch.count[i] as f64;
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            for c in 0..m.len() {
                let rm = &mut self.mean[i][c];
                *rm = ((1.0 - momentum) * *rm as f64 + momentum * m[c]) as f32;
                let rv = &mut self.var[i][c];
                *rv = ((1.0 - momentum) * *rv as f64 + momentum * s[c] * unbias) as f32;
            }
        }
    }

    pub fn to_params(&self) -> ParamSet<f32> {
        let mut p = ParamSet::new();
        for (i, (m, v)) in self.mean.iter().zip(&self.var).enumerate() {
            p.insert(&format!("bn{}.running_mean", i + 1), 2 * i + 2, Tensor::new(vec![m.len()], m.clone())).unwrap();
            p.insert(&format!("bn{}.running_var", i + 1), 2 * i + 2, Tensor::new(vec![v.len()], v.clone())).unwrap();
        }
        p
    }

    pub fn from_params(p: &ParamSet<f32>, cfg: &BackboneConfig) -> Result<Self> {
        let mut s = Self::new(cfg);
        for i in 0..N_BLOCKS {
            for (name, dst) in [("running_mean", &mut s.mean[i]), ("running_var", &mut s.var[i])] {
                let t = p
                    .get(&format!("bn{}.{name}", i + 1))
                    .filter(|t| t.len() == dst.len())
                    .ok_or_else(|| Error::Format(format!("missing or mis-sized bn{}.{name}", i + 1)))?;
                dst.copy_from_slice(&t.data);
            }
        }
        Ok(s)
    }
}

/// Biased batch statistics of each block from one training-mode pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BnBatch {
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
    pub count: Vec<usize>,
}

impl BnBatch {
    pub fn collect<T: Scalar>(g: &Graph<T>, out: &BackboneOut) -> Self {
        let mut b = BnBatch { mean: Vec::new(), var: Vec::new(), count: Vec::new() };
        for (i, v) in out.bn_nodes.iter().enumerate() {
            if let Some((m, s)) = g.batch_stats(*v) {
                b.mean.push(m.iter().map(|x| x.to_f64().unwrap()).collect());
                b.var.push(s.iter().map(|x| x.to_f64().unwrap()).collect());
                b.count.push(out.bn_counts[i]);
            }
        }
        b
    }
}

/// Which statistics batch norm uses in a forward pass.
#[derive(Clone, Copy, Debug)]
pub enum BnUse<'a> {
    Batch,
    Running(&'a RunningStats),
}

pub struct BackboneOut {
    /// `[B, L, 3M]`, per label frame and class an (x, y, z) vector.
    pub accdoa: Var,
    /// Output of each conv block, `[B, C, T, F]`.
    pub maps: Vec<Var>,
    pub bn_nodes: Vec<Var>,
    bn_counts: Vec<usize>,
}

/// `[L, T']` matrix averaging output frames into label frames by frame center.
pub fn frame_pool_matrix(cfg: &BackboneConfig, t_in: usize, n_labels: usize) -> Tensor<f64> {
    let t_out = cfg.out_frames(t_in);
    let pt = cfg.time_pool() as f64;
    let center = |j: usize| (j as f64 * pt + (pt - 1.0) / 2.0) * cfg.frame_hop_s;
    let mut a = vec![0.0; n_labels * t_out];
    for l in 0..n_labels {
        let mut members: Vec<usize> = (0..t_out).filter(|j| ((center(*j) / LABEL_HOP_S) + 1e-9).floor() as usize == l).collect();
        if members.is_empty() && t_out > 0 {
            let mid = (l as f64 + 0.5) * LABEL_HOP_S;
            let best = (0..t_out).min_by(|x, y| (center(*x) - mid).abs().total_cmp(&(center(*y) - mid).abs())).unwrap();
            members.push(best);
        }
        for j in &members {
            a[l * t_out + j] = 1.0 / members.len() as f64;
        }
    }
    Tensor::new(vec![n_labels, t_out], a)
}

/// Label frames covered by `t_in` feature frames.
pub fn label_frames(cfg: &BackboneConfig, t_in: usize) -> usize {
    (((t_in - 1) as f64 * cfg.frame_hop_s) / LABEL_HOP_S + 1e-9).floor() as usize
}

/// Forward pass of Θ (given as graph vars in [`init_backbone`] order) on `[B,C,T,F]` input.
pub fn backbone_forward<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &BackboneConfig,
    theta: &[Var],
    x: Var,
    bn: BnUse<'_>,
    pool: &Tensor<T>,
) -> Result<BackboneOut> {
    if theta.len() != 3 * N_BLOCKS + 10 {
        return Err(Error::shape("backbone_forward", format!("{} parameter vars", theta.len())));
    }
    let sx = g.shape(x).to_vec();
    if sx.len() != 4 || sx[1] != cfg.in_channels || sx[3] != cfg.n_mels {
        return Err(Error::shape("backbone_forward", format!("input {sx:?}, expected [B, {}, T, {}]", cfg.in_channels, cfg.n_mels)));
    }
    let mut h = x;
    let mut maps = Vec::with_capacity(N_BLOCKS);
    let mut bn_nodes = Vec::with_capacity(N_BLOCKS);
    let mut bn_counts = Vec::with_capacity(N_BLOCKS);
    for b in 0..N_BLOCKS {
        let (w, gamma, beta) = (theta[3 * b], theta[3 * b + 1], theta[3 * b + 2]);
        let c = g.conv2d(h, w, None)?;
        let s = g.shape(c).to_vec();
        let n = match bn {
            BnUse::Batch => g.batch_norm(c, gamma, beta, BnMode::Train)?,
            BnUse::Running(rs) => {
                let mean: Vec<T> = rs.mean[b].iter().map(|v| T::of(*v as f64)).collect();
                let var: Vec<T> = rs.var[b].iter().map(|v| T::of(*v as f64)).collect();
                g.batch_norm(c, gamma, beta, BnMode::Eval { mean: &mean, var: &var })?
            }
        };
        bn_nodes.push(n);
        bn_counts.push(s[0] * s[2] * s[3]);
        let r = g.relu(n);
        let pt = cfg.pool_time[b].min(g.shape(r)[2].max(1));
        h = g.max_pool2d(r, pt, cfg.pool_freq[b])?;
        maps.push(h);
    }
    let s = g.shape(h).to_vec();
    let (bn_, c4, t4, f4) = (s[0], s[1], s[2], s[3]);
    let seq = g.permute(h, &[0, 2, 1, 3])?;
    let seq = g.reshape(seq, &[bn_, t4, c4 * f4])?;
    let gp = &theta[3 * N_BLOCKS..3 * N_BLOCKS + 8];
    let rnn = g.bigru(seq, [gp[0], gp[1], gp[2], gp[3], gp[4], gp[5], gp[6], gp[7]])?;
    let fc = g.linear(rnn, theta[3 * N_BLOCKS + 8], Some(theta[3 * N_BLOCKS + 9]))?;
    let act = g.tanh(fc);
    let accdoa = g.frame_pool(act, pool.clone())?;
    Ok(BackboneOut { accdoa, maps, bn_nodes, bn_counts })
}

/// Stacks feature tensors into a `[B,C,T,F]` batch.
pub fn stack_features<T: Scalar>(items: &[&FeatureTensor]) -> Result<Tensor<T>> {
    let Some(first) = items.first() else {
        return Err(Error::shape("stack_features", "empty batch"));
    };
    let (c, t, f) = (first.channels, first.frames, first.mels);
    let mut data = Vec::with_capacity(items.len() * c * t * f);
    for x in items {
        if (x.channels, x.frames, x.mels) != (c, t, f) {
            return Err(Error::shape("stack_features", format!("{}x{}x{} vs {c}x{t}x{f}", x.channels, x.frames, x.mels)));
        }
        data.extend(x.data.iter().map(|v| T::of(*v as f64)));
    }
    Ok(Tensor::new(vec![items.len(), c, t, f], data))
}

/// ACCDOA target `[L, 3M]`: unit DOA where a class is active, zero elsewhere.
/// When a class has several simultaneous tracks the lowest track index wins.
pub fn labels_to_target(labels: &[LabelRow], n_frames: usize, n_classes: usize) -> Result<Vec<f32>> {
    let mut out = vec![0.0f32; n_frames * 3 * n_classes];
    let mut best = vec![usize::MAX; n_frames * n_classes];
    for l in labels {
        if l.frame >= n_frames || l.class_idx >= n_classes {
            return Err(Error::Data(format!("label frame {} class {} outside {n_frames}x{n_classes}", l.frame, l.class_idx)));
        }
        let k = l.frame * n_classes + l.class_idx;
        if l.track_idx < best[k] {
            best[k] = l.track_idx;
            for d in 0..3 {
                out[3 * k + d] = l.doa[d] as f32;
            }
        }
    }
    Ok(out)
}

pub fn accdoa_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Tensor<T>) -> Result<Var> {
    g.mse(pred, target)
}

/// Active `(class, unit DOA)` pairs per frame of an `[L, 3M]` prediction.
pub fn accdoa_decode(pred: &[f32], n_classes: usize, threshold: f64) -> Result<Vec<Vec<(usize, [f64; 3])>>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0,1)")));
    }
    if n_classes == 0 || pred.len() % (3 * n_classes) != 0 {
        return Err(Error::shape("accdoa_decode", format!("{} values for {n_classes} classes", pred.len())));
    }
    Ok(pred
        .chunks_exact(3 * n_classes)
        .map(|frame| {
            frame
                .chunks_exact(3)
                .enumerate()
                .filter_map(|(c, v)| {
                    let v = [v[0] as f64, v[1] as f64, v[2] as f64];
                    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                    (n > threshold).then(|| (c, [v[0] / n, v[1] / n, v[2] / n]))
                })
                .collect()
        })
        .collect())
}

/// Extractor Ω: one linear map per conv block from `[mean, weighted mean]` to a slice of `D`.
pub fn init_extractor(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<ParamSet<f32>> {
    cfg.validate()?;
    let slice = cfg.env_dim / N_BLOCKS;
    let fs = cfg.backbone.freq_sizes();
    let mut p = ParamSet::new();
    for b in 0..N_BLOCKS {
        let fan_in = 2 * cfg.backbone.conv_channels[b] * fs[b];
        let bound = 1.0 / (fan_in as f64).sqrt();
        p.insert(&format!("ext{}.w", b + 1), b + 1, uniform_tensor(&[slice, fan_in], bound, rng))?;
        p.insert(&format!("ext{}.b", b + 1), b + 1, uniform_tensor(&[slice], bound, rng))?;
    }
    Ok(p)
}

/// Environment representation `[D]` from the block maps of one support batch.
pub fn extract_env_representation<T: Scalar>(g: &mut Graph<T>, omega: &[Var], maps: &[Var]) -> Result<Var> {
    if maps.len() != N_BLOCKS || omega.len() != 2 * N_BLOCKS {
        return Err(Error::shape("extract_env_representation", format!("{} maps, {} extractor vars", maps.len(), omega.len())));
    }
    let mut slices = Vec::with_capacity(N_BLOCKS);
    for (b, m) in maps.iter().enumerate() {
        if g.shape(*m).first() == Some(&0) {
            return Err(Error::shape("extract_env_representation", "empty support batch"));
        }
        let stats = g.pool_stats(*m)?;
        let n = g.shape(stats)[0];
        let stats = g.reshape(stats, &[1, n])?;
        slices.push(g.linear(stats, omega[2 * b], Some(omega[2 * b + 1]))?);
    }
    let e = g.concat(&slices)?;
    let d = g.shape(e)[1];
    g.reshape(e, &[d])
}

/// Input size of the attenuation network for a mode.
pub fn attenuation_input_dim(cfg: &ModelConfig) -> usize {
    match cfg.attenuation.input {
        AttenuationInput::None => 0,
        AttenuationInput::Gradients => 3 * cfg.backbone.n_layers(),
        AttenuationInput::Representations => cfg.env_dim,
    }
}

/// Φ. `None` mode holds one free logit per layer; otherwise a two-layer MLP.
pub fn init_attenuation(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<ParamSet<f32>> {
    cfg.validate()?;
    let p_layers = cfg.backbone.n_layers();
    let a = &cfg.attenuation;
    let logit = (a.init_lambda / (1.0 - a.init_lambda)).ln() as f32;
    let mut p = ParamSet::new();
    if a.input == AttenuationInput::None {
        p.insert("att.logits", 1, Tensor::full(&[p_layers], logit))?;
        return Ok(p);
    }
    let d = attenuation_input_dim(cfg);
    let b1 = 1.0 / (d as f64).sqrt();
    p.insert("att.w1", 1, uniform_tensor(&[a.hidden, d], b1, rng))?;
    p.insert("att.b1", 1, uniform_tensor(&[a.hidden], b1, rng))?;
    let b2 = 0.1 / (a.hidden as f64).sqrt();
    p.insert("att.w2", 2, uniform_tensor(&[p_layers, a.hidden], b2, rng))?;
    p.insert("att.b2", 2, Tensor::full(&[p_layers], logit))?;
    Ok(p)
}

/// λ `[p]` in (0, 1). `input` is required except in `None` mode.
pub fn attenuation_forward<T: Scalar>(g: &mut Graph<T>, mode: AttenuationInput, phi: &[Var], input: Option<Var>) -> Result<Var> {
    match (mode, input) {
        (AttenuationInput::None, _) => {
            if phi.len() != 1 {
                return Err(Error::shape("attenuate", format!("{} vars for free logits", phi.len())));
            }
            Ok(g.sigmoid(phi[0]))
        }
        (_, Some(x)) => {
            if phi.len() != 4 {
                return Err(Error::shape("attenuate", format!("{} vars for the attenuation MLP", phi.len())));
            }
            let n = g.value(x).len();
            let x = g.reshape(x, &[1, n])?;
            let h = g.linear(x, phi[0], Some(phi[1]))?;
            let h = g.relu(h);
            let o = g.linear(h, phi[2], Some(phi[3]))?;
            let o = g.sigmoid(o);
            let p = g.shape(o)[1];
            g.reshape(o, &[p])
        }
        (m, None) => Err(Error::InvalidArgument(format!("attenuation mode {m:?} needs an input vector"))),
    }
}

/// `Θ_i^l = λ^l · Θ^l` for every parameter var of layer `l` (1-based).
pub fn attenuate<T: Scalar>(g: &mut Graph<T>, theta: &[Var], layers: &[usize], lambda: Var) -> Result<Vec<Var>> {
    let p = g.shape(lambda).iter().product::<usize>();
    if theta.len() != layers.len() {
        return Err(Error::shape("attenuate", "layer list does not match parameters"));
    }
    theta
        .iter()
        .zip(layers)
        .map(|(v, l)| {
            if *l == 0 || *l > p {
                return Err(Error::shape("attenuate", format!("layer {l} outside 1..={p}")));
            }
            g.scale_by(*v, lambda, l - 1)
        })
        .collect()
}

/// Per-layer mean |g|, RMS g and max |g|, flattened layer-major (`3p` values).
pub fn gradient_summary<T: Scalar>(grads: &ParamSet<T>, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; 3 * p];
    for l in 1..=p {
        let vals: Vec<f64> = grads
            .iter()
            .filter(|(_, q)| q.layer == l)
            .flat_map(|(_, q)| q.value.data.iter().map(|v| v.to_f64().unwrap()))
            .collect();
        if vals.is_empty() {
            continue;
        }
        let n = vals.len() as f64;
        out[3 * (l - 1)] = vals.iter().map(|v| v.abs()).sum::<f64>() / n;
        out[3 * (l - 1) + 1] = (vals.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        out[3 * (l - 1) + 2] = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    }
    out
}

/// Θ, Ω, Φ and running statistics of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct SeldModel {
    pub config: ModelConfig,
    pub theta: ParamSet<f32>,
    pub omega: ParamSet<f32>,
    pub phi: ParamSet<f32>,
    pub running: RunningStats,
}

impl SeldModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = crate::rng::stream(seed, 0x7468);
        let theta = init_backbone(&config.backbone, &mut r)?;
        let mut r = crate::rng::stream(seed, 0x6f6d);
        let omega = init_extractor(&config, &mut r)?;
        let mut r = crate::rng::stream(seed, 0x7068);
        let phi = init_attenuation(&config, &mut r)?;
        let running = RunningStats::new(&config.backbone);
        Ok(Self { config, theta, omega, phi, running })
    }

    /// Layer index of each Θ parameter, in order.
    pub fn theta_layers(&self) -> Vec<usize> {
        self.theta.layers().collect()
    }

    pub fn to_checkpoint(&self, extra_config: &str) -> Checkpoint {
        let echo = toml::to_string(&self.config).unwrap_or_default();
        Checkpoint {
            sections: vec![
                ("theta".into(), self.theta.clone()),
                ("omega".into(), self.omega.clone()),
                ("phi".into(), self.phi.clone()),
                ("bn_running".into(), self.running.to_params()),
            ],
            optimizers: Vec::new(),
            config: format!("{echo}\n# run\n{extra_config}"),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let model_part = ck.config.split("\n# run\n").next().unwrap_or("");
        let config: ModelConfig = toml::from_str(model_part).map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        config.validate()?;
        let get = |n: &str| ck.section(n).cloned().ok_or_else(|| Error::Format(format!("checkpoint lacks section '{n}'")));
        let m = Self {
            theta: get("theta")?,
            omega: get("omega")?,
            phi: get("phi")?,
            running: RunningStats::from_params(&get("bn_running")?, &config.backbone)?,
            config,
        };
        let fresh = Self::new(m.config.clone(), 0)?;
        m.theta.check_aligned(&fresh.theta, "checkpoint").map_err(|_| Error::Format("theta does not match config".into()))?;
        m.omega.check_aligned(&fresh.omega, "checkpoint").map_err(|_| Error::Format("omega does not match config".into()))?;
        m.phi.check_aligned(&fresh.phi, "checkpoint").map_err(|_| Error::Format("phi does not match config".into()))?;
        Ok(m)
    }
}

/// Random unit vector, used by tests and toy tasks.
pub fn random_unit(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}
