//! Supervised training, first-order meta-training (with optional
//! environment-adaptive attenuation) and meta-test adaptation.

use std::path::Path;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{concat_clips, match_and_score, AttenuationReport, FrameEvents, MetricScores};
use crate::features::{FeatureExtractor, FeatureTensor};
use crate::model::*;
use crate::nn::optim::{adamw_step, sgd_step, AdamWConfig, AdamWState};
use crate::nn::{Graph, ParamSet, Tensor, Var};
use crate::scene::{read_labels, DatasetManifest, LabelRow};

/// Training regime.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Conventional supervised training.
    Seld,
    /// Meta-learning from random initialization.
    Meta,
    /// Meta-learning from a supervised initialization.
    #[value(name = "meta_pp")]
    MetaPp,
    /// Meta-learning with environment-adaptive attenuation of Θ.
    #[value(name = "env_adaptive")]
    EnvAdaptive,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Seld => "seld",
            Method::Meta => "meta",
            Method::MetaPp => "meta_pp",
            Method::EnvAdaptive => "env_adaptive",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    pub method: Method,
    /// Support clips per episode (`K`).
    pub k_support: usize,
    /// Episodes per outer update.
    pub room_batch: usize,
    /// Clips drawn per episode, support plus query.
    pub sample_batch: usize,
    /// Inner SGD steps (`N`).
    pub inner_steps: usize,
    /// Inner learning rate.
    pub alpha: f64,
    /// Outer learning rate.
    pub beta: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Forces λ ≡ 1 in env-adaptive mode.
    pub bypass_attenuation: bool,
    /// Skips the extractor forward pass and its updates.
    pub skip_extractor: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            method: Method::EnvAdaptive,
            k_support: 30,
            room_batch: 9,
            sample_batch: 128,
            inner_steps: 5,
            alpha: 0.001,
            beta: 0.0003,
            weight_decay: 0.01,
            epochs: 10,
            seed: 0,
            bypass_attenuation: false,
            skip_extractor: false,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_support == 0 || self.k_support >= self.sample_batch {
            return Err(Error::Config(format!("need 0 < k_support ({}) < sample_batch ({})", self.k_support, self.sample_batch)));
        }
        if self.inner_steps == 0 {
            return Err(Error::Config("inner_steps must be at least 1".into()));
        }
        if self.room_batch == 0 {
            return Err(Error::Config("room_batch must be positive".into()));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Config("learning rates and weight decay must be non-negative".into()));
        }
        Ok(())
    }

    fn attenuation(&self, input: AttenuationInput) -> Result<Atten> {
        Ok(match self.method {
            Method::Seld => return Err(Error::Config("method 'seld' is trained with train_supervised".into())),
            Method::Meta | Method::MetaPp => Atten::Off,
            Method::EnvAdaptive if self.bypass_attenuation => Atten::Bypass,
            Method::EnvAdaptive => {
                if self.skip_extractor && input == AttenuationInput::Representations {
                    return Err(Error::Config("representation-input attenuation needs the extractor".into()));
                }
                Atten::Learned
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupervisedConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// The learning rate is multiplied by `decay` every `decay_every` epochs.
    pub decay_every: usize,
    pub decay: f64,
    pub seed: u64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self { lr: 1e-3, weight_decay: 0.01, epochs: 20, batch_size: 16, decay_every: 10, decay: 0.9, seed: 0 }
    }
}

impl SupervisedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.decay_every == 0 {
            return Err(Error::Config("batch_size and decay_every must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.weight_decay >= 0.0 && self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config("invalid learning-rate schedule".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Atten {
    Off,
    Bypass,
    Learned,
}

/// One labeled clip with its features and ACCDOA target.
#[derive(Clone, Debug)]
pub struct Clip {
    pub id: String,
    pub features: FeatureTensor,
    /// Labels inside the covered label frames.
    pub labels: Vec<LabelRow>,
    pub n_labels: usize,
    /// `[L, 3M]`.
    pub target: Vec<f32>,
}

impl Clip {
    pub fn new(id: impl Into<String>, features: FeatureTensor, labels: &[LabelRow], cfg: &BackboneConfig) -> Result<Self> {
        if features.frames < 2 {
            return Err(Error::Data("clip shorter than two feature frames".into()));
        }
        let n_labels = label_frames(cfg, features.frames);
        let labels: Vec<LabelRow> = labels.iter().filter(|l| l.frame < n_labels).cloned().collect();
        let target = labels_to_target(&labels, n_labels, cfg.n_classes)?;
        Ok(Self { id: id.into(), features, labels, n_labels, target })
    }

    pub fn reference(&self) -> Result<FrameEvents> {
        FrameEvents::from_labels(&self.labels, self.n_labels)
    }
}

/// Clips of one environment, sorted by id.
#[derive(Clone, Debug)]
pub struct EnvData {
    pub id: String,
    pub clips: Vec<Clip>,
}

impl EnvData {
    pub fn new(id: impl Into<String>, mut clips: Vec<Clip>) -> Self {
        clips.sort_by(|a, b| a.id.cmp(&b.id));
        Self { id: id.into(), clips }
    }
}

/// Reads and featurizes every clip of a manifest, grouped by environment.
pub fn load_environments(manifest: &DatasetManifest, fe: &FeatureExtractor, cfg: &BackboneConfig) -> Result<Vec<EnvData>> {
    manifest
        .env_ids
        .iter()
        .map(|env| {
            let files: Vec<_> = manifest.clips_of(env).collect();
            let clips = files
                .par_iter()
                .map(|c| {
                    let (audio, fs) = crate::audio::read_wav(&c.wav)?;
                    if fs != manifest.fs {
                        return Err(Error::Data(format!("{}: sample rate {fs}, manifest says {}", c.wav.display(), manifest.fs)));
                    }
                    let feats = fe.extract(&audio)?;
                    let labels = read_labels(&c.csv)?;
                    let id = c.wav.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    Clip::new(id, feats, &labels, cfg)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(EnvData::new(env.clone(), clips))
        })
        .collect()
}

/// Network inputs for a set of clips.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Tensor<f32>,
    /// `[B, L, 3M]`.
    pub target: Tensor<f32>,
    pub pool: Tensor<f32>,
}

impl Batch {
    pub fn new(cfg: &BackboneConfig, clips: &[&Clip]) -> Result<Self> {
        let feats: Vec<&FeatureTensor> = clips.iter().map(|c| &c.features).collect();
        let x = stack_features::<f32>(&feats)?;
        let l = clips[0].n_labels;
        if clips.iter().any(|c| c.n_labels != l) {
            return Err(Error::shape("batch", "clips cover different label frames"));
        }
        let m3 = 3 * cfg.n_classes;
        let target = Tensor::new(vec![clips.len(), l, m3], clips.iter().flat_map(|c| c.target.iter().copied()).collect());
        let pool = frame_pool_matrix(cfg, x.shape[2], l).cast::<f32>();
        Ok(Self { x, target, pool })
    }

    pub fn len(&self) -> usize {
        self.x.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn finite(loss: f64, what: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Divergence(format!("{what} loss is {loss}")))
    }
}

/// Batch-statistics loss of Θ on a batch, with its gradient.
pub fn loss_and_grad(cfg: &BackboneConfig, theta: &ParamSet<f32>, batch: &Batch) -> Result<(f64, ParamSet<f32>, BnBatch)> {
    let mut g = Graph::new();
    let vars = theta.to_vars(&mut g, true);
    let x = g.constant(batch.x.clone());
    let out = backbone_forward(&mut g, cfg, &vars, x, BnUse::Batch, &batch.pool)?;
    let loss = accdoa_loss(&mut g, out.accdoa, batch.target.clone())?;
    let l = finite(g.value(loss).item() as f64, "training")?;
    let bn = BnBatch::collect(&g, &out);
    let grads = g.backward(loss)?;
    Ok((l, theta.grads_of(&grads, &vars), bn))
}

/// Predictions `[B, L, 3M]` and loss of Θ on a batch.
pub fn evaluate_batch(cfg: &BackboneConfig, theta: &ParamSet<f32>, batch: &Batch, bn: BnUse<'_>) -> Result<(Vec<f32>, f64)> {
    let mut g = Graph::new();
    let vars = theta.to_vars(&mut g, false);
    let x = g.constant(batch.x.clone());
    let out = backbone_forward(&mut g, cfg, &vars, x, bn, &batch.pool)?;
    let loss = accdoa_loss(&mut g, out.accdoa, batch.target.clone())?;
    let l = finite(g.value(loss).item() as f64, "evaluation")?;
    Ok((g.value(out.accdoa).data.clone(), l))
}

/// `N` SGD steps on the support loss, starting from `theta_init`. Returns
/// the adapted parameters and the loss before each step.
pub fn inner_adapt(cfg: &BackboneConfig, theta_init: &ParamSet<f32>, support: &Batch, alpha: f64, n: usize) -> Result<(ParamSet<f32>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::InvalidArgument("inner adaptation needs at least one step".into()));
    }
    let mut theta = theta_init.clone();
    let mut losses = Vec::with_capacity(n);
    for _ in 0..n {
        let (l, grad, _) = loss_and_grad(cfg, &theta, support)?;
        losses.push(l);
        theta = sgd_step(&theta, &grad, alpha as f32)?;
    }
    if !theta.is_finite() {
        return Err(Error::Divergence("inner loop produced non-finite parameters".into()));
    }
    Ok((theta, losses))
}

/// Adds λ to `g`: extractor (Θ held constant) and attenuation network.
fn lambda_in_graph(
    g: &mut Graph<f32>,
    model: &SeldModel,
    support: &Batch,
    omega: Option<&[Var]>,
    phi: &[Var],
) -> Result<Var> {
    let cfg = &model.config;
    let mode = cfg.attenuation.input;
    let input = match mode {
        AttenuationInput::None => None,
        AttenuationInput::Gradients => {
            let (_, grad, _) = loss_and_grad(&cfg.backbone, &model.theta, support)?;
            let s = gradient_summary(&grad, cfg.backbone.n_layers());
            Some(g.constant(Tensor::new(vec![s.len()], s.iter().map(|v| *v as f32).collect())))
        }
        AttenuationInput::Representations => {
            let omega = omega.ok_or_else(|| Error::InvalidArgument("representation input without extractor".into()))?;
            let tv = model.theta.to_vars(g, false);
            let x = g.constant(support.x.clone());
            let out = backbone_forward(g, &cfg.backbone, &tv, x, BnUse::Running(&model.running), &support.pool)?;
            Some(extract_env_representation(g, omega, &out.maps)?)
        }
    };
    attenuation_forward(g, mode, phi, input)
}

fn values_of(template: &ParamSet<f32>, g: &Graph<f32>, vars: &[Var]) -> ParamSet<f32> {
    let mut out = template.clone();
    for (t, v) in out.values_mut().zip(vars) {
        *t = g.value(*v).clone();
    }
    out
}

/// Result of one episode's forward and backward pass.
#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    pub theta_grad: ParamSet<f32>,
    pub omega_grad: Option<ParamSet<f32>>,
    pub phi_grad: Option<ParamSet<f32>>,
    /// Support loss before the first inner step.
    pub inner_start_loss: f64,
    /// Query loss of the adapted parameters.
    pub query_loss: f64,
    pub lambda: Option<Vec<f64>>,
    pub bn: BnBatch,
}

/// First-order meta-gradients of one episode.
///
/// Θ (and in env-adaptive mode Θ_i = λ⊙Θ) is routed to the query forward
/// pass through a straight-through node holding the adapted values, so the
/// query-loss gradient at Θ′ lands on Θ, and through λ on Φ and Ω.
pub fn episode_meta_grads(model: &SeldModel, support: &Batch, query: &Batch, mc: &MetaConfig) -> Result<EpisodeOutcome> {
    let cfg = &model.config;
    let atten = mc.attenuation(cfg.attenuation.input)?;
    let mut g = Graph::new();
    let theta_vars = model.theta.to_vars(&mut g, true);
    let layers = model.theta_layers();
    let mut omega_vars = None;
    let mut phi_vars = None;
    let (start, lambda) = match atten {
        Atten::Off => (theta_vars.clone(), None),
        Atten::Bypass => {
            let ones = g.constant(Tensor::full(&[cfg.backbone.n_layers()], 1.0));
            (attenuate(&mut g, &theta_vars, &layers, ones)?, Some(ones))
        }
        Atten::Learned => {
            let pv = model.phi.to_vars(&mut g, true);
            if cfg.attenuation.input == AttenuationInput::Representations {
                omega_vars = Some(model.omega.to_vars(&mut g, true));
            }
            let lam = lambda_in_graph(&mut g, model, support, omega_vars.as_deref(), &pv)?;
            phi_vars = Some(pv);
            (attenuate(&mut g, &theta_vars, &layers, lam)?, Some(lam))
        }
    };
    let theta_i = values_of(&model.theta, &g, &start);
    let (adapted, support_losses) = inner_adapt(&cfg.backbone, &theta_i, support, mc.alpha, mc.inner_steps)?;
    let adapted_vars = start
        .iter()
        .zip(adapted.values())
        .map(|(v, t)| g.straight_through(*v, t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let x = g.constant(query.x.clone());
    let out = backbone_forward(&mut g, &cfg.backbone, &adapted_vars, x, BnUse::Batch, &query.pool)?;
    let loss = accdoa_loss(&mut g, out.accdoa, query.target.clone())?;
    let query_loss = finite(g.value(loss).item() as f64, "query")?;
    let bn = BnBatch::collect(&g, &out);
    let lambda_values = lambda.map(|l| g.value(l).data.iter().map(|v| *v as f64).collect());
    let grads = g.backward(loss)?;
    Ok(EpisodeOutcome {
        theta_grad: model.theta.grads_of(&grads, &theta_vars),
        omega_grad: omega_vars.map(|v| model.omega.grads_of(&grads, &v)),
        phi_grad: phi_vars.map(|v| model.phi.grads_of(&grads, &v)),
        inner_start_loss: support_losses[0],
        query_loss,
        lambda: lambda_values,
        bn,
    })
}

/// Optimizer state of a meta-training run.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaState {
    pub theta: AdamWState<f32>,
    pub omega: AdamWState<f32>,
    pub phi: AdamWState<f32>,
}

impl MetaState {
    pub fn new(model: &SeldModel, mc: &MetaConfig) -> Self {
        let c = AdamWConfig { lr: mc.beta, weight_decay: mc.weight_decay, ..AdamWConfig::default() };
        Self { theta: AdamWState::new(&model.theta, c), omega: AdamWState::new(&model.omega, c), phi: AdamWState::new(&model.phi, c) }
    }
}

fn mean_grads(items: impl Iterator<Item = ParamSet<f32>>) -> Result<Option<ParamSet<f32>>> {
    let mut acc: Option<ParamSet<f32>> = None;
    let mut n = 0usize;
    for g in items {
        acc = Some(match acc {
            None => g.zeros_like().zip_map(&g, "mean_grads", |a, b| a + b)?,
            Some(a) => a.zip_map(&g, "mean_grads", |a, b| a + b)?,
        });
        n += 1;
    }
    Ok(acc.map(|a| {
        let inv = 1.0 / n as f32;
        a.map(|v| v * inv)
    }))
}

/// Mean losses of one outer update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub inner_start_loss: f64,
    pub query_loss: f64,
}

/// Runs the episodes (in parallel), averages their meta-gradients in order
/// and applies one AdamW step to every trained parameter group.
pub fn meta_outer_step(model: &mut SeldModel, state: &mut MetaState, episodes: &[(Batch, Batch)], mc: &MetaConfig) -> Result<StepStats> {
    if episodes.is_empty() {
        return Err(Error::InvalidArgument("outer step without episodes".into()));
    }
    let atten = mc.attenuation(model.config.attenuation.input)?;
    let m: &SeldModel = model;
    let outcomes = episodes
        .par_iter()
        .map(|(s, q)| episode_meta_grads(m, s, q, mc))
        .collect::<Result<Vec<_>>>()?;
    let k = outcomes.len() as f64;
    let stats = StepStats {
        inner_start_loss: outcomes.iter().map(|o| o.inner_start_loss).sum::<f64>() / k,
        query_loss: outcomes.iter().map(|o| o.query_loss).sum::<f64>() / k,
    };
    let gt = mean_grads(outcomes.iter().map(|o| o.theta_grad.clone()))?.expect("nonempty");
    let (theta, st) = adamw_step(&model.theta, &gt, &state.theta)?;
    model.theta = theta;
    state.theta = st;
    if atten == Atten::Learned {
        if let Some(gp) = mean_grads(outcomes.iter().filter_map(|o| o.phi_grad.clone()))? {
            let (phi, st) = adamw_step(&model.phi, &gp, &state.phi)?;
            model.phi = phi;
            state.phi = st;
        }
        if !mc.skip_extractor {
            if let Some(go) = mean_grads(outcomes.iter().filter_map(|o| o.omega_grad.clone()))? {
                let (omega, st) = adamw_step(&model.omega, &go, &state.omega)?;
                model.omega = omega;
                state.omega = st;
            }
        }
    }
    for o in &outcomes {
        model.running.absorb(&o.bn, BN_MOMENTUM);
    }
    if !(model.theta.is_finite() && model.phi.is_finite() && model.omega.is_finite()) {
        return Err(Error::Divergence("meta update produced non-finite parameters".into()));
    }
    Ok(stats)
}

/// Clip indices of one episode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    pub env: usize,
    pub support: Vec<usize>,
    pub query: Vec<usize>,
}

/// One episode per environment, in a random order. Each draws
/// `sample_batch` clips without replacement (fewer if the environment is
/// smaller) and splits them into `K` support and the rest query.
pub fn sample_episodes(envs: &[EnvData], mc: &MetaConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Episode>> {
    if envs.is_empty() {
        return Err(Error::InvalidArgument("no environments to sample".into()));
    }
    let mut order: Vec<usize> = (0..envs.len()).collect();
    order.shuffle(rng);
    order
        .into_iter()
        .map(|e| {
            let n = envs[e].clips.len();
            if n <= mc.k_support {
                return Err(Error::InsufficientClips { env: envs[e].id.clone(), have: n, need: mc.k_support });
            }
            let batch = if n < mc.sample_batch {
                log::warn!("environment {} has {n} clips; episode batch shrinks from {}", envs[e].id, mc.sample_batch);
                n
            } else {
                mc.sample_batch
            };
            let picked = index::sample(rng, n, batch).into_vec();
            Ok(Episode { env: e, support: picked[..mc.k_support].to_vec(), query: picked[mc.k_support..].to_vec() })
        })
        .collect()
}

/// One row of a training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    /// Mean support loss before adaptation (meta) or mean training loss (supervised).
    pub inner_start_loss: f64,
    /// Mean query loss after adaptation; absent for supervised training.
    pub query_loss: Option<f64>,
    pub wall_s: f64,
}

/// Writes a log without wall times, so reruns produce identical bytes.
pub fn write_log_csv(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "inner_start_loss", "query_loss"])?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            format!("{:.8}", r.inner_start_loss),
            r.query_loss.map(|q| format!("{q:.8}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn batch_of(cfg: &BackboneConfig, env: &EnvData, idx: &[usize]) -> Result<Batch> {
    let clips: Vec<&Clip> = idx.iter().map(|&i| &env.clips[i]).collect();
    Batch::new(cfg, &clips)
}

/// Meta-trains `model` in place with the configured method.
pub fn meta_train(model: &mut SeldModel, envs: &[EnvData], mc: &MetaConfig) -> Result<Vec<LogRow>> {
    mc.validate()?;
    mc.attenuation(model.config.attenuation.input)?;
    let cfg = model.config.backbone.clone();
    let mut rng = crate::rng::stream(mc.seed, 0x6d65_7461);
    let mut state = MetaState::new(model, mc);
    let start = Instant::now();
    let mut log = Vec::with_capacity(mc.epochs);
    for epoch in 0..mc.epochs {
        let eps = sample_episodes(envs, mc, &mut rng)?;
        let (mut s_sum, mut q_sum, mut n) = (0.0, 0.0, 0usize);
        for chunk in eps.chunks(mc.room_batch) {
            let batches = chunk
                .iter()
                .map(|e| Ok((batch_of(&cfg, &envs[e.env], &e.support)?, batch_of(&cfg, &envs[e.env], &e.query)?)))
                .collect::<Result<Vec<_>>>()?;
            let st = meta_outer_step(model, &mut state, &batches, mc)?;
            s_sum += st.inner_start_loss * chunk.len() as f64;
            q_sum += st.query_loss * chunk.len() as f64;
            n += chunk.len();
        }
        let row = LogRow {
            epoch,
            inner_start_loss: s_sum / n as f64,
            query_loss: Some(q_sum / n as f64),
            wall_s: start.elapsed().as_secs_f64(),
        };
        log::info!("{} epoch {epoch}: support {:.5} query {:.5}", mc.method.name(), row.inner_start_loss, q_sum / n as f64);
        log.push(row);
    }
    Ok(log)
}

/// Conventional AdamW training of Θ on all clips of all environments.
pub fn train_supervised(model: &mut SeldModel, envs: &[EnvData], sc: &SupervisedConfig) -> Result<Vec<LogRow>> {
    sc.validate()?;
    let cfg = model.config.backbone.clone();
    let items: Vec<(usize, usize)> = envs.iter().enumerate().flat_map(|(e, env)| (0..env.clips.len()).map(move |c| (e, c))).collect();
    if items.is_empty() {
        return Err(Error::Data("no training clips".into()));
    }
    let mut rng = crate::rng::stream(sc.seed, 0x7375_7076);
    let mut state = AdamWState::new(&model.theta, AdamWConfig { lr: sc.lr, weight_decay: sc.weight_decay, ..AdamWConfig::default() });
    let start = Instant::now();
    let mut log = Vec::with_capacity(sc.epochs);
    for epoch in 0..sc.epochs {
        state.config.lr = sc.lr * sc.decay.powi((epoch / sc.decay_every) as i32);
        let mut order = items.clone();
        order.shuffle(&mut rng);
        let (mut sum, mut n) = (0.0, 0usize);
        for chunk in order.chunks(sc.batch_size) {
            let clips: Vec<&Clip> = chunk.iter().map(|&(e, c)| &envs[e].clips[c]).collect();
            let batch = Batch::new(&cfg, &clips)?;
            let (l, grad, bn) = loss_and_grad(&cfg, &model.theta, &batch)?;
            let (theta, st) = adamw_step(&model.theta, &grad, &state)?;
            model.theta = theta;
            state = st;
            model.running.absorb(&bn, BN_MOMENTUM);
            sum += l * clips.len() as f64;
            n += clips.len();
        }
        if !model.theta.is_finite() {
            return Err(Error::Divergence(format!("non-finite parameters after epoch {epoch}")));
        }
        log::info!("supervised epoch {epoch}: loss {:.5}", sum / n as f64);
        log.push(LogRow { epoch, inner_start_loss: sum / n as f64, query_loss: None, wall_s: start.elapsed().as_secs_f64() });
    }
    Ok(log)
}

/// Settings of meta-test adaptation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub k_support: usize,
    pub inner_steps: usize,
    pub alpha: f64,
    pub threshold: f64,
    /// Applies extractor and attenuation before adapting (env-adaptive models).
    pub attenuate: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self { k_support: 30, inner_steps: 5, alpha: 0.001, threshold: ACCDOA_THRESHOLD, attenuate: false }
    }
}

#[derive(Clone, Debug)]
pub struct AdaptationResult {
    pub env_id: String,
    pub theta: ParamSet<f32>,
    pub lambda: Option<Vec<f64>>,
    /// Support loss before each inner step.
    pub support_losses: Vec<f64>,
    /// Query loss before adaptation.
    pub initial_query_loss: f64,
    /// Query loss after each inner step.
    pub query_losses: Vec<f64>,
    pub query_ids: Vec<String>,
    pub predictions: Vec<FrameEvents>,
    pub references: Vec<FrameEvents>,
    pub scores: MetricScores,
}

impl AdaptationResult {
    pub fn final_query_loss(&self) -> f64 {
        self.query_losses.last().copied().unwrap_or(self.initial_query_loss)
    }
}

/// λ for an environment's support clips.
pub fn environment_lambda(model: &SeldModel, support: &Batch) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let omega = model.omega.to_vars(&mut g, false);
    let phi = model.phi.to_vars(&mut g, false);
    let lam = lambda_in_graph(&mut g, model, support, Some(&omega), &phi)?;
    Ok(g.value(lam).data.iter().map(|v| *v as f64).collect())
}

/// Θ scaled layer-wise by λ.
pub fn attenuated(model: &SeldModel, lambda: &[f64]) -> Result<ParamSet<f32>> {
    let mut g = Graph::new();
    let tv = model.theta.to_vars(&mut g, false);
    let lam = g.constant(Tensor::new(vec![lambda.len()], lambda.iter().map(|v| *v as f32).collect()));
    let out = attenuate(&mut g, &tv, &model.theta_layers(), lam)?;
    Ok(values_of(&model.theta, &g, &out))
}

/// Environment representation of a batch of clips.
pub fn env_representation(model: &SeldModel, batch: &Batch) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let tv = model.theta.to_vars(&mut g, false);
    let omega = model.omega.to_vars(&mut g, false);
    let x = g.constant(batch.x.clone());
    let out = backbone_forward(&mut g, &model.config.backbone, &tv, x, BnUse::Running(&model.running), &batch.pool)?;
    let e = extract_env_representation(&mut g, &omega, &out.maps)?;
    Ok(g.value(e).data.iter().map(|v| *v as f64).collect())
}

/// Adapts to one environment on its first `K` clips and scores the rest.
/// With `inner_steps = 0` the unadapted Θ is scored.
pub fn meta_test_adapt(model: &SeldModel, env: &EnvData, ac: &AdaptConfig) -> Result<AdaptationResult> {
    let n = env.clips.len();
    if n <= ac.k_support || ac.k_support == 0 {
        return Err(Error::InsufficientClips { env: env.id.clone(), have: n, need: ac.k_support });
    }
    let cfg = &model.config.backbone;
    let support_idx: Vec<usize> = (0..ac.k_support).collect();
    let query_idx: Vec<usize> = (ac.k_support..n).collect();
    let support = batch_of(cfg, env, &support_idx)?;
    let query = batch_of(cfg, env, &query_idx)?;
    let mut theta = model.theta.clone();
    let mut lambda = None;
    if ac.attenuate && ac.inner_steps > 0 {
        let lam = environment_lambda(model, &support)?;
        theta = attenuated(model, &lam)?;
        lambda = Some(lam);
    }
    let (_, initial_query_loss) = evaluate_batch(cfg, &theta, &query, BnUse::Batch)?;
    let mut support_losses = Vec::with_capacity(ac.inner_steps);
    let mut query_losses = Vec::with_capacity(ac.inner_steps);
    for _ in 0..ac.inner_steps {
        let (l, grad, _) = loss_and_grad(cfg, &theta, &support)?;
        support_losses.push(l);
        theta = sgd_step(&theta, &grad, ac.alpha as f32)?;
        query_losses.push(evaluate_batch(cfg, &theta, &query, BnUse::Batch)?.1);
    }
    let (pred, _) = evaluate_batch(cfg, &theta, &query, BnUse::Batch)?;
    let per = pred.len() / query.len();
    let predictions = pred
        .chunks_exact(per)
        .map(|p| accdoa_decode(p, cfg.n_classes, ac.threshold).map(|frames| FrameEvents { frames }))
        .collect::<Result<Vec<_>>>()?;
    let references = query_idx.iter().map(|&i| env.clips[i].reference()).collect::<Result<Vec<_>>>()?;
    let scores = match_and_score(&concat_clips(&predictions), &concat_clips(&references), cfg.n_classes)?;
    Ok(AdaptationResult {
        env_id: env.id.clone(),
        theta,
        lambda,
        support_losses,
        initial_query_loss,
        query_losses,
        query_ids: query_idx.iter().map(|&i| env.clips[i].id.clone()).collect(),
        predictions,
        references,
        scores,
    })
}

/// λ per environment from its first `k` clips. Only env-adaptive models
/// carry attenuation; a bypassed model reports λ ≡ 1.
pub fn attenuation_report(model: &SeldModel, method: Method, bypass: bool, envs: &[EnvData], k: usize) -> Result<AttenuationReport> {
    if method != Method::EnvAdaptive {
        return Err(Error::Config(format!("method '{}' has no attenuation", method.name())));
    }
    let p = model.config.backbone.n_layers();
    let rows = envs
        .iter()
        .map(|env| {
            if bypass {
                return Ok(vec![1.0; p]);
            }
            let k = k.min(env.clips.len());
            if k == 0 {
                return Err(Error::InsufficientClips { env: env.id.clone(), have: 0, need: 1 });
            }
            environment_lambda(model, &batch_of(&model.config.backbone, env, &(0..k).collect::<Vec<_>>())?)
        })
        .collect::<Result<Vec<_>>>()?;
    AttenuationReport::from_lambdas(envs.iter().map(|e| e.id.clone()).collect(), rows)
}
