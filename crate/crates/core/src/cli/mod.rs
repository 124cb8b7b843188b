//! Command implementations behind the `seldkit` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use seldkit::error::{Error, Result};
use seldkit::eval::{
    aggregate, concat_clips, diagonal_max_count, nearest_centroid_purity, report, score_rooms, similarity_map,
    write_matrix_csv, write_scores_csv, FrameEvents, RoomEvents,
};
use seldkit::features::{FeatureExtractor, FeatureParams};
use seldkit::meta::{
    attenuation_report, env_representation, load_environments, meta_test_adapt, meta_train as run_meta, train_supervised,
    write_log_csv, AdaptConfig, AdaptationResult, Batch, EnvData, MetaConfig, Method, SupervisedConfig,
};
use seldkit::model::{AttenuationInput, ModelConfig, SeldModel, ACCDOA_THRESHOLD};
use seldkit::run::{load_model, save_model, RunInfo};
use seldkit::scene::{
    build_dataset, noise_set, read_labels, reverb_ladder, simulate_environment, write_labels, DatasetManifest, LabelRow,
    SceneConfig, LABEL_HOP_S,
};
use seldkit::srir::export_srirs;

pub const THREADS_ENV: &str = "SELDKIT_THREADS";

/// Caps the global worker pool from `SELDKIT_THREADS`.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v.trim().parse().map_err(|_| Error::Config(format!("{THREADS_ENV}='{v}' is not a thread count")))?;
    if n == 0 {
        return Err(Error::Config(format!("{THREADS_ENV} must be positive")));
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Config(e.to_string()))
}

pub struct RunArgs {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

pub enum StudyPreset {
    ReverbLadder { clips: usize, max_order: usize },
    NoiseSet { rooms: usize, clips: usize, max_order: usize },
}

struct Loaded<T> {
    cfg: T,
    dir: PathBuf,
    text: String,
}

fn load_config<T: DeserializeOwned>(args: &RunArgs) -> Result<Loaded<T>> {
    let path = args.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let cfg = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { cfg, dir, text })
}

/// CLI override as given, else the config value relative to the config directory.
fn input_path(over: &Option<PathBuf>, from_cfg: &Option<PathBuf>, dir: &Path, what: &str) -> Result<PathBuf> {
    match (over, from_cfg) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(p)) if p.is_absolute() => Ok(p.clone()),
        (None, Some(p)) => Ok(dir.join(p)),
        (None, None) => Err(Error::Config(format!("no {what} given in the config or on the command line"))),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Hashes of every input of a run, written as `provenance.toml`.
#[derive(Serialize)]
struct Provenance {
    command: String,
    version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    inputs: BTreeMap<String, String>,
}

impl Provenance {
    fn new(command: &str, seed: Option<u64>) -> Self {
        Self { command: command.into(), version: env!("CARGO_PKG_VERSION").into(), seed, inputs: BTreeMap::new() }
    }

    fn text(&mut self, key: &str, text: &str) {
        self.inputs.insert(key.into(), sha256_hex(text.as_bytes()));
    }

    fn file(&mut self, key: String, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        self.inputs.insert(key, sha256_hex(&bytes));
        Ok(())
    }

    /// Manifest plus every clip it lists, keyed relative to the manifest.
    fn dataset(&mut self, manifest_path: &Path, m: &DatasetManifest) -> Result<()> {
        self.file("dataset/manifest".into(), manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new(""));
        for c in &m.clips {
            for p in [&c.wav, &c.csv] {
                let key = p.strip_prefix(base).unwrap_or(p).display().to_string();
                self.file(format!("dataset/{key}"), p)?;
            }
        }
        Ok(())
    }

    fn write(&self, out: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(out.join("provenance.toml"), text)?;
        Ok(())
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetSection {
    manifest: Option<PathBuf>,
    /// Restricts the run to these environments.
    environments: Option<Vec<String>>,
}

struct Dataset {
    path: PathBuf,
    manifest: DatasetManifest,
}

fn open_dataset(args: &RunArgs, sec: &DatasetSection, dir: &Path) -> Result<Dataset> {
    let path = input_path(&args.dataset, &sec.manifest, dir, "dataset manifest")?;
    let mut m = DatasetManifest::load(&path)?;
    if let Some(sel) = &sec.environments {
        if sel.is_empty() {
            return Err(Error::Config("dataset.environments is empty".into()));
        }
        if let Some(bad) = sel.iter().find(|s| !m.env_ids.contains(s)) {
            return Err(Error::Config(format!("environment '{bad}' is not in {}", path.display())));
        }
        m.env_ids = sel.clone();
        m.clips.retain(|c| sel.contains(&c.env_id));
        m.environments.retain(|e| sel.contains(&e.id));
    }
    Ok(Dataset { path, manifest: m })
}

/// Aligns the backbone input with the features and checks it against the dataset.
fn fit_model_config(mc: &mut ModelConfig, fp: &FeatureParams, m: &DatasetManifest) -> Result<()> {
    fp.validate()?;
    if fp.fs != m.fs {
        return Err(Error::Config(format!("features.fs {} differs from the dataset rate {}", fp.fs, m.fs)));
    }
    if mc.backbone.n_classes != m.n_classes {
        return Err(Error::Config(format!(
            "model has {} classes, dataset has {}",
            mc.backbone.n_classes, m.n_classes
        )));
    }
    mc.backbone.n_mels = fp.n_mels;
    mc.backbone.frame_hop_s = fp.frame_hop_s();
    mc.validate()
}

fn environments(ds: &Dataset, fp: &FeatureParams, model: &ModelConfig) -> Result<Vec<EnvData>> {
    let fe = FeatureExtractor::new(*fp)?;
    load_environments(&ds.manifest, &fe, &model.backbone)
}

fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

pub fn synth_srir(args: &RunArgs) -> Result<()> {
    let l: Loaded<SceneConfig> = load_config(args)?;
    let mut cfg = l.cfg;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    prepare_out(&args.out)?;
    let mut entries = Vec::new();
    for i in 0..cfg.environments.len() {
        let sim = simulate_environment(&cfg, i)?;
        log::info!("room {}: {} SRIRs, RT60 {:.2} s", sim.id, sim.srirs.len(), sim.rt60_nominal);
        entries.extend(sim.positions.iter().zip(sim.srirs).map(|(p, s)| (sim.id.clone(), *p, s)));
    }
    export_srirs(&args.out, &entries)?;
    let mut prov = Provenance::new("synth-srir", Some(cfg.seed));
    prov.text("config", &l.text);
    prov.write(&args.out)
}

pub fn synth_scenes(args: &RunArgs, study: Option<StudyPreset>) -> Result<()> {
    let mut prov;
    let cfg = match study {
        Some(preset) => {
            let seed = args.seed.unwrap_or(0);
            prov = Provenance::new("synth-scenes", Some(seed));
            let (cfg, name) = match preset {
                StudyPreset::ReverbLadder { clips, max_order } => {
                    (reverb_ladder(seed, clips, max_order), format!("reverb-ladder clips={clips} max_order={max_order}"))
                }
                StudyPreset::NoiseSet { rooms, clips, max_order } => (
                    noise_set(seed, rooms, clips, max_order)?,
                    format!("noise-set rooms={rooms} clips={clips} max_order={max_order}"),
                ),
            };
            prov.text("study", &name);
            cfg
        }
        None => {
            let l: Loaded<SceneConfig> = load_config(args)?;
            let mut cfg = l.cfg;
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            prov = Provenance::new("synth-scenes", Some(cfg.seed));
            prov.text("config", &l.text);
            cfg
        }
    };
    cfg.validate()?;
    prepare_out(&args.out)?;
    let m = build_dataset(&cfg, &args.out)?;
    let resolved = toml::to_string(&cfg).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(args.out.join("scene_config.toml"), resolved)?;
    log::info!("{} clips in {} environments", m.clips.len(), m.env_ids.len());
    prov.write(&args.out)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainEiConfig {
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    dataset: DatasetSection,
    #[serde(default)]
    features: FeatureParams,
    #[serde(default)]
    model: ModelConfig,
    #[serde(default)]
    train: SupervisedConfig,
}

pub fn train_ei(args: &RunArgs) -> Result<()> {
    let l: Loaded<TrainEiConfig> = load_config(args)?;
    let mut cfg = l.cfg;
    let seed = args.seed.unwrap_or(cfg.seed);
    cfg.train.seed = seed;
    cfg.train.validate()?;
    let ds = open_dataset(args, &cfg.dataset, &l.dir)?;
    fit_model_config(&mut cfg.model, &cfg.features, &ds.manifest)?;
    let envs = environments(&ds, &cfg.features, &cfg.model)?;
    prepare_out(&args.out)?;
    let mut model = SeldModel::new(cfg.model.clone(), seed)?;
    let log = train_supervised(&mut model, &envs, &cfg.train)?;
    let info = RunInfo {
        stage: "train-ei".into(),
        method: Method::Seld,
        bypass_attenuation: false,
        seed,
        features: cfg.features,
    };
    save_model(&model, &info, &args.out.join("model.ckpt"))?;
    write_log_csv(&args.out.join("train_log.csv"), &log)?;
    let mut prov = Provenance::new("train-ei", Some(seed));
    prov.text("config", &l.text);
    prov.dataset(&ds.path, &ds.manifest)?;
    prov.write(&args.out)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaTrainConfig {
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    dataset: DatasetSection,
    /// Starting checkpoint; required except for `meta`.
    init: Option<PathBuf>,
    features: Option<FeatureParams>,
    /// Full model for `meta`; otherwise only `env_dim` and `attenuation` may differ from the init.
    model: Option<ModelConfig>,
    #[serde(default)]
    meta: MetaConfig,
}

pub fn meta_train(args: &RunArgs, method: Option<Method>, input: Option<AttenuationInput>) -> Result<()> {
    let l: Loaded<MetaTrainConfig> = load_config(args)?;
    let cfg = l.cfg;
    let seed = args.seed.unwrap_or(cfg.seed);
    let mut mc = cfg.meta.clone();
    mc.method = method.unwrap_or(mc.method);
    mc.seed = seed;
    mc.validate()?;
    let ds = open_dataset(args, &cfg.dataset, &l.dir)?;
    let mut prov = Provenance::new("meta-train", Some(seed));
    prov.text("config", &l.text);
    prov.text("method", mc.method.name());

    let (mut model, features) = match mc.method {
        Method::Seld => return Err(Error::Config("method 'seld' is trained with train-ei".into())),
        Method::Meta => {
            if cfg.init.is_some() || args.checkpoint.is_some() {
                return Err(Error::Config("method 'meta' starts from random initialization; drop the init checkpoint".into()));
            }
            let fp = cfg.features.unwrap_or_default();
            let mut m = cfg.model.clone().unwrap_or_default();
            if let Some(i) = input {
                m.attenuation.input = i;
            }
            fit_model_config(&mut m, &fp, &ds.manifest)?;
            (SeldModel::new(m, seed)?, fp)
        }
        Method::MetaPp | Method::EnvAdaptive => {
            let path = input_path(&args.checkpoint, &cfg.init, &l.dir, "init checkpoint")?;
            let (mut model, info) = load_model(&path)?;
            prov.file("init".into(), &path)?;
            if cfg.features.is_some_and(|f| f != info.features) {
                return Err(Error::Config("features differ from those of the init checkpoint".into()));
            }
            let mut want = model.config.clone();
            if let Some(m) = &cfg.model {
                let mut m = m.clone();
                fit_model_config(&mut m, &info.features, &ds.manifest)?;
                if m.backbone != want.backbone {
                    return Err(Error::Config("model.backbone differs from the init checkpoint".into()));
                }
                want = m;
            }
            if let Some(i) = input {
                want.attenuation.input = i;
            }
            fit_model_config(&mut want, &info.features, &ds.manifest)?;
            if want != model.config {
                let fresh = SeldModel::new(want.clone(), seed)?;
                model.omega = fresh.omega;
                model.phi = fresh.phi;
                model.config = want;
            }
            (model, info.features)
        }
    };
    let envs = environments(&ds, &features, &model.config)?;
    prepare_out(&args.out)?;
    let log = run_meta(&mut model, &envs, &mc)?;
    let info = RunInfo {
        stage: "meta-train".into(),
        method: mc.method,
        bypass_attenuation: mc.bypass_attenuation,
        seed,
        features,
    };
    save_model(&model, &info, &args.out.join("model.ckpt"))?;
    write_log_csv(&args.out.join("meta_log.csv"), &log)?;
    prov.dataset(&ds.path, &ds.manifest)?;
    prov.write(&args.out)
}

fn default_k() -> usize {
    30
}
fn default_steps() -> usize {
    5
}
fn default_alpha() -> f64 {
    0.001
}
fn default_threshold() -> f64 {
    ACCDOA_THRESHOLD
}

/// Meta-test settings; attenuation follows the checkpoint's method.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdaptSection {
    #[serde(default = "default_k")]
    k_support: usize,
    #[serde(default = "default_steps")]
    inner_steps: usize,
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default = "default_threshold")]
    threshold: f64,
}

impl Default for AdaptSection {
    fn default() -> Self {
        Self { k_support: default_k(), inner_steps: default_steps(), alpha: default_alpha(), threshold: default_threshold() }
    }
}

impl AdaptSection {
    fn to_config(&self, info: &RunInfo) -> Result<AdaptConfig> {
        if !(self.alpha >= 0.0) {
            return Err(Error::Config("adapt.alpha must be non-negative".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("adapt.threshold must lie in (0,1)".into()));
        }
        Ok(AdaptConfig {
            k_support: self.k_support,
            inner_steps: self.inner_steps,
            alpha: self.alpha,
            threshold: self.threshold,
            attenuate: info.method == Method::EnvAdaptive && !info.bypass_attenuation,
        })
    }
}

/// Prediction events as label rows; tracks count same-class events within a frame.
fn events_to_labels(ev: &FrameEvents) -> Vec<LabelRow> {
    let mut out = Vec::new();
    for (t, f) in ev.frames.iter().enumerate() {
        let mut tracks = BTreeMap::<usize, usize>::new();
        for (c, v) in f {
            let k = tracks.entry(*c).or_insert(0);
            out.push(LabelRow { frame: t, class_idx: *c, track_idx: *k, doa: *v });
            *k += 1;
        }
    }
    out
}

fn write_predictions(dir: &Path, r: &AdaptationResult) -> Result<()> {
    let d = dir.join(&r.env_id);
    std::fs::create_dir_all(&d)?;
    for (id, p) in r.query_ids.iter().zip(&r.predictions) {
        write_labels(&d.join(format!("{id}.csv")), &events_to_labels(p))?;
    }
    Ok(())
}

fn write_adapt_log(path: &Path, r: &AdaptationResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "support_loss", "query_loss"])?;
    let query = std::iter::once(r.initial_query_loss).chain(r.query_losses.iter().copied());
    for (i, q) in query.enumerate() {
        let s = r.support_losses.get(i).map(|v| format!("{v:.8}")).unwrap_or_default();
        w.write_record([i.to_string(), s, format!("{q:.8}")])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdaptRunConfig {
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    dataset: DatasetSection,
    checkpoint: Option<PathBuf>,
    environment: String,
    #[serde(default)]
    adapt: AdaptSection,
}

pub fn adapt(args: &RunArgs) -> Result<()> {
    let l: Loaded<AdaptRunConfig> = load_config(args)?;
    let cfg = l.cfg;
    let seed = args.seed.unwrap_or(cfg.seed);
    let sec = DatasetSection { manifest: cfg.dataset.manifest.clone(), environments: Some(vec![cfg.environment.clone()]) };
    let ds = open_dataset(args, &sec, &l.dir)?;
    let ck_path = input_path(&args.checkpoint, &cfg.checkpoint, &l.dir, "checkpoint")?;
    let (model, info) = load_model(&ck_path)?;
    let ac = cfg.adapt.to_config(&info)?;
    let envs = environments(&ds, &info.features, &model.config)?;
    prepare_out(&args.out)?;
    let r = meta_test_adapt(&model, &envs[0], &ac)?;
    let mut adapted = model.clone();
    adapted.theta = r.theta.clone();
    let run = RunInfo { stage: "adapt".into(), seed, ..info };
    save_model(&adapted, &run, &args.out.join("adapted.ckpt"))?;
    write_adapt_log(&args.out.join("adapt_log.csv"), &r)?;
    write_predictions(&args.out.join("predictions"), &r)?;
    let scores = aggregate(vec![(r.env_id.clone(), r.scores.clone())])?;
    write_scores_csv(&args.out.join("scores.csv"), &scores)?;
    print!("{}", report(&scores));
    let mut prov = Provenance::new("adapt", Some(seed));
    prov.text("config", &l.text);
    prov.file("checkpoint".into(), &ck_path)?;
    prov.dataset(&ds.path, &ds.manifest)?;
    prov.write(&args.out)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateConfig {
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    dataset: DatasetSection,
    checkpoint: Option<PathBuf>,
    /// Directory of `<env>/<clip>.csv` predictions to score instead of a checkpoint.
    predictions: Option<PathBuf>,
    #[serde(default)]
    adapt: AdaptSection,
}

pub fn evaluate(args: &RunArgs) -> Result<()> {
    let l: Loaded<EvaluateConfig> = load_config(args)?;
    let cfg = l.cfg;
    let seed = args.seed.unwrap_or(cfg.seed);
    let ds = open_dataset(args, &cfg.dataset, &l.dir)?;
    let mut prov = Provenance::new("evaluate", Some(seed));
    prov.text("config", &l.text);
    prov.dataset(&ds.path, &ds.manifest)?;
    let with_ck = args.checkpoint.is_some() || cfg.checkpoint.is_some();
    let (rooms, n_classes) = match (with_ck, &cfg.predictions) {
        (true, Some(_)) => return Err(Error::Config("give either a checkpoint or a predictions directory, not both".into())),
        (false, None) => return Err(Error::Config("evaluate needs a checkpoint or a predictions directory".into())),
        (false, Some(p)) => {
            let dir = if p.is_absolute() { p.clone() } else { l.dir.join(p) };
            prepare_out(&args.out)?;
            (prediction_rooms(&ds.manifest, &dir, &mut prov)?, ds.manifest.n_classes)
        }
        (true, None) => {
            let ck_path = input_path(&args.checkpoint, &cfg.checkpoint, &l.dir, "checkpoint")?;
            let (model, info) = load_model(&ck_path)?;
            prov.file("checkpoint".into(), &ck_path)?;
            let ac = cfg.adapt.to_config(&info)?;
            let envs = environments(&ds, &info.features, &model.config)?;
            prepare_out(&args.out)?;
            let mut rooms = Vec::with_capacity(envs.len());
            for env in &envs {
                let r = meta_test_adapt(&model, env, &ac)?;
                write_predictions(&args.out.join("predictions"), &r)?;
                rooms.push((r.env_id.clone(), concat_clips(&r.predictions), concat_clips(&r.references)));
            }
            (rooms, model.config.backbone.n_classes)
        }
    };
    let scores = score_rooms(&rooms, n_classes)?;
    write_scores_csv(&args.out.join("scores.csv"), &scores)?;
    print!("{}", report(&scores));
    prov.write(&args.out)
}

/// Pairs each clip's reference labels with `dir/<env>/<clip>.csv` where present.
fn prediction_rooms(m: &DatasetManifest, dir: &Path, prov: &mut Provenance) -> Result<Vec<RoomEvents>> {
    let n_frames = (m.clip_s / LABEL_HOP_S).round() as usize;
    let mut rooms = Vec::with_capacity(m.env_ids.len());
    for env in &m.env_ids {
        let (mut preds, mut refs) = (Vec::new(), Vec::new());
        let mut missing = 0usize;
        for c in m.clips_of(env) {
            let stem = c.wav.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let p = dir.join(env).join(format!("{stem}.csv"));
            if !p.exists() {
                missing += 1;
                continue;
            }
            prov.file(format!("predictions/{env}/{stem}.csv"), &p)?;
            preds.push(FrameEvents::from_labels(&read_labels(&p)?, n_frames)?);
            refs.push(FrameEvents::from_labels(&read_labels(&c.csv)?, n_frames)?);
        }
        if preds.is_empty() {
            return Err(Error::Data(format!("no predictions for environment '{env}' under {}", dir.display())));
        }
        if missing > 0 {
            log::info!("{env}: scoring {} clips, {missing} without predictions", preds.len());
        }
        rooms.push((env.clone(), concat_clips(&preds), concat_clips(&refs)));
    }
    Ok(rooms)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Analysis {
    Similarity,
    Attenuation,
    Sweep,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    #[serde(default = "default_sweep_steps")]
    steps: Vec<usize>,
    #[serde(default = "default_sweep_shots")]
    shots: Vec<usize>,
    /// Inner steps while sweeping shots.
    #[serde(default = "default_steps")]
    inner_steps: usize,
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default = "default_threshold")]
    threshold: f64,
}

fn default_sweep_steps() -> Vec<usize> {
    vec![0, 1, 2, 3, 4, 5]
}
fn default_sweep_shots() -> Vec<usize> {
    vec![5, 10, 20, 30]
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            steps: default_sweep_steps(),
            shots: default_sweep_shots(),
            inner_steps: default_steps(),
            alpha: default_alpha(),
            threshold: default_threshold(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnalyzeConfig {
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    dataset: DatasetSection,
    checkpoint: Option<PathBuf>,
    analysis: Analysis,
    /// Support clips per environment (also the fixed shot count of the steps sweep).
    #[serde(default = "default_k")]
    k_support: usize,
    #[serde(default)]
    sweep: SweepSection,
}

pub fn analyze(args: &RunArgs) -> Result<()> {
    let l: Loaded<AnalyzeConfig> = load_config(args)?;
    let cfg = l.cfg;
    let seed = args.seed.unwrap_or(cfg.seed);
    let ds = open_dataset(args, &cfg.dataset, &l.dir)?;
    let ck_path = input_path(&args.checkpoint, &cfg.checkpoint, &l.dir, "checkpoint")?;
    let (model, info) = load_model(&ck_path)?;
    let envs = environments(&ds, &info.features, &model.config)?;
    prepare_out(&args.out)?;
    match cfg.analysis {
        Analysis::Similarity => similarity(&model, &envs, cfg.k_support, &args.out)?,
        Analysis::Attenuation => {
            let rep = attenuation_report(&model, info.method, info.bypass_attenuation, &envs, cfg.k_support)?;
            rep.write_csv(&args.out.join("attenuation.csv"))?;
            print!("{}", rep.render());
        }
        Analysis::Sweep => sweep(&model, &info, &envs, cfg.k_support, &cfg.sweep, &args.out)?,
    }
    let mut prov = Provenance::new("analyze", Some(seed));
    prov.text("config", &l.text);
    prov.file("checkpoint".into(), &ck_path)?;
    prov.dataset(&ds.path, &ds.manifest)?;
    prov.write(&args.out)
}

fn similarity(model: &SeldModel, envs: &[EnvData], k: usize, out: &Path) -> Result<()> {
    let cfg = &model.config.backbone;
    let (mut sup, mut qry) = (Vec::new(), Vec::new());
    for env in envs {
        if k == 0 || env.clips.len() <= k {
            return Err(Error::InsufficientClips { env: env.id.clone(), have: env.clips.len(), need: k });
        }
        let (s, q) = env.clips.split_at(k);
        sup.push(env_representation(model, &Batch::new(cfg, &s.iter().collect::<Vec<_>>())?)?);
        qry.push(env_representation(model, &Batch::new(cfg, &q.iter().collect::<Vec<_>>())?)?);
    }
    let m = similarity_map(&sup, &qry)?;
    let ids: Vec<String> = envs.iter().map(|e| e.id.clone()).collect();
    write_matrix_csv(&out.join("similarity.csv"), &ids, &ids, &m)?;
    println!(
        "diagonal is the row maximum in {}/{} rooms; nearest-centroid purity {:.3}",
        diagonal_max_count(&m),
        m.len(),
        nearest_centroid_purity(&m)
    );
    Ok(())
}

fn sweep(model: &SeldModel, info: &RunInfo, envs: &[EnvData], k: usize, sw: &SweepSection, out: &Path) -> Result<()> {
    let base = AdaptSection { k_support: k, inner_steps: sw.inner_steps, alpha: sw.alpha, threshold: sw.threshold };
    let base = base.to_config(info)?;
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    w.write_record(["axis", "value", "room", "query_loss", "e_seld"])?;
    let points = sw
        .steps
        .iter()
        .map(|&s| ("steps", s, AdaptConfig { inner_steps: s, ..base.clone() }))
        .chain(sw.shots.iter().map(|&k| ("shots", k, AdaptConfig { k_support: k, ..base.clone() })));
    for (axis, value, ac) in points {
        let mut rooms = Vec::with_capacity(envs.len());
        let mut loss = 0.0;
        for env in envs {
            let r = meta_test_adapt(model, env, &ac)?;
            let q = r.final_query_loss();
            w.write_record([axis, &value.to_string(), &env.id, &format!("{q:.8}"), &format!("{:.6}", r.scores.e_seld)])?;
            loss += q / envs.len() as f64;
            rooms.push((env.id.clone(), r.scores));
        }
        let agg = aggregate(rooms)?;
        w.write_record([axis, &value.to_string(), "macro", &format!("{loss:.8}"), &format!("{:.6}", agg.e_seld)])?;
        log::info!("{axis}={value}: macro E_SELD {:.4}", agg.e_seld);
    }
    w.flush()?;
    Ok(())
}
