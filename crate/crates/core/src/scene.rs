//! Labeled multi-environment FOA scene synthesis.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acoustics::Direction;
use crate::audio::write_wav_f32;
use crate::dsp::{fft_convolve, irfft, rfft};
use crate::error::{Error, Result};
use crate::rng;
use crate::srir::{
    absorption_for_rt60, simulate_srir, Channels4, MicArraySpec, RoomSpec, Srir, DEFAULT_FS,
    DEFAULT_RADIUS, SPEED_OF_SOUND,
};

/// Label hop in seconds.
pub const LABEL_HOP_S: f64 = 0.1;
const FADE_S: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct DryEvent {
    pub waveform: Vec<f64>,
    pub class_idx: usize,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedEvent {
    pub event: usize,
    pub onset_s: f64,
    pub srir_slot: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub frame: usize,
    pub class_idx: usize,
    pub track_idx: usize,
    pub doa: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneClip {
    /// ACN/SN3D W, Y, Z, X.
    pub audio: Channels4,
    pub labels: Vec<LabelRow>,
    pub env_id: String,
    pub snr_db: Option<f64>,
    /// Global gain applied to avoid clipping (1 when untouched).
    pub gain: f64,
    pub fs: u32,
}

impl SceneClip {
    pub fn n_frames(&self) -> usize {
        (self.audio[0].len() as f64 / (self.fs as f64 * LABEL_HOP_S)).round() as usize
    }
}

fn fade(x: &mut [f64], fs: u32) {
    let n = ((FADE_S * fs as f64) as usize).min(x.len() / 2);
    for i in 0..n {
        let g = 0.5 * (1.0 - (PI * i as f64 / n as f64).cos());
        x[i] *= g;
        let j = x.len() - 1 - i;
        x[j] *= g;
    }
}

fn band_noise(n: usize, lo: f64, hi: f64, fs: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let white: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let nfft = n.next_power_of_two().max(2);
    let mut s = rfft(&white, nfft);
    for (j, v) in s.iter_mut().enumerate() {
        let f = j as f64 * fs as f64 / nfft as f64;
        if f < lo || f > hi {
            *v = 0.0.into();
        }
    }
    let mut y = irfft(&s, nfft);
    y.truncate(n);
    y
}

/// Procedural dry event. Classes cycle through five signal families; classes
/// beyond the fifth reuse a family with shifted frequencies.
pub fn generate_event(class_idx: usize, n_classes: usize, duration_s: f64, fs: u32, rng: &mut ChaCha8Rng) -> Result<DryEvent> {
    if class_idx >= n_classes {
        return Err(Error::InvalidArgument(format!("class {class_idx} >= {n_classes}")));
    }
    if !(duration_s > 0.0) {
        return Err(Error::InvalidArgument("event duration must be positive".into()));
    }
    let n = ((duration_s * fs as f64).round() as usize).max(2);
    let fsf = fs as f64;
    let scale = (1.0 + 0.3 * (class_idx / 5) as f64) * rng.gen_range(0.95..1.05);
    let mut x: Vec<f64> = match class_idx % 5 {
        0 => {
            let f0 = 440.0 * scale;
            let vib = rng.gen_range(4.0..6.0);
            (0..n)
                .map(|i| {
                    let t = i as f64 / fsf;
                    let ph = 2.0 * PI * f0 * t + 0.3 * (2.0 * PI * vib * t).sin();
                    (1..=6).map(|k| (k as f64 * ph).sin() / k as f64).sum()
                })
                .collect()
        }
        1 => {
            let (f1, f2) = (600.0 * scale, 3000.0 * scale);
            let rate = (f2 / f1).ln() / duration_s;
            (0..n)
                .map(|i| {
                    let t = i as f64 / fsf;
                    (2.0 * PI * f1 * ((rate * t).exp() - 1.0) / rate).sin()
                })
                .collect()
        }
        2 => band_noise(n, 2000.0 * scale, 6000.0 * scale, fs, rng),
        3 => {
            let fc = 1500.0 * scale;
            let fm = rng.gen_range(10.0..14.0);
            (0..n)
                .map(|i| {
                    let t = i as f64 / fsf;
                    (1.0 + 0.8 * (2.0 * PI * fm * t).sin()) * (2.0 * PI * fc * t).sin()
                })
                .collect()
        }
        _ => {
            let period = (fsf / 15.0) as usize;
            let fr = 800.0 * scale;
            let decay = 0.005 * fsf;
            (0..n)
                .map(|i| {
                    let k = (i % period) as f64;
                    (-k / decay).exp() * (2.0 * PI * fr * k / fsf).sin()
                })
                .collect()
        }
    };
    fade(&mut x, fs);
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let amp = rng.gen_range(0.4..0.9);
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= amp / peak);
    }
    Ok(DryEvent { waveform: x, class_idx, duration_s: n as f64 / fsf })
}

/// Largest number of intervals `[on, off)` covering a single instant.
pub fn max_overlap(intervals: &[(f64, f64)]) -> usize {
    let mut pts: Vec<(f64, i32)> = Vec::with_capacity(intervals.len() * 2);
    for &(a, b) in intervals {
        pts.push((a, 1));
        pts.push((b, -1));
    }
    // ends sort before starts at equal times (half-open intervals)
    pts.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let mut cur = 0i32;
    let mut best = 0i32;
    for (_, d) in pts {
        cur += d;
        best = best.max(cur);
    }
    best as usize
}

/// Label frames `[first, last)` touched by an event on `[onset, onset + dur)`.
pub fn frame_span(onset_s: f64, dur_s: f64, n_frames: usize) -> (usize, usize) {
    let f0 = (onset_s / LABEL_HOP_S + 1e-9).floor() as usize;
    let f1 = (((onset_s + dur_s) / LABEL_HOP_S - 1e-9).ceil() as usize).min(n_frames);
    (f0.min(n_frames), f1)
}

/// Frames an event may sound in, rounded outward; used for polyphony bookkeeping.
fn occupancy_span(onset_s: f64, dur_s: f64, n_frames: usize) -> (usize, usize) {
    let f0 = (onset_s / LABEL_HOP_S).floor() as usize;
    let f1 = (((onset_s + dur_s) / LABEL_HOP_S).ceil() as usize).min(n_frames);
    (f0.min(f1), f1)
}

const ONSET_GRID_S: f64 = 0.001;

/// Random onsets (1 ms grid) such that no label frame holds more than
/// `max_polyphony` events, which also bounds instantaneous overlap.
/// Each onset is drawn uniformly from the feasible set given earlier events;
/// dead ends restart the whole clip.
pub fn place_events(events: &[DryEvent], clip_s: f64, max_polyphony: usize, seed: u64) -> Result<Vec<PlacedEvent>> {
    if !(clip_s > 0.0) || max_polyphony == 0 {
        return Err(Error::InvalidArgument("clip_s > 0 and max_polyphony >= 1 required".into()));
    }
    for (i, ev) in events.iter().enumerate() {
        if ev.duration_s > clip_s + 1e-12 {
            return Err(Error::Capacity(format!("event {i} ({} s) longer than clip", ev.duration_s)));
        }
    }
    let n_frames = (clip_s / LABEL_HOP_S).round() as usize;
    let mut rng = rng::stream(seed, 1);
    'attempt: for _ in 0..50 {
        let mut count = vec![0usize; n_frames];
        let mut out = Vec::with_capacity(events.len());
        for (i, ev) in events.iter().enumerate() {
            let slots = ((clip_s - ev.duration_s).max(0.0) / ONSET_GRID_S + 1e-9).floor() as usize;
            let feasible: Vec<usize> = (0..=slots)
                .filter(|k| {
                    let (f0, f1) = occupancy_span(*k as f64 * ONSET_GRID_S, ev.duration_s, n_frames);
                    count[f0..f1].iter().all(|c| *c < max_polyphony)
                })
                .collect();
            let Some(&k) = feasible.choose(&mut rng) else { continue 'attempt };
            let on = k as f64 * ONSET_GRID_S;
            let (f0, f1) = occupancy_span(on, ev.duration_s, n_frames);
            count[f0..f1].iter_mut().for_each(|c| *c += 1);
            out.push(PlacedEvent { event: i, onset_s: on, srir_slot: i });
        }
        return Ok(out);
    }
    Err(Error::Capacity(format!("cannot fit {} events under polyphony {max_polyphony}", events.len())))
}

/// Additive noise for a clip: a 4-channel field scaled to `snr_db`.
pub struct NoiseMix<'a> {
    pub field: &'a Channels4,
    pub snr_db: f64,
}

fn power(x: &Channels4) -> f64 {
    let n: usize = x.iter().map(|c| c.len()).sum();
    x.iter().flatten().map(|v| v * v).sum::<f64>() / n.max(1) as f64
}

/// Mixes placed events through their SRIRs (`srirs[srir_slot]`) plus optional noise.
pub fn synthesize_clip(
    events: &[DryEvent],
    placed: &[PlacedEvent],
    srirs: &[&Srir],
    noise: Option<NoiseMix>,
    clip_s: f64,
    fs: u32,
    env_id: &str,
) -> Result<SceneClip> {
    let len = (clip_s * fs as f64).round() as usize;
    let n_frames = (clip_s / LABEL_HOP_S).round() as usize;
    let mut audio: Channels4 = std::array::from_fn(|_| vec![0.0; len]);
    let mut labels = Vec::new();
    let mut tracks: Vec<(f64, f64, usize, usize)> = Vec::new();

    let mut order: Vec<&PlacedEvent> = placed.iter().collect();
    order.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
    for p in order {
        let ev = events
            .get(p.event)
            .ok_or_else(|| Error::InvalidArgument(format!("placed event {} out of range", p.event)))?;
        let srir = srirs
            .get(p.srir_slot)
            .ok_or_else(|| Error::InvalidArgument(format!("no SRIR for slot {}", p.srir_slot)))?;
        if srir.fs != fs {
            return Err(Error::InvalidArgument("SRIR sample rate differs from clip".into()));
        }
        let start = (p.onset_s * fs as f64).round() as usize;
        for (ch, ir) in srir.foa_ir.iter().enumerate() {
            let y = fft_convolve(&ev.waveform, ir);
            for (i, v) in y.iter().enumerate() {
                if start + i >= len {
                    break;
                }
                audio[ch][start + i] += v;
            }
        }

        let off = p.onset_s + ev.duration_s;
        let track = (0..)
            .find(|t| {
                !tracks
                    .iter()
                    .any(|s| s.2 == ev.class_idx && s.3 == *t && s.0 < off && p.onset_s < s.1)
            })
            .expect("unbounded search");
        tracks.push((p.onset_s, off, ev.class_idx, track));
        let doa = srir.source_doa.to_vector();
        let (f0, f1) = frame_span(p.onset_s, ev.duration_s, n_frames);
        for frame in f0..f1 {
            labels.push(LabelRow { frame, class_idx: ev.class_idx, track_idx: track, doa });
        }
    }
    labels.sort_by_key(|l| (l.frame, l.class_idx, l.track_idx));

    let mut snr_db = None;
    if let Some(nm) = noise {
        if nm.field.iter().any(|c| c.len() < len) {
            return Err(Error::shape("synthesize_clip", "noise field shorter than clip"));
        }
        let field: Channels4 = std::array::from_fn(|c| nm.field[c][..len].to_vec());
        let pn = power(&field);
        if pn <= 0.0 {
            return Err(Error::Data("noise field is silent".into()));
        }
        let ps = power(&audio);
        let g = if ps > 0.0 { (ps / pn / 10f64.powf(nm.snr_db / 10.0)).sqrt() } else { 1.0 };
        for c in 0..4 {
            for (a, n) in audio[c].iter_mut().zip(&field[c]) {
                *a += g * n;
            }
        }
        snr_db = Some(nm.snr_db);
    }

    let peak = audio.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut gain = 1.0;
    if peak > 1.0 {
        gain = 0.99 / peak;
        log::warn!("clip in {env_id} peaks at {peak:.3}, normalizing by {gain:.4}");
        audio.iter_mut().flatten().for_each(|v| *v *= gain);
    }
    Ok(SceneClip { audio, labels, env_id: env_id.to_string(), snr_db, gain, fs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    Pink,
    Brown,
    Hum,
    Babble,
    Rain,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 6] =
        [NoiseKind::White, NoiseKind::Pink, NoiseKind::Brown, NoiseKind::Hum, NoiseKind::Babble, NoiseKind::Rain];
}

fn shaped_noise(n: usize, exponent: f64, fs: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let white: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let nfft = n.next_power_of_two().max(2);
    let mut s = rfft(&white, nfft);
    for (j, v) in s.iter_mut().enumerate() {
        let f = (j as f64 * fs as f64 / nfft as f64).max(20.0);
        *v *= f.powf(-exponent / 2.0);
    }
    let mut y = irfft(&s, nfft);
    y.truncate(n);
    y
}

/// Unit-RMS mono noise of the given kind.
pub fn generate_noise(kind: NoiseKind, n: usize, fs: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let fsf = fs as f64;
    let mut x: Vec<f64> = match kind {
        NoiseKind::White => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        NoiseKind::Pink => shaped_noise(n, 1.0, fs, rng),
        NoiseKind::Brown => shaped_noise(n, 2.0, fs, rng),
        NoiseKind::Hum => {
            let ph: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            (0..n)
                .map(|i| {
                    let t = i as f64 / fsf;
                    let h: f64 = (1..=6).map(|k| (2.0 * PI * 50.0 * k as f64 * t + ph[k - 1]).sin() / k as f64).sum();
                    h + 0.1 * rng.sample::<f64, _>(StandardNormal)
                })
                .collect()
        }
        NoiseKind::Babble => {
            let mut acc = vec![0.0; n];
            for _ in 0..6 {
                let b = band_noise(n, 300.0, 3000.0, fs, rng);
                let rate = rng.gen_range(3.0..6.0);
                let ph = rng.gen_range(0.0..2.0 * PI);
                for (i, v) in b.iter().enumerate() {
                    let t = i as f64 / fsf;
                    acc[i] += v * (0.5 + 0.5 * (2.0 * PI * rate * t + ph).sin()).powi(2);
                }
            }
            acc
        }
        NoiseKind::Rain => {
            let mut acc: Vec<f64> = (0..n).map(|_| 0.05 * rng.sample::<f64, _>(StandardNormal)).collect();
            let drops = (n as f64 / fsf * 200.0) as usize;
            let len = (0.004 * fsf) as usize;
            for _ in 0..drops {
                let at = rng.gen_range(0..n.max(1));
                let a = rng.gen_range(0.2..1.0);
                for k in 0..len.min(n - at) {
                    acc[at + k] += a * (-(k as f64) / (0.001 * fsf)).exp() * rng.sample::<f64, _>(StandardNormal);
                }
            }
            acc
        }
    };
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    x
}

/// Late part of an SRIR: everything from 5 ms after the direct-sound peak.
/// Falls back to the whole response when the tail carries no energy.
pub fn late_tail(s: &Srir) -> Channels4 {
    let w = &s.foa_ir[0];
    let peak = w
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|p| p.0)
        .unwrap_or(0);
    let cut = (peak + (0.005 * s.fs as f64) as usize).min(w.len());
    let total: f64 = w.iter().map(|v| v * v).sum();
    let tail: f64 = w[cut..].iter().map(|v| v * v).sum();
    if tail <= 1e-10 * total {
        return s.foa_ir.clone();
    }
    std::array::from_fn(|c| s.foa_ir[c][cut..].to_vec())
}

/// Diffuse noise field: independent noise through each tail, summed.
pub fn diffuse_noise(kind: NoiseKind, tails: &[Channels4], len: usize, fs: u32, seed: u64) -> Channels4 {
    let mut out: Channels4 = std::array::from_fn(|_| vec![0.0; len]);
    for (i, t) in tails.iter().enumerate() {
        let mut r = rng::stream(seed, 100 + i as u64);
        let lead = t[0].len();
        let src = generate_noise(kind, len + lead, fs, &mut r);
        for c in 0..4 {
            let y = fft_convolve(&src, &t[c]);
            for k in 0..len {
                out[c][k] += y[lead + k];
            }
        }
    }
    out
}

fn default_fs() -> u32 {
    DEFAULT_FS
}
fn default_clip_s() -> f64 {
    5.0
}
fn default_classes() -> usize {
    5
}
fn default_polyphony() -> usize {
    3
}
fn default_events() -> [usize; 2] {
    [1, 3]
}
fn default_durations() -> [f64; 2] {
    [0.5, 2.0]
}
fn default_srirs() -> usize {
    16
}
fn default_distance() -> [f64; 2] {
    [1.0, 2.5]
}
fn default_radius() -> f64 {
    DEFAULT_RADIUS
}
fn default_order() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub id: String,
    pub dims: [f64; 3],
    #[serde(default)]
    pub rt60: Option<f64>,
    #[serde(default)]
    pub absorption: Option<f64>,
    #[serde(default = "default_order")]
    pub max_order: usize,
    pub clips: usize,
    #[serde(default)]
    pub noise: Option<NoiseKind>,
    #[serde(default)]
    pub snr_db: Option<[f64; 2]>,
}

impl EnvironmentConfig {
    pub fn room(&self, fs: u32) -> Result<RoomSpec> {
        let alpha = match (self.rt60, self.absorption) {
            (Some(t), None) => absorption_for_rt60(self.dims, t, SPEED_OF_SOUND)?,
            (None, Some(a)) => a,
            _ => {
                return Err(Error::Config(format!(
                    "environment '{}': give exactly one of rt60 or absorption",
                    self.id
                )))
            }
        };
        RoomSpec::new(self.dims, [alpha; 6], self.max_order, SPEED_OF_SOUND, fs)
    }
}

/// Dataset generation config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    #[serde(default = "default_fs")]
    pub fs: u32,
    #[serde(default = "default_clip_s")]
    pub clip_s: f64,
    #[serde(default = "default_classes")]
    pub n_classes: usize,
    #[serde(default = "default_polyphony")]
    pub max_polyphony: usize,
    #[serde(default = "default_events")]
    pub events_per_clip: [usize; 2],
    #[serde(default = "default_durations")]
    pub event_duration_s: [f64; 2],
    #[serde(default = "default_srirs")]
    pub srirs_per_env: usize,
    #[serde(default = "default_distance")]
    pub source_distance_m: [f64; 2],
    #[serde(default = "default_radius")]
    pub array_radius: f64,
    pub environments: Vec<EnvironmentConfig>,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.environments.is_empty() {
            return bad("no environments".into());
        }
        if self.n_classes == 0 || self.max_polyphony == 0 || self.srirs_per_env == 0 {
            return bad("n_classes, max_polyphony and srirs_per_env must be positive".into());
        }
        if !(self.clip_s > 0.0) || self.events_per_clip[0] > self.events_per_clip[1] {
            return bad("clip_s must be positive and events_per_clip ordered".into());
        }
        let [d0, d1] = self.event_duration_s;
        if !(d0 > 0.0 && d0 <= d1 && d1 <= self.clip_s) {
            return bad(format!("event_duration_s {:?} must lie in (0, clip_s]", self.event_duration_s));
        }
        let mut ids = std::collections::HashSet::new();
        for e in &self.environments {
            if !ids.insert(e.id.as_str()) {
                return bad(format!("duplicate environment id '{}'", e.id));
            }
            if e.noise.is_some() != e.snr_db.is_some() {
                return bad(format!("environment '{}': noise and snr_db go together", e.id));
            }
            e.room(self.fs)?;
        }
        Ok(())
    }
}

/// Simulated acoustic world of one environment.
#[derive(Debug, Clone)]
pub struct EnvironmentSim {
    pub id: String,
    pub room: RoomSpec,
    pub array: MicArraySpec,
    pub srirs: Vec<Srir>,
    /// Source position of each SRIR.
    pub positions: Vec<[f64; 3]>,
    pub noise_tails: Vec<Channels4>,
    pub rt60_nominal: f64,
}

fn sample_position(room: &RoomSpec, center: [f64; 3], dist: [f64; 2], rng: &mut ChaCha8Rng) -> Result<[f64; 3]> {
    for _ in 0..1000 {
        let az = rng.gen_range(-PI..PI);
        let el = rng.gen_range(-40f64.to_radians()..40f64.to_radians());
        let r = rng.gen_range(dist[0]..=dist[1]);
        let u = Direction::from_azimuth_elevation(az, el)?.to_vector();
        let p = [center[0] + r * u[0], center[1] + r * u[1], center[2] + r * u[2]];
        if p.iter().zip(&room.dims).all(|(v, d)| *v > 0.3 && *v < d - 0.3) {
            return Ok(p);
        }
    }
    Err(Error::Geometry(format!("cannot place sources {dist:?} m from the array in room {:?}", room.dims)))
}

/// Samples the array and source positions of environment `idx` and simulates their SRIRs.
pub fn simulate_environment(cfg: &SceneConfig, idx: usize) -> Result<EnvironmentSim> {
    let env = &cfg.environments[idx];
    let room = env.room(cfg.fs)?;
    let mut r = rng::stream(rng::derive(cfg.seed, &[idx as u64]), 0);
    let center: [f64; 3] = std::array::from_fn(|a| {
        let mid = room.dims[a] / 2.0;
        let j = (room.dims[a] / 2.0 - 0.5).clamp(0.0, 0.3);
        mid + if j > 0.0 { r.gen_range(-j..=j) } else { 0.0 }
    });
    let tetra = MicArraySpec::tetrahedral(center);
    let array = MicArraySpec::new(center, cfg.array_radius, tetra.capsule_dirs)?;
    let mut positions = Vec::with_capacity(cfg.srirs_per_env);
    for _ in 0..cfg.srirs_per_env {
        positions.push(sample_position(&room, center, cfg.source_distance_m, &mut r)?);
    }
    let noise_positions = if env.noise.is_some() {
        (0..8).map(|_| sample_position(&room, center, cfg.source_distance_m, &mut r)).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let srirs = positions
        .par_iter()
        .map(|p| simulate_srir(&room, &array, *p))
        .collect::<Result<Vec<_>>>()?;
    let noise_tails = noise_positions
        .par_iter()
        .map(|p| simulate_srir(&room, &array, *p).map(|s| late_tail(&s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EnvironmentSim {
        id: env.id.clone(),
        rt60_nominal: crate::srir::sabine_rt60(&room),
        room,
        array,
        srirs,
        positions,
        noise_tails,
    })
}

/// Clip `k` of an environment, fully determined by the config seed.
pub fn generate_clip(cfg: &SceneConfig, env_idx: usize, sim: &EnvironmentSim, k: usize) -> Result<SceneClip> {
    let env = &cfg.environments[env_idx];
    let seed = rng::derive(cfg.seed, &[env_idx as u64, k as u64 + 1]);
    let mut r = rng::stream(seed, 0);
    let n_ev = r.gen_range(cfg.events_per_clip[0]..=cfg.events_per_clip[1]);
    let mut events = Vec::with_capacity(n_ev);
    for _ in 0..n_ev {
        let class = r.gen_range(0..cfg.n_classes);
        let [d0, d1] = cfg.event_duration_s;
        let dur = if d1 > d0 { r.gen_range(d0..=d1) } else { d0 };
        events.push(generate_event(class, cfg.n_classes, dur, cfg.fs, &mut r)?);
    }
    let placed = place_events(&events, cfg.clip_s, cfg.max_polyphony, seed)?;
    let mut pool: Vec<usize> = (0..sim.srirs.len()).collect();
    pool.shuffle(&mut r);
    let srirs: Vec<&Srir> = (0..placed.len()).map(|i| &sim.srirs[pool[i % pool.len()]]).collect();

    let len = (cfg.clip_s * cfg.fs as f64).round() as usize;
    let field;
    let noise = match (env.noise, env.snr_db) {
        (Some(kind), Some([lo, hi])) => {
            field = diffuse_noise(kind, &sim.noise_tails, len, cfg.fs, seed);
            let snr = if hi > lo { r.gen_range(lo..=hi) } else { lo };
            Some(NoiseMix { field: &field, snr_db: snr })
        }
        _ => None,
    };
    synthesize_clip(&events, &placed, &srirs, noise, cfg.clip_s, cfg.fs, &env.id)
}

/// Every clip of environment `env_idx`, in index order.
pub fn generate_environment(cfg: &SceneConfig, env_idx: usize) -> Result<(EnvironmentSim, Vec<SceneClip>)> {
    let sim = simulate_environment(cfg, env_idx)?;
    let n = cfg.environments[env_idx].clips;
    let clips = (0..n)
        .into_par_iter()
        .map(|k| generate_clip(cfg, env_idx, &sim, k))
        .collect::<Result<Vec<_>>>()?;
    Ok((sim, clips))
}

fn round_deg(v: f64) -> i64 {
    v.to_degrees().round() as i64
}

/// Label row as `frame, class, track, azimuth_deg, elevation_deg` integers.
pub fn label_fields(l: &LabelRow) -> [i64; 5] {
    let [x, y, z] = l.doa;
    let mut az = round_deg(y.atan2(x));
    if az <= -180 {
        az += 360;
    }
    let el = round_deg(z.clamp(-1.0, 1.0).asin());
    [l.frame as i64, l.class_idx as i64, l.track_idx as i64, az, el]
}

pub fn write_labels(path: &Path, labels: &[LabelRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for l in labels {
        w.write_record(label_fields(l).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads label rows; a non-numeric first line is treated as a header.
pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(false).from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let vals: std::result::Result<Vec<i64>, _> = rec.iter().map(|f| f.trim().parse::<i64>()).collect();
        let vals = match vals {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::Data(format!("{}: line {}: {e}", path.display(), i + 1))),
        };
        if vals.len() != 5 || vals[0] < 0 || vals[1] < 0 || vals[2] < 0 {
            return Err(Error::Data(format!("{}: line {}: expected 5 non-negative-index fields", path.display(), i + 1)));
        }
        let doa = Direction::from_azimuth_elevation((vals[3] as f64).to_radians(), (vals[4] as f64).to_radians())?
            .to_vector();
        out.push(LabelRow { frame: vals[0] as usize, class_idx: vals[1] as usize, track_idx: vals[2] as usize, doa });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestClip {
    pub wav: PathBuf,
    pub csv: PathBuf,
    pub env_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEnv {
    pub id: String,
    pub rt60_nominal: f64,
    #[serde(default)]
    pub noise: Option<NoiseKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub fs: u32,
    pub clip_s: f64,
    pub n_classes: usize,
    pub env_ids: Vec<String>,
    pub environments: Vec<ManifestEnv>,
    pub clips: Vec<ManifestClip>,
}

pub const MANIFEST_FILE: &str = "manifest.toml";

impl DatasetManifest {
    /// Loads a manifest; relative clip paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut m: DatasetManifest = toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let ids: std::collections::HashSet<&str> = m.env_ids.iter().map(|s| s.as_str()).collect();
        if ids.len() != m.env_ids.len() {
            return Err(Error::Data("duplicate env ids in manifest".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for c in m.clips.iter_mut() {
            if !ids.contains(c.env_id.as_str()) {
                return Err(Error::Data(format!("clip {} has unknown env '{}'", c.wav.display(), c.env_id)));
            }
            if !seen.insert(c.wav.clone()) {
                return Err(Error::Data(format!("clip {} listed twice", c.wav.display())));
            }
            c.wav = base.join(&c.wav);
            c.csv = base.join(&c.csv);
            if !c.wav.exists() || !c.csv.exists() {
                return Err(Error::Data(format!("missing clip files for {}", c.wav.display())));
            }
        }
        Ok(m)
    }

    pub fn clips_of<'a>(&'a self, env: &'a str) -> impl Iterator<Item = &'a ManifestClip> + 'a {
        self.clips.iter().filter(move |c| c.env_id == env)
    }
}

/// Generates every environment, writes WAV/CSV pairs under `out_dir/<env_id>/`
/// and a manifest at `out_dir/manifest.toml`.
pub fn build_dataset(cfg: &SceneConfig, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut clips = Vec::new();
    let mut envs = Vec::new();
    for (i, env) in cfg.environments.iter().enumerate() {
        let (sim, scene) = generate_environment(cfg, i)?;
        let dir = out_dir.join(&env.id);
        std::fs::create_dir_all(&dir)?;
        for (k, clip) in scene.iter().enumerate() {
            let stem = format!("{}_{k:04}", env.id);
            let wav = PathBuf::from(&env.id).join(format!("{stem}.wav"));
            let csv = PathBuf::from(&env.id).join(format!("{stem}.csv"));
            write_wav_f32(&out_dir.join(&wav), &clip.audio, clip.fs)?;
            write_labels(&out_dir.join(&csv), &clip.labels)?;
            clips.push(ManifestClip { wav, csv, env_id: env.id.clone() });
        }
        envs.push(ManifestEnv { id: env.id.clone(), rt60_nominal: sim.rt60_nominal, noise: env.noise });
        log::info!("environment {} done: {} clips, RT60 {:.2} s", env.id, scene.len(), sim.rt60_nominal);
    }
    let m = DatasetManifest {
        fs: cfg.fs,
        clip_s: cfg.clip_s,
        n_classes: cfg.n_classes,
        env_ids: cfg.environments.iter().map(|e| e.id.clone()).collect(),
        environments: envs,
        clips,
    };
    let text = toml::to_string(&m).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(out_dir.join(MANIFEST_FILE), text)?;
    Ok(m)
}

fn base_config(seed: u64, environments: Vec<EnvironmentConfig>) -> SceneConfig {
    SceneConfig {
        seed,
        fs: DEFAULT_FS,
        clip_s: default_clip_s(),
        n_classes: default_classes(),
        max_polyphony: default_polyphony(),
        events_per_clip: default_events(),
        event_duration_s: default_durations(),
        srirs_per_env: default_srirs(),
        source_distance_m: default_distance(),
        array_radius: DEFAULT_RADIUS,
        environments,
    }
}

/// RT60 targets of the reverberation ladder, 0.4 to 2.5 s in 0.3 s steps.
pub fn ladder_rt60s() -> Vec<f64> {
    (0..8).map(|i| 0.4 + 0.3 * i as f64).collect()
}

/// Eight rooms of equal geometry whose Sabine RT60 climbs the ladder.
pub fn reverb_ladder(seed: u64, clips: usize, max_order: usize) -> SceneConfig {
    let envs = ladder_rt60s()
        .into_iter()
        .enumerate()
        .map(|(i, t)| EnvironmentConfig {
            id: format!("rt{i}"),
            dims: [8.0, 6.0, 3.5],
            rt60: Some(t),
            absorption: None,
            max_order,
            clips,
            noise: None,
            snr_db: None,
        })
        .collect();
    base_config(seed, envs)
}

/// `n` rooms, each with its own noise type, mixed at 10 to 15 dB SNR.
pub fn noise_set(seed: u64, n: usize, clips: usize, max_order: usize) -> Result<SceneConfig> {
    if n == 0 || n > NoiseKind::ALL.len() {
        return Err(Error::Config(format!("noise set supports 1..={} rooms", NoiseKind::ALL.len())));
    }
    let dims = [[6.0, 5.0, 3.0], [7.0, 4.5, 3.2], [5.5, 5.0, 2.8], [8.0, 6.0, 3.5], [6.5, 5.5, 3.0], [7.5, 5.0, 3.3]];
    let envs = (0..n)
        .map(|i| EnvironmentConfig {
            id: format!("noise{i}"),
            dims: dims[i],
            rt60: Some(0.5),
            absorption: None,
            max_order,
            clips,
            noise: Some(NoiseKind::ALL[i]),
            snr_db: Some([10.0, 15.0]),
        })
        .collect();
    Ok(base_config(seed, envs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlap_counter() {
        assert_eq!(max_overlap(&[]), 0);
        assert_eq!(max_overlap(&[(0.0, 1.0), (1.0, 2.0)]), 1);
        assert_eq!(max_overlap(&[(0.0, 1.0), (0.5, 2.0), (0.9, 1.1)]), 3);
    }

    #[test]
    fn label_fields_wrap() {
        let l = LabelRow { frame: 3, class_idx: 1, track_idx: 0, doa: [-1.0, -1e-12, 0.0] };
        assert_eq!(label_fields(&l), [3, 1, 0, 180, 0]);
        let up = LabelRow { frame: 0, class_idx: 0, track_idx: 0, doa: [0.0, 0.0, 1.0] };
        assert_eq!(label_fields(&up)[4], 90);
    }

    #[test]
    fn events_are_bounded_and_distinct() {
        let mut r = rng::stream(3, 0);
        let evs: Vec<DryEvent> = (0..5).map(|c| generate_event(c, 5, 0.5, 24000, &mut r).unwrap()).collect();
        for e in &evs {
            assert!(e.waveform.iter().all(|v| v.abs() <= 1.0));
            assert_eq!(e.waveform.len(), 12000);
        }
        assert!(generate_event(5, 5, 0.5, 24000, &mut r).is_err());
    }
}
