//! Reference scorer that enumerates every assignment instead of solving it.

#![allow(dead_code)]

pub mod acoustic;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use seldkit::eval::FrameEvents;

fn angle(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let c = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt().atan2(a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).to_degrees()
}

/// All injective maps from `0..k` into `0..n`.
fn injections(k: usize, n: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for head in injections(k - 1, n) {
        for j in 0..n {
            if !head.contains(&j) {
                let mut v = head.clone();
                v.push(j);
                out.push(v);
            }
        }
    }
    out
}

fn best_angles(r: &[[f64; 3]], p: &[[f64; 3]]) -> Vec<f64> {
    let (a, b) = if r.len() <= p.len() { (r, p) } else { (p, r) };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for inj in injections(a.len(), b.len()) {
        let angles: Vec<f64> = inj.iter().enumerate().map(|(i, &j)| angle(&a[i], &b[j])).collect();
        let cost: f64 = angles.iter().sum();
        if best.as_ref().map_or(true, |(c, _)| cost < *c) {
            best = Some((cost, angles));
        }
    }
    let mut v = best.unwrap().1;
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Default, Clone)]
struct Acc {
    tp: usize,
    fp: usize,
    fn_: usize,
    sdi: usize,
    nref: usize,
    de_tp: usize,
    de_fn: usize,
    de_sum: f64,
    seen: bool,
}

/// Returns `(er20, f20, le_cd, lr_cd, e_seld)`.
pub fn brute_force_scores(pred: &FrameEvents, reference: &FrameEvents, n_classes: usize) -> [f64; 5] {
    let n = reference.frames.len();
    let mut acc = vec![Acc::default(); n_classes];
    let mut s = 0;
    while s < n {
        let end = (s + 10).min(n);
        for (c, a) in acc.iter_mut().enumerate() {
            let mut nr = 0;
            let mut np = 0;
            let mut per_frame: Vec<Vec<f64>> = Vec::new();
            for t in s..end {
                let r: Vec<[f64; 3]> = reference.frames[t].iter().filter(|e| e.0 == c).map(|e| e.1).collect();
                let p: Vec<[f64; 3]> = pred.frames[t].iter().filter(|e| e.0 == c).map(|e| e.1).collect();
                nr = nr.max(r.len());
                np = np.max(p.len());
                if !r.is_empty() && !p.is_empty() {
                    per_frame.push(best_angles(&r, &p));
                }
            }
            a.seen |= nr + np > 0;
            let m = per_frame.iter().map(|v| v.len()).max().unwrap_or(0);
            let mut good = 0;
            let mut bad = 0;
            for k in 0..m {
                let vals: Vec<f64> = per_frame.iter().filter_map(|v| v.get(k).copied()).collect();
                let mut sum = 0.0;
                for v in &vals {
                    sum += v;
                }
                let avg = sum / vals.len() as f64;
                a.de_sum += avg;
                if avg <= 20.0 {
                    good += 1;
                } else {
                    bad += 1;
                }
            }
            let fn_ = bad + nr - m;
            let fp = bad + np - m;
            a.tp += good;
            a.fp += fp;
            a.fn_ += fn_;
            a.sdi += fp.max(fn_);
            a.nref += nr;
            a.de_tp += m;
            a.de_fn += nr - m;
        }
        s = end;
    }
    let sdi: usize = acc.iter().map(|a| a.sdi).sum();
    let nref: usize = acc.iter().map(|a| a.nref).sum();
    let er = sdi as f64 / nref.max(1) as f64;
    let present: Vec<&Acc> = acc.iter().filter(|a| a.seen).collect();
    let (f, le, lr) = if present.is_empty() {
        (1.0, 0.0, 1.0)
    } else {
        let k = present.len() as f64;
        let f: f64 = present
            .iter()
            .map(|a| {
                let d = a.tp as f64 + 0.5 * (a.fp + a.fn_) as f64;
                if d == 0.0 { 0.0 } else { a.tp as f64 / d }
            })
            .sum::<f64>();
        let le: f64 = present.iter().map(|a| if a.de_tp == 0 { 180.0 } else { a.de_sum / a.de_tp as f64 }).sum::<f64>();
        let lr: f64 = present
            .iter()
            .map(|a| if a.de_tp + a.de_fn == 0 { 0.0 } else { a.de_tp as f64 / (a.de_tp + a.de_fn) as f64 })
            .sum::<f64>();
        (f / k, le / k, lr / k)
    };
    let e = 0.25 * (er + (1.0 - f) + le / 180.0 + (1.0 - lr));
    [er, f, le, lr, e]
}

pub fn random_dir(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// A short random scene: up to `max_per_frame` events per frame over
/// `n_classes` classes, directions either random or near a per-class anchor.
pub fn micro_scene(rng: &mut ChaCha8Rng, n_frames: usize, n_classes: usize, max_per_frame: usize) -> FrameEvents {
    let anchors: Vec<[f64; 3]> = (0..n_classes).map(|_| random_dir(rng)).collect();
    let mut ev = FrameEvents::new(n_frames);
    for f in ev.frames.iter_mut() {
        let k = rng.gen_range(0..=max_per_frame);
        for _ in 0..k {
            let c = rng.gen_range(0..n_classes);
            let d = if rng.gen_bool(0.5) {
                let j = random_dir(rng);
                let a = anchors[c];
                let w: f64 = rng.gen_range(0.0..0.4);
                let v = [a[0] + w * j[0], a[1] + w * j[1], a[2] + w * j[2]];
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                [v[0] / n, v[1] / n, v[2] / n]
            } else {
                random_dir(rng)
            };
            f.push((c, d));
        }
    }
    ev
}

/// A perturbed copy: events jittered, dropped, or added.
pub fn perturb(rng: &mut ChaCha8Rng, src: &FrameEvents, n_classes: usize, max_per_frame: usize) -> FrameEvents {
    let mut out = FrameEvents::new(src.frames.len());
    for (t, f) in src.frames.iter().enumerate() {
        for &(c, d) in f {
            if rng.gen_bool(0.15) {
                continue;
            }
            let c = if rng.gen_bool(0.1) { rng.gen_range(0..n_classes) } else { c };
            let j = random_dir(rng);
            let w: f64 = rng.gen_range(0.0..0.6);
            let v = [d[0] + w * j[0], d[1] + w * j[1], d[2] + w * j[2]];
            out.frames[t].push((c, v));
        }
        while out.frames[t].len() < max_per_frame && rng.gen_bool(0.15) {
            out.frames[t].push((rng.gen_range(0..n_classes), random_dir(rng)));
        }
    }
    out
}

use seldkit::features::FeatureTensor;
use seldkit::meta::{Clip, EnvData};
use seldkit::model::ModelConfig;
use seldkit::scene::LabelRow;

pub const TOY_FRAMES: usize = 12;
pub const TOY_MELS: usize = 16;

/// A small backbone for synthetic feature tensors.
pub fn toy_model_config() -> ModelConfig {
    let mut c = ModelConfig::default();
    c.backbone.n_mels = TOY_MELS;
    c.backbone.conv_channels = [4, 6, 8, 8];
    c.backbone.pool_freq = [2, 2, 2, 2];
    c.backbone.gru_hidden = 8;
    c.backbone.n_classes = 2;
    c.backbone.frame_hop_s = 0.05;
    c.env_dim = 16;
    c.attenuation.hidden = 16;
    c
}

/// Synthetic clip: class `c` shows up as a band of mel bins in the first four
/// channels, the direction as constant intensity-vector channels in that band.
pub fn toy_features(rng: &mut ChaCha8Rng, class: usize, dir: [f64; 3], noise: f64) -> FeatureTensor {
    let (t, f) = (TOY_FRAMES, TOY_MELS);
    let mut data = vec![0.0f32; 7 * t * f];
    for v in data.iter_mut() {
        *v = (noise * rng.gen_range(-1.0..1.0)) as f32;
    }
    let band = class * 8..class * 8 + 6;
    for ti in 0..t {
        for fi in band.clone() {
            for ch in 0..4 {
                data[(ch * t + ti) * f + fi] += 1.0;
            }
            for a in 0..3 {
                data[((4 + a) * t + ti) * f + fi] += dir[a] as f32;
            }
        }
    }
    FeatureTensor { data, channels: 7, frames: t, mels: f, frame_hop_s: 0.05 }
}

/// `n` clips of one class-and-direction event each. `flip` negates the
/// target directions while keeping the inputs.
pub fn toy_env(id: &str, n: usize, seed: u64, dirs: &[[f64; 3]], flip: bool) -> EnvData {
    let cfg = toy_model_config();
    let mut rng = seldkit::rng::stream(seed, 5);
    let clips = (0..n)
        .map(|k| {
            let class = rng.gen_range(0..2);
            let dir = dirs[rng.gen_range(0..dirs.len())];
            let feats = toy_features(&mut rng, class, dir, 0.2);
            let s = if flip { -1.0 } else { 1.0 };
            let labels: Vec<LabelRow> = (0..5)
                .map(|frame| LabelRow { frame, class_idx: class, track_idx: 0, doa: [s * dir[0], s * dir[1], s * dir[2]] })
                .collect();
            Clip::new(format!("{id}_{k:04}"), feats, &labels, &cfg.backbone).unwrap()
        })
        .collect();
    EnvData::new(id, clips)
}
