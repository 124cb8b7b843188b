//! Joint detection and localization metrics, room-wise aggregation and
//! analysis tables.

use std::fmt::Write as _;
use std::path::Path;

use pathfinding::kuhn_munkres::kuhn_munkres_min;
use pathfinding::matrix::Matrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::LabelRow;

pub const SEGMENT_FRAMES: usize = 10;
pub const DOA_THRESHOLD_DEG: f64 = 20.0;
pub const INSENSITIVE_STD: f64 = 1e-3;

/// Angle costs are matched as integers in units of 1e-9 degrees; the
/// assignment solver is not robust to floating point weights.
const COST_SCALE: f64 = 1e9;

/// Active events per 100 ms frame as `(class, direction)` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameEvents {
    pub frames: Vec<Vec<(usize, [f64; 3])>>,
}

impl FrameEvents {
    pub fn new(n_frames: usize) -> Self {
        FrameEvents { frames: vec![Vec::new(); n_frames] }
    }

    pub fn from_labels(labels: &[LabelRow], n_frames: usize) -> Result<Self> {
        let mut ev = FrameEvents::new(n_frames);
        for l in labels {
            let slot = ev
                .frames
                .get_mut(l.frame)
                .ok_or_else(|| Error::Data(format!("label frame {} outside {} frames", l.frame, n_frames)))?;
            slot.push((l.class_idx, l.doa));
        }
        Ok(ev)
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    fn check(&self, n_classes: usize, what: &str) -> Result<()> {
        for (t, f) in self.frames.iter().enumerate() {
            for (c, v) in f {
                if *c >= n_classes {
                    return Err(Error::Data(format!("{what} frame {t}: class {c} >= {n_classes}")));
                }
                if !v.iter().all(|x| x.is_finite()) || v.iter().all(|x| *x == 0.0) {
                    return Err(Error::Domain(format!("{what} frame {t}: invalid direction {v:?}")));
                }
            }
        }
        Ok(())
    }
}

/// Angle between two directions in degrees. Inputs need not be normalized.
pub fn angle_deg(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let cross = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let s = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    let c = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    s.atan2(c).to_degrees()
}

/// Minimum-cost assignment between two direction sets. Returns the matched
/// angles in ascending order.
pub fn match_angles(refs: &[[f64; 3]], preds: &[[f64; 3]]) -> Vec<f64> {
    if refs.is_empty() || preds.is_empty() {
        return Vec::new();
    }
    let (rows, cols) = if refs.len() <= preds.len() { (refs, preds) } else { (preds, refs) };
    let costs: Vec<Vec<i64>> = rows
        .iter()
        .map(|r| cols.iter().map(|c| (angle_deg(r, c) * COST_SCALE).round() as i64).collect())
        .collect();
    let m = Matrix::from_rows(costs).expect("rectangular cost matrix");
    let (_, assign) = kuhn_munkres_min(&m);
    let mut out: Vec<f64> = assign.iter().enumerate().map(|(i, &j)| angle_deg(&rows[i], &cols[j])).collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Raw per-class counts accumulated over segments.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub subs: usize,
    pub dels: usize,
    pub ins: usize,
    pub n_ref: usize,
    pub de_tp: usize,
    pub de_fn: usize,
    pub total_de: f64,
    /// Whether the class occurs in reference or prediction.
    pub present: bool,
}

impl ClassCounts {
    pub fn f20(&self) -> f64 {
        ratio(self.tp as f64, self.tp as f64 + 0.5 * (self.fp + self.fn_) as f64)
    }

    pub fn er20(&self) -> f64 {
        (self.subs + self.dels + self.ins) as f64 / self.n_ref.max(1) as f64
    }

    pub fn le_cd(&self) -> f64 {
        if self.de_tp == 0 {
            180.0
        } else {
            self.total_de / self.de_tp as f64
        }
    }

    pub fn lr_cd(&self) -> f64 {
        ratio(self.de_tp as f64, (self.de_tp + self.de_fn) as f64)
    }

    /// Scores one (segment, class) cell.
    ///
    /// `matched` holds, per frame with both sides active, the sorted angles
    /// of the optimal assignment. The k-th smallest angle of every frame is
    /// pooled into matched event k.
    pub fn add_segment(&mut self, n_ref: usize, n_pred: usize, matched: &[Vec<f64>]) {
        if n_ref + n_pred > 0 {
            self.present = true;
        }
        let m = matched.iter().map(Vec::len).max().unwrap_or(0);
        let (mut loc_tp, mut loc_fp, mut loc_fn) = (0, 0, 0);
        for k in 0..m {
            let (mut sum, mut cnt) = (0.0, 0usize);
            for frame in matched {
                if let Some(a) = frame.get(k) {
                    sum += a;
                    cnt += 1;
                }
            }
            let avg = sum / cnt as f64;
            self.de_tp += 1;
            self.total_de += avg;
            if avg <= DOA_THRESHOLD_DEG {
                loc_tp += 1;
            } else {
                loc_fp += 1;
                loc_fn += 1;
            }
        }
        loc_fn += n_ref - m;
        loc_fp += n_pred - m;
        self.de_fn += n_ref - m;
        self.tp += loc_tp;
        self.fp += loc_fp;
        self.fn_ += loc_fn;
        self.subs += loc_fp.min(loc_fn);
        self.dels += loc_fn.saturating_sub(loc_fp);
        self.ins += loc_fp.saturating_sub(loc_fn);
        self.n_ref += n_ref;
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    pub class: usize,
    pub counts: ClassCounts,
    pub er20: f64,
    pub f20: f64,
    pub le_cd: f64,
    pub lr_cd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricScores {
    pub er20: f64,
    pub f20: f64,
    pub le_cd: f64,
    pub lr_cd: f64,
    pub e_seld: f64,
    /// Classes present in the room. Empty for aggregates.
    pub per_class: Vec<ClassScores>,
    /// Room breakdown of an aggregate. Empty for a single room.
    pub per_room: Vec<(String, MetricScores)>,
}

/// The aggregate SELD error.
pub fn e_seld(er: f64, f: f64, le_deg: f64, lr: f64) -> Result<f64> {
    if !(0.0..=180.0).contains(&le_deg) {
        return Err(Error::Domain(format!("localization error {le_deg} outside [0, 180]")));
    }
    Ok(0.25 * (er + (1.0 - f) + le_deg / 180.0 + (1.0 - lr)))
}

/// Per-class counts for one room.
pub fn count_events(pred: &FrameEvents, reference: &FrameEvents, n_classes: usize) -> Result<Vec<ClassCounts>> {
    if pred.n_frames() != reference.n_frames() {
        return Err(Error::Data(format!(
            "prediction covers {} frames, reference {}",
            pred.n_frames(),
            reference.n_frames()
        )));
    }
    pred.check(n_classes, "prediction")?;
    reference.check(n_classes, "reference")?;
    let mut counts = vec![ClassCounts::default(); n_classes];
    let n = reference.n_frames();
    for s in (0..n).step_by(SEGMENT_FRAMES) {
        let frames = s..(s + SEGMENT_FRAMES).min(n);
        for (c, cc) in counts.iter_mut().enumerate() {
            let (mut n_ref, mut n_pred) = (0, 0);
            let mut matched = Vec::new();
            for t in frames.clone() {
                let r: Vec<[f64; 3]> = reference.frames[t].iter().filter(|e| e.0 == c).map(|e| e.1).collect();
                let p: Vec<[f64; 3]> = pred.frames[t].iter().filter(|e| e.0 == c).map(|e| e.1).collect();
                n_ref = n_ref.max(r.len());
                n_pred = n_pred.max(p.len());
                if !r.is_empty() && !p.is_empty() {
                    matched.push(match_angles(&r, &p));
                }
            }
            cc.add_segment(n_ref, n_pred, &matched);
        }
    }
    Ok(counts)
}

/// Room scores from per-class counts. ER pools S, D, I over classes; the
/// other three are macro averages over present classes.
pub fn scores_from_counts(counts: &[ClassCounts]) -> Result<MetricScores> {
    let per_class: Vec<ClassScores> = counts
        .iter()
        .enumerate()
        .filter(|(_, c)| c.present)
        .map(|(class, c)| ClassScores { class, counts: *c, er20: c.er20(), f20: c.f20(), le_cd: c.le_cd(), lr_cd: c.lr_cd() })
        .collect();
    let sdi: usize = counts.iter().map(|c| c.subs + c.dels + c.ins).sum();
    let n_ref: usize = counts.iter().map(|c| c.n_ref).sum();
    let er20 = sdi as f64 / n_ref.max(1) as f64;
    let (f20, le_cd, lr_cd) = if per_class.is_empty() {
        (1.0, 0.0, 1.0)
    } else {
        let k = per_class.len() as f64;
        (
            per_class.iter().map(|c| c.f20).sum::<f64>() / k,
            per_class.iter().map(|c| c.le_cd).sum::<f64>() / k,
            per_class.iter().map(|c| c.lr_cd).sum::<f64>() / k,
        )
    };
    Ok(MetricScores { er20, f20, le_cd, lr_cd, e_seld: e_seld(er20, f20, le_cd, lr_cd)?, per_class, per_room: Vec::new() })
}

/// Scores one room.
pub fn match_and_score(pred: &FrameEvents, reference: &FrameEvents, n_classes: usize) -> Result<MetricScores> {
    scores_from_counts(&count_events(pred, reference, n_classes)?)
}

/// Macro average over rooms.
pub fn aggregate(rooms: Vec<(String, MetricScores)>) -> Result<MetricScores> {
    if rooms.is_empty() {
        return Err(Error::InvalidArgument("no rooms to aggregate".into()));
    }
    let k = rooms.len() as f64;
    let mean = |f: fn(&MetricScores) -> f64| rooms.iter().map(|(_, s)| f(s)).sum::<f64>() / k;
    let (er20, f20, le_cd, lr_cd) = (mean(|s| s.er20), mean(|s| s.f20), mean(|s| s.le_cd), mean(|s| s.lr_cd));
    Ok(MetricScores { er20, f20, le_cd, lr_cd, e_seld: e_seld(er20, f20, le_cd, lr_cd)?, per_class: Vec::new(), per_room: rooms })
}

/// Concatenates clips of one room into a single event stream. Each clip is
/// padded to whole segments so no segment straddles two clips.
pub fn concat_clips<'a>(clips: impl IntoIterator<Item = &'a FrameEvents>) -> FrameEvents {
    let mut out = FrameEvents::default();
    for c in clips {
        out.frames.extend(c.frames.iter().cloned());
        let pad = (SEGMENT_FRAMES - c.n_frames() % SEGMENT_FRAMES) % SEGMENT_FRAMES;
        out.frames.extend(std::iter::repeat_with(Vec::new).take(pad));
    }
    out
}

/// A room to score: id, prediction, reference.
pub type RoomEvents = (String, FrameEvents, FrameEvents);

/// Scores rooms in parallel and macro-averages them in input order.
pub fn score_rooms(rooms: &[RoomEvents], n_classes: usize) -> Result<MetricScores> {
    let scored: Result<Vec<(String, MetricScores)>> = rooms
        .par_iter()
        .map(|(id, p, r)| Ok((id.clone(), match_and_score(p, r, n_classes)?)))
        .collect();
    aggregate(scored?)
}

/// Rows `(room, class, er20, f20, le_cd_deg, lr_cd, e_seld)`. Room-level
/// rows use class `all`; the aggregate uses room `macro`.
pub fn write_scores_csv(path: &Path, scores: &MetricScores) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["room", "class", "er20", "f20", "le_cd_deg", "lr_cd", "e_seld"])?;
    let mut row = |room: &str, class: &str, er: f64, f: f64, le: f64, lr: f64, e: f64| {
        w.write_record([room, class, &fmt6(er), &fmt6(f), &fmt6(le), &fmt6(lr), &fmt6(e)])
    };
    let rooms: Vec<(String, &MetricScores)> = if scores.per_room.is_empty() {
        vec![("room".to_string(), scores)]
    } else {
        scores.per_room.iter().map(|(id, s)| (id.clone(), s)).collect()
    };
    for (id, s) in &rooms {
        for c in &s.per_class {
            let e = e_seld(c.er20, c.f20, c.le_cd, c.lr_cd)?;
            row(id, &c.class.to_string(), c.er20, c.f20, c.le_cd, c.lr_cd, e)?;
        }
        row(id, "all", s.er20, s.f20, s.le_cd, s.lr_cd, s.e_seld)?;
    }
    if !scores.per_room.is_empty() {
        row("macro", "all", scores.er20, scores.f20, scores.le_cd, scores.lr_cd, scores.e_seld)?;
    }
    w.flush()?;
    Ok(())
}

fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

/// Plain-text summary table.
pub fn report(scores: &MetricScores) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<16} {:>8} {:>8} {:>10} {:>8} {:>8}", "room", "ER20", "F20", "LE_CD", "LR_CD", "E_SELD");
    let mut line = |id: &str, m: &MetricScores| {
        let _ = writeln!(
            s,
            "{:<16} {:>8.3} {:>7.1}% {:>9.1}° {:>7.1}% {:>8.3}",
            id,
            m.er20,
            100.0 * m.f20,
            m.le_cd,
            100.0 * m.lr_cd,
            m.e_seld
        );
    };
    for (id, m) in &scores.per_room {
        line(id, m);
    }
    line(if scores.per_room.is_empty() { "room" } else { "macro" }, scores);
    s
}

/// Cosine similarity, rows = query environments, columns = support.
pub fn similarity_map(support: &[Vec<f64>], query: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if support.is_empty() || query.is_empty() {
        return Err(Error::InvalidArgument("similarity map needs representations on both sides".into()));
    }
    let d = support[0].len();
    let norm = |v: &Vec<f64>| -> Result<f64> {
        if v.len() != d {
            return Err(Error::shape("similarity_map", format!("dimension {} vs {}", v.len(), d)));
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Domain("zero or non-finite representation".into()));
        }
        Ok(n)
    };
    let sn: Vec<f64> = support.iter().map(norm).collect::<Result<_>>()?;
    let qn: Vec<f64> = query.iter().map(norm).collect::<Result<_>>()?;
    Ok(query
        .iter()
        .zip(&qn)
        .map(|(q, a)| support.iter().zip(&sn).map(|(s, b)| q.iter().zip(s).map(|(x, y)| x * y).sum::<f64>() / (a * b)).collect())
        .collect())
}

/// Number of rows whose diagonal entry is the row maximum.
pub fn diagonal_max_count(m: &[Vec<f64>]) -> usize {
    m.iter()
        .enumerate()
        .filter(|(i, row)| row.get(*i).is_some_and(|d| row.iter().all(|x| x <= d)))
        .count()
}

/// Fraction of query items whose nearest support centroid (by cosine
/// similarity) is their own environment.
pub fn nearest_centroid_purity(m: &[Vec<f64>]) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let hits = m
        .iter()
        .enumerate()
        .filter(|(i, row)| {
            let best = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(j, _)| j);
            best == Some(*i)
        })
        .count();
    hits as f64 / m.len() as f64
}

pub fn write_matrix_csv(path: &Path, rows: &[String], cols: &[String], m: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(std::iter::once("").chain(cols.iter().map(String::as_str)))?;
    for (label, row) in rows.iter().zip(m) {
        w.write_record(std::iter::once(label.clone()).chain(row.iter().map(|x| fmt6(*x))))?;
    }
    w.flush()?;
    Ok(())
}

/// Attenuation factors per (environment, layer).
#[derive(Debug, Clone, PartialEq)]
pub struct AttenuationReport {
    pub envs: Vec<String>,
    pub lambda: Vec<Vec<f64>>,
    /// Population standard deviation across environments, per layer.
    pub layer_std: Vec<f64>,
    pub insensitive: Vec<bool>,
}

impl AttenuationReport {
    pub fn from_lambdas(envs: Vec<String>, lambda: Vec<Vec<f64>>) -> Result<Self> {
        if envs.is_empty() || envs.len() != lambda.len() {
            return Err(Error::InvalidArgument("one lambda row per environment required".into()));
        }
        let p = lambda[0].len();
        if lambda.iter().any(|r| r.len() != p) {
            return Err(Error::shape("attenuation_report", "ragged lambda rows"));
        }
        let k = lambda.len() as f64;
        let layer_std: Vec<f64> = (0..p)
            .map(|l| {
                let mu = lambda.iter().map(|r| r[l]).sum::<f64>() / k;
                (lambda.iter().map(|r| (r[l] - mu).powi(2)).sum::<f64>() / k).sqrt()
            })
            .collect();
        let insensitive = layer_std.iter().map(|s| *s < INSENSITIVE_STD).collect();
        Ok(AttenuationReport { envs, lambda, layer_std, insensitive })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let p = self.layer_std.len();
        let cols: Vec<String> = (1..=p).map(|l| format!("layer{l}")).collect();
        let mut rows = self.envs.clone();
        let mut m = self.lambda.clone();
        rows.push("std".into());
        m.push(self.layer_std.clone());
        write_matrix_csv(path, &rows, &cols, &m)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<16}", "env");
        for l in 1..=self.layer_std.len() {
            let _ = write!(s, " {:>7}", format!("L{l}"));
        }
        s.push('\n');
        for (e, row) in self.envs.iter().zip(&self.lambda) {
            let _ = write!(s, "{e:<16}");
            for v in row {
                let _ = write!(s, " {v:>7.4}");
            }
            s.push('\n');
        }
        let _ = write!(s, "{:<16}", "std");
        for (v, flag) in self.layer_std.iter().zip(&self.insensitive) {
            let _ = write!(s, " {:>7}", format!("{v:.4}{}", if *flag { "*" } else { "" }));
        }
        s.push_str("\n(* environment-insensitive)\n");
        s
    }
}
