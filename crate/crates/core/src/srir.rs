//! Shoebox image-source simulation of a four-capsule rigid-sphere array and
//! its first-order ambisonic (ACN/SN3D) encoding.

use std::f64::consts::{LN_10, PI};
use std::path::Path;

use nalgebra::Matrix4;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::acoustics::{
    i_pow, legendre_table, mode_strength_table, sph_harmonic, truncation_order, Direction, KR_MIN,
};
use crate::audio::write_wav_f32;
use crate::dsp::{irfft, rfft};
use crate::error::{Error, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;
pub const DEFAULT_FS: u32 = 24_000;
/// Capsule sphere radius. Four capsules alias above `kR ~ 1`, about 3.7 kHz here.
pub const DEFAULT_RADIUS: f64 = 0.0147;
/// Tikhonov constant for the mode-strength inversion; caps the gain at 20 dB.
pub const FOA_REG: f64 = 0.0025;
pub const COND_LIMIT: f64 = 1e6;
/// Samples kept after the last arrival for sphere diffraction and encoder ringing.
const TAIL_SAMPLES: usize = 512;
/// Raised-cosine roll-off starts at this fraction of Nyquist.
const ROLLOFF_START: f64 = 0.8;

pub type Channels4 = [Vec<f64>; 4];

/// Shoebox room. Walls are ordered `x=0, x=Lx, y=0, y=Ly, z=0, z=Lz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub dims: [f64; 3],
    pub absorption: [f64; 6],
    pub max_order: usize,
    pub c: f64,
    pub fs: u32,
}

impl RoomSpec {
    pub fn new(dims: [f64; 3], absorption: [f64; 6], max_order: usize, c: f64, fs: u32) -> Result<Self> {
        if dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::Geometry(format!("room dims must be positive, got {dims:?}")));
        }
        if absorption.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidArgument(format!("absorption outside [0,1]: {absorption:?}")));
        }
        if !(c.is_finite() && c > 0.0) || fs == 0 {
            return Err(Error::InvalidArgument("speed of sound and fs must be positive".into()));
        }
        Ok(RoomSpec { dims, absorption, max_order, c, fs })
    }

    /// Same absorption on every wall, default `c` and `fs`.
    pub fn uniform(dims: [f64; 3], alpha: f64, max_order: usize) -> Result<Self> {
        Self::new(dims, [alpha; 6], max_order, SPEED_OF_SOUND, DEFAULT_FS)
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    pub fn wall_areas(&self) -> [f64; 6] {
        let [x, y, z] = self.dims;
        [y * z, y * z, x * z, x * z, x * y, x * y]
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        p.iter().zip(&self.dims).all(|(v, d)| *v > 0.0 && v < d)
    }
}

/// Sabine reverberation time in seconds.
pub fn sabine_rt60(room: &RoomSpec) -> f64 {
    let a: f64 = room.wall_areas().iter().zip(&room.absorption).map(|(s, a)| s * a).sum();
    24.0 * LN_10 * room.volume() / (room.c * a)
}

/// Uniform absorption coefficient giving Sabine RT60 `rt60` for `dims`.
pub fn absorption_for_rt60(dims: [f64; 3], rt60: f64, c: f64) -> Result<f64> {
    if !(rt60.is_finite() && rt60 > 0.0) {
        return Err(Error::InvalidArgument(format!("rt60 must be positive, got {rt60}")));
    }
    let v: f64 = dims.iter().product();
    let s = 2.0 * (dims[0] * dims[1] + dims[0] * dims[2] + dims[1] * dims[2]);
    let alpha = 24.0 * LN_10 * v / (c * s * rt60);
    if alpha > 1.0 {
        return Err(Error::Domain(format!("rt60 {rt60} s too short for room {dims:?}")));
    }
    Ok(alpha)
}

/// Capsules on a rigid sphere around `center`.
#[derive(Debug, Clone, PartialEq)]
pub struct MicArraySpec {
    pub center: [f64; 3],
    pub radius: f64,
    pub capsule_dirs: [Direction; 4],
}

impl MicArraySpec {
    pub fn new(center: [f64; 3], radius: f64, capsule_dirs: [Direction; 4]) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::Geometry(format!("array radius must be positive, got {radius}")));
        }
        for i in 0..4 {
            for j in i + 1..4 {
                if capsule_dirs[i].angle_to(&capsule_dirs[j]) < 1e-9 {
                    return Err(Error::Geometry(format!("capsules {i} and {j} coincide")));
                }
            }
        }
        Ok(MicArraySpec { center, radius, capsule_dirs })
    }

    /// Tetrahedral layout at (45°,35°), (-45°,-35°), (135°,-35°), (-135°,35°) on [`DEFAULT_RADIUS`].
    pub fn tetrahedral(center: [f64; 3]) -> Self {
        let d = |az: f64, el: f64| {
            Direction::from_azimuth_elevation(az.to_radians(), el.to_radians()).expect("valid")
        };
        MicArraySpec {
            center,
            radius: DEFAULT_RADIUS,
            capsule_dirs: [d(45.0, 35.0), d(-45.0, -35.0), d(135.0, -35.0), d(-135.0, 35.0)],
        }
    }

    pub fn check_inside(&self, room: &RoomSpec) -> Result<()> {
        let ok = self
            .center
            .iter()
            .zip(&room.dims)
            .all(|(c, d)| c - self.radius > 0.0 && c + self.radius < *d);
        if ok {
            Ok(())
        } else {
            Err(Error::Geometry(format!("array at {:?} not inside room {:?}", self.center, room.dims)))
        }
    }

    /// Complex SH matrix, rows = capsules, columns = (0,0), (1,-1), (1,0), (1,1).
    pub fn sh_matrix(&self) -> Matrix4<Complex64> {
        let mut y = Matrix4::zeros();
        for (r, dir) in self.capsule_dirs.iter().enumerate() {
            for (q, (n, m)) in SH_COLUMNS.iter().enumerate() {
                y[(r, q)] = sph_harmonic(*n, *m, *dir).expect("first-order SH");
            }
        }
        y
    }
}

const SH_COLUMNS: [(usize, i32); 4] = [(0, 0), (1, -1), (1, 0), (1, 1)];

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSource {
    pub position: [f64; 3],
    pub order: usize,
    /// Product of wall amplitude reflection coefficients.
    pub gain: f64,
    /// Distance to the array center in meters.
    pub distance: f64,
    pub delay_s: f64,
    /// Arrival direction seen from the array center.
    pub doa: Direction,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// All image sources of order `<= room.max_order` with nonzero gain.
pub fn enumerate_image_sources(room: &RoomSpec, src: [f64; 3], mic_center: [f64; 3]) -> Result<Vec<ImageSource>> {
    if !room.contains(src) {
        return Err(Error::Geometry(format!("source {src:?} outside room {:?}", room.dims)));
    }
    if !room.contains(mic_center) {
        return Err(Error::Geometry(format!("array center {mic_center:?} outside room {:?}", room.dims)));
    }
    if norm(sub(src, mic_center)) < 1e-9 {
        return Err(Error::Geometry("source coincides with array center".into()));
    }
    let beta: Vec<f64> = room.absorption.iter().map(|a| (1.0 - a).sqrt()).collect();
    let max = room.max_order as i64;
    let span = max / 2 + 1;

    // per axis: (coordinate, reflections, gain) for every lattice index with order <= max
    let mut axes: Vec<Vec<(f64, i64, f64)>> = Vec::with_capacity(3);
    for a in 0..3 {
        let mut v = Vec::new();
        for n in -span..=span {
            for q in 0..2i64 {
                let lo = (n - q).abs();
                let hi = n.abs();
                if lo + hi > max {
                    continue;
                }
                let pos = (1 - 2 * q) as f64 * src[a] + 2.0 * n as f64 * room.dims[a];
                let g = beta[2 * a].powi(lo as i32) * beta[2 * a + 1].powi(hi as i32);
                v.push((pos, lo + hi, g));
            }
        }
        axes.push(v);
    }

    let mut out = Vec::new();
    for &(x, ox, gx) in &axes[0] {
        for &(y, oy, gy) in &axes[1] {
            if ox + oy > max {
                continue;
            }
            for &(z, oz, gz) in &axes[2] {
                let order = ox + oy + oz;
                let gain = gx * gy * gz;
                if order > max || gain == 0.0 {
                    continue;
                }
                let position = [x, y, z];
                let rel = sub(position, mic_center);
                let distance = norm(rel);
                out.push(ImageSource {
                    position,
                    order: order as usize,
                    gain,
                    distance,
                    delay_s: distance / room.c,
                    doa: Direction::from_vector(rel)?,
                });
            }
        }
    }
    Ok(out)
}

/// Raised-cosine taper from `ROLLOFF_START` of Nyquist down to zero at Nyquist.
fn rolloff(bin: usize, nfft: usize) -> f64 {
    let r = bin as f64 / (nfft as f64 / 2.0);
    if r <= ROLLOFF_START {
        1.0
    } else {
        0.5 * (1.0 + (PI * (r - ROLLOFF_START) / (1.0 - ROLLOFF_START)).cos())
    }
}

/// `b_n(kR)` per bin for `n <= n_max`; `[n][bin]`. DC takes the `kR -> 0` limit.
fn mode_strength_bins(n_max: usize, radius: f64, c: f64, fs: u32, nfft: usize) -> Result<Vec<Vec<Complex64>>> {
    let bins = nfft / 2 + 1;
    let mut out = vec![vec![Complex64::new(0.0, 0.0); bins]; n_max + 1];
    for j in 0..bins {
        let kr = 2.0 * PI * (j as f64 * fs as f64 / nfft as f64) / c * radius;
        if kr <= KR_MIN {
            out[0][j] = Complex64::new(1.0, 0.0);
            continue;
        }
        let b = mode_strength_table(n_max, kr)?;
        for (n, v) in b.into_iter().enumerate() {
            out[n][j] = if v.is_finite() { v } else { Complex64::new(0.0, 0.0) };
        }
    }
    Ok(out)
}

/// Gaussian-gridding evaluation of `sum_s w[s] exp(-2 pi i j t_s / n)` for
/// `j = 0..=n/2` and several weight channels sharing the same times `t_s` (in samples).
struct DelaySum {
    n: usize,
    mr: usize,
    tau: f64,
    grids: Vec<Vec<f64>>,
}

const GRID_SPREAD: i64 = 12;

impl DelaySum {
    fn new(n: usize, channels: usize) -> Self {
        let r = 2.0;
        let tau = PI * GRID_SPREAD as f64 / ((n * n) as f64 * r * (r - 0.5));
        let mr = 2 * n;
        DelaySum { n, mr, tau, grids: vec![vec![0.0; mr]; channels] }
    }

    fn spread_weights(&self, t: f64) -> (i64, [f64; 2 * GRID_SPREAD as usize]) {
        let x = 2.0 * PI * t / self.n as f64;
        let h = 2.0 * PI / self.mr as f64;
        let m0 = (x / h).floor() as i64;
        let mut w = [0.0; 2 * GRID_SPREAD as usize];
        for (i, l) in (-GRID_SPREAD + 1..=GRID_SPREAD).enumerate() {
            let d = x - (m0 + l) as f64 * h;
            w[i] = (-d * d / (4.0 * self.tau)).exp();
        }
        (m0 - GRID_SPREAD + 1, w)
    }

    fn add(&mut self, start: i64, w: &[f64], channel: usize, amp: f64) {
        let mr = self.mr as i64;
        let g = &mut self.grids[channel];
        for (i, wi) in w.iter().enumerate() {
            let m = (start + i as i64).rem_euclid(mr) as usize;
            g[m] += amp * wi;
        }
    }

    /// Consumes the grids, yielding one-sided sums per channel.
    fn finish(self, mut each: impl FnMut(usize, &[Complex64])) {
        let half = self.n / 2;
        let fft = FftPlanner::new().plan_fft_forward(self.mr);
        let deconv: Vec<f64> = (0..=half)
            .map(|k| (PI / self.tau).sqrt() * ((k * k) as f64 * self.tau).exp() / self.mr as f64)
            .collect();
        let mut buf = vec![Complex64::new(0.0, 0.0); self.mr];
        let mut out = vec![Complex64::new(0.0, 0.0); half + 1];
        for (ch, g) in self.grids.into_iter().enumerate() {
            for (b, v) in buf.iter_mut().zip(&g) {
                *b = Complex64::new(*v, 0.0);
            }
            fft.process(&mut buf);
            for k in 0..=half {
                out[k] = buf[k] * deconv[k];
            }
            each(ch, &out);
        }
    }
}

/// One-sided capsule spectra (`nfft/2 + 1` bins), band-limited by the Nyquist roll-off.
pub fn render_array_spectra(
    images: &[ImageSource],
    array: &MicArraySpec,
    c: f64,
    fs: u32,
    nfft: usize,
) -> Result<[Vec<Complex64>; 4]> {
    if nfft < 2 || nfft % 2 != 0 || fs == 0 {
        return Err(Error::InvalidArgument(format!("bad nfft {nfft} or fs {fs}")));
    }
    let max_delay = images.iter().map(|s| s.delay_s).fold(0.0, f64::max);
    if max_delay + array.radius / c > nfft as f64 / fs as f64 {
        log::warn!("longest delay {max_delay:.4} s exceeds nfft/fs, output will alias");
    }
    let k_max = PI * fs as f64 / c;
    let n_max = truncation_order(k_max * array.radius);
    let orders = n_max + 1;

    let mut acc = DelaySum::new(nfft, 4 * orders);
    let axes: Vec<[f64; 3]> = array.capsule_dirs.iter().map(|d| d.to_vector()).collect();
    for s in images {
        let (start, w) = acc.spread_weights(s.delay_s * fs as f64);
        let a = s.gain / (4.0 * PI * s.distance);
        let u = s.doa.to_vector();
        for (r, ax) in axes.iter().enumerate() {
            let cos = (ax[0] * u[0] + ax[1] * u[1] + ax[2] * u[2]).clamp(-1.0, 1.0);
            let p = legendre_table(n_max, cos);
            for (n, pn) in p.iter().enumerate() {
                acc.add(start, &w, r * orders + n, a * pn);
            }
        }
    }

    // i^n (2n+1) conj(b_n) is the DFT-convention counterpart of the sphere series
    let b = mode_strength_bins(n_max, array.radius, c, fs, nfft)?;
    let bins = nfft / 2 + 1;
    let mut out: [Vec<Complex64>; 4] = std::array::from_fn(|_| vec![Complex64::new(0.0, 0.0); bins]);
    acc.finish(|ch, d| {
        let (r, n) = (ch / orders, ch % orders);
        let scale = i_pow(n) * (2 * n + 1) as f64;
        let x = &mut out[r];
        for j in 0..bins {
            x[j] += scale * b[n][j].conj() * d[j];
        }
    });
    for x in out.iter_mut() {
        for (j, v) in x.iter_mut().enumerate() {
            *v *= rolloff(j, nfft);
        }
    }
    Ok(out)
}

/// Capsule impulse responses, `nfft/2` samples each.
pub fn render_array_rir(images: &[ImageSource], array: &MicArraySpec, c: f64, fs: u32, nfft: usize) -> Result<Channels4> {
    let spec = render_array_spectra(images, array, c, fs, nfft)?;
    Ok(spec.map(|s| {
        let mut x = irfft(&s, nfft);
        x.truncate(nfft / 2);
        x
    }))
}

/// Per-bin 4x4 maps from capsule spectra to ACN/SN3D (W, Y, Z, X) spectra.
pub fn foa_encoder(array: &MicArraySpec, c: f64, fs: u32, nfft: usize) -> Result<Vec<Matrix4<Complex64>>> {
    let y = array.sh_matrix();
    let svd = y.svd(true, true);
    let sv = svd.singular_values;
    let cond = sv.max() / sv.min();
    if !(cond.is_finite() && cond <= COND_LIMIT) {
        return Err(Error::IllConditioned(format!("capsule SH matrix condition number {cond:.3e}")));
    }
    let pinv = svd
        .pseudo_inverse(0.0)
        .map_err(|e| Error::IllConditioned(e.to_string()))?;

    let to_real = complex_to_sn3d();
    let b = mode_strength_bins(1, array.radius, c, fs, nfft)?;
    let bins = nfft / 2 + 1;
    let mut out = Vec::with_capacity(bins);
    for j in 0..bins {
        let mut g = Matrix4::<Complex64>::zeros();
        for (q, (n, _)) in SH_COLUMNS.iter().enumerate() {
            let ch = i_pow(*n) * b[*n][j].conj();
            g[(q, q)] = ch.conj() / ((ch.norm_sqr() + FOA_REG) * 4.0 * PI);
        }
        out.push(to_real * g * pinv);
    }
    Ok(out)
}

/// Maps conjugated complex SH coefficients `(0,0), (1,-1), (1,0), (1,1)` to real SN3D `W, Y, Z, X`.
fn complex_to_sn3d() -> Matrix4<Complex64> {
    let z = Complex64::new(0.0, 0.0);
    let w = Complex64::new((4.0 * PI).sqrt(), 0.0);
    let s1 = (4.0 * PI / 3.0).sqrt();
    let h = (8.0 * PI / 3.0).sqrt() / 2.0;
    let yv = Complex64::new(0.0, -h); // 1/(2i) * sqrt(8 pi / 3)
    let xv = Complex64::new(h, 0.0);
    Matrix4::new(
        w, z, z, z,
        z, yv, z, yv,
        z, z, Complex64::new(s1, 0.0), z,
        z, xv, z, -xv,
    )
}

fn apply_encoder(enc: &[Matrix4<Complex64>], x: &[Vec<Complex64>; 4]) -> [Vec<Complex64>; 4] {
    let bins = enc.len();
    let mut out: [Vec<Complex64>; 4] = std::array::from_fn(|_| vec![Complex64::new(0.0, 0.0); bins]);
    for (j, m) in enc.iter().enumerate() {
        for o in 0..4 {
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..4 {
                acc += m[(o, r)] * x[r][j];
            }
            out[o][j] = acc;
        }
    }
    out
}

/// Encodes capsule impulse responses to ACN/SN3D FOA, keeping their length.
pub fn encode_foa(array_ir: &[Vec<f64>], array: &MicArraySpec, c: f64, fs: u32) -> Result<Channels4> {
    if array_ir.len() != 4 {
        return Err(Error::shape("encode_foa", format!("expected 4 channels, got {}", array_ir.len())));
    }
    let len = array_ir[0].len();
    if array_ir.iter().any(|x| x.len() != len) || len == 0 {
        return Err(Error::shape("encode_foa", "channels must be non-empty and equal length"));
    }
    let nfft = (2 * len).next_power_of_two();
    let enc = foa_encoder(array, c, fs, nfft)?;
    let x: [Vec<Complex64>; 4] = std::array::from_fn(|r| rfft(&array_ir[r], nfft));
    Ok(apply_encoder(&enc, &x).map(|s| {
        let mut v = irfft(&s, nfft);
        v.truncate(len);
        v
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Srir {
    pub array_ir: Channels4,
    /// ACN/SN3D: W, Y, Z, X.
    pub foa_ir: Channels4,
    pub source_doa: Direction,
    pub rt60_nominal: f64,
    pub fs: u32,
}

impl Srir {
    pub fn len(&self) -> usize {
        self.foa_ir[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Full pipeline: images, capsule rendering, FOA encoding.
pub fn simulate_srir(room: &RoomSpec, array: &MicArraySpec, src: [f64; 3]) -> Result<Srir> {
    array.check_inside(room)?;
    let images = enumerate_image_sources(room, src, array.center)?;
    let max_delay = images.iter().map(|s| s.delay_s).fold(0.0, f64::max);
    let len = ((max_delay + array.radius / room.c) * room.fs as f64).ceil() as usize + TAIL_SAMPLES;
    let nfft = (2 * len).next_power_of_two();

    let x = render_array_spectra(&images, array, room.c, room.fs, nfft)?;
    let enc = foa_encoder(array, room.c, room.fs, nfft)?;
    let a = apply_encoder(&enc, &x);
    let to_time = |s: &Vec<Complex64>| {
        let mut v = irfft(s, nfft);
        v.truncate(len);
        v
    };
    let array_ir: Channels4 = std::array::from_fn(|r| to_time(&x[r]));
    let foa_ir: Channels4 = std::array::from_fn(|r| to_time(&a[r]));
    if array_ir.iter().chain(&foa_ir).flatten().any(|v| !v.is_finite()) {
        return Err(Error::Divergence("non-finite SRIR samples".into()));
    }
    Ok(Srir {
        array_ir,
        foa_ir,
        source_doa: Direction::from_vector(sub(src, array.center))?,
        rt60_nominal: sabine_rt60(room),
        fs: room.fs,
    })
}

/// Backward-integrated energy decay in dB, normalized to 0 dB at the start.
pub fn schroeder_db(ir: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut e: Vec<f64> = ir
        .iter()
        .rev()
        .map(|v| {
            acc += v * v;
            acc
        })
        .collect();
    e.reverse();
    let total = e.first().copied().unwrap_or(0.0);
    e.iter()
        .map(|v| if total > 0.0 { 10.0 * (v / total).max(1e-300).log10() } else { f64::NEG_INFINITY })
        .collect()
}

/// T60 from a least-squares line through the -5..-25 dB part of the decay curve.
pub fn schroeder_t60(ir: &[f64], fs: u32) -> Result<f64> {
    let curve = schroeder_db(ir);
    let pts: Vec<(f64, f64)> = curve
        .iter()
        .enumerate()
        .filter(|(_, v)| (-25.0..=-5.0).contains(*v))
        .map(|(i, v)| (i as f64 / fs as f64, *v))
        .collect();
    if pts.len() < 2 || curve.last().is_none_or(|v| *v > -25.0) {
        return Err(Error::Data("decay curve does not reach -25 dB".into()));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - mv)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(Error::Data("decay curve is not decreasing".into()));
    }
    Ok(-60.0 / slope)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SrirIndexRow {
    pub room_id: String,
    pub src_x: f64,
    pub src_y: f64,
    pub src_z: f64,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub rt60_nominal_s: f64,
}

/// File name of the `k`-th SRIR of a room in an export directory.
pub fn srir_file_name(room_id: &str, k: usize) -> String {
    format!("{room_id}_{k:04}.wav")
}

/// Writes one 4-channel float WAV per SRIR (FOA channels) plus `srir_index.csv`.
pub fn export_srirs(dir: &Path, entries: &[(String, [f64; 3], Srir)]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("srir_index.csv"))?;
    let mut counts = std::collections::HashMap::<&str, usize>::new();
    for (room_id, src, s) in entries {
        let k = counts.entry(room_id.as_str()).or_insert(0);
        write_wav_f32(&dir.join(srir_file_name(room_id, *k)), &s.foa_ir, s.fs)?;
        *k += 1;
        w.serialize(SrirIndexRow {
            room_id: room_id.clone(),
            src_x: src[0],
            src_y: src[1],
            src_z: src[2],
            azimuth_deg: s.source_doa.azimuth().to_degrees(),
            elevation_deg: s.source_doa.elevation().to_degrees(),
            rt60_nominal_s: s.rt60_nominal,
        })?;
    }
    w.flush()?;
    Ok(())
}
