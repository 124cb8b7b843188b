//! STFT, log-mel spectrograms and FOA intensity vectors.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const LOG_EPS: f64 = 1e-10;
pub const N_CHANNELS: usize = 7;
const CACHE_MAGIC: u32 = u32::from_le_bytes(*b"SLDF");
const CACHE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureParams {
    pub fs: u32,
    pub nfft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self { fs: 24_000, nfft: 1024, hop: 320, n_mels: 64, f_min: 50.0, f_max: 12_000.0 }
    }
}

impl FeatureParams {
    pub fn n_bins(&self) -> usize {
        self.nfft / 2 + 1
    }

    /// Frames produced for `n` samples with centered frames.
    pub fn n_frames(&self, n: usize) -> usize {
        1 + n / self.hop
    }

    pub fn frame_hop_s(&self) -> f64 {
        self.hop as f64 / self.fs as f64
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.nfft >= 2
            && self.nfft % 2 == 0
            && self.hop >= 1
            && self.n_mels >= 1
            && self.f_min >= 0.0
            && self.f_max > self.f_min
            && self.f_max <= self.fs as f64 / 2.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid feature parameters {self:?}")))
        }
    }
}

/// Per-channel complex spectrogram, frame-major (`frames × bins`).
#[derive(Clone, Debug)]
pub struct Spectrogram {
    pub n_frames: usize,
    pub n_bins: usize,
    pub channels: Vec<Vec<Complex64>>,
}

impl Spectrogram {
    pub fn frame(&self, c: usize, t: usize) -> &[Complex64] {
        &self.channels[c][t * self.n_bins..(t + 1) * self.n_bins]
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Hann-windowed STFT with reflect padding of `nfft/2` on both sides.
pub fn stft(audio: &[Vec<f64>], p: &FeatureParams) -> Result<Spectrogram> {
    let n = audio.first().map_or(0, Vec::len);
    if audio.iter().any(|c| c.len() != n) {
        return Err(Error::shape("stft", "channels differ in length"));
    }
    if n < p.nfft {
        return Err(Error::shape("stft", format!("{n} samples is shorter than the {}-point window", p.nfft)));
    }
    let win = hann(p.nfft);
    let half = (p.nfft / 2) as isize;
    let n_frames = p.n_frames(n);
    let n_bins = p.n_bins();
    let fft = FftPlanner::new().plan_fft_forward(p.nfft);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex64::default(); p.nfft];
    let channels = audio
        .iter()
        .map(|x| {
            let mut out = Vec::with_capacity(n_frames * n_bins);
            for t in 0..n_frames {
                let start = (t * p.hop) as isize - half;
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = Complex64::new(x[reflect_index(start + i as isize, n)] * win[i], 0.0);
                }
                fft.process_with_scratch(&mut buf, &mut scratch);
                out.extend_from_slice(&buf[..n_bins]);
            }
            out
        })
        .collect();
    Ok(Spectrogram { n_frames, n_bins, channels })
}

pub fn hz_to_mel(f: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let logstep = 6.4f64.ln() / 27.0;
    if f < min_log_hz {
        f / f_sp
    } else {
        min_log_hz / f_sp + (f / min_log_hz).ln() / logstep
    }
}

pub fn mel_to_hz(m: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_mel = 1000.0 / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if m < min_log_mel {
        m * f_sp
    } else {
        1000.0 * (logstep * (m - min_log_mel)).exp()
    }
}

/// Sparse mel filterbank; each row sums to one.
#[derive(Clone, Debug)]
pub struct MelBank {
    /// Per band: first bin and weights.
    pub rows: Vec<(usize, Vec<f64>)>,
    pub n_bins: usize,
}

impl MelBank {
    pub fn new(p: &FeatureParams) -> Result<Self> {
        p.validate()?;
        let n_bins = p.n_bins();
        let (m0, m1) = (hz_to_mel(p.f_min), hz_to_mel(p.f_max));
        let edges: Vec<f64> = (0..p.n_mels + 2)
            .map(|i| mel_to_hz(m0 + (m1 - m0) * i as f64 / (p.n_mels + 1) as f64))
            .collect();
        let bin_hz = p.fs as f64 / p.nfft as f64;
        let mut rows = Vec::with_capacity(p.n_mels);
        for b in 0..p.n_mels {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            let w: Vec<f64> = (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    ((f - lo) / (mid - lo)).min((hi - f) / (hi - mid)).max(0.0)
                })
                .collect();
            let Some(first) = w.iter().position(|v| *v > 0.0) else {
                return Err(Error::Config(format!("mel band {b} ({lo:.1}-{hi:.1} Hz) covers no FFT bin")));
            };
            let last = w.iter().rposition(|v| *v > 0.0).unwrap();
            let s: f64 = w[first..=last].iter().sum();
            rows.push((first, w[first..=last].iter().map(|v| v / s).collect()));
        }
        Ok(Self { rows, n_bins })
    }

    pub fn n_mels(&self) -> usize {
        self.rows.len()
    }

    pub fn dense(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|(first, w)| {
                let mut row = vec![0.0; self.n_bins];
                row[*first..first + w.len()].copy_from_slice(w);
                row
            })
            .collect()
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for ((first, w), o) in self.rows.iter().zip(out.iter_mut()) {
            *o = w.iter().zip(&x[*first..]).map(|(a, b)| a * b).sum();
        }
    }
}

fn log_add_eps(log_x: f64) -> f64 {
    let le = LOG_EPS.ln();
    let (hi, lo) = if log_x > le { (log_x, le) } else { (le, log_x) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log(mel(|X|²) + eps)` per channel, `frames × n_mels`.
pub fn log_mel(spec: &Spectrogram, bank: &MelBank) -> Result<Vec<Vec<f64>>> {
    log_mel_scaled(spec, bank, 0.0)
}

/// As [`log_mel`] for a spectrogram computed from audio divided by `exp(log_gain)`.
fn log_mel_scaled(spec: &Spectrogram, bank: &MelBank, log_gain: f64) -> Result<Vec<Vec<f64>>> {
    if spec.n_bins != bank.n_bins {
        return Err(Error::shape("log_mel", format!("{} bins, filterbank expects {}", spec.n_bins, bank.n_bins)));
    }
    let nm = bank.n_mels();
    let mut pow = vec![0.0; spec.n_bins];
    let mut mel = vec![0.0; nm];
    Ok((0..spec.channels.len())
        .map(|c| {
            let mut out = Vec::with_capacity(spec.n_frames * nm);
            for t in 0..spec.n_frames {
                for (p, x) in pow.iter_mut().zip(spec.frame(c, t)) {
                    *p = x.norm_sqr();
                }
                bank.apply(&pow, &mut mel);
                out.extend(mel.iter().map(|m| {
                    if *m > 0.0 {
                        log_add_eps(m.ln() + 2.0 * log_gain)
                    } else {
                        LOG_EPS.ln()
                    }
                }));
            }
            out
        })
        .collect())
}

/// Mel-banded active intensity `(x, y, z)` from a W, Y, Z, X spectrogram,
/// normalized by the banded `(|W|² + |X|² + |Y|² + |Z|²)/2 + eps`.
pub fn intensity_vectors(spec: &Spectrogram, bank: &MelBank) -> Result<Vec<Vec<f64>>> {
    intensity_scaled(spec, bank, 0.0)
}

fn intensity_scaled(spec: &Spectrogram, bank: &MelBank, log_gain: f64) -> Result<Vec<Vec<f64>>> {
    if spec.channels.len() != 4 {
        return Err(Error::shape("intensity_vectors", format!("need 4 FOA channels, got {}", spec.channels.len())));
    }
    if spec.n_bins != bank.n_bins {
        return Err(Error::shape("intensity_vectors", format!("{} bins, filterbank expects {}", spec.n_bins, bank.n_bins)));
    }
    let nm = bank.n_mels();
    let eps = LOG_EPS * (-2.0 * log_gain).exp();
    let mut out = vec![Vec::with_capacity(spec.n_frames * nm); 3];
    let mut comp = vec![vec![0.0; spec.n_bins]; 3];
    let mut energy = vec![0.0; spec.n_bins];
    let mut banded = vec![vec![0.0; nm]; 3];
    let mut band_e = vec![0.0; nm];
    for t in 0..spec.n_frames {
        let w = spec.frame(0, t);
        // ACN order: Y=1, Z=2, X=3.
        let (y, z, x) = (spec.frame(1, t), spec.frame(2, t), spec.frame(3, t));
        for k in 0..spec.n_bins {
            let wc = w[k].conj();
            comp[0][k] = (wc * x[k]).re;
            comp[1][k] = (wc * y[k]).re;
            comp[2][k] = (wc * z[k]).re;
            energy[k] = 0.5 * (w[k].norm_sqr() + x[k].norm_sqr() + y[k].norm_sqr() + z[k].norm_sqr());
        }
        bank.apply(&energy, &mut band_e);
        for d in 0..3 {
            bank.apply(&comp[d], &mut banded[d]);
            out[d].extend(banded[d].iter().zip(&band_e).map(|(i, e)| i / (e + eps)));
        }
    }
    Ok(out)
}

/// Network input, `C × T × F` floats.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    pub data: Vec<f32>,
    pub channels: usize,
    pub frames: usize,
    pub mels: usize,
    pub frame_hop_s: f64,
}

impl FeatureTensor {
    pub fn at(&self, c: usize, t: usize, f: usize) -> f32 {
        self.data[(c * self.frames + t) * self.mels + f]
    }
}

/// Reusable extractor holding the filterbank.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub params: FeatureParams,
    bank: MelBank,
}

impl FeatureExtractor {
    pub fn new(params: FeatureParams) -> Result<Self> {
        Ok(Self { bank: MelBank::new(&params)?, params })
    }

    pub fn bank(&self) -> &MelBank {
        &self.bank
    }

    /// 4 log-mel channels followed by 3 intensity-vector channels.
    pub fn extract(&self, foa: &[Vec<f64>]) -> Result<FeatureTensor> {
        if foa.len() != 4 {
            return Err(Error::shape("features", format!("need 4 FOA channels, got {}", foa.len())));
        }
        if foa.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("audio contains non-finite samples".into()));
        }
        // Rescale so very loud inputs cannot overflow the power spectrum.
        let peak = foa.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        let (scaled, log_gain);
        let audio = if peak > 1e100 || (peak > 0.0 && peak < 1e-100) {
            log_gain = peak.ln();
            scaled = foa.iter().map(|c| c.iter().map(|v| v / peak).collect()).collect::<Vec<Vec<f64>>>();
            &scaled[..]
        } else {
            log_gain = 0.0;
            foa
        };
        let spec = stft(audio, &self.params)?;
        let lm = log_mel_scaled(&spec, &self.bank, log_gain)?;
        let iv = intensity_scaled(&spec, &self.bank, log_gain)?;
        let mut data = Vec::with_capacity(N_CHANNELS * spec.n_frames * self.bank.n_mels());
        for ch in lm.iter().chain(&iv) {
            data.extend(ch.iter().map(|v| *v as f32));
        }
        Ok(FeatureTensor {
            data,
            channels: N_CHANNELS,
            frames: spec.n_frames,
            mels: self.bank.n_mels(),
            frame_hop_s: self.params.frame_hop_s(),
        })
    }
}

pub fn write_cache(path: &Path, x: &FeatureTensor, p: &FeatureParams) -> Result<()> {
    let header = [
        CACHE_MAGIC,
        CACHE_VERSION,
        x.channels as u32,
        x.frames as u32,
        x.mels as u32,
        p.fs,
        p.hop as u32,
        p.n_mels as u32,
    ];
    let mut bytes = Vec::with_capacity(32 + 4 * x.data.len());
    header.iter().for_each(|h| bytes.extend_from_slice(&h.to_le_bytes()));
    x.data.iter().for_each(|v| bytes.extend_from_slice(&v.to_le_bytes()));
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

/// Reads a cache file written with the same feature parameters.
pub fn read_cache(path: &Path, p: &FeatureParams) -> Result<FeatureTensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    if bytes.len() < 32 {
        return Err(bad("truncated header"));
    }
    let h: Vec<u32> = bytes[..32].chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
    if h[0] != CACHE_MAGIC {
        return Err(bad("not a feature cache"));
    }
    if h[1] != CACHE_VERSION {
        return Err(bad(&format!("unsupported version {}", h[1])));
    }
    if h[5] != p.fs || h[6] as usize != p.hop || h[7] as usize != p.n_mels {
        return Err(bad("feature parameters differ from the cache"));
    }
    let (c, t, f) = (h[2] as usize, h[3] as usize, h[4] as usize);
    let body = &bytes[32..];
    if body.len() != 4 * c * t * f {
        return Err(bad("payload size does not match header"));
    }
    Ok(FeatureTensor {
        data: body.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect(),
        channels: c,
        frames: t,
        mels: f,
        frame_hop_s: p.frame_hop_s(),
    })
}
