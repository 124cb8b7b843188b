//! Multichannel float WAV I/O.

use std::path::Path;

use crate::error::{Error, Result};

/// Writes channel-major samples as interleaved 32-bit float WAV.
pub fn write_wav_f32(path: &Path, channels: &[Vec<f64>], fs: u32) -> Result<()> {
    let n_ch = channels.len();
    if n_ch == 0 {
        return Err(Error::InvalidArgument("no channels to write".into()));
    }
    let len = channels[0].len();
    if channels.iter().any(|c| c.len() != len) {
        return Err(Error::shape("write_wav_f32", "channels differ in length"));
    }
    let spec = hound::WavSpec {
        channels: n_ch as u16,
        sample_rate: fs,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for i in 0..len {
        for ch in channels {
            w.write_sample(ch[i] as f32)?;
        }
    }
    w.finalize()?;
    Ok(())
}

/// Reads a float or integer WAV into channel-major `f64` samples.
pub fn read_wav(path: &Path) -> Result<(Vec<Vec<f64>>, u32)> {
    let mut r = hound::WavReader::open(path)?;
    let spec = r.spec();
    let n_ch = spec.channels as usize;
    let flat: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => r
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            r.samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let mut out = vec![Vec::with_capacity(flat.len() / n_ch.max(1)); n_ch];
    for (i, v) in flat.into_iter().enumerate() {
        out[i % n_ch].push(v);
    }
    Ok((out, spec.sample_rate))
}
