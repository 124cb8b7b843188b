//! Real FFT helpers over `rustfft`.

use num_complex::Complex64;
use rustfft::FftPlanner;

/// One-sided spectrum (`nfft/2 + 1` bins) of `x` zero-padded to `nfft`.
pub fn rfft(x: &[f64], nfft: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = (0..nfft)
        .map(|i| Complex64::new(x.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    buf.truncate(nfft / 2 + 1);
    buf
}

/// Inverse of [`rfft`]: Hermitian-extends `spec` and returns `nfft` real samples.
/// Imaginary parts at DC and Nyquist are ignored.
pub fn irfft(spec: &[Complex64], nfft: usize) -> Vec<f64> {
    let half = nfft / 2;
    assert_eq!(spec.len(), half + 1, "irfft: expected nfft/2+1 bins");
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    buf[0] = Complex64::new(spec[0].re, 0.0);
    for j in 1..half {
        buf[j] = spec[j];
        buf[nfft - j] = spec[j].conj();
    }
    if nfft % 2 == 0 {
        buf[half] = Complex64::new(spec[half].re, 0.0);
    } else {
        buf[half] = spec[half];
        buf[nfft - half] = spec[half].conj();
    }
    FftPlanner::new().plan_fft_inverse(nfft).process(&mut buf);
    let s = 1.0 / nfft as f64;
    buf.into_iter().map(|c| c.re * s).collect()
}

/// Linear convolution via FFT, `a.len() + b.len() - 1` samples.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let n = a.len() + b.len() - 1;
    let nfft = n.next_power_of_two();
    let sa = rfft(a, nfft);
    let sb = rfft(b, nfft);
    let prod: Vec<Complex64> = sa.iter().zip(&sb).map(|(x, y)| x * y).collect();
    let mut y = irfft(&prod, nfft);
    y.truncate(n);
    y
}
