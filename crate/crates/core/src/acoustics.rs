//! Special functions and rigid-sphere acoustics.
//!
//! Everything here is evaluated in `f64`. Angles follow the physics convention
//! internally: `theta` is the colatitude measured from +z and `phi` the azimuth
//! measured from +x towards +y. Elevation only appears at the API boundary
//! through [`Direction::from_azimuth_elevation`] and [`Direction::elevation`].

use std::f64::consts::{E, PI};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Smallest `kR` for which the rigid-sphere mode strength is evaluated.
/// Frequency bins below it reuse the response at this value.
pub const KR_MIN: f64 = 1e-4;

const X_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wavenumber {
    k: f64,
    f: f64,
    c: f64,
}

impl Wavenumber {
    pub fn from_frequency(f: f64, c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidArgument(format!("speed of sound must be > 0, got {c}")));
        }
        if !(f >= 0.0) || !f.is_finite() {
            return Err(Error::InvalidArgument(format!("frequency must be >= 0, got {f}")));
        }
        Ok(Self { k: 2.0 * PI * f / c, f, c })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn frequency(&self) -> f64 {
        self.f
    }

    pub fn speed_of_sound(&self) -> f64 {
        self.c
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereSpec {
    radius: f64,
}

impl SphereSpec {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidArgument(format!("sphere radius must be > 0, got {radius}")));
        }
        Ok(Self { radius })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

/// A direction on the unit sphere: colatitude `theta` in `[0, pi]`, azimuth
/// `phi` in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    theta: f64,
    phi: f64,
}

impl Direction {
    /// Builds a direction from colatitude and azimuth (radians). The azimuth is
    /// wrapped into `(-pi, pi]`.
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !theta.is_finite() || !phi.is_finite() {
            return Err(Error::Domain("direction angles must be finite".into()));
        }
        if theta < -1e-12 || theta > PI + 1e-12 {
            return Err(Error::Domain(format!("colatitude {theta} outside [0, pi]")));
        }
        Ok(Self { theta: theta.clamp(0.0, PI), phi: wrap_angle(phi) })
    }

    pub fn from_azimuth_elevation(azimuth: f64, elevation: f64) -> Result<Self> {
        Self::new(PI / 2.0 - elevation, azimuth)
    }

    pub fn from_vector(v: [f64; 3]) -> Result<Self> {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Domain("cannot take the direction of a zero vector".into()));
        }
        let theta = (v[2] / norm).clamp(-1.0, 1.0).acos();
        let phi = v[1].atan2(v[0]);
        Self::new(theta, phi)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn azimuth(&self) -> f64 {
        self.phi
    }

    pub fn elevation(&self) -> f64 {
        PI / 2.0 - self.theta
    }

    pub fn to_vector(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [st * cp, st * sp, ct]
    }

    /// Great-circle angle between two directions, radians.
    pub fn angle_to(&self, other: &Direction) -> f64 {
        let a = self.to_vector();
        let b = other.to_vector();
        let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let cx = a[1] * b[2] - a[2] * b[1];
        let cy = a[2] * b[0] - a[0] * b[2];
        let cz = a[0] * b[1] - a[1] * b[0];
        (cx * cx + cy * cy + cz * cz).sqrt().atan2(dot)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

fn check_unit_interval(x: f64) -> Result<f64> {
    if !x.is_finite() || x.abs() > 1.0 + X_TOL {
        return Err(Error::Domain(format!("argument {x} outside [-1, 1]")));
    }
    Ok(x.clamp(-1.0, 1.0))
}

/// Legendre polynomial `P_n(x)` by Bonnet's recurrence.
pub fn legendre(n: usize, x: f64) -> Result<f64> {
    let x = check_unit_interval(x)?;
    Ok(*legendre_table(n, x).last().expect("table has n+1 entries"))
}

/// `[P_0(x), ..., P_n(x)]`. No domain check.
pub fn legendre_table(n: usize, x: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(n + 1);
    p.push(1.0);
    if n >= 1 {
        p.push(x);
    }
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * p[k] - kf * p[k - 1]) / (kf + 1.0);
        p.push(next);
    }
    p
}

/// Associated Legendre function `P_n^m(x)` with the Condon-Shortley phase.
pub fn assoc_legendre(n: usize, m: usize, x: f64) -> Result<f64> {
    if m > n {
        return Err(Error::UnsupportedOrder { n: n as i64, m: m as i64 });
    }
    let x = check_unit_interval(x)?;
    // P_m^m = (-1)^m (2m-1)!! (1-x^2)^{m/2}
    let s = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
    let mut pmm = 1.0;
    for i in 0..m {
        pmm *= -((2 * i + 1) as f64) * s;
    }
    if n == m {
        return Ok(pmm);
    }
    let mut pm1 = x * (2 * m + 1) as f64 * pmm;
    if n == m + 1 {
        return Ok(pm1);
    }
    let mut pm0 = pmm;
    for l in (m + 2)..=n {
        let lf = l as f64;
        let mf = m as f64;
        let next = ((2.0 * lf - 1.0) * x * pm1 - (lf + mf - 1.0) * pm0) / (lf - mf);
        pm0 = pm1;
        pm1 = next;
    }
    Ok(pm1)
}

/// Spherical Bessel functions `j_0..=j_n` and `y_0..=y_n` at `x > 0`.
///
/// `y` uses the (stable) upward recurrence. `j` uses Miller's downward
/// recurrence normalised with `sum (2k+1) j_k^2 = 1`.
pub fn sph_bessel_jy(n: usize, x: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Singularity(format!("spherical Bessel functions need x > 0, got {x}")));
    }
    let (s, c) = x.sin_cos();
    let mut y = Vec::with_capacity(n + 1);
    y.push(-c / x);
    if n >= 1 {
        y.push(-c / (x * x) - s / x);
    }
    for k in 1..n {
        let next = (2 * k + 1) as f64 / x * y[k] - y[k - 1];
        y.push(next);
    }

    let start = n + x.ceil() as usize + 32 + (8.0 * x.sqrt()) as usize;
    let keep = n.max(1);
    let mut j = vec![0.0; keep + 1];
    let mut upper = 0.0f64;
    let mut cur = 1.0f64;
    let mut norm = 0.0f64;
    for k in (0..=start).rev() {
        // cur holds the unnormalised j_k, upper holds j_{k+1}.
        if k <= keep {
            j[k] = cur;
        }
        norm += (2 * k + 1) as f64 * cur * cur;
        if k == 0 {
            break;
        }
        let lower = (2 * k + 1) as f64 / x * cur - upper;
        upper = cur;
        cur = lower;
        if cur.abs() > 1e140 {
            let scale = 1e-140;
            cur *= scale;
            upper *= scale;
            norm *= scale * scale;
            for v in j.iter_mut() {
                *v *= scale;
            }
        }
    }
    // Fix the overall sign against whichever of j_0, j_1 is better conditioned.
    let j0 = s / x;
    let j1 = s / (x * x) - c / x;
    let sign = if j0.abs() >= j1.abs() {
        if (j[0] >= 0.0) == (j0 >= 0.0) { 1.0 } else { -1.0 }
    } else if (j[1] >= 0.0) == (j1 >= 0.0) {
        1.0
    } else {
        -1.0
    };
    let inv = sign / norm.sqrt();
    j.truncate(n + 1);
    for v in j.iter_mut() {
        *v *= inv;
    }
    Ok((j, y))
}

/// Spherical Hankel functions of the first kind `h_0..=h_n` at `x > 0`.
pub fn sph_hankel1_table(n: usize, x: f64) -> Result<Vec<Complex64>> {
    let (j, y) = sph_bessel_jy(n, x)?;
    Ok(j.iter().zip(&y).map(|(&a, &b)| Complex64::new(a, b)).collect())
}

pub fn sph_hankel1(n: usize, x: f64) -> Result<Complex64> {
    Ok(sph_hankel1_table(n, x)?[n])
}

/// Derivatives `h_0'..=h_n'` of the spherical Hankel functions of the first kind.
pub fn sph_hankel1_deriv_table(n: usize, x: f64) -> Result<Vec<Complex64>> {
    let h = sph_hankel1_table(n + 1, x)?;
    let mut out = Vec::with_capacity(n + 1);
    out.push(-h[1]);
    for k in 1..=n {
        out.push(h[k - 1] - h[k] * ((k + 1) as f64 / x));
    }
    Ok(out)
}

pub fn sph_hankel1_deriv(n: usize, x: f64) -> Result<Complex64> {
    Ok(sph_hankel1_deriv_table(n, x)?[n])
}

/// Rigid-baffle mode strength `b_n(kR) = i / ((kR)^2 h_n'(kR))`.
pub fn mode_strength(n: usize, kr: f64) -> Result<Complex64> {
    Ok(mode_strength_table(n, kr)?[n])
}

/// `[b_0(kR), ..., b_n(kR)]`.
pub fn mode_strength_table(n: usize, kr: f64) -> Result<Vec<Complex64>> {
    if !(kr > KR_MIN) {
        return Err(Error::Singularity(format!(
            "mode strength requested at kR = {kr} <= {KR_MIN}; use the DC-regularised response"
        )));
    }
    let dh = sph_hankel1_deriv_table(n, kr)?;
    let i = Complex64::new(0.0, 1.0);
    Ok(dh.into_iter().map(|d| i / (d * (kr * kr))).collect())
}

/// Series truncation order for the rigid-sphere response at a given `kR`.
pub fn truncation_order(kr: f64) -> usize {
    (E * kr.max(0.0) / 2.0).ceil() as usize + 14
}

/// Pressure on a rigid sphere for a unit plane wave arriving at angle `psi`
/// from the microphone axis, truncated at `n_max`.
///
/// Uses the `exp(-i w t)` convention that goes with the outgoing `h_n^(1)`
/// in the mode strength. Conjugate it to get a DFT-convention spectrum.
pub fn rigid_sphere_response(
    k: Wavenumber,
    sphere: SphereSpec,
    psi: f64,
    n_max: usize,
) -> Result<Complex64> {
    if !(0.0..=PI + 1e-12).contains(&psi) {
        return Err(Error::Domain(format!("psi = {psi} outside [0, pi]")));
    }
    let kr = k.k() * sphere.radius();
    let b = mode_strength_table(n_max, kr)?;
    let p = legendre_table(n_max, psi.cos().clamp(-1.0, 1.0));
    Ok(rigid_sphere_sum(&b, &p))
}

/// `sum_n (-i)^n (2n+1) b_n P_n`. Lengths of `b` and `p` set the truncation.
pub(crate) fn rigid_sphere_sum(b: &[Complex64], p: &[f64]) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (n, (bn, pn)) in b.iter().zip(p).enumerate() {
        acc += i_pow(n).conj() * *bn * ((2 * n + 1) as f64 * pn);
    }
    acc
}

/// `i^n`.
pub(crate) fn i_pow(n: usize) -> Complex64 {
    match n % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

/// `(n-m)!/(n+m)!` for `m >= 0` without forming the factorials.
fn factorial_ratio(n: usize, m: usize) -> f64 {
    let mut r = 1.0;
    for k in (n - m + 1)..=(n + m) {
        r /= k as f64;
    }
    r
}

fn check_order(n: usize, m: i32) -> Result<usize> {
    let am = m.unsigned_abs() as usize;
    if am > n {
        return Err(Error::UnsupportedOrder { n: n as i64, m: m as i64 });
    }
    Ok(am)
}

/// Orthonormal complex spherical harmonic `Y_n^m` (Condon-Shortley phase).
pub fn sph_harmonic(n: usize, m: i32, dir: Direction) -> Result<Complex64> {
    let am = check_order(n, m)?;
    let norm = ((2 * n + 1) as f64 / (4.0 * PI) * factorial_ratio(n, am)).sqrt();
    let p = assoc_legendre(n, am, dir.theta.cos())?;
    let pos = Complex64::from_polar(norm * p, am as f64 * dir.phi);
    if m >= 0 {
        Ok(pos)
    } else if am % 2 == 0 {
        Ok(pos.conj())
    } else {
        Ok(-pos.conj())
    }
}

/// Real spherical harmonic with SN3D normalisation and no Condon-Shortley
/// phase (the ambisonics convention). `m > 0` pairs with `cos(m phi)`,
/// `m < 0` with `sin(|m| phi)`.
pub fn real_sph_harmonic(n: usize, m: i32, dir: Direction) -> Result<f64> {
    let am = check_order(n, m)?;
    let delta = if am == 0 { 1.0 } else { 2.0 };
    let norm = (delta * factorial_ratio(n, am)).sqrt();
    let cs = if am % 2 == 0 { 1.0 } else { -1.0 };
    let p = cs * assoc_legendre(n, am, dir.theta.cos())?;
    let az = if m >= 0 { (am as f64 * dir.phi).cos() } else { (am as f64 * dir.phi).sin() };
    Ok(norm * p * az)
}

/// ACN channel index for order `n`, degree `m`.
pub fn acn_index(n: usize, m: i32) -> usize {
    (n * n) as usize + (n as i64 + m as i64) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binom(n: usize, k: usize) -> f64 {
        let mut r = 1.0;
        for i in 0..k {
            r = r * (n - i) as f64 / (i + 1) as f64;
        }
        r
    }

    /// Rodrigues oracle: expand P_n as a polynomial, differentiate m times.
    fn rodrigues_assoc(n: usize, m: usize, x: f64) -> f64 {
        let mut coeff = vec![0.0; n + 1];
        for k in 0..=n / 2 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            coeff[n - 2 * k] += sign * binom(n, k) * binom(2 * n - 2 * k, n) / 2f64.powi(n as i32);
        }
        for _ in 0..m {
            coeff = (1..coeff.len()).map(|p| coeff[p] * p as f64).collect();
        }
        let poly: f64 = coeff.iter().enumerate().map(|(p, c)| c * x.powi(p as i32)).sum();
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        sign * (1.0 - x * x).powf(m as f64 / 2.0) * poly
    }

    /// Closed-form finite series for h_n^(1).
    fn hankel_closed(n: usize, x: f64) -> Complex64 {
        let i = Complex64::new(0.0, 1.0);
        let mut sum = Complex64::new(0.0, 0.0);
        for k in 0..=n {
            let mut ratio = 1.0; // (n+k)!/(k!(n-k)!)
            for t in (n - k + 1)..=(n + k) {
                ratio *= t as f64;
            }
            for t in 1..=k {
                ratio /= t as f64;
            }
            sum += i.powu(k as u32) * ratio / (2.0 * x).powi(k as i32);
        }
        (-i).powu(n as u32 + 1) * (i * x).exp() / x * sum
    }

    /// h_n' = (n/x) h_n - h_{n+1}: a different identity from the implementation.
    fn hankel_deriv_oracle(n: usize, x: f64) -> Complex64 {
        hankel_closed(n, x) * (n as f64 / x) - hankel_closed(n + 1, x)
    }

    #[test]
    fn legendre_examples() {
        assert_eq!(legendre(0, 0.3).unwrap(), 1.0);
        assert_eq!(legendre(1, -0.7).unwrap(), -0.7);
        assert!((legendre(2, 0.5).unwrap() + 0.125).abs() < 1e-15);
        assert!(legendre(3, 1.5).is_err());
        assert!(legendre(3, 1.0 + 1e-13).is_ok());
    }

    #[test]
    fn legendre_endpoints_and_recurrence() {
        for n in 0..=40 {
            assert!((legendre(n, 1.0).unwrap() - 1.0).abs() < 1e-12);
            let expect = if n % 2 == 0 { 1.0 } else { -1.0 };
            assert!((legendre(n, -1.0).unwrap() - expect).abs() < 1e-12);
        }
        for i in 0..=200 {
            let x = -1.0 + 2.0 * i as f64 / 200.0;
            let p = legendre_table(21, x);
            for n in 1..=20 {
                let nf = n as f64;
                let r = (nf + 1.0) * p[n + 1] - (2.0 * nf + 1.0) * x * p[n] + nf * p[n - 1];
                assert!(r.abs() < 1e-10, "n={n} x={x} residual {r}");
            }
        }
    }

    #[test]
    fn assoc_legendre_examples_and_oracle() {
        assert!((assoc_legendre(1, 0, 0.2).unwrap() - 0.2).abs() < 1e-15);
        assert!((assoc_legendre(1, 1, 0.0).unwrap() + 1.0).abs() < 1e-15);
        // P_2^1(0.5) by term-by-term Rodrigues: -3 x sqrt(1-x^2) = -1.299038105676658
        let oracle = rodrigues_assoc(2, 1, 0.5);
        assert!((oracle + 1.299_038_105_676_658).abs() < 1e-12);
        assert!((assoc_legendre(2, 1, 0.5).unwrap() - oracle).abs() < 1e-12);
        for n in 0..=8 {
            for m in 0..=n {
                for &x in &[-0.93, -0.4, 0.0, 0.17, 0.66, 0.99] {
                    let a = assoc_legendre(n, m, x).unwrap();
                    let b = rodrigues_assoc(n, m, x);
                    assert!((a - b).abs() < 1e-9 * b.abs().max(1.0), "n={n} m={m} x={x}");
                }
            }
            assert_eq!(assoc_legendre(n, 0, 0.3).unwrap(), legendre(n, 0.3).unwrap());
        }
        assert!(matches!(assoc_legendre(1, 2, 0.0), Err(Error::UnsupportedOrder { .. })));
        assert!(matches!(assoc_legendre(2, 1, -1.01), Err(Error::Domain(_))));
    }

    #[test]
    fn hankel_derivative_examples() {
        // n = 0 closed form: d/dx[-i e^{ix}/x] = e^{ix} (1/x + i/x^2)
        let x: f64 = 1.0;
        let closed = Complex64::from_polar(1.0, x) * Complex64::new(1.0 / x, 1.0 / (x * x));
        let got = sph_hankel1_deriv(0, 1.0).unwrap();
        assert!((got - closed).norm() < 1e-13, "{got} vs {closed}");

        for &(n, x) in &[(1usize, 2.0f64), (3, 0.5), (2, 7.3), (5, 11.0)] {
            let got = sph_hankel1_deriv(n, x).unwrap();
            let want = hankel_deriv_oracle(n, x);
            assert!((got - want).norm() < 1e-11 * want.norm(), "n={n} x={x}: {got} vs {want}");
        }
        assert!(matches!(sph_hankel1_deriv(1, 0.0), Err(Error::Singularity(_))));
        assert!(sph_hankel1_deriv(1, -1.0).is_err());
    }

    #[test]
    fn wronskian_identity() {
        let mut x = 0.1;
        while x <= 50.0 {
            let (j, y) = sph_bessel_jy(13, x).unwrap();
            for n in 0..12 {
                let jp = if n == 0 { -j[1] } else { j[n - 1] - (n + 1) as f64 / x * j[n] };
                let yp = if n == 0 { -y[1] } else { y[n - 1] - (n + 1) as f64 / x * y[n] };
                let w = j[n] * yp - jp * y[n];
                let want = 1.0 / (x * x);
                assert!(((w - want) / want).abs() < 1e-9, "n={n} x={x} w={w}");
            }
            x *= 1.37;
        }
    }

    #[test]
    fn mode_strength_examples() {
        let want = Complex64::new(0.0, 1.0) / hankel_deriv_oracle(0, 1.0);
        assert!((mode_strength(0, 1.0).unwrap() - want).norm() < 1e-13);
        assert!(mode_strength(0, 10.0).unwrap().norm() < mode_strength(0, 1.0).unwrap().norm());
        assert!(matches!(mode_strength(1, 1e-6), Err(Error::Singularity(_))));
        // low-frequency limits: b_0 -> 1, b_1 -> kR/2 in magnitude
        let b = mode_strength_table(1, 1e-3).unwrap();
        assert!((b[0].norm() - 1.0).abs() < 1e-5);
        assert!((b[1].norm() / 5e-4 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn rigid_sphere_examples() {
        let sphere = SphereSpec::new(0.042).unwrap();
        let k = Wavenumber::from_frequency(1.0 / 0.042 * 343.0 / (2.0 * PI), 343.0).unwrap();
        assert!((k.k() * 0.042 - 1.0).abs() < 1e-12);
        let h0 = rigid_sphere_response(k, sphere, 0.3, 0).unwrap();
        assert!((h0 - mode_strength(0, 1.0).unwrap()).norm() < 1e-15);

        let front = rigid_sphere_response(k, sphere, 0.0, 30).unwrap();
        let back = rigid_sphere_response(k, sphere, PI, 30).unwrap();
        assert!(front.norm() > back.norm());

        let k2 = Wavenumber::from_frequency(2.0 / 0.042 * 343.0 / (2.0 * PI), 343.0).unwrap();
        // The n = 11 term dominates the 10 -> 30 tail: (2n+1) x^n / ((n+1)(2n-1)!!).
        let df: f64 = (1..=21).step_by(2).map(|v| v as f64).product();
        let lead = 23.0 * 2f64.powi(11) / (12.0 * df);
        let n = truncation_order(2.0);
        for &psi in &[0.0, 0.7, 1.9, PI] {
            let a = rigid_sphere_response(k2, sphere, psi, 10).unwrap();
            let b = rigid_sphere_response(k2, sphere, psi, 30).unwrap();
            let tail = (a - b).norm() / legendre(11, psi.cos()).unwrap().abs().max(1e-300);
            assert!((tail / lead - 1.0).abs() < 0.2, "psi={psi} tail={tail} lead={lead}");
            let c = rigid_sphere_response(k2, sphere, psi, n).unwrap();
            assert!((c.norm() - b.norm()).abs() < 1e-8);
        }
    }

    #[test]
    fn truncation_rule_converges() {
        let sphere = SphereSpec::new(0.042).unwrap();
        for i in 1..=40 {
            let kr = 0.5 * i as f64;
            let k = Wavenumber::from_frequency(kr / 0.042 * 343.0 / (2.0 * PI), 343.0).unwrap();
            let n = truncation_order(kr);
            for &psi in &[0.0, 1.0, 2.5] {
                let a = rigid_sphere_response(k, sphere, psi, n).unwrap();
                let b = rigid_sphere_response(k, sphere, psi, 2 * n).unwrap();
                assert!((a - b).norm() < 1e-8 * b.norm(), "kR={kr} psi={psi}");
            }
        }
    }

    #[test]
    fn sph_harmonic_examples() {
        let d = Direction::new(0.9, -2.1).unwrap();
        let y00 = sph_harmonic(0, 0, d).unwrap();
        assert!((y00.re - (1.0 / (4.0 * PI)).sqrt()).abs() < 1e-15 && y00.im == 0.0);
        assert!((y00.re - 0.282095).abs() < 1e-6);
        let pole = Direction::new(0.0, 0.0).unwrap();
        let y10 = sph_harmonic(1, 0, pole).unwrap();
        assert!((y10.re - (3.0 / (4.0 * PI)).sqrt()).abs() < 1e-15);
        assert!(sph_harmonic(1, 2, d).is_err());
        assert!(sph_harmonic(1, -2, d).is_err());
    }

    #[test]
    fn sph_harmonic_quadrature_orthonormality() {
        let (nt, np) = (50, 100);
        let dt = PI / nt as f64;
        let dp = 2.0 * PI / np as f64;
        let mut acc = 0.0;
        let mut cross = Complex64::new(0.0, 0.0);
        for i in 0..nt {
            let theta = (i as f64 + 0.5) * dt;
            for j in 0..np {
                let phi = -PI + (j as f64 + 0.5) * dp;
                let d = Direction::new(theta, phi).unwrap();
                let y = sph_harmonic(1, 1, d).unwrap();
                let w = theta.sin() * dt * dp;
                acc += y.norm_sqr() * w;
                cross += y * sph_harmonic(1, -1, d).unwrap().conj() * w;
            }
        }
        assert!((acc - 1.0).abs() < 1e-3, "{acc}");
        assert!(cross.norm() < 1e-3);
    }

    #[test]
    fn addition_theorem() {
        for &(t, p) in &[(0.3, 0.2), (1.2, -2.9), (2.8, 1.4), (PI, 0.0)] {
            let d = Direction::new(t, p).unwrap();
            for n in 0..=4usize {
                let s: f64 = (-(n as i32)..=n as i32)
                    .map(|m| sph_harmonic(n, m, d).unwrap().norm_sqr())
                    .sum();
                let want = (2 * n + 1) as f64 / (4.0 * PI);
                assert!((s - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn real_sph_harmonic_examples() {
        let d = Direction::new(1.1, 0.4).unwrap();
        assert_eq!(real_sph_harmonic(0, 0, d).unwrap(), 1.0);
        let front = Direction::new(PI / 2.0, 0.0).unwrap();
        assert!((real_sph_harmonic(1, 1, front).unwrap() - 1.0).abs() < 1e-15);
        assert!(real_sph_harmonic(1, -1, front).unwrap().abs() < 1e-15);
        assert!(real_sph_harmonic(1, 0, front).unwrap().abs() < 1e-15);
    }

    #[test]
    fn real_from_complex_transform() {
        // R_n^m (N3D, orthonormal) from complex Y_n^m with CS phase, then SN3D scaling.
        for &(t, p) in &[(0.2, 0.1), (1.3, -2.2), (2.4, 3.0), (PI / 2.0, PI)] {
            let d = Direction::new(t, p).unwrap();
            for n in 0..=3usize {
                let sn3d = (4.0 * PI / (2 * n + 1) as f64).sqrt();
                for m in -(n as i32)..=n as i32 {
                    let am = m.abs();
                    let sign = if am % 2 == 0 { 1.0 } else { -1.0 };
                    let r = if m == 0 {
                        sph_harmonic(n, 0, d).unwrap().re
                    } else if m > 0 {
                        ((sph_harmonic(n, -am, d).unwrap() + sph_harmonic(n, am, d).unwrap() * sign)
                            / 2f64.sqrt())
                        .re
                    } else {
                        ((sph_harmonic(n, -am, d).unwrap() - sph_harmonic(n, am, d).unwrap() * sign)
                            * Complex64::new(0.0, 1.0)
                            / 2f64.sqrt())
                        .re
                    };
                    let got = real_sph_harmonic(n, m, d).unwrap();
                    assert!((r * sn3d - got).abs() < 1e-12, "n={n} m={m}: {} vs {got}", r * sn3d);
                }
            }
        }
    }

    #[test]
    fn direction_roundtrip() {
        let d = Direction::from_azimuth_elevation(-2.0, 0.5).unwrap();
        let v = d.to_vector();
        let e = Direction::from_vector(v).unwrap();
        assert!((e.azimuth() + 2.0).abs() < 1e-12 && (e.elevation() - 0.5).abs() < 1e-12);
        assert_eq!(Direction::new(0.3, 3.0 * PI).unwrap().phi(), wrap_angle(PI));
        assert!(Direction::from_vector([0.0; 3]).is_err());
        assert_eq!(acn_index(1, 1), 3);
        assert_eq!(acn_index(1, -1), 1);
    }
}
