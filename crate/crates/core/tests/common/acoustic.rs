//! Image-source and FOA oracles shared by the SRIR tests.

use std::collections::HashSet;

use num_complex::Complex64;
use seldkit::acoustics::Direction;
use seldkit::dsp::rfft;
use seldkit::srir::*;

/// Mirror images found by repeatedly reflecting across the six walls.
pub fn lattice_counts(dims: [f64; 3], src: [f64; 3], max_order: usize) -> Vec<usize> {
    let key = |p: &[f64; 3]| p.map(|v| (v * 1e6).round() as i64);
    let mut seen: HashSet<[i64; 3]> = HashSet::new();
    seen.insert(key(&src));
    let mut frontier = vec![src];
    let mut counts = vec![1];
    for _ in 0..max_order {
        let mut next = Vec::new();
        for p in &frontier {
            for a in 0..3 {
                for wall in [0.0, dims[a]] {
                    let mut q = *p;
                    q[a] = 2.0 * wall - p[a];
                    if seen.insert(key(&q)) {
                        next.push(q);
                    }
                }
            }
        }
        counts.push(next.len());
        frontier = next;
    }
    counts
}

pub fn direct_only(src: [f64; 3], center: [f64; 3]) -> Vec<ImageSource> {
    let room = RoomSpec::uniform([100.0, 100.0, 100.0], 0.5, 0).unwrap();
    enumerate_image_sources(&room, src, center).unwrap()
}

pub fn far_field_foa(array: &MicArraySpec, dir: Direction, nfft: usize) -> [Vec<Complex64>; 4] {
    let center = array.center;
    let u = dir.to_vector();
    let dist = 30.0;
    let src = [center[0] + dist * u[0], center[1] + dist * u[1], center[2] + dist * u[2]];
    let imgs = direct_only(src, center);
    let ir = render_array_rir(&imgs, array, SPEED_OF_SOUND, 24000, nfft).unwrap();
    let foa = encode_foa(&ir, array, SPEED_OF_SOUND, 24000).unwrap();
    std::array::from_fn(|c| rfft(&foa[c], nfft))
}

pub fn decoded_direction(foa: &[Vec<Complex64>; 4], nfft: usize, lo: f64, hi: f64) -> Direction {
    let fs = 24000.0;
    let mut v = [0.0; 3];
    for j in 0..foa[0].len() {
        let f = j as f64 * fs / nfft as f64;
        if f < lo || f > hi {
            continue;
        }
        let w = foa[0][j].conj();
        v[0] += (w * foa[3][j]).re;
        v[1] += (w * foa[1][j]).re;
        v[2] += (w * foa[2][j]).re;
    }
    Direction::from_vector(v).unwrap()
}
