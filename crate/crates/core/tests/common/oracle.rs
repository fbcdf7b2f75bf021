//! Direct image-source summation used as a reference.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use roomgeo::acoustics::{RoomSpec, SourceReceiverPair, Vec3};
use roomgeo::simulator::{FractionalDelay, ImageSourceConfig};

/// Straight from the definition: enumerate every (n, q) lattice index per
/// axis, place the mirrored source explicitly, and render each tap with
/// closed-form sinc and Hann evaluations.
pub fn brute_force(room: &RoomSpec, pair: &SourceReceiverPair, cfg: &ImageSourceConfig, bound: i64) -> Vec<f64> {
    let c = cfg.constants;
    let mut out = vec![0.0; c.rir_len];
    for nx in -bound..=bound {
        for qx in 0..2 {
            for ny in -bound..=bound {
                for qy in 0..2 {
                    for nz in -bound..=bound {
                        for qz in 0..2 {
                            let n = [nx, ny, nz];
                            let q = [qx, qy, qz];
                            let mut img = [0.0; 3];
                            let mut gain = 1.0;
                            for a in 0..3 {
                                img[a] = (1 - 2 * q[a]) as f64 * pair.source[a] + 2.0 * n[a] as f64 * room.dims[a];
                                gain *= room.beta[2 * a].powi((n[a] - q[a]).abs() as i32)
                                    * room.beta[2 * a + 1].powi(n[a].abs() as i32);
                            }
                            let d = ((img[0] - pair.receiver[0]).powi(2)
                                + (img[1] - pair.receiver[1]).powi(2)
                                + (img[2] - pair.receiver[2]).powi(2))
                            .sqrt();
                            let tau = d / c.c * c.fs as f64;
                            let amp = gain / (4.0 * PI * d);
                            match cfg.fractional_delay {
                                FractionalDelay::NearestSample => {
                                    let t = tau.round() as usize;
                                    if t < out.len() {
                                        out[t] += amp;
                                    }
                                }
                                FractionalDelay::WindowedSinc { taps } => {
                                    let half = taps as f64 / 2.0;
                                    for (t, slot) in out.iter_mut().enumerate() {
                                        let x = t as f64 - tau;
                                        if x.abs() > half {
                                            continue;
                                        }
                                        let sinc = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
                                        let w = 0.5 * (1.0 + (2.0 * PI * x / taps as f64).cos());
                                        *slot += amp * sinc * w;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn random_config(rng: &mut ChaCha8Rng, dim_range: (f64, f64)) -> (RoomSpec, SourceReceiverPair) {
    let dims: Vec3 = std::array::from_fn(|_| rng.random_range(dim_range.0..dim_range.1));
    let beta: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.3..0.95));
    let room = RoomSpec::new(dims, beta, None).unwrap();
    let point = |rng: &mut ChaCha8Rng| -> Vec3 { std::array::from_fn(|a| rng.random_range(0.1 * dims[a]..0.9 * dims[a])) };
    let pair = SourceReceiverPair {
        source: point(rng),
        receiver: point(rng),
    };
    (room, pair)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
