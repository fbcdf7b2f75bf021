//! Image-source synthesis of shoebox impulse responses, Sabine-based
//! reflection coefficients and Schroeder reverberation-time measurement.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::acoustics::{check_dims, surface_area, volume, PhysicalConstants, Rir, RoomSpec, SourceReceiverPair, Vec3};
use crate::error::{Error, Result};

/// How an image's fractional arrival time is rendered onto the sample grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FractionalDelay {
    NearestSample,
    /// Hann-windowed sinc interpolator with an odd number of taps.
    WindowedSinc { taps: usize },
}

impl Default for FractionalDelay {
    fn default() -> Self {
        FractionalDelay::WindowedSinc { taps: 81 }
    }
}

impl FractionalDelay {
    /// Half the support of the interpolation kernel, in samples.
    pub fn half_width(&self) -> f64 {
        match *self {
            FractionalDelay::NearestSample => 0.5,
            FractionalDelay::WindowedSinc { taps } => taps as f64 / 2.0,
        }
    }

    /// Adds `amplitude` arriving at fractional sample `delay` into `out`.
    pub fn render(&self, delay: f64, amplitude: f64, out: &mut [f64]) {
        match *self {
            FractionalDelay::NearestSample => {
                let t = delay.round();
                if t >= 0.0 && (t as usize) < out.len() {
                    out[t as usize] += amplitude;
                }
            }
            FractionalDelay::WindowedSinc { taps } => render_windowed_sinc(taps, delay, amplitude, out),
        }
    }
}

fn render_windowed_sinc(taps: usize, delay: f64, amplitude: f64, out: &mut [f64]) {
    let half = taps as f64 / 2.0;
    let first = (delay - half).ceil().max(0.0);
    let last = (delay + half).floor().min(out.len() as f64 - 1.0);
    if first > last {
        return;
    }
    let t0 = first as usize;
    let x0 = first - delay;
    // sin(pi (x + k)) = (-1)^k sin(pi x), and the window cosine advances by a
    // fixed rotation per tap.
    let mut sin_px = (PI * x0).sin();
    let step = 2.0 * PI / taps as f64;
    let (sin_step, cos_step) = step.sin_cos();
    let (mut wsin, mut wcos) = (step * x0).sin_cos();
    for (k, slot) in out[t0..=last as usize].iter_mut().enumerate() {
        let x = x0 + k as f64;
        let sinc = if x == 0.0 { 1.0 } else { sin_px / (PI * x) };
        *slot += amplitude * 0.5 * (1.0 + wcos) * sinc;
        sin_px = -sin_px;
        let c = wcos * cos_step - wsin * sin_step;
        wsin = wsin * cos_step + wcos * sin_step;
        wcos = c;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ImageSourceConfig {
    pub constants: PhysicalConstants,
    pub fractional_delay: FractionalDelay,
    /// Per-axis bound on `|n|`; derived from the room when `None`.
    pub max_order: Option<[usize; 3]>,
}

impl ImageSourceConfig {
    pub fn nearest_sample() -> Self {
        Self {
            fractional_delay: FractionalDelay::NearestSample,
            ..Self::default()
        }
    }

    /// Longest path (m) whose kernel can still touch the last sample.
    pub fn max_path(&self) -> f64 {
        let c = &self.constants;
        (c.rir_len as f64 - 1.0 + self.fractional_delay.half_width()) * c.c / c.fs as f64
    }

    /// Lattice bound per axis covering every path up to [`Self::max_path`].
    pub fn order_bounds(&self, dims: &Vec3) -> [usize; 3] {
        self.max_order.unwrap_or_else(|| {
            let r = self.max_path();
            dims.map(|l| (r / (2.0 * l)).ceil() as usize + 1)
        })
    }
}

/// Average absorption and the per-wall reflection coefficient that give
/// `rt60` seconds under Sabine's formula. All six walls share one value.
pub fn rt60_to_beta(dims: &Vec3, rt60: f64, constants: &PhysicalConstants) -> Result<[f64; 6]> {
    check_dims(dims)?;
    if !(rt60 > 0.0) {
        return Err(Error::InvalidGeometry(format!("rt60 must be positive, got {rt60}")));
    }
    let absorption = sabine_absorption(dims, rt60, constants);
    if absorption >= 1.0 {
        return Err(Error::InfeasibleRt60 { rt60, absorption });
    }
    Ok([(1.0 - absorption).sqrt(); 6])
}

pub fn sabine_absorption(dims: &Vec3, rt60: f64, constants: &PhysicalConstants) -> f64 {
    constants.sabine_coeff * volume(dims) / (surface_area(dims) * rt60)
}

/// Sabine prediction for a given average absorption.
pub fn sabine_rt60(dims: &Vec3, absorption: f64, constants: &PhysicalConstants) -> f64 {
    constants.sabine_coeff * volume(dims) / (surface_area(dims) * absorption)
}

/// One mirrored source as seen from the receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSource {
    pub distance: f64,
    /// Product of the reflection coefficients of every wall hit.
    pub gain: f64,
    /// Total number of wall reflections.
    pub order: u32,
}

impl ImageSource {
    pub fn amplitude(&self) -> f64 {
        self.gain / (4.0 * PI * self.distance)
    }
}

#[derive(Clone, Copy)]
struct AxisImage {
    sq: f64,
    gain: f64,
    order: u32,
}

fn axis_images(len: f64, s: f64, r: f64, beta_lo: f64, beta_hi: f64, bound: usize) -> Vec<AxisImage> {
    let bound = bound as i64;
    let mut out = Vec::with_capacity(4 * bound as usize + 2);
    for n in -bound..=bound {
        let shift = 2.0 * n as f64 * len;
        for q in 0..2i64 {
            // Image at (1 - 2q) s + 2 n L, measured from the receiver.
            let d = if q == 0 { shift + (s - r) } else { shift - (s + r) };
            let lo = (n - q).unsigned_abs() as i32;
            let hi = n.unsigned_abs() as i32;
            out.push(AxisImage {
                sq: d * d,
                gain: beta_lo.powi(lo) * beta_hi.powi(hi),
                order: (lo + hi) as u32,
            });
        }
    }
    out.sort_by(|a, b| a.sq.total_cmp(&b.sq));
    out
}

fn sorted3(mut v: [f64; 3]) -> [f64; 3] {
    v.sort_by(f64::total_cmp);
    v
}

/// Every image source whose arrival can reach the response window, in a
/// canonical order (by distance, then gain) that does not depend on how the
/// room axes or the endpoints are labelled.
pub fn image_sources(room: &RoomSpec, pair: &SourceReceiverPair, cfg: &ImageSourceConfig) -> Result<Vec<ImageSource>> {
    pair.validate(room)?;
    let bounds = cfg.order_bounds(&room.dims);
    let r_max = cfg.max_path();
    let r_sq = r_max * r_max;
    let axes: Vec<Vec<AxisImage>> = (0..3)
        .map(|a| {
            axis_images(
                room.dims[a],
                pair.source[a],
                pair.receiver[a],
                room.beta[2 * a],
                room.beta[2 * a + 1],
                bounds[a],
            )
        })
        .collect();

    let mut images = Vec::new();
    for ix in &axes[0] {
        if ix.sq > r_sq {
            break;
        }
        for iy in &axes[1] {
            if ix.sq + iy.sq > r_sq {
                break;
            }
            for iz in &axes[2] {
                let [a, b, c] = sorted3([ix.sq, iy.sq, iz.sq]);
                let d2 = a + b + c;
                if d2 > r_sq {
                    if ix.sq + iy.sq + iz.sq > r_sq {
                        break;
                    }
                    continue;
                }
                let [ga, gb, gc] = sorted3([ix.gain, iy.gain, iz.gain]);
                images.push(ImageSource {
                    distance: d2.sqrt(),
                    gain: ga * gb * gc,
                    order: ix.order + iy.order + iz.order,
                });
            }
        }
    }
    images.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.gain.total_cmp(&b.gain))
    });
    Ok(images)
}

/// Image-source impulse response: each image contributes `gain / (4 pi d)`
/// at delay `d / c * fs`, truncated to the configured length.
pub fn simulate_rir(room: &RoomSpec, pair: &SourceReceiverPair, cfg: &ImageSourceConfig) -> Result<Rir> {
    let images = image_sources(room, pair, cfg)?;
    let c = &cfg.constants;
    let mut samples = vec![0.0; c.rir_len];
    for img in &images {
        cfg.fractional_delay
            .render(c.delay_samples(img.distance), img.amplitude(), &mut samples);
    }
    Ok(Rir {
        samples,
        fs: c.fs,
        room: *room,
        pair: *pair,
    })
}

/// Schroeder energy-decay curve in dB, normalised to 0 dB at the start.
pub fn energy_decay_db(samples: &[f64]) -> Vec<f64> {
    let mut edc = vec![0.0; samples.len()];
    let mut acc = 0.0;
    for (slot, s) in edc.iter_mut().zip(samples).rev() {
        acc += s * s;
        *slot = acc;
    }
    let total = acc;
    edc.iter().map(|e| 10.0 * (e / total).log10()).collect()
}

/// Corner frequency of the high-pass applied before decay analysis.
pub const RT60_HIGHPASS_HZ: f64 = 100.0;

/// T20 reverberation time of an impulse response, measured above
/// [`RT60_HIGHPASS_HZ`].
///
/// Image-source responses with positive reflection coefficients carry a
/// coherent near-DC component that grows with image density and stretches the
/// broadband decay, so the sub-audio band is removed first.
pub fn measure_rt60(samples: &[f64], fs: u32) -> Result<f64> {
    measure_rt60_with(samples, fs, Some(RT60_HIGHPASS_HZ))
}

/// T20 with an optional high-pass corner; `None` analyses the raw samples.
pub fn measure_rt60_with(samples: &[f64], fs: u32, highpass_hz: Option<f64>) -> Result<f64> {
    if samples.iter().all(|&s| s == 0.0) {
        return Err(Error::Empty("impulse response is silent"));
    }
    match highpass_hz {
        Some(fc) => t20(&Biquad::butterworth_highpass(fc, fs).filter(samples), fs),
        None => t20(samples, fs),
    }
}

/// Shortest -5..-25 dB span accepted as a reverberant tail. Anything faster
/// is the filter's own ringing around an isolated impulse.
pub const MIN_FIT_SECONDS: f64 = 0.01;

/// Least-squares line through the -5..-25 dB part of the Schroeder curve,
/// extrapolated to -60 dB.
fn t20(samples: &[f64], fs: u32) -> Result<f64> {
    let edc = energy_decay_db(samples);
    let reached_db = edc
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0, f64::min);
    let start = edc.iter().position(|&v| v <= -5.0);
    let end = edc.iter().position(|&v| v < -25.0);
    let (start, end) = match (start, end) {
        (Some(s), Some(e)) if (e.saturating_sub(s)) as f64 >= MIN_FIT_SECONDS * fs as f64 => (s, e),
        _ => return Err(Error::InsufficientDecay { reached_db }),
    };
    let dt = 1.0 / fs as f64;
    let n = (end - start) as f64;
    let (mut st, mut sy) = (0.0, 0.0);
    for (i, &y) in edc[start..end].iter().enumerate() {
        st += (start + i) as f64 * dt;
        sy += y;
    }
    let (mt, my) = (st / n, sy / n);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &y) in edc[start..end].iter().enumerate() {
        let t = (start + i) as f64 * dt - mt;
        sxy += t * (y - my);
        sxx += t * t;
    }
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(Error::InsufficientDecay { reached_db });
    }
    Ok(-60.0 / slope)
}

/// Direct-form I biquad.
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    /// Second-order Butterworth high-pass (bilinear transform).
    pub fn butterworth_highpass(fc: f64, fs: u32) -> Self {
        let w0 = 2.0 * PI * fc / fs as f64;
        let alpha = w0.sin() / std::f64::consts::SQRT_2;
        let cw = w0.cos();
        let a0 = 1.0 + alpha;
        Self {
            b: [(1.0 + cw) / 2.0 / a0, -(1.0 + cw) / a0, (1.0 + cw) / 2.0 / a0],
            a: [-2.0 * cw / a0, (1.0 - alpha) / a0],
        }
    }

    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        x.iter()
            .map(|&x0| {
                let y0 = self.b[0] * x0 + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
                x2 = x1;
                x1 = x0;
                y2 = y1;
                y1 = y0;
                y0
            })
            .collect()
    }
}
