//! Room and measurement-geometry types shared by the simulator, the dataset
//! and the evaluation code.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Meters, ordered `[x, y, z]`.
pub type Vec3 = [f64; 3];

/// Minimum distance between a source/receiver and any wall.
pub const WALL_MARGIN: f64 = 0.5;
/// Minimum source to receiver separation.
pub const MIN_SEPARATION: f64 = 0.3;
/// Amplitudes at or below this are treated as silence.
pub const SILENCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Speed of sound, m/s.
    pub c: f64,
    /// Sampling rate, Hz.
    pub fs: u32,
    /// Sabine constant `24 ln 10 / c20`, s/m.
    pub sabine_coeff: f64,
    /// Impulse response length in samples.
    pub rir_len: usize,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            c: 340.0,
            fs: 8000,
            sabine_coeff: 0.1611,
            rir_len: 4096,
        }
    }
}

impl PhysicalConstants {
    pub fn window_seconds(&self) -> f64 {
        self.rir_len as f64 / self.fs as f64
    }

    /// Propagation delay in (fractional) samples for a path of `distance` meters.
    pub fn delay_samples(&self, distance: f64) -> f64 {
        distance / self.c * self.fs as f64
    }
}

/// Sorts room dimensions ascending. This is the regression target layout.
pub fn sort_ascending(dims: Vec3) -> Result<Vec3> {
    check_dims(&dims)?;
    let mut out = dims;
    out.sort_by(f64::total_cmp);
    Ok(out)
}

pub fn check_dims(dims: &Vec3) -> Result<()> {
    for (axis, &d) in dims.iter().enumerate() {
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "dimension {axis} must be positive and finite, got {d}"
            )));
        }
    }
    Ok(())
}

pub fn surface_area(dims: &Vec3) -> f64 {
    let [x, y, z] = *dims;
    2.0 * (x * y + x * z + y * z)
}

pub fn volume(dims: &Vec3) -> f64 {
    dims.iter().product()
}

/// A shoebox room. Wall order for `beta` is `x=0, x=Lx, y=0, y=Ly, z=0, z=Lz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub dims: Vec3,
    pub label: Vec3,
    pub beta: [f64; 6],
    pub rt60_target: Option<f64>,
}

impl RoomSpec {
    pub fn new(dims: Vec3, beta: [f64; 6], rt60_target: Option<f64>) -> Result<Self> {
        let label = sort_ascending(dims)?;
        if let Some(b) = beta.iter().find(|b| !(0.0..1.0).contains(*b)) {
            return Err(Error::InvalidGeometry(format!(
                "reflection coefficient {b} outside [0, 1)"
            )));
        }
        Ok(Self {
            dims,
            label,
            beta,
            rt60_target,
        })
    }

    pub fn surface_area(&self) -> f64 {
        surface_area(&self.dims)
    }

    pub fn volume(&self) -> f64 {
        volume(&self.dims)
    }

    /// True when `p` keeps at least `margin` from every wall.
    pub fn contains(&self, p: &Vec3, margin: f64) -> bool {
        p.iter()
            .zip(&self.dims)
            .all(|(&v, &l)| v >= margin && v <= l - margin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceReceiverPair {
    pub source: Vec3,
    pub receiver: Vec3,
}

impl SourceReceiverPair {
    pub fn distance(&self) -> f64 {
        distance(&self.source, &self.receiver)
    }

    pub fn swapped(&self) -> Self {
        Self {
            source: self.receiver,
            receiver: self.source,
        }
    }

    /// Checks that both points lie strictly inside `room` and do not coincide.
    pub fn validate(&self, room: &RoomSpec) -> Result<()> {
        for (what, p) in [("source", &self.source), ("receiver", &self.receiver)] {
            if !p.iter().all(|v| v.is_finite()) || !room.contains(p, f64::MIN_POSITIVE) {
                return Err(Error::InvalidGeometry(format!(
                    "{what} {p:?} is not inside room {:?}",
                    room.dims
                )));
            }
        }
        if self.distance() == 0.0 {
            return Err(Error::InvalidGeometry(
                "source and receiver coincide".into(),
            ));
        }
        Ok(())
    }
}

pub fn distance(a: &Vec3, b: &Vec3) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// One simulated impulse response with the geometry that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub samples: Vec<f64>,
    pub fs: u32,
    pub room: RoomSpec,
    pub pair: SourceReceiverPair,
}

impl Rir {
    /// Index of the first sample whose magnitude exceeds [`SILENCE`].
    pub fn onset(&self) -> Option<usize> {
        self.samples.iter().position(|s| s.abs() > SILENCE)
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }
}
