//! Room sampling, corpus generation, the `RIRD` binary container, shuffling
//! and batching.
//!
//! File layout (little-endian throughout):
//!
//! ```text
//! header:  "RIRD" | version u16 | fs u32 | rir_len u32 | record_count u64 | mode u8
//! record:  dims 3xf64 | label 3xf64 | beta 6xf64 | rt60_target f64 (NaN when fixed)
//!          | source 3xf64 | receiver 3xf64 | samples rir_len x f32
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acoustics::{sort_ascending, RoomSpec, SourceReceiverPair, Vec3, MIN_SEPARATION, WALL_MARGIN};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::simulator::{rt60_to_beta, simulate_rir, ImageSourceConfig};

pub const MAGIC: &[u8; 4] = b"RIRD";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 4 + 2 + 4 + 4 + 8 + 1;
const META_F64S: usize = 3 + 3 + 6 + 1 + 3 + 3;

/// Bounded re-draws for infeasible reverberation targets and too-close pairs.
const MAX_REDRAWS: usize = 1000;

pub const DEFAULT_BETA_SEED: u64 = 0x5eed_0b07a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    /// One reflection-coefficient vector shared by every room.
    FixedBeta,
    /// Per-room RT60 drawn uniformly; all walls get the Sabine-derived β.
    VaryingRt60,
}

impl BetaMode {
    pub fn to_byte(self) -> u8 {
        match self {
            BetaMode::FixedBeta => 0,
            BetaMode::VaryingRt60 => 1,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(BetaMode::FixedBeta),
            1 => Ok(BetaMode::VaryingRt60),
            other => Err(Error::Format(format!("unknown mode byte {other}"))),
        }
    }
}

/// How the source/receiver pairs of one room are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLayout {
    /// Every response gets a fresh source and receiver.
    Independent,
    /// `sources` x `receivers` responses sharing endpoints.
    Grid { sources: usize, receivers: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_rooms: usize,
    pub rirs_per_room: usize,
    pub mode: BetaMode,
    /// Per-axis `[lo, hi]` in meters.
    pub dim_ranges: [[f64; 2]; 3],
    pub rt60_range: [f64; 2],
    /// Per-wall range for the shared vector in fixed mode.
    pub fixed_beta_range: [f64; 2],
    /// Seed of the shared fixed-mode vector, kept apart from `seed` so that
    /// separately generated splits see the same walls.
    pub beta_seed: u64,
    pub seed: u64,
    pub layout: PairLayout,
    pub sim: ImageSourceConfig,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_rooms: 2000,
            rirs_per_room: 16,
            mode: BetaMode::VaryingRt60,
            dim_ranges: [[6.0, 10.0], [5.0, 8.0], [4.0, 6.0]],
            rt60_range: [0.4, 1.0],
            fixed_beta_range: [0.7, 0.95],
            beta_seed: DEFAULT_BETA_SEED,
            seed: 0,
            layout: PairLayout::Independent,
            sim: ImageSourceConfig::default(),
        }
    }
}

impl DatasetSpec {
    /// Laptop-sized corpus: 2000/400/400 rooms with 4 responses each.
    pub fn desk(split: Split, mode: BetaMode, seed: u64) -> Self {
        let n_rooms = match split {
            Split::Train => 2000,
            Split::Val | Split::Test => 400,
        };
        Self {
            n_rooms,
            rirs_per_room: 4,
            mode,
            seed,
            ..Self::default()
        }
    }

    /// 336000 / 96000 / 48000 responses at 16 per room.
    pub fn paper(split: Split, mode: BetaMode, seed: u64) -> Self {
        let n_rooms = match split {
            Split::Train => 21000,
            Split::Val => 6000,
            Split::Test => 3000,
        };
        Self {
            n_rooms,
            rirs_per_room: 16,
            mode,
            seed,
            ..Self::default()
        }
    }

    pub fn record_count(&self) -> usize {
        self.n_rooms * self.rirs_per_room
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Generation(msg));
        if self.n_rooms == 0 || self.rirs_per_room == 0 {
            return bad("n_rooms and rirs_per_room must be at least 1".into());
        }
        for (axis, [lo, hi]) in self.dim_ranges.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && *lo > 2.0 * WALL_MARGIN && lo <= hi) {
                return bad(format!(
                    "dimension range {axis} [{lo}, {hi}] must be ordered and exceed twice the {WALL_MARGIN} m wall margin"
                ));
            }
        }
        let [r0, r1] = self.rt60_range;
        if self.mode == BetaMode::VaryingRt60 && !(r0 > 0.0 && r0 <= r1 && r1.is_finite()) {
            return bad(format!("rt60 range [{r0}, {r1}] must be positive and ordered"));
        }
        let [b0, b1] = self.fixed_beta_range;
        if self.mode == BetaMode::FixedBeta && !(0.0 <= b0 && b0 <= b1 && b1 < 1.0) {
            return bad(format!("fixed beta range [{b0}, {b1}] must lie in [0, 1)"));
        }
        if let PairLayout::Grid { sources, receivers } = self.layout {
            if sources * receivers != self.rirs_per_room {
                return bad(format!(
                    "grid {sources}x{receivers} does not give {} responses per room",
                    self.rirs_per_room
                ));
            }
        }
        Ok(())
    }

    /// The shared reflection coefficients used in fixed mode.
    pub fn fixed_beta(&self) -> [f64; 6] {
        let mut rng = ChaCha8Rng::seed_from_u64(self.beta_seed);
        let [lo, hi] = self.fixed_beta_range;
        std::array::from_fn(|_| if lo == hi { lo } else { rng.random_range(lo..hi) })
    }
}

/// One stored response with its generation metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub dims: Vec3,
    pub label: Vec3,
    pub beta: [f64; 6],
    /// NaN in fixed mode.
    pub rt60_target: f64,
    pub source: Vec3,
    pub receiver: Vec3,
    pub samples: Vec<f32>,
}

impl Record {
    pub fn room(&self) -> Result<RoomSpec> {
        let rt = (!self.rt60_target.is_nan()).then_some(self.rt60_target);
        RoomSpec::new(self.dims, self.beta, rt)
    }

    pub fn pair(&self) -> SourceReceiverPair {
        SourceReceiverPair {
            source: self.source,
            receiver: self.receiver,
        }
    }

    /// Identity of the room this record belongs to.
    pub fn room_key(&self) -> [u64; 3] {
        self.dims.map(f64::to_bits)
    }

    pub fn samples_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| s as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub version: u16,
    pub fs: u32,
    pub rir_len: u32,
    pub record_count: u64,
    pub mode: BetaMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub fs: u32,
    pub rir_len: usize,
    pub mode: BetaMode,
    pub records: Vec<Record>,
}

impl DatasetFile {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn header(&self) -> Header {
        Header {
            version: VERSION,
            fs: self.fs,
            rir_len: self.rir_len as u32,
            record_count: self.records.len() as u64,
            mode: self.mode,
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let h = self.header();
        w.write_all(MAGIC)?;
        w.write_all(&h.version.to_le_bytes())?;
        w.write_all(&h.fs.to_le_bytes())?;
        w.write_all(&h.rir_len.to_le_bytes())?;
        w.write_all(&h.record_count.to_le_bytes())?;
        w.write_all(&[h.mode.to_byte()])?;
        let mut buf = Vec::with_capacity(META_F64S * 8 + self.rir_len * 4);
        for r in &self.records {
            if r.samples.len() != self.rir_len {
                return Err(Error::Format(format!(
                    "record has {} samples, header says {}",
                    r.samples.len(),
                    self.rir_len
                )));
            }
            buf.clear();
            let meta = r
                .dims
                .iter()
                .chain(&r.label)
                .chain(&r.beta)
                .chain(std::iter::once(&r.rt60_target))
                .chain(&r.source)
                .chain(&r.receiver);
            for v in meta {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for s in &r.samples {
                buf.extend_from_slice(&s.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = parse_header(bytes)?;
        let rir_len = header.rir_len as usize;
        let record_bytes = META_F64S * 8 + rir_len * 4;
        let body = &bytes[HEADER_BYTES..];
        let count = usize::try_from(header.record_count)
            .map_err(|_| Error::Format("record count overflows usize".into()))?;
        if body.len() != count.checked_mul(record_bytes).unwrap_or(usize::MAX) {
            return Err(Error::Format(format!(
                "header declares {count} records of {record_bytes} bytes, body holds {} bytes",
                body.len()
            )));
        }
        let records = body
            .chunks_exact(record_bytes)
            .map(|chunk| {
                let (meta, samples) = chunk.split_at(META_F64S * 8);
                let m: Vec<f64> = meta
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect();
                Record {
                    dims: [m[0], m[1], m[2]],
                    label: [m[3], m[4], m[5]],
                    beta: std::array::from_fn(|i| m[6 + i]),
                    rt60_target: m[12],
                    source: [m[13], m[14], m[15]],
                    receiver: [m[16], m[17], m[18]],
                    samples: samples
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                        .collect(),
                }
            })
            .collect();
        Ok(Self {
            fs: header.fs,
            rir_len,
            mode: header.mode,
            records,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| annotate(e, path))?;
        Self::from_bytes(&bytes)
    }

    /// Writes the container and its `<path>.json` manifest; returns the
    /// manifest.
    pub fn save(&self, path: impl AsRef<Path>, spec: Option<&DatasetSpec>) -> Result<Manifest> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        {
            let mut w = BufWriter::new(fs::File::create(path).map_err(|e| annotate(e, path))?);
            w.write_all(&bytes)?;
            w.flush()?;
        }
        let manifest = Manifest {
            spec: spec.cloned(),
            generator: generator_id(),
            record_count: self.records.len() as u64,
            sha256: hex::encode(Sha256::digest(&bytes)),
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(manifest_path(path), json)?;
        Ok(manifest)
    }

    /// Records grouped by room, in order of first appearance.
    pub fn rooms(&self) -> Vec<Vec<usize>> {
        group_by_room(&self.records)
    }
}

fn annotate(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_BYTES || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing RIRD magic".into()));
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    Ok(Header {
        version,
        fs: u32::from_le_bytes(bytes[6..10].try_into().unwrap()),
        rir_len: u32::from_le_bytes(bytes[10..14].try_into().unwrap()),
        record_count: u64::from_le_bytes(bytes[14..22].try_into().unwrap()),
        mode: BetaMode::from_byte(bytes[22])?,
    })
}

/// Sidecar written next to every container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: Option<DatasetSpec>,
    pub generator: String,
    pub record_count: u64,
    pub sha256: String,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn generator_id() -> String {
    format!("roomgeo {} ({})", env!("CARGO_PKG_VERSION"), env!("ROOMGEO_GIT_DESCRIBE"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn group_by_room(records: &[Record]) -> Vec<Vec<usize>> {
    let mut index: HashMap<[u64; 3], usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let g = *index.entry(r.room_key()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    groups
}

/// Independent random stream for room `index` of a corpus seeded with `seed`.
pub fn room_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Draws the room itself: dimensions and reflection coefficients.
pub fn sample_room(spec: &DatasetSpec, fixed_beta: &[f64; 6], rng: &mut ChaCha8Rng) -> Result<RoomSpec> {
    let dims: Vec3 = std::array::from_fn(|a| uniform(rng, spec.dim_ranges[a]));
    match spec.mode {
        BetaMode::FixedBeta => RoomSpec::new(dims, *fixed_beta, None),
        BetaMode::VaryingRt60 => {
            for _ in 0..MAX_REDRAWS {
                let rt60 = uniform(rng, spec.rt60_range);
                match rt60_to_beta(&dims, rt60, &spec.sim.constants) {
                    Ok(beta) => return RoomSpec::new(dims, beta, Some(rt60)),
                    Err(Error::InfeasibleRt60 { .. }) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::Generation(format!(
                "no feasible rt60 in {:?} for room {dims:?} after {MAX_REDRAWS} draws",
                spec.rt60_range
            )))
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Uniform point keeping [`WALL_MARGIN`] from every wall.
pub fn sample_point(room: &RoomSpec, rng: &mut ChaCha8Rng) -> Vec3 {
    std::array::from_fn(|a| rng.random_range(WALL_MARGIN..room.dims[a] - WALL_MARGIN))
}

/// A point at least [`MIN_SEPARATION`] from all of `others`.
fn sample_point_apart(room: &RoomSpec, others: &[Vec3], rng: &mut ChaCha8Rng) -> Result<Vec3> {
    for _ in 0..MAX_REDRAWS {
        let p = sample_point(room, rng);
        if others
            .iter()
            .all(|o| crate::acoustics::distance(o, &p) >= MIN_SEPARATION)
        {
            return Ok(p);
        }
    }
    Err(Error::Generation(format!(
        "could not place a point {MIN_SEPARATION} m from {} others in room {:?}",
        others.len(),
        room.dims
    )))
}

pub fn sample_pairs(room: &RoomSpec, count: usize, layout: PairLayout, rng: &mut ChaCha8Rng) -> Result<Vec<SourceReceiverPair>> {
    match layout {
        PairLayout::Independent => (0..count)
            .map(|_| {
                let source = sample_point(room, rng);
                let receiver = sample_point_apart(room, &[source], rng)?;
                Ok(SourceReceiverPair { source, receiver })
            })
            .collect(),
        PairLayout::Grid { sources, receivers } => {
            let srcs: Vec<Vec3> = (0..sources).map(|_| sample_point(room, rng)).collect();
            let rcvs = (0..receivers)
                .map(|_| sample_point_apart(room, &srcs, rng))
                .collect::<Result<Vec<_>>>()?;
            Ok(srcs
                .iter()
                .flat_map(|s| {
                    rcvs.iter().map(move |r| SourceReceiverPair {
                        source: *s,
                        receiver: *r,
                    })
                })
                .take(count)
                .collect())
        }
    }
}

/// Records of room `index`; a pure function of `(spec, index)`.
pub fn generate_room(spec: &DatasetSpec, fixed_beta: &[f64; 6], index: usize) -> Result<Vec<Record>> {
    let mut rng = room_rng(spec.seed, index);
    let room = sample_room(spec, fixed_beta, &mut rng)?;
    let pairs = sample_pairs(&room, spec.rirs_per_room, spec.layout, &mut rng)?;
    pairs
        .iter()
        .map(|pair| {
            let rir = simulate_rir(&room, pair, &spec.sim)?;
            let samples: Vec<f32> = rir.samples.iter().map(|&s| s as f32).collect();
            if samples.iter().all(|&s| s == 0.0) {
                return Err(Error::Generation(format!("silent response in room {:?}", room.dims)));
            }
            Ok(Record {
                dims: room.dims,
                label: room.label,
                beta: room.beta,
                rt60_target: room.rt60_target.unwrap_or(f64::NAN),
                source: pair.source,
                receiver: pair.receiver,
                samples,
            })
        })
        .collect()
}

/// Simulates the whole corpus. Rooms run in parallel; the output order (and
/// therefore every byte) depends only on `spec`.
pub fn generate(spec: &DatasetSpec) -> Result<DatasetFile> {
    spec.validate()?;
    let fixed_beta = spec.fixed_beta();
    let rooms = (0..spec.n_rooms)
        .into_par_iter()
        .map(|i| generate_room(spec, &fixed_beta, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetFile {
        fs: spec.sim.constants.fs,
        rir_len: spec.sim.constants.rir_len,
        mode: spec.mode,
        records: rooms.into_iter().flatten().collect(),
    })
}

/// Visiting order for the records. Seed 0 means "no shuffle".
pub fn split_and_shuffle(record_count: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..record_count).collect();
    if seed != 0 {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LastBatch {
    /// Training: a short final batch is skipped.
    Drop,
    /// Evaluation: every record is visited.
    Keep,
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// `n x rir_len`, raw sample values.
    pub inputs: Tensor,
    /// `n x 3`, ascending room dimensions.
    pub targets: Tensor,
    /// Record indices in batch order.
    pub indices: Vec<usize>,
}

/// Lazily assembled batches over `order`.
pub fn batches<'a>(
    file: &'a DatasetFile,
    order: &'a [usize],
    batch_size: usize,
    last: LastBatch,
) -> Result<impl Iterator<Item = Batch> + 'a> {
    if batch_size == 0 {
        return Err(Error::Shape("batch size must be at least 1".into()));
    }
    let usable = match last {
        LastBatch::Drop => order.len() / batch_size * batch_size,
        LastBatch::Keep => order.len(),
    };
    Ok(order[..usable]
        .chunks(batch_size)
        .map(move |idx| make_batch(file, idx)))
}

pub fn make_batch(file: &DatasetFile, idx: &[usize]) -> Batch {
    let n = idx.len();
    let mut inputs = Vec::with_capacity(n * file.rir_len);
    let mut targets = Vec::with_capacity(n * 3);
    for &i in idx {
        let r = &file.records[i];
        inputs.extend(r.samples.iter().map(|&s| s as f64));
        // Labels are stored sorted; re-sorting guards hand-built files.
        targets.extend(sort_ascending(r.dims).unwrap_or(r.label));
    }
    Batch {
        inputs: Tensor::new(vec![n, file.rir_len], inputs).expect("batch shape"),
        targets: Tensor::new(vec![n, 3], targets).expect("target shape"),
        indices: idx.to_vec(),
    }
}

/// What an estimate input file turned out to be.
#[derive(Debug, Clone, PartialEq)]
pub enum RirInput {
    Dataset(DatasetFile),
    /// Headerless little-endian f32 samples.
    Raw(Vec<f32>),
}

impl RirInput {
    /// Distinguishes a `RIRD` container from raw samples by its magic.
    pub fn detect(bytes: &[u8], rir_len: usize) -> Result<Self> {
        if bytes.starts_with(MAGIC) {
            return DatasetFile::from_bytes(bytes).map(RirInput::Dataset);
        }
        if bytes.len() != rir_len * 4 {
            return Err(Error::Format(format!(
                "raw input must be {rir_len} little-endian f32 values ({} bytes), got {} bytes",
                rir_len * 4,
                bytes.len()
            )));
        }
        Ok(RirInput::Raw(
            bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        ))
    }

    pub fn responses(&self) -> Vec<Vec<f64>> {
        match self {
            RirInput::Dataset(f) => f.records.iter().map(Record::samples_f64).collect(),
            RirInput::Raw(s) => vec![s.iter().map(|&v| v as f64).collect()],
        }
    }
}
