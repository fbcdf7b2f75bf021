//! Error statistics, per-room analysis, latency benchmark and CSV reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acoustics::{RoomSpec, SourceReceiverPair, Vec3};
use crate::dataset::{group_by_room, room_rng, sample_pairs, sample_room, BetaMode, DatasetFile, DatasetSpec, PairLayout};
use crate::error::{Error, Result};
use crate::estimator::{mean_vec3, GeometryModel};
use crate::simulator::simulate_rir;

/// Group sizes reported by default.
pub const GROUP_SIZES: [usize; 4] = [1, 4, 8, 16];
pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

/// Per-dimension error summary; `e = estimate - truth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    pub mse: Vec3,
    pub bias: Vec3,
    /// Population variance of `e`.
    pub variance: Vec3,
    pub median_abs: Vec3,
}

impl ErrorStats {
    pub fn from_pairs(estimates: &[Vec3], truths: &[Vec3]) -> Result<Self> {
        if estimates.len() != truths.len() {
            return Err(Error::Shape(format!(
                "{} estimates for {} truths",
                estimates.len(),
                truths.len()
            )));
        }
        if estimates.is_empty() {
            return Err(Error::Empty("no estimates"));
        }
        let n = estimates.len() as f64;
        let mut mse = [0.0; 3];
        let mut bias = [0.0; 3];
        let mut variance = [0.0; 3];
        let mut median_abs = [0.0; 3];
        for d in 0..3 {
            let errors: Vec<f64> = estimates.iter().zip(truths).map(|(e, t)| e[d] - t[d]).collect();
            bias[d] = errors.iter().sum::<f64>() / n;
            mse[d] = errors.iter().map(|e| e * e).sum::<f64>() / n;
            variance[d] = errors.iter().map(|e| (e - bias[d]).powi(2)).sum::<f64>() / n;
            let abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
            median_abs[d] = median(abs);
        }
        Ok(Self {
            count: estimates.len(),
            mse,
            bias,
            variance,
            median_abs,
        })
    }

    pub fn total_mse(&self) -> f64 {
        self.mse.iter().sum()
    }

    pub fn total_variance(&self) -> f64 {
        self.variance.iter().sum()
    }
}

pub fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// Equal-width bins over `[0, max]`; the maximum lands in the last bin.
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    let max = values.iter().copied().fold(0.0, f64::max);
    let width = max / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            low: b as f64 * width,
            high: if b + 1 == bins { max } else { (b + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for &v in values {
        let b = if width > 0.0 { ((v / width) as usize).min(bins - 1) } else { 0 };
        out[b].count += 1;
    }
    out
}

/// Squared errors of every dimension of every estimate, pooled.
pub fn squared_errors(estimates: &[Vec3], truths: &[Vec3]) -> Vec<f64> {
    estimates
        .iter()
        .zip(truths)
        .flat_map(|(e, t)| (0..3).map(move |d| (e[d] - t[d]).powi(2)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomError {
    pub label: Vec3,
    pub estimates: usize,
    pub mean_error: Vec3,
    /// Population standard deviation of the error.
    pub std_error: Vec3,
}

impl RoomError {
    fn new(label: Vec3, estimates: &[Vec3]) -> Self {
        let n = estimates.len() as f64;
        let mean = mean_vec3(estimates);
        let mut std = [0.0; 3];
        for d in 0..3 {
            let mean_err = mean[d] - label[d];
            std[d] = (estimates.iter().map(|e| (e[d] - label[d] - mean_err).powi(2)).sum::<f64>() / n).sqrt();
        }
        Self {
            label,
            estimates: estimates.len(),
            mean_error: [0, 1, 2].map(|d| mean[d] - label[d]),
            std_error: std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub group_size: usize,
    /// Statistics of the raw network outputs.
    pub stats: ErrorStats,
    /// The same statistics after sorting each single estimate ascending.
    pub sorted_stats: ErrorStats,
    /// Single estimates whose components were not already ascending.
    pub unsorted_outputs: usize,
    pub histogram: Vec<HistogramBin>,
    pub per_room: Vec<RoomError>,
}

/// Room membership and truth for a set of single-response estimates.
#[derive(Debug, Clone)]
pub struct RoomGroups {
    pub labels: Vec<Vec3>,
    /// Indices into the estimate list, one entry per room.
    pub members: Vec<Vec<usize>>,
}

impl RoomGroups {
    pub fn from_file(file: &DatasetFile) -> Self {
        let members = group_by_room(&file.records);
        let labels = members.iter().map(|m| file.records[m[0]].label).collect();
        Self { labels, members }
    }

    pub fn min_room_size(&self) -> usize {
        self.members.iter().map(Vec::len).min().unwrap_or(0)
    }

    /// Entries of [`GROUP_SIZES`] that every room can fill at least once.
    pub fn valid_group_sizes(&self) -> Vec<usize> {
        let min = self.min_room_size();
        GROUP_SIZES.into_iter().filter(|&n| n <= min).collect()
    }
}

/// Averages consecutive chunks of `group_size` estimates within each room.
/// Leftover estimates that do not fill a chunk are dropped.
pub fn group_estimates(estimates: &[Vec3], rooms: &RoomGroups, group_size: usize) -> Result<(Vec<Vec3>, Vec<Vec3>, Vec<usize>)> {
    if rooms.members.is_empty() {
        return Err(Error::Empty("no rooms to group"));
    }
    if group_size == 0 || group_size > rooms.min_room_size() {
        return Err(Error::Grouping {
            requested: group_size,
            valid: rooms.valid_group_sizes(),
        });
    }
    let mut averaged = Vec::new();
    let mut truths = Vec::new();
    let mut room_of = Vec::new();
    for (r, members) in rooms.members.iter().enumerate() {
        for chunk in members.chunks_exact(group_size) {
            let picked: Vec<Vec3> = chunk.iter().map(|&i| estimates[i]).collect();
            averaged.push(mean_vec3(&picked));
            truths.push(rooms.labels[r]);
            room_of.push(r);
        }
    }
    Ok((averaged, truths, room_of))
}

/// Report for single-response `estimates` averaged over `group_size`.
pub fn evaluate_estimates(estimates: &[Vec3], rooms: &RoomGroups, group_size: usize) -> Result<EvalReport> {
    let (averaged, truths, room_of) = group_estimates(estimates, rooms, group_size)?;
    let stats = ErrorStats::from_pairs(&averaged, &truths)?;
    let sorted: Vec<Vec3> = estimates.iter().map(|e| sort_vec3(*e)).collect();
    let unsorted_outputs = estimates.iter().zip(&sorted).filter(|(a, b)| a != b).count();
    let (sorted_avg, _, _) = group_estimates(&sorted, rooms, group_size)?;
    let sorted_stats = ErrorStats::from_pairs(&sorted_avg, &truths)?;
    let histogram = histogram(&squared_errors(&averaged, &truths), HISTOGRAM_BINS);
    let mut per_room_est: Vec<Vec<Vec3>> = vec![Vec::new(); rooms.members.len()];
    for (e, &r) in averaged.iter().zip(&room_of) {
        per_room_est[r].push(*e);
    }
    let per_room = per_room_est
        .iter()
        .zip(&rooms.labels)
        .map(|(est, &label)| RoomError::new(label, est))
        .collect();
    Ok(EvalReport {
        group_size,
        stats,
        sorted_stats,
        unsorted_outputs,
        histogram,
        per_room,
    })
}

fn sort_vec3(mut v: Vec3) -> Vec3 {
    v.sort_by(f64::total_cmp);
    v
}

/// Runs the model over `file` once and reports every requested group size.
pub fn evaluate(model: &GeometryModel, file: &DatasetFile, group_sizes: &[usize]) -> Result<Vec<EvalReport>> {
    if file.is_empty() {
        return Err(Error::Empty("evaluation set is empty"));
    }
    let rooms = RoomGroups::from_file(file);
    for &n in group_sizes {
        if n == 0 || n > rooms.min_room_size() {
            return Err(Error::Grouping {
                requested: n,
                valid: rooms.valid_group_sizes(),
            });
        }
    }
    let estimates = model.estimate_file(file)?;
    group_sizes.iter().map(|&n| evaluate_estimates(&estimates, &rooms, n)).collect()
}

/// Mean of `N` independent draws from `sample`, repeated `trials` times;
/// returns the variance ratio `var(mean of N) / var(single)`.
pub fn monte_carlo_variance_ratio(
    group_size: usize,
    trials: usize,
    rng: &mut ChaCha8Rng,
    mut sample: impl FnMut(&mut ChaCha8Rng) -> f64,
) -> f64 {
    let singles: Vec<f64> = (0..trials).map(|_| sample(rng)).collect();
    let means: Vec<f64> = (0..trials)
        .map(|_| (0..group_size).map(|_| sample(rng)).sum::<f64>() / group_size as f64)
        .collect();
    population_variance(&means) / population_variance(&singles)
}

pub fn population_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Per-dimension MSE on `test` of always predicting the mean `train` label.
pub fn constant_predictor_mse(train: &DatasetFile, test: &DatasetFile) -> Result<Vec3> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Empty("constant predictor needs train and test records"));
    }
    let labels: Vec<Vec3> = train.records.iter().map(|r| r.label).collect();
    let mean = mean_vec3(&labels);
    let truths: Vec<Vec3> = test.records.iter().map(|r| r.label).collect();
    Ok(ErrorStats::from_pairs(&vec![mean; truths.len()], &truths)?.mse)
}

/// Held-out learning summary: model against the constant predictor, and
/// the variance change from single to grouped estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningCheck {
    pub model_mse: Vec3,
    pub baseline_mse: Vec3,
    pub group_size: usize,
    pub variance_single: Vec3,
    pub variance_grouped: Vec3,
}

impl LearningCheck {
    pub fn new(baseline_mse: Vec3, single: &EvalReport, grouped: &EvalReport) -> Self {
        Self {
            model_mse: single.stats.mse,
            baseline_mse,
            group_size: grouped.group_size,
            variance_single: single.stats.variance,
            variance_grouped: grouped.stats.variance,
        }
    }

    /// Per-dimension `model / baseline`.
    pub fn mse_ratio(&self) -> Vec3 {
        [0, 1, 2].map(|d| self.model_mse[d] / self.baseline_mse[d])
    }

    pub fn beats_baseline(&self, factor: f64) -> bool {
        self.mse_ratio().iter().all(|&r| r <= factor)
    }

    /// Per-dimension `grouped / single` variance.
    pub fn variance_ratio(&self) -> Vec3 {
        [0, 1, 2].map(|d| self.variance_grouped[d] / self.variance_single[d])
    }

    pub fn variance_reduced(&self, slack: f64) -> bool {
        self.variance_ratio().iter().all(|&r| r < slack)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomAnalysis {
    pub rooms: Vec<RoomError>,
    /// Pooled squared errors of every estimate in every room.
    pub histogram: Vec<HistogramBin>,
    pub stats: ErrorStats,
}

/// Samples `n_rooms` rooms from `spec`, places a grid of `sources x receivers`
/// in each and reports single-response errors per room.
pub fn per_room_analysis(
    model: &GeometryModel,
    spec: &DatasetSpec,
    n_rooms: usize,
    sources: usize,
    receivers: usize,
) -> Result<RoomAnalysis> {
    if n_rooms == 0 || sources == 0 || receivers == 0 {
        return Err(Error::Empty("per-room analysis needs rooms, sources and receivers"));
    }
    let fixed = spec.fixed_beta();
    let mut all_est = Vec::new();
    let mut all_truth = Vec::new();
    let mut rooms = Vec::with_capacity(n_rooms);
    for index in 0..n_rooms {
        let mut rng = room_rng(spec.seed, index);
        let room: RoomSpec = sample_room(spec, &fixed, &mut rng)?;
        let pairs: Vec<SourceReceiverPair> = sample_pairs(
            &room,
            sources * receivers,
            PairLayout::Grid { sources, receivers },
            &mut rng,
        )?;
        let rirs = pairs
            .iter()
            .map(|p| simulate_rir(&room, p, &spec.sim).map(|r| r.samples))
            .collect::<Result<Vec<_>>>()?;
        let est: Vec<Vec3> = rirs.iter().map(|r| model.estimate(r)).collect::<Result<_>>()?;
        rooms.push(RoomError::new(room.label, &est));
        all_truth.extend(std::iter::repeat_n(room.label, est.len()));
        all_est.extend(est);
    }
    Ok(RoomAnalysis {
        rooms,
        histogram: histogram(&squared_errors(&all_est, &all_truth), HISTOGRAM_BINS),
        stats: ErrorStats::from_pairs(&all_est, &all_truth)?,
    })
}

/// Spec for the default per-room analysis: varying walls, seeded.
pub fn analysis_spec(seed: u64) -> DatasetSpec {
    DatasetSpec {
        mode: BetaMode::VaryingRt60,
        seed,
        ..DatasetSpec::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub iterations: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p99_ms: f64,
}

/// Wall-clock latency of single-response estimates on random input.
pub fn runtime_bench(model: &GeometryModel, iterations: usize, seed: u64) -> Result<BenchReport> {
    if iterations == 0 {
        return Err(Error::Empty("benchmark needs at least one iteration"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rir: Vec<f64> = (0..crate::estimator::INPUT_LEN).map(|_| rng.random_range(-0.05..0.05)).collect();
    model.estimate(&rir)?;
    let mut times = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let start = Instant::now();
        std::hint::black_box(model.estimate(std::hint::black_box(&rir))?);
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = times.iter().sum::<f64>() / iterations as f64;
    times.sort_by(f64::total_cmp);
    let p99_index = ((iterations as f64 * 0.99).ceil() as usize).clamp(1, iterations) - 1;
    Ok(BenchReport {
        iterations,
        mean_ms,
        median_ms: median(times.clone()),
        p99_ms: times[p99_index],
    })
}

/// `group_size,output,dimension,mse,bias,variance,median_abs,count` where
/// `output` is `raw` or `sorted`.
pub fn mse_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("group_size,output,dimension,mse,bias,variance,median_abs,count\n");
    for r in reports {
        for (output, st) in [("raw", &r.stats), ("sorted", &r.sorted_stats)] {
            for d in 0..3 {
                writeln!(
                    s,
                    "{},{output},{},{:.10e},{:.10e},{:.10e},{:.10e},{}",
                    r.group_size, d, st.mse[d], st.bias[d], st.variance[d], st.median_abs[d], st.count
                )
                .unwrap();
            }
        }
    }
    s
}

/// `group_size,bin_low,bin_high,count`
pub fn histogram_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("group_size,bin_low,bin_high,count\n");
    for r in reports {
        for b in &r.histogram {
            writeln!(s, "{},{:.10e},{:.10e},{}", r.group_size, b.low, b.high, b.count).unwrap();
        }
    }
    s
}

/// One row per room. Dimension columns follow the ascending label order.
pub fn rooms_csv(group_size: usize, rooms: &[RoomError]) -> String {
    let mut s = String::from(
        "group_size,room,label_0,label_1,label_2,estimates,mean_err_0,mean_err_1,mean_err_2,std_0,std_1,std_2\n",
    );
    for (i, r) in rooms.iter().enumerate() {
        writeln!(
            s,
            "{group_size},{i},{},{},{},{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}",
            r.label[0],
            r.label[1],
            r.label[2],
            r.estimates,
            r.mean_error[0],
            r.mean_error[1],
            r.mean_error[2],
            r.std_error[0],
            r.std_error[1],
            r.std_error[2]
        )
        .unwrap();
    }
    s
}

/// Writes `report_mse.csv`, `report_hist.csv` and `report_rooms.csv` into `dir`.
pub fn write_reports(dir: impl AsRef<Path>, reports: &[EvalReport]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report_mse.csv"), mse_csv(reports))?;
    fs::write(dir.join("report_hist.csv"), histogram_csv(reports))?;
    let mut rooms = String::new();
    for (i, r) in reports.iter().enumerate() {
        let body = rooms_csv(r.group_size, &r.per_room);
        rooms.push_str(if i == 0 { &body } else { body.split_once('\n').map_or("", |x| x.1) });
    }
    fs::write(dir.join("report_rooms.csv"), rooms)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_symmetric_estimates() {
        let s = ErrorStats::from_pairs(&[[4.1, 0.0, 0.0], [3.9, 0.0, 0.0]], &[[4.0, 0.0, 0.0]; 2]).unwrap();
        assert!(s.bias[0].abs() < 1e-15);
        assert!((s.variance[0] - 0.01).abs() < 1e-12);
        assert!((s.mse[0] - 0.01).abs() < 1e-12);
        assert!((s.median_abs[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn mse_is_bias_squared_plus_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truths: Vec<Vec3> = (0..97).map(|_| [rng.random_range(2.0..5.0), 3.0, 7.0]).collect();
        let est: Vec<Vec3> = truths.iter().map(|t| t.map(|v| v + rng.random_range(-0.4..0.9))).collect();
        let s = ErrorStats::from_pairs(&est, &truths).unwrap();
        for d in 0..3 {
            assert!((s.mse[d] - s.bias[d].powi(2) - s.variance[d]).abs() <= 1e-12);
        }
    }

    #[test]
    fn histogram_edges() {
        let h = histogram(&[0.0, 0.5, 1.0], 4);
        assert_eq!(h.iter().map(|b| b.count).collect::<Vec<_>>(), vec![1, 0, 1, 1]);
        assert_eq!(h[3].high, 1.0);
        let flat = histogram(&[0.0, 0.0], 50);
        assert_eq!(flat[0].count, 2);
    }

    #[test]
    fn grouping_errors_list_valid_sizes() {
        let rooms = RoomGroups {
            labels: vec![[1.0, 2.0, 3.0]; 2],
            members: vec![(0..4).collect(), (4..12).collect()],
        };
        let est = vec![[1.0, 2.0, 3.0]; 12];
        match group_estimates(&est, &rooms, 8) {
            Err(Error::Grouping { requested, valid }) => {
                assert_eq!(requested, 8);
                assert_eq!(valid, vec![1, 4]);
            }
            other => panic!("{other:?}"),
        }
        let (avg, truth, room_of) = group_estimates(&est, &rooms, 4).unwrap();
        assert_eq!((avg.len(), truth.len()), (3, 3));
        assert_eq!(room_of, vec![0, 1, 1]);
    }

    #[test]
    fn monte_carlo_ratio_near_inverse_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ratio = monte_carlo_variance_ratio(4, 20_000, &mut rng, |r| r.random_range(-1.0..1.0));
        assert!((0.85 / 4.0..=1.15 / 4.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn csv_headers() {
        let rooms = RoomGroups {
            labels: vec![[1.0, 2.0, 3.0]],
            members: vec![(0..4).collect()],
        };
        let est = vec![[1.1, 2.0, 3.0], [0.9, 2.0, 3.0], [1.0, 2.2, 3.0], [1.0, 1.8, 3.0]];
        let reports: Vec<EvalReport> = [1, 4].iter().map(|&n| evaluate_estimates(&est, &rooms, n).unwrap()).collect();
        let m = mse_csv(&reports);
        assert_eq!(m.lines().count(), 1 + 12);
        assert!(m.starts_with("group_size,output,dimension,mse"));
        assert_eq!(histogram_csv(&reports).lines().count(), 1 + 2 * HISTOGRAM_BINS);
        assert_eq!(reports[1].stats.count, 1);
        assert!(reports[1].stats.total_mse() < 1e-24);
    }
}
