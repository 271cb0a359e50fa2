//! Raw recordings to model-ready gesture windows.
//!
//! The stages, in pipeline order: parse per-user CSV sensor files plus a JSON
//! manifest, align both sensors onto a shared 50 Hz grid anchored at the NFC
//! tap, low-pass filter, normalize channel-wise with statistics fitted on the
//! training split only, and split temporally per user. A deterministic
//! multi-user simulator stands in for real hardware captures.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{TimeSeries, GESTURE_CHANNELS, GESTURE_LEN, SAMPLE_RATE_HZ};

/// Window length in milliseconds (200 samples at 50 Hz).
const WINDOW_MS: i64 = 4000;
/// Sample period in milliseconds.
const STEP_MS: i64 = 20;
/// Largest tolerated gap between consecutive raw samples inside the window.
const MAX_GAP_MS: i64 = 200;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    MalformedRow { line: u64, message: String },
    #[error("line {line}: unknown sensor tag {tag:?}")]
    UnknownSensor { line: u64, tag: String },
    #[error("manifest {path}: {message}")]
    BadManifest { path: String, message: String },
    #[error("gesture {gesture_id}: no raw records for sensor {sensor:?}")]
    MissingSensor {
        gesture_id: String,
        sensor: Sensor,
    },
    #[error(
        "gesture {gesture_id}: sensor coverage gap of {gap_ms} ms in the 4 s window (limit {MAX_GAP_MS} ms)"
    )]
    InsufficientCoverage { gesture_id: String, gap_ms: i64 },
    #[error("filter cutoff {cutoff_hz} Hz must lie strictly between 0 and {nyquist_hz} Hz")]
    BadCutoff { cutoff_hz: f64, nyquist_hz: f64 },
    #[error("filter order must be at least 1")]
    BadFilterOrder,
    #[error("series too short for zero-phase padding ({len} samples, need > {padlen})")]
    SeriesTooShort { len: usize, padlen: usize },
    #[error("channel {channel} has zero variance across the training corpus")]
    ZeroVariance { channel: usize },
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("user {user_id} has only {count} windows; at least 3 are needed to split")]
    TooFewGestures { user_id: String, count: usize },
    #[error("gesture {gesture_id} of user {user_id} has no temporal order key")]
    MissingOrderKey { user_id: String, gesture_id: String },
    #[error("corpus record {index}: {message}")]
    BadCorpusRecord { index: usize, message: String },
}

// ── domain types ────────────────────────────────────────────────────────────

/// The two retained wrist sensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sensor {
    Accelerometer,
    Gyroscope,
}

/// One row of a raw per-user sensor file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub user_id: String,
    pub gesture_id: String,
    pub sensor: Sensor,
    pub t_ms: i64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// A processed 4 s window: 200 timesteps by 6 channels in canonical order
/// (acc x, acc y, acc z, gyr x, gyr y, gyr z).
#[derive(Debug, Clone, PartialEq)]
pub struct Gesture {
    pub user_id: String,
    pub gesture_id: String,
    /// Payment terminal 1..=7 for gesture windows, none for non-gestures.
    pub terminal: Option<u8>,
    pub is_gesture: bool,
    pub series: TimeSeries,
    /// Window anchor: the window ends at this timestamp. Doubles as the
    /// temporal order key for splitting.
    pub nfc_t_ms: Option<i64>,
}

/// Identity of a gesture within a corpus. Gesture ids are only unique per
/// user, so split membership is tracked by this composite key.
pub fn gesture_key(g: &Gesture) -> String {
    format!("{}/{}", g.user_id, g.gesture_id)
}

/// Train/validation/test membership by composite gesture key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn select<'a>(&self, corpus: &'a [Gesture], keys: &[String]) -> Vec<&'a Gesture> {
        let by_key: BTreeMap<String, &Gesture> =
            corpus.iter().map(|g| (gesture_key(g), g)).collect();
        keys.iter().filter_map(|k| by_key.get(k).copied()).collect()
    }
}

/// Channel-wise standardization parameters, fitted on training data only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; GESTURE_CHANNELS],
    pub std: [f64; GESTURE_CHANNELS],
}

/// Synthetic user: a logistic reach ramp plus two Gaussian bumps per channel,
/// all user-specific, with additive Gaussian sample noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimUserProfile {
    pub user_id: String,
    pub ramp_rate: f64,
    pub ramp_amplitudes: [f64; GESTURE_CHANNELS],
    pub bump_amplitudes: [[f64; 2]; GESTURE_CHANNELS],
    pub bump_centers_s: [[f64; 2]; GESTURE_CHANNELS],
    pub bump_widths_s: [[f64; 2]; GESTURE_CHANNELS],
    pub noise_sigma: f64,
}

impl SimUserProfile {
    /// Draws a random but well-separated profile for one simulated user.
    pub fn random(user_id: &str, rng: &mut impl Rng, noise_sigma: f64) -> Self {
        fn signed(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
            let mag = rng.gen_range(lo..hi);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        }
        let mut ramp_amplitudes = [0.0; GESTURE_CHANNELS];
        let mut bump_amplitudes = [[0.0; 2]; GESTURE_CHANNELS];
        let mut bump_centers_s = [[0.0; 2]; GESTURE_CHANNELS];
        let mut bump_widths_s = [[0.0; 2]; GESTURE_CHANNELS];
        for c in 0..GESTURE_CHANNELS {
            ramp_amplitudes[c] = signed(rng, 0.4, 1.5);
            for b in 0..2 {
                bump_amplitudes[c][b] = signed(rng, 0.5, 2.0);
                bump_centers_s[c][b] = rng.gen_range(0.6..3.4);
                bump_widths_s[c][b] = rng.gen_range(0.15..0.6);
            }
        }
        SimUserProfile {
            user_id: user_id.to_string(),
            ramp_rate: rng.gen_range(1.5..4.0),
            ramp_amplitudes,
            bump_amplitudes,
            bump_centers_s,
            bump_widths_s,
            noise_sigma,
        }
    }

    /// Noise-free channel value at time `t` seconds into the window.
    fn signal(&self, channel: usize, t: f64) -> f64 {
        let ramp = self.ramp_amplitudes[channel]
            / (1.0 + (-self.ramp_rate * (t - 2.0)).exp());
        let mut v = ramp;
        for b in 0..2 {
            let d = t - self.bump_centers_s[channel][b];
            let w = self.bump_widths_s[channel][b];
            v += self.bump_amplitudes[channel][b] * (-d * d / (2.0 * w * w)).exp();
        }
        v
    }
}

// ── raw file parsing ────────────────────────────────────────────────────────

/// Sensor tag spelling in the raw CSV files.
#[derive(Debug, Clone)]
pub struct CsvFormat {
    pub acc_tag: String,
    pub gyr_tag: String,
}

impl Default for CsvFormat {
    fn default() -> Self {
        CsvFormat {
            acc_tag: "acc".to_string(),
            gyr_tag: "gyr".to_string(),
        }
    }
}

/// Parses one raw sensor file with header `gesture_id,sensor,t_ms,x,y,z`,
/// preserving row order. `user_id` comes from the companion manifest.
pub fn parse_user_file(
    path: &Path,
    format: &CsvFormat,
    user_id: &str,
) -> Result<Vec<RawRecord>, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(BufReader::new(file));

    let mut records = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| DatasetError::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 6 {
            return Err(DatasetError::MalformedRow {
                line,
                message: format!("expected 6 columns, found {}", record.len()),
            });
        }
        let field = |i: usize| record.get(i).unwrap_or("");
        let sensor = match field(1) {
            s if s == format.acc_tag => Sensor::Accelerometer,
            s if s == format.gyr_tag => Sensor::Gyroscope,
            other => {
                return Err(DatasetError::UnknownSensor {
                    line,
                    tag: other.to_string(),
                })
            }
        };
        let parse_num = |i: usize, name: &str| -> Result<f64, DatasetError> {
            field(i).parse().map_err(|_| DatasetError::MalformedRow {
                line,
                message: format!("column {name}: cannot parse {:?}", field(i)),
            })
        };
        let t_ms: i64 = field(2).parse().map_err(|_| DatasetError::MalformedRow {
            line,
            message: format!("column t_ms: cannot parse {:?}", field(2)),
        })?;
        if t_ms < 0 {
            return Err(DatasetError::MalformedRow {
                line,
                message: format!("negative timestamp {t_ms}"),
            });
        }
        records.push(RawRecord {
            user_id: user_id.to_string(),
            gesture_id: field(0).to_string(),
            sensor,
            t_ms,
            x: parse_num(3, "x")?,
            y: parse_num(4, "y")?,
            z: parse_num(5, "z")?,
        });
    }
    Ok(records)
}

/// Companion manifest for one raw sensor file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserManifest {
    pub user_id: String,
    pub gestures: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub gesture_id: String,
    pub nfc_t_ms: i64,
    #[serde(default)]
    pub terminal: Option<u8>,
    pub is_gesture: bool,
}

pub fn load_manifest(path: &Path) -> Result<UserManifest, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let manifest: UserManifest =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| DatasetError::BadManifest {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    for entry in &manifest.gestures {
        if let Some(t) = entry.terminal {
            if !(1..=7).contains(&t) {
                return Err(DatasetError::BadManifest {
                    path: path.display().to_string(),
                    message: format!(
                        "gesture {}: terminal {t} outside 1..=7",
                        entry.gesture_id
                    ),
                });
            }
        }
    }
    Ok(manifest)
}

// ── alignment and windowing ─────────────────────────────────────────────────

/// Resamples both sensors of one gesture onto the shared 50 Hz grid ending at
/// the NFC timestamp, by linear interpolation between the nearest raw samples.
///
/// Grid points are `nfc_t_ms - 3980 + 20 k` for `k = 0..200`, so the final
/// timestep lands exactly on the anchor and the window spans the preceding
/// 4 s. Raw samples must bracket the whole grid, with no internal gap above
/// 200 ms.
pub fn align_and_window(
    records: &[RawRecord],
    entry: &ManifestEntry,
    user_id: &str,
) -> Result<Gesture, DatasetError> {
    let mut series = TimeSeries::zeros(GESTURE_LEN, GESTURE_CHANNELS);
    for (sensor, base_col) in [(Sensor::Accelerometer, 0), (Sensor::Gyroscope, 3)] {
        let mut samples: Vec<(i64, [f64; 3])> = records
            .iter()
            .filter(|r| r.sensor == sensor && r.gesture_id == entry.gesture_id)
            .map(|r| (r.t_ms, [r.x, r.y, r.z]))
            .collect();
        if samples.is_empty() {
            return Err(DatasetError::MissingSensor {
                gesture_id: entry.gesture_id.clone(),
                sensor,
            });
        }
        samples.sort_by_key(|(t, _)| *t);
        samples.dedup_by_key(|(t, _)| *t);

        let grid_start = entry.nfc_t_ms - (WINDOW_MS - STEP_MS);
        let grid_end = entry.nfc_t_ms;
        check_coverage(&samples, grid_start, grid_end, &entry.gesture_id)?;

        let mut cursor = 0usize;
        for k in 0..GESTURE_LEN {
            let t = grid_start + STEP_MS * k as i64;
            while cursor + 1 < samples.len() && samples[cursor + 1].0 <= t {
                cursor += 1;
            }
            let (t0, v0) = samples[cursor];
            let values = if t0 == t || cursor + 1 == samples.len() {
                v0
            } else {
                let (t1, v1) = samples[cursor + 1];
                let alpha = (t - t0) as f64 / (t1 - t0) as f64;
                [
                    v0[0] + alpha * (v1[0] - v0[0]),
                    v0[1] + alpha * (v1[1] - v0[1]),
                    v0[2] + alpha * (v1[2] - v0[2]),
                ]
            };
            for (axis, &v) in values.iter().enumerate() {
                series.set(k, base_col + axis, v);
            }
        }
    }
    Ok(Gesture {
        user_id: user_id.to_string(),
        gesture_id: entry.gesture_id.clone(),
        terminal: entry.terminal,
        is_gesture: entry.is_gesture,
        series,
        nfc_t_ms: Some(entry.nfc_t_ms),
    })
}

fn check_coverage(
    samples: &[(i64, [f64; 3])],
    grid_start: i64,
    grid_end: i64,
    gesture_id: &str,
) -> Result<(), DatasetError> {
    let first = samples[0].0;
    let last = samples[samples.len() - 1].0;
    if first > grid_start || last < grid_end {
        let gap = (first - grid_start).max(grid_end - last);
        return Err(DatasetError::InsufficientCoverage {
            gesture_id: gesture_id.to_string(),
            gap_ms: gap,
        });
    }
    for pair in samples.windows(2) {
        let (t0, t1) = (pair[0].0, pair[1].0);
        // Only gaps overlapping the window matter.
        if t1 > grid_start && t0 < grid_end && t1 - t0 > MAX_GAP_MS {
            return Err(DatasetError::InsufficientCoverage {
                gesture_id: gesture_id.to_string(),
                gap_ms: t1 - t0,
            });
        }
    }
    Ok(())
}

/// Parses one user's CSV + manifest pair into aligned gesture windows.
pub fn ingest_user(
    csv_path: &Path,
    manifest_path: &Path,
    format: &CsvFormat,
) -> Result<Vec<Gesture>, DatasetError> {
    let manifest = load_manifest(manifest_path)?;
    let records = parse_user_file(csv_path, format, &manifest.user_id)?;
    manifest
        .gestures
        .iter()
        .map(|entry| align_and_window(&records, entry, &manifest.user_id))
        .collect()
}

// ── zero-phase Butterworth low-pass filter ──────────────────────────────────

#[derive(Clone, Copy)]
struct Complex {
    re: f64,
    im: f64,
}

impl Complex {
    fn new(re: f64, im: f64) -> Self {
        Complex { re, im }
    }
    fn mul(self, o: Complex) -> Complex {
        Complex::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }
    fn sub(self, o: Complex) -> Complex {
        Complex::new(self.re - o.re, self.im - o.im)
    }
    fn div(self, o: Complex) -> Complex {
        let d = o.re * o.re + o.im * o.im;
        Complex::new(
            (self.re * o.re + self.im * o.im) / d,
            (self.im * o.re - self.re * o.im) / d,
        )
    }
    fn scale(self, s: f64) -> Complex {
        Complex::new(self.re * s, self.im * s)
    }
}

/// Expands `prod (z - r_k)` into descending-power coefficients.
fn poly_from_roots(roots: &[Complex]) -> Vec<Complex> {
    let mut coeffs = vec![Complex::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex::new(0.0, 0.0); coeffs.len() + 1];
        for (i, &c) in coeffs.iter().enumerate() {
            next[i] = next[i].sub(Complex::new(0.0, 0.0).sub(c)); // next[i] += c
            next[i + 1] = next[i + 1].sub(c.mul(r)); // next[i+1] -= c r
        }
        coeffs = next;
    }
    coeffs
}

/// Digital Butterworth low-pass coefficients `(b, a)` via the bilinear
/// transform with frequency prewarping; `a[0] = 1`, DC gain exactly 1.
fn butter_lowpass(order: usize, cutoff_hz: f64, fs: f64) -> (Vec<f64>, Vec<f64>) {
    // Analog prototype poles on the left unit semicircle, scaled to the
    // prewarped cutoff, then mapped by z = (2 fs + s) / (2 fs - s).
    let warped = 2.0 * fs * (std::f64::consts::PI * cutoff_hz / fs).tan();
    let two_fs = Complex::new(2.0 * fs, 0.0);
    let z_poles: Vec<Complex> = (0..order)
        .map(|k| {
            let theta =
                std::f64::consts::PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            let s = Complex::new(theta.cos(), theta.sin()).scale(warped);
            two_fs.sub(s.scale(-1.0)).div(two_fs.sub(s))
        })
        .collect();

    let a_complex = poly_from_roots(&z_poles);
    let a: Vec<f64> = a_complex.iter().map(|c| c.re).collect();
    debug_assert!(a_complex.iter().all(|c| c.im.abs() < 1e-9));

    // Zeros all at z = -1: binomial coefficients, scaled for unit DC gain.
    let mut b = vec![0.0; order + 1];
    b[0] = 1.0;
    for i in 1..=order {
        for j in (1..=i).rev() {
            b[j] += b[j - 1];
        }
    }
    let gain = a.iter().sum::<f64>() / b.iter().sum::<f64>();
    for v in &mut b {
        *v *= gain;
    }
    (b, a)
}

/// Direct form II transposed single pass.
fn lfilter(b: &[f64], a: &[f64], x: &[f64], zi: &[f64]) -> Vec<f64> {
    let n = a.len() - 1;
    let mut z = zi.to_vec();
    let mut y = Vec::with_capacity(x.len());
    for &xv in x {
        let yv = b[0] * xv + z[0];
        for i in 0..n - 1 {
            z[i] = b[i + 1] * xv + z[i + 1] - a[i + 1] * yv;
        }
        z[n - 1] = b[n] * xv - a[n] * yv;
        y.push(yv);
    }
    y
}

/// Steady-state filter state for a unit constant input, so constants pass
/// through a single pass unchanged from the first sample.
fn lfilter_zi(b: &[f64], a: &[f64]) -> Vec<f64> {
    let n = a.len() - 1;
    // Solve (I - A^T) zi = B with A the companion matrix of `a` and
    // B_i = b[i+1] - a[i+1] b[0].
    let mut m = vec![vec![0.0; n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let companion_t = if j == 0 {
                -a[i + 1]
            } else if j == i + 1 {
                1.0
            } else {
                0.0
            };
            *cell = if i == j { 1.0 } else { 0.0 } - companion_t;
        }
    }
    let rhs: Vec<f64> = (0..n).map(|i| b[i + 1] - a[i + 1] * b[0]).collect();
    solve_dense(m, rhs)
}

/// Gaussian elimination with partial pivoting for the tiny zi systems.
fn solve_dense(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Vec<f64> {
    let n = rhs.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
            .unwrap();
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut v = rhs[row];
        for k in row + 1..n {
            v -= m[row][k] * x[k];
        }
        x[row] = v / m[row][row];
    }
    x
}

/// Forward-backward filtering with odd-reflection padding, matching the
/// standard zero-phase recipe: pad by `3 (order + 1)` samples each side, seed
/// each pass with the steady state scaled to the first sample.
fn filtfilt(b: &[f64], a: &[f64], x: &[f64]) -> Result<Vec<f64>, DatasetError> {
    let padlen = 3 * a.len().max(b.len());
    if x.len() <= padlen {
        return Err(DatasetError::SeriesTooShort {
            len: x.len(),
            padlen,
        });
    }
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * padlen);
    for i in (1..=padlen).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in 1..=padlen {
        ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }

    let zi = lfilter_zi(b, a);
    let seed = |v: f64| -> Vec<f64> { zi.iter().map(|z| z * v).collect() };

    let forward = lfilter(b, a, &ext, &seed(ext[0]));
    let mut rev: Vec<f64> = forward.into_iter().rev().collect();
    rev = lfilter(b, a, &rev, &seed(rev[0]));
    rev.reverse();
    Ok(rev[padlen..padlen + n].to_vec())
}

/// Zero-phase Butterworth low-pass over one scalar series sampled at `fs`.
pub fn lowpass_series(
    x: &[f64],
    cutoff_hz: f64,
    order: usize,
    fs: f64,
) -> Result<Vec<f64>, DatasetError> {
    let nyquist = fs / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(DatasetError::BadCutoff {
            cutoff_hz,
            nyquist_hz: nyquist,
        });
    }
    if order == 0 {
        return Err(DatasetError::BadFilterOrder);
    }
    let (b, a) = butter_lowpass(order, cutoff_hz, fs);
    filtfilt(&b, &a, x)
}

/// Applies the zero-phase low-pass to every channel of a gesture.
pub fn lowpass_filter(
    g: &Gesture,
    cutoff_hz: f64,
    order: usize,
) -> Result<Gesture, DatasetError> {
    let mut series = g.series.clone();
    for c in 0..series.cols() {
        let filtered = lowpass_series(&g.series.column(c), cutoff_hz, order, SAMPLE_RATE_HZ)?;
        series.set_column(c, &filtered);
    }
    Ok(Gesture {
        series,
        ..g.clone()
    })
}

// ── normalization ───────────────────────────────────────────────────────────

/// Channel-wise mean and standard deviation pooled over every sample of every
/// training gesture (population convention).
pub fn fit_norm_stats(train: &[Gesture]) -> Result<NormStats, DatasetError> {
    if train.is_empty() {
        return Err(DatasetError::EmptyCorpus);
    }
    let mut mean = [0.0; GESTURE_CHANNELS];
    let mut std = [0.0; GESTURE_CHANNELS];
    let count = (train.len() * GESTURE_LEN) as f64;
    for c in 0..GESTURE_CHANNELS {
        let mut sum = 0.0;
        for g in train {
            for r in 0..g.series.rows() {
                sum += g.series.get(r, c);
            }
        }
        let mu = sum / count;
        let mut ss = 0.0;
        for g in train {
            for r in 0..g.series.rows() {
                let d = g.series.get(r, c) - mu;
                ss += d * d;
            }
        }
        let var = ss / count;
        if var == 0.0 {
            return Err(DatasetError::ZeroVariance { channel: c });
        }
        mean[c] = mu;
        std[c] = var.sqrt();
    }
    Ok(NormStats { mean, std })
}

pub fn apply_norm(g: &Gesture, stats: &NormStats) -> Gesture {
    let series = TimeSeries::from_fn(g.series.rows(), g.series.cols(), |r, c| {
        (g.series.get(r, c) - stats.mean[c]) / stats.std[c]
    });
    Gesture {
        series,
        ..g.clone()
    }
}

pub fn invert_norm(g: &Gesture, stats: &NormStats) -> Gesture {
    let series = TimeSeries::from_fn(g.series.rows(), g.series.cols(), |r, c| {
        g.series.get(r, c) * stats.std[c] + stats.mean[c]
    });
    Gesture {
        series,
        ..g.clone()
    }
}

// ── temporal splitting ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Fraction of each user's windows (earliest first) kept for train+val.
    pub train_fraction: f64,
    /// Fraction of train+val moved to validation, stratified by class.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: 2.0 / 3.0,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Splits per user: the earliest `train_fraction` of windows become
/// train+val, the rest test. Validation is drawn randomly from train+val,
/// stratified by the gesture/non-gesture label: per class `floor(f n)`
/// samples, at least 1 when the class has 2 or more members.
pub fn temporal_split(corpus: &[Gesture], config: &SplitConfig) -> Result<SplitSpec, DatasetError> {
    let mut by_user: BTreeMap<&str, Vec<&Gesture>> = BTreeMap::new();
    for g in corpus {
        by_user.entry(&g.user_id).or_default().push(g);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut spec = SplitSpec {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        seed: config.seed,
    };

    for (user, mut gestures) in by_user {
        if gestures.len() < 3 {
            return Err(DatasetError::TooFewGestures {
                user_id: user.to_string(),
                count: gestures.len(),
            });
        }
        for g in &gestures {
            if g.nfc_t_ms.is_none() {
                return Err(DatasetError::MissingOrderKey {
                    user_id: user.to_string(),
                    gesture_id: g.gesture_id.clone(),
                });
            }
        }
        gestures.sort_by_key(|g| (g.nfc_t_ms.unwrap(), g.gesture_id.clone()));

        let n = gestures.len();
        let n_tv = ((config.train_fraction * n as f64).round() as usize).clamp(2, n - 1);
        let (tv, test) = gestures.split_at(n_tv);
        spec.test.extend(test.iter().map(|g| gesture_key(g)));

        for class in [true, false] {
            let members: Vec<&&Gesture> =
                tv.iter().filter(|g| g.is_gesture == class).collect();
            if members.is_empty() {
                continue;
            }
            let mut n_val = (config.val_fraction * members.len() as f64).floor() as usize;
            if n_val == 0 && members.len() >= 2 {
                n_val = 1;
            }
            let mut order: Vec<usize> = (0..members.len()).collect();
            // Fisher-Yates with the shared stream keeps the whole spec
            // reproducible from (corpus, seed) alone.
            for i in (1..order.len()).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
            for (rank, &idx) in order.iter().enumerate() {
                let key = gesture_key(members[idx]);
                if rank < n_val {
                    spec.validation.push(key);
                } else {
                    spec.train.push(key);
                }
            }
        }
    }
    Ok(spec)
}

// ── simulation ──────────────────────────────────────────────────────────────

/// Generates a deterministic multi-user corpus: gesture windows from each
/// profile plus non-gesture windows of band-limited random oscillation, with
/// strictly increasing per-user anchors and terminals cycling 1..=7.
pub fn simulate_corpus(
    profiles: &[SimUserProfile],
    n_gestures_per_user: usize,
    n_nongestures_per_user: usize,
    seed: u64,
) -> Vec<Gesture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Vec::new();

    for profile in profiles {
        // Interleave classes along the timeline so each temporal split region
        // contains both labels.
        let mut slots: Vec<(f64, bool, usize)> = (0..n_gestures_per_user)
            .map(|i| ((i as f64 + 0.5) / n_gestures_per_user as f64, true, i))
            .collect();
        slots.extend((0..n_nongestures_per_user).map(|i| {
            (
                (i as f64 + 0.5) / n_nongestures_per_user.max(1) as f64,
                false,
                i,
            )
        }));
        slots.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

        let noise = Normal::new(0.0, profile.noise_sigma.max(0.0)).expect("finite sigma");
        for (slot, (_, is_gesture, idx)) in slots.into_iter().enumerate() {
            let nfc_t_ms = 100_000 + 60_000 * slot as i64;
            let series = if is_gesture {
                TimeSeries::from_fn(GESTURE_LEN, GESTURE_CHANNELS, |r, c| {
                    let t = r as f64 / SAMPLE_RATE_HZ;
                    profile.signal(c, t) + noise.sample(&mut rng)
                })
            } else {
                nongesture_series(&mut rng, &noise)
            };
            corpus.push(Gesture {
                user_id: profile.user_id.clone(),
                gesture_id: if is_gesture {
                    format!("g{idx:04}")
                } else {
                    format!("n{idx:04}")
                },
                terminal: is_gesture.then(|| (idx % 7 + 1) as u8),
                is_gesture,
                series,
                nfc_t_ms: Some(nfc_t_ms),
            });
        }
    }
    corpus
}

/// Sum of a few random sinusoids per channel, band-limited to 0.3..8 Hz.
fn nongesture_series(rng: &mut ChaCha8Rng, noise: &Normal<f64>) -> TimeSeries {
    let mut components = [[(0.0, 0.0, 0.0); 4]; GESTURE_CHANNELS];
    for channel in &mut components {
        for comp in channel.iter_mut() {
            *comp = (
                rng.gen_range(0.2..1.0),
                rng.gen_range(0.3..8.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
            );
        }
    }
    TimeSeries::from_fn(GESTURE_LEN, GESTURE_CHANNELS, |r, c| {
        let t = r as f64 / SAMPLE_RATE_HZ;
        let mut v = 0.0;
        for &(a, f, phi) in &components[c] {
            v += a * (std::f64::consts::TAU * f * t + phi).sin();
        }
        v + noise.sample(rng)
    })
}

// ── processed corpus I/O ────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct GestureRecord {
    user_id: String,
    gesture_id: String,
    terminal: Option<u8>,
    is_gesture: bool,
    #[serde(default)]
    nfc_t_ms: Option<i64>,
    series: Vec<Vec<f64>>,
}

/// Writes one JSON record per line with the series as 200 rows of 6 reals.
pub fn write_corpus(path: &Path, corpus: &[Gesture]) -> Result<(), DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for g in corpus {
        let record = GestureRecord {
            user_id: g.user_id.clone(),
            gesture_id: g.gesture_id.clone(),
            terminal: g.terminal,
            is_gesture: g.is_gesture,
            nfc_t_ms: g.nfc_t_ms,
            series: (0..g.series.rows()).map(|r| g.series.row(r).to_vec()).collect(),
        };
        serde_json::to_writer(&mut out, &record).map_err(|e| DatasetError::BadCorpusRecord {
            index: 0,
            message: e.to_string(),
        })?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<Vec<Gesture>, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut corpus = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: GestureRecord =
            serde_json::from_str(&line).map_err(|e| DatasetError::BadCorpusRecord {
                index,
                message: e.to_string(),
            })?;
        if record.series.len() != GESTURE_LEN
            || record.series.iter().any(|row| row.len() != GESTURE_CHANNELS)
        {
            return Err(DatasetError::BadCorpusRecord {
                index,
                message: format!(
                    "series must be {GESTURE_LEN} rows of {GESTURE_CHANNELS} values"
                ),
            });
        }
        let series = TimeSeries::from_fn(GESTURE_LEN, GESTURE_CHANNELS, |r, c| {
            record.series[r][c]
        });
        if !series.is_finite() {
            return Err(DatasetError::BadCorpusRecord {
                index,
                message: "non-finite sample".to_string(),
            });
        }
        corpus.push(Gesture {
            user_id: record.user_id,
            gesture_id: record.gesture_id,
            terminal: record.terminal,
            is_gesture: record.is_gesture,
            series,
            nfc_t_ms: record.nfc_t_ms,
        });
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn entry(gesture_id: &str, nfc_t_ms: i64) -> ManifestEntry {
        ManifestEntry {
            gesture_id: gesture_id.to_string(),
            nfc_t_ms,
            terminal: Some(1),
            is_gesture: true,
        }
    }

    /// Raw records for both sensors on a regular grid, valued by `f(t_ms)`.
    fn grid_records(
        gesture_id: &str,
        start: i64,
        end: i64,
        step: i64,
        f: impl Fn(i64) -> f64,
    ) -> Vec<RawRecord> {
        let mut out = Vec::new();
        let mut t = start;
        while t <= end {
            for sensor in [Sensor::Accelerometer, Sensor::Gyroscope] {
                out.push(RawRecord {
                    user_id: "u".into(),
                    gesture_id: gesture_id.into(),
                    sensor,
                    t_ms: t,
                    x: f(t),
                    y: f(t) + 1.0,
                    z: f(t) - 1.0,
                });
            }
            t += step;
        }
        out
    }

    #[test]
    fn parse_minimal_file() {
        let f = write_temp("gesture_id,sensor,t_ms,x,y,z\ng1,acc,100,0.1,0.2,0.3\n");
        let records = parse_user_file(f.path(), &CsvFormat::default(), "u7").unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].user_id, "u7");
        assert_eq!(records[0].sensor, Sensor::Accelerometer);
        assert_eq!(records[0].t_ms, 100);
    }

    #[test]
    fn parse_reports_line_of_short_row() {
        let f = write_temp("gesture_id,sensor,t_ms,x,y,z\ng1,acc,100,0.1,0.2,0.3\ng1,gyr,101,0.1,0.2\n");
        let err = parse_user_file(f.path(), &CsvFormat::default(), "u").unwrap_err();
        match err {
            DatasetError::MalformedRow { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_unknown_sensor() {
        let f = write_temp("gesture_id,sensor,t_ms,x,y,z\ng1,magnetometer,100,0,0,0\n");
        let err = parse_user_file(f.path(), &CsvFormat::default(), "u").unwrap_err();
        assert!(matches!(err, DatasetError::UnknownSensor { line: 2, .. }));
    }

    #[test]
    fn parse_counts_rows_and_gestures() {
        let mut content = String::from("gesture_id,sensor,t_ms,x,y,z\n");
        for i in 0..200 {
            content.push_str(&format!("g1,acc,{},0,0,0\n", i * 10));
            content.push_str(&format!("g2,gyr,{},1,1,1\n", i * 10));
        }
        let f = write_temp(&content);
        let records = parse_user_file(f.path(), &CsvFormat::default(), "u").unwrap();
        assert_eq!(records.len(), 400);
        let distinct: std::collections::BTreeSet<_> =
            records.iter().map(|r| r.gesture_id.clone()).collect();
        assert_eq!(distinct.len(), 2);
    }

    #[test]
    fn align_constant_records_gives_constant_series() {
        let records = grid_records("g1", 0, 6000, 20, |_| 2.5);
        let g = align_and_window(&records, &entry("g1", 5000), "u").unwrap();
        assert_eq!(g.series.rows(), GESTURE_LEN);
        for r in 0..GESTURE_LEN {
            assert_eq!(g.series.get(r, 0), 2.5);
            assert_eq!(g.series.get(r, 1), 3.5);
            assert_eq!(g.series.get(r, 5), 1.5);
        }
    }

    #[test]
    fn align_on_grid_is_identity() {
        let records = grid_records("g1", 0, 6000, 20, |t| (t as f64 * 0.37).sin());
        let g = align_and_window(&records, &entry("g1", 5000), "u").unwrap();
        // Grid points coincide with raw sample times 1020, 1040, ...
        for k in 0..GESTURE_LEN {
            let t = 5000 - 3980 + 20 * k as i64;
            assert!((g.series.get(k, 0) - (t as f64 * 0.37).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn align_interpolates_offgrid_ramp_exactly() {
        // 47 Hz sampling (about 21 ms spacing) of a line: interpolation
        // between points on a line stays on the line.
        let line = |t: i64| 0.003 * t as f64 - 5.0;
        let mut records = Vec::new();
        let mut i = 0;
        loop {
            let t = 950 + (i as f64 * 1000.0 / 47.0).round() as i64;
            if t > 6100 {
                break;
            }
            for sensor in [Sensor::Accelerometer, Sensor::Gyroscope] {
                records.push(RawRecord {
                    user_id: "u".into(),
                    gesture_id: "g1".into(),
                    sensor,
                    t_ms: t,
                    x: line(t),
                    y: 0.0,
                    z: 0.0,
                });
            }
            i += 1;
        }
        let g = align_and_window(&records, &entry("g1", 5000), "u").unwrap();
        for k in 0..GESTURE_LEN {
            let t = 5000 - 3980 + 20 * k as i64;
            assert!(
                (g.series.get(k, 0) - line(t)).abs() < 1e-9,
                "k={k}: {} vs {}",
                g.series.get(k, 0),
                line(t)
            );
        }
        assert_eq!(g.nfc_t_ms, Some(5000));
    }

    #[test]
    fn align_rejects_coverage_gap() {
        let mut records = grid_records("g1", 0, 6000, 20, |_| 1.0);
        // Carve a hole in the middle of the window: samples jump 2980 -> 3300.
        records.retain(|r| !(3000..3300).contains(&r.t_ms));
        let err = align_and_window(&records, &entry("g1", 5000), "u").unwrap_err();
        assert!(matches!(
            err,
            DatasetError::InsufficientCoverage { gap_ms: 320, .. }
        ));
    }

    #[test]
    fn align_rejects_missing_sensor() {
        let mut records = grid_records("g1", 0, 6000, 20, |_| 1.0);
        records.retain(|r| r.sensor == Sensor::Accelerometer);
        let err = align_and_window(&records, &entry("g1", 5000), "u").unwrap_err();
        assert!(matches!(err, DatasetError::MissingSensor { .. }));
    }

    fn sinusoid(freq_hz: f64) -> Vec<f64> {
        (0..GESTURE_LEN)
            .map(|k| (std::f64::consts::TAU * freq_hz * k as f64 / SAMPLE_RATE_HZ).sin())
            .collect()
    }

    fn interior_amplitude(x: &[f64]) -> f64 {
        x[50..150].iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn filter_passes_constants() {
        let y = lowpass_series(&vec![3.25; GESTURE_LEN], 10.0, 2, SAMPLE_RATE_HZ).unwrap();
        for v in y {
            assert!((v - 3.25).abs() < 1e-9);
        }
    }

    #[test]
    fn filter_attenuates_20hz_and_passes_1hz() {
        let hi = lowpass_series(&sinusoid(20.0), 10.0, 2, SAMPLE_RATE_HZ).unwrap();
        assert!(
            interior_amplitude(&hi) < 0.3,
            "20 Hz amplitude {}",
            interior_amplitude(&hi)
        );

        let lo_in = sinusoid(1.0);
        let lo = lowpass_series(&lo_in, 10.0, 2, SAMPLE_RATE_HZ).unwrap();
        let ratio = interior_amplitude(&lo) / interior_amplitude(&lo_in);
        assert!(
            (ratio - 1.0).abs() < 0.05,
            "1 Hz amplitude ratio {ratio}"
        );
    }

    #[test]
    fn filter_rejects_bad_cutoff() {
        assert!(matches!(
            lowpass_series(&vec![0.0; 200], 25.0, 2, SAMPLE_RATE_HZ),
            Err(DatasetError::BadCutoff { .. })
        ));
        assert!(matches!(
            lowpass_series(&vec![0.0; 200], 0.0, 2, SAMPLE_RATE_HZ),
            Err(DatasetError::BadCutoff { .. })
        ));
    }

    #[test]
    fn filter_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x: Vec<f64> = (0..GESTURE_LEN).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..GESTURE_LEN).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = (1.7, -0.4);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(xv, yv)| a * xv + b * yv).collect();

        let fx = lowpass_series(&x, 10.0, 2, SAMPLE_RATE_HZ).unwrap();
        let fy = lowpass_series(&y, 10.0, 2, SAMPLE_RATE_HZ).unwrap();
        let fc = lowpass_series(&combo, 10.0, 2, SAMPLE_RATE_HZ).unwrap();
        for i in 0..GESTURE_LEN {
            assert!((fc[i] - (a * fx[i] + b * fy[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn filter_higher_order_works() {
        let y = lowpass_series(&sinusoid(20.0), 10.0, 4, SAMPLE_RATE_HZ).unwrap();
        assert!(interior_amplitude(&y) < 0.05);
        let c = lowpass_series(&vec![1.5; 200], 10.0, 4, SAMPLE_RATE_HZ).unwrap();
        for v in c {
            assert!((v - 1.5).abs() < 1e-9);
        }
    }

    fn gesture_from_series(user: &str, id: &str, series: TimeSeries, t: i64) -> Gesture {
        Gesture {
            user_id: user.into(),
            gesture_id: id.into(),
            terminal: Some(1),
            is_gesture: true,
            series,
            nfc_t_ms: Some(t),
        }
    }

    #[test]
    fn norm_rejects_zero_variance() {
        let mut series = TimeSeries::zeros(GESTURE_LEN, GESTURE_CHANNELS);
        for c in 1..GESTURE_CHANNELS {
            series.set_column(c, &(0..GESTURE_LEN).map(|i| i as f64).collect::<Vec<_>>());
        }
        series.set_column(0, &vec![5.0; GESTURE_LEN]);
        let g = gesture_from_series("u", "g1", series, 0);
        assert!(matches!(
            fit_norm_stats(&[g]),
            Err(DatasetError::ZeroVariance { channel: 0 })
        ));
    }

    #[test]
    fn norm_pooled_two_level_example() {
        let mk = |v: f64, id: &str, t: i64| {
            let mut series = TimeSeries::from_fn(GESTURE_LEN, GESTURE_CHANNELS, |r, c| {
                (r + c) as f64 * 0.01
            });
            series.set_column(0, &vec![v; GESTURE_LEN]);
            gesture_from_series("u", id, series, t)
        };
        let corpus = vec![mk(0.0, "g1", 0), mk(2.0, "g2", 1)];
        let stats = fit_norm_stats(&corpus).unwrap();
        assert!((stats.mean[0] - 1.0).abs() < 1e-12);
        assert!((stats.std[0] - 1.0).abs() < 1e-12);

        let normed: Vec<Gesture> = corpus.iter().map(|g| apply_norm(g, &stats)).collect();
        assert!((normed[0].series.get(0, 0) + 1.0).abs() < 1e-12);
        assert!((normed[1].series.get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn norm_refit_after_apply_is_standard() {
        let profiles = vec![SimUserProfile::random(
            "u1",
            &mut ChaCha8Rng::seed_from_u64(1),
            0.05,
        )];
        let corpus = simulate_corpus(&profiles, 8, 4, 9);
        let stats = fit_norm_stats(&corpus).unwrap();
        let normed: Vec<Gesture> = corpus.iter().map(|g| apply_norm(g, &stats)).collect();
        let refit = fit_norm_stats(&normed).unwrap();
        for c in 0..GESTURE_CHANNELS {
            assert!(refit.mean[c].abs() < 1e-6);
            assert!((refit.std[c] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn norm_round_trips() {
        let profiles = vec![SimUserProfile::random(
            "u1",
            &mut ChaCha8Rng::seed_from_u64(2),
            0.05,
        )];
        let corpus = simulate_corpus(&profiles, 5, 2, 10);
        let stats = fit_norm_stats(&corpus).unwrap();
        for g in &corpus {
            let back = invert_norm(&apply_norm(g, &stats), &stats);
            for (a, b) in back.series.as_slice().iter().zip(g.series.as_slice()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    fn tiny_corpus(n_pos: usize, n_neg: usize) -> Vec<Gesture> {
        let mut out = Vec::new();
        for i in 0..n_pos.max(n_neg) {
            if i < n_pos {
                let series = TimeSeries::from_fn(GESTURE_LEN, GESTURE_CHANNELS, |r, _| {
                    (r + i) as f64 * 0.01
                });
                let mut g = gesture_from_series("u1", &format!("g{i}"), series, (2 * i) as i64);
                g.is_gesture = true;
                out.push(g);
            }
            if i < n_neg {
                let series = TimeSeries::from_fn(GESTURE_LEN, GESTURE_CHANNELS, |r, _| {
                    (r * i) as f64 * 0.001
                });
                let mut g =
                    gesture_from_series("u1", &format!("n{i}"), series, (2 * i + 1) as i64);
                g.is_gesture = false;
                g.terminal = None;
                out.push(g);
            }
        }
        out
    }

    #[test]
    fn split_nine_windows_into_six_and_three() {
        let corpus = tiny_corpus(5, 4);
        let spec = temporal_split(&corpus, &SplitConfig::default()).unwrap();
        assert_eq!(spec.train.len() + spec.validation.len(), 6);
        assert_eq!(spec.test.len(), 3);
        // Stratified validation: floor(0.2 * n_class) with minimum 1 per
        // class of 2 or more; the first 6 windows hold 3 of each class.
        assert_eq!(spec.validation.len(), 2);

        let all: Vec<&String> = spec
            .train
            .iter()
            .chain(&spec.validation)
            .chain(&spec.test)
            .collect();
        let distinct: std::collections::BTreeSet<_> = all.iter().collect();
        assert_eq!(distinct.len(), corpus.len());
    }

    #[test]
    fn split_is_deterministic_and_temporal() {
        let profiles: Vec<SimUserProfile> = (0..3)
            .map(|i| {
                SimUserProfile::random(
                    &format!("u{i}"),
                    &mut ChaCha8Rng::seed_from_u64(30 + i),
                    0.05,
                )
            })
            .collect();
        let corpus = simulate_corpus(&profiles, 9, 6, 11);
        let config = SplitConfig {
            seed: 42,
            ..SplitConfig::default()
        };
        let a = temporal_split(&corpus, &config).unwrap();
        let b = temporal_split(&corpus, &config).unwrap();
        assert_eq!(a, b);

        let anchor = |key: &String| {
            corpus
                .iter()
                .find(|g| &gesture_key(g) == key)
                .and_then(|g| g.nfc_t_ms)
                .unwrap()
        };
        let user_of = |key: &String| key.split('/').next().unwrap().to_string();
        for tv_key in a.train.iter().chain(&a.validation) {
            for test_key in &a.test {
                if user_of(tv_key) == user_of(test_key) {
                    assert!(anchor(tv_key) < anchor(test_key));
                }
            }
        }
    }

    #[test]
    fn split_rejects_tiny_users() {
        let corpus = tiny_corpus(2, 0);
        let err = temporal_split(&corpus, &SplitConfig::default()).unwrap_err();
        assert!(matches!(err, DatasetError::TooFewGestures { count: 2, .. }));
    }

    #[test]
    fn simulator_sigma_zero_repeats_exactly() {
        let profile = SimUserProfile::random("u1", &mut ChaCha8Rng::seed_from_u64(5), 0.0);
        let corpus = simulate_corpus(&[profile], 3, 0, 77);
        assert_eq!(corpus[0].series, corpus[1].series);
        assert_eq!(corpus[1].series, corpus[2].series);
    }

    #[test]
    fn simulator_is_deterministic() {
        let mk = || {
            let profiles: Vec<SimUserProfile> = (0..2)
                .map(|i| {
                    SimUserProfile::random(
                        &format!("u{i}"),
                        &mut ChaCha8Rng::seed_from_u64(50 + i),
                        0.05,
                    )
                })
                .collect();
            simulate_corpus(&profiles, 4, 4, 123)
        };
        let (a, b) = (mk(), mk());
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.series.as_slice(), y.series.as_slice());
            assert_eq!(gesture_key(x), gesture_key(y));
        }
    }

    #[test]
    fn simulator_profiles_are_separable_by_nearest_centroid() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let profiles = vec![
            SimUserProfile::random("u1", &mut rng, 0.05),
            SimUserProfile::random("u2", &mut rng, 0.05),
        ];
        let corpus = simulate_corpus(&profiles, 20, 0, 31);
        let mut train: Vec<&Gesture> = Vec::new();
        let mut test: Vec<&Gesture> = Vec::new();
        for (i, g) in corpus.iter().enumerate() {
            if i % 2 == 0 {
                train.push(g);
            } else {
                test.push(g);
            }
        }

        let centroid = |user: &str| -> Vec<f64> {
            let members: Vec<&&Gesture> =
                train.iter().filter(|g| g.user_id == user).collect();
            let mut acc = vec![0.0; GESTURE_LEN * GESTURE_CHANNELS];
            for g in &members {
                for (a, v) in acc.iter_mut().zip(g.series.as_slice()) {
                    *a += v;
                }
            }
            acc.iter().map(|v| v / members.len() as f64).collect()
        };
        let c1 = centroid("u1");
        let c2 = centroid("u2");
        let dist = |g: &Gesture, c: &[f64]| -> f64 {
            g.series
                .as_slice()
                .iter()
                .zip(c)
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        };
        let correct = test
            .iter()
            .filter(|g| {
                let predicted = if dist(g, &c1) < dist(g, &c2) { "u1" } else { "u2" };
                predicted == g.user_id
            })
            .count();
        let accuracy = correct as f64 / test.len() as f64;
        assert!(accuracy > 0.95, "accuracy {accuracy}");
    }

    #[test]
    fn corpus_roundtrip_preserves_everything() {
        let profiles = vec![SimUserProfile::random(
            "u1",
            &mut ChaCha8Rng::seed_from_u64(8),
            0.05,
        )];
        let corpus = simulate_corpus(&profiles, 3, 2, 17);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        write_corpus(&path, &corpus).unwrap();
        let back = read_corpus(&path).unwrap();
        assert_eq!(corpus.len(), back.len());
        for (a, b) in corpus.iter().zip(&back) {
            assert_eq!(gesture_key(a), gesture_key(b));
            assert_eq!(a.terminal, b.terminal);
            assert_eq!(a.is_gesture, b.is_gesture);
            assert_eq!(a.nfc_t_ms, b.nfc_t_ms);
            assert_eq!(a.series.as_slice(), b.series.as_slice());
        }
    }

    #[test]
    fn ingest_user_end_to_end() {
        let mut csv = String::from("gesture_id,sensor,t_ms,x,y,z\n");
        for t in (0..=6000).step_by(20) {
            csv.push_str(&format!("g1,acc,{t},0.5,0.5,0.5\n"));
            csv.push_str(&format!("g1,gyr,{t},0.1,0.1,0.1\n"));
        }
        let csv_file = write_temp(&csv);
        let manifest_file = write_temp(
            r#"{"user_id":"u9","gestures":[{"gesture_id":"g1","nfc_t_ms":5000,"terminal":3,"is_gesture":true}]}"#,
        );
        let gestures =
            ingest_user(csv_file.path(), manifest_file.path(), &CsvFormat::default()).unwrap();
        assert_eq!(gestures.len(), 1);
        assert_eq!(gestures[0].user_id, "u9");
        assert_eq!(gestures[0].terminal, Some(3));
        assert_eq!(gestures[0].series.get(0, 0), 0.5);
        assert_eq!(gestures[0].series.get(199, 3), 0.1);
    }

    #[test]
    fn manifest_rejects_bad_terminal() {
        let f = write_temp(
            r#"{"user_id":"u","gestures":[{"gesture_id":"g1","nfc_t_ms":5000,"terminal":9,"is_gesture":true}]}"#,
        );
        assert!(matches!(
            load_manifest(f.path()),
            Err(DatasetError::BadManifest { .. })
        ));
    }
}
