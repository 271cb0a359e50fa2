//! Statistical summaries of gesture windows.
//!
//! Feeds two consumers: the tree classifiers (feature vectors as inputs) and
//! the feature-matching reconstruction loss (which also needs gradients of
//! every statistic with respect to the raw samples).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::TimeSeries;

/// Raw channels plus accelerometer-norm and gyroscope-norm.
pub const EXTENDED_CHANNELS: usize = 8;
/// Statistics per channel: max, min, mean, std, var, skew, kurtosis, median, IQR.
pub const STATS_PER_CHANNEL: usize = 9;
/// Total feature dimension (8 channels x 9 statistics).
pub const FEATURE_DIM: usize = EXTENDED_CHANNELS * STATS_PER_CHANNEL;

/// 72-dimensional summary of one gesture window.
///
/// Layout is channel-major: `values[c * 9 + s]` holds statistic `s` of
/// extended channel `c`, with statistics ordered max, min, mean, standard
/// deviation, variance, skew, excess kurtosis, median, inter-quartile range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn from_values(values: Vec<f64>) -> Self {
        assert_eq!(values.len(), FEATURE_DIM);
        FeatureVector { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, channel: usize, stat: usize) -> f64 {
        self.values[channel * STATS_PER_CHANNEL + stat]
    }

    /// Squared Euclidean distance to another feature vector.
    pub fn squared_distance(&self, other: &FeatureVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

// ── extended channels ──────────────────────────────────────────────────────

/// Appends the accelerometer norm and gyroscope norm to the six raw channels.
///
/// Input must be `T x 6` ordered (acc x, acc y, acc z, gyr x, gyr y, gyr z);
/// output is `T x 8` with the norms in columns 6 and 7.
pub fn channels_extended(g: &TimeSeries) -> TimeSeries {
    assert_eq!(g.cols(), 6, "expected 6 sensor channels");
    TimeSeries::from_fn(g.rows(), EXTENDED_CHANNELS, |r, c| match c {
        0..=5 => g.get(r, c),
        6 => norm3(g.get(r, 0), g.get(r, 1), g.get(r, 2)),
        _ => norm3(g.get(r, 3), g.get(r, 4), g.get(r, 5)),
    })
}

fn norm3(x: f64, y: f64, z: f64) -> f64 {
    (x * x + y * y + z * z).sqrt()
}

// ── per-channel statistics ──────────────────────────────────────────────────

/// All nine statistics of one channel, moment-based with population
/// normalization (divide by n, not n-1).
#[derive(Debug, Clone, Copy)]
struct ChannelStats {
    max: f64,
    min: f64,
    mean: f64,
    std: f64,
    var: f64,
    skew: f64,
    kurt: f64,
    median: f64,
    iqr: f64,
}

impl ChannelStats {
    fn compute(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mut max = f64::NEG_INFINITY;
        let mut min = f64::INFINITY;
        let mut sum = 0.0;
        for &x in v {
            max = max.max(x);
            min = min.min(x);
            sum += x;
        }
        let mean = sum / n;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for &x in v {
            let d = x - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        m2 /= n;
        m3 /= n;
        m4 /= n;
        let std = m2.sqrt();
        // Zero-variance channels get skew/kurtosis 0 so downstream consumers
        // never see NaN from the 0/0 moment ratios.
        let (skew, kurt) = if m2 == 0.0 {
            (0.0, 0.0)
        } else {
            (m3 / (m2 * std), m4 / (m2 * m2) - 3.0)
        };

        let mut sorted = v.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
        let median = quantile_sorted(&sorted, 0.5);
        let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);

        ChannelStats {
            max,
            min,
            mean,
            std,
            var: m2,
            skew,
            kurt,
            median,
            iqr,
        }
    }

    fn as_array(&self) -> [f64; STATS_PER_CHANNEL] {
        [
            self.max,
            self.min,
            self.mean,
            self.std,
            self.var,
            self.skew,
            self.kurt,
            self.median,
            self.iqr,
        ]
    }
}

/// Quantile by linear interpolation between order statistics: rank
/// `p * (n - 1)` split into floor/ceil with fractional weights.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n as f64 - 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Extracts the 72-dimensional feature vector from a `T x 6` gesture window.
pub fn extract_features(g: &TimeSeries) -> FeatureVector {
    let ext = channels_extended(g);
    let mut values = Vec::with_capacity(FEATURE_DIM);
    for c in 0..ext.cols() {
        let col = ext.column(c);
        values.extend_from_slice(&ChannelStats::compute(&col).as_array());
    }
    FeatureVector { values }
}

// ── gradients ───────────────────────────────────────────────────────────────

/// Pulls a gradient with respect to the 72 features back to a gradient with
/// respect to the `T x 6` input samples.
///
/// Non-smooth statistics (max, min, median, IQR) use the subgradient that puts
/// all weight on the attaining order statistics, interpolation-weighted for
/// the quantiles; zero-variance channels get zero gradient for the spread and
/// shape statistics.
pub fn feature_pullback(g: &TimeSeries, upstream: &[f64]) -> TimeSeries {
    assert_eq!(upstream.len(), FEATURE_DIM);
    let ext = channels_extended(g);
    let t = g.rows();

    let mut grad_ext = vec![vec![0.0; t]; EXTENDED_CHANNELS];
    for c in 0..EXTENDED_CHANNELS {
        let col = ext.column(c);
        accumulate_stat_gradients(
            &col,
            &upstream[c * STATS_PER_CHANNEL..(c + 1) * STATS_PER_CHANNEL],
            &mut grad_ext[c],
        );
    }

    let mut out = TimeSeries::zeros(t, g.cols());
    for c in 0..6 {
        for r in 0..t {
            out.set(r, c, grad_ext[c][r]);
        }
    }
    // Chain the norm channels back onto their raw triplets:
    // d norm / d x = x / norm, undefined at zero where we take 0.
    for r in 0..t {
        for (norm_ch, base) in [(6usize, 0usize), (7, 3)] {
            let norm = ext.get(r, norm_ch);
            let g_norm = grad_ext[norm_ch][r];
            if norm > 0.0 && g_norm != 0.0 {
                for k in 0..3 {
                    let c = base + k;
                    out.set(r, c, out.get(r, c) + g_norm * g.get(r, c) / norm);
                }
            }
        }
    }
    out
}

/// Adds `sum_s w[s] * d stat_s / d v` into `grad` for one channel.
fn accumulate_stat_gradients(v: &[f64], w: &[f64], grad: &mut [f64]) {
    let n = v.len();
    let nf = n as f64;
    let mean = v.iter().sum::<f64>() / nf;
    let d: Vec<f64> = v.iter().map(|&x| x - mean).collect();
    let m2 = d.iter().map(|&x| x * x).sum::<f64>() / nf;
    let m3 = d.iter().map(|&x| x * x * x).sum::<f64>() / nf;
    let m4 = d.iter().map(|&x| x * x * x * x).sum::<f64>() / nf;
    let std = m2.sqrt();

    // max/min: first attaining index takes the whole subgradient.
    if w[0] != 0.0 {
        let argmax = argext(v, |a, b| a > b);
        grad[argmax] += w[0];
    }
    if w[1] != 0.0 {
        let argmin = argext(v, |a, b| a < b);
        grad[argmin] += w[1];
    }
    if w[2] != 0.0 {
        for gi in grad.iter_mut() {
            *gi += w[2] / nf;
        }
    }
    if w[3] != 0.0 && std > 0.0 {
        for i in 0..n {
            grad[i] += w[3] * d[i] / (nf * std);
        }
    }
    if w[4] != 0.0 {
        for i in 0..n {
            grad[i] += w[4] * 2.0 * d[i] / nf;
        }
    }
    if m2 > 0.0 {
        // d m2 / d v_i = 2 d_i / n
        // d m3 / d v_i = 3 (d_i^2 - m2) / n
        // d m4 / d v_i = 4 (d_i^3 - m3) / n
        if w[5] != 0.0 {
            let inv_m2_32 = 1.0 / (m2 * std);
            let coef_m2 = -1.5 * m3 / (m2 * m2 * std);
            for i in 0..n {
                let dm3 = 3.0 * (d[i] * d[i] - m2) / nf;
                let dm2 = 2.0 * d[i] / nf;
                grad[i] += w[5] * (dm3 * inv_m2_32 + dm2 * coef_m2);
            }
        }
        if w[6] != 0.0 {
            let inv_m2_2 = 1.0 / (m2 * m2);
            let coef_m2 = -2.0 * m4 / (m2 * m2 * m2);
            for i in 0..n {
                let dm4 = 4.0 * (d[i] * d[i] * d[i] - m3) / nf;
                let dm2 = 2.0 * d[i] / nf;
                grad[i] += w[6] * (dm4 * inv_m2_2 + dm2 * coef_m2);
            }
        }
    }
    if w[7] != 0.0 || w[8] != 0.0 {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("non-finite sample").then(a.cmp(&b)));
        if w[7] != 0.0 {
            add_quantile_grad(&idx, 0.5, w[7], grad);
        }
        if w[8] != 0.0 {
            add_quantile_grad(&idx, 0.75, w[8], grad);
            add_quantile_grad(&idx, 0.25, -w[8], grad);
        }
    }
}

fn argext(v: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if better(v[i], v[best]) {
            best = i;
        }
    }
    best
}

fn add_quantile_grad(sorted_idx: &[usize], p: f64, weight: f64, grad: &mut [f64]) {
    let n = sorted_idx.len();
    if n == 1 {
        grad[sorted_idx[0]] += weight;
        return;
    }
    let h = p * (n as f64 - 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    grad[sorted_idx[lo]] += weight * (1.0 - frac);
    if hi != lo {
        grad[sorted_idx[hi]] += weight * frac;
    }
}

// ── peak counting ───────────────────────────────────────────────────────────

/// Configuration for [`peak_count`].
#[derive(Debug, Clone, Copy)]
pub struct PeakConfig {
    /// A peak must exceed mean + `sigma_above_mean` * std.
    pub sigma_above_mean: f64,
    /// Minimum index distance between two counted peaks.
    pub min_separation: usize,
}

impl Default for PeakConfig {
    fn default() -> Self {
        PeakConfig {
            sigma_above_mean: 0.5,
            min_separation: 5,
        }
    }
}

/// Counts strict local maxima above `mean + sigma * std`, scanning left to
/// right and suppressing any candidate closer than `min_separation` samples
/// to the previously counted peak.
pub fn peak_count(series: &[f64], config: &PeakConfig) -> usize {
    if series.len() < 3 {
        return 0;
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let threshold = mean + config.sigma_above_mean * var.sqrt();

    let mut count = 0;
    let mut last: Option<usize> = None;
    for i in 1..series.len() - 1 {
        let is_peak =
            series[i] > series[i - 1] && series[i] > series[i + 1] && series[i] > threshold;
        if is_peak && last.map_or(true, |j| i - j >= config.min_separation) {
            count += 1;
            last = Some(i);
        }
    }
    count
}

// ── CSV export ──────────────────────────────────────────────────────────────

/// Writes feature rows with header `user_id,gesture_id,f0..f71`.
pub fn write_features_csv<W: Write>(
    out: W,
    rows: &[(String, String, FeatureVector)],
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["user_id".to_string(), "gesture_id".to_string()];
    header.extend((0..FEATURE_DIM).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for (user, gesture, fv) in rows {
        let mut record = vec![user.clone(), gesture.clone()];
        record.extend(fv.values().iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom as _;
    use rand::{Rng as _, SeedableRng as _};
    use rand_chacha::ChaCha8Rng;

    fn gesture_with_channel(t: usize, ch: usize, values: &[f64]) -> TimeSeries {
        let mut g = TimeSeries::zeros(t, 6);
        g.set_column(ch, values);
        g
    }

    /// Independent naive statistics used as the oracle for extract_features.
    fn naive_stats(v: &[f64]) -> [f64; 9] {
        let n = v.len() as f64;
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let (skew, kurt) = if var == 0.0 {
            (0.0, 0.0)
        } else {
            let m3 = v.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
            let m4 = v.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
            (m3 / std.powi(3), m4 / var.powi(2) - 3.0)
        };
        let mut s = v.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |p: f64| {
            let h = p * (s.len() as f64 - 1.0);
            let lo = h.floor() as usize;
            let frac = h - lo as f64;
            if frac == 0.0 {
                s[lo]
            } else {
                s[lo] * (1.0 - frac) + s[lo + 1] * frac
            }
        };
        [max, min, mean, std, var, skew, kurt, q(0.5), q(0.75) - q(0.25)]
    }

    #[test]
    fn constant_channel_canonical_values() {
        let g = gesture_with_channel(200, 0, &vec![2.0; 200]);
        let fv = extract_features(&g);
        let expected = [2.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0];
        for (s, &e) in expected.iter().enumerate() {
            assert_eq!(fv.get(0, s), e, "stat {s}");
        }
        // Accelerometer norm of (2, 0, 0) is the same constant 2.
        for (s, &e) in expected.iter().enumerate() {
            assert_eq!(fv.get(6, s), e, "norm stat {s}");
        }
    }

    #[test]
    fn zero_gesture_all_features_zero() {
        let fv = extract_features(&TimeSeries::zeros(200, 6));
        assert!(fv.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_channel_symmetric() {
        let ramp: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let g = gesture_with_channel(200, 1, &ramp);
        let fv = extract_features(&g);
        assert!((fv.get(1, 2) - 99.5).abs() < 1e-9, "mean");
        assert!((fv.get(1, 7) - 99.5).abs() < 1e-9, "median");
        assert!(fv.get(1, 5).abs() < 1e-9, "skew");
    }

    #[test]
    fn acc_norm_is_three_four_five() {
        let mut g = TimeSeries::zeros(50, 6);
        g.set_column(0, &vec![3.0; 50]);
        g.set_column(1, &vec![4.0; 50]);
        let ext = channels_extended(&g);
        for r in 0..50 {
            assert_eq!(ext.get(r, 6), 5.0);
            assert_eq!(ext.get(r, 7), 0.0);
        }
    }

    #[test]
    fn norm_channel_matches_pointwise_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = TimeSeries::from_fn(200, 6, |_, _| rng.gen_range(-2.0..2.0));
        let ext = channels_extended(&g);
        for r in 0..200 {
            let acc = (g.get(r, 0).powi(2) + g.get(r, 1).powi(2) + g.get(r, 2).powi(2)).sqrt();
            let gyr = (g.get(r, 3).powi(2) + g.get(r, 4).powi(2) + g.get(r, 5).powi(2)).sqrt();
            assert!((ext.get(r, 6) - acc).abs() < 1e-12);
            assert!((ext.get(r, 7) - gyr).abs() < 1e-12);
        }
    }

    #[test]
    fn random_channels_match_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = TimeSeries::from_fn(200, 6, |_, _| rng.gen_range(-3.0..3.0));
        let ext = channels_extended(&g);
        let fv = extract_features(&g);
        for c in 0..EXTENDED_CHANNELS {
            let oracle = naive_stats(&ext.column(c));
            for s in 0..STATS_PER_CHANNEL {
                assert!(
                    (fv.get(c, s) - oracle[s]).abs() < 1e-9,
                    "channel {c} stat {s}: {} vs {}",
                    fv.get(c, s),
                    oracle[s]
                );
            }
        }
    }

    #[test]
    fn variance_equals_std_squared() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let g = TimeSeries::from_fn(200, 6, |_, _| rng.gen_range(-1.0..1.0));
        let fv = extract_features(&g);
        for c in 0..EXTENDED_CHANNELS {
            assert!((fv.get(c, 4) - fv.get(c, 3).powi(2)).abs() < 1e-9);
        }
    }

    #[test]
    fn peak_count_monotone_and_constant_are_zero() {
        let ramp: Vec<f64> = (0..200).map(|i| i as f64).collect();
        assert_eq!(peak_count(&ramp, &PeakConfig::default()), 0);
        assert_eq!(peak_count(&vec![1.5; 200], &PeakConfig::default()), 0);
    }

    #[test]
    fn peak_count_two_separated_bumps() {
        let mut v = vec![0.0; 200];
        v[60] = 1.0;
        v[110] = 1.0;
        assert_eq!(peak_count(&v, &PeakConfig::default()), 2);
    }

    #[test]
    fn peak_count_suppresses_close_peaks() {
        let mut v = vec![0.0; 200];
        v[60] = 1.0;
        v[63] = 1.0;
        assert_eq!(peak_count(&v, &PeakConfig::default()), 1);
    }

    #[test]
    fn pullback_matches_finite_differences() {
        // Jittered grid keeps samples pairwise separated so the 1e-5 probe
        // never reorders the order statistics.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let t = 20;
        let mut g = TimeSeries::zeros(t, 6);
        for c in 0..6 {
            let mut col: Vec<f64> = (0..t)
                .map(|i| i as f64 * 0.05 + rng.gen_range(-0.01..0.01) + 0.3)
                .collect();
            col.shuffle(&mut rng);
            g.set_column(c, &col);
        }
        let upstream: Vec<f64> = (0..FEATURE_DIM)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();

        let loss = |g: &TimeSeries| -> f64 {
            extract_features(g)
                .values()
                .iter()
                .zip(&upstream)
                .map(|(f, w)| f * w)
                .sum()
        };

        let analytic = feature_pullback(&g, &upstream);
        let h = 1e-5;
        for r in 0..t {
            for c in 0..6 {
                let mut plus = g.clone();
                plus.set(r, c, g.get(r, c) + h);
                let mut minus = g.clone();
                minus.set(r, c, g.get(r, c) - h);
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let a = analytic.get(r, c);
                let scale = a.abs().max(numeric.abs()).max(0.01);
                assert!(
                    (a - numeric).abs() <= 1e-4 * scale,
                    "({r},{c}): analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn csv_export_shape() {
        let g = TimeSeries::zeros(200, 6);
        let rows = vec![("u1".to_string(), "g1".to_string(), extract_features(&g))];
        let mut buf = Vec::new();
        write_features_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("user_id,gesture_id,f0,"));
        assert!(header.ends_with(",f71"));
        assert_eq!(lines.next().unwrap().split(',').count(), 74);
    }

    proptest! {
        #[test]
        fn shift_equivariance(k in -5.0f64..5.0, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base = TimeSeries::from_fn(60, 6, |_, _| rng.gen_range(-2.0..2.0));
            let mut shifted = base.clone();
            let col: Vec<f64> = base.column(2).iter().map(|v| v + k).collect();
            shifted.set_column(2, &col);

            let fa = extract_features(&base);
            let fb = extract_features(&shifted);
            // Channel 2 location statistics move by k, spread/shape stay put.
            for s in [0usize, 1, 2, 7] {
                prop_assert!((fb.get(2, s) - fa.get(2, s) - k).abs() < 1e-9);
            }
            for s in [3usize, 4, 5, 6, 8] {
                prop_assert!((fb.get(2, s) - fa.get(2, s)).abs() < 1e-7);
            }
        }

        #[test]
        fn scale_covariance(s in 0.1f64..5.0, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base = TimeSeries::from_fn(60, 6, |_, _| rng.gen_range(-2.0..2.0));
            let mut scaled = base.clone();
            let col: Vec<f64> = base.column(4).iter().map(|v| v * s).collect();
            scaled.set_column(4, &col);

            let fa = extract_features(&base);
            let fb = extract_features(&scaled);
            prop_assert!((fb.get(4, 3) - fa.get(4, 3) * s).abs() < 1e-7, "std scales by s");
            prop_assert!((fb.get(4, 4) - fa.get(4, 4) * s * s).abs() < 1e-6, "var scales by s^2");
            prop_assert!((fb.get(4, 5) - fa.get(4, 5)).abs() < 1e-7, "skew invariant");
            prop_assert!((fb.get(4, 6) - fa.get(4, 6)).abs() < 1e-6, "kurtosis invariant");
        }
    }
}
