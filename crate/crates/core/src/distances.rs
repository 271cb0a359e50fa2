//! Timeseries dissimilarities and reconstruction losses.
//!
//! Covers the elastic family (banded dynamic time warping, Keogh envelopes
//! and lower bound, the weighted multi-bandwidth envelope loss, smoothed DTW
//! with gradients) plus pointwise MSE, the feature-matching loss, and weighted
//! combinations of the two groups. Everything is pure and reentrant.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{extract_features, feature_pullback, FeatureVector, FEATURE_DIM};
use crate::TimeSeries;

#[derive(Debug, Error, PartialEq)]
pub enum DistanceError {
    #[error("empty series")]
    EmptySeries,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("shape mismatch: {left_rows}x{left_cols} vs {right_rows}x{right_cols}")]
    ShapeMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("band width {band} cannot connect series of lengths {left} and {right}")]
    BandTooNarrow {
        band: usize,
        left: usize,
        right: usize,
    },
    #[error("non-finite value in input series")]
    NonFinite,
    #[error("loss weights must be non-negative, got ({base}, {feature})")]
    InvalidWeights { base: f64, feature: f64 },
    #[error("smoothing gamma must be positive, got {0}")]
    InvalidGamma(f64),
}

/// Pointwise distance between two scalar samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointDist {
    /// `(a - b)^2`; the default, consistent with the MSE loss.
    Squared,
    /// `|a - b|`.
    Abs,
}

impl PointDist {
    pub fn eval(self, a: f64, b: f64) -> f64 {
        match self {
            PointDist::Squared => (a - b) * (a - b),
            PointDist::Abs => (a - b).abs(),
        }
    }
}

fn check_same_shape(x: &TimeSeries, y: &TimeSeries) -> Result<(), DistanceError> {
    if !x.same_shape(y) {
        return Err(DistanceError::ShapeMismatch {
            left_rows: x.rows(),
            left_cols: x.cols(),
            right_rows: y.rows(),
            right_cols: y.cols(),
        });
    }
    Ok(())
}

// ── dynamic time warping ────────────────────────────────────────────────────

/// Minimum warping cost between two scalar series.
///
/// The warping path starts at the first pair, ends at the last pair, and
/// advances by one step in either or both series; each visited pair
/// contributes `point_dist`. `band` restricts the path to `|i - j| <= band`.
pub fn dtw(
    x: &[f64],
    y: &[f64],
    band: Option<usize>,
    point_dist: PointDist,
) -> Result<f64, DistanceError> {
    let (n, m) = (x.len(), y.len());
    if n == 0 || m == 0 {
        return Err(DistanceError::EmptySeries);
    }
    if let Some(w) = band {
        if n.abs_diff(m) > w {
            return Err(DistanceError::BandTooNarrow {
                band: w,
                left: n,
                right: m,
            });
        }
    }

    let in_band = |i: usize, j: usize| band.map_or(true, |w| i.abs_diff(j) <= w);
    let mut prev = vec![f64::INFINITY; m];
    let mut curr = vec![f64::INFINITY; m];
    for i in 0..n {
        curr.fill(f64::INFINITY);
        for j in 0..m {
            if !in_band(i, j) {
                continue;
            }
            let d = point_dist.eval(x[i], y[j]);
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let up = if i > 0 { prev[j] } else { f64::INFINITY };
                let left = if j > 0 { curr[j - 1] } else { f64::INFINITY };
                let diag = if i > 0 && j > 0 {
                    prev[j - 1]
                } else {
                    f64::INFINITY
                };
                up.min(left).min(diag)
            };
            curr[j] = d + best;
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    Ok(prev[m - 1])
}

// ── Keogh envelopes and lower bound ─────────────────────────────────────────

/// Running min/max of a series over a window of half-width `bandwidth`.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    pub bandwidth: usize,
}

/// Builds the upper/lower envelope of `x`: position `i` takes the max/min of
/// `x` over indices `[i - w, i + w]` clamped to the series.
pub fn envelopes(x: &[f64], w: usize) -> Envelope {
    assert!(w >= 1, "envelope bandwidth must be at least 1");
    let n = x.len();
    let mut upper = Vec::with_capacity(n);
    let mut lower = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(w);
        let hi = (i + w).min(n - 1);
        let window = &x[lo..=hi];
        upper.push(window.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        lower.push(window.iter().cloned().fold(f64::INFINITY, f64::min));
    }
    Envelope {
        upper,
        lower,
        bandwidth: w,
    }
}

/// Keogh lower bound on banded DTW: pointwise distance from `y` to the
/// envelope of `x`, zero wherever `y` lies inside the envelope.
pub fn lb_keogh(
    x: &[f64],
    y: &[f64],
    w: usize,
    point_dist: PointDist,
) -> Result<f64, DistanceError> {
    if x.len() != y.len() {
        return Err(DistanceError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let env = envelopes(x, w);
    Ok(lb_keogh_on_envelope(&env, y, point_dist))
}

fn lb_keogh_on_envelope(env: &Envelope, y: &[f64], point_dist: PointDist) -> f64 {
    let mut total = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        if yi > env.upper[i] {
            total += point_dist.eval(yi, env.upper[i]);
        } else if yi < env.lower[i] {
            total += point_dist.eval(yi, env.lower[i]);
        }
    }
    total
}

/// Bandwidth/weight schedule of the multi-bandwidth envelope loss: weights
/// 5..1 at bandwidths 2, 4, 8, 16, 32.
const KLB_TERMS: [(usize, f64); 5] = [(2, 5.0), (4, 4.0), (8, 3.0), (16, 2.0), (32, 1.0)];

/// Precomputed envelopes of a fixed target series at all five bandwidths,
/// reused across repeated loss evaluations against the same target.
#[derive(Debug, Clone)]
pub struct KlbEnvelopes {
    rows: usize,
    cols: usize,
    // [channel][term] in KLB_TERMS order.
    per_channel: Vec<Vec<Envelope>>,
}

impl KlbEnvelopes {
    pub fn new(x: &TimeSeries) -> Self {
        let per_channel = (0..x.cols())
            .map(|c| {
                let col = x.column(c);
                KLB_TERMS.iter().map(|&(w, _)| envelopes(&col, w)).collect()
            })
            .collect();
        KlbEnvelopes {
            rows: x.rows(),
            cols: x.cols(),
            per_channel,
        }
    }

    pub fn loss(&self, y: &TimeSeries) -> Result<f64, DistanceError> {
        self.check(y)?;
        let mut total = 0.0;
        for c in 0..self.cols {
            let col = y.column(c);
            for (env, &(_, weight)) in self.per_channel[c].iter().zip(&KLB_TERMS) {
                total += weight * lb_keogh_on_envelope(env, &col, PointDist::Squared);
            }
        }
        Ok(total)
    }

    /// Loss plus subgradient with respect to `y`: `2 (y_i - U_i)` above the
    /// envelope, `2 (y_i - L_i)` below, zero inside. The envelopes belong to
    /// the fixed target and are constants here.
    pub fn loss_and_grad(&self, y: &TimeSeries) -> Result<(f64, TimeSeries), DistanceError> {
        self.check(y)?;
        let mut total = 0.0;
        let mut grad = TimeSeries::zeros(y.rows(), y.cols());
        for c in 0..self.cols {
            for (env, &(_, weight)) in self.per_channel[c].iter().zip(&KLB_TERMS) {
                for i in 0..self.rows {
                    let yi = y.get(i, c);
                    let excess = if yi > env.upper[i] {
                        yi - env.upper[i]
                    } else if yi < env.lower[i] {
                        yi - env.lower[i]
                    } else {
                        continue;
                    };
                    total += weight * excess * excess;
                    grad.set(i, c, grad.get(i, c) + weight * 2.0 * excess);
                }
            }
        }
        Ok((total, grad))
    }

    fn check(&self, y: &TimeSeries) -> Result<(), DistanceError> {
        if y.rows() != self.rows || y.cols() != self.cols {
            return Err(DistanceError::ShapeMismatch {
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: y.rows(),
                right_cols: y.cols(),
            });
        }
        Ok(())
    }
}

/// Weighted five-bandwidth Keogh bound, summed over channels, with squared
/// point distance.
pub fn klb_mod(x: &TimeSeries, y: &TimeSeries) -> Result<f64, DistanceError> {
    check_same_shape(x, y)?;
    KlbEnvelopes::new(x).loss(y)
}

// ── smoothed DTW ────────────────────────────────────────────────────────────

/// `softmin(a, b, c) = -gamma * ln(e^{-a/g} + e^{-b/g} + e^{-c/g})`,
/// max-shifted so finite inputs never overflow.
fn softmin3(a: f64, b: f64, c: f64, gamma: f64) -> f64 {
    let m = a.min(b).min(c);
    if m.is_infinite() {
        return m;
    }
    let sum = ((m - a) / gamma).exp() + ((m - b) / gamma).exp() + ((m - c) / gamma).exp();
    m - gamma * sum.ln()
}

/// Smoothed DTW between equal-shape multichannel series, computed per channel
/// with squared point distance and summed, together with its gradient with
/// respect to `y`.
///
/// The gradient comes from reverse accumulation through the soft-min DP
/// table: each cell redistributes its sensitivity to the three predecessors
/// with the soft-min weights recovered from the stored table values.
pub fn soft_dtw(
    x: &TimeSeries,
    y: &TimeSeries,
    gamma: f64,
) -> Result<(f64, TimeSeries), DistanceError> {
    if gamma <= 0.0 {
        return Err(DistanceError::InvalidGamma(gamma));
    }
    check_same_shape(x, y)?;
    if x.rows() == 0 {
        return Err(DistanceError::EmptySeries);
    }
    if !x.is_finite() || !y.is_finite() {
        return Err(DistanceError::NonFinite);
    }

    let mut total = 0.0;
    let mut grad = TimeSeries::zeros(y.rows(), y.cols());
    for c in 0..x.cols() {
        let xs = x.column(c);
        let ys = y.column(c);
        let (value, gcol) = soft_dtw_channel(&xs, &ys, gamma);
        total += value;
        for (i, g) in gcol.iter().enumerate() {
            grad.set(i, c, *g);
        }
    }
    Ok((total, grad))
}

fn soft_dtw_channel(x: &[f64], y: &[f64], gamma: f64) -> (f64, Vec<f64>) {
    let (n, m) = (x.len(), y.len());
    let idx = |i: usize, j: usize| i * m + j;
    let mut r = vec![f64::INFINITY; n * m];
    let delta = |i: usize, j: usize| {
        let d = x[i] - y[j];
        d * d
    };

    for i in 0..n {
        for j in 0..m {
            let d = delta(i, j);
            r[idx(i, j)] = if i == 0 && j == 0 {
                d
            } else {
                let up = if i > 0 { r[idx(i - 1, j)] } else { f64::INFINITY };
                let left = if j > 0 { r[idx(i, j - 1)] } else { f64::INFINITY };
                let diag = if i > 0 && j > 0 {
                    r[idx(i - 1, j - 1)]
                } else {
                    f64::INFINITY
                };
                d + softmin3(up, left, diag, gamma)
            };
        }
    }

    // Reverse sweep: e[i][j] = d value / d r[i][j]. The soft-min weight of a
    // predecessor with table value a is exp((s - a) / gamma) where
    // s = r[i][j] - delta(i, j) is the soft-min itself; all weights lie in
    // (0, 1] because the soft-min never exceeds its arguments.
    let mut e = vec![0.0; n * m];
    e[idx(n - 1, m - 1)] = 1.0;
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            let ei = e[idx(i, j)];
            if ei == 0.0 || (i == 0 && j == 0) {
                continue;
            }
            let s = r[idx(i, j)] - delta(i, j);
            if i > 0 {
                e[idx(i - 1, j)] += ei * ((s - r[idx(i - 1, j)]) / gamma).exp();
            }
            if j > 0 {
                e[idx(i, j - 1)] += ei * ((s - r[idx(i, j - 1)]) / gamma).exp();
            }
            if i > 0 && j > 0 {
                e[idx(i - 1, j - 1)] += ei * ((s - r[idx(i - 1, j - 1)]) / gamma).exp();
            }
        }
    }

    let mut grad = vec![0.0; m];
    for i in 0..n {
        for j in 0..m {
            let ei = e[idx(i, j)];
            if ei != 0.0 {
                grad[j] += ei * 2.0 * (y[j] - x[i]);
            }
        }
    }
    (r[idx(n - 1, m - 1)], grad)
}

// ── pointwise and feature losses ────────────────────────────────────────────

/// Summed squared error over all samples and channels (a sum, not a mean).
pub fn mse_loss(x: &TimeSeries, y: &TimeSeries) -> Result<f64, DistanceError> {
    check_same_shape(x, y)?;
    Ok(x.as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Squared Euclidean distance between the feature vectors of two gestures.
pub fn feature_loss(x: &TimeSeries, y: &TimeSeries) -> Result<f64, DistanceError> {
    check_same_shape(x, y)?;
    Ok(extract_features(x).squared_distance(&extract_features(y)))
}

// ── combined losses ─────────────────────────────────────────────────────────

/// Which base dissimilarity a combined loss uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    SoftDtw,
    KlbMod,
    MseFeature,
    KlbModFeature,
}

/// A weighted reconstruction loss: `base_weight * base + feature_weight *
/// feature_loss`. The kind picks the base term and the default weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub base_weight: f64,
    pub feature_weight: f64,
    /// Smoothing for the soft-DTW base; ignored by the other kinds.
    pub gamma: f64,
}

impl LossSpec {
    /// Default weights per kind. The `mse_feature` preset deliberately zeroes
    /// the pointwise term (the feature term alone drives it); pass explicit
    /// weights to mix both.
    pub fn for_kind(kind: LossKind) -> LossSpec {
        let (base_weight, feature_weight) = match kind {
            LossKind::Mse | LossKind::SoftDtw | LossKind::KlbMod => (1.0, 0.0),
            LossKind::MseFeature => (0.0, 0.1),
            LossKind::KlbModFeature => (1.0, 0.01),
        };
        LossSpec {
            kind,
            base_weight,
            feature_weight,
            gamma: 0.1,
        }
    }

    pub fn with_weights(mut self, base_weight: f64, feature_weight: f64) -> LossSpec {
        self.base_weight = base_weight;
        self.feature_weight = feature_weight;
        self
    }

    pub fn validate(&self) -> Result<(), DistanceError> {
        if self.base_weight < 0.0 || self.feature_weight < 0.0 {
            return Err(DistanceError::InvalidWeights {
                base: self.base_weight,
                feature: self.feature_weight,
            });
        }
        if matches!(self.kind, LossKind::SoftDtw) && self.gamma <= 0.0 {
            return Err(DistanceError::InvalidGamma(self.gamma));
        }
        Ok(())
    }
}

/// A target series with everything precomputable cached: its feature vector
/// and, for the envelope-based kinds, the five-bandwidth envelopes. Training
/// loops prepare each target once and evaluate many reconstructions against
/// it.
#[derive(Debug, Clone)]
pub struct PreparedTarget {
    series: TimeSeries,
    features: Option<FeatureVector>,
    klb: Option<KlbEnvelopes>,
}

pub fn prepare_target(spec: &LossSpec, x: &TimeSeries) -> Result<PreparedTarget, DistanceError> {
    spec.validate()?;
    let features = if spec.feature_weight > 0.0 {
        Some(extract_features(x))
    } else {
        None
    };
    let klb = if matches!(spec.kind, LossKind::KlbMod | LossKind::KlbModFeature)
        && spec.base_weight > 0.0
    {
        Some(KlbEnvelopes::new(x))
    } else {
        None
    };
    Ok(PreparedTarget {
        series: x.clone(),
        features,
        klb,
    })
}

/// Combined loss value and gradient with respect to the reconstruction `y`.
/// Terms with zero weight are skipped entirely.
pub fn combined_loss_prepared(
    spec: &LossSpec,
    target: &PreparedTarget,
    y: &TimeSeries,
) -> Result<(f64, TimeSeries), DistanceError> {
    check_same_shape(&target.series, y)?;
    let mut total = 0.0;
    let mut grad = TimeSeries::zeros(y.rows(), y.cols());

    if spec.base_weight > 0.0 {
        let (value, base_grad) = match spec.kind {
            LossKind::Mse | LossKind::MseFeature => {
                let value = mse_loss(&target.series, y)?;
                let g = TimeSeries::from_fn(y.rows(), y.cols(), |r, c| {
                    2.0 * (y.get(r, c) - target.series.get(r, c))
                });
                (value, g)
            }
            LossKind::SoftDtw => soft_dtw(&target.series, y, spec.gamma)?,
            LossKind::KlbMod | LossKind::KlbModFeature => {
                let klb = target.klb.as_ref().expect("prepared with klb envelopes");
                klb.loss_and_grad(y)?
            }
        };
        total += spec.base_weight * value;
        for (g, b) in grad.as_mut_slice().iter_mut().zip(base_grad.as_slice()) {
            *g += spec.base_weight * b;
        }
    }

    if spec.feature_weight > 0.0 {
        let fx = target.features.as_ref().expect("prepared with features");
        let fy = extract_features(y);
        total += spec.feature_weight * fy.squared_distance(fx);
        let mut upstream = [0.0; FEATURE_DIM];
        for (u, (a, b)) in upstream.iter_mut().zip(fy.values().iter().zip(fx.values())) {
            *u = spec.feature_weight * 2.0 * (a - b);
        }
        let pulled = feature_pullback(y, &upstream);
        for (g, p) in grad.as_mut_slice().iter_mut().zip(pulled.as_slice()) {
            *g += p;
        }
    }

    Ok((total, grad))
}

/// One-shot convenience wrapper around [`prepare_target`] and
/// [`combined_loss_prepared`].
pub fn combined_loss(
    spec: &LossSpec,
    x: &TimeSeries,
    y: &TimeSeries,
) -> Result<(f64, TimeSeries), DistanceError> {
    let target = prepare_target(spec, x)?;
    combined_loss_prepared(spec, &target, y)
}
