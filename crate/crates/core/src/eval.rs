//! Authentication metrics and experiment harnesses.
//!
//! Scores are "probability this sample belongs to the genuine user"; a sample
//! is accepted when its score is at or above the decision threshold. That
//! acceptance rule (`score >= T`, not `>`) is fixed here so reports are
//! bit-exact reproducible.
//!
//! The equal-error rate is reported as an interval, not a point: with coarse
//! score lattices (for example vote fractions from a 100-tree forest) FAR can
//! jump past FRR without ever equalling it, so the crossing is bracketed by
//! the two rates at the first threshold where FAR reaches FRR.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};
use thiserror::Error;

use crate::classifiers::{rf_predict, train_random_forest, ClassifierError, ForestSpec};
use crate::dataset::{gesture_key, Gesture};
use crate::features::extract_features;
use crate::generative::{
    decode_batch, encode_batch, generate_synthetic, train_vae, GenerativeError, SampleStrategy,
    VaeModel, VaeTrainConfig, LATENT_DIM,
};
use crate::TimeSeries;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("score set is empty")]
    Empty,
    #[error("scores and labels have different lengths ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score at index {0} is not finite")]
    NonFiniteScore(usize),
    #[error("threshold metrics need both genuine and impostor samples")]
    SingleClass,
    #[error("experiment config: {0}")]
    Config(String),
    #[error("user {0:?} has no gesture windows in the corpus")]
    MissingUser(String),
    #[error("need at least {need} {what}, got {got}")]
    Insufficient {
        what: &'static str,
        need: usize,
        got: usize,
    },
    #[error(transparent)]
    Generative(#[from] GenerativeError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

/// Scores paired with ground truth; `true` marks the genuine user.
#[derive(Debug, Clone)]
pub struct ScoreSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<ScoreSet, EvalError> {
        if scores.len() != labels.len() {
            return Err(EvalError::LengthMismatch {
                scores: scores.len(),
                labels: labels.len(),
            });
        }
        if scores.is_empty() {
            return Err(EvalError::Empty);
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(EvalError::NonFiniteScore(i));
        }
        Ok(ScoreSet { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    fn class_counts(&self) -> (usize, usize) {
        let genuine = self.labels.iter().filter(|&&l| l).count();
        (genuine, self.labels.len() - genuine)
    }
}

/// One operating point of the ROC curve at a given acceptance threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Acceptance threshold; the leading point uses `+inf` (reject all).
    #[serde(
        serialize_with = "serialize_threshold",
        deserialize_with = "deserialize_threshold"
    )]
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
    pub tar: f64,
}

// JSON has no infinity literal, so the reject-all threshold round-trips as
// the string "inf".
fn serialize_threshold<S: Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
    if t.is_finite() {
        s.serialize_f64(*t)
    } else if *t > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

fn deserialize_threshold<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(v) => Ok(v),
        Repr::Str(s) => match s.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            other => Err(serde::de::Error::custom(format!(
                "bad threshold {other:?}"
            ))),
        },
    }
}

/// Equal-error-rate bracket; `lower == upper` when FAR and FRR cross exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerInterval {
    pub lower: f64,
    pub upper: f64,
}

/// Full metric bundle for one evaluation, ready for JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auroc: f64,
    pub eer: EerInterval,
    pub far_at_zero: f64,
    pub roc: Vec<RocPoint>,
    /// Echo of the configuration that produced the scores.
    pub config: Value,
}

/// ROC operating points at every unique score plus the reject-all threshold,
/// ordered by decreasing threshold (FAR non-decreasing along the list).
pub fn roc_curve(s: &ScoreSet) -> Result<Vec<RocPoint>, EvalError> {
    let (n_gen, n_imp) = s.class_counts();
    if n_gen == 0 || n_imp == 0 {
        return Err(EvalError::SingleClass);
    }

    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.scores[b].partial_cmp(&s.scores[a]).unwrap());

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        frr: 1.0,
        tar: 0.0,
    }];
    let mut acc_gen = 0usize;
    let mut acc_imp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let t = s.scores[order[i]];
        // Consume the whole tie group: one threshold per unique score.
        while i < order.len() && s.scores[order[i]] == t {
            if s.labels[order[i]] {
                acc_gen += 1;
            } else {
                acc_imp += 1;
            }
            i += 1;
        }
        let far = acc_imp as f64 / n_imp as f64;
        let tar = acc_gen as f64 / n_gen as f64;
        points.push(RocPoint {
            threshold: t,
            far,
            frr: 1.0 - tar,
            tar,
        });
    }
    Ok(points)
}

/// Area under the (FAR, TAR) curve by the trapezoid rule. Equal to the
/// Mann-Whitney U statistic with half credit for score ties.
pub fn auroc(s: &ScoreSet) -> Result<f64, EvalError> {
    let roc = roc_curve(s)?;
    let mut area = 0.0;
    for pair in roc.windows(2) {
        area += (pair[1].far - pair[0].far) * (pair[1].tar + pair[0].tar) / 2.0;
    }
    Ok(area)
}

/// Brackets the FAR/FRR crossing: walking thresholds downward, FAR rises and
/// FRR falls, and the first operating point where FAR reaches FRR yields the
/// interval. An exact crossing collapses it to a point.
pub fn eer_interval(s: &ScoreSet) -> Result<EerInterval, EvalError> {
    let roc = roc_curve(s)?;
    for p in &roc {
        if p.far >= p.frr {
            return Ok(EerInterval {
                lower: p.far.min(p.frr),
                upper: p.far.max(p.frr),
            });
        }
    }
    // The lowest threshold accepts everything (FAR 1, FRR 0), so the scan
    // cannot fall through; keep a defensive degenerate answer.
    Ok(EerInterval {
        lower: 1.0,
        upper: 1.0,
    })
}

/// False accept rate while essentially nobody genuine is rejected: FAR at
/// the largest threshold keeping FRR below `frr_tol`, or 1.0 when no
/// threshold does.
pub fn far_at_zero(s: &ScoreSet, frr_tol: f64) -> Result<f64, EvalError> {
    let roc = roc_curve(s)?;
    // Points run from high to low threshold; FRR only falls along the list.
    for p in &roc {
        if p.frr < frr_tol {
            return Ok(p.far);
        }
    }
    Ok(1.0)
}

/// Bundles all threshold metrics for one score set.
pub fn compute_metrics(s: &ScoreSet, config: Value) -> Result<MetricsReport, EvalError> {
    Ok(MetricsReport {
        auroc: auroc(s)?,
        eer: eer_interval(s)?,
        far_at_zero: far_at_zero(s, 0.01)?,
        roc: roc_curve(s)?,
        config,
    })
}

/// Writes ROC points as `threshold,far,frr,tar` rows (threshold `inf` on the
/// reject-all row).
pub fn write_roc_csv<W: Write>(mut out: W, roc: &[RocPoint]) -> std::io::Result<()> {
    writeln!(out, "threshold,far,frr,tar")?;
    for p in roc {
        let t = if p.threshold.is_finite() {
            format!("{}", p.threshold)
        } else {
            "inf".to_string()
        };
        writeln!(out, "{},{},{},{}", t, p.far, p.frr, p.tar)?;
    }
    Ok(())
}

// ── train-synthetic test-real experiments ─────────────────────────────────────

/// Decorrelates synthetic-sampling randomness from seeds reused by trainers.
const EXPERIMENT_SALT: u64 = 0xD1B5_4A32_D192_ED03;

fn feature_rows<'a, I: IntoIterator<Item = &'a TimeSeries>>(windows: I) -> Vec<Vec<f64>> {
    windows
        .into_iter()
        .map(|w| extract_features(w).values().to_vec())
        .collect()
}

/// Gesture refs in a deterministic order, so seeded shuffles and splits do
/// not depend on corpus file order.
fn sorted_refs<'a>(corpus: &'a [Gesture], keep: impl Fn(&Gesture) -> bool) -> Vec<&'a Gesture> {
    let mut refs: Vec<&Gesture> = corpus.iter().filter(|g| keep(g)).collect();
    refs.sort_by(|a, b| {
        (&a.user_id, a.nfc_t_ms, &a.gesture_id).cmp(&(&b.user_id, b.nfc_t_ms, &b.gesture_id))
    });
    refs
}

/// Reconstructions (mean-latent round trips) of the given windows.
fn reconstruct_windows(
    model: &VaeModel,
    windows: &[&TimeSeries],
) -> Result<Vec<TimeSeries>, GenerativeError> {
    let embeddings = encode_batch(model, windows)?;
    let mus: Vec<[f64; LATENT_DIM]> = embeddings.iter().map(|e| e.mu).collect();
    decode_batch(model, &mus)
}

/// Train-synthetic test-real harness for payment-intent detection: a forest
/// is trained on reconstructed gesture windows (or the real windows they came
/// from, as a control) against real non-gesture windows, then evaluated on
/// held-out real windows of both kinds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TstrIntentConfig {
    pub forest: ForestSpec,
    /// Training positives, drawn with replacement from the source half.
    pub n_positive: usize,
    /// Training negatives, drawn with replacement from the non-gesture half.
    pub n_negative: usize,
    /// With `false` the drawn gesture windows train the detector unmodified:
    /// the "no reconstruction" control arm.
    pub use_reconstructions: bool,
    /// Fraction of each pool used as training source; the rest is the real
    /// test split.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for TstrIntentConfig {
    fn default() -> Self {
        TstrIntentConfig {
            forest: ForestSpec::new(100, 0),
            n_positive: 240,
            n_negative: 240,
            use_reconstructions: true,
            train_fraction: 0.5,
            seed: 0,
        }
    }
}

impl TstrIntentConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.n_positive == 0 || self.n_negative == 0 {
            return Err(EvalError::Config(
                "n_positive and n_negative must be >= 1".into(),
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(EvalError::Config(format!(
                "train_fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Splits deterministically-ordered refs into a seeded-shuffle train source
/// and test remainder, each guaranteed non-empty.
fn shuffled_split<'a>(
    mut refs: Vec<&'a Gesture>,
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<&'a Gesture>, Vec<&'a Gesture>) {
    refs.shuffle(rng);
    let n_train = ((refs.len() as f64 * fraction) as usize).clamp(1, refs.len() - 1);
    let test = refs.split_off(n_train);
    (refs, test)
}

fn draw_with_replacement<'a>(
    pool: &[&'a Gesture],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<&'a TimeSeries> {
    (0..n).map(|_| &pool[rng.gen_range(0..pool.len())].series).collect()
}

/// Runs the intent TSTR experiment on a corpus in the model's input space.
/// The corpus provides both pools: gesture windows (positives) and
/// non-gesture windows (negatives).
pub fn tstr_intent(
    model: &VaeModel,
    corpus: &[Gesture],
    cfg: &TstrIntentConfig,
) -> Result<MetricsReport, EvalError> {
    cfg.validate()?;
    let gestures = sorted_refs(corpus, |g| g.is_gesture);
    let non_gestures = sorted_refs(corpus, |g| !g.is_gesture);
    if gestures.len() < 2 {
        return Err(EvalError::Insufficient {
            what: "gesture windows",
            need: 2,
            got: gestures.len(),
        });
    }
    if non_gestures.len() < 2 {
        return Err(EvalError::Insufficient {
            what: "non-gesture windows",
            need: 2,
            got: non_gestures.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ EXPERIMENT_SALT);
    let (pos_source, pos_test) = shuffled_split(gestures, cfg.train_fraction, &mut rng);
    let (neg_source, neg_test) = shuffled_split(non_gestures, cfg.train_fraction, &mut rng);

    let drawn_pos = draw_with_replacement(&pos_source, cfg.n_positive, &mut rng);
    let drawn_neg = draw_with_replacement(&neg_source, cfg.n_negative, &mut rng);

    let mut train_features = if cfg.use_reconstructions {
        let recons = reconstruct_windows(model, &drawn_pos)?;
        feature_rows(recons.iter())
    } else {
        feature_rows(drawn_pos.iter().copied())
    };
    let mut train_labels = vec![true; train_features.len()];
    train_features.extend(feature_rows(drawn_neg.iter().copied()));
    train_labels.resize(train_features.len(), false);

    let forest = train_random_forest(&cfg.forest, &train_features, &train_labels)?;

    let mut test_features = feature_rows(pos_test.iter().map(|g| &g.series));
    let mut test_labels = vec![true; test_features.len()];
    test_features.extend(feature_rows(neg_test.iter().map(|g| &g.series)));
    test_labels.resize(test_features.len(), false);

    let scores = rf_predict(&forest, &test_features)?;
    let echo = json!({
        "experiment": "tstr_intent",
        "n_positive": cfg.n_positive,
        "n_negative": cfg.n_negative,
        "use_reconstructions": cfg.use_reconstructions,
        "train_fraction": cfg.train_fraction,
        "seed": cfg.seed,
        "forest": cfg.forest,
        "n_test_gestures": pos_test.len(),
        "n_test_non_gestures": neg_test.len(),
    });
    compute_metrics(&ScoreSet::new(scores, test_labels)?, echo)
}

/// Train-synthetic test-real harness for one held-out user's authenticator.
///
/// The positive training class is a small real enrolment set (the earliest
/// `per_terminal` gestures at each terminal) plus, when a strategy is set,
/// `n_synthetic` decoded latent samples. The negative training class is the
/// generative model's reconstruction of every other user's gestures, real
/// impostor halves optionally added. Metrics always come from real held-out
/// windows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TstrAuthConfig {
    /// Trainer for the leave-one-out generative model; its `exclude_users`
    /// is overridden with the held-out user.
    pub vae: VaeTrainConfig,
    /// Latent sampling strategy for synthetic positives; `None` trains on the
    /// real enrolment gestures alone (the original-data baseline).
    pub strategy: Option<SampleStrategy>,
    pub n_synthetic: usize,
    /// Real enrolment gestures kept per terminal, earliest first.
    pub per_terminal: usize,
    /// Also train on the earlier half of each impostor's real gestures; real
    /// test negatives then come from the later halves only, so no window is
    /// scored by a forest that saw it unreconstructed.
    pub include_real_negatives: bool,
    pub forest: ForestSpec,
    /// Seed for synthetic sampling; the forest and the generative trainer
    /// keep their own seeds.
    pub seed: u64,
}

impl Default for TstrAuthConfig {
    fn default() -> Self {
        TstrAuthConfig {
            vae: VaeTrainConfig::default(),
            strategy: Some(SampleStrategy::adversarial()),
            n_synthetic: 500,
            per_terminal: 2,
            include_real_negatives: false,
            forest: ForestSpec::new(100, 0),
            seed: 0,
        }
    }
}

impl TstrAuthConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.per_terminal == 0 {
            return Err(EvalError::Config("per_terminal must be >= 1".into()));
        }
        if let Some(s) = &self.strategy {
            s.validate()?;
        }
        Ok(())
    }
}

/// Earliest `per_terminal` gestures at each terminal, the enrolment protocol.
fn pick_enrolment<'a>(targets: &[&'a Gesture], per_terminal: usize) -> Vec<&'a Gesture> {
    let mut buckets: BTreeMap<Option<u8>, Vec<&Gesture>> = BTreeMap::new();
    for g in targets {
        buckets.entry(g.terminal).or_default().push(g);
    }
    let mut picked = Vec::new();
    for (_, mut bucket) in buckets {
        bucket.sort_by(|a, b| (a.nfc_t_ms, &a.gesture_id).cmp(&(b.nfc_t_ms, &b.gesture_id)));
        picked.extend(bucket.into_iter().take(per_terminal));
    }
    picked
}

/// Trains the leave-one-out generative model, then runs the experiment. Use
/// [`tstr_auth_with_model`] to amortize one model over several runs.
pub fn tstr_auth(
    corpus: &[Gesture],
    held_out_user: &str,
    cfg: &TstrAuthConfig,
) -> Result<MetricsReport, EvalError> {
    cfg.validate()?;
    let mut vae_cfg = cfg.vae.clone();
    vae_cfg.exclude_users = vec![held_out_user.to_string()];
    let (model, _) = train_vae(corpus, &vae_cfg)?;
    tstr_auth_with_model(&model, corpus, held_out_user, cfg)
}

/// Runs the authentication TSTR experiment against an already-trained
/// generative model (which must not have seen the held-out user).
pub fn tstr_auth_with_model(
    model: &VaeModel,
    corpus: &[Gesture],
    held_out_user: &str,
    cfg: &TstrAuthConfig,
) -> Result<MetricsReport, EvalError> {
    cfg.validate()?;
    let targets = sorted_refs(corpus, |g| g.is_gesture && g.user_id == held_out_user);
    if targets.is_empty() {
        return Err(EvalError::MissingUser(held_out_user.to_string()));
    }
    let others = sorted_refs(corpus, |g| g.is_gesture && g.user_id != held_out_user);
    if others.is_empty() {
        return Err(EvalError::Insufficient {
            what: "impostor gesture windows",
            need: 1,
            got: 0,
        });
    }

    let enrolment = pick_enrolment(&targets, cfg.per_terminal);
    let enrolled: BTreeSet<String> = enrolment.iter().map(|g| gesture_key(g)).collect();
    let test_genuine: Vec<&Gesture> = targets
        .iter()
        .copied()
        .filter(|g| !enrolled.contains(&gesture_key(g)))
        .collect();
    if test_genuine.is_empty() {
        return Err(EvalError::Insufficient {
            what: "held-out genuine test gestures",
            need: 1,
            got: 0,
        });
    }

    let other_windows: Vec<&TimeSeries> = others.iter().map(|g| &g.series).collect();
    let other_embeddings = encode_batch(model, &other_windows)?;
    let other_mus: Vec<[f64; LATENT_DIM]> = other_embeddings.iter().map(|e| e.mu).collect();
    let recon_negatives = decode_batch(model, &other_mus)?;

    let synthetic = match &cfg.strategy {
        Some(strategy) => {
            let enrol_windows: Vec<&TimeSeries> = enrolment.iter().map(|g| &g.series).collect();
            generate_synthetic(
                model,
                strategy,
                &enrol_windows,
                &other_embeddings,
                cfg.n_synthetic,
                cfg.seed ^ EXPERIMENT_SALT,
            )?
        }
        None => Vec::new(),
    };

    // The earlier half of each impostor's gestures may join training as real
    // negatives; the later halves are then the only real test impostors.
    let mut train_real_negatives: Vec<&Gesture> = Vec::new();
    let mut test_impostors: Vec<&Gesture> = Vec::new();
    if cfg.include_real_negatives {
        let mut per_user: BTreeMap<&str, Vec<&Gesture>> = BTreeMap::new();
        for g in &others {
            per_user.entry(g.user_id.as_str()).or_default().push(g);
        }
        for (_, mut windows) in per_user {
            windows.sort_by(|a, b| (a.nfc_t_ms, &a.gesture_id).cmp(&(b.nfc_t_ms, &b.gesture_id)));
            let keep = windows.len().div_ceil(2);
            test_impostors.extend(windows.split_off(keep));
            train_real_negatives.extend(windows);
        }
        if test_impostors.is_empty() {
            return Err(EvalError::Insufficient {
                what: "held-out impostor test gestures",
                need: 1,
                got: 0,
            });
        }
    } else {
        test_impostors = others.clone();
    }

    let mut train_features = feature_rows(enrolment.iter().map(|g| &g.series));
    train_features.extend(feature_rows(synthetic.iter()));
    let mut train_labels = vec![true; train_features.len()];
    train_features.extend(feature_rows(recon_negatives.iter()));
    train_features.extend(feature_rows(train_real_negatives.iter().map(|g| &g.series)));
    train_labels.resize(train_features.len(), false);

    let forest = train_random_forest(&cfg.forest, &train_features, &train_labels)?;

    let mut test_features = feature_rows(test_genuine.iter().map(|g| &g.series));
    let mut test_labels = vec![true; test_features.len()];
    test_features.extend(feature_rows(test_impostors.iter().map(|g| &g.series)));
    test_labels.resize(test_features.len(), false);

    let scores = rf_predict(&forest, &test_features)?;
    let echo = json!({
        "experiment": "tstr_auth",
        "held_out_user": held_out_user,
        "strategy": cfg.strategy.as_ref().map(|s| s.name()),
        "n_synthetic": cfg.n_synthetic,
        "per_terminal": cfg.per_terminal,
        "include_real_negatives": cfg.include_real_negatives,
        "seed": cfg.seed,
        "forest": cfg.forest,
        "n_enrolment": enrolment.len(),
        "n_test_genuine": test_genuine.len(),
        "n_test_impostor": test_impostors.len(),
    });
    compute_metrics(&ScoreSet::new(scores, test_labels)?, echo)
}

/// Paired baseline/augmented metrics at one enrolment size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub gestures_per_terminal: usize,
    pub baseline: MetricsReport,
    pub augmented: MetricsReport,
}

/// Enrolment-burden sweep output, ready for JSON or CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub config: Value,
}

/// Measures how authentication quality grows with enrolment size, with and
/// without synthetic augmentation. One generative model is trained per call
/// and shared across all rows; the augmented arm uses `cfg.strategy`, or the
/// adversarial default when the config carries `None`.
pub fn enrolment_sweep(
    corpus: &[Gesture],
    held_out_user: &str,
    gestures_per_terminal: &[usize],
    cfg: &TstrAuthConfig,
) -> Result<SweepTable, EvalError> {
    cfg.validate()?;
    if gestures_per_terminal.is_empty() {
        return Err(EvalError::Insufficient {
            what: "sweep enrolment sizes",
            need: 1,
            got: 0,
        });
    }
    let mut vae_cfg = cfg.vae.clone();
    vae_cfg.exclude_users = vec![held_out_user.to_string()];
    let (model, _) = train_vae(corpus, &vae_cfg)?;

    let strategy = cfg.strategy.unwrap_or_else(SampleStrategy::adversarial);
    let mut rows = Vec::with_capacity(gestures_per_terminal.len());
    for &count in gestures_per_terminal {
        let baseline_cfg = TstrAuthConfig {
            per_terminal: count,
            strategy: None,
            ..cfg.clone()
        };
        let augmented_cfg = TstrAuthConfig {
            per_terminal: count,
            strategy: Some(strategy),
            ..cfg.clone()
        };
        rows.push(SweepRow {
            gestures_per_terminal: count,
            baseline: tstr_auth_with_model(&model, corpus, held_out_user, &baseline_cfg)?,
            augmented: tstr_auth_with_model(&model, corpus, held_out_user, &augmented_cfg)?,
        });
    }
    let config = json!({
        "experiment": "enrolment_sweep",
        "held_out_user": held_out_user,
        "gestures_per_terminal": gestures_per_terminal,
        "strategy": strategy.name(),
        "n_synthetic": cfg.n_synthetic,
        "include_real_negatives": cfg.include_real_negatives,
        "forest": cfg.forest,
        "seed": cfg.seed,
    });
    Ok(SweepTable { rows, config })
}

/// One CSV row per enrolment size: AUROC, EER interval, and FAR at zero
/// false rejections for both arms.
pub fn write_sweep_csv<W: Write>(mut out: W, table: &SweepTable) -> std::io::Result<()> {
    writeln!(
        out,
        "gestures_per_terminal,baseline_auroc,baseline_eer_lower,baseline_eer_upper,\
         baseline_far_at_zero,augmented_auroc,augmented_eer_lower,augmented_eer_upper,\
         augmented_far_at_zero"
    )?;
    for row in &table.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            row.gestures_per_terminal,
            row.baseline.auroc,
            row.baseline.eer.lower,
            row.baseline.eer.upper,
            row.baseline.far_at_zero,
            row.augmented.auroc,
            row.augmented.eer.lower,
            row.augmented.eer.upper,
            row.augmented.far_at_zero,
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng as _, SeedableRng as _};
    use rand_chacha::ChaCha8Rng;

    fn set(scores: &[f64], labels: &[bool]) -> ScoreSet {
        ScoreSet::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    /// Pairwise Mann-Whitney statistic with 0.5 tie credit.
    fn u_statistic(s: &ScoreSet) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &gi) in s.labels().iter().enumerate() {
            if !gi {
                continue;
            }
            for (j, &gj) in s.labels().iter().enumerate() {
                if gj {
                    continue;
                }
                pairs += 1.0;
                let (a, b) = (s.scores()[i], s.scores()[j]);
                if a > b {
                    wins += 1.0;
                } else if a == b {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn four_point_hand_case_matches_enumeration() {
        let s = set(&[0.9, 0.8, 0.7, 0.85], &[true, true, false, false]);
        let roc = roc_curve(&s).unwrap();
        let expect = [
            (f64::INFINITY, 0.0, 1.0),
            (0.9, 0.0, 0.5),
            (0.85, 0.5, 0.5),
            (0.8, 0.5, 0.0),
            (0.7, 1.0, 0.0),
        ];
        assert_eq!(roc.len(), expect.len());
        for (p, (t, far, frr)) in roc.iter().zip(expect) {
            assert_eq!(p.threshold, t);
            assert!((p.far - far).abs() < 1e-12);
            assert!((p.frr - frr).abs() < 1e-12);
            assert!((p.tar - (1.0 - frr)).abs() < 1e-12);
        }
        assert!((auroc(&s).unwrap() - 0.75).abs() < 1e-12);

        // Symmetric 2+2 case crosses exactly at one half.
        let eer = eer_interval(&s).unwrap();
        assert_eq!(eer.lower, 0.5);
        assert_eq!(eer.upper, 0.5);
    }

    #[test]
    fn perfect_separation_metrics() {
        let s = set(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]);
        let roc = roc_curve(&s).unwrap();
        assert!(roc.iter().any(|p| p.far == 0.0 && p.frr == 0.0));
        assert_eq!(auroc(&s).unwrap(), 1.0);
        let eer = eer_interval(&s).unwrap();
        assert_eq!((eer.lower, eer.upper), (0.0, 0.0));
        assert_eq!(far_at_zero(&s, 0.01).unwrap(), 0.0);
    }

    #[test]
    fn all_equal_scores_degenerate() {
        let s = set(&[0.5, 0.5, 0.5, 0.5], &[true, false, true, false]);
        let roc = roc_curve(&s).unwrap();
        assert_eq!(roc.len(), 2);
        assert_eq!((roc[0].far, roc[0].frr), (0.0, 1.0));
        assert_eq!((roc[1].far, roc[1].frr), (1.0, 0.0));
        assert!((auroc(&s).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(far_at_zero(&s, 0.01).unwrap(), 1.0);
    }

    #[test]
    fn auroc_matches_u_statistic_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for round in 0..20 {
            let n = 50;
            let quantize = round % 2 == 0;
            let scores: Vec<f64> = (0..n)
                .map(|_| {
                    let v: f64 = rng.gen_range(0.0..1.0);
                    // Half the rounds use a coarse lattice to force ties.
                    if quantize {
                        (v * 10.0).round() / 10.0
                    } else {
                        v
                    }
                })
                .collect();
            let labels: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
            let s = ScoreSet::new(scores, labels).unwrap();
            assert!((auroc(&s).unwrap() - u_statistic(&s)).abs() < 1e-9);
        }
    }

    #[test]
    fn eer_interval_widens_on_coarse_scores() {
        // Six points, impostor mass tied at 0.8: FAR jumps from 0 to 3/4
        // while FRR sits at 1/2, so the crossing is a genuine bracket.
        let s = set(
            &[0.9, 0.7, 0.8, 0.8, 0.8, 0.3],
            &[true, true, false, false, false, false],
        );
        let eer = eer_interval(&s).unwrap();
        assert!((eer.lower - 0.5).abs() < 1e-12);
        assert!((eer.upper - 0.75).abs() < 1e-12);
        assert!(eer.lower < eer.upper);
    }

    #[test]
    fn far_at_zero_hand_fixture() {
        // Lowest genuine score 0.5; impostors at or above 0.5: three of ten.
        let mut scores = vec![0.6, 0.5];
        let mut labels = vec![true, true];
        scores.extend([0.55, 0.52, 0.5, 0.4, 0.35, 0.3, 0.25, 0.2, 0.15, 0.1]);
        labels.extend([false; 10]);
        let s = ScoreSet::new(scores, labels).unwrap();
        assert!((far_at_zero(&s, 0.01).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn far_at_zero_is_one_when_genuine_scores_lowest() {
        let s = set(&[0.2, 0.5, 0.6], &[true, false, false]);
        assert_eq!(far_at_zero(&s, 0.01).unwrap(), 1.0);
    }

    #[test]
    fn single_class_inputs_rejected() {
        let s = set(&[0.2, 0.5], &[true, true]);
        assert!(matches!(roc_curve(&s), Err(EvalError::SingleClass)));
        assert!(matches!(auroc(&s), Err(EvalError::SingleClass)));
        assert!(matches!(eer_interval(&s), Err(EvalError::SingleClass)));
        assert!(matches!(
            far_at_zero(&s, 0.01),
            Err(EvalError::SingleClass)
        ));
    }

    #[test]
    fn score_set_validation() {
        assert!(matches!(
            ScoreSet::new(vec![], vec![]),
            Err(EvalError::Empty)
        ));
        assert!(matches!(
            ScoreSet::new(vec![0.5], vec![true, false]),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert!(matches!(
            ScoreSet::new(vec![f64::NAN], vec![true]),
            Err(EvalError::NonFiniteScore(0))
        ));
    }

    #[test]
    fn complement_symmetry_without_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let n = 31;
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
                continue;
            }
            let a = auroc(&ScoreSet::new(scores.clone(), labels.clone()).unwrap()).unwrap();
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let b = auroc(&ScoreSet::new(neg, labels).unwrap()).unwrap();
            assert!((a + b - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn metrics_invariant_under_monotone_transform() {
        let scores = vec![0.9, 0.1, 0.4, 0.8, 0.3, 0.7, 0.2, 0.6];
        let labels = vec![true, false, false, true, false, true, false, true];
        let base = ScoreSet::new(scores.clone(), labels.clone()).unwrap();
        let cubed = ScoreSet::new(
            scores.iter().map(|s| s.powi(3) * 2.0 + 1.0).collect(),
            labels,
        )
        .unwrap();

        assert_eq!(auroc(&base).unwrap(), auroc(&cubed).unwrap());
        assert_eq!(eer_interval(&base).unwrap(), eer_interval(&cubed).unwrap());
        assert_eq!(
            far_at_zero(&base, 0.01).unwrap(),
            far_at_zero(&cubed, 0.01).unwrap()
        );
    }

    #[test]
    fn report_serializes_and_round_trips() {
        let s = set(&[0.9, 0.8, 0.7, 0.85], &[true, true, false, false]);
        let report = compute_metrics(&s, serde_json::json!({"run": "unit"})).unwrap();
        let text = serde_json::to_string_pretty(&report).unwrap();
        let back: MetricsReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back.auroc, report.auroc);
        assert_eq!(back.eer, report.eer);
        assert_eq!(back.roc.len(), report.roc.len());
        assert_eq!(back.roc[0].threshold, f64::INFINITY);

        let mut csv = Vec::new();
        write_roc_csv(&mut csv, &report.roc).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("threshold,far,frr,tar\ninf,0,1,0\n"));
        assert_eq!(text.lines().count(), report.roc.len() + 1);
    }
}
