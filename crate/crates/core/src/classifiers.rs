//! Authentication classifiers: five ~70k-parameter neural architectures on
//! raw gesture windows, and a random forest on summary feature vectors.
//!
//! Neural training follows a fixed protocol: one binary model per target
//! user, positives = the target's gesture windows, negatives = every other
//! user's gesture windows, weighted cross-entropy 4:1 in favour of the
//! positive class, Adam, and early stopping on validation loss with the best
//! epoch's parameters restored. Channel normalization is fitted on the
//! training split only.

use std::collections::BTreeSet;

use rand::seq::SliceRandom as _;
use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    apply_norm, fit_norm_stats, gesture_key, temporal_split, DatasetError, Gesture, SplitConfig,
    SplitSpec,
};
use crate::diffcore::{
    init_uniform, weighted_bce, AdamState, DiffError, Params, Tape, Tensor, VarId,
};
use crate::series::TimeSeries;
use crate::{GESTURE_CHANNELS, GESTURE_LEN};

/// Every architecture must land in this realized-parameter window.
pub const PARAM_BUDGET_MIN: usize = 60_000;
pub const PARAM_BUDGET_MAX: usize = 80_000;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("{arch}: {count} parameters outside budget [{PARAM_BUDGET_MIN}, {PARAM_BUDGET_MAX}]")]
    Budget { arch: String, count: usize },
    #[error("bad training config: {0}")]
    Config(String),
    #[error("no positive training samples for user {user:?}")]
    NoPositiveSamples { user: String },
    #[error("{0} set is empty after the split")]
    EmptySet(&'static str),
    #[error("input {got_rows}x{got_cols} does not match expected {rows}x{cols}")]
    InputShape {
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("feature row {row} has {got} values, forest expects {expected}")]
    FeatureWidth {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("random forest needs both classes in training data")]
    SingleClass,
    #[error("forest spec: {0}")]
    ForestConfig(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

// ── architectures ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArchName {
    Mlp,
    ConvNet,
    Gru,
    SimpleMix,
    ComplexMix,
}

impl ArchName {
    pub const ALL: [ArchName; 5] = [
        ArchName::Mlp,
        ArchName::ConvNet,
        ArchName::Gru,
        ArchName::SimpleMix,
        ArchName::ComplexMix,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ArchName::Mlp => "mlp",
            ArchName::ConvNet => "convnet",
            ArchName::Gru => "gru",
            ArchName::SimpleMix => "simplemix",
            ArchName::ComplexMix => "complexmix",
        }
    }

    pub fn parse(s: &str) -> Option<ArchName> {
        ArchName::ALL.iter().copied().find(|a| a.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: ArchName,
    pub input_channels: usize,
    pub input_len: usize,
}

impl ArchSpec {
    pub fn new(name: ArchName) -> ArchSpec {
        ArchSpec {
            name,
            input_channels: GESTURE_CHANNELS,
            input_len: GESTURE_LEN,
        }
    }
}

/// One stage of a fixed forward plan. Convolutions are stride-1,
/// length-preserving, and ReLU-activated; pooling halves time with ceil
/// semantics; heads finish dense 32 -> dense 16 -> 1 sigmoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    ConvRelu { kernel: usize, out_channels: usize },
    /// Parallel k3/k5/k7 convolutions, concatenated, then a 1x1 projection.
    Inception {
        branch_channels: usize,
        proj_channels: usize,
    },
    Pool,
    Gru { hidden: usize },
    LastColumn,
    Flatten,
    DenseRelu { out: usize },
    DenseSigmoid { out: usize },
}

fn head() -> Vec<Step> {
    vec![
        Step::DenseRelu { out: 32 },
        Step::DenseRelu { out: 16 },
        Step::DenseSigmoid { out: 1 },
    ]
}

fn plan_for(name: ArchName) -> Vec<Step> {
    use Step::*;
    let mut plan = match name {
        ArchName::Mlp => vec![Flatten, DenseRelu { out: 54 }],
        ArchName::ConvNet => vec![
            ConvRelu { kernel: 5, out_channels: 24 },
            Pool,
            ConvRelu { kernel: 5, out_channels: 40 },
            Pool,
            ConvRelu { kernel: 3, out_channels: 56 },
            Pool,
            ConvRelu { kernel: 3, out_channels: 72 },
            Pool,
            ConvRelu { kernel: 3, out_channels: 96 },
            Pool,
            Flatten,
        ],
        ArchName::Gru => vec![
            Gru { hidden: 64 },
            Gru { hidden: 64 },
            Gru { hidden: 64 },
            LastColumn,
        ],
        ArchName::SimpleMix => vec![
            ConvRelu { kernel: 3, out_channels: 16 },
            Pool,
            ConvRelu { kernel: 3, out_channels: 24 },
            Pool,
            ConvRelu { kernel: 3, out_channels: 32 },
            Pool,
            ConvRelu { kernel: 3, out_channels: 48 },
            Pool,
            ConvRelu { kernel: 3, out_channels: 64 },
            Pool,
            Gru { hidden: 48 },
            Gru { hidden: 48 },
            Gru { hidden: 48 },
            LastColumn,
        ],
        ArchName::ComplexMix => {
            let mut p = Vec::new();
            for _ in 0..4 {
                p.push(Inception {
                    branch_channels: 12,
                    proj_channels: 32,
                });
                p.push(Pool);
            }
            p.extend([
                Gru { hidden: 48 },
                Gru { hidden: 48 },
                Gru { hidden: 48 },
                LastColumn,
            ]);
            p
        }
    };
    plan.extend(head());
    plan
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Map { channels: usize, timesteps: usize },
    Flat(usize),
}

/// A built authentication model: beside the parameters it keeps the plan so
/// forward passes and checkpoint metadata stay in sync with construction.
#[derive(Debug, Clone)]
pub struct AuthModel {
    pub spec: ArchSpec,
    pub params: Params,
    steps: Vec<Step>,
    sequence_timesteps: Option<usize>,
}

/// Instantiates an architecture with seeded uniform fan-in initialization.
/// Fails if the realized parameter count leaves the budget window.
pub fn build_architecture(spec: &ArchSpec, seed: u64) -> Result<AuthModel, ClassifierError> {
    let steps = plan_for(spec.name);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Params::new();
    let mut shape = Shape::Map {
        channels: spec.input_channels,
        timesteps: spec.input_len,
    };
    let mut sequence_timesteps = None;

    let conv_block =
        |params: &mut Params, rng: &mut ChaCha8Rng, tag: &str, inc: usize, out: usize, k: usize| {
            params.add(
                &format!("{tag}.w"),
                init_uniform(rng, inc * k, &[out, inc, k]),
            );
            params.add(&format!("{tag}.b"), init_uniform(rng, inc * k, &[out]));
        };

    for (i, step) in steps.iter().enumerate() {
        match *step {
            Step::ConvRelu { kernel, out_channels } => {
                let Shape::Map { channels, timesteps } = shape else {
                    return Err(ClassifierError::Config(format!(
                        "step {i}: convolution after flatten"
                    )));
                };
                conv_block(&mut params, &mut rng, &format!("s{i}.conv"), channels, out_channels, kernel);
                shape = Shape::Map { channels: out_channels, timesteps };
            }
            Step::Inception { branch_channels, proj_channels } => {
                let Shape::Map { channels, timesteps } = shape else {
                    return Err(ClassifierError::Config(format!(
                        "step {i}: inception after flatten"
                    )));
                };
                for k in [3usize, 5, 7] {
                    conv_block(&mut params, &mut rng, &format!("s{i}.k{k}"), channels, branch_channels, k);
                }
                conv_block(&mut params, &mut rng, &format!("s{i}.proj"), 3 * branch_channels, proj_channels, 1);
                shape = Shape::Map { channels: proj_channels, timesteps };
            }
            Step::Pool => {
                let Shape::Map { channels, timesteps } = shape else {
                    return Err(ClassifierError::Config(format!("step {i}: pool after flatten")));
                };
                shape = Shape::Map { channels, timesteps: timesteps.div_ceil(2) };
            }
            Step::Gru { hidden } => {
                let Shape::Map { channels, timesteps } = shape else {
                    return Err(ClassifierError::Config(format!("step {i}: gru after flatten")));
                };
                params.add(&format!("s{i}.gru.w"), init_uniform(&mut rng, channels, &[3 * hidden, channels]));
                params.add(&format!("s{i}.gru.u"), init_uniform(&mut rng, hidden, &[3 * hidden, hidden]));
                params.add(&format!("s{i}.gru.b"), init_uniform(&mut rng, hidden, &[3 * hidden]));
                shape = Shape::Map { channels: hidden, timesteps };
            }
            Step::LastColumn => {
                let Shape::Map { channels, timesteps } = shape else {
                    return Err(ClassifierError::Config(format!("step {i}: column after flatten")));
                };
                sequence_timesteps = Some(timesteps);
                shape = Shape::Flat(channels);
            }
            Step::Flatten => {
                let Shape::Map { channels, timesteps } = shape else {
                    return Err(ClassifierError::Config(format!("step {i}: double flatten")));
                };
                sequence_timesteps = Some(timesteps);
                shape = Shape::Flat(channels * timesteps);
            }
            Step::DenseRelu { out } | Step::DenseSigmoid { out } => {
                let n = match shape {
                    Shape::Flat(n) => n,
                    Shape::Map { channels, timesteps } => channels * timesteps,
                };
                params.add(&format!("s{i}.dense.w"), init_uniform(&mut rng, n, &[out, n]));
                params.add(&format!("s{i}.dense.b"), init_uniform(&mut rng, n, &[out]));
                shape = Shape::Flat(out);
            }
        }
    }

    let count = params.total_len();
    if !(PARAM_BUDGET_MIN..=PARAM_BUDGET_MAX).contains(&count) {
        return Err(ClassifierError::Budget {
            arch: spec.name.as_str().to_string(),
            count,
        });
    }
    Ok(AuthModel {
        spec: spec.clone(),
        params,
        steps,
        sequence_timesteps,
    })
}

impl AuthModel {
    /// Timesteps of the final feature map entering the recurrent stack or
    /// flatten (13 for the inception stack, 7 for the five-pool stacks).
    pub fn sequence_timesteps(&self) -> Option<usize> {
        self.sequence_timesteps
    }

    /// Scores one window on a caller-owned tape so the sigmoid output can
    /// feed a larger differentiable objective. `vars` must come from
    /// `tape.bind(&self.params)`; the returned node differentiates back into
    /// every parameter the plan touches.
    pub fn score_on_tape(
        &self,
        tape: &mut Tape,
        vars: &[VarId],
        series: &TimeSeries,
    ) -> Result<VarId, ClassifierError> {
        let input = tape.leaf(self.input_tensor(series)?);
        self.forward_on_tape(tape, vars, input)
    }

    /// Runs the plan on an already-bound tape; `vars` must come from
    /// `tape.bind(&self.params)`.
    fn forward_on_tape(
        &self,
        tape: &mut Tape,
        vars: &[VarId],
        input: VarId,
    ) -> Result<VarId, ClassifierError> {
        let mut cursor = 0usize;
        let mut take = |n: usize| {
            let ids = &vars[cursor..cursor + n];
            cursor += n;
            ids.to_vec()
        };
        let mut x = input;
        for step in &self.steps {
            x = match *step {
                Step::ConvRelu { kernel, .. } => {
                    let p = take(2);
                    let y = tape.conv1d(p[0], p[1], x, kernel, crate::diffcore::Padding::Same)?;
                    tape.relu(y)
                }
                Step::Inception { .. } => {
                    let mut branches = Vec::new();
                    let mut branch_params = Vec::new();
                    for _ in 0..3 {
                        let p = take(2);
                        branch_params.push((p[0], p[1]));
                    }
                    let proj = take(2);
                    for (k, (w, b)) in [3usize, 5, 7].into_iter().zip(branch_params) {
                        let y = tape.conv1d(w, b, x, k, crate::diffcore::Padding::Same)?;
                        branches.push(tape.relu(y));
                    }
                    let cat = tape.concat(&branches)?;
                    let y = tape.conv1d(proj[0], proj[1], cat, 1, crate::diffcore::Padding::Same)?;
                    tape.relu(y)
                }
                Step::Pool => tape.maxpool1d(x)?,
                Step::Gru { .. } => {
                    let p = take(3);
                    tape.gru(p[0], p[1], p[2], x)?
                }
                Step::LastColumn => {
                    let t = tape.value(x).dims2().expect("map shape").1;
                    tape.column(x, t - 1)?
                }
                Step::Flatten => tape.flatten(x),
                Step::DenseRelu { .. } => {
                    let p = take(2);
                    let y = tape.dense(p[0], p[1], x)?;
                    tape.relu(y)
                }
                Step::DenseSigmoid { .. } => {
                    let p = take(2);
                    let y = tape.dense(p[0], p[1], x)?;
                    tape.sigmoid(y)
                }
            };
        }
        Ok(x)
    }

    fn input_tensor(&self, series: &TimeSeries) -> Result<Tensor, ClassifierError> {
        if series.rows() != self.spec.input_len || series.cols() != self.spec.input_channels {
            return Err(ClassifierError::InputShape {
                rows: self.spec.input_len,
                cols: self.spec.input_channels,
                got_rows: series.rows(),
                got_cols: series.cols(),
            });
        }
        Ok(Tensor::matrix(
            series.cols(),
            series.rows(),
            series.to_channel_major(),
        ))
    }
}

/// Forward-only scoring of prepared input tensors, batched to bound tape
/// memory.
fn forward_scores(model: &AuthModel, inputs: &[Tensor]) -> Result<Vec<f64>, ClassifierError> {
    let mut scores = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(64.max(1)) {
        let mut tape = Tape::new();
        let vars = tape.bind(&model.params);
        for t in chunk {
            let input = tape.leaf(t.clone());
            let out = model.forward_on_tape(&mut tape, &vars, input)?;
            scores.push(tape.value(out).data[0]);
        }
    }
    Ok(scores)
}

/// Scores raw gesture windows with a trained model. Scores are sigmoid
/// outputs in (0, 1), deterministic, and independent of batch order.
pub fn predict_proba(
    model: &AuthModel,
    inputs: &[TimeSeries],
) -> Result<Vec<f64>, ClassifierError> {
    let tensors: Vec<Tensor> = inputs
        .iter()
        .map(|s| model.input_tensor(s))
        .collect::<Result<_, _>>()?;
    forward_scores(model, &tensors)
}

// ── training protocol ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    /// Positive-class weight in the cross-entropy (negatives weigh 1).
    pub pos_weight: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// When set, keep only this fraction of the target user's training
    /// gestures (earliest first): the reduced-enrolment setting.
    pub limited_fraction: Option<f64>,
    pub split: SplitConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            pos_weight: 4.0,
            patience: 150,
            max_epochs: 2000,
            batch_size: 32,
            seed: 0,
            limited_fraction: None,
            split: SplitConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.patience == 0 {
            return Err(ClassifierError::Config("patience must be >= 1".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(ClassifierError::Config(
                "batch_size and max_epochs must be >= 1".into(),
            ));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(ClassifierError::Config("lr must be finite and >= 0".into()));
        }
        if let Some(f) = self.limited_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(ClassifierError::Config(format!(
                    "limited_fraction {f} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub n_train: usize,
    pub n_val: usize,
    pub n_train_positives: usize,
}

/// Keys of the `ceil(fraction * n)` earliest gestures (by anchor timestamp,
/// then id) in `gestures`.
fn earliest_fraction_keys(gestures: &[&Gesture], fraction: f64) -> BTreeSet<String> {
    let mut order: Vec<&Gesture> = gestures.to_vec();
    order.sort_by(|a, b| (a.nfc_t_ms, &a.gesture_id).cmp(&(b.nfc_t_ms, &b.gesture_id)));
    let keep = ((fraction * order.len() as f64).ceil() as usize).min(order.len());
    order[..keep].iter().map(|g| gesture_key(g)).collect()
}

/// Decorrelates the shuffle stream from the init stream that shares the seed.
const SHUFFLE_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

struct PreparedSet {
    inputs: Vec<Tensor>,
    labels: Vec<bool>,
}

/// Trains one binary authentication model for `target_user` on a corpus of
/// gesture windows. Splits temporally per user, fits normalization on the
/// training portion only, and restores the parameters of the best validation
/// epoch. Returns the per-epoch loss history.
pub fn train_classifier(
    model: &mut AuthModel,
    corpus: &[Gesture],
    target_user: &str,
    cfg: &TrainConfig,
) -> Result<TrainHistory, ClassifierError> {
    cfg.validate()?;
    let split = temporal_split(corpus, &cfg.split)?;

    // Authentication uses gesture windows only: positives from the target
    // user, negatives from everyone else.
    let labeled = |g: &&Gesture| g.is_gesture;
    let mut train_refs: Vec<&Gesture> = split
        .select(corpus, &split.train)
        .into_iter()
        .filter(labeled)
        .collect();
    let val_refs: Vec<&Gesture> = split
        .select(corpus, &split.validation)
        .into_iter()
        .filter(labeled)
        .collect();

    if let Some(fraction) = cfg.limited_fraction {
        let positives: Vec<&Gesture> = train_refs
            .iter()
            .copied()
            .filter(|g| g.user_id == target_user)
            .collect();
        let keep = earliest_fraction_keys(&positives, fraction);
        train_refs.retain(|g| g.user_id != target_user || keep.contains(&gesture_key(g)));
    }

    let n_train_positives = train_refs
        .iter()
        .filter(|g| g.user_id == target_user)
        .count();
    if n_train_positives == 0 {
        return Err(ClassifierError::NoPositiveSamples {
            user: target_user.to_string(),
        });
    }
    if train_refs.is_empty() {
        return Err(ClassifierError::EmptySet("training"));
    }
    if val_refs.is_empty() {
        return Err(ClassifierError::EmptySet("validation"));
    }

    let train_owned: Vec<Gesture> = train_refs.iter().map(|g| (*g).clone()).collect();
    let stats = fit_norm_stats(&train_owned)?;
    let prepare = |refs: &[&Gesture]| -> Result<PreparedSet, ClassifierError> {
        let mut inputs = Vec::with_capacity(refs.len());
        let mut labels = Vec::with_capacity(refs.len());
        for g in refs {
            let normed = apply_norm(g, &stats);
            inputs.push(model.input_tensor(&normed.series)?);
            labels.push(g.user_id == target_user);
        }
        Ok(PreparedSet { inputs, labels })
    };
    let train = prepare(&train_refs)?;
    let val = prepare(&val_refs)?;

    let mut adam = AdamState::new(&model.params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
    let mut order: Vec<usize> = (0..train.inputs.len()).collect();

    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        n_train: train.inputs.len(),
        n_val: val.inputs.len(),
        n_train_positives,
    };
    let mut best_val = f64::INFINITY;
    let mut best_params = model.params.clone();

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut weight_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let vars = tape.bind(&model.params);
            let mut score_vars = Vec::with_capacity(chunk.len());
            let mut scores = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let input = tape.leaf(train.inputs[i].clone());
                let out = model.forward_on_tape(&mut tape, &vars, input)?;
                scores.push(tape.value(out).data[0]);
                score_vars.push(out);
                labels.push(train.labels[i]);
            }
            let (loss, dscores) = weighted_bce(&scores, &labels, cfg.pos_weight);
            let wsum: f64 = labels
                .iter()
                .map(|&y| if y { cfg.pos_weight } else { 1.0 })
                .sum();
            loss_sum += loss * wsum;
            weight_sum += wsum;

            let seeds: Vec<(VarId, Vec<f64>)> = score_vars
                .into_iter()
                .zip(dscores)
                .map(|(v, d)| (v, vec![d]))
                .collect();
            tape.backward(&seeds);
            let grads: Vec<Vec<f64>> = vars.iter().map(|v| tape.grad(*v).to_vec()).collect();
            adam.step(&mut model.params, &grads);
        }
        history.train_loss.push(loss_sum / weight_sum);

        let val_scores = forward_scores(model, &val.inputs)?;
        let (val_loss, _) = weighted_bce(&val_scores, &val.labels, cfg.pos_weight);
        history.val_loss.push(val_loss);

        if val_loss < best_val {
            best_val = val_loss;
            history.best_epoch = epoch;
            best_params = model.params.clone();
        } else if epoch - history.best_epoch >= cfg.patience {
            history.stopped_early = true;
            break;
        }
    }
    model.params = best_params;
    Ok(history)
}

/// Normalizes and scores arbitrary gesture windows with the statistics of a
/// training split; convenience for evaluating a trained model on held-out
/// data. Fitting statistics is the caller's business; see
/// [`crate::dataset::fit_norm_stats`].
pub fn predict_proba_normalized(
    model: &AuthModel,
    stats: &crate::dataset::NormStats,
    gestures: &[&Gesture],
) -> Result<Vec<f64>, ClassifierError> {
    let tensors: Vec<Tensor> = gestures
        .iter()
        .map(|g| model.input_tensor(&apply_norm(g, stats).series))
        .collect::<Result<_, _>>()?;
    forward_scores(model, &tensors)
}

/// Re-derives the training-split normalization used by [`train_classifier`]
/// for a given corpus and config (the split is deterministic, so this
/// reproduces the exact statistics).
pub fn training_norm_stats(
    corpus: &[Gesture],
    cfg: &TrainConfig,
    target_user: &str,
) -> Result<(SplitSpec, crate::dataset::NormStats), ClassifierError> {
    let split = temporal_split(corpus, &cfg.split)?;
    let mut train_refs: Vec<&Gesture> = split
        .select(corpus, &split.train)
        .into_iter()
        .filter(|g| g.is_gesture)
        .collect();
    if let Some(fraction) = cfg.limited_fraction {
        let positives: Vec<&Gesture> = train_refs
            .iter()
            .copied()
            .filter(|g| g.user_id == target_user)
            .collect();
        let keep = earliest_fraction_keys(&positives, fraction);
        train_refs.retain(|g| g.user_id != target_user || keep.contains(&gesture_key(g)));
    }
    let owned: Vec<Gesture> = train_refs.iter().map(|g| (*g).clone()).collect();
    let stats = fit_norm_stats(&owned)?;
    Ok((split, stats))
}

// ── random forest ────────────────────────────────────────────────────────────

/// Forest configuration. Bootstrap resampling and sqrt(n_features) candidate
/// features per split are fixed protocol, not knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestSpec {
    pub n_trees: usize,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl ForestSpec {
    pub fn new(n_trees: usize, seed: u64) -> ForestSpec {
        ForestSpec {
            n_trees,
            min_samples_leaf: 1,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        vote: bool,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Forest {
    pub spec: ForestSpec,
    pub n_features: usize,
    pub trees: Vec<TreeNode>,
}

/// Gini-grown CART forest on bootstrap resamples. Each split examines
/// `floor(sqrt(n_features))` candidate features; ties in impurity go to the
/// lowest feature index (candidates are scanned in ascending order and only
/// strict improvements replace the incumbent), which together with per-tree
/// seeds derived from the root seed makes training fully deterministic.
pub fn train_random_forest(
    spec: &ForestSpec,
    features: &[Vec<f64>],
    labels: &[bool],
) -> Result<Forest, ClassifierError> {
    if spec.n_trees == 0 {
        return Err(ClassifierError::ForestConfig("n_trees must be >= 1".into()));
    }
    if spec.min_samples_leaf == 0 {
        return Err(ClassifierError::ForestConfig(
            "min_samples_leaf must be >= 1".into(),
        ));
    }
    if features.len() != labels.len() || features.is_empty() {
        return Err(ClassifierError::ForestConfig(format!(
            "{} feature rows vs {} labels",
            features.len(),
            labels.len()
        )));
    }
    let n_features = features[0].len();
    for (row, f) in features.iter().enumerate() {
        if f.len() != n_features {
            return Err(ClassifierError::FeatureWidth {
                row,
                expected: n_features,
                got: f.len(),
            });
        }
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(ClassifierError::SingleClass);
    }

    let mtry = ((n_features as f64).sqrt().floor() as usize).clamp(1, n_features);
    let mut root_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut trees = Vec::with_capacity(spec.n_trees);
    for _ in 0..spec.n_trees {
        let tree_seed: u64 = root_rng.gen();
        let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);
        let sample: Vec<usize> = (0..features.len())
            .map(|_| rng.gen_range(0..features.len()))
            .collect();
        trees.push(grow_tree(
            features,
            labels,
            &sample,
            mtry,
            spec.min_samples_leaf,
            &mut rng,
        ));
    }
    Ok(Forest {
        spec: spec.clone(),
        n_features,
        trees,
    })
}

fn gini_sum(pos: usize, n: usize) -> f64 {
    // Weighted impurity contribution n * (1 - p^2 - q^2); comparing sums
    // avoids dividing by the constant node size.
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    n as f64 * (1.0 - p * p - (1.0 - p) * (1.0 - p))
}

fn grow_tree(
    features: &[Vec<f64>],
    labels: &[bool],
    indices: &[usize],
    mtry: usize,
    min_leaf: usize,
    rng: &mut ChaCha8Rng,
) -> TreeNode {
    let n = indices.len();
    let pos = indices.iter().filter(|&&i| labels[i]).count();
    let majority = TreeNode::Leaf { vote: pos * 2 > n };
    if pos == 0 || pos == n || n < 2 * min_leaf {
        return majority;
    }

    let n_features = features[0].len();
    let mut candidates = rand::seq::index::sample(rng, n_features, mtry).into_vec();
    candidates.sort_unstable();

    let parent = gini_sum(pos, n);
    let mut best: Option<(f64, usize, f64)> = None; // (weighted gini, feature, threshold)
    for &f in &candidates {
        let mut rows: Vec<(f64, bool)> = indices.iter().map(|&i| (features[i][f], labels[i])).collect();
        rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut left_n = 0usize;
        let mut left_pos = 0usize;
        for cut in 0..n - 1 {
            left_n += 1;
            if rows[cut].1 {
                left_pos += 1;
            }
            if rows[cut].0 == rows[cut + 1].0 {
                continue; // no threshold separates equal values
            }
            let right_n = n - left_n;
            if left_n < min_leaf || right_n < min_leaf {
                continue;
            }
            let score = gini_sum(left_pos, left_n) + gini_sum(pos - left_pos, right_n);
            if best.map_or(score < parent, |(b, _, _)| score < b) {
                let threshold = (rows[cut].0 + rows[cut + 1].0) / 2.0;
                best = Some((score, f, threshold));
            }
        }
    }

    let Some((_, feature, threshold)) = best else {
        return majority;
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
        .iter()
        .partition(|&&i| features[i][feature] < threshold);
    if left_idx.is_empty() || right_idx.is_empty() {
        return majority;
    }
    TreeNode::Split {
        feature,
        threshold,
        left: Box::new(grow_tree(features, labels, &left_idx, mtry, min_leaf, rng)),
        right: Box::new(grow_tree(features, labels, &right_idx, mtry, min_leaf, rng)),
    }
}

fn tree_vote(tree: &TreeNode, row: &[f64]) -> bool {
    match tree {
        TreeNode::Leaf { vote } => *vote,
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            if row[*feature] < *threshold {
                tree_vote(left, row)
            } else {
                tree_vote(right, row)
            }
        }
    }
}

/// Scores = fraction of trees voting positive, so values lie on the lattice
/// k / n_trees.
pub fn rf_predict(forest: &Forest, features: &[Vec<f64>]) -> Result<Vec<f64>, ClassifierError> {
    for (row, f) in features.iter().enumerate() {
        if f.len() != forest.n_features {
            return Err(ClassifierError::FeatureWidth {
                row,
                expected: forest.n_features,
                got: f.len(),
            });
        }
    }
    Ok(features
        .iter()
        .map(|row| {
            let votes = forest.trees.iter().filter(|t| tree_vote(t, row)).count();
            votes as f64 / forest.trees.len() as f64
        })
        .collect())
}
