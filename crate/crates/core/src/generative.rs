//! Regularized sequence autoencoder over gesture windows.
//!
//! The encoder maps a [200 x 6] window to a 10-dimensional Gaussian posterior
//! (mean and log-variance). The decoder runs stacked GRU layers on the latent
//! vector and upsamples through convolutional stages back to a [200 x 6]
//! window with a linear output. A small per-user scoring head on the first
//! five latent dimensions supplies a ranking objective so the front half of
//! the latent space carries user identity while the tail stays free for
//! everything else.
//!
//! Training minimizes `recon + beta * reg + alpha * ranking` where the
//! regularizer is either the Gaussian-prior KL term, an energy statistic
//! against prior samples, or absent. Four latent sampling strategies turn a
//! handful of enrolment windows into arbitrarily many synthetic ones.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::dataset::Gesture;
use crate::diffcore::{
    init_uniform, load_checkpoint, save_checkpoint, AdamState, DiffError, Padding, Params, Tape,
    Tensor, VarId,
};
use crate::distances::{
    combined_loss_prepared, prepare_target, DistanceError, LossKind, LossSpec, PreparedTarget,
};
use crate::{TimeSeries, GESTURE_CHANNELS, GESTURE_LEN};

/// Latent dimensionality; fixed by the architecture.
pub const LATENT_DIM: usize = 10;
/// Leading latent dimensions visible to the per-user scoring head.
pub const AUTH_DIMS: usize = 5;

const INCEPTION_BRANCH_CHANNELS: usize = 12;
const INCEPTION_PROJ_CHANNELS: usize = 32;
const ENC_BLOCKS: usize = 4;
const GRU_HIDDEN: usize = 48;
const GRU_LAYERS: usize = 3;
/// Window length after four ceil-mode halvings: 200 -> 100 -> 50 -> 25 -> 13.
const DEC_SEQ_LEN: usize = 13;
const DEC_STAGES: [(usize, usize); 4] = [(25, 32), (50, 24), (100, 16), (200, GESTURE_CHANNELS)];
const AUTH_HIDDEN: usize = 16;

const TRAIN_SALT: u64 = 0xA076_1D64_78BD_642F;

#[derive(Debug, Error)]
pub enum GenerativeError {
    #[error("autoencoder configuration error: {0}")]
    Config(String),
    #[error("corpus has no usable gesture windows after exclusions")]
    EmptyCorpus,
    #[error("need at least {need} {role} embedding(s), got {got}")]
    TooFewEmbeddings {
        role: &'static str,
        need: usize,
        got: usize,
    },
    #[error("window must be {GESTURE_LEN} x {GESTURE_CHANNELS}, got {rows} x {cols}")]
    WindowShape { rows: usize, cols: usize },
    #[error("checkpoint does not hold a sequence autoencoder: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Distance(#[from] DistanceError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Which distribution-matching penalty the training objective carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    /// Closed-form KL of each posterior against a standard Gaussian; the
    /// decoder sees reparametrized samples.
    Vae,
    /// Energy statistic between the batch of posterior means and fresh prior
    /// samples; the encoder is used deterministically (z = mu).
    Wae,
    /// No regularizer; a plain autoencoder with reparametrized sampling.
    None,
}

/// Distance inside the energy statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaeKernel {
    /// Plain Euclidean distance; the statistic is an energy distance, zero in
    /// expectation iff both samples share a distribution.
    Euclidean,
    /// Squared Euclidean distance; the statistic collapses to twice the
    /// squared gap between the sample means, so it only matches first moments.
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub reg_kind: RegKind,
    /// Weight on the distribution-matching penalty.
    pub beta: f64,
    /// Weight on the latent ranking objective; 0 disables the scoring head.
    pub alpha: f64,
    /// Reconstruction objective.
    pub loss: LossSpec,
    /// Softness of the approximate-rank sigmoid.
    pub temperature: f64,
    /// Distance used when `reg_kind` is `Wae`.
    pub wae_kernel: WaeKernel,
    /// Ramp beta linearly from 0 over this many epochs; 0 keeps it constant.
    pub beta_warmup_epochs: usize,
    /// Reconstruction-only epochs on non-gesture windows before the main
    /// loop; 0 skips the phase.
    pub pretrain_epochs: usize,
}

impl VaeConfig {
    /// Gaussian-prior configuration with the weights used throughout the
    /// experiments.
    pub fn vae() -> VaeConfig {
        VaeConfig {
            reg_kind: RegKind::Vae,
            beta: 1e-4,
            alpha: 1e-2,
            loss: LossSpec::for_kind(LossKind::KlbModFeature),
            temperature: 1.0,
            wae_kernel: WaeKernel::Euclidean,
            beta_warmup_epochs: 0,
            pretrain_epochs: 0,
        }
    }

    /// Energy-statistic configuration; the heavier penalty weight compensates
    /// for the statistic's smaller scale.
    pub fn wae() -> VaeConfig {
        VaeConfig {
            reg_kind: RegKind::Wae,
            beta: 1e-3,
            ..VaeConfig::vae()
        }
    }

    pub fn validate(&self) -> Result<(), GenerativeError> {
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(GenerativeError::Config(format!(
                "beta must be finite and non-negative, got {}",
                self.beta
            )));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(GenerativeError::Config(format!(
                "alpha must be finite and non-negative, got {}",
                self.alpha
            )));
        }
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(GenerativeError::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        self.loss.validate()?;
        Ok(())
    }
}

/// Gaussian posterior of one window in latent space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentEmbedding {
    pub mu: [f64; LATENT_DIM],
    pub log_var: [f64; LATENT_DIM],
}

/// Sequence autoencoder with a per-user scoring head.
///
/// Parameter storage order is encoder, decoder, scoring head; the block
/// boundaries let the forward passes bind only the segment they need.
#[derive(Debug, Clone)]
pub struct VaeModel {
    pub config: VaeConfig,
    pub params: Params,
    users: Vec<String>,
    enc_blocks: usize,
    dec_blocks: usize,
}

impl VaeModel {
    /// Users the scoring head ranks, in class-index order.
    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn user_index(&self, user_id: &str) -> Option<usize> {
        self.users.iter().position(|u| u == user_id)
    }

    /// Encodes one window on a caller-owned tape so the posterior nodes can
    /// feed a larger differentiable objective. `vars` must come from
    /// `tape.bind(&self.params)`; returns the `(mu, log_var)` nodes.
    pub fn encode_on_tape(
        &self,
        tape: &mut Tape,
        vars: &[VarId],
        series: &TimeSeries,
    ) -> Result<(VarId, VarId), GenerativeError> {
        check_window(series)?;
        let x = tape.leaf(window_tensor(series));
        Ok(encode_on_tape(tape, &vars[..self.enc_blocks], x)?)
    }

    /// Decodes a latent node on a caller-owned tape; gradients flow through
    /// the reconstruction into the decoder parameters and into `z` itself.
    /// `vars` must come from `tape.bind(&self.params)`.
    pub fn decode_on_tape(
        &self,
        tape: &mut Tape,
        vars: &[VarId],
        z: VarId,
    ) -> Result<VarId, GenerativeError> {
        Ok(decode_on_tape(
            tape,
            &vars[self.enc_blocks..self.dec_blocks],
            z,
        )?)
    }
}

/// Builds an initialized model whose scoring head ranks `users`.
pub fn build_vae(config: &VaeConfig, users: &[String], seed: u64) -> Result<VaeModel, GenerativeError> {
    config.validate()?;
    if users.is_empty() {
        return Err(GenerativeError::Config(
            "scoring head needs at least one user".into(),
        ));
    }
    let unique: BTreeSet<&String> = users.iter().collect();
    if unique.len() != users.len() {
        return Err(GenerativeError::Config("duplicate user ids".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Params::new();
    let add_conv = |params: &mut Params, rng: &mut ChaCha8Rng, tag: &str, out: usize, inc: usize, k: usize| {
        params.add(&format!("{tag}.w"), init_uniform(rng, inc * k, &[out, inc, k]));
        params.add(&format!("{tag}.b"), init_uniform(rng, inc * k, &[out]));
    };
    let add_gru = |params: &mut Params, rng: &mut ChaCha8Rng, tag: &str, inc: usize| {
        params.add(&format!("{tag}.w"), init_uniform(rng, inc, &[3 * GRU_HIDDEN, inc]));
        params.add(
            &format!("{tag}.u"),
            init_uniform(rng, GRU_HIDDEN, &[3 * GRU_HIDDEN, GRU_HIDDEN]),
        );
        params.add(&format!("{tag}.b"), init_uniform(rng, GRU_HIDDEN, &[3 * GRU_HIDDEN]));
    };
    let add_dense = |params: &mut Params, rng: &mut ChaCha8Rng, tag: &str, out: usize, inc: usize| {
        params.add(&format!("{tag}.w"), init_uniform(rng, inc, &[out, inc]));
        params.add(&format!("{tag}.b"), init_uniform(rng, inc, &[out]));
    };

    let mut in_c = GESTURE_CHANNELS;
    for b in 0..ENC_BLOCKS {
        for k in [3usize, 5, 7] {
            add_conv(&mut params, &mut rng, &format!("enc.b{b}.k{k}"), INCEPTION_BRANCH_CHANNELS, in_c, k);
        }
        add_conv(
            &mut params,
            &mut rng,
            &format!("enc.b{b}.proj"),
            INCEPTION_PROJ_CHANNELS,
            3 * INCEPTION_BRANCH_CHANNELS,
            1,
        );
        in_c = INCEPTION_PROJ_CHANNELS;
    }
    let mut gru_in = INCEPTION_PROJ_CHANNELS;
    for g in 0..GRU_LAYERS {
        add_gru(&mut params, &mut rng, &format!("enc.g{g}"), gru_in);
        gru_in = GRU_HIDDEN;
    }
    add_dense(&mut params, &mut rng, "enc.mu", LATENT_DIM, GRU_HIDDEN);
    add_dense(&mut params, &mut rng, "enc.lv", LATENT_DIM, GRU_HIDDEN);
    let enc_blocks = params.len();

    let mut gru_in = LATENT_DIM;
    for g in 0..GRU_LAYERS {
        add_gru(&mut params, &mut rng, &format!("dec.g{g}"), gru_in);
        gru_in = GRU_HIDDEN;
    }
    let mut conv_in = GRU_HIDDEN;
    for (i, (_, out_c)) in DEC_STAGES.iter().enumerate() {
        add_conv(&mut params, &mut rng, &format!("dec.c{i}"), *out_c, conv_in, 3);
        conv_in = *out_c;
    }
    let dec_blocks = params.len();

    add_dense(&mut params, &mut rng, "auth.h", AUTH_HIDDEN, AUTH_DIMS);
    add_dense(&mut params, &mut rng, "auth.out", users.len(), AUTH_HIDDEN);

    Ok(VaeModel {
        config: *config,
        params,
        users: users.to_vec(),
        enc_blocks,
        dec_blocks,
    })
}

/// Sequential reader over bound parameter variables; the walkers consume ids
/// in the exact order `build_vae` created them.
struct Cursor<'a> {
    vars: &'a [VarId],
    next: usize,
}

impl<'a> Cursor<'a> {
    fn new(vars: &'a [VarId]) -> Cursor<'a> {
        Cursor { vars, next: 0 }
    }

    fn take(&mut self) -> VarId {
        let v = self.vars[self.next];
        self.next += 1;
        v
    }

    fn done(&self) -> bool {
        self.next == self.vars.len()
    }
}

fn encode_on_tape(tape: &mut Tape, enc_vars: &[VarId], x: VarId) -> Result<(VarId, VarId), DiffError> {
    let mut cur = Cursor::new(enc_vars);
    let mut h = x;
    for _ in 0..ENC_BLOCKS {
        let mut branches = Vec::with_capacity(3);
        for k in [3usize, 5, 7] {
            let w = cur.take();
            let b = cur.take();
            let conv = tape.conv1d(w, b, h, k, Padding::Same)?;
            branches.push(tape.relu(conv));
        }
        let cat = tape.concat(&branches)?;
        let pw = cur.take();
        let pb = cur.take();
        let proj = tape.conv1d(pw, pb, cat, 1, Padding::Same)?;
        let proj = tape.relu(proj);
        h = tape.maxpool1d(proj)?;
    }
    for _ in 0..GRU_LAYERS {
        let w = cur.take();
        let u = cur.take();
        let b = cur.take();
        h = tape.gru(w, u, b, h)?;
    }
    let (_, t) = tape.value(h).dims2().expect("gru output is 2d");
    let last = tape.column(h, t - 1)?;
    let mu = {
        let w = cur.take();
        let b = cur.take();
        tape.dense(w, b, last)?
    };
    let lv = {
        let w = cur.take();
        let b = cur.take();
        tape.dense(w, b, last)?
    };
    debug_assert!(cur.done());
    Ok((mu, lv))
}

fn decode_on_tape(tape: &mut Tape, dec_vars: &[VarId], z: VarId) -> Result<VarId, DiffError> {
    let mut cur = Cursor::new(dec_vars);
    let col = tape.reshape2(z, LATENT_DIM, 1)?;
    let mut h = tape.upsample1d(col, DEC_SEQ_LEN)?;
    for _ in 0..GRU_LAYERS {
        let w = cur.take();
        let u = cur.take();
        let b = cur.take();
        h = tape.gru(w, u, b, h)?;
    }
    for (i, (len, _)) in DEC_STAGES.iter().enumerate() {
        h = tape.upsample1d(h, *len)?;
        let w = cur.take();
        let b = cur.take();
        h = tape.conv1d(w, b, h, 3, Padding::Same)?;
        if i + 1 < DEC_STAGES.len() {
            h = tape.relu(h);
        }
    }
    debug_assert!(cur.done());
    Ok(h)
}

fn auth_on_tape(tape: &mut Tape, auth_vars: &[VarId], z: VarId) -> Result<VarId, DiffError> {
    let mut cur = Cursor::new(auth_vars);
    let front = tape.slice(z, 0, AUTH_DIMS)?;
    let hw = cur.take();
    let hb = cur.take();
    let hidden = tape.dense(hw, hb, front)?;
    let hidden = tape.relu(hidden);
    let ow = cur.take();
    let ob = cur.take();
    let scores = tape.dense(ow, ob, hidden)?;
    debug_assert!(cur.done());
    Ok(scores)
}

fn check_window(series: &TimeSeries) -> Result<(), GenerativeError> {
    if series.rows() != GESTURE_LEN || series.cols() != GESTURE_CHANNELS {
        return Err(GenerativeError::WindowShape {
            rows: series.rows(),
            cols: series.cols(),
        });
    }
    Ok(())
}

fn window_tensor(series: &TimeSeries) -> Tensor {
    Tensor::matrix(series.cols(), series.rows(), series.to_channel_major())
}

fn latent_array(t: &Tensor) -> [f64; LATENT_DIM] {
    let mut out = [0.0; LATENT_DIM];
    out.copy_from_slice(&t.data);
    out
}

/// Posterior for a single window.
pub fn encode(model: &VaeModel, series: &TimeSeries) -> Result<LatentEmbedding, GenerativeError> {
    Ok(encode_batch(model, &[series])?.remove(0))
}

/// Posteriors for many windows, batched onto shared tapes.
pub fn encode_batch(
    model: &VaeModel,
    windows: &[&TimeSeries],
) -> Result<Vec<LatentEmbedding>, GenerativeError> {
    for w in windows {
        check_window(w)?;
    }
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(64) {
        let mut tape = Tape::new();
        let vars = tape.bind(&model.params);
        let enc_vars = &vars[..model.enc_blocks];
        for series in chunk {
            let x = tape.leaf(window_tensor(series));
            let (mu, lv) = encode_on_tape(&mut tape, enc_vars, x)?;
            out.push(LatentEmbedding {
                mu: latent_array(tape.value(mu)),
                log_var: latent_array(tape.value(lv)),
            });
        }
    }
    Ok(out)
}

/// Deterministic reconstruction of one latent point.
pub fn decode(model: &VaeModel, z: &[f64; LATENT_DIM]) -> Result<TimeSeries, GenerativeError> {
    Ok(decode_batch(model, std::slice::from_ref(z))?.remove(0))
}

/// Reconstructions for many latent points, batched onto shared tapes.
pub fn decode_batch(
    model: &VaeModel,
    zs: &[[f64; LATENT_DIM]],
) -> Result<Vec<TimeSeries>, GenerativeError> {
    let mut out = Vec::with_capacity(zs.len());
    for chunk in zs.chunks(64) {
        let mut tape = Tape::new();
        let vars = tape.bind(&model.params);
        let dec_vars = &vars[model.enc_blocks..model.dec_blocks];
        for z in chunk {
            let zv = tape.leaf(Tensor::vector(z.to_vec()));
            let y = decode_on_tape(&mut tape, dec_vars, zv)?;
            out.push(TimeSeries::from_channel_major(
                GESTURE_LEN,
                GESTURE_CHANNELS,
                &tape.value(y).data,
            ));
        }
    }
    Ok(out)
}

/// Per-user scores of one latent point; only the first `AUTH_DIMS` entries of
/// `z` influence the result.
pub fn auth_scores(model: &VaeModel, z: &[f64; LATENT_DIM]) -> Result<Vec<f64>, GenerativeError> {
    let mut tape = Tape::new();
    let vars = tape.bind(&model.params);
    let auth_vars = &vars[model.dec_blocks..];
    let zv = tape.leaf(Tensor::vector(z.to_vec()));
    let s = auth_on_tape(&mut tape, auth_vars, zv)?;
    Ok(tape.value(s).data.clone())
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian_draw(emb: &LatentEmbedding, rng: &mut ChaCha8Rng) -> [f64; LATENT_DIM] {
    std::array::from_fn(|d| emb.mu[d] + (0.5 * emb.log_var[d]).exp() * standard_normal(rng))
}

/// One reparametrized sample `z = mu + exp(log_var / 2) * eps` with
/// standard-normal `eps` drawn under `seed`.
pub fn reparam_sample(emb: &LatentEmbedding, seed: u64) -> [f64; LATENT_DIM] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gaussian_draw(emb, &mut rng)
}

/// Closed-form KL divergence of the posterior against a standard Gaussian,
/// summed over dimensions. Zero exactly when every (mu, log_var) is (0, 0).
pub fn kl_loss(emb: &LatentEmbedding) -> f64 {
    emb.mu
        .iter()
        .zip(&emb.log_var)
        .map(|(&m, &lv)| -0.5 * (1.0 + lv - m * m - lv.exp()))
        .sum()
}

fn kernel_distance(kernel: WaeKernel, a: &[f64; LATENT_DIM], b: &[f64; LATENT_DIM]) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    match kernel {
        WaeKernel::Squared => sq,
        WaeKernel::Euclidean => sq.sqrt(),
    }
}

/// Adds `scale * d distance(a, b) / d a` into `grad`.
fn kernel_distance_grad(
    kernel: WaeKernel,
    a: &[f64; LATENT_DIM],
    b: &[f64; LATENT_DIM],
    scale: f64,
    grad: &mut [f64; LATENT_DIM],
) {
    match kernel {
        WaeKernel::Squared => {
            for d in 0..LATENT_DIM {
                grad[d] += scale * 2.0 * (a[d] - b[d]);
            }
        }
        WaeKernel::Euclidean => {
            let dist = kernel_distance(WaeKernel::Euclidean, a, b);
            if dist > 1e-12 {
                for d in 0..LATENT_DIM {
                    grad[d] += scale * (a[d] - b[d]) / dist;
                }
            }
        }
    }
}

fn wae_loss_and_grad(
    embeddings: &[[f64; LATENT_DIM]],
    kernel: WaeKernel,
    seed: u64,
) -> Result<(f64, Vec<[f64; LATENT_DIM]>), GenerativeError> {
    let n = embeddings.len();
    if n < 2 {
        return Err(GenerativeError::TooFewEmbeddings {
            role: "batch",
            need: 2,
            got: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior: Vec<[f64; LATENT_DIM]> = (0..n)
        .map(|_| std::array::from_fn(|_| standard_normal(&mut rng)))
        .collect();

    let nf = n as f64;
    let cross_w = 2.0 / (nf * nf);
    let within_w = 1.0 / (nf * (nf - 1.0));

    let mut loss = 0.0;
    let mut grads = vec![[0.0; LATENT_DIM]; n];
    for (i, e) in embeddings.iter().enumerate() {
        for z in &prior {
            loss += cross_w * kernel_distance(kernel, e, z);
            kernel_distance_grad(kernel, e, z, cross_w, &mut grads[i]);
        }
        for (j, other) in embeddings.iter().enumerate() {
            if i != j {
                loss -= within_w * kernel_distance(kernel, e, other);
                // Each unordered pair appears twice in the ordered sum but its
                // gradient is accumulated only from the first-argument side,
                // so double the scale to cover both appearances.
                kernel_distance_grad(kernel, e, other, -2.0 * within_w, &mut grads[i]);
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            if i != j {
                loss -= within_w * kernel_distance(kernel, &prior[i], &prior[j]);
            }
        }
    }
    Ok((loss, grads))
}

/// Energy statistic between `embeddings` and `n` fresh standard-normal prior
/// samples: `2/n^2 * sum d(e_i, z_j) - mean d(e_i, e_j) - mean d(z_i, z_j)`
/// over distinct pairs. With the Euclidean kernel this is non-negative in
/// expectation and vanishes iff the embeddings are standard normal.
pub fn wae_reg_loss(
    embeddings: &[[f64; LATENT_DIM]],
    kernel: WaeKernel,
    seed: u64,
) -> Result<f64, GenerativeError> {
    wae_loss_and_grad(embeddings, kernel, seed).map(|(v, _)| v)
}

/// Within-set mean squared distances minus twice the cross-set mean: the
/// sign-inverted `Squared` energy statistic. Kept for comparison studies;
/// minimizing it drives embeddings away from the prior rather than toward it.
pub fn wae_reg_spread_difference(
    embeddings: &[[f64; LATENT_DIM]],
    seed: u64,
) -> Result<f64, GenerativeError> {
    wae_reg_loss(embeddings, WaeKernel::Squared, seed).map(|v| -v)
}

/// Smooth ranking loss `-sum_i relevant_i / approxrank_i` where
/// `approxrank_i = 1 + sum_{j != i} sigmoid((s_j - s_i) / temperature)`.
/// A perfectly ranked single relevant candidate approaches -1.
pub fn approx_mrr_loss(
    scores: &[f64],
    relevant: &[bool],
    temperature: f64,
) -> Result<f64, GenerativeError> {
    if scores.is_empty() {
        return Err(GenerativeError::Config("empty candidate list".into()));
    }
    if scores.len() != relevant.len() {
        return Err(GenerativeError::Config(format!(
            "scores and labels disagree: {} vs {}",
            scores.len(),
            relevant.len()
        )));
    }
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(GenerativeError::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let mut loss = 0.0;
    for (i, (&si, &rel)) in scores.iter().zip(relevant).enumerate() {
        if !rel {
            continue;
        }
        let rank: f64 = 1.0
            + scores
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &sj)| sigmoid((sj - si) / temperature))
                .sum::<f64>();
        loss -= 1.0 / rank;
    }
    Ok(loss)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Loss and score gradient for one candidate list with a single true index.
fn mrr_list_grad(scores: &[f64], true_idx: usize, temperature: f64) -> (f64, Vec<f64>) {
    let su = scores[true_idx];
    let mut rank = 1.0;
    let mut slopes = vec![0.0; scores.len()];
    for (j, &sj) in scores.iter().enumerate() {
        if j == true_idx {
            continue;
        }
        let s = sigmoid((sj - su) / temperature);
        rank += s;
        slopes[j] = s * (1.0 - s) / temperature;
    }
    let loss = -1.0 / rank;
    let coeff = 1.0 / (rank * rank);
    let mut grad = vec![0.0; scores.len()];
    let mut total_slope = 0.0;
    for (j, &sl) in slopes.iter().enumerate() {
        if j != true_idx {
            grad[j] = coeff * sl;
            total_slope += sl;
        }
    }
    grad[true_idx] = -coeff * total_slope;
    (loss, grad)
}

/// Exact mean reciprocal rank over candidate lists; ties split the rank.
pub fn mean_reciprocal_rank(score_lists: &[Vec<f64>], true_idx: &[usize]) -> f64 {
    if score_lists.is_empty() {
        return 0.0;
    }
    let total: f64 = score_lists
        .iter()
        .zip(true_idx)
        .map(|(scores, &u)| {
            let su = scores[u];
            let mut rank = 1.0;
            for (j, &sj) in scores.iter().enumerate() {
                if j == u {
                    continue;
                }
                if sj > su {
                    rank += 1.0;
                } else if sj == su {
                    rank += 0.5;
                }
            }
            1.0 / rank
        })
        .sum();
    total / score_lists.len() as f64
}

/// How synthetic latent points are drawn from enrolment posteriors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleStrategy {
    /// Draw from a uniformly chosen target posterior.
    Neighbourhood,
    /// Dirichlet(1,1,1)-weighted convex combination of three target means.
    SelfMixed,
    /// Blend a target mean toward another user's mean, majority weight on the
    /// target.
    Adversarial { mix_weight: f64 },
    /// Target mean with the trailing non-identity dimensions taken from
    /// another user's mean.
    SameUser,
}

impl SampleStrategy {
    /// Blending strategy at the standard 85:15 ratio.
    pub fn adversarial() -> SampleStrategy {
        SampleStrategy::Adversarial { mix_weight: 0.85 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SampleStrategy::Neighbourhood => "neighbourhood",
            SampleStrategy::SelfMixed => "self_mixed",
            SampleStrategy::Adversarial { .. } => "adversarial",
            SampleStrategy::SameUser => "same_user",
        }
    }

    pub fn parse(s: &str) -> Option<SampleStrategy> {
        match s {
            "neighbourhood" => Some(SampleStrategy::Neighbourhood),
            "self_mixed" => Some(SampleStrategy::SelfMixed),
            "adversarial" => Some(SampleStrategy::adversarial()),
            "same_user" => Some(SampleStrategy::SameUser),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), GenerativeError> {
        if let SampleStrategy::Adversarial { mix_weight } = self {
            if !(*mix_weight > 0.5 && *mix_weight < 1.0) {
                return Err(GenerativeError::Config(format!(
                    "adversarial mix weight must lie in (0.5, 1), got {mix_weight}"
                )));
            }
        }
        Ok(())
    }

    fn needs_others(&self) -> bool {
        matches!(
            self,
            SampleStrategy::Adversarial { .. } | SampleStrategy::SameUser
        )
    }
}

/// Draws `n` latent points from the target user's posteriors under the given
/// strategy. Strategies that contrast against other users require at least
/// one other-user embedding.
pub fn sample_latent(
    strategy: &SampleStrategy,
    target: &[LatentEmbedding],
    others: &[LatentEmbedding],
    n: usize,
    seed: u64,
) -> Result<Vec<[f64; LATENT_DIM]>, GenerativeError> {
    strategy.validate()?;
    if target.is_empty() {
        return Err(GenerativeError::TooFewEmbeddings {
            role: "target",
            need: 1,
            got: 0,
        });
    }
    if strategy.needs_others() && others.is_empty() {
        return Err(GenerativeError::TooFewEmbeddings {
            role: "other-user",
            need: 1,
            got: 0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirichlet = Dirichlet::new(&[1.0, 1.0, 1.0]).expect("fixed concentration is valid");
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let z = match strategy {
            SampleStrategy::Neighbourhood => {
                let e = &target[rng.gen_range(0..target.len())];
                gaussian_draw(e, &mut rng)
            }
            SampleStrategy::SelfMixed => {
                let weights = dirichlet.sample(&mut rng);
                let picks: [&LatentEmbedding; 3] =
                    std::array::from_fn(|_| &target[rng.gen_range(0..target.len())]);
                std::array::from_fn(|d| {
                    weights
                        .iter()
                        .zip(&picks)
                        .map(|(w, e)| w * e.mu[d])
                        .sum()
                })
            }
            SampleStrategy::Adversarial { mix_weight } => {
                let t = &target[rng.gen_range(0..target.len())];
                let o = &others[rng.gen_range(0..others.len())];
                std::array::from_fn(|d| mix_weight * t.mu[d] + (1.0 - mix_weight) * o.mu[d])
            }
            SampleStrategy::SameUser => {
                let t = &target[rng.gen_range(0..target.len())];
                let o = &others[rng.gen_range(0..others.len())];
                std::array::from_fn(|d| if d < AUTH_DIMS { t.mu[d] } else { o.mu[d] })
            }
        };
        out.push(z);
    }
    Ok(out)
}

/// Encodes the target windows, samples latent points under the strategy, and
/// decodes them into synthetic windows.
pub fn generate_synthetic(
    model: &VaeModel,
    strategy: &SampleStrategy,
    target_windows: &[&TimeSeries],
    other_embeddings: &[LatentEmbedding],
    n: usize,
    seed: u64,
) -> Result<Vec<TimeSeries>, GenerativeError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if target_windows.is_empty() {
        return Err(GenerativeError::TooFewEmbeddings {
            role: "target",
            need: 1,
            got: 0,
        });
    }
    let target = encode_batch(model, target_windows)?;
    let zs = sample_latent(strategy, &target, other_embeddings, n, seed)?;
    decode_batch(model, &zs)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VaeTrainConfig {
    pub model: VaeConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without strict validation improvement before stopping.
    pub patience: usize,
    /// Fraction of windows held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
    /// Users whose windows are withheld entirely (leave-one-user-out).
    pub exclude_users: Vec<String>,
}

impl Default for VaeTrainConfig {
    fn default() -> VaeTrainConfig {
        VaeTrainConfig {
            model: VaeConfig::vae(),
            lr: 1e-4,
            batch_size: 32,
            max_epochs: 2000,
            patience: 150,
            val_fraction: 0.2,
            seed: 0,
            exclude_users: Vec::new(),
        }
    }
}

impl VaeTrainConfig {
    pub fn validate(&self) -> Result<(), GenerativeError> {
        self.model.validate()?;
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(GenerativeError::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(GenerativeError::Config("batch size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(GenerativeError::Config("max epochs must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(GenerativeError::Config("patience must be at least 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(GenerativeError::Config(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// Per-epoch training record. Validation metrics are computed noise-free
/// (z = mu) so early stopping compares like with like across epochs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VaeHistory {
    pub train_total: Vec<f64>,
    pub val_total: Vec<f64>,
    pub val_recon: Vec<f64>,
    pub val_reg: Vec<f64>,
    pub val_auth: Vec<f64>,
    /// Exact mean reciprocal rank of the scoring head on validation windows.
    pub val_mrr: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub n_train: usize,
    pub n_val: usize,
}

struct TrainItem<'a> {
    series: &'a TimeSeries,
    target: &'a PreparedTarget,
    label: usize,
}

/// Trains the autoencoder on every gesture window outside the exclusion
/// list. The corpus is expected to be normalized already. Windows are split
/// into train and validation uniformly at random; early stopping restores the
/// parameters of the best validation epoch.
pub fn train_vae(
    corpus: &[Gesture],
    cfg: &VaeTrainConfig,
) -> Result<(VaeModel, VaeHistory), GenerativeError> {
    cfg.validate()?;
    let excluded: BTreeSet<&str> = cfg.exclude_users.iter().map(String::as_str).collect();
    let gestures: Vec<&Gesture> = corpus
        .iter()
        .filter(|g| g.is_gesture && !excluded.contains(g.user_id.as_str()))
        .collect();
    if gestures.is_empty() {
        return Err(GenerativeError::EmptyCorpus);
    }
    if gestures.len() < 2 {
        return Err(GenerativeError::Config(
            "need at least 2 gesture windows to split train and validation".into(),
        ));
    }
    for g in &gestures {
        check_window(&g.series)?;
    }

    let users: Vec<String> = gestures
        .iter()
        .map(|g| g.user_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut model = build_vae(&cfg.model, &users, cfg.seed)?;

    let labels: Vec<usize> = gestures
        .iter()
        .map(|g| model.user_index(&g.user_id).expect("user set built from corpus"))
        .collect();
    let prepared: Vec<PreparedTarget> = gestures
        .iter()
        .map(|g| prepare_target(&cfg.model.loss, &g.series))
        .collect::<Result<_, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ TRAIN_SALT);
    let mut indices: Vec<usize> = (0..gestures.len()).collect();
    indices.shuffle(&mut rng);
    let n_val = ((gestures.len() as f64) * cfg.val_fraction).floor().max(1.0) as usize;
    let (val_idx, train_idx) = indices.split_at(n_val);
    let val_idx = val_idx.to_vec();
    let mut train_idx = train_idx.to_vec();
    if train_idx.is_empty() {
        return Err(GenerativeError::Config(
            "validation fraction leaves no training windows".into(),
        ));
    }

    let item = |i: usize| TrainItem {
        series: &gestures[i].series,
        target: &prepared[i],
        label: labels[i],
    };

    let mut adam = AdamState::new(&model.params, cfg.lr);

    if cfg.model.pretrain_epochs > 0 {
        let non_gestures: Vec<&Gesture> = corpus
            .iter()
            .filter(|g| !g.is_gesture && !excluded.contains(g.user_id.as_str()))
            .collect();
        let usable: Vec<&Gesture> = non_gestures
            .iter()
            .copied()
            .filter(|g| check_window(&g.series).is_ok())
            .collect();
        if !usable.is_empty() {
            let pre_targets: Vec<PreparedTarget> = usable
                .iter()
                .map(|g| prepare_target(&cfg.model.loss, &g.series))
                .collect::<Result<_, _>>()?;
            let mut pre_idx: Vec<usize> = (0..usable.len()).collect();
            for _ in 0..cfg.model.pretrain_epochs {
                pre_idx.shuffle(&mut rng);
                for batch in pre_idx.chunks(cfg.batch_size) {
                    let items: Vec<TrainItem> = batch
                        .iter()
                        .map(|&i| TrainItem {
                            series: &usable[i].series,
                            target: &pre_targets[i],
                            label: 0,
                        })
                        .collect();
                    let (_, grads) = batch_step(&model, &items, 0.0, 0.0, &mut rng)?;
                    adam.step(&mut model.params, &grads);
                }
            }
        }
    }

    let mut history = VaeHistory {
        train_total: Vec::new(),
        val_total: Vec::new(),
        val_recon: Vec::new(),
        val_reg: Vec::new(),
        val_auth: Vec::new(),
        val_mrr: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        n_train: train_idx.len(),
        n_val: val_idx.len(),
    };
    let mut best_val = f64::INFINITY;
    let mut best_params = model.params.clone();

    for epoch in 0..cfg.max_epochs {
        let beta = effective_beta(&cfg.model, epoch);
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for batch in train_idx.chunks(cfg.batch_size) {
            let items: Vec<TrainItem> = batch.iter().map(|&i| item(i)).collect();
            let (loss, grads) = batch_step(&model, &items, beta, cfg.model.alpha, &mut rng)?;
            adam.step(&mut model.params, &grads);
            loss_sum += loss * items.len() as f64;
            count += items.len();
        }
        history.train_total.push(loss_sum / count as f64);

        let val_items: Vec<TrainItem> = val_idx.iter().map(|&i| item(i)).collect();
        let stats = evaluate_items(&model, &val_items, cfg.model.beta, cfg.model.alpha, cfg.seed)?;
        history.val_total.push(stats.total);
        history.val_recon.push(stats.recon);
        history.val_reg.push(stats.reg);
        history.val_auth.push(stats.auth);
        history.val_mrr.push(stats.mrr);

        if stats.total < best_val {
            best_val = stats.total;
            history.best_epoch = epoch;
            best_params = model.params.clone();
        } else if epoch - history.best_epoch >= cfg.patience {
            history.stopped_early = true;
            break;
        }
    }

    model.params = best_params;
    Ok((model, history))
}

fn effective_beta(cfg: &VaeConfig, epoch: usize) -> f64 {
    if cfg.beta_warmup_epochs == 0 {
        cfg.beta
    } else {
        let ramp = (epoch + 1) as f64 / cfg.beta_warmup_epochs as f64;
        cfg.beta * ramp.min(1.0)
    }
}

/// One optimization step's loss and parameter gradients. Loss terms are
/// averaged per sample; the energy regularizer is a batch-level statistic and
/// enters once. Gradients flow from three seeds: the reconstruction gradient
/// at the decoder output, the closed-form KL gradient at the posterior heads,
/// and the ranking gradient at the score nodes.
fn batch_step(
    model: &VaeModel,
    items: &[TrainItem],
    beta: f64,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Vec<f64>>), GenerativeError> {
    let cfg = &model.config;
    let mut tape = Tape::new();
    let vars = tape.bind(&model.params);
    let enc_vars = &vars[..model.enc_blocks];
    let dec_vars = &vars[model.enc_blocks..model.dec_blocks];
    let auth_vars = &vars[model.dec_blocks..];

    let b = items.len() as f64;
    let mut seeds: Vec<(VarId, Vec<f64>)> = Vec::new();
    let mut total = 0.0;
    let mut mu_nodes: Vec<VarId> = Vec::with_capacity(items.len());
    let mut score_nodes: Vec<(VarId, usize)> = Vec::with_capacity(items.len());

    for it in items {
        let x = tape.leaf(window_tensor(it.series));
        let (mu_v, lv_v) = encode_on_tape(&mut tape, enc_vars, x)?;
        let z = match cfg.reg_kind {
            RegKind::Vae | RegKind::None => {
                let eps: Vec<f64> = (0..LATENT_DIM).map(|_| standard_normal(rng)).collect();
                tape.reparam(mu_v, lv_v, eps)?
            }
            RegKind::Wae => mu_v,
        };

        let yhat = decode_on_tape(&mut tape, dec_vars, z)?;
        let yhat_series = TimeSeries::from_channel_major(
            GESTURE_LEN,
            GESTURE_CHANNELS,
            &tape.value(yhat).data,
        );
        let (recon, recon_grad) = combined_loss_prepared(&cfg.loss, it.target, &yhat_series)?;
        total += recon / b;
        let seed: Vec<f64> = recon_grad.to_channel_major().iter().map(|g| g / b).collect();
        seeds.push((yhat, seed));

        if cfg.reg_kind == RegKind::Vae && beta > 0.0 {
            let mu = &tape.value(mu_v).data;
            let lv = &tape.value(lv_v).data;
            let emb = LatentEmbedding {
                mu: latent_array(tape.value(mu_v)),
                log_var: latent_array(tape.value(lv_v)),
            };
            total += beta * kl_loss(&emb) / b;
            let mu_seed: Vec<f64> = mu.iter().map(|m| beta * m / b).collect();
            let lv_seed: Vec<f64> = lv.iter().map(|l| beta * 0.5 * (l.exp() - 1.0) / b).collect();
            seeds.push((mu_v, mu_seed));
            seeds.push((lv_v, lv_seed));
        }
        if cfg.reg_kind == RegKind::Wae {
            mu_nodes.push(mu_v);
        }

        if alpha > 0.0 {
            let s = auth_on_tape(&mut tape, auth_vars, z)?;
            score_nodes.push((s, it.label));
        }
    }

    if cfg.reg_kind == RegKind::Wae && beta > 0.0 && mu_nodes.len() >= 2 {
        let embeddings: Vec<[f64; LATENT_DIM]> = mu_nodes
            .iter()
            .map(|&v| latent_array(tape.value(v)))
            .collect();
        let (reg, reg_grads) = wae_loss_and_grad(&embeddings, cfg.wae_kernel, rng.gen())?;
        total += beta * reg;
        for (&mu_v, grad) in mu_nodes.iter().zip(&reg_grads) {
            seeds.push((mu_v, grad.iter().map(|g| beta * g).collect()));
        }
    }

    for (s_node, label) in &score_nodes {
        let scores = tape.value(*s_node).data.clone();
        let (loss, grad) = mrr_list_grad(&scores, *label, cfg.temperature);
        total += alpha * loss / b;
        seeds.push((*s_node, grad.iter().map(|g| alpha * g / b).collect()));
    }

    tape.backward(&seeds);
    let grads: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad(v).to_vec()).collect();
    Ok((total, grads))
}

struct ValStats {
    total: f64,
    recon: f64,
    reg: f64,
    auth: f64,
    mrr: f64,
}

/// Noise-free metrics on a window set: reconstructions and scores use z = mu.
fn evaluate_items(
    model: &VaeModel,
    items: &[TrainItem],
    beta: f64,
    alpha: f64,
    reg_seed: u64,
) -> Result<ValStats, GenerativeError> {
    let cfg = &model.config;
    let mut recon_sum = 0.0;
    let mut kl_sum = 0.0;
    let mut mus: Vec<[f64; LATENT_DIM]> = Vec::with_capacity(items.len());
    let mut score_lists: Vec<Vec<f64>> = Vec::with_capacity(items.len());
    let mut truth: Vec<usize> = Vec::with_capacity(items.len());

    for chunk in items.chunks(64) {
        let mut tape = Tape::new();
        let vars = tape.bind(&model.params);
        let enc_vars = &vars[..model.enc_blocks];
        let dec_vars = &vars[model.enc_blocks..model.dec_blocks];
        let auth_vars = &vars[model.dec_blocks..];
        for it in chunk {
            let x = tape.leaf(window_tensor(it.series));
            let (mu_v, lv_v) = encode_on_tape(&mut tape, enc_vars, x)?;
            let emb = LatentEmbedding {
                mu: latent_array(tape.value(mu_v)),
                log_var: latent_array(tape.value(lv_v)),
            };
            let yhat = decode_on_tape(&mut tape, dec_vars, mu_v)?;
            let yhat_series = TimeSeries::from_channel_major(
                GESTURE_LEN,
                GESTURE_CHANNELS,
                &tape.value(yhat).data,
            );
            let (recon, _) = combined_loss_prepared(&cfg.loss, it.target, &yhat_series)?;
            recon_sum += recon;
            kl_sum += kl_loss(&emb);
            mus.push(emb.mu);

            // Scores are tracked even when alpha is 0 so runs with and
            // without the ranking objective expose comparable histories.
            let s = auth_on_tape(&mut tape, auth_vars, mu_v)?;
            score_lists.push(tape.value(s).data.clone());
            truth.push(it.label);
        }
    }

    let n = items.len() as f64;
    let recon = recon_sum / n;
    let reg = match cfg.reg_kind {
        RegKind::Vae => kl_sum / n,
        RegKind::Wae => {
            if mus.len() >= 2 {
                wae_reg_loss(&mus, cfg.wae_kernel, reg_seed)?
            } else {
                0.0
            }
        }
        RegKind::None => 0.0,
    };
    let mut auth = 0.0;
    for (scores, &u) in score_lists.iter().zip(&truth) {
        let relevant: Vec<bool> = (0..scores.len()).map(|j| j == u).collect();
        auth += approx_mrr_loss(scores, &relevant, cfg.temperature)?;
    }
    auth /= n;
    let mrr = mean_reciprocal_rank(&score_lists, &truth);
    Ok(ValStats {
        total: recon + beta * reg + alpha * auth,
        recon,
        reg,
        auth,
        mrr,
    })
}

const VAE_CHECKPOINT_KIND: &str = "sequence-autoencoder";

/// Writes the model as a `<stem>.json` manifest plus `<stem>.bin` blob.
pub fn save_vae(model: &VaeModel, stem: &Path) -> Result<(), GenerativeError> {
    let meta = json!({
        "kind": VAE_CHECKPOINT_KIND,
        "users": model.users,
        "config": model.config,
    });
    save_checkpoint(stem, meta, &model.params)?;
    Ok(())
}

/// Restores a model saved by [`save_vae`], verifying the parameter layout
/// against a freshly built skeleton.
pub fn load_vae(stem: &Path) -> Result<VaeModel, GenerativeError> {
    let (meta, params) = load_checkpoint(stem)?;
    let kind = meta.get("kind").and_then(|v| v.as_str()).unwrap_or("");
    if kind != VAE_CHECKPOINT_KIND {
        return Err(GenerativeError::BadCheckpoint(format!(
            "kind is {kind:?}, expected {VAE_CHECKPOINT_KIND:?}"
        )));
    }
    let users: Vec<String> = meta
        .get("users")
        .cloned()
        .and_then(|v| serde_json::from_value(v).ok())
        .ok_or_else(|| GenerativeError::BadCheckpoint("missing user list".into()))?;
    let config: VaeConfig = meta
        .get("config")
        .cloned()
        .and_then(|v| serde_json::from_value(v).ok())
        .ok_or_else(|| GenerativeError::BadCheckpoint("missing config".into()))?;

    let mut model = build_vae(&config, &users, 0)?;
    let expected: Vec<(String, Vec<usize>)> = model
        .params
        .iter()
        .map(|(n, t)| (n.to_string(), t.shape.clone()))
        .collect();
    let got: Vec<(String, Vec<usize>)> = params
        .iter()
        .map(|(n, t)| (n.to_string(), t.shape.clone()))
        .collect();
    if expected != got {
        return Err(GenerativeError::BadCheckpoint(
            "parameter names or shapes do not match the architecture".into(),
        ));
    }
    model.params = params;
    Ok(model)
}
