//! Command-line surface. Every value-carrying flag is optional here so the
//! resolver can tell "flag given" from "fall back to config file or default";
//! the actual defaults live next to the resolution calls in `commands`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Gesture-based payment authentication: corpus tooling, model training,
/// synthetic data generation and evaluation.
#[derive(Debug, Parser)]
#[command(name = "gestauth", version, max_term_width = 100)]
pub struct Cli {
    /// Flat JSON config file; flags override it, GESTAUTH_* env vars sit in
    /// between.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for per-row parallel work (currently the sweep rows).
    #[arg(long, global = true, default_value_t = 1, value_name = "N")]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert raw per-user sensor logs and manifests into a corpus directory.
    Ingest(IngestArgs),
    /// Synthesize a corpus of plausible users for pipeline work without data.
    Simulate(SimulateArgs),
    /// Train a deep one-vs-rest authentication classifier.
    TrainAuth(TrainAuthArgs),
    /// Train the sequence autoencoder on gesture windows.
    TrainVae(TrainVaeArgs),
    /// Sample synthetic gesture windows from a trained autoencoder.
    Generate(GenerateArgs),
    /// Compute ROC metrics for a file of scores and labels.
    Evaluate(EvaluateArgs),
    /// Train-on-synthetic, test-on-real experiment (authentication or intent).
    Tstr(TstrArgs),
    /// Enrolment-size sweep: baseline vs augmented arm per gesture budget.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory of <stem>.csv sensor logs, each with a <stem>.json manifest.
    #[arg(long, value_name = "DIR")]
    pub raw: Option<PathBuf>,
    /// Corpus directory to create.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Sensor column tag for the accelerometer rows [default: acc].
    #[arg(long, value_name = "TAG")]
    pub acc_tag: Option<String>,
    /// Sensor column tag for the gyroscope rows [default: gyr].
    #[arg(long, value_name = "TAG")]
    pub gyr_tag: Option<String>,
    /// Base seed; the split seed falls back to it [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fraction of each user's gestures in the training split [default: 2/3].
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Fraction of the training split held out for validation [default: 0.2].
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Seed for the validation shuffle [default: --seed].
    #[arg(long)]
    pub split_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Corpus directory to create.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Number of simulated users [default: 8].
    #[arg(long)]
    pub users: Option<usize>,
    /// Gesture windows per user [default: 20].
    #[arg(long)]
    pub gestures: Option<usize>,
    /// Non-gesture windows per user [default: 5].
    #[arg(long)]
    pub non_gestures: Option<usize>,
    /// Within-user sensor noise level [default: 0.1].
    #[arg(long)]
    pub noise: Option<f64>,
    /// Seed for profiles and sampling [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fraction of each user's gestures in the training split [default: 2/3].
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Fraction of the training split held out for validation [default: 0.2].
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Seed for the validation shuffle [default: --seed].
    #[arg(long)]
    pub split_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainAuthArgs {
    /// Corpus directory from ingest or simulate.
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
    /// User the classifier authenticates.
    #[arg(long, value_name = "USER")]
    pub target_user: Option<String>,
    /// mlp, convnet, gru, simplemix or complexmix [default: complexmix].
    #[arg(long)]
    pub arch: Option<String>,
    /// Learning rate [default: 1e-4].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Loss weight on genuine windows [default: 4].
    #[arg(long)]
    pub pos_weight: Option<f64>,
    /// Maximum training epochs [default: 2000].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Early-stopping patience in epochs [default: 150].
    #[arg(long)]
    pub patience: Option<usize>,
    /// Minibatch size [default: 32].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Seed for init, batching and the split [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep only this earliest fraction of the target's training gestures.
    #[arg(long)]
    pub limited_fraction: Option<f64>,
    /// Fraction of each user's gestures in the training split [default: 2/3].
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Fraction of the training split held out for validation [default: 0.2].
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Seed for the validation shuffle [default: 0].
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Run name; outputs land in <out>/run-<name> [default: train-auth].
    #[arg(long)]
    pub name: Option<String>,
    /// Parent directory for the run [default: .].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Settings of the sequence autoencoder trainer, shared by every command
/// that fits one.
#[derive(Debug, Args)]
pub struct VaeArgs {
    /// Latent regularizer: vae, wae or none [default: vae].
    #[arg(long)]
    pub reg: Option<String>,
    /// Weight on the latent regularizer [default: 1e-4 vae, 1e-3 wae].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Weight on the latent ranking objective [default: 1e-2].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Reconstruction loss: mse, soft_dtw, klb_mod, mse_feature or
    /// klb_mod_feature [default: klb_mod_feature].
    #[arg(long)]
    pub loss: Option<String>,
    /// Softness of the approximate-rank sigmoid [default: 1].
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Energy-statistic distance: euclidean or squared [default: euclidean].
    #[arg(long)]
    pub wae_kernel: Option<String>,
    /// Epochs over which the regularizer weight ramps up [default: 0].
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    /// Reconstruction-only epochs on non-gesture windows first [default: 0].
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    /// Learning rate [default: 1e-4].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Minibatch size [default: 32].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Maximum training epochs [default: 2000].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Early-stopping patience in epochs [default: 150].
    #[arg(long)]
    pub patience: Option<usize>,
    /// Fraction of gesture windows held out for validation [default: 0.2].
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Seed for init, batching and sampling [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainVaeArgs {
    /// Corpus directory from ingest or simulate.
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
    /// Leave this user's windows out of training.
    #[arg(long, value_name = "USER")]
    pub exclude_user: Option<String>,
    #[command(flatten)]
    pub vae: VaeArgs,
    /// Run name; outputs land in <out>/run-<name> [default: train-vae].
    #[arg(long)]
    pub name: Option<String>,
    /// Parent directory for the run [default: .].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Corpus directory from ingest or simulate.
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
    /// train-vae run directory or checkpoint stem.
    #[arg(long, value_name = "PATH")]
    pub vae: Option<PathBuf>,
    /// User whose gestures seed the synthetics.
    #[arg(long, value_name = "USER")]
    pub target_user: Option<String>,
    /// neighbourhood, self_mixed, adversarial or same_user
    /// [default: adversarial].
    #[arg(long)]
    pub strategy: Option<String>,
    /// Target-vs-other blend for the adversarial strategy [default: 0.85].
    #[arg(long)]
    pub mix_weight: Option<f64>,
    /// Number of synthetic windows [default: 500].
    #[arg(long)]
    pub count: Option<usize>,
    /// Sampling seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run name; outputs land in <out>/run-<name> [default: generate].
    #[arg(long)]
    pub name: Option<String>,
    /// Parent directory for the run [default: .].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// JSON file with "scores" (numbers) and "labels" (booleans).
    #[arg(long, value_name = "FILE")]
    pub scores: Option<PathBuf>,
    /// Run name; outputs land in <out>/run-<name> [default: evaluate].
    #[arg(long)]
    pub name: Option<String>,
    /// Parent directory for the run [default: .].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Shared surface of the authentication experiments (`tstr` and `sweep`).
#[derive(Debug, Args)]
pub struct AuthExpArgs {
    /// Corpus directory from ingest or simulate.
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
    /// User held out of autoencoder training and authenticated against.
    #[arg(long, value_name = "USER")]
    pub holdout: Option<String>,
    /// Synthetic-positive strategy, or none for the real-data baseline
    /// [default: adversarial].
    #[arg(long)]
    pub strategy: Option<String>,
    /// Target-vs-other blend for the adversarial strategy [default: 0.85].
    #[arg(long)]
    pub mix_weight: Option<f64>,
    /// Synthetic positives added to the training set [default: 500].
    #[arg(long)]
    pub n_synthetic: Option<usize>,
    /// Real enrolment gestures kept per terminal [default: 2].
    #[arg(long)]
    pub per_terminal: Option<usize>,
    /// Also train on the earlier half of each impostor's real gestures.
    #[arg(long)]
    pub include_real_negatives: bool,
    /// Trees in the random forest [default: 100].
    #[arg(long)]
    pub trees: Option<usize>,
    /// Minimum samples per forest leaf [default: 1].
    #[arg(long)]
    pub min_samples_leaf: Option<usize>,
    /// Seed for forest bootstrap and feature bagging [default: 0].
    #[arg(long)]
    pub forest_seed: Option<u64>,
    #[command(flatten)]
    pub vae: VaeArgs,
    /// Run name; outputs land in <out>/run-<name>.
    #[arg(long)]
    pub name: Option<String>,
    /// Parent directory for the run [default: .].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TstrArgs {
    /// auth (leave-one-user-out) or intent (gesture vs non-gesture)
    /// [default: auth].
    #[arg(long)]
    pub mode: Option<String>,
    #[command(flatten)]
    pub auth: AuthExpArgs,
    /// Intent mode: training positives drawn per class [default: 240].
    #[arg(long)]
    pub n_positive: Option<usize>,
    /// Intent mode: training negatives drawn per class [default: 240].
    #[arg(long)]
    pub n_negative: Option<usize>,
    /// Intent mode: train on the drawn real windows instead of their
    /// reconstructions.
    #[arg(long)]
    pub no_reconstructions: bool,
    /// Intent mode: fraction of each pool used for training [default: 0.5].
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub auth: AuthExpArgs,
    /// Comma-separated enrolment sizes per terminal [default: 1,2,4,8].
    #[arg(long)]
    pub counts: Option<String>,
}
