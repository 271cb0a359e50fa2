//! Subcommand implementations. Every command resolves its settings through
//! the shared [`ConfigBag`], refuses to clobber existing outputs, writes the
//! resolved configuration next to its artifacts, and reports through exit
//! codes: 2 for usage and input problems, 3 for failures inside the numeric
//! pipeline.

use std::fs;
use std::path::{Path, PathBuf};

use gestauth_core::classifiers::{
    build_architecture, predict_proba_normalized, train_classifier, training_norm_stats, ArchName,
    ArchSpec, ClassifierError, ForestSpec, TrainConfig,
};
use gestauth_core::dataset::{
    apply_norm, fit_norm_stats, ingest_user, invert_norm, read_corpus, simulate_corpus,
    temporal_split, write_corpus, CsvFormat, Gesture, NormStats, SimUserProfile, SplitConfig,
    SplitSpec,
};
use gestauth_core::diffcore::save_checkpoint;
use gestauth_core::distances::{LossKind, LossSpec};
use gestauth_core::eval::{
    compute_metrics, enrolment_sweep, tstr_auth, tstr_intent, write_roc_csv, write_sweep_csv,
    EvalError, MetricsReport, ScoreSet, SweepRow, SweepTable, TstrAuthConfig, TstrIntentConfig,
};
use gestauth_core::generative::{
    decode, encode, encode_batch, generate_synthetic, load_vae, save_vae, train_vae,
    GenerativeError, RegKind, SampleStrategy, VaeConfig, VaeTrainConfig, WaeKernel,
};
use gestauth_core::TimeSeries;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ConfigBag;
use crate::plots;
use crate::{args, CliError};

// ── error classification ─────────────────────────────────────────────────────

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn numerical<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Numerical(e.to_string())
}

/// Configuration-shaped generative failures are the caller's fault; anything
/// else happened inside training or sampling.
fn generative_err(e: GenerativeError) -> CliError {
    match e {
        GenerativeError::Config(_)
        | GenerativeError::EmptyCorpus
        | GenerativeError::TooFewEmbeddings { .. }
        | GenerativeError::WindowShape { .. }
        | GenerativeError::BadCheckpoint(_) => input(e),
        _ => numerical(e),
    }
}

fn classifier_err(e: ClassifierError) -> CliError {
    match e {
        ClassifierError::Config(_) => input(e),
        _ => numerical(e),
    }
}

fn eval_err(e: EvalError) -> CliError {
    match e {
        EvalError::Config(_)
        | EvalError::MissingUser(_)
        | EvalError::Insufficient { .. }
        | EvalError::Empty
        | EvalError::LengthMismatch { .. }
        | EvalError::SingleClass => input(e),
        EvalError::Generative(g) => generative_err(g),
        EvalError::Classifier(c) => classifier_err(c),
        EvalError::NonFiniteScore(_) => numerical(e),
    }
}

// ── run directory plumbing ───────────────────────────────────────────────────

/// Output directory for one report-producing run; refuses to reuse an
/// existing directory so stale artifacts never mix with fresh ones.
struct RunDir {
    root: PathBuf,
}

impl RunDir {
    fn create(out: &Path, name: &str) -> Result<RunDir, CliError> {
        let root = out.join(format!("run-{name}"));
        if root.exists() {
            return Err(CliError::Input(format!(
                "output directory {} already exists; pick a different --name",
                root.display()
            )));
        }
        fs::create_dir_all(&root).map_err(|e| {
            CliError::Input(format!("cannot create {}: {e}", root.display()))
        })?;
        Ok(RunDir { root })
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<(), CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::Input(format!("cannot create {}: {e}", parent.display())))?;
        }
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Input(format!("serializing {rel}: {e}")))?;
        text.push('\n');
        fs::write(&path, text)
            .map_err(|e| CliError::Input(format!("writing {}: {e}", path.display())))
    }

    fn write_text(&self, rel: &str, text: &str) -> Result<(), CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::Input(format!("cannot create {}: {e}", parent.display())))?;
        }
        fs::write(&path, text)
            .map_err(|e| CliError::Input(format!("writing {}: {e}", path.display())))
    }

    fn subdir(&self, rel: &str) -> Result<PathBuf, CliError> {
        let path = self.root.join(rel);
        fs::create_dir_all(&path)
            .map_err(|e| CliError::Input(format!("cannot create {}: {e}", path.display())))?;
        Ok(path)
    }
}

fn config_echo(command: &str, bag: &ConfigBag) -> Value {
    let mut map = serde_json::Map::new();
    map.insert("command".to_string(), Value::String(command.to_string()));
    for (k, v) in bag.resolved() {
        map.insert(k.clone(), v.clone());
    }
    Value::Object(map)
}

/// Writes a metric report's standard artifact set: metrics.json, the ROC
/// curve as CSV, and the ROC plot.
fn write_report(dir: &RunDir, report: &MetricsReport, title: &str) -> Result<(), CliError> {
    dir.write_json("metrics.json", report)?;
    let mut csv = Vec::new();
    write_roc_csv(&mut csv, &report.roc).map_err(input)?;
    dir.write_text("curves/roc.csv", &String::from_utf8_lossy(&csv))?;
    dir.write_text("plots/roc.svg", &plots::roc_svg(&report.roc, title))?;
    Ok(())
}

fn summary_line(report: &MetricsReport) -> String {
    format!(
        "auroc {:.4}  eer [{:.4}, {:.4}]  far@0 {:.4}",
        report.auroc, report.eer.lower, report.eer.upper, report.far_at_zero
    )
}

// ── corpus directories ───────────────────────────────────────────────────────

/// On-disk corpus layout produced by `ingest` and `simulate`: the window
/// records, training-split normalization statistics, and the split itself.
struct CorpusBundle {
    corpus: Vec<Gesture>,
    norm: NormStats,
    #[allow(dead_code)]
    split: SplitSpec,
}

fn read_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_corpus_dir(dir: &Path) -> Result<CorpusBundle, CliError> {
    let corpus = read_corpus(&dir.join("corpus.jsonl")).map_err(input)?;
    if corpus.is_empty() {
        return Err(CliError::Input(format!(
            "corpus {} holds no windows",
            dir.join("corpus.jsonl").display()
        )));
    }
    Ok(CorpusBundle {
        corpus,
        norm: read_json_file(&dir.join("norm.json"))?,
        split: read_json_file(&dir.join("split.json"))?,
    })
}

fn normalized(corpus: &[Gesture], norm: &NormStats) -> Vec<Gesture> {
    corpus.iter().map(|g| apply_norm(g, norm)).collect()
}

/// Writes a freshly built corpus with its split and normalization; shared by
/// `ingest` and `simulate`.
fn write_corpus_dir(
    out: &Path,
    corpus: &[Gesture],
    split_cfg: &SplitConfig,
    echo: Value,
) -> Result<SplitSpec, CliError> {
    let corpus_path = out.join("corpus.jsonl");
    if corpus_path.exists() {
        return Err(CliError::Input(format!(
            "{} already exists; refusing to overwrite",
            corpus_path.display()
        )));
    }
    fs::create_dir_all(out)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", out.display())))?;
    let split = temporal_split(corpus, split_cfg).map_err(input)?;
    let train_owned: Vec<Gesture> = split
        .select(corpus, &split.train)
        .into_iter()
        .cloned()
        .collect();
    let norm = fit_norm_stats(&train_owned).map_err(input)?;
    write_corpus(&corpus_path, corpus).map_err(input)?;
    write_pretty(&out.join("norm.json"), &norm)?;
    write_pretty(&out.join("split.json"), &split)?;
    write_pretty(&out.join("config.json"), &echo)?;
    Ok(split)
}

fn write_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Input(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Input(format!("writing {}: {e}", path.display())))
}

// ── shared resolution helpers ────────────────────────────────────────────────

fn resolve_split(
    bag: &mut ConfigBag,
    train_fraction: Option<f64>,
    val_fraction: Option<f64>,
    split_seed: Option<u64>,
    fallback_seed: u64,
) -> Result<SplitConfig, CliError> {
    Ok(SplitConfig {
        train_fraction: bag.f64("train_fraction", train_fraction, Some(2.0 / 3.0))?,
        val_fraction: bag.f64("val_fraction", val_fraction, Some(0.2))?,
        seed: bag.u64("split_seed", split_seed, Some(fallback_seed))?,
    })
}

fn parse_loss(name: &str) -> Result<LossKind, CliError> {
    match name {
        "mse" => Ok(LossKind::Mse),
        "soft_dtw" => Ok(LossKind::SoftDtw),
        "klb_mod" => Ok(LossKind::KlbMod),
        "mse_feature" => Ok(LossKind::MseFeature),
        "klb_mod_feature" => Ok(LossKind::KlbModFeature),
        other => Err(CliError::Input(format!(
            "unknown loss {other:?}; expected mse, soft_dtw, klb_mod, mse_feature or klb_mod_feature"
        ))),
    }
}

fn parse_reg(name: &str) -> Result<RegKind, CliError> {
    match name {
        "vae" => Ok(RegKind::Vae),
        "wae" => Ok(RegKind::Wae),
        "none" => Ok(RegKind::None),
        other => Err(CliError::Input(format!(
            "unknown reg {other:?}; expected vae, wae or none"
        ))),
    }
}

fn parse_kernel(name: &str) -> Result<WaeKernel, CliError> {
    match name {
        "euclidean" => Ok(WaeKernel::Euclidean),
        "squared" => Ok(WaeKernel::Squared),
        other => Err(CliError::Input(format!(
            "unknown wae_kernel {other:?}; expected euclidean or squared"
        ))),
    }
}

/// `"none"` means no synthetic augmentation; any other name must parse, with
/// the adversarial mixing weight optionally overridden.
fn resolve_strategy(
    bag: &mut ConfigBag,
    strategy: Option<&str>,
    mix_weight: Option<f64>,
    default: &str,
) -> Result<Option<SampleStrategy>, CliError> {
    let name = bag.string("strategy", strategy, Some(default))?;
    if name == "none" {
        return Ok(None);
    }
    let parsed = SampleStrategy::parse(&name).ok_or_else(|| {
        CliError::Input(format!(
            "unknown strategy {name:?}; expected neighbourhood, self_mixed, adversarial, same_user or none"
        ))
    })?;
    let parsed = match parsed {
        SampleStrategy::Adversarial { mix_weight: w } => SampleStrategy::Adversarial {
            mix_weight: bag.f64("mix_weight", mix_weight, Some(w))?,
        },
        other => other,
    };
    parsed.validate().map_err(input)?;
    Ok(Some(parsed))
}

/// The generative trainer settings shared by `train-vae`, `tstr` and `sweep`.
fn resolve_vae_train(
    bag: &mut ConfigBag,
    a: &args::VaeArgs,
    exclude: Vec<String>,
) -> Result<VaeTrainConfig, CliError> {
    let reg_kind = parse_reg(&bag.string("reg", a.reg.as_deref(), Some("vae"))?)?;
    let default_beta = match reg_kind {
        RegKind::Wae => 1e-3,
        _ => 1e-4,
    };
    let model = VaeConfig {
        reg_kind,
        beta: bag.f64("beta", a.beta, Some(default_beta))?,
        alpha: bag.f64("alpha", a.alpha, Some(1e-2))?,
        loss: LossSpec::for_kind(parse_loss(&bag.string(
            "loss",
            a.loss.as_deref(),
            Some("klb_mod_feature"),
        )?)?),
        temperature: bag.f64("temperature", a.temperature, Some(1.0))?,
        wae_kernel: parse_kernel(&bag.string("wae_kernel", a.wae_kernel.as_deref(), Some("euclidean"))?)?,
        beta_warmup_epochs: bag.usize("warmup_epochs", a.warmup_epochs, Some(0))?,
        pretrain_epochs: bag.usize("pretrain_epochs", a.pretrain_epochs, Some(0))?,
    };
    let cfg = VaeTrainConfig {
        model,
        lr: bag.f64("lr", a.lr, Some(1e-4))?,
        batch_size: bag.usize("batch_size", a.batch_size, Some(32))?,
        max_epochs: bag.usize("epochs", a.epochs, Some(2000))?,
        patience: bag.usize("patience", a.patience, Some(150))?,
        val_fraction: bag.f64("val_fraction", a.val_fraction, Some(0.2))?,
        seed: bag.u64("seed", a.seed, Some(0))?,
        exclude_users: exclude,
    };
    cfg.validate().map_err(input)?;
    Ok(cfg)
}

fn resolve_forest(
    bag: &mut ConfigBag,
    trees: Option<usize>,
    min_samples_leaf: Option<usize>,
    forest_seed: Option<u64>,
) -> Result<ForestSpec, CliError> {
    Ok(ForestSpec {
        n_trees: bag.usize("trees", trees, Some(100))?,
        min_samples_leaf: bag.usize("min_samples_leaf", min_samples_leaf, Some(1))?,
        seed: bag.u64("forest_seed", forest_seed, Some(0))?,
    })
}

// ── ingest ───────────────────────────────────────────────────────────────────

/// Raw directory convention: one `<stem>.csv` sensor log (header
/// `gesture_id,sensor,t_ms,x,y,z`) plus one `<stem>.json` manifest per user.
pub fn cmd_ingest(bag: &mut ConfigBag, a: &args::IngestArgs) -> Result<(), CliError> {
    let raw = bag.path("raw", a.raw.as_deref(), None)?;
    let out = bag.path("out", a.out.as_deref(), None)?;
    let format = CsvFormat {
        acc_tag: bag.string("acc_tag", a.acc_tag.as_deref(), Some("acc"))?,
        gyr_tag: bag.string("gyr_tag", a.gyr_tag.as_deref(), Some("gyr"))?,
    };
    let seed = bag.u64("seed", a.seed, Some(0))?;
    let split_cfg = resolve_split(bag, a.train_fraction, a.val_fraction, a.split_seed, seed)?;

    let mut stems: Vec<PathBuf> = fs::read_dir(&raw)
        .map_err(|e| CliError::Input(format!("raw directory {}: {e}", raw.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
        .collect();
    stems.sort();
    if stems.is_empty() {
        return Err(CliError::Input(format!(
            "no .csv files under {}",
            raw.display()
        )));
    }

    let mut corpus = Vec::new();
    for csv_path in &stems {
        let manifest_path = csv_path.with_extension("json");
        if !manifest_path.exists() {
            return Err(CliError::Input(format!(
                "missing manifest {} for {}",
                manifest_path.display(),
                csv_path.display()
            )));
        }
        corpus.extend(ingest_user(csv_path, &manifest_path, &format).map_err(input)?);
    }

    let echo = config_echo("ingest", bag);
    let split = write_corpus_dir(&out, &corpus, &split_cfg, echo)?;
    let gestures = corpus.iter().filter(|g| g.is_gesture).count();
    println!(
        "ingested {} windows ({gestures} gestures, {} non-gestures) from {} files into {}",
        corpus.len(),
        corpus.len() - gestures,
        stems.len(),
        out.display()
    );
    println!(
        "split: {} train / {} validation / {} test",
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    Ok(())
}

// ── simulate ─────────────────────────────────────────────────────────────────

pub fn cmd_simulate(bag: &mut ConfigBag, a: &args::SimulateArgs) -> Result<(), CliError> {
    let out = bag.path("out", a.out.as_deref(), None)?;
    let users = bag.usize("users", a.users, Some(8))?;
    let gestures = bag.usize("gestures", a.gestures, Some(20))?;
    let non_gestures = bag.usize("non_gestures", a.non_gestures, Some(5))?;
    let noise = bag.f64("noise", a.noise, Some(0.1))?;
    let seed = bag.u64("seed", a.seed, Some(0))?;
    let split_cfg = resolve_split(bag, a.train_fraction, a.val_fraction, a.split_seed, seed)?;
    if users == 0 {
        return Err(CliError::Input("users must be >= 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profiles: Vec<SimUserProfile> = (0..users)
        .map(|i| SimUserProfile::random(&format!("user-{i}"), &mut rng, noise))
        .collect();
    let corpus = simulate_corpus(&profiles, gestures, non_gestures, seed);

    let echo = config_echo("simulate", bag);
    write_corpus_dir(&out, &corpus, &split_cfg, echo)?;
    println!(
        "simulated {} windows for {users} users into {}",
        corpus.len(),
        out.display()
    );
    Ok(())
}

// ── train-auth ───────────────────────────────────────────────────────────────

pub fn cmd_train_auth(bag: &mut ConfigBag, a: &args::TrainAuthArgs) -> Result<(), CliError> {
    let corpus_dir = bag.path("corpus", a.corpus.as_deref(), None)?;
    let target = bag.string("target_user", a.target_user.as_deref(), None)?;
    let arch_name = bag.string("arch", a.arch.as_deref(), Some("complexmix"))?;
    let arch = ArchName::parse(&arch_name).ok_or_else(|| {
        CliError::Input(format!(
            "unknown arch {arch_name:?}; expected mlp, convnet, gru, simplemix or complexmix"
        ))
    })?;
    let seed = bag.u64("seed", a.seed, Some(0))?;
    let cfg = TrainConfig {
        lr: bag.f64("lr", a.lr, Some(1e-4))?,
        pos_weight: bag.f64("pos_weight", a.pos_weight, Some(4.0))?,
        patience: bag.usize("patience", a.patience, Some(150))?,
        max_epochs: bag.usize("epochs", a.epochs, Some(2000))?,
        batch_size: bag.usize("batch_size", a.batch_size, Some(32))?,
        seed,
        limited_fraction: bag.f64_opt("limited_fraction", a.limited_fraction)?,
        split: resolve_split(bag, a.train_fraction, a.val_fraction, a.split_seed, 0)?,
    };
    cfg.validate().map_err(input)?;
    let name = bag.string("name", a.name.as_deref(), Some("train-auth"))?;
    let out = bag.path("out", a.out.as_deref(), Some("."))?;

    let bundle = load_corpus_dir(&corpus_dir)?;
    let dir = RunDir::create(&out, &name)?;
    dir.write_json("config.json", &config_echo("train-auth", bag))?;

    let mut model = build_architecture(&ArchSpec::new(arch), seed).map_err(input)?;
    let history = train_classifier(&mut model, &bundle.corpus, &target, &cfg)
        .map_err(classifier_err)?;

    // Score the held-out temporal test split: genuine = target user.
    let (split, stats) =
        training_norm_stats(&bundle.corpus, &cfg, &target).map_err(classifier_err)?;
    let test_refs: Vec<&Gesture> = split
        .select(&bundle.corpus, &split.test)
        .into_iter()
        .filter(|g| g.is_gesture)
        .collect();
    let scores = predict_proba_normalized(&model, &stats, &test_refs).map_err(numerical)?;
    let labels: Vec<bool> = test_refs.iter().map(|g| g.user_id == target).collect();
    let report = compute_metrics(
        &ScoreSet::new(scores, labels).map_err(eval_err)?,
        config_echo("train-auth", bag),
    )
    .map_err(eval_err)?;

    let mut loss_csv = String::from("epoch,train_loss,val_loss\n");
    for (e, (tr, va)) in history.train_loss.iter().zip(&history.val_loss).enumerate() {
        loss_csv.push_str(&format!("{e},{tr},{va}\n"));
    }
    dir.write_text("curves/train_loss.csv", &loss_csv)?;
    write_report(&dir, &report, &format!("{arch_name} authentication, user {target}"))?;
    dir.write_json(
        "metrics_training.json",
        &json!({
            "best_epoch": history.best_epoch,
            "stopped_early": history.stopped_early,
            "n_train": history.n_train,
            "n_val": history.n_val,
            "n_train_positives": history.n_train_positives,
        }),
    )?;
    save_checkpoint(
        &dir.subdir("checkpoints")?.join("model"),
        json!({ "kind": "auth-classifier", "spec": model.spec }),
        &model.params,
    )
    .map_err(input)?;

    println!("trained {arch_name} for user {target}: {}", summary_line(&report));
    println!("run directory: {}", dir.root.display());
    Ok(())
}

// ── train-vae ────────────────────────────────────────────────────────────────

pub fn cmd_train_vae(bag: &mut ConfigBag, a: &args::TrainVaeArgs) -> Result<(), CliError> {
    let corpus_dir = bag.path("corpus", a.corpus.as_deref(), None)?;
    let exclude = bag.string_opt("exclude_user", a.exclude_user.as_deref())?;
    let cfg = resolve_vae_train(bag, &a.vae, exclude.clone().into_iter().collect())?;
    let name = bag.string("name", a.name.as_deref(), Some("train-vae"))?;
    let out = bag.path("out", a.out.as_deref(), Some("."))?;

    let bundle = load_corpus_dir(&corpus_dir)?;
    let windows = normalized(&bundle.corpus, &bundle.norm);
    let dir = RunDir::create(&out, &name)?;
    dir.write_json("config.json", &config_echo("train-vae", bag))?;

    let (model, history) = train_vae(&windows, &cfg).map_err(generative_err)?;

    let mut csv = String::from("epoch,train_total,val_total,val_recon,val_reg,val_auth,val_mrr\n");
    for e in 0..history.train_total.len() {
        csv.push_str(&format!(
            "{e},{},{},{},{},{},{}\n",
            history.train_total[e],
            history.val_total[e],
            history.val_recon[e],
            history.val_reg[e],
            history.val_auth[e],
            history.val_mrr[e],
        ));
    }
    dir.write_text("curves/vae_loss.csv", &csv)?;

    let best = history.best_epoch;
    dir.write_json(
        "metrics.json",
        &json!({
            "best_epoch": best,
            "stopped_early": history.stopped_early,
            "n_train": history.n_train,
            "n_val": history.n_val,
            "val_total": history.val_total[best],
            "val_recon": history.val_recon[best],
            "val_reg": history.val_reg[best],
            "val_auth": history.val_auth[best],
            "val_mrr": history.val_mrr[best],
        }),
    )?;
    save_vae(&model, &dir.subdir("checkpoints")?.join("vae")).map_err(input)?;

    // Latent scatter over the windows the model trained on, colored by user.
    let included: Vec<&Gesture> = windows
        .iter()
        .filter(|g| g.is_gesture && model.user_index(&g.user_id).is_some())
        .collect();
    let mut rows = Vec::new();
    let mut class_of = Vec::new();
    for g in &included {
        let emb = encode(&model, &g.series).map_err(numerical)?;
        rows.push(emb.mu.to_vec());
        class_of.push(model.user_index(&g.user_id).unwrap_or(0));
    }
    let projected = plots::principal_plane(&rows);
    dir.write_text(
        "plots/latent.svg",
        &plots::scatter_svg(
            &projected,
            &class_of,
            model.users(),
            "latent embeddings, 2-component projection",
        ),
    )?;

    let mut recons = Vec::new();
    for g in included.iter().take(3) {
        let emb = encode(&model, &g.series).map_err(numerical)?;
        recons.push(decode(&model, &emb.mu).map_err(numerical)?);
    }
    let pairs: Vec<(String, &TimeSeries, &TimeSeries)> = included
        .iter()
        .zip(&recons)
        .map(|(g, r)| (g.gesture_id.clone(), &g.series, r))
        .collect();
    dir.write_text(
        "plots/recon.svg",
        &plots::overlay_svg(&pairs, "original (solid) vs reconstruction (dashed)"),
    )?;

    println!(
        "trained generative model: best epoch {best}, val_total {:.4}, val_recon {:.4}",
        history.val_total[best], history.val_recon[best]
    );
    println!("run directory: {}", dir.root.display());
    Ok(())
}

// ── generate ─────────────────────────────────────────────────────────────────

/// Accepts either a `train-vae` run directory or a checkpoint stem.
fn resolve_vae_stem(path: &Path) -> PathBuf {
    let nested = path.join("checkpoints/vae");
    if nested.with_extension("json").exists() {
        nested
    } else {
        path.to_path_buf()
    }
}

pub fn cmd_generate(bag: &mut ConfigBag, a: &args::GenerateArgs) -> Result<(), CliError> {
    let corpus_dir = bag.path("corpus", a.corpus.as_deref(), None)?;
    let vae_path = bag.path("vae", a.vae.as_deref(), None)?;
    let target = bag.string("target_user", a.target_user.as_deref(), None)?;
    let strategy = resolve_strategy(bag, a.strategy.as_deref(), a.mix_weight, "adversarial")?
        .ok_or_else(|| CliError::Input("generate needs a concrete strategy, not none".into()))?;
    let count = bag.usize("count", a.count, Some(500))?;
    let seed = bag.u64("seed", a.seed, Some(0))?;
    let name = bag.string("name", a.name.as_deref(), Some("generate"))?;
    let out = bag.path("out", a.out.as_deref(), Some("."))?;

    let bundle = load_corpus_dir(&corpus_dir)?;
    let model = load_vae(&resolve_vae_stem(&vae_path)).map_err(input)?;
    let windows = normalized(&bundle.corpus, &bundle.norm);

    let target_windows: Vec<&TimeSeries> = windows
        .iter()
        .filter(|g| g.is_gesture && g.user_id == target)
        .map(|g| &g.series)
        .collect();
    if target_windows.is_empty() {
        return Err(CliError::Input(format!(
            "user {target:?} has no gesture windows in the corpus"
        )));
    }
    let other_refs: Vec<&TimeSeries> = windows
        .iter()
        .filter(|g| g.is_gesture && g.user_id != target)
        .map(|g| &g.series)
        .collect();
    let other_embeddings = encode_batch(&model, &other_refs).map_err(generative_err)?;

    let dir = RunDir::create(&out, &name)?;
    dir.write_json("config.json", &config_echo("generate", bag))?;

    let synthetic = generate_synthetic(
        &model,
        &strategy,
        &target_windows,
        &other_embeddings,
        count,
        seed,
    )
    .map_err(generative_err)?;

    // Synthetic windows are emitted in raw sensor units so the file is
    // interchangeable with ingested corpora; extra fields mark provenance.
    let mut lines = String::new();
    for (i, series) in synthetic.iter().enumerate() {
        let raw_space = invert_norm(
            &Gesture {
                user_id: target.clone(),
                gesture_id: format!("syn-{i}"),
                terminal: None,
                is_gesture: true,
                series: series.clone(),
                nfc_t_ms: None,
            },
            &bundle.norm,
        );
        let record = json!({
            "user_id": raw_space.user_id,
            "gesture_id": raw_space.gesture_id,
            "terminal": raw_space.terminal,
            "is_gesture": true,
            "nfc_t_ms": raw_space.nfc_t_ms,
            "series": (0..raw_space.series.rows())
                .map(|r| raw_space.series.row(r).to_vec())
                .collect::<Vec<_>>(),
            "synthetic": true,
            "strategy": strategy.name(),
        });
        lines.push_str(&serde_json::to_string(&record).map_err(input)?);
        lines.push('\n');
    }
    dir.write_text("synthetic.jsonl", &lines)?;
    dir.write_json(
        "metrics.json",
        &json!({
            "count": synthetic.len(),
            "strategy": strategy.name(),
            "target_user": target,
            "n_target_windows": target_windows.len(),
            "n_other_embeddings": other_embeddings.len(),
        }),
    )?;

    let overlay: Vec<(String, &TimeSeries, &TimeSeries)> = synthetic
        .iter()
        .take(3)
        .enumerate()
        .map(|(i, s)| (format!("syn-{i}"), target_windows[0], s))
        .collect();
    dir.write_text(
        "plots/synthetic.svg",
        &plots::overlay_svg(&overlay, "enrolment window (solid) vs synthetic (dashed)"),
    )?;

    println!(
        "generated {} synthetic windows for user {target} with {}",
        synthetic.len(),
        strategy.name()
    );
    println!("run directory: {}", dir.root.display());
    Ok(())
}

// ── evaluate ─────────────────────────────────────────────────────────────────

#[derive(serde::Deserialize)]
struct ScoresFile {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

pub fn cmd_evaluate(bag: &mut ConfigBag, a: &args::EvaluateArgs) -> Result<(), CliError> {
    let scores_path = bag.path("scores", a.scores.as_deref(), None)?;
    let name = bag.string("name", a.name.as_deref(), Some("evaluate"))?;
    let out = bag.path("out", a.out.as_deref(), Some("."))?;

    let file: ScoresFile = read_json_file(&scores_path)?;
    let set = ScoreSet::new(file.scores, file.labels).map_err(eval_err)?;
    let report = compute_metrics(&set, config_echo("evaluate", bag)).map_err(eval_err)?;

    let dir = RunDir::create(&out, &name)?;
    dir.write_json("config.json", &config_echo("evaluate", bag))?;
    write_report(&dir, &report, "score set")?;
    println!("{}", summary_line(&report));
    println!("run directory: {}", dir.root.display());
    Ok(())
}

// ── tstr ─────────────────────────────────────────────────────────────────────

fn resolve_tstr_auth(
    bag: &mut ConfigBag,
    a: &args::AuthExpArgs,
) -> Result<TstrAuthConfig, CliError> {
    let vae = resolve_vae_train(bag, &a.vae, Vec::new())?;
    let strategy = resolve_strategy(bag, a.strategy.as_deref(), a.mix_weight, "adversarial")?;
    let cfg = TstrAuthConfig {
        seed: vae.seed,
        vae,
        strategy,
        n_synthetic: bag.usize("n_synthetic", a.n_synthetic, Some(500))?,
        per_terminal: bag.usize("per_terminal", a.per_terminal, Some(2))?,
        include_real_negatives: bag.bool(
            "include_real_negatives",
            a.include_real_negatives.then_some(true),
            false,
        )?,
        forest: resolve_forest(bag, a.trees, a.min_samples_leaf, a.forest_seed)?,
    };
    cfg.validate().map_err(eval_err)?;
    Ok(cfg)
}

pub fn cmd_tstr(bag: &mut ConfigBag, a: &args::TstrArgs) -> Result<(), CliError> {
    let mode = bag.string("mode", a.mode.as_deref(), Some("auth"))?;
    let corpus_dir = bag.path("corpus", a.auth.corpus.as_deref(), None)?;
    let bundle = load_corpus_dir(&corpus_dir)?;
    let windows = normalized(&bundle.corpus, &bundle.norm);

    match mode.as_str() {
        "auth" => {
            let holdout = bag.string("holdout", a.auth.holdout.as_deref(), None)?;
            let cfg = resolve_tstr_auth(bag, &a.auth)?;
            let name = bag.string("name", a.auth.name.as_deref(), Some("tstr-auth"))?;
            let out = bag.path("out", a.auth.out.as_deref(), Some("."))?;
            let dir = RunDir::create(&out, &name)?;
            dir.write_json("config.json", &config_echo("tstr", bag))?;
            let report = tstr_auth(&windows, &holdout, &cfg).map_err(eval_err)?;
            write_report(
                &dir,
                &report,
                &format!("train-synthetic test-real authentication, holdout {holdout}"),
            )?;
            println!("tstr auth, holdout {holdout}: {}", summary_line(&report));
            println!("run directory: {}", dir.root.display());
        }
        "intent" => {
            let vae = resolve_vae_train(bag, &a.auth.vae, Vec::new())?;
            let cfg = TstrIntentConfig {
                forest: resolve_forest(bag, a.auth.trees, a.auth.min_samples_leaf, a.auth.forest_seed)?,
                n_positive: bag.usize("n_positive", a.n_positive, Some(240))?,
                n_negative: bag.usize("n_negative", a.n_negative, Some(240))?,
                use_reconstructions: bag.bool(
                    "use_reconstructions",
                    a.no_reconstructions.then_some(false),
                    true,
                )?,
                train_fraction: bag.f64("train_fraction", a.train_fraction, Some(0.5))?,
                seed: vae.seed,
            };
            cfg.validate().map_err(eval_err)?;
            let name = bag.string("name", a.auth.name.as_deref(), Some("tstr-intent"))?;
            let out = bag.path("out", a.auth.out.as_deref(), Some("."))?;
            let dir = RunDir::create(&out, &name)?;
            dir.write_json("config.json", &config_echo("tstr", bag))?;
            let (model, _) = train_vae(&windows, &vae).map_err(generative_err)?;
            let report = tstr_intent(&model, &windows, &cfg).map_err(eval_err)?;
            write_report(&dir, &report, "train-synthetic test-real intent detection")?;
            println!("tstr intent: {}", summary_line(&report));
            println!("run directory: {}", dir.root.display());
        }
        other => {
            return Err(CliError::Input(format!(
                "unknown mode {other:?}; expected auth or intent"
            )))
        }
    }
    Ok(())
}

// ── sweep ────────────────────────────────────────────────────────────────────

fn parse_counts(text: &str) -> Result<Vec<usize>, CliError> {
    let counts: Result<Vec<usize>, _> = text
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect();
    let counts = counts.map_err(|_| {
        CliError::Input(format!(
            "counts {text:?} must be comma-separated positive integers"
        ))
    })?;
    if counts.is_empty() || counts.contains(&0) {
        return Err(CliError::Input(
            "counts needs at least one entry, all >= 1".into(),
        ));
    }
    Ok(counts)
}

pub fn cmd_sweep(bag: &mut ConfigBag, a: &args::SweepArgs, jobs: usize) -> Result<(), CliError> {
    let corpus_dir = bag.path("corpus", a.auth.corpus.as_deref(), None)?;
    let holdout = bag.string("holdout", a.auth.holdout.as_deref(), None)?;
    let counts = parse_counts(&bag.string("counts", a.counts.as_deref(), Some("1,2,4,8"))?)?;
    let cfg = resolve_tstr_auth(bag, &a.auth)?;
    let name = bag.string("name", a.auth.name.as_deref(), Some("sweep"))?;
    let out = bag.path("out", a.auth.out.as_deref(), Some("."))?;

    let bundle = load_corpus_dir(&corpus_dir)?;
    let windows = normalized(&bundle.corpus, &bundle.norm);
    let dir = RunDir::create(&out, &name)?;
    dir.write_json("config.json", &config_echo("sweep", bag))?;

    let table = if jobs <= 1 {
        enrolment_sweep(&windows, &holdout, &counts, &cfg).map_err(eval_err)?
    } else {
        sweep_parallel(&windows, &holdout, &counts, &cfg, jobs)?
    };

    dir.write_json("metrics.json", &table)?;
    let mut csv = Vec::new();
    write_sweep_csv(&mut csv, &table).map_err(input)?;
    dir.write_text("curves/sweep.csv", &String::from_utf8_lossy(&csv))?;
    let plot_rows: Vec<(usize, f64, f64, f64, f64)> = table
        .rows
        .iter()
        .map(|r| {
            (
                r.gestures_per_terminal,
                r.baseline.far_at_zero,
                r.augmented.far_at_zero,
                r.baseline.auroc,
                r.augmented.auroc,
            )
        })
        .collect();
    dir.write_text(
        "plots/sweep.svg",
        &plots::sweep_svg(&plot_rows, &format!("enrolment sweep, holdout {holdout}")),
    )?;

    for row in &table.rows {
        println!(
            "per-terminal {:2}: baseline {} | augmented {}",
            row.gestures_per_terminal,
            summary_line(&row.baseline),
            summary_line(&row.augmented),
        );
    }
    println!("run directory: {}", dir.root.display());
    Ok(())
}

/// Same semantics as the library sweep, with rows fanned out over `jobs`
/// worker threads. The generative model is trained once and shared; rows are
/// reassembled in input order, so output is bit-identical to the serial path.
fn sweep_parallel(
    windows: &[Gesture],
    holdout: &str,
    counts: &[usize],
    cfg: &TstrAuthConfig,
    jobs: usize,
) -> Result<SweepTable, CliError> {
    use gestauth_core::eval::tstr_auth_with_model;

    let mut vae_cfg = cfg.vae.clone();
    vae_cfg.exclude_users = vec![holdout.to_string()];
    let (model, _) = train_vae(windows, &vae_cfg).map_err(generative_err)?;
    let strategy = cfg.strategy.unwrap_or_else(SampleStrategy::adversarial);

    let results: Vec<Result<SweepRow, EvalError>> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for chunk in counts.chunks(counts.len().div_ceil(jobs)) {
            let model = &model;
            let cfg = cfg.clone();
            handles.push(scope.spawn(move || {
                chunk
                    .iter()
                    .map(|&count| {
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
                        Ok(SweepRow {
                            gestures_per_terminal: count,
                            baseline: tstr_auth_with_model(model, windows, holdout, &baseline_cfg)?,
                            augmented: tstr_auth_with_model(
                                model,
                                windows,
                                holdout,
                                &augmented_cfg,
                            )?,
                        })
                    })
                    .collect::<Vec<_>>()
            }));
        }
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });

    let mut rows = Vec::with_capacity(counts.len());
    for result in results {
        rows.push(result.map_err(eval_err)?);
    }
    let config = json!({
        "experiment": "enrolment_sweep",
        "held_out_user": holdout,
        "gestures_per_terminal": counts,
        "strategy": strategy.name(),
        "n_synthetic": cfg.n_synthetic,
        "include_real_negatives": cfg.include_real_negatives,
        "forest": cfg.forest,
        "seed": cfg.seed,
    });
    Ok(SweepTable { rows, config })
}

