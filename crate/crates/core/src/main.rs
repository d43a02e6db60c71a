use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pgn_core::data::checkpoint::{
    load_checkpoint, load_parameters, render_train_config, save_checkpoint, save_parameters,
    Checkpoint,
};
use pgn_core::data::config::{parse_document, read_document, Document};
use pgn_core::data::synthetic::{generate, SyntheticConfig};
use pgn_core::data::{load_dataset, save_dataset, Format};
use pgn_core::data::{normalize, Dataset, Normalization, NormalizationMode, Split};
use pgn_core::diffcore::init::streams;
use pgn_core::diffcore::Rng;
use pgn_core::eval::{export_curves, SummaryRow, SummaryTable};
use pgn_core::eval::{fgsm_images, score};
use pgn_core::models::{desk_classifier, AccessPolicy, FrozenClassifier, Network, NetworkSpec};
use pgn_core::theory::{render_checks, verify_all};
use pgn_core::train::{train_classifier, PgnTrainer};
use pgn_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "pgn",
    version,
    about = "Train and evaluate perturbation generation networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
struct Common {
    /// Configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration value; `section.key=value` for other sections.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone, Debug)]
struct RunFlags {
    /// enhance or adversarial.
    #[arg(long)]
    mode: Option<String>,
    /// ls or ce.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda: Option<f32>,
    /// Query the classifier for labels only.
    #[arg(long)]
    black_box: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic train and test splits to disk.
    GenSyntheticData {
        #[command(flatten)]
        common: Common,
        /// idx_binary or raw_tensor_dir.
        #[arg(long, default_value = "idx_binary")]
        format: String,
    },
    /// Train the target classifier and store its parameters.
    TrainClassifier {
        #[command(flatten)]
        common: Common,
    },
    /// Train a generator/discriminator pair against a frozen classifier.
    TrainPgn {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunFlags,
        /// Parameters written by `train-classifier`; trains one when absent.
        #[arg(long)]
        classifier: Option<PathBuf>,
        /// Continue from a checkpoint of the same run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Compare vanilla, perturbed and gradient-sign accuracy on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Gradient-sign step in pixel units.
        #[arg(long, default_value_t = 0.03)]
        epsilon: f32,
    },
    /// Check the optimality and convergence results numerically.
    VerifyTheory {
        #[command(flatten)]
        common: Common,
    },
    /// Write the per-epoch metrics of a checkpoint as CSV.
    ExportCurves {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Destination file.
        #[arg(long, default_value = "curves.csv")]
        out: PathBuf,
    },
}

/// Classifier epochs when the configuration names none.
const CLASSIFIER_EPOCHS: usize = 15;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.module());
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command) -> Result<ExitCode> {
    match command {
        Command::GenSyntheticData { common, format } => gen_data(&common, &format),
        Command::TrainClassifier { common } => train_classifier_cmd(&common),
        Command::TrainPgn {
            common,
            run,
            classifier,
            resume,
        } => train_pgn_cmd(&common, &run, classifier.as_deref(), resume.as_deref()),
        Command::Evaluate {
            common,
            checkpoint,
            epsilon,
        } => evaluate_cmd(&common, &checkpoint, epsilon),
        Command::VerifyTheory { common } => verify_cmd(&common),
        Command::ExportCurves { checkpoint, out } => {
            let ck = load_checkpoint(&checkpoint)?;
            export_curves(&ck.trainer.rows, &out)?;
            println!("wrote {} rows to {}", ck.trainer.rows.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn document(common: &Common) -> Result<Document> {
    let mut doc = match &common.config {
        Some(path) => read_document(path)?,
        None => parse_document("")?,
    };
    for item in &common.set {
        doc.apply_override(item)?;
    }
    if let Some(seed) = common.seed {
        doc.set("train", "seed", &seed.to_string())?;
    }
    Ok(doc)
}

fn apply_run_flags(doc: &mut Document, run: &RunFlags) -> Result<()> {
    if let Some(v) = &run.mode {
        doc.set("train", "mode", v)?;
    }
    if let Some(v) = &run.loss {
        doc.set("train", "loss", v)?;
    }
    if let Some(v) = run.gamma {
        doc.set("train", "gamma", &v.to_string())?;
    }
    if let Some(v) = run.lambda {
        doc.set("train", "lambda", &v.to_string())?;
    }
    if run.black_box {
        doc.set("train", "access", "black_box")?;
    }
    Ok(())
}

fn out_dir(common: &Common) -> Result<&Path> {
    fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    Ok(&common.out)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn normalization_mode(doc: &Document) -> Result<NormalizationMode> {
    doc.get("train", "normalization")
        .map_or(Ok(NormalizationMode::Vanilla01), str::parse)
}

struct Splits {
    train: Dataset,
    val: Dataset,
    test: Dataset,
}

/// Train, validation and test data in the configured normalization. Data read
/// from disk validates on the test split.
fn load_splits(doc: &Document) -> Result<Splits> {
    let opts = doc.data_options();
    let (train, val, test) = match &opts.dir {
        Some(dir) => {
            let format: Format = opts.format.as_deref().unwrap_or("idx_binary").parse()?;
            let dir = Path::new(dir);
            let train = load_dataset(dir, Split::Train, format, opts.classes)?;
            let test = load_dataset(dir, Split::Test, format, opts.classes)?;
            (train, test.clone(), test)
        }
        None => {
            let mut cfg = SyntheticConfig::default();
            if let Some(noise) = opts.noise {
                cfg.noise = noise;
            }
            (
                generate(opts.train_size, opts.seed, Split::Train, &cfg)?,
                generate(opts.val_size, opts.seed + 1, Split::Train, &cfg)?,
                generate(opts.test_size, opts.seed, Split::Test, &cfg)?,
            )
        }
    };
    let mode = normalization_mode(doc)?;
    Ok(Splits {
        val: normalize(&val, mode, &train)?,
        test: normalize(&test, mode, &train)?,
        train: normalize(&train, mode, &train)?,
    })
}

fn classifier_spec(doc: &Document, classes: usize) -> Result<NetworkSpec> {
    Ok(doc
        .network_specs()?
        .remove("classifier")
        .unwrap_or_else(|| desk_classifier(classes)))
}

/// Rebuilds a frozen classifier from stored parameters.
fn classifier_from(
    spec: NetworkSpec,
    params: Vec<pgn_core::diffcore::Parameter>,
    policy: AccessPolicy,
) -> Result<FrozenClassifier> {
    let mut network = Network::new(spec, &mut Rng::new(0, streams::INIT))?;
    network.restore(params)?;
    Ok(FrozenClassifier::new(network, policy))
}

fn gen_data(common: &Common, format: &str) -> Result<ExitCode> {
    let format: Format = format.parse()?;
    let doc = document(common)?;
    let opts = doc.data_options();
    let dir = out_dir(common)?;
    let mut cfg = SyntheticConfig::default();
    if let Some(noise) = opts.noise {
        cfg.noise = noise;
    }
    let train = generate(opts.train_size, opts.seed, Split::Train, &cfg)?;
    let test = generate(opts.test_size, opts.seed, Split::Test, &cfg)?;
    save_dataset(&train, dir, format)?;
    save_dataset(&test, dir, format)?;
    write(&dir.join("run.txt"), &doc.render())?;
    println!(
        "wrote {} train and {} test images to {}",
        train.len(),
        test.len(),
        dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn train_classifier_cmd(common: &Common) -> Result<ExitCode> {
    let doc = document(common)?;
    let dir = out_dir(common)?;
    let data = load_splits(&doc)?;
    let spec = classifier_spec(&doc, data.train.classes())?;
    let opts = doc.classifier_options(CLASSIFIER_EPOCHS)?;
    let (f, report) = train_classifier(&data.train, &data.val, spec, &opts)?;
    let (_, test_acc, _) = score(&f, data.test.images(), data.test.labels())?;
    save_parameters(&dir.join("classifier.params"), f.network().params())?;
    write(&dir.join("run.txt"), &doc.render())?;
    let summary = format!(
        "epochs {}\ntrain_accuracy {:.4}\nval_accuracy {:.4}\ntest_accuracy {:.4}\nchecksum {}\n",
        report.epochs_run,
        report.train_accuracy,
        report.val_accuracy.last().copied().unwrap_or(f64::NAN),
        test_acc,
        f.checksum()
    );
    write(&dir.join("classifier.txt"), &summary)?;
    print!("{summary}");
    Ok(ExitCode::SUCCESS)
}

fn train_pgn_cmd(
    common: &Common,
    run: &RunFlags,
    classifier: Option<&Path>,
    resume: Option<&Path>,
) -> Result<ExitCode> {
    let mut doc = document(common)?;
    apply_run_flags(&mut doc, run)?;
    for field in ["mode", "loss"] {
        if doc.get("train", field).is_none() {
            return Err(Error::MissingField {
                field: field.into(),
            });
        }
    }
    let cfg = doc.train_config()?;
    // Record every resolved value so run.txt alone reproduces the run.
    for line in render_train_config(&cfg).lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            doc.set("train", k, v)?;
        }
    }
    let dir = out_dir(common)?;
    let ck_dir = dir.join("checkpoints");
    fs::create_dir_all(&ck_dir).map_err(|e| Error::io(&ck_dir, e))?;
    write(&dir.join("run.txt"), &doc.render())?;

    let data = load_splits(&doc)?;
    let spec = classifier_spec(&doc, data.train.classes())?;
    let f = match classifier {
        Some(path) => classifier_from(spec, load_parameters(path)?, cfg.access)?,
        None => {
            let opts = doc.classifier_options(CLASSIFIER_EPOCHS)?;
            train_classifier(&data.train, &data.val, spec, &opts)?
                .0
                .with_policy(cfg.access)
        }
    };
    let checksum = f.checksum();
    let mut trainer = PgnTrainer::new(cfg.clone(), &data.train, &f)?;
    if let Some(path) = resume {
        let ck = load_checkpoint(path)?;
        if ck.config != cfg {
            return Err(Error::Config(format!(
                "{} was written by a different configuration",
                path.display()
            )));
        }
        trainer.restore(ck.trainer)?;
    }
    let (_, vanilla_test, _) = score(&f, data.test.images(), data.test.labels())?;
    println!("classifier {checksum} vanilla test top1 {vanilla_test:.4}");
    while !trainer.is_done() {
        let r = trainer.run_epoch()?.row;
        let ck = Checkpoint {
            config: cfg.clone(),
            trainer: trainer.state(),
            classifier: f.network().params().to_vec(),
        };
        save_checkpoint(&ck_dir.join(format!("epoch-{:03}.ckpt", r.epoch)), &ck)?;
        export_curves(trainer.rows(), &dir.join("curves.csv"))?;
        let map = r
            .map
            .map_or_else(|| "NA".to_string(), |m| format!("{m:.4}"));
        println!(
            "epoch {:3}  L_d {:.4}  L_g {:.4}  L_r {:10.3}  top1 {:.4}  mAP {map}  pos {}  neg {}",
            r.epoch, r.l_d, r.l_g, r.l_r, r.top1, r.pos, r.neg
        );
    }
    let j = trainer.perturb_images(data.test.images())?;
    let (_, test_top1, _) = score(&f, &j, data.test.labels())?;
    if f.checksum() != checksum {
        return Err(Error::Config(
            "classifier parameters changed during training".into(),
        ));
    }
    println!("perturbed test top1 {test_top1:.4} (vanilla {vanilla_test:.4})");
    Ok(ExitCode::SUCCESS)
}

/// `run.txt` in the checkpoint's directory or the one above it.
fn config_near(checkpoint: &Path) -> Option<PathBuf> {
    checkpoint
        .ancestors()
        .skip(1)
        .take(2)
        .map(|d| d.join("run.txt"))
        .find(|p| p.is_file())
}

fn evaluate_cmd(common: &Common, checkpoint: &Path, epsilon: f32) -> Result<ExitCode> {
    let mut common = common.clone();
    if common.config.is_none() {
        common.config = config_near(checkpoint);
    }
    let doc = document(&common)?;
    let dir = out_dir(&common)?;
    let ck = load_checkpoint(checkpoint)?;
    let data = load_splits(&doc)?;
    let spec = classifier_spec(&doc, data.train.classes())?;
    let name = spec.name.clone();
    let f = classifier_from(spec, ck.classifier, ck.config.access)?;
    let mut trainer = PgnTrainer::new(ck.config.clone(), &data.train, &f)?;
    trainer.restore(ck.trainer)?;

    let (images, labels) = (data.test.images(), data.test.labels());
    let (_, v_top1, v_map) = score(&f, images, labels)?;
    let (_, p_top1, p_map) = score(&f, &trainer.perturb_images(images)?, labels)?;
    // The gradient-sign baseline always needs gradients, so it runs white-box.
    let white = f.with_policy(AccessPolicy::WhiteBoxLogits);
    let std = match data.test.normalization() {
        Normalization::Vanilla01 => vec![1.0; images.shape()[1]],
        Normalization::ZeroMeanUnitVar(stats) => stats.std.clone(),
    };
    let scale: Vec<f32> = std.iter().map(|s| epsilon / s).collect();
    let (_, b_top1, b_map) = score(
        &white,
        &fgsm_images(&white, images, labels, &scale)?,
        labels,
    )?;
    let table = SummaryTable {
        rows: vec![SummaryRow {
            dataset: "test".into(),
            classifier: format!("{name} ({})", ck.config.access.name()),
            vanilla: (v_top1, v_map),
            proposed: (p_top1, p_map),
            baseline: Some((b_top1, b_map)),
        }],
    };
    let text = table.render();
    write(&dir.join("summary.txt"), &text)?;
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn verify_cmd(common: &Common) -> Result<ExitCode> {
    let doc = document(common)?;
    let seed = doc
        .get("train", "seed")
        .map_or(Ok(0), |s| s.parse::<u64>())
        .map_err(|e| Error::Config(e.to_string()))?;
    let dir = out_dir(common)?;
    let checks = verify_all(seed)?;
    let text = render_checks(&checks);
    write(&dir.join("theory.txt"), &text)?;
    print!("{text}");
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        eprintln!(
            "error: theory-verify: {failed} of {} checks failed",
            checks.len()
        );
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}
