//! `ct3vae` command line: train, sample, verify, eval, sweep, synth.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{DataSource, ExperimentConfig};
use crate::data::{
    read_labels, read_tensor, write_labels, write_tensor, DatasetManifest, LabeledDataset,
};
use crate::error::{ensure, Error, Result};
use crate::experiment::{evaluate_model, nearest_centroid_labels, prepare_data, run_trial};
use crate::generate::{generate, GenerateOptions};
use crate::kv::KeyValues;
use crate::metrics::{per_class_report, ClassReport};
use crate::models::Family;
use crate::oracle::{run_suite, Level, Mutation};
use crate::svg::{bar_chart, line_chart, Series};
use crate::train::{parse_list, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFY: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "ct3vae",
    version,
    about = "Class-conditional heavy-tailed VAEs on long-tailed data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Overrides shared by every subcommand; each maps onto a config key.
#[derive(Args, Debug, Default, Clone)]
struct Common {
    /// Flat key=value experiment file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    family: Option<String>,
    #[arg(long, global = true)]
    rho: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    nu: Option<f64>,
    #[arg(long, global = true)]
    sigma: Option<f64>,
    /// Latent sampling scale τ (overrides the closed form).
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// approx | exact | original
    #[arg(long, global = true)]
    tau_mode: Option<String>,
    /// Comma-separated class weights.
    #[arg(long, global = true)]
    alpha: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// auto | raw | projection[:dim[:seed]]
    #[arg(long, global = true)]
    feature_space: Option<String>,
    /// k for k-NN precision/recall.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Dataset manifest.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Any config key, repeatable: --set key=value.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write a checkpoint plus a per-epoch loss log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from an existing checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Draw samples from a checkpoint.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Check the closed forms against Monte-Carlo and quadrature oracles.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = LevelArg::Quick)]
        level: LevelArg,
    },
    /// Per-class precision/recall/F1 and Fréchet distances on a balanced test set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "samples")]
        checkpoint: Option<PathBuf>,
        /// Sample tensor file.
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Label file for --samples; nearest test-class centroid when absent.
        #[arg(long, requires = "samples")]
        labels: Option<PathBuf>,
        /// Test dataset manifest (defaults to the configured dataset's test split).
        #[arg(long)]
        test: Option<PathBuf>,
        /// Also write a per-class F1 bar chart.
        #[arg(long)]
        svg: bool,
    },
    /// Train/evaluate over a grid of one hyperparameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long)]
        grid: String,
        /// Comma-separated families (default: the configured family).
        #[arg(long)]
        families: Option<String>,
        /// Reuse this checkpoint for a τ sweep instead of training.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write the synthetic fixture (after ρ decay) as tensor files and a manifest.
    Synth {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LevelArg {
    Quick,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SweepParam {
    Beta,
    Nu,
    Tau,
    Rho,
}

impl SweepParam {
    fn key(self) -> &'static str {
        match self {
            SweepParam::Beta => "beta",
            SweepParam::Nu => "nu",
            SweepParam::Tau => "tau",
            SweepParam::Rho => "rho",
        }
    }
}

impl Common {
    fn overrides(&self) -> Result<KeyValues> {
        let mut kv = KeyValues::default();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                kv.set(k, v);
            }
        };
        put("seed", self.seed.map(|v| v.to_string()));
        put("family", self.family.clone());
        put("rho", self.rho.map(|v| v.to_string()));
        put("beta", self.beta.map(|v| v.to_string()));
        put("nu", self.nu.map(|v| v.to_string()));
        put("sigma", self.sigma.map(|v| v.to_string()));
        put("tau", self.tau.map(|v| v.to_string()));
        put("tau_mode", self.tau_mode.clone());
        put("alpha", self.alpha.clone());
        put("epochs", self.epochs.map(|v| v.to_string()));
        put(
            "out_dir",
            self.out_dir.as_ref().map(|p| p.display().to_string()),
        );
        put("feature_space", self.feature_space.clone());
        put("knn_k", self.k.map(|v| v.to_string()));
        put(
            "dataset",
            self.dataset.as_ref().map(|p| p.display().to_string()),
        );
        for item in &self.set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{item}'")))?;
            kv.set(k.trim(), v.trim());
        }
        Ok(kv)
    }

    fn resolve(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::resolve(self.config.as_deref(), &self.overrides()?)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_report(report: &ClassReport, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    write_file(path, buf)
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Train { common, resume } => cmd_train(&common.resolve()?, resume.as_deref()),
        Command::Sample {
            common,
            checkpoint,
            count,
        } => cmd_sample(&common.resolve()?, &checkpoint, count),
        Command::Verify { common, level } => cmd_verify(&common.resolve()?, level),
        Command::Eval {
            common,
            checkpoint,
            samples,
            labels,
            test,
            svg,
        } => cmd_eval(
            &common.resolve()?,
            checkpoint.as_deref(),
            samples.as_deref(),
            labels.as_deref(),
            test.as_deref(),
            svg,
        ),
        Command::Sweep {
            common,
            param,
            grid,
            families,
            checkpoint,
        } => cmd_sweep(
            &common.resolve()?,
            param,
            &grid,
            families.as_deref(),
            checkpoint.as_deref(),
        ),
        Command::Synth { common } => cmd_synth(&common.resolve()?),
    }
}

fn cmd_train(cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<i32> {
    let data = prepare_data(cfg)?;
    let mut trainer = match resume {
        Some(path) => {
            let mut t = Trainer::load(path)?;
            t.config.epochs = cfg.epochs;
            t
        }
        None => Trainer::new(cfg.train_config(data.train.dim(), data.train.k)?)?,
    };
    trainer.fit(&data.train)?;
    create_dir(&cfg.out_dir)?;
    let ck = trainer.save(&cfg.out_dir.join("checkpoint"))?;
    let mut log = Vec::new();
    trainer.write_history_csv(&mut log)?;
    write_file(&cfg.out_dir.join("train_log.csv"), log)?;
    let series = [
        Series {
            name: "total".into(),
            points: trainer
                .history
                .iter()
                .map(|r| (r.epoch as f64, r.total))
                .collect(),
        },
        Series {
            name: "reconstruction".into(),
            points: trainer
                .history
                .iter()
                .map(|r| (r.epoch as f64, r.reconstruction))
                .collect(),
        },
    ];
    write_file(
        &cfg.out_dir.join("train_loss.svg"),
        line_chart(
            &format!("{} training loss", trainer.config.model.family),
            "epoch",
            "loss",
            &series,
            false,
        ),
    )?;
    let last = trainer.history.last().map_or(f64::NAN, |r| r.total);
    println!(
        "trained {} for {} epochs: final loss {last:.6}; checkpoint {}",
        trainer.config.model.family,
        trainer.epochs_done(),
        ck.display()
    );
    Ok(EXIT_OK)
}

fn cmd_sample(cfg: &ExperimentConfig, checkpoint: &Path, count: Option<usize>) -> Result<i32> {
    let trainer = Trainer::load(checkpoint)?;
    let opts = GenerateOptions {
        count: count.unwrap_or(cfg.count),
        seed: cfg.seed,
        tau_mode: cfg.tau_mode,
        tau: cfg.tau,
        alpha: cfg.alpha.clone(),
        decoder: cfg.decoder_output,
    };
    let g = generate(&trainer.model, trainer.mean_log_det, &opts)?;
    create_dir(&cfg.out_dir)?;
    write_tensor(&cfg.out_dir.join("samples.htvt"), &g.samples)?;
    write_tensor(&cfg.out_dir.join("latents.htvt"), &g.latents)?;
    if let Some(labels) = &g.labels {
        write_labels(&cfg.out_dir.join("labels.htvt"), labels)?;
    }
    println!(
        "wrote {} samples (τ² = {:.6}) to {}",
        opts.count,
        g.tau2,
        cfg.out_dir.display()
    );
    Ok(EXIT_OK)
}

fn cmd_verify(cfg: &ExperimentConfig, level: LevelArg) -> Result<i32> {
    let level = match level {
        LevelArg::Quick => Level::Quick,
        LevelArg::Full => Level::Full,
    };
    let report = run_suite(level, Mutation::None)?;
    create_dir(&cfg.out_dir)?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    write_file(&cfg.out_dir.join("verify.csv"), &buf)?;
    print!("{}", String::from_utf8_lossy(&buf));
    let ok = report.passed();
    println!("verify: {}", if ok { "PASS" } else { "FAIL" });
    Ok(if ok { EXIT_OK } else { EXIT_VERIFY })
}

fn load_test(cfg: &ExperimentConfig, test: Option<&Path>) -> Result<LabeledDataset> {
    let set = match test {
        Some(path) => DatasetManifest::read(path)?.load_test()?,
        None => prepare_data(cfg)?.test,
    };
    set.ok_or_else(|| {
        Error::Config("no test split available (pass --test with a manifest that lists one)".into())
    })
}

fn cmd_eval(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    samples: Option<&Path>,
    labels: Option<&Path>,
    test: Option<&Path>,
    svg: bool,
) -> Result<i32> {
    let test = load_test(cfg, test)?;
    for (c, &n) in test.class_counts.iter().enumerate() {
        ensure!(n > 0, Protocol, "class {c} is absent from the test set");
    }
    let report = match (checkpoint, samples) {
        (Some(ck), None) => {
            let trainer = Trainer::load(ck)?;
            evaluate_model(&trainer.model, trainer.mean_log_det, &test, cfg, cfg.seed)?
        }
        (None, Some(path)) => {
            let x = read_tensor(path)?;
            let balanced = test.balanced(cfg.seed)?;
            let y = match labels {
                Some(l) => read_labels(l)?,
                None => nearest_centroid_labels(&balanced, &x),
            };
            per_class_report(
                &balanced,
                &x,
                &y,
                &cfg.feature_space_for(balanced.dim()),
                cfg.knn_k,
            )?
        }
        _ => {
            return Err(Error::Config(
                "eval needs exactly one of --checkpoint or --samples".into(),
            ))
        }
    };
    create_dir(&cfg.out_dir)?;
    write_report(&report, &cfg.out_dir.join("eval.csv"))?;
    if svg {
        let cats: Vec<String> = report.classes.iter().map(|c| c.class.to_string()).collect();
        let series = vec![
            (
                "precision".to_string(),
                report.classes.iter().map(|c| c.precision).collect(),
            ),
            (
                "recall".to_string(),
                report.classes.iter().map(|c| c.recall).collect(),
            ),
            (
                "F1".to_string(),
                report.classes.iter().map(|c| c.f1).collect(),
            ),
        ];
        write_file(
            &cfg.out_dir.join("eval_f1.svg"),
            bar_chart("per-class metrics", "score", &cats, &series),
        )?;
    }
    println!("{}", report.summary_line());
    Ok(EXIT_OK)
}

fn with_param(cfg: &ExperimentConfig, param: SweepParam, value: f64) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    match param {
        SweepParam::Beta => c.beta = value,
        SweepParam::Nu => c.nu = value,
        SweepParam::Tau => c.tau = Some(value),
        SweepParam::Rho => c.rho = value,
    }
    c.validate()?;
    Ok(c)
}

fn cmd_sweep(
    cfg: &ExperimentConfig,
    param: SweepParam,
    grid: &str,
    families: Option<&str>,
    checkpoint: Option<&Path>,
) -> Result<i32> {
    let values: Vec<f64> = parse_list(grid)?;
    ensure!(!values.is_empty(), Config, "empty sweep grid");
    ensure!(
        checkpoint.is_none() || param == SweepParam::Tau,
        Config,
        "--checkpoint reuse applies to τ sweeps only"
    );
    let families: Vec<Family> = match (families, checkpoint) {
        (Some(list), None) => list
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<_>>()?,
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "--families cannot be combined with --checkpoint".into(),
            ))
        }
        (None, Some(ck)) => vec![Trainer::load(ck)?.config.model.family],
        (None, None) => vec![cfg.family],
    };
    for &v in &values {
        with_param(cfg, param, v)?;
    }

    let mut rows: Vec<(Family, f64, ClassReport)> = Vec::new();
    let mut sampler_runs = 0usize;
    for &family in &families {
        let base = ExperimentConfig {
            family,
            ..cfg.clone()
        };
        if param == SweepParam::Tau {
            let trainer = match checkpoint {
                Some(ck) => Trainer::load(ck)?,
                None => {
                    let data = prepare_data(&base)?;
                    let mut t = Trainer::new(base.train_config(data.train.dim(), data.train.k)?)?;
                    t.fit(&data.train)?;
                    t
                }
            };
            let test = load_test(&base, None)?;
            for &v in &values {
                let c = with_param(&base, param, v)?;
                rows.push((
                    family,
                    v,
                    evaluate_model(&trainer.model, trainer.mean_log_det, &test, &c, c.seed)?,
                ));
                sampler_runs += 1;
            }
        } else {
            for &v in &values {
                let c = with_param(&base, param, v)?;
                rows.push((family, v, run_trial(&c)?.report));
                sampler_runs += 1;
            }
        }
    }

    create_dir(&cfg.out_dir)?;
    let key = param.key();
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record([
        "family",
        key,
        "macro_precision",
        "macro_recall",
        "macro_f1",
        "pooled_frechet",
        "tail_recall",
        "collapsed_classes",
    ])?;
    for (family, v, r) in &rows {
        let collapsed: Vec<String> = r.collapsed_classes().iter().map(usize::to_string).collect();
        out.write_record([
            family.as_str().to_string(),
            v.to_string(),
            format!("{:.6}", r.macro_precision),
            format!("{:.6}", r.macro_recall),
            format!("{:.6}", r.macro_f1),
            format!("{:.6}", r.pooled_frechet),
            format!("{:.6}", r.classes.last().map_or(f64::NAN, |c| c.recall)),
            collapsed.join(";"),
        ])?;
    }
    let bytes = out
        .into_inner()
        .map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
    write_file(&cfg.out_dir.join(format!("sweep_{key}.csv")), &bytes)?;
    let series: Vec<Series> = families
        .iter()
        .map(|f| Series {
            name: f.as_str().into(),
            points: rows
                .iter()
                .filter(|r| r.0 == *f)
                .map(|r| (r.1, r.2.macro_f1))
                .collect(),
        })
        .collect();
    let log_x = param == SweepParam::Rho && values.iter().all(|v| *v > 0.0);
    write_file(
        &cfg.out_dir.join(format!("sweep_{key}.svg")),
        line_chart(
            &format!("macro-F1 vs {key}"),
            key,
            "macro F1",
            &series,
            log_x,
        ),
    )?;
    print!("{}", String::from_utf8_lossy(&bytes));
    println!(
        "sweep {key}: {} rows, {sampler_runs} sampler runs",
        rows.len()
    );
    Ok(EXIT_OK)
}

fn cmd_synth(cfg: &ExperimentConfig) -> Result<i32> {
    let DataSource::Synthetic(_) = &cfg.data else {
        return Err(Error::Config(
            "synth writes the synthetic fixture; unset `dataset`".into(),
        ));
    };
    let data = prepare_data(cfg)?;
    let manifest =
        DatasetManifest::write_dataset(&cfg.out_dir, &data.train, data.test.as_ref(), cfg.rho)?;
    println!(
        "wrote {} training samples (counts {:?}) and manifest {}",
        data.train.len(),
        data.train.class_counts,
        manifest.display()
    );
    Ok(EXIT_OK)
}
