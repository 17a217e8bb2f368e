//! Command-line interface.

use std::path::{Path, PathBuf};

use cadlab_core::analysis;
use cadlab_core::scm::{self, MaskTemplate};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::formats::{self, SchemaFile, TemplateFile};
use crate::sweep::{Mechanism, SweepSpec, Variant};
use crate::tables::{self, MetricRow};
use crate::{dataset, run, Error};

#[derive(Debug, Parser)]
#[command(name = "cadlab", version, about = "Synthetic multimodal missingness experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic dataset.
    Generate(GenerateArgs),
    /// Hide modalities of an existing dataset.
    Mask(MaskArgs),
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Bias diagnostics.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Train one model per grid cell and tabulate test metrics.
    Sweep(SweepArgs),
    /// Write the built-in MNAR template or schema as JSON.
    Template(TemplateArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Schema JSON; the built-in schema drawn from `--seed` otherwise.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long, requires = "test_out")]
    pub test_n: Option<usize>,
    #[arg(long, requires = "test_n")]
    pub test_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MaskMode {
    Mcar,
    Mnar,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub mode: MaskMode,
    /// MCAR drop probability.
    #[arg(long, required_if_eq("mode", "mcar"))]
    pub rate: Option<f64>,
    /// MNAR template scale.
    #[arg(long, conflicts_with = "target_rate")]
    pub alpha: Option<f64>,
    /// MNAR: pick the template scale whose expected missing rate is this.
    #[arg(long)]
    pub target_rate: Option<f64>,
    /// Template JSON; the built-in six-group template otherwise.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Comma-separated modality indices the template columns map to.
    #[arg(long, value_delimiter = ',')]
    pub maskable: Vec<usize>,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed (and `CADLAB_SEED`).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = run::BOOTSTRAP_RESAMPLES)]
    pub bootstrap: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = run::BOOTSTRAP_RESAMPLES)]
    pub bootstrap: usize,
    /// Bootstrap seed; the checkpoint's seed otherwise.
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV destination; stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Label entropy per missingness pattern.
    Nce {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        classes: Option<usize>,
        /// Also write the bucket histogram here.
        #[arg(long)]
        buckets: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// AUC-ROC within each MNAR group.
    Subgroup {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean distance between full and extra-masked causal embeddings.
    EmbedDist {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        rate: f64,
        #[arg(long)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// CSV destination, one row per cell.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<usize>,
    /// Counterfactual loss weights.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub missing_rate: Vec<f64>,
    #[arg(long, default_value = "mnar")]
    pub mechanism: Mechanism,
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Any of full, baseline, a1, a4, a5, a6.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<Variant>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value_t = run::BOOTSTRAP_RESAMPLES)]
    pub bootstrap: usize,
    /// Write a run directory per cell under this path.
    #[arg(long)]
    pub runs: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TemplateArgs {
    #[arg(value_enum)]
    pub kind: TemplateKind,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TemplateKind {
    Mnar,
    Schema,
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, Error> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => {
            let mut c = RunConfig::default();
            c.apply_env()?;
            c
        }
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.train.validate()?;
    Ok(cfg)
}

fn template_or_default(path: Option<&Path>) -> Result<MaskTemplate, Error> {
    path.map_or_else(|| Ok(MaskTemplate::default()), formats::load_template)
}

fn emit<T: serde::Serialize>(rows: &[T], out: Option<&Path>) -> Result<(), Error> {
    match out {
        Some(p) => tables::save_rows(rows, p),
        None => tables::write_rows(rows, std::io::stdout().lock()),
    }
}

fn generate(a: GenerateArgs) -> Result<(), Error> {
    let file = match &a.schema {
        Some(p) => formats::read_json::<SchemaFile>(p)?,
        None => SchemaFile {
            seed: a.seed,
            ..SchemaFile::default()
        },
    };
    let schema = file.build()?;
    let (train, test) = run::generate_split(&schema, a.n, a.test_n.unwrap_or(0), a.seed)?;
    dataset::save_dataset(&train, &a.out)?;
    if let Some(p) = &a.test_out {
        dataset::save_dataset(&test, p)?;
    }
    Ok(())
}

fn mask(a: MaskArgs) -> Result<(), Error> {
    let data = dataset::load_dataset(&a.data, None)?;
    let out = match a.mode {
        MaskMode::Mcar => scm::apply_mcar(&data, a.rate.unwrap_or(0.0), a.seed)?,
        MaskMode::Mnar => {
            let template = template_or_default(a.template.as_deref())?;
            let maskable = if a.maskable.is_empty() {
                let m = data.first().map_or(0, |s| s.num_modalities());
                let w = template.modalities.len().min(m);
                (m - w..m).collect()
            } else {
                a.maskable
            };
            let alpha = match (a.alpha, a.target_rate) {
                (Some(x), _) => x,
                (None, Some(r)) => run::mnar_alpha_for_rate(&data, &template, &maskable, r)?,
                (None, None) => 1.0,
            };
            scm::apply_mnar(&data, &template, alpha, &maskable, a.seed)?
        }
    };
    dataset::save_dataset(&out, &a.out)
}

fn train(a: TrainArgs) -> Result<(), Error> {
    let cfg = load_config(a.config.as_deref(), a.seed)?;
    let data = dataset::load_dataset(&a.data, None)?;
    let test = a.test.as_deref().map(|p| dataset::load_dataset(p, None)).transpose()?;
    let out = run::run(&cfg, &data, test.as_deref(), a.bootstrap)?;
    run::write_run_dir(&a.out, &cfg, &out)?;
    if let Some(r) = &out.report {
        println!("auc_roc={} auc_prc={} accuracy={}", r.auc_roc, r.auc_prc, r.accuracy);
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<(), Error> {
    let ck: formats::Checkpoint = formats::read_json(&a.checkpoint)?;
    let seed = a.seed.unwrap_or(ck.seed);
    let model = ck.into_model().map_err(|e| e.in_file(&a.checkpoint))?;
    let data = dataset::load_dataset(&a.data, Some(model.config.feature_dims.len()))?;
    let r = run::evaluate(&model, &data, a.bootstrap, seed)?;
    let rows: Vec<MetricRow> = tables::metric_rows(&r);
    emit(&rows, a.out.as_deref())
}

fn analyze(c: AnalyzeCommand) -> Result<(), Error> {
    match c {
        AnalyzeCommand::Nce {
            data,
            classes,
            buckets,
            out,
        } => {
            let d = dataset::load_dataset(&data, None)?;
            let report = analysis::nce_analysis(&d, classes.unwrap_or_else(|| run::num_classes(&d)));
            if let Some(b) = buckets {
                tables::save_rows(&tables::bucket_rows(&report), &b)?;
            }
            emit(&tables::nce_rows(&report), out.as_deref())
        }
        AnalyzeCommand::Subgroup { checkpoint, data, out } => {
            let model = run::load_checkpoint(&checkpoint)?;
            let d = dataset::load_dataset(&data, Some(model.config.feature_dims.len()))?;
            let groups = analysis::subgroup_auc(&d, &run::positive_prob(&model, &d)?);
            emit(&tables::group_rows(&groups), out.as_deref())
        }
        AnalyzeCommand::EmbedDist {
            checkpoint,
            data,
            rate,
            seed,
        } => {
            let model = run::load_checkpoint(&checkpoint)?;
            let d = dataset::load_dataset(&data, Some(model.config.feature_dims.len()))?;
            println!("{}", run::embedding_distance(&model, &d, rate, seed)?);
            Ok(())
        }
    }
}

fn sweep(a: SweepArgs) -> Result<(), Error> {
    let base = load_config(a.config.as_deref(), a.seed)?;
    let train = dataset::load_dataset(&a.data, None)?;
    let test = dataset::load_dataset(&a.test, None)?;
    let spec = SweepSpec {
        base,
        variants: a.variants,
        ks: a.k,
        alphas: a.alpha,
        missing_rates: a.missing_rate,
        mechanism: a.mechanism,
        template: template_or_default(a.template.as_deref())?,
        resamples: a.bootstrap,
        jobs: a.jobs,
        run_root: a.runs,
    };
    let rows = spec.run(&train, &test)?;
    tables::save_rows(&rows, &a.out)
}

fn template(a: TemplateArgs) -> Result<(), Error> {
    match a.kind {
        TemplateKind::Mnar => formats::write_json(&TemplateFile::from(&MaskTemplate::default()), &a.out),
        TemplateKind::Schema => formats::write_json(&SchemaFile::default(), &a.out),
    }
}

pub fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Mask(a) => mask(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Analyze(c) => analyze(c),
        Command::Sweep(a) => sweep(a),
        Command::Template(a) => template(a),
    }
}
