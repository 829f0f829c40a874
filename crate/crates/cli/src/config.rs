use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use falnet_core::model::Readout;
use falnet_core::pipeline::PipelineConfig;
use serde::Deserialize;

/// Keys accepted in a `--config` TOML file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub period: Option<usize>,
    pub tau: Option<f64>,
    pub train_fraction: Option<f64>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub dropout: Option<f64>,
    pub window: Option<usize>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub seed: Option<u64>,
    pub hidden: Option<usize>,
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub readout: Option<Readout>,
    pub forget_bias: Option<f64>,
    pub gamma_init: Option<f64>,
    pub val_fraction: Option<f64>,
    pub clip_norm: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| anyhow::anyhow!("config {}: {}", path.display(), e.message()))
    }
}

/// Flags shared by every subcommand that builds or uses a model.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// TOML file with defaults for any of these flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input CSV
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Checkpoint file
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub period: Option<usize>,
    /// Low-pass cutoff in cycles per sample
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long = "lr", alias = "learning-rate")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    #[arg(long)]
    pub adam_beta2: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
    #[arg(long, env = "FALNET_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// `last` or `mean`
    #[arg(long)]
    pub readout: Option<Readout>,
    #[arg(long)]
    pub forget_bias: Option<f64>,
    #[arg(long)]
    pub gamma_init: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub pipeline: PipelineConfig,
}

impl RunConfig {
    pub fn input(&self) -> Result<&Path> {
        match &self.input {
            Some(p) => Ok(p),
            None => bail!("no input CSV given (use --input or `input` in the config file)"),
        }
    }

    pub fn checkpoint(&self) -> Result<&Path> {
        match &self.checkpoint {
            Some(p) => Ok(p),
            None => bail!("no checkpoint path given (use --checkpoint or `checkpoint` in the config file)"),
        }
    }
}

/// Flag, then config file, then built-in default.
pub fn resolve(args: &RunArgs) -> Result<RunConfig> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let mut p = PipelineConfig::default();
    macro_rules! pick {
        ($field:ident => $target:expr) => {
            if let Some(v) = args.$field.clone().or(file.$field.clone()) {
                $target = v;
            }
        };
    }
    pick!(period => p.period);
    pick!(tau => p.tau);
    pick!(train_fraction => p.train_fraction);
    pick!(learning_rate => p.train.learning_rate);
    pick!(batch_size => p.train.batch_size);
    pick!(epochs => p.train.epochs);
    pick!(dropout => p.train.dropout);
    pick!(window => p.train.window);
    pick!(adam_beta1 => p.train.adam_beta1);
    pick!(adam_beta2 => p.train.adam_beta2);
    pick!(adam_eps => p.train.adam_eps);
    pick!(seed => p.train.seed);
    pick!(hidden => p.train.hidden);
    pick!(layers => p.train.layers);
    pick!(heads => p.train.heads);
    pick!(readout => p.train.readout);
    pick!(forget_bias => p.train.forget_bias);
    pick!(gamma_init => p.train.gamma_init);
    pick!(val_fraction => p.train.val_fraction);
    if let Some(c) = args.clip_norm.or(file.clip_norm) {
        p.train.clip_norm = Some(c);
    }
    p.validate()?;
    Ok(RunConfig {
        input: args.input.clone().or(file.input),
        checkpoint: args.checkpoint.clone().or(file.checkpoint),
        pipeline: p,
    })
}
