//! Run settings. Every command-specific option can come from a flag or from
//! the matching table of the TOML file given with `--config`; flags win, then
//! the file, then the built-in default. Relative paths in the file resolve
//! against the file's directory.
//!
//! ```toml
//! seed = 7
//! out = "runs/enhance"
//!
//! [enhance]
//! input = "frames"
//! method = "gamma"
//! gamma = 0.8
//! ```

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use uvot_core::dataset::Split;
use uvot_core::imaging::DEFAULT_GAMMA;
use uvot_core::tracking::NormMode;

use crate::error::CliError;

pub const SNAPSHOT_FILE: &str = "run_config.toml";

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Gray-world white balance.
    Wb,
    /// Gamma correction with `--gamma`.
    Gamma,
    /// Histogram equalization.
    He,
    /// The trained enhancement network (needs `--checkpoint`).
    UwieTr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NormArg {
    #[default]
    Diagonal,
    PerAxis,
}

impl From<NormArg> for NormMode {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Diagonal => NormMode::Diagonal,
            NormArg::PerAxis => NormMode::PerAxis,
        }
    }
}

/// Which manifest sequences an evaluation covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SplitArg {
    #[default]
    All,
    Train,
    Test,
}

impl SplitArg {
    pub fn admits(self, split: Split) -> bool {
        match self {
            SplitArg::All => true,
            SplitArg::Train => split == Split::Train,
            SplitArg::Test => split == Split::Test,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhanceOpts {
    /// Directory of input frames (PNG, BMP, JPEG or .uwimg).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Exponent of the gamma method [default: 0.7].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Network checkpoint, required by `--method uwie-tr`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnhanceSettings {
    pub input: PathBuf,
    pub method: Method,
    pub gamma: f64,
    pub checkpoint: Option<PathBuf>,
}

impl EnhanceOpts {
    fn rebase(&mut self, base: &Path) {
        rebase(base, &mut self.input);
        rebase(base, &mut self.checkpoint);
    }

    pub fn resolve(self, file: Self) -> Result<EnhanceSettings, CliError> {
        Ok(EnhanceSettings {
            input: self
                .input
                .or(file.input)
                .ok_or(CliError::MissingSetting("input"))?,
            method: self
                .method
                .or(file.method)
                .ok_or(CliError::MissingSetting("method"))?,
            gamma: self.gamma.or(file.gamma).unwrap_or(DEFAULT_GAMMA),
            checkpoint: self.checkpoint.or(file.checkpoint),
        })
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOpts {
    /// JSON list of (raw, target) image pairs.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Gradient-descent steps [default: 200].
    #[arg(long)]
    pub steps: Option<usize>,
    /// Learning rate [default: 0.01].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Window side [default: 4].
    #[arg(long)]
    pub patch: Option<usize>,
    /// Feature channels [default: 8].
    #[arg(long)]
    pub channels: Option<usize>,
    /// Encoder layers [default: 1].
    #[arg(long)]
    pub layers: Option<usize>,
    /// Attention heads [default: 2].
    #[arg(long)]
    pub heads: Option<usize>,
    /// Encoder MLP width [default: twice the token size].
    #[arg(long)]
    pub mlp_hidden: Option<usize>,
    /// Checkpoint file name inside the output directory [default: model.uwtr].
    #[arg(long)]
    pub checkpoint_name: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSettings {
    pub pairs: PathBuf,
    pub steps: usize,
    pub lr: f64,
    pub patch: usize,
    pub channels: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_hidden: Option<usize>,
    pub checkpoint_name: String,
}

impl TrainOpts {
    fn rebase(&mut self, base: &Path) {
        rebase(base, &mut self.pairs);
    }

    pub fn resolve(self, file: Self) -> Result<TrainSettings, CliError> {
        Ok(TrainSettings {
            pairs: self
                .pairs
                .or(file.pairs)
                .ok_or(CliError::MissingSetting("pairs"))?,
            steps: self.steps.or(file.steps).unwrap_or(200),
            lr: self.lr.or(file.lr).unwrap_or(1e-2),
            patch: self.patch.or(file.patch).unwrap_or(4),
            channels: self.channels.or(file.channels).unwrap_or(8),
            layers: self.layers.or(file.layers).unwrap_or(1),
            heads: self.heads.or(file.heads).unwrap_or(2),
            mlp_hidden: self.mlp_hidden.or(file.mlp_hidden),
            checkpoint_name: self
                .checkpoint_name
                .or(file.checkpoint_name)
                .unwrap_or_else(|| "model.uwtr".into()),
        })
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOpts {
    /// Dataset manifest (JSON).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// One directory per tracker holding `<sequence>.txt` result files; the
    /// directory name is the tracker name.
    #[arg(long, num_args = 1..)]
    pub results: Option<Vec<PathBuf>>,
    /// Sequences to evaluate [default: all].
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    /// Normalization of the center error [default: diagonal].
    #[arg(long, value_enum)]
    pub norm_mode: Option<NormArg>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSettings {
    pub dataset: PathBuf,
    pub results: Vec<PathBuf>,
    pub split: SplitArg,
    pub norm_mode: NormArg,
}

impl EvalOpts {
    fn rebase(&mut self, base: &Path) {
        rebase(base, &mut self.dataset);
        for r in self.results.iter_mut().flatten() {
            if r.is_relative() {
                *r = base.join(&*r);
            }
        }
    }

    pub fn resolve(self, file: Self) -> Result<EvalSettings, CliError> {
        let results = self
            .results
            .or(file.results)
            .filter(|r| !r.is_empty())
            .ok_or(CliError::MissingSetting("results"))?;
        Ok(EvalSettings {
            dataset: self
                .dataset
                .or(file.dataset)
                .ok_or(CliError::MissingSetting("dataset"))?,
            results,
            split: self.split.or(file.split).unwrap_or_default(),
            norm_mode: self.norm_mode.or(file.norm_mode).unwrap_or_default(),
        })
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VoteOpts {
    /// Vote table CSV: `video,frame,expert,method` or `video/frame,expert,method`.
    #[arg(long)]
    pub votes: Option<PathBuf>,
    /// Declared method IDs; votes for anything else are rejected.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VoteSettings {
    pub votes: PathBuf,
    pub methods: Option<Vec<String>>,
}

impl VoteOpts {
    fn rebase(&mut self, base: &Path) {
        rebase(base, &mut self.votes);
    }

    pub fn resolve(self, file: Self) -> Result<VoteSettings, CliError> {
        Ok(VoteSettings {
            votes: self
                .votes
                .or(file.votes)
                .ok_or(CliError::MissingSetting("votes"))?,
            methods: self.methods.or(file.methods),
        })
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateOpts {
    /// Dataset manifest (JSON).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Also write a seeded stratified train/test assignment at this train ratio.
    #[arg(long)]
    pub split_ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidateSettings {
    pub dataset: PathBuf,
    pub split_ratio: Option<f64>,
}

impl ValidateOpts {
    fn rebase(&mut self, base: &Path) {
        rebase(base, &mut self.dataset);
    }

    pub fn resolve(self, file: Self) -> Result<ValidateSettings, CliError> {
        Ok(ValidateSettings {
            dataset: self
                .dataset
                .or(file.dataset)
                .ok_or(CliError::MissingSetting("dataset"))?,
            split_ratio: self.split_ratio.or(file.split_ratio),
        })
    }
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub enhance: EnhanceOpts,
    pub train: TrainOpts,
    pub eval: EvalOpts,
    pub vote: VoteOpts,
    pub validate: ValidateOpts,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: ConfigFile = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        rebase(base, &mut cfg.out);
        cfg.enhance.rebase(base);
        cfg.train.rebase(base);
        cfg.eval.rebase(base);
        cfg.vote.rebase(base);
        cfg.validate.rebase(base);
        Ok(cfg)
    }
}

/// Settings shared by every command after resolution.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub seed: u64,
    pub threads: usize,
    pub out: PathBuf,
}

/// Writes the fully resolved settings next to the command's outputs.
pub fn write_snapshot<S: Serialize>(
    ctx: &RunContext,
    command: &str,
    settings: &S,
) -> Result<(), CliError> {
    let mut table = toml::Table::new();
    table.insert("command".into(), command.into());
    table.insert("seed".into(), toml::Value::Integer(ctx.seed as i64));
    table.insert("threads".into(), toml::Value::Integer(ctx.threads as i64));
    table.insert("out".into(), ctx.out.display().to_string().into());
    let section = toml::Value::try_from(settings).map_err(|e| CliError::Config(e.to_string()))?;
    table.insert(command.into(), section);
    let text = toml::to_string(&table).map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::write(ctx.out.join(SNAPSHOT_FILE), text)?;
    Ok(())
}
