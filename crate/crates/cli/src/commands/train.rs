use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use uvot_core::imaging::{load_image, Image};
use uvot_core::model::{save_checkpoint, ModelConfig};
use uvot_core::train::train;
use uvot_core::{LossConfig, ModelParams};

use crate::config::{RunContext, TrainSettings};
use crate::error::CliError;

pub const LOG_FILE: &str = "train_log.jsonl";

/// One (raw, pseudo-ground-truth) pair; paths are relative to the pairs file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairEntry {
    #[serde(default)]
    name: Option<String>,
    raw: PathBuf,
    target: PathBuf,
}

/// ```json
/// {"pairs": [{"name": "fish-1", "raw": "raw/fish-1.png", "target": "gt/fish-1.png"}]}
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairsManifest {
    pairs: Vec<PairEntry>,
}

type NamedPair = (String, Image<f32>, Image<f32>);

fn load(path: &Path) -> Result<Image<f32>, CliError> {
    load_image(path).map_err(|e| CliError::UnreadableInput(format!("{}: {e}", path.display())))
}

fn load_pairs(manifest: &Path) -> Result<Vec<NamedPair>, CliError> {
    let text = std::fs::read_to_string(manifest)
        .map_err(|e| CliError::UnreadableInput(format!("{}: {e}", manifest.display())))?;
    let doc: PairsManifest = serde_json::from_str(&text)?;
    if doc.pairs.is_empty() {
        return Err(CliError::EmptyManifest(manifest.to_path_buf()));
    }
    let base = manifest.parent().unwrap_or(Path::new(""));
    let mut out: Vec<NamedPair> = Vec::with_capacity(doc.pairs.len());
    for entry in doc.pairs {
        let name = entry
            .name
            .unwrap_or_else(|| entry.raw.display().to_string());
        let raw = load(&base.join(&entry.raw))?;
        let target = load(&base.join(&entry.target))?;
        if raw.dims() != target.dims() {
            return Err(CliError::ShapeMismatch {
                detail: format!(
                    "raw is {}x{} but target is {}x{}",
                    raw.height(),
                    raw.width(),
                    target.height(),
                    target.width()
                ),
                pair: name,
            });
        }
        if let Some((first, img, _)) = out.first() {
            if img.dims() != raw.dims() {
                return Err(CliError::ShapeMismatch {
                    detail: format!(
                        "{}x{} differs from {}x{} of the first pair {first}",
                        raw.height(),
                        raw.width(),
                        img.height(),
                        img.width()
                    ),
                    pair: name,
                });
            }
        }
        out.push((name, raw, target));
    }
    Ok(out)
}

pub fn run(settings: &TrainSettings, ctx: &RunContext) -> Result<(), CliError> {
    let pairs = load_pairs(&settings.pairs)?;
    let (height, width) = pairs[0].1.dims();
    let mut cfg = ModelConfig::with_dims(
        height,
        width,
        settings.patch,
        settings.channels,
        settings.layers,
        settings.heads,
    )
    .with_seed(ctx.seed);
    if let Some(m) = settings.mlp_hidden {
        cfg.mlp_hidden = m;
    }
    cfg.validate()?;
    let params = ModelParams::<f32>::init(&cfg)?;
    let batch: Vec<(Image<f32>, Image<f32>)> = pairs.into_iter().map(|(_, x, y)| (x, y)).collect();

    let mut log = BufWriter::new(std::fs::File::create(ctx.out.join(LOG_FILE))?);
    let mut write_err = None;
    let (params, records) = train(
        params,
        &batch,
        settings.steps,
        settings.lr,
        &cfg,
        &LossConfig::default(),
        |rec| {
            if write_err.is_none() {
                let line = serde_json::to_string(rec).map_err(CliError::from);
                if let Err(e) = line.and_then(|l| writeln!(log, "{l}").map_err(CliError::from)) {
                    write_err = Some(e);
                }
            }
        },
    )?;
    if let Some(e) = write_err {
        return Err(e);
    }
    log.flush()?;
    let checkpoint = ctx.out.join(&settings.checkpoint_name);
    save_checkpoint(&params, &cfg, &checkpoint)?;
    println!(
        "{}",
        serde_json::json!({
            "command": "train",
            "steps": records.len(),
            "initial_loss": records.first().map(|r| r.total),
            "final_loss": records.last().map(|r| r.total),
            "checkpoint": checkpoint,
        })
    );
    Ok(())
}
