use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use uvot_core::imaging::{
    gamma_correct, hist_equalize, load_image, psnr, save_image, white_balance, Image, Psnr,
};
use uvot_core::model::{forward, load_checkpoint, ModelConfig};
use uvot_core::ModelParams;

use crate::config::{EnhanceSettings, Method, RunContext};
use crate::error::CliError;

pub const SUMMARY_FILE: &str = "enhance_summary.json";

const FRAME_EXTENSIONS: [&str; 5] = ["png", "bmp", "jpg", "jpeg", "uwimg"];

#[derive(Debug, Serialize)]
struct FrameSummary {
    frame: String,
    height: usize,
    width: usize,
    /// PSNR of the enhanced frame against its input.
    psnr: Psnr,
    #[serde(skip_serializing_if = "Option::is_none")]
    warning: Option<String>,
}

#[derive(Debug, Serialize)]
struct Summary {
    method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    frames: Vec<FrameSummary>,
}

type Processed = (String, Image<f32>, FrameSummary);

enum Enhancer {
    Classical(Method, f32),
    Network(Box<ModelParams<f32>>, ModelConfig),
}

impl Enhancer {
    fn apply(
        &self,
        name: &str,
        img: &Image<f32>,
    ) -> Result<(Image<f32>, Option<String>), CliError> {
        match self {
            Enhancer::Classical(Method::Wb, _) => {
                let wb = white_balance(img);
                let warning = wb.has_warning().then(|| {
                    "a channel mean is near zero; that channel was left unscaled".to_string()
                });
                Ok((wb.image, warning))
            }
            Enhancer::Classical(Method::Gamma, g) => Ok((gamma_correct(img, *g)?, None)),
            Enhancer::Classical(Method::He, _) => Ok((hist_equalize(img), None)),
            Enhancer::Classical(Method::UwieTr, _) => {
                unreachable!("network method is built as Enhancer::Network")
            }
            Enhancer::Network(params, cfg) => {
                let frame_err = |source| CliError::Frame {
                    frame: name.to_string(),
                    source,
                };
                cfg.check_image(img.height(), img.width())
                    .map_err(frame_err)?;
                Ok((forward(img, params, cfg).map_err(frame_err)?.output, None))
            }
        }
    }
}

fn list_frames(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::UnreadableInput(format!("{}: {e}", dir.display())))?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| CliError::UnreadableInput(format!("{}: {e}", dir.display())))?
            .path();
        let known = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| FRAME_EXTENSIONS.iter().any(|k| e.eq_ignore_ascii_case(k)));
        if known && path.is_file() {
            frames.push(path);
        }
    }
    if frames.is_empty() {
        return Err(CliError::UnreadableInput(format!(
            "no image frames in {}",
            dir.display()
        )));
    }
    frames.sort();
    Ok(frames)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn run(settings: &EnhanceSettings, ctx: &RunContext) -> Result<(), CliError> {
    let enhancer = match (settings.method, &settings.checkpoint) {
        (Method::UwieTr, None) => return Err(CliError::MissingCheckpoint),
        (Method::UwieTr, Some(path)) => {
            let (params, cfg) = load_checkpoint::<f32>(path)?;
            Enhancer::Network(Box::new(params), cfg)
        }
        (method, checkpoint) => {
            if checkpoint.is_some() {
                log::warn!("--checkpoint is only used by --method uwie-tr; ignoring it");
            }
            Enhancer::Classical(method, settings.gamma as f32)
        }
    };
    let frames = list_frames(&settings.input)?;
    if settings.input.canonicalize()? == ctx.out.canonicalize()? {
        return Err(CliError::Config(
            "output directory must differ from the input directory".into(),
        ));
    }

    let processed: Vec<Result<Processed, CliError>> = frames
        .par_iter()
        .map(|path| {
            let name = file_name(path);
            let img: Image<f32> =
                load_image(path).map_err(|e| CliError::UnreadableInput(format!("{name}: {e}")))?;
            let (out, warning) = enhancer.apply(&name, &img)?;
            let summary = FrameSummary {
                frame: name.clone(),
                height: img.height(),
                width: img.width(),
                psnr: psnr(&out, &img)?,
                warning,
            };
            Ok((name, out, summary))
        })
        .collect();

    let mut summaries = Vec::with_capacity(processed.len());
    for item in processed {
        let (name, img, summary) = item?;
        if let Some(w) = &summary.warning {
            log::warn!("{name}: {w}");
        }
        save_image(&img, &ctx.out.join(&name))?;
        summaries.push(summary);
    }
    let summary = Summary {
        method: settings.method,
        gamma: (settings.method == Method::Gamma).then_some(settings.gamma),
        frames: summaries,
    };
    let text = serde_json::to_string_pretty(&summary)?;
    std::fs::write(ctx.out.join(SUMMARY_FILE), text + "\n")?;
    println!(
        "{}",
        serde_json::json!({"command": "enhance", "frames": summary.frames.len(), "out": ctx.out})
    );
    Ok(())
}
