use std::collections::{BTreeMap, BTreeSet};

use uvot_core::dataset::{parse_vote_csv, vote_all};

use crate::config::{RunContext, VoteSettings};
use crate::error::CliError;

pub const VOTES_FILE: &str = "votes.json";

pub fn run(settings: &VoteSettings, ctx: &RunContext) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&settings.votes)
        .map_err(|e| CliError::UnreadableInput(format!("{}: {e}", settings.votes.display())))?;
    let table = parse_vote_csv(&text)?;
    if let Some(methods) = &settings.methods {
        let declared: BTreeSet<String> = methods.iter().cloned().collect();
        table.check_methods(&declared)?;
    }
    let videos = vote_all(&table)?;
    for (video, v) in &videos {
        if let Some(w) = &v.warning {
            log::warn!("video {video}: {w}");
        }
    }
    let text = serde_json::to_string_pretty(&videos)?;
    std::fs::write(ctx.out.join(VOTES_FILE), text + "\n")?;
    println!(
        "{}",
        serde_json::json!({
            "command": "vote",
            "videos": videos.len(),
            "winners": videos.iter().map(|(k, v)| (k.as_str(), v.winner.as_str())).collect::<BTreeMap<_, _>>(),
        })
    );
    Ok(())
}
