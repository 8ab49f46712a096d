//! Expert majority voting over enhancement methods: a plurality per sampled
//! frame, then a plurality over the frame winners of each video. Ties go to
//! the lexicographically smallest method ID.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::DatasetError;

/// Frames sampled per video for expert review.
pub const FRAMES_PER_VIDEO: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRow {
    pub video: String,
    pub frame: String,
    pub expert: String,
    pub method: String,
}

/// Validated set of votes: at most one vote per (video, frame, expert).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VoteTable {
    rows: Vec<VoteRow>,
}

impl VoteTable {
    pub fn new(rows: Vec<VoteRow>) -> Result<Self, DatasetError> {
        let mut seen = BTreeSet::new();
        for r in &rows {
            if !seen.insert((&r.video, &r.frame, &r.expert)) {
                return Err(DatasetError::DuplicateVote {
                    video: r.video.clone(),
                    frame: r.frame.clone(),
                    expert: r.expert.clone(),
                });
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[VoteRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn methods(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.method.as_str()).collect()
    }

    /// Rejects votes for methods outside `declared`.
    pub fn check_methods(&self, declared: &BTreeSet<String>) -> Result<(), DatasetError> {
        for (i, r) in self.rows.iter().enumerate() {
            if !declared.contains(&r.method) {
                return Err(DatasetError::MalformedVoteRow {
                    line: i + 1,
                    reason: format!("undeclared method {:?}", r.method),
                });
            }
        }
        Ok(())
    }
}

/// Parses vote rows from CSV. Accepted layouts (an optional header row whose
/// fields include `expert_id` is skipped):
///
/// * `video_id,frame_id,expert_id,method_id`
/// * `frame_id,expert_id,method_id`, where `frame_id` is `video/frame`
///   (a frame ID without `/` belongs to the video `""`).
pub fn parse_vote_csv(text: &str) -> Result<VoteTable, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        let fields: Vec<&str> = rec.iter().collect();
        if i == 0 && fields.iter().any(|f| f.eq_ignore_ascii_case("expert_id")) {
            continue;
        }
        if fields.iter().all(|f| f.is_empty()) {
            continue;
        }
        let (video, frame, expert, method) = match fields[..] {
            [v, f, e, m] => (v.to_string(), f.to_string(), e, m),
            [vf, e, m] => match vf.rsplit_once('/') {
                Some((v, f)) => (v.to_string(), f.to_string(), e, m),
                None => (String::new(), vf.to_string(), e, m),
            },
            _ => {
                return Err(DatasetError::MalformedVoteRow {
                    line,
                    reason: format!("expected 3 or 4 fields, found {}", fields.len()),
                })
            }
        };
        if frame.is_empty() || expert.is_empty() || method.is_empty() {
            return Err(DatasetError::MalformedVoteRow {
                line,
                reason: "empty field".into(),
            });
        }
        rows.push(VoteRow {
            video,
            frame,
            expert: expert.to_string(),
            method: method.to_string(),
        });
    }
    VoteTable::new(rows)
}

/// Most frequent item; ties resolved to the smallest.
fn plurality<'a>(items: impl IntoIterator<Item = &'a str>) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for it in items {
        *counts.entry(it).or_default() += 1;
    }
    let mut best: Option<(&str, usize)> = None;
    for (k, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((k, c));
        }
    }
    best.map(|(k, _)| k.to_string())
}

/// Winning method per `(video, frame)`.
pub fn vote_frame_winners(
    table: &VoteTable,
) -> Result<BTreeMap<(String, String), String>, DatasetError> {
    if table.is_empty() {
        return Err(DatasetError::EmptyTable);
    }
    let mut by_frame: BTreeMap<(String, String), Vec<&str>> = BTreeMap::new();
    for r in table.rows() {
        by_frame
            .entry((r.video.clone(), r.frame.clone()))
            .or_default()
            .push(&r.method);
    }
    Ok(by_frame
        .into_iter()
        .map(|(k, v)| (k, plurality(v).expect("non-empty group")))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoWinner {
    pub winner: String,
    /// Set when the number of frame winners differs from [`FRAMES_PER_VIDEO`].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Plurality over a video's frame winners.
pub fn vote_video_winner(frame_winners: &[String]) -> Result<VideoWinner, DatasetError> {
    let winner =
        plurality(frame_winners.iter().map(String::as_str)).ok_or(DatasetError::EmptyTable)?;
    let warning = (frame_winners.len() != FRAMES_PER_VIDEO).then(|| {
        format!(
            "WrongFrameCount: {} frame winners, expected {FRAMES_PER_VIDEO}",
            frame_winners.len()
        )
    });
    Ok(VideoWinner { winner, warning })
}

/// Both voting stages for every video in the table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoVote {
    pub frames: BTreeMap<String, String>,
    pub winner: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

pub fn vote_all(table: &VoteTable) -> Result<BTreeMap<String, VideoVote>, DatasetError> {
    let mut per_video: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for ((video, frame), method) in vote_frame_winners(table)? {
        per_video.entry(video).or_default().insert(frame, method);
    }
    per_video
        .into_iter()
        .map(|(video, frames)| {
            let winners: Vec<String> = frames.values().cloned().collect();
            let v = vote_video_winner(&winners)?;
            Ok((
                video,
                VideoVote {
                    frames,
                    winner: v.winner,
                    warning: v.warning,
                },
            ))
        })
        .collect()
}
