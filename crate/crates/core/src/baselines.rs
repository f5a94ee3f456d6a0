//! Single-call multimodal baselines: the whole pair goes to one model with
//! either the closed prompt (verdicts for given differences) or the open
//! prompt (generate differences and verdicts).
//!
//! Open-mode output is taken as is. Repeats, video-specific phrasing and
//! contradictions are measured in a [`PathologyReport`], never repaired.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::FrameStore;
use crate::differencer::downscale;
use crate::error::{Error, ProviderError, Result};
use crate::model::{mentions_specific_video, Difference, Prediction, VideoPair, Verdict};
use crate::proposer::{indexed_values, normalize_statement};
use crate::prompts;
use crate::providers::{Models, VideoPayload, VlmRequest};

/// How the two videos are handed to the model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoRepresentation {
    /// All subsampled frames of video a, then all of video b.
    #[default]
    Frames,
    /// Two video payloads, for providers that accept them.
    NativeVideo,
}

impl std::str::FromStr for VideoRepresentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frames" => Ok(VideoRepresentation::Frames),
            "video" | "native_video" => Ok(VideoRepresentation::NativeVideo),
            _ => Err(Error::InvalidArgument(format!("unknown video representation {s:?}"))),
        }
    }
}

/// Text telling the model how the videos are packaged.
pub fn preamble(rep: VideoRepresentation, pair: &VideoPair) -> String {
    match rep {
        VideoRepresentation::Frames => {
            prompts::video_rep_frames(pair.video_a.len(), pair.video_b.len(), pair.video_a.sampled_fps)
        }
        VideoRepresentation::NativeVideo => prompts::VIDEO_REP_NATIVE.text.to_string(),
    }
}

fn request(
    store: &FrameStore,
    pair: &VideoPair,
    rep: VideoRepresentation,
    id: String,
    prompt: String,
) -> Result<VlmRequest> {
    match rep {
        VideoRepresentation::Frames => {
            let all = |c: &crate::model::VideoClip| (0..c.len()).collect::<Vec<_>>();
            let mut images = store.load_frames(&pair.video_a, &all(&pair.video_a))?;
            images.extend(store.load_frames(&pair.video_b, &all(&pair.video_b))?);
            Ok(VlmRequest::with_images(id, prompt, images.into_iter().map(downscale).collect()))
        }
        VideoRepresentation::NativeVideo => {
            let payload = |name: &str, c: &crate::model::VideoClip| VideoPayload {
                name: name.to_string(),
                frame_paths: c.frame_paths.iter().map(|p| store.root().join(p)).collect(),
                fps: c.sampled_fps,
            };
            let mut req = VlmRequest::with_images(id, prompt, Vec::new());
            req.videos = vec![payload("video a", &pair.video_a), payload("video b", &pair.video_b)];
            Ok(req)
        }
    }
}

fn ask(models: &Models, req: VlmRequest) -> Result<Option<Value>> {
    match models.ask_vision(req) {
        Ok(r) => Ok(r.parsed_json),
        Err(ProviderError::Parse { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn verdict_of(v: &Value) -> Option<Verdict> {
    v.as_str().and_then(Verdict::parse)
}

/// Closed-task prompt for one pair. Differences are keyed by position.
pub fn closed_prompt(rep_text: &str, action_description: &str, taxonomy: &[Difference]) -> String {
    let annotated: serde_json::Map<String, Value> = taxonomy
        .iter()
        .enumerate()
        .map(|(i, d)| (i.to_string(), Value::from(d.description.clone())))
        .collect();
    prompts::baseline_closed(action_description, rep_text, &prompts::json_inline(&annotated))
}

/// One verdict per taxonomy entry. Entries the reply leaves out or answers
/// with something other than a/b become `c` with `parse_failed`.
pub fn run_closed_baseline(
    models: &Models,
    store: &FrameStore,
    pair: &VideoPair,
    action_description: &str,
    taxonomy: &[Difference],
    rep: VideoRepresentation,
) -> Result<Vec<Prediction>> {
    if taxonomy.is_empty() {
        return Err(Error::Precondition(format!("{}: empty taxonomy", pair.action_key)));
    }
    let prompt = closed_prompt(&preamble(rep, pair), action_description, taxonomy);
    let req = request(store, pair, rep, format!("baseline_closed:{}", pair.pair_id), prompt)?;
    let reply = ask(models, req)?;
    Ok(taxonomy
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let v = reply
                .as_ref()
                .and_then(|r| r.get(i.to_string()).or_else(|| r.get(&d.diff_key)))
                .and_then(verdict_of)
                .filter(|v| *v != Verdict::C);
            let mut p = Prediction::closed(&pair.pair_id, &d.diff_key, v.unwrap_or(Verdict::C));
            p.parse_failed = v.is_none();
            p
        })
        .collect())
}

/// Failure modes of free-form difference generation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PathologyReport {
    pub n_requested: usize,
    pub n_returned: usize,
    /// Requested minus returned, when positive.
    pub shortfall: usize,
    /// Entries whose description repeats an earlier one.
    pub repeated: usize,
    pub repeat_rate: f64,
    /// Descriptions that name a particular video.
    pub video_specific: usize,
    /// Repeated descriptions given opposite verdicts.
    pub contradictory: usize,
    /// Entries without a usable description or an a/b verdict.
    pub malformed: usize,
    /// Entries beyond the request, dropped.
    pub excess: usize,
}

impl PathologyReport {
    pub fn of(predictions: &[Prediction], n_requested: usize, malformed: usize, excess: usize) -> Self {
        let mut seen: HashMap<String, Verdict> = HashMap::new();
        let mut contradicted = HashSet::new();
        let (mut repeated, mut video_specific) = (0, 0);
        for p in predictions {
            let text = p.description.as_deref().unwrap_or_default();
            video_specific += usize::from(mentions_specific_video(text));
            let key = normalize_statement(text);
            match seen.get(&key) {
                Some(v) => {
                    repeated += 1;
                    if *v != p.verdict {
                        contradicted.insert(key);
                    }
                }
                None => {
                    seen.insert(key, p.verdict);
                }
            }
        }
        let n = predictions.len();
        PathologyReport {
            n_requested,
            n_returned: n,
            shortfall: n_requested.saturating_sub(n),
            repeated,
            repeat_rate: if n == 0 { 0.0 } else { repeated as f64 / n as f64 },
            video_specific,
            contradictory: contradicted.len(),
            malformed,
            excess,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenBaselineOutput {
    pub predictions: Vec<Prediction>,
    pub pathologies: PathologyReport,
}

/// Parse an open-prompt reply into predictions keyed `open:<i>`.
pub fn parse_open_reply(pair_id: &str, reply: Option<&Value>, n_differences: usize) -> OpenBaselineOutput {
    let entries = reply.map(indexed_values).unwrap_or_default();
    let mut predictions = Vec::new();
    let mut malformed = 0;
    for e in &entries {
        let desc = e.get("description").and_then(Value::as_str).map(str::trim).unwrap_or_default();
        let verdict = e.get("prediction").and_then(verdict_of).filter(|v| *v != Verdict::C);
        match verdict {
            Some(v) if !desc.is_empty() => predictions.push(Prediction {
                description: Some(desc.to_string()),
                ..Prediction::closed(pair_id, format!("open:{}", predictions.len()), v)
            }),
            _ => malformed += 1,
        }
    }
    let excess = predictions.len().saturating_sub(n_differences);
    predictions.truncate(n_differences);
    let pathologies = PathologyReport::of(&predictions, n_differences, malformed, excess);
    OpenBaselineOutput { predictions, pathologies }
}

/// Ask for at most `n_differences` differences and their verdicts.
pub fn run_open_baseline(
    models: &Models,
    store: &FrameStore,
    pair: &VideoPair,
    action_description: &str,
    n_differences: usize,
    rep: VideoRepresentation,
) -> Result<OpenBaselineOutput> {
    let prompt = prompts::baseline_open(action_description, &preamble(rep, pair), n_differences);
    let req = request(store, pair, rep, format!("baseline_open:{}", pair.pair_id), prompt)?;
    let reply = ask(models, req)?;
    Ok(parse_open_reply(&pair.pair_id, reply.as_ref(), n_differences))
}
