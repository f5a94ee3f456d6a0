//! A small synthetic benchmark plus simulated models that understand it,
//! so the whole pipeline runs offline and deterministically.
//!
//! Every frame is a tiny image whose mean red channel is `40 * stage`
//! (what [`MockEmbedder`](crate::providers::MockEmbedder) reads), with some
//! frames painted as a wrong stage to act as distractors. Difference `j` is
//! visible only during its linked stage `j % K`: there, row `2j + 1` of the
//! blue channel carries the video's magnitude for that difference. Labels
//! compare the two magnitudes.
//!
//! [`SimulatedLlm`] answers each prompt template from its text alone, and
//! [`SimulatedVlm`] answers by reading the painted rows of the images it is
//! shown, so frame selection decides how often it can see the evidence.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use crate::dataset::Frame;
use crate::error::{Error, ProviderError, Result};
use crate::manifest::{BenchmarkManifest, ManifestRecord, TaxonomyEntry};
use crate::model::{
    ActionSpec, Category, Clip, Difference, FrameCount, GroundTruthLabel, KeypointAnnotation, Label, Split, VideoClip,
    VideoPair,
};
use crate::providers::{LlmProvider, LlmRequest, VlmProvider, VlmRequest};

pub const RED_STEP: u8 = 40;
/// Magnitudes closer than this are labeled `C`.
pub const LABEL_MARGIN: i32 = 20;
/// Evidence closer than this is answered `c`.
pub const VLM_MARGIN: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub n_actions: usize,
    pub pairs_per_action: usize,
    pub n_stages: usize,
    pub n_differences: usize,
    pub native_fps: f64,
    pub min_frames: usize,
    pub max_frames: usize,
    pub image_size: u32,
    /// Chance that a frame is painted as a different stage.
    pub distractor_rate: f64,
    /// Paint video b with exactly the frames of video a.
    pub duplicate_videos: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_actions: 3,
            pairs_per_action: 2,
            n_stages: 3,
            n_differences: 4,
            native_fps: 8.0,
            min_frames: 24,
            max_frames: 40,
            image_size: 32,
            distractor_rate: 0.15,
            duplicate_videos: false,
            seed: 0,
        }
    }
}

fn attribute_description(j: usize) -> String {
    format!("the attribute {j} is larger")
}

/// Stage boundaries: `n` frames split into `k` runs of at least `min_len`.
fn segment_lengths(rng: &mut ChaCha8Rng, n: usize, k: usize, min_len: usize) -> Vec<usize> {
    let mut lens = vec![min_len; k];
    for _ in 0..n - min_len * k {
        lens[rng.gen_range(0..k)] += 1;
    }
    lens
}

struct PaintedClip {
    clip: VideoClip,
    /// First and last native frame of each stage.
    spans: Vec<(usize, usize)>,
}

#[allow(clippy::too_many_arguments)]
fn paint_clip(
    root: &Path,
    rng: &mut ChaCha8Rng,
    cfg: &SyntheticConfig,
    action_key: &str,
    clip_id: &str,
    magnitudes: &[i32],
    reuse: Option<&VideoClip>,
    reuse_spans: Option<&[(usize, usize)]>,
) -> Result<PaintedClip> {
    if let (Some(c), Some(s)) = (reuse, reuse_spans) {
        let mut clip = c.clone();
        clip.clip_id = clip_id.to_string();
        return Ok(PaintedClip { clip, spans: s.to_vec() });
    }
    let n = rng.gen_range(cfg.min_frames..=cfg.max_frames);
    let lens = segment_lengths(rng, n, cfg.n_stages, 4);
    let mut stage_of = Vec::with_capacity(n);
    let mut spans = Vec::with_capacity(cfg.n_stages);
    for (k, len) in lens.iter().enumerate() {
        spans.push((stage_of.len(), stage_of.len() + len - 1));
        stage_of.extend(std::iter::repeat_n(k, *len));
    }
    let rel_dir = PathBuf::from(action_key).join(clip_id);
    std::fs::create_dir_all(root.join(&rel_dir)).map_err(|e| Error::io(root.join(&rel_dir), e))?;
    let size = cfg.image_size;
    let mut frame_paths = Vec::with_capacity(n);
    for (t, &k) in stage_of.iter().enumerate() {
        let shown = if cfg.n_stages > 1 && rng.gen_bool(cfg.distractor_rate) {
            (k + rng.gen_range(1..cfg.n_stages)) % cfg.n_stages
        } else {
            k
        };
        let red = RED_STEP * shown as u8;
        let mut img = Frame::new(size, size);
        for (x, y, px) in img.enumerate_pixels_mut() {
            let g = ((x * 7 + y * 13 + t as u32 * 3) % 50) as u8;
            *px = image::Rgb([red, g, 0]);
        }
        for (j, m) in magnitudes.iter().enumerate() {
            if j % cfg.n_stages != k {
                continue;
            }
            let v = (m + rng.gen_range(-15..=15)).clamp(1, 255) as u8;
            let row = 2 * j as u32 + 1;
            for x in 0..size {
                img.get_pixel_mut(x, row)[2] = v;
            }
        }
        let rel = rel_dir.join(format!("frame_{t:06}.png"));
        img.save(root.join(&rel)).map_err(|e| Error::Image {
            path: root.join(&rel),
            index: t,
            message: e.to_string(),
        })?;
        frame_paths.push(rel);
    }
    Ok(PaintedClip {
        clip: VideoClip {
            clip_id: clip_id.to_string(),
            frame_paths,
            native_fps: cfg.native_fps,
            sampled_fps: cfg.native_fps,
            duration_s: n as f64 / cfg.native_fps,
        },
        spans,
    })
}

/// Write frames under `root` and return the matching manifest (also saved
/// as `root/manifest.jsonl`).
pub fn generate(root: &Path, cfg: &SyntheticConfig) -> Result<BenchmarkManifest> {
    if cfg.n_stages == 0 || cfg.n_differences == 0 || 2 * cfg.n_differences + 1 > cfg.image_size as usize {
        return Err(Error::InvalidArgument("synthetic config cannot be painted".into()));
    }
    if cfg.min_frames < 4 * cfg.n_stages || cfg.max_frames < cfg.min_frames {
        return Err(Error::InvalidArgument("too few frames for the stage count".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut m = BenchmarkManifest::default();
    for a in 0..cfg.n_actions {
        let action_key = format!("synth_{a}");
        m.push(ManifestRecord::Action(ActionSpec {
            action_key: action_key.clone(),
            description: format!("synthetic exercise {a} performed in {} stages", cfg.n_stages),
            category: Category::Fitness,
            split: Split::ALL[a % 3],
            fps_policy: crate::dataset::default_fps(Category::Fitness),
        }));
        let diffs: Vec<Difference> = (0..cfg.n_differences)
            .map(|j| Difference {
                diff_key: crate::model::diff_key(&action_key, j),
                name: format!("attribute_{j}"),
                description: attribute_description(j),
                query_string: attribute_description(j),
                num_frames: if j % 2 == 0 { FrameCount::GreaterThanOne } else { FrameCount::One },
                keypoints: vec![format!("attribute {j} start"), format!("attribute {j} end")],
            })
            .collect();
        for d in &diffs {
            m.push(ManifestRecord::Difference(TaxonomyEntry {
                action_key: action_key.clone(),
                difference: d.clone(),
            }));
        }
        for p in 0..cfg.pairs_per_action {
            let pair_id = format!("{action_key}_p{p}");
            let mags = |rng: &mut ChaCha8Rng| (0..cfg.n_differences).map(|_| rng.gen_range(60..=240)).collect::<Vec<i32>>();
            let mag_a = mags(&mut rng);
            let mag_b = if cfg.duplicate_videos { mag_a.clone() } else { mags(&mut rng) };
            let a_clip = paint_clip(root, &mut rng, cfg, &action_key, &format!("{pair_id}_a"), &mag_a, None, None)?;
            let b_clip = if cfg.duplicate_videos {
                paint_clip(root, &mut rng, cfg, &action_key, &format!("{pair_id}_b"), &mag_b, Some(&a_clip.clip), Some(&a_clip.spans))?
            } else {
                paint_clip(root, &mut rng, cfg, &action_key, &format!("{pair_id}_b"), &mag_b, None, None)?
            };
            for (j, d) in diffs.iter().enumerate() {
                let label = if cfg.duplicate_videos {
                    if rng.gen_bool(0.5) { Label::A } else { Label::B }
                } else {
                    let delta = mag_a[j] - mag_b[j];
                    if delta.abs() < LABEL_MARGIN {
                        Label::C
                    } else if delta > 0 {
                        Label::A
                    } else {
                        Label::B
                    }
                };
                m.push(ManifestRecord::Label(GroundTruthLabel {
                    pair_id: pair_id.clone(),
                    diff_key: d.diff_key.clone(),
                    label,
                }));
                for (which, painted) in [(Clip::A, &a_clip), (Clip::B, &b_clip)] {
                    let (lo, hi) = painted.spans[j % cfg.n_stages];
                    for (name, idx) in d.keypoints.iter().zip([lo, hi]) {
                        m.push(ManifestRecord::Keypoint(KeypointAnnotation {
                            pair_id: pair_id.clone(),
                            clip: which,
                            keypoint_name: name.clone(),
                            frame_index: idx,
                        }));
                    }
                }
            }
            m.push(ManifestRecord::Pair(VideoPair {
                pair_id,
                action_key: action_key.clone(),
                video_a: a_clip.clip,
                video_b: b_clip.clip,
            }));
        }
    }
    m.save(root.join("manifest.jsonl"))?;
    Ok(m)
}

/// Integer that follows `tag` in `text`.
fn number_after(text: &str, tag: &str) -> Option<usize> {
    let i = text.find(tag)? + tag.len();
    let digits: String = text[i..].chars().skip_while(|c| *c == ' ').take_while(char::is_ascii_digit).collect();
    digits.parse().ok()
}

/// Integer that precedes `tag` in `text`.
fn number_before(text: &str, tag: &str) -> Option<usize> {
    let i = text.find(tag)?;
    let digits: String = text[..i].trim_end().chars().rev().take_while(char::is_ascii_digit).collect();
    digits.chars().rev().collect::<String>().parse().ok()
}

/// The JSON value on the rest of the line after `tag`.
fn json_after(text: &str, tag: &str) -> Option<Value> {
    let i = text.find(tag)? + tag.len();
    let line = text[i..].trim_start_matches('\n').lines().next()?;
    serde_json::from_str(line.trim()).ok()
}

fn attribute_of(text: &str) -> Option<usize> {
    number_after(text, "attribute ")
}

fn is_inverted(text: &str) -> bool {
    text.contains("smaller")
}

/// Text model that answers the proposer, matching and flip prompts for
/// the synthetic world.
#[derive(Debug, Clone, Default)]
pub struct SimulatedLlm;

impl SimulatedLlm {
    fn differences(&self, prompt: &str) -> Value {
        let n = number_after(prompt, "List ").unwrap_or(0);
        let mut out = Map::new();
        for j in 0..n {
            let fc = if j % 2 == 0 { "gt_1" } else { "1" };
            out.insert(
                j.to_string(),
                json!({
                    "name": format!("attribute_{j}"),
                    "description": attribute_description(j),
                    "query_string": attribute_description(j),
                    "num_frames": fc,
                }),
            );
        }
        Value::Object(out)
    }

    fn stages(&self, prompt: &str) -> Value {
        let k = number_before(prompt, "stages\"").unwrap_or(1).clamp(1, 5);
        let n_keys = number_after(prompt, "Give at least ").unwrap_or(5);
        let stages: Vec<Value> = (0..k)
            .map(|s| {
                json!({
                    "name": format!("stage {s}"),
                    "description": format!("sub-action {s}"),
                    "retrieval_strings": (0..n_keys)
                        .map(|v| format!("A photo of stage {s} marker, view {v}"))
                        .collect::<Vec<_>>(),
                })
            })
            .collect();
        json!({ "stages": stages })
    }

    fn linking(&self, prompt: &str) -> Value {
        let stages = json_after(prompt, "make up that action:").and_then(|v| v.as_array().cloned()).unwrap_or_default();
        let diffs = json_after(prompt, "Here they are:").and_then(|v| v.as_object().cloned()).unwrap_or_default();
        let k = stages.len().max(1);
        let mut out = Map::new();
        for s in &stages {
            out.insert(s["name"].as_str().unwrap_or_default().to_string(), json!([]));
        }
        for (name, desc) in &diffs {
            let j = attribute_of(desc.as_str().unwrap_or_default()).unwrap_or(0);
            let stage = stages.get(j % k).and_then(|s| s["name"].as_str()).unwrap_or_default();
            if let Some(Value::Array(list)) = out.get_mut(stage) {
                list.push(Value::from(name.clone()));
            }
        }
        Value::Object(out)
    }

    fn matching(&self, prompt: &str) -> Value {
        let d0 = json_after(prompt, "- Dictionary 0: ").and_then(|v| v.as_object().cloned()).unwrap_or_default();
        let d1 = json_after(prompt, "- Dictionary 1: ").and_then(|v| v.as_object().cloned()).unwrap_or_default();
        let mut used = std::collections::HashSet::new();
        let mut out = Map::new();
        for (k, v) in &d0 {
            let want = attribute_of(v.as_str().unwrap_or_default());
            let hit = d1
                .iter()
                .find(|(j, w)| !used.contains(*j) && want.is_some() && attribute_of(w.as_str().unwrap_or_default()) == want)
                .map(|(j, _)| j.clone());
            if let Some(j) = &hit {
                used.insert(j.clone());
            }
            out.insert(k.clone(), Value::from(hit.unwrap_or_else(|| "None".into())));
        }
        Value::Object(out)
    }

    fn flips(&self, prompt: &str) -> Value {
        let start = prompt.find("following format:").map(|i| i + "following format:".len());
        let end = prompt.find("Important Requirements:");
        let pairs: Vec<(String, String)> = match (start, end) {
            (Some(s), Some(e)) if s < e => serde_json::from_str(prompt[s..e].trim()).unwrap_or_default(),
            _ => Vec::new(),
        };
        let results: Vec<&str> = pairs
            .iter()
            .map(|(x, y)| if is_inverted(x) != is_inverted(y) { "1" } else { "0" })
            .collect();
        json!({ "results": results })
    }
}

impl LlmProvider for SimulatedLlm {
    fn send(&self, req: &LlmRequest) -> std::result::Result<String, ProviderError> {
        let p = req.prompt.as_str();
        let v = if p.contains("Propose a set of 'differences'") {
            self.differences(p)
        } else if p.contains("Provide a 'stage transcript'") {
            self.stages(p)
        } else if p.contains("Now we need to match each differences to a stage.") {
            self.linking(p)
        } else if p.contains("match the differences from Dictionary 0 to Dictionary 1") {
            self.matching(p)
        } else if p.contains("determine the logical relationship") {
            self.flips(p)
        } else {
            return Err(ProviderError::Unscripted(p.chars().take(80).collect()));
        };
        Ok(v.to_string())
    }
}

/// Vision model that reads the synthetic evidence rows.
#[derive(Debug, Clone, Default)]
pub struct SimulatedVlm;

/// Mean painted value of difference `j` over the frames that show it.
fn evidence(frames: &[Frame], j: usize) -> Option<f64> {
    let row = 2 * j as u32 + 1;
    let vals: Vec<f64> = frames
        .iter()
        .filter(|f| row < f.height())
        .map(|f| f.get_pixel(0, row)[2])
        .filter(|&b| b > 0)
        .map(f64::from)
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Mean of row `j` over every frame, painted or not.
fn diluted(frames: &[Frame], j: usize) -> f64 {
    let row = 2 * j as u32 + 1;
    let n = frames.len().max(1) as f64;
    frames.iter().filter(|f| row < f.height()).map(|f| f64::from(f.get_pixel(0, row)[2])).sum::<f64>() / n
}

fn compare(a: f64, b: f64, margin: f64) -> &'static str {
    if (a - b).abs() < margin {
        "c"
    } else if a > b {
        "a"
    } else {
        "b"
    }
}

fn swap_ab(v: &str) -> &str {
    match v {
        "a" => "b",
        "b" => "a",
        other => other,
    }
}

impl SimulatedVlm {
    fn differencer(&self, req: &VlmRequest) -> Value {
        let p = &req.prompt;
        let n = number_after(p, "The first ").unwrap_or(req.images.len() / 2).min(req.images.len());
        let query = p.split("with this description: \"").nth(1).unwrap_or_default();
        let Some(j) = attribute_of(query) else {
            return json!({"answer_detailed": "unknown attribute", "answer": "c"});
        };
        let (a, b) = req.images.split_at(n);
        let ans = match (evidence(a, j), evidence(b, j)) {
            (Some(x), Some(y)) => compare(x, y, VLM_MARGIN),
            _ => "c",
        };
        let ans = if is_inverted(query) { swap_ab(ans) } else { ans };
        json!({"answer_detailed": format!("attribute {j} compared"), "answer": ans})
    }

    fn split_baseline<'a>(&self, req: &'a VlmRequest) -> (&'a [Frame], &'a [Frame]) {
        let n = number_after(&req.prompt, "The first ").unwrap_or(req.images.len() / 2).min(req.images.len());
        req.images.split_at(n)
    }

    fn baseline_closed(&self, req: &VlmRequest) -> Value {
        let diffs = json_after(&req.prompt, "Each difference is associated with a unique key:")
            .and_then(|v| v.as_object().cloned())
            .unwrap_or_default();
        let (a, b) = self.split_baseline(req);
        let mut out = Map::new();
        for (k, d) in diffs {
            if let Some(j) = attribute_of(d.as_str().unwrap_or_default()) {
                let ans = if diluted(a, j) >= diluted(b, j) { "a" } else { "b" };
                out.insert(k, Value::from(ans));
            }
        }
        Value::Object(out)
    }

    fn baseline_open(&self, req: &VlmRequest) -> Value {
        let n = number_after(&req.prompt, "Suggest no more than ").unwrap_or(0);
        let (a, b) = self.split_baseline(req);
        let mut out = Map::new();
        for j in 0..16 {
            if out.len() >= n {
                break;
            }
            let ans = compare(diluted(a, j), diluted(b, j), VLM_MARGIN);
            if ans == "c" {
                continue;
            }
            // odd attributes are phrased the other way round
            let (desc, pred) = if j % 2 == 1 {
                (format!("the attribute {j} is smaller"), swap_ab(ans))
            } else {
                (attribute_description(j), ans)
            };
            out.insert(out.len().to_string(), json!({"description": desc, "prediction": pred}));
        }
        Value::Object(out)
    }
}

impl VlmProvider for SimulatedVlm {
    fn send(&self, req: &VlmRequest) -> std::result::Result<String, ProviderError> {
        let p = req.prompt.as_str();
        let v = if p.contains("Which one shows more of the variation") {
            self.differencer(req)
        } else if p.contains("predict, for each difference") {
            self.baseline_closed(req)
        } else if p.contains("Return a list of 'differences'") {
            self.baseline_open(req)
        } else {
            return Err(ProviderError::Unscripted(p.chars().take(80).collect()));
        };
        Ok(v.to_string())
    }
}
