//! Domain types shared by every stage of the pipeline.
//!
//! All types are plain data: immutable once built, `Send + Sync`, and
//! serialized with the exact field names used in manifest files.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Action category, as grouped in the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Fitness,
    Ballsports,
    Diving,
    Music,
    Surgery,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Fitness,
        Category::Ballsports,
        Category::Diving,
        Category::Music,
        Category::Surgery,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Fitness => "fitness",
            Category::Ballsports => "ballsports",
            Category::Diving => "diving",
            Category::Music => "music",
            Category::Surgery => "surgery",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown category {s:?}")))
    }
}

/// Difficulty split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Easy,
    Medium,
    Hard,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Easy, Split::Medium, Split::Hard];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Easy => "easy",
            Split::Medium => "medium",
            Split::Hard => "hard",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Split::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown split {s:?}")))
    }
}

/// One action of the benchmark, e.g. `fitness_0` / "a weighted squat".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub action_key: String,
    pub description: String,
    pub category: Category,
    pub split: Split,
    pub fps_policy: f64,
}

/// A sequence of pre-extracted frames. Paths are relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoClip {
    pub clip_id: String,
    pub frame_paths: Vec<PathBuf>,
    pub native_fps: f64,
    pub sampled_fps: f64,
    pub duration_s: f64,
}

impl VideoClip {
    pub fn len(&self) -> usize {
        self.frame_paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_paths.is_empty()
    }

    /// Seconds between consecutive sampled frames.
    pub fn frame_period(&self) -> f64 {
        1.0 / self.sampled_fps
    }
}

/// Which side of a pair a clip sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Clip {
    A,
    B,
}

impl Clip {
    pub fn other(self) -> Clip {
        match self {
            Clip::A => Clip::B,
            Clip::B => Clip::A,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoPair {
    pub pair_id: String,
    pub action_key: String,
    pub video_a: VideoClip,
    pub video_b: VideoClip,
}

impl VideoPair {
    pub fn clip(&self, which: Clip) -> &VideoClip {
        match which {
            Clip::A => &self.video_a,
            Clip::B => &self.video_b,
        }
    }

    /// The same pair with A and B exchanged.
    pub fn swapped(&self) -> VideoPair {
        VideoPair {
            pair_id: self.pair_id.clone(),
            action_key: self.action_key.clone(),
            video_a: self.video_b.clone(),
            video_b: self.video_a.clone(),
        }
    }
}

/// How many frames a difference needs to be judged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameCount {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "gt_1")]
    GreaterThanOne,
}

impl FrameCount {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameCount::One => "1",
            FrameCount::GreaterThanOne => "gt_1",
        }
    }

    pub fn parse(s: &str) -> Option<FrameCount> {
        match s.trim() {
            "1" => Some(FrameCount::One),
            "gt_1" => Some(FrameCount::GreaterThanOne),
            _ => None,
        }
    }
}

/// A statement that can be more true of one video than the other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Difference {
    pub diff_key: String,
    pub name: String,
    pub description: String,
    pub query_string: String,
    pub num_frames: FrameCount,
    /// Keypoint names that bound where the difference is visible.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub keypoints: Vec<String>,
}

/// Substrings a difference description must not contain.
pub const VIDEO_SPECIFIC_PHRASES: [&str; 2] = ["video a", "video b"];

/// True if the text names a specific video ("video A"/"video B").
pub fn mentions_specific_video(text: &str) -> bool {
    let lower = text.to_lowercase();
    VIDEO_SPECIFIC_PHRASES.iter().any(|p| {
        lower.match_indices(p).any(|(i, m)| {
            // "video ab..." is not a reference to video a
            lower[i + m.len()..]
                .chars()
                .next()
                .is_none_or(|c| !c.is_alphanumeric())
        })
    })
}

impl Difference {
    pub fn is_video_agnostic(&self) -> bool {
        !mentions_specific_video(&self.description)
    }
}

/// Namespaced difference key, `{action_key}:{index}`.
pub fn diff_key(action_key: &str, index: usize) -> String {
    format!("{action_key}:{index}")
}

/// Annotated label: which video the difference is more true of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    A,
    B,
    C,
}

impl Label {
    pub fn is_positive(self) -> bool {
        matches!(self, Label::A | Label::B)
    }

    pub fn swapped(self) -> Label {
        match self {
            Label::A => Label::B,
            Label::B => Label::A,
            Label::C => Label::C,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLabel {
    pub pair_id: String,
    pub diff_key: String,
    pub label: Label,
}

impl GroundTruthLabel {
    pub fn swapped(&self) -> GroundTruthLabel {
        GroundTruthLabel {
            label: self.label.swapped(),
            ..self.clone()
        }
    }
}

/// A model's verdict: (a) video A, (b) video B, (c) similar or can't tell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    A,
    B,
    C,
}

impl Verdict {
    pub fn parse(s: &str) -> Option<Verdict> {
        let t = s.trim().trim_matches(|c: char| c == '(' || c == ')' || c == '.' || c == '\'' || c == '"');
        match t.to_ascii_lowercase().as_str() {
            "a" => Some(Verdict::A),
            "b" => Some(Verdict::B),
            "c" => Some(Verdict::C),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::A => "a",
            Verdict::B => "b",
            Verdict::C => "c",
        }
    }

    pub fn swapped(self) -> Verdict {
        match self {
            Verdict::A => Verdict::B,
            Verdict::B => Verdict::A,
            Verdict::C => Verdict::C,
        }
    }

    /// Whether this verdict agrees with a ground-truth label.
    pub fn agrees_with(self, label: Label) -> bool {
        matches!(
            (self, label),
            (Verdict::A, Label::A) | (Verdict::B, Label::B) | (Verdict::C, Label::C)
        )
    }
}

/// A prediction for one difference of one pair.
///
/// Closed-set predictions carry a taxonomy `diff_key`; open-set predictions
/// carry a generated `description` and a locally unique `diff_key`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub pair_id: String,
    pub diff_key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub verdict: Verdict,
    /// Set when the verdict was not parsed from the model reply.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub parse_failed: bool,
}

impl Prediction {
    pub fn closed(pair_id: impl Into<String>, diff_key: impl Into<String>, verdict: Verdict) -> Self {
        Prediction {
            pair_id: pair_id.into(),
            diff_key: diff_key.into(),
            description: None,
            verdict,
            parse_failed: false,
        }
    }

    pub fn swapped(&self) -> Prediction {
        Prediction {
            verdict: self.verdict.swapped(),
            ..self.clone()
        }
    }
}

/// Ground-truth frame index of a named moment in one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointAnnotation {
    pub pair_id: String,
    pub clip: Clip,
    pub keypoint_name: String,
    pub frame_index: usize,
}
