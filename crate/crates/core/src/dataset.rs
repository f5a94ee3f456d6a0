//! Dataset access: frame loading, fps subsampling and split statistics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::BenchmarkManifest;
use crate::model::{ActionSpec, Category, Label, Split, VideoClip};

/// Decoded RGB frame.
pub type Frame = image::RgbImage;

/// Sampling rate used for a category when no override is configured.
///
/// Short fine-grained actions are sampled at 4-6 fps; the long music and
/// surgery recordings at 1 fps.
pub fn default_fps(category: Category) -> f64 {
    match category {
        Category::Fitness => 4.0,
        Category::Ballsports => 5.0,
        Category::Diving => 6.0,
        Category::Music | Category::Surgery => 1.0,
    }
}

/// Per-category fps overrides, e.g. `surgery=2`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FpsOverrides(pub BTreeMap<Category, f64>);

impl FpsOverrides {
    /// Parse `category=fps` items.
    pub fn parse<'a>(items: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for item in items {
            let (cat, fps) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("expected category=fps, got {item:?}")))?;
            let fps: f64 = fps
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad fps in {item:?}")))?;
            if !(fps > 0.0) {
                return Err(Error::InvalidArgument(format!("fps must be > 0 in {item:?}")));
            }
            map.insert(cat.parse::<Category>()?, fps);
        }
        Ok(FpsOverrides(map))
    }

    pub fn target_fps(&self, action: &ActionSpec) -> f64 {
        self.0.get(&action.category).copied().unwrap_or(action.fps_policy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub scope: String,
    pub message: String,
}

/// Run-wide warning sink. Cloning shares the underlying buffer.
#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    inner: Arc<Mutex<Vec<Diagnostic>>>,
}

impl Diagnostics {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn warn(&self, scope: impl Into<String>, message: impl Into<String>) {
        let d = Diagnostic {
            scope: scope.into(),
            message: message.into(),
        };
        log::warn!("{}: {}", d.scope, d.message);
        self.inner.lock().expect("diagnostics poisoned").push(d);
    }

    /// Entries sorted by (scope, message) so output does not depend on thread timing.
    pub fn snapshot(&self) -> Vec<Diagnostic> {
        let mut v = self.inner.lock().expect("diagnostics poisoned").clone();
        v.sort_by(|a, b| (&a.scope, &a.message).cmp(&(&b.scope, &b.message)));
        v
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("diagnostics poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stride chosen to bring a clip to a target rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsamplePlan {
    pub stride: usize,
    /// Indices into the input clip's frame list.
    pub indices: Vec<usize>,
    pub achieved_fps: f64,
    pub exact: bool,
}

impl SubsamplePlan {
    /// Position in the subsampled clip closest to an input frame index.
    pub fn sampled_position(&self, input_index: usize) -> usize {
        let pos = (input_index as f64 / self.stride as f64).round() as usize;
        pos.min(self.indices.len().saturating_sub(1))
    }
}

pub fn plan_subsample(clip: &VideoClip, target_fps: f64) -> Result<SubsamplePlan> {
    if !(target_fps > 0.0 && target_fps.is_finite()) {
        return Err(Error::InvalidArgument(format!("target_fps must be > 0, got {target_fps}")));
    }
    if target_fps > clip.native_fps + 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "cannot upsample clip {} from {} fps to {target_fps} fps",
            clip.clip_id, clip.native_fps
        )));
    }
    let stride = ((clip.sampled_fps / target_fps).round() as usize).max(1);
    let achieved_fps = clip.sampled_fps / stride as f64;
    Ok(SubsamplePlan {
        stride,
        indices: (0..clip.len()).step_by(stride).collect(),
        achieved_fps,
        exact: (achieved_fps - target_fps).abs() <= 1e-9 * target_fps.max(1.0),
    })
}

/// Evenly strided subset of `clip` starting at frame 0, at the stride
/// nearest to `target_fps`. Inexact rates are reported on `diagnostics`.
pub fn subsample_to_fps(clip: &VideoClip, target_fps: f64, diagnostics: &Diagnostics) -> Result<VideoClip> {
    let plan = plan_subsample(clip, target_fps)?;
    Ok(apply_plan(clip, &plan, diagnostics))
}

pub fn apply_plan(clip: &VideoClip, plan: &SubsamplePlan, diagnostics: &Diagnostics) -> VideoClip {
    if !plan.exact {
        diagnostics.warn(
            format!("clip {}", clip.clip_id),
            format!(
                "cannot subsample {} fps to the exact target; using stride {} ({:.4} fps)",
                clip.sampled_fps, plan.stride, plan.achieved_fps
            ),
        );
    }
    VideoClip {
        clip_id: clip.clip_id.clone(),
        frame_paths: plan.indices.iter().map(|&i| clip.frame_paths[i].clone()).collect(),
        native_fps: clip.native_fps,
        sampled_fps: plan.achieved_fps,
        duration_s: clip.duration_s,
    }
}

/// Reads frames relative to a dataset root laid out as
/// `<root>/<action_key>/<clip_id>/frame_%06d.(png|jpg)`.
#[derive(Debug, Clone)]
pub struct FrameStore {
    root: PathBuf,
}

impl FrameStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FrameStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn load_frame(&self, clip: &VideoClip, index: usize) -> Result<Frame> {
        let rel = clip.frame_paths.get(index).ok_or_else(|| Error::FrameBounds {
            clip_id: clip.clip_id.clone(),
            index,
            len: clip.len(),
        })?;
        let path = self.root.join(rel);
        let img = image::open(&path).map_err(|e| Error::Image {
            path: path.clone(),
            index,
            message: e.to_string(),
        })?;
        Ok(img.to_rgb8())
    }

    /// Decode the requested frames, in request order.
    pub fn load_frames(&self, clip: &VideoClip, indices: &[usize]) -> Result<Vec<Frame>> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= clip.len()) {
            return Err(Error::FrameBounds {
                clip_id: clip.clip_id.clone(),
                index: bad,
                len: clip.len(),
            });
        }
        indices
            .par_iter()
            .map(|&i| self.load_frame(clip, i))
            .collect()
    }

    /// Build a clip by listing `<root>/<action_key>/<clip_id>/frame_*.{png,jpg}`.
    pub fn scan_clip(&self, action_key: &str, clip_id: &str, native_fps: f64) -> Result<VideoClip> {
        let dir = self.root.join(action_key).join(clip_id);
        let mut names = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let is_frame = name.starts_with("frame_")
                && [".png", ".jpg", ".jpeg"].iter().any(|ext| name.ends_with(ext));
            if is_frame {
                names.push(name);
            }
        }
        if names.is_empty() {
            return Err(Error::Validation(format!("no frame_* images in {}", dir.display())));
        }
        names.sort();
        let n = names.len();
        Ok(VideoClip {
            clip_id: clip_id.to_string(),
            frame_paths: names
                .into_iter()
                .map(|n| Path::new(action_key).join(clip_id).join(n))
                .collect(),
            native_fps,
            sampled_fps: native_fps,
            duration_s: n as f64 / native_fps,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: Split,
    pub n_pairs: usize,
    pub avg_video_length_s: f64,
    pub total_video_length_min: f64,
    pub n_difference_annotations: usize,
    /// Counts of labels A, B, C.
    pub abc_distribution: (usize, usize, usize),
}

/// Per-split counts over the pairs of a manifest. Video length is averaged
/// over every clip (two per pair).
pub fn compute_split_stats(manifest: &BenchmarkManifest) -> Vec<SplitStats> {
    let split_of = manifest.split_index();
    Split::ALL
        .into_iter()
        .map(|split| {
            let pairs: Vec<_> = manifest
                .pairs
                .iter()
                .filter(|p| split_of.get(&p.pair_id) == Some(&split))
                .collect();
            let ids: HashSet<&str> = pairs.iter().map(|p| p.pair_id.as_str()).collect();
            let lengths: Vec<f64> = pairs
                .iter()
                .flat_map(|p| [p.video_a.duration_s, p.video_b.duration_s])
                .collect();
            let total: f64 = lengths.iter().sum();
            let mut abc = (0, 0, 0);
            for l in manifest.labels.iter().filter(|l| ids.contains(l.pair_id.as_str())) {
                match l.label {
                    Label::A => abc.0 += 1,
                    Label::B => abc.1 += 1,
                    Label::C => abc.2 += 1,
                }
            }
            SplitStats {
                split,
                n_pairs: pairs.len(),
                avg_video_length_s: if lengths.is_empty() { 0.0 } else { total / lengths.len() as f64 },
                total_video_length_min: total / 60.0,
                n_difference_annotations: abc.0 + abc.1 + abc.2,
                abc_distribution: abc,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub category: Category,
    pub activities: usize,
    pub pairs: usize,
    pub differences: usize,
    pub timestamps: usize,
}

/// Per-category activity, pair, label and keypoint counts.
pub fn compute_category_stats(manifest: &BenchmarkManifest) -> Vec<CategoryStats> {
    let cat_of_action: HashMap<&str, Category> = manifest
        .actions
        .iter()
        .map(|a| (a.action_key.as_str(), a.category))
        .collect();
    let cat_of_pair: HashMap<&str, Category> = manifest
        .pairs
        .iter()
        .filter_map(|p| cat_of_action.get(p.action_key.as_str()).map(|c| (p.pair_id.as_str(), *c)))
        .collect();
    Category::ALL
        .into_iter()
        .map(|category| CategoryStats {
            category,
            activities: manifest.actions.iter().filter(|a| a.category == category).count(),
            pairs: cat_of_pair.values().filter(|c| **c == category).count(),
            differences: manifest
                .labels
                .iter()
                .filter(|l| cat_of_pair.get(l.pair_id.as_str()) == Some(&category))
                .count(),
            timestamps: manifest
                .keypoints
                .iter()
                .filter(|k| cat_of_pair.get(k.pair_id.as_str()) == Some(&category))
                .count(),
        })
        .collect()
}
