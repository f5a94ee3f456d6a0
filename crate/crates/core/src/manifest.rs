//! Benchmark manifests: line-delimited JSON records, one record per action,
//! pair, taxonomy entry, label, or keypoint.
//!
//! ```text
//! {"record":"action","action_key":"fitness_0","description":"...","category":"fitness","split":"easy","fps_policy":4.0}
//! {"record":"difference","action_key":"fitness_0","diff_key":"fitness_0:0","name":"depth",...}
//! {"record":"pair","pair_id":"p0","action_key":"fitness_0","video_a":{...},"video_b":{...}}
//! {"record":"label","pair_id":"p0","diff_key":"fitness_0:0","label":"A"}
//! {"record":"keypoint","pair_id":"p0","clip":"A","keypoint_name":"knees start to bend","frame_index":3}
//! ```
//!
//! Rows that fail to parse are kept as [`RejectedRow`]s so validation can
//! report them instead of aborting the load.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    mentions_specific_video, ActionSpec, Clip, Difference, GroundTruthLabel, KeypointAnnotation,
    Label, Split, VideoClip, VideoPair,
};

/// One line of a manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ManifestRecord {
    Action(ActionSpec),
    Difference(TaxonomyEntry),
    Pair(VideoPair),
    Label(GroundTruthLabel),
    Keypoint(KeypointAnnotation),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyEntry {
    pub action_key: String,
    #[serde(flatten)]
    pub difference: Difference,
}

/// A manifest row that could not be decoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub line: usize,
    pub reason: String,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub actions: Vec<ActionSpec>,
    pub pairs: Vec<VideoPair>,
    pub labels: Vec<GroundTruthLabel>,
    pub keypoints: Vec<KeypointAnnotation>,
    pub taxonomy: BTreeMap<String, Vec<Difference>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected: Vec<RejectedRow>,
}

impl BenchmarkManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut manifest = BenchmarkManifest::default();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            match serde_json::from_str::<ManifestRecord>(trimmed) {
                Ok(rec) => manifest.push(rec),
                Err(e) => manifest.rejected.push(RejectedRow {
                    line: i + 1,
                    reason: e.to_string(),
                    text: trimmed.to_string(),
                }),
            }
        }
        Ok(manifest)
    }

    pub fn push(&mut self, record: ManifestRecord) {
        match record {
            ManifestRecord::Action(a) => self.actions.push(a),
            ManifestRecord::Difference(t) => self
                .taxonomy
                .entry(t.action_key)
                .or_default()
                .push(t.difference),
            ManifestRecord::Pair(p) => self.pairs.push(p),
            ManifestRecord::Label(l) => self.labels.push(l),
            ManifestRecord::Keypoint(k) => self.keypoints.push(k),
        }
    }

    /// Records in a stable order: actions, taxonomy, pairs, labels, keypoints.
    pub fn records(&self) -> Vec<ManifestRecord> {
        let mut out = Vec::new();
        out.extend(self.actions.iter().cloned().map(ManifestRecord::Action));
        for (action_key, diffs) in &self.taxonomy {
            out.extend(diffs.iter().map(|d| {
                ManifestRecord::Difference(TaxonomyEntry {
                    action_key: action_key.clone(),
                    difference: d.clone(),
                })
            }));
        }
        out.extend(self.pairs.iter().cloned().map(ManifestRecord::Pair));
        out.extend(self.labels.iter().cloned().map(ManifestRecord::Label));
        out.extend(self.keypoints.iter().cloned().map(ManifestRecord::Keypoint));
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for rec in self.records() {
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn action(&self, action_key: &str) -> Option<&ActionSpec> {
        self.actions.iter().find(|a| a.action_key == action_key)
    }

    pub fn pair(&self, pair_id: &str) -> Option<&VideoPair> {
        self.pairs.iter().find(|p| p.pair_id == pair_id)
    }

    pub fn differences(&self, action_key: &str) -> &[Difference] {
        self.taxonomy.get(action_key).map_or(&[], Vec::as_slice)
    }

    pub fn difference(&self, diff_key: &str) -> Option<&Difference> {
        self.taxonomy.values().flatten().find(|d| d.diff_key == diff_key)
    }

    pub fn split_of_pair(&self, pair_id: &str) -> Option<Split> {
        let pair = self.pair(pair_id)?;
        self.action(&pair.action_key).map(|a| a.split)
    }

    /// Map from pair id to split, for pairs whose action is known.
    pub fn split_index(&self) -> BTreeMap<String, Split> {
        let splits: HashMap<&str, Split> = self
            .actions
            .iter()
            .map(|a| (a.action_key.as_str(), a.split))
            .collect();
        self.pairs
            .iter()
            .filter_map(|p| {
                splits
                    .get(p.action_key.as_str())
                    .map(|s| (p.pair_id.clone(), *s))
            })
            .collect()
    }

    pub fn labels_for_pair<'a>(&'a self, pair_id: &'a str) -> impl Iterator<Item = &'a GroundTruthLabel> + 'a {
        self.labels.iter().filter(move |l| l.pair_id == pair_id)
    }

    pub fn keypoints_for<'a>(
        &'a self,
        pair_id: &'a str,
        clip: Clip,
    ) -> impl Iterator<Item = &'a KeypointAnnotation> + 'a {
        self.keypoints
            .iter()
            .filter(move |k| k.pair_id == pair_id && k.clip == clip)
    }

    /// Keep only pairs (and their labels/keypoints) whose action is in one of `splits`.
    pub fn filter_splits(&self, splits: &[Split]) -> BenchmarkManifest {
        let keep_actions: HashSet<&str> = self
            .actions
            .iter()
            .filter(|a| splits.contains(&a.split))
            .map(|a| a.action_key.as_str())
            .collect();
        let pairs: Vec<VideoPair> = self
            .pairs
            .iter()
            .filter(|p| keep_actions.contains(p.action_key.as_str()))
            .cloned()
            .collect();
        let pair_ids: HashSet<&str> = pairs.iter().map(|p| p.pair_id.as_str()).collect();
        BenchmarkManifest {
            actions: self
                .actions
                .iter()
                .filter(|a| keep_actions.contains(a.action_key.as_str()))
                .cloned()
                .collect(),
            labels: self
                .labels
                .iter()
                .filter(|l| pair_ids.contains(l.pair_id.as_str()))
                .cloned()
                .collect(),
            keypoints: self
                .keypoints
                .iter()
                .filter(|k| pair_ids.contains(k.pair_id.as_str()))
                .cloned()
                .collect(),
            taxonomy: self
                .taxonomy
                .iter()
                .filter(|(k, _)| keep_actions.contains(k.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            rejected: Vec::new(),
            pairs,
        }
    }
}

/// Labels usable by the closed task: only rows with a clear A or B answer.
pub fn closed_set_labels(labels: &[GroundTruthLabel]) -> Vec<GroundTruthLabel> {
    labels
        .iter()
        .filter(|l| l.label.is_positive())
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Where the problem is, e.g. `line 7`, `pair p3`, `label p3/fitness_0:2`.
    pub location: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestCounts {
    pub activities: usize,
    pub pairs: usize,
    pub differences: usize,
    pub timestamps: usize,
    pub taxonomy_entries: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub counts: ManifestCounts,
    /// Pairs as listed in the manifest.
    pub raw_pairs: usize,
    /// Pairs with no violations and at least one label.
    pub valid_pairs: usize,
    pub violations: Vec<Violation>,
    pub is_valid: bool,
}

/// Check every manifest invariant. When `dataset_root` is given, frame
/// files are also checked for existence.
pub fn validate_benchmark(manifest: &BenchmarkManifest, dataset_root: Option<&Path>) -> ValidationReport {
    let mut violations = Vec::new();
    let mut bad_pairs: HashSet<&str> = HashSet::new();
    let mut push = |location: String, message: String| violations.push(Violation { location, message });

    for row in &manifest.rejected {
        push(format!("line {}", row.line), format!("unparseable record: {}", row.reason));
    }

    let mut action_keys = HashSet::new();
    for a in &manifest.actions {
        if !action_keys.insert(a.action_key.as_str()) {
            push(format!("action {}", a.action_key), "duplicate action_key".into());
        }
        if !(a.fps_policy > 0.0 && a.fps_policy.is_finite()) {
            push(format!("action {}", a.action_key), format!("fps_policy must be > 0, got {}", a.fps_policy));
        }
    }

    let mut diff_keys: HashMap<&str, &str> = HashMap::new();
    for (action_key, diffs) in &manifest.taxonomy {
        if !action_keys.contains(action_key.as_str()) {
            push(format!("taxonomy {action_key}"), "taxonomy references unknown action".into());
        }
        for d in diffs {
            let loc = format!("difference {}", d.diff_key);
            if diff_keys.insert(d.diff_key.as_str(), action_key.as_str()).is_some() {
                push(loc.clone(), "duplicate diff_key".into());
            }
            let prefix = format!("{action_key}:");
            if !d.diff_key.starts_with(&prefix) {
                push(loc.clone(), format!("diff_key not namespaced as {prefix}<index>"));
            }
            if mentions_specific_video(&d.description) {
                push(loc, "description names a specific video".into());
            }
        }
    }

    let mut pair_ids: HashMap<&str, &VideoPair> = HashMap::new();
    for p in &manifest.pairs {
        let loc = format!("pair {}", p.pair_id);
        if pair_ids.insert(p.pair_id.as_str(), p).is_some() {
            push(loc.clone(), "duplicate pair_id".into());
            bad_pairs.insert(&p.pair_id);
        }
        if !action_keys.contains(p.action_key.as_str()) {
            push(loc.clone(), format!("unknown action_key {}", p.action_key));
            bad_pairs.insert(&p.pair_id);
        }
        for (side, clip) in [("A", &p.video_a), ("B", &p.video_b)] {
            for msg in clip_violations(clip, dataset_root) {
                push(format!("{loc} clip {side} ({})", clip.clip_id), msg);
                bad_pairs.insert(&p.pair_id);
            }
        }
        if (p.video_a.sampled_fps - p.video_b.sampled_fps).abs() > 1e-9 {
            push(
                loc,
                format!(
                    "sampled_fps differs between clips ({} vs {})",
                    p.video_a.sampled_fps, p.video_b.sampled_fps
                ),
            );
            bad_pairs.insert(&p.pair_id);
        }
    }

    let mut seen_labels: HashSet<(&str, &str)> = HashSet::new();
    let mut labelled_pairs: HashSet<&str> = HashSet::new();
    for l in &manifest.labels {
        let loc = format!("label {}/{}", l.pair_id, l.diff_key);
        let pair = pair_ids.get(l.pair_id.as_str());
        match pair {
            None => push(loc.clone(), "label references unknown pair".into()),
            Some(p) => match diff_keys.get(l.diff_key.as_str()) {
                None => push(loc.clone(), "label references unknown diff_key".into()),
                Some(owner) if *owner != p.action_key => {
                    push(loc.clone(), format!("diff_key belongs to action {owner}, pair is {}", p.action_key))
                }
                Some(_) => {
                    labelled_pairs.insert(&l.pair_id);
                }
            },
        }
        if !seen_labels.insert((&l.pair_id, &l.diff_key)) {
            push(loc, "more than one label for (pair_id, diff_key)".into());
            bad_pairs.insert(&l.pair_id);
        }
    }

    for k in &manifest.keypoints {
        let loc = format!("keypoint {}/{:?}/{}", k.pair_id, k.clip, k.keypoint_name);
        match pair_ids.get(k.pair_id.as_str()) {
            None => push(loc, "keypoint references unknown pair".into()),
            Some(p) => {
                let len = p.clip(k.clip).len();
                if k.frame_index >= len {
                    push(loc, format!("frame_index {} out of range for {len} frames", k.frame_index));
                }
            }
        }
    }

    let valid_pairs = manifest
        .pairs
        .iter()
        .filter(|p| !bad_pairs.contains(p.pair_id.as_str()) && labelled_pairs.contains(p.pair_id.as_str()))
        .map(|p| p.pair_id.as_str())
        .collect::<BTreeSet<_>>()
        .len();

    ValidationReport {
        counts: ManifestCounts {
            activities: manifest.actions.len(),
            pairs: manifest.pairs.len(),
            differences: manifest.labels.len(),
            timestamps: manifest.keypoints.len(),
            taxonomy_entries: manifest.taxonomy.values().map(Vec::len).sum(),
        },
        raw_pairs: manifest.pairs.len(),
        valid_pairs,
        is_valid: violations.is_empty(),
        violations,
    }
}

fn clip_violations(clip: &VideoClip, dataset_root: Option<&Path>) -> Vec<String> {
    let mut out = Vec::new();
    if clip.frame_paths.is_empty() {
        out.push("frame_paths is empty".to_string());
    }
    if !(clip.native_fps > 0.0 && clip.sampled_fps > 0.0) {
        out.push(format!(
            "fps must be positive (native {}, sampled {})",
            clip.native_fps, clip.sampled_fps
        ));
    } else {
        if clip.sampled_fps > clip.native_fps + 1e-9 {
            out.push(format!(
                "sampled_fps {} exceeds native_fps {}",
                clip.sampled_fps, clip.native_fps
            ));
        }
        let implied = clip.frame_paths.len() as f64 / clip.sampled_fps;
        if (implied - clip.duration_s).abs() > clip.frame_period() + 1e-9 {
            out.push(format!(
                "duration_s {} inconsistent with {} frames at {} fps",
                clip.duration_s,
                clip.frame_paths.len(),
                clip.sampled_fps
            ));
        }
    }
    if let Some(root) = dataset_root {
        let missing: Vec<_> = clip
            .frame_paths
            .iter()
            .filter(|p| !root.join(p).is_file())
            .collect();
        if let Some(first) = missing.first() {
            out.push(format!(
                "{} missing frame file(s), first: {}",
                missing.len(),
                first.display()
            ));
        }
    }
    out
}

/// Count of closed-set rows labelled A and B.
pub fn closed_ab_counts(labels: &[GroundTruthLabel]) -> (usize, usize) {
    labels.iter().fold((0, 0), |(a, b), l| match l.label {
        Label::A => (a + 1, b),
        Label::B => (a, b + 1),
        Label::C => (a, b),
    })
}
