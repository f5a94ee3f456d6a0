//! Prompt templates.
//!
//! Templates are stored verbatim under `prompts/` with `{placeholder}`
//! markers; rendering is plain substitution of the named placeholders and
//! leaves every other brace untouched.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Bumped whenever a template asset changes.
pub const PROMPT_SET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy)]
pub struct Template {
    pub name: &'static str,
    pub text: &'static str,
    pub placeholders: &'static [&'static str],
}

macro_rules! template {
    ($ident:ident, $file:literal, [$($p:literal),* $(,)?]) => {
        pub const $ident: Template = Template {
            name: $file,
            text: include_str!(concat!("../prompts/", $file, ".txt")),
            placeholders: &[$($p),*],
        };
    };
}

template!(PROPOSER_DIFFERENCES, "proposer_differences", ["action", "n_differences"]);
template!(PROPOSER_STAGES, "proposer_stages", ["action", "n_retrieval_keys"]);
template!(PROPOSER_LINKING, "proposer_linking", ["action", "stages", "differences"]);
template!(FRAME_DIFFERENCER, "frame_differencer", ["action", "num_frames", "time_diff", "query_string"]);
template!(
    OPEN_MATCHING,
    "open_matching",
    ["action_description", "differences0", "differences1", "dict0_keys", "dict1_keys", "final"]
);
template!(OPPOSITE_STATEMENTS, "opposite_statements", ["statements"]);
template!(
    BASELINE_CLOSED,
    "baseline_closed",
    ["action_description", "video_representation_description", "differences_annotated", "target_out"]
);
template!(
    BASELINE_OPEN,
    "baseline_open",
    ["action_description", "video_representation_description", "n_differences"]
);
template!(VIDEO_REP_NATIVE, "video_rep_native", []);
template!(VIDEO_REP_FRAMES, "video_rep_frames", ["vid0_nframes", "vid1_nframes", "fps"]);

pub const ALL_TEMPLATES: [Template; 10] = [
    PROPOSER_DIFFERENCES,
    PROPOSER_STAGES,
    PROPOSER_LINKING,
    FRAME_DIFFERENCER,
    OPEN_MATCHING,
    OPPOSITE_STATEMENTS,
    BASELINE_CLOSED,
    BASELINE_OPEN,
    VIDEO_REP_NATIVE,
    VIDEO_REP_FRAMES,
];

/// Output instructions appended to the closed baseline prompt.
pub const CLOSED_TARGET_OUT: &str = "Return a json like this, with one entry for every difference key and each value either 'a' or 'b':\n{\n    \"<key>\" : \"a|b\",\n    ...\n}";

impl Template {
    /// Substitute every placeholder. Each must be supplied exactly once.
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String> {
        for p in self.placeholders {
            if !values.iter().any(|(k, _)| k == p) {
                return Err(Error::InvalidArgument(format!("template {}: missing {{{p}}}", self.name)));
            }
        }
        if let Some((k, _)) = values.iter().find(|(k, _)| !self.placeholders.contains(k)) {
            return Err(Error::InvalidArgument(format!("template {}: unknown placeholder {k}", self.name)));
        }
        // single pass so substituted text is never re-scanned
        let mut out = String::with_capacity(self.text.len() + 256);
        let mut rest = self.text;
        while let Some(start) = rest.find('{') {
            out.push_str(&rest[..start]);
            let tail = &rest[start + 1..];
            let hit = values.iter().find(|(k, _)| {
                tail.starts_with(k) && tail[k.len()..].starts_with('}')
            });
            match hit {
                Some((k, v)) => {
                    out.push_str(v);
                    rest = &tail[k.len() + 1..];
                }
                None => {
                    out.push('{');
                    rest = tail;
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.text.as_bytes()))
    }
}

/// Serialize as compact-but-readable JSON (`{"0": "...", "1": "..."}`).
pub fn json_inline<T: Serialize + ?Sized>(value: &T) -> String {
    let compact = serde_json::to_string(value).expect("serializable");
    // add a space after separators outside strings, matching Python's str(dict) spacing
    let mut out = String::with_capacity(compact.len() + compact.len() / 8);
    let mut in_str = false;
    let mut escaped = false;
    for c in compact.chars() {
        out.push(c);
        if in_str {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
        } else if c == '"' {
            in_str = true;
        } else if c == ':' || c == ',' {
            out.push(' ');
        }
    }
    out
}

/// Seconds between frames as printed in prompts: at most two decimals.
pub fn format_seconds(s: f64) -> String {
    let t = format!("{s:.2}");
    let t = t.trim_end_matches('0').trim_end_matches('.');
    if t.is_empty() { "0".into() } else { t.to_string() }
}

pub fn proposer_differences(action: &str, n_differences: usize) -> String {
    PROPOSER_DIFFERENCES
        .render(&[("action", action), ("n_differences", &n_differences.to_string())])
        .expect("placeholders fixed")
}

pub fn proposer_stages(action: &str, n_retrieval_keys: usize) -> String {
    PROPOSER_STAGES
        .render(&[("action", action), ("n_retrieval_keys", &n_retrieval_keys.to_string())])
        .expect("placeholders fixed")
}

pub fn proposer_linking(action: &str, stages: &str, differences: &str) -> String {
    PROPOSER_LINKING
        .render(&[("action", action), ("stages", stages), ("differences", differences)])
        .expect("placeholders fixed")
}

/// Frame differencer prompt. With a single frame per video the line giving
/// the time between frames is dropped.
pub fn frame_differencer(action: &str, num_frames: usize, time_diff_s: Option<f64>, query_string: &str) -> String {
    let n = num_frames.to_string();
    let td = time_diff_s.map(format_seconds).unwrap_or_default();
    let text = FRAME_DIFFERENCER
        .render(&[
            ("action", action),
            ("num_frames", &n),
            ("time_diff", &td),
            ("query_string", query_string),
        ])
        .expect("placeholders fixed");
    if num_frames > 1 && time_diff_s.is_some() {
        text
    } else {
        text.lines()
            .filter(|l| !l.starts_with("For each video, the frames are very close together"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub fn open_matching(
    action_description: &str,
    differences0: &str,
    differences1: &str,
    dict0_keys: &str,
    dict1_keys: &str,
    final_key: &str,
) -> String {
    OPEN_MATCHING
        .render(&[
            ("action_description", action_description),
            ("differences0", differences0),
            ("differences1", differences1),
            ("dict0_keys", dict0_keys),
            ("dict1_keys", dict1_keys),
            ("final", final_key),
        ])
        .expect("placeholders fixed")
}

pub fn opposite_statements(statements: &str) -> String {
    OPPOSITE_STATEMENTS
        .render(&[("statements", statements)])
        .expect("placeholders fixed")
}

pub fn video_rep_frames(vid0_nframes: usize, vid1_nframes: usize, fps: f64) -> String {
    VIDEO_REP_FRAMES
        .render(&[
            ("vid0_nframes", &vid0_nframes.to_string()),
            ("vid1_nframes", &vid1_nframes.to_string()),
            ("fps", &format_seconds(fps)),
        ])
        .expect("placeholders fixed")
}

pub fn baseline_closed(action_description: &str, video_rep: &str, differences_annotated: &str) -> String {
    BASELINE_CLOSED
        .render(&[
            ("action_description", action_description),
            ("video_representation_description", video_rep),
            ("differences_annotated", differences_annotated),
            ("target_out", CLOSED_TARGET_OUT),
        ])
        .expect("placeholders fixed")
}

pub fn baseline_open(action_description: &str, video_rep: &str, n_differences: usize) -> String {
    BASELINE_OPEN
        .render(&[
            ("action_description", action_description),
            ("video_representation_description", video_rep),
            ("n_differences", &n_differences.to_string()),
        ])
        .expect("placeholders fixed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_declared_placeholder_occurs() {
        for t in ALL_TEMPLATES {
            for p in t.placeholders {
                assert!(t.text.contains(&format!("{{{p}}}")), "{} lacks {{{p}}}", t.name);
            }
        }
    }

    #[test]
    fn json_braces_survive_rendering() {
        let s = proposer_differences("a squat", 4);
        assert!(s.contains("List 4 differences."));
        assert!(s.contains("\"num_frames\": \"1|gt_1\""));
        assert!(s.contains("{\n\t'0' : {"));
    }

    #[test]
    fn substituted_text_is_not_rescanned() {
        let s = proposer_stages("do {n_retrieval_keys} things", 5);
        assert!(s.contains("\"do {n_retrieval_keys} things\""));
        assert!(s.contains("Give at least 5 retrieval strings per stage."));
    }

    #[test]
    fn missing_and_unknown_placeholders_error() {
        assert!(OPPOSITE_STATEMENTS.render(&[]).is_err());
        assert!(OPPOSITE_STATEMENTS.render(&[("statements", "x"), ("other", "y")]).is_err());
    }

    #[test]
    fn differencer_drops_time_line_for_single_frame() {
        let one = frame_differencer("squat", 1, None, "the squat is deeper");
        assert!(!one.contains("seconds apart"));
        assert!(one.contains("The first 1 frames are from video A"));
        let many = frame_differencer("squat", 4, Some(0.5), "the squat is deeper");
        assert!(many.contains("they are 0.5 seconds apart."));
        assert_eq!(many.lines().count(), one.lines().count() + 1);
    }

    #[test]
    fn seconds_formatting() {
        assert_eq!(format_seconds(0.5), "0.5");
        assert_eq!(format_seconds(0.25), "0.25");
        assert_eq!(format_seconds(1.0 / 3.0), "0.33");
        assert_eq!(format_seconds(2.0), "2");
    }

    #[test]
    fn inline_json_spacing() {
        let v = serde_json::json!({"0": "a: b, c", "1": ["x", "y"]});
        assert_eq!(json_inline(&v), r#"{"0": "a: b, c", "1": ["x", "y"]}"#);
    }
}
