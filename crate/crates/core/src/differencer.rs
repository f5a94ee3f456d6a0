//! Stage 3: ask the vision-language model which video shows more of a
//! difference, given the localized frames of both videos.

use image::imageops::{self, FilterType};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{Frame, FrameStore};
use crate::error::{Error, ProviderError, Result};
use crate::model::{Difference, Prediction, VideoPair, Verdict};
use crate::prompts;
use crate::providers::{Models, VlmRequest};

/// Frames are shrunk so their longer edge is at most this many pixels.
pub const MAX_IMAGE_EDGE: u32 = 512;

#[derive(Debug, Clone)]
pub struct VqaQuery {
    pub pair_id: String,
    pub diff_key: String,
    pub action_description: String,
    pub query_string: String,
    pub frames_a: Vec<Frame>,
    pub frames_b: Vec<Frame>,
    /// Seconds between consecutive frames within a video.
    pub time_diff_s: Option<f64>,
}

impl VqaQuery {
    pub fn num_frames(&self) -> usize {
        self.frames_a.len()
    }

    pub fn prompt(&self) -> String {
        prompts::frame_differencer(&self.action_description, self.num_frames(), self.time_diff_s, &self.query_string)
    }

    /// Same question with the videos in the other order.
    pub fn swapped(&self) -> VqaQuery {
        VqaQuery {
            frames_a: self.frames_b.clone(),
            frames_b: self.frames_a.clone(),
            ..self.clone()
        }
    }
}

/// The frame indices used for one (pair, difference) query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSelection {
    pub pair_id: String,
    pub diff_key: String,
    pub frames_a: Vec<usize>,
    pub frames_b: Vec<usize>,
}

/// Mean gap between consecutive selected frames, in seconds.
pub fn time_diff(indices: &[usize], fps: f64) -> Option<f64> {
    if indices.len() < 2 || fps <= 0.0 {
        return None;
    }
    let span = (indices[indices.len() - 1] as f64 - indices[0] as f64).abs();
    let gap = span / (indices.len() - 1) as f64 / fps;
    (gap > 0.0).then_some(gap)
}

/// Trim the longer list to the shorter one's length by even resampling so
/// both videos contribute the same number of frames.
pub fn equalize(a: &[usize], b: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let n = a.len().min(b.len());
    let pick = |v: &[usize]| -> Vec<usize> {
        if v.len() == n || n == 0 {
            return v[..n].to_vec();
        }
        if n == 1 {
            return vec![v[(v.len() - 1) / 2]];
        }
        (0..n)
            .map(|i| v[(i as f64 * (v.len() - 1) as f64 / (n - 1) as f64).round() as usize])
            .collect()
    };
    (pick(a), pick(b))
}

/// Shrink so the longer edge is at most [`MAX_IMAGE_EDGE`], bilinear.
pub fn downscale(frame: Frame) -> Frame {
    let (w, h) = frame.dimensions();
    let edge = w.max(h);
    if edge <= MAX_IMAGE_EDGE {
        return frame;
    }
    let scale = f64::from(MAX_IMAGE_EDGE) / f64::from(edge);
    let nw = ((f64::from(w) * scale).round() as u32).max(1);
    let nh = ((f64::from(h) * scale).round() as u32).max(1);
    imageops::resize(&frame, nw, nh, FilterType::Triangle)
}

/// Load the selected frames of both videos and assemble the question.
pub fn build_query(
    store: &FrameStore,
    pair: &VideoPair,
    action_description: &str,
    diff: &Difference,
    frames_a_idx: &[usize],
    frames_b_idx: &[usize],
) -> Result<VqaQuery> {
    if frames_a_idx.is_empty() || frames_a_idx.len() != frames_b_idx.len() {
        return Err(Error::Precondition(format!(
            "{} / {}: frame lists must be non-empty and equal length, got {} and {}",
            pair.pair_id,
            diff.diff_key,
            frames_a_idx.len(),
            frames_b_idx.len()
        )));
    }
    let load = |which: &crate::model::VideoClip, idx: &[usize]| -> Result<Vec<Frame>> {
        Ok(store.load_frames(which, idx)?.into_iter().map(downscale).collect())
    };
    let frames_a = load(&pair.video_a, frames_a_idx)?;
    let frames_b = load(&pair.video_b, frames_b_idx)?;
    let time_diff_s = time_diff(frames_a_idx, pair.video_a.sampled_fps);
    Ok(VqaQuery {
        pair_id: pair.pair_id.clone(),
        diff_key: diff.diff_key.clone(),
        action_description: action_description.to_string(),
        query_string: diff.query_string.clone(),
        frames_a,
        frames_b,
        time_diff_s,
    })
}

/// Read `answer` from a parsed reply.
pub fn parse_answer(value: &Value) -> Option<Verdict> {
    value.get("answer").and_then(Value::as_str).and_then(Verdict::parse)
}

/// Ask the VLM. Replies that never yield a usable answer become `c` with
/// `parse_failed` set; transport errors propagate.
pub fn run_vqa(models: &Models, query: &VqaQuery) -> Result<Prediction> {
    if query.frames_a.len() != query.frames_b.len() || query.frames_a.is_empty() {
        return Err(Error::Precondition("query needs equal, non-empty frame lists".into()));
    }
    let mut images = query.frames_a.clone();
    images.extend(query.frames_b.iter().cloned());
    let id = format!("vqa:{}:{}", query.pair_id, query.diff_key);
    let req = VlmRequest::with_images(id, query.prompt(), images);
    let verdict = match models.ask_vision(req) {
        Ok(resp) => resp.parsed_json.as_ref().and_then(parse_answer),
        Err(ProviderError::Parse { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let mut p = Prediction::closed(&query.pair_id, &query.diff_key, verdict.unwrap_or(Verdict::C));
    p.parse_failed = verdict.is_none();
    Ok(p)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::model::{FrameCount, VideoClip};
    use crate::providers::{FnVlm, MockEmbedder, RetryPolicy, ScriptedLlm, ScriptedVlm, VlmProvider};

    fn models(vlm: Arc<dyn VlmProvider>) -> Models {
        Models::new(Arc::new(ScriptedLlm::new(Vec::<String>::new())), vlm, Arc::new(MockEmbedder::default()))
            .with_retry(RetryPolicy {
                base_backoff_ms: 0,
                max_backoff_ms: 0,
                ..RetryPolicy::default()
            })
    }

    fn solid(r: u8) -> Frame {
        Frame::from_pixel(8, 8, image::Rgb([r, 0, 0]))
    }

    fn query(a: Vec<Frame>, b: Vec<Frame>) -> VqaQuery {
        VqaQuery {
            pair_id: "p0".into(),
            diff_key: "squat:0".into(),
            action_description: "a squat".into(),
            query_string: "the squat is deeper".into(),
            time_diff_s: Some(0.5),
            frames_a: a,
            frames_b: b,
        }
    }

    #[test]
    fn answer_a_is_parsed() {
        let vlm = Arc::new(ScriptedVlm::new([r#"{"answer_detailed": "deeper", "answer": "a"}"#]));
        let p = run_vqa(&models(vlm.clone()), &query(vec![solid(0)], vec![solid(9)])).unwrap();
        assert_eq!(p.verdict, Verdict::A);
        assert!(!p.parse_failed);
        assert_eq!(vlm.received()[0].1, 2);
    }

    #[test]
    fn prose_three_times_degrades_to_c() {
        let vlm = Arc::new(ScriptedVlm::new(["video one", "I think A", "hard to say"]));
        let p = run_vqa(&models(vlm.clone()), &query(vec![solid(0)], vec![solid(9)])).unwrap();
        assert_eq!(p.verdict, Verdict::C);
        assert!(p.parse_failed);
        assert_eq!(vlm.received().len(), 3);
    }

    #[test]
    fn unusable_answer_field_degrades_to_c() {
        let vlm = Arc::new(ScriptedVlm::new([r#"{"answer": "video 1"}"#]));
        let p = run_vqa(&models(vlm), &query(vec![solid(0)], vec![solid(9)])).unwrap();
        assert_eq!((p.verdict, p.parse_failed), (Verdict::C, true));
    }

    #[test]
    fn transport_errors_propagate() {
        let vlm = Arc::new(FnVlm(|_: &VlmRequest| Err(ProviderError::Transport("down".into()))));
        assert!(run_vqa(&models(vlm), &query(vec![solid(0)], vec![solid(9)])).is_err());
    }

    #[test]
    fn order_symmetric_mock_flips_under_swap() {
        // answers by comparing the red channel of the two halves
        let vlm = Arc::new(FnVlm(|req: &VlmRequest| {
            let n = req.images.len() / 2;
            let red = |fs: &[Frame]| fs.iter().map(|f| u32::from(f.get_pixel(0, 0)[0])).sum::<u32>();
            let (a, b) = (red(&req.images[..n]), red(&req.images[n..]));
            let ans = if a > b { "a" } else if b > a { "b" } else { "c" };
            Ok(format!("{{\"answer\": \"{ans}\"}}"))
        }));
        let m = models(vlm);
        let q = query(vec![solid(200), solid(180)], vec![solid(10), solid(20)]);
        let p = run_vqa(&m, &q).unwrap();
        let s = run_vqa(&m, &q.swapped()).unwrap();
        assert_eq!(p.verdict, Verdict::A);
        assert_eq!(s.verdict, p.verdict.swapped());
        let same = run_vqa(&m, &query(vec![solid(5)], vec![solid(5)])).unwrap();
        assert_eq!(same.verdict, Verdict::C);
    }

    #[test]
    fn time_diff_from_stride() {
        // stride 2 at 4 fps
        assert_eq!(time_diff(&[0, 2, 4, 6], 4.0), Some(0.5));
        assert_eq!(time_diff(&[3], 4.0), None);
    }

    #[test]
    fn equalize_resamples_longer_list() {
        assert_eq!(equalize(&[0, 1, 2, 3, 4], &[7, 9]), (vec![0, 4], vec![7, 9]));
        assert_eq!(equalize(&[1, 2, 3], &[5]), (vec![2], vec![5]));
    }

    #[test]
    fn build_query_checks_lengths_and_bounds() {
        let dir = tempfile::tempdir().unwrap();
        let mut paths = Vec::new();
        for i in 0..4 {
            let rel = std::path::PathBuf::from(format!("v/frame_{i:04}.png"));
            std::fs::create_dir_all(dir.path().join("v")).unwrap();
            Frame::from_pixel(1024, 600, image::Rgb([i as u8 * 40, 0, 0]))
                .save(dir.path().join(&rel))
                .unwrap();
            paths.push(rel);
        }
        let clip = |id: &str| VideoClip {
            clip_id: id.into(),
            frame_paths: paths.clone(),
            native_fps: 4.0,
            sampled_fps: 4.0,
            duration_s: 1.0,
        };
        let pair = VideoPair {
            pair_id: "p".into(),
            action_key: "squat".into(),
            video_a: clip("a"),
            video_b: clip("b"),
        };
        let diff = Difference {
            diff_key: "squat:0".into(),
            name: "depth".into(),
            description: "deeper".into(),
            query_string: "the squat is deeper".into(),
            num_frames: FrameCount::GreaterThanOne,
            keypoints: vec![],
        };
        let store = FrameStore::new(dir.path());
        assert!(matches!(
            build_query(&store, &pair, "squat", &diff, &[0, 1], &[0]),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            build_query(&store, &pair, "squat", &diff, &[0, 9], &[0, 1]),
            Err(Error::FrameBounds { index: 9, .. })
        ));
        let q = build_query(&store, &pair, "squat", &diff, &[0, 2], &[1, 3]).unwrap();
        assert_eq!(q.time_diff_s, Some(0.5));
        assert_eq!(q.frames_a[0].dimensions(), (512, 300));
        assert_eq!(q.frames_b[1].get_pixel(0, 0)[0], 120);
        assert!(q.prompt().contains("they are 0.5 seconds apart."));
    }
}
