//! Stage 2: align each video's frames to the sub-action transcript and pick
//! the frames where each difference should be judged.
//!
//! Frames are scored against every stage's retrieval strings, converted to
//! per-frame emission log-probabilities with a temperature softmax over
//! stages, and decoded with a monotone dynamic program: the path starts in
//! stage 0, ends in stage K-1, and at each frame either stays or advances
//! by exactly one stage.

use std::ops::Range;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::FrameCount;
use crate::providers::EmbeddingMatrix;

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_N_FRAMES: usize = 4;
/// Relative gap below which two path scores are treated as tied.
pub const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocalizerMode {
    Viterbi,
    /// Per-frame best stage, no ordering constraint.
    Argmax,
    Random,
    /// Frames from annotated keypoints.
    Oracle,
}

impl LocalizerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LocalizerMode::Viterbi => "viterbi",
            LocalizerMode::Argmax => "argmax",
            LocalizerMode::Random => "random",
            LocalizerMode::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for LocalizerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "viterbi" | "localizer" => Ok(LocalizerMode::Viterbi),
            "argmax" => Ok(LocalizerMode::Argmax),
            "random" => Ok(LocalizerMode::Random),
            "oracle" => Ok(LocalizerMode::Oracle),
            _ => Err(Error::InvalidArgument(format!("unknown localizer mode {s:?}"))),
        }
    }
}

/// How retrieval-string similarities are pooled into one stage score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageAggregation {
    #[default]
    Max,
    Mean,
}

/// Frame-by-stage scores, row-major `frames x stages`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    frames: usize,
    stages: usize,
    scores: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(frames: usize, stages: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != frames * stages {
            return Err(Error::DimensionMismatch(format!(
                "{} scores for {frames}x{stages}",
                scores.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite score {bad}")));
        }
        Ok(SimilarityMatrix { frames, stages, scores })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let stages = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != stages) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), stages, rows.concat())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.scores[t * self.stages + k]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.scores[t * self.stages..(t + 1) * self.stages]
    }

    pub fn scaled(&self, c: f64) -> SimilarityMatrix {
        SimilarityMatrix {
            frames: self.frames,
            stages: self.stages,
            scores: self.scores.iter().map(|s| s * c).collect(),
        }
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

/// Cosine similarity of every frame to every stage, pooled over the stage's
/// retrieval strings. Inputs not flagged normalized are normalized here.
pub fn score_frames(
    frame_emb: &EmbeddingMatrix,
    stage_text_embs: &[EmbeddingMatrix],
    aggregation: StageAggregation,
) -> Result<SimilarityMatrix> {
    if stage_text_embs.is_empty() {
        return Err(Error::InvalidArgument("no stages to score against".into()));
    }
    let norm = |m: &EmbeddingMatrix| if m.is_normalized() { m.clone() } else { m.normalized() };
    let frames = norm(frame_emb);
    let stages: Vec<EmbeddingMatrix> = stage_text_embs.iter().map(norm).collect();
    for (k, s) in stages.iter().enumerate() {
        if s.dims() != frames.dims() {
            return Err(Error::DimensionMismatch(format!(
                "stage {k} text embeddings have {} dims, frames have {}",
                s.dims(),
                frames.dims()
            )));
        }
        if s.rows() == 0 {
            return Err(Error::InvalidArgument(format!("stage {k} has no retrieval strings")));
        }
    }
    let mut scores = Vec::with_capacity(frames.rows() * stages.len());
    for t in 0..frames.rows() {
        let f = frames.row(t);
        for s in &stages {
            let sims = (0..s.rows()).map(|r| dot(f, s.row(r)));
            scores.push(match aggregation {
                StageAggregation::Max => sims.fold(f64::NEG_INFINITY, f64::max),
                StageAggregation::Mean => sims.sum::<f64>() / s.rows() as f64,
            });
        }
    }
    SimilarityMatrix::new(frames.rows(), stages.len(), scores)
}

/// `log softmax_k(scores[t][k] / temperature)` for every frame.
pub fn emission_log_probs(sim: &SimilarityMatrix, temperature: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(sim.frames * sim.stages);
    for t in 0..sim.frames {
        let row: Vec<f64> = sim.row(t).iter().map(|s| s / temperature).collect();
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|x| x - lse));
    }
    out
}

/// A monotone, surjective frame-to-stage labeling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentAssignment {
    pub labels: Vec<usize>,
    /// Frame range of each stage; together they partition `0..T`.
    pub segments: Vec<Range<usize>>,
    /// Total emission log-probability of the path.
    pub score: f64,
}

impl SegmentAssignment {
    /// Build from labels, checking they start at 0, end at `stages - 1`,
    /// and step by 0 or 1.
    pub fn from_labels(labels: Vec<usize>, stages: usize, score: f64) -> Result<Self> {
        let ok = !labels.is_empty()
            && labels[0] == 0
            && labels[labels.len() - 1] + 1 == stages
            && labels.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1);
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "labels {labels:?} are not a monotone cover of {stages} stages"
            )));
        }
        let mut segments = vec![0..0; stages];
        let mut start = 0;
        for t in 1..=labels.len() {
            if t == labels.len() || labels[t] != labels[t - 1] {
                segments[labels[t - 1]] = start..t;
                start = t;
            }
        }
        Ok(SegmentAssignment { labels, segments, score })
    }
}

/// Order-constrained decoding of the best monotone path.
///
/// `V[0][0] = e(0,0)`, `V[t][k] = max(V[t-1][k], V[t-1][k-1]) + e(t,k)`,
/// backtracked from `V[T-1][K-1]`. On equal predecessors the "stay" move
/// wins.
pub fn viterbi_decode(sim: &SimilarityMatrix, temperature: f64) -> Result<SegmentAssignment> {
    let (t_len, k_len) = (sim.frames, sim.stages);
    if k_len == 0 {
        return Err(Error::InvalidArgument("no stages".into()));
    }
    if t_len < k_len {
        return Err(Error::InvalidArgument(format!(
            "{t_len} frames cannot cover {k_len} stages"
        )));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {temperature}")));
    }
    let e = emission_log_probs(sim, temperature);
    let em = |t: usize, k: usize| e[t * k_len + k];

    let mut v = vec![f64::NEG_INFINITY; t_len * k_len];
    // true when the best predecessor of (t, k) is (t-1, k-1)
    let mut advanced = vec![false; t_len * k_len];
    v[0] = em(0, 0);
    for t in 1..t_len {
        for k in 0..k_len.min(t + 1) {
            let stay = v[(t - 1) * k_len + k];
            let adv = if k > 0 { v[(t - 1) * k_len + k - 1] } else { f64::NEG_INFINITY };
            // Scores equal up to rounding count as tied, and ties stay.
            let (best, from_adv) = if stay >= adv - TIE_EPS * adv.abs().max(1.0) {
                (stay, false)
            } else {
                (adv, true)
            };
            v[t * k_len + k] = best + em(t, k);
            advanced[t * k_len + k] = from_adv;
        }
    }

    let mut labels = vec![0; t_len];
    let mut k = k_len - 1;
    for t in (0..t_len).rev() {
        labels[t] = k;
        if t > 0 && advanced[t * k_len + k] {
            k -= 1;
        }
    }
    SegmentAssignment::from_labels(labels, k_len, v[(t_len - 1) * k_len + k_len - 1])
}

/// Per-frame best stage with no ordering constraint. Ties go to the lower stage.
pub fn argmax_labels(sim: &SimilarityMatrix) -> Vec<usize> {
    (0..sim.frames)
        .map(|t| {
            let row = sim.row(t);
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// `n` positions spread evenly over `positions` (endpoints included):
/// `positions[round(i * (U - 1) / (n - 1))]`, duplicates removed.
pub fn even_spaced(positions: &[usize], n: usize) -> Vec<usize> {
    let u = positions.len();
    if u <= n {
        return positions.to_vec();
    }
    if n == 1 {
        return vec![positions[((u - 1) as f64 / 2.0).round() as usize]];
    }
    let mut out: Vec<usize> = (0..n)
        .map(|i| positions[(i as f64 * (u - 1) as f64 / (n - 1) as f64).round() as usize])
        .collect();
    out.dedup();
    out
}

/// Frames of one video for one difference.
///
/// Takes the union of the frames labeled with any linked stage. A
/// single-frame difference gets the union frame with the highest linked
/// stage score (earliest on ties); a multi-frame difference gets `n_frames`
/// evenly spaced union frames. If no frame carries a linked label (possible
/// with unconstrained labelings), the single best-scoring frame is used.
pub fn frames_for_difference(
    labels: &[usize],
    sim: &SimilarityMatrix,
    linked_stages: &[usize],
    num_frames: FrameCount,
    n_frames: usize,
) -> Result<Vec<usize>> {
    if linked_stages.is_empty() {
        return Err(Error::Precondition("difference is not linked to any stage".into()));
    }
    if let Some(&k) = linked_stages.iter().find(|&&k| k >= sim.stages) {
        return Err(Error::InvalidArgument(format!("stage {k} out of range")));
    }
    let linked_score = |t: usize| {
        linked_stages
            .iter()
            .map(|&k| sim.get(t, k))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let best_of = |frames: &mut dyn Iterator<Item = usize>| {
        let mut best: Option<(usize, f64)> = None;
        for t in frames {
            let s = linked_score(t);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((t, s));
            }
        }
        best.map(|(t, _)| t)
    };
    let union: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, l)| linked_stages.contains(l))
        .map(|(t, _)| t)
        .collect();
    if union.is_empty() {
        let t = best_of(&mut (0..labels.len()))
            .ok_or_else(|| Error::Precondition("no frames".into()))?;
        return Ok(vec![t]);
    }
    Ok(match num_frames {
        FrameCount::One => vec![best_of(&mut union.iter().copied()).expect("non-empty")],
        FrameCount::GreaterThanOne => even_spaced(&union, n_frames.max(1)),
    })
}

/// Stable 64-bit seed from a base seed and labels.
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Uniformly random frames: one for single-frame differences, otherwise
/// `n_frames` distinct frames in temporal order.
pub fn random_frames(n_total: usize, num_frames: FrameCount, n_frames: usize, seed: u64) -> Vec<usize> {
    if n_total == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match num_frames {
        FrameCount::One => vec![rng.gen_range(0..n_total)],
        FrameCount::GreaterThanOne => {
            let k = n_frames.clamp(1, n_total);
            let mut v = sample(&mut rng, n_total, k).into_vec();
            v.sort_unstable();
            v
        }
    }
}

/// Frames from annotated keypoints (already mapped to clip positions).
///
/// The difference spans from its earliest to its latest keypoint. A
/// single-frame difference takes the middle of that span; a multi-frame
/// difference takes `n_frames` evenly spaced frames of the span, or a
/// window of `n_frames` centred on the keypoint when the span is one frame.
/// Returns `None` when no keypoint is annotated.
pub fn oracle_frames(keypoint_positions: &[usize], n_total: usize, num_frames: FrameCount, n_frames: usize) -> Option<Vec<usize>> {
    let lo = *keypoint_positions.iter().min()?;
    let hi = *keypoint_positions.iter().max()?;
    if n_total == 0 || hi >= n_total {
        return None;
    }
    Some(match num_frames {
        FrameCount::One => vec![((lo + hi) as f64 / 2.0).round() as usize],
        FrameCount::GreaterThanOne if hi > lo => {
            let span: Vec<usize> = (lo..=hi).collect();
            even_spaced(&span, n_frames.max(1))
        }
        FrameCount::GreaterThanOne => {
            let n = n_frames.clamp(1, n_total);
            let start = lo.saturating_sub(n / 2).min(n_total - n);
            (start..start + n).collect()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_hot(labels: &[usize], k: usize) -> SimilarityMatrix {
        let rows: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| (0..k).map(|j| if j == l { 1.0 } else { 0.0 }).collect())
            .collect();
        SimilarityMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn identical_vectors_score_one() {
        let v = vec![0.6f32, 0.8, 0.0];
        let frames = EmbeddingMatrix::from_rows(std::slice::from_ref(&v)).unwrap();
        let stage = EmbeddingMatrix::from_rows(&[vec![0.0, 0.0, 1.0], v]).unwrap();
        let s = score_frames(&frames, &[stage], StageAggregation::Max).unwrap();
        assert!((s.get(0, 0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_basis_gives_one_hot_rows() {
        let basis = |i: usize| {
            let mut v = vec![0.0f32; 4];
            v[i] = 1.0;
            v
        };
        let truth = [0usize, 0, 1, 2, 2];
        let frames = EmbeddingMatrix::from_rows(&truth.iter().map(|&k| basis(k)).collect::<Vec<_>>()).unwrap();
        let stages: Vec<_> = (0..3).map(|k| EmbeddingMatrix::from_rows(&[basis(k)]).unwrap()).collect();
        let s = score_frames(&frames, &stages, StageAggregation::Max).unwrap();
        assert_eq!(s, one_hot(&truth, 3));
    }

    #[test]
    fn unnormalized_inputs_are_normalized() {
        let frames = EmbeddingMatrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let stage = EmbeddingMatrix::from_rows(&[vec![0.0, 10.0]]).unwrap();
        let s = score_frames(&frames, &[stage], StageAggregation::Max).unwrap();
        assert!((s.get(0, 0) - 0.8).abs() < 1e-6);
    }

    #[test]
    fn dims_mismatch_is_an_error() {
        let frames = EmbeddingMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let stage = EmbeddingMatrix::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            score_frames(&frames, &[stage], StageAggregation::Max),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn mean_aggregation() {
        let frames = EmbeddingMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let stage = EmbeddingMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let s = score_frames(&frames, &[stage], StageAggregation::Mean).unwrap();
        assert!((s.get(0, 0) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn single_stage_labels_everything_zero() {
        let sim = SimilarityMatrix::from_rows(&[vec![0.3], vec![-0.2], vec![0.9]]).unwrap();
        let a = viterbi_decode(&sim, 0.1).unwrap();
        assert_eq!(a.labels, vec![0, 0, 0]);
        assert_eq!(a.segments, vec![0..3]);
    }

    #[test]
    fn one_hot_is_recovered_exactly() {
        let truth = vec![0, 0, 1, 1, 2, 2];
        let a = viterbi_decode(&one_hot(&truth, 3), 0.1).unwrap();
        assert_eq!(a.labels, truth);
        assert_eq!(a.segments, vec![0..2, 2..4, 4..6]);
        assert_eq!(argmax_labels(&one_hot(&truth, 3)), truth);
    }

    #[test]
    fn ties_prefer_stay() {
        let sim = SimilarityMatrix::new(6, 3, vec![0.5; 18]).unwrap();
        assert_eq!(viterbi_decode(&sim, 0.1).unwrap().labels, vec![0, 1, 2, 2, 2, 2]);
    }

    #[test]
    fn infeasible_and_bad_temperature() {
        let sim = SimilarityMatrix::new(2, 3, vec![0.0; 6]).unwrap();
        assert!(viterbi_decode(&sim, 0.1).is_err());
        let sim = SimilarityMatrix::new(3, 3, vec![0.0; 9]).unwrap();
        assert!(viterbi_decode(&sim, 0.0).is_err());
        assert_eq!(viterbi_decode(&sim, 1.0).unwrap().labels, vec![0, 1, 2]);
    }

    #[test]
    fn emissions_are_log_softmax() {
        let sim = SimilarityMatrix::from_rows(&[vec![0.2, 0.5, -0.1]]).unwrap();
        let e = emission_log_probs(&sim, 0.1);
        let z: f64 = [2.0f64, 5.0, -1.0].iter().map(|x| x.exp()).sum();
        for (k, x) in [2.0f64, 5.0, -1.0].iter().enumerate() {
            assert!((e[k] - (x.exp() / z).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_frame_picks_best_scored_frame_in_union() {
        let labels = [0, 0, 1, 1, 2, 2];
        let mut rows: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| (0..3).map(|k| if k == l { 0.5 } else { 0.0 }).collect())
            .collect();
        rows[3][1] = 0.9;
        let sim = SimilarityMatrix::from_rows(&rows).unwrap();
        assert_eq!(frames_for_difference(&labels, &sim, &[1], FrameCount::One, 4).unwrap(), vec![3]);
    }

    #[test]
    fn multi_frame_spacing_includes_endpoints() {
        let labels = [0, 0, 0, 1, 1, 2, 2, 2];
        let sim = SimilarityMatrix::new(8, 3, vec![0.0; 24]).unwrap();
        assert_eq!(
            frames_for_difference(&labels, &sim, &[0, 1, 2], FrameCount::GreaterThanOne, 4).unwrap(),
            vec![0, 2, 5, 7]
        );
    }

    #[test]
    fn small_union_is_returned_whole() {
        let labels = [0, 1, 1, 2];
        let sim = SimilarityMatrix::new(4, 3, vec![0.0; 12]).unwrap();
        assert_eq!(
            frames_for_difference(&labels, &sim, &[1], FrameCount::GreaterThanOne, 4).unwrap(),
            vec![1, 2]
        );
    }

    #[test]
    fn empty_union_falls_back_to_best_frame() {
        let labels = [0, 0, 0];
        let sim = SimilarityMatrix::from_rows(&[vec![0.9, 0.1], vec![0.8, 0.4], vec![0.9, 0.2]]).unwrap();
        assert_eq!(frames_for_difference(&labels, &sim, &[1], FrameCount::GreaterThanOne, 4).unwrap(), vec![1]);
    }

    #[test]
    fn random_frames_are_seeded() {
        let a = random_frames(10, FrameCount::One, 1, 7);
        assert_eq!(a, random_frames(10, FrameCount::One, 1, 7));
        assert!(a[0] < 10);
        let b = random_frames(10, FrameCount::GreaterThanOne, 4, 7);
        assert_eq!(b.len(), 4);
        assert!(b.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(random_frames(3, FrameCount::GreaterThanOne, 4, 1), vec![0, 1, 2]);
        assert_ne!(derive_seed(1, &["p", "d"]), derive_seed(1, &["pd", ""]));
    }

    #[test]
    fn oracle_spans_keypoints() {
        // "knees start to bend" at 2, "reaches lowest position" at 9
        assert_eq!(oracle_frames(&[2, 9], 12, FrameCount::GreaterThanOne, 4), Some(vec![2, 4, 7, 9]));
        assert_eq!(oracle_frames(&[2, 9], 12, FrameCount::One, 4), Some(vec![6]));
        assert_eq!(oracle_frames(&[5], 12, FrameCount::One, 4), Some(vec![5]));
        assert_eq!(oracle_frames(&[0], 12, FrameCount::GreaterThanOne, 4), Some(vec![0, 1, 2, 3]));
        assert_eq!(oracle_frames(&[11], 12, FrameCount::GreaterThanOne, 4), Some(vec![8, 9, 10, 11]));
        assert_eq!(oracle_frames(&[], 12, FrameCount::One, 4), None);
    }

    /// Every monotone surjective labeling, scored in time order.
    fn brute_force(e: &[f64], t_len: usize, k_len: usize) -> Vec<(Vec<usize>, f64)> {
        let mut out = Vec::new();
        let mut labels = vec![0usize; t_len];
        fn rec(t: usize, labels: &mut Vec<usize>, e: &[f64], k_len: usize, out: &mut Vec<(Vec<usize>, f64)>) {
            let t_len = labels.len();
            if t == t_len {
                if labels[t_len - 1] == k_len - 1 {
                    let mut acc = e[labels[0]];
                    for (i, &l) in labels.iter().enumerate().skip(1) {
                        acc += e[i * k_len + l];
                    }
                    out.push((labels.clone(), acc));
                }
                return;
            }
            let prev = labels[t - 1];
            for next in [prev, prev + 1] {
                if next < k_len {
                    labels[t] = next;
                    rec(t + 1, labels, e, k_len, out);
                }
            }
        }
        rec(1, &mut labels, e, k_len, &mut out);
        out
    }

    fn naive_log_softmax(sim: &SimilarityMatrix, tau: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for t in 0..sim.frames() {
            let z: f64 = sim.row(t).iter().map(|s| (s / tau).exp()).sum();
            out.extend(sim.row(t).iter().map(|s| ((s / tau).exp() / z).ln()));
        }
        out
    }

    fn sim_strategy() -> impl Strategy<Value = SimilarityMatrix> {
        (1usize..=5, 0usize..=6).prop_flat_map(|(k, extra)| {
            let t = k + extra;
            proptest::collection::vec(-1.0f64..1.0, t * k)
                .prop_map(move |v| SimilarityMatrix::new(t, k, v).unwrap())
        })
    }

    fn coarse_sim_strategy() -> impl Strategy<Value = SimilarityMatrix> {
        (1usize..=4, 0usize..=5).prop_flat_map(|(k, extra)| {
            let t = k + extra;
            proptest::collection::vec(0u8..3, t * k)
                .prop_map(move |v| SimilarityMatrix::new(t, k, v.iter().map(|&x| f64::from(x) * 0.5).collect()).unwrap())
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force(sim in sim_strategy()) {
            let e = emission_log_probs(&sim, DEFAULT_TEMPERATURE);
            let all = brute_force(&e, sim.frames(), sim.stages());
            prop_assert_eq!(all.len() as u64, binom(sim.frames() as u64 - 1, sim.stages() as u64 - 1));
            let best = all.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            let a = viterbi_decode(&sim, DEFAULT_TEMPERATURE).unwrap();
            prop_assert_eq!(a.score, best);
        }

        #[test]
        fn ties_resolve_to_latest_stay(sim in coarse_sim_strategy()) {
            let e = emission_log_probs(&sim, DEFAULT_TEMPERATURE);
            let all = brute_force(&e, sim.frames(), sim.stages());
            let best = all.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            // among optimal paths, the one whose labels read backwards are largest
            let expected = all
                .iter()
                .filter(|p| p.1 >= best - 1e-9)
                .map(|p| p.0.clone())
                .max_by(|x, y| x.iter().rev().cmp(y.iter().rev()))
                .unwrap();
            prop_assert_eq!(viterbi_decode(&sim, DEFAULT_TEMPERATURE).unwrap().labels, expected);
        }

        #[test]
        fn path_is_monotone_and_surjective(sim in sim_strategy(), tau in 0.01f64..2.0) {
            let a = viterbi_decode(&sim, tau).unwrap();
            prop_assert_eq!(a.labels.len(), sim.frames());
            prop_assert_eq!(a.labels[0], 0);
            prop_assert_eq!(*a.labels.last().unwrap(), sim.stages() - 1);
            prop_assert!(a.labels.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1));
            let covered: usize = a.segments.iter().map(|r| r.len()).sum();
            prop_assert_eq!(covered, sim.frames());
            prop_assert!(a.segments.iter().all(|r| !r.is_empty()));
        }

        #[test]
        fn emissions_agree_with_naive_formula(sim in sim_strategy(), tau in 0.05f64..2.0) {
            let a = emission_log_probs(&sim, tau);
            let b = naive_log_softmax(&sim, tau);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn scaling_scores_and_temperature_together_is_invariant(sim in sim_strategy(), c in 0.5f64..4.0) {
            let a = viterbi_decode(&sim, 0.1).unwrap();
            let b = viterbi_decode(&sim.scaled(c), 0.1 * c).unwrap();
            prop_assert!((a.score - b.score).abs() < 1e-9);
        }

        #[test]
        fn selected_frames_lie_in_linked_segments(sim in sim_strategy(), n in 1usize..6) {
            let a = viterbi_decode(&sim, 0.1).unwrap();
            let linked = vec![sim.stages() - 1];
            for fc in [FrameCount::One, FrameCount::GreaterThanOne] {
                let f = frames_for_difference(&a.labels, &sim, &linked, fc, n).unwrap();
                prop_assert!(!f.is_empty() && f.len() <= n.max(1));
                prop_assert!(f.iter().all(|&t| a.labels[t] == sim.stages() - 1));
                prop_assert!(f.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }

    fn binom(n: u64, k: u64) -> u64 {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }
}
