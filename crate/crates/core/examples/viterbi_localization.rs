//! Assign frames to ordered stages and pick frames for a difference.
//!
//! ```bash
//! cargo run --example viterbi_localization
//! ```

use viddiff::localizer::{argmax_labels, frames_for_difference, viterbi_decode, SimilarityMatrix, DEFAULT_TEMPERATURE};
use viddiff::model::FrameCount;

fn main() -> viddiff::error::Result<()> {
    // Eight frames, three stages. Frame 3 looks like stage 2 but sits
    // between stage 0 and stage 1 frames.
    let sim = SimilarityMatrix::from_rows(&[
        vec![0.30, 0.10, 0.05],
        vec![0.28, 0.12, 0.05],
        vec![0.25, 0.15, 0.10],
        vec![0.10, 0.12, 0.30],
        vec![0.10, 0.29, 0.12],
        vec![0.08, 0.26, 0.15],
        vec![0.05, 0.12, 0.31],
        vec![0.04, 0.10, 0.33],
    ])?;
    let argmax = argmax_labels(&sim);
    let decoded = viterbi_decode(&sim, DEFAULT_TEMPERATURE)?;
    println!("argmax : {argmax:?}");
    println!("viterbi: {:?} (log score {:.3})", decoded.labels, decoded.score);
    for (k, seg) in decoded.segments.iter().enumerate() {
        println!("  stage {k}: frames {seg:?}");
    }

    let many = frames_for_difference(&decoded.labels, &sim, &[1], FrameCount::GreaterThanOne, 2)?;
    let one = frames_for_difference(&decoded.labels, &sim, &[2], FrameCount::One, 4)?;
    println!("two frames from stage 1: {many:?}");
    println!("best single frame of stage 2: {one:?}");
    Ok(())
}
