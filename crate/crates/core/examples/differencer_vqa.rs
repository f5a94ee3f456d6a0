//! Ask a vision-language model which of two frame sets shows more of a difference.
//!
//! ```bash
//! cargo run --example differencer_vqa
//! ```

use std::sync::Arc;

use viddiff::dataset::FrameStore;
use viddiff::differencer::{build_query, run_vqa};
use viddiff::model::Clip;
use viddiff::providers::{MockEmbedder, Models};
use viddiff::synthetic::{generate, SimulatedLlm, SimulatedVlm, SyntheticConfig};

fn main() -> viddiff::error::Result<()> {
    let root = std::env::temp_dir().join("viddiff-vqa");
    let manifest = generate(&root, &SyntheticConfig::default())?;
    let models = Models::new(Arc::new(SimulatedLlm), Arc::new(SimulatedVlm), Arc::new(MockEmbedder::default()));
    let store = FrameStore::new(&root);

    let truth = manifest.labels.iter().find(|l| l.label.is_positive()).expect("some A/B label");
    let pair = manifest.pair(&truth.pair_id).expect("pair exists");
    let action = manifest.action(&pair.action_key).expect("action exists");
    let diff = manifest.difference(&truth.diff_key).expect("difference exists");
    // Frames between the two keypoints that bound this difference.
    let span = |clip| {
        let kp: Vec<usize> = manifest
            .keypoints_for(&pair.pair_id, clip)
            .filter(|k| diff.keypoints.contains(&k.keypoint_name))
            .map(|k| k.frame_index)
            .collect();
        let (lo, hi) = (*kp.iter().min().unwrap(), *kp.iter().max().unwrap());
        (lo..=hi).step_by(2).take(4).collect::<Vec<usize>>()
    };
    let (fa, fb) = viddiff::differencer::equalize(&span(Clip::A), &span(Clip::B));

    let query = build_query(&store, pair, &action.description, diff, &fa, &fb)?;
    println!("{}\n", query.prompt());
    let forward = run_vqa(&models, &query)?;
    let backward = run_vqa(&models, &query.swapped())?;
    println!("A vs B: {}   B vs A: {}", forward.verdict.as_str(), backward.verdict.as_str());
    println!("ground truth: {:?}", truth.label);
    Ok(())
}
