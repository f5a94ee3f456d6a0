//! Generate the offline synthetic benchmark, validate it and print split statistics.
//!
//! ```bash
//! cargo run --example synthetic_benchmark -- /tmp/viddiff-synth
//! ```

use std::path::PathBuf;

use viddiff::dataset::{compute_category_stats, compute_split_stats};
use viddiff::manifest::validate_benchmark;
use viddiff::synthetic::{generate, SyntheticConfig};

fn main() -> viddiff::error::Result<()> {
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("viddiff-synth"));
    let manifest = generate(&root, &SyntheticConfig::default())?;
    println!("{} actions, {} pairs, {} labels in {}", manifest.actions.len(), manifest.pairs.len(), manifest.labels.len(), root.display());

    let report = validate_benchmark(&manifest, Some(&root));
    println!("valid: {} ({} violations)", report.is_valid, report.violations.len());

    for s in compute_split_stats(&manifest) {
        let (a, b, c) = s.abc_distribution;
        println!("{:>6}: {} pairs, {:.1}s avg, A/B/C = {a}/{b}/{c}", s.split.as_str(), s.n_pairs, s.avg_video_length_s);
    }
    for c in compute_category_stats(&manifest).iter().filter(|c| c.pairs > 0) {
        println!("{}: {} activities, {} keypoints", c.category.as_str(), c.activities, c.timestamps);
    }
    Ok(())
}
