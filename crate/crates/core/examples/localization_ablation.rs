//! Compare frame sources for the differencer: annotated keypoints, random
//! frames, per-frame argmax and the ordered decoder.
//!
//! ```bash
//! cargo run --example localization_ablation
//! ```

use viddiff::config::RunConfig;
use viddiff::localizer::LocalizerMode;
use viddiff::pipeline::run_pipeline;
use viddiff::report::ComparisonTable;
use viddiff::synthetic::{generate, SyntheticConfig};

fn main() -> viddiff::error::Result<()> {
    let base = std::env::temp_dir().join("viddiff-ablation");
    let _ = std::fs::remove_dir_all(&base);
    let data = base.join("data");
    // More pairs and noisier stage markers than the default.
    generate(&data, &SyntheticConfig { pairs_per_action: 6, distractor_rate: 0.3, ..SyntheticConfig::default() })?;

    let mut runs = Vec::new();
    for mode in [LocalizerMode::Oracle, LocalizerMode::Random, LocalizerMode::Argmax, LocalizerMode::Viterbi] {
        let cfg = RunConfig {
            dataset_root: data.clone(),
            out_dir: base.join(mode.as_str()),
            localizer: mode,
            ..RunConfig::default()
        };
        let out = run_pipeline(&cfg)?;
        runs.push((mode.as_str().to_string(), out.report.expect("evaluated")));
    }
    print!("{}", ComparisonTable::from_runs(&runs)?.to_markdown());
    Ok(())
}
