//! Full pipeline on the synthetic benchmark: every stage writes JSON under the
//! run directory, and a second run resumes from those files without new calls.
//!
//! ```bash
//! cargo run --example end_to_end -- /tmp/viddiff-run
//! ```

use std::path::PathBuf;

use viddiff::config::{RunConfig, Task};
use viddiff::pipeline::run_pipeline;
use viddiff::report::ComparisonTable;
use viddiff::synthetic::{generate, SyntheticConfig};

fn main() -> viddiff::error::Result<()> {
    let base = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("viddiff-run"));
    let _ = std::fs::remove_dir_all(&base);
    let data = base.join("data");
    generate(&data, &SyntheticConfig::default())?;

    for task in [Task::Closed, Task::Open] {
        let cfg = RunConfig {
            dataset_root: data.clone(),
            out_dir: base.join(format!("{task:?}").to_lowercase()),
            task,
            ..RunConfig::default()
        };
        let first = run_pipeline(&cfg)?;
        let again = run_pipeline(&cfg)?;
        println!(
            "{task:?}: {} calls, resumed with {} calls, identical results: {}",
            first.manifest.n_model_calls,
            again.manifest.n_model_calls,
            first.report == again.report
        );
        let report = first.report.expect("evaluated");
        print!("{}", ComparisonTable::from_runs(&[("staged".into(), report)])?.to_markdown());
        println!("artifacts in {}\n", first.out_dir.display());
    }
    Ok(())
}
