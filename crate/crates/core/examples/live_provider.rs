//! One differencing query against an OpenAI-compatible chat endpoint.
//!
//! Needs `VIDDIFF_VLM_ENDPOINT`, `VIDDIFF_VLM_MODEL` and `VIDDIFF_VLM_API_KEY`;
//! without them it explains what is missing and exits.
//!
//! ```bash
//! VIDDIFF_VLM_ENDPOINT=https://api.openai.com/v1 VIDDIFF_VLM_MODEL=gpt-4o \
//!   VIDDIFF_VLM_API_KEY=... cargo run --example live_provider
//! ```

use std::sync::Arc;

use viddiff::dataset::FrameStore;
use viddiff::differencer::{build_query, run_vqa};
use viddiff::providers::{MockEmbedder, Models, OpenAiCompatible};
use viddiff::synthetic::{generate, SimulatedLlm, SyntheticConfig};

fn main() -> viddiff::error::Result<()> {
    let (Ok(endpoint), Ok(model)) = (std::env::var("VIDDIFF_VLM_ENDPOINT"), std::env::var("VIDDIFF_VLM_MODEL")) else {
        println!("set VIDDIFF_VLM_ENDPOINT and VIDDIFF_VLM_MODEL (and VIDDIFF_VLM_API_KEY) to run this example");
        return Ok(());
    };
    let vlm = OpenAiCompatible::new(endpoint, model, std::env::var("VIDDIFF_VLM_API_KEY").ok())?;
    let models = Models::new(Arc::new(SimulatedLlm), Arc::new(vlm), Arc::new(MockEmbedder::default()));

    let root = std::env::temp_dir().join("viddiff-live");
    let manifest = generate(&root, &SyntheticConfig::default())?;
    let pair = &manifest.pairs[0];
    let action = manifest.action(&pair.action_key).expect("action exists");
    let diff = &manifest.differences(&pair.action_key)[0];
    let q = build_query(&FrameStore::new(&root), pair, &action.description, diff, &[0, 4, 8], &[0, 4, 8])?;
    let pred = run_vqa(&models, &q)?;
    println!("verdict {} (parse failed: {})", pred.verdict.as_str(), pred.parse_failed);
    for c in models.calls.snapshot() {
        println!("{c:?}");
    }
    Ok(())
}
