//! Single-call multimodal baselines: the prompts they send and how a messy
//! open-set reply is audited.
//!
//! ```bash
//! cargo run --example baseline_pathologies
//! ```

use serde_json::json;
use viddiff::baselines::{closed_prompt, parse_open_reply, preamble, VideoRepresentation};
use viddiff::synthetic::{generate, SyntheticConfig};

fn main() -> viddiff::error::Result<()> {
    let root = std::env::temp_dir().join("viddiff-baseline");
    let manifest = generate(&root, &SyntheticConfig::default())?;
    let pair = &manifest.pairs[0];
    let action = manifest.action(&pair.action_key).expect("action exists");

    let rep = preamble(VideoRepresentation::Frames, pair);
    println!("{}\n", closed_prompt(&rep, &action.description, manifest.differences(&pair.action_key)));

    // A reply with a repeat that flips its verdict, a video-specific
    // statement, a malformed entry and one entry too many.
    let reply = json!({
        "0": {"description": "the squat is deeper", "prediction": "a"},
        "1": {"description": "The squat is deeper.", "prediction": "b"},
        "2": {"description": "video A has a wider stance", "prediction": "a"},
        "3": {"description": "the hips rise first", "prediction": "a"},
        "4": {"description": "", "prediction": "b"},
        "5": {"description": "the bar path is straighter", "prediction": "b"},
    });
    let out = parse_open_reply(&pair.pair_id, Some(&reply), 4);
    for p in &out.predictions {
        println!("{} {:?} -> {}", p.diff_key, p.description.as_deref().unwrap_or(""), p.verdict.as_str());
    }
    println!("\n{}", serde_json::to_string_pretty(&out.pathologies)?);
    Ok(())
}
