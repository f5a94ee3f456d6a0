//! Propose differences, a stage transcript and stage links for one action.
//!
//! Uses the offline simulated model; swap in an `OpenAiCompatible` client
//! for a hosted model.
//!
//! ```bash
//! cargo run --example propose_stages
//! ```

use std::sync::Arc;

use viddiff::model::{ActionSpec, Category, Split};
use viddiff::proposer::{propose_open, ProposerConfig};
use viddiff::providers::{MockEmbedder, Models};
use viddiff::synthetic::{SimulatedLlm, SimulatedVlm};

fn main() -> viddiff::error::Result<()> {
    let models = Models::new(Arc::new(SimulatedLlm), Arc::new(SimulatedVlm), Arc::new(MockEmbedder::default()));
    let action = ActionSpec {
        action_key: "synth_0".into(),
        description: "synthetic exercise 0 performed in 3 stages".into(),
        category: Category::Fitness,
        split: Split::Easy,
        fps_policy: 4.0,
    };
    let proposal = propose_open(&models, &action, 4, &ProposerConfig::default())?;

    for d in &proposal.differences {
        println!("{} [{}]: {}", d.name, d.num_frames.as_str(), d.description);
    }
    for (k, s) in proposal.transcript.stages.iter().enumerate() {
        println!("stage {k} {}: {:?}", s.name, s.retrieval_strings);
    }
    for d in &proposal.differences {
        println!("{} -> stages {:?}", d.name, proposal.link.stages_for(&d.name));
    }
    println!("{} model calls", models.calls.len());
    Ok(())
}
