//! Open-set recall: match predicted statements to annotated differences, detect
//! statements phrased as opposites, then score.
//!
//! The matcher and flip detector are an LLM; here a scripted one stands in.
//!
//! ```bash
//! cargo run --example open_eval_recall
//! ```

use std::sync::Arc;

use viddiff::evaluator::{eval_open, evaluate_open_pair, GtDifference};
use viddiff::model::{Label, Prediction, Split, Verdict};
use viddiff::providers::{MockEmbedder, Models, ScriptedLlm, ScriptedVlm};

fn main() -> viddiff::error::Result<()> {
    let gt = vec![
        GtDifference { diff_key: "squat:0".into(), description: "the squat is deeper".into(), label: Label::A },
        GtDifference { diff_key: "squat:1".into(), description: "the stance is wider".into(), label: Label::B },
        GtDifference { diff_key: "squat:2".into(), description: "the back is straighter".into(), label: Label::A },
    ];
    let pred = |k: &str, d: &str, v| Prediction { description: Some(d.into()), ..Prediction::closed("p0", k, v) };
    let preds = vec![
        pred("open:0", "the squat is shallower", Verdict::B),
        pred("open:1", "the feet are further apart", Verdict::A),
        pred("open:2", "the knees track outward", Verdict::A),
    ];
    // Matching: gt 0 <-> pred 0, gt 1 <-> pred 1, gt 2 unmatched.
    // Flips: pred 0 is the opposite statement of gt 0; pred 1 is not.
    let llm = ScriptedLlm::new([r#"{"0": "0", "1": "1", "2": "None"}"#, r#"{"results": [1, 0]}"#]);
    let models = Models::new(Arc::new(llm), Arc::new(ScriptedVlm::new(Vec::<String>::new())), Arc::new(MockEmbedder::default()));

    let pair = evaluate_open_pair(&models, "p0", "a squat", &gt, &preds, 3);
    println!("matches {:?}, flipped {:?}", pair.matches, pair.flipped);
    println!("correct {}/{} positives", pair.n_correct, pair.n_positive);
    let all = eval_open(vec![pair], &|_| Some(Split::Easy));
    println!("recall {:?}", all.overall.recall);
    Ok(())
}
