//! Closed-set accuracy with an exact one-sided binomial test against chance.
//!
//! ```bash
//! cargo run --example closed_eval_significance
//! ```

use viddiff::evaluator::{binomial_tail, eval_closed, eval_per_difference, Tally};
use viddiff::model::{GroundTruthLabel, Label, Prediction, Split, Verdict};
use viddiff::report::per_difference_markdown;

fn main() -> viddiff::error::Result<()> {
    for (n, k) in [(10, 5), (12, 10), (12, 12), (100, 59)] {
        println!("P(X >= {k} | n = {n}) = {:.6}", binomial_tail(n, k));
    }
    let t = Tally::new(100, 59);
    println!("59/100: accuracy {:?}, significant {}", t.accuracy, t.significant);

    let mut gt = Vec::new();
    let mut preds = Vec::new();
    for i in 0..12 {
        let pair = format!("p{i}");
        let label = if i % 2 == 0 { Label::A } else { Label::B };
        gt.push(GroundTruthLabel { pair_id: pair.clone(), diff_key: "squat:0".into(), label });
        gt.push(GroundTruthLabel { pair_id: pair.clone(), diff_key: "squat:1".into(), label });
        preds.push(Prediction::closed(&pair, "squat:0", if label == Label::A { Verdict::A } else { Verdict::B }));
        preds.push(Prediction::closed(&pair, "squat:1", if i < 6 { Verdict::A } else { Verdict::B }));
    }
    let split = |id: &str| Some(if id < "p5" { Split::Easy } else { Split::Hard });
    let result = eval_closed(&preds, &gt, &split)?;
    println!("overall {}/{} p = {:.2e}", result.overall.correct, result.overall.n, result.overall.p_value);
    for (s, t) in &result.per_split {
        println!("  {}: {}/{}", s.as_str(), t.correct, t.n);
    }
    print!("\n{}", per_difference_markdown(&eval_per_difference(&preds, &gt)?));
    Ok(())
}
