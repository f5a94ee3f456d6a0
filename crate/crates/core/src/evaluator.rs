//! Scoring for both benchmark tasks.
//!
//! Closed: accuracy over A/B labels with a one-sided exact binomial test
//! against chance. Open: generated differences are matched to the labeled
//! ones by an LLM, matched statements that are phrased as the opposite of
//! the label are detected and their verdict swapped, and recall is the
//! share of positive labels that end up matched with the right verdict.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{GroundTruthLabel, Label, Prediction, Split};
use crate::prompts;
use crate::providers::Models;

pub const ALPHA: f64 = 0.05;
pub const FLIP_BATCH: usize = 6;

/// `P(X >= k)` for `X ~ Binomial(n, 1/2)`, summed in log space.
pub fn binomial_tail(n: u64, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    // ln C(n, i) for i = k..=n, built incrementally from ln C(n, 0) = 0
    let mut ln_c = 0.0f64;
    for i in 1..=k {
        ln_c += ((n - i + 1) as f64).ln() - (i as f64).ln();
    }
    let mut terms = Vec::with_capacity((n - k + 1) as usize);
    terms.push(ln_c);
    for i in k + 1..=n {
        ln_c += ((n - i + 1) as f64).ln() - (i as f64).ln();
        terms.push(ln_c);
    }
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
    (lse - n as f64 * std::f64::consts::LN_2).exp().min(1.0)
}

/// Counts with accuracy and significance against chance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub n: usize,
    pub correct: usize,
    /// `None` when `n == 0`.
    pub accuracy: Option<f64>,
    pub p_value: f64,
    pub significant: bool,
}

impl Tally {
    pub fn new(n: usize, correct: usize) -> Tally {
        assert!(correct <= n, "correct > n");
        let p_value = binomial_tail(n as u64, correct as u64);
        Tally {
            n,
            correct,
            accuracy: (n > 0).then(|| correct as f64 / n as f64),
            p_value,
            significant: n > 0 && p_value < ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedEvalResult {
    pub overall: Tally,
    pub per_split: BTreeMap<Split, Tally>,
    /// Labels with no prediction; counted as incorrect.
    pub missing: usize,
    /// Predictions whose verdict came from a parse failure.
    pub parse_failed: usize,
}

fn prediction_index(preds: &[Prediction]) -> Result<HashMap<(&str, &str), &Prediction>> {
    let mut index = HashMap::with_capacity(preds.len());
    for p in preds {
        if index.insert((p.pair_id.as_str(), p.diff_key.as_str()), p).is_some() {
            return Err(Error::Validation(format!(
                "duplicate prediction for ({}, {})",
                p.pair_id, p.diff_key
            )));
        }
    }
    Ok(index)
}

/// Closed-task accuracy. Labels of `C` are ignored; a label without a
/// prediction counts as wrong. `split_of` maps a pair id to its split.
pub fn eval_closed(
    preds: &[Prediction],
    gt: &[GroundTruthLabel],
    split_of: &dyn Fn(&str) -> Option<Split>,
) -> Result<ClosedEvalResult> {
    let index = prediction_index(preds)?;
    let mut counts: BTreeMap<Split, (usize, usize)> = BTreeMap::new();
    let (mut n, mut correct, mut missing, mut parse_failed) = (0, 0, 0, 0);
    for g in gt.iter().filter(|g| g.label.is_positive()) {
        let hit = match index.get(&(g.pair_id.as_str(), g.diff_key.as_str())) {
            Some(p) => {
                parse_failed += usize::from(p.parse_failed);
                p.verdict.agrees_with(g.label)
            }
            None => {
                missing += 1;
                false
            }
        };
        n += 1;
        correct += usize::from(hit);
        if let Some(s) = split_of(&g.pair_id) {
            let c = counts.entry(s).or_default();
            c.0 += 1;
            c.1 += usize::from(hit);
        }
    }
    Ok(ClosedEvalResult {
        overall: Tally::new(n, correct),
        per_split: counts.into_iter().map(|(s, (n, c))| (s, Tally::new(n, c))).collect(),
        missing,
        parse_failed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceLevelResult {
    pub diff_key: String,
    #[serde(flatten)]
    pub tally: Tally,
}

/// Closed accuracy grouped by difference key, in key order.
pub fn eval_per_difference(preds: &[Prediction], gt: &[GroundTruthLabel]) -> Result<Vec<DifferenceLevelResult>> {
    let index = prediction_index(preds)?;
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for g in gt.iter().filter(|g| g.label.is_positive()) {
        let hit = index
            .get(&(g.pair_id.as_str(), g.diff_key.as_str()))
            .is_some_and(|p| p.verdict.agrees_with(g.label));
        let c = counts.entry(g.diff_key.as_str()).or_default();
        c.0 += 1;
        c.1 += usize::from(hit);
    }
    Ok(counts
        .into_iter()
        .map(|(k, (n, c))| DifferenceLevelResult {
            diff_key: k.to_string(),
            tally: Tally::new(n, c),
        })
        .collect())
}

/// What the open-task prediction budget is 1.5x of.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetBase {
    /// Labels of A or B.
    #[default]
    Positives,
    /// Every labeled difference, including C.
    AllLabeled,
}

/// `ceil(1.5 * count)` of the pair's labels.
pub fn compute_n_diff_budget(gt_for_pair: &[GroundTruthLabel], base: BudgetBase) -> usize {
    let c = match base {
        BudgetBase::Positives => gt_for_pair.iter().filter(|g| g.label.is_positive()).count(),
        BudgetBase::AllLabeled => gt_for_pair.len(),
    };
    (3 * c).div_ceil(2)
}

/// A labeled difference as shown to the matcher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtDifference {
    pub diff_key: String,
    pub description: String,
    pub label: Label,
}

/// Which prediction (by index) each labeled difference was matched to.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairMatching {
    pub matches: BTreeMap<String, Option<usize>>,
    /// The matcher reused a prediction; later uses were dropped.
    pub injectivity_violation: bool,
    /// The matcher call failed; every difference is unmatched.
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

fn key_of(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Interpret a matcher reply. Keys of both dictionaries are positions
/// rendered as strings. A prediction used twice keeps its first use in
/// labeled-difference order.
pub fn parse_matching(reply: &Value, gt: &[GtDifference], n_preds: usize) -> PairMatching {
    let mut out = PairMatching::default();
    let mut used = HashSet::new();
    let obj = reply.as_object();
    if obj.is_none() {
        out.notes.push("matcher reply is not an object".into());
    }
    for (i, g) in gt.iter().enumerate() {
        let raw = obj.and_then(|o| o.get(&i.to_string())).and_then(key_of);
        let target = match raw.as_deref() {
            None => {
                if obj.is_some() {
                    out.notes.push(format!("no entry for {}", g.diff_key));
                }
                None
            }
            Some(s) if s.eq_ignore_ascii_case("none") || s.is_empty() => None,
            Some(s) => match s.parse::<usize>() {
                Ok(j) if j < n_preds => Some(j),
                _ => {
                    out.notes.push(format!("{}: unknown prediction key {s:?}", g.diff_key));
                    None
                }
            },
        };
        let target = match target {
            Some(j) if !used.insert(j) => {
                out.injectivity_violation = true;
                out.notes.push(format!("{}: prediction {j} already used", g.diff_key));
                None
            }
            t => t,
        };
        out.matches.insert(g.diff_key.clone(), target);
    }
    out
}

/// One matcher call per pair. `preds` must already be cut to the budget.
pub fn match_open(
    models: &Models,
    id: &str,
    action_description: &str,
    gt: &[GtDifference],
    preds: &[Prediction],
) -> PairMatching {
    let unmatched = || gt.iter().map(|g| (g.diff_key.clone(), None)).collect();
    if gt.is_empty() || preds.is_empty() {
        return PairMatching {
            matches: unmatched(),
            ..PairMatching::default()
        };
    }
    let dict0: serde_json::Map<String, Value> = gt
        .iter()
        .enumerate()
        .map(|(i, g)| (i.to_string(), Value::from(g.description.clone())))
        .collect();
    let dict1: serde_json::Map<String, Value> = preds
        .iter()
        .enumerate()
        .map(|(i, p)| (i.to_string(), Value::from(p.description.clone().unwrap_or_default())))
        .collect();
    let keys0: Vec<String> = dict0.keys().cloned().collect();
    let keys1: Vec<String> = dict1.keys().cloned().collect();
    let prompt = prompts::open_matching(
        action_description,
        &prompts::json_inline(&dict0),
        &prompts::json_inline(&dict1),
        &prompts::json_inline(&keys0),
        &prompts::json_inline(&keys1),
        keys0.last().expect("non-empty"),
    );
    match models.ask_json(format!("match:{id}"), prompt) {
        Ok(resp) => parse_matching(resp.parsed_json.as_ref().unwrap_or(&Value::Null), gt, preds.len()),
        Err(e) => PairMatching {
            matches: unmatched(),
            failed: true,
            notes: vec![format!("matcher failed: {e}")],
            ..PairMatching::default()
        },
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlipResult {
    pub flags: Vec<bool>,
    /// Batches whose reply was unusable twice; their pairs count as 0.
    pub failed_batches: Vec<usize>,
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn parse_flip_reply(v: &Value, n: usize) -> Option<Vec<bool>> {
    let arr = v.get("results")?.as_array()?;
    if arr.len() != n {
        return None;
    }
    arr.iter()
        .map(|x| match key_of(x).as_deref() {
            Some("0") => Some(false),
            Some("1") => Some(true),
            _ => None,
        })
        .collect()
}

/// Flag statement pairs that say opposite things, asking in batches of six.
/// Pairs whose texts are identical up to case and spacing are never sent.
pub fn detect_flips(models: &Models, id: &str, pairs: &[(String, String)]) -> FlipResult {
    let mut flags = vec![false; pairs.len()];
    let pending: Vec<usize> = (0..pairs.len())
        .filter(|&i| normalize(&pairs[i].0) != normalize(&pairs[i].1))
        .collect();
    let mut failed_batches = Vec::new();
    for (b, batch) in pending.chunks(FLIP_BATCH).enumerate() {
        let listed: Vec<[&str; 2]> = batch.iter().map(|&i| [pairs[i].0.as_str(), pairs[i].1.as_str()]).collect();
        let prompt = prompts::opposite_statements(&prompts::json_inline(&listed));
        let mut got = None;
        for attempt in 0..2 {
            if let Ok(resp) = models.ask_json(format!("flip:{id}:{b}:{attempt}"), prompt.clone()) {
                got = resp.parsed_json.as_ref().and_then(|v| parse_flip_reply(v, batch.len()));
            }
            if got.is_some() {
                break;
            }
        }
        match got {
            Some(fs) => {
                for (&i, f) in batch.iter().zip(fs) {
                    flags[i] = f;
                }
            }
            None => failed_batches.push(b),
        }
    }
    FlipResult { flags, failed_batches }
}

/// Open-task outcome for one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOpenResult {
    pub pair_id: String,
    pub budget: usize,
    /// Labeled difference key to matched prediction index.
    pub matches: BTreeMap<String, Option<usize>>,
    /// Labeled difference keys whose matched prediction was phrased as the opposite.
    pub flipped: BTreeSet<String>,
    pub n_positive: usize,
    pub n_correct: usize,
    /// Matching or flip detection failed or was repaired.
    pub flagged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Score one pair from a matching and the flip flags of its matched
/// statements. A positive label is recovered when it was matched and the
/// matched verdict, swapped if flipped, agrees with it.
pub fn score_open_pair(
    pair_id: &str,
    budget: usize,
    gt: &[GtDifference],
    preds: &[Prediction],
    matching: &PairMatching,
    flipped: &BTreeSet<String>,
) -> PairOpenResult {
    let mut n_positive = 0;
    let mut n_correct = 0;
    for g in gt.iter().filter(|g| g.label.is_positive()) {
        n_positive += 1;
        if let Some(Some(j)) = matching.matches.get(&g.diff_key) {
            let v = preds[*j].verdict;
            let v = if flipped.contains(&g.diff_key) { v.swapped() } else { v };
            n_correct += usize::from(v.agrees_with(g.label));
        }
    }
    PairOpenResult {
        pair_id: pair_id.to_string(),
        budget,
        matches: matching.matches.clone(),
        flipped: flipped.clone(),
        n_positive,
        n_correct,
        flagged: matching.failed || matching.injectivity_violation,
        notes: matching.notes.clone(),
    }
}

/// Match, detect flips, and score one pair. Predictions beyond the
/// budget are discarded first.
pub fn evaluate_open_pair(
    models: &Models,
    pair_id: &str,
    action_description: &str,
    gt: &[GtDifference],
    preds: &[Prediction],
    budget: usize,
) -> PairOpenResult {
    let preds = &preds[..preds.len().min(budget)];
    let matching = match_open(models, pair_id, action_description, gt, preds);
    let matched: Vec<(&GtDifference, usize)> = gt
        .iter()
        .filter_map(|g| matching.matches.get(&g.diff_key).copied().flatten().map(|j| (g, j)))
        .collect();
    let statements: Vec<(String, String)> = matched
        .iter()
        .map(|(g, j)| (g.description.clone(), preds[*j].description.clone().unwrap_or_default()))
        .collect();
    let flips = detect_flips(models, pair_id, &statements);
    let flipped = matched
        .iter()
        .zip(&flips.flags)
        .filter(|(_, f)| **f)
        .map(|((g, _), _)| g.diff_key.clone())
        .collect();
    let mut r = score_open_pair(pair_id, budget, gt, preds, &matching, &flipped);
    if !flips.failed_batches.is_empty() {
        r.flagged = true;
        r.notes.push(format!("flip batches {:?} unusable, treated as no flip", flips.failed_batches));
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recall {
    pub n_positive: usize,
    pub n_correct: usize,
    pub recall: Option<f64>,
}

impl Recall {
    pub fn new(n_positive: usize, n_correct: usize) -> Recall {
        Recall {
            n_positive,
            n_correct,
            recall: (n_positive > 0).then(|| n_correct as f64 / n_positive as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenEvalResult {
    pub overall: Recall,
    pub per_split: BTreeMap<Split, Recall>,
    pub pairs: Vec<PairOpenResult>,
}

/// Recall@N_diff: recovered positives over all positives, pooled over pairs.
pub fn eval_open(pairs: Vec<PairOpenResult>, split_of: &dyn Fn(&str) -> Option<Split>) -> OpenEvalResult {
    let mut per: BTreeMap<Split, (usize, usize)> = BTreeMap::new();
    let (mut p, mut c) = (0, 0);
    for r in &pairs {
        p += r.n_positive;
        c += r.n_correct;
        if let Some(s) = split_of(&r.pair_id) {
            let e = per.entry(s).or_default();
            e.0 += r.n_positive;
            e.1 += r.n_correct;
        }
    }
    OpenEvalResult {
        overall: Recall::new(p, c),
        per_split: per.into_iter().map(|(s, (p, c))| (s, Recall::new(p, c))).collect(),
        pairs,
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::model::Verdict;
    use crate::error::ProviderError;
    use crate::providers::{FnLlm, LlmRequest, MockEmbedder, RetryPolicy, ScriptedLlm, ScriptedVlm};

    fn models(llm: Arc<dyn crate::providers::LlmProvider>) -> Models {
        Models::new(llm, Arc::new(ScriptedVlm::new(Vec::<String>::new())), Arc::new(MockEmbedder::default()))
            .with_retry(RetryPolicy {
                base_backoff_ms: 0,
                max_backoff_ms: 0,
                ..RetryPolicy::default()
            })
    }

    fn gt(pair: &str, key: &str, label: Label) -> GroundTruthLabel {
        GroundTruthLabel {
            pair_id: pair.into(),
            diff_key: key.into(),
            label,
        }
    }

    fn pred(pair: &str, key: &str, v: Verdict) -> Prediction {
        Prediction::closed(pair, key, v)
    }

    fn open_pred(desc: &str, v: Verdict) -> Prediction {
        Prediction {
            description: Some(desc.into()),
            ..Prediction::closed("p", "", v)
        }
    }

    fn gtd(key: &str, desc: &str, label: Label) -> GtDifference {
        GtDifference {
            diff_key: key.into(),
            description: desc.into(),
            label,
        }
    }

    /// Exact `P(X >= k)` from integer binomial coefficients.
    fn exact_tail(n: u64, k: u64) -> f64 {
        let mut c = vec![1u128; 1];
        for _ in 0..n {
            let mut next = vec![1u128; c.len() + 1];
            for i in 1..c.len() {
                next[i] = c[i - 1] + c[i];
            }
            c = next;
        }
        let num: u128 = c[k as usize..].iter().sum();
        num as f64 / (1u128 << n) as f64
    }

    #[test]
    fn binomial_matches_integer_oracle() {
        for n in 0..=20 {
            for k in 0..=n {
                let d = (binomial_tail(n, k) - exact_tail(n, k)).abs();
                assert!(d <= 1e-12, "n={n} k={k} d={d}");
            }
        }
    }

    #[test]
    fn known_tails() {
        assert!((binomial_tail(10, 5) - 638.0 / 1024.0).abs() < 1e-12);
        assert!((binomial_tail(12, 10) - 79.0 / 4096.0).abs() < 1e-12);
        assert!((binomial_tail(12, 12) - 1.0 / 4096.0).abs() < 1e-15);
        assert_eq!(binomial_tail(1, 1), 0.5);
        assert!(Tally::new(12, 10).significant);
        assert!(!Tally::new(1, 1).significant);
    }

    #[test]
    fn closed_accuracy_counts_missing_as_wrong() {
        let labels: Vec<_> = (0..10)
            .map(|i| gt("p", &format!("k:{i}"), if i % 2 == 0 { Label::A } else { Label::B }))
            .chain([gt("p", "k:c", Label::C)])
            .collect();
        let preds: Vec<_> = (0..9).map(|i| pred("p", &format!("k:{i}"), if i < 5 { Verdict::A } else { Verdict::C })).collect();
        let r = eval_closed(&preds, &labels, &|_| Some(Split::Easy)).unwrap();
        assert_eq!((r.overall.n, r.overall.correct, r.missing), (10, 3, 1));
        assert_eq!(r.per_split[&Split::Easy].n, 10);
    }

    #[test]
    fn closed_empty_and_duplicates() {
        let r = eval_closed(&[], &[], &|_| None).unwrap();
        assert_eq!(r.overall.accuracy, None);
        assert!(!r.overall.significant);
        let dup = [pred("p", "k", Verdict::A), pred("p", "k", Verdict::B)];
        assert!(matches!(eval_closed(&dup, &[], &|_| None), Err(Error::Validation(_))));
    }

    #[test]
    fn closed_ten_of_ten_half() {
        let labels: Vec<_> = (0..10).map(|i| gt("p", &format!("k:{i}"), Label::A)).collect();
        let preds: Vec<_> = (0..10).map(|i| pred("p", &format!("k:{i}"), if i < 5 { Verdict::A } else { Verdict::B })).collect();
        let r = eval_closed(&preds, &labels, &|_| None).unwrap();
        assert_eq!(r.overall.accuracy, Some(0.5));
        assert!((r.overall.p_value - 0.623).abs() < 1e-3);
    }

    #[test]
    fn per_difference_groups_by_key() {
        let mut labels = Vec::new();
        let mut preds = Vec::new();
        for i in 0..12 {
            let p = format!("p{i}");
            labels.push(gt(&p, "squat:0", Label::B));
            preds.push(pred(&p, "squat:0", if i < 10 { Verdict::B } else { Verdict::A }));
        }
        labels.push(gt("p0", "squat:1", Label::A));
        preds.push(pred("p0", "squat:1", Verdict::A));
        let r = eval_per_difference(&preds, &labels).unwrap();
        assert_eq!(r.len(), 2);
        assert!((r[0].tally.p_value - 0.0193).abs() < 1e-4 && r[0].tally.significant);
        assert!(!r[1].tally.significant);
    }

    #[test]
    fn budget() {
        let labels = |n: usize| (0..n).map(|i| gt("p", &i.to_string(), Label::A)).collect::<Vec<_>>();
        assert_eq!(compute_n_diff_budget(&labels(8), BudgetBase::Positives), 12);
        assert_eq!(compute_n_diff_budget(&labels(5), BudgetBase::Positives), 8);
        assert_eq!(compute_n_diff_budget(&labels(0), BudgetBase::Positives), 0);
        let mut l = labels(2);
        l.push(gt("p", "c", Label::C));
        assert_eq!(compute_n_diff_budget(&l, BudgetBase::Positives), 3);
        assert_eq!(compute_n_diff_budget(&l, BudgetBase::AllLabeled), 5);
    }

    #[test]
    fn matching_is_parsed_and_kept_injective() {
        let g = [gtd("k:0", "x", Label::A), gtd("k:1", "y", Label::B), gtd("k:2", "z", Label::A)];
        let reply = serde_json::json!({"0": "1", "1": "1", "2": "None"});
        let m = parse_matching(&reply, &g, 2);
        assert_eq!(m.matches["k:0"], Some(1));
        assert_eq!(m.matches["k:1"], None);
        assert!(m.injectivity_violation);
        let m = parse_matching(&serde_json::json!({"0": 0, "1": "7"}), &g, 2);
        assert_eq!(m.matches["k:0"], Some(0));
        assert_eq!(m.matches["k:1"], None);
        assert!(!m.injectivity_violation);
    }

    #[test]
    fn matcher_sees_both_dictionaries() {
        let llm = Arc::new(ScriptedLlm::new([r#"{"0": "0"}"#]));
        let m = models(llm.clone());
        let g = [gtd("squat:3", "the feet stance is wider", Label::A)];
        let p = [open_pred("the legs are spread wider apart", Verdict::A)];
        let r = match_open(&m, "p", "a squat", &g, &p);
        assert_eq!(r.matches["squat:3"], Some(0));
        let prompt = &llm.received()[0].prompt;
        assert!(prompt.contains(r#"Dictionary 0: {"0": "the feet stance is wider"}"#));
        assert!(prompt.contains(r#"Dictionary 1: {"0": "the legs are spread wider apart"}"#));
        assert!(prompt.contains("\"0\" : \"0\"\n}"));
    }

    #[test]
    fn no_predictions_or_failure_means_unmatched() {
        let m = models(Arc::new(FnLlm(|_: &LlmRequest| Err(ProviderError::Transport("x".into())))));
        let g = [gtd("k:0", "x", Label::A)];
        assert_eq!(match_open(&m, "p", "a", &g, &[]).matches["k:0"], None);
        let r = match_open(&m, "p", "a", &g, &[open_pred("x", Verdict::A)]);
        assert!(r.failed);
        assert_eq!(r.matches["k:0"], None);
    }

    #[test]
    fn flips_are_batched_by_six() {
        let llm = Arc::new(FnLlm(|req: &LlmRequest| {
            let n = req.prompt.matches("[\"").count();
            let vals: Vec<&str> = (0..n).map(|i| if i == 0 { "1" } else { "0" }).collect();
            Ok(serde_json::json!({ "results": vals }).to_string())
        }));
        let m = models(llm);
        let pairs: Vec<(String, String)> = (0..14).map(|i| (format!("s{i}"), format!("t{i}"))).collect();
        let r = detect_flips(&m, "p", &pairs);
        assert_eq!(m.calls.len(), 3);
        assert_eq!(r.flags.iter().filter(|f| **f).count(), 3);
        assert!(r.flags[0] && r.flags[6] && r.flags[12]);
    }

    #[test]
    fn identical_statements_are_not_flips() {
        let m = models(Arc::new(ScriptedLlm::new(Vec::<String>::new())));
        let r = detect_flips(&m, "p", &[("the arm is bent".into(), "The arm  is bent".into())]);
        assert_eq!(r.flags, vec![false]);
        assert_eq!(m.calls.len(), 0);
    }

    #[test]
    fn malformed_flip_batch_retries_once_then_zero() {
        let llm = Arc::new(ScriptedLlm::new([r#"{"results": ["1", "1"]}"#, r#"{"results": []}"#]));
        let m = models(llm.clone());
        let r = detect_flips(&m, "p", &[("the arms are more straight".into(), "the arms are more bent".into())]);
        assert_eq!(r.flags, vec![false]);
        assert_eq!(r.failed_batches, vec![0]);
        assert_eq!(llm.remaining(), 0);
    }

    #[test]
    fn hand_traced_recall_one_third() {
        // 3 positives; k:0 matched and right, but its statement is flipped so it
        // ends up wrong; k:1 matched, wrong verdict, flipped to right; k:2 unmatched.
        let g = [
            gtd("k:0", "the squat is deeper", Label::A),
            gtd("k:1", "the arms are more straight", Label::B),
            gtd("k:2", "the stance is wider", Label::A),
        ];
        let preds = [open_pred("the squat is shallower", Verdict::A), open_pred("the arms are more bent", Verdict::A)];
        let llm = Arc::new(FnLlm(|req: &LlmRequest| {
            if req.id.starts_with("match:") {
                Ok(r#"{"0": "0", "1": "1", "2": "None"}"#.into())
            } else {
                Ok(r#"{"results": ["1", "1"]}"#.into())
            }
        }));
        let r = evaluate_open_pair(&models(llm), "p", "a squat", &g, &preds, 5);
        assert_eq!((r.n_positive, r.n_correct), (3, 1));
        let agg = eval_open(vec![r], &|_| Some(Split::Easy));
        assert!((agg.overall.recall.unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn budget_truncates_before_matching() {
        let llm = Arc::new(ScriptedLlm::new([r#"{"0": "0"}"#]));
        let m = models(llm.clone());
        let preds: Vec<_> = (0..5).map(|i| open_pred(&format!("d{i}"), Verdict::A)).collect();
        evaluate_open_pair(&m, "p", "a", &[gtd("k", "d0", Label::A)], &preds, 2);
        assert!(llm.received()[0].prompt.contains(r#"Dictionary 1: {"0": "d0", "1": "d1"}"#));
    }

    fn greedy_matcher() -> Models {
        models(Arc::new(FnLlm(|req: &LlmRequest| {
            if !req.id.starts_with("match:") {
                return Ok(r#"{"results": []}"#.into());
            }
            let grab = |tag: &str| -> serde_json::Map<String, Value> {
                let start = req.prompt.find(tag).unwrap() + tag.len();
                let line = req.prompt[start..].lines().next().unwrap();
                serde_json::from_str(line).unwrap()
            };
            let d0 = grab("Dictionary 0: ");
            let d1 = grab("Dictionary 1: ");
            let mut used = HashSet::new();
            let mut out = serde_json::Map::new();
            for (k, v) in &d0 {
                let hit = d1.iter().find(|(j, w)| *w == v && !used.contains(*j)).map(|(j, _)| j.clone());
                if let Some(j) = &hit {
                    used.insert(j.clone());
                }
                out.insert(k.clone(), Value::from(hit.unwrap_or_else(|| "None".into())));
            }
            Ok(Value::Object(out).to_string())
        })))
    }

    proptest! {
        #[test]
        fn swapping_videos_preserves_accuracy(
            rows in proptest::collection::vec((0u8..2, 0u8..3), 1..40)
        ) {
            let labels: Vec<_> = rows.iter().enumerate()
                .map(|(i, (l, _))| gt("p", &i.to_string(), if *l == 0 { Label::A } else { Label::B }))
                .collect();
            let preds: Vec<_> = rows.iter().enumerate()
                .map(|(i, (_, v))| pred("p", &i.to_string(), [Verdict::A, Verdict::B, Verdict::C][*v as usize]))
                .collect();
            let a = eval_closed(&preds, &labels, &|_| None).unwrap();
            let sl: Vec<_> = labels.iter().map(|g| g.swapped()).collect();
            let sp: Vec<_> = preds.iter().map(|p| p.swapped()).collect();
            let b = eval_closed(&sp, &sl, &|_| None).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn recall_grows_with_budget(
            gt_ids in proptest::collection::vec(0u8..6, 1..6),
            pred_ids in proptest::collection::vec((0u8..8, any::<bool>()), 0..10),
            budget in 0usize..10,
        ) {
            let g: Vec<_> = gt_ids.iter().enumerate()
                .map(|(i, d)| gtd(&format!("k:{i}"), &format!("d{d}"), if i % 2 == 0 { Label::A } else { Label::B }))
                .collect();
            let p: Vec<_> = pred_ids.iter()
                .map(|(d, a)| open_pred(&format!("d{d}"), if *a { Verdict::A } else { Verdict::B }))
                .collect();
            let m = greedy_matcher();
            let small = evaluate_open_pair(&m, "p", "a", &g, &p, budget);
            let big = evaluate_open_pair(&m, "p", "a", &g, &p, budget + 1);
            prop_assert!(small.n_correct <= big.n_correct);
            prop_assert!(big.n_correct <= big.n_positive);
        }
    }
}
