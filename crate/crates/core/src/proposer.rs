//! Stage 1: candidate differences, a sub-action transcript with retrieval
//! strings, and the stage-to-difference links, from three LLM calls.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{diff_key, mentions_specific_video, ActionSpec, Difference, FrameCount};
use crate::prompts;
use crate::providers::Models;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposerConfig {
    pub n_retrieval_keys: usize,
    pub max_stages: usize,
}

impl Default for ProposerConfig {
    fn default() -> Self {
        ProposerConfig {
            n_retrieval_keys: 5,
            max_stages: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub description: String,
    pub retrieval_strings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTranscript {
    pub action_key: String,
    pub stages: Vec<Stage>,
}

impl StageTranscript {
    /// Every violated transcript invariant, empty when valid.
    pub fn violations(&self, cfg: &ProposerConfig) -> Vec<String> {
        let mut out = Vec::new();
        if self.stages.is_empty() || self.stages.len() > cfg.max_stages {
            out.push(format!(
                "transcript has {} stages, expected 1..={}",
                self.stages.len(),
                cfg.max_stages
            ));
        }
        let mut names = HashSet::new();
        for s in &self.stages {
            if s.name.trim().is_empty() {
                out.push("stage with empty name".into());
            } else if !names.insert(s.name.as_str()) {
                out.push(format!("duplicate stage name {:?}", s.name));
            }
            if s.retrieval_strings.len() < cfg.n_retrieval_keys {
                out.push(format!(
                    "stage {:?} has {} retrieval strings, need {}",
                    s.name,
                    s.retrieval_strings.len(),
                    cfg.n_retrieval_keys
                ));
            }
            if let Some(bad) = s
                .retrieval_strings
                .iter()
                .find(|r| !r.trim_start().to_lowercase().starts_with("a photo of"))
            {
                out.push(format!("retrieval string {bad:?} does not start with \"A photo of\""));
            }
        }
        out
    }

    pub fn stage_index(&self, name: &str) -> Option<usize> {
        self.stages.iter().position(|s| s.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLink {
    pub stage: String,
    pub differences: Vec<String>,
}

/// Which differences are visible in which stages, keyed by names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDifferenceLink {
    /// In transcript order.
    pub links: Vec<StageLink>,
    /// Differences the model left unmapped, linked to every stage instead.
    pub fallback: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl StageDifferenceLink {
    /// Indices of the stages a difference is linked to.
    pub fn stages_for(&self, diff_name: &str) -> Vec<usize> {
        self.links
            .iter()
            .enumerate()
            .filter(|(_, l)| l.differences.iter().any(|d| d == diff_name))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_flagged(&self, diff_name: &str) -> bool {
        self.fallback.iter().any(|d| d == diff_name)
    }
}

/// Outcome of the difference-proposal call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceProposal {
    pub differences: Vec<Difference>,
    pub requested: usize,
    /// `requested - differences.len()`.
    pub shortfall: usize,
    pub duplicates_removed: usize,
    pub video_specific_removed: usize,
    pub malformed_removed: usize,
    pub reasked: bool,
}

/// Everything stage 1 produces for one action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub action_key: String,
    pub differences: Vec<Difference>,
    pub transcript: StageTranscript,
    pub link: StageDifferenceLink,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal_stats: Option<DifferenceProposal>,
}

const REASK_VIDEO_AGNOSTIC: &str =
    "\n\nReminder: no 'description' may refer to a specific video such as 'video A' or 'video B'.";

/// Case-folded, punctuation-stripped, whitespace-collapsed text.
pub fn normalize_statement(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Values of a `{"0": ..., "1": ...}` object in numeric key order, or the
/// elements of an array.
pub(crate) fn indexed_values(v: &Value) -> Vec<&Value> {
    match v {
        Value::Array(items) => items.iter().collect(),
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|(a, _), (b, _)| match (a.parse::<u64>(), b.parse::<u64>()) {
                (Ok(x), Ok(y)) => x.cmp(&y),
                (Ok(_), Err(_)) => std::cmp::Ordering::Less,
                (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
                _ => a.cmp(b),
            });
            entries.into_iter().map(|(_, v)| v).collect()
        }
        _ => Vec::new(),
    }
}

fn str_field<'a>(v: &'a Value, key: &str) -> Option<&'a str> {
    v.get(key).and_then(Value::as_str).map(str::trim).filter(|s| !s.is_empty())
}

struct RawDifference {
    name: String,
    description: String,
    query_string: String,
    num_frames: FrameCount,
}

fn parse_differences(v: &Value) -> (Vec<RawDifference>, usize) {
    let mut out = Vec::new();
    let mut malformed = 0;
    for item in indexed_values(v) {
        let parsed = (|| {
            let description = str_field(item, "description")?.to_string();
            Some(RawDifference {
                name: str_field(item, "name").unwrap_or(&description).to_string(),
                query_string: str_field(item, "query_string").unwrap_or(&description).to_string(),
                num_frames: item
                    .get("num_frames")
                    .and_then(|n| match n {
                        Value::String(s) => FrameCount::parse(s),
                        Value::Number(n) if n.as_u64() == Some(1) => Some(FrameCount::One),
                        _ => None,
                    })?,
                description,
            })
        })();
        match parsed {
            Some(d) => out.push(d),
            None => malformed += 1,
        }
    }
    (out, malformed)
}

/// Ask for up to `n_differences` candidate differences for an action.
pub fn propose_differences(models: &Models, action: &ActionSpec, n_differences: usize) -> Result<DifferenceProposal> {
    if n_differences == 0 {
        return Err(Error::Precondition("n_differences must be >= 1".into()));
    }
    let prompt = prompts::proposer_differences(&action.description, n_differences);
    let stage_err = |e: crate::error::ProviderError| Error::Stage {
        stage: "propose_differences",
        message: format!("{}: {e}", action.action_key),
    };
    let id = format!("propose/{}/differences", action.action_key);
    let reply = models.ask_json(&id, &prompt).map_err(stage_err)?;
    let (mut raw, mut malformed) = parse_differences(reply.parsed_json.as_ref().expect("json requested"));

    let mut reasked = false;
    if raw.iter().any(|d| mentions_specific_video(&d.description)) {
        reasked = true;
        let again = models
            .ask_json(format!("{id}/reask"), format!("{prompt}{REASK_VIDEO_AGNOSTIC}"))
            .map_err(stage_err)?;
        (raw, malformed) = parse_differences(again.parsed_json.as_ref().expect("json requested"));
    }
    let before = raw.len();
    raw.retain(|d| !mentions_specific_video(&d.description));
    let video_specific_removed = before - raw.len();

    let mut seen = HashSet::new();
    let before = raw.len();
    raw.retain(|d| seen.insert(normalize_statement(&d.description)));
    let duplicates_removed = before - raw.len();
    raw.truncate(n_differences);

    let mut names = HashSet::new();
    let differences: Vec<Difference> = raw
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            let mut name = d.name.clone();
            let mut k = 2;
            while !names.insert(name.clone()) {
                name = format!("{}_{k}", d.name);
                k += 1;
            }
            Difference {
                diff_key: diff_key(&action.action_key, i),
                name,
                description: d.description,
                query_string: d.query_string,
                num_frames: d.num_frames,
                keypoints: Vec::new(),
            }
        })
        .collect();
    Ok(DifferenceProposal {
        requested: n_differences,
        shortfall: n_differences - differences.len(),
        differences,
        duplicates_removed,
        video_specific_removed,
        malformed_removed: malformed,
        reasked,
    })
}

fn parse_transcript(action_key: &str, v: &Value) -> StageTranscript {
    let stages_v = match v {
        Value::Array(_) => v,
        _ => v.get("stages").unwrap_or(&Value::Null),
    };
    let stages = stages_v
        .as_array()
        .map(|items| {
            items
                .iter()
                .map(|s| Stage {
                    name: s
                        .get("name")
                        .or_else(|| s.get("name "))
                        .and_then(Value::as_str)
                        .unwrap_or_default()
                        .trim()
                        .to_string(),
                    description: str_field(s, "description").unwrap_or_default().to_string(),
                    retrieval_strings: s
                        .get("retrieval_strings")
                        .and_then(Value::as_array)
                        .map(|a| {
                            a.iter()
                                .filter_map(Value::as_str)
                                .map(|x| x.trim().to_string())
                                .filter(|x| !x.is_empty())
                                .collect()
                        })
                        .unwrap_or_default(),
                })
                .collect()
        })
        .unwrap_or_default();
    StageTranscript {
        action_key: action_key.to_string(),
        stages,
    }
}

/// Ask for the sub-action transcript; one re-ask on an invalid reply.
pub fn propose_transcript(models: &Models, action: &ActionSpec, cfg: &ProposerConfig) -> Result<StageTranscript> {
    let prompt = prompts::proposer_stages(&action.description, cfg.n_retrieval_keys);
    let id = format!("propose/{}/stages", action.action_key);
    let mut last = Vec::new();
    for attempt in 0..2 {
        let (id, prompt) = if attempt == 0 {
            (id.clone(), prompt.clone())
        } else {
            (
                format!("{id}/reask"),
                format!("{prompt}\n\nYour previous answer was invalid: {}.", last.join("; ")),
            )
        };
        let reply = models.ask_json(id, prompt).map_err(|e| Error::Stage {
            stage: "propose_transcript",
            message: format!("{}: {e}", action.action_key),
        })?;
        let t = parse_transcript(&action.action_key, reply.parsed_json.as_ref().expect("json requested"));
        last = t.violations(cfg);
        if last.is_empty() {
            return Ok(t);
        }
    }
    Err(Error::Stage {
        stage: "propose_transcript",
        message: format!("{}: {}", action.action_key, last.join("; ")),
    })
}

fn parse_links(v: &Value) -> Vec<(String, Vec<String>)> {
    let names = |x: &Value| -> Vec<String> {
        x.as_array()
            .map(|a| a.iter().filter_map(Value::as_str).map(|s| s.trim().to_string()).collect())
            .unwrap_or_default()
    };
    match v {
        Value::Object(map) => map.iter().map(|(k, x)| (k.trim().to_string(), names(x))).collect(),
        Value::Array(items) => items
            .iter()
            .flat_map(|item| match item {
                Value::Object(m) if m.contains_key("stage") || m.contains_key("name") => {
                    let stage = m
                        .get("stage")
                        .or_else(|| m.get("name"))
                        .and_then(Value::as_str)
                        .unwrap_or_default()
                        .trim()
                        .to_string();
                    let diffs = m
                        .get("differences")
                        .or_else(|| m.get("difference"))
                        .map(&names)
                        .unwrap_or_default();
                    vec![(stage, diffs)]
                }
                Value::Object(m) => m.iter().map(|(k, x)| (k.trim().to_string(), names(x))).collect(),
                _ => vec![],
            })
            .collect(),
        _ => Vec::new(),
    }
}

/// Ask which stages each difference is visible in. Always returns a total
/// mapping: differences the model leaves out are linked to every stage.
pub fn link_differences(
    models: &Models,
    action: &ActionSpec,
    transcript: &StageTranscript,
    differences: &[Difference],
) -> Result<StageDifferenceLink> {
    if transcript.stages.is_empty() || differences.is_empty() {
        return Err(Error::Precondition("linking needs stages and differences".into()));
    }
    let stages_json: Vec<Value> = transcript
        .stages
        .iter()
        .map(|s| serde_json::json!({"name": s.name, "description": s.description}))
        .collect();
    let diffs_json: serde_json::Map<String, Value> = differences
        .iter()
        .map(|d| (d.name.clone(), Value::String(d.description.clone())))
        .collect();
    let prompt = prompts::proposer_linking(
        &action.description,
        &prompts::json_inline(&stages_json),
        &prompts::json_inline(&diffs_json),
    );

    let mut notes = Vec::new();
    let mut by_stage: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    match models.ask_json(format!("propose/{}/link", action.action_key), prompt) {
        Ok(reply) => {
            let known: HashSet<&str> = differences.iter().map(|d| d.name.as_str()).collect();
            for (stage, names) in parse_links(reply.parsed_json.as_ref().expect("json requested")) {
                let Some(si) = transcript.stage_index(&stage) else {
                    notes.push(format!("ignored unknown stage {stage:?}"));
                    continue;
                };
                for n in names {
                    if known.contains(n.as_str()) {
                        by_stage.entry(si).or_default().push(n);
                    } else {
                        notes.push(format!("ignored unknown difference {n:?}"));
                    }
                }
            }
        }
        Err(e) => notes.push(format!("linking call failed, linking every difference to all stages: {e}")),
    }

    let mut links: Vec<StageLink> = transcript
        .stages
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut diffs = by_stage.remove(&i).unwrap_or_default();
            let mut seen = HashSet::new();
            diffs.retain(|d| seen.insert(d.clone()));
            StageLink {
                stage: s.name.clone(),
                differences: diffs,
            }
        })
        .collect();
    let linked: HashSet<String> = links.iter().flat_map(|l| l.differences.iter().cloned()).collect();
    let fallback: Vec<String> = differences
        .iter()
        .map(|d| d.name.clone())
        .filter(|n| !linked.contains(n))
        .collect();
    for l in &mut links {
        l.differences.extend(fallback.iter().cloned());
    }
    Ok(StageDifferenceLink { links, fallback, notes })
}

/// Open setting: propose differences, then transcript, then links.
pub fn propose_open(models: &Models, action: &ActionSpec, n_differences: usize, cfg: &ProposerConfig) -> Result<Proposal> {
    let proposal = propose_differences(models, action, n_differences)?;
    if proposal.differences.is_empty() {
        return Err(Error::Stage {
            stage: "propose_differences",
            message: format!("{}: no usable differences", action.action_key),
        });
    }
    let transcript = propose_transcript(models, action, cfg)?;
    let link = link_differences(models, action, &transcript, &proposal.differences)?;
    Ok(Proposal {
        action_key: action.action_key.clone(),
        differences: proposal.differences.clone(),
        transcript,
        link,
        proposal_stats: Some(proposal),
    })
}

/// Closed setting: the given taxonomy replaces the proposal call.
pub fn propose_closed(models: &Models, action: &ActionSpec, taxonomy: &[Difference], cfg: &ProposerConfig) -> Result<Proposal> {
    if taxonomy.is_empty() {
        return Err(Error::Precondition(format!("empty taxonomy for {}", action.action_key)));
    }
    let transcript = propose_transcript(models, action, cfg)?;
    let link = link_differences(models, action, &transcript, taxonomy)?;
    Ok(Proposal {
        action_key: action.action_key.clone(),
        differences: taxonomy.to_vec(),
        transcript,
        link,
        proposal_stats: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Category, Split};
    use crate::providers::{MockEmbedder, ScriptedLlm, ScriptedVlm};
    use serde_json::json;
    use std::sync::Arc;

    fn action() -> ActionSpec {
        ActionSpec {
            action_key: "fitness_0".into(),
            description: "a weighted squat".into(),
            category: Category::Fitness,
            split: Split::Easy,
            fps_policy: 4.0,
        }
    }

    fn models(llm: Arc<ScriptedLlm>) -> Models {
        Models::new(llm, Arc::new(ScriptedVlm::new(Vec::<String>::new())), Arc::new(MockEmbedder::default()))
    }

    fn diff_reply(descs: &[&str]) -> String {
        let obj: serde_json::Map<String, Value> = descs
            .iter()
            .enumerate()
            .map(|(i, d)| {
                (
                    i.to_string(),
                    json!({"name": format!("n{i}"), "description": d, "query_string": d, "num_frames": "gt_1"}),
                )
            })
            .collect();
        Value::Object(obj).to_string()
    }

    fn stage(name: &str, n: usize) -> Value {
        json!({
            "name": name,
            "description": format!("{name} phase"),
            "retrieval_strings": (0..n).map(|i| format!("A photo of a person {name} {i}")).collect::<Vec<_>>(),
        })
    }

    #[test]
    fn single_difference() {
        let llm = Arc::new(ScriptedLlm::new([diff_reply(&["the squat is deeper"])]));
        let p = propose_differences(&models(llm.clone()), &action(), 1).unwrap();
        assert_eq!(p.differences.len(), 1);
        assert_eq!(p.differences[0].diff_key, "fitness_0:0");
        assert_eq!(p.differences[0].num_frames, FrameCount::GreaterThanOne);
        assert_eq!(p.shortfall, 0);
        assert!(llm.received()[0].prompt.contains("List 1 differences."));
    }

    #[test]
    fn repeated_description_is_deduplicated_with_shortfall() {
        let reply = diff_reply(&["The squat is deeper.", "the squat is  deeper", "THE SQUAT IS DEEPER"]);
        let llm = Arc::new(ScriptedLlm::new([reply]));
        let p = propose_differences(&models(llm), &action(), 3).unwrap();
        assert_eq!(p.differences.len(), 1);
        assert_eq!(p.duplicates_removed, 2);
        assert_eq!(p.shortfall, 2);
    }

    #[test]
    fn video_specific_reply_is_reasked_once() {
        let llm = Arc::new(ScriptedLlm::new([
            diff_reply(&["the jump in video B is higher", "the knees bend more"]),
            diff_reply(&["the jump is higher", "video a has straighter arms"]),
        ]));
        let p = propose_differences(&models(llm.clone()), &action(), 2).unwrap();
        assert!(p.reasked);
        assert_eq!(p.video_specific_removed, 1);
        assert_eq!(p.differences.len(), 1);
        assert_eq!(p.differences[0].description, "the jump is higher");
        assert_eq!(llm.received().len(), 2);
    }

    #[test]
    fn reply_is_an_upper_bound() {
        let llm = Arc::new(ScriptedLlm::new([diff_reply(&["a", "b", "c", "d"])]));
        let p = propose_differences(&models(llm), &action(), 2).unwrap();
        assert_eq!(p.differences.len(), 2);
    }

    #[test]
    fn persistent_invalid_json_is_a_stage_failure() {
        let llm = Arc::new(ScriptedLlm::new(["no", "still no", "nope"]));
        assert!(matches!(
            propose_differences(&models(llm), &action(), 2),
            Err(Error::Stage { stage: "propose_differences", .. })
        ));
    }

    #[test]
    fn one_stage_transcript_is_valid() {
        let reply = json!({"stages": [stage("descent", 5)]}).to_string();
        let llm = Arc::new(ScriptedLlm::new([reply]));
        let t = propose_transcript(&models(llm), &action(), &ProposerConfig::default()).unwrap();
        assert_eq!(t.stages.len(), 1);
    }

    #[test]
    fn six_stages_are_rejected_then_error() {
        let six = json!({"stages": (0..6).map(|i| stage(&format!("s{i}"), 5)).collect::<Vec<_>>()}).to_string();
        let llm = Arc::new(ScriptedLlm::new([six.clone(), six]));
        let err = propose_transcript(&models(llm.clone()), &action(), &ProposerConfig::default()).unwrap_err();
        assert!(err.to_string().contains("6 stages"));
        assert_eq!(llm.received().len(), 2);
    }

    #[test]
    fn too_few_retrieval_strings_then_fixed() {
        let llm = Arc::new(ScriptedLlm::new([
            json!({"stages": [stage("a", 2)]}).to_string(),
            json!({"stages": [stage("a", 5)]}).to_string(),
        ]));
        let t = propose_transcript(&models(llm), &action(), &ProposerConfig::default()).unwrap();
        assert_eq!(t.stages[0].retrieval_strings.len(), 5);
    }

    fn transcript(names: &[&str]) -> StageTranscript {
        StageTranscript {
            action_key: "fitness_0".into(),
            stages: names
                .iter()
                .map(|n| serde_json::from_value(stage(n, 5)).unwrap())
                .collect(),
        }
    }

    fn difference(name: &str) -> Difference {
        Difference {
            diff_key: format!("fitness_0:{name}"),
            name: name.into(),
            description: format!("{name} statement"),
            query_string: format!("{name} statement"),
            num_frames: FrameCount::One,
            keypoints: vec![],
        }
    }

    #[test]
    fn deeper_squat_links_to_descent_and_bottom() {
        let reply = json!({"start": [], "descent": ["depth"], "bottom": ["depth"], "ascent": []}).to_string();
        let llm = Arc::new(ScriptedLlm::new([reply]));
        let t = transcript(&["start", "descent", "bottom", "ascent"]);
        let link = link_differences(&models(llm), &action(), &t, &[difference("depth")]).unwrap();
        assert_eq!(link.stages_for("depth"), vec![1, 2]);
        assert!(link.fallback.is_empty());
    }

    #[test]
    fn single_stage_single_difference() {
        let llm = Arc::new(ScriptedLlm::new([json!({"only": ["d"]}).to_string()]));
        let link = link_differences(&models(llm), &action(), &transcript(&["only"]), &[difference("d")]).unwrap();
        assert_eq!(link.stages_for("d"), vec![0]);
    }

    #[test]
    fn omitted_difference_falls_back_to_all_stages() {
        let llm = Arc::new(ScriptedLlm::new([json!({"a": ["x"], "b": [], "ghost": ["y"]}).to_string()]));
        let link = link_differences(
            &models(llm),
            &action(),
            &transcript(&["a", "b"]),
            &[difference("x"), difference("y")],
        )
        .unwrap();
        assert_eq!(link.stages_for("x"), vec![0]);
        assert_eq!(link.stages_for("y"), vec![0, 1]);
        assert!(link.is_flagged("y"));
        assert!(!link.is_flagged("x"));
        assert!(link.notes.iter().any(|n| n.contains("ghost")));
    }

    #[test]
    fn list_shaped_link_reply_is_accepted() {
        let reply = json!([{"a": ["x"]}, {"b": ["x"]}]).to_string();
        let llm = Arc::new(ScriptedLlm::new([reply]));
        let link = link_differences(&models(llm), &action(), &transcript(&["a", "b"]), &[difference("x")]).unwrap();
        assert_eq!(link.stages_for("x"), vec![0, 1]);
        assert!(link.fallback.is_empty());
    }

    #[test]
    fn failed_link_call_still_yields_total_mapping() {
        let llm = Arc::new(ScriptedLlm::new(["x", "y", "z"]));
        let link = link_differences(&models(llm), &action(), &transcript(&["a", "b"]), &[difference("x")]).unwrap();
        assert_eq!(link.stages_for("x"), vec![0, 1]);
        assert!(link.is_flagged("x"));
    }

    #[test]
    fn closed_mode_uses_taxonomy_verbatim_without_proposal_call() {
        let llm = Arc::new(ScriptedLlm::new([
            json!({"stages": [stage("a", 5)]}).to_string(),
            json!({"a": ["x"]}).to_string(),
        ]));
        let tax = vec![difference("x")];
        let p = propose_closed(&models(llm.clone()), &action(), &tax, &ProposerConfig::default()).unwrap();
        assert_eq!(p.differences, tax);
        assert!(p.proposal_stats.is_none());
        assert!(llm.received().iter().all(|r| !r.prompt.contains("List ")));
        assert_eq!(llm.remaining(), 0);
    }
}
