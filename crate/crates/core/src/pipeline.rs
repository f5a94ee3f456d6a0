//! End-to-end runs with every intermediate written as JSON.
//!
//! Layout of a run directory:
//!
//! ```text
//! config.toml            the configuration used
//! run_manifest.json      config hash, versions, prompt hashes, failures
//! validation.json        manifest checks
//! diagnostics.json       warnings (e.g. inexact frame rates)
//! proposals/<action>.json
//! localization/<pair>.json
//! predictions/<pair>.json
//! predictions.jsonl      every prediction, sorted
//! eval/<pair>.json       open-set matching and flips
//! results.json           evaluation
//! calls.jsonl            one line per model call
//! timings.json           wall-clock per stage (not deterministic)
//! ```
//!
//! Re-running into the same directory with the same configuration reuses
//! every artifact already present, so an interrupted run resumes where it
//! stopped. A pair that fails at any stage is listed under `failures` and
//! the run goes on.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, PathologyReport};
use crate::config::{Method, RunConfig, StopAfter, Task};
use crate::dataset::{apply_plan, plan_subsample, Diagnostic, Diagnostics, FrameStore, SubsamplePlan};
use crate::differencer::{self, FrameSelection};
use crate::error::{Error, Result};
use crate::evaluator::{self, GtDifference, PairOpenResult};
use crate::localizer::{self, LocalizerMode, SimilarityMatrix};
use crate::manifest::{validate_benchmark, BenchmarkManifest, ValidationReport};
use crate::model::{ActionSpec, Clip, Difference, Prediction, Split, VideoPair};
use crate::prompts;
use crate::proposer::{self, Proposal, ProposerConfig};
use crate::providers::{EmbeddingMatrix, Models};
use crate::report::EvalReport;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Failure {
    /// Pair id or action key.
    pub scope: String,
    pub stage: String,
    pub message: String,
}

/// Frames chosen for every difference of one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairLocalization {
    pub pair_id: String,
    pub mode: LocalizerMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_a: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_b: Option<Vec<usize>>,
    pub selections: Vec<FrameSelection>,
    /// Differences without keypoints (oracle mode only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPredictions {
    pub pair_id: String,
    pub predictions: Vec<Prediction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pathologies: Option<PathologyReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub crate_version: String,
    pub prompt_set_version: u32,
    pub prompt_hashes: BTreeMap<String, String>,
    pub seed: u64,
    pub n_pairs: usize,
    pub n_failed_pairs: usize,
    pub n_model_calls: usize,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub out_dir: PathBuf,
    pub report: Option<EvalReport>,
    pub manifest: RunManifest,
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("json.tmp");
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Validation(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Reuse `path` if present, otherwise compute and store it.
fn cached<T: Serialize + DeserializeOwned>(path: &Path, compute: impl FnOnce() -> Result<T>) -> Result<T> {
    if path.exists() {
        return read_json(path);
    }
    let v = compute()?;
    write_json(path, &v)?;
    Ok(v)
}

fn file_safe(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

fn prompt_hashes() -> BTreeMap<String, String> {
    prompts::ALL_TEMPLATES.iter().map(|t| (t.name.to_string(), t.sha256())).collect()
}

struct PreparedPair {
    pair: VideoPair,
    plan_a: SubsamplePlan,
    plan_b: SubsamplePlan,
    action: ActionSpec,
}

struct Context<'a> {
    cfg: &'a RunConfig,
    models: &'a Models,
    manifest: &'a BenchmarkManifest,
    store: FrameStore,
    out: PathBuf,
}

impl Context<'_> {
    fn needs_transcript(&self) -> bool {
        matches!(self.cfg.localizer, LocalizerMode::Viterbi | LocalizerMode::Argmax)
    }

    fn budget(&self, pair_id: &str) -> usize {
        let labels: Vec<_> = self.manifest.labels_for_pair(pair_id).cloned().collect();
        evaluator::compute_n_diff_budget(&labels, self.cfg.budget_base)
    }

    fn propose(&self, action: &ActionSpec, n_open: usize) -> Result<Proposal> {
        let pcfg = ProposerConfig {
            n_retrieval_keys: self.cfg.n_retrieval_keys,
            ..ProposerConfig::default()
        };
        let path = self.out.join("proposals").join(format!("{}.json", file_safe(&action.action_key)));
        cached(&path, || match self.cfg.task {
            Task::Open => proposer::propose_open(self.models, action, n_open.max(1), &pcfg),
            Task::Closed => proposer::propose_closed(self.models, action, self.manifest.differences(&action.action_key), &pcfg),
        })
    }

    fn stage_embeddings(&self, proposal: &Proposal) -> Result<Vec<EmbeddingMatrix>> {
        proposal
            .transcript
            .stages
            .iter()
            .map(|s| self.models.embedder.embed_texts(&s.retrieval_strings))
            .collect()
    }

    fn similarity(&self, clip: &crate::model::VideoClip, stages: &[EmbeddingMatrix]) -> Result<SimilarityMatrix> {
        let frames = self.models.embedder.embed_clip(&self.store, clip)?;
        localizer::score_frames(&frames, stages, self.cfg.stage_aggregation)
    }

    fn labels(&self, sim: &SimilarityMatrix) -> Result<Vec<usize>> {
        match self.cfg.localizer {
            LocalizerMode::Argmax => Ok(localizer::argmax_labels(sim)),
            _ => Ok(localizer::viterbi_decode(sim, self.cfg.localizer_temperature)?.labels),
        }
    }

    fn oracle_positions(&self, p: &PreparedPair, clip: Clip, diff: &Difference) -> Vec<usize> {
        let plan = if clip == Clip::A { &p.plan_a } else { &p.plan_b };
        self.manifest
            .keypoints_for(&p.pair.pair_id, clip)
            .filter(|k| diff.keypoints.contains(&k.keypoint_name))
            .map(|k| plan.sampled_position(k.frame_index))
            .collect()
    }

    fn localize(
        &self,
        p: &PreparedPair,
        differences: &[Difference],
        proposal: Option<&Proposal>,
        stage_embs: Option<&[EmbeddingMatrix]>,
    ) -> Result<PairLocalization> {
        let pair = &p.pair;
        let n = self.cfg.n_frames;
        let mut loc = PairLocalization {
            pair_id: pair.pair_id.clone(),
            mode: self.cfg.localizer,
            labels_a: None,
            labels_b: None,
            selections: Vec::new(),
            skipped: Vec::new(),
        };
        let decoded = match (self.cfg.localizer, proposal, stage_embs) {
            (LocalizerMode::Viterbi | LocalizerMode::Argmax, Some(prop), Some(embs)) => {
                let sa = self.similarity(&pair.video_a, embs)?;
                let sb = self.similarity(&pair.video_b, embs)?;
                let (la, lb) = (self.labels(&sa)?, self.labels(&sb)?);
                loc.labels_a = Some(la.clone());
                loc.labels_b = Some(lb.clone());
                Some((prop, sa, sb, la, lb))
            }
            (LocalizerMode::Viterbi | LocalizerMode::Argmax, _, _) => {
                return Err(Error::Precondition("transcript missing".into()))
            }
            _ => None,
        };
        for d in differences {
            let (fa, fb) = match (self.cfg.localizer, &decoded) {
                (LocalizerMode::Random, _) => {
                    let seed = |w: &str| localizer::derive_seed(self.cfg.seed, &[&pair.pair_id, &d.diff_key, w]);
                    (
                        localizer::random_frames(pair.video_a.len(), d.num_frames, n, seed("a")),
                        localizer::random_frames(pair.video_b.len(), d.num_frames, n, seed("b")),
                    )
                }
                (LocalizerMode::Oracle, _) => {
                    let fa = localizer::oracle_frames(&self.oracle_positions(p, Clip::A, d), pair.video_a.len(), d.num_frames, n);
                    let fb = localizer::oracle_frames(&self.oracle_positions(p, Clip::B, d), pair.video_b.len(), d.num_frames, n);
                    match (fa, fb) {
                        (Some(a), Some(b)) => (a, b),
                        _ => {
                            loc.skipped.push(d.diff_key.clone());
                            continue;
                        }
                    }
                }
                (_, Some((prop, sa, sb, la, lb))) => {
                    let mut linked = prop.link.stages_for(&d.name);
                    if linked.is_empty() {
                        linked = (0..sa.stages()).collect();
                    }
                    (
                        localizer::frames_for_difference(la, sa, &linked, d.num_frames, n)?,
                        localizer::frames_for_difference(lb, sb, &linked, d.num_frames, n)?,
                    )
                }
                _ => unreachable!("decoded is set for transcript modes"),
            };
            let (fa, fb) = differencer::equalize(&fa, &fb);
            loc.selections.push(FrameSelection {
                pair_id: pair.pair_id.clone(),
                diff_key: d.diff_key.clone(),
                frames_a: fa,
                frames_b: fb,
            });
        }
        Ok(loc)
    }

    fn differ(&self, p: &PreparedPair, differences: &[Difference], loc: &PairLocalization) -> Result<PairPredictions> {
        let by_key: BTreeMap<&str, &Difference> = differences.iter().map(|d| (d.diff_key.as_str(), d)).collect();
        let mut predictions = Vec::with_capacity(loc.selections.len());
        for s in &loc.selections {
            let d = by_key
                .get(s.diff_key.as_str())
                .ok_or_else(|| Error::Validation(format!("selection for unknown difference {}", s.diff_key)))?;
            let q = differencer::build_query(&self.store, &p.pair, &p.action.description, d, &s.frames_a, &s.frames_b)?;
            let mut pred = differencer::run_vqa(self.models, &q)?;
            if self.cfg.task == Task::Open {
                pred.description = Some(d.description.clone());
            }
            predictions.push(pred);
        }
        Ok(PairPredictions {
            pair_id: p.pair.pair_id.clone(),
            predictions,
            pathologies: None,
        })
    }

    fn baseline(&self, p: &PreparedPair) -> Result<PairPredictions> {
        let pair = &p.pair;
        match self.cfg.task {
            Task::Closed => Ok(PairPredictions {
                pair_id: pair.pair_id.clone(),
                predictions: baselines::run_closed_baseline(
                    self.models,
                    &self.store,
                    pair,
                    &p.action.description,
                    self.manifest.differences(&pair.action_key),
                    self.cfg.video_rep,
                )?,
                pathologies: None,
            }),
            Task::Open => {
                let out = baselines::run_open_baseline(
                    self.models,
                    &self.store,
                    pair,
                    &p.action.description,
                    self.budget(&pair.pair_id),
                    self.cfg.video_rep,
                )?;
                Ok(PairPredictions {
                    pair_id: pair.pair_id.clone(),
                    predictions: out.predictions,
                    pathologies: Some(out.pathologies),
                })
            }
        }
    }

    fn gt_differences(&self, pair_id: &str) -> Vec<GtDifference> {
        self.manifest
            .labels_for_pair(pair_id)
            .filter_map(|l| {
                self.manifest.difference(&l.diff_key).map(|d| GtDifference {
                    diff_key: l.diff_key.clone(),
                    description: d.description.clone(),
                    label: l.label,
                })
            })
            .collect()
    }
}

fn check_resume(out: &Path, cfg: &RunConfig) -> Result<()> {
    let path = out.join("run_manifest.json");
    if path.exists() {
        let prev: RunManifest = read_json(&path)?;
        if prev.config_hash != cfg.hash() {
            return Err(Error::Config(format!(
                "{} holds a run with a different configuration",
                out.display()
            )));
        }
    }
    Ok(())
}

fn prepare(
    manifest: &BenchmarkManifest,
    cfg: &RunConfig,
    diagnostics: &Diagnostics,
    failures: &mut Vec<Failure>,
) -> Vec<PreparedPair> {
    let fps = cfg.fps();
    let mut out = Vec::new();
    for pair in &manifest.pairs {
        let fail = |stage: &str, message: String| Failure {
            scope: pair.pair_id.clone(),
            stage: stage.into(),
            message,
        };
        let Some(action) = manifest.action(&pair.action_key) else {
            failures.push(fail("ingest", format!("unknown action {}", pair.action_key)));
            continue;
        };
        let target = fps.target_fps(action);
        let plans = plan_subsample(&pair.video_a, target).and_then(|a| Ok((a, plan_subsample(&pair.video_b, target)?)));
        match plans {
            Ok((plan_a, plan_b)) => out.push(PreparedPair {
                pair: VideoPair {
                    video_a: apply_plan(&pair.video_a, &plan_a, diagnostics),
                    video_b: apply_plan(&pair.video_b, &plan_b, diagnostics),
                    ..pair.clone()
                },
                plan_a,
                plan_b,
                action: action.clone(),
            }),
            Err(e) => failures.push(fail("subsample", e.to_string())),
        }
    }
    out
}

/// Build providers from the configuration and run.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunOutput> {
    let models = crate::config::build_models(cfg)?;
    run_with_models(cfg, &models)
}

/// Run with the given providers.
pub fn run_with_models(cfg: &RunConfig, models: &Models) -> Result<RunOutput> {
    cfg.check()?;
    let out = cfg.out_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    check_resume(&out, cfg)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()).map_err(|e| Error::io(out.join("config.toml"), e))?;

    let mut timings: BTreeMap<&str, f64> = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str, timings: &mut BTreeMap<&str, f64>| {
        timings.insert(name, clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    let full = BenchmarkManifest::load(cfg.manifest_path())?;
    let manifest = if cfg.splits.is_empty() { full } else { full.filter_splits(&cfg.splits) };
    let validation: ValidationReport = validate_benchmark(&manifest, Some(&cfg.dataset_root));
    write_json(&out.join("validation.json"), &validation)?;

    let diagnostics = Diagnostics::new();
    let mut failures = Vec::new();
    let pairs = prepare(&manifest, cfg, &diagnostics, &mut failures);
    lap("ingest", &mut timings);

    let ctx = Context {
        cfg,
        models,
        manifest: &manifest,
        store: FrameStore::new(&cfg.dataset_root),
        out: out.clone(),
    };

    // proposals per action
    let mut proposals: BTreeMap<String, Proposal> = BTreeMap::new();
    if cfg.method == Method::Staged && (cfg.task == Task::Open || ctx.needs_transcript()) {
        let mut actions: Vec<&ActionSpec> = Vec::new();
        for p in &pairs {
            if !actions.iter().any(|a| a.action_key == p.action.action_key) {
                actions.push(&p.action);
            }
        }
        let results: Vec<(String, Result<Proposal>)> = actions
            .par_iter()
            .map(|a| {
                let n_open = pairs
                    .iter()
                    .filter(|p| p.action.action_key == a.action_key)
                    .map(|p| ctx.budget(&p.pair.pair_id))
                    .max()
                    .unwrap_or(0);
                (a.action_key.clone(), ctx.propose(a, n_open))
            })
            .collect();
        for (key, r) in results {
            match r {
                Ok(p) => {
                    proposals.insert(key, p);
                }
                Err(e) => failures.push(Failure {
                    scope: key,
                    stage: "propose".into(),
                    message: e.to_string(),
                }),
            }
        }
    }
    lap("propose", &mut timings);

    let mut stage_embs: BTreeMap<String, Vec<EmbeddingMatrix>> = BTreeMap::new();
    if ctx.needs_transcript() && cfg.stop_after >= StopAfter::Localize {
        for (key, prop) in &proposals {
            match ctx.stage_embeddings(prop) {
                Ok(e) => {
                    stage_embs.insert(key.clone(), e);
                }
                Err(e) => failures.push(Failure {
                    scope: key.clone(),
                    stage: "embed".into(),
                    message: e.to_string(),
                }),
            }
        }
    }

    // per pair: localize, then difference (or one baseline call)
    let pair_results: Vec<(String, Result<Option<PairPredictions>>, &'static str)> = if cfg.stop_after == StopAfter::Propose {
        Vec::new()
    } else {
        pairs
            .par_iter()
            .map(|p| {
                let id = p.pair.pair_id.clone();
                let safe = file_safe(&id);
                if cfg.method == Method::Baseline {
                    let path = out.join("predictions").join(format!("{safe}.json"));
                    if cfg.stop_after < StopAfter::Evaluate {
                        return (id, Ok(None), "baseline");
                    }
                    return (id, cached(&path, || ctx.baseline(p)).map(Some), "baseline");
                }
                let key = &p.action.action_key;
                let prop = proposals.get(key);
                let differences: Vec<Difference> = match (cfg.task, prop) {
                    (Task::Open, Some(pr)) => pr.differences.clone(),
                    (Task::Open, None) => return (id, Err(Error::Precondition("no proposal".into())), "propose"),
                    (Task::Closed, _) => ctx.manifest.differences(key).to_vec(),
                };
                if ctx.needs_transcript() && prop.is_none() {
                    return (id, Err(Error::Precondition("no transcript".into())), "propose");
                }
                let loc_path = out.join("localization").join(format!("{safe}.json"));
                let loc = match cached(&loc_path, || {
                    ctx.localize(p, &differences, prop, stage_embs.get(key).map(Vec::as_slice))
                }) {
                    Ok(l) => l,
                    Err(e) => return (id, Err(e), "localize"),
                };
                if cfg.stop_after < StopAfter::Evaluate {
                    return (id, Ok(None), "localize");
                }
                let pred_path = out.join("predictions").join(format!("{safe}.json"));
                (id, cached(&pred_path, || ctx.differ(p, &differences, &loc)).map(Some), "differ")
            })
            .collect()
    };
    let mut all_preds: BTreeMap<String, PairPredictions> = BTreeMap::new();
    for (id, r, stage) in pair_results {
        match r {
            Ok(Some(p)) => {
                all_preds.insert(id, p);
            }
            Ok(None) => {}
            Err(e) => failures.push(Failure {
                scope: id,
                stage: stage.into(),
                message: e.to_string(),
            }),
        }
    }
    lap("localize_and_differ", &mut timings);

    let mut report = None;
    if cfg.stop_after == StopAfter::Evaluate {
        let mut flat: Vec<Prediction> = all_preds.values().flat_map(|p| p.predictions.iter().cloned()).collect();
        flat.sort_by(|a, b| (&a.pair_id, &a.diff_key).cmp(&(&b.pair_id, &b.diff_key)));
        write_jsonl(&out.join("predictions.jsonl"), &flat)?;

        let splits = manifest.split_index();
        let split_of = |id: &str| splits.get(id).copied();
        let mut covered: Vec<Split> = manifest.actions.iter().map(|a| a.split).collect();
        covered.sort();
        covered.dedup();
        let r = match cfg.task {
            Task::Closed => EvalReport {
                task: Task::Closed,
                splits: covered,
                closed: Some(evaluator::eval_closed(&flat, &manifest.labels, &split_of)?),
                per_difference: evaluator::eval_per_difference(&flat, &manifest.labels)?,
                open: None,
            },
            Task::Open => {
                let empty = Vec::new();
                let scored: Vec<PairOpenResult> = manifest
                    .pairs
                    .par_iter()
                    .map(|pair| {
                        let id = &pair.pair_id;
                        let action = manifest.action(&pair.action_key).map_or("", |a| a.description.as_str());
                        let score = |preds: &[Prediction]| {
                            evaluator::evaluate_open_pair(models, id, action, &ctx.gt_differences(id), preds, ctx.budget(id))
                        };
                        match all_preds.get(id) {
                            // Only pairs with predictions are cached, so a pair that failed
                            // earlier is rescored once it succeeds.
                            Some(p) => {
                                let path = out.join("eval").join(format!("{}.json", file_safe(id)));
                                cached(&path, || Ok(score(&p.predictions)))
                            }
                            None => Ok(score(&empty)),
                        }
                    })
                    .collect::<Result<_>>()?;
                EvalReport {
                    task: Task::Open,
                    splits: covered,
                    closed: None,
                    per_difference: Vec::new(),
                    open: Some(evaluator::eval_open(scored, &split_of)),
                }
            }
        };
        write_json(&out.join("results.json"), &r)?;
        report = Some(r);
    }
    lap("evaluate", &mut timings);

    failures.sort();
    let calls = models.calls.snapshot();
    write_jsonl(&out.join("calls.jsonl"), &calls)?;
    let diags: Vec<Diagnostic> = diagnostics.snapshot();
    write_json(&out.join("diagnostics.json"), &diags)?;
    let failed_pairs: std::collections::BTreeSet<&str> = failures
        .iter()
        .filter(|f| manifest.pair(&f.scope).is_some())
        .map(|f| f.scope.as_str())
        .collect();
    let run_manifest = RunManifest {
        config_hash: cfg.hash(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        prompt_set_version: prompts::PROMPT_SET_VERSION,
        prompt_hashes: prompt_hashes(),
        seed: cfg.seed,
        n_pairs: manifest.pairs.len(),
        n_failed_pairs: failed_pairs.len(),
        n_model_calls: calls.len(),
        failures,
    };
    write_json(&out.join("run_manifest.json"), &run_manifest)?;
    write_json(&out.join("timings.json"), &timings)?;
    Ok(RunOutput {
        out_dir: out,
        report,
        manifest: run_manifest,
    })
}

/// Closed-task scores for a predictions file against a manifest.
pub fn eval_closed_files(preds_path: &Path, manifest_path: &Path, splits: &[Split]) -> Result<EvalReport> {
    let preds: Vec<Prediction> = read_jsonl(preds_path)?;
    let full = BenchmarkManifest::load(manifest_path)?;
    let manifest = if splits.is_empty() { full } else { full.filter_splits(splits) };
    let index = manifest.split_index();
    let keep: Vec<Prediction> = preds.into_iter().filter(|p| index.contains_key(&p.pair_id)).collect();
    let mut covered: Vec<Split> = manifest.actions.iter().map(|a| a.split).collect();
    covered.sort();
    covered.dedup();
    Ok(EvalReport {
        task: Task::Closed,
        splits: covered,
        closed: Some(evaluator::eval_closed(&keep, &manifest.labels, &|id| index.get(id).copied())?),
        per_difference: evaluator::eval_per_difference(&keep, &manifest.labels)?,
        open: None,
    })
}

/// Open-task scores for a predictions file; the matcher comes from `models`.
pub fn eval_open_files(
    models: &Models,
    preds_path: &Path,
    manifest_path: &Path,
    splits: &[Split],
    budget_base: evaluator::BudgetBase,
) -> Result<EvalReport> {
    let preds: Vec<Prediction> = read_jsonl(preds_path)?;
    let full = BenchmarkManifest::load(manifest_path)?;
    let manifest = if splits.is_empty() { full } else { full.filter_splits(splits) };
    let mut by_pair: BTreeMap<&str, Vec<Prediction>> = BTreeMap::new();
    for p in &preds {
        by_pair.entry(p.pair_id.as_str()).or_default().push(p.clone());
    }
    let index = manifest.split_index();
    let scored: Vec<PairOpenResult> = manifest
        .pairs
        .par_iter()
        .map(|pair| {
            let id = pair.pair_id.as_str();
            let labels: Vec<_> = manifest.labels_for_pair(id).cloned().collect();
            let gt: Vec<GtDifference> = labels
                .iter()
                .filter_map(|l| {
                    manifest.difference(&l.diff_key).map(|d| GtDifference {
                        diff_key: l.diff_key.clone(),
                        description: d.description.clone(),
                        label: l.label,
                    })
                })
                .collect();
            let action = manifest.action(&pair.action_key).map_or("", |a| a.description.as_str());
            let budget = evaluator::compute_n_diff_budget(&labels, budget_base);
            evaluator::evaluate_open_pair(models, id, action, &gt, by_pair.get(id).map_or(&[][..], Vec::as_slice), budget)
        })
        .collect();
    let mut covered: Vec<Split> = manifest.actions.iter().map(|a| a.split).collect();
    covered.sort();
    covered.dedup();
    Ok(EvalReport {
        task: Task::Open,
        splits: covered,
        closed: None,
        per_difference: Vec::new(),
        open: Some(evaluator::eval_open(scored, &|id| index.get(id).copied())),
    })
}
