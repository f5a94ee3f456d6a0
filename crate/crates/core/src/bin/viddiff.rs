//! Command-line front end. Every subcommand writes JSON artifacts under `--out`.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use viddiff::baselines::VideoRepresentation;
use viddiff::config::{build_models, Method, ProviderKind, RunConfig, StopAfter, Task};
use viddiff::dataset::{compute_category_stats, compute_split_stats};
use viddiff::localizer::LocalizerMode;
use viddiff::manifest::{validate_benchmark, BenchmarkManifest};
use viddiff::model::Split;
use viddiff::pipeline::{self, RunOutput};
use viddiff::report::{per_difference_markdown, ComparisonTable, EvalReport};
use viddiff::synthetic::{generate, SyntheticConfig};

#[derive(Parser)]
#[command(name = "viddiff", version, about = "Zero-shot video action differencing")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated subset of easy,medium,hard.
    #[arg(long, global = true, value_delimiter = ',')]
    splits: Option<Vec<Split>>,
    /// Dataset root holding manifest.jsonl and frame directories.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a benchmark manifest and print dataset statistics.
    Ingest {
        /// Generate the synthetic benchmark into the dataset root first.
        #[arg(long)]
        synthetic: bool,
    },
    /// Propose differences and stage transcripts.
    Propose {
        #[arg(long, default_value = "closed")]
        mode: Task,
    },
    /// Propose, then assign frames to stages.
    Localize {
        #[arg(long, default_value = "closed")]
        mode: Task,
        #[arg(long, default_value = "viterbi")]
        localizer: LocalizerMode,
    },
    /// Full staged run: propose, localize, difference, evaluate.
    Differ {
        #[arg(long, default_value = "closed")]
        mode: Task,
        #[arg(long, default_value = "localizer")]
        frames_from: LocalizerMode,
        #[arg(long)]
        n_frames: Option<usize>,
    },
    /// One multimodal call per pair.
    Baseline {
        /// simulated or openai
        #[arg(long)]
        provider: Option<String>,
        #[arg(long, default_value = "closed")]
        mode: Task,
        #[arg(long, default_value = "frames")]
        rep: VideoRepresentation,
    },
    /// Score a predictions file against a manifest.
    Eval {
        #[arg(long, default_value = "closed")]
        mode: Task,
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Run oracle, random, argmax and viterbi frame selection side by side.
    Ablate {
        #[arg(long, default_value = "closed")]
        mode: Task,
    },
    /// Compare finished runs.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also print per-difference significance for each run.
        #[arg(long)]
        per_difference: bool,
    },
}

fn base_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.out_dir = o.clone();
    }
    if let Some(s) = &g.splits {
        cfg.splits = s.clone();
    }
    if let Some(d) = &g.data {
        cfg.dataset_root = d.clone();
    }
    Ok(cfg)
}

fn summarize(out: &RunOutput) {
    if let Some(r) = &out.report {
        match ComparisonTable::from_runs(&[(out.out_dir.display().to_string(), r.clone())]) {
            Ok(t) => print!("{}", t.to_markdown()),
            Err(e) => log::warn!("{e}"),
        }
    }
    let m = &out.manifest;
    println!(
        "{} pairs, {} failed, {} model calls -> {}",
        m.n_pairs,
        m.n_failed_pairs,
        m.n_model_calls,
        out.out_dir.display()
    );
    for f in &m.failures {
        println!("  failed {} at {}: {}", f.scope, f.stage, f.message);
    }
}

fn run(cfg: &RunConfig) -> Result<RunOutput> {
    let out = pipeline::run_pipeline(cfg)?;
    summarize(&out);
    Ok(out)
}

fn ingest(cfg: &RunConfig, synthetic: bool) -> Result<()> {
    if synthetic {
        let scfg = SyntheticConfig { seed: cfg.seed, ..SyntheticConfig::default() };
        generate(&cfg.dataset_root, &scfg)?;
        println!("wrote synthetic benchmark to {}", cfg.dataset_root.display());
    }
    let full = BenchmarkManifest::load(cfg.manifest_path())?;
    let manifest = if cfg.splits.is_empty() { full } else { full.filter_splits(&cfg.splits) };
    let validation = validate_benchmark(&manifest, Some(&cfg.dataset_root));
    let splits = compute_split_stats(&manifest);
    let categories = compute_category_stats(&manifest);
    std::fs::create_dir_all(&cfg.out_dir)?;
    let body = serde_json::json!({ "validation": validation, "splits": splits, "categories": categories });
    std::fs::write(cfg.out_dir.join("ingest.json"), serde_json::to_string_pretty(&body)?)?;

    println!("| split | pairs | avg length (s) | total (min) | labels | A/B/C |");
    println!("|---|---:|---:|---:|---:|---|");
    for s in &splits {
        let (a, b, c) = s.abc_distribution;
        println!(
            "| {} | {} | {:.1} | {:.1} | {} | {a}/{b}/{c} |",
            s.split.as_str(),
            s.n_pairs,
            s.avg_video_length_s,
            s.total_video_length_min,
            s.n_difference_annotations
        );
    }
    if validation.is_valid {
        println!("manifest is valid");
        Ok(())
    } else {
        for v in &validation.violations {
            println!("  {v:?}");
        }
        bail!("{} manifest violations", validation.violations.len())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = base_config(&cli.global)?;
    match cli.command {
        Command::Ingest { synthetic } => ingest(&cfg, synthetic)?,
        Command::Propose { mode } => {
            cfg.task = mode;
            cfg.method = Method::Staged;
            cfg.stop_after = StopAfter::Propose;
            run(&cfg)?;
        }
        Command::Localize { mode, localizer } => {
            cfg.task = mode;
            cfg.method = Method::Staged;
            cfg.localizer = localizer;
            cfg.stop_after = StopAfter::Localize;
            run(&cfg)?;
        }
        Command::Differ { mode, frames_from, n_frames } => {
            cfg.task = mode;
            cfg.method = Method::Staged;
            cfg.localizer = frames_from;
            if let Some(n) = n_frames {
                cfg.n_frames = n;
            }
            run(&cfg)?;
        }
        Command::Baseline { provider, mode, rep } => {
            cfg.task = mode;
            cfg.method = Method::Baseline;
            cfg.video_rep = rep;
            match provider.as_deref() {
                None => {}
                Some("simulated") => cfg.providers.vlm.kind = ProviderKind::Simulated,
                Some("openai") => cfg.providers.vlm.kind = ProviderKind::OpenAi,
                Some(p) => bail!("unknown provider {p:?} (expected simulated or openai)"),
            }
            run(&cfg)?;
        }
        Command::Eval { mode, preds, gt } => {
            let report = match mode {
                Task::Closed => pipeline::eval_closed_files(&preds, &gt, &cfg.splits)?,
                Task::Open => {
                    let models = build_models(&cfg)?;
                    pipeline::eval_open_files(&models, &preds, &gt, &cfg.splits, cfg.budget_base)?
                }
            };
            std::fs::create_dir_all(&cfg.out_dir)?;
            std::fs::write(cfg.out_dir.join("results.json"), serde_json::to_string_pretty(&report)?)?;
            print!("{}", ComparisonTable::from_runs(&[(preds.display().to_string(), report.clone())])?.to_markdown());
            if !report.per_difference.is_empty() {
                print!("\n{}", per_difference_markdown(&report.per_difference));
            }
        }
        Command::Ablate { mode } => {
            cfg.task = mode;
            cfg.method = Method::Staged;
            let root = cfg.out_dir.clone();
            let mut runs = Vec::new();
            for m in [LocalizerMode::Oracle, LocalizerMode::Random, LocalizerMode::Argmax, LocalizerMode::Viterbi] {
                let name = m.as_str().to_string();
                let c = RunConfig { localizer: m, out_dir: root.join(&name), ..cfg.clone() };
                let out = pipeline::run_pipeline(&c)?;
                if let Some(r) = out.report {
                    runs.push((name, r));
                }
            }
            let table = ComparisonTable::from_runs(&runs)?.to_markdown();
            std::fs::write(root.join("ablation.md"), &table)?;
            print!("{table}");
        }
        Command::Report { runs, per_difference } => {
            let loaded: Vec<(String, EvalReport)> = runs
                .iter()
                .map(|d| Ok((d.display().to_string(), EvalReport::load(d).with_context(|| d.display().to_string())?)))
                .collect::<Result<_>>()?;
            print!("{}", ComparisonTable::from_runs(&loaded)?.to_markdown());
            if per_difference {
                for (name, r) in &loaded {
                    if !r.per_difference.is_empty() {
                        print!("\n{name}\n\n{}", per_difference_markdown(&r.per_difference));
                    }
                }
            }
        }
    }
    Ok(())
}
