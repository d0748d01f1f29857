use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use draftlab::checkpoint;
use draftlab::data::alignment::{generate_alignment_set, save_alignment, AlignmentOptions};
use draftlab::metrics::{write_csv, write_json};
use draftlab::tokenizer::Tokenizer;
use draftlab::train::{train_stage, SparseDataset, SparseSequence, TrainSchedule};
use draftlab_bench::eval::evaluate;
use draftlab_bench::latency::{measure_latency, LatencyOptions};
use draftlab_bench::manifest::Manifest;
use draftlab_bench::pipeline::{
    build_stage_data, load_corpora, resolve_source, CorpusSource, DataSpec, EvalSpec, ModelSource, PipelineConfig,
    StageSpec,
};
use draftlab_bench::report::{load_run, render_markdown};
use draftlab_bench::{budget_search, derive_seed, run_experiment, BenchError, BudgetSearchSpec, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "draftlab", version, about = "Draft-model training and speculative decoding laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training stage and write the resulting checkpoint.
    Train(Common),
    /// Extract top-k teacher logits into a sparse-logit dataset.
    DistillData(Common),
    /// Generate target responses for seed instructions.
    AlignGen(Common),
    /// Measure acceptance over a benchmark × mode × γ grid.
    Eval(Common),
    /// Time model forwards at several block sizes.
    BenchLatency(Common),
    /// Find constant-budget architectures.
    ArchSearch(Common),
    /// Render a finished run directory as markdown.
    Report(Common),
    /// Execute a full pipeline: stages, evaluation, architecture sweep.
    Run(Common),
}

#[derive(Serialize, Deserialize)]
struct TrainCmd {
    model: ModelSource,
    #[serde(default)]
    corpora: BTreeMap<String, CorpusSource>,
    stage: StageSpec,
    /// Needed for target-generated data or distillation.
    #[serde(default)]
    teacher: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct DistillCmd {
    teacher: PathBuf,
    corpora: BTreeMap<String, CorpusSource>,
    data: DataSpec,
    k: usize,
    seq_len: usize,
    #[serde(default)]
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct AlignCmd {
    target: PathBuf,
    corpora: BTreeMap<String, CorpusSource>,
    corpus: String,
    #[serde(default)]
    options: AlignmentOptions,
    #[serde(default)]
    max_seeds: Option<usize>,
    #[serde(default)]
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct EvalCmd {
    draft: PathBuf,
    target: PathBuf,
    corpora: BTreeMap<String, CorpusSource>,
    evaluation: EvalSpec,
}

#[derive(Serialize, Deserialize)]
struct LatencyCmd {
    models: Vec<ModelSource>,
    block_sizes: Vec<usize>,
    #[serde(default)]
    options: LatencyOptions,
}

#[derive(Serialize, Deserialize)]
struct ReportCmd {
    run_dir: PathBuf,
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn write_pretty<T: Serialize>(m: &mut Manifest, out: &Path, name: &str, v: &T) -> Result<()> {
    let path = out.join(name);
    fs::write(&path, serde_json::to_string_pretty(v)? + "\n")?;
    m.add_output(out, &path)
}

fn cmd_train(c: &Common) -> Result<()> {
    let mut cfg: TrainCmd = read_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.stage.seed = s;
    }
    let base = base_dir(&c.config);
    let corpora = load_corpora(&cfg.corpora, &base, 0)?;
    let state = resolve_source(&cfg.model, &base, 0, &BTreeMap::new())?;
    let teacher = match &cfg.teacher {
        Some(p) => Some(checkpoint::load(base.join(p))?),
        None => None,
    };
    let label = cfg.stage.name.clone();
    let data = build_stage_data(&cfg.stage, &corpora, teacher.as_ref(), 0).map_err(|e| e.in_stage(&label))?;
    let out = train_stage(&state, &data.examples, &cfg.stage.schedule, &cfg.stage.loss, cfg.stage.seed)
        .map_err(|e| BenchError::from(e).in_stage(&label))?;
    let mut m = Manifest::new("train", &cfg, cfg.stage.seed)?;
    let path = c.out_dir.join("model.sfmd");
    checkpoint::save(&out.state, &path)?;
    m.add_output(&c.out_dir, &path)?;
    write_pretty(&mut m, &c.out_dir, "losses.json", &out.losses)?;
    m.write(&c.out_dir)?;
    println!("{label}: {} steps{}", out.steps_run, if out.truncated { " (truncated)" } else { "" });
    Ok(())
}

fn cmd_distill(c: &Common) -> Result<()> {
    let mut cfg: DistillCmd = read_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let base = base_dir(&c.config);
    let corpora = load_corpora(&cfg.corpora, &base, 0)?;
    let teacher = checkpoint::load(base.join(&cfg.teacher))?;
    let stage = StageSpec {
        name: "distill".into(),
        data: cfg.data.clone(),
        schedule: TrainSchedule {
            seq_len: cfg.seq_len,
            ..TrainSchedule::default()
        },
        loss: Default::default(),
        seed: cfg.seed,
        distill_top_k: Some(cfg.k),
    };
    let data = build_stage_data(&stage, &corpora, Some(&teacher), derive_seed(cfg.seed, 0))?;
    let ds = SparseDataset {
        k: cfg.k,
        vocab_size: teacher.vocab_size(),
        sequences: data
            .examples
            .into_iter()
            .map(|e| SparseSequence {
                tokens: e.tokens,
                records: e.teacher.unwrap_or_default(),
            })
            .collect(),
    };
    let mut m = Manifest::new("distill-data", &cfg, cfg.seed)?;
    let path = c.out_dir.join("logits.sfkd");
    ds.save(&path)?;
    m.add_output(&c.out_dir, &path)?;
    m.write(&c.out_dir)?;
    println!("{} sequences, {} positions, k={}", ds.sequences.len(), ds.positions(), ds.k);
    Ok(())
}

fn cmd_align(c: &Common) -> Result<()> {
    let mut cfg: AlignCmd = read_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let base = base_dir(&c.config);
    let corpora = load_corpora(&cfg.corpora, &base, 0)?;
    let target = checkpoint::load(base.join(&cfg.target))?;
    let corpus = corpora
        .get(&cfg.corpus)
        .ok_or_else(|| BenchError::Invalid(format!("unknown corpus {}", cfg.corpus)))?;
    let tok = Tokenizer::byte_level();
    let mut seeds: Vec<Vec<u32>> = corpus
        .documents()
        .iter()
        .filter(|d| d.response.is_some())
        .map(|d| tok.encode(d.text.as_bytes()))
        .collect();
    if let Some(n) = cfg.max_seeds {
        seeds.truncate(n);
    }
    let samples = generate_alignment_set(&target, &seeds, &cfg.options, cfg.seed)?;
    let mut m = Manifest::new("align-gen", &cfg, cfg.seed)?;
    let path = c.out_dir.join("alignment.jsonl");
    save_alignment(&samples, &path)?;
    m.add_output(&c.out_dir, &path)?;
    m.write(&c.out_dir)?;
    println!("{} samples", samples.len());
    Ok(())
}

fn cmd_eval(c: &Common) -> Result<()> {
    let mut cfg: EvalCmd = read_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.evaluation.seed = s;
    }
    let base = base_dir(&c.config);
    let corpora = load_corpora(&cfg.corpora, &base, 0)?;
    let draft = checkpoint::load(base.join(&cfg.draft))?;
    let target = checkpoint::load(base.join(&cfg.target))?;
    let out = evaluate(&draft, &target, &cfg.evaluation, &corpora)?;
    let mut m = Manifest::new("eval", &cfg, cfg.evaluation.seed)?;
    let csv = c.out_dir.join("metrics.csv");
    write_csv(&out.rows, BufWriter::new(fs::File::create(&csv)?))?;
    m.add_output(&c.out_dir, &csv)?;
    let json = c.out_dir.join("metrics.json");
    write_json(&out.rows, BufWriter::new(fs::File::create(&json)?))?;
    m.add_output(&c.out_dir, &json)?;
    if !out.latency.is_empty() {
        write_pretty(&mut m, &c.out_dir, "latency.json", &out.latency)?;
    }
    m.write(&c.out_dir)?;
    write_csv(&out.rows, std::io::stdout().lock())?;
    Ok(())
}

fn cmd_latency(c: &Common) -> Result<()> {
    let cfg: LatencyCmd = read_config(&c.config)?;
    let base = base_dir(&c.config);
    let mut runs = Vec::new();
    for src in &cfg.models {
        let state = resolve_source(src, &base, c.seed.unwrap_or(0), &BTreeMap::new())?;
        for &b in &cfg.block_sizes {
            let r = measure_latency(&state, b, &cfg.options)?;
            println!(
                "h={} L={} block={} median={:.3e}s spread={:.2}{}",
                r.config.hidden_size,
                r.config.n_layers,
                b,
                r.median,
                r.spread(),
                if r.flagged { " (below timer resolution)" } else { "" }
            );
            runs.push(r);
        }
    }
    let mut m = Manifest::new("bench-latency", &cfg, c.seed.unwrap_or(0))?;
    write_pretty(&mut m, &c.out_dir, "latency.json", &runs)?;
    m.write(&c.out_dir)
}

fn cmd_arch(c: &Common) -> Result<()> {
    let spec: BudgetSearchSpec = read_config(&c.config)?;
    let found = budget_search(&spec)?;
    for cand in &found {
        match &cand.config {
            Some(cfg) => println!(
                "h={:<5} L={:<4} params={:<10} deviation={}",
                cfg.hidden_size,
                cfg.n_layers,
                cand.achieved.unwrap_or(0),
                cand.deviation.unwrap_or(0)
            ),
            None => println!(
                "h={:<5} excluded: {}",
                cand.hidden_size,
                cand.excluded_reason.as_deref().unwrap_or("")
            ),
        }
    }
    let mut m = Manifest::new("arch-search", &spec, 0)?;
    write_pretty(&mut m, &c.out_dir, "arch_search.json", &found)?;
    m.write(&c.out_dir)
}

fn cmd_report(c: &Common) -> Result<()> {
    let cfg: ReportCmd = read_config(&c.config)?;
    let run = load_run(&base_dir(&c.config).join(&cfg.run_dir))?;
    let md = render_markdown(&run);
    let mut m = Manifest::new("report", &cfg, 0)?;
    let path = c.out_dir.join("report.md");
    fs::write(&path, &md)?;
    m.add_output(&c.out_dir, &path)?;
    m.write(&c.out_dir)?;
    print!("{md}");
    Ok(())
}

fn cmd_run(c: &Common) -> Result<()> {
    let mut cfg = PipelineConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let report = run_experiment(&cfg, &base_dir(&c.config), &c.out_dir)?;
    print!(
        "{}",
        render_markdown(&draftlab_bench::report::RunSummary {
            stages: report.stages,
            metrics: report.metrics,
            arch: report.arch,
        })
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Train(c) => ("train", c),
        Command::DistillData(c) => ("distill-data", c),
        Command::AlignGen(c) => ("align-gen", c),
        Command::Eval(c) => ("eval", c),
        Command::BenchLatency(c) => ("bench-latency", c),
        Command::ArchSearch(c) => ("arch-search", c),
        Command::Report(c) => ("report", c),
        Command::Run(c) => ("run", c),
    };
    let result = fs::create_dir_all(&common.out_dir)
        .map_err(BenchError::from)
        .and_then(|_| match &cli.command {
            Command::Train(c) => cmd_train(c),
            Command::DistillData(c) => cmd_distill(c),
            Command::AlignGen(c) => cmd_align(c),
            Command::Eval(c) => cmd_eval(c),
            Command::BenchLatency(c) => cmd_latency(c),
            Command::ArchSearch(c) => cmd_arch(c),
            Command::Report(c) => cmd_report(c),
            Command::Run(c) => cmd_run(c),
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let err = serde_json::json!({
                "command": name,
                "error": e.kind(),
                "message": e.to_string(),
            });
            eprintln!("{err}");
            ExitCode::FAILURE
        }
    }
}
