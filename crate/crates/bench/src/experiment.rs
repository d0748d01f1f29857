//! End-to-end driver: train the target and drafts stage by stage, evaluate
//! every draft, and optionally sweep a constant-budget draft family.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use draftlab::data::alignment::save_alignment;
use draftlab::data::Corpus;
use draftlab::metrics::{block_efficiency, acceptance_rate, estimated_speedup, write_csv, write_json, MetricsRow};
use draftlab::train::{train_stage, TrainExample};
use draftlab::{checkpoint, init_model, ModelState};
use serde::{Deserialize, Serialize};

use crate::arch::budget_search;
use crate::eval::{build_tasks, decode_tasks, evaluate};
use crate::latency::{latency_profile, LatencyRun};
use crate::manifest::Manifest;
use crate::pipeline::{build_stage_data, load_corpora, resolve_source, ModelPlan, PipelineConfig, StageSpec};
use crate::{derive_seed, BenchError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub model: String,
    pub stage: String,
    pub steps_run: usize,
    pub truncated: bool,
    pub examples: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub losses: Vec<f64>,
}

/// One row of the speedup-vs-architecture table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchRow {
    pub hidden_size: usize,
    pub n_layers: usize,
    pub intermediate_size: usize,
    pub params_excluded: usize,
    pub deviation: i64,
    pub gamma: usize,
    pub alpha: f64,
    pub tau: f64,
    pub c: f64,
    pub speedup_est: f64,
}

pub const ARCH_COLUMNS: [&str; 10] = [
    "hidden_size",
    "n_layers",
    "intermediate_size",
    "params_excluded",
    "deviation",
    "gamma",
    "alpha",
    "tau",
    "c",
    "speedup_est",
];

pub const ARCH_LATENCY_COLUMNS: [&str; 2] = ["c", "speedup_est"];

pub fn write_arch_csv(rows: &[ArchRow], path: &Path) -> Result<()> {
    let mut out = ARCH_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.hidden_size,
            r.n_layers,
            r.intermediate_size,
            r.params_excluded,
            r.deviation,
            r.gamma,
            r.alpha,
            r.tau,
            r.c,
            r.speedup_est
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub out_dir: PathBuf,
    pub stages: Vec<StageLog>,
    /// Metrics rows per draft, in declaration order of the grid.
    pub metrics: BTreeMap<String, Vec<MetricsRow>>,
    pub arch: Vec<ArchRow>,
    pub latency: Vec<LatencyRun>,
    pub manifest: Manifest,
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    base: &'a Path,
    out: &'a Path,
    corpora: BTreeMap<String, Corpus>,
    manifest: Manifest,
    stages: Vec<StageLog>,
    data_cache: BTreeMap<String, Vec<TrainExample>>,
}

impl Runner<'_> {
    fn seed(&mut self, name: String, local: u64) -> u64 {
        let s = derive_seed(self.cfg.seed, local);
        self.manifest.seeds.insert(name, s);
        s
    }

    fn stage_data(&mut self, plan: &str, stage: &StageSpec, target: Option<&ModelState>) -> Result<Vec<TrainExample>> {
        let key = format!("{plan}/{}", stage.name);
        if let Some(ex) = self.data_cache.get(&key) {
            return Ok(ex.clone());
        }
        let data = build_stage_data(stage, &self.corpora, target, self.cfg.seed)?;
        if let Some(samples) = &data.alignment {
            let dir = self.out.join("data");
            fs::create_dir_all(&dir)?;
            let path = dir.join(format!("{plan}_{}_alignment.jsonl", stage.name));
            save_alignment(samples, &path)?;
            self.manifest.add_output(self.out, &path)?;
        }
        self.data_cache.insert(key, data.examples.clone());
        Ok(data.examples)
    }

    /// Runs a plan's stages. With `save`, each stage is checkpointed and
    /// logged.
    fn train_plan(
        &mut self,
        plan: &ModelPlan,
        mut state: ModelState,
        target: Option<&ModelState>,
        save: bool,
    ) -> Result<ModelState> {
        for stage in &plan.stages {
            let label = format!("{}/{}", plan.name, stage.name);
            let mut run = || -> Result<(ModelState, StageLog)> {
                let examples = self.stage_data(&plan.name, stage, target)?;
                let seed = self.seed(label.clone(), stage.seed);
                let out = train_stage(&state, &examples, &stage.schedule, &stage.loss, seed)?;
                let log = StageLog {
                    model: plan.name.clone(),
                    stage: stage.name.clone(),
                    steps_run: out.steps_run,
                    truncated: out.truncated,
                    examples: examples.len(),
                    initial_loss: out.losses.first().copied().unwrap_or(f64::NAN),
                    final_loss: out.losses.last().copied().unwrap_or(f64::NAN),
                    losses: out.losses,
                };
                Ok((out.state, log))
            };
            let (next, log) = run().map_err(|e| e.in_stage(label.clone()))?;
            log::info!(
                "{label}: {} steps, loss {:.4} -> {:.4}",
                log.steps_run,
                log.initial_loss,
                log.final_loss
            );
            if save {
                let dir = self.out.join("checkpoints").join(&plan.name);
                fs::create_dir_all(&dir)?;
                let path = dir.join(format!("{}.sfmd", stage.name));
                checkpoint::save(&next, &path)?;
                self.manifest.add_output(self.out, &path)?;
                self.stages.push(log);
            }
            state = next;
        }
        Ok(state)
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let path = self.out.join(rel);
        if let Some(p) = path.parent() {
            fs::create_dir_all(p)?;
        }
        fs::write(&path, serde_json::to_string_pretty(value)? + "\n")?;
        self.manifest.add_output(self.out, &path)?;
        Ok(())
    }
}

/// Executes `cfg`. Relative corpus and checkpoint paths resolve against
/// `base_dir`; every output lands under `out_dir`.
pub fn run_experiment(cfg: &PipelineConfig, base_dir: &Path, out_dir: &Path) -> Result<ExperimentReport> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let corpora = load_corpora(&cfg.corpora, base_dir, cfg.seed)?;
    let mut r = Runner {
        cfg,
        base: base_dir,
        out: out_dir,
        corpora,
        manifest: Manifest::new("run", cfg, cfg.seed)?,
        stages: Vec::new(),
        data_cache: BTreeMap::new(),
    };

    let finished: BTreeMap<String, ModelState> = BTreeMap::new();
    let target0 = resolve_source(&cfg.target.source, r.base, cfg.seed, &finished)
        .map_err(|e| e.in_stage(format!("{}/init", cfg.target.name)))?;
    let target = r.train_plan(&cfg.target, target0, None, true)?;

    let mut drafts: BTreeMap<String, ModelState> = BTreeMap::new();
    let mut metrics = BTreeMap::new();
    let mut latency = Vec::new();
    for plan in &cfg.drafts {
        let init = resolve_source(&plan.source, r.base, cfg.seed, &drafts)
            .map_err(|e| e.in_stage(format!("{}/init", plan.name)))?;
        let state = r.train_plan(plan, init, Some(&target), true)?;
        let mut eval_spec = cfg.evaluation.clone();
        eval_spec.seed = r.seed(format!("{}/eval", plan.name), cfg.evaluation.seed);
        let out = evaluate(&state, &target, &eval_spec, &r.corpora).map_err(|e| e.in_stage(format!("{}/eval", plan.name)))?;
        let dir = out_dir.join("metrics");
        fs::create_dir_all(&dir)?;
        let csv = dir.join(format!("{}.csv", plan.name));
        write_csv(&out.rows, BufWriter::new(fs::File::create(&csv)?))?;
        let json = dir.join(format!("{}.json", plan.name));
        write_json(&out.rows, BufWriter::new(fs::File::create(&json)?))?;
        r.manifest.add_output(out_dir, &csv)?;
        r.manifest.add_output(out_dir, &json)?;
        latency.extend(out.latency);
        metrics.insert(plan.name.clone(), out.rows);
        drafts.insert(plan.name.clone(), state);
    }

    let mut arch = Vec::new();
    if let Some(plan) = &cfg.arch_search {
        let stage_plan = plan
            .stages_from
            .as_ref()
            .and_then(|n| cfg.drafts.iter().find(|d| &d.name == n))
            .cloned();
        let bench = cfg
            .evaluation
            .benchmarks
            .iter()
            .find(|b| b.name == plan.benchmark)
            .ok_or_else(|| BenchError::Invalid(format!("unknown benchmark {}", plan.benchmark)))?;
        let candidates = budget_search(&plan.search).map_err(|e| e.in_stage("arch-search"))?;
        r.write_json("arch_search.json", &candidates)?;
        let eval_seed = r.seed("arch/eval".into(), cfg.evaluation.seed);
        for cand in candidates.iter().filter(|c| c.is_feasible()) {
            let ccfg = cand.config.clone().expect("feasible candidate");
            let label = format!("arch/h{}", ccfg.hidden_size);
            let init_seed = r.seed(format!("{label}/init"), plan.init_seed);
            let mut state = init_model(&ccfg, init_seed).map_err(|e| BenchError::from(e).in_stage(label.clone()))?;
            if let Some(p) = &stage_plan {
                state = r.train_plan(p, state, Some(&target), false).map_err(|e| e.in_stage(label.clone()))?;
            }
            let room = ccfg.max_seq_len.min(target.config().max_seq_len);
            let tasks = build_tasks(bench, &r.corpora, room)?;
            let (stats, _) = decode_tasks(
                &state,
                &target,
                &tasks,
                plan.gamma,
                plan.mode,
                cfg.evaluation.temperature,
                bench.max_new_tokens,
                |i| eval_seed ^ i as u64,
            )
            .map_err(|e| e.in_stage(label.clone()))?;
            let alpha = acceptance_rate(&stats)?;
            let tau = block_efficiency(alpha, plan.gamma)?;
            let (profile, runs) = latency_profile(&state, &target, plan.gamma, &plan.latency)?;
            latency.extend(runs);
            arch.push(ArchRow {
                hidden_size: ccfg.hidden_size,
                n_layers: ccfg.n_layers,
                intermediate_size: ccfg.intermediate_size,
                params_excluded: cand.achieved.unwrap_or(0),
                deviation: cand.deviation.unwrap_or(0),
                gamma: plan.gamma,
                alpha,
                tau,
                c: profile.c(),
                speedup_est: estimated_speedup(profile.c(), plan.gamma, tau)?,
            });
        }
        let path = out_dir.join("arch_speedup.csv");
        write_arch_csv(&arch, &path)?;
        r.manifest.add_output(out_dir, &path)?;
        r.write_json("arch_speedup.json", &arch)?;
    }

    let stages = std::mem::take(&mut r.stages);
    r.write_json("stages.json", &stages)?;
    if !latency.is_empty() {
        r.write_json("latency.json", &latency)?;
    }
    r.manifest.write(out_dir)?;
    Ok(ExperimentReport {
        out_dir: out_dir.to_path_buf(),
        stages,
        metrics,
        arch,
        latency,
        manifest: r.manifest,
    })
}
