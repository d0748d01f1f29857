//! Markdown rendering of a finished run directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use draftlab::metrics::MetricsRow;

use crate::experiment::{ArchRow, StageLog};
use crate::Result;

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub stages: Vec<StageLog>,
    pub metrics: BTreeMap<String, Vec<MetricsRow>>,
    pub arch: Vec<ArchRow>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&std::fs::read_to_string(path)?)?))
}

/// Reads the JSON outputs of a run directory; missing parts stay empty.
pub fn load_run(dir: &Path) -> Result<RunSummary> {
    let mut out = RunSummary {
        stages: read_json(&dir.join("stages.json"))?.unwrap_or_default(),
        arch: read_json(&dir.join("arch_speedup.json"))?.unwrap_or_default(),
        ..RunSummary::default()
    };
    let mdir = dir.join("metrics");
    if mdir.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(&mdir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        for f in files {
            let name = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            if let Some(rows) = read_json(&f)? {
                out.metrics.insert(name, rows);
            }
        }
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

pub fn render_markdown(run: &RunSummary) -> String {
    let mut s = String::new();
    if !run.stages.is_empty() {
        s.push_str("## Training stages\n\n| model | stage | steps | examples | first loss | last loss |\n|---|---|---|---|---|---|\n");
        for st in &run.stages {
            let _ = writeln!(
                s,
                "| {} | {} | {}{} | {} | {:.4} | {:.4} |",
                st.model,
                st.stage,
                st.steps_run,
                if st.truncated { " (truncated)" } else { "" },
                st.examples,
                st.initial_loss,
                st.final_loss
            );
        }
        s.push('\n');
    }
    for (draft, rows) in &run.metrics {
        let _ = writeln!(s, "## Draft `{draft}`\n");
        s.push_str("| benchmark | mode | T | γ | blocks | α | τ | MBSU | c | speedup |\n|---|---|---|---|---|---|---|---|---|---|\n");
        for r in rows {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {:.4} | {:.4} | {:.4} | {} | {} |",
                r.benchmark,
                r.sampling_mode,
                r.temperature,
                r.gamma,
                r.n_blocks,
                r.alpha,
                r.tau,
                r.mbsu,
                opt(r.c),
                opt(r.speedup_est)
            );
        }
        s.push('\n');
    }
    if !run.arch.is_empty() {
        s.push_str("## Constant-budget drafts\n\n| hidden | layers | params | deviation | α | τ | c | est. speedup |\n|---|---|---|---|---|---|---|---|\n");
        for a in &run.arch {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} |",
                a.hidden_size, a.n_layers, a.params_excluded, a.deviation, a.alpha, a.tau, a.c, a.speedup_est
            );
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use draftlab::metrics::DecodeStats;

    #[test]
    fn renders_metrics_table() {
        let stats = DecodeStats {
            gamma: 3,
            blocks: vec![3, 1, 2],
        };
        let row = MetricsRow::from_stats("text", "greedy", 0.0, &stats, 0.25, None).unwrap();
        let mut run = RunSummary::default();
        run.metrics.insert("d".into(), vec![row]);
        let md = render_markdown(&run);
        assert!(md.contains("## Draft `d`"));
        assert!(md.contains("| text | greedy | 0 | 3 | 3 | 0.6667 | 3.0000 |"));
    }
}
