//! Drafts of different width and depth sharing one parameter budget.
//!
//! Counts exclude the embedding tables, so every candidate pays the same for
//! its vocabulary regardless of shape.

use draftlab::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSearchSpec {
    /// Target parameter count, embedding tables excluded.
    pub budget: usize,
    pub hidden_candidates: Vec<usize>,
    /// Supplies head counts, the intermediate/hidden ratio and everything
    /// else that is held fixed.
    pub base_config: ModelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetCandidate {
    pub hidden_size: usize,
    pub config: Option<ModelConfig>,
    pub achieved: Option<usize>,
    /// `achieved − budget`.
    pub deviation: Option<i64>,
    pub per_layer: Option<usize>,
    pub excluded_reason: Option<String>,
}

impl BudgetCandidate {
    pub fn is_feasible(&self) -> bool {
        self.config.is_some()
    }
}

fn excluded(hidden: usize, per_layer: Option<usize>, reason: String) -> BudgetCandidate {
    BudgetCandidate {
        hidden_size: hidden,
        config: None,
        achieved: None,
        deviation: None,
        per_layer,
        excluded_reason: Some(reason),
    }
}

/// Intermediate size for `hidden`, keeping the base config's ratio.
pub fn scaled_intermediate(base: &ModelConfig, hidden: usize) -> usize {
    let num = hidden * base.intermediate_size;
    (num + base.hidden_size / 2) / base.hidden_size
}

/// For each candidate width picks the depth whose count lands closest to
/// the budget (ties go to the shallower model). Widths whose single layer
/// already exceeds the budget, or that break head divisibility, are reported
/// as excluded.
pub fn budget_search(spec: &BudgetSearchSpec) -> Result<Vec<BudgetCandidate>, BenchError> {
    if spec.budget == 0 {
        return Err(BenchError::Invalid("budget must be positive".into()));
    }
    if spec.hidden_candidates.is_empty() {
        return Err(BenchError::Invalid("no hidden-size candidates".into()));
    }
    spec.base_config.validate()?;
    let mut out = Vec::with_capacity(spec.hidden_candidates.len());
    for &h in &spec.hidden_candidates {
        if h == 0 {
            return Err(BenchError::Invalid("hidden-size candidates must be positive".into()));
        }
        let mut cfg = ModelConfig {
            hidden_size: h,
            intermediate_size: scaled_intermediate(&spec.base_config, h).max(1),
            n_layers: 1,
            ..spec.base_config.clone()
        };
        if let Err(e) = cfg.validate() {
            out.push(excluded(h, None, e.to_string()));
            continue;
        }
        let per = cfg.per_layer_params();
        let fixed = cfg.param_count(true) - per;
        if fixed + per > spec.budget {
            out.push(excluded(
                h,
                Some(per),
                format!("one layer needs {} parameters, budget is {}", fixed + per, spec.budget),
            ));
            continue;
        }
        let lo = ((spec.budget - fixed) / per).max(1);
        let dev = |l: usize| (fixed + l * per).abs_diff(spec.budget);
        cfg.n_layers = if dev(lo + 1) < dev(lo) { lo + 1 } else { lo };
        let achieved = cfg.param_count(true);
        out.push(BudgetCandidate {
            hidden_size: h,
            achieved: Some(achieved),
            deviation: Some(achieved as i64 - spec.budget as i64),
            per_layer: Some(per),
            excluded_reason: None,
            config: Some(cfg),
        });
    }
    if !out.iter().any(BudgetCandidate::is_feasible) {
        return Err(BenchError::Infeasible(format!(
            "no candidate width fits a budget of {}",
            spec.budget
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ModelConfig {
        ModelConfig::tiny(32, 4)
    }

    #[test]
    fn base_is_a_fixed_point() {
        let b = base();
        let spec = BudgetSearchSpec {
            budget: b.param_count(true),
            hidden_candidates: vec![16, 32, 64],
            base_config: b.clone(),
        };
        let found = budget_search(&spec).unwrap();
        let at_base = found.iter().find(|c| c.hidden_size == 32).unwrap();
        assert_eq!(at_base.deviation, Some(0));
        assert_eq!(at_base.config.as_ref(), Some(&b));
    }

    #[test]
    fn halving_width_roughly_quadruples_depth() {
        let b = ModelConfig::tiny(64, 4);
        let spec = BudgetSearchSpec {
            budget: b.param_count(true),
            hidden_candidates: vec![32, 64],
            base_config: b,
        };
        let found = budget_search(&spec).unwrap();
        let l32 = found[0].config.as_ref().unwrap().n_layers;
        let l64 = found[1].config.as_ref().unwrap().n_layers;
        assert_eq!(l64, 4);
        // per-layer count is 9h² + 2h here, so the depth ratio is 36992 / 9280.
        assert!((15..=17).contains(&l32), "{l32}");
    }

    #[test]
    fn too_wide_is_excluded() {
        let b = base();
        let spec = BudgetSearchSpec {
            budget: b.param_count(true),
            hidden_candidates: vec![32, 256],
            base_config: b,
        };
        let found = budget_search(&spec).unwrap();
        assert!(!found[1].is_feasible());
        assert!(found[1].excluded_reason.as_deref().unwrap().contains("one layer"));
    }

    #[test]
    fn nothing_feasible_is_error() {
        let spec = BudgetSearchSpec {
            budget: 10,
            hidden_candidates: vec![32],
            base_config: base(),
        };
        assert!(matches!(budget_search(&spec), Err(BenchError::Infeasible(_))));
    }

    #[test]
    fn odd_head_dim_excluded() {
        let spec = BudgetSearchSpec {
            budget: 100_000,
            hidden_candidates: vec![6, 32],
            base_config: base(),
        };
        let found = budget_search(&spec).unwrap();
        assert!(!found[0].is_feasible());
    }
}
