//! Acceptance rate, block efficiency, memory-bound speedup and latency-based
//! speedup estimates. All functions are pure.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Accepted-token counts of `N` speculated blocks at nominal block size γ.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeStats {
    pub gamma: usize,
    pub blocks: Vec<usize>,
}

impl DecodeStats {
    pub fn validate(&self) -> Result<()> {
        if self.gamma == 0 {
            return Err(Error::InvalidArgument("gamma must be positive".into()));
        }
        if self.blocks.is_empty() {
            return Err(Error::InvalidArgument("no speculated blocks".into()));
        }
        if let Some(&a) = self.blocks.iter().find(|&&a| a > self.gamma) {
            return Err(Error::InvalidArgument(format!(
                "accepted count {a} exceeds gamma {}",
                self.gamma
            )));
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &DecodeStats) -> Result<()> {
        if other.gamma != self.gamma {
            return Err(Error::InvalidArgument("merging stats of different gamma".into()));
        }
        self.blocks.extend_from_slice(&other.blocks);
        Ok(())
    }

    pub fn total_accepted(&self) -> usize {
        self.blocks.iter().sum()
    }

    /// Tokens emitted across all blocks (accepted plus one per block).
    pub fn total_emitted(&self) -> usize {
        self.total_accepted() + self.blocks.len()
    }
}

/// α^γ = (1/N) Σ accepted_n / γ.
pub fn acceptance_rate(stats: &DecodeStats) -> Result<f64> {
    stats.validate()?;
    let g = stats.gamma as f64;
    let sum: f64 = stats.blocks.iter().map(|&a| a as f64 / g).sum();
    Ok(sum / stats.blocks.len() as f64)
}

/// τ^γ = 1 + α^γ·γ.
pub fn block_efficiency(alpha: f64, gamma: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("acceptance rate {alpha} outside [0, 1]")));
    }
    Ok(1.0 + alpha * gamma as f64)
}

/// Memory-bound speedup τ / (ĉ·γ + 1), ĉ the draft/target parameter ratio.
pub fn mbsu(tau: f64, c_hat: f64, gamma: usize) -> f64 {
    tau / (c_hat * gamma as f64 + 1.0)
}

/// Measured per-forward latencies in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyProfile {
    /// Draft, one token.
    pub l_d: f64,
    /// Target, one token.
    pub l_t_1: f64,
    /// Target, a block of γ tokens.
    pub l_t_gamma: f64,
}

impl LatencyProfile {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [("l_d", self.l_d), ("l_t_1", self.l_t_1), ("l_t_gamma", self.l_t_gamma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("latency {n} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Draft/target latency ratio c.
    pub fn c(&self) -> f64 {
        self.l_d / self.l_t_1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedupInputs {
    pub c: f64,
    pub c_hat: f64,
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau >= 1.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("block efficiency {tau} below 1")));
    }
    Ok(())
}

/// Time per output token with speculation: (l_D·γ + l_T^γ) / τ.
pub fn tpot_sd(profile: &LatencyProfile, gamma: usize, tau: f64) -> Result<f64> {
    profile.validate()?;
    check_tau(tau)?;
    Ok((profile.l_d * gamma as f64 + profile.l_t_gamma) / tau)
}

/// Time per output token without speculation: l_T^1.
pub fn tpot_ar(profile: &LatencyProfile) -> Result<f64> {
    profile.validate()?;
    Ok(profile.l_t_1)
}

/// Closed-form expected speedup τ / ((l_D/l_T^1)·γ + l_T^γ/l_T^1).
pub fn expected_speedup(profile: &LatencyProfile, gamma: usize, tau: f64) -> Result<f64> {
    profile.validate()?;
    check_tau(tau)?;
    let denom = profile.l_d / profile.l_t_1 * gamma as f64 + profile.l_t_gamma / profile.l_t_1;
    Ok(tau / denom)
}

/// Simplified estimator τ / (c·γ + 1), assuming l_T^γ ≈ l_T^1.
pub fn estimated_speedup(c: f64, gamma: usize, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!("latency ratio {c} must be positive")));
    }
    Ok(tau / (c * gamma as f64 + 1.0))
}

/// One row of the metrics report. The field set and order is the CSV schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub benchmark: String,
    pub sampling_mode: String,
    pub temperature: f64,
    pub gamma: usize,
    #[serde(rename = "N_blocks")]
    pub n_blocks: usize,
    pub alpha: f64,
    pub tau: f64,
    pub c: Option<f64>,
    pub c_hat: f64,
    pub mbsu: f64,
    pub tpot_ar: Option<f64>,
    pub tpot_sd: Option<f64>,
    pub speedup_est: Option<f64>,
}

pub const CSV_COLUMNS: [&str; 13] = [
    "benchmark",
    "sampling_mode",
    "temperature",
    "gamma",
    "N_blocks",
    "alpha",
    "tau",
    "c",
    "c_hat",
    "mbsu",
    "tpot_ar",
    "tpot_sd",
    "speedup_est",
];

/// Columns that depend on wall-clock measurements.
pub const LATENCY_COLUMNS: [&str; 4] = ["c", "tpot_ar", "tpot_sd", "speedup_est"];

impl MetricsRow {
    /// Builds a row from decode statistics, the parameter ratio and an
    /// optional latency profile.
    pub fn from_stats(
        benchmark: &str,
        sampling_mode: &str,
        temperature: f64,
        stats: &DecodeStats,
        c_hat: f64,
        profile: Option<&LatencyProfile>,
    ) -> Result<Self> {
        let alpha = acceptance_rate(stats)?;
        let tau = block_efficiency(alpha, stats.gamma)?;
        let (c, tpot_ar_v, tpot_sd_v, speedup) = match profile {
            Some(p) => (
                Some(p.c()),
                Some(tpot_ar(p)?),
                Some(tpot_sd(p, stats.gamma, tau)?),
                Some(expected_speedup(p, stats.gamma, tau)?),
            ),
            None => (None, None, None, None),
        };
        Ok(Self {
            benchmark: benchmark.to_string(),
            sampling_mode: sampling_mode.to_string(),
            temperature,
            gamma: stats.gamma,
            n_blocks: stats.blocks.len(),
            alpha,
            tau,
            c,
            c_hat,
            mbsu: mbsu(tau, c_hat, stats.gamma),
            tpot_ar: tpot_ar_v,
            tpot_sd: tpot_sd_v,
            speedup_est: speedup,
        })
    }

    pub fn csv_fields(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        vec![
            csv_escape(&self.benchmark),
            csv_escape(&self.sampling_mode),
            format!("{}", self.temperature),
            self.gamma.to_string(),
            self.n_blocks.to_string(),
            format!("{}", self.alpha),
            format!("{}", self.tau),
            opt(self.c),
            format!("{}", self.c_hat),
            format!("{}", self.mbsu),
            opt(self.tpot_ar),
            opt(self.tpot_sd),
            opt(self.speedup_est),
        ]
    }
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_csv<W: Write>(rows: &[MetricsRow], mut w: W) -> Result<()> {
    writeln!(w, "{}", CSV_COLUMNS.join(","))?;
    for r in rows {
        writeln!(w, "{}", r.csv_fields().join(","))?;
    }
    Ok(())
}

pub fn write_json<W: Write>(rows: &[MetricsRow], w: W) -> Result<()> {
    serde_json::to_writer_pretty(w, rows)?;
    Ok(())
}
