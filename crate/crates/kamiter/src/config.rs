//! Run configuration (flat TOML document with dotted sections) and the
//! deterministic report emitters. Identical inputs produce identical bytes:
//! floats are printed with 17 significant digits in a fixed column order and
//! wall-clock fields never reach the output.

use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result};
use crate::kam::driver::{RunSettings, ScheduleMode, StepReport};
use crate::models::{ModelParams, MODEL_NAMES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: Option<String>,
    eps: Option<f64>,
    m: Option<u32>,
    tau: Option<f64>,
    mode: Option<String>,
    grid: Option<usize>,
    seed: Option<u64>,
    out_dir: Option<String>,
    max_steps: Option<usize>,
    lie_order: Option<usize>,
    samples_per_edge: Option<usize>,
    k_cap: Option<u32>,
    #[serde(default)]
    tolerances: RawTolerances,
    #[serde(default)]
    model_params: ModelParams,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTolerances {
    stop: Option<f64>,
    freq: Option<f64>,
    homological: Option<f64>,
    prune: Option<f64>,
}

/// Fully validated run configuration with defaults applied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: String,
    pub model_params: ModelParams,
    pub eps: f64,
    pub m: u32,
    pub tau: f64,
    pub mode: ScheduleMode,
    pub grid: usize,
    pub seed: u64,
    pub out_dir: String,
    pub max_steps: usize,
    pub lie_order: usize,
    pub samples_per_edge: usize,
    pub k_cap: u32,
    pub stop_tol: f64,
    pub freq_tol: f64,
    pub homological_tol: f64,
    pub prune_tol: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: "pro2".into(),
            model_params: ModelParams::default(),
            eps: 1e-6,
            m: 5,
            tau: 2.0,
            mode: ScheduleMode::Practical,
            grid: 9,
            seed: 42,
            out_dir: "out".into(),
            max_steps: 12,
            lie_order: 8,
            samples_per_edge: 256,
            k_cap: 4096,
            stop_tol: 1e-12,
            freq_tol: 1e-9,
            homological_tol: 1e-10,
            prune_tol: 1e-30,
        }
    }
}

impl RunConfig {
    pub fn settings(&self) -> RunSettings {
        RunSettings {
            eps: self.eps,
            m: self.m,
            tau: self.tau,
            mode: self.mode,
            grid_size: self.grid,
            stop_tol: self.stop_tol,
            freq_tol: self.freq_tol,
            homological_tol: self.homological_tol,
            prune_tol: self.prune_tol,
            max_steps: self.max_steps,
            lie_order: self.lie_order,
            samples_per_edge: self.samples_per_edge,
            k_cap: self.k_cap,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !MODEL_NAMES.contains(&self.model.as_str()) {
            return Err(KamError::ConfigError {
                path: "model".into(),
                reason: format!("unknown model `{}`; known: {:?}", self.model, MODEL_NAMES),
            });
        }
        if self.eps == 0.0 || !self.eps.is_finite() {
            return Err(KamError::ConfigError {
                path: "eps".into(),
                reason: "must be a nonzero finite number (negative only for the direct 1-D cases)".into(),
            });
        }
        if self.grid % 2 == 0 {
            return Err(KamError::ConfigError {
                path: "grid".into(),
                reason: "grid size must be odd".into(),
            });
        }
        for (name, v) in [
            ("tolerances.stop", self.stop_tol),
            ("tolerances.freq", self.freq_tol),
            ("tolerances.homological", self.homological_tol),
            ("tolerances.prune", self.prune_tol),
        ] {
            if !(v > 0.0) {
                return Err(KamError::ConfigError {
                    path: name.into(),
                    reason: "tolerances must be positive".into(),
                });
            }
        }
        if self.m < 2 {
            return Err(KamError::ConfigError {
                path: "m".into(),
                reason: "Taylor order must be at least 2".into(),
            });
        }
        Ok(())
    }
}

/// Parses the flat key-value document, fills defaults, validates, and rejects
/// unknown keys with the offending key path in the error.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| KamError::ConfigError {
        path: String::new(),
        reason: e.to_string(),
    })?;
    let d = RunConfig::default();
    let mode = match raw.mode.as_deref() {
        None => d.mode,
        Some("paper") => ScheduleMode::Paper,
        Some("practical") => ScheduleMode::Practical,
        Some(other) => {
            return Err(KamError::ConfigError {
                path: "mode".into(),
                reason: format!("expected `paper` or `practical`, got `{other}`"),
            })
        }
    };
    let cfg = RunConfig {
        model: raw.model.unwrap_or(d.model),
        model_params: raw.model_params,
        eps: raw.eps.unwrap_or(d.eps),
        m: raw.m.unwrap_or(d.m),
        tau: raw.tau.unwrap_or(d.tau),
        mode,
        grid: raw.grid.unwrap_or(d.grid),
        seed: raw.seed.unwrap_or(d.seed),
        out_dir: raw.out_dir.unwrap_or(d.out_dir),
        max_steps: raw.max_steps.unwrap_or(d.max_steps),
        lie_order: raw.lie_order.unwrap_or(d.lie_order),
        samples_per_edge: raw.samples_per_edge.unwrap_or(d.samples_per_edge),
        k_cap: raw.k_cap.unwrap_or(d.k_cap),
        stop_tol: raw.tolerances.stop.unwrap_or(d.stop_tol),
        freq_tol: raw.tolerances.freq.unwrap_or(d.freq_tol),
        homological_tol: raw.tolerances.homological.unwrap_or(d.homological_tol),
        prune_tol: raw.tolerances.prune.unwrap_or(d.prune_tol),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// The default configuration as a TOML document (round-trips through
/// parse_config).
pub fn default_config_toml() -> String {
    let d = RunConfig::default();
    format!(
        "model = \"{}\"\neps = {}\nm = {}\ntau = {}\nmode = \"{}\"\ngrid = {}\nseed = {}\n\
         out_dir = \"{}\"\nmax_steps = {}\nlie_order = {}\nsamples_per_edge = {}\nk_cap = {}\n\n\
         [tolerances]\nstop = {}\nfreq = {}\nhomological = {}\nprune = {}\n\n\
         [model_params]\nl = {}\nell = {}\ndim = {}\n",
        d.model,
        fmt17(d.eps),
        d.m,
        fmt17(d.tau),
        d.mode,
        d.grid,
        d.seed,
        d.out_dir,
        d.max_steps,
        d.lie_order,
        d.samples_per_edge,
        d.k_cap,
        fmt17(d.stop_tol),
        fmt17(d.freq_tol),
        fmt17(d.homological_tol),
        fmt17(d.prune_tol),
        d.model_params.l,
        d.model_params.ell,
        d.model_params.dim,
    )
}

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Deterministic per-step report emission. Column order is fixed; identical
/// inputs produce identical bytes.
pub fn emit_report(reports: &[StepReport], dim: usize, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => emit_csv(reports, dim),
        ReportFormat::Json => {
            serde_json::to_string_pretty(reports).expect("step reports serialize") + "\n"
        }
    }
}

fn emit_csv(reports: &[StepReport], dim: usize) -> String {
    let mut out = String::new();
    out.push_str("step,r,s,mu,K,norm_P,holder_P");
    for i in 1..=dim {
        out.push_str(&format!(",xi_{i}"));
    }
    out.push_str(",xi_disp,freq_residual");
    for i in 1..=7 {
        out.push_str(&format!(",H{i}_margin"));
    }
    out.push('\n');
    for rep in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}",
            rep.step,
            fmt17(rep.r),
            fmt17(rep.s),
            fmt17(rep.mu),
            rep.k_plus,
            fmt17(rep.norm_p),
            fmt17(rep.holder_p)
        ));
        for i in 0..dim {
            out.push(',');
            out.push_str(&fmt17(rep.xi.get(i).copied().unwrap_or(0.0)));
        }
        out.push(',');
        out.push_str(&fmt17(rep.xi_displacement));
        out.push(',');
        out.push_str(&fmt17(rep.freq_residual));
        for h in &rep.hypotheses {
            out.push(',');
            out.push_str(&fmt17(h.margin));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config("model = \"pro2\"\neps = 1e-6\n").unwrap();
        assert_eq!(cfg.m, 5);
        assert_eq!(cfg.tau, 2.0);
        assert_eq!(cfg.mode, ScheduleMode::Practical);
        assert_eq!(cfg.grid, 9);
    }

    #[test]
    fn even_grid_rejected() {
        let err = parse_config("model = \"pro2\"\neps = 1e-6\ngrid = 8\n").unwrap_err();
        match err {
            KamError::ConfigError { path, reason } => {
                assert_eq!(path, "grid");
                assert!(reason.contains("odd"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_named_in_error() {
        let err = parse_config("model = \"pro2\"\nepsilonn = 1e-6\n").unwrap_err();
        match err {
            KamError::ConfigError { reason, .. } => {
                assert!(reason.contains("epsilonn"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = parse_config(&default_config_toml()).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn empty_run_emits_header_only() {
        let csv = emit_report(&[], 2, ReportFormat::Csv);
        assert_eq!(csv.lines().count(), 1);
        assert!(csv.starts_with("step,r,s,mu,K,norm_P,holder_P,xi_1,xi_2,"));
        assert!(csv.trim_end().ends_with("H7_margin"));
    }

    #[test]
    fn emission_is_deterministic() {
        use crate::kam::driver::HypothesisReport;
        let rep = StepReport {
            step: 1,
            r: 0.375,
            s: 0.125,
            mu: 1e-7,
            k_plus: 94,
            norm_p: 1.25e-12,
            holder_p: 0.0,
            xi: vec![1e-4, -2e-4],
            xi_displacement: 3e-4,
            freq_residual: 1e-15,
            degree_at_box: Some(1),
            gamma_factor: 123.456,
            hypotheses: (1..=7)
                .map(|i| HypothesisReport {
                    name: format!("H{i}"),
                    satisfied: true,
                    margin: 0.5,
                    value: 0.1,
                    bound: 0.2,
                })
                .collect(),
            lie: None,
            wall_ms: 12.0,
        };
        let a = emit_report(&[rep.clone()], 2, ReportFormat::Csv);
        let mut rep2 = rep.clone();
        rep2.wall_ms = 99.0; // wall time must not influence the bytes
        let b = emit_report(&[rep2], 2, ReportFormat::Csv);
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 2);
        let cols = a.lines().nth(1).unwrap().split(',').count();
        assert_eq!(cols, 7 + 2 + 2 + 7);

        let j1 = emit_report(&[rep.clone()], 2, ReportFormat::Json);
        let j2 = emit_report(&[rep], 2, ReportFormat::Json);
        assert_eq!(j1, j2);
        assert!(!j1.contains("wall"));
    }
}
