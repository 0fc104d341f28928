//! Scenario configuration: one structured text file drives every command.
//! TOML is the primary format; JSON is accepted too since summaries are
//! JSON.

use std::path::Path;

use anyhow::{bail, Context, Result};
use battkit_core::cell::CellSpec;
use battkit_core::pipeline::{SequentialPlan, StepPlan, Tuning};
use battkit_core::InitialGuesses;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub cell: CellConfig,
    /// Injection plans; defaults derive from the cell when omitted.
    #[serde(default)]
    pub step1: Option<StepPlan>,
    #[serde(default)]
    pub step2: Option<StepPlan>,
    /// Idle gap between steps, seconds.
    #[serde(default = "default_gap")]
    pub gap_s: f64,
    #[serde(default)]
    pub drive: DriveConfig,
    #[serde(default)]
    pub init: InitConfig,
    /// Estimator noise/solver knobs; cell defaults when omitted.
    #[serde(default)]
    pub tuning: Option<Tuning>,
    #[serde(default)]
    pub analyze: AnalyzeConfig,
    #[serde(default)]
    pub compare: CompareConfig,
}

fn default_gap() -> f64 {
    87.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    /// Named preset: "samsung-18650-20C" or "samsung-18650-40C".
    #[serde(default)]
    pub preset: Option<String>,
    /// Inline overrides (applied on top of the preset, or on the 20C
    /// defaults when no preset is named).
    #[serde(default)]
    pub q_b_ah: Option<f64>,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub r_s_ohm: Option<f64>,
    #[serde(default)]
    pub r_t_ohm: Option<f64>,
    #[serde(default)]
    pub tau_s: Option<f64>,
    #[serde(default)]
    pub sigma_v_v: Option<f64>,
}

impl CellConfig {
    pub fn resolve(&self) -> Result<CellSpec> {
        let mut spec = match self.preset.as_deref() {
            None => CellSpec::samsung_18650_20c(),
            Some(name) => CellSpec::preset(name)
                .with_context(|| format!("unknown cell preset '{name}'"))?,
        };
        if let Some(q) = self.q_b_ah {
            spec.q_b = q;
        }
        if let Some(eta) = self.eta {
            spec.eta = eta;
        }
        if let Some(r) = self.r_s_ohm {
            spec.ecm.r_s = r;
        }
        if let Some(r) = self.r_t_ohm {
            spec.ecm.r_t = r;
        }
        if let Some(t) = self.tau_s {
            spec.ecm.tau = t;
        }
        if let Some(s) = self.sigma_v_v {
            spec.sigma_v = s;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveConfig {
    /// "synthetic" builds a seeded drive cycle; a path ingests `t_s,i_A`.
    #[serde(default = "default_source")]
    pub source: String,
    #[serde(default = "default_drive_ts")]
    pub t_s: f64,
    #[serde(default = "default_drive_duration")]
    pub duration_s: f64,
    /// Peak current of the synthetic cycle as a C-rate multiple.
    #[serde(default = "default_peak_c")]
    pub peak_c_rate: f64,
}

fn default_source() -> String {
    "synthetic".into()
}
fn default_drive_ts() -> f64 {
    1.0
}
fn default_drive_duration() -> f64 {
    3600.0
}
fn default_peak_c() -> f64 {
    1.0
}

impl Default for DriveConfig {
    fn default() -> Self {
        DriveConfig {
            source: default_source(),
            t_s: default_drive_ts(),
            duration_s: default_drive_duration(),
            peak_c_rate: default_peak_c(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    /// Estimator initial guesses.
    #[serde(default = "default_guesses")]
    pub guesses: InitialGuesses,
    /// True initial cell state for simulation.
    #[serde(default = "default_true_soc")]
    pub true_soc: f64,
    #[serde(default)]
    pub true_v_c: f64,
}

fn default_guesses() -> InitialGuesses {
    InitialGuesses::default()
}
fn default_true_soc() -> f64 {
    0.8
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            guesses: InitialGuesses::default(),
            true_soc: default_true_soc(),
            true_v_c: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    #[serde(default = "default_analyze_freqs")]
    pub frequencies_hz: Vec<f64>,
    /// Filter time constant, seconds; sets the high-pass bandwidth.
    #[serde(default = "default_tc")]
    pub t_c_s: f64,
    /// Injection amplitude as a C-rate multiple.
    #[serde(default = "default_analyze_amp")]
    pub amplitude_c_rate: f64,
    /// SoC the linearization is taken around.
    #[serde(default = "default_true_soc")]
    pub soc: f64,
}

fn default_analyze_freqs() -> Vec<f64> {
    vec![0.4, 0.004, 0.0004]
}
fn default_tc() -> f64 {
    80.0
}
fn default_analyze_amp() -> f64 {
    0.5
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig {
            frequencies_hz: default_analyze_freqs(),
            t_c_s: default_tc(),
            amplitude_c_rate: default_analyze_amp(),
            soc: default_true_soc(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    /// Parameter-update decimation of the concurrent arm.
    #[serde(default = "default_macro_ratio")]
    pub macro_ratio: usize,
    /// Multi-sine amplitude for the concurrent excitation, C-rate.
    #[serde(default = "default_analyze_amp")]
    pub multisine_c_rate: f64,
}

fn default_seeds() -> usize {
    20
}
fn default_macro_ratio() -> usize {
    10
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            seeds: default_seeds(),
            macro_ratio: default_macro_ratio(),
            multisine_c_rate: default_analyze_amp(),
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: ScenarioConfig = if path.extension().and_then(|e| e.to_str()) == Some("json") {
            serde_json::from_str(&text)
                .with_context(|| format!("invalid JSON config {}", path.display()))?
        } else {
            toml::from_str(&text)
                .with_context(|| format!("invalid config {}", path.display()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.cell.resolve()?;
        if let Some(p) = &self.step1 {
            p.validate()?;
        }
        if let Some(p) = &self.step2 {
            p.validate()?;
        }
        if self.gap_s < 0.0 {
            bail!("gap_s must be non-negative");
        }
        if self.drive.source != "synthetic" && !Path::new(&self.drive.source).exists() {
            bail!(
                "drive source '{}' is neither \"synthetic\" nor an existing file",
                self.drive.source
            );
        }
        let g = &self.init.guesses;
        if !(g.r_s > 0.0 && g.r_t > 0.0 && g.tau > 0.0 && g.q_b > 0.0) {
            bail!("initial guesses must be positive");
        }
        if !(0.0..=1.0).contains(&self.init.true_soc) {
            bail!("true_soc must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn sequential_plan(&self, spec: &CellSpec) -> SequentialPlan {
        SequentialPlan {
            step1: self
                .step1
                .clone()
                .unwrap_or_else(|| StepPlan::step1_default(spec)),
            step2: self
                .step2
                .clone()
                .unwrap_or_else(|| StepPlan::step2_default(spec)),
            gap_s: self.gap_s,
        }
    }

    pub fn tuning(&self, spec: &CellSpec) -> Tuning {
        self.tuning.clone().unwrap_or_else(|| Tuning::for_cell(spec))
    }

    /// A minimal default scenario (20C preset, default injection plans).
    pub fn default_20c() -> Self {
        ScenarioConfig {
            cell: CellConfig {
                preset: Some("samsung-18650-20C".into()),
                q_b_ah: None,
                eta: None,
                r_s_ohm: None,
                r_t_ohm: None,
                tau_s: None,
                sigma_v_v: None,
            },
            step1: None,
            step2: None,
            gap_s: default_gap(),
            drive: DriveConfig::default(),
            init: InitConfig::default(),
            tuning: None,
            analyze: AnalyzeConfig::default(),
            compare: CompareConfig::default(),
        }
    }
}
