//! Run configuration files.
//!
//! A config is TOML with explicit units in every physical key:
//!
//! ```toml
//! scenario = "g2_map"
//! preset = "qd_a"          # optional base for [params]
//! output_dir = "out"
//! jitter_ps = [50, 500]
//!
//! [params]
//! gamma_star_per_ns = 3.0  # overlays the preset
//!
//! [[axes]]
//! name = "qd_common_offset_ghz"
//! start = -6.0
//! stop = 6.0
//! n_points = 121
//! ```
//!
//! Without a preset, `[params]` must be complete.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::FreeParam;
use crate::model::SystemParams;
use crate::solver::PropagationSpec;
use crate::sweeps::{Axis, Scenario, SearchGrid, Variant};

const QD_A: &str = include_str!("../presets/qd_a.toml");
const QD_B: &str = include_str!("../presets/qd_b.toml");

/// Names of the bundled parameter sets.
pub const PRESETS: [&str; 2] = ["qd_a", "qd_b"];

/// What a run produces. Accepts both the sweep scenario names and the
/// command names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Job {
    #[serde(alias = "transmission_map")]
    TransmissionMap,
    #[serde(alias = "g2_map")]
    G2Map,
    #[serde(alias = "g2_trace", alias = "g2_trace_point")]
    G2Trace,
    #[serde(alias = "photon_number", alias = "pn_vs_theta")]
    PhotonNumber,
    #[serde(alias = "kappa_sweep")]
    KappaSweep,
    #[serde(alias = "ablation_single_transition")]
    Ablation,
    #[serde(alias = "dephasing_study")]
    DephasingStudy,
    Fit,
    #[serde(alias = "special_angles")]
    SpecialAngles,
    #[serde(alias = "params_report")]
    ParamsReport,
}

impl Job {
    pub fn scenario(&self) -> Option<Scenario> {
        Some(match self {
            Job::TransmissionMap => Scenario::TransmissionMap,
            Job::G2Map => Scenario::G2Map,
            Job::G2Trace => Scenario::G2TracePoint,
            Job::PhotonNumber => Scenario::PnVsTheta,
            Job::KappaSweep => Scenario::KappaSweep,
            Job::Ablation => Scenario::AblationSingleTransition,
            Job::DephasingStudy => Scenario::DephasingStudy,
            Job::Fit | Job::SpecialAngles | Job::ParamsReport => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Job::TransmissionMap => "transmission-map",
            Job::G2Map => "g2-map",
            Job::G2Trace => "g2-trace",
            Job::PhotonNumber => "photon-number",
            Job::KappaSweep => "kappa-sweep",
            Job::Ablation => "ablation",
            Job::DephasingStudy => "dephasing-study",
            Job::Fit => "fit",
            Job::SpecialAngles => "special-angles",
            Job::ParamsReport => "params-report",
        }
    }
}

impl fmt::Display for Job {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(Error::Config(format!("unknown format `{s}` (expected csv or json)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    /// Long-format transmission CSV.
    pub data: PathBuf,
    #[serde(default = "all_free")]
    pub free: Vec<FreeParam>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_true")]
    pub profile_scales: bool,
}

fn all_free() -> Vec<FreeParam> {
    FreeParam::ALL.to_vec()
}

fn default_restarts() -> usize {
    3
}

fn default_true() -> bool {
    true
}

fn default_output_dir() -> PathBuf {
    PathBuf::from(".")
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Job>,
    pub params: SystemParams,
    /// Sweep axes; the scenario defaults apply when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axes: Option<Vec<Axis>>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_fock: Option<usize>,
    #[serde(default)]
    pub jitter_ps: Vec<f64>,
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_out_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propagation: Option<PropagationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variants: Option<Vec<Variant>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSection>,
}

impl RunConfig {
    pub fn from_params(params: SystemParams) -> Self {
        Self {
            scenario: None,
            params,
            axes: None,
            output_dir: default_output_dir(),
            n_fock: None,
            jitter_ps: Vec::new(),
            format: OutputFormat::Csv,
            threads: None,
            theta_out_deg: None,
            search: None,
            propagation: None,
            variants: None,
            fit: None,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        Ok(Self::from_params(preset_params(name)?))
    }

    /// Parameters with the `n_fock` override applied.
    pub fn resolved_params(&self) -> SystemParams {
        let mut p = self.params.clone();
        if let Some(n) = self.n_fock {
            p.n_fock = n;
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        self.resolved_params().validate()?;
        if let Some(axes) = &self.axes {
            for a in axes {
                a.validate()?;
            }
        }
        for &j in &self.jitter_ps {
            if !(j > 0.0) || !j.is_finite() {
                return Err(Error::param("jitter_ps", format!("must be > 0, got {j}")));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::param("threads", "must be ≥ 1"));
        }
        if let Some(t) = self.theta_out_deg {
            if !t.is_finite() {
                return Err(Error::NonFinite("theta_out_deg".into()));
            }
        }
        Ok(())
    }

    /// The config as TOML, with the resolved parameter block.
    pub fn to_toml(&self) -> String {
        let mut c = self.clone();
        c.params = self.resolved_params();
        c.n_fock = None;
        toml::to_string(&c).expect("run config serializes")
    }
}

fn preset_table(name: &str) -> Result<toml::Table> {
    let text = match name {
        "qd_a" => QD_A,
        "qd_b" => QD_B,
        _ => {
            return Err(Error::Config(format!(
                "unknown preset `{name}` (available: {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(text.parse().expect("bundled presets parse"))
}

pub fn preset_params(name: &str) -> Result<SystemParams> {
    preset_table(name)?
        .try_into()
        .map_err(|e| Error::Config(format!("preset {name}: {e}")))
}

/// Parses config text. `origin` labels diagnostics.
pub fn parse_config(text: &str, origin: &str) -> Result<RunConfig> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(format!("{origin}: {e}")))?;
    if let Some(preset) = table.remove("preset") {
        let name = preset
            .as_str()
            .ok_or_else(|| Error::Config(format!("{origin}: `preset` must be a string")))?;
        let mut params = preset_table(name)?;
        match table.remove("params") {
            Some(toml::Value::Table(over)) => params.extend(over),
            Some(_) => return Err(Error::Config(format!("{origin}: `params` must be a table"))),
            None => {}
        }
        table.insert("params".into(), toml::Value::Table(params));
    }
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("{origin}: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_builtin_sets() {
        assert_eq!(preset_params("qd_a").unwrap(), SystemParams::qd_a());
        assert_eq!(preset_params("qd_b").unwrap(), SystemParams::qd_b());
        assert!(matches!(preset_params("qd_c"), Err(Error::Config(_))));
    }

    #[test]
    fn preset_overlay() {
        let cfg = parse_config("preset = \"qd_a\"\n[params]\ngamma_star_per_ns = 0.5\n", "test").unwrap();
        assert_eq!(cfg.params.gamma_star, 0.5);
        assert_eq!(cfg.params.kappa, 69.0);
    }

    #[test]
    fn missing_field_is_named() {
        let text = QD_A.replace("kappa_per_ns = 69.0\n", "");
        let text = format!("[params]\n{text}");
        let err = parse_config(&text, "cfg.toml").unwrap_err().to_string();
        assert!(err.contains("kappa_per_ns"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = parse_config("preset = \"qd_a\"\nkapa = 3\n", "cfg.toml").unwrap_err();
        assert!(err.to_string().contains("kapa"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn job_names_accept_scenarios() {
        let cfg = parse_config("preset = \"qd_b\"\nscenario = \"pn_vs_theta\"\n", "t").unwrap();
        assert_eq!(cfg.scenario, Some(Job::PhotonNumber));
        let cfg = parse_config("preset = \"qd_b\"\nscenario = \"g2-trace\"\n", "t").unwrap();
        assert_eq!(cfg.scenario, Some(Job::G2Trace));
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::preset("qd_a").unwrap();
        cfg.n_fock = Some(5);
        cfg.jitter_ps = vec![50.0, 500.0];
        let back = parse_config(&cfg.to_toml(), "t").unwrap();
        assert_eq!(back.params.n_fock, 5);
        assert_eq!(back.jitter_ps, cfg.jitter_ps);
    }
}
