//! Experiment files: one TOML document per invocation, with command-line
//! overrides applied on top.

use std::fmt;
use std::path::Path;

use oscloop_core::blocks::{LinearBlockSpec, LoopConfig, RelayState, SaturationSpec};
use oscloop_core::profiler::{linspace, MapOptions, ProfileThresholds, SweepOptions, SweepParam};
use oscloop_core::simulator::SimSettings;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CommandName {
    Simulate,
    Period,
    Existence,
    Rlocus,
    Hbalance,
    Boundary,
    Sweep,
    Bifurcation,
}

impl fmt::Display for CommandName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Stepped,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchName {
    High,
    Low,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_plus: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_minus: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub integrator: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_stride: Option<usize>,
    /// Cycles for the exact relaxation method.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cycles: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub branch: Option<BranchName>,
    /// Start on the marginal loop's sinusoidal cycle with this amplitude.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl Range {
    pub fn values(&self) -> Vec<f64> {
        linspace(self.start, self.stop, self.count)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub param: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub range: Option<Range>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cycles: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub varying: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_points: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_plus: Option<Range>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_minus: Option<Range>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlocusSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_plus: Option<Range>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<CommandName>,
    #[serde(rename = "loop", default, skip_serializing_if = "is_default")]
    pub loop_: LoopSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub sim: SimSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub init: InitSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub sweep: SweepSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub grid: GridSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub rlocus: RlocusSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub boundary: BoundarySection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub output: OutputSection,
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub k_plus: Option<f64>,
    pub k_minus: Option<f64>,
    pub alpha: Option<f64>,
    pub n: Option<u32>,
    pub integrator: bool,
    pub out: Option<String>,
    pub format: Option<Format>,
}

fn is_default<T: Default + PartialEq>(value: &T) -> bool {
    *value == T::default()
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| config_err(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| config_err(format!("cannot serialize config: {e}")))
    }

    /// Binds the file to `command` and applies the overrides. A file naming a
    /// different command is rejected.
    pub fn resolve(mut self, command: CommandName, ov: &Overrides) -> Result<Self, CliError> {
        if let Some(named) = self.command {
            if named != command {
                return Err(config_err(format!("config is for `{named}`, not `{command}`")));
            }
        }
        self.command = Some(command);
        let l = &mut self.loop_;
        l.a = ov.a.or(l.a);
        l.b = ov.b.or(l.b);
        l.k_plus = ov.k_plus.or(l.k_plus);
        l.k_minus = ov.k_minus.or(l.k_minus);
        l.alpha = ov.alpha.or(l.alpha);
        if let Some(n) = ov.n {
            l.n = Some(n);
            l.integrator = None;
        }
        if ov.integrator {
            l.integrator = Some(true);
        }
        self.output.path = ov.out.clone().or(self.output.path.take());
        self.output.format = ov.format.or(self.output.format);
        Ok(self)
    }

    pub fn loop_config(&self) -> Result<LoopConfig, CliError> {
        let l = &self.loop_;
        let sat = SaturationSpec::new(l.a.unwrap_or(1.0), l.b.unwrap_or(1.0))?;
        let linear = if l.integrator.unwrap_or(false) {
            LinearBlockSpec::Integrator
        } else {
            LinearBlockSpec::lag(l.n.unwrap_or(1), l.alpha.unwrap_or(1.0))?
        };
        Ok(LoopConfig::new(sat, l.k_plus.unwrap_or(0.0), l.k_minus.unwrap_or(1.0), linear)?)
    }

    pub fn sim_settings(&self, cfg: &LoopConfig) -> Result<SimSettings, CliError> {
        let s = &self.sim;
        let mut settings = SimSettings::for_loop(cfg, s.t_final.unwrap_or(100.0 / cfg.linear.rate()));
        settings.dt = s.dt.unwrap_or(settings.dt);
        settings.event_tol = s.event_tol.unwrap_or(settings.event_tol);
        settings.record_stride = s.record_stride.unwrap_or(settings.record_stride);
        settings.validate()?;
        Ok(settings)
    }

    pub fn method(&self) -> Method {
        self.sim.method.unwrap_or(Method::Stepped)
    }

    pub fn cycles(&self) -> usize {
        self.sim.cycles.unwrap_or(20)
    }

    pub fn branch(&self) -> RelayState {
        match self.init.branch {
            Some(BranchName::Low) => RelayState::Low,
            _ => RelayState::High,
        }
    }

    pub fn format(&self) -> Format {
        self.output.format.unwrap_or(Format::Csv)
    }

    pub fn sweep_param(&self) -> Result<SweepParam, CliError> {
        let name = self.sweep.param.as_deref().ok_or_else(|| config_err("sweep.param is required"))?;
        Ok(name.parse()?)
    }

    pub fn sweep_values(&self) -> Result<Vec<f64>, CliError> {
        match (&self.sweep.values, &self.sweep.range) {
            (Some(v), None) => Ok(v.clone()),
            (None, Some(r)) => Ok(r.values()),
            _ => Err(config_err("sweep needs exactly one of `values` or `range`")),
        }
    }

    pub fn sweep_options(&self) -> SweepOptions {
        let d = SweepOptions::default();
        SweepOptions { cycles: self.sweep.cycles.unwrap_or(d.cycles), horizon: self.sweep.horizon.unwrap_or(d.horizon) }
    }

    pub fn thresholds(&self) -> ProfileThresholds {
        let d = ProfileThresholds::default();
        ProfileThresholds {
            flat: self.sweep.flat.unwrap_or(d.flat),
            varying: self.sweep.varying.unwrap_or(d.varying),
            min_points: self.sweep.min_points.unwrap_or(d.min_points),
        }
    }

    pub fn grid(&self) -> Result<(Vec<f64>, Vec<f64>, MapOptions), CliError> {
        let kp = self.grid.k_plus.ok_or_else(|| config_err("grid.k_plus is required"))?;
        let km = self.grid.k_minus.ok_or_else(|| config_err("grid.k_minus is required"))?;
        let d = MapOptions::default();
        let opts =
            MapOptions { horizon: self.grid.horizon.unwrap_or(d.horizon), margin: self.grid.margin.unwrap_or(d.margin) };
        Ok((kp.values(), km.values(), opts))
    }
}
