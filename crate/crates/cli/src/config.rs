//! TOML configuration. Flags are folded into the same shape and override
//! the file field by field.

use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};

use ppk_core::fock::DEFAULT_DIM_CAP;
use serde::Deserialize;

use crate::error::{CliError, Result};
use crate::spec::{Axis, FixedParams, SchemeKind, SolverSettings, SweepSpec, Task, TrajectorySettings};

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub task: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSection {
    pub delta: Option<f64>,
    pub g: Option<f64>,
    pub u: Option<f64>,
    pub kappa: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSection {
    pub scheme: Option<SchemeKind>,
    pub theta: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub dim: Option<usize>,
    pub dim_cap: Option<usize>,
    pub omega_min: Option<f64>,
    pub omega_max: Option<f64>,
    pub omega_count: Option<usize>,
    pub wigner_points: Option<usize>,
    pub delta_min: Option<f64>,
    pub delta_max: Option<f64>,
    pub delta_step: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySection {
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub n_traj: Option<usize>,
    pub record_stride: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub params: ParamSection,
    #[serde(default)]
    pub measurement: MeasurementSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub trajectory: TrajectorySection,
    #[serde(default)]
    pub axes: Vec<Axis>,
}

macro_rules! overlay {
    ($base:expr, $top:expr; $($field:ident),+) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )+
    };
}

impl FileConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    /// Fields set in `top` win; axes are replaced only when `top` has any.
    pub fn overlay(mut self, top: &FileConfig) -> Self {
        overlay!(self.run, top.run; task, out, seed, workers);
        overlay!(self.params, top.params; delta, g, u, kappa);
        overlay!(self.measurement, top.measurement; scheme, theta);
        overlay!(self.solver, top.solver;
            dim, dim_cap, omega_min, omega_max, omega_count, wigner_points, delta_min, delta_max, delta_step);
        overlay!(self.trajectory, top.trajectory; dt, t_final, n_traj, record_stride);
        if !top.axes.is_empty() {
            self.axes = top.axes.clone();
        }
        self
    }

    /// Applies defaults and validates. Parameters scanned by an axis need
    /// no fixed value.
    pub fn resolve(&self) -> Result<SweepSpec> {
        let task: Task = match &self.run.task {
            Some(t) => t.parse().map_err(CliError::Validation)?,
            None => return Err(CliError::Validation("no task given".into())),
        };
        let scanned = |name: &str| self.axes.iter().any(|a| a.name == name);
        let required = |value: Option<f64>, name: &str, alias: Option<&str>| -> Result<f64> {
            match value {
                Some(v) => Ok(v),
                None if scanned(name) || alias.is_some_and(scanned) => Ok(f64::NAN),
                None => Err(CliError::Validation(format!("missing parameter '{name}'"))),
            }
        };
        let p = &self.params;
        let s = &self.solver;
        let t = &self.trajectory;
        let spec = SweepSpec {
            task,
            axes: self.axes.clone(),
            fixed: FixedParams {
                // the scaling task maximizes over the detuning itself
                delta: match task {
                    Task::Scaling => p.delta.unwrap_or(0.0),
                    _ => required(p.delta, "delta", None)?,
                },
                g: required(p.g, "g", None)?,
                u: required(p.u, "u", Some("kappa_over_u"))?,
                kappa: p.kappa.unwrap_or(1.0),
                scheme: self.measurement.scheme.unwrap_or_default(),
                theta: self.measurement.theta.unwrap_or(FRAC_PI_2),
            },
            solver: SolverSettings {
                dim: s.dim,
                dim_cap: s.dim_cap.unwrap_or(DEFAULT_DIM_CAP),
                omega_min: s.omega_min.unwrap_or(0.0),
                omega_max: s.omega_max.unwrap_or(10.0),
                omega_count: s.omega_count.unwrap_or(201),
                wigner_points: s.wigner_points.unwrap_or(101),
                delta_min: s.delta_min.unwrap_or(0.05),
                delta_max: s.delta_max.unwrap_or(3.0),
                delta_step: s.delta_step.unwrap_or(0.05),
            },
            trajectory: TrajectorySettings {
                dt: t.dt.unwrap_or(1e-3),
                t_final: t.t_final.unwrap_or(10.0),
                n_traj: t.n_traj.unwrap_or(1),
                record_stride: t.record_stride.unwrap_or(10),
            },
            out: self
                .run
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("{task}.csv"))),
            seed: self.run.seed.unwrap_or(0),
            workers: match self.run.workers {
                Some(w) => w,
                None => std::thread::available_parallelism().map_or(1, |n| n.get()),
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[run]
task = "diffusion"
seed = 3

[params]
g = 1.0
u = 0.1

[measurement]
scheme = "hom"

[[axes]]
name = "delta"
start = -1.0
stop = 1.0
count = 5
"#;

    #[test]
    fn file_parses_and_resolves_with_defaults() {
        let spec = FileConfig::from_toml(SAMPLE).unwrap().resolve().unwrap();
        assert_eq!(spec.task, Task::Diffusion);
        assert_eq!(spec.fixed.kappa, 1.0);
        assert_eq!(spec.fixed.scheme, SchemeKind::Hom);
        assert_eq!(spec.fixed.theta, FRAC_PI_2);
        assert_eq!(spec.point_count(), 5);
        assert_eq!(spec.out, PathBuf::from("diffusion.csv"));
    }

    #[test]
    fn flags_override_the_file() {
        let file = FileConfig::from_toml(SAMPLE).unwrap();
        let mut flags = FileConfig::default();
        flags.params.g = Some(0.8);
        flags.run.seed = Some(9);
        let spec = file.overlay(&flags).resolve().unwrap();
        assert_eq!(spec.fixed.g, 0.8);
        assert_eq!(spec.fixed.u, 0.1);
        assert_eq!(spec.seed, 9);
    }

    #[test]
    fn unknown_keys_and_missing_parameters_are_rejected() {
        assert!(FileConfig::from_toml("[params]\ngee = 1.0\n").is_err());
        let mut cfg = FileConfig::from_toml(SAMPLE).unwrap();
        cfg.params.u = None;
        assert!(matches!(cfg.resolve(), Err(CliError::Validation(m)) if m.contains("'u'")));
    }
}
