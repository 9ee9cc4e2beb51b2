//! Resolved run description: task, parameter axes, fixed values and numerics.
//! Every physical input is in units of kappa; kappa is recorded but the
//! numerics always run at kappa = 1.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ppk_core::{DimPolicy, MeasurementScheme, ModelParams};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    SteadyState,
    Spectrum,
    Diffusion,
    Wigner,
    Trajectory,
    Scaling,
    PhaseDiagram,
}

impl Task {
    pub const ALL: [Task; 7] = [
        Task::SteadyState,
        Task::Spectrum,
        Task::Diffusion,
        Task::Wigner,
        Task::Trajectory,
        Task::Scaling,
        Task::PhaseDiagram,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Task::SteadyState => "steady_state",
            Task::Spectrum => "spectrum",
            Task::Diffusion => "diffusion",
            Task::Wigner => "wigner",
            Task::Trajectory => "trajectory",
            Task::Scaling => "scaling",
            Task::PhaseDiagram => "phase_diagram",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = String;

    /// Accepts `steady_state` and `steady-state` alike.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let norm = s.replace('-', "_");
        Task::ALL
            .into_iter()
            .find(|t| t.name() == norm)
            .ok_or_else(|| format!("unknown task '{s}'"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    #[default]
    Pd,
    Hom,
}

impl SchemeKind {
    pub fn label(&self) -> &'static str {
        match self {
            SchemeKind::Pd => "pd",
            SchemeKind::Hom => "hom",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    #[default]
    Linear,
    Log,
}

/// Parameters an axis may scan. `kappa_over_u` sets `u = 1 / value`.
pub const AXIS_NAMES: [&str; 5] = ["delta", "g", "u", "kappa_over_u", "theta"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: String,
    pub start: f64,
    pub stop: f64,
    pub count: usize,
    #[serde(default)]
    pub spacing: Spacing,
}

impl Axis {
    pub fn linear(name: &str, start: f64, stop: f64, count: usize) -> Self {
        Self {
            name: name.into(),
            start,
            stop,
            count,
            spacing: Spacing::Linear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !AXIS_NAMES.contains(&self.name.as_str()) {
            return Err(CliError::Validation(format!(
                "unknown axis '{}' (expected one of {})",
                self.name,
                AXIS_NAMES.join(", ")
            )));
        }
        if self.count == 0 {
            return Err(CliError::Validation(format!("axis '{}' needs count >= 1", self.name)));
        }
        if !(self.start.is_finite() && self.stop.is_finite()) {
            return Err(CliError::Validation(format!(
                "axis '{}' has a non-finite bound",
                self.name
            )));
        }
        if self.spacing == Spacing::Log && !(self.start > 0.0 && self.stop > 0.0) {
            return Err(CliError::Validation(format!(
                "log-spaced axis '{}' needs positive bounds",
                self.name
            )));
        }
        Ok(())
    }

    /// Grid values; the end points are hit exactly.
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let last = (self.count - 1) as f64;
        (0..self.count)
            .map(|k| {
                if k == 0 {
                    return self.start;
                }
                if k + 1 == self.count {
                    return self.stop;
                }
                let s = k as f64 / last;
                match self.spacing {
                    Spacing::Linear => self.start + s * (self.stop - self.start),
                    Spacing::Log => (self.start.ln() + s * (self.stop.ln() - self.start.ln())).exp(),
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedParams {
    pub delta: f64,
    pub g: f64,
    pub u: f64,
    /// Recorded only.
    pub kappa: f64,
    pub scheme: SchemeKind,
    pub theta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverSettings {
    /// `None` selects the adaptive truncation rule.
    pub dim: Option<usize>,
    pub dim_cap: usize,
    pub omega_min: f64,
    pub omega_max: f64,
    pub omega_count: usize,
    pub wigner_points: usize,
    /// Detuning window of the scaling maximization.
    pub delta_min: f64,
    pub delta_max: f64,
    pub delta_step: f64,
}

impl SolverSettings {
    pub fn policy(&self) -> DimPolicy {
        match self.dim {
            Some(dim) => DimPolicy::Fixed(dim),
            None => DimPolicy::Adaptive { cap: self.dim_cap },
        }
    }

    pub fn omegas(&self) -> Vec<f64> {
        Axis::linear("omega", self.omega_min, self.omega_max, self.omega_count).values()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectorySettings {
    pub dt: f64,
    pub t_final: f64,
    pub n_traj: usize,
    pub record_stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub task: Task,
    /// Cartesian product, first axis outermost.
    pub axes: Vec<Axis>,
    pub fixed: FixedParams,
    pub solver: SolverSettings,
    pub trajectory: TrajectorySettings,
    pub out: PathBuf,
    pub seed: u64,
    pub workers: usize,
}

/// One parameter point of a sweep, in units of kappa.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub index: usize,
    pub delta: f64,
    pub g: f64,
    pub u: f64,
    pub theta: f64,
    pub scheme: SchemeKind,
}

impl Point {
    pub fn model_params(&self) -> ppk_core::Result<ModelParams> {
        ModelParams::in_kappa_units(self.delta, self.g, self.u)
    }

    pub fn measurement(&self) -> MeasurementScheme {
        match self.scheme {
            SchemeKind::Pd => MeasurementScheme::Photodetection,
            SchemeKind::Hom => MeasurementScheme::Homodyne { theta: self.theta },
        }
    }

    pub fn describe(&self) -> String {
        format!(
            "delta={}, g={}, u={}, scheme={}, theta={}",
            self.delta,
            self.g,
            self.u,
            self.scheme.label(),
            self.theta
        )
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "{name} must be positive and finite, got {x}"
        )))
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        for (i, axis) in self.axes.iter().enumerate() {
            axis.validate()?;
            if self.axes[..i].iter().any(|a| a.name == axis.name) {
                return Err(CliError::Validation(format!("axis '{}' given twice", axis.name)));
            }
        }
        let has = |n: &str| self.axes.iter().any(|a| a.name == n);
        if has("u") && has("kappa_over_u") {
            return Err(CliError::Validation("axes 'u' and 'kappa_over_u' are exclusive".into()));
        }
        positive("kappa", self.fixed.kappa)?;
        if !self.fixed.theta.is_finite() {
            return Err(CliError::Validation("theta must be finite".into()));
        }
        let s = &self.solver;
        if let Some(dim) = s.dim {
            if dim < 2 {
                return Err(CliError::Validation(format!("dim must be >= 2, got {dim}")));
            }
        }
        if s.dim_cap < 2 {
            return Err(CliError::Validation("dim_cap must be >= 2".into()));
        }
        if s.omega_count == 0 || !(s.omega_min >= 0.0 && s.omega_max >= s.omega_min && s.omega_max.is_finite()) {
            return Err(CliError::Validation(format!(
                "omega grid needs 0 <= omega_min <= omega_max and omega_count >= 1, got [{}, {}] x {}",
                s.omega_min, s.omega_max, s.omega_count
            )));
        }
        if s.wigner_points < 3 {
            return Err(CliError::Validation("wigner_points must be >= 3".into()));
        }
        positive("delta_step", s.delta_step)?;
        if !(s.delta_max > s.delta_min && s.delta_min.is_finite() && s.delta_max.is_finite()) {
            return Err(CliError::Validation(
                "scaling window needs delta_max > delta_min".into(),
            ));
        }
        let t = &self.trajectory;
        positive("dt", t.dt)?;
        positive("t_final", t.t_final)?;
        if t.t_final <= t.dt {
            return Err(CliError::Validation(format!(
                "t_final ({}) must exceed dt ({})",
                t.t_final, t.dt
            )));
        }
        if t.n_traj == 0 || t.record_stride == 0 {
            return Err(CliError::Validation("n_traj and record_stride must be >= 1".into()));
        }
        if self.workers == 0 {
            return Err(CliError::Validation("workers must be >= 1".into()));
        }
        if let Some(dir) = self.out.parent().filter(|d| !d.as_os_str().is_empty()) {
            if !dir.is_dir() {
                return Err(CliError::Validation(format!(
                    "output directory {} does not exist",
                    dir.display()
                )));
            }
        }
        for p in self.points() {
            p.model_params()
                .map_err(|e| CliError::Validation(format!("point {} ({}): {e}", p.index, p.describe())))?;
        }
        Ok(())
    }

    pub fn point_count(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn points(&self) -> Vec<Point> {
        let grids: Vec<Vec<f64>> = self.axes.iter().map(Axis::values).collect();
        let total = self.point_count();
        (0..total)
            .map(|index| {
                let mut p = Point {
                    index,
                    delta: self.fixed.delta,
                    g: self.fixed.g,
                    u: self.fixed.u,
                    theta: self.fixed.theta,
                    scheme: self.fixed.scheme,
                };
                // row-major: the last axis varies fastest
                let mut rem = index;
                for (axis, grid) in self.axes.iter().zip(&grids).rev() {
                    let v = grid[rem % axis.count];
                    rem /= axis.count;
                    match axis.name.as_str() {
                        "delta" => p.delta = v,
                        "g" => p.g = v,
                        "u" => p.u = v,
                        "kappa_over_u" => p.u = 1.0 / v,
                        "theta" => p.theta = v,
                        other => unreachable!("axis {other} passed validation"),
                    }
                }
                p
            })
            .collect()
    }

    /// Trajectory seed of a point.
    pub fn point_seed(&self, point: &Point) -> u64 {
        self.seed.wrapping_add(point.index as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_axis_hits_end_points() {
        let a = Axis {
            spacing: Spacing::Log,
            ..Axis::linear("g", 0.1, 10.0, 3)
        };
        let v = a.values();
        assert_eq!(v[0], 0.1);
        assert!((v[1] - 1.0).abs() < 1e-15);
        assert_eq!(v[2], 10.0);
    }

    #[test]
    fn task_names_parse_both_ways() {
        for t in Task::ALL {
            assert_eq!(t.name().parse::<Task>().unwrap(), t);
            assert_eq!(t.name().replace('_', "-").parse::<Task>().unwrap(), t);
        }
        assert!("spectra".parse::<Task>().is_err());
    }
}
