//! Command-line flags, folded into a [`FileConfig`] overlay.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::FileConfig;
use crate::error::Result;
use crate::spec::{Axis, SchemeKind, SweepSpec, Task};

#[derive(Debug, Parser)]
#[command(
    name = "ppk",
    version,
    about = "Parametrically pumped Kerr resonator: steady states, current noise, trajectories"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Steady-state occupation and diagnostics.
    SteadyState(Common),
    /// Steady-state Wigner function on a square grid.
    Wigner {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        wigner: WignerArgs,
    },
    /// Current noise spectrum S(omega).
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        omega: OmegaArgs,
    },
    /// Mean current and diffusion coefficient.
    Diffusion(Common),
    /// Quantum-trajectory records (photodetection or homodyne).
    Trajectory {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        traj: TrajArgs,
    },
    /// Any task over the axes of a config file.
    Sweep {
        #[arg(long, value_parser = parse_task)]
        task: Option<Task>,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        omega: OmegaArgs,
        #[command(flatten)]
        traj: TrajArgs,
        #[command(flatten)]
        wigner: WignerArgs,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Maximal D_PD and D_Hom over the detuning against kappa/U.
    Scaling {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        search: SearchArgs,
        #[command(flatten)]
        ratio: RatioArgs,
    },
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    s.parse()
}

#[derive(Debug, Default, Args)]
pub struct Common {
    /// TOML file with [run], [params], [measurement], [solver], [trajectory] and [[axes]].
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub delta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub g: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub u: Option<f64>,
    /// Recorded; all other inputs are in units of kappa.
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub theta: Option<f64>,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeKind>,
    /// Fixed Fock dimension (adaptive when omitted).
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub dim_cap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Continue an interrupted run from its manifest.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Default, Args)]
pub struct OmegaArgs {
    #[arg(long)]
    pub omega_min: Option<f64>,
    #[arg(long)]
    pub omega_max: Option<f64>,
    #[arg(long)]
    pub omega_count: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct TrajArgs {
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_final: Option<f64>,
    #[arg(long)]
    pub n_traj: Option<usize>,
    /// Integration steps per recorded sample.
    #[arg(long)]
    pub record_stride: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct WignerArgs {
    /// Grid points per side of the initial grid.
    #[arg(long)]
    pub points: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct SearchArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub delta_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub delta_max: Option<f64>,
    #[arg(long)]
    pub delta_step: Option<f64>,
}

#[derive(Debug, Default, Args)]
pub struct RatioArgs {
    /// kappa/U grid (linear); defaults to 2..12 in steps of 1.
    #[arg(long)]
    pub ratio_min: Option<f64>,
    #[arg(long)]
    pub ratio_max: Option<f64>,
    #[arg(long)]
    pub ratio_count: Option<usize>,
}

impl Common {
    fn overlay(&self, cfg: &mut FileConfig) {
        cfg.params.delta = self.delta;
        cfg.params.g = self.g;
        cfg.params.u = self.u;
        cfg.params.kappa = self.kappa;
        cfg.measurement.theta = self.theta;
        cfg.measurement.scheme = self.scheme;
        cfg.solver.dim = self.dim;
        cfg.solver.dim_cap = self.dim_cap;
        cfg.run.seed = self.seed;
        cfg.run.out = self.out.clone();
        cfg.run.workers = self.workers;
    }
}

impl OmegaArgs {
    fn overlay(&self, cfg: &mut FileConfig) {
        cfg.solver.omega_min = self.omega_min;
        cfg.solver.omega_max = self.omega_max;
        cfg.solver.omega_count = self.omega_count;
    }
}

impl TrajArgs {
    fn overlay(&self, cfg: &mut FileConfig) {
        cfg.trajectory.dt = self.dt;
        cfg.trajectory.t_final = self.t_final;
        cfg.trajectory.n_traj = self.n_traj;
        cfg.trajectory.record_stride = self.record_stride;
    }
}

impl SearchArgs {
    fn overlay(&self, cfg: &mut FileConfig) {
        cfg.solver.delta_min = self.delta_min;
        cfg.solver.delta_max = self.delta_max;
        cfg.solver.delta_step = self.delta_step;
    }
}

pub const DEFAULT_RATIOS: (f64, f64, usize) = (2.0, 12.0, 11);

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::SteadyState(c) | Command::Diffusion(c) => c,
            Command::Wigner { common, .. }
            | Command::Spectrum { common, .. }
            | Command::Trajectory { common, .. }
            | Command::Sweep { common, .. }
            | Command::Scaling { common, .. } => common,
        }
    }

    /// File config (if any) overlaid with the flags, resolved and validated.
    /// Returns the spec and the resume flag.
    pub fn to_spec(&self) -> Result<(SweepSpec, bool)> {
        let common = self.common();
        let file = match &common.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let mut flags = FileConfig::default();
        common.overlay(&mut flags);
        let task = match self {
            Command::SteadyState(_) => Some(Task::SteadyState),
            Command::Diffusion(_) => Some(Task::Diffusion),
            Command::Wigner { wigner, .. } => {
                flags.solver.wigner_points = wigner.points;
                Some(Task::Wigner)
            }
            Command::Spectrum { omega, .. } => {
                omega.overlay(&mut flags);
                Some(Task::Spectrum)
            }
            Command::Trajectory { traj, .. } => {
                traj.overlay(&mut flags);
                Some(Task::Trajectory)
            }
            Command::Sweep {
                task,
                omega,
                traj,
                wigner,
                search,
                ..
            } => {
                omega.overlay(&mut flags);
                traj.overlay(&mut flags);
                search.overlay(&mut flags);
                flags.solver.wigner_points = wigner.points;
                *task
            }
            Command::Scaling { search, .. } => {
                search.overlay(&mut flags);
                Some(Task::Scaling)
            }
        };
        flags.run.task = task.map(|t| t.name().to_string());
        let mut cfg = file.overlay(&flags);
        if let Command::Scaling { ratio, .. } = self {
            let given = ratio.ratio_min.is_some() || ratio.ratio_max.is_some() || ratio.ratio_count.is_some();
            let has_axis = cfg.axes.iter().any(|a| a.name == "kappa_over_u" || a.name == "u");
            if given || !has_axis {
                cfg.axes.retain(|a| a.name != "kappa_over_u" && a.name != "u");
                let (lo, hi, n) = DEFAULT_RATIOS;
                cfg.axes.push(Axis::linear(
                    "kappa_over_u",
                    ratio.ratio_min.unwrap_or(lo),
                    ratio.ratio_max.unwrap_or(hi),
                    ratio.ratio_count.unwrap_or(n),
                ));
            }
        }
        Ok((cfg.resolve()?, common.resume))
    }
}
