//! Column layout and per-point computation for each task. Workers only see
//! `(spec, point) -> rows`.

use ppk_core::fcs::{self, LineSearch};
use ppk_core::trajectories::{run_ensemble, TrajectoryConfig};
use ppk_core::wigner::wigner_auto;
use ppk_core::{model, CountingStatistics, DensityMatrix, MeasurementScheme, PpkSystem};

use crate::spec::{Point, SweepSpec, Task};
use crate::table::{col, Column, Kind, Value};

pub type Rows = Vec<Vec<Value>>;

fn floats(names: &[&str]) -> Vec<Column> {
    names.iter().map(|n| col(n, Kind::Float)).collect()
}

pub fn columns(task: Task) -> Vec<Column> {
    use Kind::*;
    let mut c = floats(&["g", "delta", "u", "kappa"]);
    match task {
        Task::SteadyState => {
            c.push(col("dim", Int));
            c.extend(floats(&["mean_n", "purity", "residual_norm", "top_population"]));
        }
        Task::PhaseDiagram => {
            c.push(col("dim", Int));
            c.extend(floats(&["n_scaled", "mean_n", "residual_norm", "top_population"]));
        }
        Task::Spectrum => {
            c.extend([col("scheme", Text), col("theta", Float), col("dim", Int)]);
            c.extend(floats(&["omega", "spectrum", "mean_current", "imag_residual"]));
        }
        Task::Diffusion => {
            c.extend([col("scheme", Text), col("theta", Float), col("dim", Int)]);
            c.extend(floats(&["mean_current", "diffusion", "residual_norm"]));
        }
        Task::Wigner => {
            c.push(col("dim", Int));
            c.extend(floats(&["x", "p", "w", "normalization", "edge_mass"]));
        }
        Task::Trajectory => {
            c.extend([
                col("scheme", Text),
                col("theta", Float),
                col("dim", Int),
                col("traj", Int),
            ]);
            c.extend(floats(&["t", "current", "mean_n", "mean_x", "mean_p"]));
        }
        Task::Scaling => {
            c = floats(&["g", "u", "kappa_over_u", "kappa", "theta"]);
            for s in ["pd", "hom"] {
                c.push(col(&format!("delta_max_{s}"), Float));
                c.push(col(&format!("diffusion_max_{s}"), Float));
                c.push(col(&format!("at_boundary_{s}"), Bool));
            }
        }
    }
    c
}

fn prefix(spec: &SweepSpec, p: &Point) -> Vec<Value> {
    vec![p.g.into(), p.delta.into(), p.u.into(), spec.fixed.kappa.into()]
}

fn scheme_cells(p: &Point) -> [Value; 2] {
    let m = p.measurement();
    [m.label().into(), m.theta().into()]
}

pub fn compute(spec: &SweepSpec, p: &Point) -> ppk_core::Result<Rows> {
    let params = p.model_params()?;
    let policy = spec.solver.policy();
    match spec.task {
        Task::SteadyState | Task::PhaseDiagram => {
            let sys = PpkSystem::build(&params, policy)?;
            log::info!("point {}: dim {}", p.index, sys.dim());
            let mean_n = sys.mean_photon_number();
            let mut row = prefix(spec, p);
            row.push(sys.dim().into());
            if spec.task == Task::SteadyState {
                row.extend([mean_n.into(), sys.rho_ss().purity().into()]);
            } else {
                row.extend([(mean_n * p.u).into(), mean_n.into()]);
            }
            row.extend([sys.steady.residual.into(), sys.top_population.into()]);
            Ok(vec![row])
        }
        Task::Spectrum => {
            let sys = PpkSystem::build(&params, policy)?;
            log::info!("point {}: dim {}", p.index, sys.dim());
            let s = CountingStatistics::new(&sys, p.measurement())?.spectrum(&spec.solver.omegas())?;
            Ok(s.omegas
                .iter()
                .zip(&s.values)
                .map(|(&w, &v)| {
                    let mut row = prefix(spec, p);
                    row.extend(scheme_cells(p));
                    row.extend([sys.dim().into(), w.into(), v.into(), s.mean_current.into()]);
                    row.push(s.max_imag_residual.into());
                    row
                })
                .collect())
        }
        Task::Diffusion => {
            let d = fcs::diffusion_point(&params, p.measurement(), policy)?;
            log::info!("point {}: dim {}", p.index, d.dim);
            let mut row = prefix(spec, p);
            row.extend(scheme_cells(p));
            row.extend([
                d.dim.into(),
                d.mean_current.into(),
                d.diffusion.into(),
                d.residual_norm.into(),
            ]);
            Ok(vec![row])
        }
        Task::Wigner => {
            let sys = PpkSystem::build(&params, policy)?;
            let grid = wigner_auto(sys.rho_ss(), &params, spec.solver.wigner_points)?;
            let (norm, edge) = (grid.normalization(), grid.edge_mass());
            log::info!(
                "point {}: dim {}, {} x {} grid",
                p.index,
                sys.dim(),
                grid.x_values.len(),
                grid.p_values.len()
            );
            let mut rows = Vec::with_capacity(grid.values.len());
            for (ix, &x) in grid.x_values.iter().enumerate() {
                for (ip, &pv) in grid.p_values.iter().enumerate() {
                    let mut row = prefix(spec, p);
                    row.extend([sys.dim().into(), x.into(), pv.into(), grid.get(ix, ip).into()]);
                    row.extend([norm.into(), edge.into()]);
                    rows.push(row);
                }
            }
            Ok(rows)
        }
        Task::Trajectory => {
            let dim = spec
                .solver
                .dim
                .unwrap_or_else(|| model::default_dim(&params, spec.solver.dim_cap));
            log::info!("point {}: dim {dim}", p.index);
            let t = &spec.trajectory;
            let cfg = TrajectoryConfig::new(
                p.measurement(),
                DensityMatrix::vacuum(dim)?,
                t.dt,
                t.t_final,
                spec.point_seed(p),
            )
            .with_stride(t.record_stride);
            let records = run_ensemble(&params, &cfg, t.n_traj)?;
            let mut rows = Vec::new();
            for (k, r) in records.iter().enumerate() {
                for i in 0..r.times.len() {
                    let mut row = prefix(spec, p);
                    row.extend(scheme_cells(p));
                    row.extend([dim.into(), k.into(), r.times[i].into(), r.current[i].into()]);
                    row.extend([r.mean_n[i].into(), r.mean_x[i].into(), r.mean_p[i].into()]);
                    rows.push(row);
                }
            }
            Ok(rows)
        }
        Task::Scaling => {
            let s = &spec.solver;
            let search = LineSearch {
                delta_min: s.delta_min,
                delta_max: s.delta_max,
                step: s.delta_step,
                cap: s.dim_cap,
                ..LineSearch::default()
            };
            let mut row: Vec<Value> = vec![
                p.g.into(),
                p.u.into(),
                (1.0 / p.u).into(),
                spec.fixed.kappa.into(),
                p.theta.into(),
            ];
            for scheme in [
                MeasurementScheme::Photodetection,
                MeasurementScheme::Homodyne { theta: p.theta },
            ] {
                let m = fcs::maximize_over_detuning(p.g, p.u, 1.0, scheme, &search)?;
                log::info!(
                    "point {}: {} maximum {:.4e} at delta {:.4}",
                    p.index,
                    scheme.label(),
                    m.d_max,
                    m.delta_d
                );
                row.extend([m.delta_d.into(), m.d_max.into(), m.at_boundary.into()]);
            }
            Ok(vec![row])
        }
    }
}
