//! Sweep orchestration. Workers compute points in parallel; one writer
//! appends them to the CSV in point order and records progress in a
//! manifest next to the output, so an interrupted run resumes where the
//! last fully written point ended.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;

use ppk_core::fock::TOP_POPULATION_TOL;
use ppk_core::wigner::EDGE_MASS_TOL;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::spec::{Spacing, SweepSpec, Task};
use crate::table::{encode_rows, format_float, header_text};
use crate::tasks;

pub const TOOL: &str = concat!("ppk ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub resume: bool,
    /// Stop cleanly after this many points have been written by this call.
    pub stop_after: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub points: usize,
    /// Points written by this call.
    pub written: usize,
    pub complete: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct Manifest {
    points: usize,
    completed: usize,
    /// Length of the output after the last completed point.
    bytes: u64,
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest");
    out.with_file_name(name)
}

fn save_manifest(path: &Path, m: &Manifest) -> Result<()> {
    let tmp = path.with_extension("manifest.tmp");
    let text = toml::to_string(m).expect("manifest serializes");
    fs::write(&tmp, text).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Header metadata: everything that determines the rows, nothing else
/// (no output path, worker count or timestamps).
pub fn metadata(spec: &SweepSpec) -> Vec<(String, String)> {
    let mut m: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: String| m.push((k.to_string(), v));
    let f = format_float;
    put("tool", TOOL.into());
    put("task", spec.task.name().into());
    put("units", "rates in units of kappa, times in units of 1/kappa".into());
    put("kappa", f(spec.fixed.kappa));
    let scanned = |n: &str| {
        (n == "delta" && spec.task == Task::Scaling)
            || spec
                .axes
                .iter()
                .any(|a| a.name == n || (n == "u" && a.name == "kappa_over_u"))
    };
    for (name, v) in [("delta", spec.fixed.delta), ("g", spec.fixed.g), ("u", spec.fixed.u)] {
        if !scanned(name) {
            put(name, f(v));
        }
    }
    put("scheme", spec.fixed.scheme.label().into());
    if !scanned("theta") {
        put("theta", f(spec.fixed.theta));
    }
    for a in &spec.axes {
        let spacing = match a.spacing {
            Spacing::Linear => "linear",
            Spacing::Log => "log",
        };
        put(
            &format!("axis.{}", a.name),
            format!("{} {} {} {spacing}", f(a.start), f(a.stop), a.count),
        );
    }
    put("points", spec.point_count().to_string());
    let s = &spec.solver;
    put(
        "dim",
        match s.dim {
            Some(d) => d.to_string(),
            None if spec.task == Task::Trajectory => format!("default rule (cap {})", s.dim_cap),
            None => format!("adaptive (cap {})", s.dim_cap),
        },
    );
    put("top_population_tol", f(TOP_POPULATION_TOL));
    match spec.task {
        Task::Spectrum => {
            put(
                "omega",
                format!("{} {} {}", f(s.omega_min), f(s.omega_max), s.omega_count),
            );
        }
        Task::Wigner => {
            put("wigner_points", s.wigner_points.to_string());
            put("edge_mass_tol", f(EDGE_MASS_TOL));
        }
        Task::Trajectory => {
            let t = &spec.trajectory;
            put("dt", f(t.dt));
            put("t_final", f(t.t_final));
            put("n_traj", t.n_traj.to_string());
            put("record_stride", t.record_stride.to_string());
            put("initial_state", "vacuum".into());
            put("seed", spec.seed.to_string());
            put("point_seed", "seed + point index".into());
        }
        Task::Scaling => {
            put(
                "delta_window",
                format!("{} {} {}", f(s.delta_min), f(s.delta_max), f(s.delta_step)),
            );
        }
        _ => {}
    }
    m
}

fn header(spec: &SweepSpec) -> String {
    header_text(&metadata(spec), &tasks::columns(spec.task))
}

/// Validates an existing partial output and truncates it to the last
/// completed point. `None` when there is nothing to resume.
fn resume_state(spec: &SweepSpec, head: &str, manifest_file: &Path) -> Result<Option<Manifest>> {
    if !(manifest_file.exists() && spec.out.exists()) {
        log::warn!("nothing to resume at {}; starting afresh", spec.out.display());
        return Ok(None);
    }
    let m = load_manifest(manifest_file)?;
    let mismatch = || {
        CliError::Validation(format!(
            "{} was written by a different configuration; rerun without --resume",
            spec.out.display()
        ))
    };
    if m.points != spec.point_count() || m.completed > m.points {
        return Err(mismatch());
    }
    let mut file = OpenOptions::new()
        .read(true)
        .write(true)
        .open(&spec.out)
        .map_err(|e| CliError::io(&spec.out, e))?;
    let len = file.metadata().map_err(|e| CliError::io(&spec.out, e))?.len();
    if len < m.bytes || m.bytes < head.len() as u64 {
        return Err(mismatch());
    }
    let mut existing = vec![0; head.len()];
    file.read_exact(&mut existing).map_err(|e| CliError::io(&spec.out, e))?;
    if existing != head.as_bytes() {
        return Err(mismatch());
    }
    file.set_len(m.bytes).map_err(|e| CliError::io(&spec.out, e))?;
    log::info!("resuming {} at point {}/{}", spec.out.display(), m.completed, m.points);
    Ok(Some(m))
}

pub fn run(spec: &SweepSpec, opts: RunOptions) -> Result<Outcome> {
    spec.validate()?;
    let head = header(spec);
    let total = spec.point_count();
    let manifest_file = manifest_path(&spec.out);

    let resumed = if opts.resume {
        resume_state(spec, &head, &manifest_file)?
    } else {
        None
    };
    let mut manifest = match resumed {
        Some(m) => m,
        None => {
            fs::write(&spec.out, &head).map_err(|e| CliError::io(&spec.out, e))?;
            let m = Manifest {
                points: total,
                completed: 0,
                bytes: head.len() as u64,
            };
            save_manifest(&manifest_file, &m)?;
            m
        }
    };
    let start = manifest.completed;
    if start == total {
        return Ok(Outcome {
            points: total,
            written: 0,
            complete: true,
        });
    }

    let mut file: File = OpenOptions::new()
        .append(true)
        .open(&spec.out)
        .map_err(|e| CliError::io(&spec.out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| CliError::Validation(format!("worker pool: {e}")))?;
    let pending: Vec<_> = spec.points().split_off(start);
    let cancel = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel();
    let mut written = 0;
    let mut failure = None;

    std::thread::scope(|s| -> Result<()> {
        let pending = &pending;
        let cancel = &cancel;
        s.spawn(move || {
            pool.install(|| {
                pending.par_iter().for_each_with(tx, |tx, p| {
                    if !cancel.load(Ordering::Relaxed) {
                        let _ = tx.send((p.index, tasks::compute(spec, p)));
                    }
                })
            })
        });

        // reorder buffer: write strictly in point order
        let mut buffer = BTreeMap::new();
        let mut drain = || -> Result<()> {
            'recv: for (index, result) in rx.iter() {
                buffer.insert(index, result);
                while let Some(result) = buffer.remove(&manifest.completed) {
                    let index = manifest.completed;
                    match result {
                        Ok(rows) => {
                            let bytes = encode_rows(&rows);
                            file.write_all(&bytes)
                                .and_then(|_| file.flush())
                                .map_err(|e| CliError::io(&spec.out, e))?;
                            manifest.completed += 1;
                            manifest.bytes += bytes.len() as u64;
                            save_manifest(&manifest_file, &manifest)?;
                            written += 1;
                            log::debug!("point {index} written");
                            if opts.stop_after.is_some_and(|n| written >= n) {
                                break 'recv;
                            }
                        }
                        Err(source) => {
                            failure = Some(CliError::Numerical {
                                index,
                                point: pending[index - start].describe(),
                                source,
                            });
                            break 'recv;
                        }
                    }
                }
            }
            Ok(())
        };
        let result = drain();
        cancel.store(true, Ordering::Relaxed);
        result
    })?;

    if let Some(e) = failure {
        return Err(e);
    }
    Ok(Outcome {
        points: total,
        written,
        complete: manifest.completed == total,
    })
}
