//! Conditional (quantum-trajectory) evolution under photodetection and
//! homodyne detection, plus ensemble estimators for the current statistics.
//!
//! Two integrators are available. The density-matrix path integrates the
//! stochastic master equation directly; the state-vector path integrates the
//! equivalent stochastic Schrodinger equation and is selected automatically
//! when the initial state is pure (perfect detection keeps it pure).
//!
//! Both use first-order steps written in Kraus form, `rho -> M rho M^dag / tr`,
//! which cannot produce negative eigenvalues. The no-jump part
//! `K = -iH - (kappa/2) a^dag a` is propagated exactly through a cached
//! `e^{K h}`: an explicit `1 + K h` is unstable on the fast Kerr phases of
//! high Fock levels. Photodetection uses `M = e^{K h}` between jumps;
//! homodyne uses `M = e^{K dt} (1 + c dy + c^2 (dy^2 - dt) / 2)`.
//!
//! Homodyne detection conditions on `c = sqrt(kappa) a e^{-i theta}`, so the
//! signal part of the current is `<c + c^dag> = sqrt(kappa) <q_theta>`.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::fcs::MeasurementScheme;
use crate::fock::{self, DensityMatrix, Operator, PureState, SparseOperator};
use crate::model::{self, ModelParams};

/// Upper bound on the per-step jump probability before the step is halved.
pub const MAX_JUMP_PROBABILITY: f64 = 0.05;
/// Conditional states with eigenvalues below this fail the run.
pub const TRAJECTORY_POSITIVITY_TOL: f64 = -1e-6;
/// Deepest allowed local step halving.
const MAX_HALVINGS: u32 = 24;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// State vector when the initial state is pure, density matrix otherwise.
    #[default]
    Auto,
    DensityMatrix,
    StateVector,
}

#[derive(Clone, Debug)]
pub struct TrajectoryConfig {
    /// Time step in units of `1/kappa`.
    pub dt: f64,
    pub t_final: f64,
    pub seed: u64,
    /// Steps per recorded sample.
    pub record_stride: usize,
    pub scheme: MeasurementScheme,
    pub initial_state: DensityMatrix,
    pub integrator: Integrator,
    /// Recorded samples between positivity checks (density path only).
    pub check_every: usize,
}

impl TrajectoryConfig {
    pub fn new(scheme: MeasurementScheme, initial_state: DensityMatrix, dt: f64, t_final: f64, seed: u64) -> Self {
        Self {
            dt,
            t_final,
            seed,
            record_stride: 1,
            scheme,
            initial_state,
            integrator: Integrator::Auto,
            check_every: 100,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_final > self.dt && self.t_final.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "t_final ({}) must exceed dt ({})",
                self.t_final, self.dt
            )));
        }
        if self.record_stride == 0 || self.check_every == 0 {
            return Err(Error::InvalidConfig(
                "record stride and check interval must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Number of integration steps, `round(t_final / dt)`.
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub params: ModelParams,
    pub scheme: MeasurementScheme,
    /// End time of each recorded bin.
    pub times: Vec<f64>,
    /// Bin-averaged current: integrated charge over the bin divided by its
    /// width (clicks per unit time for photodetection).
    pub current: Vec<f64>,
    pub mean_n: Vec<f64>,
    pub mean_x: Vec<f64>,
    pub mean_p: Vec<f64>,
    pub var_n: Vec<f64>,
    /// Click times (photodetection only).
    pub jump_times: Vec<f64>,
    pub seed: u64,
    /// Index of the RNG stream derived from `seed`.
    pub stream: u64,
    /// Conditional state at `t_final`, as a row-major density matrix.
    #[serde(skip)]
    pub final_state: Option<DensityMatrix>,
}

impl TrajectoryRecord {
    /// Width of one recorded bin.
    pub fn bin_width(&self) -> f64 {
        match self.times.as_slice() {
            [first, second, ..] => second - first,
            [only] => *only,
            [] => 0.0,
        }
    }

    pub fn filtered_current(&self, tau_f: f64) -> Result<Vec<f64>> {
        low_pass_filter(&self.current, self.bin_width(), tau_f)
    }

    /// Integrated charge at each bin end.
    pub fn charge(&self) -> Vec<f64> {
        let w = self.bin_width();
        let mut q = 0.0;
        self.current
            .iter()
            .map(|i| {
                q += i * w;
                q
            })
            .collect()
    }
}

/// Operators shared by every trajectory at one parameter point.
pub struct TrajectorySimulator {
    params: ModelParams,
    dim: usize,
    a: SparseOperator,
    ad: SparseOperator,
    /// `K = -iH - (kappa/2) a^dag a`, the no-jump generator.
    k: Operator,
    /// `e^{K h}` keyed by the bits of `h`.
    no_jump: Mutex<Vec<(u64, Arc<Operator>)>>,
}

struct Moments {
    n: f64,
    n2: f64,
    a: C64,
}

impl TrajectorySimulator {
    pub fn new(params: &ModelParams, dim: usize) -> Result<Self> {
        params.validate()?;
        let h = model::build_hamiltonian(params, dim)?;
        let a = fock::annihilation(dim)?;
        let n = fock::number(dim)?;
        let i = C64::new(0.0, 1.0);
        let k = &h.scale(-i) - &n.scale(C64::new(0.5 * params.kappa, 0.0));
        Ok(Self {
            params: *params,
            dim,
            ad: a.adjoint().to_sparse(),
            a: a.to_sparse(),
            k,
            no_jump: Mutex::new(Vec::new()),
        })
    }

    /// `e^{K h}`, computed once per distinct `h`.
    fn no_jump(&self, h: f64) -> Result<Arc<Operator>> {
        let key = h.to_bits();
        {
            let cache = self.no_jump.lock().expect("cache lock");
            if let Some((_, e)) = cache.iter().find(|(k, _)| *k == key) {
                return Ok(Arc::clone(e));
            }
        }
        let e = Arc::new(self.k.scale(C64::new(h, 0.0)).expm()?);
        self.no_jump.lock().expect("cache lock").push((key, Arc::clone(&e)));
        Ok(e)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Runs trajectory `stream` of the ensemble defined by `config.seed`.
    pub fn run(&self, config: &TrajectoryConfig, stream: u64) -> Result<TrajectoryRecord> {
        config.validate()?;
        if config.initial_state.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: config.initial_state.dim(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(stream);
        let pure =
            match config.integrator {
                Integrator::DensityMatrix => None,
                Integrator::StateVector => Some(config.initial_state.as_pure(1e-10).ok_or_else(|| {
                    Error::InvalidConfig("state-vector integrator needs a pure initial state".into())
                })?),
                Integrator::Auto => config.initial_state.as_pure(1e-10),
            };
        let mut record = TrajectoryRecord {
            params: self.params,
            scheme: config.scheme,
            times: Vec::new(),
            current: Vec::new(),
            mean_n: Vec::new(),
            mean_x: Vec::new(),
            mean_p: Vec::new(),
            var_n: Vec::new(),
            jump_times: Vec::new(),
            seed: config.seed,
            stream,
            final_state: None,
        };
        match pure {
            Some(psi) => self.run_vector(config, psi, &mut rng, &mut record)?,
            None => self.run_density(config, &mut rng, &mut record)?,
        }
        Ok(record)
    }

    fn push_sample(&self, record: &mut TrajectoryRecord, t: f64, charge: f64, width: f64, m: &Moments) {
        record.times.push(t);
        record.current.push(charge / width);
        record.mean_n.push(m.n);
        record.mean_x.push(2.0 * m.a.re);
        record.mean_p.push(2.0 * m.a.im);
        record.var_n.push((m.n2 - m.n * m.n).max(0.0));
    }

    // ---- state-vector path ----

    fn vector_moments(&self, psi: &[C64]) -> Moments {
        let mut n = 0.0;
        let mut n2 = 0.0;
        let mut a = ZERO;
        for (k, z) in psi.iter().enumerate() {
            let p = z.norm_sqr();
            n += k as f64 * p;
            n2 += (k * k) as f64 * p;
            if k + 1 < psi.len() {
                a += z.conj() * psi[k + 1] * ((k + 1) as f64).sqrt();
            }
        }
        Moments { n, n2, a }
    }

    fn run_vector(
        &self,
        config: &TrajectoryConfig,
        psi: PureState,
        rng: &mut ChaCha8Rng,
        record: &mut TrajectoryRecord,
    ) -> Result<()> {
        let kappa = self.params.kappa;
        let mut psi = psi.amplitudes().to_vec();
        let mut scratch = vec![ZERO; self.dim];
        let mut scratch2 = vec![ZERO; self.dim];
        let steps = config.steps();
        let width = config.record_stride as f64 * config.dt;
        let mut charge = 0.0;
        let mut t = 0.0;
        // homodyne: c = sqrt(kappa) e^{-i theta} a, and c^dag c / 2 = (kappa/2) n
        let phase = config.scheme.theta().map(|theta| C64::from_polar(kappa.sqrt(), -theta));
        let base = self.no_jump(config.dt)?;
        for step in 1..=steps {
            match phase {
                None => {
                    charge +=
                        self.pd_vector_advance(&mut psi, t, config.dt, &base, 0, rng, record, &mut scratch)? as f64;
                }
                Some(phase) => {
                    let dt = config.dt;
                    self.a.apply(&psi, &mut scratch);
                    scratch.iter_mut().for_each(|z| *z *= phase);
                    let c_mean: C64 = psi.iter().zip(&scratch).map(|(p, c)| p.conj() * c).sum();
                    let m = 2.0 * c_mean.re;
                    let dw: f64 = rng.sample::<f64, _>(StandardNormal) * dt.sqrt();
                    let dy = m * dt + dw;
                    // psi <- e^{K dt} (1 + c dy + c^2 (dy^2 - dt)/2) psi
                    self.a.apply(&scratch, &mut scratch2);
                    let milstein = phase * (0.5 * (dy * dy - dt));
                    for k in 0..self.dim {
                        scratch[k] = psi[k] + scratch[k] * dy + scratch2[k] * milstein;
                    }
                    base.apply(&scratch, &mut psi);
                    normalize(&mut psi)?;
                    charge += dy;
                }
            }
            t = step as f64 * config.dt;
            if step % config.record_stride == 0 {
                let m = self.vector_moments(&psi);
                self.push_sample(record, t, charge, width, &m);
                charge = 0.0;
            }
        }
        let state = PureState::new(psi)?;
        record.final_state = Some(DensityMatrix::from_pure(&state));
        Ok(())
    }

    /// One photodetection step of length `h` on a state vector, halving
    /// locally while the jump probability exceeds the bound. Returns clicks.
    #[allow(clippy::too_many_arguments)]
    fn pd_vector_advance(
        &self,
        psi: &mut [C64],
        t: f64,
        h: f64,
        propagator: &Operator,
        depth: u32,
        rng: &mut ChaCha8Rng,
        record: &mut TrajectoryRecord,
        scratch: &mut [C64],
    ) -> Result<usize> {
        let kappa = self.params.kappa;
        let n: f64 = psi.iter().enumerate().map(|(k, z)| k as f64 * z.norm_sqr()).sum();
        let p = kappa * n * h;
        if p > MAX_JUMP_PROBABILITY {
            if depth >= MAX_HALVINGS {
                return Err(Error::StepSize {
                    time: t,
                    min_eigenvalue: f64::NAN,
                });
            }
            let half = self.no_jump(h / 2.0)?;
            let first = self.pd_vector_advance(psi, t, h / 2.0, &half, depth + 1, rng, record, scratch)?;
            let second = self.pd_vector_advance(psi, t + h / 2.0, h / 2.0, &half, depth + 1, rng, record, scratch)?;
            return Ok(first + second);
        }
        let u: f64 = rng.random();
        if u < p {
            self.a.apply(psi, scratch);
            psi.copy_from_slice(scratch);
            normalize(psi)?;
            record.jump_times.push(t + h);
            Ok(1)
        } else {
            propagator.apply(psi, scratch);
            psi.copy_from_slice(scratch);
            normalize(psi)?;
            Ok(0)
        }
    }

    // ---- density-matrix path ----

    fn density_moments(&self, rho: &[C64]) -> Moments {
        let d = self.dim;
        let mut n = 0.0;
        let mut n2 = 0.0;
        let mut a = ZERO;
        for k in 0..d {
            let p = rho[k * d + k].re;
            n += k as f64 * p;
            n2 += (k * k) as f64 * p;
            if k + 1 < d {
                // tr(a rho) = sum_k sqrt(k+1) rho_{k+1,k}
                a += rho[(k + 1) * d + k] * ((k + 1) as f64).sqrt();
            }
        }
        Moments { n, n2, a }
    }

    fn run_density(
        &self,
        config: &TrajectoryConfig,
        rng: &mut ChaCha8Rng,
        record: &mut TrajectoryRecord,
    ) -> Result<()> {
        let d = self.dim;
        let kappa = self.params.kappa;
        let mut rho = config.initial_state.matrix().as_slice().to_vec();
        let mut buf = vec![ZERO; d * d];
        let mut tmp = vec![ZERO; d * d];
        let steps = config.steps();
        let width = config.record_stride as f64 * config.dt;
        let mut charge = 0.0;
        let mut samples = 0usize;
        let base = self.no_jump(config.dt)?;
        for step in 1..=steps {
            let t0 = (step - 1) as f64 * config.dt;
            match config.scheme {
                MeasurementScheme::Photodetection => {
                    charge += self
                        .pd_density_advance(&mut rho, t0, config.dt, &base, 0, rng, record, &mut buf, &mut tmp)?
                        as f64;
                }
                MeasurementScheme::Homodyne { theta } => {
                    let phase = C64::from_polar(kappa.sqrt(), -theta);
                    let dt = config.dt;
                    // m = tr(c rho + rho c^dag) = 2 Re tr(c rho)
                    let mut c_mean = ZERO;
                    for k in 0..d - 1 {
                        c_mean += rho[(k + 1) * d + k] * ((k + 1) as f64).sqrt();
                    }
                    let m = 2.0 * (phase * c_mean).re;
                    let dw: f64 = rng.sample::<f64, _>(StandardNormal) * dt.sqrt();
                    let dy = m * dt + dw;
                    self.kraus_step(&mut rho, &base, Some((phase, dy, dt)), &mut buf, &mut tmp)?;
                    charge += dy;
                }
            }
            if step % config.record_stride == 0 {
                let t = step as f64 * config.dt;
                let m = self.density_moments(&rho);
                self.push_sample(record, t, charge, width, &m);
                charge = 0.0;
                samples += 1;
                if samples % config.check_every == 0 {
                    self.check_positivity(&rho, t)?;
                }
            }
        }
        let t_end = steps as f64 * config.dt;
        self.check_positivity(&rho, t_end)?;
        let op = Operator::from_row_major(d, rho)?;
        record.final_state = Some(DensityMatrix::new_unchecked(op));
        Ok(())
    }

    /// `rho <- M rho M^dag / tr` with `M = E (1 + c dy + c^2 (dy^2 - dt)/2)`
    /// for homodyne and `M = E` otherwise, where `E` is the no-jump propagator.
    fn kraus_step(
        &self,
        rho: &mut [C64],
        propagator: &Operator,
        homodyne: Option<(C64, f64, f64)>,
        buf: &mut [C64],
        tmp: &mut [C64],
    ) -> Result<()> {
        let d = self.dim;
        let one = C64::new(1.0, 0.0);
        if let Some((phase, dy, dt)) = homodyne {
            let s1 = phase * dy;
            let s2 = phase * phase * (0.5 * (dy * dy - dt));
            // buf = (1 + s1 a + s2 a^2) rho
            tmp.iter_mut().for_each(|z| *z = ZERO);
            self.a.left_mul_add(rho, one, tmp);
            for ((b, r), t) in buf.iter_mut().zip(rho.iter()).zip(tmp.iter()) {
                *b = r + s1 * t;
            }
            self.a.left_mul_add(tmp, s2, buf);
            // rho = buf (1 + s1 a + s2 a^2)^dag
            tmp.iter_mut().for_each(|z| *z = ZERO);
            self.ad.right_mul_add(buf, one, tmp);
            for ((r, b), t) in rho.iter_mut().zip(buf.iter()).zip(tmp.iter()) {
                *r = b + s1.conj() * t;
            }
            self.ad.right_mul_add(tmp, s2.conj(), rho);
        }
        // rho <- E rho E^dag
        let e = propagator.as_slice();
        for i in 0..d {
            for j in 0..d {
                buf[i * d + j] = (0..d).map(|k| e[i * d + k] * rho[k * d + j]).sum();
            }
        }
        for i in 0..d {
            for j in 0..d {
                rho[i * d + j] = (0..d).map(|k| buf[i * d + k] * e[j * d + k].conj()).sum();
            }
        }
        hermitize_normalize(rho, d)
    }

    fn check_positivity(&self, rho: &[C64], t: f64) -> Result<()> {
        let op = Operator::from_row_major(self.dim, rho.to_vec())?;
        let min = DensityMatrix::new_unchecked(op).min_eigenvalue()?;
        if min < TRAJECTORY_POSITIVITY_TOL {
            return Err(Error::StepSize {
                time: t,
                min_eigenvalue: min,
            });
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn pd_density_advance(
        &self,
        rho: &mut [C64],
        t: f64,
        h: f64,
        propagator: &Operator,
        depth: u32,
        rng: &mut ChaCha8Rng,
        record: &mut TrajectoryRecord,
        buf: &mut [C64],
        tmp: &mut [C64],
    ) -> Result<usize> {
        let d = self.dim;
        let kappa = self.params.kappa;
        let n: f64 = (0..d).map(|k| k as f64 * rho[k * d + k].re).sum();
        let p = kappa * n * h;
        if p > MAX_JUMP_PROBABILITY {
            if depth >= MAX_HALVINGS {
                return Err(Error::StepSize {
                    time: t,
                    min_eigenvalue: f64::NAN,
                });
            }
            let half = self.no_jump(h / 2.0)?;
            let first = self.pd_density_advance(rho, t, h / 2.0, &half, depth + 1, rng, record, buf, tmp)?;
            let second = self.pd_density_advance(rho, t + h / 2.0, h / 2.0, &half, depth + 1, rng, record, buf, tmp)?;
            return Ok(first + second);
        }
        let u: f64 = rng.random();
        if u < p {
            // rho <- a rho a^dag / tr(.)
            tmp.iter_mut().for_each(|z| *z = ZERO);
            self.a.left_mul_add(rho, C64::new(1.0, 0.0), tmp);
            buf.iter_mut().for_each(|z| *z = ZERO);
            self.ad.right_mul_add(tmp, C64::new(1.0, 0.0), buf);
            rho.copy_from_slice(buf);
            hermitize_normalize(rho, d)?;
            record.jump_times.push(t + h);
            Ok(1)
        } else {
            self.kraus_step(rho, propagator, None, buf, tmp)?;
            Ok(0)
        }
    }
}

fn normalize(psi: &mut [C64]) -> Result<()> {
    let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::Propagation(format!("state norm became {norm}")));
    }
    psi.iter_mut().for_each(|z| *z /= norm);
    Ok(())
}

fn hermitize_normalize(rho: &mut [C64], d: usize) -> Result<()> {
    for r in 0..d {
        for c in r + 1..d {
            let avg = (rho[r * d + c] + rho[c * d + r].conj()) * 0.5;
            rho[r * d + c] = avg;
            rho[c * d + r] = avg.conj();
        }
        rho[r * d + r].im = 0.0;
    }
    let tr: f64 = (0..d).map(|k| rho[k * d + k].re).sum();
    if !(tr.is_finite() && tr > 0.0) {
        return Err(Error::Propagation(format!("conditional trace became {tr}")));
    }
    rho.iter_mut().for_each(|z| *z /= tr);
    Ok(())
}

/// Single photodetection trajectory (stream 0 of `config.seed`).
pub fn simulate_photodetection(params: &ModelParams, config: &TrajectoryConfig) -> Result<TrajectoryRecord> {
    if config.scheme.is_homodyne() {
        return Err(Error::InvalidConfig("photodetection run with a homodyne scheme".into()));
    }
    TrajectorySimulator::new(params, config.initial_state.dim())?.run(config, 0)
}

/// Single homodyne trajectory (stream 0 of `config.seed`).
pub fn simulate_homodyne(params: &ModelParams, config: &TrajectoryConfig) -> Result<TrajectoryRecord> {
    if !config.scheme.is_homodyne() {
        return Err(Error::InvalidConfig("homodyne run with a photodetection scheme".into()));
    }
    TrajectorySimulator::new(params, config.initial_state.dim())?.run(config, 0)
}

/// Runs streams `0..n_traj` in parallel; the result is ordered by stream.
pub fn run_ensemble(params: &ModelParams, config: &TrajectoryConfig, n_traj: usize) -> Result<Vec<TrajectoryRecord>> {
    let sim = TrajectorySimulator::new(params, config.initial_state.dim())?;
    (0..n_traj as u64).into_par_iter().map(|k| sim.run(config, k)).collect()
}

/// Single-pole low-pass filter `y_{k+1} = y_k + (dt/tau_f)(I_k - y_k)`, `y_0 = I_0`.
pub fn low_pass_filter(samples: &[f64], dt: f64, tau_f: f64) -> Result<Vec<f64>> {
    if !(tau_f > dt) {
        return Err(Error::InvalidFilter { tau_f, dt });
    }
    let alpha = dt / tau_f;
    let mut out = Vec::with_capacity(samples.len());
    let Some(&first) = samples.first() else {
        return Ok(out);
    };
    let mut y = first;
    out.push(y);
    for &i in &samples[..samples.len() - 1] {
        y += alpha * (i - y);
        out.push(y);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionEstimate {
    pub d_hat: f64,
    pub std_error: f64,
    pub n_trajectories: usize,
    pub burn_in: f64,
    pub window: f64,
    /// Coefficient of determination of the variance-growth fit.
    pub r_squared: f64,
}

pub const MIN_RECORDS: usize = 100;
pub const MIN_CHECKPOINTS: usize = 20;
pub const BOOTSTRAP_RESAMPLES: usize = 200;
/// Minimum estimation window in units of `1/kappa`.
pub const MIN_WINDOW: f64 = 50.0;

fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, r2)
}

/// `D` from the growth of `Var[Q(t)]` over `[burn_in, burn_in + window]`.
pub fn estimate_diffusion(records: &[TrajectoryRecord], burn_in: f64, window: f64) -> Result<DiffusionEstimate> {
    if records.len() < MIN_RECORDS {
        return Err(Error::TooFewRecords {
            required: MIN_RECORDS,
            found: records.len(),
        });
    }
    let kappa = records[0].params.kappa;
    if window * kappa < MIN_WINDOW {
        return Err(Error::InvalidConfig(format!(
            "estimation window {window} is shorter than {MIN_WINDOW}/kappa"
        )));
    }
    let times = &records[0].times;
    if records.iter().any(|r| r.times.len() != times.len()) {
        return Err(Error::InvalidConfig("records have different lengths".into()));
    }
    let start = times.iter().position(|&t| t > burn_in + 1e-12).unwrap_or(times.len());
    let stop = times
        .iter()
        .rposition(|&t| t <= burn_in + window + 1e-9)
        .map(|k| k + 1)
        .unwrap_or(0);
    let bins = stop.saturating_sub(start);
    if bins < MIN_CHECKPOINTS {
        return Err(Error::InvalidConfig(format!(
            "window holds {bins} samples; at least {MIN_CHECKPOINTS} required"
        )));
    }
    let n_checkpoints = bins.min(50);
    let checkpoints: Vec<usize> = (1..=n_checkpoints)
        .map(|k| start + k * bins / n_checkpoints - 1)
        .collect();
    let ts: Vec<f64> = checkpoints.iter().map(|&k| times[k] - burn_in).collect();
    // charge from burn_in at each checkpoint, per trajectory
    let charges: Vec<Vec<f64>> = records
        .iter()
        .map(|r| {
            let w = r.bin_width();
            let mut q = 0.0;
            let mut out = Vec::with_capacity(n_checkpoints);
            let mut next = 0;
            for k in start..stop {
                q += r.current[k] * w;
                if next < n_checkpoints && checkpoints[next] == k {
                    out.push(q);
                    next += 1;
                }
            }
            out
        })
        .collect();
    let slope_for = |idx: &[usize]| -> (f64, f64) {
        let n = idx.len() as f64;
        let vars: Vec<f64> = (0..n_checkpoints)
            .map(|c| {
                let mean = idx.iter().map(|&i| charges[i][c]).sum::<f64>() / n;
                idx.iter().map(|&i| (charges[i][c] - mean).powi(2)).sum::<f64>() / (n - 1.0)
            })
            .collect();
        ols(&ts, &vars)
    };
    let all: Vec<usize> = (0..records.len()).collect();
    let (d_hat, r_squared) = slope_for(&all);
    if r_squared < 0.9 {
        log::warn!("variance growth is not linear (R^2 = {r_squared:.3}); metastable dynamics may be unconverged");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(records[0].seed ^ 0x5eed_b007);
    let boots: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            let idx: Vec<usize> = (0..records.len()).map(|_| rng.random_range(0..records.len())).collect();
            slope_for(&idx).0
        })
        .collect();
    let mean = boots.iter().sum::<f64>() / boots.len() as f64;
    let std_error = (boots.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (boots.len() as f64 - 1.0)).sqrt();
    Ok(DiffusionEstimate {
        d_hat,
        std_error,
        n_trajectories: records.len(),
        burn_in,
        window,
        r_squared,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plateau {
    Negative,
    Zero,
    Positive,
}

/// Fraction of samples classified into each plateau.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlateauFractions {
    pub negative: f64,
    pub zero: f64,
    pub positive: f64,
}

impl PlateauFractions {
    /// Number of plateaus occupied for more than `min_fraction` of the time.
    pub fn occupied(&self, min_fraction: f64) -> usize {
        [self.negative, self.zero, self.positive]
            .iter()
            .filter(|&&f| f > min_fraction)
            .count()
    }
}

/// Default plateau threshold `sqrt(kappa n0) / 2`.
pub fn plateau_threshold(params: &ModelParams) -> f64 {
    let n0 = model::semiclassical_fixed_points(params).n0;
    (params.kappa * n0).sqrt() / 2.0
}

pub fn classify(value: f64, threshold: f64) -> Plateau {
    if value > threshold {
        Plateau::Positive
    } else if value < -threshold {
        Plateau::Negative
    } else {
        Plateau::Zero
    }
}

pub fn plateau_fractions(filtered: &[f64], threshold: f64) -> PlateauFractions {
    let mut counts = [0usize; 3];
    for &v in filtered {
        counts[classify(v, threshold) as usize] += 1;
    }
    let n = filtered.len().max(1) as f64;
    PlateauFractions {
        negative: counts[0] as f64 / n,
        zero: counts[1] as f64 / n,
        positive: counts[2] as f64 / n,
    }
}

/// Elementwise ensemble mean and standard error of the final conditional states.
pub fn ensemble_mean_state(records: &[TrajectoryRecord]) -> Result<(Operator, Operator)> {
    let states: Vec<&DensityMatrix> = records
        .iter()
        .map(|r| {
            r.final_state
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("record carries no final state".into()))
        })
        .collect::<Result<_>>()?;
    let n = states.len();
    if n < 2 {
        return Err(Error::TooFewRecords { required: 2, found: n });
    }
    let d = states[0].dim();
    let mut mean = vec![ZERO; d * d];
    for s in &states {
        for (m, v) in mean.iter_mut().zip(s.matrix().as_slice()) {
            *m += v / n as f64;
        }
    }
    // standard error of real and imaginary parts separately, packed as re + i im
    let mut se = vec![ZERO; d * d];
    for s in &states {
        for ((e, v), m) in se.iter_mut().zip(s.matrix().as_slice()).zip(&mean) {
            let dv = v - m;
            e.re += dv.re * dv.re;
            e.im += dv.im * dv.im;
        }
    }
    let norm = (n * (n - 1)) as f64;
    se.iter_mut()
        .for_each(|e| *e = C64::new((e.re / norm).sqrt(), (e.im / norm).sqrt()));
    Ok((Operator::from_row_major(d, mean)?, Operator::from_row_major(d, se)?))
}
