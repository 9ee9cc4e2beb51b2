//! Full counting statistics of the measurement current.
//!
//! With a measurement superoperator `M` (`L1 = kappa a . a^dag` for clicks,
//! `H1 = sqrt(kappa)(a . e^{-i theta} + . a^dag e^{i theta})` for homodyne):
//!
//! * mean current `J = <1|M|rho>`,
//! * correlation `F(tau) = <1|M e^{L tau} M|rho> - J^2` plus `w delta(tau)`,
//! * spectrum `S(w) = -2 <1|M [L / (L^2 + w^2)] M|rho> + w0`,
//! * diffusion `D = S(0) = -2 <1|M L^+ M|rho> + w0`,
//!
//! where the shot-noise weight `w0` is `J` for photodetection and 1 for
//! homodyne detection.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, Operator};
use crate::model::ModelParams;
use crate::superop::{
    vectorize_state, DrazinSolver, Propagator, ResolventSolver, ShiftedFactorizer, SuperOperatorMatrix, VectorizedState,
};
use crate::system::{DimPolicy, PpkSystem};

/// Relative tolerance on the discarded imaginary part of spectra.
pub const IMAG_TOL: f64 = 1e-8;
/// Diffusion values in `[-NEGATIVE_TOL, 0)` are clamped to zero.
pub const NEGATIVE_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasurementScheme {
    #[default]
    Photodetection,
    Homodyne {
        theta: f64,
    },
}

impl MeasurementScheme {
    /// Homodyne detection of the `p` quadrature.
    pub fn homodyne() -> Self {
        MeasurementScheme::Homodyne { theta: FRAC_PI_2 }
    }

    pub fn theta(&self) -> Option<f64> {
        match self {
            MeasurementScheme::Photodetection => None,
            MeasurementScheme::Homodyne { theta } => Some(*theta),
        }
    }

    /// Short label used in files and on the command line.
    pub fn label(&self) -> &'static str {
        match self {
            MeasurementScheme::Photodetection => "pd",
            MeasurementScheme::Homodyne { .. } => "hom",
        }
    }

    pub fn is_homodyne(&self) -> bool {
        matches!(self, MeasurementScheme::Homodyne { .. })
    }
}

/// `rho -> kappa a rho a^dag`.
pub fn jump_superop(kappa: f64, a: &Operator) -> Result<SuperOperatorMatrix> {
    if kappa < 0.0 {
        return Err(Error::NegativeRate { rate: kappa });
    }
    SuperOperatorMatrix::sandwich(&a.scale(C64::new(kappa, 0.0)), &a.adjoint())
}

/// `rho -> sqrt(kappa) (a rho e^{-i theta} + rho a^dag e^{i theta})`.
pub fn homodyne_superop(kappa: f64, a: &Operator, theta: f64) -> Result<SuperOperatorMatrix> {
    if kappa < 0.0 {
        return Err(Error::NegativeRate { rate: kappa });
    }
    let id = Operator::identity(a.dim())?;
    let phase = C64::from_polar(kappa.sqrt(), -theta);
    let left = SuperOperatorMatrix::sandwich(&a.scale(phase), &id)?;
    let right = SuperOperatorMatrix::sandwich(&id, &a.adjoint().scale(phase.conj()))?;
    left.add(&right)
}

pub fn measurement_superop(scheme: MeasurementScheme, kappa: f64, a: &Operator) -> Result<SuperOperatorMatrix> {
    match scheme {
        MeasurementScheme::Photodetection => jump_superop(kappa, a),
        MeasurementScheme::Homodyne { theta } => homodyne_superop(kappa, a, theta),
    }
}

/// `J_PD = kappa <a^dag a>` or `J_Hom = sqrt(kappa) <q_theta>`.
pub fn mean_current(scheme: MeasurementScheme, kappa: f64, a: &Operator, rho: &DensityMatrix) -> Result<f64> {
    let m = measurement_superop(scheme, kappa, a)?;
    Ok(m.apply(&vectorize_state(rho)).trace().re)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub omegas: Vec<f64>,
    pub values: Vec<f64>,
    /// `S(0)`, from the Drazin path.
    pub diffusion: f64,
    pub mean_current: f64,
    /// Largest discarded `|Im S| / max(1, |Re S|)`.
    pub max_imag_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub taus: Vec<f64>,
    /// Smooth part of `F(tau)`.
    pub values: Vec<f64>,
    /// Coefficient of `delta(tau)`, never included in `values`.
    pub singular_weight: f64,
}

impl CorrelationResult {
    /// `2 int_0^T F dtau + w` by the trapezoid rule over the sampled taus.
    pub fn integrated_diffusion(&self) -> f64 {
        let integral: f64 = self
            .taus
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(t, f)| 0.5 * (t[1] - t[0]) * (f[0] + f[1]))
            .sum();
        2.0 * integral + self.singular_weight
    }

    /// `|F(tau_last)| / max |F|`.
    pub fn tail_ratio(&self) -> f64 {
        let peak = self.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
        match self.values.last() {
            Some(last) if peak > 0.0 => last.abs() / peak,
            _ => 0.0,
        }
    }
}

/// Second-order current statistics for one generator, steady state and
/// measurement superoperator.
pub struct CountingStatistics {
    liouvillian: SuperOperatorMatrix,
    rho_ss: DensityMatrix,
    measurement: SuperOperatorMatrix,
    /// `<1|M` as a row over the doubled space.
    left: Vec<C64>,
    /// `M|rho_ss>`.
    seed: VectorizedState,
    mean_current: f64,
    singular_weight: f64,
}

impl CountingStatistics {
    /// Generic constructor. `shot_noise_is_current` selects the photodetection
    /// convention `w0 = J`; otherwise `w0 = 1`.
    pub fn from_parts(
        liouvillian: &SuperOperatorMatrix,
        rho_ss: &DensityMatrix,
        measurement: SuperOperatorMatrix,
        shot_noise_is_current: bool,
    ) -> Result<Self> {
        if measurement.dim() != liouvillian.dim() || rho_ss.dim() != liouvillian.dim() {
            return Err(Error::DimensionMismatch {
                expected: liouvillian.dim(),
                found: measurement.dim().max(rho_ss.dim()),
            });
        }
        let left = measurement.left_trace();
        let seed = measurement.apply(&vectorize_state(rho_ss));
        let mean_current = seed.trace().re;
        let singular_weight = if shot_noise_is_current { mean_current } else { 1.0 };
        Ok(Self {
            liouvillian: liouvillian.clone(),
            rho_ss: rho_ss.clone(),
            measurement,
            left,
            seed,
            mean_current,
            singular_weight,
        })
    }

    pub fn new(system: &PpkSystem, scheme: MeasurementScheme) -> Result<Self> {
        let m = measurement_superop(scheme, system.params.kappa, &system.annihilation)?;
        Self::from_parts(&system.liouvillian, system.rho_ss(), m, !scheme.is_homodyne())
    }

    pub fn mean_current(&self) -> f64 {
        self.mean_current
    }

    pub fn singular_weight(&self) -> f64 {
        self.singular_weight
    }

    pub fn measurement(&self) -> &SuperOperatorMatrix {
        &self.measurement
    }

    fn contract(&self, x: &[C64]) -> C64 {
        self.left.iter().zip(x).map(|(l, v)| l * v).sum()
    }

    fn finish(&self, raw: C64) -> (f64, f64) {
        let value = -2.0 * raw.re + self.singular_weight;
        let imag = (2.0 * raw.im).abs() / value.abs().max(1.0);
        (value, imag)
    }

    /// `D = S(0)` via the Drazin inverse.
    pub fn diffusion(&self) -> Result<f64> {
        let solver = DrazinSolver::new(&self.liouvillian, &self.rho_ss)?;
        self.diffusion_with(&solver)
    }

    fn diffusion_with(&self, solver: &DrazinSolver) -> Result<f64> {
        let x = solver.apply(&self.seed)?;
        let (value, imag) = self.finish(self.contract(x.as_slice()));
        if imag > IMAG_TOL {
            log::warn!("diffusion carries imaginary residual {imag:.2e}");
        }
        clamp_diffusion(value)
    }

    /// `S(omega)` on the given frequencies. `omega = 0` uses the Drazin path;
    /// every other frequency reuses one symbolic factorization.
    pub fn spectrum(&self, omegas: &[f64]) -> Result<SpectrumResult> {
        let drazin = DrazinSolver::new(&self.liouvillian, &self.rho_ss)?;
        let diffusion = self.diffusion_with(&drazin)?;
        let needs_resolvent = omegas.iter().any(|&w| w != 0.0);
        let factorizer = if needs_resolvent {
            Some(ShiftedFactorizer::new(&self.liouvillian)?)
        } else {
            None
        };
        // L / (L^2 + w^2) annihilates |rho>; projecting first avoids the
        // cancelling 1/(+-i w) components at small w
        let projected = drazin.project(self.seed.as_slice());
        let points: Vec<(f64, f64)> = omegas
            .par_iter()
            .map(|&omega| {
                if !omega.is_finite() {
                    return Err(Error::Domain(format!("non-finite frequency {omega}")));
                }
                if omega == 0.0 {
                    return Ok((diffusion, 0.0));
                }
                let solver = ResolventSolver::new(factorizer.as_ref().expect("factorizer built"), omega.abs())?;
                let x = solver.apply_slice(&projected)?;
                Ok(self.finish(self.contract(&x)))
            })
            .collect::<Result<_>>()?;
        let max_imag_residual = points.iter().map(|p| p.1).fold(0.0, f64::max);
        if max_imag_residual > IMAG_TOL {
            log::warn!("spectrum imaginary residual {max_imag_residual:.2e} exceeds {IMAG_TOL:.0e}");
        }
        Ok(SpectrumResult {
            omegas: omegas.to_vec(),
            values: points.into_iter().map(|p| p.0).collect(),
            diffusion,
            mean_current: self.mean_current,
            max_imag_residual,
        })
    }

    /// Smooth part of `F(tau)` by propagating `M|rho>` forward in time.
    pub fn correlation(&self, taus: &[f64]) -> Result<CorrelationResult> {
        if taus.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || taus.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Domain("taus must be finite, non-negative and ascending".into()));
        }
        let propagator = Propagator::new(&self.liouvillian);
        let mut state = self.seed.as_slice().to_vec();
        let mut now = 0.0;
        let j2 = self.mean_current * self.mean_current;
        let mut values = Vec::with_capacity(taus.len());
        for &tau in taus {
            propagator.advance(&mut state, tau - now)?;
            now = tau;
            values.push(self.contract(&state).re - j2);
        }
        Ok(CorrelationResult {
            taus: taus.to_vec(),
            values,
            singular_weight: self.singular_weight,
        })
    }
}

fn clamp_diffusion(value: f64) -> Result<f64> {
    if value >= 0.0 {
        Ok(value)
    } else if value >= -NEGATIVE_TOL {
        log::warn!("clamping slightly negative diffusion {value:.2e} to zero");
        Ok(0.0)
    } else {
        Err(Error::NegativeDiffusion { value })
    }
}

/// One row of a diffusion sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionPoint {
    pub params: ModelParams,
    pub scheme: MeasurementScheme,
    pub dim: usize,
    pub mean_current: f64,
    pub diffusion: f64,
    /// `|| L |rho_ss> ||_max`.
    pub residual_norm: f64,
}

pub fn diffusion_point(params: &ModelParams, scheme: MeasurementScheme, policy: DimPolicy) -> Result<DiffusionPoint> {
    let system = PpkSystem::build(params, policy)?;
    diffusion_point_for(&system, scheme)
}

pub fn diffusion_point_for(system: &PpkSystem, scheme: MeasurementScheme) -> Result<DiffusionPoint> {
    let stats = CountingStatistics::new(system, scheme)?;
    Ok(DiffusionPoint {
        params: system.params,
        scheme,
        dim: system.dim(),
        mean_current: stats.mean_current(),
        diffusion: stats.diffusion()?,
        residual_norm: system.steady.residual,
    })
}

/// Detuning grid and refinement settings for the `D_PD` maximum search.
/// All detunings are in units of kappa.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineSearch {
    pub delta_min: f64,
    pub delta_max: f64,
    pub step: f64,
    /// Golden-section stops once the bracket is narrower than this.
    pub tolerance: f64,
    pub cap: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self {
            delta_min: 0.05,
            delta_max: 3.0,
            step: 0.05,
            tolerance: 1e-3,
            cap: crate::fock::DEFAULT_DIM_CAP,
        }
    }
}

impl LineSearch {
    pub fn grid(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0 && self.delta_max > self.delta_min) {
            return Err(Error::Domain("detuning grid needs step > 0 and max > min".into()));
        }
        let count = ((self.delta_max - self.delta_min) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..count).map(|k| self.delta_min + k as f64 * self.step).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscontinuousPoint {
    pub g: f64,
    pub delta_d: f64,
    pub d_max: f64,
    /// The coarse maximum sat on the edge of the detuning grid.
    pub at_boundary: bool,
}

/// Maximizes `D` over the detuning at fixed `(g, u, kappa)`.
pub fn maximize_over_detuning(
    g: f64,
    u: f64,
    kappa: f64,
    scheme: MeasurementScheme,
    search: &LineSearch,
) -> Result<DiscontinuousPoint> {
    let grid = search.grid()?;
    let eval = |delta_k: f64| -> Result<f64> {
        let p = ModelParams::new(delta_k * kappa, g, u, kappa)?;
        Ok(diffusion_point(&p, scheme, DimPolicy::Adaptive { cap: search.cap })?.diffusion)
    };
    let values: Vec<f64> = grid.par_iter().map(|&d| eval(d)).collect::<Result<_>>()?;
    let (k, _) = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("grid is non-empty");
    let at_boundary = k == 0 || k + 1 == grid.len();
    if at_boundary {
        log::warn!("D maximum at grid boundary (delta = {}) for g = {g}", grid[k]);
        return Ok(DiscontinuousPoint {
            g,
            delta_d: grid[k] * kappa,
            d_max: values[k],
            at_boundary,
        });
    }
    let (delta, d_max) = golden_section_max(grid[k - 1], grid[k + 1], search.tolerance, (grid[k], values[k]), eval)?;
    Ok(DiscontinuousPoint {
        g,
        delta_d: delta * kappa,
        d_max,
        at_boundary,
    })
}

/// The discontinuous line `Delta_d(g)` as the detuning of maximal `D_PD`.
pub fn locate_discontinuous_line(
    g_grid: &[f64],
    u: f64,
    kappa: f64,
    search: &LineSearch,
) -> Result<Vec<DiscontinuousPoint>> {
    if let Some(g) = g_grid.iter().find(|&&g| g <= kappa / 2.0) {
        return Err(Error::Domain(format!(
            "g = {g} is below the instability threshold kappa/2"
        )));
    }
    g_grid
        .iter()
        .map(|&g| maximize_over_detuning(g, u, kappa, MeasurementScheme::Photodetection, search))
        .collect()
}

/// Golden-section maximization on `[a, b]`; `best` seeds the incumbent.
fn golden_section_max(
    mut a: f64,
    mut b: f64,
    tol: f64,
    mut best: (f64, f64),
    f: impl Fn(f64) -> Result<f64>,
) -> Result<(f64, f64)> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    for cand in [(c, fc), (d, fd)] {
        if cand.1 > best.1 {
            best = cand;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn system(delta: f64, g: f64, u: f64, dim: usize) -> PpkSystem {
        PpkSystem::with_dim(&ModelParams::in_kappa_units(delta, g, u).unwrap(), dim).unwrap()
    }

    fn random_density(rng: &mut ChaCha8Rng, dim: usize) -> DensityMatrix {
        let entries: Vec<C64> = (0..dim * dim)
            .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let b = Operator::from_row_major(dim, entries).unwrap();
        let m = b.matmul(&b.adjoint()).unwrap();
        let tr = m.trace().re;
        DensityMatrix::new(m.scale(C64::new(1.0 / tr, 0.0))).unwrap()
    }

    #[test]
    fn jump_superop_on_single_photon() {
        let a = fock::annihilation(2).unwrap();
        let out = jump_superop(0.6, &a)
            .unwrap()
            .apply(&vectorize_state(&DensityMatrix::fock(2, 1).unwrap()));
        let expected = vectorize_state(&DensityMatrix::vacuum(2).unwrap());
        for (x, y) in out.as_slice().iter().zip(expected.as_slice()) {
            assert!((x - y * 0.6).norm() < 1e-15);
        }
    }

    #[test]
    fn measurement_traces_match_expectations() {
        let dim = 7;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = fock::annihilation(dim).unwrap();
        let kappa = 1.3;
        for _ in 0..5 {
            let rho = random_density(&mut rng, dim);
            let n = fock::expectation(&fock::number(dim).unwrap(), &rho).unwrap().re;
            let j = mean_current(MeasurementScheme::Photodetection, kappa, &a, &rho).unwrap();
            assert!((j - kappa * n).abs() < 1e-12);
            let theta = rng.random::<f64>() * 6.0;
            let q = fock::expectation(&fock::quadrature(dim, theta).unwrap(), &rho)
                .unwrap()
                .re;
            let jh = mean_current(MeasurementScheme::Homodyne { theta }, kappa, &a, &rho).unwrap();
            assert!((jh - kappa.sqrt() * q).abs() < 1e-12);
        }
        let vac = DensityMatrix::vacuum(dim).unwrap();
        assert!(
            mean_current(MeasurementScheme::homodyne(), kappa, &a, &vac)
                .unwrap()
                .abs()
                < 1e-15
        );
    }

    #[test]
    fn free_and_jump_parts_recompose() {
        let sys = system(0.5, 1.0, 0.5, 12);
        let l1 = jump_superop(1.0, &sys.annihilation).unwrap();
        let l0 = sys.liouvillian.sub(&l1).unwrap();
        let back = l0.add(&l1).unwrap();
        for (r, c, v) in sys.liouvillian.matrix().triplets() {
            assert_eq!(back.matrix().get(r, c), v);
        }
    }

    #[test]
    fn homodyne_seed_of_parity_even_state_is_traceless() {
        let sys = system(1.0, 1.0, 0.5, 14);
        let h1 = homodyne_superop(1.0, &sys.annihilation, 0.7).unwrap();
        assert!(h1.apply(&vectorize_state(sys.rho_ss())).trace().norm() < 1e-12);
    }

    #[test]
    fn vacuum_shot_noise_limits() {
        let sys = system(0.7, 0.0, 0.5, 6);
        let pd = CountingStatistics::new(&sys, MeasurementScheme::Photodetection).unwrap();
        assert_eq!(pd.mean_current(), 0.0);
        assert!(pd.diffusion().unwrap().abs() < 1e-12);
        let s = pd.spectrum(&[0.0, 1.0, 5.0]).unwrap();
        assert!(s.values.iter().all(|v| v.abs() < 1e-12));
        let hom = CountingStatistics::new(&sys, MeasurementScheme::homodyne()).unwrap();
        let s = hom.spectrum(&[0.0, 0.3, 2.0, 10.0]).unwrap();
        assert!(s.values.iter().all(|v| (v - 1.0).abs() < 1e-10), "{:?}", s.values);
    }

    #[test]
    fn spectrum_is_even_and_continuous_at_zero() {
        let sys = system(0.0, 1.0, 1.0, 16);
        for scheme in [MeasurementScheme::Photodetection, MeasurementScheme::homodyne()] {
            let stats = CountingStatistics::new(&sys, scheme).unwrap();
            let s = stats.spectrum(&[-1.5, 1.5, 1e-5]).unwrap();
            assert!((s.values[0] - s.values[1]).abs() < 1e-8);
            assert!((s.values[2] - s.diffusion).abs() < 1e-6 * s.diffusion.abs().max(1.0));
            assert!(s.max_imag_residual < IMAG_TOL);
        }
    }

    #[test]
    fn ppk_homodyne_mean_current_vanishes() {
        let sys = system(2.0, 1.0, 1.0 / 3.0, 30);
        for theta in [0.0, 0.4, FRAC_PI_2] {
            let j = CountingStatistics::new(&sys, MeasurementScheme::Homodyne { theta })
                .unwrap()
                .mean_current();
            assert!(j.abs() < 1e-8);
        }
    }

    #[test]
    fn correlation_at_zero_matches_second_moment() {
        let sys = system(0.0, 1.0, 1.0, 20);
        let stats = CountingStatistics::new(&sys, MeasurementScheme::Photodetection).unwrap();
        let c = stats.correlation(&[0.0, 1.0, 40.0]).unwrap();
        let a = &sys.annihilation;
        let ad = a.adjoint();
        let g2 = ad.matmul(&ad).unwrap().matmul(a).unwrap().matmul(a).unwrap();
        let oracle = fock::expectation(&g2, sys.rho_ss()).unwrap().re - stats.mean_current().powi(2);
        assert!((c.values[0] - oracle).abs() < 1e-10);
        assert!(c.tail_ratio() < 1e-6);
        assert_eq!(c.singular_weight, stats.mean_current());
        assert!(stats.correlation(&[1.0, 0.5]).is_err());
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let (x, fx) = golden_section_max(0.0, 2.0, 1e-8, (1.0, -0.09), |x| Ok(-(x - 1.3f64).powi(2))).unwrap();
        assert!((x - 1.3).abs() < 1e-6 && fx.abs() < 1e-10);
    }

    #[test]
    fn line_search_grid() {
        let grid = LineSearch::default().grid().unwrap();
        assert_eq!(grid.len(), 60);
        assert!((grid[59] - 3.0).abs() < 1e-12);
    }
}
