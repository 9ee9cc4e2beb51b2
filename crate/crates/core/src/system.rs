//! An assembled PPK model at a fixed Fock truncation: operators, Liouvillian
//! and steady state, with the truncation adequacy check.

use crate::error::{Error, Result};
use crate::fock::{self, DensityMatrix, Operator, DEFAULT_DIM_CAP, TOP_POPULATION_TOL};
use crate::model::{self, ModelParams};
use crate::superop::{self, SteadyState, SuperOperatorMatrix};

/// How many times the cutoff is doubled before giving up.
pub const TRUNCATION_RETRIES: usize = 2;

/// How the Fock truncation of a parameter point is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DimPolicy {
    Fixed(usize),
    /// Default cutoff rule with up to [`TRUNCATION_RETRIES`] doublings.
    Adaptive {
        cap: usize,
    },
}

impl Default for DimPolicy {
    fn default() -> Self {
        DimPolicy::Adaptive { cap: DEFAULT_DIM_CAP }
    }
}

#[derive(Clone, Debug)]
pub struct PpkSystem {
    pub params: ModelParams,
    pub hamiltonian: Operator,
    pub annihilation: Operator,
    pub liouvillian: SuperOperatorMatrix,
    pub steady: SteadyState,
    /// Population in the top 10% of Fock levels of the steady state.
    pub top_population: f64,
}

impl PpkSystem {
    /// Assembles at exactly `dim` levels. Inadequate truncation is logged,
    /// not raised; use [`PpkSystem::adaptive`] for the checked path.
    pub fn with_dim(params: &ModelParams, dim: usize) -> Result<Self> {
        params.validate()?;
        let hamiltonian = model::build_hamiltonian(params, dim)?;
        let jumps = model::jump_operators(params, dim)?;
        let liouvillian = superop::liouvillian(&hamiltonian, &jumps)?;
        let steady = superop::steady_state(&liouvillian)?;
        let top_population = fock::top_population(&steady.rho);
        if top_population > TOP_POPULATION_TOL {
            log::warn!("dim {dim}: top-decile population {top_population:.2e} exceeds {TOP_POPULATION_TOL:.0e}");
        }
        Ok(Self {
            params: *params,
            hamiltonian,
            annihilation: fock::annihilation(dim)?,
            liouvillian,
            steady,
            top_population,
        })
    }

    /// Starts from the default cutoff and doubles it (at most
    /// [`TRUNCATION_RETRIES`] times, never beyond `cap`) until the
    /// top-decile population falls below tolerance.
    pub fn adaptive(params: &ModelParams, cap: usize) -> Result<Self> {
        let mut dim = model::default_dim(params, cap);
        let mut retries = 0;
        loop {
            let sys = Self::with_dim(params, dim)?;
            if sys.top_population <= TOP_POPULATION_TOL {
                return Ok(sys);
            }
            let next = (2 * (dim - 1) + 1).min(cap);
            if retries == TRUNCATION_RETRIES || next == dim {
                return Err(Error::TruncationInadequate {
                    dim,
                    population: sys.top_population,
                });
            }
            log::info!("enlarging truncation {dim} -> {next}");
            dim = next;
            retries += 1;
        }
    }

    pub fn build(params: &ModelParams, policy: DimPolicy) -> Result<Self> {
        match policy {
            DimPolicy::Fixed(dim) => Self::with_dim(params, dim),
            DimPolicy::Adaptive { cap } => Self::adaptive(params, cap),
        }
    }

    pub fn with_default_cap(params: &ModelParams) -> Result<Self> {
        Self::adaptive(params, DEFAULT_DIM_CAP)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn rho_ss(&self) -> &DensityMatrix {
        &self.steady.rho
    }

    /// Steady-state `<a^dag a>`.
    pub fn mean_photon_number(&self) -> f64 {
        self.steady
            .rho
            .populations()
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn occupation_approaches_semiclassical_lobe_as_u_shrinks() {
        // <n> = n0 (1 - O(U)): the relative gap shrinks linearly with U
        let mut last = f64::INFINITY;
        for (u, dim) in [(1.0 / 3.0, 40), (0.2, 50), (0.1, 80)] {
            let p = ModelParams::in_kappa_units(0.0, 1.0, u).unwrap();
            let sys = PpkSystem::with_dim(&p, dim).unwrap();
            let n0 = model::semiclassical_fixed_points(&p).n0;
            let rel = (n0 - sys.mean_photon_number()) / n0;
            assert!(rel > 0.0 && rel < 0.35 * u, "u = {u}: relative gap {rel}");
            assert!(rel < last);
            last = rel;
        }
    }

    #[test]
    fn adaptive_truncation_accepts_default() {
        let p = ModelParams::in_kappa_units(1.0, 1.0, 1.0).unwrap();
        let sys = PpkSystem::with_default_cap(&p).unwrap();
        assert!(sys.top_population <= TOP_POPULATION_TOL);
        assert_eq!(sys.dim(), model::default_dim(&p, DEFAULT_DIM_CAP));
    }

    #[test]
    fn adaptive_truncation_fails_at_tiny_cap() {
        let p = ModelParams::in_kappa_units(2.0, 1.0, 0.1).unwrap();
        assert!(matches!(
            PpkSystem::adaptive(&p, 8),
            Err(Error::TruncationInadequate { dim: 8, .. })
        ));
    }
}
