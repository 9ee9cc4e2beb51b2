//! The parametrically pumped Kerr resonator: Hamiltonian, Liouvillian pieces
//! and the semiclassical fixed-point analysis.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{self, Operator};

/// Physical rates of one PPK configuration, all in the same frequency unit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Cavity-pump detuning.
    pub delta: f64,
    /// Two-photon pump strength.
    pub g: f64,
    /// Kerr nonlinearity.
    pub u: f64,
    /// Single-photon loss rate.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

fn default_kappa() -> f64 {
    1.0
}

impl ModelParams {
    /// Validated constructor.
    pub fn new(delta: f64, g: f64, u: f64, kappa: f64) -> Result<Self> {
        let params = Self { delta, g, u, kappa };
        params.validate()?;
        Ok(params)
    }

    /// Parameters in units of `kappa = 1`.
    pub fn in_kappa_units(delta: f64, g: f64, u: f64) -> Result<Self> {
        Self::new(delta, g, u, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.delta, self.g, self.u, self.kappa].iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidParams(format!("non-finite rate in {self:?}")));
        }
        if self.u <= 0.0 {
            return Err(Error::InvalidParams(format!("u must be > 0, got {}", self.u)));
        }
        if self.kappa <= 0.0 {
            return Err(Error::InvalidParams(format!("kappa must be > 0, got {}", self.kappa)));
        }
        if self.g < 0.0 {
            return Err(Error::InvalidParams(format!("g must be >= 0, got {}", self.g)));
        }
        Ok(())
    }

    /// Multiplies every rate by `factor` (time measured in units of `1/factor`).
    pub fn rescaled(&self, factor: f64) -> Self {
        Self {
            delta: self.delta * factor,
            g: self.g * factor,
            u: self.u * factor,
            kappa: self.kappa * factor,
        }
    }

    /// `kappa / U`, the size parameter of the critical limit.
    pub fn inverse_nonlinearity(&self) -> f64 {
        self.kappa / self.u
    }
}

/// Outer fixed points of the semiclassical flow.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemiclassicalFixedPoints {
    /// Occupation of the outer fixed points `+-alpha_0` (0 when absent).
    pub n0: f64,
    /// `phi_0 = asin(-kappa / 2G) / 2`, in `[-pi/4, 0]`.
    pub phi0: f64,
    /// Detuning of the continuous (pitchfork) transition, `-sqrt(G^2 - kappa^2/4)`.
    /// `None` below the parametric threshold `G <= kappa/2`.
    pub delta_c: Option<f64>,
    pub bistable: bool,
}

impl SemiclassicalFixedPoints {
    /// Argument of the stable outer fixed point `alpha_0` for the Hamiltonian
    /// built by [`build_hamiltonian`].
    ///
    /// The branch with `n0 = (Delta + sqrt(G^2 - kappa^2/4)) / U` has
    /// `cos 2phi < 0`, i.e. `phi = -pi/2 - phi0`, so the lobes lie close to
    /// the `p` axis.
    pub fn lobe_phase(&self) -> f64 {
        -std::f64::consts::FRAC_PI_2 - self.phi0
    }

    /// `alpha_0 = sqrt(n0) e^{i lobe_phase}`.
    pub fn lobe_amplitude(&self) -> C64 {
        C64::from_polar(self.n0.sqrt(), self.lobe_phase())
    }
}

/// Proportionality scales of the tunnelling rates between lobes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunnellingScales {
    /// Inner (vacuum) lobe to either outer lobe: `|<0|+-alpha_0>|^2 = e^{-n0}`.
    pub inner_outer: f64,
    /// Directly between the outer lobes: `|<alpha_0|-alpha_0>|^2 = e^{-2 n0}`.
    pub outer_outer: f64,
}

impl TunnellingScales {
    pub fn from_occupation(n0: f64) -> Result<Self> {
        if !(n0 >= 0.0) {
            return Err(Error::Domain(format!("occupation must be >= 0, got {n0}")));
        }
        let inner_outer = (-n0).exp();
        Ok(Self {
            inner_outer,
            outer_outer: inner_outer * inner_outer,
        })
    }
}

/// `H = -Delta a^dag a + (U/2) a^dag2 a^2 + (G/2)(a^dag2 + a^2)`.
///
/// Entries are written directly in the Fock basis: the diagonal is
/// `-Delta n + (U/2) n(n-1)` and `<n|H|n+2> = <n+2|H|n> = (G/2) sqrt((n+1)(n+2))`.
pub fn build_hamiltonian(params: &ModelParams, dim: usize) -> Result<Operator> {
    let mut h = Operator::zeros(dim)?;
    for n in 0..dim {
        let nf = n as f64;
        h.set(
            n,
            n,
            C64::new(-params.delta * nf + 0.5 * params.u * nf * (nf - 1.0), 0.0),
        );
        if n + 2 < dim {
            let v = C64::new(0.5 * params.g * ((nf + 1.0) * (nf + 2.0)).sqrt(), 0.0);
            h.set(n, n + 2, v);
            h.set(n + 2, n, v);
        }
    }
    Ok(h)
}

/// Jump operators of the master equation: single-photon loss at rate kappa.
pub fn jump_operators(params: &ModelParams, dim: usize) -> Result<Vec<(Operator, f64)>> {
    Ok(vec![(fock::annihilation(dim)?, params.kappa)])
}

/// Semiclassical fixed-point analysis.
///
/// Uses `n0 = (Delta + sqrt(G^2 - kappa^2/4)) / U`, the form whose positivity
/// condition reproduces the critical detuning `Delta_c = -sqrt(G^2 - kappa^2/4)`.
pub fn semiclassical_fixed_points(params: &ModelParams) -> SemiclassicalFixedPoints {
    let half_kappa = 0.5 * params.kappa;
    let ratio = if params.g > 0.0 {
        (-half_kappa / params.g).clamp(-1.0, 1.0)
    } else {
        -1.0
    };
    let phi0 = 0.5 * ratio.asin();
    if params.g <= half_kappa {
        return SemiclassicalFixedPoints {
            n0: 0.0,
            phi0,
            delta_c: None,
            bistable: false,
        };
    }
    let root = (params.g * params.g - half_kappa * half_kappa).sqrt();
    let n0 = (params.delta + root) / params.u;
    let bistable = n0 > 0.0;
    SemiclassicalFixedPoints {
        n0: if bistable { n0 } else { 0.0 },
        phi0,
        delta_c: Some(-root),
        bistable,
    }
}

/// Tunnelling rate scales for a bistable configuration.
pub fn tunnelling_scales(fp: &SemiclassicalFixedPoints) -> Result<TunnellingScales> {
    if !fp.bistable {
        return Err(Error::Domain("tunnelling scales need a bistable configuration".into()));
    }
    TunnellingScales::from_occupation(fp.n0)
}

/// Default Fock dimension for `params`, following [`fock::truncation_dim`].
pub fn default_dim(params: &ModelParams, cap: usize) -> usize {
    fock::truncation_dim(semiclassical_fixed_points(params).n0, cap)
}
