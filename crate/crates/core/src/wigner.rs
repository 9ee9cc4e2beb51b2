//! Wigner function on a phase-space grid.
//!
//! Quadratures follow the operator convention `x = a + a^dag`,
//! `p = i(a^dag - a)`, so the vacuum is `W = exp(-(x^2 + p^2)/2) / (2 pi)`.
//! With `alpha = (x + i p)/2` and `B = 4|alpha|^2 = x^2 + p^2`,
//!
//! `W = (1/2pi) sum_m (-1)^m [rho_mm g^0_m + 2 Re sum_k rho_{m,m+k} e^{ik phi} g^k_m]`
//!
//! where `g^k_m = sqrt(m!/(m+k)!) B^{k/2} e^{-B/2} L^k_m(B)` is generated by
//! its normalized three-term recursion.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{ln_factorial, DensityMatrix};
use crate::model::{self, ModelParams};

/// Edge strips holding more probability than this reject the grid.
pub const EDGE_MASS_TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub np: usize,
}

impl GridSpec {
    pub fn symmetric(half_width: f64, n: usize) -> Self {
        Self {
            x_min: -half_width,
            x_max: half_width,
            nx: n,
            p_min: -half_width,
            p_max: half_width,
            np: n,
        }
    }

    /// Square grid spanning `+-(2 sqrt(n0) + 4)` (at least `+-5`).
    pub fn for_params(params: &ModelParams, n: usize) -> Self {
        let n0 = model::semiclassical_fixed_points(params).n0;
        Self::symmetric((2.0 * n0.sqrt() + 4.0).max(5.0), n)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.nx >= 3
            && self.np >= 3
            && self.x_max > self.x_min
            && self.p_max > self.p_min
            && [self.x_min, self.x_max, self.p_min, self.p_max]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid Wigner grid {self:?}")))
        }
    }

    fn axis(min: f64, max: f64, n: usize) -> Vec<f64> {
        let step = (max - min) / (n - 1) as f64;
        (0..n).map(|k| min + k as f64 * step).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WignerGrid {
    pub x_values: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Row-major over `x`: `values[ix * np + ip]`.
    pub values: Vec<f64>,
}

/// A strict local maximum of the grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub x: f64,
    pub p: f64,
    pub value: f64,
}

impl WignerGrid {
    #[inline]
    pub fn get(&self, ix: usize, ip: usize) -> f64 {
        self.values[ix * self.p_values.len() + ip]
    }

    pub fn dx(&self) -> f64 {
        self.x_values[1] - self.x_values[0]
    }

    pub fn dp(&self) -> f64 {
        self.p_values[1] - self.p_values[0]
    }

    /// Riemann sum `sum W dx dp`.
    pub fn normalization(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx() * self.dp()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `sum |W| dx dp` over the one-cell boundary strip.
    pub fn edge_mass(&self) -> f64 {
        let (nx, np) = (self.x_values.len(), self.p_values.len());
        let mut sum = 0.0;
        for ix in 0..nx {
            for ip in 0..np {
                if ix == 0 || ip == 0 || ix + 1 == nx || ip + 1 == np {
                    sum += self.get(ix, ip).abs();
                }
            }
        }
        sum * self.dx() * self.dp()
    }

    /// Interior points strictly above their eight neighbours and above
    /// `rel_threshold` times the global maximum.
    pub fn local_maxima(&self, rel_threshold: f64) -> Vec<Peak> {
        let (nx, np) = (self.x_values.len(), self.p_values.len());
        let floor = rel_threshold * self.max_value();
        let mut peaks = Vec::new();
        for ix in 1..nx - 1 {
            for ip in 1..np - 1 {
                let v = self.get(ix, ip);
                if v <= floor {
                    continue;
                }
                let is_max = (ix - 1..=ix + 1)
                    .flat_map(|jx| (ip - 1..=ip + 1).map(move |jp| (jx, jp)))
                    .filter(|&(jx, jp)| (jx, jp) != (ix, ip))
                    .all(|(jx, jp)| self.get(jx, jp) < v);
                if is_max {
                    peaks.push(Peak {
                        x: self.x_values[ix],
                        p: self.p_values[ip],
                        value: v,
                    });
                }
            }
        }
        peaks
    }

    /// `int W dp` at each `x`.
    pub fn x_marginal(&self) -> Vec<f64> {
        let np = self.p_values.len();
        let dp = self.dp();
        (0..self.x_values.len())
            .map(|ix| self.values[ix * np..(ix + 1) * np].iter().sum::<f64>() * dp)
            .collect()
    }
}

/// Precomputed off-diagonals `rho_{m, m+k}` for fast point evaluation.
struct Diagonals {
    dim: usize,
    /// `diags[k][m] = rho_{m, m+k}`.
    diags: Vec<Vec<C64>>,
    ln_fact: Vec<f64>,
}

impl Diagonals {
    fn new(rho: &DensityMatrix) -> Self {
        let dim = rho.dim();
        let diags = (0..dim)
            .map(|k| (0..dim - k).map(|m| rho.get(m, m + k)).collect())
            .collect();
        Self {
            dim,
            diags,
            ln_fact: (0..=dim).map(ln_factorial).collect(),
        }
    }

    /// `W(x, p)` in the `x = a + a^dag` convention.
    fn eval(&self, x: f64, p: f64, g: &mut [f64]) -> f64 {
        let b = x * x + p * p;
        let phi = p.atan2(x);
        let mut total = 0.0;
        for k in 0..self.dim {
            let len = self.dim - k;
            if !laguerre_kernel(k, b, &self.ln_fact, &mut g[..len]) {
                continue;
            }
            let row = &self.diags[k];
            let mut acc = C64::new(0.0, 0.0);
            for m in 0..len {
                let term = row[m] * g[m];
                if m % 2 == 0 {
                    acc += term;
                } else {
                    acc -= term;
                }
            }
            if k == 0 {
                total += acc.re;
            } else {
                total += 2.0 * (acc * C64::from_polar(1.0, k as f64 * phi)).re;
            }
        }
        // (2/pi) W(alpha) and dalpha = dx dp / 4
        total / (2.0 * PI)
    }
}

/// Fills `g[m] = g^k_m(B)`; returns false when every entry underflows.
fn laguerre_kernel(k: usize, b: f64, ln_fact: &[f64], g: &mut [f64]) -> bool {
    let kf = k as f64;
    let ln_g0 = if k == 0 {
        -0.5 * b
    } else if b == 0.0 {
        f64::NEG_INFINITY
    } else {
        0.5 * kf * b.ln() - 0.5 * b - 0.5 * ln_fact[k]
    };
    if ln_g0 == f64::NEG_INFINITY {
        g.iter_mut().for_each(|v| *v = 0.0);
        return false;
    }
    // recursion on scaled values, with the scale tracked as a log offset
    let mut offset = ln_g0;
    let mut prev = 0.0;
    let mut cur = 1.0;
    let mut scaled = Vec::with_capacity(g.len());
    let mut offsets = Vec::with_capacity(g.len());
    for j in 0..g.len() {
        scaled.push(cur);
        offsets.push(offset);
        let jf = j as f64;
        let next = if j == 0 {
            cur * (1.0 + kf - b) / (kf + 1.0).sqrt()
        } else {
            ((2.0 * jf + 1.0 + kf - b) * cur - (jf * (jf + kf)).sqrt() * prev) / ((jf + 1.0) * (jf + 1.0 + kf)).sqrt()
        };
        prev = cur;
        cur = next;
        let mag = cur.abs().max(prev.abs());
        if mag > 1e100 {
            prev /= mag;
            cur /= mag;
            offset += mag.ln();
        }
    }
    let mut any = false;
    for ((out, s), o) in g.iter_mut().zip(&scaled).zip(&offsets) {
        let v = if *s == 0.0 {
            0.0
        } else {
            s.signum() * (s.abs().ln() + o).exp()
        };
        *out = v;
        any |= v != 0.0;
    }
    any
}

/// Single-point evaluation.
pub fn wigner_point(rho: &DensityMatrix, x: f64, p: f64) -> f64 {
    let d = Diagonals::new(rho);
    let mut g = vec![0.0; rho.dim()];
    d.eval(x, p, &mut g)
}

/// Evaluates `W` on the grid, rejecting grids that cut off probability.
pub fn wigner(rho: &DensityMatrix, spec: &GridSpec) -> Result<WignerGrid> {
    let grid = wigner_unchecked(rho, spec)?;
    let edge_mass = grid.edge_mass();
    if edge_mass > EDGE_MASS_TOL {
        return Err(Error::GridTooSmall { edge_mass });
    }
    Ok(grid)
}

/// Grid growth factor and attempt budget for [`wigner_auto`].
pub const GRID_GROWTH: f64 = 1.25;
pub const GRID_ATTEMPTS: usize = 6;

/// Starts from [`GridSpec::for_params`] and widens the square grid (keeping
/// the cell size) until the edge-mass check passes.
pub fn wigner_auto(rho: &DensityMatrix, params: &ModelParams, n: usize) -> Result<WignerGrid> {
    let base = GridSpec::for_params(params, n);
    let cell = (base.x_max - base.x_min) / (n - 1) as f64;
    let mut half = base.x_max;
    let mut last = Error::GridTooSmall { edge_mass: f64::NAN };
    for _ in 0..GRID_ATTEMPTS {
        let points = ((2.0 * half / cell).round() as usize + 1) | 1;
        match wigner(rho, &GridSpec::symmetric(half, points)) {
            Ok(g) => return Ok(g),
            Err(e @ Error::GridTooSmall { .. }) => last = e,
            Err(e) => return Err(e),
        }
        half *= GRID_GROWTH;
    }
    Err(last)
}

/// As [`wigner`] without the edge-mass check.
pub fn wigner_unchecked(rho: &DensityMatrix, spec: &GridSpec) -> Result<WignerGrid> {
    spec.validate()?;
    let x_values = GridSpec::axis(spec.x_min, spec.x_max, spec.nx);
    let p_values = GridSpec::axis(spec.p_min, spec.p_max, spec.np);
    let diagonals = Diagonals::new(rho);
    let d = &diagonals;
    let values: Vec<f64> = x_values
        .par_iter()
        .flat_map_iter(|&x| {
            let mut g = vec![0.0; d.dim];
            p_values.iter().map(move |&p| d.eval(x, p, &mut g)).collect::<Vec<_>>()
        })
        .collect();
    Ok(WignerGrid {
        x_values,
        p_values,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{coherent_state, PureState};
    use crate::system::PpkSystem;

    /// Hermite functions of the standard position `X = (a + a^dag)/sqrt(2)`.
    fn hermite_functions(xs: f64, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        out[0] = PI.powf(-0.25) * (-0.5 * xs * xs).exp();
        if n > 1 {
            out[1] = 2f64.sqrt() * xs * out[0];
        }
        for k in 2..n {
            let kf = k as f64;
            out[k] = (2.0 / kf).sqrt() * xs * out[k - 1] - ((kf - 1.0) / kf).sqrt() * out[k - 2];
        }
        out
    }

    #[test]
    fn vacuum_gaussian() {
        let rho = DensityMatrix::vacuum(6).unwrap();
        let w = wigner(&rho, &GridSpec::symmetric(6.0, 61)).unwrap();
        let peak = w.get(30, 30);
        assert!((peak - 1.0 / (2.0 * PI)).abs() < 1e-8);
        for (ix, &x) in w.x_values.iter().enumerate().step_by(7) {
            for (ip, &p) in w.p_values.iter().enumerate().step_by(5) {
                let exact = (-(x * x + p * p) / 2.0).exp() / (2.0 * PI);
                assert!((w.get(ix, ip) - exact).abs() < 1e-12);
            }
        }
        assert!((w.normalization() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn coherent_state_peak_position() {
        let beta = C64::new(1.2, -0.7);
        let rho = DensityMatrix::from_pure(&coherent_state(30, beta).unwrap());
        // x = 2 Re beta, p = 2 Im beta
        let at_peak = wigner_point(&rho, 2.0 * beta.re, 2.0 * beta.im);
        assert!((at_peak - 1.0 / (2.0 * PI)).abs() < 1e-9);
        let off = wigner_point(&rho, 2.0 * beta.re + 1.0, 2.0 * beta.im);
        assert!((off - (-0.5f64).exp() / (2.0 * PI)).abs() < 1e-9);
    }

    #[test]
    fn fock_one_is_negative_at_origin() {
        let rho = DensityMatrix::fock(4, 1).unwrap();
        assert!((wigner_point(&rho, 0.0, 0.0) + 1.0 / (2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn high_fock_states_stay_finite() {
        let rho = DensityMatrix::from_pure(&PureState::basis(220, 200).unwrap());
        let v = wigner_point(&rho, 20.0, 5.0);
        assert!(v.is_finite() && v.abs() < 1.0 / PI);
        // parity at origin: (-1)^n / (2 pi)
        assert!((wigner_point(&rho, 0.0, 0.0) - 1.0 / (2.0 * PI)).abs() < 1e-9);
    }

    #[test]
    fn marginal_matches_quadrature_density() {
        let sys = PpkSystem::with_dim(&ModelParams::in_kappa_units(1.0, 1.0, 0.5).unwrap(), 24).unwrap();
        let rho = sys.rho_ss();
        let w = wigner(rho, &GridSpec::symmetric(9.0, 181)).unwrap();
        let marginal = w.x_marginal();
        let dim = rho.dim();
        for (ix, &x) in w.x_values.iter().enumerate().step_by(9) {
            // x = sqrt(2) X, so P_x(x) = P_X(x / sqrt 2) / sqrt 2
            let h = hermite_functions(x / 2f64.sqrt(), dim);
            let mut density = 0.0;
            for m in 0..dim {
                for n in 0..dim {
                    density += (rho.get(m, n) * h[m] * h[n]).re;
                }
            }
            density /= 2f64.sqrt();
            assert!(
                (marginal[ix] - density).abs() < 1e-4,
                "x = {x}: {} vs {density}",
                marginal[ix]
            );
        }
    }

    #[test]
    fn ppk_parity_symmetry() {
        let sys = PpkSystem::with_dim(&ModelParams::in_kappa_units(2.0, 1.0, 1.0 / 3.0).unwrap(), 40).unwrap();
        let w = wigner_unchecked(sys.rho_ss(), &GridSpec::symmetric(8.0, 41)).unwrap();
        let n = 41;
        for ix in 0..n {
            for ip in 0..n {
                assert!((w.get(ix, ip) - w.get(n - 1 - ix, n - 1 - ip)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn small_grid_rejected() {
        let rho = DensityMatrix::from_pure(&coherent_state(30, C64::new(2.0, 0.0)).unwrap());
        assert!(matches!(
            wigner(&rho, &GridSpec::symmetric(3.0, 31)),
            Err(Error::GridTooSmall { .. })
        ));
        assert!(wigner(&rho, &GridSpec::symmetric(3.0, 2)).is_err());
    }

    #[test]
    fn local_maxima_of_cat_like_mixture() {
        let a = DensityMatrix::from_pure(&coherent_state(40, C64::new(0.0, 2.5)).unwrap());
        let b = DensityMatrix::from_pure(&coherent_state(40, C64::new(0.0, -2.5)).unwrap());
        let mix = crate::fock::Operator::from_fn(40, |i, j| (a.get(i, j) + b.get(i, j)) * 0.5).unwrap();
        let rho = DensityMatrix::new(mix).unwrap();
        let w = wigner(&rho, &GridSpec::symmetric(10.0, 101)).unwrap();
        let peaks = w.local_maxima(0.01);
        assert_eq!(peaks.len(), 2);
        assert!(peaks
            .iter()
            .all(|pk| pk.x.abs() < 1e-9 && (pk.p.abs() - 5.0).abs() < 1e-9));
    }
}
