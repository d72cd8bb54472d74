//! Exact parameter maps under pruning: exponential-mixture chains, the
//! (A, γ) plane, binary Galton-Watson branching probabilities, and the
//! distributional self-similarity test for symmetric chains.

use rustfft::num_complex::Complex;
use serde::Serialize;
use thiserror::Error;

use crate::chains::{ChainError, EhmcParams, GwParams};

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("p2 = {0} outside [0, 1/2]")]
    P2OutOfRange(f64),
    #[error("evaluation grid is empty")]
    EmptyGrid,
}

/// Parameters of the chain of local minima.
pub fn ehmc_prune_params(e: &EhmcParams) -> EhmcParams {
    let (p, q) = (e.p, 1.0 - e.p);
    EhmcParams {
        p: p * e.lambda_d / (p * e.lambda_d + q * e.lambda_u),
        lambda_u: q * e.lambda_u,
        lambda_d: p * e.lambda_d,
    }
}

pub fn a_gamma_step(a: f64, gamma: f64) -> (f64, f64) {
    (a / gamma, gamma / a)
}

/// Branching probability of a pruned binary Galton-Watson tree.
pub fn gw_p2_step(p2: f64) -> Result<f64, DynamicsError> {
    if !(0.0..=0.5).contains(&p2) {
        return Err(DynamicsError::P2OutOfRange(p2));
    }
    let p0 = 1.0 - p2;
    Ok(p2 * p2 / (p0 * p0 + p2 * p2))
}

/// Galton-Watson law of the level-set tree of a positive excursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GwMap {
    pub p2: f64,
    pub mu: f64,
    pub lambda: f64,
}

impl GwMap {
    /// `p2 > 1/2`: the rise rate falls below the fall rate and the excursion
    /// law is outside the subcritical/critical range.
    pub fn supercritical(&self) -> bool {
        self.p2 > 0.5
    }

    pub fn params(&self) -> Result<GwParams, ChainError> {
        GwParams::new(self.p2, self.mu)
    }
}

/// Rises of an excursion are Exp(qλu) and falls Exp(pλd), so `μ ± λ` are those
/// two rates and `p2 = pλd / (qλu + pλd)`.
pub fn ehmc_to_gw(e: &EhmcParams) -> GwMap {
    let rise = (1.0 - e.p) * e.lambda_u;
    let fall = e.p * e.lambda_d;
    GwMap {
        p2: fall / (rise + fall),
        mu: (rise + fall) / 2.0,
        lambda: (rise - fall) / 2.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DynamicsRow {
    pub m: u32,
    pub p: f64,
    pub lambda_u: f64,
    pub lambda_d: f64,
    pub a: f64,
    pub gamma: f64,
    pub p2: f64,
    /// Probability that a point is a local minimum, p(1 - p).
    pub p_min: f64,
}

/// Rows for `m = 0..=steps` prunings.
pub fn iterate(e: &EhmcParams, steps: u32) -> Vec<DynamicsRow> {
    let mut cur = *e;
    let mut rows = Vec::with_capacity(steps as usize + 1);
    for m in 0..=steps {
        rows.push(DynamicsRow {
            m,
            p: cur.p,
            lambda_u: cur.lambda_u,
            lambda_d: cur.lambda_d,
            a: cur.a(),
            gamma: cur.gamma(),
            p2: ehmc_to_gw(&cur).p2,
            p_min: cur.p * (1.0 - cur.p),
        });
        cur = ehmc_prune_params(&cur);
    }
    rows
}

/// Characteristic function of a density on the positive half-line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CharacteristicFn {
    Exponential { lambda: f64 },
    /// Uniform on `(0, width)`.
    Uniform { width: f64 },
    Gamma { shape: f64, rate: f64 },
}

impl CharacteristicFn {
    pub fn eval(&self, s: f64) -> Complex<f64> {
        let i = Complex::i();
        match *self {
            CharacteristicFn::Exponential { lambda } => {
                Complex::new(lambda, 0.0) / (Complex::new(lambda, 0.0) - i * s)
            }
            CharacteristicFn::Uniform { width } => {
                let z = i * (s * width);
                if z.norm() < 1e-8 {
                    // Series expansion around 0.
                    Complex::new(1.0, 0.0) + z / 2.0
                } else {
                    (z.exp() - 1.0) / z
                }
            }
            CharacteristicFn::Gamma { shape, rate } => {
                (Complex::new(1.0, 0.0) - i * (s / rate)).powf(-shape)
            }
        }
    }
}

/// 401 evenly spaced points on [-10, 10].
pub fn default_grid() -> Vec<f64> {
    (0..=400).map(|k| -10.0 + 0.05 * k as f64).collect()
}

/// `max |Re f̂(2s) - |f̂(s) / (2 - f̂(s))|²|` over the grid.
pub fn dss_residual(fhat: &CharacteristicFn, grid: &[f64]) -> Result<f64, DynamicsError> {
    if grid.is_empty() {
        return Err(DynamicsError::EmptyGrid);
    }
    Ok(grid
        .iter()
        .map(|&s| {
            let f = fhat.eval(s);
            let rhs = (f / (Complex::new(2.0, 0.0) - f)).norm_sqr();
            (fhat.eval(2.0 * s).re - rhs).abs()
        })
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ehmc(p: f64, u: f64, d: f64) -> EhmcParams {
        EhmcParams::new(p, u, d).unwrap()
    }

    #[test]
    fn prune_params_examples() {
        assert_eq!(ehmc_prune_params(&ehmc(0.5, 2.0, 2.0)), ehmc(0.5, 1.0, 1.0));
        let e = ehmc_prune_params(&ehmc(0.5, 1.0, 2.0));
        assert!((e.p - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!((e.lambda_u, e.lambda_d), (0.5, 1.0));
    }

    #[test]
    fn a_gamma_examples() {
        assert_eq!(a_gamma_step(1.0, 1.0), (1.0, 1.0));
        assert_eq!(a_gamma_step(1.0, 2.0), (0.5, 2.0));
    }

    #[test]
    fn a_gamma_agrees_with_prune_params() {
        let e = ehmc(0.3, 1.7, 0.6);
        let next = ehmc_prune_params(&e);
        let (a, g) = a_gamma_step(e.a(), e.gamma());
        assert!((next.a() - a).abs() < 1e-12);
        assert!((next.gamma() - g).abs() < 1e-12);
    }

    #[test]
    fn p2_step_examples() {
        assert_eq!(gw_p2_step(0.5), Ok(0.5));
        assert!((gw_p2_step(1.0 / 3.0).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(gw_p2_step(0.0), Ok(0.0));
        assert_eq!(gw_p2_step(0.6), Err(DynamicsError::P2OutOfRange(0.6)));
    }

    #[test]
    fn gw_correspondence() {
        assert_eq!(ehmc_to_gw(&ehmc(0.5, 3.0, 3.0)).p2, 0.5);
        let g = ehmc_to_gw(&ehmc(0.5, 1.0, 2.0));
        assert!((g.p2 - 2.0 / 3.0).abs() < 1e-15);
        assert!(g.supercritical());
        assert!(g.params().is_err());
        let g = ehmc_to_gw(&ehmc(0.5, 1.0, 1.0)).params().unwrap();
        assert_eq!(g.rise_rate(), 0.5);
        assert_eq!(g.fall_rate(), 0.5);
    }

    #[test]
    fn iteration_table() {
        let rows = iterate(&ehmc(1.0 / 3.0, 1.0, 1.0), 6);
        assert_eq!(rows.len(), 7);
        // p^(m) = p2^(m-1).
        for w in rows.windows(2) {
            assert!((w[1].p - w[0].p2).abs() < 1e-12);
        }
        assert!(rows[6].p < 1e-6);
        // Equal rates leave p unchanged by the first pruning only.
        assert_eq!(rows[1].p, rows[0].p);
        assert!(rows[1..].windows(2).all(|w| w[1].p_min < w[0].p_min));
    }

    #[test]
    fn dss_examples() {
        let exp = CharacteristicFn::Exponential { lambda: 1.0 };
        assert!(dss_residual(&exp, &default_grid()).unwrap() < 1e-12);
        let f = exp.eval(1.0);
        let rhs = (f / (Complex::new(2.0, 0.0) - f)).norm_sqr();
        assert!((exp.eval(2.0).re - 0.2).abs() < 1e-15);
        assert!((rhs - 0.2).abs() < 1e-15);
        let uni = CharacteristicFn::Uniform { width: 1.0 };
        assert!(dss_residual(&uni, &default_grid()).unwrap() > 1e-2);
        assert_eq!(dss_residual(&uni, &[]), Err(DynamicsError::EmptyGrid));
    }

    #[test]
    fn characteristic_functions_are_bounded() {
        let fs = [
            CharacteristicFn::Exponential { lambda: 2.0 },
            CharacteristicFn::Uniform { width: 3.0 },
            CharacteristicFn::Gamma { shape: 2.5, rate: 1.0 },
        ];
        for f in fs {
            assert!((f.eval(0.0) - Complex::new(1.0, 0.0)).norm() < 1e-12);
            for s in default_grid() {
                assert!(f.eval(s).norm() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn grid_shape() {
        let g = default_grid();
        assert_eq!(g.len(), 401);
        assert_eq!(g[0], -10.0);
        assert!((g[400] - 10.0).abs() < 1e-12);
        assert_eq!(g[200], 0.0);
    }
}
