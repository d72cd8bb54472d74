//! Seeded generators: homogeneous Markov chains with pluggable jump kernels,
//! binary Galton-Watson trees and fractional Brownian motion.

use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, Exp, Normal, StandardNormal, Uniform};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

use crate::level_set::Series;
use crate::rng::{rng_from_seed, Rng};
use crate::tree::{Node, Tree};

#[derive(Debug, Error, PartialEq)]
pub enum ChainError {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("invalid Galton-Watson parameters: {0}")]
    InvalidGw(String),
    #[error("Galton-Watson tree exceeded {0} nodes")]
    TooManyNodes(usize),
    #[error("chain length must be at least 1")]
    EmptyChain,
    #[error("Hurst exponent {0} outside (0, 1)")]
    InvalidHurst(f64),
    #[error("fBm length {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("circulant embedding has negative eigenvalue {value:e} at {index}; try a larger n")]
    Embedding { index: usize, value: f64 },
    #[error("series has no completed positive excursion")]
    NoExcursion,
}

/// Exponential-mixture jump law: up by Exp(λu) with probability `p`, down by
/// Exp(λd) otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EhmcParams {
    pub p: f64,
    pub lambda_u: f64,
    pub lambda_d: f64,
}

impl EhmcParams {
    pub fn new(p: f64, lambda_u: f64, lambda_d: f64) -> Result<Self, ChainError> {
        let e = EhmcParams { p, lambda_u, lambda_d };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<(), ChainError> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(ChainError::InvalidKernel(format!("p = {} outside [0, 1]", self.p)));
        }
        if !(self.lambda_u > 0.0 && self.lambda_u.is_finite())
            || !(self.lambda_d > 0.0 && self.lambda_d.is_finite())
        {
            return Err(ChainError::InvalidKernel("rates must be positive and finite".into()));
        }
        Ok(())
    }

    /// A = (1 - p) / p.
    pub fn a(&self) -> f64 {
        (1.0 - self.p) / self.p
    }

    /// γ = λd / λu.
    pub fn gamma(&self) -> f64 {
        self.lambda_d / self.lambda_u
    }

    pub fn mean_jump(&self) -> f64 {
        self.p / self.lambda_u - (1.0 - self.p) / self.lambda_d
    }

    pub fn is_symmetric(&self) -> bool {
        self.p == 0.5 && self.lambda_u == self.lambda_d
    }

    /// CDF of one jump.
    pub fn jump_cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            (1.0 - self.p) * (self.lambda_d * x).exp()
        } else {
            (1.0 - self.p) + self.p * (1.0 - (-self.lambda_u * x).exp())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Gaussian { sigma: f64 },
    /// Uniform on `[-h, h]`.
    Uniform { h: f64 },
    /// Two-sided exponential with rate `lambda`.
    Laplace { lambda: f64 },
    ExpMixture(EhmcParams),
    /// ±1 steps. A positive `jitter` adds uniform noise on `[-jitter, jitter]`
    /// to each step, which keeps the kernel symmetric and breaks value ties.
    Rademacher {
        #[serde(default)]
        jitter: f64,
    },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<(), ChainError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ChainError::InvalidKernel(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            KernelSpec::Gaussian { sigma } => positive("sigma", sigma),
            KernelSpec::Uniform { h } => positive("h", h),
            KernelSpec::Laplace { lambda } => positive("lambda", lambda),
            KernelSpec::ExpMixture(e) => e.validate(),
            KernelSpec::Rademacher { jitter } => {
                if (0.0..0.5).contains(&jitter) {
                    Ok(())
                } else {
                    Err(ChainError::InvalidKernel(format!("jitter {jitter} outside [0, 0.5)")))
                }
            }
        }
    }

    pub fn is_symmetric(&self) -> bool {
        match self {
            KernelSpec::ExpMixture(e) => e.is_symmetric(),
            _ => true,
        }
    }
}

/// Jump sampler with distributions built once.
#[derive(Debug, Clone)]
pub enum JumpSampler {
    Gaussian(Normal<f64>),
    Uniform(Uniform<f64>),
    Laplace(Exp<f64>),
    ExpMixture { p: f64, up: Exp<f64>, down: Exp<f64> },
    Rademacher { jitter: f64 },
}

impl JumpSampler {
    pub fn new(kernel: &KernelSpec) -> Result<Self, ChainError> {
        kernel.validate()?;
        let bad = |e: String| ChainError::InvalidKernel(e);
        Ok(match *kernel {
            KernelSpec::Gaussian { sigma } => {
                JumpSampler::Gaussian(Normal::new(0.0, sigma).map_err(|e| bad(e.to_string()))?)
            }
            KernelSpec::Uniform { h } => {
                JumpSampler::Uniform(Uniform::new_inclusive(-h, h).map_err(|e| bad(e.to_string()))?)
            }
            KernelSpec::Laplace { lambda } => {
                JumpSampler::Laplace(Exp::new(lambda).map_err(|e| bad(e.to_string()))?)
            }
            KernelSpec::ExpMixture(e) => JumpSampler::ExpMixture {
                p: e.p,
                up: Exp::new(e.lambda_u).map_err(|e| bad(e.to_string()))?,
                down: Exp::new(e.lambda_d).map_err(|e| bad(e.to_string()))?,
            },
            KernelSpec::Rademacher { jitter } => JumpSampler::Rademacher { jitter },
        })
    }

    #[inline]
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match self {
            JumpSampler::Gaussian(d) => d.sample(rng),
            JumpSampler::Uniform(d) => d.sample(rng),
            JumpSampler::Laplace(d) => {
                let x = d.sample(rng);
                if rng.random::<bool>() { x } else { -x }
            }
            JumpSampler::ExpMixture { p, up, down } => {
                if rng.random::<f64>() < *p {
                    up.sample(rng)
                } else {
                    -down.sample(rng)
                }
            }
            JumpSampler::Rademacher { jitter } => {
                let step = if rng.random::<bool>() { 1.0 } else { -1.0 };
                if *jitter > 0.0 {
                    step + jitter * (2.0 * rng.random::<f64>() - 1.0)
                } else {
                    step
                }
            }
        }
    }
}

/// Chain values `X_1 = 0, X_{k+1} = X_k + jump`, appended to `out`.
pub fn fill_chain(sampler: &JumpSampler, n: usize, rng: &mut Rng, out: &mut Vec<f64>) {
    out.clear();
    out.reserve(n);
    let mut x = 0.0;
    for _ in 0..n {
        out.push(x);
        x += sampler.sample(rng);
    }
}

pub fn gen_chain(kernel: &KernelSpec, n: usize, seed: u64) -> Result<Series, ChainError> {
    if n == 0 {
        return Err(ChainError::EmptyChain);
    }
    let sampler = JumpSampler::new(kernel)?;
    let mut rng = rng_from_seed(seed);
    let mut v = Vec::new();
    fill_chain(&sampler, n, &mut rng, &mut v);
    Ok(Series::new(v).expect("finite chain"))
}

/// Binary Galton-Watson law: no children with probability `p0 = 1 - p2`, two
/// with probability `p2`. Edge lengths are i.i.d. exponential with rate `2μ`,
/// which makes the Harris-path rises and falls exponential with rates `μ ± λ`,
/// `λ = μ (1 - 2 p2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GwParams {
    pub p2: f64,
    #[serde(default = "one")]
    pub mu: f64,
}

fn one() -> f64 {
    1.0
}

impl GwParams {
    pub fn new(p2: f64, mu: f64) -> Result<Self, ChainError> {
        if !(0.0..=0.5).contains(&p2) {
            return Err(ChainError::InvalidGw(format!("p2 = {p2} outside [0, 1/2]")));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(ChainError::InvalidGw(format!("mu = {mu} must be positive")));
        }
        Ok(GwParams { p2, mu })
    }

    pub fn p0(&self) -> f64 {
        1.0 - self.p2
    }

    pub fn lambda(&self) -> f64 {
        self.mu * (1.0 - 2.0 * self.p2)
    }

    pub fn rise_rate(&self) -> f64 {
        self.mu + self.lambda()
    }

    pub fn fall_rate(&self) -> f64 {
        self.mu - self.lambda()
    }

    pub fn edge_rate(&self) -> f64 {
        2.0 * self.mu
    }

    /// Probability of one particular planar binary shape with `leaves` leaves.
    pub fn shape_probability(&self, leaves: u32) -> f64 {
        self.p2.powi(leaves as i32 - 1) * self.p0().powi(leaves as i32)
    }
}

pub fn gen_gw_tree(g: &GwParams, max_nodes: usize, seed: u64) -> Result<Tree, ChainError> {
    gen_gw_tree_with(g, max_nodes, &mut rng_from_seed(seed))
}

pub fn gen_gw_tree_with(g: &GwParams, max_nodes: usize, rng: &mut Rng) -> Result<Tree, ChainError> {
    let g = GwParams::new(g.p2, g.mu)?;
    let edge = Exp::new(g.edge_rate()).map_err(|e| ChainError::InvalidGw(e.to_string()))?;
    let mut raw: Vec<Node> = Vec::new();
    let mut open = vec![0usize];
    raw.push(Node { parent: None, children: SmallVec::new(), length: edge.sample(rng) });
    while let Some(v) = open.pop() {
        if rng.random::<f64>() >= g.p2 {
            continue;
        }
        if raw.len() + 2 > max_nodes {
            return Err(ChainError::TooManyNodes(max_nodes));
        }
        for _ in 0..2 {
            raw.push(Node { parent: Some(v), children: SmallVec::new(), length: edge.sample(rng) });
            let c = raw.len() - 1;
            raw[v].children.push(c);
        }
        let (l, r) = (raw[v].children[0], raw[v].children[1]);
        open.push(r);
        open.push(l);
    }
    Ok(Tree::from_arena(raw, Some(0), |_| true).0)
}

/// Autocovariance of unit-variance fractional Gaussian noise at lag `k`.
pub fn fgn_autocovariance(hurst: f64, k: usize) -> f64 {
    let h2 = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

/// Fractional Gaussian noise by circulant embedding (Davies-Harte). The
/// eigenvalues are computed once; each call to [`FbmGenerator::noise`] costs
/// one FFT of length `2n`.
pub struct FbmGenerator {
    n: usize,
    scale: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl FbmGenerator {
    pub fn new(hurst: f64, n: usize) -> Result<Self, ChainError> {
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(ChainError::InvalidHurst(hurst));
        }
        if n == 0 || !n.is_power_of_two() {
            return Err(ChainError::NotPowerOfTwo(n));
        }
        let m = 2 * n;
        let mut c: Vec<Complex<f64>> = (0..m)
            .map(|j| {
                let lag = if j <= n { j } else { m - j };
                Complex::new(fgn_autocovariance(hurst, lag), 0.0)
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(m);
        fft.process(&mut c);
        let top = c.iter().map(|z| z.re).fold(0.0, f64::max);
        let mut scale = Vec::with_capacity(m);
        for (index, z) in c.iter().enumerate() {
            let value = z.re;
            if value < -1e-9 * top {
                return Err(ChainError::Embedding { index, value });
            }
            scale.push((value.max(0.0) / m as f64).sqrt());
        }
        Ok(FbmGenerator { n, scale, fft })
    }

    /// `n` increments with the exact fGn covariance.
    pub fn noise(&self, rng: &mut Rng) -> Vec<f64> {
        let mut w: Vec<Complex<f64>> = self
            .scale
            .iter()
            .map(|&s| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                Complex::new(s * a, s * b)
            })
            .collect();
        self.fft.process(&mut w);
        w.truncate(self.n);
        w.into_iter().map(|z| z.re).collect()
    }

    /// Path of `n + 1` points starting at 0.
    pub fn path(&self, rng: &mut Rng) -> Vec<f64> {
        let mut x = 0.0;
        let mut out = Vec::with_capacity(self.n + 1);
        out.push(0.0);
        for g in self.noise(rng) {
            x += g;
            out.push(x);
        }
        out
    }
}

/// Fractional Brownian motion sampled at `n + 1` equally spaced times.
pub fn gen_fbm(hurst: f64, n: usize, seed: u64) -> Result<Series, ChainError> {
    let g = FbmGenerator::new(hurst, n)?;
    Ok(Series::new(g.path(&mut rng_from_seed(seed))).expect("finite path"))
}

/// The leading positive excursion of `s` above `s[0]`, shifted to start at 0
/// and closed with a 0 at the first return to (or crossing of) the start level.
pub fn first_excursion(s: &Series) -> Result<Series, ChainError> {
    let v = s.values();
    let base = v[0];
    if v.len() < 2 || v[1] <= base {
        return Err(ChainError::NoExcursion);
    }
    let mut out = vec![0.0];
    for &x in &v[1..] {
        if x > base {
            out.push(x - base);
        } else {
            out.push(0.0);
            return Ok(Series::new(out).expect("finite"));
        }
    }
    Err(ChainError::NoExcursion)
}

/// Samples one positive excursion of the chain from its start level: the chain
/// leaves upwards, runs until it first drops to or below the start, and the
/// terminal point is set to 0. Returns `false`, leaving a partial path in
/// `buf`, when `max_steps` is hit first.
pub fn sample_excursion(
    sampler: &JumpSampler,
    rng: &mut Rng,
    max_steps: usize,
    buf: &mut Vec<f64>,
) -> bool {
    buf.clear();
    buf.push(0.0);
    let mut x = loop {
        let j = sampler.sample(rng);
        if j > 0.0 {
            break j;
        }
    };
    while buf.len() < max_steps {
        if x <= 0.0 {
            buf.push(0.0);
            return true;
        }
        buf.push(x);
        x += sampler.sample(rng);
    }
    false
}
