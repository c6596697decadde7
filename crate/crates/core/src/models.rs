//! Periodic lattice models: exact Ornstein-Uhlenbeck sampling and MALA
//! chains for Ginzburg-Landau.

use nalgebra::DMatrix;
use ndarray::{s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FhtwError, Result};

/// Unordered nearest-neighbour pairs with coupling strength. Sites of a grid
/// are numbered `j * m + i`.
fn neighbour_pairs(shape: Shape) -> Vec<(usize, usize, f64)> {
    let mut pairs = Vec::new();
    let mut push = |a: usize, b: usize, c: f64| {
        if a != b && c != 0.0 {
            let key = (a.min(b), a.max(b));
            if !pairs.iter().any(|&(x, y, _)| (x, y) == key) {
                pairs.push((key.0, key.1, c));
            }
        }
    };
    match shape {
        Shape::Line { d, alpha } => {
            for i in 0..d {
                push(i, (i + 1) % d, alpha);
            }
        }
        Shape::Grid { m, alpha1, alpha2 } => {
            for j in 0..m {
                for i in 0..m {
                    push(j * m + i, j * m + (i + 1) % m, alpha1);
                    push(j * m + i, ((j + 1) % m) * m + i, alpha2);
                }
            }
        }
    }
    pairs
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Line { d: usize, alpha: f64 },
    Grid { m: usize, alpha1: f64, alpha2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OuSpec {
    Line1d { d: usize, alpha: f64 },
    Grid2d { m: usize, alpha1: f64, alpha2: f64 },
}

impl OuSpec {
    fn shape(&self) -> Shape {
        match *self {
            OuSpec::Line1d { d, alpha } => Shape::Line { d, alpha },
            OuSpec::Grid2d { m, alpha1, alpha2 } => Shape::Grid { m, alpha1, alpha2 },
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            OuSpec::Line1d { d, .. } => d,
            OuSpec::Grid2d { m, .. } => m * m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (size, couplings) = match *self {
            OuSpec::Line1d { d, alpha } => (d, vec![alpha]),
            OuSpec::Grid2d { m, alpha1, alpha2 } => (m, vec![alpha1, alpha2]),
        };
        if size == 0 {
            return Err(FhtwError::invalid("lattice must have at least one site"));
        }
        if couplings.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(FhtwError::invalid("couplings must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GlSpec {
    Line1d { d: usize, alpha: f64, lambda: f64 },
    Grid2d { m: usize, alpha1: f64, alpha2: f64, lambda: f64 },
}

impl GlSpec {
    fn shape(&self) -> Shape {
        match *self {
            GlSpec::Line1d { d, alpha, .. } => Shape::Line { d, alpha },
            GlSpec::Grid2d { m, alpha1, alpha2, .. } => Shape::Grid { m, alpha1, alpha2 },
        }
    }

    pub fn lambda(&self) -> f64 {
        match *self {
            GlSpec::Line1d { lambda, .. } | GlSpec::Grid2d { lambda, .. } => lambda,
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            GlSpec::Line1d { d, .. } => d,
            GlSpec::Grid2d { m, .. } => m * m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (size, couplings) = match *self {
            GlSpec::Line1d { d, alpha, .. } => (d, vec![alpha]),
            GlSpec::Grid2d { m, alpha1, alpha2, .. } => (m, vec![alpha1, alpha2]),
        };
        if size == 0 {
            return Err(FhtwError::invalid("lattice must have at least one site"));
        }
        if couplings.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(FhtwError::invalid("couplings must be finite and >= 0"));
        }
        if !(self.lambda() > 0.0 && self.lambda().is_finite()) {
            return Err(FhtwError::invalid("lambda must be positive"));
        }
        Ok(())
    }
}

/// `Q = I + Σ_{pairs} α (e_i - e_j)(e_i - e_j)ᵀ`, the Hessian of the exponent.
pub fn ou_precision(spec: &OuSpec) -> DMatrix<f64> {
    let d = spec.dim();
    let mut q = DMatrix::identity(d, d);
    for (i, j, c) in neighbour_pairs(spec.shape()) {
        q[(i, i)] += c;
        q[(j, j)] += c;
        q[(i, j)] -= c;
        q[(j, i)] -= c;
    }
    q
}

/// Exact covariance `Q⁻¹`.
pub fn ou_covariance(spec: &OuSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    ou_precision(spec)
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| FhtwError::Internal("OU precision is not positive definite".into()))
}

const BLOCK: usize = 1024;

/// Exact draws: `x = L⁻ᵀ z` with `Q = L Lᵀ`. Each block of rows has its own
/// generator stream, so output is independent of thread count.
pub fn sample_ou(spec: &OuSpec, n: usize, seed: u64) -> Result<Array2<f64>> {
    spec.validate()?;
    if n == 0 {
        return Err(FhtwError::invalid("sample count must be at least 1"));
    }
    let d = spec.dim();
    let chol = ou_precision(spec)
        .cholesky()
        .ok_or_else(|| FhtwError::Internal("OU precision is not positive definite".into()))?;
    let lt = chol.l().transpose();
    let mut out = Array2::zeros((n, d));
    out.axis_chunks_iter_mut(Axis(0), BLOCK)
        .into_par_iter()
        .enumerate()
        .for_each(|(b, mut block)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let rows = block.nrows();
            let mut z = DMatrix::from_fn(d, rows, |_, _| rng.sample::<f64, _>(StandardNormal));
            lt.solve_upper_triangular_mut(&mut z);
            for (r, mut row) in block.axis_iter_mut(Axis(0)).enumerate() {
                for (c, v) in row.iter_mut().enumerate() {
                    *v = z[(c, r)];
                }
            }
        });
    Ok(out)
}

/// A smooth potential `V`; the target density is `exp(-V)`.
pub trait Potential: Sync {
    fn dim(&self) -> usize;
    /// Returns `V(x)` and writes `∇V(x)` into `grad`.
    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone)]
pub struct GlPotential {
    d: usize,
    lambda: f64,
    pairs: Vec<(usize, usize, f64)>,
}

impl GlPotential {
    pub fn new(spec: &GlSpec) -> Result<Self> {
        spec.validate()?;
        Ok(GlPotential {
            d: spec.dim(),
            lambda: spec.lambda(),
            pairs: neighbour_pairs(spec.shape()),
        })
    }
}

impl Potential for GlPotential {
    fn dim(&self) -> usize {
        self.d
    }

    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut v = 0.0;
        for (g, &xi) in grad.iter_mut().zip(x) {
            let w = 1.0 - xi * xi;
            v += 0.5 * self.lambda * w * w;
            *g = -2.0 * self.lambda * xi * w;
        }
        for &(i, j, c) in &self.pairs {
            let diff = x[i] - x[j];
            v += 0.5 * c * diff * diff;
            grad[i] += c * diff;
            grad[j] -= c * diff;
        }
        v
    }
}

pub fn gl_potential_and_gradient(spec: &GlSpec, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let pot = GlPotential::new(spec)?;
    if x.len() != pot.d {
        return Err(FhtwError::invalid(format!(
            "state has {} sites, model has {}",
            x.len(),
            pot.d
        )));
    }
    let mut g = vec![0.0; pot.d];
    let v = pot.value_and_gradient(x, &mut g);
    Ok((v, g))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    /// initial Langevin step size `h` (proposal `x - h∇V + sqrt(2h) ξ`)
    pub step_size: f64,
    pub burn_in: usize,
    pub thinning: usize,
    pub chains: usize,
    pub seed: u64,
    /// tune `h` during burn-in toward `target_acceptance`
    pub adapt: bool,
    pub target_acceptance: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            step_size: 1e-3,
            burn_in: 10_000,
            thinning: 10,
            chains: 8,
            seed: 0,
            adapt: true,
            target_acceptance: 0.574,
        }
    }
}

impl McmcConfig {
    fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(FhtwError::invalid("step size must be positive"));
        }
        if self.chains == 0 {
            return Err(FhtwError::invalid("need at least one chain"));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(FhtwError::invalid("target acceptance must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McmcReport {
    /// post-burn-in acceptance rate per chain
    pub acceptance: Vec<f64>,
    pub mean_acceptance: f64,
    pub step_sizes: Vec<f64>,
    /// fraction of kept states whose site average is positive, per chain
    pub mode_occupancy: Vec<f64>,
    pub warnings: Vec<String>,
}

struct ChainResult {
    states: Vec<f64>,
    acceptance: f64,
    step: f64,
    positive: f64,
}

fn run_chain<P: Potential>(pot: &P, init: Vec<f64>, keep: usize, cfg: &McmcConfig, chain: usize) -> ChainResult {
    let d = pot.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64);
    let mut x = init;
    let mut gx = vec![0.0; d];
    let mut vx = pot.value_and_gradient(&x, &mut gx);
    let mut y = vec![0.0; d];
    let mut gy = vec![0.0; d];
    let mut h = cfg.step_size;
    let mut step = |x: &mut Vec<f64>, gx: &mut Vec<f64>, vx: &mut f64, h: f64, rng: &mut ChaCha8Rng| -> bool {
        let noise = (2.0 * h).sqrt();
        for i in 0..d {
            let xi: f64 = rng.sample(StandardNormal);
            y[i] = x[i] - h * gx[i] + noise * xi;
        }
        let vy = pot.value_and_gradient(&y, &mut gy);
        // log q(x | y) - log q(y | x)
        let mut fwd = 0.0;
        let mut back = 0.0;
        for i in 0..d {
            let a = y[i] - x[i] + h * gx[i];
            let b = x[i] - y[i] + h * gy[i];
            fwd += a * a;
            back += b * b;
        }
        let log_ratio = *vx - vy - (back - fwd) / (4.0 * h);
        let u: f64 = rng.gen();
        if log_ratio.is_finite() && u.ln() < log_ratio {
            std::mem::swap(x, &mut y);
            std::mem::swap(gx, &mut gy);
            *vx = vy;
            true
        } else {
            false
        }
    };

    // burn-in with windowed step-size adaptation; the kept step is the
    // geometric mean over the second half, since one window is noisy
    let window = 100;
    let windows = cfg.burn_in / window;
    let mut accepted_in_window = 0;
    let (mut log_h_sum, mut averaged) = (0.0, 0usize);
    for t in 0..cfg.burn_in {
        if step(&mut x, &mut gx, &mut vx, h, &mut rng) {
            accepted_in_window += 1;
        }
        if cfg.adapt && (t + 1) % window == 0 {
            let rate = accepted_in_window as f64 / window as f64;
            h *= (2.0 * (rate - cfg.target_acceptance)).exp();
            accepted_in_window = 0;
            if (t + 1) / window > windows / 2 {
                log_h_sum += h.ln();
                averaged += 1;
            }
        }
    }
    if averaged > 0 {
        h = (log_h_sum / averaged as f64).exp();
    }
    let thin = cfg.thinning.max(1);
    let mut states = Vec::with_capacity(keep * d);
    let mut accepted = 0usize;
    let mut positive = 0usize;
    for _ in 0..keep {
        for _ in 0..thin {
            if step(&mut x, &mut gx, &mut vx, h, &mut rng) {
                accepted += 1;
            }
        }
        if x.iter().sum::<f64>() > 0.0 {
            positive += 1;
        }
        states.extend_from_slice(&x);
    }
    ChainResult {
        states,
        acceptance: accepted as f64 / (keep * thin).max(1) as f64,
        step: h,
        positive: positive as f64 / keep.max(1) as f64,
    }
}

/// Runs `config.chains` MALA chains in parallel and stacks their kept states
/// chain by chain. `init(c)` gives the starting state of chain `c`.
pub fn run_mala<P: Potential>(
    pot: &P,
    n: usize,
    config: &McmcConfig,
    init: impl Fn(usize) -> Vec<f64> + Sync,
) -> Result<(Array2<f64>, McmcReport)> {
    config.validate()?;
    if n == 0 {
        return Err(FhtwError::invalid("sample count must be at least 1"));
    }
    let d = pot.dim();
    let per_chain = n.div_ceil(config.chains);
    let results: Vec<ChainResult> = (0..config.chains)
        .into_par_iter()
        .map(|c| {
            let x0 = init(c);
            assert_eq!(x0.len(), d, "initial state has wrong dimension");
            run_chain(pot, x0, per_chain, config, c)
        })
        .collect();
    let mut out = Array2::zeros((n, d));
    for (c, r) in results.iter().enumerate() {
        let lo = c * per_chain;
        if lo >= n {
            break;
        }
        let hi = (lo + per_chain).min(n);
        let block = Array2::from_shape_vec((per_chain, d), r.states.clone()).expect("chain shape");
        out.slice_mut(s![lo..hi, ..]).assign(&block.slice(s![..hi - lo, ..]));
    }
    let acceptance: Vec<f64> = results.iter().map(|r| r.acceptance).collect();
    let mean_acceptance = acceptance.iter().sum::<f64>() / acceptance.len() as f64;
    let mut warnings = Vec::new();
    if !(0.2..=0.95).contains(&mean_acceptance) {
        warnings.push(format!("MALA acceptance {mean_acceptance:.3} outside [0.2, 0.95]; step size poorly tuned"));
    }
    let report = McmcReport {
        acceptance,
        mean_acceptance,
        step_sizes: results.iter().map(|r| r.step).collect(),
        mode_occupancy: results.iter().map(|r| r.positive).collect(),
        warnings,
    };
    Ok((out, report))
}

/// GL samples; half the chains start in the `+1` well and half in `-1`.
pub fn sample_gl_mcmc(spec: &GlSpec, n: usize, config: &McmcConfig) -> Result<(Array2<f64>, McmcReport)> {
    let pot = GlPotential::new(spec)?;
    let d = pot.dim();
    let half = config.chains.div_ceil(2);
    run_mala(&pot, n, config, |c| vec![if c < half { 1.0 } else { -1.0 }; d])
}
