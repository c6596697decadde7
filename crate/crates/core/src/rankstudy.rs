//! Numerical rank of densities across a variable bipartition, in lattice
//! and in wavelet coordinates.
//!
//! The unfolding matrix of a density is probed through pairwise moments of
//! univariate Legendre features: `Z[β, γ] = E[s_β(x_I) s_γ(x_J)]`.

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::basis::{build_legendre_basis, infer_support, BasisSpec, Interval};
use crate::error::{FhtwError, Result};
use crate::models::{sample_gl_mcmc, sample_ou, GlSpec, McmcConfig, McmcReport, OuSpec};
use crate::quadrature::gauss_legendre_on;
use crate::sketch::{chunked_reduce, SampleSet};
use crate::wavelet::{FilterKind, Layout, ScaleLabel, WaveletPlan};

/// Default cap on the number of features per side.
pub const FEATURE_CAP: usize = 4000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bipartition {
    pub i: Vec<usize>,
    pub j: Vec<usize>,
}

impl Bipartition {
    pub fn new(i: Vec<usize>, j: Vec<usize>, d: usize) -> Result<Self> {
        let mut seen = vec![false; d];
        for &v in i.iter().chain(&j) {
            if v >= d {
                return Err(FhtwError::invalid(format!("variable {v} out of range for d = {d}")));
            }
            if seen[v] {
                return Err(FhtwError::invalid(format!("variable {v} appears twice in the bipartition")));
            }
            seen[v] = true;
        }
        Ok(Bipartition { i, j })
    }
}

/// One univariate feature `ψ_index(x_variable)`; `index = 0` is the constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub variable: usize,
    pub index: usize,
}

/// Features of both sides, with a single shared constant leading each side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SketchFamily {
    pub i_side: Vec<Feature>,
    pub j_side: Vec<Feature>,
    /// one basis per variable of the sample matrix
    pub bases: Vec<BasisSpec>,
}

impl SketchFamily {
    /// Constant plus `ψ_1 .. ψ_degree` of every listed variable, per side.
    pub fn univariate(bases: Vec<BasisSpec>, i_vars: &[usize], j_vars: &[usize], degree: usize) -> Result<Self> {
        let side = |vars: &[usize]| -> Result<Vec<Feature>> {
            let mut out = vec![Feature { variable: vars.first().copied().unwrap_or(0), index: 0 }];
            let mut seen = std::collections::BTreeSet::new();
            for &v in vars {
                if v >= bases.len() {
                    return Err(FhtwError::invalid(format!("feature variable {v} out of range")));
                }
                if !seen.insert(v) {
                    continue;
                }
                if bases[v].size <= degree {
                    return Err(FhtwError::invalid(format!(
                        "basis of variable {v} has {} functions, degree {degree} requested",
                        bases[v].size
                    )));
                }
                out.extend((1..=degree).map(|index| Feature { variable: v, index }));
            }
            Ok(out)
        };
        let family = SketchFamily {
            i_side: side(i_vars)?,
            j_side: side(j_vars)?,
            bases,
        };
        Ok(family)
    }

    pub fn swapped(&self) -> Self {
        SketchFamily {
            i_side: self.j_side.clone(),
            j_side: self.i_side.clone(),
            bases: self.bases.clone(),
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.i_side.is_empty() || self.j_side.is_empty() {
            return Err(FhtwError::invalid("both sides need at least one feature"));
        }
        if self.bases.len() != d {
            return Err(FhtwError::invalid(format!("{} bases for {d} variables", self.bases.len())));
        }
        for f in self.i_side.iter().chain(&self.j_side) {
            if f.variable >= d || f.index >= self.bases[f.variable].size {
                return Err(FhtwError::invalid(format!("feature {f:?} out of range")));
            }
        }
        Ok(())
    }
}

/// The constant `ψ_0` of `basis`; the shared constant feature of a side
/// uses the first listed variable's basis, so `Z` is a submatrix of the
/// coefficient unfolding.
fn psi0(basis: &BasisSpec) -> f64 {
    basis.interval.length().sqrt().recip()
}

fn eval_features(features: &[Feature], bases: &[BasisSpec], rows: ArrayView2<f64>) -> Array2<f64> {
    // group consecutive features of one variable so each basis is evaluated once
    let mut out = Array2::zeros((rows.nrows(), features.len()));
    let max_size = bases.iter().map(|b| b.size).max().unwrap_or(1);
    let mut buf = vec![0.0; max_size];
    for (r, row) in rows.rows().into_iter().enumerate() {
        let mut current = usize::MAX;
        for (c, f) in features.iter().enumerate() {
            if f.index == 0 {
                out[[r, c]] = psi0(&bases[f.variable]);
                continue;
            }
            if f.variable != current {
                current = f.variable;
                bases[current].eval_into(row[current], &mut buf[..bases[current].size]);
            }
            out[[r, c]] = buf[f.index];
        }
    }
    out
}

/// Empirical `Z[β, γ] = mean_s s_β(x_I) s_γ(x_J)`.
pub fn build_z_ij(samples: ArrayView2<f64>, family: &SketchFamily) -> Result<Array2<f64>> {
    if samples.nrows() == 0 {
        return Err(FhtwError::invalid("sample set is empty"));
    }
    family.validate(samples.ncols())?;
    let n = samples.nrows() as f64;
    let z = chunked_reduce(
        SampleSet::new(samples),
        |rows, _| {
            let a = eval_features(&family.i_side, &family.bases, rows);
            let b = eval_features(&family.j_side, &family.bases, rows);
            a.t().dot(&b)
        },
        |mut a, b| {
            a += &b;
            a
        },
    );
    Ok(z / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    pub rank: usize,
    /// singular values, descending
    pub sigma: Vec<f64>,
    /// singular values scaled to sum to one
    pub normalized: Vec<f64>,
}

/// `rank = #{σ_i > ε σ_1}`: the smallest rank reaching relative 2-norm
/// error `ε`.
pub fn numerical_rank(m: &Array2<f64>, eps: f64) -> Result<RankResult> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(FhtwError::invalid(format!("eps must lie in (0, 1), got {eps}")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(FhtwError::invalid("matrix has non-finite entries"));
    }
    let na = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]]);
    let mut sigma: Vec<f64> = na.singular_values().iter().copied().collect();
    sigma.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = sigma.iter().sum();
    let normalized = if total > 0.0 {
        sigma.iter().map(|s| s / total).collect()
    } else {
        vec![0.0; sigma.len()]
    };
    let rank = crate::estimator::threshold_rank(&sigma, eps);
    Ok(RankResult { rank, sigma, normalized })
}

/// `D[i1, i2] = ∫∫ p ψ_i1 ψ_i2` by tensor Gauss-Legendre quadrature with
/// `nodes` points per axis.
pub fn coeff_matrix_2d<F>(density: F, bases: (&BasisSpec, &BasisSpec), nodes: usize) -> Result<Array2<f64>>
where
    F: Fn(f64, f64) -> f64,
{
    if nodes == 0 {
        return Err(FhtwError::invalid("need at least one quadrature node"));
    }
    let grid = |b: &BasisSpec| {
        let (x, w) = gauss_legendre_on(nodes, b.interval.lo, b.interval.hi);
        let phi = Array2::from_shape_fn((nodes, b.size), |(n, i)| {
            let mut buf = vec![0.0; b.size];
            b.eval_into(x[n], &mut buf);
            buf[i]
        });
        (x, w, phi)
    };
    let (x1, w1, phi1) = grid(bases.0);
    let (x2, w2, phi2) = grid(bases.1);
    let mut p = Array2::zeros((nodes, nodes));
    for a in 0..nodes {
        for b in 0..nodes {
            let v = density(x1[a], x2[b]);
            if !v.is_finite() {
                return Err(FhtwError::invalid(format!("density is not finite at ({}, {})", x1[a], x2[b])));
            }
            p[[a, b]] = w1[a] * w2[b] * v;
        }
    }
    Ok(phi1.t().dot(&p).dot(&phi2))
}

/// Unnormalised `exp(-x1²/2 - x2²/2 - α(x1 - x2)²/2)`.
pub fn bivariate_ou_density(alpha: f64) -> impl Fn(f64, f64) -> f64 {
    move |x1, x2| (-0.5 * x1 * x1 - 0.5 * x2 * x2 - 0.5 * alpha * (x1 - x2).powi(2)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// full sample counts
    #[serde(rename = "paper")]
    Full,
    Desk,
}

impl std::str::FromStr for Scale {
    type Err = FhtwError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" | "full" => Ok(Scale::Full),
            "desk" => Ok(Scale::Desk),
            _ => Err(FhtwError::invalid(format!("unknown scale '{s}' (expected paper or desk)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum CaseModel {
    /// the two-variable coupled Gaussian, studied by quadrature
    Bivariate { alphas: [f64; 3], half_width: f64, functions: usize, nodes: usize },
    Ou(OuSpec),
    Gl(GlSpec),
}

/// Which variables of each side receive features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideFeatures {
    pub bipartition: Bipartition,
    pub i_features: Vec<usize>,
    pub j_features: Vec<usize>,
    pub degree: usize,
    /// fixed symmetric support half-width; inferred per variable when absent
    pub support: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseConfig {
    pub case: u8,
    pub scale: Scale,
    pub model: CaseModel,
    pub n: usize,
    pub eps: f64,
    pub seed: u64,
    pub filter: FilterKind,
    pub mcmc: McmcConfig,
    pub feature_cap: usize,
    pub x_side: Option<SideFeatures>,
    pub c_side: Option<SideFeatures>,
    /// ranks reported for this construction at full scale
    pub reference_ranks: (usize, usize),
}

fn line_x_side(d: usize, degree: usize, support: Option<f64>) -> SideFeatures {
    SideFeatures {
        bipartition: Bipartition {
            i: (0..d / 2).collect(),
            j: (d / 2..d).collect(),
        },
        // sites 1 and d/2 against d/2 + 1 and d (one-based)
        i_features: vec![0, d / 2 - 1],
        j_features: vec![d / 2, d - 1],
        degree,
        support,
    }
}

fn flat(k: usize, l: i32) -> usize {
    ScaleLabel::new(k, l).flat()
}

/// Lower half of every detail level on one side, upper half plus the two
/// coarsest coefficients on the other.
fn wavelet_bipartition(levels: u32) -> Bipartition {
    let mut i = Vec::new();
    let mut j = vec![flat(1, -1), flat(1, 0)];
    for l in 1..levels as i32 {
        let half = 1usize << (l - 1);
        i.extend((1..=half).map(|k| flat(k, l)));
        j.extend((half + 1..=2 * half).map(|k| flat(k, l)));
    }
    i.sort_unstable();
    j.sort_unstable();
    Bipartition { i, j }
}

fn line_c_side(d: usize, degree: usize) -> SideFeatures {
    let levels = d.trailing_zeros();
    let mut i_features = Vec::new();
    let mut j_features = Vec::new();
    for l in 1..levels as i32 {
        let half = 1usize << (l - 1);
        for k in [1, half] {
            i_features.push(flat(k, l));
        }
        for k in [half + 1, 2 * half] {
            j_features.push(flat(k, l));
        }
    }
    i_features.sort_unstable();
    i_features.dedup();
    j_features.sort_unstable();
    j_features.dedup();
    SideFeatures {
        bipartition: wavelet_bipartition(levels),
        i_features,
        j_features,
        degree,
        support: None,
    }
}

fn grid_x_side(m: usize, degree: usize) -> SideFeatures {
    let site = |i: usize, j: usize| j * m + i;
    let mut bi = Vec::new();
    let mut bj = Vec::new();
    for j in 0..m {
        for i in 0..m {
            if i < m / 2 {
                bi.push(site(i, j));
            } else {
                bj.push(site(i, j));
            }
        }
    }
    let pick = |cols: [usize; 2]| {
        let mut v: Vec<usize> = (0..m).flat_map(|j| cols.map(|i| site(i, j))).collect();
        v.sort_unstable();
        v
    };
    SideFeatures {
        bipartition: Bipartition { i: bi, j: bj },
        i_features: pick([0, m / 2 - 1]),
        j_features: pick([m / 2, m - 1]),
        degree,
        support: None,
    }
}

fn grid_c_side(m: usize, degree: usize) -> SideFeatures {
    let bip = wavelet_bipartition(2 * m.trailing_zeros());
    SideFeatures {
        i_features: bip.i.clone(),
        j_features: bip.j.clone(),
        bipartition: bip,
        degree,
        support: None,
    }
}

/// Prebuilt configuration of case study `id` (1 to 5).
pub fn case_config(id: u8, scale: Scale) -> Result<CaseConfig> {
    let full = scale == Scale::Full;
    let mcmc = McmcConfig {
        thinning: 20,
        ..McmcConfig::default()
    };
    let base = |model, n, x_side, c_side, reference_ranks| CaseConfig {
        case: id,
        scale,
        model,
        n,
        eps: 0.01,
        seed: 1,
        filter: FilterKind::D4,
        mcmc,
        feature_cap: FEATURE_CAP,
        x_side: Some(x_side),
        c_side: Some(c_side),
        reference_ranks,
    };
    let (d, m) = (128, 8);
    let cfg = match id {
        1 => CaseConfig {
            case: 1,
            scale,
            model: CaseModel::Bivariate {
                alphas: [1.0, 10.0, 100.0],
                half_width: 3.0,
                functions: 60,
                nodes: 400,
            },
            n: 0,
            eps: 0.01,
            seed: 1,
            filter: FilterKind::Haar,
            mcmc,
            feature_cap: FEATURE_CAP,
            x_side: None,
            c_side: None,
            reference_ranks: (0, 1),
        },
        2 => base(
            CaseModel::Ou(OuSpec::Line1d { d, alpha: 1000.0 }),
            if full { 1_000_000 } else { 200_000 },
            line_x_side(d, 50, Some(0.8)),
            line_c_side(d, 30),
            (28, 7),
        ),
        3 => base(
            CaseModel::Gl(GlSpec::Line1d { d, alpha: 250.0, lambda: 5.0 }),
            if full { 500_000 } else { 100_000 },
            line_x_side(d, 50, None),
            line_c_side(d, 30),
            (45, 14),
        ),
        4 => base(
            CaseModel::Ou(OuSpec::Grid2d { m, alpha1: 200.0, alpha2: 10.0 }),
            if full { 500_000 } else { 100_000 },
            grid_x_side(m, 50),
            grid_c_side(m, 20),
            (73, 17),
        ),
        5 => base(
            CaseModel::Gl(GlSpec::Grid2d { m, alpha1: 20.0, alpha2: 0.6, lambda: 1.0 }),
            if full { 500_000 } else { 100_000 },
            grid_x_side(m, 50),
            grid_c_side(m, 20),
            (84, 17),
        ),
        _ => return Err(FhtwError::invalid(format!("case study id must be 1..=5, got {id}"))),
    };
    Ok(cfg)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SideReport {
    pub rank: usize,
    pub features_i: usize,
    pub features_j: usize,
    pub cap_binding: bool,
    /// spectrum entries with `σ_i / σ_1` below the sampling floor `10/√N`
    pub noise_dominated: usize,
    pub spectrum: RankResult,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BivariateRank {
    pub alpha: f64,
    pub rank_x: usize,
    pub rank_c: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseReport {
    pub config: CaseConfig,
    pub x: SideReport,
    pub c: SideReport,
    pub noise_floor: Option<f64>,
    pub bivariate: Vec<BivariateRank>,
    pub mcmc: Option<McmcReport>,
    pub seconds: f64,
}

impl CaseReport {
    pub fn ranks(&self) -> (usize, usize) {
        (self.x.rank, self.c.rank)
    }
}

fn side_bases(samples: ArrayView2<f64>, side: &SideFeatures) -> Result<Vec<BasisSpec>> {
    let size = side.degree + 1;
    (0..samples.ncols())
        .map(|v| {
            let interval = match side.support {
                Some(a) => Interval::symmetric(a)?,
                None => infer_support(samples.column(v).as_slice().unwrap_or(&samples.column(v).to_vec()), 0.0)?,
            };
            build_legendre_basis(interval, size)
        })
        .collect()
}

fn capped(vars: &[usize], degree: usize, cap: usize) -> (Vec<usize>, bool) {
    let max_vars = cap.saturating_sub(1) / degree.max(1);
    if vars.len() > max_vars {
        (vars[..max_vars].to_vec(), true)
    } else {
        (vars.to_vec(), false)
    }
}

fn side_rank(samples: ArrayView2<f64>, side: &SideFeatures, eps: f64, cap: usize) -> Result<SideReport> {
    let (iv, ci) = capped(&side.i_features, side.degree, cap);
    let (jv, cj) = capped(&side.j_features, side.degree, cap);
    let family = SketchFamily::univariate(side_bases(samples, side)?, &iv, &jv, side.degree)?;
    let z = build_z_ij(samples, &family)?;
    let spectrum = numerical_rank(&z, eps)?;
    let floor = 10.0 / (samples.nrows() as f64).sqrt();
    let top = spectrum.sigma.first().copied().unwrap_or(0.0);
    Ok(SideReport {
        rank: spectrum.rank,
        features_i: family.i_side.len(),
        features_j: family.j_side.len(),
        cap_binding: ci || cj,
        noise_dominated: spectrum.sigma.iter().filter(|&&s| s < floor * top).count(),
        spectrum,
    })
}

fn quadrature_side(density: impl Fn(f64, f64) -> f64, basis: &BasisSpec, nodes: usize, eps: f64) -> Result<SideReport> {
    let d = coeff_matrix_2d(density, (basis, basis), nodes)?;
    let spectrum = numerical_rank(&d, eps)?;
    Ok(SideReport {
        rank: spectrum.rank,
        features_i: basis.size,
        features_j: basis.size,
        cap_binding: false,
        noise_dominated: 0,
        spectrum,
    })
}

/// Runs a case study: draws samples (or integrates, for case 1), transforms
/// them and measures numerical ranks on both coordinate systems.
pub fn case_study(config: &CaseConfig) -> Result<CaseReport> {
    let start = Instant::now();
    if !(config.eps > 0.0 && config.eps < 1.0) {
        return Err(FhtwError::invalid("eps must lie in (0, 1)"));
    }
    if let CaseModel::Bivariate { alphas, half_width, functions, nodes } = config.model {
        let basis = build_legendre_basis(Interval::symmetric(half_width)?, functions)?;
        let plan = WaveletPlan::line(config.filter, 1)?;
        let mut rows = Vec::new();
        let mut last = None;
        for &alpha in &alphas {
            let p = bivariate_ou_density(alpha);
            let x = quadrature_side(&p, &basis, nodes, config.eps)?;
            let inv = |c0: f64, c1: f64| -> f64 {
                // coordinates are stored as (c[1,-1], c[1,0])
                let xs = plan.inverse(&[c0, c1]).expect("two coordinates");
                p(xs[0], xs[1])
            };
            let c = quadrature_side(inv, &basis, nodes, config.eps)?;
            rows.push(BivariateRank { alpha, rank_x: x.rank, rank_c: c.rank });
            last = Some((x, c));
        }
        let (x, c) = last.expect("three couplings");
        return Ok(CaseReport {
            config: config.clone(),
            x,
            c,
            noise_floor: None,
            bivariate: rows,
            mcmc: None,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    if config.n == 0 {
        return Err(FhtwError::invalid("sample count must be at least 1"));
    }
    let (samples, mcmc, layout) = match config.model {
        CaseModel::Ou(spec) => {
            let layout = match spec {
                OuSpec::Line1d { .. } => Layout::Line1D,
                OuSpec::Grid2d { .. } => Layout::Grid2D,
            };
            (sample_ou(&spec, config.n, config.seed)?, None, layout)
        }
        CaseModel::Gl(spec) => {
            let layout = match spec {
                GlSpec::Line1d { .. } => Layout::Line1D,
                GlSpec::Grid2d { .. } => Layout::Grid2D,
            };
            let mcmc = McmcConfig { seed: config.seed, ..config.mcmc };
            let (x, report) = sample_gl_mcmc(&spec, config.n, &mcmc)?;
            (x, Some(report), layout)
        }
        CaseModel::Bivariate { .. } => unreachable!(),
    };
    let plan = WaveletPlan::for_dimension(config.filter, layout, samples.ncols())?;
    let coeffs = plan.transform_samples(samples.view())?;
    let x_side = config.x_side.as_ref().ok_or_else(|| FhtwError::invalid("missing lattice-side features"))?;
    let c_side = config.c_side.as_ref().ok_or_else(|| FhtwError::invalid("missing wavelet-side features"))?;
    Bipartition::new(x_side.bipartition.i.clone(), x_side.bipartition.j.clone(), samples.ncols())?;
    Bipartition::new(c_side.bipartition.i.clone(), c_side.bipartition.j.clone(), samples.ncols())?;
    let x = side_rank(samples.view(), x_side, config.eps, config.feature_cap)?;
    drop(samples);
    let c = side_rank(coeffs.view(), c_side, config.eps, config.feature_cap)?;
    Ok(CaseReport {
        config: config.clone(),
        x,
        c,
        noise_floor: Some(10.0 / (config.n as f64).sqrt()),
        bivariate: Vec::new(),
        mcmc,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn spectrum_table(r: &RankResult) -> Array2<f64> {
    Array2::from_shape_fn((r.sigma.len(), 3), |(i, c)| match c {
        0 => (i + 1) as f64,
        1 => r.sigma[i],
        _ => r.normalized[i],
    })
}

/// Writes `spectrum_x.csv`, `spectrum_c.csv` and `report.json` into `dir`.
pub fn write_case_outputs(report: &CaseReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| FhtwError::io(dir, e))?;
    let cols: Vec<String> = ["index", "sigma", "sigma_normalized"].iter().map(|s| s.to_string()).collect();
    crate::io::write_table(&dir.join("spectrum_x.csv"), &cols, &spectrum_table(&report.x.spectrum))?;
    crate::io::write_table(&dir.join("spectrum_c.csv"), &cols, &spectrum_table(&report.c.spectrum))?;
    let summary = serde_json::json!({
        "case": report.config.case,
        "scale": report.config.scale,
        "ranks": { "x": report.x.rank, "c": report.c.rank },
        "reference_ranks": { "x": report.config.reference_ranks.0, "c": report.config.reference_ranks.1 },
        "n": report.config.n,
        "eps": report.config.eps,
        "noise_floor": report.noise_floor,
        "features": {
            "x": [report.x.features_i, report.x.features_j],
            "c": [report.c.features_i, report.c.features_j],
        },
        "feature_cap_binding": report.x.cap_binding || report.c.cap_binding,
        "noise_dominated": { "x": report.x.noise_dominated, "c": report.c.noise_dominated },
        "bivariate": report.bivariate,
        "mcmc": report.mcmc,
        "parameters": report.config,
        "runtime_seconds": report.seconds,
    });
    crate::io::write_json(&dir.join("report.json"), &summary)
}
