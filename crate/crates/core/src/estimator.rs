//! Sketch-based fitting of a tree FTN from samples: factor every edge
//! moment, then solve one small least-squares system per node.

use std::time::Instant;

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayD};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{build_legendre_basis, infer_support, BasisSpec};
use crate::error::{FhtwError, Result};
use crate::ftn::{leg_roster, FtnModel, Leg};
use crate::sketch::{build_sketch_plan, estimate_moments, Moments, SampleSet, SketchConfig};
use crate::tensor::apply_matrix_axis;
use crate::topology::{DirectedEdge, TreeTopology};
use crate::wavelet::Layout;

pub const DEFAULT_EPS_TRUNC: f64 = 1e-3;
pub const DEFAULT_EPS_LS: f64 = 1e-10;

/// Both sketch-side factors of one edge, from the SVD `Z = U S Vᵀ` with rows
/// of `Z` indexed by the child-side sketch.
#[derive(Debug, Clone)]
pub struct EdgeFactors {
    pub edge: usize,
    /// `A_{child->parent} = U`, orthonormal columns (`r̃_child x r'`)
    pub toward_parent: Array2<f64>,
    /// `A_{parent->child} = V S` (`r̃_parent x r'`)
    pub toward_child: Array2<f64>,
    /// full spectrum of `Z`, descending
    pub singular_values: Vec<f64>,
}

impl EdgeFactors {
    pub fn rank(&self) -> usize {
        self.toward_parent.ncols()
    }
}

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Thin SVD with singular values sorted descending.
pub(crate) fn sorted_svd(m: &Array2<f64>) -> (Array2<f64>, Vec<f64>, Array2<f64>) {
    let svd = to_na(m).svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u = Array2::from_shape_fn((u.nrows(), order.len()), |(i, j)| u[(i, order[j])]);
    let v = Array2::from_shape_fn((vt.ncols(), order.len()), |(i, j)| vt[(order[j], i)]);
    (u, s, v)
}

/// Number of singular values above `eps * σ_1` (0 for a zero spectrum).
pub fn threshold_rank(sigma: &[f64], eps: f64) -> usize {
    match sigma.first() {
        Some(&top) if top > 0.0 => sigma.iter().filter(|&&s| s > eps * top).count(),
        _ => 0,
    }
}

/// Truncated, gauge-fixed factorisation of an edge moment matrix `z`
/// (rows: child-side sketch, columns: parent-side sketch).
pub fn factor_edge(z: &Array2<f64>, rank: usize, eps_trunc: f64, edge: usize) -> Result<EdgeFactors> {
    if rank == 0 {
        return Err(FhtwError::invalid("target rank must be positive"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(FhtwError::DegenerateEdge {
            edge: (edge, edge),
            reason: "moment matrix has non-finite entries".into(),
        });
    }
    let (u, s, v) = sorted_svd(z);
    let keep = threshold_rank(&s, eps_trunc).min(rank);
    if keep == 0 {
        return Err(FhtwError::DegenerateEdge {
            edge: (edge, edge),
            reason: "moment matrix is zero".into(),
        });
    }
    let toward_parent = u.slice(ndarray::s![.., ..keep]).to_owned();
    let mut toward_child = v.slice(ndarray::s![.., ..keep]).to_owned();
    for (mut col, &sv) in toward_child.columns_mut().into_iter().zip(&s) {
        col *= sv;
    }
    Ok(EdgeFactors {
        edge,
        toward_parent,
        toward_child,
        singular_values: s,
    })
}

/// Regularised pseudo-inverse: singular values below `eps * σ_max` dropped.
pub fn pseudo_inverse(a: &Array2<f64>, eps: f64) -> Option<Array2<f64>> {
    let (u, s, v) = sorted_svd(a);
    let top = *s.first()?;
    if !(top > 0.0) {
        return None;
    }
    let mut out = Array2::zeros((a.ncols(), a.nrows()));
    for (k, &sv) in s.iter().enumerate() {
        if sv > eps * top {
            for i in 0..a.ncols() {
                let vi = v[[i, k]] / sv;
                for j in 0..a.nrows() {
                    out[[i, j]] += vi * u[[j, k]];
                }
            }
        }
    }
    Some(out)
}

fn condition_number(a: &Array2<f64>) -> f64 {
    let (_, s, _) = sorted_svd(a);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Solves `(⊗_j A_j) G = B` axis by axis. `factors[i]` is `None` for the
/// physical leg, which passes through.
pub fn solve_core(factors: &[Option<&Array2<f64>>], b: &ArrayD<f64>, eps_ls: f64) -> Result<ArrayD<f64>> {
    if factors.len() != b.ndim() {
        return Err(FhtwError::invalid(format!(
            "{} factors for an order-{} right-hand side",
            factors.len(),
            b.ndim()
        )));
    }
    let mut g = b.clone();
    for (axis, a) in factors.iter().enumerate() {
        if let Some(a) = a {
            if a.nrows() != b.shape()[axis] {
                return Err(FhtwError::invalid(format!(
                    "factor on axis {axis} has {} rows, B has {}",
                    a.nrows(),
                    b.shape()[axis]
                )));
            }
            let pinv = pseudo_inverse(a, eps_ls).ok_or_else(|| FhtwError::DegenerateEdge {
                edge: (axis, axis),
                reason: "sketch factor is zero".into(),
            })?;
            g = apply_matrix_axis(&g, axis, &pinv);
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub rank: usize,
    /// per-edge target ranks replacing `rank` where given
    #[serde(default)]
    pub edge_ranks: Option<Vec<usize>>,
    pub sketch: SketchConfig,
    pub eps_trunc: f64,
    pub eps_ls: f64,
}

impl FitConfig {
    /// Defaults with sketch size `3 * rank`.
    pub fn new(rank: usize) -> Self {
        FitConfig {
            rank,
            edge_ranks: None,
            sketch: SketchConfig {
                size: 3 * rank,
                ..SketchConfig::default()
            },
            eps_trunc: DEFAULT_EPS_TRUNC,
            eps_ls: DEFAULT_EPS_LS,
        }
    }

    /// Defaults tuned to the lattice geometry. A 2D site has twice as many
    /// neighbours, and interleaving scatters them across more tree nodes, so
    /// the sketch conditions on twice as many interface variables.
    pub fn for_layout(rank: usize, layout: Layout) -> Self {
        let mut config = FitConfig::new(rank);
        if layout == Layout::Grid2D {
            config.sketch.interface_count = 2 * config.sketch.interface_count;
        }
        config
    }

    fn validate(&self, tree: &TreeTopology) -> Result<()> {
        if self.rank == 0 {
            return Err(FhtwError::invalid("rank must be at least 1"));
        }
        for (name, v) in [("eps_trunc", self.eps_trunc), ("eps_ls", self.eps_ls)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(FhtwError::invalid(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if let Some(r) = &self.edge_ranks {
            if r.len() != tree.num_edges() || r.contains(&0) {
                return Err(FhtwError::invalid("edge_ranks needs one positive rank per edge"));
            }
        }
        Ok(())
    }

    fn target(&self, edge: usize) -> usize {
        self.edge_ranks.as_ref().map_or(self.rank, |r| r[edge])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeReport {
    pub edge: usize,
    pub child: usize,
    pub parent: usize,
    pub target_rank: usize,
    pub effective_rank: usize,
    pub sketch_sizes: (usize, usize),
    pub singular_values: Vec<f64>,
    pub cond_toward_parent: f64,
    pub cond_toward_child: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub samples: usize,
    pub dim: usize,
    pub config: FitConfig,
    pub sketch_plan: serde_json::Value,
    pub edges: Vec<EdgeReport>,
    pub normalization: f64,
    pub parameters: usize,
    pub warnings: Vec<String>,
    pub seconds_moments: f64,
    pub seconds_total: f64,
}

/// Symmetric supports inferred per column, with a Legendre basis of `size`.
pub fn infer_bases(samples: ndarray::ArrayView2<f64>, size: usize, margin: f64) -> Result<Vec<BasisSpec>> {
    samples
        .columns()
        .into_iter()
        .map(|col| build_legendre_basis(infer_support(&col.to_vec(), margin)?, size))
        .collect()
}

fn child_parent(tree: &TreeTopology, id: usize) -> (usize, usize) {
    let (a, b) = tree.edges()[id];
    if tree.points_to_parent(DirectedEdge::new(a, b)) {
        (a, b)
    } else {
        (b, a)
    }
}

/// Fits from precomputed moments.
pub fn fit_from_moments(
    moments: &Moments,
    tree: &TreeTopology,
    bases: &[BasisSpec],
    config: &FitConfig,
) -> Result<(FtnModel, Vec<EdgeReport>)> {
    config.validate(tree)?;
    let factors: Vec<EdgeFactors> = (0..tree.num_edges())
        .into_par_iter()
        .map(|id| {
            factor_edge(&moments.z[id], config.target(id), config.eps_trunc, id).map_err(|e| match e {
                FhtwError::DegenerateEdge { reason, .. } => FhtwError::DegenerateEdge {
                    edge: child_parent(tree, id),
                    reason,
                },
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    let arrays: Vec<ArrayD<f64>> = (0..tree.num_nodes())
        .into_par_iter()
        .map(|node| {
            let parent_edge = tree.parent(node).map(|(_, e)| e);
            let legs = leg_roster(tree, node);
            let a: Vec<Option<&Array2<f64>>> = legs
                .iter()
                .map(|leg| match *leg {
                    Leg::Physical => None,
                    Leg::Edge(e) if Some(e) == parent_edge => Some(&factors[e].toward_child),
                    Leg::Edge(e) => Some(&factors[e].toward_parent),
                })
                .collect();
            solve_core(&a, &moments.b[node], config.eps_ls).map_err(|e| match e {
                FhtwError::DegenerateEdge { reason, .. } => FhtwError::DegenerateEdge {
                    edge: (node, node),
                    reason: format!("node {node}: {reason}"),
                },
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    let mut model = FtnModel::new(tree.clone(), arrays, bases.to_vec())?;
    model.normalization()?;
    let reports = factors
        .iter()
        .map(|f| {
            let (child, parent) = child_parent(tree, f.edge);
            EdgeReport {
                edge: f.edge,
                child,
                parent,
                target_rank: config.target(f.edge),
                effective_rank: f.rank(),
                sketch_sizes: (f.toward_parent.nrows(), f.toward_child.nrows()),
                singular_values: f.singular_values.clone(),
                cond_toward_parent: condition_number(&f.toward_parent),
                cond_toward_child: condition_number(&f.toward_child),
            }
        })
        .collect();
    Ok((model, reports))
}

/// End-to-end fit on samples whose columns follow the tree's variables.
pub fn fit(set: SampleSet, tree: &TreeTopology, bases: &[BasisSpec], config: &FitConfig) -> Result<(FtnModel, FitReport)> {
    let start = Instant::now();
    config.validate(tree)?;
    let plan = build_sketch_plan(tree, bases, config.sketch)?;
    let moments = estimate_moments(set, &plan, tree)?;
    let seconds_moments = start.elapsed().as_secs_f64();
    let (model, edges) = fit_from_moments(&moments, tree, bases, config)?;
    let mut warnings = Vec::new();
    let max_sketch = plan.sketches().iter().map(|s| s.size()).max().unwrap_or(0);
    if set.weights.is_none() && moments.samples < max_sketch * max_sketch {
        warnings.push(format!(
            "sample count {} is below r̃² = {}",
            moments.samples,
            max_sketch * max_sketch
        ));
    }
    let z = model.cached_normalization().unwrap_or(f64::NAN);
    if !(z > 0.0) {
        warnings.push(format!("fitted normalization {z} is not positive"));
    }
    let report = FitReport {
        samples: moments.samples,
        dim: tree.dim(),
        config: config.clone(),
        sketch_plan: plan.summary(),
        normalization: z,
        parameters: model.parameter_count(),
        edges,
        warnings,
        seconds_moments,
        seconds_total: start.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}
