//! Functional tensor networks on trees: evaluation, integration and
//! moment observables.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{FhtwError, Result};
use crate::tensor::{contract_axis, from_nested_json, to_nested_json};
use crate::topology::TreeTopology;
use crate::wavelet::{FilterKind, Layout, WaveletPlan};

pub const MODEL_VERSION: &str = "fhtw-model/1";

/// One index of a component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Leg {
    Physical,
    Edge(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorComponent {
    pub node: usize,
    pub legs: Vec<Leg>,
    pub data: ArrayD<f64>,
}

/// The coordinate system a model was fitted in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformInfo {
    pub filter: FilterKind,
    pub layout: Layout,
    pub levels: u32,
}

impl TransformInfo {
    pub fn of(plan: &WaveletPlan) -> Self {
        TransformInfo {
            filter: plan.filter.kind,
            layout: plan.layout,
            levels: plan.levels,
        }
    }

    pub fn plan(&self) -> Result<WaveletPlan> {
        WaveletPlan::new(self.filter, self.layout, self.levels)
    }
}

/// Leg roster of `node`: physical leg first on external nodes, then the
/// parent edge, then child edges by node id.
pub fn leg_roster(tree: &TreeTopology, node: usize) -> Vec<Leg> {
    let mut legs = Vec::with_capacity(4);
    if tree.node(node).variable().is_some() {
        legs.push(Leg::Physical);
    }
    legs.extend(tree.incident(node).into_iter().map(|(_, e)| Leg::Edge(e)));
    legs
}

#[derive(Debug, Clone)]
pub struct FtnModel {
    tree: TreeTopology,
    components: Vec<TensorComponent>,
    bases: Vec<BasisSpec>,
    ranks: Vec<usize>,
    normalization: Option<f64>,
    pub transform: Option<TransformInfo>,
}

impl FtnModel {
    /// Assembles a model from per-node arrays laid out as [`leg_roster`].
    pub fn new(tree: TreeTopology, arrays: Vec<ArrayD<f64>>, bases: Vec<BasisSpec>) -> Result<Self> {
        if arrays.len() != tree.num_nodes() {
            return Err(FhtwError::invalid(format!(
                "{} components for {} nodes",
                arrays.len(),
                tree.num_nodes()
            )));
        }
        if bases.len() != tree.dim() {
            return Err(FhtwError::invalid(format!(
                "{} bases for {} variables",
                bases.len(),
                tree.dim()
            )));
        }
        let mut ranks = vec![0usize; tree.num_edges()];
        let mut components = Vec::with_capacity(arrays.len());
        for (node, data) in arrays.into_iter().enumerate() {
            let legs = leg_roster(&tree, node);
            if data.ndim() != legs.len() {
                return Err(FhtwError::invalid(format!(
                    "component {node} has order {}, expected {}",
                    data.ndim(),
                    legs.len()
                )));
            }
            for (leg, &size) in legs.iter().zip(data.shape()) {
                match *leg {
                    Leg::Physical => {
                        let var = tree.node(node).variable().unwrap_or_default();
                        if size != bases[var].size {
                            return Err(FhtwError::invalid(format!(
                                "component {node} physical size {size} != basis size {}",
                                bases[var].size
                            )));
                        }
                    }
                    Leg::Edge(e) => {
                        if size == 0 {
                            return Err(FhtwError::invalid(format!("edge {e} has zero rank")));
                        }
                        if ranks[e] == 0 {
                            ranks[e] = size;
                        } else if ranks[e] != size {
                            return Err(FhtwError::invalid(format!(
                                "edge {e} sizes disagree: {} vs {size}",
                                ranks[e]
                            )));
                        }
                    }
                }
            }
            components.push(TensorComponent { node, legs, data });
        }
        Ok(FtnModel {
            tree,
            components,
            bases,
            ranks,
            normalization: None,
            transform: None,
        })
    }

    /// Components with i.i.d. standard normal entries and uniform edge rank.
    pub fn random(tree: TreeTopology, bases: Vec<BasisSpec>, rank: usize, seed: u64) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let arrays = (0..tree.num_nodes())
            .map(|node| {
                let shape: Vec<usize> = leg_roster(&tree, node)
                    .iter()
                    .map(|leg| match leg {
                        Leg::Physical => bases[tree.node(node).variable().unwrap_or_default()].size,
                        Leg::Edge(_) => rank,
                    })
                    .collect();
                ArrayD::from_shape_simple_fn(IxDyn(&shape), || StandardNormal.sample(&mut rng))
            })
            .collect();
        Self::new(tree, arrays, bases)
    }

    pub fn tree(&self) -> &TreeTopology {
        &self.tree
    }

    pub fn components(&self) -> &[TensorComponent] {
        &self.components
    }

    pub fn component_mut(&mut self, node: usize) -> &mut ArrayD<f64> {
        self.normalization = None;
        &mut self.components[node].data
    }

    pub fn bases(&self) -> &[BasisSpec] {
        &self.bases
    }

    pub fn dim(&self) -> usize {
        self.tree.dim()
    }

    pub fn edge_ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn parameter_count(&self) -> usize {
        self.components.iter().map(|c| c.data.len()).sum()
    }

    /// Contracts component `node` with the given per-leg vectors. Legs with
    /// `None` stay open (in roster order).
    fn contract_node(&self, node: usize, inputs: &[Option<&[f64]>]) -> ArrayD<f64> {
        let mut t = self.components[node].data.clone();
        for (axis, input) in inputs.iter().enumerate().rev() {
            if let Some(v) = input {
                t = contract_axis(&t, axis, v);
            }
        }
        t
    }

    fn check_weights(&self, weights: &[Vec<f64>]) -> Result<()> {
        if weights.len() != self.dim() {
            return Err(FhtwError::invalid(format!(
                "expected {} weight vectors, got {}",
                self.dim(),
                weights.len()
            )));
        }
        for (j, (w, b)) in weights.iter().zip(&self.bases).enumerate() {
            if w.len() != b.size {
                return Err(FhtwError::invalid(format!(
                    "weight {j} has length {}, basis size is {}",
                    w.len(),
                    b.size
                )));
            }
        }
        Ok(())
    }

    /// Leaf-to-root messages; entry `k` lives on the edge from `k` to its parent.
    fn upward(&self, weights: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
        let n = self.tree.num_nodes();
        let mut up: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut total = 0.0;
        for &node in self.tree.postorder() {
            let parent_edge = self.tree.parent(node).map(|(_, e)| e);
            let inputs: Vec<Option<&[f64]>> = self.components[node]
                .legs
                .iter()
                .map(|leg| match *leg {
                    Leg::Physical => {
                        Some(weights[self.tree.node(node).variable().unwrap_or_default()].as_slice())
                    }
                    Leg::Edge(e) if Some(e) == parent_edge => None,
                    Leg::Edge(e) => Some(up[self.child_across(node, e)].as_slice()),
                })
                .collect();
            let t = self.contract_node(node, &inputs);
            if parent_edge.is_some() {
                up[node] = t.into_raw_vec_and_offset().0;
            } else {
                total = t.first().copied().unwrap_or(0.0);
            }
        }
        (up, total)
    }

    fn child_across(&self, node: usize, edge: usize) -> usize {
        let (a, b) = self.tree.edges()[edge];
        if a == node {
            b
        } else {
            a
        }
    }

    /// `⟨D, ⊗_j w_j⟩`.
    pub fn integrate(&self, weights: &[Vec<f64>]) -> Result<f64> {
        self.check_weights(weights)?;
        Ok(self.upward(weights).1)
    }

    /// For each variable `j`, the vector `e_j` over its physical leg with
    /// `⟨D, w_1 ⊗ .. ⊗ u ⊗ .. ⊗ w_d⟩ = e_j · u` for any `u` in slot `j`.
    pub fn site_environments(&self, weights: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check_weights(weights)?;
        let (up, _) = self.upward(weights);
        let n = self.tree.num_nodes();
        let mut down: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut env = vec![Vec::new(); self.dim()];
        // reverse postorder visits parents before children
        for &node in self.tree.postorder().iter().rev() {
            let parent_edge = self.tree.parent(node).map(|(_, e)| e);
            let var = self.tree.node(node).variable();
            let legs = &self.components[node].legs;
            let input_for = |leg: &Leg, open: Option<Leg>| -> Option<&[f64]> {
                if Some(*leg) == open {
                    return None;
                }
                match *leg {
                    Leg::Physical => Some(weights[var.unwrap_or_default()].as_slice()),
                    Leg::Edge(e) if Some(e) == parent_edge => Some(down[node].as_slice()),
                    Leg::Edge(e) => Some(up[self.child_across(node, e)].as_slice()),
                }
            };
            let mut outgoing = Vec::new();
            for &(child, e) in self.tree.children(node) {
                let inputs: Vec<_> = legs.iter().map(|l| input_for(l, Some(Leg::Edge(e)))).collect();
                outgoing.push((child, self.contract_node(node, &inputs).into_raw_vec_and_offset().0));
            }
            if let Some(v) = var {
                let inputs: Vec<_> = legs.iter().map(|l| input_for(l, Some(Leg::Physical))).collect();
                env[v] = self.contract_node(node, &inputs).into_raw_vec_and_offset().0;
            }
            for (child, msg) in outgoing {
                down[child] = msg;
            }
        }
        Ok(env)
    }

    pub fn eval_density(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.dim() {
            return Err(FhtwError::invalid(format!(
                "point has {} coordinates, model has {}",
                point.len(),
                self.dim()
            )));
        }
        let weights = self.basis_weights(point)?;
        Ok(self.upward(&weights).1)
    }

    fn basis_weights(&self, point: &[f64]) -> Result<Vec<Vec<f64>>> {
        point.iter().zip(&self.bases).map(|(&x, b)| b.eval(x)).collect()
    }

    /// Per-variable `∫ x^power ψ_i` vectors.
    pub fn moment_weights(&self, power: u32) -> Result<Vec<Vec<f64>>> {
        self.bases.iter().map(|b| b.moments(power)).collect()
    }

    /// `Z = ∫ p`, computed once and cached.
    pub fn normalization(&mut self) -> Result<f64> {
        if let Some(z) = self.normalization {
            return Ok(z);
        }
        let z = self.compute_normalization()?;
        self.normalization = Some(z);
        Ok(z)
    }

    pub fn cached_normalization(&self) -> Option<f64> {
        self.normalization
    }

    pub fn compute_normalization(&self) -> Result<f64> {
        self.integrate(&self.moment_weights(0)?)
    }

    fn nonzero_normalization(&self) -> Result<f64> {
        let z = match self.normalization {
            Some(z) => z,
            None => self.compute_normalization()?,
        };
        if !(z.abs() >= 1e-300) {
            return Err(FhtwError::DegenerateModel(format!("normalization constant {z} vanishes")));
        }
        Ok(z)
    }

    /// Mean vector and second-moment matrix under `p / Z`.
    pub fn mean_and_second_moments(&self) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let z = self.nonzero_normalization()?;
        let m0 = self.moment_weights(0)?;
        let m1 = self.moment_weights(1)?;
        let m2 = self.moment_weights(2)?;
        let d = self.dim();
        let base_env = self.site_environments(&m0)?;
        let mean: Vec<f64> = (0..d).map(|j| dot(&base_env[j], &m1[j]) / z).collect();
        let rows: Vec<Vec<f64>> = (0..d)
            .into_par_iter()
            .map(|j| {
                let mut w = m0.clone();
                w[j] = m1[j].clone();
                let env = self.site_environments(&w)?;
                Ok((0..d)
                    .map(|k| {
                        if k == j {
                            dot(&base_env[j], &m2[j]) / z
                        } else {
                            dot(&env[k], &m1[k]) / z
                        }
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        let raw = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
        let second = (&raw + raw.transpose()) * 0.5;
        Ok((mean, second))
    }

    /// Covariance of the model's own coordinates.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        let (mean, second) = self.mean_and_second_moments()?;
        let d = mean.len();
        Ok(DMatrix::from_fn(d, d, |i, j| second[(i, j)] - mean[i] * mean[j]))
    }

    /// Values of the two-variable marginal `∫ p dx_rest / Z` at each grid point.
    pub fn marginal_2d(&self, vars: (usize, usize), grid: &[(f64, f64)]) -> Result<Vec<f64>> {
        let (a, b) = vars;
        let d = self.dim();
        if a >= d || b >= d || a == b {
            return Err(FhtwError::invalid(format!("bad variable pair ({a}, {b})")));
        }
        if grid.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(FhtwError::invalid("grid points must be finite"));
        }
        let z = self.nonzero_normalization()?;
        let m0 = self.moment_weights(0)?;
        let mut xs: Vec<f64> = grid.iter().map(|p| p.0).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let envs: HashMap<u64, Vec<f64>> = xs
            .par_iter()
            .map(|&x| {
                let mut w = m0.clone();
                w[a] = self.bases[a].eval(x)?;
                let env = self.site_environments(&w)?;
                Ok((x.to_bits(), env[b].clone()))
            })
            .collect::<Result<_>>()?;
        grid.iter()
            .map(|&(x, y)| Ok(dot(&envs[&x.to_bits()], &self.bases[b].eval(y)?) / z))
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let components: Vec<serde_json::Value> = self
            .components
            .iter()
            .map(|c| {
                serde_json::json!({
                    "node": c.node,
                    "legs": c.legs,
                    "shape": c.data.shape(),
                    "data": to_nested_json(&c.data),
                })
            })
            .collect();
        serde_json::json!({
            "version": MODEL_VERSION,
            "topology": self.tree.to_json(),
            "bases": self.bases,
            "edge_ranks": self.ranks,
            "normalization": self.normalization,
            "transform": self.transform,
            "gauge": "child-to-parent sketch factors orthonormal",
            "components": components,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let bad = |why: String| FhtwError::data("model", why);
        match v["version"].as_str() {
            Some(MODEL_VERSION) => {}
            other => return Err(bad(format!("unsupported version {other:?}"))),
        }
        let tree = TreeTopology::from_json(&v["topology"])?;
        let bases: Vec<BasisSpec> =
            serde_json::from_value(v["bases"].clone()).map_err(|e| bad(e.to_string()))?;
        let comps = v["components"].as_array().ok_or_else(|| bad("missing components".into()))?;
        let mut arrays = vec![None; tree.num_nodes()];
        for c in comps {
            let node = c["node"].as_u64().ok_or_else(|| bad("component without node".into()))? as usize;
            let shape: Vec<usize> =
                serde_json::from_value(c["shape"].clone()).map_err(|e| bad(e.to_string()))?;
            let mut data = from_nested_json(&c["data"])
                .ok_or_else(|| bad(format!("component {node} is not a regular nested list")))?;
            if data.shape() != shape.as_slice() {
                // nested lists cannot express zero-length axes; trust the shape then
                if data.len() == shape.iter().product::<usize>() {
                    data = data
                        .into_shape_with_order(IxDyn(&shape))
                        .map_err(|e| bad(e.to_string()))?;
                } else {
                    return Err(bad(format!("component {node} shape mismatch")));
                }
            }
            let slot = arrays
                .get_mut(node)
                .ok_or_else(|| bad(format!("component node {node} out of range")))?;
            *slot = Some(data);
        }
        let arrays: Vec<ArrayD<f64>> = arrays
            .into_iter()
            .enumerate()
            .map(|(i, a)| a.ok_or_else(|| bad(format!("missing component for node {i}"))))
            .collect::<Result<_>>()?;
        let mut model = Self::new(tree, arrays, bases)?;
        model.normalization = v["normalization"].as_f64();
        model.transform =
            serde_json::from_value(v["transform"].clone()).map_err(|e| bad(e.to_string()))?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_json())
            .map_err(|e| FhtwError::Internal(e.to_string()))?;
        crate::io::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FhtwError::io(path, e))?;
        let v: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| FhtwError::data(path.display().to_string(), e.to_string()))?;
        Self::from_json(&v)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Correlation matrix of a covariance matrix.
pub fn correlation_from_covariance(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = cov.nrows();
    let sd: Vec<f64> = (0..d)
        .map(|i| {
            let v = cov[(i, i)];
            if v > 0.0 && v.is_finite() {
                Ok(v.sqrt())
            } else {
                Err(FhtwError::DegenerateModel(format!("variance of coordinate {i} is {v}")))
            }
        })
        .collect::<Result<_>>()?;
    let mut corr = DMatrix::from_fn(d, d, |i, j| cov[(i, j)] / (sd[i] * sd[j]));
    for i in 0..d {
        corr[(i, i)] = 1.0;
    }
    Ok(corr)
}

/// Correlation in original coordinates `x = Wᵀ c` given the model over `c`.
pub fn correlation_pullback(model: &FtnModel, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = model.dim();
    if w.nrows() != d || w.ncols() != d {
        return Err(FhtwError::invalid(format!(
            "transform is {}x{}, model has d = {d}",
            w.nrows(),
            w.ncols()
        )));
    }
    let cov_c = model.covariance()?;
    let cov_x = w.transpose() * cov_c * w;
    let sym = (&cov_x + cov_x.transpose()) * 0.5;
    correlation_from_covariance(&sym)
}

pub fn correlation_original(model: &FtnModel, plan: &WaveletPlan) -> Result<DMatrix<f64>> {
    if plan.dim() != model.dim() {
        return Err(FhtwError::invalid(format!(
            "plan has d = {}, model has d = {}",
            plan.dim(),
            model.dim()
        )));
    }
    correlation_pullback(model, &plan.transform_matrix()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_legendre_basis, Interval};
    use crate::quadrature::gauss_legendre_on;
    use crate::topology::build_tree_1d;
    use ndarray::{Array2, Axis};
    use proptest::prelude::*;
    use rand::Rng;

    fn bases(d: usize, n: usize, a: f64) -> Vec<BasisSpec> {
        vec![build_legendre_basis(Interval::symmetric(a).unwrap(), n).unwrap(); d]
    }

    /// Full coefficient tensor via unit-vector probes.
    fn materialize(model: &FtnModel) -> ArrayD<f64> {
        let shape: Vec<usize> = model.bases().iter().map(|b| b.size).collect();
        ArrayD::from_shape_fn(IxDyn(&shape), |ix| {
            let w: Vec<Vec<f64>> = (0..shape.len())
                .map(|j| {
                    let mut e = vec![0.0; shape[j]];
                    e[ix[j]] = 1.0;
                    e
                })
                .collect();
            model.integrate(&w).unwrap()
        })
    }

    /// Independent brute-force contraction by explicit index loops over edges.
    fn brute_coefficients(model: &FtnModel) -> ArrayD<f64> {
        let tree = model.tree();
        let shape: Vec<usize> = model.bases().iter().map(|b| b.size).collect();
        let ranks = model.edge_ranks().to_vec();
        let n_alpha: usize = ranks.iter().product();
        ArrayD::from_shape_fn(IxDyn(&shape), |ix| {
            let mut total = 0.0;
            for flat in 0..n_alpha {
                let mut alpha = vec![0; ranks.len()];
                let mut rem = flat;
                for (a, r) in alpha.iter_mut().zip(&ranks) {
                    *a = rem % r;
                    rem /= r;
                }
                let mut prod = 1.0;
                for c in model.components() {
                    let idx: Vec<usize> = c
                        .legs
                        .iter()
                        .map(|l| match *l {
                            Leg::Physical => ix[tree.node(c.node).variable().unwrap()],
                            Leg::Edge(e) => alpha[e],
                        })
                        .collect();
                    prod *= c.data[IxDyn(&idx)];
                }
                total += prod;
            }
            total
        })
    }

    fn density_from_coefficients(coef: &ArrayD<f64>, b: &[BasisSpec], x: &[f64]) -> f64 {
        let evals: Vec<Vec<f64>> = x.iter().zip(b).map(|(&x, b)| b.eval(x).unwrap()).collect();
        coef.indexed_iter()
            .map(|(ix, &v)| v * (0..x.len()).map(|j| evals[j][ix[j]]).product::<f64>())
            .sum()
    }

    #[test]
    fn separable_rank_one_on_single_edge() {
        let tree = build_tree_1d(1).unwrap();
        let b = bases(2, 2, 1.0);
        // g(x) = 2 ψ0 + ψ1 and h(x) = ψ0 - 3 ψ1
        let g = ArrayD::from_shape_vec(IxDyn(&[2, 1]), vec![2.0, 1.0]).unwrap();
        let h = ArrayD::from_shape_vec(IxDyn(&[2, 1]), vec![1.0, -3.0]).unwrap();
        let model = FtnModel::new(tree, vec![g, h], b.clone()).unwrap();
        for &(x0, x1) in &[(0.3, -0.2), (-0.9, 0.7), (0.0, 0.0)] {
            let e0 = b[0].eval(x0).unwrap();
            let e1 = b[1].eval(x1).unwrap();
            let expect = (2.0 * e0[0] + e0[1]) * (e1[0] - 3.0 * e1[1]);
            assert!((model.eval_density(&[x0, x1]).unwrap() - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn matches_brute_force_d4() {
        let tree = build_tree_1d(2).unwrap();
        let b = bases(4, 2, 1.0);
        let model = FtnModel::random(tree, b.clone(), 2, 3).unwrap();
        let coef = brute_coefficients(&model);
        assert_eq!(coef.len(), 16);
        let mat = materialize(&model);
        for (a, e) in mat.iter().zip(coef.iter()) {
            assert!((a - e).abs() < 1e-12 * (1.0 + e.abs()));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p = model.eval_density(&x).unwrap();
            let e = density_from_coefficients(&coef, &b, &x);
            assert!((p - e).abs() < 1e-10 * (1.0 + e.abs()), "{p} vs {e}");
        }
    }

    #[test]
    fn zero_components_give_zero_density() {
        let tree = build_tree_1d(2).unwrap();
        let mut model = FtnModel::random(tree, bases(4, 3, 1.0), 2, 1).unwrap();
        for k in 0..model.tree().num_nodes() {
            model.component_mut(k).fill(0.0);
        }
        assert_eq!(model.eval_density(&[0.1, 0.2, -0.3, 0.9]).unwrap(), 0.0);
        assert!(matches!(model.mean_and_second_moments(), Err(FhtwError::DegenerateModel(_))));
    }

    #[test]
    fn integrate_specialisations() {
        let tree = build_tree_1d(2).unwrap();
        let b = bases(4, 3, 1.5);
        let model = FtnModel::random(tree, b.clone(), 2, 9).unwrap();
        let x = [0.2, -0.4, 1.1, 0.0];
        let w: Vec<Vec<f64>> = x.iter().zip(&b).map(|(&x, b)| b.eval(x).unwrap()).collect();
        assert_eq!(model.integrate(&w).unwrap(), model.eval_density(&x).unwrap());
        // zeroth moments against the dense coefficient tensor
        let coef = brute_coefficients(&model);
        let m0 = model.moment_weights(0).unwrap();
        let z: f64 = coef
            .indexed_iter()
            .map(|(ix, v)| v * (0..4).map(|j| m0[j][ix[j]]).product::<f64>())
            .sum();
        assert!((model.compute_normalization().unwrap() - z).abs() < 1e-12 * (1.0 + z.abs()));
        assert!(model.integrate(&w[..3]).is_err());
        let mut short = w.clone();
        short[1].pop();
        assert!(model.integrate(&short).is_err());
        assert!(model.eval_density(&x[..3]).is_err());
    }

    #[test]
    fn rank_one_integrate_is_product_of_dots() {
        let tree = build_tree_1d(2).unwrap();
        let b = bases(4, 3, 1.0);
        let model = FtnModel::random(tree, b, 1, 21).unwrap();
        let coef = brute_coefficients(&model);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let w: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.gen::<f64>()).collect()).collect();
        let expect: f64 = coef
            .indexed_iter()
            .map(|(ix, v)| v * (0..4).map(|j| w[j][ix[j]]).product::<f64>())
            .sum();
        assert!((model.integrate(&w).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn environments_match_direct_substitution() {
        let tree = build_tree_1d(3).unwrap();
        let model = FtnModel::random(tree, bases(8, 3, 1.0), 2, 4).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let w: Vec<Vec<f64>> = (0..8).map(|_| (0..3).map(|_| rng.gen::<f64>() - 0.5).collect()).collect();
        let env = model.site_environments(&w).unwrap();
        let full = model.integrate(&w).unwrap();
        for j in 0..8 {
            assert!((dot(&env[j], &w[j]) - full).abs() < 1e-12);
            let mut w2 = w.clone();
            w2[j] = vec![0.3, -1.0, 2.0];
            assert!((dot(&env[j], &w2[j]) - model.integrate(&w2).unwrap()).abs() < 1e-12);
        }
    }

    /// Model for p(x) = Π_j f(x_j) with f a projected standard normal.
    fn product_normal_model(d_levels: u32, n: usize) -> FtnModel {
        let tree = build_tree_1d(d_levels).unwrap();
        let b = build_legendre_basis(Interval::symmetric(5.0).unwrap(), n).unwrap();
        let (xs, ws) = gauss_legendre_on(4 * n, -5.0, 5.0);
        let mut coef = vec![0.0; n];
        for (&x, &w) in xs.iter().zip(&ws) {
            let f = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
            for (c, e) in coef.iter_mut().zip(b.eval(x).unwrap()) {
                *c += w * f * e;
            }
        }
        let arrays = (0..tree.num_nodes())
            .map(|node| {
                let legs = leg_roster(&tree, node);
                let shape: Vec<usize> = legs
                    .iter()
                    .map(|l| if *l == Leg::Physical { n } else { 1 })
                    .collect();
                if legs[0] == Leg::Physical {
                    ArrayD::from_shape_vec(IxDyn(&shape), coef.clone()).unwrap()
                } else {
                    ArrayD::ones(IxDyn(&shape))
                }
            })
            .collect();
        FtnModel::new(tree.clone(), arrays, vec![b; tree.dim()]).unwrap()
    }

    #[test]
    fn product_normal_moments() {
        let model = product_normal_model(2, 30);
        let (mean, second) = model.mean_and_second_moments().unwrap();
        for j in 0..4 {
            assert!(mean[j].abs() < 1e-2);
            assert!((second[(j, j)] - 1.0).abs() < 2e-2, "{}", second[(j, j)]);
            for k in 0..4 {
                if k != j {
                    assert!(second[(j, k)].abs() < 1e-2);
                }
            }
        }
    }

    #[test]
    fn even_model_has_zero_mean() {
        let tree = build_tree_1d(2).unwrap();
        let mut model = FtnModel::random(tree, bases(4, 4, 1.0), 2, 17).unwrap();
        for node in 0..model.tree().num_nodes() {
            if model.components()[node].legs[0] == Leg::Physical {
                let g = model.component_mut(node);
                for i in [1, 3] {
                    g.index_axis_mut(Axis(0), i).fill(0.0);
                }
            }
        }
        let (mean, _) = model.mean_and_second_moments().unwrap();
        assert!(mean.iter().all(|m| *m == 0.0), "{mean:?}");
    }

    fn dense_grid_moments(model: &FtnModel, pts: usize) -> (f64, Vec<f64>, Array2<f64>) {
        let b = model.bases()[0];
        let (xs, ws) = gauss_legendre_on(pts, b.interval.lo, b.interval.hi);
        let d = model.dim();
        let mut z = 0.0;
        let mut m1 = vec![0.0; d];
        let mut m2 = Array2::zeros((d, d));
        let total = pts.pow(d as u32);
        for flat in 0..total {
            let mut rem = flat;
            let mut x = vec![0.0; d];
            let mut w = 1.0;
            for j in 0..d {
                x[j] = xs[rem % pts];
                w *= ws[rem % pts];
                rem /= pts;
            }
            let p = w * model.eval_density(&x).unwrap();
            z += p;
            for j in 0..d {
                m1[j] += p * x[j];
                for k in 0..d {
                    m2[[j, k]] += p * x[j] * x[k];
                }
            }
        }
        (z, m1.iter().map(|v| v / z).collect(), m2 / z)
    }

    fn nonnegative_model() -> FtnModel {
        let tree = build_tree_1d(2).unwrap();
        let mut model = FtnModel::random(tree, bases(4, 3, 1.0), 2, 31).unwrap();
        // a constant-dominated model keeps the density positive
        for node in 0..model.tree().num_nodes() {
            let g = model.component_mut(node);
            g.mapv_inplace(|v| 0.05 * v);
            g.first_mut().map(|v| *v += 1.0);
        }
        model
    }

    #[test]
    fn moments_match_dense_quadrature() {
        let model = nonnegative_model();
        let (z, m1, m2) = dense_grid_moments(&model, 20);
        assert!((model.compute_normalization().unwrap() - z).abs() < 1e-6 * z.abs());
        let (mean, second) = model.mean_and_second_moments().unwrap();
        for j in 0..4 {
            assert!((mean[j] - m1[j]).abs() < 1e-6 * (1e-3 + m1[j].abs()), "{} {}", mean[j], m1[j]);
            for k in 0..4 {
                let e = m2[[j, k]];
                assert!((second[(j, k)] - e).abs() < 1e-6 * e.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn marginal_matches_dense_quadrature() {
        let model = nonnegative_model();
        let b = model.bases()[0];
        let (xs, ws) = gauss_legendre_on(20, b.interval.lo, b.interval.hi);
        let z = model.compute_normalization().unwrap();
        let pts = [(0.1, -0.5), (0.7, 0.7), (-0.9, 0.3)];
        let got = model.marginal_2d((1, 3), &pts).unwrap();
        for (&(u, v), g) in pts.iter().zip(&got) {
            let mut acc = 0.0;
            for (i, &x0) in xs.iter().enumerate() {
                for (k, &x2) in xs.iter().enumerate() {
                    acc += ws[i] * ws[k] * model.eval_density(&[x0, u, x2, v]).unwrap();
                }
            }
            let e = acc / z;
            assert!((g - e).abs() < 1e-6 * e.abs(), "{g} vs {e}");
        }
        assert!(model.marginal_2d((1, 1), &pts).is_err());
        assert!(model.marginal_2d((1, 9), &pts).is_err());
    }

    #[test]
    fn marginal_integrates_to_one() {
        let model = nonnegative_model();
        let n = 50;
        let h = 2.0 / n as f64;
        let mids: Vec<f64> = (0..n).map(|i| -1.0 + (i as f64 + 0.5) * h).collect();
        let grid: Vec<(f64, f64)> = mids.iter().flat_map(|&x| mids.iter().map(move |&y| (x, y))).collect();
        let total: f64 = model.marginal_2d((0, 2), &grid).unwrap().iter().sum::<f64>() * h * h;
        assert!((total - 1.0).abs() < 2e-2, "{total}");
    }

    #[test]
    fn separable_marginal_factorises() {
        let model = product_normal_model(2, 20);
        let grid = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)];
        let m = model.marginal_2d((1, 2), &grid).unwrap();
        assert!((m[0] * m[3] - m[1] * m[2]).abs() < 1e-12);
    }

    #[test]
    fn correlation_pullback_of_independent_coordinates() {
        let model = product_normal_model(2, 30);
        let plan = WaveletPlan::line(FilterKind::D4, 2).unwrap();
        let cov = model.covariance().unwrap();
        let w = plan.transform_matrix().unwrap();
        let expect = correlation_from_covariance(&(w.transpose() * &cov * &w)).unwrap();
        let got = correlation_original(&model, &plan).unwrap();
        assert!((got - &expect).abs().max() < 1e-12);
        for i in 0..4 {
            assert_eq!(expect[(i, i)], 1.0);
        }
        // identity transform gives the c-coordinate correlation itself
        let ident = correlation_pullback(&model, &DMatrix::identity(4, 4)).unwrap();
        assert!((ident - correlation_from_covariance(&cov).unwrap()).abs().max() < 1e-15);
        let bad = WaveletPlan::line(FilterKind::Haar, 3).unwrap();
        assert!(correlation_original(&model, &bad).is_err());
    }

    #[test]
    fn correlation_is_symmetric_with_unit_diagonal() {
        let model = nonnegative_model();
        let c = correlation_original(&model, &WaveletPlan::line(FilterKind::Haar, 2).unwrap()).unwrap();
        assert!((&c - c.transpose()).abs().max() < 1e-12);
        assert!((0..4).all(|i| c[(i, i)] == 1.0));
    }

    #[test]
    fn json_round_trip() {
        let tree = build_tree_1d(3).unwrap();
        let mut model = FtnModel::random(tree, bases(8, 3, 2.0), 2, 6).unwrap();
        model.transform = Some(TransformInfo::of(&WaveletPlan::line(FilterKind::D4, 3).unwrap()));
        model.normalization().unwrap();
        let back = FtnModel::from_json(&model.to_json()).unwrap();
        assert_eq!(back.components(), model.components());
        assert_eq!(back.transform, model.transform);
        assert_eq!(back.cached_normalization(), model.cached_normalization());
        let mut bad = model.to_json();
        bad["version"] = serde_json::json!("fhtw-model/0");
        assert!(FtnModel::from_json(&bad).is_err());
    }

    #[test]
    fn rejects_inconsistent_components() {
        let tree = build_tree_1d(1).unwrap();
        let g = ArrayD::zeros(IxDyn(&[2, 2]));
        let h = ArrayD::zeros(IxDyn(&[2, 3]));
        assert!(FtnModel::new(tree.clone(), vec![g.clone(), h], bases(2, 2, 1.0)).is_err());
        let h = ArrayD::zeros(IxDyn(&[3, 2]));
        assert!(FtnModel::new(tree, vec![g, h], bases(2, 2, 1.0)).is_err());
    }

    proptest! {
        #[test]
        fn gauge_invariance(seed in 0u64..500, edge in 0usize..4) {
            let tree = build_tree_1d(2).unwrap();
            let mut model = FtnModel::random(tree, bases(4, 3, 1.0), 2, seed).unwrap();
            let x = [0.3, -0.1, 0.8, -0.6];
            let before = model.eval_density(&x).unwrap();
            // M = rotation-ish well-conditioned matrix, inverse explicit
            let m = ndarray::array![[2.0, 0.5], [-0.3, 1.0]];
            let det = 2.0 * 1.0 - 0.5 * -0.3;
            let minv = ndarray::array![[1.0 / det, -0.5 / det], [0.3 / det, 2.0 / det]];
            let (a, b) = model.tree().edges()[edge];
            let ax = |model: &FtnModel, node: usize| {
                model.components()[node].legs.iter().position(|l| *l == Leg::Edge(edge)).unwrap()
            };
            let (ia, ib) = (ax(&model, a), ax(&model, b));
            let ga = crate::tensor::apply_matrix_axis(&model.components()[a].data, ia, &m.t().to_owned());
            let gb = crate::tensor::apply_matrix_axis(&model.components()[b].data, ib, &minv);
            *model.component_mut(a) = ga;
            *model.component_mut(b) = gb;
            let after = model.eval_density(&x).unwrap();
            prop_assert!((before - after).abs() < 1e-8 * (1.0 + before.abs()));
        }

        #[test]
        fn integrate_is_linear(seed in 0u64..200, slot in 0usize..4, s in -3.0f64..3.0) {
            let tree = build_tree_1d(2).unwrap();
            let model = FtnModel::random(tree, bases(4, 3, 1.0), 2, seed).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed + 1);
            let w: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.gen::<f64>()).collect()).collect();
            let u: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
            let mut wu = w.clone();
            wu[slot] = u.clone();
            let mut comb = w.clone();
            comb[slot] = w[slot].iter().zip(&u).map(|(a, b)| a + s * b).collect();
            let lhs = model.integrate(&comb).unwrap();
            let rhs = model.integrate(&w).unwrap() + s * model.integrate(&wu).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
        }
    }
}
