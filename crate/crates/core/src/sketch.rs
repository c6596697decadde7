//! Sketch functions on directed tree edges and the sample-moment
//! estimators `Z_e` (edge matrices) and `B_k` (node tensors).

use ndarray::{s, Array2, ArrayD, ArrayView2, Axis, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{FhtwError, Result};
use crate::ftn::{leg_roster, Leg};
use crate::topology::{DirectedEdge, TreeTopology};

/// Rows per accumulation chunk. Fixed so reductions are reproducible.
pub const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mixing {
    /// constant row kept, remaining rows random and orthonormal
    Orthonormal,
    /// raw features used as they are; sketch size equals the feature count
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SketchConfig {
    /// highest univariate degree used in sketch features
    pub degree: usize,
    pub interface_count: usize,
    /// requested sketch size r̃
    pub size: usize,
    pub seed: u64,
    pub mixing: Mixing,
    /// error instead of shrinking r̃ on edges with too few raw features
    pub strict: bool,
}

impl Default for SketchConfig {
    fn default() -> Self {
        SketchConfig {
            degree: 5,
            interface_count: 8,
            size: 24,
            seed: 0,
            mixing: Mixing::Orthonormal,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSketch {
    pub edge: DirectedEdge,
    pub variables: Vec<usize>,
    /// `size x raw_count`; row-orthonormal
    pub mixing: Array2<f64>,
}

impl EdgeSketch {
    pub fn size(&self) -> usize {
        self.mixing.nrows()
    }

    pub fn raw_count(&self) -> usize {
        self.mixing.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct SketchPlan {
    pub config: SketchConfig,
    /// bases for the physical legs of `B_k`
    pub bases: Vec<BasisSpec>,
    /// degree-`config.degree` bases for sketch features (same intervals)
    feature_bases: Vec<BasisSpec>,
    /// indexed by `2 * edge_id + dir`, `dir = 0` for `edges[id].0 -> edges[id].1`
    sketches: Vec<EdgeSketch>,
    edges: Vec<(usize, usize)>,
}

fn directed_index(edges: &[(usize, usize)], e: DirectedEdge) -> Option<usize> {
    edges.iter().enumerate().find_map(|(id, &(a, b))| {
        if (a, b) == (e.from, e.to) {
            Some(2 * id)
        } else if (b, a) == (e.from, e.to) {
            Some(2 * id + 1)
        } else {
            None
        }
    })
}

pub fn raw_feature_count(variables: usize, degree: usize) -> usize {
    1 + variables * degree
}

pub fn build_sketch_plan(tree: &TreeTopology, bases: &[BasisSpec], config: SketchConfig) -> Result<SketchPlan> {
    if bases.len() != tree.dim() {
        return Err(FhtwError::invalid(format!(
            "{} bases for {} variables",
            bases.len(),
            tree.dim()
        )));
    }
    if config.interface_count == 0 {
        return Err(FhtwError::invalid("interface count must be at least 1"));
    }
    if config.size == 0 && config.mixing == Mixing::Orthonormal {
        return Err(FhtwError::invalid("sketch size must be at least 1"));
    }
    let feature_bases = bases
        .iter()
        .map(|b| BasisSpec {
            interval: b.interval,
            size: config.degree + 1,
        })
        .collect();
    let mut sketches = Vec::with_capacity(2 * tree.num_edges());
    for (id, &(a, b)) in tree.edges().iter().enumerate() {
        for (dir, e) in [DirectedEdge::new(a, b), DirectedEdge::new(b, a)].into_iter().enumerate() {
            let variables = tree.interface_variables(e, config.interface_count)?;
            let raw = raw_feature_count(variables.len(), config.degree);
            let mixing = match config.mixing {
                Mixing::Identity => Array2::eye(raw),
                Mixing::Orthonormal => {
                    if config.size > raw && config.strict {
                        return Err(FhtwError::invalid(format!(
                            "sketch size {} exceeds the {raw} raw features on edge ({}, {})",
                            config.size, e.from, e.to
                        )));
                    }
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                    rng.set_stream((2 * id + dir) as u64);
                    constant_preserving_mixing(config.size.min(raw), raw, &mut rng)?
                }
            };
            sketches.push(EdgeSketch { edge: e, variables, mixing });
        }
    }
    Ok(SketchPlan {
        config,
        bases: bases.to_vec(),
        feature_bases,
        sketches,
        edges: tree.edges().to_vec(),
    })
}

/// First row selects the constant feature; the rest are Gaussian rows made
/// orthonormal to it and to each other.
fn constant_preserving_mixing(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    let mut m = Array2::zeros((rows, cols));
    m[[0, 0]] = 1.0;
    for i in 1..rows {
        let mut v: Vec<f64> = (0..cols).map(|_| StandardNormal.sample(rng)).collect();
        // two passes of Gram-Schmidt keep the rows orthonormal to round-off
        for _ in 0..2 {
            for j in 0..i {
                let p: f64 = m.row(j).iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(m.row(j)).for_each(|(x, r)| *x -= p * r);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            return Err(FhtwError::Internal("sketch mixing lost full row rank".into()));
        }
        m.row_mut(i).iter_mut().zip(&v).for_each(|(dst, x)| *dst = x / norm);
    }
    Ok(m)
}

impl SketchPlan {
    pub fn get(&self, e: DirectedEdge) -> Result<&EdgeSketch> {
        directed_index(&self.edges, e)
            .map(|i| &self.sketches[i])
            .ok_or_else(|| FhtwError::invalid(format!("({}, {}) is not an edge", e.from, e.to)))
    }

    pub fn sketches(&self) -> &[EdgeSketch] {
        &self.sketches
    }

    pub fn size(&self, e: DirectedEdge) -> Result<usize> {
        Ok(self.get(e)?.size())
    }

    fn raw_features(&self, sk: &EdgeSketch, row: &[f64], out: &mut [f64]) {
        let q = self.config.degree;
        out[0] = 1.0;
        let mut buf = vec![0.0; q + 1];
        for (slot, &v) in sk.variables.iter().enumerate() {
            self.feature_bases[v].eval_into(row[v], &mut buf);
            out[1 + slot * q..1 + (slot + 1) * q].copy_from_slice(&buf[1..]);
        }
    }

    /// `s_{e}(row)`, a vector of length r̃_e.
    pub fn eval(&self, e: DirectedEdge, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.bases.len() {
            return Err(FhtwError::invalid(format!(
                "row has {} entries, plan has d = {}",
                row.len(),
                self.bases.len()
            )));
        }
        let sk = self.get(e)?;
        let mut raw = vec![0.0; sk.raw_count()];
        self.raw_features(sk, row, &mut raw);
        Ok(sk.mixing.dot(&ndarray::Array1::from(raw)).to_vec())
    }

    /// Sketch values for a block of rows: `rows x r̃_e`.
    fn eval_block(&self, sk: &EdgeSketch, rows: ArrayView2<f64>) -> Array2<f64> {
        let q = self.config.degree;
        let mut raw = Array2::zeros((rows.nrows(), sk.raw_count()));
        raw.column_mut(0).fill(1.0);
        let mut buf = vec![0.0; q + 1];
        for (slot, &v) in sk.variables.iter().enumerate() {
            for (i, x) in rows.column(v).iter().enumerate() {
                self.feature_bases[v].eval_into(*x, &mut buf);
                raw.slice_mut(s![i, 1 + slot * q..1 + (slot + 1) * q])
                    .iter_mut()
                    .zip(&buf[1..])
                    .for_each(|(d, s)| *d = *s);
            }
        }
        if self.config.mixing == Mixing::Identity {
            raw
        } else {
            raw.dot(&sk.mixing.t())
        }
    }

    pub fn summary(&self) -> serde_json::Value {
        let edges: Vec<serde_json::Value> = self
            .sketches
            .iter()
            .map(|sk| {
                serde_json::json!({
                    "from": sk.edge.from,
                    "to": sk.edge.to,
                    "interface_variables": sk.variables,
                    "raw_features": sk.raw_count(),
                    "size": sk.size(),
                })
            })
            .collect();
        serde_json::json!({
            "degree": self.config.degree,
            "interface_count": self.config.interface_count,
            "requested_size": self.config.size,
            "seed": self.config.seed,
            "mixing": self.config.mixing,
            "strict": self.config.strict,
            "chunk_rows": CHUNK,
            "directed_edges": edges,
        })
    }
}

pub fn eval_sketch(plan: &SketchPlan, e: DirectedEdge, row: &[f64]) -> Result<Vec<f64>> {
    plan.eval(e, row)
}

/// Samples with optional per-row weights. Unweighted sums are divided by
/// `N`; weighted sums are returned as `Σ w_i f(x_i)` (quadrature style).
#[derive(Debug, Clone, Copy)]
pub struct SampleSet<'a> {
    pub points: ArrayView2<'a, f64>,
    pub weights: Option<&'a [f64]>,
}

impl<'a> SampleSet<'a> {
    pub fn new(points: ArrayView2<'a, f64>) -> Self {
        SampleSet { points, weights: None }
    }

    pub fn weighted(points: ArrayView2<'a, f64>, weights: &'a [f64]) -> Self {
        SampleSet {
            points,
            weights: Some(weights),
        }
    }

    fn check(&self, d: usize) -> Result<()> {
        if self.points.nrows() == 0 {
            return Err(FhtwError::invalid("sample set is empty"));
        }
        if self.points.ncols() != d {
            return Err(FhtwError::invalid(format!(
                "samples have {} columns, expected {d}",
                self.points.ncols()
            )));
        }
        if let Some(w) = self.weights {
            if w.len() != self.points.nrows() {
                return Err(FhtwError::invalid("weight count differs from sample count"));
            }
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        match self.weights {
            Some(_) => 1.0,
            None => 1.0 / self.points.nrows() as f64,
        }
    }
}

/// Deterministic pairwise reduction over chunk partials. Merge order only
/// depends on chunk position, never on scheduling.
struct PairwiseSum<T> {
    stack: Vec<(u32, T)>,
}

impl<T> PairwiseSum<T> {
    fn new() -> Self {
        PairwiseSum { stack: Vec::new() }
    }

    fn push(&mut self, mut item: T, add: &impl Fn(T, T) -> T) {
        let mut level = 0;
        while matches!(self.stack.last(), Some((l, _)) if *l == level) {
            let (_, prev) = self.stack.pop().unwrap();
            item = add(prev, item);
            level += 1;
        }
        self.stack.push((level, item));
    }

    fn finish(mut self, add: &impl Fn(T, T) -> T) -> Option<T> {
        let mut acc = self.stack.pop()?.1;
        while let Some((_, prev)) = self.stack.pop() {
            acc = add(prev, acc);
        }
        Some(acc)
    }
}

/// Maps each chunk of rows to a partial result and reduces pairwise.
pub fn chunked_reduce<T, F, A>(set: SampleSet, map: F, add: A) -> T
where
    T: Send,
    F: Fn(ArrayView2<f64>, Option<&[f64]>) -> T + Sync,
    A: Fn(T, T) -> T,
{
    let n = set.points.nrows();
    let n_chunks = n.div_ceil(CHUNK);
    // bound memory: materialise a limited window of partials at a time
    let window = (rayon::current_num_threads() * 2).max(2);
    let mut acc = PairwiseSum::new();
    let mut start = 0;
    while start < n_chunks {
        let end = (start + window).min(n_chunks);
        let partials: Vec<T> = (start..end)
            .into_par_iter()
            .map(|c| {
                let lo = c * CHUNK;
                let hi = (lo + CHUNK).min(n);
                let w = set.weights.map(|w| &w[lo..hi]);
                map(set.points.slice(s![lo..hi, ..]), w)
            })
            .collect();
        for p in partials {
            acc.push(p, &add);
        }
        start = end;
    }
    acc.finish(&add).expect("at least one chunk")
}

fn add_arrays<D: ndarray::Dimension>(mut a: ndarray::Array<f64, D>, b: ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
    a += &b;
    a
}

fn weight_rows(mut m: Array2<f64>, w: Option<&[f64]>) -> Array2<f64> {
    if let Some(w) = w {
        for (mut row, &wi) in m.axis_iter_mut(Axis(0)).zip(w) {
            row *= wi;
        }
    }
    m
}

/// `Σ_s ⊗_i M_i[s, :]` for row-aligned factor matrices.
fn outer_sum(factors: &[Array2<f64>]) -> ArrayD<f64> {
    let shape: Vec<usize> = factors.iter().map(|f| f.ncols()).collect();
    let rows = factors[0].nrows();
    if factors.len() == 1 {
        let v = factors[0].sum_axis(Axis(0));
        return v.into_dyn();
    }
    // Khatri-Rao product of all but the last factor, then one gemm
    let mut kr = factors[0].clone();
    for f in &factors[1..factors.len() - 1] {
        let (a, b) = (kr.ncols(), f.ncols());
        let mut next = Array2::zeros((rows, a * b));
        for s in 0..rows {
            let left = kr.row(s);
            let right = f.row(s);
            let mut dst = next.row_mut(s);
            for i in 0..a {
                let li = left[i];
                for j in 0..b {
                    dst[i * b + j] = li * right[j];
                }
            }
        }
        kr = next;
    }
    let last = factors.last().unwrap();
    let m = kr.t().dot(last);
    m.into_shape_with_order(IxDyn(&shape)).expect("shape matches")
}

/// All edge matrices and node tensors from one pass over the samples.
#[derive(Debug, Clone)]
pub struct Moments {
    /// per edge id, oriented `(child, parent)`: rows index `s_{child->parent}`
    pub z: Vec<Array2<f64>>,
    /// per node, legs in roster order
    pub b: Vec<ArrayD<f64>>,
    pub samples: usize,
}

/// The sketch feeding leg `leg` of `node` (`None` for the physical leg).
fn incoming(tree: &TreeTopology, node: usize, leg: Leg) -> Option<DirectedEdge> {
    match leg {
        Leg::Physical => None,
        Leg::Edge(e) => {
            let (a, b) = tree.edges()[e];
            let other = if a == node { b } else { a };
            Some(DirectedEdge::new(other, node))
        }
    }
}

fn child_parent(tree: &TreeTopology, id: usize) -> DirectedEdge {
    let (a, b) = tree.edges()[id];
    if tree.points_to_parent(DirectedEdge::new(a, b)) {
        DirectedEdge::new(a, b)
    } else {
        DirectedEdge::new(b, a)
    }
}

pub fn estimate_moments(set: SampleSet, plan: &SketchPlan, tree: &TreeTopology) -> Result<Moments> {
    set.check(tree.dim())?;
    let rosters: Vec<Vec<Leg>> = (0..tree.num_nodes()).map(|k| leg_roster(tree, k)).collect();
    let map = |rows: ArrayView2<f64>, w: Option<&[f64]>| -> (Vec<Array2<f64>>, Vec<ArrayD<f64>>) {
        let sk: Vec<Array2<f64>> = plan.sketches.iter().map(|sk| plan.eval_block(sk, rows)).collect();
        let sketch_of = |e: DirectedEdge| &sk[directed_index(&plan.edges, e).unwrap()];
        let z = (0..tree.num_edges())
            .map(|id| {
                let e = child_parent(tree, id);
                let left = weight_rows(sketch_of(e).clone(), w);
                left.t().dot(sketch_of(e.reversed()))
            })
            .collect();
        let b = (0..tree.num_nodes())
            .map(|node| {
                let mut factors: Vec<Array2<f64>> = rosters[node]
                    .iter()
                    .map(|&leg| match incoming(tree, node, leg) {
                        Some(e) => sketch_of(e).clone(),
                        None => physical_block(plan, tree, node, rows),
                    })
                    .collect();
                let last = factors.pop().unwrap();
                factors.push(weight_rows(last, w));
                outer_sum(&factors)
            })
            .collect();
        (z, b)
    };
    let add = |a: (Vec<Array2<f64>>, Vec<ArrayD<f64>>), b: (Vec<Array2<f64>>, Vec<ArrayD<f64>>)| {
        let z = a.0.into_iter().zip(b.0).map(|(x, y)| add_arrays(x, y)).collect();
        let bb = a.1.into_iter().zip(b.1).map(|(x, y)| add_arrays(x, y)).collect();
        (z, bb)
    };
    let (z, b) = chunked_reduce(set, map, add);
    let scale = set.scale();
    Ok(Moments {
        z: z.into_iter().map(|m| m * scale).collect(),
        b: b.into_iter().map(|m| m * scale).collect(),
        samples: set.points.nrows(),
    })
}

fn physical_block(plan: &SketchPlan, tree: &TreeTopology, node: usize, rows: ArrayView2<f64>) -> Array2<f64> {
    let v = tree.node(node).variable().expect("physical leg on external node");
    let basis = &plan.bases[v];
    let mut out = Array2::zeros((rows.nrows(), basis.size));
    for (mut dst, x) in out.axis_iter_mut(Axis(0)).zip(rows.column(v)) {
        basis.eval_into(*x, dst.as_slice_mut().unwrap());
    }
    out
}

/// `Z_{(k,v)}(β, γ) = mean s_{k->v}(β) s_{v->k}(γ)`.
pub fn estimate_z_edge(set: SampleSet, plan: &SketchPlan, k: usize, v: usize) -> Result<Array2<f64>> {
    set.check(plan.bases.len())?;
    let fwd = plan.get(DirectedEdge::new(k, v))?;
    let back = plan.get(DirectedEdge::new(v, k))?;
    let z = chunked_reduce(
        set,
        |rows, w| {
            let a = weight_rows(plan.eval_block(fwd, rows), w);
            a.t().dot(&plan.eval_block(back, rows))
        },
        add_arrays,
    );
    Ok(z * set.scale())
}

/// `B_k`, legs in roster order (physical first on external nodes).
pub fn estimate_b_node(set: SampleSet, plan: &SketchPlan, tree: &TreeTopology, node: usize) -> Result<ArrayD<f64>> {
    set.check(tree.dim())?;
    if node >= tree.num_nodes() {
        return Err(FhtwError::invalid(format!("node {node} out of range")));
    }
    let roster = leg_roster(tree, node);
    let b = chunked_reduce(
        set,
        |rows, w| {
            let mut factors: Vec<Array2<f64>> = roster
                .iter()
                .map(|&leg| match incoming(tree, node, leg) {
                    Some(e) => plan.eval_block(plan.get(e).unwrap(), rows),
                    None => physical_block(plan, tree, node, rows),
                })
                .collect();
            let last = factors.pop().unwrap();
            factors.push(weight_rows(last, w));
            outer_sum(&factors)
        },
        add_arrays,
    );
    Ok(b * set.scale())
}
