//! Sample statistics used as ground truth next to model observables.

use nalgebra::DMatrix;
use ndarray::{ArrayView1, ArrayView2, Axis};

use crate::error::{FhtwError, Result};
use crate::ftn::correlation_from_covariance;

/// Sample covariance (divided by `N`).
pub fn empirical_covariance(samples: ArrayView2<f64>) -> Result<DMatrix<f64>> {
    let n = samples.nrows();
    if n < 2 {
        return Err(FhtwError::invalid("need at least two samples"));
    }
    let mean = samples.mean_axis(Axis(0)).expect("nonempty");
    let centered = &samples - &mean;
    let cov = centered.t().dot(&centered) / n as f64;
    Ok(DMatrix::from_fn(cov.nrows(), cov.ncols(), |i, j| cov[[i, j]]))
}

pub fn empirical_correlation(samples: ArrayView2<f64>) -> Result<DMatrix<f64>> {
    correlation_from_covariance(&empirical_covariance(samples)?)
}

/// Midpoint grid over a rectangle: `cells` per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2 {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub cells: usize,
}

impl Grid2 {
    pub fn new(x: (f64, f64), y: (f64, f64), cells: usize) -> Result<Self> {
        if cells == 0 || !(x.0 < x.1) || !(y.0 < y.1) {
            return Err(FhtwError::invalid("grid needs a nonempty rectangle and at least one cell"));
        }
        Ok(Grid2 { x, y, cells })
    }

    pub fn cell_area(&self) -> f64 {
        (self.x.1 - self.x.0) * (self.y.1 - self.y.0) / (self.cells * self.cells) as f64
    }

    /// Points in row-major order (x slow, y fast).
    pub fn points(&self) -> Vec<(f64, f64)> {
        let n = self.cells as f64;
        let hx = (self.x.1 - self.x.0) / n;
        let hy = (self.y.1 - self.y.0) / n;
        let mut out = Vec::with_capacity(self.cells * self.cells);
        for a in 0..self.cells {
            for b in 0..self.cells {
                out.push((self.x.0 + (a as f64 + 0.5) * hx, self.y.0 + (b as f64 + 0.5) * hy));
            }
        }
        out
    }
}

/// Scott's rule bandwidth for one coordinate of a 2D estimate.
pub fn scott_bandwidth(column: ArrayView1<f64>) -> f64 {
    let n = column.len() as f64;
    let mean = column.mean().unwrap_or(0.0);
    let sd = (column.mapv(|v| (v - mean).powi(2)).sum() / (n - 1.0).max(1.0)).sqrt();
    sd * n.powf(-1.0 / 6.0)
}

/// Gaussian product-kernel density estimate of `(a, b)` evaluated on `grid`.
pub fn kde_2d(a: ArrayView1<f64>, b: ArrayView1<f64>, grid: &Grid2) -> Result<Vec<f64>> {
    if a.is_empty() || a.len() != b.len() {
        return Err(FhtwError::invalid("KDE needs two equal-length nonempty columns"));
    }
    let (ha, hb) = (scott_bandwidth(a), scott_bandwidth(b));
    if !(ha > 0.0 && hb > 0.0) {
        return Err(FhtwError::invalid("KDE bandwidth is zero (constant column)"));
    }
    // separable kernel: per-axis kernel matrices, then one product
    let n = grid.cells;
    let axis = |col: ArrayView1<f64>, range: (f64, f64), h: f64| {
        let step = (range.1 - range.0) / n as f64;
        let norm = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
        ndarray::Array2::from_shape_fn((n, col.len()), |(g, s)| {
            let t = (range.0 + (g as f64 + 0.5) * step - col[s]) / h;
            norm * (-0.5 * t * t).exp()
        })
    };
    let ka = axis(a, grid.x, ha);
    let kb = axis(b, grid.y, hb);
    let dens = ka.dot(&kb.t()) / a.len() as f64;
    Ok(dens.iter().copied().collect())
}

/// `Σ |p - q| · area` after rescaling both to unit mass on the grid.
pub fn grid_l1(p: &[f64], q: &[f64], cell_area: f64) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(FhtwError::invalid("grids differ in size"));
    }
    let mass = |v: &[f64]| v.iter().sum::<f64>() * cell_area;
    let (mp, mq) = (mass(p), mass(q));
    if !(mp > 0.0 && mq > 0.0) {
        return Err(FhtwError::DegenerateModel("a density has no mass on the grid".into()));
    }
    Ok(p.iter().zip(q).map(|(a, b)| (a / mp - b / mq).abs()).sum::<f64>() * cell_area)
}
