//! Periodic discrete wavelet multiresolution transforms in 1D and 2D.
//!
//! Coordinates are labelled `c[k,l]` with scale `l in {-1, 0, .., Λ-1}` and
//! position `k in 1..=2^max(l,0)`. The canonical flattening is level-major
//! with `k` ascending and `c[1,-1]` first, so `c[k,l]` (for `l >= 0`) sits at
//! flat index `2^l + k - 1`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FhtwError, Result};

/// Largest dimension for which a dense transform matrix is built.
pub const MAX_DENSE_DIM: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FilterKind {
    Haar,
    D4,
}

impl FromStr for FilterKind {
    type Err = FhtwError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "haar" => Ok(FilterKind::Haar),
            "d4" | "db2" | "daubechies4" => Ok(FilterKind::D4),
            other => Err(FhtwError::invalid(format!("unknown wavelet filter '{other}'"))),
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterKind::Haar => f.write_str("haar"),
            FilterKind::D4 => f.write_str("d4"),
        }
    }
}

/// Orthonormal two-channel filter pair.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletFilter {
    pub kind: FilterKind,
    pub lowpass: Vec<f64>,
    pub highpass: Vec<f64>,
}

impl WaveletFilter {
    pub fn new(kind: FilterKind) -> Self {
        let lowpass = match kind {
            FilterKind::Haar => vec![std::f64::consts::FRAC_1_SQRT_2; 2],
            FilterKind::D4 => {
                let s3 = 3f64.sqrt();
                let norm = 4.0 * 2f64.sqrt();
                vec![
                    (1.0 + s3) / norm,
                    (3.0 + s3) / norm,
                    (3.0 - s3) / norm,
                    (1.0 - s3) / norm,
                ]
            }
        };
        // g_t = (-1)^t h_{n-1-t}
        let n = lowpass.len();
        let highpass = (0..n)
            .map(|t| if t % 2 == 0 { lowpass[n - 1 - t] } else { -lowpass[n - 1 - t] })
            .collect();
        WaveletFilter {
            kind,
            lowpass,
            highpass,
        }
    }

    pub fn haar() -> Self {
        Self::new(FilterKind::Haar)
    }

    pub fn d4() -> Self {
        Self::new(FilterKind::D4)
    }

    fn forward_into(&self, signal: &[f64], approx: &mut [f64], detail: &mut [f64]) {
        let len = signal.len();
        for j in 0..len / 2 {
            let mut a = 0.0;
            let mut c = 0.0;
            for (t, (&h, &g)) in self.lowpass.iter().zip(&self.highpass).enumerate() {
                let x = signal[(2 * j + t) % len];
                a += h * x;
                c += g * x;
            }
            approx[j] = a;
            detail[j] = c;
        }
    }

    fn inverse_into(&self, approx: &[f64], detail: &[f64], signal: &mut [f64]) {
        let len = signal.len();
        signal.iter_mut().for_each(|x| *x = 0.0);
        for j in 0..len / 2 {
            for (t, (&h, &g)) in self.lowpass.iter().zip(&self.highpass).enumerate() {
                signal[(2 * j + t) % len] += h * approx[j] + g * detail[j];
            }
        }
    }
}

/// One analysis step with periodic extension: output `j` (zero-based) applies
/// tap `t` to signal index `(2j + t) mod len`.
pub fn dwt_step(signal: &[f64], filter: &WaveletFilter) -> Result<(Vec<f64>, Vec<f64>)> {
    let len = signal.len();
    if len < 2 || len % 2 != 0 {
        return Err(FhtwError::invalid(format!(
            "wavelet step needs a positive even length, got {len}"
        )));
    }
    let mut approx = vec![0.0; len / 2];
    let mut detail = vec![0.0; len / 2];
    filter.forward_into(signal, &mut approx, &mut detail);
    Ok((approx, detail))
}

/// Inverse of [`dwt_step`].
pub fn idwt_step(approx: &[f64], detail: &[f64], filter: &WaveletFilter) -> Result<Vec<f64>> {
    if approx.len() != detail.len() || approx.is_empty() {
        return Err(FhtwError::invalid("approx and detail must be nonempty and of equal length"));
    }
    let mut out = vec![0.0; 2 * approx.len()];
    filter.inverse_into(approx, detail, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layout {
    Line1D,
    Grid2D,
}

/// A multiscale label `c[k,l]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScaleLabel {
    pub k: usize,
    pub l: i32,
}

impl ScaleLabel {
    pub fn new(k: usize, l: i32) -> Self {
        ScaleLabel { k, l }
    }

    /// Canonical flat index of this label.
    pub fn flat(&self) -> usize {
        if self.l < 0 {
            0
        } else {
            (1usize << self.l) + self.k - 1
        }
    }

    pub fn from_flat(index: usize) -> Self {
        if index == 0 {
            return ScaleLabel { k: 1, l: -1 };
        }
        let l = usize::BITS - 1 - index.leading_zeros();
        ScaleLabel {
            k: index - (1usize << l) + 1,
            l: l as i32,
        }
    }
}

impl fmt::Display for ScaleLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c[{},{}]", self.k, self.l)
    }
}

impl FromStr for ScaleLabel {
    type Err = FhtwError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || FhtwError::invalid(format!("cannot parse scale label '{s}'"));
        let inner = s
            .trim()
            .strip_prefix("c[")
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(bad)?;
        let (k, l) = inner.split_once(',').ok_or_else(bad)?;
        let k: usize = k.trim().parse().map_err(|_| bad())?;
        let l: i32 = l.trim().parse().map_err(|_| bad())?;
        let max_k = if l < 0 { 1 } else { 1usize << l };
        if l < -1 || k == 0 || k > max_k {
            return Err(bad());
        }
        Ok(ScaleLabel { k, l })
    }
}

/// 2D detail subbands, named by the (i, j) filter pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Subband {
    /// the final (low, low) scalar
    Scaling,
    LowHigh,
    HighLow,
    HighHigh,
}

/// Where a 2D canonical coordinate comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubbandPosition {
    pub subband: Subband,
    /// subband scale q; block side is 2^q
    pub q: u32,
    /// zero-based position inside the block
    pub i0: usize,
    pub j0: usize,
}

/// Interleaves the low `q` bits of `i0` and `j0` as `a1 b1 .. aq bq`
/// (bits of `i0` in the more significant slot of each pair).
pub fn interleave_bits(i0: usize, j0: usize, q: u32) -> usize {
    let mut k = 0usize;
    for b in 0..q {
        k |= ((i0 >> b) & 1) << (2 * b + 1);
        k |= ((j0 >> b) & 1) << (2 * b);
    }
    k
}

pub fn deinterleave_bits(k0: usize, q: u32) -> (usize, usize) {
    let mut i0 = 0usize;
    let mut j0 = 0usize;
    for b in 0..q {
        i0 |= ((k0 >> (2 * b + 1)) & 1) << b;
        j0 |= ((k0 >> (2 * b)) & 1) << b;
    }
    (i0, j0)
}

/// Filter choice plus level structure for a 1D line of `2^L` sites or a 2D
/// periodic grid of `2^L x 2^L` sites.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPlan {
    pub filter: WaveletFilter,
    pub layout: Layout,
    pub levels: u32,
}

impl WaveletPlan {
    pub fn new(kind: FilterKind, layout: Layout, levels: u32) -> Result<Self> {
        if levels == 0 {
            return Err(FhtwError::invalid("wavelet plan needs at least one level"));
        }
        let scale_levels = match layout {
            Layout::Line1D => levels,
            Layout::Grid2D => 2 * levels,
        };
        if scale_levels > 40 {
            return Err(FhtwError::invalid(format!("{levels} levels is too many")));
        }
        Ok(WaveletPlan {
            filter: WaveletFilter::new(kind),
            layout,
            levels,
        })
    }

    pub fn line(kind: FilterKind, levels: u32) -> Result<Self> {
        Self::new(kind, Layout::Line1D, levels)
    }

    pub fn grid(kind: FilterKind, levels: u32) -> Result<Self> {
        Self::new(kind, Layout::Grid2D, levels)
    }

    /// Builds a 1D plan for `d` sites or a 2D plan for `d = m^2` sites.
    pub fn for_dimension(kind: FilterKind, layout: Layout, d: usize) -> Result<Self> {
        let side = match layout {
            Layout::Line1D => d,
            Layout::Grid2D => {
                let m = (d as f64).sqrt().round() as usize;
                if m * m != d {
                    return Err(FhtwError::invalid(format!("{d} is not a square grid size")));
                }
                m
            }
        };
        if side < 2 || !side.is_power_of_two() {
            return Err(FhtwError::invalid(format!(
                "lattice side {side} must be a power of two >= 2"
            )));
        }
        Self::new(kind, layout, side.trailing_zeros())
    }

    /// Number of scale levels Λ (levels 0..Λ-1 plus the scalar at -1).
    pub fn scale_levels(&self) -> u32 {
        match self.layout {
            Layout::Line1D => self.levels,
            Layout::Grid2D => 2 * self.levels,
        }
    }

    /// Total number of variables d.
    pub fn dim(&self) -> usize {
        1usize << self.scale_levels()
    }

    /// Lattice side length (d for 1D, m for 2D).
    pub fn side(&self) -> usize {
        1usize << self.levels
    }

    pub fn label(&self, flat: usize) -> ScaleLabel {
        ScaleLabel::from_flat(flat)
    }

    pub fn labels(&self) -> Vec<ScaleLabel> {
        (0..self.dim()).map(ScaleLabel::from_flat).collect()
    }

    pub fn flat_index(&self, label: ScaleLabel) -> Result<usize> {
        let max_l = self.scale_levels() as i32 - 1;
        let max_k = if label.l < 0 { 1 } else { 1usize << label.l };
        if label.l < -1 || label.l > max_l || label.k == 0 || label.k > max_k {
            return Err(FhtwError::invalid(format!("label {label} outside this plan")));
        }
        Ok(label.flat())
    }

    /// 2D only: which subband coefficient a canonical index holds.
    pub fn subband_position(&self, flat: usize) -> Result<SubbandPosition> {
        if self.layout != Layout::Grid2D || flat >= self.dim() {
            return Err(FhtwError::invalid("subband positions exist only for 2D plans"));
        }
        let label = ScaleLabel::from_flat(flat);
        if label.l < 0 {
            return Ok(SubbandPosition {
                subband: Subband::Scaling,
                q: 0,
                i0: 0,
                j0: 0,
            });
        }
        let l = label.l as u32;
        let q = l / 2;
        let (subband, k0) = if l % 2 == 0 {
            (Subband::LowHigh, label.k - 1)
        } else if label.k % 2 == 1 {
            (Subband::HighLow, (label.k - 1) / 2)
        } else {
            (Subband::HighHigh, label.k / 2 - 1)
        };
        let (i0, j0) = deinterleave_bits(k0, q);
        Ok(SubbandPosition { subband, q, i0, j0 })
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(FhtwError::invalid(format!(
                "expected {} values for this plan, got {len}",
                self.dim()
            )));
        }
        Ok(())
    }

    /// Forward multiresolution transform into canonical order. For 2D plans
    /// the input is the grid flattened row-major with `i` (horizontal) fastest.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        let mut out = vec![0.0; x.len()];
        self.forward_into(x, &mut out);
        Ok(out)
    }

    pub fn inverse(&self, c: &[f64]) -> Result<Vec<f64>> {
        self.check_len(c.len())?;
        let mut out = vec![0.0; c.len()];
        self.inverse_into(c, &mut out);
        Ok(out)
    }

    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        match self.layout {
            Layout::Line1D => self.forward_1d(x, out),
            Layout::Grid2D => self.forward_2d(x, out),
        }
    }

    fn inverse_into(&self, c: &[f64], out: &mut [f64]) {
        match self.layout {
            Layout::Line1D => self.inverse_1d(c, out),
            Layout::Grid2D => self.inverse_2d(c, out),
        }
    }

    fn forward_1d(&self, x: &[f64], out: &mut [f64]) {
        let mut y = x.to_vec();
        for l in (0..self.levels).rev() {
            let half = 1usize << l;
            let mut approx = vec![0.0; half];
            self.filter
                .forward_into(&y, &mut approx, &mut out[half..2 * half]);
            y = approx;
        }
        out[0] = y[0];
    }

    fn inverse_1d(&self, c: &[f64], out: &mut [f64]) {
        let mut y = vec![c[0]];
        for l in 0..self.levels {
            let half = 1usize << l;
            let mut next = vec![0.0; 2 * half];
            self.filter.inverse_into(&y, &c[half..2 * half], &mut next);
            y = next;
        }
        out.copy_from_slice(&y);
    }

    fn forward_2d(&self, x: &[f64], out: &mut [f64]) {
        let mut y = x.to_vec();
        for q in (1..=self.levels).rev() {
            let s = 1usize << q;
            let h = s / 2;
            // rows: transform along i for each j
            let mut lo_i = vec![0.0; s * h]; // index j*h + i'
            let mut hi_i = vec![0.0; s * h];
            for j in 0..s {
                self.filter.forward_into(
                    &y[j * s..(j + 1) * s],
                    &mut lo_i[j * h..(j + 1) * h],
                    &mut hi_i[j * h..(j + 1) * h],
                );
            }
            // columns: transform along j for each i'
            let mut ll = vec![0.0; h * h];
            let mut bands = [vec![0.0; h * h], vec![0.0; h * h], vec![0.0; h * h]];
            let mut col = vec![0.0; s];
            let mut a = vec![0.0; h];
            let mut dt = vec![0.0; h];
            for (src, is_high_i) in [(&lo_i, false), (&hi_i, true)] {
                for i in 0..h {
                    for j in 0..s {
                        col[j] = src[j * h + i];
                    }
                    self.filter.forward_into(&col, &mut a, &mut dt);
                    for j in 0..h {
                        if is_high_i {
                            bands[1][j * h + i] = a[j]; // (high, low)
                            bands[2][j * h + i] = dt[j]; // (high, high)
                        } else {
                            ll[j * h + i] = a[j];
                            bands[0][j * h + i] = dt[j]; // (low, high)
                        }
                    }
                }
            }
            let qq = q - 1;
            let even = 1usize << (2 * qq);
            let odd = 1usize << (2 * qq + 1);
            for j in 0..h {
                for i in 0..h {
                    let k0 = interleave_bits(i, j, qq);
                    out[even + k0] = bands[0][j * h + i];
                    out[odd + 2 * k0] = bands[1][j * h + i];
                    out[odd + 2 * k0 + 1] = bands[2][j * h + i];
                }
            }
            y = ll;
        }
        out[0] = y[0];
    }

    fn inverse_2d(&self, c: &[f64], out: &mut [f64]) {
        let mut y = vec![c[0]];
        for qq in 0..self.levels {
            let h = 1usize << qq;
            let s = 2 * h;
            let even = 1usize << (2 * qq);
            let odd = 1usize << (2 * qq + 1);
            let mut lh = vec![0.0; h * h];
            let mut hl = vec![0.0; h * h];
            let mut hh = vec![0.0; h * h];
            for j in 0..h {
                for i in 0..h {
                    let k0 = interleave_bits(i, j, qq);
                    lh[j * h + i] = c[even + k0];
                    hl[j * h + i] = c[odd + 2 * k0];
                    hh[j * h + i] = c[odd + 2 * k0 + 1];
                }
            }
            let mut lo_i = vec![0.0; s * h];
            let mut hi_i = vec![0.0; s * h];
            let mut a = vec![0.0; h];
            let mut dt = vec![0.0; h];
            let mut col = vec![0.0; s];
            for i in 0..h {
                for j in 0..h {
                    a[j] = y[j * h + i];
                    dt[j] = lh[j * h + i];
                }
                self.filter.inverse_into(&a, &dt, &mut col);
                for j in 0..s {
                    lo_i[j * h + i] = col[j];
                }
                for j in 0..h {
                    a[j] = hl[j * h + i];
                    dt[j] = hh[j * h + i];
                }
                self.filter.inverse_into(&a, &dt, &mut col);
                for j in 0..s {
                    hi_i[j * h + i] = col[j];
                }
            }
            let mut next = vec![0.0; s * s];
            for j in 0..s {
                self.filter.inverse_into(
                    &lo_i[j * h..(j + 1) * h],
                    &hi_i[j * h..(j + 1) * h],
                    &mut next[j * s..(j + 1) * s],
                );
            }
            y = next;
        }
        out.copy_from_slice(&y);
    }

    /// Dense orthogonal matrix `W` with `coords = W x`.
    pub fn transform_matrix(&self) -> Result<DMatrix<f64>> {
        let d = self.dim();
        if d > MAX_DENSE_DIM {
            return Err(FhtwError::invalid(format!(
                "dense transform matrix limited to d <= {MAX_DENSE_DIM}, plan has d = {d}"
            )));
        }
        let mut w = DMatrix::zeros(d, d);
        let mut e = vec![0.0; d];
        let mut col = vec![0.0; d];
        for i in 0..d {
            e[i] = 1.0;
            self.forward_into(&e, &mut col);
            w.column_mut(i).copy_from_slice(&col);
            e[i] = 0.0;
        }
        Ok(w)
    }

    /// Applies the forward transform to each row of an `N x d` sample matrix.
    pub fn transform_samples(&self, samples: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.map_rows(samples, false)
    }

    pub fn inverse_samples(&self, coords: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.map_rows(coords, true)
    }

    fn map_rows(&self, input: ArrayView2<f64>, inverse: bool) -> Result<Array2<f64>> {
        self.check_len(input.ncols())?;
        let mut out = Array2::zeros(input.raw_dim());
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(input.axis_iter(Axis(0)).into_par_iter())
            .for_each(|(mut dst, src)| {
                let src = src.to_vec();
                let mut buf = vec![0.0; src.len()];
                if inverse {
                    self.inverse_into(&src, &mut buf);
                } else {
                    self.forward_into(&src, &mut buf);
                }
                dst.iter_mut().zip(buf).for_each(|(d, v)| *d = v);
            });
        Ok(out)
    }
}

pub fn multires_1d(plan: &WaveletPlan, signal: &[f64]) -> Result<Vec<f64>> {
    if plan.layout != Layout::Line1D {
        return Err(FhtwError::invalid("multires_1d needs a 1D plan"));
    }
    plan.forward(signal)
}

pub fn inverse_multires_1d(plan: &WaveletPlan, coords: &[f64]) -> Result<Vec<f64>> {
    if plan.layout != Layout::Line1D {
        return Err(FhtwError::invalid("inverse_multires_1d needs a 1D plan"));
    }
    plan.inverse(coords)
}

/// 2D transform of an `m x m` grid given as rows (`field[j][i]`, `i` horizontal).
pub fn multires_2d(plan: &WaveletPlan, field: &[Vec<f64>]) -> Result<Vec<f64>> {
    if plan.layout != Layout::Grid2D {
        return Err(FhtwError::invalid("multires_2d needs a 2D plan"));
    }
    let m = field.len();
    if field.iter().any(|row| row.len() != m) {
        return Err(FhtwError::invalid("2D field must be square"));
    }
    if m != plan.side() {
        return Err(FhtwError::invalid(format!(
            "grid side {m} does not match plan side {}",
            plan.side()
        )));
    }
    let flat: Vec<f64> = field.iter().flatten().copied().collect();
    plan.forward(&flat)
}

pub fn inverse_multires_2d(plan: &WaveletPlan, coords: &[f64]) -> Result<Vec<Vec<f64>>> {
    if plan.layout != Layout::Grid2D {
        return Err(FhtwError::invalid("inverse_multires_2d needs a 2D plan"));
    }
    let flat = plan.inverse(coords)?;
    Ok(flat.chunks(plan.side()).map(|r| r.to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    const S: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn filters_are_orthonormal() {
        for f in [WaveletFilter::haar(), WaveletFilter::d4()] {
            let lo: f64 = f.lowpass.iter().map(|h| h * h).sum();
            let hi: f64 = f.highpass.iter().map(|h| h * h).sum();
            assert!((lo - 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
            // one-step matrix on length 8 is orthogonal
            let mut t = DMatrix::zeros(8, 8);
            for i in 0..8 {
                let mut e = vec![0.0; 8];
                e[i] = 1.0;
                let (a, d) = dwt_step(&e, &f).unwrap();
                for j in 0..4 {
                    t[(j, i)] = a[j];
                    t[(4 + j, i)] = d[j];
                }
            }
            let err = (&t * t.transpose() - DMatrix::identity(8, 8)).abs().max();
            assert!(err < 1e-12, "{:?}: {err}", f.kind);
        }
    }

    #[test]
    fn step_examples() {
        let h = WaveletFilter::haar();
        let (a, d) = dwt_step(&[1.0, 1.0], &h).unwrap();
        assert!(close(&a, &[2f64.sqrt()], 1e-15) && close(&d, &[0.0], 1e-15));
        let (a, d) = dwt_step(&[1.0, 2.0, 3.0, 4.0], &h).unwrap();
        assert!(close(&a, &[3.0 * S, 7.0 * S], 1e-14));
        assert!(close(&d, &[-S, -S], 1e-14));
        let mut e = vec![0.0; 8];
        e[0] = 1.0;
        let (a, d) = dwt_step(&e, &WaveletFilter::d4()).unwrap();
        assert!((norm(&[a, d].concat()) - 1.0).abs() < 1e-14);
        assert!(dwt_step(&[1.0, 2.0, 3.0], &h).is_err());
        assert!(dwt_step(&[], &h).is_err());
    }

    #[test]
    fn d4_highpass_kills_constants() {
        let f = WaveletFilter::d4();
        let (_, d) = dwt_step(&[2.5; 16], &f).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-12));
        let s: f64 = f.highpass.iter().enumerate().map(|(t, g)| t as f64 * g).sum();
        assert!(s.abs() < 1e-12, "second vanishing moment");
    }

    #[test]
    fn multires_1d_examples() {
        let plan = WaveletPlan::line(FilterKind::Haar, 2).unwrap();
        let c = multires_1d(&plan, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(close(&c, &[5.0, -2.0, -S, -S], 1e-14), "{c:?}");
        let x = inverse_multires_1d(&plan, &[5.0, -2.0, -S, -S]).unwrap();
        assert!(close(&x, &[1.0, 2.0, 3.0, 4.0], 1e-14));
        assert!(plan.inverse(&[0.0; 4]).unwrap().iter().all(|v| *v == 0.0));
        let one = WaveletPlan::line(FilterKind::Haar, 1).unwrap();
        assert!(close(&one.inverse(&[1.0, 0.0]).unwrap(), &[S, S], 1e-15));
        assert!(plan.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn constant_signal_only_scaling_coefficient() {
        for kind in [FilterKind::Haar, FilterKind::D4] {
            for levels in 1..=5u32 {
                let plan = WaveletPlan::line(kind, levels).unwrap();
                let c = plan.forward(&vec![0.7; plan.dim()]).unwrap();
                let expect = 0.7 * 2f64.powf(levels as f64 / 2.0);
                assert!((c[0] - expect).abs() < 1e-12);
                assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
            }
        }
    }

    #[test]
    fn interleave_example() {
        assert_eq!(interleave_bits(2, 3, 2), 13);
        assert_eq!(deinterleave_bits(13, 2), (2, 3));
        let plan = WaveletPlan::grid(FilterKind::Haar, 3).unwrap();
        let flat = ScaleLabel::new(14, 4).flat();
        let pos = plan.subband_position(flat).unwrap();
        assert_eq!(pos, SubbandPosition { subband: Subband::LowHigh, q: 2, i0: 2, j0: 3 });
    }

    #[test]
    fn multires_2d_examples() {
        let plan = WaveletPlan::grid(FilterKind::Haar, 1).unwrap();
        let c = multires_2d(&plan, &[vec![1.5, 1.5], vec![1.5, 1.5]]).unwrap();
        assert!(close(&c, &[3.0, 0.0, 0.0, 0.0], 1e-14));
        let c = multires_2d(&plan, &[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert!((norm(&c) - 30f64.sqrt()).abs() < 1e-13);
        assert!(multires_2d(&plan, &[vec![1.0, 2.0, 3.0]]).is_err());
        assert!(WaveletPlan::for_dimension(FilterKind::Haar, Layout::Grid2D, 36).is_err());
    }

    /// Separable dense oracle: at each stage the 2D step is (T ⊗ T) acting on the
    /// current low-low block, with T the 1D one-step matrix.
    #[test]
    fn grid_m4_matches_dense_separable_oracle() {
        for kind in [FilterKind::Haar, FilterKind::D4] {
            let plan = WaveletPlan::grid(kind, 2).unwrap();
            let x = random_vec(16, 5);
            let f = WaveletFilter::new(kind);
            let step_matrix = |n: usize| {
                let mut t = DMatrix::zeros(n, n);
                for i in 0..n {
                    let mut e = vec![0.0; n];
                    e[i] = 1.0;
                    let (a, d) = dwt_step(&e, &f).unwrap();
                    for j in 0..n / 2 {
                        t[(j, i)] = a[j];
                        t[(n / 2 + j, i)] = d[j];
                    }
                }
                t
            };
            // stage 1: field as matrix F[j][i]; rows transformed by T (acting on i),
            // columns by T (acting on j): G = T_j F T_i^T
            let t4 = step_matrix(4);
            let field = DMatrix::from_row_slice(4, 4, &x);
            let g = &t4 * &field * t4.transpose();
            // g[(jj, ii)]: jj<2 low_j, ii<2 low_i
            let ll = g.view((0, 0), (2, 2)).into_owned();
            let t2 = step_matrix(2);
            let g2 = &t2 * &ll * t2.transpose();
            let c = plan.forward(&x).unwrap();
            assert!((c[0] - g2[(0, 0)]).abs() < 1e-12);
            assert!((c[1] - g2[(1, 0)]).abs() < 1e-12, "lh_0 = (low i, high j)");
            assert!((c[2] - g2[(0, 1)]).abs() < 1e-12, "hl_0");
            assert!((c[3] - g2[(1, 1)]).abs() < 1e-12, "hh_0");
            for j0 in 0..2 {
                for i0 in 0..2 {
                    let k0 = interleave_bits(i0, j0, 1);
                    assert!((c[4 + k0] - g[(2 + j0, i0)]).abs() < 1e-12);
                    assert!((c[8 + 2 * k0] - g[(j0, 2 + i0)]).abs() < 1e-12);
                    assert!((c[8 + 2 * k0 + 1] - g[(2 + j0, 2 + i0)]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn haar_l1_matrix() {
        let w = WaveletPlan::line(FilterKind::Haar, 1)
            .unwrap()
            .transform_matrix()
            .unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[S, S, S, -S]);
        assert!((w - expect).abs().max() < 1e-15);
    }

    #[test]
    fn haar_matches_explicit_construction() {
        // explicit Haar analysis matrix for L = 3 built from box functions
        let plan = WaveletPlan::line(FilterKind::Haar, 3).unwrap();
        let w = plan.transform_matrix().unwrap();
        let mut expect = DMatrix::zeros(8, 8);
        for i in 0..8 {
            expect[(0, i)] = 1.0 / 8f64.sqrt();
        }
        for l in 0..3u32 {
            let blocks = 1usize << l;
            let width = 8 / blocks;
            let amp = 1.0 / (width as f64).sqrt();
            for k in 0..blocks {
                let row = blocks + k;
                for t in 0..width {
                    expect[(row, k * width + t)] = if t < width / 2 { amp } else { -amp };
                }
            }
        }
        assert!((w - expect).abs().max() < 1e-12);
    }

    #[test]
    fn d4_l3_determinant_is_unit() {
        let w = WaveletPlan::line(FilterKind::D4, 3).unwrap().transform_matrix().unwrap();
        let det = w.determinant();
        assert!((det.abs() - 1.0).abs() < 1e-8, "det = {det}");
    }

    #[test]
    fn dense_guard() {
        let plan = WaveletPlan::line(FilterKind::Haar, 13).unwrap();
        assert!(plan.transform_matrix().is_err());
    }

    #[test]
    fn samples_rowwise_match_matrix() {
        let plan = WaveletPlan::line(FilterKind::Haar, 2).unwrap();
        let eye = Array2::<f64>::eye(4);
        let out = plan.transform_samples(eye.view()).unwrap();
        let w = plan.transform_matrix().unwrap();
        for r in 0..4 {
            for c in 0..4 {
                // row r of output = W e_r = column r of W
                assert!((out[(r, c)] - w[(c, r)]).abs() < 1e-14);
            }
        }
        let bad = Array2::<f64>::zeros((2, 3));
        assert!(plan.transform_samples(bad.view()).is_err());
    }

    #[test]
    fn label_round_trip() {
        for i in 0..1024 {
            let l = ScaleLabel::from_flat(i);
            assert_eq!(l.flat(), i);
            assert_eq!(l.to_string().parse::<ScaleLabel>().unwrap(), l);
        }
        assert_eq!(ScaleLabel::from_flat(0), ScaleLabel::new(1, -1));
        assert_eq!(ScaleLabel::from_flat(1), ScaleLabel::new(1, 0));
        assert_eq!(ScaleLabel::from_flat(3), ScaleLabel::new(2, 1));
        assert!("c[3,1]".parse::<ScaleLabel>().is_err());
        assert!("x_1".parse::<ScaleLabel>().is_err());
    }

    proptest! {
        #[test]
        fn round_trip_and_isometry(levels in 1u32..=6, d4 in any::<bool>(), grid in any::<bool>(), seed in 0u64..1000) {
            let kind = if d4 { FilterKind::D4 } else { FilterKind::Haar };
            let layout = if grid { Layout::Grid2D } else { Layout::Line1D };
            let levels = if grid { levels.min(5) } else { levels };
            let plan = WaveletPlan::new(kind, layout, levels).unwrap();
            let x = random_vec(plan.dim(), seed);
            let c = plan.forward(&x).unwrap();
            prop_assert!((norm(&c) - norm(&x)).abs() < 1e-10);
            let back = plan.inverse(&c).unwrap();
            prop_assert!(close(&back, &x, 1e-10));
        }
    }
}
