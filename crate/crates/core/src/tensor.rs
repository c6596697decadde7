//! Small dense-tensor helpers for component contractions.

use ndarray::{Array2, ArrayD, Axis, IxDyn};

/// Contracts `axis` of `a` against `v`, removing that axis.
pub fn contract_axis(a: &ArrayD<f64>, axis: usize, v: &[f64]) -> ArrayD<f64> {
    debug_assert_eq!(a.shape()[axis], v.len());
    let mut shape = a.shape().to_vec();
    shape.remove(axis);
    let mut out = ArrayD::zeros(IxDyn(&shape));
    for (i, &w) in v.iter().enumerate() {
        if w != 0.0 {
            out.scaled_add(w, &a.index_axis(Axis(axis), i));
        }
    }
    out
}

/// Applies `m` (new x old) along `axis`: `out[.., j, ..] = Σ_i m[j, i] a[.., i, ..]`.
pub fn apply_matrix_axis(a: &ArrayD<f64>, axis: usize, m: &Array2<f64>) -> ArrayD<f64> {
    debug_assert_eq!(a.shape()[axis], m.ncols());
    let mut shape = a.shape().to_vec();
    shape[axis] = m.nrows();
    let mut out = ArrayD::zeros(IxDyn(&shape));
    for (j, mut dst) in out.axis_iter_mut(Axis(axis)).enumerate() {
        for i in 0..m.ncols() {
            let w = m[[j, i]];
            if w != 0.0 {
                dst.scaled_add(w, &a.index_axis(Axis(axis), i));
            }
        }
    }
    out
}

/// Nested JSON lists (a bare number for order-0 tensors).
pub fn to_nested_json(a: &ArrayD<f64>) -> serde_json::Value {
    if a.ndim() == 0 {
        return serde_json::json!(a.first().copied().unwrap_or(0.0));
    }
    serde_json::Value::Array(
        a.outer_iter()
            .map(|sub| to_nested_json(&sub.to_owned()))
            .collect(),
    )
}

/// Inverse of [`to_nested_json`]; `None` on ragged or non-numeric input.
pub fn from_nested_json(v: &serde_json::Value) -> Option<ArrayD<f64>> {
    let mut shape = Vec::new();
    let mut cur = v;
    while let Some(list) = cur.as_array() {
        shape.push(list.len());
        cur = list.first()?;
    }
    let mut flat = Vec::with_capacity(shape.iter().product());
    collect(v, &shape, &mut flat)?;
    ArrayD::from_shape_vec(IxDyn(&shape), flat).ok()
}

fn collect(v: &serde_json::Value, shape: &[usize], out: &mut Vec<f64>) -> Option<()> {
    match shape.split_first() {
        None => out.push(v.as_f64()?),
        Some((&n, rest)) => {
            let list = v.as_array()?;
            if list.len() != n {
                return None;
            }
            for item in list {
                collect(item, rest, out)?;
            }
        }
    }
    Some(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn contraction_matches_manual_sum() {
        let a = ArrayD::from_shape_fn(IxDyn(&[2, 3, 4]), |ix| (ix[0] * 12 + ix[1] * 4 + ix[2]) as f64);
        let v = [1.0, -2.0, 0.5];
        let c = contract_axis(&a, 1, &v);
        assert_eq!(c.shape(), &[2, 4]);
        for i in 0..2 {
            for k in 0..4 {
                let e: f64 = (0..3).map(|j| a[[i, j, k]] * v[j]).sum();
                assert_eq!(c[[i, k]], e);
            }
        }
    }

    #[test]
    fn matrix_along_axis() {
        let a = ArrayD::from_shape_fn(IxDyn(&[3, 2]), |ix| (ix[0] + 10 * ix[1]) as f64);
        let m = array![[1.0, 0.0, 1.0], [0.0, 2.0, 0.0]];
        let out = apply_matrix_axis(&a, 0, &m);
        assert_eq!(out.shape(), &[2, 2]);
        assert_eq!(out[[0, 1]], a[[0, 1]] + a[[2, 1]]);
        assert_eq!(out[[1, 0]], 2.0 * a[[1, 0]]);
    }

    #[test]
    fn nested_json_round_trip() {
        let a = ArrayD::from_shape_fn(IxDyn(&[2, 1, 3]), |ix| ix[2] as f64 - ix[0] as f64 * 0.25);
        assert_eq!(from_nested_json(&to_nested_json(&a)).unwrap(), a);
        let s = ArrayD::from_elem(IxDyn(&[]), 2.5);
        assert_eq!(from_nested_json(&to_nested_json(&s)).unwrap(), s);
        assert!(from_nested_json(&serde_json::json!([[1.0], [1.0, 2.0]])).is_none());
    }
}
