//! Small dense helpers shared by the graph and view code.

use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

pub fn dot(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> f64 {
    u.iter().zip(v.iter()).map(|(a, b)| a * b).sum()
}

pub fn norm(u: ArrayView1<'_, f64>) -> f64 {
    u.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// `<u,v> / (|u| |v|)`, clamped to [-1, 1] against rounding.
pub fn cosine_similarity(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Validation(format!(
            "cosine of vectors with dimensions {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Cosine that treats an all-zero side as contributing 0.
pub fn cosine_or_zero(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> f64 {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0)
    }
}

/// Row-wise L2 normalization in place; zero rows stay zero.
pub fn normalize_rows(m: &mut Array2<f64>) {
    for mut row in m.axis_iter_mut(Axis(0)) {
        let n = norm(row.view());
        if n > 0.0 {
            row.mapv_inplace(|v| v / n);
        }
    }
}

/// Row norms, used to precompute cosine denominators.
pub fn row_norms(m: &Array2<f64>) -> Vec<f64> {
    m.outer_iter().map(|r| norm(r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn cosine_closed_forms() {
        let c = |a: &[f64], b: &[f64]| {
            cosine_similarity(ArrayView1::from(a), ArrayView1::from(b)).unwrap()
        };
        assert_eq!(c(&[1., 0., 0.], &[1., 0., 0.]), 1.0);
        assert_eq!(c(&[1., 0.], &[0., 1.]), 0.0);
        assert_abs_diff_eq!(c(&[1., 1.], &[1., 0.]), std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        assert_abs_diff_eq!(c(&[1., 2.], &[-2., -4.]), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn cosine_errors() {
        let z = [0.0, 0.0];
        let u = [1.0, 0.0];
        assert!(matches!(
            cosine_similarity(ArrayView1::from(&z), ArrayView1::from(&u)),
            Err(Error::ZeroNorm)
        ));
        assert!(cosine_similarity(ArrayView1::from(&u), ArrayView1::from(&[1.0][..])).is_err());
        assert_eq!(cosine_or_zero(ArrayView1::from(&z), ArrayView1::from(&u)), 0.0);
    }

    #[test]
    fn normalize_keeps_zero_rows() {
        let mut m = array![[3.0, 4.0], [0.0, 0.0]];
        normalize_rows(&mut m);
        assert_eq!(m, array![[0.6, 0.8], [0.0, 0.0]]);
    }
}
