use ndarray::{s, Array, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Dimension, Zip};

use super::{Mat, Tensor3};
use crate::error::{Error, Result};

/// Tensor mode, one-based in names to match the usual `X₍ₙ₎` notation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    One,
    Two,
    Three,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::One, Mode::Two, Mode::Three];

    pub fn from_index(mode: usize) -> Result<Self> {
        match mode {
            1 => Ok(Mode::One),
            2 => Ok(Mode::Two),
            3 => Ok(Mode::Three),
            other => Err(Error::invalid(format!("mode must be 1, 2 or 3, got {other}"))),
        }
    }
}

/// Mode-n unfolding. Columns are the mode-n fibers, with the remaining
/// indices ordered so the lower-numbered mode varies fastest:
/// mode 1 column `j + k·n2`, mode 2 column `i + k·n1`, mode 3 column `i + j·n1`.
pub fn unfold(x: ArrayView3<f64>, mode: Mode) -> Mat {
    let (n1, n2, n3) = x.dim();
    match mode {
        Mode::One => Array2::from_shape_fn((n1, n2 * n3), |(i, col)| x[[i, col % n2, col / n2]]),
        Mode::Two => Array2::from_shape_fn((n2, n1 * n3), |(j, col)| x[[col % n1, j, col / n1]]),
        Mode::Three => {
            Array2::from_shape_fn((n3, n1 * n2), |(k, col)| x[[col % n1, col / n1, k]])
        }
    }
}

/// Inverse of [`unfold`] for a tensor of the given dims.
pub fn fold(m: ArrayView2<f64>, mode: Mode, dims: (usize, usize, usize)) -> Result<Tensor3> {
    let (n1, n2, n3) = dims;
    let expected = match mode {
        Mode::One => (n1, n2 * n3),
        Mode::Two => (n2, n1 * n3),
        Mode::Three => (n3, n1 * n2),
    };
    if m.dim() != expected {
        return Err(Error::shape(format!(
            "cannot fold {:?} into {:?} along {:?}",
            m.dim(),
            dims,
            mode
        )));
    }
    Ok(Array3::from_shape_fn(dims, |(i, j, k)| match mode {
        Mode::One => m[[i, j + k * n2]],
        Mode::Two => m[[j, i + k * n1]],
        Mode::Three => m[[k, i + j * n1]],
    }))
}

/// Column-wise Kronecker product: column `t` is `kron(a_t, b_t)`, so row
/// `i·n_b + j` holds `a[i,t]·b[j,t]`.
pub fn khatri_rao(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Mat> {
    if a.ncols() != b.ncols() {
        return Err(Error::shape(format!(
            "khatri_rao column counts differ: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let nb = b.nrows();
    Ok(Array2::from_shape_fn((a.nrows() * nb, a.ncols()), |(row, t)| {
        a[[row / nb, t]] * b[[row % nb, t]]
    }))
}

/// Entrywise product of two same-shape arrays.
pub fn hadamard<D: Dimension>(a: &Array<f64, D>, b: &Array<f64, D>) -> Result<Array<f64, D>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "hadamard shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a * b)
}

fn check_rank(a: ArrayView2<f64>, b: ArrayView2<f64>, c: ArrayView2<f64>) -> Result<usize> {
    let r = a.ncols();
    if b.ncols() != r || c.ncols() != r {
        return Err(Error::shape(format!(
            "CP factors disagree on rank: {}, {}, {}",
            r,
            b.ncols(),
            c.ncols()
        )));
    }
    Ok(r)
}

/// `x[i,j,k] = Σ_t w_t·a[i,t]·b[j,t]·c[k,t]`, weights defaulting to ones.
pub fn cp_reconstruct(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    c: ArrayView2<f64>,
    weights: Option<ArrayView1<f64>>,
) -> Result<Tensor3> {
    let r = check_rank(a, b, c)?;
    if let Some(w) = weights {
        if w.len() != r {
            return Err(Error::shape(format!("weights length {} != rank {r}", w.len())));
        }
    }
    let (n1, n2, n3) = (a.nrows(), b.nrows(), c.nrows());
    let mut out = Array3::zeros((n1, n2, n3));
    let mut scaled = Array1::zeros(r);
    for i in 0..n1 {
        for j in 0..n2 {
            for t in 0..r {
                let w = weights.map_or(1.0, |w| w[t]);
                scaled[t] = w * a[[i, t]] * b[[j, t]];
            }
            for k in 0..n3 {
                out[[i, j, k]] = scaled.dot(&c.row(k));
            }
        }
    }
    Ok(out)
}

/// Matricized tensor times Khatri–Rao product along `mode`, accumulated one
/// frontal slice at a time so the `(n_p·n_q) × r` Khatri–Rao matrix is never
/// built. Mode 1 equals `X₍₁₎·khatri_rao(C, B)`, mode 2 `X₍₂₎·khatri_rao(C, A)`,
/// mode 3 `X₍₃₎·khatri_rao(B, A)`.
pub fn mttkrp(
    x: ArrayView3<f64>,
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    c: ArrayView2<f64>,
    mode: Mode,
) -> Result<Mat> {
    let r = check_rank(a, b, c)?;
    let (n1, n2, n3) = x.dim();
    if a.nrows() != n1 || b.nrows() != n2 || c.nrows() != n3 {
        return Err(Error::shape(format!(
            "factor rows ({}, {}, {}) do not match tensor dims {:?}",
            a.nrows(),
            b.nrows(),
            c.nrows(),
            x.dim()
        )));
    }
    let out = match mode {
        Mode::One => {
            let mut m = Array2::zeros((n1, r));
            for k in 0..n3 {
                let p = x.slice(s![.., .., k]).dot(&b);
                Zip::from(&mut m)
                    .and(&p)
                    .and_broadcast(&c.row(k))
                    .for_each(|m, &p, &ck| *m += p * ck);
            }
            m
        }
        Mode::Two => {
            let mut m = Array2::zeros((n2, r));
            for k in 0..n3 {
                let p = x.slice(s![.., .., k]).t().dot(&a);
                Zip::from(&mut m)
                    .and(&p)
                    .and_broadcast(&c.row(k))
                    .for_each(|m, &p, &ck| *m += p * ck);
            }
            m
        }
        Mode::Three => {
            let mut m = Array2::zeros((n3, r));
            for k in 0..n3 {
                let p = x.slice(s![.., .., k]).dot(&b);
                for t in 0..r {
                    m[[k, t]] = p.column(t).dot(&a.column(t));
                }
            }
            m
        }
    };
    Ok(out)
}

/// Reference MTTKRP that materializes the unfolding and the Khatri–Rao product.
pub fn mttkrp_materialized(
    x: ArrayView3<f64>,
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    c: ArrayView2<f64>,
    mode: Mode,
) -> Result<Mat> {
    check_rank(a, b, c)?;
    let kr = match mode {
        Mode::One => khatri_rao(c, b)?,
        Mode::Two => khatri_rao(c, a)?,
        Mode::Three => khatri_rao(b, a)?,
    };
    let unfolded = unfold(x, mode);
    if unfolded.ncols() != kr.nrows() {
        return Err(Error::shape("factor rows do not match tensor dims"));
    }
    Ok(unfolded.dot(&kr))
}

/// `⟨x, a_t ⊗ b_t ⊗ c_t⟩` for every component `t`.
pub fn cp_inner_products(
    x: ArrayView3<f64>,
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    c: ArrayView2<f64>,
) -> Result<Array1<f64>> {
    let m = mttkrp(x, a, b, c, Mode::One)?;
    Ok(Array1::from_shape_fn(a.ncols(), |t| {
        m.column(t).dot(&a.column(t))
    }))
}

/// Mode-n product `x ×ₙ m`, where `m` has `x.dim(n)` columns.
pub fn mode_product(x: ArrayView3<f64>, m: ArrayView2<f64>, mode: Mode) -> Result<Tensor3> {
    let (n1, n2, n3) = x.dim();
    let n = match mode {
        Mode::One => n1,
        Mode::Two => n2,
        Mode::Three => n3,
    };
    if m.ncols() != n {
        return Err(Error::shape(format!(
            "mode product needs {} columns, got {}",
            n,
            m.ncols()
        )));
    }
    let dims = match mode {
        Mode::One => (m.nrows(), n2, n3),
        Mode::Two => (n1, m.nrows(), n3),
        Mode::Three => (n1, n2, m.nrows()),
    };
    let product = m.dot(&unfold(x, mode));
    fold(product.view(), mode, dims)
}

/// Squared Frobenius norm.
pub fn frobenius_sq<D: Dimension>(x: &Array<f64, D>) -> f64 {
    x.iter().map(|v| v * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn counting_tensor() -> Tensor3 {
        Array3::from_shape_fn((2, 2, 2), |(i, j, k)| (4 * i + 2 * j + k + 1) as f64)
    }

    #[test]
    fn mode_one_unfolding_fixture() {
        // Hand-enumerated: column j + 2k of row i holds 4i + 2j + k + 1.
        let m = unfold(counting_tensor().view(), Mode::One);
        assert_eq!(m, array![[1., 3., 2., 4.], [5., 7., 6., 8.]]);
    }

    #[test]
    fn mode_two_and_three_unfolding_fixtures() {
        let x = counting_tensor();
        assert_eq!(
            unfold(x.view(), Mode::Two),
            array![[1., 5., 2., 6.], [3., 7., 4., 8.]]
        );
        assert_eq!(
            unfold(x.view(), Mode::Three),
            array![[1., 5., 3., 7.], [2., 6., 4., 8.]]
        );
    }

    #[test]
    fn zero_tensor_unfolds_to_zero_matrix() {
        let x = Array3::<f64>::zeros((3, 4, 2));
        let m = unfold(x.view(), Mode::Two);
        assert_eq!(m.dim(), (4, 6));
        assert!(m.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fold_rejects_wrong_shape() {
        let m = Array2::<f64>::zeros((2, 3));
        assert!(fold(m.view(), Mode::One, (2, 2, 2)).is_err());
    }

    #[test]
    fn khatri_rao_fixtures() {
        let eye = Array2::<f64>::eye(2);
        let kr = khatri_rao(eye.view(), eye.view()).unwrap();
        assert_eq!(kr, array![[1., 0.], [0., 0.], [0., 0.], [0., 1.]]);

        let a = array![[1., 2.], [3., 4.]];
        let b = array![[0., 1.], [1., 0.]];
        let kr = khatri_rao(a.view(), b.view()).unwrap();
        assert_eq!(kr.column(0).to_vec(), vec![0., 1., 0., 3.]);
        assert_eq!(kr.column(1).to_vec(), vec![2., 0., 4., 0.]);

        let a1 = Array2::<f64>::ones((2, 1));
        assert!(khatri_rao(a1.view(), b.view()).is_err());
    }

    #[test]
    fn hadamard_fixtures() {
        let a = array![[1., 2.], [3., 4.]];
        assert_eq!(hadamard(&a, &Array2::ones((2, 2))).unwrap(), a);
        assert_eq!(
            hadamard(&a, &Array2::zeros((2, 2))).unwrap(),
            Array2::<f64>::zeros((2, 2))
        );
        assert_eq!(
            hadamard(&a, &array![[2., 0.], [1., 1.]]).unwrap(),
            array![[2., 0.], [3., 4.]]
        );
        assert!(hadamard(&a, &Array2::zeros((2, 3))).is_err());
    }

    #[test]
    fn rank_one_reconstruction() {
        let a = array![[1.], [2.]];
        let b = array![[1.], [0.]];
        let c = array![[1.], [1.]];
        let x = cp_reconstruct(a.view(), b.view(), c.view(), None).unwrap();
        assert_eq!(x[[1, 0, 1]], 2.0);
        assert_eq!(x[[1, 1, 1]], 0.0);

        let zero = Array1::zeros(1);
        let x = cp_reconstruct(a.view(), b.view(), c.view(), Some(zero.view())).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));

        let c2 = Array2::<f64>::ones((2, 2));
        assert!(cp_reconstruct(a.view(), b.view(), c2.view(), None).is_err());
    }

    #[test]
    fn mode_product_with_identity_is_noop() {
        let x = counting_tensor();
        let eye = Array2::<f64>::eye(2);
        for mode in Mode::ALL {
            assert_eq!(mode_product(x.view(), eye.view(), mode).unwrap(), x);
        }
    }

    #[test]
    fn mode_product_scales_first_mode() {
        let x = counting_tensor();
        let m = array![[2., 0.], [0., 0.5]];
        let y = mode_product(x.view(), m.view(), Mode::One).unwrap();
        assert_eq!(y[[0, 1, 1]], 2.0 * x[[0, 1, 1]]);
        assert_eq!(y[[1, 0, 1]], 0.5 * x[[1, 0, 1]]);
    }
}
