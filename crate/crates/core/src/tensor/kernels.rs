use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub(crate) fn check_matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, b_trans: bool) -> Result<()> {
    let inner_b = if b_trans { b.cols() } else { b.rows() };
    if a.cols() != inner_b {
        return Err(Error::Shape(format!(
            "matmul {:?} x {:?}{}: inner dimensions differ",
            a.shape(),
            b.shape(),
            if b_trans { "ᵀ" } else { "" }
        )));
    }
    Ok(())
}

pub(crate) fn transpose<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let (r, c) = (a.rows(), a.cols());
    let src = a.data();
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out).expect("transpose preserves element count")
}

/// Row-wise softmax of `logits + mask`.
///
/// Mask entries must be `0` or `-inf`. Masked positions come out as exactly `0`.
pub fn softmax_masked<T: Scalar>(logits: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    softmax_rows(logits, Some(mask))
}

pub(crate) fn softmax_rows<T: Scalar>(logits: &Tensor<T>, mask: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (rows, cols) = (logits.rows(), logits.cols());
    if let Some(m) = mask {
        if m.rows() != rows || m.cols() != cols {
            return Err(Error::Shape(format!(
                "mask {:?} does not match logits {:?}",
                m.shape(),
                logits.shape()
            )));
        }
        if let Some(bad) = m.data().iter().find(|&&x| !(x == T::zero() || x == T::neg_infinity())) {
            return Err(Error::Contract(format!("mask entry {bad} is neither 0 nor -inf")));
        }
    }
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        let src = logits.row(r);
        let dst = &mut out[r * cols..(r + 1) * cols];
        for c in 0..cols {
            dst[c] = match mask {
                Some(m) => src[c] + m.data()[r * cols + c],
                None => src[c],
            };
        }
        let max = dst.iter().copied().fold(T::neg_infinity(), T::max);
        if max == T::neg_infinity() {
            return Err(Error::DegenerateRow { row: r });
        }
        let mut total = T::zero();
        for v in dst.iter_mut() {
            // exp(-inf) is exactly 0.
            *v = (*v - max).exp();
            total += *v;
        }
        let inv = T::one() / total;
        for v in dst.iter_mut() {
            *v = *v * inv;
        }
    }
    Tensor::new(logits.shape().to_vec(), out)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x)
}

pub(crate) const LN_EPS: f64 = 1e-5;

/// Layer norm over columns. Returns (output, normalized input, 1/std per row).
pub(crate) fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (rows, cols) = (x.rows(), x.cols());
    let n = T::of(cols as f64);
    let eps = T::of(LN_EPS);
    let mut out = vec![T::zero(); rows * cols];
    let mut xhat = vec![T::zero(); rows * cols];
    let mut inv_std = vec![T::zero(); rows];
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let is = T::one() / (var + eps).sqrt();
        inv_std[r] = is;
        for c in 0..cols {
            let h = (row[c] - mean) * is;
            xhat[r * cols + c] = h;
            out[r * cols + c] = h * gamma[c] + beta[c];
        }
    }
    (out, xhat, inv_std)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let l = Tensor::<f64>::zeros(&[1, 4]);
        let m = Tensor::<f64>::zeros(&[1, 4]);
        let p = softmax_masked(&l, &m).unwrap();
        assert!(p.data().iter().all(|&x| (x - 0.25).abs() < 1e-12));

        let l = Tensor::<f64>::zeros(&[1, 2]);
        let m = Tensor::<f64>::from_rows(&[&[0.0, f64::NEG_INFINITY]]).unwrap();
        assert_eq!(softmax_masked(&l, &m).unwrap().data(), &[1.0, 0.0]);

        let l = Tensor::<f64>::from_rows(&[&[1.0, 2.0, 3.0]]).unwrap();
        let m = Tensor::<f64>::from_rows(&[&[0.0, 0.0, f64::NEG_INFINITY]]).unwrap();
        let p = softmax_masked(&l, &m).unwrap();
        let e = std::f64::consts::E;
        let expect = [1.0 / (1.0 + e), e / (1.0 + e), 0.0];
        for (a, b) in p.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(p.data()[2].to_bits(), 0.0f64.to_bits());
    }

    #[test]
    fn fully_masked_row_is_an_error() {
        let l = Tensor::<f32>::zeros(&[2, 2]);
        let m = Tensor::<f32>::from_rows(&[&[0.0, 0.0], &[f64::NEG_INFINITY, f64::NEG_INFINITY]]).unwrap();
        assert!(matches!(softmax_masked(&l, &m), Err(Error::DegenerateRow { row: 1 })));
    }

    #[test]
    fn mask_values_are_validated() {
        let l = Tensor::<f32>::zeros(&[1, 2]);
        let m = Tensor::<f32>::from_rows(&[&[0.0, -1e9]]).unwrap();
        assert!(matches!(softmax_masked(&l, &m), Err(Error::Contract(_))));
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "{x}");
        }
    }
}
