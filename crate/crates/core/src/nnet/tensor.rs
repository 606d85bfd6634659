//! Dense n-dimensional array with an optional gradient slot.

use crate::error::{Error, Result};

use super::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Tensor<S: Scalar> {
    shape: Vec<usize>,
    data: Vec<S>,
    grad: Option<Vec<S>>,
    requires_grad: bool,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::ZERO; n],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::shape(
                "Tensor::from_vec",
                format!("{n} values for shape {shape:?}"),
                format!("{}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
            requires_grad: false,
        })
    }

    /// A trainable parameter: gradient slot allocated, requires_grad set.
    pub fn param(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let mut t = Self::from_vec(shape, data)?;
        t.requires_grad = true;
        t.grad = Some(vec![S::ZERO; t.data.len()]);
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated to zeros on first use.
    pub fn grad_mut(&mut self) -> &mut [S] {
        if self.grad.is_none() {
            self.grad = Some(vec![S::ZERO; self.data.len()]);
        }
        self.grad.as_mut().unwrap()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = S::ZERO);
        }
    }

    /// Replace contents, keeping the shape.
    pub fn copy_from(&mut self, values: &[S]) -> Result<()> {
        if values.len() != self.data.len() {
            return Err(Error::shape(
                "Tensor::copy_from",
                format!("{}", self.data.len()),
                format!("{}", values.len()),
            ));
        }
        self.data.copy_from_slice(values);
        Ok(())
    }

    /// Error if any entry is NaN or infinite. `context` names the producing
    /// layer; the message carries the flat index and, when `row_width` is
    /// given, the row (frame) it falls in.
    pub fn check_finite(&self, context: &str, row_width: Option<usize>) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                let mut detail = format!("non-finite value at flat index {i}");
                if let Some(w) = row_width.filter(|&w| w > 0) {
                    detail = format!("{detail} (frame {})", i / w);
                }
                return Err(Error::NumericFault {
                    context: context.to_string(),
                    detail,
                });
            }
        }
        Ok(())
    }
}

/// Row-major matrix product helper: C[m,n] = A od B with optional transposes
/// interpreted as in [`Scalar::gemm`].
#[allow(clippy::too_many_arguments)]
pub fn matmul<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    ta: bool,
    b: &[S],
    tb: bool,
    beta_one: bool,
    c: &mut [S],
) {
    let beta = if beta_one { S::ONE } else { S::ZERO };
    S::gemm(m, k, n, S::ONE, a, ta, b, tb, beta, c);
}

/// y (+)= A[m,k] x. Hand-rolled with split accumulators; the GEMM backend
/// pays packing overhead that dominates at vector width one, and recurrent
/// nets issue this every frame.
pub fn matvec<S: Scalar>(m: usize, k: usize, a: &[S], x: &[S], accumulate: bool, y: &mut [S]) {
    debug_assert!(a.len() >= m * k && x.len() >= k && y.len() >= m);
    for i in 0..m {
        let row = &a[i * k..(i + 1) * k];
        let mut acc0 = S::ZERO;
        let mut acc1 = S::ZERO;
        let mut acc2 = S::ZERO;
        let mut acc3 = S::ZERO;
        let chunks = k / 4;
        for c in 0..chunks {
            let j = 4 * c;
            acc0 += row[j] * x[j];
            acc1 += row[j + 1] * x[j + 1];
            acc2 += row[j + 2] * x[j + 2];
            acc3 += row[j + 3] * x[j + 3];
        }
        let mut acc = (acc0 + acc1) + (acc2 + acc3);
        for j in 4 * chunks..k {
            acc += row[j] * x[j];
        }
        y[i] = if accumulate { y[i] + acc } else { acc };
    }
}

/// y = A^T x for row-major A[m,k], i.e. y[j] = sum_i A[i,j] x[i].
pub fn matvec_t<S: Scalar>(m: usize, k: usize, a: &[S], x: &[S], y: &mut [S]) {
    debug_assert!(a.len() >= m * k && x.len() >= m && y.len() >= k);
    y[..k].iter_mut().for_each(|v| *v = S::ZERO);
    for i in 0..m {
        let row = &a[i * k..(i + 1) * k];
        let xi = x[i];
        for j in 0..k {
            y[j] += xi * row[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_allocates_grad() {
        let t = Tensor::<f32>::param(&[2, 3], vec![0.0; 6]).unwrap();
        assert!(t.requires_grad());
        assert_eq!(t.grad().unwrap().len(), 6);
    }

    #[test]
    fn from_vec_validates_length() {
        assert!(Tensor::<f32>::from_vec(&[2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn check_finite_reports_frame() {
        let mut t = Tensor::<f32>::zeros(&[4, 3]);
        t.data_mut()[7] = f32::NAN;
        let err = t.check_finite("lstm.layer0", Some(3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("lstm.layer0"), "{msg}");
        assert!(msg.contains("frame 2"), "{msg}");
    }
}
