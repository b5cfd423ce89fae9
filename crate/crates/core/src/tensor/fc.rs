use super::{debug_check_finite, gemm, Scalar, Tensor, Trans};
use crate::error::{Error, Result};

fn fc_dims<T: Scalar>(x: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, d) = x.dims2();
    let [wd, o] = *weights.shape() else {
        return Err(Error::Dimension(format!(
            "fc weights must be rank 2 (inputs x outputs), got {:?}",
            weights.shape()
        )));
    };
    if wd != d {
        return Err(Error::Dimension(format!(
            "fc input length {d} does not match {wd} weight rows"
        )));
    }
    if bias.len() != o {
        return Err(Error::Dimension(format!(
            "fc bias has {} entries for {o} outputs",
            bias.len()
        )));
    }
    Ok((n, d, o))
}

/// Affine map `y = x W + b`; `x` is flattened to `n x d`, `W` is `d x o`.
pub fn fc_forward<T: Scalar>(x: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d, o) = fc_dims(x, weights, bias)?;
    let mut y = Tensor::zeros(&[n, o]);
    for row in y.data_mut().chunks_mut(o) {
        row.copy_from_slice(bias.data());
    }
    gemm(
        Trans::No,
        Trans::No,
        n,
        o,
        d,
        T::ONE,
        x.data(),
        weights.data(),
        T::ONE,
        y.data_mut(),
    );
    debug_check_finite(&y, "fc_forward");
    Ok(y)
}

/// Gradients of the affine map: `(d input, d weights, d bias)`. The input
/// gradient has the (possibly unflattened) shape of `x`.
pub fn fc_backward<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, d, o) = fc_dims(x, weights, bias)?;
    if dy.shape() != [n, o] {
        return Err(Error::Dimension(format!(
            "fc upstream gradient {:?} does not match [{n}, {o}]",
            dy.shape()
        )));
    }
    let mut dw = Tensor::zeros(&[d, o]);
    gemm(
        Trans::Yes,
        Trans::No,
        d,
        o,
        n,
        T::ONE,
        x.data(),
        dy.data(),
        T::ZERO,
        dw.data_mut(),
    );
    let mut db = Tensor::zeros(&[o]);
    for row in dy.data().chunks(o) {
        for (a, &g) in db.data_mut().iter_mut().zip(row) {
            *a += g;
        }
    }
    let mut dx = Tensor::zeros(x.shape());
    gemm(
        Trans::No,
        Trans::Yes,
        n,
        d,
        o,
        T::ONE,
        dy.data(),
        weights.data(),
        T::ZERO,
        dx.data_mut(),
    );
    Ok((dx, dw, db))
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    relu_inplace(&mut y);
    y
}

pub fn relu_inplace<T: Scalar>(x: &mut Tensor<T>) {
    for v in x.data_mut() {
        if *v < T::ZERO {
            *v = T::ZERO;
        }
    }
}

/// Pass the gradient where the forward output was positive.
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if y.len() != dy.len() {
        return Err(Error::Dimension(format!(
            "relu gradient {:?} does not match activation {:?}",
            dy.shape(),
            y.shape()
        )));
    }
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&a, &g)| if a > T::ZERO { g } else { T::ZERO })
        .collect();
    Tensor::from_vec(dy.shape(), data)
}
