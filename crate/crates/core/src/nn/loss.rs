use super::Tensor;
use crate::error::{Error, Result};

/// Mean squared error of an `n x d` prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct MseLoss {
    /// Mean over the batch of the squared error, per output column.
    pub per_dim: Vec<f64>,
    /// Sum of `per_dim`: the scalar that training minimises.
    pub total: f64,
    /// Gradient of `total` with respect to the prediction.
    pub grad: Tensor,
}

pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<MseLoss> {
    if pred.shape() != target.shape() || pred.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "mse needs matching n x d tensors, got {:?} and {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let (n, d) = (pred.shape()[0], pred.shape()[1]);
    if n == 0 {
        return Err(Error::Empty("mse over an empty batch"));
    }
    let mut per_dim = vec![0.0; d];
    let mut grad = vec![0.0; n * d];
    for (i, (p, t)) in pred.data().iter().zip(target.data()).enumerate() {
        let e = p - t;
        per_dim[i % d] += e * e;
        grad[i] = 2.0 * e / n as f64;
    }
    per_dim.iter_mut().for_each(|v| *v /= n as f64);
    Ok(MseLoss {
        total: per_dim.iter().sum(),
        per_dim,
        grad: Tensor::new(vec![n, d], grad)?,
    })
}
