use candle_core::{DType, Tensor, Var};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct TensorGradError {
    pub name: String,
    pub checked: usize,
    pub analytic_norm: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tensors: Vec<TensorGradError>,
}

/// Norm floor of the relative error. Central differences resolve a gradient
/// only to about `|L| * machine_eps / eps` (~1e-10 at eps 1e-6), so below the
/// floor the comparison is absolute: error 1e-4 means `|diff| <= 1e-9`.
const NORM_FLOOR: f64 = 1e-5;

fn scalar(t: &Tensor) -> Result<f64> {
    let v = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    match v.as_slice() {
        [x] if x.is_finite() => Ok(*x),
        [x] => Err(Error::Numerical(format!("loss is {x}"))),
        _ => Err(Error::Shape(format!("loss must be a scalar, got {} values", v.len()))),
    }
}

/// Compares backprop gradients of `loss` against central differences for
/// each target variable. Up to `max_per_tensor` entries per tensor are
/// perturbed, evenly spaced. The error of a tensor is
/// `|g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|, floor)` over the
/// checked entries (Euclidean norms); the report's maximum is over tensors.
pub fn check_gradients(
    targets: &[(String, Var)],
    loss: &dyn Fn() -> Result<Tensor>,
    eps: f64,
    max_per_tensor: usize,
) -> Result<GradCheckReport> {
    let l = loss()?;
    scalar(&l)?;
    let grads = l.backward()?;
    let mut out = Vec::with_capacity(targets.len());
    for (name, var) in targets {
        let base = var.as_tensor().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        let analytic = match grads.get(var.as_tensor()) {
            Some(g) => g.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?,
            None => vec![0.0; base.len()],
        };
        let n = base.len();
        let count = n.min(max_per_tensor.max(1));
        let idx: Vec<usize> = (0..count).map(|i| i * n / count).collect();
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        let set = |vals: &[f64]| -> Result<()> {
            let t = Tensor::from_vec(vals.to_vec(), var.dims(), var.device())?.to_dtype(var.dtype())?;
            var.set(&t)?;
            Ok(())
        };
        let mut work = base.clone();
        for &i in &idx {
            work[i] = base[i] + eps;
            set(&work)?;
            let lp = scalar(&loss()?)?;
            work[i] = base[i] - eps;
            set(&work)?;
            let lm = scalar(&loss()?)?;
            work[i] = base[i];
            let numeric = (lp - lm) / (2.0 * eps);
            diff += (analytic[i] - numeric).powi(2);
            na += analytic[i].powi(2);
            nn += numeric.powi(2);
        }
        set(&base)?;
        let rel = diff.sqrt() / na.sqrt().max(nn.sqrt()).max(NORM_FLOOR);
        out.push(TensorGradError {
            name: name.clone(),
            checked: idx.len(),
            analytic_norm: na.sqrt(),
            rel_error: rel,
        });
    }
    Ok(GradCheckReport {
        max_rel_error: out.iter().map(|t| t.rel_error).fold(0.0, f64::max),
        tensors: out,
    })
}
