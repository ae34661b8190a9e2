//! Central finite-difference gradient checking.

use crate::data::Batch;
use crate::error::Result;
use crate::model::MtlModel;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Max over coordinates of `|analytic - fd| / max(1, |analytic|)` where `fd`
/// is the central difference `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps`.
///
/// `program` records a scalar function of its input leaf on the given tape.
pub fn grad_check<F>(program: F, point: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let y = program(&mut tape, x)?;
    let analytic = tape.backward(y)?.get_or_zeros(x, point.shape());

    let eval = |p: Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(p);
        let y = program(&mut tape, x)?;
        Ok(tape.value(y).item())
    };

    let mut worst = 0.0f64;
    for i in 0..point.numel() {
        let mut plus = point.clone();
        plus.data_mut()[i] += eps;
        let mut minus = point.clone();
        minus.data_mut()[i] -= eps;
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        worst = worst.max((a - fd).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

fn total_loss(model: &MtlModel<f64>, batch: &Batch<f64>) -> Result<f64> {
    let pass = model.record_losses(batch)?;
    Ok(pass.rec.tape.value(pass.total).item())
}

/// Same error measure as [`grad_check`], over the total multi-task loss with
/// respect to model parameters. `stride` > 1 checks every `stride`-th
/// coordinate of each parameter tensor (always including the first).
pub fn model_grad_check(model: &MtlModel<f64>, batch: &Batch<f64>, eps: f64, stride: usize) -> Result<f64> {
    let (_, grads) = model.total_gradients(batch)?;
    let mut worst = 0.0f64;
    let mut probe = model.clone();
    for (p, g) in grads.iter().enumerate() {
        for i in (0..g.numel()).step_by(stride.max(1)) {
            let orig = probe.params()[p].data()[i];
            probe.params_mut()[p].data_mut()[i] = orig + eps;
            let plus = total_loss(&probe, batch)?;
            probe.params_mut()[p].data_mut()[i] = orig - eps;
            let minus = total_loss(&probe, batch)?;
            probe.params_mut()[p].data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let a = g.data()[i];
            worst = worst.max((a - fd).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_to_truncation() {
        let p = Tensor::from_f64(&[4], &[0.3, -1.2, 2.5, 0.01]).unwrap();
        let err = grad_check(
            |t, x| {
                let sq = t.mul(x, x)?;
                Ok(t.sum(sq))
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn linear_is_exact() {
        let p = Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap();
        let c = Tensor::from_f64(&[3], &[0.7, 3.0, -1.1]).unwrap();
        let err = grad_check(
            |t, x| {
                let cv = t.constant(c.clone());
                let m = t.mul(x, cv)?;
                Ok(t.sum(m))
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-10, "{err}");
    }
}
