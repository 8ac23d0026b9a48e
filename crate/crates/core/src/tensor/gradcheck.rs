use super::{Result, Tape, Tensor, TensorError, Var};

/// Denominator floor for the relative error, so that near-zero gradients are
/// compared on an absolute scale instead of amplifying round-off.
const REL_FLOOR: f64 = 1e-3;

/// Compares reverse-mode gradients of a scalar function against central
/// differences `(f(x+h) - f(x-h)) / 2h`, coordinate by coordinate.
///
/// Returns the largest relative error `|a - n| / max(|a|, |n|, 1e-3)`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone().requires_grad(true));
    let out = f(&mut tape, xv)?;
    if tape.value(out).numel() != 1 {
        return Err(TensorError::NotScalar(tape.shape(out).to_vec()));
    }
    tape.backward(out)?;
    let analytic = tape
        .grad(xv)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let eval = |t: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(t);
        let out = f(&mut tape, v)?;
        Ok(tape.value(out).data()[0])
    };

    let mut worst = 0.0f64;
    for (i, a) in analytic.iter().enumerate() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max(err);
    }
    Ok(worst)
}
