use super::{Element, EngineError, Tape, Tensor, Var};

/// Compares the tape gradient of a scalar function against central finite
/// differences and returns the largest elementwise relative error, using
/// `max(|autodiff|, |numeric|, 1e-8)` as the denominator.
///
/// `f` must rebuild the same computation on every call; a function whose
/// output changes between two evaluations at the same point is rejected.
pub fn grad_check<T, F>(mut f: F, x: &Tensor<T>, h: f64) -> Result<f64, EngineError>
where
    T: Element,
    F: FnMut(&mut Tape<T>, Var) -> Result<Var, EngineError>,
{
    if h <= 0.0 || !h.is_finite() {
        return Err(EngineError::Parameter(format!("finite-difference step {h} must be positive")));
    }
    fn eval<T: Element, F>(f: &mut F, point: &Tensor<T>) -> Result<f64, EngineError>
    where
        F: FnMut(&mut Tape<T>, Var) -> Result<Var, EngineError>,
    {
        let mut tape = Tape::new();
        let v = tape.constant(point.clone());
        let out = f(&mut tape, v)?;
        if tape.value(out).numel() != 1 {
            return Err(EngineError::Contract("grad_check needs a scalar-valued function".into()));
        }
        Ok(tape.value(out).item().to_f64().unwrap_or(f64::NAN))
    }
    let f0 = eval(&mut f, x)?;
    if eval(&mut f, x)?.to_bits() != f0.to_bits() {
        return Err(EngineError::Contract("function is not deterministic (unseeded randomness?)".into()));
    }

    let mut tape = Tape::new();
    let v = tape.leaf(x.clone(), true);
    let out = f(&mut tape, v)?;
    let analytic = if tape.requires_grad(out) {
        tape.backward(out)?;
        tape.grad(v).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); x.numel()])
    } else {
        vec![T::zero(); x.numel()]
    };

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for (i, a) in analytic.iter().enumerate() {
        let orig = probe.data()[i];
        let (plus, minus) = (orig + T::of(h), orig - T::of(h));
        probe.data_mut()[i] = plus;
        let up = eval(&mut f, &probe)?;
        probe.data_mut()[i] = minus;
        let down = eval(&mut f, &probe)?;
        probe.data_mut()[i] = orig;
        // the step actually taken after rounding
        let span = (plus - minus).to_f64().unwrap_or(f64::NAN);
        let numeric = (up - down) / span;
        let a = a.to_f64().unwrap_or(f64::NAN);
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
