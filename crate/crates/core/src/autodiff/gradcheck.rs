//! Central finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` where the maximum occurred.
    pub worst: Option<(usize, usize)>,
    /// Smallest distance to a kink observed during the unperturbed forward.
    pub kink_margin: f64,
    /// Perturbed forwards that took a different branch at some relu, clamp
    /// or max-pool than the unperturbed one. Their differences are invalid.
    pub kink_crossings: usize,
    pub coordinates: usize,
}

impl GradCheck {
    pub fn crossed_kink(&self) -> bool {
        self.kink_crossings > 0
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Check `f` at `x` and return the maximum relative discrepancy.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let report = grad_check_all(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), step)?;
    Ok(report.max_rel_error)
}

/// Check a scalar function of several inputs against fourth-order central
/// differences at offsets `±step` and `±2 step`, perturbing every coordinate
/// of every input.
pub fn grad_check_all<F>(f: F, inputs: &[Tensor], step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        tape.track_kinks(true);
        let vars = inputs
            .iter()
            .map(|t| tape.param(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };

    let (mut tape, vars, out) = eval(inputs)?;
    tape.backward(out)?;
    let kink_margin = tape.kink_margin();
    let signature = tape.branch_signature();
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("inputs require grad"))
        .collect();
    drop(tape);

    let mut work = inputs.to_vec();
    let mut max_rel_error = 0.0;
    let mut worst = None;
    let mut coordinates = 0;
    let mut kink_crossings = 0;
    for (ti, grad) in analytic.iter().enumerate() {
        for i in 0..grad.numel() {
            let orig = work[ti].data()[i];
            let mut crossed = false;
            let mut values = [0.0; 4];
            for (v, offset) in values.iter_mut().zip([step, -step, 2.0 * step, -2.0 * step]) {
                work[ti].data_mut()[i] = orig + offset;
                let (t, _, o) = eval(&work)?;
                crossed |= t.branch_signature() != signature;
                *v = t.value(o).item()?;
            }
            work[ti].data_mut()[i] = orig;
            if crossed {
                kink_crossings += 1;
            }
            let [p1, m1, p2, m2] = values;

            // fourth-order central stencil
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step);
            let err = relative_error(grad.data()[i], numeric);
            if err > max_rel_error || worst.is_none() {
                max_rel_error = err;
                worst = Some((ti, i));
            }
            coordinates += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error,
        worst,
        kink_margin,
        kink_crossings,
        coordinates,
    })
}

/// Draw inputs with `sample(attempt)` until no perturbation of `step` moves
/// the forward pass across a kink, then report the check at that draw.
pub fn grad_check_resampled<S, F>(mut sample: S, f: F, step: f64, max_attempts: u32) -> Result<GradCheck>
where
    S: FnMut(u32) -> Vec<Tensor>,
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut last = None;
    for attempt in 0..max_attempts.max(1) {
        let inputs = sample(attempt);
        let report = grad_check_all(&f, &inputs, step)?;
        if !report.crossed_kink() {
            return Ok(report);
        }
        last = Some(report);
    }
    Ok(last.expect("at least one attempt"))
}
