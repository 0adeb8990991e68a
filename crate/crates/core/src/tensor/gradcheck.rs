//! Central finite-difference gradient checks against the tape.

use super::{Bound, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Agreement between analytic and numeric gradients for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub entries: usize,
    pub max_abs_error: f64,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`, zero when both vanish.
    pub rel_error: f64,
    /// Both gradient norms sit below [`VANISHING_NORM`], where a relative
    /// error only measures finite-difference round-off.
    pub vanishing: bool,
}

pub const VANISHING_NORM: f64 = 1e-8;
pub const VANISHING_ABS_TOL: f64 = 1e-9;

impl GradCheck {
    /// Relative agreement within `tol`, or absolute agreement for vanishing gradients.
    pub fn passes(&self, tol: f64) -> bool {
        if self.vanishing {
            self.max_abs_error < VANISHING_ABS_TOL
        } else {
            self.rel_error < tol
        }
    }
}

fn compare(name: String, analytic: &[f64], numeric: &[f64]) -> GradCheck {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    GradCheck {
        name,
        entries: analytic.len(),
        max_abs_error: diff.iter().fold(0.0, |m, d| m.max(d.abs())),
        rel_error: if scale == 0.0 { 0.0 } else { norm(&diff) / scale },
        vanishing: scale < VANISHING_NORM,
    }
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    if tape.shape(v).iter().product::<usize>() != 1 {
        return Err(Error::Dimension(format!("gradient check needs a scalar loss, got {:?}", tape.shape(v))));
    }
    Ok(tape.value(v)[0])
}

/// Check d loss / d parameter for every parameter tensor of `store`.
pub fn check_parameters(
    store: &ParamStore,
    step: f64,
    loss: impl Fn(&mut Tape, &Bound) -> Result<Var>,
) -> Result<Vec<GradCheck>> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, true);
    let out = loss(&mut tape, &bound)?;
    scalar_of(&tape, out)?;
    let grads = tape.backward(out)?;
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = s.bind(&mut tape, false);
        let out = loss(&mut tape, &bound)?;
        scalar_of(&tape, out)
    };
    let mut work = store.clone();
    let mut report = Vec::with_capacity(store.len());
    for (i, name) in store.names().iter().enumerate() {
        let n = store.tensors()[i].numel();
        let analytic = grads.get(bound.vars()[i]).map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
        let mut numeric = Vec::with_capacity(n);
        for j in 0..n {
            let orig = work.tensors()[i].data()[j];
            work.tensors_mut()[i].data_mut()[j] = orig + step;
            let up = eval(&work)?;
            work.tensors_mut()[i].data_mut()[j] = orig - step;
            let down = eval(&work)?;
            work.tensors_mut()[i].data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * step));
        }
        report.push(compare(name.clone(), &analytic, &numeric));
    }
    Ok(report)
}

/// Check d loss / d input for every input tensor.
pub fn check_inputs(
    inputs: &[Tensor],
    step: f64,
    loss: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<Vec<GradCheck>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let out = loss(&mut tape, &vars)?;
    scalar_of(&tape, out)?;
    let grads = tape.backward(out)?;
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.param(t)).collect();
        let out = loss(&mut tape, &vars)?;
        scalar_of(&tape, out)
    };
    let mut work = inputs.to_vec();
    let mut report = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let n = inputs[i].numel();
        let analytic = grads.get(vars[i]).map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
        let mut numeric = Vec::with_capacity(n);
        for j in 0..n {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * step));
        }
        report.push(compare(format!("input {i}"), &analytic, &numeric));
    }
    Ok(report)
}

/// Largest relative error among non-vanishing gradients.
pub fn worst(report: &[GradCheck]) -> f64 {
    report.iter().filter(|c| !c.vanishing).fold(0.0, |m, c| m.max(c.rel_error))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Linear;

    #[test]
    fn linear_layer_passes() {
        let mut store = ParamStore::new(3);
        let lin = Linear::new(&mut store, "lin", 3, 2);
        let x = Tensor::new(&[4, 3], (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let report = check_parameters(&store, 1e-5, |tape, p| {
            let xv = tape.leaf(&x);
            let y = lin.forward(tape, p, xv)?;
            let sq = tape.mul(y, y)?;
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert_eq!(report.len(), 2);
        assert!(worst(&report) < 1e-8, "{report:?}");
        assert!(report.iter().all(|c| c.passes(1e-8) && !c.vanishing));
    }

    #[test]
    fn wrong_gradient_is_detected() {
        // relu at exactly zero: numeric derivative 0.5, analytic 0 or 1.
        let x = Tensor::from_vec(vec![0.0]);
        let report = check_inputs(&[x], 1e-5, |tape, v| Ok(tape.relu(v[0]))).unwrap();
        assert!(worst(&report) > 0.1);
        assert!(!report[0].passes(1e-5));
    }

    #[test]
    fn shift_invariant_direction_is_vanishing() {
        // softmax(x + b) does not depend on a shared shift b.
        let x = Tensor::new(&[1, 4], vec![0.3, -1.2, 2.0, 0.1]).unwrap();
        let b = Tensor::new(&[1, 1], vec![0.7]).unwrap();
        let report = check_inputs(&[x, b], 1e-5, |tape, v| {
            let ones = tape.constant(&[1, 4], vec![1.0; 4])?;
            let shift = tape.matmul(v[1], ones)?;
            let z = tape.add(v[0], shift)?;
            let p = tape.softmax(z)?;
            let w = tape.constant(&[1, 4], vec![1.0, 2.0, 3.0, 4.0])?;
            let q = tape.mul(p, w)?;
            Ok(tape.sum(q))
        })
        .unwrap();
        assert!(!report[0].vanishing && report[0].passes(1e-6));
        assert!(report[1].vanishing && report[1].passes(1e-6), "{:?}", report[1]);
    }
}
