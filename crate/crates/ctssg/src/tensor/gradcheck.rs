//! Central finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

/// Worst-case comparison between tape gradients and central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over coordinates of |ad - fd| / max(1, |ad|, |fd|)
    pub max_rel_err: f64,
    /// (parameter index, element index) attaining the max
    pub worst: (usize, usize),
    pub coords_checked: usize,
}

/// Runs `f` once with reverse-mode gradients, then perturbs every
/// coordinate of every differentiable parameter by +-h and compares.
///
/// `f` must be a pure function of the supplied tensors; it is re-evaluated
/// 2 x (#coordinates) times, so keep the model small.
pub fn grad_check<F: Scalar>(
    f: &dyn Fn(&Tape<F>, &[Tensor<F>]) -> Result<Tensor<F>>,
    params: &[Tensor<F>],
    h: f64,
) -> Result<GradCheckReport> {
    if h <= 0.0 {
        return Err(Error::validation(format!("grad_check: step {h} <= 0")));
    }
    let tape = Tape::new();
    let loss = f(&tape, params)?;
    if loss.len() != 1 {
        return Err(Error::dimension(format!(
            "grad_check: f returned shape {:?}, expected a scalar",
            loss.shape()
        )));
    }
    let store = tape.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| match store.grad_slice(p) {
            Some(buf) => buf.iter().map(|v| v.to_f64()).collect(),
            None => vec![0.0; p.len()],
        })
        .collect();
    drop(store);
    tape.clear();

    let eval = |ps: &[Tensor<F>]| -> Result<f64> {
        let tape = Tape::new();
        let out = f(&tape, ps)?;
        let v = out.scalar_value()?.to_f64();
        if !v.is_finite() {
            return Err(Error::numeric(format!(
                "grad_check: objective is {v} at a perturbed point"
            )));
        }
        Ok(v)
    };

    let mut max_rel_err = 0.0f64;
    let mut worst = (0usize, 0usize);
    let mut coords = 0usize;
    for (pi, p) in params.iter().enumerate() {
        if !p.requires_grad() {
            continue;
        }
        for e in 0..p.len() {
            let base = p.data()[e].to_f64();
            let mut plus = params.to_vec();
            let mut data = p.data().to_vec();
            data[e] = F::from_f64(base + h);
            plus[pi] = p.with_data(data)?;
            let lp = eval(&plus)?;

            let mut minus = params.to_vec();
            let mut data = p.data().to_vec();
            data[e] = F::from_f64(base - h);
            minus[pi] = p.with_data(data)?;
            let lm = eval(&minus)?;

            let fd = (lp - lm) / (2.0 * h);
            let ad = analytic[pi][e];
            let rel = (ad - fd).abs() / 1.0f64.max(ad.abs()).max(fd.abs());
            if rel > max_rel_err {
                max_rel_err = rel;
                worst = (pi, e);
            }
            coords += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        worst,
        coords_checked: coords,
    })
}
