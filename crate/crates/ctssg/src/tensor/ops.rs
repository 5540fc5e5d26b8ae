//! Differentiable operations, recorded on a [`Tape`].
//!
//! Each op validates shapes, computes the forward result, and (when any
//! input is differentiable) records a closure that scatters the output
//! gradient into the inputs. Backward accumulation iterates in fixed
//! order, never in parallel, so results are bit-reproducible.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tape, Tensor};

const INV_SQRT_2PI: f64 = 0.3989422804014326779399461;

/// out[m x n] = a[m x k] * b[k x n]
pub(crate) fn mm_nn<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::ZERO; m * n];
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        let or = &mut out[i * n..(i + 1) * n];
        for (p, &av) in ar.iter().enumerate() {
            let br = &b[p * n..(p + 1) * n];
            for j in 0..n {
                or[j] += av * br[j];
            }
        }
    }
    out
}

/// out[m x k] += g[m x n] * b^T, with b stored [k x n]
fn acc_mm_nt<F: Scalar>(out: &mut [F], g: &[F], b: &[F], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let gr = &g[i * n..(i + 1) * n];
        let or = &mut out[i * k..(i + 1) * k];
        for p in 0..k {
            let br = &b[p * n..(p + 1) * n];
            let mut s = F::ZERO;
            for j in 0..n {
                s += gr[j] * br[j];
            }
            or[p] += s;
        }
    }
}

/// out[k x n] += a^T * g, with a stored [m x k], g stored [m x n]
fn acc_mm_tn<F: Scalar>(out: &mut [F], a: &[F], g: &[F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        let gr = &g[i * n..(i + 1) * n];
        for (p, &av) in ar.iter().enumerate() {
            let or = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                or[j] += av * gr[j];
            }
        }
    }
}

fn same_shape<F: Scalar>(op: &str, a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dimension(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl<F: Scalar> Tape<F> {
    fn emit(
        &self,
        shape: Vec<usize>,
        data: Vec<F>,
        requires_grad: bool,
        backward: impl Fn(&[F], &mut super::tape::GradStore<F>) + 'static,
    ) -> Tensor<F> {
        let out = Tensor::from_parts(shape, Arc::new(data), requires_grad);
        if requires_grad {
            self.record(out.id(), Box::new(backward));
        }
        out
    }

    /// Elementwise sum.
    pub fn add(&self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        same_shape("add", a, b)?;
        let data: Vec<F> = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        let (aid, bid) = (a.id(), b.id());
        let (arg, brg) = (a.requires_grad(), b.requires_grad());
        let len = a.len();
        Ok(self.emit(a.shape().to_vec(), data, arg || brg, move |g, store| {
            if arg {
                let buf = store.accum(aid, len);
                for (o, &gv) in buf.iter_mut().zip(g) {
                    *o += gv;
                }
            }
            if brg {
                let buf = store.accum(bid, len);
                for (o, &gv) in buf.iter_mut().zip(g) {
                    *o += gv;
                }
            }
        }))
    }

    /// Elementwise difference a - b.
    pub fn sub(&self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        same_shape("sub", a, b)?;
        let data: Vec<F> = a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect();
        let (aid, bid) = (a.id(), b.id());
        let (arg, brg) = (a.requires_grad(), b.requires_grad());
        let len = a.len();
        Ok(self.emit(a.shape().to_vec(), data, arg || brg, move |g, store| {
            if arg {
                let buf = store.accum(aid, len);
                for (o, &gv) in buf.iter_mut().zip(g) {
                    *o += gv;
                }
            }
            if brg {
                let buf = store.accum(bid, len);
                for (o, &gv) in buf.iter_mut().zip(g) {
                    *o -= gv;
                }
            }
        }))
    }

    /// Hadamard product.
    pub fn mul(&self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        same_shape("mul", a, b)?;
        let data: Vec<F> = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
        let (aid, bid) = (a.id(), b.id());
        let (arg, brg) = (a.requires_grad(), b.requires_grad());
        let (ad, bd) = (a.data_arc().clone(), b.data_arc().clone());
        let len = a.len();
        Ok(self.emit(a.shape().to_vec(), data, arg || brg, move |g, store| {
            if arg {
                let buf = store.accum(aid, len);
                for i in 0..len {
                    buf[i] += g[i] * bd[i];
                }
            }
            if brg {
                let buf = store.accum(bid, len);
                for i in 0..len {
                    buf[i] += g[i] * ad[i];
                }
            }
        }))
    }

    /// Multiplication by a compile-time constant (no gradient for `c`).
    pub fn scale(&self, a: &Tensor<F>, c: F) -> Result<Tensor<F>> {
        let data: Vec<F> = a.data().iter().map(|&x| x * c).collect();
        let aid = a.id();
        let arg = a.requires_grad();
        let len = a.len();
        Ok(self.emit(a.shape().to_vec(), data, arg, move |g, store| {
            let buf = store.accum(aid, len);
            for i in 0..len {
                buf[i] += g[i] * c;
            }
        }))
    }

    /// Adds a length-d bias to the last axis of `x`.
    pub fn add_bias(&self, x: &Tensor<F>, bias: &Tensor<F>) -> Result<Tensor<F>> {
        if x.rank() < 1 || bias.rank() != 1 {
            return Err(Error::dimension(format!(
                "add_bias: input rank {} / bias rank {}",
                x.rank(),
                bias.rank()
            )));
        }
        let d = *x.shape().last().unwrap();
        if bias.len() != d {
            return Err(Error::dimension(format!(
                "add_bias: last axis {} vs bias length {}",
                d,
                bias.len()
            )));
        }
        let rows = x.len() / d;
        let bd = bias.data_arc().clone();
        let mut data = x.data().to_vec();
        for r in 0..rows {
            let row = &mut data[r * d..(r + 1) * d];
            for j in 0..d {
                row[j] += bd[j];
            }
        }
        let (xid, bid) = (x.id(), bias.id());
        let (xrg, brg) = (x.requires_grad(), bias.requires_grad());
        let xlen = x.len();
        Ok(self.emit(x.shape().to_vec(), data, xrg || brg, move |g, store| {
            if xrg {
                let buf = store.accum(xid, xlen);
                for i in 0..xlen {
                    buf[i] += g[i];
                }
            }
            if brg {
                let buf = store.accum(bid, d);
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    for j in 0..d {
                        buf[j] += gr[j];
                    }
                }
            }
        }))
    }

    /// Strict rank-2 matrix product.
    pub fn matmul(&self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        if a.rank() != 2 || b.rank() != 2 {
            return Err(Error::dimension(format!(
                "matmul: expects rank-2 inputs, got {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let (k2, n) = (b.shape()[0], b.shape()[1]);
        if k != k2 {
            return Err(Error::dimension(format!(
                "matmul: inner axes {} and {} differ",
                k, k2
            )));
        }
        let data = mm_nn(a.data(), b.data(), m, k, n);
        let (aid, bid) = (a.id(), b.id());
        let (arg, brg) = (a.requires_grad(), b.requires_grad());
        let (ad, bd) = (a.data_arc().clone(), b.data_arc().clone());
        Ok(self.emit(vec![m, n], data, arg || brg, move |g, store| {
            if arg {
                let buf = store.accum(aid, m * k);
                acc_mm_nt(buf, g, &bd, m, n, k);
            }
            if brg {
                let buf = store.accum(bid, k * n);
                acc_mm_tn(buf, &ad, g, m, k, n);
            }
        }))
    }

    /// Same values viewed under a new shape; shares the buffer.
    pub fn reshape(&self, x: &Tensor<F>, shape: Vec<usize>) -> Result<Tensor<F>> {
        if numel(&shape) != x.len() {
            return Err(Error::dimension(format!(
                "reshape: {:?} ({} elements) to {:?} ({})",
                x.shape(),
                x.len(),
                shape,
                numel(&shape)
            )));
        }
        let out = Tensor::from_parts(shape, x.data_arc().clone(), x.requires_grad());
        if x.requires_grad() {
            let xid = x.id();
            let len = x.len();
            self.record(
                out.id(),
                Box::new(move |g, store| {
                    let buf = store.accum(xid, len);
                    for i in 0..len {
                        buf[i] += g[i];
                    }
                }),
            );
        }
        Ok(out)
    }

    /// Index lookup: out[p] = x[idx[p]], with -1 producing a zero.
    /// Backward scatter-adds in ascending `p`, so duplicate indices
    /// accumulate deterministically.
    pub fn gather(
        &self,
        x: &Tensor<F>,
        indices: &Arc<Vec<i64>>,
        out_shape: Vec<usize>,
    ) -> Result<Tensor<F>> {
        if numel(&out_shape) != indices.len() {
            return Err(Error::dimension(format!(
                "gather: output shape {:?} vs {} indices",
                out_shape,
                indices.len()
            )));
        }
        let n = x.len() as i64;
        let mut data = Vec::with_capacity(indices.len());
        for (p, &ix) in indices.iter().enumerate() {
            if ix < -1 || ix >= n {
                return Err(Error::index(format!(
                    "gather: index {ix} at position {p} outside [-1, {n})"
                )));
            }
            data.push(if ix < 0 { F::ZERO } else { x.data()[ix as usize] });
        }
        let xid = x.id();
        let xrg = x.requires_grad();
        let xlen = x.len();
        let idx = indices.clone();
        Ok(self.emit(out_shape, data, xrg, move |g, store| {
            let buf = store.accum(xid, xlen);
            for (p, &ix) in idx.iter().enumerate() {
                if ix >= 0 {
                    buf[ix as usize] += g[p];
                }
            }
        }))
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean_axis(&self, x: &Tensor<F>, axis: usize) -> Result<Tensor<F>> {
        if axis >= x.rank() {
            return Err(Error::index(format!(
                "mean_axis: axis {} for rank {}",
                axis,
                x.rank()
            )));
        }
        let n = x.shape()[axis];
        if n == 0 {
            return Err(Error::validation("mean_axis: axis has zero extent".to_string()));
        }
        let pre: usize = x.shape()[..axis].iter().product();
        let post: usize = x.shape()[axis + 1..].iter().product();
        let inv = F::ONE / F::from_f64(n as f64);
        let mut data = vec![F::ZERO; pre * post];
        let xd = x.data();
        for i in 0..pre {
            for a in 0..n {
                let base = (i * n + a) * post;
                let or = &mut data[i * post..(i + 1) * post];
                for j in 0..post {
                    or[j] += xd[base + j];
                }
            }
        }
        for v in data.iter_mut() {
            *v *= inv;
        }
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        let xid = x.id();
        let xrg = x.requires_grad();
        let xlen = x.len();
        Ok(self.emit(shape, data, xrg, move |g, store| {
            let buf = store.accum(xid, xlen);
            for i in 0..pre {
                let gr = &g[i * post..(i + 1) * post];
                for a in 0..n {
                    let base = (i * n + a) * post;
                    for j in 0..post {
                        buf[base + j] += gr[j] * inv;
                    }
                }
            }
        }))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum_all(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut s = F::ZERO;
        for &v in x.data() {
            s += v;
        }
        let xid = x.id();
        let xrg = x.requires_grad();
        let xlen = x.len();
        Ok(self.emit(vec![], vec![s], xrg, move |g, store| {
            let g0 = g[0];
            let buf = store.accum(xid, xlen);
            for v in buf.iter_mut() {
                *v += g0;
            }
        }))
    }

    /// Row-wise layer normalization over the last axis, with affine
    /// parameters. Uses the population variance.
    pub fn layer_norm(
        &self,
        x: &Tensor<F>,
        gamma: &Tensor<F>,
        beta: &Tensor<F>,
        eps: f64,
    ) -> Result<Tensor<F>> {
        if x.rank() < 1 {
            return Err(Error::dimension("layer_norm: input needs rank >= 1".to_string()));
        }
        let d = *x.shape().last().unwrap();
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::dimension(format!(
                "layer_norm: gamma {:?} / beta {:?} for feature size {}",
                gamma.shape(),
                beta.shape(),
                d
            )));
        }
        if eps < 0.0 {
            return Err(Error::validation(format!("layer_norm: eps {eps} < 0")));
        }
        let rows = x.len() / d;
        let inv_d = F::ONE / F::from_f64(d as f64);
        let epsf = F::from_f64(eps);
        let xd = x.data();
        let gd = gamma.data_arc().clone();
        let bd = beta.data();

        let mut xhat = vec![F::ZERO; x.len()];
        let mut inv_std = vec![F::ZERO; rows];
        let mut data = vec![F::ZERO; x.len()];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mut mean = F::ZERO;
            for &v in row {
                mean += v;
            }
            mean *= inv_d;
            let mut var = F::ZERO;
            for &v in row {
                let c = v - mean;
                var += c * c;
            }
            var *= inv_d;
            let w = F::ONE / (var + epsf).sqrt();
            inv_std[r] = w;
            for j in 0..d {
                let h = (row[j] - mean) * w;
                xhat[r * d + j] = h;
                data[r * d + j] = gd[j] * h + bd[j];
            }
        }

        let (xid, gid, bid) = (x.id(), gamma.id(), beta.id());
        let (xrg, grg, brg) = (x.requires_grad(), gamma.requires_grad(), beta.requires_grad());
        let xlen = x.len();
        let xhat = Arc::new(xhat);
        let inv_std = Arc::new(inv_std);
        Ok(self.emit(
            x.shape().to_vec(),
            data,
            xrg || grg || brg,
            move |g, store| {
                if xrg {
                    // d/dx of (x - mean)/std with both statistics row-local:
                    // w * (dh - mean(dh) - xhat * mean(dh * xhat)), dh = g * gamma.
                    let buf = store.accum(xid, xlen);
                    for r in 0..rows {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let w = inv_std[r];
                        let mut mean_dh = F::ZERO;
                        let mut mean_dhh = F::ZERO;
                        for j in 0..d {
                            let dh = gr[j] * gd[j];
                            mean_dh += dh;
                            mean_dhh += dh * hr[j];
                        }
                        mean_dh *= inv_d;
                        mean_dhh *= inv_d;
                        let br = &mut buf[r * d..(r + 1) * d];
                        for j in 0..d {
                            let dh = gr[j] * gd[j];
                            br[j] += w * (dh - mean_dh - hr[j] * mean_dhh);
                        }
                    }
                }
                if grg {
                    let buf = store.accum(gid, d);
                    for r in 0..rows {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            buf[j] += gr[j] * hr[j];
                        }
                    }
                }
                if brg {
                    let buf = store.accum(bid, d);
                    for r in 0..rows {
                        let gr = &g[r * d..(r + 1) * d];
                        for j in 0..d {
                            buf[j] += gr[j];
                        }
                    }
                }
            },
        ))
    }

    /// Exact Gaussian-error-linear unit, x * Phi(x).
    pub fn gelu(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let half = F::from_f64(0.5);
        let inv_sqrt2 = F::from_f64(std::f64::consts::FRAC_1_SQRT_2);
        let data: Vec<F> = x
            .data()
            .iter()
            .map(|&v| v * (half * (F::ONE + (v * inv_sqrt2).erf())))
            .collect();
        let xid = x.id();
        let xrg = x.requires_grad();
        let xlen = x.len();
        let xd = x.data_arc().clone();
        let inv_sqrt_2pi = F::from_f64(INV_SQRT_2PI);
        Ok(self.emit(x.shape().to_vec(), data, xrg, move |g, store| {
            let buf = store.accum(xid, xlen);
            for i in 0..xlen {
                let v = xd[i];
                let phi_cdf = half * (F::ONE + (v * inv_sqrt2).erf());
                let phi_pdf = (-(v * v) * half).exp() * inv_sqrt_2pi;
                buf[i] += g[i] * (phi_cdf + v * phi_pdf);
            }
        }))
    }

    /// Mean binary cross-entropy on raw logits, computed in the
    /// overflow-safe form max(x,0) - x*y + ln(1 + exp(-|x|)).
    /// Targets must be exactly 0 or 1 and receive no gradient.
    pub fn bce_with_logits(&self, logits: &Tensor<F>, targets: &Tensor<F>) -> Result<Tensor<F>> {
        same_shape("bce_with_logits", logits, targets)?;
        if logits.is_empty() {
            return Err(Error::validation("bce_with_logits: empty input".to_string()));
        }
        for (i, &t) in targets.data().iter().enumerate() {
            let tv = t.to_f64();
            if tv != 0.0 && tv != 1.0 {
                return Err(Error::validation(format!(
                    "bce_with_logits: target at {i} is {tv}, expected 0 or 1"
                )));
            }
        }
        let n = logits.len();
        let inv_n = F::ONE / F::from_f64(n as f64);
        let mut s = F::ZERO;
        for (&x, &y) in logits.data().iter().zip(targets.data()) {
            let pos = x.maxv(F::ZERO);
            s += pos - x * y + (-x.abs()).exp().ln_1p();
        }
        s *= inv_n;
        let lid = logits.id();
        let lrg = logits.requires_grad();
        let ld = logits.data_arc().clone();
        let td = targets.data_arc().clone();
        Ok(self.emit(vec![], vec![s], lrg, move |g, store| {
            let g0 = g[0].to_f64();
            let buf = store.accum(lid, n);
            let inv = inv_n.to_f64();
            for i in 0..n {
                let sig = crate::scalar::sigmoid(ld[i].to_f64());
                buf[i] += F::from_f64(g0 * (sig - td[i].to_f64()) * inv);
            }
        }))
    }

    /// Affine map on the last axis: x [.. x in] -> [.. x out].
    /// Composed from reshape, matmul, and add_bias.
    pub fn linear(&self, x: &Tensor<F>, weight: &Tensor<F>, bias: &Tensor<F>) -> Result<Tensor<F>> {
        if x.rank() < 1 {
            return Err(Error::dimension("linear: input needs rank >= 1".to_string()));
        }
        if weight.rank() != 2 {
            return Err(Error::dimension(format!(
                "linear: weight shape {:?}, expected [in, out]",
                weight.shape()
            )));
        }
        let in_dim = *x.shape().last().unwrap();
        let (win, wout) = (weight.shape()[0], weight.shape()[1]);
        if win != in_dim {
            return Err(Error::dimension(format!(
                "linear: input features {in_dim} vs weight rows {win}"
            )));
        }
        let rows = x.len() / in_dim;
        let flat = self.reshape(x, vec![rows, in_dim])?;
        let prod = self.matmul(&flat, weight)?;
        let biased = self.add_bias(&prod, bias)?;
        let mut out_shape = x.shape().to_vec();
        *out_shape.last_mut().unwrap() = wout;
        self.reshape(&biased, out_shape)
    }
}
