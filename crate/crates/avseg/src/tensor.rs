//! Minimal dense-array substrate.
//!
//! All values are double precision and row-major. Every kernel uses a fixed,
//! deterministic accumulation order (row-major traversal) so results are
//! bit-reproducible on a given platform. Kernels report their cost to
//! [`crate::flops`] under the documented conventions.

use crate::error::{Error, Result};
use crate::flops;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn shape_str(shape: &[usize]) -> String {
    let parts: Vec<String> = shape.iter().map(|e| e.to_string()).collect();
    format!("[{}]", parts.join("x"))
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "tensor extents must be >= 1, got {}",
                shape_str(&shape)
            )));
        }
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("{} values for {}", expect, shape_str(&shape)),
                format!("{} values", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "tensor data must be finite".to_string(),
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// Internal constructor for kernel outputs whose invariants are
    /// guaranteed by the producing operation.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor::from_parts(shape.to_vec(), vec![0.0; n])
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Tensor::from_parts(shape.to_vec(), vec![v; n])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::InvalidArgument("ragged rows".to_string()));
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(
                "dims2",
                "rank-2 tensor",
                shape_str(&self.shape),
            )),
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::shape(
                "dims3",
                "rank-3 tensor",
                shape_str(&self.shape),
            )),
        }
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        let cols = self.shape[self.shape.len() - 1];
        self.data[i * cols + j]
    }

    /// Reinterprets the flat data under a new shape of equal volume. Free.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("volume {}", self.data.len()),
                shape_str(shape),
            ));
        }
        Ok(Tensor::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[self.shape.len() - 1];
        &self.data[i * cols..(i + 1) * cols]
    }

    /// Row slice `[lo, hi)` of a 2-D tensor. Data movement only.
    pub fn row_slice(&self, lo: usize, hi: usize) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        if lo >= hi || hi > r {
            return Err(Error::InvalidArgument(format!(
                "row slice {lo}..{hi} out of range for {r} rows"
            )));
        }
        Ok(Tensor::from_parts(
            vec![hi - lo, c],
            self.data[lo * c..hi * c].to_vec(),
        ))
    }

    /// Column slice `[lo, hi)` of a 2-D tensor. Data movement only.
    pub fn col_slice(&self, lo: usize, hi: usize) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        if lo >= hi || hi > c {
            return Err(Error::InvalidArgument(format!(
                "column slice {lo}..{hi} out of range for {c} columns"
            )));
        }
        let w = hi - lo;
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&self.data[i * c + lo..i * c + hi]);
        }
        Ok(Tensor::from_parts(vec![r, w], data))
    }

    /// Horizontal concatenation of 2-D tensors with equal row counts.
    pub fn hcat(parts: &[&Tensor]) -> Result<Tensor> {
        let (r, _) = parts[0].dims2()?;
        let mut total = 0;
        for p in parts {
            let (pr, pc) = p.dims2()?;
            if pr != r {
                return Err(Error::shape(
                    "hcat",
                    format!("{r} rows"),
                    format!("{pr} rows"),
                ));
            }
            total += pc;
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Ok(Tensor::from_parts(vec![r, total], data))
    }

    /// Vertical concatenation of 2-D tensors with equal column counts.
    pub fn vcat(parts: &[&Tensor]) -> Result<Tensor> {
        let (_, c) = parts[0].dims2()?;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let (pr, pc) = p.dims2()?;
            if pc != c {
                return Err(Error::shape(
                    "vcat",
                    format!("{c} cols"),
                    format!("{pc} cols"),
                ));
            }
            data.extend_from_slice(&p.data);
            rows += pr;
        }
        Ok(Tensor::from_parts(vec![rows, c], data))
    }

    pub fn transpose2(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor::from_parts(vec![c, r], data))
    }

    // ----- elementwise kernels (1 flop per element) -----

    fn zip(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                shape_str(&self.shape),
                shape_str(&other.shape),
            ));
        }
        flops::add(self.data.len() as u64);
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        flops::add(self.data.len() as u64);
        let data = self.data.iter().map(|&v| v * s).collect();
        Tensor::from_parts(self.shape.clone(), data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        flops::add(self.data.len() as u64);
        let data = self.data.iter().map(|&v| f(v)).collect();
        Tensor::from_parts(self.shape.clone(), data)
    }

    pub fn logistic(&self) -> Tensor {
        self.map(|v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| v.max(0.0))
    }

    /// Adds a length-`D` bias row to every row of an `N×D` tensor.
    pub fn add_bias_row(&self, bias: &Tensor) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        if bias.shape() != [c] {
            return Err(Error::shape(
                "add_bias_row",
                format!("[{c}]"),
                shape_str(bias.shape()),
            ));
        }
        flops::add((r * c) as u64);
        let mut data = self.data.clone();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += bias.data[j];
            }
        }
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    // ----- matmul: 2·m·k·n flops -----

    /// Matrix product with deterministic accumulation: each output element
    /// is accumulated over k in increasing order.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("[{m}x{k}] . [{k}xN]"),
                format!("[{m}x{k}] . [{k2}x{n}]"),
            ));
        }
        flops::add(2 * (m * k * n) as u64);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (l, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[l * n..(l + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    // ----- softmax: 5 flops per element -----

    /// Row-wise softmax with per-row max subtraction. Exact `1.0` entries
    /// for single-column input.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        flops::add(5 * (r * c) as u64);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut data[i * c..(i + 1) * c];
            let mut sum = 0.0;
            for (o, &v) in out.iter_mut().zip(row.iter()) {
                *o = (v - mx).exp();
                sum += *o;
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
        }
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    /// Softmax with optional `1/sqrt(d)` logit pre-scaling. The unscaled
    /// form matches analyses that omit the scale factor; scaling does not
    /// change the single-column case.
    pub fn softmax_rows_scaled(&self, scale: Option<f64>) -> Result<Tensor> {
        match scale {
            Some(s) => self.scale(s).softmax_rows(),
            None => self.softmax_rows(),
        }
    }

    // ----- layer norm: 8 flops per element -----

    /// Normalizes over the last axis per position, then applies the affine
    /// `gamma`/`beta`. Constant positions map to `beta` via the `eps` floor.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        if eps <= 0.0 {
            return Err(Error::InvalidArgument("layer_norm eps must be > 0".into()));
        }
        let c = *self.shape.last().unwrap();
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::shape(
                "layer_norm",
                format!("gamma/beta [{c}]"),
                format!("{} / {}", shape_str(gamma.shape()), shape_str(beta.shape())),
            ));
        }
        flops::add(8 * self.data.len() as u64);
        let rows = self.data.len() / c;
        let mut data = vec![0.0; self.data.len()];
        for i in 0..rows {
            let x = &self.data[i * c..(i + 1) * c];
            let mean = x.iter().sum::<f64>() / c as f64;
            let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            let out = &mut data[i * c..(i + 1) * c];
            for j in 0..c {
                out[j] = (x[j] - mean) * inv * gamma.data[j] + beta.data[j];
            }
        }
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    // ----- conv2d: 2·C_out·C_in·K²·H'·W' flops (bias uncounted) -----

    /// Cross-correlation convolution with zero padding over a `C×H×W` input.
    pub fn conv2d(&self, w: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        let (c_in, h, wid) = self.dims3()?;
        let ws = w.shape();
        if ws.len() != 4 || ws[1] != c_in || ws[2] != ws[3] {
            return Err(Error::shape(
                "conv2d",
                format!("weights [C_outx{c_in}xKxK]"),
                shape_str(ws),
            ));
        }
        let (c_out, k) = (ws[0], ws[2]);
        if k % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel size {k} must be odd"
            )));
        }
        if bias.shape() != [c_out] {
            return Err(Error::shape(
                "conv2d",
                format!("bias [{c_out}]"),
                shape_str(bias.shape()),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be >= 1".into()));
        }
        let span_h = h + 2 * pad;
        let span_w = wid + 2 * pad;
        if span_h < k
            || span_w < k
            || !(span_h - k).is_multiple_of(stride)
            || !(span_w - k).is_multiple_of(stride)
        {
            return Err(Error::InvalidArgument(format!(
                "non-integral output extent for input {h}x{wid}, K={k}, stride={stride}, pad={pad}"
            )));
        }
        let h_out = (span_h - k) / stride + 1;
        let w_out = (span_w - k) / stride + 1;
        flops::add(2 * (c_out * c_in * k * k * h_out * w_out) as u64);

        // Weight-stationary loop order, register-blocked over pairs of output
        // channels: the innermost loop runs contiguously over output columns
        // (vectorizable) and every loaded input value feeds two accumulator
        // planes. Per output element the products still accumulate in
        // ascending (ci, ky, kx) order with the bias added last, so results
        // are bit-identical to the naive per-output accumulation.
        let plane = h_out * w_out;
        let mut out = vec![0.0; c_out * plane];
        let mut co = 0;
        while co < c_out {
            let pair = co + 1 < c_out;
            let (head, tail) = out[co * plane..].split_at_mut(plane);
            for ci in 0..c_in {
                let in_base = ci * h * wid;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv0 = w.data[((co * c_in + ci) * k + ky) * k + kx];
                        let wv1 = if pair {
                            w.data[(((co + 1) * c_in + ci) * k + ky) * k + kx]
                        } else {
                            0.0
                        };
                        let ox_lo = pad.saturating_sub(kx).div_ceil(stride);
                        let max_ix = wid as isize - 1 + pad as isize - kx as isize;
                        if max_ix < 0 || ox_lo >= w_out {
                            continue;
                        }
                        let ox_hi = (w_out - 1).min(max_ix as usize / stride);
                        for oy in 0..h_out {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let in_row = in_base + iy as usize * wid;
                            let out_row = oy * w_out;
                            if stride == 1 {
                                let n = ox_hi - ox_lo + 1;
                                let src_start = in_row + ox_lo + kx - pad;
                                let src = &self.data[src_start..src_start + n];
                                let dst0 = &mut head[out_row + ox_lo..out_row + ox_lo + n];
                                if pair {
                                    let dst1 = &mut tail[out_row + ox_lo..out_row + ox_lo + n];
                                    for ((o0, o1), &x) in
                                        dst0.iter_mut().zip(dst1.iter_mut()).zip(src)
                                    {
                                        *o0 += wv0 * x;
                                        *o1 += wv1 * x;
                                    }
                                } else {
                                    for (o, &x) in dst0.iter_mut().zip(src) {
                                        *o += wv0 * x;
                                    }
                                }
                            } else {
                                for ox in ox_lo..=ox_hi {
                                    let x = self.data[in_row + ox * stride + kx - pad];
                                    head[out_row + ox] += wv0 * x;
                                    if pair {
                                        tail[out_row + ox] += wv1 * x;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            for v in head.iter_mut() {
                *v += bias.data[co];
            }
            if pair {
                for v in tail[..plane].iter_mut() {
                    *v += bias.data[co + 1];
                }
            }
            co += if pair { 2 } else { 1 };
        }
        Ok(Tensor::from_parts(vec![c_out, h_out, w_out], out))
    }

    // ----- bilinear resize: 8 flops per output element -----

    /// Align-corners-false bilinear interpolation of a `C×h×w` map.
    /// Same-size targets reproduce the input exactly.
    pub fn bilinear_resize(&self, h_out: usize, w_out: usize) -> Result<Tensor> {
        let (c, h, w) = self.dims3()?;
        if h_out == 0 || w_out == 0 {
            return Err(Error::InvalidArgument(
                "resize target extents must be >= 1".into(),
            ));
        }
        flops::add(8 * (c * h_out * w_out) as u64);
        if (h_out, w_out) == (h, w) {
            return Ok(self.clone());
        }
        let sy = h as f64 / h_out as f64;
        let sx = w as f64 / w_out as f64;
        let mut out = vec![0.0; c * h_out * w_out];
        for oy in 0..h_out {
            let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let wy = fy - y0 as f64;
            for ox in 0..w_out {
                let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let wx = fx - x0 as f64;
                for ch in 0..c {
                    let base = ch * h * w;
                    let v00 = self.data[base + y0 * w + x0];
                    let v01 = self.data[base + y0 * w + x1];
                    let v10 = self.data[base + y1 * w + x0];
                    let v11 = self.data[base + y1 * w + x1];
                    let top = v00 + (v01 - v00) * wx;
                    let bot = v10 + (v11 - v10) * wx;
                    out[(ch * h_out + oy) * w_out + ox] = top + (bot - top) * wy;
                }
            }
        }
        Ok(Tensor::from_parts(vec![c, h_out, w_out], out))
    }

    // ----- helpers -----

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Text serialization: first line the shape, second line the values
    /// with 17 significant digits.
    pub fn to_text(&self) -> String {
        let shape: Vec<String> = self.shape.iter().map(|e| e.to_string()).collect();
        let vals: Vec<String> = self.data.iter().map(|v| format!("{v:.16e}")).collect();
        format!("{}\n{}\n", shape.join(" "), vals.join(" "))
    }

    pub fn from_text(text: &str) -> Result<Tensor> {
        let mut lines = text.lines();
        let shape_line = lines
            .next()
            .ok_or_else(|| Error::Parse("empty tensor text".into()))?;
        let data_line = lines
            .next()
            .ok_or_else(|| Error::Parse("missing tensor data line".into()))?;
        let shape: Vec<usize> = shape_line
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Parse(format!("bad extent '{t}'")))
            })
            .collect::<Result<_>>()?;
        let data: Vec<f64> = data_line
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Parse(format!("bad value '{t}'")))
            })
            .collect::<Result<_>>()?;
        Tensor::new(shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn t2(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    // independent triple-loop reference for matmul
    fn matmul_oracle(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = a.dims2().unwrap();
        let (_, n) = b.dims2().unwrap();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for l in 0..k {
                    acc += a.at2(i, l) * b.at2(l, j);
                }
                out[i * n + j] = acc;
            }
        }
        Tensor::from_parts(vec![m, n], out)
    }

    #[test]
    fn matmul_identity() {
        let i = t2(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let a = t2(&[vec![3.0, 4.0], vec![5.0, 6.0]]);
        assert_eq!(i.matmul(&a).unwrap(), a);
        assert_eq!(a.matmul(&i).unwrap(), a);
    }

    #[test]
    fn matmul_hand_case() {
        let a = t2(&[vec![1.0, 2.0]]);
        let b = t2(&[vec![3.0], vec![4.0]]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = Rng::new(11);
        let a = rng.tensor_normal(&[7, 5]);
        let b = rng.tensor_normal(&[5, 3]);
        let got = a.matmul(&b).unwrap();
        let want = matmul_oracle(&a, &b);
        // both paths accumulate over k in increasing order, so bitwise equal
        assert_eq!(got.data(), want.data());
    }

    #[test]
    fn matmul_shape_mismatch_rejected() {
        let a = t2(&[vec![1.0, 2.0]]);
        let err = a.matmul(&a).unwrap_err();
        assert!(err.to_string().contains("shape mismatch"));
    }

    #[test]
    fn softmax_single_column_is_exactly_one() {
        let x = Tensor::new(vec![5, 1], vec![-3.0, 0.0, 1e6_f64.ln(), 7.0, -1000.0]).unwrap();
        let s = x.softmax_rows().unwrap();
        assert!(s.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn softmax_symmetry() {
        let x = t2(&[vec![0.0, 0.0]]);
        assert_eq!(x.softmax_rows().unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_large_logits_no_overflow() {
        let x = t2(&[vec![1000.0, 0.0]]);
        let s = x.softmax_rows().unwrap();
        // exact: 1/(1+e^-1000) rounds to 1.0 in f64
        assert_eq!(s.data()[0], 1.0);
        assert!(s.data()[1] >= 0.0 && s.data()[1] < 1e-300);
        assert!(s.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn layer_norm_constant_input_is_zero() {
        let x = Tensor::filled(&[1, 8], 3.5);
        let g = Tensor::filled(&[8], 1.0);
        let b = Tensor::zeros(&[8]);
        let y = x.layer_norm(&g, &b, 1e-6).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_two_point() {
        let x = t2(&[vec![1.0, 3.0]]);
        let g = Tensor::filled(&[2], 1.0);
        let b = Tensor::zeros(&[2]);
        let y = x.layer_norm(&g, &b, 1e-14).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-6);
        assert!((y.data()[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_statistics_oracle() {
        let mut rng = Rng::new(3);
        let x = rng.tensor_normal(&[4, 16]);
        let g = Tensor::filled(&[16], 1.0);
        let b = Tensor::zeros(&[16]);
        let y = x.layer_norm(&g, &b, 1e-12).unwrap();
        for i in 0..4 {
            let row = y.row(i);
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-10, "row {i} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "row {i} var {var}");
        }
    }

    // independent six-loop reference for conv2d
    fn conv_oracle(x: &Tensor, w: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (c_in, h, wid) = x.dims3().unwrap();
        let (c_out, k) = (w.shape()[0], w.shape()[2]);
        let h_out = (h + 2 * pad - k) / stride + 1;
        let w_out = (wid + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; c_out * h_out * w_out];
        for co in 0..c_out {
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut acc = 0.0;
                    for ci in 0..c_in {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = oy as isize * stride as isize + ky as isize - pad as isize;
                                let ix = ox as isize * stride as isize + kx as isize - pad as isize;
                                if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < wid {
                                    acc += x.data()[(ci * h + iy as usize) * wid + ix as usize]
                                        * w.data()[((co * c_in + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                    out[(co * h_out + oy) * w_out + ox] = acc + bias.data()[co];
                }
            }
        }
        Tensor::from_parts(vec![c_out, h_out, w_out], out)
    }

    #[test]
    fn conv2d_one_by_one_identity() {
        let mut rng = Rng::new(5);
        let x = rng.tensor_normal(&[1, 4, 4]);
        let w = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        assert_eq!(x.conv2d(&w, &b, 1, 0).unwrap(), x);
    }

    #[test]
    fn conv2d_box_sum() {
        let x = Tensor::filled(&[1, 3, 3], 1.0);
        let w = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let b = Tensor::zeros(&[1]);
        let y = x.conv2d(&w, &b, 1, 1).unwrap();
        assert_eq!(y.at2(1, 1), 9.0); // center (row-major index into 3x3)
        assert_eq!(y.data()[0], 4.0); // corner
    }

    #[test]
    fn conv2d_matches_six_loop_oracle() {
        let mut rng = Rng::new(6);
        let x = rng.tensor_normal(&[3, 9, 7]);
        let w = rng.tensor_normal(&[4, 3, 3, 3]);
        let b = rng.tensor_normal(&[4]);
        for (stride, pad) in [(1, 1), (2, 1), (1, 0), (3, 1)] {
            if (9 + 2 * pad - 3) % stride != 0 || (7 + 2 * pad - 3) % stride != 0 {
                continue;
            }
            let got = x.conv2d(&w, &b, stride, pad).unwrap();
            let want = conv_oracle(&x, &w, &b, stride, pad);
            assert_eq!(got.data(), want.data(), "stride={stride} pad={pad}");
        }
    }

    #[test]
    fn conv2d_non_integral_output_rejected() {
        let x = Tensor::zeros(&[1, 4, 4]);
        let w = Tensor::zeros(&[1, 1, 3, 3]);
        let b = Tensor::zeros(&[1]);
        assert!(x.conv2d(&w, &b, 2, 0).is_err());
    }

    #[test]
    fn bilinear_same_size_is_identity() {
        let mut rng = Rng::new(8);
        let x = rng.tensor_normal(&[2, 5, 7]);
        assert_eq!(x.bilinear_resize(5, 7).unwrap(), x);
    }

    #[test]
    fn bilinear_constant_stays_constant() {
        let x = Tensor::filled(&[1, 3, 3], 2.5);
        let y = x.bilinear_resize(7, 5).unwrap();
        assert!(y.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn bilinear_two_x_upsample_closed_form() {
        // source coords for out index o at scale 0.5: (o+0.5)*0.5-0.5,
        // clamped -> [0, 0.25, 0.75, 1.25->1] with the 2-sample grid.
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = x.bilinear_resize(4, 4).unwrap();
        let lerp = |a: f64, b: f64, w: f64| a + (b - a) * w;
        let fs = [0.0, 0.25, 0.75, 1.0];
        for (oy, &fy) in fs.iter().enumerate() {
            for (ox, &fx) in fs.iter().enumerate() {
                let top = lerp(1.0, 2.0, fx);
                let bot = lerp(3.0, 4.0, fx);
                let want = lerp(top, bot, fy);
                let got = y.data()[oy * 4 + ox];
                assert!((got - want).abs() < 1e-12, "({oy},{ox}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let mut rng = Rng::new(13);
        let x = rng.tensor_normal(&[3, 4]);
        let back = Tensor::from_text(&x.to_text()).unwrap();
        assert_eq!(x, back);
    }

    #[test]
    fn constructor_rejects_bad_inputs() {
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2], vec![1.0]).is_err());
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..8, seed in 0u64..1000) {
            let mut rng = Rng::new(seed);
            let x = rng.tensor_uniform(&[rows, cols], -10.0, 10.0);
            let s = x.softmax_rows().unwrap();
            for i in 0..rows {
                let sum: f64 = s.row(i).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn softmax_shift_invariance(cols in 1usize..8, seed in 0u64..1000, shift in -50.0f64..50.0) {
            let mut rng = Rng::new(seed);
            let x = rng.tensor_uniform(&[1, cols], -5.0, 5.0);
            let shifted = x.map(|v| v + shift);
            let a = x.softmax_rows().unwrap();
            let b = shifted.softmax_rows().unwrap();
            prop_assert!(a.max_abs_diff(&b) < 1e-12);
        }

        #[test]
        fn conv2d_linearity(seed in 0u64..500) {
            let mut rng = Rng::new(seed);
            let x1 = rng.tensor_normal(&[2, 5, 5]);
            let x2 = rng.tensor_normal(&[2, 5, 5]);
            let w = rng.tensor_normal(&[3, 2, 3, 3]);
            let b = Tensor::zeros(&[3]);
            let lhs = x1.add(&x2).unwrap().conv2d(&w, &b, 1, 1).unwrap();
            let rhs = x1.conv2d(&w, &b, 1, 1).unwrap()
                .add(&x2.conv2d(&w, &b, 1, 1).unwrap()).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
        }
    }
}
