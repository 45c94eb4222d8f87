//! Operators: forward evaluation on the tape plus their backward rules.
//!
//! Image tensors are `[N, C, H, W]`. Per-channel operators (bias, batch
//! norm, concatenation) treat any `[N, C, ...]` tensor as `N x C x spatial`.

use super::gemm::gemm;
use super::loss;
use super::tape::{Op, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::shape(op, detail)
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn rank4(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        ref s => Err(shape_err(op, format!("expected [N, C, H, W], got {s:?}"))),
    }
}

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let ohw = self.oh * self.ow;
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = &mut cols[((ci * self.k + ky) * self.k + kx) * ohw..][..ohw];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let out = &mut row[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            out.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *o = if ix < 0 || ix >= self.w as isize { 0.0 } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let ohw = self.oh * self.ow;
        for ci in 0..self.cin {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = &cols[((ci * self.k + ky) * self.k + kx) * ohw..][..ohw];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += row[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Source taps for one axis of a x2 bilinear upsample (half-pixel centres).
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// 2-D convolution without bias. `weight` is `[Cout, Cin, k, k]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize, padding: usize) -> Result<Var> {
        let (n, cin, h, w) = rank4("conv2d", self.val(input))?;
        let (cout, wcin, k, k2) = rank4("conv2d", self.val(weight))?;
        if wcin != cin || k != k2 {
            return Err(shape_err(
                "conv2d",
                format!("input has {cin} channels, weight is {:?}", self.val(weight).shape()),
            ));
        }
        if stride == 0 || h + 2 * padding < k || w + 2 * padding < k {
            return Err(shape_err("conv2d", format!("kernel {k} / stride {stride} do not fit {h}x{w}")));
        }
        let g = ConvGeom {
            cin,
            h,
            w,
            k,
            stride,
            pad: padding,
            oh: (h + 2 * padding - k) / stride + 1,
            ow: (w + 2 * padding - k) / stride + 1,
        };
        let ohw = g.oh * g.ow;
        let mut out = vec![0.0; n * cout * ohw];
        let mut cols = vec![0.0; g.rows() * ohw];
        let x = self.val(input).data();
        let wt = self.val(weight).data();
        for b in 0..n {
            g.im2col(&x[b * cin * h * w..(b + 1) * cin * h * w], &mut cols);
            gemm(cout, g.rows(), ohw, wt, false, &cols, false, &mut out[b * cout * ohw..(b + 1) * cout * ohw], 0.0);
        }
        let value = Tensor::new(vec![n, cout, g.oh, g.ow], out)?;
        let rg = self.any_grad(&[input, weight]);
        Ok(self.push(
            value,
            rg,
            Op::Conv2d {
                input,
                weight,
                stride,
                padding,
            },
        ))
    }

    /// Batch normalisation with batch statistics. Returns the output and the
    /// per-channel batch mean and unbiased variance for running averages.
    pub fn batch_norm_train(&mut self, input: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let x = self.val(input);
        if x.shape().len() < 2 {
            return Err(shape_err("batch_norm", format!("expected [N, C, ...], got {:?}", x.shape())));
        }
        let (n, c, s) = x.ncs();
        self.check_channel_param("batch_norm", gamma, c)?;
        self.check_channel_param("batch_norm", beta, c)?;
        let m = (n * s) as f64;
        let xd = x.data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                mean[ch] += xd[(b * c + ch) * s..][..s].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for b in 0..n {
            for ch in 0..c {
                var[ch] += xd[(b * c + ch) * s..][..s].iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        let unbiased: Vec<f64> = var.iter().map(|v| if m > 1.0 { v / (m - 1.0) } else { 0.0 }).collect();
        var.iter_mut().for_each(|v| *v /= m);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let out = self.normalize(input, gamma, beta, &mean, &inv_std, true)?;
        Ok((out, mean, unbiased))
    }

    /// Batch normalisation with fixed statistics: a per-channel affine map.
    pub fn batch_norm_eval(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (_, c, _) = self.val(input).ncs();
        if running_mean.len() != c || running_var.len() != c {
            return Err(shape_err("batch_norm", format!("running statistics do not have {c} channels")));
        }
        self.check_channel_param("batch_norm", gamma, c)?;
        self.check_channel_param("batch_norm", beta, c)?;
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.normalize(input, gamma, beta, running_mean, &inv_std, false)
    }

    fn check_channel_param(&self, op: &'static str, p: Var, c: usize) -> Result<()> {
        if self.val(p).len() != c {
            return Err(shape_err(op, format!("parameter has {} values for {c} channels", self.val(p).len())));
        }
        Ok(())
    }

    fn normalize(&mut self, input: Var, gamma: Var, beta: Var, mean: &[f64], inv_std: &[f64], train: bool) -> Result<Var> {
        let x = self.val(input);
        let (n, c, s) = x.ncs();
        let shape = x.shape().to_vec();
        let (gd, bd) = (self.val(gamma).data(), self.val(beta).data());
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * s;
                for i in base..base + s {
                    xhat[i] = (x.data()[i] - mean[ch]) * inv_std[ch];
                    out[i] = gd[ch] * xhat[i] + bd[ch];
                }
            }
        }
        let rg = self.any_grad(&[input, gamma, beta]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            rg,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std: inv_std.to_vec(),
                train,
            },
        ))
    }

    fn unary(&mut self, input: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let x = self.val(input);
        let value = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect()).unwrap();
        let rg = self.any_grad(&[input]);
        self.push(value, rg, op)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        // NaN passes through so divergence stays visible downstream.
        self.unary(input, |v| if v < 0.0 { 0.0 } else { v }, Op::Relu(input))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.unary(input, sigmoid, Op::Sigmoid(input))
    }

    /// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = rank4("max_pool2", self.val(input))?;
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(shape_err("max_pool2", format!("input {h}x{w} is smaller than the window")));
        }
        let x = self.val(input).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if x[i] > x[best] || x[i].is_nan() {
                            best = i;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.any_grad(&[input]);
        Ok(self.push(Tensor::new(vec![n, c, oh, ow], out)?, rg, Op::MaxPool2 { input, argmax }))
    }

    /// `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = rank4("global_avg_pool", self.val(input))?;
        let s = h * w;
        let x = self.val(input).data();
        let out = (0..n * c).map(|p| x[p * s..(p + 1) * s].iter().sum::<f64>() / s as f64).collect();
        let rg = self.any_grad(&[input]);
        Ok(self.push(Tensor::new(vec![n, c], out)?, rg, Op::GlobalAvgPool(input)))
    }

    /// Bilinear x2 upsampling with half-pixel centres and edge clamping.
    pub fn upsample2(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = rank4("upsample2", self.val(input))?;
        let (ty, tx) = (upsample_taps(h), upsample_taps(w));
        let x = self.val(input).data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0; n * c * oh * ow];
        for p in 0..n * c {
            let src = &x[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - lx) + src[y0 * w + x1] * lx;
                    let bottom = src[y1 * w + x0] * (1.0 - lx) + src[y1 * w + x1] * lx;
                    dst[oy * ow + ox] = top * (1.0 - ly) + bottom * ly;
                }
            }
        }
        let rg = self.any_grad(&[input]);
        Ok(self.push(Tensor::new(vec![n, c, oh, ow], out)?, rg, Op::Upsample2(input)))
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let ref_shape = self.val(*first).shape().to_vec();
        if ref_shape.len() < 2 {
            return Err(shape_err("concat", format!("expected [N, C, ...], got {ref_shape:?}")));
        }
        let mut total_c = 0;
        for &v in inputs {
            let s = self.val(v).shape();
            if s.len() != ref_shape.len() || s[0] != ref_shape[0] || s[2..] != ref_shape[2..] {
                return Err(shape_err("concat", format!("{s:?} is incompatible with {ref_shape:?}")));
            }
            total_c += s[1];
        }
        let n = ref_shape[0];
        let spatial: usize = ref_shape[2..].iter().product();
        let mut out = Vec::with_capacity(n * total_c * spatial);
        for b in 0..n {
            for &v in inputs {
                let t = self.val(v);
                let c = t.shape()[1];
                out.extend_from_slice(&t.data()[b * c * spatial..(b + 1) * c * spatial]);
            }
        }
        let mut shape = ref_shape;
        shape[1] = total_c;
        let rg = self.any_grad(inputs);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Concat(inputs.to_vec())))
    }

    fn binary(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        same_shape(op_name, self.val(a), self.val(b))?;
        let data = self.val(a).data().iter().zip(self.val(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(self.val(a).shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("maximum", a, b, |x, y| if x >= y || x.is_nan() { x } else { y }, Op::Max(a, b))
    }

    /// `[M, K] x [K, N] -> [M, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
        let (m, k, n) = match (sa, sb) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => return Err(shape_err("matmul", format!("{sa:?} x {sb:?}"))),
        };
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.val(a).data(), false, self.val(b).data(), false, &mut out, 0.0);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, rg, Op::MatMul(a, b)))
    }

    /// Adds `bias[c]` to every element of channel `c` of an `[N, C, ...]`
    /// tensor.
    pub fn add_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let x = self.val(input);
        if x.shape().len() < 2 {
            return Err(shape_err("add_bias", format!("expected [N, C, ...], got {:?}", x.shape())));
        }
        let (n, c, s) = x.ncs();
        self.check_channel_param("add_bias", bias, c)?;
        let bd = self.val(bias).data();
        let mut out = x.data().to_vec();
        for b in 0..n {
            for ch in 0..c {
                out[(b * c + ch) * s..][..s].iter_mut().for_each(|v| *v += bd[ch]);
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.any_grad(&[input, bias]);
        Ok(self.push(value, rg, Op::AddBias { input, bias }))
    }

    /// `x[n, c, :, :] * scale[n, c]`.
    pub fn channel_scale(&mut self, input: Var, scale: Var) -> Result<Var> {
        let (n, c, h, w) = rank4("channel_scale", self.val(input))?;
        if self.val(scale).shape() != [n, c] {
            return Err(shape_err(
                "channel_scale",
                format!("scale {:?} does not match [{n}, {c}]", self.val(scale).shape()),
            ));
        }
        let s = h * w;
        let sd = self.val(scale).data();
        let mut out = self.val(input).data().to_vec();
        for p in 0..n * c {
            out[p * s..(p + 1) * s].iter_mut().for_each(|v| *v *= sd[p]);
        }
        let rg = self.any_grad(&[input, scale]);
        Ok(self.push(Tensor::new(vec![n, c, h, w], out)?, rg, Op::ChannelScale { input, scale }))
    }

    /// `x[n, c, y, x] * scale[n, 0, y, x]`.
    pub fn spatial_scale(&mut self, input: Var, scale: Var) -> Result<Var> {
        let (n, c, h, w) = rank4("spatial_scale", self.val(input))?;
        if self.val(scale).shape() != [n, 1, h, w] {
            return Err(shape_err(
                "spatial_scale",
                format!("scale {:?} does not match [{n}, 1, {h}, {w}]", self.val(scale).shape()),
            ));
        }
        let s = h * w;
        let sd = self.val(scale).data();
        let mut out = self.val(input).data().to_vec();
        for b in 0..n {
            let m = &sd[b * s..(b + 1) * s];
            for ch in 0..c {
                out[(b * c + ch) * s..][..s].iter_mut().zip(m).for_each(|(v, k)| *v *= k);
            }
        }
        let rg = self.any_grad(&[input, scale]);
        Ok(self.push(Tensor::new(vec![n, c, h, w], out)?, rg, Op::SpatialScale { input, scale }))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.val(input).data().iter().sum();
        let rg = self.any_grad(&[input]);
        self.push(Tensor::scalar(s), rg, Op::Sum(input))
    }

    /// Gradients of node `i`'s inputs given the gradient `g` of its output.
    pub(crate) fn input_grads(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf | Op::Param => Vec::new(),
            Op::Conv2d {
                input,
                weight,
                stride,
                padding,
            } => {
                let x = self.val(*input);
                let wt = self.val(*weight);
                let (n, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
                let (cout, k) = (wt.shape()[0], wt.shape()[2]);
                let geom = ConvGeom {
                    cin,
                    h,
                    w,
                    k,
                    stride: *stride,
                    pad: *padding,
                    oh: node.value.shape()[2],
                    ow: node.value.shape()[3],
                };
                let ohw = geom.oh * geom.ow;
                let rows = geom.rows();
                let mut cols = vec![0.0; rows * ohw];
                let mut dcols = vec![0.0; rows * ohw];
                let mut dw = vec![0.0; wt.len()];
                let mut dx = needs(*input).then(|| vec![0.0; x.len()]);
                for b in 0..n {
                    let gb = &g[b * cout * ohw..(b + 1) * cout * ohw];
                    if needs(*weight) {
                        geom.im2col(&x.data()[b * cin * h * w..(b + 1) * cin * h * w], &mut cols);
                        gemm(cout, ohw, rows, gb, false, &cols, true, &mut dw, 1.0);
                    }
                    if let Some(dx) = dx.as_mut() {
                        gemm(rows, cout, ohw, wt.data(), true, gb, false, &mut dcols, 0.0);
                        geom.col2im(&dcols, &mut dx[b * cin * h * w..(b + 1) * cin * h * w]);
                    }
                }
                let mut out = vec![(*weight, dw)];
                if let Some(dx) = dx {
                    out.push((*input, dx));
                }
                out
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (n, c, s) = node.value.ncs();
                let gd = self.val(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * s;
                        for i in base..base + s {
                            dgamma[ch] += g[i] * xhat[i];
                            dbeta[ch] += g[i];
                        }
                    }
                }
                let mut dx = vec![0.0; g.len()];
                let m = (n * s) as f64;
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * s;
                        let scale = gd[ch] * inv_std[ch];
                        for i in base..base + s {
                            dx[i] = if *train {
                                scale * (g[i] - dbeta[ch] / m - xhat[i] * dgamma[ch] / m)
                            } else {
                                scale * g[i]
                            };
                        }
                    }
                }
                vec![(*input, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::Relu(x) => {
                let xd = self.val(*x).data();
                vec![(*x, g.iter().zip(xd).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect())]
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                vec![(*x, g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect())]
            }
            Op::MaxPool2 { input, argmax } => {
                let mut dx = vec![0.0; self.val(*input).len()];
                for (o, &src) in argmax.iter().enumerate() {
                    dx[src] += g[o];
                }
                vec![(*input, dx)]
            }
            Op::GlobalAvgPool(x) => {
                let t = self.val(*x);
                let s = t.shape()[2] * t.shape()[3];
                let mut dx = vec![0.0; t.len()];
                for (p, gp) in g.iter().enumerate() {
                    dx[p * s..(p + 1) * s].iter_mut().for_each(|v| *v = gp / s as f64);
                }
                vec![(*x, dx)]
            }
            Op::Upsample2(x) => {
                let t = self.val(*x);
                let (h, w) = (t.shape()[2], t.shape()[3]);
                let (ty, tx) = (upsample_taps(h), upsample_taps(w));
                let (oh, ow) = (2 * h, 2 * w);
                let mut dx = vec![0.0; t.len()];
                for p in 0..t.shape()[0] * t.shape()[1] {
                    let gp = &g[p * oh * ow..(p + 1) * oh * ow];
                    let d = &mut dx[p * h * w..(p + 1) * h * w];
                    for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                            let v = gp[oy * ow + ox];
                            d[y0 * w + x0] += v * (1.0 - ly) * (1.0 - lx);
                            d[y0 * w + x1] += v * (1.0 - ly) * lx;
                            d[y1 * w + x0] += v * ly * (1.0 - lx);
                            d[y1 * w + x1] += v * ly * lx;
                        }
                    }
                }
                vec![(*x, dx)]
            }
            Op::Concat(inputs) => {
                let shape = node.value.shape();
                let (n, total_c) = (shape[0], shape[1]);
                let spatial: usize = shape[2..].iter().product();
                let mut offset = 0;
                let mut out = Vec::with_capacity(inputs.len());
                for &v in inputs {
                    let c = self.val(v).shape()[1];
                    if needs(v) {
                        let mut d = Vec::with_capacity(n * c * spatial);
                        for b in 0..n {
                            let start = (b * total_c + offset) * spatial;
                            d.extend_from_slice(&g[start..start + c * spatial]);
                        }
                        out.push((v, d));
                    }
                    offset += c;
                }
                out
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Mul(a, b) => {
                let (ad, bd) = (self.val(*a).data(), self.val(*b).data());
                vec![
                    (*a, g.iter().zip(bd).map(|(g, y)| g * y).collect()),
                    (*b, g.iter().zip(ad).map(|(g, x)| g * x).collect()),
                ]
            }
            Op::Max(a, b) => {
                let (ad, bd) = (self.val(*a).data(), self.val(*b).data());
                let take_a: Vec<bool> = ad.iter().zip(bd).map(|(x, y)| x >= y).collect();
                vec![
                    (*a, g.iter().zip(&take_a).map(|(g, &t)| if t { *g } else { 0.0 }).collect()),
                    (*b, g.iter().zip(&take_a).map(|(g, &t)| if t { 0.0 } else { *g }).collect()),
                ]
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let mut out = Vec::new();
                if needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, false, tb.data(), true, &mut da, 0.0);
                    out.push((*a, da));
                }
                if needs(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), true, g, false, &mut db, 0.0);
                    out.push((*b, db));
                }
                out
            }
            Op::AddBias { input, bias } => {
                let (n, c, s) = node.value.ncs();
                let mut db = vec![0.0; c];
                for b in 0..n {
                    for (ch, d) in db.iter_mut().enumerate() {
                        *d += g[(b * c + ch) * s..][..s].iter().sum::<f64>();
                    }
                }
                vec![(*input, g.to_vec()), (*bias, db)]
            }
            Op::ChannelScale { input, scale } => {
                let (n, c, s) = node.value.ncs();
                let x = self.val(*input).data();
                let sd = self.val(*scale).data();
                let mut dx = g.to_vec();
                let mut ds = vec![0.0; n * c];
                for p in 0..n * c {
                    let r = p * s..(p + 1) * s;
                    ds[p] = g[r.clone()].iter().zip(&x[r.clone()]).map(|(g, x)| g * x).sum();
                    dx[r].iter_mut().for_each(|v| *v *= sd[p]);
                }
                vec![(*input, dx), (*scale, ds)]
            }
            Op::SpatialScale { input, scale } => {
                let (n, c, s) = node.value.ncs();
                let x = self.val(*input).data();
                let sd = self.val(*scale).data();
                let mut dx = vec![0.0; g.len()];
                let mut ds = vec![0.0; n * s];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * s;
                        for j in 0..s {
                            dx[base + j] = g[base + j] * sd[b * s + j];
                            ds[b * s + j] += g[base + j] * x[base + j];
                        }
                    }
                }
                vec![(*input, dx), (*scale, ds)]
            }
            Op::Sum(x) => vec![(*x, vec![g[0]; self.val(*x).len()])],
            Op::Bce { pred, target } => {
                vec![(*pred, loss::bce_grad(self.val(*pred).data(), target, g[0]))]
            }
            Op::Focal {
                pred,
                target,
                alpha,
                gamma,
            } => vec![(*pred, loss::focal_grad(self.val(*pred).data(), target, *alpha, *gamma, g[0]))],
            Op::Dice { pred, target } => {
                vec![(*pred, loss::dice_grad(self.val(*pred).data(), target, g[0]))]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_conv() {
        let mut t = Tape::new();
        let x = Tensor::from_fn(&[2, 3, 4, 4], |i| i as f64 * 0.1 - 1.0);
        let xi = t.constant(x.clone());
        let mut w = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let wi = t.constant(w);
        let y = t.conv2d(xi, wi, 1, 0).unwrap();
        assert_eq!(t.value(y), &x);
    }

    #[test]
    fn conv_output_size() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[1, 2, 7, 8]));
        let w = t.constant(Tensor::zeros(&[5, 2, 3, 3]));
        let y = t.conv2d(x, w, 2, 1).unwrap();
        assert_eq!(t.value(y).shape(), &[1, 5, 4, 4]);
        let bad = t.constant(Tensor::zeros(&[5, 3, 3, 3]));
        match t.conv2d(x, bad, 1, 1) {
            Err(Error::Shape { op, .. }) => assert_eq!(op, "conv2d"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn relu_negative_has_zero_grad() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![3], vec![-1.0, 0.5, -0.1]).unwrap());
        let y = t.relu(x);
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn upsample_constant_stays_constant() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::full(&[1, 1, 3, 5], 2.5));
        let y = t.upsample2(x).unwrap();
        assert_eq!(t.value(y).shape(), &[1, 1, 6, 10]);
        assert!(t.value(y).data().iter().all(|&v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn upsample_interpolates() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![1, 1, 1, 2], vec![0.0, 4.0]).unwrap());
        let y = t.upsample2(x).unwrap();
        // Half-pixel centres: outputs sit at source coords -0.25, 0.25, 0.75, 1.25.
        assert_eq!(&t.value(y).data()[..4], &[0.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn max_pool_values() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![1, 1, 2, 4], vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 7.0, 1.0]).unwrap());
        let y = t.max_pool2(x).unwrap();
        assert_eq!(t.value(y).data(), &[5.0, 7.0]);
    }

    #[test]
    fn concat_channels() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::full(&[2, 1, 1, 2], 1.0));
        let b = t.constant(Tensor::full(&[2, 2, 1, 2], 2.0));
        let c = t.concat(&[a, b]).unwrap();
        assert_eq!(t.value(c).shape(), &[2, 3, 1, 2]);
        assert_eq!(t.value(c).data(), &[1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn eval_batch_norm_is_deterministic_affine() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_fn(&[2, 2, 2, 2], |i| i as f64));
        let g = t.constant(Tensor::new(vec![2], vec![2.0, 0.5]).unwrap());
        let b = t.constant(Tensor::new(vec![2], vec![1.0, -1.0]).unwrap());
        let y1 = t.batch_norm_eval(x, g, b, &[1.0, 2.0], &[4.0, 1.0], 0.0).unwrap();
        let y2 = t.batch_norm_eval(x, g, b, &[1.0, 2.0], &[4.0, 1.0], 0.0).unwrap();
        assert_eq!(t.value(y1), t.value(y2));
        // Channel 0 of sample 0: (x - 1) / 2 * 2 + 1 = x.
        assert_eq!(&t.value(y1).data()[..4], &[0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn double_backward_accumulates() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![2], vec![0.3, -0.7]).unwrap());
        let y = t.sigmoid(x);
        let z = t.mul(y, x).unwrap();
        let s = t.sum(z);
        t.backward(s).unwrap();
        let g1 = t.grad(x).unwrap().to_vec();
        t.backward(s).unwrap();
        let g2 = t.grad(x).unwrap();
        for (a, b) in g1.iter().zip(g2) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn disconnected_output_leaves_grads() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::scalar(1.0));
        let b = t.leaf(Tensor::scalar(2.0));
        let sa = t.sum(a);
        let sb = t.sum(b);
        t.backward(sa).unwrap();
        assert_eq!(t.grad(a), Some(&[1.0][..]));
        assert_eq!(t.grad(b), None);
        t.backward(sb).unwrap();
        assert_eq!(t.grad(a), Some(&[1.0][..]));
    }

    #[test]
    fn nan_is_not_swallowed() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0, f64::NAN, 0.5, -1.0]).unwrap());
        let r = t.relu(x);
        assert!(t.value(r).data()[1].is_nan());
        let p = t.max_pool2(x).unwrap();
        assert!(t.value(p).data()[0].is_nan());
        let z = t.constant(Tensor::zeros(&[1, 1, 2, 2]));
        let m = t.maximum(z, x).unwrap();
        assert!(t.value(m).data()[1].is_nan());
    }
}
