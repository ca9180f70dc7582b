use std::rc::Rc;

use super::{gemm, strides, Tensor};
use crate::error::{Error, Result};

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.ndim() != b.ndim() {
        return Err(Error::shape(
            op,
            format!("rank mismatch: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    for (axis, (&x, &y)) in a.shape().iter().zip(b.shape()).enumerate() {
        if x != y {
            return Err(Error::Dimension {
                op,
                axis,
                expected: x,
                found: y,
            });
        }
    }
    Ok(())
}

fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.ndim() {
        return Err(Error::shape(
            op,
            format!("axis {axis} out of range for shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

/// (outer, axis length, inner) around `axis`.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        check_same_shape("add", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        Ok(Tensor::from_op(
            "add",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|ctx| vec![Some(ctx.grad.to_vec()), Some(ctx.grad.to_vec())]),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        check_same_shape("sub", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        Ok(Tensor::from_op(
            "sub",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|ctx| {
                vec![
                    Some(ctx.grad.to_vec()),
                    Some(ctx.grad.iter().map(|g| -g).collect()),
                ]
            }),
        ))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        check_same_shape("mul", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        Ok(Tensor::from_op(
            "mul",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|ctx| {
                let (a, b) = (&ctx.parents[0], &ctx.parents[1]);
                vec![
                    a.requires_grad()
                        .then(|| ctx.grad.iter().zip(b.data()).map(|(g, y)| g * y).collect()),
                    b.requires_grad()
                        .then(|| ctx.grad.iter().zip(a.data()).map(|(g, x)| g * x).collect()),
                ]
            }),
        ))
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        let data = self.data().iter().map(|x| x * factor).collect();
        Tensor::from_op(
            "scale",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |ctx| vec![Some(ctx.grad.iter().map(|g| g * factor).collect())]),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|x| x + c).collect();
        Tensor::from_op(
            "add_scalar",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|ctx| vec![Some(ctx.grad.to_vec())]),
        )
    }

    /// `x` for `x >= 0`, `slope * x` otherwise.
    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        let data = self
            .data()
            .iter()
            .map(|&x| if x >= 0.0 { x } else { slope * x })
            .collect();
        Tensor::from_op(
            "leaky_relu",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |ctx| {
                let x = ctx.parents[0].data();
                vec![Some(
                    ctx.grad
                        .iter()
                        .zip(x)
                        .map(|(g, &x)| if x >= 0.0 { *g } else { slope * g })
                        .collect(),
                )]
            }),
        )
    }

    pub fn sum(&self) -> Tensor {
        let total = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(
            "sum",
            Vec::new(),
            vec![total],
            vec![self.clone()],
            Box::new(move |ctx| vec![Some(vec![ctx.grad[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        self.sum().scale(1.0 / n as f64)
    }

    /// Same data, new shape.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape()),
            ));
        }
        Ok(Tensor::view("reshape", shape.to_vec(), self))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let nd = self.ndim();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape(
                "permute",
                format!("{axes:?} is not a permutation of {nd} axes"),
            ));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape()[a]).collect();
        let data = permute_data(self.data(), self.shape(), axes);
        let mut inverse = vec![0; nd];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let out_shape_c = out_shape.clone();
        Ok(Tensor::from_op(
            "permute",
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |ctx| vec![Some(permute_data(ctx.grad, &out_shape_c, &inverse))]),
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Tensor> {
        let nd = self.ndim();
        if nd < 2 {
            return Err(Error::shape("transpose", "needs at least two axes"));
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 1, nd - 2);
        self.permute(&axes)
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        check_axis("narrow", self, axis)?;
        let (outer, n, inner) = split_at_axis(self.shape(), axis);
        if start + len > n {
            return Err(Error::shape(
                "narrow",
                format!("range {start}..{} exceeds axis {axis} of length {n}", start + len),
            ));
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let total = self.numel();
        Ok(Tensor::from_op(
            "narrow",
            shape,
            data,
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut g = vec![0.0; total];
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    let src = o * len * inner;
                    g[dst..dst + len * inner].copy_from_slice(&ctx.grad[src..src + len * inner]);
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Concatenation along `axis`; all other axes must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        check_axis("concat", first, axis)?;
        for p in &parts[1..] {
            if p.ndim() != first.ndim() {
                return Err(Error::shape("concat", "rank mismatch"));
            }
            for (ax, (&a, &b)) in first.shape().iter().zip(p.shape()).enumerate() {
                if ax != axis && a != b {
                    return Err(Error::Dimension {
                        op: "concat",
                        axis: ax,
                        expected: a,
                        found: b,
                    });
                }
            }
        }
        let (outer, _, inner) = split_at_axis(first.shape(), axis);
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total_len: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total_len * inner);
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&lens) {
                let base = o * len * inner;
                data.extend_from_slice(&p.data()[base..base + len * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total_len;
        Ok(Tensor::from_op(
            "concat",
            shape,
            data,
            parts.to_vec(),
            Box::new(move |ctx| {
                let mut out: Vec<Vec<f64>> =
                    lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
                let mut offset = 0;
                for _ in 0..outer {
                    for (g, &len) in out.iter_mut().zip(&lens) {
                        g.extend_from_slice(&ctx.grad[offset..offset + len * inner]);
                        offset += len * inner;
                    }
                }
                out.into_iter().map(Some).collect()
            }),
        ))
    }

    /// Matrix product over the last two axes: `[M,K]·[K,N]` or batched
    /// `[B,M,K]·[B,K,N]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (batch, m, k, n) = match (self.shape(), other.shape()) {
            ([m, k], [k2, n]) => {
                if k != k2 {
                    return Err(Error::Dimension {
                        op: "matmul",
                        axis: 0,
                        expected: *k,
                        found: *k2,
                    });
                }
                (None, *m, *k, *n)
            }
            ([b, m, k], [b2, k2, n]) => {
                if b != b2 {
                    return Err(Error::Dimension {
                        op: "matmul",
                        axis: 0,
                        expected: *b,
                        found: *b2,
                    });
                }
                if k != k2 {
                    return Err(Error::Dimension {
                        op: "matmul",
                        axis: 1,
                        expected: *k,
                        found: *k2,
                    });
                }
                (Some(*b), *m, *k, *n)
            }
            (a, b) => {
                return Err(Error::shape(
                    "matmul",
                    format!("unsupported operand shapes {a:?} and {b:?}"),
                ))
            }
        };
        let nb = batch.unwrap_or(1);
        let mut out = vec![0.0; nb * m * n];
        for b in 0..nb {
            gemm(
                false,
                false,
                m,
                n,
                k,
                &self.data()[b * m * k..],
                &other.data()[b * k * n..],
                &mut out[b * m * n..],
                false,
            );
        }
        let shape = match batch {
            Some(b) => vec![b, m, n],
            None => vec![m, n],
        };
        Ok(Tensor::from_op(
            "matmul",
            shape,
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |ctx| {
                let (a, bt) = (&ctx.parents[0], &ctx.parents[1]);
                let ga = a.requires_grad().then(|| {
                    let mut g = vec![0.0; nb * m * k];
                    for b in 0..nb {
                        // dA = dC · Bᵀ
                        gemm(
                            false,
                            true,
                            m,
                            k,
                            n,
                            &ctx.grad[b * m * n..],
                            &bt.data()[b * k * n..],
                            &mut g[b * m * k..],
                            false,
                        );
                    }
                    g
                });
                let gb = bt.requires_grad().then(|| {
                    let mut g = vec![0.0; nb * k * n];
                    for b in 0..nb {
                        // dB = Aᵀ · dC
                        gemm(
                            true,
                            false,
                            k,
                            n,
                            m,
                            &a.data()[b * m * k..],
                            &ctx.grad[b * m * n..],
                            &mut g[b * k * n..],
                            false,
                        );
                    }
                    g
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Adds `bias[c]` to every element whose index along `axis` is `c`.
    pub fn add_bias(&self, bias: &Tensor, axis: usize) -> Result<Tensor> {
        check_axis("add_bias", self, axis)?;
        let (outer, n, inner) = split_at_axis(self.shape(), axis);
        if bias.numel() != n {
            return Err(Error::Dimension {
                op: "add_bias",
                axis,
                expected: n,
                found: bias.numel(),
            });
        }
        let mut data = self.to_vec();
        for o in 0..outer {
            for (c, &b) in bias.data().iter().enumerate() {
                let base = (o * n + c) * inner;
                data[base..base + inner].iter_mut().for_each(|v| *v += b);
            }
        }
        Ok(Tensor::from_op(
            "add_bias",
            self.shape().to_vec(),
            data,
            vec![self.clone(), bias.clone()],
            Box::new(move |ctx| {
                let mut gb = vec![0.0; n];
                for o in 0..outer {
                    for (c, acc) in gb.iter_mut().enumerate() {
                        let base = (o * n + c) * inner;
                        *acc += ctx.grad[base..base + inner].iter().sum::<f64>();
                    }
                }
                vec![Some(ctx.grad.to_vec()), Some(gb)]
            }),
        ))
    }

    /// Softmax along `axis`, shifted by the slice maximum.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        check_axis("softmax", self, axis)?;
        let (outer, n, inner) = split_at_axis(self.shape(), axis);
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        if inner == 1 {
            for (xr, yr) in x.chunks_exact(n).zip(y.chunks_exact_mut(n)) {
                softmax_row(xr, yr);
            }
        } else {
            let mut xs = vec![0.0; n];
            let mut ys = vec![0.0; n];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * n * inner + i;
                    for c in 0..n {
                        xs[c] = x[base + c * inner];
                    }
                    softmax_row(&xs, &mut ys);
                    for c in 0..n {
                        y[base + c * inner] = ys[c];
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            "softmax",
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            Box::new(move |ctx| {
                let (y, g) = (ctx.output, ctx.grad);
                let mut dx = vec![0.0; y.len()];
                if inner == 1 {
                    for ((yr, gr), dr) in y.chunks_exact(n).zip(g.chunks_exact(n)).zip(dx.chunks_exact_mut(n)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                            *d = yv * (gv - dot);
                        }
                    }
                } else {
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * n * inner + i;
                            let dot: f64 = (0..n).map(|c| g[base + c * inner] * y[base + c * inner]).sum();
                            for c in 0..n {
                                let at = base + c * inner;
                                dx[at] = y[at] * (g[at] - dot);
                            }
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Mean along `axis`, which is removed from the shape.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        check_axis("mean_axis", self, axis)?;
        let (outer, n, inner) = split_at_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for c in 0..n {
                let base = (o * n + c) * inner;
                for i in 0..inner {
                    out[o * inner + i] += x[base + i];
                }
            }
        }
        let inv = 1.0 / n as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Ok(Tensor::from_op(
            "mean_axis",
            shape,
            out,
            vec![self.clone()],
            Box::new(move |ctx| {
                let mut g = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for c in 0..n {
                        let base = (o * n + c) * inner;
                        for i in 0..inner {
                            g[base + i] = ctx.grad[o * inner + i] * inv;
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Normalizes each slice along `axis` to zero mean and unit variance
    /// (biased estimator), then applies per-feature `gamma` and `beta`.
    pub fn layer_norm(&self, axis: usize, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        check_axis("layer_norm", self, axis)?;
        let (outer, n, inner) = split_at_axis(self.shape(), axis);
        for p in [gamma, beta] {
            if p.numel() != n {
                return Err(Error::Dimension {
                    op: "layer_norm",
                    axis,
                    expected: n,
                    found: p.numel(),
                });
            }
        }
        let x = self.data();
        let (gm, bt) = (gamma.data(), beta.data());
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; outer * inner];
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |c: usize| (o * n + c) * inner + i;
                let mean = (0..n).map(|c| x[at(c)]).sum::<f64>() / n as f64;
                let var = (0..n).map(|c| (x[at(c)] - mean).powi(2)).sum::<f64>() / n as f64;
                let r = 1.0 / (var + eps).sqrt();
                inv_std[o * inner + i] = r;
                for c in 0..n {
                    let h = (x[at(c)] - mean) * r;
                    xhat[at(c)] = h;
                    y[at(c)] = h * gm[c] + bt[c];
                }
            }
        }
        Ok(Tensor::from_op(
            "layer_norm",
            self.shape().to_vec(),
            y,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |ctx| {
                let g = ctx.grad;
                let gm = ctx.parents[1].data();
                let mut dx = vec![0.0; g.len()];
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                let nf = n as f64;
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |c: usize| (o * n + c) * inner + i;
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for c in 0..n {
                            let dh = g[at(c)] * gm[c];
                            sum_dh += dh;
                            sum_dh_h += dh * xhat[at(c)];
                            dgamma[c] += g[at(c)] * xhat[at(c)];
                            dbeta[c] += g[at(c)];
                        }
                        let r = inv_std[o * inner + i];
                        for c in 0..n {
                            let dh = g[at(c)] * gm[c];
                            dx[at(c)] = r / nf * (nf * dh - sum_dh - xhat[at(c)] * sum_dh_h);
                        }
                    }
                }
                vec![Some(dx), Some(dgamma), Some(dbeta)]
            }),
        ))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`; logits are `[B, K]`.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor> {
        let (b, k) = match self.shape() {
            [b, k] => (*b, *k),
            s => {
                return Err(Error::shape(
                    "cross_entropy",
                    format!("logits must be [batch, classes], got {s:?}"),
                ))
            }
        };
        if labels.len() != b {
            return Err(Error::Dimension {
                op: "cross_entropy",
                axis: 0,
                expected: b,
                found: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::shape(
                "cross_entropy",
                format!("label {bad} out of range for {k} classes"),
            ));
        }
        let x = self.data();
        let mut probs = vec![0.0; b * k];
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &x[r * k..(r + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + total.ln();
            loss += lse - row[label];
            for c in 0..k {
                probs[r * k + c] = (row[c] - lse).exp();
            }
        }
        loss /= b as f64;
        let labels = labels.to_vec();
        Ok(Tensor::from_op(
            "cross_entropy",
            Vec::new(),
            vec![loss],
            vec![self.clone()],
            Box::new(move |ctx| {
                let scale = ctx.grad[0] / b as f64;
                let mut g = probs.clone();
                for (r, &label) in labels.iter().enumerate() {
                    g[r * k + label] -= 1.0;
                }
                g.iter_mut().for_each(|v| *v *= scale);
                vec![Some(g)]
            }),
        ))
    }

    /// Places element `i` of `self` at flat position `index[i]` of a
    /// zero tensor of `shape`. Indices must be distinct.
    pub fn scatter(&self, shape: &[usize], index: Rc<Vec<usize>>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if index.len() != self.numel() {
            return Err(Error::shape(
                "scatter",
                format!("{} indices for {} elements", index.len(), self.numel()),
            ));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= numel) {
            return Err(Error::shape("scatter", format!("index {bad} outside {shape:?}")));
        }
        let mut out = vec![0.0; numel];
        for (&i, &v) in index.iter().zip(self.data()) {
            out[i] = v;
        }
        Ok(Tensor::from_op(
            "scatter",
            shape.to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |ctx| vec![Some(index.iter().map(|&i| ctx.grad[i]).collect())]),
        ))
    }
}

fn softmax_row(x: &[f64], y: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = (xv - max).exp();
        total += *yv;
    }
    let inv = 1.0 / total;
    y.iter_mut().for_each(|v| *v *= inv);
}

fn permute_data(src: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let nd = shape.len();
    if nd == 0 {
        return src.to_vec();
    }
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    // Stride in the source for a unit step along each output axis.
    let step: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; nd];
    let mut offset = 0usize;
    let last = nd - 1;
    if src.is_empty() {
        return out;
    }
    loop {
        // Innermost axis as a strided run.
        let s = step[last];
        for j in 0..out_shape[last] {
            out.push(src[offset + j * s]);
        }
        let mut ax = last;
        loop {
            if ax == 0 {
                return out;
            }
            ax -= 1;
            idx[ax] += 1;
            offset += step[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= step[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}
