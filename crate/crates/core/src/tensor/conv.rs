//! Stride-1 cross-correlation over two or three spatial axes via im2col + GEMM.
//!
//! 2-D convolution runs through the same kernels with a unit depth axis.

use super::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    c_in: usize,
    c_out: usize,
    groups: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    pad: [usize; 3],
    output: [usize; 3],
}

impl Geometry {
    fn c_in_group(&self) -> usize {
        self.c_in / self.groups
    }

    fn c_out_group(&self) -> usize {
        self.c_out / self.groups
    }

    fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    fn in_volume(&self) -> usize {
        self.input.iter().product()
    }

    fn out_volume(&self) -> usize {
        self.output.iter().product()
    }

    /// 1×1(×1) kernel without padding: the input slice already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.pad == [0, 0, 0]
    }

    fn col_rows(&self) -> usize {
        self.c_in_group() * self.kernel_volume()
    }
}

#[allow(clippy::too_many_arguments)]
fn geometry(
    op: &'static str,
    x_shape: &[usize],
    w_shape: &[usize],
    bias: Option<&Tensor>,
    spatial: usize,
    pad: [usize; 3],
    groups: usize,
) -> Result<Geometry> {
    let rank = 2 + spatial;
    if x_shape.len() != rank {
        return Err(Error::shape(op, format!("input must have rank {rank}, got {x_shape:?}")));
    }
    if w_shape.len() != rank {
        return Err(Error::shape(op, format!("weight must have rank {rank}, got {w_shape:?}")));
    }
    if groups == 0 || x_shape[1] % groups != 0 {
        return Err(Error::shape(
            op,
            format!("{} input channels not divisible by {groups} groups", x_shape[1]),
        ));
    }
    let c_out = w_shape[0];
    if c_out % groups != 0 {
        return Err(Error::shape(
            op,
            format!("{c_out} output channels not divisible by {groups} groups"),
        ));
    }
    if w_shape[1] * groups != x_shape[1] {
        return Err(Error::Dimension {
            op,
            axis: 1,
            expected: x_shape[1] / groups,
            found: w_shape[1],
        });
    }
    if let Some(b) = bias {
        if b.numel() != c_out {
            return Err(Error::Dimension {
                op,
                axis: 0,
                expected: c_out,
                found: b.numel(),
            });
        }
    }
    let mut input = [1; 3];
    let mut kernel = [1; 3];
    let mut output = [1; 3];
    let off = 3 - spatial;
    for s in 0..spatial {
        let i = x_shape[2 + s];
        let k = w_shape[2 + s];
        let p = pad[off + s];
        if k == 0 || k > i + 2 * p {
            return Err(Error::shape(
                op,
                format!(
                    "kernel extent {k} does not fit padded input extent {} on axis {}",
                    i + 2 * p,
                    2 + s
                ),
            ));
        }
        input[off + s] = i;
        kernel[off + s] = k;
        output[off + s] = i + 2 * p - k + 1;
    }
    Ok(Geometry {
        batch: x_shape[0],
        c_in: x_shape[1],
        c_out,
        groups,
        input,
        kernel,
        pad,
        output,
    })
}

/// 2-D cross-correlation. `input` is `[B, C_in, H, W]`, `weight` is
/// `[C_out, C_in / groups, kh, kw]`, output is `[B, C_out, H + 2ph - kh + 1, …]`.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    padding: (usize, usize),
    groups: usize,
) -> Result<Tensor> {
    let g = geometry(
        "conv2d",
        input.shape(),
        weight.shape(),
        bias,
        2,
        [0, padding.0, padding.1],
        groups,
    )?;
    let shape = vec![g.batch, g.c_out, g.output[1], g.output[2]];
    Ok(convolve("conv2d", g, shape, input, weight, bias))
}

/// 3-D cross-correlation. `input` is `[B, C_in, D, H, W]`, `weight` is
/// `[C_out, C_in, kd, kh, kw]`.
pub fn conv3d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    padding: (usize, usize, usize),
) -> Result<Tensor> {
    let g = geometry(
        "conv3d",
        input.shape(),
        weight.shape(),
        bias,
        3,
        [padding.0, padding.1, padding.2],
        1,
    )?;
    let shape = vec![g.batch, g.c_out, g.output[0], g.output[1], g.output[2]];
    Ok(convolve("conv3d", g, shape, input, weight, bias))
}

fn convolve(
    op: &'static str,
    g: Geometry,
    shape: Vec<usize>,
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
) -> Tensor {
    let out = forward(&g, input.data(), weight.data(), bias.map(Tensor::data));
    let mut parents = vec![input.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Tensor::from_op(
        op,
        shape,
        out,
        parents,
        Box::new(move |ctx| {
            let (x, w) = (&ctx.parents[0], &ctx.parents[1]);
            let (dx, dw) = backward(
                &g,
                x.data(),
                w.data(),
                ctx.grad,
                x.requires_grad(),
                w.requires_grad(),
            );
            let mut grads = vec![dx, dw];
            if let Some(b) = ctx.parents.get(2) {
                grads.push(b.requires_grad().then(|| bias_grad(&g, ctx.grad)));
            }
            grads
        }),
    )
}

fn forward(g: &Geometry, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (cig, cog) = (g.c_in_group(), g.c_out_group());
    let (iv, ov, rows) = (g.in_volume(), g.out_volume(), g.col_rows());
    let mut out = vec![0.0; g.batch * g.c_out * ov];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; rows * ov] };
    for b in 0..g.batch {
        for grp in 0..g.groups {
            let x_g = &x[(b * g.c_in + grp * cig) * iv..][..cig * iv];
            let col: &[f64] = if g.is_pointwise() {
                x_g
            } else {
                im2col(g, x_g, &mut cols);
                &cols
            };
            let w_g = &w[grp * cog * rows..][..cog * rows];
            let o = &mut out[(b * g.c_out + grp * cog) * ov..][..cog * ov];
            gemm(false, false, cog, ov, rows, w_g, col, o, false);
        }
        if let Some(bias) = bias {
            for (c, &bv) in bias.iter().enumerate() {
                out[(b * g.c_out + c) * ov..][..ov].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

fn backward(
    g: &Geometry,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (cig, cog) = (g.c_in_group(), g.c_out_group());
    let (iv, ov, rows) = (g.in_volume(), g.out_volume(), g.col_rows());
    let mut dx = need_dx.then(|| vec![0.0; x.len()]);
    let mut dw = need_dw.then(|| vec![0.0; w.len()]);
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![0.0; rows * ov] };
    let mut dcols = if pointwise { Vec::new() } else { vec![0.0; rows * ov] };
    for b in 0..g.batch {
        for grp in 0..g.groups {
            let in_off = (b * g.c_in + grp * cig) * iv;
            let dy_g = &dy[(b * g.c_out + grp * cog) * ov..][..cog * ov];
            let w_g = &w[grp * cog * rows..][..cog * rows];
            if let Some(dw) = dw.as_mut() {
                let x_g = &x[in_off..][..cig * iv];
                let col: &[f64] = if pointwise {
                    x_g
                } else {
                    im2col(g, x_g, &mut cols);
                    &cols
                };
                let dw_g = &mut dw[grp * cog * rows..][..cog * rows];
                gemm(false, true, cog, rows, ov, dy_g, col, dw_g, true);
            }
            if let Some(dx) = dx.as_mut() {
                let dx_g = &mut dx[in_off..][..cig * iv];
                if pointwise {
                    gemm(true, false, rows, ov, cog, w_g, dy_g, dx_g, true);
                } else {
                    gemm(true, false, rows, ov, cog, w_g, dy_g, &mut dcols, false);
                    col2im(g, &dcols, dx_g);
                }
            }
        }
    }
    (dx, dw)
}

fn bias_grad(g: &Geometry, dy: &[f64]) -> Vec<f64> {
    let ov = g.out_volume();
    let mut db = vec![0.0; g.c_out];
    for b in 0..g.batch {
        for (c, acc) in db.iter_mut().enumerate() {
            *acc += dy[(b * g.c_out + c) * ov..][..ov].iter().sum::<f64>();
        }
    }
    db
}

/// Valid output range `[lo, hi)` along one axis for kernel offset `k`:
/// positions whose source index `o + k - pad` lies in `[0, n)`.
fn valid_range(n: usize, out: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (n + pad).saturating_sub(k).min(out);
    (lo, hi.max(lo))
}

/// Columns: row `(c, a, i, j)`, column `(z, y, x)`; out-of-range taps are zero.
fn im2col(g: &Geometry, x: &[f64], cols: &mut [f64]) {
    let [d, h, w] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [pd, ph, pw] = g.pad;
    let [od, oh, ow] = g.output;
    let ov = od * oh * ow;
    let mut row = 0;
    for c in 0..g.c_in_group() {
        let xc = &x[c * d * h * w..][..d * h * w];
        for a in 0..kd {
            let (z0, z1) = valid_range(d, od, a, pd);
            for i in 0..kh {
                let (y0, y1) = valid_range(h, oh, i, ph);
                for j in 0..kw {
                    let (x0, x1) = valid_range(w, ow, j, pw);
                    let dst = &mut cols[row * ov..][..ov];
                    for z in 0..od {
                        let plane = &mut dst[z * oh * ow..][..oh * ow];
                        if z < z0 || z >= z1 {
                            plane.fill(0.0);
                            continue;
                        }
                        let sz = z + a - pd;
                        for y in 0..oh {
                            let out_row = &mut plane[y * ow..][..ow];
                            if y < y0 || y >= y1 {
                                out_row.fill(0.0);
                                continue;
                            }
                            let sy = y + i - ph;
                            let src = &xc[(sz * h + sy) * w..][..w];
                            out_row[..x0].fill(0.0);
                            out_row[x1..].fill(0.0);
                            out_row[x0..x1].copy_from_slice(&src[x0 + j - pw..x1 + j - pw]);
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates column gradients back into `dx`.
fn col2im(g: &Geometry, cols: &[f64], dx: &mut [f64]) {
    let [d, h, w] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [pd, ph, pw] = g.pad;
    let [od, oh, ow] = g.output;
    let ov = od * oh * ow;
    let mut row = 0;
    for c in 0..g.c_in_group() {
        let dxc = &mut dx[c * d * h * w..][..d * h * w];
        for a in 0..kd {
            let (z0, z1) = valid_range(d, od, a, pd);
            for i in 0..kh {
                let (y0, y1) = valid_range(h, oh, i, ph);
                for j in 0..kw {
                    let (x0, x1) = valid_range(w, ow, j, pw);
                    let src = &cols[row * ov..][..ov];
                    for z in z0..z1 {
                        let sz = z + a - pd;
                        for y in y0..y1 {
                            let sy = y + i - ph;
                            let dst = &mut dxc[(sz * h + sy) * w..][..w];
                            let in_row = &src[(z * oh + y) * ow..][..ow];
                            for (d, s) in dst[x0 + j - pw..x1 + j - pw].iter_mut().zip(&in_row[x0..x1]) {
                                *d += s;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}
