//! Raw numeric kernels behind the graph ops: GEMM, im2col convolution and pooling.

/// `c = alpha * a · b + beta * c` with explicit row/column strides (in elements).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    assert!(k == 0 || last(m, k, rsa, csa) < a.len(), "gemm: lhs out of bounds");
    assert!(k == 0 || last(k, n, rsb, csb) < b.len(), "gemm: rhs out of bounds");
    assert!(last(m, n, rsc, csc) < c.len(), "gemm: output out of bounds");
    // SAFETY: every index the kernel can touch was bounds-checked above, and
    // `c` is a unique borrow that cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub height: usize,
    pub width: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.height + 2 * self.pad + 1 - self.kh
    }

    pub fn out_w(&self) -> usize {
        self.width + 2 * self.pad + 1 - self.kw
    }

    fn patch(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// Unfold one sample `[C, H, W]` into `[C*kh*kw, oh*ow]`.
fn im2col(g: &ConvGeom, input: &[f64], cols: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for c in 0..g.in_ch {
        let src = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = oy + ki;
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < g.pad || iy - g.pad >= g.height {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src_row = &src[(iy - g.pad) * g.width..(iy - g.pad + 1) * g.width];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = ox + kj;
                        *o = if ix < g.pad || ix - g.pad >= g.width {
                            0.0
                        } else {
                            src_row[ix - g.pad]
                        };
                    }
                }
            }
        }
    }
}

/// Fold `[C*kh*kw, oh*ow]` columns back onto a `[C, H, W]` gradient, accumulating.
fn col2im(g: &ConvGeom, cols: &[f64], out: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for c in 0..g.in_ch {
        let dst = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = oy + ki;
                    if iy < g.pad || iy - g.pad >= g.height {
                        continue;
                    }
                    let dst_row = &mut dst[(iy - g.pad) * g.width..(iy - g.pad + 1) * g.width];
                    for ox in 0..ow {
                        let ix = ox + kj;
                        if ix >= g.pad && ix - g.pad < g.width {
                            dst_row[ix - g.pad] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, input: &[f64], weight: &[f64]) -> Vec<f64> {
    let patch = g.patch();
    let plane = g.out_plane();
    let in_sample = g.in_ch * g.height * g.width;
    let out_sample = g.out_ch * plane;
    let mut out = vec![0.0; g.batch * out_sample];
    let mut cols = vec![0.0; patch * plane];
    for b in 0..g.batch {
        im2col(g, &input[b * in_sample..(b + 1) * in_sample], &mut cols);
        gemm(
            g.out_ch,
            patch,
            plane,
            1.0,
            weight,
            (patch, 1),
            &cols,
            (plane, 1),
            0.0,
            &mut out[b * out_sample..(b + 1) * out_sample],
            (plane, 1),
        );
    }
    out
}

/// Returns `(grad_input, grad_weight)`; either is skipped when not requested.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    need_input: bool,
    need_weight: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let patch = g.patch();
    let plane = g.out_plane();
    let in_sample = g.in_ch * g.height * g.width;
    let out_sample = g.out_ch * plane;
    let mut grad_in = need_input.then(|| vec![0.0; g.batch * in_sample]);
    let mut grad_w = need_weight.then(|| vec![0.0; weight.len()]);
    let mut cols = vec![0.0; patch * plane];
    for b in 0..g.batch {
        let go = &grad_out[b * out_sample..(b + 1) * out_sample];
        if let Some(gw) = grad_w.as_mut() {
            im2col(g, &input[b * in_sample..(b + 1) * in_sample], &mut cols);
            // gw[O, P] += go[O, L] · cols[P, L]^T
            gemm(g.out_ch, plane, patch, 1.0, go, (plane, 1), &cols, (1, plane), 1.0, gw, (patch, 1));
        }
        if let Some(gi) = grad_in.as_mut() {
            // dcols[P, L] = weight[O, P]^T · go[O, L]
            gemm(patch, g.out_ch, plane, 1.0, weight, (1, patch), go, (plane, 1), 0.0, &mut cols, (plane, 1));
            col2im(g, &cols, &mut gi[b * in_sample..(b + 1) * in_sample]);
        }
    }
    (grad_in, grad_w)
}

/// 2×2 average pooling with stride 2 over `[N, H, W]` planes (`planes = N`).
pub(crate) fn avg_pool2_forward(planes: usize, h: usize, w: usize, input: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &input[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                let i = 2 * y * w + 2 * x;
                dst[y * ow + x] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward(planes: usize, h: usize, w: usize, grad_out: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut grad = vec![0.0; planes * h * w];
    for p in 0..planes {
        let src = &grad_out[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut grad[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let g = 0.25 * src[y * ow + x];
                let i = 2 * y * w + 2 * x;
                dst[i] = g;
                dst[i + 1] = g;
                dst[i + w] = g;
                dst[i + w + 1] = g;
            }
        }
    }
    grad
}
