//! Raw numeric kernels over flat `(C, H, W)` planes. The autodiff graph wires
//! these together; nothing here knows about batches or gradients tapes.

/// Upper bound on the number of `f64`s held by one im2col block.
const COL_BLOCK_BUDGET: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeom {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Conv2dGeom {
    pub const fn same(kernel: usize) -> Self {
        Self {
            stride: 1,
            padding: kernel / 2,
            dilation: 1,
        }
    }

    pub const fn atrous(rate: usize) -> Self {
        Self {
            stride: 1,
            padding: rate,
            dilation: rate,
        }
    }

    pub const fn strided(kernel: usize, stride: usize) -> Self {
        Self {
            stride,
            padding: kernel / 2,
            dilation: 1,
        }
    }

    /// Output length along one axis, or `None` when the kernel does not fit.
    pub fn out_len(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span || self.stride == 0 {
            None
        } else {
            Some((padded - span) / self.stride + 1)
        }
    }

    fn is_pointwise(&self, kh: usize, kw: usize) -> bool {
        kh == 1 && kw == 1 && self.stride == 1 && self.padding == 0
    }
}

/// `c = a·b + beta·c` over strided row/column layouts.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (a_rs, a_cs): (usize, usize),
    b: &[f64],
    (b_rs, b_cs): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (c_rs, c_cs): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(last(m, k, a_rs, a_cs) < a.len(), "gemm: lhs out of bounds");
        assert!(last(k, n, b_rs, b_cs) < b.len(), "gemm: rhs out of bounds");
    }
    assert!(last(m, n, c_rs, c_cs) < c.len(), "gemm: output out of bounds");
    // SAFETY: every index touched by dgemm lies within the asserted extents above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_rs as isize,
            a_cs as isize,
            b.as_ptr(),
            b_rs as isize,
            b_cs as isize,
            beta,
            c.as_mut_ptr(),
            c_rs as isize,
            c_cs as isize,
        );
    }
}

/// Shape bundle for one convolution call on a single sample.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvShape {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub geom: Conv2dGeom,
}

impl ConvShape {
    fn k(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn rows_per_block(&self) -> usize {
        (COL_BLOCK_BUDGET / (self.k() * self.ow).max(1)).clamp(1, self.oh)
    }

    #[inline]
    fn src_index(&self, o: usize, k: usize, input: usize) -> Option<usize> {
        let pos = (o * self.geom.stride + k * self.geom.dilation) as isize - self.geom.padding as isize;
        (pos >= 0 && (pos as usize) < input).then_some(pos as usize)
    }
}

fn im2col(x: &[f64], s: &ConvShape, rows: std::ops::Range<usize>, cols: &mut [f64]) {
    let pc = rows.len() * s.ow;
    for ci in 0..s.c_in {
        let plane = &x[ci * s.h * s.w..(ci + 1) * s.h * s.w];
        for ky in 0..s.kh {
            for kx in 0..s.kw {
                let row = (ci * s.kh + ky) * s.kw + kx;
                let dst = &mut cols[row * pc..(row + 1) * pc];
                for (i, oy) in rows.clone().enumerate() {
                    let drow = &mut dst[i * s.ow..(i + 1) * s.ow];
                    match s.src_index(oy, ky, s.h) {
                        None => drow.fill(0.0),
                        Some(iy) => {
                            let src = &plane[iy * s.w..(iy + 1) * s.w];
                            for (ox, d) in drow.iter_mut().enumerate() {
                                *d = s.src_index(ox, kx, s.w).map_or(0.0, |ix| src[ix]);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], s: &ConvShape, rows: std::ops::Range<usize>, dx: &mut [f64]) {
    let pc = rows.len() * s.ow;
    for ci in 0..s.c_in {
        let plane = &mut dx[ci * s.h * s.w..(ci + 1) * s.h * s.w];
        for ky in 0..s.kh {
            for kx in 0..s.kw {
                let row = (ci * s.kh + ky) * s.kw + kx;
                let src = &cols[row * pc..(row + 1) * pc];
                for (i, oy) in rows.clone().enumerate() {
                    let Some(iy) = s.src_index(oy, ky, s.h) else {
                        continue;
                    };
                    let srow = &src[i * s.ow..(i + 1) * s.ow];
                    let drow = &mut plane[iy * s.w..(iy + 1) * s.w];
                    for (ox, v) in srow.iter().enumerate() {
                        if let Some(ix) = s.src_index(ox, kx, s.w) {
                            drow[ix] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution of one sample. `out` is `(c_out, oh, ow)`.
pub(crate) fn conv2d_forward(x: &[f64], weight: &[f64], bias: Option<&[f64]>, s: &ConvShape, out: &mut [f64]) {
    let p = s.oh * s.ow;
    let k = s.k();
    if s.geom.is_pointwise(s.kh, s.kw) {
        gemm(s.c_out, k, p, weight, (k, 1), x, (p, 1), 0.0, out, (p, 1));
    } else {
        let block = s.rows_per_block();
        let mut cols = vec![0.0; k * block * s.ow];
        let mut oy = 0;
        while oy < s.oh {
            let end = (oy + block).min(s.oh);
            let pc = (end - oy) * s.ow;
            im2col(x, s, oy..end, &mut cols[..k * pc]);
            gemm(s.c_out, k, pc, weight, (k, 1), &cols[..k * pc], (pc, 1), 0.0, &mut out[oy * s.ow..], (p, 1));
            oy = end;
        }
    }
    if let Some(b) = bias {
        for (co, bv) in b.iter().enumerate() {
            for v in &mut out[co * p..(co + 1) * p] {
                *v += bv;
            }
        }
    }
}

/// Backward convolution of one sample; accumulates into the provided gradients.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    x: &[f64],
    weight: &[f64],
    dout: &[f64],
    s: &ConvShape,
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let p = s.oh * s.ow;
    let k = s.k();
    if let Some(db) = db {
        for (co, g) in db.iter_mut().enumerate() {
            *g += dout[co * p..(co + 1) * p].iter().sum::<f64>();
        }
    }
    if s.geom.is_pointwise(s.kh, s.kw) {
        if let Some(dw) = dw {
            gemm(s.c_out, p, k, dout, (p, 1), x, (1, p), 1.0, dw, (k, 1));
        }
        if let Some(dx) = dx {
            gemm(k, s.c_out, p, weight, (1, k), dout, (p, 1), 1.0, dx, (p, 1));
        }
        return;
    }
    let block = s.rows_per_block();
    let mut cols = vec![0.0; k * block * s.ow];
    let mut dw = dw;
    let mut dx = dx;
    let mut oy = 0;
    while oy < s.oh {
        let end = (oy + block).min(s.oh);
        let pc = (end - oy) * s.ow;
        let dblock = &dout[oy * s.ow..];
        if let Some(dw) = dw.as_deref_mut() {
            im2col(x, s, oy..end, &mut cols[..k * pc]);
            gemm(s.c_out, pc, k, dblock, (p, 1), &cols[..k * pc], (1, pc), 1.0, dw, (k, 1));
        }
        if let Some(dx) = dx.as_deref_mut() {
            gemm(k, s.c_out, pc, weight, (1, k), dblock, (p, 1), 0.0, &mut cols[..k * pc], (pc, 1));
            col2im(&cols[..k * pc], s, oy..end, dx);
        }
        oy = end;
    }
}

/// Half-pixel-centred bilinear taps along one axis: `(lo, hi, weight_of_hi)`.
pub(crate) fn bilinear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

pub(crate) fn resize_plane(src: &[f64], w: usize, ty: &[(usize, usize, f64)], tx: &[(usize, usize, f64)], out: &mut [f64]) {
    let ow = tx.len();
    for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
        for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
            let top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
            let bottom = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
            out[oy * ow + ox] = top * (1.0 - wy) + bottom * wy;
        }
    }
}

pub(crate) fn resize_plane_backward(
    dout: &[f64],
    w: usize,
    ty: &[(usize, usize, f64)],
    tx: &[(usize, usize, f64)],
    dsrc: &mut [f64],
) {
    let ow = tx.len();
    for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
        for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
            let g = dout[oy * ow + ox];
            dsrc[y0 * w + x0] += g * (1.0 - wy) * (1.0 - wx);
            dsrc[y0 * w + x1] += g * (1.0 - wy) * wx;
            dsrc[y1 * w + x0] += g * wy * (1.0 - wx);
            dsrc[y1 * w + x1] += g * wy * wx;
        }
    }
}
