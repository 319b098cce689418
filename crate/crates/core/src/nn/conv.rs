//! 3D convolution and transposed convolution via im2col + GEMM.

use super::Real;

/// Geometry of a cubic-kernel 3D convolution from `src` to `dst` dims.
///
/// A transposed convolution reuses the geometry of the convolution it is
/// the adjoint of: its output is `src` and its input is `dst`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub src: [usize; 3],
    pub dst: [usize; 3],
}

impl ConvGeom {
    /// Geometry of a forward convolution over `src`.
    pub fn forward(src: [usize; 3], kernel: usize, stride: usize, pad: usize) -> Option<Self> {
        let mut dst = [0; 3];
        for i in 0..3 {
            let padded = src[i] + 2 * pad;
            if padded < kernel {
                return None;
            }
            dst[i] = (padded - kernel) / stride + 1;
        }
        Some(Self {
            kernel,
            stride,
            pad,
            src,
            dst,
        })
    }

    /// Geometry whose adjoint maps `dst`-sized inputs up to `src`.
    pub fn transposed(input: [usize; 3], kernel: usize, stride: usize, pad: usize) -> Option<Self> {
        let mut src = [0; 3];
        for i in 0..3 {
            let full = (input[i].checked_sub(1)?) * stride + kernel;
            src[i] = full.checked_sub(2 * pad)?;
        }
        let geom = Self::forward(src, kernel, stride, pad)?;
        (geom.dst == input).then_some(geom)
    }

    pub fn taps(&self) -> usize {
        self.kernel * self.kernel * self.kernel
    }

    pub fn src_voxels(&self) -> usize {
        self.src.iter().product()
    }

    pub fn dst_voxels(&self) -> usize {
        self.dst.iter().product()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output voxels per im2col tile; keeps each tile's columns cache-resident.
const TILE_VOXELS: usize = 512;

/// Unfolds `x` (`channels x src`) into a `(channels * taps) x dst` matrix.
pub(crate) fn im2col<F: Real>(x: &[F], channels: usize, g: &ConvGeom) -> Vec<F> {
    let mut cols = vec![F::zero(); channels * g.taps() * g.dst_voxels()];
    im2col_slab(x, channels, g, 0..g.dst[0], &mut cols);
    cols
}

/// Adjoint of [`im2col`]: scatter-adds columns back into `channels x src`.
pub(crate) fn col2im<F: Real>(cols: &[F], channels: usize, g: &ConvGeom) -> Vec<F> {
    let mut x = vec![F::zero(); channels * g.src_voxels()];
    col2im_slab(cols, channels, g, 0..g.dst[0], &mut x);
    x
}

/// Visits every in-bounds (column, source) index pair of output slices `ds`,
/// calling `f(row, col_offset, src_offset, run)` for contiguous runs along h.
fn for_each_tap<F: FnMut(usize, usize, usize, usize)>(channels: usize, g: &ConvGeom, ds: std::ops::Range<usize>, mut f: F) {
    let [sd, sw, sh] = g.src;
    let [_, ow, oh] = g.dst;
    let k = g.kernel;
    let (s, p) = (g.stride as isize, g.pad as isize);
    let mut row = 0;
    for c in 0..channels {
        let cbase = c * sd * sw * sh;
        for kd in 0..k {
            for kw in 0..k {
                for kh in 0..k {
                    // Output h indices whose source lies inside [0, sh).
                    let kh = kh as isize;
                    let h_lo = ((p - kh).max(0) + s - 1) / s;
                    let h_hi = ((sh as isize - 1 + p - kh).div_euclid(s) + 1).clamp(0, oh as isize);
                    for d in ds.clone() {
                        let id = d as isize * s + kd as isize - p;
                        if id < 0 || id >= sd as isize {
                            continue;
                        }
                        for w in 0..ow {
                            let iw = w as isize * s + kw as isize - p;
                            if iw < 0 || iw >= sw as isize || h_lo >= h_hi {
                                continue;
                            }
                            let col = ((d - ds.start) * ow + w) * oh + h_lo as usize;
                            let src = cbase + (id as usize * sw + iw as usize) * sh;
                            let ih0 = (h_lo * s + kh - p) as usize;
                            f(row, col, src + ih0, (h_hi - h_lo) as usize);
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// im2col restricted to output slices `ds`; `cols` is `rows x (|ds| * ow * oh)`.
fn im2col_slab<F: Real>(x: &[F], channels: usize, g: &ConvGeom, ds: std::ops::Range<usize>, cols: &mut [F]) {
    let vt = ds.len() * g.dst[1] * g.dst[2];
    cols.fill(F::zero());
    let stride = g.stride;
    for_each_tap(channels, g, ds, |row, col, src, run| {
        let out = &mut cols[row * vt + col..row * vt + col + run];
        if stride == 1 {
            out.copy_from_slice(&x[src..src + run]);
        } else {
            for (i, o) in out.iter_mut().enumerate() {
                *o = x[src + i * stride];
            }
        }
    });
}

fn col2im_slab<F: Real>(cols: &[F], channels: usize, g: &ConvGeom, ds: std::ops::Range<usize>, x: &mut [F]) {
    let vt = ds.len() * g.dst[1] * g.dst[2];
    let stride = g.stride;
    for_each_tap(channels, g, ds, |row, col, src, run| {
        let inp = &cols[row * vt + col..row * vt + col + run];
        for (i, v) in inp.iter().enumerate() {
            x[src + i * stride] += *v;
        }
    });
}

/// Splits output depth into slabs of roughly [`TILE_VOXELS`] voxels.
fn slabs(g: &ConvGeom) -> impl Iterator<Item = std::ops::Range<usize>> {
    let plane = (g.dst[1] * g.dst[2]).max(1);
    let step = (TILE_VOXELS / plane).max(1);
    let od = g.dst[0];
    (0..od).step_by(step).map(move |d| d..(d + step).min(od))
}

/// `y = conv(x, w) + b`; `w` is `(cout, cin, k, k, k)`.
pub(crate) fn conv_forward<F: Real>(
    x: &[F],
    cin: usize,
    w: &[F],
    b: Option<&[F]>,
    cout: usize,
    g: &ConvGeom,
) -> Vec<F> {
    let v = g.dst_voxels();
    let r = cin * g.taps();
    let mut y = vec![F::zero(); cout * v];
    if let Some(b) = b {
        for (c, chunk) in y.chunks_mut(v).enumerate() {
            chunk.fill(b[c]);
        }
    }
    let beta = if b.is_some() { F::one() } else { F::zero() };
    if g.is_pointwise() {
        F::gemm(cout, r, v, F::one(), w, (r as isize, 1), x, (v as isize, 1), beta, &mut y, (v as isize, 1));
        return y;
    }
    let plane = g.dst[1] * g.dst[2];
    let mut cols = Vec::new();
    for ds in slabs(g) {
        let vt = ds.len() * plane;
        cols.resize(r * vt, F::zero());
        im2col_slab(x, cin, g, ds.clone(), &mut cols);
        let off = ds.start * plane;
        F::gemm(cout, r, vt, F::one(), w, (r as isize, 1), &cols, (vt as isize, 1), beta, &mut y[off..], (v as isize, 1));
    }
    y
}

/// Gradients of [`conv_forward`] with respect to input, weight and bias.
pub(crate) fn conv_backward<F: Real>(
    x: &[F],
    cin: usize,
    w: &[F],
    cout: usize,
    g: &ConvGeom,
    dy: &[F],
    need_dx: bool,
) -> (Option<Vec<F>>, Vec<F>, Vec<F>) {
    let v = g.dst_voxels();
    let r = cin * g.taps();
    let db: Vec<F> = dy.chunks(v).map(|c| c.iter().copied().sum()).collect();
    let mut dw = vec![F::zero(); cout * r];
    if g.is_pointwise() {
        // dW = dY * X^T, dX = W^T * dY
        F::gemm(cout, v, r, F::one(), dy, (v as isize, 1), x, (1, v as isize), F::zero(), &mut dw, (r as isize, 1));
        let dx = need_dx.then(|| {
            let mut dx = vec![F::zero(); r * v];
            F::gemm(r, cout, v, F::one(), w, (1, r as isize), dy, (v as isize, 1), F::zero(), &mut dx, (v as isize, 1));
            dx
        });
        return (dx, dw, db);
    }
    let plane = g.dst[1] * g.dst[2];
    let mut dx = need_dx.then(|| vec![F::zero(); cin * g.src_voxels()]);
    let (mut cols, mut dcols) = (Vec::new(), Vec::new());
    for ds in slabs(g) {
        let vt = ds.len() * plane;
        let off = ds.start * plane;
        cols.resize(r * vt, F::zero());
        im2col_slab(x, cin, g, ds.clone(), &mut cols);
        // dW += dY_tile * cols_tile^T
        F::gemm(cout, vt, r, F::one(), &dy[off..], (v as isize, 1), &cols, (1, vt as isize), F::one(), &mut dw, (r as isize, 1));
        if let Some(dx) = dx.as_mut() {
            dcols.resize(r * vt, F::zero());
            // dcols = W^T * dY_tile
            F::gemm(r, cout, vt, F::one(), w, (1, r as isize), &dy[off..], (v as isize, 1), F::zero(), &mut dcols, (vt as isize, 1));
            col2im_slab(&dcols, cin, g, ds, dx);
        }
    }
    (dx, dw, db)
}

/// Transposed convolution from `g.dst` up to `g.src`; `w` is `(cin, cout, k, k, k)`.
pub(crate) fn conv_t_forward<F: Real>(
    x: &[F],
    cin: usize,
    w: &[F],
    b: Option<&[F]>,
    cout: usize,
    g: &ConvGeom,
) -> Vec<F> {
    let vin = g.dst_voxels();
    let rows = cout * g.taps();
    let mut cols = vec![F::zero(); rows * vin];
    // cols = W^T * X
    F::gemm(rows, cin, vin, F::one(), w, (1, rows as isize), x, (vin as isize, 1), F::zero(), &mut cols, (vin as isize, 1));
    let mut y = col2im(&cols, cout, g);
    if let Some(b) = b {
        let vout = g.src_voxels();
        for (c, chunk) in y.chunks_mut(vout).enumerate() {
            for v in chunk {
                *v += b[c];
            }
        }
    }
    y
}

pub(crate) fn conv_t_backward<F: Real>(
    x: &[F],
    cin: usize,
    w: &[F],
    cout: usize,
    g: &ConvGeom,
    dy: &[F],
    need_dx: bool,
) -> (Option<Vec<F>>, Vec<F>, Vec<F>) {
    let vin = g.dst_voxels();
    let vout = g.src_voxels();
    let rows = cout * g.taps();
    let db: Vec<F> = dy.chunks(vout).map(|c| c.iter().copied().sum()).collect();
    let dcols = im2col(dy, cout, g);
    let mut dw = vec![F::zero(); cin * rows];
    // dW = X * dcols^T
    F::gemm(cin, vin, rows, F::one(), x, (vin as isize, 1), &dcols, (1, vin as isize), F::zero(), &mut dw, (rows as isize, 1));
    let dx = need_dx.then(|| {
        let mut dx = vec![F::zero(); cin * vin];
        F::gemm(cin, rows, vin, F::one(), w, (rows as isize, 1), &dcols, (vin as isize, 1), F::zero(), &mut dx, (vin as isize, 1));
        dx
    });
    (dx, dw, db)
}
