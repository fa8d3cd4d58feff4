//! Direct convolution kernels over NCHW buffers.
//!
//! Batch samples are processed in parallel; kernel-gradient partials are
//! produced per sample and reduced in sample order so results do not depend
//! on thread scheduling.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding keeping `ceil(size / stride)` outputs; an odd total pad
    /// puts the extra pixel on the bottom/right.
    Same,
    Valid,
}

/// Output extent and leading pad along one spatial axis.
pub fn axis_geometry(size: usize, k: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = size.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(size);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if size < k {
                return Err(Error::shape(
                    "conv",
                    format!("valid padding needs input {size} >= kernel {k}"),
                ));
            }
            Ok(((size - k) / stride + 1, 0))
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    pub n: usize,
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub pt: usize,
    pub pl: usize,
}

impl Geometry {
    pub fn new(
        op: &'static str,
        input: [usize; 4],
        kernel: [usize; 4],
        depthwise: bool,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let [n, ci, h, w] = input;
        let [ko, kc, kh, kw] = kernel;
        if !(stride == 1 || stride == 2) {
            return Err(Error::shape(op, format!("stride must be 1 or 2, got {stride}")));
        }
        if depthwise {
            if ko != ci || kc != 1 {
                return Err(Error::shape(
                    op,
                    format!("depthwise kernel {kernel:?} incompatible with {ci} input channels"),
                ));
            }
        } else if kc != ci {
            return Err(Error::shape(
                op,
                format!("kernel expects {kc} input channels, input has {ci}"),
            ));
        }
        let (oh, pt) = axis_geometry(h, kh, stride, padding)?;
        let (ow, pl) = axis_geometry(w, kw, stride, padding)?;
        Ok(Geometry {
            n,
            ci,
            h,
            w,
            co: ko,
            kh,
            kw,
            oh,
            ow,
            stride,
            pt,
            pl,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.co, self.oh, self.ow]
    }

    /// Output positions `[lo, hi)` whose input coordinate `o*stride + tap - pad`
    /// falls inside `[0, size)`.
    #[inline]
    fn valid_range(out: usize, size: usize, tap: usize, pad: usize, stride: usize) -> (usize, usize) {
        let lo = if pad > tap { (pad - tap).div_ceil(stride) } else { 0 };
        let hi = if size + pad > tap {
            ((size + pad - tap - 1) / stride + 1).min(out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

/// Accumulates `wv * src[..]` (strided gather) into `dst[lo..hi]`.
#[inline]
fn axpy_row<T: Scalar>(dst: &mut [T], src: &[T], wv: T, lo: usize, hi: usize, start: usize, stride: usize) {
    if stride == 1 {
        for (d, s) in dst[lo..hi].iter_mut().zip(&src[start..start + (hi - lo)]) {
            *d += wv * *s;
        }
    } else {
        for (i, d) in dst[lo..hi].iter_mut().enumerate() {
            *d += wv * src[start + i * stride];
        }
    }
}

/// Scatter-add counterpart of [`axpy_row`].
#[inline]
fn axpy_row_scatter<T: Scalar>(dst: &mut [T], src: &[T], wv: T, lo: usize, hi: usize, start: usize, stride: usize) {
    if stride == 1 {
        for (d, s) in dst[start..start + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
            *d += wv * *s;
        }
    } else {
        for (i, s) in src[lo..hi].iter().enumerate() {
            dst[start + i * stride] += wv * *s;
        }
    }
}

#[inline]
fn dot_row<T: Scalar>(a: &[T], b: &[T], lo: usize, hi: usize, start: usize, stride: usize) -> T {
    let mut acc = T::zero();
    if stride == 1 {
        for (x, y) in a[lo..hi].iter().zip(&b[start..start + (hi - lo)]) {
            acc += *x * *y;
        }
    } else {
        for (i, x) in a[lo..hi].iter().enumerate() {
            acc += *x * b[start + i * stride];
        }
    }
    acc
}

/// Visits every (output row, input row, column range) triple for one kernel tap.
#[inline]
fn for_tap(g: &Geometry, i: usize, j: usize, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
    let (ylo, yhi) = Geometry::valid_range(g.oh, g.h, i, g.pt, g.stride);
    let (xlo, xhi) = Geometry::valid_range(g.ow, g.w, j, g.pl, g.stride);
    if xlo >= xhi {
        return;
    }
    for y in ylo..yhi {
        let iy = y * g.stride + i - g.pt;
        let ix0 = xlo * g.stride + j - g.pl;
        f(y, iy, xlo, xhi, ix0);
    }
}

fn sample_forward<T: Scalar>(g: &Geometry, depthwise: bool, x: &[T], k: &[T], out: &mut [T]) {
    let (hw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.kh * g.kw);
    for o in 0..g.co {
        let out_o = &mut out[o * ohw..(o + 1) * ohw];
        let channels = if depthwise { o..o + 1 } else { 0..g.ci };
        for c in channels {
            let xc = &x[c * hw..(c + 1) * hw];
            let kbase = if depthwise { o * kk } else { (o * g.ci + c) * kk };
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let wv = k[kbase + i * g.kw + j];
                    for_tap(g, i, j, |y, iy, lo, hi, ix0| {
                        axpy_row(
                            &mut out_o[y * g.ow..(y + 1) * g.ow],
                            &xc[iy * g.w..(iy + 1) * g.w],
                            wv,
                            lo,
                            hi,
                            ix0,
                            g.stride,
                        );
                    });
                }
            }
        }
    }
}

fn sample_backward<T: Scalar>(
    g: &Geometry,
    depthwise: bool,
    x: &[T],
    k: &[T],
    dy: &[T],
    dx: Option<&mut [T]>,
    dk: Option<&mut [T]>,
) {
    let (hw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.kh * g.kw);
    let mut dx = dx;
    let mut dk = dk;
    for o in 0..g.co {
        let dy_o = &dy[o * ohw..(o + 1) * ohw];
        let channels = if depthwise { o..o + 1 } else { 0..g.ci };
        for c in channels {
            let kbase = if depthwise { o * kk } else { (o * g.ci + c) * kk };
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let ki = kbase + i * g.kw + j;
                    if let Some(dx) = dx.as_deref_mut() {
                        let wv = k[ki];
                        let dxc = &mut dx[c * hw..(c + 1) * hw];
                        for_tap(g, i, j, |y, iy, lo, hi, ix0| {
                            axpy_row_scatter(
                                &mut dxc[iy * g.w..(iy + 1) * g.w],
                                &dy_o[y * g.ow..(y + 1) * g.ow],
                                wv,
                                lo,
                                hi,
                                ix0,
                                g.stride,
                            );
                        });
                    }
                    if let Some(dk) = dk.as_deref_mut() {
                        let xc = &x[c * hw..(c + 1) * hw];
                        let mut acc = T::zero();
                        for_tap(g, i, j, |y, iy, lo, hi, ix0| {
                            acc += dot_row(
                                &dy_o[y * g.ow..(y + 1) * g.ow],
                                &xc[iy * g.w..(iy + 1) * g.w],
                                lo,
                                hi,
                                ix0,
                                g.stride,
                            );
                        });
                        dk[ki] += acc;
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Scalar>(g: &Geometry, depthwise: bool, x: &[T], k: &[T]) -> Vec<T> {
    let (in_len, out_len) = (g.ci * g.h * g.w, g.co * g.oh * g.ow);
    let mut out = vec![T::zero(); g.n * out_len];
    out.par_chunks_mut(out_len)
        .zip(x.par_chunks(in_len))
        .for_each(|(o, xs)| sample_forward(g, depthwise, xs, k, o));
    out
}

/// Returns `(d input, d kernel)`, each only when requested.
pub(crate) fn backward<T: Scalar>(
    g: &Geometry,
    depthwise: bool,
    x: &[T],
    k: &[T],
    dy: &[T],
    want_dx: bool,
    want_dk: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (in_len, out_len) = (g.ci * g.h * g.w, g.co * g.oh * g.ow);
    let klen = k.len();
    let mut dx = if want_dx { Some(vec![T::zero(); g.n * in_len]) } else { None };
    let mut partials = if want_dk { Some(vec![T::zero(); g.n * klen]) } else { None };

    let samples: Vec<(usize, Option<&mut [T]>, Option<&mut [T]>)> = {
        let dx_chunks: Vec<Option<&mut [T]>> = match dx.as_mut() {
            Some(v) => v.chunks_mut(in_len).map(Some).collect(),
            None => (0..g.n).map(|_| None).collect(),
        };
        let dk_chunks: Vec<Option<&mut [T]>> = match partials.as_mut() {
            Some(v) => v.chunks_mut(klen).map(Some).collect(),
            None => (0..g.n).map(|_| None).collect(),
        };
        dx_chunks
            .into_iter()
            .zip(dk_chunks)
            .enumerate()
            .map(|(n, (a, b))| (n, a, b))
            .collect()
    };
    samples.into_par_iter().for_each(|(n, dxs, dks)| {
        sample_backward(
            g,
            depthwise,
            &x[n * in_len..(n + 1) * in_len],
            k,
            &dy[n * out_len..(n + 1) * out_len],
            dxs,
            dks,
        );
    });

    let dk = partials.map(|p| {
        let mut acc = vec![T::zero(); klen];
        for chunk in p.chunks(klen) {
            for (a, v) in acc.iter_mut().zip(chunk) {
                *a += *v;
            }
        }
        acc
    });
    (dx, dk)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_puts_extra_pixel_bottom_right() {
        // 14 wide, 5 taps, stride 2: 7 outputs, 3 pad -> 1 before, 2 after.
        assert_eq!(axis_geometry(14, 5, 2, Padding::Same).unwrap(), (7, 1));
        assert_eq!(axis_geometry(14, 3, 2, Padding::Same).unwrap(), (7, 0));
        assert_eq!(axis_geometry(7, 5, 1, Padding::Same).unwrap(), (7, 2));
        assert_eq!(axis_geometry(7, 3, 1, Padding::Valid).unwrap(), (5, 0));
        assert!(axis_geometry(2, 3, 1, Padding::Valid).is_err());
    }

    #[test]
    fn valid_range_matches_bruteforce() {
        for size in 1usize..9 {
            for k in 1..6 {
                for stride in 1..3 {
                    for pad in 0..3 {
                        let out = (size + 2 * pad).saturating_sub(k) / stride + 1;
                        for tap in 0..k {
                            let (lo, hi) = Geometry::valid_range(out, size, tap, pad, stride);
                            let expect: Vec<usize> = (0..out)
                                .filter(|&o| {
                                    let p = (o * stride + tap) as isize - pad as isize;
                                    p >= 0 && (p as usize) < size
                                })
                                .collect();
                            let got: Vec<usize> = (lo..hi).collect();
                            assert_eq!(got, expect, "size {size} k {k} s {stride} pad {pad} tap {tap}");
                        }
                    }
                }
            }
        }
    }
}
