//! Patch extraction for convolutions, as a pair of adjoint custom ops.
//!
//! `Im2Col` maps `[N,C,H,W]` to `[N, C·k·k, Ho·Wo]` with zero "same" padding
//! and the given stride; row `c·k² + ky·k + kx` matches a `[Co,C,k,k]` kernel
//! reshaped to `[Co, C·k·k]`. `Col2Im` is its transpose and serves as the
//! backward pass (and vice versa).

use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor};

#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
}

impl Geometry {
    pub fn out_hw(&self) -> (usize, usize) {
        (self.h.div_ceil(self.stride), self.w.div_ceil(self.stride))
    }

    /// Visits every (column index, image index) pair that lies inside the image.
    #[inline]
    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let (oh, ow) = self.out_hw();
        let r = (self.k / 2) as isize;
        let plane = oh * ow;
        for ci in 0..self.c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    for oy in 0..oh {
                        let iy = (oy * self.stride) as isize + ky as isize - r;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src_row = (ci * self.h + iy as usize) * self.w;
                        let dst_row = row * plane + oy * ow;
                        for ox in 0..ow {
                            let ix = (ox * self.stride) as isize + kx as isize - r;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            f(dst_row + ox, src_row + ix as usize);
                        }
                    }
                }
            }
        }
    }

    fn image_len(&self) -> usize {
        self.c * self.h * self.w
    }

    fn cols_len(&self) -> usize {
        let (oh, ow) = self.out_hw();
        self.c * self.k * self.k * oh * ow
    }
}

fn contiguous<'a, T>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => candle_core::bail!("im2col expects a contiguous input"),
    }
}

fn gather<T: Copy + Default>(g: &Geometry, n: usize, src: &[T]) -> Vec<T> {
    let (il, cl) = (g.image_len(), g.cols_len());
    let mut out = vec![T::default(); n * cl];
    for b in 0..n {
        let s = &src[b * il..(b + 1) * il];
        let d = &mut out[b * cl..(b + 1) * cl];
        g.for_each(|di, si| d[di] = s[si]);
    }
    out
}

fn scatter<T: Copy + Default + std::ops::AddAssign>(g: &Geometry, n: usize, src: &[T]) -> Vec<T> {
    let (il, cl) = (g.image_len(), g.cols_len());
    let mut out = vec![T::default(); n * il];
    for b in 0..n {
        let s = &src[b * cl..(b + 1) * cl];
        let d = &mut out[b * il..(b + 1) * il];
        g.for_each(|si, di| d[di] += s[si]);
    }
    out
}

pub(crate) struct Im2Col(pub Geometry);
pub(crate) struct Col2Im(pub Geometry);

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = &self.0;
        let n = layout.shape().dims()[0];
        let (oh, ow) = g.out_hw();
        let shape = Shape::from((n, g.c * g.k * g.k, oh * ow));
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(gather(g, n, contiguous(v, layout)?)),
            CpuStorage::F64(v) => CpuStorage::F64(gather(g, n, contiguous(v, layout)?)),
            _ => candle_core::bail!("im2col supports f32 and f64 only"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1_no_bwd(&Col2Im(self.0))?))
    }
}

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = &self.0;
        let n = layout.shape().dims()[0];
        let shape = Shape::from((n, g.c, g.h, g.w));
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(scatter(g, n, contiguous(v, layout)?)),
            CpuStorage::F64(v) => CpuStorage::F64(scatter(g, n, contiguous(v, layout)?)),
            _ => candle_core::bail!("col2im supports f32 and f64 only"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1_no_bwd(&Im2Col(self.0))?))
    }
}
