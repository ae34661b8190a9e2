//! Forward and backward kernels for the spatial ops. All loops reduce in a
//! fixed order so results are bitwise reproducible on one platform.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvCfg {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for ConvCfg {
    fn default() -> Self {
        ConvCfg {
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }
}

impl ConvCfg {
    pub fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        ConvCfg {
            stride,
            padding,
            dilation,
        }
    }

    /// Output extent along one spatial axis, or `None` if it would be empty.
    pub fn out_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if self.stride == 0 || padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub ho: usize,
    pub wo: usize,
    pub cfg: ConvCfg,
}

impl ConvGeom {
    pub fn check<T: Scalar>(
        input: &Tensor<T>,
        weight: &Tensor<T>,
        bias: &Tensor<T>,
        cfg: ConvCfg,
    ) -> Result<Self> {
        let op = "conv2d";
        if input.shape().len() != 4 {
            return Err(Error::shape(op, "input rank", 4, input.shape().len()));
        }
        if weight.shape().len() != 4 {
            return Err(Error::shape(op, "weight rank", 4, weight.shape().len()));
        }
        let (n, cin, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
        let (cout, wcin, kh, kw) = (weight.dim(0), weight.dim(1), weight.dim(2), weight.dim(3));
        if wcin != cin {
            return Err(Error::shape(op, "input channels (Cin)", wcin, cin));
        }
        if kh != kw {
            return Err(Error::shape(op, "kernel width", kh, kw));
        }
        if bias.shape() != [cout] {
            return Err(Error::shape(op, "bias length (Cout)", cout, format!("{:?}", bias.shape())));
        }
        if cfg.stride == 0 || cfg.dilation == 0 {
            return Err(Error::invalid(op, "stride and dilation must be >= 1"));
        }
        let ho = cfg
            .out_extent(h, kh)
            .ok_or_else(|| Error::shape(op, "output height (H')", ">0", 0))?;
        let wo = cfg
            .out_extent(w, kh)
            .ok_or_else(|| Error::shape(op, "output width (W')", ">0", 0))?;
        Ok(ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            k: kh,
            ho,
            wo,
            cfg,
        })
    }

    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.cfg.stride == 1 && self.cfg.padding == 0
    }
}

fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let (k, s, p, d) = (g.k, g.cfg.stride, g.cfg.padding, g.cfg.dilation);
    let ncols = g.col_cols();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut col[row * ncols..(row + 1) * ncols];
                for oh in 0..g.ho {
                    let ih = (oh * s + ki * d) as isize - p as isize;
                    let out_row = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                    if ih < 0 || ih >= g.h as isize {
                        out_row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (ow, v) in out_row.iter_mut().enumerate() {
                        let iw = (ow * s + kj * d) as isize - p as isize;
                        *v = if iw < 0 || iw >= g.w as isize {
                            T::zero()
                        } else {
                            src[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(g: &ConvGeom, col: &[T], dx: &mut [T]) {
    let (k, s, p, d) = (g.k, g.cfg.stride, g.cfg.padding, g.cfg.dilation);
    let ncols = g.col_cols();
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &col[row * ncols..(row + 1) * ncols];
                for oh in 0..g.ho {
                    let ih = (oh * s + ki * d) as isize - p as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for ow in 0..g.wo {
                        let iw = (ow * s + kj * d) as isize - p as isize;
                        if iw >= 0 && iw < g.w as isize {
                            dst[iw as usize] = dst[iw as usize] + src[oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(
    g: &ConvGeom,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Tensor<T> {
    let in_sz = g.cin * g.h * g.w;
    let out_sz = g.cout * g.col_cols();
    let mut out = vec![T::zero(); g.n * out_sz];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.col_rows() * g.col_cols()]
    };
    for ni in 0..g.n {
        let xs = &x.data()[ni * in_sz..(ni + 1) * in_sz];
        let ys = &mut out[ni * out_sz..(ni + 1) * out_sz];
        for (co, row) in ys.chunks_mut(g.col_cols()).enumerate() {
            row.iter_mut().for_each(|v| *v = bias.data()[co]);
        }
        let src = if g.is_pointwise() {
            xs
        } else {
            im2col(g, xs, &mut col);
            &col
        };
        T::gemm(
            g.cout,
            g.col_rows(),
            g.col_cols(),
            weight.data(),
            false,
            src,
            false,
            T::one(),
            ys,
        );
    }
    Tensor::new(vec![g.n, g.cout, g.ho, g.wo], out).expect("conv output shape")
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    need_dx: bool,
) -> ConvGrads<T> {
    let in_sz = g.cin * g.h * g.w;
    let ncols = g.col_cols();
    let out_sz = g.cout * ncols;
    let mut dw = vec![T::zero(); weight.numel()];
    let mut db = vec![T::zero(); g.cout];
    let mut dx = if need_dx {
        vec![T::zero(); x.numel()]
    } else {
        Vec::new()
    };
    let pointwise = g.is_pointwise();
    let mut col = if pointwise {
        Vec::new()
    } else {
        vec![T::zero(); g.col_rows() * ncols]
    };
    let mut dcol = vec![T::zero(); g.col_rows() * ncols];
    for ni in 0..g.n {
        let xs = &x.data()[ni * in_sz..(ni + 1) * in_sz];
        let dys = &dy.data()[ni * out_sz..(ni + 1) * out_sz];
        for (co, row) in dys.chunks(ncols).enumerate() {
            db[co] = row.iter().fold(db[co], |acc, &v| acc + v);
        }
        let src = if pointwise {
            xs
        } else {
            im2col(g, xs, &mut col);
            &col
        };
        T::gemm(g.cout, ncols, g.col_rows(), dys, false, src, true, T::one(), &mut dw);
        if need_dx {
            let dxs = &mut dx[ni * in_sz..(ni + 1) * in_sz];
            if pointwise {
                T::gemm(g.col_rows(), g.cout, ncols, weight.data(), true, dys, false, T::one(), dxs);
            } else {
                T::gemm(g.col_rows(), g.cout, ncols, weight.data(), true, dys, false, T::zero(), &mut dcol);
                col2im_add(g, &dcol, dxs);
            }
        }
    }
    ConvGrads {
        dx: need_dx.then(|| Tensor::new(x.shape().to_vec(), dx).expect("dx shape")),
        dw: Tensor::new(weight.shape().to_vec(), dw).expect("dw shape"),
        db: Tensor::new(vec![g.cout], db).expect("db shape"),
    }
}

/// Windowed max over `k×k` windows; returns output and flat argmax indices into the input.
pub(crate) fn maxpool_forward<T: Scalar>(
    x: &Tensor<T>,
    k: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<u32>)> {
    let op = "maxpool2d";
    if x.shape().len() != 4 {
        return Err(Error::shape(op, "input rank", 4, x.shape().len()));
    }
    if k == 0 || stride == 0 {
        return Err(Error::invalid(op, "window and stride must be >= 1"));
    }
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    if h < k || w < k {
        return Err(Error::invalid(op, format!("window {k} larger than input {h}x{w}")));
    }
    let ho = (h - k) / stride + 1;
    let wo = (w - k) / stride + 1;
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    let xd = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = base + oh * stride * w + ow * stride;
                for ki in 0..k {
                    for kj in 0..k {
                        let idx = base + (oh * stride + ki) * w + ow * stride + kj;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                out.push(xd[best]);
                arg.push(best as u32);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, ho, wo], out)?, arg))
}

pub(crate) fn upsample_nearest<T: Scalar>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.data().chunks(h * w) {
        for i in 0..oh {
            let row = &plane[(i / factor) * w..(i / factor + 1) * w];
            for j in 0..ow {
                out.push(row[j / factor]);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out).expect("upsample shape")
}

pub(crate) fn upsample_nearest_backward<T: Scalar>(
    dy: &Tensor<T>,
    in_shape: &[usize],
    factor: usize,
) -> Tensor<T> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (oh, ow) = (h * factor, w * factor);
    let mut dx = Tensor::zeros(in_shape);
    for (plane_out, plane_in) in dy.data().chunks(oh * ow).zip(dx.data_mut().chunks_mut(h * w)) {
        for i in 0..oh {
            for j in 0..ow {
                let t = &mut plane_in[(i / factor) * w + j / factor];
                *t = *t + plane_out[i * ow + j];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_extent_matches_formula() {
        let cfg = ConvCfg::new(2, 1, 2);
        // floor((9 + 2 - 2*2 - 1)/2) + 1 = 4
        assert_eq!(cfg.out_extent(9, 3), Some(4));
        assert_eq!(ConvCfg::default().out_extent(2, 3), None);
    }

    #[test]
    fn upsample_roundtrip_sum() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[1., 2., 3., 4.]).unwrap();
        let y = upsample_nearest(&x, 2);
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert_eq!(&y.data()[..4], &[1., 1., 2., 2.]);
        let dx = upsample_nearest_backward(&Tensor::full(&[1, 1, 4, 4], 1.0), x.shape(), 2);
        assert_eq!(dx.data(), &[4., 4., 4., 4.]);
    }
}
