//! Layer primitives: convolution, transposed convolution, activations,
//! pooling and dense projections.
//!
//! The tape records these through [`Tape`](crate::Tape) methods; the free
//! functions here evaluate a single layer eagerly on plain tensors.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::linalg::{col2im, gemm, im2col, Window};
use crate::tape::Tape;
use crate::tensor::{Real, Tensor};

/// Transposed convolutions always use a 3×3 kernel with stride 2.
pub const CONV_T_KERNEL: usize = 3;
pub const CONV_T_STRIDE: usize = 2;

/// Weights of a "same"-padded square convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dParams<T> {
    /// `[out_ch, in_ch, k, k]`
    pub weight: Tensor<T>,
    /// `[out_ch]`
    pub bias: Tensor<T>,
    pub stride: usize,
}

impl<T: Real> Conv2dParams<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, stride: usize) -> Result<Self> {
        check_conv_weights(weight.shape(), bias.shape(), stride)?;
        Ok(Conv2dParams { weight, bias, stride })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Weights of a 3×3, stride-2 transposed convolution that doubles resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvT2dParams<T> {
    /// `[in_ch, out_ch, 3, 3]`
    pub weight: Tensor<T>,
    /// `[out_ch]`
    pub bias: Tensor<T>,
}

impl<T: Real> ConvT2dParams<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        check_conv_t_weights(weight.shape(), bias.shape())?;
        Ok(ConvT2dParams { weight, bias })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

pub(crate) fn check_conv_weights(w: &[usize], b: &[usize], stride: usize) -> Result<()> {
    if w.len() != 4 || w[2] != w[3] {
        return Err(shape_err!("conv weight must be [out, in, k, k], got {:?}", w));
    }
    if w[2] % 2 == 0 {
        return Err(shape_err!("conv kernel must be odd, got {}", w[2]));
    }
    if b != [w[0]] {
        return Err(shape_err!("conv bias must be [{}], got {:?}", w[0], b));
    }
    if stride == 0 {
        return Err(shape_err!("conv stride must be positive"));
    }
    Ok(())
}

pub(crate) fn check_conv_t_weights(w: &[usize], b: &[usize]) -> Result<()> {
    if w.len() != 4 || w[2] != CONV_T_KERNEL || w[3] != CONV_T_KERNEL {
        return Err(shape_err!("transposed conv weight must be [in, out, 3, 3], got {:?}", w));
    }
    if b != [w[1]] {
        return Err(shape_err!("transposed conv bias must be [{}], got {:?}", w[1], b));
    }
    Ok(())
}

fn image_dims(x: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    match *x {
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => Err(shape_err!("{} input must be [B, C, H, W], got {:?}", what, x)),
    }
}

/// Output of a convolution forward pass plus what its backward needs.
pub(crate) struct ConvForward<T> {
    pub out: Tensor<T>,
    pub cols: Vec<T>,
    pub win: Window,
}

pub(crate) fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
) -> Result<ConvForward<T>> {
    check_conv_weights(w.shape(), b.shape(), stride)?;
    let (batch, c, h, wd) = image_dims(x.shape(), "conv2d")?;
    let (oc, ic, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    if c != ic {
        return Err(shape_err!("conv2d expects {} input channels, got {}", ic, c));
    }
    if h < k || wd < k {
        return Err(shape_err!("conv2d input {}x{} smaller than kernel {}", h, wd, k));
    }
    let win = Window {
        channels: c,
        in_h: h,
        in_w: wd,
        kernel: k,
        stride,
        pad: k / 2,
        out_h: (h - 1) / stride + 1,
        out_w: (wd - 1) / stride + 1,
    };
    let (rows, ncols) = (win.col_rows(), win.col_cols());
    let mut cols = vec![T::zero(); batch * rows * ncols];
    let mut out = vec![T::zero(); batch * oc * ncols];
    let img_len = c * h * wd;
    for i in 0..batch {
        let col = &mut cols[i * rows * ncols..(i + 1) * rows * ncols];
        im2col(&x.data()[i * img_len..(i + 1) * img_len], &win, col);
        let dst = &mut out[i * oc * ncols..(i + 1) * oc * ncols];
        for (o, plane) in dst.chunks_exact_mut(ncols).enumerate() {
            plane.fill(b.data()[o]);
        }
        gemm(false, false, oc, rows, ncols, w.data(), col, dst, true);
    }
    let out = Tensor::new(&[batch, oc, win.out_h, win.out_w], out)?;
    Ok(ConvForward { out, cols, win })
}

/// Gradients of a convolution w.r.t. (input, weight, bias).
pub(crate) fn conv2d_backward<T: Real>(
    x_shape: &[usize],
    w: &Tensor<T>,
    cols: &[T],
    win: &Window,
    dout: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let batch = x_shape[0];
    let oc = w.shape()[0];
    let (rows, ncols) = (win.col_rows(), win.col_cols());
    let img_len = win.channels * win.in_h * win.in_w;
    let mut dx = vec![T::zero(); batch * img_len];
    let mut dw = vec![T::zero(); w.len()];
    let mut db = vec![T::zero(); oc];
    let mut dcols = vec![T::zero(); rows * ncols];
    for i in 0..batch {
        let g = &dout.data()[i * oc * ncols..(i + 1) * oc * ncols];
        let col = &cols[i * rows * ncols..(i + 1) * rows * ncols];
        gemm(false, true, oc, ncols, rows, g, col, &mut dw, true);
        for (o, plane) in g.chunks_exact(ncols).enumerate() {
            db[o] += plane.iter().copied().sum::<T>();
        }
        gemm(true, false, rows, oc, ncols, w.data(), g, &mut dcols, false);
        col2im(&dcols, win, &mut dx[i * img_len..(i + 1) * img_len]);
    }
    (
        Tensor::new(x_shape, dx).expect("dx shape"),
        Tensor::new(w.shape(), dw).expect("dw shape"),
        Tensor::new(&[oc], db).expect("db shape"),
    )
}

pub(crate) fn conv_t_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(Tensor<T>, Window)> {
    check_conv_t_weights(w.shape(), b.shape())?;
    let (batch, c, h, wd) = image_dims(x.shape(), "conv2d_transpose")?;
    let (ic, oc) = (w.shape()[0], w.shape()[1]);
    if c != ic {
        return Err(shape_err!("conv2d_transpose expects {} input channels, got {}", ic, c));
    }
    // The stride-2 convolution this operator is the adjoint of maps
    // (2H, 2W) with `oc` channels down to (H, W).
    let win = Window {
        channels: oc,
        in_h: 2 * h,
        in_w: 2 * wd,
        kernel: CONV_T_KERNEL,
        stride: CONV_T_STRIDE,
        pad: CONV_T_KERNEL / 2,
        out_h: h,
        out_w: wd,
    };
    let (rows, ncols) = (win.col_rows(), win.col_cols());
    let out_plane = 4 * h * wd;
    let mut out = vec![T::zero(); batch * oc * out_plane];
    let mut cols = vec![T::zero(); rows * ncols];
    for i in 0..batch {
        let xi = &x.data()[i * ic * ncols..(i + 1) * ic * ncols];
        gemm(true, false, rows, ic, ncols, w.data(), xi, &mut cols, false);
        let dst = &mut out[i * oc * out_plane..(i + 1) * oc * out_plane];
        for (o, plane) in dst.chunks_exact_mut(out_plane).enumerate() {
            plane.fill(b.data()[o]);
        }
        col2im(&cols, &win, dst);
    }
    Ok((Tensor::new(&[batch, oc, 2 * h, 2 * wd], out)?, win))
}

pub(crate) fn conv_t_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    win: &Window,
    dout: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let batch = x.shape()[0];
    let (ic, oc) = (w.shape()[0], w.shape()[1]);
    let (rows, ncols) = (win.col_rows(), win.col_cols());
    let out_plane = win.in_h * win.in_w;
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); w.len()];
    let mut db = vec![T::zero(); oc];
    let mut dcols = vec![T::zero(); rows * ncols];
    for i in 0..batch {
        let g = &dout.data()[i * oc * out_plane..(i + 1) * oc * out_plane];
        for (o, plane) in g.chunks_exact(out_plane).enumerate() {
            db[o] += plane.iter().copied().sum::<T>();
        }
        im2col(g, win, &mut dcols);
        let xi = &x.data()[i * ic * ncols..(i + 1) * ic * ncols];
        gemm(false, false, ic, rows, ncols, w.data(), &dcols, &mut dx[i * ic * ncols..(i + 1) * ic * ncols], false);
        gemm(false, true, ic, ncols, rows, xi, &dcols, &mut dw, true);
    }
    (
        Tensor::new(x.shape(), dx).expect("dx shape"),
        Tensor::new(w.shape(), dw).expect("dw shape"),
        Tensor::new(&[oc], db).expect("db shape"),
    )
}

fn eager<T: Real>(
    x: &Tensor<T>,
    f: impl FnOnce(&mut Tape<T>, crate::Var) -> Result<crate::Var>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let input = tape.constant(x.clone());
    let out = f(&mut tape, input)?;
    Ok(tape.value(out).clone())
}

/// Cross-correlation with zero padding `k/2`; output is `⌈H/s⌉ × ⌈W/s⌉`.
pub fn conv2d<T: Real>(x: &Tensor<T>, p: &Conv2dParams<T>) -> Result<Tensor<T>> {
    eager(x, |t, v| {
        let w = t.constant(p.weight.clone());
        let b = t.constant(p.bias.clone());
        t.conv2d(v, w, b, p.stride)
    })
}

/// Doubles spatial extent; exact adjoint of the matching stride-2 conv.
pub fn conv2d_transpose<T: Real>(x: &Tensor<T>, p: &ConvT2dParams<T>) -> Result<Tensor<T>> {
    eager(x, |t, v| {
        let w = t.constant(p.weight.clone());
        let b = t.constant(p.bias.clone());
        t.conv2d_transpose(v, w, b)
    })
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    eager(x, |t, v| t.relu(v))
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    eager(x, |t, v| t.sigmoid(v))
}

/// Row-wise softmax of a `[B, c]` tensor.
pub fn softmax<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    eager(x, |t, v| t.softmax(v))
}

pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    eager(x, |t, v| t.global_avg_pool(v))
}

/// `x · w + b` for `x: [B, f]`, `w: [f, c]`, `b: [c]`.
pub fn dense<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    eager(x, |t, v| {
        let w = t.constant(w.clone());
        let b = t.constant(b.clone());
        t.dense(v, w, b)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn identity_kernel_conv_is_identity() {
        let x = t(&[1, 1, 2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = Conv2dParams::new(t(&[1, 1, 1, 1], &[1.0]), t(&[1], &[0.0]), 1).unwrap();
        assert_eq!(conv2d(&x, &p).unwrap(), x);
    }

    #[test]
    fn ones_kernel_counts_neighbours() {
        let x = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let p = Conv2dParams::new(Tensor::ones(&[1, 1, 3, 3]), Tensor::zeros(&[1]), 1).unwrap();
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.data()[4], 9.0);
        assert_eq!(y.data()[0], 4.0);
        assert_eq!(y.data()[1], 6.0);
    }

    #[test]
    fn strided_conv_shape() {
        let x = Tensor::<f32>::zeros(&[1, 3, 32, 32]);
        let p = Conv2dParams::new(Tensor::zeros(&[8, 3, 3, 3]), Tensor::zeros(&[8]), 2).unwrap();
        assert_eq!(conv2d(&x, &p).unwrap().shape(), &[1, 8, 16, 16]);
    }

    #[test]
    fn conv_rejects_channel_mismatch_and_even_kernel() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let p = Conv2dParams::new(Tensor::zeros(&[1, 3, 3, 3]), Tensor::zeros(&[1]), 1).unwrap();
        assert!(matches!(conv2d(&x, &p), Err(crate::Error::Shape(_))));
        assert!(Conv2dParams::<f32>::new(Tensor::zeros(&[1, 1, 2, 2]), Tensor::zeros(&[1]), 1).is_err());
    }

    #[test]
    fn conv_t_doubles_extent() {
        let x = Tensor::<f32>::zeros(&[1, 64, 16, 16]);
        let p = ConvT2dParams::new(Tensor::zeros(&[64, 32, 3, 3]), Tensor::zeros(&[32])).unwrap();
        assert_eq!(conv2d_transpose(&x, &p).unwrap().shape(), &[1, 32, 32, 32]);
    }

    #[test]
    fn conv_t_zero_input_broadcasts_bias() {
        let x = Tensor::<f64>::zeros(&[2, 2, 3, 3]);
        let p = ConvT2dParams::new(Tensor::ones(&[2, 2, 3, 3]), t(&[2], &[0.5, -1.5])).unwrap();
        let y = conv2d_transpose(&x, &p).unwrap();
        for (i, v) in y.data().iter().enumerate() {
            let ch = (i / 36) % 2;
            assert_eq!(*v, if ch == 0 { 0.5 } else { -1.5 });
        }
    }

    #[test]
    fn conv_then_conv_t_round_trips_shape() {
        let x = Tensor::<f32>::zeros(&[1, 4, 8, 12]);
        let down = Conv2dParams::new(Tensor::zeros(&[6, 4, 3, 3]), Tensor::zeros(&[6]), 2).unwrap();
        let up = ConvT2dParams::new(Tensor::zeros(&[6, 4, 3, 3]), Tensor::zeros(&[4])).unwrap();
        let y = conv2d_transpose(&conv2d(&x, &down).unwrap(), &up).unwrap();
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn activations() {
        assert_eq!(relu(&t(&[2], &[-1.0, 2.0])).unwrap().data(), &[0.0, 2.0]);
        let s = sigmoid(&t(&[1], &[0.0])).unwrap();
        assert_eq!(s.data(), &[0.5]);
        let p = softmax(&t(&[1, 3], &[0.0, 0.0, 0.0])).unwrap();
        for v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax(&Tensor::<f32>::from_f64(&[1, 2], &[1000.0, 1000.0]).unwrap()).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
    }

    #[test]
    fn pooling() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);
        let c = Tensor::full(&[2, 3, 4, 4], 0.75f64);
        assert_eq!(global_avg_pool(&c).unwrap(), Tensor::full(&[2, 3], 0.75));
        let one = t(&[1, 2, 1, 1], &[3.0, -4.0]);
        assert_eq!(global_avg_pool(&one).unwrap().data(), &[3.0, -4.0]);
    }

    #[test]
    fn dense_layer() {
        let y = dense(&t(&[1, 2], &[1.0, 2.0]), &t(&[2, 1], &[1.0, 1.0]), &t(&[1], &[1.0])).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[2])).unwrap(), x);
        let y = dense(&Tensor::zeros(&[3, 2]), &eye, &t(&[2], &[0.5, 7.0])).unwrap();
        assert_eq!(y.data(), &[0.5, 7.0, 0.5, 7.0, 0.5, 7.0]);
        assert!(dense(&x, &t(&[3, 1], &[1.0, 1.0, 1.0]), &t(&[1], &[0.0])).is_err());
    }
}
