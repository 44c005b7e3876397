//! Bilinear resampling of `[C, H, W]` images.
//!
//! Integer coordinates address pixel centres. Sampling outside the image
//! reads zeros, except in [`resize`] which clamps to the border.

use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

fn dims<T: Real>(img: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(shape_err!("expected a [C, H, W] image, got {:?}", s)),
    }
}

/// Bilinear value of one plane at `(y, x)`; neighbours outside read zero.
pub fn sample_zero<T: Real>(plane: &[T], h: usize, w: usize, y: f64, x: f64) -> T {
    let (y0, x0) = (Float::floor(y), Float::floor(x));
    let (fy, fx) = (y - y0, x - x0);
    let at = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            plane[yy as usize * w + xx as usize].as_f64()
        }
    };
    let top = (1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1.0);
    let bottom = (1.0 - fx) * at(y0 + 1.0, x0) + fx * at(y0 + 1.0, x0 + 1.0);
    T::from_f64((1.0 - fy) * top + fy * bottom)
}

/// Bilinear value of one plane at `(y, x)` with coordinates clamped to the border.
pub fn sample_clamped<T: Real>(plane: &[T], h: usize, w: usize, y: f64, x: f64) -> T {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (Float::floor(y) as usize, Float::floor(x) as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let p = |r: usize, c: usize| plane[r * w + c].as_f64();
    let top = (1.0 - fx) * p(y0, x0) + fx * p(y0, x1);
    let bottom = (1.0 - fx) * p(y1, x0) + fx * p(y1, x1);
    T::from_f64((1.0 - fy) * top + fy * bottom)
}

/// Half-pixel-centred bilinear resize of every channel.
pub fn resize<T: Real>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = dims(img)?;
    if out_h == 0 || out_w == 0 {
        return Err(shape_err!("cannot resize to {}x{}", out_h, out_w));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let (sy, sx) = (h as f64 / out_h as f64, w as f64 / out_w as f64);
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for plane in img.data().chunks_exact(h * w) {
        for r in 0..out_h {
            let y = (r as f64 + 0.5) * sy - 0.5;
            for col in 0..out_w {
                let x = (col as f64 + 0.5) * sx - 0.5;
                out.push(sample_clamped(plane, h, w, y, x));
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

/// Resamples each output pixel `(y, x)` from `source(y, x)` with zero fill.
pub fn warp<T: Real>(img: &Tensor<T>, source: impl Fn(f64, f64) -> (f64, f64)) -> Result<Tensor<T>> {
    let (c, h, w) = dims(img)?;
    let coords: Vec<(f64, f64)> = (0..h).flat_map(|r| (0..w).map(move |col| (r, col))).map(|(r, col)| source(r as f64, col as f64)).collect();
    let mut out = Vec::with_capacity(c * h * w);
    for plane in img.data().chunks_exact(h * w) {
        out.extend(coords.iter().map(|&(y, x)| sample_zero(plane, h, w, y, x)));
    }
    Tensor::new(&[c, h, w], out)
}

/// Mirrors columns.
pub fn flip_horizontal<T: Real>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, w) = dims(img)?;
    let mut out = img.clone();
    for row in out.data_mut().chunks_exact_mut(w) {
        row.reverse();
    }
    Ok(out)
}

/// Geometric transform about the image centre: zoom by `zoom`, rotate
/// counter-clockwise (as displayed) by `degrees`, then translate by
/// `(dy, dx)` pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub degrees: f64,
    pub zoom: f64,
    pub dy: f64,
    pub dx: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine { degrees: 0.0, zoom: 1.0, dy: 0.0, dx: 0.0 };

    pub fn apply<T: Real>(&self, img: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, h, w) = dims(img)?;
        if *self == Self::IDENTITY {
            return Ok(img.clone());
        }
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let theta = self.degrees.to_radians();
        let (s, c) = (Float::sin(theta), Float::cos(theta));
        // Inverse map: undo translation, rotation, then zoom.
        warp(img, |y, x| {
            let (oy, ox) = (y - cy - self.dy, x - cx - self.dx);
            let ix = c * ox - s * oy;
            let iy = s * ox + c * oy;
            (iy / self.zoom + cy, ix / self.zoom + cx)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(&[1, h, w], v).unwrap()
    }

    #[test]
    fn resize_constant_and_identity() {
        let x = Tensor::<f64>::full(&[2, 4, 6], 0.25);
        let y = resize(&x, 7, 3).unwrap();
        assert_eq!(y.shape(), &[2, 7, 3]);
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert_eq!(resize(&x, 4, 6).unwrap(), x);
    }

    #[test]
    fn downsample_by_two_averages_blocks() {
        let x = img(2, 2, &[0.0, 1.0, 2.0, 3.0]);
        let y = resize(&x, 1, 1).unwrap();
        assert!((y.data()[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn flip_is_an_involution() {
        let x = img(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let f = flip_horizontal(&x).unwrap();
        assert_eq!(f.data(), &[3.0, 2.0, 1.0, 6.0, 5.0, 4.0]);
        assert_eq!(flip_horizontal(&f).unwrap(), x);
    }

    #[test]
    fn quarter_turn_permutes_a_two_by_two() {
        // [a b]    rotate 90 degrees counter-clockwise    [b d]
        // [c d]                                            [a c]
        let x = img(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let r = Affine { degrees: 90.0, ..Affine::IDENTITY }.apply(&x).unwrap();
        for (got, want) in r.data().iter().zip([2.0, 4.0, 1.0, 3.0]) {
            assert!((got - want).abs() < 1e-12, "{:?}", r.data());
        }
    }

    #[test]
    fn whole_pixel_shift_moves_and_zero_fills() {
        let x = img(1, 3, &[1.0, 2.0, 3.0]);
        let r = Affine { dx: 1.0, ..Affine::IDENTITY }.apply(&x).unwrap();
        assert_eq!(r.data(), &[0.0, 1.0, 2.0]);
    }
}
