//! Bounded-range and total-variation penalties with analytic gradients.
//!
//! Both are normalized by the number of scalar entries `H * W * C`.

use crate::error::{JndError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const PIXEL_MIN: f64 = 0.0;
pub const PIXEL_MAX: f64 = 255.0;

#[derive(Clone, Debug, PartialEq)]
pub struct RegularizerValue<T> {
    pub value: T,
    pub gradient: Tensor<T>,
}

fn dims<T: Scalar>(image: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(JndError::Dimension(format!("image must be [H, W, C], got {s:?}"))),
    }
}

/// Mean over pixels of the distance below 0 or above 255.
pub fn br_loss<T: Scalar>(image: &Tensor<T>) -> Result<RegularizerValue<T>> {
    dims(image)?;
    let n = T::from_count(image.len());
    let (lo, hi) = (T::lit(PIXEL_MIN), T::lit(PIXEL_MAX));
    let inv = T::one() / n;
    let mut value = T::zero();
    let gradient = image.map(|p| {
        if p < lo {
            -inv
        } else if p > hi {
            inv
        } else {
            T::zero()
        }
    });
    for &p in image.data() {
        if p <= lo {
            value += lo - p;
        } else if p >= hi {
            value += p - hi;
        }
    }
    Ok(RegularizerValue { value: value / n, gradient })
}

/// Mean squared forward difference to the right and downward neighbours.
/// Differences are taken only where the neighbour exists.
pub fn tv_loss<T: Scalar>(image: &Tensor<T>) -> Result<RegularizerValue<T>> {
    let (h, w, c) = dims(image)?;
    if h < 2 && w < 2 {
        return Err(JndError::Input(format!("total variation needs at least two pixels, image is {h}x{w}")));
    }
    let x = image.data();
    let n = T::from_count(image.len());
    let two_over_n = T::lit(2.0) / n;
    let mut value = T::zero();
    let mut grad = vec![T::zero(); x.len()];
    let mut pair = |a: usize, b: usize, grad: &mut [T]| {
        let d = x[b] - x[a];
        value += d * d;
        grad[b] += two_over_n * d;
        grad[a] -= two_over_n * d;
    };
    for v in 0..h {
        for u in 0..w {
            for k in 0..c {
                let here = (v * w + u) * c + k;
                if u + 1 < w {
                    pair(here, here + c, &mut grad);
                }
                if v + 1 < h {
                    pair(here, here + w * c, &mut grad);
                }
            }
        }
    }
    Ok(RegularizerValue { value: value / n, gradient: Tensor::from_vec(image.shape(), grad)? })
}

/// Clamps every pixel into `[0, 255]`.
pub fn clamp_to_range<T: Scalar>(image: &Tensor<T>) -> Tensor<T> {
    let (lo, hi) = (T::lit(PIXEL_MIN), T::lit(PIXEL_MAX));
    image.map(|p| p.max(lo).min(hi))
}

pub fn in_range<T: Scalar>(image: &Tensor<T>) -> bool {
    let (lo, hi) = (T::lit(PIXEL_MIN), T::lit(PIXEL_MAX));
    image.data().iter().all(|&p| p >= lo && p <= hi)
}
