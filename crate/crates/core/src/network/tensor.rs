use std::ops::{Index, IndexMut};

use ndarray::{ArrayView2, ArrayViewMut2};

use crate::error::{Error, Result};

/// Dense NCHW tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor4 {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::invalid(format!("tensor dimensions must be >= 1, got {shape:?}")));
        }
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::invalid(format!(
                "{} values do not fill shape {shape:?}",
                data.len()
            )));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        let [n, c, h, w] = shape;
        let mut k = 0;
        for a in 0..n {
            for b in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        t.data[k] = f([a, b, i, j]);
                        k += 1;
                    }
                }
            }
        }
        t
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// All channels of one batch item, contiguous.
    pub fn item(&self, n: usize) -> &[f64] {
        let len = self.shape[1] * self.plane_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.shape[1] * self.plane_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn plane(&self, n: usize, c: usize) -> ArrayView2<'_, f64> {
        let (h, w) = (self.shape[2], self.shape[3]);
        let start = (n * self.shape[1] + c) * h * w;
        ArrayView2::from_shape((h, w), &self.data[start..start + h * w]).expect("plane shape")
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> ArrayViewMut2<'_, f64> {
        let (h, w) = (self.shape[2], self.shape[3]);
        let start = (n * self.shape[1] + c) * h * w;
        ArrayViewMut2::from_shape((h, w), &mut self.data[start..start + h * w]).expect("plane shape")
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor4) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(parts: &[&Tensor4]) -> Tensor4 {
        let [n, _, h, w] = parts[0].shape;
        let c_total: usize = parts.iter().map(|p| p.channels()).sum();
        let mut out = Vec::with_capacity(n * c_total * h * w);
        for b in 0..n {
            for p in parts {
                debug_assert_eq!((p.batch(), p.height(), p.width()), (n, h, w));
                out.extend_from_slice(p.item(b));
            }
        }
        Tensor4 {
            shape: [n, c_total, h, w],
            data: out,
        }
    }

    /// Inverse of [`Tensor4::concat_channels`] for the given channel counts.
    pub fn split_channels(&self, counts: &[usize]) -> Vec<Tensor4> {
        let [n, c, h, w] = self.shape;
        debug_assert_eq!(counts.iter().sum::<usize>(), c);
        let plane = h * w;
        let mut parts: Vec<Tensor4> = counts.iter().map(|&k| Tensor4::zeros([n, k, h, w])).collect();
        for b in 0..n {
            let src = self.item(b);
            let mut offset = 0;
            for (part, &k) in parts.iter_mut().zip(counts) {
                part.item_mut(b).copy_from_slice(&src[offset * plane..(offset + k) * plane]);
                offset += k;
            }
        }
        parts
    }
}

impl Index<[usize; 4]> for Tensor4 {
    type Output = f64;
    fn index(&self, [n, c, i, j]: [usize; 4]) -> &f64 {
        let [_, cs, h, w] = self.shape;
        &self.data[((n * cs + c) * h + i) * w + j]
    }
}

impl IndexMut<[usize; 4]> for Tensor4 {
    fn index_mut(&mut self, [n, c, i, j]: [usize; 4]) -> &mut f64 {
        let [_, cs, h, w] = self.shape;
        &mut self.data[((n * cs + c) * h + i) * w + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_and_split_are_inverse() {
        let a = Tensor4::from_fn([2, 2, 3, 3], |[n, c, i, j]| (n * 100 + c * 10 + i * 3 + j) as f64);
        let b = Tensor4::from_fn([2, 3, 3, 3], |[n, c, i, j]| -((n * 100 + c * 10 + i * 3 + j) as f64));
        let cat = Tensor4::concat_channels(&[&a, &b]);
        assert_eq!(cat.shape(), [2, 5, 3, 3]);
        assert_eq!(cat[[1, 3, 2, 1]], b[[1, 1, 2, 1]]);
        let parts = cat.split_channels(&[2, 3]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor4::from_vec([1, 0, 2, 2], vec![]).is_err());
        assert!(Tensor4::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
    }
}
