//! Dense f32 tensors and 8-bit images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense tensor. Image batches use `[n, c, h, w]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], v: f32) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![v; len] }
    }

    pub fn scalar(v: f32) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn item(&self) -> f32 {
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Splits a leading batch axis: `[n, ...] -> n x [1, ...]`.
    pub fn unbatch(&self) -> Vec<Tensor> {
        let n = self.shape[0];
        let per = self.data.len() / n.max(1);
        let mut shape = self.shape.clone();
        shape[0] = 1;
        (0..n)
            .map(|i| Tensor { shape: shape.clone(), data: self.data[i * per..(i + 1) * per].to_vec() })
            .collect()
    }

    /// Stacks equally shaped `[1, ...]` or `[...]` tensors along a new/leading batch axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| Error::Invalid("cannot stack zero tensors".into()))?;
        let inner: Vec<usize> = if first.shape.len() == 4 && first.shape[0] == 1 {
            first.shape[1..].to_vec()
        } else {
            first.shape.clone()
        };
        let per: usize = inner.iter().product();
        let mut data = Vec::with_capacity(per * items.len());
        for t in items {
            if t.data.len() != per {
                return Err(Error::Shape(format!("stack: {:?} vs {:?}", t.shape, first.shape)));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend(inner);
        Tensor::new(&shape, data)
    }

    /// `(c, h, w)` of a single image stored as `[c,h,w]` or `[1,c,h,w]`.
    pub fn image_dims(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            [c, h, w] => Ok((*c, *h, *w)),
            [1, c, h, w] => Ok((*c, *h, *w)),
            s => Err(Error::Shape(format!("expected a single image, got shape {s:?}"))),
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `round(clip(255·x, 0, 255))`; `f32::round` breaks ties away from zero.
pub fn quantize_u8(x: f32) -> u8 {
    (255.0 * x).clamp(0.0, 255.0).round() as u8
}

/// 8-bit image `(c, h, w)`, the on-disk pixel domain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image8 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl Image8 {
    pub fn new(channels: usize, height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "image ({channels},{height},{width}) needs {} pixels, got {}",
                channels * height * width,
                pixels.len()
            )));
        }
        Ok(Self { channels, height, width, pixels })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    /// Quantises a `[1,c,h,w]` or `[c,h,w]` tensor in unit range:
    /// `round(clip(255·x, 0, 255))`, ties away from zero.
    pub fn from_unit(t: &Tensor) -> Result<Self> {
        let (c, h, w) = t.image_dims()?;
        Self::new(c, h, w, t.data().iter().map(|&v| quantize_u8(v)).collect())
    }

    /// Pixels scaled to [0,1] as a `[1,c,h,w]` tensor.
    pub fn to_unit(&self) -> Tensor {
        let data = self.pixels.iter().map(|&p| p as f32 / 255.0).collect();
        Tensor { shape: vec![1, self.channels, self.height, self.width], data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_length() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Image8::new(1, 2, 2, vec![0; 3]).is_err());
    }

    #[test]
    fn stack_unbatch_roundtrip() {
        let a = Tensor::new(&[1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::new(&[1, 1, 2, 2], vec![5., 6., 7., 8.]).unwrap();
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), &[2, 1, 2, 2]);
        let parts = s.unbatch();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
