//! Single-channel floating point planes shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A row-major single-channel image of `f64` samples.
///
/// The same container backs radiance frames, fused HDR estimates and masks;
/// the aliases below only document the role a plane plays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Linear scene radiance in electrons per second.
pub type RadianceFrame = Plane;
/// Fused linear radiance estimate in electrons per second.
pub type HdrImage = Plane;
/// Per-pixel weight in `[0, 1]`.
pub type Mask = Plane;

impl Plane {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Geometry(format!(
                "buffer of {} samples does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_geometry(&self, other: &Plane) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn ensure_same_geometry(&self, other: &Plane) -> Result<()> {
        if self.same_geometry(other) {
            Ok(())
        } else {
            Err(Error::Geometry(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Mean over non-overlapping `cells_x` x `cells_y` blocks (edges absorb remainders).
    pub fn block_means(&self, cells_x: usize, cells_y: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(cells_x * cells_y);
        for cy in 0..cells_y {
            let y0 = cy * self.height / cells_y;
            let y1 = ((cy + 1) * self.height / cells_y).max(y0 + 1).min(self.height);
            for cx in 0..cells_x {
                let x0 = cx * self.width / cells_x;
                let x1 = ((cx + 1) * self.width / cells_x).max(x0 + 1).min(self.width);
                let mut acc = 0.0;
                for y in y0..y1 {
                    let row = &self.data[y * self.width..(y + 1) * self.width];
                    acc += row[x0..x1].iter().sum::<f64>();
                }
                out.push(acc / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Plane::from_vec(4, 4, vec![0.0; 15]).is_err());
        assert!(Plane::from_vec(4, 4, vec![0.0; 16]).is_ok());
    }

    #[test]
    fn block_means_of_ramp() {
        let p = Plane::from_fn(4, 2, |x, _| x as f64);
        assert_eq!(p.block_means(2, 1), vec![0.5, 2.5]);
    }
}
