//! Binary pixel masks and the overlap measures used for dedup and evaluation.

use crate::image::{IdMap, ScalarMap};
use crate::storage::{Tensor, TensorData};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Mask {
            width,
            height,
            data: vec![value as u8; width * height],
        }
    }

    /// Pixels of `ids` equal to `id`.
    pub fn from_id_map(ids: &IdMap, id: u32) -> Self {
        Mask {
            width: ids.width,
            height: ids.height,
            data: ids.data.iter().map(|&v| (v == id) as u8).collect(),
        }
    }

    pub fn threshold(map: &ScalarMap, t: f64) -> Self {
        Mask {
            width: map.width,
            height: map.height,
            data: map.data.iter().map(|&v| (v >= t) as u8).collect(),
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v as u8;
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn intersection_area(&self, other: &Mask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a != 0 && b != 0)
            .count()
    }

    pub fn union_area(&self, other: &Mask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a != 0 || b != 0)
            .count()
    }

    /// Intersection over union; 0 when both masks are empty.
    pub fn iou(&self, other: &Mask) -> f64 {
        let union = self.union_area(other);
        if union == 0 {
            return 0.0;
        }
        self.intersection_area(other) as f64 / union as f64
    }

    /// Intersection divided by the smaller area; 0 when either mask is empty.
    pub fn overlap_rate(&self, other: &Mask) -> f64 {
        let smaller = self.area().min(other.area());
        if smaller == 0 {
            return 0.0;
        }
        self.intersection_area(other) as f64 / smaller as f64
    }

    pub fn union_with(&mut self, other: &Mask) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::u8(
            vec![self.height as u32, self.width as u32],
            self.data.clone(),
        )
    }

    pub fn from_tensor(t: &Tensor) -> Option<Self> {
        if t.dims.len() != 2 {
            return None;
        }
        let data = match &t.data {
            TensorData::U8(v) => v.clone(),
            _ => return None,
        };
        Some(Mask {
            width: t.dims[1] as usize,
            height: t.dims[0] as usize,
            data,
        })
    }
}
