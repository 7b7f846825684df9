//! In-memory image buffers. All pixel math is f64; quantization happens at I/O.

use crate::storage::{Tensor, TensorData};

/// Linear RGB image, row-major from the top-left, 3 values per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        RgbImage {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// A single-channel scalar map (transient probabilities, relevancy scores).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ScalarMap {
    pub fn new(width: usize, height: usize) -> Self {
        ScalarMap {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        ScalarMap {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Stored as f32 on disk; computation stays f64 in memory.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::f32(
            vec![self.height as u32, self.width as u32],
            self.data.iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn from_tensor(t: &Tensor) -> Option<Self> {
        if t.dims.len() != 2 {
            return None;
        }
        Some(ScalarMap {
            width: t.dims[1] as usize,
            height: t.dims[0] as usize,
            data: t.as_f64(),
        })
    }

    /// Grayscale visualization, value mapped straight to all three channels.
    pub fn to_rgb(&self) -> RgbImage {
        let mut img = RgbImage::new(self.width, self.height);
        for (i, &v) in self.data.iter().enumerate() {
            let c = v.clamp(0.0, 1.0);
            img.data[i * 3] = c;
            img.data[i * 3 + 1] = c;
            img.data[i * 3 + 2] = c;
        }
        img
    }
}

/// A d-channel feature map, row-major, `dim` contiguous values per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, dim: usize) -> Self {
        FeatureMap {
            width,
            height,
            dim,
            data: vec![0.0; width * height * dim],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.dim;
        &self.data[i..i + self.dim]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: &[f64]) {
        let i = (y * self.width + x) * self.dim;
        self.data[i..i + self.dim].copy_from_slice(v);
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::f32(
            vec![self.height as u32, self.width as u32, self.dim as u32],
            self.data.iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn from_tensor(t: &Tensor) -> Option<Self> {
        if t.dims.len() != 3 {
            return None;
        }
        Some(FeatureMap {
            width: t.dims[1] as usize,
            height: t.dims[0] as usize,
            dim: t.dims[2] as usize,
            data: t.as_f64(),
        })
    }
}

/// Per-pixel instance ids, 0 meaning background.
#[derive(Debug, Clone, PartialEq)]
pub struct IdMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u32>,
}

impl IdMap {
    pub fn new(width: usize, height: usize) -> Self {
        IdMap {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, id: u32) {
        self.data[y * self.width + x] = id;
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::u32(
            vec![self.height as u32, self.width as u32],
            self.data.clone(),
        )
    }

    pub fn from_tensor(t: &Tensor) -> Option<Self> {
        if t.dims.len() != 2 {
            return None;
        }
        let data = match &t.data {
            TensorData::U32(v) => v.clone(),
            _ => return None,
        };
        Some(IdMap {
            width: t.dims[1] as usize,
            height: t.dims[0] as usize,
            data,
        })
    }

    /// Ascending list of distinct nonzero ids present in the map.
    pub fn present_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.data.iter().copied().filter(|&i| i != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}
