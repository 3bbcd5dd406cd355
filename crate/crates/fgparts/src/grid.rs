//! Dense numeric grids, image I/O and the tensor exchange format.

mod pnm;
mod resize;
mod tensor;

pub use pnm::{load_image, write_image};
pub use resize::resize_bilinear;
pub use tensor::{read_tensor, write_tensor, TENSOR_MAGIC};

use crate::error::{Error, Result};

/// An image with float values in `[0, 1]`, row-major, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    /// Builds an image after validating shape and value range.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be at least 1x1"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "image data length {} does not match {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::invalid(format!(
                "image value {v} outside [0, 1]"
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn value(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// RGB triple at `(x, y)`; grayscale images replicate their single channel.
    pub fn rgb(&self, y: usize, x: usize) -> [f32; 3] {
        if self.channels == 3 {
            let i = (y * self.width + x) * 3;
            [self.data[i], self.data[i + 1], self.data[i + 2]]
        } else {
            let v = self.value(y, x, 0);
            [v, v, v]
        }
    }

    /// Crops the inclusive pixel rectangle `(x0, y0)..=(x1, y1)`.
    pub fn crop(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Image> {
        if x0 > x1 || y0 > y1 || x1 >= self.width || y1 >= self.height {
            return Err(Error::invalid(format!(
                "crop ({x0},{y0})-({x1},{y1}) outside {}x{} image",
                self.width, self.height
            )));
        }
        let (w, h) = (x1 - x0 + 1, y1 - y0 + 1);
        let mut data = Vec::with_capacity(w * h * self.channels);
        for y in y0..=y1 {
            let row = (y * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[row..row + w * self.channels]);
        }
        Ok(Image {
            height: h,
            width: w,
            channels: self.channels,
            data,
        })
    }
}

/// A 2-D float grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Grid2D {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "grid data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid contains non-finite values"));
        }
        Ok(Grid2D { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Grid2D {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.data[row * self.cols + col] = v;
    }
}
