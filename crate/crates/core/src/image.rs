use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("image dimensions must be positive, got {width}x{height}x{channels}")]
    ZeroSize { width: usize, height: usize, channels: usize },
    #[error("expected {expected} pixel values, got {got}")]
    PixelCount { expected: usize, got: usize },
    #[error("pixel value {value} at index {index} outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("region {0:?} lies outside the image")]
    RegionOutOfBounds(Region),
}

/// Axis-aligned pixel rectangle `(x, y, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Region {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.w > 0 && self.h > 0 && self.x + self.w <= width && self.y + self.h <= height
    }

    pub fn overlaps(&self, other: &Region) -> bool {
        self.x < other.x + other.w && other.x < self.x + self.w && self.y < other.y + other.h && other.y < self.y + self.h
    }
}

/// Row-major raster with interleaved channels and values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(ImageError::ZeroSize { width, height, channels });
        }
        let expected = width * height * channels;
        if pixels.len() != expected {
            return Err(ImageError::PixelCount { expected, got: pixels.len() });
        }
        if let Some((index, &value)) = pixels.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(ImageError::OutOfRange { index, value });
        }
        Ok(Self { width, height, channels, pixels })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self, ImageError> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Sets a pixel, clamping into `[0, 1]`.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f64) {
        self.pixels[(y * self.width + x) * self.channels + c] = value.clamp(0.0, 1.0);
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    pub fn crop(&self, r: Region) -> Result<ImageGrid, ImageError> {
        if !r.fits_in(self.width, self.height) {
            return Err(ImageError::RegionOutOfBounds(r));
        }
        let mut pixels = Vec::with_capacity(r.area() * self.channels);
        for y in r.y..r.y + r.h {
            let start = (y * self.width + r.x) * self.channels;
            pixels.extend_from_slice(&self.pixels[start..start + r.w * self.channels]);
        }
        Ok(ImageGrid { width: r.w, height: r.h, channels: self.channels, pixels })
    }

    /// Edge-replicating read: coordinates past the border take the nearest edge pixel.
    pub fn get_clamped(&self, x: usize, y: usize, c: usize) -> f64 {
        self.get(x.min(self.width - 1), y.min(self.height - 1), c)
    }

    /// Content fingerprint of dimensions and exact pixel bits (FNV-1a, stable
    /// across runs and platforms).
    pub fn fingerprint(&self) -> u64 {
        let head = [self.width as u64, self.height as u64, self.channels as u64];
        head.into_iter().chain(self.pixels.iter().map(|v| v.to_bits())).fold(FNV_OFFSET, |h, word| {
            word.to_le_bytes().iter().fold(h, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
        })
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
