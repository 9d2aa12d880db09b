use crate::error::{Error, Result};

/// Row-major 8-bit raster with a per-pixel validity mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
    mask: Vec<bool>,
}

impl ImageBuffer {
    /// All-zero image with an empty mask.
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Self {
            width,
            height,
            channels,
            data: vec![0; width * height * channels],
            mask: vec![false; width * height],
        }
    }

    /// Fully valid image from raw samples.
    pub fn from_raw(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        let mask = vec![true; width * height];
        Self::from_parts(width, height, channels, data, mask)
    }

    pub fn from_parts(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<u8>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Config(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels || mask.len() != width * height {
            return Err(Error::Config("buffer length does not match dimensions".into()));
        }
        Ok(Self { width, height, channels, data, mask })
    }

    /// Constant image, fully valid.
    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        let mut img = Self::new(width, height, channels);
        img.data.fill(value);
        img.mask.fill(true);
        img
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

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn mask_mut(&mut self) -> &mut [bool] {
        &mut self.mask
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, value: &[u8]) {
        let i = (y * self.width + x) * self.channels;
        self.data[i..i + self.channels].copy_from_slice(&value[..self.channels]);
        self.mask[y * self.width + x] = true;
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    /// Rec. 601 luma of one pixel.
    #[inline]
    pub fn luma(&self, x: usize, y: usize) -> f64 {
        let p = self.pixel(x, y);
        if self.channels == 1 {
            p[0] as f64
        } else {
            0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
        }
    }

    pub fn luma_plane(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(self.luma(x, y));
            }
        }
        out
    }

    /// Bilinear sample at a pixel-center coordinate. Returns false (leaving
    /// `out` untouched) outside `[0, w-1] x [0, h-1]`.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64, out: &mut [f64; 3]) -> bool {
        let (maxx, maxy) = (self.width as f64 - 1.0, self.height as f64 - 1.0);
        if !(x >= 0.0 && y >= 0.0 && x <= maxx && y <= maxy) {
            return false;
        }
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        debug_assert!(x1 < self.width && y1 < self.height);
        let c = self.channels;
        let row0 = y0 * self.width;
        let row1 = y1 * self.width;
        for (k, o) in out.iter_mut().enumerate().take(c) {
            let a = self.data[(row0 + x0) * c + k] as f64;
            let b = self.data[(row0 + x1) * c + k] as f64;
            let d = self.data[(row1 + x0) * c + k] as f64;
            let e = self.data[(row1 + x1) * c + k] as f64;
            *o = (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (d * (1.0 - fx) + e * fx) * fy;
        }
        true
    }
}

#[inline]
pub(crate) fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}
