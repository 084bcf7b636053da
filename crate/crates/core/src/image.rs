//! Planar floating-point rasters.

use crate::error::{invalid, mismatch, Location, Result, Validate, Violation};

/// Transfer encoding of the stored samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Encoding {
    Linear,
    #[default]
    Gamma,
}

/// Row-major, channel-planar image with 1 or 3 channels.
///
/// Sample `(c, y, x)` lives at `data[c * H * W + y * W + x]`. Values are
/// nominally in `[0, 1]` but only finiteness is enforced: augmentation and
/// intermediate solver states legitimately leave that range.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
    encoding: Encoding,
}

impl Image {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
        encoding: Encoding,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(invalid(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(invalid("image dimensions must be non-zero"));
        }
        if data.len() != height * width * channels {
            return Err(mismatch(format!(
                "image data has {} samples, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        let img = Self {
            height,
            width,
            channels,
            data,
            encoding,
        };
        img.validate()?;
        Ok(img)
    }

    /// Builds an image whose samples are known finite (internal arithmetic on
    /// finite inputs).
    pub(crate) fn from_parts(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
        encoding: Encoding,
    ) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Self {
            height,
            width,
            channels,
            data,
            encoding,
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
            Encoding::default(),
        )
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::filled(height, width, channels, 0.0)
    }

    /// Builds an image from `f(channel, row, col)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(height, width, channels, data, Encoding::default())
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

    pub fn encoding(&self) -> Encoding {
        self.encoding
    }

    pub fn with_encoding(mut self, encoding: Encoding) -> Self {
        self.encoding = encoding;
        self
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub(crate) fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn planes(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.pixels())
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub(crate) fn ensure_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(mismatch(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )))
        }
    }

    /// Applies `f` to every sample. `f` must map finite values to finite values.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self::from_parts(self.height, self.width, self.channels, data, self.encoding)
    }

    /// Combines two images of identical shape sample by sample.
    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        self.ensure_same_shape(other, "zip_map")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_parts(
            self.height,
            self.width,
            self.channels,
            data,
            self.encoding,
        ))
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Rounds every sample to the nearest `f32`.
    pub fn quantize_f32(&self) -> Image {
        self.map(|v| v as f32 as f64)
    }

    /// Single-channel luminance (Rec. 709 weights); grayscale input is returned unchanged.
    pub fn luminance(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        let data = r
            .iter()
            .zip(g)
            .zip(b)
            .map(|((&r, &g), &b)| 0.2125 * r + 0.7154 * g + 0.0721 * b)
            .collect();
        Self::from_parts(self.height, self.width, 1, data, self.encoding)
    }

    /// Replicates a single-channel image into `channels` planes.
    pub fn broadcast(&self, channels: usize) -> Result<Image> {
        if self.channels != 1 {
            return Err(invalid("broadcast expects a single-channel image"));
        }
        let mut data = Vec::with_capacity(self.data.len() * channels);
        for _ in 0..channels {
            data.extend_from_slice(&self.data);
        }
        Image::new(self.height, self.width, channels, data, self.encoding)
    }

    pub fn dot(&self, other: &Image) -> Result<f64> {
        self.ensure_same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl Validate for Image {
    fn validate(&self) -> Result<(), Violation> {
        let n = self.pixels();
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => {
                let p = i % n;
                Err(Violation::new(
                    "Image",
                    format!("non-finite sample in channel {}", i / n),
                    Location::Pixel {
                        row: p / self.width,
                        col: p % self.width,
                    },
                ))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nan_with_location() {
        let mut data = vec![0.5; 12];
        data[7] = f64::NAN;
        let err = Image::new(2, 2, 3, data, Encoding::Linear).unwrap_err();
        match err {
            crate::Error::Invariant(v) => {
                assert_eq!(v.location, Location::Pixel { row: 1, col: 1 });
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_lengths_and_channels() {
        assert!(Image::new(2, 2, 1, vec![0.0; 3], Encoding::Linear).is_err());
        assert!(Image::new(2, 2, 2, vec![0.0; 8], Encoding::Linear).is_err());
    }

    #[test]
    fn planar_layout() {
        let img = Image::from_fn(2, 3, 3, |c, y, x| (c * 100 + y * 10 + x) as f64).unwrap();
        assert_eq!(img.get(2, 1, 2), 212.0);
        assert_eq!(img.plane(1)[4], 111.0);
    }
}
