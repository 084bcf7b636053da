//! Image and kernel file formats.
//!
//! Binary containers are little-endian:
//!
//! ```text
//! VBI1: "VBI1" | u32 H | u32 W | u32 C | f32 data (channel-planar, row-major)
//! VBK1: "VBK1" | u32 B | u32 K | u32 H | u32 W | u32 flags | f32 kernels (B*K*K)
//!       | f32 mixing (B*H*W, present when flags bit 0 is set)
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{DynamicImage, ExtendedColorType, ImageEncoder};

use crate::error::{invalid, mismatch, FormatError, Result};
use crate::image::{Encoding, Image};
use crate::kernel::{KernelBasis, MixingField};

pub const VBI_MAGIC: [u8; 4] = *b"VBI1";
pub const VBK_MAGIC: [u8; 4] = *b"VBK1";

/// VBK1 flag: a mixing field follows the kernel data.
pub const VBK_HAS_FIELD: u32 = 1;

/// PNG sample depth on output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    Eight,
    #[default]
    Sixteen,
}

/// Loads an 8- or 16-bit PNG as a 1- or 3-channel image in `[0, 1]`; alpha is dropped.
pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    let dynamic = image::open(path.as_ref())?;
    from_dynamic(dynamic)
}

pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let dynamic = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
    from_dynamic(dynamic)
}

fn from_dynamic(dynamic: DynamicImage) -> Result<Image> {
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    let gray = matches!(
        dynamic.color(),
        image::ColorType::L8
            | image::ColorType::L16
            | image::ColorType::La8
            | image::ColorType::La16
    );
    let channels = if gray { 1 } else { 3 };
    let n = w * h;
    let mut data = vec![0.0; n * channels];
    if gray {
        let buf = dynamic.into_luma16();
        for (i, p) in buf.pixels().enumerate() {
            data[i] = p.0[0] as f64 / 65535.0;
        }
    } else {
        let buf = dynamic.into_rgb16();
        for (i, p) in buf.pixels().enumerate() {
            for c in 0..3 {
                data[c * n + i] = p.0[c] as f64 / 65535.0;
            }
        }
    }
    Image::new(h, w, channels, data, Encoding::Gamma)
}

/// Encodes an image as PNG after clipping to `[0, 1]`. Encoder settings are
/// fixed so identical inputs give identical bytes.
pub fn encode_png(img: &Image, depth: BitDepth) -> Result<Vec<u8>> {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let n = h * w;
    let mut bytes = Vec::new();
    let encoder =
        PngEncoder::new_with_quality(&mut bytes, CompressionType::Default, FilterType::Adaptive);
    let color = match (ch, depth) {
        (1, BitDepth::Eight) => ExtendedColorType::L8,
        (1, BitDepth::Sixteen) => ExtendedColorType::L16,
        (_, BitDepth::Eight) => ExtendedColorType::Rgb8,
        (_, BitDepth::Sixteen) => ExtendedColorType::Rgb16,
    };
    let sample = |i: usize, c: usize| img.data()[c * n + i].clamp(0.0, 1.0);
    let raw: Vec<u8> = match depth {
        BitDepth::Eight => (0..n)
            .flat_map(|i| (0..ch).map(move |c| (sample(i, c) * 255.0).round() as u8))
            .collect(),
        BitDepth::Sixteen => (0..n)
            .flat_map(|i| {
                (0..ch).flat_map(move |c| {
                    // PNG is big-endian; the encoder expects native-endian u16 samples
                    ((sample(i, c) * 65535.0).round() as u16).to_ne_bytes()
                })
            })
            .collect(),
    };
    encoder.write_image(&raw, w as u32, h as u32, color)?;
    Ok(bytes)
}

pub fn write_png(path: impl AsRef<Path>, img: &Image, depth: BitDepth) -> Result<()> {
    fs::write(path, encode_png(img, depth)?)?;
    Ok(())
}

/// Reads an 8-bit label PNG (grayscale or palette index) as raw label values.
pub fn read_label_png(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let dynamic = image::open(path.as_ref())?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    let labels = match dynamic {
        DynamicImage::ImageLuma8(buf) => buf.into_raw(),
        DynamicImage::ImageLumaA8(buf) => buf.pixels().map(|p| p.0[0]).collect(),
        other => {
            // Expanded palettes arrive as RGB; the red channel carries the index
            // for the usual gray-ramp palettes.
            other.into_rgb8().pixels().map(|p| p.0[0]).collect()
        }
    };
    Ok((h, w, labels))
}

/// Little-endian cursor over a byte slice.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    container: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], container: &'static str) -> Self {
        Self {
            bytes,
            pos: 0,
            container,
        }
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(FormatError::Truncated {
                container: self.container,
                needed: self.pos.saturating_add(n),
                available: self.bytes.len(),
            }),
        }
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<(), FormatError> {
        let found: [u8; 4] = self.take(4)?.try_into().expect("4 bytes");
        if found != expected {
            return Err(FormatError::BadMagic { expected, found });
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub(crate) fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub(crate) fn f32_vec(&mut self, count: usize) -> Result<Vec<f64>, FormatError> {
        let n = count.checked_mul(4).ok_or_else(|| FormatError::Malformed {
            container: self.container,
            reason: "element count overflows".into(),
        })?;
        Ok(self
            .take(n)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect())
    }

    pub(crate) fn u32_vec(&mut self, count: usize) -> Result<Vec<u32>, FormatError> {
        let n = count.checked_mul(4).ok_or_else(|| FormatError::Malformed {
            container: self.container,
            reason: "element count overflows".into(),
        })?;
        Ok(self
            .take(n)?
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect())
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 4);
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn dim_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| invalid(format!("{what} {v} does not fit in u32")))
}

pub fn encode_vbi(img: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + img.data().len() * 4);
    out.extend_from_slice(&VBI_MAGIC);
    put_u32(&mut out, dim_u32(img.height(), "height")?);
    put_u32(&mut out, dim_u32(img.width(), "width")?);
    put_u32(&mut out, dim_u32(img.channels(), "channels")?);
    put_f32s(&mut out, img.data());
    Ok(out)
}

pub(crate) fn read_vbi_from(r: &mut Reader<'_>) -> Result<Image> {
    r.magic(VBI_MAGIC)?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let c = r.u32()? as usize;
    let len = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .ok_or(FormatError::Malformed {
            container: "VBI1",
            reason: "dimensions overflow".into(),
        })?;
    let data = r.f32_vec(len)?;
    Image::new(h, w, c, data, Encoding::Gamma)
}

pub fn decode_vbi(bytes: &[u8]) -> Result<Image> {
    let mut r = Reader::new(bytes, "VBI1");
    read_vbi_from(&mut r)
}

pub fn write_vbi(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    f.write_all(&encode_vbi(img)?)?;
    f.flush()?;
    Ok(())
}

pub fn read_vbi(path: impl AsRef<Path>) -> Result<Image> {
    decode_vbi(&fs::read(path)?)
}

/// Loads an image by extension: `.vbi`/`.vbi1` as VBI1, anything else as PNG.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("vbi") | Some("vbi1") => read_vbi(path),
        _ => read_png(path),
    }
}

pub fn write_image(path: impl AsRef<Path>, img: &Image, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("vbi") | Some("vbi1") => write_vbi(path, img),
        _ => write_png(path, img, depth),
    }
}

pub fn encode_vbk(basis: &KernelBasis, field: Option<&MixingField>) -> Result<Vec<u8>> {
    if let Some(f) = field {
        if f.count() != basis.count() {
            return Err(mismatch("mixing field count differs from basis count"));
        }
    }
    let (h, w) = field.map_or((0, 0), |f| (f.height(), f.width()));
    let mut out = Vec::new();
    out.extend_from_slice(&VBK_MAGIC);
    put_u32(&mut out, dim_u32(basis.count(), "basis count")?);
    put_u32(&mut out, dim_u32(basis.size(), "kernel size")?);
    put_u32(&mut out, dim_u32(h, "height")?);
    put_u32(&mut out, dim_u32(w, "width")?);
    put_u32(&mut out, if field.is_some() { VBK_HAS_FIELD } else { 0 });
    put_f32s(&mut out, basis.data());
    if let Some(f) = field {
        put_f32s(&mut out, f.coeffs());
    }
    Ok(out)
}

pub(crate) fn read_vbk_from(r: &mut Reader<'_>) -> Result<(KernelBasis, Option<MixingField>)> {
    r.magic(VBK_MAGIC)?;
    let b = r.u32()? as usize;
    let k = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let flags = r.u32()?;
    if flags & !VBK_HAS_FIELD != 0 {
        return Err(FormatError::Malformed {
            container: "VBK1",
            reason: format!("unknown flag bits {flags:#x}"),
        }
        .into());
    }
    let overflow = || FormatError::Malformed {
        container: "VBK1",
        reason: "dimensions overflow".into(),
    };
    let klen = b
        .checked_mul(k)
        .and_then(|n| n.checked_mul(k))
        .ok_or_else(overflow)?;
    let basis = KernelBasis::from_stored(b, k, r.f32_vec(klen)?)?;
    let field = if flags & VBK_HAS_FIELD != 0 {
        let flen = b
            .checked_mul(h)
            .and_then(|n| n.checked_mul(w))
            .ok_or_else(overflow)?;
        Some(MixingField::from_stored(b, h, w, r.f32_vec(flen)?)?)
    } else {
        None
    };
    Ok((basis, field))
}

pub fn decode_vbk(bytes: &[u8]) -> Result<(KernelBasis, Option<MixingField>)> {
    let mut r = Reader::new(bytes, "VBK1");
    read_vbk_from(&mut r)
}

pub fn write_vbk(
    path: impl AsRef<Path>,
    basis: &KernelBasis,
    field: Option<&MixingField>,
) -> Result<()> {
    fs::write(path, encode_vbk(basis, field)?)?;
    Ok(())
}

pub fn read_vbk(path: impl AsRef<Path>) -> Result<(KernelBasis, Option<MixingField>)> {
    decode_vbk(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Kernel;
    use crate::Error;

    #[test]
    fn vbi_header_layout() {
        let img = Image::from_fn(2, 3, 1, |_, y, x| (y * 3 + x) as f64 / 8.0).unwrap();
        let bytes = encode_vbi(&img).unwrap();
        assert_eq!(&bytes[..4], b"VBI1");
        assert_eq!(&bytes[4..16], &[2, 0, 0, 0, 3, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 6 * 4);
        assert_eq!(decode_vbi(&bytes).unwrap().data(), img.data());
    }

    #[test]
    fn vbk_roundtrip_with_and_without_field() {
        let basis =
            KernelBasis::from_kernels(&[Kernel::delta(3).unwrap(), Kernel::boxed(3, 3).unwrap()])
                .unwrap();
        let field = MixingField::one_hot(2, 2, 2, &[0, 1, 1, 0]).unwrap();
        let bytes = encode_vbk(&basis, Some(&field)).unwrap();
        assert_eq!(&bytes[20..24], &1u32.to_le_bytes());
        let (b2, f2) = decode_vbk(&bytes).unwrap();
        assert_eq!(b2.count(), 2);
        assert_eq!(f2.unwrap().coeffs(), field.coeffs());

        let bytes = encode_vbk(&basis, None).unwrap();
        let (_, f3) = decode_vbk(&bytes).unwrap();
        assert!(f3.is_none());
    }

    #[test]
    fn truncated_and_bad_magic() {
        let img = Image::filled(2, 2, 1, 0.5).unwrap();
        let bytes = encode_vbi(&img).unwrap();
        assert!(matches!(
            decode_vbi(&bytes[..bytes.len() - 1]),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_vbi(&bad),
            Err(Error::Format(FormatError::BadMagic { .. }))
        ));
    }

    #[test]
    fn png_roundtrip_16_bit() {
        let img = Image::from_fn(5, 7, 3, |c, y, x| ((c + y + x) % 4) as f64 / 3.0).unwrap();
        let bytes = encode_png(&img, BitDepth::Sixteen).unwrap();
        let back = decode_png(&bytes).unwrap();
        assert_eq!(back.channels(), 3);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-9);
        }
        let gray = img.luminance();
        let back = decode_png(&encode_png(&gray, BitDepth::Eight).unwrap()).unwrap();
        assert_eq!(back.channels(), 1);
        for (a, b) in gray.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}
