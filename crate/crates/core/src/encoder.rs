//! Coded-exposure integration of a masked clip into a single coded image.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::VideoClip;
use crate::patterns::FullMask;

#[derive(Debug, Clone, PartialEq)]
pub struct CodedImage {
    height: usize,
    width: usize,
    values: Vec<f64>,
    counts: Vec<u32>,
    normalized: bool,
    zero_count_positions: usize,
}

impl CodedImage {
    pub fn new(height: usize, width: usize, values: Vec<f64>, counts: Vec<u32>, normalized: bool) -> Result<Self> {
        let n = height * width;
        if values.len() != n || counts.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "coded image {height}x{width} needs {n} values and counts, got {} and {}",
                values.len(),
                counts.len()
            )));
        }
        Ok(CodedImage {
            height,
            width,
            values,
            counts,
            normalized,
            zero_count_positions: 0,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Positions that had no exposure when the image was normalized.
    pub fn zero_count_positions(&self) -> usize {
        self.zero_count_positions
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }

    #[inline]
    pub fn count(&self, i: usize, j: usize) -> u32 {
        self.counts[i * self.width + j]
    }
}

/// `X(i, j) = sum_t M(t, i, j) * Y(i, j, t)`, with per-position exposure counts.
pub fn encode(clip: &VideoClip, mask: &FullMask) -> Result<CodedImage> {
    let (t_len, h, w) = (clip.slots(), clip.height(), clip.width());
    if (mask.slots(), mask.height(), mask.width()) != (t_len, h, w) {
        return Err(Error::DimensionMismatch(format!(
            "clip is {t_len}x{h}x{w} but mask is {}x{}x{}",
            mask.slots(),
            mask.height(),
            mask.width()
        )));
    }
    let mut values = vec![0.0; h * w];
    let mut counts = vec![0u32; h * w];
    values
        .par_chunks_mut(w)
        .zip(counts.par_chunks_mut(w))
        .enumerate()
        .for_each(|(i, (vrow, crow))| {
            for t in 0..t_len {
                let plane = &mask.slot_plane(t)[i * w..(i + 1) * w];
                let frame = &clip.frames()[t].data()[i * w..(i + 1) * w];
                for j in 0..w {
                    let bit = plane[j];
                    vrow[j] += bit as f64 * frame[j];
                    crow[j] += bit as u32;
                }
            }
        });
    CodedImage::new(h, w, values, counts, false)
}

/// Divide every value by its exposure count. Unexposed positions become 0.
pub fn normalize(coded: &CodedImage) -> Result<CodedImage> {
    if coded.normalized {
        return Err(Error::AlreadyNormalized);
    }
    let mut zero = 0;
    let values = coded
        .values
        .iter()
        .zip(&coded.counts)
        .map(|(&v, &c)| {
            if c == 0 {
                zero += 1;
                0.0
            } else {
                v / c as f64
            }
        })
        .collect();
    Ok(CodedImage {
        values,
        normalized: true,
        zero_count_positions: zero,
        ..coded.clone()
    })
}

/// `(T * H * W * raw_bits) / (H * W * coded_bits)`.
pub fn compression_ratio(clip: &VideoClip, coded: &CodedImage, raw_bits: u32, coded_bits: u32) -> Result<f64> {
    if raw_bits == 0 || coded_bits == 0 {
        return Err(Error::InvalidParameter("bit depths must be positive".into()));
    }
    if (clip.height(), clip.width()) != (coded.height, coded.width) {
        return Err(Error::DimensionMismatch("clip and coded image differ in size".into()));
    }
    Ok(raw_bytes(clip, raw_bits) as f64 / coded_bytes(coded, coded_bits) as f64)
}

/// Bytes needed for the raw clip at `bits` per pixel.
pub fn raw_bytes(clip: &VideoClip, bits: u32) -> u64 {
    (clip.slots() * clip.height() * clip.width()) as u64 * bits as u64 / 8
}

/// Bytes needed for the coded image payload at `bits` per pixel.
pub fn coded_bytes(coded: &CodedImage, bits: u32) -> u64 {
    (coded.height * coded.width) as u64 * bits as u64 / 8
}

/// Quantize to 8 bits: unnormalized values are first divided by `slots`,
/// then scaled to `[0, 255]` and rounded half-to-even.
pub fn quantize_8bit(coded: &CodedImage, slots: usize) -> Vec<u8> {
    let scale = if coded.normalized { 1.0 } else { 1.0 / slots.max(1) as f64 };
    coded
        .values
        .iter()
        .map(|&v| (v * scale * 255.0).round_ties_even().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Export the 8-bit quantized coded image as a binary PGM.
pub fn write_coded_pgm(coded: &CodedImage, slots: usize, path: &Path) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", coded.width, coded.height).into_bytes();
    out.extend(quantize_8bit(coded, slots));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

const CODED_MAGIC: &[u8; 4] = b"SNPX";
const CODED_VERSION: u8 = 1;
const FLAG_NORMALIZED: u8 = 1;

/// Serialize to the binary coded-image format:
/// magic, version, `u32` H and W, flags, `f32` values, `u8` counts, CRC32.
/// All integers and floats are little-endian; values are narrowed to `f32`.
pub fn encode_coded_bytes(coded: &CodedImage) -> Result<Vec<u8>> {
    if let Some(&c) = coded.counts.iter().find(|&&c| c > u8::MAX as u32) {
        return Err(Error::InvalidParameter(format!("exposure count {c} does not fit in u8")));
    }
    let n = coded.height * coded.width;
    let mut out = Vec::with_capacity(4 + 1 + 8 + 1 + 5 * n + 4);
    out.extend_from_slice(CODED_MAGIC);
    out.push(CODED_VERSION);
    out.extend_from_slice(&(coded.height as u32).to_le_bytes());
    out.extend_from_slice(&(coded.width as u32).to_le_bytes());
    out.push(if coded.normalized { FLAG_NORMALIZED } else { 0 });
    for &v in &coded.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.extend(coded.counts.iter().map(|&c| c as u8));
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_coded_bytes(bytes: &[u8]) -> Result<CodedImage> {
    if bytes.len() < 4 {
        return Err(Error::Truncated);
    }
    if &bytes[..4] != CODED_MAGIC {
        return Err(Error::BadMagic);
    }
    let version = *bytes.get(4).ok_or(Error::Truncated)?;
    if version != CODED_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let header = bytes.get(5..14).ok_or(Error::Truncated)?;
    let height = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let flags = header[8];
    let n = height.checked_mul(width).ok_or(Error::Truncated)?;
    let body_end = 14 + 5 * n;
    if bytes.len() < body_end + 4 {
        return Err(Error::Truncated);
    }
    if bytes.len() > body_end + 4 {
        return Err(Error::Validation("trailing bytes after checksum".into()));
    }
    let stored = u32::from_le_bytes(bytes[body_end..body_end + 4].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let values = bytes[14..14 + 4 * n]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let counts = bytes[14 + 4 * n..body_end].iter().map(|&c| c as u32).collect();
    CodedImage::new(height, width, values, counts, flags & FLAG_NORMALIZED != 0)
}

pub fn write_coded(coded: &CodedImage, path: &Path) -> Result<()> {
    let bytes = encode_coded_bytes(coded)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_coded(path: &Path) -> Result<CodedImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_coded_bytes(&bytes)
}
