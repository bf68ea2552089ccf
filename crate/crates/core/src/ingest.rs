//! Frame loading and preprocessing.
//!
//! Frames are stored as linear-light luminance in `[0, 1]`. Loading applies
//! the display inverse transfer function; preprocessing resizes with an
//! area-average kernel and center-crops.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter("frame dimensions must be non-zero".into()));
        }
        if data.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "frame {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(&bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::OutOfRange { value: bad });
        }
        Ok(Frame {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Frame::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Frame::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Apply `f` to every value; the result must stay in `[0, 1]`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Frame> {
        Frame::new(self.height, self.width, self.data.iter().map(|&v| f(v)).collect())
    }
}

/// A `T x H x W` stack of frames, one per exposure slot.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Vec<Frame>,
}

impl VideoClip {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames.first().ok_or(Error::Empty("clip has no frames"))?;
        let dims = first.dims();
        if let Some(bad) = frames.iter().find(|f| f.dims() != dims) {
            return Err(Error::InconsistentDimensions {
                expected: dims,
                found: bad.dims(),
            });
        }
        Ok(VideoClip { frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    /// Number of exposure slots.
    pub fn slots(&self) -> usize {
        self.frames.len()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    #[inline]
    pub fn value(&self, t: usize, i: usize, j: usize) -> f64 {
        self.frames[t].get(i, j)
    }
}

/// Display inverse transfer function for a single value.
pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Linearize a display-referred frame.
pub fn to_linear(frame: &Frame) -> Result<Frame> {
    frame.map(srgb_to_linear)
}

/// BT.601 luma of a linear-light RGB triple.
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    (0.299 * r + 0.587 * g + 0.114 * b).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameFormat {
    Pgm8,
    Pgm16,
    PngGray,
}

impl std::str::FromStr for FrameFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgm8" => Ok(FrameFormat::Pgm8),
            "pgm16" => Ok(FrameFormat::Pgm16),
            "png-gray" | "png" => Ok(FrameFormat::PngGray),
            other => Err(Error::InvalidParameter(format!("unknown frame format '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    /// Expected on-disk format; `None` detects it from each file.
    pub format: Option<FrameFormat>,
    /// Apply the display inverse transfer function after scaling to `[0, 1]`.
    pub linearize: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            format: None,
            linearize: true,
        }
    }
}

/// Load a frame sequence from a directory (files in lexicographic order) or
/// from a single file, which may hold several concatenated binary PGM images.
pub fn load_frame_sequence(path: &Path, opts: LoadOptions) -> Result<VideoClip> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    let files = if meta.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && frame_extension(p).is_some())
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    if files.is_empty() {
        return Err(Error::NoFrames(path.to_path_buf()));
    }

    let mut frames = Vec::new();
    for file in &files {
        frames.extend(load_frames_from_file(file, opts)?);
    }
    if frames.is_empty() {
        return Err(Error::NoFrames(path.to_path_buf()));
    }
    VideoClip::new(frames)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Container {
    Pgm,
    Png,
}

fn frame_extension(path: &Path) -> Option<Container> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    match ext.as_str() {
        "pgm" => Some(Container::Pgm),
        "png" => Some(Container::Png),
        _ => None,
    }
}

fn load_frames_from_file(path: &Path, opts: LoadOptions) -> Result<Vec<Frame>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let container = if bytes.starts_with(b"P5") {
        Container::Pgm
    } else if bytes.starts_with(b"\x89PNG") {
        Container::Png
    } else {
        frame_extension(path).ok_or_else(|| Error::Decode {
            path: path.to_path_buf(),
            message: "unrecognized frame file".into(),
        })?
    };
    let finish = |values: Vec<f64>, h: usize, w: usize| -> Result<Frame> {
        let frame = Frame::new(h, w, values)?;
        if opts.linearize {
            to_linear(&frame)
        } else {
            Ok(frame)
        }
    };

    match container {
        Container::Pgm => {
            let images = parse_pgm_stream(&bytes).map_err(|message| Error::Decode {
                path: path.to_path_buf(),
                message,
            })?;
            images
                .into_iter()
                .map(|img| {
                    let depth = if img.maxval <= 255 { 8 } else { 16 };
                    match opts.format {
                        Some(FrameFormat::Pgm8) if depth != 8 => {
                            return Err(Error::UnsupportedBitDepth(format!(
                                "{}: expected 8-bit PGM, found maxval {}",
                                path.display(),
                                img.maxval
                            )))
                        }
                        Some(FrameFormat::Pgm16) if depth != 16 => {
                            return Err(Error::UnsupportedBitDepth(format!(
                                "{}: expected 16-bit PGM, found maxval {}",
                                path.display(),
                                img.maxval
                            )))
                        }
                        Some(FrameFormat::PngGray) => {
                            return Err(Error::Decode {
                                path: path.to_path_buf(),
                                message: "expected PNG, found PGM".into(),
                            })
                        }
                        _ => {}
                    }
                    let scale = img.maxval as f64;
                    let values = img.samples.iter().map(|&v| (v as f64 / scale).min(1.0)).collect();
                    finish(values, img.height, img.width)
                })
                .collect()
        }
        Container::Png => {
            if matches!(opts.format, Some(FrameFormat::Pgm8 | FrameFormat::Pgm16)) {
                return Err(Error::Decode {
                    path: path.to_path_buf(),
                    message: "expected PGM, found PNG".into(),
                });
            }
            let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
                .map_err(|e| Error::Decode {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })?;
            let (w, h) = (img.width() as usize, img.height() as usize);
            use image::DynamicImage::*;
            let values: Vec<f64> = match &img {
                ImageLuma8(buf) => buf.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
                ImageLuma16(buf) => buf.as_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
                ImageRgb8(_) | ImageRgba8(_) | ImageRgb16(_) | ImageRgba16(_) => {
                    // Color: linearize each channel, then take luma in linear space.
                    let rgb = img.to_rgb32f();
                    let lin = |v: f32| {
                        let v = (v as f64).clamp(0.0, 1.0);
                        if opts.linearize {
                            srgb_to_linear(v)
                        } else {
                            v
                        }
                    };
                    let values = rgb
                        .pixels()
                        .map(|p| luma(lin(p[0]), lin(p[1]), lin(p[2])))
                        .collect();
                    return Ok(vec![Frame::new(h, w, values)?]);
                }
                other => {
                    return Err(Error::UnsupportedBitDepth(format!(
                        "{}: unsupported PNG color type {:?}",
                        path.display(),
                        other.color()
                    )))
                }
            };
            Ok(vec![finish(values, h, w)?])
        }
    }
}

struct PgmImage {
    width: usize,
    height: usize,
    maxval: u32,
    samples: Vec<u32>,
}

/// Parse one or more binary (P5) PGM images laid end to end.
fn parse_pgm_stream(bytes: &[u8]) -> std::result::Result<Vec<PgmImage>, String> {
    let mut pos = 0;
    let mut images = Vec::new();
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            break;
        }
        let (img, next) = parse_pgm(bytes, pos)?;
        images.push(img);
        pos = next;
    }
    if images.is_empty() {
        return Err("empty PGM stream".into());
    }
    Ok(images)
}

fn parse_pgm(bytes: &[u8], start: usize) -> std::result::Result<(PgmImage, usize), String> {
    if bytes.get(start..start + 2) != Some(b"P5") {
        return Err("missing P5 magic".into());
    }
    let mut pos = start + 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and comments.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err("truncated PGM header".into()),
            }
        }
        let begin = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if begin == pos {
            return Err("malformed PGM header".into());
        }
        *field = std::str::from_utf8(&bytes[begin..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("malformed PGM header number")?;
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err("truncated PGM header".into()),
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("unsupported bit depth (maxval {maxval})"));
    }
    let (width, height) = (width as usize, height as usize);
    let n = width * height;
    let bytes_per = if maxval <= 255 { 1 } else { 2 };
    let end = pos + n * bytes_per;
    let raster = bytes.get(pos..end).ok_or("truncated PGM raster")?;
    let samples = if bytes_per == 1 {
        raster.iter().map(|&b| b as u32).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
            .collect()
    };
    Ok((
        PgmImage {
            width,
            height,
            maxval,
            samples,
        },
        end,
    ))
}

/// Write a frame as a binary PGM with the given bit depth (8 or 16). Values are
/// written as-is (no transfer function), rounded to the nearest code.
pub fn write_pgm(frame: &Frame, path: &Path, bits: u8) -> Result<()> {
    let maxval: u32 = match bits {
        8 => 255,
        16 => 65535,
        other => return Err(Error::UnsupportedBitDepth(format!("{other}-bit PGM"))),
    };
    let mut out = format!("P5\n{} {}\n{}\n", frame.width, frame.height, maxval).into_bytes();
    for &v in &frame.data {
        let code = (v * maxval as f64).round() as u32;
        if bits == 8 {
            out.push(code as u8);
        } else {
            out.extend_from_slice(&(code as u16).to_be_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Write every frame of a clip as `frame_00000.pgm`, ... into `dir`.
pub fn write_frame_sequence(clip: &VideoClip, dir: &Path, bits: u8) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    clip.frames
        .iter()
        .enumerate()
        .map(|(k, frame)| {
            let path = dir.join(format!("frame_{k:05}.pgm"));
            write_pgm(frame, &path, bits)?;
            Ok(path)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreprocessConfig {
    pub short_side: usize,
    pub crop: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            short_side: 112,
            crop: 112,
        }
    }
}

/// Resize so the shorter side equals `short_side` (area average), then take
/// the centered `crop x crop` window. Odd margins leave the extra pixel on the
/// right/bottom.
pub fn preprocess(clip: &VideoClip, cfg: PreprocessConfig) -> Result<VideoClip> {
    if cfg.short_side == 0 || cfg.crop == 0 {
        return Err(Error::InvalidParameter("short_side and crop must be positive".into()));
    }
    if cfg.crop > cfg.short_side {
        return Err(Error::InvalidParameter(format!(
            "crop {} larger than short side {}",
            cfg.crop, cfg.short_side
        )));
    }
    let (h, w) = (clip.height(), clip.width());
    if h.min(w) < cfg.crop {
        return Err(Error::TooSmall {
            height: h,
            width: w,
            required: cfg.crop,
        });
    }
    let short = h.min(w);
    let scale = |long: usize| -> usize {
        ((long as u128 * cfg.short_side as u128 + short as u128 / 2) / short as u128) as usize
    };
    let (new_h, new_w) = if h <= w {
        (cfg.short_side, scale(w))
    } else {
        (scale(h), cfg.short_side)
    };
    let frames = clip
        .frames
        .iter()
        .map(|f| {
            let resized = area_resize(f, new_h, new_w)?;
            center_crop(&resized, cfg.crop)
        })
        .collect::<Result<Vec<_>>>()?;
    VideoClip::new(frames)
}

/// Area-average (box) resampling to `out_h x out_w`.
pub fn area_resize(frame: &Frame, out_h: usize, out_w: usize) -> Result<Frame> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidParameter("output dimensions must be positive".into()));
    }
    if (out_h, out_w) == frame.dims() {
        return Ok(frame.clone());
    }
    let col_weights = area_weights(frame.width, out_w);
    let row_weights = area_weights(frame.height, out_h);

    let mut rows = vec![0.0; frame.height * out_w];
    for i in 0..frame.height {
        let src = &frame.data[i * frame.width..(i + 1) * frame.width];
        for (o, taps) in col_weights.iter().enumerate() {
            rows[i * out_w + o] = taps.iter().map(|&(k, wt)| src[k] * wt).sum();
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for (o, taps) in row_weights.iter().enumerate() {
        for j in 0..out_w {
            let v: f64 = taps.iter().map(|&(k, wt)| rows[k * out_w + j] * wt).sum();
            out[o * out_w + j] = v.clamp(0.0, 1.0);
        }
    }
    Frame::new(out_h, out_w, out)
}

/// Per output sample, the contributing input indices and their area weights.
/// Coordinates are scaled by `n_in * n_out` so overlaps are exact integers.
fn area_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    (0..n_out)
        .map(|o| {
            let start = o * n_in;
            let end = (o + 1) * n_in;
            let first = start / n_out;
            let last = (end - 1) / n_out;
            (first..=last)
                .filter_map(|k| {
                    let overlap = end.min((k + 1) * n_out) - start.max(k * n_out);
                    (overlap > 0).then(|| (k, overlap as f64 / n_in as f64))
                })
                .collect()
        })
        .collect()
}

pub fn center_crop(frame: &Frame, crop: usize) -> Result<Frame> {
    if frame.height < crop || frame.width < crop {
        return Err(Error::TooSmall {
            height: frame.height,
            width: frame.width,
            required: crop,
        });
    }
    let top = (frame.height - crop) / 2;
    let left = (frame.width - crop) / 2;
    Frame::from_fn(crop, crop, |i, j| frame.get(top + i, left + j))
}

/// Split a frame stream into windows `[k*stride, k*stride + slots)`.
pub fn window_clips(frames: &[Frame], slots: usize, stride: usize) -> Result<Vec<VideoClip>> {
    if slots == 0 || stride == 0 {
        return Err(Error::InvalidParameter("window length and stride must be positive".into()));
    }
    if frames.len() < slots {
        return Ok(Vec::new());
    }
    (0..=(frames.len() - slots) / stride)
        .map(|k| VideoClip::new(frames[k * stride..k * stride + slots].to_vec()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip_of(frames: Vec<Frame>) -> VideoClip {
        VideoClip::new(frames).unwrap()
    }

    #[test]
    fn transfer_function_endpoints_and_midpoint() {
        assert_eq!(srgb_to_linear(0.0), 0.0);
        assert_eq!(srgb_to_linear(1.0), 1.0);
        // ((0.5 + 0.055) / 1.055)^2.4 evaluated separately.
        assert!((srgb_to_linear(0.5) - 0.214_041_140_482_232_55).abs() < 1e-12);
        assert!((srgb_to_linear(0.04) - 0.04 / 12.92).abs() < 1e-15);
    }

    #[test]
    fn to_linear_rejects_out_of_range() {
        let bad = Frame {
            height: 1,
            width: 1,
            data: vec![1.5],
        };
        assert!(matches!(to_linear(&bad), Err(Error::OutOfRange { .. })));
        assert!(matches!(Frame::new(1, 1, vec![-0.1]), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn transfer_function_is_strictly_monotone() {
        let mut prev = -1.0;
        for k in 0..=10_000 {
            let v = srgb_to_linear(k as f64 / 10_000.0);
            assert!(v > prev, "not increasing at {k}");
            prev = v;
        }
    }

    #[test]
    fn constant_downsample_keeps_constant() {
        let c = 0.37;
        let clip = clip_of(vec![Frame::filled(224, 224, c).unwrap()]);
        let out = preprocess(&clip, PreprocessConfig::default()).unwrap();
        assert_eq!(out.frames()[0].dims(), (112, 112));
        assert!(out.frames()[0].data().iter().all(|&v| (v - c).abs() < 1e-12));
    }

    #[test]
    fn target_size_is_identity() {
        let f = Frame::from_fn(112, 112, |i, j| ((i * 7 + j * 3) % 11) as f64 / 10.0).unwrap();
        let clip = clip_of(vec![f]);
        let out = preprocess(&clip, PreprocessConfig::default()).unwrap();
        assert_eq!(out, clip);
        assert_eq!(preprocess(&out, PreprocessConfig::default()).unwrap(), out);
    }

    #[test]
    fn checkerboard_averages_to_half() {
        let f = Frame::from_fn(224, 336, |i, j| ((i + j) % 2) as f64).unwrap();
        let out = preprocess(&clip_of(vec![f]), PreprocessConfig::default()).unwrap();
        assert_eq!(out.frames()[0].dims(), (112, 112));
        assert!(out.frames()[0].data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn resize_preserves_mean_on_even_division() {
        let f = Frame::from_fn(48, 64, |i, j| ((i * 31 + j * 17) % 97) as f64 / 96.0).unwrap();
        let r = area_resize(&f, 12, 16).unwrap();
        assert!((f.mean() - r.mean()).abs() < 1e-6);
    }

    #[test]
    fn fractional_resize_weights_sum_to_one() {
        for (n_in, n_out) in [(7, 3), (300, 112), (113, 112), (5, 5)] {
            for taps in area_weights(n_in, n_out) {
                let s: f64 = taps.iter().map(|t| t.1).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn odd_margin_goes_right_and_bottom() {
        let f = Frame::from_fn(5, 6, |i, j| (i * 6 + j) as f64 / 29.0).unwrap();
        let c = center_crop(&f, 3).unwrap();
        // top = (5-3)/2 = 1, left = (6-3)/2 = 1
        assert_eq!(c.get(0, 0), f.get(1, 1));
    }

    #[test]
    fn too_small_input_is_rejected() {
        let clip = clip_of(vec![Frame::filled(100, 200, 0.5).unwrap()]);
        assert!(matches!(
            preprocess(&clip, PreprocessConfig::default()),
            Err(Error::TooSmall { .. })
        ));
    }

    #[test]
    fn windows() {
        let frames: Vec<Frame> = (0..32).map(|k| Frame::filled(2, 2, k as f64 / 31.0).unwrap()).collect();
        assert_eq!(window_clips(&frames[..16], 16, 16).unwrap().len(), 1);
        let w = window_clips(&frames, 16, 8).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w[2].frames()[0], frames[16]);
        assert!(window_clips(&frames[..10], 16, 1).unwrap().is_empty());
        assert!(window_clips(&frames, 0, 1).is_err());
        assert!(window_clips(&frames, 4, 0).is_err());
    }

    #[test]
    fn mismatched_clip_rejected() {
        let r = VideoClip::new(vec![Frame::filled(2, 2, 0.0).unwrap(), Frame::filled(2, 3, 0.0).unwrap()]);
        assert!(matches!(r, Err(Error::InconsistentDimensions { .. })));
    }

    #[test]
    fn pgm_stream_parses_multiple_images_and_comments() {
        let mut bytes = b"P5\n# comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255]);
        bytes.extend_from_slice(b"\nP5 1 1 65535\n");
        bytes.extend_from_slice(&[0x80, 0x00]);
        let images = parse_pgm_stream(&bytes).unwrap();
        assert_eq!(images.len(), 2);
        assert_eq!(images[0].samples, vec![0, 255]);
        assert_eq!(images[1].maxval, 65535);
        assert_eq!(images[1].samples, vec![0x8000]);
    }

    #[test]
    fn pgm_truncated_raster_is_error() {
        let bytes = b"P5 4 4 255\n\x00\x01".to_vec();
        assert!(parse_pgm_stream(&bytes).is_err());
    }
}
