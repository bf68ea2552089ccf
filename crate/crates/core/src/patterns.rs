//! Tile-repetitive exposure patterns.
//!
//! A [`TilePattern`] holds `T x M x M` exposure bits for one tile; [`expand`]
//! replicates it over a full frame. The text file format is
//!
//! ```text
//! CEPAT v1
//! T=<int> M=<int> seed=<int|none>
//! <M lines of M chars in {0,1}>      slot 0
//!
//! <M lines of M chars in {0,1}>      slot 1
//! ...
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::seeded_rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePattern {
    slots: usize,
    tile: usize,
    bits: Vec<u8>,
    seed: Option<u64>,
}

impl TilePattern {
    pub fn new(slots: usize, tile: usize, bits: Vec<u8>) -> Result<Self> {
        if slots == 0 || tile == 0 {
            return Err(Error::InvalidParameter("T and M must be at least 1".into()));
        }
        if bits.len() != slots * tile * tile {
            return Err(Error::DimensionMismatch(format!(
                "pattern {slots}x{tile}x{tile} needs {} bits, got {}",
                slots * tile * tile,
                bits.len()
            )));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Validation(format!("pattern bit {b} is not 0 or 1")));
        }
        Ok(TilePattern {
            slots,
            tile,
            bits,
            seed: None,
        })
    }

    pub fn from_fn(slots: usize, tile: usize, f: impl Fn(usize, usize, usize) -> bool) -> Result<Self> {
        let mut bits = Vec::with_capacity(slots * tile * tile);
        for t in 0..slots {
            for i in 0..tile {
                for j in 0..tile {
                    bits.push(f(t, i, j) as u8);
                }
            }
        }
        TilePattern::new(slots, tile, bits)
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn tile(&self) -> usize {
        self.tile
    }

    /// Pixels per tile, `M^2`.
    pub fn pixels(&self) -> usize {
        self.tile * self.tile
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Bits in `t, i, j` row-major order.
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn bit(&self, t: usize, i: usize, j: usize) -> u8 {
        self.bits[(t * self.tile + i) * self.tile + j]
    }

    /// The `M^2` bits of slot `t`, row-major within the tile.
    pub fn slot_bits(&self, t: usize) -> &[u8] {
        let p = self.pixels();
        &self.bits[t * p..(t + 1) * p]
    }

    pub fn exposure_count(&self) -> ExposureCount {
        let p = self.pixels();
        let mut counts = vec![0u32; p];
        for t in 0..self.slots {
            for (c, &b) in counts.iter_mut().zip(self.slot_bits(t)) {
                *c += b as u32;
            }
        }
        ExposureCount {
            height: self.tile,
            width: self.tile,
            counts,
        }
    }

    /// Number of set bits over the whole pattern.
    pub fn ones(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }
}

/// Per-position number of exposed slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExposureCount {
    pub height: usize,
    pub width: usize,
    pub counts: Vec<u32>,
}

impl ExposureCount {
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.counts[i * self.width + j]
    }

    /// `hist[k]` = number of positions exposed in exactly `k` slots, for `k in 0..=slots`.
    pub fn histogram(&self, slots: usize) -> Vec<usize> {
        let mut hist = vec![0; slots + 1];
        for &c in &self.counts {
            hist[c as usize] += 1;
        }
        hist
    }
}

/// A `T x H x W` binary exposure mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FullMask {
    slots: usize,
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl FullMask {
    pub fn new(slots: usize, height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != slots * height * width {
            return Err(Error::DimensionMismatch(format!(
                "mask {slots}x{height}x{width} needs {} bits, got {}",
                slots * height * width,
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Validation("mask bits must be 0 or 1".into()));
        }
        Ok(FullMask {
            slots,
            height,
            width,
            bits,
        })
    }

    pub fn filled(slots: usize, height: usize, width: usize, bit: bool) -> Self {
        FullMask {
            slots,
            height,
            width,
            bits: vec![bit as u8; slots * height * width],
        }
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn bit(&self, t: usize, i: usize, j: usize) -> u8 {
        self.bits[(t * self.height + i) * self.width + j]
    }

    /// The `H x W` plane of slot `t`.
    pub fn slot_plane(&self, t: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.bits[t * n..(t + 1) * n]
    }

    pub fn exposure_count(&self) -> ExposureCount {
        let n = self.height * self.width;
        let mut counts = vec![0u32; n];
        for t in 0..self.slots {
            for (c, &b) in counts.iter_mut().zip(self.slot_plane(t)) {
                *c += b as u32;
            }
        }
        ExposureCount {
            height: self.height,
            width: self.width,
            counts,
        }
    }

    /// Read back the `tile x tile` block whose top-left tile index is
    /// `(tile_row, tile_col)`.
    pub fn restrict(&self, tile: usize, tile_row: usize, tile_col: usize) -> Result<TilePattern> {
        if tile == 0 || (tile_row + 1) * tile > self.height || (tile_col + 1) * tile > self.width {
            return Err(Error::DimensionMismatch(format!(
                "tile ({tile_row}, {tile_col}) of size {tile} outside {}x{} mask",
                self.height, self.width
            )));
        }
        TilePattern::from_fn(self.slots, tile, |t, i, j| {
            self.bit(t, tile_row * tile + i, tile_col * tile + j) == 1
        })
    }
}

/// Replicate `tile` over an `H x W` frame. `M` must divide both sides.
pub fn expand(tile: &TilePattern, height: usize, width: usize) -> Result<FullMask> {
    let m = tile.tile;
    if height == 0 || width == 0 || height % m != 0 || width % m != 0 {
        return Err(Error::NotDivisible {
            height,
            width,
            tile: m,
        });
    }
    let mut bits = Vec::with_capacity(tile.slots * height * width);
    for t in 0..tile.slots {
        for i in 0..height {
            let row = &tile.slot_bits(t)[(i % m) * m..(i % m + 1) * m];
            bits.extend(row.iter().cycle().take(width));
        }
    }
    Ok(FullMask {
        slots: tile.slots,
        height,
        width,
        bits,
    })
}

/// Every pixel exposed in every slot.
pub fn long_exposure(slots: usize, tile: usize) -> Result<TilePattern> {
    TilePattern::from_fn(slots, tile, |_, _, _| true)
}

/// Every pixel exposed in slots `t` with `t mod period == offset`.
pub fn short_exposure(slots: usize, tile: usize, period: usize, offset: usize) -> Result<TilePattern> {
    if period == 0 {
        return Err(Error::InvalidParameter("period must be at least 1".into()));
    }
    let phase = offset % period;
    TilePattern::from_fn(slots, tile, |t, _, _| t % period == phase)
}

/// I.i.d. Bernoulli(`p`) bits from a ChaCha8 stream seeded with `seed`.
pub fn random_pattern(slots: usize, tile: usize, p: f64, seed: u64) -> Result<TilePattern> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("probability {p} outside [0, 1]")));
    }
    let mut rng = seeded_rng(seed);
    let n = slots * tile * tile;
    let bits = (0..n).map(|_| (rng.gen::<f64>() < p) as u8).collect();
    Ok(TilePattern::new(slots, tile, bits)?.with_seed(Some(seed)))
}

/// Each pixel exposed in exactly one uniformly chosen slot.
pub fn sparse_random(slots: usize, tile: usize, seed: u64) -> Result<TilePattern> {
    if slots == 0 || tile == 0 {
        return Err(Error::InvalidParameter("T and M must be at least 1".into()));
    }
    let mut rng = seeded_rng(seed);
    let chosen: Vec<usize> = (0..tile * tile).map(|_| rng.gen_range(0..slots)).collect();
    Ok(TilePattern::from_fn(slots, tile, |t, i, j| chosen[i * tile + j] == t)?.with_seed(Some(seed)))
}

/// Pattern generator selector used by front ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PatternKind {
    Long,
    Short { period: usize, offset: usize },
    Random { p: f64 },
    SparseRandom,
}

impl PatternKind {
    pub fn generate(self, slots: usize, tile: usize, seed: u64) -> Result<TilePattern> {
        match self {
            PatternKind::Long => long_exposure(slots, tile),
            PatternKind::Short { period, offset } => short_exposure(slots, tile, period, offset),
            PatternKind::Random { p } => random_pattern(slots, tile, p, seed),
            PatternKind::SparseRandom => sparse_random(slots, tile, seed),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PatternKind::Long => "long",
            PatternKind::Short { .. } => "short",
            PatternKind::Random { .. } => "random",
            PatternKind::SparseRandom => "sparse-random",
        }
    }
}

const PATTERN_MAGIC: &str = "CEPAT v1";

pub fn format_pattern(pattern: &TilePattern) -> String {
    let mut out = String::new();
    let seed = pattern.seed.map_or_else(|| "none".to_string(), |s| s.to_string());
    let _ = writeln!(out, "{PATTERN_MAGIC}");
    let _ = writeln!(out, "T={} M={} seed={}", pattern.slots, pattern.tile, seed);
    let m = pattern.tile;
    for t in 0..pattern.slots {
        if t > 0 {
            out.push('\n');
        }
        for row in pattern.slot_bits(t).chunks(m) {
            out.extend(row.iter().map(|&b| if b == 1 { '1' } else { '0' }));
            out.push('\n');
        }
    }
    out
}

pub fn parse_pattern(text: &str) -> Result<TilePattern> {
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l.trim_end_matches('\r')));
    let parse_err = |line: usize, message: &str| Error::Parse {
        line,
        message: message.to_string(),
    };

    match lines.next() {
        Some((_, l)) if l == PATTERN_MAGIC => {}
        Some((n, _)) => return Err(parse_err(n, "expected 'CEPAT v1' header")),
        None => return Err(parse_err(1, "empty pattern file")),
    }
    let (n, header) = lines.next().ok_or_else(|| parse_err(2, "missing dimension line"))?;
    let mut slots = None;
    let mut tile = None;
    let mut seed = None;
    for field in header.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| parse_err(n, "expected key=value fields"))?;
        match key {
            "T" => slots = Some(value.parse::<usize>().map_err(|_| parse_err(n, "bad T"))?),
            "M" => tile = Some(value.parse::<usize>().map_err(|_| parse_err(n, "bad M"))?),
            "seed" => {
                seed = Some(if value == "none" {
                    None
                } else {
                    Some(value.parse::<u64>().map_err(|_| parse_err(n, "bad seed"))?)
                })
            }
            _ => return Err(parse_err(n, "unknown header field")),
        }
    }
    let (slots, tile, seed) = match (slots, tile, seed) {
        (Some(t), Some(m), Some(s)) if t > 0 && m > 0 => (t, m, s),
        _ => return Err(parse_err(n, "header needs positive T, M and a seed field")),
    };

    let mut bits = Vec::with_capacity(slots * tile * tile);
    let mut last_line = n;
    for t in 0..slots {
        if t > 0 {
            match lines.next() {
                Some((_, "")) => {}
                Some((k, _)) => return Err(parse_err(k, "expected blank line between slots")),
                None => return Err(parse_err(last_line + 1, "truncated pattern")),
            }
        }
        for _ in 0..tile {
            let (k, row) = lines
                .next()
                .ok_or_else(|| parse_err(last_line + 1, "truncated pattern"))?;
            last_line = k;
            if row.chars().count() != tile {
                return Err(parse_err(k, "row length differs from M"));
            }
            for c in row.chars() {
                match c {
                    '0' => bits.push(0),
                    '1' => bits.push(1),
                    d if d.is_ascii_digit() => {
                        return Err(Error::Validation(format!("line {k}: bit '{d}' is not 0 or 1")))
                    }
                    _ => return Err(parse_err(k, "unexpected character in pattern row")),
                }
            }
        }
    }
    if let Some((k, _)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(parse_err(k, "trailing content after last slot"));
    }
    Ok(TilePattern::new(slots, tile, bits)?.with_seed(seed))
}

pub fn save_pattern(pattern: &TilePattern, path: &Path) -> Result<()> {
    fs::write(path, format_pattern(pattern)).map_err(|e| Error::io(path, e))
}

pub fn load_pattern(path: &Path) -> Result<TilePattern> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pattern(&text)
}
