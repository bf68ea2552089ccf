//! Within-tile correlation statistics of coded images.
//!
//! Every coded image is cut into `N x N` tiles of `M x M` pixels. Each of the
//! `P = M^2` within-tile positions becomes one row of a [`SampleMatrix`] whose
//! `S = B * N^2` columns are the tiles of the batch. Rows are contrast encoded
//! (tile means removed), correlated with Pearson's coefficient, and the mean
//! squared off-diagonal coefficient is the decorrelation loss.

use rayon::prelude::*;

use crate::encoder::CodedImage;
use crate::error::{Error, Result};

/// Added to `sd_i * sd_j` in the Pearson denominator. Rows whose standard
/// deviation falls below it are treated as dead (correlation 0 with everything).
pub const PEARSON_EPS: f64 = 1e-8;

/// `P x S` samples, row-major. Column `k` is tile `k % tiles_per_image` of
/// image `k / tiles_per_image`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    pixels: usize,
    samples: usize,
    tiles_per_image: usize,
    data: Vec<f64>,
}

impl SampleMatrix {
    pub fn new(pixels: usize, samples: usize, tiles_per_image: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != pixels * samples {
            return Err(Error::DimensionMismatch(format!(
                "sample matrix {pixels}x{samples} needs {} values, got {}",
                pixels * samples,
                data.len()
            )));
        }
        if tiles_per_image == 0 || samples % tiles_per_image != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{samples} samples is not a whole number of {tiles_per_image}-tile images"
            )));
        }
        Ok(SampleMatrix {
            pixels,
            samples,
            tiles_per_image,
            data,
        })
    }

    pub fn pixels(&self) -> usize {
        self.pixels
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn tiles_per_image(&self) -> usize {
        self.tiles_per_image
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, p: usize) -> &[f64] {
        &self.data[p * self.samples..(p + 1) * self.samples]
    }

    #[inline]
    pub fn get(&self, p: usize, s: usize) -> f64 {
        self.data[p * self.samples + s]
    }
}

/// Gather tiles from raw row-major images of size `height x width`.
pub(crate) fn gather_tiles(images: &[&[f64]], height: usize, width: usize, tile: usize) -> Result<SampleMatrix> {
    if images.is_empty() {
        return Err(Error::Empty("coded batch"));
    }
    if tile == 0 || height % tile != 0 || width % tile != 0 {
        return Err(Error::NotDivisible { height, width, tile });
    }
    let (grid_h, grid_w) = (height / tile, width / tile);
    let n2 = grid_h * grid_w;
    let pixels = tile * tile;
    let samples = images.len() * n2;
    let mut data = vec![0.0; pixels * samples];
    for (b, img) in images.iter().enumerate() {
        for gr in 0..grid_h {
            for gc in 0..grid_w {
                let col = b * n2 + gr * grid_w + gc;
                for i in 0..tile {
                    for j in 0..tile {
                        let p = i * tile + j;
                        data[p * samples + col] = img[(gr * tile + i) * width + gc * tile + j];
                    }
                }
            }
        }
    }
    SampleMatrix::new(pixels, samples, n2, data)
}

/// Cut every coded image into `tile x tile` blocks; see [`SampleMatrix`].
pub fn collect_tiles(batch: &[CodedImage], tile: usize) -> Result<SampleMatrix> {
    let first = batch.first().ok_or(Error::Empty("coded batch"))?;
    let (h, w) = (first.height(), first.width());
    if let Some(bad) = batch.iter().find(|c| (c.height(), c.width()) != (h, w)) {
        return Err(Error::DimensionMismatch(format!(
            "coded batch mixes {h}x{w} and {}x{}",
            bad.height(),
            bad.width()
        )));
    }
    let views: Vec<&[f64]> = batch.iter().map(|c| c.values()).collect();
    gather_tiles(&views, h, w, tile)
}

/// Dataset-level tile means, one scalar per tile grid position. Each mean
/// pools every pixel of every tile seen at that grid position.
#[derive(Debug, Clone, PartialEq)]
pub struct TileMeanTable {
    sums: Vec<f64>,
    counts: Vec<u64>,
}

impl TileMeanTable {
    pub fn empty(tiles_per_image: usize) -> Self {
        TileMeanTable {
            sums: vec![0.0; tiles_per_image],
            counts: vec![0; tiles_per_image],
        }
    }

    /// A table that subtracts nothing.
    pub fn zeros(tiles_per_image: usize) -> Self {
        TileMeanTable {
            sums: vec![0.0; tiles_per_image],
            counts: vec![1; tiles_per_image],
        }
    }

    pub fn tiles_per_image(&self) -> usize {
        self.sums.len()
    }

    /// Total number of pixel values pooled into the table.
    pub fn sample_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn mean(&self, position: usize) -> f64 {
        self.sums[position] / self.counts[position] as f64
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.sums.len()).map(|k| self.mean(k)).collect()
    }

    pub fn accumulate(&mut self, sample: &SampleMatrix) -> Result<()> {
        if sample.tiles_per_image != self.tiles_per_image() {
            return Err(Error::DimensionMismatch(format!(
                "mean table has {} tile positions, sample has {}",
                self.tiles_per_image(),
                sample.tiles_per_image
            )));
        }
        let n2 = sample.tiles_per_image;
        for col in 0..sample.samples {
            let s: f64 = (0..sample.pixels).map(|p| sample.get(p, col)).sum();
            self.sums[col % n2] += s;
            self.counts[col % n2] += sample.pixels as u64;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &TileMeanTable) -> Result<()> {
        if other.tiles_per_image() != self.tiles_per_image() {
            return Err(Error::DimensionMismatch("cannot merge mean tables of different geometry".into()));
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Collapse to one global scalar shared by every grid position.
    pub fn pooled(&self) -> TileMeanTable {
        let n = self.sums.len();
        let sum: f64 = self.sums.iter().sum();
        let count: u64 = self.counts.iter().sum();
        TileMeanTable {
            sums: vec![sum / count as f64; n],
            counts: vec![1; n],
        }
    }

    pub fn is_ready(&self) -> bool {
        self.counts.iter().all(|&c| c > 0)
    }
}

pub fn fit_tile_means(sample: &SampleMatrix) -> Result<TileMeanTable> {
    if sample.samples == 0 || sample.pixels == 0 {
        return Err(Error::Empty("sample matrix"));
    }
    let mut table = TileMeanTable::empty(sample.tiles_per_image);
    table.accumulate(sample)?;
    Ok(table)
}

/// How tile means are removed before correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ContrastMode {
    /// Subtract the dataset-level mean of the tile's grid position.
    #[default]
    Dataset,
    /// Subtract each tile's own mean.
    PerSample,
}

impl std::str::FromStr for ContrastMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dataset" => Ok(ContrastMode::Dataset),
            "per-sample" => Ok(ContrastMode::PerSample),
            other => Err(Error::InvalidParameter(format!("unknown contrast mode '{other}'"))),
        }
    }
}

pub fn contrast_encode(sample: &SampleMatrix, means: &TileMeanTable) -> Result<SampleMatrix> {
    if means.tiles_per_image() != sample.tiles_per_image {
        return Err(Error::DimensionMismatch(format!(
            "means fitted for {} tile positions, sample has {}",
            means.tiles_per_image(),
            sample.tiles_per_image
        )));
    }
    if !means.is_ready() {
        return Err(Error::Empty("tile mean table"));
    }
    let mu = means.means();
    let n2 = sample.tiles_per_image;
    let mut data = sample.data.clone();
    for row in data.chunks_mut(sample.samples) {
        for (col, v) in row.iter_mut().enumerate() {
            *v -= mu[col % n2];
        }
    }
    Ok(SampleMatrix { data, ..*sample })
}

/// Subtract from every tile its own mean over the `P` positions.
pub fn contrast_encode_per_sample(sample: &SampleMatrix) -> SampleMatrix {
    let col_means = column_means(sample);
    let mut data = sample.data.clone();
    for row in data.chunks_mut(sample.samples) {
        for (v, m) in row.iter_mut().zip(&col_means) {
            *v -= m;
        }
    }
    SampleMatrix { data, ..*sample }
}

pub(crate) fn column_means(sample: &SampleMatrix) -> Vec<f64> {
    let mut sums = vec![0.0; sample.samples];
    for row in sample.data.chunks(sample.samples) {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    sums.iter().map(|s| s / sample.pixels as f64).collect()
}

/// Symmetric `P x P` Pearson matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    size: usize,
    data: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn new(size: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != size * size {
            return Err(Error::DimensionMismatch(format!(
                "correlation matrix of size {size} needs {} entries",
                size * size
            )));
        }
        Ok(CorrelationMatrix { size, data })
    }

    pub fn identity(size: usize) -> Self {
        let mut data = vec![0.0; size * size];
        for k in 0..size {
            data[k * size + k] = 1.0;
        }
        CorrelationMatrix { size, data }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    /// Mean of `|C_ij|` over `i != j`.
    pub fn mean_abs_off_diagonal(&self) -> f64 {
        let p = self.size;
        if p < 2 {
            return 0.0;
        }
        let mut sum = 0.0;
        for i in 0..p {
            for j in 0..p {
                if i != j {
                    sum += self.get(i, j).abs();
                }
            }
        }
        sum / (p * (p - 1)) as f64
    }
}

/// Centered rows and the pieces of the Pearson matrix, shared with the
/// gradient computation.
pub(crate) struct PearsonParts {
    pub samples: usize,
    pub deviations: Vec<f64>,
    pub std_devs: Vec<f64>,
    pub live: Vec<bool>,
    pub covariance: Vec<f64>,
    pub correlation: CorrelationMatrix,
}

pub(crate) fn pearson_parts(sample: &SampleMatrix) -> Result<PearsonParts> {
    let (p, s) = (sample.pixels, sample.samples);
    if s < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 samples, got {s}")));
    }
    let mut deviations = sample.data.clone();
    for row in deviations.chunks_mut(s) {
        let mean = row.iter().sum::<f64>() / s as f64;
        for v in row.iter_mut() {
            *v -= mean;
        }
    }
    // Upper triangle rows in parallel; each pair is one sequential sum.
    let upper: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|i| {
            let di = &deviations[i * s..(i + 1) * s];
            (i..p)
                .map(|j| {
                    let dj = &deviations[j * s..(j + 1) * s];
                    di.iter().zip(dj).map(|(a, b)| a * b).sum::<f64>() / s as f64
                })
                .collect()
        })
        .collect();
    let mut covariance = vec![0.0; p * p];
    for (i, row) in upper.iter().enumerate() {
        for (off, &c) in row.iter().enumerate() {
            let j = i + off;
            covariance[i * p + j] = c;
            covariance[j * p + i] = c;
        }
    }
    let std_devs: Vec<f64> = (0..p).map(|i| covariance[i * p + i].max(0.0).sqrt()).collect();
    let live: Vec<bool> = std_devs.iter().map(|&sd| sd >= PEARSON_EPS).collect();
    let correlation = correlation_from_covariance(p, &covariance, &std_devs, &live);
    Ok(PearsonParts {
        samples: s,
        deviations,
        std_devs,
        live,
        covariance,
        correlation,
    })
}

fn correlation_from_covariance(p: usize, cov: &[f64], sd: &[f64], live: &[bool]) -> CorrelationMatrix {
    let mut data = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..p {
            data[i * p + j] = if !live[i] || !live[j] {
                0.0
            } else if i == j {
                1.0
            } else {
                cov[i * p + j] / (sd[i] * sd[j] + PEARSON_EPS)
            };
        }
    }
    CorrelationMatrix { size: p, data }
}

/// `C_ij = cov_ij / (sd_i * sd_j + eps)`. Live rows have a unit diagonal;
/// dead rows (sd below [`PEARSON_EPS`]) are all zeros, diagonal included.
pub fn pearson(sample: &SampleMatrix) -> Result<CorrelationMatrix> {
    Ok(pearson_parts(sample)?.correlation)
}

/// Mean squared off-diagonal correlation, `1/(P(P-1)) * sum_{i != j} C_ij^2`.
pub fn decorrelation_loss(c: &CorrelationMatrix) -> Result<f64> {
    let p = c.size;
    if p < 2 {
        return Err(Error::InvalidParameter(format!("loss needs at least 2 pixels, got {p}")));
    }
    let mut sum = 0.0;
    for i in 0..p {
        for j in 0..p {
            if i != j {
                sum += c.get(i, j) * c.get(i, j);
            }
        }
    }
    Ok(sum / (p * (p - 1)) as f64)
}

/// Streaming Pearson accumulator. Chunks merge with the pairwise update for
/// means and co-moments, so any chunking gives the one-shot result up to
/// rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationAccumulator {
    size: usize,
    count: u64,
    mean: Vec<f64>,
    comoment: Vec<f64>,
}

impl CorrelationAccumulator {
    pub fn new(size: usize) -> Self {
        CorrelationAccumulator {
            size,
            count: 0,
            mean: vec![0.0; size],
            comoment: vec![0.0; size * size],
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Add every column of `sample` (two-pass within the chunk, then merge).
    pub fn add(&mut self, sample: &SampleMatrix) -> Result<()> {
        if sample.pixels != self.size {
            return Err(Error::DimensionMismatch(format!(
                "accumulator has {} rows, sample has {}",
                self.size, sample.pixels
            )));
        }
        if sample.samples == 0 {
            return Ok(());
        }
        let (p, s) = (sample.pixels, sample.samples);
        let mut chunk = CorrelationAccumulator::new(p);
        chunk.count = s as u64;
        let mut dev = sample.data.clone();
        for (k, row) in dev.chunks_mut(s).enumerate() {
            let m = row.iter().sum::<f64>() / s as f64;
            chunk.mean[k] = m;
            for v in row.iter_mut() {
                *v -= m;
            }
        }
        for i in 0..p {
            for j in i..p {
                let c: f64 = dev[i * s..(i + 1) * s]
                    .iter()
                    .zip(&dev[j * s..(j + 1) * s])
                    .map(|(a, b)| a * b)
                    .sum();
                chunk.comoment[i * p + j] = c;
                chunk.comoment[j * p + i] = c;
            }
        }
        self.merge(&chunk)
    }

    pub fn merge(&mut self, other: &CorrelationAccumulator) -> Result<()> {
        if other.size != self.size {
            return Err(Error::DimensionMismatch("cannot merge accumulators of different size".into()));
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        let p = self.size;
        for i in 0..p {
            for j in 0..p {
                self.comoment[i * p + j] += other.comoment[i * p + j] + delta[i] * delta[j] * na * nb / n;
            }
        }
        for (m, d) in self.mean.iter_mut().zip(&delta) {
            *m += d * nb / n;
        }
        self.count += other.count;
        Ok(())
    }

    pub fn finish(&self) -> Result<CorrelationMatrix> {
        if self.count < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 samples, got {}", self.count)));
        }
        let p = self.size;
        let n = self.count as f64;
        let cov: Vec<f64> = self.comoment.iter().map(|c| c / n).collect();
        let sd: Vec<f64> = (0..p).map(|i| cov[i * p + i].max(0.0).sqrt()).collect();
        let live: Vec<bool> = sd.iter().map(|&v| v >= PEARSON_EPS).collect();
        Ok(correlation_from_covariance(p, &cov, &sd, &live))
    }
}
