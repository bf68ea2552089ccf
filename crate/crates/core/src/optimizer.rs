//! Learning decorrelated tile patterns.
//!
//! The pattern is parameterized by real logits `theta`, one per `(t, i, j)`.
//! The forward pass uses the hard threshold `bit = [theta >= 0]`; the backward
//! pass treats the bit as `sigmoid(theta)` (straight-through estimation). The
//! loss is the decorrelation loss of the batch's coded tiles, differentiated
//! analytically through Pearson, contrast encoding, exposure normalization and
//! the masked integration.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::encoder::{encode, normalize};
use crate::error::{Error, Result};
use crate::ingest::VideoClip;
use crate::patterns::{expand, TilePattern};
use crate::rng::{derive_seed, seeded_rng};
use crate::stats::{
    column_means, contrast_encode, contrast_encode_per_sample, decorrelation_loss, fit_tile_means, gather_tiles,
    pearson_parts, CorrelationAccumulator, CorrelationMatrix, ContrastMode, SampleMatrix, TileMeanTable,
    PEARSON_EPS,
};

#[derive(Debug, Clone, PartialEq)]
pub struct MaskLogits {
    slots: usize,
    tile: usize,
    theta: Vec<f64>,
}

impl MaskLogits {
    pub fn new(slots: usize, tile: usize, theta: Vec<f64>) -> Result<Self> {
        if slots == 0 || tile == 0 {
            return Err(Error::InvalidParameter("T and M must be at least 1".into()));
        }
        if theta.len() != slots * tile * tile {
            return Err(Error::DimensionMismatch(format!(
                "logits {slots}x{tile}x{tile} need {} values, got {}",
                slots * tile * tile,
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("logits must be finite".into()));
        }
        Ok(MaskLogits { slots, tile, theta })
    }

    /// Gaussian logits `N(offset, std^2)`.
    pub fn init(slots: usize, tile: usize, std: f64, offset: f64, seed: u64) -> Result<Self> {
        let normal = Normal::new(offset, std).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let mut rng = seeded_rng(seed);
        let theta = (0..slots * tile * tile).map(|_| normal.sample(&mut rng)).collect();
        MaskLogits::new(slots, tile, theta)
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn tile(&self) -> usize {
        self.tile
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Hard forward pass: `bit = 1` iff `sigmoid(theta) >= 0.5`, i.e. `theta >= 0`.
pub fn binarize_ste_forward(logits: &MaskLogits) -> TilePattern {
    let bits = logits.theta.iter().map(|&v| (v >= 0.0) as u8).collect();
    TilePattern::new(logits.slots, logits.tile, bits).expect("logit shape already validated")
}

/// How coded images are turned into correlation samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossConfig {
    pub contrast: ContrastMode,
    /// Divide coded values by their exposure count first.
    pub normalize: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            contrast: ContrastMode::Dataset,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Decorrelation loss of `batch` under the binarized logits, and its
/// straight-through gradient with respect to the logits. `means` is used only
/// in [`ContrastMode::Dataset`].
pub fn loss_and_grad(
    logits: &MaskLogits,
    batch: &[VideoClip],
    means: &TileMeanTable,
    cfg: &LossConfig,
) -> Result<LossAndGrad> {
    let hard: Vec<f64> = logits.theta.iter().map(|&v| if v >= 0.0 { 1.0 } else { 0.0 }).collect();
    let (loss, mask_grad) = mask_loss_and_grad(&hard, logits.slots, logits.tile, batch, means, cfg)?;
    let grad = mask_grad
        .iter()
        .zip(&logits.theta)
        .map(|(g, &th)| {
            let s = sigmoid(th);
            g * s * (1.0 - s)
        })
        .collect();
    Ok(LossAndGrad { loss, grad })
}

fn check_batch(batch: &[VideoClip], slots: usize, tile: usize) -> Result<(usize, usize)> {
    let first = batch.first().ok_or(Error::Empty("batch"))?;
    let (h, w) = (first.height(), first.width());
    for clip in batch {
        if (clip.slots(), clip.height(), clip.width()) != (slots, h, w) {
            return Err(Error::DimensionMismatch(format!(
                "batch clip is {}x{}x{}, expected {slots}x{h}x{w}",
                clip.slots(),
                clip.height(),
                clip.width()
            )));
        }
    }
    if h % tile != 0 || w % tile != 0 {
        return Err(Error::NotDivisible {
            height: h,
            width: w,
            tile,
        });
    }
    Ok((h, w))
}

/// Loss and `dL/dmask` for a real-valued tile mask (`T x M x M`).
fn mask_loss_and_grad(
    mask: &[f64],
    slots: usize,
    tile: usize,
    batch: &[VideoClip],
    means: &TileMeanTable,
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    let (h, w) = check_batch(batch, slots, tile)?;
    let p_len = tile * tile;
    let counts: Vec<f64> = (0..p_len).map(|p| (0..slots).map(|t| mask[t * p_len + p]).sum()).collect();
    let tile_pos = |r: usize, c: usize| (r % tile) * tile + c % tile;

    // Forward: coded values per clip.
    let coded: Vec<Vec<f64>> = batch
        .par_iter()
        .map(|clip| {
            let mut values = vec![0.0; h * w];
            for (k, v) in values.iter_mut().enumerate() {
                let p = tile_pos(k / w, k % w);
                let mut acc = 0.0;
                for t in 0..slots {
                    acc += mask[t * p_len + p] * clip.frames()[t].data()[k];
                }
                *v = if !cfg.normalize {
                    acc
                } else if counts[p] > 0.0 {
                    acc / counts[p]
                } else {
                    0.0
                };
            }
            values
        })
        .collect();
    let views: Vec<&[f64]> = coded.iter().map(|v| v.as_slice()).collect();
    let raw = gather_tiles(&views, h, w, tile)?;
    let samples = match cfg.contrast {
        ContrastMode::Dataset => contrast_encode(&raw, means)?,
        ContrastMode::PerSample => contrast_encode_per_sample(&raw),
    };
    let parts = pearson_parts(&samples)?;
    if !parts.live.iter().any(|&l| l) {
        return Err(Error::DegenerateStatistics("every coded pixel has zero variance".into()));
    }
    let loss = decorrelation_loss(&parts.correlation)?;

    // Backward through the loss and Pearson to the contrast-encoded samples.
    let s_len = parts.samples;
    let pairs = (p_len * (p_len - 1)) as f64;
    let c = &parts.correlation;
    let sd = &parts.std_devs;
    let mut grad_x = vec![0.0; p_len * s_len];
    for k in 0..p_len {
        if !parts.live[k] {
            continue;
        }
        let mut a_row = vec![0.0; p_len];
        let mut w_k = 0.0;
        for j in 0..p_len {
            if j == k || !parts.live[j] {
                continue;
            }
            let g = 2.0 * c.get(k, j) / pairs;
            let denom = sd[k] * sd[j] + PEARSON_EPS;
            a_row[j] = g / denom;
            w_k += g * parts.covariance[k * p_len + j] * sd[j] / (denom * denom);
        }
        let out = &mut grad_x[k * s_len..(k + 1) * s_len];
        let d_k = &parts.deviations[k * s_len..(k + 1) * s_len];
        for (j, &a) in a_row.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let d_j = &parts.deviations[j * s_len..(j + 1) * s_len];
            for (o, &d) in out.iter_mut().zip(d_j) {
                *o += a * d;
            }
        }
        let scale = 2.0 / s_len as f64;
        let self_term = w_k / sd[k];
        for (o, &d) in out.iter_mut().zip(d_k) {
            *o = scale * (*o - self_term * d);
        }
    }

    // Contrast encoding.
    let grad_v = match cfg.contrast {
        ContrastMode::Dataset => grad_x,
        ContrastMode::PerSample => {
            let gx = SampleMatrix::new(p_len, s_len, raw.tiles_per_image(), grad_x)?;
            let col = column_means(&gx);
            let mut g = gx.data().to_vec();
            for row in g.chunks_mut(s_len) {
                for (v, m) in row.iter_mut().zip(&col) {
                    *v -= m;
                }
            }
            g
        }
    };

    // Normalization and integration, per clip, then a fixed-order sum.
    let n2 = raw.tiles_per_image();
    let grid_w = w / tile;
    let per_clip: Vec<Vec<f64>> = batch
        .par_iter()
        .enumerate()
        .map(|(b, clip)| {
            let mut g = vec![0.0; slots * p_len];
            for k in 0..h * w {
                let (r, cidx) = (k / w, k % w);
                let p = tile_pos(r, cidx);
                let col = b * n2 + (r / tile) * grid_w + cidx / tile;
                let gv = grad_v[p * s_len + col];
                if gv == 0.0 {
                    continue;
                }
                let v = coded[b][k];
                for t in 0..slots {
                    let y = clip.frames()[t].data()[k];
                    let dv = if !cfg.normalize {
                        y
                    } else if counts[p] > 0.0 {
                        (y - v) / counts[p]
                    } else {
                        0.0
                    };
                    g[t * p_len + p] += gv * dv;
                }
            }
            g
        })
        .collect();
    let mut grad = vec![0.0; slots * p_len];
    for g in &per_clip {
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub tile: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub init_std: f64,
    pub init_offset: f64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tile: 8,
            epochs: 5,
            batch_size: 8,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            init_std: 0.01,
            init_offset: 0.1,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.tile == 0 {
            return Err(Error::InvalidParameter("epochs, batch size and tile must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("learning rate {} invalid", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidParameter("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.init_std >= 0.0) {
            return Err(Error::InvalidParameter("init_std must be non-negative".into()));
        }
        Ok(())
    }
}

/// Full-dataset evaluation after an epoch (epoch 0 is the initial pattern).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_cor: f64,
    pub best_so_far: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Batch loss of every optimizer step taken.
    pub step_losses: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    /// Dataset loss of the returned pattern.
    pub final_l_cor: f64,
    pub pattern: TilePattern,
    pub logits: MaskLogits,
    /// `exposure_histogram[k]` = tile positions exposed in exactly `k` slots.
    pub exposure_histogram: Vec<usize>,
    pub skipped_batches: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, theta: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for k in 0..theta.len() {
            self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * grad[k];
            self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            theta[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
}

/// Train a tile pattern on `dataset` (in the given order, reshuffled per
/// epoch from the seed). Returns the pattern with the lowest dataset loss.
pub fn train_pattern(dataset: &[VideoClip], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let first = dataset.first().ok_or(Error::Empty("training dataset"))?;
    let slots = first.slots();
    check_batch(dataset, slots, cfg.tile)?;

    let mut logits = MaskLogits::init(
        slots,
        cfg.tile,
        cfg.init_std,
        cfg.init_offset,
        derive_seed(cfg.seed, "train/init"),
    )?;
    let mut adam = Adam::new(logits.theta.len());
    let mut shuffle_rng = seeded_rng(derive_seed(cfg.seed, "train/shuffle"));
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    let initial = evaluate_pattern(&binarize_ste_forward(&logits), dataset, &cfg.loss)?;
    let mut best = (initial.l_cor, logits.clone());
    let mut epochs = vec![EpochRecord {
        epoch: 0,
        l_cor: initial.l_cor,
        best_so_far: initial.l_cor,
    }];
    let mut means = initial.means;
    let mut step_losses = Vec::new();
    let mut skipped = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<VideoClip> = chunk.iter().map(|&k| dataset[k].clone()).collect();
            match loss_and_grad(&logits, &batch, &means, &cfg.loss) {
                Ok(lg) => {
                    step_losses.push(lg.loss);
                    adam.update(&mut logits.theta, &lg.grad, cfg);
                }
                Err(Error::DegenerateStatistics(_)) | Err(Error::InvalidParameter(_)) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        let pattern = binarize_ste_forward(&logits);
        let l_cor = match evaluate_pattern(&pattern, dataset, &cfg.loss) {
            Ok(eval) => {
                means = eval.means;
                eval.l_cor
            }
            Err(Error::DegenerateStatistics(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if l_cor < best.0 {
            best = (l_cor, logits.clone());
        }
        epochs.push(EpochRecord {
            epoch,
            l_cor,
            best_so_far: best.0,
        });
    }

    let pattern = binarize_ste_forward(&best.1);
    if pattern.ones() == 0 {
        return Err(Error::DegenerateStatistics("training collapsed to an all-zero pattern".into()));
    }
    let exposure_histogram = pattern.exposure_count().histogram(slots);
    Ok(TrainReport {
        step_losses,
        epochs,
        final_l_cor: best.0,
        pattern,
        logits: best.1,
        exposure_histogram,
        skipped_batches: skipped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternEvaluation {
    pub l_cor: f64,
    pub mean_abs_correlation: f64,
    pub exposure_histogram: Vec<usize>,
    pub correlation: CorrelationMatrix,
    /// Tile means fitted on the dataset under this pattern.
    pub means: TileMeanTable,
}

/// Statistics of `pattern` over the whole dataset: coded images are built with
/// the encoder, tile means fitted in one pass, correlations accumulated in a
/// second.
pub fn evaluate_pattern(pattern: &TilePattern, dataset: &[VideoClip], cfg: &LossConfig) -> Result<PatternEvaluation> {
    let first = dataset.first().ok_or(Error::Empty("evaluation dataset"))?;
    let (h, w) = (first.height(), first.width());
    let mask = expand(pattern, h, w)?;
    let tile = pattern.tile();
    let samples: Vec<SampleMatrix> = dataset
        .par_iter()
        .map(|clip| {
            let coded = encode(clip, &mask)?;
            let coded = if cfg.normalize { normalize(&coded)? } else { coded };
            gather_tiles(&[coded.values()], h, w, tile)
        })
        .collect::<Result<_>>()?;

    let mut means = TileMeanTable::empty(samples[0].tiles_per_image());
    for s in &samples {
        means.accumulate(s)?;
    }
    let mut acc = CorrelationAccumulator::new(pattern.pixels());
    for s in &samples {
        match cfg.contrast {
            ContrastMode::Dataset => acc.add(&contrast_encode(s, &means)?)?,
            ContrastMode::PerSample => acc.add(&contrast_encode_per_sample(s))?,
        }
    }
    let correlation = acc.finish()?;
    if (0..correlation.size()).all(|k| correlation.get(k, k) == 0.0) {
        return Err(Error::DegenerateStatistics("every coded pixel has zero variance".into()));
    }
    Ok(PatternEvaluation {
        l_cor: decorrelation_loss(&correlation)?,
        mean_abs_correlation: correlation.mean_abs_off_diagonal(),
        exposure_histogram: pattern.exposure_count().histogram(pattern.slots()),
        correlation,
        means,
    })
}

/// Fit dataset tile means for `pattern`; the table used by [`loss_and_grad`].
pub fn fit_pattern_means(pattern: &TilePattern, dataset: &[VideoClip], cfg: &LossConfig) -> Result<TileMeanTable> {
    let first = dataset.first().ok_or(Error::Empty("dataset"))?;
    let mask = expand(pattern, first.height(), first.width())?;
    let mut table: Option<TileMeanTable> = None;
    for clip in dataset {
        let coded = encode(clip, &mask)?;
        let coded = if cfg.normalize { normalize(&coded)? } else { coded };
        let sample = gather_tiles(&[coded.values()], coded.height(), coded.width(), pattern.tile())?;
        match table.as_mut() {
            Some(t) => t.accumulate(&sample)?,
            None => table = Some(fit_tile_means(&sample)?),
        }
    }
    table.ok_or(Error::Empty("dataset"))
}
