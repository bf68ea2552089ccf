//! Seeded synthetic video corpus: translating sinusoidal gradients with
//! moving Gaussian blobs on top.

use std::f64::consts::TAU;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::ingest::{Frame, VideoClip};
use crate::rng::{derive_seed, seeded_rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusConfig {
    pub clips: usize,
    pub slots: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Blobs per clip are drawn uniformly from `0..=max_blobs`.
    pub max_blobs: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            clips: 500,
            slots: 16,
            height: 32,
            width: 32,
            seed: 0,
            max_blobs: 3,
        }
    }
}

struct Grating {
    mean: f64,
    amplitude: f64,
    /// Spatial frequency in cycles per pixel along the direction of travel.
    frequency: f64,
    direction: (f64, f64),
    speed: f64,
    phase: f64,
}

struct Blob {
    center: (f64, f64),
    velocity: (f64, f64),
    radius: f64,
    amplitude: f64,
}

/// Generate clip `index` of the corpus. Each clip draws from its own derived
/// stream, so clip `k` is the same whatever the corpus size.
pub fn synthetic_clip(cfg: &CorpusConfig, index: usize) -> Result<VideoClip> {
    if cfg.slots == 0 || cfg.height == 0 || cfg.width == 0 {
        return Err(Error::InvalidParameter("synthetic clip dimensions must be positive".into()));
    }
    let mut rng = seeded_rng(derive_seed(cfg.seed, &format!("synthetic-clip/{index}")));
    let angle = rng.gen_range(0.0..TAU);
    let grating = Grating {
        mean: rng.gen_range(0.3..0.7),
        amplitude: rng.gen_range(0.1..0.3),
        frequency: rng.gen_range(0.005..0.04),
        direction: (angle.cos(), angle.sin()),
        speed: rng.gen_range(0.5..2.5),
        phase: rng.gen_range(0.0..TAU),
    };
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let blobs: Vec<Blob> = (0..rng.gen_range(0..=cfg.max_blobs))
        .map(|_| {
            let heading = rng.gen_range(0.0..TAU);
            let speed = rng.gen_range(0.5..3.0);
            Blob {
                center: (rng.gen_range(0.0..h), rng.gen_range(0.0..w)),
                velocity: (speed * heading.sin(), speed * heading.cos()),
                radius: rng.gen_range(1.5..5.0),
                amplitude: rng.gen_range(-0.35..0.35),
            }
        })
        .collect();

    let frames = (0..cfg.slots)
        .map(|t| {
            let t = t as f64;
            Frame::from_fn(cfg.height, cfg.width, |i, j| {
                let (y, x) = (i as f64, j as f64);
                let along = x * grating.direction.0 + y * grating.direction.1 - grating.speed * t;
                let mut v = grating.mean
                    + grating.amplitude * (TAU * grating.frequency * along + grating.phase).sin();
                for b in &blobs {
                    let cy = b.center.0 + b.velocity.0 * t;
                    let cx = b.center.1 + b.velocity.1 * t;
                    let d2 = (y - cy).powi(2) + (x - cx).powi(2);
                    v += b.amplitude * (-d2 / (2.0 * b.radius * b.radius)).exp();
                }
                v.clamp(0.0, 1.0)
            })
        })
        .collect::<Result<Vec<_>>>()?;
    VideoClip::new(frames)
}

pub fn synthetic_corpus(cfg: &CorpusConfig) -> Result<Vec<VideoClip>> {
    (0..cfg.clips).map(|k| synthetic_clip(cfg, k)).collect()
}
