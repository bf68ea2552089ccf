//! Independent reference implementations and reusable property checks shared
//! by the acceptance harness and the proptest suites.
#![allow(dead_code)]

use coded_exposure::encoder::{decode_coded_bytes, encode, encode_coded_bytes, CodedImage};
use coded_exposure::ingest::{Frame, VideoClip};
use coded_exposure::patterns::{expand, format_pattern, parse_pattern, FullMask, TilePattern};
use coded_exposure::stats::{decorrelation_loss, pearson, ContrastMode, SampleMatrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub fn random_clip(rng: &mut ChaCha8Rng, slots: usize, h: usize, w: usize) -> VideoClip {
    let frames = (0..slots)
        .map(|_| Frame::new(h, w, (0..h * w).map(|_| rng.gen_range(0.0..=1.0)).collect()).unwrap())
        .collect();
    VideoClip::new(frames).unwrap()
}

pub fn random_mask(rng: &mut ChaCha8Rng, slots: usize, h: usize, w: usize) -> FullMask {
    let p: f64 = rng.gen_range(0.0..=1.0);
    let bits = (0..slots * h * w).map(|_| rng.gen_bool(p) as u8).collect();
    FullMask::new(slots, h, w, bits).unwrap()
}

pub fn random_tile_pattern(rng: &mut ChaCha8Rng, slots: usize, tile: usize) -> TilePattern {
    let p: f64 = rng.gen_range(0.0..=1.0);
    let bits = (0..slots * tile * tile).map(|_| rng.gen_bool(p) as u8).collect();
    TilePattern::new(slots, tile, bits).unwrap()
}

/// `X(i,j) = sum_t M(t,i,j) * Y(i,j,t)` with plain nested loops, plus the
/// exposure counts.
pub fn brute_force_encode(clip: &VideoClip, mask: &FullMask) -> (Vec<f64>, Vec<u32>) {
    let (t_len, h, w) = (clip.slots(), clip.height(), clip.width());
    let mut x = vec![vec![0.0f64; w]; h];
    let mut n = vec![vec![0u32; w]; h];
    for t in 0..t_len {
        for i in 0..h {
            for j in 0..w {
                let m = mask.bit(t, i, j);
                x[i][j] += m as f64 * clip.value(t, i, j);
                n[i][j] += m as u32;
            }
        }
    }
    (x.concat(), n.concat())
}

/// Bitwise comparison of an encoder result against the brute-force oracle.
pub fn check_encode_matches_oracle(clip: &VideoClip, mask: &FullMask) -> Check {
    let coded = encode(clip, mask).map_err(|e| e.to_string())?;
    let (values, counts) = brute_force_encode(clip, mask);
    ensure!(coded.counts() == counts.as_slice(), "exposure counts differ");
    for (k, (a, b)) in coded.values().iter().zip(&values).enumerate() {
        ensure!(a.to_bits() == b.to_bits(), "pixel {k}: encoder {a:e} vs oracle {b:e}");
    }
    Ok(())
}

/// Loss of the continuous relaxation: tile mask `mask[t * M^2 + p]` applied to
/// every tile of every clip, optional division by the (real) exposure count,
/// contrast encoding and the mean squared off-diagonal Pearson coefficient.
/// `means[g]` is the fixed dataset mean of tile grid position `g`.
pub fn surrogate_loss(
    mask: &[f64],
    slots: usize,
    tile: usize,
    batch: &[VideoClip],
    means: &[f64],
    contrast: ContrastMode,
    normalize: bool,
) -> f64 {
    let (h, w) = (batch[0].height(), batch[0].width());
    let (gh, gw) = (h / tile, w / tile);
    let p_len = tile * tile;
    // samples[p] lists the coded value of within-tile pixel p for every tile.
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); p_len];
    for clip in batch {
        for gr in 0..gh {
            for gc in 0..gw {
                let mut tile_vals = vec![0.0; p_len];
                for a in 0..tile {
                    for b in 0..tile {
                        let p = a * tile + b;
                        let (i, j) = (gr * tile + a, gc * tile + b);
                        let mut x = 0.0;
                        let mut n = 0.0;
                        for t in 0..slots {
                            x += mask[t * p_len + p] * clip.value(t, i, j);
                            n += mask[t * p_len + p];
                        }
                        if normalize {
                            x = if n > 0.0 { x / n } else { 0.0 };
                        }
                        tile_vals[p] = x;
                    }
                }
                let offset = match contrast {
                    ContrastMode::Dataset => None,
                    ContrastMode::PerSample => Some(tile_vals.iter().sum::<f64>() / p_len as f64),
                };
                for p in 0..p_len {
                    let m = offset.unwrap_or(means[gr * gw + gc]);
                    samples[p].push(tile_vals[p] - m);
                }
            }
        }
    }
    let s = samples[0].len() as f64;
    let centered: Vec<Vec<f64>> = samples
        .iter()
        .map(|row| {
            let mean = row.iter().sum::<f64>() / s;
            row.iter().map(|v| v - mean).collect()
        })
        .collect();
    let cov = |a: usize, b: usize| centered[a].iter().zip(&centered[b]).map(|(x, y)| x * y).sum::<f64>() / s;
    let sd: Vec<f64> = (0..p_len).map(|a| cov(a, a).sqrt()).collect();
    let mut total = 0.0;
    for a in 0..p_len {
        for b in 0..p_len {
            if a != b && sd[a] >= 1e-8 && sd[b] >= 1e-8 {
                let c = cov(a, b) / (sd[a] * sd[b] + 1e-8);
                total += c * c;
            }
        }
    }
    total / (p_len * (p_len - 1)) as f64
}

/// Central finite differences of the straight-through surrogate: the forward
/// mask is `hard(theta0) + sigmoid(theta) - sigmoid(theta0)`, equal to the hard
/// mask at `theta0` and with slope `sigmoid'` around it.
pub fn finite_difference_grad(
    theta: &[f64],
    slots: usize,
    tile: usize,
    batch: &[VideoClip],
    means: &[f64],
    contrast: ContrastMode,
    normalize: bool,
    step: f64,
) -> Vec<f64> {
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let base: Vec<f64> = theta.iter().map(|&v| if v >= 0.0 { 1.0 } else { 0.0 }).collect();
    let loss_at = |k: usize, delta: f64| {
        let mut mask = base.clone();
        mask[k] += sig(theta[k] + delta) - sig(theta[k]);
        surrogate_loss(&mask, slots, tile, batch, means, contrast, normalize)
    };
    (0..theta.len())
        .map(|k| (loss_at(k, step) - loss_at(k, -step)) / (2.0 * step))
        .collect()
}

pub fn relative_error(analytic: &[f64], reference: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = reference.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

/// `encode(a*Y1 + b*Y2) == a*encode(Y1) + b*encode(Y2)` within `tol`.
pub fn check_encode_linearity(y1: &VideoClip, y2: &VideoClip, mask: &FullMask, a: f64, b: f64, tol: f64) -> Check {
    let frames = y1
        .frames()
        .iter()
        .zip(y2.frames())
        .map(|(f1, f2)| {
            let data = f1.data().iter().zip(f2.data()).map(|(u, v)| a * u + b * v).collect();
            Frame::new(f1.height(), f1.width(), data).unwrap()
        })
        .collect();
    let mixed = VideoClip::new(frames).map_err(|e| e.to_string())?;
    let x = encode(&mixed, mask).map_err(|e| e.to_string())?;
    let x1 = encode(y1, mask).map_err(|e| e.to_string())?;
    let x2 = encode(y2, mask).map_err(|e| e.to_string())?;
    for k in 0..x.values().len() {
        let expect = a * x1.values()[k] + b * x2.values()[k];
        ensure!((x.values()[k] - expect).abs() <= tol, "pixel {k}: {} vs {expect}", x.values()[k]);
    }
    Ok(())
}

/// Setting extra mask bits never lowers a coded value (inputs are non-negative).
pub fn check_mask_monotonic(clip: &VideoClip, low: &FullMask, high: &FullMask) -> Check {
    let a = encode(clip, low).map_err(|e| e.to_string())?;
    let b = encode(clip, high).map_err(|e| e.to_string())?;
    for (k, (x, y)) in a.values().iter().zip(b.values()).enumerate() {
        ensure!(x <= y, "pixel {k}: {x} > {y} after adding exposures");
    }
    Ok(())
}

/// Symmetry, unit-or-zero diagonal, bounds, and `L_Cor` in `[0, 1]`.
pub fn check_pearson_invariants(sample: &SampleMatrix) -> Check {
    let c = pearson(sample).map_err(|e| e.to_string())?;
    let p = c.size();
    for i in 0..p {
        let d = c.get(i, i);
        ensure!(d == 1.0 || d == 0.0, "diagonal {i} is {d}");
        for j in 0..p {
            let v = c.get(i, j);
            ensure!(v == c.get(j, i), "C[{i},{j}] != C[{j},{i}]");
            ensure!(v.abs() <= 1.0, "C[{i},{j}] = {v} out of bounds");
        }
    }
    if p >= 2 {
        let l = decorrelation_loss(&c).map_err(|e| e.to_string())?;
        ensure!((0.0..=1.0).contains(&l), "L_Cor {l} outside [0, 1]");
    }
    Ok(())
}

/// Correlations are unchanged by a positive affine map of any row.
pub fn check_pearson_affine_invariance(sample: &SampleMatrix, row: usize, scale: f64, shift: f64, tol: f64) -> Check {
    let mut data = sample.data().to_vec();
    let s = sample.samples();
    for v in &mut data[row * s..(row + 1) * s] {
        *v = scale * *v + shift;
    }
    let moved = SampleMatrix::new(sample.pixels(), s, sample.tiles_per_image(), data).map_err(|e| e.to_string())?;
    let a = pearson(sample).map_err(|e| e.to_string())?;
    let b = pearson(&moved).map_err(|e| e.to_string())?;
    // The eps regularizer breaks exact invariance for tiny deviations.
    let sd = |m: &SampleMatrix, r: usize| {
        let row = m.row(r);
        let mean = row.iter().sum::<f64>() / s as f64;
        (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / s as f64).sqrt()
    };
    let (sd_a, sd_b) = (sd(sample, row), sd(&moved, row));
    if sd_a < 1e-3 || sd_b < 1e-3 {
        return Ok(());
    }
    for j in 0..sample.pixels() {
        let sd_j = sd(sample, j);
        if j == row || sd_j < 1e-3 {
            continue;
        }
        let slack = 1e-8 / (sd_a * sd_j) + 1e-8 / (sd_b * sd_j);
        let (x, y) = (a.get(row, j), b.get(row, j));
        ensure!((x - y).abs() <= tol + slack, "C[{row},{j}] moved from {x} to {y}");
    }
    Ok(())
}

pub fn check_sparse_single_exposure(pattern: &TilePattern) -> Check {
    let counts = pattern.exposure_count();
    let m = pattern.tile();
    for i in 0..m {
        for j in 0..m {
            ensure!(counts.get(i, j) == 1, "tile pixel ({i},{j}) exposed {} times", counts.get(i, j));
        }
    }
    Ok(())
}

pub fn check_tile_repetition(pattern: &TilePattern, h: usize, w: usize) -> Check {
    let mask = expand(pattern, h, w).map_err(|e| e.to_string())?;
    let m = pattern.tile();
    for t in 0..pattern.slots() {
        for i in 0..h {
            for j in 0..w {
                ensure!(
                    mask.bit(t, i, j) == pattern.bit(t, i % m, j % m),
                    "mask ({t},{i},{j}) differs from its tile"
                );
            }
        }
    }
    Ok(())
}

pub fn check_pattern_round_trip(pattern: &TilePattern) -> Check {
    let text = format_pattern(pattern);
    let back = parse_pattern(&text).map_err(|e| e.to_string())?;
    ensure!(&back == pattern, "pattern changed through text form");
    ensure!(format_pattern(&back) == text, "pattern text not canonical");
    Ok(())
}

pub fn check_coded_round_trip(coded: &CodedImage) -> Check {
    let bytes = encode_coded_bytes(coded).map_err(|e| e.to_string())?;
    let back = decode_coded_bytes(&bytes).map_err(|e| e.to_string())?;
    ensure!(&back == coded, "coded image changed through its byte form");
    ensure!(encode_coded_bytes(&back).map_err(|e| e.to_string())? == bytes, "bytes not canonical");
    Ok(())
}

/// A coded image whose values are exactly representable in `f32`.
pub fn f32_coded_image(rng: &mut ChaCha8Rng, h: usize, w: usize, normalized: bool) -> CodedImage {
    let counts: Vec<u32> = (0..h * w).map(|_| rng.gen_range(0..=16)).collect();
    let values = counts
        .iter()
        .map(|&n| if n == 0 { 0.0 } else { rng.gen_range(0.0f32..16.0) as f64 })
        .collect();
    CodedImage::new(h, w, values, counts, normalized).unwrap()
}
