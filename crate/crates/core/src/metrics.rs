//! Video metrics: cosine-based VideoTI / TCON / Tmean over a fixed random
//! projection feature extractor, plus pixel-difference proxies for dynamic
//! degree and motion smoothness.
//!
//! The same projection `R` (16×32, splitmix64 seed `0xFEA7`) is used on both
//! sides of every cosine, so the metrics share one embedding space.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::toyworld::{prompt_vector, rng_stream, ToyError};
use crate::video::{Frame, Video, DEFAULT_HEIGHT, DEFAULT_WIDTH, EMBED_DIM, PROMPT_DIM};

pub const FEATURE_DIM: usize = 16;
pub const POOLED_DIM: usize = 32;
pub const PROJECTION_SEED: u64 = 0xFEA7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("cosine of a zero vector is undefined")]
    ZeroVector,
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("features need 8x8 frames, got {0}x{1}")]
    DimensionMismatch(usize, usize),
    #[error(transparent)]
    Toy(#[from] ToyError),
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, MetricsError> {
    if u.len() != v.len() {
        return Err(MetricsError::LengthMismatch(u.len(), v.len()));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(MetricsError::ZeroVector);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Row-major 16×32 projection shared by every feature.
pub fn projection() -> &'static [f64] {
    static R: OnceLock<Vec<f64>> = OnceLock::new();
    R.get_or_init(|| rng_stream(PROJECTION_SEED, FEATURE_DIM * POOLED_DIM))
}

fn project(x: &[f64; POOLED_DIM]) -> [f64; FEATURE_DIM] {
    let r = projection();
    let mut out = [0.0; FEATURE_DIM];
    for (i, o) in out.iter_mut().enumerate() {
        *o = r[i * POOLED_DIM..(i + 1) * POOLED_DIM]
            .iter()
            .zip(x)
            .map(|(a, b)| a * b)
            .sum();
    }
    out
}

/// 2×2 average pooling of an 8×8 pixel grid into 16 cells, row-major.
fn pool(pixels: &[f64]) -> [f64; 16] {
    let mut out = [0.0; 16];
    for cy in 0..4 {
        for cx in 0..4 {
            let mut s = 0.0;
            for dy in 0..2 {
                for dx in 0..2 {
                    s += pixels[(2 * cy + dy) * DEFAULT_WIDTH + 2 * cx + dx];
                }
            }
            out[cy * 4 + cx] = s / 4.0;
        }
    }
    out
}

fn check_dims(h: usize, w: usize) -> Result<(), MetricsError> {
    if (h, w) != (DEFAULT_HEIGHT, DEFAULT_WIDTH) {
        return Err(MetricsError::DimensionMismatch(h, w));
    }
    Ok(())
}

/// The 32 values fed to the projection: pooled mean frame, then pooled mean
/// absolute temporal difference (all zeros for a single-frame video).
pub fn pooled_input(v: &Video) -> Result<[f64; POOLED_DIM], MetricsError> {
    check_dims(v.height(), v.width())?;
    let n = DEFAULT_HEIGHT * DEFAULT_WIDTH;
    let mut mean = vec![0.0; n];
    for f in v.frames() {
        for (m, p) in mean.iter_mut().zip(f.pixels()) {
            *m += p;
        }
    }
    mean.iter_mut().for_each(|m| *m /= v.len() as f64);
    let mut diff = vec![0.0; n];
    if v.len() > 1 {
        for w in v.frames().windows(2) {
            for ((d, a), b) in diff.iter_mut().zip(w[1].pixels()).zip(w[0].pixels()) {
                *d += (a - b).abs();
            }
        }
        diff.iter_mut().for_each(|d| *d /= (v.len() - 1) as f64);
    }
    let mut out = [0.0; POOLED_DIM];
    out[..16].copy_from_slice(&pool(&mean));
    out[16..].copy_from_slice(&pool(&diff));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VideoFeature(pub [f64; FEATURE_DIM]);

pub fn video_feature(v: &Video) -> Result<VideoFeature, MetricsError> {
    Ok(VideoFeature(project(&pooled_input(v)?)))
}

/// Input/output consistency.
pub fn tcon(v_in: &Video, v_out: &Video) -> Result<f64, MetricsError> {
    cosine(&video_feature(v_in)?.0, &video_feature(v_out)?.0)
}

/// Transition coherence: mean of the TCONs of `mid` against both neighbours.
pub fn tmean(prev: &Video, mid: &Video, next: &Video) -> Result<f64, MetricsError> {
    Ok((tcon(mid, prev)? + tcon(mid, next)?) / 2.0)
}

/// Projected `[prompt vector padded to 16 ; pooled input frame]`.
pub fn mixed_text_embedding(
    prompt_text: &str,
    input_frame: Option<&Frame>,
) -> Result<[f64; FEATURE_DIM], MetricsError> {
    let mut mix = [0.0; POOLED_DIM];
    mix[..PROMPT_DIM].copy_from_slice(prompt_vector(prompt_text)?.values());
    if let Some(f) = input_frame {
        check_dims(f.height(), f.width())?;
        mix[EMBED_DIM..].copy_from_slice(&pool(f.pixels()));
    }
    Ok(project(&mix))
}

/// Instruction adherence of `generated` to the prompt (and optional input image).
pub fn video_ti(
    prompt_text: &str,
    input_frame: Option<&Frame>,
    generated: &Video,
) -> Result<f64, MetricsError> {
    cosine(
        &mixed_text_embedding(prompt_text, input_frame)?,
        &video_feature(generated)?.0,
    )
}

fn mean_abs(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v.abs(), n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Mean absolute frame-to-frame change; in `[0, 2]`.
pub fn dynamic_degree(v: &Video) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let per_step: Vec<f64> = v
        .frames()
        .windows(2)
        .map(|w| mean_abs(w[1].pixels().iter().zip(w[0].pixels()).map(|(a, b)| a - b)))
        .collect();
    per_step.iter().sum::<f64>() / per_step.len() as f64
}

/// `1 − mean |second difference| / 4`; in `[0, 1]`.
pub fn motion_smoothness(v: &Video) -> f64 {
    if v.len() <= 2 {
        return 1.0;
    }
    let per_step: Vec<f64> = v
        .frames()
        .windows(3)
        .map(|w| {
            mean_abs(
                w[2].pixels()
                    .iter()
                    .zip(w[1].pixels())
                    .zip(w[0].pixels())
                    .map(|((n, c), p)| n - 2.0 * c + p),
            )
        })
        .collect();
    1.0 - per_step.iter().sum::<f64>() / per_step.len() as f64 / 4.0
}

/// Machine-readable metrics for one artifact. Reference-dependent fields are
/// `null` when no reference was supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub video_ti: Option<f64>,
    pub tcon: Option<f64>,
    pub tmean: Option<f64>,
    pub dynamic_degree: f64,
    pub motion_smoothness: f64,
}

pub struct MetricsInput<'a> {
    pub prompt: Option<&'a str>,
    pub input_frame: Option<&'a Frame>,
    pub reference: Option<&'a Video>,
    /// `(prev, next)` neighbours for transition coherence.
    pub neighbours: Option<(&'a Video, &'a Video)>,
}

pub fn report(generated: &Video, input: &MetricsInput<'_>) -> Result<MetricsReport, MetricsError> {
    let video_ti = match input.prompt {
        Some(p) if !p.trim().is_empty() => Some(video_ti(p, input.input_frame, generated)?),
        _ => None,
    };
    let tcon = input.reference.map(|r| tcon(r, generated)).transpose()?;
    let tmean = input
        .neighbours
        .map(|(p, n)| tmean(p, generated, n))
        .transpose()?;
    Ok(MetricsReport {
        video_ti,
        tcon,
        tmean,
        dynamic_degree: dynamic_degree(generated),
        motion_smoothness: motion_smoothness(generated),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled(v: f64) -> Frame {
        Frame::filled(8, 8, v).unwrap()
    }

    #[test]
    fn cosine_cases() {
        let v = [0.3, -1.2, 2.0];
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((cosine(&v, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(MetricsError::ZeroVector));
        assert_eq!(cosine(&[1.0], &[1.0, 0.0]), Err(MetricsError::LengthMismatch(1, 2)));
    }

    #[test]
    fn static_video_has_zero_motion_half() {
        let v = Video::from_frames(vec![filled(0.4); 5]).unwrap();
        let x = pooled_input(&v).unwrap();
        assert!(x[16..].iter().all(|d| *d == 0.0));
        assert_eq!(dynamic_degree(&v), 0.0);
        assert_eq!(motion_smoothness(&v), 1.0);
    }

    #[test]
    fn alternating_extremes() {
        let frames = (0..6).map(|t| filled(if t % 2 == 0 { 1.0 } else { -1.0 })).collect();
        let v = Video::from_frames(frames).unwrap();
        assert_eq!(dynamic_degree(&v), 2.0);
        assert_eq!(motion_smoothness(&v), 0.0);
    }

    #[test]
    fn linear_ramp_is_smooth() {
        let frames = (0..6).map(|t| filled(-0.5 + 0.2 * t as f64)).collect();
        let v = Video::from_frames(frames).unwrap();
        assert!((motion_smoothness(&v) - 1.0).abs() < 1e-12);
        assert!((dynamic_degree(&v) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn short_videos() {
        let v = Video::single(filled(0.2));
        assert_eq!(dynamic_degree(&v), 0.0);
        assert_eq!(motion_smoothness(&v), 1.0);
        assert!(video_feature(&Video::single(Frame::zeros(4, 4))).is_err());
    }
}
