//! Detector-noise model for 2D keypoints.
//!
//! Each record draws from its own ChaCha stream (`seed`, stream = record
//! position), so output does not depend on how records are scheduled.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{KeypointFrame, MIN_VISIBLE_KEYPOINTS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Gaussian std per pixel coordinate.
    pub pixel_sigma: f64,
    /// Probability that a visible keypoint is displaced within `outlier_radius`.
    pub outlier_rate: f64,
    pub outlier_radius: f64,
    /// Probability that a visible keypoint is marked invisible.
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::none()
    }
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            pixel_sigma: 0.0,
            outlier_rate: 0.0,
            outlier_radius: 0.0,
            dropout_rate: 0.0,
            seed: 0,
        }
    }

    pub fn gaussian(pixel_sigma: f64, seed: u64) -> Self {
        Self {
            pixel_sigma,
            seed,
            ..Self::none()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rate = |r: f64| (0.0..=1.0).contains(&r);
        if !(self.pixel_sigma >= 0.0 && self.pixel_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "pixel_sigma must be finite and >= 0, got {}",
                self.pixel_sigma
            )));
        }
        if !(self.outlier_radius >= 0.0 && self.outlier_radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "outlier_radius must be finite and >= 0, got {}",
                self.outlier_radius
            )));
        }
        if !rate(self.outlier_rate) || !rate(self.dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "rates must lie in [0, 1], got outlier {} dropout {}",
                self.outlier_rate, self.dropout_rate
            )));
        }
        Ok(())
    }

    fn is_null(&self) -> bool {
        self.pixel_sigma == 0.0 && self.outlier_rate == 0.0 && self.dropout_rate == 0.0
    }
}

/// Perturbs every record; record `i` uses stream `i`.
pub fn add_noise(frames: &[KeypointFrame], spec: &NoiseSpec) -> Result<Vec<KeypointFrame>> {
    spec.validate()?;
    Ok(frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| perturb_frame(f, spec, i as u64))
        .collect())
}

/// Perturbs one record with the given stream id. Only visible keypoints are
/// touched; `degenerate` is refreshed after dropout.
pub fn perturb_frame(frame: &KeypointFrame, spec: &NoiseSpec, stream: u64) -> KeypointFrame {
    let mut out = frame.clone();
    if spec.is_null() {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let normal = Normal::new(0.0, spec.pixel_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    for (px, vis) in out.pixel_2d.iter_mut().zip(out.visibility.iter_mut()) {
        if !*vis {
            continue;
        }
        if spec.pixel_sigma > 0.0 {
            px[0] += normal.sample(&mut rng);
            px[1] += normal.sample(&mut rng);
        }
        if spec.outlier_rate > 0.0 && rng.gen::<f64>() < spec.outlier_rate {
            let r = spec.outlier_radius * rng.gen::<f64>().sqrt();
            let a = rng.gen::<f64>() * std::f64::consts::TAU;
            px[0] += r * a.cos();
            px[1] += r * a.sin();
        }
        if spec.dropout_rate > 0.0 && rng.gen::<f64>() < spec.dropout_rate {
            *vis = false;
        }
    }
    out.degenerate = out.visible_count() < MIN_VISIBLE_KEYPOINTS;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(n: usize) -> KeypointFrame {
        KeypointFrame {
            frame_id: 0,
            camera_id: "c".into(),
            q: Default::default(),
            root_pose_world: None,
            world_3d: vec![],
            camera_3d: vec![],
            pixel_2d: (0..n).map(|i| [i as f64, 2.0 * i as f64]).collect(),
            visibility: vec![true; n],
            bbox: [0.0, 0.0, 10.0, 10.0],
            degenerate: false,
        }
    }

    #[test]
    fn null_noise_is_identity() {
        let frames = vec![frame(30); 4];
        assert_eq!(add_noise(&frames, &NoiseSpec::none()).unwrap(), frames);
    }

    #[test]
    fn empirical_sigma_matches() {
        let frames = vec![frame(100); 100];
        let noisy = add_noise(&frames, &NoiseSpec::gaussian(2.0, 5)).unwrap();
        let mut d = Vec::new();
        for (a, b) in frames.iter().zip(&noisy) {
            for (p, q) in a.pixel_2d.iter().zip(&b.pixel_2d) {
                d.push(q[0] - p[0]);
            }
        }
        assert_eq!(d.len(), 10_000);
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
        let sd = var.sqrt();
        assert!((1.9..=2.1).contains(&sd), "std {sd}");
    }

    #[test]
    fn same_seed_same_bytes() {
        let frames = vec![frame(30); 20];
        let spec = NoiseSpec {
            pixel_sigma: 1.5,
            outlier_rate: 0.1,
            outlier_radius: 40.0,
            dropout_rate: 0.2,
            seed: 99,
        };
        let a = super::super::to_jsonl(&add_noise(&frames, &spec).unwrap()).unwrap();
        let b = super::super::to_jsonl(&add_noise(&frames, &spec).unwrap()).unwrap();
        assert_eq!(a, b);
        let other = NoiseSpec { seed: 100, ..spec };
        assert_ne!(a, super::super::to_jsonl(&add_noise(&frames, &other).unwrap()).unwrap());
    }

    #[test]
    fn full_dropout_marks_degenerate() {
        let spec = NoiseSpec {
            dropout_rate: 1.0,
            ..NoiseSpec::none()
        };
        let out = perturb_frame(&frame(10), &spec, 0);
        assert_eq!(out.visible_count(), 0);
        assert!(out.degenerate);
    }

    #[test]
    fn rejects_bad_spec() {
        let spec = NoiseSpec {
            outlier_rate: 1.5,
            ..NoiseSpec::none()
        };
        assert!(add_noise(&[], &spec).is_err());
        assert!(NoiseSpec::gaussian(-1.0, 0).validate().is_err());
    }
}
