//! Synthetic annotated keypoint data.
//!
//! Records are stored as JSON lines, one [`KeypointFrame`] per line. Floats
//! are written in shortest round-trip form, so reading back a written file
//! reproduces every value bit for bit.

mod distill;
pub mod motion;
mod noise;
mod render;

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PoseRecord;
use crate::model::JointConfiguration;

pub use distill::{distill_flat, distill_keyframes};
pub use noise::{add_noise, perturb_frame, NoiseSpec};
pub use render::{render_annotations, render_frame, BBOX_MARGIN, MIN_VISIBLE_KEYPOINTS};

/// One annotation record: a frame seen by one camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointFrame {
    pub frame_id: u64,
    pub camera_id: String,
    #[serde(default)]
    pub q: JointConfiguration,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_pose_world: Option<PoseRecord>,
    #[serde(default)]
    pub world_3d: Vec<[f64; 3]>,
    #[serde(default)]
    pub camera_3d: Vec<[f64; 3]>,
    pub pixel_2d: Vec<[f64; 2]>,
    pub visibility: Vec<bool>,
    /// `(u_min, v_min, u_max, v_max)` in pixels.
    pub bbox: [f64; 4],
    /// Fewer than [`MIN_VISIBLE_KEYPOINTS`] keypoints visible.
    #[serde(default)]
    pub degenerate: bool,
}

impl KeypointFrame {
    pub fn keypoint_count(&self) -> usize {
        self.pixel_2d.len()
    }

    pub fn visible_count(&self) -> usize {
        self.visibility.iter().filter(|v| **v).count()
    }

    pub fn pixels(&self) -> Vec<Vector2<f64>> {
        self.pixel_2d.iter().map(|p| Vector2::new(p[0], p[1])).collect()
    }

    pub fn camera_points(&self) -> Vec<Vector3<f64>> {
        self.camera_3d.iter().map(|p| Vector3::from(*p)).collect()
    }

    pub fn world_points(&self) -> Vec<Vector3<f64>> {
        self.world_3d.iter().map(|p| Vector3::from(*p)).collect()
    }
}

pub fn to_jsonl(frames: &[KeypointFrame]) -> Result<String> {
    let mut out = String::new();
    for f in frames {
        out.push_str(&serde_json::to_string(f)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_dataset(frames: &[KeypointFrame], path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    for f in frames {
        serde_json::to_writer(&mut w, f)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a JSON-lines dataset. Blank lines are skipped; a malformed line is
/// reported with its 1-based line number.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<KeypointFrame>> {
    let path = path.as_ref();
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut frames = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        frames.push(frame);
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_frame(rng: &mut impl Rng, id: u64) -> KeypointFrame {
        let n = 5;
        let f = |rng: &mut dyn rand::RngCore| rng.gen::<f64>() * 2e3 - 1e3;
        KeypointFrame {
            frame_id: id,
            camera_id: format!("cam{}", id % 3),
            q: JointConfiguration((0..4).map(|_| rng.gen_range(-3.0..3.0)).collect()),
            root_pose_world: Some(PoseRecord {
                translation: [f(rng), f(rng), f(rng)],
                rotation: [rng.gen(), rng.gen(), rng.gen(), rng.gen()],
            }),
            world_3d: (0..n).map(|_| [f(rng), f(rng), f(rng) * 1e-7]).collect(),
            camera_3d: (0..n).map(|_| [f(rng), f(rng), f(rng)]).collect(),
            pixel_2d: (0..n).map(|_| [f(rng), f(rng) * 1e13]).collect(),
            visibility: (0..n).map(|_| rng.gen()).collect(),
            bbox: [f(rng), f(rng), f(rng), f(rng)],
            degenerate: rng.gen(),
        }
    }

    #[test]
    fn empty_dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        write_dataset(&[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
        assert!(read_dataset(&path).unwrap().is_empty());
    }

    #[test]
    fn random_frames_round_trip_bit_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let frames: Vec<_> = (0..100).map(|i| random_frame(&mut rng, i)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frames.jsonl");
        write_dataset(&frames, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.len(), frames.len());
        for (a, b) in frames.iter().zip(&back) {
            assert_eq!(a, b);
            for (x, y) in a.camera_3d.iter().flatten().zip(b.camera_3d.iter().flatten()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn truncated_last_line_reports_its_number() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let frames: Vec<_> = (0..3).map(|i| random_frame(&mut rng, i)).collect();
        let mut text = to_jsonl(&frames).unwrap();
        text.truncate(text.len() - 20);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, text).unwrap();
        match read_dataset(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }
}
