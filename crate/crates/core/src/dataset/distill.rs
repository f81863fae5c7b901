//! Greedy farthest-point keyframe selection in joint space.
//!
//! Selection starts at frame 0 and repeatedly adds the frame whose squared
//! Euclidean distance to the nearest selected frame is largest (lowest index
//! wins ties). Consecutive frames are grouped into small chunks with bounding
//! balls; a chunk whose ball lies farther from the new keyframe than its
//! current worst nearest-distance cannot change and is skipped. The result is
//! identical to the plain quadratic scan.

use crate::error::{Error, Result};
use crate::model::JointConfiguration;

const CHUNK: usize = 16;

pub fn distill_keyframes(q_sequence: &[JointConfiguration], k: usize) -> Result<Vec<usize>> {
    let dim = q_sequence.first().map(|q| q.len()).unwrap_or(0);
    if q_sequence.iter().any(|q| q.len() != dim) {
        return Err(Error::InvalidArgument(
            "configurations of differing length".into(),
        ));
    }
    let flat: Vec<f64> = q_sequence.iter().flat_map(|q| q.values()).copied().collect();
    distill_flat(&flat, dim, k)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// [`distill_keyframes`] over row-major `values` of `values.len() / dim` rows.
pub fn distill_flat(values: &[f64], dim: usize, k: usize) -> Result<Vec<usize>> {
    if values.is_empty() {
        return Err(Error::Empty("configuration sequence"));
    }
    if dim == 0 || values.len() % dim != 0 {
        return Err(Error::InvalidArgument(format!(
            "{} values do not split into rows of {dim}",
            values.len()
        )));
    }
    let n = values.len() / dim;
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "keyframe count {k} outside 1..={n}"
        )));
    }
    let row = |i: usize| &values[i * dim..(i + 1) * dim];

    let n_chunks = n.div_ceil(CHUNK);
    let mut centers = vec![0.0; n_chunks * dim];
    let mut radius = vec![0.0; n_chunks];
    for c in 0..n_chunks {
        let (lo, hi) = (c * CHUNK, ((c + 1) * CHUNK).min(n));
        let m = &mut centers[c * dim..(c + 1) * dim];
        for i in lo..hi {
            for (acc, v) in m.iter_mut().zip(row(i)) {
                *acc += v;
            }
        }
        let inv = 1.0 / (hi - lo) as f64;
        m.iter_mut().for_each(|v| *v *= inv);
        radius[c] = (lo..hi)
            .map(|i| dist2(row(i), m).sqrt())
            .fold(0.0, f64::max);
    }

    // selected rows are parked at -1 so they are never picked again
    let mut nearest = vec![f64::INFINITY; n];
    let mut chunk_max = vec![f64::INFINITY; n_chunks];
    let mut chunk_arg: Vec<usize> = (0..n_chunks).map(|c| c * CHUNK).collect();
    let mut selected = Vec::with_capacity(k);
    let mut next = 0usize;
    loop {
        selected.push(next);
        nearest[next] = -1.0;
        if selected.len() == k {
            break;
        }
        let s = row(next);
        for c in 0..n_chunks {
            let (lo, hi) = (c * CHUNK, ((c + 1) * CHUNK).min(n));
            if chunk_max[c].is_finite() {
                let gap = dist2(&centers[c * dim..(c + 1) * dim], s).sqrt() - radius[c];
                let worst = chunk_max[c].max(0.0).sqrt();
                if gap > worst * (1.0 + 1e-9) + 1e-12 {
                    continue;
                }
            }
            let mut best = f64::NEG_INFINITY;
            let mut arg = lo;
            for i in lo..hi {
                if nearest[i] >= 0.0 {
                    let d = dist2(row(i), s);
                    if d < nearest[i] {
                        nearest[i] = d;
                    }
                }
                if nearest[i] > best {
                    best = nearest[i];
                    arg = i;
                }
            }
            chunk_max[c] = best;
            chunk_arg[c] = arg;
        }
        let mut best = f64::NEG_INFINITY;
        for c in 0..n_chunks {
            if chunk_max[c] > best {
                best = chunk_max[c];
                next = chunk_arg[c];
            }
        }
    }
    selected.sort_unstable();
    Ok(selected)
}
