//! 2D keypoint normalization and a small fully connected lifting network.
//!
//! Normalization subtracts the root pixel and divides by the largest
//! absolute coordinate of the visible keypoints, so visible coordinates lie
//! in `[-1, 1]` and the root sits at the origin. The network maps the
//! flattened `2N` normalized coordinates to `3N` root-relative camera-frame
//! coordinates in meters; the predicted root row is subtracted from every
//! row so the root output is exactly zero.
//!
//! Training is plain mini-batch momentum SGD on the mean squared error with
//! hand-written backpropagation. Batches are evaluated as matrix products,
//! one example per column, on the calling thread.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::KeypointFrame;
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const DEFAULT_HIDDEN: [usize; 2] = [256, 256];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedKeypoints {
    pub coords: Vec<[f64; 2]>,
    pub center: [f64; 2],
    pub scale: f64,
}

impl NormalizedKeypoints {
    /// Row-major `[u0, v0, u1, v1, ...]`.
    pub fn flatten(&self) -> Vec<f64> {
        self.coords.iter().flatten().copied().collect()
    }

    pub fn denormalize(&self) -> Vec<[f64; 2]> {
        self.coords
            .iter()
            .map(|c| {
                [
                    c[0] * self.scale + self.center[0],
                    c[1] * self.scale + self.center[1],
                ]
            })
            .collect()
    }
}

/// Normalizes with every keypoint treated as visible.
pub fn normalize_2d(pixels: &[[f64; 2]], root_index: usize) -> Result<NormalizedKeypoints> {
    normalize_visible(pixels, &vec![true; pixels.len()], root_index)
}

/// Normalizes over the visible keypoints; invisible ones are set to the
/// root coordinate `(0, 0)`.
pub fn normalize_visible(
    pixels: &[[f64; 2]],
    visibility: &[bool],
    root_index: usize,
) -> Result<NormalizedKeypoints> {
    if visibility.len() != pixels.len() {
        return Err(Error::ShapeMismatch {
            what: "visibility",
            expected: pixels.len(),
            got: visibility.len(),
        });
    }
    if root_index >= pixels.len() {
        return Err(Error::InvalidArgument(format!(
            "root index {root_index} out of range for {} keypoints",
            pixels.len()
        )));
    }
    if !visibility[root_index] {
        return Err(Error::Degenerate("root keypoint is not visible".into()));
    }
    let center = pixels[root_index];
    let scale = pixels
        .iter()
        .zip(visibility)
        .filter(|(_, v)| **v)
        .flat_map(|(p, _)| [(p[0] - center[0]).abs(), (p[1] - center[1]).abs()])
        .fold(0.0, f64::max);
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Degenerate("all visible keypoints coincide".into()));
    }
    let coords = pixels
        .iter()
        .zip(visibility)
        .map(|(p, v)| {
            if *v {
                [(p[0] - center[0]) / scale, (p[1] - center[1]) / scale]
            } else {
                [0.0, 0.0]
            }
        })
        .collect();
    Ok(NormalizedKeypoints {
        coords,
        center,
        scale,
    })
}

/// Subtracts the root row; the root row of the result is exactly zero.
pub fn root_relative(points: &[Vector3<f64>], root_index: usize) -> Vec<Vector3<f64>> {
    let root = points[root_index];
    points
        .iter()
        .enumerate()
        .map(|(i, p)| if i == root_index { Vector3::zeros() } else { p - root })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    w: DMatrix<f64>,
    b: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerRepr {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NetworkRepr {
    keypoints: usize,
    root_index: usize,
    layers: Vec<LayerRepr>,
}

/// Fully connected `2N -> hidden... -> 3N` network with leaky-rectifier
/// hidden activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "NetworkRepr", try_from = "NetworkRepr")]
pub struct LifterNetwork {
    keypoints: usize,
    root_index: usize,
    layers: Vec<Dense>,
}

impl From<LifterNetwork> for NetworkRepr {
    fn from(n: LifterNetwork) -> Self {
        NetworkRepr {
            keypoints: n.keypoints,
            root_index: n.root_index,
            layers: n
                .layers
                .iter()
                .map(|l| LayerRepr {
                    rows: l.w.nrows(),
                    cols: l.w.ncols(),
                    weights: l.w.transpose().as_slice().to_vec(),
                    bias: l.b.as_slice().to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<NetworkRepr> for LifterNetwork {
    type Error = String;

    fn try_from(r: NetworkRepr) -> std::result::Result<Self, String> {
        let mut layers = Vec::with_capacity(r.layers.len());
        for (i, l) in r.layers.into_iter().enumerate() {
            if l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(format!("layer {i}: array sizes do not match {}x{}", l.rows, l.cols));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(format!("layer {i}: non-finite parameter"));
            }
            layers.push(Dense {
                w: DMatrix::from_row_slice(l.rows, l.cols, &l.weights),
                b: DVector::from_vec(l.bias),
            });
        }
        let net = LifterNetwork {
            keypoints: r.keypoints,
            root_index: r.root_index,
            layers,
        };
        net.check_shapes().map_err(|e| e.to_string())?;
        Ok(net)
    }
}

fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

fn leaky_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

impl LifterNetwork {
    /// He-initialized network (`N(0, 2 / fan_in)` weights, zero biases).
    pub fn new(keypoints: usize, root_index: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(keypoints, root_index, hidden, |rows, cols| {
            let normal = Normal::new(0.0, (2.0 / cols as f64).sqrt()).expect("positive std");
            DMatrix::from_fn(rows, cols, |_, _| normal.sample(&mut rng))
        })
    }

    pub fn zeros(keypoints: usize, root_index: usize, hidden: &[usize]) -> Result<Self> {
        Self::build(keypoints, root_index, hidden, DMatrix::zeros)
    }

    fn build(
        keypoints: usize,
        root_index: usize,
        hidden: &[usize],
        mut init: impl FnMut(usize, usize) -> DMatrix<f64>,
    ) -> Result<Self> {
        if keypoints < 2 || root_index >= keypoints || hidden.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "network with {keypoints} keypoints, root {root_index}, hidden {hidden:?}"
            )));
        }
        let mut widths = vec![2 * keypoints];
        widths.extend_from_slice(hidden);
        widths.push(3 * keypoints);
        let layers = widths
            .windows(2)
            .map(|w| Dense {
                w: init(w[1], w[0]),
                b: DVector::zeros(w[1]),
            })
            .collect();
        Ok(Self {
            keypoints,
            root_index,
            layers,
        })
    }

    fn check_shapes(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.layers.is_empty() || self.root_index >= self.keypoints {
            return bad("network without layers or with root out of range".into());
        }
        let mut width = 2 * self.keypoints;
        for (i, l) in self.layers.iter().enumerate() {
            if l.w.ncols() != width || l.b.len() != l.w.nrows() {
                return bad(format!("layer {i} has inconsistent shape"));
            }
            width = l.w.nrows();
        }
        if width != 3 * self.keypoints {
            return bad(format!("output width {width} is not 3 x {}", self.keypoints));
        }
        Ok(())
    }

    pub fn keypoints(&self) -> usize {
        self.keypoints
    }

    pub fn root_index(&self) -> usize {
        self.root_index
    }

    /// Layer widths, input first.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].w.ncols()];
        w.extend(self.layers.iter().map(|l| l.w.nrows()));
        w
    }

    pub fn weight_matrices(&self) -> Vec<&DMatrix<f64>> {
        self.layers.iter().map(|l| &l.w).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flat parameter order: per layer, weights row-major then biases.
    pub fn parameter(&self, index: usize) -> f64 {
        let (l, k) = self.locate(index);
        let layer = &self.layers[l];
        if k < layer.w.len() {
            layer.w[(k / layer.w.ncols(), k % layer.w.ncols())]
        } else {
            layer.b[k - layer.w.len()]
        }
    }

    pub fn set_parameter(&mut self, index: usize, value: f64) {
        let (l, k) = self.locate(index);
        let layer = &mut self.layers[l];
        if k < layer.w.len() {
            let cols = layer.w.ncols();
            layer.w[(k / cols, k % cols)] = value;
        } else {
            let n = layer.w.len();
            layer.b[k - n] = value;
        }
    }

    fn locate(&self, mut index: usize) -> (usize, usize) {
        for (l, layer) in self.layers.iter().enumerate() {
            let n = layer.w.len() + layer.b.len();
            if index < n {
                return (l, index);
            }
            index -= n;
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != 2 * self.keypoints {
            return Err(Error::ShapeMismatch {
                what: "lifter input",
                expected: 2 * self.keypoints,
                got: len,
            });
        }
        Ok(())
    }

    /// Root-relative camera-frame keypoints for one flattened normalized input.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<Vector3<f64>>> {
        self.check_input(input.len())?;
        let x = DMatrix::from_column_slice(input.len(), 1, input);
        let y = self.forward_batch(&x);
        Ok(y.as_slice()
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect())
    }

    /// Batched forward pass, one example per column, root row subtracted.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = x.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &l.w * &a;
            for mut col in z.column_iter_mut() {
                col += &l.b;
            }
            if i < last {
                z.apply(|v| *v = leaky(*v));
            }
            a = z;
        }
        subtract_root(&mut a, self.root_index);
        a
    }

    /// Mean squared error over all outputs of the batch.
    pub fn loss(&self, x: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
        if x.ncols() == 0 {
            return 0.0;
        }
        let p = self.forward_batch(x);
        (p - t).norm_squared() / t.len() as f64
    }

    /// Loss `scale * MSE` and its parameter gradients for a batch.
    fn backprop(&self, x: &DMatrix<f64>, t: &DMatrix<f64>, scale: f64) -> (f64, Vec<Dense>) {
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut acts = vec![x.clone()];
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &l.w * &acts[i];
            for mut col in z.column_iter_mut() {
                col += &l.b;
            }
            let a = if i < last { z.map(leaky) } else { z.clone() };
            pre.push(z);
            acts.push(a);
        }
        let mut out = acts.pop().expect("output activation");
        subtract_root(&mut out, self.root_index);
        let diff = out - t;
        let denom = t.len() as f64;
        let loss = scale * diff.norm_squared() / denom;

        let mut g = diff * (2.0 * scale / denom);
        // P_i = Y_i - Y_root for every row block i
        let r = 3 * self.root_index;
        for c in 0..g.ncols() {
            let mut sum = Vector3::zeros();
            for k in 0..self.keypoints {
                sum += Vector3::new(g[(3 * k, c)], g[(3 * k + 1, c)], g[(3 * k + 2, c)]);
            }
            for a in 0..3 {
                g[(r + a, c)] -= sum[a];
            }
        }
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            if i < last {
                g.zip_apply(&pre[i], |gv, z| *gv *= leaky_grad(z));
            }
            let dw = &g * acts[i].transpose();
            let db = g.column_sum();
            if i > 0 {
                g = self.layers[i].w.transpose() * &g;
            }
            grads.push(Dense { w: dw, b: db });
        }
        grads.reverse();
        (loss, grads)
    }

    /// Flat gradient (see [`LifterNetwork::parameter`]) of `loss_scale * MSE`
    /// on one example.
    pub fn gradient(&self, input: &[f64], target: &[f64], loss_scale: f64) -> Result<Vec<f64>> {
        self.check_input(input.len())?;
        if target.len() != 3 * self.keypoints {
            return Err(Error::ShapeMismatch {
                what: "lifter target",
                expected: 3 * self.keypoints,
                got: target.len(),
            });
        }
        let x = DMatrix::from_column_slice(input.len(), 1, input);
        let t = DMatrix::from_column_slice(target.len(), 1, target);
        let (_, grads) = self.backprop(&x, &t, loss_scale);
        let mut flat = Vec::with_capacity(self.parameter_count());
        for g in &grads {
            flat.extend(g.w.transpose().iter());
            flat.extend(g.b.iter());
        }
        Ok(flat)
    }

    fn sample_loss(&self, input: &[f64], target: &[f64], loss_scale: f64) -> f64 {
        let x = DMatrix::from_column_slice(input.len(), 1, input);
        let t = DMatrix::from_column_slice(target.len(), 1, target);
        loss_scale * self.loss(&x, &t)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn subtract_root(m: &mut DMatrix<f64>, root_index: usize) {
    let r = 3 * root_index;
    let n = m.nrows() / 3;
    for c in 0..m.ncols() {
        let root = Vector3::new(m[(r, c)], m[(r + 1, c)], m[(r + 2, c)]);
        for k in 0..n {
            for a in 0..3 {
                m[(3 * k + a, c)] -= root[a];
            }
        }
    }
}

/// Compares analytic gradients with central differences (`h = 1e-5`) on
/// `n_params` parameters drawn with `seed`; returns the largest relative
/// error `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(
    net: &LifterNetwork,
    input: &[f64],
    target: &[f64],
    n_params: usize,
    seed: u64,
) -> Result<f64> {
    const H: f64 = 1e-5;
    let analytic = net.gradient(input, target, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..n_params {
        let i = rng.gen_range(0..net.parameter_count());
        let v = net.parameter(i);
        probe.set_parameter(i, v + H);
        let up = probe.sample_loss(input, target, 1.0);
        probe.set_parameter(i, v - H);
        let down = probe.sample_loss(input, target, 1.0);
        probe.set_parameter(i, v);
        let numeric = (up - down) / (2.0 * H);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Training examples, one per column: `2N` normalized inputs and `3N`
/// root-relative targets in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftingData {
    pub keypoints: usize,
    pub root_index: usize,
    pub inputs: DMatrix<f64>,
    pub targets: DMatrix<f64>,
}

impl LiftingData {
    pub fn new(
        keypoints: usize,
        root_index: usize,
        inputs: DMatrix<f64>,
        targets: DMatrix<f64>,
    ) -> Result<Self> {
        if inputs.nrows() != 2 * keypoints || targets.nrows() != 3 * keypoints {
            return Err(Error::ShapeMismatch {
                what: "lifting data rows",
                expected: 2 * keypoints,
                got: inputs.nrows(),
            });
        }
        if inputs.ncols() != targets.ncols() {
            return Err(Error::ShapeMismatch {
                what: "lifting targets",
                expected: inputs.ncols(),
                got: targets.ncols(),
            });
        }
        Ok(Self {
            keypoints,
            root_index,
            inputs,
            targets,
        })
    }

    /// Builds examples from records carrying `camera_3d`. Records flagged
    /// degenerate or whose root is not visible are skipped.
    pub fn from_frames(frames: &[KeypointFrame], root_index: usize) -> Result<Self> {
        let n = frames
            .first()
            .map(|f| f.keypoint_count())
            .ok_or(Error::Empty("lifting records"))?;
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        let mut count = 0;
        for f in frames {
            if f.keypoint_count() != n || f.camera_3d.len() != n {
                return Err(Error::ShapeMismatch {
                    what: "record keypoints",
                    expected: n,
                    got: f.camera_3d.len().min(f.keypoint_count()),
                });
            }
            if f.degenerate || !f.visibility[root_index] {
                continue;
            }
            let Ok(norm) = normalize_visible(&f.pixel_2d, &f.visibility, root_index) else {
                continue;
            };
            inputs.extend(norm.flatten());
            for p in root_relative(&f.camera_points(), root_index) {
                targets.extend([p.x, p.y, p.z]);
            }
            count += 1;
        }
        Self::new(
            n,
            root_index,
            DMatrix::from_vec(2 * n, count, inputs),
            DMatrix::from_vec(3 * n, count, targets),
        )
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            keypoints: self.keypoints,
            root_index: self.root_index,
            inputs: self.inputs.select_columns(indices),
            targets: self.targets.select_columns(indices),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 64,
            epochs: 500,
            seed: 0,
            validation_fraction: 0.1,
            hidden: DEFAULT_HIDDEN.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.momentum)
            && self.batch_size > 0
            && self.validation_fraction > 0.0
            && self.validation_fraction <= 0.5;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid training config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Full training-set loss; entry 0 is the initialized network, entry
    /// `e` follows epoch `e`.
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
}

/// Seeded shuffle split; the validation part has `round(fraction * n)`
/// examples.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    idx.shuffle(&mut rng);
    let n_val = ((fraction * n as f64).round() as usize).min(n);
    let mut val = idx.split_off(n - n_val);
    idx.sort_unstable();
    val.sort_unstable();
    (idx, val)
}

pub fn train(data: &LiftingData, config: &TrainConfig) -> Result<(LifterNetwork, TrainHistory)> {
    config.validate()?;
    let (train_idx, val_idx) = split_indices(data.len(), config.validation_fraction, config.seed);
    if train_idx.len() < config.batch_size {
        return Err(Error::InvalidArgument(format!(
            "{} training examples, fewer than one batch of {}",
            train_idx.len(),
            config.batch_size
        )));
    }
    let train_set = data.select(&train_idx);
    let val_set = data.select(&val_idx);
    let mut net = LifterNetwork::new(data.keypoints, data.root_index, &config.hidden, config.seed)?;
    let mut velocity: Vec<Dense> = net
        .layers
        .iter()
        .map(|l| Dense {
            w: DMatrix::zeros(l.w.nrows(), l.w.ncols()),
            b: DVector::zeros(l.b.len()),
        })
        .collect();
    let mut history = TrainHistory {
        train_loss: vec![chunked_loss(&net, &train_set)],
        validation_loss: vec![chunked_loss(&net, &val_set)],
        train_indices: train_idx,
        validation_indices: val_idx,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (batch, cols) in order.chunks(config.batch_size).enumerate() {
            let x = train_set.inputs.select_columns(cols);
            let t = train_set.targets.select_columns(cols);
            let (loss, grads) = net.backprop(&x, &t, 1.0);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch });
            }
            for ((layer, v), g) in net.layers.iter_mut().zip(&mut velocity).zip(&grads) {
                let (mu, lr) = (config.momentum, config.learning_rate);
                v.w.zip_apply(&g.w, |v, g| *v = mu * *v - lr * g);
                v.b.zip_apply(&g.b, |v, g| *v = mu * *v - lr * g);
                layer.w += &v.w;
                layer.b += &v.b;
            }
        }
        let loss = chunked_loss(&net, &train_set);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: order.len().div_ceil(config.batch_size),
            });
        }
        history.train_loss.push(loss);
        history.validation_loss.push(chunked_loss(&net, &val_set));
    }
    Ok((net, history))
}

/// MSE over a whole data set, evaluated in column blocks.
pub fn chunked_loss(net: &LifterNetwork, data: &LiftingData) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    let mut start = 0;
    while start < data.len() {
        let w = 1024.min(data.len() - start);
        let x = data.inputs.columns(start, w).into_owned();
        let t = data.targets.columns(start, w).into_owned();
        sum += (net.forward_batch(&x) - t).norm_squared();
        start += w;
    }
    sum / data.targets.len() as f64
}

/// Ridge-regularized affine least squares from inputs to targets, fitted in
/// closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBaseline {
    keypoints: usize,
    root_index: usize,
    /// `3N x (2N + 1)`, last column is the bias.
    weights: DMatrix<f64>,
}

impl LinearBaseline {
    pub fn fit(data: &LiftingData, ridge: f64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("baseline training data"));
        }
        let m = data.len();
        let d = data.inputs.nrows();
        let mut xa = DMatrix::from_element(d + 1, m, 1.0);
        xa.rows_mut(0, d).copy_from(&data.inputs);
        let mut gram = &xa * xa.transpose();
        for i in 0..d {
            gram[(i, i)] += ridge;
        }
        let rhs = &xa * data.targets.transpose();
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Degenerate("baseline normal equations are singular".into()))?;
        let weights = chol.solve(&rhs).transpose();
        Ok(Self {
            keypoints: data.keypoints,
            root_index: data.root_index,
            weights,
        })
    }

    pub fn predict_batch(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let d = x.nrows();
        let mut out = self.weights.columns(0, d) * x;
        let bias = self.weights.column(d);
        for mut col in out.column_iter_mut() {
            col += bias;
        }
        subtract_root(&mut out, self.root_index);
        out
    }

    pub fn predict(&self, input: &[f64]) -> Vec<Vector3<f64>> {
        let x = DMatrix::from_column_slice(input.len(), 1, input);
        self.predict_batch(&x)
            .as_slice()
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect()
    }
}

/// Mean Euclidean distance per keypoint between column-stacked `3N`
/// predictions and targets, in meters.
pub fn mean_keypoint_error(pred: &DMatrix<f64>, target: &DMatrix<f64>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.column_iter().zip(target.column_iter()) {
        for k in 0..p.len() / 3 {
            sum += (p.fixed_rows::<3>(3 * k) - t.fixed_rows::<3>(3 * k)).norm();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Lifts one record's 2D keypoints with `net`.
pub fn lift_pixels(
    net: &LifterNetwork,
    pixels: &[[f64; 2]],
    visibility: &[bool],
) -> Result<Vec<Vector3<f64>>> {
    let norm = normalize_visible(pixels, visibility, net.root_index())?;
    net.forward(&norm.flatten())
}
