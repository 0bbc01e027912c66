//! A small convolutional D-map estimator trained end to end through the
//! blend and the combined reconstruction + D-map loss.
//!
//! Architecture: the four input frames are concatenated into 12 channels and
//! passed through three 3x3 same-padded convolutions (12->16->16->1) with
//! leaky ReLU (slope 0.1) in between and a logistic output.

use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::blend::{total_loss, LossConfig, LossReport};
use crate::error::{Error, Result};
use crate::ftm::AugmentedSample;
use crate::image::{io, Frame, Mask, Sequence};
use crate::interp::{as_array, interpolator, ContinuousInterpolator, DEFAULT_INTERPOLATOR};

pub const IN_CHANNELS: usize = 12;
pub const HIDDEN: usize = 16;
pub const KERNEL: usize = 3;
pub const LEAKY_SLOPE: f64 = 0.1;

/// `(out, in)` channels per layer.
pub const LAYERS: [(usize, usize); 3] = [(HIDDEN, IN_CHANNELS), (HIDDEN, HIDDEN), (1, HIDDEN)];

pub const fn param_count() -> usize {
    let mut n = 0;
    let mut i = 0;
    while i < LAYERS.len() {
        n += LAYERS[i].0 * LAYERS[i].1 * KERNEL * KERNEL + LAYERS[i].0;
        i += 1;
    }
    n
}

/// Flat parameter vector: for each layer, weights `[O, I, 3, 3]` then bias `[O]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DMapEstimator {
    params: Vec<f64>,
}

impl DMapEstimator {
    pub fn zeros() -> Self {
        DMapEstimator {
            params: vec![0.0; param_count()],
        }
    }

    /// He-style uniform initialization with zero biases.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(param_count());
        for (o, i) in LAYERS {
            let fan_in = (i * KERNEL * KERNEL) as f64;
            let bound = (6.0 / fan_in).sqrt();
            params.extend((0..o * i * KERNEL * KERNEL).map(|_| rng.gen_range(-bound..bound)));
            params.extend(std::iter::repeat_n(0.0, o));
        }
        DMapEstimator { params }
    }

    pub fn from_params(params: Vec<f64>) -> Result<Self> {
        if params.len() != param_count() {
            return Err(Error::InvalidArgument(format!(
                "estimator needs {} parameters, got {}",
                param_count(),
                params.len()
            )));
        }
        if let Some(v) = params.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter value {v}")));
        }
        Ok(DMapEstimator { params })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `(offset, shape)` of each parameter tensor in the flat vector.
    pub fn layout() -> Vec<(usize, Vec<usize>)> {
        let mut out = Vec::new();
        let mut off = 0;
        for (o, i) in LAYERS {
            let wshape = vec![o, i, KERNEL, KERNEL];
            let wlen = o * i * KERNEL * KERNEL;
            out.push((off, wshape));
            off += wlen;
            out.push((off, vec![o]));
            off += o;
        }
        out
    }

    /// Index of the output layer's bias in the flat vector.
    pub fn output_bias_index() -> usize {
        param_count() - 1
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.params.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != param_count() * 8 {
            return Err(Error::InvalidArgument(format!(
                "checkpoint holds {} bytes, expected {}",
                bytes.len(),
                param_count() * 8
            )));
        }
        let params = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        DMapEstimator::from_params(params)
    }
}

/// One training/evaluation unit: four inputs in temporal order, the target,
/// and the ground-truth D-map.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub inputs: [Frame; 4],
    pub target: Frame,
    pub dgt: Mask,
}

impl TrainExample {
    pub fn new(inputs: [Frame; 4], target: Frame, dgt: Mask) -> Result<Self> {
        for f in &inputs[1..] {
            inputs[0].ensure_same_dims(f)?;
        }
        inputs[0].ensure_same_dims(&target)?;
        dgt.ensure_dims(target.dims())?;
        if target.height() < 3 || target.width() < 3 {
            return Err(Error::InvalidArgument("estimator inputs must be at least 3x3".into()));
        }
        Ok(TrainExample { inputs, target, dgt })
    }

    /// Uses the sequence's role map (four inputs) for inputs and target.
    pub fn from_sequence(seq: &Sequence, dgt: Mask) -> Result<Self> {
        let roles = seq
            .roles()
            .ok_or_else(|| Error::InvalidArgument("sequence has no input/target roles".into()))?;
        let inputs =
            as_array(&roles.inputs.iter().map(|&i| seq.frame(i).clone()).collect::<Vec<_>>())?.map(Frame::clone);
        TrainExample::new(inputs, seq.frame(roles.target).clone(), dgt)
    }

    pub fn from_augmented(sample: &AugmentedSample) -> Result<Self> {
        TrainExample::from_sequence(&sample.augmented, sample.dgt.clone())
    }

    pub fn dims(&self) -> (usize, usize) {
        self.target.dims()
    }

    pub fn previous(&self) -> &Frame {
        &self.inputs[1]
    }

    fn input_refs(&self) -> [&Frame; 4] {
        [&self.inputs[0], &self.inputs[1], &self.inputs[2], &self.inputs[3]]
    }

    /// Same-position crop of every frame and the mask.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        let crop_frame = |f: &Frame| -> Result<Frame> {
            let s = crate::image::crop(&Sequence::new(vec![f.clone()])?, top, left, h, w)?;
            Ok(s.into_frames().remove(0))
        };
        let inputs = [
            crop_frame(&self.inputs[0])?,
            crop_frame(&self.inputs[1])?,
            crop_frame(&self.inputs[2])?,
            crop_frame(&self.inputs[3])?,
        ];
        let mut dgt = Vec::with_capacity(h * w);
        for y in top..top + h {
            for x in left..left + w {
                dgt.push(self.dgt.get(y, x));
            }
        }
        TrainExample::new(inputs, crop_frame(&self.target)?, Mask::new(h, w, dgt)?)
    }
}

struct Graph {
    tape: Tape,
    params: Vec<Var>,
    d: Var,
    i_hat: Var,
    l1: Var,
    l_d: Var,
    total: Var,
}

fn build_graph(
    example: &TrainExample,
    i_c: &Frame,
    est: &DMapEstimator,
    cfg: &LossConfig,
    requires_grad: bool,
) -> Graph {
    let (h, w) = example.dims();
    let mut tape = Tape::new();
    let mut x = Vec::with_capacity(IN_CHANNELS * h * w);
    for f in &example.inputs {
        x.extend(f.to_planar());
    }
    let mut act = tape.leaf(Tensor::new(vec![IN_CHANNELS, h, w], x), false);
    let mut params = Vec::new();
    let layout = DMapEstimator::layout();
    for (layer, pair) in layout.chunks(2).enumerate() {
        let (woff, wshape) = &pair[0];
        let (boff, bshape) = &pair[1];
        let wlen: usize = wshape.iter().product();
        let wv = tape.leaf(
            Tensor::new(wshape.clone(), est.params[*woff..woff + wlen].to_vec()),
            requires_grad,
        );
        let bv = tape.leaf(
            Tensor::new(bshape.clone(), est.params[*boff..boff + bshape[0]].to_vec()),
            requires_grad,
        );
        params.extend([wv, bv]);
        act = tape.conv2d(act, wv, bv);
        if layer + 1 < LAYERS.len() {
            act = tape.leaky_relu(act, LEAKY_SLOPE);
        }
    }
    let d = tape.logistic(act);
    let ic = tape.leaf(Tensor::new(vec![3, h, w], i_c.to_planar()), false);
    let prev = tape.leaf(Tensor::new(vec![3, h, w], example.previous().to_planar()), false);
    let i_hat = tape.blend(ic, prev, d);
    let gt = tape.leaf(Tensor::new(vec![3, h, w], example.target.to_planar()), false);
    let dgt = tape.leaf(Tensor::new(vec![1, h, w], example.dgt.data().to_vec()), false);
    let l1 = tape.charbonnier(i_hat, gt, cfg.epsilon);
    let l_d = tape.charbonnier(d, dgt, cfg.epsilon);
    let total = tape.weighted_sum(&[(l1, 1.0), (l_d, cfg.lambda_d)]);
    Graph {
        tape,
        params,
        d,
        i_hat,
        l1,
        l_d,
        total,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub d: Mask,
    pub i_c: Frame,
    pub i_hat: Frame,
}

fn outputs(g: &Graph, dims: (usize, usize), i_c: Frame) -> Result<ForwardOutput> {
    let (h, w) = dims;
    Ok(ForwardOutput {
        d: Mask::new(h, w, g.tape.value(g.d).values().to_vec())?,
        i_c,
        i_hat: Frame::from_planar(h, w, g.tape.value(g.i_hat).values())?,
    })
}

/// Everything needed to run the estimator on inputs: parameters plus the
/// continuous interpolator feeding the blend.
pub struct Model {
    pub estimator: DMapEstimator,
    interpolator: Box<dyn ContinuousInterpolator>,
}

impl Model {
    pub fn new(estimator: DMapEstimator) -> Self {
        Model::with_interpolator(estimator, DEFAULT_INTERPOLATOR).expect("default interpolator is registered")
    }

    pub fn with_interpolator(estimator: DMapEstimator, name: &str) -> Result<Self> {
        Ok(Model {
            estimator,
            interpolator: interpolator(name)?,
        })
    }

    pub fn interpolator_name(&self) -> &'static str {
        self.interpolator.name()
    }

    pub fn continuous(&self, inputs: &[&Frame; 4]) -> Result<Frame> {
        self.interpolator.interpolate(inputs)
    }

    /// Differentiable forward pass; returns the outputs and the loss report
    /// against the example's target and D-map.
    pub fn forward(&self, example: &TrainExample, cfg: &LossConfig) -> Result<(ForwardOutput, LossReport)> {
        let i_c = self.continuous(&example.input_refs())?;
        let g = build_graph(example, &i_c, &self.estimator, cfg, true);
        let report = report_of(&g, cfg)?;
        Ok((outputs(&g, example.dims(), i_c)?, report))
    }

    /// Test-time pass without gradient bookkeeping.
    pub fn infer(&self, inputs: &[&Frame; 4]) -> Result<ForwardOutput> {
        let i_c = self.continuous(inputs)?;
        let (h, w) = i_c.dims();
        let example = TrainExample::new(
            [
                inputs[0].clone(),
                inputs[1].clone(),
                inputs[2].clone(),
                inputs[3].clone(),
            ],
            i_c.clone(),
            Mask::zeros(h, w),
        )?;
        let g = build_graph(&example, &i_c, &self.estimator, &LossConfig::default(), false);
        outputs(&g, (h, w), i_c)
    }

    /// Loss report and the gradient with respect to the flat parameters.
    pub fn loss_and_grad(&self, example: &TrainExample, cfg: &LossConfig) -> Result<(LossReport, Vec<f64>)> {
        let i_c = self.continuous(&example.input_refs())?;
        let mut g = build_graph(example, &i_c, &self.estimator, cfg, true);
        let report = report_of(&g, cfg)?;
        g.tape.backward(g.total);
        let mut grad = Vec::with_capacity(param_count());
        for &p in &g.params {
            grad.extend_from_slice(g.tape.grad(p).expect("parameters require grad"));
        }
        Ok((report, grad))
    }

    pub fn loss(&self, example: &TrainExample, cfg: &LossConfig) -> Result<LossReport> {
        let i_c = self.continuous(&example.input_refs())?;
        let g = build_graph(example, &i_c, &self.estimator, cfg, false);
        report_of(&g, cfg)
    }
}

fn report_of(g: &Graph, cfg: &LossConfig) -> Result<LossReport> {
    let l1 = g.tape.value(g.l1).item();
    let l_d = g.tape.value(g.l_d).item();
    let report = total_loss(l1, l_d, cfg)?;
    debug_assert_eq!(report.total, g.tape.value(g.total).item());
    Ok(report)
}

/// Compares reverse-mode gradients against central differences on
/// `n_params` distinct, randomly chosen parameters. Returns the largest
/// relative error.
pub fn gradient_check(
    model: &Model,
    example: &TrainExample,
    cfg: &LossConfig,
    n_params: usize,
    seed: u64,
) -> Result<f64> {
    const STEP: f64 = 1e-5;
    let (report, grad) = model.loss_and_grad(example, cfg)?;
    if !report.total.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample_indices(&mut rng, param_count(), n_params.min(param_count()));
    let mut probe = Model {
        estimator: model.estimator.clone(),
        interpolator: interpolator(model.interpolator_name())?,
    };
    let mut worst: f64 = 0.0;
    for i in picks.iter() {
        let orig = probe.estimator.params[i];
        probe.estimator.params[i] = orig + STEP;
        let up = probe.loss(example, cfg)?.total;
        probe.estimator.params[i] = orig - STEP;
        let down = probe.loss(example, cfg)?.total;
        probe.estimator.params[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss while probing parameter {i}")));
        }
        let fd = (up - down) / (2.0 * STEP);
        worst = worst.max(relative_error(grad[i], fd));
    }
    Ok(worst)
}

/// `|a - b| / max(|a|, |b|)`, with magnitudes below `1e-8` treated as `1e-8`
/// so that two vanishing gradients compare as equal.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossConfig,
    /// Square crop side used for each training example; `None` trains on
    /// full frames.
    pub crop: Option<usize>,
    pub interpolator: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            steps: 500,
            batch_size: 4,
            seed: 0,
            loss: LossConfig::default(),
            crop: None,
            interpolator: DEFAULT_INTERPOLATOR.into(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.steps < 1 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if self.crop.is_some_and(|c| c < 3) {
            return Err(Error::InvalidArgument("crop must be at least 3".into()));
        }
        self.loss.validate()?;
        interpolator(&self.interpolator).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    #[serde(flatten)]
    pub loss: LossReport,
}

/// Plain SGD over a fixed dataset. Each step's batch (and crop offsets) is a
/// function of `(seed, step)` only, so a run can be split and resumed
/// without changing the result.
pub struct Trainer<'a> {
    dataset: &'a [TrainExample],
    cfg: TrainConfig,
    model: Model,
    step: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a [TrainExample], cfg: TrainConfig) -> Result<Self> {
        let init = DMapEstimator::init(cfg.seed);
        Trainer::resume(dataset, cfg, init, 0)
    }

    pub fn resume(dataset: &'a [TrainExample], cfg: TrainConfig, estimator: DMapEstimator, step: u64) -> Result<Self> {
        cfg.validate()?;
        let first = dataset
            .first()
            .ok_or_else(|| Error::InvalidArgument("training dataset is empty".into()))?;
        if let Some(bad) = dataset.iter().find(|e| e.dims() != first.dims()) {
            return Err(Error::dims(first.dims(), bad.dims()));
        }
        if let Some(c) = cfg.crop {
            let (h, w) = first.dims();
            if c > h || c > w {
                return Err(Error::InvalidArgument(format!("crop {c} exceeds frame {h}x{w}")));
            }
        }
        let model = Model::with_interpolator(estimator, &cfg.interpolator)?;
        Ok(Trainer {
            dataset,
            cfg,
            model,
            step,
        })
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    fn batch(&self, step: u64) -> Result<Vec<TrainExample>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(step + 1);
        (0..self.cfg.batch_size)
            .map(|_| {
                let ex = &self.dataset[rng.gen_range(0..self.dataset.len())];
                match self.cfg.crop {
                    None => Ok(ex.clone()),
                    Some(c) => {
                        let (h, w) = ex.dims();
                        let top = rng.gen_range(0..=h - c);
                        let left = rng.gen_range(0..=w - c);
                        ex.crop(top, left, c, c)
                    }
                }
            })
            .collect()
    }

    /// Runs one SGD step and returns the mean loss of the batch before the
    /// update.
    pub fn step(&mut self) -> Result<StepLog> {
        let batch = self.batch(self.step)?;
        let model = &self.model;
        let cfg = &self.cfg.loss;
        // per-example work may run in parallel; the reduction is sequential
        let results: Vec<Result<(LossReport, Vec<f64>)>> =
            batch.par_iter().map(|ex| model.loss_and_grad(ex, cfg)).collect();
        let n = batch.len() as f64;
        let mut grad = vec![0.0; param_count()];
        let (mut l1, mut l_d) = (0.0, 0.0);
        for r in results {
            let (rep, g) = r.map_err(|e| Error::Diverged {
                step: self.step,
                reason: e.to_string(),
            })?;
            l1 += rep.l1;
            l_d += rep.l_d;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let report = total_loss(l1 / n, l_d / n, cfg).map_err(|e| Error::Diverged {
            step: self.step,
            reason: e.to_string(),
        })?;
        let lr = self.cfg.learning_rate / n;
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                step: self.step,
                reason: format!("non-finite gradient at parameter {i}"),
            });
        }
        for (p, g) in self.model.estimator.params.iter_mut().zip(&grad) {
            *p -= lr * g;
        }
        let log = StepLog {
            step: self.step + 1,
            loss: report,
        };
        self.step += 1;
        Ok(log)
    }

    /// Steps until `cfg.steps` total steps have been taken.
    pub fn run(&mut self, mut on_step: impl FnMut(&StepLog)) -> Result<Vec<StepLog>> {
        let mut curve = Vec::new();
        while self.step < self.cfg.steps {
            let log = self.step()?;
            on_step(&log);
            curve.push(log);
        }
        Ok(curve)
    }
}

/// Trains from a fresh initialization; returns the model and the loss curve.
pub fn train(dataset: &[TrainExample], cfg: &TrainConfig) -> Result<(Model, Vec<StepLog>)> {
    let mut trainer = Trainer::new(dataset, cfg.clone())?;
    let curve = trainer.run(|_| {})?;
    Ok((trainer.into_model(), curve))
}

/// JSON sidecar describing a flat little-endian checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub param_count: usize,
    pub shapes: Vec<Vec<usize>>,
    pub seed: u64,
    pub step: u64,
    pub interpolator: String,
}

pub fn save_checkpoint(model: &Model, seed: u64, step: u64, bin_path: &Path, meta_path: &Path) -> Result<()> {
    io::write_atomic(bin_path, &model.estimator.to_le_bytes())?;
    let meta = CheckpointMeta {
        format: "f64-le".into(),
        param_count: param_count(),
        shapes: DMapEstimator::layout().into_iter().map(|(_, s)| s).collect(),
        seed,
        step,
        interpolator: model.interpolator_name().into(),
    };
    let mut json = serde_json::to_vec_pretty(&meta)?;
    json.push(b'\n');
    io::write_atomic(meta_path, &json)
}

pub fn load_checkpoint(bin_path: &Path, meta_path: &Path) -> Result<(Model, CheckpointMeta)> {
    let read = |p: &Path| {
        std::fs::read(p).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(p.to_owned()),
            _ => Error::Io(e),
        })
    };
    let meta: CheckpointMeta = serde_json::from_slice(&read(meta_path)?)?;
    if meta.format != "f64-le" || meta.param_count != param_count() {
        return Err(Error::InvalidArgument(format!(
            "incompatible checkpoint: format {} with {} parameters",
            meta.format, meta.param_count
        )));
    }
    let est = DMapEstimator::from_le_bytes(&read(bin_path)?)?;
    Ok((Model::with_interpolator(est, &meta.interpolator)?, meta))
}
