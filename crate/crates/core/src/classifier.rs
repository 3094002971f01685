//! The attacked classifier: architecture description, weights, prediction,
//! input gradients, SGD training and the binary checkpoint format.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{JndError, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::{self, conv_out_extent, Tensor};

/// One layer of a [`ModelSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    /// Fixed `scale * x + shift` applied to raw pixels, so that attack
    /// hyperparameters always refer to `[0, 255]` pixel units.
    Normalize { scale: f64, shift: f64 },
    Conv { filters: usize, kernel: usize, stride: usize, padding: usize, bias: bool },
    Relu,
    MaxPool2,
    Flatten,
    Dense { units: usize, bias: bool },
    Softmax,
}

impl Layer {
    pub fn is_parametric(&self) -> bool {
        matches!(self, Layer::Conv { .. } | Layer::Dense { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// `[height, width, channels]`
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub layers: Vec<Layer>,
}

/// Weight and bias shapes of one parametric layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamShape {
    pub weight: Vec<usize>,
    pub bias: Option<Vec<usize>>,
    pub fan_in: usize,
    pub fan_out: usize,
}

/// Gain of the desk model's input layer. The attacks' pixel-unit step sizes
/// only move a model whose logits respond strongly to single pixels; at a
/// `[-1, 1]` input scale the preset JND step cannot cross the decision margin.
pub const DESK_INPUT_GAIN: f64 = 16.0;

impl ModelSpec {
    /// conv(8, 3x3) → relu → pool → conv(16, 3x3) → relu → pool → flatten → dense → softmax,
    /// behind the fixed input map `DESK_INPUT_GAIN · (x − 128)`.
    pub fn desk(input_shape: [usize; 3], num_classes: usize) -> Self {
        Self {
            input_shape,
            num_classes,
            layers: vec![
                Layer::Normalize { scale: DESK_INPUT_GAIN, shift: -128.0 * DESK_INPUT_GAIN },
                Layer::Conv { filters: 8, kernel: 3, stride: 1, padding: 0, bias: true },
                Layer::Relu,
                Layer::MaxPool2,
                Layer::Conv { filters: 16, kernel: 3, stride: 1, padding: 0, bias: true },
                Layer::Relu,
                Layer::MaxPool2,
                Layer::Flatten,
                Layer::Dense { units: num_classes, bias: true },
                Layer::Softmax,
            ],
        }
    }

    /// Checks layer compatibility and returns the parameter shapes in layer order.
    pub fn validate(&self) -> Result<Vec<ParamShape>> {
        let bad = |msg: String| Err(JndError::Config(msg));
        if self.num_classes == 0 {
            return bad("num_classes must be positive".into());
        }
        if self.input_shape.contains(&0) {
            return bad(format!("input shape {:?} has a zero extent", self.input_shape));
        }
        let mut shape: Vec<usize> = self.input_shape.to_vec();
        let mut params = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                Layer::Normalize { scale, shift } => {
                    if !scale.is_finite() || !shift.is_finite() || scale == 0.0 {
                        return bad(format!("layer {i}: normalization needs finite nonzero scale"));
                    }
                }
                Layer::Conv { filters, kernel, stride, padding, bias } => {
                    let [h, w, c] = shape[..] else {
                        return bad(format!("layer {i}: conv needs a spatial input, got {shape:?}"));
                    };
                    if filters == 0 {
                        return bad(format!("layer {i}: conv needs at least one filter"));
                    }
                    let (Some(oh), Some(ow)) =
                        (conv_out_extent(h, kernel, stride, padding), conv_out_extent(w, kernel, stride, padding))
                    else {
                        return bad(format!("layer {i}: {kernel}x{kernel} kernel does not fit {h}x{w} input"));
                    };
                    params.push(ParamShape {
                        weight: vec![filters, kernel, kernel, c],
                        bias: bias.then(|| vec![filters]),
                        fan_in: kernel * kernel * c,
                        fan_out: kernel * kernel * filters,
                    });
                    shape = vec![oh, ow, filters];
                }
                Layer::Relu => {}
                Layer::MaxPool2 => {
                    let [h, w, c] = shape[..] else {
                        return bad(format!("layer {i}: pooling needs a spatial input, got {shape:?}"));
                    };
                    if h < 2 || w < 2 {
                        return bad(format!("layer {i}: cannot pool a {h}x{w} map"));
                    }
                    shape = vec![h / 2, w / 2, c];
                }
                Layer::Flatten => shape = vec![shape.iter().product()],
                Layer::Dense { units, bias } => {
                    let [n] = shape[..] else {
                        return bad(format!("layer {i}: dense needs a flat input, got {shape:?}"));
                    };
                    if units == 0 {
                        return bad(format!("layer {i}: dense needs at least one unit"));
                    }
                    params.push(ParamShape {
                        weight: vec![n, units],
                        bias: bias.then(|| vec![units]),
                        fan_in: n,
                        fan_out: units,
                    });
                    shape = vec![units];
                }
                Layer::Softmax => {
                    if i + 1 != self.layers.len() {
                        return bad(format!("layer {i}: softmax must be the last layer"));
                    }
                }
            }
        }
        if shape != [self.num_classes] {
            return bad(format!("final output shape {shape:?} does not match {} classes", self.num_classes));
        }
        Ok(params)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

/// Parameters of every parametric layer, in layer order.
pub type Parameters<T> = Vec<LayerParams<T>>;

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T> {
    pub label: usize,
    /// Softmax probability of `label`.
    pub confidence: T,
    pub distribution: Vec<T>,
}

impl<T: Scalar> Prediction<T> {
    pub fn from_logits(logits: &Tensor<T>) -> Self {
        let p = tensor::softmax(logits);
        let label = p.argmax();
        Prediction { label, confidence: p.data()[label], distribution: p.into_data() }
    }

    pub fn probability(&self, class: usize) -> T {
        self.distribution[class]
    }
}

/// Loss whose input gradient is requested.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
}

impl FromStr for LossKind {
    type Err = JndError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross_entropy" | "cross-entropy" | "ce" => Ok(LossKind::CrossEntropy),
            other => Err(JndError::Config(format!("unknown loss kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossSpec {
    pub target_label: usize,
    pub kind: LossKind,
}

impl LossSpec {
    pub fn cross_entropy(target_label: usize) -> Self {
        Self { target_label, kind: LossKind::CrossEntropy }
    }
}

/// One forward/backward evaluation at an image.
#[derive(Clone, Debug)]
pub struct Evaluation<T> {
    pub prediction: Prediction<T>,
    pub logits: Tensor<T>,
    pub loss: T,
    pub input_gradient: Tensor<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl TrainSchedule {
    /// Plain SGD settings that train the desk model in five epochs.
    pub fn desk(seed: u64) -> Self {
        Self { epochs: 5, batch_size: 8, learning_rate: 1e-5, seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Training-set accuracy after each epoch.
    pub epoch_accuracy: Vec<f64>,
    pub epoch_loss: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    spec: ModelSpec,
    params: Parameters<T>,
}

struct Forward<T> {
    graph: Graph<T>,
    input: Var,
    logits: Var,
    params: Vec<(Var, Option<Var>)>,
}

impl<T: Scalar> Model<T> {
    pub fn new(spec: ModelSpec, params: Parameters<T>) -> Result<Self> {
        let shapes = spec.validate()?;
        if shapes.len() != params.len() {
            return Err(JndError::Config(format!(
                "spec has {} parametric layers, got {} parameter blocks",
                shapes.len(),
                params.len()
            )));
        }
        for (i, (s, p)) in shapes.iter().zip(&params).enumerate() {
            if p.weight.shape() != s.weight.as_slice() || p.bias.as_ref().map(|b| b.shape().to_vec()) != s.bias {
                return Err(JndError::Dimension(format!("parameter block {i} does not match its layer")));
            }
            if !p.weight.all_finite() || !p.bias.as_ref().is_none_or(|b| b.all_finite()) {
                return Err(JndError::Numerical(format!("parameter block {i} has non-finite values")));
            }
        }
        Ok(Self { spec, params })
    }

    /// Every weight and bias zero.
    pub fn zeroed(spec: ModelSpec) -> Result<Self> {
        let params = spec
            .validate()?
            .into_iter()
            .map(|s| LayerParams { weight: Tensor::zeros(&s.weight), bias: s.bias.map(|b| Tensor::zeros(&b)) })
            .collect();
        Self::new(spec, params)
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn initialize(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = spec
            .validate()?
            .into_iter()
            .map(|s| {
                let limit = (6.0 / (s.fan_in + s.fan_out) as f64).sqrt();
                let n = s.weight.iter().product();
                let w = (0..n).map(|_| T::lit(rng.gen_range(-limit..limit))).collect();
                LayerParams {
                    weight: Tensor::from_vec(&s.weight, w).expect("shape from spec"),
                    bias: s.bias.map(|b| Tensor::zeros(&b)),
                }
            })
            .collect();
        Self::new(spec, params)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &Parameters<T> {
        &self.params
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.spec.input_shape
    }

    fn check_image(&self, image: &Tensor<T>) -> Result<()> {
        if image.shape() != self.spec.input_shape {
            return Err(JndError::Dimension(format!(
                "image shape {:?} does not match model input {:?}",
                image.shape(),
                self.spec.input_shape
            )));
        }
        Ok(())
    }

    fn forward(&self, image: &Tensor<T>, input_grad: bool, param_grad: bool) -> Result<Forward<T>> {
        self.check_image(image)?;
        let mut g = Graph::new();
        let input = if input_grad { g.leaf(image.clone()) } else { g.constant(image.clone()) };
        let mut cur = input;
        let mut pvars = Vec::with_capacity(self.params.len());
        let mut next_param = self.params.iter();
        for layer in &self.spec.layers {
            cur = match *layer {
                Layer::Normalize { scale, shift } => g.affine(cur, scale, shift),
                Layer::Conv { stride, padding, .. } => {
                    let p = next_param.next().expect("validated");
                    let (w, b) = push_params(&mut g, p, param_grad);
                    pvars.push((w, b));
                    g.conv2d(cur, w, b, stride, padding)?
                }
                Layer::Relu => g.relu(cur),
                Layer::MaxPool2 => g.max_pool2(cur)?,
                Layer::Flatten => {
                    let n = g.value(cur).len();
                    g.reshape(cur, &[n])?
                }
                Layer::Dense { .. } => {
                    let p = next_param.next().expect("validated");
                    let (w, b) = push_params(&mut g, p, param_grad);
                    pvars.push((w, b));
                    g.dense(cur, w, b)?
                }
                // applied by consumers of the logits
                Layer::Softmax => cur,
            };
        }
        Ok(Forward { graph: g, input, logits: cur, params: pvars })
    }

    pub fn logits(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let f = self.forward(image, false, false)?;
        Ok(f.graph.value(f.logits).clone())
    }

    pub fn predict(&self, image: &Tensor<T>) -> Result<Prediction<T>> {
        Ok(Prediction::from_logits(&self.logits(image)?))
    }

    /// Prediction, loss and pixel gradient from a single forward/backward pass.
    pub fn evaluate(&self, image: &Tensor<T>, loss: LossSpec) -> Result<Evaluation<T>> {
        if loss.target_label >= self.spec.num_classes {
            return Err(JndError::Config(format!(
                "target label {} out of range for {} classes",
                loss.target_label, self.spec.num_classes
            )));
        }
        let mut f = self.forward(image, true, false)?;
        let LossKind::CrossEntropy = loss.kind;
        let ce = f.graph.cross_entropy(f.logits, loss.target_label)?;
        let mut grads = f.graph.backward(ce, &Tensor::scalar(T::one()))?;
        let logits = f.graph.value(f.logits).clone();
        Ok(Evaluation {
            prediction: Prediction::from_logits(&logits),
            loss: f.graph.value(ce).data()[0],
            input_gradient: grads.take(f.input).unwrap_or_else(|| Tensor::zeros(image.shape())),
            logits,
        })
    }

    /// Gradient of the loss with respect to every pixel.
    pub fn input_gradient(&self, image: &Tensor<T>, loss: LossSpec) -> Result<Tensor<T>> {
        Ok(self.evaluate(image, loss)?.input_gradient)
    }

    /// Logits and the pixel gradient of every logit.
    pub fn logit_jacobian(&self, image: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let f = self.forward(image, true, false)?;
        let logits = f.graph.value(f.logits).clone();
        let mut rows = Vec::with_capacity(logits.len());
        for c in 0..logits.len() {
            let mut seed = Tensor::zeros(logits.shape());
            seed.data_mut()[c] = T::one();
            let mut grads = f.graph.backward(f.logits, &seed)?;
            rows.push(grads.take(f.input).unwrap_or_else(|| Tensor::zeros(image.shape())));
        }
        Ok((logits, rows))
    }

    /// Fraction of `data` classified correctly.
    pub fn accuracy(&self, data: &Dataset<T>) -> Result<f64> {
        if data.is_empty() {
            return Err(JndError::Input("accuracy of an empty dataset".into()));
        }
        let mut correct = 0;
        for (img, &label) in data.images.iter().zip(&data.labels) {
            if self.predict(img)?.label == label {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }

    /// Mini-batch SGD on cross-entropy. Deterministic given `schedule.seed`.
    pub fn train(&mut self, data: &Dataset<T>, schedule: &TrainSchedule) -> Result<TrainLog> {
        if data.is_empty() {
            return Err(JndError::Input("cannot train on an empty dataset".into()));
        }
        if schedule.batch_size == 0 {
            return Err(JndError::Config("batch size must be positive".into()));
        }
        if !(schedule.learning_rate.is_finite() && schedule.learning_rate > 0.0) {
            return Err(JndError::Config("learning rate must be positive".into()));
        }
        if let Some(bad) = data.labels.iter().find(|&&l| l >= self.spec.num_classes) {
            return Err(JndError::Input(format!("label {bad} out of range for {} classes", self.spec.num_classes)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut log = TrainLog { epoch_accuracy: Vec::new(), epoch_loss: Vec::new() };
        for _ in 0..schedule.epochs {
            order.shuffle(&mut rng);
            let mut total_loss = 0.0;
            for batch in order.chunks(schedule.batch_size) {
                let mut acc: Vec<(Tensor<T>, Option<Tensor<T>>)> = self
                    .params
                    .iter()
                    .map(|p| (Tensor::zeros(p.weight.shape()), p.bias.as_ref().map(|b| Tensor::zeros(b.shape()))))
                    .collect();
                for &i in batch {
                    let mut f = self.forward(&data.images[i], false, true)?;
                    let ce = f.graph.cross_entropy(f.logits, data.labels[i])?;
                    total_loss += f.graph.value(ce).data()[0].as_f64();
                    let grads = f.graph.backward(ce, &Tensor::scalar(T::one()))?;
                    for ((gw, gb), (wv, bv)) in acc.iter_mut().zip(&f.params) {
                        if let Some(g) = grads.get(*wv) {
                            gw.axpy(T::one(), g)?;
                        }
                        if let (Some(gb), Some(g)) = (gb.as_mut(), bv.and_then(|b| grads.get(b))) {
                            gb.axpy(T::one(), g)?;
                        }
                    }
                }
                let step = -T::lit(schedule.learning_rate) / T::from_count(batch.len());
                for (p, (gw, gb)) in self.params.iter_mut().zip(&acc) {
                    p.weight.axpy(step, gw)?;
                    if let (Some(b), Some(gb)) = (p.bias.as_mut(), gb.as_ref()) {
                        b.axpy(step, gb)?;
                    }
                }
            }
            if !self.params.iter().all(|p| p.weight.all_finite()) {
                return Err(JndError::Numerical("training diverged: non-finite weights".into()));
            }
            log.epoch_loss.push(total_loss / data.len() as f64);
            log.epoch_accuracy.push(self.accuracy(data)?);
        }
        Ok(log)
    }
}

fn push_params<T: Scalar>(g: &mut Graph<T>, p: &LayerParams<T>, differentiable: bool) -> (Var, Option<Var>) {
    let mut put = |t: &Tensor<T>| if differentiable { g.leaf(t.clone()) } else { g.constant(t.clone()) };
    let w = put(&p.weight);
    let b = p.bias.as_ref().map(put);
    (w, b)
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"JNDM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializes `model` as `JNDM`, u32 version, u32-prefixed JSON spec, then raw f64 LE blocks.
pub fn checkpoint_bytes<T: Scalar>(model: &Model<T>) -> Result<Vec<u8>> {
    let spec = serde_json::to_vec(&model.spec)?;
    let mut out = Vec::with_capacity(12 + spec.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(&spec);
    for p in &model.params {
        for t in std::iter::once(&p.weight).chain(p.bias.as_ref()) {
            for &v in t.data() {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn model_from_checkpoint_bytes<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    let fmt = |m: &str| JndError::Format(m.to_string());
    if bytes.len() < 12 {
        return Err(fmt("checkpoint truncated before header end"));
    }
    if &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(fmt("bad checkpoint magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(JndError::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
    }
    let spec_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let spec_end = 12usize.checked_add(spec_len).filter(|&e| e <= bytes.len()).ok_or_else(|| fmt("checkpoint truncated inside spec"))?;
    let spec: ModelSpec = serde_json::from_slice(&bytes[12..spec_end])
        .map_err(|e| JndError::Format(format!("checkpoint spec is not valid JSON: {e}")))?;
    let shapes = spec.validate()?;
    let mut cursor = spec_end;
    let mut read_block = |shape: &[usize]| -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        let end = cursor + 8 * n;
        if end > bytes.len() {
            return Err(fmt("checkpoint truncated inside weights"));
        }
        let data = bytes[cursor..end]
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        cursor = end;
        Tensor::from_vec(shape, data)
    };
    let mut params = Vec::with_capacity(shapes.len());
    for s in &shapes {
        let weight = read_block(&s.weight)?;
        let bias = s.bias.as_deref().map(&mut read_block).transpose()?;
        params.push(LayerParams { weight, bias });
    }
    if cursor != bytes.len() {
        return Err(fmt("trailing bytes after checkpoint weights"));
    }
    Model::new(spec, params)
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = checkpoint_bytes(model)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    model_from_checkpoint_bytes(&fs::read(path)?)
}
