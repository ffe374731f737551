use geoframe_nn::{
    conv_lstm_cell, ConvLstmState, Element, LstmVars, ParamStore, Tape, Tensor, Var, LAYER_NORM_EPS,
};
use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::arch::{ArchitectureConfig, LayerOp};
use crate::{invalid, Result};

/// Standard deviation of the initial weights.
pub const INIT_STD: f64 = 0.01;
/// Initial conv-LSTM forget-gate bias.
pub const FORGET_BIAS: f64 = 1.0;

fn weight_name(layer: &str) -> String {
    format!("{layer}/w")
}

fn bias_name(layer: &str) -> String {
    format!("{layer}/b")
}

fn gain_name(layer: &str) -> String {
    format!("{layer}/ln_gain")
}

fn shift_name(layer: &str) -> String {
    format!("{layer}/ln_bias")
}

/// Parameter shapes in store order: for each layer with weights, kernel,
/// bias, then layer-norm gain and bias if normalized.
fn parameter_layout(arch: &ArchitectureConfig) -> Result<Vec<(String, Vec<usize>)>> {
    let inputs = arch.input_channels_per_layer()?;
    let mut out = Vec::new();
    for (layer, &cin) in arch.layers.iter().zip(&inputs) {
        let (kernel, wide_in, cout, c) = match layer.op {
            LayerOp::Conv {
                kernel, channels, ..
            } => (kernel, cin, channels, channels),
            LayerOp::ConvLstm { kernel, channels } => {
                (kernel, cin + channels, 4 * channels, channels)
            }
            _ => continue,
        };
        out.push((
            weight_name(&layer.name),
            vec![kernel, kernel, wide_in, cout],
        ));
        out.push((bias_name(&layer.name), vec![cout]));
        if layer.layer_norm {
            out.push((gain_name(&layer.name), vec![c]));
            out.push((shift_name(&layer.name), vec![c]));
        }
    }
    Ok(out)
}

/// Network weights together with the architecture they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub arch: ArchitectureConfig,
    pub store: ParamStore<T>,
}

impl<T: Element> ModelParams<T> {
    /// Checks that `store` holds exactly the parameters `arch` needs.
    pub fn from_store(arch: ArchitectureConfig, store: ParamStore<T>) -> Result<Self> {
        arch.validate()?;
        let layout = parameter_layout(&arch)?;
        if layout.len() != store.len() {
            return invalid(format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                store.len()
            ));
        }
        for (i, (name, shape)) in layout.iter().enumerate() {
            if store.name(i) != name || store.tensor(i).shape() != shape.as_slice() {
                return invalid(format!(
                    "parameter {i} is {} {:?}, expected {name} {shape:?}",
                    store.name(i),
                    store.tensor(i).shape()
                ));
            }
        }
        Ok(ModelParams { arch, store })
    }

    pub fn cast<U: Element>(&self) -> ModelParams<U> {
        ModelParams {
            arch: self.arch.clone(),
            store: self.store.cast(),
        }
    }
}

/// Weights `~ N(0, INIT_STD²)`, biases zero except the conv-LSTM forget-gate
/// slice (`FORGET_BIAS`), layer-norm gains one.
pub fn init_params<T: Element>(arch: &ArchitectureConfig, seed: u64) -> Result<ModelParams<T>> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape) in parameter_layout(arch)? {
        let tensor = if name.ends_with("/w") {
            Tensor::randn(&shape, INIT_STD, &mut rng)
        } else if name.ends_with("/ln_gain") {
            Tensor::full(&shape, T::one())
        } else {
            Tensor::zeros(&shape)
        };
        store.insert(name, tensor)?;
    }
    for layer in &arch.layers {
        if let LayerOp::ConvLstm { channels, .. } = layer.op {
            let b = store.get_mut(&bias_name(&layer.name)).expect("bias exists");
            let start = geoframe_nn::lstm::FORGET_GATE * channels;
            for v in &mut b.data_mut()[start..start + channels] {
                *v = T::from_f64(FORGET_BIAS);
            }
        }
    }
    ModelParams::from_store(arch.clone(), store)
}

/// Recurrent state of every conv-LSTM layer, in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceStates<T> {
    pub layers: Vec<ConvLstmState<T>>,
}

impl<T: Element> SequenceStates<T> {
    pub fn zeros(arch: &ArchitectureConfig, batch: usize) -> Result<Self> {
        let layers = arch
            .lstm_state_shapes()?
            .into_iter()
            .map(|[h, w, c]| ConvLstmState::zeros(batch, h, w, c))
            .collect();
        Ok(SequenceStates { layers })
    }

    pub fn record(&self, tape: &mut Tape<T>) -> Vec<LstmVars> {
        self.layers.iter().map(|s| s.record(tape)).collect()
    }

    pub fn read(vars: &[LstmVars], tape: &Tape<T>) -> Self {
        SequenceStates {
            layers: vars.iter().map(|v| v.read(tape)).collect(),
        }
    }
}

struct LayerVars {
    w: Var,
    b: Var,
    norm: Option<(Var, Var)>,
}

/// Parameters recorded as tape leaves, addressable per layer.
pub struct RecordedParams {
    /// One leaf per parameter tensor, in store order.
    pub vars: Vec<Var>,
    layers: Vec<Option<LayerVars>>,
}

impl RecordedParams {
    pub fn record<T: Element>(params: &ModelParams<T>, tape: &mut Tape<T>) -> Self {
        let vars = params.store.record(tape);
        Self::from_vars(params, vars).expect("one leaf per parameter")
    }

    /// Wraps leaves already on a tape, one per parameter tensor in store order.
    pub fn from_vars<T: Element>(params: &ModelParams<T>, vars: Vec<Var>) -> Result<Self> {
        if vars.len() != params.store.len() {
            return invalid(format!("{} leaves for {} parameter tensors", vars.len(), params.store.len()));
        }
        let lookup = |name: String| vars[params.store.index_of(&name).expect("validated layout")];
        let layers = params
            .arch
            .layers
            .iter()
            .map(|l| {
                l.has_params().then(|| LayerVars {
                    w: lookup(weight_name(&l.name)),
                    b: lookup(bias_name(&l.name)),
                    norm: l
                        .layer_norm
                        .then(|| (lookup(gain_name(&l.name)), lookup(shift_name(&l.name)))),
                })
            })
            .collect();
        Ok(RecordedParams { vars, layers })
    }
}

/// One timestep on a tape: `x` is `[n, h, w, 3]`, `states` one entry per
/// conv-LSTM layer. Returns the `[n, h, w, 1]` label map and new states.
pub fn forward_step_on_tape<T: Element>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    recorded: &RecordedParams,
    x: Var,
    states: &[LstmVars],
) -> Result<(Var, Vec<LstmVars>)> {
    let arch = &params.arch;
    let [_, h, w, c] = tape.value(x).dims4()?;
    if [h, w, c] != [arch.input_height, arch.input_width, arch.input_channels] {
        return invalid(format!(
            "input {h}×{w}×{c} does not match the network input {}×{}×{}",
            arch.input_height, arch.input_width, arch.input_channels
        ));
    }
    let lstm_count = arch
        .layers
        .iter()
        .filter(|l| matches!(l.op, LayerOp::ConvLstm { .. }))
        .count();
    if states.len() != lstm_count {
        return invalid(format!(
            "{} states for {lstm_count} conv-LSTM layers",
            states.len()
        ));
    }
    let mut act = x;
    let mut next_states = Vec::with_capacity(states.len());
    for (layer, vars) in arch.layers.iter().zip(&recorded.layers) {
        act = match layer.op {
            LayerOp::Conv { stride, .. } => {
                let v = vars.as_ref().expect("conv has params");
                tape.conv2d(act, v.w, v.b, stride)?
            }
            LayerOp::ConvLstm { .. } => {
                let v = vars.as_ref().expect("conv-LSTM has params");
                let next = conv_lstm_cell(tape, act, states[next_states.len()], v.w, v.b)?;
                next_states.push(next);
                next.h
            }
            LayerOp::DepthToSpace { block } => tape.depth_to_space(act, block)?,
            LayerOp::Sigmoid => tape.sigmoid(act),
        };
        if let Some((gain, shift)) = vars.as_ref().and_then(|v| v.norm) {
            act = tape.layer_norm(act, gain, shift, LAYER_NORM_EPS)?;
        }
    }
    Ok((act, next_states))
}

/// One timestep outside of training.
pub fn forward_step<T: Element>(
    params: &ModelParams<T>,
    frame: &Tensor<T>,
    states: &SequenceStates<T>,
) -> Result<(Tensor<T>, SequenceStates<T>)> {
    let mut tape = Tape::new();
    let recorded = RecordedParams::record(params, &mut tape);
    let x = tape.leaf(frame.clone());
    let state_vars = states.record(&mut tape);
    let (out, next) = forward_step_on_tape(&mut tape, params, &recorded, x, &state_vars)?;
    Ok((tape.value(out).clone(), SequenceStates::read(&next, &tape)))
}

/// Unrolls the network over `frames` from zero state. Prediction `i`
/// depends only on frames `0..=i`.
pub fn forward_sequence<T: Element>(
    params: &ModelParams<T>,
    frames: &[Tensor<T>],
) -> Result<Vec<Tensor<T>>> {
    let Some(first) = frames.first() else {
        return invalid("a sequence needs at least one frame");
    };
    let [batch, ..] = first.dims4()?;
    let states = SequenceStates::zeros(&params.arch, batch)?;
    let mut out = Vec::with_capacity(frames.len());
    let mut tape = Tape::new();
    let recorded = RecordedParams::record(params, &mut tape);
    let mut vars = states.record(&mut tape);
    for frame in frames {
        let x = tape.leaf(frame.clone());
        let (y, next) = forward_step_on_tape(&mut tape, params, &recorded, x, &vars)?;
        out.push(tape.value(y).clone());
        vars = next;
    }
    Ok(out)
}

/// `[1, h, w, 3]` tensor with channels scaled to `[0, 1]`.
pub fn image_to_tensor<T: Element>(image: &RgbImage) -> Tensor<T> {
    stack_images(&[image]).expect("a single image always stacks")
}

/// `[n, h, w, 3]` batch of equally sized images scaled to `[0, 1]`.
pub fn stack_images<T: Element>(images: &[&RgbImage]) -> Result<Tensor<T>> {
    let Some(first) = images.first() else {
        return invalid("cannot stack zero images");
    };
    let (w, h) = first.dimensions();
    let mut data = Vec::with_capacity(images.len() * (w * h * 3) as usize);
    for img in images {
        if img.dimensions() != (w, h) {
            return invalid("images in a batch must share dimensions");
        }
        data.extend(img.as_raw().iter().map(|&b| T::from_f64(b as f64 / 255.0)));
    }
    Tensor::from_vec(&[images.len(), h as usize, w as usize, 3], data).map_err(Into::into)
}
