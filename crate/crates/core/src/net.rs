//! The convolutional-recurrent network: 3×3 convolution, 2×2 max-pool, a dense
//! image layer, an Elman layer fed by the trigger vector and its own previous
//! activation, and two heads (softmax number word, logistic arm posture).
//!
//! Forward and backward passes are written out by hand; `sequence_backward`
//! unrolls all 15 steps through the context copies.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::scene::{GridGeometry, Image, PostureId, PostureTable, SpriteBank, JOINTS};

/// Steps in every trial.
pub const STEPS: usize = 15;
/// Number-word classes 0..=10.
pub const NUMBER_CLASSES: usize = 11;
/// Gesture trigger and number trigger.
pub const TRIGGER_UNITS: usize = 2;
/// Resting value of the context units at sequence start (logistic(0)).
pub const INITIAL_CONTEXT: f64 = 0.5;

pub const FILTERS: usize = 7;
pub const KERNEL: usize = 3;
pub const HIDDEN3: usize = 130;
pub const HIDDEN4: usize = 135;
const POOL: usize = 2;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("non-finite gradient in {block} (exploding activations)")]
    NonFinite { block: Block },
    #[error("parameter shape mismatch: {0}")]
    Shape(String),
}

/// Nonlinearity of the convolutional and hidden-3 layers. The recurrent
/// layer and the gesture head are always logistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Activation {
    #[default]
    Sigmoid,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn slope(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            _ => Err(format!("unknown activation `{s}` (expected sigmoid or relu)")),
        }
    }
}

/// Layer sizes. Only the image size varies; the rest are fixed by design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NetShape {
    pub image_height: usize,
    pub image_width: usize,
    pub filters: usize,
    pub kernel: usize,
    pub hidden3: usize,
    pub hidden4: usize,
    pub visual_activation: Activation,
}

impl NetShape {
    pub fn for_image(image_height: usize, image_width: usize) -> Self {
        NetShape {
            image_height,
            image_width,
            filters: FILTERS,
            kernel: KERNEL,
            hidden3: HIDDEN3,
            hidden4: HIDDEN4,
            visual_activation: Activation::Sigmoid,
        }
    }

    pub fn with_visual_activation(mut self, activation: Activation) -> Self {
        self.visual_activation = activation;
        self
    }

    pub fn for_geometry(g: &GridGeometry) -> Self {
        Self::for_image(g.image_height, g.image_width)
    }

    pub fn conv_height(&self) -> usize {
        self.image_height - self.kernel + 1
    }

    pub fn conv_width(&self) -> usize {
        self.image_width - self.kernel + 1
    }

    pub fn pool_height(&self) -> usize {
        self.conv_height() / POOL
    }

    pub fn pool_width(&self) -> usize {
        self.conv_width() / POOL
    }

    /// Flattened pooled feature count feeding the first dense layer.
    pub fn pool_size(&self) -> usize {
        self.filters * self.pool_height() * self.pool_width()
    }

    /// Input width of the recurrent layer: image features, triggers, context.
    pub fn recurrent_input(&self) -> usize {
        self.hidden3 + TRIGGER_UNITS + self.hidden4
    }

    /// `(rows, cols)` of each parameter block; weights are stored output-major.
    pub fn block_shape(&self, block: Block) -> (usize, usize) {
        match block {
            Block::ConvWeight => (self.filters, self.kernel * self.kernel),
            Block::ConvBias => (self.filters, 1),
            Block::Dense3Weight => (self.hidden3, self.pool_size()),
            Block::Dense3Bias => (self.hidden3, 1),
            Block::Dense4Weight => (self.hidden4, self.recurrent_input()),
            Block::Dense4Bias => (self.hidden4, 1),
            Block::NumberWeight => (NUMBER_CLASSES, self.hidden4),
            Block::NumberBias => (NUMBER_CLASSES, 1),
            Block::GestureWeight => (JOINTS, self.hidden4),
            Block::GestureBias => (JOINTS, 1),
        }
    }

    pub fn block_len(&self, block: Block) -> usize {
        let (r, c) = self.block_shape(block);
        r * c
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.image_height < self.kernel + 1 || self.image_width < self.kernel + 1 {
            return Err(NetError::Shape(format!(
                "image {}x{} too small for kernel {} and 2x2 pooling",
                self.image_height, self.image_width, self.kernel
            )));
        }
        Ok(())
    }
}

/// Trainable parameter groups, in checkpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Block {
    ConvWeight,
    ConvBias,
    Dense3Weight,
    Dense3Bias,
    Dense4Weight,
    Dense4Bias,
    NumberWeight,
    NumberBias,
    GestureWeight,
    GestureBias,
}

impl Block {
    pub const ALL: [Block; 10] = [
        Block::ConvWeight,
        Block::ConvBias,
        Block::Dense3Weight,
        Block::Dense3Bias,
        Block::Dense4Weight,
        Block::Dense4Bias,
        Block::NumberWeight,
        Block::NumberBias,
        Block::GestureWeight,
        Block::GestureBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::ConvWeight => "conv.weight",
            Block::ConvBias => "conv.bias",
            Block::Dense3Weight => "hidden3.weight",
            Block::Dense3Bias => "hidden3.bias",
            Block::Dense4Weight => "hidden4.weight",
            Block::Dense4Bias => "hidden4.bias",
            Block::NumberWeight => "number.weight",
            Block::NumberBias => "number.bias",
            Block::GestureWeight => "gesture.weight",
            Block::GestureBias => "gesture.bias",
        }
    }

    pub fn from_name(name: &str) -> Option<Block> {
        Block::ALL.into_iter().find(|b| b.name() == name)
    }

    pub fn is_bias(self) -> bool {
        matches!(
            self,
            Block::ConvBias
                | Block::Dense3Bias
                | Block::Dense4Bias
                | Block::NumberBias
                | Block::GestureBias
        )
    }

    fn bit(self) -> u16 {
        1 << (self as u16)
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which parameter blocks an update may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrainMask(u16);

impl TrainMask {
    pub const ALL: TrainMask = TrainMask(0x3ff);
    pub const NONE: TrainMask = TrainMask(0);

    /// Everything except the number head (gesture pre-training).
    pub fn without_number_head() -> Self {
        TrainMask::ALL
            .without(Block::NumberWeight)
            .without(Block::NumberBias)
    }

    pub fn without(self, block: Block) -> Self {
        TrainMask(self.0 & !block.bit())
    }

    pub fn with(self, block: Block) -> Self {
        TrainMask(self.0 | block.bit())
    }

    pub fn contains(self, block: Block) -> bool {
        self.0 & block.bit() != 0
    }
}

impl Default for TrainMask {
    fn default() -> Self {
        TrainMask::ALL
    }
}

/// All trainable weights. Also used as the gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    shape: NetShape,
    blocks: [Vec<f64>; 10],
}

impl NetworkParams {
    pub fn zeros(shape: NetShape) -> Self {
        NetworkParams {
            shape,
            blocks: Block::ALL.map(|b| vec![0.0; shape.block_len(b)]),
        }
    }

    /// Weights uniform in [-0.1, 0.1], biases zero.
    pub fn init<R: Rng + ?Sized>(shape: NetShape, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        for b in Block::ALL {
            if !b.is_bias() {
                for w in p.block_mut(b) {
                    *w = rng.gen_range(-0.1..=0.1);
                }
            }
        }
        p
    }

    pub fn from_blocks(shape: NetShape, blocks: [Vec<f64>; 10]) -> Result<Self, NetError> {
        for b in Block::ALL {
            let want = shape.block_len(b);
            let got = blocks[b as usize].len();
            if want != got {
                return Err(NetError::Shape(format!("{b}: expected {want} values, got {got}")));
            }
        }
        Ok(NetworkParams { shape, blocks })
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn block(&self, b: Block) -> &[f64] {
        &self.blocks[b as usize]
    }

    pub fn block_mut(&mut self, b: Block) -> &mut [f64] {
        &mut self.blocks[b as usize]
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|v| v.is_finite())
    }

    pub fn fill_zero(&mut self) {
        for b in &mut self.blocks {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// `self += other`, block by block in fixed order.
    pub fn add_assign(&mut self, other: &NetworkParams) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Gradient-descent step `self -= grad` on the masked blocks only.
    /// Rounds every value to the nearest `f32`, the precision checkpoints keep.
    pub fn round_to_f32(&mut self) {
        for b in self.blocks.iter_mut() {
            b.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    pub fn apply_gradient(&mut self, grad: &NetworkParams, mask: TrainMask) -> Result<(), NetError> {
        for b in Block::ALL {
            if mask.contains(b) && grad.block(b).iter().any(|g| !g.is_finite()) {
                return Err(NetError::NonFinite { block: b });
            }
        }
        for b in Block::ALL {
            if mask.contains(b) {
                for (w, g) in self.blocks[b as usize].iter_mut().zip(grad.block(b)) {
                    *w -= g;
                }
            }
        }
        Ok(())
    }
}

pub fn init_params<R: Rng + ?Sized>(shape: NetShape, rng: &mut R) -> NetworkParams {
    NetworkParams::init(shape, rng)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Copy of the previous recurrent activation.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub context: Vec<f64>,
}

impl RecurrentState {
    pub fn initial(shape: &NetShape) -> Self {
        RecurrentState {
            context: vec![INITIAL_CONTEXT; shape.hidden4],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInput {
    pub image: Image,
    /// `[gesture trigger, number trigger]`, each 0 or 1.
    pub trigger: [f64; TRIGGER_UNITS],
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Softmax over number words 0..=10.
    pub number: [f64; NUMBER_CLASSES],
    pub gesture: [f64; JOINTS],
}

impl StepOutput {
    pub fn number_word(&self) -> usize {
        argmax(&self.number)
    }
}

/// First index of the maximum (ties go to the lower class).
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct StepActivations {
    pub image: Image,
    /// Convolution output after the logistic, `filters × conv_h × conv_w`.
    pub conv: Vec<f64>,
    /// Flat index into `conv` of each pooled maximum.
    pub pool_argmax: Vec<u32>,
    pub pool: Vec<f64>,
    pub hidden3: Vec<f64>,
    /// `[hidden3, trigger, context]`
    pub recurrent_input: Vec<f64>,
    pub hidden4: Vec<f64>,
    pub output: StepOutput,
}

/// Per-step activations of a full sequence.
#[derive(Debug, Clone)]
pub struct TrajectoryCache {
    pub steps: Vec<StepActivations>,
}

impl TrajectoryCache {
    pub fn outputs(&self) -> Vec<StepOutput> {
        self.steps.iter().map(|s| s.output.clone()).collect()
    }
}

fn dense_forward(weights: &[f64], bias: &[f64], input: &[f64], out: &mut [f64]) {
    let n_in = input.len();
    for (j, o) in out.iter_mut().enumerate() {
        let row = &weights[j * n_in..(j + 1) * n_in];
        *o = bias[j] + dot(row, input);
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the compiler vectorize without reassociating
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let k = i * 4;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in chunks * 4..a.len() {
        s += a[k] * b[k];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// One time step. Returns the new state (context = this step's hidden-4 activation).
pub fn forward_step(
    params: &NetworkParams,
    input: &StepInput,
    state: &RecurrentState,
) -> (StepOutput, RecurrentState, StepActivations) {
    let s = params.shape;
    assert_eq!(
        (input.image.width(), input.image.height()),
        (s.image_width, s.image_height),
        "image does not match network input size"
    );
    assert_eq!(state.context.len(), s.hidden4, "context size mismatch");

    let (ch, cw) = (s.conv_height(), s.conv_width());
    let (ph, pw) = (s.pool_height(), s.pool_width());
    let k = s.kernel;
    let img = input.image.pixels();
    let iw = s.image_width;
    let conv_w = params.block(Block::ConvWeight);
    let conv_b = params.block(Block::ConvBias);

    let mut conv = vec![0.0; s.filters * ch * cw];
    for f in 0..s.filters {
        let plane = &mut conv[f * ch * cw..(f + 1) * ch * cw];
        plane.iter_mut().for_each(|v| *v = conv_b[f]);
        for ky in 0..k {
            for kx in 0..k {
                let w = conv_w[f * k * k + ky * k + kx];
                for y in 0..ch {
                    let src = &img[(y + ky) * iw + kx..(y + ky) * iw + kx + cw];
                    axpy(w, src, &mut plane[y * cw..(y + 1) * cw]);
                }
            }
        }
        plane.iter_mut().for_each(|v| *v = s.visual_activation.apply(*v));
    }

    let mut pool = vec![0.0; s.pool_size()];
    let mut pool_argmax = vec![0u32; s.pool_size()];
    for f in 0..s.filters {
        for py in 0..ph {
            for px in 0..pw {
                let mut best_i = f * ch * cw + (POOL * py) * cw + POOL * px;
                for dy in 0..POOL {
                    for dx in 0..POOL {
                        let i = f * ch * cw + (POOL * py + dy) * cw + POOL * px + dx;
                        if conv[i] > conv[best_i] {
                            best_i = i;
                        }
                    }
                }
                let o = f * ph * pw + py * pw + px;
                pool[o] = conv[best_i];
                pool_argmax[o] = best_i as u32;
            }
        }
    }

    let mut hidden3 = vec![0.0; s.hidden3];
    dense_forward(
        params.block(Block::Dense3Weight),
        params.block(Block::Dense3Bias),
        &pool,
        &mut hidden3,
    );
    hidden3.iter_mut().for_each(|v| *v = s.visual_activation.apply(*v));

    let mut recurrent_input = Vec::with_capacity(s.recurrent_input());
    recurrent_input.extend_from_slice(&hidden3);
    recurrent_input.extend_from_slice(&input.trigger);
    recurrent_input.extend_from_slice(&state.context);

    let mut hidden4 = vec![0.0; s.hidden4];
    dense_forward(
        params.block(Block::Dense4Weight),
        params.block(Block::Dense4Bias),
        &recurrent_input,
        &mut hidden4,
    );
    hidden4.iter_mut().for_each(|v| *v = sigmoid(*v));

    let mut number = [0.0; NUMBER_CLASSES];
    dense_forward(
        params.block(Block::NumberWeight),
        params.block(Block::NumberBias),
        &hidden4,
        &mut number,
    );
    softmax_in_place(&mut number);

    let mut gesture = [0.0; JOINTS];
    dense_forward(
        params.block(Block::GestureWeight),
        params.block(Block::GestureBias),
        &hidden4,
        &mut gesture,
    );
    gesture.iter_mut().for_each(|v| *v = sigmoid(*v));

    let output = StepOutput { number, gesture };
    let next = RecurrentState {
        context: hidden4.clone(),
    };
    let acts = StepActivations {
        image: input.image.clone(),
        conv,
        pool_argmax,
        pool,
        hidden3,
        recurrent_input,
        hidden4,
        output: output.clone(),
    };
    (output, next, acts)
}

fn softmax_in_place(xs: &mut [f64]) {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        z += *x;
    }
    for x in xs.iter_mut() {
        *x /= z;
    }
}

/// Where the hand in each step's image comes from.
#[derive(Clone, Copy)]
pub enum Feedback<'a> {
    /// Images are used exactly as provided (no hand, or a scripted puppet hand).
    Verbatim,
    /// From the second step on, the previous gesture output is snapped to a
    /// canonical posture and, unless it is the base posture, that column's hand
    /// is drawn over the provided (hand-free) image.
    NetworkHand {
        table: &'a PostureTable,
        sprites: &'a SpriteBank,
    },
}

impl fmt::Debug for Feedback<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feedback::Verbatim => f.write_str("Verbatim"),
            Feedback::NetworkHand { .. } => f.write_str("NetworkHand"),
        }
    }
}

pub fn sequence_forward(
    params: &NetworkParams,
    inputs: &[StepInput],
    feedback: Feedback<'_>,
) -> (Vec<StepOutput>, TrajectoryCache) {
    let mut state = RecurrentState::initial(&params.shape);
    let mut steps: Vec<StepActivations> = Vec::with_capacity(inputs.len());
    let mut outputs = Vec::with_capacity(inputs.len());
    for (t, input) in inputs.iter().enumerate() {
        let rerendered;
        let input = match (feedback, steps.last()) {
            (Feedback::NetworkHand { table, sprites }, Some(prev)) if t > 0 => {
                match table.snap(&prev.output.gesture) {
                    PostureId::Column(c) => {
                        rerendered = StepInput {
                            image: sprites.composite_into(&input.image, c),
                            trigger: input.trigger,
                        };
                        &rerendered
                    }
                    PostureId::Base => input,
                }
            }
            _ => input,
        };
        let (out, next, acts) = forward_step(params, input, &state);
        state = next;
        outputs.push(out);
        steps.push(acts);
    }
    (outputs, TrajectoryCache { steps })
}

/// Supervision for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTarget {
    pub number: usize,
    pub posture: [f64; JOINTS],
}

/// Loss weights of the two heads (learning rates folded into the loss).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadRates {
    pub number: f64,
    pub gesture: f64,
}

/// Unweighted loss components of one sequence.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub cross_entropy: f64,
    pub squared_error: f64,
}

impl LossParts {
    pub fn weighted(&self, rates: HeadRates) -> f64 {
        rates.number * self.cross_entropy + rates.gesture * self.squared_error
    }

    pub fn add(&mut self, other: LossParts) {
        self.cross_entropy += other.cross_entropy;
        self.squared_error += other.squared_error;
    }
}

/// Loss of a cached trajectory against its targets:
/// `Σ_t rates.number·CE(number_t) + rates.gesture·½‖gesture_t − posture_t‖²`.
pub fn sequence_loss(cache: &TrajectoryCache, targets: &[StepTarget]) -> LossParts {
    let mut parts = LossParts::default();
    for (step, target) in cache.steps.iter().zip(targets) {
        parts.cross_entropy -= step.output.number[target.number].max(f64::MIN_POSITIVE).ln();
        parts.squared_error += 0.5
            * step
                .output
                .gesture
                .iter()
                .zip(&target.posture)
                .map(|(g, t)| (g - t) * (g - t))
                .sum::<f64>();
    }
    parts
}

/// Backpropagation through time. Adds the gradient of the rate-weighted loss
/// into `grad` and returns the unweighted loss parts.
pub fn accumulate_gradient(
    params: &NetworkParams,
    cache: &TrajectoryCache,
    targets: &[StepTarget],
    rates: HeadRates,
    grad: &mut NetworkParams,
) -> LossParts {
    assert_eq!(cache.steps.len(), targets.len(), "targets and trajectory lengths differ");
    assert_eq!(params.shape, grad.shape, "gradient shape mismatch");
    let s = params.shape;
    let (ch, cw) = (s.conv_height(), s.conv_width());
    let k = s.kernel;
    let iw = s.image_width;
    let n4 = s.recurrent_input();
    let ctx_offset = s.hidden3 + TRIGGER_UNITS;

    let w_num = params.block(Block::NumberWeight);
    let w_ges = params.block(Block::GestureWeight);
    let w4 = params.block(Block::Dense4Weight);
    let w3 = params.block(Block::Dense3Weight);

    // gradient arriving at hidden4(t) through the context of step t+1
    let mut d_context_next = vec![0.0; s.hidden4];
    let mut d_h4 = vec![0.0; s.hidden4];
    let mut d_x4 = vec![0.0; n4];
    let mut d_h3 = vec![0.0; s.hidden3];
    let mut d_pool = vec![0.0; s.pool_size()];
    let mut d_conv = vec![0.0; s.filters * ch * cw];

    for (step, target) in cache.steps.iter().zip(targets).rev() {
        let out = &step.output;

        // heads
        let mut d_logits = [0.0; NUMBER_CLASSES];
        for (c, d) in d_logits.iter_mut().enumerate() {
            let y = if c == target.number { 1.0 } else { 0.0 };
            *d = rates.number * (out.number[c] - y);
        }
        let mut d_gpre = [0.0; JOINTS];
        for j in 0..JOINTS {
            let g = out.gesture[j];
            d_gpre[j] = rates.gesture * (g - target.posture[j]) * g * (1.0 - g);
        }

        d_h4.copy_from_slice(&d_context_next);
        {
            let gw = grad.block_mut(Block::NumberWeight);
            for c in 0..NUMBER_CLASSES {
                axpy(d_logits[c], &step.hidden4, &mut gw[c * s.hidden4..(c + 1) * s.hidden4]);
                axpy(d_logits[c], &w_num[c * s.hidden4..(c + 1) * s.hidden4], &mut d_h4);
            }
        }
        {
            let gb = grad.block_mut(Block::NumberBias);
            for c in 0..NUMBER_CLASSES {
                gb[c] += d_logits[c];
            }
        }
        {
            let gw = grad.block_mut(Block::GestureWeight);
            for j in 0..JOINTS {
                axpy(d_gpre[j], &step.hidden4, &mut gw[j * s.hidden4..(j + 1) * s.hidden4]);
                axpy(d_gpre[j], &w_ges[j * s.hidden4..(j + 1) * s.hidden4], &mut d_h4);
            }
        }
        {
            let gb = grad.block_mut(Block::GestureBias);
            for j in 0..JOINTS {
                gb[j] += d_gpre[j];
            }
        }

        // recurrent layer
        for (d, h) in d_h4.iter_mut().zip(&step.hidden4) {
            *d *= h * (1.0 - h);
        }
        d_x4.iter_mut().for_each(|v| *v = 0.0);
        {
            let gw = grad.block_mut(Block::Dense4Weight);
            for (j, &d) in d_h4.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, &step.recurrent_input, &mut gw[j * n4..(j + 1) * n4]);
                    axpy(d, &w4[j * n4..(j + 1) * n4], &mut d_x4);
                }
            }
        }
        {
            let gb = grad.block_mut(Block::Dense4Bias);
            for (g, d) in gb.iter_mut().zip(&d_h4) {
                *g += d;
            }
        }
        // the first step's context is a constant, so this is simply dropped there
        d_context_next.copy_from_slice(&d_x4[ctx_offset..]);

        // image layer
        for ((d, dx), h) in d_h3.iter_mut().zip(&d_x4[..s.hidden3]).zip(&step.hidden3) {
            *d = dx * s.visual_activation.slope(*h);
        }
        let n3 = s.pool_size();
        d_pool.iter_mut().for_each(|v| *v = 0.0);
        {
            let gw = grad.block_mut(Block::Dense3Weight);
            for (j, &d) in d_h3.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, &step.pool, &mut gw[j * n3..(j + 1) * n3]);
                    axpy(d, &w3[j * n3..(j + 1) * n3], &mut d_pool);
                }
            }
        }
        {
            let gb = grad.block_mut(Block::Dense3Bias);
            for (g, d) in gb.iter_mut().zip(&d_h3) {
                *g += d;
            }
        }

        // max-pool routes each gradient to its argmax; then through the activation
        d_conv.iter_mut().for_each(|v| *v = 0.0);
        for (&i, &d) in step.pool_argmax.iter().zip(&d_pool) {
            d_conv[i as usize] += d;
        }
        let img = step.image.pixels();
        let mut conv_bias_grad = vec![0.0; s.filters];
        let mut conv_w_grad = vec![0.0; s.filters * k * k];
        for f in 0..s.filters {
            let plane = &mut d_conv[f * ch * cw..(f + 1) * ch * cw];
            let acts = &step.conv[f * ch * cw..(f + 1) * ch * cw];
            let mut bias = 0.0;
            for (d, a) in plane.iter_mut().zip(acts) {
                *d *= s.visual_activation.slope(*a);
                bias += *d;
            }
            conv_bias_grad[f] = bias;
            for ky in 0..k {
                for kx in 0..k {
                    let mut acc = 0.0;
                    for y in 0..ch {
                        let src = &img[(y + ky) * iw + kx..(y + ky) * iw + kx + cw];
                        acc += dot(&plane[y * cw..(y + 1) * cw], src);
                    }
                    conv_w_grad[f * k * k + ky * k + kx] = acc;
                }
            }
        }
        for (g, d) in grad.block_mut(Block::ConvBias).iter_mut().zip(&conv_bias_grad) {
            *g += d;
        }
        for (g, d) in grad.block_mut(Block::ConvWeight).iter_mut().zip(&conv_w_grad) {
            *g += d;
        }
    }
    sequence_loss(cache, targets)
}

/// BPTT followed by one gradient-descent step on the masked blocks.
pub fn sequence_backward(
    params: &mut NetworkParams,
    cache: &TrajectoryCache,
    targets: &[StepTarget],
    rates: HeadRates,
    mask: TrainMask,
) -> Result<LossParts, NetError> {
    let mut grad = NetworkParams::zeros(params.shape);
    let loss = accumulate_gradient(params, cache, targets, rates, &mut grad);
    params.apply_gradient(&grad, mask)?;
    Ok(loss)
}
