//! Central finite differences against backpropagation through time on a
//! small 8x20 image, shared by the gradient tests and the acceptance run.

#![allow(dead_code)]

use pointcount_core::net::{
    accumulate_gradient, forward_step, sequence_forward, sequence_loss, Activation, Block, Feedback, HeadRates,
    NetShape, NetworkParams, RecurrentState, StepInput, StepTarget, STEPS,
};
use pointcount_core::scene::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

pub struct Fixture {
    pub params: NetworkParams,
    pub inputs: Vec<StepInput>,
    pub targets: Vec<StepTarget>,
}

pub fn fixture(seed: u64, activation: Activation) -> Fixture {
    let shape = NetShape::for_image(8, 20).with_visual_activation(activation);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetworkParams::init(shape, &mut rng);
    // nonzero biases so every block's gradient is generic
    for b in Block::ALL.into_iter().filter(|b| b.is_bias()) {
        for v in params.block_mut(b) {
            *v = rng.gen_range(-0.1..0.1);
        }
    }
    // Central differences are only meaningful away from max-pool switching
    // points, so images whose pooling windows hold a near-tie are redrawn.
    let inputs = (0..STEPS)
        .map(|_| loop {
            let input = StepInput {
                image: Image::from_pixels(20, 8, (0..160).map(|_| rng.gen::<f64>()).collect()),
                trigger: [1.0, if rng.gen_bool(0.5) { 1.0 } else { 0.0 }],
            };
            if min_pool_gap(&params, &input) > 2e-4 {
                break input;
            }
        })
        .collect();
    let targets = (0..STEPS)
        .map(|_| StepTarget {
            number: rng.gen_range(0..11),
            posture: std::array::from_fn(|_| rng.gen()),
        })
        .collect();
    Fixture { params, inputs, targets }
}

/// Smallest gap between the winner and runner-up of any pooling window.
fn min_pool_gap(params: &NetworkParams, input: &StepInput) -> f64 {
    let shape = params.shape();
    let (_, _, acts) = forward_step(params, input, &RecurrentState::initial(shape));
    let (ch, cw) = (shape.conv_height(), shape.conv_width());
    let mut gap = f64::INFINITY;
    for f in 0..shape.filters {
        for py in 0..shape.pool_height() {
            for px in 0..shape.pool_width() {
                let mut v: Vec<f64> = (0..4)
                    .map(|k| acts.conv[f * ch * cw + (2 * py + k / 2) * cw + 2 * px + k % 2])
                    .collect();
                v.sort_by(|a, b| b.partial_cmp(a).unwrap());
                // an all-zero rectified window has no gradient to route
                if v[0] > 0.0 || shape.visual_activation == Activation::Sigmoid {
                    gap = gap.min(v[0] - v[1]);
                }
            }
        }
    }
    gap
}

pub fn loss(params: &NetworkParams, inputs: &[StepInput], targets: &[StepTarget], rates: HeadRates) -> f64 {
    let (_, cache) = sequence_forward(params, inputs, Feedback::Verbatim);
    sequence_loss(&cache, targets).weighted(rates)
}

/// Which rectified units are active and which pooling inputs win, per step.
fn switch_pattern(params: &NetworkParams, inputs: &[StepInput]) -> Vec<(Vec<bool>, Vec<u32>, Vec<bool>)> {
    let (_, cache) = sequence_forward(params, inputs, Feedback::Verbatim);
    cache
        .steps
        .iter()
        .map(|s| {
            (
                s.conv.iter().map(|&v| v > 0.0).collect(),
                s.pool_argmax.clone(),
                s.hidden3.iter().map(|&v| v > 0.0).collect(),
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct Outcome {
    pub checked: usize,
    /// Probes that crossed a kink and were replaced by another index.
    pub redrawn: usize,
    pub worst: f64,
}

/// Checks `per_block` random entries of every parameter block. Away from
/// kinks a ReLU net is smooth, so probes that flip a unit or a pooling
/// winner relative to the base point are redrawn.
pub fn check(fx: &Fixture, rates: HeadRates, probe_seed: u64, per_block: usize) -> Result<Outcome, String> {
    let Fixture { params, inputs, targets } = fx;
    let (_, cache) = sequence_forward(params, inputs, Feedback::Verbatim);
    let mut grad = NetworkParams::zeros(*params.shape());
    accumulate_gradient(params, &cache, targets, rates, &mut grad);
    let rectified = params.shape().visual_activation == Activation::Relu;
    let base = switch_pattern(params, inputs);

    let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
    let mut out = Outcome {
        checked: 0,
        redrawn: 0,
        worst: 0.0,
    };
    for block in Block::ALL {
        let n = params.block(block).len();
        let mut done = 0;
        while done < per_block {
            let i = rng.gen_range(0..n);
            let mut plus = params.clone();
            plus.block_mut(block)[i] += EPS;
            let mut minus = params.clone();
            minus.block_mut(block)[i] -= EPS;
            if rectified && (switch_pattern(&plus, inputs) != base || switch_pattern(&minus, inputs) != base) {
                out.redrawn += 1;
                if out.redrawn >= 10 * per_block * Block::ALL.len() {
                    return Err("too many kink crossings".into());
                }
                continue;
            }
            let numeric = (loss(&plus, inputs, targets, rates) - loss(&minus, inputs, targets, rates)) / (2.0 * EPS);
            let analytic = grad.block(block)[i];
            let scale = analytic.abs().max(numeric.abs());
            if scale > 1e-7 {
                let rel = (analytic - numeric).abs() / scale;
                out.worst = out.worst.max(rel);
                if rel >= TOLERANCE {
                    return Err(format!("{block}[{i}]: analytic {analytic:e} numeric {numeric:e} rel {rel:e}"));
                }
            } else if (analytic - numeric).abs() >= 1e-10 {
                return Err(format!("{block}[{i}]: analytic {analytic:e} numeric {numeric:e}"));
            }
            done += 1;
            out.checked += 1;
        }
    }
    Ok(out)
}
