//! Backpropagation-through-time checked against central finite differences.

#[path = "support/gradcheck.rs"]
mod gradcheck;

use gradcheck::{fixture, loss, Fixture, EPS};
use pointcount_core::net::{accumulate_gradient, sequence_forward, Activation, Block, Feedback, HeadRates, NetworkParams, STEPS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn bptt_matches_central_differences() {
    let fx = fixture(2024, Activation::Sigmoid);
    let rates = HeadRates {
        number: 0.7,
        gesture: 1.3,
    };
    let out = gradcheck::check(&fx, rates, 7, 20).unwrap();
    assert!(out.checked >= 200);
    eprintln!("checked {} parameters, worst relative error {:e}", out.checked, out.worst);
}

#[test]
fn last_step_loss_flows_back_through_context() {
    // Only step 15 carries loss: earlier targets equal the outputs and the
    // number head is switched off, so every contribution from steps 1..14
    // arrives through the chain of context copies.
    let Fixture {
        params,
        inputs,
        mut targets,
    } = fixture(9, Activation::Sigmoid);
    let rates = HeadRates {
        number: 0.0,
        gesture: 1.0,
    };
    let (_, cache) = sequence_forward(&params, &inputs, Feedback::Verbatim);
    for (t, step) in cache.steps.iter().enumerate().take(STEPS - 1) {
        targets[t].posture = step.output.gesture;
    }
    let mut grad = NetworkParams::zeros(*params.shape());
    accumulate_gradient(&params, &cache, &targets, rates, &mut grad);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for block in [Block::ConvWeight, Block::Dense3Weight, Block::Dense4Weight, Block::Dense4Bias] {
        for _ in 0..10 {
            let i = rng.gen_range(0..params.block(block).len());
            let mut plus = params.clone();
            plus.block_mut(block)[i] += EPS;
            let mut minus = params.clone();
            minus.block_mut(block)[i] -= EPS;
            let numeric = (loss(&plus, &inputs, &targets, rates) - loss(&minus, &inputs, &targets, rates)) / (2.0 * EPS);
            let analytic = grad.block(block)[i];
            let scale = analytic.abs().max(numeric.abs()).max(1e-9);
            assert!((analytic - numeric).abs() / scale < 1e-4, "{block}[{i}]: {analytic:e} vs {numeric:e}");
        }
    }

    // a truncated one-step backward pass would miss the earlier-step terms
    let last = std::slice::from_ref(cache.steps.last().unwrap());
    let one_step = pointcount_core::net::TrajectoryCache { steps: last.to_vec() };
    let mut truncated = NetworkParams::zeros(*params.shape());
    accumulate_gradient(&params, &one_step, &targets[STEPS - 1..], rates, &mut truncated);
    assert_ne!(truncated.block(Block::Dense3Weight), grad.block(Block::Dense3Weight));
}

#[test]
fn rectified_visual_layers_match_central_differences() {
    let fx = fixture(77, Activation::Relu);
    let rates = HeadRates {
        number: 1.0,
        gesture: 0.5,
    };
    let out = gradcheck::check(&fx, rates, 11, 20).unwrap();
    assert!(out.checked >= 200);
    eprintln!("checked {} parameters, {} probes redrawn at kinks", out.checked, out.redrawn);
}
