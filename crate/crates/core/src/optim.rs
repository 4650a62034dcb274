//! Parameter update rules applied to a batch gradient.

use std::fmt;
use std::str::FromStr;

use crate::net::{Block, HeadRates, NetError, NetShape, NetworkParams, TrainMask};

/// How a summed batch gradient becomes a parameter step.
///
/// The gradient arriving here already carries the per-head rates as loss
/// weights. `Sgd` subtracts it unchanged. `Adam` normalizes per parameter, so
/// the head rates reappear as step sizes: each head's rate for its own
/// weights and the larger of the two for the shared layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub const ADAM: Optimizer = Optimizer::Adam {
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };

    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam { .. } => "adam",
        }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::ADAM
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::ADAM),
            _ => Err(format!("unknown optimizer `{s}` (expected sgd or adam)")),
        }
    }
}

/// Step size of `block` under Adam.
pub fn block_rate(block: Block, rates: HeadRates) -> f64 {
    match block {
        Block::NumberWeight | Block::NumberBias => rates.number,
        Block::GestureWeight | Block::GestureBias => rates.gesture,
        _ => rates.number.max(rates.gesture),
    }
}

/// Running moments for one training phase.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    optimizer: Optimizer,
    step: i32,
    first: Option<NetworkParams>,
    second: Option<NetworkParams>,
}

impl OptimizerState {
    pub fn new(optimizer: Optimizer, shape: NetShape) -> Self {
        let moments = matches!(optimizer, Optimizer::Adam { .. });
        OptimizerState {
            optimizer,
            step: 0,
            first: moments.then(|| NetworkParams::zeros(shape)),
            second: moments.then(|| NetworkParams::zeros(shape)),
        }
    }

    /// Applies `grad` to the blocks in `mask`. Nothing is written if any
    /// masked gradient is non-finite.
    pub fn apply(
        &mut self,
        params: &mut NetworkParams,
        grad: &NetworkParams,
        rates: HeadRates,
        mask: TrainMask,
    ) -> Result<(), NetError> {
        let Optimizer::Adam { beta1, beta2, epsilon } = self.optimizer else {
            return params.apply_gradient(grad, mask);
        };
        for b in Block::ALL {
            if mask.contains(b) && grad.block(b).iter().any(|g| !g.is_finite()) {
                return Err(NetError::NonFinite { block: b });
            }
        }
        self.step += 1;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        let (m, v) = (self.first.as_mut().unwrap(), self.second.as_mut().unwrap());
        for b in Block::ALL {
            let lr = block_rate(b, rates);
            if !mask.contains(b) || lr == 0.0 {
                continue;
            }
            let w = params.block_mut(b);
            let (mb, vb) = (m.block_mut(b), v.block_mut(b));
            for (i, &g) in grad.block(b).iter().enumerate() {
                mb[i] = beta1 * mb[i] + (1.0 - beta1) * g;
                vb[i] = beta2 * vb[i] + (1.0 - beta2) * g * g;
                w[i] -= lr * (mb[i] / c1) / ((vb[i] / c2).sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> NetShape {
        NetShape::for_image(8, 20)
    }

    fn rates() -> HeadRates {
        HeadRates {
            number: 0.002,
            gesture: 0.001,
        }
    }

    #[test]
    fn sgd_subtracts_the_gradient() {
        let mut p = NetworkParams::zeros(shape());
        let mut g = NetworkParams::zeros(shape());
        g.block_mut(Block::GestureBias)[0] = 0.25;
        OptimizerState::new(Optimizer::Sgd, shape())
            .apply(&mut p, &g, rates(), TrainMask::ALL)
            .unwrap();
        assert_eq!(p.block(Block::GestureBias)[0], -0.25);
    }

    #[test]
    fn first_adam_step_has_rate_magnitude() {
        // with bias correction the first step is lr * sign(g), up to epsilon
        let mut p = NetworkParams::zeros(shape());
        let mut g = NetworkParams::zeros(shape());
        g.block_mut(Block::NumberBias)[3] = 5.0;
        g.block_mut(Block::GestureBias)[1] = -1e-3;
        g.block_mut(Block::Dense4Bias)[0] = 2.0;
        let mut st = OptimizerState::new(Optimizer::ADAM, shape());
        st.apply(&mut p, &g, rates(), TrainMask::ALL).unwrap();
        assert!((p.block(Block::NumberBias)[3] + 0.002).abs() < 1e-9);
        assert!((p.block(Block::GestureBias)[1] - 0.001).abs() < 1e-7);
        assert!((p.block(Block::Dense4Bias)[0] + 0.002).abs() < 1e-9);
        assert_eq!(p.block(Block::NumberBias)[0], 0.0);
    }

    #[test]
    fn adam_respects_mask_and_zero_rates() {
        let mut p = NetworkParams::zeros(shape());
        let mut g = NetworkParams::zeros(shape());
        for b in Block::ALL {
            g.block_mut(b).iter_mut().for_each(|v| *v = 1.0);
        }
        let mut st = OptimizerState::new(Optimizer::ADAM, shape());
        let r = HeadRates {
            number: 0.0,
            gesture: 0.004,
        };
        st.apply(&mut p, &g, r, TrainMask::without_number_head()).unwrap();
        assert!(p.block(Block::NumberWeight).iter().all(|&w| w == 0.0));
        assert!(p.block(Block::GestureWeight).iter().all(|&w| w < 0.0));
    }

    #[test]
    fn non_finite_gradient_writes_nothing() {
        let mut p = NetworkParams::zeros(shape());
        let mut g = NetworkParams::zeros(shape());
        g.block_mut(Block::ConvWeight)[0] = f64::NAN;
        let before = p.clone();
        let mut st = OptimizerState::new(Optimizer::ADAM, shape());
        assert!(st.apply(&mut p, &g, rates(), TrainMask::ALL).is_err());
        assert_eq!(p, before);
    }

    #[test]
    fn names_round_trip() {
        for o in [Optimizer::Sgd, Optimizer::ADAM] {
            assert_eq!(o.name().parse::<Optimizer>().unwrap(), o);
        }
    }
}
