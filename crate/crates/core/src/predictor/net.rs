//! Small feed-forward network over lagged log-returns with dropout on the
//! hidden activations, trained by full-batch gradient descent with momentum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_momentum() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    /// Number of lagged log-returns fed to the network.
    pub window: usize,
    pub hidden: Vec<usize>,
    pub dropout_p: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub l2: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            window: 10,
            hidden: vec![16],
            dropout_p: 0.2,
            epochs: 200,
            learning_rate: 0.05,
            l2: 1e-4,
            momentum: default_momentum(),
            seed: 0,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window < 1 {
            return Err(Error::invalid("window must be at least 1"));
        }
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::invalid(format!(
                "dropout_p must lie in [0, 1) (got {})",
                self.dropout_p
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::invalid("l2 must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden layer sizes must be positive"));
        }
        Ok(())
    }
}

/// Row-major dense layer: `weights[o * inputs + i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn init(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[o];
            out.push(z);
        }
    }
}

/// Trained network. Immutable once returned from [`DropoutNet::train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutNet {
    pub spec: TrainSpec,
    /// Hidden layers followed by the single-output layer.
    pub layers: Vec<Dense>,
    /// Standardization applied to every input and the target.
    pub return_mean: f64,
    pub return_scale: f64,
    /// Training MSE of the final epoch, in squared log-return units.
    pub final_loss: f64,
}

/// Per-hidden-layer multiplicative masks (0 or 1/(1-p)).
pub type Mask = Vec<Vec<f64>>;

pub(crate) fn draw_mask(hidden: &[usize], p: f64, rng: &mut impl Rng) -> Mask {
    let keep = 1.0 / (1.0 - p);
    hidden
        .iter()
        .map(|&n| {
            (0..n)
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                .collect()
        })
        .collect()
}

pub(crate) fn mask_from_seed(hidden: &[usize], p: f64, seed: u64) -> Mask {
    draw_mask(hidden, p, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub(crate) fn log_returns(mids: &[f64]) -> Vec<f64> {
    mids.windows(2).map(|w| (w[1] / w[0]).ln()).collect()
}

impl DropoutNet {
    /// Fits next-step log-return from the preceding `window` log-returns.
    pub fn train(mids: &[f64], spec: &TrainSpec) -> Result<Self> {
        spec.validate()?;
        if mids.len() <= spec.window + 1 {
            return Err(Error::invalid(format!(
                "series too short: {} ticks, need more than window + 1 = {}",
                mids.len(),
                spec.window + 1
            )));
        }
        let returns = log_returns(mids);
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let sd = (returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n).sqrt();
        let (return_mean, return_scale) = if sd > 0.0 && sd.is_finite() {
            (mean, sd)
        } else {
            (mean, 1.0)
        };
        let z: Vec<f64> = returns
            .iter()
            .map(|r| (r - return_mean) / return_scale)
            .collect();

        let w = spec.window;
        let n_samples = z.len() - w;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut sizes = vec![w];
        sizes.extend(&spec.hidden);
        sizes.push(1);
        let mut layers: Vec<Dense> = sizes
            .windows(2)
            .map(|s| Dense::init(s[0], s[1], &mut rng))
            .collect();
        let mut vel: Vec<(Vec<f64>, Vec<f64>)> = layers
            .iter()
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
            .collect();
        let mut grads = vel.clone();

        let n_layers = layers.len();
        let mut acts: Vec<Vec<f64>> = vec![Vec::new(); n_layers + 1];
        let mut masks: Mask = spec.hidden.iter().map(|&h| vec![1.0; h]).collect();
        let mut deltas: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();
        let mut pre = Vec::new();
        let mut loss = 0.0;

        for epoch in 0..spec.epochs {
            for g in grads.iter_mut() {
                g.0.iter_mut().for_each(|v| *v = 0.0);
                g.1.iter_mut().for_each(|v| *v = 0.0);
            }
            loss = 0.0;
            for s in 0..n_samples {
                if spec.dropout_p > 0.0 {
                    masks = draw_mask(&spec.hidden, spec.dropout_p, &mut rng);
                }
                acts[0].clear();
                acts[0].extend_from_slice(&z[s..s + w]);
                for (li, layer) in layers.iter().enumerate() {
                    layer.apply(&acts[li], &mut pre);
                    let mut out = std::mem::take(&mut acts[li + 1]);
                    out.clear();
                    if li + 1 < n_layers {
                        out.extend(pre.iter().zip(&masks[li]).map(|(v, k)| v.tanh() * k));
                    } else {
                        out.extend_from_slice(&pre);
                    }
                    acts[li + 1] = out;
                }
                let err = acts[n_layers][0] - z[s + w];
                loss += err * err;

                deltas[n_layers][0] = 2.0 * err / n_samples as f64;
                for li in (0..n_layers).rev() {
                    let layer = &layers[li];
                    let (g_w, g_b) = &mut grads[li];
                    let input = &acts[li];
                    let (lower, upper) = deltas.split_at_mut(li + 1);
                    let d_out = &upper[0];
                    for o in 0..layer.outputs {
                        let d = d_out[o];
                        g_b[o] += d;
                        let row = &mut g_w[o * layer.inputs..(o + 1) * layer.inputs];
                        for (g, x) in row.iter_mut().zip(input) {
                            *g += d * x;
                        }
                    }
                    if li > 0 {
                        let d_in = &mut lower[li];
                        let m = &masks[li - 1];
                        for i in 0..layer.inputs {
                            let mut acc = 0.0;
                            for o in 0..layer.outputs {
                                acc += layer.weights[o * layer.inputs + i] * d_out[o];
                            }
                            // input = tanh(z) * mask, so d tanh = 1 - tanh^2
                            let t = if m[i] == 0.0 { 0.0 } else { input[i] / m[i] };
                            d_in[i] = acc * m[i] * (1.0 - t * t);
                        }
                    }
                }
            }
            loss /= n_samples as f64;
            if !loss.is_finite() {
                return Err(Error::numerical(format!(
                    "non-finite training loss at epoch {epoch}"
                )));
            }
            for (layer, ((g_w, g_b), (v_w, v_b))) in
                layers.iter_mut().zip(grads.iter().zip(vel.iter_mut()))
            {
                for ((w, g), v) in layer.weights.iter_mut().zip(g_w).zip(v_w.iter_mut()) {
                    *v = spec.momentum * *v - spec.learning_rate * (g + spec.l2 * *w);
                    *w += *v;
                }
                for ((b, g), v) in layer.bias.iter_mut().zip(g_b).zip(v_b.iter_mut()) {
                    *v = spec.momentum * *v - spec.learning_rate * g;
                    *b += *v;
                }
            }
        }

        Ok(Self {
            spec: spec.clone(),
            layers,
            return_mean,
            return_scale,
            final_loss: loss * return_scale * return_scale,
        })
    }

    pub fn window(&self) -> usize {
        self.spec.window
    }

    pub fn dropout_p(&self) -> f64 {
        self.spec.dropout_p
    }

    /// Predicted next log-return from the last `window` log-returns.
    /// `mask` of `None` is evaluation mode.
    pub fn forward(&self, lagged_returns: &[f64], mask: Option<&Mask>) -> f64 {
        debug_assert_eq!(lagged_returns.len(), self.spec.window);
        let mut x: Vec<f64> = lagged_returns
            .iter()
            .map(|r| (r - self.return_mean) / self.return_scale)
            .collect();
        let mut out = Vec::with_capacity(x.len());
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            layer.apply(&x, &mut out);
            if li < last {
                match mask {
                    Some(m) => out
                        .iter_mut()
                        .zip(&m[li])
                        .for_each(|(v, k)| *v = v.tanh() * k),
                    None => out.iter_mut().for_each(|v| *v = v.tanh()),
                }
            }
            std::mem::swap(&mut x, &mut out);
        }
        self.return_mean + self.return_scale * x[0]
    }
}
