//! Dense feed-forward network with tanh hidden units and a single logistic output.
//! A network with no hidden layers is plain logistic regression.
//!
//! Parameters are one flat vector; each layer stores its weights row-major
//! (`out x in`) followed by its biases.

use serde::{Deserialize, Serialize};

use super::Dataset;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// `[input, hidden..., 1]`
    pub layers: Vec<usize>,
}

impl Architecture {
    pub fn new(input: usize, hidden: &[usize]) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 2);
        layers.push(input);
        layers.extend_from_slice(hidden);
        layers.push(1);
        Architecture { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0]
    }

    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.layers.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// `(weights offset, bias offset, fan_in, fan_out)` per layer.
    fn spans(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut off = 0;
        self.layers
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let span = (off, off + fan_in * fan_out, fan_in, fan_out);
                off += fan_in * fan_out + fan_out;
                span
            })
            .collect()
    }

    /// Whether parameter `i` is a weight (as opposed to a bias).
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.n_params()];
        for (w, b, _, _) in self.spans() {
            m[w..b].iter_mut().for_each(|x| *x = true);
        }
        m
    }

    /// Indices of first-layer weights reading input `j`.
    pub fn input_weight_indices(&self, j: usize) -> impl Iterator<Item = usize> {
        let fan_in = self.layers[0];
        let fan_out = self.layers[1];
        (0..fan_out).map(move |o| o * fan_in + j)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Per-layer activations from a forward pass; the last entry holds the output logit.
pub(crate) struct Forward {
    acts: Vec<Vec<f64>>,
}

impl Forward {
    pub fn logit(&self) -> f64 {
        self.acts.last().expect("output layer")[0]
    }
}

pub(crate) fn forward(arch: &Architecture, params: &[f64], x: &[f64]) -> Forward {
    let spans = arch.spans();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(spans.len() + 1);
    acts.push(x.to_vec());
    for (l, &(w, b, fan_in, fan_out)) in spans.iter().enumerate() {
        let input = &acts[l];
        let last = l + 1 == spans.len();
        let out: Vec<f64> = (0..fan_out)
            .map(|o| {
                let row = &params[w + o * fan_in..w + (o + 1) * fan_in];
                let z = params[b + o] + row.iter().zip(input).map(|(a, c)| a * c).sum::<f64>();
                if last {
                    z
                } else {
                    z.tanh()
                }
            })
            .collect();
        acts.push(out);
    }
    Forward { acts }
}

pub fn logit(arch: &Architecture, params: &[f64], x: &[f64]) -> f64 {
    forward(arch, params, x).logit()
}

/// Add `dlogit * d(logit)/d(params)` into `grad`.
pub(crate) fn backward(
    arch: &Architecture,
    params: &[f64],
    fwd: &Forward,
    dlogit: f64,
    grad: &mut [f64],
) {
    let spans = arch.spans();
    let mut delta = vec![dlogit];
    for l in (0..spans.len()).rev() {
        let (w, b, fan_in, fan_out) = spans[l];
        let input = &fwd.acts[l];
        for o in 0..fan_out {
            let d = delta[o];
            if d == 0.0 {
                continue;
            }
            grad[b + o] += d;
            let row = &mut grad[w + o * fan_in..w + (o + 1) * fan_in];
            for (g, a) in row.iter_mut().zip(input) {
                *g += d * a;
            }
        }
        if l == 0 {
            break;
        }
        // propagate through tanh of the layer below
        let below = &fwd.acts[l];
        delta = (0..fan_in)
            .map(|i| {
                let s: f64 = (0..fan_out)
                    .map(|o| params[w + o * fan_in + i] * delta[o])
                    .sum();
                s * (1.0 - below[i] * below[i])
            })
            .collect();
    }
}

/// Gradient of the output logit for one input.
pub fn logit_gradient(arch: &Architecture, params: &[f64], x: &[f64]) -> Vec<f64> {
    let fwd = forward(arch, params, x);
    let mut g = vec![0.0; params.len()];
    backward(arch, params, &fwd, 1.0, &mut g);
    g
}

/// Mean logistic cross-entropy over `rows` plus `l2/2 * ||weights||^2`, and its gradient.
pub fn loss_and_gradient(
    arch: &Architecture,
    params: &[f64],
    data: &Dataset,
    rows: &[usize],
    l2: f64,
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    let scale = 1.0 / rows.len() as f64;
    for &r in rows {
        let fwd = forward(arch, params, data.row(r));
        let z = fwd.logit();
        let y = data.y[r];
        loss += softplus(z) - y * z;
        backward(arch, params, &fwd, (sigmoid(z) - y) * scale, &mut grad);
    }
    loss *= scale;
    if l2 > 0.0 {
        for ((g, p), is_w) in grad.iter_mut().zip(params).zip(arch.weight_mask()) {
            if is_w {
                loss += 0.5 * l2 * p * p;
                *g += l2 * p;
            }
        }
    }
    (loss, grad)
}

/// Mean cross-entropy of the network on all rows, computed from logits.
pub fn mean_loss(arch: &Architecture, params: &[f64], data: &Dataset) -> f64 {
    let total: f64 = (0..data.len())
        .map(|r| {
            let z = logit(arch, params, data.row(r));
            softplus(z) - data.y[r] * z
        })
        .sum();
    total / data.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn random_instance(rng: &mut seed::Rng, hidden: &[usize]) -> (Architecture, Vec<f64>, Dataset) {
        let d = rng.random_range(1..6);
        let arch = Architecture::new(d, hidden);
        let params: Vec<f64> = (0..arch.n_params())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let n = rng.random_range(1..12);
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..n)
            .map(|_| f64::from(u8::from(rng.random_bool(0.5))))
            .collect();
        (arch, params, Dataset::new(x, y, d).unwrap())
    }

    fn relative_error(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / na.max(nb).max(1e-12)
    }

    fn central_differences(
        arch: &Architecture,
        params: &[f64],
        data: &Dataset,
        l2: f64,
    ) -> Vec<f64> {
        let rows: Vec<usize> = (0..data.len()).collect();
        let h = 1e-6;
        (0..params.len())
            .map(|i| {
                let mut p = params.to_vec();
                p[i] += h;
                let up = loss_and_gradient(arch, &p, data, &rows, l2).0;
                p[i] -= 2.0 * h;
                let down = loss_and_gradient(arch, &p, data, &rows, l2).0;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let mut rng = seed::rng(11);
        for _ in 0..25 {
            let (arch, params, data) = random_instance(&mut rng, &[]);
            let rows: Vec<usize> = (0..data.len()).collect();
            let (_, g) = loss_and_gradient(&arch, &params, &data, &rows, 0.1);
            let fd = central_differences(&arch, &params, &data, 0.1);
            assert!(relative_error(&g, &fd) < 1e-5);
        }
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mut rng = seed::rng(12);
        for _ in 0..25 {
            let (arch, params, data) = random_instance(&mut rng, &[4, 3]);
            let rows: Vec<usize> = (0..data.len()).collect();
            let (_, g) = loss_and_gradient(&arch, &params, &data, &rows, 0.01);
            let fd = central_differences(&arch, &params, &data, 0.01);
            assert!(relative_error(&g, &fd) < 1e-5);
        }
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let mut rng = seed::rng(13);
        let (arch, params, data) = random_instance(&mut rng, &[5]);
        let x = data.row(0);
        let g = logit_gradient(&arch, &params, x);
        let h = 1e-6;
        let fd: Vec<f64> = (0..params.len())
            .map(|i| {
                let mut p = params.clone();
                p[i] += h;
                let up = logit(&arch, &p, x);
                p[i] -= 2.0 * h;
                (up - logit(&arch, &p, x)) / (2.0 * h)
            })
            .collect();
        assert!(relative_error(&g, &fd) < 1e-6);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert!(softplus(800.0).is_finite());
    }

    #[test]
    fn parameter_count() {
        let a = Architecture::new(23, &[32]);
        assert_eq!(a.n_params(), 23 * 32 + 32 + 32 + 1);
        assert_eq!(Architecture::new(3, &[]).n_params(), 4);
    }
}
