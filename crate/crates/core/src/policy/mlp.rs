//! Dense feed-forward blocks with a hand-written backward pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Fully connected layer, `y = W x + b`, with `W` stored row-major (`n_out x n_in`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    /// He-style uniform init: weights in `±sqrt(6 / fan_in)`, biases in `±1 / sqrt(fan_in)`.
    pub fn init<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let wb = (6.0 / n_in as f64).sqrt();
        let bb = 1.0 / (n_in as f64).sqrt();
        Self {
            n_in,
            n_out,
            weights: (0..n_in * n_out).map(|_| rng.gen_range(-wb..wb)).collect(),
            bias: (0..n_out).map(|_| rng.gen_range(-bb..bb)).collect(),
        }
    }

    #[inline]
    fn forward_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_in);
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.weights[o * self.n_in..(o + 1) * self.n_in];
            *yo = self.bias[o] + dot(row, x);
        }
    }
}

/// Dot product with four independent partial sums so it vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// A stack of dense layers with ReLU between layers and a linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Layer activations recorded by [`Mlp::forward_trace`]: `acts[0]` is the
/// input, `acts[k]` the output of layer `k` (after ReLU for hidden layers).
#[derive(Clone, Debug, Default)]
pub struct MlpTrace {
    pub acts: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    pub fn init<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        Self {
            layers: sizes
                .windows(2)
                .map(|w| Dense::init(w[0], w[1], rng))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.n_in, l.n_out))
                .collect(),
        }
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_out(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out
    }

    /// Layer widths from input to output.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.n_in()];
        s.extend(self.layers.iter().map(|l| l.n_out));
        s
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.n_out];
            layer.forward_into(&cur, &mut next);
            if k < last {
                relu(&mut next);
            }
            cur = next;
        }
        cur
    }

    pub fn forward_trace(&self, x: &[f64]) -> MlpTrace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.n_out];
            layer.forward_into(&acts[k], &mut next);
            if k < last {
                relu(&mut next);
            }
            acts.push(next);
        }
        MlpTrace { acts }
    }

    /// Accumulates parameter adjoints into `grad` and, when `din` is given,
    /// adds the input adjoint into it.
    pub fn backward(
        &self,
        trace: &MlpTrace,
        dout: &[f64],
        grad: &mut Mlp,
        din: Option<&mut [f64]>,
    ) {
        let mut delta = dout.to_vec();
        let n = self.layers.len();
        for k in (0..n).rev() {
            let layer = &self.layers[k];
            let g = &mut grad.layers[k];
            let x = &trace.acts[k];
            for o in 0..layer.n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.n_in..(o + 1) * layer.n_in];
                for (gw, xi) in row.iter_mut().zip(x) {
                    *gw += d * xi;
                }
            }
            if k == 0 && din.is_none() {
                break;
            }
            let mut prev = vec![0.0; layer.n_in];
            for o in 0..layer.n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            if k > 0 {
                // ReLU mask of the previous hidden layer
                for (p, a) in prev.iter_mut().zip(&trace.acts[k]) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            } else if let Some(din) = din {
                for (a, p) in din.iter_mut().zip(&prev) {
                    *a += p;
                }
                break;
            }
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
    }
}

#[inline]
fn relu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::init(&[3, 7, 2], &mut rng);
        let x = [0.3, -0.7, 1.1];
        let dout = [0.4, -1.3];
        let loss = |m: &Mlp, x: &[f64]| {
            let y = m.forward(x);
            y[0] * dout[0] + y[1] * dout[1]
        };
        let trace = net.forward_trace(&x);
        let mut grad = net.zeros_like();
        let mut din = vec![0.0; 3];
        net.backward(&trace, &dout, &mut grad, Some(&mut din));

        let h = 1e-6;
        for k in 0..3 {
            let mut xp = x;
            xp[k] += h;
            let mut xm = x;
            xm[k] -= h;
            let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h);
            assert!((fd - din[k]).abs() < 1e-6, "input {k}: {fd} vs {}", din[k]);
        }
        for (li, layer) in net.layers.iter().enumerate() {
            for wi in 0..layer.weights.len() {
                let mut np = net.clone();
                np.layers[li].weights[wi] += h;
                let mut nm = net.clone();
                nm.layers[li].weights[wi] -= h;
                let fd = (loss(&np, &x) - loss(&nm, &x)) / (2.0 * h);
                assert!((fd - grad.layers[li].weights[wi]).abs() < 1e-6);
            }
        }
    }
}
