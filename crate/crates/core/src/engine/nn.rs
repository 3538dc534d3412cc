//! Fully connected tanh networks with hand-written reverse mode.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine layer `y = W x + b`, weights stored row-major (`out x in`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform in `±scale/sqrt(in_dim)`, zero bias.
    pub fn random<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, scale: f64, rng: &mut R) -> Self {
        let bound = scale / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
        }
    }

    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.in_dim)
                .zip(&self.bias)
                .map(|(row, b)| b + dot(row, x)),
        );
    }

    /// Same as `forward_into` but only touches the listed input positions.
    fn forward_sparse_into(&self, x: &[f64], nonzero: &[usize], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.in_dim)
                .zip(&self.bias)
                .map(|(row, b)| b + nonzero.iter().map(|&i| row[i] * x[i]).sum::<f64>()),
        );
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, ra) = a.split_at(a.len() / 4 * 4);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(4).zip(cb.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Gradient buffers shaped like an [`Mlp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpGrads {
    pub layers: Vec<Dense>,
}

impl MlpGrads {
    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|g| *g *= k);
        }
    }

    pub fn add(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights
                .iter_mut()
                .zip(&b.weights)
                .for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn l2_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|g| g.is_finite()))
    }
}

/// Activations recorded by [`Mlp::forward`]. Entry 0 is the input, entry `k`
/// the output of layer `k - 1`.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
    input_nonzero: Vec<usize>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

fn nonzero_positions(x: &[f64]) -> Vec<usize> {
    x.iter()
        .enumerate()
        .filter_map(|(i, &v)| (v != 0.0).then_some(i))
        .collect()
}

/// Multilayer perceptron: tanh on hidden layers, linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `sizes = [input, hidden.., output]`. The output layer's init range is
    /// multiplied by `output_scale` (small values start policies near uniform).
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output_scale: f64, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                Dense::random(w[0], w[1], if k == last { output_scale } else { 1.0 }, rng)
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Contract("network needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::Contract(format!(
                    "layer shapes do not chain: {} -> {}",
                    w[0].out_dim, w[1].in_dim
                )));
            }
        }
        for l in &layers {
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::Contract(
                    "layer buffers do not match declared shape".into(),
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Contract(format!(
                "input has {} features, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Output only, no cache.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let nonzero = nonzero_positions(input);
        let mut cur = Vec::new();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            if k == 0 {
                layer.forward_sparse_into(input, &nonzero, &mut next);
            } else {
                layer.forward_into(&cur, &mut next);
            }
            if k < last {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardCache> {
        self.check_input(input)?;
        let input_nonzero = nonzero_positions(input);
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.out_dim);
            if k == 0 {
                layer.forward_sparse_into(&activations[0], &input_nonzero, &mut out);
            } else {
                layer.forward_into(&activations[k], &mut out);
            }
            if k < last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(out);
        }
        Ok(ForwardCache {
            activations,
            input_nonzero,
        })
    }

    /// Accumulates `d(output . grad_output)/d(params)` into `grads`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: &[f64],
        grads: &mut MlpGrads,
    ) -> Result<()> {
        if cache.activations.len() != self.layers.len() + 1
            || cache
                .activations
                .iter()
                .zip(self.layers.iter())
                .any(|(a, l)| a.len() != l.in_dim)
        {
            return Err(Error::Contract(
                "forward cache does not belong to this network".into(),
            ));
        }
        if grad_output.len() != self.output_dim() {
            return Err(Error::Contract(format!(
                "output gradient has {} entries, network outputs {}",
                grad_output.len(),
                self.output_dim()
            )));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Contract("gradient buffer shape mismatch".into()));
        }
        let last = self.layers.len() - 1;
        let mut delta = grad_output.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            if k < last {
                // through tanh: dy/dz = 1 - y^2
                for (d, y) in delta.iter_mut().zip(&cache.activations[k + 1]) {
                    *d *= 1.0 - y * y;
                }
            }
            let x = &cache.activations[k];
            let g = &mut grads.layers[k];
            if k == 0 {
                // input gradient not needed; only nonzero inputs contribute
                for (o, &d) in delta.iter().enumerate() {
                    g.bias[o] += d;
                    let gw = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for &i in &cache.input_nonzero {
                        gw[i] += d * x[i];
                    }
                }
                break;
            }
            let mut dx = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = o * layer.in_dim..(o + 1) * layer.in_dim;
                for ((gw, w), (xi, dxi)) in g.weights[row.clone()]
                    .iter_mut()
                    .zip(&layer.weights[row])
                    .zip(x.iter().zip(dx.iter_mut()))
                {
                    *gw += d * xi;
                    *dxi += d * w;
                }
            }
            delta = dx;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|p| p.is_finite()))
    }

    /// Flat view of all parameters in layer order (weights then bias per layer).
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn param_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for l in &mut self.layers {
            let n = l.weights.len();
            if index < n {
                return l.weights.get_mut(index);
            }
            index -= n;
            if index < l.bias.len() {
                return l.bias.get_mut(index);
            }
            index -= l.bias.len();
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::from_layers(vec![Dense::zeros(4, 8), Dense::zeros(8, 3)]).unwrap();
        assert_eq!(net.predict(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn scalar_identity_net() {
        let net = Mlp::from_layers(vec![Dense {
            in_dim: 1,
            out_dim: 1,
            weights: vec![1.0],
            bias: vec![0.0],
        }])
        .unwrap();
        assert_eq!(net.predict(&[0.0]).unwrap(), vec![0.0]);
        let hidden = Mlp::from_layers(vec![
            Dense {
                in_dim: 1,
                out_dim: 1,
                weights: vec![1.0],
                bias: vec![0.0],
            },
            Dense {
                in_dim: 1,
                out_dim: 1,
                weights: vec![1.0],
                bias: vec![0.0],
            },
        ])
        .unwrap();
        assert_eq!(hidden.predict(&[0.0]).unwrap(), vec![0.0_f64.tanh()]);
    }

    #[test]
    fn forward_is_deterministic_and_matches_predict() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::new(&[6, 16, 16, 4], 1.0, &mut rng).unwrap();
        let x = [0.1, -0.4, 0.3, 0.9, 0.0, 1.0];
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a.output(), b.output());
        assert_eq!(a.output(), net.predict(&x).unwrap().as_slice());
    }

    #[test]
    fn shape_mismatches_are_contract_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::new(&[3, 4, 2], 1.0, &mut rng).unwrap();
        assert!(matches!(net.predict(&[1.0]), Err(Error::Contract(_))));
        let other = Mlp::new(&[5, 4, 2], 1.0, &mut rng).unwrap();
        let cache = other.forward(&[0.0; 5]).unwrap();
        let mut g = net.zero_grads();
        assert!(matches!(
            net.backward(&cache, &[1.0, 0.0], &mut g),
            Err(Error::Contract(_))
        ));
        let cache = net.forward(&[0.0; 3]).unwrap();
        assert!(matches!(
            net.backward(&cache, &[1.0], &mut g),
            Err(Error::Contract(_))
        ));
        assert!(Mlp::from_layers(vec![Dense::zeros(3, 4), Dense::zeros(5, 2)]).is_err());
    }

    #[test]
    fn zero_output_gradient_gives_zero_param_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Mlp::new(&[4, 8, 8, 3], 1.0, &mut rng).unwrap();
        let cache = net.forward(&[0.3, -0.2, 0.7, 0.1]).unwrap();
        let mut g = net.zero_grads();
        net.backward(&cache, &[0.0; 3], &mut g).unwrap();
        assert!(g.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_is_linear_in_output_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Mlp::new(&[4, 8, 3], 1.0, &mut rng).unwrap();
        let cache = net.forward(&[0.3, -0.2, 0.7, 0.1]).unwrap();
        let g1 = [0.5, -1.0, 2.0];
        let g2 = [-0.3, 0.25, 1.5];
        let sum: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a + b).collect();
        let mut a = net.zero_grads();
        net.backward(&cache, &g1, &mut a).unwrap();
        net.backward(&cache, &g2, &mut a).unwrap();
        let mut b = net.zero_grads();
        net.backward(&cache, &sum, &mut b).unwrap();
        for (x, y) in a.flat().iter().zip(b.flat()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
