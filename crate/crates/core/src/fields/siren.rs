//! Sinusoidal MLPs with the initialization scheme that keeps activations
//! well-distributed at large frequency scales.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamArray, Tensor};
use crate::error::{Error, Result};

/// One affine layer. `weight` is stored [fan_in, fan_out] so the forward
/// pass is `x · W + b` without transposition.
#[derive(Clone, Debug)]
pub struct SirenLayer {
    pub weight: ParamArray,
    pub bias: ParamArray,
    /// sin(omega0 * pre) on hidden layers; the head stays linear.
    pub sinusoidal: bool,
}

impl SirenLayer {
    pub fn fan_in(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape[1]
    }
}

/// A SIREN: sinusoidal hidden layers and a linear head.
#[derive(Clone, Debug)]
pub struct SirenNet {
    pub layers: Vec<SirenLayer>,
    pub omega0: f64,
}

impl SirenNet {
    /// Deterministic initialization from a seed.
    ///
    /// `dims` lists every layer size including input and output, e.g.
    /// `[3, 64, 64, 1]` for two hidden layers. First-layer weights and
    /// biases are uniform in (-1/fan_in, 1/fan_in); every deeper layer is
    /// uniform in (-sqrt(6/fan_in)/omega0, +sqrt(6/fan_in)/omega0).
    pub fn init(name_prefix: &str, seed: u64, dims: &[usize], omega0: f64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Contract(format!(
                "siren '{name_prefix}' needs at least input and output dims, got {dims:?}"
            )));
        }
        if !(omega0 > 0.0) {
            return Err(Error::Contract(format!(
                "siren '{name_prefix}' frequency scale must be positive, got {omega0}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (idx, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = if idx == 0 {
                1.0 / fan_in as f64
            } else {
                (6.0 / fan_in as f64).sqrt() / omega0
            };
            let weight: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            let bias: Vec<f64> = (0..fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
            layers.push(SirenLayer {
                weight: ParamArray::new(
                    format!("{name_prefix}.layer{idx}.weight"),
                    vec![fan_in, fan_out],
                    weight,
                ),
                bias: ParamArray::new(
                    format!("{name_prefix}.layer{idx}.bias"),
                    vec![fan_out],
                    bias,
                ),
                sinusoidal: idx + 2 < dims.len(),
            });
        }
        Ok(SirenNet { layers, omega0 })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().fan_out()
    }

    pub fn params(&self) -> Vec<&ParamArray> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamArray> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Copy the current parameter values onto a graph as trainable leaves.
    pub fn bind<'g>(&self, graph: &'g Graph) -> Result<BoundSiren<'g>> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            layers.push(BoundLayer {
                weight: graph.param(layer.weight.data.clone(), layer.weight.shape.clone())?,
                bias: graph.param(layer.bias.data.clone(), layer.bias.shape.clone())?,
                sinusoidal: layer.sinusoidal,
            });
        }
        Ok(BoundSiren {
            layers,
            omega0: self.omega0,
        })
    }
}

pub struct BoundLayer<'g> {
    pub weight: Tensor<'g>,
    pub bias: Tensor<'g>,
    pub sinusoidal: bool,
}

/// Graph-bound network for one optimization step.
pub struct BoundSiren<'g> {
    pub layers: Vec<BoundLayer<'g>>,
    pub omega0: f64,
}

impl<'g> BoundSiren<'g> {
    /// Trainable leaves in the same order as [`SirenNet::params`].
    pub fn leaves(&self) -> Vec<Tensor<'g>> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }

    /// Batched forward pass over coords [n, input_dim].
    pub fn forward(&self, coords: Tensor<'g>) -> Result<Tensor<'g>> {
        let mut act = coords;
        for layer in &self.layers {
            let pre = act.matmul(layer.weight)?.add_row(layer.bias)?;
            act = if layer.sinusoidal {
                pre.scale(self.omega0)?.sin()?
            } else {
                pre
            };
        }
        Ok(act)
    }

    /// Forward pass of a scalar-output net together with the gradient of the
    /// output with respect to the first `spatial_dims` input coordinates.
    ///
    /// The gradient is built as an explicit chain of per-layer Jacobian
    /// products over the cosine activations, so it lives on the same tape and
    /// is differentiable with respect to the weights in one reverse pass.
    pub fn forward_with_input_gradient(
        &self,
        coords: Tensor<'g>,
        spatial_dims: usize,
    ) -> Result<(Tensor<'g>, Tensor<'g>)> {
        let n_layers = self.layers.len();
        if self.layers[n_layers - 1].fan_out_hint() != 1 {
            return Err(Error::Contract(
                "input gradients require a scalar-output network".into(),
            ));
        }
        if n_layers < 2 || !self.layers[n_layers - 2].sinusoidal {
            return Err(Error::Contract(
                "input gradients require at least one sinusoidal hidden layer".into(),
            ));
        }
        let graph = graph_of(coords);

        // Forward, keeping cos(z_l) of every sinusoidal pre-activation.
        let mut act = coords;
        let mut cosines = Vec::with_capacity(n_layers - 1);
        for layer in &self.layers {
            let pre = act.matmul(layer.weight)?.add_row(layer.bias)?;
            if layer.sinusoidal {
                let scaled = pre.scale(self.omega0)?;
                let (s, c) = graph.sin_cos(scaled)?;
                act = s;
                cosines.push(c);
            } else {
                act = pre;
            }
        }
        let head = act;

        // Reverse Jacobian chain: u_l = d head / d z_l as an [n, width] tensor.
        let head_layer = &self.layers[n_layers - 1];
        let head_row = head_layer.weight.transpose()?; // [1, w_last]
        let mut u = cosines[n_layers - 2].mul_row(head_row)?;
        for l in (1..n_layers - 1).rev() {
            let wt = self.layers[l].weight.transpose()?;
            let propagated = u.matmul(wt)?.scale(self.omega0)?;
            u = cosines[l - 1].mul(propagated)?;
        }
        let first_spatial = self.layers[0].weight.slice_rows(0, spatial_dims)?;
        let grad = u
            .matmul(first_spatial.transpose()?)?
            .scale(self.omega0)?;
        Ok((head, grad))
    }
}

impl<'g> BoundLayer<'g> {
    fn fan_out_hint(&self) -> usize {
        self.weight.shape()[1]
    }
}

fn graph_of<'g>(t: Tensor<'g>) -> &'g Graph {
    t.graph_ref()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_gives_bit_identical_weights() {
        let a = SirenNet::init("h", 42, &[3, 8, 8, 1], 30.0).unwrap();
        let b = SirenNet::init("h", 42, &[3, 8, 8, 1], 30.0).unwrap();
        for (la, lb) in a.layers.iter().zip(b.layers.iter()) {
            assert_eq!(la.weight.data, lb.weight.data);
            assert_eq!(la.bias.data, lb.bias.data);
        }
        let c = SirenNet::init("h", 43, &[3, 8, 8, 1], 30.0).unwrap();
        assert_ne!(a.layers[0].weight.data, c.layers[0].weight.data);
    }

    #[test]
    fn first_layer_bound_with_unit_fan_in() {
        let net = SirenNet::init("h", 7, &[1, 16, 1], 30.0).unwrap();
        for w in &net.layers[0].weight.data {
            assert!(w.abs() < 1.0);
        }
    }

    #[test]
    fn empirical_weight_bounds_over_many_draws() {
        // ~1e4 draws per layer class across several seeds.
        let omega0 = 30.0;
        for seed in 0..40 {
            let net = SirenNet::init("h", seed, &[3, 64, 64, 1], omega0).unwrap();
            let first_limit = 1.0 / 3.0;
            for w in net.layers[0]
                .weight
                .data
                .iter()
                .chain(net.layers[0].bias.data.iter())
            {
                assert!(w.abs() <= first_limit);
            }
            for layer in &net.layers[1..] {
                let limit = (6.0 / layer.fan_in() as f64).sqrt() / omega0;
                for w in layer.weight.data.iter().chain(layer.bias.data.iter()) {
                    assert!(w.abs() <= limit);
                }
            }
        }
    }

    #[test]
    fn empty_layer_list_is_rejected() {
        assert!(SirenNet::init("h", 0, &[3], 30.0).is_err());
        assert!(SirenNet::init("h", 0, &[], 30.0).is_err());
    }

    #[test]
    fn single_point_matches_batched_evaluation() {
        let net = SirenNet::init("h", 5, &[2, 16, 16, 1], 30.0).unwrap();
        let pts = [[0.3, -0.4], [0.0, 0.9], [-0.7, 0.2]];
        let g = Graph::new();
        let bound = net.bind(&g).unwrap();
        let flat: Vec<f64> = pts.iter().flatten().copied().collect();
        let batch = bound
            .forward(g.constant(flat, vec![3, 2]).unwrap())
            .unwrap()
            .values();
        for (i, p) in pts.iter().enumerate() {
            let single = bound
                .forward(g.constant(p.to_vec(), vec![1, 2]).unwrap())
                .unwrap()
                .values();
            assert_eq!(single[0].to_bits(), batch[i].to_bits());
        }
    }

    #[test]
    fn zero_weight_network_outputs_bias_path() {
        let mut net = SirenNet::init("h", 5, &[2, 8, 1], 30.0).unwrap();
        for layer in &mut net.layers {
            layer.weight.data.fill(0.0);
            layer.bias.data.fill(0.0);
        }
        net.layers.last_mut().unwrap().bias.data[0] = 0.25;
        let g = Graph::new();
        let bound = net.bind(&g).unwrap();
        let out = bound
            .forward(g.constant(vec![0.4, -0.1], vec![1, 2]).unwrap())
            .unwrap();
        assert_eq!(out.values(), vec![0.25]);
    }

    #[test]
    fn one_neuron_gradient_matches_closed_form() {
        // h = sin(omega0 (w . x + b)) via a [2, 1, 1] net with identity head.
        let mut net = SirenNet::init("h", 1, &[2, 1, 1], 30.0).unwrap();
        let (w1, w2, b) = (0.02, -0.013, 0.005);
        net.layers[0].weight.data = vec![w1, w2];
        net.layers[0].bias.data = vec![b];
        net.layers[1].weight.data = vec![1.0];
        net.layers[1].bias.data = vec![0.0];

        let g = Graph::new();
        let bound = net.bind(&g).unwrap();
        let x = [0.3, 0.7];
        let coords = g.constant(x.to_vec(), vec![1, 2]).unwrap();
        let (h, grad) = bound.forward_with_input_gradient(coords, 2).unwrap();
        let arg = 30.0 * (w1 * x[0] + w2 * x[1] + b);
        assert!((h.values()[0] - arg.sin()).abs() < 1e-14);
        let gv = grad.values();
        assert!((gv[0] - 30.0 * w1 * arg.cos()).abs() < 1e-13);
        assert!((gv[1] - 30.0 * w2 * arg.cos()).abs() < 1e-13);

        // at a zero crossing of the argument the gradient is exactly omega0*w
        let x0 = [0.0, 0.0];
        let mut net0 = net.clone();
        net0.layers[0].bias.data = vec![0.0];
        let g0 = Graph::new();
        let bound0 = net0.bind(&g0).unwrap();
        let coords0 = g0.constant(x0.to_vec(), vec![1, 2]).unwrap();
        let (_, grad0) = bound0.forward_with_input_gradient(coords0, 2).unwrap();
        assert_eq!(grad0.values(), vec![30.0 * w1, 30.0 * w2]);
    }

    #[test]
    fn zero_weight_network_has_zero_gradient() {
        let mut net = SirenNet::init("h", 2, &[3, 8, 8, 1], 30.0).unwrap();
        for layer in &mut net.layers {
            layer.weight.data.fill(0.0);
        }
        let g = Graph::new();
        let bound = net.bind(&g).unwrap();
        let coords = g.constant(vec![0.1, 0.2, 0.3], vec![1, 3]).unwrap();
        let (_, grad) = bound.forward_with_input_gradient(coords, 2).unwrap();
        assert_eq!(grad.values(), vec![0.0, 0.0]);
    }
}
