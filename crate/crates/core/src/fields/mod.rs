//! The two neural fields: a spatio-temporal surface-height field and a
//! static underlying-image field, plus weight export/import.

mod fourier;
mod siren;

pub use fourier::FourierEncoding;
pub use siren::{BoundLayer, BoundSiren, SirenLayer, SirenNet};

use crate::autodiff::{Graph, ParamArray, Tensor};
use crate::error::{Error, Result};

/// Surface-height field h(x1, x2, t) = offset + scale * raw(x1, x2, t),
/// raw being a scalar-output SIREN over (x, t).
///
/// The affine output map keeps heights near `offset` (the mean water height
/// is large compared to the fluctuations) and rules out the degenerate
/// all-zero-height solution that would null the distortion model.
#[derive(Clone, Debug)]
pub struct HeightField {
    pub net: SirenNet,
    pub offset: f64,
    pub scale: f64,
}

impl HeightField {
    pub fn new(
        seed: u64,
        hidden_width: usize,
        hidden_layers: usize,
        omega0: f64,
        offset: f64,
        scale: f64,
    ) -> Result<Self> {
        let mut dims = vec![3];
        dims.extend(std::iter::repeat(hidden_width).take(hidden_layers));
        dims.push(1);
        Ok(HeightField {
            net: SirenNet::init("height", seed, &dims, omega0)?,
            offset,
            scale,
        })
    }

    pub fn params(&self) -> Vec<&ParamArray> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamArray> {
        self.net.params_mut()
    }

    pub fn bind<'g>(&self, graph: &'g Graph) -> Result<BoundHeightField<'g>> {
        Ok(BoundHeightField {
            net: self.net.bind(graph)?,
            offset: self.offset,
            scale: self.scale,
        })
    }
}

pub struct BoundHeightField<'g> {
    pub net: BoundSiren<'g>,
    pub offset: f64,
    pub scale: f64,
}

impl<'g> BoundHeightField<'g> {
    pub fn leaves(&self) -> Vec<Tensor<'g>> {
        self.net.leaves()
    }

    /// Heights at coords [n, 3] (x1, x2, t) as [n, 1].
    pub fn eval(&self, coords: Tensor<'g>) -> Result<Tensor<'g>> {
        self.check_coords(&coords)?;
        self.net
            .forward(coords)?
            .scale(self.scale)?
            .shift(self.offset)
    }

    /// Heights plus the spatial gradient (dh/dx1, dh/dx2) as ([n,1], [n,2]).
    /// Both stay on the tape, differentiable w.r.t. the weights.
    pub fn eval_with_gradient(&self, coords: Tensor<'g>) -> Result<(Tensor<'g>, Tensor<'g>)> {
        self.check_coords(&coords)?;
        let (raw, raw_grad) = self.net.forward_with_input_gradient(coords, 2)?;
        let h = raw.scale(self.scale)?.shift(self.offset)?;
        let grad = raw_grad.scale(self.scale)?;
        Ok((h, grad))
    }

    fn check_coords(&self, coords: &Tensor<'g>) -> Result<()> {
        if coords.shape().get(1) != Some(&3) {
            return Err(Error::Contract(format!(
                "height field expects [n, 3] coordinates, got {:?}",
                coords.shape()
            )));
        }
        Ok(())
    }
}

/// Static image field I(x1, x2) -> RGB in [0, 1]: an optional Fourier lift
/// followed by a SIREN with a sigmoid-squashed linear head.
///
/// With the encoding disabled an extra sinusoidal layer takes its place and
/// the network consumes raw coordinates.
#[derive(Clone, Debug)]
pub struct ImageField {
    pub encoding: Option<FourierEncoding>,
    pub net: SirenNet,
}

impl ImageField {
    pub fn new(
        seed: u64,
        hidden_width: usize,
        hidden_layers: usize,
        omega0: f64,
        fourier_m: usize,
        fourier_bandwidth: f64,
        fourier: bool,
    ) -> Result<Self> {
        let (encoding, input_dim, hidden_layers) = if fourier {
            let enc = FourierEncoding::init(seed ^ 0x5EED_F0F0, fourier_m, fourier_bandwidth)?;
            let dim = enc.output_dim();
            (Some(enc), dim, hidden_layers)
        } else {
            (None, 2, hidden_layers + 1)
        };
        let mut dims = vec![input_dim];
        dims.extend(std::iter::repeat(hidden_width).take(hidden_layers));
        dims.push(3);
        Ok(ImageField {
            encoding,
            net: SirenNet::init("image", seed, &dims, omega0)?,
        })
    }

    pub fn params(&self) -> Vec<&ParamArray> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamArray> {
        self.net.params_mut()
    }

    pub fn bind<'g>(&self, graph: &'g Graph) -> Result<BoundImageField<'g>> {
        Ok(BoundImageField {
            encoding: self.encoding.clone(),
            net: self.net.bind(graph)?,
        })
    }
}

pub struct BoundImageField<'g> {
    encoding: Option<FourierEncoding>,
    pub net: BoundSiren<'g>,
}

impl<'g> BoundImageField<'g> {
    pub fn leaves(&self) -> Vec<Tensor<'g>> {
        self.net.leaves()
    }

    /// RGB at coords [n, 2], each channel squashed to (0, 1).
    pub fn forward(&self, coords: Tensor<'g>) -> Result<Tensor<'g>> {
        if coords.shape().get(1) != Some(&2) {
            return Err(Error::Contract(format!(
                "image field expects [n, 2] coordinates, got {:?}",
                coords.shape()
            )));
        }
        let graph = coords.graph_ref();
        let lifted = match &self.encoding {
            Some(enc) => enc.encode(graph, coords)?,
            None => coords,
        };
        self.net.forward(lifted)?.sigmoid()
    }
}

/// Flat list of named weight arrays for export; one record per layer matrix
/// or bias, plus the frequency table when a Fourier encoding is present.
pub fn export_arrays(height: &HeightField, image: &ImageField) -> Vec<ParamArray> {
    let mut out: Vec<ParamArray> = Vec::new();
    for p in height.params() {
        out.push(p.clone());
    }
    out.push(ParamArray::new(
        "height.output_affine",
        vec![2],
        vec![height.offset, height.scale],
    ));
    for p in image.params() {
        out.push(p.clone());
    }
    if let Some(enc) = &image.encoding {
        out.push(ParamArray::new(
            "image.encoding",
            vec![enc.m, 2],
            enc.frequencies.clone(),
        ));
        out.push(ParamArray::new(
            "image.encoding_bandwidth",
            vec![1],
            vec![enc.bandwidth],
        ));
    }
    out
}

/// Rebuild both fields from exported arrays (shapes define the architecture).
pub fn import_arrays(arrays: &[ParamArray], omega0: f64) -> Result<(HeightField, ImageField)> {
    let find = |name: &str| -> Result<&ParamArray> {
        arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Format(format!("weights: missing array '{name}'")))
    };

    let rebuild_net = |prefix: &str| -> Result<SirenNet> {
        let mut layers = Vec::new();
        for idx in 0.. {
            let wname = format!("{prefix}.layer{idx}.weight");
            let Some(w) = arrays.iter().find(|a| a.name == wname) else {
                break;
            };
            let b = find(&format!("{prefix}.layer{idx}.bias"))?;
            layers.push(SirenLayer {
                weight: w.clone(),
                bias: b.clone(),
                sinusoidal: true,
            });
        }
        if layers.is_empty() {
            return Err(Error::Format(format!("weights: no layers for '{prefix}'")));
        }
        layers.last_mut().unwrap().sinusoidal = false;
        Ok(SirenNet { layers, omega0 })
    };

    let affine = find("height.output_affine")?;
    let height = HeightField {
        net: rebuild_net("height")?,
        offset: affine.data[0],
        scale: affine.data[1],
    };
    let encoding = match arrays.iter().find(|a| a.name == "image.encoding") {
        Some(freq) => {
            let bw = find("image.encoding_bandwidth")?.data[0];
            Some(FourierEncoding::from_frequencies(freq.data.clone(), bw)?)
        }
        None => None,
    };
    let image = ImageField {
        encoding,
        net: rebuild_net("image")?,
    };
    Ok((height, image))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
    }

    #[test]
    fn height_field_zero_net_outputs_offset() {
        let mut hf = HeightField::new(1, 8, 2, 30.0, 1.0, 0.1).unwrap();
        for p in hf.params_mut() {
            p.data.fill(0.0);
        }
        let g = Graph::new();
        let bound = hf.bind(&g).unwrap();
        let coords = g.constant(vec![0.2, -0.3, 0.5], vec![1, 3]).unwrap();
        let h = bound.eval(coords).unwrap();
        assert_eq!(h.values(), vec![1.0]);
    }

    #[test]
    fn height_stays_within_affine_bound() {
        let hf = HeightField::new(3, 16, 2, 30.0, 1.0, 0.1).unwrap();
        // |raw| <= sum |w_head| + |b_head| because |sin| <= 1
        let head = hf.net.layers.last().unwrap();
        let m: f64 = head.weight.data.iter().map(|w| w.abs()).sum::<f64>()
            + head.bias.data[0].abs();
        let g = Graph::new();
        let bound = hf.bind(&g).unwrap();
        let mut coords = Vec::new();
        for i in 0..100 {
            let v = (i as f64) / 50.0 - 1.0;
            coords.extend([v, -v, (v * 7.0).sin()]);
        }
        let h = bound
            .eval(g.constant(coords, vec![100, 3]).unwrap())
            .unwrap();
        for v in h.values() {
            assert!(v >= 1.0 - 0.1 * m - 1e-12 && v <= 1.0 + 0.1 * m + 1e-12);
        }
    }

    #[test]
    fn spatial_gradient_matches_finite_differences_at_100_points() {
        let hf = HeightField::new(9, 24, 2, 30.0, 1.0, 0.1).unwrap();
        let g = Graph::new();
        let bound = hf.bind(&g).unwrap();

        let mut state = 0x1234_5678_9ABC_DEF0u64;
        let mut unit = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };

        let step = 1e-5;
        for _ in 0..100 {
            let p = [unit(), unit(), unit()];
            let coords = g.constant(p.to_vec(), vec![1, 3]).unwrap();
            let (_, grad) = bound.eval_with_gradient(coords).unwrap();
            let gv = grad.values();
            for axis in 0..2 {
                let mut plus = p;
                let mut minus = p;
                plus[axis] += step;
                minus[axis] -= step;
                let hp = bound
                    .eval(g.constant(plus.to_vec(), vec![1, 3]).unwrap())
                    .unwrap()
                    .values()[0];
                let hm = bound
                    .eval(g.constant(minus.to_vec(), vec![1, 3]).unwrap())
                    .unwrap()
                    .values()[0];
                let fd = (hp - hm) / (2.0 * step);
                assert!(
                    rel_err(gv[axis], fd) < 1e-6,
                    "axis {axis}: analytic {} vs fd {fd}",
                    gv[axis]
                );
            }
        }
    }

    #[test]
    fn gradient_graph_is_differentiable_wrt_weights() {
        // d/d theta of the spatial gradient: perturb one weight, recompute
        // the gradient field, compare against backward through the chain.
        let hf = HeightField::new(17, 12, 2, 30.0, 1.0, 0.1).unwrap();
        let coords_data = vec![0.31, -0.44, 0.12, -0.05, 0.66, -0.91];

        let eval_grad_sum = |field: &HeightField| -> f64 {
            let g = Graph::new();
            let bound = field.bind(&g).unwrap();
            let coords = g.constant(coords_data.clone(), vec![2, 3]).unwrap();
            let (_, grad) = bound.eval_with_gradient(coords).unwrap();
            grad.values().iter().sum()
        };

        let g = Graph::new();
        let bound = hf.bind(&g).unwrap();
        let coords = g.constant(coords_data.clone(), vec![2, 3]).unwrap();
        let (_, grad) = bound.eval_with_gradient(coords).unwrap();
        // sum of gradient entries = mean * count
        let objective = grad.mean().unwrap().scale(grad.len() as f64).unwrap();
        g.backward(objective).unwrap();

        let leaves = bound.leaves();
        let step = 1e-6;
        for (pi, leaf) in leaves.iter().enumerate() {
            let analytic = leaf.grad();
            // probe a few entries of each parameter
            for ei in (0..analytic.len()).step_by(analytic.len().max(5) / 5) {
                let mut plus = hf.clone();
                plus.params_mut()[pi].data[ei] += step;
                let mut minus = hf.clone();
                minus.params_mut()[pi].data[ei] -= step;
                let fd = (eval_grad_sum(&plus) - eval_grad_sum(&minus)) / (2.0 * step);
                assert!(
                    rel_err(analytic[ei], fd) < 1e-4,
                    "param {pi} entry {ei}: analytic {} vs fd {fd}",
                    analytic[ei]
                );
            }
        }
    }

    #[test]
    fn image_field_output_is_in_unit_interval() {
        let imf = ImageField::new(5, 16, 3, 30.0, 8, 8.0, true).unwrap();
        let g = Graph::new();
        let bound = imf.bind(&g).unwrap();
        let mut coords = Vec::new();
        for i in 0..50 {
            let v = (i as f64) / 10.0 - 2.5; // deliberately beyond [-1, 1]
            coords.extend([v, -0.3 * v]);
        }
        let rgb = bound
            .forward(g.constant(coords, vec![50, 2]).unwrap())
            .unwrap();
        for v in rgb.values() {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn fourier_off_substitutes_an_extra_sinusoidal_layer() {
        let imf = ImageField::new(5, 16, 3, 30.0, 8, 8.0, false).unwrap();
        assert!(imf.encoding.is_none());
        assert_eq!(imf.net.input_dim(), 2);
        assert_eq!(imf.net.layers.len(), 5); // 4 hidden + head
        let g = Graph::new();
        let bound = imf.bind(&g).unwrap();
        let rgb = bound
            .forward(g.constant(vec![0.1, 0.2], vec![1, 2]).unwrap())
            .unwrap();
        assert_eq!(rgb.values().len(), 3);
    }

    #[test]
    fn export_import_round_trip_preserves_evaluation() {
        let hf = HeightField::new(21, 12, 2, 30.0, 1.0, 0.1).unwrap();
        let imf = ImageField::new(22, 12, 3, 30.0, 6, 8.0, true).unwrap();
        let arrays = export_arrays(&hf, &imf);
        let (hf2, imf2) = import_arrays(&arrays, 30.0).unwrap();

        let g = Graph::new();
        let coords3 = g.constant(vec![0.3, -0.2, 0.7], vec![1, 3]).unwrap();
        let coords2 = g.constant(vec![0.3, -0.2], vec![1, 2]).unwrap();
        let h1 = hf.bind(&g).unwrap().eval(coords3).unwrap().values();
        let h2 = hf2.bind(&g).unwrap().eval(coords3).unwrap().values();
        assert_eq!(h1, h2);
        let i1 = imf.bind(&g).unwrap().forward(coords2).unwrap().values();
        let i2 = imf2.bind(&g).unwrap().forward(coords2).unwrap().values();
        assert_eq!(i1, i2);
    }
}
