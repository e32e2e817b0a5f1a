//! Random Fourier positional encoding for 2-d coordinates.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};

/// Fixed (untrained) frequency matrix B of shape [m, 2]; `encode` maps
/// x in R^2 to [sin(2 pi B x) || cos(2 pi B x)] of length 2m.
#[derive(Clone, Debug)]
pub struct FourierEncoding {
    /// Row-major [m, 2], entries drawn from N(0, bandwidth^2).
    pub frequencies: Vec<f64>,
    pub m: usize,
    pub bandwidth: f64,
}

impl FourierEncoding {
    pub fn init(seed: u64, m: usize, bandwidth: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::Contract(
                "fourier encoding needs at least one frequency".into(),
            ));
        }
        let normal = Normal::new(0.0, bandwidth)
            .map_err(|e| Error::Contract(format!("bad fourier bandwidth: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frequencies = (0..2 * m).map(|_| normal.sample(&mut rng)).collect();
        Ok(FourierEncoding {
            frequencies,
            m,
            bandwidth,
        })
    }

    pub fn from_frequencies(frequencies: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if frequencies.is_empty() || frequencies.len() % 2 != 0 {
            return Err(Error::Contract(format!(
                "fourier frequency table must hold m x 2 entries, got {}",
                frequencies.len()
            )));
        }
        let m = frequencies.len() / 2;
        Ok(FourierEncoding {
            frequencies,
            m,
            bandwidth,
        })
    }

    pub fn output_dim(&self) -> usize {
        2 * self.m
    }

    /// Lift coords [n, 2] to [n, 2m]. Differentiable in the coordinates.
    pub fn encode<'g>(&self, graph: &'g Graph, coords: Tensor<'g>) -> Result<Tensor<'g>> {
        if coords.shape().get(1) != Some(&2) {
            return Err(Error::Contract(format!(
                "fourier encoding expects [n, 2] coordinates, got {:?}",
                coords.shape()
            )));
        }
        // B^T as a [2, m] constant so the projection is coords . B^T.
        let mut bt = vec![0.0; 2 * self.m];
        for i in 0..self.m {
            bt[i] = self.frequencies[2 * i];
            bt[self.m + i] = self.frequencies[2 * i + 1];
        }
        let bt = graph.constant(bt, vec![2, self.m])?;
        let arg = coords.matmul(bt)?.scale(2.0 * std::f64::consts::PI)?;
        let (s, c) = graph.sin_cos(arg)?;
        s.concat_cols(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_frequencies_yield_zeros_then_ones() {
        let enc = FourierEncoding::from_frequencies(vec![0.0; 8], 8.0).unwrap();
        let g = Graph::new();
        let coords = g.constant(vec![0.37, -0.81], vec![1, 2]).unwrap();
        let out = enc.encode(&g, coords).unwrap().values();
        assert_eq!(out, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn paired_entries_satisfy_pythagorean_identity() {
        let enc = FourierEncoding::init(11, 16, 8.0).unwrap();
        let g = Graph::new();
        let coords = g
            .constant(vec![0.3, 0.4, -0.9, 0.1, 0.0, 0.77], vec![3, 2])
            .unwrap();
        let out = enc.encode(&g, coords).unwrap().values();
        for row in 0..3 {
            for i in 0..16 {
                let s = out[row * 32 + i];
                let c = out[row * 32 + 16 + i];
                assert!((s * s + c * c - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_per_entry_loop_oracle() {
        let enc = FourierEncoding::init(3, 8, 8.0).unwrap();
        let pts = [[0.12, -0.5], [0.9, 0.33]];
        let g = Graph::new();
        let flat: Vec<f64> = pts.iter().flatten().copied().collect();
        let coords = g.constant(flat, vec![2, 2]).unwrap();
        let out = enc.encode(&g, coords).unwrap().values();
        let two_pi = 2.0 * std::f64::consts::PI;
        for (row, p) in pts.iter().enumerate() {
            for i in 0..enc.m {
                let dot = enc.frequencies[2 * i] * p[0] + enc.frequencies[2 * i + 1] * p[1];
                let sin_expect = (two_pi * dot).sin();
                let cos_expect = (two_pi * dot).cos();
                assert!((out[row * 16 + i] - sin_expect).abs() < 1e-12);
                assert!((out[row * 16 + enc.m + i] - cos_expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn frequency_matrix_is_fixed_by_seed() {
        let a = FourierEncoding::init(3, 8, 8.0).unwrap();
        let b = FourierEncoding::init(3, 8, 8.0).unwrap();
        assert_eq!(a.frequencies, b.frequencies);
    }
}
