//! First-order refraction model: per-pixel distortion from the height
//! field's spatial gradient, and rendering of clean/distorted frames
//! through the image field.
//!
//! Heights use the same normalized unit as image coordinates; one pixel is
//! about 2/(W-1) units, which makes amplitude settings interpretable.

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::fields::{BoundHeightField, BoundImageField};

/// Regular pixel-center grid in normalized coordinates.
///
/// Columns map to x1 = -1 + 2j/(W-1) and rows to x2 = -1 + 2i/(H-1),
/// endpoint-inclusive; a single row or column sits at 0. Normalized
/// timestamps follow the same rule over the frame index.
#[derive(Clone, Debug)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

/// t_i = -1 + 2i/(T-1); t = 0 when T = 1.
pub fn frame_times(count: usize) -> Vec<f64> {
    axis_coords(count)
}

fn axis_coords(count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![0.0];
    }
    (0..count)
        .map(|i| -1.0 + 2.0 * i as f64 / (count as f64 - 1.0))
        .collect()
}

impl Grid {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyDomain("grid with zero extent"));
        }
        Ok(Grid {
            width,
            height,
            xs: axis_coords(width),
            ys: axis_coords(height),
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Row-major [n, 2] pixel-center coordinates (x1, x2).
    pub fn coords(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.pixel_count() * 2);
        for &y in &self.ys {
            for &x in &self.xs {
                out.push(x);
                out.push(y);
            }
        }
        out
    }

    /// [n, 3] coordinates with the timestamp appended to every pixel.
    pub fn coords_at_time(&self, t: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.pixel_count() * 3);
        for &y in &self.ys {
            for &x in &self.xs {
                out.push(x);
                out.push(y);
                out.push(t);
            }
        }
        out
    }
}

/// Relative refraction index and the derived distortion factor.
#[derive(Clone, Copy, Debug)]
pub struct RefractionConstants {
    pub index: f64,
    /// c = 1 - 1/n; in (0, 1) for n > 1.
    pub factor: f64,
}

impl RefractionConstants {
    pub fn new(index: f64) -> Result<Self> {
        if !(index > 0.0) || !index.is_finite() {
            return Err(Error::Contract(format!(
                "refraction index must be positive and finite, got {index}"
            )));
        }
        Ok(RefractionConstants {
            index,
            factor: 1.0 - 1.0 / index,
        })
    }
}

/// Height and spatial gradient of one frame, kept on the tape.
pub struct FrameHeight<'g> {
    pub time: f64,
    /// [n, 1] heights at the grid points.
    pub heights: Tensor<'g>,
    /// [n, 2] spatial gradient at the grid points.
    pub gradient: Tensor<'g>,
}

/// Evaluate the height field on the full space-time grid once, returning
/// per-frame heights/gradients plus the mean height h0 (a graph scalar, so
/// gradients flow back into the field weights).
pub fn evaluate_surface<'g>(
    graph: &'g Graph,
    field: &BoundHeightField<'g>,
    grid: &Grid,
    times: &[f64],
) -> Result<(Tensor<'g>, Vec<FrameHeight<'g>>)> {
    if times.is_empty() {
        return Err(Error::EmptyDomain("surface evaluation with no timestamps"));
    }
    let mut frames = Vec::with_capacity(times.len());
    let mut mean_acc: Option<Tensor<'g>> = None;
    for &t in times {
        let coords = graph.constant(grid.coords_at_time(t), vec![grid.pixel_count(), 3])?;
        let (heights, gradient) = field.eval_with_gradient(coords)?;
        let frame_mean = heights.mean()?;
        mean_acc = Some(match mean_acc {
            Some(acc) => acc.add(frame_mean)?,
            None => frame_mean,
        });
        frames.push(FrameHeight {
            time: t,
            heights,
            gradient,
        });
    }
    let h0 = mean_acc.unwrap().scale(1.0 / times.len() as f64)?;
    Ok((h0, frames))
}

/// Mean of the height field over all grid points and timestamps,
/// graph-registered so h0 carries gradients to the weights.
pub fn mean_height<'g>(
    graph: &'g Graph,
    field: &BoundHeightField<'g>,
    grid: &Grid,
    times: &[f64],
) -> Result<Tensor<'g>> {
    Ok(evaluate_surface(graph, field, grid, times)?.0)
}

/// d = (1 - 1/n) * h0 * grad_h, elementwise over a [n, 2] gradient frame.
pub fn distortion_from_parts<'g>(
    h0: Tensor<'g>,
    gradient: Tensor<'g>,
    constants: RefractionConstants,
) -> Result<Tensor<'g>> {
    gradient.mul(h0.scale(constants.factor)?)
}

/// Distortion field of a single frame, evaluating the height field fresh.
/// `h0` must come from [`mean_height`] over the same field.
pub fn distortion<'g>(
    graph: &'g Graph,
    field: &BoundHeightField<'g>,
    grid: &Grid,
    t: f64,
    h0: Tensor<'g>,
    constants: RefractionConstants,
) -> Result<Tensor<'g>> {
    let coords = graph.constant(grid.coords_at_time(t), vec![grid.pixel_count(), 3])?;
    let (_, gradient) = field.eval_with_gradient(coords)?;
    distortion_from_parts(h0, gradient, constants)
}

/// Image field at the regular grid: the restored output.
pub fn render_clean<'g>(
    graph: &'g Graph,
    field: &BoundImageField<'g>,
    grid: &Grid,
) -> Result<Tensor<'g>> {
    let coords = graph.constant(grid.coords(), vec![grid.pixel_count(), 2])?;
    field.forward(coords)
}

/// Image field at x_reg + d: the predicted distorted frame, differentiable
/// with respect to both field's weights.
pub fn render_distorted<'g>(
    graph: &'g Graph,
    field: &BoundImageField<'g>,
    grid: &Grid,
    distortion_frame: Tensor<'g>,
) -> Result<Tensor<'g>> {
    let coords = graph.constant(grid.coords(), vec![grid.pixel_count(), 2])?;
    let warped = coords.add(distortion_frame)?;
    field.forward(warped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{HeightField, ImageField};

    #[test]
    fn grid_coordinates_are_increasing_and_symmetric() {
        let grid = Grid::new(64, 32).unwrap();
        for axis in [&grid.xs, &grid.ys] {
            for w in axis.windows(2) {
                assert!(w[1] > w[0]);
            }
            for (a, b) in axis.iter().zip(axis.iter().rev()) {
                assert!((a + b).abs() < 1e-15);
            }
        }
        assert_eq!(grid.xs[0], -1.0);
        assert_eq!(*grid.xs.last().unwrap(), 1.0);
        assert_eq!(frame_times(1), vec![0.0]);
        let t = frame_times(10);
        assert_eq!(t.len(), 10);
        assert_eq!(t[0], -1.0);
        assert_eq!(*t.last().unwrap(), 1.0);
    }

    #[test]
    fn refraction_constants_bounds() {
        let c = RefractionConstants::new(1.33).unwrap();
        assert!(c.factor > 0.0 && c.factor < 1.0);
        assert!(RefractionConstants::new(0.0).is_err());
        assert!(RefractionConstants::new(f64::NAN).is_err());
    }

    fn constant_height_field(value: f64) -> HeightField {
        let mut hf = HeightField::new(11, 8, 2, 30.0, value, 0.1).unwrap();
        // zero head -> raw = 0 -> h = offset everywhere
        let head = hf.net.layers.last_mut().unwrap();
        head.weight.data.fill(0.0);
        head.bias.data.fill(0.0);
        hf
    }

    #[test]
    fn mean_height_of_constant_field() {
        let hf = constant_height_field(1.3);
        let grid = Grid::new(8, 8).unwrap();
        let g = Graph::new();
        let bound = hf.bind(&g).unwrap();
        let h0 = mean_height(&g, &bound, &grid, &frame_times(3)).unwrap();
        assert!((h0.scalar_value() - 1.3).abs() < 1e-14);
    }

    #[test]
    fn mean_height_matches_loop_oracle() {
        let hf = HeightField::new(4, 12, 2, 30.0, 1.0, 0.1).unwrap();
        let grid = Grid::new(6, 5).unwrap();
        let times = frame_times(3);
        let g = Graph::new();
        let bound = hf.bind(&g).unwrap();
        let h0 = mean_height(&g, &bound, &grid, &times).unwrap().scalar_value();

        // independent loop: evaluate each point separately, average
        let mut sum = 0.0;
        let mut count = 0usize;
        for &t in &times {
            for &y in &grid.ys {
                for &x in &grid.xs {
                    let c = g.constant(vec![x, y, t], vec![1, 3]).unwrap();
                    sum += bound.eval(c).unwrap().values()[0];
                    count += 1;
                }
            }
        }
        assert!((h0 - sum / count as f64).abs() < 1e-12);
    }

    #[test]
    fn constant_field_has_zero_distortion_exactly() {
        let hf = constant_height_field(1.0);
        let grid = Grid::new(8, 8).unwrap();
        let g = Graph::new();
        let bound = hf.bind(&g).unwrap();
        let consts = RefractionConstants::new(1.33).unwrap();
        let h0 = mean_height(&g, &bound, &grid, &frame_times(2)).unwrap();
        let d = distortion(&g, &bound, &grid, 0.0, h0, consts).unwrap();
        assert!(d.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_ramp_distortion_matches_hand_value() {
        // h0 = 1, grad = (0.1, 0): d = (1 - 1/1.33) * 1 * 0.1 exactly.
        let g = Graph::new();
        let consts = RefractionConstants::new(1.33).unwrap();
        let h0 = g.scalar(1.0);
        let n = 16;
        let mut grad = Vec::with_capacity(n * 2);
        for _ in 0..n {
            grad.extend([0.1, 0.0]);
        }
        let grad = g.constant(grad, vec![n, 2]).unwrap();
        let d = distortion_from_parts(h0, grad, consts).unwrap().values();
        let hand = 0.024812030075187976;
        for pair in d.chunks(2) {
            assert!((pair[0] - hand).abs() < 1e-12, "{} vs {hand}", pair[0]);
            assert_eq!(pair[1], 0.0);
        }
    }

    #[test]
    fn sign_flip_of_field_leaves_distortion_unchanged() {
        // offset = 0 configuration: negating the final layer flips both h0
        // and grad h, leaving d = c * h0 * grad h invariant.
        let mut hf = HeightField::new(13, 10, 2, 30.0, 0.0, 0.1).unwrap();
        let grid = Grid::new(6, 6).unwrap();
        let times = frame_times(2);
        let consts = RefractionConstants::new(1.33).unwrap();

        let eval_d = |field: &HeightField| -> Vec<f64> {
            let g = Graph::new();
            let bound = field.bind(&g).unwrap();
            let (h0, frames) = evaluate_surface(&g, &bound, &grid, &times).unwrap();
            let mut out = Vec::new();
            for f in &frames {
                out.extend(
                    distortion_from_parts(h0, f.gradient, consts)
                        .unwrap()
                        .values(),
                );
            }
            out
        };

        let before = eval_d(&hf);
        let head = hf.net.layers.last_mut().unwrap();
        for w in head.weight.data.iter_mut() {
            *w = -*w;
        }
        for b in head.bias.data.iter_mut() {
            *b = -*b;
        }
        let after = eval_d(&hf);
        for (a, b) in before.iter().zip(after.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn distortion_scales_linearly_with_gradient_scale() {
        let hf1 = HeightField::new(19, 10, 2, 30.0, 1.0, 0.05).unwrap();
        let mut hf2 = hf1.clone();
        hf2.scale = 0.1; // exactly 2x

        let grid = Grid::new(5, 5).unwrap();
        let consts = RefractionConstants::new(1.33).unwrap();
        let g = Graph::new();
        let h0 = g.scalar(1.0); // pinned h0: linearity is in grad h alone

        let eval_d = |field: &HeightField| -> Vec<f64> {
            let bound = field.bind(&g).unwrap();
            let coords = g
                .constant(grid.coords_at_time(0.3), vec![grid.pixel_count(), 3])
                .unwrap();
            let (_, gradient) = bound.eval_with_gradient(coords).unwrap();
            distortion_from_parts(h0, gradient, consts)
                .unwrap()
                .values()
        };
        let d1 = eval_d(&hf1);
        let d2 = eval_d(&hf2);
        for (a, b) in d1.iter().zip(d2.iter()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn zero_distortion_render_equals_clean_render_bitwise() {
        let imf = ImageField::new(23, 12, 3, 30.0, 6, 8.0, true).unwrap();
        let grid = Grid::new(7, 5).unwrap();
        let g = Graph::new();
        let bound = imf.bind(&g).unwrap();
        let clean = render_clean(&g, &bound, &grid).unwrap().values();
        let zeros = g
            .constant(vec![0.0; grid.pixel_count() * 2], vec![grid.pixel_count(), 2])
            .unwrap();
        let distorted = render_distorted(&g, &bound, &grid, zeros)
            .unwrap()
            .values();
        assert_eq!(
            clean.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            distorted.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn constant_shift_render_equals_clean_render_of_shifted_grid() {
        let imf = ImageField::new(29, 12, 3, 30.0, 6, 8.0, true).unwrap();
        let grid = Grid::new(6, 4).unwrap();
        let delta = 0.125;
        let g = Graph::new();
        let bound = imf.bind(&g).unwrap();
        let n = grid.pixel_count();
        let mut shift = Vec::with_capacity(n * 2);
        for _ in 0..n {
            shift.extend([delta, 0.0]);
        }
        let d = g.constant(shift, vec![n, 2]).unwrap();
        let distorted = render_distorted(&g, &bound, &grid, d).unwrap().values();

        let mut shifted_coords = grid.coords();
        for pair in shifted_coords.chunks_mut(2) {
            pair[0] += delta;
        }
        let shifted = bound
            .forward(g.constant(shifted_coords, vec![n, 2]).unwrap())
            .unwrap()
            .values();
        assert_eq!(distorted, shifted);
    }

    #[test]
    fn render_matches_per_pixel_scripted_evaluation() {
        let imf = ImageField::new(31, 10, 3, 30.0, 5, 8.0, true).unwrap();
        let grid = Grid::new(4, 3).unwrap();
        let n = grid.pixel_count();
        let g = Graph::new();
        let bound = imf.bind(&g).unwrap();
        let mut state = 99u64;
        let mut small = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.05
        };
        let d_vals: Vec<f64> = (0..2 * n).map(|_| small()).collect();
        let d = g.constant(d_vals.clone(), vec![n, 2]).unwrap();
        let rendered = render_distorted(&g, &bound, &grid, d).unwrap().values();

        let coords = grid.coords();
        for p in 0..n {
            let x = coords[2 * p] + d_vals[2 * p];
            let y = coords[2 * p + 1] + d_vals[2 * p + 1];
            let single = bound
                .forward(g.constant(vec![x, y], vec![1, 2]).unwrap())
                .unwrap()
                .values();
            for q in 0..3 {
                assert!((rendered[3 * p + q] - single[q]).abs() < 1e-12);
            }
        }
    }
}
