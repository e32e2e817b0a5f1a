//! Two-stage unsupervised fitting.
//!
//! Stage 1 initializes the weights: the height field is pushed toward zero
//! distortion and the image field toward the average observed frame. Stage 2
//! minimizes the re-rendering error of all observed frames through the
//! refraction model. A three-term variant of the stage-2 loss (adding a
//! raster-warped prediction and its consistency term) is available as an
//! ablation mode.

use std::time::Instant;

use crate::autodiff::{Adam, AdamConfig, Graph, Tensor};
use crate::error::{Error, Result};
use crate::fields::{BoundHeightField, BoundImageField, HeightField, ImageField};
use crate::refraction::{
    distortion_from_parts, evaluate_surface, frame_times, render_clean, Grid,
    RefractionConstants,
};
use crate::wavesim::Raster;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMode {
    /// Single re-rendering term.
    L1,
    /// Three pairwise terms over the rendered prediction, the raster-warped
    /// prediction, and the observation.
    Ndir3,
}

impl LossMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(LossMode::L1),
            "ndir3" => Ok(LossMode::Ndir3),
            other => Err(Error::Config(format!(
                "unknown loss_mode '{other}' (expected l1 | ndir3)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossMode::L1 => "l1",
            LossMode::Ndir3 => "ndir3",
        }
    }
}

/// Everything the trainer needs to know; field hyperparameters included.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub seed: u64,
    /// Frames per sequence (T). Extra input frames are ignored.
    pub frames: usize,
    pub loss_mode: LossMode,
    pub n_refraction: f64,
    pub omega0: f64,
    pub height_hidden: usize,
    pub image_hidden: usize,
    pub fourier_m: usize,
    pub fourier_bandwidth: f64,
    pub height_offset: f64,
    pub height_scale: f64,
    pub lr_stage1: f64,
    pub iters_stage1: usize,
    pub lr_stage2: f64,
    pub iters_stage2: usize,
    pub fourier: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            frames: 10,
            loss_mode: LossMode::L1,
            n_refraction: 1.33,
            omega0: 30.0,
            height_hidden: 256,
            image_hidden: 256,
            fourier_m: 128,
            fourier_bandwidth: 8.0,
            height_offset: 1.0,
            height_scale: 0.1,
            lr_stage1: 1e-4,
            iters_stage1: 500,
            lr_stage2: 1e-4,
            iters_stage2: 2000,
            fourier: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::Config(
                "frames must be >= 2 (a single frame carries no parallax over time)".into(),
            ));
        }
        if !(self.lr_stage1 > 0.0 && self.lr_stage2 > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.iters_stage1 + self.iters_stage2 == 0 {
            return Err(Error::Config("at least one training iteration required".into()));
        }
        if self.height_hidden == 0 || self.image_hidden == 0 {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if self.fourier && self.fourier_m == 0 {
            return Err(Error::Config("fourier_m must be positive".into()));
        }
        if !(self.height_scale > 0.0) {
            return Err(Error::Config("height_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LogEntry {
    pub stage: u8,
    pub iteration: usize,
    pub loss: f64,
    /// Seconds since training started; in-memory diagnostic only, never
    /// serialized (outputs must be byte-reproducible).
    pub elapsed: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn stage_losses(&self, stage: u8) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| e.stage == stage)
            .map(|e| e.loss)
            .collect()
    }
}

pub struct TrainedModel {
    pub height: HeightField,
    pub image: ImageField,
    pub log: TrainLog,
    /// Fields as they stood when stage 1 finished.
    pub stage1_snapshot: Option<(HeightField, ImageField)>,
}

/// Stage-1 loss: mean |d| over frames plus mean per-frame L1 between the
/// clean rendering and each observation. Every L1 norm is mean-reduced and
/// frame terms are averaged, so magnitudes are resolution- and
/// length-independent.
pub fn init_loss<'g>(
    graph: &'g Graph,
    height: &BoundHeightField<'g>,
    image: &BoundImageField<'g>,
    frames: &[Tensor<'g>],
    grid: &Grid,
    times: &[f64],
    constants: RefractionConstants,
) -> Result<Tensor<'g>> {
    let (h0, surface) = evaluate_surface(graph, height, grid, times)?;
    let h0c = h0.scale(constants.factor)?;
    let mut distortion_term: Option<Tensor<'g>> = None;
    for frame in &surface {
        let d = frame.gradient.mul(h0c)?;
        let term = d.abs()?.mean()?;
        distortion_term = Some(match distortion_term {
            Some(acc) => acc.add(term)?,
            None => term,
        });
    }
    let clean = render_clean(graph, image, grid)?;
    let mut image_term: Option<Tensor<'g>> = None;
    for frame in frames {
        let term = clean.sub(*frame)?.abs()?.mean()?;
        image_term = Some(match image_term {
            Some(acc) => acc.add(term)?,
            None => term,
        });
    }
    let t = times.len() as f64;
    distortion_term
        .unwrap()
        .scale(1.0 / t)?
        .add(image_term.unwrap().scale(1.0 / t)?)
}

/// Stage-2 loss: mean over frames of the mean L1 between each re-rendered
/// distorted frame and its observation.
pub fn main_loss<'g>(
    graph: &'g Graph,
    height: &BoundHeightField<'g>,
    image: &BoundImageField<'g>,
    frames: &[Tensor<'g>],
    grid: &Grid,
    times: &[f64],
    constants: RefractionConstants,
) -> Result<Tensor<'g>> {
    let (h0, surface) = evaluate_surface(graph, height, grid, times)?;
    let h0c = h0.scale(constants.factor)?;
    let coords = graph.constant(grid.coords(), vec![grid.pixel_count(), 2])?;
    let mut acc: Option<Tensor<'g>> = None;
    for (surf, frame) in surface.iter().zip(frames.iter()) {
        let d = surf.gradient.mul(h0c)?;
        let warped_coords = coords.add(d)?;
        let predicted = image.forward(warped_coords)?;
        let term = predicted.sub(*frame)?.abs()?.mean()?;
        acc = Some(match acc {
            Some(a) => a.add(term)?,
            None => term,
        });
    }
    acc.unwrap().scale(1.0 / times.len() as f64)
}

/// Three-term stage-2 loss: for each frame compare (rendered prediction,
/// observation), (raster-warped prediction, observation), and the two
/// predictions against each other. The warped prediction resamples the
/// clean rendering with the bilinear sampler.
pub fn ndir_loss<'g>(
    graph: &'g Graph,
    height: &BoundHeightField<'g>,
    image: &BoundImageField<'g>,
    frames: &[Tensor<'g>],
    grid: &Grid,
    times: &[f64],
    constants: RefractionConstants,
) -> Result<Tensor<'g>> {
    let (h0, surface) = evaluate_surface(graph, height, grid, times)?;
    let h0c = h0.scale(constants.factor)?;
    let coords = graph.constant(grid.coords(), vec![grid.pixel_count(), 2])?;
    let clean = render_clean(graph, image, grid)?;
    let mut acc: Option<Tensor<'g>> = None;
    for (surf, frame) in surface.iter().zip(frames.iter()) {
        let d = surf.gradient.mul(h0c)?;
        let warped_coords = coords.add(d)?;
        let predicted = image.forward(warped_coords)?;
        let resampled =
            graph.sample_bilinear(clean, grid.height, grid.width, warped_coords)?;
        let term = predicted
            .sub(*frame)?
            .abs()?
            .mean()?
            .add(resampled.sub(*frame)?.abs()?.mean()?)?
            .add(predicted.sub(resampled)?.abs()?.mean()?)?;
        acc = Some(match acc {
            Some(a) => a.add(term)?,
            None => term,
        });
    }
    acc.unwrap().scale(1.0 / times.len() as f64)
}

/// Fit both fields to an observed sequence. Deterministic given the seed.
pub fn train(frames: &[Raster], config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    if frames.len() < 2 {
        return Err(Error::Input(format!(
            "training needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    let first = &frames[0];
    for (i, f) in frames.iter().enumerate() {
        if f.width != first.width || f.height != first.height || f.channels != 3 {
            return Err(Error::Input(format!(
                "frame {i} has shape {}x{}x{}, expected {}x{}x3",
                f.width, f.height, f.channels, first.width, first.height
            )));
        }
    }
    let t_count = config.frames.min(frames.len());
    let frames = &frames[..t_count];
    let grid = Grid::new(first.width, first.height)?;
    let times = frame_times(t_count);
    let constants = RefractionConstants::new(config.n_refraction)?;

    let mut height = HeightField::new(
        config.seed,
        config.height_hidden,
        2,
        config.omega0,
        config.height_offset,
        config.height_scale,
    )?;
    let mut image = ImageField::new(
        config.seed.wrapping_add(1),
        config.image_hidden,
        3,
        config.omega0,
        config.fourier_m,
        config.fourier_bandwidth,
        config.fourier,
    )?;

    let mut log = TrainLog::default();
    let started = Instant::now();
    let mut stage1_snapshot = None;

    for (stage, iters, lr) in [
        (1u8, config.iters_stage1, config.lr_stage1),
        (2u8, config.iters_stage2, config.lr_stage2),
    ] {
        let mut adam = Adam::new(AdamConfig {
            learning_rate: lr,
            ..AdamConfig::default()
        })?;
        for iteration in 0..iters {
            let graph = Graph::new();
            let bound_h = height.bind(&graph)?;
            let bound_i = image.bind(&graph)?;
            let frame_tensors: Vec<Tensor> = frames
                .iter()
                .map(|f| {
                    graph.constant(f.data.clone(), vec![grid.pixel_count(), 3])
                })
                .collect::<Result<_>>()?;
            let loss = match (stage, config.loss_mode) {
                (1, _) => init_loss(
                    &graph, &bound_h, &bound_i, &frame_tensors, &grid, &times, constants,
                )?,
                (_, LossMode::L1) => main_loss(
                    &graph, &bound_h, &bound_i, &frame_tensors, &grid, &times, constants,
                )?,
                (_, LossMode::Ndir3) => ndir_loss(
                    &graph, &bound_h, &bound_i, &frame_tensors, &grid, &times, constants,
                )?,
            };
            let loss_value = loss.scalar_value();
            if !loss_value.is_finite() {
                return Err(Error::NanLoss { iteration, stage });
            }
            graph.backward(loss)?;

            let leaves: Vec<Tensor> = bound_h
                .leaves()
                .into_iter()
                .chain(bound_i.leaves())
                .collect();
            let grads: Vec<Vec<f64>> = leaves.iter().map(|l| l.grad()).collect();
            drop(graph);

            let mut params = height.params_mut();
            params.extend(image.params_mut());
            adam.step(&mut params, &grads)?;

            log.entries.push(LogEntry {
                stage,
                iteration,
                loss: loss_value,
                elapsed: started.elapsed().as_secs_f64(),
            });
        }
        if stage == 1 {
            stage1_snapshot = Some((height.clone(), image.clone()));
        }
    }

    Ok(TrainedModel {
        height,
        image,
        log,
        stage1_snapshot,
    })
}
