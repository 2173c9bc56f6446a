//! Mini-batch Adam training of a model against coil-combined magnitude
//! references, with per-epoch train/validation objectives.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::recon::{check_compatible, pack_slice_into, zero_filled, ImageDomainMseObjective};
use super::Model;
use crate::autodiff::{adam_step, lr_interp, AdamState, Mode, Objective};
use crate::error::{Error, Result};
use crate::fourier::ifft2c;
use crate::kspace::{apply_mask, rss_combine};
use crate::sampling::CartesianMask;
use crate::tensor::Tensor;
use crate::volume::{ComplexVolume, RealImage};

/// One training case: the undersampled k-space input and the magnitude
/// reference per slice.
#[derive(Clone, Debug)]
pub struct TrainVolume {
    pub undersampled: ComplexVolume,
    pub truth: Vec<RealImage>,
}

impl TrainVolume {
    /// Build a case from fully sampled k-space and a Cartesian mask.
    pub fn from_masked(full_kspace: &ComplexVolume, mask: &CartesianMask) -> Result<Self> {
        let undersampled = apply_mask(full_kspace, mask)?;
        let truth = rss_combine(&ifft2c(full_kspace)?)?;
        Ok(TrainVolume {
            undersampled,
            truth,
        })
    }

    /// Build a case from an already-undersampled volume (e.g. regridded
    /// radial data) and its fully sampled counterpart.
    pub fn from_pair(undersampled: ComplexVolume, full_kspace: &ComplexVolume) -> Result<Self> {
        let truth = rss_combine(&ifft2c(full_kspace)?)?;
        Ok(TrainVolume {
            undersampled,
            truth,
        })
    }

    /// The zero-filled baseline images for this case.
    pub fn zero_filled(&self) -> Result<Vec<RealImage>> {
        zero_filled(&self.undersampled)
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainSet {
    pub volumes: Vec<TrainVolume>,
}

impl TrainSet {
    pub fn n_samples(&self) -> usize {
        self.volumes.iter().map(|v| v.undersampled.n_slices()).sum()
    }

    fn samples(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.n_samples());
        for (vi, v) in self.volumes.iter().enumerate() {
            for s in 0..v.undersampled.n_slices() {
                out.push((vi, s));
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct TrainHyper {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl TrainHyper {
    /// Published defaults: batch 16, learning rate 1e-4 decaying to 1e-5,
    /// weight regularization 1e-4.
    pub fn new(epochs: usize, seed: u64) -> Self {
        TrainHyper {
            batch_size: 16,
            epochs,
            lr_start: 1e-4,
            lr_end: 1e-5,
            weight_decay: 1e-4,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Size-normalized training objective (mean squared pixel error).
    pub train: f64,
    /// Size-normalized validation objective; NaN when no validation data.
    pub validation: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub trace: Vec<EpochLoss>,
}

fn make_batch(
    model: &Model,
    set: &TrainSet,
    ids: &[(usize, usize)],
) -> Result<(Tensor<f32>, Vec<RealImage>)> {
    let size = model.config.input_size;
    let mut input = Tensor::zeros(ids.len(), model.config.input_channels(), size, size);
    let mut truth = Vec::with_capacity(ids.len());
    for (row, &(vi, s)) in ids.iter().enumerate() {
        let vol = &set.volumes[vi];
        pack_slice_into(model, &vol.undersampled, s, &mut input, row)?;
        truth.push(vol.truth[s].clone());
    }
    Ok((input, truth))
}

fn eval_objective(model: &Model, set: &TrainSet, batch_size: usize) -> Result<f64> {
    let samples = set.samples();
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for chunk in samples.chunks(batch_size) {
        let (input, truth) = make_batch(model, set, chunk)?;
        let objective = ImageDomainMseObjective::for_model(model, truth)?;
        let exec = model.graph.forward(&input, Mode::Eval)?;
        let loss = Objective::<f32>::value(&objective, &model.graph, &exec)?;
        total += loss * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Minimize the image-domain MSE by Adam. Deterministic per seed. On a
/// non-finite loss or gradient the parameters are rolled back to the end of
/// the last completed epoch and a divergence error is returned.
pub fn train(
    model: &mut Model,
    train_set: &TrainSet,
    val_set: &TrainSet,
    hyper: &TrainHyper,
) -> Result<TrainOutput> {
    if train_set.volumes.is_empty() {
        return Err(Error::Empty("train: empty dataset".into()));
    }
    for v in train_set.volumes.iter().chain(val_set.volumes.iter()) {
        check_compatible(model, &v.undersampled)?;
        if v.truth.len() != v.undersampled.n_slices() {
            return Err(Error::ShapeMismatch(
                "train: reference slice count mismatch".into(),
            ));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut adam = AdamState::new(model.graph.params(), hyper.lr_start, hyper.weight_decay);
    let mut samples = train_set.samples();
    let mut trace = Vec::with_capacity(hyper.epochs);
    let mut snapshot: Vec<Vec<f32>> = model
        .graph
        .params()
        .iter()
        .map(|p| p.values.clone())
        .collect();

    for epoch in 0..hyper.epochs {
        adam.lr = lr_interp(epoch, hyper.epochs, hyper.lr_start, hyper.lr_end);
        for i in (1..samples.len()).rev() {
            let j = rng.gen_range(0..=i);
            samples.swap(i, j);
        }

        let mut loss_sum = 0.0;
        for chunk in samples.chunks(hyper.batch_size) {
            let (input, truth) = make_batch(model, train_set, chunk)?;
            let objective = ImageDomainMseObjective::for_model(model, truth)?;
            let mut exec = model.graph.forward(&input, Mode::Train)?;
            let loss = Objective::<f32>::value(&objective, &model.graph, &exec)?;
            if !loss.is_finite() {
                restore(model, &snapshot);
                return Err(Error::Diverged { epoch });
            }
            model.graph.apply_bn_updates(&exec);
            let (node, seed) = Objective::<f32>::seed(&objective, &model.graph, &exec)?;
            model.graph.backward_with_seed(&mut exec, node, seed)?;
            if adam_step(&mut adam, model.graph.params_mut()).is_err() {
                restore(model, &snapshot);
                return Err(Error::Diverged { epoch });
            }
            loss_sum += loss * chunk.len() as f64;
        }

        let train_obj = loss_sum / samples.len() as f64;
        let val_obj = eval_objective(model, val_set, hyper.batch_size)?;
        trace.push(EpochLoss {
            epoch,
            train: train_obj,
            validation: val_obj,
        });
        for (dst, p) in snapshot.iter_mut().zip(model.graph.params()) {
            dst.copy_from_slice(&p.values);
        }
    }
    Ok(TrainOutput { trace })
}

fn restore(model: &mut Model, snapshot: &[Vec<f32>]) {
    for (p, src) in model.graph.params_mut().iter_mut().zip(snapshot.iter()) {
        p.values.copy_from_slice(src);
    }
}
