//! End-to-end reconstruction, the image-domain training objective (MSE on
//! coil-combined magnitudes, differentiated through the inverse FFT), and
//! per-channel input response.

use num_complex::Complex;

use super::{Model, ModelKind};
use crate::autodiff::{run_backward, Execution, Mode, NetworkGraph, NodeId, Objective};
use crate::error::{Error, Result};
use crate::fourier::{centered_fft2_f64, ifft2c};
use crate::kspace::{pack_channels_into, rss_combine, unpack_batch_item};
use crate::tensor::{Scalar, Tensor};
use crate::volume::{ComplexVolume, Domain, RealImage};

/// Mean of squared pixel differences.
pub fn loss_mse(recon: &RealImage, truth: &RealImage) -> Result<f64> {
    if recon.height != truth.height || recon.width != truth.width {
        return Err(Error::ShapeMismatch(format!(
            "loss_mse: {}x{} vs {}x{}",
            recon.height, recon.width, truth.height, truth.width
        )));
    }
    let n = recon.pixels.len() as f64;
    Ok(recon
        .pixels
        .iter()
        .zip(truth.pixels.iter())
        .map(|(a, b)| {
            let d = *a as f64 - *b as f64;
            d * d
        })
        .sum::<f64>()
        / n)
}

/// Inverse FFT and coil combination of undersampled k-space: the baseline
/// reconstruction and the residual pass-through.
pub fn zero_filled(undersampled: &ComplexVolume) -> Result<Vec<RealImage>> {
    rss_combine(&ifft2c(undersampled)?)
}

/// Pack the network input for one slice of a k-space volume.
pub fn pack_model_input(
    model: &Model,
    vol: &ComplexVolume,
    slice: usize,
) -> Result<Tensor<f32>> {
    let mut t = Tensor::zeros(
        1,
        model.config.input_channels(),
        vol.height(),
        vol.width(),
    );
    pack_slice_into(model, vol, slice, &mut t, 0)?;
    Ok(t)
}

/// Fill one batch row with the packed neighborhood (k-space kinds) or the
/// per-coil zero-filled complex image (image-domain baseline).
pub(crate) fn pack_slice_into(
    model: &Model,
    vol: &ComplexVolume,
    slice: usize,
    dst: &mut Tensor<f32>,
    row: usize,
) -> Result<()> {
    if vol.domain() != Domain::KSpace {
        return Err(Error::InvalidArgument(
            "model input volumes must be k-space".into(),
        ));
    }
    match model.config.kind {
        ModelKind::ImageUnet => {
            let img = ifft2c(&vol.extract_slice(slice))?;
            pack_channels_into(dst, row, std::slice::from_ref(&img))
        }
        _ => {
            let groups = crate::data::make_neighborhood(vol, slice, model.config.s)?;
            pack_channels_into(dst, row, &groups)
        }
    }
}

pub(crate) fn check_compatible(model: &Model, vol: &ComplexVolume) -> Result<()> {
    if vol.n_coils() != model.config.n_coils
        || vol.height() != model.config.input_size
        || vol.width() != model.config.input_size
    {
        return Err(Error::InvalidConfig(format!(
            "volume {}x{}x{} incompatible with model (coils {}, size {})",
            vol.n_coils(),
            vol.height(),
            vol.width(),
            model.config.n_coils,
            model.config.input_size
        )));
    }
    Ok(())
}

/// Reconstruct every slice of an undersampled k-space volume: pack,
/// forward in eval mode, unpack, inverse FFT (k-space kinds), and coil
/// combination.
pub fn reconstruct(model: &Model, undersampled: &ComplexVolume) -> Result<Vec<RealImage>> {
    check_compatible(model, undersampled)?;
    let out_node = model
        .graph
        .output_node()
        .ok_or_else(|| Error::InvalidConfig("graph has no output".into()))?;
    let mut images = Vec::with_capacity(undersampled.n_slices());
    for s in 0..undersampled.n_slices() {
        let input = pack_model_input(model, undersampled, s)?;
        let exec = model.graph.forward(&input, Mode::Eval)?;
        let out = exec.value(out_node).unwrap();
        let domain = match model.config.kind {
            ModelKind::ImageUnet => Domain::Image,
            _ => Domain::KSpace,
        };
        let vol = unpack_batch_item(out, 0, domain)?;
        let img_vol = match model.config.kind {
            ModelKind::ImageUnet => vol,
            _ => ifft2c(&vol)?,
        };
        images.extend(rss_combine(&img_vol)?);
    }
    Ok(images)
}

/// MSE between coil-combined magnitude images and reference images,
/// differentiable back to the network's output channels.
///
/// For k-space outputs the chain runs output -> centered inverse FFT ->
/// root-sum-of-squares -> MSE; the backward seed applies the adjoint
/// (forward FFT) to the image-domain gradient. For the image-domain
/// baseline the FFT stage is skipped.
pub struct ImageDomainMseObjective {
    pub truth: Vec<RealImage>,
    /// True when the output channels are k-space (the residual kinds).
    pub fourier_output: bool,
    pub output_node: NodeId,
}

impl ImageDomainMseObjective {
    pub fn for_model(model: &Model, truth: Vec<RealImage>) -> Result<Self> {
        Ok(ImageDomainMseObjective {
            truth,
            fourier_output: model.config.kind != ModelKind::ImageUnet,
            output_node: model
                .graph
                .output_node()
                .ok_or_else(|| Error::InvalidConfig("graph has no output".into()))?,
        })
    }

    /// Per-item coil images (complex, f64) in the image domain.
    fn coil_images<T: Scalar>(&self, out: &Tensor<T>, item: usize) -> Vec<Vec<Complex<f64>>> {
        let n_coils = out.channels() / 2;
        let (h, w) = (out.height(), out.width());
        let mut planes = Vec::with_capacity(n_coils);
        for c in 0..n_coils {
            let re = out.plane(item, 2 * c);
            let im = out.plane(item, 2 * c + 1);
            let mut buf: Vec<Complex<f64>> = re
                .iter()
                .zip(im.iter())
                .map(|(r, i)| Complex::new(r.to_f64(), i.to_f64()))
                .collect();
            if self.fourier_output {
                centered_fft2_f64(&mut buf, h, w, false);
            }
            planes.push(buf);
        }
        planes
    }

    fn rss(planes: &[Vec<Complex<f64>>]) -> Vec<f64> {
        let mut out = vec![0.0f64; planes[0].len()];
        for p in planes {
            for (o, v) in out.iter_mut().zip(p.iter()) {
                *o += v.norm_sqr();
            }
        }
        for o in out.iter_mut() {
            *o = o.sqrt();
        }
        out
    }
}

impl<T: Scalar> Objective<T> for ImageDomainMseObjective {
    fn value(&self, _graph: &NetworkGraph, exec: &Execution<T>) -> Result<f64> {
        let out = exec
            .value(self.output_node)
            .ok_or(Error::BackwardBeforeForward)?;
        if out.batch() != self.truth.len() {
            return Err(Error::ShapeMismatch(format!(
                "objective: batch {} vs {} reference images",
                out.batch(),
                self.truth.len()
            )));
        }
        let n = (out.batch() * out.height() * out.width()) as f64;
        let mut acc = 0.0f64;
        for b in 0..out.batch() {
            let planes = self.coil_images(out, b);
            let rss = Self::rss(&planes);
            for (r, t) in rss.iter().zip(self.truth[b].pixels.iter()) {
                let d = r - *t as f64;
                acc += d * d;
            }
        }
        Ok(acc / n)
    }

    fn seed(&self, _graph: &NetworkGraph, exec: &Execution<T>) -> Result<(NodeId, Tensor<T>)> {
        let out = exec
            .value(self.output_node)
            .ok_or(Error::BackwardBeforeForward)?;
        let (bsz, ch, h, w) = (out.batch(), out.channels(), out.height(), out.width());
        let n = (bsz * h * w) as f64;
        let mut seed = Tensor::<T>::zeros(bsz, ch, h, w);
        for b in 0..bsz {
            let planes = self.coil_images(out, b);
            let rss = Self::rss(&planes);
            let truth = &self.truth[b].pixels;
            for (c, plane) in planes.iter().enumerate() {
                // dL/d z_c = (2 (rss - t) / n) * z_c / rss, then back through
                // the inverse FFT via its adjoint (the forward FFT).
                let mut g_img: Vec<Complex<f64>> = plane
                    .iter()
                    .zip(rss.iter())
                    .zip(truth.iter())
                    .map(|((z, r), t)| {
                        if *r > 0.0 {
                            let dl_dr = 2.0 * (r - *t as f64) / n;
                            z * (dl_dr / r)
                        } else {
                            Complex::new(0.0, 0.0)
                        }
                    })
                    .collect();
                if self.fourier_output {
                    centered_fft2_f64(&mut g_img, h, w, true);
                }
                let re = seed.plane_mut(b, 2 * c);
                for (dst, src) in re.iter_mut().zip(g_img.iter()) {
                    *dst = T::from_f64(src.re);
                }
                let im = seed.plane_mut(b, 2 * c + 1);
                for (dst, src) in im.iter_mut().zip(g_img.iter()) {
                    *dst = T::from_f64(src.im);
                }
            }
        }
        Ok((self.output_node, seed))
    }
}

/// L1 norm of the loss gradient at each input channel of a trained model,
/// evaluated on one packed input slice.
pub fn input_channel_response(
    model: &Model,
    input: &Tensor<f32>,
    truth: &RealImage,
) -> Result<Vec<f32>> {
    let objective = ImageDomainMseObjective::for_model(model, vec![truth.clone()])?;
    let params = model.graph.param_values::<f32>();
    let mut exec = crate::autodiff::run_forward(&model.graph, &params, input, &[], Mode::Eval)?;
    let (node, seed) = Objective::<f32>::seed(&objective, &model.graph, &exec)?;
    run_backward(&model.graph, &params, &mut exec, node, seed)?;
    let g = exec
        .grad(model.graph.input_node())
        .ok_or(Error::BackwardBeforeForward)?;
    let mut responses = Vec::with_capacity(g.channels());
    for c in 0..g.channels() {
        responses.push(g.plane(0, c).iter().map(|v| v.abs()).sum());
    }
    Ok(responses)
}

/// Normalize responses by the maximum value of each slice group of
/// `group_size` channels.
pub fn normalize_per_slice_group(responses: &[f32], group_size: usize) -> Vec<f32> {
    let mut out = responses.to_vec();
    for group in out.chunks_mut(group_size) {
        let max = group.iter().copied().fold(0.0f32, f32::max);
        if max > 0.0 {
            group.iter_mut().for_each(|v| *v /= max);
        }
    }
    out
}
