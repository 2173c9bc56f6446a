//! Mask application, channel packing for the network, and coil combination.

use num_complex::Complex32;

use crate::error::{Error, Result};
use crate::sampling::CartesianMask;
use crate::tensor::ChannelTensor;
use crate::volume::{ComplexVolume, Domain, RealImage};

/// Zero out k-space samples wherever the mask is 0. Idempotent and linear.
pub fn apply_mask(k: &ComplexVolume, mask: &CartesianMask) -> Result<ComplexVolume> {
    if k.height() != mask.height() || k.width() != mask.width() {
        return Err(Error::ShapeMismatch(format!(
            "mask is {}x{} but volume is {}x{}",
            mask.height(),
            mask.width(),
            k.height(),
            k.width()
        )));
    }
    let mut out = k.clone();
    let (h, w) = (k.height(), k.width());
    for s in 0..k.n_slices() {
        for c in 0..k.n_coils() {
            let plane = out.plane_mut(s, c);
            for y in 0..h {
                for x in 0..w {
                    if !mask.is_sampled(y, x) {
                        plane[y * w + x] = Complex32::new(0.0, 0.0);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Number of real channels produced by packing `2s+1` slice-groups of
/// `n_coils` coils each.
pub fn packed_channel_count(n_groups: usize, n_coils: usize) -> usize {
    2 * n_groups * n_coils
}

/// Pack an ordered slice neighborhood into one batch row of `dst`.
///
/// Channel order is slice-offset-major (from -s to +s), then coil, then
/// (real, imaginary).
pub fn pack_channels_into(
    dst: &mut ChannelTensor,
    batch_index: usize,
    groups: &[ComplexVolume],
) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::Empty("pack_channels: no slice-groups".into()));
    }
    let n = groups[0].n_coils();
    let (h, w) = (groups[0].height(), groups[0].width());
    for g in groups {
        if g.n_coils() != n {
            return Err(Error::ShapeMismatch(format!(
                "pack_channels: inconsistent coil counts ({} vs {})",
                g.n_coils(),
                n
            )));
        }
        if g.height() != h || g.width() != w || g.n_slices() != 1 {
            return Err(Error::ShapeMismatch(
                "pack_channels: slice-groups must be single-slice with equal dims".into(),
            ));
        }
    }
    let channels = packed_channel_count(groups.len(), n);
    if dst.channels() != channels || dst.height() != h || dst.width() != w {
        return Err(Error::ShapeMismatch(format!(
            "pack_channels: destination {:?} incompatible with {} channels of {}x{}",
            dst.shape(),
            channels,
            h,
            w
        )));
    }
    for (gi, g) in groups.iter().enumerate() {
        for c in 0..n {
            let src = g.plane(0, c);
            let base = 2 * (gi * n + c);
            {
                let re = dst.plane_mut(batch_index, base);
                for (d, s) in re.iter_mut().zip(src.iter()) {
                    *d = s.re;
                }
            }
            let im = dst.plane_mut(batch_index, base + 1);
            for (d, s) in im.iter_mut().zip(src.iter()) {
                *d = s.im;
            }
        }
    }
    Ok(())
}

/// Pack a slice neighborhood into a fresh batch-1 tensor with `2(2s+1)n`
/// channels.
pub fn pack_channels(groups: &[ComplexVolume]) -> Result<ChannelTensor> {
    if groups.is_empty() {
        return Err(Error::Empty("pack_channels: no slice-groups".into()));
    }
    let channels = packed_channel_count(groups.len(), groups[0].n_coils());
    let mut t = ChannelTensor::zeros(1, channels, groups[0].height(), groups[0].width());
    pack_channels_into(&mut t, 0, groups)?;
    Ok(t)
}

/// Unpack one batch item of a `2n`-channel tensor into a single-slice,
/// `n`-coil complex volume.
pub fn unpack_batch_item(
    t: &ChannelTensor,
    batch_index: usize,
    domain: Domain,
) -> Result<ComplexVolume> {
    if t.channels() % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "unpack_channels: odd channel count {}",
            t.channels()
        )));
    }
    let n = t.channels() / 2;
    let (h, w) = (t.height(), t.width());
    let mut vol = ComplexVolume::zeros(1, n, h, w, domain);
    for c in 0..n {
        let re = t.plane(batch_index, 2 * c);
        let im = t.plane(batch_index, 2 * c + 1);
        let dst = vol.plane_mut(0, c);
        for i in 0..h * w {
            dst[i] = Complex32::new(re[i], im[i]);
        }
    }
    Ok(vol)
}

/// Inverse of [`pack_channels`] for a single slice-group (s = 0).
pub fn unpack_channels(t: &ChannelTensor, domain: Domain) -> Result<ComplexVolume> {
    if t.batch() != 1 {
        return Err(Error::InvalidArgument(format!(
            "unpack_channels expects batch 1, got {}",
            t.batch()
        )));
    }
    unpack_batch_item(t, 0, domain)
}

/// Root-sum-of-squares coil combination, one real image per slice.
pub fn rss_combine(img: &ComplexVolume) -> Result<Vec<RealImage>> {
    if img.domain() != Domain::Image {
        return Err(Error::InvalidArgument(
            "rss_combine expects an image-domain volume".into(),
        ));
    }
    let (h, w) = (img.height(), img.width());
    let mut out = Vec::with_capacity(img.n_slices());
    for s in 0..img.n_slices() {
        let mut pixels = vec![0.0f32; h * w];
        for c in 0..img.n_coils() {
            let plane = img.plane(s, c);
            for (p, v) in pixels.iter_mut().zip(plane.iter()) {
                *p += v.norm_sqr();
            }
        }
        for p in pixels.iter_mut() {
            *p = p.sqrt();
        }
        out.push(RealImage {
            height: h,
            width: w,
            pixels,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::make_cartesian_mask;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_volume(
        slices: usize,
        coils: usize,
        h: usize,
        w: usize,
        domain: Domain,
        seed: u64,
    ) -> ComplexVolume {
        let mut rng = StdRng::seed_from_u64(seed);
        let data = (0..slices * coils * h * w)
            .map(|_| Complex32::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        ComplexVolume::from_parts(slices, coils, h, w, domain, data).unwrap()
    }

    #[test]
    fn all_ones_mask_is_identity_and_masking_is_idempotent() {
        let k = random_volume(2, 2, 8, 8, Domain::KSpace, 1);
        let full = make_cartesian_mask(8, 8, 1.0, 0).unwrap();
        assert_eq!(apply_mask(&k, &full).unwrap(), k);

        let m = make_cartesian_mask(8, 8, 2.0, 3).unwrap();
        let once = apply_mask(&k, &m).unwrap();
        let twice = apply_mask(&once, &m).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn mask_dimension_mismatch_is_rejected() {
        let k = random_volume(1, 1, 8, 8, Domain::KSpace, 2);
        let m = make_cartesian_mask(8, 16, 2.0, 0).unwrap();
        assert!(apply_mask(&k, &m).is_err());
    }

    #[test]
    fn packed_channel_counts_match_slice_and_coil_arithmetic() {
        // (n_groups = 2s+1, n_coils) -> 2(2s+1)n
        assert_eq!(packed_channel_count(1, 1), 2);
        assert_eq!(packed_channel_count(3, 8), 48);
        assert_eq!(packed_channel_count(5, 16), 160);
    }

    #[test]
    fn pack_unpack_round_trip_is_bit_exact_for_single_group() {
        let vol = random_volume(1, 4, 6, 6, Domain::KSpace, 7);
        let t = pack_channels(std::slice::from_ref(&vol)).unwrap();
        assert_eq!(t.channels(), 8);
        let back = unpack_channels(&t, Domain::KSpace).unwrap();
        assert_eq!(back, vol);
    }

    #[test]
    fn unpack_rejects_odd_channel_count() {
        let t = ChannelTensor::zeros(1, 3, 4, 4);
        assert!(unpack_channels(&t, Domain::KSpace).is_err());
    }

    #[test]
    fn unpack_of_16_channels_yields_8_coils() {
        let t = ChannelTensor::zeros(1, 16, 4, 4);
        let vol = unpack_channels(&t, Domain::KSpace).unwrap();
        assert_eq!(vol.n_coils(), 8);
        assert!(vol.data().iter().all(|c| c.re == 0.0 && c.im == 0.0));
    }

    #[test]
    fn pack_rejects_inconsistent_coil_counts() {
        let a = random_volume(1, 2, 4, 4, Domain::KSpace, 1);
        let b = random_volume(1, 3, 4, 4, Domain::KSpace, 2);
        assert!(pack_channels(&[a, b]).is_err());
    }

    #[test]
    fn rss_of_single_coil_is_pointwise_magnitude() {
        let vol = random_volume(1, 1, 4, 4, Domain::Image, 11);
        let rss = rss_combine(&vol).unwrap();
        for (p, v) in rss[0].pixels.iter().zip(vol.plane(0, 0)) {
            assert!((p - v.norm()).abs() < 1e-6);
        }
    }

    #[test]
    fn rss_is_pythagorean_across_coils() {
        let mut vol = ComplexVolume::zeros(1, 2, 1, 1, Domain::Image);
        vol.plane_mut(0, 0)[0] = Complex32::new(3.0, 0.0);
        vol.plane_mut(0, 1)[0] = Complex32::new(0.0, 4.0);
        let rss = rss_combine(&vol).unwrap();
        assert!((rss[0].pixels[0] - 5.0).abs() < 1e-6);
    }

    #[test]
    fn rss_is_invariant_to_per_coil_phase() {
        let vol = random_volume(1, 3, 5, 5, Domain::Image, 13);
        let mut rotated = vol.clone();
        for (c, phase) in [(0usize, 0.3f32), (1, 1.1), (2, -2.0)] {
            let rot = Complex32::new(phase.cos(), phase.sin());
            for v in rotated.plane_mut(0, c) {
                *v *= rot;
            }
        }
        let a = rss_combine(&vol).unwrap();
        let b = rss_combine(&rotated).unwrap();
        for (x, y) in a[0].pixels.iter().zip(b[0].pixels.iter()) {
            assert!((x - y).abs() < 1e-5);
        }
    }
}
