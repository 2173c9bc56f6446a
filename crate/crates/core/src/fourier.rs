//! Centered orthonormal 2-D Fourier transforms.
//!
//! The DC sample sits at index `(h/2, w/2)` and both directions scale by
//! `1/sqrt(h*w)`, so the pair preserves energy and is mutually inverse.
//! Transforms run internally in double precision.

use num_complex::{Complex, Complex32};
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::volume::{ComplexVolume, Domain};

/// Centered orthonormal 2-D FFT (or inverse) of an h*w plane, in place.
pub(crate) fn centered_fft2_f64(buf: &mut [Complex<f64>], h: usize, w: usize, forward: bool) {
    debug_assert_eq!(buf.len(), h * w);
    let mut planner = FftPlanner::<f64>::new();
    let fft_w = if forward {
        planner.plan_fft_forward(w)
    } else {
        planner.plan_fft_inverse(w)
    };
    let fft_h = if forward {
        planner.plan_fft_forward(h)
    } else {
        planner.plan_fft_inverse(h)
    };

    let sh = h / 2;
    let sw = w / 2;

    // Gather with ifftshift so DC moves from the center to index 0.
    let mut work: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); h * w];
    for y in 0..h {
        let src_y = (y + sh) % h;
        for x in 0..w {
            let src_x = (x + sw) % w;
            work[y * w + x] = buf[src_y * w + src_x];
        }
    }

    let mut scratch = vec![Complex::new(0.0, 0.0); fft_w.get_inplace_scratch_len()];
    for row in work.chunks_exact_mut(w) {
        fft_w.process_with_scratch(row, &mut scratch);
    }

    // Columns via transpose.
    let mut tr: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); h * w];
    for y in 0..h {
        for x in 0..w {
            tr[x * h + y] = work[y * w + x];
        }
    }
    let mut scratch_h = vec![Complex::new(0.0, 0.0); fft_h.get_inplace_scratch_len()];
    for col in tr.chunks_exact_mut(h) {
        fft_h.process_with_scratch(col, &mut scratch_h);
    }

    // Scatter back with fftshift and orthonormal scaling.
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for x in 0..w {
        let dst_x = (x + sw) % w;
        for y in 0..h {
            let dst_y = (y + sh) % h;
            buf[dst_y * w + dst_x] = tr[x * h + y] * scale;
        }
    }
}

fn transform_volume(vol: &ComplexVolume, forward: bool, context: &str) -> Result<ComplexVolume> {
    if vol.height() == 0 || vol.width() == 0 {
        return Err(Error::InvalidArgument(format!(
            "{context}: height and width must be >= 1"
        )));
    }
    vol.ensure_finite(context)?;

    let (h, w) = (vol.height(), vol.width());
    let mut out = ComplexVolume::zeros(
        vol.n_slices(),
        vol.n_coils(),
        h,
        w,
        if forward { Domain::KSpace } else { Domain::Image },
    );
    let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); h * w];
    for s in 0..vol.n_slices() {
        for c in 0..vol.n_coils() {
            let plane = vol.plane(s, c);
            for (dst, src) in buf.iter_mut().zip(plane.iter()) {
                *dst = Complex::new(src.re as f64, src.im as f64);
            }
            centered_fft2_f64(&mut buf, h, w, forward);
            for (dst, src) in out.plane_mut(s, c).iter_mut().zip(buf.iter()) {
                *dst = Complex32::new(src.re as f32, src.im as f32);
            }
        }
    }
    Ok(out)
}

/// Image -> k-space, centered and orthonormal, per slice per coil.
pub fn fft2c(vol: &ComplexVolume) -> Result<ComplexVolume> {
    if vol.domain() != Domain::Image {
        return Err(Error::InvalidArgument(
            "fft2c expects an image-domain volume".into(),
        ));
    }
    transform_volume(vol, true, "fft2c")
}

/// k-space -> image, inverse of [`fft2c`] under the same conventions.
pub fn ifft2c(vol: &ComplexVolume) -> Result<ComplexVolume> {
    if vol.domain() != Domain::KSpace {
        return Err(Error::InvalidArgument(
            "ifft2c expects a k-space volume".into(),
        ));
    }
    transform_volume(vol, false, "ifft2c")
}
