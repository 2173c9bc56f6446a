//! Kaiser-Bessel gridding: type-2 NUFFT degridding of images onto radial
//! trajectories and density-compensated regridding back onto a Cartesian
//! grid.

use num_complex::{Complex, Complex32};

use super::RadialTrajectory;
use crate::error::{Error, Result};
use crate::fourier::centered_fft2_f64;
use crate::volume::{ComplexVolume, Domain};

/// Kaiser-Bessel interpolation setup. Kernel width is in oversampled grid
/// cells; `beta` defaults to the minimal-aliasing-error choice for the
/// (width, oversampling) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct GriddingConfig {
    pub kernel_width: usize,
    pub oversampling: f64,
    pub beta: f64,
    pub target_size: usize,
}

impl GriddingConfig {
    pub fn new(target_size: usize) -> Self {
        let kernel_width = 4;
        let oversampling = 2.0;
        GriddingConfig {
            kernel_width,
            oversampling,
            beta: beatty_beta(kernel_width, oversampling),
            target_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_width < 2 {
            return Err(Error::InvalidConfig("kernel_width must be >= 2".into()));
        }
        if !(self.oversampling > 1.0) {
            return Err(Error::InvalidConfig("oversampling must be > 1".into()));
        }
        if self.target_size == 0 {
            return Err(Error::InvalidConfig("target_size must be >= 1".into()));
        }
        Ok(())
    }

    fn grid_size(&self, n: usize) -> usize {
        (self.oversampling * n as f64).round() as usize
    }
}

/// Minimal-aliasing-error shape parameter for a Kaiser-Bessel kernel of the
/// given width at the given oversampling ratio.
pub fn beatty_beta(kernel_width: usize, oversampling: f64) -> f64 {
    let w = kernel_width as f64;
    let a = oversampling;
    std::f64::consts::PI * ((w / a * (a - 0.5)).powi(2) - 0.8).max(0.0).sqrt()
}

/// Modified Bessel function of the first kind, order zero (series form).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    for k in 1..200 {
        term *= q / ((k * k) as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser-Bessel kernel weight at distance `u` grid cells from the sample.
/// Even, compactly supported on [-W/2, W/2], and normalized so w(0) = 1.
pub fn kb_kernel(u: f64, cfg: &GriddingConfig) -> f64 {
    let half = cfg.kernel_width as f64 / 2.0;
    if u.abs() > half {
        return 0.0;
    }
    let t = 1.0 - (u / half).powi(2);
    bessel_i0(cfg.beta * t.max(0.0).sqrt()) / bessel_i0(cfg.beta)
}

/// Fourier transform of the Kaiser-Bessel kernel at frequency `f` cycles per
/// grid cell; this is the image-domain roll-off divided out by
/// deapodization.
pub fn kb_apodization(f: f64, cfg: &GriddingConfig) -> f64 {
    let w = cfg.kernel_width as f64;
    let beta = cfg.beta;
    let arg = beta * beta - (std::f64::consts::PI * w * f).powi(2);
    let ratio = if arg > 0.0 {
        let z = arg.sqrt();
        if z < 1e-12 {
            1.0
        } else {
            z.sinh() / z
        }
    } else {
        let z = (-arg).sqrt();
        if z < 1e-12 {
            1.0
        } else {
            z.sin() / z
        }
    };
    w * ratio / bessel_i0(beta)
}

/// Complex samples acquired along a trajectory, slice-major then coil.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialSamples {
    pub n_slices: usize,
    pub n_coils: usize,
    pub n_points: usize,
    data: Vec<Complex32>,
}

impl RadialSamples {
    pub fn set(&self, slice: usize, coil: usize) -> &[Complex32] {
        let start = (slice * self.n_coils + coil) * self.n_points;
        &self.data[start..start + self.n_points]
    }

    pub fn from_sets(
        n_slices: usize,
        n_coils: usize,
        n_points: usize,
        data: Vec<Complex32>,
    ) -> Result<Self> {
        if data.len() != n_slices * n_coils * n_points {
            return Err(Error::ShapeMismatch(
                "radial sample data length mismatch".into(),
            ));
        }
        Ok(RadialSamples {
            n_slices,
            n_coils,
            n_points,
            data,
        })
    }

    pub fn data(&self) -> &[Complex32] {
        &self.data
    }
}

fn check_coords(traj: &RadialTrajectory) -> Result<()> {
    for [kx, ky] in traj.coords() {
        if !(*kx >= -0.5 && *kx < 0.5 && *ky >= -0.5 && *ky < 0.5) {
            return Err(Error::CoordOutOfRange(format!("({kx}, {ky})")));
        }
    }
    Ok(())
}

/// Per-dimension deapodization lookup for an n-pixel image embedded in a
/// size-`grid` oversampled transform.
fn apodization_table(n: usize, grid: usize, cfg: &GriddingConfig) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let centered = i as f64 - (n / 2) as f64;
            kb_apodization(centered / grid as f64, cfg)
        })
        .collect()
}

/// Type-2 NUFFT of a square complex image: deapodize, zero-pad onto an
/// oversampled grid, centered FFT, then Kaiser-Bessel interpolation at the
/// trajectory coordinates. Output is normalized like `fft2c` samples of the
/// same image.
pub fn nufft_degrid_plane(
    img: &[Complex<f64>],
    n: usize,
    traj: &RadialTrajectory,
    cfg: &GriddingConfig,
) -> Result<Vec<Complex<f64>>> {
    cfg.validate()?;
    check_coords(traj)?;
    if img.len() != n * n {
        return Err(Error::ShapeMismatch("nufft_degrid: image must be square".into()));
    }
    let grid = cfg.grid_size(n);
    let apod = apodization_table(n, grid, cfg);

    let mut padded = vec![Complex::new(0.0, 0.0); grid * grid];
    let off = grid / 2 - n / 2;
    for y in 0..n {
        for x in 0..n {
            padded[(y + off) * grid + (x + off)] = img[y * n + x] / (apod[y] * apod[x]);
        }
    }
    centered_fft2_f64(&mut padded, grid, grid, true);

    let half_w = cfg.kernel_width as f64 / 2.0;
    let center = (grid / 2) as f64;
    let scale = grid as f64 / n as f64;
    let mut out = Vec::with_capacity(traj.n_points());
    for [kx, ky] in traj.coords() {
        let gx = kx * grid as f64 + center;
        let gy = ky * grid as f64 + center;
        let mut acc = Complex::new(0.0, 0.0);
        let y_lo = (gy - half_w).ceil() as i64;
        let y_hi = (gy + half_w).floor() as i64;
        let x_lo = (gx - half_w).ceil() as i64;
        let x_hi = (gx + half_w).floor() as i64;
        for my in y_lo..=y_hi {
            let wy = kb_kernel(gy - my as f64, cfg);
            let row = (my.rem_euclid(grid as i64)) as usize * grid;
            for mx in x_lo..=x_hi {
                let wx = kb_kernel(gx - mx as f64, cfg);
                let col = (mx.rem_euclid(grid as i64)) as usize;
                acc += padded[row + col] * (wy * wx);
            }
        }
        out.push(acc * scale);
    }
    Ok(out)
}

/// Degrid every slice and coil of an image volume onto the trajectory.
pub fn nufft_degrid(
    img: &ComplexVolume,
    traj: &RadialTrajectory,
    cfg: &GriddingConfig,
) -> Result<RadialSamples> {
    if img.domain() != Domain::Image {
        return Err(Error::InvalidArgument(
            "nufft_degrid expects an image-domain volume".into(),
        ));
    }
    if img.height() != img.width() {
        return Err(Error::InvalidArgument(
            "nufft_degrid expects a square image".into(),
        ));
    }
    let n = img.height();
    let mut data = Vec::with_capacity(img.n_slices() * img.n_coils() * traj.n_points());
    let mut buf = vec![Complex::new(0.0, 0.0); n * n];
    for s in 0..img.n_slices() {
        for c in 0..img.n_coils() {
            for (dst, src) in buf.iter_mut().zip(img.plane(s, c)) {
                *dst = Complex::new(src.re as f64, src.im as f64);
            }
            let samples = nufft_degrid_plane(&buf, n, traj, cfg)?;
            data.extend(samples.iter().map(|c| Complex32::new(c.re as f32, c.im as f32)));
        }
    }
    RadialSamples::from_sets(img.n_slices(), img.n_coils(), traj.n_points(), data)
}

/// Ramp density compensation: weight pi*|k|/(n_spokes*n_readout) per sample.
/// The coincident DC samples of all spokes share the k-space disk of radius
/// half the readout spacing.
fn density_weights(traj: &RadialTrajectory) -> Vec<f64> {
    let radii: Vec<f64> = traj
        .coords()
        .iter()
        .map(|[kx, ky]| (kx * kx + ky * ky).sqrt())
        .collect();
    let r_min = radii
        .iter()
        .copied()
        .filter(|r| *r > 1e-12)
        .fold(f64::INFINITY, f64::min);
    let n_dc = radii.iter().filter(|r| **r <= 1e-12).count().max(1);
    let norm = std::f64::consts::PI / (traj.n_spokes as f64 * traj.n_readout as f64);
    radii
        .iter()
        .map(|&r| {
            if r > 1e-12 {
                norm * r
            } else {
                std::f64::consts::PI * (r_min / 2.0).powi(2) / n_dc as f64
            }
        })
        .collect()
}

/// Regrid trajectory samples onto a `target_size` Cartesian k-space plane:
/// density-compensated Kaiser-Bessel spreading onto the oversampled grid,
/// centered IFFT, deapodization, center crop, and FFT back to k-space.
pub fn grid_radial_plane(
    samples: &[Complex<f64>],
    traj: &RadialTrajectory,
    cfg: &GriddingConfig,
) -> Result<Vec<Complex<f64>>> {
    cfg.validate()?;
    check_coords(traj)?;
    if samples.len() != traj.n_points() {
        return Err(Error::ShapeMismatch(format!(
            "grid_radial: {} samples for {} trajectory points",
            samples.len(),
            traj.n_points()
        )));
    }
    let n = cfg.target_size;
    let grid = cfg.grid_size(n);
    let weights = density_weights(traj);

    let mut padded = vec![Complex::new(0.0, 0.0); grid * grid];
    let half_w = cfg.kernel_width as f64 / 2.0;
    let center = (grid / 2) as f64;
    for (i, [kx, ky]) in traj.coords().iter().enumerate() {
        let v = samples[i] * weights[i];
        if v.re == 0.0 && v.im == 0.0 {
            continue;
        }
        let gx = kx * grid as f64 + center;
        let gy = ky * grid as f64 + center;
        let y_lo = (gy - half_w).ceil() as i64;
        let y_hi = (gy + half_w).floor() as i64;
        let x_lo = (gx - half_w).ceil() as i64;
        let x_hi = (gx + half_w).floor() as i64;
        for my in y_lo..=y_hi {
            let wy = kb_kernel(gy - my as f64, cfg);
            let row = (my.rem_euclid(grid as i64)) as usize * grid;
            for mx in x_lo..=x_hi {
                let wx = kb_kernel(gx - mx as f64, cfg);
                let col = (mx.rem_euclid(grid as i64)) as usize;
                padded[row + col] += v * (wy * wx);
            }
        }
    }

    centered_fft2_f64(&mut padded, grid, grid, false);

    let apod = apodization_table(n, grid, cfg);
    let off = grid / 2 - n / 2;
    let gain = n as f64 * grid as f64;
    let mut img = vec![Complex::new(0.0, 0.0); n * n];
    for y in 0..n {
        for x in 0..n {
            img[y * n + x] = padded[(y + off) * grid + (x + off)] * (gain / (apod[y] * apod[x]));
        }
    }
    centered_fft2_f64(&mut img, n, n, true);
    Ok(img)
}

/// Regrid a full set of radial samples into a k-space volume on the target
/// grid. Linear and deterministic.
pub fn grid_radial(
    samples: &RadialSamples,
    traj: &RadialTrajectory,
    cfg: &GriddingConfig,
) -> Result<ComplexVolume> {
    let n = cfg.target_size;
    let mut out = ComplexVolume::zeros(samples.n_slices, samples.n_coils, n, n, Domain::KSpace);
    let mut buf = vec![Complex::new(0.0, 0.0); traj.n_points()];
    for s in 0..samples.n_slices {
        for c in 0..samples.n_coils {
            for (dst, src) in buf.iter_mut().zip(samples.set(s, c)) {
                *dst = Complex::new(src.re as f64, src.im as f64);
            }
            let plane = grid_radial_plane(&buf, traj, cfg)?;
            for (dst, src) in out.plane_mut(s, c).iter_mut().zip(plane.iter()) {
                *dst = Complex32::new(src.re as f32, src.im as f32);
            }
        }
    }
    Ok(out)
}
