//! Undersampling plan generation: Cartesian line masks and radial
//! trajectories, plus the MSK1 mask file format.

mod gridding;

pub use gridding::{
    grid_radial, grid_radial_plane, kb_apodization, kb_kernel, nufft_degrid, nufft_degrid_plane,
    GriddingConfig, RadialSamples,
};

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MASK_MAGIC: [u8; 4] = *b"MSK1";
const MASK_VERSION: u16 = 1;

/// Binary Cartesian undersampling mask made of full phase-encode lines
/// (columns). The DC line is always sampled.
#[derive(Clone, Debug, PartialEq)]
pub struct CartesianMask {
    height: usize,
    width: usize,
    /// Row-major 0/1 bitmap; column-constant by construction.
    bits: Vec<u8>,
    /// Seed the mask was generated from, if generated in-process.
    pub seed: Option<u64>,
    /// Acceleration factor R the mask was generated for, if known.
    pub acceleration: Option<f64>,
}

impl CartesianMask {
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn is_sampled(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x] != 0
    }

    pub fn line_sampled(&self, x: usize) -> bool {
        self.bits[x] != 0
    }

    pub fn sampled_line_count(&self) -> usize {
        (0..self.width).filter(|&x| self.line_sampled(x)).count()
    }

    fn from_lines(height: usize, width: usize, lines: &[bool]) -> CartesianMask {
        let mut bits = vec![0u8; height * width];
        for y in 0..height {
            for x in 0..width {
                bits[y * width + x] = lines[x] as u8;
            }
        }
        CartesianMask {
            height,
            width,
            bits,
            seed: None,
            acceleration: None,
        }
    }
}

/// Choose `floor(W/R)` distinct phase-encode lines without replacement with
/// Gaussian probability density centered on the DC column (sigma = W/6).
/// The DC line is always included. Deterministic per seed.
pub fn make_cartesian_mask(height: usize, width: usize, r: f64, seed: u64) -> Result<CartesianMask> {
    if !(r >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "acceleration must be >= 1, got {r}"
        )));
    }
    if r > width as f64 {
        return Err(Error::InvalidArgument(format!(
            "acceleration {r} exceeds width {width}"
        )));
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("mask dims must be >= 1".into()));
    }
    let n_lines = ((width as f64) / r).floor() as usize;
    let n_lines = n_lines.max(1);

    let dc = width / 2;
    let sigma = width as f64 / 6.0;
    let mut weight: Vec<f64> = (0..width)
        .map(|x| {
            let d = x as f64 - dc as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();

    let mut chosen = vec![false; width];
    chosen[dc] = true;
    weight[dc] = 0.0;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = 1usize;
    while picked < n_lines {
        let total: f64 = weight.iter().sum();
        let mut u = rng.gen_range(0.0..total);
        let mut idx = width - 1;
        for (x, w) in weight.iter().enumerate() {
            if u < *w {
                idx = x;
                break;
            }
            u -= *w;
        }
        // Floating-point tail: fall back to the last unchosen line.
        if chosen[idx] {
            idx = (0..width).rev().find(|&x| !chosen[x]).unwrap();
        }
        chosen[idx] = true;
        weight[idx] = 0.0;
        picked += 1;
    }

    let mut mask = CartesianMask::from_lines(height, width, &chosen);
    mask.seed = Some(seed);
    mask.acceleration = Some(r);
    Ok(mask)
}

/// Write a mask in the MSK1 format: magic, version u16, H u32, W u32, then
/// H*W bytes (0/1) row-major, little-endian.
pub fn write_mask(path: &Path, mask: &CartesianMask) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&MASK_MAGIC)?;
    f.write_all(&MASK_VERSION.to_le_bytes())?;
    f.write_all(&(mask.height as u32).to_le_bytes())?;
    f.write_all(&(mask.width as u32).to_le_bytes())?;
    f.write_all(&mask.bits)?;
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<CartesianMask> {
    let mut f = std::fs::File::open(path)?;
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if magic != MASK_MAGIC {
        return Err(Error::BadMagic {
            expected: MASK_MAGIC,
            found: magic,
        });
    }
    let mut b2 = [0u8; 2];
    f.read_exact(&mut b2)?;
    let version = u16::from_le_bytes(b2);
    if version != MASK_VERSION {
        return Err(Error::UnsupportedVersion { found: version });
    }
    let mut b4 = [0u8; 4];
    f.read_exact(&mut b4)?;
    let height = u32::from_le_bytes(b4) as usize;
    f.read_exact(&mut b4)?;
    let width = u32::from_le_bytes(b4) as usize;
    let expected = (height * width) as u64;
    let mut bits = vec![0u8; height * width];
    let mut read_total = 0usize;
    while read_total < bits.len() {
        let n = f.read(&mut bits[read_total..])?;
        if n == 0 {
            return Err(Error::Truncated {
                expected,
                found: read_total as u64,
            });
        }
        read_total += n;
    }
    for y in 0..height {
        for x in 0..width {
            if (bits[y * width + x] != 0) != (bits[x] != 0) {
                return Err(Error::InvalidArgument(
                    "mask file is not column-constant".into(),
                ));
            }
        }
    }
    Ok(CartesianMask {
        height,
        width,
        bits,
        seed: None,
        acceleration: None,
    })
}

/// Radial sampling plan: `n_spokes` diameters uniformly spaced over [0, pi),
/// each with `n_readout` samples spanning the diameter through DC.
/// Coordinates are normalized spatial frequencies in [-0.5, 0.5).
#[derive(Clone, Debug, PartialEq)]
pub struct RadialTrajectory {
    pub n_spokes: usize,
    pub n_readout: usize,
    coords: Vec<[f64; 2]>,
}

impl RadialTrajectory {
    #[inline]
    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }
    #[inline]
    pub fn n_points(&self) -> usize {
        self.coords.len()
    }
}

/// Spoke k has angle k*pi/n_spokes; readout sample i sits at radius
/// `(i - floor(n_readout/2)) / n_readout`, so every spoke passes through DC.
pub fn make_radial_trajectory(n_spokes: usize, n_readout: usize) -> Result<RadialTrajectory> {
    if n_spokes < 1 {
        return Err(Error::InvalidArgument("need at least one spoke".into()));
    }
    if n_readout < 2 {
        return Err(Error::InvalidArgument(
            "need at least two readout samples".into(),
        ));
    }
    let mut coords = Vec::with_capacity(n_spokes * n_readout);
    let center = (n_readout / 2) as f64;
    for k in 0..n_spokes {
        let theta = k as f64 * std::f64::consts::PI / n_spokes as f64;
        let (sin_t, cos_t) = theta.sin_cos();
        for i in 0..n_readout {
            let radius = (i as f64 - center) / n_readout as f64;
            coords.push([radius * cos_t, radius * sin_t]);
        }
    }
    Ok(RadialTrajectory {
        n_spokes,
        n_readout,
        coords,
    })
}
