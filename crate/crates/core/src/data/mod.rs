//! Synthetic multi-coil phantom volumes, slice-neighborhood assembly,
//! dataset splits, and the KSPV volume file format.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex32;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::volume::{ComplexVolume, Domain};

const VOLUME_MAGIC: [u8; 4] = *b"KSPV";
const VOLUME_VERSION: u16 = 1;

/// Parameters of the synthetic phantom generator.
#[derive(Clone, Debug)]
pub struct PhantomSpec {
    pub n_slices: usize,
    pub height: usize,
    pub width: usize,
    pub n_coils: usize,
    pub n_ellipses: usize,
    pub seed: u64,
    /// Per-slice geometric drift scale; below ~0.02 adjacent slices stay
    /// correlated above 0.9.
    pub slice_drift: f64,
}

impl PhantomSpec {
    pub fn new(n_slices: usize, size: usize, n_coils: usize, seed: u64) -> Self {
        PhantomSpec {
            n_slices,
            height: size,
            width: size,
            n_coils,
            n_ellipses: 6,
            seed,
            slice_drift: 0.01,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.height != self.width {
            return Err(Error::InvalidConfig(
                "phantom must be square (gridding targets are square)".into(),
            ));
        }
        if self.n_ellipses == 0 {
            return Err(Error::InvalidConfig("need at least one ellipse".into()));
        }
        if self.n_slices == 0 || self.n_coils == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("phantom dims must be positive".into()));
        }
        Ok(())
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    angle: f64,
    intensity: f64,
    drift_dir: [f64; 2],
    angle_drift: f64,
}

/// Smooth multi-coil image-domain phantom: soft-edged ellipses whose
/// geometry drifts slowly across slices, a quadratic per-slice phase, and
/// Gaussian coil sensitivities normalized so their RSS is 1 everywhere.
/// Pure function of the spec.
pub fn gen_phantom(spec: &PhantomSpec) -> Result<ComplexVolume> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.height;
    let nf = n as f64;

    let ellipses: Vec<Ellipse> = (0..spec.n_ellipses)
        .map(|_| {
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            Ellipse {
                cx: rng.gen_range(0.25 * nf..0.75 * nf),
                cy: rng.gen_range(0.25 * nf..0.75 * nf),
                ax: rng.gen_range(0.08 * nf..0.28 * nf),
                ay: rng.gen_range(0.08 * nf..0.28 * nf),
                angle: rng.gen_range(0.0..std::f64::consts::PI),
                intensity: rng.gen_range(0.2..1.0),
                drift_dir: [theta.cos(), theta.sin()],
                angle_drift: rng.gen_range(-1.0..1.0),
            }
        })
        .collect();
    let phase_coeffs: Vec<[f64; 3]> = (0..spec.n_slices)
        .map(|_| {
            [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]
        })
        .collect();

    // Gaussian sensitivity profiles centered at distinct border positions.
    let coil_centers: Vec<[f64; 2]> = (0..spec.n_coils)
        .map(|j| {
            let theta = std::f64::consts::TAU * j as f64 / spec.n_coils as f64;
            [
                nf / 2.0 + 0.55 * nf * theta.cos(),
                nf / 2.0 + 0.55 * nf * theta.sin(),
            ]
        })
        .collect();
    let sigma_c = 0.7 * nf;

    let mut vol = ComplexVolume::zeros(spec.n_slices, spec.n_coils, n, n, Domain::Image);
    let mut sens = vec![0.0f64; spec.n_coils];
    for s in 0..spec.n_slices {
        let drift = spec.slice_drift * s as f64 * nf;
        let [pa, pb, pc] = phase_coeffs[s];
        for y in 0..n {
            for x in 0..n {
                let mut mag = 0.0f64;
                for e in &ellipses {
                    let cx = e.cx + drift * e.drift_dir[0];
                    let cy = e.cy + drift * e.drift_dir[1];
                    let ang = e.angle + spec.slice_drift * s as f64 * e.angle_drift;
                    let dx = x as f64 - cx;
                    let dy = y as f64 - cy;
                    let (sin_a, cos_a) = ang.sin_cos();
                    let u = (dx * cos_a + dy * sin_a) / e.ax;
                    let v = (-dx * sin_a + dy * cos_a) / e.ay;
                    let rho2 = u * u + v * v;
                    mag += e.intensity / (1.0 + ((rho2 - 1.0) / 0.08).exp());
                }
                let xt = (x as f64 - nf / 2.0) / nf;
                let yt = (y as f64 - nf / 2.0) / nf;
                let phase = pa * (xt * xt + yt * yt) + pb * xt + pc * yt;
                let value = Complex32::new(
                    (mag * phase.cos()) as f32,
                    (mag * phase.sin()) as f32,
                );

                let mut rss = 0.0f64;
                for (j, c) in coil_centers.iter().enumerate() {
                    let d2 = (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2);
                    sens[j] = (-d2 / (2.0 * sigma_c * sigma_c)).exp();
                    rss += sens[j] * sens[j];
                }
                let rss = rss.sqrt();
                for (j, g) in sens.iter().enumerate() {
                    let w = (g / rss) as f32;
                    vol.plane_mut(s, j)[y * n + x] = value * w;
                }
            }
        }
    }
    Ok(vol)
}

/// Slices `[index-s, index+s]` as single-slice volumes, replicating the
/// nearest edge slice where the neighborhood reaches past the volume.
pub fn make_neighborhood(vol: &ComplexVolume, slice_index: usize, s: usize) -> Result<Vec<ComplexVolume>> {
    if slice_index >= vol.n_slices() {
        return Err(Error::InvalidArgument(format!(
            "slice index {slice_index} out of range ({} slices)",
            vol.n_slices()
        )));
    }
    let last = vol.n_slices() as i64 - 1;
    let mut out = Vec::with_capacity(2 * s + 1);
    for offset in -(s as i64)..=(s as i64) {
        let idx = (slice_index as i64 + offset).clamp(0, last) as usize;
        out.push(vol.extract_slice(idx));
    }
    Ok(out)
}

/// Disjoint train/validation/test identifier lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

/// Deterministic shuffled partition by fractions (which must sum to 1).
pub fn split_dataset(ids: &[String], fractions: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    if ids.is_empty() {
        return Err(Error::Empty("split_dataset: empty corpus".into()));
    }
    let (ft, fv, fe) = fractions;
    if (ft + fv + fe - 1.0).abs() > 1e-9 || ft < 0.0 || fv < 0.0 || fe < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "fractions must be nonnegative and sum to 1, got {fractions:?}"
        )));
    }
    let mut shuffled = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..shuffled.len()).rev() {
        let j = rng.gen_range(0..=i);
        shuffled.swap(i, j);
    }
    let n = shuffled.len();
    let n_train = (ft * n as f64).round() as usize;
    let n_val = (fv * n as f64).round() as usize;
    if n_train + n_val > n {
        return Err(Error::InvalidArgument(
            "rounded split sizes exceed corpus size".into(),
        ));
    }
    let train = shuffled[..n_train].to_vec();
    let validation = shuffled[n_train..n_train + n_val].to_vec();
    let test = shuffled[n_train + n_val..].to_vec();
    Ok(DatasetSplit {
        train,
        validation,
        test,
        seed,
    })
}

/// Manifest serialization: one identifier per line under a section header
/// per split.
pub fn write_split(path: &Path, split: &DatasetSplit) -> Result<()> {
    let mut out = String::new();
    for (section, ids) in [
        ("[train]", &split.train),
        ("[validation]", &split.validation),
        ("[test]", &split.test),
    ] {
        out.push_str(section);
        out.push('\n');
        for id in ids {
            out.push_str(id);
            out.push('\n');
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_split(path: &Path) -> Result<DatasetSplit> {
    let text = std::fs::read_to_string(path)?;
    let mut split = DatasetSplit {
        train: vec![],
        validation: vec![],
        test: vec![],
        seed: 0,
    };
    let mut current: Option<usize> = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line {
            "[train]" => current = Some(0),
            "[validation]" => current = Some(1),
            "[test]" => current = Some(2),
            id => {
                let bucket = match current {
                    Some(0) => &mut split.train,
                    Some(1) => &mut split.validation,
                    Some(2) => &mut split.test,
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "manifest line '{id}' outside any section"
                        )))
                    }
                };
                bucket.push(id.to_string());
            }
        }
    }
    Ok(split)
}

/// Write a volume in the KSPV format: magic, version u16, domain u8
/// (0 = k-space, 1 = image), slice/coil/height/width u32, then interleaved
/// (re, im) single-precision little-endian samples.
pub fn write_volume(path: &Path, vol: &ComplexVolume) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&VOLUME_MAGIC)?;
    f.write_all(&VOLUME_VERSION.to_le_bytes())?;
    f.write_all(&[match vol.domain() {
        Domain::KSpace => 0u8,
        Domain::Image => 1u8,
    }])?;
    for dim in [vol.n_slices(), vol.n_coils(), vol.height(), vol.width()] {
        f.write_all(&(dim as u32).to_le_bytes())?;
    }
    for c in vol.data() {
        f.write_all(&c.re.to_le_bytes())?;
        f.write_all(&c.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<ComplexVolume> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if magic != VOLUME_MAGIC {
        return Err(Error::BadMagic {
            expected: VOLUME_MAGIC,
            found: magic,
        });
    }
    let mut b2 = [0u8; 2];
    f.read_exact(&mut b2)?;
    let version = u16::from_le_bytes(b2);
    if version != VOLUME_VERSION {
        return Err(Error::UnsupportedVersion { found: version });
    }
    let mut b1 = [0u8; 1];
    f.read_exact(&mut b1)?;
    let domain = match b1[0] {
        0 => Domain::KSpace,
        1 => Domain::Image,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown domain tag {other}"
            )))
        }
    };
    let mut b4 = [0u8; 4];
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        f.read_exact(&mut b4)?;
        *d = u32::from_le_bytes(b4) as usize;
    }
    let count = dims.iter().product::<usize>();
    let mut payload = vec![0u8; count * 8];
    let mut got = 0usize;
    while got < payload.len() {
        let n = f.read(&mut payload[got..])?;
        if n == 0 {
            return Err(Error::Truncated {
                expected: (count * 8) as u64,
                found: got as u64,
            });
        }
        got += n;
    }
    let mut data = Vec::with_capacity(count);
    for chunk in payload.chunks_exact(8) {
        let re = f32::from_le_bytes(chunk[0..4].try_into().unwrap());
        let im = f32::from_le_bytes(chunk[4..8].try_into().unwrap());
        data.push(Complex32::new(re, im));
    }
    ComplexVolume::from_parts(dims[0], dims[1], dims[2], dims[3], domain, data)
}
