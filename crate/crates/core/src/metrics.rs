//! Image quality metrics (global-statistics SSIM, PSNR, NMSE) and the
//! per-slice evaluation report.
//!
//! SSIM uses global image statistics with non-squared stabilizers
//! c1 = k1*L and c2 = k2*L, population variance, and L = max of the
//! reference image. A sliding-window variant exists behind
//! [`ssim_windowed`] but the global form is the reference behavior.

use crate::error::{Error, Result};
use crate::stats::wilcoxon_rank_sum;
use crate::volume::RealImage;

const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn check_same_shape(a: &RealImage, b: &RealImage, what: &str) -> Result<()> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

struct PairStats {
    mean_a: f64,
    mean_b: f64,
    var_a: f64,
    var_b: f64,
    cov: f64,
}

fn pair_stats(a: &[f32], b: &[f32]) -> PairStats {
    let n = a.len() as f64;
    let mut sa = 0.0;
    let mut sb = 0.0;
    for i in 0..a.len() {
        sa += a[i] as f64;
        sb += b[i] as f64;
    }
    let (ma, mb) = (sa / n, sb / n);
    let mut va = 0.0;
    let mut vb = 0.0;
    let mut cov = 0.0;
    for i in 0..a.len() {
        let da = a[i] as f64 - ma;
        let db = b[i] as f64 - mb;
        va += da * da;
        vb += db * db;
        cov += da * db;
    }
    PairStats {
        mean_a: ma,
        mean_b: mb,
        var_a: va / n,
        var_b: vb / n,
        cov: cov / n,
    }
}

/// Structural similarity with global statistics.
pub fn ssim(vhat: &RealImage, v: &RealImage) -> Result<f64> {
    check_same_shape(vhat, v, "ssim")?;
    let l = v.max_value() as f64;
    if !(l > 0.0) {
        return Err(Error::DegenerateMetric(format!(
            "ssim: reference maximum {l} must be positive"
        )));
    }
    let c1 = K1 * l;
    let c2 = K2 * l;
    let s = pair_stats(&vhat.pixels, &v.pixels);
    Ok(((2.0 * s.mean_a * s.mean_b + c1) * (2.0 * s.cov + c2))
        / ((s.mean_a * s.mean_a + s.mean_b * s.mean_b + c1) * (s.var_a + s.var_b + c2)))
}

/// Mean SSIM over square windows; not used by the evaluation pipeline.
pub fn ssim_windowed(vhat: &RealImage, v: &RealImage, window: usize) -> Result<f64> {
    check_same_shape(vhat, v, "ssim_windowed")?;
    if window == 0 || window > v.height || window > v.width {
        return Err(Error::InvalidArgument(format!(
            "ssim_windowed: window {window} incompatible with {}x{}",
            v.height, v.width
        )));
    }
    let l = v.max_value() as f64;
    if !(l > 0.0) {
        return Err(Error::DegenerateMetric(
            "ssim_windowed: reference maximum must be positive".into(),
        ));
    }
    let c1 = K1 * l;
    let c2 = K2 * l;
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=(v.height - window) {
        for x0 in 0..=(v.width - window) {
            let mut a = Vec::with_capacity(window * window);
            let mut b = Vec::with_capacity(window * window);
            for y in y0..y0 + window {
                for x in x0..x0 + window {
                    a.push(vhat.at(y, x));
                    b.push(v.at(y, x));
                }
            }
            let s = pair_stats(&a, &b);
            total += ((2.0 * s.mean_a * s.mean_b + c1) * (2.0 * s.cov + c2))
                / ((s.mean_a * s.mean_a + s.mean_b * s.mean_b + c1) * (s.var_a + s.var_b + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn mse(a: &RealImage, b: &RealImage) -> f64 {
    let n = a.pixels.len() as f64;
    a.pixels
        .iter()
        .zip(b.pixels.iter())
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum::<f64>()
        / n
}

/// Peak signal-to-noise ratio in decibels; identical images yield +inf.
pub fn psnr(vhat: &RealImage, v: &RealImage) -> Result<f64> {
    check_same_shape(vhat, v, "psnr")?;
    let peak = v.max_value() as f64;
    if !(peak > 0.0) {
        return Err(Error::DegenerateMetric(format!(
            "psnr: reference maximum {peak} must be positive"
        )));
    }
    let m = mse(vhat, v);
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// Normalized mean squared error: squared error over reference energy.
pub fn nmse(vhat: &RealImage, v: &RealImage) -> Result<f64> {
    check_same_shape(vhat, v, "nmse")?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in vhat.pixels.iter().zip(v.pixels.iter()) {
        let d = *x as f64 - *y as f64;
        num += d * d;
        den += (*y as f64) * (*y as f64);
    }
    if den == 0.0 {
        return Err(Error::DegenerateMetric(
            "nmse: reference image is identically zero".into(),
        ));
    }
    Ok(num / den)
}

/// Per-slice metrics for one reconstruction against its reference.
#[derive(Clone, Copy, Debug)]
pub struct SliceMetrics {
    pub ssim: f64,
    pub nmse: f64,
    pub psnr: f64,
}

/// Mean and (population) standard deviation of one metric column.
#[derive(Clone, Copy, Debug)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

fn aggregate(values: impl Iterator<Item = f64> + Clone) -> Aggregate {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Aggregate {
        mean,
        std: var.sqrt(),
    }
}

/// Per-slice and aggregate metrics plus pairwise comparison p-values.
#[derive(Clone, Debug, Default)]
pub struct MetricsReport {
    pub per_slice: Vec<SliceMetrics>,
    /// (comparison name, metric name, two-sided p-value)
    pub comparisons: Vec<(String, String, f64)>,
}

impl MetricsReport {
    /// Evaluate a stack of reconstructed slices against references.
    pub fn evaluate(recon: &[RealImage], truth: &[RealImage]) -> Result<MetricsReport> {
        if recon.len() != truth.len() {
            return Err(Error::ShapeMismatch(format!(
                "evaluate: {} reconstructed slices vs {} references",
                recon.len(),
                truth.len()
            )));
        }
        let mut per_slice = Vec::with_capacity(recon.len());
        for (r, t) in recon.iter().zip(truth.iter()) {
            per_slice.push(SliceMetrics {
                ssim: ssim(r, t)?,
                nmse: nmse(r, t)?,
                psnr: psnr(r, t)?,
            });
        }
        Ok(MetricsReport {
            per_slice,
            comparisons: Vec::new(),
        })
    }

    pub fn aggregate_ssim(&self) -> Aggregate {
        aggregate(self.per_slice.iter().map(|m| m.ssim))
    }
    pub fn aggregate_nmse(&self) -> Aggregate {
        aggregate(self.per_slice.iter().map(|m| m.nmse))
    }
    pub fn aggregate_psnr(&self) -> Aggregate {
        aggregate(self.per_slice.iter().map(|m| m.psnr))
    }

    /// Add Wilcoxon rank-sum comparisons between two per-slice metric sets.
    pub fn add_comparison(&mut self, name: &str, a: &MetricsReport, b: &MetricsReport) -> Result<()> {
        for (metric, fa, fb) in [
            (
                "ssim",
                a.per_slice.iter().map(|m| m.ssim).collect::<Vec<_>>(),
                b.per_slice.iter().map(|m| m.ssim).collect::<Vec<_>>(),
            ),
            (
                "nmse",
                a.per_slice.iter().map(|m| m.nmse).collect::<Vec<_>>(),
                b.per_slice.iter().map(|m| m.nmse).collect::<Vec<_>>(),
            ),
            (
                "psnr",
                a.per_slice.iter().map(|m| m.psnr).collect::<Vec<_>>(),
                b.per_slice.iter().map(|m| m.psnr).collect::<Vec<_>>(),
            ),
        ] {
            let p = wilcoxon_rank_sum(&fa, &fb)?;
            self.comparisons
                .push((name.to_string(), metric.to_string(), p));
        }
        Ok(())
    }

    /// UTF-8 tabular serialization: one row per slice, then the aggregate
    /// summary, then comparison p-values.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("slice,ssim,nmse,psnr\n");
        for (i, m) in self.per_slice.iter().enumerate() {
            out.push_str(&format!(
                "{},{:.12},{:.12},{:.12}\n",
                i, m.ssim, m.nmse, m.psnr
            ));
        }
        out.push_str("# aggregate (mean,std)\n");
        out.push_str("metric,mean,std\n");
        let s = self.aggregate_ssim();
        let n = self.aggregate_nmse();
        let p = self.aggregate_psnr();
        out.push_str(&format!("ssim,{:.12},{:.12}\n", s.mean, s.std));
        out.push_str(&format!("nmse,{:.12},{:.12}\n", n.mean, n.std));
        out.push_str(&format!("psnr,{:.12},{:.12}\n", p.mean, p.std));
        if !self.comparisons.is_empty() {
            out.push_str("# comparisons\n");
            out.push_str("pair,metric,p_value\n");
            for (pair, metric, pv) in &self.comparisons {
                out.push_str(&format!("{pair},{metric},{pv:.6e}\n"));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_image(h: usize, w: usize, seed: u64) -> RealImage {
        let mut rng = StdRng::seed_from_u64(seed);
        RealImage {
            height: h,
            width: w,
            pixels: (0..h * w).map(|_| rng.gen_range(0.05f32..1.0)).collect(),
        }
    }

    /// Direct two-pass transliteration of the published formulas.
    fn ssim_oracle(a: &RealImage, b: &RealImage) -> f64 {
        let n = a.pixels.len() as f64;
        let ma = a.pixels.iter().map(|v| *v as f64).sum::<f64>() / n;
        let mb = b.pixels.iter().map(|v| *v as f64).sum::<f64>() / n;
        let va = a.pixels.iter().map(|v| (*v as f64 - ma).powi(2)).sum::<f64>() / n;
        let vb = b.pixels.iter().map(|v| (*v as f64 - mb).powi(2)).sum::<f64>() / n;
        let cov = a
            .pixels
            .iter()
            .zip(b.pixels.iter())
            .map(|(x, y)| (*x as f64 - ma) * (*y as f64 - mb))
            .sum::<f64>()
            / n;
        let l = b.pixels.iter().map(|v| *v as f64).fold(f64::MIN, f64::max);
        let (c1, c2) = (0.01 * l, 0.03 * l);
        (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let v = random_image(8, 8, 1);
        assert!((ssim(&v, &v).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_matches_direct_formula_on_random_pairs() {
        for seed in 0..50 {
            let a = random_image(8, 8, 1000 + seed);
            let b = random_image(8, 8, 2000 + seed);
            let got = ssim(&a, &b).unwrap();
            let want = ssim_oracle(&a, &b);
            assert!((got - want).abs() < 1e-10, "seed {seed}: {got} vs {want}");
        }
    }

    #[test]
    fn constant_offset_lowers_ssim_below_one() {
        let v = random_image(8, 8, 3);
        let mut shifted = v.clone();
        for p in shifted.pixels.iter_mut() {
            *p += 0.25;
        }
        assert!(ssim(&shifted, &v).unwrap() < 1.0);
    }

    #[test]
    fn psnr_known_values_and_scale_invariance() {
        let mut v = RealImage::zeros(2, 2);
        v.pixels = vec![1.0, 0.5, 0.25, 0.75];
        let mut vhat = v.clone();
        // MSE 0.01 against peak 1 -> 20 dB.
        for p in vhat.pixels.iter_mut() {
            *p += 0.1;
        }
        // peak of v stays 1.0; mse = 0.01 up to f32 rounding of the offset
        assert!((psnr(&vhat, &v).unwrap() - 20.0).abs() < 1e-4);

        let mut verr = v.clone();
        verr.pixels = vec![2.0, 1.5, 1.25, 1.75]; // mse 1, peak 1 -> 0 dB
        assert!(psnr(&verr, &v).unwrap().abs() < 1e-6);

        let alpha = 3.7f32;
        let scale = |img: &RealImage| RealImage {
            height: img.height,
            width: img.width,
            pixels: img.pixels.iter().map(|p| p * alpha).collect(),
        };
        let a = random_image(8, 8, 4);
        let b = random_image(8, 8, 5);
        let p1 = psnr(&a, &b).unwrap();
        let p2 = psnr(&scale(&a), &scale(&b)).unwrap();
        assert!((p1 - p2).abs() < 1e-4);
    }

    #[test]
    fn psnr_of_identical_images_is_infinite() {
        let v = random_image(4, 4, 6);
        assert!(psnr(&v, &v).unwrap().is_infinite());
    }

    #[test]
    fn nmse_basic_identities() {
        let v = random_image(8, 8, 7);
        assert_eq!(nmse(&v, &v).unwrap(), 0.0);
        let zero = RealImage::zeros(8, 8);
        assert!((nmse(&zero, &v).unwrap() - 1.0).abs() < 1e-12);
        let double = RealImage {
            height: 8,
            width: 8,
            pixels: v.pixels.iter().map(|p| 2.0 * p).collect(),
        };
        assert!((nmse(&double, &v).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn degenerate_references_are_rejected() {
        let zero = RealImage::zeros(4, 4);
        let v = random_image(4, 4, 8);
        assert!(ssim(&v, &zero).is_err());
        assert!(psnr(&v, &zero).is_err());
        assert!(nmse(&v, &zero).is_err());
    }

    #[test]
    fn report_aggregates_are_recomputable() {
        let truth: Vec<RealImage> = (0..6).map(|i| random_image(8, 8, 100 + i)).collect();
        let recon: Vec<RealImage> = truth
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut r = t.clone();
                for (j, p) in r.pixels.iter_mut().enumerate() {
                    *p += 0.01 * ((i + j) % 3) as f32;
                }
                r
            })
            .collect();
        let report = MetricsReport::evaluate(&recon, &truth).unwrap();
        let agg = report.aggregate_ssim();
        let mean: f64 =
            report.per_slice.iter().map(|m| m.ssim).sum::<f64>() / report.per_slice.len() as f64;
        assert!((agg.mean - mean).abs() < 1e-12);
        let text = report.to_text();
        assert!(text.starts_with("slice,ssim,nmse,psnr"));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 6 + 4);
    }
}
