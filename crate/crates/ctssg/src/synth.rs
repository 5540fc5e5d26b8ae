//! Synthetic labeled volumes with known ground truth.
//!
//! Each volume is Gaussian background plus, per active label, one of
//! three injected patterns confined to a slice band and an in-plane
//! region: a Gaussian blob on a single triplet, a slice-parity intensity
//! alternation, or a linear intensity ramp across the band. Pattern
//! amplitudes sit far above the voxel noise, so a closed-form matched
//! filter recovers the labels almost perfectly; that filter doubles as
//! the reference detector for learning-sanity checks.
//!
//! All randomness derives from (seed, volume index, purpose), so any
//! volume can be regenerated in isolation.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::util::{mix_seed, rng_for};

const STREAM_LABELS: u64 = 1;
const STREAM_BACKGROUND: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_PATTERN_BASE: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    /// Gaussian bump on every slice of one random triplet in the band.
    Blob,
    /// Constant offset whose sign flips with slice parity.
    AlternatingIntensity,
    /// Linear intensity ramp across the band, centered on zero.
    MultiSliceGradient,
}

/// Half-open in-plane rectangle [y0, y1) x [x0, x1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl Region {
    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }
    pub fn area(&self) -> usize {
        self.height() * self.width()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LabelSpec {
    pub name: String,
    pub pattern: PatternKind,
    /// Half-open triplet index range the pattern occupies.
    pub z_band: [usize; 2],
    /// Peak intensity offset; must clear the noise floor.
    pub amplitude: f64,
    /// Marginal probability of the label being active, in [0, 1).
    pub prevalence: f64,
    /// In-plane region; defaults to a quadrant cycled by label index.
    #[serde(default)]
    pub region: Option<Region>,
}

fn default_background_level() -> f64 {
    0.3
}
fn default_noise_floor() -> f64 {
    0.04
}
fn default_triplet_size() -> usize {
    3
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SynthConfig {
    pub slices: usize,
    pub slice_height: usize,
    pub slice_width: usize,
    #[serde(default = "default_triplet_size")]
    pub triplet_size: usize,
    pub labels: Vec<LabelSpec>,
    /// Optional Gaussian-copula correlation matrix between labels
    /// (unit diagonal, positive definite).
    #[serde(default)]
    pub correlation: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_background_level")]
    pub background_level: f64,
    /// Standard deviation of the baked-in background noise.
    #[serde(default = "default_noise_floor")]
    pub noise_floor: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Desk-scale default: 24 x 32 x 32 volumes, 8 triplets, 4 labels
    /// covering all three pattern families.
    pub fn desk_default(seed: u64) -> Self {
        SynthConfig {
            slices: 24,
            slice_height: 32,
            slice_width: 32,
            triplet_size: 3,
            labels: vec![
                LabelSpec {
                    name: "low_band_blob".to_string(),
                    pattern: PatternKind::Blob,
                    z_band: [0, 4],
                    amplitude: 0.35,
                    prevalence: 0.5,
                    region: None,
                },
                LabelSpec {
                    name: "parity_flicker".to_string(),
                    pattern: PatternKind::AlternatingIntensity,
                    z_band: [2, 6],
                    amplitude: 0.3,
                    prevalence: 0.45,
                    region: None,
                },
                LabelSpec {
                    name: "axial_ramp".to_string(),
                    pattern: PatternKind::MultiSliceGradient,
                    z_band: [1, 7],
                    amplitude: 0.4,
                    prevalence: 0.5,
                    region: None,
                },
                LabelSpec {
                    name: "high_band_blob".to_string(),
                    pattern: PatternKind::Blob,
                    z_band: [4, 8],
                    amplitude: 0.35,
                    prevalence: 0.4,
                    region: None,
                },
            ],
            correlation: None,
            background_level: default_background_level(),
            noise_floor: default_noise_floor(),
            seed,
        }
    }

    pub fn node_count(&self) -> usize {
        self.slices / self.triplet_size
    }

    pub fn voxels_per_volume(&self) -> usize {
        self.slices * self.slice_height * self.slice_width
    }

    /// Region for a label: explicit, or quadrants cycled by index.
    pub fn region_for(&self, label: usize) -> Result<Region> {
        let spec = self
            .labels
            .get(label)
            .ok_or_else(|| Error::index(format!("label {label} of {}", self.labels.len())))?;
        if let Some(r) = spec.region {
            return Ok(r);
        }
        let hh = self.slice_height / 2;
        let hw = self.slice_width / 2;
        Ok(match label % 4 {
            0 => Region { y0: 0, y1: hh, x0: 0, x1: hw },
            1 => Region { y0: 0, y1: hh, x0: hw, x1: self.slice_width },
            2 => Region { y0: hh, y1: self.slice_height, x0: 0, x1: hw },
            _ => Region { y0: hh, y1: self.slice_height, x0: hw, x1: self.slice_width },
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.triplet_size == 0 || self.slices == 0 || self.slices % self.triplet_size != 0 {
            return Err(Error::validation(format!(
                "slice count {} must be a positive multiple of triplet size {}",
                self.slices, self.triplet_size
            )));
        }
        if self.slice_height < 4 || self.slice_width < 4 {
            return Err(Error::validation("slices must be at least 4 x 4".to_string()));
        }
        if self.labels.is_empty() {
            return Err(Error::validation("at least one label is required".to_string()));
        }
        if !(self.noise_floor > 0.0) || !(self.background_level >= 0.0) || self.background_level > 1.0 {
            return Err(Error::validation(format!(
                "background level {} / noise floor {} out of range",
                self.background_level, self.noise_floor
            )));
        }
        let n = self.node_count();
        for (i, spec) in self.labels.iter().enumerate() {
            let [lo, hi] = spec.z_band;
            if lo >= hi || hi > n {
                return Err(Error::validation(format!(
                    "label {i} ({}): band [{lo}, {hi}) outside the {n} triplets",
                    spec.name
                )));
            }
            if !(spec.prevalence >= 0.0 && spec.prevalence < 1.0) {
                return Err(Error::validation(format!(
                    "label {i} ({}): prevalence {} outside [0, 1)",
                    spec.name, spec.prevalence
                )));
            }
            if !(spec.amplitude > self.noise_floor) {
                return Err(Error::validation(format!(
                    "label {i} ({}): amplitude {} does not clear the noise floor {}",
                    spec.name, spec.amplitude, self.noise_floor
                )));
            }
            let slices_in_band = (hi - lo) * self.triplet_size;
            match spec.pattern {
                PatternKind::Blob => {}
                PatternKind::AlternatingIntensity | PatternKind::MultiSliceGradient => {
                    if slices_in_band < 2 {
                        return Err(Error::validation(format!(
                            "label {i} ({}): pattern needs at least 2 slices in the band",
                            spec.name
                        )));
                    }
                }
            }
            let r = self.region_for(i)?;
            if r.y0 >= r.y1 || r.x0 >= r.x1 || r.y1 > self.slice_height || r.x1 > self.slice_width
            {
                return Err(Error::validation(format!(
                    "label {i} ({}): region {r:?} is empty or out of bounds",
                    spec.name
                )));
            }
        }
        if let Some(c) = &self.correlation {
            let m = self.labels.len();
            if c.len() != m || c.iter().any(|row| row.len() != m) {
                return Err(Error::validation(format!(
                    "correlation matrix must be {m} x {m}"
                )));
            }
            for i in 0..m {
                if (c[i][i] - 1.0).abs() > 1e-12 {
                    return Err(Error::validation(
                        "correlation matrix needs a unit diagonal".to_string(),
                    ));
                }
                for j in 0..m {
                    if (c[i][j] - c[j][i]).abs() > 1e-12 {
                        return Err(Error::validation(
                            "correlation matrix must be symmetric".to_string(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticVolume {
    /// Row-major [slices, height, width] intensities in [0, 1].
    pub voxels: Vec<f64>,
    pub labels: Vec<u8>,
    pub seed: u64,
    pub index: u64,
}

impl SyntheticVolume {
    pub fn to_tensor<F: Scalar>(&self, cfg: &SynthConfig) -> Result<Tensor<F>> {
        Tensor::new(
            vec![cfg.slices, cfg.slice_height, cfg.slice_width],
            self.voxels.iter().map(|&v| F::from_f64(v)).collect(),
        )
    }

    pub fn labels_f64(&self) -> Vec<f64> {
        self.labels.iter().map(|&v| v as f64).collect()
    }
}

/// Standard normal quantile by bisection on the CDF; u in (0, 1).
fn normal_quantile(u: f64) -> f64 {
    let cdf = |x: f64| 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let (mut lo, mut hi) = (-9.0f64, 9.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn draw_labels(cfg: &SynthConfig, index: u64) -> Result<Vec<u8>> {
    let mut rng = rng_for(cfg.seed, mix_seed(index, STREAM_LABELS));
    let m = cfg.labels.len();
    match &cfg.correlation {
        None => Ok(cfg
            .labels
            .iter()
            .map(|spec| u8::from(rng.random::<f64>() < spec.prevalence))
            .collect()),
        Some(c) => {
            let corr = DMatrix::from_fn(m, m, |i, j| c[i][j]);
            let chol = nalgebra::Cholesky::new(corr).ok_or_else(|| {
                Error::validation(
                    "correlation matrix is not positive definite".to_string(),
                )
            })?;
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let z = nalgebra::DVector::from_fn(m, |_, _| normal.sample(&mut rng));
            let g = chol.l() * z;
            Ok(cfg
                .labels
                .iter()
                .enumerate()
                .map(|(i, spec)| {
                    if spec.prevalence == 0.0 {
                        0
                    } else {
                        u8::from(g[i] > normal_quantile(1.0 - spec.prevalence))
                    }
                })
                .collect())
        }
    }
}

/// Blob radius for a region: a quarter of its shorter side, at least 2.
fn blob_radius(region: &Region) -> f64 {
    (region.height().min(region.width()) as f64 / 4.0).max(2.0)
}

fn render_pattern(
    cfg: &SynthConfig,
    label: usize,
    index: u64,
    voxels: &mut [f64],
) -> Result<()> {
    let spec = &cfg.labels[label];
    let region = cfg.region_for(label)?;
    let (h, w) = (cfg.slice_height, cfg.slice_width);
    let c = cfg.triplet_size;
    let [band_lo, band_hi] = spec.z_band;
    let (s0, s1) = (band_lo * c, band_hi * c);
    let a = spec.amplitude;
    let mut rng = rng_for(cfg.seed, mix_seed(index, STREAM_PATTERN_BASE + label as u64));

    match spec.pattern {
        PatternKind::Blob => {
            let triplet = band_lo + rng.random_range(0..band_hi - band_lo);
            let r = blob_radius(&region);
            // Keep most of the blob mass inside the region when it fits.
            let inset = 1.5 * r;
            let span_y = region.y1 as f64 - region.y0 as f64;
            let span_x = region.x1 as f64 - region.x0 as f64;
            let cy = if span_y > 2.0 * inset {
                region.y0 as f64 + inset + rng.random::<f64>() * (span_y - 2.0 * inset)
            } else {
                region.y0 as f64 + span_y / 2.0
            };
            let cx = if span_x > 2.0 * inset {
                region.x0 as f64 + inset + rng.random::<f64>() * (span_x - 2.0 * inset)
            } else {
                region.x0 as f64 + span_x / 2.0
            };
            let inv = 1.0 / (2.0 * r * r);
            for s in triplet * c..(triplet + 1) * c {
                for y in 0..h {
                    for x in 0..w {
                        let dy = y as f64 - cy;
                        let dx = x as f64 - cx;
                        voxels[(s * h + y) * w + x] += a * (-(dy * dy + dx * dx) * inv).exp();
                    }
                }
            }
        }
        PatternKind::AlternatingIntensity => {
            for s in s0..s1 {
                let offset = if s % 2 == 0 { a } else { -a };
                for y in region.y0..region.y1 {
                    for x in region.x0..region.x1 {
                        voxels[(s * h + y) * w + x] += offset;
                    }
                }
            }
        }
        PatternKind::MultiSliceGradient => {
            let len = (s1 - s0) as f64;
            for s in s0..s1 {
                let u = (s - s0) as f64 / (len - 1.0);
                let offset = a * (u - 0.5);
                for y in region.y0..region.y1 {
                    for x in region.x0..region.x1 {
                        voxels[(s * h + y) * w + x] += offset;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Generates the volume at a given index. Labels, background, and each
/// pattern use independent RNG streams so volumes are reproducible
/// individually and in any order.
pub fn generate_one(cfg: &SynthConfig, index: u64) -> Result<SyntheticVolume> {
    cfg.validate()?;
    let labels = draw_labels(cfg, index)?;
    let n = cfg.voxels_per_volume();
    let mut rng_bg = rng_for(cfg.seed, mix_seed(index, STREAM_BACKGROUND));
    let normal = Normal::new(cfg.background_level, cfg.noise_floor)
        .map_err(|e| Error::validation(format!("background noise: {e}")))?;
    let mut voxels: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng_bg)).collect();
    for (l, &active) in labels.iter().enumerate() {
        if active == 1 {
            render_pattern(cfg, l, index, &mut voxels)?;
        }
    }
    for v in voxels.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(SyntheticVolume {
        voxels,
        labels,
        seed: cfg.seed,
        index,
    })
}

pub fn generate(cfg: &SynthConfig, count: usize) -> Result<Vec<SyntheticVolume>> {
    (0..count as u64).map(|i| generate_one(cfg, i)).collect()
}

/// Shifts a volume along the slice axis: out[s] = in[s - shift], with
/// vacated slices filled by the volume minimum (air). |shift| must be
/// smaller than the slice count.
pub fn z_translate(
    voxels: &[f64],
    slices: usize,
    slice_elems: usize,
    shift: i64,
) -> Result<Vec<f64>> {
    if voxels.len() != slices * slice_elems {
        return Err(Error::dimension(format!(
            "volume holds {} values, expected {} x {}",
            voxels.len(),
            slices,
            slice_elems
        )));
    }
    if shift.unsigned_abs() as usize >= slices {
        return Err(Error::validation(format!(
            "shift {shift} with only {slices} slices"
        )));
    }
    let fill = voxels.iter().copied().fold(f64::INFINITY, f64::min);
    let mut out = vec![fill; voxels.len()];
    for s_out in 0..slices as i64 {
        let s_in = s_out - shift;
        if s_in >= 0 && s_in < slices as i64 {
            let src = s_in as usize * slice_elems;
            let dst = s_out as usize * slice_elems;
            out[dst..dst + slice_elems].copy_from_slice(&voxels[src..src + slice_elems]);
        }
    }
    Ok(out)
}

/// Adds i.i.d. Gaussian noise and re-clips to [0, 1]. Deterministic in
/// the supplied seed.
pub fn add_noise(voxels: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::validation(format!("noise sigma {sigma} must be >= 0")));
    }
    if sigma == 0.0 {
        return Ok(voxels.to_vec());
    }
    let mut rng = rng_for(seed, STREAM_NOISE);
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    Ok(voxels
        .iter()
        .map(|&v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0))
        .collect())
}

/// Matched-filter detection statistic for one label.
///
/// All statistics compare the label's region inside its slice band
/// against the same region outside the band (or the configured
/// background level when the band spans the whole volume):
/// blob: best triplet-mean excess; alternation: parity-signed band mean;
/// ramp: least-squares slope across the band.
pub fn matched_filter_score(cfg: &SynthConfig, voxels: &[f64], label: usize) -> Result<f64> {
    cfg.validate()?;
    if voxels.len() != cfg.voxels_per_volume() {
        return Err(Error::dimension(format!(
            "volume holds {} values, expected {}",
            voxels.len(),
            cfg.voxels_per_volume()
        )));
    }
    let spec = &cfg.labels[label];
    let region = cfg.region_for(label)?;
    let (h, w) = (cfg.slice_height, cfg.slice_width);
    let c = cfg.triplet_size;
    let [band_lo, band_hi] = spec.z_band;
    let (s0, s1) = (band_lo * c, band_hi * c);

    let region_mean = |s: usize| -> f64 {
        let mut sum = 0.0;
        for y in region.y0..region.y1 {
            for x in region.x0..region.x1 {
                sum += voxels[(s * h + y) * w + x];
            }
        }
        sum / region.area() as f64
    };

    let outside: Vec<usize> = (0..cfg.slices).filter(|&s| s < s0 || s >= s1).collect();
    let baseline = if outside.is_empty() {
        cfg.background_level
    } else {
        outside.iter().map(|&s| region_mean(s)).sum::<f64>() / outside.len() as f64
    };

    Ok(match spec.pattern {
        PatternKind::Blob => {
            let mut best = f64::NEG_INFINITY;
            for t in band_lo..band_hi {
                let mean: f64 =
                    (t * c..(t + 1) * c).map(region_mean).sum::<f64>() / c as f64;
                best = best.max(mean - baseline);
            }
            best
        }
        PatternKind::AlternatingIntensity => {
            let n = (s1 - s0) as f64;
            let signed: f64 = (s0..s1)
                .map(|s| {
                    let sign = if s % 2 == 0 { 1.0 } else { -1.0 };
                    sign * (region_mean(s) - baseline)
                })
                .sum();
            (signed / n).abs()
        }
        PatternKind::MultiSliceGradient => {
            let n = (s1 - s0) as f64;
            let mean_s = (n - 1.0) / 2.0;
            let mut num = 0.0;
            let mut den = 0.0;
            for s in s0..s1 {
                let ds = (s - s0) as f64 - mean_s;
                num += ds * region_mean(s);
                den += ds * ds;
            }
            (num / den).abs()
        }
    })
}

/// Detection threshold per label: half the expected statistic under a
/// clean render.
pub fn matched_filter_threshold(cfg: &SynthConfig, label: usize) -> Result<f64> {
    let spec = cfg
        .labels
        .get(label)
        .ok_or_else(|| Error::index(format!("label {label} of {}", cfg.labels.len())))?;
    let region = cfg.region_for(label)?;
    Ok(match spec.pattern {
        PatternKind::Blob => {
            let r = blob_radius(&region);
            let mass_fraction =
                (2.0 * std::f64::consts::PI * r * r / region.area() as f64).min(1.0);
            0.5 * spec.amplitude * mass_fraction
        }
        PatternKind::AlternatingIntensity => 0.5 * spec.amplitude,
        PatternKind::MultiSliceGradient => {
            let len = ((spec.z_band[1] - spec.z_band[0]) * cfg.triplet_size) as f64;
            0.5 * spec.amplitude / (len - 1.0)
        }
    })
}

/// Reference label predictions for a volume.
pub fn matched_filter_predict(cfg: &SynthConfig, voxels: &[f64]) -> Result<Vec<u8>> {
    (0..cfg.labels.len())
        .map(|l| {
            Ok(u8::from(
                matched_filter_score(cfg, voxels, l)? > matched_filter_threshold(cfg, l)?,
            ))
        })
        .collect()
}
