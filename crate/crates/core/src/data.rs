//! Samples and datasets, the synthetic layered-retina generator, training
//! augmentation and stratified splits.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{config_err, contract_err, dataset_err, shape_err, Result};
use crate::image::{self, Affine};
use crate::rng::{streams, Rng};
use crate::tensor::Tensor;

/// Class names of the synthetic generator, in label order.
pub const SYNTH_CLASSES: [&str; 3] = ["normal", "fluid", "drusen"];

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[C, S, S]`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_classes: usize,
}

impl Dataset {
    /// Checks that all images share one `[C, H, W]` shape and labels are in range.
    pub fn new(samples: Vec<Sample>, num_classes: usize) -> Result<Self> {
        if let Some(first) = samples.first() {
            let shape = first.image.shape();
            if shape.len() != 3 {
                return Err(shape_err!("sample images must be [C, H, W], got {:?}", shape));
            }
            for (i, s) in samples.iter().enumerate() {
                if s.image.shape() != shape {
                    return Err(shape_err!("sample {} has shape {:?}, expected {:?}", i, s.image.shape(), shape));
                }
                if s.label >= num_classes {
                    return Err(dataset_err!("sample {} has label {} but there are {} classes", i, s.label, num_classes));
                }
            }
        }
        Ok(Dataset { samples, num_classes })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn get(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    /// `[C, H, W]` of every image, if any.
    pub fn image_shape(&self) -> Option<&[usize]> {
        self.samples.first().map(|s| s.image.shape())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset { samples: indices.iter().map(|&i| self.samples[i].clone()).collect(), num_classes: self.num_classes }
    }

    /// Stacks the given samples into `[B, C, H, W]` with their labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        stack(indices.iter().map(|&i| &self.samples[i]))
    }
}

/// Stacks samples of equal shape into `[B, C, H, W]`.
pub fn stack<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Result<(Tensor<f32>, Vec<usize>)> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut shape: Option<Vec<usize>> = None;
    for s in samples {
        match &shape {
            None => shape = Some(s.image.shape().to_vec()),
            Some(sh) if sh.as_slice() != s.image.shape() => {
                return Err(shape_err!("cannot batch {:?} with {:?}", sh, s.image.shape()));
            }
            _ => {}
        }
        data.extend_from_slice(s.image.data());
        labels.push(s.label);
    }
    let shape = shape.ok_or_else(|| contract_err!("cannot batch zero samples"))?;
    let full: Vec<usize> = core::iter::once(labels.len()).chain(shape).collect();
    Ok((Tensor::new(&full, data)?, labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Shift {
    #[default]
    None,
    /// Stretched contrast, doubled noise and thicker layers.
    Ood,
}

/// Magnitudes applied when a spec carries [`Shift::Ood`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OodShift {
    /// Pixel values map to `offset + gain * v` before noise.
    pub contrast_gain: f64,
    pub contrast_offset: f64,
    pub noise_factor: f64,
    pub thickness_factor: f64,
}

impl Default for OodShift {
    fn default() -> Self {
        OodShift { contrast_gain: 1.3, contrast_offset: -0.06, noise_factor: 2.0, thickness_factor: 1.3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Images are `size x size`.
    pub size: usize,
    /// The grey image is replicated over this many channels.
    pub channels: usize,
    pub per_class: usize,
    pub noise_sigma: f64,
    /// Layer thickness range in pixels at 32x32; scaled with `size`.
    pub band_thickness: (f64, f64),
    pub shift: Shift,
    pub ood: OodShift,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            size: 32,
            channels: 1,
            per_class: 100,
            noise_sigma: 0.05,
            band_thickness: (1.5, 3.0),
            shift: Shift::None,
            ood: OodShift::default(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 8 {
            return Err(config_err!("synthetic image size must be at least 8, got {}", self.size));
        }
        if self.channels == 0 || self.per_class == 0 {
            return Err(config_err!("synthetic channels and per_class must be positive"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(config_err!("noise sigma must be finite and non-negative, got {}", self.noise_sigma));
        }
        let (lo, hi) = self.band_thickness;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(config_err!("band thickness range ({}, {}) is invalid", lo, hi));
        }
        let o = &self.ood;
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(o.contrast_gain) && o.contrast_offset.is_finite() && ok(o.noise_factor) && o.thickness_factor > 0.0 && o.thickness_factor.is_finite()) {
            return Err(config_err!("ood shift {:?} is invalid", o));
        }
        Ok(())
    }

    pub fn with_shift(&self, shift: Shift) -> Self {
        SyntheticSpec { shift, ..self.clone() }
    }

    pub fn with_per_class(&self, per_class: usize) -> Self {
        SyntheticSpec { per_class, ..self.clone() }
    }
}

struct Band {
    centre: f64,
    half_width: f64,
    intensity: f64,
}

fn gaussian(d: f64) -> f64 {
    Float::exp(-0.5 * d * d)
}

fn synth_image(spec: &SyntheticSpec, label: usize, rng: &mut Rng) -> Vec<f64> {
    let s = spec.size as f64;
    let px = s / 32.0;
    let ood = spec.shift == Shift::Ood;
    let thick_scale = if ood { spec.ood.thickness_factor } else { 1.0 };
    let (lo, hi) = spec.band_thickness;

    let background = rng.range(0.05, 0.15);
    let count = 3 + rng.below(3);
    let mut y = rng.range(0.2, 0.35) * s;
    let mut bands = Vec::with_capacity(count);
    for _ in 0..count {
        let thickness = rng.range(lo, hi) * px * thick_scale;
        bands.push(Band { centre: y, half_width: thickness / 2.0, intensity: rng.range(0.45, 0.9) });
        y += thickness + rng.range(1.0, 3.0) * px;
    }
    let profile = |row: f64| {
        background + bands.iter().map(|b| b.intensity * gaussian((row - b.centre) / b.half_width)).sum::<f64>()
    };
    let span = (bands[0].centre, bands[count - 1].centre);

    enum Lesion {
        None,
        Fluid { cy: f64, cx: f64, ry: f64, rx: f64, depth: f64 },
        Drusen { amp: f64, freq: f64, phase: f64 },
    }
    let lesion = match label {
        1 => Lesion::Fluid {
            cy: rng.range(span.0, span.1),
            cx: rng.range(0.3, 0.7) * s,
            ry: rng.range(0.08, 0.14) * s,
            rx: rng.range(0.12, 0.22) * s,
            depth: rng.range(0.6, 0.9),
        },
        2 => Lesion::Drusen {
            amp: rng.range(1.5, 3.0) * px,
            freq: (2 + rng.below(3)) as f64,
            phase: rng.range(0.0, 2.0 * core::f64::consts::PI),
        },
        _ => Lesion::None,
    };

    let n = spec.size;
    let mut out = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            let (yf, xf) = (r as f64, c as f64);
            let mut v = match lesion {
                Lesion::Drusen { amp, freq, phase } => {
                    let bump = Float::sin(2.0 * core::f64::consts::PI * freq * xf / s + phase).max(0.0);
                    profile(yf + amp * bump * bump)
                }
                _ => profile(yf),
            };
            if let Lesion::Fluid { cy, cx, ry, rx, depth } = lesion {
                let d2 = ((yf - cy) / ry).powi(2) + ((xf - cx) / rx).powi(2);
                let mask = (1.5 * (1.0 - d2)).clamp(0.0, 1.0);
                v *= 1.0 - depth * mask;
            }
            out.push(v);
        }
    }
    let sigma = spec.noise_sigma * if ood { spec.ood.noise_factor } else { 1.0 };
    for v in out.iter_mut() {
        if ood {
            *v = spec.ood.contrast_offset + spec.ood.contrast_gain * *v;
        }
        if sigma > 0.0 {
            *v += sigma * rng.normal();
        }
        *v = v.clamp(0.0, 1.0);
    }
    out
}

/// Balanced synthetic dataset; sample `i` has label `i % 3`.
pub fn synth_generate(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let classes = SYNTH_CLASSES.len();
    let mut rng = Rng::new(seed);
    let n = spec.size;
    let samples = (0..spec.per_class * classes)
        .map(|i| {
            let label = i % classes;
            let plane = synth_image(spec, label, &mut rng);
            let data: Vec<f32> = (0..spec.channels).flat_map(|_| plane.iter().map(|&v| v as f32)).collect();
            Ok(Sample { image: Tensor::new(&[spec.channels, n, n], data)?, label })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, classes)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Rotation drawn from `U(-rotation_deg, rotation_deg)`.
    pub rotation_deg: f64,
    pub zoom: (f64, f64),
    /// Shifts drawn from `U(-f, f)` times the image extent.
    pub width_shift: f64,
    pub height_shift: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { flip_prob: 0.5, rotation_deg: 15.0, zoom: (0.9, 1.1), width_shift: 0.1, height_shift: 0.1 }
    }
}

impl AugmentConfig {
    pub const NONE: AugmentConfig =
        AugmentConfig { flip_prob: 0.0, rotation_deg: 0.0, zoom: (1.0, 1.0), width_shift: 0.0, height_shift: 0.0 };

    pub fn validate(&self) -> Result<()> {
        let finite = [self.flip_prob, self.rotation_deg, self.zoom.0, self.zoom.1, self.width_shift, self.height_shift]
            .iter()
            .all(|v| v.is_finite());
        if !finite
            || !(0.0..=1.0).contains(&self.flip_prob)
            || self.rotation_deg < 0.0
            || self.width_shift < 0.0
            || self.height_shift < 0.0
            || !(self.zoom.0 > 0.0 && self.zoom.0 <= self.zoom.1)
        {
            return Err(config_err!("invalid augmentation settings {:?}", self));
        }
        Ok(())
    }
}

/// Random flip, rotation, zoom and shift with bilinear resampling and zero
/// fill. Every call draws the same number of values from `rng`.
pub fn augment(sample: &Sample, cfg: &AugmentConfig, rng: &mut Rng) -> Result<Sample> {
    let (h, w) = match *sample.image.shape() {
        [_, h, w] => (h, w),
        ref s => return Err(shape_err!("expected a [C, H, W] image, got {:?}", s)),
    };
    let flip = rng.bernoulli(cfg.flip_prob);
    let affine = Affine {
        degrees: rng.range(-cfg.rotation_deg, cfg.rotation_deg),
        zoom: rng.range(cfg.zoom.0, cfg.zoom.1),
        dy: rng.range(-cfg.height_shift, cfg.height_shift) * h as f64,
        dx: rng.range(-cfg.width_shift, cfg.width_shift) * w as f64,
    };
    let mut image = if flip { image::flip_horizontal(&sample.image)? } else { sample.image.clone() };
    image = affine.apply(&image)?;
    image.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(Sample { image, label: sample.label })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitScheme {
    Holdout { train: f64, val: f64, test: f64 },
    KFold(usize),
}

/// Stratified, seeded partition of sample indices. Holdout yields
/// `[train, val, test]`; k-fold yields `k` folds. Each part is sorted.
pub fn split(labels: &[usize], scheme: SplitScheme, seed: u64) -> Result<Vec<Vec<usize>>> {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = Rng::stream(seed, streams::SPLIT);
    for members in by_class.iter_mut() {
        rng.shuffle(members);
    }
    let mut parts = match scheme {
        SplitScheme::Holdout { train, val, test } => {
            let fracs = [train, val, test];
            if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) || ((train + val + test) - 1.0).abs() > 1e-9 {
                return Err(contract_err!("holdout fractions ({}, {}, {}) must be in [0, 1] and sum to 1", train, val, test));
            }
            let mut parts = vec![Vec::new(); 3];
            for members in &by_class {
                let n = members.len();
                let n_train = Float::round(n as f64 * train) as usize;
                let n_val = (Float::round(n as f64 * val) as usize).min(n - n_train.min(n));
                let n_train = n_train.min(n);
                parts[0].extend_from_slice(&members[..n_train]);
                parts[1].extend_from_slice(&members[n_train..n_train + n_val]);
                parts[2].extend_from_slice(&members[n_train + n_val..]);
            }
            parts
        }
        SplitScheme::KFold(k) => {
            if k < 2 {
                return Err(contract_err!("k-fold needs k >= 2, got {}", k));
            }
            let mut parts = vec![Vec::new(); k];
            let mut offset = 0;
            for (class, members) in by_class.iter().enumerate() {
                if !members.is_empty() && members.len() < k {
                    return Err(dataset_err!("class {} has {} samples, fewer than k = {}", class, members.len(), k));
                }
                for (j, &i) in members.iter().enumerate() {
                    parts[(offset + j) % k].push(i);
                }
                offset += members.len();
            }
            parts
        }
    };
    for p in parts.iter_mut() {
        p.sort_unstable();
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec { per_class: 4, ..Default::default() }
    }

    #[test]
    fn generation_is_deterministic_and_balanced() {
        let a = synth_generate(&small_spec(), 7).unwrap();
        let b = synth_generate(&small_spec(), 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_generate(&small_spec(), 8).unwrap());
        assert_eq!(a.class_counts(), [4, 4, 4]);
        assert_eq!(a.image_shape(), Some(&[1, 32, 32][..]));
        assert!(a.samples().iter().all(|s| s.image.data().iter().all(|&v| (0.0..=1.0).contains(&v))));
    }

    #[test]
    fn noiseless_normal_class_is_row_constant() {
        let spec = SyntheticSpec { noise_sigma: 0.0, ..small_spec() };
        let ds = synth_generate(&spec, 3).unwrap();
        for s in ds.samples().iter().filter(|s| s.label == 0) {
            for row in s.image.data().chunks(32) {
                assert!(row.iter().all(|&v| v == row[0]));
            }
        }
        // the lesion classes are not
        for s in ds.samples().iter().filter(|s| s.label != 0) {
            assert!(s.image.data().chunks(32).any(|row| row.iter().any(|&v| v != row[0])));
        }
    }

    #[test]
    fn channels_replicate() {
        let ds = synth_generate(&SyntheticSpec { channels: 3, ..small_spec() }, 1).unwrap();
        let d = ds.get(0).image.data();
        assert_eq!(&d[..1024], &d[1024..2048]);
        assert_eq!(&d[..1024], &d[2048..]);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(synth_generate(&SyntheticSpec { size: 4, ..small_spec() }, 0).is_err());
        assert!(synth_generate(&SyntheticSpec { noise_sigma: -1.0, ..small_spec() }, 0).is_err());
        assert!(synth_generate(&SyntheticSpec { band_thickness: (3.0, 1.0), ..small_spec() }, 0).is_err());
    }

    #[test]
    fn identity_augmentation() {
        let ds = synth_generate(&small_spec(), 2).unwrap();
        let mut rng = Rng::new(0);
        let out = augment(ds.get(1), &AugmentConfig::NONE, &mut rng).unwrap();
        assert_eq!(&out, ds.get(1));
    }

    #[test]
    fn flip_augmentation_is_an_involution() {
        let ds = synth_generate(&small_spec(), 2).unwrap();
        let cfg = AugmentConfig { flip_prob: 1.0, ..AugmentConfig::NONE };
        let mut rng = Rng::new(0);
        let once = augment(ds.get(2), &cfg, &mut rng).unwrap();
        assert_ne!(&once, ds.get(2));
        assert_eq!(once.image.data()[0], ds.get(2).image.data()[31]);
        let twice = augment(&once, &cfg, &mut rng).unwrap();
        assert_eq!(&twice, ds.get(2));
    }

    #[test]
    fn augmentation_keeps_label_shape_and_range() {
        let ds = synth_generate(&small_spec(), 5).unwrap();
        let mut rng = Rng::new(11);
        for s in ds.samples() {
            let a = augment(s, &AugmentConfig::default(), &mut rng).unwrap();
            assert_eq!(a.label, s.label);
            assert_eq!(a.image.shape(), s.image.shape());
            assert!(a.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        assert!(AugmentConfig { rotation_deg: -1.0, ..Default::default() }.validate().is_err());
        assert!(AugmentConfig { zoom: (0.0, 1.0), ..Default::default() }.validate().is_err());
    }

    #[test]
    fn split_examples() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let folds = split(&labels, SplitScheme::KFold(5), 1).unwrap();
        assert_eq!(folds.iter().map(Vec::len).collect::<Vec<_>>(), [20; 5]);
        for f in &folds {
            assert_eq!(f.iter().filter(|&&i| labels[i] == 0).count(), 10);
        }

        let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let parts = split(&labels, SplitScheme::Holdout { train: 0.8, val: 0.1, test: 0.1 }, 4).unwrap();
        assert_eq!(parts.iter().map(Vec::len).collect::<Vec<_>>(), [48, 6, 6]);
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        assert_eq!(all, (0..60).collect::<Vec<_>>());
        assert_eq!(parts, split(&labels, SplitScheme::Holdout { train: 0.8, val: 0.1, test: 0.1 }, 4).unwrap());
    }

    #[test]
    fn split_errors() {
        let labels = [0, 0, 0, 1, 1];
        assert!(matches!(split(&labels, SplitScheme::KFold(3), 0), Err(crate::Error::Dataset(_))));
        assert!(split(&labels, SplitScheme::KFold(1), 0).is_err());
        assert!(split(&labels, SplitScheme::Holdout { train: 0.5, val: 0.1, test: 0.1 }, 0).is_err());
    }
}
