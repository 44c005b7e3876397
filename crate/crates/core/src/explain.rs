//! Grad-CAM and Grad-CAM++ heatmaps on the deepest encoder stages.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{contract_err, shape_err, Error, Result};
use crate::image;
use crate::model::RfrlModel;
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Encoder stage counted back from the deepest, `E_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    N,
    NMinus1,
    NMinus2,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::N, Stage::NMinus1, Stage::NMinus2];

    pub fn offset(self) -> usize {
        match self {
            Stage::N => 0,
            Stage::NMinus1 => 1,
            Stage::NMinus2 => 2,
        }
    }

    /// Index into `E_0..=E_n`.
    pub fn encoder_index(self, n_stages: usize) -> Result<usize> {
        n_stages
            .checked_sub(self.offset())
            .ok_or_else(|| contract_err!("stage {} does not exist with {} encoder stages", self, n_stages))
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::N => "n",
            Stage::NMinus1 => "n-1",
            Stage::NMinus2 => "n-2",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(' ', "").as_str() {
            "n" => Ok(Stage::N),
            "n-1" => Ok(Stage::NMinus1),
            "n-2" => Ok(Stage::NMinus2),
            _ => Err(contract_err!("unknown stage '{}'; expected n, n-1 or n-2", s)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CamMethod {
    GradCam,
    GradCamPlusPlus,
}

impl CamMethod {
    pub fn name(self) -> &'static str {
        match self {
            CamMethod::GradCam => "cam",
            CamMethod::GradCamPlusPlus => "campp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// `[h, w]`, non-negative, maximum 1 unless all zero.
    pub values: Tensor<f64>,
    pub stage: Stage,
    pub class: usize,
    pub method: CamMethod,
}

impl Heatmap {
    /// Bilinear upsampling to `(h, w)`, for overlays.
    pub fn upsample(&self, h: usize, w: usize) -> Result<Tensor<f64>> {
        let s = self.values.shape();
        let lifted = self.values.reshape(&[1, s[0], s[1]])?;
        image::resize(&lifted, h, w)?.reshape(&[h, w])
    }
}

/// Channel weights for feature maps `feats` (`[C, h, w]`) given the score
/// gradient `grads` of the same shape.
pub fn channel_weights(feats: &[f64], grads: &[f64], channels: usize, method: CamMethod) -> Vec<f64> {
    let hw = feats.len() / channels;
    (0..channels)
        .map(|c| {
            let f = &feats[c * hw..(c + 1) * hw];
            let g = &grads[c * hw..(c + 1) * hw];
            match method {
                CamMethod::GradCam => g.iter().sum::<f64>() / hw as f64,
                CamMethod::GradCamPlusPlus => {
                    let cube_sum: f64 = f.iter().zip(g).map(|(a, g)| a * g * g * g).sum();
                    g.iter()
                        .map(|&g| {
                            let g2 = g * g;
                            let denom = 2.0 * g2 + cube_sum;
                            let alpha = if g == 0.0 || denom == 0.0 { 0.0 } else { g2 / denom };
                            alpha * g.max(0.0)
                        })
                        .sum()
                }
            }
        })
        .collect()
}

/// `relu(sum_c w_c F_c)`, divided by its maximum when positive.
pub fn weighted_map(feats: &[f64], weights: &[f64]) -> Vec<f64> {
    let hw = feats.len() / weights.len().max(1);
    let mut map = vec![0.0; hw];
    for (c, &w) in weights.iter().enumerate() {
        for (m, &f) in map.iter_mut().zip(&feats[c * hw..(c + 1) * hw]) {
            *m += w * f;
        }
    }
    normalize(&mut map);
    map
}

fn normalize(map: &mut [f64]) {
    map.iter_mut().for_each(|v| *v = v.max(0.0));
    let max = map.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        map.iter_mut().for_each(|v| *v /= max);
    }
}

/// Heatmap of `feature` (`[1, C, h, w]`) for entry `class` of `scores`
/// (`[1, c]`), both recorded on `tape`.
pub fn cam_on_tape<T: Real>(
    tape: &Tape<T>,
    feature: Var,
    scores: Var,
    class: usize,
    method: CamMethod,
) -> Result<Tensor<f64>> {
    let (fs, ss) = (tape.value(feature).shape(), tape.value(scores).shape());
    if fs.len() != 4 || fs[0] != 1 || ss.len() != 2 || ss[0] != 1 {
        return Err(shape_err!("cam needs a single-sample feature map and score row, got {:?} and {:?}", fs, ss));
    }
    if class >= ss[1] {
        return Err(contract_err!("class {} out of range for {} classes", class, ss[1]));
    }
    let (c, h, w) = (fs[1], fs[2], fs[3]);
    let mut seed = Tensor::zeros(ss);
    seed.data_mut()[class] = T::one();
    let grads = tape.backward_with_seed(scores, seed)?;
    let feats = tape.value(feature).to_f64_vec();
    let g = grads.get(feature).map_or_else(|| vec![0.0; feats.len()], |t| t.to_f64_vec());
    let weights = channel_weights(&feats, &g, c, method);
    Tensor::new(&[h, w], weighted_map(&feats, &weights))
}

/// Heatmap for one image (`[C, H, W]` or `[1, C, H, W]`).
pub fn explain<T: Real>(
    model: &RfrlModel<T>,
    x: &Tensor<T>,
    class: usize,
    stage: Stage,
    method: CamMethod,
) -> Result<Heatmap> {
    let cfg = model.config();
    if class >= cfg.num_classes {
        return Err(contract_err!("class {} out of range for {} classes", class, cfg.num_classes));
    }
    let idx = stage.encoder_index(cfg.n_stages)?;
    let x = if x.rank() == 3 {
        let s = x.shape();
        x.reshape(&[1, s[0], s[1], s[2]])?
    } else {
        x.clone()
    };
    if x.shape().first() != Some(&1) {
        return Err(contract_err!("cam explains one image at a time, got {:?}", x.shape()));
    }
    let mut tape = Tape::new();
    let params = model.bind_frozen(&mut tape);
    // Marking the input as requiring gradients makes every feature map do so.
    let xv = tape.param(x);
    let enc = model.encode(&mut tape, &params, xv)?;
    let logits = model.classify_features(&mut tape, &params, enc[cfg.n_stages])?;
    let values = cam_on_tape(&tape, enc[idx], logits, class, method)?;
    Ok(Heatmap { values, stage, class, method })
}

pub fn gradcam<T: Real>(model: &RfrlModel<T>, x: &Tensor<T>, class: usize, stage: Stage) -> Result<Heatmap> {
    explain(model, x, class, stage, CamMethod::GradCam)
}

pub fn gradcam_pp<T: Real>(model: &RfrlModel<T>, x: &Tensor<T>, class: usize, stage: Stage) -> Result<Heatmap> {
    explain(model, x, class, stage, CamMethod::GradCamPlusPlus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use alloc::string::ToString;

    fn model() -> RfrlModel<f64> {
        RfrlModel::build(&ModelConfig::default(), 5).unwrap()
    }

    fn input(seed: u64) -> Tensor<f64> {
        let mut rng = crate::rng::Rng::new(seed);
        Tensor::new(&[1, 32, 32], (0..1024).map(|_| rng.uniform()).collect()).unwrap()
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.to_string().parse::<Stage>().unwrap(), s);
        }
        assert_eq!("N-2".parse::<Stage>().unwrap(), Stage::NMinus2);
        assert!(matches!("n-3".parse::<Stage>(), Err(Error::Contract(_))));
    }

    #[test]
    fn heatmap_shapes_and_range() {
        let m = model();
        let x = input(1);
        for (stage, extent) in Stage::ALL.into_iter().zip([4, 8, 16]) {
            for method in [CamMethod::GradCam, CamMethod::GradCamPlusPlus] {
                let hm = explain(&m, &x, 1, stage, method).unwrap();
                assert_eq!(hm.values.shape(), &[extent, extent]);
                assert!(hm.values.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
                assert_eq!(hm.upsample(32, 32).unwrap().shape(), &[32, 32]);
            }
        }
    }

    #[test]
    fn invalid_requests() {
        let m = model();
        assert!(matches!(gradcam(&m, &input(0), 3, Stage::N), Err(Error::Contract(_))));
        let batch = Tensor::zeros(&[2, 1, 32, 32]);
        assert!(gradcam(&m, &batch, 0, Stage::N).is_err());
    }

    #[test]
    fn zero_gradient_gives_zero_map() {
        let mut m = model();
        let id = m.params().find("cls.weight").unwrap();
        let w = m.params_mut().get_mut(id);
        let c = w.shape()[1];
        for (i, v) in w.data_mut().iter_mut().enumerate() {
            if i % c == 2 {
                *v = 0.0;
            }
        }
        for method in [CamMethod::GradCam, CamMethod::GradCamPlusPlus] {
            let hm = explain(&m, &input(3), 2, Stage::NMinus1, method).unwrap();
            assert!(hm.values.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn plus_plus_weights_reduce_on_one_pixel() {
        // one channel, one pixel: alpha = g^2 / (2 g^2 + a g^3)
        let w = channel_weights(&[2.0], &[0.5], 1, CamMethod::GradCamPlusPlus);
        let alpha = 0.25 / (0.5 + 2.0 * 0.125);
        assert!((w[0] - alpha * 0.5).abs() < 1e-15);
        assert_eq!(channel_weights(&[2.0], &[0.0], 1, CamMethod::GradCamPlusPlus), [0.0]);
    }
}
