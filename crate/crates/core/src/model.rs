//! Encoder / attention-skip decoder / classifier network.
//!
//! Indexing follows the encoder stages: `E_0` is the full-resolution stem
//! output and `E_1..E_n` are the outputs of the stride-2 blocks. The decoder
//! starts from `s_0 = A_0(E_n)` and for `j = 0..n` computes
//!
//! ```text
//! u_j     = D_j(s_j)                      (transposed conv, 2x upsample)
//! s_{j+1} = A_{j+1}(E_{n-1-j}) + u_j
//! ```
//!
//! and the reconstruction is `sigmoid(R(s_n))` with `R` a 1×1 conv. The
//! classifier reads `E_n` through global average pooling and a dense layer,
//! so it never sees the decoder.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{config_err, contract_err, shape_err, Error, Result};
use crate::nn::CONV_T_KERNEL;
use crate::rng::{streams, Rng};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Which loss heads contribute to the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossSwitches {
    pub supervised: bool,
    pub unsupervised: bool,
    pub frs: bool,
}

impl LossSwitches {
    pub const ALL: LossSwitches = LossSwitches { supervised: true, unsupervised: true, frs: true };
    pub const NONE: LossSwitches = LossSwitches { supervised: false, unsupervised: false, frs: false };
    pub const CLASSIFIER_ONLY: LossSwitches = LossSwitches { supervised: true, unsupervised: false, frs: false };
    pub const CLASSIFIER_DECODER: LossSwitches = LossSwitches { supervised: true, unsupervised: true, frs: false };

    /// Whether the decoder has to run at all.
    pub fn needs_decoder(&self) -> bool {
        self.unsupervised || self.frs
    }
}

impl Default for LossSwitches {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    /// Number of stride-2 encoder blocks, `n`.
    pub n_stages: usize,
    pub stem_channels: usize,
    /// Output channels of blocks `1..=n`.
    pub stage_channels: Vec<usize>,
    pub num_classes: usize,
    pub loss_switches: LossSwitches,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 1,
            height: 32,
            width: 32,
            n_stages: 3,
            stem_channels: 8,
            stage_channels: alloc::vec![16, 32, 64],
            num_classes: 3,
            loss_switches: LossSwitches::ALL,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.n_stages;
        if n < 2 {
            return Err(config_err!("n_stages must be at least 2, got {}", n));
        }
        if self.stage_channels.len() != n {
            return Err(config_err!(
                "stage_channels has {} entries for {} stages",
                self.stage_channels.len(),
                n
            ));
        }
        if self.in_channels == 0 || self.stem_channels == 0 || self.stage_channels.contains(&0) {
            return Err(config_err!("channel counts must be positive"));
        }
        if self.num_classes < 2 {
            return Err(config_err!("num_classes must be at least 2, got {}", self.num_classes));
        }
        let factor = 1usize << n;
        for (name, extent) in [("height", self.height), ("width", self.width)] {
            if extent == 0 || extent % factor != 0 {
                return Err(config_err!("{} {} is not divisible by 2^{} = {}", name, extent, n, factor));
            }
            // The last block's stride-2 conv reads a map of extent/2^(n-1).
            if extent / factor < 2 {
                return Err(config_err!("{} {} too small for {} stages", name, extent, n));
            }
        }
        Ok(())
    }

    /// Channels of `E_i` for `i = 0..=n`.
    pub fn encoder_channels(&self) -> Vec<usize> {
        core::iter::once(self.stem_channels).chain(self.stage_channels.iter().copied()).collect()
    }

    /// Spatial extent `(h, w)` of `E_i`.
    pub fn stage_extent(&self, i: usize) -> (usize, usize) {
        (self.height >> i, self.width >> i)
    }

    pub fn input_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.in_channels, self.height, self.width]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Broad role of a parameter, derived from its name prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Stem,
    Encoder,
    Attention,
    Decoder,
    Classifier,
}

impl ParamGroup {
    pub fn of(name: &str) -> ParamGroup {
        match name.split('.').next().unwrap_or("") {
            "stem" => ParamGroup::Stem,
            "enc" => ParamGroup::Encoder,
            "attn" => ParamGroup::Attention,
            "dec" | "recon" => ParamGroup::Decoder,
            _ => ParamGroup::Classifier,
        }
    }
}

/// Named parameter tensors in a fixed canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new() }
    }

    fn push(&mut self, name: String, t: Tensor<T>) -> ParamId {
        self.names.push(name);
        self.tensors.push(t.with_requires_grad(true));
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Replaces every tensor, keeping names; shapes must match exactly.
    pub fn assign(&mut self, tensors: Vec<Tensor<T>>) -> Result<()> {
        if tensors.len() != self.tensors.len() {
            return Err(shape_err!("expected {} parameter tensors, got {}", self.tensors.len(), tensors.len()));
        }
        for (i, (new, old)) in tensors.iter().zip(&self.tensors).enumerate() {
            if new.shape() != old.shape() {
                return Err(shape_err!(
                    "parameter {} has shape {:?}, expected {:?}",
                    self.names[i],
                    new.shape(),
                    old.shape()
                ));
            }
        }
        self.tensors = tensors.into_iter().map(|t| t.with_requires_grad(true)).collect();
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvSlot {
    weight: ParamId,
    bias: ParamId,
    stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvTSlot {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct EncoderBlock {
    conv1: ConvSlot,
    conv2: ConvSlot,
}

/// Parameter leaves of one model bound onto a tape, in canonical order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    /// Wraps externally created leaves; they must follow the canonical order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        BoundParams { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

/// Everything a forward pass exposes to the loss heads and explainers.
#[derive(Debug, Clone)]
pub struct ForwardTaps {
    pub params: BoundParams,
    /// `E_0..=E_n`.
    pub enc_feats: Vec<Var>,
    /// `u_0..u_{n-1}` (taken before the following skip-sum) then the
    /// reconstruction; empty when only the classifier path ran.
    pub dec_feats: Vec<Var>,
    pub logits: Var,
    pub probs: Var,
    pub recon: Option<Var>,
}

impl ForwardTaps {
    /// Same-resolution (encoder, decoder) feature lists for the similarity
    /// loss: `E_0..E_{n-1}` against `u_0..u_{n-1}`, where `E_i` pairs with
    /// `u_{n-1-i}`.
    pub fn frs_pairs(&self) -> Option<(&[Var], &[Var])> {
        let n = self.enc_feats.len() - 1;
        (self.dec_feats.len() == n + 1).then(|| (&self.enc_feats[..n], &self.dec_feats[..n]))
    }
}

fn at_stage(stage: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Shape(msg) => Error::Shape(format!("stage {}: {}", stage, msg)),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfrlModel<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    stem: ConvSlot,
    blocks: Vec<EncoderBlock>,
    attn: Vec<ConvSlot>,
    dec: Vec<ConvTSlot>,
    recon: ConvSlot,
    cls_weight: ParamId,
    cls_bias: ParamId,
}

struct Init<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: Rng,
}

impl<T: Real> Init<'_, T> {
    /// He-uniform weights with the given fan-in, zero bias.
    fn weight(&mut self, name: String, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = num_traits::Float::sqrt(6.0 / fan_in as f64);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(self.rng.range(-bound, bound))).collect();
        self.store.push(name, Tensor::new(shape, data).expect("init shape"))
    }

    fn bias(&mut self, name: String, n: usize) -> ParamId {
        self.store.push(name, Tensor::zeros(&[n]))
    }

    fn conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize, stride: usize) -> ConvSlot {
        let weight = self.weight(format!("{}.weight", prefix), &[cout, cin, k, k], cin * k * k);
        let bias = self.bias(format!("{}.bias", prefix), cout);
        ConvSlot { weight, bias, stride }
    }

    fn conv_t(&mut self, prefix: &str, cin: usize, cout: usize) -> ConvTSlot {
        let k = CONV_T_KERNEL;
        let weight = self.weight(format!("{}.weight", prefix), &[cin, cout, k, k], cin * k * k);
        let bias = self.bias(format!("{}.bias", prefix), cout);
        ConvTSlot { weight, bias }
    }
}

impl<T: Real> RfrlModel<T> {
    /// Deterministically initialised model. Parameters are drawn in a fixed
    /// order (stem, encoder, attention, decoder, reconstruction, classifier)
    /// regardless of which loss heads are enabled.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let n = config.n_stages;
        let ch = config.encoder_channels();
        let mut params = ParamStore::new();
        let mut init = Init { store: &mut params, rng: Rng::stream(seed, streams::MODEL_INIT) };

        let stem = init.conv("stem", config.in_channels, ch[0], 3, 1);
        let blocks = (1..=n)
            .map(|i| EncoderBlock {
                conv1: init.conv(&format!("enc.{}.conv1", i), ch[i - 1], ch[i], 3, 1),
                conv2: init.conv(&format!("enc.{}.conv2", i), ch[i], ch[i], 3, 2),
            })
            .collect();
        // A_0 projects E_n; A_{j+1} projects E_{n-1-j}.
        let attn = (0..=n)
            .map(|j| {
                let c = ch[n - j];
                init.conv(&format!("attn.{}", j), c, c, 1, 1)
            })
            .collect();
        // D_j maps depth of E_{n-j} to depth of E_{n-1-j}.
        let dec = (0..n).map(|j| init.conv_t(&format!("dec.{}", j), ch[n - j], ch[n - 1 - j])).collect();
        let recon = init.conv("recon", ch[0], config.in_channels, 1, 1);
        let cls_weight = init.weight("cls.weight".into(), &[ch[n], config.num_classes], ch[n]);
        let cls_bias = init.bias("cls.bias".into(), config.num_classes);

        Ok(RfrlModel { config: config.clone(), params, stem, blocks, attn, dec, recon, cls_weight, cls_bias })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn count_params(&self) -> usize {
        self.params.tensors().iter().map(Tensor::len).sum()
    }

    /// Same architecture and parameter values in another precision.
    pub fn cast<U: Real>(&self) -> RfrlModel<U> {
        RfrlModel {
            config: self.config.clone(),
            params: ParamStore {
                names: self.params.names.clone(),
                tensors: self.params.tensors.iter().map(Tensor::cast).collect(),
            },
            stem: self.stem,
            blocks: self.blocks.clone(),
            attn: self.attn.clone(),
            dec: self.dec.clone(),
            recon: self.recon,
            cls_weight: self.cls_weight,
            cls_bias: self.cls_bias,
        }
    }

    /// Records every parameter as a gradient-tracking leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams { vars: self.params.tensors().iter().map(|t| tape.param(t.clone())).collect() }
    }

    /// Records every parameter as a constant leaf.
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams { vars: self.params.tensors().iter().map(|t| tape.constant(t.clone())).collect() }
    }

    fn conv(&self, tape: &mut Tape<T>, p: &BoundParams, slot: ConvSlot, x: Var) -> Result<Var> {
        tape.conv2d(x, p.get(slot.weight), p.get(slot.bias), slot.stride)
    }

    fn check_input(&self, tape: &Tape<T>, x: Var) -> Result<()> {
        let s = tape.value(x).shape();
        let c = &self.config;
        if s.len() != 4 || s[1] != c.in_channels || s[2] != c.height || s[3] != c.width {
            return Err(shape_err!(
                "input {:?} does not match model input [B, {}, {}, {}]",
                s,
                c.in_channels,
                c.height,
                c.width
            ));
        }
        Ok(())
    }

    /// `E_0..=E_n`.
    pub fn encode(&self, tape: &mut Tape<T>, p: &BoundParams, x: Var) -> Result<Vec<Var>> {
        self.check_input(tape, x)?;
        let mut feats = Vec::with_capacity(self.config.n_stages + 1);
        let e0 = self.conv(tape, p, self.stem, x).map_err(at_stage(0))?;
        feats.push(tape.relu(e0)?);
        for (i, block) in self.blocks.iter().enumerate() {
            let prev = feats[i];
            let h = self.conv(tape, p, block.conv1, prev).map_err(at_stage(i + 1))?;
            let h = tape.relu(h)?;
            let h = self.conv(tape, p, block.conv2, h).map_err(at_stage(i + 1))?;
            feats.push(tape.relu(h)?);
        }
        Ok(feats)
    }

    /// Logits from the deepest encoder feature.
    pub fn classify_features(&self, tape: &mut Tape<T>, p: &BoundParams, deepest: Var) -> Result<Var> {
        let pooled = tape.global_avg_pool(deepest)?;
        tape.dense(pooled, p.get(self.cls_weight), p.get(self.cls_bias))
    }

    /// Decoder pre-sum outputs `u_0..u_{n-1}` and the reconstruction.
    pub fn decode(&self, tape: &mut Tape<T>, p: &BoundParams, enc: &[Var]) -> Result<(Vec<Var>, Var)> {
        let n = self.config.n_stages;
        if enc.len() != n + 1 {
            return Err(contract_err!("decoder needs {} encoder features, got {}", n + 1, enc.len()));
        }
        let mut s = self.conv(tape, p, self.attn[0], enc[n]).map_err(at_stage(n))?;
        let mut outs = Vec::with_capacity(n + 1);
        for j in 0..n {
            let d = self.dec[j];
            let u = tape.conv2d_transpose(s, p.get(d.weight), p.get(d.bias)).map_err(at_stage(n - 1 - j))?;
            outs.push(u);
            let skip = self.conv(tape, p, self.attn[j + 1], enc[n - 1 - j]).map_err(at_stage(n - 1 - j))?;
            s = tape.add(skip, u).map_err(at_stage(n - 1 - j))?;
        }
        let r = self.conv(tape, p, self.recon, s).map_err(at_stage(0))?;
        let recon = tape.sigmoid(r)?;
        outs.push(recon);
        Ok((outs, recon))
    }

    /// Full three-headed forward pass on `x: [B, C, H, W]`.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<ForwardTaps> {
        let params = self.bind(tape);
        self.forward_with(tape, params, x)
    }

    pub fn forward_with(&self, tape: &mut Tape<T>, params: BoundParams, x: Var) -> Result<ForwardTaps> {
        let enc_feats = self.encode(tape, &params, x)?;
        let logits = self.classify_features(tape, &params, enc_feats[self.config.n_stages])?;
        let probs = tape.softmax(logits)?;
        let (dec_feats, recon) = self.decode(tape, &params, &enc_feats)?;
        Ok(ForwardTaps { params, enc_feats, dec_feats, logits, probs, recon: Some(recon) })
    }

    /// Encoder and classifier only; the decoder is never recorded.
    pub fn forward_classifier(&self, tape: &mut Tape<T>, x: Var) -> Result<ForwardTaps> {
        let params = self.bind(tape);
        self.forward_classifier_with(tape, params, x)
    }

    pub fn forward_classifier_with(&self, tape: &mut Tape<T>, params: BoundParams, x: Var) -> Result<ForwardTaps> {
        let enc_feats = self.encode(tape, &params, x)?;
        let logits = self.classify_features(tape, &params, enc_feats[self.config.n_stages])?;
        let probs = tape.softmax(logits)?;
        Ok(ForwardTaps { params, enc_feats, dec_feats: Vec::new(), logits, probs, recon: None })
    }

    /// Class probabilities for a batch, without recording gradients.
    pub fn predict_probs(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let params = self.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let enc = self.encode(&mut tape, &params, xv)?;
        let logits = self.classify_features(&mut tape, &params, enc[self.config.n_stages])?;
        let probs = tape.softmax(logits)?;
        Ok(tape.value(probs).clone())
    }
}

/// Index of the largest value in each row.
pub fn argmax_rows<T: Real>(probs: &Tensor<T>) -> Vec<usize> {
    let c = probs.shape()[probs.rank() - 1];
    probs
        .data()
        .chunks_exact(c)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Conv2dParams;

    fn small() -> ModelConfig {
        ModelConfig {
            in_channels: 1,
            height: 16,
            width: 16,
            n_stages: 2,
            stem_channels: 2,
            stage_channels: alloc::vec![3, 4],
            num_classes: 3,
            loss_switches: LossSwitches::ALL,
        }
    }

    #[test]
    fn encoder_extents_halve() {
        let cfg = ModelConfig::default();
        let model = RfrlModel::<f32>::build(&cfg, 1).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 1, 32, 32], 0.5));
        let taps = model.forward(&mut tape, x).unwrap();
        let sizes: Vec<usize> = taps.enc_feats.iter().map(|v| tape.value(*v).shape()[2]).collect();
        assert_eq!(sizes, [32, 16, 8, 4]);
        let dec: Vec<usize> = taps.dec_feats.iter().map(|v| tape.value(*v).shape()[2]).collect();
        assert_eq!(dec, [8, 16, 32, 32]);
        assert_eq!(tape.value(taps.recon.unwrap()).shape(), &[1, 1, 32, 32]);
    }

    #[test]
    fn indivisible_extent_is_config_error() {
        let cfg = ModelConfig { height: 36, width: 36, ..ModelConfig::default() };
        assert!(matches!(RfrlModel::<f32>::build(&cfg, 0), Err(Error::Config(_))));
        let cfg = ModelConfig { n_stages: 1, stage_channels: alloc::vec![4], ..ModelConfig::default() };
        assert!(matches!(RfrlModel::<f32>::build(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = RfrlModel::<f32>::build(&small(), 9).unwrap();
        let b = RfrlModel::<f32>::build(&small(), 9).unwrap();
        let c = RfrlModel::<f32>::build(&small(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn parameter_counts() {
        let conv = Conv2dParams::<f32>::new(Tensor::zeros(&[3, 2, 1, 1]), Tensor::zeros(&[3]), 1).unwrap();
        assert_eq!(conv.num_params(), 9);
        // dense f=4, c=2
        assert_eq!(4 * 2 + 2, 10);
        let model = RfrlModel::<f32>::build(&small(), 0).unwrap();
        let expected = (2 * 9 + 2) // stem
            + (2 * 3 * 9 + 3) + (3 * 3 * 9 + 3) // block 1
            + (3 * 4 * 9 + 4) + (4 * 4 * 9 + 4) // block 2
            + (16 + 4) + (9 + 3) + (4 + 2) // attn 0..2
            + (4 * 3 * 9 + 3) + (3 * 2 * 9 + 2) // dec 0..1
            + (2 + 1) // recon
            + (4 * 3 + 3); // cls
        assert_eq!(model.count_params(), expected);
    }

    #[test]
    fn frs_pairs_are_shape_compatible() {
        let model = RfrlModel::<f64>::build(&small(), 3).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[2, 1, 16, 16], 0.25));
        let taps = model.forward(&mut tape, x).unwrap();
        let (enc, dec) = taps.frs_pairs().unwrap();
        let n = enc.len();
        for i in 0..n {
            assert_eq!(tape.value(enc[i]).shape(), tape.value(dec[n - 1 - i]).shape());
        }
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let model = RfrlModel::<f32>::build(&small(), 0).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 8, 8]));
        assert!(matches!(model.forward(&mut tape, x), Err(Error::Shape(_))));
    }

    #[test]
    fn classifier_path_ignores_decoder() {
        let model = RfrlModel::<f32>::build(&ModelConfig::default(), 4).unwrap();
        let img = Tensor::from_f64(&[1, 1, 32, 32], &(0..1024).map(|i| (i % 7) as f64 / 7.0).collect::<Vec<_>>()).unwrap();
        let mut full = Tape::new();
        let x = full.constant(img.clone());
        let a = model.forward(&mut full, x).unwrap();
        let mut cls = Tape::new();
        let x = cls.constant(img);
        let b = model.forward_classifier(&mut cls, x).unwrap();
        assert_eq!(full.value(a.logits), cls.value(b.logits));
        assert!(b.recon.is_none() && b.frs_pairs().is_none());
    }

    #[test]
    fn groups_from_names() {
        let model = RfrlModel::<f32>::build(&small(), 0).unwrap();
        let groups: Vec<ParamGroup> = model.params().names().iter().map(|n| ParamGroup::of(n)).collect();
        for g in [ParamGroup::Stem, ParamGroup::Encoder, ParamGroup::Attention, ParamGroup::Decoder, ParamGroup::Classifier] {
            assert!(groups.contains(&g));
        }
    }
}
