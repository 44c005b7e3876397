//! Central finite differences and the 64-bit gradient check suite.
//!
//! Each check draws its inputs from a seeded generator, reduces non-scalar
//! outputs to a scalar with a fixed random projection, and compares the
//! tape's gradients against central differences element by element.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract_err, numerics_err, Result};
use crate::losses::{self, FrsNorm};
use crate::model::{BoundParams, LossSwitches, ModelConfig, RfrlModel};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-6;
pub const DEFAULT_SEEDS: usize = 20;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every element `i`.
pub fn finite_diff_grad(
    mut f: impl FnMut(&Tensor<f64>) -> Result<f64>,
    x: &Tensor<f64>,
    h: f64,
) -> Result<Tensor<f64>> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(contract_err!("finite difference step must be positive, got {}", h));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(numerics_err!("non-finite function value while differencing element {}", i));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Tensor::new(x.shape(), grad)
}

/// Largest `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)` over all elements.
pub fn max_relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(RELATIVE_FLOOR))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub max_rel_err: f64,
    /// Number of seeded cases evaluated.
    pub cases: usize,
    pub passed: bool,
    /// Set when a case could not be evaluated at all.
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub seeds: Vec<u64>,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck { seeds: (0..DEFAULT_SEEDS as u64).collect(), step: DEFAULT_STEP, tolerance: DEFAULT_TOLERANCE }
    }
}

fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.range(lo, hi)).collect()).expect("shape")
}

/// Values with magnitude in `[0.1, 1]` and random sign, away from kinks at 0.
fn away_from_zero(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    uniform(rng, shape, 0.1, 1.0).map(|v| v).zip_map(&uniform(rng, shape, -1.0, 1.0), |m, s| m.copysign(s)).expect("shape")
}

fn scalarize(tape: &mut Tape<f64>, out: Var, projection: &Option<Tensor<f64>>) -> Result<Var> {
    match projection {
        None => Ok(out),
        Some(p) => {
            let pv = tape.constant(p.clone());
            let prod = tape.mul(out, pv)?;
            tape.sum(prod)
        }
    }
}

impl GradCheck {
    /// Checks `f` on inputs produced by `gen` for every seed.
    pub fn check<G, F>(&self, name: &str, gen: G, f: F) -> CheckOutcome
    where
        G: Fn(&mut Rng) -> Vec<Tensor<f64>>,
        F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    {
        let mut worst = 0.0f64;
        let mut error = None;
        let mut cases = 0;
        for &seed in &self.seeds {
            match self.check_case(seed, &gen, &f) {
                Ok(err) => {
                    worst = worst.max(err);
                    cases += 1;
                }
                Err(e) => {
                    error = Some(format!("seed {}: {}", seed, e));
                    break;
                }
            }
        }
        let passed = error.is_none() && worst <= self.tolerance;
        CheckOutcome { name: name.to_string(), max_rel_err: worst, cases, passed, error }
    }

    fn check_case<G, F>(&self, seed: u64, gen: &G, f: &F) -> Result<f64>
    where
        G: Fn(&mut Rng) -> Vec<Tensor<f64>>,
        F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    {
        let mut rng = Rng::new(seed);
        let inputs = gen(&mut rng);

        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let out_shape = tape.value(out).shape().to_vec();
        let projection = (!tape.value(out).is_scalar()).then(|| uniform(&mut rng, &out_shape, -1.0, 1.0));
        let loss = scalarize(&mut tape, out, &projection)?;
        let grads = tape.backward(loss)?;

        let mut worst = 0.0f64;
        for (i, input) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
            let numeric = finite_diff_grad(
                |probe| {
                    let mut t = Tape::new();
                    let vs: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, x)| t.constant(if j == i { probe.clone() } else { x.clone() }))
                        .collect();
                    let o = f(&mut t, &vs)?;
                    let l = scalarize(&mut t, o, &projection)?;
                    Ok(t.value(l).data()[0])
                },
                input,
                self.step,
            )?;
            worst = worst.max(max_relative_error(&analytic, &numeric));
        }
        Ok(worst)
    }
}

/// Small model used for checking the full composition.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        in_channels: 1,
        height: 8,
        width: 8,
        n_stages: 2,
        stem_channels: 2,
        stage_channels: vec![3, 4],
        num_classes: 3,
        loss_switches: LossSwitches::ALL,
    }
}

fn model_inputs(rng: &mut Rng) -> Vec<Tensor<f64>> {
    let cfg = tiny_model_config();
    let model = RfrlModel::<f64>::build(&cfg, rng.next_u64()).expect("tiny model");
    let mut inputs: Vec<Tensor<f64>> = model.params().tensors().to_vec();
    // Non-zero biases so the check does not sit on a special point.
    for (name, t) in model.params().names().iter().zip(inputs.iter_mut()) {
        if name.ends_with("bias") {
            *t = uniform(rng, t.shape(), -0.1, 0.1);
        }
    }
    inputs.push(uniform(rng, &cfg.input_shape(2), 0.0, 1.0));
    inputs
}

fn model_loss(tape: &mut Tape<f64>, vars: &[Var], switches: LossSwitches) -> Result<Var> {
    let cfg = tiny_model_config();
    let model = RfrlModel::<f64>::build(&cfg, 0)?;
    let (params, x) = vars.split_at(vars.len() - 1);
    let taps = model.forward_with(tape, BoundParams::from_vars(params.to_vec()), x[0])?;
    let labels = losses::one_hot(&[0, 2], cfg.num_classes)?;
    let (lv, _) = losses::total_loss(tape, &taps, x[0], &labels, switches, FrsNorm::MeanSquared)?;
    Ok(lv.total)
}

/// Every differentiable operation, each loss head, and the full model.
pub fn standard_suite(check: &GradCheck) -> Vec<CheckOutcome> {
    let same3 = |rng: &mut Rng| vec![uniform(rng, &[2, 3, 4], -1.0, 1.0), uniform(rng, &[2, 3, 4], -1.0, 1.0)];
    let one = |shape: &'static [usize]| move |rng: &mut Rng| vec![uniform(rng, shape, -2.0, 2.0)];
    let mut out = Vec::new();

    out.push(check.check("add", same3, |t, v| t.add(v[0], v[1])));
    out.push(check.check("sub", same3, |t, v| t.sub(v[0], v[1])));
    out.push(check.check("mul", same3, |t, v| t.mul(v[0], v[1])));
    out.push(check.check(
        "mul_scalar_broadcast",
        |rng| vec![uniform(rng, &[3, 4], -1.0, 1.0), uniform(rng, &[], -1.0, 1.0)],
        |t, v| t.mul(v[0], v[1]),
    ));
    out.push(check.check("scale", one(&[4, 5]), |t, v| t.scale(v[0], -1.75)));
    out.push(check.check(
        "matmul",
        |rng| vec![uniform(rng, &[3, 4], -1.0, 1.0), uniform(rng, &[4, 5], -1.0, 1.0)],
        |t, v| t.matmul(v[0], v[1]),
    ));
    out.push(check.check(
        "dense",
        |rng| vec![uniform(rng, &[3, 4], -1.0, 1.0), uniform(rng, &[4, 2], -1.0, 1.0), uniform(rng, &[2], -1.0, 1.0)],
        |t, v| t.dense(v[0], v[1], v[2]),
    ));
    out.push(check.check("relu", |rng| vec![away_from_zero(rng, &[4, 8])], |t, v| t.relu(v[0])));
    out.push(check.check("sigmoid", one(&[4, 8]), |t, v| t.sigmoid(v[0])));
    out.push(check.check("softmax", one(&[3, 5]), |t, v| t.softmax(v[0])));
    out.push(check.check("sum", one(&[3, 5]), |t, v| t.sum(v[0])));
    out.push(check.check("mean", one(&[3, 5]), |t, v| t.mean(v[0])));
    out.push(check.check("global_avg_pool", one(&[2, 3, 4, 4]), |t, v| t.global_avg_pool(v[0])));
    for (name, k, stride) in [("conv2d_k3_s1", 3, 1), ("conv2d_k3_s2", 3, 2), ("conv2d_k1_s1", 1, 1)] {
        out.push(check.check(
            name,
            move |rng| {
                vec![
                    uniform(rng, &[2, 3, 6, 6], -1.0, 1.0),
                    uniform(rng, &[4, 3, k, k], -1.0, 1.0),
                    uniform(rng, &[4], -1.0, 1.0),
                ]
            },
            move |t, v| t.conv2d(v[0], v[1], v[2], stride),
        ));
    }
    out.push(check.check(
        "conv2d_transpose",
        |rng| {
            vec![
                uniform(rng, &[2, 3, 4, 4], -1.0, 1.0),
                uniform(rng, &[3, 2, 3, 3], -1.0, 1.0),
                uniform(rng, &[2], -1.0, 1.0),
            ]
        },
        |t, v| t.conv2d_transpose(v[0], v[1], v[2]),
    ));
    out.push(check.check("cross_entropy", one(&[4, 3]), |t, v| {
        let p = t.softmax(v[0])?;
        let labels = losses::one_hot(&[0, 1, 2, 1], 3)?;
        t.cross_entropy(p, &labels)
    }));
    out.push(check.check(
        "mse",
        |rng| vec![uniform(rng, &[2, 1, 4, 4], 0.0, 1.0), uniform(rng, &[2, 1, 4, 4], 0.0, 1.0)],
        |t, v| t.mse(v[0], v[1]),
    ));
    out.push(check.check(
        "frs_loss",
        |rng| {
            let shapes: [&[usize]; 3] = [&[2, 2, 8, 8], &[2, 3, 4, 4], &[2, 4, 2, 2]];
            let enc: Vec<Tensor<f64>> = shapes.iter().map(|s| uniform(rng, s, -1.0, 1.0)).collect();
            let dec: Vec<Tensor<f64>> = shapes.iter().rev().map(|s| uniform(rng, s, -1.0, 1.0)).collect();
            enc.into_iter().chain(dec).collect()
        },
        |t, v| losses::frs_loss(t, &v[..3], &v[3..], FrsNorm::MeanSquared),
    ));
    out.push(check.check("rfrl_model_total_loss", model_inputs, |t, v| model_loss(t, v, LossSwitches::ALL)));
    out.push(check.check("rfrl_model_frs_only", model_inputs, |t, v| {
        model_loss(t, v, LossSwitches { supervised: false, unsupervised: false, frs: true })
    }));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn difference_of_sum_is_ones() {
        let x = Tensor::from_f64(&[2, 2], &[0.3, -1.0, 2.0, 5.0]).unwrap();
        let g = finite_diff_grad(|t| Ok(t.sum()), &x, 1e-5).unwrap();
        for v in g.data() {
            assert!((v - 1.0).abs() <= 1e-8, "{}", v);
        }
    }

    #[test]
    fn difference_of_square() {
        let x = Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let g = finite_diff_grad(|t| Ok(t.data().iter().map(|v| v * v).sum()), &x, 1e-5).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-8 && (g.data()[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn difference_of_constant_and_bad_inputs() {
        let x = Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(finite_diff_grad(|_| Ok(4.2), &x, 1e-5).unwrap(), Tensor::zeros(&[3]));
        assert!(matches!(finite_diff_grad(|_| Ok(f64::NAN), &x, 1e-5), Err(crate::Error::Numerics(_))));
        assert!(matches!(finite_diff_grad(|t| Ok(t.sum()), &x, 0.0), Err(crate::Error::Contract(_))));
    }
}
