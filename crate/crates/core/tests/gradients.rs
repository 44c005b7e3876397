use rfrl_core::gradcheck::{finite_diff_grad, max_relative_error, standard_suite, GradCheck};
use rfrl_core::nn::{self, Conv2dParams};
use rfrl_core::{CustomOp, Tape, Tensor, Var};

#[test]
fn every_operation_passes_the_suite() {
    let check = GradCheck::default();
    let outcomes = standard_suite(&check);
    let mut names: Vec<&str> = outcomes.iter().map(|o| o.name.as_str()).collect();
    names.sort();
    let before = names.len();
    names.dedup();
    assert_eq!(before, names.len(), "duplicate check names");
    for o in &outcomes {
        println!("{:<24} max_rel_err={:.3e} cases={}", o.name, o.max_rel_err, o.cases);
    }
    for o in &outcomes {
        assert!(o.passed, "{} failed: {:.3e} {:?}", o.name, o.max_rel_err, o.error);
        assert_eq!(o.cases, 20);
    }
}

/// Convolution whose backward pass forgets to flip the kernel and drops the
/// bias gradient.
struct BrokenConv;

impl CustomOp<f64> for BrokenConv {
    fn name(&self) -> &str {
        "broken_conv2d"
    }

    fn backward(&self, inputs: &[&Tensor<f64>], _output: &Tensor<f64>, grad: &Tensor<f64>) -> Vec<Option<Tensor<f64>>> {
        let mut tape = Tape::new();
        let x = tape.param(inputs[0].clone());
        let w = tape.param(inputs[1].clone());
        let b = tape.constant(inputs[2].clone());
        let y = tape.conv2d(x, w, b, 1).unwrap();
        let g = tape.backward_with_seed(y, grad.clone()).unwrap();
        let gw = g.get(w).unwrap();
        let mut flipped = gw.data().to_vec();
        for chunk in flipped.chunks_mut(9) {
            chunk.reverse();
        }
        vec![
            g.get(x).cloned(),
            Some(Tensor::new(gw.shape(), flipped).unwrap()),
            Some(Tensor::zeros(inputs[2].shape())),
        ]
    }
}

fn broken_conv(tape: &mut Tape<f64>, v: &[Var]) -> rfrl_core::Result<Var> {
    let p = Conv2dParams::new(tape.value(v[1]).clone(), tape.value(v[2]).clone(), 1)?;
    let out = nn::conv2d(tape.value(v[0]), &p)?;
    tape.custom(Box::new(BrokenConv), v, out)
}

#[test]
fn corrupted_convolution_backward_is_caught() {
    let check = GradCheck::default();
    let outcome = check.check(
        "broken_conv2d",
        |rng| {
            let mut u = |shape: &[usize]| {
                let n = shape.iter().product();
                Tensor::new(shape, (0..n).map(|_| rng.range(-1.0, 1.0)).collect()).unwrap()
            };
            vec![u(&[2, 2, 5, 5]), u(&[3, 2, 3, 3]), u(&[3])]
        },
        broken_conv,
    );
    assert!(!outcome.passed);
    assert!(outcome.max_rel_err > 1e-2, "{:.3e}", outcome.max_rel_err);
}

#[test]
fn finite_differences_of_a_known_function() {
    // f(x) = sum(sin(x_i) * x_{i+1})
    let x = Tensor::from_f64(&[4], &[0.1, -0.7, 1.3, 2.0]).unwrap();
    let f = |t: &Tensor<f64>| Ok(t.data().windows(2).map(|w| w[0].sin() * w[1]).sum());
    let numeric = finite_diff_grad(f, &x, 1e-5).unwrap();
    let d = x.data();
    let analytic = Tensor::from_f64(
        &[4],
        &[
            d[0].cos() * d[1],
            d[0].sin() + d[1].cos() * d[2],
            d[1].sin() + d[2].cos() * d[3],
            d[2].sin(),
        ],
    )
    .unwrap();
    assert!(max_relative_error(&analytic, &numeric) < 1e-8);
}
