//! Central finite-difference checks of tape gradients in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::models::{Batch, ModelConfig, ModelError, TransformerModel};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

/// Finite-difference step.
pub const STEP: f64 = 1e-3;
/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely against
/// `TOLERANCE * FLOOR`, where central differences at `STEP` are dominated by
/// truncation error.
pub const FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Uniform entries in `[-1.5, 1.5)`.
pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).expect("shape matches data")
}

/// Largest relative error over every coordinate of every input of the scalar
/// function `build`.
pub fn max_relative_error<F>(inputs: &[Tensor<f64>], build: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = build(&mut tape, &vars);
        (tape.value(out).item(), tape, vars, out)
    };
    let (_, mut tape, vars, out) = eval(inputs);
    let grads = tape.backward(out).expect("scalar output");
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; input.numel()]);
        for j in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= STEP;
            let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic[j], numeric));
        }
    }
    worst
}

/// Contracts `x` with fixed random weights so every entry reaches the output.
pub fn project(tape: &mut Tape<f64>, x: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let shape = tape.shape(x).to_vec();
    let w = tape.constant(random_tensor(&shape, &mut rng));
    let p = tape.mul(x, w).expect("same shape");
    tape.sum(p)
}

/// Worst error of `build` over ten random input points.
pub fn check_op(shapes: &[&[usize]], build: impl Fn(&mut Tape<f64>, &[Var], u64) -> Var) -> f64 {
    (0..10u64)
        .map(|point| {
            let mut rng = ChaCha8Rng::seed_from_u64(point);
            let inputs: Vec<_> = shapes.iter().map(|s| random_tensor(s, &mut rng)).collect();
            max_relative_error(&inputs, |t, v| build(t, v, point))
        })
        .fold(0.0, f64::max)
}

/// Worst error per differentiable tape op.
pub fn op_suite() -> Vec<(&'static str, f64)> {
    let keep = [true, false, true, true, true, true, false, false];
    let targets = [Some(2), None, Some(0), Some(3)];
    vec![
        ("matmul", check_op(&[&[2, 3, 4], &[4, 5]], |t, v, s| {
            let y = t.matmul(v[0], v[1]).unwrap();
            project(t, y, s)
        })),
        ("bmm", check_op(&[&[2, 3, 4], &[2, 4, 5]], |t, v, s| {
            let y = t.bmm(v[0], v[1], false).unwrap();
            project(t, y, s)
        })),
        ("bmm_transposed", check_op(&[&[2, 1, 3, 4], &[2, 1, 5, 4]], |t, v, s| {
            let y = t.bmm(v[0], v[1], true).unwrap();
            project(t, y, s)
        })),
        ("add", check_op(&[&[3, 4], &[3, 4]], |t, v, s| {
            let y = t.add(v[0], v[1]).unwrap();
            project(t, y, s)
        })),
        ("add_bias", check_op(&[&[3, 4], &[4]], |t, v, s| {
            let y = t.add_bias(v[0], v[1]).unwrap();
            project(t, y, s)
        })),
        ("mul", check_op(&[&[3, 4], &[3, 4]], |t, v, s| {
            let y = t.mul(v[0], v[1]).unwrap();
            project(t, y, s)
        })),
        ("scale", check_op(&[&[3, 4]], |t, v, s| {
            let y = t.scale(v[0], -0.7);
            project(t, y, s)
        })),
        ("gelu", check_op(&[&[3, 4]], |t, v, s| {
            let y = t.gelu(v[0]);
            project(t, y, s)
        })),
        ("sum", check_op(&[&[3, 4]], |t, v, _| t.sum(v[0]))),
        ("softmax", check_op(&[&[3, 5]], |t, v, s| {
            let y = t.softmax(v[0]);
            project(t, y, s)
        })),
        ("masked_softmax", check_op(&[&[2, 3, 4]], |t, v, s| {
            let y = t.masked_softmax(v[0], &keep).unwrap();
            project(t, y, s)
        })),
        ("layer_norm", check_op(&[&[3, 6], &[6], &[6]], |t, v, s| {
            let y = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
            project(t, y, s)
        })),
        ("reshape", check_op(&[&[2, 6]], |t, v, s| {
            let y = t.reshape(v[0], &[3, 4]).unwrap();
            project(t, y, s)
        })),
        ("permute", check_op(&[&[2, 3, 4]], |t, v, s| {
            let y = t.permute(v[0], &[2, 0, 1]).unwrap();
            project(t, y, s)
        })),
        ("embedding", check_op(&[&[5, 3]], |t, v, s| {
            let y = t.embedding(v[0], &[4, 0, 4, 2]).unwrap();
            project(t, y, s)
        })),
        ("masked_cross_entropy", check_op(&[&[4, 4]], |t, v, _| t.masked_cross_entropy(v[0], &targets).unwrap())),
    ]
}

/// Parameter coordinates whose analytic gradient was compared.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheck {
    pub worst: f64,
    pub checked: usize,
    /// Parameters whose gradient was identically zero.
    pub zero_gradients: Vec<String>,
}

/// Compares the full-model loss gradient with central differences on
/// `per_param` random coordinates of every parameter.
pub fn check_model(config: &ModelConfig, batch: &Batch, per_param: usize, seed: u64) -> Result<ModelCheck, ModelError> {
    let model = TransformerModel::<f64>::init(config, seed)?;
    let mut tape = Tape::new();
    let loss = model.loss(&mut tape, batch, None)?;
    let mut store = model.params().clone();
    store.accumulate(&tape.backward(loss)?);

    let loss_at = |store: &ParamStore<f64>| -> Result<f64, ModelError> {
        let m = TransformerModel::from_params(config.clone(), store.clone())?;
        let mut tape = Tape::new();
        let l = m.loss(&mut tape, batch, None)?;
        Ok(tape.value(l).item())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut out = ModelCheck { worst: 0.0, checked: 0, zero_gradients: Vec::new() };
    for id in store.ids().collect::<Vec<_>>() {
        let n = store.value(id).numel();
        let grad = match store.grad(id) {
            Some(g) if g.norm() > 0.0 => g.clone(),
            _ => {
                out.zero_gradients.push(store.name(id).to_string());
                continue;
            }
        };
        for _ in 0..per_param {
            let j = rng.gen_range(0..n);
            let mut plus = store.clone();
            plus.value_mut(id).data_mut()[j] += STEP;
            let mut minus = store.clone();
            minus.value_mut(id).data_mut()[j] -= STEP;
            let numeric = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * STEP);
            out.worst = out.worst.max(relative_error(grad.data()[j], numeric));
            out.checked += 1;
        }
    }
    Ok(out)
}
