//! Central-difference checks of every operator and loss.

use burnscar::autodiff::check::{max_relative_error, numeric_grad};
use burnscar::autodiff::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};

pub const STEP: f64 = 1e-5;

type Graph = dyn Fn(&mut Tape, &[Var]) -> Var;

fn random(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Scalar objective: the graph's output weighted by fixed random weights
/// (a plain sum for scalar outputs).
fn objective(tape: &mut Tape, inputs: &[Tensor], leaves: bool, f: &Graph) -> (Var, Vec<Var>) {
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| if leaves { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
        .collect();
    let out = f(tape, &vars);
    let shape = tape.value(out).shape().to_vec();
    let weights = tape.constant(random(&shape, -1.0, 1.0, 99));
    let weighted = tape.mul(out, weights).unwrap();
    (tape.sum(weighted), vars)
}

/// Largest relative error over every element of every input.
pub fn check(inputs: &[Tensor], f: &Graph) -> f64 {
    let mut tape = Tape::new();
    let (s, vars) = objective(&mut tape, inputs, true, f);
    tape.backward(s).unwrap();
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        let numeric = numeric_grad(
            |x| {
                let mut probe = inputs.to_vec();
                probe[k] = Tensor::new(inputs[k].shape().to_vec(), x.to_vec()).unwrap();
                let mut t = Tape::new();
                let (s, _) = objective(&mut t, &probe, false, f);
                t.value(s).item()
            },
            inputs[k].data(),
            STEP,
        );
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    worst
}

fn binary_targets(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.4)))).collect()
}

/// `(name, worst relative error)` for every operator and loss.
pub fn run_all() -> Vec<(&'static str, f64)> {
    let x = random(&[2, 3, 4, 4], -1.0, 1.0, 1);
    let y = random(&[2, 3, 4, 4], -1.0, 1.0, 2);
    let w3 = random(&[4, 3, 3, 3], -0.5, 0.5, 3);
    let w1 = random(&[1, 3, 1, 1], -0.5, 0.5, 4);
    let gamma = random(&[3], 0.5, 1.5, 5);
    let beta = random(&[3], -0.5, 0.5, 6);
    let bias = random(&[3], -0.5, 0.5, 7);
    let a = random(&[3, 5], -1.0, 1.0, 8);
    let b = random(&[5, 2], -1.0, 1.0, 9);
    let gate = random(&[2, 3], 0.1, 0.9, 10);
    let mask = random(&[2, 1, 4, 4], 0.1, 0.9, 11);
    let p = random(&[2, 1, 4, 4], 0.05, 0.95, 12);
    let t = binary_targets(32, 13);

    let mut out = Vec::new();
    let mut run = |name, inputs: Vec<Tensor>, f: Box<Graph>| out.push((name, check(&inputs, f.as_ref())));

    run("conv2d", vec![x.clone(), w3.clone()], Box::new(|t, v| t.conv2d(v[0], v[1], 1, 1).unwrap()));
    run("conv2d_stride2", vec![x.clone(), w3.clone()], Box::new(|t, v| t.conv2d(v[0], v[1], 2, 1).unwrap()));
    run("conv2d_1x1", vec![x.clone(), w1.clone()], Box::new(|t, v| t.conv2d(v[0], v[1], 1, 0).unwrap()));
    run(
        "batch_norm_train",
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(|t, v| t.batch_norm_train(v[0], v[1], v[2], 1e-5).unwrap().0),
    );
    run(
        "batch_norm_eval",
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(|t, v| t.batch_norm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0], 1e-5).unwrap()),
    );
    run("relu", vec![x.clone()], Box::new(|t, v| t.relu(v[0])));
    run("sigmoid", vec![x.clone()], Box::new(|t, v| t.sigmoid(v[0])));
    run("max_pool2", vec![x.clone()], Box::new(|t, v| t.max_pool2(v[0]).unwrap()));
    run("global_avg_pool", vec![x.clone()], Box::new(|t, v| t.global_avg_pool(v[0]).unwrap()));
    run("upsample2", vec![x.clone()], Box::new(|t, v| t.upsample2(v[0]).unwrap()));
    run("concat", vec![x.clone(), mask.clone()], Box::new(|t, v| t.concat(&[v[0], v[1]]).unwrap()));
    run("add", vec![x.clone(), y.clone()], Box::new(|t, v| t.add(v[0], v[1]).unwrap()));
    run("mul", vec![x.clone(), y.clone()], Box::new(|t, v| t.mul(v[0], v[1]).unwrap()));
    run("maximum", vec![x.clone(), y.clone()], Box::new(|t, v| t.maximum(v[0], v[1]).unwrap()));
    run("matmul", vec![a, b], Box::new(|t, v| t.matmul(v[0], v[1]).unwrap()));
    run("add_bias", vec![x.clone(), bias], Box::new(|t, v| t.add_bias(v[0], v[1]).unwrap()));
    run("channel_scale", vec![x.clone(), gate], Box::new(|t, v| t.channel_scale(v[0], v[1]).unwrap()));
    run("spatial_scale", vec![x.clone(), mask], Box::new(|t, v| t.spatial_scale(v[0], v[1]).unwrap()));
    run("sum", vec![x], Box::new(|t, v| t.sum(v[0])));

    let (t1, t2, t3, t4, t5) = (t.clone(), t.clone(), t.clone(), t.clone(), t);
    run("loss_bce", vec![p.clone()], Box::new(move |t, v| t.bce(v[0], &t1).unwrap()));
    run("loss_focal", vec![p.clone()], Box::new(move |t, v| t.focal(v[0], &t2, 0.25, 2.0).unwrap()));
    run("loss_focal_gamma_half", vec![p.clone()], Box::new(move |t, v| t.focal(v[0], &t3, 0.7, 0.5).unwrap()));
    run("loss_dice", vec![p.clone()], Box::new(move |t, v| t.dice(v[0], &t4).unwrap()));
    run("loss_bce_dice", vec![p], Box::new(move |t, v| t.bce_dice(v[0], &t5).unwrap()));
    out
}
