//! Central finite-difference checks shared by the integration targets.

#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssm::model::ScoreModel;
use ssm::nn::{Activation, DenseLayer, Mlp};
use ssm::schedule::{LossWeighting, NoiseSchedule};
use ssm::train::{batch_loss_and_grad, DsmBatch};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.5..1.5))
}

/// Scalar objective `sum(out * w)` so the upstream gradient is `w`.
fn score_objective(m: &ScoreModel, x: &Array2<f64>, y: &Array2<f64>, c: &Array2<f64>, lv: &[usize], w: &Array2<f64>) -> f64 {
    let (out, _) = m.forward(x.view(), y.view(), c.view(), lv).unwrap();
    (&out * w).sum()
}

/// Worst relative error of the score network's parameter and `y` gradients.
pub fn score_model_worst(draws: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for draw in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(draw);
        let (m, d, levels, hidden, rows) = (2, 2, 4, 5, 3);
        let model = ScoreModel::init(m, d, levels, hidden, &mut rng).unwrap();
        let x = random(&mut rng, rows, m);
        let y = random(&mut rng, rows, d);
        let c = random(&mut rng, rows, d);
        let lv: Vec<usize> = (0..rows).map(|_| rng.random_range(0..levels)).collect();
        let w = random(&mut rng, rows, d);
        let (_, tape) = model.forward(x.view(), y.view(), c.view(), &lv).unwrap();
        let grads = model.backward(&tape, w.view()).unwrap();

        let lens = model.parameter_lens();
        for (b, &len) in lens.iter().enumerate() {
            // Probe a few entries per block to keep the run short.
            for _ in 0..3 {
                let i = rng.random_range(0..len);
                let mut plus = model.clone();
                plus.parameters_mut()[b][i] += H;
                let mut minus = model.clone();
                minus.parameters_mut()[b][i] -= H;
                let numeric = (score_objective(&plus, &x, &y, &c, &lv, &w) - score_objective(&minus, &x, &y, &c, &lv, &w)) / (2.0 * H);
                let analytic = grads.params.blocks()[b][i];
                worst = worst.max(rel_err(analytic, numeric));
            }
        }
        for r in 0..rows {
            for j in 0..d {
                let mut yp = y.clone();
                yp[[r, j]] += H;
                let mut ym = y.clone();
                ym[[r, j]] -= H;
                let numeric = (score_objective(&model, &x, &yp, &c, &lv, &w) - score_objective(&model, &x, &ym, &c, &lv, &w)) / (2.0 * H);
                worst = worst.max(rel_err(grads.y[[r, j]], numeric));
            }
        }
    }
    worst
}

/// Worst relative error of a LeakyReLU MLP's parameter and input gradients.
pub fn leaky_mlp_worst(draws: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for draw in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + draw);
        let layers = vec![DenseLayer::init(3, 6, &mut rng), DenseLayer::init(6, 4, &mut rng), DenseLayer::init(4, 2, &mut rng)];
        let acts = vec![Activation::LeakyRelu(0.01), Activation::LeakyRelu(0.01), Activation::Identity];
        let net = Mlp::new(layers, acts).unwrap();
        let x = random(&mut rng, 4, 3);
        let w = random(&mut rng, 4, 2);
        let f = |n: &Mlp, x: &Array2<f64>| (&n.predict(x.view()).unwrap() * &w).sum();
        let (_, tape) = net.forward(x.view()).unwrap();
        let grads = net.backward(&tape, w.view()).unwrap();
        for (b, &len) in net.parameter_lens().iter().enumerate() {
            for i in 0..len {
                let mut plus = net.clone();
                plus.parameters_mut()[b][i] += H;
                let mut minus = net.clone();
                minus.parameters_mut()[b][i] -= H;
                let numeric = (f(&plus, &x) - f(&minus, &x)) / (2.0 * H);
                worst = worst.max(rel_err(grads.params.blocks()[b][i], numeric));
            }
        }
        for r in 0..4 {
            for j in 0..3 {
                let mut xp = x.clone();
                xp[[r, j]] += H;
                let mut xm = x.clone();
                xm[[r, j]] -= H;
                let numeric = (f(&net, &xp) - f(&net, &xm)) / (2.0 * H);
                worst = worst.max(rel_err(grads.input[[r, j]], numeric));
            }
        }
    }
    worst
}

/// Worst relative error of the weighted denoising loss gradient.
pub fn dsm_loss_worst(draws: u64) -> f64 {
    let schedule = NoiseSchedule::geometric(1.0, 0.1, 4).unwrap();
    let mut worst: f64 = 0.0;
    for draw in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + draw);
        let weighting = LossWeighting::new(if draw % 2 == 0 { 1.0 } else { 2.0 });
        let model = ScoreModel::init(1, 1, schedule.len(), 6, &mut rng).unwrap();
        let batch = DsmBatch::draw(random(&mut rng, 5, 1), random(&mut rng, 5, 1), random(&mut rng, 5, 1), schedule.len(), &mut rng);
        let loss = |m: &ScoreModel| batch_loss_and_grad(m, &batch, &schedule, weighting).unwrap().0;
        let (_, _, grads) = batch_loss_and_grad(&model, &batch, &schedule, weighting).unwrap();
        for (b, &len) in model.parameter_lens().iter().enumerate() {
            for _ in 0..3 {
                let i = rng.random_range(0..len);
                let mut plus = model.clone();
                plus.parameters_mut()[b][i] += H;
                let mut minus = model.clone();
                minus.parameters_mut()[b][i] -= H;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * H);
                worst = worst.max(rel_err(grads.blocks()[b][i], numeric));
            }
        }
    }
    worst
}
