#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use recdiff::autograd::{Tape, Var};
use recdiff::config::ExperimentConfig;
use recdiff::params::{Bound, ParamStore};
use recdiff::tensor::Matrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(r: usize, c: usize, seed: u64) -> Matrix {
    Matrix::randn(r, c, 1.0, &mut rng(seed))
}

/// Central-difference check of every scalar in `params` against backprop.
/// Returns the worst relative error; the denominator is floored at 1e-3 so
/// gradients that are ~0 are compared absolutely.
pub fn gradcheck(params: &ParamStore, build: impl Fn(&mut Tape, &Bound) -> Var) -> f64 {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = build(&mut tape, &bound);
    assert_eq!(tape.value(loss).shape(), (1, 1));
    let grads = bound.collect(tape.backward(loss));

    let eval = |p: &ParamStore| {
        let mut t = Tape::new();
        let b = p.bind(&mut t);
        let l = build(&mut t, &b);
        t.value(l).item()
    };
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (name, m) in params.iter() {
        let g = grads.get(name);
        for i in 0..m.data().len() {
            let mut p = params.clone();
            p.get_mut(name).unwrap().data_mut()[i] += h;
            let up = eval(&p);
            p.get_mut(name).unwrap().data_mut()[i] -= 2.0 * h;
            let down = eval(&p);
            let numeric = (up - down) / (2.0 * h);
            let analytic = g.map_or(0.0, |g| g.data()[i]);
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-3);
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}

/// A config small enough to train in well under a second per epoch.
pub fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::with_data_dir("unused");
    c.embedding.dim = 8;
    c.embedding.pseudo_dim = 6;
    c.encoder.heads = 2;
    c.encoder.layers = 1;
    c.encoder.max_len = 10;
    c.intent.k = 3;
    c.intent.clustering_interval = 4;
    c.diffusion.steps = 5;
    c.diffusion.hidden_width = 8;
    c.diffusion.time_dim = 4;
    c.train.batch_size = 16;
    c.train.epochs = 3;
    c
}
