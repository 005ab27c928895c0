//! Central finite differences against the tape's analytic gradients.

use rand::seq::index;
use rand::Rng;
use srevo_core::datagen::DataEquationPair;
use srevo_core::model::{self, BoundParams, Mode, NetworkGenome};
use srevo_core::tensor::{cross_entropy, Tape, Tensor, Var};

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Worst relative error over every input element of a scalar-valued tape
/// function.
pub fn op_grad_check(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().cloned().map(|t| tape.leaf(t)).collect();
    let loss = f(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape()));
        for i in 0..input.len() {
            let eval = |delta: f64| {
                let mut perturbed = inputs.to_vec();
                perturbed[k].data_mut()[i] += delta;
                let mut t = Tape::new();
                let vs: Vec<Var> = perturbed.into_iter().map(|x| t.leaf(x)).collect();
                let l = f(&mut t, &vs);
                t.value(l).item()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            worst = worst.max(rel_err(analytic.data()[i], numeric, 1e-6));
        }
    }
    worst
}

fn loss_of(g: &NetworkGenome, pair: &DataEquationPair) -> f64 {
    let logits = model::forward_logits(g, &pair.xs, &pair.ys, &pair.tokens).unwrap();
    cross_entropy(&logits, &pair.tokens).unwrap()
}

/// Worst relative error over `n` randomly chosen weights of `g`, for the
/// teacher-forced CE on `pair`.
pub fn model_grad_check<R: Rng>(g: &NetworkGenome, pair: &DataEquationPair, n: usize, rng: &mut R) -> f64 {
    let mut tape = Tape::new();
    let params = BoundParams::bind(&mut tape, g);
    let logits = model::teacher_forced_on(
        &mut tape,
        &params,
        g.config(),
        &pair.xs,
        &pair.ys,
        &pair.tokens,
        &mut Mode::Inference,
    )
    .unwrap();
    let loss = tape.cross_entropy(logits, &pair.tokens).unwrap();
    let grads = tape.backward(loss).unwrap();

    let sizes: Vec<usize> = g.layers().iter().map(|l| l.weight.len()).collect();
    let total: usize = sizes.iter().sum();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for flat in index::sample(rng, total, n) {
        let (mut layer, mut pos) = (0, flat);
        while pos >= sizes[layer] {
            pos -= sizes[layer];
            layer += 1;
        }
        let w = &g.layers()[layer].weight;
        let analytic = grads.get(params.weights[layer]).map_or(0.0, |t| t.data()[pos]);
        let eval = |delta: f64| {
            let mut p = g.clone();
            let mut t = (**w).clone();
            t.data_mut()[pos] += delta;
            p.replace_weight(layer, t).unwrap();
            loss_of(&p, pair)
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        worst = worst.max(rel_err(analytic, numeric, 1e-7));
    }
    worst
}
