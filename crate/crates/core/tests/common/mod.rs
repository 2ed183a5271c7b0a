#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdanet::tensor::{Graph, Shape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;

pub fn random_tensor(shape: Shape, seed: u64, scale: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

/// Like `random_tensor` but every entry has magnitude at least `min_abs`,
/// keeping finite differences away from ReLU kinks.
pub fn random_tensor_away_from_zero(shape: Shape, seed: u64, min_abs: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(min_abs..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Largest entry-wise deviation scaled by the largest reference magnitude.
pub fn relative_error(analytic: &Tensor, reference: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), reference.shape());
    let diff = analytic
        .data()
        .iter()
        .zip(reference.data())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    diff / reference.max_abs().max(1e-12)
}

/// Central differences of a scalar function of several tensors, one
/// gradient tensor per input.
pub fn numeric_grads(f: &dyn Fn(&[Tensor]) -> f64, inputs: &[Tensor], h: f64) -> Vec<Tensor> {
    let mut work = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape());
        for k in 0..inputs[i].len() {
            let orig = work[i].data()[k];
            work[i].data_mut()[k] = orig + h;
            let up = f(&work);
            work[i].data_mut()[k] = orig - h;
            let down = f(&work);
            work[i].data_mut()[k] = orig;
            g.data_mut()[k] = (up - down) / (2.0 * h);
        }
        grads.push(g);
    }
    grads
}

/// Build the graph on fresh leaves, backpropagate and compare every input
/// gradient against central differences. Returns the worst relative error.
pub fn check_graph_gradients<F>(build: F, inputs: &[Tensor]) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.param(t.clone())).collect();
    let loss = build(&mut graph, &vars);
    graph.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|v| {
            graph
                .grad(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(graph.shape(*v)))
        })
        .collect();

    let eval = |ts: &[Tensor]| {
        let mut g = Graph::new();
        let vs: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
        let l = build(&mut g, &vs);
        g.value(l).data()[0]
    };
    let numeric = numeric_grads(&eval, inputs, FD_STEP);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// `sum(out * weights)` with fixed random weights, so upstream gradients
/// are not uniform.
pub fn weighted_sum(graph: &mut Graph, out: Var, seed: u64) -> Var {
    let w = random_tensor(graph.shape(out), seed, 1.0);
    let w = graph.constant(w);
    let m = graph.mul(out, w).unwrap();
    graph.sum(m)
}
