//! Finite-difference checks of reverse-mode gradients, in `f64`.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Graph, Result, Tensor, Var};

/// Scalar objective: the graph output projected on a fixed random tensor,
/// so every output element contributes with its own weight.
fn objective<F>(inputs: &[Tensor<f64>], proj_seed: u64, build: &F, want_grads: bool) -> Result<(f64, Vec<Tensor<f64>>)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = build(&mut g, &vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(proj_seed);
    let proj = g.constant(Tensor::from_fn(g.value(out).shape(), |_, _, _, _| {
        rng.gen_range(-1.0..1.0)
    }));
    let prod = g.mul(out, proj)?;
    let loss = g.sum(prod);
    let value = g.scalar(loss);
    if !want_grads {
        return Ok((value, Vec::new()));
    }
    g.backward(loss)?;
    Ok((value, vars.iter().map(|&v| g.grad_tensor(v)).collect()))
}

/// Worst relative error between analytic and central-difference gradients
/// over all inputs of `build`. The error of each input is
/// `|g - n| / (|g| + |n|)` in the Euclidean norm, so isolated near-zero
/// entries do not dominate.
pub fn relative_error<F>(inputs: &[Tensor<f64>], proj_seed: u64, eps: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let (_, analytic) = objective(inputs, proj_seed, &build, true)?;
    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (k, grad) in analytic.iter().enumerate() {
        let mut numeric = Vec::with_capacity(grad.data().len());
        for i in 0..inputs[k].data().len() {
            let x = inputs[k].data()[i];
            probe[k].data_mut()[i] = x + eps;
            let fp = objective(&probe, proj_seed, &build, false)?.0;
            probe[k].data_mut()[i] = x - eps;
            let fm = objective(&probe, proj_seed, &build, false)?.0;
            probe[k].data_mut()[i] = x;
            numeric.push((fp - fm) / (2.0 * eps));
        }
        let norm = |v: &mut dyn Iterator<Item = f64>| libm::sqrt(v.map(|a| a * a).sum::<f64>());
        let diff = norm(&mut grad.data().iter().zip(&numeric).map(|(a, n)| a - n));
        let scale = norm(&mut grad.data().iter().copied()) + norm(&mut numeric.iter().copied());
        if scale > 1e-10 {
            worst = worst.max(diff / scale);
        }
    }
    Ok(worst)
}
