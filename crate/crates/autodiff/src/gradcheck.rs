use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{AutodiffError, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamSet};
use crate::tensor::Tensor;

/// Which coordinates a gradient check perturbs.
#[derive(Clone, Copy, Debug)]
pub enum Coords {
    All,
    /// At most `per_tensor` coordinates of every tensor, chosen with `seed`.
    Sample {
        per_tensor: usize,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(1, |analytic|, |numeric|)` over checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±eps interval straddles a non-differentiable point.
    pub skipped_kinks: usize,
    /// Tensor name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol && self.checked > 0
    }
}

fn evaluate<F>(f: &F, params: &ParamSet<f64>) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &ParamSet<f64>) -> Result<Var>,
{
    let mut g = Graph::inference();
    let out = f(&mut g, params)?;
    if g.value(out).len() != 1 {
        return Err(AutodiffError::NonScalarLoss(g.shape(out).to_vec()));
    }
    Ok(g.scalar(out))
}

/// Compares reverse-mode gradients of a scalar function against central differences.
///
/// `f` builds its output from tensors bound out of `params`; every entry of
/// `params` is a candidate for perturbation. Coordinates where one of the
/// one-sided differences agrees with the analytic gradient far better than the
/// central difference are treated as straddling a kink (ReLU at 0) and skipped.
pub fn grad_check<F>(f: F, params: &ParamSet<f64>, eps: f64, coords: Coords) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamSet<f64>) -> Result<Var>,
{
    let base = evaluate(&f, params)?;
    let again = evaluate(&f, params)?;
    if base.to_bits() != again.to_bits() {
        return Err(AutodiffError::NonDeterministic {
            first: base,
            second: again,
        });
    }

    let mut g = Graph::new();
    let out = f(&mut g, params)?;
    g.backward(out)?;
    let analytic = g.param_grads();

    let mut rng = match coords {
        Coords::Sample { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Coords::All => None,
    };
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        worst: None,
    };

    for id in params.ids() {
        let n = params.get(id).numel();
        let zeros;
        let grad = match analytic.get(id) {
            Some(g) => g,
            None => {
                zeros = vec![0.0; n];
                &zeros
            }
        };
        let picked: Vec<usize> = match (&coords, rng.as_mut()) {
            (Coords::Sample { per_tensor, .. }, Some(rng)) if *per_tensor < n => {
                let mut v = sample(rng, n, *per_tensor).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        for i in picked {
            let plus = perturbed(&f, &mut work, id, i, eps)?;
            let minus = perturbed(&f, &mut work, id, i, -eps)?;
            let central = (plus - minus) / (2.0 * eps);
            let a = grad[i];
            let err = rel_error(a, central);
            let forward = (plus - base) / eps;
            let backward = (base - minus) / eps;
            let one_sided = rel_error(a, forward).min(rel_error(a, backward));
            if err > 1e-6 && one_sided < 0.1 * err {
                report.skipped_kinks += 1;
                continue;
            }
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((params.name(id).to_string(), i));
            }
        }
    }
    Ok(report)
}

fn perturbed<F>(f: &F, work: &mut ParamSet<f64>, id: ParamId, i: usize, delta: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &ParamSet<f64>) -> Result<Var>,
{
    let orig = work.get(id).data()[i];
    work.get_mut(id).data_mut()[i] = orig + delta;
    let v = evaluate(f, work);
    work.get_mut(id).data_mut()[i] = orig;
    v
}

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Single-input form of [`grad_check`]: checks `∂f/∂x` over every coordinate of `x`.
pub fn grad_check_fn<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut params = ParamSet::new();
    let id = params.add("x", x.clone())?;
    grad_check(
        |g, p| {
            let v = g.param(p, id);
            f(g, v)
        },
        &params,
        eps,
        Coords::All,
    )
}
