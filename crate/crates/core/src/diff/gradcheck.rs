//! Central-difference verification of analytic gradients.

use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{DiffError, Graph, ParamGrads, ParamRegistry, Scalar, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    /// Coordinates checked per tensor; smaller tensors are checked fully.
    pub samples_per_tensor: usize,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { eps: 1e-5, tol: 1e-5, samples_per_tensor: 64, floor: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// False when backward produced no gradient for this tensor.
    pub reached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tol: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_err < self.tol)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.tensors.iter().filter(|t| t.max_rel_err >= self.tol).map(|t| t.name.as_str()).collect()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.tensors {
            writeln!(
                f,
                "{:<40} {:>5} coords  max rel err {:.3e}  {}",
                t.name,
                t.checked,
                t.max_rel_err,
                if t.max_rel_err < self.tol { "ok" } else { "FAIL" }
            )?;
        }
        write!(f, "{} (tol {:.0e}, worst {:.3e})", if self.passed() { "PASS" } else { "FAIL" }, self.tol, self.max_rel_err())
    }
}

fn eval<T, F, E>(f: &mut F, params: &ParamRegistry<T>) -> Result<f64, E>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, &ParamRegistry<T>) -> Result<Var, E>,
    E: From<DiffError>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, params)?;
    let v = g.value(loss).item().to_f64c();
    if !v.is_finite() {
        return Err(DiffError::NonFinite("loss during finite differences".into()).into());
    }
    Ok(v)
}

/// Analytic gradients of `f` at `params` via one backward pass.
pub fn analytic_grads<T, F, E>(params: &ParamRegistry<T>, f: &mut F) -> Result<ParamGrads<T>, E>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, &ParamRegistry<T>) -> Result<Var, E>,
    E: From<DiffError>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, params)?;
    Ok(g.backward(loss)?.into_params())
}

/// Compares given analytic gradients with central differences of `f`.
pub fn compare_gradients<T, F, E>(
    params: &ParamRegistry<T>,
    analytic: &ParamGrads<T>,
    mut f: F,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport, E>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, &ParamRegistry<T>) -> Result<Var, E>,
    E: From<DiffError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work = params.clone();
    let mut tensors = Vec::with_capacity(params.len());
    for (id, p) in params.iter() {
        let n = p.value.len();
        let coords: Vec<usize> = if n <= cfg.samples_per_tensor {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, cfg.samples_per_tensor).into_vec();
            c.sort_unstable();
            c
        };
        let grad = analytic.get(id);
        let mut check = TensorCheck {
            name: p.name.clone(),
            checked: coords.len(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            reached: grad.is_some(),
        };
        for k in coords {
            let orig = p.value.data()[k];
            work.get_mut(id).value.data_mut()[k] = T::of(orig.to_f64c() + cfg.eps);
            let up = eval(&mut f, &work)?;
            work.get_mut(id).value.data_mut()[k] = T::of(orig.to_f64c() - cfg.eps);
            let down = eval(&mut f, &work)?;
            work.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * cfg.eps);
            let a = grad.map_or(0.0, |g| g.data()[k].to_f64c());
            if !a.is_finite() {
                return Err(DiffError::NonFinite(format!("analytic gradient of `{}`", p.name)).into());
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            if rel > check.max_rel_err {
                check.max_rel_err = rel;
                check.worst_index = k;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        tensors.push(check);
    }
    Ok(GradCheckReport { tol: cfg.tol, tensors })
}

/// Runs backward once and checks every parameter tensor against central
/// differences. `f` must be deterministic (build an evaluation graph).
pub fn grad_check<T, F, E>(params: &ParamRegistry<T>, mut f: F, cfg: GradCheckConfig) -> Result<GradCheckReport, E>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, &ParamRegistry<T>) -> Result<Var, E>,
    E: From<DiffError>,
{
    let analytic = analytic_grads(params, &mut f)?;
    compare_gradients(params, &analytic, f, cfg)
}
