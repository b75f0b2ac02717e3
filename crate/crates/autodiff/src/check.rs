//! Central finite-difference gradient checks.
//!
//! The loss closure rebuilds the whole forward pass from a [`ParamSet`] (or
//! from input tensors) on every call, so the numeric side never touches the
//! tape that produced the analytic gradient.

use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamSet};
use crate::tensor::Tensor;

/// Gradients below this magnitude are compared in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub label: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    pub fn rel_err(&self) -> f64 {
        relative_error(self.analytic, self.numeric)
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.probes.iter().map(Probe::rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes
            .iter()
            .max_by(|a, b| a.rel_err().total_cmp(&b.rel_err()))
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.probes.iter().all(|p| p.rel_err() <= tol)
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.probes.extend(other.probes);
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

fn eval_params<F>(params: &ParamSet, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let mut g = Graph::new(params);
    let loss = f(&mut g)?;
    Ok(g.sum_f64(loss))
}

/// Compares backprop against central differences on `n_probes` randomly
/// chosen scalar parameters.
pub fn check_params<F, R>(
    params: &mut ParamSet,
    f: F,
    n_probes: usize,
    h: f32,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
    R: Rng,
{
    let grads = {
        let mut g = Graph::new(params);
        let loss = f(&mut g)?;
        g.backward(loss)?.into_param_grads()
    };
    let ids: Vec<ParamId> = params.ids().collect();
    let total: usize = ids.iter().map(|&id| params.get(id).len()).sum();
    let mut report = GradCheckReport::default();
    for _ in 0..n_probes {
        let mut flat = rng.random_range(0..total);
        let mut chosen = ids[0];
        for &id in &ids {
            let n = params.get(id).len();
            if flat < n {
                chosen = id;
                break;
            }
            flat -= n;
        }
        let analytic = grads.get(chosen).map_or(0.0, |g| g.data()[flat] as f64);
        let numeric = param_central_difference(params, chosen, flat, h, &f)?;
        report.probes.push(Probe {
            label: params.name(chosen).to_string(),
            index: flat,
            analytic,
            numeric,
        });
    }
    Ok(report)
}

pub fn param_central_difference<F>(
    params: &mut ParamSet,
    id: ParamId,
    index: usize,
    h: f32,
    f: &F,
) -> Result<f64>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let orig = params.get(id).data()[index];
    params.get_mut(id).data_mut()[index] = orig + h;
    let plus = eval_params(params, f);
    params.get_mut(id).data_mut()[index] = orig - h;
    let minus = eval_params(params, f);
    params.get_mut(id).data_mut()[index] = orig;
    Ok((plus? - minus?) / (2.0 * h as f64))
}

/// Checks gradients with respect to graph inputs. `f` receives one tracked
/// input var per tensor in `inputs`.
pub fn check_inputs<F, R>(
    params: &ParamSet,
    inputs: &[Tensor],
    f: F,
    n_probes: usize,
    h: f32,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
    R: Rng,
{
    let eval = |ins: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new(params);
        let vars: Vec<Var> = ins.iter().map(|t| g.input(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.sum_f64(loss))
    };
    let analytic: Vec<Tensor> = {
        let mut g = Graph::new(params);
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        let store = g.backward(loss)?;
        vars.iter()
            .zip(inputs)
            .map(|(&v, t)| store.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    };
    let mut work = inputs.to_vec();
    let mut report = GradCheckReport::default();
    for _ in 0..n_probes {
        let which = rng.random_range(0..work.len());
        let index = rng.random_range(0..work[which].len());
        let orig = work[which].data()[index];
        work[which].data_mut()[index] = orig + h;
        let plus = eval(&work)?;
        work[which].data_mut()[index] = orig - h;
        let minus = eval(&work)?;
        work[which].data_mut()[index] = orig;
        report.probes.push(Probe {
            label: format!("input{which}"),
            index,
            analytic: analytic[which].data()[index] as f64,
            numeric: (plus - minus) / (2.0 * h as f64),
        });
    }
    Ok(report)
}
