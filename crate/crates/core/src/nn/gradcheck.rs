use crate::error::Result;

use super::graph::{Graph, Var};
use super::params::ParamSet;
use super::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Largest |analytic gradient| among the probed entries; near zero means the check was vacuous.
    pub max_abs_grad: f64,
    pub failures: Vec<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Relative error with an absolute floor for near-zero gradients.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares backward-pass gradients of the scalar `f` with central differences.
/// At most `max_per_param` entries of each tensor are probed (evenly strided).
pub fn grad_check<F>(f: F, params: &ParamSet<f64>, eps: f64, tol: f64, max_per_param: usize) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |p: &ParamSet<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let vars = p.to_vars(&mut g, false);
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let vars = params.to_vars(&mut g, true);
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let analytic = params.grads_of(&grads, &vars);

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0, max_abs_grad: 0.0, failures: Vec::new() };
    let mut probe = params.clone();
    for (pi, (name, p)) in params.iter().enumerate() {
        let n = p.value.len();
        let stride = n.div_ceil(max_per_param.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let orig = p.value.data[i];
            set(&mut probe, pi, i, orig + eps);
            let fp = eval(&probe)?;
            set(&mut probe, pi, i, orig - eps);
            let fm = eval(&probe)?;
            set(&mut probe, pi, i, orig);
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic.values().nth(pi).unwrap().data[i];
            let e = rel_error(a, numeric);
            report.checked += 1;
            report.max_abs_grad = report.max_abs_grad.max(a.abs());
            if e > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(e);
                if e >= report.max_rel_error {
                    report.worst = Some((name.to_string(), i));
                }
            }
            if e > tol {
                report.failures.push((name.to_string(), i, a, numeric));
            }
        }
    }
    Ok(report)
}

fn set(p: &mut ParamSet<f64>, pi: usize, i: usize, v: f64) {
    let t: &mut Tensor<f64> = p.values_mut().nth(pi).unwrap();
    t.data[i] = v;
}
