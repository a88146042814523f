use super::{Graph, ParamStore, Var};
use crate::error::{Error, Result};

/// Per-parameter outcome of a finite-difference comparison.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
    pub step: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| !p.flagged)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn flagged(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| p.flagged)
    }
}

/// Gradients smaller than this are compared in absolute rather than relative terms.
pub const ABS_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, ABS_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Compares analytic gradients of `f` against central differences with step `h`.
///
/// `f` builds its scalar output on the supplied graph; it must be
/// deterministic in the parameter values.
pub fn grad_check<F>(f: F, store: &ParamStore, h: f64, tol: f64) -> Result<GradReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    check_finite(g.scalar(out))?;
    g.backward(out)?;
    let mut analytic = store.clone();
    analytic.clear_grads();
    g.accumulate_param_grads(&mut analytic)?;

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, s)?;
        check_finite(g.scalar(out))
    };

    let mut work = store.clone();
    let mut params = Vec::new();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let grads = analytic
            .get(&name)
            .and_then(|p| p.grad.as_ref())
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; store.value(&name).map(|t| t.len()).unwrap_or(0)]);
        let mut worst = ParamCheck {
            name: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            flagged: false,
        };
        for (j, &a) in grads.iter().enumerate() {
            let orig = work.value(&name)?.data()[j];
            work.value_mut(&name)?.data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work.value_mut(&name)?.data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work.value_mut(&name)?.data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(a, numeric);
            if err > worst.max_rel_error || j == 0 {
                worst.max_rel_error = err;
                worst.worst_index = j;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        worst.flagged = worst.max_rel_error > tol;
        params.push(worst);
    }
    Ok(GradReport { params, tol, step: h })
}

fn check_finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Evaluation(format!("objective evaluated to {v}")))
    }
}
