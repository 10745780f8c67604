//! Central finite-difference checking of tape gradients.

use std::fmt;

use crate::error::AdError;
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub numel: usize,
    /// Largest `|g_ad − g_fd| / max(1e-8, |g_ad| + |g_fd|)` over the tensor.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub step: f64,
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "{:<4} {:<32} n={:<6} max_rel_err={:.3e} (at {})",
                if p.passed { "ok" } else { "FAIL" },
                p.name,
                p.numel,
                p.max_rel_error,
                p.worst_index
            )?;
        }
        Ok(())
    }
}

pub fn relative_error(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / (ad.abs() + fd.abs()).max(1e-8)
}

/// Compares backprop gradients of a scalar function of `params` against
/// central differences `(f(w+h) − f(w−h)) / 2h`, one weight at a time.
///
/// `f` records the computation on a fresh tape bound to `params` and returns
/// the scalar root. It must be deterministic.
pub fn grad_check<F, E>(
    mut f: F,
    params: &mut ParamStore<f64>,
    step: f64,
    tol: f64,
) -> std::result::Result<GradCheckReport, E>
where
    F: FnMut(&mut Tape<'_, f64>) -> std::result::Result<Var, E>,
    E: From<AdError>,
{
    let analytic: Vec<(String, Vec<f64>)> = {
        let mut tape = Tape::with_params(params);
        let root = f(&mut tape)?;
        let grads = tape.backward(root)?;
        params
            .iter()
            .map(|p| {
                let g = grads
                    .param(params, &p.name)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; p.tensor.numel()]);
                (p.name.clone(), g)
            })
            .collect()
    };

    let mut eval = |params: &ParamStore<f64>| -> std::result::Result<f64, E> {
        let mut tape = Tape::with_params(params);
        let root = f(&mut tape)?;
        Ok(tape.data(root)[0])
    };

    let mut report = GradCheckReport { step, tol, params: Vec::new() };
    for (name, ad) in analytic {
        let mut worst = (0.0f64, 0usize);
        for i in 0..ad.len() {
            let original = params.get(&name)?.data()[i];
            params.get_mut(&name)?.data_mut()[i] = original + step;
            let plus = eval(params)?;
            params.get_mut(&name)?.data_mut()[i] = original - step;
            let minus = eval(params)?;
            params.get_mut(&name)?.data_mut()[i] = original;
            let fd = (plus - minus) / (2.0 * step);
            let err = relative_error(ad[i], fd);
            if err > worst.0 || err.is_nan() {
                worst = (err, i);
            }
        }
        report.params.push(ParamCheck {
            name,
            numel: ad.len(),
            max_rel_error: worst.0,
            worst_index: worst.1,
            passed: worst.0 < tol,
        });
    }
    Ok(report)
}
