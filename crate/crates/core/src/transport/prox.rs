//! Entropic JKO step: minimise over probability vectors `a`
//!
//! ```text
//! J(a) = S_eps(a, b) / (2h) + Σ a log a - <a, drive>
//! ```
//!
//! where `S_eps` is the debiased Sinkhorn divergence to the anchor `b`.
//! `S_eps(., b)` is convex, so `J` has a unique minimiser. The concave
//! self-term `-OT(a, a) / (4h)` is majorised by its tangent at the current
//! iterate; the resulting surrogate has a closed-form first-marginal update
//! that is interleaved with Sinkhorn updates of the cross potentials and
//! the symmetric potential, all warm-started across calls.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::scalar::{compensated_sum, Real};
use crate::transport::entropic::{
    gibbs_marginal, log_masses, max_abs_diff, pair, self_sinkhorn, symmetric_update, Divergence, DualPair,
};
use crate::transport::kernel::GibbsKernel;

/// Potentials carried from one prox solve to the next.
#[derive(Debug, Clone, Default)]
pub struct ProxWarmStart<T> {
    pub f: Option<Array2<T>>,
    pub g: Option<Array2<T>>,
    /// Symmetric potential of the iterate.
    pub q: Option<Array2<T>>,
    /// Symmetric potential of the anchor.
    pub q_anchor: Option<Array2<T>>,
}

#[derive(Debug, Clone)]
pub struct ProxOutcome<T> {
    /// First marginal of the final plan: the new cell masses.
    pub masses: Array2<T>,
    /// `|Σ masses - 1|` before any renormalisation.
    pub mass_drift: T,
    pub divergence: Divergence<T>,
    pub iterations: usize,
}

/// Runs the prox iteration with anchor masses `b` and linear drive `drive`
/// (already multiplied by the sensitivity; `None` for pure diffusion).
pub fn entropic_prox<T: Real>(
    kernel: &GibbsKernel<T>,
    b: &Array2<T>,
    drive: Option<&Array2<T>>,
    step: T,
    warm: &mut ProxWarmStart<T>,
    tol: T,
    max_iters: usize,
) -> Result<ProxOutcome<T>> {
    if !(step > T::zero()) {
        return Err(Error::invalid(format!("step must be positive, got {step}")));
    }
    let eps = kernel.eps();
    let sigma = T::lit(2.0) * step / eps;
    let damp = T::one() / (T::one() + sigma);
    let log_b = log_masses(b);

    let neg_inf_where_empty = |mut p: Array2<T>| {
        Zip::from(&mut p).and(&log_b).for_each(|v, &l| {
            if l == T::neg_infinity() {
                *v = T::neg_infinity();
            }
        });
        p
    };
    let mut g = neg_inf_where_empty(warm.g.take().unwrap_or_else(|| Array2::zeros(b.raw_dim())));
    let mut q = warm.q.take().unwrap_or_else(|| Array2::zeros(b.raw_dim()));
    let mut f = warm.f.take().unwrap_or_else(|| Array2::zeros(b.raw_dim()));

    let anchor_self = self_sinkhorn(kernel, b, warm.q_anchor.as_ref(), tol, max_iters)?;

    let mut lse_g = kernel.log_apply(&g.mapv(|v| v / eps))?;
    let mut lse_q = kernel.log_apply(&q.mapv(|v| v / eps))?;
    let mut log_a = Array2::zeros(b.raw_dim());
    let mut err = T::infinity();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        iterations += 1;
        // Closed-form first marginal of the linearised surrogate.
        match drive {
            Some(d) => Zip::from(&mut log_a).and(&lse_g).and(&q).and(d).for_each(|la, &z, &qi, &di| {
                *la = (z + qi / eps + sigma * di) * damp;
            }),
            None => Zip::from(&mut log_a).and(&lse_g).and(&q).for_each(|la, &z, &qi| {
                *la = (z + qi / eps) * damp;
            }),
        }
        let shift = log_sum_exp(&log_a);
        log_a.mapv_inplace(|v| v - shift);
        Zip::from(&mut f).and(&log_a).and(&lse_g).for_each(|fi, &la, &z| *fi = eps * (la - z));
        let lse_f = kernel.log_apply(&f.mapv(|v| v / eps))?;
        Zip::from(&mut g).and(&log_b).and(&lse_f).for_each(|gi, &lb, &z| *gi = eps * (lb - z));
        lse_g = kernel.log_apply(&g.mapv(|v| v / eps))?;
        symmetric_update(&mut q, &log_a, &lse_q, eps);
        lse_q = kernel.log_apply(&q.mapv(|v| v / eps))?;

        let a = log_a.mapv(|v| v.exp());
        let plan_err = max_abs_diff(&gibbs_marginal(&f, &lse_g, eps), &a);
        let self_err = max_abs_diff(&gibbs_marginal(&q, &lse_q, eps), &a);
        err = plan_err.max(self_err);
        if !err.is_finite() {
            break;
        }
        if err <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Diverged { iterations, marginal_error: err.as_f64() });
    }

    // The plan's own first marginal is the output: the cross cost below is
    // then exact for it, with an exact second marginal `b`.
    let masses = gibbs_marginal(&f, &lse_g, eps);
    let total = compensated_sum(masses.iter().copied());
    let mass_drift = (total - T::one()).abs();
    let self_new = self_sinkhorn(kernel, &masses, Some(&q), tol, max_iters)?;
    let cross_value = pair(&f, &masses) + pair(&g, b);
    let col_err = max_abs_diff(&gibbs_marginal(&g, &kernel.log_apply(&f.mapv(|v| v / eps))?, eps), b);
    let cross = DualPair { f, g, value: cross_value, marginal_error: col_err, iterations };
    let half = T::lit(0.5);
    let value = cross.value - half * (self_new.value + anchor_self.value);

    warm.f = Some(cross.f.clone());
    warm.g = Some(cross.g.clone());
    warm.q = Some(self_new.q.clone());
    warm.q_anchor = Some(anchor_self.q.clone());
    Ok(ProxOutcome {
        masses,
        mass_drift,
        divergence: Divergence { value, cross, self_a: self_new, self_b: anchor_self },
        iterations,
    })
}

fn log_sum_exp<T: Real>(v: &Array2<T>) -> T {
    let m = v.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    if !m.is_finite() {
        return m;
    }
    m + compensated_sum(v.iter().map(|&x| (x - m).exp())).ln()
}
