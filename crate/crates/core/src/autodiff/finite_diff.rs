//! Central-difference gradient verification.

use super::tape::{Tape, VarId};
use super::tensor::Tensor;
use crate::error::{NgfError, Result};

/// One checked parameter coordinate.
#[derive(Debug, Clone)]
pub struct CoordCheck {
    /// Index of the parameter tensor.
    pub param: usize,
    /// Flat coordinate within that tensor.
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome of [`finite_diff_check`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub coords_checked: usize,
    /// Largest relative error over smooth coordinates.
    pub max_rel_err: f64,
    pub worst: Option<CoordCheck>,
    /// Coordinates where one-sided slopes disagree (a kink under the
    /// difference stencil). Reported, not failed.
    pub non_smooth: Vec<CoordCheck>,
    pub rel_tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.rel_tol
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "checked {} coords, max rel err {:.3e} (tol {:.1e}), {} non-smooth flagged: {}",
            self.coords_checked,
            self.max_rel_err,
            self.rel_tol,
            self.non_smooth.len(),
            if self.passed() { "pass" } else { "FAIL" }
        )
    }
}

/// Compare analytic gradients of a scalar-valued tape program against
/// central differences over every coordinate of `params`.
///
/// `build` receives a fresh tape plus one leaf per parameter and must return
/// the scalar root. Relative error uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`. Coordinates where forward and
/// backward one-sided slopes disagree are flagged as non-smooth and excluded
/// from the failure decision.
pub fn finite_diff_check<F>(
    params: &[Tensor],
    build: F,
    epsilon: f64,
    rel_tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[VarId]) -> Result<VarId>,
{
    if epsilon <= 0.0 {
        return Err(NgfError::Contract("epsilon must be positive".into()));
    }

    // Analytic pass.
    let mut tape = Tape::new();
    let ids: Vec<VarId> = params
        .iter()
        .map(|p| tape.leaf(p.clone().with_grad()))
        .collect();
    let root = build(&mut tape, &ids)?;
    let f0 = scalar_value(&tape, root)?;
    tape.backward(root)?;
    let grads: Vec<Vec<f64>> = ids
        .iter()
        .zip(params)
        .map(|(&id, p)| {
            tape.grad(id)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; p.len()])
        })
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let ids: Vec<VarId> = perturbed.iter().map(|p| t.leaf(p.clone())).collect();
        let root = build(&mut t, &ids)?;
        scalar_value(&t, root)
    };

    let mut report = GradCheckReport {
        coords_checked: 0,
        max_rel_err: 0.0,
        worst: None,
        non_smooth: Vec::new(),
        rel_tol,
    };

    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for ci in 0..p.len() {
            let orig = p.values()[ci];
            work[pi].values_mut()[ci] = orig + epsilon;
            let f_plus = eval(&work)?;
            work[pi].values_mut()[ci] = orig - epsilon;
            let f_minus = eval(&work)?;
            work[pi].values_mut()[ci] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * epsilon);
            let analytic = grads[pi][ci];
            let rel_err =
                (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            let check = CoordCheck {
                param: pi,
                coord: ci,
                analytic,
                numeric,
                rel_err,
            };
            report.coords_checked += 1;

            // Second difference large w.r.t. the slopes means the stencil
            // straddles a kink; report it instead of failing on it.
            let d_fwd = (f_plus - f0) / epsilon;
            let d_bwd = (f0 - f_minus) / epsilon;
            let curvature_gap = (f_plus - 2.0 * f0 + f_minus).abs() / (2.0 * epsilon);
            if curvature_gap > 0.01 * d_fwd.abs().max(d_bwd.abs()).max(1.0) {
                report.non_smooth.push(check);
                continue;
            }

            if rel_err > report.max_rel_err {
                report.max_rel_err = rel_err;
                report.worst = Some(check);
            }
        }
    }
    Ok(report)
}

fn scalar_value(tape: &Tape, root: VarId) -> Result<f64> {
    let t = tape.value(root);
    if !t.is_scalar() {
        return Err(NgfError::Contract(format!(
            "gradient check target must be scalar, got shape {:?}",
            t.shape()
        )));
    }
    let v = t.values()[0];
    if !v.is_finite() {
        return Err(NgfError::Numeric(format!("non-finite objective value {v}")));
    }
    Ok(v)
}
