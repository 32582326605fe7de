//! Compatibility and style losses.

use super::{NetworkOutput, STYLE_COUNT};
use crate::autodiff::{Tape, VarId};
use crate::data::Label;
use crate::error::{NgfError, Result};

const PROB_FLOOR: f64 = 1e-12;

/// Binary cross-entropy on the compatibility score, clamped at 1e-12
/// before the logs.
pub fn compatibility_loss(out: &NetworkOutput, label: Label) -> f64 {
    let s = out.compatibility.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    match label {
        Label::Compatible => -s.ln(),
        Label::Incompatible => -(1.0 - s).ln(),
    }
}

/// Focal loss for the style head: `-(1 - p_t)^gamma * ln(p_t)` for the
/// target class. At `gamma = 0` this is exactly cross-entropy; perfect
/// prediction gives zero loss.
pub fn focal_loss(style_probs: &[f64; STYLE_COUNT], target: usize, gamma: f64) -> Result<f64> {
    if target >= STYLE_COUNT {
        return Err(NgfError::Contract(format!(
            "style target {target} out of range 0..{STYLE_COUNT}"
        )));
    }
    if !(gamma >= 0.0) {
        return Err(NgfError::Contract(format!("gamma {gamma} must be >= 0")));
    }
    let p = style_probs[target];
    if !(0.0..=1.0 + 1e-9).contains(&p) {
        return Err(NgfError::Domain(format!("probability {p} outside [0, 1]")));
    }
    let p_clamped = p.clamp(PROB_FLOOR, 1.0);
    Ok(-((1.0 - p).max(0.0)).powf(gamma) * p_clamped.ln())
}

/// Tape version of [`compatibility_loss`]; `comp` is the 1x1 sigmoid
/// output.
pub fn bce_on_tape(tape: &mut Tape, comp: VarId, label: Label) -> Result<VarId> {
    let loss = match label {
        Label::Compatible => {
            let c = tape.clamp(comp, PROB_FLOOR, 1.0 - PROB_FLOOR);
            let l = tape.ln(c);
            tape.mul_scalar(l, -1.0)
        }
        Label::Incompatible => {
            let neg = tape.mul_scalar(comp, -1.0);
            let one_minus = tape.add_scalar(neg, 1.0);
            let c = tape.clamp(one_minus, PROB_FLOOR, 1.0 - PROB_FLOOR);
            let l = tape.ln(c);
            tape.mul_scalar(l, -1.0)
        }
    };
    Ok(tape.sum_all(loss))
}

/// Tape version of [`focal_loss`]; `style` is the 1x6 softmax output.
pub fn focal_on_tape(tape: &mut Tape, style: VarId, target: usize, gamma: f64) -> Result<VarId> {
    if target >= STYLE_COUNT {
        return Err(NgfError::Contract(format!(
            "style target {target} out of range 0..{STYLE_COUNT}"
        )));
    }
    let p_t = tape.slice(style, 1, target, 1)?;
    // Softmax output is strictly inside (0, 1); no clamp is needed on the
    // modulating factor, only ahead of the log.
    let neg = tape.mul_scalar(p_t, -1.0);
    let one_minus = tape.add_scalar(neg, 1.0);
    let modulator = tape.pow_scalar(one_minus, gamma);
    let clamped = tape.clamp(p_t, PROB_FLOOR, 1.0);
    let log_p = tape.ln(clamped);
    let prod = tape.mul(modulator, log_p)?;
    let loss = tape.mul_scalar(prod, -1.0);
    Ok(tape.sum_all(loss))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn out(s: f64) -> NetworkOutput {
        NetworkOutput {
            compatibility: s,
            style_distribution: [1.0 / 6.0; 6],
        }
    }

    #[test]
    fn bce_examples() {
        // s = 0.5: ln 2 either way.
        let l1 = compatibility_loss(&out(0.5), Label::Compatible);
        let l0 = compatibility_loss(&out(0.5), Label::Incompatible);
        assert!((l1 - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(l1, l0);
        // s -> 1 with y = 1: loss -> 0.
        assert!(compatibility_loss(&out(1.0 - 1e-13), Label::Compatible) < 1e-9);
        // Clamping keeps the loss finite at the boundary.
        assert!(compatibility_loss(&out(1.0), Label::Incompatible).is_finite());
    }

    #[test]
    fn focal_examples() {
        // p_target = 0.5, gamma = 0.5: sqrt(0.5) * ln 2.
        let mut p = [0.1; 6];
        p[2] = 0.5;
        let expected = 0.5f64.sqrt() * std::f64::consts::LN_2;
        assert!((focal_loss(&p, 2, 0.5).unwrap() - expected).abs() < 1e-12);
        // Perfect prediction: zero loss.
        let mut perfect = [0.0; 6];
        perfect[4] = 1.0;
        assert_eq!(focal_loss(&perfect, 4, 0.5).unwrap(), 0.0);
        // Reduces to cross-entropy at gamma = 0.
        let ce = -(p[2] as f64).ln();
        assert!((focal_loss(&p, 2, 0.0).unwrap() - ce).abs() < 1e-15);
        // Zero probability at the target is clamped, not infinite.
        assert!(focal_loss(&perfect, 0, 0.5).unwrap().is_finite());
    }

    #[test]
    fn focal_rejects_bad_inputs() {
        let p = [1.0 / 6.0; 6];
        assert!(focal_loss(&p, 6, 0.5).is_err());
        assert!(focal_loss(&p, 0, -1.0).is_err());
    }
}
