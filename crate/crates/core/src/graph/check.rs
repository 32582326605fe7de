//! Gradient verification of the full network pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{bce_on_tape, focal_on_tape};
use super::model::{forward_on_tape, NetworkParams};
use super::{GraphNetConfig, STYLE_COUNT};
use crate::autodiff::{finite_diff_check, GradCheckReport, Tape, Tensor};
use crate::data::Label;
use crate::error::{NgfError, Result};

/// Minimum distance of any recorded value from a rectifier kink, pooling
/// tie or clamp bound for the configuration to be usable: a central
/// difference with step 1e-4 shifts any preactivation by at most a few
/// 1e-4, so 2e-3 keeps the stencil on one side of every kink.
const KINK_MARGIN: f64 = 2e-3;

/// Finite-difference check of every parameter coordinate of the full
/// forward + binary-cross-entropy + focal pipeline on one random graph
/// with `n` nodes.
///
/// Random draws landing too close to a kink are skipped deterministically
/// (sub-seeds `seed * 1000 + attempt`), so the check always runs at a
/// differentiable point.
pub fn pipeline_gradcheck(
    cfg: &GraphNetConfig,
    n: usize,
    seed: u64,
    epsilon: f64,
    rel_tol: f64,
) -> Result<GradCheckReport> {
    cfg.validate()?;
    if n < 2 {
        return Err(NgfError::Contract("gradient check needs n >= 2".into()));
    }
    for attempt in 0..400 {
        let sub_seed = seed.wrapping_mul(1000).wrapping_add(attempt);
        let params = NetworkParams::init(cfg, sub_seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed ^ 0x6772_6164);
        let nodes: Vec<f64> = (0..n * cfg.input_dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let label = if rng.random::<bool>() {
            Label::Compatible
        } else {
            Label::Incompatible
        };
        let target = rng.random_range(0..STYLE_COUNT);

        let x_tensor = Tensor::new(vec![n, cfg.input_dim], nodes)?;
        let build = |tape: &mut Tape, leaves: &[crate::autodiff::VarId]| {
            let pv = super::model::param_vars_from_flat(cfg, leaves);
            let x = tape.leaf(x_tensor.clone());
            let (comp, style) = forward_on_tape(tape, &pv, cfg, x, n)?;
            let bce = bce_on_tape(tape, comp, label)?;
            let focal = focal_on_tape(tape, style, target, cfg.gamma)?;
            tape.add(bce, focal)
        };

        // Probe the margin at this draw before spending on differences.
        let flat: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
        let mut probe = Tape::new();
        let ids: Vec<_> = flat.iter().map(|t| probe.leaf(t.clone())).collect();
        build(&mut probe, &ids)?;
        if probe.kink_margin() < KINK_MARGIN {
            continue;
        }

        return finite_diff_check(&flat, build, epsilon, rel_tol);
    }
    Err(NgfError::Numeric(
        "no kink-free gradient-check point found in 400 attempts".into(),
    ))
}
