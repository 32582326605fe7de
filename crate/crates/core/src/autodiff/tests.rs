use super::*;
use crate::error::NgfError;

fn t2(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

fn t1(v: &[f64]) -> Tensor {
    Tensor::new(vec![v.len()], v.to_vec()).unwrap()
}

#[test]
fn tensor_construction_checks() {
    assert!(Tensor::new(vec![2, 2], vec![1.0; 4]).is_ok());
    assert!(matches!(
        Tensor::new(vec![2, 2], vec![1.0; 3]),
        Err(NgfError::Shape(_))
    ));
    assert!(matches!(
        Tensor::new(vec![2], vec![1.0, f64::NAN]),
        Err(NgfError::Numeric(_))
    ));
    assert!(matches!(
        Tensor::new(vec![0], vec![]),
        Err(NgfError::Contract(_))
    ));
}

#[test]
fn affine_identity_input() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::eye(2));
    let w = tape.leaf(t2(&[vec![2.0, 0.0], vec![0.0, 3.0]]));
    let b = tape.leaf(t1(&[0.0, 0.0]));
    let y = tape.affine(x, w, b).unwrap();
    assert_eq!(tape.value(y).values(), &[2.0, 0.0, 0.0, 3.0]);
}

#[test]
fn affine_hand_expansion() {
    // [[1,1]]·[[1],[1]] + [0.5] = [[2.5]]
    let mut tape = Tape::new();
    let x = tape.leaf(t2(&[vec![1.0, 1.0]]));
    let w = tape.leaf(t2(&[vec![1.0], vec![1.0]]));
    let b = tape.leaf(t1(&[0.5]));
    let y = tape.affine(x, w, b).unwrap();
    assert_eq!(tape.value(y).values(), &[2.5]);
}

#[test]
fn affine_annihilation() {
    let mut tape = Tape::new();
    let x = tape.leaf(t2(&[vec![1.5, -2.0], vec![0.25, 9.0]]));
    let w = tape.leaf(Tensor::zeros(vec![2, 3]));
    let b = tape.leaf(Tensor::zeros(vec![3]));
    let y = tape.affine(x, w, b).unwrap();
    assert!(tape.value(y).values().iter().all(|&v| v == 0.0));
}

#[test]
fn affine_shape_mismatch() {
    let mut tape = Tape::new();
    let x = tape.leaf(t2(&[vec![1.0, 2.0]]));
    let w = tape.leaf(Tensor::zeros(vec![3, 2]));
    let b = tape.leaf(Tensor::zeros(vec![2]));
    assert!(matches!(tape.affine(x, w, b), Err(NgfError::Shape(_))));
}

#[test]
fn reduce_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(t2(&[vec![1.0, 5.0], vec![3.0, 2.0]]));
    let mx = tape.reduce(x, 0, ReduceKind::Max).unwrap();
    assert_eq!(tape.value(mx).values(), &[3.0, 5.0]);
    let mean = tape.reduce(x, 0, ReduceKind::Mean).unwrap();
    assert_eq!(tape.value(mean).values(), &[2.0, 3.5]);

    // Single-row input: any kind returns the row unchanged.
    let single = tape.leaf(t2(&[vec![4.0, -1.0, 0.5]]));
    for kind in [ReduceKind::Min, ReduceKind::Max, ReduceKind::Mean] {
        let r = tape.reduce(single, 0, kind).unwrap();
        assert_eq!(tape.value(r).values(), &[4.0, -1.0, 0.5]);
    }

    let bad = tape.reduce(x, 2, ReduceKind::Min);
    assert!(matches!(bad, Err(NgfError::Contract(_))));
}

#[test]
fn backward_sum_gives_ones() {
    let mut tape = Tape::new();
    let x = tape.leaf(t2(&[vec![1.0, -2.0], vec![0.5, 7.0]]).with_grad());
    let s = tape.sum_all(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
}

#[test]
fn backward_sigmoid_at_zero() {
    // d/dw sigmoid(w) at w=0 is sigma(0)(1-sigma(0)) = 0.25.
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::scalar(0.0).with_grad());
    let s = tape.sigmoid(w);
    let loss = tape.sum_all(s);
    tape.backward(loss).unwrap();
    assert!((tape.grad(w).unwrap()[0] - 0.25).abs() < 1e-15);
}

#[test]
fn backward_constant_loss_zero_grad() {
    let mut tape = Tape::new();
    let x = tape.leaf(t1(&[3.0, 4.0]).with_grad());
    let c = tape.leaf(Tensor::scalar(2.0));
    let loss = tape.sum_all(c);
    tape.backward(loss).unwrap();
    // x never participates: grad stays unpopulated (treated as zero).
    assert!(tape.grad(x).is_none());
}

#[test]
fn backward_requires_scalar_root() {
    let mut tape = Tape::new();
    let x = tape.leaf(t1(&[1.0, 2.0]).with_grad());
    let y = tape.relu(x);
    assert!(matches!(tape.backward(y), Err(NgfError::Contract(_))));
}

#[test]
fn backward_accumulates_without_reset() {
    let mut tape = Tape::new();
    let x = tape.leaf(t1(&[2.0]).with_grad());
    let y = tape.mul_scalar(x, 3.0);
    let loss = tape.sum_all(y);
    tape.backward(loss).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[6.0]);
    tape.zero_grads();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[3.0]);
}

#[test]
fn pair_pool_tie_routes_to_first() {
    let mut tape = Tape::new();
    let a = tape.leaf(t1(&[1.0, 2.0]).with_grad());
    let b = tape.leaf(t1(&[1.0, 5.0]).with_grad());
    let m = tape.pair_min(a, b).unwrap();
    let loss = tape.sum_all(m);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(a).unwrap(), &[1.0, 1.0]);
    assert_eq!(tape.grad(b).unwrap(), &[0.0, 0.0]);
}

#[test]
fn reduce_min_tie_routes_to_lowest_index() {
    let mut tape = Tape::new();
    let x = tape.leaf(t2(&[vec![2.0], vec![2.0], vec![3.0]]).with_grad());
    let m = tape.reduce(x, 0, ReduceKind::Min).unwrap();
    let loss = tape.sum_all(m);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 0.0]);
}

#[test]
fn gather_scatter_roundtrip_grad() {
    let mut tape = Tape::new();
    let x = tape.leaf(t2(&[vec![1.0, 2.0], vec![3.0, 4.0]]).with_grad());
    let g = tape.gather_rows(x, vec![0, 1, 0]).unwrap();
    assert_eq!(tape.value(g).shape(), &[3, 2]);
    let loss = tape.sum_all(g);
    tape.backward(loss).unwrap();
    // Row 0 selected twice, row 1 once.
    assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0, 1.0, 1.0]);
}

#[test]
fn concat_and_slice_inverse() {
    let mut tape = Tape::new();
    let a = tape.leaf(t2(&[vec![1.0, 2.0]]));
    let b = tape.leaf(t2(&[vec![3.0, 4.0, 5.0]]));
    let c = tape.concat(&[a, b], 1).unwrap();
    assert_eq!(tape.value(c).values(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
    let back = tape.slice(c, 1, 2, 3).unwrap();
    assert_eq!(tape.value(back).values(), &[3.0, 4.0, 5.0]);
}

#[test]
fn rank3_reduce_over_middle_axis() {
    // Shape [2,2,2]: reduce axis 1 -> [2,2].
    let mut tape = Tape::new();
    let x = tape.leaf(
        Tensor::new(
            vec![2, 2, 2],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
        )
        .unwrap(),
    );
    let m = tape.reduce(x, 1, ReduceKind::Max).unwrap();
    assert_eq!(tape.value(m).shape(), &[2, 2]);
    assert_eq!(tape.value(m).values(), &[3.0, 4.0, 7.0, 8.0]);
    let mean = tape.reduce(x, 1, ReduceKind::Mean).unwrap();
    assert_eq!(tape.value(mean).values(), &[2.0, 3.0, 6.0, 7.0]);
}

#[test]
fn finite_diff_square_closed_form() {
    // f(w) = w^2 at w=3: analytic 6, central difference is exact for
    // quadratics up to rounding.
    let params = [Tensor::scalar(3.0)];
    let report = finite_diff_check(
        &params,
        |tape, ids| {
            let sq = tape.mul(ids[0], ids[0])?;
            Ok(tape.sum_all(sq))
        },
        1e-4,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "{report}");
    assert!(report.max_rel_err < 1e-6, "{report}");
    assert!(report.non_smooth.is_empty());
}

#[test]
fn finite_diff_constant_function() {
    let params = [t1(&[1.0, -2.0])];
    let report = finite_diff_check(
        &params,
        |tape, _ids| {
            let c = tape.leaf(Tensor::scalar(5.0));
            Ok(tape.sum_all(c))
        },
        1e-4,
        1e-4,
    )
    .unwrap();
    assert!(report.passed());
    assert_eq!(report.max_rel_err, 0.0);
}

#[test]
fn finite_diff_flags_abs_kink() {
    // |w| at w=0: one-sided slopes disagree; must be reported, not failed.
    let params = [Tensor::scalar(0.0)];
    let report = finite_diff_check(
        &params,
        |tape, ids| {
            // |w| = relu(w) + relu(-w)
            let pos = tape.relu(ids[0]);
            let negw = tape.mul_scalar(ids[0], -1.0);
            let neg = tape.relu(negw);
            let s = tape.add(pos, neg)?;
            Ok(tape.sum_all(s))
        },
        1e-4,
        1e-4,
    )
    .unwrap();
    assert_eq!(report.non_smooth.len(), 1);
    assert!(report.passed(), "kink must not fail the check: {report}");
}

#[test]
fn finite_diff_rejects_bad_epsilon() {
    let params = [Tensor::scalar(1.0)];
    let r = finite_diff_check(&params, |tape, ids| Ok(tape.sum_all(ids[0])), 0.0, 1e-4);
    assert!(matches!(r, Err(NgfError::Contract(_))));
}

#[test]
fn finite_diff_composite_expression() {
    // Mixed pipeline across most op kinds; random-ish fixed values away
    // from kinks.
    let w = t2(&[vec![0.4, -0.3], vec![0.7, 0.2]]);
    let b = t1(&[0.05, -0.1]);
    let x = t2(&[vec![0.9, -1.2], vec![0.3, 0.8], vec![-0.5, 0.6]]);
    let params = [w, b, x];
    let report = finite_diff_check(
        &params,
        |tape, ids| {
            let y = tape.affine(ids[2], ids[0], ids[1])?;
            let h = tape.relu(y);
            let g = tape.gather_rows(h, vec![0, 1, 1, 2])?;
            let s = tape.sigmoid(g);
            let r3 = tape.reshape(s, vec![2, 2, 2])?;
            let mn = tape.reduce(r3, 1, ReduceKind::Min)?;
            let mx = tape.reduce(r3, 1, ReduceKind::Max)?;
            let cat = tape.concat(&[mn, mx], 1)?;
            let sm = tape.softmax_last(cat);
            let lg = tape.clamp(sm, 1e-12, 1.0);
            let ln = tape.ln(lg);
            let p = tape.mean_all(ln);
            Ok(tape.mul_scalar(p, -1.0))
        },
        1e-4,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "{report}");
}

#[test]
fn kink_margin_reports_smallest_gap() {
    let mut tape = Tape::new();
    let x = tape.leaf(t1(&[0.5, -0.002, 3.0]));
    let _ = tape.relu(x);
    assert!((tape.kink_margin() - 0.002).abs() < 1e-15);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0f64..100.0, len..=len)
    }

    proptest! {
        // Symmetric reductions are invariant to permutations of the
        // reduced axis (exactly for min/max, to rounding for mean).
        #[test]
        fn reduce_is_permutation_invariant(
            vals in finite_vec(24),
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let rows = 6;
            let cols = 4;
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::new(vec![rows, cols], vals.clone()).unwrap());

            let mut order: Vec<usize> = (0..rows).collect();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            order.shuffle(&mut rng);
            let mut perm_vals = vec![0.0; vals.len()];
            for (new_r, &old_r) in order.iter().enumerate() {
                perm_vals[new_r * cols..(new_r + 1) * cols]
                    .copy_from_slice(&vals[old_r * cols..(old_r + 1) * cols]);
            }
            let xp = tape.leaf(Tensor::new(vec![rows, cols], perm_vals).unwrap());

            for kind in [ReduceKind::Min, ReduceKind::Max] {
                let a = tape.reduce(x, 0, kind).unwrap();
                let b = tape.reduce(xp, 0, kind).unwrap();
                prop_assert_eq!(tape.value(a).values(), tape.value(b).values());
            }
            let a = tape.reduce(x, 0, ReduceKind::Mean).unwrap();
            let b = tape.reduce(xp, 0, ReduceKind::Mean).unwrap();
            for (u, v) in tape.value(a).values().iter().zip(tape.value(b).values()) {
                prop_assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
            }
        }

        // Gradient of sum(relu(x)) is the indicator of positivity.
        #[test]
        fn relu_grad_is_indicator(vals in finite_vec(16)) {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::new(vec![16], vals.clone()).unwrap().with_grad());
            let r = tape.relu(x);
            let s = tape.sum_all(r);
            tape.backward(s).unwrap();
            let g = tape.grad(x).unwrap();
            for (v, gi) in vals.iter().zip(g) {
                prop_assert_eq!(*gi, if *v > 0.0 { 1.0 } else { 0.0 });
            }
        }
    }
}

mod tree_oracle {
    //! Backward on tree-shaped graphs versus a brute-force path enumerator.
    //!
    //! For a tree built from add/mul/scalar ops, d(root)/d(leaf) equals the
    //! product of local derivatives along the unique root-to-leaf path.

    use super::*;

    enum Expr {
        Leaf(usize),
        Add(Box<Expr>, Box<Expr>),
        Mul(Box<Expr>, Box<Expr>),
        Scale(f64, Box<Expr>),
    }

    fn eval(e: &Expr, leaves: &[f64]) -> f64 {
        match e {
            Expr::Leaf(i) => leaves[*i],
            Expr::Add(a, b) => eval(a, leaves) + eval(b, leaves),
            Expr::Mul(a, b) => eval(a, leaves) * eval(b, leaves),
            Expr::Scale(c, a) => c * eval(a, leaves),
        }
    }

    /// Path products: descend every branch, multiplying local partials.
    fn path_grads(e: &Expr, leaves: &[f64], upstream: f64, out: &mut Vec<f64>) {
        match e {
            Expr::Leaf(i) => out[*i] += upstream,
            Expr::Add(a, b) => {
                path_grads(a, leaves, upstream, out);
                path_grads(b, leaves, upstream, out);
            }
            Expr::Mul(a, b) => {
                let (va, vb) = (eval(a, leaves), eval(b, leaves));
                path_grads(a, leaves, upstream * vb, out);
                path_grads(b, leaves, upstream * va, out);
            }
            Expr::Scale(c, a) => path_grads(a, leaves, upstream * c, out),
        }
    }

    fn build_on_tape(e: &Expr, tape: &mut Tape, ids: &[VarId]) -> VarId {
        match e {
            Expr::Leaf(i) => ids[*i],
            Expr::Add(a, b) => {
                let (x, y) = (build_on_tape(a, tape, ids), build_on_tape(b, tape, ids));
                tape.add(x, y).unwrap()
            }
            Expr::Mul(a, b) => {
                let (x, y) = (build_on_tape(a, tape, ids), build_on_tape(b, tape, ids));
                tape.mul(x, y).unwrap()
            }
            Expr::Scale(c, a) => {
                let x = build_on_tape(a, tape, ids);
                tape.mul_scalar(x, *c)
            }
        }
    }

    fn random_tree(depth: usize, next_leaf: &mut usize, rng: &mut impl FnMut() -> u32) -> Expr {
        if depth == 0 {
            let e = Expr::Leaf(*next_leaf);
            *next_leaf += 1;
            return e;
        }
        match rng() % 3 {
            0 => Expr::Add(
                Box::new(random_tree(depth - 1, next_leaf, rng)),
                Box::new(random_tree(depth - 1, next_leaf, rng)),
            ),
            1 => Expr::Mul(
                Box::new(random_tree(depth - 1, next_leaf, rng)),
                Box::new(random_tree(depth - 1, next_leaf, rng)),
            ),
            _ => Expr::Scale(
                1.5 - (rng() % 7) as f64 * 0.4,
                Box::new(random_tree(depth - 1, next_leaf, rng)),
            ),
        }
    }

    #[test]
    fn depth3_trees_match_path_enumeration() {
        let mut state = 0x243f6a88u32;
        let mut rng = move || {
            state = state.wrapping_mul(1664525).wrapping_add(1013904223);
            state >> 8
        };
        for case in 0..50 {
            let mut n_leaves = 0;
            let tree = random_tree(3, &mut n_leaves, &mut rng);
            let leaves: Vec<f64> = (0..n_leaves)
                .map(|i| 0.3 + 0.17 * (i as f64) - 0.05 * (case as f64))
                .collect();

            let mut expected = vec![0.0; n_leaves];
            path_grads(&tree, &leaves, 1.0, &mut expected);

            let mut tape = Tape::new();
            let ids: Vec<VarId> = leaves
                .iter()
                .map(|&v| tape.leaf(Tensor::scalar(v).with_grad()))
                .collect();
            let root = build_on_tape(&tree, &mut tape, &ids);
            tape.backward(root).unwrap();
            for (i, id) in ids.iter().enumerate() {
                let got = tape.grad(*id).map(|g| g[0]).unwrap_or(0.0);
                assert!(
                    (got - expected[i]).abs() <= 1e-12 * expected[i].abs().max(1.0),
                    "case {case}, leaf {i}: got {got}, expected {}",
                    expected[i]
                );
            }
        }
    }
}
