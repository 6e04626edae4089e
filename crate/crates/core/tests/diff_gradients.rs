//! Analytic gradients of every op against central differences.

use imore::diff::{
    analytic_grads, compare_gradients, grad_check, DiffError, GradCheckConfig, Graph, Init, ParamRegistry, Scalar,
    Tensor, Var,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn registry<T: Scalar>(seed: u64, shapes: &[(&str, usize, usize)]) -> ParamRegistry<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = ParamRegistry::new();
    for &(name, rows, cols) in shapes {
        r.add(name, rows, cols, Init::Normal { std: 0.8 }, true, &mut rng).unwrap();
    }
    r
}

fn p<T: Scalar>(g: &mut Graph<T>, r: &ParamRegistry<T>, name: &str) -> Var {
    g.param(r, r.id(name).unwrap())
}

fn cfg(tol: f64) -> GradCheckConfig {
    GradCheckConfig { tol, ..GradCheckConfig::default() }
}

#[test]
fn cross_entropy_gradient() {
    let r = registry::<f64>(1, &[("logits", 1, 7)]);
    let report = grad_check(
        &r,
        |g: &mut Graph<f64>, r: &ParamRegistry<f64>| -> Result<Var, DiffError> {
            let x = p(g, r, "logits");
            g.cross_entropy(x, 3)
        },
        cfg(1e-6),
    )
    .unwrap();
    assert!(report.passed(), "{report}");
}

#[test]
fn linear_toy_loss() {
    let r = registry::<f64>(2, &[("x", 4, 5), ("w", 5, 3), ("b", 1, 3)]);
    let report = grad_check(
        &r,
        |g: &mut Graph<f64>, r: &ParamRegistry<f64>| -> Result<Var, DiffError> {
            let (x, w, b) = (p(g, r, "x"), p(g, r, "w"), p(g, r, "b"));
            let y = g.linear(x, w, Some(b))?;
            let y = g.mean_rows(y)?;
            g.cross_entropy(y, 1)
        },
        cfg(1e-6),
    )
    .unwrap();
    assert!(report.passed(), "{report}");
}

fn attention_loss(g: &mut Graph<f64>, r: &ParamRegistry<f64>) -> Result<Var, DiffError> {
    let (q, k, v) = (p(g, r, "q"), p(g, r, "k"), p(g, r, "v"));
    let (out, _) = g.attention(q, k, v)?;
    let pooled = g.mean_rows(out)?;
    g.cross_entropy(pooled, 2)
}

#[test]
fn attention_gradient() {
    let r = registry::<f64>(3, &[("q", 3, 4), ("k", 5, 4), ("v", 5, 6)]);
    let report = grad_check(&r, attention_loss, cfg(1e-5)).unwrap();
    assert!(report.passed(), "{report}");
}

#[test]
fn corrupted_backward_is_named() {
    let r = registry::<f64>(3, &[("q", 3, 4), ("k", 5, 4), ("v", 5, 6)]);
    let mut analytic = analytic_grads::<f64, _, DiffError>(&r, &mut attention_loss).unwrap();
    let k = r.id("k").unwrap();
    let mut bad = analytic.get(k).unwrap().clone();
    bad.data_mut()[0] += 0.5;
    analytic.set(k, bad);
    let report = compare_gradients(&r, &analytic, attention_loss, cfg(1e-5)).unwrap();
    assert!(!report.passed());
    assert_eq!(report.failing(), vec!["k"]);
}

/// Exercises every op once.
fn kitchen_sink<T: Scalar>(g: &mut Graph<T>, r: &ParamRegistry<T>) -> Result<Var, DiffError> {
    let x = p(g, r, "x");
    let w = p(g, r, "w");
    let gain = p(g, r, "gain");
    let bias = p(g, r, "bias");
    let table = p(g, r, "table");
    let h = g.matmul(x, w)?;
    let h = g.gelu(h);
    let h = g.layer_norm(h, gain, bias)?;
    let e = g.gather(table, &[2, 0, 2, 1])?;
    let h = g.add(h, e)?;
    let a = g.slice_cols(h, 0, 2)?;
    let b = g.slice_cols(h, 2, 2)?;
    let m = g.mul(a, b)?;
    let top = g.slice_rows(h, 0, 2)?;
    let bottom = g.slice_rows(h, 2, 2)?;
    let stacked = g.concat_rows(&[bottom, top])?;
    let (att, _) = g.attention(stacked, h, h)?;
    let wide = g.concat_cols(&[m, att])?;
    let s = g.scale(wide, T::of(0.7));
    let pooled = g.mean_rows(s)?;
    let row = p(g, r, "row");
    let b2 = g.add_row(pooled, row)?;
    let ce = g.cross_entropy(b2, 1)?;
    let ce2 = g.cross_entropy(pooled, 3)?;
    g.sum(&[ce, ce2])
}

const SINK: [(&str, usize, usize); 6] =
    [("x", 4, 3), ("w", 3, 4), ("gain", 1, 4), ("bias", 1, 4), ("table", 3, 4), ("row", 1, 6)];

#[test]
fn every_op_at_32_bit() {
    let r = registry::<f32>(5, &SINK);
    let report = grad_check(&r, kitchen_sink::<f32>, GradCheckConfig { eps: 4e-3, tol: 1e-2, floor: 5e-2, ..Default::default() })
        .unwrap();
    assert!(report.passed(), "{report}");
}

#[test]
fn forward_is_bitwise_reproducible() {
    let r = registry::<f32>(6, &SINK);
    let run = || {
        let mut g = Graph::new();
        let l = kitchen_sink(&mut g, &r).unwrap();
        let grads = g.backward(l).unwrap();
        (g.value(l).item().to_bits(), grads.params().get(r.id("w").unwrap()).unwrap().clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn non_finite_loss_is_reported() {
    let mut r = ParamRegistry::<f64>::new();
    r.insert("x", Tensor::row_vector(vec![f64::NAN, 1.0]), Init::Zeros, true).unwrap();
    let out = grad_check(
        &r,
        |g: &mut Graph<f64>, r: &ParamRegistry<f64>| -> Result<Var, DiffError> {
            let x = p(g, r, "x");
            g.cross_entropy(x, 0)
        },
        cfg(1e-6),
    );
    assert!(matches!(out, Err(DiffError::NonFinite(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_op_matches_finite_differences(seed in 0u64..10_000) {
        let r = registry::<f64>(seed, &SINK);
        let report = grad_check(&r, kitchen_sink::<f64>, cfg(1e-5)).unwrap();
        prop_assert!(report.passed(), "{}", report);
    }

    #[test]
    fn attention_rows_are_distributions(seed in 0u64..10_000, n in 1usize..5, m in 1usize..6) {
        let r = registry::<f64>(seed, &[("q", n, 3), ("k", m, 3)]);
        let mut g = Graph::new();
        let (q, k) = (p(&mut g, &r, "q"), p(&mut g, &r, "k"));
        let (_, w) = g.attention(q, k, k).unwrap();
        for i in 0..n {
            let row = g.value(w).row(i);
            prop_assert!(row.iter().all(|&x| x >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
