mod common;

use common::{gelu, M};
use proptest::prelude::*;
use skmix_core::gradcheck::{grad_check, DEFAULT_EPS};
use skmix_core::{ParamStore, Precision, Tape, Tensor, Var};

fn values(n: usize, bound: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-bound..bound, n)
}

/// Registers `a[r×c]` and `b` and checks the tape gradient of
/// `sum(w ⊙ op(a, b))` with a fixed weighting `w`.
fn check_binary(
    a: (usize, usize, Vec<f64>),
    b: (Vec<usize>, Vec<f64>),
    op: impl Fn(&mut Tape, Var, Var) -> skmix_core::Result<Var>,
) -> f64 {
    let mut store = ParamStore::new(Precision::F64);
    let ia = store.register("a", Tensor::new(&[a.0, a.1], a.2).unwrap()).unwrap();
    let ib = store.register("b", Tensor::new(&b.0, b.1).unwrap()).unwrap();
    let report = grad_check(&mut store, DEFAULT_EPS, |t| {
        let va = t.param(ia);
        let vb = t.param(ib);
        let y = op(t, va, vb)?;
        let shape = t.shape(y).to_vec();
        let n: usize = shape.iter().product();
        let w = Tensor::new(&shape, (0..n).map(|i| 0.3 + 0.1 * (i % 7) as f64).collect()).unwrap();
        let w = t.input(w)?;
        let y = t.mul(y, w)?;
        t.sum(y)
    })
    .unwrap();
    report.max_rel_error()
}

fn check_unary(r: usize, c: usize, x: Vec<f64>, op: impl Fn(&mut Tape, Var) -> skmix_core::Result<Var>) -> f64 {
    check_binary((r, c, x), (vec![1], vec![0.0]), |t, a, _| op(t, a))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matmul_gradients(x in values(6, 2.0), y in values(12, 2.0)) {
        let e = check_binary((2, 3, x), (vec![3, 4], y), |t, a, b| t.matmul(a, b));
        prop_assert!(e <= 1e-6, "{e}");
    }

    #[test]
    fn add_sub_mul_gradients(x in values(6, 2.0), y in values(6, 2.0)) {
        let e = check_binary((2, 3, x.clone()), (vec![2, 3], y.clone()), |t, a, b| t.add(a, b));
        prop_assert!(e <= 1e-6);
        let e = check_binary((2, 3, x.clone()), (vec![2, 3], y.clone()), |t, a, b| t.sub(a, b));
        prop_assert!(e <= 1e-6);
        let e = check_binary((2, 3, x), (vec![2, 3], y), |t, a, b| t.mul(a, b));
        prop_assert!(e <= 1e-6);
    }

    #[test]
    fn broadcast_gradients(x in values(6, 2.0), row in values(3, 2.0), col in values(2, 2.0)) {
        let e = check_binary((2, 3, x.clone()), (vec![1, 3], row), |t, a, b| t.add_broadcast(a, b));
        prop_assert!(e <= 1e-6);
        let e = check_binary((2, 3, x), (vec![2, 1], col), |t, a, b| t.add_broadcast(a, b));
        prop_assert!(e <= 1e-6);
    }

    #[test]
    fn gelu_gradients(x in values(6, 4.0)) {
        let e = check_unary(2, 3, x, |t, a| t.gelu(a));
        prop_assert!(e <= 1e-5, "{e}");
    }

    #[test]
    fn layer_norm_gradients(x in values(8, 3.0), g in values(4, 2.0), b in values(4, 2.0)) {
        let mut store = ParamStore::new(Precision::F64);
        let ix = store.register("x", Tensor::new(&[2, 4], x).unwrap()).unwrap();
        let ig = store.register("g", Tensor::new(&[4], g).unwrap()).unwrap();
        let ib = store.register("b", Tensor::new(&[4], b).unwrap()).unwrap();
        let report = grad_check(&mut store, DEFAULT_EPS, |t| {
            let (vx, vg, vb) = (t.param(ix), t.param(ig), t.param(ib));
            let y = t.layer_norm(vx, vg, vb, 1e-5)?;
            let w = t.input(Tensor::new(&[2, 4], vec![0.5, -1.0, 2.0, 0.1, 1.5, 0.3, -0.7, 0.9]).unwrap())?;
            let y = t.mul(y, w)?;
            t.sum(y)
        }).unwrap();
        // Rows with near-zero variance are ill-conditioned for differences.
        prop_assume!(report.params.iter().all(|p| p.analytic.is_finite()));
        for p in &report.params {
            prop_assert!(p.max_rel_error <= 1e-4 || p.max_abs_error <= 1e-8, "{p:?}");
        }
    }

    #[test]
    fn shape_op_gradients(x in values(6, 2.0), y in values(3, 2.0)) {
        let e = check_binary((2, 3, x.clone()), (vec![1, 3], y.clone()), |t, a, b| t.concat(&[a, b], 0));
        prop_assert!(e <= 1e-6);
        let e = check_unary(2, 3, x.clone(), |t, a| t.slice(a, 1, 1..3));
        prop_assert!(e <= 1e-6);
        let e = check_unary(2, 3, x.clone(), |t, a| t.transpose(a));
        prop_assert!(e <= 1e-6);
        let e = check_unary(2, 3, x.clone(), |t, a| t.mean(a, 0));
        prop_assert!(e <= 1e-6);
        let e = check_unary(2, 3, x.clone(), |t, a| t.scale(a, -1.75));
        prop_assert!(e <= 1e-6);
        let e = check_unary(2, 3, x, |t, a| t.reshape(a, &[3, 2]));
        prop_assert!(e <= 1e-6);
    }

    #[test]
    fn layer_norm_statistics(x in values(16, 50.0)) {
        let store = ParamStore::new(Precision::F64);
        let mut t = Tape::new(&store);
        let vx = t.input(Tensor::new(&[2, 8], x).unwrap()).unwrap();
        let g = t.input(Tensor::full(&[8], 1.0)).unwrap();
        let b = t.input(Tensor::zeros(&[8])).unwrap();
        let y = t.layer_norm(vx, g, b, 1e-5).unwrap();
        let inp = M::of(t.value(vx));
        let out = M::of(t.value(y));
        for i in 0..2 {
            let row_in = &inp.d[i * 8..(i + 1) * 8];
            let mu_in = row_in.iter().sum::<f64>() / 8.0;
            let var_in = row_in.iter().map(|v| (v - mu_in).powi(2)).sum::<f64>() / 8.0;
            prop_assume!(var_in > 0.1);
            let row = &out.d[i * 8..(i + 1) * 8];
            let mu = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 8.0;
            prop_assert!(mu.abs() < 1e-6, "{mu}");
            prop_assert!((var - 1.0).abs() < 1e-4, "{var}");
        }
    }

    #[test]
    fn concat_then_slice_is_identity(x in values(6, 5.0), y in values(9, 5.0)) {
        let store = ParamStore::new(Precision::F64);
        let mut t = Tape::new(&store);
        let a = t.input(Tensor::new(&[2, 3], x).unwrap()).unwrap();
        let b = t.input(Tensor::new(&[3, 3], y).unwrap()).unwrap();
        let c = t.concat(&[a, b], 0).unwrap();
        let a2 = t.slice(c, 0, 0..2).unwrap();
        let b2 = t.slice(c, 0, 2..5).unwrap();
        prop_assert_eq!(t.value(a2), t.value(a));
        prop_assert_eq!(t.value(b2), t.value(b));
        let d = t.concat(&[a, a], 1).unwrap();
        let a3 = t.slice(d, 1, 3..6).unwrap();
        prop_assert_eq!(t.value(a3), t.value(a));
    }

    #[test]
    fn outputs_stay_finite_for_bounded_inputs(x in values(12, 1e3)) {
        let store = ParamStore::new(Precision::F64);
        let mut t = Tape::new(&store);
        let a = t.input(Tensor::new(&[3, 4], x.clone()).unwrap()).unwrap();
        let b = t.input(Tensor::new(&[4, 3], x).unwrap()).unwrap();
        let g = t.input(Tensor::full(&[4], 1.0)).unwrap();
        let z = t.input(Tensor::zeros(&[4])).unwrap();
        let ops = [
            t.matmul(a, b).unwrap(),
            t.gelu(a).unwrap(),
            t.layer_norm(a, g, z, 1e-5).unwrap(),
            t.mean(a, 1).unwrap(),
        ];
        for v in ops {
            prop_assert!(t.value(v).all_finite());
        }
        let gl = t.gelu(a).unwrap();
        let s = t.sum(gl).unwrap();
        let mut t2 = t;
        prop_assert!(t2.backward(s).is_ok());
    }

    #[test]
    fn gelu_matches_erf_form(x in -8.0f64..8.0) {
        prop_assert!((skmix_core::tape::gelu_scalar(x) - gelu(x)).abs() <= 1e-15);
    }
}

#[test]
fn matmul_against_oracle() {
    let a: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
    let b: Vec<f64> = (0..20).map(|i| (i as f64 * 0.91).cos()).collect();
    let store = ParamStore::new(Precision::F64);
    let mut t = Tape::new(&store);
    let va = t.input(Tensor::new(&[3, 4], a.clone()).unwrap()).unwrap();
    let vb = t.input(Tensor::new(&[4, 5], b.clone()).unwrap()).unwrap();
    let y = t.matmul(va, vb).unwrap();
    let want = M::new(3, 4, a).matmul(&M::new(4, 5, b));
    for (g, w) in t.value(y).data().iter().zip(&want.d) {
        assert!((g - w).abs() / w.abs().max(1e-300) < 1e-6);
    }
    assert_eq!(t.macs(), 60);
}

#[test]
fn second_backward_is_rejected() {
    let store = ParamStore::new(Precision::F64);
    let mut t = Tape::new(&store);
    let a = t.input(Tensor::scalar(2.0)).unwrap();
    let s = t.sum(a).unwrap();
    t.backward(s).unwrap();
    assert!(matches!(t.backward(s), Err(skmix_core::Error::TapeConsumed)));
}

#[test]
fn non_finite_inputs_are_rejected() {
    let store = ParamStore::new(Precision::F64);
    let mut t = Tape::new(&store);
    assert!(t.input(Tensor::scalar(f64::NAN)).is_err());
    let big = t.input(Tensor::scalar(1e200)).unwrap();
    assert!(t.mul(big, big).is_err());
}

#[test]
fn f32_tape_rounds_results() {
    let store = ParamStore::new(Precision::F32);
    let mut t = Tape::new(&store);
    let a = t.input(Tensor::scalar(0.1)).unwrap();
    let b = t.input(Tensor::scalar(0.2)).unwrap();
    let c = t.add(a, b).unwrap();
    let v = t.value(c).data()[0];
    assert_eq!(v, (v as f32) as f64);
}
