mod common;

use common::{block, max_abs_diff, randomize, M};
use proptest::prelude::*;
use skmix_core::gradcheck::{grad_check, DEFAULT_EPS};
use skmix_core::init::Init;
use skmix_core::{MixerBlock, MixerStack, ParamStore, Precision, Tape, Tensor};

fn build_block(s: usize, c: usize, seed: u64) -> (ParamStore, MixerBlock) {
    let mut store = ParamStore::new(Precision::F64);
    let mut init = Init::new(seed);
    let b = MixerBlock::build(&mut store, &mut init, "blk", s, c, s.max(4), 4 * c).unwrap();
    (store, b)
}

fn run_block(store: &ParamStore, b: &MixerBlock, x: &Tensor) -> Tensor {
    let mut t = Tape::new(store);
    let v = t.input(x.clone()).unwrap();
    let y = b.forward(&mut t, v).unwrap();
    t.value(y).clone()
}

fn zero_second_layers(store: &mut ParamStore, b: &MixerBlock) {
    for id in b.second_layers() {
        store.value_mut(id).data_mut().fill(0.0);
    }
}

fn matrix(r: usize, c: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, r * c).prop_map(move |d| Tensor::new(&[r, c], d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn zeroed_second_layers_give_identity(x in matrix(5, 6), seed in 0u64..1000) {
        let (mut store, b) = build_block(5, 6, seed);
        randomize(&mut store, seed, 0.5);
        zero_second_layers(&mut store, &b);
        // Second-layer biases stay nonzero after randomizing; identity needs them zero too.
        store.value_mut(b.token_fc2.bias).data_mut().fill(0.0);
        store.value_mut(b.channel_fc2.bias).data_mut().fill(0.0);
        prop_assert_eq!(run_block(&store, &b, &x), x);
    }

    #[test]
    fn channel_mixing_commutes_with_row_permutation(x in matrix(4, 3), seed in 0u64..1000, perm in Just(vec![2usize, 0, 3, 1]).prop_shuffle()) {
        let (mut store, b) = build_block(4, 3, seed);
        randomize(&mut store, seed, 0.5);
        store.value_mut(b.token_fc2.weight).data_mut().fill(0.0);
        store.value_mut(b.token_fc2.bias).data_mut().fill(0.0);
        let px = Tensor::new(&[4, 3], perm.iter().flat_map(|&i| x.row(i).to_vec()).collect()).unwrap();
        let y = run_block(&store, &b, &x);
        let py = run_block(&store, &b, &px);
        for (r, &i) in perm.iter().enumerate() {
            prop_assert_eq!(py.row(r), y.row(i));
        }
    }

    #[test]
    fn block_matches_reference(x in matrix(3, 4), seed in 0u64..1000) {
        let (mut store, b) = build_block(3, 4, seed);
        randomize(&mut store, seed, 0.5);
        let got = run_block(&store, &b, &x);
        let want = block(&store, &b, &M::of(&x));
        prop_assert!(max_abs_diff(got.data(), &want.d) <= 1e-12);
    }
}

#[test]
fn seed_42_block_matches_reference_composition() {
    let (store, b) = build_block(2, 3, 42);
    let x = Tensor::from_rows(&[&[0.5, -1.0, 2.0], &[1.5, 0.25, -0.75]]).unwrap();
    let got = run_block(&store, &b, &x);
    let want = block(&store, &b, &M::of(&x));
    assert!(max_abs_diff(got.data(), &want.d) <= 1e-12, "{got:?} vs {want:?}");
}

#[test]
fn prefix_uses_leading_weights() {
    let (mut store, b) = build_block(5, 4, 7);
    randomize(&mut store, 7, 0.5);
    let x = common::random_matrix(3, 3, 4, 1.0);
    let mut t = Tape::new(&store);
    let v = t.input(x.clone()).unwrap();
    let y = b.forward_prefix(&mut t, v).unwrap();
    let want = block(&store, &b, &M::of(&x));
    assert!(max_abs_diff(t.value(y).data(), &want.d) <= 1e-12);
    let too_long = t.input(Tensor::zeros(&[6, 4])).unwrap();
    assert!(b.forward_prefix(&mut t, too_long).is_err());
    let wrong = t.input(Tensor::zeros(&[3, 4])).unwrap();
    assert!(b.forward(&mut t, wrong).is_err());
}

#[test]
fn depth_two_is_two_blocks() {
    let mut store = ParamStore::new(Precision::F64);
    let mut init = Init::new(11);
    let stack = MixerStack::build(&mut store, &mut init, "s", 2, 3, 4, 4, 16).unwrap();
    randomize(&mut store, 11, 0.5);
    let x = common::random_matrix(5, 3, 4, 1.0);
    let mut t = Tape::new(&store);
    let v = t.input(x.clone()).unwrap();
    let y = stack.forward(&mut t, v).unwrap();
    let y = t.value(y).clone();
    let mut t = Tape::new(&store);
    let v = t.input(x).unwrap();
    let h = stack.blocks[0].forward(&mut t, v).unwrap();
    let h = stack.blocks[1].forward(&mut t, h).unwrap();
    assert_eq!(&y, t.value(h));
}

#[test]
fn depth_zero_and_zeroed_depth_two_are_identity() {
    let mut store = ParamStore::new(Precision::F64);
    let mut init = Init::new(3);
    let empty = MixerStack::build(&mut store, &mut init, "e", 0, 3, 4, 4, 16).unwrap();
    let stack = MixerStack::build(&mut store, &mut init, "s", 2, 3, 4, 4, 16).unwrap();
    for id in stack.second_layers().collect::<Vec<_>>() {
        store.value_mut(id).data_mut().fill(0.0);
    }
    let x = common::random_matrix(9, 3, 4, 2.0);
    let mut t = Tape::new(&store);
    let v = t.input(x.clone()).unwrap();
    let a = empty.forward(&mut t, v).unwrap();
    let b = stack.forward(&mut t, v).unwrap();
    assert_eq!(t.value(a), &x);
    assert_eq!(t.value(b), &x);
}

#[test]
fn block_gradients_match_finite_differences() {
    let (mut store, b) = build_block(3, 4, 5);
    randomize(&mut store, 5, 0.5);
    let x = common::random_matrix(6, 3, 4, 1.0);
    let w = common::random_matrix(8, 3, 4, 1.0);
    let report = grad_check(&mut store, DEFAULT_EPS, |t| {
        let v = t.input(x.clone())?;
        let y = b.forward(t, v)?;
        let w = t.input(w.clone())?;
        let y = t.mul(y, w)?;
        t.sum(y)
    })
    .unwrap();
    assert!(report.passes(1e-4), "{:?}", report.worst());
}

#[test]
fn macs_follow_the_block_shape() {
    let (store, b) = build_block(3, 4, 1);
    let x = Tensor::zeros(&[3, 4]);
    let mut t = Tape::new(&store);
    let v = t.input(x).unwrap();
    b.forward(&mut t, v).unwrap();
    assert_eq!(t.macs(), b.macs(3));
    assert_eq!(b.macs(3), 2 * 4 * 3 * 4 + 2 * 3 * 4 * 16);
}
