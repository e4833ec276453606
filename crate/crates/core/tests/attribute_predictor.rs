mod common;

use adsr_core::attribute_predictor::*;
use adsr_core::encoder::HeadKind;
use adsr_core::model::Variant;
use adsr_core::AdsrError;
use common::fixtures;
use ndtensor::{Graph, Mode, ParamStore, Precision, RngState, Tensor};
use proptest::prelude::*;

fn ap(store: &mut ParamStore, seed: u64) -> ApParams {
    ApParams::register(store, 6, 5, 4, &mut RngState::new(seed)).unwrap()
}

fn inputs(g: &mut Graph, rows: usize, data: &[f64]) -> (ndtensor::NodeId, ndtensor::NodeId) {
    let f_v = g.input(Tensor::new(vec![rows, 3], data[..rows * 3].to_vec()).unwrap());
    let f_c = g.input(Tensor::new(vec![rows, 3], data[rows * 3..rows * 6].to_vec()).unwrap());
    (f_v, f_c)
}

#[test]
fn zero_weights_give_one_half() {
    let mut store = ParamStore::new(Precision::F64);
    let p = ap(&mut store, 1);
    for id in [p.w_h, p.b_h, p.w_out, p.b_out] {
        store.value_mut(id).data_mut().fill(0.0);
    }
    for mode in [Mode::Train, Mode::Eval] {
        let mut g = Graph::new();
        let (f_v, f_c) = inputs(&mut g, 2, &[0.3, -1.0, 2.0, 0.1, 0.2, 0.3, 1.0, 1.0, -1.0, 0.5, 0.5, 0.0]);
        let out = p.predict(&mut g, &store, f_v, f_c, mode, ApNormalization::Sum).unwrap();
        assert!(g.value(out.raw).data().iter().all(|&v| v == 0.5));
        assert!(g.value(out.normalized).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }
}

#[test]
fn single_row_batch_fails_in_train_mode() {
    let mut store = ParamStore::new(Precision::F64);
    let p = ap(&mut store, 2);
    let mut g = Graph::new();
    let (f_v, f_c) = inputs(&mut g, 1, &[0.1; 6]);
    assert!(p.predict(&mut g, &store, f_v, f_c, Mode::Train, ApNormalization::Sum).is_err());
    assert!(p.predict(&mut g, &store, f_v, f_c, Mode::Eval, ApNormalization::Sum).is_ok());
}

#[test]
fn weighted_embedding_examples() {
    let rows: [&[f64]; 3] = [&[1.0, 0.0], &[2.0, -2.0], &[0.0, 4.0]];
    let mut g = Graph::new();
    let table = g.input(Tensor::from_rows(&rows));
    let one_hot = g.input(Tensor::new(vec![1, 3], vec![0.0, 1.0, 0.0]).unwrap());
    let c = weighted_attribute_embedding(&mut g, one_hot, table).unwrap();
    assert_eq!(g.value(c).data(), &[2.0, -2.0]);
    let uniform = g.input(Tensor::full(&[1, 3], 1.0 / 3.0));
    let c = weighted_attribute_embedding(&mut g, uniform, table).unwrap();
    assert!((g.value(c).data()[0] - 1.0).abs() < 1e-12);
    assert!((g.value(c).data()[1] - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn weighted_embedding_passes_gradient_to_both_inputs() {
    let mut g = Graph::new();
    let table = g.input(Tensor::from_rows(&[&[1.0, 0.5], &[-2.0, 1.0], &[0.3, 4.0]]));
    let pref = g.input(Tensor::new(vec![1, 3], vec![0.2, 0.5, 0.3]).unwrap());
    let c = weighted_attribute_embedding(&mut g, pref, table).unwrap();
    let loss = g.sum(c);
    let grads = g.backward(loss).unwrap();
    assert!(grads.wrt(pref).unwrap().iter().all(|&x| x != 0.0));
    assert!(grads.wrt(table).unwrap().iter().all(|&x| x != 0.0));
}

#[test]
fn gradients_reach_the_predictor_and_attribute_table() {
    let model = fixtures::toy_model(Variant::Adsr, HeadKind::Eq4Concat);
    let mut g = Graph::new();
    let nodes = adsr_core::trainer::batch_loss(
        &model,
        &mut g,
        &fixtures::toy_batch(),
        0.9,
        adsr_core::trainer::LossScale::Standard,
        Mode::Train,
        &mut RngState::new(0),
    )
    .unwrap();
    let grads = g.backward(nodes.total).unwrap();
    let ap = model.params.ap.unwrap();
    for id in [ap.w_h, ap.w_out, ap.b_out, model.params.attr_embedding.unwrap()] {
        assert!(grads.param(id).unwrap().iter().any(|&x| x != 0.0), "{}", model.store.name(id));
    }
}

#[test]
fn preference_from_raw_scores() {
    let p = AttributePreference::from_raw(vec![0.2, 0.6, 0.2]).unwrap();
    assert!((p.normalized[1] - 0.6).abs() < 1e-15);
    assert_eq!(p.top_attribute(), 1);
    assert_eq!(AttributePreference::from_raw(vec![0.4, 0.4]).unwrap().top_attribute(), 0);
    assert!(matches!(AttributePreference::from_raw(vec![0.0, 0.0]), Err(AdsrError::Contract(_))));
    assert!(matches!(AttributePreference::from_raw(vec![]), Err(AdsrError::Contract(_))));
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

proptest! {
    #[test]
    fn outputs_are_probabilities_with_a_shared_argmax(
        data in prop::collection::vec(-3.0f64..3.0, 18),
        seed in 0u64..500,
    ) {
        let mut store = ParamStore::new(Precision::F64);
        let p = ap(&mut store, seed);
        let mut g = Graph::new();
        let (f_v, f_c) = inputs(&mut g, 3, &data);
        for norm in [ApNormalization::Sum, ApNormalization::Softmax] {
            let out = p.predict(&mut g, &store, f_v, f_c, Mode::Train, norm).unwrap();
            let (raw, normalized) = (g.value(out.raw).clone(), g.value(out.normalized).clone());
            for r in 0..3 {
                prop_assert!(raw.row(r).iter().all(|&v| v > 0.0 && v < 1.0));
                prop_assert!((normalized.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert_eq!(argmax(raw.row(r)), argmax(normalized.row(r)));
            }
        }
    }

    #[test]
    fn weighted_embedding_stays_in_the_hull(w in prop::collection::vec(0.01f64..1.0, 4), t in prop::collection::vec(-2.0f64..2.0, 8)) {
        let total: f64 = w.iter().sum();
        let mut g = Graph::new();
        let pref = g.input(Tensor::new(vec![1, 4], w.iter().map(|x| x / total).collect()).unwrap());
        let table = g.input(Tensor::new(vec![4, 2], t.clone()).unwrap());
        let c = weighted_attribute_embedding(&mut g, pref, table).unwrap();
        for col in 0..2 {
            let lo = (0..4).map(|r| t[r * 2 + col]).fold(f64::INFINITY, f64::min);
            let hi = (0..4).map(|r| t[r * 2 + col]).fold(f64::NEG_INFINITY, f64::max);
            let v = g.value(c).data()[col];
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}
