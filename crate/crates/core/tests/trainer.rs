mod common;

use adsr_core::checkpoint::Checkpoint;
use adsr_core::datasets::Split;
use adsr_core::encoder::HeadKind;
use adsr_core::model::{Model, Variant};
use adsr_core::trainer::*;
use adsr_core::AdsrError;
use common::fixtures;
use ndtensor::{Graph, Mode, ParamId, RngState, Tensor};
use proptest::prelude::*;

fn small_cfg(variant: Variant, epochs: usize) -> TrainingConfig {
    TrainingConfig {
        variant,
        d_v: 8,
        d_c: 8,
        d_gru: 8,
        d_ap: 16,
        batch_size: 256,
        epochs,
        pool_size: 20,
        ..TrainingConfig::default()
    }
}

fn same_params(a: &Model, b: &Model) -> bool {
    a.store.iter().zip(b.store.iter()).all(|((_, p), (_, q))| {
        p.name == q.name && p.value.data().iter().zip(q.value.data()).all(|(x, y)| x.to_bits() == y.to_bits())
    })
}

#[test]
fn uniform_predictions_give_log_catalogue_size() {
    let probs = vec![vec![1.0 / 7.0; 7]; 3];
    assert!((loss_ae(&probs, &[0, 3, 6], LossScale::Standard) - 7f64.ln()).abs() < 1e-12);
    assert!((loss_ae(&probs, &[0, 3, 6], LossScale::Paper) - 7f64.ln() / 7.0).abs() < 1e-12);
    let raw = vec![vec![0.5; 4]; 2];
    let y = vec![vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 1.0, 0.0, 0.0]];
    assert!((loss_ap(&raw, &y) - 2f64.ln()).abs() < 1e-12);
    assert_eq!(loss_total(2.0, 4.0, 0.25), 3.5);
}

proptest! {
    #[test]
    fn graph_losses_match_plain_loops(
        logits in prop::collection::vec(-3.0f64..3.0, 15),
        raw in prop::collection::vec(0.01f64..0.99, 6),
        bits in prop::collection::vec(any::<bool>(), 6),
        t in prop::collection::vec(0usize..5, 3),
        lambda in 0.0f64..=1.0,
    ) {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![3, 5], logits).unwrap());
        let s = g.softmax(x, 1).unwrap();
        let probs: Vec<Vec<f64>> = (0..3).map(|r| g.value(s).row(r).to_vec()).collect();
        let y: Vec<f64> = bits.iter().map(|&b| b as u8 as f64).collect();
        let raw_node = g.input(Tensor::new(vec![3, 2], raw.clone()).unwrap());
        let ap = ap_loss_node(&mut g, raw_node, &Tensor::new(vec![3, 2], y.clone()).unwrap()).unwrap();
        let raw_rows: Vec<Vec<f64>> = raw.chunks(2).map(<[f64]>::to_vec).collect();
        let y_rows: Vec<Vec<f64>> = y.chunks(2).map(<[f64]>::to_vec).collect();
        for scale in [LossScale::Standard, LossScale::Paper] {
            let ae = ae_loss_node(&mut g, s, &t, scale).unwrap();
            prop_assert!((g.value(ae).data()[0] - loss_ae(&probs, &t, scale)).abs() < 1e-12);
            let total = total_loss_node(&mut g, ae, Some(ap), lambda).unwrap();
            let want = loss_total(loss_ae(&probs, &t, scale), loss_ap(&raw_rows, &y_rows), lambda);
            prop_assert!((g.value(total).data()[0] - want).abs() < 1e-12);
        }
    }
}

fn toy_grads(head: HeadKind, lambda_mt: f64) -> (Model, ndtensor::Gradients) {
    let model = fixtures::toy_model(Variant::Adsr, head);
    let mut g = Graph::new();
    let nodes = batch_loss(&model, &mut g, &fixtures::toy_batch(), lambda_mt, LossScale::Standard, Mode::Train, &mut RngState::new(0)).unwrap();
    let grads = g.backward(nodes.total).unwrap();
    (model, grads)
}

fn grad_of(model: &Model, grads: &ndtensor::Gradients, id: ParamId) -> Vec<f64> {
    grads.param(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; model.store.value(id).len()])
}

#[test]
fn total_gradient_is_the_weighted_sum_of_task_gradients() {
    let lambda = 0.3;
    let (model, mixed) = toy_grads(HeadKind::Eq4Concat, lambda);
    let (_, ae) = toy_grads(HeadKind::Eq4Concat, 1.0);
    let (_, ap) = toy_grads(HeadKind::Eq4Concat, 0.0);
    for id in model.store.ids() {
        let (m, a, p) = (grad_of(&model, &mixed, id), grad_of(&model, &ae, id), grad_of(&model, &ap, id));
        for k in 0..m.len() {
            let want = lambda * a[k] + (1.0 - lambda) * p[k];
            assert!((m[k] - want).abs() <= 1e-12 * (1.0 + want.abs()), "{} {k}", model.store.name(id));
        }
    }
}

#[test]
fn item_loss_alone_leaves_the_predictor_untouched_with_the_bilinear_head() {
    let (model, grads) = toy_grads(HeadKind::BilinearFc, 1.0);
    let ap = model.params.ap.unwrap();
    for id in [ap.w_h, ap.b_h, ap.bn_gamma, ap.bn_beta, ap.w_out, ap.b_out] {
        assert!(grad_of(&model, &grads, id).iter().all(|&x| x == 0.0), "{}", model.store.name(id));
    }
    // with the concatenation head the predictor feeds the relevance scores through ĉ
    let (model, grads) = toy_grads(HeadKind::Eq4Concat, 1.0);
    let w_out = model.params.ap.unwrap().w_out;
    assert!(grad_of(&model, &grads, w_out).iter().any(|&x| x != 0.0));
}

#[test]
fn training_loss_decreases_for_every_variant() {
    let ds = fixtures::small_planted_dataset();
    for variant in Variant::ALL {
        let r = train(&small_cfg(variant, 3), &ds, None, false).unwrap();
        let losses: Vec<f64> = r.history[1..].iter().map(|h| h.loss.unwrap()).collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{variant}: {losses:?}");
        assert_eq!(r.history[0].epoch, 0);
        assert!(r.history[0].loss.is_none());
        assert!(r.best_epoch >= 1);
        assert_eq!(r.history[3].loss_ap.is_some(), variant.has_ap());
    }
}

#[test]
fn planted_validation_mrr_at_least_doubles() {
    let ds = fixtures::planted_dataset();
    let cfg = TrainingConfig { d_v: 16, d_c: 16, d_gru: 16, d_ap: 32, batch_size: 256, epochs: 5, ..TrainingConfig::default() };
    let r = train(&cfg, &ds, None, false).unwrap();
    let start = r.history[0].val_mrr20.unwrap();
    let best = r.history.iter().filter_map(|h| h.val_mrr20).fold(0.0, f64::max);
    assert!(best >= 2.0 * start, "{start} -> {best}");
}

#[test]
fn training_is_deterministic_and_shared_by_mtasr_and_adsr() {
    let ds = fixtures::small_planted_dataset();
    let a = train(&small_cfg(Variant::Adsr, 2), &ds, None, false).unwrap();
    let b = train(&small_cfg(Variant::Adsr, 2), &ds, None, false).unwrap();
    let m = train(&small_cfg(Variant::Mtasr, 2), &ds, None, false).unwrap();
    assert!(same_params(&a.best, &b.best));
    assert_eq!(a.history, b.history);
    assert!(same_params(&a.best, &m.best));
    assert_eq!(a.history, m.history);

    // at λ_s = 1 the decoder reproduces the relevance ranking
    let cfg = small_cfg(Variant::Adsr, 2);
    let plain = evaluate(&a.best, &ds, Split::Test, &cfg.eval_options(Reranker::None)).unwrap();
    let add = evaluate(&a.best, &ds, Split::Test, &EvalOptions { lambda_s: 1.0, ..cfg.eval_options(Reranker::Add) }).unwrap();
    assert_eq!(plain, add);
}

#[test]
fn add_needs_an_attribute_predictor() {
    let ds = fixtures::small_planted_dataset();
    let cfg = small_cfg(Variant::Anam, 0);
    let r = train(&cfg, &ds, None, false).unwrap();
    assert!(matches!(evaluate(&r.best, &ds, Split::Test, &cfg.eval_options(Reranker::Add)), Err(AdsrError::Contract(_))));
    assert!(evaluate(&r.best, &ds, Split::Test, &cfg.eval_options(Reranker::Mmr)).is_ok());
}

#[test]
fn checkpoint_round_trip_reproduces_evaluation() {
    let ds = fixtures::small_planted_dataset();
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_cfg(Variant::Adsr, 2);
    let r = train(&cfg, &ds, Some(dir.path()), false).unwrap();
    let ck = Checkpoint::load(&dir.path().join(BEST_CHECKPOINT)).unwrap();
    assert!(same_params(&ck.model, &r.best));
    assert_eq!(ck.config_hash, cfg.config_hash());
    let opts = cfg.eval_options(Reranker::Add);
    assert_eq!(evaluate(&ck.model, &ds, Split::Test, &opts).unwrap(), evaluate(&r.best, &ds, Split::Test, &opts).unwrap());
    let log = std::fs::read_to_string(dir.path().join(TRAIN_LOG_CSV)).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert!(log.lines().nth(1).unwrap().ends_with(&cfg.config_hash()));
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let ds = fixtures::small_planted_dataset();
    let dir = tempfile::tempdir().unwrap();
    train(&small_cfg(Variant::Mtasr, 1), &ds, Some(dir.path()), false).unwrap();
    let resumed = train(&small_cfg(Variant::Mtasr, 3), &ds, Some(dir.path()), true).unwrap();
    let straight = train(&small_cfg(Variant::Mtasr, 3), &ds, None, false).unwrap();
    assert!(same_params(&resumed.last, &straight.last));
    assert_eq!(resumed.history, straight.history);

    let other = TrainingConfig { learning_rate: 0.02, ..small_cfg(Variant::Mtasr, 4) };
    assert!(matches!(train(&other, &ds, Some(dir.path()), true), Err(AdsrError::Config(_))));
}

#[test]
fn config_validation() {
    let bad = TrainingConfig { lambda_mt: 1.5, ..TrainingConfig::default() };
    assert!(matches!(bad.validate(), Err(AdsrError::Config(_))));
    let bad = TrainingConfig { pool_size: 10, ..TrainingConfig::default() };
    assert!(bad.validate().is_err());
    assert_ne!(TrainingConfig::default().config_hash(), small_cfg(Variant::Adsr, 1).config_hash());
}
