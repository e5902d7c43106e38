mod common;

use common::{random_matrix, rng, toy_embedding_config, toy_embedding_data};
use otf_adapt::nn::{cross_entropy, mse, Matrix};
use otf_adapt::svr::{mtl_loss, speaker_average, train_lower, train_upper, MtlWeights, SpeakerTable, EMBEDDING_DIM};
use proptest::prelude::*;
use rand::Rng;

fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..m.rows() {
        let row = out.row_mut(r);
        let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v = (*v - top).exp());
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

fn table_of(seed: u64) -> SpeakerTable {
    let mut r = rng(seed);
    let mut t = SpeakerTable::default();
    for s in ["a0", "a1", "b0", "b1"] {
        t.insert(s, (0..EMBEDDING_DIM).map(|_| r.gen_range(-3.0..3.0)).collect(), 5);
    }
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn total_is_the_weighted_sum_of_terms(
        seed in any::<u64>(),
        w in (0.0f64..2.0, 0.0f64..2.0, 0.0f64..2.0).prop_filter("one positive", |w| w.0 + w.1 + w.2 > 0.0),
        rows in 1usize..12,
    ) {
        let mut r = rng(seed);
        let b = random_matrix(&mut r, rows, 5, 2.0);
        let t = random_matrix(&mut r, rows, 5, 2.0);
        let gp = softmax_rows(&random_matrix(&mut r, rows, 3, 2.0));
        let ip = softmax_rows(&random_matrix(&mut r, rows, 4, 2.0));
        let gl: Vec<usize> = (0..rows).map(|_| r.gen_range(0..3)).collect();
        let il: Vec<usize> = (0..rows).map(|_| r.gen_range(0..4)).collect();
        let weights = MtlWeights::new(w.0, w.1, w.2).unwrap();
        let l = mtl_loss(&b, &t, &gp, &gl, Some((&ip, &il)), &weights).unwrap();
        let m = mse(&b, &t).unwrap().0;
        let g = cross_entropy(&gp, &gl).unwrap().0;
        let i = cross_entropy(&ip, &il).unwrap().0;
        prop_assert_eq!(l.mse, m);
        prop_assert_eq!(l.ce_group, g);
        prop_assert_eq!(l.ce_id, i);
        prop_assert_eq!(l.total, w.0 * m + w.1 * g + w.2 * i);
    }
}

#[test]
fn id_term_requires_a_head_unless_weight_is_zero() {
    let mut r = rng(1);
    let b = random_matrix(&mut r, 3, 2, 1.0);
    let gp = softmax_rows(&random_matrix(&mut r, 3, 2, 1.0));
    let labels = [0, 1, 0];
    assert!(mtl_loss(&b, &b, &gp, &labels, None, &MtlWeights::THREE_WAY).is_err());
    let l = mtl_loss(&b, &b, &gp, &labels, None, &MtlWeights::TWO_WAY).unwrap();
    assert_eq!(l.mse, 0.0);
    assert_eq!(l.total, 0.5 * l.ce_group);
}

#[test]
fn weights_are_validated() {
    assert!(MtlWeights::new(0.0, 0.0, 0.0).is_err());
    assert!(MtlWeights::new(-0.1, 1.0, 0.0).is_err());
    assert!(MtlWeights::new(f64::NAN, 1.0, 0.0).is_err());
    assert!(MtlWeights::THREE_WAY.validate().is_ok());
    assert!(MtlWeights::TWO_WAY.validate().is_ok());
    let s = MtlWeights::THREE_WAY;
    assert!((s.w_mse + s.w_ce_group + s.w_ce_id - 1.0).abs() < 1e-15);
}

#[test]
fn zero_mse_weight_makes_training_independent_of_the_table() {
    let data = toy_embedding_data(3, 12, 6);
    let cfg = toy_embedding_config(3);
    let w = MtlWeights::new(0.0, 0.5, 0.5).unwrap();
    let (a, ta) = train_lower(&data, &table_of(1), &w, &cfg, 9).unwrap();
    let (b, tb) = train_lower(&data, &table_of(2), &w, &cfg, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    // With a positive MSE weight the table matters.
    let w = MtlWeights::THREE_WAY;
    let (a, _) = train_lower(&data, &table_of(1), &w, &cfg, 9).unwrap();
    let (b, _) = train_lower(&data, &table_of(2), &w, &cfg, 9).unwrap();
    assert_ne!(a, b);
}

fn upper_table(data: &otf_adapt::svr::EmbeddingData, with_id: bool) -> SpeakerTable {
    let (upper, trace) = train_upper(data, with_id, &toy_embedding_config(10), 4).unwrap();
    assert!(trace.iter().all(|l| l.is_finite()));
    let emb = upper.embed(&data.inputs).unwrap();
    let names: Vec<&str> = data.speakers.iter().map(|&s| data.speaker_names[s].as_str()).collect();
    speaker_average(names.iter().copied().zip(emb.iter_rows())).unwrap()
}

#[test]
fn three_way_weights_train_end_to_end() {
    let data = toy_embedding_data(5, 12, 10);
    let table = upper_table(&data, true);
    let (net, trace) = train_lower(&data, &table, &MtlWeights::THREE_WAY, &toy_embedding_config(15), 6).unwrap();
    assert!(net.id_head.is_some());
    assert!(trace.iter().all(|l| l.is_finite()));
    assert!(trace.last().unwrap() < &trace[0], "{trace:?}");
    assert_eq!(net.embed(&data.inputs).unwrap().cols(), EMBEDDING_DIM);
}

#[test]
fn two_way_weights_train_without_a_speaker_head() {
    let data = toy_embedding_data(6, 12, 10);
    let table = upper_table(&data, false);
    let (net, trace) = train_lower(&data, &table, &MtlWeights::TWO_WAY, &toy_embedding_config(15), 6).unwrap();
    assert!(net.id_head.is_none());
    assert!(trace.iter().all(|l| l.is_finite()));
    assert!(trace.last().unwrap() < &trace[0], "{trace:?}");
}

#[test]
fn missing_speaker_in_table_is_a_data_error() {
    let data = toy_embedding_data(7, 8, 3);
    let mut t = SpeakerTable::default();
    t.insert("a0", vec![0.0; EMBEDDING_DIM], 1);
    let e = train_lower(&data, &t, &MtlWeights::THREE_WAY, &toy_embedding_config(1), 0).unwrap_err();
    assert!(matches!(e, otf_adapt::Error::Data(_)));
}
