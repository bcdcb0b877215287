mod common;

use common::checks::random_set;
use engagekit::models::{predict_table, train_gbdt, GbdtConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn training_loss_never_rises() {
    common::checks::gbdt_loss_monotone(20).unwrap();
}

#[test]
fn xor_is_fit_exactly() {
    common::checks::gbdt_xor(50).unwrap();
}

#[test]
fn depth_zero_leaf_is_the_newton_step() {
    common::checks::gbdt_newton_leaf(100, 1e-9).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn predictions_survive_monotone_feature_transforms(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = random_set(&mut rng, 150, 3);
        let (xt, _) = random_set(&mut rng, 40, 3);
        let f = |r: &Vec<f64>| vec![r[0].powi(3) + 2.0 * r[0], (r[1] * 2.0).exp(), 5.0 - 0.5 * -r[2]];
        let mut cfg = GbdtConfig { n_trees: 15, seed, ..GbdtConfig::default() };
        cfg.bagging.n_bags = 2;
        let m1 = train_gbdt(&common::table_from(&x, &y), &cfg).unwrap();
        let tx: Vec<Vec<f64>> = x.iter().map(f).collect();
        let m2 = train_gbdt(&common::table_from(&tx, &y), &cfg).unwrap();
        let p1 = predict_table(&m1, &common::table_from(&xt, &[0; 40])).unwrap();
        let ttx: Vec<Vec<f64>> = xt.iter().map(f).collect();
        let p2 = predict_table(&m2, &common::table_from(&ttx, &[0; 40])).unwrap();
        prop_assert_eq!(p1, p2);
    }
}
