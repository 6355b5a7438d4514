use std::f64::consts::FRAC_PI_4;

use dcmz::masking::{DriveSequence, MaskSet};
use dcmz::twin::correlation;
use dcmz::{dde_oracle, fast_model, SystemParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(n_mask: usize, beta: f64) -> SystemParams {
    SystemParams::new(0.241, beta, 0.241 * 0.4 * n_mask as f64, FRAC_PI_4, n_mask).unwrap()
}

fn random_drive(n_mask: usize, periods: usize, seed: u64) -> DriveSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = (0..n_mask * periods).map(|_| rng.gen_range(-3.0..3.0)).collect();
    DriveSequence::from_phases(n_mask, z).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn states_stay_within_half_gain(seed in 0u64..1000, beta in -2.0f64..2.0, n_mask in 2usize..20) {
        let params = small(n_mask, beta);
        let trace = fast_model::forward(&random_drive(n_mask, 6, seed), &params, None).unwrap();
        let bound = beta.abs() / 2.0 + 1e-12;
        prop_assert!(trace.a_bar.iter().all(|a| a.abs() <= bound));
    }

    #[test]
    fn leading_rest_periods_only_delay_the_response(seed in 0u64..1000, lead in 1usize..4) {
        let n = 10;
        let params = small(n, 0.8);
        let drive = random_drive(n, 5, seed);
        let mut z = vec![0.0; lead * n];
        z.extend_from_slice(&drive.z);
        let shifted = DriveSequence::from_phases(n, z).unwrap();
        let a = fast_model::forward(&drive, &params, None).unwrap();
        let b = fast_model::forward(&shifted, &params, None).unwrap();
        for (x, y) in a.a_bar.iter().zip(&b.a_bar[lead * n..]) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn oracle_states_are_bounded_and_track_the_fast_model() {
    let params = small(20, 0.8);
    let drive = random_drive(20, 8, 4);
    let fast = fast_model::forward(&drive, &params, None).unwrap();
    let trace = dde_oracle::integrate(&drive, &params, params.step_len() / 40.0, &|_| 0.0).unwrap();
    assert!(trace.a.iter().all(|a| a.abs() <= 0.4 + 1e-12));
    let oracle = dde_oracle::averaged(&trace, params.step_len()).unwrap();
    assert!(correlation(&fast.a_bar, &oracle) > 0.99);
}

#[test]
fn oracle_error_shrinks_at_high_order() {
    let params = small(8, 0.8);
    let drive = random_drive(8, 4, 9);
    let at = |k: f64| {
        let t = dde_oracle::integrate(&drive, &params, params.step_len() / k, &|_| 0.0).unwrap();
        dde_oracle::averaged(&t, params.step_len()).unwrap()
    };
    let (c, m, f) = (at(20.0), at(40.0), at(80.0));
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let ratio = diff(&c, &m) / diff(&m, &f);
    // Fourth order gives 16; anything past 8 rules out a second-order slip.
    assert!(ratio > 8.0, "ratio {ratio}");
}

#[test]
fn mask_files_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let masks = MaskSet::uniform(12, 5, 4, 0.3, &mut rng);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    masks.save(&path).unwrap();
    let back = MaskSet::load(&path).unwrap();
    assert_eq!(back, masks);
    assert_eq!(back.content_hash(), masks.content_hash());
}
