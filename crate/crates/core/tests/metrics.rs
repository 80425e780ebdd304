use motion_core::metrics::{contrastive_loss, diversity, fid, multimodality, retrieval_metrics, summarize, DEFAULT_MARGIN, RETRIEVAL_POOL};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize, shift: &[f64]) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|k| rng.sample::<f64, _>(StandardNormal) + shift[k]).collect()).collect()
}

#[test]
fn contrastive_loss_hand_table() {
    // (s_t, s_m, mismatched, expected) with distances 5, 5, 12, 0, 0, 10
    let o = [0.0, 0.0];
    let cases: [(&[f64], &[f64], bool, f64); 6] = [
        (&o, &[3.0, 4.0], false, 25.0),
        (&o, &[3.0, 4.0], true, 25.0),
        (&o, &[12.0, 0.0], true, 0.0),
        (&[1.5, -2.0], &[1.5, -2.0], false, 0.0),
        (&[1.5, -2.0], &[1.5, -2.0], true, 100.0),
        (&o, &[6.0, 8.0], true, 0.0),
    ];
    for (i, (a, b, y, expect)) in cases.into_iter().enumerate() {
        assert_eq!(contrastive_loss(a, b, y, DEFAULT_MARGIN), expect, "case {i}");
    }
    assert_eq!(contrastive_loss(&o, &[1.0, 0.0], true, 3.0), 4.0);
}

#[test]
fn fid_of_a_set_with_itself_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = gaussian(&mut rng, 500, 16, &[0.3; 16]);
    assert!(fid(&a, &a).unwrap().abs() < 1e-8);
}

#[test]
fn shifted_gaussian_fid_is_the_squared_mean_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = 8;
    let shift: Vec<f64> = (0..d).map(|k| if k % 2 == 0 { 1.0 } else { -0.5 }).collect();
    let expect: f64 = shift.iter().map(|s| s * s).sum();
    let a = gaussian(&mut rng, 10_000, d, &vec![0.0; d]);
    let b = gaussian(&mut rng, 10_000, d, &shift);
    let got = fid(&a, &b).unwrap();
    assert!((got - expect).abs() < 0.05 * expect, "fid {got}, expected {expect}");
}

#[test]
fn fid_rejects_bad_input() {
    assert!(fid(&[vec![1.0]], &[vec![1.0], vec![2.0]]).is_err());
    assert!(fid(&[vec![1.0, 2.0], vec![0.0, 1.0]], &[vec![1.0], vec![2.0]]).is_err());
    assert!(fid(&[vec![f64::NAN], vec![1.0]], &[vec![1.0], vec![2.0]]).is_err());
}

#[test]
fn random_embeddings_retrieve_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 640;
    let text = gaussian(&mut rng, n, 16, &[0.0; 16]);
    let motion = gaussian(&mut rng, n, 16, &[0.0; 16]);
    let pools = 300;
    let r = retrieval_metrics(&text, &motion, RETRIEVAL_POOL, pools, &mut rng).unwrap();
    let p = 1.0 / RETRIEVAL_POOL as f64;
    let se = (p * (1.0 - p) / (pools * RETRIEVAL_POOL) as f64).sqrt();
    assert!((r.r1 - p).abs() < 3.0 * se, "R@1 {} vs {p} (se {se})", r.r1);
}

#[test]
fn aligned_embeddings_retrieve_perfectly() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let text = gaussian(&mut rng, 64, 8, &[0.0; 8]);
    let r = retrieval_metrics(&text, &text, RETRIEVAL_POOL, 4, &mut rng).unwrap();
    assert_eq!((r.r1, r.r2, r.r3, r.mm_dist), (1.0, 1.0, 1.0, 0.0));
    assert!(retrieval_metrics(&text[..10], &text[..10], RETRIEVAL_POOL, 1, &mut rng).is_err());
}

#[test]
fn diversity_and_multimodality() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let same = vec![vec![1.0, 2.0]; 20];
    assert_eq!(diversity(&same, 10, &mut rng).unwrap(), 0.0);
    let spread = gaussian(&mut rng, 2000, 4, &[0.0; 4]);
    // E|x - y| for x, y ~ N(0, I_4) is sqrt(2) * E|z| over chi(4) = sqrt(2) * 1.5 * sqrt(pi/2)
    let expect = 2f64.sqrt() * 1.5 * (std::f64::consts::PI / 2.0).sqrt();
    let got = diversity(&spread, 1000, &mut rng).unwrap();
    assert!((got - expect).abs() < 0.05 * expect, "{got} vs {expect}");
    let groups = vec![vec![vec![0.0, 0.0], vec![3.0, 4.0]], vec![vec![1.0, 1.0], vec![1.0, 1.0]]];
    assert!((multimodality(&groups).unwrap() - 2.5).abs() < 1e-12);
}

#[test]
fn summary_interval_uses_the_sample_spread() {
    let row = summarize("x", &[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(row.mean, 2.5);
    let sd = (5.0f64 / 3.0).sqrt();
    assert!((row.ci95 - 1.96 * sd / 2.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn recall_is_monotone_in_k(seed in any::<u64>(), n in 32usize..80, d in 1usize..6, pools in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = gaussian(&mut rng, n, d, &vec![0.0; d]);
        let motion = gaussian(&mut rng, n, d, &vec![0.0; d]);
        let r = retrieval_metrics(&text, &motion, RETRIEVAL_POOL, pools, &mut rng).unwrap();
        prop_assert!(r.r1 <= r.r2 && r.r2 <= r.r3 && r.r3 <= 1.0);
    }
}
