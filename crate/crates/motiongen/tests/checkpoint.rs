use motion_core::curriculum::{CorpusClip, CurriculumSpec, Trainer};
use motion_core::features::{extract_features, DEFAULT_CONTACT_THRESHOLD};
use motion_core::model::{Denoiser, ModelConfig};
use motion_core::schedule::build_schedule;
use motion_core::synth::{synth_motion, Style, SynthParams};
use motion_core::{Matrix, SkeletonSpec};
use motiongen::checkpoint::Checkpoint;
use motiongen::clip::{decode_matrix, encode_matrix};
use proptest::prelude::*;

fn trainer() -> (Trainer, Vec<CorpusClip>) {
    let skel = SkeletonSpec::desk();
    let model = Denoiser::new(ModelConfig { layers: 1, diffusion_steps: 10, ..ModelConfig::desk() }, skel.clone()).unwrap();
    let mut cur = CurriculumSpec::full(1.0 / 115_000.0);
    for s in &mut cur.stages {
        s.batch_size = 2;
    }
    let schedule = build_schedule(10, model.config.schedule).unwrap();
    let clips = [Style::Walk, Style::Kick]
        .into_iter()
        .map(|style| {
            let full = extract_features(&synth_motion(&skel, &SynthParams::new(style, 12)), &skel, DEFAULT_CONTACT_THRESHOLD).unwrap();
            CorpusClip {
                id: style.name().into(),
                features: motion_core::MotionFeatures::new(30.0, full.values.slice_rows(0, 6)),
                captions: vec![style.caption().into()],
                reference: Some(full.tail(6)),
                speech: None,
                music: None,
                joint_valid: vec![true; skel.joint_count()],
                has_face: false,
            }
        })
        .collect();
    (Trainer::new(model, cur, schedule, 17).unwrap(), clips)
}

#[test]
fn resuming_from_a_checkpoint_file_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (mut straight, clips) = trainer();
    for _ in 0..5 {
        straight.train_step(&clips).unwrap();
    }
    let path = dir.path().join("mid.mckp");
    let sum = Checkpoint::from_trainer(&straight).save(&path).unwrap();
    let (loaded, sum2) = Checkpoint::load(&path).unwrap();
    assert_eq!(sum, sum2);
    let mut resumed = loaded.to_trainer().unwrap();
    assert_eq!(resumed.step, 5);
    while !straight.finished() {
        assert_eq!(straight.train_step(&clips).unwrap(), resumed.train_step(&clips).unwrap());
    }
    assert!(resumed.finished());
    for ((_, name, a), (_, _, b)) in straight.model.params.iter().zip(resumed.model.params.iter()) {
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()), "{name}");
    }
    // the final checkpoint rebuilds the same denoiser
    let model = Checkpoint::denoiser(&straight.model);
    let bytes = model.encode().unwrap();
    let back = Checkpoint::decode(&bytes).unwrap().to_denoiser().unwrap();
    assert_eq!(back.params.iter().count(), straight.model.params.iter().count());
    assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn feature_matrices_round_trip(rows in 0usize..12, cols in 1usize..9, seed in any::<u32>()) {
        let data: Vec<f64> = (0..rows * cols).map(|i| (((i as u32).wrapping_mul(2654435761) ^ seed) as f32 / 1e6) as f64).collect();
        let m = Matrix::from_vec(rows, cols, data);
        prop_assert_eq!(decode_matrix(&encode_matrix(&m)).unwrap(), m);
    }
}
