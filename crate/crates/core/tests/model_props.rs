mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vid2voc::features::{assemble_blocks, block_by_video_frame};
use vid2voc::model::{InputMode, ModelConfig, ModelOutput, Vid2Voc, VUV_THRESHOLD};
use vid2voc::nn::{Graph, ParamKind};
use vid2voc::Error;

/// Learnable scalars written out layer by layer from the architecture
/// table: convolutions and linears carry a bias, every hidden layer is
/// followed by a batch norm with a scale and shift per channel.
fn table_param_count(d2: usize) -> usize {
    let conv3d = |ci: usize, co: usize, k: usize| ci * co * k + co;
    let bn = |c: usize| 2 * c;
    let encoder = conv3d(3, 64, 7 * 4 * 4)
        + bn(64)
        + conv3d(64, 128, 16)
        + bn(128)
        + conv3d(128, 256, 16)
        + bn(256)
        + conv3d(256, 512, 16)
        + bn(512)
        + conv3d(512, 128, d2 * 6);
    let gru = 3 * 128 * (128 + 128) + 2 * 3 * 128 + bn(128);
    let sp = conv3d(128, 256, 6) + bn(256) + conv3d(256, 128, 8) + bn(128) + conv3d(128, 64, 16) + bn(64) + conv3d(64, 1, 8);
    let ap = conv3d(128, 128, 4) + bn(128) + conv3d(128, 64, 9) + bn(64) + conv3d(64, 1, 9);
    let heads = 2 * (128 * 8 + 8) + 128 * 28 + 28;
    encoder + gru + sp + ap + heads
}

#[test]
fn parameter_counts_follow_the_layer_table() {
    let mouth = Vid2Voc::<f32>::new(ModelConfig::mouth(), 0).unwrap();
    let face = Vid2Voc::<f32>::new(ModelConfig::face(), 0).unwrap();
    assert_eq!(mouth.params().num_weights(), table_param_count(4));
    assert_eq!(face.params().num_weights(), table_param_count(5));
    assert_eq!(table_param_count(4), 5_186_990);
    // only the last encoder kernel depends on the crop
    let differing: Vec<&str> = mouth
        .params()
        .ids()
        .filter(|&id| mouth.params().get(id).shape() != face.params().get(id).shape())
        .map(|id| mouth.params().name(id))
        .collect();
    assert_eq!(differing, ["encoder.4.weight"]);
    assert_eq!(face.config().input_mode, InputMode::Face);
}

#[test]
fn running_statistics_are_buffers() {
    let m = Vid2Voc::<f32>::new(ModelConfig::tiny(), 0).unwrap();
    for id in m.params().ids() {
        let name = m.params().name(id);
        let buffer = name.ends_with("running_mean") || name.ends_with("running_var");
        assert_eq!(m.params().kind(id) == ParamKind::Buffer, buffer, "{name}");
    }
}

#[test]
fn config_serializes_and_rejects_mismatches() {
    let cfg = ModelConfig::face();
    let back: ModelConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
    let mut bad = ModelConfig::tiny();
    bad.hidden = 31;
    assert!(matches!(bad.validate(), Err(Error::ConfigMismatch(_))));
    let mut bad = ModelConfig::tiny();
    bad.sp_decoder[3].kernel = [4, 3];
    assert!(bad.validate().is_err());
}

#[test]
fn from_parts_checks_the_store() {
    let tiny = Vid2Voc::<f32>::new(ModelConfig::tiny(), 0).unwrap();
    let rebuilt = Vid2Voc::from_parts(ModelConfig::tiny(), tiny.params().clone()).unwrap();
    assert_eq!(rebuilt.params().num_weights(), tiny.params().num_weights());
    let mut wider = ModelConfig::tiny();
    wider.encoder[0].out_channels = 9;
    wider.encoder[1].in_channels = 9;
    assert!(matches!(
        Vid2Voc::from_parts(wider, tiny.params().clone()),
        Err(Error::ConfigMismatch(_))
    ));
}

#[test]
fn eval_forward_is_deterministic_and_batch_independent() {
    let cfg = ModelConfig::tiny();
    let model = Vid2Voc::<f64>::new(cfg.clone(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = common::random_clip(&mut rng, &cfg);
    let b = common::random_clip(&mut rng, &cfg);
    let pair = model.forward(&[&a, &b]).unwrap();
    let again = model.forward(&[&a, &b]).unwrap();
    assert_eq!(pair, again);
    let alone = model.forward(&[&b]).unwrap();
    let worst = pair[1].w_se.iter().zip(&alone[0].w_se).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-12, "{worst}");
    for out in &pair {
        assert!(out.w_se.iter().chain(&out.o_nap).chain(&out.o_f0).all(|v| (0.0..=1.0).contains(v)));
        for row in out.vsr.chunks(28) {
            assert!((row.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn graph_masking_matches_composite() {
    let cfg = common::micro_config();
    let model = common::micro_model(3);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let clips: Vec<_> = (0..2).map(|_| common::random_clip(&mut rng, &cfg)).collect();
    let refs: Vec<_> = clips.iter().collect();
    let mut g = Graph::new(model.params(), false, 0);
    let vars = model.forward_graph(&mut g, &refs).unwrap();
    let outs = model.outputs(&g, &vars);
    let (s_n, b_n) = (cfg.seq_len, 2);
    let f0 = g.value(vars.f0).data();
    let nap = g.value(vars.nap).data();
    for (b, out) in outs.iter().enumerate() {
        for s in 0..s_n {
            let w = s * b_n + b;
            for k in 0..8 {
                assert_eq!(f0[w * 8 + k], out.w_f0[s * 8 + k]);
                assert_eq!(vars.vuv[w * 8 + k], out.w_vuv[s * 8 + k]);
                for band in 0..5 {
                    assert_eq!(nap[(w * 8 + k) * 5 + band], out.w_nap[(s * 5 + band) * 8 + k]);
                }
            }
        }
    }
}

#[test]
fn sub_frame_lands_at_its_audio_frame() {
    let s = 4;
    let mut w_se = vec![0.0; s * 60 * 8];
    let mut o_f0 = vec![0.0; s * 8];
    // video frame 2, sub-frame 3, mel 7
    w_se[(2 * 60 + 7) * 8 + 3] = 0.75;
    o_f0[2 * 8 + 3] = 0.5;
    let out = ModelOutput::composite(s, w_se, vec![0.3; s * 40], o_f0, vec![1.0; s * 8], vec![0.0; s * 28], VUV_THRESHOLD)
        .unwrap();
    let block = out.assemble();
    assert_eq!(block.num_frames(), 32);
    assert_eq!(block.se_frame(19)[7], 0.75);
    assert_eq!(block.f0[19], 0.5);
    assert_eq!(block.se.iter().filter(|&&v| v != 0.0).count(), 1);
    assert!(ModelOutput::composite(s, vec![], vec![], vec![], vec![], vec![], 0.2).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masking_zeroes_unvoiced_frames(seed in any::<u64>(), s in 1usize..6, threshold in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random()).collect() };
        let (w_se, o_nap, o_f0, raw) = (draw(s * 480), draw(s * 40), draw(s * 8), draw(s * 8));
        let out = ModelOutput::composite(s, w_se.clone(), o_nap.clone(), o_f0.clone(), raw.clone(), vec![0.0; s * 28], threshold).unwrap();
        prop_assert_eq!(&out.w_se, &w_se);
        for i in 0..s * 8 {
            let voiced = raw[i] >= threshold;
            prop_assert_eq!(out.w_vuv[i], if voiced { 1.0 } else { 0.0 });
            prop_assert_eq!(out.w_f0[i], if voiced { o_f0[i] } else { 0.0 });
            let (v, k) = (i / 8, i % 8);
            for band in 0..5 {
                let j = (v * 5 + band) * 8 + k;
                prop_assert_eq!(out.w_nap[j], if voiced { o_nap[j] } else { 0.0 });
            }
        }
    }

    #[test]
    fn frame_blocks_round_trip(seed in any::<u64>(), v in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let block = common::random_block(&mut rng, v * 8);
        let targets = block_by_video_frame(&block).unwrap();
        prop_assert_eq!(targets.len(), v);
        prop_assert_eq!(assemble_blocks(&targets), block);
    }
}
