#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vid2voc::ctc::Transcript;
use vid2voc::features::{FeatureConfig, FeaturePipeline, NormalizationStats, VocoderFeatureBlock};
use vid2voc::model::{DropoutSchedule, ModelConfig, Vid2Voc};
use vid2voc::nn::{Graph, ParamKind, ParamStore};
use vid2voc::synth::{render_video, synthetic_utterance};
use vid2voc::training::{record_loss, Example, LossWeights};
use vid2voc::video::VideoClipTensor;
use vid2voc::vocoder::analyze;

/// Tiny geometry with two-to-four channels everywhere and a short sequence,
/// small enough to finite-difference every weight.
pub fn micro_config() -> ModelConfig {
    let mut c = ModelConfig::tiny();
    c.seq_len = 4;
    c.batch_size = 2;
    let mut prev = 3;
    for (l, o) in c.encoder.iter_mut().zip([2, 3, 3, 3, 4]) {
        l.in_channels = prev;
        l.out_channels = o;
        prev = o;
    }
    c.hidden = 4;
    let mut prev = 4;
    for (l, o) in c.sp_decoder.iter_mut().zip([3, 3, 2, 1]) {
        l.in_channels = prev;
        l.out_channels = o;
        prev = o;
    }
    let mut prev = 4;
    for (l, o) in c.ap_decoder.iter_mut().zip([3, 2, 1]) {
        l.in_channels = prev;
        l.out_channels = o;
        prev = o;
    }
    c.dropout = DropoutSchedule::uniform(0.2);
    c
}

pub fn random_clip(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> VideoClipTensor {
    let n = cfg.seq_len * cfg.channels * cfg.height * cfg.width;
    let data = (0..n).map(|_| rng.random_range(-1.0f32..=1.0)).collect();
    VideoClipTensor::new(data, cfg.seq_len, cfg.channels, cfg.height, cfg.width).unwrap()
}

pub fn random_block(rng: &mut ChaCha8Rng, frames: usize) -> VocoderFeatureBlock {
    let mut b = VocoderFeatureBlock::zeros(frames);
    for v in b.se.iter_mut().chain(b.nap.iter_mut()).chain(b.f0.iter_mut()) {
        *v = rng.random();
    }
    for (t, v) in b.vuv.iter_mut().enumerate() {
        *v = if rng.random::<f64>() < 0.6 { 1.0 } else { 0.0 };
        if *v == 0.0 {
            b.f0[t] = 0.0;
        }
    }
    b
}

/// Micro model in double precision with biases moved off zero, so that
/// no ReLU sits exactly at its kink.
pub fn micro_model(seed: u64) -> Vid2Voc<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    let mut m = Vid2Voc::<f64>::new(micro_config(), seed).unwrap();
    let ids: Vec<_> = m.params().ids().collect();
    for id in ids {
        if m.params().name(id).ends_with(".bias") {
            for v in m.params_mut().get_mut(id).data_mut() {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }
    m
}

pub struct GradCheck {
    pub name: String,
    pub worst: f64,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Gradient floor below which finite differences at step 1e-6 are
/// dominated by round-off of the loss.
pub const GRAD_FLOOR: f64 = 1e-5;

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRAD_FLOOR)
}

/// Central differences of the full training loss against the analytic
/// gradient, for every element of every weight tensor.
pub fn full_loss_gradcheck(seed: u64, weights: LossWeights) -> Vec<GradCheck> {
    let model = micro_model(seed);
    let cfg = model.config().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clips: Vec<VideoClipTensor> = (0..2).map(|_| random_clip(&mut rng, &cfg)).collect();
    let blocks: Vec<VocoderFeatureBlock> = (0..2).map(|_| random_block(&mut rng, cfg.seq_len * 8)).collect();
    let texts = [Transcript::parse("ab").unwrap(), Transcript::parse("c").unwrap()];
    let cl: Vec<&VideoClipTensor> = clips.iter().collect();
    let bl: Vec<&VocoderFeatureBlock> = blocks.iter().collect();
    let tx: Vec<&Transcript> = texts.iter().collect();
    let eval = |store: &ParamStore<f64>, backward: bool| {
        let mut g = Graph::new(store, true, 11);
        let out = model.forward_graph(&mut g, &cl).unwrap();
        let l = record_loss(&mut g, &out, &bl, &tx, &weights).unwrap();
        let v = g.value(l.total).data()[0];
        (v, backward.then(|| g.backward(l.total).unwrap()))
    };
    let grads = eval(model.params(), true).1.unwrap();
    let mut store = model.params().clone();
    let h = 1e-6;
    let mut report = Vec::new();
    for id in model.params().ids() {
        if store.kind(id) != ParamKind::Weight {
            continue;
        }
        let n = store.get(id).numel();
        let ga = grads.get(id).map(|g| g.data().to_vec()).unwrap_or(vec![0.0; n]);
        let mut r = GradCheck {
            name: store.name(id).to_string(),
            worst: 0.0,
            analytic: 0.0,
            numeric: 0.0,
            checked: n,
        };
        for i in 0..n {
            let x0 = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = x0 + h;
            let lp = eval(&store, false).0;
            store.get_mut(id).data_mut()[i] = x0 - h;
            let lm = eval(&store, false).0;
            store.get_mut(id).data_mut()[i] = x0;
            let num = (lp - lm) / (2.0 * h);
            let e = relative_error(ga[i], num);
            if e >= r.worst {
                r.worst = e;
                r.analytic = ga[i];
                r.numeric = num;
            }
        }
        report.push(r);
    }
    report
}

/// A normalized toy corpus of synthetic utterances with rendered video.
pub struct ToyCorpus {
    pub pipeline: FeaturePipeline,
    pub stats: NormalizationStats,
    pub examples: Vec<Example>,
}

pub fn toy_corpus(count: usize, seed: u64, height: usize, width: usize) -> ToyCorpus {
    let pipeline = FeaturePipeline::new(FeatureConfig::default()).unwrap();
    let utterances: Vec<_> = (0..count as u64).map(|i| synthetic_utterance(seed + i)).collect();
    let raws: Vec<_> = utterances
        .iter()
        .map(|u| pipeline.raw_features(&analyze(&u.audio, &pipeline.config().vocoder).unwrap()).unwrap())
        .collect();
    let stats = pipeline.compute_stats(raws.iter()).unwrap();
    let examples = utterances
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let frames = render_video(u, height, width, false, seed + i as u64);
            let clip = VideoClipTensor::new(frames, 75, 3, height, width).unwrap();
            let text = Transcript::parse(&u.transcript).unwrap();
            Example::from_audio(clip, u.audio.clone(), text, &pipeline, &stats).unwrap()
        })
        .collect();
    ToyCorpus {
        pipeline,
        stats,
        examples,
    }
}
