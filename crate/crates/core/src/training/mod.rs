//! Multi-task training: loss, Adam, mirror augmentation, validation by
//! resynthesis ESTOI and checkpointing of the best model.

mod adam;
mod checkpoint;
mod loss;

use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use loss::{record_loss, LossBreakdown, LossVars, LossWeights};

use crate::ctc::Transcript;
use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::features::{FeaturePipeline, BLOCK_LEN, NormalizationStats, VocoderFeatureBlock};
use crate::metrics::estoi;
use crate::model::{DropoutSchedule, InputMode, ModelConfig, ModelOutput, Vid2Voc};
use crate::nn::Graph;
use crate::video::VideoClipTensor;
use crate::vocoder::{analyze, synthesize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Speakers shared between training and test.
    Dependent,
    /// Unseen test speakers.
    Independent,
    /// Small-scale runs on a workstation CPU.
    Desk,
}

impl Scenario {
    pub fn dropout(self) -> DropoutSchedule {
        match self {
            Scenario::Dependent => DropoutSchedule::uniform(0.2),
            Scenario::Independent => DropoutSchedule {
                encoder: 0.5,
                recurrent: 0.5,
                decoders: 0.2,
            },
            Scenario::Desk => DropoutSchedule::uniform(0.0),
        }
    }

    pub fn iterations(self) -> usize {
        match self {
            Scenario::Dependent => 300_000,
            Scenario::Independent => 185_000,
            Scenario::Desk => 500,
        }
    }

    pub fn learning_rate(self) -> f64 {
        match self {
            Scenario::Desk => 3e-3,
            _ => 1e-4,
        }
    }

    /// Model configuration for this scenario.
    pub fn model(self, mode: InputMode) -> ModelConfig {
        let mut cfg = match (self, mode) {
            (Scenario::Desk, _) => ModelConfig::tiny(),
            (_, InputMode::Mouth) => ModelConfig::mouth(),
            (_, InputMode::Face) => ModelConfig::face(),
        };
        cfg.dropout = self.dropout();
        cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub iterations: usize,
    pub batch_size: usize,
    pub mirror_prob: f64,
    /// Validate every this many iterations and after the last one.
    pub validate_every: usize,
    pub seed: u64,
    /// Where the best checkpoint goes, if anywhere.
    pub checkpoint: Option<PathBuf>,
}

impl TrainConfig {
    pub fn preset(scenario: Scenario, model: &ModelConfig) -> Self {
        Self {
            weights: LossWeights::default(),
            adam: AdamConfig {
                learning_rate: scenario.learning_rate(),
                ..AdamConfig::default()
            },
            iterations: scenario.iterations(),
            batch_size: model.batch_size,
            mirror_prob: 0.5,
            validate_every: 1000,
            seed: 0,
            checkpoint: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(0.0..=1.0).contains(&self.mirror_prob) {
            return Err(Error::InvalidArgument(format!("mirror probability {} outside [0, 1]", self.mirror_prob)));
        }
        if self.batch_size == 0 || self.validate_every == 0 {
            return Err(Error::InvalidArgument("batch size and validation interval must be positive".into()));
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::InvalidArgument(format!("invalid optimizer settings {a:?}")));
        }
        Ok(())
    }
}

/// One clip with everything training and validation need.
#[derive(Debug, Clone)]
pub struct Example {
    pub clip: VideoClipTensor,
    pub features: VocoderFeatureBlock,
    pub transcript: Transcript,
    /// Reference audio for validation ESTOI.
    pub audio: Option<Waveform>,
}

impl Example {
    /// Analyzes reference audio into normalized targets.
    pub fn from_audio(
        clip: VideoClipTensor,
        audio: Waveform,
        transcript: Transcript,
        pipeline: &FeaturePipeline,
        stats: &NormalizationStats,
    ) -> Result<Self> {
        let a = analyze(&audio, &pipeline.config().vocoder)?;
        let features = pipeline.reduce(&a, stats)?;
        let expected = clip.frames() * BLOCK_LEN;
        if features.num_frames() != expected {
            return Err(Error::FrameCountMismatch {
                expected,
                actual: features.num_frames(),
            });
        }
        Ok(Self {
            clip,
            features,
            transcript,
            audio: Some(audio),
        })
    }
}

/// Training and validation clips plus the normalization they were built with.
pub struct Corpus<'a> {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub pipeline: &'a FeaturePipeline,
    pub stats: &'a NormalizationStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<LossBreakdown>,
    pub flips: usize,
    pub best_val: Option<f64>,
    pub best_iteration: Option<usize>,
}

pub const LOG_HEADER: &str = "iteration,J,J_se,J_nap,J_f0,J_vuv,J_vsr,val_estoi";

/// Resynthesizes a model output and scores it against reference audio.
pub fn output_estoi(
    out: &ModelOutput,
    reference: &Waveform,
    pipeline: &FeaturePipeline,
    stats: &NormalizationStats,
) -> Result<f64> {
    let e = pipeline.expand(&out.assemble(), stats)?;
    let y = synthesize(&e.sp, &e.ap, &e.f0, &e.vuv, &pipeline.config().vocoder)?;
    estoi(reference, &y)
}

/// Mean ESTOI over the validation clips that carry audio; `None` when
/// none do.
pub fn validation_estoi(model: &Vid2Voc<f32>, corpus: &Corpus) -> Result<Option<f64>> {
    let scored: Vec<&Example> = corpus.val.iter().filter(|e| e.audio.is_some()).collect();
    if scored.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for chunk in scored.chunks(model.config().batch_size) {
        let clips: Vec<&VideoClipTensor> = chunk.iter().map(|e| &e.clip).collect();
        for (out, ex) in model.forward(&clips)?.iter().zip(chunk) {
            total += output_estoi(out, ex.audio.as_ref().expect("filtered"), corpus.pipeline, corpus.stats)?;
        }
    }
    Ok(Some(total / scored.len() as f64))
}

/// Runs the training loop, writing one CSV row per iteration to `log`.
pub fn train(
    model: &mut Vid2Voc<f32>,
    corpus: &Corpus,
    cfg: &TrainConfig,
    log: &mut impl Write,
) -> Result<TrainReport> {
    cfg.validate()?;
    corpus.pipeline.check_stats(corpus.stats)?;
    if corpus.train.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam, model.params());
    let mut order: Vec<usize> = Vec::new();
    let mut report = TrainReport {
        losses: Vec::with_capacity(cfg.iterations),
        flips: 0,
        best_val: None,
        best_iteration: None,
    };
    writeln!(log, "{LOG_HEADER}")?;
    for it in 1..=cfg.iterations {
        let mut picked = Vec::with_capacity(cfg.batch_size);
        while picked.len() < cfg.batch_size {
            if order.is_empty() {
                order = (0..corpus.train.len()).collect();
                order.shuffle(&mut rng);
            }
            picked.push(order.pop().expect("refilled"));
        }
        let mut mirrored = Vec::new();
        let mut clips: Vec<&VideoClipTensor> = Vec::with_capacity(picked.len());
        let flips: Vec<bool> = picked.iter().map(|_| rng.random::<f64>() < cfg.mirror_prob).collect();
        for (&i, &flip) in picked.iter().zip(&flips) {
            if flip {
                mirrored.push(corpus.train[i].clip.mirrored());
            }
        }
        let mut flipped = mirrored.iter();
        for (&i, &flip) in picked.iter().zip(&flips) {
            clips.push(if flip { flipped.next().expect("one per flip") } else { &corpus.train[i].clip });
        }
        report.flips += mirrored.len();
        let blocks: Vec<&VocoderFeatureBlock> = picked.iter().map(|&i| &corpus.train[i].features).collect();
        let texts: Vec<&Transcript> = picked.iter().map(|&i| &corpus.train[i].transcript).collect();

        let graph_seed = rng.random::<u64>();
        let (breakdown, grads, updates) = {
            let mut g = Graph::new(model.params(), true, graph_seed);
            let out = model.forward_graph(&mut g, &clips)?;
            let loss = record_loss(&mut g, &out, &blocks, &texts, &cfg.weights)?;
            let breakdown = loss.breakdown(&g);
            if !breakdown.total.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss at iteration {it}")));
            }
            let updates = g.bn_updates().to_vec();
            (breakdown, g.backward(loss.total)?, updates)
        };
        adam.step(model.params_mut(), &grads)?;
        for u in &updates {
            u.apply(model.params_mut());
        }
        report.losses.push(breakdown);

        let mut val = String::new();
        if it % cfg.validate_every == 0 || it == cfg.iterations {
            if let Some(score) = validation_estoi(model, corpus)? {
                val = format!("{score}");
                if report.best_val.is_none_or(|b| score > b) {
                    report.best_val = Some(score);
                    report.best_iteration = Some(it);
                    if let Some(path) = &cfg.checkpoint {
                        save_checkpoint(path, model, Some(&adam))?;
                    }
                }
            } else if let Some(path) = &cfg.checkpoint {
                save_checkpoint(path, model, Some(&adam))?;
                report.best_iteration = Some(it);
            }
        }
        let b = breakdown;
        writeln!(log, "{it},{},{},{},{},{},{},{val}", b.total, b.se, b.nap, b.f0, b.vuv, b.vsr)?;
    }
    Ok(report)
}
