use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use vid2voc::ctc::{best_path_decode, wer, Transcript};
use vid2voc::dsp::{resample, Waveform};
use vid2voc::features::{FeatureConfig, FeaturePipeline, NormalizationStats};
use vid2voc::io::{
    load_features, load_stats, load_video, read_transcript, read_wav, save_features, save_stats, save_video,
    write_wav, ClipManifest, ManifestEntry, Split,
};
use vid2voc::metrics::estoi;
use vid2voc::model::{InputMode, Vid2Voc};
use vid2voc::synth::{render_video, synthetic_utterance};
use vid2voc::training::{
    load_checkpoint, output_estoi, train, Corpus, Example, Scenario, TrainConfig,
};
use vid2voc::video::VideoClipTensor;
use vid2voc::vocoder::{analyze, synthesize, SAMPLE_RATE};
use vid2voc::{Error, Result};

#[derive(Parser)]
#[command(name = "vid2voc", version, about = "Silent video to speech through vocoder features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Mouth,
    Face,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Dependent,
    Independent,
    Desk,
}

#[derive(Subcommand)]
enum Command {
    /// Normalization statistics from the training split of a manifest.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// WAV to normalized VOC1 features.
    Analyze {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// VOC1 features to WAV.
    Synthesize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Trains on the train split, validating on the val split.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        /// Where the best checkpoint is written.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "mouth")]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "dependent")]
        scenario: ScenarioArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overrides the scenario's iteration count.
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        validate_every: Option<usize>,
        /// Metrics CSV; defaults to the checkpoint path with a .csv extension.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Video to WAV and transcript.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Also write the predicted VOC1 features.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Also write the decoded transcript.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Video to transcript only.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        video: PathBuf,
    },
    /// Scores a split of a manifest (with a checkpoint) or a CSV of
    /// `clean,degraded` WAV pairs.
    Eval {
        #[arg(long, conflicts_with = "manifest")]
        pairs: Option<PathBuf>,
        #[arg(long, requires_all = ["checkpoint", "stats"])]
        manifest: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Per-clip score CSV.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Writes a synthetic corpus (VFT1, WAV, transcripts, manifest).
    DemoCorpus {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 4)]
        train: usize,
        #[arg(long, default_value_t = 1)]
        val: usize,
        #[arg(long, default_value_t = 1)]
        test: usize,
        #[arg(long, default_value_t = 16)]
        height: usize,
        #[arg(long, default_value_t = 24)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn pipeline() -> Result<FeaturePipeline> {
    FeaturePipeline::new(FeatureConfig::default())
}

fn stats_at(path: &Path) -> Result<NormalizationStats> {
    load_stats(path).map_err(|e| match e {
        Error::NotFound(p) => Error::NotFound(PathBuf::from(format!("stats not found: {}", p.display()))),
        other => other,
    })
}

fn audio_at(path: &Path) -> Result<Waveform> {
    let w = read_wav(path)?;
    if w.sample_rate() == SAMPLE_RATE {
        return Ok(w);
    }
    eprintln!("warning: {} is {} Hz, resampling to {SAMPLE_RATE} Hz", path.display(), w.sample_rate());
    resample(&w, SAMPLE_RATE)
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
    }
}

fn example(e: &ManifestEntry, p: &FeaturePipeline, stats: &NormalizationStats) -> Result<Example> {
    let clip = load_video(&e.video)?;
    let transcript = Transcript::parse(&read_transcript(&e.transcript)?)?;
    Example::from_audio(clip, audio_at(&e.audio)?, transcript, p, stats)
}

fn cmd_stats(manifest: &Path, output: &Path) -> Result<()> {
    let m = ClipManifest::load(manifest)?;
    let p = pipeline()?;
    let mut raws = Vec::new();
    for e in m.split(Split::Train) {
        raws.push(p.raw_features(&analyze(&audio_at(&e.audio)?, &p.config().vocoder)?)?);
    }
    let stats = p.compute_stats(raws.iter())?;
    save_stats(output, &stats)?;
    println!("stats over {} clips written to {}", raws.len(), output.display());
    Ok(())
}

fn cmd_analyze(input: &Path, stats: &Path, output: &Path) -> Result<()> {
    let stats = stats_at(stats)?;
    let p = pipeline()?;
    let a = analyze(&audio_at(input)?, &p.config().vocoder)?;
    let block = p.reduce(&a, &stats)?;
    save_features(output, &block)?;
    println!("{} frames", block.num_frames());
    Ok(())
}

fn cmd_synthesize(input: &Path, stats: &Path, output: &Path) -> Result<()> {
    let stats = stats_at(stats)?;
    let p = pipeline()?;
    let block = load_features(input)?;
    let e = p.expand(&block, &stats)?;
    if e.clamped > 0 {
        eprintln!("warning: {} feature values outside [0, 1] were clamped", e.clamped);
    }
    let y = synthesize(&e.sp, &e.ap, &e.f0, &e.vuv, &p.config().vocoder)?;
    write_wav(output, &y)?;
    println!("{} samples", y.len());
    Ok(())
}

struct TrainArgs {
    manifest: PathBuf,
    stats: PathBuf,
    checkpoint: PathBuf,
    mode: ModeArg,
    scenario: ScenarioArg,
    seed: u64,
    iterations: Option<usize>,
    batch_size: Option<usize>,
    validate_every: Option<usize>,
    log: Option<PathBuf>,
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let stats = stats_at(&a.stats)?;
    let p = pipeline()?;
    let m = ClipManifest::load(&a.manifest)?;
    let load = |split| -> Result<Vec<Example>> { m.split(split).map(|e| example(e, &p, &stats)).collect() };
    let corpus = Corpus {
        train: load(Split::Train)?,
        val: load(Split::Val)?,
        pipeline: &p,
        stats: &stats,
    };
    let scenario = match a.scenario {
        ScenarioArg::Dependent => Scenario::Dependent,
        ScenarioArg::Independent => Scenario::Independent,
        ScenarioArg::Desk => Scenario::Desk,
    };
    let mode = match a.mode {
        ModeArg::Mouth => InputMode::Mouth,
        ModeArg::Face => InputMode::Face,
    };
    let model_cfg = scenario.model(mode);
    let mut cfg = TrainConfig::preset(scenario, &model_cfg);
    cfg.seed = a.seed;
    cfg.checkpoint = Some(a.checkpoint.clone());
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(v) = a.validate_every {
        cfg.validate_every = v;
    }
    let mut model = Vid2Voc::<f32>::new(model_cfg, a.seed)?;
    let log_path = a.log.unwrap_or_else(|| a.checkpoint.with_extension("csv"));
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    eprintln!("model selection uses mean validation ESTOI");
    let report = train(&mut model, &corpus, &cfg, &mut log)?;
    let last = report.losses.last().map(|l| l.total).unwrap_or(f64::NAN);
    match report.best_val {
        Some(v) => println!(
            "final J {last:.6}; best validation ESTOI {v:.4} at iteration {}",
            report.best_iteration.unwrap_or(0)
        ),
        None => println!("final J {last:.6}; no validation audio, checkpoint from the last iteration"),
    }
    Ok(())
}

fn infer_one(model: &Vid2Voc<f32>, path: &Path) -> Result<vid2voc::model::ModelOutput> {
    let clip: VideoClipTensor = load_video(path)?;
    Ok(model.forward(&[&clip])?.remove(0))
}

fn cmd_infer(
    checkpoint: &Path,
    stats: &Path,
    video: &Path,
    output: &Path,
    features: Option<&Path>,
    transcript: Option<&Path>,
) -> Result<()> {
    let stats = stats_at(stats)?;
    let model = load_checkpoint(checkpoint)?.model;
    let p = pipeline()?;
    let out = infer_one(&model, video)?;
    let block = out.assemble();
    if let Some(f) = features {
        save_features(f, &block)?;
    }
    let e = p.expand(&block, &stats)?;
    let y = synthesize(&e.sp, &e.ap, &e.f0, &e.vuv, &p.config().vocoder)?;
    write_wav(output, &y)?;
    let text = best_path_decode(&out.vsr)?;
    if let Some(t) = transcript {
        std::fs::write(t, format!("{}\n", text.text()))?;
    }
    println!("{}", text.text());
    Ok(())
}

fn cmd_decode(checkpoint: &Path, video: &Path) -> Result<()> {
    let model = load_checkpoint(checkpoint)?.model;
    let out = infer_one(&model, video)?;
    println!("{}", best_path_decode(&out.vsr)?.text());
    Ok(())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(serde::Deserialize)]
struct PairRow {
    clean: PathBuf,
    degraded: PathBuf,
}

fn cmd_eval_pairs(pairs: &Path, output: Option<&Path>) -> Result<()> {
    let base = pairs.parent().map(Path::to_path_buf).unwrap_or_default();
    let file = std::fs::File::open(pairs).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(pairs.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut rows = Vec::new();
    for row in csv::Reader::from_reader(file).deserialize::<PairRow>() {
        let r = row.map_err(|e| Error::Malformed {
            what: pairs.display().to_string(),
            reason: e.to_string(),
        })?;
        let (c, d) = (base.join(&r.clean), base.join(&r.degraded));
        let score = estoi(&read_wav(&c)?, &read_wav(&d)?)?;
        rows.push((r.clean, r.degraded, score));
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(out) = output {
        let mut w = csv::Writer::from_path(out).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        w.write_record(["clean", "degraded", "estoi"]).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for (c, d, s) in &rows {
            w.write_record([c.display().to_string(), d.display().to_string(), format!("{s}")])
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        }
        w.flush()?;
    }
    let scores: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let (m, s) = mean_std(&scores);
    println!("clips {}  ESTOI mean {m:.4} std {s:.4}", scores.len());
    Ok(())
}

fn cmd_eval_manifest(manifest: &Path, checkpoint: &Path, stats: &Path, split: &str, output: Option<&Path>) -> Result<()> {
    let split = parse_split(split)?;
    let stats = stats_at(stats)?;
    let p = pipeline()?;
    let model = load_checkpoint(checkpoint)?.model;
    let m = ClipManifest::load(manifest)?;
    let mut rows = Vec::new();
    for e in m.split(split) {
        let ex = example(e, &p, &stats)?;
        let out = model.forward(&[&ex.clip])?.remove(0);
        let score = output_estoi(&out, ex.audio.as_ref().expect("loaded from audio"), &p, &stats)?;
        let hyp = best_path_decode(&out.vsr)?;
        let w = wer(ex.transcript.text(), hyp.text())?;
        rows.push((e.video.display().to_string(), score, w, hyp.text().to_string()));
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(out) = output {
        let mut w = csv::Writer::from_path(out).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        w.write_record(["video", "estoi", "wer", "hypothesis"]).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for (v, s, r, h) in &rows {
            w.write_record([v.clone(), format!("{s}"), format!("{r}"), h.clone()])
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        }
        w.flush()?;
    }
    let (em, es) = mean_std(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    let (wm, ws) = mean_std(&rows.iter().map(|r| r.2).collect::<Vec<_>>());
    println!("{:<10}{:>8}{:>18}{:>18}", "split", "clips", "ESTOI", "WER (%)");
    println!(
        "{:<10}{:>8}{:>18}{:>18}",
        format!("{split:?}").to_lowercase(),
        rows.len(),
        format!("{em:.3} +- {es:.3}"),
        format!("{:.1} +- {:.1}", 100.0 * wm, 100.0 * ws)
    );
    println!("PESQ is not computed; ESTOI is the quality metric");
    Ok(())
}

fn cmd_demo_corpus(dir: &Path, counts: [usize; 3], height: usize, width: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = ClipManifest::default();
    let splits = [Split::Train, Split::Val, Split::Test];
    let mut index = 0u64;
    for (split, &count) in splits.iter().zip(&counts) {
        for _ in 0..count {
            let u = synthetic_utterance(seed.wrapping_add(index));
            let frames = render_video(&u, height, width, false, seed.wrapping_add(index));
            let clip = VideoClipTensor::new(frames, u.openness.len(), 3, height, width)?;
            let stem = format!("clip{index:04}");
            save_video(&dir.join(format!("{stem}.vft")), &clip)?;
            write_wav(&dir.join(format!("{stem}.wav")), &u.audio)?;
            std::fs::write(dir.join(format!("{stem}.txt")), format!("{}\n", u.transcript))?;
            manifest.entries.push(ManifestEntry {
                video: format!("{stem}.vft").into(),
                audio: format!("{stem}.wav").into(),
                transcript: format!("{stem}.txt").into(),
                speaker: "synthetic".into(),
                split: *split,
            });
            index += 1;
        }
    }
    manifest.save(&dir.join("manifest.csv"))?;
    println!("{index} clips written to {}", dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stats { manifest, output } => cmd_stats(&manifest, &output),
        Command::Analyze { input, stats, output } => cmd_analyze(&input, &stats, &output),
        Command::Synthesize { input, stats, output } => cmd_synthesize(&input, &stats, &output),
        Command::Train {
            manifest,
            stats,
            checkpoint,
            mode,
            scenario,
            seed,
            iterations,
            batch_size,
            validate_every,
            log,
        } => cmd_train(TrainArgs {
            manifest,
            stats,
            checkpoint,
            mode,
            scenario,
            seed,
            iterations,
            batch_size,
            validate_every,
            log,
        }),
        Command::Infer {
            checkpoint,
            stats,
            video,
            output,
            features,
            transcript,
        } => cmd_infer(&checkpoint, &stats, &video, &output, features.as_deref(), transcript.as_deref()),
        Command::Decode { checkpoint, video } => cmd_decode(&checkpoint, &video),
        Command::Eval {
            pairs,
            manifest,
            checkpoint,
            stats,
            split,
            output,
        } => match (pairs, manifest, checkpoint, stats) {
            (Some(p), _, _, _) => cmd_eval_pairs(&p, output.as_deref()),
            (None, Some(m), Some(c), Some(s)) => cmd_eval_manifest(&m, &c, &s, &split, output.as_deref()),
            _ => Err(Error::InvalidArgument("eval needs --pairs or --manifest with --checkpoint and --stats".into())),
        },
        Command::DemoCorpus {
            output,
            train,
            val,
            test,
            height,
            width,
            seed,
        } => cmd_demo_corpus(&output, [train, val, test], height, width, seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
