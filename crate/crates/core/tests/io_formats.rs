use proptest::prelude::*;

use vid2voc::dsp::Waveform;
use vid2voc::features::{read_voc1, write_voc1, NormalizationStats, VocoderFeatureBlock, NUM_COEFFS};
use vid2voc::io::{
    load_features, load_stats, load_video, read_transcript, read_wav, save_features, save_stats, save_video, write_wav,
    ClipManifest, ManifestEntry, Split,
};
use vid2voc::video::VideoClipTensor;
use vid2voc::Error;

fn f32_exact(v: f64) -> f64 {
    v as f32 as f64
}

fn sample_stats() -> NormalizationStats {
    let mut min = [0.0; NUM_COEFFS];
    let mut max = [0.0; NUM_COEFFS];
    for i in 0..NUM_COEFFS {
        min[i] = -(i as f64) - 0.5;
        max[i] = i as f64 * 0.25 + 1.0;
    }
    NormalizationStats {
        min,
        max,
        fingerprint: *b"0123456789abcdef",
    }
}

#[test]
fn voc1_layout() {
    let mut block = VocoderFeatureBlock::zeros(2);
    block.f0 = vec![0.25, 0.0];
    block.vuv = vec![1.0, 0.0];
    let mut bytes = Vec::new();
    write_voc1(&mut bytes, &block).unwrap();
    // magic, six header words, then 2 * (60 + 5 + 1 + 1) values
    assert_eq!(bytes.len(), 4 + 6 * 4 + 2 * 67 * 4);
    assert_eq!(&bytes[..4], b"VOC1");
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    assert_eq!([word(0), word(1), word(2), word(3), word(4), word(5)], [1, 2, 60, 5, 250, 50_000]);
    let f0_at = 28 + 2 * 65 * 4;
    assert_eq!(f32::from_le_bytes(bytes[f0_at..f0_at + 4].try_into().unwrap()), 0.25);
}

#[test]
fn voc1_rejects_foreign_headers() {
    let mut bytes = Vec::new();
    write_voc1(&mut bytes, &VocoderFeatureBlock::zeros(1)).unwrap();
    let mut hop = bytes.clone();
    hop[20..24].copy_from_slice(&200u32.to_le_bytes());
    assert!(matches!(read_voc1(&mut hop.as_slice()), Err(Error::ConfigMismatch(_))));
    let mut version = bytes.clone();
    version[4] = 2;
    assert!(matches!(read_voc1(&mut version.as_slice()), Err(Error::Malformed { .. })));
    let mut nan = bytes.clone();
    nan[28..32].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(read_voc1(&mut nan.as_slice()).is_err());
    let mut bad = VocoderFeatureBlock::zeros(2);
    bad.vuv.pop();
    assert!(matches!(write_voc1(&mut Vec::new(), &bad), Err(Error::Shape(_))));
}

#[test]
fn stats_files_round_trip_and_reject_degenerate_ranges() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.vst");
    let stats = sample_stats();
    save_stats(&path, &stats).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes.len(), 4 + 16 + 2 * NUM_COEFFS * 4);
    assert_eq!(load_stats(&path).unwrap(), stats);

    let mut flat = stats.clone();
    flat.max[3] = flat.min[3];
    flat.max[65] = flat.min[65] - 1.0;
    save_stats(&path, &flat).unwrap();
    match load_stats(&path) {
        Err(Error::DegenerateCoefficients(c)) => assert_eq!(c, vec![3, 65]),
        other => panic!("{other:?}"),
    }
    assert!(matches!(load_stats(&dir.path().join("nope.vst")), Err(Error::NotFound(_))));
}

#[test]
fn video_files_round_trip_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.vft");
    let data: Vec<f32> = (0..2 * 3 * 4 * 6).map(|i| (i % 17) as f32 / 8.0 - 1.0).collect();
    let clip = VideoClipTensor::new(data, 2, 3, 4, 6).unwrap();
    save_video(&path, &clip).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"VFT1");
    assert_eq!(bytes.len(), 4 + 16 + clip.data().len() * 4);
    assert_eq!(load_video(&path).unwrap(), clip);

    let mut loud = bytes.clone();
    loud[20..24].copy_from_slice(&1.5f32.to_le_bytes());
    std::fs::write(&path, &loud).unwrap();
    assert!(matches!(load_video(&path), Err(Error::Malformed { .. })));
    let mut huge = bytes.clone();
    huge[4..8].copy_from_slice(&u32::MAX.to_le_bytes());
    std::fs::write(&path, &huge).unwrap();
    assert!(matches!(load_video(&path), Err(Error::Malformed { .. })));
    assert_eq!(clip.mirrored().mirrored(), clip);
}

#[test]
fn wav_round_trip_is_pcm16() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.wav");
    let samples: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.01).sin() * 0.9).collect();
    let w = Waveform::new(samples.clone(), 50_000).unwrap();
    write_wav(&path, &w).unwrap();
    let back = read_wav(&path).unwrap();
    assert_eq!(back.sample_rate(), 50_000);
    assert_eq!(back.samples().len(), 1000);
    let worst = back.samples().iter().zip(&samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst <= 0.5 / 32768.0, "{worst}");

    let clipped = Waveform::new(vec![2.0, -3.0], 16_000).unwrap();
    write_wav(&path, &clipped).unwrap();
    let back = read_wav(&path).unwrap();
    assert_eq!(back.samples(), &[32767.0 / 32768.0, -1.0]);

    let stereo = hound::WavSpec {
        channels: 2,
        sample_rate: 8000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut wr = hound::WavWriter::create(&path, stereo).unwrap();
    for v in [16384i16, 0, -16384, -16384] {
        wr.write_sample(v).unwrap();
    }
    wr.finalize().unwrap();
    assert_eq!(read_wav(&path).unwrap().samples(), &[0.25, -0.5]);

    std::fs::write(&path, b"RIFF garbage").unwrap();
    let err = read_wav(&path).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(matches!(read_wav(&dir.path().join("none.wav")), Err(Error::NotFound(_))));
}

#[test]
fn manifests_resolve_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let sub = dir.path().join("clips");
    std::fs::create_dir(&sub).unwrap();
    for f in ["a.vft", "a.wav", "a.txt", "b.vft", "b.wav", "b.txt"] {
        std::fs::write(sub.join(f), b"x").unwrap();
    }
    std::fs::write(sub.join("a.txt"), "\n  bin blue at f two now \nsecond\n").unwrap();
    let csv = "video,audio,transcript,speaker,split\n\
               clips/a.vft,clips/a.wav,clips/a.txt,s1,train\n\
               clips/b.vft,clips/b.wav,clips/b.txt,s2,test\n";
    let path = dir.path().join("m.csv");
    std::fs::write(&path, csv).unwrap();
    let m = ClipManifest::load(&path).unwrap();
    assert_eq!(m.entries.len(), 2);
    assert_eq!(m.entries[0].video, sub.join("a.vft"));
    assert_eq!(m.split(Split::Test).map(|e| e.speaker.as_str()).collect::<Vec<_>>(), ["s2"]);
    assert_eq!(m.split(Split::Val).count(), 0);
    assert_eq!(read_transcript(&m.entries[0].transcript).unwrap(), "bin blue at f two now");

    let saved = dir.path().join("again.csv");
    m.save(&saved).unwrap();
    assert_eq!(ClipManifest::load(&saved).unwrap(), m);

    std::fs::write(&path, csv.replace("test", "holdout")).unwrap();
    assert!(matches!(ClipManifest::load(&path), Err(Error::Malformed { .. })));
    std::fs::remove_file(sub.join("b.wav")).unwrap();
    std::fs::write(&path, csv).unwrap();
    assert!(matches!(ClipManifest::load(&path), Err(Error::NotFound(p)) if p.ends_with("b.wav")));
    let entry = ManifestEntry {
        video: "v".into(),
        audio: "a".into(),
        transcript: "t".into(),
        speaker: "s".into(),
        split: Split::Val,
    };
    assert_eq!(entry.split, Split::Val);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn voc1_files_round_trip(frames in 0usize..40, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut b = VocoderFeatureBlock::zeros(frames);
        for v in b.se.iter_mut().chain(b.nap.iter_mut()).chain(b.f0.iter_mut()) {
            *v = f32_exact(rng.random());
        }
        for v in b.vuv.iter_mut() {
            *v = if rng.random::<bool>() { 1.0 } else { 0.0 };
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.voc");
        save_features(&path, &b).unwrap();
        prop_assert_eq!(load_features(&path).unwrap(), b);
        let bytes = std::fs::read(&path).unwrap();
        let cut = bytes.len() - 1;
        prop_assert!(read_voc1(&mut &bytes[..cut]).is_err());
    }
}
