use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use vid2voc::features::{FeatureConfig, FeaturePipeline, NormalizationStats, NUM_COEFFS};
use vid2voc::io::save_stats;
use vid2voc::model::{ModelConfig, Vid2Voc};
use vid2voc::synth::synthetic_utterance;
use vid2voc::training::save_checkpoint;
use vid2voc_ffi::*;

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    // SAFETY: buffer holds 256 bytes.
    unsafe { v2v_last_error(buf.as_mut_ptr(), buf.len()) };
    // SAFETY: v2v_last_error always terminates the string.
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

struct Fixture {
    _dir: tempfile::TempDir,
    checkpoint: PathBuf,
    stats: PathBuf,
    model: Vid2Voc<f32>,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let model = Vid2Voc::<f32>::new(ModelConfig::tiny(), 17).unwrap();
    let checkpoint = dir.path().join("tiny.ckpt");
    save_checkpoint(&checkpoint, &model, None).unwrap();
    let pipeline = FeaturePipeline::new(FeatureConfig::default()).unwrap();
    let mut min = [0.0; NUM_COEFFS];
    let mut max = [1.0; NUM_COEFFS];
    for i in 0..NUM_COEFFS - 1 {
        min[i] = if i < 60 { -20.0 } else { 0.0 };
        max[i] = if i < 60 { 5.0 } else { 1.0 };
    }
    min[NUM_COEFFS - 1] = 80f64.ln();
    max[NUM_COEFFS - 1] = 300f64.ln();
    let stats = dir.path().join("s.vst");
    save_stats(
        &stats,
        &NormalizationStats {
            min,
            max,
            fingerprint: pipeline.fingerprint(),
        },
    )
    .unwrap();
    Fixture {
        _dir: dir,
        checkpoint,
        stats,
        model,
    }
}

fn clip_values(n: usize) -> Vec<f32> {
    (0..n).map(|i| ((i * 7919) % 2001) as f32 / 1000.0 - 1.0).collect()
}

#[test]
fn forward_copy_transcript_and_synthesis() {
    let f = fixture();
    let path = cstr(&f.checkpoint);
    let mut model = ptr::null_mut();
    // SAFETY: all pointers below are live locals or handles from the library.
    unsafe {
        assert_eq!(v2v_model_load(path.as_ptr(), &mut model), V2vStatus::Ok);
        let mut dims = [0usize; 4];
        assert_eq!(v2v_model_input_dims(model, dims.as_mut_ptr()), V2vStatus::Ok);
        assert_eq!(dims, [75, 3, 16, 24]);
        let video = clip_values(dims.iter().product());
        let mut out = ptr::null_mut();
        assert_eq!(v2v_model_forward(model, video.as_ptr(), video.len(), &mut out), V2vStatus::Ok);

        let clip = vid2voc::video::VideoClipTensor::new(video.clone(), 75, 3, 16, 24).unwrap();
        let direct = f.model.forward(&[&clip]).unwrap().remove(0);
        for (field, want, n) in [
            (V2vField::Se, &direct.w_se, 75 * 60 * 8),
            (V2vField::Nap, &direct.w_nap, 75 * 5 * 8),
            (V2vField::F0, &direct.w_f0, 75 * 8),
            (V2vField::Vuv, &direct.w_vuv, 75 * 8),
            (V2vField::Vsr, &direct.vsr, 75 * 28),
        ] {
            assert_eq!(v2v_output_len(out, field), n);
            let mut buf = vec![0.0; n];
            assert_eq!(v2v_output_copy(out, field, buf.as_mut_ptr(), n), V2vStatus::Ok);
            assert_eq!(&buf, want, "{field:?}");
        }
        let mut short = vec![0.0; 10];
        assert_eq!(v2v_output_copy(out, V2vField::Se, short.as_mut_ptr(), 10), V2vStatus::BufferTooSmall);
        assert!(last_error().contains("36000 needed"));

        let mut needed = 0usize;
        let mut one = [0 as c_char; 1];
        let want = vid2voc::ctc::best_path_decode(&direct.vsr).unwrap();
        let status = v2v_output_transcript(out, one.as_mut_ptr(), 1, &mut needed);
        assert_eq!(needed, want.text().len() + 1);
        if needed > 1 {
            assert_eq!(status, V2vStatus::BufferTooSmall);
        }
        let mut text = vec![0 as c_char; needed];
        assert_eq!(v2v_output_transcript(out, text.as_mut_ptr(), needed, &mut needed), V2vStatus::Ok);
        assert_eq!(CStr::from_ptr(text.as_ptr()).to_str().unwrap(), want.text());

        let stats = cstr(&f.stats);
        let mut voc = ptr::null_mut();
        assert_eq!(v2v_vocoder_new(stats.as_ptr(), &mut voc), V2vStatus::Ok);
        let n = v2v_vocoder_output_len(voc, out);
        assert_eq!(n, 150_000);
        let mut audio = vec![0.0; n];
        assert_eq!(v2v_vocoder_synthesize(voc, out, audio.as_mut_ptr(), n), V2vStatus::Ok);
        assert!(audio.iter().all(|v| v.is_finite()) && audio.iter().any(|&v| v != 0.0));
        assert_eq!(v2v_vocoder_synthesize(voc, out, audio.as_mut_ptr(), n - 1), V2vStatus::BufferTooSmall);

        let wrong = [0.0f32; 10];
        let mut other = ptr::null_mut();
        assert_eq!(v2v_model_forward(model, wrong.as_ptr(), 10, &mut other), V2vStatus::ConfigMismatch);
        assert!(other.is_null());

        v2v_vocoder_free(voc);
        v2v_output_free(out);
        v2v_model_free(model);
    }
}

#[test]
fn null_and_missing_arguments() {
    // SAFETY: every pointer is null, a live local, or a valid C string.
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(v2v_model_load(ptr::null(), &mut model), V2vStatus::NullArgument);
        assert!(last_error().contains("path"));
        let missing = CString::new("/nonexistent/model.ckpt").unwrap();
        assert_eq!(v2v_model_load(missing.as_ptr(), &mut model), V2vStatus::NotFound);
        assert!(model.is_null());
        assert_eq!(v2v_model_input_dims(ptr::null(), ptr::null_mut()), V2vStatus::NullArgument);
        assert_eq!(v2v_output_len(ptr::null(), V2vField::Se), 0);
        assert_eq!(v2v_vocoder_output_len(ptr::null(), ptr::null()), 0);
        let mut voc = ptr::null_mut();
        assert_eq!(v2v_vocoder_new(missing.as_ptr(), &mut voc), V2vStatus::NotFound);
        v2v_model_free(ptr::null_mut());
        v2v_output_free(ptr::null_mut());
        v2v_vocoder_free(ptr::null_mut());

        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.ckpt");
        std::fs::write(&junk, b"not a checkpoint").unwrap();
        let junk = cstr(&junk);
        assert_eq!(v2v_model_load(junk.as_ptr(), &mut model), V2vStatus::InvalidData);

        // a message longer than the buffer is truncated but fully counted
        let mut tiny = [0 as c_char; 4];
        let full = v2v_last_error(tiny.as_mut_ptr(), 4);
        assert!(full > 3);
        assert_eq!(CStr::from_ptr(tiny.as_ptr()).to_bytes().len(), 3);
        assert_eq!(v2v_last_error(ptr::null_mut(), 0), full);

        let version = CStr::from_ptr(v2v_version()).to_str().unwrap();
        assert_eq!(version, env!("CARGO_PKG_VERSION"));
    }
}

#[test]
fn metrics_through_the_c_interface() {
    let u = synthetic_utterance(4);
    let x = u.audio.samples();
    let mut score = 0.0;
    // SAFETY: slices are live for their lengths; outputs are locals.
    unsafe {
        assert_eq!(v2v_estoi(x.as_ptr(), x.as_ptr(), x.len(), 50_000, &mut score), V2vStatus::Ok);
        assert!((score - 1.0).abs() < 1e-9);
        assert_eq!(v2v_estoi(x.as_ptr(), x.as_ptr(), 100, 50_000, &mut score), V2vStatus::InvalidData);

        // T=2, target "a", uniform over 28 symbols
        let lp = vec![-(28f64).ln(); 56];
        let labels = [0usize];
        let mut loss = 0.0;
        let mut grad = vec![0.0; 56];
        assert_eq!(
            v2v_ctc_loss(lp.as_ptr(), 2, 28, labels.as_ptr(), 1, 27, &mut loss, grad.as_mut_ptr()),
            V2vStatus::Ok
        );
        assert!((loss + (3.0f64 / 784.0).ln()).abs() < 1e-12);
        assert!((grad.iter().sum::<f64>() + 2.0).abs() < 1e-12);
        assert_eq!(
            v2v_ctc_loss(lp.as_ptr(), 2, 28, labels.as_ptr(), 1, 27, &mut loss, ptr::null_mut()),
            V2vStatus::Ok
        );
        let repeated = [0usize, 0];
        assert_eq!(
            v2v_ctc_loss(lp.as_ptr(), 2, 28, repeated.as_ptr(), 2, 27, &mut loss, ptr::null_mut()),
            V2vStatus::InvalidData
        );
        assert_eq!(
            v2v_ctc_loss(ptr::null(), 2, 28, labels.as_ptr(), 1, 27, &mut loss, ptr::null_mut()),
            V2vStatus::NullArgument
        );
    }
}

const C_PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include <string.h>
#include "vid2voc.h"

int main(void) {
    double lp[56];
    for (int i = 0; i < 56; i++) lp[i] = -log(28.0);
    size_t labels[1] = {0};
    double loss = 0.0;
    if (v2v_ctc_loss(lp, 2, 28, labels, 1, 27, &loss, NULL) != V2V_STATUS_OK) return 1;
    if (fabs(loss + log(3.0 / 784.0)) > 1e-12) return 2;
    V2vModel *model = NULL;
    if (v2v_model_load(NULL, &model) != V2V_STATUS_NULL_ARGUMENT) return 3;
    char msg[64];
    v2v_last_error(msg, sizeof msg);
    if (strstr(msg, "null") == NULL) return 4;
    printf("%s\n", v2v_version());
    return 0;
}
"#;

/// Compiles a C program against the generated header and the static
/// library and runs it. Skipped when no C compiler is on the path.
#[test]
fn header_compiles_and_links_from_c() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if std::process::Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler, skipping");
        return;
    }
    let exe_dir = std::env::current_exe().unwrap();
    let profile_dir = exe_dir.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libvid2voc_ffi.a");
    assert!(lib.exists(), "static library not built at {}", lib.display());
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let bin = dir.path().join("main");
    let status = std::process::Command::new(&cc)
        .args(["-std=c11", "-Wall", "-Werror", "-o"])
        .arg(&bin)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .unwrap();
    assert!(status.success(), "C build failed");
    let run = std::process::Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "C program exited with {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
