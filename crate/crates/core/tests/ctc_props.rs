use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vid2voc::ctc::{best_path, best_path_decode, ctc_loss, min_frames, wer, Transcript, BLANK, NUM_SYMBOLS, SPACE};
use vid2voc::Error;

fn random_log_probs(rng: &mut ChaCha8Rng, steps: usize, classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(steps * classes);
    for _ in 0..steps {
        let row: Vec<f64> = (0..classes).map(|_| rng.random_range(0.05..1.0)).collect();
        let z: f64 = row.iter().sum();
        out.extend(row.iter().map(|p| (p / z).ln()));
    }
    out
}

fn one_hot(path: &[usize]) -> Vec<f64> {
    let mut lp = vec![-10.0; path.len() * NUM_SYMBOLS];
    for (t, &k) in path.iter().enumerate() {
        lp[t * NUM_SYMBOLS + k] = 0.0;
    }
    lp
}

#[test]
fn two_frame_uniform_example() {
    let lp = vec![-(NUM_SYMBOLS as f64).ln(); 2 * NUM_SYMBOLS];
    let r = ctc_loss(&lp, NUM_SYMBOLS, &[0], BLANK).unwrap();
    assert!((r.loss + (3.0f64 / 784.0).ln()).abs() < 1e-12);
}

#[test]
fn infeasible_targets_are_rejected() {
    let lp = vec![-(NUM_SYMBOLS as f64).ln(); 2 * NUM_SYMBOLS];
    // "aa" needs a separating blank
    let err = ctc_loss(&lp, NUM_SYMBOLS, &[0, 0], BLANK).unwrap_err();
    assert!(matches!(err, Error::InfeasibleTarget { required: 3, available: 2 }));
    assert!(ctc_loss(&lp, NUM_SYMBOLS, &[0, 1], BLANK).is_ok());
    assert!(ctc_loss(&lp, NUM_SYMBOLS, &[BLANK], BLANK).is_err());
    assert_eq!(min_frames(&[1, 1, 2, 2, 2]), 8);
}

#[test]
fn full_sequence_length_stays_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let lp = random_log_probs(&mut rng, 75, NUM_SYMBOLS);
    let t = Transcript::parse("bin blue at f two now").unwrap();
    let r = ctc_loss(&lp, NUM_SYMBOLS, t.labels(), BLANK).unwrap();
    assert!(r.loss.is_finite() && r.loss > 0.0);
    assert!(r.grad.iter().all(|g| g.is_finite() && *g <= 0.0));
    // each frame's occupancy sums to one
    for row in r.grad.chunks(NUM_SYMBOLS) {
        assert!((row.iter().sum::<f64>() + 1.0).abs() < 1e-9);
    }
}

#[test]
fn decode_examples() {
    let lp = one_hot(&[0, 0, BLANK, 1]);
    assert_eq!(best_path_decode(&lp).unwrap().text(), "ab");
    assert_eq!(best_path_decode(&one_hot(&[BLANK; 5])).unwrap().text(), "");
    assert_eq!(best_path_decode(&one_hot(&[0, BLANK, 0])).unwrap().text(), "aa");
    // ties go to the lowest index
    assert_eq!(best_path(&[0.0, 0.0, -1.0], 3, 2), vec![0]);
    assert!(best_path_decode(&[0.0; 5]).is_err());
}

#[test]
fn wer_examples() {
    assert_eq!(wer("bin blue at f two now", "bin blue at f two now").unwrap(), 0.0);
    assert!((wer("bin blue at f two now", "bin blue at m two now").unwrap() - 1.0 / 6.0).abs() < 1e-12);
    assert_eq!(wer("bin blue at f two now", "").unwrap(), 1.0);
    assert_eq!(wer("a b", "a x b").unwrap(), 0.5);
    assert!(wer("", "a").is_err());
}

#[test]
fn transcripts_normalize_and_reject_foreign_symbols() {
    let t = Transcript::parse("  Bin  BLUE at\tf ").unwrap();
    assert_eq!(t.text(), "bin blue at f");
    assert_eq!(t.labels()[3], SPACE);
    assert_eq!(t.words().count(), 4);
    assert!(matches!(Transcript::parse("b1n"), Err(Error::UnknownSymbol('1'))));
}

/// Every label sequence up to length `max_len` over `alphabet` non-blank
/// symbols.
fn all_targets(alphabet: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for t in &frontier {
            for k in 0..alphabet {
                let mut u: Vec<usize> = t.clone();
                u.push(k);
                next.push(u);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn probability_mass_over_targets_is_one(steps in 1usize..5, alphabet in 1usize..3, seed in any::<u64>()) {
        let classes = alphabet + 1;
        let blank = alphabet;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lp = random_log_probs(&mut rng, steps, classes);
        let mut mass = 0.0;
        for t in all_targets(alphabet, steps) {
            if min_frames(&t) <= steps {
                mass += (-ctc_loss(&lp, classes, &t, blank).unwrap().loss).exp();
            }
        }
        prop_assert!(mass <= 1.0 + 1e-12);
        prop_assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences(
        steps in 1usize..7, alphabet in 1usize..4, raw in prop::collection::vec(0usize..3, 0..4), seed in any::<u64>(),
    ) {
        let classes = alphabet + 1;
        let target: Vec<usize> = raw.iter().map(|&k| k % alphabet).collect();
        prop_assume!(min_frames(&target) <= steps);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lp = random_log_probs(&mut rng, steps, classes);
        let r = ctc_loss(&lp, classes, &target, alphabet).unwrap();
        let h = 1e-6;
        for i in 0..lp.len() {
            let mut p = lp.clone();
            p[i] += h;
            let up = ctc_loss(&p, classes, &target, alphabet).unwrap().loss;
            p[i] -= 2.0 * h;
            let down = ctc_loss(&p, classes, &target, alphabet).unwrap().loss;
            prop_assert!((r.grad[i] - (up - down) / (2.0 * h)).abs() < 1e-6);
        }
    }

    #[test]
    fn one_hot_best_path_recovers_text(words in prop::collection::vec("[a-z]{1,5}", 1..5), repeat in 1usize..3) {
        let t = Transcript::parse(&words.join(" ")).unwrap();
        // stretch each symbol and put a blank after every one, so repeats stay distinct
        let mut path = Vec::new();
        for &l in t.labels() {
            path.extend(std::iter::repeat_n(l, repeat));
            path.push(BLANK);
        }
        prop_assert_eq!(best_path_decode(&one_hot(&path)).unwrap(), t);
    }
}
