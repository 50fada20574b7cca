//! Connectionist temporal classification over the 28-symbol alphabet
//! (a-z, space, blank), best-path decoding and word error rate.

use crate::error::{Error, Result};

pub const NUM_SYMBOLS: usize = 28;
pub const SPACE: usize = 26;
pub const BLANK: usize = 27;

pub fn symbol_index(c: char) -> Result<usize> {
    match c {
        'a'..='z' => Ok(c as usize - 'a' as usize),
        ' ' => Ok(SPACE),
        _ => Err(Error::UnknownSymbol(c)),
    }
}

/// Printable form of a non-blank symbol index.
pub fn symbol_char(i: usize) -> Option<char> {
    match i {
        0..=25 => Some((b'a' + i as u8) as char),
        SPACE => Some(' '),
        _ => None,
    }
}

/// Lowercase text and its label sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    text: String,
    labels: Vec<usize>,
}

impl Transcript {
    /// Lowercases, collapses runs of whitespace to one space and trims.
    /// Any character outside a-z and space is an error.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        let labels = text.chars().map(symbol_index).collect::<Result<Vec<_>>>()?;
        Ok(Self { text, labels })
    }

    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        let text = labels
            .iter()
            .map(|&l| symbol_char(l).ok_or_else(|| Error::InvalidArgument(format!("label {l} is not printable"))))
            .collect::<Result<String>>()?;
        Ok(Self {
            text,
            labels: labels.to_vec(),
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.text.split(' ').filter(|w| !w.is_empty())
    }
}

/// Fewest frames that can emit `labels`: one per label plus a blank
/// between each pair of equal neighbours.
pub fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// CTC loss and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct CtcResult {
    /// `-ln P(labels | log_probs)`.
    pub loss: f64,
    /// Derivative of `loss` with respect to each entry of `log_probs`,
    /// treating the entries as independent inputs.
    pub grad: Vec<f64>,
}

/// Forward-backward in log space. `log_probs` is row-major `[T x classes]`.
pub fn ctc_loss(log_probs: &[f64], classes: usize, labels: &[usize], blank: usize) -> Result<CtcResult> {
    if classes == 0 || !log_probs.len().is_multiple_of(classes) {
        return Err(Error::Shape(format!(
            "{} log-probabilities do not form rows of {classes}",
            log_probs.len()
        )));
    }
    if blank >= classes {
        return Err(Error::InvalidArgument(format!("blank {blank} outside {classes} classes")));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= classes || l == blank) {
        return Err(Error::InvalidArgument(format!("label {l} is blank or out of range")));
    }
    if log_probs.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFinite("ctc log-probabilities".into()));
    }
    let t_len = log_probs.len() / classes;
    let required = min_frames(labels);
    if t_len < required || t_len == 0 {
        return Err(Error::InfeasibleTarget {
            required: required.max(1),
            available: t_len,
        });
    }

    // extended label sequence: blank, l1, blank, l2, ..., blank
    let s_len = 2 * labels.len() + 1;
    let ext = |s: usize| if s.is_multiple_of(2) { blank } else { labels[s / 2] };
    let can_skip = |s: usize| s >= 2 && s % 2 == 1 && ext(s) != ext(s - 2);
    let lp = |t: usize, k: usize| log_probs[t * classes + k];
    let neg = f64::NEG_INFINITY;

    let mut alpha = vec![neg; t_len * s_len];
    alpha[0] = lp(0, blank);
    if s_len > 1 {
        alpha[1] = lp(0, ext(1));
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut a = prev[s];
            if s >= 1 {
                a = log_add(a, prev[s - 1]);
            }
            if can_skip(s) {
                a = log_add(a, prev[s - 2]);
            }
            alpha[t * s_len + s] = a + lp(t, ext(s));
        }
    }

    // beta[t, s]: probability of the remainder after frame t given state s at t
    let mut beta = vec![neg; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[last + s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let next = (t + 1) * s_len;
            let mut b = beta[next + s] + lp(t + 1, ext(s));
            if s + 1 < s_len {
                b = log_add(b, beta[next + s + 1] + lp(t + 1, ext(s + 1)));
            }
            if s + 2 < s_len && can_skip(s + 2) {
                b = log_add(b, beta[next + s + 2] + lp(t + 1, ext(s + 2)));
            }
            beta[t * s_len + s] = b;
        }
    }

    let mut log_p = alpha[last + s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[last + s_len - 2]);
    }
    if log_p == neg {
        return Err(Error::Numerical("ctc target has zero probability".into()));
    }

    let mut grad = vec![0.0; log_probs.len()];
    let mut occupancy = vec![neg; classes];
    for t in 0..t_len {
        occupancy.iter_mut().for_each(|o| *o = neg);
        for s in 0..s_len {
            let k = ext(s);
            occupancy[k] = log_add(occupancy[k], alpha[t * s_len + s] + beta[t * s_len + s]);
        }
        for k in 0..classes {
            grad[t * classes + k] = -(occupancy[k] - log_p).exp();
        }
    }
    Ok(CtcResult { loss: -log_p, grad })
}

/// Per-frame argmax (ties to the lowest index), collapse repeats, drop
/// blanks.
pub fn best_path(log_probs: &[f64], classes: usize, blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for row in log_probs.chunks_exact(classes) {
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        if Some(best) != prev && best != blank {
            out.push(best);
        }
        prev = Some(best);
    }
    out
}

/// [`best_path`] over the full alphabet, as a transcript. Leading,
/// trailing and doubled spaces are kept out of the word list but remain in
/// the labels.
pub fn best_path_decode(log_probs: &[f64]) -> Result<Transcript> {
    if !log_probs.len().is_multiple_of(NUM_SYMBOLS) {
        return Err(Error::Shape(format!("{} values are not rows of {NUM_SYMBOLS}", log_probs.len())));
    }
    Transcript::from_labels(&best_path(log_probs, NUM_SYMBOLS, BLANK))
}

fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let next = (diag + usize::from(x != y)).min(row[j] + 1).min(row[j + 1] + 1);
            diag = row[j + 1];
            row[j + 1] = next;
        }
    }
    row[b.len()]
}

/// Word-level edit distance divided by the reference word count.
pub fn wer(reference: &str, hypothesis: &str) -> Result<f64> {
    let r: Vec<&str> = reference.split_whitespace().collect();
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    if r.is_empty() {
        return Err(Error::InvalidArgument("reference transcript is empty".into()));
    }
    Ok(edit_distance(&r, &h) as f64 / r.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(t: usize) -> Vec<f64> {
        vec![-(NUM_SYMBOLS as f64).ln(); t * NUM_SYMBOLS]
    }

    #[test]
    fn single_frame() {
        let mut lp = vec![(0.4f64 / 27.0).ln(); NUM_SYMBOLS];
        lp[0] = 0.6f64.ln();
        let r = ctc_loss(&lp, NUM_SYMBOLS, &[0], BLANK).unwrap();
        assert!((r.loss - 0.5108256237659907).abs() < 1e-12);
    }

    #[test]
    fn two_frames_uniform() {
        let r = ctc_loss(&uniform(2), NUM_SYMBOLS, &[0], BLANK).unwrap();
        assert!((r.loss + (3.0f64 / 784.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_bad_labels() {
        assert!(matches!(
            ctc_loss(&uniform(2), NUM_SYMBOLS, &[1, 1], BLANK),
            Err(Error::InfeasibleTarget { required: 3, available: 2 })
        ));
        assert!(ctc_loss(&uniform(3), NUM_SYMBOLS, &[BLANK], BLANK).is_err());
        assert!(ctc_loss(&uniform(3), NUM_SYMBOLS, &[1, 1], BLANK).is_ok());
    }

    #[test]
    fn empty_target_is_all_blank() {
        let r = ctc_loss(&uniform(4), NUM_SYMBOLS, &[], BLANK).unwrap();
        assert!((r.loss - 4.0 * (NUM_SYMBOLS as f64).ln()).abs() < 1e-12);
    }

    fn one_hot(path: &[usize]) -> Vec<f64> {
        let mut lp = vec![-30.0; path.len() * NUM_SYMBOLS];
        for (t, &k) in path.iter().enumerate() {
            lp[t * NUM_SYMBOLS + k] = 0.0;
        }
        lp
    }

    #[test]
    fn decoding_rules() {
        let (a, b) = (0, 1);
        assert_eq!(best_path_decode(&one_hot(&[a, a, BLANK, b])).unwrap().text(), "ab");
        assert_eq!(best_path_decode(&one_hot(&[BLANK; 5])).unwrap().text(), "");
        assert_eq!(best_path_decode(&one_hot(&[a, BLANK, a])).unwrap().text(), "aa");
        // ties go to the lowest index
        assert_eq!(best_path(&[0.0, 0.0, 0.0], 3, 2), vec![0]);
    }

    #[test]
    fn transcripts() {
        let t = Transcript::parse("  Bin  BLUE at f two now ").unwrap();
        assert_eq!(t.text(), "bin blue at f two now");
        assert_eq!(t.labels()[0], 1);
        assert_eq!(t.labels()[3], SPACE);
        assert_eq!(t.words().count(), 6);
        assert!(matches!(Transcript::parse("bin 2"), Err(Error::UnknownSymbol('2'))));
    }

    #[test]
    fn word_error_rate() {
        let s = "bin blue at f two now";
        assert_eq!(wer(s, s).unwrap(), 0.0);
        assert!((wer(s, "bin blue at m two now").unwrap() - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!(wer(s, "").unwrap(), 1.0);
        assert_eq!(wer(s, "bin blue blue at f two now").unwrap(), 1.0 / 6.0);
        assert!(wer("  ", s).is_err());
    }
}
