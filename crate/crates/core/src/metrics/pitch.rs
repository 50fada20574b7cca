use crate::error::{Error, Result};
use crate::vocoder::F0Track;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F0Comparison {
    /// RMSE in Hz over frames voiced in both tracks; `None` when no frame is.
    pub rmse: Option<f64>,
    /// Fraction of frames whose voicing decisions differ.
    pub vuv_disagreement: f64,
}

pub fn f0_rmse(reference: &F0Track, estimate: &F0Track) -> Result<F0Comparison> {
    if reference.len() != estimate.len() {
        return Err(Error::FrameCountMismatch {
            expected: reference.len(),
            actual: estimate.len(),
        });
    }
    if reference.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sq = 0.0;
    let mut both = 0usize;
    let mut disagree = 0usize;
    for (&r, &e) in reference.values.iter().zip(&estimate.values) {
        match (r > 0.0, e > 0.0) {
            (true, true) => {
                sq += (r - e).powi(2);
                both += 1;
            }
            (false, false) => {}
            _ => disagree += 1,
        }
    }
    Ok(F0Comparison {
        rmse: (both > 0).then(|| (sq / both as f64).sqrt()),
        vuv_disagreement: disagree as f64 / reference.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(values: Vec<f64>) -> F0Track {
        F0Track { values, hop: 250, sample_rate: 50_000 }
    }

    #[test]
    fn identical_tracks() {
        let t = track(vec![100.0, 0.0, 120.0]);
        let c = f0_rmse(&t, &t).unwrap();
        assert_eq!(c.rmse, Some(0.0));
        assert_eq!(c.vuv_disagreement, 0.0);
    }

    #[test]
    fn constant_offset() {
        let a = track(vec![100.0; 600]);
        let b = track(vec![110.0; 600]);
        let c = f0_rmse(&a, &b).unwrap();
        assert!((c.rmse.unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn single_flip() {
        let a = track(vec![100.0; 600]);
        let mut v = vec![100.0; 600];
        v[17] = 0.0;
        let c = f0_rmse(&a, &track(v)).unwrap();
        assert!((c.vuv_disagreement - 1.0 / 600.0).abs() < 1e-15);
        assert_eq!(c.rmse, Some(0.0));
    }

    #[test]
    fn no_common_voicing_is_flagged_not_fatal() {
        let a = track(vec![0.0; 10]);
        let b = track(vec![100.0; 10]);
        let c = f0_rmse(&a, &b).unwrap();
        assert_eq!(c.rmse, None);
        assert_eq!(c.vuv_disagreement, 1.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(f0_rmse(&track(vec![0.0; 3]), &track(vec![0.0; 4])).is_err());
    }
}
