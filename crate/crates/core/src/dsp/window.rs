use std::f64::consts::PI;

/// Periodic Hann window (COLA at hop = len/2 and len/4).
pub fn hann_periodic(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos())
        .collect()
}

/// Symmetric Hann window without the zero end points, so that every tap
/// carries weight even for very short windows.
pub fn hann_symmetric(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * (i + 1) as f64 / (len + 1) as f64).cos())
        .collect()
}
