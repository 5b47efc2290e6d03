use crate::error::{BadsError, Result};

/// Radical inverse of `index` in `base`.
pub fn halton(index: u64, base: u64) -> Result<f64> {
    if index == 0 || base < 2 {
        return Err(BadsError::Domain(format!("halton needs index >= 1 and base >= 2, got ({index}, {base})")));
    }
    let mut i = index;
    let mut f = 1.0;
    let mut r = 0.0;
    let b = base as f64;
    while i > 0 {
        f /= b;
        r += f * (i % base) as f64;
        i /= base;
    }
    Ok(r)
}

/// First `n` points of the 2-D Halton sequence in bases 2 and 3.
pub fn halton_2d(n: usize) -> Vec<(f64, f64)> {
    (1..=n as u64)
        .map(|i| (halton(i, 2).expect("valid"), halton(i, 3).expect("valid")))
        .collect()
}
