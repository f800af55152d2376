//! Small numeric helpers: deterministic seed derivation, grids, quantiles.

/// Derive a child seed from a base seed and an index.
///
/// Two rounds of the SplitMix64 finalizer; stable across platforms, so all
/// seeded sampling in the crate is reproducible bit-for-bit.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    for _ in 0..2 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// `n` uniformly spaced points spanning `[a, b]` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2, "linspace needs at least two points");
    let h = (b - a) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { b } else { a + h * i as f64 })
        .collect()
}

/// `n` log-uniformly spaced points spanning `[a, b]` inclusive; `a, b > 0`.
pub fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(a > 0.0 && b > 0.0);
    linspace(a.ln(), b.ln(), n).into_iter().map(f64::exp).collect()
}

/// Quantile with linear interpolation between order statistics (type 7).
///
/// `sorted` must be ascending and nonempty; `p` in `[0, 1]`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    assert!((0.0..=1.0).contains(&p));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// The `i`-th element of the Halton sequence in the given prime base.
pub fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut value = 0.0;
    while index > 0 {
        f /= base as f64;
        value += f * (index % base) as f64;
        index /= base;
    }
    value
}
