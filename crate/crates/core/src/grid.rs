//! Discretization helpers shared by every protocol.
//!
//! Predictions exchanged between the parties live on the grid
//! `{0, 1/m, ..., 1}`. Rounding clips to `[0, 1]` first and breaks exact
//! ties downward, so that replays are bit-exact.

/// Index `k` of the grid point `k/m` nearest to `v` (ties go down).
pub fn grid_index(v: f64, m: u32) -> u32 {
    assert!(m >= 1, "grid size must be positive");
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    let k = (v * m as f64 - 0.5).ceil();
    (k.max(0.0) as u32).min(m)
}

/// Value of grid point `k` on the `1/m` grid.
#[inline]
pub fn grid_value(k: u32, m: u32) -> f64 {
    k as f64 / m as f64
}

/// Nearest multiple of `1/m` after clipping to `[0, 1]`.
pub fn round_to_grid(v: f64, m: u32) -> f64 {
    grid_value(grid_index(v, m), m)
}

/// Re-round an index on the `1/m²`-style fine grid `fine = coarse * factor`
/// onto the coarse grid, exactly, with ties going down.
pub fn coarsen_index(j: u32, factor: u32) -> u32 {
    let q = j / factor;
    let r = j % factor;
    if 2 * r > factor {
        q + 1
    } else {
        q
    }
}

/// Clip to the unit interval.
#[inline]
pub fn clip01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}
