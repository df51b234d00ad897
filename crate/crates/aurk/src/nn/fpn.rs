//! Feature-pyramid level assignment for an RoI of a given size.

/// k = k0 + floor(log2(sqrt(w * h) / 224)), clamped to the available
/// pyramid range. Follows the original pyramid convention of flooring.
pub fn fpn_level(w: f64, h: f64, k0: i32, k_min: i32, k_max: i32) -> i32 {
    debug_assert!(w > 0.0 && h > 0.0);
    let k = k0 + ((w * h).sqrt() / 224.0).log2().floor() as i32;
    k.clamp(k_min, k_max)
}
