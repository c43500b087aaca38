//! Seed derivation for named random substreams.
//!
//! Every random quantity in the toolkit flows from one master seed through
//! named, counted substreams so that a run is reproducible from its manifest
//! and independent of evaluation order or worker count.

/// SplitMix64 finalizer; full-period mixing of a 64-bit state.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn hash_str(tag: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf29ce484222325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derive the seed of substream `tag`, instance `index`, from `base`.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    mix(base ^ hash_str(tag)).wrapping_add(mix(index))
}

/// Stateless per-cell random draw in `[0, 1)`, decorrelated across cells.
///
/// Used where parallel workers must produce identical values regardless of
/// evaluation order (for instance per-pixel sensor noise).
pub fn cell_uniform(seed: u64, x: u64, y: u64, channel: u64) -> f64 {
    let h = mix(seed ^ mix(x.wrapping_mul(0x9e3779b97f4a7c15) ^ (y << 32) ^ channel));
    // 53 high bits -> [0, 1)
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Stateless per-cell standard normal draw (Box-Muller).
pub fn cell_normal(seed: u64, x: u64, y: u64) -> f64 {
    let u1 = cell_uniform(seed, x, y, 0).max(f64::MIN_POSITIVE);
    let u2 = cell_uniform(seed, x, y, 1);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
