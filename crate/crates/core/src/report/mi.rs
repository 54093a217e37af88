//! Plug-in mutual information between bucketed observations and actions.

use std::collections::BTreeMap;

/// Number of observation buckets.
pub const OBS_BUCKETS: u8 = 16;

/// Quantizes each feature to a byte (clamped to `[0, 1]`), hashes the bytes
/// with 64-bit FNV-1a followed by a splitmix finalizer, and keeps the low
/// four bits.
pub fn obs_bucket(features: &[f64]) -> u8 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &f in features {
        let b = if f.is_nan() { 0 } else { (f.clamp(0.0, 1.0) * 255.0).round() as u8 };
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^= h >> 31;
    (h % u64::from(OBS_BUCKETS)) as u8
}

fn entropy_bits<I: IntoIterator<Item = usize>>(counts: I, total: f64) -> f64 {
    counts
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum()
}

/// `H(A) − H(A|O)` in bits over `(bucket, action)` pairs. Zero for an empty log.
pub fn mutual_information(log: &[(u8, usize)]) -> f64 {
    if log.is_empty() {
        return 0.0;
    }
    let total = log.len() as f64;
    let mut a: BTreeMap<usize, usize> = BTreeMap::new();
    let mut o: BTreeMap<u8, usize> = BTreeMap::new();
    let mut oa: BTreeMap<(u8, usize), usize> = BTreeMap::new();
    for &(b, act) in log {
        *a.entry(act).or_default() += 1;
        *o.entry(b).or_default() += 1;
        *oa.entry((b, act)).or_default() += 1;
    }
    let h_a = entropy_bits(a.into_values(), total);
    // H(A|O) = H(O, A) − H(O)
    let h_a_given_o = entropy_bits(oa.into_values(), total) - entropy_bits(o.into_values(), total);
    (h_a - h_a_given_o).max(0.0)
}
