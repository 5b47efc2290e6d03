/// Stream tags mixed into derived seeds so that the reference exam, the
/// simulated responses and random tone picks never share a generator.
pub const EXAM_STREAM: u64 = 0x6578_616d;
pub const RESPONSE_STREAM: u64 = 0x7265_7370;
pub const SELECTION_STREAM: u64 = 0x7069_636b;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes `master` together with `parts` into an independent seed.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(master), |h, p| splitmix64(h ^ splitmix64(*p)))
}
