use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Half-width of the normalized Xavier uniform distribution.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// `count` weights drawn i.i.d. from `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<R: Rng + ?Sized>(
    count: usize,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Vec<f64> {
    assert!(fan_in > 0 && fan_out > 0, "fans must be positive");
    let a = xavier_bound(fan_in, fan_out);
    (0..count).map(|_| rng.gen_range(-a..=a)).collect()
}

/// Seeded form of [`xavier_uniform`].
pub fn xavier_init(count: usize, fan_in: usize, fan_out: usize, seed: u64) -> Vec<f64> {
    xavier_uniform(count, fan_in, fan_out, &mut ChaCha8Rng::seed_from_u64(seed))
}
