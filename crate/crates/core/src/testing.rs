//! Fixtures shared by the unit tests.

use crate::harness::{complex_gaussian, generate_random};
use crate::model::{CMat, ChannelSet, System, SystemDimensions, C64};
use crate::rates::InterferenceMode;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn scalar(v: f64) -> CMat {
    CMat::from_element(1, 1, c(v))
}

pub fn dims(
    bs_antennas: usize,
    user_antennas: &[usize],
    streams: &[usize],
    noise_var: f64,
) -> SystemDimensions {
    SystemDimensions {
        users: user_antennas.len(),
        bs_antennas,
        user_antennas: user_antennas.to_vec(),
        streams: streams.to_vec(),
        noise_var,
    }
}

/// `K` users with `N = r = 1`, unit channels and the given noise.
pub fn scalar_system(users: usize, noise_var: f64) -> System {
    let d = dims(1, &vec![1; users], &vec![1; users], noise_var);
    System::new(d, ChannelSet::new(vec![scalar(1.0); users])).unwrap()
}

/// Random channels and precoders of total power `power`.
pub fn random(d: SystemDimensions, seed: u64, power: f64) -> (System, Vec<CMat>) {
    let s = generate_random(d, seed, power, InterferenceMode::Sic).unwrap();
    let t = s.mac_filters.unwrap().precoders;
    (s.system, t)
}

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Haar-like random unitary from the QR factorization of a Gaussian matrix.
pub fn random_unitary(n: usize, seed: u64) -> CMat {
    complex_gaussian(&mut rng(seed), n, n).qr().q()
}

pub fn log2_det(a: &CMat) -> f64 {
    a.determinant().norm().log2()
}

pub fn max_entry_gap(a: &CMat, b: &CMat) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Independent Gaussian matrices of the given shapes.
pub fn gaussians(shapes: &[(usize, usize)], seed: u64) -> Vec<CMat> {
    let mut r = rng(seed);
    shapes
        .iter()
        .map(|&(m, n)| complex_gaussian(&mut r, m, n))
        .collect()
}
