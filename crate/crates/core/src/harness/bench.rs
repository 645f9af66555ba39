//! Timing of the covariance baseline against the filter duality.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::duality_covariance::mac_to_bc_covariance;
use crate::duality_sic::mac_to_bc_with;
use crate::error::Result;
use crate::filter_duality::Parallelism;
use crate::model::{CovarianceSet, Domain, SystemDimensions};
use crate::rates::InterferenceMode;

use super::scenario::generate_random;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub users: Vec<usize>,
    pub bs_antennas: usize,
    pub user_antennas: usize,
    pub streams: usize,
    pub noise_var: f64,
    pub power: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            users: vec![2, 4, 8],
            bs_antennas: 8,
            user_antennas: 2,
            streams: 2,
            noise_var: 1.0,
            power: 10.0,
            trials: 5,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    #[serde(rename = "K")]
    pub users: usize,
    #[serde(rename = "N")]
    pub bs_antennas: usize,
    pub sum_l: usize,
    pub trials: usize,
    pub median_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
    /// Largest entrywise difference between serial and parallel filter
    /// outputs over all trials.
    pub max_parallel_deviation: f64,
}

impl BenchTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,K,N,sum_L,trials,median_ms\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{:.4}\n",
                r.method, r.users, r.bs_antennas, r.sum_l, r.trials, r.median_ms
            ));
        }
        out
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn elapsed_ms<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64() * 1e3))
}

fn max_deviation(a: &[crate::model::CMat], b: &[crate::model::CMat]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).iter().map(|z| z.norm()).fold(0.0, f64::max))
        .fold(0.0, f64::max)
}

pub fn run_bench(config: &BenchConfig) -> Result<BenchTable> {
    let mut rows = Vec::new();
    let mut max_parallel_deviation = 0.0f64;
    for &k in &config.users {
        let dims = SystemDimensions {
            users: k,
            bs_antennas: config.bs_antennas,
            user_antennas: vec![config.user_antennas; k],
            streams: vec![config.streams; k],
            noise_var: config.noise_var,
        };
        let sum_l = config.streams * k;
        let mut times = [Vec::new(), Vec::new(), Vec::new()];
        for trial in 0..config.trials {
            let seed = config.seed.wrapping_add(trial as u64);
            let scenario =
                generate_random(dims.clone(), seed, config.power, InterferenceMode::Sic)?;
            let system = &scenario.system;
            let precoders = &scenario
                .mac_filters
                .as_ref()
                .expect("generated precoders")
                .precoders;
            let q = CovarianceSet::from_precoders(Domain::Mac, precoders);

            let (_, t_cov) = elapsed_ms(|| mac_to_bc_covariance(system, &q))?;
            let (serial, t_ser) =
                elapsed_ms(|| mac_to_bc_with(system, precoders, Parallelism::Serial))?;
            let (parallel, t_par) =
                elapsed_ms(|| mac_to_bc_with(system, precoders, Parallelism::Parallel))?;
            max_parallel_deviation = max_parallel_deviation
                .max(max_deviation(&serial.bc.precoders, &parallel.bc.precoders))
                .max(max_deviation(
                    serial.bc.receivers.as_deref().unwrap_or(&[]),
                    parallel.bc.receivers.as_deref().unwrap_or(&[]),
                ));
            times[0].push(t_cov);
            times[1].push(t_ser);
            times[2].push(t_par);
        }
        for (method, t) in ["covariance_serial", "filter_serial", "filter_parallel"]
            .into_iter()
            .zip(times)
        {
            rows.push(BenchRow {
                method: method.into(),
                users: k,
                bs_antennas: config.bs_antennas,
                sum_l,
                trials: config.trials,
                median_ms: median(t),
            });
        }
    }
    Ok(BenchTable {
        rows,
        max_parallel_deviation,
    })
}
