//! Scenario files and seeded random generation.
//!
//! A scenario is a JSON object with keys `dims`, `channels`, optional
//! `mac_filters` / `bc_filters`, `seed` and `mode`. Complex numbers are
//! `[re, im]` pairs and matrices are arrays of rows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BcFilterSet, CMat, ChannelSet, MacFilterSet, System, SystemDimensions, C64};
use crate::rates::InterferenceMode;

type JsonMatrix = Vec<Vec<[f64; 2]>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JsonFilters {
    precoders: Vec<JsonMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    receivers: Option<Vec<JsonMatrix>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JsonScenario {
    dims: SystemDimensions,
    channels: Vec<JsonMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mac_filters: Option<JsonFilters>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bc_filters: Option<JsonFilters>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    mode: InterferenceMode,
}

/// A validated system together with optional filters in either domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub system: System,
    pub mac_filters: Option<MacFilterSet>,
    pub bc_filters: Option<BcFilterSet>,
    pub seed: u64,
    pub mode: InterferenceMode,
}

fn to_json_matrix(m: &CMat) -> JsonMatrix {
    m.row_iter()
        .map(|row| row.iter().map(|z| [z.re, z.im]).collect())
        .collect()
}

fn from_json_matrix(rows: &JsonMatrix, what: &str) -> Result<CMat> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!("ragged rows in {what}")));
    }
    Ok(CMat::from_fn(nrows, ncols, |i, j| {
        let [re, im] = rows[i][j];
        C64::new(re, im)
    }))
}

fn from_json_list(list: &[JsonMatrix], what: &str) -> Result<Vec<CMat>> {
    list.iter()
        .enumerate()
        .map(|(k, m)| from_json_matrix(m, &format!("{what}[{k}]")))
        .collect()
}

impl Scenario {
    /// Validates the filter sets against the system dimensions.
    pub fn new(
        system: System,
        mac_filters: Option<MacFilterSet>,
        bc_filters: Option<BcFilterSet>,
        seed: u64,
        mode: InterferenceMode,
    ) -> Result<Self> {
        if let Some(f) = &mac_filters {
            f.check(system.dims())?;
        }
        if let Some(f) = &bc_filters {
            f.check(system.dims())?;
        }
        Ok(Scenario {
            system,
            mac_filters,
            bc_filters,
            seed,
            mode,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: JsonScenario = serde_json::from_str(text)
            .map_err(|e| Error::Dimension(format!("scenario JSON: {e}")))?;
        Self::from_raw(raw)
    }

    /// Accepts either a bare scenario or a conversion output that wraps one
    /// under the key `scenario`.
    pub fn from_json_lenient(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::Dimension(format!("scenario JSON: {e}")))?;
        let inner = match value.get("scenario") {
            Some(s) => s.clone(),
            None => value,
        };
        let raw: JsonScenario = serde_json::from_value(inner)
            .map_err(|e| Error::Dimension(format!("scenario JSON: {e}")))?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: JsonScenario) -> Result<Self> {
        let channels = from_json_list(&raw.channels, "channels")?;
        let system = System::new(raw.dims, ChannelSet::new(channels))?;
        let mac_filters = raw
            .mac_filters
            .map(|f| -> Result<MacFilterSet> {
                Ok(MacFilterSet {
                    precoders: from_json_list(&f.precoders, "mac precoders")?,
                    receivers: f
                        .receivers
                        .map(|r| from_json_list(&r, "mac receivers"))
                        .transpose()?,
                })
            })
            .transpose()?;
        let bc_filters = raw
            .bc_filters
            .map(|f| -> Result<BcFilterSet> {
                Ok(BcFilterSet {
                    precoders: from_json_list(&f.precoders, "bc precoders")?,
                    receivers: f
                        .receivers
                        .map(|r| from_json_list(&r, "bc receivers"))
                        .transpose()?,
                })
            })
            .transpose()?;
        Scenario::new(system, mac_filters, bc_filters, raw.seed, raw.mode)
    }

    fn to_raw(&self) -> JsonScenario {
        let list = |ms: &[CMat]| ms.iter().map(to_json_matrix).collect::<Vec<_>>();
        JsonScenario {
            dims: self.system.dims().clone(),
            channels: list(&self.system.channels().matrices),
            mac_filters: self.mac_filters.as_ref().map(|f| JsonFilters {
                precoders: list(&f.precoders),
                receivers: f.receivers.as_deref().map(list),
            }),
            bc_filters: self.bc_filters.as_ref().map(|f| JsonFilters {
                precoders: list(&f.precoders),
                receivers: f.receivers.as_deref().map(list),
            }),
            seed: self.seed,
            mode: self.mode,
        }
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self.to_raw()).expect("scenario serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_raw()).expect("scenario serializes")
    }
}

/// Stream id of user `k`'s channel; its precoder uses the next id.
fn stream_id(k: usize) -> u64 {
    2 * k as u64
}

fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `rows x cols` matrix with i.i.d. CN(0, 1) entries.
pub fn complex_gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(s * re, s * im)
    })
}

/// Random channels and MAC precoders. Each user draws from its own ChaCha
/// stream, so a user's matrices depend only on the seed and its index.
/// Precoders are scaled to a total power of `power_budget`.
pub fn generate_random(
    dims: SystemDimensions,
    seed: u64,
    power_budget: f64,
    mode: InterferenceMode,
) -> Result<Scenario> {
    dims.validate()?;
    if !(power_budget >= 0.0) || !power_budget.is_finite() {
        return Err(Error::Dimension(format!(
            "power budget must be finite and nonnegative, got {power_budget}"
        )));
    }
    let n = dims.bs_antennas;
    let mut channels = Vec::with_capacity(dims.users);
    let mut precoders = Vec::with_capacity(dims.users);
    for k in 0..dims.users {
        let r = dims.user_antennas[k];
        channels.push(complex_gaussian(&mut rng_for(seed, stream_id(k)), n, r));
        precoders.push(complex_gaussian(
            &mut rng_for(seed, stream_id(k) + 1),
            r,
            dims.streams[k],
        ));
    }
    let total = crate::model::sum_power(&precoders);
    let scale = if power_budget == 0.0 || total == 0.0 {
        0.0
    } else {
        (power_budget / total).sqrt()
    };
    for t in &mut precoders {
        *t *= C64::new(scale, 0.0);
    }
    let system = System::new(dims, ChannelSet::new(channels))?;
    Scenario::new(system, Some(MacFilterSet::new(precoders)), None, seed, mode)
}

/// Bounds for [`sample_dimensions`].
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionRanges {
    pub users: (usize, usize),
    pub bs_antennas: (usize, usize),
    pub user_antennas: (usize, usize),
    pub noise_vars: Vec<f64>,
}

impl Default for DimensionRanges {
    fn default() -> Self {
        DimensionRanges {
            users: (1, 4),
            bs_antennas: (2, 8),
            user_antennas: (1, 4),
            noise_vars: vec![0.1, 1.0, 10.0],
        }
    }
}

/// Draws dimensions uniformly from inclusive ranges, with
/// `1 <= L_k <= min(r_k, N)`.
pub fn sample_dimensions(seed: u64, ranges: &DimensionRanges) -> SystemDimensions {
    let mut rng = rng_for(seed, u64::MAX);
    let users = rng.random_range(ranges.users.0..=ranges.users.1);
    let bs_antennas = rng.random_range(ranges.bs_antennas.0..=ranges.bs_antennas.1);
    let user_antennas: Vec<usize> = (0..users)
        .map(|_| rng.random_range(ranges.user_antennas.0..=ranges.user_antennas.1))
        .collect();
    let streams = user_antennas
        .iter()
        .map(|&r| rng.random_range(1..=r.min(bs_antennas)))
        .collect();
    let noise_var = ranges.noise_vars[rng.random_range(0..ranges.noise_vars.len())];
    SystemDimensions {
        users,
        bs_antennas,
        user_antennas,
        streams,
        noise_var,
    }
}
