//! Domain types shared by every conversion: system dimensions, channels,
//! filter sets, covariance sets, scaling solutions and rate reports.
//!
//! Users are indexed from zero. With interference cancellation, user 0 is
//! decoded last in the MAC and precoded first in the BC; other orders are
//! obtained by relabelling with [`apply_user_order`].

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics;

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;

/// Relative tolerance for structural checks (Hermitian symmetry, unitarity).
pub const STRUCTURAL_TOL: f64 = 1e-10;
/// Smallest admissible eigenvalue of a PSD matrix, relative to its largest.
pub const PSD_TOL: f64 = 1e-9;

/// Which side of the duality a set of filters or covariances belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Mac,
    Bc,
}

impl Domain {
    pub fn dual(self) -> Domain {
        match self {
            Domain::Mac => Domain::Bc,
            Domain::Bc => Domain::Mac,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemDimensions {
    /// Number of users `K`.
    pub users: usize,
    /// Base-station antennas `N`.
    pub bs_antennas: usize,
    /// Antennas of each user.
    pub user_antennas: Vec<usize>,
    /// Data streams of each user.
    pub streams: Vec<usize>,
    /// Noise variance per receive antenna, linear units.
    pub noise_var: f64,
}

impl SystemDimensions {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 {
            return Err(Error::Dimension("at least one user is required".into()));
        }
        if self.bs_antennas == 0 {
            return Err(Error::Dimension(
                "base station needs at least one antenna".into(),
            ));
        }
        if self.user_antennas.len() != self.users || self.streams.len() != self.users {
            return Err(Error::Dimension(format!(
                "{} users but {} antenna counts and {} stream counts",
                self.users,
                self.user_antennas.len(),
                self.streams.len()
            )));
        }
        for (k, (&r, &l)) in self.user_antennas.iter().zip(&self.streams).enumerate() {
            if r == 0 {
                return Err(Error::Dimension(format!("user {k} has no antennas")));
            }
            if l == 0 || l > r.min(self.bs_antennas) {
                return Err(Error::Dimension(format!(
                    "user {k}: {l} streams with {r} user antennas and {} base-station antennas",
                    self.bs_antennas
                )));
            }
        }
        if !self.noise_var.is_finite() {
            return Err(Error::NonFinite("noise variance".into()));
        }
        if self.noise_var <= 0.0 {
            return Err(Error::NoiseVariance(self.noise_var));
        }
        Ok(())
    }

    pub fn total_streams(&self) -> usize {
        self.streams.iter().sum()
    }

    pub fn layout(&self) -> StreamLayout {
        StreamLayout::new(&self.streams)
    }

    fn permuted(&self, perm: &[usize]) -> SystemDimensions {
        SystemDimensions {
            users: self.users,
            bs_antennas: self.bs_antennas,
            user_antennas: permute(&self.user_antennas, perm),
            streams: permute(&self.streams, perm),
            noise_var: self.noise_var,
        }
    }
}

/// User-major, stream-minor flattening of `(user, stream)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamLayout {
    offsets: Vec<usize>,
    counts: Vec<usize>,
}

impl StreamLayout {
    pub fn new(counts: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(counts.len());
        let mut acc = 0;
        for &c in counts {
            offsets.push(acc);
            acc += c;
        }
        StreamLayout {
            offsets,
            counts: counts.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.offsets
            .last()
            .map_or(0, |o| o + self.counts[self.counts.len() - 1])
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn users(&self) -> usize {
        self.counts.len()
    }

    pub fn streams(&self, user: usize) -> usize {
        self.counts[user]
    }

    pub fn index(&self, user: usize, stream: usize) -> usize {
        debug_assert!(stream < self.counts[user]);
        self.offsets[user] + stream
    }

    /// Iterates `(flat index, user, stream)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .flat_map(move |(k, &c)| (0..c).map(move |i| (self.offsets[k] + i, k, i)))
    }

    /// Splits a flat per-stream list into per-user lists.
    pub fn split<T: Clone>(&self, flat: &[T]) -> Vec<Vec<T>> {
        self.offsets
            .iter()
            .zip(&self.counts)
            .map(|(&o, &c)| flat[o..o + c].to_vec())
            .collect()
    }
}

/// MAC channel matrices `H[k]` of shape `N x r_k`. The BC channel of user
/// `k` is `H[k]` Hermitian-transposed.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub matrices: Vec<CMat>,
}

impl ChannelSet {
    pub fn new(matrices: Vec<CMat>) -> Self {
        ChannelSet { matrices }
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }
}

/// Checks every invariant of the dimensions and the channel shapes.
pub fn validate(dims: &SystemDimensions, channels: &ChannelSet) -> Result<()> {
    dims.validate()?;
    if channels.len() != dims.users {
        return Err(Error::Dimension(format!(
            "{} channel matrices for {} users",
            channels.len(),
            dims.users
        )));
    }
    for (k, h) in channels.matrices.iter().enumerate() {
        if h.shape() != (dims.bs_antennas, dims.user_antennas[k]) {
            return Err(Error::Dimension(format!(
                "channel {k} has shape {:?}, expected ({}, {})",
                h.shape(),
                dims.bs_antennas,
                dims.user_antennas[k]
            )));
        }
        check_finite(h, || format!("channel {k}"))?;
    }
    Ok(())
}

/// A validated system: dimensions together with matching channels.
#[derive(Debug, Clone, PartialEq)]
pub struct System {
    dims: SystemDimensions,
    channels: ChannelSet,
}

impl System {
    pub fn new(dims: SystemDimensions, channels: ChannelSet) -> Result<Self> {
        validate(&dims, &channels)?;
        Ok(System { dims, channels })
    }

    pub fn dims(&self) -> &SystemDimensions {
        &self.dims
    }

    pub fn channels(&self) -> &ChannelSet {
        &self.channels
    }

    pub fn users(&self) -> usize {
        self.dims.users
    }

    pub fn bs_antennas(&self) -> usize {
        self.dims.bs_antennas
    }

    pub fn noise_var(&self) -> f64 {
        self.dims.noise_var
    }

    pub fn channel(&self, user: usize) -> &CMat {
        &self.channels.matrices[user]
    }

    pub fn layout(&self) -> StreamLayout {
        self.dims.layout()
    }

    /// Relabels users so that new user `j` is old user `perm[j]`.
    pub fn apply_user_order(&self, perm: &[usize]) -> Result<System> {
        let channels = apply_user_order(&self.channels, perm)?;
        Ok(System {
            dims: self.dims.permuted(perm),
            channels,
        })
    }
}

/// Relabels the channel list so that new user `j` is old user `perm[j]`.
pub fn apply_user_order(channels: &ChannelSet, perm: &[usize]) -> Result<ChannelSet> {
    check_permutation(perm, channels.len())?;
    Ok(ChannelSet::new(permute(&channels.matrices, perm)))
}

pub fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::Permutation(format!(
            "length {} for {n} users",
            perm.len()
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::Permutation(format!(
                "{perm:?} is not a bijection on 0..{n}"
            )));
        }
        seen[p] = true;
    }
    Ok(())
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (j, &p) in perm.iter().enumerate() {
        inv[p] = j;
    }
    inv
}

pub fn permute<T: Clone>(items: &[T], perm: &[usize]) -> Vec<T> {
    perm.iter().map(|&p| items[p].clone()).collect()
}

/// MAC precoders `T[k]` (`r_k x L_k`) and, once computed, receive filters
/// `G[k]` (`L_k x N`).
#[derive(Debug, Clone, PartialEq)]
pub struct MacFilterSet {
    pub precoders: Vec<CMat>,
    pub receivers: Option<Vec<CMat>>,
}

impl MacFilterSet {
    pub fn new(precoders: Vec<CMat>) -> Self {
        MacFilterSet {
            precoders,
            receivers: None,
        }
    }

    pub fn sum_power(&self) -> f64 {
        sum_power(&self.precoders)
    }

    pub fn check(&self, dims: &SystemDimensions) -> Result<()> {
        check_shapes("MAC precoder", &self.precoders, dims, |k| {
            (dims.user_antennas[k], dims.streams[k])
        })?;
        if let Some(g) = &self.receivers {
            check_shapes("MAC receiver", g, dims, |k| {
                (dims.streams[k], dims.bs_antennas)
            })?;
        }
        Ok(())
    }
}

/// BC precoders `P[k]` (`N x L_k`) and receive filters `B[k]` (`L_k x r_k`)
/// whose rows act on the received vector without conjugation.
#[derive(Debug, Clone, PartialEq)]
pub struct BcFilterSet {
    pub precoders: Vec<CMat>,
    pub receivers: Option<Vec<CMat>>,
}

impl BcFilterSet {
    pub fn new(precoders: Vec<CMat>) -> Self {
        BcFilterSet {
            precoders,
            receivers: None,
        }
    }

    pub fn sum_power(&self) -> f64 {
        sum_power(&self.precoders)
    }

    pub fn check(&self, dims: &SystemDimensions) -> Result<()> {
        check_shapes("BC precoder", &self.precoders, dims, |k| {
            (dims.bs_antennas, dims.streams[k])
        })?;
        if let Some(b) = &self.receivers {
            check_shapes("BC receiver", b, dims, |k| {
                (dims.streams[k], dims.user_antennas[k])
            })?;
        }
        Ok(())
    }
}

fn check_shapes(
    what: &str,
    mats: &[CMat],
    dims: &SystemDimensions,
    shape: impl Fn(usize) -> (usize, usize),
) -> Result<()> {
    if mats.len() != dims.users {
        return Err(Error::Dimension(format!(
            "{} {what} matrices for {} users",
            mats.len(),
            dims.users
        )));
    }
    for (k, m) in mats.iter().enumerate() {
        if m.shape() != shape(k) {
            return Err(Error::Dimension(format!(
                "{what} {k} has shape {:?}, expected {:?}",
                m.shape(),
                shape(k)
            )));
        }
        check_finite(m, || format!("{what} {k}"))?;
    }
    Ok(())
}

pub(crate) fn check_finite(m: &CMat, what: impl FnOnce() -> String) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what()))
    }
}

/// Total transmit power `sum_k trace(A_k A_k^H)`.
pub fn sum_power(mats: &[CMat]) -> f64 {
    mats.iter().map(|m| m.norm_squared()).sum()
}

/// Transmit covariances of one domain: `Q[k]` (`r_k x r_k`) in the MAC or
/// `S[k]` (`N x N`) in the BC.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSet {
    domain: Domain,
    matrices: Vec<CMat>,
}

impl CovarianceSet {
    pub fn new(domain: Domain, matrices: Vec<CMat>) -> Result<Self> {
        for m in &matrices {
            check_finite(m, || "covariance".into())?;
            numerics::check_psd(m, PSD_TOL)?;
        }
        Ok(CovarianceSet { domain, matrices })
    }

    pub(crate) fn unchecked(domain: Domain, matrices: Vec<CMat>) -> Self {
        CovarianceSet { domain, matrices }
    }

    /// Builds `A_k A_k^H` from precoders; always PSD up to round-off.
    pub fn from_precoders(domain: Domain, precoders: &[CMat]) -> Self {
        let matrices = precoders.iter().map(|t| t * t.adjoint()).collect();
        CovarianceSet { domain, matrices }
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn matrices(&self) -> &[CMat] {
        &self.matrices
    }

    pub fn get(&self, user: usize) -> &CMat {
        &self.matrices[user]
    }

    pub fn sum_power(&self) -> f64 {
        self.matrices.iter().map(|m| m.trace().re).sum()
    }

    pub fn check(&self, dims: &SystemDimensions) -> Result<()> {
        let what = match self.domain {
            Domain::Mac => "MAC covariance",
            Domain::Bc => "BC covariance",
        };
        check_shapes(what, &self.matrices, dims, |k| match self.domain {
            Domain::Mac => (dims.user_antennas[k], dims.user_antennas[k]),
            Domain::Bc => (dims.bs_antennas, dims.bs_antennas),
        })
    }
}

/// Per-stream squared scaling factors in user-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingSolution {
    pub alpha_sq: Vec<f64>,
    /// `false` where a stream was removed because its filters vanish.
    pub active_mask: Vec<bool>,
}

/// Per-stream SINRs, per-user rates (bits per channel use) and sum power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub per_stream_sinr: Vec<Vec<f64>>,
    pub per_user_rate: Vec<f64>,
    pub sum_rate: f64,
    pub sum_power: f64,
}

impl RateReport {
    /// Report with per-user rates summed from stream-wise SINRs.
    pub fn from_sinrs(per_stream_sinr: Vec<Vec<f64>>, sum_power: f64) -> Self {
        let per_user_rate: Vec<f64> = per_stream_sinr
            .iter()
            .map(|s| s.iter().map(|&x| (1.0 + x).log2()).sum())
            .collect();
        let sum_rate = per_user_rate.iter().sum();
        RateReport {
            per_stream_sinr,
            per_user_rate,
            sum_rate,
            sum_power,
        }
    }

    /// Report for joint decoding where only per-user rates are known.
    pub fn from_rates(per_user_rate: Vec<f64>, sum_power: f64) -> Self {
        let sum_rate = per_user_rate.iter().sum();
        RateReport {
            per_stream_sinr: Vec::new(),
            per_user_rate,
            sum_rate,
            sum_power,
        }
    }
}
