//! Rate and SINR evaluation in both domains, with and without inter-user
//! interference cancellation, from covariances or from filters.
//!
//! Receive filter rows act on the received vector as `g^T y` and appear
//! conjugated in quadratic forms, `g^T A g^*`. With the row stored as a
//! `1 x n` matrix this is `g A g^H`.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CMat, CovarianceSet, Domain, RateReport, System, C64};
use crate::numerics::{self, cholesky, hermitian_eig, identity, scaled_identity};

/// Eigenvalues below this floor make the log-determinant unreliable.
pub const LOG_ARGUMENT_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterferenceMode {
    /// Successive cancellation: MAC user 0 is decoded last, BC user 0 is
    /// precoded first.
    #[default]
    Sic,
    /// No inter-user cancellation.
    Linear,
}

/// Whether user `tx` interferes with the receiver of user `rx`.
pub fn interferes(mode: InterferenceMode, domain: Domain, rx: usize, tx: usize) -> bool {
    if rx == tx {
        return false;
    }
    match (mode, domain) {
        (InterferenceMode::Linear, _) => true,
        (InterferenceMode::Sic, Domain::Mac) => tx < rx,
        (InterferenceMode::Sic, Domain::Bc) => tx > rx,
    }
}

/// Channel matrices seen between a transmitting user and a receiver.
///
/// In the MAC the receiver of every user is the base station and the link
/// from user `tx` is `H[tx]`. In the BC every signal leaves the base station
/// and user `rx` observes it through `H[rx]^H`.
#[derive(Debug, Clone)]
pub struct Links<'a> {
    system: &'a System,
    domain: Domain,
    adjoints: Vec<CMat>,
}

impl<'a> Links<'a> {
    pub fn new(system: &'a System, domain: Domain) -> Self {
        let adjoints = match domain {
            Domain::Mac => Vec::new(),
            Domain::Bc => system
                .channels()
                .matrices
                .iter()
                .map(|h| h.adjoint())
                .collect(),
        };
        Links {
            system,
            domain,
            adjoints,
        }
    }

    pub fn system(&self) -> &'a System {
        self.system
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn users(&self) -> usize {
        self.system.users()
    }

    pub fn get(&self, rx: usize, tx: usize) -> &CMat {
        match self.domain {
            Domain::Mac => self.system.channel(tx),
            Domain::Bc => &self.adjoints[rx],
        }
    }

    /// Dimension of the vector observed by the receiver of user `k`.
    pub fn rx_dim(&self, k: usize) -> usize {
        match self.domain {
            Domain::Mac => self.system.bs_antennas(),
            Domain::Bc => self.system.dims().user_antennas[k],
        }
    }

    /// Dimension of the transmit vector of user `k`.
    pub fn tx_dim(&self, k: usize) -> usize {
        match self.domain {
            Domain::Mac => self.system.dims().user_antennas[k],
            Domain::Bc => self.system.bs_antennas(),
        }
    }
}

/// `sigma^2 I + sum over interferers (and optionally the user itself) of
/// Lambda C Lambda^H` at the receiver of user `k`, where `C` are transmit
/// covariances of the links' domain.
pub fn receiver_covariance(
    links: &Links,
    mode: InterferenceMode,
    covariances: &[CMat],
    k: usize,
    include_own: bool,
) -> CMat {
    let mut acc = scaled_identity(links.rx_dim(k), links.system().noise_var());
    for (l, c) in covariances.iter().enumerate() {
        if interferes(mode, links.domain(), k, l) || (include_own && l == k) {
            let h = links.get(k, l);
            acc += h * c * h.adjoint();
        }
    }
    acc
}

fn outer_products(transmit: &[CMat]) -> Vec<CMat> {
    transmit.iter().map(|t| t * t.adjoint()).collect()
}

/// `log2 |I + W^{-1} Lambda C Lambda^H|` via the whitened Hermitian form.
fn log2_det_whitened(whitening: &numerics::CholeskyFactor, h: &CMat, c: &CMat) -> Result<f64> {
    let e = whitening.solve_lower(h);
    let a = &e * c * e.adjoint();
    let n = a.nrows();
    Ok(cholesky(&(identity(n) + a))?.log2_det().max(0.0))
}

fn user_rate(links: &Links, mode: InterferenceMode, covariances: &[CMat], k: usize) -> Result<f64> {
    let w = receiver_covariance(links, mode, covariances, k, false);
    log2_det_whitened(&cholesky(&w)?, links.get(k, k), &covariances[k])
}

/// `X_k` of the MAC: noise plus users `l < k` (SIC), or noise plus all
/// users including `k` (LINEAR, common to every user).
pub fn mac_interference_matrix(
    system: &System,
    q: &CovarianceSet,
    k: usize,
    mode: InterferenceMode,
) -> CMat {
    let links = Links::new(system, Domain::Mac);
    receiver_covariance(
        &links,
        mode,
        q.matrices(),
        k,
        mode == InterferenceMode::Linear,
    )
}

/// `Y_k` of the BC: noise plus users `l > k` (SIC) or all `l != k` (LINEAR).
pub fn bc_interference_matrix(
    system: &System,
    s: &CovarianceSet,
    k: usize,
    mode: InterferenceMode,
) -> CMat {
    let links = Links::new(system, Domain::Bc);
    receiver_covariance(&links, mode, s.matrices(), k, false)
}

/// `log2 |I + X_k^{-1} H_k Q_k H_k^H|`.
pub fn mac_rate_sic(system: &System, q: &CovarianceSet, k: usize) -> Result<f64> {
    user_rate(
        &Links::new(system, Domain::Mac),
        InterferenceMode::Sic,
        q.matrices(),
        k,
    )
}

/// Determinant-quotient form of the MAC rate with cancellation.
pub fn mac_rate_sic_quotient(system: &System, q: &CovarianceSet, k: usize) -> Result<f64> {
    let links = Links::new(system, Domain::Mac);
    let without = receiver_covariance(&links, InterferenceMode::Sic, q.matrices(), k, false);
    let with = receiver_covariance(&links, InterferenceMode::Sic, q.matrices(), k, true);
    Ok(cholesky(&with)?.log2_det() - cholesky(&without)?.log2_det())
}

/// `log2 |I + Y_k^{-1} H_k^H S_k H_k|` with dirty-paper coding.
pub fn bc_rate_dpc(system: &System, s: &CovarianceSet, k: usize) -> Result<f64> {
    user_rate(
        &Links::new(system, Domain::Bc),
        InterferenceMode::Sic,
        s.matrices(),
        k,
    )
}

/// Determinant-quotient form of the BC rate with dirty-paper coding.
pub fn bc_rate_dpc_quotient(system: &System, s: &CovarianceSet, k: usize) -> Result<f64> {
    let links = Links::new(system, Domain::Bc);
    let without = receiver_covariance(&links, InterferenceMode::Sic, s.matrices(), k, false);
    let with = receiver_covariance(&links, InterferenceMode::Sic, s.matrices(), k, true);
    Ok(cholesky(&with)?.log2_det() - cholesky(&without)?.log2_det())
}

/// Joint-decoding MAC rate without cancellation,
/// `-log2 |I - X^{-1} H_k Q_k H_k^H|` with the common `X`.
///
/// Evaluated through the eigenvalues of the Hermitian-similar matrix
/// `I - L^{-1} H_k Q_k H_k^H L^{-H}`, `X = L L^H`.
pub fn mac_rate_linear_joint(system: &System, q: &CovarianceSet, k: usize) -> Result<f64> {
    let x = mac_interference_matrix(system, q, k, InterferenceMode::Linear);
    let chol = cholesky(&x)?;
    let e = chol.solve_lower(system.channel(k));
    let a = identity(x.nrows()) - &e * q.get(k) * e.adjoint();
    let eig = hermitian_eig(&numerics::hermitian_part(&a))?;
    let mut rate = 0.0;
    for &v in &eig.values {
        if v < LOG_ARGUMENT_FLOOR {
            return Err(Error::DeterminantUnderflow(v));
        }
        rate -= v.min(1.0).log2();
    }
    Ok(rate)
}

/// Joint-decoding MAC rate without cancellation,
/// `log2 |I + (sum_{l != k} H_l Q_l H_l^H + sigma^2 I)^{-1} H_k Q_k H_k^H|`.
pub fn mac_rate_linear_interference_form(
    system: &System,
    q: &CovarianceSet,
    k: usize,
) -> Result<f64> {
    user_rate(
        &Links::new(system, Domain::Mac),
        InterferenceMode::Linear,
        q.matrices(),
        k,
    )
}

/// Joint-decoding BC rate without presubtraction.
pub fn bc_rate_linear_joint(system: &System, s: &CovarianceSet, k: usize) -> Result<f64> {
    user_rate(
        &Links::new(system, Domain::Bc),
        InterferenceMode::Linear,
        s.matrices(),
        k,
    )
}

/// MMSE error covariance of user `k`, `I - T^H Lambda^H A^{-1} Lambda T`,
/// where `A` is the receiver covariance including the user's own signal.
pub fn error_covariance(
    links: &Links,
    mode: InterferenceMode,
    transmit: &[CMat],
    k: usize,
) -> Result<CMat> {
    let covs = outer_products(transmit);
    let a = receiver_covariance(links, mode, &covs, k, true);
    let chol = cholesky(&a)?;
    let e = chol.solve_lower(&(links.get(k, k) * &transmit[k]));
    let c = identity(transmit[k].ncols()) - e.adjoint() * e;
    Ok(numerics::hermitian_part(&c))
}

/// Error covariance `C_k` of user `k` in the MAC with MMSE receivers.
pub fn mac_error_covariance(
    system: &System,
    transmit: &[CMat],
    k: usize,
    mode: InterferenceMode,
) -> Result<CMat> {
    error_covariance(&Links::new(system, Domain::Mac), mode, transmit, k)
}

/// `-log2 det C` for an error covariance with eigenvalues in `(0, 1]`.
pub fn rate_from_error_cov(c: &CMat) -> Result<f64> {
    let eig = hermitian_eig(c)?;
    let mut rate = 0.0;
    for &v in &eig.values {
        if !(v >= LOG_ARGUMENT_FLOOR) || v > 1.0 + 1e-9 {
            return Err(Error::InvalidErrorCovariance(v));
        }
        rate -= v.min(1.0).log2();
    }
    Ok(rate)
}

fn quadratic_form(row: &CMat, a: &CMat) -> f64 {
    (row * a * row.adjoint())[(0, 0)].re
}

/// SINRs of every stream of user `k`, evaluated with the general
/// expression that keeps the intra-user terms in the denominator.
pub fn user_sinrs(
    links: &Links,
    mode: InterferenceMode,
    transmit: &[CMat],
    receive: &[CMat],
    k: usize,
) -> Result<Vec<f64>> {
    let h = links.get(k, k);
    let t = &transmit[k];
    let g = &receive[k];
    let mut base = scaled_identity(links.rx_dim(k), links.system().noise_var());
    for (l, tl) in transmit.iter().enumerate() {
        if interferes(mode, links.domain(), k, l) {
            let hl = links.get(k, l);
            let v = hl * tl;
            base += &v * v.adjoint();
        }
    }
    let own = g * h * t;
    (0..t.ncols())
        .map(|i| {
            let row = g.rows(i, 1).into_owned();
            if row.iter().all(|z| *z == C64::new(0.0, 0.0)) {
                return if t.column(i).iter().all(|z| *z == C64::new(0.0, 0.0)) {
                    Ok(0.0)
                } else {
                    Err(Error::UndefinedSinr { user: k, stream: i })
                };
            }
            let signal = own[(i, i)].norm_sqr();
            let intra: f64 = (0..t.ncols())
                .filter(|&m| m != i)
                .map(|m| own[(i, m)].norm_sqr())
                .sum();
            Ok(signal / (quadratic_form(&row, &base) + intra))
        })
        .collect()
}

/// SINR of MAC stream `(k, i)` with precoders `T` and receive filters `G`.
pub fn sinr_mac(
    system: &System,
    t: &[CMat],
    g: &[CMat],
    k: usize,
    i: usize,
    mode: InterferenceMode,
) -> Result<f64> {
    Ok(user_sinrs(&Links::new(system, Domain::Mac), mode, t, g, k)?[i])
}

/// SINR of BC stream `(k, i)` with precoders `P` and receive filters `B`.
pub fn sinr_bc(
    system: &System,
    p: &[CMat],
    b: &[CMat],
    k: usize,
    i: usize,
    mode: InterferenceMode,
) -> Result<f64> {
    Ok(user_sinrs(&Links::new(system, Domain::Bc), mode, p, b, k)?[i])
}

/// What a [`report`] is computed from.
#[derive(Debug, Clone, Copy)]
pub enum Transmission<'a> {
    /// Stream-wise decoding with explicit filters. Streams with
    /// `active[j] == false` (flat user-major index) report SINR zero.
    Filters {
        domain: Domain,
        transmit: &'a [CMat],
        receive: &'a [CMat],
        active: Option<&'a [bool]>,
    },
    /// Joint decoding with optimal receivers.
    Covariances(&'a CovarianceSet),
}

pub fn report(
    system: &System,
    transmission: Transmission,
    mode: InterferenceMode,
) -> Result<RateReport> {
    match transmission {
        Transmission::Filters {
            domain,
            transmit,
            receive,
            active,
        } => {
            let links = Links::new(system, domain);
            let layout = crate::model::StreamLayout::new(
                &transmit.iter().map(|t| t.ncols()).collect::<Vec<_>>(),
            );
            let mut per_stream = Vec::with_capacity(system.users());
            for k in 0..system.users() {
                let masked = |i: usize| active.is_some_and(|a| !a[layout.index(k, i)]);
                let receive_k: Cow<[CMat]> = if (0..transmit[k].ncols()).any(masked) {
                    // Masked rows are zeroed so they never trip the undefined-SINR check.
                    let mut owned = receive.to_vec();
                    for i in (0..transmit[k].ncols()).filter(|&i| masked(i)) {
                        owned[k].row_mut(i).fill(C64::new(0.0, 0.0));
                    }
                    Cow::Owned(owned)
                } else {
                    Cow::Borrowed(receive)
                };
                let mut transmit_k: Cow<[CMat]> = Cow::Borrowed(transmit);
                if (0..transmit[k].ncols()).any(masked) {
                    let owned = transmit_k.to_mut();
                    for i in (0..transmit[k].ncols()).filter(|&i| masked(i)) {
                        owned[k].column_mut(i).fill(C64::new(0.0, 0.0));
                    }
                }
                let mut sinrs = user_sinrs(&links, mode, &transmit_k, &receive_k, k)?;
                for (i, s) in sinrs.iter_mut().enumerate() {
                    if masked(i) {
                        *s = 0.0;
                    }
                }
                per_stream.push(sinrs);
            }
            Ok(RateReport::from_sinrs(
                per_stream,
                crate::model::sum_power(transmit),
            ))
        }
        Transmission::Covariances(covs) => {
            let rates = (0..system.users())
                .map(|k| match (covs.domain(), mode) {
                    (Domain::Mac, InterferenceMode::Sic) => mac_rate_sic(system, covs, k),
                    (Domain::Bc, InterferenceMode::Sic) => bc_rate_dpc(system, covs, k),
                    (Domain::Mac, InterferenceMode::Linear) => {
                        mac_rate_linear_joint(system, covs, k)
                    }
                    (Domain::Bc, InterferenceMode::Linear) => bc_rate_linear_joint(system, covs, k),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(RateReport::from_rates(rates, covs.sum_power()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::*;
    use proptest::prelude::*;

    fn covs(domain: Domain, t: &[CMat]) -> CovarianceSet {
        CovarianceSet::from_precoders(domain, t)
    }

    fn zero_user(t: &[CMat], k: usize) -> Vec<CMat> {
        let mut t = t.to_vec();
        t[k].fill(C64::new(0.0, 0.0));
        t
    }

    #[test]
    fn interference_matrix_edge_cases() {
        let (system, t) = random(dims(3, &[2, 2], &[1, 2], 0.7), 1, 4.0);
        let q = covs(Domain::Mac, &t);
        assert_eq!(
            mac_interference_matrix(&system, &q, 0, InterferenceMode::Sic),
            scaled_identity(3, 0.7)
        );
        let zero = covs(Domain::Mac, &[CMat::zeros(2, 1), CMat::zeros(2, 2)]);
        assert_eq!(
            mac_interference_matrix(&system, &zero, 1, InterferenceMode::Linear),
            scaled_identity(3, 0.7)
        );
        let h = system.channel(0);
        let expected = scaled_identity(3, 0.7) + h * &t[0] * t[0].adjoint() * h.adjoint();
        assert!(
            max_entry_gap(
                &mac_interference_matrix(&system, &q, 1, InterferenceMode::Sic),
                &expected
            ) < 1e-12
        );
    }

    #[test]
    fn common_matrix_is_user_independent() {
        let (system, t) = random(dims(4, &[2, 3, 1], &[2, 1, 1], 1.0), 2, 5.0);
        let q = covs(Domain::Mac, &t);
        let x0 = mac_interference_matrix(&system, &q, 0, InterferenceMode::Linear);
        for k in 1..3 {
            assert_eq!(
                mac_interference_matrix(&system, &q, k, InterferenceMode::Linear),
                x0
            );
        }
    }

    #[test]
    fn scalar_rates_are_one_bit() {
        let system = scalar_system(1, 1.0);
        let q = covs(Domain::Mac, &[scalar(1.0)]);
        let s = covs(Domain::Bc, &[scalar(1.0)]);
        assert!((mac_rate_sic(&system, &q, 0).unwrap() - 1.0).abs() < 1e-15);
        assert!((bc_rate_dpc(&system, &s, 0).unwrap() - 1.0).abs() < 1e-15);
        assert!((mac_rate_linear_joint(&system, &q, 0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn silent_users_have_zero_rate() {
        let (system, t) = random(dims(3, &[2, 2, 1], &[2, 1, 1], 1.0), 3, 3.0);
        let t = zero_user(&t, 1);
        let q = covs(Domain::Mac, &t);
        let s = covs(
            Domain::Bc,
            &zero_user(&gaussians(&[(3, 2), (3, 2), (3, 1)], 4), 1),
        );
        assert_eq!(mac_rate_sic(&system, &q, 1).unwrap(), 0.0);
        assert_eq!(mac_rate_linear_joint(&system, &q, 1).unwrap(), 0.0);
        assert_eq!(bc_rate_dpc(&system, &s, 1).unwrap(), 0.0);
    }

    #[test]
    fn mac_sic_rate_matches_determinant_difference() {
        let (system, t) = random(dims(3, &[2, 3], &[2, 2], 0.5), 5, 6.0);
        let q = covs(Domain::Mac, &t);
        let mut acc = scaled_identity(3, 0.5);
        for k in 0..2 {
            let before = log2_det(&acc);
            let h = system.channel(k);
            acc += h * q.get(k) * h.adjoint();
            let expected = log2_det(&acc) - before;
            assert!((mac_rate_sic(&system, &q, k).unwrap() - expected).abs() < 1e-10);
            assert!((mac_rate_sic_quotient(&system, &q, k).unwrap() - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn bc_dpc_rate_matches_determinant_quotient() {
        let (system, _) = random(dims(3, &[2, 1, 2], &[1, 1, 1], 1.0), 6, 1.0);
        let p = gaussians(&[(3, 2), (3, 1), (3, 2)], 7);
        let s = covs(Domain::Bc, &p);
        for k in 0..3 {
            let h = system.channel(k);
            let mut y = scaled_identity(h.ncols(), 1.0);
            for l in k + 1..3 {
                y += h.adjoint() * s.get(l) * h;
            }
            let with = &y + h.adjoint() * s.get(k) * h;
            let expected = log2_det(&with) - log2_det(&y);
            assert!((bc_rate_dpc(&system, &s, k).unwrap() - expected).abs() < 1e-10);
            assert!((bc_rate_dpc_quotient(&system, &s, k).unwrap() - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn linear_joint_forms_agree() {
        let (system, t) = random(dims(4, &[2, 3], &[2, 3], 0.1), 8, 20.0);
        let q = covs(Domain::Mac, &t);
        for k in 0..2 {
            let a = mac_rate_linear_joint(&system, &q, k).unwrap();
            let b = mac_rate_linear_interference_form(&system, &q, k).unwrap();
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        let (single, t1) = random(dims(3, &[2], &[2], 1.0), 9, 2.0);
        let q1 = covs(Domain::Mac, &t1);
        let a = mac_rate_linear_joint(&single, &q1, 0).unwrap();
        assert!((a - mac_rate_sic(&single, &q1, 0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn error_covariance_cases() {
        let (system, t) = random(dims(3, &[2, 2], &[2, 1], 1.0), 10, 4.0);
        let silent = zero_user(&t, 0);
        let c0 = mac_error_covariance(&system, &silent, 0, InterferenceMode::Sic).unwrap();
        assert!(max_entry_gap(&c0, &identity(2)) < 1e-15);

        let sys1 = scalar_system(1, 1.0);
        let c = mac_error_covariance(&sys1, &[scalar(1.0)], 0, InterferenceMode::Sic).unwrap();
        assert!((c[(0, 0)].re - 0.5).abs() < 1e-15);

        // Matrix-inversion lemma: C = (I + T^H H^H W^{-1} H T)^{-1}.
        for (mode, k) in [(InterferenceMode::Sic, 1), (InterferenceMode::Linear, 0)] {
            let w = receiver_covariance(
                &Links::new(&system, Domain::Mac),
                mode,
                &outer_products(&t),
                k,
                false,
            );
            let h = system.channel(k);
            let inner = identity(t[k].ncols())
                + t[k].adjoint() * h.adjoint() * w.try_inverse().unwrap() * h * &t[k];
            let expected = inner.try_inverse().unwrap();
            let got = mac_error_covariance(&system, &t, k, mode).unwrap();
            assert!(max_entry_gap(&got, &expected) < 1e-12);
        }
    }

    #[test]
    fn rate_from_error_covariance_cases() {
        assert_eq!(rate_from_error_cov(&identity(3)).unwrap(), 0.0);
        let d = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(0.5), c(0.25)]));
        assert!((rate_from_error_cov(&d).unwrap() - 3.0).abs() < 1e-15);
        let (system, t) = random(dims(3, &[3], &[3], 0.3), 11, 5.0);
        let cov = mac_error_covariance(&system, &t, 0, InterferenceMode::Sic).unwrap();
        assert!((rate_from_error_cov(&cov).unwrap() + log2_det(&cov)).abs() < 1e-10);
        let bad = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(0.5), c(1.5)]));
        assert!(matches!(
            rate_from_error_cov(&bad),
            Err(Error::InvalidErrorCovariance(_))
        ));
        assert!(rate_from_error_cov(&CMat::zeros(1, 1)).is_err());
    }

    #[test]
    fn scalar_sinrs() {
        let system = scalar_system(1, 1.0);
        for g in [0.5, -3.0, 1e-4] {
            let s = sinr_mac(
                &system,
                &[scalar(1.0)],
                &[scalar(g)],
                0,
                0,
                InterferenceMode::Sic,
            )
            .unwrap();
            assert!((s - 1.0).abs() < 1e-14);
            let s = sinr_bc(
                &system,
                &[scalar(1.0)],
                &[scalar(g)],
                0,
                0,
                InterferenceMode::Linear,
            )
            .unwrap();
            assert!((s - 1.0).abs() < 1e-14);
        }
        assert_eq!(
            sinr_mac(
                &system,
                &[scalar(0.0)],
                &[scalar(2.0)],
                0,
                0,
                InterferenceMode::Sic
            )
            .unwrap(),
            0.0
        );
        assert_eq!(
            sinr_bc(
                &system,
                &[scalar(0.0)],
                &[scalar(2.0)],
                0,
                0,
                InterferenceMode::Sic
            )
            .unwrap(),
            0.0
        );
        assert_eq!(
            sinr_mac(
                &system,
                &[scalar(1.0)],
                &[scalar(0.0)],
                0,
                0,
                InterferenceMode::Sic
            ),
            Err(Error::UndefinedSinr { user: 0, stream: 0 })
        );
    }

    #[test]
    fn decorrelated_mac_sinr_has_three_equal_forms() {
        let (system, t) = random(dims(3, &[2, 2], &[2, 2], 0.8), 12, 6.0);
        let out = crate::duality_sic::mac_to_bc(&system, &t).unwrap();
        let (tp, gp) = (&out.mac.precoders, out.mac.receivers.as_ref().unwrap());
        let links = Links::new(&system, Domain::Mac);
        for k in 0..2 {
            let h = system.channel(k);
            let d = &gp[k] * h * &tp[k];
            for i in 0..2 {
                let general = sinr_mac(&system, tp, gp, k, i, InterferenceMode::Sic).unwrap();
                // MMSE diagonal: SINR = d / (1 - d).
                let dii = d[(i, i)].re;
                let mmse = dii / (1.0 - dii);
                // Closed form with the other streams as interference.
                let mut others = receiver_covariance(
                    &links,
                    InterferenceMode::Sic,
                    &outer_products(tp),
                    k,
                    true,
                );
                let v = h * tp[k].column(i);
                others -= &v * v.adjoint();
                let closed = (v.adjoint() * others.try_inverse().unwrap() * &v)[(0, 0)].re;
                assert!((general - mmse).abs() <= 1e-9 * general);
                assert!((general - closed).abs() <= 1e-9 * general);
            }
        }
    }

    #[test]
    fn bc_sinr_matches_term_by_term_sum() {
        let d = dims(3, &[2, 2, 1], &[2, 1, 1], 0.4);
        let (system, _) = random(d.clone(), 13, 1.0);
        let p = gaussians(&[(3, 2), (3, 1), (3, 1)], 14);
        let b = gaussians(&[(2, 2), (1, 2), (1, 1)], 15);
        for mode in [InterferenceMode::Sic, InterferenceMode::Linear] {
            for k in 0..3 {
                let hk = system.channel(k).adjoint();
                for i in 0..p[k].ncols() {
                    let row = b[k].row(i);
                    let gain = |pm: nalgebra::DVectorView<C64>| (row * &hk * pm)[(0, 0)].norm_sqr();
                    let mut denom = 0.4 * row.norm_squared();
                    for (l, pl) in p.iter().enumerate() {
                        if interferes(mode, Domain::Bc, k, l) || l == k {
                            for m in 0..pl.ncols() {
                                if !(l == k && m == i) {
                                    denom += gain(pl.column(m));
                                }
                            }
                        }
                    }
                    let expected = gain(p[k].column(i)) / denom;
                    let got = sinr_bc(&system, &p, &b, k, i, mode).unwrap();
                    assert!((got - expected).abs() <= 1e-12 * expected.max(1e-300));
                }
            }
        }
    }

    #[test]
    fn reports() {
        let (system, t) = random(dims(3, &[2, 2], &[2, 1], 1.0), 16, 0.0);
        let g = vec![CMat::zeros(2, 3), CMat::zeros(1, 3)];
        let tx = Transmission::Filters {
            domain: Domain::Mac,
            transmit: &t,
            receive: &g,
            active: None,
        };
        let r = report(&system, tx, InterferenceMode::Sic).unwrap();
        assert_eq!(r.per_user_rate, vec![0.0, 0.0]);
        assert_eq!(r.sum_power, 0.0);

        let sys1 = scalar_system(1, 1.0);
        let r = report(
            &sys1,
            Transmission::Filters {
                domain: Domain::Mac,
                transmit: &[scalar(1.0)],
                receive: &[scalar(0.5)],
                active: None,
            },
            InterferenceMode::Sic,
        )
        .unwrap();
        assert!((r.per_user_rate[0] - 1.0).abs() < 1e-15);
        assert_eq!(r.sum_power, 1.0);

        let (system, t) = random(dims(4, &[2, 3, 2], &[2, 2, 1], 1.0), 17, 9.0);
        let out = crate::duality_sic::mac_to_bc(&system, &t).unwrap();
        let q = covs(Domain::Mac, &t);
        for k in 0..3 {
            let expected = mac_rate_sic(&system, &q, k).unwrap();
            assert!((out.mac_report.per_user_rate[k] - expected).abs() < 1e-9);
        }
        let joint = report(
            &system,
            Transmission::Covariances(&q),
            InterferenceMode::Sic,
        )
        .unwrap();
        assert!((joint.sum_rate - out.mac_report.sum_rate).abs() < 1e-9);
    }

    #[test]
    fn masked_streams_report_zero() {
        let system = scalar_system(1, 1.0);
        let r = report(
            &system,
            Transmission::Filters {
                domain: Domain::Bc,
                transmit: &[scalar(1.0)],
                receive: &[scalar(0.0)],
                active: Some(&[false]),
            },
            InterferenceMode::Sic,
        )
        .unwrap();
        assert_eq!(r.per_stream_sinr, vec![vec![0.0]]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn rates_are_invariant_under_unitary_precoder_rotation(seed in 0u64..10_000, linear in any::<bool>()) {
            let mode = if linear { InterferenceMode::Linear } else { InterferenceMode::Sic };
            let (system, t) = random(dims(3, &[2, 3], &[2, 3], 0.5), seed, 5.0);
            let rotated: Vec<CMat> = t
                .iter()
                .enumerate()
                .map(|(k, m)| m * random_unitary(m.ncols(), seed ^ (k as u64 + 1)))
                .collect();
            let links = Links::new(&system, Domain::Mac);
            for k in 0..2 {
                let a = rate_from_error_cov(&error_covariance(&links, mode, &t, k).unwrap()).unwrap();
                let b = rate_from_error_cov(&error_covariance(&links, mode, &rotated, k).unwrap()).unwrap();
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn determinant_identity(seed in 0u64..10_000, m in 1usize..6, n in 1usize..6) {
            let mut rng = rng(seed);
            let a = crate::harness::complex_gaussian(&mut rng, m, n);
            let b = crate::harness::complex_gaussian(&mut rng, n, m);
            let left = (identity(m) + &a * &b).determinant();
            let right = (identity(n) + &b * &a).determinant();
            prop_assert!((left - right).norm() <= 1e-9 * left.norm().max(1.0));
        }
    }
}
