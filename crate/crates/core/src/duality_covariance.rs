//! Serial covariance-based MAC-to-BC conversion with interference
//! cancellation, used as an independent baseline for the filter duality.
//!
//! For `k = K-1, ..., 0`:
//!
//! 1. `Y_k = s2 I + sum_{l > k} H_k^H S_l H_k = F_k^H F_k` (Cholesky, `F_k` upper),
//! 2. `X_k = s2 I + sum_{l < k} H_l Q_l H_l^H = L_k L_k^H`,
//! 3. reduced SVD `L_k^{-1} H_k F_k^{-1} = U D V^H`,
//! 4. `Z_k = U V^H F_k Q_k F_k^H V U^H`,
//! 5. `S_k = L_k^{-H} Z_k L_k^{-1}`.
//!
//! Step 1 needs every `S_l` with `l > k`, so the loop cannot be reordered
//! or split across users.

use crate::error::{Error, Result};
use crate::filter_duality::{MacToBc, Parallelism};
use crate::model::{CMat, CovarianceSet, Domain, System, PSD_TOL};
use crate::numerics::{self, cholesky, reduced_svd, CholeskyFactor, RANK_TOL};
use crate::rates::{self, InterferenceMode, Links};

/// Intermediates of one iteration of the serial loop.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceStep {
    pub user: usize,
    /// `Y_k` as used inside the loop.
    pub y: CMat,
    /// `F_k` with `F_k^H F_k = Y_k`.
    pub f: CMat,
    /// Cholesky factor `L_k` of `X_k`.
    pub l: CMat,
    /// Effective channel `L_k^{-1} H_k F_k^{-1}`.
    pub effective_channel: CMat,
    /// Flipped covariance `Z_k`.
    pub z: CMat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceConversion {
    pub bc: CovarianceSet,
    /// Loop intermediates indexed by user.
    pub steps: Vec<CovarianceStep>,
}

/// `F^{-1}`-free evaluation of `L^{-1} H F^{-1}` with `F = L_Y^H`.
fn effective_channel(x: &CholeskyFactor, y: &CholeskyFactor, h: &CMat) -> CMat {
    // H F^{-1} = H L_Y^{-H} = (L_Y^{-1} H^H)^H
    let h_f = y.solve_lower(&h.adjoint()).adjoint();
    x.solve_lower(&h_f)
}

pub fn mac_to_bc_covariance(system: &System, q: &CovarianceSet) -> Result<CovarianceConversion> {
    if q.domain() != Domain::Mac {
        return Err(Error::Dimension("expected MAC covariances".into()));
    }
    q.check(system.dims())?;
    for m in q.matrices() {
        numerics::check_psd(m, PSD_TOL)?;
    }
    let users = system.users();
    let n = system.bs_antennas();
    let mac_links = Links::new(system, Domain::Mac);
    let mut s: Vec<CMat> = vec![CMat::zeros(n, n); users];
    let mut steps: Vec<Option<CovarianceStep>> = vec![None; users];

    for k in (0..users).rev() {
        let h = system.channel(k);
        let mut y = numerics::scaled_identity(h.ncols(), system.noise_var());
        for s_l in &s[k + 1..] {
            y += h.adjoint() * s_l * h;
        }
        let y_chol = cholesky(&y)?;
        let x =
            rates::receiver_covariance(&mac_links, InterferenceMode::Sic, q.matrices(), k, false);
        let x_chol = cholesky(&x)?;

        let eff = effective_channel(&x_chol, &y_chol, h);
        let svd = reduced_svd(&eff, RANK_TOL)?;
        let f = y_chol.l.adjoint();
        let uv = &svd.u * svd.v.adjoint();
        let z = numerics::hermitian_part(&(&uv * (&f * q.get(k) * f.adjoint()) * uv.adjoint()));

        // S = L^{-H} Z L^{-1}
        let left = x_chol.solve_upper(&z);
        let s_k = numerics::hermitian_part(&x_chol.solve_upper(&left.adjoint()).adjoint());
        s[k] = s_k;
        steps[k] = Some(CovarianceStep {
            user: k,
            y,
            f,
            l: x_chol.l.clone(),
            effective_channel: eff,
            z,
        });
    }
    Ok(CovarianceConversion {
        bc: CovarianceSet::unchecked(Domain::Bc, s),
        steps: steps
            .into_iter()
            .map(|st| st.expect("every user visited"))
            .collect(),
    })
}

/// Tolerance on the agreement of the filter-path and covariance-path BC
/// rate tuples, in bits.
pub const CROSS_VALIDATION_TOL: f64 = 1e-7;

/// Outcome of running both MAC-to-BC conversions on the same precoders.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub mac_rates: Vec<f64>,
    pub filter_bc_rates: Vec<f64>,
    pub covariance_bc_rates: Vec<f64>,
    pub mac_power: f64,
    pub filter_bc_power: f64,
    pub covariance_bc_power: f64,
    /// Largest per-user rate difference between the two BC systems.
    pub max_rate_deviation: f64,
    pub filter: MacToBc,
    pub covariance: CovarianceConversion,
}

/// Converts `T` with the filter duality and `Q = T T^H` with the covariance
/// baseline, and requires both BC systems to reach the same rates without
/// exceeding the MAC power.
pub fn cross_validate(system: &System, precoders: &[CMat]) -> Result<CrossValidation> {
    cross_validate_with(system, precoders, Parallelism::Serial)
}

pub fn cross_validate_with(
    system: &System,
    precoders: &[CMat],
    par: Parallelism,
) -> Result<CrossValidation> {
    let filter = crate::duality_sic::mac_to_bc_with(system, precoders, par)?;
    let q = CovarianceSet::from_precoders(Domain::Mac, precoders);
    let covariance = mac_to_bc_covariance(system, &q)?;
    let mac_rates = (0..system.users())
        .map(|k| rates::mac_rate_sic(system, &q, k))
        .collect::<Result<Vec<_>>>()?;
    let covariance_bc_rates = (0..system.users())
        .map(|k| rates::bc_rate_dpc(system, &covariance.bc, k))
        .collect::<Result<Vec<_>>>()?;
    let filter_bc_rates = filter.bc_report.per_user_rate.clone();

    let mut max_rate_deviation = 0.0f64;
    for (k, (a, b)) in filter_bc_rates.iter().zip(&covariance_bc_rates).enumerate() {
        let d = (a - b).abs();
        max_rate_deviation = max_rate_deviation.max(d);
        if d > CROSS_VALIDATION_TOL {
            return Err(Error::CrossValidation {
                user: k,
                filter: *a,
                covariance: *b,
            });
        }
    }
    let mac_power = q.sum_power();
    let filter_bc_power = filter.bc_report.sum_power;
    let covariance_bc_power = covariance.bc.sum_power();
    let slack = 1e-9 * mac_power.max(f64::MIN_POSITIVE);
    if filter_bc_power > mac_power + slack || covariance_bc_power > mac_power + slack {
        return Err(Error::PowerExceeded {
            primal: mac_power,
            dual: filter_bc_power.max(covariance_bc_power),
        });
    }
    Ok(CrossValidation {
        mac_rates,
        filter_bc_rates,
        covariance_bc_rates,
        mac_power,
        filter_bc_power,
        covariance_bc_power,
        max_rate_deviation,
        filter,
        covariance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::*;

    #[test]
    fn zero_covariances_map_to_zero() {
        let (system, _) = random(dims(3, &[2, 2], &[1, 1], 1.0), 1, 1.0);
        let q =
            CovarianceSet::new(Domain::Mac, vec![CMat::zeros(2, 2), CMat::zeros(2, 2)]).unwrap();
        let out = mac_to_bc_covariance(&system, &q).unwrap();
        assert!(out
            .bc
            .matrices()
            .iter()
            .all(|s| s.iter().all(|z| z.norm() == 0.0)));
    }

    #[test]
    fn scalar_chain_by_hand() {
        let system = scalar_system(1, 1.0);
        let q = CovarianceSet::new(Domain::Mac, vec![scalar(1.0)]).unwrap();
        let out = mac_to_bc_covariance(&system, &q).unwrap();
        let step = &out.steps[0];
        for m in [
            &step.y,
            &step.f,
            &step.l,
            &step.effective_channel,
            &step.z,
            out.bc.get(0),
        ] {
            assert!((m[(0, 0)] - c(1.0)).norm() < 1e-15);
        }
        assert!((rates::bc_rate_dpc(&system, &out.bc, 0).unwrap() - 1.0).abs() < 1e-15);
        let cv = cross_validate(&system, &[scalar(1.0)]).unwrap();
        assert!((cv.filter_bc_rates[0] - 1.0).abs() < 1e-14);
        assert!((cv.covariance_bc_rates[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rates_match_and_power_is_not_exceeded() {
        let (system, t) = random(dims(4, &[2, 3, 2], &[2, 2, 1], 0.5), 2, 8.0);
        let q = CovarianceSet::from_precoders(Domain::Mac, &t);
        let out = mac_to_bc_covariance(&system, &q).unwrap();
        for k in 0..3 {
            let mac = rates::mac_rate_sic(&system, &q, k).unwrap();
            let bc = rates::bc_rate_dpc(&system, &out.bc, k).unwrap();
            assert!((mac - bc).abs() < 1e-9);
        }
        assert!(out.bc.sum_power() <= q.sum_power() * (1.0 + 1e-9));
        for s in out.bc.matrices() {
            numerics::check_psd(s, PSD_TOL).unwrap();
        }
    }

    #[test]
    fn single_user_reaches_capacity_on_both_paths() {
        let (system, t) = random(dims(3, &[2], &[2], 0.4), 3, 5.0);
        let h = system.channel(0);
        let capacity = log2_det(
            &(numerics::identity(3) + h * &t[0] * t[0].adjoint() * h.adjoint() * c(1.0 / 0.4)),
        );
        let cv = cross_validate(&system, &t).unwrap();
        assert!((cv.filter_bc_rates[0] - capacity).abs() < 1e-9);
        assert!((cv.covariance_bc_rates[0] - capacity).abs() < 1e-9);
    }

    #[test]
    fn four_user_paths_agree() {
        let (system, t) = random(dims(5, &[2, 2, 3, 1], &[1, 2, 2, 1], 1.0), 4, 10.0);
        let cv = cross_validate_with(&system, &t, Parallelism::Parallel).unwrap();
        assert!(cv.max_rate_deviation < 1e-9);
        for (a, b) in cv.mac_rates.iter().zip(&cv.covariance_bc_rates) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn bc_covariances_are_rejected() {
        let system = scalar_system(1, 1.0);
        let s = CovarianceSet::new(Domain::Bc, vec![scalar(1.0)]).unwrap();
        assert!(matches!(
            mac_to_bc_covariance(&system, &s),
            Err(Error::Dimension(_))
        ));
    }
}
