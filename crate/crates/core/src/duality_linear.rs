//! Filter-based MAC/BC conversion for linear transceivers without
//! inter-user interference cancellation.
//!
//! Every user's streams are decoded separately after decorrelation, which
//! still attains the joint-decoding rate of that user. The scaling system
//! couples all users and is solved by pivoted LU.

use crate::error::Result;
use crate::filter_duality::{
    self, run_bc_to_mac, run_mac_to_bc, BasisSource, BcReceivers, BcToMac, Decorrelated, MMatrix,
    MStructure, MacToBc, Parallelism,
};
use crate::model::{BcFilterSet, CMat, Domain, ScalingSolution, System};
use crate::rates::{InterferenceMode, Links};

const MODE: InterferenceMode = InterferenceMode::Linear;

/// `G_k = T_k^H H_k^H X^{-1}` with `X = s2 I + sum_l H_l T_l T_l^H H_l^H`
/// factored once for all users.
pub fn mmse_receivers_linear(system: &System, precoders: &[CMat]) -> Result<Vec<CMat>> {
    filter_duality::mmse_receivers(
        &Links::new(system, Domain::Mac),
        MODE,
        precoders,
        Parallelism::Serial,
    )
}

/// Rotates `T_k` and `G_k` by the eigenbasis of `T_k^H H_k^H X^{-1} H_k T_k`.
pub fn decorrelate_linear(
    system: &System,
    precoders: &[CMat],
    receivers: &[CMat],
) -> Result<Decorrelated> {
    filter_duality::decorrelate(
        &Links::new(system, Domain::Mac),
        MODE,
        precoders,
        receivers,
        BasisSource::WhitenedGram,
        Parallelism::Serial,
    )
}

/// Full scaling system of the decorrelated MAC.
pub fn build_m_matrix_linear(system: &System, dec: &Decorrelated) -> MMatrix {
    filter_duality::build_m_matrix(&Links::new(system, Domain::Mac), MODE, dec)
}

/// Solves a reduced scaling system by LU regardless of its sparsity.
pub fn solve_scaling_linear(reduced: &MMatrix, mask: &[bool]) -> Result<ScalingSolution> {
    let full = MMatrix {
        structure: MStructure::Full,
        ..reduced.clone()
    };
    filter_duality::solve_scaling(&full, mask)
}

pub fn mac_to_bc_linear(system: &System, precoders: &[CMat]) -> Result<MacToBc> {
    run_mac_to_bc(system, precoders, MODE, Parallelism::Serial)
}

pub fn mac_to_bc_linear_with(
    system: &System,
    precoders: &[CMat],
    par: Parallelism,
) -> Result<MacToBc> {
    run_mac_to_bc(system, precoders, MODE, par)
}

/// Converts BC precoders to the MAC using recomputed BC MMSE receivers.
pub fn bc_to_mac_linear(system: &System, precoders: &[CMat]) -> Result<BcToMac> {
    run_bc_to_mac(
        system,
        &BcFilterSet::new(precoders.to_vec()),
        BcReceivers::Mmse,
        MODE,
        Parallelism::Serial,
    )
}

pub fn bc_to_mac_linear_with(
    system: &System,
    bc: &BcFilterSet,
    receivers: BcReceivers,
    par: Parallelism,
) -> Result<BcToMac> {
    run_bc_to_mac(system, bc, receivers, MODE, par)
}

/// Rate of user `k` when its streams are decoded separately while treating
/// each other as interference: `-log2 prod_i [C_k]_ii`.
pub fn separate_decoding_rate(system: &System, precoders: &[CMat], k: usize) -> Result<f64> {
    let c = crate::rates::mac_error_covariance(system, precoders, k, MODE)?;
    let mut rate = 0.0;
    for i in 0..c.nrows() {
        let d = c[(i, i)].re;
        if !(d >= crate::rates::LOG_ARGUMENT_FLOOR) {
            return Err(crate::error::Error::InvalidErrorCovariance(d));
        }
        rate -= d.min(1.0).log2();
    }
    Ok(rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter_duality::{common_factorization_count, remove_zero_streams};
    use crate::model::{CovarianceSet, MacFilterSet};
    use crate::numerics;
    use crate::rates;
    use crate::testing::*;

    #[test]
    fn single_user_matches_sic() {
        let (system, t) = random(dims(3, &[3], &[2], 0.5), 1, 4.0);
        let lin = mmse_receivers_linear(&system, &t).unwrap();
        let sic = crate::duality_sic::mmse_receivers_sic(&system, &t).unwrap();
        assert!(max_entry_gap(&lin[0], &sic[0]) < 1e-14);

        let a = mac_to_bc_linear(&system, &t).unwrap();
        let b = crate::duality_sic::mac_to_bc(&system, &t).unwrap();
        assert!(max_entry_gap(&a.bc.precoders[0], &b.bc.precoders[0]) < 1e-12);
        assert!((a.bc_report.sum_rate - b.bc_report.sum_rate).abs() < 1e-12);

        let (scalar_sys, scalar_t) = (scalar_system(1, 1.0), vec![scalar(1.0)]);
        let out = mac_to_bc_linear(&scalar_sys, &scalar_t).unwrap();
        assert_eq!(out.conversion.decorrelated.rotations[0], scalar(1.0));
        assert!((out.bc_report.per_user_rate[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_precoders_give_zero_receivers() {
        let system = random(dims(2, &[2, 1], &[1, 1], 1.0), 2, 1.0).0;
        let g = mmse_receivers_linear(&system, &[CMat::zeros(2, 1), CMat::zeros(1, 1)]).unwrap();
        assert!(g.iter().all(|m| m.iter().all(|z| z.norm() == 0.0)));
    }

    #[test]
    fn receivers_match_direct_formula() {
        let (system, t) = random(dims(4, &[2, 3, 1], &[2, 2, 1], 0.8), 3, 6.0);
        let g = mmse_receivers_linear(&system, &t).unwrap();
        let mut x = numerics::scaled_identity(4, 0.8);
        for (k, tk) in t.iter().enumerate() {
            let v = system.channel(k) * tk;
            x += &v * v.adjoint();
        }
        let x_inv = x.try_inverse().unwrap();
        for k in 0..3 {
            let expected = t[k].adjoint() * system.channel(k).adjoint() * &x_inv;
            assert!(max_entry_gap(&g[k], &expected) < 1e-12);
        }
    }

    #[test]
    fn shared_matrix_is_factored_once_per_call() {
        let (system, t) = random(dims(4, &[2, 2, 2], &[1, 2, 2], 1.0), 4, 3.0);
        let before = common_factorization_count();
        mmse_receivers_linear(&system, &t).unwrap();
        assert_eq!(common_factorization_count(), before + 1);
        crate::duality_sic::mmse_receivers_sic(&system, &t).unwrap();
        assert_eq!(common_factorization_count(), before + 1);
    }

    #[test]
    fn decorrelation_diagonalizes_error_covariance() {
        let diag = numerics::identity(2);
        let d = dims(2, &[2], &[2], 1.0);
        let system = System::new(d, crate::model::ChannelSet::new(vec![diag])).unwrap();
        let t = vec![CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![
            c(3.0),
            c(1.0),
        ]))];
        let g = mmse_receivers_linear(&system, &t).unwrap();
        let dec = decorrelate_linear(&system, &t, &g).unwrap();
        assert!(max_entry_gap(&dec.rotations[0], &numerics::identity(2)) < 1e-12);

        let (system, t) = random(dims(3, &[2, 2], &[2, 2], 0.5), 5, 5.0);
        let g = mmse_receivers_linear(&system, &t).unwrap();
        let dec = decorrelate_linear(&system, &t, &g).unwrap();
        for k in 0..2 {
            let before = rates::mac_error_covariance(&system, &t, k, MODE).unwrap();
            let after = rates::mac_error_covariance(&system, &dec.transmit, k, MODE).unwrap();
            let off = after[(0, 1)].norm();
            assert!(off < 1e-12 * after[(0, 0)].re.max(after[(1, 1)].re));
            let a = rates::rate_from_error_cov(&before).unwrap();
            let b = rates::rate_from_error_cov(&after).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn m_matrix_couples_every_pair_of_users() {
        let (system, t) = random(dims(3, &[2, 2], &[1, 2], 0.7), 6, 4.0);
        let g = mmse_receivers_linear(&system, &t).unwrap();
        let dec = decorrelate_linear(&system, &t, &g).unwrap();
        let m = build_m_matrix_linear(&system, &dec);
        assert!(m.matrix[(0, 1)] < 0.0 && m.matrix[(0, 2)] < 0.0);
        assert!(m.matrix[(1, 0)] < 0.0 && m.matrix[(2, 0)] < 0.0);
        assert_eq!(m.matrix[(1, 2)], 0.0);
        let layout = dec.layout();
        for (col, k, i) in layout.iter() {
            let gi = dec.receive[k].row(i);
            for (row, l, j) in layout.iter() {
                if l != k {
                    let v = (gi * system.channel(l) * dec.transmit[l].column(j))[(0, 0)].norm_sqr();
                    assert_eq!(m.matrix[(row, col)], -v);
                }
            }
        }

        let (system1, t1) = random(dims(3, &[2], &[2], 0.7), 7, 2.0);
        let dec_lin = decorrelate_linear(
            &system1,
            &t1,
            &mmse_receivers_linear(&system1, &t1).unwrap(),
        )
        .unwrap();
        let m_lin = build_m_matrix_linear(&system1, &dec_lin);
        let m_sic = crate::duality_sic::build_m_matrix_sic(&system1, &dec_lin);
        assert_eq!(m_lin.matrix, m_sic.matrix);
    }

    #[test]
    fn lu_and_substitution_agree_for_one_user() {
        let (system, t) = random(dims(3, &[2], &[2], 0.7), 8, 2.0);
        let out = crate::duality_sic::mac_to_bc(&system, &t).unwrap();
        let (reduced, mask) = remove_zero_streams(&out.conversion.m_matrix);
        let lu = solve_scaling_linear(&reduced, &mask).unwrap();
        for (a, b) in lu.alpha_sq.iter().zip(&out.conversion.scaling.alpha_sq) {
            assert!((a - b).abs() <= 1e-14 * b);
        }
        let decoupled = MMatrix {
            matrix: nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 2.0])),
            rhs: nalgebra::DVector::from_vec(vec![1.0, 1.0]),
            structure: MStructure::Full,
        };
        assert_eq!(
            solve_scaling_linear(&decoupled, &[true, true])
                .unwrap()
                .alpha_sq,
            vec![0.25, 0.5]
        );
    }

    #[test]
    fn symmetric_two_user_scalar_case() {
        let system = scalar_system(2, 1.0);
        let t = vec![scalar(1.0), scalar(1.0)];
        let out = mac_to_bc_linear(&system, &t).unwrap();
        for k in 0..2 {
            assert!((out.mac_report.per_stream_sinr[k][0] - 0.5).abs() < 1e-14);
            assert!((out.bc_report.per_stream_sinr[k][0] - 0.5).abs() < 1e-14);
        }
        assert!((out.bc_report.sum_power - 2.0).abs() < 1e-14);
    }

    #[test]
    fn random_systems_pass_every_check() {
        for seed in 0..5 {
            let (system, t) = random(dims(6, &[2, 3, 2, 2], &[2, 2, 2, 2], 0.5), 20 + seed, 10.0);
            let scenario =
                crate::harness::Scenario::new(system, Some(MacFilterSet::new(t)), None, seed, MODE)
                    .unwrap();
            let report =
                crate::harness::verify(&scenario, &crate::harness::VerifyOptions::for_mode(MODE));
            assert!(
                report.passed,
                "{:?} {:?}",
                report.failed_checks().collect::<Vec<_>>(),
                report.errors
            );
        }
    }

    #[test]
    fn round_trip_preserves_rates_and_power() {
        let (system, t) = random(dims(3, &[2, 2, 2], &[2, 1, 2], 1.0), 9, 6.0);
        let forward = mac_to_bc_linear(&system, &t).unwrap();
        let back = bc_to_mac_linear_with(
            &system,
            &forward.bc,
            BcReceivers::Given,
            Parallelism::Serial,
        )
        .unwrap();
        let q0 = CovarianceSet::from_precoders(Domain::Mac, &t);
        let q2 = CovarianceSet::from_precoders(Domain::Mac, &back.mac.precoders);
        for k in 0..3 {
            let a = rates::mac_rate_linear_joint(&system, &q0, k).unwrap();
            let b = rates::mac_rate_linear_joint(&system, &q2, k).unwrap();
            assert!((a - b).abs() < 1e-8);
        }
        assert!((back.mac_report.sum_power - 6.0).abs() < 1e-9 * 6.0);

        let p = gaussians(&[(3, 2), (3, 1), (3, 2)], 10);
        let out = bc_to_mac_linear(&system, &p).unwrap();
        let power = crate::model::sum_power(&p);
        assert!((out.mac_report.sum_power - power).abs() <= 1e-9 * power);
    }

    #[test]
    fn joint_decoding_beats_separate_decoding_on_correlated_streams() {
        let d = dims(2, &[2], &[2], 1.0);
        let system = System::new(
            d,
            crate::model::ChannelSet::new(vec![numerics::identity(2)]),
        )
        .unwrap();
        let t = vec![CMat::from_row_slice(
            2,
            2,
            &[c(1.0), c(1.0), c(0.0), c(1.0)],
        )];
        let c_0 = rates::mac_error_covariance(&system, &t, 0, MODE).unwrap();
        let joint = rates::rate_from_error_cov(&c_0).unwrap();
        let separate = separate_decoding_rate(&system, &t, 0).unwrap();
        assert!(joint > separate + 0.1);
        // After decorrelation both coincide.
        let dec = mac_to_bc_linear(&system, &t).unwrap();
        let rotated = separate_decoding_rate(&system, &dec.mac.precoders, 0).unwrap();
        assert!((rotated - joint).abs() < 1e-10);
    }

    #[test]
    fn parallel_matches_serial() {
        let (system, t) = random(dims(5, &[2, 2, 3, 1], &[2, 1, 2, 1], 0.3), 11, 7.0);
        let a = mac_to_bc_linear_with(&system, &t, Parallelism::Serial).unwrap();
        let b = mac_to_bc_linear_with(&system, &t, Parallelism::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
