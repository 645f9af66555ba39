//! Filter-based MAC/BC conversion with successive interference cancellation
//! in the MAC and dirty-paper coding in the BC.
//!
//! The MAC-to-BC direction computes MMSE receivers, decorrelates every
//! user's link, solves the upper-triangular scaling system by
//! back-substitution and flips the filters. The BC-to-MAC direction runs
//! the same steps with the roles of the domains exchanged, which makes the
//! scaling system lower triangular.

use crate::error::Result;
use crate::filter_duality::{
    self, run_bc_to_mac, run_mac_to_bc, BasisSource, BcReceivers, BcToMac, Decorrelated, MMatrix,
    MacToBc, Parallelism,
};
use crate::model::{BcFilterSet, CMat, Domain, System};
use crate::rates::{InterferenceMode, Links};

pub use crate::filter_duality::{flip_filters, remove_zero_streams, solve_scaling};

const MODE: InterferenceMode = InterferenceMode::Sic;

/// `G_k = T_k^H H_k^H (sum_{l <= k} H_l T_l T_l^H H_l^H + s2 I)^{-1}`.
pub fn mmse_receivers_sic(system: &System, precoders: &[CMat]) -> Result<Vec<CMat>> {
    filter_duality::mmse_receivers(
        &Links::new(system, Domain::Mac),
        MODE,
        precoders,
        Parallelism::Serial,
    )
}

/// Rotates `T_k` and `G_k` by the eigenbasis of `G_k H_k T_k`.
pub fn decorrelate(
    system: &System,
    precoders: &[CMat],
    receivers: &[CMat],
) -> Result<Decorrelated> {
    filter_duality::decorrelate(
        &Links::new(system, Domain::Mac),
        MODE,
        precoders,
        receivers,
        BasisSource::ReceiverProduct,
        Parallelism::Serial,
    )
}

/// Block upper-triangular scaling system of the decorrelated MAC.
pub fn build_m_matrix_sic(system: &System, dec: &Decorrelated) -> MMatrix {
    filter_duality::build_m_matrix(&Links::new(system, Domain::Mac), MODE, dec)
}

pub fn mac_to_bc(system: &System, precoders: &[CMat]) -> Result<MacToBc> {
    run_mac_to_bc(system, precoders, MODE, Parallelism::Serial)
}

pub fn mac_to_bc_with(system: &System, precoders: &[CMat], par: Parallelism) -> Result<MacToBc> {
    run_mac_to_bc(system, precoders, MODE, par)
}

/// Converts BC precoders to the MAC using recomputed BC MMSE receivers.
pub fn bc_to_mac(system: &System, precoders: &[CMat]) -> Result<BcToMac> {
    run_bc_to_mac(
        system,
        &BcFilterSet::new(precoders.to_vec()),
        BcReceivers::Mmse,
        MODE,
        Parallelism::Serial,
    )
}

pub fn bc_to_mac_with(
    system: &System,
    bc: &BcFilterSet,
    receivers: BcReceivers,
    par: Parallelism,
) -> Result<BcToMac> {
    run_bc_to_mac(system, bc, receivers, MODE, par)
}
