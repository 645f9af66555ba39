//! Stream-wise filter duality shared by both interference modes and both
//! conversion directions.
//!
//! A conversion takes transmit filters of one domain (the primal), computes
//! MMSE receivers, rotates every user's link with the eigenbasis of its
//! receiver-channel-precoder product so each user's streams decouple,
//! solves a Z-matrix system for per-stream power scalings and swaps the
//! roles of the filters: scaled, conjugated receivers become the dual
//! precoders and inversely scaled, conjugated precoders become the dual
//! receivers.
//!
//! Row `(k, i)` of the scaling system equates the primal and dual SINR of
//! stream `(k, i)`:
//!
//! ```text
//! a_ki [s2 |g_ki|^2 + sum_{l in I(k), m} |g_ki^T L(k,l) t_lm|^2]
//!     - sum_{l : k in I(l), m} a_lm |g_lm^T L(l,k) t_ki|^2 = s2 |t_ki|^2
//! ```
//!
//! where `I(k)` is the set of users interfering with receiver `k` and
//! `L(k, l)` the channel from user `l` to receiver `k`. Every column sums to
//! `s2 |g|^2`, which is why summing the rows conserves transmit power.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    BcFilterSet, CMat, Domain, MacFilterSet, RateReport, ScalingSolution, StreamLayout, System,
};
use crate::numerics::{self, cholesky};
use crate::rates::{
    interferes, receiver_covariance, report, InterferenceMode, Links, Transmission,
};

/// Streams whose scaling-matrix diagonal falls below this fraction of the
/// largest diagonal entry are removed as zero streams.
pub const ZERO_STREAM_TOL: f64 = 1e-24;
/// Relative off-diagonal bound for a decorrelated receiver-channel-precoder
/// product.
pub const DECORRELATION_TOL: f64 = 1e-9;
/// Absolute off-diagonal bound used when a user's diagonal vanishes.
pub const DECORRELATION_ABS_TOL: f64 = 1e-12;
/// Solved scalings above `-NEGATIVE_SCALING_TOL * max` are clamped to zero.
pub const NEGATIVE_SCALING_TOL: f64 = 1e-12;

thread_local! {
    static COMMON_FACTORIZATIONS: Cell<usize> = const { Cell::new(0) };
}

/// Number of times the shared MAC receive covariance of the linear mode has
/// been factored on this thread.
pub fn common_factorization_count() -> usize {
    COMMON_FACTORIZATIONS.with(Cell::get)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    #[default]
    Serial,
    /// Per-user and per-stream phases run on the rayon pool.
    Parallel,
}

fn map_indices<T, F>(n: usize, par: Parallelism, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    match par {
        Parallelism::Serial => (0..n).map(f).collect(),
        Parallelism::Parallel => (0..n).into_par_iter().map(f).collect(),
    }
}

/// Filters after the per-user decorrelating rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Decorrelated {
    /// Rotated precoders `T_k W_k`.
    pub transmit: Vec<CMat>,
    /// Rotated receivers `W_k^H G_k`.
    pub receive: Vec<CMat>,
    /// Unitary rotations `W_k`.
    pub rotations: Vec<CMat>,
}

impl Decorrelated {
    pub fn layout(&self) -> StreamLayout {
        StreamLayout::new(&self.transmit.iter().map(|t| t.ncols()).collect::<Vec<_>>())
    }
}

/// Largest off-diagonal magnitude and largest diagonal magnitude of
/// `G_k L(k,k) T_k`.
pub fn link_coupling(links: &Links, transmit: &[CMat], receive: &[CMat], k: usize) -> (f64, f64) {
    let d = &receive[k] * links.get(k, k) * &transmit[k];
    let mut off = 0.0f64;
    let mut diag = 0.0f64;
    for i in 0..d.nrows() {
        for j in 0..d.ncols() {
            if i == j {
                diag = diag.max(d[(i, j)].norm());
            } else {
                off = off.max(d[(i, j)].norm());
            }
        }
    }
    (off, diag)
}

/// Checks that every user's receiver-channel-precoder product is diagonal.
pub fn check_decorrelated(links: &Links, transmit: &[CMat], receive: &[CMat]) -> Result<()> {
    for k in 0..links.users() {
        let (off, diag) = link_coupling(links, transmit, receive, k);
        if off > decorrelation_bound(diag) {
            return Err(Error::NotDecorrelated {
                user: k,
                off_diagonal: off,
                diagonal: diag,
            });
        }
    }
    Ok(())
}

pub fn decorrelation_bound(max_diagonal: f64) -> f64 {
    if max_diagonal <= DECORRELATION_ABS_TOL {
        DECORRELATION_ABS_TOL
    } else {
        DECORRELATION_TOL * max_diagonal
    }
}

/// MMSE receivers `G_k = T_k^H L(k,k)^H A_k^{-1}` where `A_k` is noise plus
/// the user's own signal plus the interferers of the mode.
///
/// In the linear MAC `A_k` is the same matrix for every user and is
/// factored once.
pub fn mmse_receivers(
    links: &Links,
    mode: InterferenceMode,
    transmit: &[CMat],
    par: Parallelism,
) -> Result<Vec<CMat>> {
    let covs: Vec<CMat> = transmit.iter().map(|t| t * t.adjoint()).collect();
    if links.domain() == Domain::Mac && mode == InterferenceMode::Linear {
        let x = receiver_covariance(links, mode, &covs, 0, true);
        let chol = cholesky(&x)?;
        COMMON_FACTORIZATIONS.with(|c| c.set(c.get() + 1));
        return map_indices(links.users(), par, |k| {
            Ok(chol.solve(&(links.get(k, k) * &transmit[k])).adjoint())
        });
    }
    map_indices(links.users(), par, |k| {
        let a = receiver_covariance(links, mode, &covs, k, true);
        Ok(cholesky(&a)?
            .solve(&(links.get(k, k) * &transmit[k]))
            .adjoint())
    })
}

/// Where the decorrelating eigenbasis is read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisSource {
    /// Hermitian part of `G_k L(k,k) T_k` for MMSE receivers `G_k`.
    ReceiverProduct,
    /// `T_k^H L^H A_k^{-1} L T_k` with `A_k` including the own signal.
    WhitenedGram,
}

/// Rotates each user's filters by the eigenbasis of its MMSE link so the
/// error covariance becomes diagonal.
pub fn decorrelate(
    links: &Links,
    mode: InterferenceMode,
    transmit: &[CMat],
    receive: &[CMat],
    source: BasisSource,
    par: Parallelism,
) -> Result<Decorrelated> {
    let covs: Vec<CMat> = match source {
        BasisSource::WhitenedGram => transmit.iter().map(|t| t * t.adjoint()).collect(),
        BasisSource::ReceiverProduct => Vec::new(),
    };
    let shared = match (source, links.domain(), mode) {
        (BasisSource::WhitenedGram, Domain::Mac, InterferenceMode::Linear) => {
            Some(cholesky(&receiver_covariance(links, mode, &covs, 0, true))?)
        }
        _ => None,
    };
    let per_user = map_indices(links.users(), par, |k| {
        let h = links.get(k, k);
        let t = &transmit[k];
        let product = match source {
            BasisSource::ReceiverProduct => {
                let p = &receive[k] * h * t;
                numerics::check_hermitian(&p, crate::model::STRUCTURAL_TOL)?;
                numerics::hermitian_part(&p)
            }
            BasisSource::WhitenedGram => {
                let e = match &shared {
                    Some(chol) => chol.solve_lower(&(h * t)),
                    None => cholesky(&receiver_covariance(links, mode, &covs, k, true))?
                        .solve_lower(&(h * t)),
                };
                numerics::hermitian_part(&(e.adjoint() * e))
            }
        };
        let w = numerics::hermitian_eig(&product)?.basis;
        Ok((t * &w, w.adjoint() * &receive[k], w))
    })?;
    let mut dec = Decorrelated {
        transmit: Vec::with_capacity(per_user.len()),
        receive: Vec::with_capacity(per_user.len()),
        rotations: Vec::with_capacity(per_user.len()),
    };
    for (t, g, w) in per_user {
        dec.transmit.push(t);
        dec.receive.push(g);
        dec.rotations.push(w);
    }
    Ok(dec)
}

/// Shape of the scaling matrix, fixed by the interference pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MStructure {
    UpperTriangular,
    LowerTriangular,
    Full,
}

impl MStructure {
    pub fn of(mode: InterferenceMode, primal: Domain) -> Self {
        match (mode, primal) {
            (InterferenceMode::Linear, _) => MStructure::Full,
            (InterferenceMode::Sic, Domain::Mac) => MStructure::UpperTriangular,
            (InterferenceMode::Sic, Domain::Bc) => MStructure::LowerTriangular,
        }
    }
}

/// Scaling system `M a = rhs` over all streams in user-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct MMatrix {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub structure: MStructure,
}

impl MMatrix {
    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    /// Largest positive off-diagonal entry (zero for a Z-matrix).
    pub fn max_offdiagonal(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    worst = worst.max(self.matrix[(i, j)]);
                }
            }
        }
        worst
    }

    pub fn min_diagonal(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.matrix[(i, i)])
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest `(|m_jj| - sum_{i != j} |m_ij|) / |m_jj|` over columns with
    /// a nonzero diagonal; nonnegative for a column diagonally dominant
    /// matrix.
    pub fn column_dominance_margin(&self) -> f64 {
        let n = self.dim();
        let mut margin = f64::INFINITY;
        for j in 0..n {
            let d = self.matrix[(j, j)].abs();
            if d == 0.0 {
                continue;
            }
            let off: f64 = (0..n)
                .filter(|&i| i != j)
                .map(|i| self.matrix[(i, j)].abs())
                .sum();
            margin = margin.min((d - off) / d);
        }
        margin
    }

    /// Largest nonzero entry violating the declared triangular structure.
    pub fn structure_violation(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let outside = match self.structure {
                    MStructure::UpperTriangular => i > j,
                    MStructure::LowerTriangular => i < j,
                    MStructure::Full => false,
                };
                if outside {
                    worst = worst.max(self.matrix[(i, j)].abs());
                }
            }
        }
        worst
    }
}

/// Assembles the scaling system for decorrelated filters of the primal
/// domain given by `links`.
pub fn build_m_matrix(links: &Links, mode: InterferenceMode, dec: &Decorrelated) -> MMatrix {
    let layout = dec.layout();
    let n = layout.len();
    let noise = links.system().noise_var();
    let mut matrix = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for (s, k, i) in layout.iter() {
        matrix[(s, s)] = noise * dec.receive[k].row(i).norm_squared();
        rhs[s] = noise * dec.transmit[k].column(i).norm_squared();
    }
    // Receiver a sees interferer b through cross[i, m] = g_ai^T L(a,b) t_bm.
    for a in 0..links.users() {
        for b in 0..links.users() {
            if !interferes(mode, links.domain(), a, b) {
                continue;
            }
            let cross = &dec.receive[a] * links.get(a, b) * &dec.transmit[b];
            for i in 0..cross.nrows() {
                let col = layout.index(a, i);
                for m in 0..cross.ncols() {
                    let v = cross[(i, m)].norm_sqr();
                    matrix[(col, col)] += v;
                    matrix[(layout.index(b, m), col)] = -v;
                }
            }
        }
    }
    MMatrix {
        matrix,
        rhs,
        structure: MStructure::of(mode, links.domain()),
    }
}

/// Drops streams whose column of `M` vanishes, i.e. whose receive filter is
/// zero. Returns the reduced system and the mask of kept streams.
pub fn remove_zero_streams(m: &MMatrix) -> (MMatrix, Vec<bool>) {
    let n = m.dim();
    let max_diag = (0..n).map(|i| m.matrix[(i, i)]).fold(0.0f64, f64::max);
    let mask: Vec<bool> = (0..n)
        .map(|i| m.matrix[(i, i)] > ZERO_STREAM_TOL * max_diag)
        .collect();
    let kept: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    let matrix = DMatrix::from_fn(kept.len(), kept.len(), |r, c| m.matrix[(kept[r], kept[c])]);
    let rhs = DVector::from_fn(kept.len(), |r, _| m.rhs[kept[r]]);
    (
        MMatrix {
            matrix,
            rhs,
            structure: m.structure,
        },
        mask,
    )
}

fn clamp_scalings(raw: DVector<f64>) -> Result<Vec<f64>> {
    let max = raw.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    raw.iter()
        .map(|&a| {
            if a >= 0.0 {
                Ok(a)
            } else if a >= -NEGATIVE_SCALING_TOL * max.max(1.0) {
                Ok(0.0)
            } else {
                Err(Error::NegativeScaling(a))
            }
        })
        .collect()
}

/// Solves a reduced scaling system and expands the solution over `mask`.
///
/// Triangular systems are solved by substitution (a lower-triangular
/// system is reversed into upper-triangular form first), full systems by
/// pivoted LU.
pub fn solve_scaling(reduced: &MMatrix, mask: &[bool]) -> Result<ScalingSolution> {
    let n = reduced.dim();
    let raw = match reduced.structure {
        MStructure::UpperTriangular => {
            numerics::solve_block_upper_triangular(&reduced.matrix, &reduced.rhs)?
        }
        MStructure::LowerTriangular => {
            let flipped = DMatrix::from_fn(n, n, |i, j| reduced.matrix[(n - 1 - i, n - 1 - j)]);
            let rhs = DVector::from_fn(n, |i, _| reduced.rhs[n - 1 - i]);
            let x = numerics::solve_block_upper_triangular(&flipped, &rhs)?;
            DVector::from_fn(n, |i, _| x[n - 1 - i])
        }
        MStructure::Full => numerics::solve_lu(&reduced.matrix, &reduced.rhs)?,
    };
    let solved = clamp_scalings(raw)?;
    let mut alpha_sq = vec![0.0; mask.len()];
    let mut it = solved.into_iter();
    for (slot, &active) in alpha_sq.iter_mut().zip(mask) {
        if active {
            *slot = it.next().expect("mask agrees with reduced dimension");
        }
    }
    Ok(ScalingSolution {
        alpha_sq,
        active_mask: mask.to_vec(),
    })
}

/// Swaps filter roles: `p_ki = a_ki g_ki^*` and `b_ki = t_ki^* / a_ki`.
/// Removed streams get zero filters. Every stream is computed from its own
/// `(g_ki, t_ki, a_ki)` only.
pub fn flip_filters(
    dec: &Decorrelated,
    scaling: &ScalingSolution,
    par: Parallelism,
) -> Result<(Vec<CMat>, Vec<CMat>)> {
    let layout = dec.layout();
    let streams: Vec<(usize, usize, usize)> = layout.iter().collect();
    let flipped = map_indices(streams.len(), par, |idx| {
        let (s, k, i) = streams[idx];
        let g = dec.receive[k].row(i);
        let t = dec.transmit[k].column(i);
        if !scaling.active_mask[s] {
            return Ok((CMat::zeros(g.ncols(), 1), CMat::zeros(1, t.nrows())));
        }
        let a2 = scaling.alpha_sq[s];
        if !(a2 > 0.0) {
            return Err(Error::ZeroScaling { user: k, stream: i });
        }
        let a = a2.sqrt();
        Ok((
            CMat::from_iterator(g.ncols(), 1, g.iter().map(|z| z.conj() * a)),
            CMat::from_iterator(1, t.nrows(), t.iter().map(|z| z.conj() / a)),
        ))
    })?;
    let mut precoders: Vec<CMat> = dec
        .receive
        .iter()
        .map(|g| CMat::zeros(g.ncols(), g.nrows()))
        .collect();
    let mut receivers: Vec<CMat> = dec
        .transmit
        .iter()
        .map(|t| CMat::zeros(t.ncols(), t.nrows()))
        .collect();
    for ((_, k, i), (p, b)) in streams.into_iter().zip(flipped) {
        precoders[k].set_column(i, &p.column(0));
        receivers[k].set_row(i, &b.row(0));
    }
    Ok((precoders, receivers))
}

/// How the primal receive filters are obtained.
#[derive(Debug, Clone, Copy)]
pub enum Receivers<'a> {
    /// MMSE receivers followed by decorrelation.
    Mmse,
    /// Supplied receivers that already decorrelate every link; no rotation
    /// is applied.
    Given(&'a [CMat]),
}

/// Every intermediate of one conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct Conversion {
    pub decorrelated: Decorrelated,
    pub m_matrix: MMatrix,
    pub scaling: ScalingSolution,
    /// Dual-domain precoders.
    pub dual_transmit: Vec<CMat>,
    /// Dual-domain receive filters.
    pub dual_receive: Vec<CMat>,
}

pub fn convert(
    links: &Links,
    mode: InterferenceMode,
    transmit: &[CMat],
    receivers: Receivers,
    par: Parallelism,
) -> Result<Conversion> {
    let decorrelated = match receivers {
        Receivers::Mmse => {
            let g = mmse_receivers(links, mode, transmit, par)?;
            let source = match mode {
                InterferenceMode::Sic => BasisSource::ReceiverProduct,
                InterferenceMode::Linear => BasisSource::WhitenedGram,
            };
            decorrelate(links, mode, transmit, &g, source, par)?
        }
        Receivers::Given(g) => {
            check_decorrelated(links, transmit, g)?;
            Decorrelated {
                transmit: transmit.to_vec(),
                receive: g.to_vec(),
                rotations: transmit
                    .iter()
                    .map(|t| numerics::identity(t.ncols()))
                    .collect(),
            }
        }
    };
    let m_matrix = build_m_matrix(links, mode, &decorrelated);
    let (reduced, mask) = remove_zero_streams(&m_matrix);
    let scaling = solve_scaling(&reduced, &mask)?;
    let (dual_transmit, dual_receive) = flip_filters(&decorrelated, &scaling, par)?;
    Ok(Conversion {
        decorrelated,
        m_matrix,
        scaling,
        dual_transmit,
        dual_receive,
    })
}

/// Result of a MAC-to-BC conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct MacToBc {
    /// Decorrelated MAC filters the BC system is dual to.
    pub mac: MacFilterSet,
    pub bc: BcFilterSet,
    pub conversion: Conversion,
    pub mac_report: RateReport,
    pub bc_report: RateReport,
}

/// Result of a BC-to-MAC conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct BcToMac {
    /// Decorrelated BC filters the MAC system is dual to.
    pub bc: BcFilterSet,
    pub mac: MacFilterSet,
    pub conversion: Conversion,
    pub bc_report: RateReport,
    pub mac_report: RateReport,
}

fn stream_report(
    system: &System,
    domain: Domain,
    mode: InterferenceMode,
    transmit: &[CMat],
    receive: &[CMat],
    mask: &[bool],
) -> Result<RateReport> {
    report(
        system,
        Transmission::Filters {
            domain,
            transmit,
            receive,
            active: Some(mask),
        },
        mode,
    )
}

pub(crate) fn run_mac_to_bc(
    system: &System,
    precoders: &[CMat],
    mode: InterferenceMode,
    par: Parallelism,
) -> Result<MacToBc> {
    MacFilterSet::new(precoders.to_vec()).check(system.dims())?;
    let links = Links::new(system, Domain::Mac);
    let conversion = convert(&links, mode, precoders, Receivers::Mmse, par)?;
    let mask = &conversion.scaling.active_mask;
    let dec = &conversion.decorrelated;
    let mac_report = stream_report(system, Domain::Mac, mode, &dec.transmit, &dec.receive, mask)?;
    let bc_report = stream_report(
        system,
        Domain::Bc,
        mode,
        &conversion.dual_transmit,
        &conversion.dual_receive,
        mask,
    )?;
    Ok(MacToBc {
        mac: MacFilterSet {
            precoders: dec.transmit.clone(),
            receivers: Some(dec.receive.clone()),
        },
        bc: BcFilterSet {
            precoders: conversion.dual_transmit.clone(),
            receivers: Some(conversion.dual_receive.clone()),
        },
        conversion,
        mac_report,
        bc_report,
    })
}

/// Which BC receive filters a BC-to-MAC conversion starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BcReceivers {
    /// Recompute MMSE receivers in the BC and decorrelate.
    #[default]
    Mmse,
    /// Keep the receivers stored in the filter set; they must already
    /// decorrelate every user's link, as flipped receivers do.
    Given,
}

pub(crate) fn run_bc_to_mac(
    system: &System,
    bc: &BcFilterSet,
    receivers: BcReceivers,
    mode: InterferenceMode,
    par: Parallelism,
) -> Result<BcToMac> {
    bc.check(system.dims())?;
    let links = Links::new(system, Domain::Bc);
    let rx = match receivers {
        BcReceivers::Mmse => Receivers::Mmse,
        BcReceivers::Given => Receivers::Given(
            bc.receivers
                .as_deref()
                .ok_or(Error::Missing("BC receive filters"))?,
        ),
    };
    let conversion = convert(&links, mode, &bc.precoders, rx, par)?;
    let mask = &conversion.scaling.active_mask;
    let dec = &conversion.decorrelated;
    let bc_report = stream_report(system, Domain::Bc, mode, &dec.transmit, &dec.receive, mask)?;
    let mac_report = stream_report(
        system,
        Domain::Mac,
        mode,
        &conversion.dual_transmit,
        &conversion.dual_receive,
        mask,
    )?;
    Ok(BcToMac {
        bc: BcFilterSet {
            precoders: dec.transmit.clone(),
            receivers: Some(dec.receive.clone()),
        },
        mac: MacFilterSet {
            precoders: conversion.dual_transmit.clone(),
            receivers: Some(conversion.dual_receive.clone()),
        },
        conversion,
        bc_report,
        mac_report,
    })
}
