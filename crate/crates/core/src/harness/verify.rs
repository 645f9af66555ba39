//! Numerical checks run on a scenario by the `verify` command.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::duality_covariance;
use crate::error::Result;
use crate::filter_duality::{
    remove_zero_streams, run_bc_to_mac, run_mac_to_bc, BcReceivers, Conversion, Parallelism,
};
use crate::model::{CMat, CovarianceSet, Domain, RateReport, System};
use crate::numerics;
use crate::rates::{self, InterferenceMode, Links};

use super::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Relative SINR agreement between the two domains.
    pub sinr: f64,
    /// Absolute rate agreement, bits.
    pub rate: f64,
    /// Relative power agreement.
    pub power: f64,
    /// Relative off-diagonal magnitude after decorrelation.
    pub decorrelation: f64,
    /// Relative residual of the scaling solve.
    pub residual: f64,
    /// Filter path against covariance path, bits.
    pub cross_validation: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            sinr: 1e-9,
            rate: 1e-8,
            power: 1e-9,
            decorrelation: 1e-9,
            residual: 1e-10,
            cross_validation: duality_covariance::CROSS_VALIDATION_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub residual: f64,
    pub tolerance: f64,
}

impl Check {
    fn new(name: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            passed: residual <= tolerance,
            residual,
            tolerance,
        }
    }

    /// A check that could not be evaluated because a step failed.
    fn failed(name: impl Into<String>, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            passed: false,
            residual: f64::MAX,
            tolerance,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DomainTuple {
    pub mac: Vec<f64>,
    pub bc: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerPair {
    pub mac: f64,
    pub bc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub passed: bool,
    pub mode: InterferenceMode,
    pub checks: Vec<Check>,
    pub rates: DomainTuple,
    pub power: PowerPair,
    /// Wall-clock time per phase. Only filled when requested, so that the
    /// report is otherwise a pure function of the scenario.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<BTreeMap<String, f64>>,
    /// Failures that stopped a phase early.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

impl VerificationReport {
    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub mode: InterferenceMode,
    pub tolerances: Tolerances,
    pub parallelism: Parallelism,
    pub timings: bool,
}

impl VerifyOptions {
    pub fn for_mode(mode: InterferenceMode) -> Self {
        VerifyOptions {
            mode,
            tolerances: Tolerances::default(),
            parallelism: Parallelism::Serial,
            timings: false,
        }
    }
}

fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < f64::MIN_POSITIVE {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn max_abs_gap(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Joint-decoding rates of the covariances `T T^H` in `domain`.
pub fn joint_rates(
    system: &System,
    domain: Domain,
    mode: InterferenceMode,
    transmit: &[CMat],
) -> Result<Vec<f64>> {
    let covs = CovarianceSet::from_precoders(domain, transmit);
    Ok(rates::report(system, rates::Transmission::Covariances(&covs), mode)?.per_user_rate)
}

fn sinr_gap(primal: &RateReport, dual: &RateReport) -> f64 {
    let mut worst = 0.0f64;
    for (p, d) in primal.per_stream_sinr.iter().zip(&dual.per_stream_sinr) {
        if p.len() != d.len() {
            return f64::INFINITY;
        }
        for (a, b) in p.iter().zip(d) {
            worst = worst.max(relative_gap(*a, *b));
        }
    }
    worst
}

/// Largest off-diagonal magnitude of each user's decorrelated coupling,
/// relative to its largest diagonal entry.
fn decorrelation_residual(
    system: &System,
    primal: Domain,
    mode: InterferenceMode,
    conv: &Conversion,
) -> Result<f64> {
    let links = Links::new(system, primal);
    let dec = &conv.decorrelated;
    let mut worst = 0.0f64;
    for k in 0..system.users() {
        let m = match mode {
            InterferenceMode::Sic => &dec.receive[k] * links.get(k, k) * &dec.transmit[k],
            InterferenceMode::Linear => rates::error_covariance(&links, mode, &dec.transmit, k)?,
        };
        let mut diag = 0.0f64;
        let mut off = 0.0f64;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if i == j {
                    diag = diag.max(m[(i, j)].norm());
                } else {
                    off = off.max(m[(i, j)].norm());
                }
            }
        }
        if off > 0.0 {
            worst = worst.max(off / diag.max(f64::MIN_POSITIVE));
        }
    }
    Ok(worst)
}

/// Change in `-log2 det C_k` caused by the decorrelating rotation.
fn rotation_invariance(
    system: &System,
    primal: Domain,
    mode: InterferenceMode,
    before: &[CMat],
    conv: &Conversion,
) -> Result<f64> {
    let links = Links::new(system, primal);
    let mut worst = 0.0f64;
    for k in 0..system.users() {
        let a = rates::rate_from_error_cov(&rates::error_covariance(&links, mode, before, k)?)?;
        let b = rates::rate_from_error_cov(&rates::error_covariance(
            &links,
            mode,
            &conv.decorrelated.transmit,
            k,
        )?)?;
        worst = worst.max((a - b).abs());
    }
    Ok(worst)
}

struct Direction<'a> {
    label: &'static str,
    primal: Domain,
    transmit: &'a [CMat],
    conversion: &'a Conversion,
    primal_report: &'a RateReport,
    dual_report: &'a RateReport,
}

/// Checks shared by both conversion directions.
fn conversion_checks(
    system: &System,
    mode: InterferenceMode,
    tol: &Tolerances,
    dir: &Direction,
    checks: &mut Vec<Check>,
) -> Result<()> {
    let name = |s: &str| format!("{}.{s}", dir.label);
    let conv = dir.conversion;
    let m = &conv.m_matrix;

    checks.push(Check::new(
        name("sinr_equality"),
        sinr_gap(dir.primal_report, dir.dual_report),
        tol.sinr,
    ));

    let primal_power = crate::model::sum_power(dir.transmit);
    checks.push(Check::new(
        name("power_conservation"),
        relative_gap(primal_power, dir.dual_report.sum_power),
        tol.power,
    ));

    let reference = joint_rates(system, dir.primal, mode, dir.transmit)?;
    let dual_joint = joint_rates(system, dir.primal.dual(), mode, &conv.dual_transmit)?;
    checks.push(Check::new(
        name("stream_rates_match_joint"),
        max_abs_gap(&dir.primal_report.per_user_rate, &reference),
        tol.rate,
    ));
    checks.push(Check::new(
        name("dual_stream_rates_match_primal_joint"),
        max_abs_gap(&dir.dual_report.per_user_rate, &reference),
        tol.rate,
    ));
    // Joint decoding in the dual can only do better than the stream-wise
    // filters it is built from.
    let deficit = reference
        .iter()
        .zip(&dual_joint)
        .map(|(p, d)| (p - d).max(0.0))
        .fold(0.0, f64::max);
    checks.push(Check::new(
        name("dual_joint_rates_not_below_primal"),
        deficit,
        tol.rate,
    ));

    checks.push(Check::new(
        name("m_matrix_sign_pattern"),
        m.max_offdiagonal().max(-m.min_diagonal()).max(0.0),
        0.0,
    ));
    checks.push(Check::new(
        name("m_matrix_column_dominance"),
        (-m.column_dominance_margin()).max(0.0),
        1e-12,
    ));
    checks.push(Check::new(
        name("m_matrix_structure"),
        m.structure_violation(),
        0.0,
    ));

    let (reduced, _) = remove_zero_streams(m);
    let active: Vec<f64> = conv
        .scaling
        .alpha_sq
        .iter()
        .zip(&conv.scaling.active_mask)
        .filter(|(_, &on)| on)
        .map(|(&a, _)| a)
        .collect();
    let x = nalgebra::DVector::from_vec(active);
    checks.push(Check::new(
        name("scaling_residual"),
        numerics::relative_residual(&reduced.matrix, &x, &reduced.rhs),
        tol.residual,
    ));
    let min_alpha = x.iter().copied().fold(f64::INFINITY, f64::min);
    checks.push(Check::new(
        name("scaling_positive"),
        if x.is_empty() || min_alpha > 0.0 {
            0.0
        } else {
            1.0
        },
        0.0,
    ));

    checks.push(Check::new(
        name("decorrelation"),
        decorrelation_residual(system, dir.primal, mode, conv)?,
        tol.decorrelation,
    ));
    checks.push(Check::new(
        name("rotation_invariance"),
        rotation_invariance(system, dir.primal, mode, dir.transmit, conv)?,
        tol.sinr,
    ));
    Ok(())
}

struct Timer {
    enabled: bool,
    phases: BTreeMap<String, f64>,
}

impl Timer {
    fn run<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        if self.enabled {
            *self.phases.entry(phase.to_string()).or_default() +=
                start.elapsed().as_secs_f64() * 1e3;
        }
        out
    }
}

fn record_error(
    errors: &mut Vec<String>,
    checks: &mut Vec<Check>,
    check: &str,
    tolerance: f64,
    e: impl ToString,
) {
    errors.push(format!("{check}: {}", e.to_string()));
    checks.push(Check::failed(check, tolerance));
}

/// Runs every applicable check. Numerical failures are reported as failed
/// checks rather than errors.
pub fn verify(scenario: &Scenario, opts: &VerifyOptions) -> VerificationReport {
    let system = &scenario.system;
    let mode = opts.mode;
    let tol = &opts.tolerances;
    let par = opts.parallelism;
    let mut timer = Timer {
        enabled: opts.timings,
        phases: BTreeMap::new(),
    };
    let mut checks = Vec::new();
    let mut errors = Vec::new();
    let mut rates_out = DomainTuple::default();
    let mut power_out = PowerPair::default();

    if let Some(mac) = &scenario.mac_filters {
        let precoders = &mac.precoders;
        match timer.run("mac_to_bc", || run_mac_to_bc(system, precoders, mode, par)) {
            Ok(out) => {
                rates_out = DomainTuple {
                    mac: out.mac_report.per_user_rate.clone(),
                    bc: out.bc_report.per_user_rate.clone(),
                };
                power_out = PowerPair {
                    mac: crate::model::sum_power(precoders),
                    bc: out.bc_report.sum_power,
                };
                let dir = Direction {
                    label: "mac_to_bc",
                    primal: Domain::Mac,
                    transmit: precoders,
                    conversion: &out.conversion,
                    primal_report: &out.mac_report,
                    dual_report: &out.bc_report,
                };
                if let Err(e) = conversion_checks(system, mode, tol, &dir, &mut checks) {
                    record_error(&mut errors, &mut checks, "mac_to_bc.checks", 0.0, e);
                }

                match timer.run("round_trip", || {
                    run_bc_to_mac(system, &out.bc, BcReceivers::Given, mode, par)
                }) {
                    Ok(back) => {
                        let original = joint_rates(system, Domain::Mac, mode, precoders);
                        let returned = joint_rates(system, Domain::Mac, mode, &back.mac.precoders);
                        match (original, returned) {
                            (Ok(a), Ok(b)) => checks.push(Check::new(
                                "round_trip.rates",
                                max_abs_gap(&a, &b),
                                tol.rate,
                            )),
                            (Err(e), _) | (_, Err(e)) => record_error(
                                &mut errors,
                                &mut checks,
                                "round_trip.rates",
                                tol.rate,
                                e,
                            ),
                        }
                        checks.push(Check::new(
                            "round_trip.power",
                            relative_gap(
                                back.mac_report.sum_power,
                                crate::model::sum_power(precoders),
                            ),
                            tol.power,
                        ));
                    }
                    Err(e) => {
                        record_error(&mut errors, &mut checks, "round_trip.rates", tol.rate, e)
                    }
                }

                if mode == InterferenceMode::Sic {
                    match timer.run("covariance", || {
                        duality_covariance::cross_validate_with(system, precoders, par)
                    }) {
                        Ok(cv) => {
                            checks.push(Check::new(
                                "covariance.cross_validation",
                                cv.max_rate_deviation,
                                tol.cross_validation,
                            ));
                            checks.push(Check::new(
                                "covariance.rates_match_mac",
                                max_abs_gap(&cv.covariance_bc_rates, &cv.mac_rates),
                                tol.rate,
                            ));
                            // The baseline drops covariance components the
                            // channel cannot carry, so it may use less power.
                            let excess = (cv.covariance_bc_power - cv.mac_power).max(0.0)
                                / cv.mac_power.max(f64::MIN_POSITIVE);
                            checks.push(Check::new(
                                "covariance.power_not_exceeded",
                                excess,
                                tol.power,
                            ));
                        }
                        Err(e) => record_error(
                            &mut errors,
                            &mut checks,
                            "covariance.cross_validation",
                            tol.cross_validation,
                            e,
                        ),
                    }
                } else {
                    let joint = (0..system.users())
                        .map(|k| {
                            let c = rates::mac_error_covariance(system, precoders, k, mode)?;
                            let joint = rates::rate_from_error_cov(&c)?;
                            let separate = crate::duality_linear::separate_decoding_rate(
                                system, precoders, k,
                            )?;
                            Ok(separate - joint)
                        })
                        .collect::<Result<Vec<_>>>();
                    match joint {
                        Ok(excess) => checks.push(Check::new(
                            "linear.joint_not_below_separate",
                            excess.into_iter().fold(0.0, f64::max).max(0.0),
                            tol.sinr,
                        )),
                        Err(e) => record_error(
                            &mut errors,
                            &mut checks,
                            "linear.joint_not_below_separate",
                            0.0,
                            e,
                        ),
                    }
                }
            }
            Err(e) => record_error(&mut errors, &mut checks, "mac_to_bc.convert", 0.0, e),
        }
    }

    if let Some(bc) = &scenario.bc_filters {
        let precoders = &bc.precoders;
        match timer.run("bc_to_mac", || {
            run_bc_to_mac(system, bc, BcReceivers::Mmse, mode, par)
        }) {
            Ok(out) => {
                if scenario.mac_filters.is_none() {
                    rates_out = DomainTuple {
                        mac: out.mac_report.per_user_rate.clone(),
                        bc: out.bc_report.per_user_rate.clone(),
                    };
                    power_out = PowerPair {
                        mac: out.mac_report.sum_power,
                        bc: crate::model::sum_power(precoders),
                    };
                }
                let dir = Direction {
                    label: "bc_to_mac",
                    primal: Domain::Bc,
                    transmit: precoders,
                    conversion: &out.conversion,
                    primal_report: &out.bc_report,
                    dual_report: &out.mac_report,
                };
                if let Err(e) = conversion_checks(system, mode, tol, &dir, &mut checks) {
                    record_error(&mut errors, &mut checks, "bc_to_mac.checks", 0.0, e);
                }
            }
            Err(e) => record_error(&mut errors, &mut checks, "bc_to_mac.convert", 0.0, e),
        }
    }

    if scenario.mac_filters.is_none() && scenario.bc_filters.is_none() {
        errors.push("scenario has no filters to verify".into());
    }
    let passed = errors.is_empty() && checks.iter().all(|c| c.passed);
    VerificationReport {
        passed,
        mode,
        checks,
        rates: rates_out,
        power: power_out,
        timings_ms: opts.timings.then_some(timer.phases),
        errors,
    }
}
