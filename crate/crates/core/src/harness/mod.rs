//! Scenario I/O and the operations behind the command-line tool.

mod bench;
mod scenario;
mod verify;

pub use bench::{run_bench, BenchConfig, BenchRow, BenchTable};
pub use scenario::{
    complex_gaussian, generate_random, sample_dimensions, DimensionRanges, Scenario,
};
pub use verify::{
    joint_rates, verify, Check, DomainTuple, PowerPair, Tolerances, VerificationReport,
    VerifyOptions,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter_duality::{run_bc_to_mac, run_mac_to_bc, BcReceivers, Parallelism};
use crate::model::RateReport;
use crate::rates::InterferenceMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    MacToBc,
    BcToMac,
}

/// Output of [`convert`]: the input scenario with the dual filters filled
/// in, and rate reports for both domains.
#[derive(Debug, Clone, PartialEq)]
pub struct ConversionOutput {
    pub scenario: Scenario,
    pub mac_report: RateReport,
    pub bc_report: RateReport,
}

impl ConversionOutput {
    pub fn to_json(&self) -> String {
        let value = serde_json::json!({
            "scenario": self.scenario.to_json_value(),
            "mac_report": self.mac_report,
            "bc_report": self.bc_report,
        });
        serde_json::to_string_pretty(&value).expect("output serializes")
    }
}

/// Converts the scenario's filters in `direction`. The result carries the
/// decorrelated primal filters and the dual filters.
pub fn convert(
    scenario: &Scenario,
    direction: Direction,
    mode: InterferenceMode,
    bc_receivers: BcReceivers,
    par: Parallelism,
) -> Result<ConversionOutput> {
    let system = &scenario.system;
    let mut out = scenario.clone();
    out.mode = mode;
    match direction {
        Direction::MacToBc => {
            let mac = scenario
                .mac_filters
                .as_ref()
                .ok_or(Error::Missing("MAC filters"))?;
            let r = run_mac_to_bc(system, &mac.precoders, mode, par)?;
            out.mac_filters = Some(r.mac);
            out.bc_filters = Some(r.bc);
            Ok(ConversionOutput {
                scenario: out,
                mac_report: r.mac_report,
                bc_report: r.bc_report,
            })
        }
        Direction::BcToMac => {
            let bc = scenario
                .bc_filters
                .as_ref()
                .ok_or(Error::Missing("BC filters"))?;
            let r = run_bc_to_mac(system, bc, bc_receivers, mode, par)?;
            out.mac_filters = Some(r.mac);
            out.bc_filters = Some(r.bc);
            Ok(ConversionOutput {
                scenario: out,
                mac_report: r.mac_report,
                bc_report: r.bc_report,
            })
        }
    }
}

/// Process exit codes of the command-line tool.
pub mod exit_code {
    pub const SUCCESS: i32 = 0;
    pub const VERIFICATION_FAILED: i32 = 1;
    pub const INPUT_ERROR: i32 = 2;
}

/// Machine-readable error line.
pub fn error_json(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SystemDimensions;

    fn scenario(mode: InterferenceMode) -> Scenario {
        let dims = SystemDimensions {
            users: 2,
            bs_antennas: 3,
            user_antennas: vec![2, 2],
            streams: vec![2, 1],
            noise_var: 1.0,
        };
        generate_random(dims, 4, 5.0, mode).unwrap()
    }

    #[test]
    fn convert_fills_both_domains() {
        for mode in [InterferenceMode::Sic, InterferenceMode::Linear] {
            let s = scenario(mode);
            let out = convert(
                &s,
                Direction::MacToBc,
                mode,
                BcReceivers::Mmse,
                Parallelism::Serial,
            )
            .unwrap();
            assert!(out.scenario.bc_filters.is_some());
            let back = Scenario::from_json_lenient(&out.to_json()).unwrap();
            assert_eq!(back, out.scenario);
            let again = convert(
                &back,
                Direction::BcToMac,
                mode,
                BcReceivers::Given,
                Parallelism::Serial,
            )
            .unwrap();
            for (a, b) in again
                .mac_report
                .per_user_rate
                .iter()
                .zip(&out.mac_report.per_user_rate)
            {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn missing_filters_are_an_error() {
        let s = scenario(InterferenceMode::Sic);
        let r = convert(
            &s,
            Direction::BcToMac,
            InterferenceMode::Sic,
            BcReceivers::Mmse,
            Parallelism::Serial,
        );
        assert_eq!(r.unwrap_err(), Error::Missing("BC filters"));
    }

    #[test]
    fn verify_passes_on_random_scenarios() {
        for mode in [InterferenceMode::Sic, InterferenceMode::Linear] {
            let report = verify(&scenario(mode), &VerifyOptions::for_mode(mode));
            let failed: Vec<_> = report.failed_checks().collect();
            assert!(report.passed, "{failed:?} {:?}", report.errors);
            assert!(report.timings_ms.is_none());
        }
    }

    #[test]
    fn verify_report_is_deterministic() {
        let s = scenario(InterferenceMode::Sic);
        let opts = VerifyOptions::for_mode(InterferenceMode::Sic);
        let a = serde_json::to_string(&verify(&s, &opts)).unwrap();
        let b = serde_json::to_string(&verify(&s, &opts)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn error_lines_are_json() {
        let v: serde_json::Value =
            serde_json::from_str(&error_json("input", "bad \"file\"")).unwrap();
        assert_eq!(v["message"], "bad \"file\"");
    }
}
