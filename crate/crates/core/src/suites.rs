//! Named verification suites shared by the CLI and the FFI layer.

use std::str::FromStr;

use crate::analysis::{
    check_consensus_matrix, check_network_props, check_noise_conditions, equivalence_suite, Report, VerificationSetup,
};
use crate::error::{Error, Result};
use crate::otac::check_unbiasedness;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    /// Random-consensus-matrix clauses on the empirical mean matrix.
    ConsensusMatrix,
    /// Unbiasedness of the over-the-air estimators.
    Unbiasedness,
    /// Zero-mean and moment conditions of the consensus noise terms.
    NoiseConditions,
    /// Elementwise update against its stacked matrix form.
    Equivalence,
}

impl Suite {
    pub const ALL: [Suite; 4] = [
        Suite::ConsensusMatrix,
        Suite::Unbiasedness,
        Suite::NoiseConditions,
        Suite::Equivalence,
    ];

    /// Name accepted on the command line.
    pub fn cli_name(&self) -> &'static str {
        match self {
            Suite::ConsensusMatrix => "definition3",
            Suite::Unbiasedness => "lemma1",
            Suite::NoiseConditions => "assumption3",
            Suite::Equivalence => "equivalence",
        }
    }

    pub fn alias(&self) -> &'static str {
        match self {
            Suite::ConsensusMatrix => "consensus-matrix",
            Suite::Unbiasedness => "unbiasedness",
            Suite::NoiseConditions => "noise-conditions",
            Suite::Equivalence => "equivalence",
        }
    }

    pub fn default_samples(&self) -> usize {
        match self {
            Suite::ConsensusMatrix => 10_000,
            Suite::Unbiasedness => 100_000,
            Suite::NoiseConditions => 10_000,
            Suite::Equivalence => 100,
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|k| k.cli_name().eq_ignore_ascii_case(s) || k.alias().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown suite {s:?}; expected one of definition3, lemma1, assumption3, equivalence"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    pub samples: Option<usize>,
    /// Use a topology split into two unlinked groups.
    pub disconnected: bool,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            samples: None,
            disconnected: false,
            seed: 7,
        }
    }
}

fn setup(opts: &SuiteOptions) -> Result<VerificationSetup> {
    if opts.disconnected {
        VerificationSetup::disconnected(5, 2, 2, 0.1, opts.seed)
    } else {
        VerificationSetup::friis(5, 2, 2, 0.0, opts.seed)
    }
}

/// Run one suite; the overall verdict is the conjunction of the reports.
pub fn run_suite(suite: Suite, opts: &SuiteOptions) -> Result<Vec<Report>> {
    let samples = opts.samples.unwrap_or_else(|| suite.default_samples());
    if samples == 0 {
        return Err(Error::config("samples must be positive"));
    }
    match suite {
        Suite::ConsensusMatrix => {
            let s = setup(opts)?;
            let stats = s.collect_stats(samples)?;
            let r = check_consensus_matrix(&stats, 1e-2, 1e-12)?;
            let net = check_network_props(&stats, 2e-2, opts.seed)?;
            Ok(vec![r.report, net])
        }
        Suite::Unbiasedness => {
            let mut report = Report::new("unbiasedness");
            report.value("draws", samples);
            report.value("threshold_se", 3);
            let mut k = 0;
            for neighbors in [1, 5, 10] {
                for b in [1, 10] {
                    let u = check_unbiasedness(neighbors, b, samples, 1.0, opts.seed.wrapping_add(k))?;
                    k += 1;
                    let tag = format!("n{neighbors}_b{b}");
                    report.value(&format!("{tag}_mean_eta"), format!("{:.4e}", u.mean_eta));
                    report.value(&format!("{tag}_se_eta"), format!("{:.4e}", u.se_eta));
                    report.value(&format!("{tag}_mean_eta_prime"), format!("{:.4e}", u.mean_eta_prime));
                    report.value(&format!("{tag}_se_eta_prime"), format!("{:.4e}", u.se_eta_prime));
                    report.clause(&tag, u.passed(3.0));
                }
            }
            Ok(vec![report])
        }
        Suite::NoiseConditions => Ok(vec![check_noise_conditions(&setup(opts)?, samples)?]),
        Suite::Equivalence => Ok(vec![equivalence_suite(3, 2, 2, samples, opts.seed)?]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_and_aliases_parse() {
        for s in Suite::ALL {
            assert_eq!(s.cli_name().parse::<Suite>().unwrap(), s);
            assert_eq!(s.alias().parse::<Suite>().unwrap(), s);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn small_suites_run() {
        let opts = SuiteOptions {
            samples: Some(2000),
            ..Default::default()
        };
        let r = run_suite(Suite::Unbiasedness, &opts).unwrap();
        assert!(r[0].passed, "{}", r[0]);
        let e = run_suite(
            Suite::Equivalence,
            &SuiteOptions {
                samples: Some(10),
                ..opts
            },
        )
        .unwrap();
        assert!(e[0].passed);
        assert!(run_suite(Suite::Equivalence, &SuiteOptions { samples: Some(0), ..opts }).is_err());
    }
}
