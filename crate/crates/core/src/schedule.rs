//! Step-size, perturbation and relaxation schedules.

use serde::{Deserialize, Serialize};

/// Consensus step size `β_i ∈ (0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BetaRule {
    /// `⌊i/period⌋^(−exponent)`, with the first block (where the floor is zero)
    /// pinned to 1.
    FloorPower { period: u64, exponent: f64 },
    /// `10^((snr − 15)/20)` for `snr ≤ −15 dB`, otherwise that scale times
    /// `⌊i/period⌋^(−0.5)` (first block pinned to 1).
    SnrScaled { snr_db: f64, period: u64 },
    Constant { value: f64 },
}

impl BetaRule {
    pub fn value(&self, i: u64) -> f64 {
        let raw = match *self {
            BetaRule::FloorPower { period, exponent } => floor_power(i, period, exponent),
            BetaRule::SnrScaled { snr_db, period } => {
                let scale = 10f64.powf((snr_db - 15.0) / 20.0);
                if snr_db <= -15.0 {
                    scale
                } else {
                    scale * floor_power(i, period, 0.5)
                }
            }
            BetaRule::Constant { value } => value,
        };
        clip_unit(raw)
    }
}

fn floor_power(i: u64, period: u64, exponent: f64) -> f64 {
    match i / period.max(1) {
        0 => 1.0,
        k => (k as f64).powf(-exponent),
    }
}

fn clip_unit(x: f64) -> f64 {
    if x.is_nan() || x <= 0.0 {
        f64::MIN_POSITIVE
    } else {
        x.min(1.0)
    }
}

/// Perturbation magnitude `ζ_i` (summable).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ZetaRule {
    Off,
    /// `scale · (⌊i/period⌋ + 1)^(−1)`.
    Harmonic { scale: f64, period: u64 },
}

impl ZetaRule {
    pub fn value(&self, i: u64) -> f64 {
        match *self {
            ZetaRule::Off => 0.0,
            ZetaRule::Harmonic { scale, period } => scale / ((i / period.max(1)) as f64 + 1.0),
        }
    }

    /// Companion `ς_i = max(25 ζ_i, 1e-11)`.
    pub fn varsigma(&self, i: u64) -> f64 {
        (25.0 * self.value(i)).max(1e-11)
    }
}

/// All step schedules used by one simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSchedules {
    pub beta: BetaRule,
    pub zeta: ZetaRule,
    /// Fraction of the admissible `γ` bound actually used, in `(0, 1]`.
    pub gamma_scale: f64,
    /// APSM relaxation `μ ∈ (0, 2)`.
    pub mu: f64,
}

impl StepSchedules {
    pub fn beta(&self, i: u64) -> f64 {
        self.beta.value(i)
    }

    pub fn zeta(&self, i: u64) -> f64 {
        self.zeta.value(i)
    }

    pub fn varsigma(&self, i: u64) -> f64 {
        self.zeta.varsigma(i)
    }

    /// `γ_i` given the admissible bound at iteration `i`.
    pub fn gamma(&self, bound: f64) -> f64 {
        self.gamma_scale * bound
    }
}

/// Which step-size family to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleFamily {
    /// Diminishing `β` with period 50 and exponent 0.51.
    #[default]
    Diminishing,
    /// SNR-dependent `β` used for the SNR sweep.
    SnrSweep,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleOptions {
    pub family: ScheduleFamily,
    pub sparsity: bool,
    pub mu: f64,
    pub gamma_scale: f64,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        Self {
            family: ScheduleFamily::Diminishing,
            sparsity: false,
            mu: 0.5,
            gamma_scale: 1.0,
        }
    }
}

pub fn default_schedules(snr_db: f64, options: ScheduleOptions) -> StepSchedules {
    let beta = match options.family {
        ScheduleFamily::Diminishing => BetaRule::FloorPower {
            period: 50,
            exponent: 0.51,
        },
        ScheduleFamily::SnrSweep => BetaRule::SnrScaled { snr_db, period: 100 },
    };
    let zeta = if options.sparsity {
        ZetaRule::Harmonic {
            scale: 1e-7,
            period: 100,
        }
    } else {
        ZetaRule::Off
    };
    StepSchedules {
        beta,
        zeta,
        gamma_scale: options.gamma_scale,
        mu: options.mu,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_family() -> StepSchedules {
        default_schedules(
            -20.0,
            ScheduleOptions {
                sparsity: true,
                ..Default::default()
            },
        )
    }

    #[test]
    fn beta_values() {
        let s = default_family();
        assert_eq!(s.beta(0), 1.0);
        assert_eq!(s.beta(49), 1.0);
        assert_eq!(s.beta(50), 1.0);
        assert!((s.beta(100) - 2f64.powf(-0.51)).abs() < 1e-15);
        assert!((s.beta(100) - 0.702_222).abs() < 1e-6);
        assert!((s.beta(149) - s.beta(100)).abs() == 0.0);
        assert!((s.beta(150) - 3f64.powf(-0.51)).abs() < 1e-15);
        for i in (0..100_000).step_by(37) {
            let b = s.beta(i);
            assert!(b > 0.0 && b <= 1.0);
        }
    }

    #[test]
    fn zeta_values() {
        let s = default_family();
        assert!((s.zeta(500) - 1e-7 / 6.0).abs() < 1e-22);
        assert!((s.varsigma(500) - 25e-7 / 6.0).abs() < 1e-20);
        assert_eq!(ZetaRule::Off.varsigma(3), 1e-11);
        assert_eq!(ZetaRule::Off.value(3), 0.0);
    }

    #[test]
    fn snr_rule() {
        let low = BetaRule::SnrScaled {
            snr_db: -20.0,
            period: 100,
        };
        assert!((low.value(0) - 10f64.powf(-35.0 / 20.0)).abs() < 1e-15);
        assert_eq!(low.value(0), low.value(10_000));
        let high = BetaRule::SnrScaled {
            snr_db: 0.0,
            period: 100,
        };
        let scale = 10f64.powf(-15.0 / 20.0);
        assert!((high.value(0) - scale).abs() < 1e-15);
        assert_eq!(high.value(150), scale);
        assert!((high.value(400) - scale * 0.5).abs() < 1e-15);
        let very_high = BetaRule::SnrScaled {
            snr_db: 40.0,
            period: 100,
        };
        assert_eq!(very_high.value(0), 1.0);
    }

    #[test]
    fn beta_series_probes() {
        // Σβ grows without bound while Σβ² stays bounded (exponent 1.02 > 1).
        let s = default_family();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut checkpoints = Vec::new();
        let mut sq_checkpoints = Vec::new();
        for i in 0..1_000_000u64 {
            let b = s.beta(i);
            sum += b;
            sum_sq += b * b;
            if (i + 1) % 100_000 == 0 {
                checkpoints.push(sum);
                sq_checkpoints.push(sum_sq);
            }
        }
        assert!(sum > 10_000.0);
        // partial sums of β keep growing by a non-vanishing amount per decade
        let gains: Vec<f64> = checkpoints.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gains.iter().all(|g| *g > 500.0));
        // Σβ² is below the analytic bound 50·(1 + ζ(1.02)) < 50·53
        assert!(sum_sq < 50.0 * 53.0);
        assert!(sq_checkpoints.windows(2).all(|w| w[1] >= w[0]));
        let tail_gain = sq_checkpoints[9] - sq_checkpoints[8];
        let head_gain = sq_checkpoints[1] - sq_checkpoints[0];
        assert!(tail_gain < head_gain);
    }
}
