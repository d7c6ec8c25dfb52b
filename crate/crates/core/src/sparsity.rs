//! Reweighted ℓ1 soft-thresholding used as a bounded perturbation.

use crate::apsm::PerturbationSource;
use crate::error::{Error, Result};

/// Reweighting memory and current perturbation scales for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityState {
    /// Pre-threshold vector of the previous iteration, zero at start.
    pub prev_y: Vec<f64>,
    pub zeta: f64,
    pub varsigma: f64,
}

impl SparsityState {
    pub fn new(m: usize) -> Self {
        Self {
            prev_y: vec![0.0; m],
            zeta: 0.0,
            varsigma: 1e-11,
        }
    }

    fn threshold(&self, m: usize) -> f64 {
        self.zeta / (self.prev_y[m].abs() + self.varsigma)
    }
}

/// `sign(y)·[|y| − ζ/(|prev| + ς)]₊` elementwise.
pub fn soft_threshold(y: &[f64], state: &SparsityState) -> Vec<f64> {
    y.iter()
        .enumerate()
        .map(|(m, &x)| {
            let shrunk = x.abs() - state.threshold(m);
            if shrunk > 0.0 {
                x.signum() * shrunk
            } else {
                0.0
            }
        })
        .collect()
}

/// `z = ζ⁻¹(Q(y) − y)`, checked against `‖z‖_∞ ≤ 1/ς`.
pub fn perturbation_z(y: &[f64], state: &SparsityState) -> Result<Vec<f64>> {
    if !(state.zeta > 0.0) {
        return Err(Error::Contract("perturbation needs zeta > 0".into()));
    }
    let q = soft_threshold(y, state);
    let z: Vec<f64> = q.iter().zip(y).map(|(a, b)| (a - b) / state.zeta).collect();
    let bound = 1.0 / state.varsigma;
    if let Some(bad) = z.iter().find(|v| v.abs() > bound * (1.0 + 1e-12)) {
        return Err(Error::Contract(format!(
            "perturbation component {bad} exceeds bound {bound}"
        )));
    }
    Ok(z)
}

/// Perturbation source for the sparse variant. Tracks how many perturbations
/// were checked against the bound and how many violated it.
#[derive(Debug, Clone)]
pub struct ReweightedL1 {
    pub state: SparsityState,
    pub checked: u64,
    pub violations: u64,
    pub max_ratio: f64,
}

impl ReweightedL1 {
    pub fn new(m: usize) -> Self {
        Self {
            state: SparsityState::new(m),
            checked: 0,
            violations: 0,
            max_ratio: 0.0,
        }
    }

    pub fn set_scales(&mut self, zeta: f64, varsigma: f64) {
        self.state.zeta = zeta;
        self.state.varsigma = varsigma;
    }
}

impl PerturbationSource for ReweightedL1 {
    fn perturbation(&mut self, y: &[f64]) -> Result<Vec<f64>> {
        if self.state.zeta == 0.0 {
            self.state.prev_y.copy_from_slice(y);
            return Ok(vec![0.0; y.len()]);
        }
        self.checked += 1;
        let z = match perturbation_z(y, &self.state) {
            Ok(z) => z,
            Err(e) => {
                self.violations += 1;
                return Err(e);
            }
        };
        let inf = z.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        self.max_ratio = self.max_ratio.max(inf * self.state.varsigma);
        let zeta = self.state.zeta;
        self.state.prev_y.copy_from_slice(y);
        Ok(z.into_iter().map(|v| zeta * v).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(prev: Vec<f64>, zeta: f64, varsigma: f64) -> SparsityState {
        SparsityState {
            prev_y: prev,
            zeta,
            varsigma,
        }
    }

    #[test]
    fn threshold_cases() {
        let s = state(vec![0.0], 0.1, 0.1);
        assert_eq!(soft_threshold(&[0.0], &s), vec![0.0]);
        // 0.5 − 0.1/0.1 < 0
        assert_eq!(soft_threshold(&[0.5], &s), vec![0.0]);
        let s = state(vec![1.0, 1.0], 0.1, 0.1);
        let out = soft_threshold(&[0.5, -0.5], &s);
        let thr = 0.1 / 1.1;
        assert!((out[0] - (0.5 - thr)).abs() < 1e-15);
        assert!((out[1] + (0.5 - thr)).abs() < 1e-15);
    }

    #[test]
    fn full_shift_perturbation() {
        let prev = vec![0.3, 2.0];
        let s = state(prev.clone(), 1e-3, 1e-2);
        let z = perturbation_z(&[1.0, -1.0], &s).unwrap();
        for m in 0..2 {
            assert!((z[m].abs() - 1.0 / (prev[m] + 1e-2)).abs() < 1e-9);
        }
        assert_eq!(perturbation_z(&[0.0, 0.0], &s).unwrap(), vec![0.0, 0.0]);
        assert!(perturbation_z(&[0.0], &state(vec![0.0], 0.0, 1.0)).is_err());
    }

    #[test]
    fn source_updates_memory() {
        let mut src = ReweightedL1::new(2);
        src.set_scales(1e-7, 2.5e-6);
        let d = src.perturbation(&[0.01, 0.5]).unwrap();
        // first threshold 1e-7/2.5e-6 = 0.04 kills the small entry
        assert!((0.01 + d[0]).abs() < 1e-15);
        assert!((d[1] + 0.04).abs() < 1e-12);
        assert_eq!(src.state.prev_y, vec![0.01, 0.5]);
        assert_eq!(src.checked, 1);
        assert_eq!(src.violations, 0);
    }

    proptest! {
        #[test]
        fn bound_and_shrinkage(
            y in proptest::collection::vec(-5.0f64..5.0, 1..8),
            prev_seed in -5.0f64..5.0,
            zeta in 1e-9f64..1.0,
            vs in 1e-11f64..1.0,
        ) {
            let prev: Vec<f64> = y.iter().map(|v| v * prev_seed).collect();
            let s = state(prev, zeta, vs);
            let q = soft_threshold(&y, &s);
            for (a, b) in q.iter().zip(&y) {
                prop_assert!(a.abs() <= b.abs());
                prop_assert!(*a == 0.0 || a.signum() == b.signum());
            }
            let z = perturbation_z(&y, &s).unwrap();
            prop_assert!(z.iter().all(|v| v.abs() <= (1.0 / vs) * (1.0 + 1e-12)));
        }
    }
}
