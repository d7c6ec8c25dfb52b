//! Local adaptive projected subgradient step and the generic consensus mixing
//! step over pluggable communication backends.

use std::collections::BTreeMap;

use crate::channel::{LinkGains, TopologySnapshot};
use crate::error::{Error, Result};
use crate::otac::{consensus_update, RoundLedger};
use crate::rng::SeedTree;

/// Nonnegative convex cost with one subgradient per query.
pub trait CostOracle {
    /// `(Θ(h), Θ'(h))`.
    fn evaluate(&self, h: &[f64]) -> (f64, Vec<f64>);
}

/// Quasi-nonexpansive mapping whose fixed points form the constraint set.
pub trait ConstraintOperator {
    fn apply(&self, x: &mut [f64]);
}

/// Yields the bounded perturbation `ζ_i z` added after the subgradient step.
pub trait PerturbationSource {
    /// Perturbation for the pre-perturbation vector `y`.
    fn perturbation(&mut self, y: &[f64]) -> Result<Vec<f64>>;
}

/// `μ Θ(h)/‖Θ'(h)‖² · Θ'(h)`, or zero when the subgradient vanishes.
pub fn subgradient_displacement(oracle: &dyn CostOracle, h: &[f64], mu: f64) -> Result<Vec<f64>> {
    if !(mu > 0.0 && mu < 2.0) {
        return Err(Error::config(format!("relaxation mu must lie in (0, 2), got {mu}")));
    }
    let (value, grad) = oracle.evaluate(h);
    if !(value >= 0.0) {
        return Err(Error::Contract(format!("cost oracle returned {value} < 0")));
    }
    if grad.len() != h.len() {
        return Err(Error::Contract("subgradient has wrong length".into()));
    }
    let norm_sq: f64 = grad.iter().map(|g| g * g).sum();
    if norm_sq == 0.0 || value == 0.0 {
        return Ok(vec![0.0; h.len()]);
    }
    let scale = mu * value / norm_sq;
    Ok(grad.iter().map(|g| scale * g).collect())
}

/// `λ = T(h − α + ζ z)`.
pub fn local_step(
    h: &[f64],
    oracle: &dyn CostOracle,
    constraint: &dyn ConstraintOperator,
    perturb: Option<&mut dyn PerturbationSource>,
    mu: f64,
) -> Result<Vec<f64>> {
    let alpha = subgradient_displacement(oracle, h, mu)?;
    let mut y: Vec<f64> = h.iter().zip(&alpha).map(|(x, a)| x - a).collect();
    if let Some(p) = perturb {
        let dz = p.perturbation(&y)?;
        y.iter_mut().zip(&dz).for_each(|(a, d)| *a += d);
    }
    constraint.apply(&mut y);
    Ok(y)
}

/// What a communication backend delivered to one agent.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Nothing received; the agent keeps its local iterate.
    Absent,
    /// Exact network average.
    Average(Vec<f64>),
    /// A neighbor's reconstructed iterate.
    Estimate(Vec<f64>),
    /// Over-the-air estimates with the network-wide `γ`.
    OtaC {
        v_hat: Vec<f64>,
        v_prime_hat: Vec<f64>,
        gamma: f64,
    },
}

/// `(1 − β)λ + β K(λ)` for the affine map `K` realized by the payload.
pub fn mix_step(lambda: &[f64], payload: &Payload, beta: f64) -> Result<Vec<f64>> {
    match payload {
        Payload::Absent => Ok(lambda.to_vec()),
        Payload::Average(target) | Payload::Estimate(target) => {
            if target.len() != lambda.len() {
                return Err(Error::invalid("payload length mismatch"));
            }
            Ok(lambda
                .iter()
                .zip(target)
                .map(|(l, t)| (1.0 - beta) * l + beta * t)
                .collect())
        }
        Payload::OtaC {
            v_hat,
            v_prime_hat,
            gamma,
        } => consensus_update(lambda, v_hat, v_prime_hat, beta, *gamma),
    }
}

/// Inputs of one communication round.
pub struct BackendRound<'a> {
    pub iteration: u64,
    pub lambdas: &'a [Vec<f64>],
    pub topology: &'a TopologySnapshot,
    pub gains: &'a LinkGains,
    pub seeds: SeedTree,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendOutput {
    /// One payload per agent.
    pub payloads: Vec<Payload>,
    pub ledger: RoundLedger,
    /// Receivers that expected a payload but got none.
    pub failures: u64,
}

/// A consensus communication model.
pub trait CommBackend: Send + Sync {
    fn name(&self) -> &str;
    fn round(&mut self, round: &BackendRound) -> Result<BackendOutput>;
}

type Factory<S> = Box<dyn Fn(&S) -> Result<Box<dyn CommBackend>> + Send + Sync>;

/// Backends keyed by name, each built from a shared setup value `S`.
pub struct BackendRegistry<S> {
    factories: BTreeMap<String, Factory<S>>,
}

impl<S> Default for BackendRegistry<S> {
    fn default() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }
}

impl<S> BackendRegistry<S> {
    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&S) -> Result<Box<dyn CommBackend>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_ascii_uppercase(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<String> {
        self.factories.keys().cloned().collect()
    }

    pub fn build(&self, name: &str, setup: &S) -> Result<Box<dyn CommBackend>> {
        let f = self
            .factories
            .get(&name.to_ascii_uppercase())
            .ok_or_else(|| Error::config(format!("unknown scheme {name:?}; known: {:?}", self.names())))?;
        f(setup)
    }
}
