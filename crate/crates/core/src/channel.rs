//! Wireless layer: positions, Friis path loss, block-coherent fading, receiver
//! noise, the multiple-access superposition and agent mobility.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::kernel::{Dataset, Point3};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Side length of the simulation domain `[0, 1000]³`, in meters.
pub const DOMAIN_SIDE_M: f64 = 1000.0;

/// Received power `(λ_c / (4π d))² · P_T` of a link of length `distance_m`.
pub fn friis_link_power(distance_m: f64, carrier_hz: f64, tx_power_w: f64) -> Result<f64> {
    if !(distance_m > 0.0) || !distance_m.is_finite() {
        return Err(Error::Domain(format!(
            "link distance must be positive, got {distance_m}"
        )));
    }
    if !(carrier_hz > 0.0) {
        return Err(Error::Domain(format!(
            "carrier frequency must be positive, got {carrier_hz}"
        )));
    }
    let wavelength = SPEED_OF_LIGHT / carrier_hz;
    let gain = wavelength / (4.0 * std::f64::consts::PI * distance_m);
    Ok(gain * gain * tx_power_w)
}

/// Receiver noise power `m_w` (Watts), identical at every receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    m_w: f64,
}

impl NoiseModel {
    pub fn new(m_w: f64) -> Result<Self> {
        if !(m_w >= 0.0) || !m_w.is_finite() {
            return Err(Error::invalid(format!(
                "noise power must be finite and nonnegative, got {m_w}"
            )));
        }
        Ok(Self { m_w })
    }

    /// Noise-free channel. Only used by verification suites.
    pub fn silent() -> Self {
        Self { m_w: 0.0 }
    }

    pub fn power(&self) -> f64 {
        self.m_w
    }

    /// One draw of circularly-symmetric complex Gaussian noise of power `m_w`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        if self.m_w == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        complex_gaussian(self.m_w, rng)
    }
}

/// Noise power that yields `snr_db` at `ref_distance_m` from a transmitter.
pub fn noise_from_snr(
    snr_db: f64,
    ref_distance_m: f64,
    carrier_hz: f64,
    tx_power_w: f64,
) -> Result<NoiseModel> {
    let rx = friis_link_power(ref_distance_m, carrier_hz, tx_power_w)?;
    NoiseModel::new(rx * 10f64.powf(-snr_db / 10.0))
}

fn complex_gaussian<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// Distribution of a single fading coefficient with a given second moment.
pub trait FadingDistribution: Send + Sync {
    fn sample(&self, variance: f64, rng: &mut dyn rand::RngCore) -> Complex64;
}

/// Rayleigh fading: `ξ ~ CN(0, σ²)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CircularGaussian;

impl FadingDistribution for CircularGaussian {
    fn sample(&self, variance: f64, rng: &mut dyn rand::RngCore) -> Complex64 {
        complex_gaussian(variance, rng)
    }
}

/// Constant-modulus fading with uniform phase, `ξ = σ e^{jφ}`.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPhase;

impl FadingDistribution for UniformPhase {
    fn sample(&self, variance: f64, rng: &mut dyn rand::RngCore) -> Complex64 {
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        Complex64::from_polar(variance.sqrt(), phase)
    }
}

/// Path gains `σ²_{jr}` of every ordered pair (transmitter `j`, receiver `r`).
///
/// Gains exclude transmit power; a symbol of power `|s|²` arrives with mean
/// power `σ²_{jr} |s|²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGains {
    n: usize,
    gains: Vec<f64>,
}

impl LinkGains {
    /// Friis gains between all pairs of positions. Coincident agents are
    /// treated as one meter apart.
    pub fn friis(positions: &[Point3], carrier_hz: f64) -> Result<Self> {
        let n = positions.len();
        let mut gains = vec![0.0; n * n];
        for j in 0..n {
            for r in 0..n {
                if j == r {
                    continue;
                }
                let d = distance(&positions[j], &positions[r]).max(1.0);
                gains[j * n + r] = friis_link_power(d, carrier_hz, 1.0)?;
            }
        }
        Ok(Self { n, gains })
    }

    /// Gains given explicitly as a row-major `N×N` matrix (`[j][r]`).
    pub fn from_matrix(n: usize, gains: Vec<f64>) -> Result<Self> {
        if gains.len() != n * n {
            return Err(Error::invalid("gain matrix must be N×N"));
        }
        if gains.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(Error::invalid("gains must be finite and nonnegative"));
        }
        for k in 0..n {
            if gains[k * n + k] != 0.0 {
                return Err(Error::invalid("self-links are not allowed"));
            }
        }
        Ok(Self { n, gains })
    }

    /// Every off-diagonal pair with the same gain.
    pub fn uniform(n: usize, gain: f64) -> Self {
        let mut gains = vec![gain; n * n];
        for k in 0..n {
            gains[k * n + k] = 0.0;
        }
        Self { n, gains }
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn gain(&self, tx: usize, rx: usize) -> f64 {
        self.gains[tx * self.n + rx]
    }
}

pub fn distance(a: &Point3, b: &Point3) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Positions and half-duplex roles for one slot.
///
/// Edges run from every transmitting agent to every receiving agent with a
/// nonzero gain; there are no self-edges.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologySnapshot {
    pub positions: Vec<Point3>,
    pub transmit: Vec<bool>,
}

impl TopologySnapshot {
    pub fn new(positions: Vec<Point3>) -> Self {
        let n = positions.len();
        Self {
            positions,
            transmit: vec![false; n],
        }
    }

    pub fn n_agents(&self) -> usize {
        self.positions.len()
    }

    pub fn transmitters(&self) -> Vec<usize> {
        (0..self.n_agents()).filter(|&k| self.transmit[k]).collect()
    }

    pub fn receivers(&self) -> Vec<usize> {
        (0..self.n_agents()).filter(|&k| !self.transmit[k]).collect()
    }

    pub fn edges(&self, gains: &LinkGains) -> Vec<(usize, usize)> {
        let tx = self.transmitters();
        let rx = self.receivers();
        let mut out = Vec::with_capacity(tx.len() * rx.len());
        for &r in &rx {
            for &j in &tx {
                if gains.gain(j, r) > 0.0 {
                    out.push((j, r));
                }
            }
        }
        out
    }

    /// Independent fair coin per agent: `true` means transmit in this slot.
    pub fn flip_roles<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for t in self.transmit.iter_mut() {
            *t = rng.random_bool(0.5);
        }
    }
}

/// Fading realizations of a set of links for one OTA-C run of `2B` symbols.
///
/// Only one value per symbol pair is stored, so `ξ(b) = ξ(b+1)` for every odd
/// (1-based) `b` holds by construction. The same draw serves every coordinate
/// of a coordinate-coherent vector round.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingDraw {
    pub links: Vec<(usize, usize)>,
    pub variance: Vec<f64>,
    pairs: usize,
    xi: Vec<Complex64>,
}

impl FadingDraw {
    pub fn sample(
        links: Vec<(usize, usize)>,
        gains: &LinkGains,
        pairs: usize,
        distribution: &dyn FadingDistribution,
        rng: &mut dyn rand::RngCore,
    ) -> Self {
        let variance: Vec<f64> = links.iter().map(|&(j, r)| gains.gain(j, r)).collect();
        let mut xi = Vec::with_capacity(links.len() * pairs);
        for &v in &variance {
            for _ in 0..pairs {
                xi.push(distribution.sample(v, rng));
            }
        }
        Self {
            links,
            variance,
            pairs,
            xi,
        }
    }

    /// Number of symbols `2B` covered by the draw.
    pub fn symbol_count(&self) -> usize {
        2 * self.pairs
    }

    /// Coefficient of link `link` at 0-based symbol index `symbol < 2B`.
    pub fn xi(&self, link: usize, symbol: usize) -> Complex64 {
        self.xi[link * self.pairs + symbol / 2]
    }

    /// The `B` independent values of one link.
    pub fn pair_values(&self, link: usize) -> &[Complex64] {
        &self.xi[link * self.pairs..(link + 1) * self.pairs]
    }
}

/// `q_r(b) = Σ_j ξ_{jr}(b) s_j(b) + w_r(b)` for one receiver and one symbol.
pub fn wmac_superpose<R: Rng + ?Sized>(
    symbols: &[Complex64],
    fading: &[Complex64],
    noise: &NoiseModel,
    rng: &mut R,
) -> Complex64 {
    debug_assert_eq!(symbols.len(), fading.len());
    let mut q = noise.sample(rng);
    for (s, xi) in symbols.iter().zip(fading) {
        q += xi * s;
    }
    q
}

/// Renewal process driving agent motion and fresh measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityModel {
    /// Mean of the Poisson-distributed gap between renewals, in slots.
    /// `None` keeps agents at their initial positions forever.
    pub mean_gap: Option<f64>,
    pub measurement_noise_var: f64,
}

impl Default for MobilityModel {
    fn default() -> Self {
        Self {
            mean_gap: Some(300.0),
            measurement_noise_var: 0.09,
        }
    }
}

/// A noisy field sample taken by one agent at its current position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub position: Point3,
    pub value: f64,
}

/// Mobility state: next renewal slot and a cursor into a shuffled row order.
#[derive(Debug, Clone)]
pub struct Mobility {
    model: MobilityModel,
    next_renewal: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl Mobility {
    pub fn new<R: Rng + ?Sized>(model: MobilityModel, dataset: &Dataset, rng: &mut R) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::invalid("mobility needs a nonempty dataset"));
        }
        if let Some(gap) = model.mean_gap {
            if !(gap > 0.0) {
                return Err(Error::config("mean renewal gap must be positive"));
            }
        }
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
        Ok(Self {
            model,
            next_renewal: 0,
            order,
            cursor: 0,
        })
    }

    pub fn model(&self) -> &MobilityModel {
        &self.model
    }

    fn next_row(&mut self) -> usize {
        let row = self.order[self.cursor];
        self.cursor = (self.cursor + 1) % self.order.len();
        row
    }

    fn draw_gap<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match self.model.mean_gap {
            None => u64::MAX,
            Some(mean) => {
                let gap: f64 = Poisson::new(mean).map(|p| p.sample(rng)).unwrap_or(mean);
                (gap as u64).max(1)
            }
        }
    }

    /// Advance to slot `i`. At a renewal instant every agent takes the next
    /// dataset row as its position and measures the field value there plus
    /// Gaussian noise; otherwise positions persist and `None` is returned.
    /// Half-duplex roles are re-flipped every slot.
    pub fn advance<R: Rng + ?Sized>(
        &mut self,
        i: u64,
        topology: &mut TopologySnapshot,
        dataset: &Dataset,
        rng: &mut R,
    ) -> Option<Vec<Measurement>> {
        let renewal = i >= self.next_renewal;
        let out = if renewal {
            let noise_sd = self.model.measurement_noise_var.max(0.0).sqrt();
            let mut measurements = Vec::with_capacity(topology.n_agents());
            for k in 0..topology.n_agents() {
                let row = dataset.row(self.next_row());
                topology.positions[k] = row.x;
                let n: f64 = StandardNormal.sample(rng);
                measurements.push(Measurement {
                    position: row.x,
                    value: row.value + noise_sd * n,
                });
            }
            let gap = self.draw_gap(rng);
            self.next_renewal = i.saturating_add(gap);
            Some(measurements)
        } else {
            None
        };
        topology.flip_roles(rng);
        out
    }
}
