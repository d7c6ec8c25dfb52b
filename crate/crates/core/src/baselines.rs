//! Comparison schemes: no communication, ideal averaging, digital broadcast
//! and analog broadcast, all behind the common backend interface.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::apsm::{BackendOutput, BackendRegistry, BackendRound, CommBackend, Payload};
use crate::channel::{friis_link_power, CircularGaussian, FadingDistribution, NoiseModel};
use crate::error::{Error, Result};
use crate::otac::{GammaMode, OtaBackend, ProtocolParams, RoundLedger};
use crate::rng::{SeedTree, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DbcConfig {
    pub quant_levels: u32,
    pub header_bits: u32,
    pub outage_target: f64,
    pub ref_distance: f64,
    pub bandwidth_hz: f64,
    pub airtime: Airtime,
}

/// How DBC broadcasts map onto simulation iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Airtime {
    /// A whole broadcast completes within one iteration.
    PerIteration,
    /// Each iteration offers the `(M+1)B` channel uses of one OTA-C round;
    /// a broadcast spans as many iterations as its symbols need and the next
    /// broadcaster starts once it has finished.
    #[default]
    SharedSlots,
}

impl Default for DbcConfig {
    fn default() -> Self {
        Self {
            quant_levels: 40,
            header_bits: 64,
            outage_target: 0.2,
            ref_distance: 500.0,
            bandwidth_hz: 1e6,
            airtime: Airtime::default(),
        }
    }
}

impl DbcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.quant_levels < 2 {
            return Err(Error::config("DBC needs at least two quantization levels"));
        }
        if !(self.outage_target > 0.0 && self.outage_target < 1.0) {
            return Err(Error::config("DBC outage target must lie in (0, 1)"));
        }
        Ok(())
    }

    /// `header + M log₂(levels)` bits.
    pub fn payload_bits(&self, m: usize) -> f64 {
        self.header_bits as f64 + m as f64 * (self.quant_levels as f64).log2()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnbConfig {
    /// Training symbols; `None` uses the OTA-C `B`.
    pub training_symbols: Option<usize>,
    pub power_gate_factor: f64,
}

impl Default for AnbConfig {
    fn default() -> Self {
        Self {
            training_symbols: None,
            power_gate_factor: 2.0,
        }
    }
}

/// Exact network average delivered to every agent.
pub fn cen_round(lambdas: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = lambdas.first().map(Vec::len).ok_or_else(|| Error::invalid("no agents"))?;
    let mut mean = vec![0.0; m];
    for l in lambdas {
        if l.len() != m {
            return Err(Error::invalid("agent vectors differ in length"));
        }
        for (a, x) in mean.iter_mut().zip(l) {
            *a += x;
        }
    }
    let n = lambdas.len() as f64;
    mean.iter_mut().for_each(|x| *x /= n);
    Ok(mean)
}

pub fn noc_round(n_agents: usize) -> Vec<Payload> {
    vec![Payload::Absent; n_agents]
}

/// Largest rate whose outage under unit-mean Rayleigh power gain is exactly
/// `outage`: `log₂(1 − SNR̄ ln(1 − outage))`.
pub fn dbc_rate(snr_mean: f64, outage: f64) -> f64 {
    if !(snr_mean > 0.0) {
        return 0.0;
    }
    (1.0 - snr_mean * (1.0 - outage).ln()).log2()
}

/// Uniform subtractive-dither quantizer with `levels` cells centered on
/// `(−1, 1)` interior midpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DitherQuantizer {
    levels: u32,
}

impl DitherQuantizer {
    pub fn new(levels: u32) -> Result<Self> {
        if levels < 2 {
            return Err(Error::config("quantizer needs at least two levels"));
        }
        Ok(Self { levels })
    }

    pub fn step(&self) -> f64 {
        2.0 / self.levels as f64
    }

    /// Largest normalized magnitude that never overloads with dither added.
    pub fn headroom(&self) -> f64 {
        1.0 - self.step() / 2.0
    }

    /// Cell index of `x + d` for `x ∈ [−headroom, headroom]`.
    pub fn index(&self, x: f64, dither: f64) -> u32 {
        let t = ((x + dither + 1.0) / self.step()).floor();
        t.clamp(0.0, (self.levels - 1) as f64) as u32
    }

    pub fn level(&self, index: u32) -> f64 {
        -1.0 + self.step() * (index as f64 + 0.5)
    }

    /// `Q(x + d) − d`.
    pub fn reconstruct(&self, index: u32, dither: f64) -> f64 {
        self.level(index) - dither
    }

    pub fn draw_dither<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let h = self.step() / 2.0;
        rng.random_range(-h..h)
    }
}

/// Quantized broadcast payload: scale header plus cell indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DbcFrame {
    pub scale: f64,
    pub indices: Vec<u32>,
}

pub fn dbc_encode<R: Rng + ?Sized>(lambda: &[f64], q: &DitherQuantizer, dither_rng: &mut R) -> (DbcFrame, Vec<f64>) {
    let max = lambda.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let scale = max / q.headroom();
    let dithers: Vec<f64> = lambda.iter().map(|_| q.draw_dither(dither_rng)).collect();
    let indices = lambda
        .iter()
        .zip(&dithers)
        .map(|(x, d)| if scale > 0.0 { q.index(x / scale, *d) } else { q.index(0.0, *d) })
        .collect();
    (DbcFrame { scale, indices }, dithers)
}

pub fn dbc_decode(frame: &DbcFrame, dithers: &[f64], q: &DitherQuantizer) -> Vec<f64> {
    if frame.scale == 0.0 {
        return vec![0.0; frame.indices.len()];
    }
    frame
        .indices
        .iter()
        .zip(dithers)
        .map(|(&i, d)| frame.scale * q.reconstruct(i, *d))
        .collect()
}

/// Broadcaster order for the time-division schemes.
#[derive(Debug, Clone, PartialEq)]
pub struct TdmaSchedule {
    order: Vec<usize>,
}

impl TdmaSchedule {
    pub fn round_robin(n: usize) -> Self {
        Self { order: (0..n).collect() }
    }

    pub fn shuffled<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
        Self { order }
    }

    pub fn broadcaster(&self, iteration: u64) -> usize {
        self.order[(iteration % self.order.len() as u64) as usize]
    }
}

/// Everything needed to construct any built-in backend.
#[derive(Debug, Clone)]
pub struct BackendSetup {
    pub n_agents: usize,
    pub params: ProtocolParams,
    pub noise: NoiseModel,
    pub assumed_m_w: f64,
    pub snr_db: f64,
    pub carrier_hz: f64,
    pub dbc: DbcConfig,
    pub anb: AnbConfig,
    pub tdma_shuffle: bool,
    pub tdma_seed: u64,
    pub coherent: bool,
    pub skip_zeros: bool,
    pub gamma_scale: f64,
    pub gamma_mode: GammaMode,
}

impl BackendSetup {
    fn schedule(&self) -> TdmaSchedule {
        if self.tdma_shuffle {
            TdmaSchedule::shuffled(self.n_agents, &mut SeedTree::new(self.tdma_seed).stream(Stream::Tdma, 0, 0))
        } else {
            TdmaSchedule::round_robin(self.n_agents)
        }
    }
}

pub struct NocBackend;

impl CommBackend for NocBackend {
    fn name(&self) -> &str {
        "NOC"
    }

    fn round(&mut self, round: &BackendRound) -> Result<BackendOutput> {
        Ok(BackendOutput {
            payloads: noc_round(round.lambdas.len()),
            ledger: RoundLedger::default(),
            failures: 0,
        })
    }
}

pub struct CenBackend;

impl CommBackend for CenBackend {
    fn name(&self) -> &str {
        "CEN"
    }

    fn round(&mut self, round: &BackendRound) -> Result<BackendOutput> {
        let mean = cen_round(round.lambdas)?;
        Ok(BackendOutput {
            payloads: vec![Payload::Average(mean); round.lambdas.len()],
            ledger: RoundLedger::default(),
            failures: 0,
        })
    }
}

pub struct DbcBackend {
    config: DbcConfig,
    quantizer: DitherQuantizer,
    rate: f64,
    noise: NoiseModel,
    peak_power: f64,
    schedule: TdmaSchedule,
    fading: Box<dyn FadingDistribution>,
    b: usize,
    broadcasts: u64,
    active: Option<InFlight>,
}

/// A broadcast spanning several iterations.
struct InFlight {
    sender: usize,
    decoded: Vec<f64>,
    remaining: u64,
}

impl DbcBackend {
    pub fn new(setup: &BackendSetup) -> Result<Self> {
        setup.dbc.validate()?;
        let rx_ref = friis_link_power(setup.dbc.ref_distance, setup.carrier_hz, setup.params.peak_power)?;
        let snr_mean = if setup.noise.power() > 0.0 {
            rx_ref / setup.noise.power()
        } else {
            f64::INFINITY
        };
        Ok(Self {
            config: setup.dbc,
            quantizer: DitherQuantizer::new(setup.dbc.quant_levels)?,
            rate: dbc_rate(snr_mean, setup.dbc.outage_target),
            noise: setup.noise,
            peak_power: setup.params.peak_power,
            schedule: setup.schedule(),
            fading: Box::new(CircularGaussian),
            b: setup.params.b,
            broadcasts: 0,
            active: None,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Symbols of one broadcast carrying `m` coefficients.
    pub fn symbols(&self, m: usize) -> u64 {
        let bits = self.config.payload_bits(m);
        if self.rate > 0.0 {
            (bits / self.rate).ceil() as u64
        } else {
            u64::MAX
        }
    }

    /// Iterations one broadcast occupies.
    pub fn span(&self, m: usize) -> u64 {
        match self.config.airtime {
            Airtime::PerIteration => 1,
            Airtime::SharedSlots => self.symbols(m).div_ceil(((m + 1) * self.b) as u64).max(1),
        }
    }

    fn deliver(&self, round: &BackendRound, u: usize, decoded: &[f64]) -> (Vec<Payload>, u64) {
        let n = round.lambdas.len();
        let mut payloads = vec![Payload::Absent; n];
        let mut failures = 0;
        for (r, slot) in payloads.iter_mut().enumerate() {
            if r == u {
                continue;
            }
            let g = round.gains.gain(u, r);
            let mut rng = round.seeds.stream(Stream::Fading, round.iteration, r as u64);
            let xi = self.fading.sample(g, &mut rng);
            let snr = if self.noise.power() > 0.0 {
                self.peak_power * xi.norm_sqr() / self.noise.power()
            } else {
                f64::INFINITY
            };
            if (1.0 + snr).log2() >= self.rate && self.rate > 0.0 {
                *slot = Payload::Estimate(decoded.to_vec());
            } else {
                failures += 1;
            }
        }
        (payloads, failures)
    }
}

impl CommBackend for DbcBackend {
    fn name(&self) -> &str {
        "DBC"
    }

    fn round(&mut self, round: &BackendRound) -> Result<BackendOutput> {
        let n = round.lambdas.len();
        let m = round.lambdas[0].len();
        let symbols = self.symbols(m);
        let span = self.span(m);
        if self.active.is_none() {
            let u = self.schedule.broadcaster(self.broadcasts);
            self.broadcasts += 1;
            let mut dither_rng = round.seeds.stream(Stream::Dither, round.iteration, u as u64);
            let (frame, dithers) = dbc_encode(&round.lambdas[u], &self.quantizer, &mut dither_rng);
            self.active = Some(InFlight {
                sender: u,
                decoded: dbc_decode(&frame, &dithers, &self.quantizer),
                remaining: span,
            });
        }
        let flight = self.active.as_mut().expect("broadcast in flight");
        flight.remaining -= 1;
        // channel uses spent during this iteration
        let uses = if span == 1 {
            symbols
        } else if flight.remaining == 0 {
            symbols - (span - 1) * ((m + 1) * self.b) as u64
        } else {
            ((m + 1) * self.b) as u64
        };
        let (payloads, failures) = if flight.remaining == 0 {
            let f = self.active.take().expect("broadcast in flight");
            self.deliver(round, f.sender, &f.decoded)
        } else {
            (vec![Payload::Absent; n], 0)
        };
        Ok(BackendOutput {
            payloads,
            ledger: RoundLedger {
                channel_uses: uses,
                symbols: uses,
                energy: uses as f64 * self.peak_power,
                clamped: 0,
            },
            failures,
        })
    }
}

pub struct AnbBackend {
    params: ProtocolParams,
    training: usize,
    gate: f64,
    noise: NoiseModel,
    assumed_m_w: f64,
    schedule: TdmaSchedule,
    fading: Box<dyn FadingDistribution>,
}

impl AnbBackend {
    pub fn new(setup: &BackendSetup) -> Result<Self> {
        let training = setup.anb.training_symbols.unwrap_or(setup.params.b);
        if training == 0 {
            return Err(Error::config("ANB needs at least one training symbol"));
        }
        Ok(Self {
            params: setup.params,
            training,
            gate: setup.anb.power_gate_factor,
            noise: setup.noise,
            assumed_m_w: setup.assumed_m_w,
            schedule: setup.schedule(),
            fading: Box::new(CircularGaussian),
        })
    }
}

/// Receive one analog broadcast over a link with constant coefficient `xi`.
/// Returns `None` when the mean power of the whole received broadcast is
/// below `gate · m_w`.
#[allow(clippy::too_many_arguments)]
pub fn anb_receive<R: Rng + ?Sized>(
    lambda: &[f64],
    xi: num_complex::Complex64,
    params: &ProtocolParams,
    b: usize,
    noise: &NoiseModel,
    assumed_m_w: f64,
    gate: f64,
    sign_rng: &mut R,
    noise_rng: &mut R,
) -> Option<Vec<f64>> {
    let sign = |rng: &mut R| if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let block = |amp: f64, sign_rng: &mut R, noise_rng: &mut R| {
        let mut e = 0.0;
        for _ in 0..b {
            let s = amp * sign(sign_rng);
            e += (xi * s + noise.sample(noise_rng)).norm_sqr();
        }
        e / b as f64
    };
    let training = block(params.g(params.delta_max).sqrt(), sign_rng, noise_rng);
    let info: Vec<f64> = lambda
        .iter()
        .map(|&x| block(params.g(params.clamp(x).0).sqrt(), sign_rng, noise_rng))
        .collect();
    let total = (training + info.iter().sum::<f64>()) / (info.len() + 1) as f64;
    if total < gate * assumed_m_w || training <= assumed_m_w {
        return None;
    }
    let c_hat = training - assumed_m_w;
    Some(
        info.iter()
            .map(|p| {
                let est = params.delta_min + params.delta() * (p - assumed_m_w) / c_hat;
                est.clamp(params.delta_min, params.delta_max)
            })
            .collect(),
    )
}

impl CommBackend for AnbBackend {
    fn name(&self) -> &str {
        "ANB"
    }

    fn round(&mut self, round: &BackendRound) -> Result<BackendOutput> {
        let n = round.lambdas.len();
        let u = self.schedule.broadcaster(round.iteration);
        let lambda = &round.lambdas[u];
        let mut payloads = vec![Payload::Absent; n];
        let mut failures = 0;
        for (r, slot) in payloads.iter_mut().enumerate() {
            if r == u {
                continue;
            }
            let mut fading_rng = round.seeds.stream(Stream::Fading, round.iteration, r as u64);
            let xi = self.fading.sample(round.gains.gain(u, r), &mut fading_rng);
            // the broadcast symbols are common to all receivers
            let mut sign_rng = round.seeds.stream(Stream::Signs, round.iteration, u as u64);
            let mut noise_rng = round.seeds.stream(Stream::Noise, round.iteration, r as u64);
            match anb_receive(
                lambda,
                xi,
                &self.params,
                self.training,
                &self.noise,
                self.assumed_m_w,
                self.gate,
                &mut sign_rng,
                &mut noise_rng,
            ) {
                Some(est) => *slot = Payload::Estimate(est),
                None => failures += 1,
            }
        }
        let b = self.training as u64;
        let m = lambda.len() as u64;
        let pilot = self.params.g(self.params.delta_max);
        let info: f64 = lambda.iter().map(|&x| self.params.g(self.params.clamp(x).0)).sum();
        Ok(BackendOutput {
            payloads,
            ledger: RoundLedger {
                channel_uses: (m + 1) * b,
                symbols: (m + 1) * b,
                energy: (pilot + info) * b as f64,
                clamped: lambda.iter().filter(|&&x| self.params.clamp(x).1).count() as u64,
            },
            failures,
        })
    }
}

/// Registry with NOC, CEN, DBC, ANB, OTA-C and OTA-CS.
pub fn builtin_registry() -> BackendRegistry<BackendSetup> {
    let mut reg = BackendRegistry::default();
    reg.register("NOC", |_| Ok(Box::new(NocBackend) as Box<dyn CommBackend>));
    reg.register("CEN", |_| Ok(Box::new(CenBackend) as Box<dyn CommBackend>));
    reg.register("DBC", |s| Ok(Box::new(DbcBackend::new(s)?) as Box<dyn CommBackend>));
    reg.register("ANB", |s| Ok(Box::new(AnbBackend::new(s)?) as Box<dyn CommBackend>));
    for name in ["OTA-C", "OTA-CS"] {
        reg.register(name, move |s: &BackendSetup| {
            Ok(Box::new(OtaBackend {
                name: name.to_string(),
                params: s.params,
                noise: s.noise,
                assumed_m_w: s.assumed_m_w,
                fading: Box::new(CircularGaussian),
                coherent: s.coherent,
                skip_zeros: s.skip_zeros,
                gamma_scale: s.gamma_scale,
                gamma_mode: s.gamma_mode,
            }) as Box<dyn CommBackend>)
        });
    }
    reg
}
