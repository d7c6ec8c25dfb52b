//! Over-the-air consensus: transmit pre-processing, superposition rounds,
//! receiver post-processing and the consensus update.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::channel::{FadingDistribution, FadingDraw, LinkGains, NoiseModel};
use crate::error::{Error, Result};
use crate::rng::{SeedTree, Stream};

/// Per-estimate symbol half-count `B`, input range `[δ_min, δ_max]` and peak
/// transmit power `P` (shared by all agents).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    pub b: usize,
    pub delta_min: f64,
    pub delta_max: f64,
    pub peak_power: f64,
}

impl ProtocolParams {
    pub fn new(b: usize, delta_min: f64, delta_max: f64, peak_power: f64) -> Result<Self> {
        if b == 0 {
            return Err(Error::config("B must be at least 1"));
        }
        if !(delta_max > delta_min) || !delta_min.is_finite() || !delta_max.is_finite() {
            return Err(Error::config(format!(
                "input range must satisfy delta_min < delta_max, got [{delta_min}, {delta_max}]"
            )));
        }
        if !(peak_power > 0.0) || !peak_power.is_finite() {
            return Err(Error::config("peak power must be positive"));
        }
        Ok(Self {
            b,
            delta_min,
            delta_max,
            peak_power,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta_max - self.delta_min
    }

    /// Power map `g(x) = (P/Δ)(x − δ_min)`.
    pub fn g(&self, x: f64) -> f64 {
        self.peak_power / self.delta() * (x - self.delta_min)
    }

    /// Clamp into the input range, reporting whether clamping happened.
    pub fn clamp(&self, x: f64) -> (f64, bool) {
        let c = x.clamp(self.delta_min, self.delta_max);
        (c, c != x)
    }
}

/// The `2B` symbols one transmitter emits for one scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFrame {
    /// Symbol `t` (0-based) carries `g(λ)` for even `t` and `g(δ_max)` for odd `t`.
    pub symbols: Vec<Complex64>,
    pub clamped: bool,
}

fn unit_sign<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.random_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

pub fn encode<R: Rng + ?Sized>(lambda: f64, params: &ProtocolParams, rng: &mut R) -> EncodedFrame {
    let (lambda, clamped) = params.clamp(lambda);
    let info = params.g(lambda).sqrt();
    let dummy = params.g(params.delta_max).sqrt();
    let symbols = (0..2 * params.b)
        .map(|t| {
            let amp = if t % 2 == 0 { info } else { dummy };
            Complex64::new(amp * unit_sign(rng), 0.0)
        })
        .collect();
    EncodedFrame { symbols, clamped }
}

/// Receiver estimates `v̂ ≈ Σ ν_jr λ_j` and `v̂' ≈ Σ ν_jr`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtaRoundOutput {
    pub v_hat: f64,
    pub v_prime_hat: f64,
}

fn estimate(y_energy: f64, y_prime_energy: f64, b: usize, m_w: f64, params: &ProtocolParams) -> (f64, f64) {
    let bf = b as f64;
    let v_prime = y_prime_energy / bf - m_w;
    let v = params.delta() * (y_energy / bf - m_w) + params.delta_min * v_prime;
    (v, v_prime)
}

/// Split `2B` received symbols into information (`y`) and dummy (`y'`) halves
/// and form the two estimates.
pub fn post_process(received: &[Complex64], m_w: f64, params: &ProtocolParams) -> Result<OtaRoundOutput> {
    if received.len() != 2 * params.b {
        return Err(Error::invalid(format!(
            "expected {} received symbols, got {}",
            2 * params.b,
            received.len()
        )));
    }
    let y: f64 = received.iter().step_by(2).map(|q| q.norm_sqr()).sum();
    let y_prime: f64 = received.iter().skip(1).step_by(2).map(|q| q.norm_sqr()).sum();
    let (v_hat, v_prime_hat) = estimate(y, y_prime, params.b, m_w, params);
    Ok(OtaRoundOutput { v_hat, v_prime_hat })
}

/// Realized link weight `ν = (P/B) Σ_b |ξ(2b−1)|²` from the `B` pair values.
pub fn realized_weight(pair_values: &[Complex64], peak_power: f64) -> f64 {
    let s: f64 = pair_values.iter().map(|x| x.norm_sqr()).sum();
    peak_power * s / pair_values.len() as f64
}

/// Everything a vector round needs besides the inputs.
pub struct RoundContext<'a> {
    pub params: ProtocolParams,
    pub gains: &'a LinkGains,
    pub noise: NoiseModel,
    /// Noise power the receivers subtract; equals `noise.power()` unless a
    /// mismatch is being studied.
    pub assumed_m_w: f64,
    pub fading: &'a dyn FadingDistribution,
    pub seeds: SeedTree,
    pub iteration: u64,
    /// Share one fading draw and one dummy round across all coordinates.
    pub coherent: bool,
    /// Do not transmit information symbols whose amplitude is zero.
    pub skip_zeros: bool,
    pub trace: bool,
}

/// Channel-use and energy accounting of one round, network-wide.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RoundLedger {
    /// Symbol slots occupied on the shared channel.
    pub channel_uses: u64,
    /// Symbols actually emitted, summed over transmitters.
    pub symbols: u64,
    /// `Σ |s|²` over emitted symbols.
    pub energy: f64,
    /// Inputs clamped into the range before encoding.
    pub clamped: u64,
}

impl RoundLedger {
    pub fn add(&mut self, other: &RoundLedger) {
        self.channel_uses += other.channel_uses;
        self.symbols += other.symbols;
        self.energy += other.energy;
        self.clamped += other.clamped;
    }
}

/// Per-receiver ground truth of one round, for analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverTrace {
    pub senders: Vec<usize>,
    /// `nu[link][m]`: realized weight of link `senders[link] → r` for coordinate `m`.
    pub nu: Vec<Vec<f64>>,
    /// `η = v̂ − Σ ν λ` per coordinate.
    pub eta: Vec<f64>,
    /// `η' = v̂' − Σ ν` per coordinate.
    pub eta_prime: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverOutput {
    pub receiver: usize,
    pub v_hat: Vec<f64>,
    pub v_prime_hat: Vec<f64>,
    pub trace: Option<ReceiverTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorRoundOutput {
    pub receivers: Vec<ReceiverOutput>,
    pub ledger: RoundLedger,
}

/// Symbols of one transmitter for a whole vector round.
struct TxFrame {
    /// `info[m][p]`, amplitude times sign, real.
    info: Vec<Vec<f64>>,
    /// `dummy[m'][p]` where `m'` ranges over one entry when coherent, `M` otherwise.
    dummy: Vec<Vec<f64>>,
    ledger: RoundLedger,
}

fn encode_transmitter(lambda: &[f64], ctx: &RoundContext, agent: usize) -> TxFrame {
    let p = &ctx.params;
    let mut rng = ctx.seeds.stream(Stream::Signs, ctx.iteration, agent as u64);
    let mut ledger = RoundLedger::default();
    let dummy_amp = p.g(p.delta_max).sqrt();
    let mut info = Vec::with_capacity(lambda.len());
    for &x in lambda {
        let (x, clamped) = p.clamp(x);
        ledger.clamped += clamped as u64;
        let amp = p.g(x).sqrt();
        let skip = ctx.skip_zeros && amp == 0.0;
        let row: Vec<f64> = (0..p.b).map(|_| amp * unit_sign(&mut rng)).collect();
        if !skip {
            ledger.symbols += p.b as u64;
            ledger.energy += amp * amp * p.b as f64;
        }
        info.push(row);
    }
    let dummy_rounds = if ctx.coherent { 1 } else { lambda.len() };
    let dummy = (0..dummy_rounds)
        .map(|_| (0..p.b).map(|_| dummy_amp * unit_sign(&mut rng)).collect())
        .collect();
    ledger.symbols += (dummy_rounds * p.b) as u64;
    ledger.energy += dummy_amp * dummy_amp * (dummy_rounds * p.b) as f64;
    TxFrame {
        info,
        dummy,
        ledger,
    }
}

fn receive(
    r: usize,
    transmitters: &[usize],
    frames: &[TxFrame],
    lambdas: &[Vec<f64>],
    ctx: &RoundContext,
    m: usize,
) -> ReceiverOutput {
    let p = &ctx.params;
    let senders: Vec<usize> = transmitters
        .iter()
        .copied()
        .filter(|&j| j != r && ctx.gains.gain(j, r) > 0.0)
        .collect();
    let index: Vec<usize> = transmitters
        .iter()
        .enumerate()
        .filter(|(_, &j)| j != r && ctx.gains.gain(j, r) > 0.0)
        .map(|(k, _)| k)
        .collect();
    let links: Vec<(usize, usize)> = senders.iter().map(|&j| (j, r)).collect();
    let mut fading_rng = ctx.seeds.stream(Stream::Fading, ctx.iteration, r as u64);
    let mut noise_rng = ctx.seeds.stream(Stream::Noise, ctx.iteration, r as u64);
    let draws = if ctx.coherent { 1 } else { m };
    let fading: Vec<FadingDraw> = (0..draws)
        .map(|_| FadingDraw::sample(links.clone(), ctx.gains, p.b, ctx.fading, &mut fading_rng))
        .collect();

    let superpose = |draw: &FadingDraw, amps: &dyn Fn(usize) -> f64, pair: usize, rng: &mut crate::rng::StreamRng| {
        let mut q = ctx.noise.sample(rng);
        for link in 0..senders.len() {
            q += draw.xi(link, 2 * pair) * amps(link);
        }
        q
    };

    let mut v_hat = vec![0.0; m];
    let mut v_prime_hat = vec![0.0; m];
    let mut dummy_energy = vec![0.0; draws];
    for (d, draw) in fading.iter().enumerate() {
        let mut e = 0.0;
        for pair in 0..p.b {
            let amps = |link: usize| frames[index[link]].dummy[d][pair];
            e += superpose(draw, &amps, pair, &mut noise_rng).norm_sqr();
        }
        dummy_energy[d] = e;
    }
    for c in 0..m {
        let d = if ctx.coherent { 0 } else { c };
        let mut e = 0.0;
        for pair in 0..p.b {
            let amps = |link: usize| frames[index[link]].info[c][pair];
            e += superpose(&fading[d], &amps, pair, &mut noise_rng).norm_sqr();
        }
        let (v, vp) = estimate(e, dummy_energy[d], p.b, ctx.assumed_m_w, p);
        v_hat[c] = v;
        v_prime_hat[c] = vp;
    }

    let trace = ctx.trace.then(|| {
        let nu: Vec<Vec<f64>> = (0..senders.len())
            .map(|link| {
                (0..m)
                    .map(|c| {
                        let d = if ctx.coherent { 0 } else { c };
                        realized_weight(fading[d].pair_values(link), p.peak_power)
                    })
                    .collect()
            })
            .collect();
        let mut eta = v_hat.clone();
        let mut eta_prime = v_prime_hat.clone();
        for (link, &j) in senders.iter().enumerate() {
            for c in 0..m {
                let (x, _) = p.clamp(lambdas[j][c]);
                eta[c] -= nu[link][c] * x;
                eta_prime[c] -= nu[link][c];
            }
        }
        ReceiverTrace {
            senders: senders.clone(),
            nu,
            eta,
            eta_prime,
        }
    });

    ReceiverOutput {
        receiver: r,
        v_hat,
        v_prime_hat,
        trace,
    }
}

/// One OTA-C run over all coordinates: every transmitter in `transmitters`
/// sends its vector `lambdas[j]`; every agent in `receivers` forms estimates.
///
/// `lambdas` is indexed by agent. Randomness is keyed by iteration and agent,
/// so the outcome does not depend on the rayon thread count.
pub fn run_vector_round(
    transmitters: &[usize],
    receivers: &[usize],
    lambdas: &[Vec<f64>],
    ctx: &RoundContext,
) -> Result<VectorRoundOutput> {
    let m = lambdas
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::invalid("no agent inputs"))?;
    if lambdas.iter().any(|l| l.len() != m) || m == 0 {
        return Err(Error::invalid("all input vectors must share a nonzero length"));
    }
    let n = lambdas.len();
    if transmitters.iter().chain(receivers).any(|&k| k >= n) {
        return Err(Error::invalid("agent index out of range"));
    }
    let frames: Vec<TxFrame> = transmitters
        .par_iter()
        .map(|&j| encode_transmitter(&lambdas[j], ctx, j))
        .collect();
    let mut ledger = RoundLedger::default();
    for f in &frames {
        ledger.add(&f.ledger);
    }
    if !transmitters.is_empty() {
        let b = ctx.params.b as u64;
        let m = m as u64;
        ledger.channel_uses = if ctx.coherent { (m + 1) * b } else { 2 * b * m };
    }
    let outputs: Vec<ReceiverOutput> = receivers
        .par_iter()
        .map(|&r| receive(r, transmitters, &frames, lambdas, ctx, m))
        .collect();
    Ok(VectorRoundOutput {
        receivers: outputs,
        ledger,
    })
}

/// `(1 − βγ v̂') ⊙ λ + βγ v̂`.
pub fn consensus_update(
    lambda: &[f64],
    v_hat: &[f64],
    v_prime_hat: &[f64],
    beta: f64,
    gamma: f64,
) -> Result<Vec<f64>> {
    if v_hat.len() != lambda.len() || v_prime_hat.len() != lambda.len() {
        return Err(Error::invalid("consensus update length mismatch"));
    }
    let bg = beta * gamma;
    Ok(lambda
        .iter()
        .zip(v_hat)
        .zip(v_prime_hat)
        .map(|((l, v), vp)| (1.0 - bg * vp) * l + bg * v)
        .collect())
}

/// `Σ_j E[ν_jr] = Σ_j P σ²_jr` for each receiver.
pub fn expected_neighbor_weights(
    transmitters: &[usize],
    receivers: &[usize],
    gains: &LinkGains,
    peak_power: f64,
) -> Vec<f64> {
    receivers
        .iter()
        .map(|&r| {
            transmitters
                .iter()
                .filter(|&&j| j != r)
                .map(|&j| peak_power * gains.gain(j, r))
                .sum()
        })
        .collect()
}

/// Largest admissible `γ`: `(max_r Σ_j E[ν_jr])⁻¹`.
pub fn gamma_bound(expected_neighbor_weights: &[f64]) -> Result<f64> {
    let max = expected_neighbor_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if expected_neighbor_weights.is_empty() || !(max > 0.0) {
        return Err(Error::config("gamma bound needs at least one receiver with neighbors"));
    }
    Ok(1.0 / max)
}

/// Result of the Monte-Carlo unbiasedness check on one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct UnbiasednessReport {
    pub neighbors: usize,
    pub b: usize,
    pub draws: usize,
    pub mean_eta: f64,
    pub se_eta: f64,
    pub mean_eta_prime: f64,
    pub se_eta_prime: f64,
}

impl UnbiasednessReport {
    pub fn passed(&self, z: f64) -> bool {
        self.mean_eta.abs() <= z * self.se_eta && self.mean_eta_prime.abs() <= z * self.se_eta_prime
    }
}

/// Fix one Rayleigh fading realization for `neighbors` links, then draw
/// `draws` independent noise/sign realizations of the scalar protocol and
/// report the mean estimation errors with their standard errors.
pub fn check_unbiasedness(neighbors: usize, b: usize, draws: usize, m_w: f64, seed: u64) -> Result<UnbiasednessReport> {
    if neighbors == 0 || draws < 2 {
        return Err(Error::invalid("need at least one neighbor and two draws"));
    }
    let params = ProtocolParams::new(b, -1.0, 1.0, 1.0)?;
    let seeds = SeedTree::new(seed);
    let mut setup = seeds.stream(Stream::Verify, 0, 0);
    let n = neighbors + 1;
    let gains = LinkGains::uniform(n, 1.0);
    let links: Vec<(usize, usize)> = (0..neighbors).map(|j| (j, neighbors)).collect();
    let fading = FadingDraw::sample(links, &gains, b, &crate::channel::CircularGaussian, &mut setup);
    let lambdas: Vec<f64> = (0..neighbors).map(|_| setup.random_range(-1.0..=1.0)).collect();
    let nu: Vec<f64> = (0..neighbors)
        .map(|l| realized_weight(fading.pair_values(l), params.peak_power))
        .collect();
    let v_true: f64 = nu.iter().zip(&lambdas).map(|(a, x)| a * x).sum();
    let vp_true: f64 = nu.iter().sum();
    let noise = NoiseModel::new(m_w)?;

    let chunks = 64usize;
    let per_chunk = draws.div_ceil(chunks);
    let partial: Vec<[f64; 5]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seeds.stream(Stream::Verify, 1, c as u64);
            let mut acc = [0.0; 5];
            let count = per_chunk.min(draws.saturating_sub(c * per_chunk));
            let mut received = vec![Complex64::new(0.0, 0.0); 2 * b];
            for _ in 0..count {
                let frames: Vec<EncodedFrame> = lambdas.iter().map(|&x| encode(x, &params, &mut rng)).collect();
                for (t, q) in received.iter_mut().enumerate() {
                    *q = noise.sample(&mut rng);
                    for (l, f) in frames.iter().enumerate() {
                        *q += fading.xi(l, t) * f.symbols[t];
                    }
                }
                let out = post_process(&received, m_w, &params).expect("length fixed");
                let e = out.v_hat - v_true;
                let ep = out.v_prime_hat - vp_true;
                acc[0] += e;
                acc[1] += e * e;
                acc[2] += ep;
                acc[3] += ep * ep;
                acc[4] += 1.0;
            }
            acc
        })
        .collect();
    let mut tot = [0.0; 5];
    for p in &partial {
        for k in 0..5 {
            tot[k] += p[k];
        }
    }
    let cnt = tot[4];
    let mean_se = |s: f64, sq: f64| {
        let mean = s / cnt;
        let var = (sq / cnt - mean * mean).max(0.0) * cnt / (cnt - 1.0);
        (mean, (var / cnt).sqrt())
    };
    let (mean_eta, se_eta) = mean_se(tot[0], tot[1]);
    let (mean_eta_prime, se_eta_prime) = mean_se(tot[2], tot[3]);
    Ok(UnbiasednessReport {
        neighbors,
        b,
        draws: cnt as usize,
        mean_eta,
        se_eta,
        mean_eta_prime,
        se_eta_prime,
    })
}

/// How the network-wide `γ` is derived from link statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaMode {
    /// Count every other agent as a potential neighbor, so the bound holds for
    /// every role pattern and the expected matrix stays symmetric.
    #[default]
    AllNeighbors,
    /// Use only the transmitters and receivers of the current slot.
    CurrentRoles,
}

/// OTA-C as a consensus backend: current transmitters send, receivers mix.
pub struct OtaBackend {
    pub name: String,
    pub params: ProtocolParams,
    pub noise: NoiseModel,
    pub assumed_m_w: f64,
    pub fading: Box<dyn FadingDistribution>,
    pub coherent: bool,
    pub skip_zeros: bool,
    pub gamma_scale: f64,
    pub gamma_mode: GammaMode,
}

impl OtaBackend {
    pub fn gamma(&self, topology: &crate::channel::TopologySnapshot, gains: &LinkGains) -> Option<f64> {
        let weights = match self.gamma_mode {
            GammaMode::AllNeighbors => {
                let all: Vec<usize> = (0..topology.n_agents()).collect();
                expected_neighbor_weights(&all, &all, gains, self.params.peak_power)
            }
            GammaMode::CurrentRoles => expected_neighbor_weights(
                &topology.transmitters(),
                &topology.receivers(),
                gains,
                self.params.peak_power,
            ),
        };
        gamma_bound(&weights).ok().map(|b| self.gamma_scale * b)
    }
}

impl crate::apsm::CommBackend for OtaBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn round(&mut self, round: &crate::apsm::BackendRound) -> Result<crate::apsm::BackendOutput> {
        use crate::apsm::{BackendOutput, Payload};
        let n = round.lambdas.len();
        let mut payloads = vec![Payload::Absent; n];
        let tx = round.topology.transmitters();
        let rx = round.topology.receivers();
        let Some(gamma) = self.gamma(round.topology, round.gains) else {
            return Ok(BackendOutput {
                payloads,
                ledger: RoundLedger::default(),
                failures: 0,
            });
        };
        let ctx = RoundContext {
            params: self.params,
            gains: round.gains,
            noise: self.noise,
            assumed_m_w: self.assumed_m_w,
            fading: self.fading.as_ref(),
            seeds: round.seeds,
            iteration: round.iteration,
            coherent: self.coherent,
            skip_zeros: self.skip_zeros,
            trace: false,
        };
        let out = run_vector_round(&tx, &rx, round.lambdas, &ctx)?;
        for r in out.receivers {
            payloads[r.receiver] = Payload::OtaC {
                v_hat: r.v_hat,
                v_prime_hat: r.v_prime_hat,
                gamma,
            };
        }
        Ok(BackendOutput {
            payloads,
            ledger: out.ledger,
            failures: 0,
        })
    }
}
