//! End-to-end simulation loop, metrics, parameter sweeps and energy
//! accounting.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::apsm::{local_step, mix_step, BackendRound, PerturbationSource};
use crate::baselines::{builtin_registry, AnbConfig, BackendSetup, DbcConfig};
use crate::channel::{noise_from_snr, LinkGains, Mobility, MobilityModel, NoiseModel, TopologySnapshot, DOMAIN_SIDE_M};
use crate::error::{Error, Result};
use crate::kernel::{box_operator, Dataset, FieldParams, Hyperslab, Point3, ProductCost, RffDictionary, Sample, SyntheticField};
use crate::otac::{GammaMode, ProtocolParams};
use crate::rng::{SeedTree, Stream};
use crate::schedule::{default_schedules, ScheduleFamily, ScheduleOptions, StepSchedules, ZetaRule};
use crate::sparsity::ReweightedL1;
use crate::state::residual_of_blocks;

/// Lowest NMSE ever reported, in dB.
pub const NMSE_FLOOR_DB: f64 = -80.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "NOC")]
    Noc,
    #[serde(rename = "CEN")]
    Cen,
    #[serde(rename = "DBC")]
    Dbc,
    #[serde(rename = "ANB")]
    Anb,
    #[serde(rename = "OTA-C")]
    OtaC,
    #[serde(rename = "OTA-CS")]
    OtaCs,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [Scheme::OtaCs, Scheme::OtaC, Scheme::Dbc, Scheme::Anb, Scheme::Noc, Scheme::Cen];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Noc => "NOC",
            Scheme::Cen => "CEN",
            Scheme::Dbc => "DBC",
            Scheme::Anb => "ANB",
            Scheme::OtaC => "OTA-C",
            Scheme::OtaCs => "OTA-CS",
        }
    }

    /// Sparse variant: signed 2L dictionary, `[0, 1]` box and perturbations.
    pub fn sparse(&self) -> bool {
        matches!(self, Scheme::OtaCs)
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown scheme {s:?}")))
    }
}

/// Initial agent weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    #[default]
    Zero,
    /// Independent uniform draws over the scheme's box.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Kernel count `L` before sign duplication.
    pub kernels: usize,
    /// Random features per kernel `P`.
    pub features: usize,
    /// Gaussian kernel widths in meters, one per kernel.
    pub widths: Vec<f64>,
    /// Hyperslab half-width.
    pub eps: f64,
    pub mu: f64,
    pub init: InitMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kernels: 2,
            features: 10,
            widths: vec![200.0, 1000.0],
            eps: 0.3,
            mu: 0.5,
            init: InitMode::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    /// Symbol pairs per OTA-C run.
    pub b: usize,
    /// SNR at `ref_distance`.
    pub snr_db: f64,
    pub carrier_hz: f64,
    /// Peak transmit power in watts.
    pub peak_power: f64,
    pub ref_distance: f64,
    pub coherent: bool,
    /// Skip zero-amplitude symbols in the energy ledger.
    pub skip_zeros: bool,
    pub gamma_scale: f64,
    pub gamma_mode: GammaMode,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            b: 4,
            snr_db: -20.0,
            carrier_hz: 3e9,
            peak_power: 1e-3,
            ref_distance: 500.0,
            coherent: true,
            skip_zeros: true,
            gamma_scale: 1.0,
            gamma_mode: GammaMode::AllNeighbors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub family: ScheduleFamily,
    /// `ζ` scale for the sparse variant.
    pub zeta_scale: f64,
    pub zeta_period: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            family: ScheduleFamily::Diminishing,
            zeta_scale: 1e-7,
            zeta_period: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilityConfig {
    /// Mean slots between renewals; 0 keeps agents static after the first.
    pub mean_gap: f64,
    pub noise_var: f64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self {
            mean_gap: 300.0,
            noise_var: 0.09,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// CSV with header `x,y,z,value`; the synthetic field is used when unset.
    pub csv: Option<PathBuf>,
    /// Synthetic training rows.
    pub rows: usize,
    /// Held-out CSV rows used as the evaluation grid.
    pub holdout: usize,
    /// Synthetic evaluation lattice points per axis.
    pub grid_per_axis: usize,
    pub field: FieldParams,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            csv: None,
            rows: 20_000,
            holdout: 2000,
            grid_per_axis: 20,
            field: FieldParams::default(),
        }
    }
}

/// Full simulation configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub schemes: Vec<Scheme>,
    pub seed: u64,
    pub n_agents: usize,
    pub iterations: u64,
    pub runs: usize,
    pub log_stride: u64,
    pub tdma_shuffle: bool,
    pub model: ModelConfig,
    pub channel: ChannelConfig,
    pub schedule: ScheduleConfig,
    pub mobility: MobilityConfig,
    pub dataset: DatasetConfig,
    pub dbc: DbcConfig,
    pub anb: AnbConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            schemes: Scheme::ALL.to_vec(),
            seed: 1,
            n_agents: 30,
            iterations: 5000,
            runs: 10,
            log_stride: 100,
            tdma_shuffle: false,
            model: ModelConfig::default(),
            channel: ChannelConfig::default(),
            schedule: ScheduleConfig::default(),
            mobility: MobilityConfig::default(),
            dataset: DatasetConfig::default(),
            dbc: DbcConfig::default(),
            anb: AnbConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_agents", self.n_agents),
            ("runs", self.runs),
            ("model.kernels", self.model.kernels),
            ("model.features", self.model.features),
            ("channel.b", self.channel.b),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.schemes.is_empty() {
            return Err(Error::config("schemes must list at least one scheme"));
        }
        if self.log_stride == 0 {
            return Err(Error::config("log_stride must be positive"));
        }
        if self.model.widths.len() != self.model.kernels {
            return Err(Error::config(format!(
                "model.widths has {} entries but model.kernels = {}",
                self.model.widths.len(),
                self.model.kernels
            )));
        }
        if !(self.model.eps >= 0.0) {
            return Err(Error::config("model.eps must be nonnegative"));
        }
        if !(self.model.mu > 0.0 && self.model.mu < 2.0) {
            return Err(Error::config("model.mu must lie in (0, 2)"));
        }
        if !(self.channel.gamma_scale > 0.0 && self.channel.gamma_scale <= 1.0) {
            return Err(Error::config("channel.gamma_scale must lie in (0, 1]"));
        }
        if !(self.channel.peak_power > 0.0) || !(self.channel.carrier_hz > 0.0) || !(self.channel.ref_distance > 0.0) {
            return Err(Error::config("channel power, carrier and reference distance must be positive"));
        }
        if !(self.mobility.mean_gap >= 0.0) || !(self.mobility.noise_var >= 0.0) {
            return Err(Error::config("mobility values must be nonnegative"));
        }
        if self.dataset.csv.is_none() && (self.dataset.rows == 0 || self.dataset.grid_per_axis == 0) {
            return Err(Error::config("synthetic dataset needs rows and grid_per_axis ≥ 1"));
        }
        if !(self.schedule.zeta_scale >= 0.0) {
            return Err(Error::config("schedule.zeta_scale must be nonnegative"));
        }
        self.dbc.validate()
    }

    pub fn noise_power(&self) -> Result<f64> {
        noise_from_snr(
            self.channel.snr_db,
            self.channel.ref_distance,
            self.channel.carrier_hz,
            self.channel.peak_power,
        )
        .map(|n| n.power())
    }

    pub fn schedules(&self, scheme: Scheme) -> StepSchedules {
        let mut s = default_schedules(
            self.channel.snr_db,
            ScheduleOptions {
                family: self.schedule.family,
                sparsity: scheme.sparse(),
                mu: self.model.mu,
                gamma_scale: self.channel.gamma_scale,
            },
        );
        s.zeta = if scheme.sparse() && self.schedule.zeta_scale > 0.0 {
            ZetaRule::Harmonic {
                scale: self.schedule.zeta_scale,
                period: self.schedule.zeta_period,
            }
        } else {
            ZetaRule::Off
        };
        s
    }

    /// `(δmin, δmax)` of the scheme's parameter box.
    pub fn bounds(&self, scheme: Scheme) -> (f64, f64) {
        if scheme.sparse() {
            (0.0, 1.0)
        } else {
            (-1.0, 1.0)
        }
    }

    pub fn backend_setup(&self, scheme: Scheme) -> Result<BackendSetup> {
        let (lo, hi) = self.bounds(scheme);
        let m_w = self.noise_power()?;
        Ok(BackendSetup {
            n_agents: self.n_agents,
            params: ProtocolParams::new(self.channel.b, lo, hi, self.channel.peak_power)?,
            noise: NoiseModel::new(m_w)?,
            assumed_m_w: m_w,
            snr_db: self.channel.snr_db,
            carrier_hz: self.channel.carrier_hz,
            dbc: self.dbc,
            anb: self.anb,
            tdma_shuffle: self.tdma_shuffle,
            tdma_seed: self.seed,
            coherent: self.channel.coherent,
            skip_zeros: self.channel.skip_zeros,
            gamma_scale: self.channel.gamma_scale,
            gamma_mode: self.channel.gamma_mode,
        })
    }
}

/// Evaluation points with their feature rows and reference values.
#[derive(Debug, Clone)]
pub struct FeatureGrid {
    dim: usize,
    features: Vec<f64>,
    truth: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(dict: &RffDictionary, points: &[Point3], truth: Vec<f64>) -> Result<Self> {
        if points.len() != truth.len() || points.is_empty() {
            return Err(Error::invalid("grid points and values must be nonempty and equal in number"));
        }
        let features = points.par_iter().flat_map_iter(|p| dict.features(p)).collect();
        Ok(Self {
            dim: dict.dim(),
            features,
            truth,
        })
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn truth(&self) -> &[f64] {
        &self.truth
    }
}

/// Cell-centered `n³` lattice over the domain.
pub fn lattice(n: usize) -> Vec<Point3> {
    let c = |k: usize| (k as f64 + 0.5) * DOMAIN_SIDE_M / n as f64;
    let mut out = Vec::with_capacity(n * n * n);
    for a in 0..n {
        for b in 0..n {
            for d in 0..n {
                out.push([c(a), c(b), c(d)]);
            }
        }
    }
    out
}

/// Mean over agents and grid of `(f̂ − f)²`, divided by the grid variance of `f`.
pub fn nmse_linear(weights: &[Vec<f64>], grid: &FeatureGrid) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::invalid("no agent weights"));
    }
    if weights.iter().any(|w| w.len() != grid.dim) {
        return Err(Error::invalid("weight length differs from dictionary dimension"));
    }
    let n = grid.len() as f64;
    let mean = grid.truth.iter().sum::<f64>() / n;
    let var = grid.truth.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::DegenerateField("field is constant over the evaluation grid".into()));
    }
    let total: f64 = weights
        .par_iter()
        .map(|h| {
            grid.features
                .chunks_exact(grid.dim)
                .zip(&grid.truth)
                .map(|(phi, f)| {
                    let est: f64 = phi.iter().zip(h).map(|(a, b)| a * b).sum();
                    (est - f).powi(2)
                })
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok(total / (n * weights.len() as f64) / var)
}

pub fn to_db(linear: f64) -> f64 {
    if linear > 0.0 {
        (10.0 * linear.log10()).max(NMSE_FLOOR_DB)
    } else {
        NMSE_FLOOR_DB
    }
}

/// NMSE in dB, floored at [`NMSE_FLOOR_DB`].
pub fn compute_nmse(weights: &[Vec<f64>], dict: &RffDictionary, points: &[Point3], truth: &[f64]) -> Result<f64> {
    let grid = FeatureGrid::new(dict, points, truth.to_vec())?;
    Ok(to_db(nmse_linear(weights, &grid)?))
}

/// One run's learning problem: dictionary, training rows and evaluation grid.
#[derive(Debug, Clone)]
pub struct Problem {
    pub dictionary: RffDictionary,
    pub train: Dataset,
    pub grid: FeatureGrid,
}

impl Problem {
    /// Problem for run `run` of `config`. `csv` is the already-loaded dataset
    /// when the configuration names one.
    pub fn build(config: &SimConfig, run: usize, signed: bool, csv: Option<&Dataset>) -> Result<Self> {
        let seeds = SeedTree::new(config.seed).child(run as u64);
        let dictionary = RffDictionary::new(
            &config.model.widths,
            config.model.features,
            signed,
            &mut seeds.stream(Stream::Dictionary, 0, 0),
        )?;
        let (train, points, truth) = match csv {
            Some(data) => {
                let (train, test) = data.split(config.dataset.holdout, &mut seeds.stream(Stream::Dataset, 1, 0));
                if train.is_empty() || test.is_empty() {
                    return Err(Error::config("CSV dataset too small for the requested holdout"));
                }
                let points: Vec<Point3> = test.rows().iter().map(|s| s.x).collect();
                let truth = test.rows().iter().map(|s| s.value).collect();
                (train, points, truth)
            }
            None => {
                let field = SyntheticField::new(&config.dataset.field, &mut seeds.stream(Stream::Field, 0, 0))?;
                let train = Dataset::from_field(&field, config.dataset.rows, &mut seeds.stream(Stream::Dataset, 0, 0));
                let points = lattice(config.dataset.grid_per_axis);
                let truth = points.iter().map(|p| field.value(p)).collect();
                (train, points, truth)
            }
        };
        let grid = FeatureGrid::new(&dictionary, &points, truth)?;
        Ok(Self { dictionary, train, grid })
    }

    /// Static problem whose hyperslabs all contain `h*`: every row's value is
    /// exactly `φ(x)ᵀh*`. Returns the problem and `h*`.
    pub fn planted(config: &SimConfig, run: usize, signed: bool) -> Result<(Self, Vec<f64>)> {
        let seeds = SeedTree::new(config.seed).child(run as u64);
        let dictionary = RffDictionary::new(
            &config.model.widths,
            config.model.features,
            signed,
            &mut seeds.stream(Stream::Dictionary, 0, 0),
        )?;
        let scheme = if signed { Scheme::OtaCs } else { Scheme::Cen };
        let (lo, hi) = config.bounds(scheme);
        let mut rng = seeds.stream(Stream::Field, 1, 0);
        let mid = (lo + hi) / 2.0;
        let half = (hi - lo) / 4.0;
        let h_star: Vec<f64> = (0..dictionary.dim()).map(|_| mid + rng.random_range(-half..half)).collect();
        let pick = |rng: &mut crate::rng::StreamRng| -> Point3 {
            [
                rng.random_range(0.0..DOMAIN_SIDE_M),
                rng.random_range(0.0..DOMAIN_SIDE_M),
                rng.random_range(0.0..DOMAIN_SIDE_M),
            ]
        };
        let rows = (0..config.dataset.rows.max(1))
            .map(|_| {
                let x = pick(&mut rng);
                Sample {
                    x,
                    value: dictionary.predict(&h_star, &x),
                }
            })
            .collect();
        let points = lattice(config.dataset.grid_per_axis.max(2));
        let truth = points.iter().map(|p| dictionary.predict(&h_star, p)).collect();
        let grid = FeatureGrid::new(&dictionary, &points, truth)?;
        Ok((
            Self {
                dictionary,
                train: Dataset::new(rows),
                grid,
            },
            h_star,
        ))
    }
}

/// State handed to an [`Observer`] at the start of every iteration and once
/// after the last one.
pub struct IterationView<'a> {
    pub iteration: u64,
    pub weights: &'a [Vec<f64>],
    /// `Θ_{k,i}(h_{k,i})` for every agent.
    pub costs: &'a [f64],
}

pub trait Observer {
    fn observe(&mut self, view: &IterationView);
}

/// One logged point of one run, or of the run average.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub iteration: u64,
    pub nmse_db: f64,
    pub residual: f64,
    pub mean_cost: f64,
    pub nonzero_fraction: f64,
    pub energy: f64,
    pub channel_uses: f64,
    pub failures: f64,
}

/// Diagnostics of the sparsity perturbations over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PerturbationStats {
    pub checked: u64,
    pub violations: u64,
    /// Largest `‖z‖_∞ · ς` seen; at most 1 when the bound holds.
    pub max_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub scheme: Scheme,
    /// Rows with linear NMSE in `nmse_db` replaced by its dB value.
    pub rows: Vec<MetricRow>,
    nmse_linear: Vec<f64>,
    pub perturbations: PerturbationStats,
}

/// Identity of a simulation used to check that two logs are comparable.
#[derive(Debug, Clone, PartialEq)]
pub struct LogKey {
    pub seed: u64,
    pub runs: usize,
    pub iterations: u64,
    pub log_stride: u64,
    pub n_agents: usize,
    pub snr_db: f64,
    pub b: usize,
}

impl LogKey {
    fn of(config: &SimConfig) -> Self {
        Self {
            seed: config.seed,
            runs: config.runs,
            iterations: config.iterations,
            log_stride: config.log_stride,
            n_agents: config.n_agents,
            snr_db: config.channel.snr_db,
            b: config.channel.b,
        }
    }
}

/// Run-averaged metrics of one scheme. NMSE is averaged in linear scale
/// before conversion to dB.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricLog {
    pub scheme: Scheme,
    pub key: LogKey,
    pub rows: Vec<MetricRow>,
    pub perturbations: PerturbationStats,
}

impl MetricLog {
    pub fn final_row(&self) -> Option<&MetricRow> {
        self.rows.last()
    }

    pub fn final_nmse(&self) -> f64 {
        self.final_row().map_or(f64::NAN, |r| r.nmse_db)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,nmse_db,residual,mean_cost,nonzero_fraction,energy,channel_uses,failures\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.iteration, r.nmse_db, r.residual, r.mean_cost, r.nonzero_fraction, r.energy, r.channel_uses, r.failures
            );
        }
        s
    }
}

fn initial_weights(config: &SimConfig, scheme: Scheme, m: usize, seeds: &SeedTree) -> Vec<Vec<f64>> {
    let (lo, hi) = config.bounds(scheme);
    (0..config.n_agents)
        .map(|k| match config.model.init {
            InitMode::Zero => vec![lo.max(0.0).min(hi); m],
            InitMode::Uniform => {
                let mut rng = seeds.stream(Stream::Init, k as u64, 0);
                (0..m).map(|_| rng.random_range(lo..hi)).collect()
            }
        })
        .collect()
}

fn nonzero_fraction(v: &[Vec<f64>]) -> f64 {
    let total: usize = v.iter().map(Vec::len).sum();
    let nz: usize = v.iter().map(|x| x.iter().filter(|a| **a != 0.0).count()).sum();
    if total == 0 {
        0.0
    } else {
        nz as f64 / total as f64
    }
}

/// Simulate one scheme on one run's problem.
pub fn run_single(
    config: &SimConfig,
    scheme: Scheme,
    problem: &Problem,
    run: usize,
    mut observer: Option<&mut dyn Observer>,
) -> Result<RunTrace> {
    config.validate()?;
    let seeds = SeedTree::new(config.seed).child(run as u64);
    let comm_seeds = seeds.child(u64::MAX);
    let m = problem.dictionary.dim();
    let n = config.n_agents;
    let schedules = config.schedules(scheme);
    let (lo, hi) = config.bounds(scheme);
    let constraint = box_operator(lo, hi)?;
    let registry = builtin_registry();
    let mut backend = registry.build(scheme.name(), &config.backend_setup(scheme)?)?;

    let model = MobilityModel {
        mean_gap: (config.mobility.mean_gap > 0.0).then_some(config.mobility.mean_gap),
        measurement_noise_var: config.mobility.noise_var,
    };
    let mut mob_rng = seeds.stream(Stream::Mobility, 0, 0);
    let mut mobility = Mobility::new(model, &problem.train, &mut mob_rng)?;
    let mut topology = TopologySnapshot::new(vec![[0.0; 3]; n]);
    let mut gains = LinkGains::uniform(n, 0.0);
    let mut slabs: Vec<Hyperslab> = Vec::new();

    let mut h = initial_weights(config, scheme, m, &seeds);
    let mut sources: Vec<Option<ReweightedL1>> = (0..n).map(|_| scheme.sparse().then(|| ReweightedL1::new(m))).collect();

    let mut rows = Vec::new();
    let mut nmse_lin = Vec::new();
    let (mut energy, mut uses, mut failures) = (0.0, 0.0, 0.0);
    let mut last_nonzero = nonzero_fraction(&h);
    let mut costs = vec![0.0; n];
    let mut last_logged = None;

    let mut log = |i: u64, h: &[Vec<f64>], costs: &[f64], nz: f64, energy: f64, uses: f64, failures: f64| -> Result<()> {
        let lin = nmse_linear(h, &problem.grid)?;
        nmse_lin.push(lin);
        rows.push(MetricRow {
            iteration: i,
            nmse_db: to_db(lin),
            residual: residual_of_blocks(h)?,
            mean_cost: costs.iter().sum::<f64>() / costs.len() as f64,
            nonzero_fraction: nz,
            energy,
            channel_uses: uses,
            failures,
        });
        Ok(())
    };

    for i in 0..config.iterations {
        if let Some(meas) = mobility.advance(i, &mut topology, &problem.train, &mut mob_rng) {
            slabs = meas
                .iter()
                .map(|s| Hyperslab::new(problem.dictionary.features(&s.position), s.value, config.model.eps))
                .collect::<Result<_>>()?;
            gains = LinkGains::friis(&topology.positions, config.channel.carrier_hz)?;
        }
        costs = h.iter().zip(&slabs).map(|(w, s)| s.distance(w).powi(2)).collect();
        if let Some(obs) = observer.as_deref_mut() {
            obs.observe(&IterationView {
                iteration: i,
                weights: &h,
                costs: &costs,
            });
        }
        if i % config.log_stride == 0 {
            last_logged = Some(i);
            log(i, &h, &costs, last_nonzero, energy, uses, failures)?;
        }

        let zeta = schedules.zeta(i);
        let varsigma = schedules.varsigma(i);
        let lambdas: Vec<Vec<f64>> = h
            .par_iter()
            .zip(slabs.par_iter())
            .zip(sources.par_iter_mut())
            .map(|((w, slab), src)| {
                let oracle = ProductCost::new(slab.clone(), w)?;
                let perturb = src.as_mut().map(|s| {
                    s.set_scales(zeta, varsigma);
                    s as &mut dyn PerturbationSource
                });
                local_step(w, &oracle, &constraint, perturb, schedules.mu)
            })
            .collect::<Result<_>>()?;
        last_nonzero = nonzero_fraction(&lambdas);

        let out = backend.round(&BackendRound {
            iteration: i,
            lambdas: &lambdas,
            topology: &topology,
            gains: &gains,
            seeds: comm_seeds,
        })?;
        energy += out.ledger.energy;
        uses += out.ledger.channel_uses as f64;
        failures += out.failures as f64;
        let beta = schedules.beta(i);
        h = lambdas
            .par_iter()
            .zip(out.payloads.par_iter())
            .map(|(l, p)| mix_step(l, p, beta))
            .collect::<Result<_>>()?;
    }

    if !slabs.is_empty() {
        costs = h.iter().zip(&slabs).map(|(w, s)| s.distance(w).powi(2)).collect();
    }
    if let Some(obs) = observer {
        obs.observe(&IterationView {
            iteration: config.iterations,
            weights: &h,
            costs: &costs,
        });
    }
    if last_logged != Some(config.iterations) {
        log(config.iterations, &h, &costs, last_nonzero, energy, uses, failures)?;
    }

    let mut perturbations = PerturbationStats::default();
    for s in sources.iter().flatten() {
        perturbations.checked += s.checked;
        perturbations.violations += s.violations;
        perturbations.max_ratio = perturbations.max_ratio.max(s.max_ratio);
    }
    Ok(RunTrace {
        scheme,
        rows,
        nmse_linear: nmse_lin,
        perturbations,
    })
}

/// Run-averaged logs for every configured scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub logs: Vec<MetricLog>,
}

impl SimulationResult {
    pub fn log(&self, scheme: Scheme) -> Option<&MetricLog> {
        self.logs.iter().find(|l| l.scheme == scheme)
    }

    pub fn final_nmse(&self, scheme: Scheme) -> Option<f64> {
        self.log(scheme).map(MetricLog::final_nmse)
    }

    /// `Iter,<scheme>,...` NMSE table in dB.
    pub fn nmse_csv(&self) -> String {
        let mut s = String::from("Iter");
        for l in &self.logs {
            s.push(',');
            s.push_str(l.scheme.name());
        }
        s.push('\n');
        let rows = self.logs.first().map_or(0, |l| l.rows.len());
        for k in 0..rows {
            let _ = write!(s, "{}", self.logs[0].rows[k].iteration);
            for l in &self.logs {
                let _ = write!(s, ",{}", l.rows[k].nmse_db);
            }
            s.push('\n');
        }
        s
    }
}

fn load_csv(config: &SimConfig) -> Result<Option<Dataset>> {
    config
        .dataset
        .csv
        .as_ref()
        .map(|p| Dataset::read_csv(p).map(|d| d.normalized()))
        .transpose()
}

fn average(scheme: Scheme, key: LogKey, traces: &[RunTrace]) -> MetricLog {
    let runs = traces.len() as f64;
    let rows = traces[0]
        .rows
        .iter()
        .enumerate()
        .map(|(k, first)| {
            let mean = |f: &dyn Fn(&MetricRow) -> f64| traces.iter().map(|t| f(&t.rows[k])).sum::<f64>() / runs;
            let lin = traces.iter().map(|t| t.nmse_linear[k]).sum::<f64>() / runs;
            MetricRow {
                iteration: first.iteration,
                nmse_db: to_db(lin),
                residual: mean(&|r| r.residual),
                mean_cost: mean(&|r| r.mean_cost),
                nonzero_fraction: mean(&|r| r.nonzero_fraction),
                energy: mean(&|r| r.energy),
                channel_uses: mean(&|r| r.channel_uses),
                failures: mean(&|r| r.failures),
            }
        })
        .collect();
    let mut perturbations = PerturbationStats::default();
    for t in traces {
        perturbations.checked += t.perturbations.checked;
        perturbations.violations += t.perturbations.violations;
        perturbations.max_ratio = perturbations.max_ratio.max(t.perturbations.max_ratio);
    }
    MetricLog {
        scheme,
        key,
        rows,
        perturbations,
    }
}

/// Run every configured scheme over `runs` Monte-Carlo runs in parallel.
/// Each run shares its field, dataset and mobility draws across schemes.
pub fn run_simulation(config: &SimConfig) -> Result<SimulationResult> {
    config.validate()?;
    let csv = load_csv(config)?;
    let jobs: Vec<(usize, Scheme)> = (0..config.runs)
        .flat_map(|r| config.schemes.iter().map(move |&s| (r, s)))
        .collect();
    let traces: Vec<RunTrace> = jobs
        .par_iter()
        .map(|&(run, scheme)| {
            let problem = Problem::build(config, run, scheme.sparse(), csv.as_ref())?;
            run_single(config, scheme, &problem, run, None)
        })
        .collect::<Result<_>>()?;
    let key = LogKey::of(config);
    let logs = config
        .schemes
        .iter()
        .map(|&s| {
            let mine: Vec<RunTrace> = traces.iter().filter(|t| t.scheme == s).cloned().collect();
            average(s, key.clone(), &mine)
        })
        .collect();
    Ok(SimulationResult { logs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Snr,
    NAgents,
}

impl SweepAxis {
    pub fn label(&self) -> &'static str {
        match self {
            SweepAxis::Snr => "SNR",
            SweepAxis::NAgents => "N",
        }
    }
}

/// Final NMSE per sweep value and scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub schemes: Vec<Scheme>,
    /// `nmse[value][scheme]` in dB.
    pub nmse: Vec<Vec<f64>>,
}

impl SweepTable {
    pub fn column(&self, scheme: Scheme) -> Option<Vec<f64>> {
        let k = self.schemes.iter().position(|&s| s == scheme)?;
        Some(self.nmse.iter().map(|row| row[k]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(self.axis.label());
        for sc in &self.schemes {
            s.push(',');
            s.push_str(sc.name());
        }
        s.push('\n');
        for (v, row) in self.values.iter().zip(&self.nmse) {
            let _ = write!(s, "{v}");
            for x in row {
                let _ = write!(s, ",{x}");
            }
            s.push('\n');
        }
        s
    }
}

pub fn sweep(axis: SweepAxis, values: &[f64], base: &SimConfig) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    let mut nmse = Vec::with_capacity(values.len());
    for &v in values {
        let mut cfg = base.clone();
        match axis {
            SweepAxis::Snr => cfg.channel.snr_db = v,
            SweepAxis::NAgents => {
                if !(v >= 1.0) || v.fract() != 0.0 {
                    return Err(Error::config(format!("agent count {v} is not a positive integer")));
                }
                cfg.n_agents = v as usize;
            }
        }
        let res = run_simulation(&cfg)?;
        nmse.push(res.logs.iter().map(MetricLog::final_nmse).collect());
    }
    Ok(SweepTable {
        axis,
        values: values.to_vec(),
        schemes: base.schemes.clone(),
        nmse,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    /// `1 − E(sparse)/E(dense)`.
    pub savings: f64,
    /// Final nonzero fraction of the sparse scheme's transmitted vectors.
    pub nonzero_fraction: f64,
    /// Final NMSE of the sparse scheme minus the dense one, in dB.
    pub nmse_gap_db: f64,
}

/// Compare the communication energy of a dense and a sparse run.
pub fn energy_report(dense: &MetricLog, sparse: &MetricLog) -> Result<EnergyReport> {
    if dense.key != sparse.key || dense.rows.len() != sparse.rows.len() {
        return Err(Error::InvalidComparison(format!(
            "{} and {} logs come from different configurations",
            dense.scheme, sparse.scheme
        )));
    }
    let (Some(d), Some(s)) = (dense.final_row(), sparse.final_row()) else {
        return Err(Error::InvalidComparison("empty logs".into()));
    };
    let savings = if d.energy > 0.0 { 1.0 - s.energy / d.energy } else { 0.0 };
    Ok(EnergyReport {
        savings,
        nonzero_fraction: s.nonzero_fraction,
        nmse_gap_db: s.nmse_db - d.nmse_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SimConfig {
        SimConfig {
            n_agents: 6,
            iterations: 60,
            runs: 2,
            log_stride: 20,
            model: ModelConfig {
                features: 3,
                ..Default::default()
            },
            dataset: DatasetConfig {
                rows: 200,
                grid_per_axis: 4,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn scheme_names_parse() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert_eq!("ota-c".parse::<Scheme>().unwrap(), Scheme::OtaC);
        assert!("xyz".parse::<Scheme>().is_err());
    }

    #[test]
    fn nmse_cases() {
        let mut rng = SeedTree::new(3).stream(Stream::Verify, 0, 0);
        let dict = RffDictionary::new(&[200.0], 4, false, &mut rng).unwrap();
        let pts = lattice(3);
        let h_star = vec![0.3, -0.2, 0.5, 0.1];
        let truth: Vec<f64> = pts.iter().map(|p| dict.predict(&h_star, p)).collect();
        assert_eq!(compute_nmse(std::slice::from_ref(&h_star), &dict, &pts, &truth).unwrap(), NMSE_FLOOR_DB);
        assert!(matches!(
            compute_nmse(std::slice::from_ref(&h_star), &dict, &pts, &vec![0.5; pts.len()]),
            Err(Error::DegenerateField(_))
        ));
        // a 2-point grid: features (1, 0) and (0, 1), truth (1, 3); variance 1
        let grid = FeatureGrid {
            dim: 2,
            features: vec![1.0, 0.0, 0.0, 1.0],
            truth: vec![1.0, 3.0],
        };
        // predictions (2, 2): errors 1 and 1 → NMSE 1
        assert!((nmse_linear(&[vec![2.0, 2.0]], &grid).unwrap() - 1.0).abs() < 1e-15);
        // agents (0,0) → 10/2/1 = 5 and (1,3) → 0, mean 2.5
        let two = nmse_linear(&[vec![0.0, 0.0], vec![1.0, 3.0]], &grid).unwrap();
        assert!((two - 2.5).abs() < 1e-15);
    }

    #[test]
    fn lattice_points_are_cell_centers() {
        let l = lattice(2);
        assert_eq!(l.len(), 8);
        assert_eq!(l[0], [250.0, 250.0, 250.0]);
        assert_eq!(l[7], [750.0, 750.0, 750.0]);
    }

    #[test]
    fn simulation_is_deterministic_and_shaped() {
        let cfg = tiny();
        let a = run_simulation(&cfg).unwrap();
        let b = run_simulation(&cfg).unwrap();
        assert_eq!(a.nmse_csv(), b.nmse_csv());
        assert_eq!(a.logs.len(), 6);
        let csv = a.nmse_csv();
        assert!(csv.starts_with("Iter,OTA-CS,OTA-C,DBC,ANB,NOC,CEN\n"));
        assert_eq!(csv.lines().count(), 1 + 4);
        for l in &a.logs {
            assert!(l.rows.iter().all(|r| r.nmse_db.is_finite()));
            assert!(l.rows.windows(2).all(|w| w[0].iteration < w[1].iteration));
        }
        let noc = a.log(Scheme::Noc).unwrap();
        assert_eq!(noc.final_row().unwrap().energy, 0.0);
        assert!(a.log(Scheme::Dbc).unwrap().final_row().unwrap().channel_uses > 0.0);
    }

    #[test]
    fn observer_sees_every_iteration() {
        struct Count(Vec<u64>);
        impl Observer for Count {
            fn observe(&mut self, v: &IterationView) {
                self.0.push(v.iteration);
            }
        }
        let cfg = tiny();
        let p = Problem::build(&cfg, 0, false, None).unwrap();
        let mut c = Count(Vec::new());
        run_single(&cfg, Scheme::Cen, &p, 0, Some(&mut c)).unwrap();
        assert_eq!(c.0, (0..=60).collect::<Vec<_>>());
    }

    #[test]
    fn noc_equals_local_only() {
        // NOC is the local scheme without mixing, whatever β is
        let mut cfg = tiny();
        cfg.schemes = vec![Scheme::Noc];
        let p = Problem::build(&cfg, 0, false, None).unwrap();
        let a = run_single(&cfg, Scheme::Noc, &p, 0, None).unwrap();
        cfg.schedule.family = ScheduleFamily::SnrSweep;
        let b = run_single(&cfg, Scheme::Noc, &p, 0, None).unwrap();
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn energy_report_cases() {
        let mut cfg = tiny();
        cfg.schemes = vec![Scheme::OtaC, Scheme::OtaCs];
        let r = run_simulation(&cfg).unwrap();
        let rep = energy_report(r.log(Scheme::OtaC).unwrap(), r.log(Scheme::OtaCs).unwrap()).unwrap();
        assert!(rep.savings < 1.0);
        let mut other = r.log(Scheme::OtaCs).unwrap().clone();
        other.key.seed += 1;
        assert!(matches!(
            energy_report(r.log(Scheme::OtaC).unwrap(), &other),
            Err(Error::InvalidComparison(_))
        ));
        cfg.iterations = 0;
        let z = run_simulation(&cfg).unwrap();
        let rep = energy_report(z.log(Scheme::OtaC).unwrap(), z.log(Scheme::OtaCs).unwrap()).unwrap();
        assert_eq!(rep.savings, 0.0);
    }

    #[test]
    fn sweep_single_value_matches_run() {
        let mut cfg = tiny();
        cfg.schemes = vec![Scheme::OtaC, Scheme::Noc];
        let t = sweep(SweepAxis::NAgents, &[6.0], &cfg).unwrap();
        let r = run_simulation(&cfg).unwrap();
        assert_eq!(t.nmse[0], vec![r.final_nmse(Scheme::OtaC).unwrap(), r.final_nmse(Scheme::Noc).unwrap()]);
        assert!(t.to_csv().starts_with("N,OTA-C,NOC\n6,"));
        assert!(sweep(SweepAxis::Snr, &[], &cfg).is_err());
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut c = tiny();
        c.model.widths = vec![100.0];
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.schemes.clear();
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.model.mu = 2.0;
        assert!(c.validate().is_err());
    }
}
