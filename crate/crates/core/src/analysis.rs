//! Stacked consensus matrices built from OTA-C round traces and the checks
//! run on them: the random-consensus-matrix clauses, the zero-mean noise
//! conditions, the network-property identities, and dual-path replay.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::channel::{CircularGaussian, LinkGains, NoiseModel, TopologySnapshot};
use crate::error::{Error, Result};
use crate::otac::{consensus_update, run_vector_round, ProtocolParams, RoundContext, VectorRoundOutput};
use crate::rng::{SeedTree, Stream};

/// One realization of `P`, its diagonal noise companion `W` and the offset `n`
/// such that the mixed state is `(1 − β)λ + β(Pλ + Wλ + n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMatrixSample {
    pub n_agents: usize,
    pub param_dim: usize,
    pub p: DMatrix<f64>,
    /// Diagonal of `W`.
    pub w: DVector<f64>,
    pub noise: DVector<f64>,
}

/// Assemble `(P, W, n)` from a traced round. Agents that did not receive keep
/// identity rows.
pub fn build_matrix_sample(
    n_agents: usize,
    param_dim: usize,
    round: &VectorRoundOutput,
    gamma: f64,
) -> Result<ConsensusMatrixSample> {
    let mn = n_agents * param_dim;
    let mut p = DMatrix::<f64>::identity(mn, mn);
    let mut w = DVector::<f64>::zeros(mn);
    let mut noise = DVector::<f64>::zeros(mn);
    for out in &round.receivers {
        let tr = out
            .trace
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("receiver {} has no trace", out.receiver)))?;
        if out.receiver >= n_agents || tr.nu.len() != tr.senders.len() {
            return Err(Error::invalid("trace does not match dimensions"));
        }
        let r = out.receiver;
        for m in 0..param_dim {
            let row = r * param_dim + m;
            let mut total = 0.0;
            for (link, &j) in tr.senders.iter().enumerate() {
                let nu = *tr.nu[link]
                    .get(m)
                    .ok_or_else(|| Error::invalid("trace weight vector too short"))?;
                p[(row, j * param_dim + m)] += gamma * nu;
                total += nu;
            }
            p[(row, row)] -= gamma * total;
            w[row] = -gamma * tr.eta_prime[m];
            noise[row] = gamma * tr.eta[m];
        }
    }
    Ok(ConsensusMatrixSample {
        n_agents,
        param_dim,
        p,
        w,
        noise,
    })
}

impl ConsensusMatrixSample {
    /// `Pλ + Wλ + n`.
    pub fn apply(&self, lambda: &DVector<f64>) -> DVector<f64> {
        &self.p * lambda + self.w.component_mul(lambda) + &self.noise
    }

    pub fn max_row_sum_error(&self) -> f64 {
        (0..self.p.nrows())
            .map(|r| (self.p.row(r).sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Running sums over matrix samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMatrixStats {
    pub n_agents: usize,
    pub param_dim: usize,
    pub sample_count: usize,
    sum_p: DMatrix<f64>,
    sum_ptp: DMatrix<f64>,
    pub max_row_sum_error: f64,
    pub max_consensus_error: f64,
}

impl ConsensusMatrixStats {
    pub fn new(n_agents: usize, param_dim: usize) -> Self {
        let mn = n_agents * param_dim;
        Self {
            n_agents,
            param_dim,
            sample_count: 0,
            sum_p: DMatrix::zeros(mn, mn),
            sum_ptp: DMatrix::zeros(mn, mn),
            max_row_sum_error: 0.0,
            max_consensus_error: 0.0,
        }
    }

    /// Stats of a deterministic matrix seen once.
    pub fn from_matrix(n_agents: usize, param_dim: usize, p: DMatrix<f64>) -> Self {
        let mut s = Self::new(n_agents, param_dim);
        s.push_matrix(&p);
        s
    }

    pub fn push(&mut self, sample: &ConsensusMatrixSample) {
        self.push_matrix(&sample.p);
    }

    fn push_matrix(&mut self, p: &DMatrix<f64>) {
        let basis = consensus_basis(self.n_agents, self.param_dim);
        let err = (p * &basis - &basis).abs().max();
        self.max_consensus_error = self.max_consensus_error.max(err);
        let rows = (0..p.nrows())
            .map(|r| (p.row(r).sum() - 1.0).abs())
            .fold(0.0, f64::max);
        self.max_row_sum_error = self.max_row_sum_error.max(rows);
        self.sum_p += p;
        self.sum_ptp += p.transpose() * p;
        self.sample_count += 1;
    }

    pub fn merge(&mut self, other: &ConsensusMatrixStats) {
        self.sum_p += &other.sum_p;
        self.sum_ptp += &other.sum_ptp;
        self.sample_count += other.sample_count;
        self.max_row_sum_error = self.max_row_sum_error.max(other.max_row_sum_error);
        self.max_consensus_error = self.max_consensus_error.max(other.max_consensus_error);
    }

    pub fn mean_p(&self) -> DMatrix<f64> {
        &self.sum_p / self.sample_count.max(1) as f64
    }

    pub fn mean_ptp(&self) -> DMatrix<f64> {
        &self.sum_ptp / self.sample_count.max(1) as f64
    }
}

/// Columns `(1_N ⊗ e_m)/√N`, an orthonormal basis of the consensus subspace.
pub fn consensus_basis(n_agents: usize, param_dim: usize) -> DMatrix<f64> {
    let mn = n_agents * param_dim;
    let s = 1.0 / (n_agents as f64).sqrt();
    DMatrix::from_fn(mn, param_dim, |row, col| if row % param_dim == col { s } else { 0.0 })
}

/// Dense projector `J = UUᵀ`.
pub fn consensus_projector(n_agents: usize, param_dim: usize) -> DMatrix<f64> {
    let u = consensus_basis(n_agents, param_dim);
    &u * u.transpose()
}

/// A list of `key: value` lines with an overall verdict.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub title: String,
    pub entries: Vec<(String, String)>,
    pub passed: bool,
}

impl Report {
    pub(crate) fn new(title: &str) -> Self {
        Self {
            title: title.to_string(),
            entries: Vec::new(),
            passed: true,
        }
    }

    pub(crate) fn value(&mut self, key: &str, v: impl fmt::Display) {
        self.entries.push((key.to_string(), v.to_string()));
    }

    pub(crate) fn clause(&mut self, key: &str, ok: bool) {
        self.passed &= ok;
        self.value(key, if ok { "pass" } else { "fail" });
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "suite: {}", self.title)?;
        for (k, v) in &self.entries {
            writeln!(f, "{k}: {v}")?;
        }
        writeln!(f, "result: {}", if self.passed { "pass" } else { "fail" })
    }
}

/// Random-consensus-matrix clauses evaluated on the empirical mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMatrixReport {
    /// `1 − max_{x ∈ C⊥, ‖x‖=1} xᵀP̄x`: the spectral gap on `C⊥`.
    pub epsilon_hat: f64,
    /// `1 − min_{x ∈ C⊥, ‖x‖=1} xᵀP̄x`.
    pub epsilon_min_form: f64,
    pub delta_hat: f64,
    pub spectral_radius: f64,
    pub spectral_norm: f64,
    pub min_entry: f64,
    pub asymmetry: f64,
    pub clause_i: bool,
    pub clause_ii: bool,
    pub clause_iii: bool,
    pub clause_iv: bool,
    pub clause_v: bool,
    /// Eigenvalues of the symmetric part restricted to `C⊥`, ascending.
    pub complement_spectrum: Vec<f64>,
    pub report: Report,
}

/// Eigenpairs of `(I − J) S (I − J)`, `S = (P̄ + P̄ᵀ)/2`, with the `M` directions
/// most aligned with the consensus subspace removed.
fn complement_eigen(mean_p: &DMatrix<f64>, n: usize, m: usize) -> Vec<(f64, DVector<f64>)> {
    let mn = n * m;
    let j = consensus_projector(n, m);
    let q = DMatrix::<f64>::identity(mn, mn) - &j;
    let s = (mean_p + mean_p.transpose()) * 0.5;
    let restricted = &q * s * &q;
    let eig = SymmetricEigen::new(restricted);
    let mut pairs: Vec<(f64, f64, DVector<f64>)> = (0..mn)
        .map(|k| {
            let v = eig.eigenvectors.column(k).into_owned();
            let align = (&j * &v).norm();
            (align, eig.eigenvalues[k], v)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut rest: Vec<(f64, DVector<f64>)> = pairs.into_iter().skip(m).map(|(_, l, v)| (l, v)).collect();
    rest.sort_by(|a, b| a.0.total_cmp(&b.0));
    rest
}

/// Check the random-consensus-matrix clauses on accumulated statistics.
/// `tol` applies to Monte-Carlo quantities, `algebraic_tol` to per-sample
/// identities.
pub fn check_consensus_matrix(stats: &ConsensusMatrixStats, tol: f64, algebraic_tol: f64) -> Result<ConsensusMatrixReport> {
    let (n, m) = (stats.n_agents, stats.param_dim);
    if stats.sample_count == 0 {
        return Err(Error::invalid("no matrix samples"));
    }
    if n * m > 200 {
        return Err(Error::invalid("dense verification is limited to MN ≤ 200"));
    }
    let mean_p = stats.mean_p();
    let mut report = Report::new("consensus-matrix");
    report.value("samples", stats.sample_count);
    report.value("n_agents", n);
    report.value("param_dim", m);

    let basis = consensus_basis(n, m);
    let fix_err = (&mean_p * &basis - &basis).abs().max();
    let clause_i = stats.max_consensus_error <= algebraic_tol && fix_err <= algebraic_tol;
    report.value("max_row_sum_error", format!("{:.3e}", stats.max_row_sum_error));
    report.value("max_fixed_point_error", format!("{:.3e}", stats.max_consensus_error.max(fix_err)));
    report.clause("clause_i", clause_i);

    let min_entry = mean_p.min();
    let clause_ii = min_entry >= -tol;
    report.value("min_entry", format!("{min_entry:.6e}"));
    report.clause("clause_ii", clause_ii);

    let asymmetry = (&mean_p - mean_p.transpose()).abs().max();
    report.value("asymmetry", format!("{asymmetry:.3e}"));
    if asymmetry > tol {
        report.value("note", "mean matrix not symmetric within tolerance; radiality uses singular values");
    }

    let spectrum = complement_eigen(&mean_p, n, m);
    let complement: Vec<f64> = spectrum.iter().map(|(l, _)| *l).collect();
    let (epsilon_hat, epsilon_min_form) = if complement.is_empty() {
        (0.0, 0.0)
    } else {
        (1.0 - complement[complement.len() - 1], 1.0 - complement[0])
    };
    // a gap below the algebraic tolerance is rounding noise of an exact zero
    let epsilon_hat = if epsilon_hat.abs() <= algebraic_tol { 0.0 } else { epsilon_hat };
    let clause_iii = epsilon_hat > tol && epsilon_hat <= 1.0 + tol;
    report.value("epsilon_hat", format!("{epsilon_hat:.6e}"));
    report.value("epsilon_min_form", format!("{epsilon_min_form:.6e}"));
    report.clause("clause_iii", clause_iii);

    let spectral_norm = mean_p.clone().svd(false, false).singular_values.max();
    let spectral_radius = mean_p
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max);
    let clause_iv = (spectral_radius - spectral_norm).abs() <= tol;
    report.value("spectral_radius", format!("{spectral_radius:.6e}"));
    report.value("spectral_norm", format!("{spectral_norm:.6e}"));
    report.clause("clause_iv", clause_iv);

    let ptp_norm = SymmetricEigen::new(stats.mean_ptp())
        .eigenvalues
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let delta_hat = ptp_norm - 1.0;
    let clause_v = delta_hat.is_finite() && delta_hat >= -algebraic_tol.max(1e-9);
    report.value("delta_hat", format!("{delta_hat:.6e}"));
    report.clause("clause_v", clause_v);

    Ok(ConsensusMatrixReport {
        epsilon_hat,
        epsilon_min_form,
        delta_hat,
        spectral_radius,
        spectral_norm,
        min_entry,
        asymmetry,
        clause_i,
        clause_ii,
        clause_iii,
        clause_iv,
        clause_v,
        complement_spectrum: complement,
        report,
    })
}

impl ConsensusMatrixReport {
    /// `index,eigenvalue` rows of the restricted spectrum.
    pub fn spectrum_csv(&self) -> String {
        let mut s = String::from("index,eigenvalue\n");
        for (k, l) in self.complement_spectrum.iter().enumerate() {
            s.push_str(&format!("{k},{l}\n"));
        }
        s
    }
}

/// Identities of the expected network: `‖P̄‖₂ = 1`, `P̄J = J`, `L̄J = 0` with
/// `L̄ = I − P̄`, and `vᵀL̄v ≥ ε₀‖(I − J)v‖²` on random test vectors.
pub fn check_network_props(stats: &ConsensusMatrixStats, tol: f64, seed: u64) -> Result<Report> {
    let cm = check_consensus_matrix(stats, tol, 1e-9)?;
    let (n, m) = (stats.n_agents, stats.param_dim);
    let mn = n * m;
    let mean_p = stats.mean_p();
    let j = consensus_projector(n, m);
    let q = DMatrix::<f64>::identity(mn, mn) - &j;
    let l = DMatrix::<f64>::identity(mn, mn) - &mean_p;
    let mut report = Report::new("network-properties");
    report.value("spectral_norm", format!("{:.6e}", cm.spectral_norm));
    report.clause("unit_spectral_norm", (cm.spectral_norm - 1.0).abs() <= tol);
    let pj = (&mean_p * &j - &j).abs().max();
    report.value("pj_minus_j", format!("{pj:.3e}"));
    report.clause("p_fixes_j", pj <= tol);
    let lj = (&l * &j).abs().max();
    report.value("lj", format!("{lj:.3e}"));
    report.clause("l_annihilates_j", lj <= tol);

    let eps0 = cm.epsilon_hat;
    let mut rng = SeedTree::new(seed).stream(Stream::Verify, 7, 0);
    let mut vectors: Vec<DVector<f64>> = (0..100)
        .map(|_| DVector::from_fn(mn, |_, _| rng.random_range(-1.0..1.0)))
        .collect();
    // the least-contracted direction is the hardest case for the bound
    let spectrum = complement_eigen(&mean_p, n, m);
    if let Some((_, v)) = spectrum.last() {
        vectors.push(v.clone());
    }
    let mut worst = f64::INFINITY;
    for v in &vectors {
        let lhs = v.dot(&(&l * v));
        let rhs = (&q * v).norm_squared();
        if rhs > 1e-15 {
            worst = worst.min(lhs / rhs);
        }
    }
    report.value("epsilon0", format!("{eps0:.6e}"));
    report.value("min_quadratic_ratio", format!("{worst:.6e}"));
    report.clause("quadratic_bound", eps0 > tol && worst >= eps0 - tol);
    Ok(report)
}

/// Topology and channel used by the verification suites.
#[derive(Debug, Clone)]
pub struct VerificationSetup {
    pub n_agents: usize,
    pub param_dim: usize,
    pub b: usize,
    pub gains: LinkGains,
    pub noise_power: f64,
    pub peak_power: f64,
    pub seed: u64,
}

impl VerificationSetup {
    /// `n` agents at seeded random positions in the domain under Friis gains,
    /// with noise set by `snr_db` at 500 m.
    pub fn friis(n: usize, m: usize, b: usize, snr_db: f64, seed: u64) -> Result<Self> {
        let mut rng = SeedTree::new(seed).stream(Stream::Verify, 100, 0);
        let positions: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                [
                    rng.random_range(0.0..1000.0),
                    rng.random_range(0.0..1000.0),
                    rng.random_range(0.0..1000.0),
                ]
            })
            .collect();
        let gains = LinkGains::friis(&positions, 3e9)?;
        let noise = crate::channel::noise_from_snr(snr_db, 500.0, 3e9, 1e-3)?;
        Ok(Self {
            n_agents: n,
            param_dim: m,
            b,
            gains,
            noise_power: noise.power(),
            peak_power: 1e-3,
            seed,
        })
    }

    /// Unit gains split into two groups with no links between them.
    pub fn disconnected(n: usize, m: usize, b: usize, noise_power: f64, seed: u64) -> Result<Self> {
        let half = n / 2;
        let mut g = vec![0.0; n * n];
        for j in 0..n {
            for r in 0..n {
                if j != r && ((j < half) == (r < half)) {
                    g[j * n + r] = 1.0;
                }
            }
        }
        Ok(Self {
            n_agents: n,
            param_dim: m,
            b,
            gains: LinkGains::from_matrix(n, g)?,
            noise_power,
            peak_power: 1.0,
            seed,
        })
    }

    /// `γ` admissible for every role pattern: every other agent counted.
    pub fn gamma(&self) -> Result<f64> {
        let all: Vec<usize> = (0..self.n_agents).collect();
        let w: Vec<f64> = all
            .iter()
            .map(|&r| crate::otac::expected_neighbor_weights(&all, &[r], &self.gains, self.peak_power)[0])
            .collect();
        crate::otac::gamma_bound(&w)
    }

    fn params(&self) -> Result<ProtocolParams> {
        ProtocolParams::new(self.b, -1.0, 1.0, self.peak_power)
    }

    /// One traced round with fresh half-duplex roles for sample `index`.
    pub fn sample_round(&self, lambdas: &[Vec<f64>], index: u64) -> Result<(TopologySnapshot, VectorRoundOutput)> {
        let seeds = SeedTree::new(self.seed);
        let mut topo = TopologySnapshot::new(vec![[0.0; 3]; self.n_agents]);
        topo.flip_roles(&mut seeds.stream(Stream::Roles, index, 0));
        let ctx = RoundContext {
            params: self.params()?,
            gains: &self.gains,
            noise: NoiseModel::new(self.noise_power)?,
            assumed_m_w: self.noise_power,
            fading: &CircularGaussian,
            seeds,
            iteration: index,
            coherent: true,
            skip_zeros: false,
            trace: true,
        };
        let out = run_vector_round(&topo.transmitters(), &topo.receivers(), lambdas, &ctx)?;
        Ok((topo, out))
    }

    pub fn random_inputs(&self) -> Vec<Vec<f64>> {
        let mut rng = SeedTree::new(self.seed).stream(Stream::Verify, 101, 0);
        (0..self.n_agents)
            .map(|_| (0..self.param_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    /// Matrix statistics over `samples` independent rounds.
    pub fn collect_stats(&self, samples: usize) -> Result<ConsensusMatrixStats> {
        let gamma = self.gamma()?;
        let lambdas = self.random_inputs();
        let chunks = 32usize.min(samples.max(1));
        let per = samples.div_ceil(chunks);
        let parts: Vec<Result<ConsensusMatrixStats>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut st = ConsensusMatrixStats::new(self.n_agents, self.param_dim);
                let lo = c * per;
                let hi = ((c + 1) * per).min(samples);
                for idx in lo..hi {
                    let (_, out) = self.sample_round(&lambdas, idx as u64)?;
                    st.push(&build_matrix_sample(self.n_agents, self.param_dim, &out, gamma)?);
                }
                Ok(st)
            })
            .collect();
        let mut total = ConsensusMatrixStats::new(self.n_agents, self.param_dim);
        for p in parts {
            total.merge(&p?);
        }
        Ok(total)
    }
}

/// Two-sided normal quantile that keeps the family-wise false-alarm rate of
/// `tests` simultaneous checks at the single-test 3-sigma level.
pub fn bonferroni_z(tests: usize) -> f64 {
    let alpha = 2.0 * (1.0 - Normal::standard().cdf(3.0));
    Normal::standard().inverse_cdf(1.0 - alpha / (2.0 * tests.max(1) as f64))
}

#[derive(Debug, Clone, Default)]
struct Moments {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self {
            sum: vec![0.0; len],
            sum_sq: vec![0.0; len],
        }
    }

    fn push(&mut self, values: impl Iterator<Item = f64>) {
        for (k, v) in values.enumerate() {
            self.sum[k] += v;
            self.sum_sq[k] += v * v;
        }
    }

    fn merge(&mut self, other: &Moments) {
        for k in 0..self.sum.len() {
            self.sum[k] += other.sum[k];
            self.sum_sq[k] += other.sum_sq[k];
        }
    }

    /// `(worst |mean|/se, tested entries, max |mean|)`, skipping entries that are
    /// identically zero.
    fn worst_z(&self, count: f64) -> (f64, usize, f64) {
        let mut worst: f64 = 0.0;
        let mut tested = 0;
        let mut max_mean: f64 = 0.0;
        for k in 0..self.sum.len() {
            let mean = self.sum[k] / count;
            let var = (self.sum_sq[k] / count - mean * mean).max(0.0) * count / (count - 1.0);
            max_mean = max_mean.max(mean.abs());
            if var == 0.0 {
                if mean != 0.0 {
                    worst = f64::INFINITY;
                }
                continue;
            }
            tested += 1;
            worst = worst.max(mean.abs() / (var / count).sqrt());
        }
        (worst, tested, max_mean)
    }
}

/// Zero-mean and bounded-moment conditions on `W` and `n`, estimated from
/// `samples` independent traced rounds.
pub fn check_noise_conditions(setup: &VerificationSetup, samples: usize) -> Result<Report> {
    if samples < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let mn = setup.n_agents * setup.param_dim;
    let gamma = setup.gamma()?;
    let lambdas = setup.random_inputs();
    let chunks = 32usize.min(samples);
    let per = samples.div_ceil(chunks);
    #[derive(Default)]
    struct Acc {
        w: Moments,
        n: Moments,
        ptw: Moments,
        ptn: Moments,
        wtw: Vec<f64>,
        ntn: f64,
        wtn: Vec<f64>,
        noiseless: bool,
    }
    let parts: Vec<Result<Acc>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut a = Acc {
                w: Moments::new(mn),
                n: Moments::new(mn),
                ptw: Moments::new(mn * mn),
                ptn: Moments::new(mn),
                wtw: vec![0.0; mn],
                ntn: 0.0,
                wtn: vec![0.0; mn],
                noiseless: true,
            };
            for idx in (c * per)..((c + 1) * per).min(samples) {
                let (_, out) = setup.sample_round(&lambdas, idx as u64)?;
                let s = build_matrix_sample(setup.n_agents, setup.param_dim, &out, gamma)?;
                a.noiseless &= s.w.iter().all(|v| *v == 0.0) && s.noise.iter().all(|v| *v == 0.0);
                a.w.push(s.w.iter().copied());
                a.n.push(s.noise.iter().copied());
                // (PᵀW)_{ab} = P_{ba} w_b
                let ptw = DMatrix::from_fn(mn, mn, |r, c| s.p[(c, r)] * s.w[c]);
                a.ptw.push(ptw.iter().copied());
                a.ptn.push((s.p.transpose() * &s.noise).iter().copied());
                for k in 0..mn {
                    a.wtw[k] += s.w[k] * s.w[k];
                    a.wtn[k] += s.w[k] * s.noise[k];
                }
                a.ntn += s.noise.norm_squared();
            }
            Ok(a)
        })
        .collect();
    let mut tot: Option<Acc> = None;
    for p in parts {
        let p = p?;
        match tot.as_mut() {
            None => tot = Some(p),
            Some(t) => {
                t.w.merge(&p.w);
                t.n.merge(&p.n);
                t.ptw.merge(&p.ptw);
                t.ptn.merge(&p.ptn);
                for k in 0..mn {
                    t.wtw[k] += p.wtw[k];
                    t.wtn[k] += p.wtn[k];
                }
                t.ntn += p.ntn;
                t.noiseless &= p.noiseless;
            }
        }
    }
    let t = tot.expect("at least one chunk");
    let count = samples as f64;
    let tests = [("mean_w", &t.w), ("mean_n", &t.n), ("mean_ptw", &t.ptw), ("mean_ptn", &t.ptn)];
    let stats: Vec<(&str, (f64, usize, f64))> = tests.iter().map(|(k, m)| (*k, m.worst_z(count))).collect();
    let total_tests: usize = stats.iter().map(|(_, s)| s.1).sum();
    let z = bonferroni_z(total_tests);
    let mut report = Report::new("noise-conditions");
    report.value("samples", samples);
    report.value("noise_power", format!("{:.6e}", setup.noise_power));
    report.value("gamma", format!("{gamma:.6e}"));
    report.value("tested_entries", total_tests);
    report.value("z_threshold", format!("{z:.4}"));
    report.value("noiseless", t.noiseless);
    for (key, (worst, _, max_mean)) in &stats {
        report.value(&format!("{key}_max_abs"), format!("{max_mean:.3e}"));
        report.value(&format!("{key}_max_z"), format!("{worst:.3}"));
        report.clause(&format!("{key}_zero"), *worst <= z);
    }
    let a0 = t.wtw.iter().fold(0.0f64, |a, v| a.max(v / count));
    let b0 = t.ntn / count;
    let c0 = t.wtn.iter().map(|v| (v / count).powi(2)).sum::<f64>().sqrt();
    report.value("a0", format!("{a0:.6e}"));
    report.value("b0", format!("{b0:.6e}"));
    report.value("c0", format!("{c0:.6e}"));
    report.clause("moments_finite", a0.is_finite() && b0.is_finite() && c0.is_finite());
    Ok(report)
}

/// Replay one traced round through the elementwise update and through the
/// stacked matrix form; returns the max absolute difference.
pub fn matrix_form_equivalence(
    lambdas: &[Vec<f64>],
    round: &VectorRoundOutput,
    beta: f64,
    gamma: f64,
) -> Result<f64> {
    let n = lambdas.len();
    let m = lambdas.first().map(Vec::len).ok_or_else(|| Error::invalid("no inputs"))?;
    let mut direct: Vec<Vec<f64>> = lambdas.to_vec();
    for out in &round.receivers {
        direct[out.receiver] = consensus_update(&lambdas[out.receiver], &out.v_hat, &out.v_prime_hat, beta, gamma)?;
    }
    let sample = build_matrix_sample(n, m, round, gamma)?;
    let flat = DVector::from_iterator(n * m, lambdas.iter().flatten().copied());
    let k = sample.apply(&flat);
    let stacked = &flat * (1.0 - beta) + k * beta;
    let mut diff: f64 = 0.0;
    for (a, row) in direct.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            diff = diff.max((v - stacked[a * m + c]).abs());
        }
    }
    Ok(diff)
}

/// Max difference of the two update paths over `traces` random rounds on unit
/// gains, with random inputs, `β` and noise.
pub fn equivalence_suite(n: usize, m: usize, b: usize, traces: usize, seed: u64) -> Result<Report> {
    let mut rng = SeedTree::new(seed).stream(Stream::Verify, 200, 0);
    let mut worst: f64 = 0.0;
    for t in 0..traces {
        let mut setup = VerificationSetup::disconnected(n, m, b, rng.random_range(0.0..0.5), seed ^ t as u64)?;
        setup.gains = LinkGains::uniform(n, rng.random_range(0.2..2.0));
        let lambdas: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let (_, round) = setup.sample_round(&lambdas, t as u64)?;
        let gamma = setup.gamma()?;
        let beta = rng.random_range(0.0..=1.0);
        worst = worst.max(matrix_form_equivalence(&lambdas, &round, beta, gamma)?);
    }
    let mut report = Report::new("equivalence");
    report.value("traces", traces);
    report.value("max_abs_diff", format!("{worst:.3e}"));
    report.clause("agree", worst <= 1e-12);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_agent(a: f64) -> ConsensusMatrixStats {
        let p = DMatrix::from_row_slice(2, 2, &[1.0 - a, a, a, 1.0 - a]);
        ConsensusMatrixStats::from_matrix(2, 1, p)
    }

    #[test]
    fn identity_has_no_gap() {
        let s = ConsensusMatrixStats::from_matrix(3, 2, DMatrix::identity(6, 6));
        let r = check_consensus_matrix(&s, 1e-9, 1e-12).unwrap();
        assert!(r.epsilon_hat.abs() < 1e-12);
        assert!(!r.clause_iii);
        assert!(r.clause_i && r.clause_ii && r.clause_iv && r.clause_v);
    }

    #[test]
    fn two_agent_gap_is_2a() {
        for a in [0.05, 0.2, 0.5] {
            let r = check_consensus_matrix(&two_agent(a), 1e-9, 1e-12).unwrap();
            assert!((r.epsilon_hat - 2.0 * a).abs() < 1e-12);
            assert!((r.epsilon_min_form - 2.0 * a).abs() < 1e-12);
            assert!(r.clause_iii);
        }
    }

    #[test]
    fn deterministic_doubly_stochastic_delta() {
        // a symmetric doubly stochastic 3×3 P: E[PᵀP] = P², ‖P²‖₂ = 1
        let p = DMatrix::from_row_slice(3, 3, &[0.5, 0.25, 0.25, 0.25, 0.5, 0.25, 0.25, 0.25, 0.5]);
        let oracle = (p.transpose() * &p).svd(false, false).singular_values.max() - 1.0;
        let r = check_consensus_matrix(&ConsensusMatrixStats::from_matrix(3, 1, p), 1e-9, 1e-12).unwrap();
        assert!((r.delta_hat - oracle).abs() < 1e-12);
        assert!(r.delta_hat.abs() < 1e-12);
    }

    #[test]
    fn isolated_and_two_agent_samples() {
        let setup = VerificationSetup::disconnected(2, 1, 1, 0.0, 1).unwrap();
        let round = VectorRoundOutput {
            receivers: vec![],
            ledger: Default::default(),
        };
        let s = build_matrix_sample(2, 1, &round, 1.0).unwrap();
        assert_eq!(s.p, DMatrix::identity(2, 2));
        // one link j=0 → r=1 with weight ν
        let (nu, g) = (0.7, 0.5);
        let round = VectorRoundOutput {
            receivers: vec![crate::otac::ReceiverOutput {
                receiver: 1,
                v_hat: vec![0.0],
                v_prime_hat: vec![nu],
                trace: Some(crate::otac::ReceiverTrace {
                    senders: vec![0],
                    nu: vec![vec![nu]],
                    eta: vec![0.0],
                    eta_prime: vec![0.0],
                }),
            }],
            ledger: Default::default(),
        };
        let s = build_matrix_sample(2, 1, &round, g).unwrap();
        assert_eq!(s.p, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, g * nu, 1.0 - g * nu]));
        let _ = setup;
    }

    #[test]
    fn random_traces_are_row_stochastic() {
        let setup = VerificationSetup::friis(5, 2, 2, 0.0, 4).unwrap();
        let lambdas = setup.random_inputs();
        let gamma = setup.gamma().unwrap();
        for idx in 0..20 {
            let (_, out) = setup.sample_round(&lambdas, idx).unwrap();
            let s = build_matrix_sample(5, 2, &out, gamma).unwrap();
            assert!(s.max_row_sum_error() < 1e-12);
        }
    }

    #[test]
    fn friis_topology_passes_small_sample() {
        let setup = VerificationSetup::friis(5, 2, 2, 0.0, 5).unwrap();
        let stats = setup.collect_stats(2000).unwrap();
        let r = check_consensus_matrix(&stats, 1e-2, 1e-12).unwrap();
        assert!(r.clause_i && r.clause_ii && r.clause_iv && r.clause_v, "{}", r.report);
        assert!(r.epsilon_hat > 0.0);
        let net = check_network_props(&stats, 2e-2, 1).unwrap();
        assert!(net.passed, "{net}");
    }

    #[test]
    fn disconnected_topology_reports_no_gap() {
        let setup = VerificationSetup::disconnected(5, 2, 2, 0.1, 6).unwrap();
        let stats = setup.collect_stats(500).unwrap();
        let r = check_consensus_matrix(&stats, 1e-2, 1e-12).unwrap();
        assert!(r.epsilon_hat <= 1e-2, "{}", r.report);
        assert!(!r.clause_iii);
        let net = check_network_props(&stats, 1e-2, 1).unwrap();
        assert_eq!(net.get("quadratic_bound"), Some("fail"));
    }

    #[test]
    fn epsilon_invariant_to_m() {
        let mut eps = Vec::new();
        for m in [1, 2] {
            let mut setup = VerificationSetup::friis(3, m, 1, 0.0, 8).unwrap();
            setup.noise_power = 0.0;
            let stats = setup.collect_stats(3000).unwrap();
            eps.push(check_consensus_matrix(&stats, 1e-2, 1e-12).unwrap().epsilon_hat);
        }
        // same roles and fading streams per sample, coherent across m
        assert!((eps[0] - eps[1]).abs() < 1e-9, "{eps:?}");
    }

    #[test]
    fn noiseless_single_neighbor_has_no_noise_terms() {
        let mut setup = VerificationSetup::disconnected(2, 2, 2, 0.0, 9).unwrap();
        setup.gains = LinkGains::uniform(2, 1.0);
        let lambdas = setup.random_inputs();
        for idx in 0..20 {
            let (_, out) = setup.sample_round(&lambdas, idx).unwrap();
            let s = build_matrix_sample(2, 2, &out, 1.0).unwrap();
            assert!(s.w.iter().all(|v| v.abs() < 1e-12));
            assert!(s.noise.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn noise_conditions_small_and_b0_monotone() {
        let mut setup = VerificationSetup::friis(4, 2, 2, 0.0, 10).unwrap();
        let low = check_noise_conditions(&setup, 2000).unwrap();
        assert!(low.passed, "{low}");
        setup.noise_power *= 10.0;
        let high = check_noise_conditions(&setup, 2000).unwrap();
        let b = |r: &Report| r.get("b0").unwrap().parse::<f64>().unwrap();
        assert!(b(&high) > b(&low));
    }

    #[test]
    fn equivalence_small() {
        let r = equivalence_suite(3, 2, 2, 20, 3).unwrap();
        assert!(r.passed, "{r}");
    }

    #[test]
    fn bonferroni_reduces_to_three_sigma() {
        assert!((bonferroni_z(1) - 3.0).abs() < 1e-6);
        assert!(bonferroni_z(100) > 3.0);
    }
}
