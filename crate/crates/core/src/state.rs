//! Stacked network state and the consensus-subspace projector.

use crate::error::{Error, Result};

/// Number of agents `N` and per-agent parameter length `M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dimensions {
    n_agents: usize,
    param_dim: usize,
}

impl Dimensions {
    pub fn new(n_agents: usize, param_dim: usize) -> Result<Self> {
        if n_agents == 0 || param_dim == 0 {
            return Err(Error::invalid(format!(
                "dimensions must be positive (N={n_agents}, M={param_dim})"
            )));
        }
        Ok(Self {
            n_agents,
            param_dim,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    /// Length `M·N` of the stacked vector.
    pub fn total(&self) -> usize {
        self.n_agents * self.param_dim
    }
}

/// Network-wide estimate `ψ = [h_1; …; h_N]`, stored flat in agent-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedState {
    dims: Dimensions,
    data: Vec<f64>,
}

impl StackedState {
    pub fn zeros(dims: Dimensions) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.total()],
        }
    }

    pub fn from_flat(dims: Dimensions, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.total() {
            return Err(Error::invalid(format!(
                "flat state has length {}, expected {}",
                data.len(),
                dims.total()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_blocks<B: AsRef<[f64]>>(blocks: &[B]) -> Result<Self> {
        let m = blocks
            .first()
            .map(|b| b.as_ref().len())
            .ok_or_else(|| Error::invalid("no agent blocks"))?;
        let dims = Dimensions::new(blocks.len(), m)?;
        let mut data = Vec::with_capacity(dims.total());
        for (k, b) in blocks.iter().enumerate() {
            let b = b.as_ref();
            if b.len() != m {
                return Err(Error::invalid(format!(
                    "block {k} has length {}, expected {m}",
                    b.len()
                )));
            }
            data.extend_from_slice(b);
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> Dimensions {
        self.dims
    }

    pub fn block(&self, k: usize) -> &[f64] {
        let m = self.dims.param_dim;
        &self.data[k * m..(k + 1) * m]
    }

    pub fn block_mut(&mut self, k: usize) -> &mut [f64] {
        let m = self.dims.param_dim;
        &mut self.data[k * m..(k + 1) * m]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dims.param_dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn to_blocks(&self) -> Vec<Vec<f64>> {
        self.blocks().map(<[f64]>::to_vec).collect()
    }
}

/// Orthogonal projector onto the consensus subspace `C = {h_1 = … = h_N}`.
///
/// Applied matrix-free: the image of `ψ` repeats the block mean in every block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConsensusProjector {
    dims: Dimensions,
}

impl ConsensusProjector {
    pub fn new(dims: Dimensions) -> Self {
        Self { dims }
    }

    fn check(&self, psi: &StackedState) -> Result<()> {
        if psi.dims != self.dims {
            return Err(Error::invalid(format!(
                "state dims {:?} do not match projector dims {:?}",
                psi.dims, self.dims
            )));
        }
        Ok(())
    }

    /// Arithmetic mean of the agent blocks.
    pub fn block_mean(&self, psi: &StackedState) -> Result<Vec<f64>> {
        self.check(psi)?;
        let mut mean = vec![0.0; self.dims.param_dim];
        for b in psi.blocks() {
            for (acc, x) in mean.iter_mut().zip(b) {
                *acc += x;
            }
        }
        let n = self.dims.n_agents as f64;
        mean.iter_mut().for_each(|x| *x /= n);
        Ok(mean)
    }

    pub fn project(&self, psi: &StackedState) -> Result<StackedState> {
        let mean = self.block_mean(psi)?;
        let mut data = Vec::with_capacity(self.dims.total());
        for _ in 0..self.dims.n_agents {
            data.extend_from_slice(&mean);
        }
        Ok(StackedState {
            dims: self.dims,
            data,
        })
    }

    /// `‖(I − J)ψ‖`.
    pub fn residual(&self, psi: &StackedState) -> Result<f64> {
        let mean = self.block_mean(psi)?;
        let sq: f64 = psi
            .blocks()
            .flat_map(|b| b.iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)))
            .sum();
        Ok(sq.sqrt())
    }
}

pub fn project_consensus(psi: &StackedState) -> Result<StackedState> {
    ConsensusProjector::new(psi.dims()).project(psi)
}

pub fn consensus_residual(psi: &StackedState) -> Result<f64> {
    ConsensusProjector::new(psi.dims()).residual(psi)
}

/// Consensus residual of a per-agent block list.
pub fn residual_of_blocks<B: AsRef<[f64]>>(blocks: &[B]) -> Result<f64> {
    consensus_residual(&StackedState::from_blocks(blocks)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Dense `J = U Uᵀ` with `u_j = (1_N ⊗ e_j)/√N`.
    fn dense_j(n: usize, m: usize) -> Vec<Vec<f64>> {
        let nm = n * m;
        let mut u = vec![vec![0.0; m]; nm];
        for (row, u_row) in u.iter_mut().enumerate() {
            // (1_N ⊗ e_j)[row] = 1 iff row mod M == j
            u_row[row % m] = 1.0 / (n as f64).sqrt();
        }
        let mut j = vec![vec![0.0; nm]; nm];
        for a in 0..nm {
            for b in 0..nm {
                j[a][b] = (0..m).map(|c| u[a][c] * u[b][c]).sum();
            }
        }
        j
    }

    fn matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter()
            .map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum())
            .collect()
    }

    #[test]
    fn two_block_average() {
        let psi = StackedState::from_blocks(&[vec![1.0], vec![3.0]]).unwrap();
        let p = project_consensus(&psi).unwrap();
        assert_eq!(p.as_flat(), &[2.0, 2.0]);
        assert!((consensus_residual(&psi).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_state_is_fixed() {
        let psi = StackedState::from_blocks(&vec![vec![0.5, -1.0]; 4]).unwrap();
        assert_eq!(project_consensus(&psi).unwrap(), psi);
        assert_eq!(consensus_residual(&psi).unwrap(), 0.0);
    }

    #[test]
    fn matches_dense_projector() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (n, m) = (3, 2);
        let j = dense_j(n, m);
        for _ in 0..20 {
            let flat: Vec<f64> = (0..n * m).map(|_| rng.random_range(-2.0..2.0)).collect();
            let psi = StackedState::from_flat(Dimensions::new(n, m).unwrap(), flat.clone()).unwrap();
            let oracle = matvec(&j, &flat);
            let got = project_consensus(&psi).unwrap();
            for (a, b) in got.as_flat().iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12);
            }
            let res: f64 = flat
                .iter()
                .zip(&oracle)
                .map(|(x, jx)| (x - jx).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!((consensus_residual(&psi).unwrap() - res).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let dims = Dimensions::new(2, 2).unwrap();
        assert!(StackedState::from_flat(dims, vec![0.0; 3]).is_err());
        assert!(StackedState::from_blocks(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        let other = StackedState::zeros(Dimensions::new(3, 2).unwrap());
        assert!(ConsensusProjector::new(dims).project(&other).is_err());
        assert!(Dimensions::new(0, 1).is_err());
    }

    proptest! {
        #[test]
        fn projection_is_idempotent(n in 1usize..6, m in 1usize..5, seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let dims = Dimensions::new(n, m).unwrap();
            let flat: Vec<f64> = (0..n * m).map(|_| rng.random_range(-10.0..10.0)).collect();
            let psi = StackedState::from_flat(dims, flat).unwrap();
            let once = project_consensus(&psi).unwrap();
            let twice = project_consensus(&once).unwrap();
            for (a, b) in once.as_flat().iter().zip(twice.as_flat()) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
            prop_assert!(consensus_residual(&once).unwrap() <= 1e-12);
        }
    }
}
