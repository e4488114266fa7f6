use serde::{Deserialize, Serialize};

use super::SimError;

/// `p` processes arranged as `p / c` process rows by `c` process columns.
/// Rank `r` sits at `(r / c, r % c)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessGrid {
    p: usize,
    c: usize,
}

impl ProcessGrid {
    pub fn new(p: usize, c: usize) -> Result<Self, SimError> {
        if p == 0 {
            return Err(SimError::Grid("p must be at least 1".into()));
        }
        if c == 0 {
            return Err(SimError::Grid("replication factor c must be at least 1".into()));
        }
        if !p.is_multiple_of(c) {
            return Err(SimError::Grid(format!("c divides p (got p={p}, c={c})")));
        }
        Ok(Self { p, c })
    }

    /// Grid for a 1D algorithm (`c = 1`).
    pub fn flat(p: usize) -> Result<Self, SimError> {
        Self::new(p, 1)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn c(&self) -> usize {
        self.c
    }

    /// Number of process rows, which is also the number of block rows.
    pub fn rows(&self) -> usize {
        self.p / self.c
    }

    /// Stage count `p / c²` of the 1.5D schedule.
    pub fn stages(&self) -> Result<usize, SimError> {
        let c2 = self.c * self.c;
        if !self.p.is_multiple_of(c2) {
            return Err(SimError::Grid(format!(
                "c^2 divides p (got p={}, c={}, c^2={c2})",
                self.p, self.c
            )));
        }
        Ok(self.p / c2)
    }

    pub fn coords(&self, rank: usize) -> (usize, usize) {
        (rank / self.c, rank % self.c)
    }

    pub fn rank_of(&self, i: usize, j: usize) -> usize {
        i * self.c + j
    }

    /// Ranks of process row `P(i, :)`, ascending.
    pub fn row_group(&self, i: usize) -> Vec<usize> {
        (0..self.c).map(|j| self.rank_of(i, j)).collect()
    }

    /// Ranks of process column `P(:, j)`, ascending.
    pub fn col_group(&self, j: usize) -> Vec<usize> {
        (0..self.rows()).map(|i| self.rank_of(i, j)).collect()
    }

    pub fn all(&self) -> Vec<usize> {
        (0..self.p).collect()
    }
}
