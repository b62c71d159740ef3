use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub spike_rows: usize,
    /// Spike magnitudes are drawn from this range, in multiples of the
    /// largest low-rank entry (or of `factor_max^2` when the low-rank part is
    /// empty).
    pub magnitude: (f64, f64),
    /// Factor entries are uniform on `[0, factor_max]`.
    pub factor_max: f64,
    pub seed: u64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            rows: 164,
            cols: 24,
            rank: 3,
            spike_rows: 8,
            magnitude: (3.0, 6.0),
            factor_max: 5.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spike {
    pub row: usize,
    pub col: usize,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedMatrix {
    pub r: DMatrix<f64>,
    pub low_rank: DMatrix<f64>,
    pub spikes: Vec<Spike>,
}

impl PlantedMatrix {
    pub fn spiked_rows(&self) -> BTreeSet<usize> {
        self.spikes.iter().map(|s| s.row).collect()
    }

    pub fn row_labels(&self) -> Vec<bool> {
        let rows = self.spiked_rows();
        (0..self.r.nrows()).map(|i| rows.contains(&i)).collect()
    }
}

/// `R = A B^T + spikes`, with `spike_rows` distinct rows receiving spikes at
/// one to three distinct columns each.
pub fn plant_matrix(cfg: &PlantConfig) -> Result<PlantedMatrix> {
    let PlantConfig { rows, cols, rank, spike_rows, magnitude, factor_max, seed } = *cfg;
    if rows == 0 || cols == 0 || rank > rows.min(cols) || spike_rows > rows {
        return Err(Error::Config(format!(
            "cannot plant rank {rank} with {spike_rows} spiked rows in a {rows}x{cols} matrix"
        )));
    }
    if !(magnitude.0 > 0.0 && magnitude.0 <= magnitude.1) || !(factor_max > 0.0) {
        return Err(Error::Config("spike magnitude range and factor scale must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(rows, rank, |_, _| rng.random_range(0.0..=factor_max));
    let b = DMatrix::from_fn(cols, rank, |_, _| rng.random_range(0.0..=factor_max));
    let low_rank = &a * b.transpose();
    let scale = if rank > 0 { low_rank.max() } else { factor_max * factor_max };

    let mut r = low_rank.clone();
    let mut spikes = Vec::new();
    let mut chosen = sample(&mut rng, rows, spike_rows).into_vec();
    chosen.sort_unstable();
    for row in chosen {
        let count = rng.random_range(1..=3usize.min(cols));
        let mut cols_hit = sample(&mut rng, cols, count).into_vec();
        cols_hit.sort_unstable();
        for col in cols_hit {
            let m = rng.random_range(magnitude.0..=magnitude.1) * scale;
            r[(row, col)] += m;
            spikes.push(Spike { row, col, magnitude: m });
        }
    }
    Ok(PlantedMatrix { r, low_rank, spikes })
}
