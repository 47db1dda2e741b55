//! Simulation over datasets and the (match length, copy length) sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::DatasetSample;
use super::HarnessError;
use crate::index::ReferenceIndex;
use crate::lm::mix64;
use crate::simulator::{aggregate_stats, infer_with_index, TraceStats};
use crate::types::DecodeTrace;

/// Tie-break seed for one sample in one (n, k) cell.
pub fn cell_seed(seed: u64, n: usize, k: usize, sample_id: &str) -> u64 {
    let mut h = mix64(seed ^ 0x9e37_79b9_7f4a_7c15);
    h = mix64(h ^ n as u64);
    h = mix64(h ^ k as u64);
    for b in sample_id.bytes() {
        h = mix64(h ^ u64::from(b));
    }
    h
}

fn targets(samples: &[DatasetSample]) -> Result<Vec<&[u32]>, HarnessError> {
    if samples.is_empty() {
        return Err(HarnessError::InvalidParam("no samples".into()));
    }
    samples
        .iter()
        .map(|s| s.require_target().map_err(HarnessError::MissingTarget))
        .collect()
}

/// Simulated traces for every sample at one (n, k), in sample order.
pub fn simulate_samples(
    samples: &[DatasetSample],
    n: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<(String, DecodeTrace)>, HarnessError> {
    if n == 0 || k == 0 {
        return Err(HarnessError::InvalidParam("match and copy lengths must be >= 1".into()));
    }
    let ys = targets(samples)?;
    samples
        .par_iter()
        .zip(ys.par_iter())
        .map(|(s, y)| {
            let index = ReferenceIndex::build(&s.docs, n);
            let trace = infer_with_index(y, &index, k, cell_seed(seed, n, k, &s.sample_id))?;
            Ok((s.sample_id.clone(), trace))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub n: usize,
    pub k: usize,
    pub stats: TraceStats,
    /// Mean wall-clock seconds per decoding step, when measured live.
    pub mean_step_latency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub n_values: Vec<usize>,
    pub k_values: Vec<usize>,
    /// Row-major over `n_values` then `k_values`.
    pub cells: Vec<GridCell>,
    /// Cell with the highest compression ratio; ties go to the earlier cell.
    pub best: (usize, usize),
}

impl GridResult {
    pub fn cell(&self, n: usize, k: usize) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.n == n && c.k == k)
    }
}

/// Simulates every sample at every (n, k) and aggregates per cell.
pub fn grid_search(
    samples: &[DatasetSample],
    n_values: &[usize],
    k_values: &[usize],
    seed: u64,
) -> Result<GridResult, HarnessError> {
    if n_values.is_empty() || k_values.is_empty() {
        return Err(HarnessError::InvalidParam("empty grid".into()));
    }
    if n_values.contains(&0) || k_values.contains(&0) {
        return Err(HarnessError::InvalidParam("match and copy lengths must be >= 1".into()));
    }
    let ys = targets(samples)?;
    let pairs: Vec<(usize, usize)> = n_values
        .iter()
        .flat_map(|&n| k_values.iter().map(move |&k| (n, k)))
        .collect();

    // one index per (n, sample), shared across k
    let indices: Vec<Vec<ReferenceIndex>> = n_values
        .par_iter()
        .map(|&n| samples.iter().map(|s| ReferenceIndex::build(&s.docs, n)).collect())
        .collect();

    let cells = pairs
        .par_iter()
        .map(|&(n, k)| {
            let ni = n_values.iter().position(|&v| v == n).expect("n from grid");
            let traces = samples
                .par_iter()
                .enumerate()
                .map(|(i, s)| infer_with_index(ys[i], &indices[ni][i], k, cell_seed(seed, n, k, &s.sample_id)))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(GridCell {
                n,
                k,
                stats: aggregate_stats(&traces)?,
                mean_step_latency: None,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;

    let mut best = 0;
    for (i, c) in cells.iter().enumerate() {
        if c.stats.compression_ratio > cells[best].stats.compression_ratio {
            best = i;
        }
    }
    Ok(GridResult {
        n_values: n_values.to_vec(),
        k_values: k_values.to_vec(),
        best: (cells[best].n, cells[best].k),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::dataset::Scenario;
    use crate::harness::synth::{gen_synthetic, SynthParams};
    use crate::simulator::infer_decode_sequence;

    fn dev_set(n: usize) -> Vec<DatasetSample> {
        gen_synthetic(&SynthParams {
            num_samples: n,
            overlap: 0.8,
            ..SynthParams::for_scenario(Scenario::Retrieval)
        })
        .unwrap()
    }

    #[test]
    fn single_cell_equals_aggregate_of_one_trace() {
        let s = dev_set(1);
        let g = grid_search(&s, &[2], &[7], 5).unwrap();
        assert_eq!(g.cells.len(), 1);
        let y = s[0].target.as_ref().unwrap();
        let t = infer_decode_sequence(y, &s[0].docs, 2, 7, cell_seed(5, 2, 7, &s[0].sample_id)).unwrap();
        assert_eq!(g.cells[0].stats, aggregate_stats([&t]).unwrap());
        assert_eq!(g.best, (2, 7));
    }

    #[test]
    fn covers_cross_product_and_is_reproducible() {
        let s = dev_set(12);
        let ks: Vec<usize> = (4..=18).collect();
        let a = grid_search(&s, &[1, 2, 3], &ks, 9).unwrap();
        assert_eq!(a.cells.len(), 3 * 15);
        for &n in &[1, 2, 3] {
            for &k in &ks {
                assert!(a.cell(n, k).is_some());
            }
        }
        assert_eq!(a, grid_search(&s, &[1, 2, 3], &ks, 9).unwrap());
        assert_eq!(a.best.0, 1);
    }

    #[test]
    fn cells_match_simulate_samples() {
        let s = dev_set(5);
        let g = grid_search(&s, &[1, 3], &[4, 9], 2).unwrap();
        for c in &g.cells {
            let traces = simulate_samples(&s, c.n, c.k, 2).unwrap();
            let stats = aggregate_stats(traces.iter().map(|(_, t)| t)).unwrap();
            assert_eq!(stats, c.stats);
        }
    }

    #[test]
    fn missing_target_is_an_error() {
        let mut s = dev_set(2);
        s[1].target = None;
        assert!(matches!(
            grid_search(&s, &[1], &[4], 0),
            Err(HarnessError::MissingTarget(_))
        ));
        s[1].target = Some(vec![]);
        assert!(simulate_samples(&s, 1, 4, 0).is_err());
        assert!(grid_search(&[], &[1], &[4], 0).is_err());
    }
}
