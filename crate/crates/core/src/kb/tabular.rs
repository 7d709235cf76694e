use crate::grid::GridCodec;

use super::KbError;

/// Tabular action values over grid cells, learned by one-step Q-learning.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    values: Vec<f64>,
    visits: Vec<u32>,
    num_actions: usize,
    fingerprint: u64,
    pub alpha: f64,
    pub gamma: f64,
}

impl QTable {
    pub fn new(codec: &GridCodec, alpha: f64, gamma: f64) -> Self {
        Self::with_shape(codec.total_cells(), codec.num_actions(), codec.fingerprint(), alpha, gamma)
    }

    /// Table over `total_cells` cells laid out as consecutive groups of
    /// `num_actions` (one group per discrete state).
    pub fn with_shape(total_cells: usize, num_actions: usize, fingerprint: u64, alpha: f64, gamma: f64) -> Self {
        assert!(num_actions > 0 && total_cells % num_actions == 0, "cells must group by action");
        Self {
            values: vec![0.0; total_cells],
            visits: vec![0; total_cells],
            num_actions,
            fingerprint,
            alpha,
            gamma,
        }
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn visits(&self) -> &[u32] {
        &self.visits
    }

    pub fn value(&self, cell: usize) -> f64 {
        self.values[cell]
    }

    pub fn set_value(&mut self, cell: usize, value: f64) {
        self.values[cell] = value;
    }

    /// Number of updates applied to a cell.
    pub fn visit_count(&self, cell: usize) -> u32 {
        self.visits[cell]
    }

    pub fn max_over(&self, cells: &[usize]) -> f64 {
        cells.iter().map(|&c| self.values[c]).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action over the cells of one state (lowest index on ties).
    pub fn greedy(&self, cells: &[usize]) -> usize {
        crate::agent::argmax(&cells.iter().map(|&c| self.values[c]).collect::<Vec<_>>())
    }

    /// Q(c) ← Q(c) + α [r + γ max_a' Q(c'_a') − Q(c)]; `next_cells` is
    /// `None` on terminal transitions, which drops the bootstrap term.
    pub fn update(&mut self, cell: usize, reward: f64, next_cells: Option<&[usize]>) -> Result<(), KbError> {
        self.update_with_rate(cell, reward, next_cells, self.alpha)
    }

    pub fn update_with_rate(
        &mut self,
        cell: usize,
        reward: f64,
        next_cells: Option<&[usize]>,
        alpha: f64,
    ) -> Result<(), KbError> {
        let bootstrap = match next_cells {
            Some(cells) if !cells.is_empty() => self.max_over(cells),
            _ => 0.0,
        };
        let old = self.values[cell];
        let new = old + alpha * (reward + self.gamma * bootstrap - old);
        if !new.is_finite() {
            return Err(KbError::NonFinite(format!("tabular update of cell {cell} produced {new}")));
        }
        self.values[cell] = new;
        self.visits[cell] = self.visits[cell].saturating_add(1);
        Ok(())
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
}
