//! Cross-task knowledge base of tabular values and the initialization
//! strategies that turn it into Q∅.
//!
//! The knowledge base never stores individual Q-tables. For every grid cell
//! it keeps the running mean and M2 (Welford), the maximum, the sum of
//! logarithms and the number of source tasks that visited the cell. Cells a
//! source task never visited contribute nothing for that task.

mod io;
mod models;
mod tabular;

pub use io::{kb_load, kb_save, FORMAT_VERSION, MAGIC};
pub use models::{archive_load, archive_save, q_init_from_models, ModelArchive};
pub use tabular::QTable;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridCodec, GridError};
use crate::net::NetError;

pub const DEFAULT_LOG_FLOOR: f64 = 1e-6;
pub const DEFAULT_UCOI_DELTA: f64 = 0.05;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("knowledge base holds no tasks")]
    Empty,
    #[error("incompatible knowledge base: built for {found}, expected {expected}")]
    Incompatible { expected: String, found: String },
    #[error("grid fingerprint mismatch: file grid {found}, expected grid {expected}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("corrupt knowledge-base file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("unsupported file version {found} in {path} (supported: {supported})")]
    UnsupportedVersion { path: PathBuf, found: u32, supported: u32 },
    #[error("LogQInit floor {strategy} differs from the knowledge base floor {kb}")]
    FloorMismatch { strategy: f64, kb: f64 },
    #[error("invalid initialization strategy: {0}")]
    InvalidStrategy(String),
    #[error("numeric error: {0}")]
    NonFinite(String),
    #[error("model archive: {0}")]
    Archive(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Rule that reduces the per-cell statistics of prior tasks to one value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum InitStrategy {
    /// Maximum over prior tasks.
    MaxQInit,
    /// Mean shifted toward the maximum by a Hoeffding-style confidence
    /// weight w = min(1, sqrt(ln(2/δ) / 2n)).
    #[serde(rename = "UCOI")]
    Ucoi { delta: f64 },
    /// Geometric mean of the values floored at `floor`.
    LogQInit { floor: f64 },
}

impl InitStrategy {
    pub fn ucoi() -> Self {
        InitStrategy::Ucoi {
            delta: DEFAULT_UCOI_DELTA,
        }
    }

    pub fn log_q_init() -> Self {
        InitStrategy::LogQInit {
            floor: DEFAULT_LOG_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<(), KbError> {
        match *self {
            InitStrategy::MaxQInit => Ok(()),
            InitStrategy::Ucoi { delta } if delta > 0.0 && delta < 1.0 => Ok(()),
            InitStrategy::Ucoi { delta } => Err(KbError::InvalidStrategy(format!("UCOI delta {delta} outside (0, 1)"))),
            InitStrategy::LogQInit { floor } if floor > 0.0 && floor.is_finite() => Ok(()),
            InitStrategy::LogQInit { floor } => Err(KbError::InvalidStrategy(format!("LogQInit floor {floor} must be positive"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InitStrategy::MaxQInit => "maxqinit",
            InitStrategy::Ucoi { .. } => "ucoi",
            InitStrategy::LogQInit { .. } => "logqinit",
        }
    }

    /// Parses `maxqinit`, `ucoi[:delta]` or `logqinit[:floor]`.
    pub fn parse(s: &str) -> Result<Self, KbError> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let arg = arg
            .map(|a| a.parse::<f64>().map_err(|e| KbError::InvalidStrategy(format!("{s}: {e}"))))
            .transpose()?;
        let strategy = match name.to_ascii_lowercase().as_str() {
            "maxqinit" | "max" => InitStrategy::MaxQInit,
            "ucoi" => InitStrategy::Ucoi {
                delta: arg.unwrap_or(DEFAULT_UCOI_DELTA),
            },
            "logqinit" | "log" => InitStrategy::LogQInit {
                floor: arg.unwrap_or(DEFAULT_LOG_FLOOR),
            },
            other => return Err(KbError::InvalidStrategy(format!("unknown strategy `{other}`"))),
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

impl fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Confidence weight of the maximum in UCOI; 1 when there is no sample.
pub fn ucoi_weight(n: u32, delta: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    ((2.0 / delta).ln() / (2.0 * f64::from(n))).sqrt().min(1.0)
}

/// Applies a strategy directly to a set of values (used for model
/// outputs, and as the reference for the statistics-based path).
pub fn aggregate(values: &[f64], strategy: &InitStrategy) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / n;
    match *strategy {
        InitStrategy::MaxQInit => max,
        InitStrategy::Ucoi { delta } => {
            let w = ucoi_weight(values.len() as u32, delta);
            (1.0 - w) * mean + w * max
        }
        InitStrategy::LogQInit { floor } => {
            let log_mean = values.iter().map(|v| v.max(floor).ln()).sum::<f64>() / n;
            log_mean.exp().min(mean)
        }
    }
}

/// Per-cell statistics over absorbed source tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    codec: GridCodec,
    log_floor: f64,
    n_tasks: u32,
    mean: Vec<f64>,
    m2: Vec<f64>,
    max: Vec<f64>,
    log_sum: Vec<f64>,
    n_with_value: Vec<u32>,
    visits: Vec<u64>,
}

impl KnowledgeBase {
    pub fn new(codec: GridCodec) -> Self {
        Self::with_floor(codec, DEFAULT_LOG_FLOOR)
    }

    pub fn with_floor(codec: GridCodec, log_floor: f64) -> Self {
        let n = codec.total_cells();
        Self {
            codec,
            log_floor,
            n_tasks: 0,
            mean: vec![0.0; n],
            m2: vec![0.0; n],
            max: vec![0.0; n],
            log_sum: vec![0.0; n],
            n_with_value: vec![0; n],
            visits: vec![0; n],
        }
    }

    pub fn codec(&self) -> &GridCodec {
        &self.codec
    }

    pub fn log_floor(&self) -> f64 {
        self.log_floor
    }

    pub fn n_tasks(&self) -> u32 {
        self.n_tasks
    }

    pub fn total_cells(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn m2(&self) -> &[f64] {
        &self.m2
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }

    pub fn log_sum(&self) -> &[f64] {
        &self.log_sum
    }

    pub fn n_with_value(&self) -> &[u32] {
        &self.n_with_value
    }

    /// Total source-task visits per cell.
    pub fn visits(&self) -> &[u64] {
        &self.visits
    }

    /// Population standard deviation of a cell's absorbed values.
    pub fn std(&self, cell: usize) -> f64 {
        let n = self.n_with_value[cell];
        if n == 0 {
            0.0
        } else {
            (self.m2[cell] / f64::from(n)).max(0.0).sqrt()
        }
    }

    /// Fraction of cells with at least one absorbed value.
    pub fn coverage(&self) -> f64 {
        let covered = self.n_with_value.iter().filter(|&&n| n > 0).count();
        covered as f64 / self.total_cells() as f64
    }

    /// Folds a finished source-task table into the statistics. Only cells
    /// the table actually updated are counted.
    pub fn absorb(&mut self, table: &QTable) -> Result<(), KbError> {
        if table.fingerprint() != self.codec.fingerprint() || table.len() != self.total_cells() {
            return Err(KbError::Incompatible {
                expected: self.codec.to_string(),
                found: format!("table of {} cells (fingerprint {:016x})", table.len(), table.fingerprint()),
            });
        }
        if let Some(cell) = table.values().iter().position(|v| !v.is_finite()) {
            return Err(KbError::NonFinite(format!("source table cell {cell} is not finite")));
        }
        for cell in 0..self.total_cells() {
            let visits = table.visit_count(cell);
            if visits == 0 {
                continue;
            }
            let v = table.value(cell);
            let n = self.n_with_value[cell] + 1;
            let delta = v - self.mean[cell];
            self.mean[cell] += delta / f64::from(n);
            self.m2[cell] += delta * (v - self.mean[cell]);
            self.max[cell] = if n == 1 { v } else { self.max[cell].max(v) };
            self.log_sum[cell] += v.max(self.log_floor).ln();
            self.n_with_value[cell] = n;
            self.visits[cell] += u64::from(visits);
        }
        self.n_tasks += 1;
        Ok(())
    }

    /// Initial value of one cell. Cells no source task visited get 0.
    pub fn q_init(&self, strategy: &InitStrategy, cell: usize) -> Result<f64, KbError> {
        if self.n_tasks == 0 {
            return Err(KbError::Empty);
        }
        if cell >= self.total_cells() {
            return Err(GridError::Cell {
                cell,
                total: self.total_cells(),
            }
            .into());
        }
        if let InitStrategy::LogQInit { floor } = *strategy {
            if floor != self.log_floor {
                return Err(KbError::FloorMismatch {
                    strategy: floor,
                    kb: self.log_floor,
                });
            }
        }
        Ok(self.q_init_unchecked(strategy, cell))
    }

    fn q_init_unchecked(&self, strategy: &InitStrategy, cell: usize) -> f64 {
        let n = self.n_with_value[cell];
        if n == 0 {
            return 0.0;
        }
        let mean = self.mean[cell];
        let max = self.max[cell];
        match *strategy {
            InitStrategy::MaxQInit => max,
            InitStrategy::Ucoi { delta } => {
                let w = ucoi_weight(n, delta);
                (1.0 - w) * mean + w * max
            }
            // Flooring can only raise the geometric mean; capping at the
            // arithmetic mean keeps the AM-GM order of the raw values.
            InitStrategy::LogQInit { .. } => (self.log_sum[cell] / f64::from(n)).exp().min(mean),
        }
    }

    /// Q∅(s, ·): one initial value per action for an observation.
    pub fn q_init_vector(&self, strategy: &InitStrategy, obs: &[f64]) -> Result<Vec<f64>, KbError> {
        let cells = self.codec.encode_all(obs)?;
        cells.into_iter().map(|c| self.q_init(strategy, c)).collect()
    }

    /// Q∅ for every cell, as a dense table (the default expert for JSRL and
    /// a cache for agents).
    pub fn init_table(&self, strategy: &InitStrategy) -> Result<Vec<f64>, KbError> {
        if self.n_tasks == 0 {
            return Err(KbError::Empty);
        }
        (0..self.total_cells()).map(|c| self.q_init(strategy, c)).collect()
    }

    /// Rebuilds a knowledge base from raw arrays (used by the file loader).
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        codec: GridCodec,
        log_floor: f64,
        n_tasks: u32,
        mean: Vec<f64>,
        m2: Vec<f64>,
        max: Vec<f64>,
        log_sum: Vec<f64>,
        n_with_value: Vec<u32>,
        visits: Vec<u64>,
    ) -> Self {
        Self {
            codec,
            log_floor,
            n_tasks,
            mean,
            m2,
            max,
            log_sum,
            n_with_value,
            visits,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvId;
    use proptest::prelude::*;

    fn codec() -> GridCodec {
        GridCodec::for_env(EnvId::MountainCar)
    }

    fn table_with(values: &[(usize, f64)]) -> QTable {
        let c = codec();
        let mut t = QTable::new(&c, 0.1, 0.99);
        for &(cell, v) in values {
            t.set_value(cell, v);
            // Mark as visited through a zero-rate update.
            t.update_with_rate(cell, 0.0, None, 0.0).unwrap();
        }
        t
    }

    fn kb_over(values: &[f64]) -> KnowledgeBase {
        let mut kb = KnowledgeBase::new(codec());
        for &v in values {
            kb.absorb(&table_with(&[(7, v)])).unwrap();
        }
        kb
    }

    #[test]
    fn single_sample_statistics() {
        let kb = kb_over(&[0.5]);
        assert_eq!(kb.mean()[7], 0.5);
        assert_eq!(kb.std(7), 0.0);
        assert_eq!(kb.max()[7], 0.5);
        assert_eq!(kb.n_tasks(), 1);
    }

    #[test]
    fn two_sample_statistics() {
        let kb = kb_over(&[0.2, 0.4]);
        assert!((kb.mean()[7] - 0.3).abs() < 1e-15);
        assert_eq!(kb.max()[7], 0.4);
        assert!((kb.std(7) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn unvisited_cells_fall_back_to_zero() {
        let kb = kb_over(&[0.2, 0.4]);
        assert_eq!(kb.n_with_value()[8], 0);
        for s in [InitStrategy::MaxQInit, InitStrategy::ucoi(), InitStrategy::log_q_init()] {
            assert_eq!(kb.q_init(&s, 8).unwrap(), 0.0);
        }
    }

    #[test]
    fn strategy_examples() {
        let kb = kb_over(&[0.2, 0.5, 0.3]);
        assert_eq!(kb.q_init(&InitStrategy::MaxQInit, 7).unwrap(), 0.5);
        let kb = kb_over(&[0.1, 0.9]);
        assert!((kb.q_init(&InitStrategy::log_q_init(), 7).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn ucoi_example() {
        // δ = 0.05, n = 30, mean 0.3, max 0.5.
        let w = ucoi_weight(30, 0.05);
        assert!((w - (40f64.ln() / 60.0).sqrt()).abs() < 1e-15);
        assert!((w - 0.2480).abs() < 1e-4);
        let mut values = vec![0.3; 30];
        values[0] = 0.5;
        values[1] = 0.1;
        let kb = kb_over(&values);
        assert!((kb.mean()[7] - 0.3).abs() < 1e-12);
        let got = kb.q_init(&InitStrategy::ucoi(), 7).unwrap();
        assert!((got - (0.3 + w * 0.2)).abs() < 1e-12);
        assert!((got - 0.3496).abs() < 1e-4);
        assert_eq!(ucoi_weight(0, 0.05), 1.0);
    }

    #[test]
    fn empty_kb_is_an_error() {
        let kb = KnowledgeBase::new(codec());
        assert!(matches!(kb.q_init(&InitStrategy::MaxQInit, 0), Err(KbError::Empty)));
    }

    #[test]
    fn codec_mismatch_is_rejected() {
        let mut kb = KnowledgeBase::new(codec());
        let other = GridCodec::for_env(EnvId::CartPole);
        let t = QTable::new(&other, 0.1, 0.99);
        assert!(matches!(kb.absorb(&t), Err(KbError::Incompatible { .. })));
    }

    #[test]
    fn floor_mismatch_is_rejected() {
        let kb = kb_over(&[0.5]);
        let s = InitStrategy::LogQInit { floor: 1e-3 };
        assert!(matches!(kb.q_init(&s, 7), Err(KbError::FloorMismatch { .. })));
    }

    #[test]
    fn uniform_kb_gives_constant_vector() {
        let c = codec();
        let mut t = QTable::new(&c, 0.1, 0.99);
        for cell in 0..c.total_cells() {
            t.set_value(cell, 0.25);
            t.update_with_rate(cell, 0.0, None, 0.0).unwrap();
        }
        let mut kb = KnowledgeBase::new(c);
        kb.absorb(&t).unwrap();
        kb.absorb(&t).unwrap();
        for s in [InitStrategy::MaxQInit, InitStrategy::ucoi(), InitStrategy::log_q_init()] {
            let v = kb.q_init_vector(&s, &[-0.5, 0.01]).unwrap();
            for x in v {
                assert!((x - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!(InitStrategy::parse("maxqinit").unwrap(), InitStrategy::MaxQInit);
        assert_eq!(InitStrategy::parse("ucoi:0.1").unwrap(), InitStrategy::Ucoi { delta: 0.1 });
        assert_eq!(InitStrategy::parse("logqinit").unwrap(), InitStrategy::log_q_init());
        assert!(InitStrategy::parse("ucoi:1.5").is_err());
        assert!(InitStrategy::parse("nope").is_err());
    }

    proptest! {
        #[test]
        fn ordering_holds_per_cell(values in prop::collection::vec(0.0f64..2.0, 1..12)) {
            let kb = kb_over(&values);
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let log = kb.q_init(&InitStrategy::log_q_init(), 7).unwrap();
            let mean = kb.mean()[7];
            let ucoi = kb.q_init(&InitStrategy::ucoi(), 7).unwrap();
            let max = kb.q_init(&InitStrategy::MaxQInit, 7).unwrap();
            let tol = 1e-12;
            prop_assert!(min <= log + tol);
            prop_assert!(log <= mean + tol);
            prop_assert!(mean <= ucoi + tol);
            prop_assert!(ucoi <= max + tol);
            prop_assert!(kb.std(7) >= 0.0);
        }

        #[test]
        fn statistics_match_direct_aggregation(values in prop::collection::vec(0.0f64..2.0, 1..12)) {
            let kb = kb_over(&values);
            for s in [InitStrategy::MaxQInit, InitStrategy::ucoi(), InitStrategy::log_q_init()] {
                let direct = aggregate(&values, &s);
                prop_assert!((kb.q_init(&s, 7).unwrap() - direct).abs() < 1e-12);
            }
        }

        #[test]
        fn absorb_is_order_invariant(values in prop::collection::vec(0.0f64..2.0, 2..10), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut shuffled = values.clone();
            shuffled.shuffle(&mut crate::rng::seeded_rng(seed));
            let a = kb_over(&values);
            let b = kb_over(&shuffled);
            prop_assert!((a.mean()[7] - b.mean()[7]).abs() < 1e-12);
            prop_assert_eq!(a.max()[7], b.max()[7]);
        }
    }
}
