//! Interval discretization of state-action pairs, visit counting and the
//! count-based knownness function.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvId, Observation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("state component {component} is not finite ({value})")]
    NonFinite { component: usize, value: f64 },
    #[error("state has {got} components, grid expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("action {action} out of range ({num_actions} actions)")]
    Action { action: usize, num_actions: usize },
    #[error("cell {cell} out of range ({total} cells)")]
    Cell { cell: usize, total: usize },
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("invalid knownness parameters: {0}")]
    Knownness(String),
}

/// Uniform interval grid over the discretization coordinates of an
/// environment, crossed with its discrete actions.
///
/// Acrobot observations are trig-encoded; the grid works on the joint
/// angles recovered from them, i.e. (θ1, θ2, θ̇1, θ̇2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCodec {
    pub env_id: EnvId,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub bins: Vec<u32>,
    pub num_actions: u32,
}

impl GridCodec {
    pub fn new(
        env_id: EnvId,
        lower: Vec<f64>,
        upper: Vec<f64>,
        bins: Vec<u32>,
        num_actions: u32,
    ) -> Result<Self, GridError> {
        let codec = Self {
            env_id,
            lower,
            upper,
            bins,
            num_actions,
        };
        codec.validate()?;
        Ok(codec)
    }

    /// Default grid for an environment: 30×30 for mountain car, 20^4 for
    /// acrobot and cart-pole.
    pub fn for_env(env_id: EnvId) -> Self {
        let (lower, upper, bins) = match env_id {
            EnvId::MountainCar => (vec![-1.2, -0.07], vec![0.6, 0.07], vec![30, 30]),
            EnvId::Acrobot => (
                vec![-PI, -PI, -4.0 * PI, -9.0 * PI],
                vec![PI, PI, 4.0 * PI, 9.0 * PI],
                vec![20; 4],
            ),
            EnvId::CartPole => {
                let theta = 12.0 * 2.0 * PI / 360.0;
                (
                    vec![-2.4, -3.0, -theta, -3.5],
                    vec![2.4, 3.0, theta, 3.5],
                    vec![20; 4],
                )
            }
        };
        Self {
            env_id,
            lower,
            upper,
            bins,
            num_actions: env_id.num_actions() as u32,
        }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let dims = self.bins.len();
        if dims == 0 || self.lower.len() != dims || self.upper.len() != dims {
            return Err(GridError::Invalid("bounds and bins must have equal non-zero length".into()));
        }
        if dims != self.point_dim() {
            return Err(GridError::Invalid(format!(
                "{} discretizes {} coordinates, got {dims}",
                self.env_id,
                self.point_dim()
            )));
        }
        if self.bins.iter().any(|&b| b == 0) || self.num_actions == 0 {
            return Err(GridError::Invalid("bins and actions must be positive".into()));
        }
        if self.num_actions as usize != self.env_id.num_actions() {
            return Err(GridError::Invalid(format!(
                "{} has {} actions, grid declares {}",
                self.env_id,
                self.env_id.num_actions(),
                self.num_actions
            )));
        }
        for (lo, hi) in self.lower.iter().zip(&self.upper) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(GridError::Invalid(format!("bad interval [{lo}, {hi}]")));
            }
        }
        self.total_cells_checked()?;
        Ok(())
    }

    fn total_cells_checked(&self) -> Result<usize, GridError> {
        self.bins
            .iter()
            .try_fold(self.num_actions as usize, |acc, &b| acc.checked_mul(b as usize))
            .ok_or_else(|| GridError::Invalid("grid too large".into()))
    }

    /// Number of discretization coordinates for the environment.
    pub fn point_dim(&self) -> usize {
        match self.env_id {
            EnvId::MountainCar => 2,
            EnvId::Acrobot | EnvId::CartPole => 4,
        }
    }

    pub fn num_states(&self) -> usize {
        self.bins.iter().map(|&b| b as usize).product()
    }

    pub fn total_cells(&self) -> usize {
        self.num_states() * self.num_actions as usize
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions as usize
    }

    /// Maps a network observation to discretization coordinates.
    pub fn project(&self, obs: &[f64]) -> Result<Vec<f64>, GridError> {
        let expected = self.env_id.obs_dim();
        if obs.len() != expected {
            return Err(GridError::Dimension {
                expected,
                got: obs.len(),
            });
        }
        if let Some((component, &value)) = obs.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(GridError::NonFinite { component, value });
        }
        Ok(match self.env_id {
            EnvId::Acrobot => vec![obs[1].atan2(obs[0]), obs[3].atan2(obs[2]), obs[4], obs[5]],
            _ => obs.to_vec(),
        })
    }

    /// Inverse of [`project`](Self::project) for a grid point.
    pub fn point_to_observation(&self, point: &[f64]) -> Observation {
        match self.env_id {
            EnvId::Acrobot => Observation::new(vec![
                point[0].cos(),
                point[0].sin(),
                point[1].cos(),
                point[1].sin(),
                point[2],
                point[3],
            ]),
            _ => Observation::new(point.to_vec()),
        }
    }

    fn bin(&self, dim: usize, value: f64) -> usize {
        let lo = self.lower[dim];
        let hi = self.upper[dim];
        let n = self.bins[dim] as usize;
        let x = value.clamp(lo, hi);
        let b = ((x - lo) / (hi - lo) * n as f64).floor() as usize;
        b.min(n - 1)
    }

    /// Index of the state cell of a grid point (row-major over bins).
    pub fn state_index(&self, point: &[f64]) -> Result<usize, GridError> {
        if point.len() != self.bins.len() {
            return Err(GridError::Dimension {
                expected: self.bins.len(),
                got: point.len(),
            });
        }
        let mut index = 0usize;
        for (dim, &value) in point.iter().enumerate() {
            if !value.is_finite() {
                return Err(GridError::NonFinite {
                    component: dim,
                    value,
                });
            }
            index = index * self.bins[dim] as usize + self.bin(dim, value);
        }
        Ok(index)
    }

    fn check_action(&self, action: usize) -> Result<(), GridError> {
        if action >= self.num_actions() {
            Err(GridError::Action {
                action,
                num_actions: self.num_actions(),
            })
        } else {
            Ok(())
        }
    }

    /// Cell of a grid point and action. Out-of-bounds coordinates are
    /// clipped into the grid; values on the upper bound fall in the last bin.
    pub fn encode_point(&self, point: &[f64], action: usize) -> Result<usize, GridError> {
        self.check_action(action)?;
        Ok(self.state_index(point)? * self.num_actions() + action)
    }

    /// Cell of an observation and action.
    pub fn encode(&self, obs: &[f64], action: usize) -> Result<usize, GridError> {
        self.encode_point(&self.project(obs)?, action)
    }

    /// Cells of an observation for every action, in action order.
    pub fn encode_all(&self, obs: &[f64]) -> Result<Vec<usize>, GridError> {
        let base = self.state_index(&self.project(obs)?)? * self.num_actions();
        Ok((0..self.num_actions()).map(|a| base + a).collect())
    }

    /// Bin-centre grid point and action of a cell.
    pub fn decode(&self, cell: usize) -> Result<(Vec<f64>, usize), GridError> {
        let total = self.total_cells();
        if cell >= total {
            return Err(GridError::Cell { cell, total });
        }
        let action = cell % self.num_actions();
        let mut rest = cell / self.num_actions();
        let mut point = vec![0.0; self.bins.len()];
        for dim in (0..self.bins.len()).rev() {
            let n = self.bins[dim] as usize;
            let b = rest % n;
            rest /= n;
            let width = (self.upper[dim] - self.lower[dim]) / n as f64;
            point[dim] = self.lower[dim] + (b as f64 + 0.5) * width;
        }
        Ok((point, action))
    }

    /// Canonical little-endian encoding of the grid configuration: env code
    /// (u8), dims (u32), per dim lower/upper (f64) and bins (u32), actions (u32).
    pub fn config_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(9 + self.bins.len() * 20);
        out.push(self.env_id.code());
        out.extend((self.bins.len() as u32).to_le_bytes());
        for dim in 0..self.bins.len() {
            out.extend(self.lower[dim].to_le_bytes());
            out.extend(self.upper[dim].to_le_bytes());
            out.extend(self.bins[dim].to_le_bytes());
        }
        out.extend(self.num_actions.to_le_bytes());
        out
    }

    /// FNV-1a hash of [`config_bytes`](Self::config_bytes).
    pub fn fingerprint(&self) -> u64 {
        self.config_bytes().iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
            (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}

impl fmt::Display for GridCodec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bins: Vec<String> = self.bins.iter().map(|b| b.to_string()).collect();
        write!(f, "{} {}x{} actions", self.env_id, bins.join("x"), self.num_actions)?;
        for (lo, hi) in self.lower.iter().zip(&self.upper) {
            write!(f, " [{lo}, {hi}]")?;
        }
        write!(f, " (fingerprint {:016x})", self.fingerprint())
    }
}

/// Per-cell visit counters for one task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitCounts {
    counts: Vec<u32>,
}

impl VisitCounts {
    pub fn new(total_cells: usize) -> Self {
        Self {
            counts: vec![0; total_cells],
        }
    }

    pub fn for_codec(codec: &GridCodec) -> Self {
        Self::new(codec.total_cells())
    }

    pub fn record_visit(&mut self, cell: usize) {
        self.counts[cell] = self.counts[cell].saturating_add(1);
    }

    pub fn get(&self, cell: usize) -> u32 {
        self.counts[cell]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn visited_cells(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

/// Visitation threshold `m` and smoothing exponent `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnownnessParams {
    pub m: u32,
    pub p: f64,
}

impl KnownnessParams {
    pub fn new(m: u32, p: f64) -> Result<Self, GridError> {
        let params = Self { m, p };
        params.validate()?;
        Ok(params)
    }

    pub fn for_env(env_id: EnvId) -> Self {
        match env_id {
            EnvId::MountainCar => Self { m: 100, p: 10.0 },
            EnvId::Acrobot => Self { m: 50, p: 10.0 },
            EnvId::CartPole => Self { m: 20, p: 1.0 },
        }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.m == 0 {
            return Err(GridError::Knownness("m must be at least 1".into()));
        }
        if !(self.p.is_finite() && self.p > 0.0) {
            return Err(GridError::Knownness(format!("p must be positive, got {}", self.p)));
        }
        Ok(())
    }

    /// K = min(N / m, 1)^p.
    pub fn of_count(&self, visits: u32) -> f64 {
        if visits >= self.m {
            return 1.0;
        }
        (f64::from(visits) / f64::from(self.m)).powf(self.p)
    }
}

pub fn knownness(counts: &VisitCounts, cell: usize, params: &KnownnessParams) -> f64 {
    params.of_count(counts.get(cell))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mc() -> GridCodec {
        GridCodec::for_env(EnvId::MountainCar)
    }

    #[test]
    fn origin_cell() {
        assert_eq!(mc().encode(&[-1.2, -0.07], 0), Ok(0));
    }

    #[test]
    fn upper_bound_maps_to_last_bin() {
        let codec = mc();
        let cell = codec.encode(&[0.6, -0.07], 0).unwrap();
        assert_eq!(cell / 3 / 30, 29);
        let beyond = codec.encode(&[5.0, 1.0], 2).unwrap();
        assert_eq!(beyond, codec.total_cells() - 1);
    }

    #[test]
    fn total_cells_match_grid_sizes() {
        assert_eq!(mc().total_cells(), 2700);
        assert_eq!(GridCodec::for_env(EnvId::Acrobot).total_cells(), 480_000);
        assert_eq!(GridCodec::for_env(EnvId::CartPole).total_cells(), 320_000);
        for env in EnvId::ALL {
            GridCodec::for_env(env).validate().unwrap();
        }
    }

    #[test]
    fn errors() {
        let codec = mc();
        assert!(matches!(codec.encode(&[f64::NAN, 0.0], 0), Err(GridError::NonFinite { .. })));
        assert!(matches!(codec.encode(&[0.0, 0.0], 3), Err(GridError::Action { .. })));
        assert!(matches!(codec.encode(&[0.0], 0), Err(GridError::Dimension { .. })));
        assert!(matches!(codec.decode(2700), Err(GridError::Cell { .. })));
    }

    #[test]
    fn acrobot_projects_angles() {
        let codec = GridCodec::for_env(EnvId::Acrobot);
        let point = [0.3, -2.0, 1.0, -4.0];
        let obs = codec.point_to_observation(&point);
        let back = codec.project(&obs.state).unwrap();
        for (a, b) in point.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn counts() {
        let mut counts = VisitCounts::new(10);
        counts.record_visit(3);
        assert_eq!(counts.get(3), 1);
        for _ in 0..4 {
            counts.record_visit(3);
        }
        assert_eq!(counts.get(3), 5);
        assert!(counts.as_slice().iter().enumerate().all(|(i, &c)| i == 3 || c == 0));
    }

    #[test]
    fn knownness_values() {
        let mut counts = VisitCounts::new(1);
        let p1 = KnownnessParams::new(100, 1.0).unwrap();
        let p10 = KnownnessParams::new(100, 10.0).unwrap();
        assert_eq!(knownness(&counts, 0, &p1), 0.0);
        for _ in 0..50 {
            counts.record_visit(0);
        }
        assert_eq!(knownness(&counts, 0, &p1), 0.5);
        assert!((knownness(&counts, 0, &p10) - 9.765_625e-4).abs() < 1e-15);
        for _ in 0..50 {
            counts.record_visit(0);
        }
        assert_eq!(knownness(&counts, 0, &p10), 1.0);
        counts.record_visit(0);
        assert_eq!(knownness(&counts, 0, &p10), 1.0);
        assert!(KnownnessParams::new(0, 1.0).is_err());
        assert!(KnownnessParams::new(1, 0.0).is_err());
    }

    /// Brute-force bin search used as an independent oracle.
    fn brute_bin(lo: f64, hi: f64, n: u32, x: f64) -> usize {
        let x = x.clamp(lo, hi);
        let width = (hi - lo) / f64::from(n);
        (0..n as usize)
            .rev()
            .find(|&b| x >= lo + b as f64 * width)
            .unwrap_or(0)
    }

    proptest! {
        #[test]
        fn encode_matches_brute_force(
            p in -1.5f64..0.9, v in -0.1f64..0.1, a in 0usize..3,
        ) {
            let codec = mc();
            let cell = codec.encode(&[p, v], a).unwrap();
            let bp = brute_bin(-1.2, 0.6, 30, p);
            let bv = brute_bin(-0.07, 0.07, 30, v);
            // Points sitting on a bin edge may round either way.
            let width_p = 1.8 / 30.0;
            let width_v = 0.14 / 30.0;
            let near_edge = |x: f64, lo: f64, w: f64| {
                let r = ((x - lo) / w).fract();
                r < 1e-9 || r > 1.0 - 1e-9
            };
            prop_assume!(!near_edge(p, -1.2, width_p) && !near_edge(v, -0.07, width_v));
            prop_assert_eq!(cell, (bp * 30 + bv) * 3 + a);
        }

        #[test]
        fn decode_then_encode_round_trips(cell in 0usize..2700) {
            let codec = mc();
            let (point, action) = codec.decode(cell).unwrap();
            prop_assert_eq!(codec.encode_point(&point, action).unwrap(), cell);
        }

        #[test]
        fn encode_constant_near_bin_centre(cell in 0usize..320_000, fx in -0.49f64..0.49, fy in -0.49f64..0.49) {
            let codec = GridCodec::for_env(EnvId::CartPole);
            let (mut point, action) = codec.decode(cell).unwrap();
            let w0 = (codec.upper[0] - codec.lower[0]) / f64::from(codec.bins[0]);
            let w3 = (codec.upper[3] - codec.lower[3]) / f64::from(codec.bins[3]);
            point[0] += fx * w0;
            point[3] += fy * w3;
            prop_assert_eq!(codec.encode_point(&point, action).unwrap(), cell);
        }

        #[test]
        fn knownness_monotone_and_bounded(n1 in 0u32..500, n2 in 0u32..500, m in 1u32..200, p in 0.1f64..30.0) {
            let params = KnownnessParams::new(m, p).unwrap();
            let (lo, hi) = if n1 <= n2 { (n1, n2) } else { (n2, n1) };
            let k_lo = params.of_count(lo);
            let k_hi = params.of_count(hi);
            prop_assert!((0.0..=1.0).contains(&k_lo) && (0.0..=1.0).contains(&k_hi));
            prop_assert!(k_lo <= k_hi);
        }

        #[test]
        fn larger_p_gives_smaller_knownness(n in 0u32..200, m in 1u32..200, p in 0.1f64..10.0, dp in 0.0f64..10.0) {
            let a = KnownnessParams::new(m, p).unwrap().of_count(n);
            let b = KnownnessParams::new(m, p + dp).unwrap().of_count(n);
            prop_assert!(b <= a);
        }
    }
}
