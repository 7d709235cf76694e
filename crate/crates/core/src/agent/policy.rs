use rand::Rng;

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Q̃(s, a) = K(s, a)·Q^θ(s, a) + (1 − K(s, a))·Q∅(s, a) for every action.
pub fn adaptive_q(q_theta: &[f64], q_init: &[f64], knownness: &[f64]) -> Vec<f64> {
    assert_eq!(q_theta.len(), q_init.len(), "value vectors differ in length");
    assert_eq!(q_theta.len(), knownness.len(), "knownness vector length");
    q_theta
        .iter()
        .zip(q_init)
        .zip(knownness)
        .map(|((&qt, &q0), &k)| blend(qt, q0, k))
        .collect()
}

/// Convex combination with exact endpoints: K = 1 returns `q_theta` and
/// K = 0 returns `q_init` bit-for-bit.
#[inline]
pub fn blend(q_theta: f64, q_init: f64, k: f64) -> f64 {
    if k >= 1.0 {
        q_theta
    } else if k <= 0.0 {
        q_init
    } else {
        k * q_theta + (1.0 - k) * q_init
    }
}

/// ε-greedy choice: one uniform draw decides exploration, a second picks
/// the random action.
pub fn epsilon_greedy<R: Rng + ?Sized>(values: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if rng.gen::<f64>() < epsilon {
        rng.gen_range(0..values.len())
    } else {
        argmax(values)
    }
}

/// Multiplicative per-step ε decay with a floor.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExplorationSchedule {
    pub start: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Default for ExplorationSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            decay: 0.999,
            floor: 0.01,
        }
    }
}

impl ExplorationSchedule {
    pub fn validate(&self) -> Result<(), String> {
        let ok = (0.0..=1.0).contains(&self.floor)
            && (self.floor..=1.0).contains(&self.start)
            && (0.0..=1.0).contains(&self.decay);
        if ok {
            Ok(())
        } else {
            Err(format!("invalid exploration schedule {self:?}"))
        }
    }

    pub fn next(&self, epsilon: f64) -> f64 {
        (epsilon * self.decay).max(self.floor)
    }

    /// ε after `steps` decays.
    pub fn after(&self, steps: u64) -> f64 {
        (self.start * self.decay.powf(steps as f64)).max(self.floor)
    }
}
