use std::f64::consts::PI;

use rand::Rng;

pub const DT: f64 = 0.2;
pub const LINK_MASS_1: f64 = 1.0;
pub const LINK_MASS_2: f64 = 1.0;
pub const LINK_MOI: f64 = 1.0;
pub const MAX_VEL_1: f64 = 4.0 * PI;
pub const MAX_VEL_2: f64 = 9.0 * PI;
pub const GRAVITY: f64 = 9.8;
pub const TORQUES: [f64; 3] = [-1.0, 0.0, 1.0];

/// Joint angles and angular velocities (θ1, θ2, θ̇1, θ̇2).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AcrobotState {
    pub theta1: f64,
    pub theta2: f64,
    pub dtheta1: f64,
    pub dtheta2: f64,
}

impl AcrobotState {
    pub fn sample_initial<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            theta1: rng.gen_range(-0.1..=0.1),
            theta2: rng.gen_range(-0.1..=0.1),
            dtheta1: rng.gen_range(-0.1..=0.1),
            dtheta2: rng.gen_range(-0.1..=0.1),
        }
    }

    /// One control interval integrated with a single fourth-order
    /// Runge-Kutta step. The link centres of mass sit at half length.
    pub fn step(&self, action: usize, link_len_1: f64, link_len_2: f64) -> Self {
        let torque = TORQUES[action];
        let y0 = [self.theta1, self.theta2, self.dtheta1, self.dtheta2];
        let f = |y: &[f64; 4]| derivatives(y, torque, link_len_1, link_len_2);
        let k1 = f(&y0);
        let k2 = f(&axpy(&y0, DT / 2.0, &k1));
        let k3 = f(&axpy(&y0, DT / 2.0, &k2));
        let k4 = f(&axpy(&y0, DT, &k3));
        let mut y = [0.0; 4];
        for i in 0..4 {
            y[i] = y0[i] + DT / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Self {
            theta1: wrap(y[0], -PI, PI),
            theta2: wrap(y[1], -PI, PI),
            dtheta1: y[2].clamp(-MAX_VEL_1, MAX_VEL_1),
            dtheta2: y[3].clamp(-MAX_VEL_2, MAX_VEL_2),
        }
    }

    /// Free end above the bar by one (unit) link length.
    pub fn at_goal(&self) -> bool {
        -self.theta1.cos() - (self.theta2 + self.theta1).cos() > 1.0
    }

    pub fn observation(&self) -> [f64; 6] {
        [
            self.theta1.cos(),
            self.theta1.sin(),
            self.theta2.cos(),
            self.theta2.sin(),
            self.dtheta1,
            self.dtheta2,
        ]
    }
}

fn axpy(y: &[f64; 4], h: f64, k: &[f64; 4]) -> [f64; 4] {
    [y[0] + h * k[0], y[1] + h * k[1], y[2] + h * k[2], y[3] + h * k[3]]
}

fn derivatives(s: &[f64; 4], torque: f64, l1: f64, l2: f64) -> [f64; 4] {
    let (m1, m2) = (LINK_MASS_1, LINK_MASS_2);
    let lc1 = l1 / 2.0;
    let lc2 = l2 / 2.0;
    let (i1, i2) = (LINK_MOI, LINK_MOI);
    let g = GRAVITY;
    let [theta1, theta2, dtheta1, dtheta2] = *s;
    let d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * theta2.cos()) + i1 + i2;
    let d2 = m2 * (lc2 * lc2 + l1 * lc2 * theta2.cos()) + i2;
    let phi2 = m2 * lc2 * g * (theta1 + theta2 - PI / 2.0).cos();
    let phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * theta2.sin()
        - 2.0 * m2 * l1 * lc2 * dtheta2 * dtheta1 * theta2.sin()
        + (m1 * lc1 + m2 * l1) * g * (theta1 - PI / 2.0).cos()
        + phi2;
    let ddtheta2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 * dtheta1 * theta2.sin() - phi2)
        / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
    let ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
    [dtheta1, dtheta2, ddtheta1, ddtheta2]
}

fn wrap(mut x: f64, lo: f64, hi: f64) -> f64 {
    let diff = hi - lo;
    while x > hi {
        x -= diff;
    }
    while x < lo {
        x += diff;
    }
    x
}
