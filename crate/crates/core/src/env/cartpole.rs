use rand::Rng;

pub const GRAVITY: f64 = 9.8;
pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
pub const FORCE_MAG: f64 = 10.0;
pub const TAU: f64 = 0.02;
pub const X_THRESHOLD: f64 = 2.4;
pub const THETA_THRESHOLD: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartPoleState {
    pub fn sample_initial<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            x: rng.gen_range(-0.05..=0.05),
            x_dot: rng.gen_range(-0.05..=0.05),
            theta: rng.gen_range(-0.05..=0.05),
            theta_dot: rng.gen_range(-0.05..=0.05),
        }
    }

    /// Euler step of the cart-pole equations of motion. `pole_length` is
    /// the half-length of the pole (0.5 in the standard task).
    pub fn step(&self, action: usize, pole_length: f64) -> Self {
        let total_mass = CART_MASS + POLE_MASS;
        let polemass_length = POLE_MASS * pole_length;
        let force = if action == 1 { FORCE_MAG } else { -FORCE_MAG };
        let (sintheta, costheta) = self.theta.sin_cos();
        let temp = (force + polemass_length * self.theta_dot * self.theta_dot * sintheta) / total_mass;
        let thetaacc = (GRAVITY * sintheta - costheta * temp)
            / (pole_length * (4.0 / 3.0 - POLE_MASS * costheta * costheta / total_mass));
        let xacc = temp - polemass_length * thetaacc * costheta / total_mass;
        Self {
            x: self.x + TAU * self.x_dot,
            x_dot: self.x_dot + TAU * xacc,
            theta: self.theta + TAU * self.theta_dot,
            theta_dot: self.theta_dot + TAU * thetaacc,
        }
    }

    pub fn failed(&self) -> bool {
        self.x < -X_THRESHOLD
            || self.x > X_THRESHOLD
            || self.theta < -THETA_THRESHOLD
            || self.theta > THETA_THRESHOLD
    }

    pub fn observation(&self) -> [f64; 4] {
        [self.x, self.x_dot, self.theta, self.theta_dot]
    }
}
