use rand::Rng;

pub const MIN_POSITION: f64 = -1.2;
pub const MAX_POSITION: f64 = 0.6;
pub const MAX_SPEED: f64 = 0.07;
pub const GOAL_POSITION: f64 = 0.5;
pub const GOAL_VELOCITY: f64 = 0.0;
pub const FORCE: f64 = 0.001;
pub const GRAVITY: f64 = 0.0025;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MountainCarState {
    pub position: f64,
    pub velocity: f64,
}

impl MountainCarState {
    pub fn sample_initial<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            position: rng.gen_range(-0.6..=-0.4),
            velocity: 0.0,
        }
    }

    /// Applies one step of the underpowered-car dynamics. `noise` is added
    /// to the velocity update before clipping.
    pub fn step(&self, action: usize, noise: f64) -> Self {
        let mut velocity = self.velocity
            + (action as f64 - 1.0) * FORCE
            + (3.0 * self.position).cos() * (-GRAVITY)
            + noise;
        velocity = velocity.clamp(-MAX_SPEED, MAX_SPEED);
        let mut position = self.position + velocity;
        position = position.clamp(MIN_POSITION, MAX_POSITION);
        if position == MIN_POSITION && velocity < 0.0 {
            velocity = 0.0;
        }
        Self { position, velocity }
    }

    pub fn at_goal(&self) -> bool {
        self.position >= GOAL_POSITION && self.velocity >= GOAL_VELOCITY
    }

    pub fn observation(&self) -> [f64; 2] {
        [self.position, self.velocity]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn left_wall_stops_the_car() {
        let s = MountainCarState {
            position: -1.19,
            velocity: -0.05,
        };
        let n = s.step(0, 0.0);
        assert_eq!(n.position, MIN_POSITION);
        assert_eq!(n.velocity, 0.0);
    }

    #[test]
    fn speed_is_clipped() {
        let s = MountainCarState {
            position: -0.5,
            velocity: 0.069,
        };
        let n = s.step(2, 0.5);
        assert_eq!(n.velocity, MAX_SPEED);
    }

    #[test]
    fn goal_requires_non_negative_velocity() {
        let s = MountainCarState {
            position: 0.55,
            velocity: -0.001,
        };
        assert!(!s.at_goal());
        assert!(MountainCarState {
            position: 0.5,
            velocity: 0.0
        }
        .at_goal());
    }
}
