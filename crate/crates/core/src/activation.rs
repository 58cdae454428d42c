//! Smoothed ReLU: a quadratic blend on `[-η, η]`, `max(0, y)` elsewhere.

pub const DEFAULT_ETA: f64 = 1e-4;

#[inline]
pub fn smooth_relu(y: f64, eta: f64) -> f64 {
    if y > eta {
        y
    } else if y < -eta {
        0.0
    } else {
        y * y / (4.0 * eta) + 0.5 * y + 0.25 * eta
    }
}

#[inline]
pub fn smooth_relu_prime(y: f64, eta: f64) -> f64 {
    if y > eta {
        1.0
    } else if y < -eta {
        0.0
    } else {
        y / (2.0 * eta) + 0.5
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::RngState;

    const ETA: f64 = DEFAULT_ETA;

    #[test]
    fn branch_values() {
        assert_eq!(smooth_relu(1.0, ETA), 1.0);
        assert_eq!(smooth_relu(-1.0, ETA), 0.0);
        assert!((smooth_relu(0.0, ETA) - 2.5e-5).abs() < 1e-20);
        assert!((smooth_relu(ETA, ETA) - ETA).abs() < 1e-20);
        assert_eq!(smooth_relu_prime(0.0, ETA), 0.5);
        assert_eq!(smooth_relu_prime(2.0 * ETA, ETA), 1.0);
        assert_eq!(smooth_relu_prime(-ETA, ETA), 0.0);
    }

    #[test]
    fn c1_at_branch_points() {
        for eta in [1e-4, 0.3, 2.0] {
            let blend = |y: f64| y * y / (4.0 * eta) + 0.5 * y + 0.25 * eta;
            let blend_prime = |y: f64| y / (2.0 * eta) + 0.5;
            assert!((blend(eta) - eta).abs() <= 1e-15 * eta);
            assert!(blend(-eta).abs() <= 1e-15 * eta);
            assert_eq!(blend_prime(eta), 1.0);
            assert_eq!(blend_prime(-eta), 0.0);
        }
    }

    #[test]
    fn derivative_bounded_and_matches_fd() {
        let mut rng = RngState::from_seed(3);
        let h = ETA * 1e-4;
        for _ in 0..100 {
            let y = rng.uniform(-3.0 * ETA, 3.0 * ETA).unwrap();
            let d = smooth_relu_prime(y, ETA);
            assert!((0.0..=1.0).contains(&d));
            if (y.abs() - ETA).abs() < 2.0 * h {
                continue;
            }
            let fd = (smooth_relu(y + h, ETA) - smooth_relu(y - h, ETA)) / (2.0 * h);
            assert!((fd - d).abs() < 1e-6, "y = {y}: fd {fd} vs {d}");
        }
    }
}
