//! Constant-velocity Kalman filter over (cx, cy, aspect, height).
//!
//! Noise standard deviations scale with the box height, as in the reference
//! ByteTrack/DeepSORT motion model.

use nalgebra::{SMatrix, SVector};

use crate::ingest::BoundingBox;

pub type StateVector = SVector<f64, 8>;
pub type StateMatrix = SMatrix<f64, 8, 8>;
type Measurement = SVector<f64, 4>;
type MeasurementMatrix = SMatrix<f64, 4, 8>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanConfig {
    pub std_weight_position: f64,
    pub std_weight_velocity: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self { std_weight_position: 1.0 / 20.0, std_weight_velocity: 1.0 / 160.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVector,
    pub covariance: StateMatrix,
}

pub fn box_to_measurement(b: &BoundingBox) -> [f64; 4] {
    let (cx, cy) = b.center();
    [cx, cy, b.w / b.h, b.h]
}

impl KalmanState {
    pub fn initiate(b: &BoundingBox, cfg: &KalmanConfig) -> Self {
        let z = box_to_measurement(b);
        let mut mean = StateVector::zeros();
        for k in 0..4 {
            mean[k] = z[k];
        }
        let h = z[3];
        let p = cfg.std_weight_position;
        let v = cfg.std_weight_velocity;
        let std = [2.0 * p * h, 2.0 * p * h, 1e-2, 2.0 * p * h, 10.0 * v * h, 10.0 * v * h, 1e-5, 10.0 * v * h];
        let covariance = StateMatrix::from_diagonal(&StateVector::from_iterator(std.iter().map(|s| s * s)));
        Self { mean, covariance }
    }

    fn transition() -> StateMatrix {
        let mut f = StateMatrix::identity();
        for k in 0..4 {
            f[(k, k + 4)] = 1.0;
        }
        f
    }

    fn observation() -> MeasurementMatrix {
        let mut h = MeasurementMatrix::zeros();
        for k in 0..4 {
            h[(k, k)] = 1.0;
        }
        h
    }

    /// One constant-velocity step.
    pub fn predict(&mut self, cfg: &KalmanConfig) {
        let h = self.mean[3].abs();
        let p = cfg.std_weight_position;
        let v = cfg.std_weight_velocity;
        let std = [p * h, p * h, 1e-2, p * h, v * h, v * h, 1e-5, v * h];
        let q = StateMatrix::from_diagonal(&StateVector::from_iterator(std.iter().map(|s| s * s)));
        let f = Self::transition();
        self.mean = f * self.mean;
        self.covariance = f * self.covariance * f.transpose() + q;
    }

    pub fn update(&mut self, b: &BoundingBox, cfg: &KalmanConfig) {
        let z = Measurement::from(box_to_measurement(b));
        let hm = Self::observation();
        let h = self.mean[3].abs();
        let p = cfg.std_weight_position;
        let std = [p * h, p * h, 1e-1, p * h];
        let r = SMatrix::<f64, 4, 4>::from_diagonal(&Measurement::from_iterator(std.iter().map(|s| s * s)));
        let s = hm * self.covariance * hm.transpose() + r;
        let Some(s_inv) = s.try_inverse() else {
            // Degenerate innovation; trust the measurement position outright.
            for k in 0..4 {
                self.mean[k] = z[k];
            }
            return;
        };
        let gain = self.covariance * hm.transpose() * s_inv;
        self.mean += gain * (z - hm * self.mean);
        self.covariance -= gain * s * gain.transpose();
        // Re-symmetrize against round-off.
        self.covariance = (self.covariance + self.covariance.transpose()) * 0.5;
    }

    pub fn predicted_box(&self) -> BoundingBox {
        let (cx, cy, a, h) = (self.mean[0], self.mean[1], self.mean[2], self.mean[3]);
        let w = a * h;
        BoundingBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn velocity(&self) -> [f64; 4] {
        [self.mean[4], self.mean[5], self.mean[6], self.mean[7]]
    }

    /// Symmetric and nonnegative diagonal at the given tolerance.
    pub fn covariance_is_valid(&self, tol: f64) -> bool {
        let c = &self.covariance;
        (0..8).all(|i| c[(i, i)] >= -tol) && (0..8).all(|i| (0..8).all(|j| (c[(i, j)] - c[(j, i)]).abs() <= tol))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_velocity_keeps_position() {
        let cfg = KalmanConfig::default();
        let mut s = KalmanState::initiate(&BoundingBox::new(10.0, 20.0, 30.0, 40.0), &cfg);
        let before = s.mean;
        s.predict(&cfg);
        for k in 0..4 {
            assert_eq!(s.mean[k], before[k]);
        }
    }

    #[test]
    fn linear_motion() {
        let cfg = KalmanConfig::default();
        let mut s = KalmanState::initiate(&BoundingBox::new(0.0, 0.0, 20.0, 20.0), &cfg);
        s.mean[4] = 2.0;
        assert_eq!(s.mean[0], 10.0);
        s.predict(&cfg);
        assert_eq!(s.mean[0], 12.0);
    }

    #[test]
    fn update_pulls_toward_measurement() {
        let cfg = KalmanConfig::default();
        let mut s = KalmanState::initiate(&BoundingBox::new(0.0, 0.0, 20.0, 20.0), &cfg);
        for k in 1..10 {
            s.predict(&cfg);
            s.update(&BoundingBox::new(2.0 * k as f64, 0.0, 20.0, 20.0), &cfg);
        }
        assert!((s.velocity()[0] - 2.0).abs() < 0.5, "{:?}", s.velocity());
        assert!(s.covariance_is_valid(1e-9));
    }

    proptest! {
        #[test]
        fn predict_grows_trace(steps in proptest::collection::vec((0.0..500.0f64, 0.0..500.0f64, 5.0..100.0f64, 5.0..100.0f64, any::<bool>()), 1..20)) {
            let cfg = KalmanConfig::default();
            let (x, y, w, h, _) = steps[0];
            let mut s = KalmanState::initiate(&BoundingBox::new(x, y, w, h), &cfg);
            for &(x, y, w, h, do_update) in &steps[1..] {
                let before = s.covariance.trace();
                s.predict(&cfg);
                prop_assert!(s.covariance.trace() >= before);
                prop_assert!(s.covariance_is_valid(1e-9));
                if do_update {
                    s.update(&BoundingBox::new(x, y, w, h), &cfg);
                    prop_assert!(s.covariance_is_valid(1e-9));
                }
            }
        }
    }
}
