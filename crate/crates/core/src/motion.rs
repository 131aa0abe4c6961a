//! Constant-velocity Kalman filter over box center and size.
//!
//! State vector: `[cx, cy, w, h, vx, vy, vw, vh]` in pixels and pixels per
//! frame. Measurements are `[cx, cy, w, h]` of an observed box.

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

type State = SVector<f64, 8>;
type Covariance = SMatrix<f64, 8, 8>;
type Measurement = SVector<f64, 4>;

/// Smallest width or height a predicted box may have, in pixels.
pub const MIN_SIZE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionParams {
    /// Standard deviation of observed center and size, pixels.
    pub measurement_sigma: f64,
    /// Acceleration noise on center coordinates, pixels/frame².
    pub position_process_sigma: f64,
    /// Acceleration noise on width and height, pixels/frame².
    pub size_process_sigma: f64,
    /// Prior standard deviation of the initial velocities, pixels/frame.
    pub initial_velocity_sigma: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            measurement_sigma: 1.0,
            position_process_sigma: 1.0,
            size_process_sigma: 0.1,
            initial_velocity_sigma: 10.0,
        }
    }
}

impl MotionParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("measurement_sigma", self.measurement_sigma),
            ("position_process_sigma", self.position_process_sigma),
            ("size_process_sigma", self.size_process_sigma),
            ("initial_velocity_sigma", self.initial_velocity_sigma),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }

    fn transition() -> Covariance {
        let mut f = Covariance::identity();
        for i in 0..4 {
            f[(i, i + 4)] = 1.0;
        }
        f
    }

    /// Discrete white-noise acceleration model with unit time step.
    fn process_noise(&self) -> Covariance {
        let mut q = Covariance::zeros();
        for i in 0..4 {
            let sigma = if i < 2 {
                self.position_process_sigma
            } else {
                self.size_process_sigma
            };
            let var = sigma * sigma;
            q[(i, i)] = 0.25 * var;
            q[(i, i + 4)] = 0.5 * var;
            q[(i + 4, i)] = 0.5 * var;
            q[(i + 4, i + 4)] = var;
        }
        q
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionFilter {
    state: State,
    covariance: Covariance,
    params: MotionParams,
}

fn measure(bbox: &BoundingBox) -> Measurement {
    let (cx, cy) = bbox.center();
    Measurement::new(cx, cy, bbox.width(), bbox.height())
}

fn observation() -> SMatrix<f64, 4, 8> {
    let mut h = SMatrix::<f64, 4, 8>::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

impl MotionFilter {
    /// Starts at `bbox` with zero velocity.
    pub fn new(bbox: &BoundingBox, params: MotionParams) -> Self {
        let z = measure(bbox);
        let mut state = State::zeros();
        state.fixed_rows_mut::<4>(0).copy_from(&z);
        let pos_var = params.measurement_sigma.powi(2);
        let vel_var = params.initial_velocity_sigma.powi(2);
        let covariance = Covariance::from_diagonal(&SVector::<f64, 8>::from([
            pos_var, pos_var, pos_var, pos_var, vel_var, vel_var, vel_var, vel_var,
        ]));
        Self {
            state,
            covariance,
            params,
        }
    }

    fn clamp_size(state: &mut State) {
        state[2] = state[2].max(MIN_SIZE);
        state[3] = state[3].max(MIN_SIZE);
    }

    fn time_update(&self) -> (State, Covariance) {
        let f = MotionParams::transition();
        let mut state = f * self.state;
        Self::clamp_size(&mut state);
        let covariance = f * self.covariance * f.transpose() + self.params.process_noise();
        (state, covariance)
    }

    /// Advances one frame without a measurement.
    pub fn advance(&mut self) {
        let (state, covariance) = self.time_update();
        self.state = state;
        self.covariance = covariance;
    }

    /// Corrects the current state with an observed box.
    pub fn correct(&mut self, bbox: &BoundingBox) {
        let h = observation();
        let r = SMatrix::<f64, 4, 4>::identity() * self.params.measurement_sigma.powi(2);
        let innovation = measure(bbox) - h * self.state;
        let s = h * self.covariance * h.transpose() + r;
        // s is symmetric positive definite: covariance is PSD and r > 0.
        let s_inv = s
            .cholesky()
            .map(|c| c.inverse())
            .unwrap_or_else(|| s.try_inverse().unwrap_or_else(SMatrix::identity));
        let gain = self.covariance * h.transpose() * s_inv;
        self.state += gain * innovation;
        Self::clamp_size(&mut self.state);
        // Joseph form keeps the covariance symmetric PSD.
        let i_kh = Covariance::identity() - gain * h;
        let p = i_kh * self.covariance * i_kh.transpose() + gain * r * gain.transpose();
        self.covariance = (p + p.transpose()) * 0.5;
    }

    /// Center and size expected in the next frame.
    pub fn predicted_state(&self) -> [f64; 4] {
        let (s, _) = self.time_update();
        [s[0], s[1], s[2], s[3]]
    }

    /// Velocity estimate `[vx, vy, vw, vh]`.
    pub fn velocity(&self) -> [f64; 4] {
        [self.state[4], self.state[5], self.state[6], self.state[7]]
    }

    pub fn covariance(&self) -> &SMatrix<f64, 8, 8> {
        &self.covariance
    }

    /// Box expected in the next frame, kept inside the frame with at least
    /// `MIN_SIZE` extent on each axis.
    pub fn predict_box(&self, frame_w: f64, frame_h: f64) -> BoundingBox {
        let [cx, cy, w, h] = self.predicted_state();
        state_to_box(cx, cy, w, h, frame_w, frame_h)
    }
}

/// Corner box from center and size, clamped into a `frame_w x frame_h`
/// frame.
pub fn state_to_box(cx: f64, cy: f64, w: f64, h: f64, frame_w: f64, frame_h: f64) -> BoundingBox {
    let axis = |c: f64, size: f64, limit: f64| {
        let limit = limit.max(MIN_SIZE);
        let lo = (c - size / 2.0).clamp(0.0, limit - MIN_SIZE);
        let hi = (c + size / 2.0).clamp(lo + MIN_SIZE, limit);
        (lo, hi)
    };
    let (x0, x1) = axis(cx, w.max(MIN_SIZE), frame_w);
    let (y0, y1) = axis(cy, h.max(MIN_SIZE), frame_h);
    BoundingBox::new(x0, y0, x1, y1).expect("clamped box is valid")
}
