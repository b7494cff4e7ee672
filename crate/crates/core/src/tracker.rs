//! Constant-velocity Kalman filter over (x_c, y_c, w, h) boxes.
//!
//! State layout is `(x_c, y_c, w, h, vx, vy, vw, vh)`. Noise standard
//! deviations scale with the box width for x/w terms and with the box height
//! for y/h terms.

use nalgebra::{Matrix4, SMatrix, SVector, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{numerical, structural, Result};
use crate::scene::{EntityId, MotionStatus};

pub type Vector8 = SVector<f64, 8>;
pub type Matrix8 = SMatrix<f64, 8, 8>;
pub type Matrix4x8 = SMatrix<f64, 4, 8>;

/// Smallest box side the filter will predict, in pixels.
const MIN_BOX_SIDE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KalmanConfig {
    pub std_weight_position: f64,
    pub std_weight_velocity: f64,
    pub std_weight_measurement: f64,
    /// Initial std multipliers relative to the position/velocity weights.
    pub init_position_factor: f64,
    pub init_velocity_factor: f64,
    /// Process noise multiplier for entities flagged Moving by change detection.
    pub moving_process_scale: f64,
    /// Process noise multiplier for entities flagged Stationary.
    pub stationary_process_scale: f64,
    pub joseph_form: bool,
    pub max_frames_since_update: u64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            std_weight_position: 1.0 / 20.0,
            std_weight_velocity: 1.0 / 160.0,
            std_weight_measurement: 1.0 / 20.0,
            init_position_factor: 2.0,
            init_velocity_factor: 10.0,
            moving_process_scale: 1.0,
            stationary_process_scale: 1.0,
            joseph_form: false,
            max_frames_since_update: 90,
        }
    }
}

impl KalmanConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.std_weight_position,
            self.std_weight_velocity,
            self.std_weight_measurement,
            self.init_position_factor,
            self.init_velocity_factor,
            self.moving_process_scale,
            self.stationary_process_scale,
        ];
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(structural("kalman weights and scales must be positive and finite"));
        }
        Ok(())
    }

    pub fn process_scale(&self, motion: MotionStatus) -> f64 {
        match motion {
            MotionStatus::Moving => self.moving_process_scale,
            MotionStatus::Stationary => self.stationary_process_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub entity_id: EntityId,
    pub mean: Vector8,
    pub covariance: Matrix8,
    pub frames_since_update: u64,
}

pub fn observation_matrix() -> Matrix4x8 {
    let mut h = Matrix4x8::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

fn transition_matrix() -> Matrix8 {
    let mut f = Matrix8::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

fn symmetrize(p: &Matrix8) -> Matrix8 {
    (p + p.transpose()) * 0.5
}

fn check_box(z: &Vector4<f64>) -> Result<()> {
    if z.iter().any(|v| !v.is_finite()) || !(z[2] > 0.0 && z[3] > 0.0) {
        return Err(structural(format!(
            "measurement needs finite values and positive size, got {:?}",
            z.as_slice()
        )));
    }
    Ok(())
}

fn ensure_pd(p: &Matrix8, what: &str) -> Result<()> {
    if p.iter().any(|v| !v.is_finite()) || p.cholesky().is_none() {
        return Err(numerical(format!("{what} covariance is not positive definite")));
    }
    Ok(())
}

pub fn init_track(entity_id: EntityId, measurement: [f64; 4], cfg: &KalmanConfig) -> Result<TrackState> {
    let z = Vector4::from(measurement);
    check_box(&z)?;
    let (w, h) = (z[2], z[3]);
    let p = cfg.init_position_factor * cfg.std_weight_position;
    let v = cfg.init_velocity_factor * cfg.std_weight_velocity;
    let std = [p * w, p * h, p * w, p * h, v * w, v * h, v * w, v * h];
    let mut mean = Vector8::zeros();
    mean.fixed_rows_mut::<4>(0).copy_from(&z);
    Ok(TrackState {
        entity_id,
        mean,
        covariance: Matrix8::from_diagonal(&Vector8::from(std.map(|s| s * s))),
        frames_since_update: 0,
    })
}

/// Process noise for one step, sized from the track's current box.
pub fn process_noise(track: &TrackState, cfg: &KalmanConfig, scale: f64) -> Matrix8 {
    let (w, h) = (track.mean[2], track.mean[3]);
    let p = cfg.std_weight_position;
    let v = cfg.std_weight_velocity;
    let std = [p * w, p * h, p * w, p * h, v * w, v * h, v * w, v * h];
    Matrix8::from_diagonal(&Vector8::from(std.map(|s| s * s * scale)))
}

/// Measurement noise R for a track, sized from its current box.
pub fn measurement_noise(track: &TrackState, cfg: &KalmanConfig) -> Matrix4<f64> {
    let (w, h) = (track.mean[2], track.mean[3]);
    let m = cfg.std_weight_measurement;
    let std = [m * w, m * h, m * w, m * h];
    Matrix4::from_diagonal(&Vector4::from(std.map(|s| s * s)))
}

pub fn predict(track: &TrackState, cfg: &KalmanConfig) -> Result<TrackState> {
    predict_scaled(track, cfg, 1.0)
}

/// One constant-velocity step with the process noise multiplied by `scale`.
pub fn predict_scaled(track: &TrackState, cfg: &KalmanConfig, scale: f64) -> Result<TrackState> {
    let f = transition_matrix();
    let q = process_noise(track, cfg, scale);
    let mut mean = f * track.mean;
    mean[2] = mean[2].max(MIN_BOX_SIDE);
    mean[3] = mean[3].max(MIN_BOX_SIDE);
    let covariance = symmetrize(&(f * track.covariance * f.transpose() + q));
    ensure_pd(&covariance, "predicted")?;
    Ok(TrackState {
        entity_id: track.entity_id,
        mean,
        covariance,
        frames_since_update: track.frames_since_update + 1,
    })
}

pub fn update(track: &TrackState, measurement: [f64; 4], cfg: &KalmanConfig) -> Result<TrackState> {
    let z = Vector4::from(measurement);
    check_box(&z)?;
    let hm = observation_matrix();
    let r = measurement_noise(track, cfg);
    let p = &track.covariance;
    let s = hm * p * hm.transpose() + r;
    let chol = s
        .cholesky()
        .ok_or_else(|| numerical("innovation covariance is singular"))?;
    // K = P H^T S^-1, solved as S K^T = H P
    let kt = chol.solve(&(hm * p));
    let k = kt.transpose();
    let innovation = z - hm * track.mean;
    let mean = track.mean + k * innovation;
    let ikh = Matrix8::identity() - k * hm;
    let covariance = if cfg.joseph_form {
        ikh * p * ikh.transpose() + k * r * k.transpose()
    } else {
        ikh * p
    };
    let covariance = symmetrize(&covariance);
    ensure_pd(&covariance, "posterior")?;
    Ok(TrackState {
        entity_id: track.entity_id,
        mean,
        covariance,
        frames_since_update: 0,
    })
}

/// H P H^T: the box block of the covariance.
pub fn measurement_covariance(track: &TrackState) -> Matrix4<f64> {
    track.covariance.fixed_view::<4, 4>(0, 0).into_owned()
}

/// True once a track has gone too long without a detection.
pub fn is_stale(track: &TrackState, cfg: &KalmanConfig) -> bool {
    track.frames_since_update > cfg.max_frames_since_update
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> KalmanConfig {
        KalmanConfig::default()
    }

    fn track(m: [f64; 4]) -> TrackState {
        init_track(EntityId(1), m, &cfg()).unwrap()
    }

    #[test]
    fn init_sets_zero_velocity_and_positive_diagonal() {
        let t = track([100.0, 100.0, 50.0, 80.0]);
        assert_eq!(t.mean.as_slice(), &[100.0, 100.0, 50.0, 80.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((0..8).all(|i| t.covariance[(i, i)] > 0.0));
        assert_eq!(t, track([100.0, 100.0, 50.0, 80.0]));
        assert_eq!(t.frames_since_update, 0);
    }

    #[test]
    fn init_rejects_degenerate_box() {
        assert!(init_track(EntityId(1), [0.0, 0.0, 0.0, 5.0], &cfg()).is_err());
        assert!(init_track(EntityId(1), [0.0, 0.0, 5.0, -5.0], &cfg()).is_err());
    }

    #[test]
    fn predict_with_zero_velocity_and_no_noise_keeps_mean() {
        let t = track([10.0, 20.0, 30.0, 40.0]);
        let p1 = predict_scaled(&t, &cfg(), 0.0).unwrap();
        let p2 = predict_scaled(&p1, &cfg(), 0.0).unwrap();
        assert_eq!(p1.mean, t.mean);
        assert_eq!(p2.mean, t.mean);
        assert_eq!(p2.frames_since_update, 2);
    }

    #[test]
    fn predict_moves_positions_by_velocity() {
        let mut t = track([0.0, 0.0, 10.0, 10.0]);
        t.mean[4] = 1.0;
        t.mean[5] = 2.0;
        let p = predict(&t, &cfg()).unwrap();
        assert_eq!(&p.mean.as_slice()[..4], &[1.0, 2.0, 10.0, 10.0]);
    }

    #[test]
    fn update_with_predicted_measurement_keeps_mean() {
        let t = predict(&track([50.0, 60.0, 20.0, 40.0]), &cfg()).unwrap();
        let u = update(&t, [50.0, 60.0, 20.0, 40.0], &cfg()).unwrap();
        for i in 0..4 {
            assert!((u.mean[i] - t.mean[i]).abs() < 1e-12);
        }
        assert_eq!(u.frames_since_update, 0);
    }

    #[test]
    fn joseph_and_standard_update_agree() {
        let t = predict(&track([50.0, 60.0, 20.0, 40.0]), &cfg()).unwrap();
        let mut jc = cfg();
        jc.joseph_form = true;
        let a = update(&t, [52.0, 59.0, 21.0, 38.0], &cfg()).unwrap();
        let b = update(&t, [52.0, 59.0, 21.0, 38.0], &jc).unwrap();
        assert!((a.covariance - b.covariance).abs().max() < 1e-9);
        assert!((a.mean - b.mean).abs().max() < 1e-12);
    }

    #[test]
    fn measurement_covariance_is_top_left_block() {
        let mut t = track([1.0, 1.0, 1.0, 1.0]);
        t.covariance = Matrix8::from_diagonal(&Vector8::from([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]));
        assert_eq!(measurement_covariance(&t), Matrix4::from_diagonal(&Vector4::new(1.0, 2.0, 3.0, 4.0)));
    }

    /// Independent scalar Riccati recursion for one (position, velocity) pair.
    fn scalar_riccati_limit(p0: [f64; 2], q: [f64; 2], r: f64, steps: usize) -> f64 {
        // P = [[a, b], [b, c]]
        let (mut a, mut b, mut c) = (p0[0], 0.0, p0[1]);
        for _ in 0..steps {
            // predict: F = [[1, 1], [0, 1]]
            let a1 = a + 2.0 * b + c + q[0];
            let b1 = b + c;
            let c1 = c + q[1];
            // update with H = [1, 0]
            let s = a1 + r;
            a = a1 - a1 * a1 / s;
            b = b1 - a1 * b1 / s;
            c = c1 - b1 * b1 / s;
        }
        a
    }

    #[test]
    fn repeated_measurements_reach_riccati_floor() {
        let z = [120.0, 90.0, 40.0, 100.0];
        let c = cfg();
        let mut t = track(z);
        for _ in 0..100 {
            t = predict(&t, &c).unwrap();
            t = update(&t, z, &c).unwrap();
        }
        let hp = measurement_covariance(&t);
        let scales = [z[2], z[3], z[2], z[3]];
        for i in 0..4 {
            let s = scales[i];
            let p0 = [
                (c.init_position_factor * c.std_weight_position * s).powi(2),
                (c.init_velocity_factor * c.std_weight_velocity * s).powi(2),
            ];
            let q = [(c.std_weight_position * s).powi(2), (c.std_weight_velocity * s).powi(2)];
            let r = (c.std_weight_measurement * s).powi(2);
            let limit = scalar_riccati_limit(p0, q, r, 5000);
            assert!(((hp[(i, i)] - limit) / limit).abs() < 1e-6, "coord {i}: {} vs {limit}", hp[(i, i)]);
            assert!(hp[(i, i)] < r);
        }
    }

    fn random_spd() -> impl Strategy<Value = Matrix8> {
        proptest::collection::vec(-1.0f64..1.0, 64).prop_map(|v| {
            let a = Matrix8::from_row_slice(&v);
            a * a.transpose() + Matrix8::identity() * 0.5
        })
    }

    proptest! {
        #[test]
        fn predict_never_shrinks_determinant(p in random_spd(), w in 5.0f64..200.0, h in 5.0f64..200.0) {
            let mut t = track([100.0, 100.0, w, h]);
            t.covariance = p;
            let next = predict(&t, &cfg()).unwrap();
            prop_assert!(next.covariance.determinant() >= t.covariance.determinant() * (1.0 - 1e-9));
        }

        #[test]
        fn update_shrinks_projected_covariance(
            p in random_spd(),
            dz in prop::array::uniform4(-5.0f64..5.0),
        ) {
            let mut t = track([100.0, 100.0, 40.0, 60.0]);
            t.covariance = p;
            let z = [100.0 + dz[0], 100.0 + dz[1], 40.0 + dz[2], 60.0 + dz[3]];
            let u = update(&t, z, &cfg()).unwrap();
            let diff = measurement_covariance(&t) - measurement_covariance(&u);
            let eig = diff.symmetric_eigen();
            prop_assert!(eig.eigenvalues.iter().all(|e| *e > -1e-9));
            prop_assert!((u.covariance - u.covariance.transpose()).abs().max() < 1e-9);
        }

        #[test]
        fn measurement_block_det_grows_while_coasting(w in 5.0f64..300.0, h in 5.0f64..300.0) {
            let mut t = track([200.0, 200.0, w, h]);
            let mut last = measurement_covariance(&t).determinant();
            for _ in 0..50 {
                t = predict(&t, &cfg()).unwrap();
                let d = measurement_covariance(&t).determinant();
                prop_assert!(d > last);
                last = d;
            }
        }
    }
}
