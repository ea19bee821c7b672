//! Finite-horizon LQR tracking of a reference trajectory on a per-axis
//! damped double integrator, with state costs taken from the inverse
//! reference covariance.
//!
//! The plant state is `[p; v]` (positions then velocities, `2D` entries) and
//! the control is a force per axis. Only positions are penalized.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_positive, Error, Result};
use crate::gmr::GmrPrediction;
use crate::gp::PosteriorPrediction;
use crate::linalg::{eigenvalues, floored_inverse, min_eigenvalue, stable_norm, symmetrize};

/// Largest condition number accepted for `R + BᵀPB` and the state costs.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceTrajectory {
    times: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
}

impl ReferenceTrajectory {
    pub fn new(
        times: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidParam("a reference needs at least two steps".into()));
        }
        check_dim(times.len(), means.len(), "reference means")?;
        check_dim(times.len(), covariances.len(), "reference covariances")?;
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParam("reference times must be strictly increasing".into()));
        }
        let d = means[0].len();
        for (t, (m, c)) in means.iter().zip(&covariances).enumerate() {
            check_dim(d, m.len(), "reference mean").map_err(|e| e.at(t))?;
            check_dim(d, c.nrows(), "reference covariance").map_err(|e| e.at(t))?;
            check_dim(d, c.ncols(), "reference covariance").map_err(|e| e.at(t))?;
            let scale = c.amax().max(f64::MIN_POSITIVE);
            if (c - c.transpose()).amax() > 1e-9 * scale || min_eigenvalue(c) < -1e-9 * scale {
                return Err(Error::InvalidParam(format!(
                    "reference covariance at step {t} is not symmetric PSD"
                )));
            }
        }
        Ok(Self {
            times,
            means,
            covariances,
        })
    }

    pub fn from_posterior(times: Vec<f64>, preds: &[PosteriorPrediction]) -> Result<Self> {
        Self::new(
            times,
            preds.iter().map(|p| p.mean.clone()).collect(),
            preds.iter().map(|p| p.covariance.clone()).collect(),
        )
    }

    pub fn from_gmr(times: Vec<f64>, preds: &[GmrPrediction]) -> Result<Self> {
        Self::new(
            times,
            preds.iter().map(|p| p.mean.clone()).collect(),
            preds.iter().map(|p| p.covariance.clone()).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn output_dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    /// Index of the step whose time is closest to `t`.
    pub fn nearest_step(&self, t: f64) -> usize {
        (0..self.len())
            .min_by(|&a, &b| (self.times[a] - t).abs().total_cmp(&(self.times[b] - t).abs()))
            .unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantParams {
    pub mass: f64,
    /// Viscous damping coefficient.
    pub damping: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            damping: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// `α` in `Q = α (Σ + ε_Q I)⁻¹`.
    pub precision_scale: f64,
    /// `r` in `R = r I`.
    pub control_cost: f64,
    pub plant: PlantParams,
    /// `ε_Q`.
    pub covariance_floor: f64,
    /// Standard deviation of the velocity disturbance added each step.
    pub disturbance_std: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            precision_scale: 1.0,
            control_cost: 1e-6,
            plant: PlantParams::default(),
            covariance_floor: 1e-6,
            disturbance_std: 0.0,
        }
    }
}

impl TrackerConfig {
    fn validate(&self) -> Result<()> {
        check_positive("precision_scale", self.precision_scale)?;
        check_positive("control_cost", self.control_cost)?;
        check_positive("mass", self.plant.mass)?;
        if !(self.plant.damping >= 0.0 && self.plant.damping.is_finite()) {
            return Err(Error::NonPositiveParam {
                name: "damping",
                value: self.plant.damping,
            });
        }
        if !(self.covariance_floor >= 0.0 && self.covariance_floor.is_finite()) {
            return Err(Error::NonPositiveParam {
                name: "covariance_floor",
                value: self.covariance_floor,
            });
        }
        if !(self.disturbance_std >= 0.0 && self.disturbance_std.is_finite()) {
            return Err(Error::NonPositiveParam {
                name: "disturbance_std",
                value: self.disturbance_std,
            });
        }
        Ok(())
    }
}

/// Position cost matrices `Q_t = α (Σ_t + ε_Q I)⁻¹`, one per step.
pub fn gains_from_covariance(
    reference: &ReferenceTrajectory,
    config: &TrackerConfig,
) -> Result<Vec<DMatrix<f64>>> {
    config.validate()?;
    let d = reference.output_dim();
    Ok(reference
        .covariances
        .iter()
        .map(|c| {
            let floored = c + DMatrix::identity(d, d) * config.covariance_floor;
            let mut q = floored_inverse(&floored, f64::MIN_POSITIVE) * config.precision_scale;
            symmetrize(&mut q);
            q
        })
        .collect())
}

/// Discrete dynamics for one step of length `dt`.
pub fn plant_matrices(d: usize, dt: f64, plant: &PlantParams) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut a = DMatrix::identity(2 * d, 2 * d);
    let mut b = DMatrix::zeros(2 * d, d);
    let decay = 1.0 - plant.damping * dt / plant.mass;
    for i in 0..d {
        a[(i, d + i)] = dt;
        a[(d + i, d + i)] = decay;
        b[(i, i)] = dt * dt / (2.0 * plant.mass);
        b[(d + i, i)] = dt / plant.mass;
    }
    (a, b)
}

/// Time-varying affine feedback law `u_t = −K_t x_t + k_t` plus the value
/// function `V_t(x) = xᵀP_t x − 2 s_tᵀ x + c_t`.
#[derive(Clone, Debug)]
pub struct GainSchedule {
    pub feedback: Vec<DMatrix<f64>>,
    pub feedforward: Vec<DVector<f64>>,
    pub value_p: Vec<DMatrix<f64>>,
    pub value_s: Vec<DVector<f64>>,
    pub value_c: Vec<f64>,
    /// Position cost per step, as passed in.
    pub state_costs: Vec<DMatrix<f64>>,
}

impl GainSchedule {
    /// Optimal cost from `x0` predicted by the recursion.
    pub fn predicted_cost(&self, x0: &DVector<f64>) -> f64 {
        (x0.transpose() * &self.value_p[0] * x0)[0] - 2.0 * self.value_s[0].dot(x0) + self.value_c[0]
    }
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let ev = eigenvalues(m);
    let (lo, hi) = (ev.min(), ev.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

fn embed_position_cost(q: &DMatrix<f64>) -> DMatrix<f64> {
    let d = q.nrows();
    let mut out = DMatrix::zeros(2 * d, 2 * d);
    out.view_mut((0, 0), (d, d)).copy_from(q);
    out
}

fn reference_state(p: &DVector<f64>) -> DVector<f64> {
    let d = p.len();
    let mut r = DVector::zeros(2 * d);
    r.rows_mut(0, d).copy_from(p);
    r
}

/// Backward Riccati recursion for the tracking problem
/// `Σ_t (x_t − r_t)ᵀ Q̄_t (x_t − r_t) + Σ_t u_tᵀ R u_t`.
pub fn solve_lqr(
    reference: &ReferenceTrajectory,
    state_costs: &[DMatrix<f64>],
    config: &TrackerConfig,
) -> Result<GainSchedule> {
    config.validate()?;
    let t_len = reference.len();
    let d = reference.output_dim();
    check_dim(t_len, state_costs.len(), "state cost schedule")?;
    for (t, q) in state_costs.iter().enumerate() {
        let cond = condition_number(q);
        if !(cond <= MAX_CONDITION) {
            return Err(Error::IllConditionedRiccati { step: t, condition: cond });
        }
    }
    let r = DMatrix::identity(d, d) * config.control_cost;

    let mut p = vec![DMatrix::zeros(2 * d, 2 * d); t_len];
    let mut s = vec![DVector::zeros(2 * d); t_len];
    let mut c = vec![0.0; t_len];
    let mut feedback = vec![DMatrix::zeros(d, 2 * d); t_len - 1];
    let mut feedforward = vec![DVector::zeros(d); t_len - 1];

    let last = t_len - 1;
    let q_last = embed_position_cost(&state_costs[last]);
    let r_last = reference_state(&reference.means[last]);
    s[last] = &q_last * &r_last;
    c[last] = r_last.dot(&s[last]);
    p[last] = q_last;

    for t in (0..last).rev() {
        let dt = reference.times[t + 1] - reference.times[t];
        let (a, b) = plant_matrices(d, dt, &config.plant);
        let pn = &p[t + 1];
        let sn = &s[t + 1];
        let pb = pn * &b;
        let mut g = &r + b.transpose() * &pb;
        symmetrize(&mut g);
        let cond = condition_number(&g);
        if !(cond <= MAX_CONDITION) {
            return Err(Error::IllConditionedRiccati { step: t, condition: cond });
        }
        let g_chol = g
            .clone()
            .cholesky()
            .ok_or(Error::IllConditionedRiccati { step: t, condition: cond })?;
        let k = g_chol.solve(&(pb.transpose() * &a));
        let bts = b.transpose() * sn;
        let kff = g_chol.solve(&bts);
        let closed = &a - &b * &k;

        let q = embed_position_cost(&state_costs[t]);
        let rt = reference_state(&reference.means[t]);
        let mut pt = &q + a.transpose() * pn * &closed;
        symmetrize(&mut pt);
        let qr = &q * &rt;
        let st = &qr + closed.transpose() * sn;
        let ct = rt.dot(&qr) + c[t + 1] - bts.dot(&kff);
        if pt.iter().chain(st.iter()).any(|v| !v.is_finite()) || !ct.is_finite() {
            return Err(Error::IllConditionedRiccati {
                step: t,
                condition: f64::INFINITY,
            });
        }
        p[t] = pt;
        s[t] = st;
        c[t] = ct;
        feedback[t] = k;
        feedforward[t] = kff;
    }
    Ok(GainSchedule {
        feedback,
        feedforward,
        value_p: p,
        value_s: s,
        value_c: c,
        state_costs: state_costs.to_vec(),
    })
}

/// Scenario geometry used for scoring only.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    #[serde(default)]
    pub via_points: Vec<TimedPoint>,
    #[serde(default)]
    pub obstacles: Vec<Disk>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedPoint {
    pub time: f64,
    pub position: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Execution {
    pub times: Vec<f64>,
    pub positions: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    /// `‖p_t − ref_t‖` per step.
    pub errors: Vec<f64>,
    pub rms_error: f64,
    pub max_error: f64,
    pub cost: f64,
    pub predicted_cost: f64,
    /// Distance to each via-point at its nearest step.
    pub via_point_misses: Vec<f64>,
    /// `min_t ‖p_t − c‖ − r` over all obstacles; absent without obstacles.
    pub min_clearance: Option<f64>,
    /// Unit displacement over the last 10% of steps.
    pub final_approach: Vec<f64>,
    pub diverged: bool,
}

/// Forward-simulates the closed loop from the reference start (position
/// `ref_0`, velocity from the first finite difference).
pub fn simulate(
    reference: &ReferenceTrajectory,
    schedule: &GainSchedule,
    config: &TrackerConfig,
    geometry: &Geometry,
    seed: u64,
) -> Result<Execution> {
    config.validate()?;
    let d = reference.output_dim();
    let t_len = reference.len();
    let mut x = DVector::zeros(2 * d);
    x.rows_mut(0, d).copy_from(&reference.means[0]);
    let dt0 = reference.times[1] - reference.times[0];
    let v0 = (&reference.means[1] - &reference.means[0]) / dt0;
    x.rows_mut(d, d).copy_from(&v0);
    let x0 = x.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = DMatrix::identity(d, d) * config.control_cost;

    let mut positions = Vec::with_capacity(t_len);
    let mut velocities = Vec::with_capacity(t_len);
    let mut controls = Vec::with_capacity(t_len - 1);
    let mut errors = Vec::with_capacity(t_len);
    let mut cost = 0.0;
    let mut diverged = false;
    for t in 0..t_len {
        let p = x.rows(0, d).clone_owned();
        let e = &p - &reference.means[t];
        cost += (e.transpose() * &schedule.state_costs[t] * &e)[0];
        errors.push(stable_norm(&e));
        positions.push(p.iter().copied().collect::<Vec<_>>());
        velocities.push(x.rows(d, d).iter().copied().collect::<Vec<_>>());
        if !x.iter().all(|v| v.is_finite()) {
            diverged = true;
        }
        if t == t_len - 1 {
            break;
        }
        let u = -&schedule.feedback[t] * &x + &schedule.feedforward[t];
        cost += (u.transpose() * &r * &u)[0];
        let dt = reference.times[t + 1] - reference.times[t];
        let (a, b) = plant_matrices(d, dt, &config.plant);
        x = &a * &x + &b * &u;
        if config.disturbance_std > 0.0 {
            for i in 0..d {
                x[d + i] += config.disturbance_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        controls.push(u.iter().copied().collect());
    }
    let scale = reference
        .means
        .iter()
        .map(|m| m.amax())
        .fold(0.0, f64::max)
        .max(1.0);
    if errors.iter().any(|e| !e.is_finite() || *e > 1e6 * scale) {
        diverged = true;
    }
    let rms_error = (errors.iter().map(|e| e * e).sum::<f64>() / t_len as f64).sqrt();
    let max_error = errors.iter().copied().fold(0.0, f64::max);

    let via_point_misses = geometry
        .via_points
        .iter()
        .map(|v| {
            let t = reference.nearest_step(v.time);
            distance(&positions[t], &v.position)
        })
        .collect();
    let min_clearance = (!geometry.obstacles.is_empty()).then(|| {
        positions
            .iter()
            .flat_map(|p| geometry.obstacles.iter().map(move |o| distance(p, &o.center) - o.radius))
            .fold(f64::INFINITY, f64::min)
    });
    let final_approach = approach_direction(&positions, 0.1);

    Ok(Execution {
        times: reference.times.clone(),
        positions,
        velocities,
        controls,
        errors,
        rms_error,
        max_error,
        cost,
        predicted_cost: schedule.predicted_cost(&x0),
        via_point_misses,
        min_clearance,
        final_approach,
        diverged,
    })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Unit vector of the displacement over the last `fraction` of a path.
pub fn approach_direction(path: &[Vec<f64>], fraction: f64) -> Vec<f64> {
    let n = path.len();
    let span = ((n as f64 * fraction).ceil() as usize).clamp(1, n.saturating_sub(1).max(1));
    let end = &path[n - 1];
    let start = &path[n - 1 - span.min(n - 1)];
    let disp: Vec<f64> = end.iter().zip(start).map(|(a, b)| a - b).collect();
    let norm = disp.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        disp.iter().map(|v| v / norm).collect()
    } else {
        disp
    }
}

/// Angle between two vectors, in degrees.
pub fn angle_deg(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Gains, schedule and execution in one call.
pub fn track(
    reference: &ReferenceTrajectory,
    config: &TrackerConfig,
    geometry: &Geometry,
    seed: u64,
) -> Result<(GainSchedule, Execution)> {
    let q = gains_from_covariance(reference, config)?;
    let schedule = solve_lqr(reference, &q, config)?;
    let exec = simulate(reference, &schedule, config, geometry, seed)?;
    Ok((schedule, exec))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_reference(n: usize, cov: DMatrix<f64>) -> ReferenceTrajectory {
        let times: Vec<f64> = (0..n).map(|i| i as f64 * 0.05).collect();
        let means = times.iter().map(|t| DVector::from_vec(vec![t.sin(), 0.5 * t])).collect();
        ReferenceTrajectory::new(times, means, vec![cov; n]).unwrap()
    }

    #[test]
    fn identity_covariance_gives_identity_cost() {
        let r = line_reference(3, DMatrix::identity(2, 2));
        let cfg = TrackerConfig {
            covariance_floor: 0.0,
            ..TrackerConfig::default()
        };
        let q = gains_from_covariance(&r, &cfg).unwrap();
        assert!((&q[0] - DMatrix::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn certain_axis_is_stiffer() {
        let r = line_reference(3, DMatrix::from_diagonal(&DVector::from_vec(vec![0.01, 1.0])));
        let cfg = TrackerConfig {
            covariance_floor: 0.0,
            ..TrackerConfig::default()
        };
        let q = gains_from_covariance(&r, &cfg).unwrap();
        assert!((q[1][(0, 0)] / q[1][(1, 1)] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_references() {
        let m = vec![DVector::zeros(1); 2];
        let c = vec![DMatrix::identity(1, 1); 2];
        assert!(ReferenceTrajectory::new(vec![0.0, 0.0], m.clone(), c.clone()).is_err());
        assert!(ReferenceTrajectory::new(vec![0.0], m[..1].to_vec(), c[..1].to_vec()).is_err());
        let bad = vec![DMatrix::from_element(1, 1, -1.0); 2];
        assert!(ReferenceTrajectory::new(vec![0.0, 1.0], m, bad).is_err());
    }

    #[test]
    fn ill_conditioned_costs_are_rejected() {
        let r = line_reference(4, DMatrix::identity(2, 2));
        let q = vec![DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-14])); 4];
        assert!(matches!(
            solve_lqr(&r, &q, &TrackerConfig::default()),
            Err(Error::IllConditionedRiccati { .. })
        ));
    }

    #[test]
    fn approach_direction_of_a_descent() {
        let path: Vec<Vec<f64>> = (0..=20).map(|i| vec![0.0, 1.0 - i as f64 * 0.05]).collect();
        let dir = approach_direction(&path, 0.1);
        assert!(angle_deg(&dir, &[0.0, -1.0]) < 1e-6);
    }
}
