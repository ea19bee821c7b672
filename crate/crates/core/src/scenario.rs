//! Tracking scenarios: a reference model, a query grid, optional via-points,
//! scoring geometry and tracker settings in one JSON document.
//!
//! ```json
//! {
//!   "tracker": {"precision_scale": 1, "control_cost": 1e-6},
//!   "reference": {"model": "model.json", "method": "gmr-gp", "grid": "0:5:0.0625",
//!                 "via_points": [{"input": [0], "output": [0, 0.3], "noise": 1e-6}]},
//!   "obstacles": [{"center": [0.4, 0.5], "radius": 0.08}],
//!   "goal": {"center": [0.8, 0.25], "radius": 0.02}
//! }
//! ```
//!
//! `model` is resolved relative to the scenario file and may hold a GMR-GP
//! model or a bare GMM (`gmr` method only). Scenario via-points replace the
//! ones stored in the model.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmr::gmr_predict_batch;
use crate::gmrgp::ViaPoint;
use crate::io::{grid_inputs, load_model, parse_grid, LoadedModel};
use crate::lqr::{track, Disk, Execution, GainSchedule, Geometry, ReferenceTrajectory, TimedPoint, TrackerConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceMethod {
    #[default]
    GmrGp,
    Gmr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSource {
    pub model: PathBuf,
    #[serde(default)]
    pub method: ReferenceMethod,
    /// `"start:stop:step"` over the (scalar) input.
    pub grid: String,
    #[serde(default)]
    pub via_points: Vec<ViaPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub tracker: TrackerConfig,
    pub reference: ReferenceSource,
    #[serde(default)]
    pub obstacles: Vec<Disk>,
    #[serde(default)]
    pub goal: Option<Goal>,
    /// Seed of the velocity disturbance.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingSummary {
    pub steps: usize,
    pub rms_error: f64,
    pub max_error: f64,
    pub cost: f64,
    pub predicted_cost: f64,
    pub via_point_misses: Vec<f64>,
    pub min_clearance: Option<f64>,
    pub goal_distance: Option<f64>,
    pub goal_reached: Option<bool>,
    pub final_approach: Vec<f64>,
    pub diverged: bool,
}

pub struct ScenarioRun {
    pub reference: ReferenceTrajectory,
    pub schedule: GainSchedule,
    pub execution: Execution,
    pub summary: TrackingSummary,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Builds the reference, solves the LQR problem and simulates it.
    /// Relative model paths resolve against `base_dir`.
    pub fn run(&self, base_dir: &Path) -> Result<ScenarioRun> {
        let ts = parse_grid(&self.reference.grid)?;
        let xs = grid_inputs(&ts);
        let path = base_dir.join(&self.reference.model);
        let model = load_model(&path)?;
        let (reference, via) = match (self.reference.method, model) {
            (ReferenceMethod::GmrGp, LoadedModel::GmrGp(m)) => {
                let m = if self.reference.via_points.is_empty() {
                    m
                } else {
                    m.adapt(self.reference.via_points.clone())?
                };
                let preds = m.predict_trajectory(&xs)?;
                (ReferenceTrajectory::from_posterior(ts, &preds)?, m.via_points().to_vec())
            }
            (ReferenceMethod::GmrGp, LoadedModel::Gmm(_)) => {
                return Err(Error::InvalidParam(format!(
                    "{} holds a bare GMM; the gmr-gp method needs a GMR-GP model",
                    path.display()
                )))
            }
            (ReferenceMethod::Gmr, loaded) => {
                let preds = gmr_predict_batch(loaded.gmm(), &xs)?;
                (ReferenceTrajectory::from_gmr(ts, &preds)?, self.reference.via_points.clone())
            }
        };
        let geometry = Geometry {
            via_points: via
                .iter()
                .filter(|v| v.input.len() == 1)
                .map(|v| TimedPoint {
                    time: v.input[0],
                    position: v.output.clone(),
                })
                .collect(),
            obstacles: self.obstacles.clone(),
        };
        let (schedule, execution) = track(&reference, &self.tracker, &geometry, self.seed)?;
        let goal_distance = self.goal.as_ref().map(|g| {
            let last = execution.positions.last().expect("non-empty execution");
            DVector::from_iterator(last.len(), last.iter().zip(&g.center).map(|(a, b)| a - b)).norm()
        });
        let summary = TrackingSummary {
            steps: execution.times.len(),
            rms_error: execution.rms_error,
            max_error: execution.max_error,
            cost: execution.cost,
            predicted_cost: execution.predicted_cost,
            via_point_misses: execution.via_point_misses.clone(),
            min_clearance: execution.min_clearance,
            goal_distance,
            goal_reached: self
                .goal
                .as_ref()
                .zip(goal_distance)
                .map(|(g, d)| d <= g.radius),
            final_approach: execution.final_approach.clone(),
            diverged: execution.diverged,
        };
        Ok(ScenarioRun {
            reference,
            schedule,
            execution,
            summary,
        })
    }
}

/// Per-step report: `t, p…, v…, ref…, error, trace_q, gain_norm`.
pub fn write_tracking_csv<W: Write>(out: W, run: &ScenarioRun) -> Result<()> {
    let d = run.reference.output_dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|i| format!("p{i}")));
    header.extend((0..d).map(|i| format!("v{i}")));
    header.extend((0..d).map(|i| format!("ref{i}")));
    header.extend(["error", "trace_q", "gain_norm"].map(String::from));
    w.write_record(&header)?;
    let e = &run.execution;
    for t in 0..e.times.len() {
        let gain = run.schedule.feedback.get(t).map_or(0.0, |k| k.norm());
        let mut row = vec![e.times[t].to_string()];
        row.extend(e.positions[t].iter().map(f64::to_string));
        row.extend(e.velocities[t].iter().map(f64::to_string));
        row.extend(run.reference.means()[t].iter().map(f64::to_string));
        row.push(e.errors[t].to_string());
        row.push(run.schedule.state_costs[t].trace().to_string());
        row.push(gain.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
