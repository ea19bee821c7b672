//! Synthetic demonstrations and reference fixtures.
//!
//! * `letter`: warped, perturbed traversals of a planar "B" drawn in
//!   `t ∈ [0, 2]`. The perturbation is small at the start of the stroke and
//!   grows over the bowls, so `t = 0.1` is a low-variability phase and
//!   `t = 1.3` a high-variability one.
//! * `minjerk`: a pick-over-then-insert motion on `t ∈ [0, 5]` made of
//!   minimum-jerk segments through fixed waypoints, ending with a vertical
//!   descent. Demonstrations agree at the start and during the descent and
//!   spread most around `t = 3`. Optionally 3-D with a near-constant depth
//!   coordinate.
//! * `gmm-draw`: joint samples of a given mixture, sorted by input.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::DemonstrationSet;
use crate::error::{Error, Result};
use crate::gmm::{GaussianComponent, GmmModel};
use crate::gmrgp::ViaPoint;
use crate::lqr::{Disk, Geometry, TimedPoint};

/// Low- and high-variability query inputs of the letter data.
pub const LETTER_LOW_VARIABILITY_T: f64 = 0.1;
pub const LETTER_HIGH_VARIABILITY_T: f64 = 1.3;
pub const LETTER_DURATION: f64 = 2.0;
pub const MINJERK_DURATION: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    Letter,
    Minjerk,
    GmmDraw,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "letter" => Ok(SynthKind::Letter),
            "minjerk" => Ok(SynthKind::Minjerk),
            "gmm-draw" => Ok(SynthKind::GmmDraw),
            other => Err(Error::InvalidParam(format!("unknown generator `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub demos: usize,
    /// Samples per demonstration.
    pub samples: usize,
    /// Multiplier on the perturbation amplitude.
    pub noise: f64,
    /// Output dimension for `minjerk` (2 or 3).
    pub output_dim: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            demos: 5,
            samples: 200,
            noise: 1.0,
            output_dim: 2,
        }
    }
}

impl SynthParams {
    fn validate(&self) -> Result<()> {
        if self.demos == 0 || self.samples < 2 {
            return Err(Error::InvalidParam(
                "need at least one demonstration of at least two samples".into(),
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidParam(format!("noise must be >= 0, got {}", self.noise)));
        }
        Ok(())
    }
}

/// `model` is required for `GmmDraw` and ignored otherwise.
pub fn generate_synthetic(
    kind: SynthKind,
    params: &SynthParams,
    model: Option<&GmmModel>,
    seed: u64,
) -> Result<DemonstrationSet> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        SynthKind::Letter => letter(params, &mut rng),
        SynthKind::Minjerk => minjerk(params, &mut rng),
        SynthKind::GmmDraw => {
            let model = model
                .ok_or_else(|| Error::InvalidParam("gmm-draw needs a mixture model".into()))?;
            gmm_draw(model, params, &mut rng)
        }
    }
}

/// Smooth random signal `Σ_k a_k sin(2πks + φ_k)` on `s ∈ [0, 1]`.
struct Wiggle {
    amps: Vec<f64>,
    phases: Vec<f64>,
}

impl Wiggle {
    const HARMONICS: usize = 3;

    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let amps = (1..=Self::HARMONICS)
            .map(|k| rng.sample::<f64, _>(StandardNormal) / k as f64)
            .collect();
        let phases = (0..Self::HARMONICS)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        Self { amps, phases }
    }

    fn at(&self, s: f64) -> f64 {
        self.amps
            .iter()
            .zip(&self.phases)
            .enumerate()
            .map(|(k, (a, p))| a * (std::f64::consts::TAU * (k + 1) as f64 * s + p).sin())
            .sum()
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

const LETTER_POINTS: [[f64; 2]; 15] = [
    [3.0, 2.0],
    [3.0, 4.0],
    [3.0, 6.0],
    [3.0, 8.0],
    [3.0, 10.0],
    [4.5, 10.2],
    [6.0, 9.6],
    [6.4, 8.2],
    [5.5, 6.7],
    [3.6, 6.1],
    [5.2, 5.9],
    [6.8, 5.0],
    [7.0, 3.3],
    [5.8, 2.2],
    [3.8, 2.0],
];

/// Uniform Catmull-Rom spline through the letter control points, `s ∈ [0, 1]`.
pub fn letter_path(s: f64) -> [f64; 2] {
    let n = LETTER_POINTS.len();
    let seg = (n - 1) as f64;
    let u = s.clamp(0.0, 1.0) * seg;
    let i = (u.floor() as usize).min(n - 2);
    let f = u - i as f64;
    let p = |k: isize| LETTER_POINTS[k.clamp(0, n as isize - 1) as usize];
    let (p0, p1, p2, p3) = (p(i as isize - 1), p(i as isize), p(i as isize + 1), p(i as isize + 2));
    let mut out = [0.0; 2];
    for d in 0..2 {
        out[d] = 0.5
            * (2.0 * p1[d]
                + (-p0[d] + p2[d]) * f
                + (2.0 * p0[d] - 5.0 * p1[d] + 4.0 * p2[d] - p3[d]) * f * f
                + (-p0[d] + 3.0 * p1[d] - 3.0 * p2[d] + p3[d]) * f * f * f);
    }
    out
}

fn letter(params: &SynthParams, rng: &mut ChaCha8Rng) -> Result<DemonstrationSet> {
    let ts: Vec<f64> = (0..params.samples)
        .map(|i| LETTER_DURATION * i as f64 / (params.samples - 1) as f64)
        .collect();
    let mut demos = Vec::with_capacity(params.demos);
    for _ in 0..params.demos {
        let warp = rng.random_range(-0.03..=0.03);
        let wiggles = [Wiggle::draw(rng), Wiggle::draw(rng)];
        let mut ys = Vec::with_capacity(ts.len());
        for &t in &ts {
            let tau = t / LETTER_DURATION;
            let s = tau + warp * (std::f64::consts::PI * tau).sin();
            let envelope = params.noise * (0.03 + 0.3 * smoothstep((s - 0.25) / 0.2));
            let p = letter_path(s);
            ys.push(DVector::from_fn(2, |d, _| p[d] + envelope * wiggles[d].at(s)));
        }
        demos.push((ts.iter().map(|&t| DVector::from_element(1, t)).collect(), ys));
    }
    DemonstrationSet::from_demos(demos)
}

/// Minimum-jerk position between `a` (at rest) and `b` (at rest), `s ∈ [0, 1]`.
fn min_jerk(a: f64, b: f64, s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    a + (b - a) * (10.0 * s.powi(3) - 15.0 * s.powi(4) + 6.0 * s.powi(5))
}

/// Waypoints `(time, x, z)` of the insertion motion.
pub const MINJERK_WAYPOINTS: [(f64, f64, f64); 3] = [(0.0, 0.0, 0.3), (3.75, 0.8, 0.7), (5.0, 0.8, 0.45)];

/// Noise-free insertion path at time `t` in the (x, z) plane.
pub fn minjerk_path(t: f64) -> [f64; 2] {
    let w = &MINJERK_WAYPOINTS;
    let k = if t <= w[1].0 { 0 } else { 1 };
    let s = (t - w[k].0) / (w[k + 1].0 - w[k].0);
    [min_jerk(w[k].1, w[k + 1].1, s), min_jerk(w[k].2, w[k + 1].2, s)]
}

fn minjerk(params: &SynthParams, rng: &mut ChaCha8Rng) -> Result<DemonstrationSet> {
    let d = params.output_dim;
    if d != 2 && d != 3 {
        return Err(Error::InvalidParam(format!("minjerk output_dim must be 2 or 3, got {d}")));
    }
    let ts: Vec<f64> = (0..params.samples)
        .map(|i| MINJERK_DURATION * i as f64 / (params.samples - 1) as f64)
        .collect();
    let mut demos = Vec::with_capacity(params.demos);
    for _ in 0..params.demos {
        let wiggles: Vec<Wiggle> = (0..d).map(|_| Wiggle::draw(rng)).collect();
        let ys = ts
            .iter()
            .map(|&t| {
                let s = t / MINJERK_DURATION;
                let envelope = params.noise * (0.005 + 0.06 * (-((t - 3.0) / 0.8).powi(2)).exp());
                let p = minjerk_path(t);
                let base: Vec<f64> = if d == 2 {
                    p.to_vec()
                } else {
                    vec![p[0], 0.1, p[1]]
                };
                DVector::from_fn(d, |i, _| base[i] + envelope * wiggles[i].at(s))
            })
            .collect();
        demos.push((ts.iter().map(|&t| DVector::from_element(1, t)).collect(), ys));
    }
    DemonstrationSet::from_demos(demos)
}

fn gmm_draw(model: &GmmModel, params: &SynthParams, rng: &mut ChaCha8Rng) -> Result<DemonstrationSet> {
    let din = model.input_dim();
    let mut demos = Vec::with_capacity(params.demos);
    for _ in 0..params.demos {
        let mut joint = model.sample_with(rng, params.samples);
        if din == 1 {
            joint.sort_by(|a, b| a[0].total_cmp(&b[0]));
        }
        let xs = joint.iter().map(|v| v.rows(0, din).clone_owned()).collect();
        let ys = joint
            .iter()
            .map(|v| v.rows(din, model.output_dim()).clone_owned())
            .collect();
        demos.push((xs, ys));
    }
    DemonstrationSet::from_demos(demos)
}

/// Two-component 1-D → 1-D mixture: a wide component left of `t = 1.25`
/// and a narrower one to its right. Component 0 holds all responsibility
/// (beyond `1 − 1e-9`) for `t ≤ 0.5`, component 1 for `t ≥ 2`.
pub fn two_component_fixture() -> GmmModel {
    let c0 = GaussianComponent::new(
        0.5,
        DVector::from_vec(vec![0.5, 0.0]),
        DMatrix::from_row_slice(2, 2, &[0.05, 0.03, 0.03, 1.0]),
    )
    .expect("valid fixture component");
    let c1 = GaussianComponent::new(
        0.5,
        DVector::from_vec(vec![2.0, 2.0]),
        DMatrix::from_row_slice(2, 2, &[0.05, -0.02, -0.02, 0.6]),
    )
    .expect("valid fixture component");
    GmmModel::new(vec![c0, c1], 1, 1).expect("valid fixture model")
}

/// Via-points for the two-component fixture: one in each pure region, and
/// optionally a third between them.
pub fn two_component_via_points(three: bool) -> Vec<ViaPoint> {
    let mut v = vec![
        ViaPoint::new(vec![0.3], vec![1.0]),
        ViaPoint::new(vec![2.2], vec![1.0]),
    ];
    if three {
        v.insert(1, ViaPoint::new(vec![1.25], vec![0.0]));
    }
    v
}

/// New insertion environment: the hole moved down, an obstacle on the
/// demonstrated path, and via-points that route around it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PegScenario {
    pub goal: Vec<f64>,
    pub via_points: Vec<ViaPoint>,
    pub geometry: Geometry,
    /// Query grid, with every via-point time on it.
    pub times: Vec<f64>,
}

/// Via-point noise used in the insertion scenario.
pub const PEG_VIA_NOISE: f64 = 1e-6;

pub fn peg_scenario() -> PegScenario {
    let start = vec![0.0, 0.3];
    let detour = vec![0.4, 0.3];
    let goal = vec![0.8, 0.25];
    let t_detour = 1.875;
    let times: Vec<f64> = (0..=80).map(|i| i as f64 * MINJERK_DURATION / 80.0).collect();
    let via = |t: f64, p: &Vec<f64>| {
        ViaPoint::new(vec![t], p.clone()).with_noise(crate::gmrgp::NoiseOverride::Scalar(PEG_VIA_NOISE))
    };
    let via_points = vec![
        via(0.0, &start),
        via(t_detour, &detour),
        via(MINJERK_DURATION, &goal),
    ];
    let geometry = Geometry {
        via_points: via_points
            .iter()
            .map(|v| TimedPoint {
                time: v.input[0],
                position: v.output.clone(),
            })
            .collect(),
        obstacles: vec![Disk {
            center: vec![0.4, 0.5],
            radius: 0.08,
        }],
    };
    PegScenario {
        goal,
        via_points,
        geometry,
        times,
    }
}
