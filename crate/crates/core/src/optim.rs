//! Bounded multi-start Nelder–Mead maximization over log-parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptConfig {
    pub starts: usize,
    /// Objective evaluations allowed per start.
    pub max_evals: usize,
    /// Lengthscale bounds as multiples of the input range.
    pub lengthscale_bounds: (f64, f64),
    /// Bounds on the noise variance `σ_ε`.
    pub noise_bounds: (f64, f64),
    /// Upper bound on the number of likelihood points; demonstrations are
    /// strided to fit unless `stride` is given.
    pub max_points: usize,
    pub stride: Option<usize>,
    pub seed: u64,
    /// Run starts on separate threads.
    pub parallel: bool,
    /// Stop a start once the simplex values differ by less than this.
    pub ftol: f64,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            starts: 8,
            max_evals: 300,
            lengthscale_bounds: (1e-2, 1e2),
            noise_bounds: (1e-8, 1.0),
            max_points: 500,
            stride: None,
            seed: 0,
            parallel: true,
            ftol: 1e-7,
        }
    }
}

/// Outcome of a multi-start maximization, in natural (not log) units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub params: Vec<f64>,
    pub value: f64,
    /// Objective at each start's initial point (`-inf` where it failed).
    pub start_values: Vec<f64>,
    pub best_start: usize,
    pub evaluations: usize,
}

/// Maximizes `objective` over the box `[lower, upper]` (natural units,
/// all strictly positive), searching in log space. A start is drawn
/// log-uniformly in the box; `initial` (when given) replaces start 0.
///
/// Objective failures count as `-inf`. Fails only when no start ever
/// produced a finite value.
pub fn maximize<F>(
    objective: F,
    lower: &[f64],
    upper: &[f64],
    initial: Option<&[f64]>,
    config: &OptConfig,
) -> Result<OptResult>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let dim = lower.len();
    if dim == 0 || upper.len() != dim || config.starts == 0 {
        return Err(Error::InvalidParam("optimizer needs a non-empty box and >= 1 start".into()));
    }
    let lo: Vec<f64> = lower.iter().map(|v| v.ln()).collect();
    let hi: Vec<f64> = upper.iter().map(|v| v.ln()).collect();
    if lo.iter().zip(&hi).any(|(a, b)| !(a.is_finite() && b.is_finite() && a <= b)) {
        return Err(Error::InvalidParam(format!("invalid bounds {lower:?} .. {upper:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut starts: Vec<Vec<f64>> = (0..config.starts)
        .map(|_| (0..dim).map(|i| rng.random_range(lo[i]..=hi[i])).collect())
        .collect();
    if let Some(init) = initial {
        starts[0] = init.iter().zip(lo.iter().zip(&hi)).map(|(v, (a, b))| v.ln().clamp(*a, *b)).collect();
    }

    let f = |z: &[f64]| -> f64 {
        let p: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        match objective(&p) {
            Ok(v) if v.is_finite() => v,
            Ok(_) => f64::NEG_INFINITY,
            Err(e) => {
                log::trace!("objective failed at {p:?}: {e}");
                f64::NEG_INFINITY
            }
        }
    };
    let run = |s: &Vec<f64>| nelder_mead(&f, s, &lo, &hi, config.max_evals, config.ftol);
    let runs: Vec<Run> = if config.parallel && config.starts > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = starts.iter().map(|s| scope.spawn(|| run(s))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("optimizer thread panicked"))
                .collect()
        })
    } else {
        starts.iter().map(run).collect()
    };

    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.value > runs[best].value {
            best = i;
        }
    }
    let evaluations = runs.iter().map(|r| r.evaluations).sum();
    if !runs[best].value.is_finite() {
        return Err(Error::AllStartsFailed(format!(
            "{} starts, no finite objective value",
            config.starts
        )));
    }
    log::debug!(
        "multi-start optimum {} from start {best} after {evaluations} evaluations",
        runs[best].value
    );
    Ok(OptResult {
        params: runs[best].point.iter().map(|v| v.exp()).collect(),
        value: runs[best].value,
        start_values: runs.iter().map(|r| r.start_value).collect(),
        best_start: best,
        evaluations,
    })
}

struct Run {
    point: Vec<f64>,
    value: f64,
    start_value: f64,
    evaluations: usize,
}

fn project(z: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, a), b) in z.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*a, *b);
    }
}

/// Nelder–Mead on `-f`, with every trial point projected into the box.
/// The start point is a simplex vertex, so the result never scores below it.
fn nelder_mead(
    f: &(impl Fn(&[f64]) -> f64 + Sync),
    start: &[f64],
    lo: &[f64],
    hi: &[f64],
    max_evals: usize,
    ftol: f64,
) -> Run {
    let n = start.len();
    let evals = std::cell::Cell::new(0usize);
    let eval = |z: &[f64]| {
        evals.set(evals.get() + 1);
        -f(z)
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let start_cost = eval(start);
    simplex.push((start.to_vec(), start_cost));
    for i in 0..n {
        let mut z = start.to_vec();
        let step = 0.1 * (hi[i] - lo[i]).max(1e-3);
        z[i] = if z[i] + step <= hi[i] { z[i] + step } else { z[i] - step };
        project(&mut z, lo, hi);
        let c = eval(&z);
        simplex.push((z, c));
    }
    let cmp = |a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)| a.1.total_cmp(&b.1);
    while evals.get() < max_evals {
        simplex.sort_by(cmp);
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if best.is_finite() && (worst - best).abs() <= ftol * (1.0 + best.abs()) {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (z, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(z) {
                *c += v / n as f64;
            }
        }
        let towards = |t: f64| -> Vec<f64> {
            let mut z: Vec<f64> = centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect();
            project(&mut z, lo, hi);
            z
        };
        let xr = towards(1.0);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = towards(2.0);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let x = towards(0.5);
            let v = eval(&x);
            (x, v)
        } else {
            let x = towards(-0.5);
            let v = eval(&x);
            (x, v)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let x0 = simplex[0].0.clone();
        for (z, c) in simplex.iter_mut().skip(1) {
            for (v, b) in z.iter_mut().zip(&x0) {
                *v = b + 0.5 * (*v - b);
            }
            *c = eval(z);
        }
    }
    simplex.sort_by(cmp);
    let (point, cost) = simplex.swap_remove(0);
    Run {
        point,
        value: -cost,
        start_value: -start_cost,
        evaluations: evals.get(),
    }
}
