//! Least-squares estimation of system parameters from polarization-resolved
//! transmission spectra.
//!
//! The model value for a trace at `θ_out` and laser detuning `f` is the
//! steady-state intensity behind the polarizer divided by the empty-cavity
//! co-polarized intensity `(η/κ)²`. Each trace carries a free amplitude
//! scale, profiled out in closed form by default.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{JonesVector, SystemParams};
use crate::sweeps::solve_point;

const MIN_POINTS: usize = 10;
const MAX_TRANSMISSION: f64 = 1.05;
/// Largest tolerated share of failed forward-model evaluations.
const MAX_FAILURE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub theta_out: f64,
    /// `(laser detuning in GHz, normalized transmission)`.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionDataset {
    pub traces: Vec<Trace>,
    pub theta_in: f64,
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    theta_out_deg: f64,
    detuning_ghz: f64,
    transmission: f64,
}

impl TransmissionDataset {
    pub fn new(traces: Vec<Trace>, theta_in: f64) -> Result<Self> {
        let d = Self { traces, theta_in };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.theta_in.is_finite() {
            return Err(Error::NonFinite("theta_in".into()));
        }
        if self.traces.is_empty() {
            return Err(Error::InvalidDataset("no traces".into()));
        }
        for t in &self.traces {
            if !t.theta_out.is_finite() {
                return Err(Error::NonFinite("theta_out_deg".into()));
            }
            if t.points.len() < MIN_POINTS {
                return Err(Error::InvalidDataset(format!(
                    "trace at {}° has {} points, need at least {MIN_POINTS}",
                    t.theta_out,
                    t.points.len()
                )));
            }
            for (k, &(f, v)) in t.points.iter().enumerate() {
                if !f.is_finite() || !v.is_finite() {
                    return Err(Error::NonFinite(format!("trace at {}°, point {k}", t.theta_out)));
                }
                if !(0.0..=MAX_TRANSMISSION).contains(&v) {
                    return Err(Error::InvalidDataset(format!(
                        "transmission {v} outside [0, {MAX_TRANSMISSION}] in trace at {}°",
                        t.theta_out
                    )));
                }
                if k > 0 && f <= t.points[k - 1].0 {
                    return Err(Error::InvalidDataset(format!(
                        "detunings not strictly increasing in trace at {}° (point {k})",
                        t.theta_out
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_points(&self) -> usize {
        self.traces.iter().map(|t| t.points.len()).sum()
    }

    /// Reads long-format CSV (`theta_out_deg, detuning_ghz, transmission`);
    /// lines starting with `#` are comments. Rows are grouped into traces
    /// by polarizer angle in order of first appearance.
    pub fn from_csv_reader<R: Read>(reader: R, theta_in: f64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut order: Vec<u64> = Vec::new();
        let mut groups: BTreeMap<u64, Trace> = BTreeMap::new();
        for (line, row) in rdr.deserialize::<CsvRow>().enumerate() {
            let row = row.map_err(|e| Error::InvalidDataset(format!("row {}: {e}", line + 1)))?;
            if !row.theta_out_deg.is_finite() || !row.detuning_ghz.is_finite() || !row.transmission.is_finite() {
                return Err(Error::NonFinite(format!("row {}", line + 1)));
            }
            let key = row.theta_out_deg.to_bits();
            let trace = groups.entry(key).or_insert_with(|| {
                order.push(key);
                Trace {
                    theta_out: row.theta_out_deg,
                    points: Vec::new(),
                }
            });
            trace.points.push((row.detuning_ghz, row.transmission));
        }
        let traces = order.into_iter().filter_map(|k| groups.remove(&k)).collect();
        Self::new(traces, theta_in)
    }

    pub fn from_csv_path(path: &Path, theta_in: f64) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file, theta_in)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::InvalidDataset(e.to_string());
        w.write_record(["theta_out_deg", "detuning_ghz", "transmission"])
            .map_err(io)?;
        for t in &self.traces {
            for &(f, v) in &t.points {
                w.write_record([t.theta_out.to_string(), f.to_string(), v.to_string()])
                    .map_err(io)?;
            }
        }
        w.flush().map_err(|e| Error::InvalidDataset(e.to_string()))
    }

    /// Noise-free traces generated by the forward model.
    pub fn synthetic(truth: &SystemParams, thetas_out: &[f64], detunings: &[f64]) -> Result<Self> {
        let model = forward_model(truth, thetas_out, detunings)?;
        let traces = thetas_out
            .iter()
            .zip(model)
            .map(|(&theta_out, values)| Trace {
                theta_out,
                points: detunings.iter().copied().zip(values).collect(),
            })
            .collect();
        Self::new(traces, truth.theta_in)
    }
}

/// Normalized model transmission for every `(θ_out, detuning)` pair; one
/// steady state per distinct detuning.
pub fn forward_model(p: &SystemParams, thetas_out: &[f64], detunings: &[f64]) -> Result<Vec<Vec<f64>>> {
    let reference = (p.eta / p.kappa).powi(2);
    if !(reference > 0.0) {
        return Err(Error::param("eta_per_ns", "forward model needs a nonzero drive"));
    }
    let moments: Vec<_> = detunings
        .par_iter()
        .map(|&f| {
            solve_point(&SystemParams {
                f_laser: f,
                ..p.clone()
            })
            .map(|s| s.moments)
        })
        .collect::<Result<_>>()?;
    Ok(thetas_out
        .iter()
        .map(|&t| {
            let jones = JonesVector::linear(t);
            moments.iter().map(|m| m.transmission(&jones) / reference).collect()
        })
        .collect())
}

fn model_for(p: &SystemParams, data: &TransmissionDataset) -> Result<Vec<Vec<f64>>> {
    let mut detunings: Vec<f64> = data.traces.iter().flat_map(|t| t.points.iter().map(|q| q.0)).collect();
    detunings.sort_by(f64::total_cmp);
    detunings.dedup();
    let thetas: Vec<f64> = data.traces.iter().map(|t| t.theta_out).collect();
    let grid = forward_model(p, &thetas, &detunings)?;
    Ok(data
        .traces
        .iter()
        .zip(grid)
        .map(|(t, row)| {
            t.points
                .iter()
                .map(|q| {
                    let k = detunings
                        .binary_search_by(|x| x.total_cmp(&q.0))
                        .expect("detuning collected above");
                    row[k]
                })
                .collect()
        })
        .collect())
}

/// Least-squares scale `Σ m d / Σ m²` (zero for an all-zero model trace).
fn profiled_scale(model: &[f64], data: &[(f64, f64)]) -> f64 {
    let num: f64 = model.iter().zip(data).map(|(m, d)| m * d.1).sum();
    let den: f64 = model.iter().map(|m| m * m).sum();
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Sum of squared residuals and the per-trace scales used. With `scales`
/// absent they are profiled out per trace.
pub fn objective_with_scales(
    p: &SystemParams,
    scales: Option<&[f64]>,
    data: &TransmissionDataset,
) -> Result<(f64, Vec<f64>)> {
    if let Some(s) = scales {
        if s.len() != data.traces.len() {
            return Err(Error::DimensionMismatch {
                expected: data.traces.len(),
                found: s.len(),
            });
        }
    }
    let model = model_for(p, data)?;
    let mut sse = 0.0;
    let mut used = Vec::with_capacity(model.len());
    for (k, (t, m)) in data.traces.iter().zip(&model).enumerate() {
        let s = scales.map_or_else(|| profiled_scale(m, &t.points), |s| s[k]);
        sse += m
            .iter()
            .zip(&t.points)
            .map(|(mv, d)| (s * mv - d.1).powi(2))
            .sum::<f64>();
        used.push(s);
    }
    if !sse.is_finite() {
        return Err(Error::NonFinite("objective".into()));
    }
    Ok((sse, used))
}

pub fn objective(p: &SystemParams, scales: Option<&[f64]>, data: &TransmissionDataset) -> Result<f64> {
    objective_with_scales(p, scales, data).map(|r| r.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreeParam {
    Kappa,
    /// Both couplings together.
    G,
    GammaPar,
    GammaStar,
    FQdX,
    FQdY,
}

impl FreeParam {
    pub const ALL: [FreeParam; 6] = [
        FreeParam::Kappa,
        FreeParam::G,
        FreeParam::GammaPar,
        FreeParam::GammaStar,
        FreeParam::FQdX,
        FreeParam::FQdY,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FreeParam::Kappa => "kappa",
            FreeParam::G => "g",
            FreeParam::GammaPar => "gamma_par",
            FreeParam::GammaStar => "gamma_star",
            FreeParam::FQdX => "f_qd_x",
            FreeParam::FQdY => "f_qd_y",
        }
    }

    fn positive(&self) -> bool {
        !matches!(self, FreeParam::FQdX | FreeParam::FQdY)
    }

    pub fn get(&self, p: &SystemParams) -> f64 {
        match self {
            FreeParam::Kappa => p.kappa,
            FreeParam::G => p.g_x,
            FreeParam::GammaPar => p.gamma_par,
            FreeParam::GammaStar => p.gamma_star,
            FreeParam::FQdX => p.f_qd_x,
            FreeParam::FQdY => p.f_qd_y,
        }
    }

    pub fn set(&self, p: &mut SystemParams, v: f64) {
        match self {
            FreeParam::Kappa => p.kappa = v,
            FreeParam::G => {
                p.g_x = v;
                p.g_y = v;
            }
            FreeParam::GammaPar => p.gamma_par = v,
            FreeParam::GammaStar => p.gamma_star = v,
            FreeParam::FQdX => p.f_qd_x = v,
            FreeParam::FQdY => p.f_qd_y = v,
        }
    }

    // Positive rates are optimized in log space.
    fn encode(&self, v: f64) -> f64 {
        if self.positive() {
            v.ln()
        } else {
            v
        }
    }

    fn decode(&self, x: f64) -> f64 {
        if self.positive() {
            x.exp()
        } else {
            x
        }
    }

    /// Initial simplex edge: about 15% for rates, 0.3 GHz for frequencies.
    fn step(&self) -> f64 {
        if self.positive() {
            0.15
        } else {
            0.3
        }
    }
}

impl FromStr for FreeParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FreeParam::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown free parameter `{s}` (expected one of kappa, g, gamma_par, gamma_star, f_qd_x, f_qd_y)"
            ))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub seed: u64,
    /// Simplex runs after the first, each from the best point so far with a
    /// randomly scaled initial simplex.
    pub restarts: usize,
    pub max_evals_per_run: usize,
    /// Relative spread of simplex values below which a run stops.
    pub ftol: f64,
    /// Spread of simplex vertices (encoded coordinates) below which a run stops.
    pub xtol: f64,
    pub profile_scales: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            restarts: 3,
            max_evals_per_run: 600,
            ftol: 1e-10,
            xtol: 1e-6,
            profile_scales: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: SystemParams,
    pub per_trace_scales: Vec<f64>,
    pub sse: f64,
    pub n_evals: usize,
    pub converged: bool,
    pub free: Vec<FreeParam>,
    /// Best objective value after each accepted simplex step, all runs.
    pub history: Vec<f64>,
    pub failed_evals: usize,
}

impl FitResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit result serializes")
    }
}

#[derive(Debug, Clone)]
pub struct SimplexOutcome {
    pub x: Vec<f64>,
    pub fx: f64,
    pub n_evals: usize,
    pub converged: bool,
    /// Best value after every iteration; non-increasing.
    pub history: Vec<f64>,
}

/// Nelder–Mead minimization with standard coefficients (reflection 1,
/// expansion 2, contraction ½, shrink ½). Non-finite values rank last.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    steps: &[f64],
    max_evals: usize,
    ftol: f64,
    xtol: f64,
) -> SimplexOutcome {
    let n = x0.len();
    let clean = |v: f64| if v.is_finite() { v } else { f64::INFINITY };
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        clean(f(x))
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += steps[i];
        let fx = eval(&x, &mut evals);
        simplex.push((x, fx));
    }
    let mut history = Vec::new();
    let mut converged = false;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        history.push(simplex[0].1);
        let (best, worst) = (simplex[0].1, simplex[n].1);
        let f_spread = (worst - best).abs() <= ftol * best.abs() + 1e-16;
        let x_spread = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if f_spread && x_spread <= xtol {
            converged = true;
            break;
        }
        if evals >= max_evals {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|v| v.0[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            (0..n)
                .map(|k| centroid[k] + t * (simplex[n].0[k] - centroid[k]))
                .collect()
        };
        let xr = along(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = along(-0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = v.0.iter().zip(&x_best).map(|(a, b)| b + 0.5 * (a - b)).collect();
                    let fx = eval(&x, &mut evals);
                    *v = (x, fx);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    SimplexOutcome {
        x: simplex[0].0.clone(),
        fx: simplex[0].1,
        n_evals: evals,
        converged,
        history,
    }
}

/// Fits the `free` parameters of `init` to `data` by Nelder–Mead with
/// seeded restarts.
pub fn fit_parameters(
    data: &TransmissionDataset,
    init: &SystemParams,
    free: &[FreeParam],
    opts: &FitOptions,
) -> Result<FitResult> {
    data.validate()?;
    let mut base = init.clone();
    base.theta_in = data.theta_in;
    base.validate()?;
    let mut free: Vec<FreeParam> = free.to_vec();
    free.sort();
    free.dedup();
    if free.is_empty() {
        return Err(Error::Config("no free parameters".into()));
    }
    for f in &free {
        if f.positive() && f.get(&base) <= 0.0 {
            return Err(Error::param("free", format!("initial {} must be > 0", f.name())));
        }
    }

    let decode = |x: &[f64]| -> SystemParams {
        let mut p = base.clone();
        for (f, &v) in free.iter().zip(x) {
            f.set(&mut p, f.decode(v));
        }
        p
    };
    let mut total = 0usize;
    let mut failed = 0usize;
    let mut cost = |x: &[f64]| -> f64 {
        total += 1;
        let p = decode(x);
        let r = p.validate().and_then(|_| {
            if opts.profile_scales {
                objective(&p, None, data)
            } else {
                objective(&p, Some(&vec![1.0; data.traces.len()]), data)
            }
        });
        match r {
            Ok(v) => v,
            Err(_) => {
                failed += 1;
                f64::INFINITY
            }
        }
    };

    let x0: Vec<f64> = free.iter().map(|f| f.encode(f.get(&base))).collect();
    let steps: Vec<f64> = free.iter().map(FreeParam::step).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best = nelder_mead(&mut cost, &x0, &steps, opts.max_evals_per_run, opts.ftol, opts.xtol);
    let mut history = best.history.clone();
    let mut n_evals = best.n_evals;
    let mut converged = best.converged;
    for _ in 0..opts.restarts {
        let steps: Vec<f64> = steps
            .iter()
            .map(|s| {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * s * rng.random_range(0.5..1.5)
            })
            .collect();
        let run = nelder_mead(&mut cost, &best.x, &steps, opts.max_evals_per_run, opts.ftol, opts.xtol);
        n_evals += run.n_evals;
        let floor = history.last().copied().unwrap_or(f64::INFINITY);
        history.extend(run.history.iter().map(|v| v.min(floor)));
        if run.fx <= best.fx {
            converged = run.converged;
            best = run;
        }
    }
    if failed as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(Error::ForwardModelFailure { failed, total });
    }
    if !best.fx.is_finite() {
        return Err(Error::ForwardModelFailure { failed, total });
    }
    let params = decode(&best.x);
    let scales = if opts.profile_scales {
        None
    } else {
        Some(vec![1.0; data.traces.len()])
    };
    let (sse, per_trace_scales) = objective_with_scales(&params, scales.as_deref(), data)?;
    Ok(FitResult {
        params,
        per_trace_scales,
        sse,
        n_evals,
        converged,
        free,
        history,
        failed_evals: failed,
    })
}
