//! Parameter scans reproducing the transmission, bunching, photon-number,
//! cavity-quality, single-transition and dephasing scenarios.
//!
//! Only parameters that change the steady state require a new solve; the
//! output polarizer angle is evaluated from the photon moments of each
//! solved state. Solves run in parallel on the current rayon pool and are
//! collected in grid order, so results do not depend on the worker count.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{build_liouvillian, JonesVector, SystemParams};
use crate::observables::{
    convolve_detector, g2_trace, photon_number_dist, CorrelationTrace, PhotonMoments, DEFAULT_INTENSITY_FLOOR,
};
use crate::solver::{steady_state_factorized, steady_state_product, DensityMatrix, ProductState, PropagationSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    TransmissionMap,
    G2Map,
    G2TracePoint,
    PnVsTheta,
    KappaSweep,
    AblationSingleTransition,
    DephasingStudy,
}

/// Scan coordinate. Everything except `theta_out_deg` changes the steady
/// state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AxisName {
    #[serde(rename = "theta_out_deg")]
    ThetaOut,
    #[serde(rename = "qd_common_offset_ghz")]
    QdCommonOffset,
    #[serde(rename = "f_laser_ghz")]
    FLaser,
    #[serde(rename = "f_qd_x_ghz")]
    FQdX,
    #[serde(rename = "f_qd_y_ghz")]
    FQdY,
    #[serde(rename = "f_cav_x_ghz")]
    FCavX,
    #[serde(rename = "f_cav_y_ghz")]
    FCavY,
    #[serde(rename = "kappa_per_ns")]
    Kappa,
    /// Sets `g_x` and `g_y` together.
    #[serde(rename = "g_per_ns")]
    G,
    #[serde(rename = "gamma_par_per_ns")]
    GammaPar,
    #[serde(rename = "gamma_star_per_ns")]
    GammaStar,
    #[serde(rename = "eta_per_ns")]
    Eta,
    #[serde(rename = "theta_in_deg")]
    ThetaIn,
}

impl AxisName {
    pub fn key(&self) -> &'static str {
        match self {
            AxisName::ThetaOut => "theta_out_deg",
            AxisName::QdCommonOffset => "qd_offset_ghz",
            AxisName::FLaser => "laser_detuning_ghz",
            AxisName::FQdX => "f_qd_x_ghz",
            AxisName::FQdY => "f_qd_y_ghz",
            AxisName::FCavX => "f_cav_x_ghz",
            AxisName::FCavY => "f_cav_y_ghz",
            AxisName::Kappa => "kappa_per_ns",
            AxisName::G => "g_per_ns",
            AxisName::GammaPar => "gamma_par_per_ns",
            AxisName::GammaStar => "gamma_star_per_ns",
            AxisName::Eta => "eta_per_ns",
            AxisName::ThetaIn => "theta_in_deg",
        }
    }

    /// Applies this coordinate to a parameter set. The common QD offset is
    /// added to the base transition frequencies; all others overwrite.
    pub fn apply(&self, p: &SystemParams, value: f64) -> SystemParams {
        let mut q = p.clone();
        match self {
            AxisName::ThetaOut => {}
            AxisName::QdCommonOffset => q = p.with_qd_offset(value),
            AxisName::FLaser => q.f_laser = value,
            AxisName::FQdX => q.f_qd_x = value,
            AxisName::FQdY => q.f_qd_y = value,
            AxisName::FCavX => q.f_cav_x = value,
            AxisName::FCavY => q.f_cav_y = value,
            AxisName::Kappa => q.kappa = value,
            AxisName::G => {
                q.g_x = value;
                q.g_y = value;
            }
            AxisName::GammaPar => q.gamma_par = value,
            AxisName::GammaStar => q.gamma_star = value,
            AxisName::Eta => q.eta = value,
            AxisName::ThetaIn => q.theta_in = value,
        }
        q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: AxisName,
    pub start: f64,
    pub stop: f64,
    pub n_points: usize,
    /// Geometric instead of linear spacing.
    #[serde(default)]
    pub log: bool,
}

impl Axis {
    pub fn linear(name: AxisName, start: f64, stop: f64, n_points: usize) -> Self {
        Self {
            name,
            start,
            stop,
            n_points,
            log: false,
        }
    }

    pub fn geometric(name: AxisName, start: f64, stop: f64, n_points: usize) -> Self {
        Self {
            name,
            start,
            stop,
            n_points,
            log: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points < 2 {
            return Err(Error::Config(format!(
                "axis {}: n_points must be >= 2",
                self.name.key()
            )));
        }
        if !self.start.is_finite() || !self.stop.is_finite() {
            return Err(Error::Config(format!(
                "axis {}: bounds must be finite",
                self.name.key()
            )));
        }
        if self.log && (self.start <= 0.0 || self.stop <= 0.0) {
            return Err(Error::Config(format!(
                "axis {}: geometric bounds must be > 0",
                self.name.key()
            )));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let n = self.n_points;
        (0..n)
            .map(|k| {
                let f = k as f64 / (n - 1) as f64;
                if self.log {
                    (self.start.ln() + f * (self.stop.ln() - self.start.ln())).exp()
                } else {
                    self.start + f * (self.stop - self.start)
                }
            })
            .collect()
    }

    pub fn step(&self) -> f64 {
        (self.stop - self.start) / (self.n_points - 1) as f64
    }
}

/// Grid over which `g²(0)` is maximized: one steady-state axis and the
/// polarizer angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchGrid {
    pub axis: Axis,
    pub theta: Axis,
    /// Golden-section refinement around the best grid cell.
    #[serde(default = "default_true")]
    pub refine: bool,
    /// When set, a laser-frequency search axis is clipped to the QD lines
    /// widened by this many Purcell-broadened QD linewidths on each side,
    /// keeping the search on the special-polarization features rather than
    /// the far-detuned cross-polarized cavity tail.
    #[serde(default)]
    pub qd_window_linewidths: Option<f64>,
}

impl SearchGrid {
    /// Search axis actually used for `p`.
    pub fn resolved_axis(&self, p: &SystemParams) -> Axis {
        let (Some(k), AxisName::FLaser) = (self.qd_window_linewidths, self.axis.name) else {
            return self.axis;
        };
        let lines: Vec<f64> = [(p.qd_x_enabled, p.f_qd_x), (p.qd_y_enabled, p.f_qd_y)]
            .into_iter()
            .filter_map(|(on, f)| on.then_some(f))
            .collect();
        if lines.is_empty() {
            return self.axis;
        }
        let lo = lines.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = lines.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w = k * qd_linewidth_ghz(p);
        Axis {
            start: (lo - w).max(self.axis.start.min(self.axis.stop)),
            stop: (hi + w).min(self.axis.start.max(self.axis.stop)),
            ..self.axis
        }
    }

    /// Laser search over the QD lines widened by `linewidths` on each side.
    pub fn around_qd_lines(linewidths: f64) -> Self {
        Self {
            axis: Axis::linear(AxisName::FLaser, -8.0, 8.0, 81),
            theta: default_theta_axis(),
            refine: true,
            qd_window_linewidths: Some(linewidths),
        }
    }
}

/// Full width at half maximum of the Purcell-broadened QD line in GHz,
/// `(γ∥ + γ*/2 + 4g²/κ) / 2π`, using the larger of the two couplings.
pub fn qd_linewidth_ghz(p: &SystemParams) -> f64 {
    let g = p.g_x.abs().max(p.g_y.abs());
    (p.gamma_par + p.gamma_star / 2.0 + 4.0 * g * g / p.kappa) / std::f64::consts::TAU
}

fn default_true() -> bool {
    true
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self {
            axis: Axis::linear(AxisName::FLaser, -8.0, 8.0, 161),
            theta: default_theta_axis(),
            refine: true,
            qd_window_linewidths: None,
        }
    }
}

pub fn default_theta_axis() -> Axis {
    Axis::linear(AxisName::ThetaOut, -90.0, 90.0, 181)
}

pub fn default_laser_axis() -> Axis {
    Axis::linear(AxisName::FLaser, -8.0, 8.0, 161)
}

/// One-parameter modification of the base set, as in the sensitivity study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub label: String,
    pub axis: AxisName,
    pub value: f64,
}

impl Variant {
    /// Halved `g`, halved `κ` and `γ* = 0.5 ns⁻¹` relative to `base`.
    pub fn sensitivity_set(base: &SystemParams) -> Vec<Variant> {
        vec![
            Variant {
                label: "half_g".into(),
                axis: AxisName::G,
                value: base.g_x / 2.0,
            },
            Variant {
                label: "half_kappa".into(),
                axis: AxisName::Kappa,
                value: base.kappa / 2.0,
            },
            Variant {
                label: "gamma_star_0.5".into(),
                axis: AxisName::GammaStar,
                value: 0.5,
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub scenario: Scenario,
    pub base: SystemParams,
    pub axes: Vec<Axis>,
    /// Polarizer angle for single-point scenarios; `None` means "at the
    /// `g²(0)` maximum of `search`".
    pub theta_out: Option<f64>,
    pub search: SearchGrid,
    pub propagation: PropagationSpec,
    pub jitters_ps: Vec<f64>,
    pub variants: Vec<Variant>,
}

impl SweepSpec {
    pub fn new(scenario: Scenario, base: SystemParams) -> Self {
        Self {
            scenario,
            axes: default_axes(scenario),
            variants: Variant::sensitivity_set(&base),
            base,
            theta_out: None,
            search: match scenario {
                Scenario::KappaSweep | Scenario::DephasingStudy | Scenario::G2TracePoint => {
                    SearchGrid::around_qd_lines(1.0)
                }
                _ => SearchGrid::default(),
            },
            propagation: PropagationSpec::default(),
            jitters_ps: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.axes.len() > 2 {
            return Err(Error::Config("at most two sweep axes are supported".into()));
        }
        for a in &self.axes {
            a.validate()?;
        }
        if self.axes.len() == 2 && self.axes[0].name == self.axes[1].name {
            return Err(Error::Config("sweep axes must differ".into()));
        }
        self.search.axis.validate()?;
        self.search.theta.validate()?;
        if self.search.theta.name != AxisName::ThetaOut || self.search.axis.name == AxisName::ThetaOut {
            return Err(Error::Config(
                "search grid needs one parameter axis and a theta_out_deg axis".into(),
            ));
        }
        let needs = |name: AxisName| self.axes.iter().any(|a| a.name == name);
        match self.scenario {
            Scenario::PnVsTheta if !needs(AxisName::ThetaOut) => {
                Err(Error::Config("pn_vs_theta needs a theta_out_deg axis".into()))
            }
            Scenario::KappaSweep if !needs(AxisName::Kappa) => {
                Err(Error::Config("kappa_sweep needs a kappa_per_ns axis".into()))
            }
            Scenario::G2TracePoint => self.propagation.validate(),
            _ => Ok(()),
        }
    }
}

/// Default grids: the bunching map spans ±6 GHz of QD tuning and
/// −90°…0° of polarizer angle; transmission maps use the full ±8 GHz
/// laser range and 180° of polarizer angle.
pub fn default_axes(scenario: Scenario) -> Vec<Axis> {
    match scenario {
        Scenario::TransmissionMap => vec![default_laser_axis(), default_theta_axis()],
        Scenario::G2Map | Scenario::AblationSingleTransition => vec![
            Axis::linear(AxisName::QdCommonOffset, -6.0, 6.0, 121),
            Axis::linear(AxisName::ThetaOut, -90.0, 0.0, 91),
        ],
        Scenario::PnVsTheta => vec![default_theta_axis()],
        Scenario::KappaSweep => vec![Axis::geometric(AxisName::Kappa, 52.5, 840.0, 5)],
        Scenario::G2TracePoint | Scenario::DephasingStudy => Vec::new(),
    }
}

/// Observables at one grid cell. Failed cells carry NaN and an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub coords: Vec<f64>,
    pub t_raw: f64,
    pub t_colnorm: f64,
    pub g2_zero: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pn: Option<Vec<f64>>,
    /// Relative steady-state residual `‖Lρ‖/‖ρ‖`.
    pub residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Drive used at this cell when it differs from the base.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Location `(search-axis value, θ_out)` of a maximized `g²(0)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub argmax: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Cell {
    fn failed(coords: Vec<f64>, err: &Error) -> Self {
        Self {
            coords,
            t_raw: f64::NAN,
            t_colnorm: f64::NAN,
            g2_zero: f64::NAN,
            pn: None,
            residual: f64::NAN,
            label: None,
            eta: None,
            argmax: None,
            error: Some(err.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub params_hash: String,
    pub n_fock: usize,
    pub max_residual: f64,
    pub n_failed: usize,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub scenario: Scenario,
    pub axis_names: Vec<AxisName>,
    pub cells: Vec<Cell>,
    pub traces: Vec<CorrelationTrace>,
    pub metadata: Metadata,
}

impl SweepResult {
    /// Largest finite `g²(0)` among the cells.
    pub fn max_g2(&self) -> Option<&Cell> {
        self.cells
            .iter()
            .filter(|c| c.g2_zero.is_finite())
            .max_by(|a, b| a.g2_zero.total_cmp(&b.g2_zero))
    }

    pub fn max_transmission(&self) -> Option<&Cell> {
        self.cells
            .iter()
            .filter(|c| c.t_raw.is_finite())
            .max_by(|a, b| a.t_raw.total_cmp(&b.t_raw))
    }
}

/// Drive amplitude giving an empty, resonantly driven cavity the mean
/// photon number `target_nbar` in the co-polarized mode: `η = κ √n̄`.
pub fn calibrate_eta(kappa: f64, target_nbar: f64) -> f64 {
    kappa * target_nbar.max(0.0).sqrt()
}

/// Empty-cavity mean photon number implied by the drive of `p`.
pub fn empty_cavity_nbar(p: &SystemParams) -> f64 {
    (p.eta / p.kappa).powi(2)
}

/// Steady state with its photon moments.
#[derive(Debug, Clone)]
pub struct PointSolution {
    pub state: ProductState,
    pub moments: PhotonMoments,
    pub residual: f64,
}

pub fn solve_point(p: &SystemParams) -> Result<PointSolution> {
    let state = steady_state_product(p)?;
    let moments = PhotonMoments::from_product(&state);
    Ok(PointSolution {
        residual: state.residual,
        state,
        moments,
    })
}

fn solve_all(points: &[SystemParams]) -> Vec<Result<PointSolution>> {
    points.par_iter().map(solve_point).collect()
}

fn golden_max<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc > fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn g2_or_nan(m: &PhotonMoments, theta: f64) -> f64 {
    m.g2(&JonesVector::linear(theta), DEFAULT_INTENSITY_FLOOR)
        .unwrap_or(f64::NAN)
}

/// Best polarizer angle for `g²(0)` given the photon moments: grid scan
/// followed by golden-section refinement between the neighbouring nodes.
pub fn best_theta(m: &PhotonMoments, theta: &Axis, refine: bool) -> Option<(f64, f64)> {
    let values = theta.values();
    let (i, g) = values
        .iter()
        .map(|&t| g2_or_nan(m, t))
        .enumerate()
        .filter(|(_, g)| g.is_finite())
        .max_by(|a, b| a.1.total_cmp(&b.1))?;
    if !refine {
        return Some((values[i], g));
    }
    let h = theta.step().abs();
    let obj = |t: f64| {
        let v = g2_or_nan(m, t);
        if v.is_finite() {
            v
        } else {
            f64::NEG_INFINITY
        }
    };
    let (t, gt) = golden_max(obj, values[i] - h, values[i] + h, 40);
    Some(if gt > g { (t, gt) } else { (values[i], g) })
}

/// Location and value of the `g²(0)` maximum over a search grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Peak {
    pub g2: f64,
    pub axis_value: f64,
    pub theta_out: f64,
    pub residual: f64,
}

pub fn max_g2(base: &SystemParams, search: &SearchGrid) -> Result<G2Peak> {
    let axis = search.resolved_axis(base);
    axis.validate()?;
    let xs = axis.values();
    let points: Vec<SystemParams> = xs.iter().map(|&x| axis.name.apply(base, x)).collect();
    let sols = solve_all(&points);
    let mut best: Option<(usize, f64, f64, f64)> = None;
    let mut failures = 0;
    for (j, sol) in sols.iter().enumerate() {
        match sol {
            Ok(s) => {
                if let Some((t, g)) = best_theta(&s.moments, &search.theta, search.refine) {
                    if best.is_none_or(|b| g > b.2) {
                        best = Some((j, t, g, s.residual));
                    }
                }
            }
            Err(_) => failures += 1,
        }
    }
    let (j, theta, g2, residual) =
        best.ok_or_else(|| Error::NotFound(format!("no finite g²(0) on the search grid ({failures} failed solves)")))?;
    let mut peak = G2Peak {
        g2,
        axis_value: xs[j],
        theta_out: theta,
        residual,
    };
    if search.refine && j > 0 && j + 1 < xs.len() {
        let eval = |x: f64| -> Option<(f64, f64, f64)> {
            let s = solve_point(&axis.name.apply(base, x)).ok()?;
            let (t, g) = best_theta(&s.moments, &search.theta, true)?;
            Some((t, g, s.residual))
        };
        let mut cache: Vec<(f64, f64, f64, f64)> = Vec::new();
        let (x, g) = golden_max(
            |x| match eval(x) {
                Some((t, g, r)) => {
                    cache.push((x, t, g, r));
                    g
                }
                None => f64::NEG_INFINITY,
            },
            xs[j - 1],
            xs[j + 1],
            14,
        );
        if g > peak.g2 {
            if let Some(&(_, t, _, r)) = cache.iter().find(|c| c.0 == x) {
                peak = G2Peak {
                    g2: g,
                    axis_value: x,
                    theta_out: t,
                    residual: r,
                };
            }
        }
    }
    Ok(peak)
}

/// One special post-selection setting: a minimum of transmitted intensity
/// next to a QD line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecialAngle {
    pub theta_out: f64,
    pub laser_detuning: f64,
    pub transmission: f64,
    /// Frequency of the QD line this minimum belongs to.
    pub qd_line_ghz: f64,
}

fn parabola_vertex(x: [f64; 3], y: [f64; 3]) -> f64 {
    let d1 = (y[1] - y[0]) / (x[1] - x[0]);
    let d2 = (y[2] - y[1]) / (x[2] - x[1]);
    let curv = (d2 - d1) / (x[2] - x[0]);
    if curv <= 0.0 || !curv.is_finite() {
        return x[1];
    }
    let v = 0.5 * (x[0] + x[1]) - d1 / (2.0 * curv);
    v.clamp(x[0], x[2])
}

/// Wraps an angle into `[−90°, 90°)`.
pub fn wrap_theta(theta: f64) -> f64 {
    (theta + 90.0).rem_euclid(180.0) - 90.0
}

fn extinction(m: &PhotonMoments, theta: f64) -> f64 {
    m.transmission(&JonesVector::linear(theta)) / m.total_intensity()
}

fn refine_theta(m: &PhotonMoments, theta: f64, h: f64) -> f64 {
    let xs = [theta - h, theta, theta + h];
    parabola_vertex(xs, xs.map(|t| extinction(m, t)))
}

/// Locates the polarizer/laser settings that suppress single-photon
/// transmission next to each of the two QD lines.
///
/// Each line is searched within half the line spacing on either side. The
/// quantity minimized is the polarizer-resolved intensity relative to the
/// total transmitted intensity; far from the lines this ratio falls off
/// towards plain cross-polarized extinction, so the local minimum closest
/// to the line is taken rather than the window minimum. It is refined by parabolic
/// interpolation in θ_out and laser frequency, followed by one solve at the
/// refined frequency.
pub fn find_special_angles(base: &SystemParams, theta_grid: &Axis, laser_grid: &Axis) -> Result<[SpecialAngle; 2]> {
    base.validate()?;
    theta_grid.validate()?;
    laser_grid.validate()?;
    let mut lines: Vec<f64> = Vec::new();
    if base.qd_x_enabled && base.g_x != 0.0 {
        lines.push(base.f_qd_x);
    }
    if base.qd_y_enabled && base.g_y != 0.0 {
        lines.push(base.f_qd_y);
    }
    if lines.len() < 2 {
        return Err(Error::NotFound(format!(
            "{} coupled QD transition(s), need two",
            lines.len()
        )));
    }
    lines.sort_by(f64::total_cmp);
    let half_sep = 0.5 * (lines[1] - lines[0]);
    if half_sep <= 0.0 {
        return Err(Error::NotFound("QD lines coincide".into()));
    }

    let lasers = laser_grid.values();
    let thetas = theta_grid.values();
    let points: Vec<SystemParams> = lasers
        .iter()
        .map(|&f| SystemParams {
            f_laser: f,
            ..base.clone()
        })
        .collect();
    let sols: Vec<PointSolution> = solve_all(&points).into_iter().collect::<Result<_>>()?;
    let h_theta = theta_grid.step().abs();

    let mut out = Vec::with_capacity(2);
    for &line in &lines {
        let window: Vec<usize> = (0..lasers.len())
            .filter(|&j| (lasers[j] - line).abs() < half_sep)
            .collect();
        if window.len() < 3 {
            return Err(Error::NotFound(format!(
                "laser grid too coarse near the line at {line} GHz"
            )));
        }
        // Best polarizer angle per laser frequency, then the local minimum
        // of that profile closest to the line.
        let profile: Vec<(usize, f64)> = window
            .iter()
            .map(|&j| {
                (0..thetas.len())
                    .map(|i| (i, extinction(&sols[j].moments, thetas[i])))
                    .filter(|c| c.1.is_finite())
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .unwrap_or((0, f64::NAN))
            })
            .collect();
        let (k, _) = (1..window.len() - 1)
            .filter(|&k| profile[k].1 < profile[k - 1].1 && profile[k].1 <= profile[k + 1].1)
            .map(|k| (k, (lasers[window[k]] - line).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| Error::NotFound(format!("no interior transmission minimum near {line} GHz")))?;
        let (j, i) = (window[k], profile[k].0);
        let theta0 = refine_theta(&sols[j].moments, thetas[i], h_theta);
        let ys = [j - 1, j, j + 1].map(|k| extinction(&sols[k].moments, theta0));
        let laser = parabola_vertex([lasers[j - 1], lasers[j], lasers[j + 1]], ys);
        let refined = solve_point(&SystemParams {
            f_laser: laser,
            ..base.clone()
        })?;
        let theta = wrap_theta(refine_theta(&refined.moments, theta0, h_theta));
        out.push(SpecialAngle {
            theta_out: theta,
            laser_detuning: laser,
            transmission: refined.moments.transmission(&JonesVector::linear(theta)),
            qd_line_ghz: line,
        });
    }
    Ok([out[0], out[1]])
}

/// Hash of the fully resolved sweep definition.
pub fn params_hash(spec: &SweepSpec) -> String {
    let json = serde_json::to_string(spec).expect("sweep spec serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn metadata(spec: &SweepSpec, cells: &[Cell]) -> Metadata {
    Metadata {
        params_hash: params_hash(spec),
        n_fock: spec.base.n_fock,
        max_residual: cells
            .iter()
            .map(|c| c.residual)
            .filter(|r| r.is_finite())
            .fold(0.0, f64::max),
        n_failed: cells.iter().filter(|c| c.error.is_some()).count(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    }
}

/// Base parameters actually used by a scenario.
pub fn scenario_base(spec: &SweepSpec) -> SystemParams {
    let mut base = spec.base.clone();
    if spec.scenario == Scenario::AblationSingleTransition && base.qd_x_enabled && base.qd_y_enabled {
        base.qd_y_enabled = false;
    }
    base
}

pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let base = scenario_base(spec);
    let (cells, traces) = match spec.scenario {
        Scenario::TransmissionMap | Scenario::G2Map | Scenario::AblationSingleTransition | Scenario::PnVsTheta => {
            (grid_cells(spec, &base), Vec::new())
        }
        Scenario::KappaSweep => (kappa_cells(spec, &base)?, Vec::new()),
        Scenario::DephasingStudy => (variant_cells(spec, &base), Vec::new()),
        Scenario::G2TracePoint => trace_point(spec, &base)?,
    };
    Ok(SweepResult {
        scenario: spec.scenario,
        axis_names: spec.axes.iter().map(|a| a.name).collect(),
        metadata: metadata(spec, &cells),
        cells,
        traces,
    })
}

fn grid_cells(spec: &SweepSpec, base: &SystemParams) -> Vec<Cell> {
    let axes = &spec.axes;
    let values: Vec<Vec<f64>> = axes.iter().map(Axis::values).collect();
    // Distinct steady states: the product of all non-polarizer axes.
    let param_axes: Vec<usize> = (0..axes.len())
        .filter(|&k| axes[k].name != AxisName::ThetaOut)
        .collect();
    let theta_axis = axes.iter().position(|a| a.name == AxisName::ThetaOut);

    let param_index = |coord_idx: &[usize]| -> usize {
        param_axes
            .iter()
            .fold(0, |acc, &k| acc * values[k].len() + coord_idx[k])
    };
    let n_states: usize = param_axes.iter().map(|&k| values[k].len()).product();
    let points: Vec<SystemParams> = (0..n_states)
        .map(|mut s| {
            let mut p = base.clone();
            for &k in param_axes.iter().rev() {
                let len = values[k].len();
                p = axes[k].name.apply(&p, values[k][s % len]);
                s /= len;
            }
            p
        })
        .collect();
    let sols = solve_all(&points);

    let with_pn = spec.scenario == Scenario::PnVsTheta;
    let full_states: Vec<Option<DensityMatrix>> = if with_pn {
        sols.iter()
            .map(|s| s.as_ref().ok().and_then(|s| s.state.to_density_matrix().ok()))
            .collect()
    } else {
        Vec::new()
    };
    // Without a polarizer axis, detect in cross polarization unless told otherwise.
    let fixed_theta = spec.theta_out.unwrap_or(base.theta_in + 90.0);
    let shape: Vec<usize> = values.iter().map(Vec::len).collect();
    let n_cells: usize = shape.iter().product::<usize>().max(1);
    let mut cells = Vec::with_capacity(n_cells);
    for flat in 0..n_cells {
        let mut idx = vec![0; axes.len()];
        let mut rem = flat;
        for k in (0..axes.len()).rev() {
            idx[k] = rem % shape[k];
            rem /= shape[k];
        }
        let coords: Vec<f64> = idx.iter().enumerate().map(|(k, &i)| values[k][i]).collect();
        let theta = theta_axis.map_or(fixed_theta, |k| coords[k]);
        let jones = JonesVector::linear(theta);
        match &sols[param_index(&idx)] {
            Ok(s) => {
                let t_raw = s.moments.transmission(&jones);
                let g2 = s.moments.g2(&jones, DEFAULT_INTENSITY_FLOOR).unwrap_or(f64::NAN);
                let pn = full_states
                    .get(param_index(&idx))
                    .and_then(Option::as_ref)
                    .map(|rho| photon_number_dist(rho, theta).p);
                cells.push(Cell {
                    coords,
                    t_raw,
                    t_colnorm: f64::NAN,
                    g2_zero: g2,
                    pn,
                    residual: s.residual,
                    label: None,
                    eta: None,
                    argmax: None,
                    error: None,
                });
            }
            Err(e) => cells.push(Cell::failed(coords, e)),
        }
    }
    column_normalize(&mut cells, theta_axis);
    cells
}

/// Divides each fixed-θ_out column by its maximum raw transmission.
fn column_normalize(cells: &mut [Cell], theta_axis: Option<usize>) {
    let key = |c: &Cell| theta_axis.map_or(0u64, |k| c.coords[k].to_bits());
    let mut col_max: BTreeMap<u64, f64> = BTreeMap::new();
    for c in cells.iter().filter(|c| c.t_raw.is_finite()) {
        let e = col_max.entry(key(c)).or_insert(f64::NEG_INFINITY);
        *e = e.max(c.t_raw);
    }
    for c in cells.iter_mut() {
        if let Some(&m) = col_max.get(&key(c)) {
            if m > 0.0 && c.t_raw.is_finite() {
                c.t_colnorm = c.t_raw / m;
            }
        }
    }
}

fn peak_cell(coords: Vec<f64>, label: Option<String>, eta: Option<f64>, peak: Result<G2Peak>) -> Cell {
    match peak {
        Ok(pk) => Cell {
            coords,
            t_raw: f64::NAN,
            t_colnorm: f64::NAN,
            g2_zero: pk.g2,
            pn: None,
            residual: pk.residual,
            label,
            eta,
            argmax: Some((pk.axis_value, pk.theta_out)),
            error: None,
        },
        Err(e) => Cell {
            label,
            eta,
            ..Cell::failed(coords, &e)
        },
    }
}

fn kappa_cells(spec: &SweepSpec, base: &SystemParams) -> Result<Vec<Cell>> {
    let axis = spec
        .axes
        .iter()
        .find(|a| a.name == AxisName::Kappa)
        .ok_or_else(|| Error::Config("kappa_sweep needs a kappa_per_ns axis".into()))?;
    let nbar = empty_cavity_nbar(base);
    Ok(axis
        .values()
        .into_iter()
        .map(|kappa| {
            let eta = calibrate_eta(kappa, nbar);
            let p = SystemParams {
                kappa,
                eta,
                ..base.clone()
            };
            peak_cell(vec![kappa], None, Some(eta), max_g2(&p, &spec.search))
        })
        .collect())
}

fn variant_cells(spec: &SweepSpec, base: &SystemParams) -> Vec<Cell> {
    let mut cells = vec![peak_cell(vec![], Some("base".into()), None, max_g2(base, &spec.search))];
    for v in &spec.variants {
        let p = v.axis.apply(base, v.value);
        cells.push(peak_cell(
            vec![v.value],
            Some(v.label.clone()),
            None,
            max_g2(&p, &spec.search),
        ));
    }
    cells
}

fn trace_point(spec: &SweepSpec, base: &SystemParams) -> Result<(Vec<Cell>, Vec<CorrelationTrace>)> {
    let (params, theta, argmax) = match spec.theta_out {
        Some(t) => (base.clone(), t, None),
        None => {
            let pk = max_g2(base, &spec.search)?;
            let p = spec.search.axis.name.apply(base, pk.axis_value);
            (p, pk.theta_out, Some((pk.axis_value, pk.theta_out)))
        }
    };
    let l = build_liouvillian(&params)?;
    let ss = steady_state_factorized(&params)?;
    let jones = JonesVector::linear(theta);
    let raw = g2_trace(&l, &ss.rho, &jones, &spec.propagation)?;
    let moments = PhotonMoments::from_state(&ss.rho);
    let mut traces = vec![raw.clone()];
    for &j in &spec.jitters_ps {
        traces.push(convolve_detector(&raw, j)?);
    }
    let cell = Cell {
        coords: vec![theta],
        t_raw: moments.transmission(&jones),
        t_colnorm: f64::NAN,
        g2_zero: raw.at_zero(),
        pn: None,
        residual: ss.residual,
        label: None,
        eta: None,
        argmax,
        error: None,
    };
    Ok((vec![cell], traces))
}

/// Maxima of a scenario at `n_fock` and `n_fock + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub n_fock: usize,
    pub max_at_n: f64,
    pub max_at_n_plus_one: f64,
    pub relative_change: f64,
}

/// Re-runs a sweep with one more Fock level and compares the maxima of
/// `g²(0)` (or of raw transmission for transmission maps).
pub fn convergence_audit(spec: &SweepSpec) -> Result<ConvergenceReport> {
    let lo = run_sweep(spec)?;
    let mut bigger = spec.clone();
    bigger.base.n_fock += 1;
    let hi = run_sweep(&bigger)?;
    let pick = |r: &SweepResult| -> f64 {
        if spec.scenario == Scenario::TransmissionMap {
            r.max_transmission().map_or(f64::NAN, |c| c.t_raw)
        } else {
            r.max_g2().map_or(f64::NAN, |c| c.g2_zero)
        }
    };
    let (a, b) = (pick(&lo), pick(&hi));
    Ok(ConvergenceReport {
        n_fock: spec.base.n_fock,
        max_at_n: a,
        max_at_n_plus_one: b,
        relative_change: ((b - a) / a).abs(),
    })
}

/// Maximum `g²(0)` of the search grid at the base drive and at half the
/// drive amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveSensitivity {
    pub eta: f64,
    pub g2_max: f64,
    pub g2_max_half_eta: f64,
    pub relative_change: f64,
}

pub fn eta_halving_check(base: &SystemParams, search: &SearchGrid) -> Result<DriveSensitivity> {
    let full = max_g2(base, search)?;
    let half = max_g2(
        &SystemParams {
            eta: base.eta / 2.0,
            ..base.clone()
        },
        search,
    )?;
    Ok(DriveSensitivity {
        eta: base.eta,
        g2_max: full.g2,
        g2_max_half_eta: half.g2,
        relative_change: ((half.g2 - full.g2) / full.g2).abs(),
    })
}
