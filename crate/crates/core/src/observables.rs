//! Measured and predicted quantities of the transmitted light: polarized
//! transmission, `g²(0)`, `g²(τ)`, post-selected photon-number
//! distributions, and the detector-jitter convolution.
//!
//! The detected mode for a linear polarizer at `θ_out` is
//! `a = cos θ_out a_X + sin θ_out a_Y`; the rejected mode is the orthogonal
//! `−sin θ_out a_X + cos θ_out a_Y`. All quantities are intracavity
//! expectation values.

use ndarray::{linalg::kron, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{annihilation, fock_lowering, Operator, Polarization, SpaceLayout};
use crate::model::{vectorize, JonesVector, Liouvillian};
use crate::solver::{propagate_with, DensityMatrix, ProductState, PropagationSpec};

/// Intensities below this (in mean photon number) make `g²` undefined.
pub const DEFAULT_INTENSITY_FLOOR: f64 = 1e-12;

pub(crate) fn layout_of(rho: &DensityMatrix) -> SpaceLayout {
    let n_fock = ((rho.dim() / 4) as f64).sqrt().round() as usize;
    let layout = SpaceLayout::new(n_fock).expect("density matrix built on a valid layout");
    debug_assert_eq!(layout.dim(), rho.dim());
    layout
}

/// Field operator of the polarization selected by an output polarizer.
#[derive(Debug, Clone)]
pub struct PolarizedMode {
    jones: JonesVector,
    op: Operator,
}

impl PolarizedMode {
    /// `a = e1 a_X + e2 a_Y`.
    pub fn new(layout: &SpaceLayout, jones: JonesVector) -> Self {
        let ax = annihilation(layout, Polarization::X);
        let ay = annihilation(layout, Polarization::Y);
        let op = &ax.scale(jones.e1()) + &ay.scale(jones.e2());
        Self { jones, op }
    }

    pub fn jones(&self) -> &JonesVector {
        &self.jones
    }

    pub fn operator(&self) -> &Operator {
        &self.op
    }

    pub fn number(&self) -> Operator {
        &self.op.adjoint() * &self.op
    }
}

/// `T = Tr(ρ a†a)`.
pub fn transmission(rho: &DensityMatrix, out_pol: &JonesVector) -> f64 {
    let mode = PolarizedMode::new(&layout_of(rho), *out_pol);
    rho.expect(&mode.number()).re
}

pub fn g2_zero(rho: &DensityMatrix, out_pol: &JonesVector) -> Result<f64> {
    g2_zero_with_floor(rho, out_pol, DEFAULT_INTENSITY_FLOOR)
}

/// `Tr(ρ a†a†aa) / T²`, computed from the operator products directly.
pub fn g2_zero_with_floor(rho: &DensityMatrix, out_pol: &JonesVector, floor: f64) -> Result<f64> {
    let mode = PolarizedMode::new(&layout_of(rho), *out_pol);
    let a = mode.operator();
    let aa = a * a;
    let t = rho.expect(&mode.number()).re;
    if !(t >= floor) {
        return Err(Error::ZeroIntensity { intensity: t, floor });
    }
    let pairs = rho.expect(&(&aa.adjoint() * &aa)).re;
    Ok(pairs / (t * t))
}

/// Normal-ordered second and fourth moments of the two cavity modes,
/// `⟨a_i† a_j⟩` and `⟨a_i† a_j† a_k a_l⟩`. Any polarizer setting is then
/// evaluated without touching the density matrix again.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonMoments {
    second: [[C64; 2]; 2],
    fourth: [[[[C64; 2]; 2]; 2]; 2],
}

/// `Σ conj(A[r,c]) B[r,c] = Tr(A† B)`.
fn frobenius(a: &Operator, b: &Operator) -> C64 {
    a.as_array()
        .iter()
        .zip(b.as_array().iter())
        .map(|(x, y)| x.conj() * y)
        .sum()
}

impl PhotonMoments {
    pub fn from_state(rho: &DensityMatrix) -> Self {
        let layout = layout_of(rho);
        let a = [
            annihilation(&layout, Polarization::X),
            annihilation(&layout, Polarization::Y),
        ];
        let r = rho.operator();
        let a_rho = [&a[0] * r, &a[1] * r];
        let mut second = [[C64::new(0.0, 0.0); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                // Tr(ρ a_i† a_j) = Tr(a_i† (a_j ρ))
                second[i][j] = frobenius(&a[i], &a_rho[j]);
            }
        }
        let pair = |k: usize, l: usize| &a[k] * &a[l];
        let pairs = [[pair(0, 0), pair(0, 1)], [pair(1, 0), pair(1, 1)]];
        let pairs_rho = [
            [&pairs[0][0] * r, &pairs[0][1] * r],
            [&pairs[1][0] * r, &pairs[1][1] * r],
        ];
        let mut fourth = [[[[C64::new(0.0, 0.0); 2]; 2]; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        // a_i† a_j† = (a_j a_i)†
                        fourth[i][j][k][l] = frobenius(&pairs[j][i], &pairs_rho[k][l]);
                    }
                }
            }
        }
        Self { second, fourth }
    }

    /// Moments of a product state: operators of different modes act on
    /// different factors, so every moment is a product of one expectation
    /// per sector.
    pub fn from_product(state: &ProductState) -> Self {
        let n = state.n_fock;
        let a = kron(&fock_lowering(n), &Array2::eye(2));
        let ad = a.t().mapv(|v| v.conj());
        let eye: Array2<C64> = Array2::eye(2 * n);
        let pow = |m: &Array2<C64>, k: usize| (0..k).fold(eye.clone(), |acc, _| acc.dot(m));
        // e[s][p][q] = Tr(ρ_s a†^p a^q)
        let mut e = [[[C64::new(0.0, 0.0); 3]; 3]; 2];
        for (s, pol) in Polarization::BOTH.into_iter().enumerate() {
            let rho = state.sector(pol).operator().as_array();
            for p in 0..3 {
                for q in 0..3 {
                    let op = pow(&ad, p).dot(&pow(&a, q));
                    e[s][p][q] = op.t().iter().zip(rho.iter()).map(|(x, y)| x * y).sum();
                }
            }
        }
        let moment = |creators: &[usize], annihilators: &[usize]| -> C64 {
            let px = creators.iter().filter(|&&i| i == 0).count();
            let qx = annihilators.iter().filter(|&&i| i == 0).count();
            let (py, qy) = (creators.len() - px, annihilators.len() - qx);
            e[0][px][qx] * e[1][py][qy]
        };
        let mut second = [[C64::new(0.0, 0.0); 2]; 2];
        let mut fourth = [[[[C64::new(0.0, 0.0); 2]; 2]; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                second[i][j] = moment(&[i], &[j]);
                for k in 0..2 {
                    for l in 0..2 {
                        fourth[i][j][k][l] = moment(&[i, j], &[k, l]);
                    }
                }
            }
        }
        Self { second, fourth }
    }

    fn components(jones: &JonesVector) -> [C64; 2] {
        [jones.e1(), jones.e2()]
    }

    /// `⟨a†a⟩` for the mode selected by `jones`.
    pub fn transmission(&self, jones: &JonesVector) -> f64 {
        let e = Self::components(jones);
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..2 {
            for j in 0..2 {
                acc += e[i].conj() * e[j] * self.second[i][j];
            }
        }
        acc.re
    }

    /// `⟨a_X†a_X⟩ + ⟨a_Y†a_Y⟩`, independent of the polarizer.
    pub fn total_intensity(&self) -> f64 {
        (self.second[0][0] + self.second[1][1]).re
    }

    /// `⟨a†a†aa⟩` for the mode selected by `jones`.
    pub fn pair_intensity(&self, jones: &JonesVector) -> f64 {
        let e = Self::components(jones);
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        acc += e[i].conj() * e[j].conj() * e[k] * e[l] * self.fourth[i][j][k][l];
                    }
                }
            }
        }
        acc.re
    }

    pub fn g2(&self, jones: &JonesVector, floor: f64) -> Result<f64> {
        let t = self.transmission(jones);
        if !(t >= floor) {
            return Err(Error::ZeroIntensity { intensity: t, floor });
        }
        Ok(self.pair_intensity(jones) / (t * t))
    }
}

/// `g²(τ)` sampled on a symmetric delay grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTrace {
    /// Delays in ns, `−τ_max ..= τ_max`, uniformly spaced.
    pub tau: Vec<f64>,
    pub g2: Vec<f64>,
    /// Detector jitter FWHM in ps, if this trace has been convolved.
    pub convolved_with: Option<f64>,
}

impl CorrelationTrace {
    /// Builds the symmetric trace from samples at `τ ≥ 0`.
    pub fn from_nonnegative(tau: &[f64], g2: &[f64]) -> Self {
        assert_eq!(tau.len(), g2.len());
        let n = tau.len();
        let mut full_tau = Vec::with_capacity(2 * n - 1);
        let mut full_g2 = Vec::with_capacity(2 * n - 1);
        for k in (1..n).rev() {
            full_tau.push(-tau[k]);
            full_g2.push(g2[k]);
        }
        full_tau.extend_from_slice(tau);
        full_g2.extend_from_slice(g2);
        Self {
            tau: full_tau,
            g2: full_g2,
            convolved_with: None,
        }
    }

    pub fn peak(&self) -> f64 {
        self.g2.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn at_zero(&self) -> f64 {
        self.g2[self.g2.len() / 2]
    }

    pub fn spacing(&self) -> f64 {
        self.tau[1] - self.tau[0]
    }

    /// Trapezoidal area over the grid.
    pub fn area(&self) -> f64 {
        let h = self.spacing();
        let inner: f64 = self.g2.iter().sum();
        h * (inner - 0.5 * (self.g2[0] + self.g2[self.g2.len() - 1]))
    }
}

/// `g²(τ) = Tr[a†a · e^{Lτ}(a ρ a†)] / T²` via the quantum regression
/// theorem, reflected to negative delays.
pub fn g2_trace(
    l: &Liouvillian,
    rho: &DensityMatrix,
    out_pol: &JonesVector,
    spec: &PropagationSpec,
) -> Result<CorrelationTrace> {
    let layout = *l.layout();
    let mode = PolarizedMode::new(&layout, *out_pol);
    let a = mode.operator();
    let number = mode.number();
    let t = rho.expect(&number).re;
    if !(t >= DEFAULT_INTENSITY_FLOOR) {
        return Err(Error::ZeroIntensity {
            intensity: t,
            floor: DEFAULT_INTENSITY_FLOOR,
        });
    }
    // Propagate the conditional state a ρ a† / T so tolerances are relative
    // to a unit-trace quantity.
    let conditional = (&(a * rho.operator()) * &a.adjoint()).scale(C64::new(1.0 / t, 0.0));
    let v0 = vectorize(&conditional);
    // Tr(N X) = Σ N[c, r] X[r, c]; X[r, c] sits at c·d + r.
    let d = layout.dim();
    let weights: Vec<C64> = (0..d * d).map(|idx| number.get(idx / d, idx % d)).collect();

    let mut g2 = vec![0.0; spec.n_samples];
    propagate_with(l, &v0, spec, |k, _, v| {
        let num: C64 = weights.iter().zip(v).map(|(w, x)| w * x).sum();
        g2[k] = num.re / t;
    })?;
    Ok(CorrelationTrace::from_nonnegative(&spec.sample_times(), &g2))
}

/// Photon-number probabilities of the polarizer-selected mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonNumberDist {
    /// `P_0, P_1, …` up to the largest total photon number representable
    /// in the truncated space, `2 (n_fock − 1)`.
    pub p: Vec<f64>,
    pub theta_out: f64,
}

impl PhotonNumberDist {
    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.p.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    /// `Σ n(n−1) P_n / (Σ n P_n)²`.
    pub fn g2_from_moments(&self) -> f64 {
        let fm: f64 = self
            .p
            .iter()
            .enumerate()
            .map(|(n, p)| (n * n.saturating_sub(1)) as f64 * p)
            .sum();
        let m = self.mean();
        fm / (m * m)
    }

    pub fn get(&self, n: usize) -> f64 {
        self.p.get(n).copied().unwrap_or(0.0)
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Expansion of `(b_d†)^n (b_r†)^m |0,0⟩ / √(n! m!)` in the `|k, l⟩` Fock
/// basis of the X/Y modes, with `b_d† = c a_X† + s a_Y†` and
/// `b_r† = −s a_X† + c a_Y†`. Returns `(k, amplitude)` with `l = n + m − k`.
fn rotated_fock_state(n: usize, m: usize, c: f64, s: f64) -> Vec<(usize, f64)> {
    let total = n + m;
    let mut poly = vec![0.0; total + 1];
    for p in 0..=n {
        let a = binomial(n, p) * c.powi(p as i32) * s.powi((n - p) as i32);
        for q in 0..=m {
            let b = binomial(m, q) * (-s).powi(q as i32) * c.powi((m - q) as i32);
            poly[p + q] += a * b;
        }
    }
    let norm = (factorial(n) * factorial(m)).sqrt();
    poly.into_iter()
        .enumerate()
        .map(|(k, coef)| (k, coef * (factorial(k) * factorial(total - k)).sqrt() / norm))
        .collect()
}

/// Post-selected photon-number distribution: the cavity photon state is
/// projected onto Fock states `|n⟩_det |m⟩_rej` of the polarizer-rotated
/// modes, the rejected number `m` is summed out and the dot is traced out.
pub fn photon_number_dist(rho: &DensityMatrix, theta_out: f64) -> PhotonNumberDist {
    let layout = layout_of(rho);
    let nf = layout.n_fock();
    let r = rho.operator();

    // Photonic reduced state on (n_x, n_y).
    let dp = nf * nf;
    let mut photonic = ndarray::Array2::<C64>::zeros((dp, dp));
    for i in 0..layout.dim() {
        let si = layout.decode(i);
        for j in 0..layout.dim() {
            let sj = layout.decode(j);
            if si.s_x == sj.s_x && si.s_y == sj.s_y {
                photonic[[si.n_x * nf + si.n_y, sj.n_x * nf + sj.n_y]] += r.get(i, j);
            }
        }
    }

    let (s, c) = theta_out.to_radians().sin_cos();
    let max_total = 2 * (nf - 1);
    let mut p = vec![0.0; max_total + 1];
    for n in 0..=max_total {
        for m in 0..=(max_total - n) {
            let state: Vec<(usize, f64)> = rotated_fock_state(n, m, c, s)
                .into_iter()
                .filter(|&(k, _)| k < nf && n + m - k < nf)
                .map(|(k, amp)| (k * nf + (n + m - k), amp))
                .collect();
            let mut acc = C64::new(0.0, 0.0);
            for &(u, au) in &state {
                for &(v, av) in &state {
                    acc += photonic[[u, v]] * (au * av);
                }
            }
            p[n] += acc.re;
        }
    }
    PhotonNumberDist { p, theta_out }
}

/// Low-excitation estimate `g²(0) ≈ 2 P₂ / P₁²`.
pub fn g2_lowdrive_check(dist: &PhotonNumberDist) -> Result<f64> {
    let p1 = dist.get(1);
    let p2 = dist.get(2);
    if p2 == 0.0 {
        return Ok(0.0);
    }
    if !(p1 >= DEFAULT_INTENSITY_FLOOR) {
        return Err(Error::ZeroIntensity {
            intensity: p1,
            floor: DEFAULT_INTENSITY_FLOOR,
        });
    }
    Ok(2.0 * p2 / (p1 * p1))
}

/// Convolves with a unit-area Gaussian pair response of the given FWHM.
/// The trace is extended beyond its ends by its edge values.
pub fn convolve_detector(trace: &CorrelationTrace, jitter_fwhm_ps: f64) -> Result<CorrelationTrace> {
    if trace.convolved_with.is_some() {
        return Err(Error::param("trace", "already convolved with a detector response"));
    }
    if !(jitter_fwhm_ps > 0.0) || !jitter_fwhm_ps.is_finite() {
        return Err(Error::param(
            "jitter_fwhm_ps",
            format!("must be > 0, got {jitter_fwhm_ps}"),
        ));
    }
    if trace.tau.len() < 2 {
        return Err(Error::param("trace", "needs at least two samples"));
    }
    let dt = trace.spacing();
    let fwhm = jitter_fwhm_ps * 1e-3;
    if dt > fwhm / 4.0 * (1.0 + 1e-12) {
        return Err(Error::GridTooCoarse {
            spacing_ps: dt * 1e3,
            fwhm_ps: jitter_fwhm_ps,
        });
    }
    let sigma = fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
    let half = (6.0 * sigma / dt).ceil() as isize;
    let mut kernel: Vec<f64> = (-half..=half)
        .map(|k| {
            let x = k as f64 * dt;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= sum);

    let n = trace.g2.len() as isize;
    let g2 = (0..n)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, w)| {
                    let src = (i + j as isize - half).clamp(0, n - 1);
                    w * trace.g2[src as usize]
                })
                .sum()
        })
        .collect();
    Ok(CorrelationTrace {
        tau: trace.tau.clone(),
        g2,
        convolved_with: Some(jitter_fwhm_ps),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotated_states_are_normalized() {
        let (s, c) = 0.37f64.sin_cos();
        for n in 0..5 {
            for m in 0..5 {
                let norm: f64 = rotated_fock_state(n, m, c, s).iter().map(|(_, a)| a * a).sum();
                assert!((norm - 1.0).abs() < 1e-12, "({n}, {m}): {norm}");
            }
        }
    }

    #[test]
    fn rotation_by_zero_is_identity() {
        let st = rotated_fock_state(2, 1, 1.0, 0.0);
        for (k, amp) in st {
            let expected = if k == 2 { 1.0 } else { 0.0 };
            assert!((amp - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn flat_trace_is_unchanged_by_convolution() {
        let tau: Vec<f64> = (0..201).map(|k| k as f64 * 0.005).collect();
        let trace = CorrelationTrace::from_nonnegative(&tau, &vec![1.0; tau.len()]);
        let conv = convolve_detector(&trace, 50.0).unwrap();
        assert!(conv.g2.iter().all(|g| (g - 1.0).abs() < 1e-12));
        assert_eq!(conv.convolved_with, Some(50.0));
        assert!(convolve_detector(&conv, 50.0).is_err());
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let tau: Vec<f64> = (0..50).map(|k| k as f64 * 0.02).collect();
        let trace = CorrelationTrace::from_nonnegative(&tau, &vec![1.0; tau.len()]);
        assert!(matches!(
            convolve_detector(&trace, 50.0),
            Err(Error::GridTooCoarse { .. })
        ));
        assert!(convolve_detector(&trace, 500.0).is_ok());
        assert!(convolve_detector(&trace, 0.0).is_err());
    }

    #[test]
    fn convolution_preserves_area_and_lowers_peak() {
        let tau: Vec<f64> = (0..2001).map(|k| k as f64 * 0.005).collect();
        let g2: Vec<f64> = tau.iter().map(|t| 1.0 + 30.0 * (-t / 0.3f64).exp()).collect();
        let trace = CorrelationTrace::from_nonnegative(&tau, &g2);
        let conv = convolve_detector(&trace, 500.0).unwrap();
        assert!(conv.peak() < trace.peak());
        assert!(((conv.area() - trace.area()) / trace.area()).abs() < 1e-3);
    }

    #[test]
    fn lowdrive_estimate_edge_cases() {
        let poisson = |mean: f64| PhotonNumberDist {
            p: (0..7)
                .map(|n| (-mean).exp() * mean.powi(n) / factorial(n as usize))
                .collect(),
            theta_out: 0.0,
        };
        assert!((g2_lowdrive_check(&poisson(1e-4)).unwrap() - 1.0).abs() < 1e-3);
        let no_pairs = PhotonNumberDist {
            p: vec![0.9, 0.1, 0.0],
            theta_out: 0.0,
        };
        assert_eq!(g2_lowdrive_check(&no_pairs).unwrap(), 0.0);
        let dark = PhotonNumberDist {
            p: vec![1.0, 0.0, 1e-20],
            theta_out: 0.0,
        };
        assert!(matches!(g2_lowdrive_check(&dark), Err(Error::ZeroIntensity { .. })));
    }
}
