//! Physical parameters, the rotating-frame Hamiltonian and the Liouvillian.
//!
//! Rates (`kappa`, `g_*`, `gamma_*`, `eta`) are in 1/ns and enter the
//! generator directly. Frequency offsets are in GHz and are converted to
//! angular detunings with `ω = 2π f` before use.
//!
//! Density matrices are vectorized by column stacking: the entry `ρ[r, c]`
//! lives at index `c * dim + r`. With that convention
//! `vec(A ρ B) = (Bᵀ ⊗ A) vec(ρ)`.

use std::f64::consts::TAU;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use ndarray::{linalg::kron, Array2};

use crate::hilbert::{
    annihilation, fock_lowering, qd_lowering, qd_sigma_z, tls_lowering, Operator, Polarization, SpaceLayout,
};
use crate::sparse::{identity_triplets, kron_triplets, CsrMatrix};

fn default_true() -> bool {
    true
}

fn default_n_fock() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    #[serde(rename = "kappa_per_ns")]
    pub kappa: f64,
    #[serde(rename = "g_x_per_ns")]
    pub g_x: f64,
    #[serde(rename = "g_y_per_ns")]
    pub g_y: f64,
    #[serde(rename = "gamma_par_per_ns")]
    pub gamma_par: f64,
    #[serde(rename = "gamma_star_per_ns")]
    pub gamma_star: f64,
    #[serde(rename = "f_cav_x_ghz", default)]
    pub f_cav_x: f64,
    #[serde(rename = "f_cav_y_ghz", default)]
    pub f_cav_y: f64,
    #[serde(rename = "f_qd_x_ghz")]
    pub f_qd_x: f64,
    #[serde(rename = "f_qd_y_ghz")]
    pub f_qd_y: f64,
    #[serde(rename = "f_laser_ghz")]
    pub f_laser: f64,
    #[serde(rename = "eta_per_ns")]
    pub eta: f64,
    #[serde(rename = "theta_in_deg")]
    pub theta_in: f64,
    #[serde(default = "default_n_fock")]
    pub n_fock: usize,
    #[serde(default = "default_true")]
    pub qd_x_enabled: bool,
    #[serde(default = "default_true")]
    pub qd_y_enabled: bool,
}

impl SystemParams {
    /// Best-fit parameters of the first dot (QD A), driven at an
    /// empty-cavity mean photon number of 0.01.
    pub fn qd_a() -> Self {
        Self {
            kappa: 69.0,
            g_x: 15.0,
            g_y: 15.0,
            gamma_par: 3.5,
            gamma_star: 6.0,
            f_cav_x: 0.0,
            f_cav_y: 0.0,
            f_qd_x: -1.5,
            f_qd_y: 1.3,
            f_laser: 0.0,
            eta: 6.9,
            theta_in: 45.0,
            n_fock: 4,
            qd_x_enabled: true,
            qd_y_enabled: true,
        }
    }

    /// Best-fit parameters of the second dot (QD B).
    pub fn qd_b() -> Self {
        Self {
            kappa: 105.0,
            g_x: 14.0,
            g_y: 14.0,
            gamma_par: 1.0,
            gamma_star: 0.7,
            f_qd_x: -2.0,
            f_qd_y: 2.4,
            eta: 10.5,
            ..Self::qd_a()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("kappa_per_ns", self.kappa),
            ("g_x_per_ns", self.g_x),
            ("g_y_per_ns", self.g_y),
            ("gamma_par_per_ns", self.gamma_par),
            ("gamma_star_per_ns", self.gamma_star),
            ("f_cav_x_ghz", self.f_cav_x),
            ("f_cav_y_ghz", self.f_cav_y),
            ("f_qd_x_ghz", self.f_qd_x),
            ("f_qd_y_ghz", self.f_qd_y),
            ("f_laser_ghz", self.f_laser),
            ("eta_per_ns", self.eta),
            ("theta_in_deg", self.theta_in),
        ];
        for (field, v) in finite {
            if !v.is_finite() {
                return Err(Error::param(field, format!("must be finite, got {v}")));
            }
        }
        if self.kappa <= 0.0 {
            return Err(Error::param("kappa_per_ns", format!("must be > 0, got {}", self.kappa)));
        }
        if self.gamma_par < 0.0 {
            return Err(Error::param("gamma_par_per_ns", "must be >= 0"));
        }
        if self.gamma_star < 0.0 {
            return Err(Error::param("gamma_star_per_ns", "must be >= 0"));
        }
        if self.eta < 0.0 {
            return Err(Error::param("eta_per_ns", "must be >= 0"));
        }
        if self.n_fock < 2 {
            return Err(Error::param("n_fock", format!("must be >= 2, got {}", self.n_fock)));
        }
        Ok(())
    }

    pub fn layout(&self) -> Result<SpaceLayout> {
        SpaceLayout::new(self.n_fock)
    }

    /// Shifts both QD transitions by a common offset (Stark tuning).
    pub fn with_qd_offset(&self, offset_ghz: f64) -> Self {
        Self {
            f_qd_x: self.f_qd_x + offset_ghz,
            f_qd_y: self.f_qd_y + offset_ghz,
            ..self.clone()
        }
    }

    pub fn input_jones(&self) -> JonesVector {
        JonesVector::linear(self.theta_in)
    }

    fn coupling(&self, j: Polarization) -> f64 {
        match j {
            Polarization::X if self.qd_x_enabled => self.g_x,
            Polarization::Y if self.qd_y_enabled => self.g_y,
            _ => 0.0,
        }
    }

    fn enabled(&self, j: Polarization) -> bool {
        match j {
            Polarization::X => self.qd_x_enabled,
            Polarization::Y => self.qd_y_enabled,
        }
    }

    fn cavity_detuning(&self, j: Polarization) -> f64 {
        let f_cav = match j {
            Polarization::X => self.f_cav_x,
            Polarization::Y => self.f_cav_y,
        };
        TAU * (self.f_laser - f_cav)
    }

    fn qd_detuning(&self, j: Polarization) -> f64 {
        let f_qd = match j {
            Polarization::X => self.f_qd_x,
            Polarization::Y => self.f_qd_y,
        };
        TAU * (self.f_laser - f_qd)
    }
}

/// Normalized polarization state `(e1, e2)` in the `(X, Y)` basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JonesVector {
    e1: C64,
    e2: C64,
}

impl JonesVector {
    pub fn new(e1: C64, e2: C64) -> Result<Self> {
        let norm = e1.norm_sqr() + e2.norm_sqr();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::param("jones", format!("|e1|² + |e2|² = {norm}, expected 1")));
        }
        Ok(Self { e1, e2 })
    }

    /// Linear polarization at `theta_deg`, `(cos θ, sin θ)`.
    pub fn linear(theta_deg: f64) -> Self {
        let t = theta_deg.to_radians();
        Self {
            e1: C64::new(t.cos(), 0.0),
            e2: C64::new(t.sin(), 0.0),
        }
    }

    pub fn e1(&self) -> C64 {
        self.e1
    }

    pub fn e2(&self) -> C64 {
        self.e2
    }

    pub fn component(&self, j: Polarization) -> C64 {
        match j {
            Polarization::X => self.e1,
            Polarization::Y => self.e2,
        }
    }
}

/// Rotating-frame Hamiltonian (ħ = 1, units of 1/ns).
pub fn build_hamiltonian(p: &SystemParams) -> Result<Operator> {
    p.validate()?;
    let layout = p.layout()?;
    let dim = layout.dim();
    let drive = p.input_jones();
    let mut h = Operator::zeros(dim);
    for j in Polarization::BOTH {
        let a = annihilation(&layout, j);
        let ad = a.adjoint();
        let n = &ad * &a;
        h = &h + &n.scale(C64::new(p.cavity_detuning(j), 0.0));
        if p.enabled(j) {
            let s = qd_lowering(&layout, j);
            let sd = s.adjoint();
            h = &h + &(&sd * &s).scale(C64::new(p.qd_detuning(j), 0.0));
            let g = p.coupling(j);
            if g != 0.0 {
                let exchange = &(&s * &ad) + &(&sd * &a);
                h = &h + &exchange.scale(C64::new(g, 0.0));
            }
        }
        let e = drive.component(j);
        if p.eta != 0.0 && e != C64::new(0.0, 0.0) {
            // e′ is real for a linear input polarizer; a complex component
            // would break Hermiticity of (a† + a), so the drive uses e*a + e a†.
            let drive_term = &a.scale(e.conj()) + &ad.scale(e);
            h = &h + &drive_term.scale(C64::new(p.eta / 2.0, 0.0));
        }
    }
    Ok(h)
}

/// Dissipation channel `rate · D[c]`, with `D[c]ρ = 2cρc† − c†cρ − ρc†c`.
#[derive(Debug, Clone)]
pub struct Dissipator {
    pub rate: f64,
    pub operator: Operator,
}

/// Collapse channels of the master equation: for each polarization the
/// cavity loss `κ/2 D[a]`, QD relaxation `γ∥/2 D[σ]` and dephasing
/// `γ*/4 D[σ_z]`.
///
/// Relaxation and dephasing are kept for disabled transitions so the
/// decoupled two-level factor still relaxes to its ground state.
pub fn dissipators(p: &SystemParams) -> Result<Vec<Dissipator>> {
    let layout = p.layout()?;
    let mut out = Vec::with_capacity(6);
    for j in Polarization::BOTH {
        out.push(Dissipator {
            rate: p.kappa / 2.0,
            operator: annihilation(&layout, j),
        });
        if p.gamma_par > 0.0 {
            out.push(Dissipator {
                rate: p.gamma_par / 2.0,
                operator: qd_lowering(&layout, j),
            });
        }
        if p.gamma_star > 0.0 {
            out.push(Dissipator {
                rate: p.gamma_star / 4.0,
                operator: qd_sigma_z(&layout, j),
            });
        }
    }
    Ok(out)
}

/// Generator of `dρ/dt = L ρ` acting on column-stacked density matrices.
#[derive(Debug, Clone)]
pub struct Liouvillian {
    layout: SpaceLayout,
    matrix: CsrMatrix,
}

impl Liouvillian {
    pub fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    /// Hilbert-space dimension; the superoperator is `dim² × dim²`.
    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        self.matrix.matvec(v)
    }

    pub fn apply_to_operator(&self, rho: &Operator) -> Operator {
        unvectorize(&self.apply(&vectorize(rho)), self.dim())
    }
}

fn op_triplets(op: &Operator) -> Vec<(usize, usize, C64)> {
    op.nonzeros().collect()
}

fn transpose_triplets(t: &[(usize, usize, C64)]) -> Vec<(usize, usize, C64)> {
    t.iter().map(|&(r, c, v)| (c, r, v)).collect()
}

fn conj_triplets(t: &[(usize, usize, C64)]) -> Vec<(usize, usize, C64)> {
    t.iter().map(|&(r, c, v)| (r, c, v.conj())).collect()
}

fn scaled(t: Vec<(usize, usize, C64)>, s: C64) -> impl Iterator<Item = (usize, usize, C64)> {
    t.into_iter().map(move |(r, c, v)| (r, c, v * s))
}

pub fn build_liouvillian(p: &SystemParams) -> Result<Liouvillian> {
    let h = build_hamiltonian(p)?;
    let layout = p.layout()?;
    let d = layout.dim();
    let eye = identity_triplets(d);
    let h_t = op_triplets(&h);

    let mut triplets: Vec<(usize, usize, C64)> = Vec::new();
    // −i(I ⊗ H) + i(Hᵀ ⊗ I)
    triplets.extend(scaled(kron_triplets(&eye, &h_t, d), C64::new(0.0, -1.0)));
    triplets.extend(scaled(
        kron_triplets(&transpose_triplets(&h_t), &eye, d),
        C64::new(0.0, 1.0),
    ));

    for diss in dissipators(p)? {
        let c = &diss.operator;
        let c_t = op_triplets(c);
        let cdc = op_triplets(&(&c.adjoint() * c));
        let r = C64::new(diss.rate, 0.0);
        // 2 conj(c) ⊗ c − I ⊗ c†c − (c†c)ᵀ ⊗ I
        triplets.extend(scaled(kron_triplets(&conj_triplets(&c_t), &c_t, d), r * 2.0));
        triplets.extend(scaled(kron_triplets(&eye, &cdc, d), -r));
        triplets.extend(scaled(kron_triplets(&transpose_triplets(&cdc), &eye, d), -r));
    }

    Ok(Liouvillian {
        layout,
        matrix: CsrMatrix::from_triplets(d * d, d * d, triplets),
    })
}

/// One polarization sector: cavity mode `j` ⊗ QD transition `j`, basis
/// index `n·2 + s`. The two sectors do not interact, so the full
/// generator is the sum of the sector generators acting on their factors
/// and the steady state is the product of the sector steady states.
#[derive(Debug, Clone)]
pub struct Sector {
    pub polarization: Polarization,
    pub n_fock: usize,
    pub hamiltonian: Array2<C64>,
    pub dissipators: Vec<(f64, Array2<C64>)>,
}

impl Sector {
    pub fn dim(&self) -> usize {
        2 * self.n_fock
    }

    /// Dense column-stacked generator of this sector,
    /// `I⊗K + K̄⊗I + Σ 2r c̄⊗c` with `K = −iH − Σ r c†c`.
    pub fn liouvillian(&self) -> Array2<C64> {
        let d = self.dim();
        let i = C64::new(0.0, 1.0);
        let mut k = self.hamiltonian.mapv(|v| -i * v);
        for (rate, c) in &self.dissipators {
            k.scaled_add(C64::new(-rate, 0.0), &dagger(c).dot(c));
        }
        let mut l = Array2::<C64>::zeros((d * d, d * d));
        for a in 0..d {
            for b in 0..d {
                let kab = k[[a, b]];
                let kbar = kab.conj();
                for q in 0..d {
                    l[[q * d + a, q * d + b]] += kab;
                    l[[a * d + q, b * d + q]] += kbar;
                }
            }
        }
        for (rate, c) in &self.dissipators {
            let nz: Vec<(usize, usize, C64)> = c
                .indexed_iter()
                .filter(|(_, v)| v.norm() > 0.0)
                .map(|((r, col), v)| (r, col, *v))
                .collect();
            for &(r1, c1, v1) in &nz {
                for &(r2, c2, v2) in &nz {
                    l[[r1 * d + r2, c1 * d + c2]] += v1.conj() * v2 * (2.0 * rate);
                }
            }
        }
        l
    }
}

fn dagger(m: &Array2<C64>) -> Array2<C64> {
    m.t().mapv(|v| v.conj())
}

pub fn sector(p: &SystemParams, j: Polarization) -> Result<Sector> {
    p.validate()?;
    let n = p.n_fock;
    let a = kron(&fock_lowering(n), &Array2::eye(2));
    let s = kron(&Array2::eye(n), &tls_lowering());
    let (ad, sd) = (dagger(&a), dagger(&s));
    let re = |x: f64| C64::new(x, 0.0);
    let mut h = ad.dot(&a).mapv(|v| v * re(p.cavity_detuning(j)));
    if p.enabled(j) {
        h = h + sd.dot(&s).mapv(|v| v * re(p.qd_detuning(j)));
        let g = p.coupling(j);
        if g != 0.0 {
            h = h + (s.dot(&ad) + sd.dot(&a)).mapv(|v| v * re(g));
        }
    }
    let e = p.input_jones().component(j);
    if p.eta != 0.0 {
        h = h + (a.mapv(|v| v * e.conj()) + ad.mapv(|v| v * e)).mapv(|v| v * re(p.eta / 2.0));
    }
    let mut dissipators = vec![(p.kappa / 2.0, a)];
    if p.gamma_par > 0.0 {
        dissipators.push((p.gamma_par / 2.0, s.clone()));
    }
    if p.gamma_star > 0.0 {
        let sz = (sd.dot(&s) - s.dot(&sd)).mapv(|v| v * 0.5);
        dissipators.push((p.gamma_star / 4.0, sz));
    }
    Ok(Sector {
        polarization: j,
        n_fock: n,
        hamiltonian: h,
        dissipators,
    })
}

/// `C = g² / (κ (γ∥/2 + γ*))`, using the X-transition coupling.
pub fn cooperativity(p: &SystemParams) -> Result<f64> {
    if p.kappa <= 0.0 {
        return Err(Error::param("kappa_per_ns", "must be > 0"));
    }
    let gamma = p.gamma_par / 2.0 + p.gamma_star;
    if gamma == 0.0 {
        return Err(Error::DivisionByZero);
    }
    Ok(p.g_x * p.g_x / (p.kappa * gamma))
}

/// Column-stacked vectorization.
pub fn vectorize(op: &Operator) -> Vec<C64> {
    let d = op.dim();
    let a = op.as_array();
    let mut v = Vec::with_capacity(d * d);
    for c in 0..d {
        for r in 0..d {
            v.push(a[[r, c]]);
        }
    }
    v
}

pub fn unvectorize(v: &[C64], dim: usize) -> Operator {
    assert_eq!(v.len(), dim * dim, "vector length is not dim²");
    let arr = ndarray::Array2::from_shape_fn((dim, dim), |(r, c)| v[c * dim + r]);
    Operator::from_array(arr).expect("square by construction")
}

/// Indices of the diagonal entries `ρ[k, k]` in the vectorized layout.
pub fn trace_indices(dim: usize) -> impl Iterator<Item = usize> {
    (0..dim).map(move |k| k * dim + k)
}
