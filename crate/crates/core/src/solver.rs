//! Steady state of `L ρ = 0` and time propagation of vectorized operators.

use std::sync::Once;

use faer::linalg::solvers::Solve;
use faer::{Col, Mat, Par, Side};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::Operator;
use crate::hilbert::Polarization;
use crate::model::{build_liouvillian, sector, trace_indices, unvectorize, vectorize, Liouvillian, SystemParams};
use crate::sparse::CsrMatrix;

const TRACE_TOL: f64 = 1e-10;
const HERMITICITY_TOL: f64 = 1e-10;
const POSITIVITY_TOL: f64 = -1e-8;
const RESIDUAL_TOL: f64 = 1e-9;
/// Bound on the estimated condition number of the augmented system.
const CONDITION_LIMIT: f64 = 1e13;

static SEQUENTIAL_FAER: Once = Once::new();

// Parallelism lives in the sweep scheduler; factorizations stay on the
// calling thread.
fn init_faer() {
    SEQUENTIAL_FAER.call_once(|| faer::set_global_parallelism(Par::Seq));
}

/// Hermitian, unit-trace, positive semidefinite operator.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    op: Operator,
    min_eigenvalue: f64,
}

impl DensityMatrix {
    /// Validates trace, Hermiticity and positivity. Small negative
    /// eigenvalues down to `-1e-8` are tolerated and reported through
    /// [`DensityMatrix::min_eigenvalue`].
    pub fn new(op: Operator) -> Result<Self> {
        let tr = op.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace = {tr}")));
        }
        let herm = op.hermiticity_defect();
        if herm > HERMITICITY_TOL {
            return Err(Error::InvalidState(format!("max |ρ − ρ†| = {herm:.3e}")));
        }
        let min_eigenvalue = min_eigenvalue(&op)?;
        if min_eigenvalue < POSITIVITY_TOL {
            return Err(Error::InvalidState(format!("minimum eigenvalue {min_eigenvalue:.3e}")));
        }
        Ok(Self { op, min_eigenvalue })
    }

    /// Pure state `|idx⟩⟨idx|` in the product basis.
    pub fn basis_projector(dim: usize, idx: usize) -> Self {
        let mut op = ndarray::Array2::zeros((dim, dim));
        op[[idx, idx]] = C64::new(1.0, 0.0);
        Self {
            op: Operator::from_array(op).expect("square"),
            min_eigenvalue: 0.0,
        }
    }

    pub fn operator(&self) -> &Operator {
        &self.op
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    /// `Tr(ρ A)`.
    pub fn expect(&self, a: &Operator) -> C64 {
        self.op.trace_product(a)
    }
}

fn min_eigenvalue(op: &Operator) -> Result<f64> {
    init_faer();
    let a = op.as_array();
    let n = op.dim();
    // Hermitian part only; the anti-Hermitian defect was bounded above.
    let m = Mat::<C64>::from_fn(n, n, |i, j| (a[[i, j]] + a[[j, i]].conj()) * 0.5);
    let eig = m
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::NoConvergence(format!("eigenvalue solver: {e:?}")))?;
    Ok(eig.first().copied().unwrap_or(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrylovOptions {
    /// GMRES restart length.
    pub restart: usize,
    pub max_iterations: usize,
    /// Relative residual target on the augmented system.
    pub tolerance: f64,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self {
            restart: 120,
            max_iterations: 50_000,
            tolerance: 1e-13,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateOptions {
    /// Diagonal slot `k` whose row `ρ[k, k]` is replaced by the trace
    /// constraint. Any diagonal row is redundant because `Tr(L ρ) = 0`.
    pub trace_slot: usize,
    /// Systems with more unknowns than this use GMRES instead of sparse LU.
    pub krylov_threshold: usize,
    pub krylov: KrylovOptions,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self {
            trace_slot: 0,
            krylov_threshold: 250_000,
            krylov: KrylovOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveMethod {
    SparseLu,
    Gmres,
    /// Product of the two polarization-sector steady states.
    Factorized,
}

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub rho: DensityMatrix,
    /// `‖L vec(ρ)‖ / ‖vec(ρ)‖`.
    pub residual: f64,
    pub method: SolveMethod,
}

pub fn steady_state(l: &Liouvillian) -> Result<SteadyState> {
    steady_state_with(l, &SteadyStateOptions::default())
}

/// Trace-augmented system: row `slot·dim + slot` of `L` is replaced by the
/// row that sums the diagonal of `ρ`.
fn augmented_system(l: &Liouvillian, slot: usize) -> (CsrMatrix, usize) {
    let d = l.dim();
    let replaced = slot * d + slot;
    let n = d * d;
    let rows = l.matrix().triplets().filter(|&(r, _, _)| r != replaced);
    let trace_row = trace_indices(d).map(|c| (replaced, c, C64::new(1.0, 0.0)));
    (CsrMatrix::from_triplets(n, n, rows.chain(trace_row)), replaced)
}

pub fn steady_state_with(l: &Liouvillian, opts: &SteadyStateOptions) -> Result<SteadyState> {
    init_faer();
    let d = l.dim();
    if opts.trace_slot >= d {
        return Err(Error::param("trace_slot", format!("must be < {d}")));
    }
    let n = d * d;
    let (a, replaced) = augmented_system(l, opts.trace_slot);
    let mut rhs = vec![C64::new(0.0, 0.0); n];
    rhs[replaced] = C64::new(1.0, 0.0);

    let (x, method) = if n > opts.krylov_threshold {
        (gmres(&a, &rhs, &opts.krylov)?, SolveMethod::Gmres)
    } else {
        let lu = a.to_faer().sp_lu().map_err(|_| Error::SolverSingular {
            residual: f64::INFINITY,
        })?;
        let b = Col::<C64>::from_fn(n, |i| rhs[i]);
        let sol = lu.solve(&b);
        // Rank deficiency shows up as a huge response to a generic right-hand side.
        let probe = Col::<C64>::from_fn(n, |i| C64::new((0.7 * i as f64 + 0.3).sin(), (1.3 * i as f64).cos()));
        let response = lu.solve(&probe);
        let gain = (0..n).map(|i| response[i].norm_sqr()).sum::<f64>().sqrt()
            / (0..n).map(|i| probe[i].norm_sqr()).sum::<f64>().sqrt();
        if !(gain * max_row_norm(&a) < CONDITION_LIMIT) {
            return Err(Error::SolverSingular {
                residual: f64::INFINITY,
            });
        }
        ((0..n).map(|i| sol[i]).collect::<Vec<_>>(), SolveMethod::SparseLu)
    };

    if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::SolverSingular {
            residual: f64::INFINITY,
        });
    }
    let tr: C64 = trace_indices(d).map(|k| x[k]).sum();
    if tr.norm() < 1e-300 {
        return Err(Error::SolverSingular {
            residual: f64::INFINITY,
        });
    }
    let x: Vec<C64> = x.into_iter().map(|z| z / tr).collect();
    let residual = norm(&l.apply(&x)) / norm(&x);
    if !(residual < RESIDUAL_TOL) {
        return Err(Error::SolverSingular { residual });
    }
    let rho = DensityMatrix::new(unvectorize(&x, d))?;
    Ok(SteadyState { rho, residual, method })
}

/// Steady state of one polarization sector by dense LU on the
/// trace-augmented generator.
fn sector_steady_state(l: &ndarray::Array2<C64>, d: usize) -> Result<ndarray::Array2<C64>> {
    let n = d * d;
    let a = Mat::<C64>::from_fn(n, n, |r, c| {
        if r == 0 {
            if c % (d + 1) == 0 {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        } else {
            l[[r, c]]
        }
    });
    let lu = a.partial_piv_lu();
    let rhs = Col::<C64>::from_fn(n, |i| if i == 0 { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
    let x = lu.solve(&rhs);
    let probe = Col::<C64>::from_fn(n, |i| C64::new((0.7 * i as f64 + 0.3).sin(), (1.3 * i as f64).cos()));
    let response = lu.solve(&probe);
    let gain = response.norm_l2() / probe.norm_l2();
    // ‖A‖∞ with |re| + |im| per entry, within √2 of the modulus sum.
    let scale = (0..n)
        .map(|r| (0..n).map(|c| a[(r, c)].l1_norm()).sum::<f64>())
        .fold(0.0, f64::max);
    if !(gain * scale < CONDITION_LIMIT) || (0..n).any(|i| !x[i].re.is_finite() || !x[i].im.is_finite()) {
        return Err(Error::SolverSingular {
            residual: f64::INFINITY,
        });
    }
    Ok(ndarray::Array2::from_shape_fn((d, d), |(r, c)| x[c * d + r]))
}

/// Steady state as the product of the two polarization-sector states
/// (sector basis index `n·2 + s`).
#[derive(Debug, Clone)]
pub struct ProductState {
    pub n_fock: usize,
    pub x: DensityMatrix,
    pub y: DensityMatrix,
    /// `r_X + r_Y`, the sum of the sector relative residuals. Because
    /// `‖A ⊗ B‖ = ‖A‖ ‖B‖`, it bounds the relative residual of the full
    /// product state under the full Liouvillian.
    pub residual: f64,
}

impl ProductState {
    pub fn sector(&self, j: Polarization) -> &DensityMatrix {
        match j {
            Polarization::X => &self.x,
            Polarization::Y => &self.y,
        }
    }

    /// Full-space density matrix in the layout of [`crate::hilbert::SpaceLayout`].
    pub fn to_density_matrix(&self) -> Result<DensityMatrix> {
        let layout = crate::hilbert::SpaceLayout::new(self.n_fock)?;
        let (rx, ry) = (self.x.operator().as_array(), self.y.operator().as_array());
        let dim = layout.dim();
        let rho = ndarray::Array2::from_shape_fn((dim, dim), |(r, c)| {
            let (u, v) = (layout.decode(r), layout.decode(c));
            rx[[u.n_x * 2 + u.s_x, v.n_x * 2 + v.s_x]] * ry[[u.n_y * 2 + u.s_y, v.n_y * 2 + v.s_y]]
        });
        DensityMatrix::new(Operator::from_array(rho)?)
    }
}

pub fn steady_state_product(p: &SystemParams) -> Result<ProductState> {
    init_faer();
    let d = 2 * p.n_fock;
    let mut parts = Vec::with_capacity(2);
    let mut residual = 0.0;
    for j in Polarization::BOTH {
        let l = sector(p, j)?.liouvillian();
        let rho = sector_steady_state(&l, d)?;
        let op = Operator::from_array(rho)?;
        let op = op.scale(op.trace().inv());
        let v = ndarray::Array1::from(vectorize(&op));
        let lv = l.dot(&v);
        residual += norm(lv.as_slice().expect("contiguous")) / norm(v.as_slice().expect("contiguous"));
        parts.push(DensityMatrix::new(op)?);
    }
    if !(residual < RESIDUAL_TOL) {
        return Err(Error::SolverSingular { residual });
    }
    let y = parts.pop().expect("two sectors");
    let x = parts.pop().expect("two sectors");
    Ok(ProductState {
        n_fock: p.n_fock,
        x,
        y,
        residual,
    })
}

/// Full steady state assembled from [`steady_state_product`]. The residual
/// is re-evaluated with the full Liouvillian, so the result satisfies the
/// same contract as [`steady_state`].
pub fn steady_state_factorized(p: &SystemParams) -> Result<SteadyState> {
    let product = steady_state_product(p)?;
    let rho = product.to_density_matrix()?;
    let full = build_liouvillian(p)?;
    let x = vectorize(rho.operator());
    let residual = norm(&full.apply(&x)) / norm(&x);
    if !(residual < RESIDUAL_TOL) {
        return Err(Error::SolverSingular { residual });
    }
    Ok(SteadyState {
        rho,
        residual,
        method: SolveMethod::Factorized,
    })
}

fn max_row_norm(a: &CsrMatrix) -> f64 {
    (0..a.n_rows())
        .map(|r| a.row(r).map(|(_, v)| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn dot_conj(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Restarted GMRES with right Jacobi preconditioning.
pub fn gmres(a: &CsrMatrix, b: &[C64], opts: &KrylovOptions) -> Result<Vec<C64>> {
    let n = b.len();
    let m = opts.restart.max(1).min(n);
    let inv_diag: Vec<C64> = a
        .diagonal()
        .into_iter()
        .map(|z| if z.norm() > 1e-300 { z.inv() } else { C64::new(1.0, 0.0) })
        .collect();
    let precond = |v: &[C64]| -> Vec<C64> { v.iter().zip(&inv_diag).map(|(x, s)| x * s).collect() };

    let b_norm = norm(b).max(1e-300);
    let mut x = vec![C64::new(0.0, 0.0); n];
    let mut iterations = 0usize;
    loop {
        let ax = a.matvec(&x);
        let r: Vec<C64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        if beta / b_norm < opts.tolerance {
            return Ok(x);
        }
        if iterations >= opts.max_iterations {
            return Err(Error::NoConvergence(format!(
                "GMRES stalled at relative residual {:.3e} after {iterations} iterations",
                beta / b_norm
            )));
        }

        let mut basis: Vec<Vec<C64>> = vec![r.iter().map(|z| z / beta).collect()];
        let mut h = vec![vec![C64::new(0.0, 0.0); m]; m + 1];
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![C64::new(0.0, 0.0); m];
        let mut g = vec![C64::new(0.0, 0.0); m + 1];
        g[0] = C64::new(beta, 0.0);
        let mut k_used = 0;

        for j in 0..m {
            iterations += 1;
            let mut w = a.matvec(&precond(&basis[j]));
            for (i, v) in basis.iter().enumerate() {
                let hij = dot_conj(v, &w);
                h[i][j] = hij;
                for (wk, vk) in w.iter_mut().zip(v) {
                    *wk -= hij * vk;
                }
            }
            let h_next = norm(&w);
            h[j + 1][j] = C64::new(h_next, 0.0);

            for i in 0..j {
                let (hi, hi1) = (h[i][j], h[i + 1][j]);
                h[i][j] = hi * cs[i] + sn[i] * hi1;
                h[i + 1][j] = -sn[i].conj() * hi + hi1 * cs[i];
            }
            let (p, q) = (h[j][j], h[j + 1][j]);
            let nu = (p.norm_sqr() + q.norm_sqr()).sqrt();
            if nu == 0.0 {
                cs[j] = 1.0;
                sn[j] = C64::new(0.0, 0.0);
            } else if p.norm() == 0.0 {
                cs[j] = 0.0;
                sn[j] = C64::new(1.0, 0.0);
            } else {
                let phase = p / p.norm();
                cs[j] = p.norm() / nu;
                sn[j] = phase * q.conj() / nu;
            }
            h[j][j] = cs[j] * p + sn[j] * q;
            h[j + 1][j] = C64::new(0.0, 0.0);
            let gj = g[j];
            g[j] = gj * cs[j];
            g[j + 1] = -sn[j].conj() * gj;
            k_used = j + 1;

            let converged = g[j + 1].norm() / b_norm < opts.tolerance * 0.5;
            if converged || h_next == 0.0 || iterations >= opts.max_iterations {
                break;
            }
            basis.push(w.iter().map(|z| z / h_next).collect());
        }

        let mut y = vec![C64::new(0.0, 0.0); k_used];
        for i in (0..k_used).rev() {
            let mut acc = g[i];
            for k in i + 1..k_used {
                acc -= h[i][k] * y[k];
            }
            y[i] = acc / h[i][i];
        }
        let mut update = vec![C64::new(0.0, 0.0); n];
        for (yi, v) in y.iter().zip(&basis) {
            for (u, vk) in update.iter_mut().zip(v) {
                *u += yi * vk;
            }
        }
        for (xi, ui) in x.iter_mut().zip(precond(&update)) {
            *xi += ui;
        }
    }
}

/// Output grid and error control for [`propagate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationSpec {
    pub tau_max: f64,
    pub n_samples: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for PropagationSpec {
    fn default() -> Self {
        Self {
            tau_max: 10.0,
            n_samples: 2001,
            rel_tol: 1e-8,
            abs_tol: 1e-11,
        }
    }
}

impl PropagationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_max > 0.0) || !self.tau_max.is_finite() {
            return Err(Error::param("tau_max_ns", "must be > 0"));
        }
        if self.n_samples < 2 {
            return Err(Error::param("n_samples", "must be >= 2"));
        }
        for (field, tol) in [("rel_tol", self.rel_tol), ("abs_tol", self.abs_tol)] {
            if !(tol > 0.0 && tol <= 1e-2) {
                return Err(Error::param(field, format!("must lie in (0, 1e-2], got {tol}")));
            }
        }
        Ok(())
    }

    pub fn sample_times(&self) -> Vec<f64> {
        let step = self.tau_max / (self.n_samples - 1) as f64;
        (0..self.n_samples).map(|k| k as f64 * step).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PropagationStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

// Dormand–Prince 5(4) tableau. The generator is autonomous, so the node
// coefficients c_i never appear.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b − b̂ (fifth minus embedded fourth order).
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy_into(out: &mut [C64], y: &[C64], h: f64, terms: &[(f64, &[C64])]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = C64::new(0.0, 0.0);
        for (coef, k) in terms {
            acc += k[i] * *coef;
        }
        *o = y[i] + acc * h;
    }
}

/// Integrates `dv/dτ = L v` from `v0`, calling `visit(k, τ_k, v(τ_k))` at
/// every sample time of `spec` (including `τ = 0`).
pub fn propagate_with<F>(l: &Liouvillian, v0: &[C64], spec: &PropagationSpec, mut visit: F) -> Result<PropagationStats>
where
    F: FnMut(usize, f64, &[C64]),
{
    spec.validate()?;
    let n = l.dim() * l.dim();
    if v0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: v0.len(),
        });
    }
    let m = l.matrix();
    let times = spec.sample_times();
    let mut stats = PropagationStats::default();

    let mut y = v0.to_vec();
    visit(0, 0.0, &y);

    let zero = C64::new(0.0, 0.0);
    let mut k1 = m.matvec(&y);
    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) = (
        vec![zero; n],
        vec![zero; n],
        vec![zero; n],
        vec![zero; n],
        vec![zero; n],
        vec![zero; n],
    );
    let mut stage = vec![zero; n];
    let mut y_new = vec![zero; n];

    let spacing = times[1] - times[0];
    let scale0 = norm(&y).max(1e-300);
    let rate0 = norm(&k1) / scale0;
    let mut h = if rate0 > 0.0 {
        (0.01 / rate0).min(spacing)
    } else {
        spacing
    };
    let h_min = 1e-14 * spec.tau_max;
    let max_steps = 50_000_000usize;

    let mut t = 0.0;
    for (idx, &target) in times.iter().enumerate().skip(1) {
        while t < target {
            let remaining = target - t;
            let last = h >= remaining;
            let step = if last { remaining } else { h };

            axpy_into(&mut stage, &y, step, &[(A21, &k1)]);
            m.matvec_into(&stage, &mut k2);
            axpy_into(&mut stage, &y, step, &[(A31, &k1), (A32, &k2)]);
            m.matvec_into(&stage, &mut k3);
            axpy_into(&mut stage, &y, step, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
            m.matvec_into(&stage, &mut k4);
            axpy_into(&mut stage, &y, step, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
            m.matvec_into(&stage, &mut k5);
            axpy_into(
                &mut stage,
                &y,
                step,
                &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
            );
            m.matvec_into(&stage, &mut k6);
            axpy_into(
                &mut y_new,
                &y,
                step,
                &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
            );
            m.matvec_into(&y_new, &mut k7);

            let mut err_acc = 0.0;
            for i in 0..n {
                let e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * step;
                let sc = spec.abs_tol + spec.rel_tol * y[i].norm().max(y_new[i].norm());
                err_acc += (e.norm() / sc).powi(2);
            }
            let err = (err_acc / n as f64).sqrt();

            if err <= 1.0 {
                t = if last { target } else { t + step };
                std::mem::swap(&mut y, &mut y_new);
                std::mem::swap(&mut k1, &mut k7);
                stats.accepted_steps += 1;
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                // Do not let a short landing step shrink the running step size.
                if !last || step * factor > h {
                    h = step * factor;
                }
            } else {
                stats.rejected_steps += 1;
                h = step * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            }
            if h < h_min || stats.accepted_steps + stats.rejected_steps > max_steps {
                return Err(Error::NoConvergence(format!(
                    "step control failed at τ = {t:.6} ns (h = {h:.3e})"
                )));
            }
        }
        visit(idx, target, &y);
    }
    Ok(stats)
}

/// Returns `e^{Lτ_k} v0` at every sample time.
pub fn propagate(l: &Liouvillian, v0: &[C64], spec: &PropagationSpec) -> Result<Vec<Vec<C64>>> {
    let mut out = Vec::with_capacity(spec.n_samples);
    propagate_with(l, v0, spec, |_, _, v| out.push(v.to_vec()))?;
    Ok(out)
}

/// Column-stacked vector of a density matrix, convenience for callers.
pub fn vectorized(rho: &DensityMatrix) -> Vec<C64> {
    vectorize(rho.operator())
}
