//! Truncated joint Hilbert space of the two cavity polarization modes and the
//! two quantum-dot transitions, plus the elementary operators acting on it.
//!
//! Tensor order is fixed as `mode X ⊗ mode Y ⊗ TLS X ⊗ TLS Y`. Each bosonic
//! factor holds photon numbers `0..n_fock`; each two-level factor is indexed
//! `0 = ground`, `1 = excited`. The flat basis index is therefore
//!
//! ```text
//! idx = ((n_x * n_fock + n_y) * 2 + s_x) * 2 + s_y
//! ```
//!
//! which is exactly the row-major Kronecker ordering produced by
//! [`kron_assemble`].

use std::ops::{Add, Mul, Sub};

use ndarray::{linalg::kron, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Polarization label shared by the cavity modes and the QD transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarization {
    X,
    Y,
}

impl Polarization {
    pub const BOTH: [Polarization; 2] = [Polarization::X, Polarization::Y];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpaceLayout {
    n_fock: usize,
}

/// Occupation tuple of one product basis state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BasisState {
    pub n_x: usize,
    pub n_y: usize,
    pub s_x: usize,
    pub s_y: usize,
}

impl SpaceLayout {
    pub fn new(n_fock: usize) -> Result<Self> {
        if n_fock < 2 {
            return Err(Error::param("n_fock", format!("must be >= 2, got {n_fock}")));
        }
        Ok(Self { n_fock })
    }

    pub fn n_fock(&self) -> usize {
        self.n_fock
    }

    pub fn dim(&self) -> usize {
        self.n_fock * self.n_fock * 4
    }

    /// Factor dimensions in tensor order.
    pub fn factor_dims(&self) -> [usize; 4] {
        [self.n_fock, self.n_fock, 2, 2]
    }

    pub fn encode(&self, s: BasisState) -> usize {
        debug_assert!(s.n_x < self.n_fock && s.n_y < self.n_fock && s.s_x < 2 && s.s_y < 2);
        ((s.n_x * self.n_fock + s.n_y) * 2 + s.s_x) * 2 + s.s_y
    }

    pub fn decode(&self, idx: usize) -> BasisState {
        debug_assert!(idx < self.dim());
        let s_y = idx % 2;
        let s_x = (idx / 2) % 2;
        let photons = idx / 4;
        BasisState {
            n_x: photons / self.n_fock,
            n_y: photons % self.n_fock,
            s_x,
            s_y,
        }
    }

    /// Basis index of `|0, 0, g, g⟩`.
    pub fn ground_index(&self) -> usize {
        0
    }
}

/// Dense complex square matrix on the joint space.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    data: Array2<C64>,
}

impl Operator {
    pub fn from_array(data: Array2<C64>) -> Result<Self> {
        let (r, c) = data.dim();
        if r != c {
            return Err(Error::DimensionMismatch { expected: r, found: c });
        }
        Ok(Self { data })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            data: Array2::zeros((dim, dim)),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self { data: Array2::eye(dim) }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_array(&self) -> &Array2<C64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<C64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.data[[row, col]]
    }

    pub fn adjoint(&self) -> Self {
        Self {
            data: self.data.t().mapv(|z| z.conj()),
        }
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self {
            data: &self.data * factor,
        }
    }

    pub fn trace(&self) -> C64 {
        self.data.diag().sum()
    }

    /// `Tr(self · other)` without forming the product.
    pub fn trace_product(&self, other: &Operator) -> C64 {
        let n = self.dim();
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..n {
            for k in 0..n {
                acc += self.data[[i, k]] * other.data[[k, i]];
            }
        }
        acc
    }

    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `max |A − A†|`.
    pub fn hermiticity_defect(&self) -> f64 {
        self.max_abs_diff(&self.adjoint())
    }

    pub fn commutator(&self, other: &Operator) -> Operator {
        &(self * other) - &(other * self)
    }

    /// Non-zero entries as `(row, col, value)` in row-major order.
    pub fn nonzeros(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        self.data
            .indexed_iter()
            .filter(|(_, v)| v.re != 0.0 || v.im != 0.0)
            .map(|((r, c), v)| (r, c, *v))
    }
}

impl<'a> Mul<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn mul(self, rhs: &'a Operator) -> Operator {
        assert_eq!(self.dim(), rhs.dim(), "operator dimension mismatch");
        Operator {
            data: self.data.dot(&rhs.data),
        }
    }
}

impl<'a> Add<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn add(self, rhs: &'a Operator) -> Operator {
        assert_eq!(self.dim(), rhs.dim(), "operator dimension mismatch");
        Operator {
            data: &self.data + &rhs.data,
        }
    }
}

impl<'a> Sub<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn sub(self, rhs: &'a Operator) -> Operator {
        assert_eq!(self.dim(), rhs.dim(), "operator dimension mismatch");
        Operator {
            data: &self.data - &rhs.data,
        }
    }
}

/// Single-mode truncated annihilation matrix, `⟨n−1|a|n⟩ = √n`.
pub fn fock_lowering(n_fock: usize) -> Array2<C64> {
    let mut a = Array2::zeros((n_fock, n_fock));
    for n in 1..n_fock {
        a[[n - 1, n]] = C64::new((n as f64).sqrt(), 0.0);
    }
    a
}

/// Two-level lowering matrix `|g⟩⟨e|`.
pub fn tls_lowering() -> Array2<C64> {
    let mut s = Array2::zeros((2, 2));
    s[[0, 1]] = C64::new(1.0, 0.0);
    s
}

/// Kronecker product of one matrix per tensor factor, in layout order.
pub fn kron_assemble(layout: &SpaceLayout, factors: [&Array2<C64>; 4]) -> Result<Operator> {
    for (f, expected) in factors.iter().zip(layout.factor_dims()) {
        let (r, c) = f.dim();
        if r != expected {
            return Err(Error::DimensionMismatch { expected, found: r });
        }
        if c != expected {
            return Err(Error::DimensionMismatch { expected, found: c });
        }
    }
    let xy = kron(factors[0], factors[1]);
    let xyx = kron(&xy, factors[2]);
    Operator::from_array(kron(&xyx, factors[3]))
}

fn embed(layout: &SpaceLayout, slot: usize, m: &Array2<C64>) -> Operator {
    let dims = layout.factor_dims();
    let eyes: Vec<Array2<C64>> = dims.iter().map(|&d| Array2::eye(d)).collect();
    let mut factors = [&eyes[0], &eyes[1], &eyes[2], &eyes[3]];
    factors[slot] = m;
    kron_assemble(layout, factors).expect("layout factor dimensions are consistent")
}

/// Photon annihilation operator for one polarization mode.
pub fn annihilation(layout: &SpaceLayout, mode: Polarization) -> Operator {
    let slot = match mode {
        Polarization::X => 0,
        Polarization::Y => 1,
    };
    embed(layout, slot, &fock_lowering(layout.n_fock()))
}

/// Lowering operator of one QD transition.
pub fn qd_lowering(layout: &SpaceLayout, transition: Polarization) -> Operator {
    let slot = match transition {
        Polarization::X => 2,
        Polarization::Y => 3,
    };
    embed(layout, slot, &tls_lowering())
}

/// `σ_z = ½(σ†σ − σσ†)`.
pub fn qd_sigma_z(layout: &SpaceLayout, transition: Polarization) -> Operator {
    let s = qd_lowering(layout, transition);
    let sd = s.adjoint();
    (&(&sd * &s) - &(&s * &sd)).scale(C64::new(0.5, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn rejects_small_truncation() {
        assert!(SpaceLayout::new(1).is_err());
        assert_eq!(SpaceLayout::new(2).unwrap().dim(), 16);
        assert_eq!(SpaceLayout::new(5).unwrap().dim(), 100);
    }

    #[test]
    fn encode_decode_round_trip() {
        for n in 2..6 {
            let layout = SpaceLayout::new(n).unwrap();
            for idx in 0..layout.dim() {
                assert_eq!(layout.encode(layout.decode(idx)), idx);
            }
        }
    }

    #[test]
    fn lowest_rungs() {
        let layout = SpaceLayout::new(2).unwrap();
        let a = annihilation(&layout, Polarization::X);
        let one = layout.encode(BasisState {
            n_x: 1,
            n_y: 0,
            s_x: 0,
            s_y: 0,
        });
        let zero = layout.encode(BasisState {
            n_x: 0,
            n_y: 0,
            s_x: 0,
            s_y: 0,
        });
        assert_eq!(a.get(zero, one), c(1.0));
        // a|0⟩ = 0: the vacuum column is empty.
        assert!((0..layout.dim()).all(|r| a.get(r, zero) == c(0.0)));
    }

    #[test]
    fn sqrt_n_matrix_element() {
        let layout = SpaceLayout::new(4).unwrap();
        let a = annihilation(&layout, Polarization::Y);
        let from = layout.encode(BasisState {
            n_x: 0,
            n_y: 3,
            s_x: 1,
            s_y: 0,
        });
        let to = layout.encode(BasisState {
            n_x: 0,
            n_y: 2,
            s_x: 1,
            s_y: 0,
        });
        assert!((a.get(to, from).re - 1.7320508075688772).abs() < 1e-15);
    }

    #[test]
    fn canonical_commutator_below_edge() {
        let layout = SpaceLayout::new(4).unwrap();
        for mode in Polarization::BOTH {
            let a = annihilation(&layout, mode);
            let comm = a.commutator(&a.adjoint());
            for idx in 0..layout.dim() {
                let s = layout.decode(idx);
                let n = if mode == Polarization::X { s.n_x } else { s.n_y };
                let expected = if n < layout.n_fock() - 1 {
                    1.0
                } else {
                    -((layout.n_fock() - 1) as f64)
                };
                assert!((comm.get(idx, idx).re - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn creation_drops_at_truncation_edge() {
        let layout = SpaceLayout::new(3).unwrap();
        let ad = annihilation(&layout, Polarization::X).adjoint();
        let top = layout.encode(BasisState {
            n_x: 2,
            n_y: 1,
            s_x: 0,
            s_y: 1,
        });
        assert!((0..layout.dim()).all(|r| ad.get(r, top) == c(0.0)));
    }

    #[test]
    fn tls_algebra() {
        let layout = SpaceLayout::new(3).unwrap();
        let id = Operator::identity(layout.dim());
        for t in Polarization::BOTH {
            let s = qd_lowering(&layout, t);
            let sd = s.adjoint();
            assert_eq!((&s * &s).max_abs(), 0.0);
            let completeness = &(&sd * &s) + &(&s * &sd);
            assert!(completeness.max_abs_diff(&id) < 1e-15);
            let sz = qd_sigma_z(&layout, t);
            // Diagonal with entries ±½ only.
            for i in 0..layout.dim() {
                for j in 0..layout.dim() {
                    let v = sz.get(i, j);
                    if i == j {
                        assert!((v.re.abs() - 0.5).abs() < 1e-15);
                    } else {
                        assert_eq!(v, c(0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn identity_factors_give_identity() {
        let layout = SpaceLayout::new(3).unwrap();
        let eyes: Vec<Array2<C64>> = layout.factor_dims().iter().map(|&d| Array2::eye(d)).collect();
        let op = kron_assemble(&layout, [&eyes[0], &eyes[1], &eyes[2], &eyes[3]]).unwrap();
        assert_eq!(op, Operator::identity(layout.dim()));
    }

    #[test]
    fn kron_rejects_wrong_factor() {
        let layout = SpaceLayout::new(3).unwrap();
        let eye2: Array2<C64> = Array2::eye(2);
        let eye3: Array2<C64> = Array2::eye(3);
        let err = kron_assemble(&layout, [&eye2, &eye3, &eye2, &eye2]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 3, found: 2 }));
    }

    #[test]
    fn mixed_product_property() {
        let a = ndarray::array![[c(1.0), C64::new(0.5, -2.0)], [c(3.0), C64::new(0.0, 1.0)]];
        let b = ndarray::array![[C64::new(-1.0, 1.0), c(2.0)], [c(0.25), c(4.0)]];
        let i2: Array2<C64> = Array2::eye(2);
        let lhs = kron(&a, &i2).dot(&kron(&i2, &b));
        let rhs = kron(&a, &b);
        let diff = (&lhs - &rhs).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-14);
    }

    #[test]
    fn operators_are_identity_off_target() {
        // The reduced operator on each non-target factor of O†O is
        // proportional to identity.
        let layout = SpaceLayout::new(3).unwrap();
        let ops = [
            (annihilation(&layout, Polarization::X), 0),
            (annihilation(&layout, Polarization::Y), 1),
            (qd_lowering(&layout, Polarization::X), 2),
            (qd_lowering(&layout, Polarization::Y), 3),
        ];
        for (op, target) in ops {
            let oo = &op.adjoint() * &op;
            for keep in 0..4 {
                if keep == target {
                    continue;
                }
                let red = reduce_to_factor(&layout, &oo, keep);
                let scale = red[[0, 0]];
                for ((i, j), v) in red.indexed_iter() {
                    let expected = if i == j { scale } else { c(0.0) };
                    assert!((v - expected).norm() < 1e-12, "factor {keep} of op {target}");
                }
            }
        }
    }

    fn reduce_to_factor(layout: &SpaceLayout, op: &Operator, keep: usize) -> Array2<C64> {
        let d = layout.factor_dims()[keep];
        let mut out = Array2::zeros((d, d));
        let idx_of = |s: &BasisState| [s.n_x, s.n_y, s.s_x, s.s_y];
        for i in 0..layout.dim() {
            for j in 0..layout.dim() {
                let (si, sj) = (idx_of(&layout.decode(i)), idx_of(&layout.decode(j)));
                let traced_equal = (0..4).filter(|&k| k != keep).all(|k| si[k] == sj[k]);
                if traced_equal {
                    out[[si[keep], sj[keep]]] += op.get(i, j);
                }
            }
        }
        out
    }
}
