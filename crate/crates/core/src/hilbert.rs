//! Finite-dimensional operator algebra: states, observables, Heisenberg
//! evolution and the superoperator actions used by the correlators.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

/// Absolute elementwise tolerance for Hermiticity checks.
pub const HERMITIAN_TOL: f64 = 1e-12;

const TRACE_TOL: f64 = 1e-12;
const EIGEN_FLOOR: f64 = -1e-10;

pub(crate) fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

fn hermitian_deviation(m: &CMatrix) -> f64 {
    max_abs(&(m - m.adjoint()))
}

/// A square complex matrix acting on a `dim`-dimensional Hilbert space.
#[derive(Clone, PartialEq)]
pub struct Operator {
    m: CMatrix,
}

impl fmt::Debug for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Operator(dim={}){}", self.dim(), self.m)
    }
}

impl Operator {
    pub fn new(m: CMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::param("dim", "operator dimension must be positive"));
        }
        Ok(Self { m })
    }

    /// Build a Hermitian operator. Inputs within [`HERMITIAN_TOL`] of
    /// Hermitian are symmetrized, anything further off is rejected.
    pub fn hermitian(m: CMatrix) -> Result<Self> {
        let op = Self::new(m)?;
        op.symmetrized()
    }

    pub fn from_real(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let mut m = CMatrix::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::NotSquare {
                    rows: n,
                    cols: row.len(),
                });
            }
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = C64::new(*v, 0.0);
            }
        }
        Self::new(m)
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            m: CMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            m: CMatrix::zeros(dim, dim),
        }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = CMatrix::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = C64::new(*v, 0.0);
        }
        Self { m }
    }

    pub fn pauli_x() -> Self {
        let o = C64::new(0.0, 0.0);
        let l = C64::new(1.0, 0.0);
        Self {
            m: CMatrix::from_row_slice(2, 2, &[o, l, l, o]),
        }
    }

    pub fn pauli_y() -> Self {
        let o = C64::new(0.0, 0.0);
        let i = C64::new(0.0, 1.0);
        Self {
            m: CMatrix::from_row_slice(2, 2, &[o, -i, i, o]),
        }
    }

    /// sigma_z = diag(1, -1); index 0 is the "up" state.
    pub fn pauli_z() -> Self {
        Self::diagonal(&[1.0, -1.0])
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }

    pub fn dagger(&self) -> Self {
        Self { m: self.m.adjoint() }
    }

    pub fn trace(&self) -> C64 {
        self.m.trace()
    }

    pub fn hermitian_deviation(&self) -> f64 {
        hermitian_deviation(&self.m)
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian_deviation() <= HERMITIAN_TOL
    }

    /// (A + A†)/2 if already Hermitian to tolerance.
    pub fn symmetrized(&self) -> Result<Self> {
        let deviation = self.hermitian_deviation();
        if deviation > HERMITIAN_TOL {
            return Err(Error::NotHermitian { deviation });
        }
        Ok(Self {
            m: (&self.m + self.m.adjoint()) * C64::new(0.5, 0.0),
        })
    }

    pub fn scale(&self, c: C64) -> Self {
        Self { m: &self.m * c }
    }

    /// Largest elementwise modulus.
    pub fn max_abs(&self) -> f64 {
        max_abs(&self.m)
    }

    /// Tr[rho A].
    pub fn expectation(&self, rho: &DensityMatrix) -> Result<C64> {
        check_dims(self.dim(), rho.dim())?;
        Ok((rho.matrix() * &self.m).trace())
    }

    pub fn commutator(&self, other: &Operator) -> Result<Operator> {
        check_dims(self.dim(), other.dim())?;
        Ok(Operator {
            m: &self.m * &other.m - &other.m * &self.m,
        })
    }

    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        max_abs(&(&self.m - &other.m))
    }

    /// Sorted eigenvalues of a Hermitian operator.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(EigenSystem::new(self)?.energies.iter().copied().collect())
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        Operator { m: &self.m + &rhs.m }
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        Operator { m: &self.m - &rhs.m }
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        Operator { m: &self.m * &rhs.m }
    }
}

impl Mul<f64> for &Operator {
    type Output = Operator;
    fn mul(self, rhs: f64) -> Operator {
        Operator {
            m: &self.m * C64::new(rhs, 0.0),
        }
    }
}

impl Serialize for Operator {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[f64; 2]>> = (0..self.dim())
            .map(|i| {
                (0..self.dim())
                    .map(|j| [self.m[(i, j)].re, self.m[(i, j)].im])
                    .collect()
            })
            .collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Operator {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = Vec::deserialize(deserializer)?;
        let n = rows.len();
        let mut m = CMatrix::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(de::Error::custom(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, [re, im]) in row.iter().enumerate() {
                if !re.is_finite() || !im.is_finite() {
                    return Err(de::Error::custom("non-finite matrix entry"));
                }
                m[(i, j)] = C64::new(*re, *im);
            }
        }
        Operator::new(m).map_err(de::Error::custom)
    }
}

/// A validated density matrix: Hermitian, unit trace, positive semidefinite.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    m: CMatrix,
}

impl DensityMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        let op = Operator::new(m)
            .and_then(|op| op.symmetrized())
            .map_err(|e| Error::NotDensityMatrix(e.to_string()))?;
        let tr = op.trace();
        if (tr - C64::new(1.0, 0.0)).norm() > TRACE_TOL {
            return Err(Error::NotDensityMatrix(format!("trace {tr} != 1")));
        }
        let lowest = EigenSystem::new(&op)?.energies[0];
        if lowest < EIGEN_FLOOR {
            return Err(Error::NotDensityMatrix(format!("negative eigenvalue {lowest:e}")));
        }
        Ok(Self { m: op.m })
    }

    /// |psi><psi| after normalizing psi.
    pub fn pure(psi: &DVector<C64>) -> Result<Self> {
        let norm = psi.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::NotDensityMatrix("zero state vector".into()));
        }
        let v = psi / C64::new(norm, 0.0);
        Ok(Self { m: &v * v.adjoint() })
    }

    /// Diagonal state with the given (normalized) populations.
    pub fn from_populations(p: &[f64]) -> Result<Self> {
        if p.iter().any(|x| *x < 0.0 || !x.is_finite()) {
            return Err(Error::NotDensityMatrix("negative population".into()));
        }
        let total: f64 = p.iter().sum();
        if total <= 0.0 {
            return Err(Error::NotDensityMatrix("zero populations".into()));
        }
        let q: Vec<f64> = p.iter().map(|x| x / total).collect();
        Ok(Self {
            m: Operator::diagonal(&q).m,
        })
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            m: CMatrix::identity(dim, dim) * C64::new(1.0 / dim as f64, 0.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn as_operator(&self) -> Operator {
        Operator { m: self.m.clone() }
    }
}

/// Eigendecomposition of a Hermitian operator with ascending energies.
#[derive(Clone, Debug)]
pub struct EigenSystem {
    pub energies: DVector<f64>,
    pub vectors: CMatrix,
}

impl EigenSystem {
    pub fn new(h: &Operator) -> Result<Self> {
        let h = h.symmetrized()?;
        let eig = h.m.symmetric_eigen();
        let n = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let energies = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
        let mut vectors = CMatrix::zeros(n, n);
        for (col, &k) in order.iter().enumerate() {
            vectors.set_column(col, &eig.eigenvectors.column(k));
        }
        Ok(Self { energies, vectors })
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    /// Largest |E|.
    pub fn spectral_norm(&self) -> f64 {
        self.energies.iter().fold(0.0, |acc, e| acc.max(e.abs()))
    }

    /// V† X V.
    pub fn to_eigenbasis(&self, x: &CMatrix) -> CMatrix {
        self.vectors.adjoint() * x * &self.vectors
    }

    /// V X V†.
    pub fn from_eigenbasis(&self, x: &CMatrix) -> CMatrix {
        &self.vectors * x * self.vectors.adjoint()
    }

    /// Heisenberg evolution of a matrix already expressed in the eigenbasis:
    /// (A(t))_{mn} = A_{mn} e^{i(E_m - E_n)t}.
    pub fn evolve_in_eigenbasis(&self, a: &CMatrix, t: f64) -> CMatrix {
        let n = self.dim();
        CMatrix::from_fn(n, n, |m, k| {
            a[(m, k)] * C64::from_polar(1.0, (self.energies[m] - self.energies[k]) * t)
        })
    }

    /// e^{iHt} A e^{-iHt}.
    pub fn evolve(&self, a: &Operator, t: f64) -> Result<Operator> {
        check_dims(self.dim(), a.dim())?;
        if t == 0.0 {
            return Ok(a.clone());
        }
        let local = self.to_eigenbasis(&a.m);
        Ok(Operator {
            m: self.from_eigenbasis(&self.evolve_in_eigenbasis(&local, t)),
        })
    }

    /// Max residual |H v_k - E_k v_k| over all eigenpairs.
    pub fn residual(&self, h: &Operator) -> f64 {
        let hv = &h.m * &self.vectors;
        let mut worst: f64 = 0.0;
        for k in 0..self.dim() {
            let r = hv.column(k) - self.vectors.column(k) * C64::new(self.energies[k], 0.0);
            worst = worst.max(r.norm());
        }
        worst
    }
}

pub(crate) fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// e^{iHt} A e^{-iHt} via the eigendecomposition of H.
pub fn evolve_heisenberg(a: &Operator, h: &Operator, t: f64) -> Result<Operator> {
    check_dims(h.dim(), a.dim())?;
    if t == 0.0 {
        h.symmetrized()?;
        return Ok(a.clone());
    }
    EigenSystem::new(h)?.evolve(a, t)
}

/// Gibbs state exp(-H/T)/Z. At T = 0 the result is the uniform mixture over
/// the (possibly degenerate) ground space.
pub fn thermal_state(h: &Operator, temperature: f64) -> Result<DensityMatrix> {
    if temperature < 0.0 || temperature.is_nan() {
        return Err(Error::NegativeTemperature(temperature));
    }
    let eig = EigenSystem::new(h)?;
    let populations = gibbs_populations(eig.energies.as_slice(), temperature);
    let n = eig.dim();
    let mut diag = CMatrix::zeros(n, n);
    for (k, p) in populations.iter().enumerate() {
        diag[(k, k)] = C64::new(*p, 0.0);
    }
    let m = eig.from_eigenbasis(&diag);
    let m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    Ok(DensityMatrix { m })
}

/// Normalized Boltzmann weights for ascending energies.
pub fn gibbs_populations(energies: &[f64], temperature: f64) -> Vec<f64> {
    let e0 = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = energies.iter().fold(1.0_f64, |acc, e| acc.max(e.abs()));
    let degenerate = 1e-10 * scale;
    let weights: Vec<f64> = if temperature == 0.0 {
        energies
            .iter()
            .map(|e| if e - e0 <= degenerate { 1.0 } else { 0.0 })
            .collect()
    } else {
        energies.iter().map(|e| (-(e - e0) / temperature).exp()).collect()
    };
    let z: f64 = weights.iter().sum();
    weights.iter().map(|w| w / z).collect()
}

/// {A, X}/2.
pub fn apply_c(a: &Operator, x: &Operator) -> Result<Operator> {
    check_dims(a.dim(), x.dim())?;
    Ok(Operator {
        m: (&a.m * &x.m + &x.m * &a.m) * C64::new(0.5, 0.0),
    })
}

/// [A, X]/i.
pub fn apply_q(a: &Operator, x: &Operator) -> Result<Operator> {
    check_dims(a.dim(), x.dim())?;
    Ok(Operator {
        m: (&a.m * &x.m - &x.m * &a.m) * C64::new(0.0, -1.0),
    })
}

/// A X.
pub fn apply_plus(a: &Operator, x: &Operator) -> Result<Operator> {
    check_dims(a.dim(), x.dim())?;
    Ok(Operator { m: &a.m * &x.m })
}

/// X A.
pub fn apply_minus(a: &Operator, x: &Operator) -> Result<Operator> {
    check_dims(a.dim(), x.dim())?;
    Ok(Operator { m: &x.m * &a.m })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn rotating_pauli_x() {
        let omega = 1.7;
        let h = &Operator::pauli_z() * (omega / 2.0);
        let a = &Operator::pauli_x() + &Operator::pauli_z();
        for &t in &[0.3, 1.1, -2.4] {
            let got = evolve_heisenberg(&a, &h, t).unwrap();
            let want = &(&(&Operator::pauli_x() * (omega * t).cos()) - &(&Operator::pauli_y() * (omega * t).sin()))
                + &Operator::pauli_z();
            assert!(got.max_abs_diff(&want) < 1e-12);
        }
    }

    #[test]
    fn full_period_is_identity_map() {
        let omega = 2.3;
        let h = &Operator::pauli_z() * (omega / 2.0);
        let t = 2.0 * std::f64::consts::PI / omega;
        let got = evolve_heisenberg(&Operator::pauli_x(), &h, t).unwrap();
        assert!(got.max_abs_diff(&Operator::pauli_x()) < 1e-12);
    }

    #[test]
    fn zero_time_returns_input() {
        let a = Operator::new(CMatrix::from_fn(3, 3, |i, j| c(i as f64, j as f64))).unwrap();
        let h = Operator::diagonal(&[0.0, 1.0, 3.0]);
        assert_eq!(evolve_heisenberg(&a, &h, 0.0).unwrap(), a);
    }

    #[test]
    fn evolution_rejects_bad_inputs() {
        let h = Operator::diagonal(&[0.0, 1.0, 3.0]);
        assert!(matches!(
            evolve_heisenberg(&Operator::pauli_x(), &h, 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
        let nh = Operator::new(CMatrix::from_row_slice(
            2,
            2,
            &[c(0., 0.), c(1., 0.), c(0., 0.), c(0., 0.)],
        ))
        .unwrap();
        assert!(matches!(
            evolve_heisenberg(&Operator::pauli_x(), &nh, 1.0),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn tls_thermal_state() {
        let omega = 1.3;
        let temp = 0.7;
        let h = &Operator::pauli_z() * (omega / 2.0);
        let rho = thermal_state(&h, temp).unwrap();
        let th = (omega / (2.0 * temp)).tanh();
        let want = &(&Operator::identity(2) - &(&Operator::pauli_z() * th)) * 0.5;
        assert!(rho.as_operator().max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn hot_limit_is_maximally_mixed() {
        let h = Operator::diagonal(&[-1.0, 0.2, 0.5, 2.0]);
        let rho = thermal_state(&h, 1e12 * 2.0).unwrap();
        let mixed = DensityMatrix::maximally_mixed(4);
        assert!(rho.as_operator().max_abs_diff(&mixed.as_operator()) < 1e-10);
    }

    #[test]
    fn degenerate_ground_space_at_zero_temperature() {
        let h = Operator::diagonal(&[0.0, 0.0, 1.0]);
        let rho = thermal_state(&h, 0.0).unwrap();
        assert!((rho.matrix()[(0, 0)].re - 0.5).abs() < 1e-14);
        assert!((rho.matrix()[(1, 1)].re - 0.5).abs() < 1e-14);
        assert!(rho.matrix()[(2, 2)].norm() < 1e-14);
        assert!(matches!(thermal_state(&h, -1.0), Err(Error::NegativeTemperature(_))));
    }

    #[test]
    fn oscillator_occupation() {
        // geometric-series oracle: n = sum k e^{-k} / sum e^{-k}
        let dim = 32;
        let energies: Vec<f64> = (0..dim).map(|k| k as f64 + 0.5).collect();
        let h = Operator::diagonal(&energies);
        let rho = thermal_state(&h, 1.0).unwrap();
        let number = Operator::diagonal(&(0..dim).map(|k| k as f64).collect::<Vec<_>>());
        let nbar = number.expectation(&rho).unwrap().re;
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..dim {
            let w = (-(k as f64)).exp();
            num += k as f64 * w;
            den += w;
        }
        assert!((nbar - num / den).abs() < 1e-12);
        assert!((nbar - 1.0 / (1f64.exp() - 1.0)).abs() < 1e-6);
    }

    #[test]
    fn superoperator_examples() {
        let q = apply_q(&Operator::pauli_x(), &Operator::pauli_y()).unwrap();
        assert!(q.max_abs_diff(&(&Operator::pauli_z() * 2.0)) < 1e-15);

        let a = Operator::new(CMatrix::from_fn(3, 3, |i, j| c(i as f64 - j as f64, 0.5))).unwrap();
        let cc = apply_c(&a, &Operator::identity(3)).unwrap();
        assert!(cc.max_abs_diff(&a) < 1e-15);

        let h = Operator::diagonal(&[0.0, 1.0]);
        let rho = thermal_state(&h, 0.8).unwrap().as_operator();
        assert!(apply_q(&h, &rho).unwrap().max_abs() < 1e-15);

        let sx = Operator::pauli_x();
        assert!(apply_plus(&sx, &sx).unwrap().max_abs_diff(&Operator::identity(2)) < 1e-15);
    }

    #[test]
    fn apply_minus_on_fock_vacuum() {
        // lowering matrix a_{n-1,n} = sqrt(n)
        let dim = 4;
        let mut a = CMatrix::zeros(dim, dim);
        for n in 1..dim {
            a[(n - 1, n)] = c((n as f64).sqrt(), 0.0);
        }
        let a = Operator::new(a).unwrap();
        let mut vac = CMatrix::zeros(dim, dim);
        vac[(0, 0)] = c(1.0, 0.0);
        let got = apply_minus(&a, &Operator::new(vac).unwrap()).unwrap();
        let mut want = CMatrix::zeros(dim, dim);
        want[(0, 1)] = c(1.0, 0.0);
        assert!(got.max_abs_diff(&Operator::new(want).unwrap()) < 1e-15);
    }

    #[test]
    fn dimension_errors() {
        let x = Operator::identity(3);
        assert!(apply_c(&Operator::pauli_x(), &x).is_err());
        assert!(apply_q(&Operator::pauli_x(), &x).is_err());
        assert!(apply_plus(&Operator::pauli_x(), &x).is_err());
        assert!(apply_minus(&Operator::pauli_x(), &x).is_err());
    }

    #[test]
    fn hermitian_constructor_policy() {
        let mut m = Operator::pauli_y().into_matrix();
        m[(0, 1)] += c(5e-13, 0.0);
        assert!(Operator::hermitian(m.clone()).unwrap().hermitian_deviation() == 0.0);
        m[(0, 1)] += c(1e-9, 0.0);
        assert!(matches!(Operator::hermitian(m), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn density_matrix_validation() {
        assert!(DensityMatrix::new(CMatrix::identity(2, 2)).is_err());
        let bad = CMatrix::from_row_slice(2, 2, &[c(1.5, 0.), c(0., 0.), c(0., 0.), c(-0.5, 0.)]);
        assert!(DensityMatrix::new(bad).is_err());
        assert!(DensityMatrix::new(CMatrix::identity(2, 2) * c(0.5, 0.0)).is_ok());
    }

    #[test]
    fn json_round_trip() {
        let op = &Operator::pauli_y() * 0.25;
        let text = serde_json::to_string(&op).unwrap();
        assert_eq!(text, "[[[0.0,0.0],[0.0,-0.25]],[[0.0,0.25],[0.0,0.0]]]");
        let back: Operator = serde_json::from_str(&text).unwrap();
        assert_eq!(back, op);
        assert!(serde_json::from_str::<Operator>("[[[1,0]],[[0,0]]]").is_err());
        assert!(serde_json::from_str::<Operator>("[]").is_err());
    }

    #[test]
    fn eigensystem_is_unitary() {
        let h = Operator::hermitian(CMatrix::from_fn(5, 5, |i, j| {
            let s = (i + j) as f64;
            if i == j {
                c(s, 0.0)
            } else if i < j {
                c(0.3 * s, 0.1 * (j as f64 - i as f64))
            } else {
                c(0.3 * s, -0.1 * (i as f64 - j as f64))
            }
        }))
        .unwrap();
        let eig = EigenSystem::new(&h).unwrap();
        let gram = eig.vectors.adjoint() * &eig.vectors;
        assert!(max_abs(&(gram - CMatrix::identity(5, 5))) < 1e-10);
        assert!(eig.residual(&h) < 1e-10);
        assert!(eig.energies.as_slice().windows(2).all(|w| w[0] <= w[1]));
    }
}
