//! Truncated Fock-space harmonic oscillator, quasiprobability moments and
//! weak moments of ladder operators.
//!
//! Convention: `a = (x + ip)/√2`, `[x, p] = i`, `H = Ω(a†a + 1/2)`.

use std::f64::consts::SQRT_2;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{check_dims, CMatrix, DensityMatrix, Operator, C64};
use crate::kernel::MemoryKernel;

const MIN_DIM: usize = 8;
/// Population allowed beyond the truncation.
const TAIL_MASS: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct FockSpace {
    dim: usize,
    pub a: Operator,
    pub a_dag: Operator,
    pub x: Operator,
    pub p: Operator,
}

impl FockSpace {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < MIN_DIM {
            return Err(Error::param(
                "dim",
                format!("need at least {MIN_DIM} levels, got {dim}"),
            ));
        }
        let a = CMatrix::from_fn(dim, dim, |m, n| {
            if n == m + 1 {
                C64::new((n as f64).sqrt(), 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let a_dag = a.adjoint();
        let x = (&a + &a_dag) / C64::new(SQRT_2, 0.0);
        let p = (&a - &a_dag) / C64::new(0.0, SQRT_2);
        Ok(Self {
            dim,
            a: Operator::new(a)?,
            a_dag: Operator::new(a_dag)?,
            x: Operator::new(x)?,
            p: Operator::new(p)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn number(&self) -> Operator {
        Operator::diagonal(&(0..self.dim).map(|n| n as f64).collect::<Vec<_>>())
    }

    pub fn hamiltonian(&self, omega: f64) -> Operator {
        Operator::diagonal(&(0..self.dim).map(|n| omega * (n as f64 + 0.5)).collect::<Vec<_>>())
    }
}

fn normalized_pure(mut amps: DVector<C64>) -> Result<DensityMatrix> {
    let norm = amps.norm();
    amps /= C64::new(norm, 0.0);
    DensityMatrix::pure(&amps)
}

/// |β⟩ truncated to `dim` levels and renormalized; requires |β|² ≤ dim/9.
pub fn coherent_state(beta: C64, dim: usize) -> Result<DensityMatrix> {
    FockSpace::new(dim)?;
    if beta.norm_sqr() > dim as f64 / 9.0 {
        return Err(Error::TruncationGuard(format!(
            "|β|² = {} exceeds dim/9",
            beta.norm_sqr()
        )));
    }
    let mut amps = DVector::zeros(dim);
    amps[0] = C64::new((-0.5 * beta.norm_sqr()).exp(), 0.0);
    for n in 1..dim {
        amps[n] = amps[n - 1] * beta / (n as f64).sqrt();
    }
    normalized_pure(amps)
}

/// `exp[r(a² - a†²)/2]|0⟩`, squeezed in x for r > 0; requires e^{2r} ≤ dim/8.
pub fn squeezed_vacuum(r: f64, dim: usize) -> Result<DensityMatrix> {
    FockSpace::new(dim)?;
    if !r.is_finite() || (2.0 * r.abs()).exp() > dim as f64 / 8.0 {
        return Err(Error::TruncationGuard(format!(
            "squeezing r = {r} too strong for dim {dim}"
        )));
    }
    let t = -r.tanh();
    let mut amps = DVector::zeros(dim);
    amps[0] = C64::new(1.0 / r.cosh().sqrt(), 0.0);
    // c_{2n+2} = c_{2n} (-tanh r) √((2n+1)(2n+2)) / (2n+2)
    let mut n = 0;
    while n + 2 < dim {
        let ratio = t * (((n + 1) * (n + 2)) as f64).sqrt() / (n + 2) as f64;
        amps[n + 2] = amps[n] * ratio;
        n += 2;
    }
    normalized_pure(amps)
}

/// Thermal state with mean occupation `n_bar`; the geometric tail beyond
/// the truncation must stay below 1e-10.
pub fn thermal_osc(n_bar: f64, dim: usize) -> Result<DensityMatrix> {
    FockSpace::new(dim)?;
    if !(n_bar >= 0.0) || !n_bar.is_finite() {
        return Err(Error::param("n_bar", format!("must be >= 0, got {n_bar}")));
    }
    let q = n_bar / (n_bar + 1.0);
    if q.powi(dim as i32) > TAIL_MASS {
        return Err(Error::TruncationGuard(format!("n̄ = {n_bar} too hot for dim {dim}")));
    }
    let raw: Vec<f64> = (0..dim).map(|n| q.powi(n as i32)).collect();
    let z: f64 = raw.iter().sum();
    DensityMatrix::from_populations(&raw.iter().map(|p| p / z).collect::<Vec<_>>())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ordering {
    P,
    Q,
    Wigner,
}

impl fmt::Display for Ordering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ordering::P => "P",
            Ordering::Q => "Q",
            Ordering::Wigner => "Wigner",
        })
    }
}

impl FromStr for Ordering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p" => Ok(Ordering::P),
            "q" => Ok(Ordering::Q),
            "w" | "wigner" => Ok(Ordering::Wigner),
            _ => Err(Error::param("ordering", format!("unknown ordering {s:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct QuasiMomentRequest<'a> {
    pub rho: &'a DensityMatrix,
    pub n: usize,
    pub k: usize,
    pub ordering: Ordering,
}

fn guard(dim: usize, order: usize) -> Result<()> {
    if 4 * order > dim {
        return Err(Error::TruncationGuard(format!(
            "moment order {order} exceeds dim/4 = {}",
            dim / 4
        )));
    }
    Ok(())
}

fn power(m: &CMatrix, k: usize) -> CMatrix {
    (0..k).fold(CMatrix::identity(m.nrows(), m.ncols()), |acc, _| acc * m)
}

/// All distinct arrangements of `n` lowering and `k` raising letters.
fn interleavings(n: usize, k: usize) -> Vec<Vec<Ladder>> {
    if n == 0 && k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    if n > 0 {
        for mut w in interleavings(n - 1, k) {
            w.insert(0, Ladder::Lower);
            out.push(w);
        }
    }
    if k > 0 {
        for mut w in interleavings(n, k - 1) {
            w.insert(0, Ladder::Raise);
            out.push(w);
        }
    }
    out
}

/// `⟨αⁿ α*ᵏ⟩` of the P, Q or Wigner quasiprobability.
pub fn quasi_moment(req: &QuasiMomentRequest) -> Result<C64> {
    let dim = req.rho.dim();
    guard(dim, req.n + req.k)?;
    let fock = FockSpace::new(dim)?;
    let rho = req.rho.matrix();
    let an = power(fock.a.matrix(), req.n);
    let adk = power(fock.a_dag.matrix(), req.k);
    Ok(match req.ordering {
        Ordering::P => (&an * rho * &adk).trace(),
        Ordering::Q => (rho * &an * &adk).trace(),
        Ordering::Wigner => {
            let words = interleavings(req.n, req.k);
            let total: C64 = words
                .iter()
                .map(|w| {
                    let prod = w.iter().fold(CMatrix::identity(dim, dim), |acc, l| match l {
                        Ladder::Lower => acc * fock.a.matrix(),
                        Ladder::Raise => acc * fock.a_dag.matrix(),
                    });
                    (rho * prod).trace()
                })
                .sum();
            total / words.len() as f64
        }
    })
}

/// `⟨x²⟩ - ⟨x⟩²` of the quasiprobability with the given ordering.
pub fn x_variance(rho: &DensityMatrix, ordering: Ordering) -> Result<f64> {
    let m = |n, k| quasi_moment(&QuasiMomentRequest { rho, n, k, ordering });
    // x = (α + α*)/√2
    let mean = (m(1, 0)? + m(0, 1)?).re / SQRT_2;
    let second = (m(2, 0)? + m(1, 1)? * 2.0 + m(0, 2)?).re / 2.0;
    Ok(second - mean * mean)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ladder {
    /// a
    Lower,
    /// a†
    Raise,
}

impl Ladder {
    /// Parse a whitespace-separated word such as `"a a† a"`; `ad` and `a+`
    /// are accepted for a†.
    pub fn parse_word(s: &str) -> Result<Vec<Ladder>> {
        s.split_whitespace()
            .map(|tok| match tok {
                "a" => Ok(Ladder::Lower),
                "a†" | "ad" | "a+" | "adag" => Ok(Ladder::Raise),
                _ => Err(Error::param("word", format!("unknown letter {tok:?}"))),
            })
            .collect()
    }
}

#[cfg(test)]
fn word_counts(word: &[Ladder]) -> (usize, usize) {
    let n = word.iter().filter(|l| **l == Ladder::Lower).count();
    (n, word.len() - n)
}

/// Equal-time weak moment of a ladder word for a zero-temperature detector
/// with the given kernel sign (f(Ω) = ±i).
pub fn weak_moment(rho: &DensityMatrix, word: &[Ladder], sign: crate::kernel::KernelSign) -> Result<C64> {
    weak_moment_with(rho, word, C64::new(0.0, sign.value()))
}

/// Weak moment for an arbitrary memory value f(Ω). The letters act as
/// `ǎ = ǎ^c + f ǎ^q/2` and `ǎ† = ǎ†^c - f ǎ†^q/2`, applied to ρ from the
/// right end of the word.
pub fn weak_moment_with(rho: &DensityMatrix, word: &[Ladder], f: C64) -> Result<C64> {
    let dim = rho.dim();
    guard(dim, word.len())?;
    let fock = FockSpace::new(dim)?;
    let half = C64::new(0.5, 0.0);
    let mut x = rho.matrix().clone();
    for letter in word.iter().rev() {
        let (op, q_coeff) = match letter {
            Ladder::Lower => (fock.a.matrix(), f * 0.5),
            Ladder::Raise => (fock.a_dag.matrix(), -f * 0.5),
        };
        let ox = op * &x;
        let xo = &x * op;
        // c: {O, X}/2, q: [O, X]/i
        x = (&ox + &xo) * half + (ox - xo) * (q_coeff * C64::new(0.0, -1.0));
    }
    Ok(x.trace())
}

/// Real linear combination `cx·x + cp·p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    pub cx: f64,
    pub cp: f64,
}

impl Quadrature {
    pub fn new(cx: f64, cp: f64) -> Self {
        Self { cx, cp }
    }

    /// Decompose an operator as `cx·x + cp·p`; anything else is rejected.
    pub fn from_operator(op: &Operator, fock: &FockSpace) -> Result<Self> {
        check_dims(fock.dim(), op.dim())?;
        let m = op.matrix();
        // ⟨0|O|1⟩ = (cx - i cp)/√2
        let c01 = m[(0, 1)] * SQRT_2;
        let q = Self::new(c01.re, -c01.im);
        if q.operator(fock).max_abs_diff(op) > 1e-10 {
            return Err(Error::Nonlinear);
        }
        Ok(q)
    }

    pub fn operator(&self, fock: &FockSpace) -> Operator {
        &fock.x.scale(C64::new(self.cx, 0.0)) + &fock.p.scale(C64::new(self.cp, 0.0))
    }

    /// Free evolution under H = Ω(x² + p²)/2: x → x cos + p sin, p → p cos - x sin.
    pub fn evolve(&self, omega: f64, t: f64) -> Self {
        let (s, c) = (omega * t).sin_cos();
        Self::new(self.cx * c - self.cp * s, self.cx * s + self.cp * c)
    }

    /// The partner generated by the memory convolution: x → p, p → -x.
    pub fn conjugate(&self) -> Self {
        Self::new(-self.cp, self.cx)
    }
}

/// Superoperator `Ǎ(t) = Ǎ^c(t) + ∫dt' f(t - t') Ǎ^q(t')/2` of a quadrature.
/// For the oscillator the convolution collapses to `(i f(Ω)/2) Ǎ'^q(t)`
/// with `A'` the conjugate quadrature.
fn apply_weak_quadrature(q: &Quadrature, fock: &FockSpace, omega: f64, t: f64, f: C64, x: &CMatrix) -> CMatrix {
    let qt = q.evolve(omega, t);
    let a = qt.operator(fock);
    let b = qt.conjugate().operator(fock);
    let (a, b) = (a.matrix(), b.matrix());
    let anti = (a * x + x * a) * C64::new(0.5, 0.0);
    // (i f/2) [B, X]/i = (f/2) [B, X]
    anti + (b * x - x * b) * (f * 0.5)
}

/// Two-time weak correlator `Tr[Ǎ(t) B̌(s) ρ]` of quadratures.
pub fn weak_two_time(
    rho: &DensityMatrix,
    a: &Quadrature,
    t: f64,
    b: &Quadrature,
    s: f64,
    omega: f64,
    f: C64,
) -> Result<C64> {
    let fock = FockSpace::new(rho.dim())?;
    let x = apply_weak_quadrature(b, &fock, omega, s, f, rho.matrix());
    Ok(apply_weak_quadrature(a, &fock, omega, t, f, &x).trace())
}

/// |Tr[Ǎ(t)B̌(s)ρ] - Tr[B̌(s)Ǎ(t)ρ]| for the oscillator of frequency Ω.
pub fn time_order_invariance(
    rho: &DensityMatrix,
    a: &Quadrature,
    b: &Quadrature,
    t: f64,
    s: f64,
    omega: f64,
    kernel: &MemoryKernel,
) -> Result<f64> {
    if !(omega > 0.0) {
        return Err(Error::param("omega", format!("must be > 0, got {omega}")));
    }
    let f = if kernel.is_markovian() {
        C64::new(0.0, 0.0)
    } else {
        kernel.f_omega(omega)?
    };
    let ab = weak_two_time(rho, a, t, b, s, omega, f)?;
    let ba = weak_two_time(rho, b, s, a, t, omega, f)?;
    Ok((ab - ba).norm())
}
