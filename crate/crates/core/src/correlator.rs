//! Weak-measurement correlators and noise spectra of small systems.
//!
//! Spectral densities use `S_AB(ω) = ∫dt e^{iωt} ⟨δA(t) δB(0)⟩`, represented
//! exactly as Dirac lines `S(ω) = Σ_k 2π w_k δ(ω - ω_k)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{check_dims, max_abs, CMatrix, DensityMatrix, EigenSystem, Operator, C64};
use crate::kernel::{MemoryKernel, TimeGrid};
use crate::quad;

/// Lines closer than this are merged.
pub const MERGE_TOL: f64 = 1e-9;
const STATIONARY_TOL: f64 = 1e-10;
const POSITIVITY_FLOOR: f64 = -1e-10;
const MAX_OBSERVABLES: usize = 4;
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub omega: f64,
    pub weight: C64,
}

/// Discrete line spectrum with strictly ascending, merged frequencies.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LineSpectrum {
    lines: Vec<Line>,
}

impl LineSpectrum {
    /// Sort and merge raw `(ω, w)` pairs. Runs of frequencies closer than
    /// [`MERGE_TOL`] collapse onto their mean with summed weights.
    pub fn from_lines(mut raw: Vec<(f64, C64)>) -> Self {
        raw.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut lines: Vec<Line> = Vec::new();
        let mut cluster: Vec<(f64, C64)> = Vec::new();
        let flush = |cluster: &mut Vec<(f64, C64)>, lines: &mut Vec<Line>| {
            if cluster.is_empty() {
                return;
            }
            let omega = cluster.iter().map(|c| c.0).sum::<f64>() / cluster.len() as f64;
            let weight = cluster.iter().map(|c| c.1).sum();
            lines.push(Line { omega, weight });
            cluster.clear();
        };
        for (w, v) in raw {
            if let Some(last) = cluster.last() {
                if w - last.0 > MERGE_TOL {
                    flush(&mut cluster, &mut lines);
                }
            }
            cluster.push((w, v));
        }
        flush(&mut cluster, &mut lines);
        Self { lines }
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// ω → -ω.
    pub fn mirrored(&self) -> Self {
        Self::from_lines(self.lines.iter().map(|l| (-l.omega, l.weight)).collect())
    }

    /// Weight of the line at `omega`, zero if there is none.
    pub fn weight_at(&self, omega: f64) -> C64 {
        self.lines
            .iter()
            .find(|l| (l.omega - omega).abs() <= MERGE_TOL)
            .map_or(C64::new(0.0, 0.0), |l| l.weight)
    }

    /// Inverse transform: Σ_k w_k e^{-iω_k τ}.
    pub fn correlation(&self, tau: f64) -> C64 {
        self.lines
            .iter()
            .map(|l| l.weight * C64::from_polar(1.0, -l.omega * tau))
            .sum()
    }

    pub fn max_weight(&self) -> f64 {
        self.lines.iter().fold(0.0, |acc, l| acc.max(l.weight.norm()))
    }

    fn aligned_with(&self, other: &LineSpectrum) -> bool {
        self.lines.len() == other.lines.len()
            && self
                .lines
                .iter()
                .zip(&other.lines)
                .all(|(a, b)| (a.omega - b.omega).abs() <= MERGE_TOL)
    }
}

fn commutator_deviation(rho: &DensityMatrix, h: &Operator) -> f64 {
    let r = rho.matrix();
    let hm = h.matrix();
    max_abs(&(r * hm - hm * r))
}

fn mean_subtracted(a: &Operator, rho: &DensityMatrix) -> Result<Operator> {
    let mean = a.expectation(rho)?;
    Ok(a - &Operator::identity(a.dim()).scale(mean))
}

/// Line spectrum of `⟨δA(t) δB(0)⟩` in a stationary state.
pub fn lehmann_spectrum(h: &Operator, rho: &DensityMatrix, a: &Operator, b: &Operator) -> Result<LineSpectrum> {
    lehmann_spectrum_with(h, rho, a, b, true)
}

/// As [`lehmann_spectrum`], optionally without subtracting the means.
///
/// In the eigenbasis of H the weight of the pair (m, n) is
/// `A_mn (B ρ)_nm` at `ω = E_n - E_m`; this reduces to `p_m A_mn B_nm`
/// for diagonal ρ and stays exact inside degenerate blocks.
pub fn lehmann_spectrum_with(
    h: &Operator,
    rho: &DensityMatrix,
    a: &Operator,
    b: &Operator,
    subtract_means: bool,
) -> Result<LineSpectrum> {
    check_dims(h.dim(), rho.dim())?;
    check_dims(h.dim(), a.dim())?;
    check_dims(h.dim(), b.dim())?;
    let deviation = commutator_deviation(rho, h);
    if deviation > STATIONARY_TOL {
        return Err(Error::NotStationary { deviation });
    }
    let (a, b) = if subtract_means {
        (mean_subtracted(a, rho)?, mean_subtracted(b, rho)?)
    } else {
        (a.clone(), b.clone())
    };
    let eig = EigenSystem::new(h)?;
    let ae = eig.to_eigenbasis(a.matrix());
    let bre = eig.to_eigenbasis(&(b.matrix() * rho.matrix()));
    let n = eig.dim();
    let mut raw = Vec::with_capacity(n * n);
    for m in 0..n {
        for k in 0..n {
            raw.push((eig.energies[k] - eig.energies[m], ae[(m, k)] * bre[(k, m)]));
        }
    }
    Ok(LineSpectrum::from_lines(raw))
}

/// Line spectrum of the reversed product `∫dt e^{iωt} ⟨δB(0) δA(t)⟩`,
/// which equals `S_BA(-ω)`.
pub fn reversed_spectrum(h: &Operator, rho: &DensityMatrix, a: &Operator, b: &Operator) -> Result<LineSpectrum> {
    Ok(lehmann_spectrum(h, rho, b, a)?.mirrored())
}

/// Weak-measurement spectrum from the two operator orders.
///
/// `direct` holds the lines of `⟨A(t)B(0)⟩`, `reversed` those of
/// `⟨B(0)A(t)⟩`. Per line, `w = (w_AB + w_BA)/2 + Im f(ω) (w_BA - w_AB)/2`;
/// for the equilibrium kernel this is
/// `[e^{x} w_BA - e^{-x} w_AB] / 2 sinh x` with `x = ω/2T_d`. Zero-frequency
/// lines take the symmetrized weight.
pub fn weak_spectrum(direct: &LineSpectrum, reversed: &LineSpectrum, kernel: &MemoryKernel) -> Result<LineSpectrum> {
    if !direct.aligned_with(reversed) {
        return Err(Error::Misaligned);
    }
    let mut out = Vec::with_capacity(direct.len());
    for (d, r) in direct.lines.iter().zip(&reversed.lines) {
        let omega = 0.5 * (d.omega + r.omega);
        let sym = (d.weight + r.weight) * 0.5;
        let weight = if omega.abs() <= MERGE_TOL {
            sym
        } else {
            let im_f = kernel.f_omega(omega)?.im;
            sym + (r.weight - d.weight) * (0.5 * im_f)
        };
        out.push(Line { omega, weight });
    }
    Ok(LineSpectrum { lines: out })
}

/// Lehmann spectra of both orders combined into the weak spectrum.
pub fn weak_spectrum_of(
    h: &Operator,
    rho: &DensityMatrix,
    a: &Operator,
    b: &Operator,
    kernel: &MemoryKernel,
) -> Result<LineSpectrum> {
    let direct = lehmann_spectrum(h, rho, a, b)?;
    let reversed = reversed_spectrum(h, rho, a, b)?;
    weak_spectrum(&direct, &reversed, kernel)
}

/// Per-line `S_AB(ω) - e^{ω/T} S_BA(ω)` for the thermal state at T > 0,
/// where `S_BA` is the reversed product `⟨B(0)A(t)⟩`.
pub fn fdt_residuals(h: &Operator, temperature: f64, a: &Operator, b: &Operator) -> Result<Vec<(f64, C64)>> {
    if !(temperature > 0.0) {
        return Err(Error::param("T", format!("FDT check needs T > 0, got {temperature}")));
    }
    let rho = crate::hilbert::thermal_state(h, temperature)?;
    let direct = lehmann_spectrum(h, &rho, a, b)?;
    let reversed = reversed_spectrum(h, &rho, a, b)?;
    if !direct.aligned_with(&reversed) {
        return Err(Error::Misaligned);
    }
    Ok(direct
        .lines
        .iter()
        .zip(&reversed.lines)
        .map(|(d, r)| (d.omega, d.weight - r.weight * (d.omega / temperature).exp()))
        .collect())
}

/// FDT residual at a single frequency (zero where there is no line).
pub fn fdt_residual(h: &Operator, temperature: f64, a: &Operator, b: &Operator, omega: f64) -> Result<C64> {
    Ok(fdt_residuals(h, temperature, a, b)?
        .into_iter()
        .find(|(w, _)| (w - omega).abs() <= MERGE_TOL)
        .map_or(C64::new(0.0, 0.0), |(_, r)| r))
}

/// Arguments of an n-point weak correlator evaluated on a time grid.
#[derive(Clone, Debug)]
pub struct WeakCorrelatorRequest {
    pub h: Operator,
    pub rho: DensityMatrix,
    /// Observables with their measurement times, in detector order.
    pub observables: Vec<(Operator, f64)>,
    pub kernel: MemoryKernel,
    pub grid: TimeGrid,
}

impl WeakCorrelatorRequest {
    fn validate(&self) -> Result<EigenSystem> {
        let n = self.observables.len();
        if n == 0 {
            return Err(Error::param("observables", "need at least one observable"));
        }
        if n > MAX_OBSERVABLES {
            return Err(Error::TooManyObservables(n));
        }
        check_dims(self.h.dim(), self.rho.dim())?;
        for (a, t) in &self.observables {
            check_dims(self.h.dim(), a.dim())?;
            let deviation = a.hermitian_deviation();
            if deviation > crate::hilbert::HERMITIAN_TOL {
                return Err(Error::NotHermitian { deviation });
            }
            if !self.grid.contains_flat(*t) {
                return Err(Error::param(
                    "observables",
                    format!("time {t} outside the untapered window"),
                ));
            }
        }
        let eig = EigenSystem::new(&self.h)?;
        let norm = eig.spectral_norm();
        if norm > 0.0 && self.grid.dt > 0.2 / norm {
            return Err(Error::GridTooCoarse { dt: self.grid.dt, norm });
        }
        Ok(eig)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Channel {
    C,
    Q,
}

#[derive(Clone, Copy, Debug)]
struct Event {
    time: f64,
    detector: usize,
    channel: Channel,
    weight: f64,
}

fn apply_channel(a: &CMatrix, x: &CMatrix, channel: Channel) -> CMatrix {
    let ax = a * x;
    let xa = x * a;
    match channel {
        Channel::C => (ax + xa) * C64::new(0.5, 0.0),
        Channel::Q => (ax - xa) * C64::new(0.0, -1.0),
    }
}

/// Group events whose times agree to a small fraction of dt.
fn group_by_time(events: &[Event], dt: f64) -> Vec<&[Event]> {
    let tol = 1e-9 * dt;
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=events.len() {
        if i == events.len() || events[i].time - events[start].time > tol {
            groups.push(&events[start..i]);
            start = i;
        }
    }
    groups
}

/// All ordered selections of events with distinct detectors outside `used`.
fn ordered_selections(group: &[Event], used: usize) -> Vec<Vec<usize>> {
    fn extend(group: &[Event], used: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        for (i, e) in group.iter().enumerate() {
            let bit = 1 << e.detector;
            if used & bit != 0 || current.contains(&i) {
                continue;
            }
            current.push(i);
            out.push(current.clone());
            extend(group, used | bit, current, out);
            current.pop();
        }
    }
    let mut out = Vec::new();
    extend(group, used, &mut Vec::new(), &mut out);
    out
}

fn accumulate(slot: &mut Option<CMatrix>, y: CMatrix) {
    match slot {
        Some(acc) => *acc += y,
        None => *slot = Some(y),
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// n-point weak correlator `Tr ∫dⁿt' T[Ǎ_n ⋯ Ǎ_1] ρ` on a time grid.
///
/// Each measurement contributes either `Ǎ^c(t_j)` or one kernel sample
/// `f(t_j - t') dt/2 · Ǎ^q(t')`. Rather than enumerating every choice
/// explicitly, events are swept in time order while carrying one partial
/// product per subset of measurements already placed; this sums exactly the
/// same set of time-ordered strings in O(2ⁿ · events) work. Events that fall
/// on the same instant are applied in every relative order with equal
/// weight. Kernel samples later than all measurement times are dropped: a
/// leftmost `Ǎ^q` vanishes under the trace.
pub fn weak_correlator_grid(req: &WeakCorrelatorRequest) -> Result<C64> {
    let eig = req.validate()?;
    let n = req.observables.len();
    let last = req.observables.iter().map(|o| o.1).fold(f64::NEG_INFINITY, f64::max);

    let local: Vec<CMatrix> = req
        .observables
        .iter()
        .map(|(a, _)| eig.to_eigenbasis(a.matrix()))
        .collect();

    let mut events = Vec::new();
    for (j, (_, t)) in req.observables.iter().enumerate() {
        events.push(Event {
            time: *t,
            detector: j,
            channel: Channel::C,
            weight: 1.0,
        });
        for (tp, w) in req.grid.samples(&req.kernel, *t)? {
            if tp < last {
                events.push(Event {
                    time: tp,
                    detector: j,
                    channel: Channel::Q,
                    weight: 0.5 * w,
                });
            }
        }
    }
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.detector.cmp(&b.detector)));

    let full = (1usize << n) - 1;
    let mut partial: Vec<Option<CMatrix>> = vec![None; full + 1];
    partial[0] = Some(eig.to_eigenbasis(req.rho.matrix()));

    for group in group_by_time(&events, req.grid.dt) {
        let ops: Vec<CMatrix> = group
            .iter()
            .map(|e| eig.evolve_in_eigenbasis(&local[e.detector], e.time))
            .collect();
        if let [event] = group {
            // sources lack the detector bit and targets carry it, so the
            // update can run in place
            let bit = 1 << event.detector;
            let scale = C64::new(event.weight, 0.0);
            for used in (0..full).filter(|u| u & bit == 0) {
                let Some(x) = &partial[used] else { continue };
                let y = apply_channel(&ops[0], x, event.channel) * scale;
                accumulate(&mut partial[used | bit], y);
            }
            continue;
        }
        let mut next = partial.clone();
        for used in 0..full {
            let Some(x) = &partial[used] else { continue };
            for sel in ordered_selections(group, used) {
                let mut y = x.clone();
                let mut weight = 1.0 / factorial(sel.len());
                let mut mask = used;
                for &i in &sel {
                    y = apply_channel(&ops[i], &y, group[i].channel);
                    weight *= group[i].weight;
                    mask |= 1 << group[i].detector;
                }
                accumulate(&mut next[mask], y * C64::new(weight, 0.0));
            }
        }
        partial = next;
    }
    Ok(partial[full].as_ref().map_or(C64::new(0.0, 0.0), |x| x.trace()))
}

/// `⟨a²⟩` for the driven two-level example: H = Ωσ_z/2, A = σ_x + σ_z,
/// ρ = (1 + σ_y)/2 and the zero-temperature equilibrium kernel, with the
/// commutator memory cut off at `t_inf`:
/// `2 + (2/π) ∫_0^{t_inf} (cos Ωt - 1)/t dt`.
pub fn tls_equal_time_variance(omega: f64, t_inf: f64) -> Result<f64> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::param("omega", format!("must be > 0, got {omega}")));
    }
    if !(t_inf > 0.0) || !t_inf.is_finite() {
        return Err(Error::param("t_inf", format!("must be > 0, got {t_inf}")));
    }
    let x = omega * t_inf;
    // (cos u - 1)/u = -2 sin²(u/2)/u, finite at u = 0
    let integrand = |u: f64| {
        if u == 0.0 {
            0.0
        } else {
            let s = (0.5 * u).sin();
            -2.0 * s * s / u
        }
    };
    let integral = quad::integrate_panels(integrand, 0.0, x, PI, 1e-13);
    Ok(2.0 + 2.0 / PI * integral)
}

/// Large-cutoff asymptote `2 - (2/π)(ln Ωt_inf + γ)`.
pub fn tls_variance_asymptote(omega: f64, t_inf: f64) -> f64 {
    2.0 - 2.0 / PI * ((omega * t_inf).ln() + EULER_GAMMA)
}

/// Ωt_inf at which the variance first changes sign, by bisection.
pub fn tls_variance_zero_crossing() -> Result<f64> {
    let f = |x: f64| tls_equal_time_variance(1.0, x);
    let (mut lo, mut hi) = (1.0, 100.0);
    if f(lo)? <= 0.0 || f(hi)? >= 0.0 {
        return Err(Error::NoRoot { lo, hi });
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakPositivity {
    pub positive: bool,
    pub min_eigenvalue: f64,
}

/// Whether a real symmetric correlation matrix is positive semidefinite
/// (minimum eigenvalue >= -1e-10), i.e. reproducible by a Gaussian.
pub fn weak_positivity_check(c: &DMatrix<f64>) -> Result<WeakPositivity> {
    if c.nrows() != c.ncols() || c.nrows() == 0 {
        return Err(Error::NotSquare {
            rows: c.nrows(),
            cols: c.ncols(),
        });
    }
    let scale = c.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    let deviation = (c - c.transpose()).iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if deviation > 1e-12 * scale || c.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotSymmetric { deviation });
    }
    let min_eigenvalue = c
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok(WeakPositivity {
        positive: min_eigenvalue >= POSITIVITY_FLOOR,
        min_eigenvalue,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::thermal_state;
    use crate::kernel::KernelSign;
    use proptest::prelude::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn tls(omega: f64) -> Operator {
        Operator::pauli_z().scale(c(0.5 * omega))
    }

    fn random_hermitian(dim: usize, seed: &[f64]) -> Operator {
        let mut it = seed.iter().cycle();
        let mut m = CMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                let re = *it.next().unwrap();
                let im = if i == j { 0.0 } else { *it.next().unwrap() };
                m[(i, j)] = C64::new(re, im);
                m[(j, i)] = C64::new(re, -im);
            }
        }
        Operator::new(m).unwrap()
    }

    /// Enumerates every choice of c-term or q-sample per measurement and
    /// sums the time-ordered strings directly; ties average all orders.
    fn brute_force(req: &WeakCorrelatorRequest) -> C64 {
        let options: Vec<Vec<(f64, Channel, f64)>> = req
            .observables
            .iter()
            .map(|(_, t)| {
                let mut v = vec![(*t, Channel::C, 1.0)];
                for (tp, w) in req.grid.samples(&req.kernel, *t).unwrap() {
                    v.push((tp, Channel::Q, 0.5 * w));
                }
                v
            })
            .collect();
        let n = options.len();
        let mut total = c(0.0);
        let mut idx = vec![0usize; n];
        loop {
            let chosen: Vec<(usize, f64, Channel, f64)> = (0..n)
                .map(|j| (j, options[j][idx[j]].0, options[j][idx[j]].1, options[j][idx[j]].2))
                .collect();
            let mut perms: Vec<Vec<usize>> = Vec::new();
            permute(&mut (0..n).collect(), 0, &mut perms);
            let mut valid = 0usize;
            let mut acc = c(0.0);
            for p in &perms {
                let ordered = p.windows(2).all(|w| chosen[w[0]].1 <= chosen[w[1]].1 + 1e-12);
                if !ordered {
                    continue;
                }
                valid += 1;
                let mut x = req.rho.matrix().clone();
                let mut weight = 1.0;
                for &k in p {
                    let (j, t, ch, w) = chosen[k];
                    let a = crate::hilbert::evolve_heisenberg(&req.observables[j].0, &req.h, t).unwrap();
                    x = apply_channel(a.matrix(), &x, ch);
                    weight *= w;
                }
                acc += x.trace() * weight;
            }
            total += acc / valid as f64;
            let mut j = 0;
            loop {
                if j == n {
                    return total;
                }
                idx[j] += 1;
                if idx[j] < options[j].len() {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
        }
    }

    fn permute(v: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
        if k == v.len() {
            out.push(v.clone());
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, out);
            v.swap(k, i);
        }
    }

    #[test]
    fn tls_thermal_lines() {
        let h = tls(1.0);
        let t = 0.7;
        let rho = thermal_state(&h, t).unwrap();
        let s = lehmann_spectrum(&h, &rho, &Operator::pauli_x(), &Operator::pauli_x()).unwrap();
        let p_down = 1.0 / (1.0 + (-1.0 / t).exp());
        assert!((s.weight_at(1.0) - c(p_down)).norm() < 1e-14);
        assert!((s.weight_at(-1.0) - c(1.0 - p_down)).norm() < 1e-14);
        // cos Ωt + i tanh(Ω/2T) sin Ωt
        for tau in [0.0f64, 0.3, 2.1] {
            let expected = C64::new(tau.cos(), -(0.5 / t).tanh() * tau.sin());
            assert!((s.correlation(tau) - expected).norm() < 1e-13);
        }
    }

    #[test]
    fn correlation_matches_heisenberg() {
        let h = random_hermitian(3, &[0.3, -1.1, 0.4, 0.9, 0.2, -0.5, 1.7, 0.05, -0.6]);
        let a = random_hermitian(3, &[1.0, 0.2, -0.3, 0.5, 0.8, -0.1, 0.4, 0.0, 0.6]);
        let b = random_hermitian(3, &[-0.2, 0.7, 0.1, 0.3, -0.9, 0.6, 0.2, 0.5, 0.35]);
        let rho = thermal_state(&h, 0.8).unwrap();
        let s = lehmann_spectrum_with(&h, &rho, &a, &b, false).unwrap();
        for &tau in &[0.0, 0.4, -1.3, 5.0] {
            let at = evolve_heisenberg(&a, &h, tau);
            let direct = (rho.matrix() * at.matrix() * b.matrix()).trace();
            assert!((s.correlation(tau) - direct).norm() < 1e-12);
        }
    }

    fn evolve_heisenberg(a: &Operator, h: &Operator, t: f64) -> Operator {
        crate::hilbert::evolve_heisenberg(a, h, t).unwrap()
    }

    #[test]
    fn variance_line_for_h() {
        let h = Operator::diagonal(&[0.0, 1.0, 3.0]);
        let rho = thermal_state(&h, 1.2).unwrap();
        let s = lehmann_spectrum(&h, &rho, &h, &h).unwrap();
        let p = crate::hilbert::gibbs_populations(&[0.0, 1.0, 3.0], 1.2);
        let mean = p[1] + 3.0 * p[2];
        let var = p[1] + 9.0 * p[2] - mean * mean;
        assert!((s.weight_at(0.0) - c(var)).norm() < 1e-13);
        assert!(s
            .lines()
            .iter()
            .filter(|l| l.omega != 0.0)
            .all(|l| l.weight.norm() < 1e-14));
    }

    #[test]
    fn non_stationary_rejected() {
        let rho = DensityMatrix::pure(&nalgebra::DVector::from_vec(vec![c(1.0), c(1.0)]).scale(0.5f64.sqrt())).unwrap();
        let err = lehmann_spectrum(&tls(1.0), &rho, &Operator::pauli_x(), &Operator::pauli_x());
        assert!(matches!(err, Err(Error::NotStationary { .. })));
    }

    #[test]
    fn merge_and_mirror() {
        let s = LineSpectrum::from_lines(vec![(1.0, c(1.0)), (-2.0, c(0.5)), (1.0 + 1e-12, c(2.0))]);
        assert_eq!(s.len(), 2);
        assert!((s.weight_at(1.0) - c(3.0)).norm() < 1e-15);
        let m = s.mirrored();
        assert!((m.weight_at(2.0) - c(0.5)).norm() < 1e-15);
        assert!(m.lines().windows(2).all(|w| w[0].omega < w[1].omega));
    }

    #[test]
    fn weak_spectrum_markovian_is_symmetrized() {
        let h = tls(1.0);
        let rho = thermal_state(&h, 0.4).unwrap();
        let (a, b) = (Operator::pauli_x(), Operator::pauli_y());
        let d = lehmann_spectrum(&h, &rho, &a, &b).unwrap();
        let r = reversed_spectrum(&h, &rho, &a, &b).unwrap();
        let w = weak_spectrum(&d, &r, &MemoryKernel::Markovian).unwrap();
        for ((x, y), z) in d.lines().iter().zip(r.lines()).zip(w.lines()) {
            assert!(((x.weight + y.weight) * 0.5 - z.weight).norm() < 1e-15);
        }
    }

    #[test]
    fn ground_state_detector_at_finite_td() {
        let h = tls(1.0);
        let rho = thermal_state(&h, 0.0).unwrap();
        let k = MemoryKernel::equilibrium(1.0, KernelSign::Emission).unwrap();
        let x = Operator::pauli_x();
        let w = weak_spectrum_of(&h, &rho, &x, &x, &k).unwrap();
        let expected = -(-0.5f64).exp() / (2.0 * 0.5f64.sinh());
        assert!((w.weight_at(1.0) - c(expected)).norm() < 1e-14);
        assert!(expected < 0.0);
    }

    #[test]
    fn zero_td_selects_by_sign() {
        let h = tls(1.0);
        let rho = thermal_state(&h, 0.6).unwrap();
        let x = Operator::pauli_x();
        let d = lehmann_spectrum(&h, &rho, &x, &x).unwrap();
        let r = reversed_spectrum(&h, &rho, &x, &x).unwrap();
        let emit = weak_spectrum(&d, &r, &MemoryKernel::zero_temperature()).unwrap();
        let absorb = weak_spectrum(&d, &r, &MemoryKernel::equilibrium(0.0, KernelSign::Absorption).unwrap()).unwrap();
        assert!((emit.weight_at(1.0) - r.weight_at(1.0)).norm() < 1e-15);
        assert!((emit.weight_at(-1.0) - d.weight_at(-1.0)).norm() < 1e-15);
        assert!((absorb.weight_at(1.0) - d.weight_at(1.0)).norm() < 1e-15);
        assert!((absorb.weight_at(-1.0) - r.weight_at(-1.0)).norm() < 1e-15);
    }

    #[test]
    fn misaligned_rejected() {
        let a = LineSpectrum::from_lines(vec![(1.0, c(1.0))]);
        let b = LineSpectrum::from_lines(vec![(1.5, c(1.0))]);
        assert_eq!(weak_spectrum(&a, &b, &MemoryKernel::Markovian), Err(Error::Misaligned));
    }

    #[test]
    fn fdt_thermal_and_hot_limit() {
        let h = tls(1.0);
        for (a, b) in [
            (Operator::pauli_x(), Operator::pauli_x()),
            (Operator::pauli_x(), Operator::pauli_y()),
            (Operator::pauli_y(), Operator::pauli_x()),
        ] {
            for (_, r) in fdt_residuals(&h, 0.3, &a, &b).unwrap() {
                assert!(r.norm() < 1e-12);
            }
        }
        let rho = thermal_state(&h, 1e9).unwrap();
        let x = Operator::pauli_x();
        let d = lehmann_spectrum(&h, &rho, &x, &x).unwrap();
        let r = reversed_spectrum(&h, &rho, &x, &x).unwrap();
        for (p, q) in d.lines().iter().zip(r.lines()) {
            assert!((p.weight - q.weight).norm() < 1e-8);
        }
        assert!(fdt_residuals(&h, 0.0, &x, &x).is_err());
    }

    #[test]
    fn markovian_grid_is_symmetrized_product() {
        let h = random_hermitian(3, &[0.3, -0.4, 0.1, 0.2, 0.5, -0.3, 0.6, 0.1, -0.2]);
        let a = random_hermitian(3, &[1.0, 0.2, -0.3, 0.5, 0.8, -0.1, 0.4, 0.0, 0.6]);
        let b = random_hermitian(3, &[-0.2, 0.7, 0.1, 0.3, -0.9, 0.6, 0.2, 0.5, 0.35]);
        let rho = DensityMatrix::from_populations(&[0.5, 0.3, 0.2]).unwrap();
        for &(t, s) in &[(0.0, 0.0), (1.0, 0.2), (0.2, 1.0)] {
            let req = WeakCorrelatorRequest {
                h: h.clone(),
                rho: rho.clone(),
                observables: vec![(a.clone(), t), (b.clone(), s)],
                kernel: MemoryKernel::Markovian,
                grid: TimeGrid::new(0.05, -1.0, 2.0).unwrap(),
            };
            let got = weak_correlator_grid(&req).unwrap();
            let at = evolve_heisenberg(&a, &h, t);
            let bs = evolve_heisenberg(&b, &h, s);
            let prod = at.matrix() * bs.matrix();
            let expected = (rho.matrix() * (&prod + prod.adjoint())).trace() * 0.5;
            assert!((got - expected).norm() < 1e-12, "{got} vs {expected}");
        }
    }

    #[test]
    fn grid_matches_brute_force() {
        let h = random_hermitian(2, &[0.6, 0.3, -0.2, -0.4]);
        let a = random_hermitian(2, &[0.5, 0.4, 0.3, -0.7]);
        let b = random_hermitian(2, &[-0.3, 0.9, -0.1, 0.2]);
        let rho = thermal_state(&h, 0.5).unwrap();
        for kernel in [
            MemoryKernel::zero_temperature(),
            MemoryKernel::equilibrium(0.8, KernelSign::Emission).unwrap(),
        ] {
            let dt = 0.1;
            // t = 0 and s = 0.3 share the dt lattice, so samples collide
            let times = [0.3, 0.0, 0.3];
            let grid = TimeGrid::for_times(dt, 1.5, &times).unwrap();
            for n in 2..=3 {
                let obs: Vec<(Operator, f64)> = (0..n)
                    .map(|j| (if j % 2 == 0 { a.clone() } else { b.clone() }, times[j]))
                    .collect();
                let req = WeakCorrelatorRequest {
                    h: h.clone(),
                    rho: rho.clone(),
                    observables: obs,
                    kernel: kernel.clone(),
                    grid,
                };
                let fast = weak_correlator_grid(&req).unwrap();
                let slow = brute_force(&req);
                assert!((fast - slow).norm() < 1e-12, "n={n}: {fast} vs {slow}");
            }
        }
    }

    #[test]
    fn grid_matches_line_spectrum() {
        let h = tls(1.0);
        let rho = thermal_state(&h, 0.7).unwrap();
        let a = Operator::pauli_x();
        let b = &Operator::pauli_x() + &Operator::pauli_y().scale(c(0.5));
        let kernel = MemoryKernel::zero_temperature();
        let lines = weak_spectrum_of(&h, &rho, &a, &b, &kernel).unwrap();
        for &tau in &[0.0, 0.75, 2.0] {
            let req = WeakCorrelatorRequest {
                h: h.clone(),
                rho: rho.clone(),
                observables: vec![(a.clone(), tau), (b.clone(), 0.0)],
                kernel: kernel.clone(),
                grid: TimeGrid::for_times(0.01, 200.0, &[0.0, tau]).unwrap(),
            };
            let grid = weak_correlator_grid(&req).unwrap();
            let exact = lines.correlation(tau);
            assert!(
                (grid - exact).norm() < 0.01 * exact.norm().max(1.0),
                "τ={tau}: {grid} vs {exact}"
            );
        }
    }

    #[test]
    fn grid_agrees_with_tls_variance_quadrature() {
        // both routes to the driven two-level ⟨a²⟩ with a hard memory cutoff
        let omega = 1.0;
        let a = &Operator::pauli_x() + &Operator::pauli_z();
        let rho = DensityMatrix::new((CMatrix::identity(2, 2) + Operator::pauli_y().into_matrix()) * c(0.5)).unwrap();
        let t_inf = 8.0;
        let req = WeakCorrelatorRequest {
            h: tls(omega),
            rho,
            observables: vec![(a.clone(), 0.0), (a, 0.0)],
            kernel: MemoryKernel::zero_temperature(),
            grid: TimeGrid::new(0.002, -t_inf, 0.002).unwrap(),
        };
        let grid = weak_correlator_grid(&req).unwrap();
        let quad = tls_equal_time_variance(omega, t_inf).unwrap();
        assert!(grid.im.abs() < 1e-12);
        assert!((grid.re - quad).abs() < 1e-4, "{grid} vs {quad}");
    }

    #[test]
    fn grid_guards() {
        let h = tls(1.0);
        let rho = thermal_state(&h, 1.0).unwrap();
        let x = Operator::pauli_x();
        let mut req = WeakCorrelatorRequest {
            h,
            rho,
            observables: vec![(x.clone(), 0.0); 5],
            kernel: MemoryKernel::zero_temperature(),
            grid: TimeGrid::new(0.01, -1.0, 1.0).unwrap(),
        };
        assert_eq!(weak_correlator_grid(&req), Err(Error::TooManyObservables(5)));
        req.observables.truncate(2);
        req.grid = TimeGrid::new(0.5, -1.0, 1.0).unwrap();
        assert!(matches!(weak_correlator_grid(&req), Err(Error::GridTooCoarse { .. })));
        req.grid = TimeGrid::new(0.01, 0.5, 1.0).unwrap();
        assert!(weak_correlator_grid(&req).is_err());
    }

    fn triangle_three_point(td: f64, times: [f64; 3], dt: f64) -> f64 {
        let h = Operator::diagonal(&[-1.0, 0.0, 1.3]);
        let a = Operator::from_real(&[&[0.0, 1.0, 0.5], &[1.0, 0.0, 0.8], &[0.5, 0.8, 0.0]]).unwrap();
        let b = Operator::from_real(&[&[0.0, 0.3, 1.0], &[0.3, 0.0, -0.6], &[1.0, -0.6, 0.0]]).unwrap();
        let req = WeakCorrelatorRequest {
            rho: thermal_state(&h, 1.0).unwrap(),
            h,
            observables: vec![(a.clone(), times[0]), (b, times[1]), (a, times[2])],
            kernel: MemoryKernel::equilibrium(td, KernelSign::Emission).unwrap(),
            grid: TimeGrid::for_times(dt, 150.0, &times).unwrap(),
        };
        let v = weak_correlator_grid(&req).unwrap();
        assert!(v.im.abs() < 1e-12);
        v.re
    }

    #[test]
    fn third_order_equilibrium_is_time_independent() {
        // zero-mean couplings around a triangle of levels: the third moment
        // is nonzero, but at T = T_d only its zero-frequency part survives
        let sets = [[0.0, 0.7, 1.9], [0.0, 1.5, 4.0], [0.0, 3.0, 3.5]];
        let spread = |td: f64| {
            let v: Vec<f64> = sets.iter().map(|&t| triangle_three_point(td, t, 0.02)).collect();
            v.iter().fold(f64::MIN, |a, &b| a.max(b)) - v.iter().fold(f64::MAX, |a, &b| a.min(b))
        };
        assert!(spread(1.0) < 1e-3, "{}", spread(1.0));
        assert!(spread(0.0) > 0.1);
    }

    /// Cin(x) = ∫_0^x (1 - cos u)/u du by its power series.
    fn cin_series(x: f64) -> f64 {
        let mut term_abs = 1.0; // x^{2k}/(2k)!
        let mut sum = 0.0;
        for k in 1..200 {
            term_abs *= x * x / ((2 * k - 1) as f64 * (2 * k) as f64);
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            sum += sign * term_abs / (2 * k) as f64;
            if term_abs < 1e-30 {
                break;
            }
        }
        sum
    }

    #[test]
    fn tls_variance_values() {
        for &x in &[1e-6, 0.5, 3.0, 10.0, 20.0] {
            let v = tls_equal_time_variance(1.0, x).unwrap();
            assert!((v - (2.0 - 2.0 / PI * cin_series(x))).abs() < 1e-9, "x={x}");
        }
        assert!(
            (tls_equal_time_variance(2.0, 50.0).unwrap() - tls_equal_time_variance(1.0, 100.0).unwrap()).abs() < 1e-12
        );
        let v = tls_equal_time_variance(1.0, 100.0).unwrap();
        assert!((v - tls_variance_asymptote(1.0, 100.0)).abs() < 5e-3, "{v}");
        assert!((tls_equal_time_variance(1.0, 2e3).unwrap() - tls_variance_asymptote(1.0, 2e3)).abs() < 1e-3);
        let (mut lo, mut hi) = (5.0, 20.0);
        while hi - lo > 1e-11 {
            let mid = 0.5 * (lo + hi);
            if 2.0 - 2.0 / PI * cin_series(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((tls_variance_zero_crossing().unwrap() - lo).abs() < 1e-8);
        // the log asymptote crosses zero earlier, at e^{π-γ}
        assert!(tls_variance_asymptote(1.0, (PI - EULER_GAMMA).exp()).abs() < 1e-14);
        assert!(tls_equal_time_variance(0.0, 1.0).is_err());
        assert!(tls_equal_time_variance(1.0, -1.0).is_err());
    }

    #[test]
    fn positivity() {
        let bad = DMatrix::from_element(1, 1, -0.5);
        assert!(!weak_positivity_check(&bad).unwrap().positive);
        let v = tls_equal_time_variance(1.0, 100.0).unwrap();
        assert!(
            !weak_positivity_check(&DMatrix::from_row_slice(2, 2, &[v, 0.0, 0.0, v]))
                .unwrap()
                .positive
        );
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]);
        assert!(matches!(weak_positivity_check(&asym), Err(Error::NotSymmetric { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn symmetrized_covariance_is_positive(seed in prop::collection::vec(-1.0f64..1.0, 12), t in 0.05f64..5.0) {
            let h = random_hermitian(3, &seed[..9]);
            let a = random_hermitian(3, &seed[3..]);
            let b = random_hermitian(3, &seed[1..10]);
            let rho = thermal_state(&h, t).unwrap();
            let ops = [&a, &b];
            let mut m = DMatrix::zeros(2, 2);
            for i in 0..2 {
                for j in 0..2 {
                    let s = lehmann_spectrum(&h, &rho, ops[i], ops[j]).unwrap();
                    let r = reversed_spectrum(&h, &rho, ops[i], ops[j]).unwrap();
                    m[(i, j)] = ((s.correlation(0.0) + r.correlation(0.0)) * 0.5).re;
                }
            }
            let m = (&m + m.transpose()) * 0.5;
            prop_assert!(weak_positivity_check(&m).unwrap().positive);
        }

        #[test]
        fn hermiticity(seed in prop::collection::vec(-1.0f64..1.0, 12), t in 0.05f64..5.0) {
            let h = random_hermitian(3, &seed[..9]);
            let a = random_hermitian(3, &seed[2..11]);
            let b = random_hermitian(3, &seed[3..]);
            let rho = thermal_state(&h, t).unwrap();
            let ab = lehmann_spectrum(&h, &rho, &a, &b).unwrap();
            let ba = lehmann_spectrum(&h, &rho, &b, &a).unwrap();
            // conj S_AB(ω) = S_BA(ω); mirrored: conj of ⟨B(0)A(t)⟩ at -ω
            for l in ab.lines() {
                prop_assert!((l.weight.conj() - ba.weight_at(l.omega)).norm() < 1e-12);
            }
            let rev = reversed_spectrum(&h, &rho, &a, &b).unwrap();
            for l in ab.lines() {
                prop_assert!((l.weight.conj() - rev.weight_at(-l.omega)).norm() < 1e-12);
            }
        }

        #[test]
        fn aa_symmetrized_weights_real(seed in prop::collection::vec(-1.0f64..1.0, 12), t in 0.05f64..5.0) {
            let h = random_hermitian(3, &seed[..9]);
            let a = random_hermitian(3, &seed[3..]);
            let rho = thermal_state(&h, t).unwrap();
            let w = weak_spectrum_of(&h, &rho, &a, &a, &MemoryKernel::Markovian).unwrap();
            for l in w.lines() {
                prop_assert!(l.weight.im.abs() < 1e-12);
            }
        }

        #[test]
        fn fdt_holds(seed in prop::collection::vec(-1.0f64..1.0, 12), t in 0.3f64..5.0) {
            let h = random_hermitian(3, &seed[..9]);
            let a = random_hermitian(3, &seed[2..11]);
            let b = random_hermitian(3, &seed[3..]);
            for (_, r) in fdt_residuals(&h, t, &a, &b).unwrap() {
                prop_assert!(r.norm() < 1e-10, "{r}");
            }
        }

        #[test]
        fn equilibrium_silence_order_two(seed in prop::collection::vec(-1.0f64..1.0, 12), t in 0.1f64..5.0) {
            let h = random_hermitian(3, &seed[..9]);
            let a = random_hermitian(3, &seed[2..11]);
            let b = random_hermitian(3, &seed[3..]);
            let rho = thermal_state(&h, t).unwrap();
            let k = MemoryKernel::equilibrium(t, KernelSign::Emission).unwrap();
            let w = weak_spectrum_of(&h, &rho, &a, &b, &k).unwrap();
            for l in w.lines().iter().filter(|l| l.omega.abs() > MERGE_TOL) {
                prop_assert!(l.weight.norm() < 1e-12, "{:?}", l);
            }
        }
    }
}
