//! Finite-coupling Gaussian detectors with memory.
//!
//! Each detector is a particle on a line, prepared in φ(x) ∝ e^{-x²}. At
//! its measurement time it receives a kick e^{-iηÂp} that shifts x by ηλ on
//! the branch where Â(t_j) = λ, and at every kernel sample t' it picks up a
//! phase e^{-2iη f(t_j - t') dt x Â(t')}. The position is then read out and
//! reported as a = x/η, so pure detection noise has variance 1/4η².
//!
//! Kraus operators are evaluated exactly as a sum over kick branches of
//! time-ordered products; outcome moments are integrated on the detector
//! grid, and Monte Carlo draws follow the continuous Born density.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::correlator::{weak_correlator_grid, WeakCorrelatorRequest};
use crate::error::{Error, Result};
use crate::hilbert::{check_dims, max_abs, CMatrix, DensityMatrix, EigenSystem, Operator, C64};
use crate::kernel::{MemoryKernel, TimeGrid};

pub const DEFAULT_POINTS: usize = 128;
pub const DEFAULT_HALF_WIDTH: f64 = 6.0;
pub const MIN_SAMPLES: usize = 10_000;
pub const MAX_DETECTORS: usize = 4;
/// Exact outcome integration is a dense sweep over points^n nodes.
pub const MAX_INTEGRATED_DETECTORS: usize = 2;

const NORM_TOL: f64 = 1e-10;
const BOUNDARY_TOL: f64 = 1e-7;
const BRANCH_TOL: f64 = 1e-9;
const NEGLIGIBLE_AMPLITUDE: f64 = 1e-12;
const CHUNK: usize = 4096;
/// Asymptotic Kolmogorov critical value at the 1% level.
const KS_CRITICAL_1PCT: f64 = 1.627_62;

/// Position grid for the detector readout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorGrid {
    points: usize,
    half_width: f64,
    spacing: f64,
    amplitude_scale: f64,
}

impl Default for DetectorGrid {
    fn default() -> Self {
        Self::new(DEFAULT_POINTS, DEFAULT_HALF_WIDTH).expect("default detector grid is valid")
    }
}

impl DetectorGrid {
    pub fn new(points: usize, half_width: f64) -> Result<Self> {
        if points < 16 {
            return Err(Error::param("points", format!("need at least 16, got {points}")));
        }
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::param(
                "half_width",
                format!("must be positive, got {half_width}"),
            ));
        }
        let spacing = 2.0 * half_width / (points - 1) as f64;
        let raw: f64 = (0..points)
            .map(|i| {
                let x = -half_width + i as f64 * spacing;
                (-2.0 * x * x).exp()
            })
            .sum::<f64>()
            * spacing;
        let grid = Self {
            points,
            half_width,
            spacing,
            amplitude_scale: 1.0 / raw.sqrt(),
        };
        let norm: f64 = grid.nodes().map(|x| grid.amplitude(x).powi(2)).sum::<f64>() * spacing;
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::param("points", format!("wavefunction norm {norm} is off")));
        }
        grid.check_shift(0.0)?;
        Ok(grid)
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn node(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.points).map(|i| self.node(i))
    }

    /// Initial wavefunction, normalized on the grid.
    pub fn amplitude(&self, x: f64) -> f64 {
        self.amplitude_scale * (-x * x).exp()
    }

    /// Rejects kicks that would push the wavepacket onto the boundary.
    pub fn check_shift(&self, shift: f64) -> Result<()> {
        let edge = self.amplitude(self.half_width - shift.abs());
        if edge >= BOUNDARY_TOL || shift.abs() >= self.half_width {
            return Err(Error::DetectorOverflow {
                shift: shift.abs(),
                half_width: self.half_width,
            });
        }
        Ok(())
    }
}

/// A system, its detectors and their coupling.
#[derive(Clone, Debug)]
pub struct MeasurementPlan {
    pub h: Operator,
    pub rho: DensityMatrix,
    /// Observables with their measurement times, in detector order.
    pub measurements: Vec<(Operator, f64)>,
    pub kernel: MemoryKernel,
    pub grid: TimeGrid,
    pub eta: f64,
    pub detector: DetectorGrid,
}

impl MeasurementPlan {
    /// Plan on a window starting `lead` before the first measurement, with
    /// the default detector grid.
    pub fn new(
        h: Operator,
        rho: DensityMatrix,
        measurements: Vec<(Operator, f64)>,
        kernel: MemoryKernel,
        dt: f64,
        lead: f64,
        eta: f64,
    ) -> Result<Self> {
        let times: Vec<f64> = measurements.iter().map(|m| m.1).collect();
        let grid = TimeGrid::for_times(dt, lead, &times)?;
        let plan = Self {
            h,
            rho,
            measurements,
            kernel,
            grid,
            eta,
            detector: DetectorGrid::default(),
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn with_eta(&self, eta: f64) -> Self {
        Self { eta, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || self.eta > 1.0 {
            return Err(Error::param("eta", format!("must lie in (0, 1], got {}", self.eta)));
        }
        let n = self.measurements.len();
        if n == 0 {
            return Err(Error::param("measurements", "need at least one detector"));
        }
        if n > MAX_DETECTORS {
            return Err(Error::TooManyObservables(n));
        }
        check_dims(self.h.dim(), self.rho.dim())?;
        for (a, t) in &self.measurements {
            check_dims(self.h.dim(), a.dim())?;
            let deviation = a.hermitian_deviation();
            if deviation > crate::hilbert::HERMITIAN_TOL {
                return Err(Error::NotHermitian { deviation });
            }
            if !self.grid.contains_flat(*t) {
                return Err(Error::param(
                    "measurements",
                    format!("time {t} outside the untapered window"),
                ));
            }
        }
        Ok(())
    }

    /// The weak-limit correlator of detectors `j` and `k` on the same grid.
    pub fn weak_reference(&self, pair: (usize, usize)) -> Result<C64> {
        self.check_pair(pair)?;
        let req = WeakCorrelatorRequest {
            h: self.h.clone(),
            rho: self.rho.clone(),
            observables: vec![self.measurements[pair.0].clone(), self.measurements[pair.1].clone()],
            kernel: self.kernel.clone(),
            grid: self.grid,
        };
        weak_correlator_grid(&req)
    }

    fn check_pair(&self, (j, k): (usize, usize)) -> Result<()> {
        let n = self.measurements.len();
        if j >= n || k >= n {
            return Err(Error::param("pair", format!("({j}, {k}) with {n} detectors")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Branch {
    lambda: f64,
    projector: CMatrix,
}

#[derive(Clone, Debug)]
enum Step {
    Phase {
        detector: usize,
        before_kick: bool,
        weight: f64,
        basis: CMatrix,
        basis_adj: CMatrix,
    },
    Kick {
        detector: usize,
    },
}

/// Precomputed timeline in the H eigenbasis.
struct KrausEngine {
    eig: EigenSystem,
    rho: CMatrix,
    eta: f64,
    detector: DetectorGrid,
    spectra: Vec<Vec<f64>>,
    branches: Vec<Vec<Branch>>,
    steps: Vec<Step>,
}

impl KrausEngine {
    fn new(plan: &MeasurementPlan, kernel_scale: f64) -> Result<Self> {
        plan.validate()?;
        let eig = EigenSystem::new(&plan.h)?;
        let dim = eig.dim();
        let phase_of = |t: f64| -> Vec<C64> { eig.energies.iter().map(|&e| C64::from_polar(1.0, e * t)).collect() };

        let mut spectra = Vec::new();
        let mut vectors = Vec::new();
        let mut branches = Vec::new();
        let mut shift: f64 = 0.0;
        for (a, t) in &plan.measurements {
            let local = eig.to_eigenbasis(a.matrix());
            let decomposition = local.clone().symmetric_eigen();
            let mu: Vec<f64> = decomposition.eigenvalues.iter().copied().collect();
            shift = shift.max(mu.iter().fold(0.0, |acc: f64, m| acc.max(m.abs())));
            let v = decomposition.eigenvectors;

            let mut order: Vec<usize> = (0..dim).collect();
            order.sort_by(|&p, &q| mu[p].total_cmp(&mu[q]));
            let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
            for &r in &order {
                match groups.last_mut() {
                    Some((lead, members)) if (mu[r] - *lead).abs() <= BRANCH_TOL * lead.abs().max(1.0) => {
                        members.push(r)
                    }
                    _ => groups.push((mu[r], vec![r])),
                }
            }
            let mut local_branches = Vec::new();
            for (_, members) in groups {
                let mut p = CMatrix::zeros(dim, dim);
                let mut lambda = 0.0;
                for &r in &members {
                    let col = v.column(r);
                    p += col * col.adjoint();
                    lambda += mu[r];
                }
                local_branches.push(Branch {
                    lambda: lambda / members.len() as f64,
                    projector: eig.evolve_in_eigenbasis(&p, *t),
                });
            }
            spectra.push(mu);
            vectors.push(v);
            branches.push(local_branches);
        }
        plan.detector.check_shift(plan.eta * shift)?;

        let mut timeline: Vec<(f64, Step)> = Vec::new();
        for (j, (_, t)) in plan.measurements.iter().enumerate() {
            timeline.push((*t, Step::Kick { detector: j }));
            for (tp, w) in plan.grid.samples(&plan.kernel, *t)? {
                let d = phase_of(tp);
                let basis = CMatrix::from_fn(dim, dim, |m, r| d[m] * vectors[j][(m, r)]);
                timeline.push((
                    tp,
                    Step::Phase {
                        detector: j,
                        before_kick: tp < *t,
                        weight: kernel_scale * w,
                        basis_adj: basis.adjoint(),
                        basis,
                    },
                ));
            }
        }
        timeline.sort_by(|a, b| a.0.total_cmp(&b.0));

        Ok(Self {
            rho: eig.to_eigenbasis(plan.rho.matrix()),
            eig,
            eta: plan.eta,
            detector: plan.detector,
            spectra,
            branches,
            steps: timeline.into_iter().map(|(_, s)| s).collect(),
        })
    }

    fn detectors(&self) -> usize {
        self.branches.len()
    }

    /// K(x) in the eigenbasis, x being detector positions.
    fn kraus(&self, x: &[f64]) -> CMatrix {
        let dim = self.eig.dim();
        let n = self.detectors();
        let mut k = CMatrix::zeros(dim, dim);
        let mut m = CMatrix::zeros(dim, dim);
        let mut tmp = CMatrix::zeros(dim, dim);
        let mut choice = vec![0usize; n];
        let mut pre = vec![0.0; n];
        let total: usize = self.branches.iter().map(Vec::len).product();

        for code in 0..total {
            let mut rest = code;
            let mut amplitude = 1.0;
            for j in 0..n {
                let count = self.branches[j].len();
                choice[j] = rest % count;
                rest /= count;
                pre[j] = x[j] - self.eta * self.branches[j][choice[j]].lambda;
                amplitude *= self.detector.amplitude(pre[j]);
            }
            if amplitude < NEGLIGIBLE_AMPLITUDE {
                continue;
            }
            m.fill_with_identity();
            for step in &self.steps {
                match step {
                    Step::Phase {
                        detector,
                        before_kick,
                        weight,
                        basis,
                        basis_adj,
                    } => {
                        let position = if *before_kick { pre[*detector] } else { x[*detector] };
                        let theta = 2.0 * self.eta * weight * position;
                        tmp.gemm(C64::new(1.0, 0.0), basis_adj, &m, C64::new(0.0, 0.0));
                        for (r, mu) in self.spectra[*detector].iter().enumerate() {
                            let phase = C64::from_polar(1.0, -theta * mu);
                            for z in tmp.row_mut(r).iter_mut() {
                                *z *= phase;
                            }
                        }
                        m.gemm(C64::new(1.0, 0.0), basis, &tmp, C64::new(0.0, 0.0));
                    }
                    Step::Kick { detector } => {
                        let p = &self.branches[*detector][choice[*detector]].projector;
                        tmp.gemm(C64::new(1.0, 0.0), p, &m, C64::new(0.0, 0.0));
                        std::mem::swap(&mut m, &mut tmp);
                    }
                }
            }
            k += m.scale(amplitude);
        }
        k
    }

    /// K ρ K† and its trace at detector positions x.
    fn apply(&self, x: &[f64]) -> (CMatrix, f64) {
        let k = self.kraus(x);
        let out = &k * &self.rho * k.adjoint();
        let p = out.trace().re;
        (out, p)
    }

    /// Position-space outcome density on every grid node, row-major with
    /// detector 0 varying slowest.
    fn density_table(&self) -> Result<Vec<f64>> {
        let n = self.detectors();
        if n > MAX_INTEGRATED_DETECTORS {
            return Err(Error::TooManyObservables(n));
        }
        let points = self.detector.points();
        let inner = points.pow(n as u32 - 1);
        let rows: Vec<Vec<f64>> = (0..points)
            .into_par_iter()
            .map(|i| {
                let mut x = vec![self.detector.node(i); n];
                (0..inner)
                    .map(|rest| {
                        if n == 2 {
                            x[1] = self.detector.node(rest);
                        }
                        self.apply(&x).1
                    })
                    .collect()
            })
            .collect();
        Ok(rows.into_iter().flatten().collect())
    }

    fn positions(&self, mut index: usize, out: &mut [f64]) {
        let points = self.detector.points();
        for slot in out.iter_mut().rev() {
            *slot = self.detector.node(index % points);
            index /= points;
        }
    }
}

/// Unnormalized post-measurement state K ρ K† for outcomes `a` (one per
/// detector) and the outcome probability density in `a`.
pub fn kraus_apply(plan: &MeasurementPlan, outcomes: &[f64]) -> Result<(Operator, f64)> {
    let engine = KrausEngine::new(plan, 1.0)?;
    check_dims(engine.detectors(), outcomes.len())?;
    let x: Vec<f64> = outcomes.iter().map(|a| a * plan.eta).collect();
    let (state, p) = engine.apply(&x);
    let jacobian = plan.eta.powi(outcomes.len() as i32);
    Ok((Operator::new(engine.eig.from_eigenbasis(&state))?, p * jacobian))
}

/// Outcome moments integrated on the detector grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridMoments {
    pub eta: f64,
    /// Total Born probability; 1 up to discretization.
    pub completeness: f64,
    pub means: Vec<f64>,
    /// ⟨a_j a_k⟩ with the detection noise 1/4η² removed from the diagonal.
    pub second: DMatrix<f64>,
}

pub fn exact_moments(plan: &MeasurementPlan) -> Result<GridMoments> {
    let engine = KrausEngine::new(plan, 1.0)?;
    let table = engine.density_table()?;
    Ok(moments_from_table(&engine, &table))
}

fn moments_from_table(engine: &KrausEngine, table: &[f64]) -> GridMoments {
    let n = engine.detectors();
    let eta = engine.eta;
    let cell = engine.detector.spacing().powi(n as i32);
    let mut completeness = 0.0;
    let mut means = vec![0.0; n];
    let mut second = DMatrix::zeros(n, n);
    let mut x = vec![0.0; n];
    for (index, p) in table.iter().enumerate() {
        engine.positions(index, &mut x);
        let w = p * cell;
        completeness += w;
        for j in 0..n {
            means[j] += w * x[j] / eta;
            for k in 0..n {
                second[(j, k)] += w * x[j] * x[k] / (eta * eta);
            }
        }
    }
    for j in 0..n {
        second[(j, j)] -= 0.25 / (eta * eta);
    }
    GridMoments {
        eta,
        completeness,
        means,
        second,
    }
}

/// Exact sampler of the continuous Born density. Proposals pick a grid node
/// by mass and add a tent jitter of one spacing, i.e. they follow the
/// multilinear interpolant of the node densities; a rejection step against
/// the Kraus density removes the interpolation error.
struct OutcomeSampler<'a> {
    engine: &'a KrausEngine,
    cumulative: Vec<f64>,
    /// Node densities normalized to unit mass.
    density: Vec<f64>,
    points: usize,
    spacing: f64,
    origin: f64,
}

/// Bound on density / interpolant; the interpolant of a smooth density
/// falls short of it by O(h² p''/8).
const ENVELOPE: f64 = 1.05;

impl<'a> OutcomeSampler<'a> {
    fn new(engine: &'a KrausEngine, table: &[f64]) -> Self {
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = table
            .iter()
            .map(|p| {
                acc += p.max(0.0);
                acc
            })
            .collect();
        for c in cumulative.iter_mut() {
            *c /= acc;
        }
        let cell = engine.detector.spacing().powi(engine.detectors() as i32);
        Self {
            engine,
            cumulative,
            density: table.iter().map(|p| p.max(0.0) / (acc * cell)).collect(),
            points: engine.detector.points(),
            spacing: engine.detector.spacing(),
            origin: -engine.detector.half_width(),
        }
    }

    /// Mass of the grid cell nearest to detector positions `x`.
    fn cell_mass(&self, x: &[f64]) -> f64 {
        let mut index = 0;
        for &xd in x {
            let i = ((xd - self.origin) / self.spacing)
                .round()
                .clamp(0.0, (self.points - 1) as f64) as usize;
            index = index * self.points + i;
        }
        let below = if index == 0 { 0.0 } else { self.cumulative[index - 1] };
        self.cumulative[index] - below
    }

    /// Multilinear interpolant of the node densities at positions `x`.
    fn proposal_density(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let mut total = 0.0;
        for corner in 0..(1usize << n) {
            let mut weight = 1.0;
            let mut index = 0;
            for (d, &xd) in x.iter().enumerate() {
                let s = (xd - self.origin) / self.spacing;
                let lower = s.floor();
                let frac = s - lower;
                let up = (corner >> (n - 1 - d)) & 1 == 1;
                let i = lower as i64 + up as i64;
                if i < 0 || i >= self.points as i64 {
                    weight = 0.0;
                    break;
                }
                weight *= if up { frac } else { 1.0 - frac };
                index = index * self.points + i as usize;
            }
            if weight > 0.0 {
                total += weight * self.density[index];
            }
        }
        total
    }

    /// Draws `count` detector position vectors on the stream `chunk` of `seed`.
    fn draw(&self, seed: u64, chunk: u64, count: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(chunk);
        let n = self.engine.detectors();
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let u: f64 = rng.random();
            let node = self
                .cumulative
                .partition_point(|&c| c < u)
                .min(self.cumulative.len() - 1);
            let mut x = vec![0.0; n];
            let mut rest = node;
            for slot in x.iter_mut().rev() {
                let i = rest % self.points;
                rest /= self.points;
                let tent = rng.random::<f64>() + rng.random::<f64>() - 1.0;
                *slot = self.origin + (i as f64 + tent) * self.spacing;
            }
            let target = self.engine.apply(&x).1;
            let proposal = self.proposal_density(&x);
            if rng.random::<f64>() * ENVELOPE * proposal < target {
                out.push(x);
            }
        }
        out
    }

    fn chunks(&self, samples: usize) -> Vec<(u64, usize)> {
        (0..samples.div_ceil(CHUNK))
            .map(|c| (c as u64, CHUNK.min(samples - c * CHUNK)))
            .collect()
    }
}

/// Monte Carlo estimate of a finite-η correlator next to its exact grid value.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FiniteEtaEstimate {
    pub eta: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub exact: f64,
    pub samples: usize,
}

/// ⟨a_j a_k⟩_η from `samples` Born-rule draws, detection noise removed.
/// With a tolerance, a standard error above it is an error.
pub fn finite_eta_correlator(
    plan: &MeasurementPlan,
    pair: (usize, usize),
    samples: usize,
    seed: u64,
    tolerance: Option<f64>,
) -> Result<FiniteEtaEstimate> {
    if plan.measurements.len() != 2 {
        return Err(Error::param("measurements", "need exactly two detectors"));
    }
    plan.check_pair(pair)?;
    if samples < MIN_SAMPLES {
        return Err(Error::param(
            "samples",
            format!("need at least {MIN_SAMPLES}, got {samples}"),
        ));
    }
    let engine = KrausEngine::new(plan, 1.0)?;
    let table = engine.density_table()?;
    let exact = moments_from_table(&engine, &table).second[(pair.0, pair.1)];
    let sampler = OutcomeSampler::new(&engine, &table);

    let eta = plan.eta;
    let offset = if pair.0 == pair.1 { 0.25 / (eta * eta) } else { 0.0 };
    let stats: Vec<(f64, f64)> = sampler
        .chunks(samples)
        .into_par_iter()
        .map(|(chunk, count)| {
            sampler.draw(seed, chunk, count).iter().fold((0.0, 0.0), |(s, s2), x| {
                let y = x[pair.0] * x[pair.1] / (eta * eta) - offset;
                (s + y, s2 + y * y)
            })
        })
        .collect();
    let (sum, sum_sq) = stats.iter().fold((0.0, 0.0), |(s, s2), (a, b)| (s + a, s2 + b));
    let n = samples as f64;
    let estimate = sum / n;
    let variance = ((sum_sq / n - estimate * estimate) * n / (n - 1.0)).max(0.0);
    let stderr = (variance / n).sqrt();
    if let Some(tolerance) = tolerance {
        if stderr > tolerance {
            return Err(Error::Undersampled { stderr, tolerance });
        }
    }
    Ok(FiniteEtaEstimate {
        eta,
        estimate,
        stderr,
        exact,
        samples,
    })
}

/// One Monte Carlo draw, kept for audit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub index: usize,
    pub eta: f64,
    pub outcomes: Vec<f64>,
    /// Born probability of the grid cell nearest to the outcome.
    pub probability: f64,
    pub weight: f64,
    /// SHA-256 of the normalized post-measurement state at that cell.
    pub state_hash: String,
}

pub fn sample_trajectories(plan: &MeasurementPlan, samples: usize, seed: u64) -> Result<Vec<TrajectoryRecord>> {
    if samples == 0 {
        return Err(Error::param("samples", "must be positive"));
    }
    let engine = KrausEngine::new(plan, 1.0)?;
    let table = engine.density_table()?;
    let sampler = OutcomeSampler::new(&engine, &table);
    let draws: Vec<Vec<f64>> = sampler
        .chunks(samples)
        .into_iter()
        .flat_map(|(chunk, count)| sampler.draw(seed, chunk, count))
        .collect();

    let mut records = Vec::with_capacity(samples);
    for (index, x) in draws.into_iter().enumerate() {
        let (state, p) = engine.apply(&x);
        let normalized = if p > 0.0 { state.scale(1.0 / p) } else { state };
        records.push(TrajectoryRecord {
            seed,
            index,
            eta: plan.eta,
            probability: sampler.cell_mass(&x),
            outcomes: x.iter().map(|xd| xd / plan.eta).collect(),
            weight: 1.0 / samples as f64,
            state_hash: state_hash(&engine.eig.from_eigenbasis(&normalized)),
        });
    }
    Ok(records)
}

/// Entries are rounded to 1e-10 so the hash survives last-bit noise.
fn state_hash(state: &CMatrix) -> String {
    let mut hasher = Sha256::new();
    for z in state.iter() {
        for part in [z.re, z.im] {
            let rounded = (part * 1e10).round() as i64;
            hasher.update(rounded.to_le_bytes());
        }
    }
    format!("{:x}", hasher.finalize())
}

/// Deviations of the propagated Kraus superoperator from its first-order
/// expansion, for a single detector. The channels split the first moment
/// by parity in f.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExpansionResidual {
    pub zeroth: f64,
    pub c_channel: f64,
    pub q_channel: f64,
}

impl ExpansionResidual {
    pub fn max(&self) -> f64 {
        self.zeroth.max(self.c_channel).max(self.q_channel)
    }
}

pub fn expansion_check(plan: &MeasurementPlan) -> Result<ExpansionResidual> {
    if plan.measurements.len() != 1 {
        return Err(Error::param("measurements", "need exactly one detector"));
    }
    let forward = KrausEngine::new(plan, 1.0)?;
    let reversed = KrausEngine::new(plan, -1.0)?;
    let (m0, m1_forward) = first_moments(&forward);
    let (_, m1_reversed) = first_moments(&reversed);

    let (a, t) = &plan.measurements[0];
    let eig = &forward.eig;
    let rho = &forward.rho;
    let local = eig.to_eigenbasis(a.matrix());
    let at = eig.evolve_in_eigenbasis(&local, *t);
    let c_prediction = (&at * rho + rho * &at).scale(0.5);
    let mut q_prediction = CMatrix::zeros(eig.dim(), eig.dim());
    for (tp, w) in plan.grid.samples(&plan.kernel, *t)? {
        let atp = eig.evolve_in_eigenbasis(&local, tp);
        let q = (&atp * rho - rho * &atp) * C64::new(0.0, -1.0);
        q_prediction += q.scale(0.5 * w);
    }

    let c_part = (&m1_forward + &m1_reversed).scale(0.5);
    let q_part = (&m1_forward - &m1_reversed).scale(0.5);
    Ok(ExpansionResidual {
        zeroth: max_abs(&(m0 - rho)),
        c_channel: max_abs(&(c_part - c_prediction)),
        q_channel: max_abs(&(q_part - q_prediction)),
    })
}

/// ∑ K ρ K† and ∑ a K ρ K† over the grid, for one detector.
fn first_moments(engine: &KrausEngine) -> (CMatrix, CMatrix) {
    let dim = engine.eig.dim();
    let h = engine.detector.spacing();
    let mut m0 = CMatrix::zeros(dim, dim);
    let mut m1 = CMatrix::zeros(dim, dim);
    for x in engine.detector.nodes() {
        let (out, _) = engine.apply(&[x]);
        m1 += out.scale(h * x / engine.eta);
        m0 += out.scale(h);
    }
    (m0, m1)
}

/// Moments of the bare detector distribution |k(a)|² at unit coupling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MomentConditions {
    /// ∫ 2a |k|² da, which must vanish.
    pub first: f64,
    /// ∫ 4a² |k|² da, the coefficient of the δ term; must be 1.
    pub second: f64,
    pub norm: f64,
}

pub fn moment_conditions(detector: &DetectorGrid) -> MomentConditions {
    let h = detector.spacing();
    let mut out = MomentConditions {
        first: 0.0,
        second: 0.0,
        norm: 0.0,
    };
    for a in detector.nodes() {
        let k2 = detector.amplitude(a).powi(2) * h;
        out.first += 2.0 * a * k2;
        out.second += 4.0 * a * a * k2;
        out.norm += k2;
    }
    out
}

/// Kolmogorov-Smirnov comparison of sampled outcomes with a Gaussian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KsReport {
    pub statistic: f64,
    pub critical: f64,
    pub passed: bool,
}

/// Samples a detector coupled to the null operator and tests the outcomes
/// against the density ∝ e^{-2η²a²}.
pub fn detection_noise_ks(eta: f64, samples: usize, seed: u64) -> Result<KsReport> {
    if samples < MIN_SAMPLES {
        return Err(Error::param(
            "samples",
            format!("need at least {MIN_SAMPLES}, got {samples}"),
        ));
    }
    let plan = MeasurementPlan::new(
        Operator::zeros(2),
        DensityMatrix::maximally_mixed(2),
        vec![(Operator::zeros(2), 0.0)],
        MemoryKernel::Markovian,
        0.1,
        1.0,
        eta,
    )?;
    let engine = KrausEngine::new(&plan, 1.0)?;
    let table = engine.density_table()?;
    let sampler = OutcomeSampler::new(&engine, &table);
    let mut a: Vec<f64> = sampler
        .chunks(samples)
        .into_par_iter()
        .flat_map_iter(|(chunk, count)| sampler.draw(seed, chunk, count).into_iter().map(|x| x[0] / eta))
        .collect();
    a.sort_by(f64::total_cmp);

    let sigma = 0.5 / eta;
    let n = a.len() as f64;
    let statistic = a.iter().enumerate().fold(0.0, |acc: f64, (i, &v)| {
        let cdf = 0.5 * (1.0 + libm::erf(v / (sigma * SQRT_2)));
        acc.max((cdf - i as f64 / n).abs())
            .max(((i + 1) as f64 / n - cdf).abs())
    });
    let critical = KS_CRITICAL_1PCT / n.sqrt();
    Ok(KsReport {
        statistic,
        critical,
        passed: statistic < critical,
    })
}

/// Gaussian outcome density ∝ e^{-2η²a²} of a detector that sees nothing.
pub fn detection_noise_density(eta: f64, a: f64) -> f64 {
    eta * (2.0 / PI).sqrt() * (-2.0 * eta * eta * a * a).exp()
}
