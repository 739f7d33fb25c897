//! Physical observables from accumulated Wigner moments.
//!
//! Wigner averages are symmetrically ordered. Single-mode number moments
//! carry the half-quantum correction; cross-mode moments such as `α1* α2`
//! need none. Quadrature second moments are already symmetric, so their
//! Wigner estimate is the quantum value.

use std::f64::consts::{LN_2, PI};
use std::ops::Range;

use thiserror::Error;

use crate::engine::{standard_error, EngineError, EnsembleReport, Moments};
use crate::model::{Well, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservableError {
    #[error("accumulator holds no samples")]
    Empty,
    #[error("variance estimates need more than one sample, got {0}")]
    InsufficientSamples(u64),
    #[error("total population {0} is not positive")]
    ZeroPopulation(f64),
    #[error("reduced density matrix eigenvalue {0} outside [-{1}, 1+{1}]")]
    Eigenvalue(f64, f64),
    #[error("angle grid is empty")]
    EmptyGrid,
    #[error("steady window holds no output times")]
    EmptyWindow,
    #[error(transparent)]
    Engine(#[from] EngineError),
}

fn nonempty(m: &Moments) -> Result<(), ObservableError> {
    if m.is_empty() {
        Err(ObservableError::Empty)
    } else {
        Ok(())
    }
}

fn enough(m: &Moments) -> Result<(), ObservableError> {
    if m.n_samples < 2 {
        Err(ObservableError::InsufficientSamples(m.n_samples))
    } else {
        Ok(())
    }
}

/// Mean populations `⟨a_i† a_i⟩ = mean|α_i|² − 1/2`.
pub fn populations(m: &Moments) -> Result<(f64, f64), ObservableError> {
    nonempty(m)?;
    Ok((
        m.mean_norm_sqr(Well::One) - 0.5,
        m.mean_norm_sqr(Well::Two) - 0.5,
    ))
}

/// `σ12 = |⟨a1† a2⟩|`.
pub fn coherence_sigma12(m: &Moments) -> Result<f64, ObservableError> {
    nonempty(m)?;
    Ok(m.mean_cross().norm())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Current {
    /// `-i⟨a2† a1 − a1† a2⟩` as written.
    pub i12: f64,
    /// Tunnelling particle flux from well 1 into well 2, `−J·i12`.
    pub flux: f64,
}

pub fn current_i12(m: &Moments, j_tunnel: f64) -> Result<Current, ObservableError> {
    nonempty(m)?;
    let c = m.mean_cross();
    let i12 = (-C64::i() * (c.conj() - c)).re;
    Ok(Current {
        i12,
        flux: -j_tunnel * i12,
    })
}

/// Variance of the quadrature of `z` at angle `theta` (radians), from the
/// means of `z`, `z²` and `|z|²`.
fn quadrature_from(mean: C64, mean_sq: C64, mean_abs_sq: f64, theta: f64) -> f64 {
    let phase = C64::from_polar(1.0, -theta);
    let second = 2.0 * mean_abs_sq + 2.0 * (mean_sq * phase * phase).re;
    let first = 2.0 * (mean * phase).re;
    second - first * first
}

/// `V(X_j(θ))` with `X_j(θ) = a_j e^{−iθ} + a_j† e^{iθ}`; `theta` in radians.
pub fn quadrature_variance(m: &Moments, well: Well, theta: f64) -> Result<f64, ObservableError> {
    enough(m)?;
    Ok(quadrature_from(
        m.mean_alpha(well),
        m.mean_alpha_sq(well),
        m.mean_norm_sqr(well),
        theta,
    ))
}

/// `V(X1(θ)+X2(θ)) + V(Y1(θ)−Y2(θ))` with `Y_j(θ) = X_j(θ + π/2)`.
pub fn duan_simon(m: &Moments, theta: f64) -> Result<f64, ObservableError> {
    enough(m)?;
    let (a1, a2) = (m.mean_alpha(Well::One), m.mean_alpha(Well::Two));
    let (q1, q2) = (m.mean_alpha_sq(Well::One), m.mean_alpha_sq(Well::Two));
    let (n1, n2) = (m.mean_norm_sqr(Well::One), m.mean_norm_sqr(Well::Two));
    let pair = m.mean_a1a2();
    let cross = m.mean_cross().re;
    let sum = quadrature_from(a1 + a2, q1 + q2 + 2.0 * pair, n1 + n2 + 2.0 * cross, theta);
    let diff = quadrature_from(
        a1 - a2,
        q1 + q2 - 2.0 * pair,
        n1 + n2 - 2.0 * cross,
        theta + 0.5 * PI,
    );
    Ok(sum + diff)
}

/// `ξ12 = |⟨α1*α2⟩|² − ⟨|α1|²|α2|²⟩ + ½⟨|α1|²+|α2|²⟩ − ¼` in Wigner averages.
/// Positive values witness entanglement.
pub fn hillery_zubairy_xi(m: &Moments) -> Result<f64, ObservableError> {
    nonempty(m)?;
    Ok(m.mean_cross().norm_sqr() - m.mean_n1n2()
        + 0.5 * (m.mean_norm_sqr(Well::One) + m.mean_norm_sqr(Well::Two))
        - 0.25)
}

/// Uniform grid of quadrature angles over `[0°, 180°)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleGrid {
    pub resolution_deg: f64,
}

impl Default for AngleGrid {
    fn default() -> Self {
        AngleGrid {
            resolution_deg: 1.0,
        }
    }
}

impl AngleGrid {
    pub fn new(resolution_deg: f64) -> Self {
        AngleGrid { resolution_deg }
    }

    pub fn degrees(&self) -> Vec<f64> {
        if !(self.resolution_deg > 0.0 && self.resolution_deg.is_finite()) {
            return Vec::new();
        }
        let n = (180.0 / self.resolution_deg).round() as usize;
        let step = 180.0 / n.max(1) as f64;
        (0..n).map(|k| k as f64 * step).collect()
    }
}

/// Minimum of an angular scan with its location in degrees, `[0, 180)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleMin {
    pub value: f64,
    pub theta_deg: f64,
}

/// Minimises a π-periodic function `f(θ in radians)` on the grid, then
/// refines by a parabola through the minimum and its two neighbours.
pub fn min_scan<F>(grid: &AngleGrid, f: F) -> Result<AngleMin, ObservableError>
where
    F: Fn(f64) -> f64,
{
    let degrees = grid.degrees();
    if degrees.is_empty() {
        return Err(ObservableError::EmptyGrid);
    }
    let values: Vec<f64> = degrees.iter().map(|d| f(d.to_radians())).collect();
    let (k, &v0) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let n = values.len();
    if n < 3 {
        return Ok(AngleMin {
            value: v0,
            theta_deg: degrees[k],
        });
    }
    let step = 180.0 / n as f64;
    let vm = values[(k + n - 1) % n];
    let vp = values[(k + 1) % n];
    let curvature = vm - 2.0 * v0 + vp;
    if curvature <= 0.0 {
        // Flat to rounding: report the grid point.
        return Ok(AngleMin {
            value: v0,
            theta_deg: degrees[k],
        });
    }
    let shift = (0.5 * (vm - vp) / curvature).clamp(-0.5, 0.5);
    let theta_deg = (degrees[k] + shift * step).rem_euclid(180.0);
    let value = f(theta_deg.to_radians()).min(v0);
    Ok(AngleMin { value, theta_deg })
}

pub fn min_quadrature_scan(
    m: &Moments,
    well: Well,
    grid: &AngleGrid,
) -> Result<AngleMin, ObservableError> {
    enough(m)?;
    min_scan(grid, |t| {
        quadrature_variance(m, well, t).expect("sample count checked")
    })
}

pub fn duan_simon_scan(m: &Moments, grid: &AngleGrid) -> Result<AngleMin, ObservableError> {
    enough(m)?;
    min_scan(grid, |t| duan_simon(m, t).expect("sample count checked"))
}

/// Normalised single-particle density matrix
/// `[[⟨a1†a1⟩, ⟨a1†a2⟩], [⟨a2†a1⟩, ⟨a2†a2⟩]] / N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedDensityMatrix {
    pub entries: [[C64; 2]; 2],
}

impl ReducedDensityMatrix {
    /// Builds from population and coherence, normalising by `n1 + n2`.
    pub fn from_parts(n1: f64, n2: f64, coherence: C64) -> Result<Self, ObservableError> {
        let total = n1 + n2;
        if !(total > 0.0) {
            return Err(ObservableError::ZeroPopulation(total));
        }
        let raw = [
            [C64::new(n1, 0.0), coherence],
            [coherence.conj(), C64::new(n2, 0.0)],
        ];
        Ok(Self::hermitised(raw, total))
    }

    /// `(M + M†) / (2 norm)`.
    pub fn hermitised(raw: [[C64; 2]; 2], norm: f64) -> Self {
        let mut entries = [[C64::new(0.0, 0.0); 2]; 2];
        for (r, row) in entries.iter_mut().enumerate() {
            for (c, e) in row.iter_mut().enumerate() {
                *e = (raw[r][c] + raw[c][r].conj()) * (0.5 / norm);
            }
        }
        ReducedDensityMatrix { entries }
    }

    pub fn trace(&self) -> f64 {
        self.entries[0][0].re + self.entries[1][1].re
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let a = self.entries[0][0].re;
        let d = self.entries[1][1].re;
        let b = self.entries[0][1];
        let half_gap = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
        let mid = 0.5 * (a + d);
        [mid - half_gap, mid + half_gap]
    }

    /// Entrywise average of several matrices.
    pub fn average<'a>(items: impl IntoIterator<Item = &'a ReducedDensityMatrix>) -> Option<Self> {
        let mut sum = [[C64::new(0.0, 0.0); 2]; 2];
        let mut n = 0usize;
        for m in items {
            for r in 0..2 {
                for c in 0..2 {
                    sum[r][c] += m.entries[r][c];
                }
            }
            n += 1;
        }
        (n > 0).then(|| Self::hermitised(sum, n as f64))
    }
}

/// Tolerance on eigenvalues of `R` before they are clamped into `[0, 1]`.
pub const DEFAULT_EIGEN_TOLERANCE: f64 = 0.05;

pub fn reduced_density_matrix(m: &Moments) -> Result<ReducedDensityMatrix, ObservableError> {
    let (n1, n2) = populations(m)?;
    ReducedDensityMatrix::from_parts(n1, n2, m.mean_cross())
}

fn entropy_of(eigenvalues: &[f64]) -> f64 {
    eigenvalues
        .iter()
        .map(|&l| if l > 0.0 { -l * l.ln() } else { 0.0 })
        .sum()
}

/// von Neumann entropy `−tr(R ln R)` in nats.
pub fn pseudo_entropy(r: &ReducedDensityMatrix, tolerance: f64) -> Result<f64, ObservableError> {
    let eig = r.eigenvalues();
    for &l in &eig {
        if !(l >= -tolerance && l <= 1.0 + tolerance) {
            return Err(ObservableError::Eigenvalue(l, tolerance));
        }
    }
    let clamped = eig.map(|l| l.clamp(0.0, 1.0));
    Ok(entropy_of(&clamped))
}

/// Entropy of `diag(n1, n2)/(n1+n2)`: the value with all coherence removed.
pub fn max_entropy_reference(n1: f64, n2: f64) -> Result<f64, ObservableError> {
    let total = n1 + n2;
    if !(total > 0.0) {
        return Err(ObservableError::ZeroPopulation(total));
    }
    Ok(entropy_of(&[(n1 / total).max(0.0), (n2 / total).max(0.0)]).min(LN_2))
}

/// Every observable at one output time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservableRecord {
    pub t: f64,
    pub n1: f64,
    pub n2: f64,
    pub sigma12: f64,
    pub i12: f64,
    pub flux: f64,
    pub vx1: AngleMin,
    pub vx2: AngleMin,
    pub ds: AngleMin,
    pub xi12: f64,
    /// `None` when the total population is not positive (e.g. at `t = 0`).
    pub entropy: Option<f64>,
}

impl ObservableRecord {
    pub fn from_moments(
        t: f64,
        m: &Moments,
        j_tunnel: f64,
        grid: &AngleGrid,
        eigen_tolerance: f64,
    ) -> Result<Self, ObservableError> {
        let (n1, n2) = populations(m)?;
        let current = current_i12(m, j_tunnel)?;
        let entropy = match reduced_density_matrix(m) {
            Ok(r) => pseudo_entropy(&r, eigen_tolerance).ok(),
            Err(_) => None,
        };
        Ok(ObservableRecord {
            t,
            n1,
            n2,
            sigma12: coherence_sigma12(m)?,
            i12: current.i12,
            flux: current.flux,
            vx1: min_quadrature_scan(m, Well::One, grid)?,
            vx2: min_quadrature_scan(m, Well::Two, grid)?,
            ds: duan_simon_scan(m, grid)?,
            xi12: hillery_zubairy_xi(m)?,
            entropy,
        })
    }
}

/// Observables averaged over a window of output times.
///
/// Each quantity is evaluated at every time in the window and then averaged;
/// angular scans minimise the window-averaged curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowEstimate {
    pub n1: f64,
    pub n2: f64,
    pub sigma12: f64,
    pub i12: f64,
    pub flux: f64,
    pub vx1: AngleMin,
    pub vx2: AngleMin,
    pub ds: AngleMin,
    pub xi12: f64,
    /// Largest `ξ12` at any time inside the window.
    pub xi12_max: f64,
    pub rdm: ReducedDensityMatrix,
    pub entropy: f64,
    pub max_entropy: f64,
}

fn mean_of<F>(series: &[Moments], f: F) -> Result<f64, ObservableError>
where
    F: Fn(&Moments) -> Result<f64, ObservableError>,
{
    let mut total = 0.0;
    for m in series {
        total += f(m)?;
    }
    Ok(total / series.len() as f64)
}

impl WindowEstimate {
    pub fn from_series(
        series: &[Moments],
        j_tunnel: f64,
        grid: &AngleGrid,
        eigen_tolerance: f64,
    ) -> Result<Self, ObservableError> {
        if series.is_empty() {
            return Err(ObservableError::EmptyWindow);
        }
        for m in series {
            enough(m)?;
        }
        let n1 = mean_of(series, |m| Ok(populations(m)?.0))?;
        let n2 = mean_of(series, |m| Ok(populations(m)?.1))?;
        let current = mean_of(series, |m| Ok(current_i12(m, j_tunnel)?.i12))?;
        let len = series.len() as f64;
        let avg = |f: &dyn Fn(&Moments, f64) -> f64, theta: f64| {
            series.iter().map(|m| f(m, theta)).sum::<f64>() / len
        };
        let vx1 = min_scan(grid, |t| {
            avg(&|m, t| quadrature_variance(m, Well::One, t).unwrap(), t)
        })?;
        let vx2 = min_scan(grid, |t| {
            avg(&|m, t| quadrature_variance(m, Well::Two, t).unwrap(), t)
        })?;
        let ds = min_scan(grid, |t| avg(&|m, t| duan_simon(m, t).unwrap(), t))?;
        let mut xi12_max = f64::NEG_INFINITY;
        for m in series {
            xi12_max = xi12_max.max(hillery_zubairy_xi(m)?);
        }
        let matrices = series
            .iter()
            .map(reduced_density_matrix)
            .collect::<Result<Vec<_>, _>>()?;
        let rdm = ReducedDensityMatrix::average(&matrices).expect("non-empty window");
        let mut entropy = 0.0;
        for r in &matrices {
            entropy += pseudo_entropy(r, eigen_tolerance)?;
        }
        Ok(WindowEstimate {
            n1,
            n2,
            sigma12: mean_of(series, coherence_sigma12)?,
            i12: current,
            flux: -j_tunnel * current,
            vx1,
            vx2,
            ds,
            xi12: mean_of(series, hillery_zubairy_xi)?,
            xi12_max,
            rdm,
            entropy: entropy / len,
            max_entropy: max_entropy_reference(n1, n2)?,
        })
    }
}

/// Window estimate with batch-means standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub t_lo: f64,
    pub t_hi: f64,
    pub range: Range<usize>,
    pub estimate: WindowEstimate,
    pub errors: WindowErrors,
    /// Largest drift between window halves of first and second moments,
    /// in units of their standard error.
    pub stationarity_z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WindowErrors {
    pub n1: f64,
    pub n2: f64,
    pub sigma12: f64,
    pub i12: f64,
    pub vx1: f64,
    pub vx2: f64,
    pub ds: f64,
    pub xi12: f64,
    pub entropy: f64,
    pub vx1_theta: f64,
    pub vx2_theta: f64,
    pub ds_theta: f64,
    /// Per-entry errors of the reduced density matrix, real and imaginary parts.
    pub rdm: [[(f64, f64); 2]; 2],
}

impl SteadyState {
    pub fn is_stationary(&self) -> bool {
        self.stationarity_z < 1.0
    }
}

fn wrapped_deg(theta: f64, reference: f64) -> f64 {
    (theta - reference + 90.0).rem_euclid(180.0) - 90.0
}

/// Steady-state estimate from the output times inside `[t_lo, t_hi]`.
pub fn steady_state(
    report: &EnsembleReport,
    t_lo: f64,
    t_hi: f64,
    grid: &AngleGrid,
    eigen_tolerance: f64,
) -> Result<SteadyState, ObservableError> {
    let range = report.grid().window(t_lo, t_hi);
    if range.is_empty() {
        return Err(ObservableError::EmptyWindow);
    }
    let j = report.params.j_tunnel;
    let estimate = WindowEstimate::from_series(
        &report.total.moments()[range.clone()],
        j,
        grid,
        eigen_tolerance,
    )?;
    let partials = report
        .batches
        .iter()
        .map(|b| WindowEstimate::from_series(&b.moments()[range.clone()], j, grid, eigen_tolerance))
        .collect::<Result<Vec<_>, _>>()?;
    let se = |f: &dyn Fn(&WindowEstimate) -> f64| standard_error(&partials, f);
    let mut rdm = [[(0.0, 0.0); 2]; 2];
    for (r, row) in rdm.iter_mut().enumerate() {
        for (c, e) in row.iter_mut().enumerate() {
            *e = (
                se(&|w| w.rdm.entries[r][c].re)?,
                se(&|w| w.rdm.entries[r][c].im)?,
            );
        }
    }
    let errors = WindowErrors {
        n1: se(&|w| w.n1)?,
        n2: se(&|w| w.n2)?,
        sigma12: se(&|w| w.sigma12)?,
        i12: se(&|w| w.i12)?,
        vx1: se(&|w| w.vx1.value)?,
        vx2: se(&|w| w.vx2.value)?,
        ds: se(&|w| w.ds.value)?,
        xi12: se(&|w| w.xi12)?,
        entropy: se(&|w| w.entropy)?,
        vx1_theta: se(&|w| wrapped_deg(w.vx1.theta_deg, estimate.vx1.theta_deg))?,
        vx2_theta: se(&|w| wrapped_deg(w.vx2.theta_deg, estimate.vx2.theta_deg))?,
        ds_theta: se(&|w| wrapped_deg(w.ds.theta_deg, estimate.ds.theta_deg))?,
        rdm,
    };
    let stationarity_z = stationarity(report, range.clone())?;
    Ok(SteadyState {
        t_lo,
        t_hi,
        range,
        estimate,
        errors,
        stationarity_z,
    })
}

/// Compares window halves for the mean amplitudes and mean `|α|²` of both wells.
fn stationarity(report: &EnsembleReport, range: Range<usize>) -> Result<f64, ObservableError> {
    if range.len() < 2 {
        return Ok(0.0);
    }
    let mid = range.start + range.len() / 2;
    let halves = [range.start..mid, mid..range.end];
    let probes: [&dyn Fn(&Moments) -> f64; 6] = [
        &|m| m.mean_alpha(Well::One).re,
        &|m| m.mean_alpha(Well::One).im,
        &|m| m.mean_alpha(Well::Two).re,
        &|m| m.mean_alpha(Well::Two).im,
        &|m| m.mean_norm_sqr(Well::One),
        &|m| m.mean_norm_sqr(Well::Two),
    ];
    let half_mean = |series: &[Moments], r: &Range<usize>, f: &dyn Fn(&Moments) -> f64| {
        series[r.clone()].iter().map(f).sum::<f64>() / r.len() as f64
    };
    let mut worst: f64 = 0.0;
    for f in probes {
        let delta = |series: &[Moments]| {
            half_mean(series, &halves[1], f) - half_mean(series, &halves[0], f)
        };
        let value = delta(report.total.moments());
        let err = standard_error(&report.batches, |b| delta(b.moments()))?;
        let z = if err > 0.0 {
            value.abs() / err
        } else if value == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(z);
    }
    Ok(worst)
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use crate::model::TrajectoryState;
    use crate::sampler::{sample_vacuum, stream_for, SeedSpec};
    use proptest::prelude::*;

    fn coherent_ensemble(beta1: C64, beta2: C64, n: usize, seed: u64) -> Moments {
        let mut rng = stream_for(SeedSpec::new(seed, 0));
        let mut m = Moments::default();
        for _ in 0..n {
            let v = sample_vacuum(&mut rng);
            m.push(&TrajectoryState::new(beta1 + v.alpha1, beta2 + v.alpha2));
        }
        m
    }

    fn exact_coherent(beta1: C64, beta2: C64) -> Moments {
        // Exact Wigner moments of coherent states: α = β + δ with
        // E[δ] = E[δ²] = 0, E|δ|² = 1/2, independent between wells.
        let n = 1u64;
        let m1 = beta1.norm_sqr() + 0.5;
        let m2 = beta2.norm_sqr() + 0.5;
        Moments {
            n_samples: n,
            s_a1: beta1,
            s_a2: beta2,
            s_a1sq: beta1 * beta1,
            s_a2sq: beta2 * beta2,
            s_n1: m1,
            s_n2: m2,
            s_cross: beta1.conj() * beta2,
            s_a1a2: beta1 * beta2,
            s_n1n2: m1 * m2,
        }
    }

    fn with_two_samples(m: Moments) -> Moments {
        m.merge(&m)
    }

    #[test]
    fn vacuum_observables() {
        let m = coherent_ensemble(C64::new(0.0, 0.0), C64::new(0.0, 0.0), 400_000, 1);
        let (n1, n2) = populations(&m).unwrap();
        assert!(n1.abs() < 3e-3 && n2.abs() < 3e-3);
        assert!(coherence_sigma12(&m).unwrap() < 3e-3);
        for k in 0..6 {
            let t = k as f64 * 0.5;
            assert!((quadrature_variance(&m, Well::One, t).unwrap() - 1.0).abs() < 0.01);
            assert!((duan_simon(&m, t).unwrap() - 4.0).abs() < 0.02);
        }
        assert!(hillery_zubairy_xi(&m).unwrap().abs() < 3e-3);
    }

    #[test]
    fn exact_vacuum_xi_is_zero() {
        let m = exact_coherent(C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        assert_eq!(hillery_zubairy_xi(&m).unwrap(), 0.0);
    }

    #[test]
    fn classical_config_a_values() {
        let m = with_two_samples(exact_coherent(C64::new(10.0, 0.0), C64::new(0.0, 10.0)));
        let (n1, n2) = populations(&m).unwrap();
        assert!((n1 - 100.0).abs() < 1e-12 && (n2 - 100.0).abs() < 1e-12);
        assert!((coherence_sigma12(&m).unwrap() - 100.0).abs() < 1e-12);
        let current = current_i12(&m, 1.0).unwrap();
        assert!((current.i12 + 200.0).abs() < 1e-12);
        assert!((current.flux - 200.0).abs() < 1e-12);
        let r = reduced_density_matrix(&m).unwrap();
        let expected = [
            [C64::new(0.5, 0.0), C64::new(0.0, 0.5)],
            [C64::new(0.0, -0.5), C64::new(0.5, 0.0)],
        ];
        for i in 0..2 {
            for j in 0..2 {
                assert!((r.entries[i][j] - expected[i][j]).norm() < 1e-12);
            }
        }
        assert!(pseudo_entropy(&r, 1e-9).unwrap().abs() < 1e-6);
        assert!(hillery_zubairy_xi(&m).unwrap().abs() < 1e-9);
        for k in 0..12 {
            let t = k as f64 * 0.3;
            assert!((quadrature_variance(&m, Well::One, t).unwrap() - 1.0).abs() < 1e-9);
            assert!((duan_simon(&m, t).unwrap() - 4.0).abs() < 1e-9);
        }
    }

    #[test]
    fn config_b_classical_current_vanishes() {
        let m = with_two_samples(exact_coherent(C64::new(0.0, 0.0), C64::new(0.0, 10.0)));
        let current = current_i12(&m, 1.0).unwrap();
        assert_eq!(current.i12, 0.0);
        let (n1, n2) = populations(&m).unwrap();
        assert_eq!((n1, n2), (0.0, 100.0));
    }

    #[test]
    fn empty_accumulator_errors() {
        let m = Moments::default();
        assert_eq!(populations(&m), Err(ObservableError::Empty));
        assert_eq!(coherence_sigma12(&m), Err(ObservableError::Empty));
        assert_eq!(hillery_zubairy_xi(&m), Err(ObservableError::Empty));
        assert!(current_i12(&m, 1.0).is_err());
        let one = exact_coherent(C64::new(1.0, 0.0), C64::new(0.0, 0.0));
        assert_eq!(
            quadrature_variance(&one, Well::One, 0.0),
            Err(ObservableError::InsufficientSamples(1))
        );
        assert!(min_quadrature_scan(&one, Well::One, &AngleGrid::default()).is_err());
        assert_eq!(
            min_scan(&AngleGrid::new(0.0), |t| t),
            Err(ObservableError::EmptyGrid)
        );
    }

    #[test]
    fn zero_population_rdm_errors() {
        let m = with_two_samples(exact_coherent(C64::new(0.0, 0.0), C64::new(0.0, 0.0)));
        assert!(matches!(
            reduced_density_matrix(&m),
            Err(ObservableError::ZeroPopulation(_))
        ));
        assert!(max_entropy_reference(0.0, 0.0).is_err());
    }

    #[test]
    fn entropy_values() {
        let half = ReducedDensityMatrix::from_parts(0.5, 0.5, C64::new(0.0, 0.0)).unwrap();
        assert!((pseudo_entropy(&half, 1e-9).unwrap() - 0.6931).abs() < 1e-4);
        let pure = ReducedDensityMatrix::from_parts(0.5, 0.5, C64::new(0.0, 0.5)).unwrap();
        assert!(pseudo_entropy(&pure, 1e-9).unwrap().abs() < 1e-12);
        let skew = ReducedDensityMatrix::from_parts(0.64, 0.36, C64::new(0.0, 0.0)).unwrap();
        assert!((pseudo_entropy(&skew, 1e-9).unwrap() - 0.6534).abs() < 1e-4);
        let bad = ReducedDensityMatrix::from_parts(0.5, 0.5, C64::new(0.9, 0.0)).unwrap();
        assert!(matches!(
            pseudo_entropy(&bad, 0.05),
            Err(ObservableError::Eigenvalue(..))
        ));
    }

    #[test]
    fn max_entropy_reference_values() {
        assert!((max_entropy_reference(100.0, 100.0).unwrap() - 0.6931).abs() < 1e-4);
        assert!((max_entropy_reference(4.0, 96.0).unwrap() - 0.17).abs() < 5e-3);
        assert!((max_entropy_reference(57.0, 43.0).unwrap() - 0.68).abs() < 5e-3);
    }

    #[test]
    fn flat_scan_reports_first_angle() {
        let m = with_two_samples(exact_coherent(C64::new(3.0, 1.0), C64::new(0.0, 0.0)));
        let min = min_quadrature_scan(&m, Well::Two, &AngleGrid::default()).unwrap();
        assert!((min.value - 1.0).abs() < 1e-12);
        assert_eq!(min.theta_deg, 0.0);
    }

    #[test]
    fn scan_refines_between_grid_points() {
        let target = 37.3_f64.to_radians();
        let min = min_scan(&AngleGrid::default(), |t| {
            1.0 - 0.3 * (2.0 * (t - target)).cos()
        })
        .unwrap();
        assert!((min.theta_deg - 37.3).abs() < 0.01, "{}", min.theta_deg);
        assert!((min.value - 0.7).abs() < 1e-6);
        // Wraps through 0°.
        let target = 179.6_f64.to_radians();
        let min = min_scan(&AngleGrid::default(), |t| 2.0 - (2.0 * (t - target)).cos()).unwrap();
        assert!((min.theta_deg - 179.6).abs() < 0.01, "{}", min.theta_deg);
    }

    /// Squeezed vacuum in well 1 with squeezing parameter r along angle φ:
    /// `V(X(θ)) = e^{-2r} cos²(θ-φ) + e^{2r} sin²(θ-φ)`.
    #[test]
    fn squeezed_gaussian_minimum() {
        let (r, phi) = (0.3_f64, 0.7_f64);
        let mut rng = stream_for(SeedSpec::new(77, 0));
        let mut m = Moments::default();
        let rot = C64::from_polar(1.0, phi);
        for _ in 0..200_000 {
            let v = sample_vacuum(&mut rng).alpha1;
            let squeezed = C64::new(v.re * (-r).exp(), v.im * r.exp()) * rot;
            m.push(&TrajectoryState::new(squeezed, C64::new(0.0, 0.0)));
        }
        let min = min_quadrature_scan(&m, Well::One, &AngleGrid::default()).unwrap();
        assert!((min.value - (-2.0 * r).exp()).abs() < 0.01);
        assert!((min.theta_deg - phi.to_degrees()).abs() < 1.0);
    }

    /// Literal symmetric-ordering translation: `⟨n1 n2⟩ = W[(|α1|²−½)(|α2|²−½)]`
    /// expanded term by term, since the modes commute.
    fn xi_by_translation(m: &Moments) -> f64 {
        let w11 = m.mean_norm_sqr(Well::One);
        let w22 = m.mean_norm_sqr(Well::Two);
        let n1n2 = m.mean_n1n2() - 0.5 * w11 - 0.5 * w22 + 0.25;
        let a1dag_a2 = m.mean_cross();
        let a1_a2dag = m.mean_cross().conj();
        (a1dag_a2 * a1_a2dag).re - n1n2
    }

    fn arb_moments() -> impl Strategy<Value = Moments> {
        let c = || (-5.0f64..5.0, -5.0f64..5.0).prop_map(|(a, b)| C64::new(a, b));
        (
            c(),
            c(),
            c(),
            c(),
            0.0f64..30.0,
            0.0f64..30.0,
            c(),
            c(),
            0.0f64..500.0,
            2u64..1000,
        )
            .prop_map(|(a1, a2, q1, q2, n1, n2, x, p, nn, n)| {
                let k = n as f64;
                Moments {
                    n_samples: n,
                    s_a1: a1 * k,
                    s_a2: a2 * k,
                    s_a1sq: q1 * k,
                    s_a2sq: q2 * k,
                    s_n1: n1 * k,
                    s_n2: n2 * k,
                    s_cross: x * k,
                    s_a1a2: p * k,
                    s_n1n2: nn * k,
                }
            })
    }

    fn arb_ensemble() -> impl Strategy<Value = Moments> {
        (proptest::collection::vec(
            (-4.0f64..4.0, -4.0f64..4.0, -4.0f64..4.0, -4.0f64..4.0),
            2..40,
        ),)
            .prop_map(|(v,)| {
                Moments::from_states(
                    v.iter()
                        .map(|&(a, b, c, d)| TrajectoryState::new(C64::new(a, b), C64::new(c, d)))
                        .collect::<Vec<_>>()
                        .iter(),
                )
            })
    }

    proptest! {
        #[test]
        fn xi_matches_translation(m in arb_moments()) {
            let a = hillery_zubairy_xi(&m).unwrap();
            let b = xi_by_translation(&m);
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }

        #[test]
        fn variances_are_pi_periodic(m in arb_ensemble(), theta in 0.0f64..6.3) {
            for well in [Well::One, Well::Two] {
                let a = quadrature_variance(&m, well, theta).unwrap();
                let b = quadrature_variance(&m, well, theta + PI).unwrap();
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            }
            let a = duan_simon(&m, theta).unwrap();
            let b = duan_simon(&m, theta + PI).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }

        #[test]
        fn sample_moments_obey_cauchy_schwarz(m in arb_ensemble()) {
            let s = coherence_sigma12(&m).unwrap();
            let bound = (m.mean_norm_sqr(Well::One) * m.mean_norm_sqr(Well::Two)).sqrt();
            prop_assert!(s <= bound * (1.0 + 1e-12) + 1e-12);
            // Sample variances of any linear functional are non-negative.
            for k in 0..8 {
                let t = k as f64 * 0.4;
                prop_assert!(quadrature_variance(&m, Well::One, t).unwrap() >= -1e-9);
                prop_assert!(duan_simon(&m, t).unwrap() >= -1e-9);
            }
        }

        #[test]
        fn entropy_bounds(n1 in 1e-3f64..100.0, n2 in 1e-3f64..100.0, frac in 0.0f64..1.0, phase in 0.0f64..6.3) {
            let c = C64::from_polar(frac * (n1 * n2).sqrt(), phase);
            let r = ReducedDensityMatrix::from_parts(n1, n2, c).unwrap();
            prop_assert!((r.trace() - 1.0).abs() < 1e-12);
            let s = pseudo_entropy(&r, 1e-9).unwrap();
            let smax = max_entropy_reference(n1, n2).unwrap();
            prop_assert!(s >= -1e-12);
            prop_assert!(s <= smax + 1e-12);
            prop_assert!(smax <= LN_2 + 1e-12);
        }
    }
}
