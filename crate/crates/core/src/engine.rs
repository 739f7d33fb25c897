//! Euler–Maruyama integration of single trajectories and the parallel
//! ensemble that accumulates Wigner moments.
//!
//! Trajectory indices are split into a fixed number of contiguous batches.
//! Each batch is integrated sequentially into its own accumulator and the
//! batch accumulators are merged in batch order, so the floating-point
//! result does not depend on how many workers ran the batches.

use std::ops::Range;

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{Drift, ModelError, SystemParams, TrajectoryState, Well, C64};
use crate::sampler::{sample_vacuum, stream_for, NoiseIncrement, NoiseSource, SeedSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("time grid `{name}` out of domain: {value}")]
    InvalidGrid { name: &'static str, value: f64 },
    #[error("accumulators were recorded on different time grids")]
    GridMismatch,
    #[error("ensemble needs at least one trajectory")]
    EmptyEnsemble,
    #[error("need at least 2 batches for a standard error, got {0}")]
    InsufficientBatches(usize),
    #[error("worker pool failure: {0}")]
    Worker(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Integration step, final time and output spacing, all in units of `1/J`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub t_max: f64,
    pub output_stride: usize,
}

impl Default for TimeGrid {
    fn default() -> Self {
        TimeGrid {
            dt: 1e-3,
            t_max: 20.0,
            output_stride: 100,
        }
    }
}

impl TimeGrid {
    pub fn new(dt: f64, t_max: f64, output_stride: usize) -> Result<Self, EngineError> {
        let grid = TimeGrid {
            dt,
            t_max,
            output_stride,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(EngineError::InvalidGrid {
                name: "dt",
                value: self.dt,
            });
        }
        if !(self.t_max.is_finite() && self.t_max >= self.dt) {
            return Err(EngineError::InvalidGrid {
                name: "tmax",
                value: self.t_max,
            });
        }
        if self.output_stride == 0 {
            return Err(EngineError::InvalidGrid {
                name: "stride",
                value: 0.0,
            });
        }
        let steps = (self.t_max / self.dt).round();
        if steps >= u32::MAX as f64 {
            return Err(EngineError::InvalidGrid {
                name: "tmax",
                value: self.t_max,
            });
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }

    /// Number of recorded times, including `t = 0`.
    pub fn n_outputs(&self) -> usize {
        self.n_steps() / self.output_stride + 1
    }

    pub fn output_time(&self, index: usize) -> f64 {
        (index * self.output_stride) as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_outputs()).map(|k| self.output_time(k)).collect()
    }

    /// Output indices whose times fall inside `[t_lo, t_hi]`.
    pub fn window(&self, t_lo: f64, t_hi: f64) -> Range<usize> {
        let slack = 0.5 * self.dt;
        let times = self.times();
        let start = times
            .iter()
            .position(|&t| t >= t_lo - slack)
            .unwrap_or(times.len());
        let end = times
            .iter()
            .rposition(|&t| t <= t_hi + slack)
            .map_or(0, |k| k + 1);
        start..end.max(start)
    }

    /// Same physical times with the step halved.
    pub fn refined(&self) -> TimeGrid {
        TimeGrid {
            dt: self.dt * 0.5,
            t_max: self.t_max,
            output_stride: self.output_stride * 2,
        }
    }
}

/// Raw Wigner moment sums at one output time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Moments {
    pub n_samples: u64,
    pub s_a1: C64,
    pub s_a2: C64,
    pub s_a1sq: C64,
    pub s_a2sq: C64,
    pub s_n1: f64,
    pub s_n2: f64,
    /// Sum of `α1* α2`.
    pub s_cross: C64,
    pub s_a1a2: C64,
    pub s_n1n2: f64,
}

impl Moments {
    #[inline]
    pub fn push(&mut self, state: &TrajectoryState) {
        let TrajectoryState { alpha1, alpha2 } = *state;
        let n1 = alpha1.norm_sqr();
        let n2 = alpha2.norm_sqr();
        self.n_samples += 1;
        self.s_a1 += alpha1;
        self.s_a2 += alpha2;
        self.s_a1sq += alpha1 * alpha1;
        self.s_a2sq += alpha2 * alpha2;
        self.s_n1 += n1;
        self.s_n2 += n2;
        self.s_cross += alpha1.conj() * alpha2;
        self.s_a1a2 += alpha1 * alpha2;
        self.s_n1n2 += n1 * n2;
    }

    pub fn merge(&self, other: &Moments) -> Moments {
        Moments {
            n_samples: self.n_samples + other.n_samples,
            s_a1: self.s_a1 + other.s_a1,
            s_a2: self.s_a2 + other.s_a2,
            s_a1sq: self.s_a1sq + other.s_a1sq,
            s_a2sq: self.s_a2sq + other.s_a2sq,
            s_n1: self.s_n1 + other.s_n1,
            s_n2: self.s_n2 + other.s_n2,
            s_cross: self.s_cross + other.s_cross,
            s_a1a2: self.s_a1a2 + other.s_a1a2,
            s_n1n2: self.s_n1n2 + other.s_n1n2,
        }
    }

    pub fn from_states<'a>(states: impl IntoIterator<Item = &'a TrajectoryState>) -> Moments {
        let mut m = Moments::default();
        for s in states {
            m.push(s);
        }
        m
    }

    pub fn is_empty(&self) -> bool {
        self.n_samples == 0
    }

    fn inv_n(&self) -> f64 {
        1.0 / self.n_samples as f64
    }

    pub fn mean_alpha(&self, well: Well) -> C64 {
        match well {
            Well::One => self.s_a1 * self.inv_n(),
            Well::Two => self.s_a2 * self.inv_n(),
        }
    }

    pub fn mean_alpha_sq(&self, well: Well) -> C64 {
        match well {
            Well::One => self.s_a1sq * self.inv_n(),
            Well::Two => self.s_a2sq * self.inv_n(),
        }
    }

    pub fn mean_norm_sqr(&self, well: Well) -> f64 {
        match well {
            Well::One => self.s_n1 * self.inv_n(),
            Well::Two => self.s_n2 * self.inv_n(),
        }
    }

    /// Mean of `α1* α2`.
    pub fn mean_cross(&self) -> C64 {
        self.s_cross * self.inv_n()
    }

    pub fn mean_a1a2(&self) -> C64 {
        self.s_a1a2 * self.inv_n()
    }

    pub fn mean_n1n2(&self) -> f64 {
        self.s_n1n2 * self.inv_n()
    }
}

/// Moment sums at every output time of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    grid: TimeGrid,
    moments: Vec<Moments>,
}

impl MomentAccumulator {
    pub fn empty(grid: TimeGrid) -> Self {
        MomentAccumulator {
            grid,
            moments: vec![Moments::default(); grid.n_outputs()],
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn moments(&self) -> &[Moments] {
        &self.moments
    }

    pub fn at(&self, index: usize) -> &Moments {
        &self.moments[index]
    }

    pub fn len(&self) -> usize {
        self.moments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moments.is_empty()
    }

    /// Samples per recorded time; equal across times by construction.
    pub fn n_samples(&self) -> u64 {
        self.moments.first().map_or(0, |m| m.n_samples)
    }

    /// Adds one trajectory recorded at every output time.
    pub fn push_trajectory(&mut self, samples: &[TrajectoryState]) {
        debug_assert_eq!(samples.len(), self.moments.len());
        for (m, s) in self.moments.iter_mut().zip(samples) {
            m.push(s);
        }
    }

    pub fn merge(&self, other: &MomentAccumulator) -> Result<MomentAccumulator, EngineError> {
        merge_accumulators(self, other)
    }
}

pub fn merge_accumulators(
    a: &MomentAccumulator,
    b: &MomentAccumulator,
) -> Result<MomentAccumulator, EngineError> {
    if a.grid != b.grid || a.moments.len() != b.moments.len() {
        return Err(EngineError::GridMismatch);
    }
    Ok(MomentAccumulator {
        grid: a.grid,
        moments: a
            .moments
            .iter()
            .zip(&b.moments)
            .map(|(x, y)| x.merge(y))
            .collect(),
    })
}

/// Knobs of the stochastic integration that are not physical parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineOptions {
    /// A trajectory with `|α| >` this value is rejected.
    pub divergence_guard: f64,
    /// Above this rejected fraction the ensemble is flagged invalid.
    pub max_rejection_fraction: f64,
    pub n_batches: usize,
    /// Multiplier on the noise amplitude; 1 for physical runs.
    pub noise_scale: f64,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            divergence_guard: 1e6,
            max_rejection_fraction: 1e-4,
            n_batches: 32,
            noise_scale: 1.0,
        }
    }
}

/// A trajectory left the divergence guard.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("trajectory diverged at step {step}")]
pub struct Divergence {
    pub step: usize,
}

/// Fixed-step Euler–Maruyama integrator for one parameter set.
#[derive(Debug, Clone, Copy)]
pub struct Integrator {
    drift: Drift,
    noise: NoiseSource,
    damped: Well,
    dt: f64,
    guard_sqr: f64,
}

impl Integrator {
    pub fn new(params: &SystemParams, dt: f64, options: &EngineOptions) -> Self {
        Integrator {
            drift: Drift::new(params),
            noise: NoiseSource::new(dt, params.gamma).scaled(options.noise_scale),
            damped: params.config.damped_well(),
            dt,
            guard_sqr: options.divergence_guard * options.divergence_guard,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn noise(&self) -> &NoiseSource {
        &self.noise
    }

    /// One explicit step with a given increment on the damped well.
    #[inline]
    pub fn step_with(&self, state: &TrajectoryState, noise: NoiseIncrement) -> TrajectoryState {
        let mut next = state.scale_add(&self.drift.eval(state), self.dt);
        match self.damped {
            Well::One => next.alpha1 += noise.dw,
            Well::Two => next.alpha2 += noise.dw,
        }
        next
    }

    #[inline]
    pub fn within_guard(&self, state: &TrajectoryState) -> bool {
        state.max_norm_sqr() <= self.guard_sqr
    }

    #[inline]
    pub fn step<R: rand::Rng + ?Sized>(
        &self,
        state: &TrajectoryState,
        rng: &mut R,
    ) -> TrajectoryState {
        self.step_with(state, self.noise.draw(rng))
    }
}

/// One Euler–Maruyama step with default engine options.
pub fn step<R: rand::Rng + ?Sized>(
    state: &TrajectoryState,
    params: &SystemParams,
    dt: f64,
    rng: &mut R,
) -> Result<TrajectoryState, Divergence> {
    let integrator = Integrator::new(params, dt, &EngineOptions::default());
    let next = integrator.step(state, rng);
    if integrator.within_guard(&next) {
        Ok(next)
    } else {
        Err(Divergence { step: 0 })
    }
}

/// Trajectories advanced in lock-step inside a batch. Their update chains
/// are independent, which lets the CPU overlap them.
const LANES: usize = 8;

/// Integrates up to [`LANES`] trajectories side by side. On return
/// `samples[i]` holds trajectory `i` at every output time, and the result
/// flags the lanes that left the divergence guard.
fn integrate_group(
    integrator: &Integrator,
    grid: &TimeGrid,
    seeds: &[SeedSpec],
    samples: &mut [Vec<TrajectoryState>],
) -> [Option<Divergence>; LANES] {
    let n = seeds.len();
    assert!(n <= LANES && samples.len() >= n);
    let mut rngs: Vec<_> = seeds.iter().map(|&s| stream_for(s)).collect();
    let mut states = [TrajectoryState::default(); LANES];
    let mut diverged = [None; LANES];
    for lane in 0..n {
        states[lane] = sample_vacuum(&mut rngs[lane]);
        samples[lane].clear();
        samples[lane].push(states[lane]);
    }
    let stride = grid.output_stride;
    let mut countdown = stride;
    for k in 1..=grid.n_steps() {
        for (state, rng) in states[..n].iter_mut().zip(rngs.iter_mut()) {
            *state = integrator.step(state, rng);
        }
        for lane in 0..n {
            if !integrator.within_guard(&states[lane]) {
                diverged[lane].get_or_insert(Divergence { step: k });
                states[lane] = TrajectoryState::default();
            }
        }
        countdown -= 1;
        if countdown == 0 {
            for lane in 0..n {
                samples[lane].push(states[lane]);
            }
            countdown = stride;
        }
    }
    diverged
}

fn integrate_into(
    integrator: &Integrator,
    grid: &TimeGrid,
    seed: SeedSpec,
    samples: &mut Vec<TrajectoryState>,
) -> Result<(), Divergence> {
    match integrate_group(integrator, grid, &[seed], std::slice::from_mut(samples))[0] {
        Some(d) => Err(d),
        None => Ok(()),
    }
}

/// Integrates one trajectory from a vacuum draw, returning its state at every output time.
pub fn run_trajectory(
    params: &SystemParams,
    grid: &TimeGrid,
    seed: SeedSpec,
    options: &EngineOptions,
) -> Result<Vec<TrajectoryState>, Divergence> {
    let integrator = Integrator::new(params, grid.dt, options);
    let mut samples = Vec::with_capacity(grid.n_outputs());
    integrate_into(&integrator, grid, seed, &mut samples)?;
    Ok(samples)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleConfig {
    pub n_traj: u64,
    pub master_seed: u64,
    pub n_workers: usize,
}

/// Accumulated moments of a whole ensemble plus its batch partials.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleReport {
    pub params: SystemParams,
    pub config: EnsembleConfig,
    pub options: EngineOptions,
    pub total: MomentAccumulator,
    /// Batch accumulators in batch order; their merge is `total`.
    pub batches: Vec<MomentAccumulator>,
    pub rejected: u64,
}

impl EnsembleReport {
    pub fn grid(&self) -> &TimeGrid {
        self.total.grid()
    }

    pub fn rejection_fraction(&self) -> f64 {
        self.rejected as f64 / self.config.n_traj as f64
    }

    pub fn is_valid(&self) -> bool {
        self.total.n_samples() > 0
            && self.rejection_fraction() <= self.options.max_rejection_fraction
    }

    /// Batch partials at one output time.
    pub fn batch_moments(&self, index: usize) -> Vec<Moments> {
        self.batches.iter().map(|b| *b.at(index)).collect()
    }
}

fn batch_ranges(n_traj: u64, n_batches: usize) -> Vec<Range<u64>> {
    let n_batches = (n_batches.max(1) as u64).min(n_traj);
    (0..n_batches)
        .map(|b| (b * n_traj / n_batches)..((b + 1) * n_traj / n_batches))
        .collect()
}

fn build_pool(n_workers: usize) -> Result<rayon::ThreadPool, EngineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n_workers.max(1))
        .build()
        .map_err(|e| EngineError::Worker(e.to_string()))
}

fn check_inputs(
    params: &SystemParams,
    grid: &TimeGrid,
    config: &EnsembleConfig,
) -> Result<(), EngineError> {
    params.validate()?;
    grid.validate()?;
    if config.n_traj == 0 {
        return Err(EngineError::EmptyEnsemble);
    }
    Ok(())
}

fn reduce(batches: &[MomentAccumulator], grid: TimeGrid) -> Result<MomentAccumulator, EngineError> {
    batches
        .iter()
        .try_fold(MomentAccumulator::empty(grid), |acc, b| acc.merge(b))
}

/// Runs `n_traj` trajectories on `n_workers` threads.
pub fn run_ensemble(
    params: &SystemParams,
    grid: &TimeGrid,
    config: &EnsembleConfig,
    options: &EngineOptions,
) -> Result<EnsembleReport, EngineError> {
    check_inputs(params, grid, config)?;
    let integrator = Integrator::new(params, grid.dt, options);
    let ranges = batch_ranges(config.n_traj, options.n_batches);
    let pool = build_pool(config.n_workers)?;
    let results: Vec<(MomentAccumulator, u64)> = pool.install(|| {
        ranges
            .par_iter()
            .map(|range| {
                let mut acc = MomentAccumulator::empty(*grid);
                let mut rejected = 0;
                let mut samples: Vec<Vec<TrajectoryState>> = (0..LANES)
                    .map(|_| Vec::with_capacity(grid.n_outputs()))
                    .collect();
                let mut seeds = Vec::with_capacity(LANES);
                let mut next = range.start;
                while next < range.end {
                    let end = (next + LANES as u64).min(range.end);
                    seeds.clear();
                    seeds.extend((next..end).map(|i| SeedSpec::new(config.master_seed, i)));
                    let diverged = integrate_group(&integrator, grid, &seeds, &mut samples);
                    for lane in 0..seeds.len() {
                        match diverged[lane] {
                            None => acc.push_trajectory(&samples[lane]),
                            Some(_) => rejected += 1,
                        }
                    }
                    next = end;
                }
                (acc, rejected)
            })
            .collect()
    });
    let rejected = results.iter().map(|(_, r)| r).sum();
    let batches: Vec<MomentAccumulator> = results.into_iter().map(|(a, _)| a).collect();
    let total = reduce(&batches, *grid)?;
    Ok(EnsembleReport {
        params: *params,
        config: *config,
        options: *options,
        total,
        batches,
        rejected,
    })
}

/// Runs the same trajectories at `dt` and `dt/2` driven by one Brownian path.
///
/// Each coarse increment is the sum of the two fine increments it spans, so
/// the difference between the two reports isolates the time discretisation
/// error. Returns `(coarse, fine)`, both recorded on the coarse output times.
pub fn run_refinement_pair(
    params: &SystemParams,
    grid: &TimeGrid,
    config: &EnsembleConfig,
    options: &EngineOptions,
) -> Result<(EnsembleReport, EnsembleReport), EngineError> {
    check_inputs(params, grid, config)?;
    let coarse = Integrator::new(params, grid.dt, options);
    let fine = Integrator::new(params, grid.dt * 0.5, options);
    let ranges = batch_ranges(config.n_traj, options.n_batches);
    let pool = build_pool(config.n_workers)?;
    let n_steps = grid.n_steps();
    let results: Vec<_> = pool.install(|| {
        ranges
            .par_iter()
            .map(|range| {
                let mut acc_c = MomentAccumulator::empty(*grid);
                let mut acc_f = MomentAccumulator::empty(*grid);
                let mut rejected = 0u64;
                let mut samples_c = Vec::with_capacity(grid.n_outputs());
                let mut samples_f = Vec::with_capacity(grid.n_outputs());
                'traj: for index in range.clone() {
                    let mut rng = stream_for(SeedSpec::new(config.master_seed, index));
                    let start = sample_vacuum(&mut rng);
                    let (mut sc, mut sf) = (start, start);
                    samples_c.clear();
                    samples_f.clear();
                    samples_c.push(sc);
                    samples_f.push(sf);
                    for k in 1..=n_steps {
                        let a = fine.noise().draw(&mut rng);
                        let b = fine.noise().draw(&mut rng);
                        sf = fine.step_with(&fine.step_with(&sf, a), b);
                        sc = coarse.step_with(&sc, NoiseIncrement { dw: a.dw + b.dw });
                        if !coarse.within_guard(&sc) || !fine.within_guard(&sf) {
                            rejected += 1;
                            continue 'traj;
                        }
                        if k % grid.output_stride == 0 {
                            samples_c.push(sc);
                            samples_f.push(sf);
                        }
                    }
                    acc_c.push_trajectory(&samples_c);
                    acc_f.push_trajectory(&samples_f);
                }
                (acc_c, acc_f, rejected)
            })
            .collect()
    });
    let rejected: u64 = results.iter().map(|r| r.2).sum();
    let (coarse_batches, fine_batches): (Vec<_>, Vec<_>) =
        results.into_iter().map(|(c, f, _)| (c, f)).unzip();
    let build =
        |batches: Vec<MomentAccumulator>, grid: TimeGrid| -> Result<EnsembleReport, EngineError> {
            Ok(EnsembleReport {
                params: *params,
                config: *config,
                options: *options,
                total: reduce(&batches, grid)?,
                batches,
                rejected,
            })
        };
    Ok((build(coarse_batches, *grid)?, build(fine_batches, *grid)?))
}

/// Batch-means standard error of an estimator evaluated on each batch.
pub fn standard_error<T, F>(partials: &[T], estimator: F) -> Result<f64, EngineError>
where
    F: Fn(&T) -> f64,
{
    let n = partials.len();
    if n < 2 {
        return Err(EngineError::InsufficientBatches(n));
    }
    let values: Vec<f64> = partials.iter().map(estimator).collect();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok((var / n as f64).sqrt())
}

/// Per-time standard errors of an observable over a report's batches.
pub fn standard_error_series<F>(
    report: &EnsembleReport,
    estimator: F,
) -> Result<Vec<f64>, EngineError>
where
    F: Fn(&Moments) -> f64,
{
    (0..report.total.len())
        .map(|k| standard_error(&report.batch_moments(k), &estimator))
        .collect()
}
