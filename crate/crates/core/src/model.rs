//! System parameters, the deterministic drift of the two configurations, and
//! the steady-state references used to validate the stochastic engine.
//!
//! Amplitudes are measured in units where `J` sets the time scale. The
//! quadrature coordinates used by the linear oracle are `x = 2 Re α` and
//! `y = 2 Im α`, so that the vacuum variance of every quadrature is one.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix4, SMatrix, SVector, Vector4};
use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;

const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parameter `{name}` out of domain: {value} ({reason})")]
    Domain {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("no closed form for chi = {0}; use meanfield_fixed_point")]
    NoClosedForm(f64),
    #[error("linear oracle requires chi = 0, got {0}")]
    NonlinearOracle(f64),
    #[error("linearised drift is not Hurwitz (max real eigenvalue {0}); no steady covariance")]
    NotHurwitz(f64),
    #[error(
        "Newton iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("degenerate Jacobian at iteration {0}")]
    DegenerateJacobian(usize),
}

/// Which well carries the loss. The pump always feeds well 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Configuration {
    /// Pumping at well 1, loss at well 2.
    #[default]
    PumpWell1LossWell2,
    /// Pumping and loss both at well 1.
    PumpWell1LossWell1,
}

/// One of the two wells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Well {
    One,
    Two,
}

impl Configuration {
    pub fn damped_well(self) -> Well {
        match self {
            Configuration::PumpWell1LossWell2 => Well::Two,
            Configuration::PumpWell1LossWell1 => Well::One,
        }
    }

    /// Short label used on the command line and in output files.
    pub fn label(self) -> &'static str {
        match self {
            Configuration::PumpWell1LossWell2 => "A",
            Configuration::PumpWell1LossWell1 => "B",
        }
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Configuration {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(Configuration::PumpWell1LossWell2),
            "B" | "b" => Ok(Configuration::PumpWell1LossWell1),
            other => Err(format!("unknown configuration `{other}` (expected A or B)")),
        }
    }
}

/// Physical constants of the dimer. All rates are in the same units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    pub chi: f64,
    pub j_tunnel: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub config: Configuration,
    /// Phase of the pump amplitude in radians; zero unless set explicitly.
    pub pump_phase: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        SystemParams {
            chi: 0.0,
            j_tunnel: 1.0,
            epsilon: 10.0,
            gamma: 1.0,
            config: Configuration::PumpWell1LossWell2,
            pump_phase: 0.0,
        }
    }
}

impl SystemParams {
    pub fn new(
        chi: f64,
        j_tunnel: f64,
        epsilon: f64,
        gamma: f64,
        config: Configuration,
    ) -> Result<Self, ModelError> {
        let params = SystemParams {
            chi,
            j_tunnel,
            epsilon,
            gamma,
            config,
            pump_phase: 0.0,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let check = |name: &'static str, value: f64, ok: bool, reason: &'static str| {
            if !value.is_finite() {
                Err(ModelError::Domain {
                    name,
                    value,
                    reason: "must be finite",
                })
            } else if !ok {
                Err(ModelError::Domain {
                    name,
                    value,
                    reason,
                })
            } else {
                Ok(())
            }
        };
        check("chi", self.chi, self.chi >= 0.0, "must be >= 0")?;
        check("tunnel", self.j_tunnel, self.j_tunnel > 0.0, "must be > 0")?;
        check("epsilon", self.epsilon, self.epsilon >= 0.0, "must be >= 0")?;
        check("gamma", self.gamma, self.gamma >= 0.0, "must be >= 0")?;
        check("pump_phase", self.pump_phase, true, "")?;
        Ok(())
    }

    /// Complex pump amplitude `ε e^{iφ}`.
    pub fn pump(&self) -> C64 {
        C64::from_polar(self.epsilon, self.pump_phase)
    }

    pub fn with_chi(mut self, chi: f64) -> Self {
        self.chi = chi;
        self
    }

    pub fn with_config(mut self, config: Configuration) -> Self {
        self.config = config;
        self
    }
}

/// Complex amplitudes of the two wells for a single trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrajectoryState {
    pub alpha1: C64,
    pub alpha2: C64,
}

impl TrajectoryState {
    pub const fn new(alpha1: C64, alpha2: C64) -> Self {
        TrajectoryState { alpha1, alpha2 }
    }

    pub fn is_finite(&self) -> bool {
        self.alpha1.is_finite() && self.alpha2.is_finite()
    }

    /// Largest squared modulus of the two amplitudes.
    pub fn max_norm_sqr(&self) -> f64 {
        self.alpha1.norm_sqr().max(self.alpha2.norm_sqr())
    }

    /// Euclidean norm over both complex components.
    pub fn norm(&self) -> f64 {
        (self.alpha1.norm_sqr() + self.alpha2.norm_sqr()).sqrt()
    }

    pub fn scale_add(&self, rhs: &TrajectoryState, factor: f64) -> TrajectoryState {
        TrajectoryState {
            alpha1: self.alpha1 + rhs.alpha1 * factor,
            alpha2: self.alpha2 + rhs.alpha2 * factor,
        }
    }

    fn to_real(self) -> Vector4<f64> {
        Vector4::new(
            self.alpha1.re,
            self.alpha1.im,
            self.alpha2.re,
            self.alpha2.im,
        )
    }

    fn from_real(v: &Vector4<f64>) -> Self {
        TrajectoryState::new(C64::new(v[0], v[1]), C64::new(v[2], v[3]))
    }
}

/// Drift coefficients with the pump amplitude resolved once.
#[derive(Debug, Clone, Copy)]
pub struct Drift {
    pump: C64,
    kerr: f64,
    j_tunnel: f64,
    gamma: f64,
    damped: Well,
}

impl Drift {
    pub fn new(params: &SystemParams) -> Self {
        Drift {
            pump: params.pump(),
            kerr: -2.0 * params.chi,
            j_tunnel: params.j_tunnel,
            gamma: params.gamma,
            damped: params.config.damped_well(),
        }
    }

    #[inline]
    pub fn eval(&self, state: &TrajectoryState) -> TrajectoryState {
        let TrajectoryState { alpha1, alpha2 } = *state;
        let mut d1 =
            self.pump + I * (self.kerr * alpha1.norm_sqr() * alpha1 + self.j_tunnel * alpha2);
        let mut d2 = I * (self.kerr * alpha2.norm_sqr() * alpha2 + self.j_tunnel * alpha1);
        match self.damped {
            Well::One => d1 -= self.gamma * alpha1,
            Well::Two => d2 -= self.gamma * alpha2,
        }
        TrajectoryState::new(d1, d2)
    }
}

/// Deterministic part of the Itô equations, `dα/dt` without noise.
pub fn drift(state: &TrajectoryState, params: &SystemParams) -> TrajectoryState {
    Drift::new(params).eval(state)
}

/// Closed-form steady state of the non-interacting system.
pub fn classical_steady_state(params: &SystemParams) -> Result<TrajectoryState, ModelError> {
    params.validate()?;
    if params.chi != 0.0 {
        return Err(ModelError::NoClosedForm(params.chi));
    }
    let j = params.j_tunnel;
    let pump = params.pump();
    let alpha2 = I * pump / j;
    let alpha1 = match params.config {
        Configuration::PumpWell1LossWell2 => params.gamma * pump / (j * j),
        Configuration::PumpWell1LossWell1 => C64::new(0.0, 0.0),
    };
    Ok(TrajectoryState::new(alpha1, alpha2))
}

/// Tunables for the damped Newton solve.
#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tolerance: 1e-10,
            max_iterations: 200,
            max_halvings: 40,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedPoint {
    pub state: TrajectoryState,
    pub residual: f64,
    pub iterations: usize,
}

/// Jacobian of the drift in the real coordinates `(Re α1, Im α1, Re α2, Im α2)`.
fn drift_jacobian(state: &TrajectoryState, params: &SystemParams) -> Matrix4<f64> {
    let chi = params.chi;
    let j = params.j_tunnel;
    // -2iχ|α|²α in real form: (2χ r² y, -2χ r² x).
    let kerr_block = |a: C64| {
        let (x, y) = (a.re, a.im);
        SMatrix::<f64, 2, 2>::new(
            4.0 * chi * x * y,
            2.0 * chi * (x * x + 3.0 * y * y),
            -2.0 * chi * (3.0 * x * x + y * y),
            -4.0 * chi * x * y,
        )
    };
    let mut jac = Matrix4::zeros();
    jac.fixed_view_mut::<2, 2>(0, 0)
        .copy_from(&kerr_block(state.alpha1));
    jac.fixed_view_mut::<2, 2>(2, 2)
        .copy_from(&kerr_block(state.alpha2));
    // iJ times the other well: (-J y, J x).
    let tunnel = SMatrix::<f64, 2, 2>::new(0.0, -j, j, 0.0);
    jac.fixed_view_mut::<2, 2>(0, 2).copy_from(&tunnel);
    jac.fixed_view_mut::<2, 2>(2, 0).copy_from(&tunnel);
    let offset = match params.config.damped_well() {
        Well::One => 0,
        Well::Two => 2,
    };
    jac[(offset, offset)] -= params.gamma;
    jac[(offset + 1, offset + 1)] -= params.gamma;
    jac
}

/// Root of the deterministic drift found by damped Newton iteration.
///
/// The returned root is whichever one the guess converges to; uniqueness is
/// not claimed.
pub fn meanfield_fixed_point(
    params: &SystemParams,
    guess: TrajectoryState,
    options: NewtonOptions,
) -> Result<FixedPoint, ModelError> {
    params.validate()?;
    let mut x = guess.to_real();
    let residual_of = |v: &Vector4<f64>| drift(&TrajectoryState::from_real(v), params).to_real();
    let mut f = residual_of(&x);
    let mut norm = f.norm();
    for iteration in 0..options.max_iterations {
        if norm < options.tolerance {
            return Ok(FixedPoint {
                state: TrajectoryState::from_real(&x),
                residual: norm,
                iterations: iteration,
            });
        }
        let jac = drift_jacobian(&TrajectoryState::from_real(&x), params);
        let delta = jac
            .lu()
            .solve(&(-f))
            .filter(|d| d.iter().all(|c| c.is_finite()))
            .ok_or(ModelError::DegenerateJacobian(iteration))?;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=options.max_halvings {
            let trial = x + delta * step;
            let f_trial = residual_of(&trial);
            let trial_norm = f_trial.norm();
            if trial_norm < norm {
                x = trial;
                f = f_trial;
                norm = trial_norm;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(ModelError::NoConvergence {
                iterations: iteration,
                residual: norm,
            });
        }
    }
    if norm < options.tolerance {
        return Ok(FixedPoint {
            state: TrajectoryState::from_real(&x),
            residual: norm,
            iterations: options.max_iterations,
        });
    }
    Err(ModelError::NoConvergence {
        iterations: options.max_iterations,
        residual: norm,
    })
}

/// Exact steady moments of the non-interacting system.
#[derive(Debug, Clone)]
pub struct LinearOracle {
    pub means: TrajectoryState,
    /// Symmetric covariance of `(x1, y1, x2, y2)` with `x = 2 Re α`, `y = 2 Im α`.
    pub covariance: Matrix4<f64>,
    /// Drift matrix in the same coordinates.
    pub drift_matrix: Matrix4<f64>,
    /// Diffusion matrix in the same coordinates.
    pub diffusion: Matrix4<f64>,
}

impl LinearOracle {
    /// Mean amplitudes at time `t` for a trajectory started from `initial`.
    pub fn mean_at(&self, initial: TrajectoryState, t: f64) -> TrajectoryState {
        let ss = self.means.to_real();
        let offset = initial.to_real() - ss;
        let propagated = (self.drift_matrix * t).exp() * offset;
        TrajectoryState::from_real(&(ss + propagated))
    }

    /// Variance of `X_j(θ) = a_j e^{-iθ} + h.c.` at steady state.
    pub fn quadrature_variance(&self, well: Well, theta: f64) -> f64 {
        let offset = match well {
            Well::One => 0,
            Well::Two => 2,
        };
        let mut v = Vector4::zeros();
        v[offset] = theta.cos();
        v[offset + 1] = theta.sin();
        (v.transpose() * self.covariance * v)[(0, 0)]
    }
}

/// Steady means and covariance of the linear (χ = 0) problem.
///
/// Solves `A C + C Aᵀ + D = 0` by vectorisation; `D` carries `2γ` on both
/// quadratures of the damped well.
pub fn linear_covariance_oracle(params: &SystemParams) -> Result<LinearOracle, ModelError> {
    params.validate()?;
    if params.chi != 0.0 {
        return Err(ModelError::NonlinearOracle(params.chi));
    }
    let drift_matrix = drift_jacobian(&TrajectoryState::default(), params);
    let max_re = drift_matrix
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(max_re < -1e-12) {
        return Err(ModelError::NotHurwitz(max_re));
    }
    let offset = match params.config.damped_well() {
        Well::One => 0,
        Well::Two => 2,
    };
    let mut diffusion = Matrix4::zeros();
    diffusion[(offset, offset)] = 2.0 * params.gamma;
    diffusion[(offset + 1, offset + 1)] = 2.0 * params.gamma;

    // vec(A C + C Aᵀ) = (I ⊗ A + A ⊗ I) vec(C) in column-major order.
    let mut kron = SMatrix::<f64, 16, 16>::zeros();
    for r in 0..4 {
        for c in 0..4 {
            for k in 0..4 {
                // I ⊗ A
                kron[(4 * k + r, 4 * k + c)] += drift_matrix[(r, c)];
                // A ⊗ I
                kron[(4 * r + k, 4 * c + k)] += drift_matrix[(r, c)];
            }
        }
    }
    let rhs = -SVector::<f64, 16>::from_column_slice(diffusion.as_slice());
    let solution = kron
        .lu()
        .solve(&rhs)
        .ok_or(ModelError::NotHurwitz(max_re))?;
    let raw = Matrix4::from_column_slice(solution.as_slice());
    let covariance = (raw + raw.transpose()) * 0.5;
    Ok(LinearOracle {
        means: classical_steady_state(params)?,
        covariance,
        drift_matrix,
        diffusion,
    })
}
