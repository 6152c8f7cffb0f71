//! Time integration of the coupled density–chemoattractant–vorticity system
//! in the rescaled frame, where the background shear enters as
//! `(1 - y^2) d/dx` with unit coefficient and every other term carries `1/A`.
//!
//! The step is a split one: the shear advection is applied exactly as a
//! per-mode phase rotation (it is diagonal in the Fourier–collocation
//! representation and costs nothing in accuracy or stability), and the
//! remaining stiff diffusion is taken implicitly per wavenumber while the
//! chemotaxis and fluid fluxes stay explicit. See [`Integrator`] for the
//! details and [`make_initial`] for the supported initial data.

mod checkpoint;
mod integrator;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagRecord;
use crate::elliptic::DensityBc;
use crate::error::{Error, Result};
use crate::grid::{ChannelGrid, PhysField};
use crate::scalar::Real;

pub use integrator::{Integrator, StepStatus, Tendency};

/// Time discretization of the non-advective part of the step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// First order: implicit Euler diffusion, explicit fluxes.
    Euler,
    /// Second order: implicit/explicit two-step backward differentiation,
    /// bootstrapped with one Euler step whenever no history exists.
    Sbdf2,
}

/// Physical and numerical parameters of a run.
///
/// `a` is the advection strength `A`: the simulation runs in rescaled time,
/// so diffusion, chemotaxis and fluid coupling all carry `1/a` while the
/// shear term has unit coefficient. `advection = false` recovers the system
/// with no background flow at all (no shear, no vorticity lift); combined
/// with `a = 1` that is the unrescaled classical system.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SimParams<T: Real> {
    pub a: T,
    pub advection: bool,
    pub chi1: T,
    pub chi2: T,
    pub bc: DensityBc,
    /// Exponential weight rate for the space-time norm accumulators.
    /// Weight rate for the time-weighted norms behind the energy report;
    /// defaults to half the calibrated decay constant.
    pub a_rate: T,
    pub dt: T,
    pub t_end: T,
    /// Advective CFL bound; each step requires `rate * dt <= cfl_safety`.
    pub cfl_safety: T,
    /// Terminate as blow-up when the density sup reaches this multiple of
    /// its initial value.
    pub blowup_factor: T,
    pub scheme: Scheme,
}

impl<T: Real> SimParams<T> {
    /// Construct from the raw advection strength: `raw_a = 0` selects the
    /// no-flow system (internally `a = 1`, `advection = false`); any value
    /// at least 1 enables the shear. Values in `(0, 1)` are rejected —
    /// the rescaling assumes strong advection.
    pub fn new(raw_a: T, chi1: T, chi2: T, bc: DensityBc) -> Result<Self> {
        let (a, advection) = if raw_a == T::zero() {
            (T::one(), false)
        } else if raw_a >= T::one() {
            (raw_a, true)
        } else {
            return Err(Error::Param {
                name: "a",
                reason: format!("must be 0 (no flow) or >= 1, got {}", raw_a.as_f64()),
            });
        };
        Ok(Self {
            a,
            advection,
            chi1,
            chi2,
            bc,
            a_rate: T::lit(crate::linanalysis::DEFAULT_A_RATE),
            dt: T::lit(1e-2),
            t_end: T::one(),
            cfl_safety: T::lit(0.8),
            blowup_factor: T::lit(1e2),
            scheme: Scheme::Euler,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: String| Err(Error::Param { name, reason });
        if !(self.a >= T::one()) {
            return bad("a", format!("must be >= 1, got {}", self.a.as_f64()));
        }
        if !(self.dt > T::zero()) || !self.dt.is_finite() {
            return bad("dt", format!("must be positive, got {}", self.dt.as_f64()));
        }
        if !(self.t_end >= T::zero()) || !self.t_end.is_finite() {
            return bad(
                "t_end",
                format!("must be non-negative, got {}", self.t_end.as_f64()),
            );
        }
        if !(self.cfl_safety > T::zero() && self.cfl_safety <= T::one()) {
            return bad(
                "cfl_safety",
                format!("must lie in (0, 1], got {}", self.cfl_safety.as_f64()),
            );
        }
        if !(self.blowup_factor > T::one()) {
            return bad(
                "blowup_factor",
                format!("must exceed 1, got {}", self.blowup_factor.as_f64()),
            );
        }
        if !(self.a_rate >= T::zero()) {
            return bad(
                "a_rate",
                format!("must be non-negative, got {}", self.a_rate.as_f64()),
            );
        }
        if !self.chi1.is_finite() || !self.chi2.is_finite() {
            return bad("chi", "sensitivities must be finite".into());
        }
        Ok(())
    }
}

/// Physical-space snapshot of the prognostic variables.
#[derive(Clone)]
pub struct SimState<T: Real> {
    pub t: T,
    pub n1: PhysField<T>,
    pub n2: PhysField<T>,
    pub omega: PhysField<T>,
    /// Mean streamwise flow deviation, one value per `y` node.
    pub u01: Vec<T>,
}

/// Why a run stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination<T: Real> {
    Completed,
    BlowUp { t: T, detail: String },
    NumericalInstability { t: T, detail: String },
}

/// Running extrema over every step of a trajectory.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Extrema<T: Real> {
    pub n1_min: T,
    pub n2_min: T,
    pub n1_linf: T,
    pub n2_linf: T,
    pub omega_linf: T,
}

impl<T: Real> Extrema<T> {
    pub(crate) fn empty() -> Self {
        Self {
            n1_min: T::max_value().unwrap(),
            n2_min: T::max_value().unwrap(),
            n1_linf: T::zero(),
            n2_linf: T::zero(),
            omega_linf: T::zero(),
        }
    }

    pub(crate) fn absorb(&mut self, other: &Self) {
        self.n1_min = self.n1_min.min(other.n1_min);
        self.n2_min = self.n2_min.min(other.n2_min);
        self.n1_linf = self.n1_linf.max(other.n1_linf);
        self.n2_linf = self.n2_linf.max(other.n2_linf);
        self.omega_linf = self.omega_linf.max(other.omega_linf);
    }
}

/// Everything a finished run reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Trajectory<T: Real> {
    pub samples: Vec<DiagRecord<T>>,
    pub termination: Termination<T>,
    pub extrema: Extrema<T>,
    /// Final space-time norms of the nonzero modes.
    pub xa_n1: T,
    pub xa_n2: T,
    pub xa_omega: T,
    /// Sum of the three space-time norms.
    pub energy: T,
    pub steps: u64,
    pub final_dt: T,
    pub dt_halvings: u32,
    /// Density sup of the initial data, the blow-up reference level.
    pub initial_linf: T,
}

/// One density bump: a Gaussian of the given total mass centered at
/// `(x0, y0)` with width `sigma`, wrapped periodically in `x` and multiplied
/// by a wall cutoff compatible with the boundary condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GaussianBump<T: Real> {
    pub mass: T,
    pub x0: T,
    pub y0: T,
    pub sigma: T,
}

/// One vorticity bump, specified by peak amplitude rather than mass.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct VorticityBump<T: Real> {
    pub amplitude: T,
    pub x0: T,
    pub y0: T,
    pub sigma: T,
}

/// Declarative initial data: bumps for the densities and the vorticity, a
/// quartic mean-flow deviation and optional seeded smooth vorticity noise.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct InitialData<T: Real> {
    pub n1_bumps: Vec<GaussianBump<T>>,
    pub n2_bumps: Vec<GaussianBump<T>>,
    pub omega_bumps: Vec<VorticityBump<T>>,
    pub u01_amplitude: T,
    pub noise_amplitude: T,
    pub noise_seed: u64,
}

fn wrapped_gaussian<T: Real>(x: T, y: T, x0: T, y0: T, sigma: T) -> T {
    let inv2s2 = T::one() / (T::lit(2.0) * sigma * sigma);
    let mut acc = T::zero();
    for m in -3i32..=3 {
        let dx = x - x0 + T::two_pi() * T::lit(m as f64);
        let dy = y - y0;
        acc += (-(dx * dx + dy * dy) * inv2s2).exp();
    }
    acc
}

fn wall_cutoff<T: Real>(y: T, bc: DensityBc) -> T {
    let p = T::one() - y * y;
    match bc {
        // vanishes at the walls
        DensityBc::Dirichlet => p,
        // vanishes to second order, so the normal derivative is zero too
        DensityBc::Neumann => p * p,
    }
}

fn check_bump_geometry<T: Real>(
    grid: &ChannelGrid<T>,
    x0: T,
    y0: T,
    sigma: T,
) -> Result<()> {
    let min_sigma = T::lit(2.0) * grid.dx().max(T::pi() / T::of_usize(grid.ny()));
    if !(sigma >= min_sigma) {
        return Err(Error::Param {
            name: "sigma",
            reason: format!(
                "bump width {} is below the resolution floor {} for this grid",
                sigma.as_f64(),
                min_sigma.as_f64()
            ),
        });
    }
    if !(y0.abs() < T::one()) {
        return Err(Error::Param {
            name: "y0",
            reason: format!("bump center must satisfy |y0| < 1, got {}", y0.as_f64()),
        });
    }
    if !x0.is_finite() {
        return Err(Error::Param {
            name: "x0",
            reason: "bump center must be finite".into(),
        });
    }
    Ok(())
}

/// Build an initial state from bump descriptions. Each density bump is
/// normalized on the grid so its quadrature mass matches the request
/// exactly; the wall cutoff keeps the fields compatible with the boundary
/// condition. The mean flow starts as `u01_amplitude * (1 - y^2)^2`, whose
/// derivative vanishes at the walls.
pub fn make_initial<T: Real>(
    grid: &Arc<ChannelGrid<T>>,
    bc: DensityBc,
    init: &InitialData<T>,
) -> Result<SimState<T>> {
    let mut n1 = PhysField::zeros(grid);
    let mut n2 = PhysField::zeros(grid);
    for (field, bumps) in [(&mut n1, &init.n1_bumps), (&mut n2, &init.n2_bumps)] {
        for b in bumps.iter() {
            check_bump_geometry(grid.as_ref(), b.x0, b.y0, b.sigma)?;
            if !(b.mass > T::zero()) {
                return Err(Error::Param {
                    name: "mass",
                    reason: format!("bump mass must be positive, got {}", b.mass.as_f64()),
                });
            }
            let raw = PhysField::from_fn(grid, |x, y| {
                wall_cutoff(y, bc) * wrapped_gaussian(x, y, b.x0, b.y0, b.sigma)
            });
            let raw_mass = raw.integral();
            if !(raw_mass > T::default_epsilon().sqrt()) {
                return Err(Error::Param {
                    name: "sigma",
                    reason: "bump carries no mass on this grid (too close to a wall?)".into(),
                });
            }
            field.add_scaled(&raw, b.mass / raw_mass)?;
        }
    }

    let mut omega = PhysField::zeros(grid);
    for b in &init.omega_bumps {
        check_bump_geometry(grid.as_ref(), b.x0, b.y0, b.sigma)?;
        let raw = PhysField::from_fn(grid, |x, y| {
            (T::one() - y * y) * wrapped_gaussian(x, y, b.x0, b.y0, b.sigma)
        });
        omega.add_scaled(&raw, b.amplitude)?;
    }
    if init.noise_amplitude != T::zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(init.noise_seed);
        // a handful of smooth modes that vanish at the walls
        let mut terms: Vec<(f64, f64, f64, f64)> = Vec::new();
        for k in 1..=4u32 {
            for m in 1..=4u32 {
                let amp: f64 = rng.random_range(-1.0..1.0);
                let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                terms.push((k as f64, m as f64, amp, phase));
            }
        }
        let noise = PhysField::from_fn(grid, |x, y| {
            let xf = x.as_f64();
            let yf = y.as_f64();
            let mut acc = 0.0;
            for &(k, m, amp, phase) in &terms {
                acc += amp
                    * (k * xf + phase).sin()
                    * (m * std::f64::consts::PI * (yf + 1.0) / 2.0).sin();
            }
            T::lit(acc)
        });
        omega.add_scaled(&noise, init.noise_amplitude)?;
    }

    let u01: Vec<T> = grid
        .y()
        .iter()
        .map(|&y| {
            let p = T::one() - y * y;
            init.u01_amplitude * p * p
        })
        .collect();

    Ok(SimState {
        t: T::zero(),
        n1,
        n2,
        omega,
        u01,
    })
}
