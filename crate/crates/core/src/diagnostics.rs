//! Run diagnostics: per-sample scalar records, exponentially weighted
//! space-time norms, inequality audits over random states, zero-mode budget
//! reports and the final bounded/blow-up classification.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::elliptic::ChemoSolver;
use crate::error::{Error, Result};
use crate::grid::{ChannelGrid, Lp, ModeStack, PhysField};
use crate::scalar::Real;

/// Scalar snapshot of a simulation at one sample time. Field order here is
/// the CSV column order and is part of the output contract.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DiagRecord<T: Real> {
    pub t: T,
    pub dt: T,
    pub mass1: T,
    pub mass2: T,
    pub n1_zero_l2: T,
    pub n1_ne_l2: T,
    pub n2_zero_l2: T,
    pub n2_ne_l2: T,
    pub n1_linf: T,
    pub n2_linf: T,
    pub n1_min: T,
    pub n2_min: T,
    pub omega_zero_l2: T,
    /// `L²` norm of the wall-normal derivative of the mean vorticity; its
    /// time integral is the dissipation that enters the mean-flow budget.
    pub omega_zero_dy_l2: T,
    pub omega_ne_l2: T,
    pub u01_linf: T,
    pub u01_l2: T,
    pub grad_c_l4: T,
    pub energy: T,
}

impl<T: Real> DiagRecord<T> {
    pub fn csv_header() -> &'static str {
        "t,dt,mass1,mass2,n1_zero_l2,n1_ne_l2,n2_zero_l2,n2_ne_l2,n1_linf,n2_linf,\
         n1_min,n2_min,omega_zero_l2,omega_zero_dy_l2,omega_ne_l2,u01_linf,u01_l2,\
         grad_c_l4,energy"
    }

    pub fn csv_row(&self) -> String {
        let v = [
            self.t,
            self.dt,
            self.mass1,
            self.mass2,
            self.n1_zero_l2,
            self.n1_ne_l2,
            self.n2_zero_l2,
            self.n2_ne_l2,
            self.n1_linf,
            self.n2_linf,
            self.n1_min,
            self.n2_min,
            self.omega_zero_l2,
            self.omega_zero_dy_l2,
            self.omega_ne_l2,
            self.u01_linf,
            self.u01_l2,
            self.grad_c_l4,
            self.energy,
        ];
        v.iter()
            .map(|x| format!("{}", x.as_f64()))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Measure every column from the spectral state. Solves for the
    /// chemoattractant internally; `energy` is left at zero for the caller
    /// to fill once the space-time accumulators are updated.
    pub fn measure(
        t: T,
        dt: T,
        n1: &ModeStack<T>,
        n2: &ModeStack<T>,
        omega: &ModeStack<T>,
        u01: &[T],
        chemo: &ChemoSolver<T>,
    ) -> Result<Self> {
        let mut total = n1.clone();
        total.add_scaled(n2, T::one())?;
        let c = chemo.solve(&total)?.c;

        let n1p = n1.to_physical();
        let n2p = n2.to_physical();

        let grid = n1.grid();
        let cx = c.ddx().to_physical();
        let cy = c.ddy().to_physical();
        let mut quartic = T::zero();
        let wy = grid.quad_y();
        let dx = grid.dx();
        for j in 0..=grid.ny() {
            let mut s = T::zero();
            for i in 0..grid.nx() {
                let g2 = cx.data()[[j, i]] * cx.data()[[j, i]]
                    + cy.data()[[j, i]] * cy.data()[[j, i]];
                s += g2 * g2;
            }
            quartic += wy[j] * s;
        }
        let grad_c_l4 = (quartic * dx).sqrt().sqrt();

        let u01_linf = u01.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
        let mut u01_sq = T::zero();
        for (j, &v) in u01.iter().enumerate() {
            u01_sq += wy[j] * v * v;
        }
        let u01_l2 = (T::two_pi() * u01_sq).sqrt();

        Ok(Self {
            t,
            dt,
            mass1: n1.mass(),
            mass2: n2.mass(),
            n1_zero_l2: n1.project_zero().l2_norm(),
            n1_ne_l2: n1.l2_norm_nonzero(),
            n2_zero_l2: n2.project_zero().l2_norm(),
            n2_ne_l2: n2.l2_norm_nonzero(),
            n1_linf: n1p.lp_norm(Lp::Inf),
            n2_linf: n2p.lp_norm(Lp::Inf),
            n1_min: n1p.min_value(),
            n2_min: n2p.min_value(),
            omega_zero_l2: omega.project_zero().l2_norm(),
            omega_zero_dy_l2: omega.project_zero().ddy().l2_norm(),
            omega_ne_l2: omega.l2_norm_nonzero(),
            u01_linf,
            u01_l2,
            grad_c_l4,
            energy: T::zero(),
        })
    }
}

/// Accumulates the exponentially weighted space-time norm
///
/// ```text
/// X_a(f)^2 = sup_t e^{2 a A^{-1/2} t} |f|^2
///          + A^{-1/2} int e^{2 a A^{-1/2} s} |f|^2 ds
///          + A^{-1}   int e^{2 a A^{-1/2} s} |grad f|^2 ds
/// ```
///
/// from samples of `|f|` and `|grad f|`; the integrals use the trapezoid
/// rule on the sample times, which must be strictly increasing.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct XaAccumulator<T: Real> {
    a_rate: T,
    a: T,
    rate: T,
    last: Option<(T, T, T)>, // (t, weighted |f|^2, weighted |grad f|^2)
    sup_term: T,
    int_l2: T,
    int_grad: T,
}

impl<T: Real> XaAccumulator<T> {
    /// `a_rate` is the exponential rate coefficient `a`; `a_param` the
    /// advection strength `A` entering the weights and prefactors.
    pub fn new(a_rate: T, a_param: T) -> Result<Self> {
        if a_param <= T::zero() {
            return Err(Error::Param {
                name: "a",
                reason: "advection strength must be positive".into(),
            });
        }
        if a_rate < T::zero() {
            return Err(Error::Param {
                name: "a_rate",
                reason: "weight rate must be non-negative".into(),
            });
        }
        Ok(Self {
            a_rate,
            a: a_param,
            rate: a_rate / a_param.sqrt(),
            last: None,
            sup_term: T::zero(),
            int_l2: T::zero(),
            int_grad: T::zero(),
        })
    }

    pub fn a_rate(&self) -> T {
        self.a_rate
    }

    pub fn a_param(&self) -> T {
        self.a
    }

    pub fn push(&mut self, t: T, l2: T, grad_l2: T) -> Result<()> {
        let w = (self.rate * t * T::lit(2.0)).exp();
        let wl2 = w * l2 * l2;
        let wg = w * grad_l2 * grad_l2;
        if let Some((t0, p_l2, p_g)) = self.last {
            if t <= t0 {
                return Err(Error::Usage(format!(
                    "samples must advance in time: got t={} after t={}",
                    t.as_f64(),
                    t0.as_f64()
                )));
            }
            let half = T::lit(0.5);
            self.int_l2 += (t - t0) * (wl2 + p_l2) * half;
            self.int_grad += (t - t0) * (wg + p_g) * half;
        }
        self.sup_term = self.sup_term.max(wl2);
        self.last = Some((t, wl2, wg));
        Ok(())
    }

    /// Square of the accumulated norm.
    pub fn value_sq(&self) -> T {
        let ra = T::one() / self.a.sqrt();
        self.sup_term + ra * self.int_l2 + ra * ra * self.int_grad
    }

    pub fn value(&self) -> T {
        self.value_sq().sqrt()
    }

    pub fn sup_part(&self) -> T {
        self.sup_term
    }

    pub fn integral_parts(&self) -> (T, T) {
        (self.int_l2, self.int_grad)
    }
}

/// Total energy functional: the sum of the three space-time norms for the
/// nonzero modes of the two densities and the vorticity. The accumulators
/// must share the same weight rate and advection strength.
pub fn energy_e<T: Real>(
    n1: &XaAccumulator<T>,
    n2: &XaAccumulator<T>,
    omega: &XaAccumulator<T>,
) -> Result<T> {
    for other in [n2, omega] {
        if other.a_rate != n1.a_rate || other.a != n1.a {
            return Err(Error::Usage(
                "energy requires accumulators with identical weights".into(),
            ));
        }
    }
    Ok(n1.value() + n2.value() + omega.value())
}

/// Verdict over a finished trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Ran to the end with the density staying within a factor of two of
    /// its initial sup.
    Bounded,
    /// The integrator terminated on the blow-up detector.
    BlowUpFlagged,
    /// Anything else: finished but grew, or died numerically.
    Inconclusive,
}

/// Classify a finished run from its termination and density history.
pub fn classify<T: Real>(
    termination: &crate::dynamics::Termination<T>,
    linf_max: T,
    linf_initial: T,
) -> Outcome {
    use crate::dynamics::Termination::*;
    match termination {
        BlowUp { .. } => Outcome::BlowUpFlagged,
        Completed => {
            if linf_max <= T::lit(2.0) * linf_initial {
                Outcome::Bounded
            } else {
                Outcome::Inconclusive
            }
        }
        NumericalInstability { .. } => Outcome::Inconclusive,
    }
}

/// How an inequality's constant is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// The constant is part of the statement (1 or 2 here). These bounds are
    /// proved for the continuum fields, so on well-resolved states a
    /// violation beyond roundoff means a defect in the solves, never an
    /// interesting state.
    Fixed,
    /// No explicit constant exists; the measured ratio is logged so drift
    /// can be watched, and nothing is asserted.
    Observed,
}

/// One audited inequality: `lhs <= rhs` where `rhs = constant * base` for
/// [`BoundKind::Fixed`] entries and `rhs = base` (the bare norm combination)
/// for [`BoundKind::Observed`] ones.
#[derive(Debug, Clone, Serialize)]
#[serde(bound = "")]
pub struct InequalityEntry<T: Real> {
    pub name: &'static str,
    pub kind: BoundKind,
    /// The asserted constant for fixed bounds; absent for observed ones.
    pub constant: Option<T>,
    pub lhs: T,
    pub rhs: T,
    /// `rhs - lhs`; nonnegative when the bound holds.
    pub slack: T,
    /// `lhs / base`: the constant this state actually exhibits (zero when
    /// the base vanishes).
    pub ratio: T,
    /// Fixed bounds only: `lhs` exceeds `rhs` beyond the roundoff guard
    /// `rhs * (1 + 1e-9) + 1e-12`.
    pub violated: bool,
}

fn make_entry<T: Real>(
    name: &'static str,
    constant: Option<T>,
    lhs: T,
    base: T,
) -> InequalityEntry<T> {
    let rhs = match constant {
        Some(c) => c * base,
        None => base,
    };
    let ratio = if base > T::zero() { lhs / base } else { T::zero() };
    InequalityEntry {
        name,
        kind: if constant.is_some() {
            BoundKind::Fixed
        } else {
            BoundKind::Observed
        },
        constant,
        lhs,
        rhs,
        slack: rhs - lhs,
        ratio,
        violated: constant.is_some()
            && lhs > rhs * (T::one() + T::lit(1e-9)) + T::lit(1e-12),
    }
}

/// Result of auditing one state against the structural inequalities.
#[derive(Debug, Clone, Serialize)]
#[serde(bound = "")]
pub struct InequalityReport<T: Real> {
    pub entries: Vec<InequalityEntry<T>>,
}

impl<T: Real> InequalityReport<T> {
    pub fn violations(&self) -> usize {
        self.entries.iter().filter(|e| e.violated).count()
    }

    pub fn entry(&self, name: &str) -> Option<&InequalityEntry<T>> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Usage(format!("report serialization failed: {e}")))
    }
}

/// Worst case of one inequality across a sweep of reports.
#[derive(Debug, Clone, Serialize)]
#[serde(bound = "")]
pub struct WorstCase<T: Real> {
    pub name: &'static str,
    pub kind: BoundKind,
    /// Smallest `rhs - lhs` seen (most negative = worst).
    pub min_slack: T,
    /// Largest observed constant `lhs / base`.
    pub max_ratio: T,
    pub violations: usize,
}

/// Fold a sweep of reports into per-inequality worst cases, in the entry
/// order of the first report.
pub fn worst_by_entry<T: Real>(reports: &[InequalityReport<T>]) -> Vec<WorstCase<T>> {
    let Some(first) = reports.first() else {
        return Vec::new();
    };
    first
        .entries
        .iter()
        .enumerate()
        .map(|(i, proto)| {
            let mut worst = WorstCase {
                name: proto.name,
                kind: proto.kind,
                min_slack: proto.slack,
                max_ratio: proto.ratio,
                violations: 0,
            };
            for r in reports {
                if let Some(e) = r.entries.get(i) {
                    worst.min_slack = worst.min_slack.min(e.slack);
                    worst.max_ratio = worst.max_ratio.max(e.ratio);
                    worst.violations += usize::from(e.violated);
                }
            }
            worst
        })
        .collect()
}

/// Deliberate defect switch for exercising the audit's failure path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditFault {
    /// Evaluate every check as stated.
    #[default]
    None,
    /// Exchange the two sides of the streamwise Poincaré checks, so a
    /// healthy multi-mode state must report violations. Proves that a sign
    /// or operand bug in the solves would actually surface.
    SwapPoincareOperands,
}

/// Audits a state against the structural inequalities that tie the derived
/// fields to the prognostic ones:
///
/// * mean chemoattractant: `|c0''| + |c0'| <= 2 (|n1_0| + |n2_0|)` in `L²`,
///   `|c0'|_inf <= 2 (...)` — both fixed constants — and the `L⁴` norm of
///   the slope with an observed constant;
/// * fluctuating chemoattractant: `|hess c| + |grad c| <= 2 (|n1_ne| +
///   |n2_ne|)` in `L²` (fixed) and `|grad c|_{L⁴}` observed;
/// * streamwise Poincaré: a zero-x-mean field obeys `|f| <= |df/dx|`
///   because every retained wavenumber has `|k| >= 1` (fixed, constant 1),
///   applied to both densities and the vorticity;
/// * velocity from vorticity: `|u_ne| <= |omega_ne|` (fixed, constant 1,
///   via the same Poincaré step and an integration by parts that only
///   needs impermeable walls), `|grad u_ne| <= C |omega_ne|` and the
///   interpolation bound `|u_ne|_inf <= C |d omega_ne/dx|^{1/5}
///   |omega_ne|^{4/5}` (both observed).
///
/// The chemoattractant and the velocity are always recomputed from the
/// given densities and vorticity, so the audit never sees stale derived
/// fields. The one x-mode whose derivative the grid cannot represent (the
/// topmost one) is excluded from every field up front; de-aliased
/// simulation states carry no energy there anyway.
pub struct InequalityAuditor<T: Real> {
    grid: Arc<ChannelGrid<T>>,
    chemo: ChemoSolver<T>,
    stream: crate::elliptic::StreamSolver<T>,
    fault: AuditFault,
}

impl<T: Real> InequalityAuditor<T> {
    pub fn new(grid: &Arc<ChannelGrid<T>>, bc: crate::elliptic::DensityBc) -> Result<Self> {
        Ok(Self {
            grid: grid.clone(),
            chemo: ChemoSolver::new(grid, bc)?,
            stream: crate::elliptic::StreamSolver::new(grid)?,
            fault: AuditFault::None,
        })
    }

    pub fn set_fault(&mut self, fault: AuditFault) {
        self.fault = fault;
    }

    /// Audit a physical-space snapshot (transforms internally).
    pub fn audit(&self, state: &crate::dynamics::SimState<T>) -> Result<InequalityReport<T>> {
        self.audit_spectral(
            &state.n1.to_spectral()?,
            &state.n2.to_spectral()?,
            &state.omega.to_spectral()?,
        )
    }

    /// Audit spectral stacks directly.
    pub fn audit_spectral(
        &self,
        n1: &ModeStack<T>,
        n2: &ModeStack<T>,
        omega: &ModeStack<T>,
    ) -> Result<InequalityReport<T>> {
        for f in [n1, n2, omega] {
            crate::grid::check_same_grid(&self.grid, f.grid())?;
        }
        let kmax = self.grid.kmax();
        let strip = |f: &ModeStack<T>| {
            let mut g = f.clone();
            for v in g.row_mut(kmax) {
                *v = num_complex::Complex::default();
            }
            g
        };
        let n1 = strip(n1);
        let n2 = strip(n2);
        let omega = strip(omega);

        let two = T::lit(2.0);
        let mut entries = Vec::with_capacity(11);

        let mut total = n1.clone();
        total.add_scaled(&n2, T::one())?;
        let c = self.chemo.solve(&total)?.c;

        // mean chain
        let c0 = c.project_zero();
        let dy_c0 = c0.ddy();
        let dyy_c0 = c0.apply_y_matrix(self.grid.dmat2());
        let base0 = n1.project_zero().l2_norm() + n2.project_zero().l2_norm();
        entries.push(make_entry(
            "chemo_zero_l2_chain",
            Some(two),
            dyy_c0.l2_norm() + dy_c0.l2_norm(),
            base0,
        ));
        let slope = dy_c0.mode0_profile();
        let slope_sup = slope.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
        entries.push(make_entry(
            "chemo_zero_slope_sup",
            Some(two),
            slope_sup,
            base0,
        ));
        let wy = self.grid.quad_y();
        let mut quart = T::zero();
        for (j, &s) in slope.iter().enumerate() {
            quart += wy[j] * s * s * s * s;
        }
        entries.push(make_entry(
            "chemo_zero_slope_l4",
            None,
            (T::two_pi() * quart).sqrt().sqrt(),
            base0,
        ));

        // fluctuation chain
        let cne = c.project_nonzero();
        let cx = cne.ddx();
        let cy = cne.ddy();
        let (cxl, cyl) = (cx.l2_norm(), cy.l2_norm());
        let grad = (cxl * cxl + cyl * cyl).sqrt();
        let (cxxl, cxyl, cyyl) = (
            cx.ddx().l2_norm(),
            cx.ddy().l2_norm(),
            cy.ddy().l2_norm(),
        );
        let hess = (cxxl * cxxl + two * cxyl * cxyl + cyyl * cyyl).sqrt();
        let base_ne = n1.l2_norm_nonzero() + n2.l2_norm_nonzero();
        entries.push(make_entry(
            "chemo_ne_l2_chain",
            Some(two),
            hess + grad,
            base_ne,
        ));
        let gx = cx.to_physical();
        let gy = cy.to_physical();
        let mut quart = T::zero();
        for j in 0..=self.grid.ny() {
            let mut s = T::zero();
            for i in 0..self.grid.nx() {
                let g2 = gx.data()[[j, i]] * gx.data()[[j, i]]
                    + gy.data()[[j, i]] * gy.data()[[j, i]];
                s += g2 * g2;
            }
            quart += wy[j] * s;
        }
        entries.push(make_entry(
            "chemo_ne_grad_l4",
            None,
            (quart * self.grid.dx()).sqrt().sqrt(),
            base_ne,
        ));

        // streamwise Poincaré
        for (name, f) in [
            ("poincare_x_n1", &n1),
            ("poincare_x_n2", &n2),
            ("poincare_x_omega", &omega),
        ] {
            let mut small = f.l2_norm_nonzero();
            let mut big = f.ddx().l2_norm();
            if self.fault == AuditFault::SwapPoincareOperands {
                std::mem::swap(&mut small, &mut big);
            }
            entries.push(make_entry(name, Some(T::one()), small, big));
        }

        // velocity recovered from the vorticity fluctuation
        let sol = self.stream.solve(&omega)?;
        let om_ne = omega.l2_norm_nonzero();
        let (u1l, u2l) = (sol.u1.l2_norm(), sol.u2.l2_norm());
        entries.push(make_entry(
            "velocity_l2",
            Some(T::one()),
            (u1l * u1l + u2l * u2l).sqrt(),
            om_ne,
        ));
        let comps = [
            sol.u1.ddx().l2_norm(),
            sol.u1.ddy().l2_norm(),
            sol.u2.ddx().l2_norm(),
            sol.u2.ddy().l2_norm(),
        ];
        let gu = comps.iter().map(|&v| v * v).sum::<T>().sqrt();
        entries.push(make_entry("velocity_grad_l2", None, gu, om_ne));
        let u1p = sol.u1.to_physical();
        let u2p = sol.u2.to_physical();
        let mut speed_sup = T::zero();
        for (a, b) in u1p.data().iter().zip(u2p.data().iter()) {
            speed_sup = speed_sup.max((*a * *a + *b * *b).sqrt());
        }
        let om_x = omega.ddx().l2_norm();
        let fifth = T::lit(0.2);
        entries.push(make_entry(
            "velocity_sup_interp",
            None,
            speed_sup,
            om_x.powf(fifth) * om_ne.powf(T::lit(0.8)),
        ));

        Ok(InequalityReport { entries })
    }
}

/// One-shot audit of a snapshot; builds the solvers for the snapshot's grid
/// and boundary condition, recomputes the derived fields, and reports every
/// inequality.
pub fn verify_inequalities<T: Real>(
    state: &crate::dynamics::SimState<T>,
    bc: crate::elliptic::DensityBc,
) -> Result<InequalityReport<T>> {
    let grid = state.n1.grid().clone();
    InequalityAuditor::new(&grid, bc)?.audit(state)
}

/// Deterministic band-limited random state for property sweeps.
///
/// Spectral content stays inside the de-alias cut in `x` and below half the
/// wall-normal resolution, with amplitudes decaying like `1/(1+k²+m²)`, so
/// every quadratic norm the audit computes is quadrature-exact and the
/// fixed-constant inequalities hold with honest margins. Densities are
/// lifted to a positive floor; the mean flow gets a smooth random profile.
pub fn random_state<T: Real>(
    grid: &Arc<ChannelGrid<T>>,
    seed: u64,
) -> Result<crate::dynamics::SimState<T>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    let kcut = grid.kmax_kept().min(grid.kmax().saturating_sub(1));
    let mcut = (grid.ny() / 2).saturating_sub(2).max(2);
    // Chebyshev polynomial table at the nodes
    let y = grid.y();
    let n = y.len();
    let mut cheb: Vec<Vec<T>> = Vec::with_capacity(mcut + 1);
    cheb.push(vec![T::one(); n]);
    cheb.push(y.to_vec());
    for m in 2..=mcut {
        let row: Vec<T> = (0..n)
            .map(|j| T::lit(2.0) * y[j] * cheb[m - 1][j] - cheb[m - 2][j])
            .collect();
        cheb.push(row);
    }

    let mut random_stack = |amp: f64| -> Result<PhysField<T>> {
        let mut out = ModeStack::zeros(grid);
        for k in 0..=kcut {
            for m in 0..=mcut {
                let decay = T::lit(amp) / T::of_usize(1 + k * k + m * m);
                let re = T::lit(rng.random_range(-1.0..1.0)) * decay;
                let im = if k == 0 {
                    T::zero()
                } else {
                    T::lit(rng.random_range(-1.0..1.0)) * decay
                };
                let coeff = num_complex::Complex::new(re, im);
                for (j, v) in out.row_mut(k).iter_mut().enumerate() {
                    *v += coeff.scale(cheb[m][j]);
                }
            }
        }
        Ok(out.to_physical())
    };

    let mut positive = |amp: f64| -> Result<PhysField<T>> {
        let mut f = random_stack(amp)?;
        let floor = T::lit(0.1 * amp);
        let min = f.min_value();
        if min < floor {
            let shift = floor - min;
            f.data_mut().mapv_inplace(|v| v + shift);
        }
        Ok(f)
    };

    let n1 = positive(1.0)?;
    let n2 = positive(1.0)?;
    let omega = random_stack(1.0)?;

    let u01: Vec<T> = {
        let mut profile = vec![T::zero(); n];
        for (m, row) in cheb.iter().enumerate() {
            let amp = T::lit(rng.random_range(-1.0..1.0)) / T::of_usize(1 + m * m);
            for (j, v) in profile.iter_mut().enumerate() {
                *v += amp * row[j];
            }
        }
        profile
    };

    Ok(crate::dynamics::SimState {
        t: T::zero(),
        n1,
        n2,
        omega,
        u01,
    })
}

/// Empirical mean-mode budget of a finished run, mirroring the a-priori
/// structure: each `t?_emp` is the quantity the theory bounds, each
/// `t?_pred` the initial-data template it is bounded by (with the unknown
/// prefactor divided out), and `c? = t?_emp / t?_pred` the constant the run
/// actually exhibits.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ZeroModeReport<T: Real> {
    /// `sup_t |n1_0|² + sup_t |n2_0|²` (L² norms of the density means).
    pub t1_emp: T,
    /// `sup_t |omega_0| + A^{-1/2} (∫ |d omega_0/dy|² dt)^{1/2}`.
    pub t2_emp: T,
    /// `sup_t |u01|_inf`.
    pub t3_emp: T,
    /// `chi² (|n1_0(0)|² + |n2_0(0)|² + M1⁴ + M2⁴ + 1)`,
    /// `chi² = max(chi1², chi2², 1)`.
    pub t1_pred: T,
    /// `|omega_0(0)| + 1`.
    pub t2_pred: T,
    /// `|u01(0)|_{L²} + |omega_0(0)| + 1`.
    pub t3_pred: T,
    pub c1: T,
    pub c2: T,
    pub c3: T,
}

/// Fold a trajectory's samples into the mean-mode budget report.
pub fn zero_mode_report<T: Real>(
    traj: &crate::dynamics::Trajectory<T>,
    params: &crate::dynamics::SimParams<T>,
) -> Result<ZeroModeReport<T>> {
    let samples = &traj.samples;
    let Some(first) = samples.first() else {
        return Err(Error::Usage(
            "mean-mode report needs at least one sample".into(),
        ));
    };

    let mut sup1a = T::zero();
    let mut sup1b = T::zero();
    let mut sup2 = T::zero();
    let mut sup3 = T::zero();
    let mut dissipation = T::zero();
    let half = T::lit(0.5);
    for (i, s) in samples.iter().enumerate() {
        sup1a = sup1a.max(s.n1_zero_l2 * s.n1_zero_l2);
        sup1b = sup1b.max(s.n2_zero_l2 * s.n2_zero_l2);
        sup2 = sup2.max(s.omega_zero_l2);
        sup3 = sup3.max(s.u01_linf);
        if i > 0 {
            let p = &samples[i - 1];
            let (a, b) = (
                p.omega_zero_dy_l2 * p.omega_zero_dy_l2,
                s.omega_zero_dy_l2 * s.omega_zero_dy_l2,
            );
            dissipation += (s.t - p.t) * (a + b) * half;
        }
    }

    let chi_sq = (params.chi1 * params.chi1)
        .max(params.chi2 * params.chi2)
        .max(T::one());
    let m1 = first.mass1;
    let m2 = first.mass2;
    let t1_pred = chi_sq
        * (first.n1_zero_l2 * first.n1_zero_l2
            + first.n2_zero_l2 * first.n2_zero_l2
            + m1 * m1 * m1 * m1
            + m2 * m2 * m2 * m2
            + T::one());
    let t2_pred = first.omega_zero_l2 + T::one();
    let t3_pred = first.u01_l2 + first.omega_zero_l2 + T::one();

    let t1_emp = sup1a + sup1b;
    let t2_emp = sup2 + dissipation.sqrt() / params.a.sqrt();
    let t3_emp = sup3;

    Ok(ZeroModeReport {
        t1_emp,
        t2_emp,
        t3_emp,
        t1_pred,
        t2_pred,
        t3_pred,
        c1: t1_emp / t1_pred,
        c2: t2_emp / t2_pred,
        c3: t3_emp / t3_pred,
    })
}

/// Classify a finished trajectory from its own bookkeeping.
pub fn classify_trajectory<T: Real>(traj: &crate::dynamics::Trajectory<T>) -> Outcome {
    classify(
        &traj.termination,
        traj.extrema.n1_linf.max(traj.extrema.n2_linf),
        traj.initial_linf,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{ChannelGrid, PhysField};
    use std::sync::Arc;

    fn grid(nx: usize, ny: usize) -> Arc<ChannelGrid<f64>> {
        ChannelGrid::new(nx, ny, false).unwrap()
    }

    #[test]
    fn singleton_accumulator_equals_plain_norm() {
        let mut acc = XaAccumulator::<f64>::new(0.5, 100.0).unwrap();
        acc.push(0.0, 3.0, 7.0).unwrap();
        assert!((acc.value_sq() - 9.0).abs() < 1e-14);
    }

    #[test]
    fn accumulator_matches_closed_form_decay() {
        // f(t) = e^{-b t} f0, grad f = g0 e^{-b t}; with rate rho the
        // weighted integrals have closed forms; trapezoid converges at
        // second order, so a fine sampling lands within 1e-6
        let a_param: f64 = 4.0;
        let a_rate = 0.3;
        let rho = a_rate / a_param.sqrt();
        let b = 0.9;
        let f0 = 2.0;
        let g0 = 5.0;
        let t_end = 1.5;
        let mut acc = XaAccumulator::new(a_rate, a_param).unwrap();
        let steps = 3000;
        for i in 0..=steps {
            let t = t_end * i as f64 / steps as f64;
            acc.push(t, f0 * (-b * t).exp(), g0 * (-b * t).exp()).unwrap();
        }
        let lam = 2.0 * (rho - b);
        let int = |c0: f64| c0 * ((lam * t_end).exp() - 1.0) / lam;
        let want = f0 * f0 // sup at t = 0 since rho < b
            + int(f0 * f0) / a_param.sqrt()
            + int(g0 * g0) / a_param;
        assert!(
            (acc.value_sq() - want).abs() < 1e-6 * want,
            "got {} want {want}",
            acc.value_sq()
        );
    }

    #[test]
    fn accumulator_rejects_time_regression() {
        let mut acc = XaAccumulator::new(0.0, 1.0).unwrap();
        acc.push(0.0, 1.0, 1.0).unwrap();
        acc.push(0.5, 1.0, 1.0).unwrap();
        assert!(acc.push(0.5, 1.0, 1.0).is_err());
        assert!(acc.push(0.2, 1.0, 1.0).is_err());
    }

    #[test]
    fn energy_rejects_mismatched_weights() {
        let mk = |r: f64, a: f64| {
            let mut x = XaAccumulator::new(r, a).unwrap();
            x.push(0.0, 1.0, 0.0).unwrap();
            x
        };
        let a = mk(0.5, 100.0);
        let b = mk(0.5, 100.0);
        let c = mk(0.4, 100.0);
        assert!(energy_e(&a, &b, &mk(0.5, 100.0)).is_ok());
        assert!(energy_e(&a, &b, &c).is_err());
        let d = mk(0.5, 200.0);
        assert!(energy_e(&a, &b, &d).is_err());
    }

    #[test]
    fn diag_record_measures_masses_and_splits() {
        let g = grid(16, 16);
        let chemo =
            crate::elliptic::ChemoSolver::new(&g, crate::elliptic::DensityBc::Neumann).unwrap();
        // n1 = 1/(4 pi) has mass 1; n2 = 0; omega a pure nonzero mode
        let n1 = PhysField::from_fn(&g, |_, _| 1.0 / (4.0 * std::f64::consts::PI))
            .to_spectral()
            .unwrap();
        let n2 = crate::grid::ModeStack::zeros(&g);
        let om = PhysField::from_fn(&g, |x, y| x.cos() * (1.0 - y * y))
            .to_spectral()
            .unwrap();
        let u01 = vec![0.25; g.ny() + 1];
        let rec = DiagRecord::measure(0.0, 0.01, &n1, &n2, &om, &u01, &chemo).unwrap();
        assert!((rec.mass1 - 1.0).abs() < 1e-12);
        assert_eq!(rec.mass2, 0.0);
        assert!(rec.n1_ne_l2 < 1e-14);
        assert!(rec.omega_zero_l2 < 1e-14);
        assert!(rec.omega_ne_l2 > 0.1);
        assert_eq!(rec.u01_linf, 0.25);
        // constant mean flow: L2 over the channel is sqrt(4 pi) * value
        assert!((rec.u01_l2 - 0.25 * (4.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
        // uniform density gives uniform chemoattractant, so grad c vanishes
        assert!(rec.grad_c_l4 < 1e-10);
    }

    #[test]
    fn zero_state_audit_has_zero_slack_everywhere() {
        let g = grid(16, 16);
        let auditor =
            InequalityAuditor::new(&g, crate::elliptic::DensityBc::Neumann).unwrap();
        let z = ModeStack::zeros(&g);
        let report = auditor.audit_spectral(&z, &z, &z).unwrap();
        assert_eq!(report.entries.len(), 11);
        assert_eq!(report.violations(), 0);
        for e in &report.entries {
            assert_eq!(e.lhs, 0.0, "{} lhs", e.name);
            assert_eq!(e.rhs, 0.0, "{} rhs", e.name);
            assert_eq!(e.slack, 0.0, "{} slack", e.name);
            assert!(!e.violated);
        }
    }

    #[test]
    fn single_harmonic_poincare_is_an_equality() {
        // a pure k = 1 field satisfies |f| = |df/dx| exactly
        let g = grid(16, 24);
        let f = PhysField::from_fn(&g, |x, y| x.cos() * (1.0 - y * y))
            .to_spectral()
            .unwrap();
        let auditor =
            InequalityAuditor::new(&g, crate::elliptic::DensityBc::Neumann).unwrap();
        let report = auditor.audit_spectral(&f, &f, &f).unwrap();
        assert_eq!(report.violations(), 0);
        for name in ["poincare_x_n1", "poincare_x_n2", "poincare_x_omega"] {
            let e = report.entry(name).unwrap();
            assert!(e.lhs > 0.1, "{name} should be nontrivial");
            assert!(
                (e.lhs - e.rhs).abs() <= 1e-12 * e.lhs,
                "{name}: lhs {} vs rhs {}",
                e.lhs,
                e.rhs
            );
        }
    }

    #[test]
    fn swapped_operands_surface_as_violations() {
        let g = grid(24, 24);
        let state = random_state(&g, 7).unwrap();
        let mut auditor =
            InequalityAuditor::new(&g, crate::elliptic::DensityBc::Neumann).unwrap();
        assert_eq!(auditor.audit(&state).unwrap().violations(), 0);
        auditor.set_fault(AuditFault::SwapPoincareOperands);
        let broken = auditor.audit(&state).unwrap();
        assert!(
            broken.violations() >= 3,
            "swapping the Poincaré operands must trip all three checks, got {}",
            broken.violations()
        );
        for e in broken.entries.iter().filter(|e| e.violated) {
            assert!(e.name.starts_with("poincare_x_"));
            assert!(e.slack < 0.0);
        }
    }

    #[test]
    fn report_json_carries_per_inequality_slack() {
        let g = grid(16, 16);
        let state = random_state(&g, 3).unwrap();
        let report = verify_inequalities(&state, crate::elliptic::DensityBc::Neumann).unwrap();
        let json = report.to_json().unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        let entries = parsed["entries"].as_array().unwrap();
        assert_eq!(entries.len(), report.entries.len());
        for e in entries {
            assert!(e["slack"].is_number());
            assert!(e["name"].is_string());
            assert!(e["violated"].is_boolean());
        }
    }

    #[test]
    fn random_states_are_positive_and_band_limited() {
        let g = grid(32, 32);
        let state = random_state(&g, 42).unwrap();
        assert!(state.n1.min_value() > 0.0);
        assert!(state.n2.min_value() > 0.0);
        assert_eq!(state.u01.len(), g.ny() + 1);
        let om = state.omega.to_spectral().unwrap();
        let kcut = g.kmax_kept().min(g.kmax() - 1);
        for k in kcut + 1..=g.kmax() {
            for v in om.row(k) {
                assert!(v.norm_sqr() < 1e-24, "mode {k} should be empty");
            }
        }
        // distinct seeds give distinct states
        let other = random_state(&g, 43).unwrap();
        assert!(
            (state.n1.lp_norm(Lp::Two) - other.n1.lp_norm(Lp::Two)).abs() > 1e-12
        );
        // same seed reproduces exactly
        let again = random_state(&g, 42).unwrap();
        assert_eq!(
            state.n1.lp_norm(Lp::Two),
            again.n1.lp_norm(Lp::Two)
        );
    }

    fn synthetic_record(t: f64) -> DiagRecord<f64> {
        DiagRecord {
            t,
            dt: 0.1,
            mass1: 0.0,
            mass2: 0.0,
            n1_zero_l2: 0.0,
            n1_ne_l2: 0.0,
            n2_zero_l2: 0.0,
            n2_ne_l2: 0.0,
            n1_linf: 0.0,
            n2_linf: 0.0,
            n1_min: 0.0,
            n2_min: 0.0,
            omega_zero_l2: 0.0,
            omega_zero_dy_l2: 0.0,
            omega_ne_l2: 0.0,
            u01_linf: 0.0,
            u01_l2: 0.0,
            grad_c_l4: 0.0,
            energy: 0.0,
        }
    }

    fn synthetic_trajectory(samples: Vec<DiagRecord<f64>>) -> crate::dynamics::Trajectory<f64> {
        crate::dynamics::Trajectory {
            samples,
            termination: crate::dynamics::Termination::Completed,
            extrema: crate::dynamics::Extrema {
                n1_min: 0.0,
                n2_min: 0.0,
                n1_linf: 0.0,
                n2_linf: 0.0,
                omega_linf: 0.0,
            },
            xa_n1: 0.0,
            xa_n2: 0.0,
            xa_omega: 0.0,
            energy: 0.0,
            steps: 10,
            final_dt: 0.1,
            dt_halvings: 0,
            initial_linf: 0.0,
        }
    }

    #[test]
    fn zero_trajectory_mean_budget_is_zero() {
        let traj = synthetic_trajectory(vec![
            synthetic_record(0.0),
            synthetic_record(0.5),
            synthetic_record(1.0),
        ]);
        let params = crate::dynamics::SimParams::new(
            100.0,
            1.0,
            1.0,
            crate::elliptic::DensityBc::Neumann,
        )
        .unwrap();
        let report = zero_mode_report(&traj, &params).unwrap();
        assert_eq!(report.t1_emp, 0.0);
        assert_eq!(report.t2_emp, 0.0);
        assert_eq!(report.t3_emp, 0.0);
        // the templates never vanish: each carries a +1
        assert_eq!(report.t1_pred, 1.0);
        assert_eq!(report.t2_pred, 1.0);
        assert_eq!(report.t3_pred, 1.0);
        assert_eq!(report.c1, 0.0);

        let empty = synthetic_trajectory(Vec::new());
        assert!(zero_mode_report(&empty, &params).is_err());
    }

    #[test]
    fn mean_budget_tracks_suprema_and_dissipation() {
        // hand-built samples with known suprema and a known time integral
        let mut s0 = synthetic_record(0.0);
        s0.n1_zero_l2 = 3.0;
        s0.omega_zero_l2 = 2.0;
        s0.omega_zero_dy_l2 = 1.0;
        s0.u01_linf = 0.5;
        s0.u01_l2 = 0.25;
        s0.mass1 = 1.0;
        let mut s1 = synthetic_record(2.0);
        s1.n1_zero_l2 = 1.0;
        s1.n2_zero_l2 = 4.0;
        s1.omega_zero_l2 = 1.0;
        s1.omega_zero_dy_l2 = 1.0;
        s1.u01_linf = 0.75;
        let traj = synthetic_trajectory(vec![s0, s1]);
        let params = crate::dynamics::SimParams::new(
            4.0,
            3.0,
            1.0,
            crate::elliptic::DensityBc::Neumann,
        )
        .unwrap();
        let report = zero_mode_report(&traj, &params).unwrap();
        // sum of the two separate running suprema: 3^2 + 4^2
        assert!((report.t1_emp - 25.0).abs() < 1e-14);
        // sup 2.0 plus A^{-1/2} sqrt(int_0^2 1 dt) = 2 + sqrt(2)/2
        assert!((report.t2_emp - (2.0 + 2.0f64.sqrt() / 2.0)).abs() < 1e-14);
        assert_eq!(report.t3_emp, 0.75);
        // chi^2 = 9; template = 9 * (9 + 0 + 1 + 0 + 1)
        assert!((report.t1_pred - 9.0 * 11.0).abs() < 1e-14);
        assert!((report.t2_pred - 3.0).abs() < 1e-14);
        assert!((report.t3_pred - 3.25).abs() < 1e-14);
    }

    #[test]
    fn classify_covers_the_three_outcomes() {
        use crate::dynamics::Termination;
        let completed: Termination<f64> = Termination::Completed;
        assert_eq!(classify(&completed, 1.5, 1.0), Outcome::Bounded);
        assert_eq!(classify(&completed, 2.0, 1.0), Outcome::Bounded);
        assert_eq!(classify(&completed, 5.0, 1.0), Outcome::Inconclusive);
        let blew: Termination<f64> = Termination::BlowUp {
            t: 0.3,
            detail: "density sup tripped the detector".into(),
        };
        assert_eq!(classify(&blew, 100.0, 1.0), Outcome::BlowUpFlagged);
        let unstable: Termination<f64> = Termination::NumericalInstability {
            t: 0.3,
            detail: "non-finite".into(),
        };
        assert_eq!(classify(&unstable, 1.0, 1.0), Outcome::Inconclusive);

        let mut traj = synthetic_trajectory(vec![synthetic_record(0.0)]);
        traj.initial_linf = 1.0;
        traj.extrema.n1_linf = 1.4;
        traj.extrema.n2_linf = 0.2;
        assert_eq!(classify_trajectory(&traj), Outcome::Bounded);
    }

    #[test]
    fn worst_case_fold_tracks_minima() {
        let g = grid(16, 16);
        let auditor =
            InequalityAuditor::new(&g, crate::elliptic::DensityBc::Neumann).unwrap();
        let reports: Vec<_> = (0..4)
            .map(|s| {
                let st = random_state(&g, 100 + s).unwrap();
                auditor.audit(&st).unwrap()
            })
            .collect();
        let worst = worst_by_entry(&reports);
        assert_eq!(worst.len(), reports[0].entries.len());
        for (i, w) in worst.iter().enumerate() {
            assert_eq!(w.violations, 0);
            for r in &reports {
                assert!(w.min_slack <= r.entries[i].slack + 1e-15);
                assert!(w.max_ratio >= r.entries[i].ratio - 1e-15);
            }
        }
        assert!(worst_by_entry::<f64>(&[]).is_empty());
    }
}
