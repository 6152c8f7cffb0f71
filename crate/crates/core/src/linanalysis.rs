//! Linear analysis of the per-wavenumber advection-diffusion operator.
//!
//! After a Fourier transform in `x`, the linearization of the transport
//! equations around the parabolic channel profile acts on one `y`-profile at
//! a time as
//!
//! ```text
//!     L f = -(1/A) (f'' - k^2 f) + i k (1 - y^2) f,        f(±1) = 0,
//! ```
//!
//! optionally augmented by the velocity feedback `+ 2ik Δ_k^{-1} f` that the
//! vorticity equation picks up from the mean shear. This module measures the
//! quantities that control how fast such modes decay: smallest singular
//! values of the shifted operator over real spectral shifts, the resulting
//! uniform resolvent constant, the pseudospectral abscissa proxy `Ψ`,
//! operator-norm decay of the semigroup `e^{-tL}`, and time-weighted
//! norms of driven solutions.
//!
//! All matrices live on the constrained interior space (wall rows and
//! columns eliminated) conjugated by square-root Clenshaw-Curtis weights, so
//! Euclidean singular values of the matrix are quadrature approximations of
//! `L^2(-1,1)` singular values of the operator. Without that weighting the
//! numbers would depend on the node clustering and comparisons across grid
//! sizes would be meaningless.

use crate::elliptic::residual_acceptable;
use crate::error::{Error, Result};
use crate::grid::chebyshev;
use crate::scalar::Real;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::Rng;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Calibrated uniform lower bound `c'` for the enhanced-dissipation
/// constants: across `A ∈ {10², 10³, 10⁴}` and `k ∈ {1, 2}` the measured
/// `(Ψ - k²/A)·A^{1/2}|k|^{-1/2}` stays in `[0.59, 0.62]` and the fitted
/// semigroup decay rate times `A^{1/2}|k|^{-1/2}` in `[0.70, 0.72]`, so both
/// routes clear this floor with at least 7% margin. Frozen from the first
/// calibration sweep; the regression tests guard it.
pub const CALIBRATED_C_PRIME: f64 = 0.55;

/// Default exponential weight rate for time-weighted norms: half the
/// calibrated decay constant, comfortably inside the admissible range.
pub const DEFAULT_A_RATE: f64 = CALIBRATED_C_PRIME / 2.0;

#[inline]
fn pos_inf<T: Real>() -> T {
    T::lit(f64::INFINITY)
}

/// Which linearized operator to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    /// Advection-diffusion only; governs the density fluctuations.
    Bare,
    /// With the mean-shear velocity feedback `+2ik Δ_k^{-1}`; governs the
    /// vorticity fluctuations.
    WithStreamFeedback,
}

impl OperatorKind {
    fn tag(self) -> &'static str {
        match self {
            OperatorKind::Bare => "bare",
            OperatorKind::WithStreamFeedback => "stream_feedback",
        }
    }
}

/// One Fourier mode of the linearized operator, discretized by Chebyshev
/// collocation on its own grid (independent of any simulation grid, so the
/// resolution can chase the critical-layer width `(A|k|)^{-1/4}`).
pub struct OsOperator<T: Real> {
    a: T,
    k: i32,
    ny: usize,
    kind: OperatorKind,
    /// Gauss-Lobatto nodes, decreasing from 1 to -1.
    y: Vec<T>,
    /// Clenshaw-Curtis weights for the nodes.
    w: Vec<T>,
    /// First-derivative collocation matrix on all nodes.
    dmat: ndarray::Array2<T>,
    /// The operator sampled on all nodes, no boundary rows replaced.
    op_full: DMatrix<Complex<T>>,
    /// Interior restriction conjugated by sqrt-weights.
    weighted: DMatrix<Complex<T>>,
    /// Row-sum norm of `op_full` over interior rows, for residual gating.
    opnorm: T,
}

/// Result of a resolvent solve: the profile on all nodes, the collocation
/// residual on the interior rows, and the norm of the forcing.
#[derive(Debug, Clone)]
pub struct ResolventSolution<T: Real> {
    pub profile: Vec<Complex<T>>,
    pub residual: T,
    pub forcing_norm: T,
}

/// Pieces of the quadratic form `⟨Lf, f⟩` used by the accretivity checks.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticForm<T> {
    /// `Re ⟨Lf, f⟩` under the quadrature inner product.
    pub re_lf_f: T,
    /// `‖f'‖²` by quadrature.
    pub grad_sq: T,
    /// `‖f‖²` by quadrature.
    pub l2_sq: T,
}

impl<T: Real> OsOperator<T> {
    pub fn new(a: T, k: i32, ny: usize, kind: OperatorKind) -> Result<Self> {
        if !(a >= T::one()) || !a.is_finite() {
            return Err(Error::Param {
                name: "a",
                reason: format!("advection strength must be >= 1, got {}", a.as_f64()),
            });
        }
        if k == 0 {
            return Err(Error::Param {
                name: "k",
                reason: "the zero mode has no shear mechanism; k must be nonzero".into(),
            });
        }
        if ny < 8 {
            return Err(Error::Param {
                name: "ny",
                reason: format!("need at least 8 intervals, got {}", ny),
            });
        }
        let y: Vec<T> = chebyshev::nodes(ny);
        let w: Vec<T> = chebyshev::clencurt(ny);
        let dmat = chebyshev::diffmat(&y);
        let d2 = dmat.dot(&dmat);
        let n1 = ny + 1;
        let kf = T::of_usize(k.unsigned_abs() as usize) * if k < 0 { -T::one() } else { T::one() };
        let ksq = kf * kf;
        let inv_a = T::one() / a;

        let mut op_full = DMatrix::<Complex<T>>::zeros(n1, n1);
        for i in 0..n1 {
            for j in 0..n1 {
                let mut v = Complex::new(-inv_a * d2[[i, j]], T::zero());
                if i == j {
                    v.re += inv_a * ksq;
                    v.im += kf * (T::one() - y[i] * y[i]);
                }
                op_full[(i, j)] = v;
            }
        }
        if kind == OperatorKind::WithStreamFeedback {
            // 2ik Δ_k^{-1}: invert (∂_y² - k²) with zero walls, then zero the
            // wall columns so the inverse only sees interior data.
            let mut h = DMatrix::<T>::zeros(n1, n1);
            for i in 0..n1 {
                for j in 0..n1 {
                    h[(i, j)] = d2[[i, j]] - if i == j { ksq } else { T::zero() };
                }
            }
            for j in 0..n1 {
                h[(0, j)] = T::zero();
                h[(ny, j)] = T::zero();
            }
            h[(0, 0)] = T::one();
            h[(ny, ny)] = T::one();
            let hinv = h
                .try_inverse()
                .ok_or_else(|| Error::Solver("shifted Laplacian is singular".into()))?;
            let two_k = T::lit(2.0) * kf;
            for i in 0..n1 {
                for j in 1..ny {
                    op_full[(i, j)] += Complex::new(T::zero(), two_k * hinv[(i, j)]);
                }
            }
        }

        let m = ny - 1;
        let mut weighted = DMatrix::<Complex<T>>::zeros(m, m);
        for i in 0..m {
            let si = w[i + 1].sqrt();
            for j in 0..m {
                let scale = si / w[j + 1].sqrt();
                weighted[(i, j)] = op_full[(i + 1, j + 1)] * Complex::new(scale, T::zero());
            }
        }

        let mut opnorm = T::zero();
        for i in 1..ny {
            let mut s = T::zero();
            for j in 0..n1 {
                s += op_full[(i, j)].norm_sqr().sqrt();
            }
            opnorm = opnorm.max(s);
        }

        Ok(Self {
            a,
            k,
            ny,
            kind,
            y,
            w,
            dmat,
            op_full,
            weighted,
            opnorm,
        })
    }

    pub fn a(&self) -> T {
        self.a
    }

    pub fn k(&self) -> i32 {
        self.k
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn nodes(&self) -> &[T] {
        &self.y
    }

    pub fn weights(&self) -> &[T] {
        &self.w
    }

    /// The weighted interior matrix. Euclidean norms in this representation
    /// are quadrature `L²` norms of the underlying profiles.
    pub fn matrix(&self) -> &DMatrix<Complex<T>> {
        &self.weighted
    }

    fn kf(&self) -> T {
        let mag = T::of_usize(self.k.unsigned_abs() as usize);
        if self.k < 0 {
            -mag
        } else {
            mag
        }
    }

    /// Quadrature `L²` norm of a profile on all nodes.
    pub fn l2_norm(&self, profile: &[Complex<T>]) -> T {
        let mut s = T::zero();
        for (wj, v) in self.w.iter().zip(profile.iter()) {
            s += *wj * v.norm_sqr();
        }
        s.sqrt()
    }

    /// Evaluate the pieces of `⟨Lf, f⟩`: the real part of the form, the
    /// quadrature norm of `f'` (with the `k` term left out), and of `f`.
    /// For profiles vanishing at the walls and resolved by the quadrature,
    /// `re_lf_f = (grad_sq + k² l2_sq) / A` up to rounding.
    pub fn quadratic_form(&self, profile: &[Complex<T>]) -> QuadraticForm<T> {
        let n1 = self.ny + 1;
        assert_eq!(profile.len(), n1, "profile must live on all nodes");
        let mut re_lf_f = T::zero();
        for i in 0..n1 {
            let mut lf = Complex::new(T::zero(), T::zero());
            for j in 0..n1 {
                lf += self.op_full[(i, j)] * profile[j];
            }
            // w * Re(lf * conj(f))
            re_lf_f += self.w[i] * (lf * profile[i].conj()).re;
        }
        let mut grad_sq = T::zero();
        for i in 0..n1 {
            let mut df = Complex::new(T::zero(), T::zero());
            for j in 0..n1 {
                df += profile[j] * Complex::new(self.dmat[[i, j]], T::zero());
            }
            grad_sq += self.w[i] * df.norm_sqr();
        }
        let mut l2_sq = T::zero();
        for i in 0..n1 {
            l2_sq += self.w[i] * profile[i].norm_sqr();
        }
        QuadraticForm {
            re_lf_f,
            grad_sq,
            l2_sq,
        }
    }

    /// Minimum of `Re⟨Lf, f⟩ / ‖f‖²` over seeded random wall-vanishing
    /// profiles. The continuum value is `(‖f'‖² + k²‖f‖²) / (A‖f‖²) > 0`;
    /// a noticeably negative return means the discretization broke the
    /// dissipation structure.
    pub fn numerical_range_min(&self, seed: u64, trials: usize) -> T {
        let mut best = pos_inf::<T>();
        for trial in 0..trials {
            let spec = ProfileSpec {
                seed: seed.wrapping_add(trial as u64),
                degree: (self.ny / 2).saturating_sub(2).min(40),
                amplitude: T::one(),
            };
            let f = band_limited_profile(&self.y, &spec, true);
            let q = self.quadratic_form(&f);
            if q.l2_sq > T::zero() {
                best = best.min(q.re_lf_f / q.l2_sq);
            }
        }
        best
    }

    /// Solve `(L - ikλ) f = F` with `f(±1) = 0` by dense LU on the full
    /// collocation system. The residual is measured on the interior rows in
    /// the quadrature norm and gated by the backward-error criterion shared
    /// with the other elliptic solvers.
    pub fn resolvent_solve(&self, lambda: T, forcing: &[Complex<T>]) -> Result<ResolventSolution<T>> {
        let n1 = self.ny + 1;
        if forcing.len() != n1 {
            return Err(Error::Usage(format!(
                "forcing has {} entries, operator wants {}",
                forcing.len(),
                n1
            )));
        }
        // The walls are eliminated rather than imposed as identity rows, so
        // the returned profile vanishes there exactly instead of up to the
        // rounding of a pivoted solve.
        let shift = Complex::new(T::zero(), self.kf() * lambda);
        let m = self.ny - 1;
        let mut b = DMatrix::<Complex<T>>::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                b[(i, j)] = self.op_full[(i + 1, j + 1)];
            }
            b[(i, i)] -= shift;
        }
        let rhs = DVector::<Complex<T>>::from_fn(m, |i, _| forcing[i + 1]);
        let lu = b.lu();
        let sol_int = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Solver("resolvent system is singular".into()))?;
        let mut sol = vec![Complex::new(T::zero(), T::zero()); n1];
        for i in 0..m {
            sol[i + 1] = sol_int[i];
        }

        // Recompute the defect against the unmodified operator rows.
        let mut res_sq = T::zero();
        let mut fnorm_sq = T::zero();
        let mut xnorm_sq = T::zero();
        for i in 0..n1 {
            fnorm_sq += self.w[i] * forcing[i].norm_sqr();
            xnorm_sq += self.w[i] * sol[i].norm_sqr();
        }
        for i in 1..self.ny {
            let mut lf = -shift * sol[i];
            for j in 0..n1 {
                lf += self.op_full[(i, j)] * sol[j];
            }
            let d = lf - forcing[i];
            res_sq += self.w[i] * d.norm_sqr();
        }
        let residual = res_sq.sqrt();
        let forcing_norm = fnorm_sq.sqrt();
        let shifted_opnorm = self.opnorm + (self.kf() * lambda).abs();
        if !residual_acceptable(residual, shifted_opnorm, xnorm_sq.sqrt(), forcing_norm) {
            return Err(Error::Solver(format!(
                "resolvent defect {} too large for operator scale {}",
                residual.as_f64(),
                shifted_opnorm.as_f64()
            )));
        }
        Ok(ResolventSolution {
            profile: sol,
            residual,
            forcing_norm,
        })
    }

    fn shifted(&self, mu: T) -> DMatrix<Complex<T>> {
        let mut b = self.weighted.clone();
        let s = Complex::new(T::zero(), mu);
        for i in 0..b.nrows() {
            b[(i, i)] -= s;
        }
        b
    }

    /// Smallest singular value of the shifted operator `L - iμ`, via a full
    /// singular value decomposition.
    pub fn sigma_min_svd(&self, mu: T) -> Result<T> {
        let b = self.shifted(mu);
        let svd = b.svd(false, false);
        let smin = svd
            .singular_values
            .iter()
            .cloned()
            .fold(pos_inf::<T>(), |m, s| m.min(s));
        if !smin.is_finite() {
            return Err(Error::Solver("singular value decomposition failed".into()));
        }
        Ok(smin)
    }

    /// Smallest singular value of `L - iμ` by inverse subspace iteration on
    /// the normal equations, an algorithm independent of the SVD route. A
    /// block of three vectors is iterated because the smallest singular
    /// values come in nearly degenerate pairs (the channel is symmetric
    /// under `y → -y`), which stalls single-vector iteration.
    pub fn sigma_min_inverse_iteration(&self, mu: T) -> Result<T> {
        let b = self.shifted(mu);
        let m = b.nrows();
        let block = 3.min(m);
        let lu = b.clone().lu();
        let luh = b.adjoint().lu();

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed_0b10);
        let mut panel: Vec<DVector<Complex<T>>> = (0..block)
            .map(|_| {
                DVector::from_fn(m, |_, _| {
                    Complex::new(
                        T::lit(rng.random_range(-1.0..1.0f64)),
                        T::lit(rng.random_range(-1.0..1.0f64)),
                    )
                })
            })
            .collect();
        orthonormalize(&mut panel)?;

        let mut sigma = pos_inf::<T>();
        let mut stable = 0;
        for _ in 0..200 {
            for v in panel.iter_mut() {
                let w1 = luh
                    .solve(&*v)
                    .ok_or_else(|| Error::Solver("adjoint system is singular".into()))?;
                *v = lu
                    .solve(&w1)
                    .ok_or_else(|| Error::Solver("shifted system is singular".into()))?;
            }
            orthonormalize(&mut panel)?;
            // Ritz extraction: smallest singular value of B restricted to
            // the current subspace.
            let bp = DMatrix::from_columns(
                &panel.iter().map(|v| &b * v).collect::<Vec<_>>(),
            );
            let svd = bp.svd(false, false);
            let est = svd
                .singular_values
                .iter()
                .cloned()
                .fold(pos_inf::<T>(), |acc, s| acc.min(s));
            let change = (est - sigma).abs();
            sigma = est;
            if change <= T::lit(1e-13) * sigma.max(T::default_epsilon()) {
                stable += 1;
                if stable >= 2 {
                    break;
                }
            } else {
                stable = 0;
            }
        }
        if !sigma.is_finite() {
            return Err(Error::Solver("inverse iteration diverged".into()));
        }
        Ok(sigma)
    }

    /// The propagator `e^{-tL}` on the weighted interior space.
    pub fn propagator(&self, t: T) -> Result<DMatrix<Complex<T>>> {
        if !(t >= T::zero()) {
            return Err(Error::Usage(format!(
                "propagator time must be non-negative, got {}",
                t.as_f64()
            )));
        }
        if t == T::zero() {
            return Ok(DMatrix::identity(self.weighted.nrows(), self.weighted.ncols()));
        }
        let scaled = &self.weighted * Complex::new(-t, T::zero());
        let e = scaled.exp();
        for v in e.iter() {
            if !v.re.is_finite() || !v.im.is_finite() {
                return Err(Error::Solver(
                    "matrix exponential overflowed; reduce the time step".into(),
                ));
            }
        }
        Ok(e)
    }

    /// Operator `L²` norm of the propagator at time `t`; exactly 1 at `t=0`.
    pub fn propagator_norm(&self, t: T) -> Result<T> {
        if t == T::zero() {
            return Ok(T::one());
        }
        Ok(operator_norm(&self.propagator(t)?))
    }
}

fn orthonormalize<T: Real>(panel: &mut [DVector<Complex<T>>]) -> Result<()> {
    for j in 0..panel.len() {
        for i in 0..j {
            let proj = panel[i].dotc(&panel[j]);
            let prev = panel[i].clone();
            panel[j] -= prev * proj;
        }
        let n = panel[j].norm();
        if !(n > T::zero()) {
            return Err(Error::Solver("iteration subspace collapsed".into()));
        }
        panel[j] /= Complex::new(n, T::zero());
    }
    Ok(())
}

fn operator_norm<T: Real>(m: &DMatrix<Complex<T>>) -> T {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(T::zero(), |acc, s| acc.max(s))
}

/// Deterministic band-limited test profile: a Chebyshev series with
/// `1/(1+m)`-damped random complex coefficients up to `degree`, optionally
/// multiplied by `(1-y²)` so it vanishes at the walls.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ProfileSpec<T: Real> {
    pub seed: u64,
    pub degree: usize,
    pub amplitude: T,
}

pub fn band_limited_profile<T: Real>(
    y: &[T],
    spec: &ProfileSpec<T>,
    vanish_at_walls: bool,
) -> Vec<Complex<T>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.seed);
    let coeffs: Vec<Complex<T>> = (0..=spec.degree)
        .map(|m| {
            let damp = spec.amplitude / T::of_usize(m + 1);
            Complex::new(
                T::lit(rng.random_range(-1.0..1.0f64)) * damp,
                T::lit(rng.random_range(-1.0..1.0f64)) * damp,
            )
        })
        .collect();
    y.iter()
        .map(|&yj| {
            let theta = yj.clamp(-T::one(), T::one()).acos();
            let mut v = Complex::new(T::zero(), T::zero());
            for (m, c) in coeffs.iter().enumerate() {
                v += *c * Complex::new((T::of_usize(m) * theta).cos(), T::zero());
            }
            if vanish_at_walls {
                v * Complex::new(T::one() - yj * yj, T::zero())
            } else {
                v
            }
        })
        .collect()
}

/// Which part of the real shift line a scan point belongs to. The three
/// parts exercise genuinely different mechanisms: outside `[0, 1]` the
/// advective phase never stalls, inside it there is a critical layer where
/// `1 - y² = λ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Negative,
    CriticalLayer,
    Beyond,
}

impl Regime {
    pub fn of<T: Real>(lambda: T) -> Self {
        if lambda < T::zero() {
            Regime::Negative
        } else if lambda <= T::one() {
            Regime::CriticalLayer
        } else {
            Regime::Beyond
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Regime::Negative => "negative",
            Regime::CriticalLayer => "critical_layer",
            Regime::Beyond => "beyond",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ScanPoint<T: Real> {
    pub lambda: T,
    pub sigma_min: T,
    pub regime: Regime,
}

/// Scan of the shifted operator over a grid of real `λ`, with the derived
/// uniform constant `C_emp = sup_λ A^{-1/2} |k|^{1/2} / σ_min(λ)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ResolventScan<T: Real> {
    pub a: T,
    pub k: i32,
    /// Grid size at which the scan converged.
    pub ny: usize,
    pub points: Vec<ScanPoint<T>>,
    pub c_emp: T,
    pub lambda_worst: T,
    pub regime_worst: Regime,
}

impl<T: Real> ResolventScan<T> {
    /// Largest resolvent norm over the scan, `sup_λ 1/σ_min`.
    pub fn sup_resolvent_norm(&self) -> T {
        let mut worst = T::zero();
        for p in &self.points {
            worst = worst.max(T::one() / p.sigma_min);
        }
        worst
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("a,k,lambda,sigma_min,regime\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.a.as_f64(),
                self.k,
                p.lambda.as_f64(),
                p.sigma_min.as_f64(),
                p.regime.tag()
            ));
        }
        out
    }
}

/// Shift grid with at least `per_regime` points in each of the three parts;
/// 0 and 1 are always present.
pub fn default_lambda_grid<T: Real>(per_regime: usize) -> Vec<T> {
    let n = per_regime.max(10);
    let mut grid = Vec::with_capacity(3 * n);
    let step = |lo: f64, hi: f64, i: usize, count: usize| {
        T::lit(lo + (hi - lo) * i as f64 / (count - 1) as f64)
    };
    for i in 0..n {
        grid.push(step(-1.0, -0.05, i, n));
    }
    for i in 0..n {
        grid.push(step(0.0, 1.0, i, n));
    }
    for i in 0..n {
        grid.push(step(1.05, 2.0, i, n));
    }
    grid
}

/// Knobs for [`scan_resolvent`]. The scan starts at `ny0` and doubles the
/// grid until no `σ_min` moves by more than `rel_tol`, giving up at `ny_cap`.
#[derive(Debug, Clone, Copy)]
pub struct ScanOptions {
    pub ny0: usize,
    pub ny_cap: usize,
    pub rel_tol: f64,
    pub per_regime: usize,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            ny0: 128,
            ny_cap: 512,
            rel_tol: 0.01,
            per_regime: 10,
        }
    }
}

fn scan_one<T: Real>(a: T, k: i32, opts: &ScanOptions) -> Result<ResolventScan<T>> {
    let lambdas = default_lambda_grid::<T>(opts.per_regime);
    let mut ny = opts.ny0;
    let mut prev: Option<Vec<T>> = None;
    loop {
        let op = OsOperator::new(a, k, ny, OperatorKind::Bare)?;
        let kf = T::of_usize(k.unsigned_abs() as usize);
        let mut sigmas = Vec::with_capacity(lambdas.len());
        for &lam in &lambdas {
            // shift by ikλ, i.e. μ = kλ on the imaginary axis
            let mu = (if k < 0 { -kf } else { kf }) * lam;
            sigmas.push(op.sigma_min_svd(mu)?);
        }
        let converged = prev.as_ref().is_some_and(|old: &Vec<T>| {
            old.iter()
                .zip(sigmas.iter())
                .all(|(&o, &s)| (o - s).abs() <= T::lit(opts.rel_tol) * s)
        });
        if converged {
            let mut points = Vec::with_capacity(lambdas.len());
            let mut c_emp = T::zero();
            let mut lambda_worst = lambdas[0];
            let scale = kf.sqrt() / a.sqrt();
            for (&lam, &s) in lambdas.iter().zip(sigmas.iter()) {
                points.push(ScanPoint {
                    lambda: lam,
                    sigma_min: s,
                    regime: Regime::of(lam),
                });
                let c = scale / s;
                if c > c_emp {
                    c_emp = c;
                    lambda_worst = lam;
                }
            }
            return Ok(ResolventScan {
                a,
                k,
                ny,
                points,
                c_emp,
                lambda_worst,
                regime_worst: Regime::of(lambda_worst),
            });
        }
        if ny >= opts.ny_cap {
            return Err(Error::Solver(format!(
                "resolvent scan for a={}, k={} did not settle below ny={}",
                a.as_f64(),
                k,
                opts.ny_cap
            )));
        }
        prev = Some(sigmas);
        ny *= 2;
    }
}

/// Scan every `(a, k)` cell. Cells are independent and run on the thread
/// pool; the output order matches the input order regardless of scheduling,
/// and a failed cell does not poison its neighbors.
pub fn scan_resolvent<T: Real>(
    a_list: &[T],
    k_list: &[i32],
    opts: &ScanOptions,
) -> Vec<Result<ResolventScan<T>>> {
    let cells: Vec<(T, i32)> = a_list
        .iter()
        .flat_map(|&a| k_list.iter().map(move |&k| (a, k)))
        .collect();
    cells
        .into_par_iter()
        .map(|(a, k)| scan_one(a, k, opts))
        .collect()
}

/// Knobs for [`compute_psi`].
#[derive(Debug, Clone, Copy)]
pub struct PsiOptions {
    pub ny: usize,
    /// Coarse grid points over the initial shift interval.
    pub coarse: usize,
    /// The shift interval is `[-span_factor |k|, span_factor |k|]`.
    pub span_factor: f64,
    pub golden_iters: usize,
}

impl Default for PsiOptions {
    fn default() -> Self {
        Self {
            ny: 128,
            coarse: 41,
            span_factor: 2.0,
            golden_iters: 40,
        }
    }
}

/// The pseudospectral decay proxy: `Ψ = min_μ σ_min(L - iμ)` over real
/// shifts, located by a coarse grid and sharpened by golden-section search.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PsiReport<T: Real> {
    pub a: T,
    pub k: i32,
    pub ny: usize,
    pub psi: T,
    pub mu_star: T,
    /// Whether `Ψ ≥ c' A^{-1/2}|k|^{1/2} + k²/A` for the calibrated `c'`.
    pub floor_ok: bool,
    pub floor_value: T,
    /// Whether the coarse interval had to be widened to trap the minimum.
    pub widened: bool,
}

pub fn compute_psi<T: Real>(a: T, k: i32, opts: &PsiOptions) -> Result<PsiReport<T>> {
    let op = OsOperator::new(a, k, opts.ny, OperatorKind::Bare)?;
    let kf = T::of_usize(k.unsigned_abs() as usize);
    let mut span = T::lit(opts.span_factor) * kf;
    let mut widened = false;

    let (mut lo, mut hi) = (-span, span);
    let coarse = opts.coarse.max(5);
    let mut best = (pos_inf::<T>(), T::zero(), 0usize);
    for attempt in 0..2 {
        best = (pos_inf::<T>(), T::zero(), 0);
        for i in 0..coarse {
            let mu = lo + (hi - lo) * T::of_usize(i) / T::of_usize(coarse - 1);
            let s = op.sigma_min_svd(mu)?;
            if s < best.0 {
                best = (s, mu, i);
            }
        }
        if best.2 != 0 && best.2 != coarse - 1 {
            break;
        }
        if attempt == 1 {
            return Err(Error::Solver(format!(
                "shift scan for a={}, k={} keeps minimizing at the interval edge",
                a.as_f64(),
                k
            )));
        }
        widened = true;
        span *= T::lit(2.0);
        lo = -span;
        hi = span;
    }

    // Golden-section refinement between the neighbors of the coarse argmin.
    let h = (hi - lo) / T::of_usize(coarse - 1);
    let (mut x0, mut x1) = (best.1 - h, best.1 + h);
    let phi = (T::lit(5.0).sqrt() - T::one()) / T::lit(2.0);
    let mut psi = best.0;
    let mut mu_star = best.1;
    for _ in 0..opts.golden_iters {
        let c = x1 - phi * (x1 - x0);
        let d = x0 + phi * (x1 - x0);
        let sc = op.sigma_min_svd(c)?;
        let sd = op.sigma_min_svd(d)?;
        if sc < psi {
            psi = sc;
            mu_star = c;
        }
        if sd < psi {
            psi = sd;
            mu_star = d;
        }
        if sc < sd {
            x1 = d;
        } else {
            x0 = c;
        }
    }

    let floor_value = T::lit(CALIBRATED_C_PRIME) * kf.sqrt() / a.sqrt() + kf * kf / a;
    Ok(PsiReport {
        a,
        k,
        ny: opts.ny,
        psi,
        mu_star,
        floor_ok: psi >= floor_value,
        floor_value,
        widened,
    })
}

/// Measured operator-norm decay of `e^{-tL}` with an exponential fit over
/// the tail of the sample window.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DecayFit<T: Real> {
    pub a: T,
    pub k: i32,
    pub kind: OperatorKind,
    pub ny: usize,
    pub times: Vec<T>,
    pub norms: Vec<T>,
    /// Fitted decay rate over the tail (`t` past half the window).
    pub rate: T,
    /// 95% half-width of the rate from the regression.
    pub rate_halfwidth: T,
    pub prefactor: T,
    /// Largest log-space deviation of a tail sample from the fit.
    pub fit_residual: T,
}

impl<T: Real> DecayFit<T> {
    pub fn csv(&self) -> String {
        let mut out = String::from("a,k,t,norm,kind\n");
        for (t, n) in self.times.iter().zip(self.norms.iter()) {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.a.as_f64(),
                self.k,
                t.as_f64(),
                n.as_f64(),
                self.kind.tag()
            ));
        }
        out
    }

    /// Check the tail samples against the fitted envelope.
    pub fn envelope_holds(&self) -> bool {
        let t_split = (self.times[0] + self.times[self.times.len() - 1]) / T::lit(2.0);
        let slack = (self.fit_residual + T::lit(1e-9)).exp();
        self.times
            .iter()
            .zip(self.norms.iter())
            .filter(|(t, _)| **t >= t_split)
            .all(|(&t, &n)| n <= self.prefactor * (-self.rate * t).exp() * slack)
    }
}

/// Largest excess of the measured norms over the pseudospectral envelope
/// `e^{π/2 - Ψ t}`; at most 1 (up to rounding) when the operator is
/// accretive, by the Gearhart-Prüss-type bound.
pub fn gp_bound_excess<T: Real>(fit: &DecayFit<T>, psi: T) -> T {
    let mut worst = T::zero();
    for (&t, &n) in fit.times.iter().zip(fit.norms.iter()) {
        let envelope = (T::frac_pi_2() - psi * t).exp();
        worst = worst.max(n / envelope);
    }
    worst
}

/// Fit `ln n = ln C - r t` over the samples with `t` past half the window.
/// Returns `(rate, halfwidth, prefactor, residual)`.
pub fn fit_decay<T: Real>(times: &[T], norms: &[T]) -> Result<(T, T, T, T)> {
    if times.len() != norms.len() || times.len() < 4 {
        return Err(Error::Usage(
            "decay fit needs at least four matching samples".into(),
        ));
    }
    let t_split = (times[0] + times[times.len() - 1]) / T::lit(2.0);
    let tail: Vec<(T, T)> = times
        .iter()
        .zip(norms.iter())
        .filter(|(&t, _)| t >= t_split)
        .map(|(&t, &n)| (t, n))
        .collect();
    if tail.len() < 3 {
        return Err(Error::Usage("decay fit tail has fewer than 3 samples".into()));
    }
    for (t, n) in &tail {
        if !(*n > T::zero()) || !n.is_finite() {
            return Err(Error::Solver(format!(
                "norm sample {} at t={} is not a positive number",
                n.as_f64(),
                t.as_f64()
            )));
        }
    }
    let n = T::of_usize(tail.len());
    let sx: T = tail.iter().map(|(t, _)| *t).sum();
    let sy: T = tail.iter().map(|(_, v)| v.ln()).sum();
    let sxx: T = tail.iter().map(|(t, _)| *t * *t).sum();
    let sxy: T = tail.iter().map(|(t, v)| *t * v.ln()).sum();
    let denom = n * sxx - sx * sx;
    if !(denom > T::zero()) {
        return Err(Error::Usage("decay fit times are degenerate".into()));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mut ss = T::zero();
    let mut max_dev = T::zero();
    for (t, v) in &tail {
        let e = v.ln() - (intercept + slope * *t);
        ss += e * e;
        max_dev = max_dev.max(e.abs());
    }
    let dof = T::of_usize(tail.len().saturating_sub(2).max(1));
    let se = (ss / dof).sqrt() / (denom / n).sqrt();
    Ok((-slope, T::lit(1.96) * se, intercept.exp(), max_dev))
}

/// Compute `‖e^{-tL}‖` at the given times and fit the tail. Uniformly spaced
/// samples share one matrix exponential (successive multiplication); uneven
/// grids fall back to one exponential per sample.
pub fn measure_semigroup_decay<T: Real>(
    a: T,
    k: i32,
    kind: OperatorKind,
    t_samples: &[T],
    ny: usize,
) -> Result<DecayFit<T>> {
    if t_samples.len() < 4 {
        return Err(Error::Usage("need at least four sample times".into()));
    }
    for pair in t_samples.windows(2) {
        if !(pair[1] > pair[0]) {
            return Err(Error::Usage("sample times must be strictly increasing".into()));
        }
    }
    if !(t_samples[0] >= T::zero()) {
        return Err(Error::Usage("sample times must be non-negative".into()));
    }
    let op = OsOperator::new(a, k, ny, kind)?;

    let dt0 = t_samples[1] - t_samples[0];
    let uniform = t_samples.windows(2).all(|p| {
        ((p[1] - p[0]) - dt0).abs() <= T::lit(1e-9) * dt0
    });

    let mut norms = Vec::with_capacity(t_samples.len());
    if uniform {
        let step = op.propagator(dt0)?;
        let mut cur = op.propagator(t_samples[0])?;
        for (i, &t) in t_samples.iter().enumerate() {
            if i > 0 {
                cur = &step * &cur;
            }
            norms.push(if t == T::zero() {
                T::one()
            } else {
                operator_norm(&cur)
            });
        }
    } else {
        for &t in t_samples {
            norms.push(op.propagator_norm(t)?);
        }
    }
    for n in &norms {
        if !n.is_finite() {
            return Err(Error::Solver("propagator norm overflowed".into()));
        }
    }

    let (rate, rate_halfwidth, prefactor, fit_residual) = fit_decay(t_samples, &norms)?;
    Ok(DecayFit {
        a,
        k,
        kind,
        ny,
        times: t_samples.to_vec(),
        norms,
        rate,
        rate_halfwidth,
        prefactor,
        fit_residual,
    })
}

/// Setup for [`verify_timespace`]: initial profile, stationary divergence
/// forcing (a vector field given by two band-limited components), horizon
/// in units of `√A`, and step count for the trapezoidal time integrator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TimespaceSpec<T: Real> {
    pub ny: usize,
    pub horizon_tau: T,
    pub steps: usize,
    pub f0: Option<ProfileSpec<T>>,
    pub f2: Option<(ProfileSpec<T>, ProfileSpec<T>)>,
}

impl<T: Real> Default for TimespaceSpec<T> {
    fn default() -> Self {
        Self {
            ny: 128,
            horizon_tau: T::lit(8.0),
            steps: 2048,
            f0: Some(ProfileSpec {
                seed: 1,
                degree: 16,
                amplitude: T::one(),
            }),
            f2: None,
        }
    }
}

/// Outcome of one driven-response measurement: the three weighted norm
/// pieces, their combination, the right-hand side of the bound, and the
/// ratio of the two.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TimespaceReport<T: Real> {
    pub a: T,
    pub k: i32,
    pub kind: OperatorKind,
    pub a_rate: T,
    pub horizon: T,
    pub steps: usize,
    /// `sup_t e^{2ãt} ‖f‖²` with `ã = a_rate/√A`.
    pub sup_piece: T,
    /// `A^{-1/2} ∫ e^{2ãt} ‖f‖²`.
    pub int_piece: T,
    /// `A^{-1} ∫ e^{2ãt} ‖∇f‖²`.
    pub grad_piece: T,
    pub xa_sq: T,
    pub initial_sq: T,
    /// `A ∫ e^{2ãt} ‖f₂‖²` for the stationary forcing.
    pub forcing_sq: T,
    /// `xa_sq / (initial_sq + forcing_sq)`, 0 when everything vanishes.
    pub ratio: T,
    /// Tail decay rate of the unforced companion run, if there was initial
    /// data to measure it from.
    pub measured_rate: Option<T>,
    /// Set when the requested weight outruns the measured decay.
    pub weight_warning: bool,
}

pub fn verify_timespace<T: Real>(
    a: T,
    k: i32,
    kind: OperatorKind,
    spec: &TimespaceSpec<T>,
    a_rate: T,
) -> Result<TimespaceReport<T>> {
    if !(a_rate >= T::zero()) {
        return Err(Error::Param {
            name: "a_rate",
            reason: format!("weight rate must be non-negative, got {}", a_rate.as_f64()),
        });
    }
    if spec.steps < 16 {
        return Err(Error::Param {
            name: "steps",
            reason: "need at least 16 time steps".into(),
        });
    }
    let op = OsOperator::new(a, k, spec.ny, kind)?;
    let ny = spec.ny;
    let m = ny - 1;
    let horizon = spec.horizon_tau * a.sqrt();
    let dt = horizon / T::of_usize(spec.steps);
    let a_tilde = a_rate / a.sqrt();

    // Weighted interior coordinates throughout: Euclidean = L².
    let sqrt_w: Vec<T> = op.w[1..ny].iter().map(|w| w.sqrt()).collect();
    let to_weighted = |profile: &[Complex<T>]| -> DVector<Complex<T>> {
        DVector::from_fn(m, |i, _| profile[i + 1] * Complex::new(sqrt_w[i], T::zero()))
    };

    let f0_full: Vec<Complex<T>> = match &spec.f0 {
        Some(p) => band_limited_profile(&op.y, p, true),
        None => vec![Complex::new(T::zero(), T::zero()); ny + 1],
    };
    // Divergence of the stationary forcing field: ik f2x + (f2y)'.
    let kf = T::of_usize(k.unsigned_abs() as usize) * if k < 0 { -T::one() } else { T::one() };
    let (g_full, forcing_l2_sq) = match &spec.f2 {
        Some((sx, sy)) => {
            let f2x = band_limited_profile(&op.y, sx, false);
            let f2y = band_limited_profile(&op.y, sy, false);
            let mut g = vec![Complex::new(T::zero(), T::zero()); ny + 1];
            for i in 0..=ny {
                let mut dy = Complex::new(T::zero(), T::zero());
                for j in 0..=ny {
                    dy += f2y[j] * Complex::new(op.dmat[[i, j]], T::zero());
                }
                g[i] = Complex::new(T::zero(), kf) * f2x[i] + dy;
            }
            let mut fsq = T::zero();
            for i in 0..=ny {
                fsq += op.w[i] * (f2x[i].norm_sqr() + f2y[i].norm_sqr());
            }
            (g, fsq)
        }
        None => (vec![Complex::new(T::zero(), T::zero()); ny + 1], T::zero()),
    };

    let mut f = to_weighted(&f0_full);
    let g_w = to_weighted(&g_full);
    let initial_sq = f.norm_squared();

    // Trapezoidal stepping: (I + dt/2 M) f⁺ = (I - dt/2 M) f + dt g.
    let half = Complex::new(dt / T::lit(2.0), T::zero());
    let mmat = op.matrix();
    let mut aplus = mmat * half;
    let mut aminus = mmat * (-half);
    for i in 0..m {
        aplus[(i, i)] += Complex::new(T::one(), T::zero());
        aminus[(i, i)] += Complex::new(T::one(), T::zero());
    }
    let lu = aplus.lu();

    // Gradient norm of a weighted state: ‖f'‖² + k²‖f‖², differentiating
    // the full profile with zero walls.
    let grad_sq_of = |fw: &DVector<Complex<T>>| -> T {
        let mut full = vec![Complex::new(T::zero(), T::zero()); ny + 1];
        for i in 0..m {
            full[i + 1] = fw[i] / Complex::new(sqrt_w[i], T::zero());
        }
        let mut gsq = T::zero();
        for i in 0..=ny {
            let mut d = Complex::new(T::zero(), T::zero());
            for j in 0..=ny {
                d += full[j] * Complex::new(op.dmat[[i, j]], T::zero());
            }
            gsq += op.w[i] * d.norm_sqr();
        }
        gsq + kf * kf * fw.norm_squared()
    };

    let mut acc = crate::diagnostics::XaAccumulator::new(a_rate, a)?;
    acc.push(T::zero(), initial_sq.sqrt(), grad_sq_of(&f).sqrt())?;

    // Companion run without forcing, for the decay-rate diagnostic.
    let run_homogeneous = initial_sq > T::zero();
    let mut fh = f.clone();
    let mut hom_times = Vec::new();
    let mut hom_norms = Vec::new();
    let sample_stride = (spec.steps / 64).max(1);

    for step in 1..=spec.steps {
        let rhs = &aminus * &f + &g_w * Complex::new(dt, T::zero());
        f = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Solver("trapezoidal system is singular".into()))?;
        let t = dt * T::of_usize(step);
        acc.push(t, f.norm(), grad_sq_of(&f).sqrt())?;
        if run_homogeneous {
            let rhs_h = &aminus * &fh;
            fh = lu
                .solve(&rhs_h)
                .ok_or_else(|| Error::Solver("trapezoidal system is singular".into()))?;
            if step % sample_stride == 0 {
                hom_times.push(t);
                hom_norms.push(fh.norm());
            }
        }
    }
    if !f.norm().is_finite() {
        return Err(Error::NonFinite("driven profile"));
    }

    let sup_piece = acc.sup_part();
    let (int_raw, grad_raw) = acc.integral_parts();
    let ra = T::one() / a.sqrt();
    let int_piece = ra * int_raw;
    let grad_piece = ra * ra * grad_raw;
    let xa_sq = acc.value_sq();

    // Stationary forcing: ∫₀ᵀ e^{2ãs} ds in closed form.
    let weight_integral = if a_tilde == T::zero() {
        horizon
    } else {
        ((T::lit(2.0) * a_tilde * horizon).exp() - T::one()) / (T::lit(2.0) * a_tilde)
    };
    let forcing_sq = a * forcing_l2_sq * weight_integral;

    let denom = initial_sq + forcing_sq;
    let ratio = if denom > T::zero() {
        xa_sq / denom
    } else {
        T::zero()
    };

    let (measured_rate, weight_warning) = if run_homogeneous && hom_times.len() >= 8 {
        let (rate, _, _, _) = fit_decay(&hom_times, &hom_norms)?;
        (Some(rate), a_tilde >= rate)
    } else {
        (None, false)
    };

    Ok(TimespaceReport {
        a,
        k,
        kind,
        a_rate,
        horizon,
        steps: spec.steps,
        sup_piece,
        int_piece,
        grad_piece,
        xa_sq,
        initial_sq,
        forcing_sq,
        ratio,
        measured_rate,
        weight_warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    type C = Complex<f64>;

    #[test]
    fn rejects_bad_parameters() {
        assert!(OsOperator::<f64>::new(0.5, 1, 64, OperatorKind::Bare).is_err());
        assert!(OsOperator::<f64>::new(100.0, 0, 64, OperatorKind::Bare).is_err());
        assert!(OsOperator::<f64>::new(100.0, 1, 4, OperatorKind::Bare).is_err());
        assert!(OsOperator::<f64>::new(100.0, 1, 64, OperatorKind::Bare).is_ok());
    }

    #[test]
    fn zero_forcing_yields_zero_profile() {
        let op = OsOperator::<f64>::new(200.0, 1, 48, OperatorKind::Bare).unwrap();
        let f = vec![C::new(0.0, 0.0); 49];
        let sol = op.resolvent_solve(0.3, &f).unwrap();
        for v in &sol.profile {
            assert_eq!(v.re, 0.0);
            assert_eq!(v.im, 0.0);
        }
        assert_eq!(sol.residual, 0.0);
    }

    // Independent oracle: for f*(y) = 1 - y² the forcing
    //   F = (2 + k²(1-y²))/A + ik(1-y²-λ)(1-y²)
    // is known in closed form, so the solve is checked against pencil and
    // paper rather than against the matrix that produced it.
    #[test]
    fn manufactured_parabola_is_recovered() {
        for (k, lambda) in [(1i32, -0.4f64), (3, 0.3), (1, 1.7)] {
            let a = 500.0f64;
            let ny = 96;
            let op = OsOperator::<f64>::new(a, k, ny, OperatorKind::Bare).unwrap();
            let kf = k as f64;
            let forcing: Vec<C> = op
                .nodes()
                .iter()
                .map(|&y| {
                    let p = 1.0 - y * y;
                    C::new((2.0 + kf * kf * p) / a, kf * (p - lambda) * p)
                })
                .collect();
            let sol = op.resolvent_solve(lambda, &forcing).unwrap();
            assert!(sol.residual <= 1e-10 * sol.forcing_norm);
            assert_eq!(sol.profile[0], C::new(0.0, 0.0));
            assert_eq!(sol.profile[ny], C::new(0.0, 0.0));
            let mut err2 = 0.0;
            let mut ref2 = 0.0;
            for (i, &y) in op.nodes().iter().enumerate() {
                let exact = C::new(1.0 - y * y, 0.0);
                err2 += op.weights()[i] * (sol.profile[i] - exact).norm_sqr();
                ref2 += op.weights()[i] * exact.norm_sqr();
            }
            assert!(
                (err2 / ref2).sqrt() <= 1e-9,
                "k={k} lambda={lambda}: recovery error {}",
                (err2 / ref2).sqrt()
            );
        }
    }

    #[test]
    fn flipping_the_wavenumber_conjugates_the_solution() {
        let a = 300.0f64;
        let ny = 64;
        let lambda = 0.45;
        let plus = OsOperator::<f64>::new(a, 2, ny, OperatorKind::Bare).unwrap();
        let minus = OsOperator::<f64>::new(a, -2, ny, OperatorKind::Bare).unwrap();
        let forcing = band_limited_profile(
            plus.nodes(),
            &ProfileSpec {
                seed: 9,
                degree: 12,
                amplitude: 1.0,
            },
            false,
        );
        let conj_forcing: Vec<C> = forcing.iter().map(|v| v.conj()).collect();
        let sp = plus.resolvent_solve(lambda, &forcing).unwrap();
        let sm = minus.resolvent_solve(lambda, &conj_forcing).unwrap();
        let scale = plus.l2_norm(&sp.profile);
        for (u, v) in sp.profile.iter().zip(sm.profile.iter()) {
            assert!((u.conj() - v).norm_sqr().sqrt() <= 1e-12 * scale);
        }
    }

    // Re⟨Lf, f⟩ = (‖f'‖² + k²‖f‖²)/A is an integration-by-parts identity;
    // for profiles the quadrature resolves it must survive discretization.
    #[test]
    fn accretivity_identity_holds_for_smooth_profiles() {
        let op = OsOperator::<f64>::new(100.0, 1, 128, OperatorKind::Bare).unwrap();
        for seed in 0..20u64 {
            let f = band_limited_profile(
                op.nodes(),
                &ProfileSpec {
                    seed,
                    degree: 40,
                    amplitude: 1.0,
                },
                true,
            );
            let q = op.quadratic_form(&f);
            let expected = (q.grad_sq + q.l2_sq) / 100.0;
            let scale = expected.abs().max(1.0);
            assert!(
                (q.re_lf_f - expected).abs() <= 1e-10 * scale,
                "seed {seed}: identity gap {}",
                (q.re_lf_f - expected).abs() / scale
            );
        }
        assert!(op.numerical_range_min(11, 24) >= -1e-10);
        let fb = OsOperator::<f64>::new(100.0, 1, 128, OperatorKind::WithStreamFeedback).unwrap();
        // The feedback term is purely imaginary in the continuum form, so it
        // must not push the numerical range left either.
        assert!(fb.numerical_range_min(11, 24) >= -1e-10);
    }

    #[test]
    fn psi_is_bounded_by_sampled_shifts() {
        let opts = PsiOptions {
            ny: 64,
            ..PsiOptions::default()
        };
        let report = compute_psi(100.0f64, 1, &opts).unwrap();
        assert!(report.psi >= 0.0);
        let op = OsOperator::<f64>::new(100.0, 1, 64, OperatorKind::Bare).unwrap();
        for mu in [0.0, 0.3, 1.0] {
            assert!(report.psi <= op.sigma_min_svd(mu).unwrap() + 1e-12);
        }
    }

    #[test]
    fn propagator_starts_at_identity_and_contracts() {
        let op = OsOperator::<f64>::new(100.0, 1, 64, OperatorKind::Bare).unwrap();
        assert_eq!(op.propagator_norm(0.0).unwrap(), 1.0);
        let mut prev = 1.0;
        for i in 1..=6 {
            let n = op.propagator_norm(4.0 * i as f64).unwrap();
            assert!(n <= prev * (1.0 + 1e-12), "norm grew: {n} after {prev}");
            prev = n;
        }
    }

    // d f / dλ solves (L - ikλ) g = ik f, so a one-sided difference
    // quotient must converge to it at first order in the spacing.
    #[test]
    fn difference_quotient_tracks_the_shift_derivative() {
        let a = 300.0f64;
        let ny = 64;
        let op = OsOperator::<f64>::new(a, 1, ny, OperatorKind::Bare).unwrap();
        let forcing = band_limited_profile(
            op.nodes(),
            &ProfileSpec {
                seed: 3,
                degree: 10,
                amplitude: 1.0,
            },
            false,
        );
        let lambda = 0.4;
        let base = op.resolvent_solve(lambda, &forcing).unwrap();
        let deriv_rhs: Vec<C> = base.profile.iter().map(|v| C::new(0.0, 1.0) * v).collect();
        let deriv = op.resolvent_solve(lambda, &deriv_rhs).unwrap();
        let mut errs = Vec::new();
        for delta in [1e-2, 5e-3] {
            let shifted = op.resolvent_solve(lambda + delta, &forcing).unwrap();
            let quotient: Vec<C> = shifted
                .profile
                .iter()
                .zip(base.profile.iter())
                .map(|(s, b)| (s - b) / C::new(delta, 0.0))
                .collect();
            let diff: Vec<C> = quotient
                .iter()
                .zip(deriv.profile.iter())
                .map(|(q, d)| q - d)
                .collect();
            errs.push(op.l2_norm(&diff));
        }
        let ratio = errs[0] / errs[1];
        assert!(
            (1.5..3.0).contains(&ratio),
            "difference-quotient error should halve with delta: {errs:?}"
        );
    }

    #[test]
    fn exponential_samples_fit_exactly() {
        let times: Vec<f64> = (0..20).map(|i| i as f64 * 0.5).collect();
        let norms: Vec<f64> = times.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        let (rate, halfwidth, prefactor, residual) = fit_decay(&times, &norms).unwrap();
        assert!((rate - 0.7).abs() <= 1e-12);
        assert!(halfwidth <= 1e-10);
        assert!((prefactor - 3.0).abs() <= 1e-10);
        assert!(residual <= 1e-12);
    }

    #[test]
    fn degenerate_timespace_inputs_give_zero_ratio() {
        let spec = TimespaceSpec::<f64> {
            ny: 48,
            steps: 64,
            f0: None,
            f2: None,
            ..TimespaceSpec::default()
        };
        let report = verify_timespace(100.0, 1, OperatorKind::Bare, &spec, 0.3).unwrap();
        assert_eq!(report.ratio, 0.0);
        assert_eq!(report.xa_sq, 0.0);
        assert!(report.measured_rate.is_none());
    }

    #[test]
    fn doubling_the_forcing_leaves_the_ratio_unchanged() {
        let base = TimespaceSpec::<f64> {
            ny: 48,
            steps: 128,
            horizon_tau: 4.0,
            f0: None,
            f2: Some((
                ProfileSpec {
                    seed: 5,
                    degree: 10,
                    amplitude: 1.0,
                },
                ProfileSpec {
                    seed: 6,
                    degree: 10,
                    amplitude: 1.0,
                },
            )),
        };
        let mut doubled = base.clone();
        if let Some((fx, fy)) = &mut doubled.f2 {
            fx.amplitude = 2.0;
            fy.amplitude = 2.0;
        }
        let r1 = verify_timespace(100.0, 1, OperatorKind::Bare, &base, 0.3).unwrap();
        let r2 = verify_timespace(100.0, 1, OperatorKind::Bare, &doubled, 0.3).unwrap();
        assert!(r1.ratio > 0.0);
        assert!(
            ((r1.ratio - r2.ratio) / r1.ratio).abs() <= 1e-12,
            "quadratic scaling should cancel: {} vs {}",
            r1.ratio,
            r2.ratio
        );
    }

    #[test]
    fn lambda_grid_covers_all_regimes() {
        let grid = default_lambda_grid::<f64>(10);
        assert!(grid.iter().any(|&l| l == 0.0));
        assert!(grid.iter().any(|&l| l == 1.0));
        for regime in [Regime::Negative, Regime::CriticalLayer, Regime::Beyond] {
            let count = grid.iter().filter(|&&l| Regime::of(l) == regime).count();
            assert!(count >= 10, "{regime:?} has only {count} points");
        }
    }
}
