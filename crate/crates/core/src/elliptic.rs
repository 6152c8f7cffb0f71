//! Per-wavenumber elliptic solves on the channel.
//!
//! Both solvers here reduce to real `(ny+1) x (ny+1)` boundary-value systems
//! per Fourier mode, factored once up front and reused: the chemoattractant
//! equation `-lap(c) + c = n` becomes `-c_k'' + (k^2 + 1) c_k = n_k`, and the
//! streamfunction equation `lap(phi) = omega` becomes
//! `(d^2/dy^2 - k^2) phi_k = omega_k` with `phi_k(+-1) = 0`. Complex
//! right-hand sides are handled as two real solves against the same
//! factorization. Every solve recomputes its residual from the differential
//! operator and refuses to return an answer that does not actually satisfy
//! the system.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_same_grid, ChannelGrid, ModeStack};
use crate::scalar::Real;

/// Wall behavior of the densities and the chemoattractant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityBc {
    /// Absorbing walls: the field vanishes at `y = +-1`.
    Dirichlet,
    /// No-flux walls: the `y`-derivative vanishes at `y = +-1`.
    Neumann,
}

/// Backward-error gate for the boundary-value solves.
///
/// The recomputed defect of an LU solution is bounded by
/// `c * eps * |M| * max(|x|, |b|)`, where `|M|` is the row-sum norm of the
/// collocation matrix — and that norm grows like `ny^4` through the second
/// derivative, so any flat threshold would reject perfectly good solves on
/// fine grids. `opnorm` must upper-bound the row sums over all wavenumbers
/// the solver owns.
pub(crate) fn residual_acceptable<T: Real>(residual: T, opnorm: T, xnorm: T, bnorm: T) -> bool {
    let eps = T::default_epsilon();
    let c = T::lit(64.0);
    residual <= c * eps * (opnorm * xnorm.max(bnorm) + T::one())
}

/// Row-sum (infinity) norm of a derivative matrix.
fn row_sum_norm<T: Real>(m: &ndarray::Array2<T>) -> T {
    let mut worst = T::zero();
    for row in m.outer_iter() {
        let s: T = row.iter().map(|v| v.abs()).sum();
        worst = worst.max(s);
    }
    worst
}

pub(crate) type Lu<T> = nalgebra::LU<T, nalgebra::Dyn, nalgebra::Dyn>;

pub(crate) fn factor<T: Real>(m: DMatrix<T>, what: &str, k: usize) -> Result<Lu<T>> {
    let lu = m.lu();
    // a fully pivoted zero on the diagonal means the system is singular
    if (0..lu.u().nrows()).any(|i| lu.u()[(i, i)] == T::zero()) {
        return Err(Error::Solver(format!("{what} matrix singular at k={k}")));
    }
    Ok(lu)
}

fn solve_complex_row<T: Real>(
    lu: &Lu<T>,
    re: DVector<T>,
    im: DVector<T>,
    what: &str,
) -> Result<(DVector<T>, DVector<T>)> {
    let xr = lu
        .solve(&re)
        .ok_or_else(|| Error::Solver(format!("{what}: real solve failed")))?;
    let xi = lu
        .solve(&im)
        .ok_or_else(|| Error::Solver(format!("{what}: imaginary solve failed")))?;
    Ok((xr, xi))
}

/// Solution of the chemoattractant equation together with the achieved
/// residual (Frobenius norm of the defect over all modes and nodes).
pub struct HelmholtzSolve<T: Real> {
    pub c: ModeStack<T>,
    pub residual: T,
}

/// Solver for `-lap(c) + c = n` with Dirichlet or Neumann walls. Factors one
/// real matrix per wavenumber at construction.
pub struct ChemoSolver<T: Real> {
    grid: Arc<ChannelGrid<T>>,
    bc: DensityBc,
    lus: Vec<Lu<T>>,
    opnorm: T,
}

impl<T: Real> ChemoSolver<T> {
    pub fn new(grid: &Arc<ChannelGrid<T>>, bc: DensityBc) -> Result<Self> {
        let n = grid.ny() + 1;
        let d2 = grid.dmat2();
        let d1 = grid.dmat();
        let opnorm = row_sum_norm(d2).max(row_sum_norm(d1))
            + T::of_usize(grid.kmax() * grid.kmax() + 1);
        let mut lus = Vec::with_capacity(grid.kmax() + 1);
        for k in 0..=grid.kmax() {
            let kk1 = T::of_usize(k * k) + T::one();
            let mut m = DMatrix::zeros(n, n);
            for j in 1..n - 1 {
                for l in 0..n {
                    m[(j, l)] = -d2[[j, l]];
                }
                m[(j, j)] += kk1;
            }
            match bc {
                DensityBc::Dirichlet => {
                    m[(0, 0)] = T::one();
                    m[(n - 1, n - 1)] = T::one();
                }
                DensityBc::Neumann => {
                    for l in 0..n {
                        m[(0, l)] = d1[[0, l]];
                        m[(n - 1, l)] = d1[[n - 1, l]];
                    }
                }
            }
            lus.push(factor(m, "chemoattractant", k)?);
        }
        Ok(Self {
            grid: grid.clone(),
            bc,
            lus,
            opnorm,
        })
    }

    pub fn bc(&self) -> DensityBc {
        self.bc
    }

    /// Solve for the chemoattractant given the total density (as modes).
    /// Wall rows of the right-hand side are replaced by the homogeneous
    /// boundary data before solving.
    pub fn solve(&self, density: &ModeStack<T>) -> Result<HelmholtzSolve<T>> {
        check_same_grid(&self.grid, density.grid())?;
        let n = self.grid.ny() + 1;
        let mut c = ModeStack::zeros(&self.grid);
        for k in 0..=self.grid.kmax() {
            let row = density.row(k);
            let mut re = DVector::zeros(n);
            let mut im = DVector::zeros(n);
            for j in 1..n - 1 {
                re[j] = row[j].re;
                im[j] = row[j].im;
            }
            let (xr, xi) = solve_complex_row(&self.lus[k], re, im, "chemoattractant")?;
            for (j, v) in c.row_mut(k).iter_mut().enumerate() {
                *v = Complex::new(xr[j], xi[j]);
            }
        }
        let residual = self.residual(&c, density)?;
        Ok(HelmholtzSolve { c, residual })
    }

    /// Frobenius defect of `-c'' + (k^2+1) c - n` on interior rows plus the
    /// boundary rows (`c` or `c'` at the walls). Errs when it exceeds the
    /// tolerance relative to the right-hand side.
    fn residual(&self, c: &ModeStack<T>, density: &ModeStack<T>) -> Result<T> {
        let ny = self.grid.ny();
        let d2c = c.apply_y_matrix(self.grid.dmat2());
        let d1c = c.ddy();
        let mut res2 = T::zero();
        let mut rhs2 = T::zero();
        let mut x2 = T::zero();
        for k in 0..=self.grid.kmax() {
            let kk1 = T::of_usize(k * k) + T::one();
            for j in 0..=ny {
                x2 += c.row(k)[j].norm_sqr();
                let defect = if j == 0 || j == ny {
                    match self.bc {
                        DensityBc::Dirichlet => c.row(k)[j],
                        DensityBc::Neumann => d1c.row(k)[j],
                    }
                } else {
                    let r = density.row(k)[j];
                    rhs2 += r.norm_sqr();
                    -d2c.row(k)[j] + c.row(k)[j].scale(kk1) - r
                };
                res2 += defect.norm_sqr();
            }
        }
        let residual = res2.sqrt();
        if !residual_acceptable(residual, self.opnorm, x2.sqrt(), rhs2.sqrt()) {
            return Err(Error::Solver(format!(
                "chemoattractant solve residual {} exceeds the backward-error bound",
                residual.as_f64()
            )));
        }
        Ok(residual)
    }
}

/// Streamfunction, velocity and solve diagnostics for one vorticity stack.
/// All stacks contain nonzero modes only (the `k = 0` row is zero); the mean
/// flow is prognostic elsewhere and can be injected with
/// [`embed_zero_mode_velocity`].
pub struct StreamSolve<T: Real> {
    pub phi: ModeStack<T>,
    /// `u^1 = d(phi)/dy`, the streamwise velocity perturbation.
    pub u1: ModeStack<T>,
    /// `u^2 = -d(phi)/dx`, the wall-normal velocity; exactly zero at walls.
    pub u2: ModeStack<T>,
    /// Frobenius defect of the solve, as in [`HelmholtzSolve`].
    pub residual: T,
    /// `L^2` norm of `div(u)`; should sit at roundoff.
    pub divergence: T,
    /// Largest wall value of `|phi''|` across modes. The solve imposes only
    /// impermeability (`phi = 0` at the walls), so the wall curvature — equal
    /// to the wall vorticity — is reported rather than constrained.
    pub wall_curvature: T,
}

/// Solver for `lap(phi) = omega` on the nonzero modes: per wavenumber
/// `1 <= k < nx/2`, `(d^2/dy^2 - k^2) phi_k = omega_k` with `phi_k(+-1) = 0`.
/// The `k = 0` row is ignored (no streamfunction for the mean) and the
/// Nyquist row is dropped since its `x`-derivative is not representable.
pub struct StreamSolver<T: Real> {
    grid: Arc<ChannelGrid<T>>,
    lus: Vec<Lu<T>>, // index k - 1
    opnorm: T,
}

impl<T: Real> StreamSolver<T> {
    pub fn new(grid: &Arc<ChannelGrid<T>>) -> Result<Self> {
        let n = grid.ny() + 1;
        let d2 = grid.dmat2();
        let opnorm = row_sum_norm(d2) + T::of_usize(grid.kmax() * grid.kmax());
        let mut lus = Vec::with_capacity(grid.kmax().saturating_sub(1));
        for k in 1..grid.kmax() {
            let kk = T::of_usize(k * k);
            let mut m = DMatrix::zeros(n, n);
            for j in 1..n - 1 {
                for l in 0..n {
                    m[(j, l)] = d2[[j, l]];
                }
                m[(j, j)] -= kk;
            }
            m[(0, 0)] = T::one();
            m[(n - 1, n - 1)] = T::one();
            lus.push(factor(m, "streamfunction", k)?);
        }
        Ok(Self {
            grid: grid.clone(),
            lus,
            opnorm,
        })
    }

    pub fn solve(&self, omega: &ModeStack<T>) -> Result<StreamSolve<T>> {
        check_same_grid(&self.grid, omega.grid())?;
        let n = self.grid.ny() + 1;
        let ny = self.grid.ny();
        let mut phi = ModeStack::zeros(&self.grid);
        for k in 1..self.grid.kmax() {
            let row = omega.row(k);
            let mut re = DVector::zeros(n);
            let mut im = DVector::zeros(n);
            for j in 1..n - 1 {
                re[j] = row[j].re;
                im[j] = row[j].im;
            }
            let (xr, xi) = solve_complex_row(&self.lus[k - 1], re, im, "streamfunction")?;
            for (j, v) in phi.row_mut(k).iter_mut().enumerate() {
                *v = Complex::new(xr[j], xi[j]);
            }
        }

        let u1 = phi.ddy();
        let mut u2 = phi.ddx();
        u2.scale(-T::one());
        for k in 0..=self.grid.kmax() {
            u2.row_mut(k)[0] = Complex::default();
            u2.row_mut(k)[ny] = Complex::default();
        }

        // defect of the solve, walls included
        let d2phi = phi.apply_y_matrix(self.grid.dmat2());
        let mut res2 = T::zero();
        let mut rhs2 = T::zero();
        let mut x2 = T::zero();
        let mut wall_curv = T::zero();
        for k in 1..self.grid.kmax() {
            let kk = T::of_usize(k * k);
            for j in 0..=ny {
                x2 += phi.row(k)[j].norm_sqr();
                let defect = if j == 0 || j == ny {
                    wall_curv = wall_curv.max(d2phi.row(k)[j].norm_sqr().sqrt());
                    phi.row(k)[j]
                } else {
                    let r = omega.row(k)[j];
                    rhs2 += r.norm_sqr();
                    d2phi.row(k)[j] - phi.row(k)[j].scale(kk) - r
                };
                res2 += defect.norm_sqr();
            }
        }
        let residual = res2.sqrt();
        if !residual_acceptable(residual, self.opnorm, x2.sqrt(), rhs2.sqrt()) {
            return Err(Error::Solver(format!(
                "streamfunction solve residual {} exceeds the backward-error bound",
                residual.as_f64()
            )));
        }

        let mut div = u1.ddx();
        div.add_scaled(&u2.ddy(), T::one())?;
        let divergence = div.l2_norm();

        Ok(StreamSolve {
            phi,
            u1,
            u2,
            residual,
            divergence,
            wall_curvature: wall_curv,
        })
    }
}

/// Add a prognostic mean-flow profile into the `k = 0` row of a streamwise
/// velocity stack (which the [`StreamSolver`] leaves empty).
pub fn embed_zero_mode_velocity<T: Real>(u1: &mut ModeStack<T>, profile: &[T]) -> Result<()> {
    let ny = u1.grid().ny();
    if profile.len() != ny + 1 {
        return Err(Error::Usage(format!(
            "mean-flow profile has {} entries, grid wants {}",
            profile.len(),
            ny + 1
        )));
    }
    for (j, v) in u1.row_mut(0).iter_mut().enumerate() {
        *v += Complex::new(profile[j], T::zero());
    }
    Ok(())
}
