//! Field storage in physical and spectral form.
//!
//! A [`PhysField`] stores real nodal values with shape `(ny + 1, nx)` — row
//! `j` is the `y` node `y_j`, column `i` the `x` node `x_i`. A [`ModeStack`]
//! stores the Fourier coefficients of a real field for `k = 0..=nx/2` with
//! shape `(nx/2 + 1, ny + 1)`, so each wavenumber is one contiguous row and
//! per-mode `y` solves touch a single slice. Negative wavenumbers are implied
//! by conjugate symmetry.

use std::sync::Arc;

use ndarray::{Array2, ArrayView1, ArrayViewMut1, Zip};
use num_complex::Complex;

use super::{check_same_grid, ChannelGrid};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Which norm [`PhysField::lp_norm`] computes. All of them use the tensor
/// quadrature (trapezoid in `x`, Clenshaw-Curtis in `y`) except `Inf`, which
/// is the max over nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lp {
    One,
    Two,
    Four,
    Inf,
}

/// Real nodal values on a [`ChannelGrid`].
#[derive(Clone)]
pub struct PhysField<T: Real> {
    grid: Arc<ChannelGrid<T>>,
    data: Array2<T>,
}

impl<T: Real> PhysField<T> {
    pub fn zeros(grid: &Arc<ChannelGrid<T>>) -> Self {
        Self {
            grid: grid.clone(),
            data: Array2::zeros((grid.ny() + 1, grid.nx())),
        }
    }

    /// Evaluate `f(x, y)` at every node.
    pub fn from_fn(grid: &Arc<ChannelGrid<T>>, mut f: impl FnMut(T, T) -> T) -> Self {
        let mut out = Self::zeros(grid);
        for j in 0..=grid.ny() {
            for i in 0..grid.nx() {
                out.data[[j, i]] = f(grid.x()[i], grid.y()[j]);
            }
        }
        out
    }

    pub fn from_data(grid: &Arc<ChannelGrid<T>>, data: Array2<T>) -> Result<Self> {
        if data.dim() != (grid.ny() + 1, grid.nx()) {
            return Err(Error::Usage(format!(
                "field shape {:?} does not match grid ({}, {})",
                data.dim(),
                grid.ny() + 1,
                grid.nx()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            data,
        })
    }

    pub fn grid(&self) -> &Arc<ChannelGrid<T>> {
        &self.grid
    }

    pub fn data(&self) -> &Array2<T> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array2<T> {
        &mut self.data
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    /// Forward transform, normalized so coefficients are the amplitudes in
    /// `f(x, y) = sum_k c_k(y) e^{ikx}`. Errors on non-finite input.
    pub fn to_spectral(&self) -> Result<ModeStack<T>> {
        self.check_finite("transform input")?;
        let nx = self.grid.nx();
        let ny = self.grid.ny();
        let mut out = Array2::default((nx / 2 + 1, ny + 1));
        let mut buf: Vec<Complex<T>> = vec![Complex::default(); nx];
        let scale = T::one() / T::of_usize(nx);
        for j in 0..=ny {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(self.data[[j, i]], T::zero());
            }
            self.grid.fft_fwd().process(&mut buf);
            for k in 0..=nx / 2 {
                out[[k, j]] = buf[k].scale(scale);
            }
        }
        Ok(ModeStack {
            grid: self.grid.clone(),
            data: out,
        })
    }

    /// Quadrature of `f` itself (no absolute value).
    pub fn integral(&self) -> T {
        let dx = self.grid.dx();
        let wy = self.grid.quad_y();
        let mut acc = T::zero();
        for (j, row) in self.data.outer_iter().enumerate() {
            let mut s = T::zero();
            for &v in row {
                s += v;
            }
            acc += wy[j] * s;
        }
        acc * dx
    }

    pub fn lp_norm(&self, p: Lp) -> T {
        match p {
            Lp::Inf => self
                .data
                .iter()
                .fold(T::zero(), |m, &v| m.max(v.abs())),
            Lp::One | Lp::Two | Lp::Four => {
                let pow = match p {
                    Lp::One => 1,
                    Lp::Two => 2,
                    _ => 4,
                };
                let dx = self.grid.dx();
                let wy = self.grid.quad_y();
                let mut acc = T::zero();
                for (j, row) in self.data.outer_iter().enumerate() {
                    let mut s = T::zero();
                    for &v in row {
                        let a = v.abs();
                        let mut t = a;
                        for _ in 1..pow {
                            t *= a;
                        }
                        s += t;
                    }
                    acc += wy[j] * s;
                }
                let total = acc * dx;
                match p {
                    Lp::One => total,
                    Lp::Two => total.sqrt(),
                    _ => total.sqrt().sqrt(),
                }
            }
        }
    }

    pub fn min_value(&self) -> T {
        self.data
            .iter()
            .fold(T::max_value().unwrap(), |m, &v| m.min(v))
    }

    pub fn max_value(&self) -> T {
        self.data
            .iter()
            .fold(-T::max_value().unwrap(), |m, &v| m.max(v))
    }

    /// Pointwise product; no dealiasing happens here (that is a spectral
    /// operation — see [`ModeStack::dealias`]).
    pub fn mul_pointwise(&self, other: &Self) -> Result<Self> {
        check_same_grid(&self.grid, &other.grid)?;
        let mut out = self.clone();
        Zip::from(&mut out.data)
            .and(&other.data)
            .for_each(|a, &b| *a *= b);
        Ok(out)
    }

    /// Multiply row `j` by `profile[j]` (a function of `y` alone).
    pub fn mul_y_profile(&mut self, profile: &[T]) {
        for (j, mut row) in self.data.outer_iter_mut().enumerate() {
            let c = profile[j];
            row.mapv_inplace(|v| v * c);
        }
    }

    pub fn scale(&mut self, c: T) {
        self.data.mapv_inplace(|v| v * c);
    }

    pub fn add_scaled(&mut self, other: &Self, c: T) -> Result<()> {
        check_same_grid(&self.grid, &other.grid)?;
        Zip::from(&mut self.data)
            .and(&other.data)
            .for_each(|a, &b| *a += b * c);
        Ok(())
    }
}

/// Fourier coefficients `c_k(y_j)` of a real field, `k = 0..=nx/2`.
#[derive(Clone)]
pub struct ModeStack<T: Real> {
    grid: Arc<ChannelGrid<T>>,
    data: Array2<Complex<T>>,
}

impl<T: Real> ModeStack<T> {
    pub fn zeros(grid: &Arc<ChannelGrid<T>>) -> Self {
        Self {
            grid: grid.clone(),
            data: Array2::default((grid.nx() / 2 + 1, grid.ny() + 1)),
        }
    }

    pub fn grid(&self) -> &Arc<ChannelGrid<T>> {
        &self.grid
    }

    pub fn data(&self) -> &Array2<Complex<T>> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array2<Complex<T>> {
        &mut self.data
    }

    pub fn row(&self, k: usize) -> ArrayView1<'_, Complex<T>> {
        self.data.row(k)
    }

    pub fn row_mut(&mut self, k: usize) -> ArrayViewMut1<'_, Complex<T>> {
        self.data.row_mut(k)
    }

    /// Inverse transform. Imaginary residue at the Nyquist row is discarded
    /// (a real field has a real Nyquist coefficient).
    pub fn to_physical(&self) -> PhysField<T> {
        let nx = self.grid.nx();
        let ny = self.grid.ny();
        let mut out = Array2::zeros((ny + 1, nx));
        let mut buf: Vec<Complex<T>> = vec![Complex::default(); nx];
        for j in 0..=ny {
            buf[0] = self.data[[0, j]];
            for k in 1..nx / 2 {
                buf[k] = self.data[[k, j]];
                buf[nx - k] = self.data[[k, j]].conj();
            }
            buf[nx / 2] = self.data[[nx / 2, j]];
            self.grid.fft_inv().process(&mut buf);
            for (i, b) in buf.iter().enumerate() {
                out[[j, i]] = b.re;
            }
        }
        PhysField {
            grid: self.grid.clone(),
            data: out,
        }
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        if self
            .data
            .iter()
            .all(|v| v.re.is_finite() && v.im.is_finite())
        {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    /// `x`-derivative: multiply row `k` by `ik`. The Nyquist row is zeroed —
    /// the sawtooth mode carries no usable first derivative.
    pub fn ddx(&self) -> Self {
        let mut out = self.clone();
        let kmax = self.grid.kmax();
        for (k, mut row) in out.data.outer_iter_mut().enumerate() {
            if k == kmax {
                row.fill(Complex::default());
            } else {
                let ik = Complex::new(T::zero(), T::of_usize(k));
                row.mapv_inplace(|v| v * ik);
            }
        }
        out
    }

    /// `y`-derivative via the collocation matrix.
    pub fn ddy(&self) -> Self {
        self.apply_y_matrix(self.grid.dmat())
    }

    /// `d^2/dy^2 - k^2` per row.
    pub fn laplacian(&self) -> Self {
        let mut out = self.apply_y_matrix(self.grid.dmat2());
        for (k, mut row) in out.data.outer_iter_mut().enumerate() {
            let k2 = T::of_usize(k * k);
            Zip::from(&mut row)
                .and(self.data.row(k))
                .for_each(|o, &s| *o = *o - s.scale(k2));
        }
        out
    }

    /// Apply a real `(ny+1) x (ny+1)` matrix along `y` for every mode. Splits
    /// into real/imaginary parts so the work runs as two real matrix products.
    pub fn apply_y_matrix(&self, m: &Array2<T>) -> Self {
        let re = self.data.mapv(|v| v.re);
        let im = self.data.mapv(|v| v.im);
        let mt = m.t();
        let out_re = re.dot(&mt);
        let out_im = im.dot(&mt);
        let mut out = Self::zeros(&self.grid);
        Zip::from(&mut out.data)
            .and(&out_re)
            .and(&out_im)
            .for_each(|o, &r, &i| *o = Complex::new(r, i));
        out
    }

    /// Keep only the `x`-mean (the `k = 0` row).
    pub fn project_zero(&self) -> Self {
        let mut out = Self::zeros(&self.grid);
        out.data.row_mut(0).assign(&self.data.row(0));
        out
    }

    /// Remove the `x`-mean (zero the `k = 0` row).
    pub fn project_nonzero(&self) -> Self {
        let mut out = self.clone();
        out.data.row_mut(0).fill(Complex::default());
        out
    }

    /// 2/3-rule truncation: zero every row with `k > nx/3`. No-op when the
    /// grid was built with `dealias = false`.
    pub fn dealias(&mut self) {
        if !self.grid.dealias() {
            return;
        }
        let cut = self.grid.kmax_kept();
        for (k, mut row) in self.data.outer_iter_mut().enumerate() {
            if k > cut {
                row.fill(Complex::default());
            }
        }
    }

    /// `L^2` norm over the channel, evaluated in spectral form: by Parseval
    /// the `x`-integral is `2 pi` times the (multiplicity-weighted) sum of
    /// squared moduli, and the `y`-integral uses the quadrature weights.
    pub fn l2_norm(&self) -> T {
        let wy = self.grid.quad_y();
        let kmax = self.grid.kmax();
        let two = T::lit(2.0);
        let mut acc = T::zero();
        for (k, row) in self.data.outer_iter().enumerate() {
            let mult = if k == 0 || k == kmax { T::one() } else { two };
            let mut sw = T::zero();
            for (j, v) in row.iter().enumerate() {
                sw += wy[j] * v.norm_sqr();
            }
            acc += mult * sw;
        }
        (T::two_pi() * acc).sqrt()
    }

    /// `L^2` norm of the nonzero modes only (`k >= 1`).
    pub fn l2_norm_nonzero(&self) -> T {
        let wy = self.grid.quad_y();
        let kmax = self.grid.kmax();
        let two = T::lit(2.0);
        let mut acc = T::zero();
        for (k, row) in self.data.outer_iter().enumerate().skip(1) {
            let mult = if k == kmax { T::one() } else { two };
            let mut sw = T::zero();
            for (j, v) in row.iter().enumerate() {
                sw += wy[j] * v.norm_sqr();
            }
            acc += mult * sw;
        }
        (T::two_pi() * acc).sqrt()
    }

    /// `L^2` norm of the gradient, `(|d/dx f|^2 + |d/dy f|^2)^{1/2}`.
    pub fn grad_l2_norm(&self) -> T {
        let dx = self.ddx().l2_norm();
        let dy = self.ddy().l2_norm();
        (dx * dx + dy * dy).sqrt()
    }

    /// Gradient norm restricted to the nonzero modes. `d/dx` annihilates the
    /// mean anyway, and `d/dy` acts within each wavenumber row, so the split
    /// is exact.
    pub fn grad_l2_norm_nonzero(&self) -> T {
        let dx = self.ddx().l2_norm();
        let dy = self.ddy().l2_norm_nonzero();
        (dx * dx + dy * dy).sqrt()
    }

    /// Total integral over the channel: `2 pi` times the quadrature of the
    /// `k = 0` coefficient.
    pub fn mass(&self) -> T {
        let wy = self.grid.quad_y();
        let mut acc = T::zero();
        for (j, v) in self.data.row(0).iter().enumerate() {
            acc += wy[j] * v.re;
        }
        T::two_pi() * acc
    }

    /// Real part of the `k = 0` row as a plain profile in `y`.
    pub fn mode0_profile(&self) -> Vec<T> {
        self.data.row(0).iter().map(|v| v.re).collect()
    }

    /// Overwrite the `k = 0` row with a real profile.
    pub fn set_mode0(&mut self, profile: &[T]) {
        for (j, v) in self.data.row_mut(0).iter_mut().enumerate() {
            *v = Complex::new(profile[j], T::zero());
        }
    }

    pub fn scale(&mut self, c: T) {
        self.data.mapv_inplace(|v| v.scale(c));
    }

    pub fn add_scaled(&mut self, other: &Self, c: T) -> Result<()> {
        check_same_grid(&self.grid, &other.grid)?;
        Zip::from(&mut self.data)
            .and(&other.data)
            .for_each(|a, &b| *a = *a + b.scale(c));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ChannelGrid;

    fn grid(nx: usize, ny: usize) -> Arc<ChannelGrid<f64>> {
        ChannelGrid::new(nx, ny, false).unwrap()
    }

    #[test]
    fn ddx_zeroes_nyquist_and_differentiates_sin() {
        let g = grid(16, 8);
        // sawtooth at the Nyquist wavenumber: cos(8x)
        let f = PhysField::from_fn(&g, |x, _| (8.0 * x).cos());
        let d = f.to_spectral().unwrap().ddx().to_physical();
        assert!(d.lp_norm(Lp::Inf) < 1e-12);

        let s = PhysField::from_fn(&g, |x, _| (3.0 * x).sin());
        let ds = s.to_spectral().unwrap().ddx().to_physical();
        let want = PhysField::from_fn(&g, |x, _| 3.0 * (3.0 * x).cos());
        let mut diff = ds.clone();
        diff.add_scaled(&want, -1.0).unwrap();
        assert!(diff.lp_norm(Lp::Inf) < 1e-12);
    }

    #[test]
    fn projections_split_and_are_idempotent() {
        let g = grid(16, 8);
        let f = PhysField::from_fn(&g, |x, y| 1.5 + y + (2.0 * x).cos() * (1.0 - y * y));
        let m = f.to_spectral().unwrap();
        let z = m.project_zero();
        let nz = m.project_nonzero();
        // the two parts sum back to the original
        let mut sum = z.clone();
        sum.add_scaled(&nz, 1.0).unwrap();
        let mut diff = sum;
        diff.add_scaled(&m, -1.0).unwrap();
        assert!(diff.l2_norm() < 1e-13);
        // idempotent / orthogonal
        assert!(z.project_nonzero().l2_norm() < 1e-15);
        assert!((z.project_zero().l2_norm() - z.l2_norm()).abs() < 1e-14);
        // the x-derivative kills the mean mode
        assert!(m.ddx().project_zero().l2_norm() < 1e-15);
    }

    #[test]
    fn norms_match_closed_forms() {
        let g = grid(32, 24);
        let one = PhysField::from_fn(&g, |_, _| 1.0);
        approx::assert_relative_eq!(one.lp_norm(Lp::One), 4.0 * std::f64::consts::PI, max_relative = 1e-13);

        let sx = PhysField::from_fn(&g, |x, _| x.sin());
        approx::assert_relative_eq!(
            sx.lp_norm(Lp::Two),
            (2.0 * std::f64::consts::PI).sqrt(),
            max_relative = 1e-13
        );

        let p = PhysField::from_fn(&g, |_, y| 1.0 - y * y);
        approx::assert_relative_eq!(p.lp_norm(Lp::One), 8.0 * std::f64::consts::PI / 3.0, max_relative = 1e-13);
        assert_eq!(p.lp_norm(Lp::Inf), 1.0);
    }

    #[test]
    fn parseval_l2_matches_quadrature_l2() {
        let g = grid(32, 16);
        let f = PhysField::from_fn(&g, |x, y| (x.cos() + 0.3) * (y + 0.2 * y * y) + (5.0 * x).sin());
        let m = f.to_spectral().unwrap();
        approx::assert_relative_eq!(m.l2_norm(), f.lp_norm(Lp::Two), max_relative = 1e-12);
    }

    #[test]
    fn dealias_truncates_only_high_rows() {
        let g = ChannelGrid::<f64>::new(24, 8, true).unwrap();
        let f = PhysField::from_fn(&g, |x, _| (3.0 * x).cos() + (11.0 * x).cos());
        let mut m = f.to_spectral().unwrap();
        m.dealias();
        // k = 3 survives (cutoff is nx/3 = 8), k = 11 dies
        assert!(m.row(3)[0].re > 0.4);
        assert!(m.row(11).iter().all(|v| v.norm_sqr() == 0.0));
    }

    #[test]
    fn transform_rejects_non_finite() {
        let g = grid(16, 8);
        let mut f = PhysField::zeros(&g);
        f.data_mut()[[2, 3]] = f64::NAN;
        assert!(f.to_spectral().is_err());
    }
}
