//! Discretization of the periodic channel `T x [-1, 1]` with `|T| = 2 pi`:
//! uniform Fourier nodes in `x`, Chebyshev-Gauss-Lobatto collocation in `y`,
//! Clenshaw-Curtis quadrature in `y` and the trapezoid rule in `x`.

pub mod chebyshev;
mod field;
mod io;

use std::sync::Arc;

use ndarray::Array2;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub use field::{Lp, ModeStack, PhysField};
pub use io::{read_field_bin, read_field_csv, write_field_bin, write_field_csv};

/// Channel length in `x`; the wavenumbers are the integers.
pub fn domain_length<T: Real>() -> T {
    T::two_pi()
}

/// Collocation grid for the channel. Holds the nodes, the `y`-derivative
/// matrices, quadrature weights and the FFT plans shared by every field.
///
/// `ny` counts intervals: there are `ny + 1` Gauss-Lobatto nodes, ordered
/// decreasing from `y = 1` (index 0) to `y = -1` (index `ny`).
pub struct ChannelGrid<T: Real> {
    nx: usize,
    ny: usize,
    dealias: bool,
    x: Vec<T>,
    y: Vec<T>,
    /// Poiseuille profile `1 - y^2` at the nodes.
    shear: Vec<T>,
    /// Clenshaw-Curtis weights, summing to 2.
    wy: Vec<T>,
    /// Local node spacing in `y` (distance to the nearest neighbor).
    hy: Vec<T>,
    dmat: Array2<T>,
    dmat2: Array2<T>,
    fft_fwd: Arc<dyn Fft<T>>,
    fft_inv: Arc<dyn Fft<T>>,
}

impl<T: Real> ChannelGrid<T> {
    /// Build a grid with `nx` Fourier nodes (even, at least 8) and `ny + 1`
    /// Gauss-Lobatto nodes (`ny` at least 8). `dealias` controls whether
    /// product operations apply the 2/3-rule truncation.
    pub fn new(nx: usize, ny: usize, dealias: bool) -> Result<Arc<Self>> {
        if nx < 8 || nx % 2 != 0 {
            return Err(Error::Grid(format!("nx must be even and >= 8, got {nx}")));
        }
        if ny < 8 {
            return Err(Error::Grid(format!("ny must be >= 8, got {ny}")));
        }
        let x: Vec<T> = (0..nx)
            .map(|i| T::two_pi() * T::of_usize(i) / T::of_usize(nx))
            .collect();
        let y = chebyshev::nodes::<T>(ny);
        let shear: Vec<T> = y.iter().map(|&v| T::one() - v * v).collect();
        let wy = chebyshev::clencurt::<T>(ny);
        let mut hy = vec![T::zero(); ny + 1];
        for j in 0..=ny {
            let up = if j > 0 { y[j - 1] - y[j] } else { T::max_value().unwrap() };
            let dn = if j < ny { y[j] - y[j + 1] } else { T::max_value().unwrap() };
            hy[j] = up.min(dn);
        }
        let dmat = chebyshev::diffmat(&y);
        let dmat2 = dmat.dot(&dmat);
        let mut planner = FftPlanner::<T>::new();
        let fft_fwd = planner.plan_fft_forward(nx);
        let fft_inv = planner.plan_fft_inverse(nx);
        Ok(Arc::new(Self {
            nx,
            ny,
            dealias,
            x,
            y,
            shear,
            wy,
            hy,
            dmat,
            dmat2,
            fft_fwd,
            fft_inv,
        }))
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn dealias(&self) -> bool {
        self.dealias
    }

    pub fn x(&self) -> &[T] {
        &self.x
    }

    pub fn y(&self) -> &[T] {
        &self.y
    }

    /// `1 - y^2` at the `y` nodes.
    pub fn shear(&self) -> &[T] {
        &self.shear
    }

    /// Clenshaw-Curtis quadrature weights in `y`.
    pub fn quad_y(&self) -> &[T] {
        &self.wy
    }

    /// Nearest-neighbor spacing at each `y` node.
    pub fn spacing_y(&self) -> &[T] {
        &self.hy
    }

    /// Uniform spacing in `x`.
    pub fn dx(&self) -> T {
        T::two_pi() / T::of_usize(self.nx)
    }

    /// First-derivative collocation matrix in `y`.
    pub fn dmat(&self) -> &Array2<T> {
        &self.dmat
    }

    /// Second-derivative collocation matrix in `y`.
    pub fn dmat2(&self) -> &Array2<T> {
        &self.dmat2
    }

    /// Largest representable wavenumber; mode rows are `k = 0..=kmax`.
    pub fn kmax(&self) -> usize {
        self.nx / 2
    }

    /// Largest wavenumber kept by the 2/3 rule.
    pub fn kmax_kept(&self) -> usize {
        if self.dealias {
            self.nx / 3
        } else {
            self.nx / 2
        }
    }

    pub(crate) fn fft_fwd(&self) -> &Arc<dyn Fft<T>> {
        &self.fft_fwd
    }

    pub(crate) fn fft_inv(&self) -> &Arc<dyn Fft<T>> {
        &self.fft_inv
    }

    /// Two grids are compatible when they discretize identically.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.dealias == other.dealias
    }
}

/// Guard that two fields live on layout-compatible grids.
pub(crate) fn check_same_grid<T: Real>(a: &ChannelGrid<T>, b: &ChannelGrid<T>) -> Result<()> {
    if a.same_layout(b) {
        Ok(())
    } else {
        Err(Error::Usage(format!(
            "grid mismatch: ({}, {}) vs ({}, {})",
            a.nx(),
            a.ny(),
            b.nx(),
            b.ny()
        )))
    }
}
