//! Chebyshev-Gauss-Lobatto nodes, collocation differentiation matrices and
//! Clenshaw-Curtis quadrature weights on [-1, 1].

use ndarray::Array2;

use crate::scalar::Real;

/// Gauss-Lobatto nodes `y_j = cos(pi j / n)`, `j = 0..=n`, decreasing from
/// `y_0 = 1` to `y_n = -1`.
pub fn nodes<T: Real>(n: usize) -> Vec<T> {
    let pi = T::pi();
    let nn = T::of_usize(n);
    (0..=n)
        .map(|j| {
            // cos is exact at the endpoints and symmetric in between
            if j == 0 {
                T::one()
            } else if j == n {
                -T::one()
            } else if 2 * j == n {
                T::zero()
            } else {
                (pi * T::of_usize(j) / nn).cos()
            }
        })
        .collect()
}

/// First-derivative collocation matrix on the Gauss-Lobatto nodes.
///
/// Off-diagonal entries follow the classical formula; the diagonal uses the
/// negative-sum trick so the matrix annihilates constants to rounding.
pub fn diffmat<T: Real>(y: &[T]) -> Array2<T> {
    let n = y.len() - 1;
    let mut d = Array2::<T>::zeros((n + 1, n + 1));
    let c = |i: usize| -> T {
        let base = if i == 0 || i == n { T::lit(2.0) } else { T::one() };
        if i % 2 == 0 {
            base
        } else {
            -base
        }
    };
    for i in 0..=n {
        let mut row_sum = T::zero();
        for j in 0..=n {
            if i != j {
                let v = c(i) / c(j) / (y[i] - y[j]);
                d[(i, j)] = v;
                row_sum += v;
            }
        }
        d[(i, i)] = -row_sum;
    }
    d
}

/// Clenshaw-Curtis weights for the Gauss-Lobatto nodes; exact for
/// polynomials of degree `n` and summing to the interval length 2.
pub fn clencurt<T: Real>(n: usize) -> Vec<T> {
    let pi = T::pi();
    let nn = T::of_usize(n);
    let mut w = vec![T::zero(); n + 1];
    let even = n % 2 == 0;
    let end = if even {
        T::one() / (nn * nn - T::one())
    } else {
        T::one() / (nn * nn)
    };
    w[0] = end;
    w[n] = end;
    for j in 1..n {
        let theta = pi * T::of_usize(j) / nn;
        let mut v = T::one();
        let mmax = if even { n / 2 - 1 } else { (n - 1) / 2 };
        for m in 1..=mmax {
            let mm = T::of_usize(m);
            v -= T::lit(2.0) * (T::lit(2.0) * mm * theta).cos()
                / (T::lit(4.0) * mm * mm - T::one());
        }
        if even {
            v -= (nn * theta).cos() / (nn * nn - T::one());
        }
        w[j] = T::lit(2.0) * v / nn;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn nodes_are_decreasing_with_exact_endpoints() {
        let y = nodes::<f64>(16);
        assert_eq!(y[0], 1.0);
        assert_eq!(y[16], -1.0);
        assert_eq!(y[8], 0.0);
        for j in 1..=16 {
            assert!(y[j] < y[j - 1]);
        }
    }

    #[test]
    fn diffmat_annihilates_constants() {
        let y = nodes::<f64>(24);
        let d = diffmat(&y);
        // relative to the operator scale ~ n^2
        let scale: f64 = d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for i in 0..=24 {
            let row_sum: f64 = (0..=24).map(|j| d[(i, j)]).sum();
            assert!(row_sum.abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn diffmat_is_exact_on_low_degree_polynomials() {
        let y = nodes::<f64>(12);
        let d = diffmat(&y);
        // y^3 -> 3 y^2
        for i in 0..=12 {
            let got: f64 = (0..=12).map(|j| d[(i, j)] * y[j].powi(3)).sum();
            assert_relative_eq!(got, 3.0 * y[i] * y[i], max_relative = 1e-12, epsilon = 1e-12);
        }
    }

    #[test]
    fn diffmat_hits_spectral_accuracy_on_exp() {
        let y = nodes::<f64>(32);
        let d = diffmat(&y);
        let mut worst = 0.0_f64;
        for i in 0..=32 {
            let got: f64 = (0..=32).map(|j| d[(i, j)] * y[j].exp()).sum();
            worst = worst.max((got - y[i].exp()).abs() / y[i].exp());
        }
        assert!(worst <= 1e-10, "relative error {worst:.3e}");
    }

    #[test]
    fn clencurt_integrates_polynomials() {
        for n in [8usize, 9, 16, 33] {
            let w = clencurt::<f64>(n);
            let y = nodes::<f64>(n);
            let total: f64 = w.iter().sum();
            assert_relative_eq!(total, 2.0, max_relative = 1e-13);
            let quad_y2: f64 = (0..=n).map(|j| w[j] * y[j] * y[j]).sum();
            assert_relative_eq!(quad_y2, 2.0 / 3.0, max_relative = 1e-12);
            let quad_y6: f64 = (0..=n).map(|j| w[j] * y[j].powi(6)).sum();
            assert_relative_eq!(quad_y6, 2.0 / 7.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn clencurt_spectral_on_smooth_integrand() {
        let n = 32;
        let w = clencurt::<f64>(n);
        let y = nodes::<f64>(n);
        let quad: f64 = (0..=n).map(|j| w[j] * y[j].exp()).sum();
        let exact = 1.0_f64.exp() - (-1.0_f64).exp();
        assert_relative_eq!(quad, exact, max_relative = 1e-13);
    }
}
