//! Least-squares lines and finite-difference weights on scattered nodes.

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit<T> {
    pub slope: T,
    pub intercept: T,
    pub r_squared: T,
}

/// Ordinary least squares `y = slope * x + intercept`. `None` for fewer than
/// two points or zero spread in `x`.
pub fn linear_fit<T: Real>(xs: &[T], ys: &[T]) -> Option<LinearFit<T>> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let nf = T::from_usize_lossy(n);
    let mx = xs.iter().copied().sum::<T>() / nf;
    let my = ys.iter().copied().sum::<T>() / nf;
    let mut sxx = T::zero();
    let mut sxy = T::zero();
    let mut syy = T::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == T::zero() {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == T::zero() {
        T::one()
    } else {
        (sxy * sxy / (sxx * syy)).min(T::one())
    };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Weights `w` with `f^{(order)}(x0) ~ sum_k w_k f(nodes[k])`, exact for
/// polynomials of degree `< nodes.len()` (Fornberg's recursion).
pub fn fd_weights<T: Real>(x0: T, nodes: &[T], order: usize) -> Vec<T> {
    let n = nodes.len();
    assert!(n > order, "need more nodes than the derivative order");
    // c[j][k]: weight of node j for derivative k
    let mut c = vec![vec![T::zero(); order + 1]; n];
    let mut c1 = T::one();
    let mut c4 = nodes[0] - x0;
    c[0][0] = T::one();
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = T::one();
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    let kf = T::from_usize_lossy(k);
                    c[i][k] = c1 * (kf * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                let kf = T::from_usize_lossy(k);
                c[j][k] = (c4 * c[j][k] - kf * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[order]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 * x - 1.0).collect();
        let f = linear_fit(&xs, &ys).unwrap();
        assert_abs_diff_eq!(f.slope, 2.5, epsilon = 1e-14);
        assert_abs_diff_eq!(f.intercept, -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.r_squared, 1.0, epsilon = 1e-14);
        assert!(linear_fit(&[1.0], &[1.0]).is_none());
        assert!(linear_fit(&[1.0, 1.0], &[1.0, 2.0]).is_none());
    }

    #[test]
    fn uniform_weights_match_classic_stencil() {
        let nodes = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let w = fd_weights(0.0, &nodes, 1);
        let classic = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(classic) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
        let w2 = fd_weights(0.0, &nodes, 2);
        let classic2 = [-1.0 / 12.0, 4.0 / 3.0, -2.5, 4.0 / 3.0, -1.0 / 12.0];
        for (a, b) in w2.iter().zip(classic2) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn scattered_weights_exact_on_quartics() {
        let nodes = [0.1, 0.35, 0.4, 0.9, 1.3];
        let x0 = 0.4;
        let w = fd_weights(x0, &nodes, 1);
        let f = |x: f64| 3.0 * x.powi(4) - x.powi(3) + 0.5 * x - 2.0;
        let df = |x: f64| 12.0 * x.powi(3) - 3.0 * x * x + 0.5;
        let approx: f64 = nodes.iter().zip(&w).map(|(&x, &wk)| wk * f(x)).sum();
        assert_abs_diff_eq!(approx, df(x0), epsilon = 1e-11);
    }
}
