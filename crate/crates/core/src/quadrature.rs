//! Gauss-Hermite quadrature for expectations over a standard normal.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::{Error, Result};

/// Nodes and weights with `Σ wₖ f(zₖ) ≈ E[f(z)]`, `z ~ N(0, 1)`.
///
/// Exact for polynomials of degree up to `2K − 1`. Nodes are stored
/// symmetric about zero so odd moments vanish exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub-Welsch: eigen-decomposition of the Jacobi matrix of the
    /// probabilists' Hermite polynomials.
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument("quadrature order must be at least 1".into()));
        }
        let mut jacobi = DMatrix::zeros(order, order);
        for k in 1..order {
            let b = (k as f64).sqrt();
            jacobi[(k, k - 1)] = b;
            jacobi[(k - 1, k)] = b;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut nodes = vec![0.0; order];
        let mut weights = vec![0.0; order];
        for i in 0..order {
            let j = order - 1 - i;
            nodes[i] = 0.5 * (pairs[i].0 - pairs[j].0);
            weights[i] = 0.5 * (pairs[i].1 + pairs[j].1);
        }
        if order % 2 == 1 {
            nodes[order / 2] = 0.0;
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(GaussHermite { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Mirror nodes are summed in pairs, so odd functions integrate to
    /// exactly zero.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        let k = self.order();
        let mut s = 0.0;
        for i in 0..k / 2 {
            s += self.weights[i] * (f(self.nodes[i]) + f(self.nodes[k - 1 - i]));
        }
        if k % 2 == 1 {
            s += self.weights[k / 2] * f(0.0);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_moments() {
        let gh = GaussHermite::new(41).unwrap();
        assert_relative_eq!(gh.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert_eq!(gh.expect(|z| z), 0.0);
        assert_relative_eq!(gh.expect(|z| z * z), 1.0, epsilon = 1e-13);
        assert_relative_eq!(gh.expect(|z| z.powi(4)), 3.0, epsilon = 1e-12);
        assert_relative_eq!(gh.expect(|z| z.powi(8)), 105.0, epsilon = 1e-10);
        // E[cos z] = e^{-1/2}
        assert_relative_eq!(gh.expect(f64::cos), (-0.5f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn small_orders() {
        let gh = GaussHermite::new(2).unwrap();
        assert_relative_eq!(gh.nodes[1], 1.0, epsilon = 1e-15);
        assert_relative_eq!(gh.weights[0], 0.5, epsilon = 1e-15);
        let gh = GaussHermite::new(3).unwrap();
        assert_relative_eq!(gh.nodes[2], 3f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(gh.weights[1], 2.0 / 3.0, epsilon = 1e-14);
        assert!(GaussHermite::new(0).is_err());
    }
}
