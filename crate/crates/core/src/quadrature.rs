//! Tensor-product Gauss–Hermite quadrature for Gaussian expectations.

use crate::error::{Error, Result};

/// `q`-point Gauss–Hermite rule for the weight `exp(-t^2)` and its `N`-fold
/// tensor product.
///
/// The tensor nodes are rotated by the orthonormal DCT-II matrix. The weight
/// is rotation invariant, and the rotation keeps the node lattice from lining
/// up with the axis-parallel decision boundaries of Cartesian constellations,
/// where the unrotated rule converges slowly.
///
/// Expectations over `Z ~ N(0, N0/2 I_N)` become
/// `E[f(Z)] = sum_n w_n f(sqrt(N0) t_n)` with the tensor weights `w_n`
/// normalized by `pi^(N/2)`, which [`QuadratureGrid::tensor_weights`] returns.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    order: usize,
    dims: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    tensor_nodes: Vec<f64>,
    tensor_weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn new(order: usize, dims: usize) -> Result<Self> {
        if order == 0 || dims == 0 {
            return Err(Error::invalid("quadrature order and dims must be positive"));
        }
        let total = order
            .checked_pow(dims as u32)
            .filter(|_| order <= MAX_ORDER)
            .filter(|&t| t <= 50_000_000)
            .ok_or_else(|| Error::invalid(format!("tensor grid {order}^{dims} too large")))?;
        let (nodes, weights) = gauss_hermite(order);
        let norm = std::f64::consts::PI.sqrt();
        let mut tensor_nodes = Vec::with_capacity(total * dims);
        let mut tensor_weights = Vec::with_capacity(total);
        let rot = dct_matrix(dims);
        let mut idx = vec![0usize; dims];
        for _ in 0..total {
            let mut w = 1.0;
            for &i in &idx {
                w *= weights[i] / norm;
            }
            for row in rot.chunks_exact(dims) {
                tensor_nodes.push(row.iter().zip(&idx).map(|(r, &i)| r * nodes[i]).sum());
            }
            tensor_weights.push(w);
            for d in (0..dims).rev() {
                idx[d] += 1;
                if idx[d] < order {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(QuadratureGrid {
            order,
            dims,
            nodes,
            weights,
            tensor_nodes,
            tensor_weights,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// One-dimensional nodes, ascending.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// One-dimensional weights for `exp(-t^2)`; they sum to `sqrt(pi)`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of tensor nodes, `q^N`.
    pub fn len(&self) -> usize {
        self.tensor_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensor_weights.is_empty()
    }

    pub fn tensor_node(&self, n: usize) -> &[f64] {
        &self.tensor_nodes[n * self.dims..(n + 1) * self.dims]
    }

    /// Tensor weights normalized to sum to one.
    pub fn tensor_weights(&self) -> &[f64] {
        &self.tensor_weights
    }
}

/// Row-major orthonormal DCT-II matrix of size `n`.
fn dct_matrix(n: usize) -> Vec<f64> {
    let nf = n as f64;
    let mut m = Vec::with_capacity(n * n);
    for k in 0..n {
        let scale = if k == 0 {
            (1.0 / nf).sqrt()
        } else {
            (2.0 / nf).sqrt()
        };
        for j in 0..n {
            m.push(scale * (std::f64::consts::PI * (j as f64 + 0.5) * k as f64 / nf).cos());
        }
    }
    m
}

/// Largest supported one-dimensional order.
pub const MAX_ORDER: usize = 600;

/// Nodes (ascending) and weights of the `n`-point Gauss–Hermite rule.
///
/// Roots are bracketed by a sign scan of the orthonormal Hermite function
/// and refined by Newton steps kept inside the bracket.
///
/// # Panics
/// If `n` exceeds [`MAX_ORDER`].
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n <= MAX_ORDER, "Gauss-Hermite order {n} above {MAX_ORDER}");
    if n == 0 {
        return (Vec::new(), Vec::new());
    }
    let edge = (2.0 * n as f64 + 1.0).sqrt();
    let h = std::f64::consts::PI / (4.0 * edge);
    let mut pos = Vec::with_capacity(n / 2);
    let mut a = 0.5 * h;
    let mut fa = hermite_fn(n, a).0;
    while pos.len() < n / 2 {
        let b = a + h;
        let fb = hermite_fn(n, b).0;
        if fa == 0.0 {
            pos.push(a);
        } else if fa * fb < 0.0 {
            pos.push(refine(n, a, b, fa));
        }
        assert!(
            b < edge + 1.0,
            "Gauss-Hermite root scan lost a root at n={n}"
        );
        (a, fa) = (b, fb);
    }
    let mut x: Vec<f64> = pos.iter().rev().map(|z| -z).collect();
    if n % 2 == 1 {
        x.push(0.0);
    }
    x.extend(&pos);
    let w = x
        .iter()
        .map(|&z| {
            let r = std::f64::consts::SQRT_2 * (-0.5 * z * z).exp() / hermite_fn(n, z).1;
            r * r
        })
        .collect();
    (x, w)
}

/// `psi_n(z)` and `sqrt(2n) psi_{n-1}(z)`, the orthonormal Hermite
/// functions including the `exp(-z^2/2)` factor. The second value is the
/// derivative of the polynomial part, scaled the same way.
fn hermite_fn(n: usize, z: f64) -> (f64, f64) {
    const PIM4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
    let mut p1 = PIM4 * (-0.5 * z * z).exp();
    let mut p2 = 0.0;
    for j in 0..n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
    }
    (p1, (2.0 * n as f64).sqrt() * p2)
}

fn refine(n: usize, mut lo: f64, mut hi: f64, flo: f64) -> f64 {
    let mut z = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (f, d) = hermite_fn(n, z);
        if f == 0.0 {
            return z;
        }
        if (f < 0.0) == (flo < 0.0) {
            lo = z;
        } else {
            hi = z;
        }
        let newton = z - f / d;
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - z).abs() <= 1e-15 * z.abs().max(1.0) {
            return next;
        }
        z = next;
    }
    z
}
