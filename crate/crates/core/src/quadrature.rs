//! Gauss-Hermite rules for integrals against a standard normal density.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_NODES: usize = 7;
const MAX_NODES: usize = 64;

/// Probabilists' Gauss-Hermite rule: `∫ f(z) φ(z) dz ≈ Σ w_k f(z_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes_per_dim: usize,
    /// Recentre each subject's integrand at its posterior mode.
    pub adaptive: bool,
    abscissae: Vec<f64>,
    weights: Vec<f64>,
}

impl Default for QuadratureRule {
    fn default() -> Self {
        QuadratureRule::new(DEFAULT_NODES).expect("default node count is valid")
    }
}

impl QuadratureRule {
    pub fn new(nodes: usize) -> Result<Self> {
        if nodes == 0 || nodes > MAX_NODES {
            return Err(Error::spec(format!(
                "node count must be in 1..={MAX_NODES}"
            )));
        }
        let (x, w) = hermite_physicists(nodes);
        let sqrt_pi = std::f64::consts::PI.sqrt();
        Ok(QuadratureRule {
            nodes_per_dim: nodes,
            adaptive: true,
            abscissae: x.iter().map(|v| v * std::f64::consts::SQRT_2).collect(),
            weights: w.iter().map(|v| v / sqrt_pi).collect(),
        })
    }

    pub fn non_adaptive(mut self) -> Self {
        self.adaptive = false;
        self
    }

    pub fn abscissae(&self) -> &[f64] {
        &self.abscissae
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Tensor-product grid in `dim` dimensions (1 or 2).
    pub fn grid(&self, dim: usize) -> Vec<GridNode> {
        let n = self.nodes_per_dim;
        match dim {
            1 => (0..n)
                .map(|a| GridNode {
                    z: [self.abscissae[a], 0.0],
                    log_weight: self.weights[a].ln(),
                })
                .collect(),
            _ => (0..n)
                .flat_map(|a| {
                    (0..n).map(move |b| GridNode {
                        z: [self.abscissae[a], self.abscissae[b]],
                        log_weight: (self.weights[a] * self.weights[b]).ln(),
                    })
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridNode {
    pub z: [f64; 2],
    pub log_weight: f64,
}

/// Nodes and weights for `∫ f(x) e^{-x²} dx`, ascending.
fn hermite_physicists(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[n - 1],
            3 => 1.91 * z - 0.91 * x[n - 2],
            _ => 2.0 * z - x[n - i + 1],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            // orthonormal recurrence
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j as f64 + 1.0)).sqrt() * p2
                    - (j as f64 / (j as f64 + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[n - 1 - i] = z;
        x[i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}
