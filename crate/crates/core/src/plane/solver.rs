//! Symmetric positive-definite solvers for conductance systems.
//!
//! Small systems use a sparse Cholesky factorization. Large systems fall
//! back to Jacobi-preconditioned conjugate gradients.

use nalgebra::DVector;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};

use super::PlaneError;

/// Node count above which the iterative solver is used.
pub const DIRECT_LIMIT: usize = 5000;
/// Relative residual target of the iterative solver.
pub const CG_TOLERANCE: f64 = 1e-10;

/// Conductance matrix `G` with optional fixed-voltage (Dirichlet) nodes.
///
/// Rows of fixed nodes become identity rows; their couplings move to the
/// right-hand side so the reduced matrix stays symmetric.
#[derive(Debug, Clone)]
pub(crate) struct LinearSystem {
    n: usize,
    diag: Vec<f64>,
    edges: Vec<(usize, usize, f64)>,
    fixed: Vec<Option<f64>>,
    method: Method,
}

#[derive(Debug, Clone)]
enum Method {
    Direct(Box<CscCholesky<f64>>),
    Iterative { inv_diag: Vec<f64> },
}

impl LinearSystem {
    /// `diag` holds shunt conductances only; edge conductances are added here.
    pub fn new(
        n: usize,
        mut diag: Vec<f64>,
        edges: Vec<(usize, usize, f64)>,
        fixed: Vec<Option<f64>>,
    ) -> Result<Self, PlaneError> {
        debug_assert_eq!(diag.len(), n);
        debug_assert_eq!(fixed.len(), n);
        for &(a, b, g) in &edges {
            diag[a] += g;
            diag[b] += g;
        }
        for (i, f) in fixed.iter().enumerate() {
            if f.is_some() {
                diag[i] = 1.0;
            }
        }
        let method = if n <= DIRECT_LIMIT {
            let mut coo = CooMatrix::new(n, n);
            for (i, &d) in diag.iter().enumerate() {
                coo.push(i, i, d);
            }
            for &(a, b, g) in &edges {
                if fixed[a].is_none() && fixed[b].is_none() {
                    coo.push(a, b, -g);
                    coo.push(b, a, -g);
                }
            }
            let chol = CscCholesky::factor(&CscMatrix::from(&coo)).map_err(|_| {
                PlaneError::Singular(
                    "conductance matrix is not positive definite; part of the plane \
                     has no path to an active source"
                        .into(),
                )
            })?;
            Method::Direct(Box::new(chol))
        } else {
            if let Some(i) = diag.iter().position(|&d| !(d > 0.0)) {
                return Err(PlaneError::Singular(format!(
                    "node {i} has no conductance to the rest of the system"
                )));
            }
            Method::Iterative {
                inv_diag: diag.iter().map(|d| 1.0 / d).collect(),
            }
        };
        Ok(LinearSystem {
            n,
            diag,
            edges,
            fixed,
            method,
        })
    }

    /// Solves for node voltages given current injections (A, positive into
    /// the node). Injections at fixed nodes are ignored.
    pub fn solve(&self, injections: &[f64]) -> Result<Vec<f64>, PlaneError> {
        let mut rhs = injections.to_vec();
        for (i, f) in self.fixed.iter().enumerate() {
            if let Some(v) = f {
                rhs[i] = *v;
            }
        }
        for &(a, b, g) in &self.edges {
            match (self.fixed[a], self.fixed[b]) {
                (Some(va), None) => rhs[b] += g * va,
                (None, Some(vb)) => rhs[a] += g * vb,
                _ => {}
            }
        }
        match &self.method {
            Method::Direct(chol) => Ok(chol.solve(&DVector::from_vec(rhs)).as_slice().to_vec()),
            Method::Iterative { inv_diag } => self.pcg(&rhs, inv_diag),
        }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            y[i] = self.diag[i] * x[i];
        }
        for &(a, b, g) in &self.edges {
            if self.fixed[a].is_none() && self.fixed[b].is_none() {
                y[a] -= g * x[b];
                y[b] -= g * x[a];
            }
        }
    }

    fn pcg(&self, rhs: &[f64], inv_diag: &[f64]) -> Result<Vec<f64>, PlaneError> {
        let n = self.n;
        let b_norm = norm(rhs);
        let mut x = vec![0.0; n];
        if b_norm == 0.0 {
            return Ok(x);
        }
        let mut r = rhs.to_vec();
        let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(r, d)| r * d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz = dot(&r, &z);
        let max_iter = 20 * n + 100;
        for _ in 0..max_iter {
            self.apply(&p, &mut ap);
            let alpha = rz / dot(&p, &ap);
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if norm(&r) <= CG_TOLERANCE * b_norm {
                return Ok(x);
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(PlaneError::NotConverged {
            iterations: max_iter,
            residual: norm(&r) / b_norm,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize, g: f64) -> Vec<(usize, usize, f64)> {
        (0..n - 1).map(|i| (i, i + 1, g)).collect()
    }

    #[test]
    fn chain_with_fixed_end() {
        // 1 V at node 0, 1 A drawn at node 3, unit conductances.
        let n = 4;
        let mut fixed = vec![None; n];
        fixed[0] = Some(1.0);
        let sys = LinearSystem::new(n, vec![0.0; n], chain(n, 1.0), fixed).unwrap();
        let v = sys.solve(&[0.0, 0.0, 0.0, -1.0]).unwrap();
        for (k, want) in [1.0, 0.0, -1.0, -2.0].iter().enumerate() {
            assert!((v[k] - want).abs() < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn floating_system_is_singular() {
        let n = 3;
        let err = LinearSystem::new(n, vec![0.0; n], chain(n, 1.0), vec![None; n]).unwrap_err();
        assert!(matches!(err, PlaneError::Singular(_)));
    }

    #[test]
    fn pcg_matches_direct() {
        // Same ladder solved both ways by forcing sizes around the limit.
        let n = 40;
        let mut edges = chain(n, 2.0);
        edges.push((0, 20, 0.5));
        edges.push((5, 33, 1.5));
        let mut diag = vec![0.0; n];
        diag[7] = 10.0;
        let inj: Vec<f64> = (0..n)
            .map(|i| if i % 3 == 0 { -0.1 } else { 0.0 })
            .collect();
        let direct = LinearSystem::new(n, diag.clone(), edges.clone(), vec![None; n]).unwrap();
        let vd = direct.solve(&inj).unwrap();

        let mut full_diag = diag.clone();
        for &(a, b, g) in &edges {
            full_diag[a] += g;
            full_diag[b] += g;
        }
        let iterative = LinearSystem {
            n,
            diag: full_diag.clone(),
            edges,
            fixed: vec![None; n],
            method: Method::Iterative {
                inv_diag: full_diag.iter().map(|d| 1.0 / d).collect(),
            },
        };
        let vi = iterative.solve(&inj).unwrap();
        for (a, b) in vd.iter().zip(&vi) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
