//! Euclidean projection onto `{ 0 ≤ r ≤ p } ∩ { (r−r̂)ᵀM⁻¹(r−r̂) ≤ Γ̂² }`
//! with `M = G + jitter·I`.
//!
//! The ellipsoid projection is diagonal in the eigenbasis of `M`; its
//! multiplier solves a secular equation by Newton's method. The intersection
//! is handled by Dykstra's alternating projections.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::estimator::RevenueBall;
use crate::kernel::GramFactorization;

pub(crate) const DYKSTRA_SWEEPS: usize = 200;
pub(crate) const DYKSTRA_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct FeasibleSet {
    center: Vec<f64>,
    radius: f64,
    upper: Vec<f64>,
    basis: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    jitter: f64,
}

impl FeasibleSet {
    pub fn new(ball: &RevenueBall, gf: &GramFactorization) -> Self {
        assert_eq!(ball.dim(), gf.dim(), "ball and Gram dimensions differ");
        let eig = SymmetricEigen::new(gf.regularized());
        let floor = (gf.jitter() * 1e-3).max(f64::MIN_POSITIVE);
        let eigenvalues = eig.eigenvalues.iter().map(|l| l.max(floor)).collect();
        Self {
            center: ball.r_hat().to_vec(),
            radius: ball.gamma_hat(),
            upper: ball.price_box().to_vec(),
            basis: eig.eigenvectors,
            eigenvalues,
            jitter: gf.jitter(),
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Eigenvectors (columns) and floored eigenvalues of `M`.
    pub(crate) fn eigen(&self) -> (&DMatrix<f64>, &[f64]) {
        (&self.basis, &self.eigenvalues)
    }

    fn rotate_in(&self, r: &[f64]) -> DVector<f64> {
        let delta = DVector::from_iterator(self.dim(), r.iter().zip(&self.center).map(|(a, c)| a - c));
        self.basis.tr_mul(&delta)
    }

    /// `(r−r̂)ᵀM⁻¹(r−r̂)`.
    pub fn metric_sq(&self, r: &[f64]) -> f64 {
        self.rotate_in(r)
            .iter()
            .zip(&self.eigenvalues)
            .map(|(d, l)| d * d / l)
            .sum()
    }

    pub fn in_box(&self, r: &[f64], tol: f64) -> bool {
        r.iter()
            .zip(&self.upper)
            .all(|(v, p)| *v >= -tol && *v <= p + tol)
    }

    pub fn contains(&self, r: &[f64], rel_tol: f64) -> bool {
        let scale = self.upper.iter().fold(1.0f64, |m, p| m.max(*p));
        self.in_box(r, rel_tol * scale)
            && self.metric_sq(r) <= self.radius * self.radius * (1.0 + rel_tol) + 1e-14
    }

    pub fn project_box(&self, r: &mut [f64]) {
        for (v, p) in r.iter_mut().zip(&self.upper) {
            *v = v.clamp(0.0, *p);
        }
    }

    /// Projection onto the ellipsoid alone.
    pub fn project_ellipsoid(&self, y: &[f64]) -> Vec<f64> {
        if self.radius == 0.0 {
            return self.center.clone();
        }
        let rotated = self.rotate_in(y);
        // a_k² = λ_k δ̃_k², ‖s(μ)‖² = Σ a_k² / (λ_k + μ)²
        let a_sq: Vec<f64> = rotated
            .iter()
            .zip(&self.eigenvalues)
            .map(|(d, l)| l * d * d)
            .collect();
        let norm_at = |mu: f64| -> (f64, f64) {
            let mut s2 = 0.0;
            let mut s3 = 0.0;
            for (a, l) in a_sq.iter().zip(&self.eigenvalues) {
                let inv = 1.0 / (l + mu);
                s2 += a * inv * inv;
                s3 += a * inv * inv * inv;
            }
            (s2.sqrt(), s3)
        };
        let gamma = self.radius;
        let (mut s, mut s3) = norm_at(0.0);
        if s <= gamma {
            return y.to_vec();
        }
        // Newton on 1/‖s(μ)‖ − 1/Γ is monotone from μ = 0.
        let mut mu = 0.0;
        for _ in 0..100 {
            let step = (s - gamma) * s * s / (gamma * s3);
            mu += step;
            let next = norm_at(mu);
            s = next.0;
            s3 = next.1;
            if (s - gamma).abs() <= 1e-13 * gamma || step <= 1e-15 * mu {
                break;
            }
        }
        let shrink = if s > gamma { gamma / s } else { 1.0 };
        let scaled = DVector::from_iterator(
            self.dim(),
            rotated
                .iter()
                .zip(&self.eigenvalues)
                .map(|(d, l)| shrink * d * l / (l + mu)),
        );
        let back = &self.basis * scaled;
        back.iter().zip(&self.center).map(|(d, c)| c + d).collect()
    }

    /// Pulls a point into the set: clip to the box, then shrink radially
    /// toward the centre (which lies in the box) until the ellipsoid holds.
    pub fn repair(&self, r: &mut [f64]) {
        self.project_box(r);
        let q = self.metric_sq(r);
        let g2 = self.radius * self.radius;
        if q > g2 {
            let alpha = if q > 0.0 { (g2 / q).sqrt() * (1.0 - 1e-12) } else { 0.0 };
            for (v, c) in r.iter_mut().zip(&self.center) {
                *v = c + alpha * (*v - c);
            }
            self.project_box(r);
        }
    }

    /// Euclidean projection onto the intersection. Always returns a feasible
    /// point; returns the number of Dykstra sweeps used alongside.
    pub fn project(&self, z: &[f64]) -> (Vec<f64>, usize) {
        if self.radius == 0.0 {
            return (self.center.clone(), 0);
        }
        let g2 = self.radius * self.radius;
        let mut clipped = z.to_vec();
        self.project_box(&mut clipped);
        if self.metric_sq(&clipped) <= g2 {
            return (clipped, 0);
        }
        let pe = self.project_ellipsoid(z);
        if self.in_box(&pe, 0.0) {
            return (pe, 0);
        }
        let dim = self.dim();
        let mut x = z.to_vec();
        let mut p = vec![0.0; dim];
        let mut q = vec![0.0; dim];
        let mut buf = vec![0.0; dim];
        let mut sweeps = 0;
        for sweep in 1..=DYKSTRA_SWEEPS {
            sweeps = sweep;
            for k in 0..dim {
                buf[k] = x[k] + p[k];
            }
            let y = self.project_ellipsoid(&buf);
            for k in 0..dim {
                p[k] = buf[k] - y[k];
                buf[k] = y[k] + q[k];
            }
            let mut next = buf.clone();
            self.project_box(&mut next);
            let mut change = 0.0f64;
            let mut gap = 0.0f64;
            let mut scale = 1.0f64;
            for k in 0..dim {
                q[k] = buf[k] - next[k];
                change = change.max((next[k] - x[k]).abs());
                gap = gap.max((next[k] - y[k]).abs());
                scale = scale.max(next[k].abs());
            }
            x = next;
            if change <= DYKSTRA_TOL * scale && gap <= DYKSTRA_TOL * scale {
                break;
            }
        }
        self.repair(&mut x);
        (x, sweeps)
    }
}
