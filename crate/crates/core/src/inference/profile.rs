//! Profiled likelihood for a 2×2 relative covariance factor.
//!
//! With random effects `b_j = σ_e Λ v_j`, `v_j ~ N(0, I)`, the marginal
//! covariance of group `j` is `σ_e² H_j`, `H_j = I + Z_j Λ Λ' Z_j'`. All group
//! quantities reduce to the 2×2 system `M_j = I + Λ' Z_j' Z_j Λ` through the
//! Woodbury identity, so no `n_j × n_j` matrix is formed.

use super::{Design, Method};
use crate::num::Real;

type M2<T> = [[T; 2]; 2];

/// Lower-triangular `Λ`; rows/columns are (intercept, slope).
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct RelFactor<T> {
    pub l11: T,
    pub l21: T,
    pub l22: T,
}

impl<T: Real> RelFactor<T> {
    pub fn intercept(theta: T) -> Self {
        RelFactor {
            l11: theta,
            l21: T::zero(),
            l22: T::zero(),
        }
    }

    fn matrix(&self) -> M2<T> {
        [[self.l11, T::zero()], [self.l21, self.l22]]
    }
}

fn mul<T: Real>(a: &M2<T>, b: &M2<T>) -> M2<T> {
    let mut out = [[T::zero(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn transpose<T: Real>(a: &M2<T>) -> M2<T> {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

fn mul_vec<T: Real>(a: &M2<T>, v: [T; 2]) -> [T; 2] {
    [
        a[0][0] * v[0] + a[0][1] * v[1],
        a[1][0] * v[0] + a[1][1] * v[1],
    ]
}

fn det<T: Real>(a: &M2<T>) -> T {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

fn inverse<T: Real>(a: &M2<T>) -> M2<T> {
    let d = det(a);
    [[a[1][1] / d, -a[0][1] / d], [-a[1][0] / d, a[0][0] / d]]
}

pub(crate) struct Profile<T> {
    pub loglik: T,
    /// Penalized residual sum of squares `(y - Xβ)' H⁻¹ (y - Xβ)`.
    pub q: T,
    /// Fixed effects in centered coordinates.
    pub beta: [T; 2],
    /// `(X' H⁻¹ X)⁻¹`.
    pub xthx_inv: M2<T>,
    pub degenerate: bool,
}

impl<T: Real> Profile<T> {
    pub fn evaluate(design: &Design<T>, factor: &RelFactor<T>, method: Method) -> Self {
        let lam = factor.matrix();
        let lam_t = transpose(&lam);

        let mut xthx = [[T::zero(); 2]; 2];
        let mut xthy = [T::zero(); 2];
        let mut log_det_h = T::zero();
        let mut m_inv = Vec::with_capacity(design.groups.len());

        for range in &design.groups {
            let (mut sx, mut sxx, mut sy, mut sxy) = (T::zero(), T::zero(), T::zero(), T::zero());
            for i in range.clone() {
                let (x, y) = (design.x[i], design.y[i]);
                sx += x;
                sxx += x * x;
                sy += y;
                sxy += x * y;
            }
            let a = [[T::from_count(range.len()), sx], [sx, sxx]];
            let b = [sy, sxy];
            let al = mul(&a, &lam);
            let mut m = mul(&lam_t, &al);
            m[0][0] += T::one();
            m[1][1] += T::one();
            log_det_h += det(&m).ln();
            let mi = inverse(&m);

            let k = mul(&mul(&al, &mi), &transpose(&al));
            for r in 0..2 {
                for c in 0..2 {
                    xthx[r][c] += a[r][c] - k[r][c];
                }
            }
            let corr = mul_vec(&al, mul_vec(&mi, mul_vec(&lam_t, b)));
            xthy[0] += b[0] - corr[0];
            xthy[1] += b[1] - corr[1];
            m_inv.push(mi);
        }

        let xthx_inv = inverse(&xthx);
        let beta = mul_vec(&xthx_inv, xthy);

        // Q from residuals directly; the expanded quadratic form cancels badly
        // when the fit is close to exact.
        let mut q = T::zero();
        for (range, mi) in design.groups.iter().zip(&m_inv) {
            let (mut rr, mut sr, mut sxr) = (T::zero(), T::zero(), T::zero());
            for i in range.clone() {
                let r = design.y[i] - beta[0] - beta[1] * design.x[i];
                rr += r * r;
                sr += r;
                sxr += design.x[i] * r;
            }
            let v = mul_vec(&lam_t, [sr, sxr]);
            let w = mul_vec(mi, v);
            q += rr - (v[0] * w[0] + v[1] * w[1]);
        }

        let floor = (design.ssy * T::epsilon()).max(T::min_positive_value());
        let degenerate = q <= floor;
        let q = q.max(floor);

        let n = design.n();
        let two_pi = T::TAU();
        let half = T::lit(0.5);
        let loglik = match method {
            Method::Ml => {
                let nf = T::from_count(n);
                -half * nf * (T::one() + (two_pi * q / nf).ln()) - half * log_det_h
            }
            Method::Reml => {
                let nf = T::from_count(n - 2);
                -half * nf * (T::one() + (two_pi * q / nf).ln())
                    - half * log_det_h
                    - half * det(&xthx).ln()
            }
        };

        Profile {
            loglik,
            q,
            beta,
            xthx_inv,
            degenerate,
        }
    }
}
