//! Linear mixed model `ego_rp ~ alter_rp + (1 | donor)`.
//!
//! The fit profiles out the fixed effects and the residual variance, which
//! leaves a one-dimensional problem in the variance ratio
//! `λ = σ_u² / σ_e²`. That ratio is located by a log-spaced scan followed by
//! golden-section refinement. The same profiled likelihood, written for a
//! general 2×2 relative covariance factor, serves the random-slope model in
//! [`model_ladder`].

mod diagnostics;
mod ladder;
mod profile;

use std::ops::Range;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::metrics::ChatRpPair;
use crate::num::{total_cmp, Real};

pub use diagnostics::{residual_diagnostics, QqRow, QqTable};
pub use ladder::{model_ladder, LadderReport, LadderStep, BASE_MODEL, SLOPE_MODEL};

use profile::{Profile, RelFactor};

/// Upper end of the variance-ratio search.
pub const LAMBDA_MAX: f64 = 1e6;
/// Smallest positive ratio on the search grid.
const LAMBDA_MIN_GRID: f64 = 1e-8;
const GRID_PER_DECADE: usize = 10;
const GOLDEN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Reml,
    Ml,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "reml" => Ok(Method::Reml),
            "ml" => Ok(Method::Ml),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

/// Fitted random-intercept model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit<T> {
    pub method: Method,
    pub beta0: T,
    pub beta1: T,
    pub se0: T,
    pub se1: T,
    pub ci95_0: (T, T),
    pub ci95_1: (T, T),
    /// Residual degrees of freedom, `n_obs - 2`.
    pub df1: T,
    pub t0: T,
    pub t1: T,
    pub p0: T,
    pub p1: T,
    pub sigma_u: T,
    pub sigma_e: T,
    pub lambda: T,
    pub log_likelihood: T,
    pub n_obs: usize,
    pub n_groups: usize,
    /// Conditional residuals `y - Xβ - u_donor`, in input order.
    pub residuals: Vec<T>,
    pub fitted: Vec<T>,
    /// Predicted random intercept per donor, sorted by donor ID.
    pub donor_effects: Vec<(String, T)>,
    /// The data are fitted exactly; `sigma_e` sits at its numerical floor.
    pub degenerate: bool,
}

/// One row of the coefficient table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefRow<T> {
    pub predictor: &'static str,
    pub coef: T,
    pub se: T,
    pub ci95: (T, T),
    pub df: T,
    pub t: T,
    pub p: T,
}

impl<T: Real> LmmFit<T> {
    pub fn coefficients(&self) -> [CoefRow<T>; 2] {
        [
            CoefRow {
                predictor: "(Intercept)",
                coef: self.beta0,
                se: self.se0,
                ci95: self.ci95_0,
                df: self.df1,
                t: self.t0,
                p: self.p0,
            },
            CoefRow {
                predictor: "Alter's response probability",
                coef: self.beta1,
                se: self.se1,
                ci95: self.ci95_1,
                df: self.df1,
                t: self.t1,
                p: self.p1,
            },
        ]
    }
}

/// Observations in canonical order, centered, with donor groups contiguous.
pub(crate) struct Design<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub groups: Vec<Range<usize>>,
    pub group_ids: Vec<String>,
    /// Input index of each canonical row.
    pub order: Vec<usize>,
    pub x_mean: T,
    pub y_mean: T,
    /// Centered total sum of squares of `y`.
    pub ssy: T,
}

impl<T: Real> Design<T> {
    pub fn new(pairs: &[ChatRpPair<T>]) -> Result<Self> {
        if pairs.len() < 3 {
            return Err(Error::TooFewObservations {
                needed: 3,
                found: pairs.len(),
            });
        }
        // Sorting fixes the summation order, so estimates do not depend on
        // the order rows arrive in.
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.sort_by(|&a, &b| {
            let (pa, pb) = (&pairs[a], &pairs[b]);
            pa.donor_id
                .cmp(&pb.donor_id)
                .then_with(|| pa.chat_id.cmp(&pb.chat_id))
                .then_with(|| total_cmp(&pa.rp_alter, &pb.rp_alter))
                .then_with(|| total_cmp(&pa.rp_ego, &pb.rp_ego))
        });
        let n = T::from_count(pairs.len());
        let x_mean = order.iter().map(|&i| pairs[i].rp_alter).sum::<T>() / n;
        let y_mean = order.iter().map(|&i| pairs[i].rp_ego).sum::<T>() / n;
        let x: Vec<T> = order.iter().map(|&i| pairs[i].rp_alter - x_mean).collect();
        let y: Vec<T> = order.iter().map(|&i| pairs[i].rp_ego - y_mean).collect();
        let scale = order
            .iter()
            .map(|&i| pairs[i].rp_alter.abs())
            .fold(T::zero(), T::max);
        let tol = T::lit(16.0) * T::epsilon() * scale;
        if x.iter().all(|v| v.abs() <= tol) {
            return Err(Error::SingularDesign);
        }

        let mut groups = Vec::new();
        let mut group_ids = Vec::new();
        let mut start = 0;
        for k in 1..=order.len() {
            if k == order.len() || pairs[order[k]].donor_id != pairs[order[start]].donor_id {
                groups.push(start..k);
                group_ids.push(pairs[order[start]].donor_id.clone());
                start = k;
            }
        }
        if groups.len() < 2 {
            return Err(Error::TooFewGroups(groups.len()));
        }
        let ssy = y.iter().map(|v| *v * *v).sum();
        Ok(Design {
            x,
            y,
            groups,
            group_ids,
            order,
            x_mean,
            y_mean,
            ssy,
        })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }
}

fn intercept_factor<T: Real>(lambda: T) -> RelFactor<T> {
    RelFactor::intercept(lambda.max(T::zero()).sqrt())
}

/// Profiled log-likelihood of the random-intercept model at a fixed ratio.
pub fn profiled_loglik<T: Real>(pairs: &[ChatRpPair<T>], method: Method, lambda: T) -> Result<T> {
    let design = Design::new(pairs)?;
    Ok(Profile::evaluate(&design, &intercept_factor(lambda), method).loglik)
}

const GOLDEN_MAX_ITER: usize = 200;

fn golden_max<T: Real>(mut a: T, mut b: T, tol: T, f: impl Fn(T) -> T) -> T {
    let inv_phi = T::lit((5f64.sqrt() - 1.0) / 2.0);
    let mut c = b - (b - a) * inv_phi;
    let mut d = a + (b - a) * inv_phi;
    let (mut fc, mut fd) = (f(c), f(d));
    // The interval shrinks by 1/φ per step; the cap only matters when `tol`
    // is below the scalar's resolution.
    for _ in 0..GOLDEN_MAX_ITER {
        if (b - a).abs() <= tol.max(T::epsilon() * (a.abs() + b.abs())) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - (b - a) * inv_phi;
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + (b - a) * inv_phi;
            fd = f(d);
        }
    }
    (a + b) * T::lit(0.5)
}

/// Maximizes the profiled likelihood over `λ ∈ [0, LAMBDA_MAX]`.
pub(crate) fn optimize_lambda<T: Real>(design: &Design<T>, method: Method) -> T {
    let ll = |lambda: T| Profile::evaluate(design, &intercept_factor(lambda), method).loglik;

    let lo = LAMBDA_MIN_GRID.ln();
    let hi = LAMBDA_MAX.ln();
    let steps = ((LAMBDA_MAX / LAMBDA_MIN_GRID).log10() as usize) * GRID_PER_DECADE;
    let grid: Vec<T> = (0..=steps)
        .map(|k| T::lit(lo + (hi - lo) * k as f64 / steps as f64))
        .collect();
    let values: Vec<T> = grid.iter().map(|&s| ll(s.exp())).collect();
    let at_zero = ll(T::zero());

    let (best, _) = values
        .iter()
        .enumerate()
        .fold((0, values[0]), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });

    let refined = if best == 0 {
        // Bracket reaches down to zero; search linearly there.
        let upper = grid[1].exp();
        golden_max(T::zero(), upper, T::lit(GOLDEN_TOL) * upper, ll)
    } else {
        let a = grid[best - 1];
        let b = grid[(best + 1).min(steps)];
        golden_max(a, b, T::lit(GOLDEN_TOL), |s| ll(s.exp())).exp()
    };

    let mut candidates = [
        (refined, ll(refined)),
        (grid[best].exp(), values[best]),
        (T::zero(), at_zero),
    ];
    candidates.sort_by(|a, b| total_cmp(&b.1, &a.1));
    candidates[0].0.min(T::lit(LAMBDA_MAX))
}

fn t_quantile(df: f64, p: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df)
        .map(|t| t.inverse_cdf(p))
        .unwrap_or(f64::NAN)
}

fn t_two_sided_p(df: f64, t: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    StudentsT::new(0.0, 1.0, df)
        .map(|d| 2.0 * d.sf(t.abs()))
        .unwrap_or(f64::NAN)
}

fn assemble<T: Real>(
    pairs: &[ChatRpPair<T>],
    design: &Design<T>,
    method: Method,
    lambda: T,
) -> LmmFit<T> {
    let factor = intercept_factor(lambda);
    let prof = Profile::evaluate(design, &factor, method);
    let n = design.n();
    let p = 2;
    let dof = match method {
        Method::Reml => n - p,
        Method::Ml => n,
    };
    let sigma2 = prof.q / T::from_count(dof);

    // Back from centered coordinates: y = (ȳ + b0c - b1·x̄) + b1·x.
    let [b0c, b1] = prof.beta;
    let cov = prof.xthx_inv.map(|row| row.map(|v| v * sigma2));
    let xm = design.x_mean;
    let beta0 = design.y_mean + b0c - b1 * xm;
    let var0 = cov[0][0] + xm * xm * cov[1][1] - T::lit(2.0) * xm * cov[0][1];
    let se0 = var0.max(T::zero()).sqrt();
    let se1 = cov[1][1].max(T::zero()).sqrt();

    let df = (n - p) as f64;
    let q = T::lit(t_quantile(df, 0.975));
    let t0 = beta0 / se0;
    let t1 = b1 / se1;

    // Conditional residuals with the donor BLUPs.
    let mut residuals = vec![T::zero(); n];
    let mut fitted = vec![T::zero(); n];
    let mut donor_effects = Vec::with_capacity(design.groups.len());
    for (g, range) in design.groups.iter().enumerate() {
        let nj = T::from_count(range.len());
        let rsum: T = range
            .clone()
            .map(|i| design.y[i] - b0c - b1 * design.x[i])
            .sum();
        let u = lambda * rsum / (T::one() + nj * lambda);
        donor_effects.push((design.group_ids[g].clone(), u));
        for i in range.clone() {
            let input = design.order[i];
            let f = beta0 + b1 * pairs[input].rp_alter + u;
            fitted[input] = f;
            residuals[input] = pairs[input].rp_ego - f;
        }
    }

    LmmFit {
        method,
        beta0,
        beta1: b1,
        se0,
        se1,
        ci95_0: (beta0 - q * se0, beta0 + q * se0),
        ci95_1: (b1 - q * se1, b1 + q * se1),
        df1: T::lit(df),
        t0,
        t1,
        p0: T::lit(t_two_sided_p(df, t0.as_f64())),
        p1: T::lit(t_two_sided_p(df, t1.as_f64())),
        sigma_u: (lambda * sigma2).max(T::zero()).sqrt(),
        sigma_e: sigma2.sqrt(),
        lambda,
        log_likelihood: prof.loglik,
        n_obs: n,
        n_groups: design.groups.len(),
        residuals,
        fitted,
        donor_effects,
        degenerate: prof.degenerate,
    }
}

/// Fits the random-intercept model by REML or ML.
pub fn fit_random_intercept<T: Real>(pairs: &[ChatRpPair<T>], method: Method) -> Result<LmmFit<T>> {
    let design = Design::new(pairs)?;
    let lambda = optimize_lambda(&design, method);
    Ok(assemble(pairs, &design, method, lambda))
}

/// Fits with the variance ratio held fixed. `lambda = 0` is ordinary least
/// squares.
pub fn fit_at_ratio<T: Real>(pairs: &[ChatRpPair<T>], method: Method, lambda: T) -> Result<LmmFit<T>> {
    if !(lambda >= T::zero()) {
        return Err(Error::InvalidConfig("variance ratio must be non-negative".into()));
    }
    let design = Design::new(pairs)?;
    Ok(assemble(pairs, &design, method, lambda))
}
