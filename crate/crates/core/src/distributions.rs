//! Duration distribution families with moment-matched parameterisation.
//!
//! Every family is parameterised so that the distribution that is actually
//! sampled (after truncation, for the truncated families) has the requested
//! mean and standard deviation.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng::{open_unit, seeded};

/// Upper truncation used by the experiments: `mean + 6·std`.
pub const TRUNCATION_STDS: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Normal,
    Logistic,
    Beta,
    Uniform,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Normal, Family::Logistic, Family::Beta, Family::Uniform];

    pub fn name(self) -> &'static str {
        match self {
            Family::Normal => "normal",
            Family::Logistic => "logistic",
            Family::Beta => "beta",
            Family::Uniform => "uniform",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" | "truncated-normal" => Ok(Family::Normal),
            "logistic" | "truncated-logistic" => Ok(Family::Logistic),
            "beta" | "scaled-beta" => Ok(Family::Beta),
            "uniform" => Ok(Family::Uniform),
            other => Err(Error::invalid(format!(
                "unknown family '{other}' (expected normal, logistic, beta or uniform)"
            ))),
        }
    }
}

/// Shape parameters of the underlying (pre-truncation) distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Normal { loc: f64, scale: f64 },
    Logistic { loc: f64, scale: f64 },
    Beta { alpha: f64, beta: f64 },
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub family: Family,
    pub mean: f64,
    pub std: f64,
    pub support_lo: f64,
    pub support_hi: f64,
    pub shape: Shape,
}

/// `[0, mean + 6·std]`.
pub fn default_support(mean: f64, std: f64) -> (f64, f64) {
    (0.0, mean + TRUNCATION_STDS * std)
}

pub fn make_spec(family: Family, mean: f64, std: f64, support: (f64, f64)) -> Result<DistributionSpec> {
    let (lo, hi) = support;
    if !(mean.is_finite() && std.is_finite() && std > 0.0) {
        return Err(Error::invalid(format!("need finite mean and positive std, got ({mean}, {std})")));
    }
    if !(lo.is_finite() && hi > lo) {
        return Err(Error::invalid(format!("invalid support [{lo}, {hi}]")));
    }
    if !(mean > lo && mean < hi) {
        return Err(Error::invalid(format!("mean {mean} outside support ({lo}, {hi})")));
    }
    let spec = match family {
        Family::Uniform => {
            let half = std * 3f64.sqrt();
            let (a, b) = (mean - half, mean + half);
            let slack = 1e-12 * (1.0 + mean.abs());
            if a < lo - slack || b > hi + slack {
                return Err(Error::InfeasibleDistribution(format!(
                    "uniform [{a}, {b}] does not fit in support [{lo}, {hi}]"
                )));
            }
            DistributionSpec { family, mean, std, support_lo: a, support_hi: b, shape: Shape::Uniform }
        }
        Family::Beta => {
            if !hi.is_finite() {
                return Err(Error::InfeasibleDistribution("scaled beta needs a finite support".into()));
            }
            let width = hi - lo;
            let m = (mean - lo) / width;
            let v = (std / width).powi(2);
            let k = m * (1.0 - m) / v - 1.0;
            let (alpha, beta) = (m * k, (1.0 - m) * k);
            if !(alpha > 0.0 && beta > 0.0) {
                return Err(Error::InfeasibleDistribution(format!(
                    "method of moments gives non-positive beta shapes ({alpha}, {beta})"
                )));
            }
            DistributionSpec { family, mean, std, support_lo: lo, support_hi: hi, shape: Shape::Beta { alpha, beta } }
        }
        Family::Normal | Family::Logistic => {
            let init_scale = if family == Family::Normal { std } else { std * 3f64.sqrt() / PI };
            let (loc, scale) = match_truncated(family, mean, std, lo, hi, init_scale)?;
            let shape = if family == Family::Normal {
                Shape::Normal { loc, scale }
            } else {
                Shape::Logistic { loc, scale }
            };
            DistributionSpec { family, mean, std, support_lo: lo, support_hi: hi, shape }
        }
    };
    Ok(spec)
}

/// Solves for the location/scale of a truncated family so that the
/// truncated mean and std hit the targets. Newton on `(loc, ln scale)` with
/// a finite-difference Jacobian and step halving.
fn match_truncated(family: Family, mean: f64, std: f64, lo: f64, hi: f64, init_scale: f64) -> Result<(f64, f64)> {
    let residual = |loc: f64, log_scale: f64| -> Option<[f64; 2]> {
        let (m, s) = truncated_mean_std(family, loc, log_scale.exp(), lo, hi)?;
        Some([(m - mean) / std, (s - std) / std])
    };
    let norm = |r: [f64; 2]| r[0].hypot(r[1]);
    let mut x = [mean, init_scale.ln()];
    let mut r = residual(x[0], x[1]).ok_or_else(|| infeasible(family, mean, std))?;
    for _ in 0..200 {
        if norm(r) < 1e-12 {
            return Ok((x[0], x[1].exp()));
        }
        let h = [1e-7 * std, 1e-7];
        let mut jac = [[0.0; 2]; 2];
        for k in 0..2 {
            let mut up = x;
            let mut dn = x;
            up[k] += h[k];
            dn[k] -= h[k];
            let ru = residual(up[0], up[1]).ok_or_else(|| infeasible(family, mean, std))?;
            let rd = residual(dn[0], dn[1]).ok_or_else(|| infeasible(family, mean, std))?;
            for row in 0..2 {
                jac[row][k] = (ru[row] - rd[row]) / (2.0 * h[k]);
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if !det.is_finite() || det.abs() < 1e-300 {
            break;
        }
        let step = [
            (jac[1][1] * r[0] - jac[0][1] * r[1]) / det,
            (-jac[1][0] * r[0] + jac[0][0] * r[1]) / det,
        ];
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = [x[0] - t * step[0], x[1] - t * step[1].clamp(-2.0, 2.0)];
            if let Some(rc) = residual(cand[0], cand[1]) {
                if norm(rc) < norm(r) {
                    x = cand;
                    r = rc;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if norm(r) < 1e-9 {
        Ok((x[0], x[1].exp()))
    } else {
        Err(infeasible(family, mean, std))
    }
}

fn infeasible(family: Family, mean: f64, std: f64) -> Error {
    Error::InfeasibleDistribution(format!(
        "cannot match mean {mean} and std {std} with a truncated {family} on the given support"
    ))
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

fn logistic_cdf(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logistic_pdf(z: f64) -> f64 {
    let e = (-z.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// Mean and std of a truncated normal or logistic distribution.
fn truncated_mean_std(family: Family, loc: f64, scale: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    if !(scale.is_finite() && scale > 0.0 && loc.is_finite()) {
        return None;
    }
    match family {
        Family::Normal => {
            let a = (lo - loc) / scale;
            let b = (hi - loc) / scale;
            let mass = normal_mass(a, b);
            if !(mass > 1e-300) {
                return None;
            }
            let (pa, pb) = (std_normal_pdf(a), std_normal_pdf(b));
            let apa = if a.is_finite() { a * pa } else { 0.0 };
            let bpb = if b.is_finite() { b * pb } else { 0.0 };
            let shift = (pa - pb) / mass;
            let var_ratio = 1.0 + (apa - bpb) / mass - shift * shift;
            if !(var_ratio > 0.0) {
                return None;
            }
            Some((loc + scale * shift, scale * var_ratio.sqrt()))
        }
        Family::Logistic => {
            let m = truncated_raw_moments(family, loc, scale, lo, hi, 2)?;
            let var = m[1] - m[0] * m[0];
            (var > 0.0).then(|| (m[0], var.sqrt()))
        }
        _ => None,
    }
}

/// `Φ(b) - Φ(a)` computed on the side of the distribution with better
/// relative precision.
fn normal_mass(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        std_normal_cdf(-a) - std_normal_cdf(-b)
    } else {
        std_normal_cdf(b) - std_normal_cdf(a)
    }
}

/// Effective finite integration range of a location/scale family.
fn effective_range(loc: f64, scale: f64, lo: f64, hi: f64) -> (f64, f64) {
    (lo.max(loc - 40.0 * scale), hi.min(loc + 40.0 * scale))
}

/// Raw moments `E[X^k]`, `k = 1..=max_q`, of a truncated location/scale
/// family by composite Gauss–Legendre quadrature.
fn truncated_raw_moments(family: Family, loc: f64, scale: f64, lo: f64, hi: f64, max_q: u32) -> Option<Vec<f64>> {
    let (a, b) = effective_range(loc, scale, lo, hi);
    if !(b > a) {
        return None;
    }
    let density = |x: f64| -> f64 {
        let z = (x - loc) / scale;
        match family {
            Family::Normal => std_normal_pdf(z),
            _ => logistic_pdf(z),
        }
    };
    let mut acc = vec![0.0; max_q as usize + 1];
    integrate(a, b, 64, |x, w| {
        let d = w * density(x);
        let mut xp = 1.0;
        for slot in acc.iter_mut() {
            *slot += d * xp;
            xp *= x;
        }
    });
    let mass = acc[0];
    if !(mass > 1e-300) {
        return None;
    }
    Some(acc[1..].iter().map(|m| m / mass).collect())
}

/// Composite Gauss–Legendre quadrature on `[a, b]`: calls `visit(x, w)`
/// for every node `x` with weight `w`.
fn integrate<F: FnMut(f64, f64)>(a: f64, b: f64, panels: usize, mut visit: F) {
    let (nodes, weights) = gauss_legendre();
    let width = (b - a) / panels as f64;
    let half = 0.5 * width;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * width;
        for (x, w) in nodes.iter().zip(weights) {
            visit(mid + half * x, half * w);
        }
    }
}

/// 20-point Gauss–Legendre nodes and weights on [-1, 1].
fn gauss_legendre() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = 20;
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let k = k as f64;
                    let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            nodes.push(x);
            weights.push(2.0 / ((1.0 - x * x) * dp * dp));
        }
        (nodes, weights)
    })
}

impl DistributionSpec {
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.support_lo {
            return 0.0;
        }
        if x >= self.support_hi {
            return 1.0;
        }
        let (lo, hi) = (self.support_lo, self.support_hi);
        let value = match self.shape {
            Shape::Uniform => (x - lo) / (hi - lo),
            Shape::Beta { alpha, beta } => beta_reg(alpha, beta, (x - lo) / (hi - lo)),
            Shape::Normal { loc, scale } => {
                let a = (lo - loc) / scale;
                let b = (hi - loc) / scale;
                normal_mass(a, (x - loc) / scale) / normal_mass(a, b)
            }
            Shape::Logistic { loc, scale } => {
                let fa = logistic_cdf((lo - loc) / scale);
                let fb = logistic_cdf((hi - loc) / scale);
                (logistic_cdf((x - loc) / scale) - fa) / (fb - fa)
            }
        };
        value.clamp(0.0, 1.0)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.support_lo || x > self.support_hi {
            return 0.0;
        }
        let (lo, hi) = (self.support_lo, self.support_hi);
        match self.shape {
            Shape::Uniform => 1.0 / (hi - lo),
            Shape::Beta { alpha, beta } => {
                let w = hi - lo;
                let u = (x - lo) / w;
                if u <= 0.0 || u >= 1.0 {
                    return 0.0;
                }
                let ln_b = ln_gamma(alpha) + ln_gamma(beta) - ln_gamma(alpha + beta);
                ((alpha - 1.0) * u.ln() + (beta - 1.0) * (1.0 - u).ln() - ln_b).exp() / w
            }
            Shape::Normal { loc, scale } => {
                let mass = normal_mass((lo - loc) / scale, (hi - loc) / scale);
                std_normal_pdf((x - loc) / scale) / (scale * mass)
            }
            Shape::Logistic { loc, scale } => {
                let mass = logistic_cdf((hi - loc) / scale) - logistic_cdf((lo - loc) / scale);
                logistic_pdf((x - loc) / scale) / (scale * mass)
            }
        }
    }

    /// Finite interval carrying all but a negligible amount of mass.
    fn finite_support(&self) -> (f64, f64) {
        match self.shape {
            Shape::Normal { loc, scale } | Shape::Logistic { loc, scale } => {
                effective_range(loc, scale, self.support_lo, self.support_hi)
            }
            _ => (self.support_lo, self.support_hi),
        }
    }
}

pub fn quantile(spec: &DistributionSpec, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!("quantile level must lie in (0, 1), got {q}")));
    }
    Ok(quantile_unchecked(spec, q))
}

fn quantile_unchecked(spec: &DistributionSpec, q: f64) -> f64 {
    let (lo, hi) = (spec.support_lo, spec.support_hi);
    match spec.shape {
        Shape::Uniform => lo + q * (hi - lo),
        Shape::Logistic { loc, scale } => {
            let fa = logistic_cdf((lo - loc) / scale);
            let fb = logistic_cdf((hi - loc) / scale);
            let u = fa + q * (fb - fa);
            let x = loc + scale * (u / (1.0 - u)).ln();
            polish_quantile(spec, q, x.clamp(lo, spec.finite_support().1))
        }
        _ => invert_cdf(spec, q),
    }
}

/// Safeguarded Newton–bisection inversion of the CDF.
fn invert_cdf(spec: &DistributionSpec, q: f64) -> f64 {
    let (mut a, mut b) = spec.finite_support();
    let mut x = 0.5 * (a + b);
    if let Shape::Normal { loc, scale } = spec.shape {
        x = (loc + scale * normal_guess(q)).clamp(a, b);
    }
    for _ in 0..200 {
        let f = spec.cdf(x) - q;
        if f.abs() <= 1e-13 {
            return x;
        }
        if f > 0.0 {
            b = x;
        } else {
            a = x;
        }
        if b - a <= 4.0 * f64::EPSILON * (1.0 + x.abs()) {
            return x;
        }
        let d = spec.pdf(x);
        let newton = x - f / d;
        x = if d > 0.0 && newton > a && newton < b { newton } else { 0.5 * (a + b) };
    }
    x
}

/// Refines a closed-form quantile with a couple of Newton steps.
fn polish_quantile(spec: &DistributionSpec, q: f64, mut x: f64) -> f64 {
    for _ in 0..3 {
        let f = spec.cdf(x) - q;
        let d = spec.pdf(x);
        if f.abs() <= 1e-14 || d <= 0.0 {
            break;
        }
        x -= f / d;
    }
    x
}

/// Rough standard normal quantile (logit approximation) used as a
/// starting point only.
fn normal_guess(q: f64) -> f64 {
    (q / (1.0 - q)).ln() * (3f64.sqrt() / PI)
}

pub fn sample(spec: &DistributionSpec, count: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded(seed);
    (0..count).map(|_| sample_one(spec, &mut rng)).collect()
}

pub fn sample_one<R: rand::Rng + ?Sized>(spec: &DistributionSpec, rng: &mut R) -> f64 {
    let u = open_unit(rng);
    quantile_unchecked(spec, u).clamp(spec.support_lo, spec.support_hi)
}

/// Normal maximum-likelihood estimates: sample mean and the biased (1/N)
/// standard deviation.
pub fn fit_normal_mle(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 samples, got {}", samples.len())));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moment {
    pub q: u32,
    pub value: f64,
}

/// Moments of one job's duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub mean: f64,
    pub std: f64,
    pub moments: Vec<Moment>,
}

impl MomentSummary {
    pub fn get(&self, q: u32) -> Option<f64> {
        self.moments.iter().find(|m| m.q == q).map(|m| m.value)
    }

    /// Summary implied by a mean and std, for `Q ⊆ {1, 2}`.
    pub fn from_mean_std(mean: f64, std: f64, qs: &[u32]) -> Result<Self> {
        let moments = qs
            .iter()
            .map(|&q| match q {
                1 => Ok(Moment { q, value: mean }),
                2 => Ok(Moment { q, value: mean * mean + std * std }),
                _ => Err(Error::invalid(format!("moment order {q} needs a distribution, not just mean/std"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MomentSummary { mean, std, moments })
    }
}

fn check_orders(qs: &[u32]) -> Result<()> {
    if qs.is_empty() || qs.contains(&0) {
        return Err(Error::invalid("moment orders must be a non-empty set of positive integers"));
    }
    Ok(())
}

pub fn empirical_moments(samples: &[f64], qs: &[u32]) -> Result<MomentSummary> {
    check_orders(qs)?;
    if samples.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    let n = samples.len() as f64;
    let raw = |q: u32| samples.iter().map(|x| x.powi(q as i32)).sum::<f64>() / n;
    let mean = raw(1);
    let var = (raw(2) - mean * mean).max(0.0);
    let moments = qs.iter().map(|&q| Moment { q, value: raw(q) }).collect();
    Ok(MomentSummary { mean, std: var.sqrt(), moments })
}

pub fn spec_moments(spec: &DistributionSpec, qs: &[u32]) -> Result<MomentSummary> {
    check_orders(qs)?;
    let max_q = *qs.iter().max().expect("non-empty");
    let top = max_q.max(2);
    let (lo, hi) = (spec.support_lo, spec.support_hi);
    let raw: Vec<f64> = match spec.shape {
        Shape::Uniform => (1..=top)
            .map(|q| {
                let k = q as i32 + 1;
                (hi.powi(k) - lo.powi(k)) / (k as f64 * (hi - lo))
            })
            .collect(),
        Shape::Beta { alpha, beta } => {
            // E[(lo + w·U)^q] expanded binomially; E[U^k] = Π (α+r)/(α+β+r)
            let w = hi - lo;
            let mut beta_raw = vec![1.0];
            for r in 0..top {
                let r = r as f64;
                let prev = *beta_raw.last().unwrap();
                beta_raw.push(prev * (alpha + r) / (alpha + beta + r));
            }
            (1..=top)
                .map(|q| {
                    (0..=q)
                        .map(|k| binomial(q, k) * lo.powi((q - k) as i32) * w.powi(k as i32) * beta_raw[k as usize])
                        .sum()
                })
                .collect()
        }
        Shape::Normal { loc, scale } => truncated_raw_moments(Family::Normal, loc, scale, lo, hi, top)
            .ok_or_else(|| Error::NumericalBreakdown("truncated normal has no mass".into()))?,
        Shape::Logistic { loc, scale } => truncated_raw_moments(Family::Logistic, loc, scale, lo, hi, top)
            .ok_or_else(|| Error::NumericalBreakdown("truncated logistic has no mass".into()))?,
    };
    let mean = raw[0];
    let var = (raw[1] - mean * mean).max(0.0);
    let moments = qs.iter().map(|&q| Moment { q, value: raw[q as usize - 1] }).collect();
    Ok(MomentSummary { mean, std: var.sqrt(), moments })
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
