//! Truncated Radon–Nikodym cocycles with tail bounds, the Gibbs cocycle, and
//! the comparison set / defect used to transport cocycle values through φ.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::config::Configuration;
use crate::construction::PhiMap;
use crate::error::{LabError, Result};
use crate::family::{EtaWeights, MarginalFamily};
use crate::group::{mul, GroupElement, GroupKind};
use crate::rng::coordinate_uniform;

/// A truncated cocycle value. The bounds always travel with the value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CocycleEstimate {
    pub value: f64,
    pub radius: u32,
    pub tail_mean_bound: f64,
    pub tail_std_bound: f64,
}

impl CocycleEstimate {
    pub fn exact(value: f64, radius: u32) -> Self {
        CocycleEstimate { value, radius, tail_mean_bound: 0.0, tail_std_bound: 0.0 }
    }

    /// Slack required before an inequality on the untruncated value is accepted:
    /// mean bound plus three standard-deviation bounds.
    pub fn slack(&self) -> f64 {
        self.tail_mean_bound + 3.0 * self.tail_std_bound
    }

    /// True if `|r − t| < eps` holds with the tail slack to spare.
    pub fn within(&self, t: f64, eps: f64) -> bool {
        (self.value - t).abs() + self.slack() < eps
    }
}

/// Options for tail bounds.
#[derive(Clone, Copy, Debug, Default)]
pub struct TailOptions {
    /// Overrides the default constant `2/δ²`.
    pub constant: Option<f64>,
}

fn tail_bounds(family: &MarginalFamily, g: &GroupElement, radius: u32, opts: TailOptions) -> (f64, f64) {
    family.kakutani_tail(g, radius).bounds(opts.constant)
}

/// `Σ_{h∈ball(R)} (log μ_h(x_h) − log μ_{gh}(x_h))` with tail bounds.
pub fn rn_cocycle(family: &MarginalFamily, g: &GroupElement, x: &Configuration, radius: u32) -> Result<CocycleEstimate> {
    rn_cocycle_with(family, g, x, radius, TailOptions::default())
}

pub fn rn_cocycle_with(
    family: &MarginalFamily,
    g: &GroupElement,
    x: &Configuration,
    radius: u32,
    opts: TailOptions,
) -> Result<CocycleEstimate> {
    family.model().inv(g)?;
    if g.is_identity() {
        return Ok(CocycleEstimate::exact(0.0, radius));
    }
    let mut value = 0.0;
    let mut err = None;
    family.model().for_each_in_ball(radius, |h| {
        let a = x.value(h);
        match mul(g, h) {
            Ok(gh) => value += family.eta(h).get(a) - family.eta(&gh).get(a),
            Err(e) => err = Some(e),
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    let (m, s) = tail_bounds(family, g, radius, opts);
    Ok(CocycleEstimate { value, radius, tail_mean_bound: m, tail_std_bound: s })
}

/// `c(x, x2) = Σ_g (η_g(x_g) − η_g(x2_g))` for weights `η = log(μ/λ)`.
pub fn gibbs_cocycle(family: &MarginalFamily, x: &Configuration, x2: &Configuration) -> Result<f64> {
    gibbs_general(|g| family.eta(g), x, x2)
}

/// Gibbs cocycle for arbitrary weights. The two points must be finite
/// modifications of the same underlying sample.
pub fn gibbs_general(eta: impl Fn(&GroupElement) -> EtaWeights, x: &Configuration, x2: &Configuration) -> Result<f64> {
    let diff = x.homoclinic_difference(x2).ok_or(LabError::NotHomoclinic)?;
    Ok(diff.iter().map(|g| eta(g).get(x.value(g)) - eta(g).get(x2.value(g))).sum())
}

/// Members of `L = {g : max_a |η_g(a)| ≥ ε/(2·supp_size)}` found in ball(R_search).
#[derive(Clone, Debug, Serialize)]
pub struct ComparisonSet {
    pub threshold: f64,
    pub radius: u32,
    pub members: Vec<GroupElement>,
    pub warning: Option<String>,
}

impl ComparisonSet {
    pub fn contains(&self, g: &GroupElement) -> bool {
        self.members.binary_search(g).is_ok()
    }
}

pub fn comparison_threshold(supp_size: usize, eps: f64) -> f64 {
    eps / (2.0 * supp_size as f64)
}

/// Whether `g` belongs to the comparison set at the given threshold.
pub fn in_comparison_set(family: &MarginalFamily, g: &GroupElement, threshold: f64) -> bool {
    family.eta(g).sup_norm() >= threshold
}

pub fn comparison_set(family: &MarginalFamily, supp_size: usize, eps: f64, r_search: u32) -> Result<ComparisonSet> {
    if !(eps > 0.0) || supp_size == 0 {
        return Err(LabError::Precondition("comparison set needs eps > 0 and a nonempty support".into()));
    }
    let threshold = comparison_threshold(supp_size, eps);
    let mut members = Vec::new();
    family.model().for_each_in_ball(r_search, |g| {
        if in_comparison_set(family, g, threshold) {
            members.push(g.clone());
        }
    })?;
    let on_boundary = members.iter().any(|g| g.word_length() == r_search as u64);
    let warning = on_boundary.then(|| {
        format!("finiteness of L not visible at R_search = {r_search}: the outer sphere still has members")
    });
    Ok(ComparisonSet { threshold, radius: r_search, members, warning })
}

/// `Σ_{h∈supp(φ)} log(λ(x_h)·μ_{gh}(φx_h) / (μ_{gh}(x_h)·λ(φx_h)))`, which equals
/// `r(g,x) − r(g,φx) − c(x,φx)`.
pub fn compare_defect(family: &MarginalFamily, g: &GroupElement, phi: &PhiMap, x: &Configuration) -> Result<f64> {
    let y = phi.apply(x)?;
    let mut total = 0.0;
    for h in phi.support() {
        let (a, b) = (x.value(&h), y.value(&h));
        if a != b {
            let eta = family.eta(&mul(g, &h)?);
            total += eta.get(b) - eta.get(a);
        }
    }
    Ok(total)
}

/// Evaluates `r(g, x)` for every g in ball(R_group) at truncation radius R,
/// sharing all x-independent work across points.
pub struct CocycleScanner {
    family: MarginalFamily,
    shifts: Vec<GroupElement>,
    radius: u32,
    tails: Vec<(f64, f64)>,
    engine: Engine,
}

enum Engine {
    Direct { ball: Vec<GroupElement>, eta: Vec<EtaWeights> },
    Fft(Box<ZFft>),
}

/// On Z, with `y_h = 1[x_h = 0]`, `e_h = η_h(1)` and `d_h = η_h(0) − η_h(1)`:
/// `r(m,x) = Σ_{|h|≤R} e_h − Σ_{|h|≤R} e_{h+m} + Σ y_h d_h − Σ y_h d_{h+m}`.
/// The last sum is a cross-correlation evaluated by FFT.
struct ZFft {
    r: i64,
    rg: i64,
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    spec_d: Vec<Complex64>,
    e_prefix: Vec<f64>,
    e_centre: f64,
    d_centre: Vec<f64>,
    mu_centre: Vec<f64>,
}

impl CocycleScanner {
    pub fn new(family: &MarginalFamily, group_radius: u32, trunc_radius: u32) -> Result<Self> {
        Self::with_options(family, group_radius, trunc_radius, TailOptions::default())
    }

    pub fn with_options(family: &MarginalFamily, group_radius: u32, trunc_radius: u32, opts: TailOptions) -> Result<Self> {
        let shifts = family.model().ball(group_radius)?;
        let tails = shifts.iter().map(|g| tail_bounds(family, g, trunc_radius, opts)).collect();
        let engine = if family.model().kind() == GroupKind::Z {
            Engine::Fft(Box::new(ZFft::new(family, group_radius as i64, trunc_radius as i64)))
        } else {
            let ball = family.model().ball(trunc_radius)?;
            let eta = ball.iter().map(|h| family.eta(h)).collect();
            Engine::Direct { ball, eta }
        };
        Ok(CocycleScanner { family: family.clone(), shifts, radius: trunc_radius, tails, engine })
    }

    pub fn shifts(&self) -> &[GroupElement] {
        &self.shifts
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    /// Estimates for every shift, in the canonical order of [`shifts`].
    pub fn evaluate(&self, x: &Configuration) -> Vec<CocycleEstimate> {
        let values = match &self.engine {
            Engine::Fft(z) => z.values(x, &self.shifts),
            Engine::Direct { ball, eta } => {
                let xs: Vec<u8> = ball.iter().map(|h| x.value(h)).collect();
                self.shifts
                    .iter()
                    .map(|g| {
                        if g.is_identity() {
                            return 0.0;
                        }
                        ball.iter()
                            .zip(&xs)
                            .zip(eta)
                            .map(|((h, &a), e)| e.get(a) - self.family.eta(&mul(g, h).unwrap()).get(a))
                            .sum()
                    })
                    .collect()
            }
        };
        values
            .into_iter()
            .zip(&self.tails)
            .map(|(value, &(m, s))| CocycleEstimate { value, radius: self.radius, tail_mean_bound: m, tail_std_bound: s })
            .collect()
    }
}

impl ZFft {
    fn new(family: &MarginalFamily, rg: i64, r: i64) -> Self {
        let lo = -r - rg;
        let len = (2 * r + 2 * rg + 1) as usize;
        let n = len.next_power_of_two();
        let mut e_prefix = vec![0.0; len + 1];
        let mut d_full = vec![0.0; len];
        for i in 0..len {
            let eta = family.eta(&GroupElement::Z(lo + i as i64));
            e_prefix[i + 1] = e_prefix[i] + eta.eta1;
            d_full[i] = eta.spread();
        }
        let centre = rg as usize..(rg + 2 * r + 1) as usize;
        let e_centre = e_prefix[centre.end] - e_prefix[centre.start];
        let d_centre = d_full[centre.clone()].to_vec();
        let mu_centre = (-r..=r).map(|h| family.mu0(&GroupElement::Z(h))).collect();
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let mut spec_d: Vec<Complex64> = d_full.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        spec_d.resize(n, Complex64::new(0.0, 0.0));
        fwd.process(&mut spec_d);
        ZFft { r, rg, n, fwd, inv, spec_d, e_prefix, e_centre, d_centre, mu_centre }
    }

    fn values(&self, x: &Configuration, shifts: &[GroupElement]) -> Vec<f64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n];
        let mut yd = 0.0;
        let plain = x.is_plain();
        let stream = x.stream();
        for (i, h) in (-self.r..=self.r).enumerate() {
            let zero = if plain {
                coordinate_uniform(stream, h as u64) < self.mu_centre[i]
            } else {
                x.value(&GroupElement::Z(h)) == 0
            };
            if zero {
                buf[i].re = 1.0;
                yd += self.d_centre[i];
            }
        }
        self.fwd.process(&mut buf);
        for (b, d) in buf.iter_mut().zip(&self.spec_d) {
            *b = b.conj() * d;
        }
        self.inv.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        shifts
            .iter()
            .map(|g| {
                let GroupElement::Z(m) = g else { unreachable!() };
                if *m == 0 {
                    return 0.0;
                }
                let start = (m + self.rg) as usize;
                let shifted_e = self.e_prefix[start + (2 * self.r + 1) as usize] - self.e_prefix[start];
                let corr = buf[start].re * scale;
                self.e_centre - shifted_e + yd - corr
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::sample;

    #[test]
    fn fft_scanner_matches_direct_sums() {
        let f = MarginalFamily::z_demo(0.1, 0.5).unwrap();
        let scanner = CocycleScanner::new(&f, 30, 600).unwrap();
        for seed in 0..4 {
            let x = sample(&f, seed);
            let fast = scanner.evaluate(&x);
            for (g, est) in scanner.shifts().iter().zip(&fast) {
                let direct = rn_cocycle(&f, g, &x, 600).unwrap();
                assert!((est.value - direct.value).abs() < 1e-9, "{g}: {} vs {}", est.value, direct.value);
                assert_eq!(est.tail_std_bound, direct.tail_std_bound);
            }
        }
    }

    #[test]
    fn fft_scanner_handles_modified_points() {
        let f = MarginalFamily::z_demo(0.1, 0.5).unwrap();
        let scanner = CocycleScanner::new(&f, 10, 300).unwrap();
        let x = sample(&f, 11).act(&GroupElement::Z(3)).unwrap().with_values([(GroupElement::Z(2), 1)]);
        for (g, est) in scanner.shifts().iter().zip(scanner.evaluate(&x)) {
            let direct = rn_cocycle(&f, g, &x, 300).unwrap();
            assert!((est.value - direct.value).abs() < 1e-9);
        }
    }

    #[test]
    fn direct_engine_on_z2() {
        let f = MarginalFamily::z2_demo(0.1, 0.5).unwrap();
        let scanner = CocycleScanner::new(&f, 2, 12).unwrap();
        let x = sample(&f, 5);
        for (g, est) in scanner.shifts().iter().zip(scanner.evaluate(&x)) {
            let direct = rn_cocycle(&f, g, &x, 12).unwrap();
            assert!((est.value - direct.value).abs() < 1e-12);
        }
    }
}
