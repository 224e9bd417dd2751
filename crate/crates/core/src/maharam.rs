//! The Maharam skew product `g(x,t) = (gx, t + r(g,x))`, orbit-return scans,
//! essential-value witnesses and ratio-set coverage.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cocycle::{rn_cocycle, compare_defect, CocycleEstimate, CocycleScanner};
use crate::config::{cylinder_measure, exact_rn, sample, Configuration, CylinderSet, FinitelyPerturbedFamily};
use crate::construction::{build_phi, PhiMap, PhiOptions};
use crate::error::{LabError, Result};
use crate::family::{MarginalFamily, Sign};
use crate::group::{inv, mul, GroupElement};
use crate::rng::{labeled_seed, sub_seed};
use crate::stats::Proportion;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum YModel {
    Trivial,
    /// Shift on `{0,1}^G` with the product of a fixed marginal `ζ`.
    Bernoulli { zeta0: f64 },
}

/// `X × Y` with the diagonal action; `Y` is measure preserving.
#[derive(Clone, Debug)]
pub struct ProductSystem {
    family: MarginalFamily,
    y_model: YModel,
    y_family: Option<MarginalFamily>,
}

impl ProductSystem {
    pub fn new(family: &MarginalFamily, y_model: YModel) -> Result<Self> {
        let y_family = match y_model {
            YModel::Trivial => None,
            YModel::Bernoulli { zeta0 } => {
                if !(zeta0 > 0.0 && zeta0 < 1.0) {
                    return Err(LabError::InvalidFamily(format!("zeta(0) = {zeta0} must lie in (0, 1)")));
                }
                let delta = zeta0.min(1.0 - zeta0).min(0.5);
                Some(MarginalFamily::constant(family.model().clone(), zeta0, delta)?)
            }
        };
        Ok(ProductSystem { family: family.clone(), y_model, y_family })
    }

    pub fn trivial(family: &MarginalFamily) -> Self {
        ProductSystem { family: family.clone(), y_model: YModel::Trivial, y_family: None }
    }

    pub fn family(&self) -> &MarginalFamily {
        &self.family
    }

    pub fn y_model(&self) -> YModel {
        self.y_model
    }

    /// The `i`-th sampled point `(x, y)` of a run seeded by `seed`.
    pub fn sample_point(&self, seed: u64, i: u64) -> (Configuration, Option<Configuration>) {
        let x = sample(&self.family, sub_seed(seed, i));
        let y = self.y_family.as_ref().map(|f| sample(f, sub_seed(labeled_seed(seed, "y"), i)));
        (x, y)
    }

    /// `r_{μ⊗ν}(g,(x,y)) = r_μ(g,x)` because ν is invariant.
    pub fn rn(&self, g: &GroupElement, x: &Configuration, _y: Option<&Configuration>, radius: u32) -> Result<CocycleEstimate> {
        rn_cocycle(&self.family, g, x, radius)
    }
}

#[derive(Clone, Debug)]
pub struct MaharamPoint {
    pub x: Configuration,
    pub y: Option<Configuration>,
    pub t: f64,
    /// Accumulated tail bounds of the cocycle values added to `t`.
    pub tail_mean_bound: f64,
    pub tail_std_bound: f64,
}

impl MaharamPoint {
    pub fn new(x: Configuration, y: Option<Configuration>, t: f64) -> Self {
        MaharamPoint { x, y, t, tail_mean_bound: 0.0, tail_std_bound: 0.0 }
    }
}

/// `(x, y, t) ↦ (gx, gy, t + r(g,x))`.
pub fn maharam_step(system: &ProductSystem, g: &GroupElement, p: &MaharamPoint, radius: u32) -> Result<MaharamPoint> {
    if g.is_identity() {
        return Ok(p.clone());
    }
    let r = system.rn(g, &p.x, p.y.as_ref(), radius)?;
    Ok(MaharamPoint {
        x: p.x.act(g)?,
        y: p.y.as_ref().map(|y| y.act(g)).transpose()?,
        t: p.t + r.value,
        tail_mean_bound: p.tail_mean_bound + r.tail_mean_bound,
        tail_std_bound: (p.tail_std_bound.powi(2) + r.tail_std_bound.powi(2)).sqrt(),
    })
}

/// Largest window enumerated by [`maharam_preservation_check`].
pub const MAX_PATTERN_BITS: usize = 25;

/// `|μ̃(g(A×I)) − μ̃(A×I)|` for `μ̃ = μ ⊗ eᵗdt`, by enumerating all patterns on
/// `W = K_A ∪ F ∪ g⁻¹F`: the image of `C_σ × I` is `gC_σ × (I + r(g,σ))`.
pub fn maharam_preservation_check(
    oracle: &FinitelyPerturbedFamily,
    g: &GroupElement,
    a: &CylinderSet,
    interval: (f64, f64),
) -> Result<f64> {
    let fam = oracle.family();
    let (lo, hi) = interval;
    if !(lo <= hi) {
        return Err(LabError::Precondition(format!("empty interval [{lo}, {hi}]")));
    }
    let mut window: Vec<GroupElement> = oracle.active_window(g)?;
    window.extend(a.window());
    window.sort();
    window.dedup();
    if window.len() > MAX_PATTERN_BITS {
        return Err(LabError::ResourceLimit(format!("window of {} coordinates exceeds 2^{MAX_PATTERN_BITS} patterns", window.len())));
    }
    let fixed: Vec<Option<u8>> =
        window.iter().map(|w| a.entries().iter().find(|(h, _)| h == w).map(|&(_, s)| s)).collect();
    let free: Vec<usize> = (0..window.len()).filter(|&i| fixed[i].is_none()).collect();
    let g_window: Vec<GroupElement> = window.iter().map(|w| mul(g, w)).collect::<Result<_>>()?;
    let base = sample(fam, 0);
    let strip = hi.exp() - lo.exp();
    let mut image = 0.0;
    for bits in 0u64..(1u64 << free.len()) {
        let mut sigma: Vec<u8> = fixed.iter().map(|s| s.unwrap_or(0)).collect();
        for (j, &i) in free.iter().enumerate() {
            sigma[i] = ((bits >> j) & 1) as u8;
        }
        let x = base.with_values(window.iter().cloned().zip(sigma.iter().copied()));
        let r = exact_rn(oracle, g, &x)?;
        let moved: f64 = g_window.iter().zip(&sigma).map(|(h, &s)| fam.mu(h, s)).product();
        image += moved * r.exp() * strip;
    }
    Ok((image - cylinder_measure(fam, a) * strip).abs())
}

/// Whether `g·x ∈ A`, i.e. `x_{g⁻¹h} = s` for every `(h, s)` in A.
fn translate_in(a: &CylinderSet, x: &Configuration, g: &GroupElement) -> bool {
    let ginv = inv(g);
    a.entries().iter().all(|(h, s)| x.value(&mul(&ginv, h).expect("same model")) == *s)
}

fn y_ok(b: Option<&CylinderSet>, y: Option<&Configuration>, g: &GroupElement) -> bool {
    match (b, y) {
        (Some(b), Some(y)) => translate_in(b, y, g),
        _ => true,
    }
}

fn x_y_in(a: &CylinderSet, b: Option<&CylinderSet>, x: &Configuration, y: Option<&Configuration>) -> bool {
    a.contains(x) && b.zip(y).map_or(true, |(b, y)| b.contains(y))
}

#[derive(Clone, Debug, Serialize)]
pub struct ReturnEvent {
    pub sample: u64,
    pub g: GroupElement,
    pub r: CocycleEstimate,
}

/// Parameters shared by the orbit scans.
#[derive(Clone, Debug)]
pub struct ScanParams {
    pub group_radius: u32,
    pub trunc_radius: u32,
    pub samples: u64,
    pub seed: u64,
}

/// Truncation radius that keeps the Z correlation transform at 2^18 points.
pub fn default_trunc_radius(group_radius: u32) -> u32 {
    let n = 1u32 << 18;
    ((n - 1).saturating_sub(2 * group_radius) / 2).max(3 * group_radius + 2)
}

fn check_cylinder(system: &ProductSystem, a: &CylinderSet) -> Result<()> {
    for (h, _) in a.entries() {
        system.family.model().inv(h)?;
    }
    if !(cylinder_measure(&system.family, a) > 0.0) {
        return Err(LabError::Precondition("cylinder has measure zero".into()));
    }
    Ok(())
}

/// All `(sample, g)` with `(x,y) ∈ A×B`, `g ∈ ball(R_group)` and `g(x,y) ∈ A×B`.
pub fn scan_returns(system: &ProductSystem, a: &CylinderSet, b: Option<&CylinderSet>, p: &ScanParams) -> Result<Vec<ReturnEvent>> {
    check_cylinder(system, a)?;
    let scanner = CocycleScanner::new(&system.family, p.group_radius, p.trunc_radius)?;
    let per: Vec<Vec<ReturnEvent>> = (0..p.samples)
        .into_par_iter()
        .map(|i| {
            let (x, y) = system.sample_point(p.seed, i);
            if !x_y_in(a, b, &x, y.as_ref()) {
                return Vec::new();
            }
            let est = scanner.evaluate(&x);
            scanner
                .shifts()
                .iter()
                .zip(est)
                .filter(|(g, _)| translate_in(a, &x, g) && y_ok(b, y.as_ref(), g))
                .map(|(g, r)| ReturnEvent { sample: i, g: g.clone(), r })
                .collect()
        })
        .collect();
    Ok(per.into_iter().flatten().collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct ConservativityRow {
    pub group_radius: u32,
    pub fraction: Proportion,
}

/// For each radius, the fraction of sampled points of `A×B` with a return
/// `g ∉ F_excl`, `|g| ≤ radius`, and `|r(g,x)| < ε` with tail slack to spare.
/// One scan at the largest radius serves all radii, so the rows are nested.
pub fn conservativity_return_profile(
    system: &ProductSystem,
    a: &CylinderSet,
    b: Option<&CylinderSet>,
    eps: f64,
    excluded: &[GroupElement],
    radii: &[u32],
    trunc_radius: u32,
    samples: u64,
    seed: u64,
) -> Result<Vec<ConservativityRow>> {
    check_cylinder(system, a)?;
    if !(eps > 0.0) {
        return Err(LabError::Precondition("eps must be positive".into()));
    }
    let max_r = radii.iter().copied().max().unwrap_or(0);
    let scanner = CocycleScanner::new(&system.family, max_r, trunc_radius)?;
    let per: Vec<Option<u64>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let (x, y) = system.sample_point(seed, i);
            if !x_y_in(a, b, &x, y.as_ref()) {
                return None;
            }
            let est = scanner.evaluate(&x);
            let best = scanner
                .shifts()
                .iter()
                .zip(&est)
                .filter(|(g, r)| {
                    !excluded.contains(g) && r.within(0.0, eps) && translate_in(a, &x, g) && y_ok(b, y.as_ref(), g)
                })
                .map(|(g, _)| g.word_length())
                .min();
            Some(best.unwrap_or(u64::MAX))
        })
        .collect();
    let hits: Vec<u64> = per.into_iter().flatten().collect();
    Ok(radii
        .iter()
        .map(|&r| {
            let s = hits.iter().filter(|&&w| w <= r as u64).count() as u64;
            ConservativityRow { group_radius: r, fraction: Proportion::lcb99(s, hits.len() as u64) }
        })
        .collect())
}

pub fn conservativity_return_check(
    system: &ProductSystem,
    a: &CylinderSet,
    eps: f64,
    excluded: &[GroupElement],
    p: &ScanParams,
) -> Result<Proportion> {
    let rows = conservativity_return_profile(system, a, None, eps, excluded, &[p.group_radius], p.trunc_radius, p.samples, p.seed)?;
    Ok(rows[0].fraction)
}

/// `c∘φ∘c⁻¹`.
pub fn phi_conjugate(phi: &PhiMap, c: &GroupElement) -> Result<PhiMap> {
    phi.conjugate(c)
}

#[derive(Clone, Debug, Serialize)]
pub struct WitnessEvent {
    pub sample: u64,
    pub g: GroupElement,
    pub r: CocycleEstimate,
}

/// Individual terms of `r(g,x) − t = defect + r(g,φx) + (c(x,φx) − t)` on the
/// accepted witnesses, each compared with ε/3.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct ChainDiagnostics {
    pub checked: u64,
    pub defect_ok: u64,
    pub image_rn_ok: u64,
    pub gibbs_ok: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct WitnessReport {
    pub t: f64,
    pub eps: f64,
    pub sign: Sign,
    pub phi_horizon: usize,
    pub domain_estimate: Option<Proportion>,
    /// Witnesses among sampled points of `A×B`.
    pub fraction: Proportion,
    pub in_domain: u64,
    pub chain: ChainDiagnostics,
    pub events: Vec<WitnessEvent>,
}

/// Options for witness scans.
#[derive(Clone, Debug)]
pub struct WitnessOptions {
    pub scan: ScanParams,
    pub phi: PhiOptions,
    /// Run the ε/3 chain diagnostics on accepted witnesses.
    pub chain: bool,
}

fn witness_sign(family: &MarginalFamily) -> Sign {
    if family.lambda0() >= 0.5 {
        Sign::Plus
    } else {
        Sign::Minus
    }
}

/// Builds φ with tolerance ε/3 on the window of A, then counts sampled points
/// `(x,y) ∈ A×B` with `x ∈ Dom φ` admitting `g ∈ ball(R_group)` such that
/// `g(x,y) ∈ (φ×id)((A ∩ Dom φ)×B)` and `|r(g,x) − t| < ε` with tail slack.
pub fn essential_value_witness(
    system: &ProductSystem,
    a: &CylinderSet,
    b: Option<&CylinderSet>,
    t: f64,
    eps: f64,
    opts: &WitnessOptions,
) -> Result<WitnessReport> {
    Ok(witness_scan(system, a, b, &[t], eps, opts)?.remove(0))
}

/// Witness scans for several targets sharing one cocycle evaluation per point.
pub fn witness_scan(
    system: &ProductSystem,
    a: &CylinderSet,
    b: Option<&CylinderSet>,
    targets: &[f64],
    eps: f64,
    opts: &WitnessOptions,
) -> Result<Vec<WitnessReport>> {
    check_cylinder(system, a)?;
    let phis: Vec<PhiMap> = targets.iter().map(|&t| witness_phi(system, a, t, eps, opts)).collect::<Result<_>>()?;
    scan_with(system, a, b, &phis, targets, eps, opts)
}

/// The φ used for target `t`: tolerance ε/3, forbidden window `shape(A)`.
fn witness_phi(system: &ProductSystem, a: &CylinderSet, t: f64, eps: f64, opts: &WitnessOptions) -> Result<PhiMap> {
    build_phi(&system.family, &a.window(), t, eps / 3.0, witness_sign(&system.family), &opts.phi)
}

fn scan_with(
    system: &ProductSystem,
    a: &CylinderSet,
    b: Option<&CylinderSet>,
    phis: &[PhiMap],
    targets: &[f64],
    eps: f64,
    opts: &WitnessOptions,
) -> Result<Vec<WitnessReport>> {
    let sign = witness_sign(&system.family);
    let p = &opts.scan;
    let scanner = CocycleScanner::new(&system.family, p.group_radius, p.trunc_radius)?;
    type PerPoint = Option<Vec<(bool, Option<WitnessEvent>, ChainDiagnostics)>>;
    let per: Vec<PerPoint> = (0..p.samples)
        .into_par_iter()
        .map(|i| {
            let (x, y) = system.sample_point(p.seed, i);
            if !x_y_in(a, b, &x, y.as_ref()) {
                return None;
            }
            let doms: Vec<bool> = phis.iter().map(|phi| phi.contains(&x)).collect();
            if !doms.iter().any(|&d| d) {
                return Some(vec![(false, None, ChainDiagnostics::default()); phis.len()]);
            }
            let est = scanner.evaluate(&x);
            Some(
                phis.iter()
                    .zip(targets)
                    .zip(&doms)
                    .map(|((phi, &t), &dom)| {
                        if !dom {
                            return (false, None, ChainDiagnostics::default());
                        }
                        let found = scanner.shifts().iter().zip(&est).find(|(g, r)| {
                            r.within(t, eps)
                                && translate_in(a, &x, g)
                                && y_ok(b, y.as_ref(), g)
                                && x.act(g).ok().and_then(|w| phi.preimage(&w)).map_or(false, |pre| a.contains(&pre))
                        });
                        let event = found.map(|(g, r)| WitnessEvent { sample: i, g: g.clone(), r: *r });
                        let chain = match (&event, opts.chain) {
                            (Some(ev), true) => chain_terms(system, phi, &ev.g, &x, t, eps, p.trunc_radius),
                            _ => ChainDiagnostics::default(),
                        };
                        (true, event, chain)
                    })
                    .collect(),
            )
        })
        .collect();
    let trials = per.iter().filter(|v| v.is_some()).count() as u64;
    let mut out = Vec::with_capacity(targets.len());
    for (j, (phi, &t)) in phis.iter().zip(targets).enumerate() {
        let mut in_domain = 0;
        let mut chain = ChainDiagnostics::default();
        let mut events = Vec::new();
        for rows in per.iter().flatten() {
            let (dom, ev, ch) = &rows[j];
            in_domain += *dom as u64;
            chain.checked += ch.checked;
            chain.defect_ok += ch.defect_ok;
            chain.image_rn_ok += ch.image_rn_ok;
            chain.gibbs_ok += ch.gibbs_ok;
            if let Some(e) = ev {
                events.push(e.clone());
            }
        }
        out.push(WitnessReport {
            t,
            eps,
            sign,
            phi_horizon: phi.n(),
            domain_estimate: phi.domain_estimate(),
            fraction: Proportion::lcb99(events.len() as u64, trials),
            in_domain,
            chain,
            events,
        });
    }
    Ok(out)
}

fn chain_terms(system: &ProductSystem, phi: &PhiMap, g: &GroupElement, x: &Configuration, t: f64, eps: f64, radius: u32) -> ChainDiagnostics {
    let third = eps / 3.0;
    let mut d = ChainDiagnostics { checked: 1, ..Default::default() };
    if let Ok(defect) = compare_defect(&system.family, g, phi, x) {
        d.defect_ok = (defect.abs() < third) as u64;
    }
    if let Ok(y) = phi.apply(x) {
        if let Ok(r) = rn_cocycle(&system.family, g, &y, radius) {
            d.image_rn_ok = (r.value.abs() + r.slack() < third) as u64;
        }
    }
    if let Ok(c) = phi.rn(x) {
        d.gibbs_ok = ((c - t).abs() < third) as u64;
    }
    d
}

#[derive(Clone, Debug, Serialize)]
pub struct RatioRow {
    pub t: f64,
    pub covered: bool,
    /// Smallest `|r − t| + slack` over the events.
    pub best: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RatioReport {
    pub eps: f64,
    pub rows: Vec<RatioRow>,
    pub coverage: f64,
    pub label: String,
}

/// Grid coverage by events with `|r − t| + slack < ε`, and a heuristic type label.
pub fn ratio_hist(events: &[CocycleEstimate], grid: &[f64], eps: f64) -> RatioReport {
    let rows: Vec<RatioRow> = grid
        .iter()
        .map(|&t| {
            let best = events.iter().map(|r| (r.value - t).abs() + r.slack()).fold(f64::INFINITY, f64::min);
            RatioRow { t, covered: best < eps, best }
        })
        .collect();
    let covered = rows.iter().filter(|r| r.covered).count();
    let coverage = if grid.is_empty() { 0.0 } else { covered as f64 / grid.len() as f64 };
    let label = if events.is_empty() || grid.is_empty() {
        "insufficient data"
    } else if covered >= 1 && rows.iter().all(|r| r.covered == (r.t == 0.0)) {
        "II-consistent"
    } else if coverage >= 0.9 {
        "III_1-consistent"
    } else {
        "inconclusive"
    };
    RatioReport { eps, rows, coverage, label: label.to_string() }
}

#[derive(Clone, Debug, Serialize)]
pub struct RatioEvent {
    pub source: String,
    pub sample: u64,
    pub g: GroupElement,
    pub r: CocycleEstimate,
}

#[derive(Clone, Debug, Serialize)]
pub struct RatioSetResult {
    pub report: RatioReport,
    pub events: Vec<RatioEvent>,
    pub warnings: Vec<String>,
}

/// Return events near the grid plus φ-assisted witness events for every grid
/// target of the right sign; targets where φ cannot be built are reported as
/// warnings and left to the plain returns.
pub fn ratio_set_scan(system: &ProductSystem, a: &CylinderSet, grid: &[f64], eps: f64, opts: &WitnessOptions) -> Result<RatioSetResult> {
    let lo = grid.iter().copied().fold(f64::INFINITY, f64::min) - eps;
    let hi = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max) + eps;
    let mut events: Vec<RatioEvent> = scan_returns(system, a, None, &opts.scan)?
        .into_iter()
        .filter(|e| e.r.value > lo && e.r.value < hi)
        .map(|e| RatioEvent { source: "return".into(), sample: e.sample, g: e.g, r: e.r })
        .collect();
    let mut warnings = Vec::new();
    let sign = witness_sign(&system.family);
    let (mut phis, mut targets) = (Vec::new(), Vec::new());
    for &t in grid {
        if (sign == Sign::Plus && t < 0.0) || (sign == Sign::Minus && t > 0.0) {
            warnings.push(format!("no phi-assisted scan at t = {t}: wrong sign for lambda(0)"));
            continue;
        }
        match witness_phi(system, a, t, eps, opts) {
            Ok(phi) => {
                phis.push(phi);
                targets.push(t);
            }
            Err(LabError::DivergenceTooSlow { budget, best }) => warnings.push(format!(
                "no phi-assisted scan at t = {t}: no horizon within {budget} pairs (best probability {best:.4})"
            )),
            Err(e) => return Err(e),
        }
    }
    if !phis.is_empty() {
        for rep in scan_with(system, a, None, &phis, &targets, eps, opts)? {
            let source = format!("witness t={}", rep.t);
            events.extend(rep.events.into_iter().map(|e| RatioEvent { source: source.clone(), sample: e.sample, g: e.g, r: e.r }));
        }
    }
    let estimates: Vec<CocycleEstimate> = events.iter().map(|e| e.r).collect();
    Ok(RatioSetResult { report: ratio_hist(&estimates, grid, eps), events, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::GroupModel;
    use std::collections::BTreeMap;

    fn z(n: i64) -> GroupElement {
        GroupElement::Z(n)
    }

    #[test]
    fn single_site_preservation() {
        let mut m = BTreeMap::new();
        m.insert(z(0), 0.6);
        let o = FinitelyPerturbedFamily::new(GroupModel::z(), 0.5, 0.1, m).unwrap();
        let a = CylinderSet::new([(z(-1), 0), (z(0), 1), (z(1), 0)]).unwrap();
        assert!(maharam_preservation_check(&o, &z(1), &a, (0.0, 1.0)).unwrap() < 1e-12);
        assert_eq!(maharam_preservation_check(&o, &z(0), &a, (0.0, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn step_follows_exact_rn() {
        let mut m = BTreeMap::new();
        m.insert(z(0), 0.6);
        let o = FinitelyPerturbedFamily::new(GroupModel::z(), 0.5, 0.1, m).unwrap();
        let sys = ProductSystem::trivial(o.family());
        let x = sample(o.family(), 1).with_values([(z(0), 0), (z(-1), 1)]);
        let p = maharam_step(&sys, &z(1), &MaharamPoint::new(x, None, 0.0), 10).unwrap();
        assert!((p.t - 0.405_465_108_108_164_4).abs() < 1e-12);
        assert_eq!(p.tail_std_bound, 0.0);
    }

    #[test]
    fn ratio_hist_labels() {
        assert_eq!(ratio_hist(&[], &[0.0, 0.5], 0.1).label, "insufficient data");
        let zero = [CocycleEstimate::exact(0.0, 5)];
        let r = ratio_hist(&zero, &[0.0, 0.25, 0.5], 0.1);
        assert_eq!(r.label, "II-consistent");
        assert!((r.coverage - 1.0 / 3.0).abs() < 1e-15);
    }
}
