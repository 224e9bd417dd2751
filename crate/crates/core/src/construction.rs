//! Swap maps τ_k between pinned and unpinned coordinates, the walk `S_n` of
//! their increments, the horizon search and the partial transformation φ.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{sample, Configuration};
use crate::error::{LabError, Result};
use crate::family::{MarginalFamily, PinRule, Sign};
use crate::group::{mul, GroupElement};
use crate::rng::sub_seed;
use crate::stats::{ks_statistic, moments, normal_cdf, Proportion};

/// Where a pair's two coordinates live, with what the fast sampling path needs.
#[derive(Clone, Debug)]
struct Coords {
    pin: GroupElement,
    site: GroupElement,
    pin_key: u64,
    site_key: u64,
    pin_mu0: f64,
    site_mu0: f64,
}

impl Coords {
    fn new(family: &MarginalFamily, pin: GroupElement, site: GroupElement) -> Self {
        Coords {
            pin_key: pin.key(),
            site_key: site.key(),
            pin_mu0: family.mu0(&pin),
            site_mu0: family.mu0(&site),
            pin,
            site,
        }
    }

    /// `(x_site, x_pin)`.
    #[inline]
    fn read(&self, x: &Configuration, fast: bool) -> (u8, u8) {
        if fast {
            (x.base_value_with(self.site_key, self.site_mu0), x.base_value_with(self.pin_key, self.pin_mu0))
        } else {
            (x.value(&self.site), x.value(&self.pin))
        }
    }
}

/// One active pair `(g_k, h_k)`.
#[derive(Clone, Debug, Serialize)]
pub struct SwapPair {
    /// Position of `h_k` in the enumeration of non-pin sites.
    pub k: usize,
    pub pin: GroupElement,
    pub site: GroupElement,
    /// μ_{h_k}(0).
    pub site_mu0: f64,
    /// `d_k = η_{h_k}(0) − η_{h_k}(1)`.
    pub d: f64,
    #[serde(skip)]
    coords: Coords,
}

impl SwapPair {
    #[inline]
    fn increment(&self, xh: u8, xg: u8) -> f64 {
        match (xh, xg) {
            (0, 1) => self.d,
            (1, 0) => -self.d,
            _ => 0.0,
        }
    }

    /// `(P(F = +d), P(F = −d))`.
    fn law(&self, lambda0: f64) -> (f64, f64) {
        (self.site_mu0 * (1.0 - lambda0), (1.0 - self.site_mu0) * lambda0)
    }

    /// Exact `(mean, variance)` of `F_k`.
    pub fn moments(&self, lambda0: f64) -> (f64, f64) {
        let mean = (self.site_mu0 - lambda0) * self.d;
        let (a, b) = self.law(lambda0);
        let second = self.d * self.d * (a + b);
        (mean, (second - mean * mean).max(0.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WalkStats {
    pub n: usize,
    pub a_n: f64,
    pub b_n: f64,
}

/// Pairs `(g_k, h_k)`, the excluded positions M and the forbidden window K.
#[derive(Clone, Debug)]
pub struct SwapSchedule {
    family: MarginalFamily,
    eps: f64,
    window: Vec<GroupElement>,
    pairs: Vec<SwapPair>,
    excluded: Vec<usize>,
    mean_prefix: Vec<f64>,
    var_prefix: Vec<f64>,
}

fn sign_factor(sign: Sign) -> Result<f64> {
    match sign {
        Sign::Plus => Ok(1.0),
        Sign::Minus => Ok(-1.0),
        Sign::Neutral => Err(LabError::Precondition("sign must be + or -".into())),
    }
}

/// Pin positions: the family's pin rule, or for unpinned families the `j⁴`
/// positions whose marginal already equals λ.
fn pin_source(family: &MarginalFamily) -> (PinRule, bool) {
    match family.pin_rule() {
        PinRule::None => (PinRule::FourthPowers, true),
        r => (r, false),
    }
}

fn is_pin_position(family: &MarginalFamily, rule: PinRule, needs_check: bool, i: u64) -> Result<bool> {
    if !rule.pins_index(i) {
        return Ok(false);
    }
    if !needs_check {
        return Ok(true);
    }
    let g = family.model().element_at(i)?;
    Ok(family.mu0(&g) == family.lambda0())
}

/// Enumerates non-pin sites in canonical order. Sites in K or with
/// `|d| ≥ ε/2` land in M; every other site is paired with the next unused pin
/// outside K, until `budget` active pairs exist.
pub fn build_schedule(family: &MarginalFamily, window: &[GroupElement], eps: f64, budget: usize) -> Result<SwapSchedule> {
    if !(eps > 0.0) {
        return Err(LabError::Precondition("eps must be positive".into()));
    }
    let model = family.model();
    for g in window {
        model.inv(g)?;
    }
    let forbidden: BTreeSet<&GroupElement> = window.iter().collect();
    let (rule, check) = pin_source(family);
    let lam = family.lambda0();
    let mut pairs = Vec::with_capacity(budget);
    let mut excluded = Vec::new();
    let mut pin_cursor = 0u64;
    let mut next_pin = || -> Result<GroupElement> {
        loop {
            let idx = rule.nth_index(pin_cursor).ok_or_else(|| {
                LabError::ResourceLimit("ran out of pinned sites representable in 64 bits".into())
            })?;
            pin_cursor += 1;
            let g = model.element_at(idx).map_err(|_| {
                LabError::ResourceLimit(format!("pinned site at enumeration index {idx} lies beyond the ball cap"))
            })?;
            if (check && family.mu0(&g) != lam) || forbidden.contains(&g) {
                continue;
            }
            return Ok(g);
        }
    };
    let mut i = 0u64;
    let mut k = 0usize;
    while pairs.len() < budget {
        if is_pin_position(family, rule, check, i)? {
            i += 1;
            continue;
        }
        let site = model.element_at(i).map_err(|_| {
            LabError::ResourceLimit(format!("only {} active pairs fit within the ball cap", pairs.len()))
        })?;
        i += 1;
        let eta = family.eta(&site);
        let d = eta.spread();
        if forbidden.contains(&site) || d.abs() >= eps / 2.0 {
            excluded.push(k);
            k += 1;
            continue;
        }
        let pin = next_pin()?;
        let site_mu0 = family.mu0(&site);
        let coords = Coords::new(family, pin.clone(), site.clone());
        pairs.push(SwapPair { k, pin, site, site_mu0, d, coords });
        k += 1;
    }
    SwapSchedule::assemble(family, eps, window.to_vec(), pairs, excluded)
}

impl SwapSchedule {
    /// A schedule with explicitly chosen pairs, validated against the invariants.
    pub fn from_pairs(
        family: &MarginalFamily,
        window: &[GroupElement],
        eps: f64,
        pairs: &[(GroupElement, GroupElement)],
    ) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(LabError::Precondition("eps must be positive".into()));
        }
        let lam = family.lambda0();
        let mut seen = BTreeSet::new();
        let forbidden: BTreeSet<&GroupElement> = window.iter().collect();
        let mut out = Vec::with_capacity(pairs.len());
        for (k, (pin, site)) in pairs.iter().enumerate() {
            family.model().inv(pin)?;
            family.model().inv(site)?;
            if family.mu0(pin) != lam {
                return Err(LabError::Precondition(format!("{pin} does not carry the marginal λ")));
            }
            if !seen.insert(pin.clone()) || !seen.insert(site.clone()) {
                return Err(LabError::Precondition(format!("pair {k} reuses a coordinate")));
            }
            if forbidden.contains(pin) || forbidden.contains(site) {
                return Err(LabError::Precondition(format!("pair {k} meets the forbidden window")));
            }
            let d = family.eta(site).spread();
            if d.abs() >= eps / 2.0 {
                return Err(LabError::Precondition(format!("|d| = {} at {site} is not below eps/2", d.abs())));
            }
            let coords = Coords::new(family, pin.clone(), site.clone());
            out.push(SwapPair { k, pin: pin.clone(), site: site.clone(), site_mu0: family.mu0(site), d, coords });
        }
        Self::assemble(family, eps, window.to_vec(), out, Vec::new())
    }

    fn assemble(family: &MarginalFamily, eps: f64, window: Vec<GroupElement>, pairs: Vec<SwapPair>, excluded: Vec<usize>) -> Result<Self> {
        let lam = family.lambda0();
        let mut mean_prefix = Vec::with_capacity(pairs.len() + 1);
        let mut var_prefix = Vec::with_capacity(pairs.len() + 1);
        let (mut a, mut v) = (0.0, 0.0);
        mean_prefix.push(0.0);
        var_prefix.push(0.0);
        for p in &pairs {
            let (m, s) = p.moments(lam);
            a += m;
            v += s;
            mean_prefix.push(a);
            var_prefix.push(v);
        }
        Ok(SwapSchedule { family: family.clone(), eps, window, pairs, excluded, mean_prefix, var_prefix })
    }

    pub fn family(&self) -> &MarginalFamily {
        &self.family
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn window(&self) -> &[GroupElement] {
        &self.window
    }

    pub fn pairs(&self) -> &[SwapPair] {
        &self.pairs
    }

    /// Enumeration positions in M.
    pub fn excluded(&self) -> &[usize] {
        &self.excluded
    }

    pub fn active_count(&self) -> usize {
        self.pairs.len()
    }

    /// The active pair at enumeration position `k`.
    pub fn pair(&self, k: usize) -> Result<&SwapPair> {
        self.pairs
            .binary_search_by_key(&k, |p| p.k)
            .map(|i| &self.pairs[i])
            .map_err(|_| LabError::InactiveIndex(k))
    }

    fn fast(&self, x: &Configuration) -> bool {
        x.is_plain() && x.family().same_as(&self.family)
    }

    /// `F_k(x) = η_{h_k}(x_{h_k}) − η_{h_k}(τ_k(x)_{h_k})`.
    pub fn increment(&self, k: usize, x: &Configuration) -> Result<f64> {
        let p = self.pair(k)?;
        let (xh, xg) = p.coords.read(x, false);
        Ok(p.increment(xh, xg))
    }

    pub fn moments(&self, k: usize) -> Result<(f64, f64)> {
        Ok(self.pair(k)?.moments(self.family.lambda0()))
    }

    /// The swap τ_k exchanging coordinates `g_k` and `h_k`.
    pub fn tau(&self, k: usize, x: &Configuration) -> Result<Configuration> {
        let p = self.pair(k)?;
        let (xh, xg) = p.coords.read(x, false);
        Ok(x.with_values([(p.site.clone(), xg), (p.pin.clone(), xh)]))
    }

    /// `log(dτ_k⁻¹μ/dμ)(x)`, which is `F_k(x)`.
    pub fn tau_rn(&self, k: usize, x: &Configuration) -> Result<f64> {
        self.increment(k, x)
    }

    /// `S_n(x)`, the sum over the first `n` active pairs.
    pub fn walk(&self, x: &Configuration, n: usize) -> Result<f64> {
        if n > self.pairs.len() {
            return Err(LabError::Precondition(format!("n = {n} exceeds the {} active pairs", self.pairs.len())));
        }
        let fast = self.fast(x);
        Ok(self.pairs[..n]
            .iter()
            .map(|p| {
                let (xh, xg) = p.coords.read(x, fast);
                p.increment(xh, xg)
            })
            .sum())
    }

    pub fn walk_stats(&self, n: usize) -> Result<WalkStats> {
        if n > self.pairs.len() {
            return Err(LabError::Precondition(format!("n = {n} exceeds the {} active pairs", self.pairs.len())));
        }
        Ok(WalkStats { n, a_n: self.mean_prefix[n], b_n: self.var_prefix[n].sqrt() })
    }

    fn walk_path(&self, x: &Configuration, n: usize, mut each: impl FnMut(usize, f64)) {
        let fast = self.fast(x);
        let mut s = 0.0;
        for (i, p) in self.pairs[..n].iter().enumerate() {
            let (xh, xg) = p.coords.read(x, fast);
            s += p.increment(xh, xg);
            each(i + 1, s);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonMode {
    Exact,
    MonteCarlo,
    Auto,
}

#[derive(Clone, Debug)]
pub struct HorizonOptions {
    pub mode: HorizonMode,
    /// Required excess over 1/3. Defaults to one standard error at p = 1/3 for
    /// Monte Carlo and 0 for the exact grid (whose bound is already rigorous).
    pub margin: Option<f64>,
    pub paths: u64,
    pub seed: u64,
    /// Maximum number of grid-bin updates in exact mode.
    pub work_limit: f64,
    pub max_n: Option<usize>,
}

impl Default for HorizonOptions {
    fn default() -> Self {
        HorizonOptions { mode: HorizonMode::Auto, margin: None, paths: 20_000, seed: 0, work_limit: 2e9, max_n: None }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Horizon {
    pub n: usize,
    pub method: HorizonMode,
    pub probability: f64,
    pub lower_bound: f64,
    pub margin: f64,
    pub bin_width: Option<f64>,
    pub bin_error: Option<f64>,
    pub dropped_mass: Option<f64>,
    pub paths: Option<u64>,
}

/// Smallest `N` with `P(σS_N > σt) ≥ 1/3 + margin`, where σ is the sign.
pub fn find_horizon(schedule: &SwapSchedule, t: f64, sign: Sign, opts: &HorizonOptions) -> Result<Horizon> {
    let sigma = sign_factor(sign)?;
    let max_n = opts.max_n.unwrap_or(schedule.active_count()).min(schedule.active_count());
    match opts.mode {
        HorizonMode::Exact => exact_horizon(schedule, sigma * t, sigma, max_n, opts),
        HorizonMode::MonteCarlo => mc_horizon(schedule, t, sigma, max_n, opts),
        HorizonMode::Auto => match exact_horizon(schedule, sigma * t, sigma, max_n, opts) {
            Err(LabError::ResourceLimit(_)) => mc_horizon(schedule, t, sigma, max_n, opts),
            other => other,
        },
    }
}

/// Grid convolution of the three-atom increment laws. Each `σd_k` is rounded to
/// a multiple of `w = 10⁻⁴·ε`; the accumulated rounding error `err_n` shifts the
/// threshold so that `Σ P(grid > σt + err_n)` is a lower bound. Mass trimmed
/// from the ends is dropped, which only lowers the bound further.
fn exact_horizon(schedule: &SwapSchedule, st: f64, sigma: f64, max_n: usize, opts: &HorizonOptions) -> Result<Horizon> {
    let lam = schedule.family.lambda0();
    let w = 1e-4 * schedule.eps;
    let margin = opts.margin.unwrap_or(0.0);
    let target = 1.0 / 3.0 + margin;
    let mut p: Vec<f64> = vec![1.0];
    let mut lo: i64 = 0;
    let mut err = 0.0;
    let mut dropped = 0.0;
    let mut work = 0.0;
    let mut best = 0.0f64;
    let mut next = Vec::new();
    for (n, pair) in schedule.pairs[..max_n].iter().enumerate() {
        let e = sigma * pair.d;
        let (mut a, mut b) = pair.law(lam);
        let mut k = (e / w).round() as i64;
        err += (e - k as f64 * w).abs();
        if k < 0 {
            k = -k;
            std::mem::swap(&mut a, &mut b);
        }
        let c = 1.0 - a - b;
        let ku = k as usize;
        let len = p.len();
        next.clear();
        next.resize(len + 2 * ku, 0.0);
        for (j, &v) in p.iter().enumerate() {
            next[j] += b * v;
            next[j + ku] += c * v;
            next[j + 2 * ku] += a * v;
        }
        lo -= k;
        std::mem::swap(&mut p, &mut next);
        work += p.len() as f64;
        if work > opts.work_limit {
            return Err(LabError::ResourceLimit(format!("exact horizon search exceeded {} bin updates", opts.work_limit)));
        }
        let (mut s, mut e_) = (0usize, p.len());
        let mut acc = 0.0;
        while s < e_ && acc + p[s] < 1e-15 {
            acc += p[s];
            s += 1;
        }
        let mut acc2 = 0.0;
        while e_ > s && acc2 + p[e_ - 1] < 1e-15 {
            acc2 += p[e_ - 1];
            e_ -= 1;
        }
        if s > 0 || e_ < p.len() {
            dropped += acc + acc2;
            p.truncate(e_);
            p.drain(..s);
            lo += s as i64;
        }
        let cut = st + err;
        let first = ((cut / w).floor() as i64 + 1 - lo).max(0) as usize;
        let lower: f64 = p.iter().skip(first).sum();
        best = best.max(lower);
        if lower >= target {
            let centre = ((st / w).floor() as i64 + 1 - lo).max(0) as usize;
            let probability: f64 = p.iter().skip(centre).sum();
            return Ok(Horizon {
                n: n + 1,
                method: HorizonMode::Exact,
                probability,
                lower_bound: lower,
                margin,
                bin_width: Some(w),
                bin_error: Some(err),
                dropped_mass: Some(dropped),
                paths: None,
            });
        }
    }
    Err(LabError::DivergenceTooSlow { budget: max_n, best })
}

fn mc_horizon(schedule: &SwapSchedule, t: f64, sigma: f64, max_n: usize, opts: &HorizonOptions) -> Result<Horizon> {
    let m = opts.paths.max(1);
    let margin = opts.margin.unwrap_or_else(|| (2.0 / 9.0 / m as f64).sqrt());
    let target = 1.0 / 3.0 + margin;
    let mut limit = max_n.min(256).max(1);
    let mut best = 0.0f64;
    loop {
        let counts = (0..m)
            .into_par_iter()
            .fold(
                || vec![0u64; limit + 1],
                |mut c, i| {
                    let x = sample(&schedule.family, sub_seed(opts.seed, i));
                    schedule.walk_path(&x, limit, |n, s| {
                        if sigma * s > sigma * t {
                            c[n] += 1;
                        }
                    });
                    c
                },
            )
            .reduce(
                || vec![0u64; limit + 1],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                    a
                },
            );
        for (n, &c) in counts.iter().enumerate().skip(1) {
            let p = Proportion::lcb99(c, m);
            best = best.max(p.estimate);
            if p.lower >= target {
                return Ok(Horizon {
                    n,
                    method: HorizonMode::MonteCarlo,
                    probability: p.estimate,
                    lower_bound: p.lower,
                    margin,
                    bin_width: None,
                    bin_error: None,
                    dropped_mass: None,
                    paths: Some(m),
                });
            }
        }
        if limit >= max_n {
            return Err(LabError::DivergenceTooSlow { budget: max_n, best });
        }
        limit = (limit * 4).min(max_n);
    }
}

#[derive(Clone, Debug)]
pub struct PhiOptions {
    pub budget: usize,
    pub horizon: HorizonOptions,
    /// Samples for the Monte Carlo estimate of μ(Dom φ); 0 skips it.
    pub domain_samples: u64,
    pub seed: u64,
}

impl Default for PhiOptions {
    fn default() -> Self {
        PhiOptions { budget: 20_000, horizon: HorizonOptions::default(), domain_samples: 10_000, seed: 0 }
    }
}

/// The partial transformation φ: on `Dom = {σS_N > σt}` it swaps the pairs
/// `k ≤ T(x)`, `T(x) = min{n : σS_n(x) > σt}`. A frame `c` gives the conjugate
/// `c∘φ∘c⁻¹`.
#[derive(Clone, Debug)]
pub struct PhiMap {
    family: MarginalFamily,
    pairs: Arc<Vec<SwapPair>>,
    coords: Arc<Vec<Coords>>,
    frame: GroupElement,
    window: Vec<GroupElement>,
    t: f64,
    eps: f64,
    sign: Sign,
    horizon: Horizon,
    domain: Option<Proportion>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PhiSummary {
    pub t: f64,
    pub eps: f64,
    pub sign: Sign,
    pub horizon: Horizon,
    pub pairs: Vec<(String, String)>,
    pub excluded: Vec<usize>,
    pub window: Vec<String>,
    pub domain_estimate: Option<Proportion>,
}

fn check_sign_preconditions(family: &MarginalFamily, t: f64, sign: Sign) -> Result<()> {
    let lam = family.lambda0();
    match sign {
        Sign::Plus if t >= 0.0 && lam >= 0.5 => Ok(()),
        Sign::Minus if t <= 0.0 && lam < 0.5 => Ok(()),
        _ => Err(LabError::Precondition(format!(
            "sign {sign:?} needs (t >= 0, lambda(0) >= 1/2) for + or (t <= 0, lambda(0) < 1/2) for -; got t = {t}, lambda(0) = {lam}"
        ))),
    }
}

pub fn build_phi(family: &MarginalFamily, window: &[GroupElement], t: f64, eps: f64, sign: Sign, opts: &PhiOptions) -> Result<PhiMap> {
    check_sign_preconditions(family, t, sign)?;
    let schedule = build_schedule(family, window, eps, opts.budget)?;
    let horizon = find_horizon(&schedule, t, sign, &opts.horizon)?;
    let mut phi = PhiMap::from_schedule(&schedule, t, sign, horizon)?;
    if opts.domain_samples > 0 {
        phi.domain = Some(phi.estimate_domain(opts.domain_samples, opts.seed));
    }
    Ok(phi)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RnAudit {
    pub samples: u64,
    pub domain_hits: u64,
    pub violations: u64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct InjectivityReport {
    pub samples: u64,
    pub domain_hits: u64,
    pub collisions: u64,
    pub sign_flip_failures: u64,
}

impl PhiMap {
    /// φ with a given horizon and no guarantee on the domain measure.
    pub fn from_schedule(schedule: &SwapSchedule, t: f64, sign: Sign, horizon: Horizon) -> Result<Self> {
        sign_factor(sign)?;
        let n = horizon.n;
        if n == 0 || n > schedule.active_count() {
            return Err(LabError::Precondition(format!("horizon {n} outside 1..={}", schedule.active_count())));
        }
        let pairs: Vec<SwapPair> = schedule.pairs[..n].to_vec();
        let coords = pairs.iter().map(|p| p.coords.clone()).collect();
        Ok(PhiMap {
            family: schedule.family.clone(),
            pairs: Arc::new(pairs),
            coords: Arc::new(coords),
            frame: schedule.family.model().identity(),
            window: schedule.window.clone(),
            t,
            eps: schedule.eps,
            sign,
            horizon,
            domain: None,
        })
    }

    /// φ with horizon `n` chosen by the caller.
    pub fn with_horizon(schedule: &SwapSchedule, t: f64, sign: Sign, n: usize) -> Result<Self> {
        let horizon = Horizon {
            n,
            method: HorizonMode::Exact,
            probability: f64::NAN,
            lower_bound: f64::NAN,
            margin: 0.0,
            bin_width: None,
            bin_error: None,
            dropped_mass: None,
            paths: None,
        };
        Self::from_schedule(schedule, t, sign, horizon)
    }

    pub fn family(&self) -> &MarginalFamily {
        &self.family
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    pub fn horizon(&self) -> &Horizon {
        &self.horizon
    }

    pub fn n(&self) -> usize {
        self.pairs.len()
    }

    pub fn frame(&self) -> &GroupElement {
        &self.frame
    }

    pub fn pairs(&self) -> &[SwapPair] {
        &self.pairs
    }

    pub fn domain_estimate(&self) -> Option<Proportion> {
        self.domain
    }

    /// The forbidden window K, transported by the frame.
    pub fn window(&self) -> Vec<GroupElement> {
        self.window.iter().map(|g| mul(&self.frame, g).expect("same model")).collect()
    }

    fn sigma(&self) -> f64 {
        if self.sign == Sign::Minus {
            -1.0
        } else {
            1.0
        }
    }

    fn fast(&self, x: &Configuration) -> bool {
        x.is_plain() && x.family().same_as(&self.family)
    }

    /// `S_1(x), …, S_N(x)` in this map's frame.
    pub fn partial_sums(&self, x: &Configuration) -> Vec<f64> {
        let fast = self.fast(x);
        let mut s = 0.0;
        self.pairs
            .iter()
            .zip(self.coords.iter())
            .map(|(p, c)| {
                let (xh, xg) = c.read(x, fast);
                s += p.increment(xh, xg);
                s
            })
            .collect()
    }

    fn stop_from(&self, sums: &[f64]) -> Option<usize> {
        let sg = self.sigma();
        if sg * sums[sums.len() - 1] <= sg * self.t {
            return None;
        }
        sums.iter().position(|&s| sg * s > sg * self.t).map(|i| i + 1)
    }

    /// `T(x)` if `x ∈ Dom(φ)`.
    pub fn stopping_time(&self, x: &Configuration) -> Option<usize> {
        self.stop_from(&self.partial_sums(x))
    }

    pub fn contains(&self, x: &Configuration) -> bool {
        self.stopping_time(x).is_some()
    }

    /// Swaps pairs `1..=T(x)`.
    pub fn apply(&self, x: &Configuration) -> Result<Configuration> {
        let t = self.stopping_time(x).ok_or(LabError::OutsideDomain)?;
        Ok(self.swap_prefix(x, t))
    }

    fn swap_prefix(&self, x: &Configuration, t: usize) -> Configuration {
        let fast = self.fast(x);
        let mut changes = Vec::new();
        for c in &self.coords[..t] {
            let (xh, xg) = c.read(x, fast);
            if xh != xg {
                changes.push((c.site.clone(), xg));
                changes.push((c.pin.clone(), xh));
            }
        }
        x.with_values(changes)
    }

    /// `log(dφ⁻¹μ/dμ)(x) = S_{T(x)}(x)`.
    pub fn rn(&self, x: &Configuration) -> Result<f64> {
        let sums = self.partial_sums(x);
        let t = self.stop_from(&sums).ok_or(LabError::OutsideDomain)?;
        Ok(sums[t - 1])
    }

    /// All coordinates φ may change.
    pub fn support(&self) -> Vec<GroupElement> {
        let mut s: Vec<GroupElement> = self.coords.iter().flat_map(|c| [c.pin.clone(), c.site.clone()]).collect();
        s.sort();
        s
    }

    pub fn support_size(&self) -> usize {
        2 * self.coords.len()
    }

    /// The unique `x ∈ Dom(φ)` with `φ(x) = w`, if any. Since swapping flips the
    /// sign of every increment, `T(x)` is the first `n` with `−σS_n(w) > σt`.
    pub fn preimage(&self, w: &Configuration) -> Option<Configuration> {
        let sums = self.partial_sums(w);
        let sg = self.sigma();
        let t = sums.iter().position(|&s| -sg * s > sg * self.t)? + 1;
        let x = self.swap_prefix(w, t);
        (self.stopping_time(&x) == Some(t)).then_some(x)
    }

    /// `c∘φ∘c⁻¹`.
    pub fn conjugate(&self, c: &GroupElement) -> Result<PhiMap> {
        let frame = self.family.model().mul(c, &self.frame)?;
        let coords = self
            .coords
            .iter()
            .map(|k| Ok(Coords::new(&self.family, mul(c, &k.pin)?, mul(c, &k.site)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(PhiMap { frame, coords: Arc::new(coords), ..self.clone() })
    }

    /// Monte Carlo estimate of μ(Dom φ) with a one-sided 99% Wilson bound.
    pub fn estimate_domain(&self, samples: u64, seed: u64) -> Proportion {
        let hits: u64 = (0..samples)
            .into_par_iter()
            .map(|i| self.contains(&sample(&self.family, sub_seed(seed, i))) as u64)
            .sum();
        Proportion::lcb99(hits, samples)
    }

    /// Counts domain samples violating `t < φ_rn < t + ε` (mirrored for sign −).
    pub fn rn_audit(&self, samples: u64, seed: u64) -> RnAudit {
        let (t, eps, minus) = (self.t, self.eps, self.sign == Sign::Minus);
        let per: Vec<Option<f64>> =
            (0..samples).into_par_iter().map(|i| self.rn(&sample(&self.family, sub_seed(seed, i))).ok()).collect();
        let mut audit = RnAudit { samples, domain_hits: 0, violations: 0, min: f64::INFINITY, max: f64::NEG_INFINITY };
        for v in per.into_iter().flatten() {
            audit.domain_hits += 1;
            audit.min = audit.min.min(v);
            audit.max = audit.max.max(v);
            let ok = if minus { t - eps < v && v < t } else { t < v && v < t + eps };
            if !ok {
                audit.violations += 1;
            }
        }
        audit
    }

    pub fn summary(&self, excluded: &[usize]) -> PhiSummary {
        PhiSummary {
            t: self.t,
            eps: self.eps,
            sign: self.sign,
            horizon: self.horizon.clone(),
            pairs: self.coords.iter().map(|c| (c.pin.normal_form(), c.site.normal_form())).collect(),
            excluded: excluded.to_vec(),
            window: self.window().iter().map(|g| g.normal_form()).collect(),
            domain_estimate: self.domain,
        }
    }
}

fn pack(bits: impl Iterator<Item = u8>) -> Vec<u64> {
    let mut out = Vec::new();
    for (i, b) in bits.enumerate() {
        if i % 64 == 0 {
            out.push(0);
        }
        *out.last_mut().unwrap() |= (b as u64) << (i % 64);
    }
    out
}

/// Samples domain points and looks for two distinct restrictions to supp(φ)
/// with the same image; also checks `S_T(φx) = −S_T(x)`.
pub fn injectivity_audit(phi: &PhiMap, samples: u64, seed: u64) -> InjectivityReport {
    let per: Vec<Option<(Vec<u64>, Vec<u64>, bool)>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let x = sample(&phi.family, sub_seed(seed, i));
            let sums = phi.partial_sums(&x);
            let t = phi.stop_from(&sums)?;
            let y = phi.swap_prefix(&x, t);
            let flipped = phi.partial_sums(&y);
            let flip_ok = (0..t).all(|n| (flipped[n] + sums[n]).abs() <= 1e-12 * (1.0 + sums[n].abs()));
            let restrict = |z: &Configuration| pack(phi.coords.iter().flat_map(|c| [z.value(&c.site), z.value(&c.pin)]));
            Some((restrict(&y), restrict(&x), flip_ok))
        })
        .collect();
    let mut seen: HashMap<Vec<u64>, Vec<u64>> = HashMap::new();
    let mut report = InjectivityReport { samples, domain_hits: 0, collisions: 0, sign_flip_failures: 0 };
    for (img, pre, flip_ok) in per.into_iter().flatten() {
        report.domain_hits += 1;
        if !flip_ok {
            report.sign_flip_failures += 1;
        }
        match seen.get(&img) {
            Some(prev) if *prev != pre => report.collisions += 1,
            Some(_) => {}
            None => {
                seen.insert(img, pre);
            }
        }
    }
    report
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CltReport {
    pub n: usize,
    pub samples: u64,
    pub a_n: f64,
    pub b_n: f64,
    pub ks: f64,
    pub sample_mean: f64,
    pub sample_var: f64,
    /// `|mean − A_n|` in units of its standard error.
    pub mean_z: f64,
    /// `|var − B_n²|` in units of its standard error.
    pub var_z: f64,
}

/// KS distance between the law of `(S_n − A_n)/B_n` over `samples` draws and N(0,1).
pub fn clt_check(schedule: &SwapSchedule, n: usize, samples: u64, seed: u64) -> Result<CltReport> {
    let stats = schedule.walk_stats(n)?;
    if !(stats.b_n > 0.0) {
        return Err(LabError::DegenerateVariance);
    }
    let values: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| schedule.walk(&sample(&schedule.family, sub_seed(seed, i)), n).unwrap())
        .collect();
    let (mean, var, m4) = moments(&values);
    let mut z: Vec<f64> = values.iter().map(|v| (v - stats.a_n) / stats.b_n).collect();
    let ks = ks_statistic(&mut z, normal_cdf);
    let m = samples as f64;
    let b2 = stats.b_n * stats.b_n;
    let mean_z = (mean - stats.a_n).abs() / (b2 / m).sqrt();
    let var_se = ((m4 - var * var).max(0.0) / m).sqrt();
    let var_z = (var - b2).abs() / var_se;
    Ok(CltReport { n, samples, a_n: stats.a_n, b_n: stats.b_n, ks, sample_mean: mean, sample_var: var, mean_z, var_z })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::GroupModel;
    use std::collections::BTreeMap;

    fn z(n: i64) -> GroupElement {
        GroupElement::Z(n)
    }

    /// Sites 0..n carry μ(0) = 0.6; everything else is λ = uniform.
    fn flat(n: i64) -> MarginalFamily {
        let m: BTreeMap<_, _> = (0..n).map(|i| (z(i), 0.6)).collect();
        MarginalFamily::finitely_perturbed(GroupModel::z(), 0.5, 0.1, m).unwrap()
    }

    fn flat_schedule(n: i64) -> SwapSchedule {
        let pairs: Vec<_> = (0..n).map(|i| (z(1000 + i), z(i))).collect();
        SwapSchedule::from_pairs(&flat(n), &[], 1.0, &pairs).unwrap()
    }

    #[test]
    fn increment_example() {
        let s = flat_schedule(1);
        let x = sample(s.family(), 0).with_values([(z(0), 0), (z(1000), 1)]);
        assert!((s.increment(0, &x).unwrap() - 0.405_465_108_108_164_4).abs() < 1e-12);
        let same = x.with_values([(z(1000), 0)]);
        assert_eq!(s.increment(0, &same).unwrap(), 0.0);
        assert!(matches!(s.increment(1, &x), Err(LabError::InactiveIndex(1))));
    }

    #[test]
    fn moments_example() {
        let (m, v) = flat_schedule(1).moments(0).unwrap();
        assert!((m - 0.040_546_510_810_816_4).abs() < 1e-12);
        assert!((v + m * m - 0.082_201).abs() < 1e-6);
        assert!((v - 0.080_557).abs() < 1e-6);
    }

    #[test]
    fn exact_horizon_example() {
        let s = flat_schedule(3);
        let opts = HorizonOptions { mode: HorizonMode::Exact, ..Default::default() };
        let h = find_horizon(&s, 0.0, Sign::Plus, &opts).unwrap();
        assert_eq!(h.n, 2);
        assert!((h.probability - 0.39).abs() < 1e-12);
    }

    #[test]
    fn tiny_budget_is_too_slow() {
        let s = flat_schedule(2);
        let opts = HorizonOptions { mode: HorizonMode::Exact, ..Default::default() };
        assert!(matches!(find_horizon(&s, 5.0, Sign::Plus, &opts), Err(LabError::DivergenceTooSlow { .. })));
    }

    #[test]
    fn schedule_avoids_window() {
        let f = MarginalFamily::z_demo(0.1, 0.5).unwrap();
        let s = build_schedule(&f, &[z(0)], 1.0, 200).unwrap();
        assert_eq!(s.active_count(), 200);
        assert!(s.pairs().iter().all(|p| p.pin != z(0) && p.site != z(0)));
        assert!(s.excluded().contains(&0));
    }
}
