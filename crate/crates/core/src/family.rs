//! Marginal families `g ↦ μ_g(0)` on {0,1}, with pinning, the η weights,
//! the G± split and the Kakutani-type partial-sum diagnostics.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::group::{GroupElement, GroupKind, GroupModel};

/// Which enumeration indices carry the pinned sites `g_m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PinRule {
    None,
    /// Indices `j⁴` for `j ≥ 2`.
    FourthPowers,
    /// Indices `2^j` for `j ≥ 3`.
    PowersOfTwo,
}

impl PinRule {
    pub fn pins_index(self, i: u64) -> bool {
        match self {
            PinRule::None => false,
            PinRule::FourthPowers => i >= 16 && is_fourth_power(i),
            PinRule::PowersOfTwo => i >= 8 && i.is_power_of_two(),
        }
    }

    /// The `m`-th pinned index (0-based), if it fits in 64 bits.
    pub fn nth_index(self, m: u64) -> Option<u64> {
        match self {
            PinRule::None => None,
            PinRule::FourthPowers => (m + 2).checked_pow(4),
            PinRule::PowersOfTwo => 1u64.checked_shl((m + 3) as u32).filter(|_| m + 3 < 64),
        }
    }
}

fn is_fourth_power(i: u64) -> bool {
    let r = (i as f64).powf(0.25).round() as u64;
    (r.saturating_sub(1)..=r + 1).any(|c| c.checked_pow(4) == Some(i))
}

#[derive(Clone, Debug)]
pub enum Profile {
    /// μ ≡ λ.
    Constant,
    /// Deviation `(ρ^dim · ln(ρ+2))^{-1/2}` at word length ρ.
    PowerLog { dim: u32 },
    /// Deviation `base^{-ρ}` at word length ρ.
    Geometric { base: f64 },
    /// Lamplighter heuristic: deviation `(V ln(V+2))^{-1/2}` with `V` the size of
    /// the box Følner set at the element's level `max(|pos|, max |lamp|)`.
    Folner,
    /// Explicit values of μ_g(0) on a finite support; λ(0) elsewhere.
    Finite(Arc<BTreeMap<GroupElement, f64>>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
    Neutral,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Plus,
    All,
}

/// `η_g(a) = log(μ_g(a)/λ(a))` for both symbols.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EtaWeights {
    pub eta0: f64,
    pub eta1: f64,
}

impl EtaWeights {
    pub fn get(&self, a: u8) -> f64 {
        if a == 0 {
            self.eta0
        } else {
            self.eta1
        }
    }

    /// `d = η(0) − η(1)`.
    pub fn spread(&self) -> f64 {
        self.eta0 - self.eta1
    }

    pub fn sup_norm(&self) -> f64 {
        self.eta0.abs().max(self.eta1.abs())
    }
}

/// Kakutani sum beyond a truncation radius together with the lower bound on
/// `min(μ(0), μ(1))` valid on the tail coordinates.
///
/// For a tail term `Z_h = log μ_h(x_h) − log μ_{gh}(x_h)` with both marginals in
/// `[δ, 1−δ]`, `E Z_h = KL(μ_h‖μ_{gh}) ≤ (p−q)²/(δ(1−δ)) ≤ 2(p−q)²/δ²` and
/// `E Z_h² ≤ (p−q)²/δ²`, since `|log(a/b)| ≤ |a−b|/min(a,b)`. Summing over
/// independent coordinates gives `|E tail| ≤ C·K` and `sd(tail) ≤ √(C·K)` with
/// `C = 2/δ²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KakutaniTail {
    pub sum: f64,
    pub delta: f64,
}

impl KakutaniTail {
    pub fn zero(delta: f64) -> Self {
        KakutaniTail { sum: 0.0, delta }
    }

    pub fn unbounded(delta: f64) -> Self {
        KakutaniTail { sum: f64::INFINITY, delta }
    }

    pub fn constant(&self) -> f64 {
        2.0 / (self.delta * self.delta)
    }

    /// `(mean bound, std bound)` with the given constant, or `2/δ²` by default.
    pub fn bounds(&self, constant: Option<f64>) -> (f64, f64) {
        if self.sum == 0.0 {
            return (0.0, 0.0);
        }
        let c = constant.unwrap_or_else(|| self.constant());
        (c * self.sum, (c * self.sum).sqrt())
    }
}

/// An assignment of marginals `μ_g` on {0,1} indexed by a group.
#[derive(Clone, Debug)]
pub struct MarginalFamily {
    model: GroupModel,
    profile: Profile,
    lambda0: f64,
    delta: f64,
    cap: f64,
    pins: PinRule,
    relabeled: bool,
    pinned_bound: f64,
}

impl MarginalFamily {
    fn build(model: GroupModel, profile: Profile, lambda0: f64, delta: f64, cap: f64, pins: PinRule) -> Result<Self> {
        if !(delta > 0.0 && delta <= 0.5) {
            return Err(LabError::InvalidFamily(format!("delta must lie in (0, 1/2], got {delta}")));
        }
        if !(lambda0 >= delta && lambda0 <= 1.0 - delta) {
            return Err(LabError::InvalidFamily(format!(
                "lambda0 = {lambda0} violates the bound delta <= lambda0 <= 1 - delta"
            )));
        }
        if !(cap >= 0.0) || lambda0 + cap > 1.0 - delta {
            return Err(LabError::InvalidFamily(format!(
                "deviation cap {cap} pushes mu above 1 - delta for lambda0 = {lambda0}"
            )));
        }
        match &profile {
            Profile::Finite(map) => {
                for (g, &v) in map.iter() {
                    if g.kind() != model.kind() {
                        return Err(LabError::InvalidFamily(format!("support element {g} is not in {}", model.kind().name())));
                    }
                    if !(v >= delta && v <= 1.0 - delta) {
                        return Err(LabError::InvalidFamily(format!("mu_{g}(0) = {v} outside [delta, 1 - delta]")));
                    }
                }
            }
            Profile::Geometric { base } if !(*base > 1.0) => {
                return Err(LabError::InvalidFamily(format!("geometric base must exceed 1, got {base}")));
            }
            Profile::PowerLog { .. } if !matches!(model.kind(), GroupKind::Z | GroupKind::Z2) => {
                return Err(LabError::InvalidFamily("power-log profiles are defined on Z and Z2".into()));
            }
            Profile::Folner if model.kind() != GroupKind::Lamplighter => {
                return Err(LabError::InvalidFamily("Folner profiles are defined on the lamplighter group".into()));
            }
            _ => {}
        }
        let mut fam = MarginalFamily { model, profile, lambda0, delta, cap, pins, relabeled: false, pinned_bound: 0.0 };
        fam.pinned_bound = fam.compute_pinned_bound();
        Ok(fam)
    }

    /// μ ≡ λ.
    pub fn constant(model: GroupModel, lambda0: f64, delta: f64) -> Result<Self> {
        Self::build(model, Profile::Constant, lambda0, delta, 0.0, PinRule::None)
    }

    /// The Z demo family: `μ_n(0) = λ(0) + min(δ, (|n| ln(|n|+2))^{-1/2})`, pinned at
    /// enumeration indices `j⁴`.
    pub fn z_demo(delta: f64, lambda0: f64) -> Result<Self> {
        Self::build(GroupModel::z(), Profile::PowerLog { dim: 1 }, lambda0, delta, delta, PinRule::FourthPowers)
    }

    /// Z² analogue with L¹ radius ρ and deviation `min(δ, (ρ² ln(ρ+2))^{-1/2})`.
    pub fn z2_demo(delta: f64, lambda0: f64) -> Result<Self> {
        Self::build(GroupModel::z2(), Profile::PowerLog { dim: 2 }, lambda0, delta, delta, PinRule::FourthPowers)
    }

    /// Experimental lamplighter profile; no analytic guarantees.
    pub fn lamplighter_folner(delta: f64, lambda0: f64) -> Result<Self> {
        Self::build(GroupModel::lamplighter(), Profile::Folner, lambda0, delta, delta, PinRule::FourthPowers)
    }

    /// Radial family `μ_g(0) = λ(0) + min(δ, base^{-|g|})` on F₂.
    pub fn f2_radial(base: f64, delta: f64, lambda0: f64) -> Result<Self> {
        Self::build(GroupModel::f2(), Profile::Geometric { base }, lambda0, delta, delta, PinRule::None)
    }

    /// Radial geometric profile on an arbitrary model.
    pub fn geometric(model: GroupModel, base: f64, delta: f64, lambda0: f64) -> Result<Self> {
        Self::build(model, Profile::Geometric { base }, lambda0, delta, delta, PinRule::None)
    }

    /// Equal to λ outside the finite support `values`.
    pub fn finitely_perturbed(model: GroupModel, lambda0: f64, delta: f64, values: BTreeMap<GroupElement, f64>) -> Result<Self> {
        Self::build(model, Profile::Finite(Arc::new(values)), lambda0, delta, 0.0, PinRule::None)
    }

    /// The same family on a model of the same kind with a different ball cap.
    pub fn with_model(&self, model: GroupModel) -> Result<Self> {
        if model.kind() != self.model.kind() {
            return Err(LabError::ModelMismatch { expected: self.model.kind().name(), found: model.kind().name() });
        }
        let mut f = self.clone();
        f.model = model;
        Ok(f)
    }

    pub fn with_pin_rule(&self, pins: PinRule) -> Result<Self> {
        let mut f = self.clone();
        f.pins = pins;
        f.pinned_bound = f.compute_pinned_bound();
        Ok(f)
    }

    /// The same family with symbols 0 and 1 interchanged.
    pub fn relabeled(&self) -> Self {
        let mut f = self.clone();
        f.relabeled = !f.relabeled;
        f
    }

    pub fn model(&self) -> &GroupModel {
        &self.model
    }

    /// Parameter equality: same model, profile, λ, δ, cap, pins and orientation.
    pub fn same_as(&self, other: &MarginalFamily) -> bool {
        let profiles = match (&self.profile, &other.profile) {
            (Profile::Constant, Profile::Constant) | (Profile::Folner, Profile::Folner) => true,
            (Profile::PowerLog { dim: a }, Profile::PowerLog { dim: b }) => a == b,
            (Profile::Geometric { base: a }, Profile::Geometric { base: b }) => a == b,
            (Profile::Finite(a), Profile::Finite(b)) => Arc::ptr_eq(a, b) || a == b,
            _ => false,
        };
        profiles
            && self.model == other.model
            && self.lambda0 == other.lambda0
            && self.delta == other.delta
            && self.cap == other.cap
            && self.pins == other.pins
            && self.relabeled == other.relabeled
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn pin_rule(&self) -> PinRule {
        self.pins
    }

    pub fn is_relabeled(&self) -> bool {
        self.relabeled
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// λ(0).
    pub fn lambda0(&self) -> f64 {
        if self.relabeled {
            1.0 - self.lambda0
        } else {
            self.lambda0
        }
    }

    pub fn lambda(&self, a: u8) -> f64 {
        if a == 0 {
            self.lambda0()
        } else {
            1.0 - self.lambda0()
        }
    }

    /// Declared bound on Σ over pinned g of the unpinned squared deviation.
    pub fn pinned_deviation_bound(&self) -> f64 {
        self.pinned_bound
    }

    pub fn is_pinned(&self, g: &GroupElement) -> bool {
        if self.pins == PinRule::None {
            return false;
        }
        match self.model.index_of(g) {
            Ok(i) => self.pins.pins_index(i),
            Err(_) => false,
        }
    }

    /// Deviation from λ(0) of the unpinned profile as a function of word length.
    pub fn radial_deviation(&self, rho: u64) -> Option<f64> {
        match &self.profile {
            Profile::Constant => Some(0.0),
            Profile::PowerLog { dim } => Some(power_log(rho, *dim).min(self.cap)),
            Profile::Geometric { base } => Some(base.powf(-(rho as f64)).min(self.cap)),
            _ => None,
        }
    }

    /// μ_g(0) before pinning, in the original orientation.
    fn base_mu0(&self, g: &GroupElement) -> f64 {
        let dev = match &self.profile {
            Profile::Constant => 0.0,
            Profile::PowerLog { dim } => power_log(g.word_length(), *dim).min(self.cap),
            Profile::Geometric { base } => base.powf(-(g.word_length() as f64)).min(self.cap),
            Profile::Folner => folner_deviation(g).min(self.cap),
            Profile::Finite(map) => return map.get(g).copied().unwrap_or(self.lambda0),
        };
        self.lambda0 + dev
    }

    /// μ_g(0) of the unpinned profile.
    pub fn unpinned_mu0(&self, g: &GroupElement) -> f64 {
        let v = self.base_mu0(g);
        if self.relabeled {
            1.0 - v
        } else {
            v
        }
    }

    /// μ_g(0).
    pub fn mu0(&self, g: &GroupElement) -> f64 {
        if self.is_pinned(g) {
            return self.lambda0();
        }
        self.unpinned_mu0(g)
    }

    pub fn mu(&self, g: &GroupElement, a: u8) -> f64 {
        let p = self.mu0(g);
        if a == 0 {
            p
        } else {
            1.0 - p
        }
    }

    pub fn eta(&self, g: &GroupElement) -> EtaWeights {
        eta_from(self.mu0(g), self.lambda0())
    }

    pub fn classify(&self, g: &GroupElement) -> Sign {
        classify_value(self.mu0(g), self.lambda0())
    }

    fn compute_pinned_bound(&self) -> f64 {
        if self.pins == PinRule::None {
            return 0.0;
        }
        let lam = self.lambda0();
        let dev2 = |i: u64| -> Option<f64> {
            let g = self.model.element_at(i).ok()?;
            let d = self.unpinned_mu0(&g) - lam;
            Some(d * d)
        };
        let mut total = 0.0;
        let mut m = 0u64;
        let exact_terms = 4000u64;
        while m < exact_terms {
            let Some(i) = self.pins.nth_index(m) else { return total };
            match dev2(i) {
                Some(v) => total += v,
                None => return total,
            }
            m += 1;
        }
        // Remaining pins have index ≥ J⁴ with J = m + 2; the unpinned deviation
        // there is at most 32/j⁴ on the supported models.
        let j = (m + 2) as f64;
        total + 32.0 * 1.01 / (3.0 * (j - 1.0).powi(3))
    }

    /// Σ_{h∈ball(R)} (μ_{gh}(0) − μ_h(0))².
    pub fn kakutani_partial(&self, g: &GroupElement, radius: u32) -> Result<f64> {
        let mut total = 0.0;
        let mut err = None;
        self.model.for_each_in_ball(radius, |h| match crate::group::mul(g, h) {
            Ok(gh) => {
                let d = self.mu0(&gh) - self.mu0(h);
                total += d * d;
            }
            Err(e) => err = Some(e),
        })?;
        match err {
            Some(e) => Err(e),
            None => Ok(total),
        }
    }

    /// Σ_{g∈ball(R)} (μ_g(0) − λ(0))², optionally restricted to G⁺.
    pub fn divergence_partial(&self, radius: u32, side: Side) -> Result<f64> {
        if side == Side::All {
            if let Some(v) = self.radial_sum(radius)? {
                return Ok(v);
            }
        }
        let lam = self.lambda0();
        let mut total = 0.0;
        self.model.for_each_in_ball(radius, |g| {
            let d = self.mu0(g) - lam;
            if side == Side::All || d > 0.0 {
                total += d * d;
            }
        })?;
        Ok(total)
    }

    /// The ℓ² tail diagnostic `Σ_{g∈ball(R)} (μ_g(0) − λ(0))²`.
    pub fn l2_tail_profile(&self, radius: u32) -> Result<f64> {
        self.divergence_partial(radius, Side::All)
    }

    /// Sphere-size evaluation of the squared-deviation sum for radial profiles;
    /// pinned sites are subtracted individually.
    fn radial_sum(&self, radius: u32) -> Result<Option<f64>> {
        if self.radial_deviation(0).is_none() || self.model.kind() == GroupKind::Lamplighter {
            return Ok(None);
        }
        let mut total = 0.0;
        for r in 0..=radius {
            let dev = self.radial_deviation(r as u64).unwrap();
            total += self.model.sphere_size_f64(r)? * dev * dev;
        }
        let ball = self.model.ball_size(radius)?;
        let mut m = 0u64;
        while let Some(i) = self.pins.nth_index(m) {
            if i as u128 >= ball {
                break;
            }
            let g = self.model.element_at(i)?;
            let dev = self.radial_deviation(g.word_length()).unwrap();
            total -= dev * dev;
            m += 1;
        }
        Ok(Some(total.max(0.0)))
    }

    /// Kakutani rows `K(g) = Σ_{h∈ball(R_inner)} (μ_{gh}(0) − μ_h(0))²` for every
    /// g in ball(R_outer), in canonical order.
    pub fn kakutani_rows(&self, outer: u32, inner: u32) -> Result<Vec<f64>> {
        if self.model.kind() == GroupKind::Z {
            return Ok(self.kakutani_rows_z(outer as i64, inner as i64));
        }
        let gs = self.model.ball(outer)?;
        let hs = self.model.ball(inner)?;
        let mu_h: Vec<f64> = hs.iter().map(|h| self.mu0(h)).collect();
        let table: Option<Vec<f64>> = self
            .model
            .ball(outer + inner)
            .ok()
            .map(|b| b.par_iter().map(|g| self.mu0(g)).collect());
        gs.par_iter()
            .map(|g| {
                let mut k = 0.0;
                for (h, &mh) in hs.iter().zip(&mu_h) {
                    let gh = crate::group::mul(g, h)?;
                    let m = match (&table, self.model.index_of(&gh)) {
                        (Some(t), Ok(i)) if (i as usize) < t.len() => t[i as usize],
                        _ => self.mu0(&gh),
                    };
                    k += (m - mh) * (m - mh);
                }
                Ok(k)
            })
            .collect()
    }

    /// Z specialization of [`kakutani_rows`] by FFT correlation:
    /// `K(g) = Σ u²_{g+h} + Σ u²_h − 2 Σ u_h u_{g+h}` with `u = μ(0) − λ(0)`.
    fn kakutani_rows_z(&self, outer: i64, inner: i64) -> Vec<f64> {
        let lam = self.lambda0();
        let u = |n: i64| self.mu0(&GroupElement::Z(n)) - lam;
        let lo = -inner - outer;
        let len_b = (2 * inner + 2 * outer + 1) as usize;
        let b: Vec<f64> = (0..len_b as i64).map(|j| u(lo + j)).collect();
        let a: Vec<f64> = b[outer as usize..outer as usize + (2 * inner + 1) as usize].to_vec();
        let mut prefix = vec![0.0; len_b + 1];
        for j in 0..len_b {
            prefix[j + 1] = prefix[j] + b[j] * b[j];
        }
        let sum_a2: f64 = a.iter().map(|v| v * v).sum();
        let corr = cross_correlate(&a, &b, 2 * outer as usize + 1);
        let mut rows = Vec::with_capacity(2 * outer as usize + 1);
        for g in crate::group::GroupModel::z().ball(outer as u32).unwrap() {
            let GroupElement::Z(gv) = g else { unreachable!() };
            let k = (gv + outer) as usize;
            let shifted = prefix[k + a.len()] - prefix[k];
            rows.push((shifted + sum_a2 - 2.0 * corr[k]).max(0.0));
        }
        rows
    }

    /// Σ_{g∈ball(R)} exp(−c · K(g, R_inner)).
    pub fn conservativity_partial(&self, c: f64, radius: u32, inner: u32) -> Result<f64> {
        let rows = self.kakutani_rows(radius, inner)?;
        Ok(rows.iter().map(|k| (-c * k).exp()).sum())
    }

    /// Conservativity partial sums for several constants and radii sharing one
    /// set of Kakutani rows; entry `[i][j]` is for `cs[i]` and `radii[j]`.
    pub fn conservativity_profile(&self, cs: &[f64], radii: &[u32], inner: u32) -> Result<Vec<Vec<f64>>> {
        let outer = radii.iter().copied().max().unwrap_or(0);
        let rows = self.kakutani_rows(outer, inner)?;
        let mut cuts = Vec::with_capacity(radii.len());
        for &r in radii {
            cuts.push(self.model.ball_size(r)? as usize);
        }
        Ok(cs
            .iter()
            .map(|&c| {
                let mut acc = 0.0;
                let mut cum = Vec::with_capacity(rows.len());
                for k in &rows {
                    acc += (-c * k).exp();
                    cum.push(acc);
                }
                cuts.iter().map(|&n| cum[n - 1]).collect()
            })
            .collect())
    }

    /// Rigorous bound on the Kakutani sum over h outside ball(R) for the shift g.
    pub fn kakutani_tail(&self, g: &GroupElement, radius: u32) -> KakutaniTail {
        let lam = self.lambda0();
        let base_delta = lam.min(1.0 - lam);
        let m = g.word_length();
        if g.is_identity() {
            return KakutaniTail::zero(base_delta);
        }
        match &self.profile {
            Profile::Constant => KakutaniTail::zero(base_delta),
            Profile::Finite(map) => {
                let ginv = crate::group::inv(g);
                let mut cands: Vec<GroupElement> = Vec::new();
                let mut delta = base_delta;
                for f in map.keys() {
                    cands.push(f.clone());
                    if let Ok(h) = crate::group::mul(&ginv, f) {
                        cands.push(h);
                    }
                }
                cands.sort();
                cands.dedup();
                let mut sum = 0.0;
                for h in cands.iter().filter(|h| h.word_length() > radius as u64) {
                    let Ok(gh) = crate::group::mul(g, h) else { return KakutaniTail::unbounded(base_delta) };
                    let (p, q) = (self.mu0(&gh), self.mu0(h));
                    delta = delta.min(p.min(1.0 - p)).min(q.min(1.0 - q));
                    sum += (p - q) * (p - q);
                }
                KakutaniTail { sum, delta }
            }
            Profile::PowerLog { dim } => self.power_log_tail(*dim, m, radius as u64, base_delta),
            Profile::Geometric { .. } => self.geometric_tail(m, radius as u64, base_delta),
            Profile::Folner => KakutaniTail::unbounded(self.delta),
        }
    }

    fn power_log_tail(&self, dim: u32, m: u64, radius: u64, base_delta: f64) -> KakutaniTail {
        if radius < 3 * m + 2 {
            return KakutaniTail::unbounded(self.delta);
        }
        let s0 = radius + 1 - m;
        let l0 = ((s0 + 2) as f64).ln();
        let sf = s0 as f64;
        let d = dim as f64;
        // |Δ| ≤ m·|raw'(s)| ≤ m(d+1)·raw(s)/(2s), s = ρ − m; spheres are ≤ 2 (Z) or ≤ 8s (Z²).
        let inv_cubes = 1.0 / (sf * sf * sf) + 1.0 / (2.0 * sf * sf);
        let sphere_c = if dim == 1 { 2.0 } else { 8.0 };
        let smooth = sphere_c * (m as f64).powi(2) * (d + 1.0).powi(2) / (4.0 * l0) * inv_cubes;
        let pinned = self.pinned_tail(m, radius, dim);
        let dev = power_log(radius - m, dim).min(self.cap);
        KakutaniTail { sum: smooth + pinned, delta: (base_delta - dev).max(f64::MIN_POSITIVE) }
    }

    /// Pinned contribution: at most `2·raw(|p| − m)²` per pin p with |p| > R − m.
    fn pinned_tail(&self, m: u64, radius: u64, dim: u32) -> f64 {
        if self.pins == PinRule::None {
            return 0.0;
        }
        let threshold = radius - m;
        let Ok(first_outside) = self.model.ball_size(threshold as u32) else { return f64::INFINITY };
        let mut idx = 0u64;
        while let Some(i) = self.pins.nth_index(idx) {
            if i as u128 >= first_outside {
                break;
            }
            idx += 1;
        }
        let mut total = 0.0;
        let extra = 2000u64;
        for k in idx..idx + extra {
            let Some(i) = self.pins.nth_index(k) else { return total };
            let Ok(p) = self.model.element_at(i) else { return f64::INFINITY };
            let s = p.word_length() - m;
            total += 2.0 * power_log(s, dim).min(self.cap).powi(2);
        }
        match self.pins {
            PinRule::FourthPowers => {
                let j = (idx + extra + 2) as f64;
                total + 32.0 * 1.01 / (3.0 * (j - 1.0).powi(3))
            }
            _ => total,
        }
    }

    fn geometric_tail(&self, m: u64, radius: u64, base_delta: f64) -> KakutaniTail {
        if radius < m + 1 || self.model.kind() == GroupKind::Lamplighter {
            return KakutaniTail::unbounded(self.delta);
        }
        let dev = |rho: u64| self.radial_deviation(rho).unwrap();
        let mut sum = 0.0;
        let mut prev = f64::INFINITY;
        let mut rho = radius + 1;
        loop {
            let Ok(sphere) = self.model.sphere_size_f64(rho as u32) else { return KakutaniTail::unbounded(self.delta) };
            let term = sphere * dev(rho - m).powi(2);
            sum += term;
            let ratio = term / prev;
            prev = term;
            if rho > radius + 8 && ratio < 0.99 && term < 1e-18 * sum.max(1e-300) {
                sum += term * ratio / (1.0 - ratio);
                break;
            }
            if rho > radius + 5000 || !term.is_finite() {
                if ratio < 1.0 {
                    sum += term * ratio / (1.0 - ratio);
                    break;
                }
                return KakutaniTail::unbounded(self.delta);
            }
            rho += 1;
        }
        KakutaniTail { sum, delta: (base_delta - dev(radius - m)).max(f64::MIN_POSITIVE) }
    }
}

fn power_log(rho: u64, dim: u32) -> f64 {
    if rho == 0 {
        return f64::INFINITY;
    }
    let r = rho as f64;
    1.0 / (r.powi(dim as i32) * (r + 2.0).ln()).sqrt()
}

fn folner_deviation(g: &GroupElement) -> f64 {
    let GroupElement::Lamp { lamps, pos } = g else { return 0.0 };
    let mut level = pos.unsigned_abs();
    if let (Some(a), Some(b)) = (lamps.first(), lamps.last()) {
        level = level.max(a.unsigned_abs()).max(b.unsigned_abs());
    }
    if level == 0 {
        return f64::INFINITY;
    }
    let l = level as f64;
    let v = (2.0 * l + 1.0) * (2.0 * l + 1.0).exp2();
    1.0 / (v * (v + 2.0).ln()).sqrt()
}

pub fn eta_from(mu0: f64, lambda0: f64) -> EtaWeights {
    EtaWeights {
        eta0: ((mu0 - lambda0) / lambda0).ln_1p(),
        eta1: ((lambda0 - mu0) / (1.0 - lambda0)).ln_1p(),
    }
}

pub fn classify_value(mu0: f64, lambda0: f64) -> Sign {
    if mu0 > lambda0 {
        Sign::Plus
    } else if mu0 < lambda0 {
        Sign::Minus
    } else {
        Sign::Neutral
    }
}

/// `out[k] = Σ_i a[i]·b[i+k]` for `k < lags`; requires `a.len() + lags − 1 ≤ b.len()`.
pub(crate) fn cross_correlate(a: &[f64], b: &[f64], lags: usize) -> Vec<f64> {
    let n = b.len().next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut fa: Vec<Complex64> = a.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fa.resize(n, Complex64::new(0.0, 0.0));
    let mut fb: Vec<Complex64> = b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fb.resize(n, Complex64::new(0.0, 0.0));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x = x.conj() * y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / n as f64;
    fa[..lags].iter().map(|c| c.re * scale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zd() -> MarginalFamily {
        MarginalFamily::z_demo(0.1, 0.5).unwrap()
    }

    #[test]
    fn z_demo_origin_value() {
        assert!((zd().mu0(&GroupElement::Z(0)) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn pins_are_exactly_lambda() {
        let f = zd();
        for j in 2..40u64 {
            let g = f.model().element_at(j.pow(4)).unwrap();
            assert!(f.is_pinned(&g));
            assert_eq!(f.mu0(&g), 0.5);
            assert_eq!(f.classify(&g), Sign::Neutral);
            assert_eq!(f.eta(&g), EtaWeights { eta0: 0.0, eta1: 0.0 });
        }
        assert!(!f.is_pinned(&GroupElement::Z(7)));
    }

    #[test]
    fn eta_example() {
        let e = eta_from(0.6, 0.5);
        assert!((e.eta0 - 0.182_321_556_793_954_6).abs() < 1e-15);
        assert!((e.eta1 - (-0.223_143_551_314_209_7)).abs() < 1e-15);
    }

    #[test]
    fn relabel_swaps_classes() {
        let f = zd();
        let r = f.relabeled();
        for n in -50..50 {
            let g = GroupElement::Z(n);
            let expect = match f.classify(&g) {
                Sign::Plus => Sign::Minus,
                Sign::Minus => Sign::Plus,
                Sign::Neutral => Sign::Neutral,
            };
            assert_eq!(r.classify(&g), expect);
            assert!((r.mu0(&g) - (1.0 - f.mu0(&g))).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_marginals_rejected() {
        assert!(MarginalFamily::constant(GroupModel::z(), 1.0, 0.1).is_err());
        assert!(MarginalFamily::constant(GroupModel::z(), 0.0, 0.1).is_err());
        assert!(MarginalFamily::z_demo(0.1, 0.85).is_err());
        let mut m = BTreeMap::new();
        m.insert(GroupElement::Z(0), 1.0);
        assert!(MarginalFamily::finitely_perturbed(GroupModel::z(), 0.5, 0.1, m).is_err());
    }

    #[test]
    fn single_site_kakutani() {
        let mut m = BTreeMap::new();
        m.insert(GroupElement::Z(0), 0.6);
        let f = MarginalFamily::finitely_perturbed(GroupModel::z(), 0.5, 0.1, m).unwrap();
        for r in 1..6 {
            assert!((f.kakutani_partial(&GroupElement::Z(1), r).unwrap() - 0.02).abs() < 1e-15);
        }
    }

    #[test]
    fn radial_and_enumerated_sums_agree() {
        for f in [zd(), MarginalFamily::z2_demo(0.1, 0.5).unwrap(), MarginalFamily::f2_radial(2.0, 0.1, 0.5).unwrap()] {
            for r in [0u32, 1, 5, 9] {
                let fast = f.radial_sum(r).unwrap().unwrap();
                let mut slow = 0.0;
                for g in f.model().ball(r).unwrap() {
                    slow += (f.mu0(&g) - 0.5).powi(2);
                }
                assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
            }
        }
    }

    #[test]
    fn fft_rows_match_direct_rows() {
        let f = zd();
        let rows = f.kakutani_rows(40, 300).unwrap();
        for (i, g) in f.model().ball(40).unwrap().iter().enumerate() {
            let direct = f.kakutani_partial(g, 300).unwrap();
            assert!((rows[i] - direct).abs() < 1e-11, "{g}: {} vs {direct}", rows[i]);
        }
    }

    #[test]
    fn power_log_tail_dominates_direct_tail() {
        let f = zd();
        let g = GroupElement::Z(1);
        let far = f.kakutani_partial(&g, 200_000).unwrap();
        for r in [100u32, 1000, 10_000] {
            let direct = far - f.kakutani_partial(&g, r).unwrap();
            let bound = f.kakutani_tail(&g, r).sum;
            assert!(bound >= direct, "R={r}: bound {bound} < direct {direct}");
        }
    }

    #[test]
    fn geometric_tail_on_f2() {
        let f = MarginalFamily::f2_radial(2.0, 0.1, 0.5).unwrap();
        let g = GroupElement::F2(vec![0]);
        let t8 = f.kakutani_tail(&g, 8).sum;
        let t9 = f.kakutani_tail(&g, 9).sum;
        assert!(t9 < t8 && t9 > 0.0);
        let direct = f.kakutani_partial(&g, 11).unwrap() - f.kakutani_partial(&g, 8).unwrap();
        assert!(t8 >= direct);
    }
}
