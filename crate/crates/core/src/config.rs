//! Lazily realized points of {0,1}^G, the shift action, cylinder sets and the
//! finitely perturbed exactness oracle.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::family::{MarginalFamily, Profile};
use crate::group::{inv, mul, GroupElement, GroupModel};
use crate::rng::{coordinate_uniform, stream_seed};

/// A point `x ∈ {0,1}^G`.
///
/// The underlying sample assigns `x_h = 0` iff `U(seed, h) < μ_h(0)`, where `U`
/// is a counter-mode pseudorandom function, so every coordinate is fixed the
/// moment the seed is. A configuration is a view `shift · base` with a finite
/// set of overridden coordinates on top.
#[derive(Clone, Debug)]
pub struct Configuration {
    family: MarginalFamily,
    seed: u64,
    stream: u64,
    shift: GroupElement,
    overrides: Arc<BTreeMap<GroupElement, u8>>,
}

/// Draws the configuration with the given seed.
pub fn sample(family: &MarginalFamily, seed: u64) -> Configuration {
    Configuration {
        family: family.clone(),
        seed,
        stream: stream_seed(seed),
        shift: family.model().identity(),
        overrides: Arc::new(BTreeMap::new()),
    }
}

impl Configuration {
    pub fn family(&self) -> &MarginalFamily {
        &self.family
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn shift(&self) -> &GroupElement {
        &self.shift
    }

    pub fn overrides(&self) -> &BTreeMap<GroupElement, u8> {
        &self.overrides
    }

    /// True when this is an untranslated sample with no overrides.
    pub fn is_plain(&self) -> bool {
        self.overrides.is_empty() && self.shift.is_identity()
    }

    pub(crate) fn stream(&self) -> u64 {
        self.stream
    }

    /// Value of the underlying sample at `h`, given μ_h(0).
    #[inline]
    pub(crate) fn base_value_with(&self, key: u64, mu0: f64) -> u8 {
        (coordinate_uniform(self.stream, key) >= mu0) as u8
    }

    fn base_value(&self, h: &GroupElement) -> u8 {
        self.base_value_with(h.key(), self.family.mu0(h))
    }

    /// `x_h`.
    pub fn value(&self, h: &GroupElement) -> u8 {
        if let Some(&v) = self.overrides.get(h) {
            return v;
        }
        if self.shift.is_identity() {
            return self.base_value(h);
        }
        let pulled = mul(&inv(&self.shift), h).expect("coordinate in the configuration's model");
        self.base_value(&pulled)
    }

    /// The translate `g·x`, with `(g·x)_h = x_{g⁻¹h}`.
    pub fn act(&self, g: &GroupElement) -> Result<Configuration> {
        self.family.model().mul(g, &self.shift)?;
        let shift = mul(g, &self.shift)?;
        let overrides = if self.overrides.is_empty() {
            self.overrides.clone()
        } else {
            let mut m = BTreeMap::new();
            for (k, &v) in self.overrides.iter() {
                m.insert(mul(g, k)?, v);
            }
            Arc::new(m)
        };
        Ok(Configuration { family: self.family.clone(), seed: self.seed, stream: self.stream, shift, overrides })
    }

    /// The same point with the listed coordinates replaced.
    pub fn with_values(&self, changes: impl IntoIterator<Item = (GroupElement, u8)>) -> Configuration {
        let mut m = (*self.overrides).clone();
        for (k, v) in changes {
            m.insert(k, v);
        }
        Configuration { overrides: Arc::new(m), ..self.clone() }
    }

    /// The restriction to a finite window.
    pub fn restrict(&self, window: &[GroupElement]) -> Vec<u8> {
        window.iter().map(|h| self.value(h)).collect()
    }

    /// The finite set of coordinates where `self` and `other` differ, when both
    /// are overrides of the same underlying view; `None` otherwise.
    pub fn homoclinic_difference(&self, other: &Configuration) -> Option<BTreeSet<GroupElement>> {
        if self.seed != other.seed || self.shift != other.shift || !self.family.same_as(&other.family) {
            return None;
        }
        let mut out = BTreeSet::new();
        for k in self.overrides.keys().chain(other.overrides.keys()) {
            if self.value(k) != other.value(k) {
                out.insert(k.clone());
            }
        }
        Some(out)
    }
}

/// A cylinder set `{x : x|_K = σ}`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CylinderSet {
    entries: Vec<(GroupElement, u8)>,
}

impl CylinderSet {
    pub fn full() -> Self {
        CylinderSet { entries: Vec::new() }
    }

    pub fn new(entries: impl IntoIterator<Item = (GroupElement, u8)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (g, a) in entries {
            if a > 1 {
                return Err(LabError::Parse(format!("symbol {a} at {g} is not 0 or 1")));
            }
            if let Some(prev) = map.insert(g.clone(), a) {
                if prev != a {
                    return Err(LabError::Parse(format!("conflicting symbols at {g}")));
                }
            }
        }
        Ok(CylinderSet { entries: map.into_iter().collect() })
    }

    pub fn entries(&self) -> &[(GroupElement, u8)] {
        &self.entries
    }

    pub fn window(&self) -> Vec<GroupElement> {
        self.entries.iter().map(|(g, _)| g.clone()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, x: &Configuration) -> bool {
        self.entries.iter().all(|(g, a)| x.value(g) == *a)
    }

    /// `g·A`, the cylinder on `gK` with the same pattern.
    pub fn translate(&self, g: &GroupElement) -> Result<CylinderSet> {
        CylinderSet::new(self.entries.iter().map(|(k, a)| Ok((mul(g, k)?, *a))).collect::<Result<Vec<_>>>()?)
    }

    /// JSON form: a list of `[normal_form, symbol]` pairs.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Array(
            self.entries.iter().map(|(g, a)| serde_json::json!([g.normal_form(), a])).collect(),
        )
    }

    pub fn from_json(model: &GroupModel, value: &serde_json::Value) -> Result<Self> {
        let arr = value.as_array().ok_or_else(|| LabError::Parse("cylinder must be a JSON list".into()))?;
        let mut entries = Vec::with_capacity(arr.len());
        for item in arr {
            let pair = item.as_array().filter(|p| p.len() == 2).ok_or_else(|| {
                LabError::Parse(format!("cylinder entry {item} must be [element, symbol]"))
            })?;
            let g = match &pair[0] {
                serde_json::Value::String(s) => model.parse_element(s)?,
                serde_json::Value::Number(n) => model.parse_element(&n.to_string())?,
                other => return Err(LabError::Parse(format!("bad element {other}"))),
            };
            let a = pair[1].as_u64().ok_or_else(|| LabError::Parse(format!("bad symbol {}", pair[1])))?;
            entries.push((g, a as u8));
        }
        CylinderSet::new(entries)
    }

    pub fn from_json_str(model: &GroupModel, s: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(s).map_err(|e| LabError::Parse(e.to_string()))?;
        Self::from_json(model, &v)
    }
}

/// `μ(A) = ∏_{g∈K} μ_g(σ(g))`.
pub fn cylinder_measure(family: &MarginalFamily, a: &CylinderSet) -> f64 {
    a.entries.iter().map(|(g, s)| family.mu(g, *s)).product()
}

/// A family equal to λ outside a declared finite support.
#[derive(Clone, Debug)]
pub struct FinitelyPerturbedFamily {
    family: MarginalFamily,
    support: Vec<GroupElement>,
}

impl FinitelyPerturbedFamily {
    pub fn new(model: GroupModel, lambda0: f64, delta: f64, values: BTreeMap<GroupElement, f64>) -> Result<Self> {
        let support = values.keys().cloned().collect();
        let family = MarginalFamily::finitely_perturbed(model, lambda0, delta, values)?;
        Ok(FinitelyPerturbedFamily { family, support })
    }

    /// Wraps an existing family if its profile is explicitly finite and unpinned.
    pub fn from_family(family: &MarginalFamily) -> Result<Self> {
        match family.profile() {
            Profile::Finite(map) if family.pin_rule() == crate::family::PinRule::None => {
                Ok(FinitelyPerturbedFamily { family: family.clone(), support: map.keys().cloned().collect() })
            }
            Profile::Constant => Ok(FinitelyPerturbedFamily { family: family.clone(), support: Vec::new() }),
            _ => Err(LabError::Precondition("family is not finitely perturbed".into())),
        }
    }

    pub fn family(&self) -> &MarginalFamily {
        &self.family
    }

    pub fn support(&self) -> &[GroupElement] {
        &self.support
    }

    /// `F ∪ g⁻¹F`, sorted.
    pub fn active_window(&self, g: &GroupElement) -> Result<Vec<GroupElement>> {
        let ginv = self.family.model().inv(g)?;
        let mut w: BTreeSet<GroupElement> = self.support.iter().cloned().collect();
        for f in &self.support {
            w.insert(mul(&ginv, f)?);
        }
        Ok(w.into_iter().collect())
    }
}

/// `r(g,x) = Σ_h (log μ_h(x_h) − log μ_{gh}(x_h))`, exact on finitely perturbed
/// families because only `h ∈ F ∪ g⁻¹F` contribute.
pub fn exact_rn(oracle: &FinitelyPerturbedFamily, g: &GroupElement, x: &Configuration) -> Result<f64> {
    let fam = oracle.family();
    let mut total = 0.0;
    for h in oracle.active_window(g)? {
        let gh = mul(g, &h)?;
        let a = x.value(&h);
        total += fam.mu(&h, a).ln() - fam.mu(&gh, a).ln();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z(n: i64) -> GroupElement {
        GroupElement::Z(n)
    }

    #[test]
    fn shift_pulls_back_coordinates() {
        let f = MarginalFamily::z_demo(0.1, 0.5).unwrap();
        let x = sample(&f, 7);
        let y = x.act(&z(1)).unwrap();
        for h in -20..20 {
            assert_eq!(y.value(&z(h)), x.value(&z(h - 1)));
        }
        let same = x.act(&z(0)).unwrap();
        for h in f.model().ball(5).unwrap() {
            assert_eq!(same.value(&h), x.value(&h));
        }
    }

    #[test]
    fn cylinder_examples() {
        let mut m = BTreeMap::new();
        m.insert(z(0), 0.6);
        m.insert(z(1), 0.55);
        let f = MarginalFamily::finitely_perturbed(GroupModel::z(), 0.5, 0.1, m).unwrap();
        assert_eq!(cylinder_measure(&f, &CylinderSet::full()), 1.0);
        let a = CylinderSet::new([(z(0), 0), (z(1), 0), (z(2), 1)]).unwrap();
        assert!((cylinder_measure(&f, &a) - 0.165).abs() < 1e-15);
        let single = CylinderSet::new([(z(0), 0)]).unwrap();
        assert!((cylinder_measure(&f, &single) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn exact_rn_example() {
        let mut m = BTreeMap::new();
        m.insert(z(0), 0.6);
        let o = FinitelyPerturbedFamily::new(GroupModel::z(), 0.5, 0.1, m).unwrap();
        let x = sample(o.family(), 1).with_values([(z(0), 0), (z(-1), 1)]);
        let r = exact_rn(&o, &z(1), &x).unwrap();
        assert!((r - 0.405_465_108_108_164_4).abs() < 1e-12);
        assert_eq!(exact_rn(&o, &z(0), &x).unwrap(), 0.0);
    }

    #[test]
    fn cylinder_json_roundtrip() {
        let m = GroupModel::z2();
        let a = CylinderSet::new([(GroupElement::Z2(0, 1), 1), (GroupElement::Z2(-1, 0), 0)]).unwrap();
        let back = CylinderSet::from_json(&m, &a.to_json()).unwrap();
        assert_eq!(a, back);
        assert!(CylinderSet::from_json_str(&GroupModel::z(), "[[\"0\", 2]]").is_err());
    }

    #[test]
    fn homoclinic_difference_tracks_overrides() {
        let f = MarginalFamily::z_demo(0.1, 0.5).unwrap();
        let x = sample(&f, 3);
        let flipped = 1 - x.value(&z(4));
        let y = x.with_values([(z(4), flipped), (z(5), x.value(&z(5)))]);
        let d = x.homoclinic_difference(&y).unwrap();
        assert_eq!(d.into_iter().collect::<Vec<_>>(), vec![z(4)]);
        assert!(x.homoclinic_difference(&sample(&f, 4)).is_none());
    }
}
