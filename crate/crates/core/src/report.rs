//! Experiment configs, the batch driver and JSON/CSV emission.
//!
//! Sub-seeds: experiment `i` (0-based, in config order) runs with
//! `sub_seed(master_seed, i)`; inside an experiment, sample `j` uses
//! `sub_seed(experiment_seed, j)`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{CylinderSet, FinitelyPerturbedFamily};
use crate::construction::{build_phi, build_schedule, clt_check, injectivity_audit, HorizonMode, HorizonOptions, PhiOptions};
use crate::error::{LabError, Result};
use crate::family::{MarginalFamily, PinRule, Sign};
use crate::group::{GroupElement, GroupKind, GroupModel, DEFAULT_BALL_CAP};
use crate::maharam::{
    conservativity_return_profile, default_trunc_radius, maharam_preservation_check, ratio_set_scan, ProductSystem,
    ScanParams, WitnessOptions, YModel,
};
use crate::rng::sub_seed;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub kind: GroupKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ball_cap: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Constant,
    ZDemo,
    Z2Demo,
    LamplighterFolner,
    FinitelyPerturbed,
    F2Radial,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub kind: FamilyKind,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_lambda0")]
    pub lambda0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pinned_rule: Option<PinRule>,
    /// Geometric base for `f2_radial`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<f64>,
    /// `μ_g(0)` on the support, keyed by normal form, for `finitely_perturbed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub relabel: bool,
}

fn default_delta() -> f64 {
    0.1
}

fn default_lambda0() -> f64 {
    0.5
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    #[serde(default = "default_max_radius")]
    pub max_radius: u32,
    #[serde(default = "default_max_samples")]
    pub max_samples: u64,
}

fn default_max_radius() -> u32 {
    2_000_000
}

fn default_max_samples() -> u64 {
    10_000_000
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_radius: default_max_radius(), max_samples: default_max_samples() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReturnsSpec {
    pub cylinder: Value,
    #[serde(default = "default_return_eps")]
    pub eps: f64,
    #[serde(default = "default_excluded_radius")]
    pub excluded_radius: u32,
    #[serde(default = "default_return_radii")]
    pub radii: Vec<u32>,
    #[serde(default = "default_seeds")]
    pub samples: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trunc_radius: Option<u32>,
}

fn default_return_eps() -> f64 {
    0.2
}
fn default_excluded_radius() -> u32 {
    2
}
fn default_return_radii() -> Vec<u32> {
    vec![100, 300, 1000]
}
fn default_seeds() -> u64 {
    1000
}

/// One experiment. `kind` selects the variant.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExperimentSpec {
    Kakutani {
        /// Normal form of the shift; defaults to the first generator.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        g: Option<String>,
        #[serde(default = "default_kakutani_radii")]
        radii: Vec<u32>,
    },
    Conservativity {
        #[serde(default = "default_cs")]
        cs: Vec<f64>,
        #[serde(default = "default_cons_radii")]
        radii: Vec<u32>,
        #[serde(default = "default_inner")]
        inner: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        returns: Option<ReturnsSpec>,
    },
    Clt {
        #[serde(default = "default_clt_n")]
        n: Vec<usize>,
        #[serde(default = "default_clt_samples")]
        samples: u64,
        #[serde(default = "default_phi_eps")]
        eps: f64,
    },
    BuildPhi {
        t: f64,
        #[serde(default = "default_phi_eps")]
        eps: f64,
        #[serde(default)]
        window: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sign: Option<String>,
        #[serde(default = "default_budget")]
        budget: usize,
        #[serde(default = "default_mode")]
        mode: HorizonMode,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        margin: Option<f64>,
        #[serde(default = "default_domain_samples")]
        domain_samples: u64,
    },
    RatioSet {
        cylinder: Value,
        #[serde(default = "default_grid")]
        grid: Vec<f64>,
        #[serde(default = "default_ratio_eps")]
        eps: f64,
        #[serde(default = "default_group_radius")]
        radius: u32,
        #[serde(default = "default_seeds")]
        seeds: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        trunc_radius: Option<u32>,
        #[serde(default = "default_budget")]
        budget: usize,
    },
    MaharamCheck {
        #[serde(default)]
        g: Vec<String>,
        #[serde(default)]
        cylinder: Value,
        #[serde(default = "default_interval")]
        interval: (f64, f64),
    },
    L2Tail {
        #[serde(default = "default_l2_radii")]
        radii: Vec<u32>,
    },
}

fn default_kakutani_radii() -> Vec<u32> {
    vec![100, 1000, 10_000]
}
fn default_cs() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}
fn default_cons_radii() -> Vec<u32> {
    vec![100, 1000, 10_000]
}
fn default_inner() -> u32 {
    1000
}
fn default_clt_n() -> Vec<usize> {
    vec![1, 100, 10_000]
}
fn default_clt_samples() -> u64 {
    10_000
}
fn default_phi_eps() -> f64 {
    0.2
}
fn default_budget() -> usize {
    20_000
}
fn default_mode() -> HorizonMode {
    HorizonMode::Auto
}
fn default_domain_samples() -> u64 {
    10_000
}
fn default_grid() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}
fn default_ratio_eps() -> f64 {
    0.1
}
fn default_group_radius() -> u32 {
    1000
}
fn default_interval() -> (f64, f64) {
    (0.0, 1.0)
}
fn default_l2_radii() -> Vec<u32> {
    vec![5, 10, 15, 20, 25, 30]
}

impl ExperimentSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentSpec::Kakutani { .. } => "kakutani",
            ExperimentSpec::Conservativity { .. } => "conservativity",
            ExperimentSpec::Clt { .. } => "clt",
            ExperimentSpec::BuildPhi { .. } => "build-phi",
            ExperimentSpec::RatioSet { .. } => "ratio-set",
            ExperimentSpec::MaharamCheck { .. } => "maharam-check",
            ExperimentSpec::L2Tail { .. } => "l2-tail",
        }
    }

    /// The experiment of `kind` with all defaults (`t = 0` for build-phi,
    /// `A = {x_e = 0}` for ratio-set).
    pub fn default_for(kind: &str) -> Result<Self> {
        let v = match kind {
            "build-phi" => json!({"kind": kind, "t": 0.0}),
            "ratio-set" => json!({"kind": kind, "cylinder": []}),
            _ => json!({ "kind": kind }),
        };
        serde_json::from_value(v).map_err(|e| LabError::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub group: GroupSpec,
    pub family: FamilySpec,
    #[serde(default)]
    pub limits: Limits,
    #[serde(default)]
    pub experiments: Vec<ExperimentSpec>,
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    /// Z demo family with default parameters and no experiments.
    pub fn z_demo(master_seed: u64) -> Self {
        ExperimentConfig {
            master_seed,
            group: GroupSpec { kind: GroupKind::Z, ball_cap: None },
            family: FamilySpec {
                kind: FamilyKind::ZDemo,
                delta: 0.1,
                lambda0: 0.5,
                pinned_rule: None,
                base: None,
                values: None,
                relabel: false,
            },
            limits: Limits::default(),
            experiments: Vec::new(),
        }
    }

    pub fn model(&self) -> GroupModel {
        GroupModel::with_cap(self.group.kind, self.group.ball_cap.unwrap_or(DEFAULT_BALL_CAP))
    }

    pub fn build_family(&self) -> Result<MarginalFamily> {
        let model = self.model();
        let s = &self.family;
        let expect = |kind: GroupKind| -> Result<()> {
            if model.kind() != kind {
                return Err(LabError::ModelMismatch { expected: kind.name(), found: model.kind().name() });
            }
            Ok(())
        };
        let mut fam = match s.kind {
            FamilyKind::Constant => MarginalFamily::constant(model.clone(), s.lambda0, s.delta)?,
            FamilyKind::ZDemo => {
                expect(GroupKind::Z)?;
                MarginalFamily::z_demo(s.delta, s.lambda0)?
            }
            FamilyKind::Z2Demo => {
                expect(GroupKind::Z2)?;
                MarginalFamily::z2_demo(s.delta, s.lambda0)?
            }
            FamilyKind::LamplighterFolner => {
                expect(GroupKind::Lamplighter)?;
                MarginalFamily::lamplighter_folner(s.delta, s.lambda0)?
            }
            FamilyKind::F2Radial => {
                expect(GroupKind::F2)?;
                MarginalFamily::f2_radial(s.base.unwrap_or(2.0), s.delta, s.lambda0)?
            }
            FamilyKind::FinitelyPerturbed => {
                let mut values = BTreeMap::new();
                for (k, &v) in s.values.as_ref().ok_or_else(|| LabError::Config("finitely_perturbed needs `values`".into()))? {
                    values.insert(model.parse_element(k)?, v);
                }
                MarginalFamily::finitely_perturbed(model.clone(), s.lambda0, s.delta, values)?
            }
        };
        if model.ball_cap() != fam.model().ball_cap() {
            fam = fam.with_model(model)?;
        }
        if let Some(rule) = s.pinned_rule {
            fam = fam.with_pin_rule(rule)?;
        }
        if s.relabel {
            fam = fam.relabeled();
        }
        Ok(fam)
    }

    fn check_limits(&self) -> Result<()> {
        let lim = &self.limits;
        let radius = |r: u32| -> Result<()> {
            if r > lim.max_radius {
                return Err(LabError::ResourceLimit(format!("radius {r} exceeds the configured maximum {}", lim.max_radius)));
            }
            Ok(())
        };
        let samples = |n: u64| -> Result<()> {
            if n > lim.max_samples {
                return Err(LabError::ResourceLimit(format!("{n} samples exceed the configured maximum {}", lim.max_samples)));
            }
            Ok(())
        };
        for e in &self.experiments {
            match e {
                ExperimentSpec::Kakutani { radii, .. } | ExperimentSpec::L2Tail { radii } => radii.iter().try_for_each(|&r| radius(r))?,
                ExperimentSpec::Conservativity { radii, inner, returns, .. } => {
                    radii.iter().try_for_each(|&r| radius(r))?;
                    radius(*inner)?;
                    if let Some(rs) = returns {
                        rs.radii.iter().try_for_each(|&r| radius(r))?;
                        rs.trunc_radius.map_or(Ok(()), radius)?;
                        samples(rs.samples)?;
                    }
                }
                ExperimentSpec::Clt { samples: s, n, .. } => {
                    samples(*s)?;
                    samples(n.iter().copied().max().unwrap_or(0) as u64)?;
                }
                ExperimentSpec::BuildPhi { domain_samples, budget, .. } => {
                    samples(*domain_samples)?;
                    samples(*budget as u64)?;
                }
                ExperimentSpec::RatioSet { radius: r, seeds, trunc_radius, budget, .. } => {
                    radius(*r)?;
                    trunc_radius.map_or(Ok(()), radius)?;
                    samples(*seeds)?;
                    samples(*budget as u64)?;
                }
                ExperimentSpec::MaharamCheck { .. } => {}
            }
        }
        Ok(())
    }

    /// Structural validation: parses the family and every element and cylinder.
    pub fn validate(&self) -> Result<MarginalFamily> {
        let fam = self.build_family()?;
        self.check_limits()?;
        let model = fam.model();
        for e in &self.experiments {
            match e {
                ExperimentSpec::Kakutani { g: Some(g), .. } => {
                    model.parse_element(g)?;
                }
                ExperimentSpec::BuildPhi { window, sign, eps, .. } => {
                    for w in window {
                        model.parse_element(w)?;
                    }
                    if let Some(s) = sign {
                        parse_sign(s)?;
                    }
                    positive(*eps, "eps")?;
                }
                ExperimentSpec::RatioSet { cylinder, eps, .. } => {
                    CylinderSet::from_json(model, cylinder)?;
                    positive(*eps, "eps")?;
                }
                ExperimentSpec::MaharamCheck { g, cylinder, .. } => {
                    for x in g {
                        model.parse_element(x)?;
                    }
                    if !cylinder.is_null() {
                        CylinderSet::from_json(model, cylinder)?;
                    }
                }
                ExperimentSpec::Conservativity { returns: Some(r), .. } => {
                    CylinderSet::from_json(model, &r.cylinder)?;
                    positive(r.eps, "eps")?;
                }
                _ => {}
            }
        }
        Ok(fam)
    }
}

fn positive(v: f64, name: &str) -> Result<()> {
    if v > 0.0 {
        Ok(())
    } else {
        Err(LabError::Config(format!("{name} must be positive, got {v}")))
    }
}

pub fn parse_sign(s: &str) -> Result<Sign> {
    match s {
        "+" | "plus" => Ok(Sign::Plus),
        "-" | "minus" => Ok(Sign::Minus),
        _ => Err(LabError::Config(format!("sign must be + or -, got {s:?}"))),
    }
}

/// A rectangular table; cells are JSON scalars.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map(Value::Number).unwrap_or_else(|| Value::String(format!("{v}")))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub index: usize,
    pub kind: String,
    pub seed: u64,
    pub tables: Vec<Table>,
    pub summary: Value,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub config: Value,
    pub version: String,
    pub experiments: Vec<ExperimentResult>,
    pub wall_clock_seconds: f64,
    pub warnings: Vec<String>,
}

/// Runs every experiment in order.
pub fn run(config: &ExperimentConfig) -> Result<Report> {
    let start = Instant::now();
    let family = config.validate()?;
    let mut experiments = Vec::new();
    let mut warnings = Vec::new();
    for (i, spec) in config.experiments.iter().enumerate() {
        let seed = sub_seed(config.master_seed, i as u64);
        let mut res = run_experiment(&family, spec, seed)?;
        res.index = i;
        warnings.extend(res.warnings.iter().map(|w| format!("experiment {i} ({}): {w}", res.kind)));
        experiments.push(res);
    }
    Ok(Report {
        config: serde_json::to_value(config).expect("config serializes"),
        version: VERSION.to_string(),
        experiments,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        warnings,
    })
}

fn element_cell(g: &GroupElement) -> Value {
    Value::String(g.normal_form())
}

pub fn run_experiment(family: &MarginalFamily, spec: &ExperimentSpec, seed: u64) -> Result<ExperimentResult> {
    let model = family.model().clone();
    let mut tables = Vec::new();
    let mut warnings = Vec::new();
    let mut summary = json!({});
    match spec {
        ExperimentSpec::Kakutani { g, radii } => {
            let g = match g {
                Some(s) => model.parse_element(s)?,
                None => model.generators()[0].clone(),
            };
            let mut t = Table::new("kakutani", &["R", "kakutani_partial", "cauchy_increment", "tail_bound", "divergence_partial"]);
            let mut prev: Option<f64> = None;
            for &r in radii {
                let k = family.kakutani_partial(&g, r)?;
                let tail = family.kakutani_tail(&g, r).sum;
                let div = family.divergence_partial(r, crate::family::Side::All)?;
                let inc = prev.map_or(Value::Null, |p| num(k - p));
                t.push(vec![json!(r), num(k), inc, num(tail), num(div)]);
                prev = Some(k);
            }
            tables.push(t);
            summary = json!({ "g": g.normal_form() });
        }
        ExperimentSpec::Conservativity { cs, radii, inner, returns } => {
            let prof = family.conservativity_profile(cs, radii, *inner)?;
            let mut t = Table::new("conservativity_partial", &["c", "R", "value"]);
            for (i, &c) in cs.iter().enumerate() {
                for (j, &r) in radii.iter().enumerate() {
                    t.push(vec![num(c), json!(r), num(prof[i][j])]);
                }
            }
            tables.push(t);
            if let Some(rs) = returns {
                let a = CylinderSet::from_json(&model, &rs.cylinder)?;
                let excl = model.ball(rs.excluded_radius)?;
                let max_r = rs.radii.iter().copied().max().unwrap_or(0);
                let trunc = rs.trunc_radius.unwrap_or_else(|| default_trunc_radius(max_r));
                let sys = ProductSystem::trivial(family);
                let rows = conservativity_return_profile(&sys, &a, None, rs.eps, &excl, &rs.radii, trunc, rs.samples, seed)?;
                let mut t = Table::new("return_fraction", &["R_group", "successes", "trials", "fraction", "lcb99"]);
                for r in rows {
                    let f = r.fraction;
                    t.push(vec![json!(r.group_radius), json!(f.successes), json!(f.trials), num(f.estimate), num(f.lower)]);
                }
                tables.push(t);
            }
        }
        ExperimentSpec::Clt { n, samples, eps } => {
            let max_n = n.iter().copied().max().unwrap_or(1);
            let schedule = build_schedule(family, &[], *eps, max_n)?;
            let mut t = Table::new(
                "clt",
                &["n", "samples", "a_n", "b_n", "ks", "sample_mean", "sample_var", "mean_z", "var_z"],
            );
            for &k in n {
                let r = clt_check(&schedule, k, *samples, seed)?;
                t.push(vec![
                    json!(r.n),
                    json!(r.samples),
                    num(r.a_n),
                    num(r.b_n),
                    num(r.ks),
                    num(r.sample_mean),
                    num(r.sample_var),
                    num(r.mean_z),
                    num(r.var_z),
                ]);
            }
            tables.push(t);
        }
        ExperimentSpec::BuildPhi { t, eps, window, sign, budget, mode, margin, domain_samples } => {
            let sign = match sign {
                Some(s) => parse_sign(s)?,
                None if family.lambda0() >= 0.5 => Sign::Plus,
                None => Sign::Minus,
            };
            let window: Vec<GroupElement> = window.iter().map(|w| model.parse_element(w)).collect::<Result<_>>()?;
            let opts = PhiOptions {
                budget: *budget,
                horizon: HorizonOptions { mode: *mode, margin: *margin, seed: sub_seed(seed, 1), ..Default::default() },
                domain_samples: *domain_samples,
                seed: sub_seed(seed, 2),
            };
            let schedule = build_schedule(family, &window, *eps, *budget)?;
            let phi = build_phi(family, &window, *t, *eps, sign, &opts)?;
            let audit = phi.rn_audit(*domain_samples, sub_seed(seed, 2));
            let inj = injectivity_audit(&phi, *domain_samples, sub_seed(seed, 3));
            if audit.violations > 0 || inj.collisions > 0 || inj.sign_flip_failures > 0 {
                return Err(LabError::InvariantViolation(format!(
                    "phi audit failed: {} rn violations, {} collisions, {} sign-flip failures",
                    audit.violations, inj.collisions, inj.sign_flip_failures
                )));
            }
            let mut pt = Table::new("pairs", &["k", "pin", "site", "site_mu0", "d"]);
            for p in phi.pairs() {
                pt.push(vec![json!(p.k), element_cell(&p.pin), element_cell(&p.site), num(p.site_mu0), num(p.d)]);
            }
            tables.push(pt);
            summary = json!({
                "phi": phi.summary(schedule.excluded()),
                "rn_audit": audit,
                "injectivity": inj,
            });
            if let Some(s) = summary.get_mut("phi").and_then(|p| p.as_object_mut()) {
                s.remove("pairs");
            }
        }
        ExperimentSpec::RatioSet { cylinder, grid, eps, radius, seeds, trunc_radius, budget } => {
            let a = CylinderSet::from_json(&model, cylinder)?;
            let sys = ProductSystem::new(family, YModel::Trivial)?;
            let opts = WitnessOptions {
                scan: ScanParams {
                    group_radius: *radius,
                    trunc_radius: trunc_radius.unwrap_or_else(|| default_trunc_radius(*radius)),
                    samples: *seeds,
                    seed,
                },
                phi: PhiOptions {
                    budget: *budget,
                    horizon: HorizonOptions { seed: sub_seed(seed, 1), ..Default::default() },
                    domain_samples: 0,
                    seed: sub_seed(seed, 2),
                },
                chain: false,
            };
            let res = ratio_set_scan(&sys, &a, grid, *eps, &opts)?;
            let mut ev = Table::new("events", &["source", "sample", "g", "r", "radius", "tail_mean_bound", "tail_std_bound"]);
            for e in &res.events {
                ev.push(vec![
                    json!(e.source),
                    json!(e.sample),
                    element_cell(&e.g),
                    num(e.r.value),
                    json!(e.r.radius),
                    num(e.r.tail_mean_bound),
                    num(e.r.tail_std_bound),
                ]);
            }
            let mut cov = Table::new("coverage", &["t", "covered", "best"]);
            for r in &res.report.rows {
                cov.push(vec![num(r.t), json!(r.covered), num(r.best)]);
            }
            tables.push(ev);
            tables.push(cov);
            warnings.extend(res.warnings.iter().cloned());
            summary = json!({ "coverage": res.report.coverage, "label": res.report.label, "eps": eps });
        }
        ExperimentSpec::MaharamCheck { g, cylinder, interval } => {
            let oracle = FinitelyPerturbedFamily::from_family(family)?;
            let a = if cylinder.is_null() { CylinderSet::full() } else { CylinderSet::from_json(&model, cylinder)? };
            let gs: Vec<GroupElement> = if g.is_empty() {
                model.generators()
            } else {
                g.iter().map(|s| model.parse_element(s)).collect::<Result<_>>()?
            };
            let mut t = Table::new("preservation", &["g", "max_error"]);
            for h in &gs {
                t.push(vec![element_cell(h), num(maharam_preservation_check(&oracle, h, &a, *interval)?)]);
            }
            tables.push(t);
        }
        ExperimentSpec::L2Tail { radii } => {
            let mut t = Table::new("l2_tail", &["R", "value", "cauchy_increment"]);
            let mut prev: Option<f64> = None;
            for &r in radii {
                let v = family.l2_tail_profile(r)?;
                t.push(vec![json!(r), num(v), prev.map_or(Value::Null, |p| num(v - p))]);
                prev = Some(v);
            }
            tables.push(t);
        }
    }
    Ok(ExperimentResult { index: 0, kind: spec.kind().to_string(), seed, tables, summary, warnings })
}

fn csv_cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Writes `report.json` and one CSV per table, named
/// `<index>_<kind>_<table>.csv`. Returns the written paths.
pub fn emit(report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let json_path = dir.join("report.json");
    fs::write(&json_path, serde_json::to_string_pretty(report).expect("report serializes"))?;
    written.push(json_path);
    for e in &report.experiments {
        for t in &e.tables {
            let path = dir.join(format!("{:02}_{}_{}.csv", e.index, e.kind, t.name));
            let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
            w.write_record(&t.columns).map_err(csv_err)?;
            for row in &t.rows {
                w.write_record(row.iter().map(csv_cell)).map_err(csv_err)?;
            }
            w.flush()?;
            written.push(path);
        }
    }
    Ok(written)
}

fn csv_err(e: csv::Error) -> LabError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => LabError::Io(io),
        other => LabError::Io(std::io::Error::new(std::io::ErrorKind::Other, format!("{other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_group_kind_is_config_error() {
        let s = r#"{"master_seed": 1, "group": {"kind": "Q"}, "family": {"kind": "constant"}}"#;
        let e = ExperimentConfig::from_json_str(s).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn constant_family_kakutani_is_zero() {
        let s = r#"{"master_seed": 1, "group": {"kind": "Z"}, "family": {"kind": "constant"},
                    "experiments": [{"kind": "kakutani", "radii": [10, 100]}]}"#;
        let rep = run(&ExperimentConfig::from_json_str(s).unwrap()).unwrap();
        for row in &rep.experiments[0].tables[0].rows {
            assert_eq!(row[1], json!(0.0));
            assert_eq!(row[4], json!(0.0));
        }
    }

    #[test]
    fn family_model_mismatch() {
        let s = r#"{"master_seed": 1, "group": {"kind": "Z2"}, "family": {"kind": "z_demo"}}"#;
        let e = ExperimentConfig::from_json_str(s).unwrap().build_family().unwrap_err();
        assert!(matches!(e, LabError::ModelMismatch { .. }));
    }
}
