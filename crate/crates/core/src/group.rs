//! Finitely generated groups with word-metric balls and a canonical enumeration.
//!
//! Elements are ordered by word length, then lexicographically on their normal
//! form. Symbol orders: on Z, `-n` precedes `+n`; on Z² pairs compare as
//! `(x, y)`; lamplighter elements compare as `(sorted lamp list, position)`;
//! free-group words compare letterwise with `a < A < b < B`.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const DEFAULT_BALL_CAP: usize = 10_000_000;

/// Radius up to which the lamplighter enumeration is cached for index lookups.
const LAMP_INDEX_RADIUS: u32 = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupKind {
    #[serde(rename = "Z")]
    Z,
    #[serde(rename = "Z2")]
    Z2,
    #[serde(rename = "lamplighter")]
    Lamplighter,
    #[serde(rename = "F2")]
    F2,
}

impl GroupKind {
    pub fn name(self) -> &'static str {
        match self {
            GroupKind::Z => "Z",
            GroupKind::Z2 => "Z2",
            GroupKind::Lamplighter => "lamplighter",
            GroupKind::F2 => "F2",
        }
    }

    fn rank(self) -> u8 {
        match self {
            GroupKind::Z => 0,
            GroupKind::Z2 => 1,
            GroupKind::Lamplighter => 2,
            GroupKind::F2 => 3,
        }
    }
}

impl FromStr for GroupKind {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Z" => Ok(GroupKind::Z),
            "Z2" => Ok(GroupKind::Z2),
            "lamplighter" => Ok(GroupKind::Lamplighter),
            "F2" => Ok(GroupKind::F2),
            other => Err(LabError::Config(format!("unknown group kind {other:?}"))),
        }
    }
}

/// A group element in canonical normal form.
///
/// Lamplighter elements are `(lamps, pos)` with `lamps` sorted and distinct;
/// multiplication is `(f,p)(g,q) = (f + shift_p g, p + q)`.
/// Free-group words are reduced, with letters `0=a, 1=A, 2=b, 3=B`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum GroupElement {
    Z(i64),
    Z2(i64, i64),
    Lamp { lamps: Vec<i64>, pos: i64 },
    F2(Vec<u8>),
}

impl GroupElement {
    pub fn kind(&self) -> GroupKind {
        match self {
            GroupElement::Z(_) => GroupKind::Z,
            GroupElement::Z2(..) => GroupKind::Z2,
            GroupElement::Lamp { .. } => GroupKind::Lamplighter,
            GroupElement::F2(_) => GroupKind::F2,
        }
    }

    pub fn is_identity(&self) -> bool {
        match self {
            GroupElement::Z(n) => *n == 0,
            GroupElement::Z2(x, y) => *x == 0 && *y == 0,
            GroupElement::Lamp { lamps, pos } => lamps.is_empty() && *pos == 0,
            GroupElement::F2(w) => w.is_empty(),
        }
    }

    pub fn word_length(&self) -> u64 {
        match self {
            GroupElement::Z(n) => n.unsigned_abs(),
            GroupElement::Z2(x, y) => x.unsigned_abs() + y.unsigned_abs(),
            GroupElement::Lamp { lamps, pos } => lamp_word_length(lamps, *pos),
            GroupElement::F2(w) => w.len() as u64,
        }
    }

    /// The canonical string form used in all CSV and JSON output.
    pub fn normal_form(&self) -> String {
        self.to_string()
    }

    /// A 64-bit key used to address the coordinate in random streams.
    pub fn key(&self) -> u64 {
        match self {
            GroupElement::Z(n) => *n as u64,
            GroupElement::Z2(x, y) => mix64((*x as u64) ^ 0x5A5A_0000_0000_0001)
                .wrapping_add((*y as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            GroupElement::Lamp { lamps, pos } => {
                let mut h = mix64(0x1A3F_0000_0000_0002 ^ (*pos as u64));
                for &l in lamps {
                    h = mix64(h ^ (l as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
                }
                mix64(h ^ lamps.len() as u64)
            }
            GroupElement::F2(w) => {
                let mut h = 0xF2F2_0000_0000_0003u64;
                for &s in w {
                    h = mix64(h.wrapping_mul(5) ^ (s as u64 + 1));
                }
                mix64(h ^ w.len() as u64)
            }
        }
    }
}

#[inline]
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lamp_word_length(lamps: &[i64], pos: i64) -> u64 {
    if lamps.is_empty() {
        return pos.unsigned_abs();
    }
    let lo = lamps[0].min(0).min(pos);
    let hi = lamps[lamps.len() - 1].max(0).max(pos);
    let left_first = (-lo) + (hi - lo) + (hi - pos);
    let right_first = hi + (hi - lo) + (pos - lo);
    lamps.len() as u64 + left_first.min(right_first) as u64
}

impl Ord for GroupElement {
    fn cmp(&self, other: &Self) -> Ordering {
        let k = self.kind().rank().cmp(&other.kind().rank());
        if k != Ordering::Equal {
            return k;
        }
        let l = self.word_length().cmp(&other.word_length());
        if l != Ordering::Equal {
            return l;
        }
        match (self, other) {
            (GroupElement::Z(a), GroupElement::Z(b)) => (*a > 0).cmp(&(*b > 0)),
            (GroupElement::Z2(a, b), GroupElement::Z2(c, d)) => (a, b).cmp(&(c, d)),
            (
                GroupElement::Lamp { lamps: f, pos: p },
                GroupElement::Lamp { lamps: g, pos: q },
            ) => f.cmp(g).then(p.cmp(q)),
            (GroupElement::F2(a), GroupElement::F2(b)) => a.cmp(b),
            _ => Ordering::Equal,
        }
    }
}

impl PartialOrd for GroupElement {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const F2_LETTERS: [char; 4] = ['a', 'A', 'b', 'B'];

/// Serialized as the normal-form string.
impl Serialize for GroupElement {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl fmt::Display for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupElement::Z(n) => write!(f, "{n}"),
            GroupElement::Z2(x, y) => write!(f, "({x},{y})"),
            GroupElement::Lamp { lamps, pos } => {
                write!(f, "[")?;
                for (i, l) in lamps.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{l}")?;
                }
                write!(f, "]@{pos}")
            }
            GroupElement::F2(w) => {
                if w.is_empty() {
                    return write!(f, "e");
                }
                for &s in w {
                    write!(f, "{}", F2_LETTERS[s as usize])?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Default)]
struct EnumCache {
    lamp: OnceLock<LampIndex>,
}

struct LampIndex {
    elements: Vec<GroupElement>,
    index: HashMap<GroupElement, u64>,
    sphere_sizes: Vec<u64>,
}

/// A finitely generated group with a symmetric generating set.
#[derive(Clone)]
pub struct GroupModel {
    kind: GroupKind,
    ball_cap: usize,
    cache: Arc<EnumCache>,
}

impl fmt::Debug for GroupModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GroupModel")
            .field("kind", &self.kind)
            .field("ball_cap", &self.ball_cap)
            .finish()
    }
}

impl PartialEq for GroupModel {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl GroupModel {
    pub fn new(kind: GroupKind) -> Self {
        Self::with_cap(kind, DEFAULT_BALL_CAP)
    }

    pub fn with_cap(kind: GroupKind, ball_cap: usize) -> Self {
        GroupModel { kind, ball_cap, cache: Arc::new(EnumCache::default()) }
    }

    pub fn z() -> Self {
        Self::new(GroupKind::Z)
    }

    pub fn z2() -> Self {
        Self::new(GroupKind::Z2)
    }

    pub fn lamplighter() -> Self {
        Self::new(GroupKind::Lamplighter)
    }

    pub fn f2() -> Self {
        Self::new(GroupKind::F2)
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn ball_cap(&self) -> usize {
        self.ball_cap
    }

    pub fn identity(&self) -> GroupElement {
        match self.kind {
            GroupKind::Z => GroupElement::Z(0),
            GroupKind::Z2 => GroupElement::Z2(0, 0),
            GroupKind::Lamplighter => GroupElement::Lamp { lamps: Vec::new(), pos: 0 },
            GroupKind::F2 => GroupElement::F2(Vec::new()),
        }
    }

    /// The symmetric generating set.
    pub fn generators(&self) -> Vec<GroupElement> {
        match self.kind {
            GroupKind::Z => vec![GroupElement::Z(1), GroupElement::Z(-1)],
            GroupKind::Z2 => vec![
                GroupElement::Z2(1, 0),
                GroupElement::Z2(-1, 0),
                GroupElement::Z2(0, 1),
                GroupElement::Z2(0, -1),
            ],
            GroupKind::Lamplighter => vec![
                GroupElement::Lamp { lamps: Vec::new(), pos: 1 },
                GroupElement::Lamp { lamps: Vec::new(), pos: -1 },
                GroupElement::Lamp { lamps: vec![0], pos: 0 },
            ],
            GroupKind::F2 => (0..4u8).map(|s| GroupElement::F2(vec![s])).collect(),
        }
    }

    fn check(&self, a: &GroupElement) -> Result<()> {
        if a.kind() == self.kind {
            Ok(())
        } else {
            Err(LabError::ModelMismatch { expected: self.kind.name(), found: a.kind().name() })
        }
    }

    pub fn mul(&self, a: &GroupElement, b: &GroupElement) -> Result<GroupElement> {
        self.check(a)?;
        self.check(b)?;
        mul(a, b)
    }

    pub fn inv(&self, a: &GroupElement) -> Result<GroupElement> {
        self.check(a)?;
        Ok(inv(a))
    }

    /// Number of elements of word length exactly `r`.
    pub fn sphere_size(&self, r: u32) -> Result<u128> {
        Ok(match self.kind {
            GroupKind::Z => {
                if r == 0 {
                    1
                } else {
                    2
                }
            }
            GroupKind::Z2 => {
                if r == 0 {
                    1
                } else {
                    4 * r as u128
                }
            }
            GroupKind::F2 => {
                if r == 0 {
                    1
                } else {
                    4u128.saturating_mul(3u128.saturating_pow(r - 1))
                }
            }
            GroupKind::Lamplighter => {
                let idx = self.lamp_index();
                if (r as usize) < idx.sphere_sizes.len() {
                    idx.sphere_sizes[r as usize] as u128
                } else {
                    lamp_sphere_sizes(r, self.ball_cap)?[r as usize] as u128
                }
            }
        })
    }

    /// [`sphere_size`](Self::sphere_size) as a float, exact in exponent for F₂
    /// radii whose count overflows 128 bits.
    pub fn sphere_size_f64(&self, r: u32) -> Result<f64> {
        match self.kind {
            GroupKind::F2 if r > 0 => Ok(4.0 * 3f64.powi(r as i32 - 1)),
            _ => Ok(self.sphere_size(r)? as f64),
        }
    }

    /// |ball(R)| without materializing the ball.
    pub fn ball_size(&self, radius: u32) -> Result<u128> {
        Ok(match self.kind {
            GroupKind::Z => 2 * radius as u128 + 1,
            GroupKind::Z2 => {
                let r = radius as u128;
                2 * r * r + 2 * r + 1
            }
            GroupKind::F2 => 2u128.saturating_mul(3u128.saturating_pow(radius)) - 1,
            GroupKind::Lamplighter => {
                let mut total = 0u128;
                for r in 0..=radius {
                    total += self.sphere_size(r)?;
                }
                total
            }
        })
    }

    fn check_cap(&self, radius: u32) -> Result<usize> {
        let size = match self.kind {
            GroupKind::Lamplighter => {
                let idx = self.lamp_index();
                if (radius as usize) < idx.sphere_sizes.len() {
                    idx.sphere_sizes[..=radius as usize].iter().map(|&s| s as u128).sum()
                } else {
                    lamp_sphere_sizes(radius, self.ball_cap)?.iter().map(|&s| s as u128).sum()
                }
            }
            _ => self.ball_size(radius)?,
        };
        if size > self.ball_cap as u128 {
            return Err(LabError::ResourceLimit(format!(
                "ball of radius {radius} in {} has {size} elements, cap is {}",
                self.kind.name(),
                self.ball_cap
            )));
        }
        Ok(size as usize)
    }

    /// All elements of word length at most `radius`, in canonical order.
    pub fn ball(&self, radius: u32) -> Result<Vec<GroupElement>> {
        let size = self.check_cap(radius)?;
        let mut out = Vec::with_capacity(size);
        match self.kind {
            GroupKind::Z => {
                out.push(GroupElement::Z(0));
                for r in 1..=radius as i64 {
                    out.push(GroupElement::Z(-r));
                    out.push(GroupElement::Z(r));
                }
            }
            GroupKind::Z2 => {
                for r in 0..=radius as i64 {
                    push_z2_sphere(r, &mut out);
                }
            }
            GroupKind::F2 => {
                out.push(GroupElement::F2(Vec::new()));
                let mut level: Vec<Vec<u8>> = vec![Vec::new()];
                for _ in 0..radius {
                    let mut next = Vec::with_capacity(level.len() * 3 + 4);
                    for w in &level {
                        for s in 0..4u8 {
                            if let Some(&last) = w.last() {
                                if s == last ^ 1 {
                                    continue;
                                }
                            }
                            let mut v = w.clone();
                            v.push(s);
                            next.push(v);
                        }
                    }
                    out.extend(next.iter().cloned().map(GroupElement::F2));
                    level = next;
                }
            }
            GroupKind::Lamplighter => {
                let idx = self.lamp_index();
                if radius as usize + 1 <= idx.sphere_sizes.len() {
                    out.extend(idx.elements[..size].iter().cloned());
                } else {
                    out = lamp_bfs_ball(radius, self.ball_cap)?;
                }
            }
        }
        Ok(out)
    }

    /// Calls `f` on each element of ball(R) in canonical order without
    /// materializing the ball when the model allows it.
    pub fn for_each_in_ball(&self, radius: u32, mut f: impl FnMut(&GroupElement)) -> Result<()> {
        self.check_cap(radius)?;
        match self.kind {
            GroupKind::Z => {
                f(&GroupElement::Z(0));
                for r in 1..=radius as i64 {
                    f(&GroupElement::Z(-r));
                    f(&GroupElement::Z(r));
                }
            }
            GroupKind::Z2 => {
                let mut buf = Vec::new();
                for r in 0..=radius as i64 {
                    buf.clear();
                    push_z2_sphere(r, &mut buf);
                    buf.iter().for_each(&mut f);
                }
            }
            _ => self.ball(radius)?.iter().for_each(f),
        }
        Ok(())
    }

    /// The first `n` elements in canonical order.
    pub fn enumerate(&self, n: usize) -> Result<Vec<GroupElement>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        if n > self.ball_cap {
            return Err(LabError::ResourceLimit(format!(
                "enumeration of {n} elements exceeds cap {}",
                self.ball_cap
            )));
        }
        match self.kind {
            GroupKind::Z | GroupKind::Z2 | GroupKind::F2 => {
                (0..n as u64).map(|i| self.element_at(i)).collect()
            }
            GroupKind::Lamplighter => {
                let mut r = 0;
                loop {
                    if self.ball_size(r)? >= n as u128 {
                        let mut b = self.ball(r)?;
                        b.truncate(n);
                        return Ok(b);
                    }
                    r += 1;
                }
            }
        }
    }

    /// Position of `g` in the canonical enumeration (0-based).
    pub fn index_of(&self, g: &GroupElement) -> Result<u64> {
        self.check(g)?;
        match g {
            GroupElement::Z(n) => Ok(if *n == 0 {
                0
            } else if *n < 0 {
                2 * n.unsigned_abs() - 1
            } else {
                2 * (*n as u64)
            }),
            GroupElement::Z2(x, y) => {
                let r = (x.unsigned_abs() + y.unsigned_abs()) as u128;
                if r == 0 {
                    return Ok(0);
                }
                let base = 2 * r * r - 2 * r + 1;
                let x = *x as i128;
                let ri = r as i128;
                let before = 2 * (x + ri) - if x > -ri { 1 } else { 0 };
                let within = if x.abs() == ri || *y < 0 { 0 } else { 1 };
                u64::try_from(base + before as u128 + within)
                    .map_err(|_| LabError::ResourceLimit("index exceeds u64".into()))
            }
            GroupElement::F2(w) => {
                let r = w.len() as u32;
                if r == 0 {
                    return Ok(0);
                }
                let base = 2u128 * 3u128.checked_pow(r - 1).ok_or_else(too_long)? - 1;
                let mut rank = w[0] as u128 * 3u128.pow(r - 1);
                for i in 1..w.len() {
                    let forbidden = w[i - 1] ^ 1;
                    let p = w[i] - if w[i] > forbidden { 1 } else { 0 };
                    rank += p as u128 * 3u128.pow(r - 1 - i as u32);
                }
                u64::try_from(base + rank).map_err(|_| too_long())
            }
            GroupElement::Lamp { .. } => {
                let idx = self.lamp_index();
                idx.index.get(g).copied().ok_or_else(|| {
                    LabError::ResourceLimit(format!(
                        "lamplighter element {g} lies outside the indexed ball of radius {}",
                        idx.sphere_sizes.len() - 1
                    ))
                })
            }
        }
    }

    /// Element at position `i` of the canonical enumeration.
    pub fn element_at(&self, i: u64) -> Result<GroupElement> {
        match self.kind {
            GroupKind::Z => Ok(GroupElement::Z(if i == 0 {
                0
            } else if i % 2 == 1 {
                -(((i + 1) / 2) as i64)
            } else {
                (i / 2) as i64
            })),
            GroupKind::Z2 => {
                if i == 0 {
                    return Ok(GroupElement::Z2(0, 0));
                }
                let i = i as u128;
                // smallest r with 2r²+2r+1 > i
                let mut r = (((i as f64) / 2.0).sqrt() as u128).saturating_sub(1);
                while 2 * r * r + 2 * r + 1 <= i {
                    r += 1;
                }
                let rank = (i - (2 * r * r - 2 * r + 1)) as i128;
                let ri = r as i128;
                if rank == 0 {
                    return Ok(GroupElement::Z2(-ri as i64, 0));
                }
                let x = -ri + 1 + (rank - 1) / 2;
                if x == ri {
                    return Ok(GroupElement::Z2(ri as i64, 0));
                }
                let rem = ri - x.abs();
                let y = if (rank - 1) % 2 == 0 { -rem } else { rem };
                Ok(GroupElement::Z2(x as i64, y as i64))
            }
            GroupKind::F2 => {
                if i == 0 {
                    return Ok(GroupElement::F2(Vec::new()));
                }
                let i = i as u128;
                let mut r = 1u32;
                while 2 * 3u128.pow(r) - 1 <= i {
                    r += 1;
                }
                let mut rank = i - (2 * 3u128.pow(r - 1) - 1);
                let mut w = Vec::with_capacity(r as usize);
                let p = 3u128.pow(r - 1);
                w.push((rank / p) as u8);
                rank %= p;
                for j in 1..r {
                    let p = 3u128.pow(r - 1 - j);
                    let digit = (rank / p) as u8;
                    rank %= p;
                    let forbidden = w[j as usize - 1] ^ 1;
                    w.push(if digit >= forbidden { digit + 1 } else { digit });
                }
                Ok(GroupElement::F2(w))
            }
            GroupKind::Lamplighter => {
                let idx = self.lamp_index();
                idx.elements.get(i as usize).cloned().ok_or_else(|| {
                    LabError::ResourceLimit(format!(
                        "lamplighter enumeration index {i} lies outside the indexed ball"
                    ))
                })
            }
        }
    }

    /// Parses a normal-form string produced by `Display`.
    pub fn parse_element(&self, s: &str) -> Result<GroupElement> {
        let s = s.trim();
        let bad = || LabError::Parse(format!("cannot parse {s:?} as a {} element", self.kind.name()));
        match self.kind {
            GroupKind::Z => s.parse::<i64>().map(GroupElement::Z).map_err(|_| bad()),
            GroupKind::Z2 => {
                let inner = s.strip_prefix('(').and_then(|t| t.strip_suffix(')')).ok_or_else(bad)?;
                let (a, b) = inner.split_once(',').ok_or_else(bad)?;
                let x = a.trim().parse().map_err(|_| bad())?;
                let y = b.trim().parse().map_err(|_| bad())?;
                Ok(GroupElement::Z2(x, y))
            }
            GroupKind::Lamplighter => {
                let (l, p) = s.split_once('@').ok_or_else(bad)?;
                let pos = p.trim().parse().map_err(|_| bad())?;
                let inner = l.trim().strip_prefix('[').and_then(|t| t.strip_suffix(']')).ok_or_else(bad)?;
                let mut lamps: Vec<i64> = Vec::new();
                if !inner.trim().is_empty() {
                    for part in inner.split(',') {
                        lamps.push(part.trim().parse().map_err(|_| bad())?);
                    }
                }
                lamps.sort_unstable();
                if lamps.windows(2).any(|w| w[0] == w[1]) {
                    return Err(bad());
                }
                Ok(GroupElement::Lamp { lamps, pos })
            }
            GroupKind::F2 => {
                if s == "e" {
                    return Ok(GroupElement::F2(Vec::new()));
                }
                let mut w: Vec<u8> = Vec::with_capacity(s.len());
                for c in s.chars() {
                    let sym = F2_LETTERS.iter().position(|&l| l == c).ok_or_else(bad)? as u8;
                    if w.last() == Some(&(sym ^ 1)) {
                        return Err(bad());
                    }
                    w.push(sym);
                }
                Ok(GroupElement::F2(w))
            }
        }
    }

    fn lamp_index(&self) -> &LampIndex {
        self.cache.lamp.get_or_init(|| {
            let layers = lamp_layers(LAMP_INDEX_RADIUS, self.ball_cap.min(4_000_000));
            let sphere_sizes = layers.iter().map(|l| l.len() as u64).collect();
            let elements: Vec<GroupElement> = layers.into_iter().flatten().collect();
            let index = elements.iter().enumerate().map(|(i, g)| (g.clone(), i as u64)).collect();
            LampIndex { elements, index, sphere_sizes }
        })
    }
}

fn too_long() -> LabError {
    LabError::ResourceLimit("word too long for 64-bit enumeration index".into())
}

fn push_z2_sphere(r: i64, out: &mut Vec<GroupElement>) {
    if r == 0 {
        out.push(GroupElement::Z2(0, 0));
        return;
    }
    for x in -r..=r {
        let rem = r - x.abs();
        if rem == 0 {
            out.push(GroupElement::Z2(x, 0));
        } else {
            out.push(GroupElement::Z2(x, -rem));
            out.push(GroupElement::Z2(x, rem));
        }
    }
}

/// Layered breadth-first search over the lamplighter Cayley graph. Returns the
/// canonically sorted spheres of every radius completed before the element
/// count would exceed `limit`.
fn lamp_layers(max_radius: u32, limit: usize) -> Vec<Vec<GroupElement>> {
    let gens = GroupModel::with_cap(GroupKind::Lamplighter, limit).generators();
    let start = GroupElement::Lamp { lamps: Vec::new(), pos: 0 };
    let mut seen: HashSet<GroupElement> = HashSet::from([start.clone()]);
    let mut spheres = vec![vec![start]];
    for _ in 0..max_radius {
        let last = spheres.last().unwrap();
        let mut next = Vec::new();
        for g in last {
            for s in &gens {
                let h = mul(g, s).expect("lamplighter product");
                if !seen.contains(&h) {
                    seen.insert(h.clone());
                    next.push(h);
                }
            }
        }
        if seen.len() > limit {
            break;
        }
        next.sort();
        spheres.push(next);
    }
    spheres
}

fn lamp_bfs_ball(radius: u32, cap: usize) -> Result<Vec<GroupElement>> {
    let layers = lamp_layers(radius, cap);
    if layers.len() <= radius as usize {
        return Err(LabError::ResourceLimit(format!(
            "lamplighter ball of radius {radius} exceeds cap {cap}"
        )));
    }
    Ok(layers.into_iter().flatten().collect())
}

fn lamp_sphere_sizes(radius: u32, cap: usize) -> Result<Vec<u64>> {
    let layers = lamp_layers(radius, cap);
    if layers.len() <= radius as usize {
        return Err(LabError::ResourceLimit(format!(
            "lamplighter ball of radius {radius} exceeds cap {cap}"
        )));
    }
    Ok(layers.iter().map(|l| l.len() as u64).collect())
}

/// Product of two elements of the same model.
pub fn mul(a: &GroupElement, b: &GroupElement) -> Result<GroupElement> {
    let overflow = || LabError::ResourceLimit("group coordinate overflow".into());
    match (a, b) {
        (GroupElement::Z(x), GroupElement::Z(y)) => x.checked_add(*y).map(GroupElement::Z).ok_or_else(overflow),
        (GroupElement::Z2(a1, a2), GroupElement::Z2(b1, b2)) => Ok(GroupElement::Z2(
            a1.checked_add(*b1).ok_or_else(overflow)?,
            a2.checked_add(*b2).ok_or_else(overflow)?,
        )),
        (GroupElement::Lamp { lamps: f, pos: p }, GroupElement::Lamp { lamps: g, pos: q }) => {
            let shifted: Vec<i64> = g.iter().map(|l| l + p).collect();
            Ok(GroupElement::Lamp { lamps: sym_diff(f, &shifted), pos: p.checked_add(*q).ok_or_else(overflow)? })
        }
        (GroupElement::F2(u), GroupElement::F2(v)) => {
            let mut w = u.clone();
            for &s in v {
                if w.last() == Some(&(s ^ 1)) {
                    w.pop();
                } else {
                    w.push(s);
                }
            }
            Ok(GroupElement::F2(w))
        }
        _ => Err(LabError::ModelMismatch { expected: a.kind().name(), found: b.kind().name() }),
    }
}

/// Group inverse.
pub fn inv(a: &GroupElement) -> GroupElement {
    match a {
        GroupElement::Z(n) => GroupElement::Z(-n),
        GroupElement::Z2(x, y) => GroupElement::Z2(-x, -y),
        GroupElement::Lamp { lamps, pos } => {
            GroupElement::Lamp { lamps: lamps.iter().map(|l| l - pos).collect(), pos: -pos }
        }
        GroupElement::F2(w) => GroupElement::F2(w.iter().rev().map(|s| s ^ 1).collect()),
    }
}

fn sym_diff(a: &[i64], b: &[i64]) -> Vec<i64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}
