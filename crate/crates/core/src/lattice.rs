//! Discrete geometry of `Z^d`: lattice points, closed euclidean balls,
//! their outer vertex boundaries, shells, and finite site sets.
//!
//! Balls are closed: `x ∈ B(c, ρ)` iff `‖x − c‖ ≤ ρ`. The boundary
//! `∂B(c, ρ)` is the set of sites outside the ball with a nearest neighbor
//! inside it.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};

use crate::error::{invalid, Error, Result};

/// Largest supported lattice dimension.
pub const MAX_DIM: usize = 4;

/// Relative slack applied to `ρ²` in closed-ball membership so that radii
/// obtained by real arithmetic (e.g. `r − (2k+1)δ`) do not drop sites lying
/// exactly on the sphere.
const BALL_SLACK: f64 = 1e-12;

pub(crate) fn check_dim(d: usize) -> Result<()> {
    if (2..=MAX_DIM).contains(&d) {
        Ok(())
    } else {
        Err(Error::UnsupportedDimension(d))
    }
}

/// A site of `Z^d`, `2 ≤ d ≤ 4`. Unused trailing coordinates are zero.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LatticePoint {
    dim: u8,
    coords: [i32; MAX_DIM],
}

impl LatticePoint {
    pub fn new(coords: &[i32]) -> Result<Self> {
        check_dim(coords.len())?;
        let mut c = [0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Self {
            dim: coords.len() as u8,
            coords: c,
        })
    }

    pub fn origin(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            dim: dim as u8,
            coords: [0; MAX_DIM],
        })
    }

    /// The point `(a, 0, …, 0)`.
    pub fn on_axis(dim: usize, a: i32) -> Result<Self> {
        let mut p = Self::origin(dim)?;
        p.coords[0] = a;
        Ok(p)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[i32] {
        &self.coords[..self.dim as usize]
    }

    #[inline]
    pub fn coord(&self, axis: usize) -> i32 {
        self.coords[axis]
    }

    #[inline]
    pub fn norm_sq(&self) -> i64 {
        self.coords().iter().map(|&c| (c as i64) * (c as i64)).sum()
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        (self.norm_sq() as f64).sqrt()
    }

    #[inline]
    pub fn dist_sq(&self, other: &LatticePoint) -> i64 {
        self.coords()
            .iter()
            .zip(other.coords())
            .map(|(&a, &b)| {
                let t = a as i64 - b as i64;
                t * t
            })
            .sum()
    }

    #[inline]
    pub fn dist(&self, other: &LatticePoint) -> f64 {
        (self.dist_sq(other) as f64).sqrt()
    }

    /// Squared euclidean distance to a real-valued point.
    #[inline]
    pub fn dist_sq_real(&self, center: &[f64; MAX_DIM]) -> f64 {
        (0..self.dim())
            .map(|i| {
                let t = self.coords[i] as f64 - center[i];
                t * t
            })
            .sum()
    }

    /// Nearest neighbor in direction `dir ∈ 0..2d`: axis `dir / 2`,
    /// `+1` for even `dir`, `−1` for odd.
    #[inline]
    pub fn neighbor(&self, dir: usize) -> LatticePoint {
        let mut p = *self;
        p.coords[dir >> 1] += if dir & 1 == 0 { 1 } else { -1 };
        p
    }

    #[inline]
    pub(crate) fn shift(&mut self, dir: usize) {
        self.coords[dir >> 1] += if dir & 1 == 0 { 1 } else { -1 };
    }

    pub fn neighbors(&self) -> impl Iterator<Item = LatticePoint> + '_ {
        (0..2 * self.dim()).map(move |dir| self.neighbor(dir))
    }

    pub fn offset(&self, delta: &LatticePoint) -> LatticePoint {
        let mut p = *self;
        for i in 0..self.dim() {
            p.coords[i] += delta.coords[i];
        }
        p
    }

    pub fn to_real(&self) -> [f64; MAX_DIM] {
        let mut c = [0.0; MAX_DIM];
        for (i, v) in self.coords().iter().enumerate() {
            c[i] = *v as f64;
        }
        c
    }

    pub(crate) fn expect_dim(&self, d: usize) -> Result<()> {
        if self.dim() == d {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: d,
                got: self.dim(),
            })
        }
    }
}

impl Serialize for LatticePoint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.coords().serialize(s)
    }
}

impl<'de> Deserialize<'de> for LatticePoint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let coords = Vec::<i32>::deserialize(d)?;
        LatticePoint::new(&coords).map_err(serde::de::Error::custom)
    }
}

impl fmt::Debug for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.coords())
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.coords().iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Anything that answers lattice membership queries.
pub trait Region: Sync {
    fn contains(&self, p: &LatticePoint) -> bool;
}

impl<R: Region + ?Sized> Region for &R {
    #[inline]
    fn contains(&self, p: &LatticePoint) -> bool {
        (**self).contains(p)
    }
}

/// Complement of a region in `Z^d`.
pub struct Complement<R>(pub R);

impl<R: Region> Region for Complement<R> {
    #[inline]
    fn contains(&self, p: &LatticePoint) -> bool {
        !self.0.contains(p)
    }
}

/// The empty region.
pub struct Nowhere;

impl Region for Nowhere {
    #[inline]
    fn contains(&self, _: &LatticePoint) -> bool {
        false
    }
}

/// Closed euclidean ball with a real-valued center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallSpec {
    dim: usize,
    center: [f64; MAX_DIM],
    radius: f64,
    radius_sq: f64,
}

impl BallSpec {
    pub fn new(center: &[f64], radius: f64) -> Result<Self> {
        check_dim(center.len())?;
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(invalid(format!("ball radius must be finite and ≥ 0, got {radius}")));
        }
        let mut c = [0.0; MAX_DIM];
        c[..center.len()].copy_from_slice(center);
        Ok(Self {
            dim: center.len(),
            center: c,
            radius,
            radius_sq: radius * radius * (1.0 + BALL_SLACK) + BALL_SLACK,
        })
    }

    pub fn at(center: &LatticePoint, radius: f64) -> Result<Self> {
        Self::new(&center.to_real()[..center.dim()], radius)
    }

    pub fn centered(dim: usize, radius: f64) -> Result<Self> {
        check_dim(dim)?;
        Self::new(&[0.0; MAX_DIM][..dim], radius)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn center(&self) -> &[f64] {
        &self.center[..self.dim]
    }

    /// Inclusive integer bounding box `[lo, hi]` per axis, widened by `pad`.
    fn bounding_box(&self, pad: i32) -> ([i32; MAX_DIM], [i32; MAX_DIM]) {
        let mut lo = [0; MAX_DIM];
        let mut hi = [0; MAX_DIM];
        for i in 0..self.dim {
            lo[i] = (self.center[i] - self.radius).floor() as i32 - pad;
            hi[i] = (self.center[i] + self.radius).ceil() as i32 + pad;
        }
        (lo, hi)
    }
}

impl Region for BallSpec {
    #[inline]
    fn contains(&self, p: &LatticePoint) -> bool {
        p.dist_sq_real(&self.center) <= self.radius_sq
    }
}

/// Ball centered at the origin with integer squared-norm membership; the
/// hot-loop form of `BallSpec::centered`.
#[derive(Clone, Copy, Debug)]
pub struct OriginBall {
    radius_sq: f64,
}

impl OriginBall {
    pub fn new(radius: f64) -> Self {
        Self {
            radius_sq: if radius < 0.0 {
                -1.0
            } else {
                radius * radius * (1.0 + BALL_SLACK) + BALL_SLACK
            },
        }
    }
}

impl Region for OriginBall {
    #[inline]
    fn contains(&self, p: &LatticePoint) -> bool {
        (p.norm_sq() as f64) <= self.radius_sq
    }
}

/// `∂B(0, ρ)` as a region, without enumerating it.
#[derive(Clone, Copy, Debug)]
pub struct OriginSphere {
    ball: OriginBall,
}

impl OriginSphere {
    pub fn new(radius: f64) -> Self {
        Self {
            ball: OriginBall::new(radius),
        }
    }
}

impl Region for OriginSphere {
    #[inline]
    fn contains(&self, p: &LatticePoint) -> bool {
        let n = p.norm_sq();
        if n as f64 <= self.ball.radius_sq {
            return false;
        }
        // The closest neighbor to the origin decreases the largest |coordinate|.
        let m = p.coords().iter().map(|c| c.unsigned_abs() as i64).max().unwrap_or(0);
        (n - 2 * m + 1) as f64 <= self.ball.radius_sq
    }
}

/// Visits every point of the inclusive box `[lo, hi]` in lexicographic order.
fn for_each_in_box(dim: usize, lo: &[i32; MAX_DIM], hi: &[i32; MAX_DIM], mut f: impl FnMut(LatticePoint)) {
    let mut p = LatticePoint {
        dim: dim as u8,
        coords: [0; MAX_DIM],
    };
    p.coords[..dim].copy_from_slice(&lo[..dim]);
    if (0..dim).any(|i| lo[i] > hi[i]) {
        return;
    }
    loop {
        f(p);
        let mut axis = dim;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            if p.coords[axis] < hi[axis] {
                p.coords[axis] += 1;
                break;
            }
            p.coords[axis] = lo[axis];
        }
    }
}

/// A finite set of distinct lattice sites of one dimension.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SiteSet {
    dim: usize,
    sites: BTreeSet<LatticePoint>,
}

impl SiteSet {
    pub fn new(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            dim,
            sites: BTreeSet::new(),
        })
    }

    pub fn from_points(dim: usize, points: impl IntoIterator<Item = LatticePoint>) -> Result<Self> {
        let mut s = Self::new(dim)?;
        for p in points {
            s.insert(p)?;
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Inserts `p`; returns whether it was new.
    pub fn insert(&mut self, p: LatticePoint) -> Result<bool> {
        p.expect_dim(self.dim)?;
        Ok(self.sites.insert(p))
    }

    pub fn remove(&mut self, p: &LatticePoint) -> bool {
        self.sites.remove(p)
    }

    pub fn contains(&self, p: &LatticePoint) -> bool {
        self.sites.contains(p)
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Sites in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = &LatticePoint> + '_ {
        self.sites.iter()
    }

    pub fn union(&self, other: &SiteSet) -> SiteSet {
        SiteSet {
            dim: self.dim,
            sites: self.sites.union(&other.sites).copied().collect(),
        }
    }

    pub fn difference(&self, other: &SiteSet) -> SiteSet {
        SiteSet {
            dim: self.dim,
            sites: self.sites.difference(&other.sites).copied().collect(),
        }
    }

    pub fn intersection(&self, other: &SiteSet) -> SiteSet {
        SiteSet {
            dim: self.dim,
            sites: self.sites.intersection(&other.sites).copied().collect(),
        }
    }

    pub fn filter(&self, mut keep: impl FnMut(&LatticePoint) -> bool) -> SiteSet {
        SiteSet {
            dim: self.dim,
            sites: self.sites.iter().filter(|p| keep(p)).copied().collect(),
        }
    }

    pub fn is_subset(&self, other: &SiteSet) -> bool {
        self.sites.is_subset(&other.sites)
    }

    pub fn is_disjoint(&self, other: &SiteSet) -> bool {
        self.sites.is_disjoint(&other.sites)
    }

    /// Dense bitmask over the bounding box, for hot loops.
    pub fn mask(&self) -> SiteMask {
        SiteMask::new(self)
    }

    /// Writes the plain-text form: a `d=<dim> n=<count>` header, then one
    /// line of space-separated coordinates per site.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "d={} n={}", self.dim, self.len())?;
        for p in &self.sites {
            writeln!(w, "{p}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_text(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let set = Self::read_lines(&mut lines)?;
        if let Some((i, l)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("trailing content {l:?}"),
            });
        }
        Ok(set)
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let text = std::io::read_to_string(r)?;
        Self::from_text(&text)
    }

    /// Parses a header and exactly `n` site lines from `lines`, leaving the
    /// iterator positioned after the last site.
    pub(crate) fn read_lines<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>) -> Result<Self> {
        let (hline, header) = lines.find(|(_, l)| !l.trim().is_empty()).ok_or(Error::Parse {
            line: 0,
            msg: "missing header".into(),
        })?;
        let (dim, n) = parse_header(header.trim()).ok_or_else(|| Error::Parse {
            line: hline + 1,
            msg: format!("expected `d=<dim> n=<count>`, got {header:?}"),
        })?;
        let mut set = Self::new(dim)?;
        let mut coords = Vec::with_capacity(dim);
        for _ in 0..n {
            let (i, line) = lines.next().ok_or(Error::Parse {
                line: hline + 1,
                msg: format!("header announced {n} sites, input ended early"),
            })?;
            coords.clear();
            for tok in line.split_whitespace() {
                coords.push(tok.parse::<i32>().map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?);
            }
            if coords.len() != dim {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected {dim} coordinates, got {}", coords.len()),
                });
            }
            if !set.insert(LatticePoint::new(&coords)?)? {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "duplicate site".into(),
                });
            }
        }
        Ok(set)
    }
}

fn parse_header(s: &str) -> Option<(usize, usize)> {
    let mut it = s.split_whitespace();
    let d = it.next()?.strip_prefix("d=")?.parse().ok()?;
    let n = it.next()?.strip_prefix("n=")?.parse().ok()?;
    if it.next().is_some() {
        return None;
    }
    Some((d, n))
}

impl Region for SiteSet {
    #[inline]
    fn contains(&self, p: &LatticePoint) -> bool {
        self.sites.contains(p)
    }
}

impl<'a> IntoIterator for &'a SiteSet {
    type Item = &'a LatticePoint;
    type IntoIter = std::collections::btree_set::Iter<'a, LatticePoint>;
    fn into_iter(self) -> Self::IntoIter {
        self.sites.iter()
    }
}

/// Row-major indexing of an inclusive integer box.
#[derive(Clone, Debug)]
pub(crate) struct BoxIndex {
    pub dim: usize,
    pub lo: [i32; MAX_DIM],
    pub hi: [i32; MAX_DIM],
    pub strides: [usize; MAX_DIM],
    pub len: usize,
}

impl BoxIndex {
    pub fn new(dim: usize, lo: [i32; MAX_DIM], hi: [i32; MAX_DIM]) -> Self {
        let mut strides = [0; MAX_DIM];
        let mut len = 1usize;
        for axis in (0..dim).rev() {
            strides[axis] = len;
            len *= (hi[axis] - lo[axis] + 1).max(0) as usize;
        }
        Self {
            dim,
            lo,
            hi,
            strides,
            len,
        }
    }

    #[inline]
    pub fn index(&self, p: &LatticePoint) -> Option<usize> {
        let mut idx = 0;
        for axis in 0..self.dim {
            let c = p.coords[axis];
            if c < self.lo[axis] || c > self.hi[axis] {
                return None;
            }
            idx += (c - self.lo[axis]) as usize * self.strides[axis];
        }
        Some(idx)
    }

    pub fn point(&self, mut idx: usize) -> LatticePoint {
        let mut p = LatticePoint {
            dim: self.dim as u8,
            coords: [0; MAX_DIM],
        };
        for axis in 0..self.dim {
            p.coords[axis] = self.lo[axis] + (idx / self.strides[axis]) as i32;
            idx %= self.strides[axis];
        }
        p
    }

    /// Signed index offsets of the `2d` nearest-neighbor moves, in
    /// `LatticePoint::neighbor` direction order.
    pub fn neighbor_offsets(&self) -> [isize; 2 * MAX_DIM] {
        let mut off = [0isize; 2 * MAX_DIM];
        for axis in 0..self.dim {
            off[2 * axis] = self.strides[axis] as isize;
            off[2 * axis + 1] = -(self.strides[axis] as isize);
        }
        off
    }

    /// Whether `p` lies on the outermost layer of the box.
    pub fn on_edge(&self, p: &LatticePoint) -> bool {
        (0..self.dim).any(|a| p.coords[a] == self.lo[a] || p.coords[a] == self.hi[a])
    }
}

/// Bitmask view of a `SiteSet` over its bounding box.
#[derive(Clone, Debug)]
pub struct SiteMask {
    index: BoxIndex,
    bits: Vec<u64>,
    count: usize,
}

impl SiteMask {
    fn new(set: &SiteSet) -> Self {
        let dim = set.dim;
        let (mut lo, mut hi) = ([0; MAX_DIM], [-1; MAX_DIM]);
        if let Some(first) = set.sites.iter().next() {
            lo = first.coords;
            hi = first.coords;
            for p in &set.sites {
                for a in 0..dim {
                    lo[a] = lo[a].min(p.coords[a]);
                    hi[a] = hi[a].max(p.coords[a]);
                }
            }
        }
        let index = BoxIndex::new(dim, lo, hi);
        let mut bits = vec![0u64; index.len.div_ceil(64)];
        for p in &set.sites {
            let i = index.index(p).expect("site inside its own bounding box");
            bits[i >> 6] |= 1 << (i & 63);
        }
        Self {
            index,
            bits,
            count: set.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

impl Region for SiteMask {
    #[inline]
    fn contains(&self, p: &LatticePoint) -> bool {
        match self.index.index(p) {
            Some(i) => self.bits[i >> 6] >> (i & 63) & 1 == 1,
            None => false,
        }
    }
}

/// `B(center, ρ) ∩ Z^d`.
pub fn ball_sites(spec: &BallSpec) -> SiteSet {
    let (lo, hi) = spec.bounding_box(0);
    let mut set = SiteSet {
        dim: spec.dim,
        sites: BTreeSet::new(),
    };
    for_each_in_box(spec.dim, &lo, &hi, |p| {
        if spec.contains(&p) {
            set.sites.insert(p);
        }
    });
    set
}

/// Same as [`ball_sites`], after checking the ball lives in dimension `d`.
pub fn ball_sites_in(d: usize, spec: &BallSpec) -> Result<SiteSet> {
    if spec.dim != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: spec.dim,
        });
    }
    Ok(ball_sites(spec))
}

/// `∂B(center, ρ) = {y ∉ B : ∃x ∈ B, ‖x − y‖ = 1}`.
pub fn boundary_sites(spec: &BallSpec) -> SiteSet {
    let (lo, hi) = spec.bounding_box(1);
    let mut set = SiteSet {
        dim: spec.dim,
        sites: BTreeSet::new(),
    };
    for_each_in_box(spec.dim, &lo, &hi, |p| {
        if !spec.contains(&p) && p.neighbors().any(|q| spec.contains(&q)) {
            set.sites.insert(p);
        }
    });
    set
}

/// `B(center, r_outer) \ B(center, r_inner)`.
pub fn shell_sites(center: &[f64], r_outer: f64, r_inner: f64) -> Result<SiteSet> {
    if !(r_outer > r_inner) || r_inner < 0.0 {
        return Err(invalid(format!(
            "shell requires r_outer > r_inner ≥ 0, got r_outer={r_outer}, r_inner={r_inner}"
        )));
    }
    let outer = BallSpec::new(center, r_outer)?;
    let inner = BallSpec::new(center, r_inner)?;
    let (lo, hi) = outer.bounding_box(0);
    let mut set = SiteSet {
        dim: outer.dim,
        sites: BTreeSet::new(),
    };
    for_each_in_box(outer.dim, &lo, &hi, |p| {
        if outer.contains(&p) && !inner.contains(&p) {
            set.sites.insert(p);
        }
    });
    Ok(set)
}

/// Shell centered at the origin of `Z^d`.
pub fn origin_shell(dim: usize, r_outer: f64, r_inner: f64) -> Result<SiteSet> {
    check_dim(dim)?;
    shell_sites(&[0.0; MAX_DIM][..dim], r_outer, r_inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(c: &[i32]) -> LatticePoint {
        LatticePoint::new(c).unwrap()
    }

    /// Brute-force enumeration over a generous box, independent of the
    /// bounding-box logic used by `ball_sites`.
    fn brute_ball(d: usize, rho: f64) -> usize {
        let m = rho.ceil() as i32 + 2;
        let mut n = 0;
        let lo = [-m; MAX_DIM];
        let hi = [m; MAX_DIM];
        for_each_in_box(d, &lo, &hi, |p| {
            if (p.norm_sq() as f64) <= rho * rho {
                n += 1;
            }
        });
        n
    }

    #[test]
    fn unit_ball_in_plane() {
        let b = ball_sites(&BallSpec::centered(2, 1.0).unwrap());
        let expected: SiteSet =
            SiteSet::from_points(2, [pt(&[0, 0]), pt(&[1, 0]), pt(&[-1, 0]), pt(&[0, 1]), pt(&[0, -1])]).unwrap();
        assert_eq!(b, expected);
    }

    #[test]
    fn radius_two_ball_has_13_sites() {
        assert_eq!(brute_ball(2, 2.0), 13);
        assert_eq!(ball_sites(&BallSpec::centered(2, 2.0).unwrap()).len(), 13);
    }

    #[test]
    fn zero_radius_is_center() {
        let b = ball_sites(&BallSpec::centered(3, 0.0).unwrap());
        assert_eq!(b.len(), 1);
        assert!(b.contains(&LatticePoint::origin(3).unwrap()));
    }

    #[test]
    fn ball_counts_match_brute_force() {
        for d in 2..=3 {
            for k in 0..=20 {
                let rho = k as f64 * 0.37;
                let b = ball_sites(&BallSpec::centered(d, rho).unwrap());
                assert_eq!(b.len(), brute_ball(d, rho), "d={d} rho={rho}");
            }
        }
    }

    #[test]
    fn boundary_of_unit_ball() {
        let b = boundary_sites(&BallSpec::centered(2, 1.0).unwrap());
        let expected = SiteSet::from_points(
            2,
            [
                pt(&[2, 0]),
                pt(&[-2, 0]),
                pt(&[0, 2]),
                pt(&[0, -2]),
                pt(&[1, 1]),
                pt(&[1, -1]),
                pt(&[-1, 1]),
                pt(&[-1, -1]),
            ],
        )
        .unwrap();
        assert_eq!(b, expected);
    }

    #[test]
    fn boundary_of_point_is_its_neighbors() {
        let c = pt(&[3, -2]);
        let b = boundary_sites(&BallSpec::at(&c, 0.0).unwrap());
        let expected = SiteSet::from_points(2, c.neighbors()).unwrap();
        assert_eq!(b, expected);
    }

    #[test]
    fn boundary_disjoint_from_ball() {
        for rho in [0.0, 0.5, 1.0, 2.5, 4.2, 7.0] {
            let spec = BallSpec::new(&[0.3, -0.6], rho).unwrap();
            assert!(boundary_sites(&spec).is_disjoint(&ball_sites(&spec)));
        }
    }

    #[test]
    fn shell_examples() {
        let s = origin_shell(2, 1.0, 0.0).unwrap();
        assert_eq!(s.len(), 4);
        assert!(!s.contains(&pt(&[0, 0])));
        let s = origin_shell(2, 2.0, 1.0).unwrap();
        assert_eq!(s.len(), 8);
        assert!(s.is_disjoint(&ball_sites(&BallSpec::centered(2, 1.0).unwrap())));
        assert!(origin_shell(2, 1.0, 1.0).is_err());
        assert!(origin_shell(2, 1.0, 2.0).is_err());
    }

    #[test]
    fn dimension_errors() {
        assert!(LatticePoint::new(&[1]).is_err());
        assert!(LatticePoint::new(&[1, 2, 3, 4, 5]).is_err());
        let mut s = SiteSet::new(2).unwrap();
        assert!(s.insert(pt(&[1, 2, 3])).is_err());
        assert!(ball_sites_in(3, &BallSpec::centered(2, 1.0).unwrap()).is_err());
        assert!(BallSpec::centered(2, -1.0).is_err());
    }

    #[test]
    fn text_format() {
        let b = ball_sites(&BallSpec::centered(2, 1.0).unwrap());
        let text = b.to_text();
        assert!(text.starts_with("d=2 n=5\n"));
        assert!(text.contains("\n-1 0\n"));
        assert_eq!(SiteSet::from_text(&text).unwrap(), b);
        assert!(SiteSet::from_text("d=2 n=2\n0 0\n").is_err());
        assert!(SiteSet::from_text("d=2 n=2\n0 0\n0 0\n").is_err());
        assert!(SiteSet::from_text("d=2 n=1\n0 0 1\n").is_err());
        assert!(SiteSet::from_text("n=1\n0 0\n").is_err());
    }

    #[test]
    fn mask_agrees_with_set() {
        let s = origin_shell(3, 4.0, 2.5).unwrap();
        let m = s.mask();
        assert_eq!(m.len(), s.len());
        let lo = [-6; MAX_DIM];
        let hi = [6; MAX_DIM];
        for_each_in_box(3, &lo, &hi, |p| assert_eq!(m.contains(&p), s.contains(&p)));
        let e = SiteSet::new(2).unwrap().mask();
        assert!(!e.contains(&pt(&[0, 0])));
    }

    #[test]
    fn box_index_roundtrip() {
        let bx = BoxIndex::new(3, [-2, 0, 5, 0], [1, 3, 6, 0]);
        assert_eq!(bx.len, 4 * 4 * 2);
        for i in 0..bx.len {
            assert_eq!(bx.index(&bx.point(i)), Some(i));
        }
        let off = bx.neighbor_offsets();
        let p = pt(&[0, 1, 5]);
        let i = bx.index(&p).unwrap();
        for (dir, o) in off.iter().enumerate().take(6) {
            let q = p.neighbor(dir);
            if let Some(j) = bx.index(&q) {
                assert_eq!(j as isize, i as isize + o);
            }
        }
    }

    #[test]
    fn origin_sphere_matches_boundary_sites() {
        for d in 2..=3 {
            for rho in [0.0, 1.0, 2.5, 4.0, 5.3, 7.0] {
                let spec = BallSpec::centered(d, rho).unwrap();
                let set = boundary_sites(&spec);
                let sphere = OriginSphere::new(rho);
                let r = rho.ceil() as i32 + 3;
                let lo = [-r; MAX_DIM];
                let hi = [r; MAX_DIM];
                for_each_in_box(d, &lo, &hi, |p| {
                    assert_eq!(sphere.contains(&p), set.contains(&p), "{p:?} rho={rho}")
                });
            }
        }
    }
}
