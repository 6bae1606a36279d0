//! Internal DLA clusters built from explorer configurations.
//!
//! Explorers run one at a time. An explorer settles on the first empty site
//! it occupies; a site that is empty when the explorer is placed on it
//! counts, so `|A(η)| = |η|` exactly.

use std::collections::BTreeMap;
use std::io::Write;

use log::warn;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimate::{chi_square_homogeneity, ChiSquareReport};
use crate::lattice::{check_dim, BoxIndex, LatticePoint, Region, SiteSet, MAX_DIM};
use crate::walk::{SeedSpec, Walker, DEFAULT_STEP_CAP};

/// A finite multiset of explorer start sites.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExplorerConfig {
    dim: usize,
    counts: BTreeMap<LatticePoint, u32>,
    total: usize,
}

impl ExplorerConfig {
    pub fn new(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            dim,
            counts: BTreeMap::new(),
            total: 0,
        })
    }

    pub fn from_counts(dim: usize, counts: impl IntoIterator<Item = (LatticePoint, u32)>) -> Result<Self> {
        let mut cfg = Self::new(dim)?;
        for (p, m) in counts {
            cfg.add(p, m)?;
        }
        Ok(cfg)
    }

    /// `n` explorers stacked at a single site.
    pub fn stacked(site: LatticePoint, n: u32) -> Result<Self> {
        Self::from_counts(site.dim(), [(site, n)])
    }

    pub fn add(&mut self, site: LatticePoint, multiplicity: u32) -> Result<()> {
        site.expect_dim(self.dim)?;
        if multiplicity == 0 {
            return Err(invalid("explorer multiplicities must be ≥ 1"));
        }
        *self.counts.entry(site).or_insert(0) += multiplicity;
        self.total += multiplicity as usize;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `|η|`.
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn counts(&self) -> &BTreeMap<LatticePoint, u32> {
        &self.counts
    }

    pub fn multiplicity(&self, p: &LatticePoint) -> u32 {
        self.counts.get(p).copied().unwrap_or(0)
    }

    /// Explorer start sites in canonical order: sites lexicographically,
    /// each repeated by its multiplicity. Explorer indices refer to this list.
    pub fn explorers(&self) -> Vec<LatticePoint> {
        self.counts
            .iter()
            .flat_map(|(p, &m)| std::iter::repeat_n(*p, m as usize))
            .collect()
    }

    /// `η ≺ other` in the pointwise order.
    pub fn is_dominated_by(&self, other: &ExplorerConfig) -> bool {
        self.counts.iter().all(|(p, &m)| other.multiplicity(p) >= m)
    }

    /// Lines of `x₁ … x_d multiplicity`.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        for (p, m) in &self.counts {
            writeln!(w, "{p} {m}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_text(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg: Option<Self> = None;
        for (i, line) in text.lines().enumerate() {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.is_empty() || toks[0].starts_with('#') {
                continue;
            }
            let nums = toks
                .iter()
                .map(|t| t.parse::<i64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            let (coords, m) = nums.split_at(nums.len() - 1);
            let coords: Vec<i32> = coords.iter().map(|&c| c as i32).collect();
            let p = LatticePoint::new(&coords).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            let cfg = cfg.get_or_insert(Self::new(p.dim())?);
            if m[0] < 1 || m[0] > u32::MAX as i64 {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("multiplicity {} out of range", m[0]),
                });
            }
            cfg.add(p, m[0] as u32).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        cfg.ok_or(Error::Parse {
            line: 0,
            msg: "empty explorer configuration".into(),
        })
    }
}

/// The order in which explorers are run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingPolicy {
    BySiteLex,
    BySiteReversed,
    Explicit(Vec<usize>),
    /// A fresh uniform permutation per build, derived from this seed and the
    /// build's own seed.
    Random(u64),
}

impl OrderingPolicy {
    pub fn order(&self, n: usize, build_seed: SeedSpec) -> Result<Vec<usize>> {
        match self {
            OrderingPolicy::BySiteLex => Ok((0..n).collect()),
            OrderingPolicy::BySiteReversed => Ok((0..n).rev().collect()),
            OrderingPolicy::Explicit(list) => {
                let mut seen = vec![false; n];
                if list.len() != n {
                    return Err(invalid(format!(
                        "explicit ordering has {} entries, expected {n}",
                        list.len()
                    )));
                }
                for &i in list {
                    if i >= n || std::mem::replace(&mut seen[i], true) {
                        return Err(invalid(
                            "explicit ordering is not a permutation of the explorer indices",
                        ));
                    }
                }
                Ok(list.clone())
            }
            OrderingPolicy::Random(seed) => {
                let mut v: Vec<usize> = (0..n).collect();
                let mut rng = SeedSpec::new(*seed, build_seed.stream_id)
                    .derive(build_seed.master_seed)
                    .rng();
                v.shuffle(&mut rng);
                Ok(v)
            }
        }
    }
}

/// `A(η)` with the settling history.
#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    pub occupied: SiteSet,
    /// `(site, explorer index)` in settling order.
    pub settle_order: Vec<(LatticePoint, usize)>,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    /// Sorted coordinate list used to compare cluster laws.
    pub fn shape(&self) -> Vec<LatticePoint> {
        self.occupied.iter().copied().collect()
    }

    /// Settle-order sidecar: `index x₁ … x_d` per line.
    pub fn settle_order_text(&self) -> String {
        let mut s = String::new();
        for (p, i) in &self.settle_order {
            s.push_str(&format!("{i} {p}\n"));
        }
        s
    }
}

/// How a freshly placed explorer treats its own start site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Launch {
    /// Settles immediately if its start is empty.
    SettleAtStart,
    /// Its start only counts once revisited at a time `n ≥ 1`.
    StepFirst,
}

#[derive(Clone, Copy, Debug)]
pub struct BuildOptions {
    pub step_cap: u64,
    pub launch: Launch,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            step_cap: DEFAULT_STEP_CAP,
            launch: Launch::SettleAtStart,
        }
    }
}

const EMPTY: u8 = 0;
const OCCUPIED: u8 = 1;
const EDGE: u8 = 2;

/// Occupancy grid over a growable box. The outermost layer holds `EDGE`
/// sentinels; a walker stepping onto one triggers growth.
pub(crate) struct Aggregate {
    index: BoxIndex,
    cells: Vec<u8>,
    offsets: [isize; 2 * MAX_DIM],
    count: usize,
}

pub(crate) enum ExplorerEnd {
    Settled(LatticePoint),
    Stopped(LatticePoint),
}

impl Aggregate {
    /// Grid covering `[-half, half]^d` plus the sentinel layer.
    pub fn new(dim: usize, half: i32) -> Self {
        let half = half.max(2) + 1;
        let mut lo = [0; MAX_DIM];
        let mut hi = [0; MAX_DIM];
        for a in 0..dim {
            lo[a] = -half;
            hi[a] = half;
        }
        let mut agg = Self {
            index: BoxIndex::new(dim, lo, hi),
            cells: Vec::new(),
            offsets: [0; 2 * MAX_DIM],
            count: 0,
        };
        agg.rebuild(std::iter::empty());
        agg
    }

    pub fn for_config(eta: &ExplorerConfig) -> Self {
        let reach = eta
            .counts()
            .keys()
            .flat_map(|p| p.coords().iter().map(|c| c.abs()))
            .max()
            .unwrap_or(0);
        let spread = ((eta.total() as f64).powf(1.0 / eta.dim() as f64) * 1.2).ceil() as i32;
        Self::new(eta.dim(), reach + spread + 2)
    }

    fn rebuild(&mut self, occupied: impl Iterator<Item = LatticePoint>) {
        self.cells = vec![EMPTY; self.index.len];
        self.offsets = self.index.neighbor_offsets();
        for i in 0..self.index.len {
            if self.index.on_edge(&self.index.point(i)) {
                self.cells[i] = EDGE;
            }
        }
        for p in occupied {
            let i = self.index.index(&p).expect("grown box contains old sites");
            self.cells[i] = OCCUPIED;
        }
    }

    fn occupied_sites(&self) -> Vec<LatticePoint> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == OCCUPIED)
            .map(|(i, _)| self.index.point(i))
            .collect()
    }

    /// Grows the box so that `p` lies strictly inside the sentinel layer.
    fn ensure_interior(&mut self, p: &LatticePoint) {
        let dim = self.index.dim;
        if (0..dim).all(|a| p.coord(a) > self.index.lo[a] && p.coord(a) < self.index.hi[a]) {
            return;
        }
        let old = self.occupied_sites();
        let mut lo = self.index.lo;
        let mut hi = self.index.hi;
        for a in 0..dim {
            let grow = ((hi[a] - lo[a]) / 2).max(8);
            lo[a] = lo[a].min(p.coord(a) - 1) - grow;
            hi[a] = hi[a].max(p.coord(a) + 1) + grow;
        }
        self.index = BoxIndex::new(dim, lo, hi);
        self.rebuild(old.into_iter());
    }

    #[inline]
    pub fn is_occupied(&self, p: &LatticePoint) -> bool {
        matches!(self.index.index(p), Some(i) if self.cells[i] == OCCUPIED)
    }

    fn occupy(&mut self, p: &LatticePoint) {
        self.ensure_interior(p);
        let i = self.index.index(p).expect("interior site");
        debug_assert_eq!(self.cells[i], EMPTY);
        self.cells[i] = OCCUPIED;
        self.count += 1;
    }

    /// Runs one explorer from `start` until it settles on an empty site
    /// accepted by `may_settle(site)`.
    pub fn run_explorer<F>(
        &mut self,
        walker: &mut Walker,
        start: LatticePoint,
        launch: Launch,
        step_cap: u64,
        may_settle: F,
    ) -> Result<LatticePoint>
    where
        F: Fn(&LatticePoint) -> bool,
    {
        self.ensure_interior(&start);
        if launch == Launch::SettleAtStart && !self.is_occupied(&start) && may_settle(&start) {
            self.occupy(&start);
            return Ok(start);
        }
        let mut idx = self.index.index(&start).expect("interior start");
        let mut steps = 0u64;
        loop {
            if steps == step_cap {
                return Err(Error::StepCap { cap: step_cap });
            }
            steps += 1;
            idx = idx.wrapping_add_signed(self.offsets[walker.direction()]);
            let c = self.cells[idx];
            if c == OCCUPIED {
                continue;
            }
            let p = self.index.point(idx);
            if c == EDGE {
                self.ensure_interior(&p);
                idx = self.index.index(&p).expect("interior after growth");
            }
            if may_settle(&p) {
                self.occupy(&p);
                return Ok(p);
            }
        }
    }

    /// Runs one explorer until it settles or first occupies a site of
    /// `stop` (checked before settling, and at the start site). The flag
    /// reports whether the walk visited `watch`.
    pub fn run_explorer_until<S: Region + ?Sized, W: Region + ?Sized>(
        &mut self,
        walker: &mut Walker,
        start: LatticePoint,
        launch: Launch,
        step_cap: u64,
        stop: &S,
        watch: &W,
    ) -> Result<(ExplorerEnd, bool)> {
        self.ensure_interior(&start);
        let mut seen = watch.contains(&start);
        if stop.contains(&start) {
            return Ok((ExplorerEnd::Stopped(start), seen));
        }
        if launch == Launch::SettleAtStart && !self.is_occupied(&start) {
            self.occupy(&start);
            return Ok((ExplorerEnd::Settled(start), seen));
        }
        let mut p = start;
        let mut idx = self.index.index(&p).expect("interior start");
        for _ in 0..step_cap {
            let dir = walker.direction();
            p.shift(dir);
            idx = idx.wrapping_add_signed(self.offsets[dir]);
            seen |= watch.contains(&p);
            if stop.contains(&p) {
                return Ok((ExplorerEnd::Stopped(p), seen));
            }
            if self.cells[idx] != OCCUPIED {
                self.occupy(&p);
                return Ok((ExplorerEnd::Settled(p), seen));
            }
        }
        Err(Error::StepCap { cap: step_cap })
    }

    pub fn to_site_set(&self) -> SiteSet {
        SiteSet::from_points(self.index.dim, self.occupied_sites()).expect("consistent dimension")
    }

    /// `(inner², outer²)` squared radii; see [`fluctuation_run`].
    fn radii_sq(&self) -> (i64, i64) {
        let mut outer = 0i64;
        let mut min_empty = i64::MAX;
        for (i, &c) in self.cells.iter().enumerate() {
            if c != OCCUPIED {
                continue;
            }
            let p = self.index.point(i);
            outer = outer.max(p.norm_sq());
            for dir in 0..2 * self.index.dim {
                let j = i.wrapping_add_signed(self.offsets[dir]);
                if self.cells[j] != OCCUPIED {
                    min_empty = min_empty.min(self.index.point(j).norm_sq());
                }
            }
        }
        let mut inner = 0i64;
        for (i, &c) in self.cells.iter().enumerate() {
            if c == OCCUPIED {
                let n = self.index.point(i).norm_sq();
                if n < min_empty {
                    inner = inner.max(n);
                }
            }
        }
        (inner, outer)
    }
}

/// Builds `A(η)` running explorers in the given order.
pub fn build_cluster(eta: &ExplorerConfig, order: &OrderingPolicy, seed: SeedSpec) -> Result<Cluster> {
    build_cluster_with(eta, order, seed, &BuildOptions::default(), |_, _| true)
}

/// [`build_cluster`] with explicit options and a settling filter
/// `may_settle(site, run_position)`; the standard rule accepts every empty
/// site.
pub fn build_cluster_with<F>(
    eta: &ExplorerConfig,
    order: &OrderingPolicy,
    seed: SeedSpec,
    opts: &BuildOptions,
    may_settle: F,
) -> Result<Cluster>
where
    F: Fn(&LatticePoint, usize) -> bool,
{
    if eta.total() == 0 {
        return Err(invalid("explorer configuration is empty"));
    }
    let starts = eta.explorers();
    let perm = order.order(starts.len(), seed)?;
    let mut agg = Aggregate::for_config(eta);
    let mut walker = Walker::new(seed, eta.dim());
    let mut settle_order = Vec::with_capacity(starts.len());
    for (run, &i) in perm.iter().enumerate() {
        let site = agg.run_explorer(&mut walker, starts[i], opts.launch, opts.step_cap, |p| {
            may_settle(p, run)
        })?;
        settle_order.push((site, i));
    }
    Ok(Cluster {
        occupied: agg.to_site_set(),
        settle_order,
    })
}

/// Whether the origin belongs to `A(η)`. Warns when `η` has explorers
/// inside `B(0, 2r)`.
pub fn covers_origin(eta: &ExplorerConfig, r: f64, seed: SeedSpec) -> Result<bool> {
    if let Some(p) = eta.counts().keys().find(|p| p.norm() <= 2.0 * r) {
        warn!("explorer at {p} lies inside B(0, 2r) with r = {r}");
    }
    let c = build_cluster(eta, &OrderingPolicy::BySiteLex, seed)?;
    Ok(c.occupied.contains(&LatticePoint::origin(eta.dim())?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fluctuation {
    pub n: usize,
    /// Largest `ρ` (a realized site norm) with `B(0, ρ) ⊆ A`.
    pub inner_radius: f64,
    /// `max ‖x‖` over `x ∈ A`.
    pub outer_radius: f64,
}

impl Fluctuation {
    /// Radius of the ball with the cluster's volume, `(n / ω_d)^{1/d}`.
    pub fn volume_radius(&self, dim: usize) -> f64 {
        let omega = match dim {
            2 => std::f64::consts::PI,
            3 => 4.0 / 3.0 * std::f64::consts::PI,
            4 => std::f64::consts::PI.powi(2) / 2.0,
            _ => unreachable!("dimension checked"),
        };
        (self.n as f64 / omega).powf(1.0 / dim as f64)
    }
}

/// `A(n δ₀)`: `n` explorers from the origin; returns inner and outer radii.
pub fn fluctuation_run(dim: usize, n: usize, seed: SeedSpec) -> Result<Fluctuation> {
    check_dim(dim)?;
    if n == 0 {
        return Err(invalid("fluctuation run needs n ≥ 1"));
    }
    let origin = LatticePoint::origin(dim)?;
    let radius = (n as f64).powf(1.0 / dim as f64);
    let mut agg = Aggregate::new(dim, (radius * 0.75).ceil() as i32 + 8);
    let mut walker = Walker::new(seed, dim);
    for _ in 0..n {
        agg.run_explorer(&mut walker, origin, Launch::SettleAtStart, DEFAULT_STEP_CAP, |_| true)?;
    }
    let (inner, outer) = agg.radii_sq();
    Ok(Fluctuation {
        n,
        inner_radius: (inner as f64).sqrt(),
        outer_radius: (outer as f64).sqrt(),
    })
}

pub type ShapeCounts = BTreeMap<Vec<LatticePoint>, u64>;

/// Empirical cluster-shape law over `trials` builds (trial `i` uses stream
/// `i` of `seed`).
pub fn shape_counts<F>(
    eta: &ExplorerConfig,
    order: &OrderingPolicy,
    trials: u64,
    seed: SeedSpec,
    may_settle: F,
) -> Result<ShapeCounts>
where
    F: Fn(&LatticePoint, usize) -> bool + Sync,
{
    let opts = BuildOptions::default();
    let shapes: Vec<Vec<LatticePoint>> = (0..trials)
        .into_par_iter()
        .map(|i| build_cluster_with(eta, order, seed.stream(i), &opts, &may_settle).map(|c| c.shape()))
        .collect::<Result<_>>()?;
    let mut counts = ShapeCounts::new();
    for s in shapes {
        *counts.entry(s).or_insert(0) += 1;
    }
    Ok(counts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbelianReport {
    pub trials: u64,
    pub chi_square: ChiSquareReport,
}

/// Chi-square homogeneity of the cluster law under two orderings.
pub fn abelian_test(
    eta: &ExplorerConfig,
    order_1: &OrderingPolicy,
    order_2: &OrderingPolicy,
    trials: u64,
    seed: SeedSpec,
) -> Result<AbelianReport> {
    abelian_test_with(eta, order_1, order_2, trials, seed, |_, _| true, |_, _| true)
}

/// [`abelian_test`] with a settling filter per side.
#[allow(clippy::too_many_arguments)]
pub fn abelian_test_with<F1, F2>(
    eta: &ExplorerConfig,
    order_1: &OrderingPolicy,
    order_2: &OrderingPolicy,
    trials: u64,
    seed: SeedSpec,
    rule_1: F1,
    rule_2: F2,
) -> Result<AbelianReport>
where
    F1: Fn(&LatticePoint, usize) -> bool + Sync,
    F2: Fn(&LatticePoint, usize) -> bool + Sync,
{
    let a = shape_counts(eta, order_1, trials, seed.derive(1), rule_1)?;
    let b = shape_counts(eta, order_2, trials, seed.derive(2), rule_2)?;
    let chi_square = chi_square_homogeneity(&a, &b)?;
    Ok(AbelianReport { trials, chi_square })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::chi_square_goodness_of_fit;
    use crate::oracle::exit_distribution;

    fn pt(c: &[i32]) -> LatticePoint {
        LatticePoint::new(c).unwrap()
    }

    #[test]
    fn single_explorer_settles_at_start() {
        let x = pt(&[5, -3]);
        let eta = ExplorerConfig::stacked(x, 1).unwrap();
        let c = build_cluster(&eta, &OrderingPolicy::BySiteLex, SeedSpec::new(0, 0)).unwrap();
        assert_eq!(c.shape(), vec![x]);
        assert_eq!(c.settle_order, vec![(x, 0)]);
    }

    #[test]
    fn two_at_origin_uniform_neighbor() {
        let eta = ExplorerConfig::stacked(pt(&[0, 0]), 2).unwrap();
        let trials = 100_000u64;
        let counts = shape_counts(&eta, &OrderingPolicy::BySiteLex, trials, SeedSpec::new(3, 0), |_, _| {
            true
        })
        .unwrap();
        assert_eq!(counts.len(), 4);
        let p = 0.25;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for (shape, &c) in &counts {
            assert_eq!(shape.len(), 2);
            assert!(shape.contains(&pt(&[0, 0])));
            assert!((c as f64 - trials as f64 * p).abs() < 4.0 * sigma);
        }
    }

    /// Exact law of `A(3 δ₀)` in d = 2: the second explorer settles on a
    /// uniform neighbor N, the third exits `{0, N}` with the harmonic measure
    /// from the origin, computed by the linear-solve oracle.
    fn exact_three_at_origin() -> BTreeMap<Vec<LatticePoint>, f64> {
        let o = pt(&[0, 0]);
        let mut law = BTreeMap::new();
        for n in o.neighbors() {
            let inside = SiteSet::from_points(2, [o, n]).unwrap();
            for (y, p) in exit_distribution(&inside, o).unwrap() {
                let mut shape = vec![o, n, y];
                shape.sort();
                *law.entry(shape).or_insert(0.0) += 0.25 * p;
            }
        }
        law
    }

    #[test]
    fn three_at_origin_matches_exact_law() {
        let law = exact_three_at_origin();
        let total: f64 = law.values().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let eta = ExplorerConfig::stacked(pt(&[0, 0]), 3).unwrap();
        let counts = shape_counts(
            &eta,
            &OrderingPolicy::BySiteLex,
            100_000,
            SeedSpec::new(17, 0),
            |_, _| true,
        )
        .unwrap();
        assert!(counts.keys().all(|k| law.contains_key(k)));
        let observed: Vec<u64> = law.keys().map(|k| counts.get(k).copied().unwrap_or(0)).collect();
        let probs: Vec<f64> = law.values().copied().collect();
        let r = chi_square_goodness_of_fit(&observed, &probs).unwrap();
        assert!(r.p_value > 0.01, "{r:?}");
    }

    #[test]
    fn cluster_size_and_connectivity() {
        for seed in 0..5 {
            let eta = ExplorerConfig::stacked(pt(&[0, 0, 0]), 300).unwrap();
            let c = build_cluster(&eta, &OrderingPolicy::BySiteLex, SeedSpec::new(seed, 0)).unwrap();
            assert_eq!(c.len(), 300);
            // Connected: flood fill from the origin.
            let mut seen = SiteSet::new(3).unwrap();
            let mut stack = vec![pt(&[0, 0, 0])];
            while let Some(p) = stack.pop() {
                if c.occupied.contains(&p) && seen.insert(p).unwrap() {
                    stack.extend(p.neighbors());
                }
            }
            assert_eq!(seen.len(), 300);
        }
    }

    #[test]
    fn general_configuration_size() {
        let eta = ExplorerConfig::from_counts(2, [(pt(&[10, 0]), 5), (pt(&[-7, 3]), 4), (pt(&[0, 0]), 1)]).unwrap();
        let c = build_cluster(&eta, &OrderingPolicy::Random(5), SeedSpec::new(1, 2)).unwrap();
        assert_eq!(c.len(), 10);
        let mut idx: Vec<usize> = c.settle_order.iter().map(|(_, i)| *i).collect();
        idx.sort();
        assert_eq!(idx, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn grid_grows_for_wandering_explorers() {
        // A filter that refuses everything near the start forces long walks
        // over empty sites and several box growths.
        let eta = ExplorerConfig::stacked(pt(&[0, 0]), 3).unwrap();
        let c = build_cluster_with(
            &eta,
            &OrderingPolicy::BySiteLex,
            SeedSpec::new(4, 0),
            &BuildOptions::default(),
            |p, _| p.norm() > 30.0,
        )
        .unwrap();
        assert_eq!(c.len(), 3);
        assert!(c.occupied.iter().all(|p| p.norm() > 30.0));
    }

    #[test]
    fn covers_origin_examples() {
        let r = 4.0;
        let eta = ExplorerConfig::stacked(pt(&[8, 0]), 1).unwrap();
        assert!(!covers_origin(&eta, r, SeedSpec::new(0, 0)).unwrap());
        let eta = ExplorerConfig::from_counts(2, [(pt(&[0, 0]), 1), (pt(&[9, 0]), 2)]).unwrap();
        assert!(covers_origin(&eta, r, SeedSpec::new(0, 0)).unwrap());
    }

    #[test]
    fn fluctuation_small_cases() {
        let f = fluctuation_run(2, 1, SeedSpec::new(0, 0)).unwrap();
        assert_eq!((f.inner_radius, f.outer_radius), (0.0, 0.0));
        for s in 0..50 {
            let f = fluctuation_run(2, 5, SeedSpec::new(s, 0)).unwrap();
            assert!(f.inner_radius <= f.outer_radius);
            assert!(f.outer_radius >= 1.0);
        }
        let f = fluctuation_run(3, 2000, SeedSpec::new(1, 0)).unwrap();
        assert!(f.inner_radius <= f.outer_radius);
        assert!(f.inner_radius >= 1.0);
    }

    #[test]
    fn radii_agree_with_cluster_definition() {
        let eta = ExplorerConfig::stacked(pt(&[0, 0]), 400).unwrap();
        let seed = SeedSpec::new(9, 0);
        let c = build_cluster(&eta, &OrderingPolicy::BySiteLex, seed).unwrap();
        let f = fluctuation_run(2, 400, seed).unwrap();
        let outer = c.occupied.iter().map(|p| p.norm()).fold(0.0, f64::max);
        assert_eq!(outer, f.outer_radius);
        // Largest realized norm ρ with B(0, ρ) ⊆ A, by direct search.
        let mut norms: Vec<i64> = c.occupied.iter().map(|p| p.norm_sq()).collect();
        norms.sort();
        norms.dedup();
        let mut inner = 0;
        for n in norms {
            let ball = crate::lattice::ball_sites(&crate::lattice::BallSpec::centered(2, (n as f64).sqrt()).unwrap());
            if ball.is_subset(&c.occupied) {
                inner = n;
            } else {
                break;
            }
        }
        assert_eq!((inner as f64).sqrt(), f.inner_radius);
    }

    #[test]
    fn orderings() {
        let s = SeedSpec::new(0, 0);
        assert_eq!(OrderingPolicy::BySiteReversed.order(3, s).unwrap(), vec![2, 1, 0]);
        assert!(OrderingPolicy::Explicit(vec![0, 0, 1]).order(3, s).is_err());
        assert!(OrderingPolicy::Explicit(vec![0, 1]).order(3, s).is_err());
        let a = OrderingPolicy::Random(1).order(20, s).unwrap();
        let b = OrderingPolicy::Random(1).order(20, s.stream(1)).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, OrderingPolicy::Random(1).order(20, s).unwrap());
    }

    #[test]
    fn config_text() {
        let eta = ExplorerConfig::from_counts(2, [(pt(&[0, 0]), 2), (pt(&[1, 0]), 1)]).unwrap();
        let t = eta.to_text();
        assert_eq!(t, "0 0 2\n1 0 1\n");
        assert_eq!(ExplorerConfig::from_text(&t).unwrap(), eta);
        assert!(ExplorerConfig::from_text("0 0 0\n").is_err());
        assert!(ExplorerConfig::from_text("").is_err());
        assert!(ExplorerConfig::from_text("0 0 1\n0 0 0 1\n").is_err());
        assert!(ExplorerConfig::stacked(pt(&[0, 0]), 0).is_err());
    }

    #[test]
    fn abelian_single_explorer() {
        let eta = ExplorerConfig::stacked(pt(&[0, 0]), 1).unwrap();
        let r = abelian_test(
            &eta,
            &OrderingPolicy::BySiteLex,
            &OrderingPolicy::BySiteReversed,
            100,
            SeedSpec::new(0, 0),
        )
        .unwrap();
        assert_eq!(r.chi_square.statistic, 0.0);
        assert_eq!(r.chi_square.p_value, 1.0);
    }

    #[test]
    fn abelian_insufficient_trials() {
        let eta = ExplorerConfig::stacked(pt(&[0, 0]), 4).unwrap();
        let r = abelian_test(
            &eta,
            &OrderingPolicy::BySiteLex,
            &OrderingPolicy::BySiteReversed,
            20,
            SeedSpec::new(0, 0),
        );
        assert!(matches!(r, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn step_cap_aborts() {
        let eta = ExplorerConfig::stacked(pt(&[0, 0]), 2).unwrap();
        let opts = BuildOptions {
            step_cap: 10,
            launch: Launch::SettleAtStart,
        };
        let r = build_cluster_with(
            &eta,
            &OrderingPolicy::BySiteLex,
            SeedSpec::new(0, 0),
            &opts,
            |_, run| run == 0,
        );
        assert!(matches!(r, Err(Error::StepCap { cap: 10 })));
    }
}
