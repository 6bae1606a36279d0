//! Flashing explorers and the one-explorer shell-crossing experiment.
//!
//! The shell `B(0, r) \ B(0, r − h)` is cut into `n` subshells of width
//! `2δ = h / n`. On first arrival at `Σ_k = ∂B(0, r − (2k+1)δ)` the walk draws
//! a flash radius `R_k` and the flash site `Z_k` is where the same walk
//! first leaves `B(S(T(Σ_k)), R_k)`. The flashing explorer settles on the
//! first flash site resolved outside `V`.

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimate::{linear_fit, FitResult, McEstimate};
use crate::lattice::{
    ball_sites, boundary_sites, check_dim, BallSpec, Complement, LatticePoint, OriginBall, OriginSphere, Region,
    SiteSet,
};
use crate::walk::{race_with, RaceOutcome, SeedSpec, Walker, DEFAULT_STEP_CAP};

/// Subshell geometry for one `(r, h, n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlashingPlan {
    pub dim: usize,
    pub r: f64,
    pub h: f64,
    pub n: usize,
    pub delta: f64,
    /// Radii `r − (2k+1)δ` of the stopping spheres.
    pub sphere_radii: Vec<f64>,
    /// The flashing walk is abandoned once it leaves `B(0, escape_radius)`.
    pub escape_radius: f64,
}

impl FlashingPlan {
    /// Requires `0 < h < r/2`, `n ≥ 2` and `δ = h/(2n) ≥ 1`; the last two keep
    /// every `Σ_k` inside the shell and the spheres pairwise disjoint.
    pub fn new(dim: usize, r: f64, h: f64, n: usize) -> Result<Self> {
        check_dim(dim)?;
        check_shell(r, h)?;
        if n < 2 {
            return Err(invalid(format!(
                "subshell count must be ≥ 2 (so that 2δ < h), got n = {n}"
            )));
        }
        let delta = h / (2 * n) as f64;
        if delta < 1.0 {
            return Err(invalid(format!(
                "half-width δ = h/(2n) = {delta} is below one lattice unit; use n ≤ h/2"
            )));
        }
        let sphere_radii = (0..n).map(|k| r - (2 * k + 1) as f64 * delta).collect();
        Ok(Self {
            dim,
            r,
            h,
            n,
            delta,
            sphere_radii,
            escape_radius: 2.0 * r,
        })
    }

    pub fn with_escape_radius(mut self, radius: f64) -> Result<Self> {
        if !(radius > self.r) {
            return Err(invalid("escape radius must exceed r"));
        }
        self.escape_radius = radius;
        Ok(self)
    }

    /// `Σ_k` as an explicit site set.
    pub fn sigma(&self, k: usize) -> SiteSet {
        let spec = BallSpec::centered(self.dim, self.sphere_radii[k]).expect("validated plan");
        boundary_sites(&spec)
    }

    pub fn shell(&self) -> SiteSet {
        crate::lattice::origin_shell(self.dim, self.r, self.r - self.h).expect("validated plan")
    }
}

fn check_shell(r: f64, h: f64) -> Result<()> {
    if !(h > 0.0 && h < r / 2.0) || !r.is_finite() {
        return Err(invalid(format!(
            "shell crossing needs 0 < h < r/2, got r = {r}, h = {h}"
        )));
    }
    Ok(())
}

/// How the flashing explorer's walk ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlashFate {
    /// Settled on `Z_k ∉ V`.
    Settled(usize),
    /// Entered `B(0, r − h)` first.
    Crossed,
    /// Left `B(0, escape_radius)` first.
    Escaped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlashingTrace {
    /// `S(T(Σ_k))` for each sphere reached.
    pub arrival_sites: Vec<LatticePoint>,
    pub flash_radii: Vec<f64>,
    /// `Z_k`, or `None` if the walk stopped before leaving the flash ball.
    pub flash_sites: Vec<Option<LatticePoint>>,
    pub settled_at: Option<usize>,
    pub fate: FlashFate,
    /// The true explorer reached `B(0, r − h)` before leaving `V`.
    pub crossed: bool,
    pub steps: u64,
}

impl FlashingTrace {
    /// Some drawn flash site lies outside `v`.
    pub fn has_flash_outside<R: Region + ?Sized>(&self, v: &R) -> bool {
        self.flash_sites.iter().flatten().any(|z| !v.contains(z))
    }

    /// Whether the flashing explorer got past subshell `k`: it crossed, or
    /// `Z_0, …, Z_k` were all drawn inside `V`.
    pub fn passed(&self, k: usize) -> bool {
        self.fate == FlashFate::Crossed
            || (self.flash_sites.len() > k
                && self.settled_at.is_none_or(|s| s > k)
                && self.flash_sites[..=k].iter().all(|z| z.is_some()))
    }
}

/// Inverse CDF of the flash-radius density `d x^{d−1} / δ^d` on `[0, δ]`.
pub fn sample_flash_radius(delta: f64, d: usize, u: f64) -> f64 {
    delta * u.powf(1.0 / d as f64)
}

struct Pending {
    k: usize,
    center: LatticePoint,
    radius_sq: f64,
}

/// One flashing-explorer walk from `z`; `v` is the obstacle set.
pub fn run_flashing(z: LatticePoint, plan: &FlashingPlan, v: &SiteSet, seed: SeedSpec) -> Result<FlashingTrace> {
    check_crossing_input(plan.dim, plan.r, plan.h, v, &z)?;
    let mut walker = Walker::new(seed, plan.dim);
    run_flashing_with(&mut walker, z, plan, &v.mask(), DEFAULT_STEP_CAP)
}

/// [`run_flashing`] without input validation, on a caller-provided walker.
pub fn run_flashing_with<V: Region + ?Sized>(
    walker: &mut Walker,
    z: LatticePoint,
    plan: &FlashingPlan,
    v: &V,
    step_cap: u64,
) -> Result<FlashingTrace> {
    let inner = OriginBall::new(plan.r - plan.h);
    let outer = OriginBall::new(plan.escape_radius);
    let spheres: Vec<OriginSphere> = plan.sphere_radii.iter().map(|&rho| OriginSphere::new(rho)).collect();
    let mut trace = FlashingTrace {
        arrival_sites: Vec::new(),
        flash_radii: Vec::new(),
        flash_sites: Vec::new(),
        settled_at: None,
        fate: FlashFate::Escaped,
        crossed: false,
        steps: 0,
    };
    let mut race: Option<bool> = None;
    let mut fate: Option<FlashFate> = None;
    let mut pending: Vec<Pending> = Vec::new();
    let mut p = z;
    for step in 1..=step_cap {
        p.shift(walker.direction());
        let in_inner = inner.contains(&p);
        if race.is_none() {
            if in_inner {
                race = Some(true);
            } else if !v.contains(&p) {
                race = Some(false);
            }
        }
        if fate.is_none() {
            if in_inner {
                fate = Some(FlashFate::Crossed);
            } else {
                pending.retain(|f| {
                    if (p.dist_sq(&f.center) as f64) <= f.radius_sq {
                        return true;
                    }
                    trace.flash_sites[f.k] = Some(p);
                    if !v.contains(&p) && fate.is_none() {
                        fate = Some(FlashFate::Settled(f.k));
                    }
                    false
                });
                let k = trace.arrival_sites.len();
                if fate.is_none() {
                    if k < plan.n && spheres[k].contains(&p) {
                        let radius = sample_flash_radius(plan.delta, plan.dim, walker.uniform());
                        trace.arrival_sites.push(p);
                        trace.flash_radii.push(radius);
                        trace.flash_sites.push(None);
                        pending.push(Pending {
                            k,
                            center: p,
                            radius_sq: radius * radius,
                        });
                    } else if !outer.contains(&p) {
                        fate = Some(FlashFate::Escaped);
                    }
                }
            }
        }
        if let (Some(crossed), Some(f)) = (race, fate) {
            trace.crossed = crossed;
            trace.fate = f;
            if let FlashFate::Settled(k) = f {
                trace.settled_at = Some(k);
            }
            trace.steps = step;
            return Ok(trace);
        }
    }
    Err(Error::StepCap { cap: step_cap })
}

fn check_crossing_input(dim: usize, r: f64, h: f64, v: &SiteSet, z: &LatticePoint) -> Result<()> {
    check_shell(r, h)?;
    z.expect_dim(dim)?;
    if v.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: v.dim(),
        });
    }
    let outer = OriginBall::new(r);
    let inner = OriginBall::new(r - h);
    if let Some(p) = v.iter().find(|p| !outer.contains(p) || inner.contains(p)) {
        return Err(invalid(format!(
            "V must lie in the shell B(0, r) \\ B(0, r − h); {p} does not"
        )));
    }
    if !OriginSphere::new(r).contains(z) {
        return Err(invalid(format!("start {z} is not on the boundary of B(0, {r})")));
    }
    Ok(())
}

/// `x = (h^d / |V|)^{1/(d−1)}`, the abscissa of the crossing bound.
pub fn crossing_abscissa(d: usize, h: f64, vol_v: usize) -> f64 {
    (h.powi(d as i32) / vol_v as f64).powf(1.0 / (d - 1) as f64)
}

/// Monte Carlo estimate of `P_z(T(B(0, r − h)) < T(V^c))`. Trial `i` uses
/// stream `i` of `seed`.
pub fn crossing_mc(r: f64, h: f64, v: &SiteSet, z: LatticePoint, trials: u64, seed: SeedSpec) -> Result<McEstimate> {
    crossing_mc_capped(r, h, v, z, trials, seed, DEFAULT_STEP_CAP)
}

pub fn crossing_mc_capped(
    r: f64,
    h: f64,
    v: &SiteSet,
    z: LatticePoint,
    trials: u64,
    seed: SeedSpec,
    step_cap: u64,
) -> Result<McEstimate> {
    let d = z.dim();
    check_crossing_input(d, r, h, v, &z)?;
    if v.is_empty() && h < 1.0 {
        return Err(invalid("V is empty and h < 1: the crossing abscissa is undefined"));
    }
    if trials == 0 {
        return Err(invalid("trials must be ≥ 1"));
    }
    let mask = v.mask();
    let inner = OriginBall::new(r - h);
    let outside = Complement(&mask);
    let (hits, caps) = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut w = Walker::new(seed.stream(i), d);
            match race_with(&mut w, z, &inner, &outside, step_cap).0 {
                RaceOutcome::AFirst => (1u64, 0u64),
                RaceOutcome::BFirst => (0, 0),
                RaceOutcome::Cap => (0, 1),
            }
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let x = crossing_abscissa(d, h, v.len());
    Ok(McEstimate::from_counts(trials, hits, caps, seed.master_seed)?
        .with_meta("d", d)
        .with_meta("r", r)
        .with_meta("h", h)
        .with_meta("vol_V", v.len())
        .with_meta(
            "x",
            if x.is_finite() {
                serde_json::json!(x)
            } else {
                serde_json::json!("inf")
            },
        )
        .with_meta("z", z.to_string()))
}

pub const CROSSING_CSV_HEADER: &str = "d,r,h,vol_V,x,trials,hits,cap_count,p_hat,ci_low,ci_high,master_seed";

/// One CSV row for an estimate produced by [`crossing_mc`].
pub fn crossing_csv_row(est: &McEstimate) -> String {
    let m = |k: &str| match est.metadata.get(k) {
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(v) => v.to_string(),
        None => String::new(),
    };
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        m("d"),
        m("r"),
        m("h"),
        m("vol_V"),
        m("x"),
        est.trials,
        est.hits,
        est.cap_count,
        est.p_hat,
        est.ci_low,
        est.ci_high,
        est.master_seed
    )
}

/// `D_k = {y ∈ Σ_k : |B(y, δ) ∩ V| ≥ β δ^d}`.
pub fn dense_sites(sigma_k: &SiteSet, v: &SiteSet, delta: f64, beta: f64) -> Result<SiteSet> {
    if !(beta > 0.0) || !(delta > 0.0) {
        return Err(invalid("dense_sites needs β > 0 and δ > 0"));
    }
    let d = sigma_k.dim();
    let offsets: Vec<LatticePoint> = ball_sites(&BallSpec::centered(d, delta)?).iter().copied().collect();
    let mask = v.mask();
    let threshold = beta * delta.powi(d as i32);
    Ok(sigma_k.filter(|y| offsets.iter().filter(|o| mask.contains(&y.offset(o))).count() as f64 >= threshold))
}

/// Generic constants of the dense-neighborhood argument.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub beta: f64,
    pub kappa_fit: f64,
    pub c_fit: f64,
}

impl DenseParams {
    pub fn new(beta: f64, kappa_fit: f64, c_fit: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(invalid(format!("β must lie in (0, 1), got {beta}")));
        }
        Ok(Self { beta, kappa_fit, c_fit })
    }

    /// `β = 1/(8κ̂)` so that `4κβ < 1`, capped at 1/2.
    pub fn from_fit(kappa_fit: f64, c_fit: f64) -> Result<Self> {
        if !(kappa_fit > 0.0) {
            return Err(invalid("fitted κ must be positive"));
        }
        Self::new((1.0 / (8.0 * kappa_fit)).min(0.5), kappa_fit, c_fit)
    }
}

/// `(κ_d, C_d)` of the crossing bound `C_d exp(−κ_d x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub kappa_d: f64,
    pub c_d: f64,
}

impl BoundParams {
    pub fn new(kappa_d: f64, c_d: f64) -> Result<Self> {
        if !(kappa_d > 0.0) || !(c_d > 1.0) {
            return Err(invalid(format!(
                "bound constants need κ_d > 0 and C_d > 1, got κ_d = {kappa_d}, C_d = {c_d}"
            )));
        }
        Ok(Self { kappa_d, c_d })
    }

    /// Keeps the fitted `κ̂` and takes the smallest `C > 1` with
    /// `C e^{−κ̂ x} ≥ p̂` at every point.
    pub fn envelope(fit: &FitResult, points: &[FitPoint]) -> Result<Self> {
        let c_env = points
            .iter()
            .filter(|p| p.p_hat > 0.0)
            .map(|p| p.p_hat * (fit.kappa_hat * p.x).exp())
            .fold(0.0, f64::max);
        Self::new(fit.kappa_hat, c_env.max(1.0 + 1e-9))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub x: f64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl FitPoint {
    pub fn from_estimate(x: f64, est: &McEstimate) -> Self {
        Self {
            x,
            p_hat: est.p_hat,
            ci_low: est.ci_low,
            ci_high: est.ci_high,
        }
    }
}

/// What to do with `p̂ = 0` points, which have no logarithm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroPolicy {
    Exclude,
    /// Use the Wilson upper bound instead.
    UpperBound,
}

/// Least squares for `ln p = ln C − κ x`.
pub fn fit_bound(points: &[FitPoint], zeros: ZeroPolicy) -> Result<FitResult> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut substituted = Vec::new();
    let mut excluded = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if p.p_hat > 0.0 {
            xs.push(p.x);
            ys.push(p.p_hat.ln());
        } else if zeros == ZeroPolicy::UpperBound && p.ci_high > 0.0 {
            warn!("point {i} has p̂ = 0; fitting its upper bound {}", p.ci_high);
            xs.push(p.x);
            ys.push(p.ci_high.ln());
            substituted.push(i);
        } else {
            warn!("point {i} has p̂ = 0 and is excluded from the fit");
            excluded.push(i);
        }
    }
    if xs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "fit needs ≥ 3 usable points, got {}",
            xs.len()
        )));
    }
    let (a, b, r_squared) = linear_fit(&xs, &ys)?;
    let residuals = xs.iter().zip(&ys).map(|(x, y)| y - (a + b * x)).collect();
    Ok(FitResult {
        kappa_hat: -b,
        c_hat: a.exp(),
        residuals,
        r_squared,
        substituted,
        excluded,
    })
}

/// Exit-site law from the center of a flash ball.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlashUniformity {
    pub delta: f64,
    pub dim: usize,
    pub samples: u64,
    /// Sites `y` with `0 < ‖y‖ ≤ δ − 1`.
    pub region_sites: usize,
    pub min_freq: f64,
    pub max_freq: f64,
    pub ratio: f64,
    /// Sum of all per-site frequencies.
    pub total_frequency: f64,
}

/// Draws `R` with the flash density and records where a walk from the
/// center first leaves `B(0, R)`. The ratio is taken over the sites at
/// distance `≤ δ − 1`, the center excluded since it is never an exit site.
pub fn flash_uniformity_diagnostic(delta: f64, d: usize, samples: u64, seed: SeedSpec) -> Result<FlashUniformity> {
    check_dim(d)?;
    if !(delta >= 2.0) {
        return Err(invalid(format!("flash uniformity needs δ ≥ 2, got {delta}")));
    }
    if samples == 0 {
        return Err(invalid("samples must be ≥ 1"));
    }
    let origin = LatticePoint::origin(d)?;
    let counts = (0..samples)
        .into_par_iter()
        .fold(BTreeMap::<LatticePoint, u64>::new, |mut m, i| {
            let mut w = Walker::new(seed.stream(i), d);
            let radius = sample_flash_radius(delta, d, w.uniform());
            let rsq = radius * radius;
            let mut p = origin;
            loop {
                p.shift(w.direction());
                if p.norm_sq() as f64 > rsq {
                    break;
                }
            }
            *m.entry(p).or_insert(0) += 1;
            m
        })
        .reduce(BTreeMap::new, merge_counts);
    let region = ball_sites(&BallSpec::centered(d, delta - 1.0)?).filter(|p| p.norm_sq() > 0);
    let freq = |p: &LatticePoint| counts.get(p).copied().unwrap_or(0) as f64 / samples as f64;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for p in region.iter() {
        lo = lo.min(freq(p));
        hi = hi.max(freq(p));
    }
    Ok(FlashUniformity {
        delta,
        dim: d,
        samples,
        region_sites: region.len(),
        min_freq: lo,
        max_freq: hi,
        ratio: if lo > 0.0 { hi / lo } else { f64::INFINITY },
        total_frequency: counts.values().map(|&c| c as f64 / samples as f64).sum(),
    })
}

fn merge_counts(mut a: BTreeMap<LatticePoint, u64>, b: BTreeMap<LatticePoint, u64>) -> BTreeMap<LatticePoint, u64> {
    for (k, v) in b {
        *a.entry(k).or_insert(0) += v;
    }
    a
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartDensity {
    pub start: LatticePoint,
    pub hits: u64,
    pub escapes: u64,
    pub caps: u64,
    pub max_p: f64,
    pub argmax: LatticePoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingDensity {
    pub delta: f64,
    pub dim: usize,
    pub samples: u64,
    pub escape_radius: f64,
    pub per_start: Vec<StartDensity>,
    /// `max_y p̂(y)` over all starts.
    pub max_p: f64,
    /// `max p̂ · δ^{d−1}`.
    pub kappa_hat: f64,
}

impl HittingDensity {
    /// The same maximum normalized by `h^{d−1}` instead of `δ^{d−1}`.
    pub fn kappa_hat_h(&self, h: f64) -> f64 {
        self.max_p * h.powi(self.dim as i32 - 1)
    }
}

/// Hitting law of `sigma` from each start, conditional on hitting before
/// leaving the escape ball (default radius: largest norm among `sigma`
/// and the starts, plus `4δ`).
pub fn hitting_density_diagnostic(
    sigma: &SiteSet,
    delta: f64,
    starts: &SiteSet,
    samples: u64,
    seed: SeedSpec,
) -> Result<HittingDensity> {
    let reach = sigma.iter().chain(starts.iter()).map(|p| p.norm()).fold(0.0, f64::max);
    hitting_density_with(sigma, delta, starts, samples, seed, reach + 4.0 * delta)
}

pub fn hitting_density_with(
    sigma: &SiteSet,
    delta: f64,
    starts: &SiteSet,
    samples: u64,
    seed: SeedSpec,
    escape_radius: f64,
) -> Result<HittingDensity> {
    let d = sigma.dim();
    if sigma.is_empty() || starts.is_empty() || starts.dim() != d {
        return Err(invalid(
            "hitting density needs nonempty sigma and starts of one dimension",
        ));
    }
    if samples == 0 || !(delta > 0.0) {
        return Err(invalid("hitting density needs samples ≥ 1 and δ > 0"));
    }
    let mask = sigma.mask();
    let escape = OriginBall::new(escape_radius);
    let mut per_start = Vec::new();
    for (si, &start) in starts.iter().enumerate() {
        let sseed = seed.derive(si as u64);
        let (counts, escapes, caps) = (0..samples)
            .into_par_iter()
            .fold(
                || (BTreeMap::<LatticePoint, u64>::new(), 0u64, 0u64),
                |(mut m, e, c), i| {
                    let mut w = Walker::new(sseed.stream(i), d);
                    let mut p = start;
                    for _ in 0..DEFAULT_STEP_CAP {
                        p.shift(w.direction());
                        if mask.contains(&p) {
                            *m.entry(p).or_insert(0) += 1;
                            return (m, e, c);
                        }
                        if !escape.contains(&p) {
                            return (m, e + 1, c);
                        }
                    }
                    (m, e, c + 1)
                },
            )
            .reduce(
                || (BTreeMap::new(), 0, 0),
                |a, b| (merge_counts(a.0, b.0), a.1 + b.1, a.2 + b.2),
            );
        let hits: u64 = counts.values().sum();
        if hits == 0 {
            return Err(Error::InsufficientData(format!("no walk from {start} hit sigma")));
        }
        // Ties resolve to the lexicographically smallest site.
        let (argmax, top) = counts
            .iter()
            .fold((sigma.iter().next().copied().unwrap(), 0), |acc, (p, &c)| {
                if c > acc.1 {
                    (*p, c)
                } else {
                    acc
                }
            });
        per_start.push(StartDensity {
            start,
            hits,
            escapes,
            caps,
            max_p: top as f64 / hits as f64,
            argmax,
        });
    }
    let max_p = per_start.iter().map(|s| s.max_p).fold(0.0, f64::max);
    Ok(HittingDensity {
        delta,
        dim: d,
        samples,
        escape_radius,
        per_start,
        max_p,
        kappa_hat: max_p * delta.powi(d as i32 - 1),
    })
}

/// Passage statistics of the flashing explorer through subshell `k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShellPassage {
    pub k: usize,
    /// Traces that passed subshells `0..k`.
    pub entered: u64,
    pub passed: u64,
    /// `passed / entered`.
    pub conditional: f64,
    /// Fraction of all traces that passed subshells `0..=k`.
    pub joint: f64,
    /// Product of the conditional frequencies up to `k`.
    pub product: f64,
}

pub fn shell_passage(traces: &[FlashingTrace], n: usize) -> Vec<ShellPassage> {
    let total = traces.len() as u64;
    let mut out = Vec::with_capacity(n);
    let mut entered = total;
    let mut product = 1.0;
    for k in 0..n {
        let passed = traces.iter().filter(|t| t.passed(k)).count() as u64;
        let conditional = if entered > 0 {
            passed as f64 / entered as f64
        } else {
            0.0
        };
        product *= conditional;
        out.push(ShellPassage {
            k,
            entered,
            passed,
            conditional,
            joint: if total > 0 { passed as f64 / total as f64 } else { 0.0 },
            product,
        });
        entered = passed;
    }
    out
}

/// `c` in `Σ_k β |D_k| δ ≤ c |V|`, measured on one configuration.
pub fn overlap_constant(plan: &FlashingPlan, v: &SiteSet, beta: f64) -> Result<f64> {
    if v.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0usize;
    for k in 0..plan.n {
        total += dense_sites(&plan.sigma(k), v, plan.delta, beta)?.len();
    }
    Ok(beta * plan.delta * total as f64 / v.len() as f64)
}

/// Per-subshell factors `κβ + κ|D_k|/δ^{d−1}`, each capped at 1.
pub fn per_shell_factors(plan: &FlashingPlan, v: &SiteSet, params: &DenseParams) -> Result<Vec<f64>> {
    let norm = plan.delta.powi(plan.dim as i32 - 1);
    (0..plan.n)
        .map(|k| {
            let dk = dense_sites(&plan.sigma(k), v, plan.delta, params.beta)?.len();
            Ok((params.kappa_fit * params.beta + params.kappa_fit * dk as f64 / norm).min(1.0))
        })
        .collect()
}

pub fn product_bound(plan: &FlashingPlan, v: &SiteSet, params: &DenseParams) -> Result<f64> {
    Ok(per_shell_factors(plan, v, params)?.iter().product())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaChoice {
    /// Smallest `δ` with `δ^{d−1} ≥ 2c|V|/(β²h)`.
    pub delta_min: f64,
    pub n: usize,
    /// `h / (2n) ≥ delta_min`.
    pub delta: f64,
    /// `(1/2)^{h/(2δ)}`.
    pub bound: f64,
    /// `|V| ≤ β² h^d / (2^d c)`.
    pub volume_ok: bool,
}

/// Picks the subshell count from the `δ` rule. A volume above
/// `β² h^d / (2^d c)` only triggers a warning; `n` is then raised to 2.
pub fn select_delta(d: usize, h: f64, vol_v: usize, params: &DenseParams) -> Result<DeltaChoice> {
    check_dim(d)?;
    let beta = params.beta;
    let c = params.c_fit;
    let delta_min = (2.0 * c * vol_v as f64 / (beta * beta * h))
        .powf(1.0 / (d - 1) as f64)
        .max(1.0);
    let volume_ok = vol_v as f64 <= beta * beta * h.powi(d as i32) / (2f64.powi(d as i32) * c);
    if !volume_ok {
        warn!("|V| = {vol_v} exceeds β² h^d / (2^d c); the geometric bound is vacuous here");
    }
    let mut n = (h / (2.0 * delta_min)).floor() as usize;
    if n < 2 {
        warn!("δ rule gives n = {n} subshells; using n = 2");
        n = 2;
    }
    let delta = h / (2 * n) as f64;
    if delta < 1.0 {
        return Err(invalid(format!("h = {h} is too thin for two subshells of width ≥ 2")));
    }
    Ok(DeltaChoice {
        delta_min,
        n,
        delta,
        bound: 0.5f64.powf(h / (2.0 * delta)),
        volume_ok,
    })
}
