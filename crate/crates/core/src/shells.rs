//! Poisson clouds of explorers crossing shells of adaptive random width.
//!
//! `K ~ Poisson(λ₀)` explorers start on `∂B(0, 2r)` and are run one at a
//! time on a shared cluster. Each stage has a shell of width `H_k`; an
//! explorer either settles during the stage or is stopped upon entering the
//! next inner ball and restarted from there at the next stage.

use std::collections::BTreeMap;

use log::warn;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimate::{survival_domination, DominationReport, McEstimate};
use crate::flashing::BoundParams;
use crate::idla::{Aggregate, ExplorerConfig, ExplorerEnd, Launch};
use crate::lattice::{boundary_sites, check_dim, BallSpec, LatticePoint, Nowhere, OriginBall, Region};
use crate::walk::{SeedSpec, Walker};

/// Per-explorer step cap inside cloud runs.
pub const CLOUD_STEP_CAP: u64 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthScheme {
    /// `H_i^d = γ 𝒩_i`, the number of explorers arriving at stage `i`,
    /// starting from the shell `B(0, 2r) \ B(0, 2r − H_0)`.
    ArrivalCount,
    /// `H_0 = r/4`, `H_k^d = γ N_{k−1}` with `N_{k−1}` the explorers settled in
    /// the previous shell, subdividing `B(0, r)`.
    SettledPrevious,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudParams {
    pub d: usize,
    pub r: f64,
    pub epsilon: f64,
    /// `ε r^d`.
    pub lambda0: f64,
    pub gamma: f64,
    pub width_scheme: WidthScheme,
    /// Explorers present before the Poisson filling; see [`zeta`].
    #[serde(skip)]
    pub eta_base: Option<ExplorerConfig>,
    pub step_cap: u64,
}

impl CloudParams {
    pub fn new(d: usize, r: f64, epsilon: f64, gamma: f64, width_scheme: WidthScheme) -> Result<Self> {
        check_dim(d)?;
        if !(r >= 4.0) || !r.is_finite() {
            return Err(invalid(format!("cloud runs need r ≥ 4, got {r}")));
        }
        if !(epsilon >= 0.0) {
            return Err(invalid(format!("ε must be ≥ 0, got {epsilon}")));
        }
        if !(gamma >= 1.0) {
            return Err(invalid(format!("γ must be ≥ 1, got {gamma}")));
        }
        Ok(Self {
            d,
            r,
            epsilon,
            lambda0: epsilon * r.powi(d as i32),
            gamma,
            width_scheme,
            eta_base: None,
            step_cap: CLOUD_STEP_CAP,
        })
    }

    pub fn with_base(mut self, eta: ExplorerConfig) -> Result<Self> {
        if eta.dim() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: eta.dim(),
            });
        }
        if let Some(p) = eta.counts().keys().find(|p| p.norm() <= 2.0 * self.r) {
            warn!("base configuration has an explorer at {p}, inside B(0, 2r)");
        }
        self.eta_base = Some(eta);
        Ok(self)
    }
}

/// `ζ_k`: the first `k` explorers of the base configuration if `k` is
/// smaller than it, otherwise the base plus `k − |η|` explorers dealt
/// round-robin over `∂B(0, 2r)` in lexicographic order. Increasing in `k`,
/// with `|ζ_k| = k`.
pub fn zeta(params: &CloudParams, k: usize) -> Result<Vec<LatticePoint>> {
    let base = match &params.eta_base {
        Some(eta) => eta.explorers(),
        None => Vec::new(),
    };
    if k <= base.len() {
        return Ok(base[..k].to_vec());
    }
    let ring: Vec<LatticePoint> = boundary_sites(&BallSpec::centered(params.d, 2.0 * params.r)?)
        .iter()
        .copied()
        .collect();
    let mut out = base;
    let extra = k - out.len();
    out.extend((0..extra).map(|i| ring[i % ring.len()]));
    out.sort();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShellProcessTrace {
    pub scheme: WidthScheme,
    /// Poisson draw `K = |η₀|`.
    pub k: u64,
    /// `H_0, …, H_L`.
    pub widths: Vec<f64>,
    /// The scheme's count per stage: arrivals `𝒩_i`, or settled `N_k`.
    pub counts: Vec<u64>,
    /// Explorers that settled (anywhere) during each stage.
    pub settled: Vec<u64>,
    /// Radius of the ball whose entrance stopped the explorers of each stage.
    pub stopped_radii: Vec<f64>,
    pub l: usize,
    /// `Σ_{i<L} H_i`.
    pub total_width: f64,
    /// Some explorer entered the target ball: `B(0, r)` for arrival counts,
    /// `B(0, r/4)` for settled counts.
    pub crossed_inner: bool,
    pub covers_origin: bool,
    /// A walk hit the step cap; the remaining fields are partial.
    pub aborted: bool,
}

impl ShellProcessTrace {
    /// `|η₁|`, the explorers stopped at the end of the first stage.
    pub fn stage1_crossers(&self) -> u64 {
        match self.scheme {
            WidthScheme::ArrivalCount => self.counts.get(1).copied().unwrap_or(0),
            WidthScheme::SettledPrevious => 0,
        }
    }

    /// `Σ_{i<k} H_i`.
    pub fn partial_width(&self, k: usize) -> f64 {
        self.widths.iter().take(k.min(self.l)).sum()
    }
}

/// `γ = max(1, (2 ln C_d / κ_d)^{d−1})`.
pub fn gamma_from_bounds(bounds: &BoundParams, d: usize) -> f64 {
    (2.0 * bounds.c_d.ln() / bounds.kappa_d).powi(d as i32 - 1).max(1.0)
}

/// `exp(−θ ln(θ/(eλ)))`, an upper bound on `P(K ≥ θ)` for `K ~ Poisson(λ)`
/// and `θ ≥ eλ`.
pub fn poisson_tail_bound(theta: f64, lambda: f64) -> f64 {
    (-theta * (theta / (std::f64::consts::E * lambda)).ln()).exp()
}

/// Smallest `i ≥ 0` with `e^{−i} ε r^d < 1`.
pub fn i_star(epsilon: f64, r: f64, d: usize) -> u32 {
    let lambda = epsilon * r.powi(d as i32);
    if !(lambda >= 1.0) {
        return 0;
    }
    let mut i = lambda.ln().floor().max(0.0) as u32;
    while (-(i as f64)).exp() * lambda >= 1.0 {
        i += 1;
    }
    while i > 0 && (-(i as f64 - 1.0)).exp() * lambda < 1.0 {
        i -= 1;
    }
    i
}

struct Stage<'a> {
    agg: &'a mut Aggregate,
    walker: &'a mut Walker,
    cap: u64,
    watch: OriginBall,
    crossed: bool,
}

impl Stage<'_> {
    /// Runs a batch; returns the stopped explorers in stopping order and the
    /// settling sites.
    fn run<S: Region>(
        &mut self,
        batch: &[LatticePoint],
        launch: Launch,
        stop: &S,
    ) -> Result<(Vec<LatticePoint>, Vec<LatticePoint>)> {
        let mut stopped = Vec::new();
        let mut settled = Vec::new();
        for &x in batch {
            let (end, seen) = self
                .agg
                .run_explorer_until(self.walker, x, launch, self.cap, stop, &self.watch)?;
            self.crossed |= seen;
            match end {
                ExplorerEnd::Stopped(p) => stopped.push(p),
                ExplorerEnd::Settled(p) => settled.push(p),
            }
        }
        Ok((stopped, settled))
    }
}

/// One cloud run.
pub fn run_cloud_experiment(params: &CloudParams, seed: SeedSpec) -> Result<ShellProcessTrace> {
    let mut walker = Walker::new(seed, params.d);
    let k = if params.lambda0 > 0.0 {
        let poisson = Poisson::new(params.lambda0).map_err(|e| invalid(e.to_string()))?;
        poisson.sample(walker.rng()) as u64
    } else {
        0
    };
    let eta0 = zeta(params, k as usize)?;
    let mut agg = Aggregate::new(params.d, (2.0 * params.r).ceil() as i32 + 4);
    let target = match params.width_scheme {
        WidthScheme::ArrivalCount => params.r,
        WidthScheme::SettledPrevious => params.r / 4.0,
    };
    let mut trace = ShellProcessTrace {
        scheme: params.width_scheme,
        k,
        widths: Vec::new(),
        counts: Vec::new(),
        settled: Vec::new(),
        stopped_radii: Vec::new(),
        l: 0,
        total_width: 0.0,
        crossed_inner: false,
        covers_origin: false,
        aborted: false,
    };
    let mut stage = Stage {
        agg: &mut agg,
        walker: &mut walker,
        cap: params.step_cap,
        watch: OriginBall::new(target),
        crossed: false,
    };
    let outcome = match params.width_scheme {
        WidthScheme::ArrivalCount => arrival_process(params, &mut stage, eta0, &mut trace),
        WidthScheme::SettledPrevious => settled_process(params, &mut stage, eta0, &mut trace),
    };
    trace.crossed_inner = stage.crossed;
    match outcome {
        Ok(()) => {}
        Err(Error::StepCap { cap }) => {
            warn!("cloud run {seed:?} aborted at the step cap {cap}");
            trace.aborted = true;
        }
        Err(e) => return Err(e),
    }
    trace.total_width = trace.widths.iter().take(trace.l).sum();
    trace.covers_origin = agg.is_occupied(&LatticePoint::origin(params.d)?);
    Ok(trace)
}

fn width(gamma: f64, count: u64, d: usize) -> f64 {
    (gamma * count as f64).powf(1.0 / d as f64)
}

fn arrival_process(
    params: &CloudParams,
    stage: &mut Stage<'_>,
    eta0: Vec<LatticePoint>,
    trace: &mut ShellProcessTrace,
) -> Result<()> {
    let mut batch = eta0;
    let mut outer = 2.0 * params.r;
    let mut launch = Launch::StepFirst;
    loop {
        let c = batch.len() as u64;
        let h = width(params.gamma, c, params.d);
        trace.widths.push(h);
        trace.counts.push(c);
        if c == 0 {
            trace.l = trace.widths.len() - 1;
            return Ok(());
        }
        let inner = outer - h;
        let (stopped, settled) = if inner > 0.0 {
            stage.run(&batch, launch, &OriginBall::new(inner))?
        } else {
            stage.run(&batch, launch, &Nowhere)?
        };
        trace.settled.push(settled.len() as u64);
        trace.stopped_radii.push(inner.max(0.0));
        batch = stopped;
        outer = inner;
        launch = Launch::SettleAtStart;
    }
}

fn settled_process(
    params: &CloudParams,
    stage: &mut Stage<'_>,
    eta0: Vec<LatticePoint>,
    trace: &mut ShellProcessTrace,
) -> Result<()> {
    // Explorers first travel from ∂B(0, 2r) to B(0, r).
    let (mut batch, _) = stage.run(&eta0, Launch::StepFirst, &OriginBall::new(params.r))?;
    let mut h = params.r / 4.0;
    let mut outer = params.r;
    let mut k = 0;
    loop {
        trace.widths.push(h);
        let done: f64 = trace.widths[..k].iter().sum();
        if done > 0.75 * params.r || h < 1.0 {
            trace.l = k;
            break;
        }
        let inner = outer - h;
        let (stopped, settled) = if inner > 0.0 {
            stage.run(&batch, Launch::SettleAtStart, &OriginBall::new(inner))?
        } else {
            stage.run(&batch, Launch::SettleAtStart, &Nowhere)?
        };
        let in_shell = OriginBall::new(outer);
        let below = OriginBall::new(inner);
        let n_k = settled
            .iter()
            .filter(|p| in_shell.contains(p) && !below.contains(p))
            .count() as u64;
        trace.counts.push(n_k);
        trace.settled.push(settled.len() as u64);
        trace.stopped_radii.push(inner.max(0.0));
        batch = stopped;
        outer = inner;
        h = width(params.gamma, n_k, params.d);
        k += 1;
    }
    // Whatever is still stopped runs to completion.
    stage.run(&batch, Launch::SettleAtStart, &Nowhere)?;
    Ok(())
}

/// `runs` cloud runs; run `i` uses stream `i` of `seed`.
pub fn cloud_runs(params: &CloudParams, runs: u64, seed: SeedSpec) -> Result<Vec<ShellProcessTrace>> {
    (0..runs)
        .into_par_iter()
        .map(|i| run_cloud_experiment(params, seed.stream(i)))
        .collect()
}

pub const TRACE_CSV_HEADER: &str = "run_id,stage,width,count,stopped_radius";

pub fn trace_csv_rows(run_id: u64, trace: &ShellProcessTrace) -> Vec<String> {
    (0..trace.widths.len())
        .map(|i| {
            format!(
                "{run_id},{i},{},{},{}",
                trace.widths[i],
                trace.counts.get(i).map(|c| c.to_string()).unwrap_or_default(),
                trace.stopped_radii.get(i).map(|r| r.to_string()).unwrap_or_default()
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossersReport {
    pub runs: usize,
    pub lambda: f64,
    pub mean_crossers: f64,
    pub domination: DominationReport,
    /// Pooled per-explorer frequency of crossing the first shell.
    pub first_shell: McEstimate,
}

/// Compares the stage-1 crosser count with `Poisson(λ₀/e)`.
pub fn crossers_domination_test(params: &CloudParams, runs: u64, seed: SeedSpec) -> Result<CrossersReport> {
    if runs < 1000 {
        return Err(Error::InsufficientData(format!(
            "crossers test needs ≥ 1000 runs, got {runs}"
        )));
    }
    let mut p = params.clone();
    p.width_scheme = WidthScheme::ArrivalCount;
    let traces = cloud_runs(&p, runs, seed)?;
    crossers_report(&traces, p.lambda0, seed.master_seed)
}

/// [`crossers_domination_test`] on traces already simulated.
pub fn crossers_report(traces: &[ShellProcessTrace], lambda0: f64, master_seed: u64) -> Result<CrossersReport> {
    let crossers: Vec<u64> = traces.iter().map(|t| t.stage1_crossers()).collect();
    let lambda = lambda0 / std::f64::consts::E;
    let domination = survival_domination(&crossers, lambda)?;
    let explorers: u64 = traces.iter().map(|t| t.k).sum();
    let crossed: u64 = crossers.iter().sum();
    let first_shell = if explorers > 0 {
        McEstimate::from_counts(explorers, crossed, 0, master_seed)?
    } else {
        McEstimate::from_counts(1, 0, 0, master_seed)?.with_meta("note", "no explorers")
    };
    Ok(CrossersReport {
        runs: traces.len(),
        lambda,
        mean_crossers: crossed as f64 / traces.len().max(1) as f64,
        domination,
        first_shell,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthStats {
    pub traces: usize,
    pub i_star: u32,
    /// `Σ_{i<L} H_i > r`.
    pub total_exceeds: f64,
    /// `Σ_{i<i*} H_i > r/2`.
    pub head_exceeds: f64,
    /// `Σ_{i<i*} H_i ≤ r/2` and `Σ_{i*≤i<L} H_i ≥ r/2`.
    pub tail_exceeds: f64,
    pub union: f64,
    /// Traces where the first event holds but neither of the others.
    pub inclusion_violations: usize,
    /// `(t, frequency of 𝒩_{i*} > t)`.
    pub count_at_i_star: Vec<(u64, f64)>,
    /// Traces with an explorer in the target ball but `Σ_{i<L} H_i ≤ r − 1`.
    pub crossing_without_width: usize,
}

pub fn width_sequence_stats(traces: &[ShellProcessTrace], r: f64, i_star: u32) -> Result<WidthStats> {
    if traces.is_empty() {
        return Err(Error::InsufficientData(
            "width statistics need at least one trace".into(),
        ));
    }
    let n = traces.len() as f64;
    let istar = i_star as usize;
    let (mut total, mut head, mut tail, mut union, mut violations, mut crossing) = (0, 0, 0, 0, 0, 0);
    for t in traces {
        let sum = t.total_width;
        let head_sum = t.partial_width(istar);
        let tail_sum = sum - head_sum;
        let a = sum > r;
        let b = head_sum > r / 2.0;
        let c = head_sum <= r / 2.0 && tail_sum >= r / 2.0;
        total += a as usize;
        head += b as usize;
        tail += c as usize;
        union += (b || c) as usize;
        violations += (a && !(b || c)) as usize;
        if t.scheme == WidthScheme::ArrivalCount && t.crossed_inner && sum <= r - 1.0 {
            crossing += 1;
        }
    }
    let thresholds = [0u64, 1, 2, 5, 10];
    let count_at_i_star = thresholds
        .iter()
        .map(|&th| {
            let hits = traces
                .iter()
                .filter(|t| t.counts.get(istar).copied().unwrap_or(0) > th)
                .count();
            (th, hits as f64 / n)
        })
        .collect();
    Ok(WidthStats {
        traces: traces.len(),
        i_star,
        total_exceeds: total as f64 / n,
        head_exceeds: head as f64 / n,
        tail_exceeds: tail as f64 / n,
        union: union as f64 / n,
        inclusion_violations: violations,
        count_at_i_star,
        crossing_without_width: crossing,
    })
}

/// `(K, runs, frequency of crossed_inner)` per value of `K`.
pub fn coverage_by_k(traces: &[ShellProcessTrace]) -> Vec<(u64, u64, f64)> {
    let mut m: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    for t in traces {
        let e = m.entry(t.k).or_insert((0, 0));
        e.0 += 1;
        e.1 += t.crossed_inner as u64;
    }
    m.into_iter().map(|(k, (n, c))| (k, n, c as f64 / n as f64)).collect()
}
