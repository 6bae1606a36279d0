//! Exact absorption probabilities for small instances, by solving the
//! discrete Dirichlet problem on the permitted sites.
//!
//! `h = 1` on `absorb_a`, `h = 0` on `absorb_b` and on every site outside
//! `permitted ∪ absorb_a ∪ absorb_b`, and `h(x)` equals the mean of `h` over
//! the `2d` neighbors of every permitted `x`. The answer for a start `z` is
//! the neighbor mean of `h` at `z`, since hitting times only count `n ≥ 1`.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{LatticePoint, OriginBall, Region, SiteSet};

/// Largest number of unknowns the oracle accepts.
pub const MAX_UNKNOWNS: usize = 20_000;
/// Below this many unknowns the system is solved by dense LU.
pub const DENSE_LIMIT: usize = 2_000;
/// Residual target of the iterative solver.
pub const ITERATIVE_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct AbsorbingInstance {
    pub permitted: SiteSet,
    pub absorb_a: SiteSet,
    pub absorb_b: SiteSet,
    pub start: LatticePoint,
}

impl AbsorbingInstance {
    pub fn new(permitted: SiteSet, absorb_a: SiteSet, absorb_b: SiteSet, start: LatticePoint) -> Result<Self> {
        let d = permitted.dim();
        if absorb_a.dim() != d || absorb_b.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: if absorb_a.dim() != d {
                    absorb_a.dim()
                } else {
                    absorb_b.dim()
                },
            });
        }
        start.expect_dim(d)?;
        if !permitted.is_disjoint(&absorb_a) || !permitted.is_disjoint(&absorb_b) || !absorb_a.is_disjoint(&absorb_b) {
            return Err(invalid("permitted, absorb_a and absorb_b must be pairwise disjoint"));
        }
        Ok(Self {
            permitted,
            absorb_a,
            absorb_b,
            start,
        })
    }

    /// The exact counterpart of the shell-crossing event: the walk from `z`
    /// must reach `B(0, r − h)` while staying inside `v`.
    pub fn crossing(r: f64, h: f64, v: &SiteSet, z: LatticePoint) -> Result<Self> {
        let d = v.dim();
        z.expect_dim(d)?;
        let inner = OriginBall::new(r - h);
        let mut a = SiteSet::new(d)?;
        let mut b = SiteSet::new(d)?;
        for x in v.iter().chain(std::iter::once(&z)) {
            for y in x.neighbors() {
                if v.contains(&y) {
                    continue;
                }
                if inner.contains(&y) {
                    a.insert(y)?;
                } else {
                    b.insert(y)?;
                }
            }
        }
        let permitted = v.filter(|x| !inner.contains(x));
        Self::new(permitted, a, b, z)
    }

    pub fn dim(&self) -> usize {
        self.permitted.dim()
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "START {}", self.start)?;
        writeln!(w, "PERMITTED")?;
        self.permitted.write_text(&mut w)?;
        writeln!(w, "ABSORB_A")?;
        self.absorb_a.write_text(&mut w)?;
        writeln!(w, "ABSORB_B")?;
        self.absorb_b.write_text(&mut w)?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_text(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (i, first) = lines.next().ok_or(Error::Parse {
            line: 0,
            msg: "empty instance".into(),
        })?;
        let coords = first
            .trim()
            .strip_prefix("START")
            .ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: "expected START line".into(),
            })?
            .split_whitespace()
            .map(|t| t.parse::<i32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        let start = LatticePoint::new(&coords)?;
        let mut section = |name: &str| -> Result<SiteSet> {
            let (i, l) = lines.next().ok_or(Error::Parse {
                line: 0,
                msg: format!("missing {name} section"),
            })?;
            if l.trim() != name {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected {name}, got {l:?}"),
                });
            }
            SiteSet::read_lines(&mut lines)
        };
        let permitted = section("PERMITTED")?;
        let a = section("ABSORB_A")?;
        let b = section("ABSORB_B")?;
        if let Some((i, l)) = lines.next() {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("trailing content {l:?}"),
            });
        }
        Self::new(permitted, a, b, start)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    DenseLu,
    ConjugateGradient { iterations: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub probability: f64,
    pub solver: Solver,
    /// `max_x |h(x) − mean of h over neighbors|` over permitted sites.
    pub residual: f64,
    pub unknowns: usize,
}

/// Probability that the walk from `inst.start` is absorbed in `absorb_a`
/// before `absorb_b` (or before leaving the instance).
pub fn exact_race_probability(inst: &AbsorbingInstance) -> Result<OracleSolution> {
    let n = inst.permitted.len();
    if n > MAX_UNKNOWNS {
        return Err(Error::InstanceTooLarge {
            unknowns: n,
            limit: MAX_UNKNOWNS,
        });
    }
    let known = |p: &LatticePoint| inst.permitted.contains(p) || inst.absorb_a.contains(p) || inst.absorb_b.contains(p);
    if !known(&inst.start) && !inst.start.neighbors().any(|q| known(&q)) {
        return Err(invalid(format!(
            "start {} is neither inside nor adjacent to the instance",
            inst.start
        )));
    }

    let sites: Vec<LatticePoint> = inst.permitted.iter().copied().collect();
    let index: HashMap<LatticePoint, usize> = sites.iter().enumerate().map(|(i, p)| (*p, i)).collect();
    let deg = (2 * inst.dim()) as f64;
    // Neighbor structure: permitted neighbor indices and the absorb_a count.
    let mut nbrs: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut rhs = vec![0.0; n];
    for (i, x) in sites.iter().enumerate() {
        let mut list = Vec::with_capacity(2 * inst.dim());
        for y in x.neighbors() {
            if let Some(&j) = index.get(&y) {
                list.push(j);
            } else if inst.absorb_a.contains(&y) {
                rhs[i] += 1.0 / deg;
            }
        }
        nbrs.push(list);
    }

    let (h, solver) = if n == 0 {
        (Vec::new(), Solver::DenseLu)
    } else if n < DENSE_LIMIT {
        (solve_dense(&nbrs, &rhs, deg)?, Solver::DenseLu)
    } else {
        let (h, it) = solve_cg(&nbrs, &rhs, deg);
        (h, Solver::ConjugateGradient { iterations: it })
    };

    let value = |y: &LatticePoint| -> f64 {
        if let Some(&j) = index.get(y) {
            h[j]
        } else if inst.absorb_a.contains(y) {
            1.0
        } else {
            0.0
        }
    };
    let mut residual: f64 = 0.0;
    for (i, x) in sites.iter().enumerate() {
        let mean = x.neighbors().map(|y| value(&y)).sum::<f64>() / deg;
        residual = residual.max((h[i] - mean).abs());
    }
    let probability = (inst.start.neighbors().map(|y| value(&y)).sum::<f64>() / deg).clamp(0.0, 1.0);
    Ok(OracleSolution {
        probability,
        solver,
        residual,
        unknowns: n,
    })
}

fn solve_dense(nbrs: &[Vec<usize>], rhs: &[f64], deg: f64) -> Result<Vec<f64>> {
    let n = rhs.len();
    let mut m = DMatrix::<f64>::identity(n, n);
    for (i, list) in nbrs.iter().enumerate() {
        for &j in list {
            m[(i, j)] -= 1.0 / deg;
        }
    }
    let b = DVector::from_column_slice(rhs);
    let x = m
        .lu()
        .solve(&b)
        .ok_or_else(|| invalid("singular Dirichlet system (permitted region not absorbing)"))?;
    Ok(x.iter().copied().collect())
}

/// Conjugate gradients on the symmetric positive definite system
/// `(I − P) h = b`, stopped when the max-norm residual drops below
/// `ITERATIVE_TOL / 100`.
fn solve_cg(nbrs: &[Vec<usize>], rhs: &[f64], deg: f64) -> (Vec<f64>, usize) {
    let n = rhs.len();
    let apply = |v: &[f64], out: &mut [f64]| {
        for i in 0..n {
            let s: f64 = nbrs[i].iter().map(|&j| v[j]).sum();
            out[i] = v[i] - s / deg;
        }
    };
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let max_iter = 50 * n + 1000;
    let mut it = 0;
    while it < max_iter {
        if r.iter().fold(0.0f64, |m, v| m.max(v.abs())) < ITERATIVE_TOL * 1e-2 {
            break;
        }
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        it += 1;
    }
    (x, it)
}

/// Exact crossing probability `P_z(T(B(0, r−h)) < T(V^c))`.
pub fn exact_crossing_probability(r: f64, h: f64, v: &SiteSet, z: LatticePoint) -> Result<OracleSolution> {
    exact_race_probability(&AbsorbingInstance::crossing(r, h, v, z)?)
}

/// Exit distribution of the walk started at `start` from the finite set
/// `inside`: for each site of `∂inside` (outer vertex boundary), the
/// probability that it is the first site visited outside `inside`.
pub fn exit_distribution(inside: &SiteSet, start: LatticePoint) -> Result<Vec<(LatticePoint, f64)>> {
    let d = inside.dim();
    let mut boundary = SiteSet::new(d)?;
    for x in inside {
        for y in x.neighbors() {
            if !inside.contains(&y) {
                boundary.insert(y)?;
            }
        }
    }
    let mut out = Vec::with_capacity(boundary.len());
    for y in &boundary {
        let a = SiteSet::from_points(d, [*y])?;
        let b = boundary.filter(|q| q != y);
        let inst = AbsorbingInstance::new(inside.clone(), a, b, start)?;
        let p = exact_race_probability(&inst)?.probability;
        out.push((*y, p));
    }
    Ok(out)
}

/// Convenience: the full shell `B(0,r) \ B(0,r−h)` as `V`.
pub fn full_shell(dim: usize, r: f64, h: f64) -> Result<SiteSet> {
    crate::lattice::origin_shell(dim, r, r - h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(c: &[i32]) -> LatticePoint {
        LatticePoint::new(c).unwrap()
    }

    #[test]
    fn empty_permitted_all_b_is_zero() {
        let z = pt(&[0, 0]);
        let b = SiteSet::from_points(2, z.neighbors()).unwrap();
        let inst = AbsorbingInstance::new(SiteSet::new(2).unwrap(), SiteSet::new(2).unwrap(), b, z).unwrap();
        let s = exact_race_probability(&inst).unwrap();
        assert_eq!(s.probability, 0.0);
        assert_eq!(s.unknowns, 0);
    }

    #[test]
    fn symmetric_instance_is_half() {
        // Segment of the x-axis from −3 to 3, start at 0. Every exterior
        // neighbor is absorbing, split by the point reflection x ↦ −x.
        let permitted = SiteSet::from_points(2, (-3..=3).map(|x| pt(&[x, 0]))).unwrap();
        let mut a = SiteSet::new(2).unwrap();
        let mut b = SiteSet::new(2).unwrap();
        for p in permitted.iter() {
            for q in p.neighbors().filter(|q| !permitted.contains(q)) {
                if q.coord(0) > 0 || (q.coord(0) == 0 && q.coord(1) > 0) {
                    a.insert(q).unwrap();
                } else {
                    b.insert(q).unwrap();
                }
            }
        }
        let inst = AbsorbingInstance::new(permitted, a, b, pt(&[0, 0])).unwrap();
        let s = exact_race_probability(&inst).unwrap();
        assert!((s.probability - 0.5).abs() < 1e-12, "{}", s.probability);
    }

    #[test]
    fn one_dimensional_gambler_ruin_line() {
        // A strip of width 1 embedded in Z^2: from x=1 on {1..L-1} × {0},
        // leaking to B off-axis. Compare with a direct 1-D recursion.
        let l = 6;
        let permitted = SiteSet::from_points(2, (1..l).map(|x| pt(&[x, 0]))).unwrap();
        let a = SiteSet::from_points(2, [pt(&[l, 0])]).unwrap();
        let inst = AbsorbingInstance::new(permitted, a, SiteSet::new(2).unwrap(), pt(&[0, 0])).unwrap();
        let s = exact_race_probability(&inst).unwrap();
        // h_x = (h_{x-1} + h_{x+1})/4 with h_0 = 0, h_l = 1; start at 0
        // sees only h_1 among its neighbors.
        let m = (l - 1) as usize;
        let mut mat = DMatrix::<f64>::zeros(m, m);
        let mut b = DVector::<f64>::zeros(m);
        for i in 0..m {
            mat[(i, i)] = 1.0;
            if i > 0 {
                mat[(i, i - 1)] = -0.25;
            }
            if i + 1 < m {
                mat[(i, i + 1)] = -0.25;
            } else {
                b[i] = 0.25;
            }
        }
        let hx = mat.lu().solve(&b).unwrap();
        assert!((s.probability - hx[0] / 4.0).abs() < 1e-14);
    }

    #[test]
    fn monotone_in_absorb_a() {
        let v = full_shell(2, 5.0, 2.0).unwrap();
        let z = pt(&[6, 0]);
        let base = AbsorbingInstance::crossing(5.0, 2.0, &v, z).unwrap();
        let p0 = exact_race_probability(&base).unwrap().probability;
        // Move one B site adjacent to V into A.
        let moved = *base.absorb_b.iter().next().unwrap();
        let mut a = base.absorb_a.clone();
        a.insert(moved).unwrap();
        let mut b = base.absorb_b.clone();
        b.remove(&moved);
        let bigger = AbsorbingInstance::new(base.permitted.clone(), a, b, z).unwrap();
        let p1 = exact_race_probability(&bigger).unwrap().probability;
        assert!(p1 >= p0 - 1e-15, "{p1} < {p0}");
        assert!((0.0..=1.0).contains(&p0));
    }

    #[test]
    fn dense_and_iterative_agree() {
        let v = full_shell(2, 34.0, 14.0).unwrap();
        assert!(v.len() >= DENSE_LIMIT);
        let z = pt(&[35, 0]);
        let inst = AbsorbingInstance::crossing(34.0, 14.0, &v, z).unwrap();
        let it = exact_race_probability(&inst).unwrap();
        assert!(matches!(it.solver, Solver::ConjugateGradient { .. }));
        assert!(it.residual < 1e-9, "residual {}", it.residual);

        let small = full_shell(2, 12.0, 5.0).unwrap();
        let z = pt(&[13, 0]);
        let inst = AbsorbingInstance::crossing(12.0, 5.0, &small, z).unwrap();
        let n = inst.permitted.len();
        let sites: Vec<_> = inst.permitted.iter().copied().collect();
        let index: HashMap<_, _> = sites.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        let mut nbrs = vec![Vec::new(); n];
        let mut rhs = vec![0.0; n];
        for (i, x) in sites.iter().enumerate() {
            for y in x.neighbors() {
                if let Some(&j) = index.get(&y) {
                    nbrs[i].push(j);
                } else if inst.absorb_a.contains(&y) {
                    rhs[i] += 0.25;
                }
            }
        }
        let d = solve_dense(&nbrs, &rhs, 4.0).unwrap();
        let (c, _) = solve_cg(&nbrs, &rhs, 4.0);
        for (a, b) in d.iter().zip(&c) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn harmonic_residual_small() {
        let v = full_shell(3, 4.0, 1.5).unwrap();
        let z = pt(&[5, 0, 0]);
        let s = exact_crossing_probability(4.0, 1.5, &v, z).unwrap();
        assert!(s.residual < 1e-9);
        assert!(s.probability > 0.0 && s.probability < 1.0);
    }

    #[test]
    fn start_far_away_is_rejected() {
        let v = full_shell(2, 3.0, 2.0).unwrap();
        let inst = AbsorbingInstance::crossing(3.0, 2.0, &v, pt(&[3, 0])).unwrap();
        let far = AbsorbingInstance::new(inst.permitted, inst.absorb_a, inst.absorb_b, pt(&[50, 50])).unwrap();
        assert!(exact_race_probability(&far).is_err());
    }

    #[test]
    fn too_large_is_rejected() {
        let permitted = SiteSet::from_points(2, (0..150).flat_map(|x| (0..150).map(move |y| pt(&[x, y])))).unwrap();
        let inst = AbsorbingInstance::new(
            permitted,
            SiteSet::new(2).unwrap(),
            SiteSet::new(2).unwrap(),
            pt(&[0, 0]),
        )
        .unwrap();
        assert!(matches!(
            exact_race_probability(&inst),
            Err(Error::InstanceTooLarge { .. })
        ));
    }

    #[test]
    fn overlapping_sets_rejected() {
        let s = SiteSet::from_points(2, [pt(&[0, 0])]).unwrap();
        assert!(AbsorbingInstance::new(s.clone(), s.clone(), SiteSet::new(2).unwrap(), pt(&[1, 0])).is_err());
    }

    #[test]
    fn text_roundtrip() {
        let v = full_shell(2, 3.0, 2.0).unwrap();
        let inst = AbsorbingInstance::crossing(3.0, 2.0, &v, pt(&[4, 0])).unwrap();
        let text = inst.to_text();
        assert!(text.starts_with("START 4 0\nPERMITTED\nd=2 n="));
        assert_eq!(AbsorbingInstance::from_text(&text).unwrap(), inst);
        assert!(AbsorbingInstance::from_text("PERMITTED\n").is_err());
    }

    #[test]
    fn exit_distribution_sums_to_one() {
        let inside = SiteSet::from_points(2, [pt(&[0, 0]), pt(&[1, 0])]).unwrap();
        let dist = exit_distribution(&inside, pt(&[0, 0])).unwrap();
        assert_eq!(dist.len(), 6);
        let total: f64 = dist.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
