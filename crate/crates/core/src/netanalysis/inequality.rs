use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CommGraph, DoiSubgraph};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lorenz {
    /// (population share, wealth share), from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    pub gini: f64,
}

/// Lorenz curve of the ascending wealth vector and its Gini coefficient
/// `G = 2 Σ_i i·x_(i) / (n Σ x) - (n + 1) / n`.
pub fn lorenz_gini(wealth: &[f64]) -> Result<Lorenz> {
    if wealth.is_empty() || wealth.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidParameter("wealth must be a non-empty vector of non-negative reals".into()));
    }
    let mut x = wealth.to_vec();
    x.sort_by(f64::total_cmp);
    let total: f64 = x.iter().sum();
    if total == 0.0 {
        return Err(Error::Degenerate("Gini of an all-zero wealth vector".into()));
    }
    let n = x.len() as f64;
    let mut points = Vec::with_capacity(x.len() + 1);
    points.push((0.0, 0.0));
    let mut cum = 0.0;
    let mut ranked = 0.0;
    for (i, &w) in x.iter().enumerate() {
        cum += w;
        ranked += (i + 1) as f64 * w;
        points.push(((i + 1) as f64 / n, cum / total));
    }
    // exact endpoint despite rounding in the running sum
    points.last_mut().expect("non-empty").1 = 1.0;
    let gini = (2.0 * ranked / (n * total) - (n + 1.0) / n).clamp(0.0, 1.0);
    Ok(Lorenz { points, gini })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WealthMode {
    #[default]
    InDegree,
    /// Sum of `p(m, D)` over incoming messages.
    InStrength,
}

/// Wealth of every node of the subgraph, in node order.
pub fn wealth(comm: &CommGraph, sub: &DoiSubgraph, mode: WealthMode) -> Vec<f64> {
    let index: std::collections::HashMap<usize, usize> = sub.nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut w = vec![0.0; sub.nodes.len()];
    for &a in &sub.arcs {
        let arc = &comm.arcs()[a];
        w[index[&arc.target]] += match mode {
            WealthMode::InDegree => 1.0,
            WealthMode::InStrength => arc.dois.iter().find(|&&(d, _)| d == sub.doi).map_or(0.0, |&(_, p)| p),
        };
    }
    w
}

fn in_degrees(arcs: &[(usize, usize)]) -> Vec<f64> {
    let n = arcs.iter().map(|&(s, t)| s.max(t) + 1).max().unwrap_or(0);
    let mut d = vec![0.0; n];
    for &(_, t) in arcs {
        d[t] += 1.0;
    }
    d
}

#[derive(Debug, Clone, Copy, Default)]
struct Sums {
    n: f64,
    x: f64,
    y: f64,
    xx: f64,
    yy: f64,
    xy: f64,
}

impl Sums {
    fn pearson(&self) -> Option<f64> {
        let vx = self.xx - self.x * self.x / self.n;
        let vy = self.yy - self.y * self.y / self.n;
        let cov = self.xy - self.x * self.y / self.n;
        let tol = 1e-12 * (1.0 + self.xx.max(self.yy));
        (self.n >= 2.0 && vx > tol && vy > tol).then(|| (cov / (vx * vy).sqrt()).clamp(-1.0, 1.0))
    }
}

fn zero_variance() -> Error {
    Error::Degenerate("assortativity undefined: endpoint in-degrees have zero variance".into())
}

/// Pearson correlation over arcs of (in-degree of source, in-degree of target).
pub fn degree_pearson(arcs: &[(usize, usize)]) -> Result<f64> {
    if arcs.len() < 2 {
        return Err(Error::Degenerate("assortativity needs at least two arcs".into()));
    }
    let d = in_degrees(arcs);
    let n = arcs.len() as f64;
    let mx = arcs.iter().map(|&(s, _)| d[s]).sum::<f64>() / n;
    let my = arcs.iter().map(|&(_, t)| d[t]).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(s, t) in arcs {
        let (dx, dy) = (d[s] - mx, d[t] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let tol = 1e-12 * n * (1.0 + mx * mx + my * my);
    if sxx <= tol || syy <= tol {
        return Err(zero_variance());
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Leave-one-arc-out replicates of `degree_pearson`, each in O(1) from
/// per-node aggregates. Returns (replicates, standard error); replicates
/// with zero variance are skipped.
pub fn jackknife(arcs: &[(usize, usize)]) -> Result<(Vec<f64>, f64)> {
    if arcs.len() < 3 {
        return Err(Error::Degenerate("jackknife needs at least three arcs".into()));
    }
    if arcs.iter().any(|&(s, t)| s == t) {
        return Err(Error::InvalidParameter("jackknife assumes no self-loops".into()));
    }
    let d = in_degrees(arcs);
    let n = d.len();
    let mut out_deg = vec![0.0; n];
    let mut sy_out = vec![0.0; n];
    let mut sx_in = vec![0.0; n];
    let mut all = Sums {
        n: arcs.len() as f64,
        ..Sums::default()
    };
    for &(s, t) in arcs {
        let (x, y) = (d[s], d[t]);
        out_deg[s] += 1.0;
        sy_out[s] += y;
        sx_in[t] += x;
        all.x += x;
        all.y += y;
        all.xx += x * x;
        all.yy += y * y;
        all.xy += x * y;
    }
    let mut reps = Vec::with_capacity(arcs.len());
    for &(a, b) in arcs {
        let (xf, yf, db) = (d[a], d[b], d[b]);
        let (ob, ib) = (out_deg[b], d[b] - 1.0);
        // drop the arc, then lower b's in-degree by one on every arc touching b
        let s = Sums {
            n: all.n - 1.0,
            x: all.x - xf - ob,
            y: all.y - yf - ib,
            xx: all.xx - xf * xf - ob * (2.0 * db - 1.0),
            yy: all.yy - yf * yf - ib * (2.0 * db - 1.0),
            xy: all.xy - xf * yf - sy_out[b] - (sx_in[b] - xf),
        };
        if let Some(r) = s.pearson() {
            reps.push(r);
        }
    }
    if reps.len() < 2 {
        return Err(zero_variance());
    }
    let m = reps.len() as f64;
    let mean = reps.iter().sum::<f64>() / m;
    let var = (m - 1.0) / m * reps.iter().map(|r| (r - mean).powi(2)).sum::<f64>();
    Ok((reps, var.sqrt()))
}

/// Mean `degree_pearson` over `rewirings` degree-preserving rewired copies.
/// Each copy attempts `swap_factor · E` double-edge swaps
/// (a→b, c→d) ⇒ (a→d, c→b), rejecting self-loops and, when `simple`,
/// duplicate arcs.
pub fn rewired_baseline(arcs: &[(usize, usize)], rewirings: usize, swap_factor: usize, simple: bool, seed: u64) -> Result<f64> {
    if rewirings == 0 {
        return Err(Error::InvalidParameter("rewirings must be >= 1".into()));
    }
    let e = arcs.len();
    if e < 2 {
        return Err(Error::Degenerate("rewiring needs at least two arcs".into()));
    }
    let mut total = 0.0;
    for r in 0..rewirings {
        let mut rng = rng::substream(seed, &format!("rewire-{r}"));
        let g = rewire(arcs, swap_factor * e, simple, &mut rng);
        total += degree_pearson(&g)?;
    }
    Ok(total / rewirings as f64)
}

fn rewire(arcs: &[(usize, usize)], attempts: usize, simple: bool, rng: &mut rng::StreamRng) -> Vec<(usize, usize)> {
    let e = arcs.len();
    let mut g = arcs.to_vec();
    let mut present: HashSet<(usize, usize)> = if simple { g.iter().copied().collect() } else { HashSet::new() };
    for _ in 0..attempts {
        let i = rng.random_range(0..e);
        let j = rng.random_range(0..e);
        let ((a, b), (c, d)) = (g[i], g[j]);
        if i == j || a == d || c == b || b == d {
            continue;
        }
        if simple {
            if present.contains(&(a, d)) || present.contains(&(c, b)) {
                continue;
            }
            present.remove(&(a, b));
            present.remove(&(c, d));
            present.insert((a, d));
            present.insert((c, b));
        }
        g[i] = (a, d);
        g[j] = (c, b);
    }
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssortativityConfig {
    /// Collapse parallel arcs before computing degrees.
    pub simple: bool,
    pub rewirings: usize,
    pub swap_factor: usize,
    pub seed: u64,
}

impl Default for AssortativityConfig {
    fn default() -> Self {
        AssortativityConfig {
            simple: false,
            rewirings: 20,
            swap_factor: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assortativity {
    pub r: f64,
    pub stderr: f64,
    pub baseline: f64,
    pub arcs: usize,
}

/// In-in degree assortativity with jackknife error and rewired baseline.
pub fn assortativity(arcs: &[(usize, usize)], config: &AssortativityConfig) -> Result<Assortativity> {
    let arcs: Vec<(usize, usize)> = if config.simple {
        let mut u = arcs.to_vec();
        u.sort_unstable();
        u.dedup();
        u
    } else {
        arcs.to_vec()
    };
    let r = degree_pearson(&arcs)?;
    let (_, stderr) = jackknife(&arcs)?;
    let baseline = rewired_baseline(&arcs, config.rewirings, config.swap_factor, config.simple, config.seed)?;
    Ok(Assortativity {
        r,
        stderr,
        baseline,
        arcs: arcs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairwise_gini(x: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mu = x.iter().sum::<f64>() / n;
        let mut s = 0.0;
        for a in x {
            for b in x {
                s += (a - b).abs();
            }
        }
        s / (2.0 * n * n * mu)
    }

    fn area_gini(points: &[(f64, f64)]) -> f64 {
        let area: f64 = points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
        1.0 - 2.0 * area
    }

    /// Textbook Pearson on explicit (x, y) lists.
    fn brute_pearson(arcs: &[(usize, usize)]) -> f64 {
        let indeg = |v: usize| arcs.iter().filter(|&&(_, t)| t == v).count() as f64;
        let xs: Vec<f64> = arcs.iter().map(|&(s, _)| indeg(s)).collect();
        let ys: Vec<f64> = arcs.iter().map(|&(_, t)| indeg(t)).collect();
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    const FOUR_NODE: &[(usize, usize)] = &[(0, 1), (0, 2), (1, 2), (2, 3), (3, 2), (1, 0), (3, 1)];

    #[test]
    fn gini_examples() {
        let g = lorenz_gini(&[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(g.gini, 0.75);
        let u = lorenz_gini(&[2.0; 5]).unwrap();
        assert!(u.gini.abs() < 1e-15);
        for &(p, w) in &u.points {
            assert!((p - w).abs() < 1e-12);
        }
        assert!(lorenz_gini(&[0.0, 0.0]).is_err());
        assert!(lorenz_gini(&[]).is_err());
        assert!(lorenz_gini(&[1.0, -1.0]).is_err());
    }

    proptest! {
        #[test]
        fn gini_formulas_agree(x in prop::collection::vec(0.0f64..100.0, 1..40)) {
            prop_assume!(x.iter().sum::<f64>() > 0.0);
            let l = lorenz_gini(&x).unwrap();
            prop_assert!((l.gini - pairwise_gini(&x)).abs() < 1e-9);
            prop_assert!((l.gini - area_gini(&l.points)).abs() < 1e-9);
            prop_assert_eq!(l.points[0], (0.0, 0.0));
            prop_assert_eq!(*l.points.last().unwrap(), (1.0, 1.0));
            prop_assert!(l.points.windows(2).all(|w| w[1].1 >= w[0].1 && w[1].0 > w[0].0));
        }

        #[test]
        fn jackknife_matches_brute_force(arcs in prop::collection::vec((0usize..6, 0usize..6), 4..25)) {
            let arcs: Vec<(usize, usize)> = arcs.into_iter().filter(|(s, t)| s != t).collect();
            prop_assume!(arcs.len() >= 3);
            let Ok((reps, _)) = jackknife(&arcs) else { return Ok(()); };
            let brute: Vec<f64> = (0..arcs.len())
                .filter_map(|i| {
                    let mut rest = arcs.clone();
                    rest.remove(i);
                    degree_pearson(&rest).ok()
                })
                .collect();
            prop_assert_eq!(reps.len(), brute.len());
            for (a, b) in reps.iter().zip(&brute) {
                prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
            }
        }
    }

    #[test]
    fn four_node_fixture_matches_brute_force() {
        let r = degree_pearson(FOUR_NODE).unwrap();
        assert!((r - brute_pearson(FOUR_NODE)).abs() < 1e-12);
    }

    #[test]
    fn equal_in_degrees_rejected() {
        let cycle = [(0, 1), (1, 2), (2, 0)];
        assert!(matches!(degree_pearson(&cycle), Err(Error::Degenerate(_))));
        assert!(assortativity(&cycle, &AssortativityConfig::default()).is_err());
    }

    #[test]
    fn star_is_disassortative() {
        let mut arcs = Vec::new();
        for leaf in 1..20 {
            arcs.push((leaf, 0));
            if leaf % 2 == 0 {
                arcs.push((0, leaf));
            }
        }
        let a = assortativity(&arcs, &AssortativityConfig::default()).unwrap();
        assert!(a.r < 0.0);
        assert!(a.stderr >= 0.0);
    }

    #[test]
    fn jackknife_error_shrinks_with_duplication() {
        let base = FOUR_NODE.to_vec();
        let dup = |k: usize| -> Vec<(usize, usize)> { (0..k).flat_map(|_| base.iter().copied()).collect() };
        let e1 = jackknife(&dup(1)).unwrap().1;
        let e2 = jackknife(&dup(2)).unwrap().1;
        let e4 = jackknife(&dup(4)).unwrap().1;
        assert!(e1 > e2 && e2 > e4, "{e1} {e2} {e4}");
        assert!((degree_pearson(&dup(4)).unwrap() - degree_pearson(&base).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn rewiring_preserves_degrees_and_is_seeded() {
        let arcs: Vec<(usize, usize)> = (0..30).map(|i| (i % 7, (i * 3 + 1) % 11)).filter(|(s, t)| s != t).collect();
        let degrees = |g: &[(usize, usize)]| {
            let mut out = vec![0; 11];
            let mut inn = vec![0; 11];
            for &(s, t) in g {
                out[s] += 1;
                inn[t] += 1;
            }
            (out, inn)
        };
        for simple in [false, true] {
            let g = rewire(&arcs, 300, simple, &mut rng::rng_from_seed(4));
            assert_ne!(g, arcs);
            assert_eq!(degrees(&g), degrees(&arcs));
            assert!(g.iter().all(|(s, t)| s != t));
            if simple {
                let unique: HashSet<_> = g.iter().collect();
                assert_eq!(unique.len(), g.len());
            }
        }
        let a = rewired_baseline(&arcs, 5, 10, false, 1).unwrap();
        assert_eq!(a, rewired_baseline(&arcs, 5, 10, false, 1).unwrap());
        assert!((-1.0..=1.0).contains(&a));
    }
}
