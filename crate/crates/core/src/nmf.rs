//! Non-negative matrix factorization of the term-document matrix into
//! message buckets.
//!
//! `Γ ≈ W H` with `W` (terms × buckets) and `H` (buckets × messages), fitted
//! by Lee–Seung multiplicative updates on the squared Frobenius objective.
//! The same solver fits with a set of held-out entries masked out, which is
//! how the bucket count is selected.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{CscMatrix, DenseMatrix};
use crate::rng::{self, StreamRng};
use crate::textprep::Vocabulary;

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmfInit {
    #[default]
    RandomUniform,
    Nndsvd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmfConfig {
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once the relative objective decrease falls below this.
    pub rel_tol: f64,
    pub init: NmfInit,
    /// Held-out errors within this fraction of the held-out norm of the
    /// grid minimum count as ties when selecting k.
    pub k_tie_tol: f64,
    /// Independent starts per fit; the lowest final objective is kept.
    pub restarts: usize,
}

impl Default for NmfConfig {
    fn default() -> Self {
        NmfConfig {
            seed: 0,
            max_iter: 500,
            rel_tol: 1e-4,
            init: NmfInit::RandomUniform,
            k_tie_tol: 0.01,
            restarts: 1,
        }
    }
}

impl NmfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be >= 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter("rel_tol must be > 0".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidParameter("restarts must be >= 1".into()));
        }
        if !(self.k_tie_tol >= 0.0) {
            return Err(Error::InvalidParameter("k_tie_tol must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    /// Terms × buckets.
    pub w: DenseMatrix,
    /// Buckets × messages.
    pub h: DenseMatrix,
    pub k: usize,
    /// `‖Γ − WH‖_F` over the fitted entries.
    pub final_error: f64,
    pub iterations: usize,
    /// Squared objective after initialization and after every iteration.
    pub objective_trace: Vec<f64>,
}

/// Training view of Γ with an optional held-out entry set.
struct Problem {
    cols: Vec<Vec<(usize, f64)>>,
    rows: Vec<Vec<(usize, f64)>>,
    held_by_col: Vec<Vec<usize>>,
    held_by_row: Vec<Vec<usize>>,
    train_norm_sq: f64,
}

impl Problem {
    fn new(gamma: &CscMatrix, held: &[(usize, usize)]) -> Self {
        let (m, n) = (gamma.nrows(), gamma.ncols());
        let mut held_by_col = vec![Vec::new(); n];
        let mut held_by_row = vec![Vec::new(); m];
        for &(i, j) in held {
            held_by_col[j].push(i);
            held_by_row[i].push(j);
        }
        for v in held_by_col.iter_mut().chain(held_by_row.iter_mut()) {
            v.sort_unstable();
        }
        let mut cols = vec![Vec::new(); n];
        let mut rows = vec![Vec::new(); m];
        let mut train_norm_sq = 0.0;
        for (i, j, v) in gamma.triplets() {
            if held_by_col[j].binary_search(&i).is_ok() {
                continue;
            }
            cols[j].push((i, v));
            rows[i].push((j, v));
            train_norm_sq += v * v;
        }
        Problem {
            cols,
            rows,
            held_by_col,
            held_by_row,
            train_norm_sq,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Aᵀ A` for a row-major `rows × k` matrix.
fn gram(a: &DenseMatrix) -> DenseMatrix {
    let k = a.cols();
    let mut g = DenseMatrix::zeros(k, k);
    for r in 0..a.rows() {
        let row = a.row(r);
        for p in 0..k {
            let rp = row[p];
            if rp == 0.0 {
                continue;
            }
            let gp = g.row_mut(p);
            for q in 0..k {
                gp[q] += rp * row[q];
            }
        }
    }
    g
}

/// Multiplicative update of every row of `target` (rows × k).
///
/// For row `r`: numerator `Σ v · other[c]` over its observed entries,
/// denominator `target[r] · G` minus the held-out reconstruction terms.
fn update_rows(
    target: &mut DenseMatrix,
    other: &DenseMatrix,
    other_gram: &DenseMatrix,
    entries: &[Vec<(usize, f64)>],
    held: &[Vec<usize>],
) {
    let k = target.cols();
    let mut numer = vec![0.0; k];
    let mut denom = vec![0.0; k];
    for r in 0..target.rows() {
        numer.iter_mut().for_each(|x| *x = 0.0);
        for &(c, v) in &entries[r] {
            for (x, o) in numer.iter_mut().zip(other.row(c)) {
                *x += v * o;
            }
        }
        let t = target.row(r);
        for (q, d) in denom.iter_mut().enumerate() {
            *d = 0.0;
            for (p, &tp) in t.iter().enumerate() {
                *d += tp * other_gram[(p, q)];
            }
        }
        for &c in &held[r] {
            let o = other.row(c);
            let pred = dot(t, o);
            for (d, oq) in denom.iter_mut().zip(o) {
                *d -= pred * oq;
            }
        }
        let t = target.row_mut(r);
        for q in 0..k {
            t[q] *= numer[q] / (denom[q].max(0.0) + EPS);
        }
    }
}

/// Squared Frobenius error over the observed entries.
fn objective(p: &Problem, w: &DenseMatrix, ht: &DenseMatrix, wtw: &DenseMatrix, hth: &DenseMatrix) -> f64 {
    let mut cross = 0.0;
    for (j, col) in p.cols.iter().enumerate() {
        let hj = ht.row(j);
        for &(i, v) in col {
            cross += v * dot(w.row(i), hj);
        }
    }
    let trace: f64 = wtw.data().iter().zip(hth.data()).map(|(a, b)| a * b).sum();
    let mut held_sq = 0.0;
    for (j, rows) in p.held_by_col.iter().enumerate() {
        let hj = ht.row(j);
        for &i in rows {
            let pred = dot(w.row(i), hj);
            held_sq += pred * pred;
        }
    }
    (p.train_norm_sq - 2.0 * cross + trace - held_sq).max(0.0)
}

struct Fit {
    w: DenseMatrix,
    ht: DenseMatrix,
    trace: Vec<f64>,
    iterations: usize,
}

fn fit(p: &Problem, mut w: DenseMatrix, mut ht: DenseMatrix, config: &NmfConfig) -> Result<Fit> {
    let mut wtw = gram(&w);
    let mut hth = gram(&ht);
    let mut trace = vec![objective(p, &w, &ht, &wtw, &hth)];
    let mut iterations = 0;
    for _ in 0..config.max_iter {
        update_rows(&mut ht, &w, &wtw, &p.cols, &p.held_by_col);
        hth = gram(&ht);
        update_rows(&mut w, &ht, &hth, &p.rows, &p.held_by_row);
        wtw = gram(&w);
        iterations += 1;
        if !w.is_finite() || !ht.is_finite() {
            return Err(Error::Numerical(format!("non-finite factor at iteration {iterations}")));
        }
        let obj = objective(p, &w, &ht, &wtw, &hth);
        let prev = *trace.last().unwrap();
        trace.push(obj);
        if prev <= 0.0 || (prev - obj) / prev < config.rel_tol {
            break;
        }
    }
    Ok(Fit { w, ht, trace, iterations })
}

fn check_rank(gamma: &CscMatrix, k: usize) -> Result<()> {
    let (m, n) = (gamma.nrows(), gamma.ncols());
    if k == 0 || k >= m.min(n) {
        return Err(Error::InvalidParameter(format!(
            "bucket count k={k} must satisfy 1 <= k < min(m, n) = {}",
            m.min(n)
        )));
    }
    Ok(())
}

fn initialize(gamma: &CscMatrix, k: usize, config: &NmfConfig, rng: &mut StreamRng) -> Result<(DenseMatrix, DenseMatrix)> {
    match config.init {
        NmfInit::RandomUniform => Ok(random_init(gamma, k, rng)),
        NmfInit::Nndsvd => nndsvd_init(gamma, k, rng),
    }
}

/// Uniform (0, 1] entries scaled so `WH` starts at the mean of Γ.
fn random_init(gamma: &CscMatrix, k: usize, rng: &mut StreamRng) -> (DenseMatrix, DenseMatrix) {
    let (m, n) = (gamma.nrows(), gamma.ncols());
    let mean = gamma.sum() / (m as f64 * n as f64);
    let scale = (mean / k as f64).sqrt();
    let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| (1.0 - rng.random::<f64>()) * scale).collect() };
    let w = DenseMatrix::from_vec(m, k, draw(m * k));
    let ht = DenseMatrix::from_vec(n, k, draw(n * k));
    (w, ht)
}

fn orthonormalize(y: DMatrix<f64>) -> DMatrix<f64> {
    y.qr().q()
}

/// Leading `k` singular triplets of a sparse matrix by randomized subspace
/// iteration. Returns (U: m×k, s, V: n×k).
fn truncated_svd(gamma: &CscMatrix, k: usize, rng: &mut StreamRng) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (m, n) = (gamma.nrows(), gamma.ncols());
    let l = (k + 8).min(m.min(n));
    let times = |x: &DMatrix<f64>| -> DMatrix<f64> {
        // Γ x, x is n×l
        let mut y = DMatrix::zeros(m, x.ncols());
        for (i, j, v) in gamma.triplets() {
            for c in 0..x.ncols() {
                y[(i, c)] += v * x[(j, c)];
            }
        }
        y
    };
    let times_t = |x: &DMatrix<f64>| -> DMatrix<f64> {
        // Γᵀ x, x is m×l
        let mut y = DMatrix::zeros(n, x.ncols());
        for (i, j, v) in gamma.triplets() {
            for c in 0..x.ncols() {
                y[(j, c)] += v * x[(i, c)];
            }
        }
        y
    };
    let omega = DMatrix::from_fn(n, l, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let mut q = orthonormalize(times(&omega));
    for _ in 0..6 {
        let z = orthonormalize(times_t(&q));
        q = orthonormalize(times(&z));
    }
    // B = Qᵀ Γ (l × n), stored transposed as n × l
    let bt = times_t(&q);
    let bbt = bt.transpose() * &bt;
    let eig = SymmetricEigen::new(bbt);
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut u = DMatrix::zeros(m, k);
    let mut v = DMatrix::zeros(n, k);
    let mut s = Vec::with_capacity(k);
    for (c, &o) in order.iter().take(k).enumerate() {
        let sigma = eig.eigenvalues[o].max(0.0).sqrt();
        s.push(sigma);
        let ub = eig.eigenvectors.column(o);
        u.set_column(c, &(&q * ub));
        if sigma > 0.0 {
            v.set_column(c, &((&bt * ub) / sigma));
        }
    }
    (u, s, v)
}

/// NNDSVD with zeros filled by the mean of Γ.
fn nndsvd_init(gamma: &CscMatrix, k: usize, rng: &mut StreamRng) -> Result<(DenseMatrix, DenseMatrix)> {
    let (m, n) = (gamma.nrows(), gamma.ncols());
    let (u, s, v) = truncated_svd(gamma, k, rng);
    let mut w = DenseMatrix::zeros(m, k);
    let mut ht = DenseMatrix::zeros(n, k);
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    for c in 0..k {
        let uc: Vec<f64> = u.column(c).iter().copied().collect();
        let vc: Vec<f64> = v.column(c).iter().copied().collect();
        let (wc, hc): (Vec<f64>, Vec<f64>) = if c == 0 {
            let f = s[0].sqrt();
            (uc.iter().map(|x| f * x.abs()).collect(), vc.iter().map(|x| f * x.abs()).collect())
        } else {
            let pos = |x: &[f64]| x.iter().map(|a| a.max(0.0)).collect::<Vec<_>>();
            let neg = |x: &[f64]| x.iter().map(|a| (-a).max(0.0)).collect::<Vec<_>>();
            let (up, un, vp, vn) = (pos(&uc), neg(&uc), pos(&vc), neg(&vc));
            let (nup, nun, nvp, nvn) = (norm(&up), norm(&un), norm(&vp), norm(&vn));
            let (mp, mn) = (nup * nvp, nun * nvn);
            let (x, y, nx, ny, sigma) = if mp >= mn {
                (up, vp, nup, nvp, mp)
            } else {
                (un, vn, nun, nvn, mn)
            };
            let f = (s[c] * sigma).sqrt();
            if nx > 0.0 && ny > 0.0 {
                (x.iter().map(|a| f * a / nx).collect(), y.iter().map(|a| f * a / ny).collect())
            } else {
                (vec![0.0; m], vec![0.0; n])
            }
        };
        for i in 0..m {
            w[(i, c)] = wc[i];
        }
        for j in 0..n {
            ht[(j, c)] = hc[j];
        }
    }
    let mean = gamma.sum() / (m as f64 * n as f64);
    for x in w.data_mut().iter_mut().chain(ht.data_mut().iter_mut()) {
        if !(*x > 0.0) {
            *x = mean;
        }
    }
    if !w.is_finite() || !ht.is_finite() {
        return Err(Error::Numerical("NNDSVD produced non-finite values".into()));
    }
    Ok((w, ht))
}

fn into_pair(f: Fit, k: usize) -> FactorPair {
    let final_error = f.trace.last().copied().unwrap_or(0.0).sqrt();
    FactorPair {
        w: f.w,
        h: f.ht.transpose(),
        k,
        final_error,
        iterations: f.iterations,
        objective_trace: f.trace,
    }
}

pub fn factorize(gamma: &CscMatrix, k: usize, config: &NmfConfig) -> Result<FactorPair> {
    config.validate()?;
    check_rank(gamma, k)?;
    if gamma.values().iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Numerical("input matrix has negative or non-finite entries".into()));
    }
    let problem = Problem::new(gamma, &[]);
    Ok(into_pair(best_fit(&problem, gamma, k, config)?, k))
}

/// Start 0 uses `config.seed` itself; start r > 0 its own substream.
fn best_fit(problem: &Problem, gamma: &CscMatrix, k: usize, config: &NmfConfig) -> Result<Fit> {
    let mut best: Option<Fit> = None;
    for r in 0..config.restarts {
        let mut rng = match r {
            0 => rng::rng_from_seed(config.seed),
            _ => rng::substream(config.seed, &format!("nmf-restart-{r}")),
        };
        let (w, ht) = initialize(gamma, k, config, &mut rng)?;
        let f = fit(problem, w, ht, config)?;
        if best.as_ref().is_none_or(|b| f.trace.last() < b.trace.last()) {
            best = Some(f);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub k: usize,
    /// `(k, held-out Frobenius error)` per grid value, ascending in k.
    pub errors: Vec<(usize, f64)>,
    pub heldout_entries: usize,
    /// `‖Γ‖_F` restricted to the held-out entries.
    pub heldout_norm: f64,
}

/// Picks the k with the smallest held-out reconstruction error, preferring
/// the smaller k among near-ties (within `k_tie_tol` of the held-out norm).
///
/// A `holdout_fraction` of the nonzero entries is masked (the same mask for
/// every k); entries are only masked while their row and column keep at
/// least one observed entry.
pub fn select_k(gamma: &CscMatrix, k_grid: &[usize], holdout_fraction: f64, config: &NmfConfig) -> Result<KSelection> {
    config.validate()?;
    if k_grid.is_empty() {
        return Err(Error::InvalidParameter("k grid is empty".into()));
    }
    if !(holdout_fraction > 0.0 && holdout_fraction < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "holdout fraction {holdout_fraction} must lie in (0, 0.5)"
        )));
    }
    let mut grid = k_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    for &k in &grid {
        check_rank(gamma, k)?;
    }
    let held = holdout_mask(gamma, holdout_fraction, &mut rng::substream(config.seed, "nmf-holdout"));
    let problem = Problem::new(gamma, &held);
    let mut errors = Vec::with_capacity(grid.len());
    for &k in &grid {
        let f = best_fit(&problem, gamma, k, config)?;
        let err = held
            .iter()
            .map(|&(i, j)| {
                let d = gamma.get(i, j) - dot(f.w.row(i), f.ht.row(j));
                d * d
            })
            .sum::<f64>()
            .sqrt();
        log::debug!("select_k: k={k} held-out error {err:.6}");
        errors.push((k, err));
    }
    let heldout_norm = held.iter().map(|&(i, j)| gamma.get(i, j).powi(2)).sum::<f64>().sqrt();
    let min_err = errors.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
    let cutoff = min_err + config.k_tie_tol * heldout_norm;
    let k = errors.iter().find(|e| e.1 <= cutoff).map(|e| e.0).unwrap();
    Ok(KSelection {
        k,
        errors,
        heldout_entries: held.len(),
        heldout_norm,
    })
}

fn holdout_mask(gamma: &CscMatrix, fraction: f64, rng: &mut StreamRng) -> Vec<(usize, usize)> {
    let mut entries: Vec<(usize, usize)> = gamma.triplets().map(|(i, j, _)| (i, j)).collect();
    let target = ((entries.len() as f64 * fraction).round() as usize).max(1);
    entries.shuffle(rng);
    let mut col_left: Vec<usize> = (0..gamma.ncols()).map(|j| gamma.column_nnz(j)).collect();
    let mut row_left = vec![0usize; gamma.nrows()];
    for &(i, _) in &entries {
        row_left[i] += 1;
    }
    let mut held = Vec::with_capacity(target);
    for (i, j) in entries {
        if held.len() == target {
            break;
        }
        if col_left[j] > 1 && row_left[i] > 1 {
            col_left[j] -= 1;
            row_left[i] -= 1;
            held.push((i, j));
        }
    }
    held.sort_unstable();
    held
}

/// Representative buckets of one message (function B).
pub type BucketList = Vec<(usize, f64)>;

/// Normalizes column `message` of H and keeps every bucket whose probability
/// is at least `theta` times the column maximum, sorted descending (ties by
/// bucket index). `theta >= 1` is hard mode: exactly the argmax.
pub fn representative_buckets(h: &DenseMatrix, message: usize, theta: f64) -> Result<BucketList> {
    if message >= h.cols() {
        return Err(Error::InvalidParameter(format!("message column {message} out of range")));
    }
    let col = h.column(message);
    let total: f64 = col.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate(format!("H column {message} sums to zero")));
    }
    let probs: Vec<f64> = col.iter().map(|v| v / total).collect();
    let (argmax, max) = probs
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, p)| if p > best.1 { (i, p) } else { best });
    if theta >= 1.0 {
        return Ok(vec![(argmax, max)]);
    }
    let cut = theta * max;
    let mut out: BucketList = probs.into_iter().enumerate().filter(|&(_, p)| p >= cut && p > 0.0).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(out)
}

/// Function B applied to every message column.
pub fn bucket_assignments(h: &DenseMatrix, theta: f64) -> Result<Vec<BucketList>> {
    (0..h.cols()).map(|j| representative_buckets(h, j, theta)).collect()
}

/// The `n_terms` strongest terms of a bucket (function T), descending by
/// weight with lexicographic tie-break.
pub fn top_terms(w: &DenseMatrix, vocab: &Vocabulary, bucket: usize, n_terms: usize) -> Result<Vec<(String, f64)>> {
    if bucket >= w.cols() {
        return Err(Error::InvalidParameter(format!(
            "bucket {bucket} out of range (k = {})",
            w.cols()
        )));
    }
    rank_terms(&w.column(bucket), vocab, n_terms)
}

/// Ranks vocabulary entries by a per-term score.
pub fn rank_terms(scores: &[f64], vocab: &Vocabulary, n_terms: usize) -> Result<Vec<(String, f64)>> {
    if n_terms == 0 || n_terms > vocab.len() || scores.len() != vocab.len() {
        return Err(Error::InvalidParameter(format!(
            "n_terms must lie in 1..={} (got {n_terms})",
            vocab.len()
        )));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| vocab.term(a).cmp(vocab.term(b))));
    Ok(idx
        .into_iter()
        .take(n_terms)
        .map(|i| (vocab.term(i).to_owned(), scores[i]))
        .collect())
}
