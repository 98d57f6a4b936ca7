//! Domain types shared by every stage: annotations, Dawid-Skene parameters,
//! per-worker score tables and the estimate vector the estimators produce.
//!
//! Labels are 0-based everywhere inside the crate. File formats and the CLI
//! use 1-based labels and convert at the boundary.

use crate::error::{input, Result};
use crate::scalar::{argmax, normalize_log_weights, Scalar};

/// Probability floor applied to every prior and confusion entry so that the
/// log scores stay finite (log 1e-6 is about -13.8).
pub const SMOOTHING_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProblemDims {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub d: usize,
}

impl ProblemDims {
    pub fn new(n: usize, m: usize, k: usize, d: usize) -> Result<Self> {
        if n == 0 || m == 0 || d == 0 {
            return input(format!("dimensions must be positive (n={n}, m={m}, d={d})"));
        }
        if k < 2 {
            return input(format!("need at least two classes, got k={k}"));
        }
        Ok(Self { n, m, k, d })
    }
}

/// Dense row-major item features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    n: usize,
    d: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if n == 0 || d == 0 {
            return input("feature matrix must have at least one row and column");
        }
        let mut data = Vec::with_capacity(n * d);
        for (j, row) in rows.into_iter().enumerate() {
            if row.len() != d {
                return input(format!("row {j} has {} features, expected {d}", row.len()));
            }
            data.extend(row);
        }
        Self::from_flat(n, d, data)
    }

    pub fn from_flat(n: usize, d: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * d {
            return input(format!("expected {} values for {n}x{d}, got {}", n * d, data.len()));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return input(format!("non-finite feature at row {}", pos / d.max(1)));
        }
        Ok(Self { n, d, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, j: usize) -> &[T] {
        &self.data[j * self.d..(j + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        (0..self.n).map(|j| self.row(j))
    }

    /// New matrix made of the given rows, in order.
    pub fn select(&self, items: &[usize]) -> Self {
        let mut data = Vec::with_capacity(items.len() * self.d);
        for &j in items {
            data.extend_from_slice(self.row(j));
        }
        Self { n: items.len(), d: self.d, data }
    }
}

/// Sparse worker x item label store. The stored keys are exactly the
/// observation set; per-item and per-worker slices are kept sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationMatrix {
    m: usize,
    n: usize,
    k: usize,
    by_item: Vec<Vec<(usize, usize)>>,
    by_worker: Vec<Vec<(usize, usize)>>,
    len: usize,
}

impl AnnotationMatrix {
    pub fn new(m: usize, n: usize, k: usize) -> Self {
        Self { m, n, k, by_item: vec![Vec::new(); n], by_worker: vec![Vec::new(); m], len: 0 }
    }

    pub fn from_triples(
        m: usize,
        n: usize,
        k: usize,
        triples: impl IntoIterator<Item = (usize, usize, usize)>,
    ) -> Result<Self> {
        let mut ann = Self::new(m, n, k);
        for (worker, item, label) in triples {
            ann.insert(worker, item, label)?;
        }
        Ok(ann)
    }

    /// Store `label` (0-based) given by `worker` on `item`. Each pair may be
    /// observed at most once.
    pub fn insert(&mut self, worker: usize, item: usize, label: usize) -> Result<()> {
        if worker >= self.m || item >= self.n {
            return input(format!("annotation (worker {worker}, item {item}) outside {}x{}", self.m, self.n));
        }
        if label >= self.k {
            return input(format!("label {label} outside 0..{}", self.k));
        }
        let slot = &mut self.by_item[item];
        match slot.binary_search_by_key(&worker, |&(w, _)| w) {
            Ok(_) => return input(format!("duplicate annotation (worker {worker}, item {item})")),
            Err(pos) => slot.insert(pos, (worker, label)),
        }
        let slot = &mut self.by_worker[worker];
        let pos = slot.partition_point(|&(j, _)| j < item);
        slot.insert(pos, (item, label));
        self.len += 1;
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `(worker, label)` pairs observed on `item`.
    pub fn item(&self, item: usize) -> &[(usize, usize)] {
        &self.by_item[item]
    }

    /// `(item, label)` pairs annotated by `worker`.
    pub fn worker(&self, worker: usize) -> &[(usize, usize)] {
        &self.by_worker[worker]
    }

    pub fn get(&self, worker: usize, item: usize) -> Option<usize> {
        let slot = self.by_item.get(item)?;
        slot.binary_search_by_key(&worker, |&(w, _)| w).ok().map(|pos| slot[pos].1)
    }

    /// All `(worker, item, label)` triples ordered by item then worker.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.by_item.iter().enumerate().flat_map(|(j, obs)| obs.iter().map(move |&(i, l)| (i, j, l)))
    }

    /// Restrict to the given items, renumbered in the order given.
    pub fn select_items(&self, items: &[usize]) -> Self {
        let mut out = Self::new(self.m, items.len(), self.k);
        for (new_j, &j) in items.iter().enumerate() {
            for &(i, l) in self.item(j) {
                out.insert(i, new_j, l).expect("indices already validated");
            }
        }
        out
    }
}

/// Clamp a nonnegative weight vector onto the probability simplex with every
/// entry at least `floor`, keeping the unclamped entries proportional to
/// their input weights.
///
/// This is the maximizer of `sum w_l log p_l` subject to `p_l >= floor`,
/// which keeps EM monotone when used as the M-step.
pub fn floor_simplex<T: Scalar>(weights: &mut [T], floor: T) {
    let k = weights.len();
    debug_assert!(T::from_count(k) * floor <= T::one());
    let mut clamped = vec![false; k];
    loop {
        let free_mass: T = weights.iter().zip(&clamped).filter(|(_, &c)| !c).map(|(&w, _)| w).sum();
        let n_clamped = clamped.iter().filter(|&&c| c).count();
        let budget = T::one() - T::from_count(n_clamped) * floor;
        let scale = if free_mass > T::zero() { budget / free_mass } else { T::zero() };
        let mut changed = false;
        for (w, c) in weights.iter().zip(clamped.iter_mut()) {
            if !*c && *w * scale < floor {
                *c = true;
                changed = true;
            }
        }
        if !changed {
            for (w, &c) in weights.iter_mut().zip(&clamped) {
                *w = if c { floor } else { *w * scale };
            }
            return;
        }
    }
}

fn check_simplex<T: Scalar>(p: &[T], what: &str) -> Result<()> {
    if p.iter().any(|&x| !x.is_finite() || x < T::zero()) {
        return input(format!("{what} has a negative or non-finite entry"));
    }
    let sum: T = p.iter().copied().sum();
    if (sum - T::one()).abs() > T::simplex_tol() {
        return input(format!("{what} sums to {sum}, expected 1"));
    }
    Ok(())
}

/// Per-worker confusion matrix, entry `[l, y]` = P(worker reports l | truth y).
/// Columns are stochastic and floored at [`SMOOTHING_FLOOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix<T> {
    k: usize,
    data: Vec<T>,
}

impl<T: Scalar> ConfusionMatrix<T> {
    /// Build from a row-major `[l][y]` table whose columns already sum to one.
    pub fn new(k: usize, table: Vec<T>) -> Result<Self> {
        if k < 2 || table.len() != k * k {
            return input(format!("confusion matrix needs {k}x{k} entries, k >= 2"));
        }
        for y in 0..k {
            let col: Vec<T> = (0..k).map(|l| table[l * k + y]).collect();
            check_simplex(&col, &format!("confusion column {}", y + 1))?;
        }
        // rescaling would perturb the last bits of tables read back from files
        if table.iter().all(|&v| v >= T::lit(SMOOTHING_FLOOR)) {
            return Ok(Self { k, data: table });
        }
        Ok(Self::floored(k, table))
    }

    /// Build from nonnegative row-major `[l][y]` weights, normalizing each column.
    pub fn from_column_weights(k: usize, weights: Vec<T>) -> Result<Self> {
        if k < 2 || weights.len() != k * k {
            return input(format!("confusion matrix needs {k}x{k} entries, k >= 2"));
        }
        if weights.iter().any(|&w| !w.is_finite() || w < T::zero()) {
            return input("confusion weights must be finite and nonnegative");
        }
        for y in 0..k {
            if (0..k).all(|l| weights[l * k + y] == T::zero()) {
                return input(format!("confusion column {} has zero mass", y + 1));
            }
        }
        Ok(Self::floored(k, weights))
    }

    /// Symmetric-noise matrix: `accuracy` on the diagonal, the rest spread evenly.
    pub fn symmetric(k: usize, accuracy: T) -> Result<Self> {
        if !(accuracy >= T::zero() && accuracy <= T::one()) {
            return input(format!("accuracy {accuracy} outside [0, 1]"));
        }
        let off = (T::one() - accuracy) / T::from_count(k - 1);
        let table = (0..k * k).map(|idx| if idx / k == idx % k { accuracy } else { off }).collect();
        Self::from_column_weights(k, table)
    }

    pub fn uniform(k: usize) -> Self {
        let v = T::one() / T::from_count(k);
        Self { k, data: vec![v; k * k] }
    }

    fn floored(k: usize, mut data: Vec<T>) -> Self {
        let floor = T::lit(SMOOTHING_FLOOR);
        for y in 0..k {
            let mut col: Vec<T> = (0..k).map(|l| data[l * k + y]).collect();
            floor_simplex(&mut col, floor);
            for (l, v) in col.into_iter().enumerate() {
                data[l * k + y] = v;
            }
        }
        Self { k, data }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// P(report `label` | truth `truth`).
    pub fn prob(&self, label: usize, truth: usize) -> T {
        self.data[label * self.k + truth]
    }

    /// Column `truth`: the distribution of reported labels.
    pub fn column(&self, truth: usize) -> Vec<T> {
        (0..self.k).map(|l| self.prob(l, truth)).collect()
    }

    /// Row-major `[l][y]` entries.
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// `L[y] = sum_l soft[l] * mu[l, y]`, the likelihood of a soft report.
    pub fn soft_likelihood(&self, soft: &SoftAnnotation<T>) -> Vec<T> {
        (0..self.k).map(|y| soft.probs().iter().enumerate().map(|(l, &p)| p * self.prob(l, y)).sum()).collect()
    }
}

/// Dawid-Skene parameters: class prior and one confusion matrix per worker.
#[derive(Debug, Clone, PartialEq)]
pub struct DsParams<T> {
    prior: Vec<T>,
    confusions: Vec<ConfusionMatrix<T>>,
}

impl<T: Scalar> DsParams<T> {
    pub fn new(mut prior: Vec<T>, confusions: Vec<ConfusionMatrix<T>>) -> Result<Self> {
        let k = prior.len();
        if k < 2 {
            return input("prior needs at least two classes");
        }
        check_simplex(&prior, "class prior")?;
        if confusions.is_empty() {
            return input("need at least one worker");
        }
        if let Some(i) = confusions.iter().position(|c| c.k() != k) {
            return input(format!("worker {} confusion has wrong class count", i + 1));
        }
        floor_simplex(&mut prior, T::lit(SMOOTHING_FLOOR));
        Ok(Self { prior, confusions })
    }

    /// Uniform prior over the classes of the given confusion matrices.
    pub fn with_uniform_prior(confusions: Vec<ConfusionMatrix<T>>) -> Result<Self> {
        let k = confusions.first().map_or(0, ConfusionMatrix::k);
        if k == 0 {
            return input("need at least one worker");
        }
        Self::new(vec![T::one() / T::from_count(k); k], confusions)
    }

    pub fn k(&self) -> usize {
        self.prior.len()
    }

    pub fn m(&self) -> usize {
        self.confusions.len()
    }

    pub fn prior(&self) -> &[T] {
        &self.prior
    }

    pub fn confusions(&self) -> &[ConfusionMatrix<T>] {
        &self.confusions
    }

    pub fn confusion(&self, worker: usize) -> &ConfusionMatrix<T> {
        &self.confusions[worker]
    }
}

/// A probability vector over the k labels: an imitator's guess of a worker's
/// report, or a posterior belief.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAnnotation<T> {
    probs: Vec<T>,
}

impl<T: Scalar> SoftAnnotation<T> {
    pub fn new(probs: Vec<T>) -> Result<Self> {
        if probs.len() < 2 {
            return input("soft annotation needs at least two classes");
        }
        check_simplex(&probs, "soft annotation")?;
        Ok(Self { probs })
    }

    /// Normalize nonnegative weights.
    pub fn from_weights(mut weights: Vec<T>) -> Result<Self> {
        let sum: T = weights.iter().copied().sum();
        if weights.iter().any(|&w| !w.is_finite() || w < T::zero()) || !(sum > T::zero()) {
            return input("soft annotation weights must be nonnegative with positive mass");
        }
        for w in weights.iter_mut() {
            *w /= sum;
        }
        Self::new(weights)
    }

    pub fn point_mass(k: usize, label: usize) -> Self {
        assert!(label < k, "label {label} outside 0..{k}");
        let mut probs = vec![T::zero(); k];
        probs[label] = T::one();
        Self { probs }
    }

    pub fn uniform(k: usize) -> Self {
        Self { probs: vec![T::one() / T::from_count(k); k] }
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Per-worker score table, entry `[y, l]` = S_i(y, l).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable<T> {
    k: usize,
    data: Vec<T>,
}

impl<T: Scalar> ScoreTable<T> {
    /// Row-major `[y][l]` entries.
    pub fn new(k: usize, data: Vec<T>) -> Result<Self> {
        if k < 2 || data.len() != k * k {
            return input(format!("score table needs {k}x{k} entries, k >= 2"));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return input("score table entries must be finite");
        }
        Ok(Self { k, data })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn score(&self, truth: usize, label: usize) -> T {
        self.data[truth * self.k + label]
    }
}

/// The per-worker score tables of one aggregation rule plus the per-class
/// offset added before taking the argmax (`log(prior)/m` for Dawid-Skene,
/// zero for majority voting). Estimators report values without the offset.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel<T> {
    tables: Vec<ScoreTable<T>>,
    offset: Vec<T>,
}

impl<T: Scalar> ScoreModel<T> {
    pub fn new(tables: Vec<ScoreTable<T>>, offset: Vec<T>) -> Result<Self> {
        let k = offset.len();
        if tables.is_empty() {
            return input("score model needs at least one worker");
        }
        if tables.iter().any(|t| t.k() != k) {
            return input("score tables and offset disagree on class count");
        }
        Ok(Self { tables, offset })
    }

    pub fn dawid_skene(params: &DsParams<T>) -> Self {
        let m = T::from_count(params.m());
        let tables = (0..params.m()).map(|i| ds_score_table(params, i).expect("worker in range")).collect();
        let offset = params.prior().iter().map(|&p| p.ln() / m).collect();
        Self { tables, offset }
    }

    pub fn majority_vote(k: usize, m: usize) -> Self {
        Self { tables: vec![mv_score_table(k); m], offset: vec![T::zero(); k] }
    }

    pub fn m(&self) -> usize {
        self.tables.len()
    }

    pub fn k(&self) -> usize {
        self.offset.len()
    }

    pub fn table(&self, worker: usize) -> &ScoreTable<T> {
        &self.tables[worker]
    }

    pub fn tables(&self) -> &[ScoreTable<T>] {
        &self.tables
    }

    pub fn offset(&self) -> &[T] {
        &self.offset
    }
}

/// Estimated `v(y)` for every class, the chosen label and what it cost.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateVector<T> {
    pub values: Vec<T>,
    pub chosen: usize,
    pub realized_cost: usize,
}

impl<T: Scalar> EstimateVector<T> {
    /// `chosen` is the lowest index maximizing `values[y] + offset[y]`.
    pub fn new(values: Vec<T>, offset: &[T], realized_cost: usize) -> Self {
        debug_assert_eq!(values.len(), offset.len());
        let shifted: Vec<T> = values.iter().zip(offset).map(|(&v, &o)| v + o).collect();
        Self { chosen: argmax(&shifted), values, realized_cost }
    }
}

/// Posterior over the true label given hard reports `(worker, label)`.
pub fn ds_posterior<T: Scalar>(params: &DsParams<T>, obs: &[(usize, usize)]) -> Result<SoftAnnotation<T>> {
    let k = params.k();
    let mut seen = vec![false; params.m()];
    for &(i, l) in obs {
        if i >= params.m() || l >= k {
            return input(format!("observation (worker {i}, label {l}) out of range"));
        }
        if std::mem::replace(&mut seen[i], true) {
            return input(format!("worker {i} reported twice"));
        }
    }
    let mut logs: Vec<T> = params.prior().iter().map(|p| p.ln()).collect();
    for &(i, l) in obs {
        let mu = params.confusion(i);
        for (y, lp) in logs.iter_mut().enumerate() {
            *lp += mu.prob(l, y).ln();
        }
    }
    normalize_log_weights(&mut logs);
    Ok(SoftAnnotation { probs: logs })
}

/// Posterior over the true label when every worker's report is itself a
/// distribution: each worker contributes `log sum_l soft[l] mu[l, y]`.
pub fn ds_soft_posterior<T: Scalar>(params: &DsParams<T>, softs: &[SoftAnnotation<T>]) -> Result<SoftAnnotation<T>> {
    if softs.len() != params.m() {
        return input(format!("expected {} soft annotations, got {}", params.m(), softs.len()));
    }
    let mut logs: Vec<T> = params.prior().iter().map(|p| p.ln()).collect();
    for (mu, soft) in params.confusions().iter().zip(softs) {
        for (lp, lik) in logs.iter_mut().zip(mu.soft_likelihood(soft)) {
            *lp += lik.ln();
        }
    }
    normalize_log_weights(&mut logs);
    Ok(SoftAnnotation { probs: logs })
}

/// `[y, l] = log mu_worker[l, y]`. The prior term is carried separately by
/// [`ScoreModel::offset`].
pub fn ds_score_table<T: Scalar>(params: &DsParams<T>, worker: usize) -> Result<ScoreTable<T>> {
    if worker >= params.m() {
        return input(format!("worker {worker} outside 0..{}", params.m()));
    }
    let k = params.k();
    let mu = params.confusion(worker);
    let data = (0..k * k).map(|idx| mu.prob(idx % k, idx / k).ln()).collect();
    ScoreTable::new(k, data)
}

/// Majority-vote indicator table.
pub fn mv_score_table<T: Scalar>(k: usize) -> ScoreTable<T> {
    let data = (0..k * k).map(|idx| if idx / k == idx % k { T::one() } else { T::zero() }).collect();
    ScoreTable { k, data }
}

/// `E[S(y, l)]` with `l` drawn from `soft`.
pub fn expected_score<T: Scalar>(table: &ScoreTable<T>, soft: &SoftAnnotation<T>, truth: usize) -> T {
    debug_assert_eq!(table.k(), soft.k());
    soft.probs().iter().enumerate().map(|(l, &p)| p * table.score(truth, l)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_worker() -> DsParams<f64> {
        // [l][y]: column y=0 is (0.8, 0.2), column y=1 is (0.3, 0.7)
        let mu = ConfusionMatrix::new(2, vec![0.8, 0.3, 0.2, 0.7]).unwrap();
        DsParams::new(vec![0.5, 0.5], vec![mu]).unwrap()
    }

    #[test]
    fn posterior_single_report() {
        let post = ds_posterior(&one_worker(), &[(0, 0)]).unwrap();
        // 0.5*0.8 : 0.5*0.3
        assert!((post.probs()[0] - 8.0 / 11.0).abs() < 1e-12);
        assert!((post.probs()[1] - 3.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn posterior_without_reports_is_prior() {
        let mu = ConfusionMatrix::<f64>::uniform(3);
        let params = DsParams::new(vec![0.2, 0.3, 0.5], vec![mu]).unwrap();
        let post = ds_posterior(&params, &[]).unwrap();
        for (a, b) in post.probs().iter().zip(params.prior()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn posterior_uninformative_workers() {
        let params = DsParams::with_uniform_prior(vec![ConfusionMatrix::<f64>::uniform(4); 3]).unwrap();
        let post = ds_posterior(&params, &[(0, 1), (2, 3)]).unwrap();
        for &p in post.probs() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn posterior_rejects_bad_reports() {
        let params = one_worker();
        assert!(ds_posterior(&params, &[(1, 0)]).is_err());
        assert!(ds_posterior(&params, &[(0, 2)]).is_err());
        assert!(ds_posterior(&params, &[(0, 0), (0, 1)]).is_err());
    }

    #[test]
    fn ds_table_entries() {
        let params = one_worker();
        let table = ds_score_table(&params, 0).unwrap();
        assert_eq!(table.score(0, 0), 0.8f64.ln());
        assert_eq!(table.score(1, 0), 0.3f64.ln());
        assert!(ds_score_table(&params, 1).is_err());

        let uni = DsParams::with_uniform_prior(vec![ConfusionMatrix::<f64>::uniform(3)]).unwrap();
        let t = ds_score_table(&uni, 0).unwrap();
        for y in 0..3 {
            for l in 0..3 {
                assert_eq!(t.score(y, l), (1.0f64 / 3.0).ln());
            }
        }
    }

    #[test]
    fn ds_table_at_floor_is_finite() {
        let mu = ConfusionMatrix::<f64>::new(2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(mu.prob(1, 0), SMOOTHING_FLOOR);
        let params = DsParams::with_uniform_prior(vec![mu]).unwrap();
        let t = ds_score_table(&params, 0).unwrap();
        assert_eq!(t.score(0, 1), SMOOTHING_FLOOR.ln());
        assert!(t.score(0, 1).is_finite());
    }

    #[test]
    fn mv_table_is_identity() {
        let t = mv_score_table::<f64>(3);
        assert_eq!(t.score(1, 1), 1.0);
        assert_eq!(t.score(1, 2), 0.0);
        let total: f64 = (0..3).flat_map(|y| (0..3).map(move |l| (y, l))).map(|(y, l)| t.score(y, l)).sum();
        assert_eq!(total, 3.0);
    }

    #[test]
    fn expected_score_cases() {
        let mv = mv_score_table::<f64>(4);
        assert_eq!(expected_score(&mv, &SoftAnnotation::point_mass(4, 1), 1), 1.0);
        for y in 0..4 {
            assert_eq!(expected_score(&mv, &SoftAnnotation::uniform(4), y), 0.25);
        }
        let t = ScoreTable::new(2, vec![3.0, -1.0, 0.5, 2.0]).unwrap();
        let half = SoftAnnotation::uniform(2);
        assert_eq!(expected_score(&t, &half, 0), 0.5 * 3.0 - 0.5);
    }

    #[test]
    fn floor_keeps_large_entries() {
        let mu = ConfusionMatrix::<f64>::new(2, vec![0.8, 0.3, 0.2, 0.7]).unwrap();
        assert_eq!(mu.prob(0, 0), 0.8);
    }

    #[test]
    fn floor_simplex_is_stochastic() {
        let mut p = vec![0.0, 0.0, 5.0, 1e-9];
        floor_simplex(&mut p, 1e-6);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&x| x >= 1e-6));
    }

    #[test]
    fn annotation_matrix_slices() {
        let ann = AnnotationMatrix::from_triples(3, 2, 2, [(2, 0, 1), (0, 0, 0), (1, 1, 1)]).unwrap();
        assert_eq!(ann.item(0), &[(0, 0), (2, 1)]);
        assert_eq!(ann.worker(1), &[(1, 1)]);
        assert_eq!(ann.get(2, 0), Some(1));
        assert_eq!(ann.get(2, 1), None);
        assert_eq!(ann.len(), 3);
        let mut dup = ann.clone();
        assert!(dup.insert(0, 0, 1).is_err());
        assert!(dup.insert(3, 0, 1).is_err());
        assert!(dup.insert(0, 1, 2).is_err());
    }

    #[test]
    fn chosen_ignores_constant_shift() {
        let v = EstimateVector::new(vec![0.1f64, 0.4, 0.4], &[0.0; 3], 0);
        assert_eq!(v.chosen, 1);
        let shifted: Vec<f64> = v.values.iter().map(|x| x + 7.5).collect();
        assert_eq!(EstimateVector::new(shifted, &[0.0; 3], 0).chosen, 1);
    }

    fn confusion_strategy(k: usize) -> impl Strategy<Value = ConfusionMatrix<f64>> {
        prop::collection::vec(0.01f64..1.0, k * k)
            .prop_map(move |w| ConfusionMatrix::from_column_weights(k, w).unwrap())
    }

    proptest! {
        #[test]
        fn posterior_is_order_invariant_and_matches_direct_product(
            confs in prop::collection::vec(confusion_strategy(3), 1..5),
            prior in prop::collection::vec(0.05f64..1.0, 3),
            labels in prop::collection::vec(0usize..3, 5),
        ) {
            let m = confs.len();
            let prior = SoftAnnotation::from_weights(prior).unwrap().probs().to_vec();
            let params = DsParams::new(prior, confs).unwrap();
            let obs: Vec<(usize, usize)> = (0..m).map(|i| (i, labels[i])).collect();
            let post = ds_posterior(&params, &obs).unwrap();
            let mut rev = obs.clone();
            rev.reverse();
            let post_rev = ds_posterior(&params, &rev).unwrap();

            let mut direct: Vec<f64> = (0..3)
                .map(|y| params.prior()[y] * obs.iter().map(|&(i, l)| params.confusion(i).prob(l, y)).product::<f64>())
                .collect();
            let z: f64 = direct.iter().sum();
            direct.iter_mut().for_each(|x| *x /= z);
            for y in 0..3 {
                prop_assert!((post.probs()[y] - direct[y]).abs() < 1e-10);
                prop_assert!((post.probs()[y] - post_rev.probs()[y]).abs() < 1e-12);
            }
        }

        #[test]
        fn point_mass_expected_score_is_exact(
            entries in prop::collection::vec(-20.0f64..20.0, 9),
            y in 0usize..3,
            l in 0usize..3,
        ) {
            let table = ScoreTable::new(3, entries).unwrap();
            prop_assert_eq!(expected_score(&table, &SoftAnnotation::point_mass(3, l), y), table.score(y, l));
        }

        #[test]
        fn mv_argmax_is_plurality(labels in prop::collection::vec(0usize..4, 1..12)) {
            let mv = mv_score_table::<f64>(4);
            let totals: Vec<f64> = (0..4).map(|y| labels.iter().map(|&l| mv.score(y, l)).sum()).collect();
            let mut counts = [0usize; 4];
            for &l in &labels { counts[l] += 1; }
            let top = *counts.iter().max().unwrap();
            let plurality = counts.iter().position(|&c| c == top).unwrap();
            prop_assert_eq!(argmax(&totals), plurality);
        }
    }
}
