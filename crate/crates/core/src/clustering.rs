//! K-means clustering of occupations (raw skill importances as features)
//! and of skills (cross-occupation correlation profiles as features), PCA
//! projection, and skill-type z-score profiles across job clusters.

use std::cmp::Ordering;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::grouping::{group_order, Grouping, UNASSIGNED};
use crate::linalg::{symmetric_eigen, Matrix};
use crate::rng::stream_rng;
use crate::scalar::{compensated_sum, mean, population_std, Scalar};

pub const DEFAULT_JOB_CLUSTERS: usize = 5;
pub const DEFAULT_SKILL_CLUSTERS: usize = 10;

/// Dense feature table with row and column ids.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureMatrix<T> {
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    pub values: Matrix<T>,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn new(row_ids: Vec<String>, col_ids: Vec<String>, values: Matrix<T>) -> Result<Self> {
        if values.rows() != row_ids.len() {
            return Err(Error::LengthMismatch {
                left: values.rows(),
                right: row_ids.len(),
            });
        }
        if values.cols() != col_ids.len() {
            return Err(Error::LengthMismatch {
                left: values.cols(),
                right: col_ids.len(),
            });
        }
        Ok(Self {
            row_ids,
            col_ids,
            values,
        })
    }

    /// Unnamed rows/columns, for ad-hoc numeric data.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let values = Matrix::from_rows(rows);
        let width = (rows.len().max(1) - 1).to_string().len();
        Self {
            row_ids: (0..values.rows()).map(|i| format!("r{i:0width$}")).collect(),
            col_ids: (0..values.cols()).map(|j| format!("c{j}")).collect(),
            values,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KMeansOptions {
    pub max_iters: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tol: f64,
    /// Independent k-means++ starts; the lowest final inertia wins.
    pub restarts: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            max_iters: 300,
            tol: 1e-8,
            restarts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterAssignment<T> {
    pub k: usize,
    pub row_ids: Vec<String>,
    /// Cluster of each row, canonical ids in `0..k`.
    pub labels: Vec<usize>,
    pub centroids: Matrix<T>,
    pub inertia: T,
    pub seed: u64,
    /// Inertia after each assignment step of the winning start.
    pub inertia_history: Vec<T>,
    /// Inertia of the k-means++ seeds of the winning start.
    pub initial_inertia: T,
}

impl<T: Scalar> ClusterAssignment<T> {
    pub fn label_of(&self, row_id: &str) -> Option<usize> {
        self.row_ids.iter().position(|r| r == row_id).map(|i| self.labels[i])
    }

    pub fn members(&self, cluster: usize) -> Vec<&str> {
        self.row_ids
            .iter()
            .zip(&self.labels)
            .filter(|&(_, &l)| l == cluster)
            .map(|(r, _)| r.as_str())
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }

    pub fn grouping(&self) -> Grouping {
        self.row_ids
            .iter()
            .zip(&self.labels)
            .map(|(r, l)| (r.clone(), l.to_string()))
            .collect()
    }
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .fold(T::zero(), |acc, d| acc + d)
}

/// Nearest centroid per row (ties to the lower index) and the squared distance.
fn assign<T: Scalar>(x: &Matrix<T>, centroids: &Matrix<T>) -> Vec<(usize, T)> {
    (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let row = x.row(i);
            let mut best = (0, sq_dist(row, centroids.row(0)));
            for c in 1..centroids.rows() {
                let d = sq_dist(row, centroids.row(c));
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .collect()
}

fn kmeans_pp<T: Scalar, R: Rng>(x: &Matrix<T>, k: usize, rng: &mut R) -> Matrix<T> {
    let n = x.rows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.gen_range(0..n));
    let mut d2: Vec<T> = (0..n).map(|i| sq_dist(x.row(i), x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total = compensated_sum(d2.iter().copied());
        let next = if total > T::zero() {
            let target = T::lit(rng.gen::<f64>()) * total;
            let mut acc = T::zero();
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > T::zero() && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `target` just above the running sum.
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > T::zero()).expect("total > 0"))
        } else {
            // All remaining points coincide with a seed; pick any unused row.
            let unused: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            unused[rng.gen_range(0..unused.len())]
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            let nd = sq_dist(x.row(i), x.row(next));
            if nd < *d {
                *d = nd;
            }
        }
    }
    let mut c = Matrix::zeros(k, x.cols());
    for (ci, &row) in chosen.iter().enumerate() {
        c.row_mut(ci).copy_from_slice(x.row(row));
    }
    c
}

/// Gives every empty cluster the point farthest from its current centroid
/// (taken from a cluster that keeps at least one member).
fn repair_empty<T: Scalar>(x: &Matrix<T>, centroids: &mut Matrix<T>, assigned: &mut [(usize, T)]) {
    let k = centroids.rows();
    loop {
        let mut counts = vec![0usize; k];
        for &(c, _) in assigned.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&n| n == 0) else {
            return;
        };
        let donor = assigned
            .iter()
            .enumerate()
            .filter(|(_, &(c, _))| counts[c] > 1)
            .max_by(|a, b| {
                a.1 .1
                    .partial_cmp(&b.1 .1)
                    .unwrap_or(Ordering::Equal)
                    // Prefer the lower row index on ties.
                    .then_with(|| b.0.cmp(&a.0))
            })
            .map(|(i, _)| i)
            .expect("rows >= k guarantees a donor");
        centroids.row_mut(empty).copy_from_slice(x.row(donor));
        assigned[donor] = (empty, T::zero());
    }
}

fn centroid_means<T: Scalar>(x: &Matrix<T>, assigned: &[(usize, T)], k: usize) -> Matrix<T> {
    let mut sums = Matrix::zeros(k, x.cols());
    let mut counts = vec![0usize; k];
    for (i, &(c, _)) in assigned.iter().enumerate() {
        counts[c] += 1;
        for (s, &v) in sums.row_mut(c).iter_mut().zip(x.row(i)) {
            *s += v;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        let n = T::from_usize_lossy(n.max(1));
        for s in sums.row_mut(c) {
            *s /= n;
        }
    }
    sums
}

fn inertia_of<T: Scalar>(assigned: &[(usize, T)]) -> T {
    compensated_sum(assigned.iter().map(|&(_, d)| d))
}

struct Run<T> {
    labels: Vec<usize>,
    centroids: Matrix<T>,
    inertia: T,
    history: Vec<T>,
    initial: T,
}

fn lloyd<T: Scalar>(x: &Matrix<T>, k: usize, seed: u64, start: u64, opts: &KMeansOptions) -> Run<T> {
    let mut rng = stream_rng(seed, start);
    let mut centroids = kmeans_pp(x, k, &mut rng);
    let initial = inertia_of(&assign(x, &centroids));
    let tol = T::lit(opts.tol);
    let mut history = Vec::new();

    for _ in 0..opts.max_iters.max(1) {
        let mut assigned = assign(x, &centroids);
        repair_empty(x, &mut centroids, &mut assigned);
        history.push(inertia_of(&assigned));
        let next = centroid_means(x, &assigned, k);
        let moved = (0..k)
            .map(|c| sq_dist(next.row(c), centroids.row(c)).sqrt())
            .fold(T::zero(), T::max);
        centroids = next;
        if moved < tol {
            break;
        }
    }

    // Final labels against the final centroids, centroids as exact means.
    let mut assigned = assign(x, &centroids);
    repair_empty(x, &mut centroids, &mut assigned);
    let centroids = centroid_means(x, &assigned, k);
    let assigned: Vec<(usize, T)> = assigned
        .iter()
        .enumerate()
        .map(|(i, &(c, _))| (c, sq_dist(x.row(i), centroids.row(c))))
        .collect();
    let inertia = inertia_of(&assigned);
    history.push(inertia);
    Run {
        labels: assigned.into_iter().map(|(c, _)| c).collect(),
        centroids,
        inertia,
        history,
        initial,
    }
}

/// Lloyd's algorithm with k-means++ seeding, relabeled canonically: clusters
/// ordered by descending size, ties by their lexicographically smallest
/// member id.
pub fn kmeans<T: Scalar>(
    matrix: &FeatureMatrix<T>,
    k: usize,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<ClusterAssignment<T>> {
    let x = &matrix.values;
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::EmptyMatrix);
    }
    if k == 0 || k > x.rows() {
        return Err(Error::KTooLarge { k, rows: x.rows() });
    }

    let mut best: Option<Run<T>> = None;
    for start in 0..opts.restarts.max(1) as u64 {
        let run = lloyd(x, k, seed, start, opts);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let run = best.expect("at least one start");

    // Canonical relabeling.
    let mut stats: Vec<(usize, usize, &str)> = (0..k)
        .map(|c| {
            let members = run.labels.iter().filter(|&&l| l == c).count();
            let smallest = matrix
                .row_ids
                .iter()
                .zip(&run.labels)
                .filter(|&(_, &l)| l == c)
                .map(|(r, _)| r.as_str())
                .min()
                .unwrap_or("");
            (c, members, smallest)
        })
        .collect();
    stats.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.2.cmp(b.2)));
    let mut remap = vec![0; k];
    let mut centroids = Matrix::zeros(k, x.cols());
    for (new, &(old, _, _)) in stats.iter().enumerate() {
        remap[old] = new;
        centroids.row_mut(new).copy_from_slice(run.centroids.row(old));
    }

    Ok(ClusterAssignment {
        k,
        row_ids: matrix.row_ids.clone(),
        labels: run.labels.iter().map(|&l| remap[l]).collect(),
        centroids,
        inertia: run.inertia,
        seed,
        inertia_history: run.history,
        initial_inertia: run.initial,
    })
}

/// Occupation × skill matrix of raw importances (absent = 0). Rows are the
/// skill-covered occupations, optionally restricted to `subset` (occupation
/// indices).
pub fn job_feature_matrix<T: Scalar>(corpus: &Corpus<T>, subset: Option<&[usize]>) -> FeatureMatrix<T> {
    let rows: Vec<usize> = match subset {
        Some(s) => s.iter().copied().filter(|&o| corpus.has_skills(o)).collect(),
        None => corpus.skill_covered_occupations(),
    };
    let mut values = Matrix::zeros(rows.len(), corpus.skills().len());
    for (i, &o) in rows.iter().enumerate() {
        for &(s, v) in corpus.importance(o) {
            values[(i, s)] = v;
        }
    }
    FeatureMatrix {
        row_ids: rows.iter().map(|&o| corpus.occupations()[o].clone()).collect(),
        col_ids: corpus.skills().to_vec(),
        values,
    }
}

pub fn job_clusters<T: Scalar>(
    corpus: &Corpus<T>,
    k: usize,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<ClusterAssignment<T>> {
    kmeans(&job_feature_matrix(corpus, None), k, seed, opts)
}

/// Pearson correlation matrix between the columns of `x`; zero-variance
/// columns get correlation 0 with everything (themselves included).
pub fn column_correlations<T: Scalar>(x: &Matrix<T>) -> (Matrix<T>, Vec<usize>) {
    let p = x.cols();
    let mut centered = x.clone();
    centered.center_columns();
    let norms: Vec<T> = (0..p)
        .map(|j| compensated_sum((0..x.rows()).map(|i| centered[(i, j)] * centered[(i, j)])).sqrt())
        .collect();
    let degenerate: Vec<usize> = (0..p).filter(|&j| norms[j] <= T::zero()).collect();
    let mut corr = Matrix::zeros(p, p);
    for a in 0..p {
        if norms[a] <= T::zero() {
            continue;
        }
        for b in a..p {
            if norms[b] <= T::zero() {
                continue;
            }
            let dot = compensated_sum((0..x.rows()).map(|i| centered[(i, a)] * centered[(i, b)]));
            let r = (dot / (norms[a] * norms[b])).max(-T::one()).min(T::one());
            corr[(a, b)] = r;
            corr[(b, a)] = r;
        }
    }
    (corr, degenerate)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkillClustering<T> {
    pub assignment: ClusterAssignment<T>,
    /// Skills whose importance never varies across occupations.
    pub zero_variance: Vec<String>,
}

/// Skill × skill feature matrix of cross-occupation correlations.
pub fn skill_feature_matrix<T: Scalar>(corpus: &Corpus<T>) -> Result<(FeatureMatrix<T>, Vec<String>)> {
    let jobs = job_feature_matrix(corpus, None);
    if jobs.values.rows() < 2 {
        return Err(Error::TooFewRows {
            rows: jobs.values.rows(),
            needed: 1,
        });
    }
    let (corr, degenerate) = column_correlations(&jobs.values);
    let flagged = degenerate.iter().map(|&j| jobs.col_ids[j].clone()).collect();
    Ok((
        FeatureMatrix {
            row_ids: jobs.col_ids.clone(),
            col_ids: jobs.col_ids,
            values: corr,
        },
        flagged,
    ))
}

pub fn skill_clusters<T: Scalar>(
    corpus: &Corpus<T>,
    k: usize,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<SkillClustering<T>> {
    let (features, zero_variance) = skill_feature_matrix(corpus)?;
    Ok(SkillClustering {
        assignment: kmeans(&features, k, seed, opts)?,
        zero_variance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pca<T> {
    /// `rows × dims` projected coordinates.
    pub coordinates: Matrix<T>,
    /// `cols × dims` unit principal axes.
    pub axes: Matrix<T>,
    /// Variance (1/(n−1)) captured by each axis, descending.
    pub explained_variance: Vec<T>,
    pub means: Vec<T>,
}

/// Projects column-centered data onto its top `dims` principal axes. Each
/// axis is signed so its largest-magnitude loading is positive.
pub fn pca_project<T: Scalar>(matrix: &Matrix<T>, dims: usize) -> Result<Pca<T>> {
    let (n, p) = (matrix.rows(), matrix.cols());
    if n == 0 || p == 0 {
        return Err(Error::EmptyMatrix);
    }
    let max = n.min(p);
    if dims == 0 || dims > max {
        return Err(Error::DimsTooLarge { dims, max });
    }
    let mut centered = matrix.clone();
    let means = centered.center_columns();
    let denom = T::from_usize_lossy((n - 1).max(1));
    let mut cov = centered.transpose().matmul(&centered);
    for i in 0..p {
        for j in 0..p {
            cov[(i, j)] /= denom;
        }
    }
    let eig = symmetric_eigen(&cov);

    let mut axes = Matrix::zeros(p, dims);
    for d in 0..dims {
        let col = eig.vectors.column(d);
        let lead = col.iter().enumerate().fold(
            (0, T::zero()),
            |best, (i, &v)| if v.abs() > best.1.abs() { (i, v) } else { best },
        );
        let sign = if lead.1 < T::zero() { -T::one() } else { T::one() };
        for i in 0..p {
            axes[(i, d)] = col[i] * sign;
        }
    }
    let coordinates = centered.matmul(&axes);
    Ok(Pca {
        coordinates,
        axes,
        explained_variance: eig.values[..dims].iter().map(|&v| v.max(T::zero())).collect(),
        means,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZScoreProfile<T> {
    pub skill_types: Vec<String>,
    pub job_clusters: Vec<String>,
    /// Summed raw importance, `skill_types × job_clusters`.
    pub totals: Matrix<T>,
    pub z: Matrix<T>,
    /// Skill types whose totals do not vary across job clusters (z = 0).
    pub degenerate: Vec<String>,
}

/// Total importance of each skill type in each job cluster, z-scored across
/// job clusters with the population standard deviation.
pub fn skill_zscore_profile<T: Scalar>(
    corpus: &Corpus<T>,
    job_grouping: &Grouping,
    skill_grouping: &Grouping,
) -> Result<ZScoreProfile<T>> {
    let occs = corpus.skill_covered_occupations();
    let job_of: Vec<&str> = corpus
        .occupations()
        .iter()
        .map(|o| job_grouping.get(o).unwrap_or(UNASSIGNED))
        .collect();
    let type_of: Vec<&str> = corpus
        .skills()
        .iter()
        .map(|s| skill_grouping.get(s).unwrap_or(UNASSIGNED))
        .collect();

    let mut job_ids: Vec<String> = occs.iter().map(|&o| job_of[o].to_string()).collect();
    job_ids.sort_by(|a, b| group_order(a, b));
    job_ids.dedup();
    let mut type_ids: Vec<String> = type_of.iter().map(|s| s.to_string()).collect();
    type_ids.sort_by(|a, b| group_order(a, b));
    type_ids.dedup();
    if job_ids.is_empty() || type_ids.is_empty() {
        return Err(Error::EmptyMatrix);
    }

    let job_pos = |g: &str| job_ids.iter().position(|x| x == g).expect("collected above");
    let type_pos = |g: &str| type_ids.iter().position(|x| x == g).expect("collected above");
    let mut parts: Vec<Vec<Vec<T>>> = vec![vec![Vec::new(); job_ids.len()]; type_ids.len()];
    for &o in &occs {
        let c = job_pos(job_of[o]);
        for &(s, v) in corpus.importance(o) {
            parts[type_pos(type_of[s])][c].push(v);
        }
    }
    let mut totals = Matrix::zeros(type_ids.len(), job_ids.len());
    for (t, row) in parts.into_iter().enumerate() {
        for (c, v) in row.into_iter().enumerate() {
            totals[(t, c)] = compensated_sum(v);
        }
    }

    let mut z = Matrix::zeros(type_ids.len(), job_ids.len());
    let mut degenerate = Vec::new();
    for (t, type_id) in type_ids.iter().enumerate() {
        let row = totals.row(t).to_vec();
        let m = mean(&row);
        let sd = population_std(&row);
        if sd <= T::tiny() * m.abs().max(T::one()) {
            degenerate.push(type_id.clone());
            continue;
        }
        for (zc, &v) in z.row_mut(t).iter_mut().zip(&row) {
            *zc = (v - m) / sd;
        }
    }
    Ok(ZScoreProfile {
        skill_types: type_ids,
        job_clusters: job_ids,
        totals,
        z,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AutomationProbs, EmploymentRow, ProbSource, SkillRow};

    fn opts() -> KMeansOptions {
        KMeansOptions::default()
    }

    #[test]
    fn single_cluster_is_column_means() {
        let m = FeatureMatrix::from_rows(&[vec![1.0_f64, 2.0], vec![3.0, 6.0], vec![5.0, 1.0]]);
        let a = kmeans(&m, 1, 3, &opts()).unwrap();
        assert_eq!(a.labels, vec![0, 0, 0]);
        assert!((a.centroids[(0, 0)] - 3.0).abs() < 1e-15);
        assert!((a.centroids[(0, 1)] - 3.0).abs() < 1e-15);
        // n · (var_x + var_y) with population variances 8/3 and 14/3
        assert!((a.inertia - 22.0).abs() < 1e-12);
    }

    #[test]
    fn separated_blobs() {
        let mut rows = Vec::new();
        for i in 0..10 {
            let e = i as f64 * 0.01;
            rows.push(vec![e, -e]);
            rows.push(vec![10.0 + e, 10.0 - e]);
        }
        let m = FeatureMatrix::from_rows(&rows);
        let a = kmeans(&m, 2, 11, &opts()).unwrap();
        for i in 0..20 {
            assert_eq!(a.labels[i], a.labels[i % 2]);
        }
        assert_ne!(a.labels[0], a.labels[1]);
        assert_eq!(a.sizes(), vec![10, 10]);
    }

    #[test]
    fn errors() {
        let m = FeatureMatrix::from_rows(&[vec![1.0], vec![2.0]]);
        assert!(matches!(kmeans(&m, 3, 0, &opts()), Err(Error::KTooLarge { .. })));
        assert!(matches!(kmeans(&m, 0, 0, &opts()), Err(Error::KTooLarge { .. })));
        let empty = FeatureMatrix::<f64>::from_rows(&[]);
        assert!(matches!(kmeans(&empty, 1, 0, &opts()), Err(Error::EmptyMatrix)));
    }

    #[test]
    fn duplicate_points_keep_clusters_non_empty() {
        let m = FeatureMatrix::from_rows(&vec![vec![1.0_f64, 1.0]; 5]);
        let a = kmeans(&m, 3, 9, &opts()).unwrap();
        assert!(a.sizes().iter().all(|&s| s > 0));
        assert_eq!(a.inertia, 0.0);
    }

    #[test]
    fn single_precision_kmeans() {
        let m = FeatureMatrix::from_rows(&[vec![0.0_f32], vec![0.1], vec![5.0], vec![5.1]]);
        let a = kmeans(&m, 2, 1, &opts()).unwrap();
        assert_eq!(a.labels[0], a.labels[1]);
        assert_eq!(a.labels[2], a.labels[3]);
        assert_ne!(a.labels[0], a.labels[2]);
    }

    #[test]
    fn canonical_labels_prefer_bigger_clusters() {
        let m = FeatureMatrix::from_rows(&[vec![0.0], vec![100.0], vec![100.1], vec![100.2]]);
        let a = kmeans(&m, 2, 5, &opts()).unwrap();
        assert_eq!(a.labels, vec![1, 0, 0, 0]);
    }

    #[test]
    fn correlation_features() {
        let x = Matrix::from_rows(&[
            vec![1.0_f64, 2.0, 5.0, 0.3],
            vec![2.0, 4.0, 3.0, 0.3],
            vec![3.0, 6.0, 1.0, 0.3],
        ]);
        let (c, degenerate) = column_correlations(&x);
        assert_eq!(degenerate, vec![3]);
        assert!((c[(0, 1)] - 1.0).abs() < 1e-15);
        assert!((c[(0, 2)] + 1.0).abs() < 1e-15);
        assert_eq!(c.row(3), &[0.0; 4]);
        // Perfectly correlated columns give identical feature rows.
        assert_eq!(c.row(0), c.row(1));
    }

    #[test]
    fn pca_on_a_line() {
        // Points along direction (3, 4)/5 at positions t.
        let ts = [-2.0, -1.0, 0.5, 2.5];
        let rows: Vec<Vec<f64>> = ts.iter().map(|t| vec![1.0 + 0.6 * t, 2.0 + 0.8 * t]).collect();
        let p = pca_project(&Matrix::from_rows(&rows), 1).unwrap();
        let tmean = ts.iter().sum::<f64>() / 4.0;
        for (i, t) in ts.iter().enumerate() {
            assert!((p.coordinates[(i, 0)] - (t - tmean)).abs() < 1e-12);
        }
        assert!(matches!(
            pca_project(&Matrix::from_rows(&rows), 3),
            Err(Error::DimsTooLarge { .. })
        ));
    }

    fn tiny_corpus() -> Corpus<f64> {
        let emp = ["A", "B", "C", "D"]
            .iter()
            .map(|o| EmploymentRow {
                city_id: "m".into(),
                city_name: "m".into(),
                occ_code: o.to_string(),
                workers: 1.0,
            })
            .collect();
        let imp = [
            ("A", "s1", 0.5),
            ("A", "s2", 0.1),
            ("B", "s1", 0.4),
            ("B", "s3", 0.2),
            ("C", "s2", 0.6),
            ("C", "s3", 0.3),
            ("D", "s1", 0.1),
            ("D", "s2", 0.2),
            ("D", "s3", 0.3),
        ];
        let skills = imp
            .iter()
            .map(|&(o, s, v)| SkillRow {
                occ_code: o.into(),
                skill_id: s.into(),
                skill_name: s.into(),
                importance: v,
            })
            .collect();
        let probs = AutomationProbs {
            source: ProbSource::FreyOsborne,
            values: [("A".to_string(), 0.5)].into_iter().collect(),
        };
        Corpus::from_rows(emp, skills, probs, vec![]).unwrap()
    }

    #[test]
    fn zscore_profile_by_hand() {
        let c = tiny_corpus();
        let jobs: Grouping = [("A", "0"), ("B", "0"), ("C", "1"), ("D", "2")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let types: Grouping = [("s1", "x"), ("s2", "y"), ("s3", "y")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let z = skill_zscore_profile(&c, &jobs, &types).unwrap();
        assert_eq!(z.job_clusters, vec!["0", "1", "2"]);
        assert_eq!(z.skill_types, vec!["x", "y"]);
        // x totals: cluster0 = 0.9, cluster1 = 0, cluster2 = 0.1
        // y totals: cluster0 = 0.3, cluster1 = 0.9, cluster2 = 0.5
        let expect = |vals: [f64; 3]| {
            let m = vals.iter().sum::<f64>() / 3.0;
            let sd = (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 3.0).sqrt();
            vals.map(|v| (v - m) / sd)
        };
        let zx = expect([0.9, 0.0, 0.1]);
        let zy = expect([0.3, 0.9, 0.5]);
        for c in 0..3 {
            assert!((z.z[(0, c)] - zx[c]).abs() < 1e-12);
            assert!((z.z[(1, c)] - zy[c]).abs() < 1e-12);
        }
        for t in 0..2 {
            let row = z.z.row(t);
            let m: f64 = row.iter().sum::<f64>() / 3.0;
            let v: f64 = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 3.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zscore_single_cluster_is_degenerate() {
        let c = tiny_corpus();
        let jobs: Grouping = ["A", "B", "C", "D"]
            .iter()
            .map(|a| (a.to_string(), "0".to_string()))
            .collect();
        let types: Grouping = [("s1", "x"), ("s2", "y"), ("s3", "y")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let z = skill_zscore_profile(&c, &jobs, &types).unwrap();
        assert_eq!(z.degenerate, vec!["x", "y"]);
        assert!(z.z.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn job_matrix_is_raw_importance() {
        let c = tiny_corpus();
        let m = job_feature_matrix(&c, None);
        assert_eq!(m.row_ids, vec!["A", "B", "C", "D"]);
        assert_eq!(m.values.row(1), &[0.4, 0.0, 0.2]);
        let sub = job_feature_matrix(&c, Some(&[1, 3]));
        assert_eq!(sub.row_ids, vec!["B", "D"]);
    }
}
