use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::index::{ByteReader, ByteWriter};

pub const IVF_MAX_CLUSTERS: usize = 1 << 20;
const MAX_ITERS: usize = 25;
const SHIFT_TOL: f64 = 1e-4;

/// Coarse quantizer over start rows.
#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    pub centroids: Array2<f64>,
    /// Row ids per cluster, ascending. Every row appears in exactly one list.
    pub lists: Vec<Vec<u32>>,
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid by squared distance, lowest id on ties.
fn nearest(row: ArrayView1<'_, f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(row, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(rows: ArrayView2<'_, f64>, centroids: &Array2<f64>) -> Vec<usize> {
    rows.rows().into_iter().map(|r| nearest(r, centroids).0).collect()
}

fn kmeans_pp(rows: ArrayView2<'_, f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = rows.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = rows.rows().into_iter().map(|r| sq_dist(r, rows.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (idx, &d) in dist.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = idx;
                    break;
                }
                target -= d;
            }
            if dist[pick] == 0.0 {
                pick = dist.iter().rposition(|&d| d > 0.0).expect("positive total");
            }
            pick
        } else {
            // Only duplicates of chosen rows remain.
            (0..n).find(|r| !chosen.contains(r)).expect("k <= n")
        };
        chosen.push(next);
        for (idx, r) in rows.rows().into_iter().enumerate() {
            dist[idx] = dist[idx].min(sq_dist(r, rows.row(next)));
        }
    }
    rows.select(ndarray::Axis(0), &chosen)
}

/// k-means++ initialisation followed by Lloyd iterations until every
/// centroid moves less than 1e-4 or 25 iterations have run.
///
/// With `n_clusters == rows` every row becomes its own centroid.
pub fn kmeans_train(rows: ArrayView2<'_, f64>, n_clusters: usize, seed: u64) -> Result<IvfIndex> {
    let n = rows.nrows();
    if n_clusters == 0 || n_clusters > n {
        return Err(Error::Config(format!("{n_clusters} clusters for {n} rows")));
    }
    if n_clusters == n {
        return Ok(IvfIndex {
            centroids: rows.to_owned(),
            lists: (0..n as u32).map(|r| vec![r]).collect(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(rows, n_clusters, &mut rng);
    for _ in 0..MAX_ITERS {
        let labels = assign(rows, &centroids);
        let mut sums = Array2::<f64>::zeros(centroids.dim());
        let mut counts = vec![0usize; n_clusters];
        for (r, &c) in labels.iter().enumerate() {
            let mut s = sums.row_mut(c);
            s += &rows.row(r);
            counts[c] += 1;
        }
        let mut shift: f64 = 0.0;
        for c in 0..n_clusters {
            if counts[c] == 0 {
                continue;
            }
            let mean = &sums.row(c) / counts[c] as f64;
            shift = shift.max(sq_dist(mean.view(), centroids.row(c)).sqrt());
            centroids.row_mut(c).assign(&mean);
        }
        if shift < SHIFT_TOL {
            break;
        }
    }
    let mut lists = vec![Vec::new(); n_clusters];
    for (r, c) in assign(rows, &centroids).into_iter().enumerate() {
        lists[c].push(r as u32);
    }
    Ok(IvfIndex { centroids, lists })
}

impl IvfIndex {
    pub fn n_clusters(&self) -> usize {
        self.lists.len()
    }

    /// Sum of squared distances of rows to their assigned centroid.
    pub fn inertia(&self, rows: ArrayView2<'_, f64>) -> f64 {
        self.lists
            .iter()
            .enumerate()
            .flat_map(|(c, list)| list.iter().map(move |&r| (c, r as usize)))
            .map(|(c, r)| sq_dist(rows.row(r), self.centroids.row(c)))
            .sum()
    }

    /// The `nprobe` clusters with the largest inner product with `a`,
    /// lowest id on ties.
    pub fn probe(&self, a: &[f64], nprobe: usize) -> Vec<usize> {
        let mut scored: Vec<(f64, usize)> = self
            .centroids
            .rows()
            .into_iter()
            .enumerate()
            .map(|(c, centroid)| (centroid.iter().zip(a).map(|(x, y)| x * y).sum(), c))
            .collect();
        scored.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        scored.into_iter().take(nprobe).map(|(_, c)| c).collect()
    }

    pub(crate) fn write(&self, w: &mut ByteWriter) {
        w.u64(self.centroids.nrows() as u64);
        w.u64(self.centroids.ncols() as u64);
        self.centroids.iter().for_each(|&v| w.f64(v));
        for list in &self.lists {
            w.u64(list.len() as u64);
            list.iter().for_each(|&r| w.u32(r));
        }
    }

    pub(crate) fn read(r: &mut ByteReader<'_>) -> Result<Self> {
        let k = r.usize()?;
        let d = r.usize()?;
        let values = (0..k * d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let centroids = Array2::from_shape_vec((k, d), values).map_err(|e| Error::format("ivf", e.to_string()))?;
        let mut lists = Vec::with_capacity(k);
        for _ in 0..k {
            let len = r.usize()?;
            lists.push((0..len).map(|_| r.u32()).collect::<Result<Vec<_>>>()?);
        }
        if !r.is_at_end() {
            return Err(Error::format("ivf", "trailing bytes"));
        }
        Ok(IvfIndex { centroids, lists })
    }
}
