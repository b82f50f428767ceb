//! Fractional Brownian motion: covariance, exact and FFT samplers, grids and paths.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Domain};

/// Largest grid the O(n³) Cholesky sampler accepts by default.
pub const CHOLESKY_CAP: usize = 1 << 12;
/// Largest dyadic level accepted by the circulant sampler.
pub const MAX_CIRCULANT_LEVEL: u32 = 22;
/// Negative eigenvalue mass (relative to total) that may be clipped.
pub const CLIP_TOLERANCE: f64 = 1e-8;

const JITTER_STEPS: [f64; 6] = [0.0, 1e-14, 1e-13, 1e-12, 1e-11, 1e-10];

/// Hurst index in the open unit interval.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct HurstIndex(f64);

impl HurstIndex {
    pub fn new(h: f64) -> Result<Self> {
        if h > 0.0 && h < 1.0 {
            Ok(Self(h))
        } else {
            Err(Error::Domain(format!("Hurst index must lie in (0,1), got {h}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_brownian(self) -> bool {
        self.0 == 0.5
    }
}

impl TryFrom<f64> for HurstIndex {
    type Error = Error;
    fn try_from(h: f64) -> Result<Self> {
        Self::new(h)
    }
}

impl From<HurstIndex> for f64 {
    fn from(h: HurstIndex) -> f64 {
        h.0
    }
}

/// Covariance of fBm at times `s` and `t`.
pub fn fbm_covariance(s: f64, t: f64, h: HurstIndex) -> Result<f64> {
    if s < 0.0 || t < 0.0 {
        return Err(Error::Domain(format!("negative time in covariance ({s}, {t})")));
    }
    let two_h = 2.0 * h.0;
    Ok(0.5 * (t.powf(two_h) + s.powf(two_h) - (t - s).abs().powf(two_h)))
}

/// Autocovariance of unit-spaced fBm increments at lag `k`.
pub fn fgn_autocovariance(k: usize, h: HurstIndex) -> f64 {
    let two_h = 2.0 * h.0;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(two_h) - 2.0 * k.powf(two_h) + (k - 1.0).abs().powf(two_h))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Dyadic(u32),
    Uniform,
    Irregular,
}

/// Strictly increasing time points starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
    layout: Layout,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Usage("a time grid needs at least two points".into()));
        }
        if points[0] != 0.0 {
            return Err(Error::Usage(format!(
                "time grid must start at 0, got {}",
                points[0]
            )));
        }
        if let Some(i) = points
            .windows(2)
            .position(|w| !(w[1] > w[0]) || !w[1].is_finite())
        {
            return Err(Error::Usage(format!(
                "time grid not strictly increasing at index {}",
                i + 1
            )));
        }
        let n = points.len() - 1;
        let step = points[n] / n as f64;
        let uniform = points
            .iter()
            .enumerate()
            .all(|(i, &t)| (t - step * i as f64).abs() <= 1e-12 * points[n]);
        let layout = match (uniform, n.is_power_of_two()) {
            (true, true) => Layout::Dyadic(n.trailing_zeros()),
            (true, false) => Layout::Uniform,
            _ => Layout::Irregular,
        };
        Ok(Self { points, layout })
    }

    /// `t_i = T·i/2^level`.
    pub fn dyadic(level: u32, horizon: f64) -> Result<Self> {
        if level > 30 {
            return Err(Error::Usage(format!("dyadic level {level} too large")));
        }
        let mut g = Self::uniform(1usize << level, horizon)?;
        g.layout = Layout::Dyadic(level);
        Ok(g)
    }

    /// `t_i = T·i/n`.
    pub fn uniform(n: usize, horizon: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Usage("uniform grid needs at least one step".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
        }
        let points = (0..=n).map(|i| horizon * i as f64 / n as f64).collect();
        Ok(Self {
            points,
            layout: Layout::Uniform,
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Number of points, including `t_0 = 0`.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn dyadic_level(&self) -> Option<u32> {
        match self.layout {
            Layout::Dyadic(l) => Some(l),
            _ => None,
        }
    }

    /// Common step of a uniform (or dyadic) grid.
    pub fn uniform_step(&self) -> Option<f64> {
        match self.layout {
            Layout::Irregular => None,
            _ => Some(self.horizon() / self.steps() as f64),
        }
    }

    /// The coarser dyadic grid at `level`, whose points are a subset of this one.
    pub fn subsample(&self, level: u32) -> Result<TimeGrid> {
        let stored = self
            .dyadic_level()
            .ok_or_else(|| Error::Usage("subsampling requires a dyadic grid".into()))?;
        if level > stored {
            return Err(Error::Usage(format!(
                "level {level} exceeds stored dyadic level {stored}"
            )));
        }
        let stride = 1usize << (stored - level);
        Ok(TimeGrid {
            points: self.points.iter().step_by(stride).copied().collect(),
            layout: Layout::Dyadic(level),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    Fbm,
    Bm,
    Mixed,
    Price,
    /// Renewal counts or workloads.
    Counting,
    /// Centered and rescaled aggregates.
    Fluctuation,
}

/// One realized trajectory on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    grid: Arc<TimeGrid>,
    values: Vec<f64>,
    kind: PathKind,
}

impl SamplePath {
    pub fn new(grid: Arc<TimeGrid>, values: Vec<f64>, kind: PathKind) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Usage(format!(
                "path has {} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        match kind {
            PathKind::Price if !(values[0] > 0.0) => {
                return Err(Error::Usage("price paths must start above zero".into()))
            }
            PathKind::Fbm | PathKind::Bm | PathKind::Mixed | PathKind::Fluctuation
                if values[0] != 0.0 =>
            {
                return Err(Error::Usage("noise paths must start at 0".into()))
            }
            PathKind::Counting if values[0] < 0.0 => {
                return Err(Error::Usage("counts cannot be negative".into()))
            }
            _ => {}
        }
        Ok(Self { grid, values, kind })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        self.grid.points()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> PathKind {
        self.kind
    }

    pub fn terminal(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn increments(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// The same realization observed on the coarser dyadic grid at `level`.
    pub fn subsample(&self, level: u32) -> Result<SamplePath> {
        let coarse = self.grid.subsample(level)?;
        let stride = self.grid.steps() / coarse.steps();
        Ok(SamplePath {
            grid: Arc::new(coarse),
            values: self.values.iter().step_by(stride).copied().collect(),
            kind: self.kind,
        })
    }

    /// A path of the same kind on the same grid built from a pointwise map.
    pub fn map(&self, kind: PathKind, f: impl Fn(f64, f64) -> f64) -> Result<SamplePath> {
        let values = self
            .times()
            .iter()
            .zip(&self.values)
            .map(|(&t, &x)| f(t, x))
            .collect();
        SamplePath::new(self.grid.clone(), values, kind)
    }
}

/// Covariance of fBm at the nonzero grid points (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CovarianceMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    /// Lower Cholesky factor, adding `δ·I` with δ escalating up to
    /// `1e-10·trace/n` if the plain factorization fails. Returns the factor and
    /// the jitter used.
    pub fn cholesky(&self) -> Result<(Vec<f64>, f64)> {
        let scale = self.trace() / self.n as f64;
        for &rel in &JITTER_STEPS {
            let delta = rel * scale;
            if let Some(l) = cholesky_in_place(&self.data, self.n, delta) {
                return Ok((l, delta));
            }
        }
        Err(Error::Numerical(format!(
            "Cholesky factorization failed after jitter {:e}; smallest eigenvalue ≈ {:e}",
            1e-10 * scale,
            self.min_eigenvalue_estimate()
        )))
    }

    /// Power-iteration estimate of the smallest eigenvalue.
    pub fn min_eigenvalue_estimate(&self) -> f64 {
        let lmax = self.power_iteration(0.0);
        lmax - self.power_iteration(lmax)
    }

    // Dominant eigenvalue of `shift·I − A` (or of A when shift is 0).
    fn power_iteration(&self, shift: f64) -> f64 {
        let n = self.n;
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64).sin() * 0.1).collect();
        let mut lambda = 0.0;
        for _ in 0..200 {
            let mut w = vec![0.0; n];
            for i in 0..n {
                let row = &self.data[i * n..(i + 1) * n];
                let av: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
                w[i] = if shift == 0.0 { av } else { shift * v[i] - av };
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            lambda = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
                / v.iter().map(|x| x * x).sum::<f64>();
            v = w.into_iter().map(|x| x / norm).collect();
        }
        lambda
    }
}

fn cholesky_in_place(a: &[f64], n: usize, delta: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let (li, lj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
            let dot: f64 = li.iter().zip(lj).map(|(x, y)| x * y).sum();
            if i == j {
                let d = a[i * n + i] + delta - dot;
                if !(d > 0.0) {
                    return None;
                }
                l[i * n + i] = d.sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - dot) / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Covariance matrix of fBm at the grid points, `t_0 = 0` excluded.
pub fn build_covariance_matrix(grid: &TimeGrid, h: HurstIndex) -> CovarianceMatrix {
    let t = &grid.points()[1..];
    let n = t.len();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let c = fbm_covariance(t[i], t[j], h).expect("grid times are nonnegative");
            data[i * n + j] = c;
            data[j * n + i] = c;
        }
    }
    CovarianceMatrix { n, data }
}

fn normals<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Exact fBm sampler on an arbitrary grid via the Cholesky factor.
#[derive(Debug, Clone)]
pub struct CholeskySampler {
    grid: Arc<TimeGrid>,
    lower: Vec<f64>,
    jitter: f64,
}

impl CholeskySampler {
    pub fn new(grid: Arc<TimeGrid>, h: HurstIndex) -> Result<Self> {
        Self::with_cap(grid, h, CHOLESKY_CAP)
    }

    pub fn with_cap(grid: Arc<TimeGrid>, h: HurstIndex, cap: usize) -> Result<Self> {
        if grid.len() > cap {
            return Err(Error::Usage(format!(
                "Cholesky sampler limited to {cap} grid points, got {}",
                grid.len()
            )));
        }
        let (lower, jitter) = build_covariance_matrix(&grid, h).cholesky()?;
        Ok(Self {
            grid,
            lower,
            jitter,
        })
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn sample(&self, seed: u64, index: u64) -> SamplePath {
        let n = self.grid.steps();
        let z = normals(&mut stream(seed, Domain::Fbm, index), n);
        let mut values = Vec::with_capacity(n + 1);
        values.push(0.0);
        for i in 0..n {
            let row = &self.lower[i * n..i * n + i + 1];
            values.push(row.iter().zip(&z).map(|(a, b)| a * b).sum());
        }
        SamplePath {
            grid: self.grid.clone(),
            values,
            kind: PathKind::Fbm,
        }
    }
}

/// Davies–Harte circulant embedding of fBm increments on a uniform grid.
#[derive(Clone)]
pub struct CirculantEmbedding {
    grid: Arc<TimeGrid>,
    h: HurstIndex,
    sqrt_eigs: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    warning: Option<String>,
}

impl std::fmt::Debug for CirculantEmbedding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CirculantEmbedding")
            .field("steps", &self.grid.steps())
            .field("h", &self.h)
            .field("warning", &self.warning)
            .finish()
    }
}

impl CirculantEmbedding {
    /// Embedding for a uniform grid with at most `2^22` steps.
    pub fn new(grid: Arc<TimeGrid>, h: HurstIndex) -> Result<Self> {
        if grid.uniform_step().is_none() {
            return Err(Error::Usage("circulant sampler needs a uniform grid".into()));
        }
        let n = grid.steps();
        if n > 1 << MAX_CIRCULANT_LEVEL {
            return Err(Error::Usage(format!(
                "circulant sampler limited to 2^{MAX_CIRCULANT_LEVEL} steps, got {n}"
            )));
        }
        let m = 2 * n;
        let mut row: Vec<Complex<f64>> = (0..m)
            .map(|k| {
                let lag = if k <= n { k } else { m - k };
                Complex::new(fgn_autocovariance(lag, h), 0.0)
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(m);
        fft.process(&mut row);
        let eigs: Vec<f64> = row.iter().map(|c| c.re).collect();
        let total: f64 = eigs.iter().map(|e| e.abs()).sum();
        let negative: f64 = eigs.iter().filter(|e| **e < 0.0).map(|e| -e).sum();
        let rel = negative / total;
        let warning = if negative > 0.0 {
            if rel >= CLIP_TOLERANCE {
                return Err(Error::Numerical(format!(
                    "circulant embedding has negative eigenvalue mass {rel:e} (limit {CLIP_TOLERANCE:e})"
                )));
            }
            Some(format!("clipped negative circulant eigenvalue mass {rel:e}"))
        } else {
            None
        };
        let sqrt_eigs = eigs.iter().map(|e| (e.max(0.0) / m as f64).sqrt()).collect();
        Ok(Self {
            grid,
            h,
            sqrt_eigs,
            fft,
            warning,
        })
    }

    pub fn warning(&self) -> Option<&str> {
        self.warning.as_deref()
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn sample(&self, seed: u64, index: u64) -> SamplePath {
        let n = self.grid.steps();
        let m = 2 * n;
        let mut rng = stream(seed, Domain::Fbm, index);
        let mut buf: Vec<Complex<f64>> = self
            .sqrt_eigs
            .iter()
            .map(|&s| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex::new(s * re, s * im)
            })
            .collect();
        debug_assert_eq!(buf.len(), m);
        self.fft.process(&mut buf);
        let scale = self.grid.uniform_step().unwrap_or(1.0).powf(self.h.value());
        let mut values = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        values.push(0.0);
        for c in &buf[..n] {
            acc += c.re * scale;
            values.push(acc);
        }
        SamplePath {
            grid: self.grid.clone(),
            values,
            kind: PathKind::Fbm,
        }
    }
}

/// Either exact sampler behind one interface; uniform grids use the
/// circulant embedding and anything else the Cholesky factor.
#[derive(Debug, Clone)]
pub enum FbmSampler {
    Cholesky(CholeskySampler),
    Circulant(CirculantEmbedding),
}

impl FbmSampler {
    pub fn for_grid(grid: Arc<TimeGrid>, h: HurstIndex) -> Result<Self> {
        if grid.uniform_step().is_some() {
            Ok(Self::Circulant(CirculantEmbedding::new(grid, h)?))
        } else {
            Ok(Self::Cholesky(CholeskySampler::new(grid, h)?))
        }
    }

    pub fn sample(&self, seed: u64, index: u64) -> SamplePath {
        match self {
            Self::Cholesky(s) => s.sample(seed, index),
            Self::Circulant(s) => s.sample(seed, index),
        }
    }

    pub fn warning(&self) -> Option<&str> {
        match self {
            Self::Cholesky(_) => None,
            Self::Circulant(s) => s.warning(),
        }
    }
}

pub fn sample_fbm_cholesky(
    grid: &TimeGrid,
    h: HurstIndex,
    seed: u64,
    n_paths: usize,
) -> Result<Vec<SamplePath>> {
    let sampler = CholeskySampler::new(Arc::new(grid.clone()), h)?;
    Ok((0..n_paths as u64)
        .into_par_iter()
        .map(|i| sampler.sample(seed, i))
        .collect())
}

/// fBm on the dyadic grid `T·i/2^level`.
pub fn sample_fbm_circulant(
    level: u32,
    horizon: f64,
    h: HurstIndex,
    seed: u64,
    n_paths: usize,
) -> Result<Vec<SamplePath>> {
    if level > MAX_CIRCULANT_LEVEL {
        return Err(Error::Usage(format!(
            "circulant level {level} exceeds {MAX_CIRCULANT_LEVEL}"
        )));
    }
    let emb = CirculantEmbedding::new(Arc::new(TimeGrid::dyadic(level, horizon)?), h)?;
    Ok((0..n_paths as u64)
        .into_par_iter()
        .map(|i| emb.sample(seed, i))
        .collect())
}

/// Standard Brownian motion on `grid`, path `index` of stream `seed`.
pub fn bm_path(grid: &Arc<TimeGrid>, seed: u64, index: u64) -> SamplePath {
    let mut rng = stream(seed, Domain::Bm, index);
    let mut values = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    values.push(0.0);
    for w in grid.points().windows(2) {
        let z: f64 = rng.sample(StandardNormal);
        acc += (w[1] - w[0]).sqrt() * z;
        values.push(acc);
    }
    SamplePath {
        grid: grid.clone(),
        values,
        kind: PathKind::Bm,
    }
}

pub fn sample_bm(grid: &TimeGrid, seed: u64, n_paths: usize) -> Vec<SamplePath> {
    let grid = Arc::new(grid.clone());
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| bm_path(&grid, seed, i))
        .collect()
}

/// `W + B` together with its independent components.
#[derive(Debug, Clone)]
pub struct MixedPath {
    pub total: SamplePath,
    pub bm: SamplePath,
    pub fbm: SamplePath,
}

pub fn sample_mixed(
    grid: &TimeGrid,
    h: HurstIndex,
    seed: u64,
    n_paths: usize,
) -> Result<Vec<MixedPath>> {
    let grid = Arc::new(grid.clone());
    let sampler = FbmSampler::for_grid(grid.clone(), h)?;
    Ok((0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let bm = bm_path(&grid, seed, i);
            let fbm = sampler.sample(seed, i);
            let values = bm.values.iter().zip(&fbm.values).map(|(a, b)| a + b).collect();
            MixedPath {
                total: SamplePath {
                    grid: grid.clone(),
                    values,
                    kind: PathKind::Mixed,
                },
                bm,
                fbm,
            }
        })
        .collect())
}
