//! The Black–Scholes, fractional and mixed fractional price models.

use std::io::Read;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::{bm_path, FbmSampler, HurstIndex, PathKind, SamplePath, TimeGrid};
use crate::stats::{mean, mean_estimate, Estimate};

fn one() -> f64 {
    1.0
}

fn zero() -> f64 {
    0.0
}

fn default_h() -> HurstIndex {
    HurstIndex::new(0.75).expect("0.75 is a valid Hurst index")
}

/// Discounted price model. Omitted parameters default to `μ = 0` and
/// `σ = ν = s0 = 1`, with `H = 0.75` for the fractional kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSpec {
    Bs {
        #[serde(default = "one")]
        s0: f64,
        #[serde(default = "zero")]
        mu: f64,
        #[serde(default = "one")]
        sigma: f64,
    },
    Fbs {
        #[serde(default = "one")]
        s0: f64,
        #[serde(default = "zero")]
        mu: f64,
        #[serde(default = "one")]
        nu: f64,
        #[serde(default = "default_h")]
        h: HurstIndex,
    },
    Mfbs {
        #[serde(default = "one")]
        s0: f64,
        #[serde(default = "zero")]
        mu: f64,
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default = "one")]
        nu: f64,
        #[serde(default = "default_h")]
        h: HurstIndex,
    },
}

impl ModelSpec {
    pub fn bs() -> Self {
        Self::Bs {
            s0: 1.0,
            mu: 0.0,
            sigma: 1.0,
        }
    }

    pub fn fbs(h: HurstIndex) -> Self {
        Self::Fbs {
            s0: 1.0,
            mu: 0.0,
            nu: 1.0,
            h,
        }
    }

    pub fn mfbs(h: HurstIndex) -> Self {
        Self::Mfbs {
            s0: 1.0,
            mu: 0.0,
            sigma: 1.0,
            nu: 1.0,
            h,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Bs { .. } => "bs",
            Self::Fbs { .. } => "fbs",
            Self::Mfbs { .. } => "mfbs",
        }
    }

    /// Conventional model label (`BS`, `fBS`, `mfBS`).
    pub fn label(&self) -> &'static str {
        match self {
            Self::Bs { .. } => "BS",
            Self::Fbs { .. } => "fBS",
            Self::Mfbs { .. } => "mfBS",
        }
    }

    pub fn s0(&self) -> f64 {
        match *self {
            Self::Bs { s0, .. } | Self::Fbs { s0, .. } | Self::Mfbs { s0, .. } => s0,
        }
    }

    pub fn mu(&self) -> f64 {
        match *self {
            Self::Bs { mu, .. } | Self::Fbs { mu, .. } | Self::Mfbs { mu, .. } => mu,
        }
    }

    /// Brownian volatility (0 for the pure fractional model).
    pub fn sigma(&self) -> f64 {
        match *self {
            Self::Bs { sigma, .. } | Self::Mfbs { sigma, .. } => sigma,
            Self::Fbs { .. } => 0.0,
        }
    }

    /// Fractional volatility (0 for the Black–Scholes model).
    pub fn nu(&self) -> f64 {
        match *self {
            Self::Fbs { nu, .. } | Self::Mfbs { nu, .. } => nu,
            Self::Bs { .. } => 0.0,
        }
    }

    pub fn hurst(&self) -> Option<HurstIndex> {
        match *self {
            Self::Fbs { h, .. } | Self::Mfbs { h, .. } => Some(h),
            Self::Bs { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s0 = self.s0();
        if !(s0 > 0.0 && s0.is_finite()) {
            return Err(Error::Spec(format!("s0 must be positive, got {s0}")));
        }
        if !self.mu().is_finite() {
            return Err(Error::Spec("mu must be finite".into()));
        }
        if matches!(self, Self::Bs { .. } | Self::Mfbs { .. }) && !(self.sigma() > 0.0) {
            return Err(Error::Spec(format!("sigma must be positive, got {}", self.sigma())));
        }
        if matches!(self, Self::Fbs { .. } | Self::Mfbs { .. }) && !(self.nu() > 0.0) {
            return Err(Error::Spec(format!("nu must be positive, got {}", self.nu())));
        }
        if let Some(h) = self.hurst() {
            if h.is_brownian() {
                return Err(Error::Spec(format!("{} requires H ≠ 1/2", self.label())));
            }
        }
        Ok(())
    }
}

/// A price trajectory together with the noise that drove it.
#[derive(Debug, Clone)]
pub struct PricePath {
    pub price: SamplePath,
    pub bm: Option<SamplePath>,
    pub fbm: Option<SamplePath>,
    pub spec: Option<ModelSpec>,
}

impl PricePath {
    pub fn times(&self) -> &[f64] {
        self.price.times()
    }

    pub fn values(&self) -> &[f64] {
        self.price.values()
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        self.price.grid()
    }

    pub fn s0(&self) -> f64 {
        self.price.values()[0]
    }

    pub fn terminal(&self) -> f64 {
        self.price.terminal()
    }
}

/// Price path built pointwise from the driving noise. `bm` is required for
/// the Brownian kinds and `fbm` for the fractional ones.
pub fn price_from_noise(
    spec: &ModelSpec,
    bm: Option<SamplePath>,
    fbm: Option<SamplePath>,
) -> Result<PricePath> {
    spec.validate()?;
    let needs_bm = spec.sigma() > 0.0;
    let needs_fbm = spec.nu() > 0.0;
    if needs_bm != bm.is_some() || needs_fbm != fbm.is_some() {
        return Err(Error::Usage(format!(
            "{} model got the wrong set of noise paths",
            spec.name()
        )));
    }
    let grid = bm
        .as_ref()
        .or(fbm.as_ref())
        .map(|p| p.grid().clone())
        .expect("at least one noise path is present");
    if let (Some(w), Some(b)) = (&bm, &fbm) {
        if w.grid() != b.grid() {
            return Err(Error::Usage("noise paths live on different grids".into()));
        }
    }
    let (s0, mu, sigma, nu) = (spec.s0(), spec.mu(), spec.sigma(), spec.nu());
    let values = grid
        .points()
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let mut x = mu * t;
            if let Some(w) = &bm {
                x += sigma * w.values()[i] - 0.5 * sigma * sigma * t;
            }
            if let Some(b) = &fbm {
                x += nu * b.values()[i];
            }
            s0 * x.exp()
        })
        .collect();
    let price = SamplePath::new(grid, values, PathKind::Price)?;
    Ok(PricePath {
        price,
        bm,
        fbm,
        spec: Some(*spec),
    })
}

/// Reusable generator of model paths on one grid.
#[derive(Debug, Clone)]
pub struct ModelSimulator {
    spec: ModelSpec,
    grid: Arc<TimeGrid>,
    fbm: Option<FbmSampler>,
}

impl ModelSimulator {
    pub fn new(spec: ModelSpec, grid: Arc<TimeGrid>) -> Result<Self> {
        spec.validate()?;
        let fbm = match spec.hurst() {
            Some(h) => Some(FbmSampler::for_grid(grid.clone(), h)?),
            None => None,
        };
        Ok(Self { spec, grid, fbm })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn warning(&self) -> Option<&str> {
        self.fbm.as_ref().and_then(FbmSampler::warning)
    }

    /// Path `index`; the Brownian part uses the same stream for every model
    /// kind, so BS and mfBS runs with one seed share `W`.
    pub fn path(&self, seed: u64, index: u64) -> Result<PricePath> {
        let bm = (self.spec.sigma() > 0.0).then(|| bm_path(&self.grid, seed, index));
        let fbm = self.fbm.as_ref().map(|s| s.sample(seed, index));
        price_from_noise(&self.spec, bm, fbm)
    }
}

pub fn simulate_model(
    spec: &ModelSpec,
    grid: &TimeGrid,
    seed: u64,
    n_paths: usize,
) -> Result<Vec<PricePath>> {
    let sim = ModelSimulator::new(*spec, Arc::new(grid.clone()))?;
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| sim.path(seed, i))
        .collect()
}

/// Empirical autocovariance of log-returns at lags `0..=max_lag`, averaged
/// over paths; standard errors come from the spread across paths.
pub fn log_return_autocovariance(
    paths: &[PricePath],
    spacing: f64,
    max_lag: usize,
) -> Result<Vec<Estimate>> {
    if paths.is_empty() {
        return Err(Error::Usage("no paths supplied".into()));
    }
    let mut returns = Vec::with_capacity(paths.len());
    for p in paths {
        let step = p.grid().uniform_step().ok_or_else(|| {
            Error::Usage("log-return autocovariance needs a uniform grid".into())
        })?;
        if (step - spacing).abs() > 1e-9 * spacing {
            return Err(Error::Usage(format!(
                "grid step {step} differs from requested spacing {spacing}"
            )));
        }
        let r: Vec<f64> = p.values().windows(2).map(|w| (w[1] / w[0]).ln()).collect();
        if r.len() <= max_lag {
            return Err(Error::Usage(format!(
                "max_lag {max_lag} needs more than {} returns",
                r.len()
            )));
        }
        returns.push(r);
    }
    let pooled = mean(&returns.iter().map(|r| mean(r)).collect::<Vec<_>>());
    Ok((0..=max_lag)
        .map(|lag| {
            let per_path: Vec<f64> = returns
                .iter()
                .map(|r| {
                    let m = r.len() - lag;
                    (0..m)
                        .map(|k| (r[k] - pooled) * (r[k + lag] - pooled))
                        .sum::<f64>()
                        / m as f64
                })
                .collect();
            mean_estimate(&per_path)
        })
        .collect())
}

#[derive(Debug, Deserialize)]
struct PriceRecord {
    time: f64,
    price: f64,
}

/// Reads a `time,price` CSV (header required) into a price path. Times are
/// shifted so the series starts at 0.
pub fn read_price_csv<R: Read>(reader: R) -> Result<PricePath> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "time" || &headers[1] != "price" {
        return Err(Error::Usage(format!(
            "price CSV header must be `time,price`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut times = Vec::new();
    let mut prices = Vec::new();
    for rec in rdr.deserialize() {
        let r: PriceRecord = rec?;
        if !(r.price > 0.0 && r.price.is_finite()) {
            return Err(Error::Usage(format!(
                "price must be positive at time {}",
                r.time
            )));
        }
        times.push(r.time);
        prices.push(r.price);
    }
    if times.len() < 2 {
        return Err(Error::Usage("price CSV needs at least two rows".into()));
    }
    let t0 = times[0];
    let grid = TimeGrid::new(times.iter().map(|t| t - t0).collect())?;
    Ok(PricePath {
        price: SamplePath::new(Arc::new(grid), prices, PathKind::Price)?,
        bm: None,
        fbm: None,
        spec: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::variance_estimate;

    fn h(x: f64) -> HurstIndex {
        HurstIndex::new(x).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::bs().validate().is_ok());
        assert!(matches!(ModelSpec::fbs(h(0.5)).validate(), Err(Error::Spec(_))));
        let bad = ModelSpec::Bs {
            s0: -1.0,
            mu: 0.0,
            sigma: 1.0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn spec_defaults_from_json() {
        let s: ModelSpec = serde_json::from_str(r#"{"kind":"mfbs","h":0.6}"#).unwrap();
        assert_eq!(s, ModelSpec::mfbs(h(0.6)));
        assert!(serde_json::from_str::<ModelSpec>(r#"{"kind":"bs","nu":1}"#).is_err());
        assert!(serde_json::from_str::<ModelSpec>(r#"{"kind":"fbs","h":1.5}"#).is_err());
    }

    #[test]
    fn bs_is_martingale() {
        let g = TimeGrid::dyadic(2, 1.0).unwrap();
        let paths = simulate_model(&ModelSpec::bs(), &g, 3, 20_000).unwrap();
        let st: Vec<f64> = paths.iter().map(PricePath::terminal).collect();
        assert!(mean_estimate(&st).within(1.0, 5.0));
        assert!(paths.iter().all(|p| p.s0() == 1.0 && p.values().iter().all(|&v| v > 0.0)));
    }

    #[test]
    fn fbs_log_price_centered() {
        let g = TimeGrid::dyadic(2, 1.0).unwrap();
        let paths = simulate_model(&ModelSpec::fbs(h(0.75)), &g, 3, 20_000).unwrap();
        let ls: Vec<f64> = paths.iter().map(|p| p.terminal().ln()).collect();
        assert!(mean_estimate(&ls).within(0.0, 3.0));
    }

    #[test]
    fn mfbs_log_variance_adds() {
        let spec = ModelSpec::Mfbs {
            s0: 2.0,
            mu: 0.1,
            sigma: 0.5,
            nu: 0.8,
            h: h(0.7),
        };
        let g = TimeGrid::dyadic(2, 1.0).unwrap();
        let paths = simulate_model(&spec, &g, 4, 20_000).unwrap();
        let x: Vec<f64> = paths
            .iter()
            .map(|p| (p.terminal() / 2.0).ln() + 0.5 * 0.25 - 0.1)
            .collect();
        assert!(variance_estimate(&x).within(0.25 + 0.64, 5.0));
    }

    #[test]
    fn bs_and_mfbs_share_brownian_part() {
        let g = TimeGrid::dyadic(4, 1.0).unwrap();
        let a = simulate_model(&ModelSpec::bs(), &g, 8, 3).unwrap();
        let b = simulate_model(&ModelSpec::mfbs(h(0.75)), &g, 8, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.bm.as_ref().unwrap().values(), y.bm.as_ref().unwrap().values());
        }
    }

    #[test]
    fn autocovariance_examples() {
        let g = TimeGrid::uniform(64, 64.0).unwrap();
        let bs = simulate_model(&ModelSpec::bs(), &g, 5, 2000).unwrap();
        let ac = log_return_autocovariance(&bs, 1.0, 3).unwrap();
        for e in &ac[1..] {
            assert!(e.within(0.0, 3.0), "{e:?}");
        }
        let fbs = simulate_model(&ModelSpec::fbs(h(0.75)), &g, 5, 2000).unwrap();
        let ac = log_return_autocovariance(&fbs, 1.0, 1).unwrap();
        assert!(ac[0].within(1.0, 5.0), "{:?}", ac[0]);
        assert!(ac[1].within(0.5 * (2f64.powf(1.5) - 2.0), 5.0), "{:?}", ac[1]);
        assert!(log_return_autocovariance(&fbs, 0.5, 1).is_err());
    }

    #[test]
    fn csv_ingestion() {
        let data = "time,price\n1.0,2.0\n1.5,2.2\n2.0,2.1\n";
        let p = read_price_csv(data.as_bytes()).unwrap();
        assert_eq!(p.times(), &[0.0, 0.5, 1.0]);
        assert_eq!(p.values(), &[2.0, 2.2, 2.1]);
        assert_eq!(p.grid().dyadic_level(), Some(1));
        assert!(read_price_csv("t,p\n0,1\n1,2\n".as_bytes()).is_err());
        assert!(read_price_csv("time,price\n0,1\n0,2\n".as_bytes()).is_err());
        assert!(read_price_csv("time,price\n0,1\n1,-2\n".as_bytes()).is_err());
    }
}
