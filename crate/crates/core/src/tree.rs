//! Binary tree approximations of the fractional model: the Volterra kernel,
//! disturbed random walks, arbitrage nodes and the discrete Wick algebra.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta, beta_reg};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::fbm::HurstIndex;
use crate::quad::{graded_toward_one, graded_toward_zero, GaussLegendre};
use crate::rng::{stream, Domain};

/// Largest depth for a Walsh expansion.
pub const MAX_EXPANSION_DEPTH: usize = 24;
/// Largest depth for evaluating a tree at every leaf.
pub const MAX_EXHAUSTIVE_DEPTH: usize = 20;
/// Largest walk length.
pub const MAX_WALK_STEPS: usize = 1 << 16;

/// The kernel `k(t,s) = c s^{½−H} ∫_s^t u^{H−½}(u−s)^{H−3/2} du` turning
/// Brownian motion into fBm, `B_t = ∫_0^t k(t,s) dW_s`.
///
/// The constant `c` is calibrated so that `∫_0^1 k(1,s)² ds = 1`. At
/// `H = ½` the kernel is the indicator `1{s < t}`.
#[derive(Debug, Clone)]
pub struct FractionalKernel {
    h: HurstIndex,
    c: f64,
    gl: GaussLegendre,
}

/// Normalization constants of the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConstants {
    pub h: f64,
    /// Fixed by requiring `Var(B_1) = 1`.
    pub calibrated: f64,
    /// `(H−½)·√(2H·Γ(3/2−H)/(Γ(H+½)·Γ(2−2H)))`.
    pub molchan_golosov: f64,
    /// Radicand of the variant printed with `(2H+½)·Γ(½−H)` in the numerator.
    pub printed_radicand: f64,
    /// Its square root times `(H−½)`, when the radicand is nonnegative.
    pub printed: Option<f64>,
}

impl KernelConstants {
    pub fn relative_discrepancy(&self) -> f64 {
        (self.calibrated - self.molchan_golosov).abs() / self.molchan_golosov
    }
}

impl FractionalKernel {
    pub fn new(h: HurstIndex) -> Result<Self> {
        if h.value() < 0.5 {
            return Err(Error::Domain(format!(
                "kernel construction needs H ≥ 1/2, got {}",
                h.value()
            )));
        }
        let mut k = Self {
            h,
            c: 1.0,
            gl: GaussLegendre::new(24),
        };
        if !h.is_brownian() {
            k.c = 1.0 / k.unit_kernel_square_norm().sqrt();
        }
        Ok(k)
    }

    pub fn hurst(&self) -> HurstIndex {
        self.h
    }

    pub fn normalization(&self) -> f64 {
        self.c
    }

    pub fn constants(&self) -> KernelConstants {
        let h = self.h.value();
        let mg = if self.h.is_brownian() {
            1.0
        } else {
            (h - 0.5) * (2.0 * h * gamma(1.5 - h) / (gamma(h + 0.5) * gamma(2.0 - 2.0 * h))).sqrt()
        };
        let radicand = (2.0 * h + 0.5) * gamma(0.5 - h) / (gamma(h + 0.5) * gamma(2.0 - 2.0 * h));
        KernelConstants {
            h,
            calibrated: self.c,
            molchan_golosov: mg,
            printed_radicand: radicand,
            printed: (radicand >= 0.0).then(|| (h - 0.5) * radicand.sqrt()),
        }
    }

    fn ab(&self) -> (f64, f64) {
        let h = self.h.value();
        (1.0 - 2.0 * h, h - 0.5)
    }

    /// `J(z) = ∫_z^1 v^{−2H}(1−v)^{H−3/2} dv` in closed form.
    fn j(&self, z: f64) -> f64 {
        let (a, b) = self.ab();
        if z >= 1.0 {
            return 0.0;
        }
        let tail = beta(a + 1.0, b) * beta_reg(b, a + 1.0, 1.0 - z);
        -(z.powf(a) * (1.0 - z).powf(b)) / a + (a + b) / a * tail
    }

    /// `κ(y) = k(1, y)` with unit normalization.
    fn unit_profile(&self, y: f64) -> f64 {
        if y <= 0.0 || y >= 1.0 {
            return 0.0;
        }
        y.powf(self.h.value() - 0.5) * self.j(y)
    }

    fn unit_kernel_square_norm(&self) -> f64 {
        // y = x^p absorbs the y^{1−2H} singularity at the origin
        let p = 1.0 / (2.0 - 2.0 * self.h.value());
        let mut breaks: Vec<f64> = graded_toward_zero(40).iter().map(|x| 0.5 * x).collect();
        breaks.extend(graded_toward_one(40).iter().skip(1).map(|x| 0.5 + 0.5 * x));
        let gl = GaussLegendre::new(24);
        gl.integrate_panels(&breaks, |x| {
            let y = x.powf(p);
            let k = self.unit_profile(y);
            k * k * p * x.powf(p - 1.0)
        })
    }

    /// `∫_0^z k(1, y) dy`.
    pub fn profile_antiderivative(&self, z: f64) -> f64 {
        if z <= 0.0 {
            return 0.0;
        }
        let z = z.min(1.0);
        if self.h.is_brownian() {
            return z;
        }
        let h = self.h.value();
        let (p, q) = (1.5 - h, h - 0.5);
        let inc = beta(p, q) * beta_reg(p, q, z);
        self.c / (h + 0.5) * (inc + z.powf(h + 0.5) * self.j(z))
    }

    /// `k(t,s)` by the closed form `t^{H−½}κ(s/t)`.
    pub fn k(&self, t: f64, s: f64) -> f64 {
        if s >= t || s <= 0.0 {
            return 0.0;
        }
        if self.h.is_brownian() {
            return 1.0;
        }
        self.c * t.powf(self.h.value() - 0.5) * self.unit_profile(s / t)
    }

    /// `∫_lo^hi k(t,u) du`.
    pub fn integral(&self, t: f64, lo: f64, hi: f64) -> f64 {
        let lo = lo.max(0.0);
        let hi = hi.min(t);
        if hi <= lo {
            return 0.0;
        }
        t.powf(self.h.value() + 0.5)
            * (self.profile_antiderivative(hi / t) - self.profile_antiderivative(lo / t))
    }

    /// `k(t,s)` by Gauss–Legendre quadrature after substituting
    /// `u − s = (t−s)v^q`, `q = 1/(H−½)`, which turns the integral into
    /// `(t−s)^{H−½}/(H−½) ∫_0^1 (s + (t−s)v^q)^{H−½} dv`.
    pub fn k_quadrature(&self, t: f64, s: f64) -> Result<f64> {
        if s <= 0.0 {
            return Err(Error::Domain(format!("kernel needs s > 0, got {s}")));
        }
        if s >= t {
            return Ok(0.0);
        }
        if self.h.is_brownian() {
            return Ok(1.0);
        }
        let b = self.h.value() - 0.5;
        let q = 1.0 / b;
        let inner = self
            .gl
            .integrate_panels(&graded_toward_one(12), |v| (s + (t - s) * v.powf(q)).powf(b));
        Ok(self.c * s.powf(-b) * (t - s).powf(b) / b * inner)
    }
}

/// `kernel_k` with the calibrated normalization.
pub fn kernel_k(t: f64, s: f64, h: HurstIndex) -> Result<f64> {
    FractionalKernel::new(h)?.k_quadrature(t, s)
}

/// `kⁿ(t,s) = n ∫_{s−1/n}^s k(⌊nt⌋/n, u) du`.
pub fn regularized_kernel(kernel: &FractionalKernel, n: usize, t: f64, s: f64) -> f64 {
    let j = (n as f64 * t).floor();
    if j <= 0.0 {
        return 0.0;
    }
    let nf = n as f64;
    nf * kernel.integral(j / nf, s - 1.0 / nf, s)
}

/// Step weights `w_{j,i} = kⁿ(j/n, i/n)/√n`, so that `Bⁿ_{j/n} = Σ_{i≤j} w_{j,i} ξ_i`.
#[derive(Debug, Clone)]
pub struct WalkWeights {
    kernel: FractionalKernel,
    n: usize,
}

impl WalkWeights {
    pub fn new(n: usize, h: HurstIndex) -> Result<Self> {
        if n == 0 || n > MAX_WALK_STEPS {
            return Err(Error::Usage(format!(
                "walk length must be in 1..={MAX_WALK_STEPS}, got {n}"
            )));
        }
        Ok(Self {
            kernel: FractionalKernel::new(h)?,
            n,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kernel(&self) -> &FractionalKernel {
        &self.kernel
    }

    /// `(w_{j,1}, …, w_{j,j})`.
    pub fn row(&self, j: usize) -> Vec<f64> {
        if j == 0 {
            return Vec::new();
        }
        let nf = self.n as f64;
        let jf = j as f64;
        let scale = nf.sqrt() * (jf / nf).powf(self.kernel.h.value() + 0.5);
        let anti: Vec<f64> = (0..=j)
            .map(|i| self.kernel.profile_antiderivative(i as f64 / jf))
            .collect();
        anti.windows(2).map(|w| scale * (w[1] - w[0])).collect()
    }

    /// First-order coefficients of `ΔBⁿ_j = Bⁿ_j − Bⁿ_{j−1}` in `ξ_1..ξ_j`.
    pub fn increment_row(&self, j: usize) -> Vec<f64> {
        let mut cur = self.row(j);
        for (c, p) in cur.iter_mut().zip(self.row(j - 1)) {
            *c -= p;
        }
        cur
    }
}

/// One disturbed random walk with its binary price path.
#[derive(Debug, Clone)]
pub struct FractionalWalk {
    /// `ξ_1..ξ_n ∈ {−1, +1}`.
    pub signs: Vec<f64>,
    /// `Bⁿ_{j/n}`, `j = 0..=n`.
    pub values: Vec<f64>,
    /// `Sⁿ_{j/n} = Π_{i≤j}(1 + ΔBⁿ_i)`.
    pub prices: Vec<f64>,
}

fn signs(seed: u64, index: u64, n: usize) -> Vec<f64> {
    let mut rng = stream(seed, Domain::Signs, index);
    (0..n)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect()
}

/// `n_paths` walks sharing one weight computation. Cost is `O(n²)` kernel
/// evaluations plus `O(n²)` per path.
pub fn sample_fractional_walks(
    weights: &WalkWeights,
    seed: u64,
    n_paths: usize,
) -> Vec<FractionalWalk> {
    let n = weights.n;
    let all_signs: Vec<Vec<f64>> = (0..n_paths as u64).map(|p| signs(seed, p, n)).collect();
    let columns: Vec<Vec<f64>> = (1..=n)
        .into_par_iter()
        .map(|j| {
            let w = weights.row(j);
            all_signs
                .iter()
                .map(|xi| w.iter().zip(xi).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    all_signs
        .into_iter()
        .enumerate()
        .map(|(p, xi)| {
            let mut values = Vec::with_capacity(n + 1);
            values.push(0.0);
            values.extend(columns.iter().map(|c| c[p]));
            let mut prices = Vec::with_capacity(n + 1);
            prices.push(1.0);
            for j in 1..=n {
                prices.push(prices[j - 1] * (1.0 + values[j] - values[j - 1]));
            }
            FractionalWalk {
                signs: xi,
                values,
                prices,
            }
        })
        .collect()
}

pub fn sample_fractional_walk(n: usize, h: HurstIndex, seed: u64) -> Result<FractionalWalk> {
    let w = WalkWeights::new(n, h)?;
    Ok(sample_fractional_walks(&w, seed, 1).remove(0))
}

/// `Bⁿ_1` for `n_paths` independent sign sequences (only the last row of
/// weights is needed).
pub fn terminal_values(weights: &WalkWeights, seed: u64, n_paths: usize) -> Vec<f64> {
    let w = weights.row(weights.n);
    (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let xi = signs(seed, p, weights.n);
            w.iter().zip(&xi).map(|(a, b)| a * b).sum()
        })
        .collect()
}

/// Sign sequence followed when searching for an arbitrage node.
#[derive(Debug, Clone, PartialEq)]
pub enum Prefix {
    AllUp,
    AllDown,
    Signs(Vec<f64>),
}

impl Prefix {
    fn sign(&self, i: usize) -> f64 {
        match self {
            Prefix::AllUp => 1.0,
            Prefix::AllDown => -1.0,
            Prefix::Signs(s) => s.get(i).copied().unwrap_or(1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Both children lie above the node: buy.
    Up,
    /// Both children lie below the node: sell short.
    Down,
}

/// A node after `depth` signs whose next price move has a known sign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbitrageNode {
    pub n: usize,
    pub depth: usize,
    /// `Σ_{i≤d}(w_{d+1,i} − w_{d,i})ξ_i`.
    pub drift: f64,
    /// `w_{d+1,d+1}`, the weight of the next sign.
    pub weight: f64,
    /// `|drift| − weight > 0`.
    pub margin: f64,
    pub direction: Direction,
    /// Profit of the one-step strategy (one share long or short, financed
    /// by the bond) on the up and down branches, evaluated from the walk.
    pub branch_profits: [f64; 2],
}

impl ArbitrageNode {
    pub fn verified(&self) -> bool {
        self.branch_profits.iter().all(|&p| p > 0.0)
    }
}

/// First node along `prefix` where both one-step price moves of the
/// fractional binary model share a sign.
pub fn find_arbitrage_node(weights: &WalkWeights, prefix: &Prefix) -> Option<ArbitrageNode> {
    let n = weights.n;
    let xi: Vec<f64> = (0..n).map(|i| prefix.sign(i)).collect();
    let mut prev = Vec::new();
    let mut price = 1.0;
    let mut b_prev = 0.0;
    for d in 0..n {
        let next = weights.row(d + 1);
        let drift: f64 = (0..d).map(|i| (next[i] - prev[i]) * xi[i]).sum();
        let weight = next[d];
        let margin = drift.abs() - weight;
        if margin > 0.0 {
            let direction = if drift > 0.0 { Direction::Up } else { Direction::Down };
            let phi = if drift > 0.0 { 1.0 } else { -1.0 };
            let b_d: f64 = prev.iter().zip(&xi).map(|(a, b)| a * b).sum();
            let branch = |s: f64| {
                let b_next: f64 =
                    next[..d].iter().zip(&xi).map(|(a, b)| a * b).sum::<f64>() + next[d] * s;
                phi * price * (b_next - b_d)
            };
            return Some(ArbitrageNode {
                n,
                depth: d,
                drift,
                weight,
                margin,
                direction,
                branch_profits: [branch(1.0), branch(-1.0)],
            });
        }
        let b_next: f64 = next.iter().zip(&xi).map(|(a, b)| a * b).sum();
        price *= 1.0 + b_next - b_prev;
        b_prev = b_next;
        prev = next;
    }
    None
}

// ---------------------------------------------------------------------------
// Walsh expansions and the discrete Wick product

/// `X = Σ_A c_A ξ_A` over subsets `A ⊆ {1..n}`, indexed by bitmask
/// (bit `i` stands for `ξ_{i+1}`).
#[derive(Debug, Clone, PartialEq)]
pub struct WalshExpansion {
    n: usize,
    coeffs: Vec<f64>,
}

impl WalshExpansion {
    pub fn zero(n: usize) -> Result<Self> {
        if n > MAX_EXPANSION_DEPTH {
            return Err(Error::Usage(format!(
                "Walsh expansions are limited to n ≤ {MAX_EXPANSION_DEPTH}, got {n}"
            )));
        }
        Ok(Self {
            n,
            coeffs: vec![0.0; 1 << n],
        })
    }

    pub fn constant(n: usize, c: f64) -> Result<Self> {
        let mut e = Self::zero(n)?;
        e.coeffs[0] = c;
        Ok(e)
    }

    /// `ξ_i` for `1 ≤ i ≤ n`.
    pub fn xi(n: usize, i: usize) -> Result<Self> {
        if i == 0 || i > n {
            return Err(Error::Usage(format!("ξ_{i} is outside 1..={n}")));
        }
        let mut e = Self::zero(n)?;
        e.coeffs[1 << (i - 1)] = 1.0;
        Ok(e)
    }

    /// `c + Σ_i a_i ξ_i`.
    pub fn first_order(n: usize, c: f64, a: &[f64]) -> Result<Self> {
        let mut e = Self::constant(n, c)?;
        for (i, &ai) in a.iter().enumerate().take(n) {
            e.coeffs[1 << i] = ai;
        }
        Ok(e)
    }

    pub fn from_coefficients(n: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != 1 << n || n > MAX_EXPANSION_DEPTH {
            return Err(Error::Usage("coefficient vector must have length 2^n".into()));
        }
        Ok(Self { n, coeffs })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn coefficient(&self, mask: usize) -> f64 {
        self.coeffs[mask]
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    /// `E[X]`, the coefficient of the empty set.
    pub fn expectation(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        Ok(Self {
            n: self.n,
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            n: self.n,
            coeffs: self.coeffs.iter().map(|a| c * a).collect(),
        }
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.n != other.n {
            return Err(Error::Usage(format!(
                "expansions over {} and {} signs",
                self.n, other.n
            )));
        }
        Ok(())
    }

    /// The same random variable viewed over `m ≥ n` signs.
    pub fn lift(&self, m: usize) -> Result<Self> {
        let mut e = Self::zero(m)?;
        if m < self.n {
            return Err(Error::Usage("cannot lift to fewer signs".into()));
        }
        e.coeffs[..self.coeffs.len()].copy_from_slice(&self.coeffs);
        Ok(e)
    }

    /// `X ⋄ (c + Σ_i a_i ξ_i)` over `m ≥ n` signs in `O(m·2^m)`.
    pub fn wick_first_order(&self, m: usize, c: f64, a: &[f64]) -> Result<Self> {
        let mut out = self.lift(m)?;
        for x in out.coeffs.iter_mut() {
            *x *= c;
        }
        for (mask, &v) in self.coeffs.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for (i, &ai) in a.iter().enumerate().take(m) {
                if mask & (1 << i) == 0 {
                    out.coeffs[mask | (1 << i)] += ai * v;
                }
            }
        }
        Ok(out)
    }

    /// Value at the sign assignment `signs` (bit `i` set means `ξ_{i+1} = +1`).
    pub fn evaluate(&self, signs: usize) -> f64 {
        let full = (1usize << self.n) - 1;
        let minus = !signs & full;
        self.coeffs
            .iter()
            .enumerate()
            .map(|(mask, &c)| {
                if (mask & minus).count_ones() % 2 == 0 {
                    c
                } else {
                    -c
                }
            })
            .sum()
    }

    /// Values at all `2^n` sign assignments via the fast Walsh–Hadamard
    /// transform.
    pub fn evaluate_all(&self) -> Result<Vec<f64>> {
        if self.n > MAX_EXHAUSTIVE_DEPTH {
            return Err(Error::Usage(format!(
                "exhaustive evaluation is limited to n ≤ {MAX_EXHAUSTIVE_DEPTH}, got {}",
                self.n
            )));
        }
        let mut v = self.coeffs.clone();
        let len = v.len();
        let mut half = 1;
        while half < len {
            for block in v.chunks_mut(2 * half) {
                let (lo, hi) = block.split_at_mut(half);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let (a, b) = (*x, *y);
                    *x = a + b;
                    *y = a - b;
                }
            }
            half *= 2;
        }
        // v[y] = Σ_A c_A (−1)^{|A∧y|}; ξ = −1 exactly on the bits of y
        let full = len - 1;
        Ok((0..len).map(|s| v[!s & full]).collect())
    }
}

/// The discrete Wick product: `ξ_A ⋄ ξ_B = ξ_{A∪B}` when `A ∩ B = ∅` and 0
/// otherwise, extended bilinearly. Runs in `O(3^n)`.
pub fn wick_product(a: &WalshExpansion, b: &WalshExpansion) -> Result<WalshExpansion> {
    a.check(b)?;
    let n = a.n;
    let full = (1usize << n) - 1;
    let mut out = WalshExpansion::zero(n)?;
    for (ma, &ca) in a.coeffs.iter().enumerate() {
        if ca == 0.0 {
            continue;
        }
        let comp = full & !ma;
        let mut sub = comp;
        loop {
            let cb = b.coeffs[sub];
            if cb != 0.0 {
                out.coeffs[ma | sub] += ca * cb;
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & comp;
        }
    }
    Ok(out)
}

/// Counts failures of commutativity, associativity and bilinearity of the
/// Wick product over all pairs and triples of basis monomials for `n`
/// signs, plus the product rule `ξ_A ⋄ ξ_B = ξ_{A∪B}` or 0.
pub fn wick_law_violations(n: usize) -> Result<usize> {
    let size = 1usize << n;
    let basis = |m: usize| -> Result<WalshExpansion> {
        let mut e = WalshExpansion::zero(n)?;
        e.coeffs[m] = 1.0;
        Ok(e)
    };
    let all: Vec<WalshExpansion> = (0..size).map(basis).collect::<Result<_>>()?;
    let mut bad = 0;
    for a in 0..size {
        for b in 0..size {
            let ab = wick_product(&all[a], &all[b])?;
            let expected = if a & b == 0 { basis(a | b)? } else { WalshExpansion::zero(n)? };
            if ab != expected || ab != wick_product(&all[b], &all[a])? {
                bad += 1;
            }
            for c in 0..size {
                let left = wick_product(&ab, &all[c])?;
                let right = wick_product(&all[a], &wick_product(&all[b], &all[c])?)?;
                if left != right {
                    bad += 1;
                }
                // (2ξ_A + 3ξ_C) ⋄ ξ_B = 2 ξ_A⋄ξ_B + 3 ξ_C⋄ξ_B
                let lin = wick_product(&all[a].scale(2.0).add(&all[c].scale(3.0))?, &all[b])?;
                let split = ab.scale(2.0).add(&wick_product(&all[c], &all[b])?.scale(3.0))?;
                if lin != split {
                    bad += 1;
                }
            }
        }
    }
    Ok(bad)
}

// ---------------------------------------------------------------------------
// Trees

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreeKind {
    /// `Sⁿ = Π (1 + ΔBⁿ)`.
    Fractional,
    /// `Xⁿ = Π^⋄ (1 + ΔBⁿ)`.
    Wick,
}

/// Node values of a complete binary tree. `levels[d][mask]` is the value
/// after the signs encoded in the low `d` bits of `mask`.
#[derive(Debug, Clone)]
pub struct BinaryTree {
    pub kind: TreeKind,
    pub levels: Vec<Vec<f64>>,
}

/// A node with a one-step riskless profit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeArbitrage {
    pub depth: usize,
    pub mask: usize,
    pub value: f64,
    pub up_child: f64,
    pub down_child: f64,
    pub direction: Direction,
}

impl BinaryTree {
    /// The fractional binary price tree of depth `n ≤ 20`.
    pub fn fractional(weights: &WalkWeights) -> Result<Self> {
        let n = weights.n;
        check_exhaustive(n)?;
        let mut levels = vec![vec![1.0]];
        for d in 1..=n {
            let inc = weights.increment_row(d);
            let parent = &levels[d - 1];
            let level: Vec<f64> = (0..1usize << d)
                .into_par_iter()
                .map(|mask| {
                    let db: f64 = inc
                        .iter()
                        .enumerate()
                        .map(|(i, a)| if mask >> i & 1 == 1 { *a } else { -a })
                        .sum();
                    parent[mask & ((1 << (d - 1)) - 1)] * (1.0 + db)
                })
                .collect();
            levels.push(level);
        }
        Ok(Self {
            kind: TreeKind::Fractional,
            levels,
        })
    }

    /// The Wick binary tree of depth `n ≤ 20`, built from the Walsh
    /// expansions of `X_d` over the first `d` signs.
    pub fn wick(weights: &WalkWeights) -> Result<Self> {
        check_exhaustive(weights.n)?;
        let expansions = wick_expansions(weights)?;
        let levels = expansions
            .iter()
            .map(WalshExpansion::evaluate_all)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kind: TreeKind::Wick,
            levels,
        })
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn leaves(&self) -> &[f64] {
        &self.levels[self.depth()]
    }

    /// Children of `(d, mask)`: the up child sets bit `d`.
    pub fn children(&self, d: usize, mask: usize) -> (f64, f64) {
        let next = &self.levels[d + 1];
        (next[mask | (1 << d)], next[mask])
    }

    /// Every node where both children move in the same direction.
    pub fn arbitrage_nodes(&self) -> Vec<TreeArbitrage> {
        let mut out = Vec::new();
        for d in 0..self.depth() {
            for (mask, &v) in self.levels[d].iter().enumerate() {
                let (up, down) = self.children(d, mask);
                let direction = if up > v && down > v {
                    Direction::Up
                } else if up < v && down < v {
                    Direction::Down
                } else {
                    continue;
                };
                out.push(TreeArbitrage {
                    depth: d,
                    mask,
                    value: v,
                    up_child: up,
                    down_child: down,
                    direction,
                });
            }
        }
        out
    }

    /// Writes `depth,path,value` rows (path is the sign bitmask).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["depth", "path", "value"])?;
        for (d, level) in self.levels.iter().enumerate() {
            for (mask, v) in level.iter().enumerate() {
                w.write_record([d.to_string(), mask.to_string(), format!("{v:e}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn check_exhaustive(n: usize) -> Result<()> {
    if n > MAX_EXHAUSTIVE_DEPTH {
        return Err(Error::Usage(format!(
            "exhaustive trees are limited to depth {MAX_EXHAUSTIVE_DEPTH}, got {n}"
        )));
    }
    Ok(())
}

/// `X_0 = 1, X_d = X_{d−1} ⋄ (1 + ΔBⁿ_d)`, each over its first `d` signs.
pub fn wick_expansions(weights: &WalkWeights) -> Result<Vec<WalshExpansion>> {
    let n = weights.n;
    if n > MAX_EXPANSION_DEPTH {
        return Err(Error::Usage(format!(
            "Walsh expansions are limited to n ≤ {MAX_EXPANSION_DEPTH}, got {n}"
        )));
    }
    let mut out = vec![WalshExpansion::constant(0, 1.0)?];
    for d in 1..=n {
        let next = out[d - 1].wick_first_order(d, 1.0, &weights.increment_row(d))?;
        out.push(next);
    }
    Ok(out)
}

/// Terminal Wick value `Xⁿ_T` as an expansion, with its values at every
/// leaf when `n ≤ 20`.
#[derive(Debug, Clone)]
pub struct WickTerminal {
    pub expansion: WalshExpansion,
    pub leaves: Option<Vec<f64>>,
}

pub fn wick_tree_terminal(n: usize, h: HurstIndex) -> Result<WickTerminal> {
    if n > MAX_EXPANSION_DEPTH {
        return Err(Error::Usage(format!(
            "Wick tree depth {n} exceeds the cap {MAX_EXPANSION_DEPTH}"
        )));
    }
    let weights = WalkWeights::new(n, h)?;
    let expansion = wick_expansions(&weights)?.pop().expect("depth ≥ 0");
    let leaves = if n <= MAX_EXHAUSTIVE_DEPTH {
        Some(expansion.evaluate_all()?)
    } else {
        None
    };
    Ok(WickTerminal { expansion, leaves })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(x: f64) -> HurstIndex {
        HurstIndex::new(x).unwrap()
    }

    #[test]
    fn calibrated_constant_matches_standard_normalization() {
        for hv in [0.55, 0.65, 0.75, 0.9] {
            let c = FractionalKernel::new(h(hv)).unwrap().constants();
            assert!(c.relative_discrepancy() < 1e-8, "{c:?}");
            assert!(c.printed_radicand < 0.0);
            assert!(c.printed.is_none());
        }
        let c = FractionalKernel::new(h(0.75)).unwrap().constants();
        assert!((c.molchan_golosov - 0.267_411_158_757_997_2).abs() < 1e-12);
    }

    #[test]
    fn closed_form_matches_quadrature() {
        for hv in [0.55, 0.75, 0.9] {
            let k = FractionalKernel::new(h(hv)).unwrap();
            for &(t, s) in &[(1.0, 0.3), (2.0, 1.9), (0.5, 0.01), (1.0, 0.999)] {
                let a = k.k(t, s);
                let b = k.k_quadrature(t, s).unwrap();
                assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "h={hv} ({t},{s}): {a} vs {b}");
            }
        }
    }

    #[test]
    fn kernel_conventions() {
        let k = FractionalKernel::new(h(0.75)).unwrap();
        assert_eq!(k.k_quadrature(1.0, 1.0).unwrap(), 0.0);
        assert_eq!(k.k_quadrature(1.0, 2.0).unwrap(), 0.0);
        assert!(matches!(k.k_quadrature(1.0, 0.0), Err(Error::Domain(_))));
        assert!(FractionalKernel::new(h(0.3)).is_err());
        let k1 = k.k_quadrature(1.0, 0.4).unwrap();
        let k2 = k.k_quadrature(1.5, 0.4).unwrap();
        assert!(k2 > k1);
    }

    #[test]
    fn antiderivative_matches_numeric_integral() {
        let k = FractionalKernel::new(h(0.7)).unwrap();
        let gl = GaussLegendre::new(24);
        let num = gl.integrate_panels(&graded_toward_zero(40), |y| k.k(1.0, y * 0.6)) * 0.6;
        assert!((num - k.profile_antiderivative(0.6)).abs() < 1e-8);
    }

    #[test]
    fn regularized_kernel_basics() {
        let k = FractionalKernel::new(h(0.75)).unwrap();
        assert_eq!(regularized_kernel(&k, 16, 0.05, 0.03), 0.0);
        let w = WalkWeights::new(64, h(0.75)).unwrap();
        let r = w.row(64);
        assert!(r.iter().all(|&x| x >= 0.0));
        let lower = w.row(32);
        for i in 0..32 {
            assert!(r[i] > lower[i]);
        }
        let x = regularized_kernel(&k, 64, 1.0, 10.0 / 64.0);
        assert!((x / 8.0 - r[9]).abs() < 1e-14);
        // pointwise convergence at a continuity point
        let target = k.k(1.0, 0.5);
        let e1 = (regularized_kernel(&k, 64, 1.0, 0.5) - target).abs();
        let e2 = (regularized_kernel(&k, 4096, 1.0, 0.5) - target).abs();
        assert!(e2 < e1 && e2 < 1e-3);
    }

    #[test]
    fn brownian_weights_are_flat() {
        let w = WalkWeights::new(16, h(0.5)).unwrap();
        for x in w.row(16) {
            assert!((x - 0.25).abs() < 1e-15);
        }
        assert!(find_arbitrage_node(&w, &Prefix::AllUp).is_none());
        let v: f64 = w.row(16).iter().map(|x| x * x).sum();
        assert!((v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn walk_memory() {
        let w = WalkWeights::new(32, h(0.75)).unwrap();
        assert!(w.row(32)[0] > 0.0);
        let inc = w.increment_row(32);
        assert!(inc[0] != 0.0);
    }

    #[test]
    fn walk_prices_follow_increments() {
        let walk = sample_fractional_walk(64, h(0.75), 3).unwrap();
        for j in 1..=64 {
            let r = walk.prices[j] / walk.prices[j - 1] - 1.0;
            assert!((r - (walk.values[j] - walk.values[j - 1])).abs() < 1e-12);
        }
        let w = WalkWeights::new(64, h(0.75)).unwrap();
        let t = terminal_values(&w, 3, 1);
        assert!((t[0] - walk.values[64]).abs() < 1e-12);
    }

    #[test]
    fn arbitrage_node_checks_out() {
        let w = WalkWeights::new(64, h(0.75)).unwrap();
        let node = find_arbitrage_node(&w, &Prefix::AllUp).unwrap();
        assert_eq!(node.direction, Direction::Up);
        assert!(node.verified(), "{node:?}");
        let node = find_arbitrage_node(&w, &Prefix::AllDown).unwrap();
        assert_eq!(node.direction, Direction::Down);
        assert!(node.verified());
    }

    #[test]
    fn wick_product_examples() {
        let x1 = WalshExpansion::xi(2, 1).unwrap();
        let x2 = WalshExpansion::xi(2, 2).unwrap();
        assert_eq!(wick_product(&x1, &x2).unwrap().coefficient(0b11), 1.0);
        assert!(wick_product(&x1, &x1).unwrap().coefficients().iter().all(|&c| c == 0.0));
        let one_plus = WalshExpansion::first_order(2, 1.0, &[1.0]).unwrap();
        let sq = wick_product(&one_plus, &one_plus).unwrap();
        assert_eq!(sq.coefficients(), &[1.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn first_order_product_matches_general() {
        let a = WalshExpansion::from_coefficients(3, vec![1.0, 0.5, -0.2, 0.1, 0.3, 0.0, 0.7, -1.0])
            .unwrap();
        let f = [0.3, -0.4, 0.25];
        let b = WalshExpansion::first_order(3, 0.9, &f).unwrap();
        let general = wick_product(&a, &b).unwrap();
        let fast = a.wick_first_order(3, 0.9, &f).unwrap();
        for (x, y) in general.coefficients().iter().zip(fast.coefficients()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn evaluation_matches_direct_sum() {
        let a = WalshExpansion::from_coefficients(3, vec![1.0, 0.5, -0.2, 0.1, 0.3, 0.0, 0.7, -1.0])
            .unwrap();
        let all = a.evaluate_all().unwrap();
        for s in 0..8usize {
            let xi = |i: usize| if s >> i & 1 == 1 { 1.0 } else { -1.0 };
            let direct: f64 = (0..8usize)
                .map(|m| {
                    (0..3).filter(|i| m >> i & 1 == 1).map(xi).product::<f64>()
                        * a.coefficient(m)
                })
                .sum();
            assert!((all[s] - direct).abs() < 1e-14);
            assert!((a.evaluate(s) - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn wick_laws_hold_on_small_bases() {
        for n in 0..=3 {
            assert_eq!(wick_law_violations(n).unwrap(), 0);
        }
    }

    #[test]
    fn wick_tree_mean_and_single_step() {
        let t = wick_tree_terminal(1, h(0.75)).unwrap();
        let w = WalkWeights::new(1, h(0.75)).unwrap();
        assert_eq!(t.expansion.coefficients(), &[1.0, w.row(1)[0]]);
        for n in 2..=8 {
            let t = wick_tree_terminal(n, h(0.75)).unwrap();
            let leaves = t.leaves.unwrap();
            let avg = leaves.iter().sum::<f64>() / leaves.len() as f64;
            assert!((avg - 1.0).abs() < 1e-12);
            assert_eq!(t.expansion.expectation(), 1.0);
        }
        assert!(wick_tree_terminal(25, h(0.75)).is_err());
    }

    #[test]
    fn trees_are_consistent() {
        let w = WalkWeights::new(6, h(0.75)).unwrap();
        let s = BinaryTree::fractional(&w).unwrap();
        let x = BinaryTree::wick(&w).unwrap();
        assert_eq!(s.levels[0], vec![1.0]);
        assert_eq!(x.levels[0], vec![1.0]);
        // reconstruct one leaf from a sampled walk with the same signs
        let walk = sample_fractional_walks(&w, 2, 1).remove(0);
        let mask = walk
            .signs
            .iter()
            .enumerate()
            .fold(0usize, |m, (i, &s)| if s > 0.0 { m | 1 << i } else { m });
        assert!((s.leaves()[mask] - walk.prices[6]).abs() < 1e-12);
        let ratio: Vec<f64> = s.leaves().iter().zip(x.leaves()).map(|(a, b)| b / a).collect();
        let spread = ratio.iter().cloned().fold(f64::MIN, f64::max)
            - ratio.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread > 1e-6);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("depth,path,value\n0,0,1e0\n"));
        assert_eq!(text.lines().count(), 1 + (1 << 7) - 1);
    }
}
