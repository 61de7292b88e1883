//! Monte Carlo delta hedging under the true volatility with a trader
//! volatility drawn from the perturbed law.
//!
//! Each σ-draw hedges `n_paths` geometric Brownian paths (exact lognormal
//! increments) with Black-Scholes deltas at its own volatility, on `n_steps`
//! equal rebalancing dates. Every path owns a generator seeded from
//! `(seed, draw, path)`, and its step index is the position in that stream,
//! so results do not depend on the thread schedule. Sums are compensated and
//! combined in a fixed order.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::black_scholes::{bs_greeks, price_unchecked, MarketSpec};
use crate::error::{argument, domain, PbsError, Result};
use crate::error_calculus::{perturbed_sample, DiffusionSpec, ErrorStructure, SmoothFunction};
use crate::normal::{self, CdfTable};
use crate::pricing::HFunction;

pub const DEFAULT_STEPS: usize = 512;

/// Paths per parallel work item.
const BLOCK: usize = 1024;

/// Draws evaluated between two checks of the time budget.
const DRAW_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub market: MarketSpec,
    /// Error structure on the volatility, centred at `market.sigma0`.
    pub es: ErrorStructure,
    pub h: HFunction,
    pub n_paths: usize,
    pub n_steps: usize,
    pub n_sigma_draws: usize,
    pub seed: u64,
    /// Wall-clock limit; exceeding it yields [`PbsError::Partial`].
    #[serde(default)]
    pub time_budget: Option<Duration>,
}

impl SimConfig {
    pub fn new(market: MarketSpec, es: ErrorStructure, n_paths: usize, n_sigma_draws: usize, seed: u64) -> Self {
        Self {
            market,
            es,
            h: HFunction::identity(),
            n_paths,
            n_steps: DEFAULT_STEPS,
            n_sigma_draws,
            seed,
            time_budget: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        if self.n_paths == 0 || self.n_steps == 0 || self.n_sigma_draws == 0 {
            return Err(argument(format!(
                "path, step and draw counts must be positive (got {}, {}, {})",
                self.n_paths, self.n_steps, self.n_sigma_draws
            )));
        }
        if (self.es.value - self.market.sigma0).abs() > 1e-12 {
            return Err(argument(format!(
                "error structure value {} differs from sigma0 = {}",
                self.es.value, self.market.sigma0
            )));
        }
        HFunction::new(self.h.h1, self.h.h2)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    /// Whether `target` lies within `k` standard errors.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimDiagnostics {
    pub dt: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub n_sigma_draws: usize,
    /// Mean over draws of the within-draw sample variance of `h(P&L)`.
    pub within_draw_variance: f64,
    /// Skewness of the conditional means across draws.
    pub skewness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    /// Mean of `h(P&L)`, to compare with `ε·(h1·Υ₁ + ½h2·Υ₂)`.
    pub bias_est: Estimate,
    /// Across-draw variance of the conditional means, to compare with `ε·h1²·Λ`.
    pub variance_est: Estimate,
    pub sigma_draws: Vec<f64>,
    /// Mean of `h(P&L)` per draw.
    pub conditional_means: Vec<f64>,
    pub conditional_std_errors: Vec<f64>,
    pub diagnostics: SimDiagnostics,
}

/// Compensated (Neumaier) sum.
#[derive(Debug, Clone, Copy, Default)]
struct Sum {
    sum: f64,
    c: f64,
}

impl Sum {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

/// First two raw sums of a sample.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: usize,
    s1: Sum,
    s2: Sum,
}

impl Moments {
    #[inline]
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.s1.add(x);
        self.s2.add(x * x);
    }

    fn merge(&mut self, other: &Moments) {
        self.n += other.n;
        self.s1.add(other.s1.value());
        self.s2.add(other.s2.value());
    }

    fn mean(&self) -> f64 {
        self.s1.value() / self.n as f64
    }

    fn sample_variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let m = self.mean();
        ((self.s2.value() - n * m * m) / (n - 1.0)).max(0.0)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for the stream keyed by `(seed, draw, path)`.
fn stream(seed: u64, draw: u64, path: u64) -> Xoshiro256PlusPlus {
    let key = splitmix(splitmix(splitmix(seed) ^ draw) ^ path.rotate_left(32));
    Xoshiro256PlusPlus::seed_from_u64(key)
}

/// Path index reserved for the σ-draw itself.
const SIGMA_STREAM: u64 = u64::MAX;

fn sigma_draw(cfg: &SimConfig, draw: usize) -> Result<f64> {
    let g: f64 = stream(cfg.seed, draw as u64, SIGMA_STREAM).sample(StandardNormal);
    let sigma = perturbed_sample(&cfg.es, g);
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(domain(format!("sigma draw {draw} is not positive ({sigma})")));
    }
    Ok(sigma)
}

/// Per-step hedge coefficients for one trader volatility.
struct HedgeSchedule {
    /// `1/(σ√τᵢ)`
    inv_v: Vec<f64>,
    /// `σ√τᵢ/2`
    half_v: Vec<f64>,
}

impl HedgeSchedule {
    fn new(sigma: f64, maturity: f64, n_steps: usize) -> Self {
        let dt = maturity / n_steps as f64;
        let (inv_v, half_v) = (0..n_steps)
            .map(|i| {
                let v = sigma * (maturity - i as f64 * dt).sqrt();
                (1.0 / v, 0.5 * v)
            })
            .unzip();
        Self { inv_v, half_v }
    }
}

/// Paths advanced together in the hot loop; independent dependency chains
/// keep the pipeline busy.
const LANES: usize = 4;

/// Terminal P&L of `LANES` hedged paths: premium at the trader volatility
/// plus the hedge gains minus the payoff.
#[inline]
fn hedged_pnl(
    rngs: &mut [Xoshiro256PlusPlus; LANES],
    m: &MarketSpec,
    sched: &HedgeSchedule,
    table: &CdfTable,
    premium: f64,
    drift: f64,
    diffusion: f64,
) -> [f64; LANES] {
    let ln_k = m.strike.ln();
    let mut ln_s = [m.spot.ln(); LANES];
    let mut s = [m.spot; LANES];
    let mut gains = [0.0; LANES];
    for (&inv_v, &half_v) in sched.inv_v.iter().zip(&sched.half_v) {
        for l in 0..LANES {
            let delta = table.eval((ln_s[l] - ln_k) * inv_v + half_v);
            let z: f64 = rngs[l].sample(StandardNormal);
            ln_s[l] += diffusion * z - drift;
            let next = ln_s[l].exp();
            gains[l] += delta * (next - s[l]);
            s[l] = next;
        }
    }
    std::array::from_fn(|l| premium + gains[l] - (s[l] - m.strike).max(0.0))
}

fn draw_block(
    cfg: &SimConfig,
    table: &CdfTable,
    draw: usize,
    sigma: f64,
    sched: &HedgeSchedule,
    block: usize,
) -> Moments {
    let m = &cfg.market;
    let dt = m.maturity / cfg.n_steps as f64;
    let diffusion = m.sigma0 * dt.sqrt();
    let drift = 0.5 * diffusion * diffusion;
    let premium = price_unchecked(m.spot, m.strike, sigma * m.maturity.sqrt());
    let start = block * BLOCK;
    let end = (start + BLOCK).min(cfg.n_paths);
    let mut acc = Moments::default();
    // the last group may run past `end`; those lanes are simulated and dropped
    for first in (start..end).step_by(LANES) {
        let mut rngs = std::array::from_fn(|l| stream(cfg.seed, draw as u64, (first + l) as u64));
        let pnl = hedged_pnl(&mut rngs, m, sched, table, premium, drift, diffusion);
        for (l, &p) in pnl.iter().enumerate() {
            if first + l < end {
                acc.push(cfg.h.apply(p));
            }
        }
    }
    acc
}

/// Hedging P&L statistics across σ-draws.
pub fn simulate_pnl(cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let started = Instant::now();
    let table = CdfTable::new();
    let blocks = cfg.n_paths.div_ceil(BLOCK);
    let mut sigmas = Vec::with_capacity(cfg.n_sigma_draws);
    let mut per_draw = Vec::with_capacity(cfg.n_sigma_draws);

    for chunk_start in (0..cfg.n_sigma_draws).step_by(DRAW_CHUNK) {
        if let Some(budget) = cfg.time_budget {
            if chunk_start > 0 && started.elapsed() > budget {
                return Err(PbsError::Partial {
                    completed: chunk_start,
                    requested: cfg.n_sigma_draws,
                });
            }
        }
        let chunk_end = (chunk_start + DRAW_CHUNK).min(cfg.n_sigma_draws);
        let chunk_sigmas = (chunk_start..chunk_end)
            .map(|d| sigma_draw(cfg, d))
            .collect::<Result<Vec<_>>>()?;
        let schedules: Vec<_> = chunk_sigmas
            .iter()
            .map(|&s| HedgeSchedule::new(s, cfg.market.maturity, cfg.n_steps))
            .collect();
        let tasks: Vec<(usize, usize)> = (0..chunk_sigmas.len())
            .flat_map(|d| (0..blocks).map(move |b| (d, b)))
            .collect();
        let results: Vec<Moments> = tasks
            .par_iter()
            .map(|&(d, b)| draw_block(cfg, &table, chunk_start + d, chunk_sigmas[d], &schedules[d], b))
            .collect();
        for block_moments in results.chunks(blocks) {
            let mut acc = Moments::default();
            for bm in block_moments {
                acc.merge(bm);
            }
            per_draw.push(acc);
        }
        sigmas.extend(chunk_sigmas);
    }

    let conditional_means: Vec<f64> = per_draw.iter().map(Moments::mean).collect();
    let conditional_std_errors: Vec<f64> = per_draw
        .iter()
        .map(|m| (m.sample_variance() / m.n as f64).sqrt())
        .collect();
    let within_draw_variance = per_draw.iter().map(Moments::sample_variance).sum::<f64>() / per_draw.len() as f64;

    let d = conditional_means.len() as f64;
    let mut across = Moments::default();
    conditional_means.iter().for_each(|&x| across.push(x));
    let mean = across.mean();
    let variance = across.sample_variance();
    let (m3, m4) = conditional_means.iter().fold((0.0, 0.0), |(a3, a4), &x| {
        let c = x - mean;
        (a3 + c * c * c, a4 + c * c * c * c)
    });
    let (m3, m4) = (m3 / d, m4 / d);
    let bias_se = if conditional_means.len() > 1 {
        (variance / d).sqrt()
    } else {
        conditional_std_errors[0]
    };
    let variance_se = if conditional_means.len() > 3 {
        ((m4 - variance * variance * (d - 3.0) / (d - 1.0)) / d).max(0.0).sqrt()
    } else {
        0.0
    };
    let skewness = if variance > 0.0 { m3 / variance.powf(1.5) } else { 0.0 };

    Ok(SimResult {
        bias_est: Estimate {
            value: mean,
            std_error: bias_se,
        },
        variance_est: Estimate {
            value: variance,
            std_error: variance_se,
        },
        sigma_draws: sigmas,
        conditional_means,
        conditional_std_errors,
        diagnostics: SimDiagnostics {
            dt: cfg.market.maturity / cfg.n_steps as f64,
            n_paths: cfg.n_paths,
            n_steps: cfg.n_steps,
            n_sigma_draws: cfg.n_sigma_draws,
            within_draw_variance,
            skewness,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Upsilon2Estimate {
    /// `(vega² + E[I²])·Γ`
    pub upsilon2: Estimate,
    /// `E[I²]` with `I = Σ vanna(σ₀, Sᵢ, T - tᵢ)·(Sᵢ₊₁ - Sᵢ)`, the discrete
    /// version of `σ₀²∫₀ᵀ E[S_t²·vanna²] dt`.
    pub integral: Estimate,
}

/// Monte Carlo counterpart of the `Υ₂` quadrature, on `n_paths` paths at the
/// true volatility (σ-draw count is ignored).
pub fn estimate_upsilon2(cfg: &SimConfig) -> Result<Upsilon2Estimate> {
    cfg.validate()?;
    let m = cfg.market;
    let vega = bs_greeks(&m)?.vega;
    let dt = m.maturity / cfg.n_steps as f64;
    let diffusion = m.sigma0 * dt.sqrt();
    let drift = 0.5 * diffusion * diffusion;
    let sched = HedgeSchedule::new(m.sigma0, m.maturity, cfg.n_steps);
    let ln_k = m.strike.ln();
    let blocks = cfg.n_paths.div_ceil(BLOCK);
    let per_block: Vec<Moments> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = Moments::default();
            for path in b * BLOCK..((b + 1) * BLOCK).min(cfg.n_paths) {
                let mut rng = stream(cfg.seed, 0, path as u64);
                let mut ln_s = m.spot.ln();
                let mut s = m.spot;
                let mut integral = 0.0;
                for (&inv_v, &half_v) in sched.inv_v.iter().zip(&sched.half_v) {
                    let d1 = (ln_s - ln_k) * inv_v + half_v;
                    let d2 = d1 - 2.0 * half_v;
                    let vanna = -d2 * normal::pdf(d1) / m.sigma0;
                    let z: f64 = rng.sample(StandardNormal);
                    ln_s += diffusion * z - drift;
                    let next = ln_s.exp();
                    integral += vanna * (next - s);
                    s = next;
                }
                acc.push(integral * integral);
            }
            acc
        })
        .collect();
    let mut acc = Moments::default();
    per_block.iter().for_each(|b| acc.merge(b));
    let n = acc.n as f64;
    let integral = Estimate {
        value: acc.mean(),
        std_error: (acc.sample_variance() / n).sqrt(),
    };
    let gamma = cfg.es.variance;
    Ok(Upsilon2Estimate {
        upsilon2: Estimate {
            value: (vega * vega + integral.value) * gamma,
            std_error: integral.std_error * gamma,
        },
        integral,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaPoint {
    pub t: f64,
    /// `(1/t)·E[(M_t - N_t)²]`
    pub statistic: Estimate,
}

/// Estimates `(1/t)·E[(M_t - N_t)²]` for `M_t = ∫₀ᵗ F'(X_s)·a(X_s) dB_s` and
/// its frozen-coefficient approximation `N_t = F'(X₀)·a(X₀)·B_t`, with `X`
/// discretised by Euler on `n_steps` steps per horizon.
pub fn lemma_small_t_check<A, B>(
    spec: &DiffusionSpec<A, B>,
    probe: &(impl SmoothFunction + Sync),
    t_grid: &[f64],
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<Vec<LemmaPoint>>
where
    A: Fn(f64) -> f64 + Sync,
    B: Fn(f64) -> f64 + Sync,
{
    if t_grid.is_empty() || n_paths < 2 || n_steps == 0 {
        return Err(argument(
            "need a non-empty horizon grid, at least two paths and one step",
        ));
    }
    if t_grid.iter().any(|&t| !(t > 0.0 && t.is_finite())) || t_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(argument("horizons must be positive, finite and strictly decreasing"));
    }
    let x0 = spec.x0;
    let frozen = probe.first(x0) * (spec.a)(x0);
    t_grid
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let dt = t / n_steps as f64;
            let sqrt_dt = dt.sqrt();
            let blocks = n_paths.div_ceil(BLOCK);
            let per_block: Vec<Moments> = (0..blocks)
                .into_par_iter()
                .map(|b| {
                    let mut acc = Moments::default();
                    for path in b * BLOCK..((b + 1) * BLOCK).min(n_paths) {
                        let mut rng = stream(seed, k as u64, path as u64);
                        let (mut x, mut m, mut bm) = (x0, 0.0, 0.0);
                        for _ in 0..n_steps {
                            let db = sqrt_dt * rng.sample::<f64, _>(StandardNormal);
                            let a = (spec.a)(x);
                            m += probe.first(x) * a * db;
                            x += a * db + (spec.b)(x) * dt;
                            bm += db;
                        }
                        let gap = m - frozen * bm;
                        acc.push(gap * gap);
                    }
                    acc
                })
                .collect();
            let mut acc = Moments::default();
            per_block.iter().for_each(|b| acc.merge(b));
            let statistic = Estimate {
                value: acc.mean() / t,
                std_error: (acc.sample_variance() / acc.n as f64).sqrt() / t,
            };
            if !statistic.value.is_finite() {
                return Err(PbsError::Numeric(format!("lemma statistic at t = {t} is not finite")));
            }
            Ok(LemmaPoint { t, statistic })
        })
        .collect()
}
