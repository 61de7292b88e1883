//! Execution of validated jobs.

use pbs_core::pricing::{bias_strike_derivs, pnl_moments, quote, smile_conditions};
use pbs_core::simulator::{simulate_pnl, SimConfig};
use pbs_core::surface::{dupire_check, implied_smile, local_vol, positivity_margin, DUPIRE_T_STEP};
use pbs_core::utility::{aversion_indices, UtilityProbe};
use pbs_core::{bs_greeks, bs_price, ErrorStructure, MarketSpec, PbsError};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{ErrorInputs, Job, Surface};
use crate::options::{Suite, UtilityKind};
use crate::output::{num, Cell, Table};

/// What a job produced: a table for CSV and a JSON result.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub table: Table,
    pub json: Value,
    /// Set by `verify` when a check failed.
    pub failed_checks: usize,
}

impl Report {
    fn plain(table: Table) -> Self {
        let json = table.to_json();
        Self {
            table,
            json,
            failed_checks: 0,
        }
    }
}

type Result<T> = std::result::Result<T, PbsError>;

fn grid(surface: &Surface) -> Vec<(f64, f64)> {
    surface
        .mats
        .iter()
        .flat_map(|&t| surface.strikes.iter().map(move |&k| (k, t)))
        .collect()
}

fn price(surface: &Surface) -> Result<Report> {
    let mut table = Table::new(vec![
        "K",
        "T",
        "premium",
        "delta",
        "vega",
        "vomma",
        "vanna",
        "dual_gamma",
        "d1",
        "d2",
    ]);
    for (k, t) in grid(surface) {
        let g = bs_greeks(&surface.market(k, t))?;
        table.push(
            [
                k,
                t,
                g.premium,
                g.delta,
                g.vega,
                g.vomma,
                g.vanna,
                g.dual_gamma,
                g.d1,
                g.d2,
            ]
            .into_iter()
            .map(Cell::Num)
            .collect(),
        );
    }
    Ok(Report::plain(table))
}

fn quotes(surface: &Surface, h: &pbs_core::HFunction, alpha: f64, nquad: usize) -> Result<Report> {
    let rows: Vec<Vec<Cell>> = grid(surface)
        .par_iter()
        .map(|&(k, t)| {
            let m = surface.market(k, t);
            let es = surface.errors.on_sigma(&m)?;
            let q = quote(&es, &m, h, alpha, nquad)?;
            let p = pnl_moments(&es, &m, h, nquad)?;
            Ok([
                k,
                t,
                q.bid,
                q.mid,
                q.ask,
                q.spread(),
                p.bias,
                p.variance,
                p.upsilon1,
                p.upsilon2,
                p.lambda,
            ]
            .into_iter()
            .map(Cell::Num)
            .collect())
        })
        .collect::<Result<_>>()?;
    let mut table = Table::new(vec![
        "K", "T", "bid", "mid", "ask", "spread", "bias", "variance", "upsilon1", "upsilon2", "lambda",
    ]);
    rows.into_iter().for_each(|r| table.push(r));
    Ok(Report::plain(table))
}

fn cumulated(surface: &Surface, t: f64) -> Result<(ErrorStructure, MarketSpec)> {
    let m = surface.market(surface.spot, t);
    Ok((surface.errors.cumulated(m.total_vol())?, m))
}

fn smile(surface: &Surface, with_local_vol: bool) -> Result<Report> {
    let eps = surface.errors.eps;
    let mut columns = vec!["K", "T", "mid", "implied_vol"];
    if with_local_vol {
        columns.extend(["local_variance", "dupire_gap"]);
    }
    columns.push("flags");
    let mut table = Table::new(columns);
    let mut per_maturity = Vec::new();
    for &t in &surface.mats {
        let (es, atm) = cumulated(surface, t)?;
        let points = implied_smile(&es, &atm, &surface.strikes, eps)?;
        for p in points {
            let mut flags = vec![p.flag.as_str()];
            let mut row = vec![
                Cell::Num(p.strike),
                Cell::Num(t),
                Cell::Num(p.mid_price),
                p.implied_vol.map_or(Cell::Empty, Cell::Num),
            ];
            if with_local_vol {
                let m = atm.with_strike(p.strike);
                row.push(match local_vol(&es, &m, eps) {
                    Ok(lv) => Cell::Num(lv.local_variance),
                    Err(PbsError::NonPositiveLocalVariance { local_variance, .. }) => {
                        flags.push("non_positive_local_variance");
                        Cell::Num(local_variance)
                    }
                    Err(e) => return Err(e),
                });
                row.push(match dupire_check(&es, &m, eps, DUPIRE_T_STEP) {
                    Ok(gap) => Cell::Num(gap),
                    Err(_) => {
                        flags.push("dupire_unavailable");
                        Cell::Empty
                    }
                });
            }
            if flags.len() > 1 {
                flags.retain(|f| *f != "ok");
            }
            row.push(Cell::Text(flags.join(";")));
            table.push(row);
        }
        let mut entry = serde_json::Map::new();
        entry.insert("T".into(), num(t));
        if with_local_vol {
            entry.insert("positivity_margin".into(), num(positivity_margin(&es, eps)));
        } else {
            entry.insert(
                "conditions".into(),
                serde_json::to_value(smile_conditions(&es, &atm)?).expect("report serializes"),
            );
        }
        per_maturity.push(Value::Object(entry));
    }
    let json = json!({ "maturities": per_maturity, "points": table.to_json() });
    Ok(Report {
        table,
        json,
        failed_checks: 0,
    })
}

fn simulate(sim: &SimConfig, nquad: usize) -> Result<Report> {
    let res = simulate_pnl(sim)?;
    let theory = pnl_moments(&sim.es, &sim.market, &sim.h, nquad)?;
    let eps = sim.es.epsilon;
    let mut table = Table::new(vec!["quantity", "estimate", "std_error", "theory", "z"]);
    for (name, est, target) in [
        ("bias", res.bias_est, eps * theory.bias),
        ("variance", res.variance_est, eps * theory.variance),
    ] {
        let z = if est.std_error > 0.0 {
            (est.value - target) / est.std_error
        } else {
            f64::NAN
        };
        table.push(vec![
            Cell::Text(name.into()),
            Cell::Num(est.value),
            Cell::Num(est.std_error),
            Cell::Num(target),
            Cell::Num(z),
        ]);
    }
    let d = res.diagnostics;
    let json = json!({
        "estimates": table.to_json(),
        "diagnostics": {
            "dt": num(d.dt),
            "n_paths": d.n_paths,
            "n_steps": d.n_steps,
            "n_sigma_draws": d.n_sigma_draws,
            "within_draw_variance": num(d.within_draw_variance),
            "skewness": num(d.skewness),
        },
    });
    Ok(Report {
        table,
        json,
        failed_checks: 0,
    })
}

fn utility(kind: UtilityKind, param: Option<f64>, xs: &[f64], sigma2: f64) -> Result<Report> {
    let u = match kind {
        UtilityKind::Linear => UtilityProbe::linear(),
        UtilityKind::Exponential => UtilityProbe::exponential(param.unwrap_or(1.0)),
        UtilityKind::HalfNormalCdf => UtilityProbe::half_normal_cdf(),
        UtilityKind::Crra => UtilityProbe::crra(param.unwrap_or(1.0)),
    };
    let mut table = Table::new(vec!["x", "u", "r_a", "r_r", "rho"]);
    for &x in xs {
        let r = aversion_indices(&u, x, sigma2)?;
        table.push([x, u.u(x), r.r_a, r.r_r, r.rho].into_iter().map(Cell::Num).collect());
    }
    Ok(Report::plain(table))
}

/// A named comparison of `value` with `target`.
struct Check {
    suite: &'static str,
    name: String,
    value: f64,
    target: f64,
    tolerance: f64,
    pass: bool,
}

impl Check {
    fn within(suite: &'static str, name: impl Into<String>, value: f64, target: f64, tolerance: f64) -> Self {
        let pass = (value - target).abs() <= tolerance;
        Self {
            suite,
            name: name.into(),
            value,
            target,
            tolerance,
            pass,
        }
    }

    fn above(suite: &'static str, name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            suite,
            name: name.into(),
            value,
            target: bound,
            tolerance: 0.0,
            pass: value > bound,
        }
    }
}

fn theorem41(sim: &SimConfig, nquad: usize) -> Result<Vec<Check>> {
    let res = simulate_pnl(sim)?;
    let theory = pnl_moments(&sim.es, &sim.market, &sim.h, nquad)?;
    let eps = sim.es.epsilon;
    Ok(vec![
        Check::within(
            "theorem41",
            "bias",
            res.bias_est.value,
            eps * theory.bias,
            3.0 * res.bias_est.std_error,
        ),
        Check::within(
            "theorem41",
            "variance",
            res.variance_est.value,
            eps * theory.variance,
            3.0 * res.variance_est.std_error,
        ),
    ])
}

/// Central differences with one Richardson step.
fn greeks_suite(base: &MarketSpec) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for kr in [0.8, 1.0, 1.25] {
        for tr in [0.5, 1.0, 2.0] {
            let m = MarketSpec::new(base.spot, base.spot * kr, base.maturity * tr, base.sigma0)?;
            let g = bs_greeks(&m)?;
            let c = |x: f64, k: f64, s: f64| {
                bs_price(&MarketSpec {
                    spot: x,
                    strike: k,
                    sigma0: s,
                    ..m
                })
            };
            let (x, k, s) = (m.spot, m.strike, m.sigma0);
            let rich =
                |d: &dyn Fn(f64) -> Result<f64>, h: f64| -> Result<f64> { Ok((4.0 * d(0.5 * h)? - d(h)?) / 3.0) };
            let c0 = c(x, k, s)?;
            let hs = 0.05 * s;
            let hk = 0.02 * k;
            let fd = [
                (
                    "vega",
                    g.vega,
                    rich(&|h| Ok((c(x, k, s + h)? - c(x, k, s - h)?) / (2.0 * h)), hs)?,
                ),
                (
                    "vomma",
                    g.vomma,
                    rich(&|h| Ok((c(x, k, s + h)? - 2.0 * c0 + c(x, k, s - h)?) / (h * h)), hs)?,
                ),
                (
                    "dual_gamma",
                    g.dual_gamma,
                    rich(&|h| Ok((c(x, k + h, s)? - 2.0 * c0 + c(x, k - h, s)?) / (h * h)), hk)?,
                ),
                (
                    "vanna",
                    g.vanna,
                    rich(
                        &|h| {
                            let b = h / hs * hk;
                            Ok(
                                (c(x + b, k, s + h)? - c(x - b, k, s + h)? - c(x + b, k, s - h)? + c(x - b, k, s - h)?)
                                    / (4.0 * h * b),
                            )
                        },
                        hs,
                    )?,
                ),
            ];
            for (name, closed, approx) in fd {
                let label = format!(
                    "{name} K={} T={}",
                    crate::output::fmt15(m.strike),
                    crate::output::fmt15(m.maturity)
                );
                checks.push(Check::within(
                    "greeks",
                    label,
                    closed,
                    approx,
                    1e-4 * closed.abs().max(1e-8),
                ));
            }
        }
    }
    Ok(checks)
}

fn smile_suite(base: &MarketSpec, eps: f64) -> Result<Vec<Check>> {
    let v = base.total_vol();
    let atm = base.with_strike(base.spot);
    let errors = ErrorInputs {
        gamma: v * v,
        eps,
        bias: None,
        rr: Some(crate::options::RrSpec::SmileThreshold),
    };
    let es = errors.cumulated(v)?;
    let strikes = [0.95 * base.spot, base.spot, 1.05 * base.spot];
    let pts = implied_smile(&es, &atm, &strikes, eps)?;
    let iv = |i: usize| pts[i].implied_vol.unwrap_or(f64::NAN);
    Ok(vec![
        Check::within("smile", "ATM implied vol", iv(1), base.sigma0, 1e-8),
        Check::above("smile", "implied vol at 0.95x", iv(0), base.sigma0),
        Check::above("smile", "implied vol at 1.05x", iv(2), base.sigma0),
        Check::above(
            "smile",
            "ATM bias convexity",
            bias_strike_derivs(&es, &atm)?.d2a_dk2,
            0.0,
        ),
    ])
}

fn localvol_suite(base: &MarketSpec, eps: f64) -> Result<Vec<Check>> {
    let atm = base.with_strike(base.spot);
    let v = atm.total_vol();
    let y = v * v;
    let es = ErrorStructure::new(v, 0.0, y, eps)?;
    let lv = match local_vol(&es, &atm, eps) {
        Ok(p) => p.local_variance,
        Err(PbsError::NonPositiveLocalVariance { local_variance, .. }) => local_variance,
        Err(e) => return Err(e),
    };
    let s2 = atm.sigma0 * atm.sigma0;
    let want = s2 * (1.0 - eps * (y + 2.0) / 2.0);
    let gap = dupire_check(&es, &atm, eps, DUPIRE_T_STEP)?;
    Ok(vec![
        Check::within("localvol", "ATM local variance", lv, want, 1e-12),
        Check::within("localvol", "Dupire gap", gap, 0.0, 5.0 * eps * eps),
    ])
}

fn verify(suite: Suite, sim: &SimConfig, nquad: usize) -> Result<Report> {
    let base = sim.market;
    let eps = sim.es.epsilon;
    let mut checks = Vec::new();
    if matches!(suite, Suite::Greeks | Suite::All) {
        checks.extend(greeks_suite(&base)?);
    }
    if matches!(suite, Suite::Smile | Suite::All) {
        checks.extend(smile_suite(&base, eps)?);
    }
    if matches!(suite, Suite::Localvol | Suite::All) {
        checks.extend(localvol_suite(&base, eps)?);
    }
    if matches!(suite, Suite::Theorem41 | Suite::All) {
        checks.extend(theorem41(sim, nquad)?);
    }
    let mut table = Table::new(vec!["suite", "check", "value", "target", "tolerance", "pass"]);
    for c in &checks {
        table.push(vec![
            Cell::Text(c.suite.into()),
            Cell::Text(c.name.clone()),
            Cell::Num(c.value),
            Cell::Num(c.target),
            Cell::Num(c.tolerance),
            Cell::Bool(c.pass),
        ]);
    }
    let failed_checks = checks.iter().filter(|c| !c.pass).count();
    let json = json!({ "passed": failed_checks == 0, "failed": failed_checks, "checks": table.to_json() });
    Ok(Report {
        table,
        json,
        failed_checks,
    })
}

pub fn execute(job: &Job) -> Result<Report> {
    match job {
        Job::Price { surface } => price(surface),
        Job::Quote {
            surface,
            h,
            alpha,
            nquad,
        } => quotes(surface, h, *alpha, *nquad),
        Job::Smile { surface } => smile(surface, false),
        Job::Localvol { surface } => smile(surface, true),
        Job::Simulate { sim, nquad } => simulate(sim, *nquad),
        Job::Utility {
            kind,
            param,
            xs,
            sigma2,
        } => utility(*kind, *param, xs, *sigma2),
        Job::Verify { suite, sim, nquad } => verify(*suite, sim, *nquad),
    }
}
