//! Validation of merged flags into a typed job.

use std::time::Duration;

use pbs_core::pricing::{bias_for_relative_index, from_cumulated, MIN_QUAD_NODES};
use pbs_core::simulator::SimConfig;
use pbs_core::{ErrorStructure, HFunction, MarketSpec};

use crate::options::{Command, Format, Options, RrSpec, Suite, UtilityKind};

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_NQUAD: usize = 64;
pub const DEFAULT_PATHS: usize = 10_000;
pub const DEFAULT_STEPS: usize = 256;
pub const DEFAULT_DRAWS: usize = 500;
pub const DEFAULT_XS: &str = "0.1:2:20";
/// Allowed gap between `--bias` and the bias implied by `--rr`.
pub const CONSISTENCY_TOLERANCE: f64 = 1e-12;

/// Error-structure flags on the cumulated volatility σ√T.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorInputs {
    pub gamma: f64,
    pub eps: f64,
    pub bias: Option<f64>,
    pub rr: Option<RrSpec>,
}

impl ErrorInputs {
    /// Structure on `σ₀√T`; `--rr` wins when both are given (they agree).
    pub fn cumulated(&self, v: f64) -> pbs_core::Result<ErrorStructure> {
        let bias = match (self.rr, self.bias) {
            (Some(r), _) => bias_for_relative_index(v, r.resolve(v), self.gamma),
            (None, Some(a)) => a,
            (None, None) => 0.0,
        };
        ErrorStructure::new(v, bias, self.gamma, self.eps)
    }

    /// Structure on σ₀ for maturity `t`.
    pub fn on_sigma(&self, m: &MarketSpec) -> pbs_core::Result<ErrorStructure> {
        Ok(from_cumulated(&self.cumulated(m.total_vol())?, m.maturity))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub spot: f64,
    pub vol: f64,
    pub strikes: Vec<f64>,
    pub mats: Vec<f64>,
    pub errors: ErrorInputs,
}

impl Surface {
    pub fn market(&self, k: f64, t: f64) -> MarketSpec {
        MarketSpec {
            spot: self.spot,
            strike: k,
            maturity: t,
            sigma0: self.vol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSize {
    pub paths: usize,
    pub steps: usize,
    pub draws: usize,
    pub seed: u64,
    pub budget: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Job {
    Price {
        surface: Surface,
    },
    Quote {
        surface: Surface,
        h: HFunction,
        alpha: f64,
        nquad: usize,
    },
    Smile {
        surface: Surface,
    },
    Localvol {
        surface: Surface,
    },
    Simulate {
        sim: SimConfig,
        nquad: usize,
    },
    Utility {
        kind: UtilityKind,
        param: Option<f64>,
        xs: Vec<f64>,
        sigma2: f64,
    },
    Verify {
        suite: Suite,
        sim: SimConfig,
        nquad: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    /// Inputs with defaults filled in, echoed in JSON output.
    pub echo: Options,
    pub format: Format,
    pub output: Option<String>,
    pub job: Job,
}

struct Checker {
    problems: Vec<String>,
}

impl Checker {
    fn fail(&mut self, msg: impl Into<String>) {
        self.problems.push(msg.into());
    }

    fn require<T: Copy>(&mut self, v: Option<T>, flag: &str, command: Command) -> Option<T> {
        if v.is_none() {
            self.fail(format!("--{flag} is required for {}", command.as_str()));
        }
        v
    }

    fn required_positive(&mut self, v: Option<f64>, flag: &str, command: Command) -> Option<f64> {
        let v = self.require(v, flag, command);
        self.positive(v, flag)
    }

    fn required_non_negative(&mut self, v: Option<f64>, flag: &str, command: Command) -> Option<f64> {
        let v = self.require(v, flag, command);
        self.non_negative(v, flag)
    }

    fn positive(&mut self, v: Option<f64>, flag: &str) -> Option<f64> {
        match v {
            Some(x) if x > 0.0 && x.is_finite() => Some(x),
            Some(x) => {
                self.fail(format!("--{flag} must be positive and finite, got {x}"));
                None
            }
            None => None,
        }
    }

    fn non_negative(&mut self, v: Option<f64>, flag: &str) -> Option<f64> {
        match v {
            Some(x) if x >= 0.0 && x.is_finite() => Some(x),
            Some(x) => {
                self.fail(format!("--{flag} must be non-negative and finite, got {x}"));
                None
            }
            None => None,
        }
    }

    fn finite(&mut self, v: Option<f64>, flag: &str) -> Option<f64> {
        match v {
            Some(x) if x.is_finite() => Some(x),
            Some(x) => {
                self.fail(format!("--{flag} must be finite, got {x}"));
                None
            }
            None => None,
        }
    }

    fn count(&mut self, v: Option<usize>, flag: &str) -> Option<usize> {
        match v {
            Some(0) => {
                self.fail(format!("--{flag} must be positive"));
                None
            }
            other => other,
        }
    }

    fn grid(&mut self, values: Option<Vec<f64>>, flag: &str) -> Option<Vec<f64>> {
        let values = values?;
        if values.iter().all(|&v| v > 0.0) {
            Some(values)
        } else {
            self.fail(format!("--{flag} values must all be positive"));
            None
        }
    }
}

fn market_inputs(
    c: &mut Checker,
    o: &mut Options,
    command: Command,
    default_strikes: bool,
) -> Option<(f64, f64, Vec<f64>, Vec<f64>)> {
    let spot = c.required_positive(o.spot, "spot", command);
    let vol = c.required_positive(o.vol, "vol", command);
    if o.strike.is_none() && default_strikes {
        if let Some(x) = spot {
            let grid = format!("{}:{}:41", 0.5 * x, 2.0 * x);
            o.strike = grid.parse().ok();
        }
    }
    let strikes = c
        .require(o.strike.as_ref().map(|_| ()), "strike", command)
        .and(o.strike.as_ref().map(|g| g.values().to_vec()));
    let strikes = c.grid(strikes, "strike");
    let mats = c
        .require(o.mat.as_ref().map(|_| ()), "mat", command)
        .and(o.mat.as_ref().map(|g| g.values().to_vec()));
    let mats = c.grid(mats, "mat");
    Some((spot?, vol?, strikes?, mats?))
}

fn error_inputs(
    c: &mut Checker,
    o: &Options,
    command: Command,
    vol: Option<f64>,
    mats: Option<&[f64]>,
) -> Option<ErrorInputs> {
    let gamma = c.required_non_negative(o.gamma, "gamma", command);
    let eps = c.required_non_negative(o.eps, "eps", command);
    let bias = c.finite(o.bias, "bias");
    if o.bias.is_none() && o.rr.is_none() {
        c.fail(format!("one of --bias or --rr is required for {}", command.as_str()));
    }
    let inputs = ErrorInputs {
        gamma: gamma?,
        eps: eps?,
        bias,
        rr: o.rr,
    };
    if let (Some(a), Some(r), Some(vol), Some(mats)) = (bias, o.rr, vol, mats) {
        for &t in mats {
            let v = vol * t.sqrt();
            let implied = bias_for_relative_index(v, r.resolve(v), inputs.gamma);
            if (implied - a).abs() > CONSISTENCY_TOLERANCE {
                c.fail(format!(
                    "--bias {a} contradicts --rr {r}, which gives A = {implied} at T = {t}"
                ));
                return None;
            }
        }
    }
    Some(inputs)
}

fn h_function(c: &mut Checker, o: &mut Options) -> Option<HFunction> {
    let h1 = *o.h1.get_or_insert(1.0);
    let h2 = match (o.h2, o.rsd) {
        (Some(h2), Some(r)) if (h2 - r * h1).abs() > CONSISTENCY_TOLERANCE => {
            c.fail(format!("--h2 {h2} contradicts --rsd {r} with --h1 {h1}"));
            return None;
        }
        (Some(h2), _) => h2,
        (None, Some(r)) => r * h1,
        (None, None) => 0.0,
    };
    o.h2 = Some(h2);
    match HFunction::new(h1, h2) {
        Ok(h) => Some(h),
        Err(e) => {
            c.fail(e.to_string());
            None
        }
    }
}

fn sim_size(c: &mut Checker, o: &mut Options) -> Option<SimSize> {
    let paths = c.count(Some(*o.paths.get_or_insert(DEFAULT_PATHS)), "paths");
    let steps = c.count(Some(*o.steps.get_or_insert(DEFAULT_STEPS)), "steps");
    let draws = c.count(Some(*o.draws.get_or_insert(DEFAULT_DRAWS)), "draws");
    let seed = *o.seed.get_or_insert(0);
    let budget = c.positive(o.budget, "budget").map(Duration::from_secs_f64);
    if o.budget.is_some() && budget.is_none() {
        return None;
    }
    Some(SimSize {
        paths: paths?,
        steps: steps?,
        draws: draws?,
        seed,
        budget,
    })
}

fn nquad(c: &mut Checker, o: &mut Options) -> Option<usize> {
    let n = *o.nquad.get_or_insert(DEFAULT_NQUAD);
    if n < MIN_QUAD_NODES {
        c.fail(format!("--nquad must be at least {MIN_QUAD_NODES}, got {n}"));
        return None;
    }
    Some(n)
}

fn single(c: &mut Checker, values: &[f64], flag: &str, command: Command) -> Option<f64> {
    match values {
        [v] => Some(*v),
        _ => {
            c.fail(format!("--{flag} must be a single value for {}", command.as_str()));
            None
        }
    }
}

fn sim_config(market: MarketSpec, errors: ErrorInputs, h: HFunction, size: SimSize) -> Result<SimConfig, String> {
    let es = errors.on_sigma(&market).map_err(|e| e.to_string())?;
    let mut cfg = SimConfig::new(market, es, size.paths, size.draws, size.seed);
    cfg.h = h;
    cfg.n_steps = size.steps;
    cfg.time_budget = size.budget;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// Checks completeness and consistency of the flags for `command`, returning
/// one message per problem.
pub fn validate(command: Command, options: Options) -> Result<RunConfig, Vec<String>> {
    let mut o = options;
    let mut c = Checker { problems: Vec::new() };
    let format = *o.format.get_or_insert(Format::Json);
    let output = o.output.clone();
    if output.as_deref() == Some("") {
        c.fail("--output must not be empty");
    }
    if command == Command::Verify {
        o.spot.get_or_insert(100.0);
        o.strike.get_or_insert_with(|| "100".parse().expect("literal grid"));
        o.mat.get_or_insert_with(|| "1".parse().expect("literal grid"));
        o.vol.get_or_insert(0.2);
        o.gamma.get_or_insert(0.04);
        o.eps.get_or_insert(0.01);
        if o.rr.is_none() {
            o.bias.get_or_insert(0.0);
        }
    }
    let alpha = match command {
        Command::Quote => {
            let a = *o.alpha.get_or_insert(DEFAULT_ALPHA);
            if !(a > 0.0 && a < 0.5) {
                c.fail(format!("--alpha must lie in (0, 0.5), got {a}"));
            }
            Some(a)
        }
        _ => None,
    };
    let job = match command {
        Command::Price | Command::Quote | Command::Smile | Command::Localvol => {
            let market = market_inputs(
                &mut c,
                &mut o,
                command,
                matches!(command, Command::Smile | Command::Localvol),
            );
            let errors = if command == Command::Price {
                Some(ErrorInputs {
                    gamma: 0.0,
                    eps: 0.0,
                    bias: None,
                    rr: None,
                })
            } else {
                error_inputs(&mut c, &o, command, o.vol, o.mat.as_ref().map(|g| g.values()))
            };
            let h = if command == Command::Quote {
                h_function(&mut c, &mut o)
            } else {
                Some(HFunction::identity())
            };
            let nq = if command == Command::Quote {
                nquad(&mut c, &mut o)
            } else {
                Some(DEFAULT_NQUAD)
            };
            match (market, errors, h, nq) {
                (Some((spot, vol, strikes, mats)), Some(errors), Some(h), Some(nquad)) => {
                    let surface = Surface {
                        spot,
                        vol,
                        strikes,
                        mats,
                        errors,
                    };
                    Some(match command {
                        Command::Price => Job::Price { surface },
                        Command::Quote => Job::Quote {
                            surface,
                            h,
                            alpha: alpha.unwrap_or(DEFAULT_ALPHA),
                            nquad,
                        },
                        Command::Smile => Job::Smile { surface },
                        _ => Job::Localvol { surface },
                    })
                }
                _ => None,
            }
        }
        Command::Simulate | Command::Verify => {
            let market = market_inputs(&mut c, &mut o, command, false);
            let errors = error_inputs(&mut c, &o, command, o.vol, o.mat.as_ref().map(|g| g.values()));
            let h = h_function(&mut c, &mut o);
            let size = sim_size(&mut c, &mut o);
            let nq = nquad(&mut c, &mut o);
            let suite = if command == Command::Verify {
                Some(*o.suite.get_or_insert(Suite::All))
            } else {
                None
            };
            let (k, t) = match &market {
                Some((_, _, strikes, mats)) => (
                    single(&mut c, strikes, "strike", command),
                    single(&mut c, mats, "mat", command),
                ),
                None => (None, None),
            };
            match (market, k, t, errors, h, size, nq) {
                (Some((spot, vol, _, _)), Some(k), Some(t), Some(errors), Some(h), Some(size), Some(nquad)) => {
                    let market = MarketSpec {
                        spot,
                        strike: k,
                        maturity: t,
                        sigma0: vol,
                    };
                    match sim_config(market, errors, h, size) {
                        Ok(sim) => Some(match suite {
                            Some(suite) => Job::Verify { suite, sim, nquad },
                            None => Job::Simulate { sim, nquad },
                        }),
                        Err(e) => {
                            c.fail(e);
                            None
                        }
                    }
                }
                _ => None,
            }
        }
        Command::Utility => {
            let kind = c.require(o.utility, "utility", command);
            let param = match kind {
                Some(UtilityKind::Exponential | UtilityKind::Crra) => {
                    c.required_positive(o.utility_param, "utility-param", command)
                }
                _ => None,
            };
            if o.xs.is_none() {
                o.xs = DEFAULT_XS.parse().ok();
            }
            let xs = o.xs.as_ref().map(|g| g.values().to_vec());
            if kind == Some(UtilityKind::Crra) && xs.as_ref().is_some_and(|v| v.iter().any(|&x| x <= 0.0)) {
                c.fail("--xs must be positive for the crra utility");
            }
            let sigma2 = c.non_negative(Some(*o.sigma2.get_or_insert(1.0)), "sigma2");
            match (kind, xs, sigma2) {
                (Some(kind), Some(xs), Some(sigma2))
                    if !matches!(kind, UtilityKind::Exponential | UtilityKind::Crra) || param.is_some() =>
                {
                    Some(Job::Utility {
                        kind,
                        param,
                        xs,
                        sigma2,
                    })
                }
                _ => None,
            }
        }
    };
    match job {
        Some(job) if c.problems.is_empty() => Ok(RunConfig {
            command,
            echo: o,
            format,
            output,
            job,
        }),
        _ => {
            if c.problems.is_empty() {
                c.fail("invalid parameters");
            }
            Err(c.problems)
        }
    }
}
