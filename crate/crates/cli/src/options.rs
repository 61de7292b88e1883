//! Raw flags, shared by the command line and JSON config files.

use std::fmt;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(
    name = "pbs",
    version,
    about = "Perturbed Black-Scholes pricing, smiles, local volatility and hedging oracles"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: CommandArgs,
}

#[derive(Subcommand, Debug)]
pub enum CommandArgs {
    /// Black-Scholes premium and greeks.
    Price(Options),
    /// Bid, mid and ask under volatility uncertainty.
    Quote(Options),
    /// Implied volatility of the bias-shifted premium.
    Smile(Options),
    /// First-order local variance and its Dupire check.
    Localvol(Options),
    /// Monte Carlo hedging P&L against the closed-form moments.
    Simulate(Options),
    /// Risk-aversion indices of a utility on a wealth grid.
    Utility(Options),
    /// Oracle suites; exit status 4 when a check fails.
    Verify(Options),
}

impl CommandArgs {
    pub fn split(self) -> (Command, Options) {
        match self {
            CommandArgs::Price(o) => (Command::Price, o),
            CommandArgs::Quote(o) => (Command::Quote, o),
            CommandArgs::Smile(o) => (Command::Smile, o),
            CommandArgs::Localvol(o) => (Command::Localvol, o),
            CommandArgs::Simulate(o) => (Command::Simulate, o),
            CommandArgs::Utility(o) => (Command::Utility, o),
            CommandArgs::Verify(o) => (Command::Verify, o),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Price,
    Quote,
    Smile,
    Localvol,
    Simulate,
    Utility,
    Verify,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Price => "price",
            Command::Quote => "quote",
            Command::Smile => "smile",
            Command::Localvol => "localvol",
            Command::Simulate => "simulate",
            Command::Utility => "utility",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    #[default]
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UtilityKind {
    Linear,
    Exponential,
    HalfNormalCdf,
    Crra,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Theorem41,
    Greeks,
    Smile,
    Localvol,
    All,
}

/// Relative index, either a number or the preset `smile-threshold` (σ₀²T/4).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RrSpec {
    Value(f64),
    SmileThreshold,
}

impl RrSpec {
    /// The relative index at cumulated volatility `v`.
    pub fn resolve(&self, v: f64) -> f64 {
        match *self {
            RrSpec::Value(r) => r,
            RrSpec::SmileThreshold => v * v / 4.0,
        }
    }
}

impl FromStr for RrSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "smile-threshold" {
            return Ok(RrSpec::SmileThreshold);
        }
        match s.parse::<f64>() {
            Ok(r) if r.is_finite() => Ok(RrSpec::Value(r)),
            _ => Err(format!("expected a finite number or `smile-threshold`, got `{s}`")),
        }
    }
}

impl fmt::Display for RrSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RrSpec::Value(r) => write!(f, "{r}"),
            RrSpec::SmileThreshold => f.write_str("smile-threshold"),
        }
    }
}

/// Accepts a JSON number or string.
#[derive(Deserialize)]
#[serde(untagged)]
enum NumberOrString {
    Number(f64),
    Text(String),
}

impl Serialize for RrSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            RrSpec::Value(r) => s.serialize_f64(*r),
            RrSpec::SmileThreshold => s.serialize_str("smile-threshold"),
        }
    }
}

impl<'de> Deserialize<'de> for RrSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match NumberOrString::deserialize(d)? {
            NumberOrString::Number(r) => Ok(RrSpec::Value(r)),
            NumberOrString::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Upper bound on the number of points a grid may expand to.
pub const MAX_GRID_POINTS: usize = 100_000;

/// A list of values: `v`, `a,b,c` or `lo:hi:n` (n evenly spaced points).
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    text: String,
    values: Vec<f64>,
}

impl GridSpec {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn single(&self) -> Option<f64> {
        match self.values[..] {
            [v] => Some(v),
            _ => None,
        }
    }
}

impl FromStr for GridSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let text = s.trim();
        let number = |t: &str| -> Result<f64, String> {
            match t.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(format!("`{}` is not a finite number", t.trim())),
            }
        };
        let values = if text.contains(':') {
            let parts: Vec<&str> = text.split(':').collect();
            let [lo, hi, n] = parts[..] else {
                return Err(format!("range `{text}` must have the form lo:hi:n"));
            };
            let (lo, hi) = (number(lo)?, number(hi)?);
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| format!("point count `{}` is not a positive integer", n.trim()))?;
            if !(2..=MAX_GRID_POINTS).contains(&n) {
                return Err(format!("range point count must lie in 2..={MAX_GRID_POINTS}, got {n}"));
            }
            if hi <= lo {
                return Err(format!("range `{text}` must have lo < hi"));
            }
            let step = (hi - lo) / (n - 1) as f64;
            if !step.is_finite() {
                return Err(format!("range `{text}` is too wide"));
            }
            let mut v: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
            v[n - 1] = hi;
            v
        } else {
            let v = text.split(',').map(number).collect::<Result<Vec<_>, _>>()?;
            if v.len() > MAX_GRID_POINTS {
                return Err(format!("list has more than {MAX_GRID_POINTS} values"));
            }
            v
        };
        Ok(GridSpec {
            text: text.to_string(),
            values,
        })
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl Serialize for GridSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.single() {
            Some(v) if !self.text.contains(':') => s.serialize_f64(v),
            _ => s.serialize_str(&self.text),
        }
    }
}

impl<'de> Deserialize<'de> for GridSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match NumberOrString::deserialize(d)? {
            NumberOrString::Number(v) if v.is_finite() => Ok(GridSpec {
                text: v.to_string(),
                values: vec![v],
            }),
            NumberOrString::Number(v) => Err(serde::de::Error::custom(format!("`{v}` is not a finite number"))),
            NumberOrString::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Every flag, all optional; a JSON config file uses the same names.
#[derive(Args, Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    /// Spot price x.
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spot: Option<f64>,
    /// Strike: a value, a list `a,b,c` or a range `lo:hi:n`.
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strike: Option<GridSpec>,
    /// Maturity in years: a value, a list or a range.
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mat: Option<GridSpec>,
    /// True volatility σ₀.
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vol: Option<f64>,
    /// Bias density A on σ√T.
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias: Option<f64>,
    /// Relative index 2vA/Γ, or `smile-threshold` for σ₀²T/4.
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rr: Option<RrSpec>,
    /// Variance density Γ on σ√T.
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Error size ε.
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// Quote quantile level in (0, 0.5).
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// h'(0).
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h1: Option<f64>,
    /// h''(0).
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h2: Option<f64>,
    /// Supply/demand asymmetry h''(0)/h'(0).
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rsd: Option<f64>,
    /// Gauss-Legendre nodes for the vanna time integral.
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nquad: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// σ-draws.
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draws: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Wall-clock budget of a simulation, in seconds.
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utility: Option<UtilityKind>,
    /// Coefficient of the exponential or CRRA utility.
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utility_param: Option<f64>,
    /// Wealth grid of the utility command.
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xs: Option<GridSpec>,
    /// Variance scale in ρ = σ²·r_a/2.
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suite: Option<Suite>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    /// Output file, written atomically; stdout when absent.
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    /// JSON file with default values for any of these flags.
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip)]
    pub config: Option<String>,
}

impl Options {
    /// Flags set here win over `base`.
    pub fn over(self, base: Options) -> Options {
        macro_rules! pick {
            ($($f:ident),*) => { Options { $($f: self.$f.or(base.$f),)* config: self.config } };
        }
        pick!(
            spot,
            strike,
            mat,
            vol,
            bias,
            rr,
            gamma,
            eps,
            alpha,
            h1,
            h2,
            rsd,
            nquad,
            paths,
            steps,
            draws,
            seed,
            budget,
            utility,
            utility_param,
            xs,
            sigma2,
            suite,
            format,
            output
        )
    }
}

/// Parses a `--config` file: the flags as a JSON object plus an optional
/// `command` entry, which must match the subcommand.
pub fn parse_config(text: &str) -> Result<(Option<Command>, Options), String> {
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| format!("config is not valid JSON: {e}"))?;
    let map = value.as_object_mut().ok_or("config must be a JSON object")?;
    let command = match map.remove("command") {
        None => None,
        Some(c) => Some(serde_json::from_value(c).map_err(|e| format!("config command: {e}"))?),
    };
    if map.contains_key("config") {
        return Err("config files cannot include other config files".into());
    }
    let options = serde_json::from_value(value).map_err(|e| format!("config: {e}"))?;
    Ok((command, options))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_forms() {
        assert_eq!("100".parse::<GridSpec>().unwrap().values(), [100.0]);
        assert_eq!("1, 2,3".parse::<GridSpec>().unwrap().values(), [1.0, 2.0, 3.0]);
        assert_eq!(
            "80:120:5".parse::<GridSpec>().unwrap().values(),
            [80.0, 90.0, 100.0, 110.0, 120.0]
        );
        for bad in [
            "",
            "1:2",
            "2:1:3",
            "1:2:1",
            "1:2:x",
            "nan",
            "1,,2",
            "0:1:100001",
            "inf",
            "-1e308:1e308:3",
        ] {
            assert!(bad.parse::<GridSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn grid_round_trips_through_json() {
        for text in ["100", "1,2", "80:120:5"] {
            let g: GridSpec = text.parse().unwrap();
            let back: GridSpec = serde_json::from_value(serde_json::to_value(&g).unwrap()).unwrap();
            assert_eq!(back.values(), g.values());
        }
    }

    #[test]
    fn relative_index_preset() {
        assert_eq!("smile-threshold".parse::<RrSpec>().unwrap().resolve(0.3), 0.09 / 4.0);
        assert_eq!("-0.5".parse::<RrSpec>().unwrap(), RrSpec::Value(-0.5));
        assert!("smile".parse::<RrSpec>().is_err());
    }

    #[test]
    fn config_rejects_unknown_keys_and_nested_configs() {
        assert!(parse_config(r#"{"spot": 1, "sport": 2}"#).is_err());
        assert!(parse_config(r#"{"config": "x.json"}"#).is_err());
        assert!(parse_config("[1]").is_err());
        let (c, o) = parse_config(r#"{"command": "smile", "rr": 0.1, "mat": "0.5,1"}"#).unwrap();
        assert_eq!(c, Some(Command::Smile));
        assert_eq!(o.rr, Some(RrSpec::Value(0.1)));
        assert_eq!(o.mat.unwrap().values(), [0.5, 1.0]);
    }
}
