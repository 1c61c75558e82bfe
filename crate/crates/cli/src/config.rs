//! `key = value` run configuration with `#` comments, layered overrides and a canonical
//! printer (parse after print is the identity).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use ggr_core::scattering::Potential;
use num_rational::Ratio;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("{source_name}: {msg}")]
    Override { source_name: String, msg: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("{0}")]
    Invalid(String),
}

/// Potential as written in the config; tables are kept by path.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialSpec {
    Zero,
    HardCore(f64),
    SquareWell { height: f64, radius: f64 },
    Table(String),
}

impl PotentialSpec {
    pub fn to_potential(&self) -> Result<Potential, ConfigError> {
        let v = match self {
            PotentialSpec::Zero => Potential::Zero,
            PotentialSpec::HardCore(r) => Potential::HardCore { radius: *r },
            PotentialSpec::SquareWell { height, radius } => Potential::SquareWell { height: *height, radius: *radius },
            PotentialSpec::Table(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Invalid(format!("potential table {path}: {e}")))?;
                Potential::parse_table(&text).map_err(|e| ConfigError::Invalid(format!("potential table {path}: {e}")))?
            }
        };
        v.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(v)
    }
}

impl std::fmt::Display for PotentialSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PotentialSpec::Zero => write!(f, "zero"),
            PotentialSpec::HardCore(r) => write!(f, "hard_core {r}"),
            PotentialSpec::SquareWell { height, radius } => write!(f, "square_well {height} {radius}"),
            PotentialSpec::Table(p) => write!(f, "table {p}"),
        }
    }
}

impl FromStr for PotentialSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let num = |x: &str| x.parse::<f64>().map_err(|_| format!("bad number `{x}`"));
        match parts.as_slice() {
            ["zero"] => Ok(PotentialSpec::Zero),
            ["hard_core", r] => Ok(PotentialSpec::HardCore(num(r)?)),
            ["square_well", h, r] => Ok(PotentialSpec::SquareWell { height: num(h)?, radius: num(r)? }),
            ["table", p] => Ok(PotentialSpec::Table(p.to_string())),
            _ => Err(format!("expected `zero`, `hard_core R`, `square_well V0 R` or `table PATH`, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub potential: PotentialSpec,
    /// `k_F L / 2π` per spin
    pub kf_up_ratio: Ratio<i64>,
    pub kf_dn_ratio: Ratio<i64>,
    pub l: f64,
    pub s_up: usize,
    pub s_dn: usize,
    pub b: f64,
    pub grid_m: usize,
    /// explicit momentum indices replacing the polyhedra (small systems)
    pub momenta_up: Option<Vec<[i64; 3]>>,
    pub momenta_dn: Option<Vec<[i64; 3]>>,
    pub p_wave: bool,
    pub order_k: usize,
    pub k_max: usize,
    pub n_g_max: usize,
    pub vertex_cap: usize,
    pub max_internal: usize,
    pub budget: f64,
    /// `p q n m` for the `diagrams` subcommand
    pub counts: [usize; 4],
    pub linked_only: bool,
    /// `(n, m)` reduced density for `expand`; `(0, 0)` means normalization only
    pub target: (usize, usize),
    pub externals: Vec<[f64; 3]>,
    pub threshold: f64,
    pub tolerance: f64,
    pub out: String,
    /// worker cap, 0 for automatic
    pub threads: usize,
}

const REQUIRED: [&str; 5] = ["potential", "kF_up_ratio", "kF_dn_ratio", "L", "b"];

/// Every key in canonical order.
pub const KEYS: [&str; 25] = [
    "potential",
    "kF_up_ratio",
    "kF_dn_ratio",
    "L",
    "s_up",
    "s_dn",
    "b",
    "grid_M",
    "momenta_up",
    "momenta_dn",
    "p_wave",
    "K",
    "k_max",
    "n_g_max",
    "vertex_cap",
    "max_internal",
    "budget",
    "counts",
    "linked_only",
    "target",
    "externals",
    "threshold",
    "tolerance",
    "out",
    "threads",
];

fn defaults() -> BTreeMap<&'static str, &'static str> {
    BTreeMap::from([
        ("s_up", "32"),
        ("s_dn", "32"),
        ("grid_M", "8"),
        ("momenta_up", "polyhedron"),
        ("momenta_dn", "polyhedron"),
        ("p_wave", "true"),
        ("K", "3"),
        ("k_max", "2"),
        ("n_g_max", "2"),
        ("vertex_cap", "8"),
        ("max_internal", "2"),
        ("budget", "1000000000"),
        ("counts", "2 1 0 0"),
        ("linked_only", "false"),
        ("target", "0 0"),
        ("externals", "0 0 0; 1 0 0"),
        ("threshold", "1"),
        ("tolerance", "0.001"),
        ("out", "."),
        ("threads", "0"),
    ])
}

/// Where a value came from, for error messages.
#[derive(Debug, Clone, PartialEq)]
pub enum Origin {
    Line(usize),
    Env(String),
    Flag(String),
    Default,
}

/// Unvalidated layered key/value store.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    values: BTreeMap<&'static str, (String, Origin)>,
}

fn canonical_key(key: &str) -> Option<&'static str> {
    KEYS.iter().copied().find(|k| *k == key)
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::default();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((k, v)) = body.split_once('=') else {
                return Err(ConfigError::Line { line: n, msg: format!("expected `key = value`, got `{body}`") });
            };
            let k = k.trim();
            let key = canonical_key(k).ok_or_else(|| ConfigError::Line { line: n, msg: format!("unknown key `{k}`") })?;
            if raw.values.contains_key(key) {
                return Err(ConfigError::Line { line: n, msg: format!("duplicate key `{key}`") });
            }
            raw.values.insert(key, (v.trim().to_string(), Origin::Line(n)));
        }
        Ok(raw)
    }

    /// `GGR_<KEY>` (key upper-cased) overrides.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
        for (name, value) in vars {
            let Some(rest) = name.strip_prefix("GGR_") else { continue };
            let key = KEYS.iter().copied().find(|k| k.eq_ignore_ascii_case(rest)).ok_or_else(|| ConfigError::Override {
                source_name: name.clone(),
                msg: "unknown key".into(),
            })?;
            self.values.insert(key, (value, Origin::Env(name)));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str, flag: &str) -> Result<(), ConfigError> {
        let k = canonical_key(key)
            .ok_or_else(|| ConfigError::Override { source_name: flag.to_string(), msg: format!("unknown key `{key}`") })?;
        self.values.insert(k, (value.to_string(), Origin::Flag(flag.to_string())));
        Ok(())
    }

    pub fn build(&self) -> Result<RunConfig, ConfigError> {
        for key in REQUIRED {
            if !self.values.contains_key(key) {
                return Err(ConfigError::Missing(key));
            }
        }
        let defaults = defaults();
        let get = |key: &'static str| -> (String, Origin) {
            self.values.get(key).cloned().unwrap_or_else(|| (defaults[key].to_string(), Origin::Default))
        };
        fn fail(origin: Origin, key: &str, msg: String) -> ConfigError {
            let msg = format!("`{key}`: {msg}");
            match origin {
                Origin::Line(line) => ConfigError::Line { line, msg },
                Origin::Env(s) | Origin::Flag(s) => ConfigError::Override { source_name: s, msg },
                Origin::Default => ConfigError::Invalid(msg),
            }
        }
        macro_rules! value {
            ($key:literal, $parse:expr) => {{
                let (text, origin) = get($key);
                let parsed: Result<_, String> = $parse(text.as_str());
                parsed.map_err(|m| fail(origin, $key, m))?
            }};
        }
        let cfg = RunConfig {
            potential: value!("potential", |s: &str| s.parse::<PotentialSpec>()),
            kf_up_ratio: value!("kF_up_ratio", parse_ratio),
            kf_dn_ratio: value!("kF_dn_ratio", parse_ratio),
            l: value!("L", parse_positive),
            s_up: value!("s_up", parse_num),
            s_dn: value!("s_dn", parse_num),
            b: value!("b", parse_positive),
            grid_m: value!("grid_M", parse_num),
            momenta_up: value!("momenta_up", parse_momenta),
            momenta_dn: value!("momenta_dn", parse_momenta),
            p_wave: value!("p_wave", parse_num),
            order_k: value!("K", parse_num),
            k_max: value!("k_max", parse_num),
            n_g_max: value!("n_g_max", parse_num),
            vertex_cap: value!("vertex_cap", parse_num),
            max_internal: value!("max_internal", parse_num),
            budget: value!("budget", parse_positive),
            counts: value!("counts", parse_counts),
            linked_only: value!("linked_only", parse_num),
            target: value!("target", |s: &str| parse_list::<usize>(s).and_then(|v| match v.as_slice() {
                [n, m] => Ok((*n, *m)),
                _ => Err("expected `n m`".to_string()),
            })),
            externals: value!("externals", parse_points),
            threshold: value!("threshold", parse_positive),
            tolerance: value!("tolerance", parse_positive),
            out: get("out").0,
            threads: value!("threads", parse_num),
        };
        Ok(cfg)
    }
}

fn parse_num<T: FromStr>(s: &str) -> Result<T, String> {
    s.trim().parse().map_err(|_| format!("malformed value `{s}`"))
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let x: f64 = parse_num(s)?;
    if !(x > 0.0) || !x.is_finite() {
        return Err(format!("must be positive and finite, got `{s}`"));
    }
    Ok(x)
}

fn parse_ratio(s: &str) -> Result<Ratio<i64>, String> {
    let r: Ratio<i64> = s.trim().parse().map_err(|_| format!("malformed rational `{s}`"))?;
    if r <= Ratio::from_integer(0) {
        return Err(format!("must be positive, got `{s}`"));
    }
    Ok(r)
}

fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split_whitespace().map(parse_num).collect()
}

fn parse_counts(s: &str) -> Result<[usize; 4], String> {
    let v: Vec<usize> = parse_list(s)?;
    v.try_into().map_err(|_| "expected `p q n m`".to_string())
}

fn parse_triples<T: FromStr + Copy>(s: &str) -> Result<Vec<[T; 3]>, String> {
    s.split(';')
        .map(|part| {
            let v: Vec<T> = parse_list(part)?;
            <[T; 3]>::try_from(v).map_err(|_| format!("expected three components in `{}`", part.trim()))
        })
        .collect()
}

fn parse_momenta(s: &str) -> Result<Option<Vec<[i64; 3]>>, String> {
    if s.trim() == "polyhedron" {
        return Ok(None);
    }
    parse_triples(s).map(Some)
}

fn parse_points(s: &str) -> Result<Vec<[f64; 3]>, String> {
    parse_triples(s)
}

fn join_triples<T: std::fmt::Display>(v: &[[T; 3]]) -> String {
    v.iter().map(|p| format!("{} {} {}", p[0], p[1], p[2])).collect::<Vec<_>>().join("; ")
}

impl RunConfig {
    /// Canonical text: every key, canonical order, one line each.
    pub fn print(&self) -> String {
        let momenta = |m: &Option<Vec<[i64; 3]>>| match m {
            None => "polyhedron".to_string(),
            Some(v) => join_triples(v),
        };
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("potential", self.potential.to_string());
        put("kF_up_ratio", self.kf_up_ratio.to_string());
        put("kF_dn_ratio", self.kf_dn_ratio.to_string());
        put("L", self.l.to_string());
        put("s_up", self.s_up.to_string());
        put("s_dn", self.s_dn.to_string());
        put("b", self.b.to_string());
        put("grid_M", self.grid_m.to_string());
        put("momenta_up", momenta(&self.momenta_up));
        put("momenta_dn", momenta(&self.momenta_dn));
        put("p_wave", self.p_wave.to_string());
        put("K", self.order_k.to_string());
        put("k_max", self.k_max.to_string());
        put("n_g_max", self.n_g_max.to_string());
        put("vertex_cap", self.vertex_cap.to_string());
        put("max_internal", self.max_internal.to_string());
        put("budget", self.budget.to_string());
        put("counts", self.counts.map(|c| c.to_string()).join(" "));
        put("linked_only", self.linked_only.to_string());
        put("target", format!("{} {}", self.target.0, self.target.1));
        put("externals", join_triples(&self.externals));
        put("threshold", self.threshold.to_string());
        put("tolerance", self.tolerance.to_string());
        put("out", self.out.clone());
        put("threads", self.threads.to_string());
        out
    }
}

/// Parse a whole file with no overrides.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    RawConfig::parse(text)?.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "potential = hard_core 1\nkF_up_ratio = 3/50\nkF_dn_ratio = 18/5\nL = 72.5\nb = 10\n";

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.kf_up_ratio, Ratio::new(3, 50));
        assert_eq!((c.s_up, c.grid_m, c.order_k, c.momenta_up.clone()), (32, 8, 3, None));
        assert_eq!(c.potential, PotentialSpec::HardCore(1.0));
    }

    #[test]
    fn round_trip_is_identity() {
        let c = parse_config(MINIMAL).unwrap();
        let text = c.print();
        let again = parse_config(&text).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.print(), text);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_config("# header\npotential = zero\nfoo = 1\n").unwrap_err();
        assert_eq!(e, ConfigError::Line { line: 3, msg: "unknown key `foo`".into() });
        let e = parse_config(&format!("{MINIMAL}\nL = 3\n")).unwrap_err();
        assert!(matches!(e, ConfigError::Line { line: 7, .. }));
        let e = parse_config(&MINIMAL.replace("L = 72.5", "L = -1")).unwrap_err();
        assert!(matches!(e, ConfigError::Line { line: 4, .. }), "{e}");
        assert_eq!(parse_config("potential = zero\n").unwrap_err(), ConfigError::Missing("kF_up_ratio"));
    }

    #[test]
    fn overrides_layer_in_order() {
        let mut raw = RawConfig::parse(MINIMAL).unwrap();
        raw.apply_env([("GGR_GRID_M".to_string(), "12".to_string()), ("HOME".to_string(), "/".to_string())]).unwrap();
        raw.set("grid_M", "6", "--grid-M").unwrap();
        raw.set("K", "2", "--order-K").unwrap();
        let c = raw.build().unwrap();
        assert_eq!((c.grid_m, c.order_k), (6, 2));
        assert!(raw.apply_env([("GGR_NOPE".to_string(), "1".to_string())]).is_err());
    }

    #[test]
    fn momenta_and_points() {
        let text = format!("{MINIMAL}momenta_up = 0 0 0; 1 0 0\nexternals = 0 0 0; 1.5 0 0\n");
        let c = parse_config(&text).unwrap();
        assert_eq!(c.momenta_up, Some(vec![[0, 0, 0], [1, 0, 0]]));
        assert_eq!(c.externals[1], [1.5, 0.0, 0.0]);
    }
}
