//! Run configuration: a flat `key = value` file merged with command-line
//! overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mhd_hdg::basis::MAX_DEGREE;
use mhd_hdg::verify::{case_hartmann, case_singular2d, case_smooth2d, ManufacturedCase};
use mhd_hdg::{Diagonal, PhysParams, RhatBc, Variant};

/// A configuration problem; reported with exit status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CaseName {
    Smooth2d,
    Singular2d,
    Hartmann,
    NonlinearSmooth2d,
}

impl CaseName {
    pub fn as_str(self) -> &'static str {
        match self {
            CaseName::Smooth2d => "smooth2d",
            CaseName::Singular2d => "singular2d",
            CaseName::Hartmann => "hartmann",
            CaseName::NonlinearSmooth2d => "nonlinear-smooth2d",
        }
    }

    fn default_params(self) -> PhysParams {
        match self {
            CaseName::Hartmann => PhysParams { re: 7.07, rm: 7.07, kappa: 200.0, ..Default::default() },
            _ => PhysParams::default(),
        }
    }

    fn default_levels(self) -> Vec<usize> {
        match self {
            CaseName::Hartmann => vec![1, 2, 3],
            _ => (0..=4).collect(),
        }
    }
}

impl FromStr for CaseName {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "smooth2d" => Ok(CaseName::Smooth2d),
            "singular2d" => Ok(CaseName::Singular2d),
            "hartmann" => Ok(CaseName::Hartmann),
            "nonlinear-smooth2d" => Ok(CaseName::NonlinearSmooth2d),
            _ => {
                Err(bad(format!("unknown case '{s}' (expected smooth2d, singular2d, hartmann or nonlinear-smooth2d)")))
            }
        }
    }
}

/// Parses `3`, `1,2,4` or the inclusive range `0..4`.
pub fn parse_list(s: &str) -> Result<Vec<usize>, ConfigError> {
    let err = || bad(format!("invalid list '{s}' (expected e.g. 3, 1,2,4 or 0..4)"));
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| err())?;
        let b: usize = b.trim().parse().map_err(|_| err())?;
        if a > b {
            return Err(err());
        }
        return Ok((a..=b).collect());
    }
    let v: Vec<usize> = s.split(',').map(|x| x.trim().parse().map_err(|_| err())).collect::<Result<_, _>>()?;
    if v.is_empty() {
        return Err(err());
    }
    Ok(v)
}

/// Every setting before defaults are applied; later sources override
/// earlier ones field by field.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub case: Option<String>,
    pub variant: Option<String>,
    pub k: Option<String>,
    pub levels: Option<String>,
    pub re: Option<f64>,
    pub rm: Option<f64>,
    pub kappa: Option<f64>,
    pub alpha1: Option<f64>,
    pub beta: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub p0: Option<f64>,
    pub epsilon: Option<f64>,
    pub max_iter: Option<usize>,
    pub rhat_bc: Option<String>,
    pub diagonal: Option<String>,
    pub out: Option<PathBuf>,
    pub dump_matrix: Option<bool>,
    pub threads: Option<usize>,
    pub timings: Option<bool>,
}

macro_rules! merge_fields {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl Overrides {
    pub fn merge(&mut self, o: &Overrides) {
        merge_fields!(self, o; case, variant, k, levels, re, rm, kappa, alpha1, beta, beta1, beta2,
            p0, epsilon, max_iter, rhat_bc, diagonal, out, dump_matrix, threads, timings);
    }

    /// Reads a `key = value` file; `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut o = Overrides::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| bad(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            o.set(key, value).map_err(|e| bad(format!("line {}: {e}", n + 1)))?;
        }
        Ok(o)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<Option<T>, ConfigError> {
            v.parse().map(Some).map_err(|_| bad(format!("invalid value '{v}' for {key}")))
        }
        let s = || Some(value.to_string());
        match key.replace('-', "_").as_str() {
            "case" => self.case = s(),
            "variant" => self.variant = s(),
            "k" => self.k = s(),
            "levels" => self.levels = s(),
            "re" => self.re = num(key, value)?,
            "rm" => self.rm = num(key, value)?,
            "kappa" => self.kappa = num(key, value)?,
            "alpha1" => self.alpha1 = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "p0" => self.p0 = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "max_iter" => self.max_iter = num(key, value)?,
            "rhat_bc" => self.rhat_bc = s(),
            "diagonal" => self.diagonal = s(),
            "out" => self.out = Some(PathBuf::from(value)),
            "dump_matrix" => self.dump_matrix = num(key, value)?,
            "threads" => self.threads = num(key, value)?,
            "timings" => self.timings = num(key, value)?,
            _ => return Err(bad(format!("unknown key '{key}'"))),
        }
        Ok(())
    }
}

/// A validated configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub case: CaseName,
    pub variant: Variant,
    pub ks: Vec<usize>,
    pub levels: Vec<usize>,
    pub params: PhysParams,
    pub p0: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub rhat_bc: RhatBc,
    pub diagonal: Diagonal,
    pub out: PathBuf,
    pub dump_matrix: bool,
    pub threads: Option<usize>,
    pub timings: bool,
}

impl RunConfig {
    pub fn resolve(o: &Overrides) -> Result<Self, ConfigError> {
        let case: CaseName = o.case.as_deref().unwrap_or("smooth2d").parse()?;
        let variant: Variant = match &o.variant {
            Some(v) => v.parse().map_err(|_| bad(format!("unknown variant '{v}' (expected hdg or ehdg)")))?,
            None => Variant::Ehdg,
        };
        let ks = match &o.k {
            Some(k) => parse_list(k)?,
            None => vec![2],
        };
        if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > MAX_DEGREE) {
            return Err(bad(format!("degree k = {k} outside 1..={MAX_DEGREE}")));
        }
        let levels = match &o.levels {
            Some(l) => parse_list(l)?,
            None => case.default_levels(),
        };
        if case == CaseName::Hartmann && levels.contains(&0) {
            return Err(bad("hartmann levels start at 1"));
        }
        if levels.iter().any(|&l| l > 8) {
            return Err(bad("mesh levels above 8 are not supported"));
        }
        let mut params = case.default_params();
        if let Some(v) = o.re {
            params.re = v;
        }
        if let Some(v) = o.rm {
            params.rm = v;
        }
        if let Some(v) = o.kappa {
            params.kappa = v;
        }
        if let Some(v) = o.alpha1 {
            params.alpha1 = v;
        }
        if let Some(v) = o.beta {
            params.beta1 = v;
            params.beta2 = v;
        }
        if let Some(v) = o.beta1 {
            params.beta1 = v;
        }
        if let Some(v) = o.beta2 {
            params.beta2 = v;
        }
        params.validate().map_err(|e| bad(e.to_string()))?;
        if !(params.alpha1 > 0.0) {
            return Err(bad("alpha1 must be positive"));
        }
        let p0 = o.p0.unwrap_or(1.0);
        if !p0.is_finite() {
            return Err(bad("p0 must be finite"));
        }
        let epsilon = o.epsilon.unwrap_or(1e-10);
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(bad("epsilon must be positive"));
        }
        let max_iter = o.max_iter.unwrap_or(100);
        if max_iter == 0 {
            return Err(bad("max_iter must be at least 1"));
        }
        let rhat_bc: RhatBc = match &o.rhat_bc {
            Some(v) => v
                .parse()
                .map_err(|_| bad(format!("unknown rhat-bc '{v}' (expected strong-zero or normal-constraint)")))?,
            None => RhatBc::default(),
        };
        let diagonal = match o.diagonal.as_deref() {
            None | Some("sw-ne") => Diagonal::SouthWestNorthEast,
            Some("nw-se") => Diagonal::NorthWestSouthEast,
            Some(v) => return Err(bad(format!("unknown diagonal '{v}' (expected sw-ne or nw-se)"))),
        };
        if o.threads == Some(0) {
            return Err(bad("threads must be at least 1"));
        }
        Ok(Self {
            case,
            variant,
            ks,
            levels,
            params,
            p0,
            epsilon,
            max_iter,
            rhat_bc,
            diagonal,
            out: o.out.clone().unwrap_or_else(|| PathBuf::from("out")),
            dump_matrix: o.dump_matrix.unwrap_or(false),
            threads: o.threads,
            timings: o.timings.unwrap_or(true),
        })
    }

    /// Single degree for commands that do not sweep `k`.
    pub fn single_k(&self) -> Result<usize, ConfigError> {
        match self.ks.as_slice() {
            [k] => Ok(*k),
            _ => Err(bad("this command takes a single degree k")),
        }
    }

    pub fn manufactured_case(&self) -> Result<ManufacturedCase, ConfigError> {
        let mut case = match self.case {
            CaseName::Smooth2d => case_smooth2d(self.params, self.p0),
            CaseName::NonlinearSmooth2d => case_smooth2d(self.params, self.p0).into_nonlinear(),
            CaseName::Singular2d => case_singular2d(self.params),
            CaseName::Hartmann => case_hartmann(self.params).map_err(|e| bad(e.to_string()))?,
        };
        case.diagonal = self.diagonal;
        Ok(case)
    }
}
