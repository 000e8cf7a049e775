//! Scenario files: one TOML document per experiment.
//!
//! ```toml
//! name = "fig2a-condition-desk"
//! kind = "condition-sweep"        # iteration-trace | condition-sweep | mean-sweep | rho-learning | custom
//! algorithms = ["hygec-known-rho"] # and/or "em-hygec"
//! seeds = { start = 0, count = 20 } # or an explicit list: seeds = [0, 3, 7]
//! rho = 0.1
//! snr_db = 12.0
//! sigma_x_sq = 1.0                # optional, default 1
//!
//! [dims]
//! m = 100
//! n = 200
//! k = 20
//!
//! [matrix]                        # optional, default i.i.d. with zero mean
//! kind = "conditioned"            # or "iid" with `mean = ...`
//! kappa = 1.0
//!
//! [channel]                       # optional, default unquantized
//! bits = 2
//! clip_range = 1.5                # optional
//!
//! [sweep]                         # optional; overrides one field per point
//! parameter = "kappa"             # kappa | mean | snr_db
//! values = [1.0, 10.0, 100.0, 1000.0]
//!
//! [hygec]                         # optional engine overrides
//! max_iter = 200
//!
//! [em]                            # optional EM settings
//! rho_init = 0.01
//! ```

use std::fmt;
use std::path::Path;

use hygec::{EmConfig, HygecConfig, InstanceSpec, MatrixKind, PzInit};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    IterationTrace,
    ConditionSweep,
    MeanSweep,
    RhoLearning,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// HyGEC given the true sparse rate.
    HygecKnownRho,
    /// EM-aided HyGEC learning the rate from `em.rho_init`.
    EmHygec,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::HygecKnownRho => "hygec-known-rho",
            Algorithm::EmHygec => "em-hygec",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub m: usize,
    pub n: usize,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MatrixConfig {
    Iid {
        #[serde(default)]
        mean: f64,
    },
    Conditioned {
        kappa: f64,
    },
}

impl Default for MatrixConfig {
    fn default() -> Self {
        MatrixConfig::Iid { mean: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// Quantizer resolution; absent for the unquantized channel.
    pub bits: Option<u32>,
    pub clip_range: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    List(Vec<u64>),
    Range { start: u64, count: u64 },
}

impl Seeds {
    pub fn to_vec(&self) -> Vec<u64> {
        match self {
            Seeds::List(v) => v.clone(),
            Seeds::Range { start, count } => (*start..start + count).collect(),
        }
    }

    /// Parses a command-line seed set: `20` (seeds 0..20), `5..10`, or
    /// `1,4,9`.
    pub fn parse_cli(text: &str) -> Result<Seeds> {
        let bad = || BenchError::InvalidScenario(format!("cannot read seed set {text:?}"));
        let text = text.trim();
        if let Some((a, b)) = text.split_once("..") {
            let (start, end): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            if end <= start {
                return Err(bad());
            }
            return Ok(Seeds::Range { start, count: end - start });
        }
        if text.contains(',') {
            let list = text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<Vec<u64>>>()?;
            return Ok(Seeds::List(list));
        }
        let count = text.parse().map_err(|_| bad())?;
        Ok(Seeds::Range { start: 0, count })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Kappa,
    Mean,
    SnrDb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

/// Optional overrides of [`HygecConfig`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HygecOverrides {
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub damping: Option<f64>,
    pub v_min: Option<f64>,
    pub v_max: Option<f64>,
    /// Fixed initial output-side variance; the automatic rule when absent.
    pub p_z: Option<f64>,
    pub literal_x_prior_init: Option<bool>,
    pub keep_on_nonpositive_precision: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmSettings {
    #[serde(default = "default_rho_init")]
    pub rho_init: f64,
    pub max_outer: Option<usize>,
    pub tol: Option<f64>,
    pub warm_start: Option<bool>,
}

fn default_rho_init() -> f64 {
    0.01
}

impl Default for EmSettings {
    fn default() -> Self {
        Self { rho_init: default_rho_init(), max_outer: None, tol: None, warm_start: None }
    }
}

fn default_sigma_x_sq() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub kind: ScenarioKind,
    pub algorithms: Vec<Algorithm>,
    pub seeds: Seeds,
    pub dims: Dims,
    pub rho: f64,
    pub snr_db: f64,
    #[serde(default = "default_sigma_x_sq")]
    pub sigma_x_sq: f64,
    #[serde(default)]
    pub matrix: MatrixConfig,
    #[serde(default)]
    pub channel: ChannelConfig,
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub hygec: HygecOverrides,
    #[serde(default)]
    pub em: EmSettings,
}

/// One point of a sweep: the swept value (if any) and the instance recipe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub value: Option<f64>,
    pub spec: InstanceSpec,
}

fn invalid(msg: impl Into<String>) -> BenchError {
    BenchError::InvalidScenario(msg.into())
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario> {
        let s: Scenario = toml::from_str(text).map_err(|e| BenchError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let Dims { m, n, k } = self.dims;
        if self.name.trim().is_empty() {
            return Err(invalid("name must not be empty"));
        }
        if m == 0 || n == 0 || k == 0 || k > n {
            return Err(invalid(format!("dims (M, N, K) = ({m}, {n}, {k}) need M, N >= 1 and 1 <= K <= N")));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(invalid(format!("rho {} outside (0, 1)", self.rho)));
        }
        if !self.snr_db.is_finite() || !(self.sigma_x_sq > 0.0 && self.sigma_x_sq.is_finite()) {
            return Err(invalid("snr_db must be finite and sigma_x_sq positive"));
        }
        if self.seeds.to_vec().is_empty() {
            return Err(invalid("seed list is empty"));
        }
        if self.algorithms.is_empty() {
            return Err(invalid("no algorithm selected"));
        }
        if !(self.em.rho_init > 0.0 && self.em.rho_init < 1.0) {
            return Err(invalid(format!("em.rho_init {} outside (0, 1)", self.em.rho_init)));
        }
        if let Some(bits) = self.channel.bits {
            if bits == 0 || bits > hygec::model::MAX_BITS {
                return Err(invalid(format!("channel.bits {bits} outside 1..={}", hygec::model::MAX_BITS)));
            }
        }
        let needed = match self.kind {
            ScenarioKind::ConditionSweep => Some(SweepParameter::Kappa),
            ScenarioKind::MeanSweep => Some(SweepParameter::Mean),
            _ => None,
        };
        if let Some(p) = needed {
            if self.sweep.as_ref().map(|s| s.parameter) != Some(p) {
                return Err(invalid(format!("{:?} scenarios need a sweep over {p:?}", self.kind)));
            }
        }
        if let Some(sweep) = &self.sweep {
            match (sweep.parameter, self.matrix) {
                (SweepParameter::Kappa, MatrixConfig::Iid { .. }) => {
                    return Err(invalid("a kappa sweep needs matrix.kind = \"conditioned\""))
                }
                (SweepParameter::Mean, MatrixConfig::Conditioned { .. }) => {
                    return Err(invalid("a mean sweep needs matrix.kind = \"iid\""))
                }
                _ => {}
            }
        }
        // every point must describe a valid instance and engine setup
        for point in self.points() {
            check_matrix(&point.spec.matrix)?;
            if !point.spec.snr_db.is_finite() {
                return Err(invalid("swept snr_db must be finite"));
            }
        }
        self.hygec_config().validate()?;
        Ok(())
    }

    /// The instance recipe at each sweep point, in file order. A scenario
    /// without a sweep has a single point; an empty value list has none.
    pub fn points(&self) -> Vec<SweepPoint> {
        let base = InstanceSpec {
            m: self.dims.m,
            n: self.dims.n,
            k: self.dims.k,
            rho: self.rho,
            sigma_x_sq: self.sigma_x_sq,
            snr_db: self.snr_db,
            matrix: match self.matrix {
                MatrixConfig::Iid { mean } => MatrixKind::IidGaussian { mean },
                MatrixConfig::Conditioned { kappa } => MatrixKind::Conditioned { kappa },
            },
            bits: self.channel.bits,
            clip_range: self.channel.clip_range,
        };
        let Some(sweep) = &self.sweep else {
            return vec![SweepPoint { value: None, spec: base }];
        };
        sweep
            .values
            .iter()
            .map(|&value| {
                let mut spec = base;
                match sweep.parameter {
                    SweepParameter::Kappa => spec.matrix = MatrixKind::Conditioned { kappa: value },
                    SweepParameter::Mean => spec.matrix = MatrixKind::IidGaussian { mean: value },
                    SweepParameter::SnrDb => spec.snr_db = value,
                }
                SweepPoint { value: Some(value), spec }
            })
            .collect()
    }

    pub fn hygec_config(&self) -> HygecConfig {
        let o = &self.hygec;
        let d = HygecConfig::default();
        HygecConfig {
            max_iter: o.max_iter.unwrap_or(d.max_iter),
            tol: o.tol.unwrap_or(d.tol),
            damping: o.damping.unwrap_or(d.damping),
            v_min: o.v_min.unwrap_or(d.v_min),
            v_max: o.v_max.unwrap_or(d.v_max),
            p_z_init: o.p_z.map_or(d.p_z_init, PzInit::Fixed),
            literal_x_prior_init: o.literal_x_prior_init.unwrap_or(d.literal_x_prior_init),
            keep_on_nonpositive_precision: o.keep_on_nonpositive_precision.unwrap_or(d.keep_on_nonpositive_precision),
        }
    }

    pub fn em_config(&self) -> EmConfig {
        let d = EmConfig::default();
        EmConfig {
            max_outer: self.em.max_outer.unwrap_or(d.max_outer),
            tol: self.em.tol.unwrap_or(d.tol),
            warm_start: self.em.warm_start.unwrap_or(d.warm_start),
        }
    }
}

fn check_matrix(kind: &MatrixKind) -> Result<()> {
    match *kind {
        MatrixKind::IidGaussian { mean } if !mean.is_finite() => Err(invalid(format!("matrix mean {mean} is not finite"))),
        MatrixKind::Conditioned { kappa } if !(kappa >= 1.0 && kappa.is_finite()) => {
            Err(invalid(format!("condition number {kappa} must be >= 1")))
        }
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
        name = "t"
        kind = "condition-sweep"
        algorithms = ["hygec-known-rho"]
        seeds = { start = 3, count = 2 }
        rho = 0.1
        snr_db = 12.0
        [dims]
        m = 10
        n = 20
        k = 5
        [matrix]
        kind = "conditioned"
        kappa = 1.0
        [sweep]
        parameter = "kappa"
        values = [1.0, 100.0]
    "#;

    #[test]
    fn parses_documented_layout() {
        let s = Scenario::from_toml(BASE).unwrap();
        assert_eq!(s.seeds.to_vec(), vec![3, 4]);
        let points = s.points();
        assert_eq!(points.len(), 2);
        assert_eq!(points[1].value, Some(100.0));
        assert_eq!(points[1].spec.matrix, MatrixKind::Conditioned { kappa: 100.0 });
        assert_eq!(s.em.rho_init, 0.01);
        assert_eq!(s.hygec_config(), HygecConfig::default());
    }

    #[test]
    fn explicit_seed_list() {
        let text = BASE.replace("seeds = { start = 3, count = 2 }", "seeds = [7, 1]");
        assert_eq!(Scenario::from_toml(&text).unwrap().seeds.to_vec(), vec![7, 1]);
    }

    #[test]
    fn empty_seed_list_is_rejected() {
        let text = BASE.replace("seeds = { start = 3, count = 2 }", "seeds = []");
        assert!(matches!(Scenario::from_toml(&text), Err(BenchError::InvalidScenario(_))));
    }

    #[test]
    fn inconsistent_dims_are_rejected() {
        let text = BASE.replace("k = 5", "k = 21");
        assert!(matches!(Scenario::from_toml(&text), Err(BenchError::InvalidScenario(_))));
    }

    #[test]
    fn sweep_must_match_kind_and_matrix() {
        let text = BASE.replace("parameter = \"kappa\"", "parameter = \"mean\"");
        assert!(Scenario::from_toml(&text).is_err());
        let text = BASE.replace("kind = \"conditioned\"\n        kappa = 1.0", "kind = \"iid\"");
        assert!(Scenario::from_toml(&text).is_err());
    }

    #[test]
    fn empty_sweep_has_no_points() {
        let text = BASE.replace("values = [1.0, 100.0]", "values = []");
        assert!(Scenario::from_toml(&text).unwrap().points().is_empty());
    }

    #[test]
    fn unknown_field_is_a_parse_error() {
        let text = BASE.replace("rho = 0.1", "rho = 0.1\nbogus = 1");
        assert!(matches!(Scenario::from_toml(&text), Err(BenchError::Parse(_))));
    }

    #[test]
    fn cli_seed_sets() {
        assert_eq!(Seeds::parse_cli("3").unwrap().to_vec(), vec![0, 1, 2]);
        assert_eq!(Seeds::parse_cli("5..8").unwrap().to_vec(), vec![5, 6, 7]);
        assert_eq!(Seeds::parse_cli("4, 2").unwrap().to_vec(), vec![4, 2]);
        assert!(Seeds::parse_cli("8..5").is_err());
        assert!(Seeds::parse_cli("x").is_err());
    }
}
