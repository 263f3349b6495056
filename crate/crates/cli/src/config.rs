//! Run configuration: one TOML file plus flag overrides (flags win).

use std::path::{Path, PathBuf};

use lowvol_core::factors::{FactorName, HoldingsNormalization, ResidualMode};
use lowvol_core::strategy::StrategyConfig;
use lowvol_core::synthetic::MarketSpec;
use lowvol_core::verify::Fault;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

/// Data files of a real-data run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    pub prices: PathBuf,
    pub dividends: PathBuf,
    pub membership: PathBuf,
    pub sectors: PathBuf,
    pub rates: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecileSettings {
    /// Trading days between decile re-sorts.
    pub rebalance: usize,
}

impl Default for DecileSettings {
    fn default() -> Self {
        Self { rebalance: 21 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FactorSettings {
    pub names: Vec<String>,
    pub holdings_normalization: HoldingsNormalization,
}

impl Default for FactorSettings {
    fn default() -> Self {
        Self {
            names: FactorName::ALL.iter().map(|f| f.to_string()).collect(),
            holdings_normalization: HoldingsNormalization::ByMarketCap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResidualSettings {
    pub target: String,
    pub regressors: Vec<String>,
    pub mode: ResidualMode,
}

impl Default for ResidualSettings {
    fn default() -> Self {
        Self {
            target: "LOWVOL".into(),
            regressors: ["MKT", "UMD", "SMB", "HML"].iter().map(|s| s.to_string()).collect(),
            mode: ResidualMode::FullSample,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSettings {
    /// Write `positions.csv`.
    pub positions: bool,
    /// Write `estimates.csv` (lagged sigma, beta and signal).
    pub estimates: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySettings {
    pub criteria: Vec<String>,
    pub fault: Option<Fault>,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self { criteria: lowvol_core::verify::CRITERIA.iter().map(|s| s.to_string()).collect(), fault: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; overrides `synthetic.seed` and seeds the verification suite.
    pub seed: Option<u64>,
    pub out: PathBuf,
    /// `low-vol`, `low-beta`, `sector-low-vol` or a factor name.
    pub strategy: String,
    /// Withholding tax on long dividends.
    pub tax: f64,
    /// Pool to trade when the membership file holds several.
    pub pool: Option<String>,
    /// `date,instrument,metric,value` file.
    pub metrics: Option<PathBuf>,
    /// `date,fund,instrument,dollar_value` file.
    pub holdings: Option<PathBuf>,
    pub files: Option<FileSource>,
    pub synthetic: Option<MarketSpec>,
    pub construction: StrategyConfig,
    pub deciles: DecileSettings,
    pub factors: FactorSettings,
    pub residualize: ResidualSettings,
    pub output: OutputSettings,
    pub verify: VerifySettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out: PathBuf::from("out"),
            strategy: "low-vol".into(),
            tax: 0.0,
            pool: None,
            metrics: None,
            holdings: None,
            files: None,
            synthetic: None,
            construction: StrategyConfig::default(),
            deciles: DecileSettings::default(),
            factors: FactorSettings::default(),
            residualize: ResidualSettings::default(),
            output: OutputSettings::default(),
            verify: VerifySettings::default(),
        }
    }
}

/// Overrides given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub strategy: Option<String>,
    pub tax: Option<f64>,
    pub set: Vec<String>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Parses a `--set` value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("invalid key '{key}'")));
    }
    let (last, parents) = parts.split_last().expect("non-empty");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| config_err(format!("'{p}' in '{key}' is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
                text.parse::<Table>().map_err(|e| config_err(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for item in &overrides.set {
            let (key, raw) = item.split_once('=').ok_or_else(|| config_err(format!("--set expects KEY=VALUE, got '{item}'")))?;
            set_path(&mut table, key.trim(), parse_value(raw.trim()))?;
        }
        let mut cfg: RunConfig = Value::Table(table).try_into().map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        if let Some(seed) = overrides.seed {
            cfg.seed = Some(seed);
        }
        if let Some(out) = &overrides.out {
            cfg.out = out.clone();
        }
        if let Some(s) = &overrides.strategy {
            cfg.strategy = s.clone();
        }
        if let Some(tax) = overrides.tax {
            cfg.tax = tax;
        }
        if let (Some(seed), Some(spec)) = (cfg.seed, cfg.synthetic.as_mut()) {
            spec.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.construction.validate().map_err(|e| config_err(e.to_string()))?;
        if let Some(spec) = &self.synthetic {
            spec.validate().map_err(|e| config_err(e.to_string()))?;
        }
        if !(0.0..=1.0).contains(&self.tax) {
            return Err(config_err(format!("tax {} outside [0, 1]", self.tax)));
        }
        if self.deciles.rebalance == 0 {
            return Err(config_err("deciles.rebalance must be positive"));
        }
        StrategyKind::parse(&self.strategy)?;
        for name in self.factors.names.iter().chain(&self.residualize.regressors).chain([&self.residualize.target]) {
            parse_factor(name)?;
        }
        for id in &self.verify.criteria {
            if !lowvol_core::verify::CRITERIA.contains(&id.as_str()) {
                return Err(config_err(format!("unknown criterion '{id}'")));
            }
        }
        Ok(())
    }

    /// Checks that exactly one data source is configured.
    pub fn require_source(&self) -> Result<(), CliError> {
        match (&self.files, &self.synthetic) {
            (Some(_), None) | (None, Some(_)) => Ok(()),
            (None, None) => Err(config_err("no data source: configure [files] or [synthetic]")),
            (Some(_), Some(_)) => Err(config_err("both [files] and [synthetic] are configured; keep exactly one")),
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    LowVol,
    LowBeta,
    SectorLowVol,
    Factor(FactorName),
}

impl StrategyKind {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "low-vol" => StrategyKind::LowVol,
            "low-beta" => StrategyKind::LowBeta,
            "sector-low-vol" => StrategyKind::SectorLowVol,
            _ => StrategyKind::Factor(parse_factor(s)?),
        })
    }
}

pub fn parse_factor(s: &str) -> Result<FactorName, CliError> {
    FactorName::parse(s).ok_or_else(|| config_err(format!("unknown strategy or factor '{s}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str, o: Overrides) -> Result<RunConfig, CliError> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, text).unwrap();
        RunConfig::load(Some(&p), &o)
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(load("strateg = \"low-vol\"", Overrides::default()), Err(CliError::Config(_))));
        assert!(matches!(load("[construction]\ntarget_rsk = 2.0", Overrides::default()), Err(CliError::Config(_))));
        assert!(matches!(load("[synthetic]\nN = 10", Overrides::default()), Err(CliError::Config(_))));
    }

    #[test]
    fn flags_win_over_file_and_set() {
        let o = Overrides {
            seed: Some(7),
            tax: Some(0.3),
            set: vec!["construction.estimators.lag=40".into(), "synthetic.n=50".into(), "tax=0.1".into()],
            ..Default::default()
        };
        let cfg = load("seed = 1\ntax = 0.2\n[synthetic]\nn = 20\nseed = 3", o).unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.tax, 0.3);
        assert_eq!(cfg.construction.estimators.lag, 40);
        let spec = cfg.synthetic.as_ref().unwrap();
        assert_eq!((spec.n, spec.seed), (50, 7));
        // the echo parses back to the same config
        let echoed: RunConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(echoed, cfg);
    }

    #[test]
    fn exactly_one_source() {
        let none = load("", Overrides::default()).unwrap();
        assert!(none.require_source().is_err());
        let both = load(
            "[synthetic]\nn = 20\n[files]\nprices = \"p\"\ndividends = \"d\"\nmembership = \"m\"\nsectors = \"s\"\nrates = \"r\"",
            Overrides::default(),
        )
        .unwrap();
        assert!(both.require_source().is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(load("tax = 1.5", Overrides::default()).is_err());
        assert!(load("strategy = \"momentum-ish\"", Overrides::default()).is_err());
        assert!(load("[construction.estimators]\nvol_window = 0", Overrides::default()).is_err());
        assert!(load("[synthetic]\nrho0 = 1.5", Overrides::default()).is_err());
        let bad_set = Overrides { set: vec!["novalue".into()], ..Default::default() };
        assert!(load("", bad_set).is_err());
    }
}
