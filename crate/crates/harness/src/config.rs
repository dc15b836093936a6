//! Experiment configuration: a flat `key = value` TOML file with dotted
//! namespaces, layered over defaults and then over `--set` overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dmliv::datagen::{generate_demand, generate_semisynth, DemandConfig, ObservationSet, SemiSynthConfig};
use dmliv::diagnostics::OrthogonalityConfig;
use dmliv::estimation::{config_digest, DmlivConfig, Method};
use dmliv::learners::RegressorKind;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{config_err, HarnessError, Result};

/// Environment variable that sets the root for relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "DMLIV_OUTPUT_ROOT";

/// Name of the resolved-config file written next to results.
pub const LOCK_FILE: &str = "config.lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    Demand,
    Semisynth,
}

impl Dataset {
    pub fn as_str(self) -> &'static str {
        match self {
            Dataset::Demand => "demand",
            Dataset::Semisynth => "semisynth",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemiSynthParams {
    pub d_c: usize,
    pub k_levels: usize,
}

impl Default for SemiSynthParams {
    fn default() -> Self {
        let d = SemiSynthConfig::default();
        Self { d_c: d.d_c, k_levels: d.k_levels }
    }
}

/// Evaluation of a fitted cell: counterfactual MSE and the greedy policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Fresh truth samples for the counterfactual MSE.
    pub n_test: usize,
    /// Contexts used to score each policy.
    pub n_eval: usize,
    /// Candidate actions searched by the greedy policy.
    pub action_grid: usize,
    /// Total widening of the training action range, as a fraction of it.
    pub action_widen: f64,
    /// Shift added to the shiftable context coordinate for the OOD reward.
    pub ood_shift: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_test: 10_000, n_eval: 2_000, action_grid: 1024, action_widen: 0.1, ood_shift: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Rows of the dataset probed for orthogonality and relevance.
    pub n_samples: usize,
    pub orthogonality: OrthogonalityConfig,
    /// Report CSV feeding the rate fit; empty means `<output_dir>/report.csv`.
    pub rate_report: String,
    pub rate_method: Method,
    pub rate_min_runs: usize,
    pub rate_max_slope: f64,
    pub rate_min_r_squared: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            n_samples: 20_000,
            orthogonality: OrthogonalityConfig::default(),
            rate_report: String::new(),
            rate_method: Method::Dmliv,
            rate_min_runs: 5,
            rate_max_slope: -0.35,
            rate_min_r_squared: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: Dataset,
    pub methods: Vec<Method>,
    /// Learner family used for every nuisance and for stage 2.
    pub estimator: RegressorKind,
    pub sample_sizes: Vec<usize>,
    pub rho: f64,
    pub iv_strength: f64,
    /// Repetition indices; each one fixes a dataset and an initialisation.
    pub seeds: Vec<u64>,
    pub root_seed: u64,
    pub semisynth: SemiSynthParams,
    /// Estimator settings, including `fit.k_folds` and `fit.mc_samples`.
    pub fit: DmlivConfig,
    /// Multiplier on the nuisance weight decay of the naive baseline.
    pub naive_weight_decay_factor: f64,
    pub eval: EvalConfig,
    pub diagnostics: DiagnosticsConfig,
    /// Cells run concurrently.
    pub jobs: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: Dataset::Demand,
            methods: vec![Method::Dmliv, Method::CeDmliv, Method::Naive],
            estimator: RegressorKind::FeedForward,
            sample_sizes: vec![5000],
            rho: 0.9,
            iv_strength: 1.0,
            seeds: (0..20).collect(),
            root_seed: 0,
            semisynth: SemiSynthParams::default(),
            fit: DmlivConfig::default(),
            naive_weight_decay_factor: 1.0,
            eval: EvalConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
            jobs: 1,
            output_dir: PathBuf::from("results"),
        }
    }
}

/// Defaults for a learner family: the tree family swaps every learner kind.
pub fn defaults_for(estimator: RegressorKind) -> ExperimentConfig {
    let fit = match estimator {
        RegressorKind::FeedForward => DmlivConfig::default(),
        RegressorKind::BoostedTrees => DmlivConfig::trees(),
    };
    ExperimentConfig { estimator, fit, ..ExperimentConfig::default() }
}

/// Ordered `dotted.key -> value` map; arrays are leaves.
pub type FlatMap = BTreeMap<String, Value>;

pub fn flatten(value: &Value) -> FlatMap {
    fn walk(prefix: &str, v: &Value, out: &mut FlatMap) {
        match v {
            Value::Object(map) => {
                for (k, child) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            other => {
                out.insert(prefix.to_string(), other.clone());
            }
        }
    }
    let mut out = FlatMap::new();
    walk("", value, &mut out);
    out
}

pub fn unflatten(flat: &FlatMap) -> Result<Value> {
    let mut root = serde_json::Map::new();
    for (key, v) in flat {
        let parts: Vec<&str> = key.split('.').collect();
        let mut node = &mut root;
        for part in &parts[..parts.len() - 1] {
            let entry = node.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
            node = entry.as_object_mut().ok_or_else(|| config_err(format!("key {key:?} nests under a value")))?;
        }
        node.insert(parts[parts.len() - 1].to_string(), v.clone());
    }
    Ok(Value::Object(root))
}

/// Parse a config file body into flat keys.
pub fn parse_config_text(text: &str) -> Result<FlatMap> {
    let table: toml::Table = toml::from_str(text)?;
    let json = serde_json::to_value(table)?;
    Ok(flatten(&json))
}

/// Parse one `key=value` override. The value is read as a TOML value and
/// falls back to a bare string.
pub fn parse_override(spec: &str) -> Result<(String, Value)> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| config_err(format!("override {spec:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(config_err(format!("override {spec:?} has an empty key")));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => serde_json::to_value(t.remove("v").expect("parsed key"))?,
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((key.to_string(), value))
}

/// Layer user keys over the defaults of the chosen estimator family and
/// deserialize. Keys absent from the defaults are rejected.
pub fn resolve(user: &FlatMap) -> Result<ExperimentConfig> {
    let estimator = match user.get("estimator") {
        Some(v) => {
            serde_json::from_value::<RegressorKind>(v.clone()).map_err(|e| config_err(format!("estimator: {e}")))?
        }
        None => RegressorKind::FeedForward,
    };
    let mut flat = flatten(&serde_json::to_value(defaults_for(estimator))?);
    for (k, v) in user {
        if !flat.contains_key(k) {
            return Err(HarnessError::UnknownKey(k.clone()));
        }
        flat.insert(k.clone(), v.clone());
    }
    let cfg: ExperimentConfig = serde_json::from_value(unflatten(&flat)?).map_err(|e| config_err(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Read an optional config file and apply `key=value` overrides in order.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut user = match path {
        Some(p) => parse_config_text(&std::fs::read_to_string(p)?)?,
        None => FlatMap::new(),
    };
    for spec in overrides {
        let (k, v) = parse_override(spec)?;
        user.insert(k, v);
    }
    resolve(&user)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(config_err("methods must not be empty"));
        }
        if self.sample_sizes.is_empty() {
            return Err(config_err("sample_sizes must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(config_err("seeds must not be empty"));
        }
        if self.methods.contains(&Method::Dmliv) && self.fit.k_folds < 2 {
            return Err(config_err("fit.k_folds must be at least 2 for dmliv"));
        }
        if let Some(&n) = self.sample_sizes.iter().find(|&&n| n < 2 * self.fit.k_folds.max(1)) {
            return Err(config_err(format!("sample size {n} is below 2 * fit.k_folds")));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(config_err(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if !(self.iv_strength >= 0.0 && self.iv_strength.is_finite()) {
            return Err(config_err(format!("iv_strength must be finite and non-negative, got {}", self.iv_strength)));
        }
        if !(self.naive_weight_decay_factor >= 0.0 && self.naive_weight_decay_factor.is_finite()) {
            return Err(config_err("naive_weight_decay_factor must be finite and non-negative"));
        }
        let e = &self.eval;
        if e.n_test == 0 || e.n_eval == 0 || e.action_grid < 2 {
            return Err(config_err("eval.n_test and eval.n_eval must be positive and eval.action_grid at least 2"));
        }
        if !(e.action_widen >= 0.0 && e.ood_shift.is_finite()) {
            return Err(config_err("eval.action_widen must be non-negative and eval.ood_shift finite"));
        }
        if self.jobs == 0 {
            return Err(config_err("jobs must be at least 1"));
        }
        self.fit.validate()?;
        Ok(())
    }

    /// Stable hash of everything that affects results. The output location
    /// and the job count are excluded.
    pub fn digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut v {
            map.remove("output_dir");
            map.remove("jobs");
        }
        config_digest(&v)
    }

    /// `output_dir`, placed under `root` when relative and a root is given.
    pub fn output_path(&self, root: Option<&Path>) -> PathBuf {
        match root {
            Some(r) if self.output_dir.is_relative() => r.join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }

    /// `output_dir` resolved against `$DMLIV_OUTPUT_ROOT`.
    pub fn output_path_from_env(&self) -> PathBuf {
        let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from);
        self.output_path(root.as_deref())
    }

    /// Estimator settings for one method; the naive baseline gets its
    /// nuisance weight decay scaled.
    pub fn fit_config(&self, method: Method) -> DmlivConfig {
        let mut fit = self.fit.clone();
        if method == Method::Naive {
            fit.outcome.weight_decay *= self.naive_weight_decay_factor;
            fit.density.net.weight_decay *= self.naive_weight_decay_factor;
        }
        fit
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<ObservationSet> {
        let data = match self.dataset {
            Dataset::Demand => generate_demand(&DemandConfig {
                n_samples: n,
                rho: self.rho,
                iv_strength: self.iv_strength,
                seed,
                standardize: true,
            })?,
            Dataset::Semisynth => generate_semisynth(&SemiSynthConfig {
                n_samples: n,
                d_c: self.semisynth.d_c,
                k_levels: self.semisynth.k_levels,
                seed,
            })?,
        };
        Ok(data)
    }

    /// Flat `key = value` rendering, loadable as a config file.
    pub fn to_lock_text(&self) -> Result<String> {
        let flat = flatten(&serde_json::to_value(self)?);
        let mut out = format!("# resolved configuration, digest {}\n", self.digest());
        for (k, v) in flat {
            let tv: toml::Value = serde_json::from_value(v)?;
            out.push_str(&format!("{k} = {tv}\n"));
        }
        Ok(out)
    }

    pub fn write_lock(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        std::fs::write(&path, self.to_lock_text()?)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_reach_nested_fields() {
        let user = parse_config_text("rho = 0.5\nfit.k_folds = 4\nfit.stage2.layer_widths = [8, 4]\n").unwrap();
        let cfg = resolve(&user).unwrap();
        assert_eq!(cfg.rho, 0.5);
        assert_eq!(cfg.fit.k_folds, 4);
        assert_eq!(cfg.fit.stage2.layer_widths, vec![8, 4]);
        assert_eq!(cfg.fit.stage2.epochs, 300);
    }

    #[test]
    fn tables_and_dotted_keys_agree() {
        let a = resolve(&parse_config_text("[fit]\nmc_samples = 8\n").unwrap()).unwrap();
        let b = resolve(&parse_config_text("fit.mc_samples = 8\n").unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let user = parse_config_text("fit.k_fold = 3\n").unwrap();
        assert!(matches!(resolve(&user), Err(HarnessError::UnknownKey(k)) if k == "fit.k_fold"));
    }

    #[test]
    fn overrides_parse_values_and_bare_strings() {
        assert_eq!(parse_override("rho=0.25").unwrap(), ("rho".into(), Value::from(0.25)));
        assert_eq!(parse_override("dataset=semisynth").unwrap().1, Value::from("semisynth"));
        assert_eq!(parse_override("seeds=[1, 2]").unwrap().1, serde_json::json!([1, 2]));
        assert!(parse_override("noequals").is_err());
    }

    #[test]
    fn tree_estimator_switches_every_learner() {
        let cfg = load(None, &["estimator=boosted_trees".into()]).unwrap();
        assert_eq!(cfg.fit.outcome.kind, RegressorKind::BoostedTrees);
        assert_eq!(cfg.fit.density.net.kind, RegressorKind::BoostedTrees);
        assert_eq!(cfg.fit.stage2.kind, RegressorKind::BoostedTrees);
        assert_eq!(cfg.fit.stage2.min_leaf, 10);
    }

    #[test]
    fn invariants_are_enforced() {
        assert!(load(None, &["methods=[]".into()]).is_err());
        assert!(load(None, &["seeds=[]".into()]).is_err());
        assert!(load(None, &["sample_sizes=[]".into()]).is_err());
        assert!(load(None, &["fit.k_folds=1".into()]).is_err());
        assert!(load(None, &["rho=1.5".into()]).is_err());
    }

    #[test]
    fn lock_file_reloads_to_the_same_config() {
        let cfg = load(None, &["rho=0.3".into(), "fit.tol=1.5e-7".into(), "output_dir=\"out dir\"".into()]).unwrap();
        let text = cfg.to_lock_text().unwrap();
        let back = resolve(&parse_config_text(&text).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
    }

    #[test]
    fn non_finite_numbers_are_rejected_or_render() {
        let flat = flatten(&serde_json::to_value(ExperimentConfig::default()).unwrap());
        for (key, v) in &flat {
            if !v.is_number() {
                continue;
            }
            for bad in ["nan", "inf", "-inf", "-1"] {
                if let Ok(cfg) = load(None, &[format!("{key}={bad}")]) {
                    let text = cfg.to_lock_text().unwrap_or_else(|e| panic!("{key}={bad}: {e}"));
                    assert_eq!(resolve(&parse_config_text(&text).unwrap()).unwrap().digest(), cfg.digest());
                }
            }
        }
    }

    #[test]
    fn digest_ignores_output_location_and_jobs() {
        let a = load(None, &[]).unwrap();
        let b = load(None, &["output_dir=elsewhere".into(), "jobs=4".into()]).unwrap();
        let c = load(None, &["rho=0.5".into()]).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn relative_output_dirs_follow_the_root() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.output_path(Some(Path::new("/tmp/x"))), PathBuf::from("/tmp/x/results"));
        assert_eq!(cfg.output_path(None), PathBuf::from("results"));
    }
}
