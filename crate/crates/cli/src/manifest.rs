//! Experiment manifests: built-in defaults, a JSON file and `--key value`
//! overrides, merged in that order of increasing precedence.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mftg::ddpg::DdpgHyper;
use mftg::envs::{build_env, EnvConfig, EnvSpec, ENV_NAMES};
use mftg::eval::{BrMethod, BrScope};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Classify, CliError, CliResult};

pub const SEED_VAR: &str = "MFTG_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Dnashq,
    IlMftg,
    Ddpg,
    DdpgAblated,
}

impl Algo {
    pub const ALL: [Algo; 4] = [Algo::Dnashq, Algo::IlMftg, Algo::Ddpg, Algo::DdpgAblated];

    pub fn name(self) -> &'static str {
        match self {
            Self::Dnashq => "dnashq",
            Self::IlMftg => "il_mftg",
            Self::Ddpg => "ddpg",
            Self::DdpgAblated => "ddpg_ablated",
        }
    }

    pub fn is_tabular(self) -> bool {
        matches!(self, Self::Dnashq | Self::IlMftg)
    }
}

/// Exploration schedule and test-return cadence of the tabular trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularSettings {
    pub eps_start: f64,
    pub eps_end: f64,
    /// Greedy test-set return every this many episodes (0 disables).
    pub eval_every: usize,
}

impl Default for TabularSettings {
    fn default() -> Self {
        Self { eps_start: 0.99, eps_end: 0.01, eval_every: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    /// Whether exploitability is computed at all.
    pub enabled: bool,
    pub method: BrMethod,
    /// Best-response training episodes for the learned methods.
    pub budget: usize,
    /// Exploitability every this many training episodes; 0 means only after the last one.
    pub every: usize,
    pub scope: BrScope,
    pub retrain: usize,
    /// Grid of the best-response game; `None` reuses the training resolution.
    pub state_resolution: Option<usize>,
    pub action_resolution: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub env: String,
    pub env_config: EnvConfig,
    pub algo: Algo,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub state_resolution: usize,
    pub action_resolution: usize,
    pub tabular: TabularSettings,
    pub ddpg: DdpgHyper,
    pub eval: EvalSettings,
    pub outdir: PathBuf,
    /// Prefix of the run directories; defaults to `<env>-<algo>`.
    pub run_id: Option<String>,
}

impl ExperimentManifest {
    /// Defaults for one environment and algorithm.
    pub fn defaults(env: &EnvSpec, env_config: EnvConfig, algo: Algo, seed: u64) -> Self {
        let ddpg = DdpgHyper::for_env(env);
        let episodes = if algo.is_tabular() { 4000 } else { ddpg.episodes };
        let eval = EvalSettings {
            enabled: true,
            method: if algo.is_tabular() { BrMethod::Exhaustive } else { BrMethod::Deep },
            budget: if algo.is_tabular() { 2000 } else { 200 },
            every: if algo.is_tabular() { (episodes / 10).max(1) } else { 0 },
            scope: BrScope::PerTest,
            retrain: 1,
            state_resolution: None,
            action_resolution: None,
        };
        Self {
            env: env.name().to_string(),
            env_config,
            algo,
            seeds: vec![seed],
            episodes,
            state_resolution: 10,
            action_resolution: 1,
            tabular: TabularSettings::default(),
            ddpg,
            eval,
            outdir: PathBuf::from("runs"),
            run_id: None,
        }
    }

    pub fn build_env(&self) -> CliResult<EnvSpec> {
        make_env(&self.env, &self.env_config)
    }

    pub fn base_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| format!("{}-{}", self.env, self.algo.name()))
    }

    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.outdir.join(format!("{}-seed{seed}", self.base_id()))
    }

    /// The manifest of a single-seed run, as stored in its directory.
    pub fn for_seed(&self, seed: u64) -> Self {
        Self { seeds: vec![seed], ..self.clone() }
    }

    pub fn eval_resolution(&self) -> (usize, usize) {
        (
            self.eval.state_resolution.unwrap_or(self.state_resolution),
            self.eval.action_resolution.unwrap_or(self.action_resolution),
        )
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.seeds.is_empty() {
            return Err(CliError::usage("`seeds` must not be empty"));
        }
        if self.episodes == 0 {
            return Err(CliError::usage("`episodes` must be positive"));
        }
        if self.state_resolution == 0 || self.action_resolution == 0 {
            return Err(CliError::usage("resolutions must be positive"));
        }
        if self.eval.retrain == 0 {
            return Err(CliError::usage("`eval.retrain` must be positive"));
        }
        if self.eval.enabled && self.eval.method != BrMethod::Exhaustive && self.eval.budget == 0 {
            return Err(CliError::usage("`eval.budget` must be positive for learned best responses"));
        }
        if let Some(id) = &self.run_id {
            if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
                return Err(CliError::usage(format!("invalid run id `{id}`")));
            }
        }
        self.ddpg.validate().usage()?;
        Ok(())
    }
}

pub fn make_env(name: &str, cfg: &EnvConfig) -> CliResult<EnvSpec> {
    if !ENV_NAMES.contains(&name) {
        return Err(CliError::usage(format!("unknown environment `{name}` (known: {})", ENV_NAMES.join(", "))));
    }
    build_env(name, cfg).usage()
}

/// A `--key value` pair with its value parsed as JSON when possible.
pub fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Free-form `--key value` / `--key=value` tokens, with some keys set aside.
#[derive(Debug, Default)]
pub struct ParsedArgs {
    pub reserved: BTreeMap<String, Vec<String>>,
    pub overrides: Vec<(String, Value)>,
}

impl ParsedArgs {
    pub fn parse(tokens: &[String], reserved: &[&str]) -> CliResult<Self> {
        let mut out = Self::default();
        let mut it = tokens.iter();
        while let Some(tok) = it.next() {
            let body = tok
                .strip_prefix("--")
                .ok_or_else(|| CliError::usage(format!("expected `--key value`, found `{tok}`")))?;
            let (key, value) = match body.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it.next().ok_or_else(|| CliError::usage(format!("missing value for `--{body}`")))?;
                    (body.to_string(), v.clone())
                }
            };
            let key = key.replace('-', "_");
            if key.is_empty() || key.split('.').any(str::is_empty) {
                return Err(CliError::usage(format!("malformed key `{key}`")));
            }
            if reserved.contains(&key.as_str()) {
                out.reserved.entry(key).or_default().push(value);
            } else if key == "seed" {
                let seed: u64 = value.parse().map_err(|_| CliError::usage(format!("invalid seed `{value}`")))?;
                out.overrides.push(("seeds".into(), Value::from(vec![seed])));
            } else {
                out.overrides.push((key, parse_value(&value)));
            }
        }
        Ok(out)
    }

    pub fn one(&self, key: &str) -> CliResult<Option<&str>> {
        match self.reserved.get(key).map(Vec::as_slice) {
            None | Some([]) => Ok(None),
            Some([v]) => Ok(Some(v)),
            Some(_) => Err(CliError::usage(format!("`--{key}` given more than once"))),
        }
    }

    pub fn all(&self, key: &str) -> &[String] {
        self.reserved.get(key).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Sets `path` (dot-separated) inside `root`, creating objects on the way.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> CliResult<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        if !cur.is_object() {
            if cur.is_null() {
                *cur = Value::Object(Map::new());
            } else {
                return Err(CliError::usage(format!("`{}` is not an object", parts[..k].join("."))));
            }
        }
        let map = cur.as_object_mut().expect("checked above");
        if k + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        cur = map.entry(part.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

/// Recursive merge where `top` wins; objects merge key by key, anything else is replaced.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

pub fn read_json_object(path: &Path) -> CliResult<Value> {
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("{} is not valid JSON: {e}", path.display())))?;
    if !v.is_object() {
        return Err(CliError::usage(format!("{} must hold a JSON object", path.display())));
    }
    Ok(v)
}

/// Seed used when neither the file nor the command line sets one.
pub fn default_seed() -> CliResult<u64> {
    match std::env::var(SEED_VAR) {
        Ok(v) => v.trim().parse().map_err(|_| CliError::usage(format!("{SEED_VAR}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

/// The user's layer: file contents with the command-line overrides applied.
pub fn user_layer(file: Option<&Path>, overrides: &[(String, Value)]) -> CliResult<Value> {
    let mut user = match file {
        Some(p) => read_json_object(p)?,
        None => Value::Object(Map::new()),
    };
    for (k, v) in overrides {
        set_path(&mut user, k, v.clone())?;
    }
    Ok(user)
}

fn field<T: serde::de::DeserializeOwned>(user: &Value, key: &str, what: &str) -> CliResult<Option<T>> {
    match user.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => {
            serde_json::from_value(v.clone()).map(Some).map_err(|e| CliError::usage(format!("invalid {what}: {e}")))
        }
    }
}

/// Resolves a manifest from the user's layer over defaults that depend on the
/// chosen environment and algorithm.
pub fn resolve_value(user: Value, fallback_env: Option<&str>) -> CliResult<ExperimentManifest> {
    let env_name: String =
        field(&user, "env", "environment name")?.or(fallback_env.map(String::from)).unwrap_or("grid1d".into());
    let algo: Algo = match user.get("algo") {
        Some(Value::String(s)) => Algo::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            CliError::usage(format!("unknown algorithm `{s}` (known: {})", Algo::ALL.map(Algo::name).join(", ")))
        })?,
        None | Some(Value::Null) => Algo::Dnashq,
        Some(other) => return Err(CliError::usage(format!("invalid algorithm {other}"))),
    };
    let env_config: EnvConfig = field(&user, "env_config", "env_config")?.unwrap_or_default();
    let env = make_env(&env_name, &env_config)?;
    let defaults = ExperimentManifest::defaults(&env, env_config, algo, default_seed()?);
    let explicit_every = user.pointer("/eval/every").is_some();
    let mut merged = serde_json::to_value(&defaults).runtime()?;
    merge(&mut merged, user);
    let mut m: ExperimentManifest =
        serde_json::from_value(merged).map_err(|e| CliError::usage(format!("invalid manifest: {e}")))?;
    m.ddpg.episodes = m.episodes;
    if !explicit_every && algo.is_tabular() {
        m.eval.every = (m.episodes / 10).max(1);
    }
    m.validate()?;
    Ok(m)
}

pub fn resolve(file: Option<&Path>, overrides: &[(String, Value)]) -> CliResult<ExperimentManifest> {
    resolve_value(user_layer(file, overrides)?, None)
}
