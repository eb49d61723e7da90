//! Flat TOML config: `key = value` lines, no tables.
//!
//! Layering, lowest to highest: built-in defaults, `--preset`, the config
//! file, then `key=value` overrides from the command line.

use std::fs;
use std::path::Path;

use alda_core::harness::{Method, RunConfig};
use anyhow::{anyhow, bail, Context, Result};
use toml::{Table, Value};

/// Documentation of one config key.
pub struct KeyDoc {
    pub key: &'static str,
    pub doc: &'static str,
    /// Where the default comes from, when it is not a harness choice.
    pub origin: Option<&'static str>,
}

const PUBLISHED: Option<&str> = Some("published training setup");

macro_rules! key {
    ($k:literal, $d:literal) => {
        KeyDoc {
            key: $k,
            doc: $d,
            origin: None,
        }
    };
    ($k:literal, $d:literal, $o:expr) => {
        KeyDoc {
            key: $k,
            doc: $d,
            origin: $o,
        }
    };
}

pub const RUN_KEYS: &[KeyDoc] = &[
    key!("method", "loss wiring: source_only, st, dann, dann_st, alda, alda_no_reg, alda_no_lt, alda_st_no_lt, alda_ce_basic"),
    key!("dataset", "two_moons, blobs or mnist_usps"),
    key!("n_source", "source samples (subset size for digits)"),
    key!("n_target", "target samples (subset size for digits)"),
    key!("source_noise", "moon jitter std, or blob spread"),
    key!("classes", "blob class count"),
    key!("shift_rotation_deg", "target rotation in degrees"),
    key!("shift_tx", "target translation, x"),
    key!("shift_ty", "target translation, y"),
    key!("shift_scale", "target scale factor"),
    key!("shift_noise", "extra target noise std"),
    key!("mnist_images", "MNIST IDX image file"),
    key!("mnist_labels", "MNIST IDX label file"),
    key!("usps_images", "USPS IDX image file"),
    key!("usps_labels", "USPS IDX label file"),
    key!("delta", "pseudo-label confidence threshold; 0.6 for digits", PUBLISHED),
    key!("total_steps", "training iterations"),
    key!("batch", "samples per domain per iteration"),
    key!("seed_init", "seed for initialization and dropout"),
    key!("seed_data", "seed for data generation, batching and probes"),
    key!("optimizer", "sgd (momentum) or adam; adam for digits", PUBLISHED),
    key!("eta0", "initial learning rate; 1e-3 with adam for digits", PUBLISHED),
    key!("alpha", "learning rate decay alpha in eta0 / (1 + alpha q)^beta", PUBLISHED),
    key!("beta", "learning rate decay exponent", PUBLISHED),
    key!("lr_mult", "learning rate multiplier of classifier and discriminator (10 in the published setup, whose generator is pre-trained)"),
    key!("momentum", "sgd momentum", PUBLISHED),
    key!("adam_beta1", "adam first-moment decay"),
    key!("adam_beta2", "adam second-moment decay"),
    key!("adam_eps", "adam epsilon"),
    key!("probe_every", "steps between record rows; the last step is always recorded"),
    key!("mmd_samples", "per-domain subsample size of the MMD probe"),
    key!("lambda_fixed", "constant trade-off in [0, 1] instead of 2/(1+exp(-10q))-1 (unset by default)"),
    key!("soft_pseudo_labels", "feed softmax rows instead of one-hot pseudo-labels to the correction"),
    key!("reg_through_generator", "let the discriminator's classification loss train the generator too"),
    key!("gen_hidden", "generator hidden widths"),
    key!("feature_dim", "generator output width"),
    key!("disc_hidden", "discriminator hidden widths"),
    key!("gen_dropout", "generator hidden dropout"),
    key!("disc_dropout", "discriminator hidden dropout"),
];

pub const ABLATE_KEYS: &[KeyDoc] = &[
    key!("methods", "ablate: comma-separated methods"),
    key!("seeds", "ablate: comma-separated seeds, each sets seed_init and seed_data"),
];

/// Parsed config plus the ablation lists.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub run: RunConfig,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
}

/// Reads `value` as a TOML value, falling back to a bare string.
fn parse_override_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn parse_override(arg: &str) -> Result<(String, Value)> {
    let (k, v) = arg
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{arg}` is not of the form key=value"))?;
    let k = k.trim();
    if k.is_empty() {
        bail!("override `{arg}` has an empty key");
    }
    Ok((k.to_string(), parse_override_value(v.trim())))
}

fn list_strings(key: &str, v: &Value) -> Result<Vec<String>> {
    match v {
        Value::String(s) => Ok(s.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect()),
        Value::Integer(i) => Ok(vec![i.to_string()]),
        Value::Array(items) => items
            .iter()
            .map(|i| match i {
                Value::String(s) => Ok(s.clone()),
                Value::Integer(n) => Ok(n.to_string()),
                other => Err(anyhow!("`{key}`: unexpected list item {other}")),
            })
            .collect(),
        other => Err(anyhow!("`{key}`: expected a comma-separated list, got {other}")),
    }
}

fn defaults_table(base: &RunConfig) -> Result<Table> {
    Ok(Table::try_from(base)?)
}

/// Integers are accepted where a float is expected.
fn coerce(key: &str, v: Value, defaults: &Table) -> Value {
    let wants_float = matches!(defaults.get(key), Some(Value::Float(_))) || key == "lambda_fixed";
    match v {
        Value::Integer(i) if wants_float => Value::Float(i as f64),
        other => other,
    }
}

/// Merges `layers` over `base`, rejecting unknown keys and type errors with
/// the key named.
pub fn resolve(base: RunConfig, layers: Vec<(String, Value)>) -> Result<Loaded> {
    let defaults = defaults_table(&base)?;
    let mut table = defaults.clone();
    let mut methods = None;
    let mut seeds = None;
    for (key, value) in layers {
        match key.as_str() {
            "methods" => {
                let parsed = list_strings(&key, &value)?
                    .iter()
                    .map(|m| m.parse::<Method>().map_err(|e| anyhow!("`methods`: {e}")))
                    .collect::<Result<Vec<_>>>()?;
                methods = Some(parsed);
            }
            "seeds" => {
                let parsed = list_strings(&key, &value)?
                    .iter()
                    .map(|s| s.parse::<u64>().map_err(|_| anyhow!("`seeds`: `{s}` is not a seed")))
                    .collect::<Result<Vec<_>>>()?;
                seeds = Some(parsed);
            }
            k if RUN_KEYS.iter().any(|d| d.key == k) => {
                let value = coerce(k, value, &defaults);
                let mut single = Table::new();
                single.insert(k.to_string(), value.clone());
                if let Err(e) = from_table(single) {
                    bail!("`{k}`: {}", e.message());
                }
                table.insert(k.to_string(), value);
            }
            other => bail!("unknown config key `{other}`"),
        }
    }
    let run = from_table(table).context("config")?;
    run.validate()?;
    Ok(Loaded {
        run,
        methods: methods.unwrap_or_else(|| vec![Method::SourceOnly, Method::Alda]),
        seeds: seeds.unwrap_or_else(|| vec![0, 1, 2]),
    })
}

fn from_table(t: Table) -> Result<RunConfig, toml::de::Error> {
    Value::Table(t).try_into()
}

/// Key/value pairs of a flat TOML file.
pub fn read_config_file(path: &Path) -> Result<Vec<(String, Value)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let table: Table = text
        .parse()
        .with_context(|| format!("parsing config {}", path.display()))?;
    let mut out = Vec::with_capacity(table.len());
    for (k, v) in table {
        if let Value::Table(_) = v {
            bail!("`{k}`: nested tables are not supported, the config is flat");
        }
        out.push((k, v));
    }
    Ok(out)
}

pub fn load(preset: Option<&str>, file: Option<&Path>, overrides: &[String]) -> Result<Loaded> {
    let base = match preset {
        Some(p) => RunConfig::preset(p)?,
        None => RunConfig::default(),
    };
    let mut layers = Vec::new();
    if let Some(f) = file {
        layers.extend(read_config_file(f)?);
    }
    for o in overrides {
        layers.push(parse_override(o)?);
    }
    resolve(base, layers)
}

fn display_default(defaults: &Table, key: &str) -> String {
    match defaults.get(key) {
        Some(Value::String(s)) if s.is_empty() => "\"\"".into(),
        Some(v) => v.to_string(),
        None => "unset".into(),
    }
}

/// Key reference appended to `--help`.
pub fn help_text() -> String {
    let defaults = defaults_table(&RunConfig::default()).expect("defaults serialize");
    let mut rows: Vec<(&str, String, String)> = RUN_KEYS
        .iter()
        .map(|d| {
            let origin = d.origin.map(|o| format!(" [{o}]")).unwrap_or_default();
            (d.key, display_default(&defaults, d.key), format!("{}{origin}", d.doc))
        })
        .collect();
    rows.push(("methods", "source_only,alda".into(), ABLATE_KEYS[0].doc.into()));
    rows.push(("seeds", "0,1,2".into(), ABLATE_KEYS[1].doc.into()));
    let key_w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let def_w = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
    let mut out = String::from("Config keys (flat TOML file via --config, or key=value overrides):\n");
    for (key, default, doc) in rows {
        out.push_str(&format!("  {key:<key_w$}  default {default:<def_w$}  {doc}\n"));
    }
    out.push_str(&format!("\nPresets: {}\n", RunConfig::PRESETS.join(", ")));
    out
}
