//! Run configuration: a flat sectioned key=value file with strict key
//! validation, resolved against per-system presets.
//!
//! Sections and keys:
//! ```text
//! [system]   name, n (embedded dimension), seed (embedded basis),
//!            file (glv / loaded_rnn weights)
//! [model]    kind (resnet|rbf), d_hid, layers, m
//! [train]    lambda, gamma_bal, batch, iters, lr, weight_decay, seed,
//!            coverage_check
//! [sampling] preset (default), sigmas (comma list: isotropic ladder at the
//!            origin, overriding the per-system preset)
//! [output]   dir
//! ```
//! Unknown sections and keys are hard errors; `#` or `;` lines are comments.

use sepx_core::dynamics::{builtin_system, SystemParams, SystemSpec};
use sepx_core::error::{Error, Result};
use sepx_core::models::ModelShape;
use sepx_core::sampling::{default_distributions, Distribution};
use sepx_core::training::{default_config, TrainConfig};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

const SECTIONS: [(&str, &[&str]); 5] = [
    ("system", &["name", "n", "seed", "file"]),
    ("model", &["kind", "d_hid", "layers", "m"]),
    (
        "train",
        &["lambda", "gamma_bal", "batch", "iters", "lr", "weight_decay", "seed", "coverage_check"],
    ),
    ("sampling", &["preset", "sigmas"]),
    ("output", &["dir"]),
];

/// Parsed `section.key -> value` map with every key validated against the
/// fixed schema.
pub struct RawConfig {
    values: BTreeMap<(String, String), String>,
}

impl RawConfig {
    pub fn parse(path: &Path) -> Result<RawConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let pstr = path.display().to_string();
        let err = |line: usize, msg: String| Error::Parse { path: pstr.clone(), line, msg };
        let mut values = BTreeMap::new();
        let mut section: Option<&'static (&str, &[&str])> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = i + 1;
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = Some(
                    SECTIONS
                        .iter()
                        .find(|(s, _)| *s == name)
                        .ok_or_else(|| err(lineno, format!("unknown section [{name}]")))?,
                );
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(err(lineno, format!("expected `key = value`, got {line:?}")));
            };
            let (key, value) = (key.trim(), value.trim());
            let Some((sec, keys)) = section else {
                return Err(err(lineno, format!("key {key:?} before any [section]")));
            };
            if !keys.contains(&key) {
                return Err(err(lineno, format!("unknown key {sec}.{key}")));
            }
            if values.insert((sec.to_string(), key.to_string()), value.to_string()).is_some() {
                return Err(err(lineno, format!("duplicate key {sec}.{key}")));
            }
        }
        Ok(RawConfig { values })
    }

    fn get(&self, sec: &str, key: &str) -> Option<&str> {
        self.values.get(&(sec.to_string(), key.to_string())).map(|s| s.as_str())
    }

    fn parse_as<T: std::str::FromStr>(&self, sec: &str, key: &str) -> Result<Option<T>> {
        match self.get(sec, key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| {
                Error::InvalidInput(format!("{sec}.{key}: cannot parse {v:?}"))
            }),
        }
    }
}

/// Everything a training run needs, resolved from a config file plus
/// command-line overrides.
pub struct RunConfig {
    pub system: SystemSpec,
    pub shape: ModelShape,
    pub train: TrainConfig,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
}

fn preset_shape(system_name: &str) -> ModelShape {
    match system_name {
        "two_limit_cycles" => ModelShape::Rbf { m: 300 },
        "glv" => ModelShape::ResNet { d_hid: 1000, l_layers: 25 },
        "loaded_rnn" => ModelShape::ResNet { d_hid: 1200, l_layers: 7 },
        _ => ModelShape::ResNet { d_hid: 400, l_layers: 20 },
    }
}

fn build_system(raw: &RawConfig) -> Result<SystemSpec> {
    let name = raw
        .get("system", "name")
        .ok_or_else(|| Error::InvalidInput("config is missing system.name".into()))?;
    let n: Option<usize> = raw.parse_as("system", "n")?;
    let seed: Option<u64> = raw.parse_as("system", "seed")?;
    let file: Option<String> = raw.parse_as("system", "file")?;
    match name {
        "embedded_bistable" => {
            if file.is_some() {
                return Err(Error::InvalidInput("system.file is not used by embedded_bistable".into()));
            }
            let n = n.ok_or_else(|| {
                Error::InvalidInput("embedded_bistable needs system.n".into())
            })?;
            builtin_system(name, SystemParams::Embedded { n, seed: seed.unwrap_or(0) })
        }
        "glv" | "loaded_rnn" => {
            if n.is_some() || seed.is_some() {
                return Err(Error::InvalidInput(format!(
                    "system.n / system.seed are not used by {name}"
                )));
            }
            match file {
                Some(f) => builtin_system(name, SystemParams::File(Path::new(&f))),
                None => builtin_system(name, SystemParams::None),
            }
        }
        _ => {
            if n.is_some() || seed.is_some() || file.is_some() {
                return Err(Error::InvalidInput(format!(
                    "system {name} takes no parameters"
                )));
            }
            builtin_system(name, SystemParams::None)
        }
    }
}

fn build_shape(raw: &RawConfig, system: &SystemSpec) -> Result<ModelShape> {
    let kind = raw.get("model", "kind");
    let d_hid: Option<usize> = raw.parse_as("model", "d_hid")?;
    let layers: Option<usize> = raw.parse_as("model", "layers")?;
    let m: Option<usize> = raw.parse_as("model", "m")?;
    let preset = preset_shape(&system.name);
    let kind = match kind {
        None => preset,
        Some("resnet") => ModelShape::ResNet { d_hid: 400, l_layers: 20 },
        Some("rbf") => ModelShape::Rbf { m: 300 },
        Some(other) => {
            return Err(Error::InvalidInput(format!(
                "model.kind must be resnet or rbf, got {other:?}"
            )))
        }
    };
    // when kind is omitted, shape keys refine the preset
    match kind {
        ModelShape::ResNet { d_hid: dh, l_layers: ll } => {
            if m.is_some() {
                return Err(Error::InvalidInput("model.m needs model.kind = rbf".into()));
            }
            Ok(ModelShape::ResNet {
                d_hid: d_hid.unwrap_or(dh),
                l_layers: layers.unwrap_or(ll),
            })
        }
        ModelShape::Rbf { m: mm } => {
            if d_hid.is_some() || layers.is_some() {
                return Err(Error::InvalidInput(
                    "model.d_hid / model.layers need model.kind = resnet".into(),
                ));
            }
            Ok(ModelShape::Rbf { m: m.unwrap_or(mm) })
        }
    }
}

fn build_distributions(
    raw: &RawConfig,
    system: &SystemSpec,
    seed: u64,
) -> Result<Vec<Distribution>> {
    match (raw.get("sampling", "preset"), raw.get("sampling", "sigmas")) {
        (Some(p), Some(_)) if p == "default" => Err(Error::InvalidInput(
            "sampling.preset and sampling.sigmas are mutually exclusive".into(),
        )),
        (Some("default"), None) | (None, None) => default_distributions(system, seed),
        (Some(other), _) => Err(Error::InvalidInput(format!(
            "sampling.preset must be \"default\", got {other:?}"
        ))),
        (None, Some(list)) => {
            let sigmas = parse_f64_list(list)
                .map_err(|m| Error::InvalidInput(format!("sampling.sigmas: {m}")))?;
            if sigmas.is_empty() {
                return Err(Error::InvalidInput("sampling.sigmas is empty".into()));
            }
            sigmas
                .iter()
                .enumerate()
                .map(|(j, &sg)| {
                    Distribution::isotropic(
                        sepx_core::ndarray::Array1::zeros(system.n),
                        sg,
                        seed.wrapping_add(j as u64),
                    )
                })
                .collect()
        }
    }
}

/// Comma-separated float list.
pub fn parse_f64_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<f64>().map_err(|_| format!("cannot parse {p:?} as a number")))
        .collect()
}

impl RunConfig {
    /// Loads and validates a config file. `seed_override` (the `--seed`
    /// flag) wins over `train.seed`; the seed drives model initialization,
    /// batch sampling, and training.
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<RunConfig> {
        let raw = RawConfig::parse(path)?;
        let system = build_system(&raw)?;
        let shape = build_shape(&raw, &system)?;
        let seed = match seed_override {
            Some(s) => s,
            None => raw.parse_as("train", "seed")?.unwrap_or(0),
        };
        let dists = build_distributions(&raw, &system, seed)?;
        let mut train = default_config(&system, dists, seed);
        if let Some(v) = raw.parse_as("train", "lambda")? {
            train.lambda = v;
        }
        if let Some(v) = raw.parse_as("train", "gamma_bal")? {
            train.gamma_bal = v;
        }
        if let Some(v) = raw.parse_as("train", "batch")? {
            train.batch = v;
        }
        if let Some(v) = raw.parse_as("train", "iters")? {
            train.iters = v;
        }
        if let Some(v) = raw.parse_as("train", "lr")? {
            train.lr = v;
        }
        if let Some(v) = raw.parse_as("train", "weight_decay")? {
            train.weight_decay = v;
        }
        if let Some(v) = raw.parse_as("train", "coverage_check")? {
            train.coverage_check = v;
        }
        let out_dir = raw.get("output", "dir").map(PathBuf::from);
        train.validate(system.n)?;
        Ok(RunConfig { system, shape, train, out_dir, seed })
    }
}

/// Builds a system from a `name[:key=val,...]` command-line argument, e.g.
/// `duffing2d`, `embedded_bistable:n=32,seed=7`, `glv:file=weights.txt`.
pub fn parse_system_arg(arg: &str) -> Result<SystemSpec> {
    let (name, rest) = match arg.split_once(':') {
        Some((n, r)) => (n, r),
        None => (arg, ""),
    };
    let mut n: Option<usize> = None;
    let mut seed: Option<u64> = None;
    let mut file: Option<String> = None;
    for part in rest.split(',').map(|p| p.trim()).filter(|p| !p.is_empty()) {
        let Some((k, v)) = part.split_once('=') else {
            return Err(Error::InvalidInput(format!("system parameter {part:?} is not key=value")));
        };
        match k.trim() {
            "n" => {
                n = Some(v.trim().parse().map_err(|_| {
                    Error::InvalidInput(format!("system n: cannot parse {v:?}"))
                })?)
            }
            "seed" => {
                seed = Some(v.trim().parse().map_err(|_| {
                    Error::InvalidInput(format!("system seed: cannot parse {v:?}"))
                })?)
            }
            "file" => file = Some(v.trim().to_string()),
            other => {
                return Err(Error::InvalidInput(format!("unknown system parameter {other:?}")))
            }
        }
    }
    match name {
        "embedded_bistable" => {
            let n = n.ok_or_else(|| Error::InvalidInput("embedded_bistable needs n=<dim>".into()))?;
            builtin_system(name, SystemParams::Embedded { n, seed: seed.unwrap_or(0) })
        }
        _ => match file {
            Some(f) => builtin_system(name, SystemParams::File(Path::new(&f))),
            None => builtin_system(name, SystemParams::None),
        },
    }
}
