use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use kol_core::{ControlSpec, KernelSpec};
use serde::Serialize;
use serde_json::{json, Value};

/// A failure classified by exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration: {m}"),
            CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<kol_core::Error> for CliError {
    fn from(e: kol_core::Error) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Reads a config file; a missing or unreadable file is a config error.
pub fn read_config(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))
}

pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> CliResult<T> {
    serde_json::from_str(text).map_err(|e| config_err(format!("{what}: {e}")))
}

/// Inline JSON when the argument starts with `{`, else a file path.
fn json_arg(arg: &str) -> CliResult<Option<String>> {
    let t = arg.trim();
    if t.starts_with('{') {
        return Ok(Some(t.to_string()));
    }
    let p = Path::new(t);
    if p.is_file() {
        return read_config(p).map(Some);
    }
    Ok(None)
}

pub fn parse_kernel(arg: &str) -> CliResult<KernelSpec> {
    let spec = match json_arg(arg)? {
        Some(text) => parse_json(&text, "kernel")?,
        None => {
            let mut named = KernelSpec::benchmark_set();
            named.push(("ntk_logistic".into(), KernelSpec::ntk(1, kol_core::Activation::Logistic)));
            let key = arg.trim().replace('-', "_");
            named
                .into_iter()
                .find(|(n, _)| *n == key)
                .map(|(_, k)| k)
                .ok_or_else(|| config_err(format!("unknown kernel '{arg}' (give JSON, a file, or a kernel name)")))?
        }
    };
    spec.validate()?;
    Ok(spec)
}

pub fn parse_control(arg: &str) -> CliResult<ControlSpec> {
    match json_arg(arg)? {
        Some(text) => parse_json(&text, "control"),
        None => Err(config_err(format!("control '{arg}' is neither JSON nor a readable file"))),
    }
}

pub fn ensure_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Records the resolved inputs of a run. Carries no timestamps so reruns
/// produce identical bytes.
pub fn write_manifest(path: &Path, command: &str, config: Value, outputs: &[PathBuf]) -> CliResult {
    let outputs: Vec<String> = outputs
        .iter()
        .map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    write_json(
        path,
        &json!({
            "tool": "kol",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "config": config,
            "outputs": outputs,
        }),
    )
}

pub fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serialisable")
}

/// Shortest decimal that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
