//! Settings resolution: defaults, then the config file, then flags.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::Failure;

pub struct Context {
    pub seed: Option<u64>,
    pub file: Option<PathBuf>,
}

impl Context {
    /// `defaults` with the config file merged over it. Nested tables merge
    /// key by key, so a file only needs the settings it changes.
    pub fn load<T: Serialize + DeserializeOwned>(&self, defaults: T) -> Result<T, Failure> {
        let Some(path) = &self.file else {
            return Ok(defaults);
        };
        let text = read_input(path)?;
        let bad = |msg: String| Failure::from(halo_core::Error::parse(path, msg));
        let file: Value = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| bad(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?
        };
        let mut base = serde_json::to_value(&defaults).expect("settings serialize");
        merge(&mut base, file);
        serde_json::from_value(base).map_err(|e| bad(e.to_string()))
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Copies every flag that was given onto the settings.
macro_rules! overlay {
    ($cfg:expr; $($field:ident).+ = $val:expr $(, $($rest:ident).+ = $rv:expr)* $(,)?) => {
        if let Some(v) = $val.clone() {
            $cfg.$($field).+ = v;
        }
        $(if let Some(v) = $rv.clone() {
            $cfg.$($rest).+ = v;
        })*
    };
}
pub(crate) use overlay;

/// Exit 2 with the path when an input file is missing.
pub fn require(path: &Path) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::new(2, format!("missing file: {}", path.display())))
    }
}

pub fn read_input(path: &Path) -> Result<String, Failure> {
    require(path)?;
    std::fs::read_to_string(path).map_err(|e| halo_core::Error::io(path, e).into())
}

pub fn write_output(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| halo_core::Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| halo_core::Error::io(path, e).into())
}

pub fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("output serializes") + "\n"
}

/// Writes the resolved settings as `config.json` in an output directory.
pub fn echo_into<T: Serialize>(dir: &Path, cfg: &T) -> Result<(), Failure> {
    write_output(&dir.join("config.json"), &to_json(cfg))
}

/// Writes the resolved settings next to an output file as
/// `<file>.config.json`.
pub fn echo_beside<T: Serialize>(file: &Path, cfg: &T) -> Result<(), Failure> {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(".config.json");
    write_output(&file.with_file_name(name), &to_json(cfg))
}
