use std::fs;
use std::path::{Path, PathBuf};

use causal_mdl::experiments::fingerprint;
use causal_mdl::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::args::GlobalArgs;

/// Resolved parameters of one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub subcommand: &'static str,
    pub global_seed: u64,
    pub params: Value,
    pub fingerprint: String,
    pub out: PathBuf,
}

impl RunConfig {
    /// Applies the `--config` overrides to the parsed flags and fingerprints
    /// the result. The output directory and worker count are not part of the
    /// fingerprint.
    pub fn resolve<T: Serialize + DeserializeOwned>(
        global: &GlobalArgs,
        subcommand: &'static str,
        args: T,
    ) -> Result<(T, Self)> {
        let mut params = serde_json::to_value(&args)?;
        let mut global_seed = global.global_seed;
        let mut out = global.out.clone();
        if let Some(path) = &global.config {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let overrides: Value = serde_json::from_str(&text)?;
            let Value::Object(overrides) = overrides else {
                return Err(Error::Config(format!(
                    "{}: expected a JSON object",
                    path.display()
                )));
            };
            let fields = params
                .as_object_mut()
                .expect("arguments serialize to an object");
            for (key, value) in overrides {
                match key.as_str() {
                    "global_seed" => {
                        global_seed = value.as_u64().ok_or_else(|| {
                            Error::Config("global_seed must be an unsigned integer".into())
                        })?
                    }
                    "out" => {
                        out = PathBuf::from(
                            value
                                .as_str()
                                .ok_or_else(|| Error::Config("out must be a string".into()))?,
                        )
                    }
                    _ if fields.contains_key(&key) => {
                        fields.insert(key, value);
                    }
                    _ => {
                        return Err(Error::Config(format!(
                            "unknown {subcommand} option {key:?} in config"
                        )))
                    }
                }
            }
        }
        let args: T = serde_json::from_value(params.clone())
            .map_err(|e| Error::Config(format!("invalid {subcommand} configuration: {e}")))?;
        let fingerprint = fingerprint(&json!({
            "subcommand": subcommand,
            "global_seed": global_seed,
            "params": params,
        }))?;
        Ok((
            args,
            Self {
                subcommand,
                global_seed,
                params,
                fingerprint,
                out,
            },
        ))
    }

    /// Provenance block embedded in every JSON artifact.
    pub fn header(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("tool".into(), json!(env!("CARGO_PKG_NAME")));
        m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        m.insert("subcommand".into(), json!(self.subcommand));
        m.insert("global_seed".into(), json!(self.global_seed));
        m.insert("config_fingerprint".into(), json!(self.fingerprint));
        m.insert("config".into(), self.params.clone());
        m
    }

    pub fn path(&self, file: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        Ok(self.out.join(file))
    }

    pub fn write_json(&self, file: &str, body: Map<String, Value>) -> Result<PathBuf> {
        let mut doc = self.header();
        doc.extend(body);
        let path = self.path(file)?;
        let mut text = serde_json::to_string_pretty(&Value::Object(doc))?;
        text.push('\n');
        write(&path, text.as_bytes())?;
        Ok(path)
    }

    /// Writes a CSV produced in memory with the seed and fingerprint appended
    /// to every row.
    pub fn write_csv(&self, file: &str, table: &[u8]) -> Result<PathBuf> {
        let mut rdr = csv::Reader::from_reader(table);
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        header.extend(["global_seed".to_owned(), "config_fingerprint".to_owned()]);
        w.write_record(&header)?;
        let seed = self.global_seed.to_string();
        for rec in rdr.records() {
            let mut row: Vec<String> = rec?.iter().map(str::to_owned).collect();
            row.extend([seed.clone(), self.fingerprint.clone()]);
            w.write_record(&row)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::io(file, e.into_error()))?;
        let path = self.path(file)?;
        write(&path, &bytes)?;
        Ok(path)
    }
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Fails with an input error unless `path` is an existing file.
pub fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ))
    }
}
