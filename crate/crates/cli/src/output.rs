use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const TOOL: &str = "sae-cli";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Hex digits of the config hash that are kept.
const HASH_CHARS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub config: String,
}

impl Provenance {
    pub fn csv_line(&self) -> String {
        format!("# tool={} {} seed={} config={}\n", self.tool, self.version, self.seed, self.config)
    }
}

/// Hash over everything that determines a command's output: the command,
/// its resolved settings and the bytes of every input file.
pub struct ConfigHash {
    sha: Sha256,
}

impl ConfigHash {
    pub fn new(command: &str) -> Self {
        let mut sha = Sha256::new();
        sha.update(format!("{TOOL} {VERSION}\ncommand={command}\n").as_bytes());
        Self { sha }
    }

    pub fn field(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.sha.update(format!("{key}={value}\n").as_bytes());
        self
    }

    pub fn file(&mut self, key: &str, path: &Path) -> Result<&mut Self, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        let digest = Sha256::digest(&bytes);
        self.sha.update(format!("{key}={}\n", hex(&digest)).as_bytes());
        Ok(self)
    }

    pub fn finish(&self, seed: u64) -> Provenance {
        let digest = self.sha.clone().finalize();
        let mut config = hex(&digest);
        config.truncate(HASH_CHARS);
        Provenance { tool: TOOL, version: VERSION, seed, config }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// JSON document with the provenance block first.
#[derive(Serialize)]
pub struct Document<'a, T: Serialize> {
    pub provenance: &'a Provenance,
    #[serde(flatten)]
    pub body: T,
}

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, content: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        fs::write(&path, content).map_err(|e| CliError::io(&path, e))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    pub fn json<T: Serialize>(&self, name: &str, prov: &Provenance, body: T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(&Document { provenance: prov, body })?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes a CSV that starts with the provenance comment line.
    pub fn csv(&self, name: &str, prov: &Provenance, body: &str) -> Result<PathBuf, CliError> {
        let mut text = prov.csv_line();
        text.push_str(body);
        self.write(name, text.as_bytes())
    }
}

pub fn csv_table(header: &[String], rows: &[Vec<String>]) -> Result<String, CliError> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(header)?;
    for r in rows {
        wtr.write_record(r)?;
    }
    let bytes = wtr.into_inner().map_err(|e| CliError::Input(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Input(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_depends_on_fields_only() {
        let a = ConfigHash::new("fit").field("model", "area").finish(1);
        let b = ConfigHash::new("fit").field("model", "area").finish(1);
        let c = ConfigHash::new("fit").field("model", "unit").finish(1);
        assert_eq!(a, b);
        assert_ne!(a.config, c.config);
        assert_eq!(a.config.len(), HASH_CHARS);
        assert!(a.csv_line().starts_with("# tool=sae-cli "));
    }
}
