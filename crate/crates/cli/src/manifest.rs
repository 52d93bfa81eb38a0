use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// What produced an output file, enough to rerun it.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub env_path: Option<String>,
    pub env_sha256: Option<String>,
    pub config: serde_json::Value,
    pub version: &'static str,
}

impl RunManifest {
    pub fn new(command: &'static str, env: Option<&LoadedEnv>, config: serde_json::Value) -> Self {
        Self {
            command,
            env_path: env.map(|e| e.path.clone()),
            env_sha256: env.map(|e| sha256_hex(e.text.as_bytes())),
            config,
            version: env!("CARGO_PKG_VERSION"),
        }
    }

    /// Writes the manifest next to `out` as `<out>.manifest.json`.
    pub fn write_beside(&self, out: &Path) -> Result<()> {
        let mut name = out.as_os_str().to_owned();
        name.push(".manifest.json");
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&name, text).with_context(|| format!("writing {}", Path::new(&name).display()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Env text as read, with the path it came from.
pub struct LoadedEnv {
    pub path: String,
    pub text: String,
    pub spec: flowshape::env::EnvSpec,
}

/// Reads an env file. A bare bundled name (`t1`, `r1`, `r2`) that is not an
/// existing path loads the bundled copy.
pub fn load_env(arg: &str) -> Result<LoadedEnv> {
    let text = if !Path::new(arg).exists() && flowshape::envs::source(arg).is_some() {
        flowshape::envs::source(arg).unwrap().to_string()
    } else {
        std::fs::read_to_string(arg).with_context(|| format!("reading env {arg}"))?
    };
    let spec = flowshape::env::EnvSpec::from_json(&text).with_context(|| format!("env {arg}"))?;
    Ok(LoadedEnv {
        path: arg.to_string(),
        text,
        spec,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
