use std::path::Path;

use ppk_cli::config::FileConfig;
use ppk_cli::SweepSpec;

/// Resolves a TOML config with its output redirected into `dir`.
pub fn spec(toml: &str, dir: &Path, name: &str) -> SweepSpec {
    let mut cfg = FileConfig::from_toml(toml).unwrap();
    cfg.run.out = Some(dir.join(name));
    cfg.resolve().unwrap()
}
