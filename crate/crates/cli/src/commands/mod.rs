pub mod evaluate;
pub mod model;
pub mod predict;
pub mod volume;

use std::path::Path;

use crate::error::{CliError, CliResult};

/// Parses "a,b,c" into three values.
pub fn parse_triple<T: std::str::FromStr>(s: &str) -> Result<[T; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got {s:?}"));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.parse::<T>().map_err(|_| format!("cannot parse {p:?}"))?);
    }
    out.try_into().map_err(|_| unreachable!())
}

/// Accepts "n" for a cube or "z,y,x".
pub fn parse_patch(s: &str) -> Result<[usize; 3], String> {
    if let Ok(n) = s.trim().parse::<usize>() {
        return Ok([n; 3]);
    }
    parse_triple(s)
}

pub fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Io(format!("{}: no such file", path.display())))
    }
}

pub fn create_parent(path: &Path) -> CliResult<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p)?;
    }
    Ok(())
}
