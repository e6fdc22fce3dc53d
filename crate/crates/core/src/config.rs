//! Flat `key = value` configuration files. `#` starts a comment.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub type ConfigMap = BTreeMap<String, String>;

pub fn parse(text: &str) -> Result<ConfigMap> {
    let mut map = ConfigMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected key = value, got {line:?}"),
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                msg: "empty key".into(),
            });
        }
        if map.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("duplicate key {k}"),
            });
        }
    }
    Ok(map)
}

/// Applies a `key=value` override.
pub fn apply_override(map: &mut ConfigMap, kv: &str) -> Result<()> {
    let (k, v) = kv
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override must be key=value, got {kv:?}")))?;
    map.insert(k.trim().to_string(), v.trim().to_string());
    Ok(())
}

pub fn check_keys(map: &ConfigMap, known: &[&str]) -> Result<()> {
    match map.keys().find(|k| !known.contains(&k.as_str())) {
        Some(k) => Err(Error::Config(format!("unknown key {k:?}"))),
        None => Ok(()),
    }
}

pub fn get<T: std::str::FromStr>(map: &ConfigMap, key: &str, default: T) -> Result<T> {
    match map.get(key) {
        None => Ok(default),
        Some(s) => s
            .parse()
            .map_err(|_| Error::Config(format!("cannot parse {key} = {s:?}"))),
    }
}

pub fn require<T: std::str::FromStr>(map: &ConfigMap, key: &str) -> Result<T> {
    let s = map.get(key).ok_or_else(|| Error::Config(format!("missing key {key}")))?;
    s.parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} = {s:?}")))
}

/// A number, or `10^x`.
pub fn parse_number(s: &str) -> Result<f64> {
    let s = s.trim();
    let v = match s.strip_prefix("10^") {
        Some(e) => e.trim().parse::<f64>().map(|e| 10f64.powf(e)),
        None => s.parse::<f64>(),
    };
    v.map_err(|_| Error::Config(format!("cannot parse number {s:?}")))
}

/// Comma-separated numbers.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',').filter(|x| !x.trim().is_empty()).map(parse_number).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let mut m = parse("# header\nalpha = 5 # trailing\n\nt_grid = 100, 10^2.5\n").unwrap();
        assert_eq!(m["alpha"], "5");
        assert_eq!(parse_list(&m["t_grid"]).unwrap(), vec![100.0, 10f64.powf(2.5)]);
        apply_override(&mut m, "alpha=6").unwrap();
        assert_eq!(get(&m, "alpha", 0.0).unwrap(), 6.0);
        assert!(check_keys(&m, &["alpha"]).is_err());
        assert!(parse("novalue\n").is_err());
        assert!(parse("a=1\na=2\n").is_err());
    }
}
