use std::path::Path;

use anyhow::{bail, Context, Result};
use gsnn_core::Params;

/// Load the base config (or defaults) and apply `section.key=value`
/// overrides on top. Values are parsed as TOML scalars, falling back to a
/// bare string.
pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Params> {
    let doc: toml::Table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            text.parse().with_context(|| format!("parsing config {}", p.display()))?
        }
        None => toml::Table::new(),
    };
    apply(doc, overrides)
}

/// Apply overrides on top of already-resolved parameters.
pub fn amend(params: &Params, overrides: &[String]) -> Result<Params> {
    apply(params.to_toml_string().parse()?, overrides)
}

fn apply(mut doc: toml::Table, overrides: &[String]) -> Result<Params> {
    for item in overrides {
        let (key, value) = item.split_once('=').with_context(|| format!("override '{item}' is not key=value"))?;
        let Some((section, field)) = key.trim().split_once('.') else {
            bail!("override key '{key}' must look like section.field");
        };
        let value = parse_scalar(value.trim());
        let table = doc
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .with_context(|| format!("config entry '{section}' is not a section"))?;
        table.insert(field.to_string(), value);
    }
    let text = toml::to_string(&doc)?;
    Ok(Params::from_toml_str(&text)?)
}

fn parse_scalar(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
