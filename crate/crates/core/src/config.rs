//! Flat `key=value` run settings.
//!
//! Resolution order is defaults, then the optional config file, then
//! command-line flags. Blank lines and `#` comments are ignored in files.

use std::collections::BTreeMap;

use crate::contrastive::{on_off, TrainConfig};
use crate::error::{Error, Result};
use crate::margin::SearchConfig;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Settings {
    pub train: TrainConfig,
    pub search: SearchConfig,
}

/// Parses `key=value` lines, keeping the last value of repeated keys.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
            line: i + 1,
            reason: format!("expected key=value, got `{line}`"),
        })?;
        out.insert(normalize_key(k.trim()), v.trim().to_string());
    }
    Ok(out)
}

fn normalize_key(k: &str) -> String {
    k.replace('-', "_")
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| Error::config(key, format!("`{value}`: {e}")))
}

fn parse_switch(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(key, format!("expected on or off, got `{value}`"))),
    }
}

impl Settings {
    /// Applies one setting. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = normalize_key(key);
        let t = &mut self.train;
        match key.as_str() {
            "tau" | "temperature" => t.temperature = parse(&key, value)?,
            "sigma" | "filter_threshold" => t.filter_threshold = parse(&key, value)?,
            "queue_size" | "queue_capacity" => t.queue_capacity = parse(&key, value)?,
            "batch_size" => t.batch_size = parse(&key, value)?,
            "epochs" => t.epochs = parse(&key, value)?,
            "step_size" => t.step_size = parse(&key, value)?,
            "negatives" => t.negatives_source = value.parse()?,
            "shuffle" => t.shuffle = parse_switch(&key, value)?,
            "prefilter" => t.prefilter_enabled = parse_switch(&key, value)?,
            "seed" => t.rng_seed = parse(&key, value)?,
            "k" => self.search.k = parse(&key, value)?,
            "margin" => self.search.margin_kind = value.parse()?,
            _ => return Err(Error::config(key, "unknown setting")),
        }
        Ok(())
    }

    pub fn apply<'a, I>(&mut self, entries: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        for (k, v) in entries {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.search.k == 0 {
            return Err(Error::config("k", "must be >= 1"));
        }
        Ok(())
    }

    /// Defaults, overridden by `file` entries, overridden by `flags`.
    pub fn resolve(file: Option<&str>, flags: &[(String, String)]) -> Result<Self> {
        let mut s = Settings::default();
        if let Some(text) = file {
            let kv = parse_kv(text)?;
            s.apply(kv.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        }
        s.apply(flags.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        s.validate()?;
        Ok(s)
    }

    pub fn describe(&self) -> String {
        format!("{} {}", self.train.describe(), self.search.describe())
    }

    /// The fully resolved settings as a loadable config file.
    pub fn to_config_file(&self) -> String {
        let t = &self.train;
        format!(
            "tau={}\nsigma={}\nqueue_size={}\nbatch_size={}\nepochs={}\nstep_size={}\nnegatives={}\nshuffle={}\nprefilter={}\nseed={}\nk={}\nmargin={}\n",
            t.temperature,
            t.filter_threshold,
            t.queue_capacity,
            t.batch_size,
            t.epochs,
            t.step_size,
            t.negatives_source,
            on_off(t.shuffle),
            on_off(t.prefilter_enabled),
            t.rng_seed,
            self.search.k,
            self.search.margin_kind
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flag(k: &str, v: &str) -> (String, String) {
        (k.to_string(), v.to_string())
    }

    #[test]
    fn defaults() {
        let s = Settings::resolve(None, &[]).unwrap();
        assert_eq!(s.train.temperature, 0.05);
        assert_eq!(s.train.filter_threshold, 0.9);
        assert_eq!(s.train.queue_capacity, 4096);
        assert_eq!(s.train.batch_size, 32);
        assert_eq!(s.search.k, 4);
    }

    #[test]
    fn zero_tau_rejected_with_key() {
        let err = Settings::resolve(None, &[flag("tau", "0")]).unwrap_err();
        match err {
            Error::InvalidConfig { key, .. } => assert_eq!(key, "tau"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn flags_override_file() {
        let file = "# run\nsigma = 0.7\nbatch-size=16\n";
        let s = Settings::resolve(Some(file), &[flag("sigma", "0.9")]).unwrap();
        assert_eq!(s.train.filter_threshold, 0.9);
        assert_eq!(s.train.batch_size, 16);
        let s = Settings::resolve(Some(file), &[]).unwrap();
        assert_eq!(s.train.filter_threshold, 0.7);
    }

    #[test]
    fn unknown_key_and_bad_lines() {
        assert!(matches!(
            Settings::resolve(Some("bogus=1"), &[]),
            Err(Error::InvalidConfig { .. })
        ));
        assert!(matches!(
            Settings::resolve(Some("just words"), &[]),
            Err(Error::Format { line: 1, .. })
        ));
        assert!(Settings::resolve(None, &[flag("shuffle", "maybe")]).is_err());
    }

    #[test]
    fn config_file_round_trip() {
        let s = Settings::resolve(
            None,
            &[flag("negatives", "in-batch"), flag("prefilter", "on"), flag("margin", "distance")],
        )
        .unwrap();
        let back = Settings::resolve(Some(&s.to_config_file()), &[]).unwrap();
        assert_eq!(back, s);
    }
}
