//! Flat `key = value` config text with `[section]` headers.
//!
//! Keys may be written bare (`beta`) or qualified (`loss.beta`); inside a
//! section, bare keys are qualified by it. `#` starts a comment. Unknown
//! keys are errors. Floats are echoed with Rust's shortest round-trip
//! formatting, so `from_text(to_text(c)) == c` exactly.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::train::TrainConfig;

/// Every key of [`TrainConfig`], as `(section, name)`.
pub const TRAIN_KEYS: &[(&str, &str)] = &[
    ("model", "arch"),
    ("model", "timesteps"),
    ("model", "tau"),
    ("model", "theta"),
    ("model", "surrogate_width"),
    ("model", "detach_reset"),
    ("loss", "beta"),
    ("loss", "gamma"),
    ("loss", "alpha"),
    ("loss", "consistency_fn"),
    ("loss", "bit_op"),
    ("loss", "dense"),
    ("loss", "detach_anchor"),
    ("loss", "detach_clean"),
    ("loss", "detach_noise_input"),
    ("noise", "kind"),
    ("optim", "lr"),
    ("optim", "momentum"),
    ("optim", "weight_decay"),
    ("optim", "lr_decay_every"),
    ("optim", "lr_decay_factor"),
    ("optim", "epochs"),
    ("optim", "batch_size"),
    ("optim", "seed"),
    ("energy", "e_ac_pj"),
    ("energy", "e_mac_pj"),
];

/// One `key = value` line; `key` is as written, qualified by the enclosing section if bare.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Split config text into entries, qualifying bare keys with their section.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>> {
    let mut section: Option<String> = None;
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = Some(name.trim().to_string());
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format("config", format!("line {}: expected key = value, got `{line}`", n + 1)))?;
        let k = k.trim();
        let key = match &section {
            Some(s) if !k.contains('.') => format!("{s}.{k}"),
            _ => k.to_string(),
        };
        out.push(Entry {
            line: n + 1,
            key,
            value: v.trim().to_string(),
        });
    }
    Ok(out)
}

/// Resolve a bare or qualified key to its `(section, name)` in `keys`.
pub fn resolve_key<'a>(keys: &'a [(&'a str, &'a str)], key: &str) -> Option<(&'a str, &'a str)> {
    let (sec, name) = match key.split_once('.') {
        Some((s, n)) => (Some(s), n),
        None => (None, key),
    };
    keys.iter()
        .copied()
        .find(|&(s, n)| n == name && sec.is_none_or(|q| q == s))
}

/// Split a `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::format("override", format!("expected key=value, got `{s}`")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidParam(format!("bad value `{value}` for `{key}`")))
}

impl TrainConfig {
    /// Set one field from its textual value. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (_, name) = resolve_key(TRAIN_KEYS, key).ok_or_else(|| Error::UnknownName {
            kind: "config key",
            name: key.to_string(),
        })?;
        match name {
            "arch" => self.arch = value.parse()?,
            "timesteps" => self.timesteps = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "theta" => self.theta = parse(key, value)?,
            "surrogate_width" => self.surrogate_width = parse(key, value)?,
            "detach_reset" => self.detach_reset = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "consistency_fn" => self.consistency_fn = value.parse()?,
            "bit_op" => self.bit_op = value.parse()?,
            "dense" => self.dense = parse(key, value)?,
            "detach_anchor" => self.detach_anchor = parse(key, value)?,
            "detach_clean" => self.detach_clean = parse(key, value)?,
            "detach_noise_input" => self.detach_noise_input = parse(key, value)?,
            "kind" => self.noise = value.parse()?,
            "lr" => self.lr = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "lr_decay_every" => self.lr_decay_every = parse(key, value)?,
            "lr_decay_factor" => self.lr_decay_factor = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "e_ac_pj" => self.energy_ac_pj = parse(key, value)?,
            "e_mac_pj" => self.energy_mac_pj = parse(key, value)?,
            _ => unreachable!("key table and setter disagree on `{name}`"),
        }
        Ok(())
    }

    fn get(&self, name: &str) -> String {
        match name {
            "arch" => self.arch.to_string(),
            "timesteps" => self.timesteps.to_string(),
            "tau" => self.tau.to_string(),
            "theta" => self.theta.to_string(),
            "surrogate_width" => self.surrogate_width.to_string(),
            "detach_reset" => self.detach_reset.to_string(),
            "beta" => self.beta.to_string(),
            "gamma" => self.gamma.to_string(),
            "alpha" => self.alpha.to_string(),
            "consistency_fn" => self.consistency_fn.to_string(),
            "bit_op" => self.bit_op.to_string(),
            "dense" => self.dense.to_string(),
            "detach_anchor" => self.detach_anchor.to_string(),
            "detach_clean" => self.detach_clean.to_string(),
            "detach_noise_input" => self.detach_noise_input.to_string(),
            "kind" => self.noise.to_string(),
            "lr" => self.lr.to_string(),
            "momentum" => self.momentum.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "lr_decay_every" => self.lr_decay_every.to_string(),
            "lr_decay_factor" => self.lr_decay_factor.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "seed" => self.seed.to_string(),
            "e_ac_pj" => self.energy_ac_pj.to_string(),
            "e_mac_pj" => self.energy_mac_pj.to_string(),
            _ => unreachable!("key table and getter disagree on `{name}`"),
        }
    }

    /// Fully resolved config text, one section per group.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for &(section, name) in TRAIN_KEYS {
            if section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{section}]");
                current = section;
            }
            let _ = writeln!(out, "{name} = {}", self.get(name));
        }
        out
    }

    /// Defaults overridden by every entry of `text`.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for e in parse_entries(text)? {
            cfg.set(&e.key, &e.value)?;
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Arch;
    use crate::noise::NoiseKind;

    #[test]
    fn echo_round_trips() {
        let mut c = TrainConfig::default();
        c.set("beta", "0.3").unwrap();
        c.set("noise.kind", "gaussian:0.5").unwrap();
        c.set("model.arch", "MLP_SNN").unwrap();
        c.set("lr", "0.1").unwrap();
        c.set("weight_decay", &(1.0f64 / 3.0).to_string()).unwrap();
        assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c);
        assert_eq!(c.arch, Arch::MlpSnn);
        assert_eq!(c.noise, NoiseKind::Gaussian(0.5));
    }

    #[test]
    fn unknown_and_misplaced_keys_fail() {
        let mut c = TrainConfig::default();
        assert!(c.set("betta", "1").is_err());
        assert!(c.set("optim.beta", "1").is_err());
        assert!(TrainConfig::from_text("[loss]\nlr = 0.1\n").is_err());
        assert!(c.set("epochs", "-1").is_err());
        assert!(TrainConfig::from_text("no equals sign").is_err());
    }

    #[test]
    fn sections_and_comments() {
        let c = TrainConfig::from_text("# comment\n[optim]\nepochs = 3 # trailing\n\n[loss]\ngamma=0\n").unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.gamma, 0.0);
    }

    #[test]
    fn every_key_is_settable() {
        let text = TrainConfig::default().to_text();
        assert_eq!(parse_entries(&text).unwrap().len(), TRAIN_KEYS.len());
    }
}
