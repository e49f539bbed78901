//! Training configuration and its `key = value` file format.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::norm::NormKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regime {
    SourceOnly,
    MixedNoAdapt,
    Uada,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::SourceOnly, Regime::MixedNoAdapt, Regime::Uada];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::SourceOnly => "source_only",
            Regime::MixedNoAdapt => "mixed_no_adapt",
            Regime::Uada => "uada",
        }
    }

    /// Whether target images enter the forward pass.
    pub fn is_mixed(self) -> bool {
        self != Regime::SourceOnly
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown regime `{s}`")))
    }
}

pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [0.01, 0.03, 0.1, 0.3, 1.0];

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub lr_halving_epochs: Vec<usize>,
    pub batch_per_domain: usize,
    pub seed: u64,
    pub norm_kind: NormKind,
    pub regime: Regime,
    /// Initial instance-noise level, annealed linearly to zero.
    pub noise_sigma0: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            epochs: 17,
            lr: 0.01,
            momentum: 0.9,
            lr_halving_epochs: vec![9, 16],
            batch_per_domain: 2,
            seed: 1,
            norm_kind: NormKind::Dan,
            regime: Regime::Uada,
            noise_sigma0: 0.1,
        }
    }
}

const KEYS: [&str; 10] = [
    "lambda",
    "epochs",
    "lr",
    "momentum",
    "lr_halving_epochs",
    "batch_per_domain",
    "seed",
    "norm_kind",
    "regime",
    "noise_sigma0",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda {} must be finite and >= 0", self.lambda));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr {} must be > 0", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if self.batch_per_domain == 0 {
            return bad("batch_per_domain must be positive".into());
        }
        if !(self.noise_sigma0 >= 0.0) || !self.noise_sigma0.is_finite() {
            return bad(format!("noise_sigma0 {} must be >= 0", self.noise_sigma0));
        }
        if self.lr_halving_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return bad("lr_halving_epochs must be strictly increasing".into());
        }
        if let Some(e) = self.lr_halving_epochs.iter().find(|e| **e >= self.epochs) {
            if self.epochs > 0 {
                return bad(format!("halving epoch {e} is not below epochs = {}", self.epochs));
            }
        }
        Ok(())
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "lambda" => self.lambda = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "lr_halving_epochs" => {
                self.lr_halving_epochs = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "batch_per_domain" => self.batch_per_domain = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "norm_kind" => self.norm_kind = value.parse()?,
            "regime" => self.regime = value.parse()?,
            "noise_sigma0" => self.noise_sigma0 = parse(key, value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown key `{other}`, expected one of {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are skipped; a key may appear once.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
            let key = key.trim();
            if seen.contains(&key) {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", no + 1)));
            }
            seen.push(key);
            self.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Canonical text form; parsing it reproduces `self` exactly.
    pub fn to_text(&self) -> String {
        let halving: Vec<String> = self.lr_halving_epochs.iter().map(|e| e.to_string()).collect();
        format!(
            "lambda = {}\nepochs = {}\nlr = {}\nmomentum = {}\nlr_halving_epochs = {}\nbatch_per_domain = {}\nseed = {}\nnorm_kind = {}\nregime = {}\nnoise_sigma0 = {}\n",
            self.lambda,
            self.epochs,
            self.lr,
            self.momentum,
            halving.join(","),
            self.batch_per_domain,
            self.seed,
            self.norm_kind,
            self.regime,
            self.noise_sigma0
        )
    }

    pub fn hash(&self) -> String {
        config_hash(&self.to_text())
    }
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_are_valid() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.lr_halving_epochs, vec![9, 16]);
    }

    #[test]
    fn parses_file_with_comments() {
        let c = TrainConfig::from_text(
            "# run\nlambda = 0.3\n\nregime = mixed_no_adapt\nnorm_kind = conventional_bn\nlr_halving_epochs = 2, 4\nepochs = 6\n",
        )
        .unwrap();
        assert_eq!(c.lambda, 0.3);
        assert_eq!(c.regime, Regime::MixedNoAdapt);
        assert_eq!(c.norm_kind, NormKind::ConventionalBn);
        assert_eq!(c.lr_halving_epochs, vec![2, 4]);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "lambda 0.3",
            "speed = 3",
            "lambda = -1",
            "lr = 0",
            "momentum = 1",
            "regime = adapt",
            "lr_halving_epochs = 4, 2",
            "epochs = 5\nlr_halving_epochs = 5",
            "seed = 1\nseed = 2",
        ] {
            assert!(matches!(TrainConfig::from_text(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn empty_halving_list() {
        let c = TrainConfig::from_text("lr_halving_epochs =\nepochs = 0").unwrap();
        assert!(c.lr_halving_epochs.is_empty());
    }

    #[test]
    fn hash_tracks_content() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.lambda = 0.3;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    proptest! {
        #[test]
        fn text_round_trip(lambda in 0.0f64..10.0, lr in 1e-6f64..1.0, m in 0.0f64..0.999, seed: u64, epochs in 3usize..40, bpd in 1usize..8) {
            let c = TrainConfig {
                lambda, lr, momentum: m, seed, epochs, batch_per_domain: bpd,
                lr_halving_epochs: vec![1, 2],
                norm_kind: NormKind::SplitBn,
                regime: Regime::SourceOnly,
                noise_sigma0: 0.05,
            };
            prop_assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c);
        }
    }
}
