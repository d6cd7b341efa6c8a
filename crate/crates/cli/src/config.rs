use std::path::{Path, PathBuf};

use dunetplus::arch::NetworkConfig;
use dunetplus::data::{self, ShapeKind, SegSample, Split};
use dunetplus::train::TrainConfig;
use dunetplus::{Error, Result};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "DUNP_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticData {
    pub kind: ShapeKind,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory of `<id>.png` / `<id>_mask.png` pairs.
    pub dir: Option<PathBuf>,
    pub synthetic: Option<SyntheticData>,
    /// Train / validation / test fractions, split by base id.
    pub split: (f64, f64, f64),
    /// Resize loaded pairs to the network input size instead of rejecting them.
    pub resize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: None,
            synthetic: None,
            split: data::DEFAULT_RATIOS,
            resize: false,
        }
    }
}

/// Everything one `train` or `ablate` run needs. The top-level `seed`
/// replaces the seeds of the nested sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("run"),
            data: DataConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Pretty JSON with a trailing newline; `from_json(to_canonical_json(c)) == c`.
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_canonical_json())?)
    }

    /// Apply `DUNP_SEED` unless a flag already fixed the seed, then push
    /// the seed into the nested sections and validate.
    pub fn resolve(mut self, seed_flag: Option<u64>, output_dir: Option<PathBuf>) -> Result<Self> {
        if let Some(seed) = seed_flag.or(env_seed()?) {
            self.seed = seed;
        }
        if let Some(dir) = output_dir {
            self.output_dir = dir;
        }
        self.network.seed = self.seed;
        self.train.seed = self.seed;
        self.network.validate()?;
        self.train.validate()?;
        match (&self.data.dir, &self.data.synthetic) {
            (Some(_), None) | (None, Some(_)) => Ok(self),
            _ => Err(Error::Config("data needs exactly one of `dir` or `synthetic`".into())),
        }
    }

    pub fn load_corpus(&self) -> Result<Vec<SegSample>> {
        let (h, w) = self.network.input_size;
        let channels = self.network.in_channels;
        if let Some(syn) = &self.data.synthetic {
            return data::generate_synthetic(syn.count, (h, w), syn.kind, channels, self.seed);
        }
        let dir = self.data.dir.as_ref().expect("resolved config has a data source");
        let corpus = data::load_dir(dir, channels)?;
        corpus
            .into_iter()
            .map(|s| {
                if self.data.resize {
                    data::resize_to(&s, (h, w))
                } else if (s.height(), s.width()) != (h, w) {
                    Err(Error::Config(format!(
                        "{} is {}x{}, network expects {h}x{w} (set data.resize to rescale)",
                        s.id,
                        s.height(),
                        s.width()
                    )))
                } else {
                    Ok(s)
                }
            })
            .collect()
    }

    pub fn load_split(&self) -> Result<Split> {
        data::split(&self.load_corpus()?, self.data.split, self.seed)
    }
}

pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_json_roundtrips_byte_identically() {
        let mut c = RunConfig::default();
        c.data.synthetic = Some(SyntheticData {
            kind: ShapeKind::Disk,
            count: 4,
        });
        c.train.lr0 = 1e-3;
        let text = c.to_canonical_json();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_canonical_json(), text);
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        for bad in [
            r#"{"sed": 1}"#,
            r#"{"network": {"levles": 2}}"#,
            r#"{"train": {"lr": 0.1}}"#,
            r#"{"data": {"folder": "x"}}"#,
        ] {
            assert!(RunConfig::from_json(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn top_level_seed_reaches_nested_sections() {
        let c = RunConfig {
            seed: 9,
            data: DataConfig {
                synthetic: Some(SyntheticData {
                    kind: ShapeKind::Rect,
                    count: 2,
                }),
                ..Default::default()
            },
            ..Default::default()
        };
        let r = c.resolve(Some(5), None).unwrap();
        assert_eq!((r.seed, r.network.seed, r.train.seed), (5, 5, 5));
    }

    #[test]
    fn data_source_must_be_unique() {
        assert!(RunConfig::default().resolve(Some(0), None).is_err());
    }
}
