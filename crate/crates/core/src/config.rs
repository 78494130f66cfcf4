//! Run configuration in a small INI dialect:
//!
//! ```text
//! # comment
//! seed = 1
//!
//! [source]
//! epochs = 30
//! beta = 0.99998    # or `none` for the unweighted loss
//! ```
//!
//! Every key is optional; absent keys keep their defaults. Unknown sections
//! and keys are rejected, and errors carry the offending line number.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, IoContext, Result};
use crate::loss::WeightNorm;
use crate::network::Architecture;
use crate::pipeline::{PhaseConfig, SweepConfig};
use crate::probe::{Crop, ProbeConfig};
use crate::synth::{Concept, GenConfig};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "FAUD_SEED";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeSettings {
    pub iterations: usize,
    pub svm: ProbeConfig,
    pub concepts: Vec<Concept>,
    pub crop: Crop,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            iterations: 500,
            svm: ProbeConfig::default(),
            concepts: vec![Concept::C2, Concept::C3],
            crop: Crop::Full,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    /// Drives data generation, initialisation, shuffling, augmentation and
    /// probe folds.
    pub seed: u64,
    pub data_dir: PathBuf,
    /// Generation settings; `generation.seed` always mirrors `seed`.
    pub generation: GenConfig,
    pub arch: Architecture,
    pub source: PhaseConfig,
    pub target: PhaseConfig,
    pub retrain: PhaseConfig,
    pub probe: ProbeSettings,
    /// Not part of manifests, so identical runs into different directories
    /// produce identical files.
    #[serde(skip)]
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            data_dir: PathBuf::from("out/data"),
            generation: GenConfig {
                seed: 1,
                ..GenConfig::default()
            },
            arch: Architecture::default(),
            source: PhaseConfig::source(),
            target: PhaseConfig::target(),
            retrain: PhaseConfig::retrain(),
            probe: ProbeSettings::default(),
            output_dir: PathBuf::from("out/run"),
        }
    }
}

impl RunConfig {
    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            seed: self.seed,
            ..self.generation.clone()
        }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            arch: self.arch.clone(),
            source: self.source.clone(),
            target: self.target.clone(),
            retrain: self.retrain.clone(),
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gen_config().validate()?;
        self.arch.validate()?;
        for p in [&self.source, &self.target, &self.retrain] {
            p.validate()?;
        }
        self.probe.svm.validate()?;
        if self.probe.iterations == 0 || self.probe.concepts.is_empty() {
            return Err(Error::InvalidArgument(
                "probe needs iterations > 0 and at least one concept".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_path(path)?;
        Self::parse(&text, path)
    }

    /// Read `path` if given, else defaults; then apply `FAUD_SEED`.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.seed = v.trim().parse().map_err(|_| {
                Error::InvalidArgument(format!("{SEED_ENV}={v} is not an unsigned integer"))
            })?;
            cfg.generation.seed = cfg.seed;
        }
        Ok(cfg)
    }

    /// `origin` only labels error messages.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: String| Error::Config {
                path: origin.to_path_buf(),
                line,
                msg,
            };
            let content = raw.split(['#', ';']).next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err("unterminated section header".into()))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(err(format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{content}`")))?;
            cfg.set(&section, key.trim(), value.trim()).map_err(err)?;
        }
        cfg.generation.seed = cfg.seed;
        cfg.validate().map_err(|e| Error::Config {
            path: origin.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> std::result::Result<(), String> {
        let unknown = || Err(format!("unknown key `{key}` in [{section}]"));
        match section {
            "" => match key {
                "seed" => self.seed = num(v)?,
                _ => return unknown(),
            },
            "data" => {
                let g = &mut self.generation;
                match key {
                    "dir" => self.data_dir = PathBuf::from(v),
                    "n_per_class" => g.n_per_class = num(v)?,
                    "test_per_class" => g.test_per_class = num(v)?,
                    "target_per_class" => g.target_per_class = num(v)?,
                    "n_probe" => g.n_probe = num(v)?,
                    "noise_sigma" => g.noise_sigma = nonneg(v)?,
                    "target_noise_sigma" => g.target_noise_sigma = nonneg(v)?,
                    _ => return unknown(),
                }
            }
            "architecture" => match key {
                "input_size" => self.arch.input_size = num(v)?,
                "input_channels" => self.arch.input_channels = num(v)?,
                "conv_widths" => self.arch.conv_widths = list(v, num)?,
                "pooled" => self.arch.pooled = list(v, boolean)?,
                _ => return unknown(),
            },
            "source" | "target" | "retrain" => {
                let p = match section {
                    "source" => &mut self.source,
                    "target" => &mut self.target,
                    _ => &mut self.retrain,
                };
                set_phase(p, key, v).unwrap_or_else(&unknown)?;
            }
            "probe" => match key {
                "iterations" => self.probe.iterations = num(v)?,
                "lambda" => self.probe.svm.lambda = positive(v)?,
                "epochs" => self.probe.svm.epochs = num(v)?,
                "concepts" => {
                    self.probe.concepts =
                        list(v, |s| s.parse::<Concept>().map_err(|e| e.to_string()))?
                }
                "crop" => self.probe.crop = v.parse().map_err(|e: Error| e.to_string())?,
                _ => return unknown(),
            },
            "output" => match key {
                "dir" => self.output_dir = PathBuf::from(v),
                _ => return unknown(),
            },
            _ => return unknown(),
        }
        Ok(())
    }

    /// Serialise every setting; `parse(to_ini())` gives back an equal config.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let g = &self.generation;
        let _ = writeln!(s, "\n[data]");
        let _ = writeln!(s, "dir = {}", self.data_dir.display());
        let _ = writeln!(s, "n_per_class = {}", g.n_per_class);
        let _ = writeln!(s, "test_per_class = {}", g.test_per_class);
        let _ = writeln!(s, "target_per_class = {}", g.target_per_class);
        let _ = writeln!(s, "n_probe = {}", g.n_probe);
        let _ = writeln!(s, "noise_sigma = {}", g.noise_sigma);
        let _ = writeln!(s, "target_noise_sigma = {}", g.target_noise_sigma);
        let a = &self.arch;
        let _ = writeln!(s, "\n[architecture]");
        let _ = writeln!(s, "input_size = {}", a.input_size);
        let _ = writeln!(s, "input_channels = {}", a.input_channels);
        let _ = writeln!(s, "conv_widths = {}", join(&a.conv_widths));
        let _ = writeln!(s, "pooled = {}", join(&a.pooled));
        for (name, p) in [
            ("source", &self.source),
            ("target", &self.target),
            ("retrain", &self.retrain),
        ] {
            let _ = writeln!(s, "\n[{name}]");
            let _ = writeln!(s, "epochs = {}", p.epochs);
            let _ = writeln!(s, "batch_size = {}", p.batch_size);
            let _ = writeln!(s, "learning_rate = {}", p.learning_rate);
            let _ = writeln!(s, "gamma = {}", p.gamma);
            match p.beta {
                Some(b) => writeln!(s, "beta = {b}"),
                None => writeln!(s, "beta = none"),
            }
            .ok();
            let norm = match p.weight_norm {
                WeightNorm::Mean => "mean",
                WeightNorm::None => "none",
            };
            let _ = writeln!(s, "weight_norm = {norm}");
            let aug = &p.augment;
            let _ = writeln!(s, "rotation_deg = {}", aug.rotation_deg);
            let _ = writeln!(s, "width_shift = {}", aug.width_shift);
            let _ = writeln!(s, "height_shift = {}", aug.height_shift);
            let _ = writeln!(s, "shear = {}", aug.shear);
            let _ = writeln!(s, "zoom = {}", aug.zoom);
            let _ = writeln!(s, "horizontal_flip = {}", aug.horizontal_flip);
        }
        let p = &self.probe;
        let _ = writeln!(s, "\n[probe]");
        let _ = writeln!(s, "iterations = {}", p.iterations);
        let _ = writeln!(s, "lambda = {}", p.svm.lambda);
        let _ = writeln!(s, "epochs = {}", p.svm.epochs);
        let _ = writeln!(s, "concepts = {}", join(&p.concepts));
        let crop = match p.crop {
            Crop::Full => "full".to_string(),
            Crop::DropBottom(n) => format!("bottom:{n}"),
        };
        let _ = writeln!(s, "crop = {crop}");
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = {}", self.output_dir.display());
        s
    }
}

const SECTIONS: [&str; 7] = [
    "data",
    "architecture",
    "source",
    "target",
    "retrain",
    "probe",
    "output",
];

fn set_phase(p: &mut PhaseConfig, key: &str, v: &str) -> Option<std::result::Result<(), String>> {
    let r = (|| {
        match key {
            "epochs" => p.epochs = num(v)?,
            "batch_size" => p.batch_size = num(v)?,
            "learning_rate" => p.learning_rate = positive(v)?,
            "gamma" => p.gamma = nonneg(v)?,
            "beta" => {
                p.beta = match v {
                    "none" => None,
                    _ => {
                        let b: f64 = num(v)?;
                        if !(0.0..1.0).contains(&b) {
                            return Err(format!("beta = {b} must lie in [0, 1)"));
                        }
                        Some(b)
                    }
                }
            }
            "weight_norm" => {
                p.weight_norm = match v {
                    "mean" => WeightNorm::Mean,
                    "none" => WeightNorm::None,
                    _ => return Err(format!("weight_norm must be `mean` or `none`, got `{v}`")),
                }
            }
            "rotation_deg" => p.augment.rotation_deg = nonneg(v)?,
            "width_shift" => p.augment.width_shift = nonneg(v)?,
            "height_shift" => p.augment.height_shift = nonneg(v)?,
            "shear" => p.augment.shear = nonneg(v)?,
            "zoom" => p.augment.zoom = nonneg(v)?,
            "horizontal_flip" => p.augment.horizontal_flip = boolean(v)?,
            _ => return Err(String::new()),
        }
        Ok(())
    })();
    match r {
        Err(e) if e.is_empty() => None,
        other => Some(other),
    }
}

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse()
        .map_err(|_| format!("cannot parse `{v}` as {}", std::any::type_name::<T>()))
}

fn nonneg(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = num(v)?;
    if !(x >= 0.0 && x.is_finite()) {
        return Err(format!("{x} must be >= 0"));
    }
    Ok(x)
}

fn positive(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = num(v)?;
    if !(x > 0.0 && x.is_finite()) {
        return Err(format!("{x} must be > 0"));
    }
    Ok(x)
}

fn boolean(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("`{v}` is not a boolean")),
    }
}

fn list<T>(
    v: &str,
    f: impl Fn(&str) -> std::result::Result<T, String>,
) -> std::result::Result<Vec<T>, String> {
    v.split(',').map(|s| f(s.trim())).collect()
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<RunConfig> {
        RunConfig::parse(s, Path::new("test.ini"))
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.source.gamma, 5.0);
        assert_eq!(c.source.beta, Some(0.99998));
        assert_eq!(c.source.learning_rate, 0.01);
        assert_eq!(c.target.gamma, 2.0);
    }

    #[test]
    fn beta_one_is_rejected_with_line() {
        let e = parse("seed = 3\n[source]\n\nbeta = 1.0\n").unwrap_err();
        match e {
            Error::Config { line, msg, .. } => {
                assert_eq!(line, 4);
                assert!(msg.contains("beta"), "{msg}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_keys_and_sections() {
        assert!(matches!(
            parse("[source]\nmomentum = 0.9"),
            Err(Error::Config { line: 2, .. })
        ));
        assert!(matches!(
            parse("[optimizer]"),
            Err(Error::Config { line: 1, .. })
        ));
        assert!(matches!(
            parse("seed = x"),
            Err(Error::Config { line: 1, .. })
        ));
        assert!(matches!(
            parse("learning_rate = 0.1"),
            Err(Error::Config { line: 1, .. })
        ));
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.seed = 42;
        c.generation.seed = 42;
        c.target.beta = Some(0.999);
        c.retrain.augment.horizontal_flip = false;
        c.probe.crop = Crop::DropBottom(24);
        c.probe.concepts = vec![Concept::C4];
        c.arch.conv_widths = vec![4, 8, 8, 16, 16];
        c.generation.noise_sigma = 0.1 + 0.2;
        let again = parse(&c.to_ini()).unwrap();
        assert_eq!(again, c);
        assert_eq!(parse(&again.to_ini()).unwrap(), c);
    }

    #[test]
    fn comments_and_whitespace() {
        let c =
            parse("# top\n  seed=9 ; trailing\n[probe]\n concepts = C2 , cheek-dimple\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.probe.concepts, vec![Concept::C2, Concept::C3]);
    }
}
