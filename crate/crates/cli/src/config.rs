//! Flat `key: value` run configuration.
//!
//! ```text
//! # comments and blank lines are ignored
//! preset: overlapping
//! n_dim: 400
//! sv_1: 0.1, 0.065, 0.03
//! htr_matrix: 0.0, 0.01; 0.01, 0.02
//! ```
//!
//! Lists are comma separated (optionally in brackets); matrix rows are separated
//! by `;`. Keys given on the command line replace those read from the file.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::Serialize;
use transtate_core::ensemble::{energy_grid, EnsembleConfig};
use transtate_core::model::{matched_strength, HtrSpec, ModelConfig, Preset};

use crate::CliError;

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("preset", "isolated | overlapping | custom"),
    ("n_dim", "dimension N of each GOE space"),
    ("k_trans", "number k of transition states"),
    ("lambda", "GOE energy scale"),
    ("channels_1", "number of channels attached to space 1"),
    ("channels_2", "number of channels attached to space 2"),
    (
        "channel_strength_1",
        "v^2 per channel of space 1 (one value or one per channel)",
    ),
    (
        "channel_strength_2",
        "v^2 per channel of space 2 (one value or one per channel)",
    ),
    ("sv_1", "singular values of V1"),
    ("sv_2", "singular values of V2"),
    ("htr", "transition-space levels (diagonal Htr)"),
    ("htr_matrix", "full symmetric Htr, rows separated by ';'"),
    ("realizations", "number of GOE realizations"),
    ("energy_min", "lowest grid energy"),
    ("energy_max", "highest grid energy"),
    ("energy_points", "number of grid energies"),
    ("seed", "master seed of the realization streams"),
    ("model_seed", "seed of the fixed model parts (defaults to seed)"),
    (
        "resample_frames",
        "redraw GOE-side frames and channel matrices per realization",
    ),
    ("workers", "worker threads (does not change results)"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    /// 1-based line in the file; 0 for command-line overrides.
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Parsed but not yet interpreted document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, Entry>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut raw = RawConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once(':') else {
                return Err(parse_error(line_no, content, "expected `key: value`"));
            };
            let (key, value) = (key.trim(), value.trim());
            check_key(line_no, key)?;
            if raw.entries.contains_key(key) {
                return Err(parse_error(line_no, key, "duplicate key"));
            }
            raw.entries.insert(
                key.to_string(),
                Entry {
                    line: line_no,
                    key: key.to_string(),
                    value: value.to_string(),
                },
            );
        }
        Ok(raw)
    }

    /// Adds or replaces a key; used for command-line flags.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), CliError> {
        check_key(0, key)?;
        self.entries.insert(
            key.to_string(),
            Entry {
                line: 0,
                key: key.to_string(),
                value: value.into(),
            },
        );
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key)
    }

    fn scalar<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.entries
            .get(key)
            .map(|e| {
                e.value
                    .parse::<T>()
                    .map_err(|_| parse_error(e.line, key, &format!("cannot parse `{}`", e.value)))
            })
            .transpose()
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        self.entries.get(key).map(|e| parse_list(e, &e.value)).transpose()
    }

    fn matrix(&self, key: &str) -> Result<Option<Vec<Vec<f64>>>, CliError> {
        self.entries
            .get(key)
            .map(|e| e.value.split(';').map(|row| parse_list(e, row)).collect())
            .transpose()
    }

    /// Applies defaults and presets and validates the result.
    pub fn resolve(&self) -> Result<ResolvedConfig, CliError> {
        let preset_name = self.scalar::<String>("preset")?.unwrap_or_else(|| "isolated".into());
        let custom = preset_name == "custom";
        let preset = if custom {
            Preset::Isolated
        } else {
            Preset::from_str(&preset_name).map_err(|_| {
                let line = self.get("preset").map_or(0, |e| e.line);
                parse_error(
                    line,
                    "preset",
                    &format!("unknown preset `{preset_name}` (isolated, overlapping, custom)"),
                )
            })?
        };

        let lambda = self.scalar::<f64>("lambda")?.unwrap_or(1.0);
        let n_dim = self.scalar::<usize>("n_dim")?.unwrap_or(400);
        let k_trans = self.scalar::<usize>("k_trans")?.unwrap_or(3);
        let strengths_1 = self.list("channel_strength_1")?;
        let strengths_2 = self.list("channel_strength_2")?;
        let count = |key: &str, strengths: &Option<Vec<f64>>| -> Result<usize, CliError> {
            Ok(match (self.scalar::<usize>(key)?, strengths) {
                (Some(c), _) => c,
                (None, Some(s)) if s.len() > 1 => s.len(),
                _ => 25,
            })
        };
        let channels_1 = count("channels_1", &strengths_1)?;
        let channels_2 = count("channels_2", &strengths_2)?;

        let mut problems = Vec::new();
        let mut model = ModelConfig::preset_with(preset, n_dim, k_trans, lambda, channels_1, channels_2);
        for (side, strengths, channels, target) in [
            (1, strengths_1, channels_1, &mut model.channel_strengths_1),
            (2, strengths_2, channels_2, &mut model.channel_strengths_2),
        ] {
            match strengths {
                Some(s) if s.len() == 1 => *target = vec![s[0]; channels],
                Some(s) if s.len() == channels => *target = s,
                Some(s) => problems.push(format!(
                    "channel_strength_{side} lists {} values but channels_{side} is {channels}",
                    s.len()
                )),
                None => *target = vec![matched_strength(lambda); channels],
            }
        }
        let sv_1 = self.list("sv_1")?;
        let sv_2 = self.list("sv_2")?;
        let htr = self.list("htr")?;
        let htr_matrix = self.matrix("htr_matrix")?;
        if custom {
            for (key, given) in [("sv_1", sv_1.is_some()), ("sv_2", sv_2.is_some())] {
                if !given {
                    problems.push(format!("preset custom requires {key}"));
                }
            }
            if htr.is_none() && htr_matrix.is_none() {
                problems.push("preset custom requires htr or htr_matrix".to_string());
            }
        }
        if let Some(sv) = sv_1 {
            model.sv_1 = sv;
        }
        if let Some(sv) = sv_2 {
            model.sv_2 = sv;
        }
        match (htr, htr_matrix) {
            (Some(_), Some(_)) => problems.push("give either htr or htr_matrix, not both".to_string()),
            (Some(levels), None) => model.htr_spec = HtrSpec::Eigenvalues(levels),
            (None, Some(rows)) => model.htr_spec = HtrSpec::Matrix(rows),
            (None, None) if !custom => model.apply_preset_levels(preset),
            (None, None) => {}
        }

        let master_seed = self.scalar::<u64>("seed")?.unwrap_or(42);
        model.seed = self.scalar::<u64>("model_seed")?.unwrap_or(master_seed);
        let mut cfg = EnsembleConfig::new(model);
        cfg.master_seed = master_seed;
        cfg.n_realizations = self.scalar::<usize>("realizations")?.unwrap_or(200);
        let e_min = self.scalar::<f64>("energy_min")?.unwrap_or(-0.2);
        let e_max = self.scalar::<f64>("energy_max")?.unwrap_or(0.2);
        let points = self.scalar::<usize>("energy_points")?.unwrap_or(41);
        if e_min > e_max {
            problems.push(format!("energy_min ({e_min}) exceeds energy_max ({e_max})"));
        }
        if points == 0 {
            problems.push("energy_points must be positive".to_string());
        }
        cfg.energy_grid = energy_grid(e_min, e_max, points);
        cfg.resample_frames = self.scalar::<bool>("resample_frames")?.unwrap_or(true);
        cfg.worker_hint = self.scalar::<usize>("workers")?.unwrap_or(1);

        let warnings = match cfg.validate() {
            Ok(w) if problems.is_empty() => w,
            Ok(_) => return Err(CliError::Validation(problems)),
            Err(transtate_core::Error::Validation(errors)) => {
                problems.extend(errors);
                return Err(CliError::Validation(problems));
            }
            Err(e) => return Err(e.into()),
        };
        Ok(ResolvedConfig {
            preset: preset_name,
            ensemble: cfg,
            warnings: warnings.iter().map(ToString::to_string).collect(),
        })
    }
}

/// Fully materialized configuration, echoed into every output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedConfig {
    pub preset: String,
    #[serde(flatten)]
    pub ensemble: EnsembleConfig,
    pub warnings: Vec<String>,
}

/// Parses and resolves a configuration document.
pub fn parse_config(text: &str) -> Result<ResolvedConfig, CliError> {
    RawConfig::parse(text)?.resolve()
}

fn check_key(line: usize, key: &str) -> Result<(), CliError> {
    if KEYS.iter().any(|(k, _)| *k == key) {
        Ok(())
    } else {
        Err(parse_error(line, key, "unknown key"))
    }
}

fn parse_error(line: usize, key: &str, message: &str) -> CliError {
    CliError::Parse {
        line,
        key: key.to_string(),
        message: message.to_string(),
    }
}

fn parse_list(entry: &Entry, text: &str) -> Result<Vec<f64>, CliError> {
    let inner = text.trim().trim_start_matches('[').trim_end_matches(']');
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .map(|x| {
            x.trim().parse::<f64>().map_err(|_| {
                parse_error(
                    entry.line,
                    &entry.key,
                    &format!("cannot parse `{}` as a number", x.trim()),
                )
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = parse_config("").unwrap();
        let e = &cfg.ensemble;
        assert_eq!(cfg.preset, "isolated");
        assert_eq!((e.model.n_dim, e.model.k_trans, e.model.lambda), (400, 3, 1.0));
        assert_eq!(
            (e.model.channel_strengths_1.len(), e.model.channel_strengths_2.len()),
            (25, 25)
        );
        assert_eq!(e.energy_grid.len(), 41);
        assert_eq!((e.energy_grid[0], e.energy_grid[40]), (-0.2, 0.2));
        assert_eq!((e.n_realizations, e.master_seed, e.model.seed), (200, 42, 42));
    }

    #[test]
    fn comments_lists_and_matrices() {
        let text = "# a run\npreset: custom\nk_trans: 2 # two states\nsv_1: [0.1, 0.05]\nsv_2: 0.08, 0.02\nhtr_matrix: 0.0, 0.01; 0.01, 0.03\n";
        let cfg = parse_config(text).unwrap();
        let m = &cfg.ensemble.model;
        assert_eq!(m.sv_1, vec![0.1, 0.05]);
        assert_eq!(m.htr_spec, HtrSpec::Matrix(vec![vec![0.0, 0.01], vec![0.01, 0.03]]));
    }

    #[test]
    fn invalid_dimension_is_named() {
        let Err(CliError::Validation(problems)) = parse_config("n_dim: 0") else {
            panic!()
        };
        assert!(problems.iter().any(|p| p.contains("n_dim")), "{problems:?}");
    }

    #[test]
    fn all_problems_are_listed() {
        let Err(CliError::Validation(problems)) = parse_config("n_dim: 0\nlambda: -1\nrealizations: 1") else {
            panic!()
        };
        assert!(problems.len() >= 3, "{problems:?}");
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = parse_config("n_dim: 10\nfoo: 3").unwrap_err();
        assert_eq!(
            err,
            CliError::Parse {
                line: 2,
                key: "foo".into(),
                message: "unknown key".into()
            }
        );
        assert!(matches!(parse_config("lambda 1"), Err(CliError::Parse { line: 1, .. })));
        assert!(matches!(
            parse_config("lambda: x"),
            Err(CliError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("seed: 1\nseed: 2"),
            Err(CliError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn overlapping_preset_spacing() {
        let cfg = parse_config("preset: overlapping").unwrap();
        let m = &cfg.ensemble.model;
        let levels = m.htr_levels().unwrap();
        let mean_sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        let gamma_typ = (mean_sq(&m.sv_1) + mean_sq(&m.sv_2)) / m.lambda;
        for w in levels.windows(2) {
            assert!((w[1] - w[0] - 0.5 * gamma_typ).abs() < 1e-15);
        }
    }

    #[test]
    fn custom_requires_transition_parameters() {
        let Err(CliError::Validation(problems)) = parse_config("preset: custom") else {
            panic!()
        };
        assert_eq!(problems.len(), 3, "{problems:?}");
        assert!(matches!(parse_config("preset: wide"), Err(CliError::Parse { .. })));
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut raw = RawConfig::parse("seed: 5\nrealizations: 10").unwrap();
        raw.set("seed", "9").unwrap();
        let cfg = raw.resolve().unwrap();
        assert_eq!((cfg.ensemble.master_seed, cfg.ensemble.n_realizations), (9, 10));
        assert!(raw.set("bogus", "1").is_err());
    }

    #[test]
    fn strengths_set_channel_counts() {
        let cfg = parse_config("channel_strength_1: 0.1, 0.2, 0.3\nchannel_strength_2: 0.05").unwrap();
        let m = &cfg.ensemble.model;
        assert_eq!(m.channel_strengths_1, vec![0.1, 0.2, 0.3]);
        assert_eq!(m.channel_strengths_2, vec![0.05; 25]);
        assert!(parse_config("channels_1: 2\nchannel_strength_1: 0.1, 0.2, 0.3").is_err());
    }
}
