use std::path::PathBuf;

use serde::Serialize;
use transtate_core::ensemble::{
    confront, exactness_check, factorization_check, green_center_check, run_ensemble, vanishing_amplitude_check,
    ConfrontationReport, ExactnessReport, FactorizationReport, GreenCenterReport, TransmissionCurve, VanishingReport,
};
use transtate_core::model::ModelTemplate;
use transtate_core::transition::{channel_resonance_correlator_check, CorrelatorReport};

use crate::config::{RawConfig, ResolvedConfig};
use crate::output::{self, CHECKS_FILE, CSV_FILE, FAILURE_FILE, JSON_FILE};
use crate::CliError;

/// Realizations used by the band-center Green function check.
pub const GREEN_REALIZATIONS: usize = 50;
/// Realizations drawn by `--check-only`.
pub const CHECK_ONLY_REALIZATIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Formats {
    pub csv: bool,
    pub json: bool,
}

impl std::str::FromStr for Formats {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Formats { csv: true, json: false }),
            "json" => Ok(Formats { csv: false, json: true }),
            "both" => Ok(Formats { csv: true, json: true }),
            other => Err(format!("unknown format `{other}` (csv, json, both)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub config_path: Option<PathBuf>,
    pub preset: Option<String>,
    /// `(key, value)` pairs applied after the config file.
    pub overrides: Vec<(String, String)>,
    pub output_dir: PathBuf,
    pub formats: Formats,
    pub check_only: bool,
}

impl RunSpec {
    pub fn resolve(&self) -> Result<ResolvedConfig, CliError> {
        let mut raw = match &self.config_path {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                RawConfig::parse(&text)?
            }
            None => RawConfig::default(),
        };
        if let Some(p) = &self.preset {
            raw.set("preset", p.clone())?;
        }
        for (k, v) in &self.overrides {
            raw.set(k, v.clone())?;
        }
        raw.resolve()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Gate {
    pub name: &'static str,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Checks {
    pub vanishing_amplitude: VanishingReport,
    pub factorization: FactorizationReport,
    pub green_center: GreenCenterReport,
    /// Diagnostics; reported but not gating.
    pub confrontation: ConfrontationReport,
    pub channel_resonance_correlator: CorrelatorReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: ResolvedConfig,
    pub gates: Vec<Gate>,
    pub passed: bool,
    pub checks: Checks,
    pub curve: TransmissionCurve,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOnlyReport {
    pub config: ResolvedConfig,
    pub gates: Vec<Gate>,
    pub passed: bool,
    pub exactness: ExactnessReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct FailureReport {
    pub error: String,
    pub kind: &'static str,
    pub details: Vec<String>,
}

impl FailureReport {
    pub fn from_error(err: &CliError) -> Self {
        let details = match err {
            CliError::Validation(list) => list.clone(),
            _ => Vec::new(),
        };
        FailureReport {
            error: err.to_string(),
            kind: err.kind(),
            details,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub passed: bool,
    pub gates: Vec<Gate>,
    pub written: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

/// Resolves the configuration, runs the sweep (or the invariant suite only)
/// and writes the requested outputs.
pub fn execute(spec: &RunSpec) -> Result<RunOutcome, CliError> {
    let config = spec.resolve()?;
    if spec.check_only {
        return check_only(spec, config);
    }
    let cfg = &config.ensemble;
    let workers = cfg.worker_hint;
    let curve = run_ensemble(cfg)?;
    let template = ModelTemplate::new(&cfg.model)?;
    let checks = Checks {
        vanishing_amplitude: vanishing_amplitude_check(&curve),
        factorization: factorization_check(
            &cfg.model,
            cfg.n_realizations,
            &cfg.energy_grid,
            cfg.master_seed,
            workers,
        )?,
        green_center: green_center_check(
            &cfg.model,
            cfg.n_realizations.min(GREEN_REALIZATIONS),
            cfg.master_seed,
            workers,
        )?,
        confrontation: confront(&curve),
        channel_resonance_correlator: channel_resonance_correlator_check(
            &template,
            cfg.n_realizations,
            0.0,
            cfg.master_seed,
        )?,
    };
    let gates = vec![
        Gate {
            name: "vanishing_amplitude",
            passed: checks.vanishing_amplitude.passes,
        },
        Gate {
            name: "factorization",
            passed: checks.factorization.passes,
        },
        Gate {
            name: "green_center",
            passed: checks.green_center.passes,
        },
    ];
    let passed = gates.iter().all(|g| g.passed);
    let mut written = Vec::new();
    if spec.formats.csv {
        written.push(output::write_file(
            &spec.output_dir,
            CSV_FILE,
            &output::curve_csv(&curve),
        )?);
    }
    if spec.formats.json {
        let report = RunReport {
            config,
            gates: gates.clone(),
            passed,
            checks,
            curve,
        };
        written.push(output::write_file(
            &spec.output_dir,
            JSON_FILE,
            &output::to_json(&report)?,
        )?);
    }
    Ok(RunOutcome { passed, gates, written })
}

fn check_only(spec: &RunSpec, config: ResolvedConfig) -> Result<RunOutcome, CliError> {
    let cfg = &config.ensemble;
    let grid = &cfg.energy_grid;
    let mut energies = vec![grid[0], grid[grid.len() / 2], grid[grid.len() - 1]];
    energies.dedup();
    let exactness = exactness_check(cfg, CHECK_ONLY_REALIZATIONS.min(cfg.n_realizations), &energies)?;
    let gates = vec![Gate {
        name: "exactness",
        passed: exactness.passes,
    }];
    let passed = exactness.passes;
    let report = CheckOnlyReport {
        config,
        gates: gates.clone(),
        passed,
        exactness,
    };
    let written = vec![output::write_file(
        &spec.output_dir,
        CHECKS_FILE,
        &output::to_json(&report)?,
    )?];
    Ok(RunOutcome { passed, gates, written })
}

/// Runs `spec` and maps the outcome to an exit status: 0 when every gate
/// passes, 1 on a gate or runtime failure, 2 on configuration errors. Failures
/// leave a machine-readable report in the output directory and on stderr.
pub fn run(spec: &RunSpec) -> i32 {
    match execute(spec) {
        Ok(outcome) => {
            for g in &outcome.gates {
                eprintln!("{:<20} {}", g.name, if g.passed { "pass" } else { "FAIL" });
            }
            for path in &outcome.written {
                eprintln!("wrote {}", path.display());
            }
            outcome.exit_code()
        }
        Err(err) => {
            let report = FailureReport::from_error(&err);
            if let Ok(json) = output::to_json(&report) {
                eprint!("{json}");
                let _ = output::write_file(&spec.output_dir, FAILURE_FILE, &json);
            }
            err.exit_code()
        }
    }
}
