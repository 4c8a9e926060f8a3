//! `key = value` configuration with dotted sections, layered defaults < file < flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nlflow_core::ensemble::{EnsembleSettings, InitialShape};
use nlflow_core::flow::Stepper;
use nlflow_core::grid::Grid;
use nlflow_core::kernels::{KernelFamily, KernelSpec};
use nlflow_core::operator::Strategy;
use nlflow_core::potentials::{PotentialFamily, PotentialSpec};
use serde::Serialize;

use crate::error::{CliError, ConfigIssue};
use crate::io::load_field;

/// Every accepted key with its default.
pub const SCHEMA: &[(&str, &str)] = &[
    ("kernel.family", "power-law"),
    ("kernel.s", "1"),
    ("kernel.lambda", "4"),
    ("kernel.scale", "1"),
    ("kernel.truncation", "3"),
    ("kernel.cell", "0.25"),
    ("kernel.epoch", "0.1"),
    ("potential.family", "linear"),
    ("potential.lambda", "4"),
    ("grid.N", "1"),
    ("grid.L", "16"),
    ("grid.M", "256"),
    ("flow.t_start", "0"),
    ("flow.t_end", "1"),
    ("flow.dt", "auto"),
    ("flow.stepper", "euler"),
    ("flow.strategy", "banded"),
    ("flow.sample", "0.0625"),
    ("initial.shape", "bump"),
    ("initial.path", "none"),
    ("ensemble.seeds", "1"),
    ("output.dir", "out"),
    ("output.fields", "false"),
    ("output.verbosity", "summary"),
    ("diagnose.calibration", "none"),
    ("diagnose.k_max", "5"),
    ("diagnose.t0", "0.5,0.25,0.125,0.0625,0.03125,0.015625"),
    ("diagnose.scale", "0.7"),
    ("diagnose.levels", "4"),
    ("diagnose.sample", "0.0078125"),
    ("diagnose.osc_L", "16"),
    ("diagnose.osc_M", "256"),
    ("calibrate.mu", "0.1"),
    ("calibrate.lambda", "0.25"),
    ("denoise.input", "none"),
    ("denoise.time", "0.1"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Validate,
    Run,
    Diagnose,
    Denoise,
    Calibrate,
}

impl Subcommand {
    pub fn name(&self) -> &'static str {
        match self {
            Subcommand::Validate => "validate",
            Subcommand::Run => "run",
            Subcommand::Diagnose => "diagnose",
            Subcommand::Denoise => "denoise",
            Subcommand::Calibrate => "calibrate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Default,
    File,
    Flag,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Setting {
    pub value: String,
    pub source: Source,
}

/// Unvalidated key/value layers.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, Setting>,
    issues: Vec<ConfigIssue>,
}

fn nearest_key(key: &str) -> String {
    SCHEMA
        .iter()
        .map(|(k, _)| (strsim::levenshtein(key, k), *k))
        .min()
        .map(|(_, k)| k.to_string())
        .unwrap_or_default()
}

fn known(key: &str) -> bool {
    SCHEMA.iter().any(|(k, _)| *k == key)
}

impl RawConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses file contents; `[section]` lines prefix the keys that follow.
    pub fn add_text(&mut self, text: &str) {
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(inner) = line.strip_prefix('[') {
                match inner.strip_suffix(']') {
                    Some(name) if !name.trim().is_empty() => section = format!("{}.", name.trim()),
                    _ => self.issues.push(ConfigIssue::Parse {
                        line: n + 1,
                        message: format!("malformed section header `{line}`"),
                    }),
                }
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) if !k.trim().is_empty() => {
                    let key = format!("{section}{}", k.trim());
                    self.insert(key, v.trim(), Source::File);
                }
                _ => self.issues.push(ConfigIssue::Parse {
                    line: n + 1,
                    message: format!("expected `key = value`, found `{line}`"),
                }),
            }
        }
    }

    /// Applies one `--set key=value` override.
    pub fn add_flag(&mut self, assignment: &str) {
        match assignment.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => self.insert(k.trim().to_string(), v.trim(), Source::Flag),
            _ => self.issues.push(ConfigIssue::invalid(
                "--set",
                format!("expected key=value, found `{assignment}`"),
            )),
        }
    }

    pub fn set(&mut self, key: &str, value: &str, source: Source) {
        self.insert(key.to_string(), value, source);
    }

    fn insert(&mut self, key: String, value: &str, source: Source) {
        if !known(&key) {
            self.issues.push(ConfigIssue::UnknownKey {
                suggestion: nearest_key(&key),
                key,
            });
            return;
        }
        self.entries.insert(
            key,
            Setting {
                value: value.to_string(),
                source,
            },
        );
    }

    /// Every key with its effective value and where it came from.
    pub fn resolved(&self) -> BTreeMap<String, Setting> {
        SCHEMA
            .iter()
            .map(|(k, d)| {
                let s = self.entries.get(*k).cloned().unwrap_or(Setting {
                    value: d.to_string(),
                    source: Source::Default,
                });
                (k.to_string(), s)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialSource {
    Shape(InitialShape),
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verbosity {
    Summary,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSettings {
    pub t_start: f64,
    pub t_end: f64,
    pub dt: Option<f64>,
    pub stepper: Stepper,
    pub strategy: Strategy,
    pub sample: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnoseSettings {
    pub calibration: Option<PathBuf>,
    pub k_max: usize,
    pub t0: Vec<f64>,
    pub scale: f64,
    pub levels: usize,
    pub sample: f64,
    pub osc_side: f64,
    pub osc_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub subcommand: Subcommand,
    /// Seed 0; rough families are reseeded per ensemble member.
    pub kernel: KernelSpec,
    /// `None` selects the linear flow.
    pub potential: Option<PotentialSpec>,
    pub grid: Grid,
    pub flow: FlowSettings,
    pub initial: InitialSource,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub write_fields: bool,
    pub verbosity: Verbosity,
    pub diagnose: DiagnoseSettings,
    pub mu: f64,
    pub lambda: f64,
    pub denoise_input: Option<PathBuf>,
    pub denoise_time: f64,
    pub echo: BTreeMap<String, Setting>,
}

/// Parses `a..b` (inclusive) ranges and single seeds separated by commas.
pub fn parse_seed_list(text: &str) -> Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            return Err(format!("empty entry in seed list `{text}`"));
        }
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| format!("bad seed `{a}`"))?;
            let b: u64 = b.trim().parse().map_err(|_| format!("bad seed `{b}`"))?;
            if b < a {
                return Err(format!("empty seed range `{part}`"));
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| format!("bad seed `{part}`"))?);
        }
    }
    Ok(out)
}

struct Reader {
    values: BTreeMap<String, Setting>,
    issues: Vec<ConfigIssue>,
}

fn default_of(key: &str) -> &'static str {
    SCHEMA.iter().find(|(k, _)| *k == key).map(|(_, d)| *d).expect("key in schema")
}

impl Reader {
    fn text(&self, key: &str) -> &str {
        &self.values[key].value
    }

    fn fail(&mut self, key: &str, message: impl Into<String>) {
        self.issues.push(ConfigIssue::invalid(key, message));
    }

    fn float(&mut self, key: &str, check: impl Fn(f64) -> Option<&'static str>) -> f64 {
        let fallback = default_of(key).parse().unwrap_or(f64::NAN);
        match self.text(key).parse::<f64>() {
            Ok(v) if v.is_finite() => match check(v) {
                None => v,
                Some(why) => {
                    self.fail(key, format!("{why}: {v}"));
                    fallback
                }
            },
            _ => {
                let t = self.text(key).to_string();
                self.fail(key, format!("expected a finite number, found `{t}`"));
                fallback
            }
        }
    }

    fn count(&mut self, key: &str, min: usize) -> usize {
        let fallback = default_of(key).parse().unwrap_or(min);
        match self.text(key).parse::<usize>() {
            Ok(v) if v >= min => v,
            _ => {
                let t = self.text(key).to_string();
                self.fail(key, format!("expected an integer >= {min}, found `{t}`"));
                fallback
            }
        }
    }

    fn choice(&mut self, key: &str, options: &[&'static str]) -> &'static str {
        let t = self.text(key).to_string();
        match options.iter().find(|o| **o == t) {
            Some(o) => o,
            None => {
                self.fail(key, format!("expected one of {}, found `{t}`", options.join(", ")));
                options.iter().find(|o| **o == default_of(key)).copied().unwrap_or(options[0])
            }
        }
    }

    fn path(&mut self, key: &str) -> Option<PathBuf> {
        let t = self.text(key);
        if t == "none" || t.is_empty() {
            None
        } else {
            Some(PathBuf::from(t))
        }
    }

    fn existing_path(&mut self, key: &str) -> Option<PathBuf> {
        let p = self.path(key)?;
        if p.is_file() {
            Some(p)
        } else {
            self.fail(key, format!("file `{}` does not exist", p.display()));
            None
        }
    }
}

fn positive(v: f64) -> Option<&'static str> {
    (v <= 0.0).then_some("must be positive")
}

fn unit_open(v: f64) -> Option<&'static str> {
    (!(v > 0.0 && v < 1.0)).then_some("must lie in (0,1)")
}

fn kernel_key(name: &str) -> &'static str {
    match name {
        "order" => "kernel.s",
        "ellipticity" => "kernel.lambda",
        "scale" => "kernel.scale",
        "truncation_radius" => "kernel.truncation",
        "cell_size" => "kernel.cell",
        "epoch" => "kernel.epoch",
        _ => "kernel",
    }
}

impl ExperimentConfig {
    /// Validates every key, collecting all violations before returning.
    pub fn from_raw(raw: &RawConfig, subcommand: Subcommand) -> Result<Self, CliError> {
        let mut r = Reader {
            values: raw.resolved(),
            issues: raw.issues.clone(),
        };

        let family = r.choice("kernel.family", &["power-law", "rough-static", "rough-time-dependent"]);
        let s = r.float("kernel.s", |_| None);
        let lambda = r.float("kernel.lambda", |_| None);
        let scale = r.float("kernel.scale", |_| None);
        let truncation = if r.text("kernel.truncation") == "none" {
            f64::INFINITY
        } else {
            r.float("kernel.truncation", positive)
        };
        let cell = r.float("kernel.cell", |_| None);
        let epoch = r.float("kernel.epoch", |_| None);
        let dimension = match r.text("grid.N") {
            "1" => 1,
            "2" => 2,
            other => {
                let other = other.to_string();
                r.fail("grid.N", format!("dimension must be 1 or 2, found `{other}`"));
                1
            }
        };
        let kernel = KernelSpec {
            dimension,
            order: s,
            ellipticity: lambda,
            truncation_radius: truncation,
            family: match family {
                "power-law" => KernelFamily::PowerLaw { scale },
                "rough-static" => KernelFamily::RoughStatic { cell_size: cell },
                _ => KernelFamily::RoughTimeDependent { cell_size: cell, epoch },
            },
            seed: 0,
        };
        for err in kernel.violations() {
            let key = match &err {
                nlflow_core::Error::InvalidParameter { name, .. } => kernel_key(name),
                _ => "grid.N",
            };
            r.fail(key, err.to_string());
        }

        let pfamily = r.choice("potential.family", &["linear", "quadratic", "smoothed-huber"]);
        let plambda = r.float("potential.lambda", |v| (v <= 1.0).then_some("ellipticity must exceed 1"));
        let potential = match pfamily {
            "quadratic" => Some(PotentialFamily::Quadratic),
            "smoothed-huber" => Some(PotentialFamily::SmoothedHuber),
            _ => None,
        }
        .and_then(|f| PotentialSpec::new(f, plambda).ok());
        if potential.is_some() && !matches!(kernel.family, KernelFamily::PowerLaw { .. }) {
            r.fail(
                "potential.family",
                "the nonlinear flow requires a translation-invariant kernel (kernel.family = power-law)",
            );
        }

        let side = r.float("grid.L", positive);
        let points = r.count("grid.M", nlflow_core::grid::MIN_POINTS_PER_AXIS);
        let grid = match Grid::new(dimension, side, points) {
            Ok(g) => g,
            Err(e) => {
                r.fail("grid.M", e.to_string());
                Grid::new(1, 16.0, 256).expect("default grid")
            }
        };
        if truncation.is_finite() && side <= 2.0 * truncation {
            r.fail(
                "grid.L",
                format!("side length {side} must exceed twice kernel.truncation = {truncation}"),
            );
        }

        let t_start = r.float("flow.t_start", |_| None);
        let t_end = r.float("flow.t_end", |_| None);
        if t_end <= t_start {
            r.fail("flow.t_end", format!("must exceed flow.t_start = {t_start}"));
        }
        let dt = if r.text("flow.dt") == "auto" {
            None
        } else {
            Some(r.float("flow.dt", positive))
        };
        let stepper = match r.choice("flow.stepper", &["euler", "heun"]) {
            "heun" => Stepper::Heun,
            _ => Stepper::Euler,
        };
        let strategy = match r.choice("flow.strategy", &["banded", "dense", "spectral"]) {
            "dense" => Strategy::Dense,
            "spectral" => Strategy::Spectral,
            _ => Strategy::Banded,
        };
        if strategy == Strategy::Spectral && (family != "power-law" || potential.is_some()) {
            r.fail(
                "flow.strategy",
                "spectral needs a power-law kernel and the linear flow",
            );
        }
        let sample = r.float("flow.sample", positive);

        let initial = match r.choice("initial.shape", &["bump", "step", "file"]) {
            "step" => InitialSource::Shape(InitialShape::Step),
            "file" => match r.existing_path("initial.path") {
                Some(p) => {
                    if let Err(e) = load_field(&p, &grid) {
                        r.fail("initial.path", e.to_string());
                    }
                    InitialSource::File(p)
                }
                None => {
                    if r.path("initial.path").is_none() {
                        r.fail("initial.path", "required when initial.shape = file");
                    }
                    InitialSource::Shape(InitialShape::Bump)
                }
            },
            _ => InitialSource::Shape(InitialShape::Bump),
        };

        let seeds = match parse_seed_list(r.text("ensemble.seeds")) {
            Ok(v) if !v.is_empty() => v,
            Ok(_) => {
                r.fail("ensemble.seeds", "at least one seed is required");
                vec![1]
            }
            Err(e) => {
                r.fail("ensemble.seeds", e);
                vec![1]
            }
        };

        let out_dir = PathBuf::from(r.text("output.dir"));
        let write_fields = r.choice("output.fields", &["true", "false"]) == "true";
        let verbosity = match r.choice("output.verbosity", &["summary", "full"]) {
            "full" => Verbosity::Full,
            _ => Verbosity::Summary,
        };

        let calibration = r.existing_path("diagnose.calibration");
        let k_max = r.count("diagnose.k_max", 1);
        let t0 = {
            let text = r.text("diagnose.t0").to_string();
            let parsed: Result<Vec<f64>, _> = text.split(',').map(|t| t.trim().parse::<f64>()).collect();
            match parsed {
                Ok(v) if !v.is_empty() && v.iter().all(|&t| t > 0.0 && t < 2.0) => v,
                _ => {
                    r.fail("diagnose.t0", format!("expected a list of times in (0,2), found `{text}`"));
                    vec![0.5]
                }
            }
        };
        let dscale = r.float("diagnose.scale", unit_open);
        let levels = r.count("diagnose.levels", 3);
        let dsample = r.float("diagnose.sample", positive);
        let osc_side = r.float("diagnose.osc_L", positive);
        let osc_points = r.count("diagnose.osc_M", nlflow_core::grid::MIN_POINTS_PER_AXIS);
        let mu = r.float("calibrate.mu", unit_open);
        let clambda = r.float("calibrate.lambda", unit_open);

        if matches!(subcommand, Subcommand::Diagnose | Subcommand::Calibrate) && family == "power-law" {
            r.fail(
                "kernel.family",
                format!("{} runs a rough-kernel ensemble; use rough-static or rough-time-dependent", subcommand.name()),
            );
        }

        let denoise_input = r.path("denoise.input");
        let denoise_time = r.float("denoise.time", positive);
        if subcommand == Subcommand::Denoise {
            match &denoise_input {
                None => r.fail("denoise.input", "required by denoise"),
                Some(p) if !p.is_file() => r.fail("denoise.input", format!("file `{}` does not exist", p.display())),
                Some(p) => {
                    if let Err(e) = load_field(p, &grid) {
                        r.fail("denoise.input", e.to_string());
                    }
                }
            }
        }

        if !r.issues.is_empty() {
            return Err(CliError::Config(r.issues));
        }
        Ok(Self {
            subcommand,
            kernel,
            potential,
            grid,
            flow: FlowSettings {
                t_start,
                t_end,
                dt,
                stepper,
                strategy,
                sample,
            },
            initial,
            seeds,
            out_dir,
            write_fields,
            verbosity,
            diagnose: DiagnoseSettings {
                calibration,
                k_max,
                t0,
                scale: dscale,
                levels,
                sample: dsample,
                osc_side,
                osc_points,
            },
            mu,
            lambda: clambda,
            denoise_input,
            denoise_time,
            echo: r.values,
        })
    }

    /// Kernel of ensemble member `seed`.
    pub fn kernel_for(&self, seed: u64) -> KernelSpec {
        let mut spec = self.kernel.clone();
        spec.seed = seed;
        spec
    }

    pub fn ensemble(&self) -> EnsembleSettings {
        EnsembleSettings {
            dimension: self.grid.dimension(),
            order: self.kernel.order,
            ellipticity: self.kernel.ellipticity,
            side_length: self.grid.side_length(),
            points: self.grid.points_per_axis(),
            sample_interval: self.diagnose.sample,
            time_dependent: matches!(self.kernel.family, KernelFamily::RoughTimeDependent { .. }),
        }
    }

    pub fn oscillation_ensemble(&self) -> EnsembleSettings {
        EnsembleSettings {
            side_length: self.diagnose.osc_side,
            points: self.diagnose.osc_points,
            ..self.ensemble()
        }
    }
}

/// Command-line layer on top of an optional file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub seeds: Option<String>,
    pub out: Option<PathBuf>,
    pub set: Vec<String>,
}

pub fn parse_config(subcommand: Subcommand, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut raw = RawConfig::new();
    if let Some(path) = &overrides.config {
        let text = read_text(path)?;
        raw.add_text(&text);
    }
    for s in &overrides.set {
        raw.add_flag(s);
    }
    if let Some(seeds) = &overrides.seeds {
        raw.set("ensemble.seeds", seeds, Source::Flag);
    }
    if let Some(out) = &overrides.out {
        raw.set("output.dir", &out.display().to_string(), Source::Flag);
    }
    ExperimentConfig::from_raw(&raw, subcommand)
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config `{}`: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, sub: Subcommand) -> Result<ExperimentConfig, CliError> {
        let mut raw = RawConfig::new();
        raw.add_text(text);
        ExperimentConfig::from_raw(&raw, sub)
    }

    fn issues(text: &str) -> Vec<ConfigIssue> {
        match parse(text, Subcommand::Run) {
            Err(CliError::Config(v)) => v,
            other => panic!("expected config errors, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse(
            "kernel.family = power-law\nkernel.s = 1\nkernel.lambda = 4\ngrid.M = 256\n",
            Subcommand::Run,
        )
        .unwrap();
        assert_eq!(cfg.grid.points_per_axis(), 256);
        assert_eq!(cfg.kernel.order, 1.0);
        assert_eq!(cfg.echo["grid.M"].source, Source::File);
        assert_eq!(cfg.echo["flow.stepper"].source, Source::Default);
        assert_eq!(cfg.echo.len(), SCHEMA.len());
        assert_eq!(cfg.seeds, vec![1]);
    }

    #[test]
    fn order_out_of_range() {
        let v = issues("kernel.s = 2.5\n");
        assert!(v.iter().any(|i| matches!(i, ConfigIssue::Invalid { key, message }
            if key == "kernel.s" && message.contains("order out of (0,2)"))), "{v:?}");
    }

    #[test]
    fn unknown_key_suggests_nearest() {
        let v = issues("kernel.lamda = 4\n");
        assert_eq!(
            v,
            vec![ConfigIssue::UnknownKey {
                key: "kernel.lamda".into(),
                suggestion: "kernel.lambda".into()
            }]
        );
    }

    #[test]
    fn all_violations_are_reported() {
        let v = issues("kernel.s = 3\ngrid.M = 2\nflow.stepper = rk4\nnonsense\nflow.t_end = -1\n");
        assert!(v.len() >= 5, "{v:?}");
        assert!(v.iter().any(|i| matches!(i, ConfigIssue::Parse { line: 4, .. })));
    }

    #[test]
    fn sections_and_flags_layer() {
        let mut raw = RawConfig::new();
        raw.add_text("[kernel]\ns = 0.5\n[grid]\nM = 64\n");
        raw.add_flag("grid.M=128");
        let cfg = ExperimentConfig::from_raw(&raw, Subcommand::Run).unwrap();
        assert_eq!(cfg.kernel.order, 0.5);
        assert_eq!(cfg.grid.points_per_axis(), 128);
        assert_eq!(cfg.echo["grid.M"].source, Source::Flag);
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seed_list("1..3,7").unwrap(), vec![1, 2, 3, 7]);
        assert!(parse_seed_list("3..1").is_err());
        assert!(parse_seed_list("a").is_err());
    }

    #[test]
    fn cross_field_rules() {
        let v = issues("kernel.family = rough-static\npotential.family = smoothed-huber\nflow.strategy = spectral\n");
        assert!(v.iter().any(|i| i.to_string().starts_with("potential.family")));
        assert!(v.iter().any(|i| i.to_string().starts_with("flow.strategy")));
        assert!(matches!(parse("", Subcommand::Diagnose), Err(CliError::Config(_))));
        assert!(matches!(parse("", Subcommand::Denoise), Err(CliError::Config(_))));
        let v = issues("initial.shape = file\n");
        assert!(v.iter().any(|i| i.to_string().starts_with("initial.path")));
    }
}
