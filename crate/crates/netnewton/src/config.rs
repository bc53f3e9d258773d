//! Experiment configuration: a flat sectioned key-value format, a typed
//! model over it, and builders that turn a config into graphs, problems,
//! and schedules.
//!
//! Format rules: `[section]` headers, `key = value` lines, full-line
//! comments starting with `#` or `;`, everything trimmed. Values never
//! span lines. Duplicate keys are rejected. Serialization is canonical
//! (all defaults materialized, fixed order), so parse -> serialize ->
//! parse is idempotent.
//!
//! ```text
//! [topology]
//! kind = complete            # complete|ring|path|cyclic_k_regular|erdos_renyi
//! n = 5
//! seed = 0
//! k = 4                      # cyclic_k_regular only
//! er_probability = 0.3       # erdos_renyi only
//!
//! [objective]
//! family = quadratic         # quadratic|logistic
//! weights = 1                # scalar, list, or random_int(lo,hi)
//! targets = 1,2,3,4,5        # quadratic only
//! upsilon = 1.0              # logistic only
//! alpha = 1.0
//! dataset = data/file.libsvm # logistic only
//! data_seed = 0              # partition shuffle / random_int resolution
//!
//! [schedule]
//! mode = scaled              # scaled|unscaled (alias uniform_unscaled)
//! probs = uniform            # uniform | random_dirichlet(seed) | p1,p2,...
//! seed = 1
//!
//! [run]
//! algorithms = async         # comma list of async|sync|gossip
//! eps = auto                 # auto = 0.9 * eps_as_max, or a number
//! sync_k = 1
//! t = 5000
//! seeds = 100
//! record_every = 1
//! slow_agent = 0             # optional, with slow_factor
//! slow_factor = 100
//!
//! [outputs]
//! directory = out
//! formats = csv, plot
//!
//! [sweep]                    # only read by the sweep command
//! topologies = complete, path
//! sizes = 5, 10, 15, 20
//! seeds = 100
//! eps_rel = 0.01
//! t_cap = 200000
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::engine::{ActivationMode, ActivationSchedule, RunConfig, TimeModel};
use crate::newton::TheoryConstants;
use crate::objectives::{partition_uniform, Dataset, LocalObjective, ProblemSpec};
use crate::topology::{build_consensus, build_graph, Graph, GraphKind};
use crate::{Error, Result};

/// Raw parsed form: ordered sections of ordered key-value pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ini {
    pub sections: Vec<IniSection>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IniSection {
    pub name: String,
    pub entries: Vec<(String, String)>,
}

/// Parses the raw sectioned key-value text.
pub fn parse_ini(text: &str) -> Result<Ini> {
    let mut sections: Vec<IniSection> = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(stripped) = line.strip_prefix('[') {
            let name = stripped.strip_suffix(']').ok_or(Error::Parse {
                line: line_no,
                message: "unterminated section header".into(),
            })?;
            let name = name.trim();
            if name.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "empty section name".into(),
                });
            }
            if sections.iter().any(|s| s.name == name) {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("duplicate section [{name}]"),
                });
            }
            sections.push(IniSection {
                name: name.to_string(),
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty key".into(),
            });
        }
        let section = sections.last_mut().ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("key `{key}` outside any section"),
        })?;
        if section.entries.iter().any(|(k, _)| k == key) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("duplicate key `{key}` in section [{}]", section.name),
            });
        }
        section
            .entries
            .push((key.to_string(), value.to_string()));
    }
    Ok(Ini { sections })
}

/// Canonical text for a raw document.
pub fn serialize_ini(ini: &Ini) -> String {
    let mut out = String::new();
    for (i, section) in ini.sections.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "[{}]", section.name);
        for (key, value) in &section.entries {
            let _ = writeln!(out, "{key} = {value}");
        }
    }
    out
}

/// Reads one section's keys with unknown-key detection.
struct SectionReader<'a> {
    name: &'a str,
    entries: &'a [(String, String)],
    consumed: BTreeSet<&'a str>,
}

impl<'a> SectionReader<'a> {
    fn config_err(&self, key: &str, message: impl Into<String>) -> Error {
        Error::Config {
            section: self.name.to_string(),
            key: key.to_string(),
            message: message.into(),
        }
    }

    fn raw(&mut self, key: &'a str) -> Option<&'a str> {
        let found = self
            .entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str());
        if found.is_some() {
            self.consumed.insert(key);
        }
        found
    }

    fn required(&mut self, key: &'a str) -> Result<&'a str> {
        self.raw(key)
            .ok_or_else(|| self.config_err(key, "missing required key"))
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &'a str, value: &str) -> Result<T> {
        value
            .parse()
            .map_err(|_| self.config_err(key, format!("invalid value `{value}`")))
    }

    fn f64_value(&mut self, key: &'a str, value: &str) -> Result<f64> {
        let v: f64 = self.parse(key, value)?;
        if !v.is_finite() {
            return Err(self.config_err(key, format!("non-finite value `{value}`")));
        }
        Ok(v)
    }

    fn optional_u64(&mut self, key: &'a str, default: u64) -> Result<u64> {
        match self.raw(key) {
            Some(v) => self.parse(key, v),
            None => Ok(default),
        }
    }

    fn optional_usize(&mut self, key: &'a str, default: usize) -> Result<usize> {
        match self.raw(key) {
            Some(v) => self.parse(key, v),
            None => Ok(default),
        }
    }

    fn finish(self) -> Result<()> {
        for (key, _) in self.entries {
            if !self.consumed.contains(key.as_str()) {
                return Err(Error::Config {
                    section: self.name.to_string(),
                    key: key.clone(),
                    message: "unknown key".into(),
                });
            }
        }
        Ok(())
    }
}

/// A scalar, an explicit list, or uniform random integers resolved per
/// instance seed.
#[derive(Debug, Clone, PartialEq)]
pub enum ValueSpec {
    Scalar(f64),
    List(Vec<f64>),
    RandomInt { lo: i64, hi: i64 },
}

impl ValueSpec {
    fn parse(reader: &SectionReader<'_>, key: &str, value: &str) -> Result<ValueSpec> {
        if let Some(inner) = value
            .strip_prefix("random_int(")
            .and_then(|rest| rest.strip_suffix(')'))
        {
            let (lo, hi) = inner.split_once(',').ok_or_else(|| {
                reader.config_err(key, "expected random_int(lo,hi)")
            })?;
            let lo: i64 = lo
                .trim()
                .parse()
                .map_err(|_| reader.config_err(key, format!("invalid bound `{lo}`")))?;
            let hi: i64 = hi
                .trim()
                .parse()
                .map_err(|_| reader.config_err(key, format!("invalid bound `{hi}`")))?;
            if lo > hi {
                return Err(reader.config_err(key, format!("empty range {lo}..={hi}")));
            }
            return Ok(ValueSpec::RandomInt { lo, hi });
        }
        if value.contains(',') {
            let list = value
                .split(',')
                .map(|tok| {
                    let tok = tok.trim();
                    tok.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| reader.config_err(key, format!("invalid entry `{tok}`")))
                })
                .collect::<Result<Vec<f64>>>()?;
            return Ok(ValueSpec::List(list));
        }
        let v = value
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| reader.config_err(key, format!("invalid value `{value}`")))?;
        Ok(ValueSpec::Scalar(v))
    }

    fn serialize(&self) -> String {
        match self {
            ValueSpec::Scalar(v) => format!("{v}"),
            ValueSpec::List(vs) => vs
                .iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(","),
            ValueSpec::RandomInt { lo, hi } => format!("random_int({lo},{hi})"),
        }
    }

    /// Materializes one value per agent.
    pub fn resolve(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        match self {
            ValueSpec::Scalar(v) => Ok(vec![*v; n]),
            ValueSpec::List(vs) => {
                if vs.len() != n {
                    return Err(Error::Objective(format!(
                        "list has {} entries for {n} agents",
                        vs.len()
                    )));
                }
                Ok(vs.clone())
            }
            ValueSpec::RandomInt { lo, hi } => {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                Ok((0..n).map(|_| rng.gen_range(*lo..=*hi) as f64).collect())
            }
        }
    }
}

/// Activation probabilities: uniform, explicit, or a flat Dirichlet draw.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbSpec {
    Uniform,
    Explicit(Vec<f64>),
    RandomDirichlet { seed: u64 },
}

impl ProbSpec {
    fn parse(reader: &SectionReader<'_>, key: &str, value: &str) -> Result<ProbSpec> {
        if value == "uniform" {
            return Ok(ProbSpec::Uniform);
        }
        if let Some(inner) = value
            .strip_prefix("random_dirichlet(")
            .and_then(|rest| rest.strip_suffix(')'))
        {
            let seed: u64 = inner
                .trim()
                .parse()
                .map_err(|_| reader.config_err(key, format!("invalid seed `{inner}`")))?;
            return Ok(ProbSpec::RandomDirichlet { seed });
        }
        let list = value
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| reader.config_err(key, format!("invalid entry `{tok}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(ProbSpec::Explicit(list))
    }

    fn serialize(&self) -> String {
        match self {
            ProbSpec::Uniform => "uniform".into(),
            ProbSpec::Explicit(vs) => vs
                .iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(","),
            ProbSpec::RandomDirichlet { seed } => format!("random_dirichlet({seed})"),
        }
    }

    /// Materializes the probability vector for `n` agents.
    pub fn resolve(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            ProbSpec::Uniform => Ok(vec![1.0 / n as f64; n]),
            ProbSpec::Explicit(vs) => {
                if vs.len() != n {
                    return Err(Error::Schedule(format!(
                        "schedule lists {} probabilities for {n} agents",
                        vs.len()
                    )));
                }
                Ok(vs.clone())
            }
            ProbSpec::RandomDirichlet { seed } => {
                let mut rng = ChaCha20Rng::seed_from_u64(*seed);
                for _ in 0..100 {
                    // Normalized unit exponentials: a flat Dirichlet draw.
                    let raw: Vec<f64> = (0..n)
                        .map(|_| -(1.0 - rng.gen::<f64>()).ln())
                        .collect();
                    let total: f64 = raw.iter().sum();
                    let p: Vec<f64> = raw.iter().map(|&v| v / total).collect();
                    if p.iter().all(|&pi| pi > 1e-4) {
                        return Ok(p);
                    }
                }
                Err(Error::Schedule(
                    "could not draw activation probabilities away from zero".into(),
                ))
            }
        }
    }
}

/// The stepsize: a number or the `auto` rule (0.9 times the almost-sure
/// descent bound).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsChoice {
    Auto,
    Fixed(f64),
}

impl EpsChoice {
    fn serialize(&self) -> String {
        match self {
            EpsChoice::Auto => "auto".into(),
            EpsChoice::Fixed(v) => format!("{v}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlgorithmChoice {
    Async,
    Sync,
    Gossip,
}

impl AlgorithmChoice {
    pub fn label(self) -> &'static str {
        match self {
            AlgorithmChoice::Async => "async",
            AlgorithmChoice::Sync => "sync",
            AlgorithmChoice::Gossip => "gossip",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Plot,
}

impl OutputFormat {
    pub fn label(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Plot => "plot",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologySection {
    pub kind: GraphKind,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ObjectiveFamily {
    Quadratic,
    Logistic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSection {
    pub family: ObjectiveFamily,
    pub weights: ValueSpec,
    pub targets: Option<ValueSpec>,
    pub upsilon: f64,
    pub alpha: f64,
    pub dataset: Option<PathBuf>,
    pub data_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSection {
    pub mode: ActivationMode,
    pub probs: ProbSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    pub algorithms: Vec<AlgorithmChoice>,
    pub eps: EpsChoice,
    pub sync_k: usize,
    pub t: usize,
    pub seeds: usize,
    pub record_every: usize,
    pub slow: Option<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputsSection {
    pub directory: PathBuf,
    pub formats: Vec<OutputFormat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSection {
    pub topologies: Vec<GraphKind>,
    pub sizes: Vec<usize>,
    pub seeds: usize,
    pub eps_rel: f64,
    pub t_cap: usize,
}

/// The full typed configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub topology: TopologySection,
    pub objective: ObjectiveSection,
    pub schedule: ScheduleSection,
    pub run: RunSection,
    pub outputs: OutputsSection,
    pub sweep: Option<SweepSection>,
}

fn section<'a>(ini: &'a Ini, name: &str) -> Result<&'a IniSection> {
    ini.sections
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::Config {
            section: name.to_string(),
            key: String::new(),
            message: "missing section".into(),
        })
}

fn parse_kind(reader: &SectionReader<'_>, key: &str, token: &str, k: Option<usize>, er: Option<f64>) -> Result<GraphKind> {
    match token {
        "complete" => Ok(GraphKind::Complete),
        "ring" => Ok(GraphKind::Ring),
        "path" => Ok(GraphKind::Path),
        "cyclic_k_regular" => {
            let k = k.ok_or_else(|| {
                reader.config_err("k", "cyclic_k_regular topology needs `k`")
            })?;
            Ok(GraphKind::CyclicKRegular(k))
        }
        "erdos_renyi" => {
            let p = er.ok_or_else(|| {
                reader.config_err("er_probability", "erdos_renyi topology needs `er_probability`")
            })?;
            Ok(GraphKind::ErdosRenyi(p))
        }
        other => Err(reader.config_err(key, format!("unknown topology kind `{other}`"))),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let ini = parse_ini(text)?;
        for s in &ini.sections {
            if !matches!(
                s.name.as_str(),
                "topology" | "objective" | "schedule" | "run" | "outputs" | "sweep"
            ) {
                return Err(Error::Config {
                    section: s.name.clone(),
                    key: String::new(),
                    message: "unknown section".into(),
                });
            }
        }

        let topology = {
            let sec = section(&ini, "topology")?;
            let mut r = SectionReader {
                name: "topology",
                entries: &sec.entries,
                consumed: BTreeSet::new(),
            };
            let kind_token = r.required("kind")?.to_string();
            let n: usize = {
                let v = r.required("n")?;
                r.parse("n", v)?
            };
            let seed = r.optional_u64("seed", 0)?;
            let k = match r.raw("k") {
                Some(v) => Some(r.parse("k", v)?),
                None => None,
            };
            let er = match r.raw("er_probability") {
                Some(v) => Some(r.f64_value("er_probability", v)?),
                None => None,
            };
            let kind = parse_kind(&r, "kind", &kind_token, k, er)?;
            if n == 0 {
                return Err(r.config_err("n", "need at least one agent"));
            }
            r.finish()?;
            TopologySection { kind, n, seed }
        };

        let objective = {
            let sec = section(&ini, "objective")?;
            let mut r = SectionReader {
                name: "objective",
                entries: &sec.entries,
                consumed: BTreeSet::new(),
            };
            let family = match r.required("family")? {
                "quadratic" => ObjectiveFamily::Quadratic,
                "logistic" => ObjectiveFamily::Logistic,
                other => {
                    return Err(r.config_err("family", format!("unknown family `{other}`")))
                }
            };
            let alpha = match r.raw("alpha") {
                Some(v) => r.f64_value("alpha", v)?,
                None => 1.0,
            };
            let data_seed = r.optional_u64("data_seed", 0)?;
            let (weights, targets, upsilon, dataset) = match family {
                ObjectiveFamily::Quadratic => {
                    let weights = match r.raw("weights") {
                        Some(v) => ValueSpec::parse(&r, "weights", v)?,
                        None => ValueSpec::Scalar(1.0),
                    };
                    let targets_raw = r.required("targets")?;
                    let targets = ValueSpec::parse(&r, "targets", targets_raw)?;
                    if r.raw("upsilon").is_some() {
                        return Err(r.config_err("upsilon", "only meaningful for logistic"));
                    }
                    if r.raw("dataset").is_some() {
                        return Err(r.config_err("dataset", "only meaningful for logistic"));
                    }
                    (weights, Some(targets), 1.0, None)
                }
                ObjectiveFamily::Logistic => {
                    if r.raw("weights").is_some() {
                        return Err(r.config_err("weights", "only meaningful for quadratic"));
                    }
                    if r.raw("targets").is_some() {
                        return Err(r.config_err("targets", "only meaningful for quadratic"));
                    }
                    let upsilon = match r.raw("upsilon") {
                        Some(v) => r.f64_value("upsilon", v)?,
                        None => 1.0,
                    };
                    let dataset = PathBuf::from(r.required("dataset")?);
                    (ValueSpec::Scalar(1.0), None, upsilon, Some(dataset))
                }
            };
            r.finish()?;
            ObjectiveSection {
                family,
                weights,
                targets,
                upsilon,
                alpha,
                dataset,
                data_seed,
            }
        };

        let schedule = {
            let sec = section(&ini, "schedule")?;
            let mut r = SectionReader {
                name: "schedule",
                entries: &sec.entries,
                consumed: BTreeSet::new(),
            };
            let mode = match r.raw("mode").unwrap_or("scaled") {
                "scaled" => ActivationMode::Scaled,
                "unscaled" | "uniform_unscaled" => ActivationMode::Unscaled,
                other => return Err(r.config_err("mode", format!("unknown mode `{other}`"))),
            };
            let probs = match r.raw("probs") {
                Some(v) => ProbSpec::parse(&r, "probs", v)?,
                None => ProbSpec::Uniform,
            };
            if let ProbSpec::Explicit(p) = &probs {
                if p.len() != topology.n {
                    return Err(r.config_err(
                        "probs",
                        format!("{} probabilities for {} agents", p.len(), topology.n),
                    ));
                }
                let total: f64 = p.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(
                        r.config_err("probs", format!("probabilities sum to {total}, expected 1"))
                    );
                }
            }
            let seed = r.optional_u64("seed", 0)?;
            r.finish()?;
            ScheduleSection { mode, probs, seed }
        };

        let run = {
            let sec = section(&ini, "run")?;
            let mut r = SectionReader {
                name: "run",
                entries: &sec.entries,
                consumed: BTreeSet::new(),
            };
            let algorithms = match r.raw("algorithms") {
                None => vec![AlgorithmChoice::Async],
                Some(v) => {
                    let mut parsed = Vec::new();
                    for tok in v.split(',') {
                        let choice = match tok.trim() {
                            "async" => AlgorithmChoice::Async,
                            "sync" => AlgorithmChoice::Sync,
                            "gossip" => AlgorithmChoice::Gossip,
                            other => {
                                return Err(r.config_err(
                                    "algorithms",
                                    format!("unknown algorithm `{other}`"),
                                ))
                            }
                        };
                        if parsed.contains(&choice) {
                            return Err(r.config_err(
                                "algorithms",
                                format!("algorithm `{}` listed twice", choice.label()),
                            ));
                        }
                        parsed.push(choice);
                    }
                    parsed
                }
            };
            let eps = match r.raw("eps").unwrap_or("auto") {
                "auto" => EpsChoice::Auto,
                v => {
                    let parsed = v
                        .parse::<f64>()
                        .ok()
                        .filter(|e| e.is_finite() && *e > 0.0)
                        .ok_or_else(|| r.config_err("eps", format!("invalid stepsize `{v}`")))?;
                    EpsChoice::Fixed(parsed)
                }
            };
            let sync_k = r.optional_usize("sync_k", 1)?;
            let t: usize = {
                let v = r.required("t")?;
                r.parse("t", v)?
            };
            let seeds = r.optional_usize("seeds", 1)?;
            if seeds == 0 {
                return Err(r.config_err("seeds", "need at least one seed"));
            }
            let record_every = r.optional_usize("record_every", 1)?;
            if record_every == 0 {
                return Err(r.config_err("record_every", "must be >= 1"));
            }
            let slow_agent = match r.raw("slow_agent") {
                Some(v) => Some(r.parse::<usize>("slow_agent", v)?),
                None => None,
            };
            let slow_factor = match r.raw("slow_factor") {
                Some(v) => Some(r.f64_value("slow_factor", v)?),
                None => None,
            };
            let slow = match (slow_agent, slow_factor) {
                (Some(a), Some(f)) => {
                    if a >= topology.n {
                        return Err(r.config_err(
                            "slow_agent",
                            format!("agent {a} out of range for {} agents", topology.n),
                        ));
                    }
                    if !(f >= 1.0) {
                        return Err(r.config_err("slow_factor", "must be >= 1"));
                    }
                    Some((a, f))
                }
                (None, None) => None,
                _ => {
                    return Err(r.config_err(
                        "slow_agent",
                        "slow_agent and slow_factor must be set together",
                    ))
                }
            };
            r.finish()?;
            RunSection {
                algorithms,
                eps,
                sync_k,
                t,
                seeds,
                record_every,
                slow,
            }
        };

        let outputs = {
            let sec = section(&ini, "outputs")?;
            let mut r = SectionReader {
                name: "outputs",
                entries: &sec.entries,
                consumed: BTreeSet::new(),
            };
            let directory = PathBuf::from(r.raw("directory").unwrap_or("out"));
            let formats = match r.raw("formats") {
                None => vec![OutputFormat::Csv, OutputFormat::Plot],
                Some(v) => {
                    let mut parsed = Vec::new();
                    for tok in v.split(',') {
                        let fmt = match tok.trim() {
                            "csv" => OutputFormat::Csv,
                            "plot" => OutputFormat::Plot,
                            other => {
                                return Err(
                                    r.config_err("formats", format!("unknown format `{other}`"))
                                )
                            }
                        };
                        if parsed.contains(&fmt) {
                            return Err(r.config_err(
                                "formats",
                                format!("format `{}` listed twice", fmt.label()),
                            ));
                        }
                        parsed.push(fmt);
                    }
                    parsed
                }
            };
            r.finish()?;
            OutputsSection { directory, formats }
        };

        let sweep = if ini.sections.iter().any(|s| s.name == "sweep") {
            let sec = section(&ini, "sweep")?;
            let mut r = SectionReader {
                name: "sweep",
                entries: &sec.entries,
                consumed: BTreeSet::new(),
            };
            let topologies = {
                let v = r.required("topologies")?.to_string();
                let mut kinds = Vec::new();
                for tok in v.split(',') {
                    kinds.push(parse_kind(&r, "topologies", tok.trim(), None, None)?);
                }
                kinds
            };
            let sizes = {
                let v = r.required("sizes")?.to_string();
                let mut sizes = Vec::new();
                for tok in v.split(',') {
                    let n: usize = tok
                        .trim()
                        .parse()
                        .map_err(|_| r.config_err("sizes", format!("invalid size `{tok}`")))?;
                    if n == 0 {
                        return Err(r.config_err("sizes", "sizes must be >= 1"));
                    }
                    sizes.push(n);
                }
                sizes
            };
            let seeds = r.optional_usize("seeds", 30)?;
            let eps_rel = match r.raw("eps_rel") {
                Some(v) => r.f64_value("eps_rel", v)?,
                None => 0.01,
            };
            if !(eps_rel > 0.0 && eps_rel < 1.0) {
                return Err(r.config_err("eps_rel", "must lie in (0, 1)"));
            }
            let t_cap = r.optional_usize("t_cap", 200_000)?;
            r.finish()?;
            Some(SweepSection {
                topologies,
                sizes,
                seeds,
                eps_rel,
                t_cap,
            })
        } else {
            None
        };

        Ok(ExperimentConfig {
            topology,
            objective,
            schedule,
            run,
            outputs,
            sweep,
        })
    }

    /// Loads a config file; dataset paths are resolved relative to the
    /// config file's directory.
    pub fn from_path(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut config = ExperimentConfig::parse(&text)?;
        if let Some(dataset) = &config.objective.dataset {
            if dataset.is_relative() {
                if let Some(parent) = path.parent() {
                    config.objective.dataset = Some(parent.join(dataset));
                }
            }
        }
        Ok(config)
    }

    /// Canonical text with all defaults materialized.
    pub fn serialize(&self) -> String {
        let mut ini = Ini { sections: Vec::new() };
        let mut topo = vec![
            (
                "kind".to_string(),
                match self.topology.kind {
                    GraphKind::Complete => "complete".to_string(),
                    GraphKind::Ring => "ring".to_string(),
                    GraphKind::Path => "path".to_string(),
                    GraphKind::CyclicKRegular(_) => "cyclic_k_regular".to_string(),
                    GraphKind::ErdosRenyi(_) => "erdos_renyi".to_string(),
                    GraphKind::Custom => "custom".to_string(),
                },
            ),
            ("n".to_string(), format!("{}", self.topology.n)),
            ("seed".to_string(), format!("{}", self.topology.seed)),
        ];
        if let GraphKind::CyclicKRegular(k) = self.topology.kind {
            topo.push(("k".to_string(), format!("{k}")));
        }
        if let GraphKind::ErdosRenyi(p) = self.topology.kind {
            topo.push(("er_probability".to_string(), format!("{p}")));
        }
        ini.sections.push(IniSection {
            name: "topology".into(),
            entries: topo,
        });

        let mut obj = vec![(
            "family".to_string(),
            match self.objective.family {
                ObjectiveFamily::Quadratic => "quadratic".to_string(),
                ObjectiveFamily::Logistic => "logistic".to_string(),
            },
        )];
        match self.objective.family {
            ObjectiveFamily::Quadratic => {
                obj.push(("weights".to_string(), self.objective.weights.serialize()));
                if let Some(targets) = &self.objective.targets {
                    obj.push(("targets".to_string(), targets.serialize()));
                }
            }
            ObjectiveFamily::Logistic => {
                obj.push(("upsilon".to_string(), format!("{}", self.objective.upsilon)));
                if let Some(ds) = &self.objective.dataset {
                    obj.push(("dataset".to_string(), ds.display().to_string()));
                }
            }
        }
        obj.push(("alpha".to_string(), format!("{}", self.objective.alpha)));
        obj.push(("data_seed".to_string(), format!("{}", self.objective.data_seed)));
        ini.sections.push(IniSection {
            name: "objective".into(),
            entries: obj,
        });

        ini.sections.push(IniSection {
            name: "schedule".into(),
            entries: vec![
                (
                    "mode".to_string(),
                    match self.schedule.mode {
                        ActivationMode::Scaled => "scaled".to_string(),
                        ActivationMode::Unscaled => "unscaled".to_string(),
                    },
                ),
                ("probs".to_string(), self.schedule.probs.serialize()),
                ("seed".to_string(), format!("{}", self.schedule.seed)),
            ],
        });

        let mut run = vec![
            (
                "algorithms".to_string(),
                self.run
                    .algorithms
                    .iter()
                    .map(|a| a.label())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("eps".to_string(), self.run.eps.serialize()),
            ("sync_k".to_string(), format!("{}", self.run.sync_k)),
            ("t".to_string(), format!("{}", self.run.t)),
            ("seeds".to_string(), format!("{}", self.run.seeds)),
            (
                "record_every".to_string(),
                format!("{}", self.run.record_every),
            ),
        ];
        if let Some((agent, factor)) = self.run.slow {
            run.push(("slow_agent".to_string(), format!("{agent}")));
            run.push(("slow_factor".to_string(), format!("{factor}")));
        }
        ini.sections.push(IniSection {
            name: "run".into(),
            entries: run,
        });

        ini.sections.push(IniSection {
            name: "outputs".into(),
            entries: vec![
                (
                    "directory".to_string(),
                    self.outputs.directory.display().to_string(),
                ),
                (
                    "formats".to_string(),
                    self.outputs
                        .formats
                        .iter()
                        .map(|f| f.label())
                        .collect::<Vec<_>>()
                        .join(","),
                ),
            ],
        });

        if let Some(sweep) = &self.sweep {
            ini.sections.push(IniSection {
                name: "sweep".into(),
                entries: vec![
                    (
                        "topologies".to_string(),
                        sweep
                            .topologies
                            .iter()
                            .map(|k| match k {
                                GraphKind::Complete => "complete",
                                GraphKind::Ring => "ring",
                                GraphKind::Path => "path",
                                GraphKind::CyclicKRegular(_) => "cyclic_k_regular",
                                GraphKind::ErdosRenyi(_) => "erdos_renyi",
                                GraphKind::Custom => "custom",
                            })
                            .collect::<Vec<_>>()
                            .join(","),
                    ),
                    (
                        "sizes".to_string(),
                        sweep
                            .sizes
                            .iter()
                            .map(|n| format!("{n}"))
                            .collect::<Vec<_>>()
                            .join(","),
                    ),
                    ("seeds".to_string(), format!("{}", sweep.seeds)),
                    ("eps_rel".to_string(), format!("{}", sweep.eps_rel)),
                    ("t_cap".to_string(), format!("{}", sweep.t_cap)),
                ],
            });
        }
        serialize_ini(&ini)
    }

    pub fn build_graph(&self) -> Result<Graph> {
        build_graph(self.topology.kind, self.topology.n, self.topology.seed)
    }

    /// Builds the problem for one instance seed. Random-integer targets mix
    /// `data_seed` with the instance seed; explicit values ignore it.
    pub fn build_problem(&self, graph: &Graph, instance_seed: u64) -> Result<ProblemSpec> {
        let n = graph.n();
        let cm = build_consensus(graph);
        let mix = self
            .objective
            .data_seed
            .wrapping_add(instance_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let locals = match self.objective.family {
            ObjectiveFamily::Quadratic => {
                let weights = self.objective.weights.resolve(n, mix)?;
                let targets = self
                    .objective
                    .targets
                    .as_ref()
                    .ok_or_else(|| Error::Config {
                        section: "objective".into(),
                        key: "targets".into(),
                        message: "required for quadratic".into(),
                    })?
                    .resolve(n, mix.wrapping_add(1))?;
                weights
                    .iter()
                    .zip(&targets)
                    .map(|(&c, &b)| {
                        LocalObjective::quadratic(c, nalgebra::DVector::from_element(1, b))
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            ObjectiveFamily::Logistic => {
                let path = self.objective.dataset.as_ref().ok_or_else(|| Error::Config {
                    section: "objective".into(),
                    key: "dataset".into(),
                    message: "required for logistic".into(),
                })?;
                let ds = Dataset::from_path(path)?;
                partition_uniform(&ds, n, self.objective.data_seed, self.objective.upsilon)?
            }
        };
        ProblemSpec::new(locals, self.objective.alpha, cm)
    }

    /// Builds the activation schedule for one run seed.
    pub fn build_schedule(&self, n: usize, seed_index: u64) -> Result<ActivationSchedule> {
        let p = self.schedule.probs.resolve(n)?;
        ActivationSchedule::new(
            p,
            self.schedule.mode,
            self.schedule.seed.wrapping_add(seed_index),
        )
    }

    /// Resolves the stepsize (`auto` means 0.9 times the almost-sure
    /// descent bound) and returns the theory constants evaluated at the
    /// equivalent scaled stepsize.
    pub fn effective_eps(
        &self,
        spec: &ProblemSpec,
        schedule: &ActivationSchedule,
    ) -> Result<(f64, TheoryConstants)> {
        let probe = TheoryConstants::for_problem(spec, schedule.p(), 1.0)?;
        let eps = match (self.run.eps, self.schedule.mode) {
            (EpsChoice::Auto, ActivationMode::Scaled) => 0.9 * probe.eps_as_max,
            // The bound lives in the scaled domain; an unscaled step eps
            // acts on agent i as eps p_i, so dividing by the largest
            // probability keeps every agent inside it.
            (EpsChoice::Auto, ActivationMode::Unscaled) => {
                0.9 * probe.eps_as_max / schedule.pi_max()
            }
            (EpsChoice::Fixed(v), _) => v,
        };
        let scaled_eps = match self.schedule.mode {
            ActivationMode::Scaled => eps,
            // With uniform probabilities the unscaled step eps equals the
            // scaled step eps/n; nonuniform unscaled runs have no exact
            // scaled equivalent, so the smallest probability gives the
            // conservative proxy used for the constants report.
            ActivationMode::Unscaled => eps * schedule.pi_min(),
        };
        let constants = TheoryConstants::for_problem(spec, schedule.p(), scaled_eps)?;
        Ok((eps, constants))
    }

    pub fn time_model(&self, n: usize) -> Result<Option<TimeModel>> {
        match self.run.slow {
            Some((agent, factor)) => Ok(Some(TimeModel::slow_agent(n, agent, factor)?)),
            None => Ok(None),
        }
    }

    /// Assembles the engine configuration for one seed.
    pub fn run_config(
        &self,
        spec: ProblemSpec,
        schedule: ActivationSchedule,
        eps: f64,
    ) -> Result<RunConfig> {
        let time_model = self.time_model(spec.n())?;
        let mut cfg = RunConfig::new(spec, schedule, eps, self.run.t);
        cfg.record_every = self.run.record_every;
        cfg.time_model = time_model;
        Ok(cfg)
    }
}
