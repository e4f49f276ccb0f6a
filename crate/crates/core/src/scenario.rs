//! Scenario files.
//!
//! A scenario is plain text, one `key = value` per line. Keys are dotted
//! (`overlay.neighbors`), `#` starts a comment, blank lines are ignored.
//! Every key and its default is listed in [`KEYS`]; unknown keys are errors.
//!
//! Grids are declared as `grid.<name> = <key>: v1, v2, ...`. Each grid is an
//! independent sweep of one key around the base settings; a scenario without
//! grids runs a single cell.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::forecast::{load_trace, BandwidthTrace};
use crate::scheduler::SchedulerKind;
use crate::simnet::{
    BandwidthChange, BandwidthClass, OverlayConfig, SimConfig, TraceShape, TraceSpec,
};
use crate::smoother::{SmootherConfig, Strategy};
use crate::stream::{VideoProfile, WindowConfig};

/// `(key, default, description)`. An empty default means "derived", as the
/// description explains.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("name", "", "scenario name, required"),
    ("seeds", "1, 2, 3, 4, 5", "seeds run for every arm and grid value"),
    ("arms", "hybrid+gap", "comma-separated `strategy+scheduler` pairs"),
    ("video.layers", "4", "number of layers"),
    ("video.layer_rate", "250", "kbit/s per layer"),
    ("video.chunk_duration", "1", "seconds per slot"),
    ("video.slots", "400", "stream length in slots"),
    ("smoother.window", "15", "smoothing window in seconds"),
    ("smoother.ewma", "0.25", "EWMA factor of the forecast"),
    ("scheduler.priority", "conservative", "conservative, layer-major or time-major"),
    ("window.playing", "", "playing interval in slots; default twice the smoothing window"),
    ("window.prefetch", "", "prefetch interval in slots; default twice the smoothing window"),
    ("window.resume", "1", "base chunks needed to resume after a stall"),
    ("overlay.peers", "50", "receivers besides the source"),
    ("overlay.neighbors", "8", "target neighbors per peer"),
    ("overlay.max_degree", "30", "degree cap"),
    ("overlay.classes", "0.4:512, 0.3:1024, 0.3:2048", "fraction:download-kbit/s per bandwidth class"),
    ("overlay.upload_ratio", "0.5", "upload as a fraction of download"),
    ("overlay.source_upload", "4096", "source upload in kbit/s"),
    ("overlay.delay", "0", "delivery delay in slots"),
    ("overlay.gossip_period", "1", "slots between buffer-map exchanges"),
    ("overlay.scheduling_period", "1", "slots between scheduling rounds"),
    ("change.interval", "0", "slots between capacity rescalings; 0 disables"),
    ("change.min_scale", "0.5", "lowest rescaling factor"),
    ("change.max_scale", "1.5", "highest rescaling factor"),
    ("trace.mode", "none", "none, generated or file: where receiver download comes from"),
    ("trace.file", "", "CSV trace for mode file, relative to the scenario file"),
    ("trace.min", "100", "generated trace floor in kbit/s"),
    ("trace.max", "900", "generated trace ceiling in kbit/s"),
    ("trace.min_segment", "10", "shortest constant segment in slots"),
    ("trace.max_segment", "40", "longest constant segment in slots"),
    ("trace.noise", "0.1", "relative per-slot jitter"),
    ("sim.capacity_model", "optimistic", "optimistic or fair-share"),
    ("sim.download_budget", "true", "cap requests per period at the download capacity"),
    ("sim.prefetch", "true", "request prefetch chunks with spare forecast bandwidth"),
    ("sim.reliability_history", "10", "scheduling periods behind neighbor reliability"),
    ("sim.startup", "", "slots buffered before playback; default playing plus urgent interval"),
    ("sim.duration", "", "wall-clock slots; default stream length plus startup"),
    ("output.timelines", "false", "write per-peer quality timelines"),
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{}: `{key}`: {message}", where_(*.line))]
    Key { key: String, line: usize, message: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("{0}")]
    Io(String),
}

fn where_(line: usize) -> String {
    if line == 0 {
        "command line".to_string()
    } else {
        format!("line {line}")
    }
}

/// A raw value and the line it came from; line 0 is an override.
#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    line: usize,
}

/// One sweep: a key and the values it takes.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub name: String,
    pub key: String,
    pub values: Vec<String>,
}

/// A strategy and scheduler pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arm {
    pub strategy: Strategy,
    pub scheduler: SchedulerKind,
}

impl Arm {
    pub fn label(&self) -> String {
        format!("{}-{}", self.strategy.name(), self.scheduler.name())
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s.split_once('+').ok_or_else(|| format!("`{s}` is not strategy+scheduler"))?;
        Ok(Arm {
            strategy: a.trim().parse().map_err(|e| format!("{e}"))?,
            scheduler: b.trim().parse().map_err(|e| format!("{e}"))?,
        })
    }
}

/// A parsed scenario file plus overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    entries: BTreeMap<String, Entry>,
    grids: Vec<Grid>,
    base_dir: Option<std::path::PathBuf>,
}

const PRESETS: &[(&str, &str)] = &[
    ("scenario1-bandwidth-change", include_str!("../scenarios/scenario1-bandwidth-change.scn")),
    ("scenario2-smoothing", include_str!("../scenarios/scenario2-smoothing.scn")),
    ("scenario2-scheduling", include_str!("../scenarios/scenario2-scheduling.scn")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _, _)| *k == key)
}

fn parse_list(s: &str) -> Vec<String> {
    s.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect()
}

fn parse_grid(name: &str, value: &str) -> Result<Grid, String> {
    let (target, values) = value.split_once(':').ok_or("expected `<key>: v1, v2, ...`")?;
    let target = target.trim();
    if !known(target) || matches!(target, "name" | "seeds" | "arms") {
        return Err(format!("cannot sweep `{target}`"));
    }
    let values = parse_list(values);
    if values.is_empty() {
        return Err("grid has no values".into());
    }
    Ok(Grid { name: name.to_string(), key: target.to_string(), values })
}

impl Scenario {
    /// Parse and validate; trace files resolve against the working directory.
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s = Self::parse_text(text)?;
        s.validate()?;
        Ok(s)
    }

    fn parse_text(text: &str) -> Result<Self, ScenarioError> {
        let mut entries = BTreeMap::new();
        let mut grids = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| ScenarioError::Syntax { line, message: format!("expected `key = value`, got `{content}`") })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ScenarioError::Syntax { line, message: "empty key".into() });
            }
            let key_err = |message: String| ScenarioError::Key { key: key.to_string(), line, message };
            if let Some(name) = key.strip_prefix("grid.") {
                let grid = parse_grid(name, value).map_err(key_err)?;
                if grids.iter().any(|g: &Grid| g.name == name) {
                    return Err(key_err("duplicate grid".into()));
                }
                grids.push(grid);
                continue;
            }
            if !known(key) {
                return Err(key_err("unknown key".into()));
            }
            if entries.insert(key.to_string(), Entry { value: value.to_string(), line }).is_some() {
                return Err(key_err("duplicate key".into()));
            }
        }
        let s = Scenario { entries, grids, base_dir: None };
        if s.raw("name").is_none_or(str::is_empty) {
            return Err(ScenarioError::Key { key: "name".into(), line: 0, message: "missing".into() });
        }
        Ok(s)
    }

    /// Load a file; trace files resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        let mut s = Self::parse_text(&text)?;
        s.base_dir = path.parent().map(Path::to_path_buf);
        s.validate()?;
        Ok(s)
    }

    /// A bundled preset by name.
    pub fn preset(name: &str) -> Result<Self, ScenarioError> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| ScenarioError::UnknownPreset(name.to_string()))?;
        let mut s = Self::parse_text(text)?;
        s.base_dir = Some(Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios"));
        s.validate()?;
        Ok(s)
    }

    /// A preset name or a path to a scenario file.
    pub fn resolve(spec: &str) -> Result<Self, ScenarioError> {
        if PRESETS.iter().any(|(n, _)| *n == spec) {
            Self::preset(spec)
        } else {
            Self::load(Path::new(spec))
        }
    }

    /// Apply a `key=value` override. `grid.<name>=<key>: v1, v2` adds or
    /// replaces a grid.
    pub fn set(&mut self, assignment: &str) -> Result<(), ScenarioError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| ScenarioError::Syntax { line: 0, message: format!("expected key=value, got `{assignment}`") })?;
        let key = key.trim();
        let key_err = |message: String| ScenarioError::Key { key: key.into(), line: 0, message };
        let mut next = self.clone();
        if let Some(name) = key.strip_prefix("grid.") {
            let grid = parse_grid(name, value).map_err(key_err)?;
            match next.grids.iter_mut().find(|g| g.name == name) {
                Some(g) => *g = grid,
                None => next.grids.push(grid),
            }
        } else if !known(key) {
            return Err(key_err("unknown key".into()));
        } else {
            next.entries.insert(key.to_string(), Entry { value: value.trim().to_string(), line: 0 });
        }
        next.validate()?;
        *self = next;
        Ok(())
    }

    /// Drop all grids, keeping the base settings.
    pub fn clear_grids(&mut self) {
        self.grids.clear();
    }

    /// Keep only the named grid.
    pub fn retain_grid(&mut self, name: &str) {
        self.grids.retain(|g| g.name == name);
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        self.settings()?;
        for g in &self.grids {
            for v in &g.values {
                self.with_value(&g.key, v).settings()?;
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        self.raw("name").unwrap_or("")
    }

    pub fn grids(&self) -> &[Grid] {
        &self.grids
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    /// A copy with `key` set to `value` (as a grid cell).
    pub fn with_value(&self, key: &str, value: &str) -> Scenario {
        let mut s = self.clone();
        let line = self.entries.get(key).map_or(0, |e| e.line);
        s.entries.insert(key.to_string(), Entry { value: value.to_string(), line });
        s
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T, ScenarioError>
    where
        T::Err: fmt::Display,
    {
        let (value, line) = match self.entries.get(key) {
            Some(e) => (e.value.as_str(), e.line),
            None => (KEYS.iter().find(|(k, _, _)| *k == key).map(|(_, d, _)| *d).unwrap_or(""), 0),
        };
        value.parse::<T>().map_err(|e| ScenarioError::Key { key: key.into(), line, message: format!("`{value}`: {e}") })
    }

    fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, ScenarioError>
    where
        T::Err: fmt::Display,
    {
        match self.raw(key) {
            None | Some("") => Ok(None),
            Some(_) => self.get(key).map(Some),
        }
    }

    fn err(&self, key: &str, message: impl Into<String>) -> ScenarioError {
        ScenarioError::Key { key: key.into(), line: self.entries.get(key).map_or(0, |e| e.line), message: message.into() }
    }

    /// Typed settings of the base cell.
    pub fn settings(&self) -> Result<Settings, ScenarioError> {
        let seeds = self
            .raw("seeds")
            .map_or_else(|| parse_list(KEYS[1].1), parse_list)
            .iter()
            .map(|s| s.parse::<u64>().map_err(|e| self.err("seeds", format!("`{s}`: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if seeds.is_empty() {
            return Err(self.err("seeds", "no seeds"));
        }
        let arms = parse_list(self.raw("arms").unwrap_or(KEYS[2].1))
            .iter()
            .map(|a| a.parse::<Arm>().map_err(|e| self.err("arms", e)))
            .collect::<Result<Vec<_>, _>>()?;
        if arms.is_empty() {
            return Err(self.err("arms", "no arms"));
        }

        let layers: usize = self.get("video.layers")?;
        let rate: f64 = self.get("video.layer_rate")?;
        let chunk_duration: f64 = self.get("video.chunk_duration")?;
        let slots: u32 = self.get("video.slots")?;
        let profile = VideoProfile::uniform(layers, rate, chunk_duration, slots).map_err(|e| self.err("video.layers", e.to_string()))?;

        let window_s: f64 = self.get("smoother.window")?;
        let sw = (window_s / chunk_duration).round();
        if !(sw >= 1.0) {
            return Err(self.err("smoother.window", "must cover at least one slot"));
        }
        let mut smoother = SmootherConfig::new(Strategy::Raw, sw as u32);
        smoother.ewma_factor = self.get("smoother.ewma")?;

        let classes = parse_list(self.raw("overlay.classes").unwrap_or(KEYS.iter().find(|k| k.0 == "overlay.classes").unwrap().1))
            .iter()
            .map(|c| {
                let (f, d) = c.split_once(':').ok_or_else(|| self.err("overlay.classes", format!("`{c}` is not fraction:kbps")))?;
                let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| self.err("overlay.classes", format!("`{s}`: {e}")));
                Ok(BandwidthClass { fraction: parse(f)?, download_kbps: parse(d)? })
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;

        let interval: u32 = self.get("change.interval")?;
        let change = (interval > 0).then(|| -> Result<BandwidthChange, ScenarioError> {
            Ok(BandwidthChange { interval, min_scale: self.get("change.min_scale")?, max_scale: self.get("change.max_scale")? })
        });
        let change = change.transpose()?;

        let mode: String = self.get("trace.mode")?;
        let trace = match mode.as_str() {
            "none" => None,
            "generated" => Some(TraceSpec::Generated(TraceShape {
                min_kbps: self.get("trace.min")?,
                max_kbps: self.get("trace.max")?,
                min_segment: self.get("trace.min_segment")?,
                max_segment: self.get("trace.max_segment")?,
                noise: self.get("trace.noise")?,
            })),
            "file" => {
                let file: String = self.get("trace.file")?;
                if file.is_empty() {
                    return Err(self.err("trace.file", "required for trace.mode = file"));
                }
                let path = match &self.base_dir {
                    Some(d) => d.join(&file),
                    None => file.clone().into(),
                };
                let t: BandwidthTrace = load_trace(&path).map_err(|e| self.err("trace.file", format!("{}: {e}", path.display())))?;
                Some(TraceSpec::Fixed(Arc::new(t)))
            }
            other => return Err(self.err("trace.mode", format!("unknown mode `{other}`"))),
        };

        let overlay = OverlayConfig {
            peer_count: self.get("overlay.peers")?,
            neighbors: self.get("overlay.neighbors")?,
            max_degree: self.get("overlay.max_degree")?,
            classes,
            upload_ratio: self.get("overlay.upload_ratio")?,
            source_upload_kbps: self.get("overlay.source_upload")?,
            change,
            trace,
            delay: self.get("overlay.delay")?,
            gossip_period: self.get("overlay.gossip_period")?,
            scheduling_period: self.get("overlay.scheduling_period")?,
        };
        overlay.validate().map_err(|e| self.err("overlay.peers", e.to_string()))?;

        let mut base = SimConfig::new(overlay, profile, smoother, arms[0].scheduler);
        base.priority = self.get("scheduler.priority")?;
        let sw = sw as u32;
        base.window = WindowConfig {
            playing_len: self.get_opt("window.playing")?.unwrap_or(2 * sw),
            urgent_len: sw,
            prefetch_len: self.get_opt("window.prefetch")?.unwrap_or(2 * sw),
            resume_threshold: self.get("window.resume")?,
        };
        base.startup = self.get_opt("sim.startup")?.unwrap_or(base.window.playing_len + base.window.urgent_len);
        base.duration = self.get_opt("sim.duration")?.unwrap_or(slots as u64 + base.startup as u64);
        base.capacity_model = self.get("sim.capacity_model")?;
        base.download_budget = self.get("sim.download_budget")?;
        base.prefetch = self.get("sim.prefetch")?;
        base.reliability_history = self.get("sim.reliability_history")?;
        base.validate().map_err(|e| self.err("sim.duration", e.to_string()))?;

        Ok(Settings { name: self.name().to_string(), seeds, arms, base, timelines: self.get("output.timelines")? })
    }
}

/// Typed settings of one scenario cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub name: String,
    pub seeds: Vec<u64>,
    pub arms: Vec<Arm>,
    /// Configuration shared by all arms; the arm fills in strategy and
    /// scheduler.
    pub base: SimConfig,
    pub timelines: bool,
}

impl Settings {
    pub fn config(&self, arm: Arm) -> SimConfig {
        let mut cfg = self.base.clone();
        cfg.smoother.strategy = arm.strategy;
        cfg.scheduler = arm.scheduler;
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_keys() {
        let s = Scenario::parse("name = t\n").unwrap();
        let st = s.settings().unwrap();
        assert_eq!(st.seeds, vec![1, 2, 3, 4, 5]);
        assert_eq!(st.base.profile.layer_count(), 4);
        assert_eq!(st.base.window.urgent_len, 15);
        assert_eq!(st.base.window.playing_len, 30);
        assert_eq!(st.base.startup, 45);
        assert_eq!(st.base.duration, 445);
        assert_eq!(st.base.overlay.classes.len(), 3);
        assert_eq!(st.arms, vec!["hybrid+gap".parse().unwrap()]);
    }

    #[test]
    fn comments_blank_lines_and_dotted_keys() {
        let s = Scenario::parse("# header\n\nname = x # trailing\nvideo.layers = 8\n  overlay.neighbors=12\n").unwrap();
        let st = s.settings().unwrap();
        assert_eq!(st.name, "x");
        assert_eq!(st.base.profile.layer_count(), 8);
        assert_eq!(st.base.overlay.neighbors, 12);
    }

    #[test]
    fn errors_name_key_and_line() {
        let e = Scenario::parse("name = x\nvideo.layres = 3\n").unwrap_err();
        assert_eq!(e.to_string(), "line 2: `video.layres`: unknown key");
        let e = Scenario::parse("name = x\n\nvideo.layers = many\n").unwrap_err();
        assert!(e.to_string().starts_with("line 3: `video.layers`"), "{e}");
        let e = Scenario::parse("name = x\njust words\n").unwrap_err();
        assert!(e.to_string().starts_with("line 2:"), "{e}");
        let e = Scenario::parse("name = x\nseeds = 1\nseeds = 2\n").unwrap_err();
        assert!(e.to_string().contains("duplicate"), "{e}");
        let e = Scenario::parse("name = x\narms = hybrid+nope\n").unwrap_err();
        assert!(e.to_string().starts_with("line 2: `arms`"), "{e}");
        let e = Scenario::parse("name = x\ngrid.n = overlay.neighbors: 4, x\n").unwrap_err();
        assert!(e.to_string().contains("overlay.neighbors"), "{e}");
        assert!(Scenario::parse("video.layers = 3\n").is_err());
    }

    #[test]
    fn overrides_and_grids() {
        let mut s = Scenario::parse("name = x\ngrid.n = overlay.neighbors: 4, 8\n").unwrap();
        assert_eq!(s.grids()[0].values, vec!["4", "8"]);
        s.set("video.layers=6").unwrap();
        assert_eq!(s.settings().unwrap().base.profile.layer_count(), 6);
        let e = s.set("video.layers=0").unwrap_err();
        assert!(e.to_string().starts_with("command line: `video.layers`"), "{e}");
        let cell = s.with_value("overlay.neighbors", "4").settings().unwrap();
        assert_eq!(cell.base.overlay.neighbors, 4);
    }

    #[test]
    fn presets_parse() {
        for name in preset_names() {
            let s = Scenario::preset(name).unwrap();
            assert_eq!(s.name(), name);
        }
        assert!(matches!(Scenario::preset("nope"), Err(ScenarioError::UnknownPreset(_))));
    }

    #[test]
    fn every_default_parses() {
        let s = Scenario::parse("name = x\n").unwrap();
        for (key, default, _) in KEYS {
            if !default.is_empty() && *key != "name" {
                assert!(s.with_value(key, default).settings().is_ok(), "{key}");
            }
        }
    }
}
