//! Routing-event data model, JSONL trace files, manifests and validation.
//!
//! A trace on disk is two files:
//!
//! * an events file, one JSON object per line with exactly the fields
//!   `prompt_id`, `layer`, `expert`, `token_pos` and `token_type`;
//! * a manifest (`manifest.json`) carrying the model configuration, the
//!   declared category set and one `{prompt_id, category}` entry per prompt.
//!
//! Layer and expert indices are 0-based everywhere.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_id: String,
    pub num_layers: usize,
    pub num_experts: usize,
    pub top_k: usize,
}

impl ModelConfig {
    pub fn new(
        model_id: impl Into<String>,
        num_layers: usize,
        num_experts: usize,
        top_k: usize,
    ) -> Result<Self> {
        let config = ModelConfig {
            model_id: model_id.into(),
            num_layers,
            num_experts,
            top_k,
        };
        config.check()?;
        Ok(config)
    }

    /// 16 MoE layers, 64 experts per layer, top-8 routing.
    pub fn olmoe() -> Self {
        ModelConfig {
            model_id: "OLMoE-1B-7B-0125-Instruct".to_string(),
            num_layers: 16,
            num_experts: 64,
            top_k: 8,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::Config("num_layers must be at least 1".into()));
        }
        if self.num_experts == 0 {
            return Err(Error::Config("num_experts must be at least 1".into()));
        }
        if self.top_k == 0 || self.top_k > self.num_experts {
            return Err(Error::Config(format!(
                "top_k must lie in [1, {}], got {}",
                self.num_experts, self.top_k
            )));
        }
        Ok(())
    }

    /// Length of a flattened routing signature.
    pub fn signature_dim(&self) -> usize {
        self.num_layers * self.num_experts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenType {
    Prompt,
    Generation,
}

/// Which tokens contribute to activation counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenFilter {
    Prompt,
    Generation,
    #[default]
    All,
}

impl TokenFilter {
    pub fn accepts(self, token_type: TokenType) -> bool {
        match self {
            TokenFilter::All => true,
            TokenFilter::Prompt => token_type == TokenType::Prompt,
            TokenFilter::Generation => token_type == TokenType::Generation,
        }
    }
}

impl fmt::Display for TokenFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenFilter::Prompt => "prompt",
            TokenFilter::Generation => "generation",
            TokenFilter::All => "all",
        })
    }
}

impl FromStr for TokenFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prompt" => Ok(TokenFilter::Prompt),
            "generation" => Ok(TokenFilter::Generation),
            "all" => Ok(TokenFilter::All),
            other => Err(Error::Config(format!(
                "token filter must be prompt, generation or all, got `{other}`"
            ))),
        }
    }
}

/// One expert activation: expert `expert` ran for token `token_pos` at `layer`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoutingEvent {
    pub prompt_id: String,
    pub layer: u32,
    pub expert: u32,
    pub token_pos: u32,
    pub token_type: TokenType,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TokenCounts {
    pub prompt: usize,
    pub generation: usize,
}

impl TokenCounts {
    pub fn get(&self, token_type: TokenType) -> usize {
        match token_type {
            TokenType::Prompt => self.prompt,
            TokenType::Generation => self.generation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMeta {
    pub prompt_id: String,
    pub category: String,
    /// Distinct token positions per token type, derived from the events.
    #[serde(skip)]
    pub token_counts: TokenCounts,
}

impl PromptMeta {
    pub fn new(prompt_id: impl Into<String>, category: impl Into<String>) -> Self {
        PromptMeta {
            prompt_id: prompt_id.into(),
            category: category.into(),
            token_counts: TokenCounts::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub model: ModelConfig,
    pub categories: Vec<String>,
    pub prompts: Vec<PromptMeta>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceSet {
    pub config: ModelConfig,
    pub categories: Vec<String>,
    pub prompts: Vec<PromptMeta>,
    pub events: Vec<RoutingEvent>,
}

impl TraceSet {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            model: self.config.clone(),
            categories: self.categories.clone(),
            prompts: self.prompts.clone(),
        }
    }

    pub fn prompt_index(&self) -> HashMap<&str, usize> {
        self.prompts
            .iter()
            .enumerate()
            .map(|(i, p)| (p.prompt_id.as_str(), i))
            .collect()
    }

    pub fn prompt(&self, prompt_id: &str) -> Option<&PromptMeta> {
        self.prompts.iter().find(|p| p.prompt_id == prompt_id)
    }

    /// Recomputes `token_counts` on every prompt from the events.
    pub fn refresh_token_counts(&mut self) {
        let index: HashMap<String, usize> = self
            .prompts
            .iter()
            .enumerate()
            .map(|(i, p)| (p.prompt_id.clone(), i))
            .collect();
        let mut seen: HashSet<(usize, u32, TokenType)> = HashSet::new();
        for event in &self.events {
            if let Some(&i) = index.get(&event.prompt_id) {
                seen.insert((i, event.token_pos, event.token_type));
            }
        }
        for prompt in &mut self.prompts {
            prompt.token_counts = TokenCounts::default();
        }
        for (i, _, token_type) in seen {
            let counts = &mut self.prompts[i].token_counts;
            match token_type {
                TokenType::Prompt => counts.prompt += 1,
                TokenType::Generation => counts.generation += 1,
            }
        }
    }
}

#[derive(Deserialize)]
struct RawEvent {
    prompt_id: Option<String>,
    layer: Option<u32>,
    expert: Option<u32>,
    token_pos: Option<u32>,
    token_type: Option<TokenType>,
}

/// Parses one JSONL line. `line_no` is 1-based and only used in errors.
/// Unknown fields are ignored.
pub fn parse_event_line(line: &str, line_no: usize) -> Result<RoutingEvent> {
    let raw: RawEvent = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let missing = |field| Error::Schema {
        line: line_no,
        field,
    };
    Ok(RoutingEvent {
        prompt_id: raw.prompt_id.ok_or_else(|| missing("prompt_id"))?,
        layer: raw.layer.ok_or_else(|| missing("layer"))?,
        expert: raw.expert.ok_or_else(|| missing("expert"))?,
        token_pos: raw.token_pos.ok_or_else(|| missing("token_pos"))?,
        token_type: raw.token_type.ok_or_else(|| missing("token_type"))?,
    })
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    manifest.model.check()?;

    let declared: HashSet<&str> = manifest.categories.iter().map(String::as_str).collect();
    if declared.len() != manifest.categories.len() {
        return Err(Error::Manifest("duplicate category in `categories`".into()));
    }
    let mut ids = HashSet::new();
    for prompt in &manifest.prompts {
        if !ids.insert(prompt.prompt_id.as_str()) {
            return Err(Error::Manifest(format!(
                "duplicate prompt_id `{}`",
                prompt.prompt_id
            )));
        }
        if !declared.contains(prompt.category.as_str()) {
            return Err(Error::Manifest(format!(
                "prompt `{}` has undeclared category `{}`",
                prompt.prompt_id, prompt.category
            )));
        }
    }
    Ok(manifest)
}

pub fn read_events(path: &Path) -> Result<Vec<RoutingEvent>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let lines = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))?;
    lines
        .par_iter()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| parse_event_line(line, i + 1))
        .collect()
}

/// Reads an events file and its manifest. Event order is preserved.
pub fn load_trace(events_path: &Path, manifest_path: &Path) -> Result<TraceSet> {
    let manifest = read_manifest(manifest_path)?;
    let events = read_events(events_path)?;

    let known: HashSet<&str> = manifest
        .prompts
        .iter()
        .map(|p| p.prompt_id.as_str())
        .collect();
    let orphans: BTreeSet<&str> = events
        .iter()
        .map(|e| e.prompt_id.as_str())
        .filter(|id| !known.contains(id))
        .collect();
    if !orphans.is_empty() {
        return Err(Error::Referential {
            orphans: orphans.into_iter().map(str::to_string).collect(),
        });
    }

    let mut trace = TraceSet {
        config: manifest.model,
        categories: manifest.categories,
        prompts: manifest.prompts,
        events,
    };
    trace.refresh_token_counts();
    Ok(trace)
}

pub fn write_trace(trace: &TraceSet, events_path: &Path, manifest_path: &Path) -> Result<()> {
    let file = File::create(events_path).map_err(|e| Error::io(events_path, e))?;
    let mut out = BufWriter::new(file);
    for event in &trace.events {
        serde_json::to_writer(&mut out, event)
            .map_err(|e| Error::io(events_path, e.into()))?;
        out.write_all(b"\n").map_err(|e| Error::io(events_path, e))?;
    }
    out.flush().map_err(|e| Error::io(events_path, e))?;

    let json = serde_json::to_string_pretty(&trace.manifest())
        .map_err(|e| Error::io(manifest_path, e.into()))?;
    std::fs::write(manifest_path, json + "\n").map_err(|e| Error::io(manifest_path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    InvalidConfig,
    DuplicatePrompt,
    UndeclaredCategory,
    UnknownPrompt,
    LayerOutOfRange,
    ExpertOutOfRange,
    DuplicateEvent,
    IncompleteGroup,
    EmptyLayer,
    TokenTypeConflict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub fatal: Vec<Violation>,
    pub warnings: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.fatal.is_empty() && self.warnings.is_empty()
    }

    pub fn has_fatal(&self) -> bool {
        !self.fatal.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.fatal
            .iter()
            .chain(&self.warnings)
            .filter(|v| v.kind == kind)
            .count()
    }

    pub fn summary(&self) -> String {
        format!("{} fatal, {} warnings", self.fatal.len(), self.warnings.len())
    }

    fn fatal(&mut self, kind: ViolationKind, message: String) {
        self.fatal.push(Violation { kind, message });
    }

    fn warn(&mut self, kind: ViolationKind, message: String) {
        self.warnings.push(Violation { kind, message });
    }
}

/// Checks a trace against its model configuration.
///
/// Fatal: invalid configuration, duplicate or undeclared prompts, events
/// pointing at unknown prompts, layer or expert indices out of range.
/// Warnings: duplicate events, `(token, layer)` groups without exactly `top_k`
/// distinct experts, layers with no events for a prompt, and token positions
/// that appear with both token types.
pub fn validate_trace(trace: &TraceSet) -> ValidationReport {
    use ViolationKind::*;

    let mut report = ValidationReport::default();
    let config = &trace.config;
    if let Err(e) = config.check() {
        report.fatal(InvalidConfig, e.to_string());
        return report;
    }

    let declared: HashSet<&str> = trace.categories.iter().map(String::as_str).collect();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, prompt) in trace.prompts.iter().enumerate() {
        if index.insert(prompt.prompt_id.as_str(), i).is_some() {
            report.fatal(
                DuplicatePrompt,
                format!("duplicate prompt_id `{}`", prompt.prompt_id),
            );
        }
        if !declared.contains(prompt.category.as_str()) {
            report.fatal(
                UndeclaredCategory,
                format!(
                    "prompt `{}` has undeclared category `{}`",
                    prompt.prompt_id, prompt.category
                ),
            );
        }
    }

    let layers = config.num_layers as u32;
    let experts = config.num_experts as u32;
    let mut unknown: BTreeSet<&str> = BTreeSet::new();
    let mut seen: HashSet<(usize, u32, u32, u32)> = HashSet::with_capacity(trace.events.len());
    let mut groups: HashMap<(usize, u32, u32), usize> = HashMap::new();
    let mut token_types: HashMap<(usize, u32), TokenType> = HashMap::new();
    let mut conflicts: BTreeSet<(usize, u32)> = BTreeSet::new();
    let mut duplicates = 0usize;

    for (n, event) in trace.events.iter().enumerate() {
        let Some(&p) = index.get(event.prompt_id.as_str()) else {
            unknown.insert(event.prompt_id.as_str());
            continue;
        };
        let mut in_range = true;
        if event.layer >= layers {
            report.fatal(
                LayerOutOfRange,
                format!(
                    "event {}: layer index out of range ({} >= {})",
                    n + 1,
                    event.layer,
                    layers
                ),
            );
            in_range = false;
        }
        if event.expert >= experts {
            report.fatal(
                ExpertOutOfRange,
                format!(
                    "event {}: expert index out of range ({} >= {})",
                    n + 1,
                    event.expert,
                    experts
                ),
            );
            in_range = false;
        }
        if !in_range {
            continue;
        }
        match token_types.get(&(p, event.token_pos)) {
            Some(&t) if t != event.token_type => {
                conflicts.insert((p, event.token_pos));
            }
            Some(_) => {}
            None => {
                token_types.insert((p, event.token_pos), event.token_type);
            }
        }
        if !seen.insert((p, event.token_pos, event.layer, event.expert)) {
            duplicates += 1;
            continue;
        }
        *groups.entry((p, event.token_pos, event.layer)).or_default() += 1;
    }

    for id in unknown {
        report.fatal(
            UnknownPrompt,
            format!("events reference unknown prompt `{id}`"),
        );
    }
    if duplicates > 0 {
        report.warn(
            DuplicateEvent,
            format!("{duplicates} duplicate (prompt, token, layer, expert) event(s) ignored"),
        );
    }

    let mut incomplete: Vec<_> = groups
        .iter()
        .filter(|(_, &n)| n != config.top_k)
        .map(|(&key, &n)| (key, n))
        .collect();
    incomplete.sort_unstable();
    for ((p, token, layer), n) in incomplete {
        report.warn(
            IncompleteGroup,
            format!(
                "incomplete routing group: prompt `{}` token {} layer {} has {} of {} experts",
                trace.prompts[p].prompt_id, token, layer, n, config.top_k
            ),
        );
    }

    let mut covered: HashSet<(usize, u32)> = HashSet::new();
    for &(p, _, layer) in groups.keys() {
        covered.insert((p, layer));
    }
    for (p, prompt) in trace.prompts.iter().enumerate() {
        let present = (0..layers).filter(|&l| covered.contains(&(p, l))).count();
        if present == 0 {
            report.warn(
                EmptyLayer,
                format!("prompt `{}` has no routing events", prompt.prompt_id),
            );
            continue;
        }
        for layer in (0..layers).filter(|&l| !covered.contains(&(p, l))) {
            report.warn(
                EmptyLayer,
                format!("prompt `{}` has no events at layer {layer}", prompt.prompt_id),
            );
        }
    }

    for (p, token) in conflicts {
        report.warn(
            TokenTypeConflict,
            format!(
                "prompt `{}` token {} recorded with both token types",
                trace.prompts[p].prompt_id, token
            ),
        );
    }

    report
}
