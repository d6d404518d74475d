//! Scripted experiments: baseline, attack, response, synonym series,
//! multiple parasites and the four-state toy.
//!
//! A scenario is described by a TOML file:
//!
//! ```toml
//! kind = "attack"            # baseline | attack | respond | synonym_series | multi_parasite | toy
//! seed = 7                   # drives every random choice; overrides ga.seed
//! parasites = 1              # parasites appended by attack and multi_parasite
//! restarts = 1               # independent GA runs, best kept
//! type_counts = [1, 2, 4]    # synonym_series variants
//! snapshot = "base.json"     # input population of attack, respond, multi_parasite
//! output_dir = "out"
//!
//! [dimensions]
//! agents = 256               # N
//! states = 16                # M, equally likely
//! host_symbols = 16
//! parasite_symbols = 32      # alphabet after the attack widens it
//!
//! [ga]                       # any GaConfig field
//! population_size = 200
//! ```
//!
//! Omitted keys take the preset of the scenario kind ([`ScenarioConfig::preset`]).
//! Every run is a pure function of its configuration.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, DistanceMatrix, MeasureReport, StructureReport};
use crate::optimizer::{self, GaConfig, GenerationRecord, Goal, RunHistory};
use crate::popmodel::{self, snapshot, toy, AgentId, Code, Environment, InteractionGraph, Population};
use crate::probkit::Dist2;
use crate::reportkit::{self, Embedding2D, SummaryRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Baseline,
    Attack,
    Respond,
    SynonymSeries,
    MultiParasite,
    Toy,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Baseline => "baseline",
            ScenarioKind::Attack => "attack",
            ScenarioKind::Respond => "respond",
            ScenarioKind::SynonymSeries => "synonym_series",
            ScenarioKind::MultiParasite => "multi_parasite",
            ScenarioKind::Toy => "toy",
        }
    }

    fn needs_snapshot(self) -> bool {
        matches!(
            self,
            ScenarioKind::Attack | ScenarioKind::Respond | ScenarioKind::MultiParasite
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dimensions {
    pub agents: usize,
    pub states: usize,
    pub host_symbols: usize,
    pub parasite_symbols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub parasites: usize,
    pub restarts: usize,
    pub type_counts: Vec<usize>,
    pub dimensions: Dimensions,
    pub ga: GaConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<PathBuf>,
    /// Not echoed in manifests, so moving outputs keeps them identical.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

impl ScenarioConfig {
    /// Defaults of a scenario kind, tuned for the 256-agent, 16-state,
    /// 16-symbol setting.
    pub fn preset(kind: ScenarioKind) -> Self {
        let attack_ga = GaConfig {
            population_size: 200,
            max_generations: 5000,
            stall_generations: 1000,
            init_link_prob: Some(0.5),
            ..GaConfig::default()
        };
        let ga = match kind {
            ScenarioKind::Baseline => GaConfig {
                population_size: 50,
                max_generations: 80_000,
                stall_generations: 5000,
                mutation_rate: Some(1e-4),
                ..GaConfig::default()
            },
            ScenarioKind::Attack | ScenarioKind::MultiParasite => attack_ga,
            ScenarioKind::SynonymSeries => GaConfig {
                stall_generations: 300,
                ..attack_ga
            },
            ScenarioKind::Respond => GaConfig {
                population_size: 50,
                max_generations: 40_000,
                stall_generations: 3000,
                ..GaConfig::default()
            },
            ScenarioKind::Toy => GaConfig::default(),
        };
        let dimensions = match kind {
            ScenarioKind::SynonymSeries => Dimensions {
                agents: 64,
                states: 16,
                host_symbols: 16,
                parasite_symbols: 64,
            },
            ScenarioKind::Toy => Dimensions {
                agents: 2,
                states: 4,
                host_symbols: 2,
                parasite_symbols: 2,
            },
            _ => Dimensions {
                agents: 256,
                states: 16,
                host_symbols: 16,
                parasite_symbols: 32,
            },
        };
        ScenarioConfig {
            kind,
            seed: 0,
            parasites: if kind == ScenarioKind::MultiParasite { 8 } else { 1 },
            restarts: 1,
            type_counts: vec![1, 2, 4],
            dimensions,
            ga,
            snapshot: None,
            output_dir: None,
        }
    }

    /// Parses a configuration, filling omitted keys from the preset of its
    /// kind. The top-level seed replaces `ga.seed`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let kind: ScenarioKind = user
            .get("kind")
            .ok_or_else(|| Error::Config("missing key `kind`".into()))?
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let preset = toml::Table::try_from(Self::preset(kind)).map_err(|e| Error::Config(e.to_string()))?;
        let merged = merge(preset, user);
        let mut cfg: ScenarioConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.ga.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.ga.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let d = &self.dimensions;
        if d.agents == 0 || d.states == 0 || d.host_symbols == 0 || d.parasite_symbols == 0 {
            return bad("dimensions must be positive".into());
        }
        if matches!(
            self.kind,
            ScenarioKind::Attack | ScenarioKind::MultiParasite | ScenarioKind::SynonymSeries
        ) && d.parasite_symbols < d.host_symbols
        {
            return bad(format!(
                "parasite_symbols {} is below host_symbols {}",
                d.parasite_symbols, d.host_symbols
            ));
        }
        if self.restarts == 0 {
            return bad("restarts must be positive".into());
        }
        if matches!(self.kind, ScenarioKind::Attack | ScenarioKind::MultiParasite) && self.parasites == 0 {
            return bad("an attack needs at least one parasite".into());
        }
        if self.kind == ScenarioKind::SynonymSeries {
            if self.type_counts.is_empty() || self.type_counts.iter().any(|&t| t == 0 || t > d.agents) {
                return bad("type_counts must lie in 1..=agents".into());
            }
            if self.parasites == 0 {
                return bad("the synonym series needs at least one parasite".into());
            }
        }
        self.ga.validate()
    }

    fn ga(&self) -> GaConfig {
        GaConfig {
            seed: self.seed,
            ..self.ga.clone()
        }
    }
}

fn merge(mut base: toml::Table, over: toml::Table) -> toml::Table {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                let merged = merge(std::mem::take(b), o);
                *b = merged;
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}

/// Written beside every scenario's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub config: ScenarioConfig,
}

impl Manifest {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        Manifest {
            tool: "codedrift".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            kind: cfg.kind,
            seed: cfg.seed,
            config: cfg.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub mu_before: f64,
    pub mu_after: f64,
    pub parasites: Vec<usize>,
    /// Code distance from each parasite to every agent.
    pub parasite_distances: Vec<Vec<f64>>,
    /// Code distances between parasites.
    pub pairwise_parasite_distances: Vec<Vec<f64>>,
    /// Host symbols ordered by decreasing pre-attack usage.
    pub usage_rank: Vec<usize>,
    /// Symbols emitted by any parasite.
    pub parasite_symbols: Vec<usize>,
    /// Every parasite symbol is among the `host_symbols / 2` most used.
    pub parasite_symbols_in_top_half: bool,
    pub first: GenerationRecord,
    pub last: GenerationRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSummary {
    pub mu_before_attack: f64,
    pub mu_after_attack: f64,
    pub mu_after_response: f64,
    /// Share of the attack loss won back.
    pub recovered_fraction: f64,
    pub parasite_symbol_mass_before: f64,
    pub parasite_symbol_mass_after: f64,
    /// Mean blend-in divergence over parasites.
    pub blend_kl_before: f64,
    pub blend_kl_after: f64,
    pub identifiability_before: f64,
    pub identifiability_after: f64,
    pub avg_env_info_before: f64,
    pub avg_env_info_after: f64,
}

/// Average environmental information before and after moving every host
/// code up by `offset` symbols. The pooled values ignore who spoke.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftProbe {
    pub offset: usize,
    pub before: f64,
    pub after: f64,
    pub pooled_before: f64,
    pub pooled_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynonymVariant {
    pub types: usize,
    pub pre_attack_mu: f64,
    pub converged_mu: f64,
    pub generations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySummary {
    pub pair_attack_mu: f64,
    pub pair_parasite_code: Vec<usize>,
    pub two_subpopulations_attack_mu: f64,
    pub two_subpopulations_parasite_code: Vec<usize>,
    pub two_subpopulations_parasite_links: Vec<usize>,
    pub pair_response_mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub kind: ScenarioKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measures: Option<MeasureReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<StructureReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<ResponseSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift_probe: Option<ShiftProbe>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub synonyms: Vec<SynonymVariant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy: Option<ToySummary>,
}

impl ScenarioReport {
    fn new(kind: ScenarioKind) -> Self {
        ScenarioReport {
            kind,
            measures: None,
            structure: None,
            attack: None,
            response: None,
            shift_probe: None,
            synonyms: Vec::new(),
            toy: None,
        }
    }
}

/// Everything a scenario produces. Names become file stems.
#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub report: ScenarioReport,
    pub snapshots: Vec<(String, Population)>,
    pub histories: Vec<(String, RunHistory)>,
    pub joints: Vec<(String, Dist2)>,
    pub distances: Option<DistanceMatrix>,
    pub embedding: Option<Embedding2D>,
    pub summary: Vec<SummaryRow>,
    /// Best mutual understanding per generation, one column per label.
    pub series: Vec<(String, Vec<f64>)>,
}

impl ScenarioOutput {
    fn new(kind: ScenarioKind) -> Self {
        ScenarioOutput {
            report: ScenarioReport::new(kind),
            snapshots: Vec::new(),
            histories: Vec::new(),
            joints: Vec::new(),
            distances: None,
            embedding: None,
            summary: Vec::new(),
            series: Vec::new(),
        }
    }

    /// The main resulting population.
    pub fn population(&self) -> Option<&Population> {
        self.snapshots.first().map(|(_, p)| p)
    }
}

/// Receives the run label and each generation's record.
pub type Progress<'a> = &'a mut dyn FnMut(&str, &GenerationRecord);

fn run_ga(
    base: &Population,
    goal: Goal,
    cfg: &ScenarioConfig,
    label: &str,
    progress: Progress,
) -> Result<(Population, RunHistory)> {
    let ga = cfg.ga();
    if cfg.restarts == 1 {
        optimizer::evolve_with(base, goal, &ga, |r| progress(label, r))
    } else {
        optimizer::evolve_restarts_with(base, goal, &ga, cfg.restarts, |i, r| {
            progress(&format!("{label}#{i}"), r)
        })
    }
}

fn describe(out: &mut ScenarioOutput, pop: &Population) -> Result<()> {
    out.report.measures = Some(metrics::measure(pop)?);
    out.report.structure = Some(metrics::analyze_structure(pop));
    out.distances = Some(metrics::distance_matrix(pop)?);
    out.embedding = Some(reportkit::type_embedding(pop)?);
    Ok(())
}

/// Evolves codes and structure from scratch for maximal mutual understanding.
pub fn run_baseline(cfg: &ScenarioConfig, progress: Progress) -> Result<ScenarioOutput> {
    cfg.validate()?;
    let d = &cfg.dimensions;
    if d.agents < 2 {
        return Err(Error::Config("a population needs at least two agents".into()));
    }
    // Only the shape matters: the GA draws codes and links itself.
    let codes = vec![Code::deterministic(&vec![0; d.states], d.host_symbols)?; d.agents];
    let star: Vec<(usize, usize)> = (1..d.agents).map(|b| (0, b)).collect();
    let template = Population::new(
        Environment::uniform(d.states),
        codes,
        [],
        InteractionGraph::edge_uniform(d.agents, &star)?,
    )?;
    let (pop, history) = run_ga(&template, Goal::Baseline, cfg, "baseline", progress)?;
    let mut out = ScenarioOutput::new(ScenarioKind::Baseline);
    describe(&mut out, &pop)?;
    out.joints.push(("joint".into(), popmodel::joint_messages(&pop)?));
    out.histories.push(("history".into(), history));
    out.snapshots.push(("snapshot".into(), pop));
    Ok(out)
}

/// Widens the hosts' alphabet and appends `k` parasites. Each parasite
/// starts as a copy of host 0 linked to one host; the attack GA replaces
/// both.
pub fn with_parasites(hosts: &Population, k: usize, alphabet: usize) -> Result<Population> {
    if !hosts.parasites().is_empty() {
        return Err(Error::Usage("the snapshot already contains parasites".into()));
    }
    let n = hosts.num_agents();
    let wide = hosts.widen_alphabet(alphabet.max(hosts.alphabet_size()))?;
    let mut codes = wide.codes().to_vec();
    let mut edges: Vec<(usize, usize)> = wide.graph().edges().iter().map(|e| (e.0, e.1)).collect();
    for p in 0..k {
        codes.push(codes[0].clone());
        edges.push((p % n, n + p));
    }
    Population::new(
        wide.environment().clone(),
        codes,
        n..n + k,
        InteractionGraph::edge_uniform(n + k, &edges)?,
    )
}

/// Drops the parasites and their links; host links keep their relative
/// weights.
pub fn without_parasites(pop: &Population) -> Result<Population> {
    let hosts: Vec<usize> = pop.hosts().map(|a| a.0).collect();
    let mut index = vec![usize::MAX; pop.num_agents()];
    for (i, &h) in hosts.iter().enumerate() {
        index[h] = i;
    }
    let edges: Vec<(usize, usize, f64)> = pop
        .graph()
        .edges()
        .into_iter()
        .filter(|&(a, b, _)| index[a] != usize::MAX && index[b] != usize::MAX)
        .map(|(a, b, w)| (index[a], index[b], w))
        .collect();
    let total: f64 = edges.iter().map(|e| 2.0 * e.2).sum();
    if total <= 0.0 {
        return Err(Error::Usage("hosts have no links among themselves".into()));
    }
    let edges: Vec<_> = edges.into_iter().map(|(a, b, w)| (a, b, w / total)).collect();
    Population::new(
        pop.environment().clone(),
        hosts.iter().map(|&h| pop.codes()[h].clone()).collect(),
        [],
        InteractionGraph::from_weighted_edges(hosts.len(), &edges)?,
    )
}

fn usage_rank(hosts: &Population) -> Result<Vec<usize>> {
    let usage = metrics::symbol_usage(hosts, &BTreeSet::new())?;
    let mut rank: Vec<usize> = (0..usage.len()).collect();
    rank.sort_by(|&a, &b| usage.get(b).total_cmp(&usage.get(a)).then(a.cmp(&b)));
    Ok(rank)
}

fn attack(
    cfg: &ScenarioConfig,
    hosts: &Population,
    kind: ScenarioKind,
    progress: Progress,
) -> Result<ScenarioOutput> {
    cfg.validate()?;
    hosts.ensure_valid()?;
    let start = with_parasites(hosts, cfg.parasites, cfg.dimensions.parasite_symbols)?;
    let (pop, history) = run_ga(&start, Goal::Attack, cfg, "attack", progress)?;

    let mut out = ScenarioOutput::new(kind);
    describe(&mut out, &pop)?;
    let d = out.distances.as_ref().expect("just computed");
    let parasites: Vec<usize> = pop.parasites().iter().copied().collect();
    let rank = usage_rank(hosts)?;
    let mut symbols = BTreeSet::new();
    for &p in &parasites {
        symbols.extend(pop.codes()[p].used_symbols());
    }
    let top: BTreeSet<usize> = rank.iter().take(cfg.dimensions.host_symbols / 2).copied().collect();
    out.report.attack = Some(AttackSummary {
        mu_before: metrics::mutual_understanding(hosts)?,
        mu_after: metrics::mutual_understanding(&pop)?,
        parasite_distances: parasites
            .iter()
            .map(|&p| (0..pop.num_agents()).map(|b| d.get(p, b)).collect())
            .collect(),
        pairwise_parasite_distances: parasites
            .iter()
            .map(|&p| parasites.iter().map(|&q| d.get(p, q)).collect())
            .collect(),
        parasites,
        usage_rank: rank,
        parasite_symbols_in_top_half: symbols.is_subset(&top),
        parasite_symbols: symbols.into_iter().collect(),
        first: history.first().cloned().expect("at least one generation"),
        last: history.last().cloned().expect("at least one generation"),
    });
    out.report.shift_probe = apply_shift_probe(&pop, cfg.dimensions.host_symbols).ok();
    out.joints.push(("joint_before".into(), popmodel::joint_messages(hosts)?));
    out.joints.push(("joint".into(), popmodel::joint_messages(&pop)?));
    out.histories.push(("history".into(), history));
    out.snapshots.push(("snapshot".into(), pop));
    Ok(out)
}

/// Introduces `cfg.parasites` parasites that choose their codes and links
/// to minimize mutual understanding.
pub fn run_attack(cfg: &ScenarioConfig, hosts: &Population, progress: Progress) -> Result<ScenarioOutput> {
    attack(cfg, hosts, ScenarioKind::Attack, progress)
}

/// The attack with several parasites evolved jointly. With one parasite the
/// outputs equal those of [`run_attack`].
pub fn run_multi_parasite(cfg: &ScenarioConfig, hosts: &Population, progress: Progress) -> Result<ScenarioOutput> {
    attack(cfg, hosts, ScenarioKind::MultiParasite, progress)
}

/// Lets the hosts re-evolve their codes, over `parasite_symbols` symbols,
/// with the parasites and the interaction structure held fixed (unless
/// `ga.free_structure` is set).
pub fn run_response(cfg: &ScenarioConfig, attacked: &Population, progress: Progress) -> Result<ScenarioOutput> {
    cfg.validate()?;
    attacked.ensure_valid()?;
    if attacked.parasites().is_empty() {
        return Err(Error::Usage("the snapshot contains no parasite".into()));
    }
    let attacked = if attacked.alphabet_size() < cfg.dimensions.parasite_symbols {
        attacked.widen_alphabet(cfg.dimensions.parasite_symbols)?
    } else {
        attacked.clone()
    };
    let (pop, history) = run_ga(&attacked, Goal::Response, cfg, "response", progress)?;
    let before = without_parasites(&attacked)?;

    let mean_kl = |p: &Population| -> Result<f64> {
        let mut s = 0.0;
        for &q in p.parasites() {
            s += metrics::blend_kl(p, AgentId(q))?;
        }
        Ok(s / p.parasites().len() as f64)
    };
    let (i1, i2, i3) = (
        metrics::mutual_understanding(&before)?,
        metrics::mutual_understanding(&attacked)?,
        metrics::mutual_understanding(&pop)?,
    );
    let loss = i1 - i2;
    let summary = ResponseSummary {
        mu_before_attack: i1,
        mu_after_attack: i2,
        mu_after_response: i3,
        recovered_fraction: if loss > 0.0 { (i3 - i2) / loss } else { 0.0 },
        parasite_symbol_mass_before: optimizer::parasite_symbol_mass(&attacked)?,
        parasite_symbol_mass_after: optimizer::parasite_symbol_mass(&pop)?,
        blend_kl_before: mean_kl(&attacked)?,
        blend_kl_after: mean_kl(&pop)?,
        identifiability_before: metrics::identifiability(&attacked)?,
        identifiability_after: metrics::identifiability(&pop)?,
        avg_env_info_before: metrics::avg_env_info(&attacked)?,
        avg_env_info_after: metrics::avg_env_info(&pop)?,
    };

    let mut out = ScenarioOutput::new(ScenarioKind::Respond);
    describe(&mut out, &pop)?;
    out.summary = summary_rows(&before, &attacked, &pop)?;
    out.report.response = Some(summary);
    out.report.shift_probe = apply_shift_probe(&pop, cfg.dimensions.host_symbols).ok();
    out.joints.push(("joint_before".into(), popmodel::joint_messages(&attacked)?));
    out.joints.push(("joint".into(), popmodel::joint_messages(&pop)?));
    out.histories.push(("history".into(), history));
    out.snapshots.push(("snapshot".into(), pop));
    Ok(out)
}

/// Per sub-population mutual understanding before the attack, after it and
/// after the response, plus a row for the whole population. Sub-populations
/// are the components of the host graph; host indices are assumed to come
/// first, as [`with_parasites`] arranges.
pub fn summary_rows(before: &Population, attacked: &Population, responded: &Population) -> Result<Vec<SummaryRow>> {
    let structure = metrics::analyze_structure(before);
    let mut rows = Vec::new();
    for c in &structure.components {
        let mut sizes: Vec<usize> = c.type_sizes.iter().map(|t| t.1).collect();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        rows.push(SummaryRow {
            component: c.id.to_string(),
            size: c.agents.len(),
            type_sizes: sizes,
            before_attack: Some(metrics::group_mutual_understanding(before, &c.agents)?),
            after_attack: Some(metrics::group_mutual_understanding(attacked, &c.agents)?),
            after_response: Some(metrics::group_mutual_understanding(responded, &c.agents)?),
        });
    }
    rows.push(SummaryRow {
        component: "all".into(),
        size: before.num_agents(),
        type_sizes: structure.types.iter().map(|t| t.agents.len()).collect(),
        before_attack: Some(metrics::mutual_understanding(before)?),
        after_attack: Some(metrics::mutual_understanding(attacked)?),
        after_response: Some(metrics::mutual_understanding(responded)?),
    });
    Ok(rows)
}

/// Moves every host code up by `offset` symbols and measures the average
/// environmental information before and after. `pop` is left untouched.
pub fn apply_shift_probe(pop: &Population, offset: usize) -> Result<ShiftProbe> {
    let codes = pop
        .codes()
        .iter()
        .enumerate()
        .map(|(a, c)| {
            if pop.is_parasite(AgentId(a)) {
                Ok(c.clone())
            } else {
                popmodel::synonym_shift(c, offset as isize)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let shifted = pop.with_codes(codes)?;
    Ok(ShiftProbe {
        offset,
        before: metrics::avg_env_info(pop)?,
        after: metrics::avg_env_info(&shifted)?,
        pooled_before: metrics::population_env_info(pop)?,
        pooled_after: metrics::population_env_info(&shifted)?,
    })
}

/// Well-mixed population of `dimensions.agents` agents sharing one random
/// code, split into `types` equal blocks; block `k` uses the code moved up
/// by `k * host_symbols`.
pub fn synonym_population(cfg: &ScenarioConfig, types: usize) -> Result<Population> {
    let d = &cfg.dimensions;
    let max_types = cfg.type_counts.iter().copied().max().unwrap_or(1).max(types);
    let alphabet = d.parasite_symbols.max(d.host_symbols * max_types);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let symbols: Vec<usize> = (0..d.states).map(|_| rng.gen_range(0..d.host_symbols)).collect();
    let code = Code::deterministic(&symbols, alphabet)?;
    let codes = (0..d.agents)
        .map(|a| popmodel::synonym_shift(&code, ((a * types / d.agents) * d.host_symbols) as isize))
        .collect::<Result<Vec<_>>>()?;
    let mut edges = Vec::new();
    for a in 0..d.agents {
        for b in (a + 1)..d.agents {
            edges.push((a, b));
        }
    }
    Population::new(
        Environment::uniform(d.states),
        codes,
        [],
        InteractionGraph::edge_uniform(d.agents, &edges)?,
    )
}

/// Attacks populations that differ only in how many synonymous code types
/// they contain.
pub fn run_synonym_series(cfg: &ScenarioConfig, progress: Progress) -> Result<ScenarioOutput> {
    cfg.validate()?;
    let mut out = ScenarioOutput::new(ScenarioKind::SynonymSeries);
    for &t in &cfg.type_counts {
        let hosts = synonym_population(cfg, t)?;
        let start = with_parasites(&hosts, cfg.parasites, hosts.alphabet_size())?;
        let label = format!("types_{t}");
        let (pop, history) = run_ga(&start, Goal::Attack, cfg, &label, progress)?;
        out.report.synonyms.push(SynonymVariant {
            types: t,
            pre_attack_mu: metrics::mutual_understanding(&hosts)?,
            converged_mu: metrics::mutual_understanding(&pop)?,
            generations: history.records.len(),
        });
        out.series
            .push((label.clone(), history.records.iter().map(|r| r.best_fitness).collect()));
        out.histories.push((format!("history_{label}"), history));
        out.snapshots.push((format!("snapshot_{label}"), pop));
    }
    Ok(out)
}

/// The four-state examples: attacks on the host pair and on the two
/// sub-populations over two symbols, then the pair's response over four.
pub fn run_toy(cfg: &ScenarioConfig, progress: Progress) -> Result<ScenarioOutput> {
    cfg.validate()?;
    let pair = toy::pair();
    let one = ScenarioConfig {
        parasites: 1,
        ..cfg.clone()
    };
    let (pair_attack, h1) = run_ga(&with_parasites(&pair, 1, 2)?, Goal::Attack, &one, "pair_attack", progress)?;
    let (split_attack, h2) = run_ga(
        &with_parasites(&toy::two_subpopulations(), 1, 2)?,
        Goal::Attack,
        &one,
        "two_subpopulations_attack",
        progress,
    )?;
    let (pair_response, h3) = run_ga(&pair_attack.widen_alphabet(4)?, Goal::Response, &one, "pair_response", progress)?;

    let code = |p: &Population, a: usize| p.codes()[a].as_deterministic().unwrap_or_default();
    let mut out = ScenarioOutput::new(ScenarioKind::Toy);
    out.report.toy = Some(ToySummary {
        pair_attack_mu: metrics::mutual_understanding(&pair_attack)?,
        pair_parasite_code: code(&pair_attack, 2),
        two_subpopulations_attack_mu: metrics::mutual_understanding(&split_attack)?,
        two_subpopulations_parasite_code: code(&split_attack, 4),
        two_subpopulations_parasite_links: split_attack.graph().neighbors(4).map(|(b, _)| b).collect(),
        pair_response_mu: metrics::mutual_understanding(&pair_response)?,
    });
    out.histories.push(("history_pair_attack".into(), h1));
    out.histories.push(("history_two_subpopulations_attack".into(), h2));
    out.histories.push(("history_pair_response".into(), h3));
    out.snapshots.push(("snapshot_pair_response".into(), pair_response));
    out.snapshots.push(("snapshot_pair_attack".into(), pair_attack));
    out.snapshots.push(("snapshot_two_subpopulations_attack".into(), split_attack));
    Ok(out)
}

/// Runs the scenario a configuration describes, loading its input snapshot
/// when the kind needs one.
pub fn run(cfg: &ScenarioConfig, progress: Progress) -> Result<ScenarioOutput> {
    cfg.validate()?;
    let input = if cfg.kind.needs_snapshot() {
        let path = cfg
            .snapshot
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} needs an input snapshot", cfg.kind.name())))?;
        Some(snapshot::load(path)?)
    } else {
        None
    };
    match (cfg.kind, input) {
        (ScenarioKind::Baseline, _) => run_baseline(cfg, progress),
        (ScenarioKind::Attack, Some(p)) => run_attack(cfg, &p, progress),
        (ScenarioKind::MultiParasite, Some(p)) => run_multi_parasite(cfg, &p, progress),
        (ScenarioKind::Respond, Some(p)) => run_response(cfg, &p, progress),
        (ScenarioKind::SynonymSeries, _) => run_synonym_series(cfg, progress),
        (ScenarioKind::Toy, _) => run_toy(cfg, progress),
        (_, None) => unreachable!("snapshot loaded above"),
    }
}

/// Writes the manifest and every output into `dir`, creating it if needed.
/// Returns the written paths in order.
pub fn write_outputs(out: &ScenarioOutput, cfg: &ScenarioConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut path = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    reportkit::write_json(&Manifest::new(cfg), &path("manifest.json"))?;
    reportkit::write_json(&out.report, &path("report.json"))?;
    for (name, pop) in &out.snapshots {
        snapshot::save(pop, &path(&format!("{name}.json")))?;
    }
    for (name, h) in &out.histories {
        reportkit::write_history_csv(h, &path(&format!("{name}.csv")))?;
    }
    for (name, j) in &out.joints {
        reportkit::write_joint_csv(j, &path(&format!("{name}.csv")))?;
    }
    if let Some(d) = &out.distances {
        let labels: Vec<usize> = (0..d.len()).collect();
        reportkit::write_distance_csv(d, &labels, &path("distances.csv"))?;
    }
    if let Some(e) = &out.embedding {
        reportkit::write_json(e, &path("embedding.json"))?;
    }
    if !out.summary.is_empty() {
        reportkit::write_summary_csv(&out.summary, &path("summary.csv"))?;
    }
    if !out.series.is_empty() {
        reportkit::write_series_csv(&out.series, &path("series.csv"))?;
    }
    Ok(written)
}
