//! Genetic algorithm over deterministic codes and interaction links.
//!
//! Three regimes share one engine:
//!
//! * [`Goal::Baseline`] evolves every agent's code together with the whole
//!   adjacency (upper triangle), maximizing mutual understanding.
//! * [`Goal::Attack`] evolves only the parasites' codes and links, minimizing
//!   mutual understanding; host codes and host-host links stay fixed.
//! * [`Goal::Response`] evolves the hosts' codes with the interaction graph
//!   frozen, maximizing mutual understanding again.
//!
//! Fitness is the exact mutual understanding of the decoded population.
//! Every random draw comes from a stream keyed by `(seed, generation, slot)`,
//! so results do not depend on how evaluations are scheduled across threads.

use std::cmp::Ordering;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics;
use crate::popmodel::{AgentId, Code, InteractionGraph, Population};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Goal {
    Baseline,
    Attack,
    Response,
}

impl Goal {
    pub fn maximizes(self) -> bool {
        !matches!(self, Goal::Attack)
    }
}

fn default_population_size() -> usize {
    200
}
fn default_max_generations() -> usize {
    1000
}
fn default_crossover_rate() -> f64 {
    0.9
}
fn default_tournament_size() -> usize {
    3
}
fn default_elitism() -> usize {
    2
}
fn default_stall() -> usize {
    50
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaConfig {
    #[serde(default = "default_population_size")]
    pub population_size: usize,
    #[serde(default = "default_max_generations")]
    pub max_generations: usize,
    /// Per-gene resampling probability; `1 / genome length` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation_rate: Option<f64>,
    #[serde(default = "default_crossover_rate")]
    pub crossover_rate: f64,
    #[serde(default = "default_tournament_size")]
    pub tournament_size: usize,
    #[serde(default = "default_elitism")]
    pub elitism_count: usize,
    #[serde(default = "default_stall")]
    pub stall_generations: usize,
    #[serde(default)]
    pub seed: u64,
    /// Probability that a link gene starts switched on. Defaults to a mean
    /// degree of two for the baseline and one half for parasite rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_link_prob: Option<f64>,
    /// Whether parasites may link to each other in multi-parasite attacks.
    #[serde(default = "default_true")]
    pub parasite_links: bool,
    /// Response only: let the hosts rewire the whole graph as well.
    #[serde(default)]
    pub free_structure: bool,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: default_population_size(),
            max_generations: default_max_generations(),
            mutation_rate: None,
            crossover_rate: default_crossover_rate(),
            tournament_size: default_tournament_size(),
            elitism_count: default_elitism(),
            stall_generations: default_stall(),
            seed: 0,
            init_link_prob: None,
            parasite_links: true,
            free_structure: false,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.population_size < 2 {
            return bad("population_size must be at least 2".into());
        }
        if self.max_generations == 0 || self.tournament_size == 0 || self.stall_generations == 0 {
            return bad("max_generations, tournament_size and stall_generations must be positive".into());
        }
        if self.elitism_count >= self.population_size {
            return bad(format!(
                "elitism_count {} must be below population_size {}",
                self.elitism_count, self.population_size
            ));
        }
        for (name, r) in [
            ("crossover_rate", Some(self.crossover_rate)),
            ("mutation_rate", self.mutation_rate),
            ("init_link_prob", self.init_link_prob),
        ] {
            if let Some(r) = r {
                if !(0.0..=1.0).contains(&r) {
                    return bad(format!("{name} = {r} is outside [0, 1]"));
                }
            }
        }
        Ok(())
    }
}

/// Fixed-length bit vector for link genes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Links {
    words: Vec<u64>,
    len: usize,
}

impl Links {
    pub fn zeros(len: usize) -> Self {
        Links {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, on: bool) {
        let bit = 1u64 << (i % 64);
        if on {
            self.words[i / 64] |= bit;
        } else {
            self.words[i / 64] &= !bit;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(k, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let t = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(k * 64 + t)
            })
        })
    }

    fn last_mask(&self) -> u64 {
        match self.len % 64 {
            0 => u64::MAX,
            r => (1u64 << r) - 1,
        }
    }
}

/// Decision variables of one candidate solution.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Genome {
    pub variant: Goal,
    /// Code genes, `M` consecutive symbols per evolving agent.
    pub symbols: Vec<u16>,
    /// Exclusive upper bound on every code gene.
    pub symbol_bound: u16,
    pub links: Links,
}

impl Genome {
    pub fn len(&self) -> usize {
        self.symbols.len() + self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Random stream for one `(seed, generation, slot)` triple.
pub fn stream(seed: u64, generation: u64, slot: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&generation.to_le_bytes());
    key[16..24].copy_from_slice(&slot.to_le_bytes());
    key[24..].copy_from_slice(b"codedrft");
    ChaCha8Rng::from_seed(key)
}

/// Everything needed to decode and score genomes for one optimization run.
#[derive(Debug, Clone)]
pub struct Landscape {
    goal: Goal,
    base: Population,
    n: usize,
    m: usize,
    s: usize,
    prior: Vec<f64>,
    /// Deterministic symbol table of every agent, row per agent.
    template: Vec<u16>,
    free_agents: Vec<usize>,
    fixed_edges: Vec<(u32, u32)>,
    /// Directed weighted pairs of a frozen graph whose weights differ.
    frozen: Option<Vec<(u32, u32, f64)>>,
    /// The decoded graph is always the base graph.
    keep_graph: bool,
    pairs: Vec<(u32, u32)>,
    incident: Vec<Vec<u32>>,
    fixed_degree: Vec<u32>,
    init_link_prob: f64,
    seed_links: Option<Links>,
    /// Gene row of each agent, `u32::MAX` for fixed agents.
    slot: Vec<u32>,
    uniform_prior: bool,
}

impl Landscape {
    pub fn new(base: &Population, goal: Goal, cfg: &GaConfig) -> Result<Self> {
        base.validate().map_err(Error::Validation)?;
        let n = base.num_agents();
        let m = base.num_states();
        let s = base.alphabet_size();
        if n < 2 {
            return Err(Error::Usage("need at least two agents".into()));
        }
        if s > u16::MAX as usize {
            return Err(Error::Usage(format!("alphabet of {s} symbols is too large")));
        }
        let mut template = Vec::with_capacity(n * m);
        for (a, code) in base.codes().iter().enumerate() {
            let syms = code.as_deterministic().ok_or_else(|| {
                Error::Usage(format!("agent {a} has a non-deterministic code; the optimizer needs deterministic codes"))
            })?;
            template.extend(syms.into_iter().map(|x| x as u16));
        }
        let parasites: Vec<usize> = base.parasites().iter().copied().collect();
        let hosts: Vec<usize> = base.hosts().map(|a| a.0).collect();
        let base_edges: Vec<(u32, u32)> = base
            .graph()
            .edges()
            .into_iter()
            .map(|(a, b, _)| (a as u32, b as u32))
            .collect();

        let mut fixed_edges = Vec::new();
        let mut frozen = None;
        let mut keep_graph = false;
        let mut pairs = Vec::new();
        let mut seed_links = None;
        let free_agents;
        let mut default_link_prob;
        match goal {
            Goal::Baseline => {
                if !parasites.is_empty() {
                    return Err(Error::Usage(
                        "baseline optimization expects a population without parasites".into(),
                    ));
                }
                free_agents = (0..n).collect();
                for a in 0..n {
                    for b in (a + 1)..n {
                        pairs.push((a as u32, b as u32));
                    }
                }
                default_link_prob = (2.0 / (n - 1) as f64).min(1.0);
            }
            Goal::Attack => {
                if parasites.is_empty() {
                    return Err(Error::Usage("attack needs at least one parasite".into()));
                }
                if hosts.is_empty() {
                    return Err(Error::Usage("attack needs at least one host".into()));
                }
                free_agents = parasites.clone();
                let is_par = |a: u32| base.is_parasite(AgentId(a as usize));
                fixed_edges = base_edges
                    .iter()
                    .copied()
                    .filter(|&(a, b)| !is_par(a) && !is_par(b))
                    .collect();
                for &p in &parasites {
                    for &h in &hosts {
                        pairs.push((h.min(p) as u32, h.max(p) as u32));
                    }
                }
                if cfg.parasite_links {
                    for (i, &p) in parasites.iter().enumerate() {
                        for &q in &parasites[i + 1..] {
                            pairs.push((p as u32, q as u32));
                        }
                    }
                }
                default_link_prob = 0.5;
            }
            Goal::Response => {
                if parasites.is_empty() {
                    return Err(Error::Usage(
                        "response needs a population that contains a parasite".into(),
                    ));
                }
                free_agents = hosts;
                default_link_prob = 0.0;
                if cfg.free_structure {
                    let mut links = Links::zeros(n * (n - 1) / 2);
                    let mut idx = 0;
                    for a in 0..n {
                        for b in (a + 1)..n {
                            pairs.push((a as u32, b as u32));
                            if base.graph().weight(a, b) > 0.0 {
                                links.set(idx, true);
                            }
                            idx += 1;
                        }
                    }
                    default_link_prob = links.count_ones() as f64 / links.len().max(1) as f64;
                    seed_links = Some(links);
                } else {
                    keep_graph = true;
                    let edges = base.graph().edges();
                    if edges.iter().all(|e| e.2 == edges[0].2) {
                        fixed_edges = base_edges.clone();
                    } else {
                        frozen = Some(
                            (0..n)
                                .flat_map(|a| {
                                    base.graph()
                                        .neighbors(a)
                                        .map(move |(b, w)| (a as u32, b as u32, w))
                                })
                                .collect(),
                        );
                    }
                }
            }
        }

        let mut slot = vec![u32::MAX; n];
        for (k, &a) in free_agents.iter().enumerate() {
            slot[a] = k as u32;
        }
        let mut incident = vec![Vec::new(); n];
        for (i, &(a, b)) in pairs.iter().enumerate() {
            incident[a as usize].push(i as u32);
            incident[b as usize].push(i as u32);
        }
        let mut fixed_degree = vec![0u32; n];
        for &(a, b) in &fixed_edges {
            fixed_degree[a as usize] += 1;
            fixed_degree[b as usize] += 1;
        }
        if !keep_graph {
            if let Some(a) = (0..n).find(|&a| fixed_degree[a] == 0 && incident[a].is_empty()) {
                return Err(Error::Usage(format!(
                    "agent {a} can never be linked by this optimization"
                )));
            }
        }
        Ok(Landscape {
            goal,
            base: base.clone(),
            n,
            m,
            s,
            prior: base.environment().prior().probs().to_vec(),
            template,
            free_agents,
            fixed_edges,
            frozen,
            keep_graph,
            pairs,
            incident,
            fixed_degree,
            init_link_prob: cfg.init_link_prob.unwrap_or(default_link_prob),
            seed_links,
            slot,
            uniform_prior: base.environment().prior().probs().iter().all(|&p| p == 1.0 / m as f64),
        })
    }

    pub fn goal(&self) -> Goal {
        self.goal
    }

    pub fn genome_len(&self) -> usize {
        self.free_agents.len() * self.m + self.pairs.len()
    }

    /// Agent pair controlled by each link gene.
    pub fn link_pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    fn empty_genome(&self) -> Genome {
        Genome {
            variant: self.goal,
            symbols: vec![0; self.free_agents.len() * self.m],
            symbol_bound: self.s as u16,
            links: Links::zeros(self.pairs.len()),
        }
    }

    /// The base population expressed as a genome. For attacks the parasite
    /// rows start empty and are repaired.
    pub fn seed_genome(&self, rng: &mut impl Rng) -> Genome {
        let mut g = self.empty_genome();
        for (k, &a) in self.free_agents.iter().enumerate() {
            g.symbols[k * self.m..(k + 1) * self.m]
                .copy_from_slice(&self.template[a * self.m..(a + 1) * self.m]);
        }
        if let Some(links) = &self.seed_links {
            g.links = links.clone();
        } else if self.goal != Goal::Response {
            for (i, &(a, b)) in self.pairs.iter().enumerate() {
                if self.base.graph().weight(a as usize, b as usize) > 0.0 {
                    g.links.set(i, true);
                }
            }
        }
        self.repair(g, rng)
    }

    /// Uniformly random codes, links on with the initial link probability.
    pub fn random_genome(&self, rng: &mut impl Rng) -> Genome {
        let mut g = self.empty_genome();
        for x in g.symbols.iter_mut() {
            *x = rng.gen_range(0..g.symbol_bound);
        }
        if self.init_link_prob > 0.0 {
            for i in 0..g.links.len() {
                if rng.gen_bool(self.init_link_prob) {
                    g.links.set(i, true);
                }
            }
        }
        self.repair(g, rng)
    }

    fn check_shape(&self, g: &Genome) -> Result<()> {
        if g.variant != self.goal
            || g.symbols.len() != self.free_agents.len() * self.m
            || g.links.len() != self.pairs.len()
            || g.symbol_bound as usize != self.s
        {
            return Err(Error::ShapeMismatch(format!(
                "genome ({:?}, {} code genes, {} link genes) does not fit this landscape",
                g.variant,
                g.symbols.len(),
                g.links.len()
            )));
        }
        Ok(())
    }

    /// Links every isolated agent to a uniformly chosen partner among the
    /// link genes that touch it. Agents are visited in index order.
    pub fn repair(&self, mut g: Genome, rng: &mut impl Rng) -> Genome {
        if self.keep_graph {
            return g;
        }
        let mut degree = self.fixed_degree.clone();
        for i in g.links.ones() {
            let (a, b) = self.pairs[i];
            degree[a as usize] += 1;
            degree[b as usize] += 1;
        }
        for a in 0..self.n {
            if degree[a] > 0 {
                continue;
            }
            let options = &self.incident[a];
            let i = options[rng.gen_range(0..options.len())] as usize;
            g.links.set(i, true);
            let (x, y) = self.pairs[i];
            degree[x as usize] += 1;
            degree[y as usize] += 1;
        }
        g
    }

    /// Resamples each gene independently with probability `rate`, then repairs.
    pub fn mutate(&self, g: &Genome, rate: f64, rng: &mut impl Rng) -> Genome {
        let mut out = g.clone();
        if rate <= 0.0 || out.is_empty() {
            return out;
        }
        self.resample_genes(&mut out, rate, rng);
        self.repair(out, rng)
    }

    fn resample_genes(&self, out: &mut Genome, rate: f64, rng: &mut impl Rng) {
        let total = out.len();
        if rate <= 0.0 || total == 0 {
            return;
        }
        let n_sym = out.symbols.len();
        let link_prob = self.init_link_prob;
        let resample = |out: &mut Genome, i: usize, rng: &mut dyn rand::RngCore| {
            if i < n_sym {
                out.symbols[i] = rng.gen_range(0..out.symbol_bound);
            } else {
                out.links.set(i - n_sym, rng.gen_bool(link_prob));
            }
        };
        if rate >= 1.0 {
            for i in 0..total {
                resample(out, i, rng);
            }
            return;
        }
        // geometric gaps between resampled genes
        let log_q = (1.0 - rate).ln();
        let mut i = 0usize;
        loop {
            let u: f64 = rng.gen::<f64>();
            let gap = ((1.0 - u).ln() / log_q).floor();
            if !gap.is_finite() || gap >= (total - i) as f64 {
                break;
            }
            i += gap as usize;
            resample(out, i, rng);
            i += 1;
            if i >= total {
                break;
            }
        }
    }

    /// One offspring pair: optional crossover, mutation, then a single repair.
    fn breed(
        &self,
        a: &Genome,
        b: &Genome,
        crossover_rate: f64,
        rate: f64,
        rng: &mut impl Rng,
    ) -> [Genome; 2] {
        let (mut c1, mut c2) = if rng.gen_bool(crossover_rate) {
            cross(a, b, rng)
        } else {
            (a.clone(), b.clone())
        };
        self.resample_genes(&mut c1, rate, rng);
        self.resample_genes(&mut c2, rate, rng);
        [self.repair(c1, rng), self.repair(c2, rng)]
    }

    /// Uniform crossover: each gene comes from either parent with equal odds,
    /// the second child takes the complement. Both children are repaired.
    pub fn crossover(
        &self,
        a: &Genome,
        b: &Genome,
        rng: &mut impl Rng,
    ) -> Result<(Genome, Genome)> {
        self.check_shape(a)?;
        self.check_shape(b)?;
        let (c1, c2) = cross(a, b, rng);
        Ok((self.repair(c1, rng), self.repair(c2, rng)))
    }

    fn table_for(&self, g: &Genome) -> Vec<u16> {
        let mut table = self.template.clone();
        for (k, &a) in self.free_agents.iter().enumerate() {
            table[a * self.m..(a + 1) * self.m]
                .copy_from_slice(&g.symbols[k * self.m..(k + 1) * self.m]);
        }
        table
    }

    fn row<'a>(&'a self, g: &'a Genome, a: usize) -> &'a [u16] {
        match self.slot[a] {
            u32::MAX => &self.template[a * self.m..(a + 1) * self.m],
            k => &g.symbols[k as usize * self.m..(k as usize + 1) * self.m],
        }
    }

    /// Exact mutual understanding of the decoded population.
    pub fn fitness(&self, g: &Genome) -> f64 {
        let s = self.s;
        let mut joint = vec![0.0; s * s];
        match &self.frozen {
            Some(frozen) => {
                for &(a, b, w) in frozen {
                    let (ra, rb) = (self.row(g, a as usize), self.row(g, b as usize));
                    for ((&x, &y), &p) in ra.iter().zip(rb).zip(&self.prior) {
                        joint[x as usize * s + y as usize] += w * p;
                    }
                }
            }
            None if self.uniform_prior => {
                // integer counts of one orientation, symmetrized afterwards
                let mut counts = vec![0u32; s * s];
                for &(a, b) in self
                    .fixed_edges
                    .iter()
                    .chain(g.links.ones().map(|i| &self.pairs[i]))
                {
                    let (ra, rb) = (self.row(g, a as usize), self.row(g, b as usize));
                    for (&x, &y) in ra.iter().zip(rb) {
                        counts[x as usize * s + y as usize] += 1;
                    }
                }
                for x in 0..s {
                    for y in x..s {
                        let c = counts[x * s + y] + counts[y * s + x];
                        counts[x * s + y] = c;
                        counts[y * s + x] = c;
                    }
                }
                return count_mutual_information(&counts, s);
            }
            None => {
                let mut edges = 0usize;
                for &(a, b) in self
                    .fixed_edges
                    .iter()
                    .chain(g.links.ones().map(|i| &self.pairs[i]))
                {
                    let (ra, rb) = (self.row(g, a as usize), self.row(g, b as usize));
                    for ((&x, &y), &p) in ra.iter().zip(rb).zip(&self.prior) {
                        joint[x as usize * s + y as usize] += p;
                    }
                    edges += 1;
                }
                let w = 1.0 / (2 * edges) as f64;
                for x in 0..s {
                    for y in x..s {
                        let v = (joint[x * s + y] + joint[y * s + x]) * w;
                        joint[x * s + y] = v;
                        joint[y * s + x] = v;
                    }
                }
            }
        }
        joint_mutual_information(&joint, s)
    }

    /// [`parasite_symbol_mass`] of the decoded population, without decoding.
    pub fn parasite_symbol_mass(&self, g: &Genome) -> f64 {
        let parasites = self.base.parasites();
        let mut used = vec![false; self.s];
        for &p in parasites {
            for &x in self.row(g, p) {
                used[x as usize] = true;
            }
        }
        let mut degree = vec![0.0; self.n];
        match (&self.frozen, self.keep_graph) {
            (Some(frozen), _) => {
                for &(a, _, w) in frozen {
                    degree[a as usize] += w;
                }
            }
            (None, true) => {
                for &(a, b) in &self.fixed_edges {
                    degree[a as usize] += 1.0;
                    degree[b as usize] += 1.0;
                }
            }
            (None, false) => {
                for &(a, b) in self
                    .fixed_edges
                    .iter()
                    .chain(g.links.ones().map(|i| &self.pairs[i]))
                {
                    degree[a as usize] += 1.0;
                    degree[b as usize] += 1.0;
                }
            }
        }
        let (mut hit, mut total) = (0.0, 0.0);
        for a in (0..self.n).filter(|a| !parasites.contains(a)) {
            for (&x, &p) in self.row(g, a).iter().zip(&self.prior) {
                total += degree[a] * p;
                if used[x as usize] {
                    hit += degree[a] * p;
                }
            }
        }
        if total > 0.0 {
            hit / total
        } else {
            0.0
        }
    }

    /// The population a genome stands for.
    pub fn decode(&self, g: &Genome) -> Result<Population> {
        self.check_shape(g)?;
        let table = self.table_for(g);
        let codes = table
            .chunks_exact(self.m)
            .map(|row| {
                let syms: Vec<usize> = row.iter().map(|&x| x as usize).collect();
                Code::deterministic(&syms, self.s)
            })
            .collect::<Result<Vec<_>>>()?;
        let graph = match self.keep_graph {
            true => self.base.graph().clone(),
            false => {
                let edges: Vec<(usize, usize)> = self
                    .fixed_edges
                    .iter()
                    .chain(g.links.ones().map(|i| &self.pairs[i]))
                    .map(|&(a, b)| (a as usize, b as usize))
                    .collect();
                InteractionGraph::edge_uniform(self.n, &edges)?
            }
        };
        Population::new(
            self.base.environment().clone(),
            codes,
            self.base.parasites().iter().copied(),
            graph,
        )
    }
}

fn cross(a: &Genome, b: &Genome, rng: &mut impl Rng) -> (Genome, Genome) {
    let mut c1 = a.clone();
    let mut c2 = b.clone();
    let pairs = c1
        .symbols
        .chunks_mut(64)
        .zip(c2.symbols.chunks_mut(64))
        .zip(a.symbols.chunks(64).zip(b.symbols.chunks(64)));
    for ((d1, d2), (x, y)) in pairs {
        let mask: u64 = rng.gen();
        for j in 0..d1.len() {
            let keep = ((mask >> j) & 1) as u16;
            let sel = keep.wrapping_neg();
            d1[j] = (x[j] & sel) | (y[j] & !sel);
            d2[j] = (y[j] & sel) | (x[j] & !sel);
        }
    }
    let nw = a.links.words.len();
    for k in 0..nw {
        let mut mask: u64 = rng.gen();
        if k + 1 == nw {
            mask &= a.links.last_mask();
        }
        let (x, y) = (a.links.words[k], b.links.words[k]);
        c1.links.words[k] = (x & mask) | (y & !mask);
        c2.links.words[k] = (y & mask) | (x & !mask);
    }
    (c1, c2)
}

/// Mutual understanding for deterministic codes given as a symbol table
/// (`m` symbols per agent) and directed weighted pairs summing to one.
pub fn deterministic_mutual_understanding(
    table: &[u16],
    m: usize,
    s: usize,
    prior: &[f64],
    directed: &[(u32, u32, f64)],
) -> f64 {
    let mut joint = vec![0.0; s * s];
    for &(a, b, w) in directed {
        let ra = &table[a as usize * m..(a as usize + 1) * m];
        let rb = &table[b as usize * m..(b as usize + 1) * m];
        for mu in 0..m {
            joint[ra[mu] as usize * s + rb[mu] as usize] += w * prior[mu];
        }
    }
    joint_mutual_information(&joint, s)
}

/// `c log2 c` for small counts.
fn clogc(c: u32) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        (0..4096u32)
            .map(|c| if c == 0 { 0.0 } else { c as f64 * (c as f64).log2() })
            .collect()
    });
    match table.get(c as usize) {
        Some(&v) => v,
        None => c as f64 * (c as f64).log2(),
    }
}

/// Mutual information of a symmetric table of counts.
fn count_mutual_information(counts: &[u32], s: usize) -> f64 {
    let mut cells = 0.0;
    let mut margins = 0.0;
    let mut total = 0u64;
    for x in 0..s {
        let row = &counts[x * s..(x + 1) * s];
        let r: u32 = row.iter().sum();
        cells += row.iter().map(|&c| clogc(c)).sum::<f64>();
        margins += clogc(r);
        total += r as u64;
    }
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    ((cells - 2.0 * margins + t * t.log2()) / t).max(0.0)
}

fn joint_mutual_information(joint: &[f64], s: usize) -> f64 {
    let mut row = vec![0.0; s];
    let mut col = vec![0.0; s];
    for x in 0..s {
        for y in 0..s {
            let p = joint[x * s + y];
            row[x] += p;
            col[y] += p;
        }
    }
    let mut mi = 0.0;
    for x in 0..s {
        if row[x] == 0.0 {
            continue;
        }
        for y in 0..s {
            let p = joint[x * s + y];
            if p > 0.0 {
                mi += p * (p / (row[x] * col[y])).log2();
            }
        }
    }
    mi.max(0.0)
}

/// One line of a run's log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub mutual_understanding: f64,
    pub blend_kl: Option<f64>,
    pub missing_info: Option<f64>,
    pub parasite_env_info: Option<f64>,
    pub parasite_symbol_mass: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub goal: Goal,
    pub records: Vec<GenerationRecord>,
}

impl RunHistory {
    pub fn new(goal: Goal) -> Self {
        RunHistory {
            goal,
            records: Vec::new(),
        }
    }

    pub fn last(&self) -> Option<&GenerationRecord> {
        self.records.last()
    }

    pub fn first(&self) -> Option<&GenerationRecord> {
        self.records.first()
    }
}

/// Stop when the best fitness has not improved by more than `1e-9` over the
/// last `stall_generations` generations, or `max_generations` is reached.
pub fn converged(h: &RunHistory, cfg: &GaConfig) -> bool {
    let Some(last) = h.records.last() else {
        return false;
    };
    if last.generation >= cfg.max_generations {
        return true;
    }
    let n = h.records.len();
    if n > cfg.stall_generations {
        let now = last.best_fitness;
        let then = h.records[n - 1 - cfg.stall_generations].best_fitness;
        let gain = if h.goal.maximizes() { now - then } else { then - now };
        return gain <= 1e-9;
    }
    false
}

/// Attack diagnostics of the best population of a generation; parasite
/// measures are averaged over parasites.
fn diagnose(pop: &Population, generation: usize, best: f64, mean: f64) -> Result<GenerationRecord> {
    let mut rec = GenerationRecord {
        generation,
        best_fitness: best,
        mean_fitness: mean,
        mutual_understanding: best,
        blend_kl: None,
        missing_info: None,
        parasite_env_info: None,
        parasite_symbol_mass: None,
    };
    let parasites: Vec<usize> = pop.parasites().iter().copied().collect();
    if parasites.is_empty() {
        return Ok(rec);
    }
    rec.parasite_symbol_mass = Some(parasite_symbol_mass(pop)?);
    let k = parasites.len() as f64;
    let (mut kl, mut miss, mut env) = (0.0, 0.0, 0.0);
    for &p in &parasites {
        kl += metrics::blend_kl(pop, AgentId(p))?;
        miss += metrics::missing_info(pop, AgentId(p))?;
        env += metrics::env_info(pop, AgentId(p))?;
    }
    rec.blend_kl = Some(kl / k);
    rec.missing_info = Some(miss / k);
    rec.parasite_env_info = Some(env / k);
    Ok(rec)
}

/// Probability mass the hosts put on symbols that some parasite emits.
pub fn parasite_symbol_mass(pop: &Population) -> Result<f64> {
    let usage = metrics::symbol_usage(pop, pop.parasites())?;
    let mut used = std::collections::BTreeSet::new();
    for &p in pop.parasites() {
        used.extend(pop.codes()[p].used_symbols());
    }
    Ok(used.into_iter().map(|x| usage.get(x)).sum())
}

fn better(goal: Goal, a: f64, b: f64) -> Ordering {
    if goal.maximizes() {
        b.total_cmp(&a)
    } else {
        a.total_cmp(&b)
    }
}

/// Runs the GA from `base` and returns the best population found.
pub fn evolve(base: &Population, goal: Goal, cfg: &GaConfig) -> Result<(Population, RunHistory)> {
    evolve_with(base, goal, cfg, |_| {})
}

/// [`evolve`] with a callback invoked after every generation.
pub fn evolve_with(
    base: &Population,
    goal: Goal,
    cfg: &GaConfig,
    mut observe: impl FnMut(&GenerationRecord),
) -> Result<(Population, RunHistory)> {
    cfg.validate()?;
    let land = Landscape::new(base, goal, cfg)?;
    let rate = cfg
        .mutation_rate
        .unwrap_or(1.0 / land.genome_len().max(1) as f64);
    let size = cfg.population_size;

    let mut pop: Vec<Genome> = (0..size)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(cfg.seed, 0, i as u64);
            if goal == Goal::Response {
                let seed = land.seed_genome(&mut rng);
                if i == 0 {
                    seed
                } else {
                    land.mutate(&seed, rate, &mut rng)
                }
            } else {
                land.random_genome(&mut rng)
            }
        })
        .collect();
    let mut fit: Vec<f64> = pop.par_iter().map(|g| land.fitness(g)).collect();

    let mut history = RunHistory::new(goal);
    let mut last_best: Option<(Genome, GenerationRecord)> = None;
    let mut generation = 0usize;
    loop {
        let mut order: Vec<usize> = (0..size).collect();
        order.sort_by(|&a, &b| better(goal, fit[a], fit[b]).then(a.cmp(&b)));
        let best = &pop[order[0]];
        let mean = fit.iter().sum::<f64>() / size as f64;
        let record = match &last_best {
            Some((g, rec)) if g == best => GenerationRecord {
                generation,
                mean_fitness: mean,
                ..rec.clone()
            },
            _ if base.parasites().is_empty() => GenerationRecord {
                generation,
                best_fitness: fit[order[0]],
                mean_fitness: mean,
                mutual_understanding: fit[order[0]],
                blend_kl: None,
                missing_info: None,
                parasite_env_info: None,
                parasite_symbol_mass: None,
            },
            _ if goal == Goal::Response => GenerationRecord {
                generation,
                best_fitness: fit[order[0]],
                mean_fitness: mean,
                mutual_understanding: fit[order[0]],
                blend_kl: None,
                missing_info: None,
                parasite_env_info: None,
                parasite_symbol_mass: Some(land.parasite_symbol_mass(best)),
            },
            _ => diagnose(&land.decode(best)?, generation, fit[order[0]], mean)?,
        };
        observe(&record);
        last_best = Some((best.clone(), record.clone()));
        history.records.push(record);
        if converged(&history, cfg) {
            break;
        }

        generation += 1;
        let mut rank = vec![0usize; size];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r;
        }
        let elites: Vec<usize> = order[..cfg.elitism_count].to_vec();
        let n_children = size - elites.len();
        let children: Vec<Genome> = (0..n_children.div_ceil(2))
            .into_par_iter()
            .flat_map_iter(|q| {
                let mut rng = stream(cfg.seed, generation as u64, q as u64);
                let pick = |rng: &mut ChaCha8Rng| {
                    (0..cfg.tournament_size)
                        .map(|_| rng.gen_range(0..size))
                        .min_by_key(|&i| rank[i])
                        .expect("tournament size is positive")
                };
                let pa = pick(&mut rng);
                let pb = pick(&mut rng);
                land.breed(&pop[pa], &pop[pb], cfg.crossover_rate, rate, &mut rng)
            })
            .collect();
        let child_fit: Vec<f64> = children.par_iter().map(|g| land.fitness(g)).collect();

        let mut next: Vec<Genome> = Vec::with_capacity(size);
        let mut next_fit = Vec::with_capacity(size);
        for &e in &elites {
            next.push(pop[e].clone());
            next_fit.push(fit[e]);
        }
        next.extend(children.into_iter().take(n_children));
        next_fit.extend(child_fit.into_iter().take(n_children));
        pop = next;
        fit = next_fit;
    }
    let (best, _) = last_best.expect("at least one generation");
    Ok((land.decode(&best)?, history))
}

/// Runs `restarts` independent GAs (seeds derived from `cfg.seed`) and keeps
/// the best final population; earlier runs win ties.
pub fn evolve_restarts(
    base: &Population,
    goal: Goal,
    cfg: &GaConfig,
    restarts: usize,
) -> Result<(Population, RunHistory)> {
    evolve_restarts_with(base, goal, cfg, restarts, |_, _| {})
}

/// [`evolve_restarts`] with a callback receiving the restart index and
/// each generation's record.
pub fn evolve_restarts_with(
    base: &Population,
    goal: Goal,
    cfg: &GaConfig,
    restarts: usize,
    mut observe: impl FnMut(usize, &GenerationRecord),
) -> Result<(Population, RunHistory)> {
    let mut best: Option<(Population, RunHistory)> = None;
    for r in 0..restarts.max(1) {
        let mut c = cfg.clone();
        c.seed = restart_seed(cfg.seed, r);
        let (p, h) = evolve_with(base, goal, &c, |rec| observe(r, rec))?;
        let f = h.last().map(|r| r.best_fitness).unwrap_or(f64::NAN);
        let replace = match &best {
            None => true,
            Some((_, bh)) => {
                let bf = bh.last().map(|r| r.best_fitness).unwrap_or(f64::NAN);
                better(goal, f, bf) == Ordering::Less && (f - bf).abs() > 1e-12
            }
        };
        if replace {
            best = Some((p, h));
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Seed of restart `r`; restart 0 uses the configured seed itself.
pub fn restart_seed(seed: u64, r: usize) -> u64 {
    if r == 0 {
        seed
    } else {
        seed ^ (r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::popmodel::{toy, toy_code, Environment, ToyCode};

    fn small_cfg(seed: u64) -> GaConfig {
        GaConfig {
            population_size: 40,
            max_generations: 200,
            stall_generations: 30,
            seed,
            ..GaConfig::default()
        }
    }

    fn baseline_pop(n: usize, m: usize, s: usize) -> Population {
        let codes = vec![Code::deterministic(&vec![0; m], s).unwrap(); n];
        let edges: Vec<(usize, usize)> = (1..n).map(|b| (0, b)).collect();
        Population::new(
            Environment::uniform(m),
            codes,
            [],
            InteractionGraph::edge_uniform(n, &edges).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn links_bitset() {
        let mut l = Links::zeros(130);
        l.set(0, true);
        l.set(64, true);
        l.set(129, true);
        assert_eq!(l.ones().collect::<Vec<_>>(), vec![0, 64, 129]);
        assert_eq!(l.count_ones(), 3);
        l.set(64, false);
        assert!(!l.get(64));
    }

    #[test]
    fn zero_rate_mutation_is_identity() {
        let land = Landscape::new(&baseline_pop(5, 3, 3), Goal::Baseline, &GaConfig::default())
            .unwrap();
        let mut rng = stream(1, 2, 3);
        let g = land.random_genome(&mut rng);
        assert_eq!(land.mutate(&g, 0.0, &mut rng), g);
    }

    #[test]
    fn full_rate_mutation_resamples_within_bounds() {
        let base = toy::pair();
        let land = Landscape::new(&base, Goal::Baseline, &GaConfig::default()).unwrap();
        let mut rng = stream(7, 0, 0);
        let g = land.random_genome(&mut rng);
        let mut seen = [false; 2];
        for _ in 0..50 {
            let h = land.mutate(&g, 1.0, &mut rng);
            for &x in &h.symbols {
                assert!(x < 2);
                seen[x as usize] = true;
            }
        }
        assert!(seen[0] && seen[1]);
    }

    #[test]
    fn mutation_is_reproducible() {
        let land = Landscape::new(&baseline_pop(6, 4, 4), Goal::Baseline, &GaConfig::default())
            .unwrap();
        let g = land.random_genome(&mut stream(3, 0, 0));
        let a = land.mutate(&g, 0.2, &mut stream(9, 1, 1));
        let b = land.mutate(&g, 0.2, &mut stream(9, 1, 1));
        assert_eq!(a, b);
    }

    #[test]
    fn crossover_of_equal_parents() {
        let land = Landscape::new(&baseline_pop(6, 4, 4), Goal::Baseline, &GaConfig::default())
            .unwrap();
        let g = land.random_genome(&mut stream(3, 0, 0));
        let (a, b) = land.crossover(&g, &g, &mut stream(4, 0, 0)).unwrap();
        assert_eq!(a, g);
        assert_eq!(b, g);
    }

    #[test]
    fn crossover_rejects_other_shapes() {
        let l1 = Landscape::new(&baseline_pop(6, 4, 4), Goal::Baseline, &GaConfig::default())
            .unwrap();
        let l2 = Landscape::new(&baseline_pop(5, 4, 4), Goal::Baseline, &GaConfig::default())
            .unwrap();
        let a = l1.random_genome(&mut stream(1, 0, 0));
        let b = l2.random_genome(&mut stream(1, 0, 0));
        assert!(l1.crossover(&a, &b, &mut stream(0, 0, 0)).is_err());
    }

    #[test]
    fn crossover_children_mix_parents() {
        let land = Landscape::new(&baseline_pop(6, 4, 4), Goal::Baseline, &GaConfig::default())
            .unwrap();
        let mut a = land.empty_genome();
        let mut b = land.empty_genome();
        a.symbols.iter_mut().for_each(|x| *x = 1);
        b.symbols.iter_mut().for_each(|x| *x = 2);
        for i in 0..a.links.len() {
            a.links.set(i, i % 2 == 0);
            b.links.set(i, i % 2 == 1);
        }
        let (c1, c2) = land.crossover(&a, &b, &mut stream(5, 0, 0)).unwrap();
        let (d1, _) = land.crossover(&a, &b, &mut stream(5, 0, 0)).unwrap();
        assert_eq!(c1, d1);
        for i in 0..c1.symbols.len() {
            assert_ne!(c1.symbols[i], c2.symbols[i]);
        }
        assert!(c1.symbols.contains(&1) && c1.symbols.contains(&2));
    }

    #[test]
    fn repair_links_isolated_agents() {
        let land = Landscape::new(&baseline_pop(4, 2, 2), Goal::Baseline, &GaConfig::default())
            .unwrap();
        let mut rng = stream(0, 0, 0);
        // pairs: (0,1) (0,2) (0,3) (1,2) (1,3) (2,3)
        let mut g = land.empty_genome();
        g.links.set(0, true);
        g.links.set(5, true);
        assert_eq!(land.repair(g.clone(), &mut rng), g);
        let mut g = land.empty_genome();
        g.links.set(0, true);
        g.links.set(1, true);
        let r = land.repair(g.clone(), &mut rng);
        assert_eq!(r.links.count_ones(), 3);
        assert!([2usize, 4, 5].iter().any(|&i| r.links.get(i)));

        let land = Landscape::new(&toy::pair(), Goal::Baseline, &GaConfig::default()).unwrap();
        let r = land.repair(land.empty_genome(), &mut rng);
        assert_eq!(r.links.ones().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn fast_fitness_matches_metrics() {
        let land = Landscape::new(&baseline_pop(7, 4, 3), Goal::Baseline, &GaConfig::default())
            .unwrap();
        for k in 0..20 {
            let g = land.random_genome(&mut stream(k, 0, 0));
            let pop = land.decode(&g).unwrap();
            let exact = metrics::mutual_understanding(&pop).unwrap();
            assert!((land.fitness(&g) - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn fast_fitness_matches_metrics_with_skewed_prior() {
        let prior = crate::probkit::Dist1::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let template = baseline_pop(6, 4, 3);
        let with = |parasites: Vec<usize>| {
            Population::new(
                Environment::new(prior.clone()).unwrap(),
                template.codes().to_vec(),
                parasites,
                template.graph().clone(),
            )
            .unwrap()
        };
        for (goal, base) in [
            (Goal::Baseline, with(vec![])),
            (Goal::Attack, with(vec![5])),
            (Goal::Response, with(vec![5])),
        ] {
            let land = Landscape::new(&base, goal, &GaConfig::default()).unwrap();
            for k in 0..20 {
                let g = land.random_genome(&mut stream(k, 1, 0));
                let exact = metrics::mutual_understanding(&land.decode(&g).unwrap()).unwrap();
                assert!((land.fitness(&g) - exact).abs() < 1e-12, "{goal:?}");
            }
        }
    }

    #[test]
    fn genome_symbol_mass_matches_decoded() {
        let base = toy::two_subpopulations_with_parasite(&toy_code(ToyCode::Phi2), 0b0111)
            .unwrap()
            .widen_alphabet(4)
            .unwrap();
        for goal in [Goal::Attack, Goal::Response] {
            let land = Landscape::new(&base, goal, &GaConfig::default()).unwrap();
            for k in 0..10 {
                let g = land.random_genome(&mut stream(k, 0, 0));
                let exact = parasite_symbol_mass(&land.decode(&g).unwrap()).unwrap();
                assert!((land.parasite_symbol_mass(&g) - exact).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn convergence_rule() {
        let cfg = GaConfig {
            max_generations: 10,
            stall_generations: 3,
            ..GaConfig::default()
        };
        let rec = |g: usize, f: f64| GenerationRecord {
            generation: g,
            best_fitness: f,
            mean_fitness: f,
            mutual_understanding: f,
            blend_kl: None,
            missing_info: None,
            parasite_env_info: None,
            parasite_symbol_mass: None,
        };
        let mut h = RunHistory::new(Goal::Baseline);
        assert!(!converged(&h, &cfg));
        for (g, f) in [0.1, 0.2, 0.5, 0.5, 0.5, 0.5].iter().enumerate() {
            h.records.push(rec(g, *f));
        }
        assert!(converged(&h, &cfg));
        h.records.truncate(5);
        assert!(!converged(&h, &cfg));
        let mut up = RunHistory::new(Goal::Baseline);
        for g in 0..6 {
            up.records.push(rec(g, g as f64));
        }
        assert!(!converged(&up, &cfg));
        for g in 6..=10 {
            up.records.push(rec(g, g as f64));
        }
        assert!(converged(&up, &cfg));
        // minimization: falling values are improvements
        let mut down = RunHistory::new(Goal::Attack);
        for g in 0..6 {
            down.records.push(rec(g, -(g as f64)));
        }
        assert!(!converged(&down, &cfg));
    }

    #[test]
    fn goal_population_mismatch() {
        let cfg = GaConfig::default();
        assert!(evolve(&toy::pair(), Goal::Attack, &cfg).is_err());
        assert!(evolve(&toy::pair(), Goal::Response, &cfg).is_err());
        assert!(evolve(&toy::pair_with_parasite(), Goal::Baseline, &cfg).is_err());
        let bad = GaConfig {
            elitism_count: 500,
            ..GaConfig::default()
        };
        assert!(matches!(
            evolve(&toy::pair(), Goal::Baseline, &bad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn attack_on_pair_finds_opposite_code() {
        let (pop, hist) = evolve(&toy::pair_with_parasite(), Goal::Attack, &small_cfg(11)).unwrap();
        assert!(hist.last().unwrap().best_fitness.abs() < 1e-9);
        assert_eq!(pop.code(AgentId(2)), &toy_code(ToyCode::Phi2));
        assert_eq!(pop.graph().degree(2), 1);
    }

    #[test]
    fn response_keeps_structure_and_is_monotone() {
        let base = toy::pair_with_parasite().widen_alphabet(4).unwrap();
        let (pop, hist) = evolve(&base, Goal::Response, &small_cfg(5)).unwrap();
        assert_eq!(pop.graph(), base.graph());
        assert_eq!(pop.code(AgentId(2)), base.code(AgentId(2)));
        for w in hist.records.windows(2) {
            assert!(w[1].best_fitness >= w[0].best_fitness);
        }
        assert!(hist.last().unwrap().parasite_symbol_mass.is_some());
    }
}
