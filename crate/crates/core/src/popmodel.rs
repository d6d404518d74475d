//! Agents, codes, interaction structure, and the joint distributions they
//! induce over environment states and exchanged messages.
//!
//! Symbols and states are 0-based internally: the symbol written `x1` in
//! reports is index 0 here.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probkit::{Dist1, Dist2, Dist3, NORM_TOL};

/// Distribution over environment states.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    prior: Dist1,
}

impl Environment {
    pub fn uniform(states: usize) -> Self {
        Environment {
            prior: Dist1::uniform(states),
        }
    }

    pub fn new(prior: Dist1) -> Result<Self> {
        if prior.len() < 2 {
            return Err(Error::Usage(
                "an environment needs at least two states".into(),
            ));
        }
        Ok(Environment { prior })
    }

    pub(crate) fn new_unchecked(prior: Dist1) -> Self {
        Environment { prior }
    }

    pub fn num_states(&self) -> usize {
        self.prior.len()
    }

    pub fn prior(&self) -> &Dist1 {
        &self.prior
    }
}

/// An agent's encoder: one distribution over symbols per environment state.
#[derive(Debug, Clone)]
pub struct Code {
    states: usize,
    alphabet: usize,
    table: Vec<f64>,
    support: Vec<Vec<(usize, f64)>>,
}

impl PartialEq for Code {
    fn eq(&self, other: &Self) -> bool {
        self.states == other.states && self.alphabet == other.alphabet && self.table == other.table
    }
}

impl Code {
    /// Deterministic code sending state `mu` to `symbols[mu]`.
    pub fn deterministic(symbols: &[usize], alphabet: usize) -> Result<Self> {
        if let Some((mu, &x)) = symbols.iter().enumerate().find(|(_, &x)| x >= alphabet) {
            return Err(Error::Usage(format!(
                "state {mu} maps to symbol {x}, outside alphabet of {alphabet}"
            )));
        }
        let mut table = vec![0.0; symbols.len() * alphabet];
        for (mu, &x) in symbols.iter().enumerate() {
            table[mu * alphabet + x] = 1.0;
        }
        Ok(Self::from_table_unchecked(symbols.len(), alphabet, table))
    }

    /// Row-stochastic code from a dense `states x alphabet` table.
    pub fn from_table(states: usize, alphabet: usize, table: Vec<f64>) -> Result<Self> {
        let code = Self::from_table_unchecked(states, alphabet, table);
        let issues = code.row_issues();
        if let Some((row, msg)) = issues.into_iter().next() {
            return Err(Error::InvalidDistribution(format!("code row {row}: {msg}")));
        }
        Ok(code)
    }

    /// Builds a code without checking its rows; see [`Population::validate`].
    pub fn from_table_unchecked(states: usize, alphabet: usize, table: Vec<f64>) -> Self {
        assert_eq!(table.len(), states * alphabet, "table shape");
        let support = table
            .chunks_exact(alphabet.max(1))
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &p)| p != 0.0)
                    .map(|(x, &p)| (x, p))
                    .collect()
            })
            .collect();
        Code {
            states,
            alphabet,
            table,
            support,
        }
    }

    fn row_issues(&self) -> Vec<(usize, String)> {
        let mut out = Vec::new();
        for mu in 0..self.states {
            let row = self.row(mu);
            if let Some((x, p)) = row
                .iter()
                .enumerate()
                .find(|(_, &p)| !p.is_finite() || p < 0.0)
            {
                out.push((mu, format!("symbol {x} has probability {p}")));
                continue;
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > NORM_TOL {
                out.push((mu, format!("row sums to {total}, expected 1")));
            }
        }
        out
    }

    pub fn num_states(&self) -> usize {
        self.states
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet
    }

    pub fn row(&self, mu: usize) -> &[f64] {
        &self.table[mu * self.alphabet..(mu + 1) * self.alphabet]
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    /// Non-zero entries of row `mu`.
    pub fn support(&self, mu: usize) -> &[(usize, f64)] {
        &self.support[mu]
    }

    pub fn is_deterministic(&self) -> bool {
        self.support.iter().all(|s| s.len() == 1 && s[0].1 == 1.0)
    }

    /// The state-to-symbol map, if every row is a point mass.
    pub fn as_deterministic(&self) -> Option<Vec<usize>> {
        self.support
            .iter()
            .map(|s| match s.as_slice() {
                [(x, p)] if *p == 1.0 => Some(*x),
                _ => None,
            })
            .collect()
    }

    /// Symbols with positive probability in some state, ascending.
    pub fn used_symbols(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.support.iter().flatten().map(|&(x, _)| x).collect();
        set.into_iter().collect()
    }

    /// Same code over a larger alphabet; new symbols are never emitted.
    pub fn widen(&self, alphabet: usize) -> Result<Code> {
        if alphabet < self.alphabet {
            return Err(Error::Usage(format!(
                "cannot shrink alphabet from {} to {alphabet}",
                self.alphabet
            )));
        }
        let mut table = vec![0.0; self.states * alphabet];
        for mu in 0..self.states {
            table[mu * alphabet..mu * alphabet + self.alphabet].copy_from_slice(self.row(mu));
        }
        Ok(Code::from_table_unchecked(self.states, alphabet, table))
    }

    /// Maximum per-entry difference between two codes of equal shape.
    pub fn max_abs_diff(&self, other: &Code) -> f64 {
        if self.states != other.states || self.alphabet != other.alphabet {
            return f64::INFINITY;
        }
        self.table
            .iter()
            .zip(&other.table)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// The four 4-state, 2-symbol deterministic codes used in the small examples.
///
/// Types 1 and 2 capture the first bit of the state, types 3 and 4 the
/// second bit. States are numbered 0..4 left to right, top to bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ToyCode {
    Phi1,
    Phi2,
    Phi3,
    Phi4,
}

impl ToyCode {
    pub const ALL: [ToyCode; 4] = [ToyCode::Phi1, ToyCode::Phi2, ToyCode::Phi3, ToyCode::Phi4];

    pub fn symbols(self) -> [usize; 4] {
        match self {
            ToyCode::Phi1 => [1, 1, 0, 0],
            ToyCode::Phi2 => [0, 0, 1, 1],
            ToyCode::Phi3 => [0, 1, 0, 1],
            ToyCode::Phi4 => [1, 0, 1, 0],
        }
    }
}

pub fn toy_code(kind: ToyCode) -> Code {
    Code::deterministic(&kind.symbols(), 2).expect("toy codes are in range")
}

/// Moves every symbol of `code` by `offset` positions within its alphabet:
/// `p'(x + offset | mu) = p(x | mu)`.
pub fn synonym_shift(code: &Code, offset: isize) -> Result<Code> {
    let s = code.alphabet as isize;
    let mut table = vec![0.0; code.table.len()];
    for mu in 0..code.states {
        for &(x, p) in code.support(mu) {
            let y = x as isize + offset;
            if y < 0 || y >= s {
                return Err(Error::Usage(format!(
                    "shifting symbol {x} by {offset} leaves the alphabet of {s} symbols"
                )));
            }
            table[mu * code.alphabet + y as usize] = p;
        }
    }
    Ok(Code::from_table_unchecked(code.states, code.alphabet, table))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentId(pub usize);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "agent {}", self.0)
    }
}

/// Joint probability of interaction over ordered agent pairs, dense `n x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionGraph {
    n: usize,
    w: Vec<f64>,
    /// Positive entries of each row.
    adj: Vec<Vec<(usize, f64)>>,
}

impl InteractionGraph {
    fn build(n: usize, w: Vec<f64>) -> Self {
        let adj = (0..n)
            .map(|a| {
                w[a * n..(a + 1) * n]
                    .iter()
                    .enumerate()
                    .filter(|(_, &x)| x > 0.0)
                    .map(|(b, &x)| (b, x))
                    .collect()
            })
            .collect();
        InteractionGraph { n, w, adj }
    }

    /// Every undirected edge gets the same mass, split evenly between its two
    /// orientations: `w(a, b) = w(b, a) = 1 / (2 |E|)`. Duplicate edges are
    /// collapsed.
    pub fn edge_uniform(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let set: BTreeSet<(usize, usize)> = edges
            .iter()
            .map(|&(a, b)| if a <= b { (a, b) } else { (b, a) })
            .collect();
        if set.is_empty() {
            return Err(Error::Usage("graph needs at least one edge".into()));
        }
        if let Some(&(a, b)) = set.iter().find(|&&(a, b)| b >= n || a == b) {
            return Err(Error::Usage(format!(
                "edge ({a}, {b}) is a self-loop or out of range for {n} agents"
            )));
        }
        let weight = 1.0 / (2.0 * set.len() as f64);
        let mut w = vec![0.0; n * n];
        for (a, b) in set {
            w[a * n + b] = weight;
            w[b * n + a] = weight;
        }
        Ok(Self::build(n, w))
    }

    /// Dense matrix, unchecked; see [`Population::validate`].
    pub fn from_matrix(n: usize, w: Vec<f64>) -> Self {
        assert_eq!(w.len(), n * n, "matrix shape");
        Self::build(n, w)
    }

    /// Symmetric graph from undirected `(a, b, weight)` triples, where the
    /// weight applies to each orientation. Unchecked.
    pub fn from_weighted_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut w = vec![0.0; n * n];
        for &(a, b, x) in edges {
            if a >= n || b >= n {
                return Err(Error::Usage(format!(
                    "edge ({a}, {b}) out of range for {n} agents"
                )));
            }
            w[a * n + b] += x;
            if a != b {
                w[b * n + a] += x;
            }
        }
        Ok(Self::build(n, w))
    }

    pub fn num_agents(&self) -> usize {
        self.n
    }

    pub fn weight(&self, a: usize, b: usize) -> f64 {
        self.w[a * self.n + b]
    }

    pub fn matrix(&self) -> &[f64] {
        &self.w
    }

    /// Positive-weight partners of `a` with the pair weight.
    pub fn neighbors(&self, a: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.adj[a].iter().copied()
    }

    pub fn degree(&self, a: usize) -> usize {
        self.neighbors(a).filter(|&(b, _)| b != a).count()
    }

    /// `p(theta)`: the row sums.
    pub fn agent_marginal(&self) -> Vec<f64> {
        self.w
            .chunks_exact(self.n.max(1))
            .map(|r| r.iter().sum())
            .collect()
    }

    /// Undirected edges `a < b` with positive weight, in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for a in 0..self.n {
            for b in (a + 1)..self.n {
                let x = self.weight(a, b);
                if x > 0.0 || self.weight(b, a) > 0.0 {
                    out.push((a, b, x));
                }
            }
        }
        out
    }
}

/// Who is conditioned on when building `p(mu, x, x')`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// `Theta = agent`: the agent produced `x`.
    Sender(AgentId),
    /// `Theta' = agent`: the agent produced `x'`.
    Receiver(AgentId),
}

/// Agents with their codes, the interaction graph and the environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    environment: Environment,
    alphabet: usize,
    codes: Vec<Code>,
    parasites: BTreeSet<usize>,
    graph: InteractionGraph,
    checked: Checked,
}

/// Set once a population has passed validation. Populations are immutable,
/// so the flag never goes stale; it takes no part in equality.
#[derive(Debug, Clone, Copy, Default)]
struct Checked(bool);

impl PartialEq for Checked {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl Population {
    /// Builds and validates a population.
    pub fn new(
        environment: Environment,
        codes: Vec<Code>,
        parasites: impl IntoIterator<Item = usize>,
        graph: InteractionGraph,
    ) -> Result<Self> {
        let mut pop = Self::new_unchecked(environment, codes, parasites, graph);
        pop.validate().map_err(Error::Validation)?;
        pop.checked = Checked(true);
        Ok(pop)
    }

    /// Builds without validation. The alphabet is taken from the first code.
    pub fn new_unchecked(
        environment: Environment,
        codes: Vec<Code>,
        parasites: impl IntoIterator<Item = usize>,
        graph: InteractionGraph,
    ) -> Self {
        let alphabet = codes.first().map_or(0, |c| c.alphabet);
        Population {
            environment,
            alphabet,
            codes,
            parasites: parasites.into_iter().collect(),
            graph,
            checked: Checked(false),
        }
    }

    pub fn environment(&self) -> &Environment {
        &self.environment
    }

    pub fn num_states(&self) -> usize {
        self.environment.num_states()
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet
    }

    pub fn num_agents(&self) -> usize {
        self.codes.len()
    }

    pub fn codes(&self) -> &[Code] {
        &self.codes
    }

    pub fn code(&self, agent: AgentId) -> &Code {
        &self.codes[agent.0]
    }

    pub fn graph(&self) -> &InteractionGraph {
        &self.graph
    }

    pub fn parasites(&self) -> &BTreeSet<usize> {
        &self.parasites
    }

    pub fn is_parasite(&self, agent: AgentId) -> bool {
        self.parasites.contains(&agent.0)
    }

    pub fn hosts(&self) -> impl Iterator<Item = AgentId> + '_ {
        (0..self.codes.len())
            .filter(|i| !self.parasites.contains(i))
            .map(AgentId)
    }

    /// Same population with different codes. Validated.
    pub fn with_codes(&self, codes: Vec<Code>) -> Result<Self> {
        Population::new(
            self.environment.clone(),
            codes,
            self.parasites.iter().copied(),
            self.graph.clone(),
        )
    }

    /// Same population with a different graph. Validated.
    pub fn with_graph(&self, graph: InteractionGraph) -> Result<Self> {
        Population::new(
            self.environment.clone(),
            self.codes.clone(),
            self.parasites.iter().copied(),
            graph,
        )
    }

    /// Every code re-expressed over a larger alphabet.
    pub fn widen_alphabet(&self, alphabet: usize) -> Result<Self> {
        let codes = self
            .codes
            .iter()
            .map(|c| c.widen(alphabet))
            .collect::<Result<Vec<_>>>()?;
        self.with_codes(codes)
    }

    /// Checks every structural invariant and reports all violations.
    pub fn validate(&self) -> std::result::Result<(), ValidationReport> {
        validate(self)
    }

    pub(crate) fn ensure_valid(&self) -> Result<()> {
        if self.checked.0 {
            return Ok(());
        }
        self.validate().map_err(Error::Validation)
    }

    fn conditional_weights(&self, agent: AgentId) -> Result<(f64, Vec<(usize, f64)>)> {
        if agent.0 >= self.num_agents() {
            return Err(Error::Usage(format!("{agent} does not exist")));
        }
        let row: Vec<(usize, f64)> = self.graph.neighbors(agent.0).collect();
        let total: f64 = row.iter().map(|&(_, w)| w).sum();
        if total <= 0.0 {
            return Err(Error::DegenerateConditioning(agent.0));
        }
        Ok((total, row))
    }
}

/// Location of a validation failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Location {
    Environment,
    Population,
    Code { agent: usize, row: Option<usize> },
    GraphCell { row: usize, col: usize },
    Graph,
    Agent { agent: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub location: Location,
    pub message: String,
}

/// All invariant violations found in a population.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn push(&mut self, location: Location, message: impl Into<String>) {
        self.violations.push(Violation {
            location,
            message: message.into(),
        });
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  {:?}: {}", v.location, v.message)?;
        }
        Ok(())
    }
}

/// Checks every invariant of a population, collecting all violations.
pub fn validate(pop: &Population) -> std::result::Result<(), ValidationReport> {
    let mut report = ValidationReport::default();
    let m = pop.num_states();
    let n = pop.num_agents();
    if m < 2 {
        report.push(Location::Environment, "environment needs at least two states");
    }
    let prior = pop.environment().prior().probs();
    if let Some(p) = prior.iter().find(|p| !p.is_finite() || **p < 0.0) {
        report.push(Location::Environment, format!("prior entry {p} is not a probability"));
    }
    let total: f64 = prior.iter().sum();
    if (total - 1.0).abs() > NORM_TOL {
        report.push(Location::Environment, format!("prior sums to {total}, expected 1"));
    }
    if n == 0 {
        report.push(Location::Population, "population has no agents");
    }
    for (agent, code) in pop.codes.iter().enumerate() {
        if code.states != m {
            report.push(
                Location::Code { agent, row: None },
                format!("code covers {} states, environment has {m}", code.states),
            );
        }
        if code.alphabet != pop.alphabet {
            report.push(
                Location::Code { agent, row: None },
                format!(
                    "alphabet of {} symbols differs from population alphabet {}",
                    code.alphabet, pop.alphabet
                ),
            );
        }
        for (row, msg) in code.row_issues() {
            report.push(
                Location::Code {
                    agent,
                    row: Some(row),
                },
                format!("normalization: {msg}"),
            );
        }
    }
    for &p in &pop.parasites {
        if p >= n {
            report.push(
                Location::Agent { agent: p },
                format!("parasite index {p} out of range for {n} agents"),
            );
        }
    }
    let g = &pop.graph;
    if g.n != n {
        report.push(
            Location::Graph,
            format!("graph has {} agents, population has {n}", g.n),
        );
        return Err(report);
    }
    let mut total = 0.0;
    for a in 0..n {
        for b in 0..n {
            let x = g.weight(a, b);
            total += x;
            if !x.is_finite() || x < 0.0 {
                report.push(
                    Location::GraphCell { row: a, col: b },
                    format!("weight {x} must be a finite non-negative probability"),
                );
            }
            if a == b && x != 0.0 {
                report.push(
                    Location::GraphCell { row: a, col: b },
                    "self-interaction excluded: diagonal weight must be zero",
                );
            }
            if b > a && (x - g.weight(b, a)).abs() > 1e-15 {
                report.push(
                    Location::GraphCell { row: a, col: b },
                    format!(
                        "interactions must be symmetric: w({a},{b}) = {x}, w({b},{a}) = {}",
                        g.weight(b, a)
                    ),
                );
            }
        }
    }
    if (total - 1.0).abs() > NORM_TOL {
        report.push(
            Location::Graph,
            format!("interaction probabilities sum to {total}, expected 1"),
        );
    }
    for a in 0..n {
        if !g.neighbors(a).any(|(b, _)| b != a) {
            report.push(
                Location::Agent { agent: a },
                "agent has no interactions (isolated)",
            );
        }
    }
    if report.is_empty() {
        Ok(())
    } else {
        Err(report)
    }
}

/// `p(x, x')`: messages of a randomly chosen interacting pair.
pub fn joint_messages(pop: &Population) -> Result<Dist2> {
    pop.ensure_valid()?;
    let s = pop.alphabet;
    let prior = pop.environment.prior.probs();
    let mut j = vec![0.0; s * s];
    for a in 0..pop.num_agents() {
        let ca = &pop.codes[a];
        for (b, w) in pop.graph.neighbors(a) {
            let cb = &pop.codes[b];
            for (mu, &pm) in prior.iter().enumerate() {
                let base = w * pm;
                if base == 0.0 {
                    continue;
                }
                for &(x, px) in ca.support(mu) {
                    let row = &mut j[x * s..(x + 1) * s];
                    for &(y, py) in cb.support(mu) {
                        row[y] += base * px * py;
                    }
                }
            }
        }
    }
    Dist2::new(s, s, j)
}

/// `p(mu, x, x')`, optionally conditioned on one agent's role.
pub fn joint_messages_env(pop: &Population, condition: Option<Role>) -> Result<Dist3> {
    pop.ensure_valid()?;
    let m = pop.num_states();
    let s = pop.alphabet;
    let prior = pop.environment.prior.probs();
    let mut j = vec![0.0; m * s * s];
    let mut add = |mu: usize, sender: &Code, receiver: &Code, w: f64| {
        let base = w * prior[mu];
        if base == 0.0 {
            return;
        }
        for &(x, px) in sender.support(mu) {
            let off = (mu * s + x) * s;
            for &(y, py) in receiver.support(mu) {
                j[off + y] += base * px * py;
            }
        }
    };
    match condition {
        None => {
            for a in 0..pop.num_agents() {
                for (b, w) in pop.graph.neighbors(a) {
                    for mu in 0..m {
                        add(mu, &pop.codes[a], &pop.codes[b], w);
                    }
                }
            }
        }
        Some(Role::Sender(agent)) => {
            let (total, row) = pop.conditional_weights(agent)?;
            let own = &pop.codes[agent.0];
            for (b, w) in row {
                for mu in 0..m {
                    add(mu, own, &pop.codes[b], w / total);
                }
            }
        }
        Some(Role::Receiver(agent)) => {
            // the graph is symmetric, so column sums equal row sums
            let (total, row) = pop.conditional_weights(agent)?;
            let own = &pop.codes[agent.0];
            for (a, _) in row {
                let w = pop.graph.weight(a, agent.0);
                for mu in 0..m {
                    add(mu, &pop.codes[a], own, w / total);
                }
            }
        }
    }
    Dist3::new([m, s, s], j)
}

/// `p(theta, x, x')` with `theta` the sender.
pub fn joint_agent_messages(pop: &Population) -> Result<Dist3> {
    pop.ensure_valid()?;
    let n = pop.num_agents();
    let s = pop.alphabet;
    let prior = pop.environment.prior.probs();
    let mut j = vec![0.0; n * s * s];
    for a in 0..n {
        let ca = &pop.codes[a];
        for (b, w) in pop.graph.neighbors(a) {
            let cb = &pop.codes[b];
            for (mu, &pm) in prior.iter().enumerate() {
                for &(x, px) in ca.support(mu) {
                    let off = (a * s + x) * s;
                    for &(y, py) in cb.support(mu) {
                        j[off + y] += w * pm * px * py;
                    }
                }
            }
        }
    }
    Dist3::new([n, s, s], j)
}

pub mod snapshot;

/// Small hand-analysable populations built from the four toy codes.
pub mod toy {
    use super::*;

    fn build(codes: &[ToyCode], edges: &[(usize, usize)], parasites: &[usize]) -> Population {
        Population::new(
            Environment::uniform(4),
            codes.iter().map(|&c| toy_code(c)).collect(),
            parasites.iter().copied(),
            InteractionGraph::edge_uniform(codes.len(), edges).expect("toy edges"),
        )
        .expect("toy populations are valid")
    }

    /// Two agents of type 1 interacting only with each other.
    pub fn pair() -> Population {
        build(&[ToyCode::Phi1, ToyCode::Phi1], &[(0, 1)], &[])
    }

    /// The pair plus a parasite of type 2 attached to agent 0.
    pub fn pair_with_parasite() -> Population {
        build(
            &[ToyCode::Phi1, ToyCode::Phi1, ToyCode::Phi2],
            &[(0, 1), (0, 2)],
            &[2],
        )
    }

    /// Agents 0,1 of type 1 and agents 2,3 of type 3, in two separate pairs.
    pub fn two_subpopulations() -> Population {
        build(
            &[ToyCode::Phi1, ToyCode::Phi1, ToyCode::Phi3, ToyCode::Phi3],
            &[(0, 1), (2, 3)],
            &[],
        )
    }

    /// The two pairs plus parasite 4 with the given code and host links
    /// (bit `i` of `links` connects host `i`).
    pub fn two_subpopulations_with_parasite(code: &Code, links: u8) -> Result<Population> {
        let mut codes: Vec<Code> = two_subpopulations().codes.clone();
        codes.push(code.clone());
        let mut edges = vec![(0, 1), (2, 3)];
        edges.extend((0..4).filter(|i| links >> i & 1 == 1).map(|i| (i, 4)));
        Population::new(
            Environment::uniform(4),
            codes,
            [4],
            InteractionGraph::edge_uniform(5, &edges)?,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probkit::mutual_information;

    #[test]
    fn toy_code_grids() {
        let c1 = toy_code(ToyCode::Phi1);
        assert_eq!(c1.as_deterministic().unwrap(), vec![1, 1, 0, 0]);
        let c3 = toy_code(ToyCode::Phi3);
        assert_eq!(c3.as_deterministic().unwrap(), vec![0, 1, 0, 1]);
        let c2 = toy_code(ToyCode::Phi2);
        let swapped: Vec<usize> = c1.as_deterministic().unwrap().iter().map(|x| 1 - x).collect();
        assert_eq!(c2.as_deterministic().unwrap(), swapped);
    }

    #[test]
    fn pair_joint_is_diagonal() {
        let j = joint_messages(&toy::pair()).unwrap();
        assert_eq!(j.probs(), &[0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn pair_with_parasite_joint_is_uniform() {
        let j = joint_messages(&toy::pair_with_parasite()).unwrap();
        for &p in j.probs() {
            assert!((p - 0.25).abs() < 1e-15);
        }
        assert_eq!(mutual_information(&j), 0.0);
    }

    #[test]
    fn single_edge_env_joint() {
        let j = joint_messages_env(&toy::pair(), None).unwrap();
        let sym = [1, 1, 0, 0];
        for mu in 0..4 {
            for x in 0..2 {
                for y in 0..2 {
                    let expect = if x == sym[mu] && y == sym[mu] { 0.25 } else { 0.0 };
                    assert_eq!(j.get(mu, x, y), expect);
                }
            }
        }
    }

    #[test]
    fn single_pair_agent_marginal() {
        let j = joint_agent_messages(&toy::pair()).unwrap();
        let m = j.marginal(crate::probkit::Axis::First);
        assert_eq!(m.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn shift_relabels_and_inverts() {
        let c = toy_code(ToyCode::Phi1).widen(4).unwrap();
        let s = synonym_shift(&c, 2).unwrap();
        assert_eq!(s.as_deterministic().unwrap(), vec![3, 3, 2, 2]);
        assert_eq!(synonym_shift(&s, -2).unwrap(), c);
        assert!(synonym_shift(&s, 1).is_err());
        assert!(synonym_shift(&c, -1).is_err());
    }

    #[test]
    fn validation_reports_every_violation() {
        assert!(toy::pair().validate().is_ok());

        let codes = vec![toy_code(ToyCode::Phi1), toy_code(ToyCode::Phi1)];
        let g = InteractionGraph::from_matrix(2, vec![0.1, 0.4, 0.4, 0.1]);
        let pop = Population::new_unchecked(Environment::uniform(4), codes, [], g);
        let report = pop.validate().unwrap_err();
        let diag = report
            .violations
            .iter()
            .filter(|v| v.message.contains("self-interaction excluded"))
            .count();
        assert_eq!(diag, 2);

        let mut table = toy_code(ToyCode::Phi1).table().to_vec();
        // row 0 becomes (0.9, 0.0)
        table[0] = 0.9;
        table[1] = 0.0;
        let bad = Code::from_table_unchecked(4, 2, table);
        let pop = Population::new_unchecked(
            Environment::uniform(4),
            vec![bad, toy_code(ToyCode::Phi1), toy_code(ToyCode::Phi1)],
            [],
            InteractionGraph::edge_uniform(3, &[(0, 1)]).unwrap(),
        );
        let report = pop.validate().unwrap_err();
        assert!(report.violations.iter().any(|v| v.location
            == Location::Code {
                agent: 0,
                row: Some(0)
            }
            && v.message.contains("normalization")));
        assert!(report
            .violations
            .iter()
            .any(|v| v.location == Location::Agent { agent: 2 }));
    }

    #[test]
    fn degenerate_conditioning() {
        let g = InteractionGraph::from_matrix(2, vec![0.0; 4]);
        let pop = Population::new_unchecked(
            Environment::uniform(4),
            vec![toy_code(ToyCode::Phi1); 2],
            [],
            g,
        );
        assert!(pop.conditional_weights(AgentId(0)).is_err());
    }
}
