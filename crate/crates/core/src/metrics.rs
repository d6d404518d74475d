//! Named population measures, code distances and structure analysis.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::popmodel::{
    joint_agent_messages, joint_messages, joint_messages_env, AgentId, Code, Population, Role,
};
use crate::probkit::{
    conditional_mutual_information, js_raw, kl_divergence, mutual_information, Axis, Dist1, Dist2,
};

/// `I(X; X')` of the population's joint message distribution.
pub fn mutual_understanding(pop: &Population) -> Result<f64> {
    Ok(mutual_information(&joint_messages(pop)?))
}

/// `I(mu; X, X' | Theta = agent)`: what an agent knows about the environment
/// from its own message together with its partners'.
pub fn env_info(pop: &Population, agent: AgentId) -> Result<f64> {
    let j = joint_messages_env(pop, Some(Role::Sender(agent)))?;
    Ok(mutual_information(&j.split(Axis::First)))
}

/// Same measure with the agent in the receiving role. Equal to
/// [`env_info`] on every valid population because interactions are symmetric.
pub fn env_info_as_receiver(pop: &Population, agent: AgentId) -> Result<f64> {
    let j = joint_messages_env(pop, Some(Role::Receiver(agent)))?;
    Ok(mutual_information(&j.split(Axis::First)))
}

/// `I(mu; X, X')` over a random interacting pair, unconditioned on who speaks.
pub fn population_env_info(pop: &Population) -> Result<f64> {
    let j = joint_messages_env(pop, None)?;
    Ok(mutual_information(&j.split(Axis::First)))
}

/// `I(mu; X, X' | Theta)`: [`env_info`] averaged over agents by how often
/// each one interacts.
pub fn avg_env_info(pop: &Population) -> Result<f64> {
    pop.ensure_valid()?;
    let weights = pop.graph().agent_marginal();
    let per_agent = (0..pop.num_agents())
        .into_par_iter()
        .map(|a| env_info(pop, AgentId(a)))
        .collect::<Result<Vec<_>>>()?;
    Ok(weighted_mean(&weights, &per_agent))
}

fn weighted_mean(weights: &[f64], values: &[f64]) -> f64 {
    weights.iter().zip(values).map(|(w, v)| w * v).sum()
}

/// `I(mu; X | Theta = agent)`: what the agent's own code captures.
pub fn sensor_info(pop: &Population, agent: AgentId) -> Result<f64> {
    let code = pop.code(agent);
    let prior = pop.environment().prior().probs();
    let s = code.alphabet_size();
    let mut p = vec![0.0; prior.len() * s];
    for (mu, &pm) in prior.iter().enumerate() {
        for &(x, px) in code.support(mu) {
            p[mu * s + x] = pm * px;
        }
    }
    Ok(mutual_information(&Dist2::new(prior.len(), s, p)?))
}

/// `I(Theta; X, X')`: how much a pair of messages reveals about the sender.
pub fn identifiability(pop: &Population) -> Result<f64> {
    Ok(mutual_information(&joint_agent_messages(pop)?.split(Axis::First)))
}

/// Divergence of the parasite's message pairs from the population average,
/// `D_KL(p(X, X' | Theta = parasite) || p(X, X'))`. Small values mean the
/// parasite is hard to tell apart by its messages.
pub fn blend_kl(pop: &Population, parasite: AgentId) -> Result<f64> {
    let own = joint_messages_env(pop, Some(Role::Sender(parasite)))?
        .marginal2(Axis::Second, Axis::Third)?;
    let all = joint_messages(pop)?;
    let d = kl_divergence(&own, &all)?;
    debug_assert!(d.is_finite());
    Ok(d)
}

/// Environment information carried by the parasite's messages beyond the
/// message it is paired with: `I(mu; X' | X, Theta' = parasite)`.
pub fn missing_info(pop: &Population, parasite: AgentId) -> Result<f64> {
    let j = joint_messages_env(pop, Some(Role::Receiver(parasite)))?;
    conditional_mutual_information(&j, Axis::First, Axis::Second)
}

/// Distribution over symbols emitted by all agents not in `exclude`,
/// weighted by how often each agent interacts.
pub fn symbol_usage(pop: &Population, exclude: &BTreeSet<usize>) -> Result<Dist1> {
    pop.ensure_valid()?;
    let s = pop.alphabet_size();
    let prior = pop.environment().prior().probs();
    let marginal = pop.graph().agent_marginal();
    let mut usage = vec![0.0; s];
    for (a, code) in pop.codes().iter().enumerate() {
        if exclude.contains(&a) {
            continue;
        }
        for (mu, &pm) in prior.iter().enumerate() {
            for &(x, px) in code.support(mu) {
                usage[x] += marginal[a] * pm * px;
            }
        }
    }
    Dist1::from_weights(usage)
}

/// Measures of one parasite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParasiteMeasures {
    pub agent: usize,
    pub blend_kl: f64,
    pub missing_info: f64,
    pub env_info: f64,
    pub sensor_info: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub mutual_understanding: f64,
    pub per_agent_env_info: Vec<f64>,
    /// `I(mu; X, X' | Theta)`.
    pub avg_env_info: f64,
    /// `I(mu; X, X')` with the speakers unknown.
    pub pooled_env_info: f64,
    pub identifiability: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parasites: Vec<ParasiteMeasures>,
}

/// Computes every measure for a population.
pub fn measure(pop: &Population) -> Result<MeasureReport> {
    pop.ensure_valid()?;
    let per_agent_env_info = (0..pop.num_agents())
        .into_par_iter()
        .map(|a| env_info(pop, AgentId(a)))
        .collect::<Result<Vec<_>>>()?;
    let parasites = pop
        .parasites()
        .iter()
        .map(|&p| {
            let id = AgentId(p);
            Ok(ParasiteMeasures {
                agent: p,
                blend_kl: blend_kl(pop, id)?,
                missing_info: missing_info(pop, id)?,
                env_info: per_agent_env_info[p],
                sensor_info: sensor_info(pop, id)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MeasureReport {
        mutual_understanding: mutual_understanding(pop)?,
        avg_env_info: weighted_mean(&pop.graph().agent_marginal(), &per_agent_env_info),
        per_agent_env_info,
        pooled_env_info: population_env_info(pop)?,
        identifiability: identifiability(pop)?,
        parasites,
    })
}

/// `sqrt(sum_mu JSD(a(.|mu), b(.|mu)))`, a metric on codes bounded by
/// `sqrt(M)` for `M` states.
pub fn code_distance(a: &Code, b: &Code) -> Result<f64> {
    if a.num_states() != b.num_states() || a.alphabet_size() != b.alphabet_size() {
        return Err(Error::ShapeMismatch(format!(
            "codes of shape {}x{} and {}x{}",
            a.num_states(),
            a.alphabet_size(),
            b.num_states(),
            b.alphabet_size()
        )));
    }
    let total: f64 = (0..a.num_states())
        .map(|mu| js_raw(a.row(mu), b.row(mu)))
        .sum();
    Ok(total.sqrt())
}

/// Symmetric matrix of pairwise code distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(n: usize, d: Vec<f64>) -> Result<Self> {
        if d.len() != n * n {
            return Err(Error::ShapeMismatch(format!(
                "{n}x{n} matrix needs {} entries, got {}",
                n * n,
                d.len()
            )));
        }
        Ok(DistanceMatrix { n, d })
    }

    pub fn from_codes(codes: &[&Code]) -> Result<Self> {
        let n = codes.len();
        let rows = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            Ok(0.0)
                        } else {
                            code_distance(codes[i.min(j)], codes[i.max(j)])
                        }
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DistanceMatrix {
            n,
            d: rows.concat(),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.d
    }
}

pub fn distance_matrix(pop: &Population) -> Result<DistanceMatrix> {
    let codes: Vec<&Code> = pop.codes().iter().collect();
    DistanceMatrix::from_codes(&codes)
}

/// Agents sharing one code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeType {
    pub id: usize,
    pub agents: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub id: usize,
    pub agents: Vec<usize>,
    /// `(type id, number of agents of that type in the component)`, by type id.
    pub type_sizes: Vec<(usize, usize)>,
    /// Every edge joins agents of different types and the graph between
    /// types is two-colourable.
    pub bipartite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub types: Vec<CodeType>,
    pub components: Vec<Component>,
}

impl StructureReport {
    /// Type id of every agent.
    pub fn type_of(&self) -> Vec<usize> {
        let n = self.types.iter().map(|t| t.agents.len()).sum();
        let mut out = vec![0; n];
        for t in &self.types {
            for &a in &t.agents {
                out[a] = t.id;
            }
        }
        out
    }
}

fn same_type(a: &Code, b: &Code) -> bool {
    if a.is_deterministic() && b.is_deterministic() {
        a == b
    } else {
        a.max_abs_diff(b) < 1e-9
    }
}

/// Groups agents by code, finds connected components of the interaction
/// graph and tests each for bipartiteness between code types.
pub fn analyze_structure(pop: &Population) -> StructureReport {
    let n = pop.num_agents();
    let mut types: Vec<CodeType> = Vec::new();
    let mut type_of = vec![0usize; n];
    for (a, code) in pop.codes().iter().enumerate() {
        match types
            .iter_mut()
            .find(|t| same_type(&pop.codes()[t.agents[0]], code))
        {
            Some(t) => {
                t.agents.push(a);
                type_of[a] = t.id;
            }
            None => {
                type_of[a] = types.len();
                types.push(CodeType {
                    id: types.len(),
                    agents: vec![a],
                });
            }
        }
    }

    let g = pop.graph();
    let mut comp_of = vec![usize::MAX; n];
    let mut components = Vec::new();
    for start in 0..n {
        if comp_of[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut agents = vec![];
        let mut queue = VecDeque::from([start]);
        comp_of[start] = id;
        while let Some(a) = queue.pop_front() {
            agents.push(a);
            for (b, _) in g.neighbors(a) {
                if comp_of[b] == usize::MAX {
                    comp_of[b] = id;
                    queue.push_back(b);
                }
            }
        }
        agents.sort_unstable();

        let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
        for &a in &agents {
            *sizes.entry(type_of[a]).or_default() += 1;
        }
        let mut type_edges: BTreeSet<(usize, usize)> = BTreeSet::new();
        let mut intra = false;
        for &a in &agents {
            for (b, _) in g.neighbors(a) {
                let (ta, tb) = (type_of[a], type_of[b]);
                if ta == tb {
                    intra = true;
                } else {
                    type_edges.insert((ta.min(tb), ta.max(tb)));
                }
            }
        }
        let bipartite = !intra && two_colourable(&sizes, &type_edges);
        components.push(Component {
            id,
            agents,
            type_sizes: sizes.into_iter().collect(),
            bipartite,
        });
    }
    StructureReport { types, components }
}

fn two_colourable(nodes: &BTreeMap<usize, usize>, edges: &BTreeSet<(usize, usize)>) -> bool {
    let mut colour: BTreeMap<usize, bool> = BTreeMap::new();
    for &start in nodes.keys() {
        if colour.contains_key(&start) {
            continue;
        }
        colour.insert(start, false);
        let mut queue = VecDeque::from([start]);
        while let Some(t) = queue.pop_front() {
            let c = colour[&t];
            for &(a, b) in edges {
                let other = if a == t {
                    b
                } else if b == t {
                    a
                } else {
                    continue;
                };
                match colour.get(&other) {
                    Some(&oc) if oc == c => return false,
                    Some(_) => {}
                    None => {
                        colour.insert(other, !c);
                        queue.push_back(other);
                    }
                }
            }
        }
    }
    true
}

/// Mutual understanding of the messages exchanged on edges touching `agents`.
///
/// Used for per-sub-population summaries: after an attack the parasite's
/// links to the group count towards it.
pub fn group_mutual_understanding(pop: &Population, agents: &[usize]) -> Result<f64> {
    let members: BTreeSet<usize> = agents.iter().copied().collect();
    let s = pop.alphabet_size();
    let prior = pop.environment().prior().probs();
    let g = pop.graph();
    let mut j = vec![0.0; s * s];
    for a in 0..pop.num_agents() {
        for (b, w) in g.neighbors(a) {
            if !members.contains(&a) && !members.contains(&b) {
                continue;
            }
            let (ca, cb) = (&pop.codes()[a], &pop.codes()[b]);
            for (mu, &pm) in prior.iter().enumerate() {
                for &(x, px) in ca.support(mu) {
                    for &(y, py) in cb.support(mu) {
                        j[x * s + y] += w * pm * px * py;
                    }
                }
            }
        }
    }
    Ok(mutual_information(&Dist2::new(s, s, normalize(j)?)?))
}

fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let total: f64 = v.iter().sum();
    if total <= 0.0 {
        return Err(Error::Usage("group has no interactions".into()));
    }
    v.iter_mut().for_each(|x| *x /= total);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::popmodel::{toy, toy_code, Environment, InteractionGraph, ToyCode};

    const H14: f64 = 0.811_278_124_459_132_8;

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn toy_mutual_understanding() {
        close(mutual_understanding(&toy::pair()).unwrap(), 1.0);
        close(mutual_understanding(&toy::pair_with_parasite()).unwrap(), 0.0);
        let pop =
            toy::two_subpopulations_with_parasite(&toy_code(ToyCode::Phi2), 0b1111).unwrap();
        close(mutual_understanding(&pop).unwrap(), 0.0);
    }

    #[test]
    fn toy_env_info() {
        let pair = toy::pair();
        close(env_info(&pair, AgentId(0)).unwrap(), 1.0);
        close(env_info(&pair, AgentId(1)).unwrap(), 1.0);
        let pop =
            toy::two_subpopulations_with_parasite(&toy_code(ToyCode::Phi2), 0b1111).unwrap();
        close(env_info(&pop, AgentId(2)).unwrap(), 0.5 + H14);
        close(env_info(&pop, AgentId(0)).unwrap(), 1.0);
    }

    #[test]
    fn toy_missing_info() {
        let attack_one = toy::pair_with_parasite();
        close(missing_info(&attack_one, AgentId(2)).unwrap(), 0.0);
        let pop =
            toy::two_subpopulations_with_parasite(&toy_code(ToyCode::Phi2), 0b1111).unwrap();
        close(missing_info(&pop, AgentId(4)).unwrap(), H14);
    }

    #[test]
    fn blend_kl_cases() {
        // a pair is symmetric, so either endpoint's conditional is the joint
        assert_eq!(blend_kl(&toy::pair(), AgentId(1)).unwrap(), 0.0);
        let pop =
            toy::two_subpopulations_with_parasite(&toy_code(ToyCode::Phi2), 0b1111).unwrap();
        let d = blend_kl(&pop, AgentId(4)).unwrap();
        assert!(d.is_finite() && d >= 0.0);
    }

    #[test]
    fn identifiability_cases() {
        close(identifiability(&toy::pair()).unwrap(), 0.0);
        // two pairs with disjoint symbol sets: the symbols name the pair
        let c = |syms: [usize; 4]| Code::deterministic(&syms, 4).unwrap();
        let pop = Population::new(
            Environment::uniform(4),
            vec![c([0, 0, 1, 1]), c([0, 0, 1, 1]), c([2, 2, 3, 3]), c([2, 2, 3, 3])],
            [],
            InteractionGraph::edge_uniform(4, &[(0, 1), (2, 3)]).unwrap(),
        )
        .unwrap();
        close(identifiability(&pop).unwrap(), 1.0);
    }

    #[test]
    fn distances() {
        let a = toy_code(ToyCode::Phi1);
        assert_eq!(code_distance(&a, &a).unwrap(), 0.0);
        close(code_distance(&a, &toy_code(ToyCode::Phi2)).unwrap(), 2.0);
        let x = Code::deterministic(&(0..16).collect::<Vec<_>>(), 32).unwrap();
        let y = Code::deterministic(&(16..32).collect::<Vec<_>>(), 32).unwrap();
        close(code_distance(&x, &y).unwrap(), 4.0);
        let wide = a.widen(3).unwrap();
        assert!(code_distance(&a, &wide).is_err());
    }

    #[test]
    fn structure_of_toys() {
        let pop = toy::two_subpopulations();
        let s = analyze_structure(&pop);
        assert_eq!(s.components.len(), 2);
        assert!(s.components.iter().all(|c| !c.bipartite));

        // types {A, B} with only A-B edges
        let pop = Population::new(
            Environment::uniform(4),
            vec![
                toy_code(ToyCode::Phi1),
                toy_code(ToyCode::Phi2),
                toy_code(ToyCode::Phi1),
            ],
            [],
            InteractionGraph::edge_uniform(3, &[(0, 1), (1, 2)]).unwrap(),
        )
        .unwrap();
        let s = analyze_structure(&pop);
        assert_eq!(s.components.len(), 1);
        assert!(s.components[0].bipartite);
        assert_eq!(s.components[0].type_sizes, vec![(0, 2), (1, 1)]);
    }

    #[test]
    fn usage_of_pair() {
        let u = symbol_usage(&toy::pair(), &BTreeSet::new()).unwrap();
        assert_eq!(u.probs(), &[0.5, 0.5]);
        let attacked = toy::pair_with_parasite();
        let u = symbol_usage(&attacked, &BTreeSet::from([2])).unwrap();
        assert_eq!(u.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn report_for_attacked_toy() {
        let pop =
            toy::two_subpopulations_with_parasite(&toy_code(ToyCode::Phi2), 0b1111).unwrap();
        let r = measure(&pop).unwrap();
        assert_eq!(r.per_agent_env_info.len(), 5);
        assert_eq!(r.parasites.len(), 1);
        close(r.parasites[0].sensor_info, 1.0);
        close(r.parasites[0].missing_info, H14);
    }
}
