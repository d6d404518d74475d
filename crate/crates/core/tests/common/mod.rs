//! Brute-force reference implementations.
//!
//! Everything here enumerates the full joint `p(theta, theta', mu, x, x')`
//! cell by cell and derives measures from plain entropies of marginals. No
//! code is shared with the library beyond reading population fields.

#![allow(dead_code)]

use std::collections::HashMap;

use codedrift::{Code, Environment, InteractionGraph, Population};
use proptest::prelude::*;

/// One outcome of a random interaction.
#[derive(Debug, Clone, Copy)]
pub struct Event {
    pub theta: usize,
    pub theta2: usize,
    pub mu: usize,
    pub x: usize,
    pub x2: usize,
    pub p: f64,
}

pub fn events(pop: &Population) -> Vec<Event> {
    let n = pop.num_agents();
    let m = pop.num_states();
    let s = pop.alphabet_size();
    let prior = pop.environment().prior().probs();
    let mut out = Vec::new();
    for theta in 0..n {
        for theta2 in 0..n {
            let w = pop.graph().weight(theta, theta2);
            if w == 0.0 {
                continue;
            }
            for mu in 0..m {
                for x in 0..s {
                    for x2 in 0..s {
                        let p = w
                            * prior[mu]
                            * pop.codes()[theta].row(mu)[x]
                            * pop.codes()[theta2].row(mu)[x2];
                        if p > 0.0 {
                            out.push(Event { theta, theta2, mu, x, x2, p });
                        }
                    }
                }
            }
        }
    }
    out
}

/// Keeps the events matching `keep`, renormalized.
pub fn given(ev: &[Event], keep: impl Fn(&Event) -> bool) -> Vec<Event> {
    let kept: Vec<Event> = ev.iter().copied().filter(|e| keep(e)).collect();
    let total: f64 = kept.iter().map(|e| e.p).sum();
    kept.into_iter().map(|e| Event { p: e.p / total, ..e }).collect()
}

/// Entropy in bits of a function of the outcome.
pub fn h<K: std::hash::Hash + Eq>(ev: &[Event], key: impl Fn(&Event) -> K) -> f64 {
    let mut m: HashMap<K, f64> = HashMap::new();
    for e in ev {
        *m.entry(key(e)).or_default() += e.p;
    }
    m.values().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum()
}

pub fn mi<A: std::hash::Hash + Eq, B: std::hash::Hash + Eq>(
    ev: &[Event],
    a: impl Fn(&Event) -> A + Copy,
    b: impl Fn(&Event) -> B + Copy,
) -> f64 {
    h(ev, a) + h(ev, b) - h(ev, |e| (a(e), b(e)))
}

/// `I(A; B | C)`.
pub fn cmi<A, B, C>(
    ev: &[Event],
    a: impl Fn(&Event) -> A + Copy,
    b: impl Fn(&Event) -> B + Copy,
    c: impl Fn(&Event) -> C + Copy,
) -> f64
where
    A: std::hash::Hash + Eq,
    B: std::hash::Hash + Eq,
    C: std::hash::Hash + Eq,
{
    h(ev, |e| (a(e), c(e))) + h(ev, |e| (b(e), c(e))) - h(ev, |e| (a(e), b(e), c(e))) - h(ev, c)
}

pub fn mutual_understanding(pop: &Population) -> f64 {
    mi(&events(pop), |e| e.x, |e| e.x2)
}

pub fn env_info(pop: &Population, agent: usize) -> f64 {
    let ev = given(&events(pop), |e| e.theta == agent);
    mi(&ev, |e| e.mu, |e| (e.x, e.x2))
}

pub fn env_info_as_receiver(pop: &Population, agent: usize) -> f64 {
    let ev = given(&events(pop), |e| e.theta2 == agent);
    mi(&ev, |e| e.mu, |e| (e.x, e.x2))
}

pub fn population_env_info(pop: &Population) -> f64 {
    mi(&events(pop), |e| e.mu, |e| (e.x, e.x2))
}

pub fn avg_env_info(pop: &Population) -> f64 {
    cmi(&events(pop), |e| e.mu, |e| (e.x, e.x2), |e| e.theta)
}

pub fn identifiability(pop: &Population) -> f64 {
    mi(&events(pop), |e| e.theta, |e| (e.x, e.x2))
}

pub fn sensor_info(pop: &Population, agent: usize) -> f64 {
    let ev = given(&events(pop), |e| e.theta == agent);
    mi(&ev, |e| e.mu, |e| e.x)
}

pub fn missing_info(pop: &Population, parasite: usize) -> f64 {
    let ev = given(&events(pop), |e| e.theta2 == parasite);
    cmi(&ev, |e| e.mu, |e| e.x2, |e| e.x)
}

pub fn blend_kl(pop: &Population, parasite: usize) -> f64 {
    let all = events(pop);
    let own = given(&all, |e| e.theta == parasite);
    let mut p: HashMap<(usize, usize), f64> = HashMap::new();
    let mut q: HashMap<(usize, usize), f64> = HashMap::new();
    for e in &own {
        *p.entry((e.x, e.x2)).or_default() += e.p;
    }
    for e in &all {
        *q.entry((e.x, e.x2)).or_default() += e.p;
    }
    p.iter()
        .filter(|(_, &v)| v > 0.0)
        .map(|(k, &v)| v * (v / q[k]).log2())
        .sum()
}

fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.log2()).sum()
}

pub fn code_distance(a: &Code, b: &Code) -> f64 {
    (0..a.num_states())
        .map(|mu| {
            let (ra, rb) = (a.row(mu), b.row(mu));
            let mid: Vec<f64> = ra.iter().zip(rb).map(|(x, y)| 0.5 * (x + y)).collect();
            (entropy(&mid) - 0.5 * (entropy(ra) + entropy(rb))).max(0.0)
        })
        .sum::<f64>()
        .sqrt()
}

/// Random valid population: every agent has at least one partner.
pub fn arb_population(max_n: usize, max_m: usize, max_s: usize) -> impl Strategy<Value = Population> {
    (2..=max_n, 2..=max_m, 2..=max_s).prop_flat_map(move |(n, m, s)| {
        let pairs = n * (n - 1) / 2;
        (
            prop::collection::vec(0.05f64..1.0, m),
            prop::collection::vec(prop::collection::vec(prop::collection::vec(0.0f64..1.0, s), m), n),
            prop::collection::vec(prop::bool::ANY, n),
            prop::collection::vec(0.1f64..1.0, pairs),
            prop::collection::vec(prop::bool::ANY, pairs),
            prop::collection::vec(0usize..s, n * m),
            prop::collection::btree_set(0..n, 0..n.min(3)),
        )
            .prop_map(move |(prior, rows, det, weights, on, symbols, parasites)| {
                build(n, m, s, prior, rows, det, weights, on, symbols, parasites)
            })
    })
}

#[allow(clippy::too_many_arguments)]
fn build(
    n: usize,
    m: usize,
    s: usize,
    prior: Vec<f64>,
    rows: Vec<Vec<Vec<f64>>>,
    det: Vec<bool>,
    weights: Vec<f64>,
    on: Vec<bool>,
    symbols: Vec<usize>,
    parasites: std::collections::BTreeSet<usize>,
) -> Population {
    let total: f64 = prior.iter().sum();
    let prior: Vec<f64> = prior.iter().map(|p| p / total).collect();
    let codes: Vec<Code> = (0..n)
        .map(|a| {
            if det[a] {
                Code::deterministic(&symbols[a * m..(a + 1) * m], s).unwrap()
            } else {
                let mut table = Vec::with_capacity(m * s);
                for row in &rows[a] {
                    let mut row = row.clone();
                    row[0] += 1e-3;
                    let t: f64 = row.iter().sum();
                    table.extend(row.iter().map(|x| x / t));
                }
                Code::from_table(m, s, table).unwrap()
            }
        })
        .collect();
    let mut edges = Vec::new();
    let mut k = 0;
    for a in 0..n {
        for b in (a + 1)..n {
            // a ring keeps every agent connected
            if on[k] || b == a + 1 || (a == 0 && b == n - 1) {
                edges.push((a, b, weights[k]));
            }
            k += 1;
        }
    }
    let total: f64 = edges.iter().map(|e| 2.0 * e.2).sum();
    let edges: Vec<_> = edges.into_iter().map(|(a, b, w)| (a, b, w / total)).collect();
    let env = Environment::new(codedrift::probkit::Dist1::new(prior).unwrap()).unwrap();
    Population::new(env, codes, parasites, InteractionGraph::from_weighted_edges(n, &edges).unwrap()).unwrap()
}
