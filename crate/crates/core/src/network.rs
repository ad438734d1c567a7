//! Road network data: nodes, links, enumerated paths and O-D demand.
//!
//! Network file schema (JSON, unknown keys rejected):
//!
//! ```json
//! {
//!   "nodes": ["A", "B"],
//!   "links": [{ "id": "l1", "tail": "A", "head": "B", "a": 1.0, "b": 0.1 }],
//!   "paths": [{ "id": "p1", "od": 0, "links": ["l1"] }],
//!   "od_pairs": [{ "origin": "A", "destination": "B", "Q": 10.0, "T_A": 2.0 }]
//! }
//! ```
//!
//! `a` is the free-flow traversal time, `b` the congestion slope (time per
//! vehicle). A path's `od` is the index of its O-D pair in `od_pairs`.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub id: String,
    pub tail: String,
    pub head: String,
    /// Free-flow traversal time.
    pub a: f64,
    /// Congestion slope, time per vehicle on the link.
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Path {
    pub id: String,
    pub od: usize,
    pub links: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdPair {
    pub origin: String,
    pub destination: String,
    #[serde(rename = "Q")]
    pub demand: f64,
    #[serde(rename = "T_A")]
    pub target_arrival: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub nodes: Vec<String>,
    pub links: Vec<Link>,
    pub paths: Vec<Path>,
    pub od_pairs: Vec<OdPair>,
}

/// Broken invariant of a [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Offending entity, e.g. `paths[1]` or `links[0] (l1)`.
    pub entity: String,
    pub rule: Rule,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    DuplicateId,
    UnknownReference,
    Connectivity,
    Endpoints,
    RepeatedNode,
    EmptyPath,
    Coverage,
    Parameter,
    Horizon,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:?}: {}", self.entity, self.rule, self.detail)
    }
}

impl NetworkSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Schema(describe_schema_error(&e)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    pub fn link_index(&self, id: &str) -> Option<usize> {
        self.links.iter().position(|l| l.id == id)
    }

    /// Link indices of every path, in traversal order. Requires a valid spec.
    pub fn path_link_indices(&self) -> Result<Vec<Vec<usize>>> {
        let index: HashMap<&str, usize> = self
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| (l.id.as_str(), i))
            .collect();
        self.paths
            .iter()
            .map(|p| {
                p.links
                    .iter()
                    .map(|id| {
                        index.get(id.as_str()).copied().ok_or_else(|| {
                            Error::InvalidNetwork(format!("path {} uses unknown link {id}", p.id))
                        })
                    })
                    .collect()
            })
            .collect()
    }

    pub fn od_of_path(&self) -> Vec<usize> {
        self.paths.iter().map(|p| p.od).collect()
    }

    /// Path indices serving each O-D pair.
    pub fn paths_by_od(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.od_pairs.len()];
        for (p, path) in self.paths.iter().enumerate() {
            if let Some(v) = out.get_mut(path.od) {
                v.push(p);
            }
        }
        out
    }

    /// Sum of free-flow times along path `p`.
    pub fn free_flow_time(&self, p: usize) -> f64 {
        self.paths[p]
            .links
            .iter()
            .filter_map(|id| self.link_index(id))
            .map(|l| self.links[l].a)
            .sum()
    }

    /// Every broken invariant; empty iff the spec is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |entity: String, rule: Rule, detail: String| {
            out.push(Violation {
                entity,
                rule,
                detail,
            })
        };

        let mut seen = HashSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if !seen.insert(n.as_str()) {
                push(
                    format!("nodes[{i}]"),
                    Rule::DuplicateId,
                    format!("node `{n}` listed twice"),
                );
            }
        }
        let nodes: HashSet<&str> = self.nodes.iter().map(String::as_str).collect();

        let mut link_ids = HashSet::new();
        for (i, l) in self.links.iter().enumerate() {
            let entity = format!("links[{i}] ({})", l.id);
            if !link_ids.insert(l.id.as_str()) {
                push(
                    entity.clone(),
                    Rule::DuplicateId,
                    "link id listed twice".into(),
                );
            }
            for end in [&l.tail, &l.head] {
                if !nodes.contains(end.as_str()) {
                    push(
                        entity.clone(),
                        Rule::UnknownReference,
                        format!("unknown node `{end}`"),
                    );
                }
            }
            if !(l.a > 0.0 && l.a.is_finite()) {
                push(
                    entity.clone(),
                    Rule::Parameter,
                    format!("free-flow time a = {} must be positive", l.a),
                );
            }
            if !(l.b >= 0.0 && l.b.is_finite()) {
                push(
                    entity.clone(),
                    Rule::Parameter,
                    format!("congestion slope b = {} must be non-negative", l.b),
                );
            }
        }

        for (i, od) in self.od_pairs.iter().enumerate() {
            let entity = format!("od_pairs[{i}]");
            for end in [&od.origin, &od.destination] {
                if !nodes.contains(end.as_str()) {
                    push(
                        entity.clone(),
                        Rule::UnknownReference,
                        format!("unknown node `{end}`"),
                    );
                }
            }
            if !(od.demand > 0.0 && od.demand.is_finite()) {
                push(
                    entity.clone(),
                    Rule::Parameter,
                    format!("demand Q = {} must be positive", od.demand),
                );
            }
            if !od.target_arrival.is_finite() {
                push(
                    entity.clone(),
                    Rule::Parameter,
                    "target arrival T_A must be finite".into(),
                );
            }
        }

        let by_id: HashMap<&str, &Link> = self.links.iter().map(|l| (l.id.as_str(), l)).collect();
        let mut path_ids = HashSet::new();
        for (i, p) in self.paths.iter().enumerate() {
            let entity = format!("paths[{i}] ({})", p.id);
            if !path_ids.insert(p.id.as_str()) {
                push(
                    entity.clone(),
                    Rule::DuplicateId,
                    "path id listed twice".into(),
                );
            }
            let od = self.od_pairs.get(p.od);
            if od.is_none() {
                push(
                    entity.clone(),
                    Rule::UnknownReference,
                    format!("O-D index {} out of range", p.od),
                );
            }
            if p.links.is_empty() {
                push(entity.clone(), Rule::EmptyPath, "path has no links".into());
                continue;
            }
            let mut links = Vec::with_capacity(p.links.len());
            for id in &p.links {
                match by_id.get(id.as_str()) {
                    Some(l) => links.push(*l),
                    None => push(
                        entity.clone(),
                        Rule::UnknownReference,
                        format!("unknown link `{id}`"),
                    ),
                }
            }
            if links.len() != p.links.len() {
                continue;
            }
            for w in links.windows(2) {
                if w[0].head != w[1].tail {
                    push(
                        entity.clone(),
                        Rule::Connectivity,
                        format!(
                            "link `{}` ends at `{}` but `{}` starts at `{}`",
                            w[0].id, w[0].head, w[1].id, w[1].tail
                        ),
                    );
                }
            }
            if let Some(od) = od {
                if links[0].tail != od.origin || links[links.len() - 1].head != od.destination {
                    push(
                        entity.clone(),
                        Rule::Endpoints,
                        format!(
                            "path runs {} -> {}, O-D pair is {} -> {}",
                            links[0].tail,
                            links[links.len() - 1].head,
                            od.origin,
                            od.destination
                        ),
                    );
                }
            }
            let mut visited = HashSet::new();
            let sequence = std::iter::once(&links[0].tail).chain(links.iter().map(|l| &l.head));
            if sequence.clone().any(|n| !visited.insert(n.as_str())) {
                push(
                    entity.clone(),
                    Rule::RepeatedNode,
                    "path revisits a node".into(),
                );
            }
        }

        for (i, paths) in self.paths_by_od().iter().enumerate() {
            if paths.is_empty() {
                push(
                    format!("od_pairs[{i}]"),
                    Rule::Coverage,
                    "no path serves this O-D pair".into(),
                );
            }
        }
        out
    }

    /// [`NetworkSpec::validate`] plus target arrival times inside `[t0, tf]`.
    pub fn validate_with_horizon(&self, t0: f64, tf: f64) -> Vec<Violation> {
        let mut out = self.validate();
        for (i, od) in self.od_pairs.iter().enumerate() {
            if !(od.target_arrival >= t0 && od.target_arrival <= tf) {
                out.push(Violation {
                    entity: format!("od_pairs[{i}]"),
                    rule: Rule::Horizon,
                    detail: format!("T_A = {} outside [{t0}, {tf}]", od.target_arrival),
                });
            }
        }
        out
    }

    /// Error unless [`NetworkSpec::validate`] is empty.
    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidNetwork(
                v.iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join("; "),
            ))
        }
    }
}

/// Path-to-O-D incidence: entry `(p, w)` is 1 iff path `p` serves O-D pair `w`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathIncidence {
    n_od: usize,
    od_of_path: Vec<usize>,
}

impl PathIncidence {
    pub fn n_paths(&self) -> usize {
        self.od_of_path.len()
    }

    pub fn n_od(&self) -> usize {
        self.n_od
    }

    pub fn entry(&self, p: usize, w: usize) -> u8 {
        u8::from(self.od_of_path[p] == w)
    }

    pub fn row(&self, p: usize) -> Vec<u8> {
        (0..self.n_od).map(|w| self.entry(p, w)).collect()
    }

    /// Dense `paths x O-D` 0/1 matrix.
    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.n_paths()).map(|p| self.row(p)).collect()
    }

    pub fn od_of_path(&self) -> &[usize] {
        &self.od_of_path
    }
}

pub fn path_incidence(spec: &NetworkSpec) -> PathIncidence {
    PathIncidence {
        n_od: spec.od_pairs.len(),
        od_of_path: spec.od_of_path(),
    }
}

/// Formats a deserialization error as `entity.field: message (line L, column C)`.
pub fn describe_schema_error(e: &serde_path_to_error::Error<serde_json::Error>) -> String {
    let inner = e.inner();
    let mut path = e.path().to_string();
    let msg = inner.to_string();
    let mut message = msg.split(" at line ").next().unwrap_or(&msg).to_string();
    if let Some(field) = message
        .strip_prefix("missing field `")
        .and_then(|s| s.strip_suffix('`'))
    {
        path = if path == "." {
            field.to_string()
        } else {
            format!("{path}.{field}")
        };
        message = "missing field".into();
    }
    format!(
        "{path}: {message} (line {}, column {})",
        inner.line(),
        inner.column()
    )
}
