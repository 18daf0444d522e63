//! Multi-relational graphs: triplet files, name interning, and an immutable
//! store with a per-entity neighbour index.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{GenError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Relation index. When a graph carries inverse relations, indices
/// `raw_count..2 * raw_count` are the inverses of `0..raw_count`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_inverse(self, raw_count: usize) -> bool {
        self.index() >= raw_count
    }

    pub fn inverse(self, raw_count: usize) -> RelationId {
        if self.is_inverse(raw_count) {
            RelationId(self.0 - raw_count as u32)
        } else {
            RelationId(self.0 + raw_count as u32)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub head: EntityId,
    pub rel: RelationId,
    pub tail: EntityId,
}

impl Triplet {
    pub fn new(head: u32, rel: u32, tail: u32) -> Self {
        Triplet {
            head: EntityId(head),
            rel: RelationId(rel),
            tail: EntityId(tail),
        }
    }

    pub fn touches(&self, e: EntityId) -> bool {
        self.head == e || self.tail == e
    }
}

impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head.0, self.rel.0, self.tail.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    Outgoing,
    Incoming,
}

/// One neighbour-index entry: the entity on the other end of a triplet and
/// the relation connecting them, seen from the indexed entity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Neighbor {
    pub relation: RelationId,
    pub entity: EntityId,
    pub direction: Direction,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    relation_index: HashMap<String, RelationId>,
}

impl Vocabulary {
    pub fn new(entity_names: Vec<String>, relation_names: Vec<String>) -> Result<Self> {
        let mut entity_index = HashMap::with_capacity(entity_names.len());
        for (i, n) in entity_names.iter().enumerate() {
            if entity_index.insert(n.clone(), EntityId(i as u32)).is_some() {
                return Err(GenError::corrupt("vocabulary", format!("duplicate entity {n:?}")));
            }
        }
        let mut relation_index = HashMap::with_capacity(relation_names.len());
        for (i, n) in relation_names.iter().enumerate() {
            if relation_index.insert(n.clone(), RelationId(i as u32)).is_some() {
                return Err(GenError::corrupt("vocabulary", format!("duplicate relation {n:?}")));
            }
        }
        Ok(Vocabulary {
            entity_names,
            relation_names,
            entity_index,
            relation_index,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    /// Number of relations in the input data, inverses excluded.
    pub fn num_raw_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_index.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_index.get(name).copied()
    }

    pub fn entity_name(&self, e: EntityId) -> &str {
        &self.entity_names[e.index()]
    }

    /// Inverse relations are rendered with an `_inverse` suffix.
    pub fn relation_name(&self, r: RelationId) -> String {
        let raw = self.num_raw_relations();
        if r.is_inverse(raw) {
            format!("{}_inverse", self.relation_names[r.index() - raw])
        } else {
            self.relation_names[r.index()].clone()
        }
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    /// Hex SHA-256 over the ordered entity and relation names.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (tag, names) in [(b'E', &self.entity_names), (b'R', &self.relation_names)] {
            h.update([tag]);
            h.update((names.len() as u64).to_le_bytes());
            for n in names {
                h.update((n.len() as u64).to_le_bytes());
                h.update(n.as_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Immutable triplet set with membership queries and a neighbour index.
#[derive(Clone, Debug)]
pub struct GraphStore {
    num_entities: usize,
    num_raw_relations: usize,
    inverses: bool,
    triplets: Vec<Triplet>,
    triplet_set: HashSet<Triplet>,
    neighbors: Vec<Vec<Neighbor>>,
}

impl GraphStore {
    /// Builds a store over an existing id space. Duplicates are dropped,
    /// keeping the first occurrence. With `add_inverses`, each raw triplet
    /// `(h, r, t)` is followed by `(t, r + raw, h)`.
    pub fn from_triplets(
        num_entities: usize,
        num_raw_relations: usize,
        raw: impl IntoIterator<Item = Triplet>,
        add_inverses: bool,
    ) -> Result<Self> {
        let mut g = GraphStore {
            num_entities,
            num_raw_relations,
            inverses: add_inverses,
            triplets: Vec::new(),
            triplet_set: HashSet::new(),
            neighbors: vec![Vec::new(); num_entities],
        };
        for t in raw {
            g.check(t)?;
            if t.rel.index() >= num_raw_relations {
                return Err(GenError::InvalidId {
                    kind: "relation",
                    index: t.rel.index(),
                    len: num_raw_relations,
                });
            }
            if g.insert(t) && add_inverses {
                g.insert(Triplet {
                    head: t.tail,
                    rel: t.rel.inverse(num_raw_relations),
                    tail: t.head,
                });
            }
        }
        Ok(g)
    }

    fn check(&self, t: Triplet) -> Result<()> {
        for e in [t.head, t.tail] {
            if e.index() >= self.num_entities {
                return Err(GenError::InvalidId {
                    kind: "entity",
                    index: e.index(),
                    len: self.num_entities,
                });
            }
        }
        Ok(())
    }

    fn insert(&mut self, t: Triplet) -> bool {
        if !self.triplet_set.insert(t) {
            return false;
        }
        self.triplets.push(t);
        self.neighbors[t.head.index()].push(Neighbor {
            relation: t.rel,
            entity: t.tail,
            direction: Direction::Outgoing,
        });
        self.neighbors[t.tail.index()].push(Neighbor {
            relation: t.rel,
            entity: t.head,
            direction: Direction::Incoming,
        });
        true
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_raw_relations(&self) -> usize {
        self.num_raw_relations
    }

    /// Relation id space size: doubled when inverses are stored.
    pub fn num_relations(&self) -> usize {
        if self.inverses {
            2 * self.num_raw_relations
        } else {
            self.num_raw_relations
        }
    }

    pub fn has_inverses(&self) -> bool {
        self.inverses
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn contains(&self, t: &Triplet) -> bool {
        self.triplet_set.contains(t)
    }

    /// Neighbour entries of `e` in triplet insertion order.
    pub fn neighbors(&self, e: EntityId) -> Result<&[Neighbor]> {
        self.neighbors
            .get(e.index())
            .map(Vec::as_slice)
            .ok_or(GenError::InvalidId {
                kind: "entity",
                index: e.index(),
                len: self.num_entities,
            })
    }

    /// Raw (non-inverse) triplets, in insertion order.
    pub fn raw_triplets(&self) -> impl Iterator<Item = &Triplet> + '_ {
        let raw = self.num_raw_relations;
        self.triplets.iter().filter(move |t| !t.rel.is_inverse(raw))
    }
}

/// Triplet count per entity, counting each triplet at both endpoints.
/// Entities with no triplets are absent.
pub fn entity_frequency(g: &GraphStore) -> BTreeMap<EntityId, usize> {
    let mut hist = BTreeMap::new();
    for t in g.triplets() {
        *hist.entry(t.head).or_insert(0) += 1;
        *hist.entry(t.tail).or_insert(0) += 1;
    }
    hist
}

/// A triplet row as it appears in a file, before interning.
pub type NameTriple = (String, String, String);

/// Reads a tab-separated triplet file. Empty lines and lines starting
/// with `#` are skipped.
pub fn parse_triplet_file(path: impl AsRef<Path>) -> Result<Vec<NameTriple>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| GenError::io(path, e))?;
    parse_triplets(&bytes, path)
}

pub fn parse_triplets(bytes: &[u8], path: &Path) -> Result<Vec<NameTriple>> {
    let mut rows = Vec::new();
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line_no = i + 1;
        let line = std::str::from_utf8(raw).map_err(|_| GenError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: "invalid UTF-8".into(),
        })?;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(GenError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        rows.push((fields[0].to_owned(), fields[1].to_owned(), fields[2].to_owned()));
    }
    Ok(rows)
}

/// Interns names in first-appearance order (head, relation, tail per row)
/// and builds the store.
pub fn build_graph(rows: &[NameTriple], add_inverses: bool) -> Result<(Vocabulary, GraphStore)> {
    if rows.is_empty() {
        return Err(GenError::EmptyInput("triplet rows"));
    }
    let mut entities = Interner::default();
    let mut relations = Interner::default();
    let ids: Vec<Triplet> = rows
        .iter()
        .map(|(h, r, t)| {
            let h = entities.intern(h);
            let r = relations.intern(r);
            Triplet::new(h, r, entities.intern(t))
        })
        .collect();
    let (entities, relations) = (entities.names, relations.names);
    let vocab = Vocabulary::new(entities, relations)?;
    let graph = GraphStore::from_triplets(vocab.num_entities(), vocab.num_raw_relations(), ids, add_inverses)?;
    Ok((vocab, graph))
}

#[derive(Default)]
struct Interner<'a> {
    names: Vec<String>,
    index: HashMap<&'a str, u32>,
}

impl<'a> Interner<'a> {
    fn intern(&mut self, name: &'a str) -> u32 {
        let names = &mut self.names;
        *self.index.entry(name).or_insert_with(|| {
            names.push(name.to_owned());
            (names.len() - 1) as u32
        })
    }
}

/// Resolves name rows against a fixed vocabulary.
pub fn resolve_rows(vocab: &Vocabulary, rows: &[NameTriple], path: &Path) -> Result<Vec<Triplet>> {
    rows.iter()
        .enumerate()
        .map(|(i, (h, r, t))| {
            let unknown = |what: &str, name: &str| GenError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("unknown {what} {name:?}"),
            };
            Ok(Triplet {
                head: vocab.entity_id(h).ok_or_else(|| unknown("entity", h))?,
                rel: vocab.relation_id(r).ok_or_else(|| unknown("relation", r))?,
                tail: vocab.entity_id(t).ok_or_else(|| unknown("entity", t))?,
            })
        })
        .collect()
}

pub fn write_triplet_file<'a>(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    triplets: impl IntoIterator<Item = &'a Triplet>,
) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for t in triplets {
        writeln!(
            buf,
            "{}\t{}\t{}",
            vocab.entity_name(t.head),
            vocab.relation_name(t.rel),
            vocab.entity_name(t.tail)
        )
        .expect("write to Vec");
    }
    fs::write(path, buf).map_err(|e| GenError::io(path, e))
}
