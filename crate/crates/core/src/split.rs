//! Out-of-graph benchmark construction.
//!
//! A split samples unseen entities from a degree band, partitions them into
//! meta-train / meta-valid / meta-test, keeps every triplet free of unseen
//! entities as the in-graph, and hands the rest to the unseen entities they
//! touch.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{GenError, Result};
use crate::graph::{
    parse_triplet_file, resolve_rows, write_triplet_file, EntityId, GraphStore, Triplet,
    Vocabulary,
};
use crate::rng::rng_for;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetaSetKind {
    Train,
    Valid,
    Test,
}

impl MetaSetKind {
    pub const ALL: [MetaSetKind; 3] = [MetaSetKind::Train, MetaSetKind::Valid, MetaSetKind::Test];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn file_stem(self) -> &'static str {
        match self {
            MetaSetKind::Train => "meta_train",
            MetaSetKind::Valid => "meta_valid",
            MetaSetKind::Test => "meta_test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub min_degree: usize,
    pub max_degree: usize,
    pub n_unseen: usize,
    /// Relative sizes of (train, valid, test); integers or fractions.
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.min_degree == 0 {
            problems.push("min_degree must be > 0".to_string());
        }
        if self.min_degree > self.max_degree {
            problems.push(format!(
                "min_degree {} exceeds max_degree {}",
                self.min_degree, self.max_degree
            ));
        }
        if self.n_unseen == 0 {
            problems.push("n_unseen must be > 0".to_string());
        }
        if self.ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || self.ratios.iter().sum::<f64>() <= 0.0 {
            problems.push(format!("ratios {:?} must be non-negative with a positive sum", self.ratios));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(GenError::InvalidConfig(problems.join("; ")))
        }
    }
}

/// An unseen entity and every triplet assigned to it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnseenEntity {
    pub entity: EntityId,
    pub triplets: Vec<Triplet>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MetaSet {
    pub entities: Vec<UnseenEntity>,
}

impl MetaSet {
    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// Distinct triplets held by this set, in first-appearance order.
    pub fn unique_triplets(&self) -> Vec<Triplet> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for u in &self.entities {
            for t in &u.triplets {
                if seen.insert(*t) {
                    out.push(*t);
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct OogSplit {
    pub in_graph: GraphStore,
    pub meta_sets: [MetaSet; 3],
    /// Triplets linking unseen entities of two different meta-sets. Each is
    /// held by the meta-set of its smaller unseen endpoint only.
    pub cross_set: Vec<Triplet>,
    /// Unseen entities left with fewer than two triplets. They stay out of
    /// the in-graph but take part in no meta-set.
    pub dropped: Vec<EntityId>,
    /// Triplets that ended up with no holder after dropping.
    pub discarded: Vec<Triplet>,
}

impl OogSplit {
    pub fn meta_set(&self, kind: MetaSetKind) -> &MetaSet {
        &self.meta_sets[kind.index()]
    }

    pub fn num_entities(&self) -> usize {
        self.in_graph.num_entities()
    }

    pub fn num_raw_relations(&self) -> usize {
        self.in_graph.num_raw_relations()
    }

    /// Mask over the entity id space: true for every entity kept out of
    /// the in-graph (all meta-set members plus dropped entities).
    pub fn unseen_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.num_entities()];
        for set in &self.meta_sets {
            for u in &set.entities {
                mask[u.entity.index()] = true;
            }
        }
        for e in &self.dropped {
            mask[e.index()] = true;
        }
        mask
    }

    /// Seen entities in id order.
    pub fn seen_entities(&self) -> Vec<EntityId> {
        self.unseen_mask()
            .iter()
            .enumerate()
            .filter(|(_, &u)| !u)
            .map(|(i, _)| EntityId(i as u32))
            .collect()
    }

    /// In-graph triplets plus those of the given meta-sets.
    pub fn known_triplets(&self, sets: &[MetaSetKind]) -> HashSet<Triplet> {
        let mut known: HashSet<Triplet> = self.in_graph.raw_triplets().copied().collect();
        for &k in sets {
            for u in &self.meta_set(k).entities {
                known.extend(u.triplets.iter().copied());
            }
        }
        known
    }
}

/// Samples `n_unseen` distinct entities whose raw triplet count lies in
/// `[min_degree, max_degree]`.
pub fn select_unseen<R: Rng + ?Sized>(g: &GraphStore, cfg: &SplitConfig, rng: &mut R) -> Result<Vec<EntityId>> {
    cfg.validate()?;
    let mut counts = vec![0usize; g.num_entities()];
    for t in g.raw_triplets() {
        counts[t.head.index()] += 1;
        counts[t.tail.index()] += 1;
    }
    let eligible: Vec<EntityId> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c >= cfg.min_degree && c <= cfg.max_degree)
        .map(|(i, _)| EntityId(i as u32))
        .collect();
    if eligible.len() < cfg.n_unseen {
        return Err(GenError::InsufficientEntities {
            eligible: eligible.len(),
            requested: cfg.n_unseen,
        });
    }
    let picks = rand::seq::index::sample(rng, eligible.len(), cfg.n_unseen);
    Ok(picks.into_iter().map(|i| eligible[i]).collect())
}

/// Shuffles and cuts into (train, valid, test). Valid and test get the
/// floor of their share; train takes the remainder.
pub fn partition_meta_sets<R: Rng + ?Sized>(
    unseen: &[EntityId],
    ratios: [f64; 3],
    rng: &mut R,
) -> [Vec<EntityId>; 3] {
    let mut pool = unseen.to_vec();
    pool.shuffle(rng);
    let total: f64 = ratios.iter().sum();
    let n = pool.len();
    let share = |r: f64| ((n as f64) * r / total + 1e-9).floor() as usize;
    let n_valid = share(ratios[1]);
    let n_test = share(ratios[2]).min(n - n_valid);
    let n_train = n - n_valid - n_test;
    let test = pool.split_off(n_train + n_valid);
    let valid = pool.split_off(n_train);
    [pool, valid, test]
}

/// Assigns triplets to the in-graph or to unseen entities.
pub fn build_split(g: &GraphStore, partition: &[Vec<EntityId>; 3]) -> Result<OogSplit> {
    let mut owner_set: HashMap<EntityId, usize> = HashMap::new();
    for (k, ents) in partition.iter().enumerate() {
        for &e in ents {
            if e.index() >= g.num_entities() {
                return Err(GenError::InvalidId {
                    kind: "entity",
                    index: e.index(),
                    len: g.num_entities(),
                });
            }
            if owner_set.insert(e, k).is_some() {
                return Err(GenError::InvalidConfig(format!("entity {} appears in two meta-sets", e.0)));
            }
        }
    }

    let mut in_graph = Vec::new();
    let mut cross_set = Vec::new();
    let mut assoc: HashMap<EntityId, Vec<Triplet>> = HashMap::new();
    // (triplet, holders) in graph order, for the discard pass.
    let mut held: Vec<(Triplet, Vec<EntityId>)> = Vec::new();
    for &t in g.raw_triplets() {
        let mut ends: Vec<(EntityId, usize)> = [t.head, t.tail]
            .into_iter()
            .filter_map(|e| owner_set.get(&e).map(|&k| (e, k)))
            .collect();
        ends.dedup();
        if ends.is_empty() {
            in_graph.push(t);
            continue;
        }
        let owner = ends.iter().min_by_key(|(e, _)| *e).map(|&(_, k)| k).expect("non-empty");
        if ends.iter().any(|&(_, k)| k != owner) {
            cross_set.push(t);
        }
        let holders: Vec<EntityId> = ends.iter().filter(|&&(_, k)| k == owner).map(|&(e, _)| e).collect();
        for &e in &holders {
            assoc.entry(e).or_default().push(t);
        }
        held.push((t, holders));
    }

    let mut dropped = Vec::new();
    let mut meta_sets: [MetaSet; 3] = Default::default();
    for (k, ents) in partition.iter().enumerate() {
        for &e in ents {
            let triplets = assoc.remove(&e).unwrap_or_default();
            if triplets.len() < 2 {
                dropped.push(e);
            } else {
                meta_sets[k].entities.push(UnseenEntity { entity: e, triplets });
            }
        }
    }
    if !dropped.is_empty() {
        log::warn!("{} unseen entities dropped with fewer than 2 triplets", dropped.len());
    }
    let dropped_set: HashSet<EntityId> = dropped.iter().copied().collect();
    let discarded = held
        .into_iter()
        .filter(|(_, holders)| holders.iter().all(|e| dropped_set.contains(e)))
        .map(|(t, _)| t)
        .collect();

    let in_graph = GraphStore::from_triplets(g.num_entities(), g.num_raw_relations(), in_graph, false)?;
    Ok(OogSplit {
        in_graph,
        meta_sets,
        cross_set,
        dropped,
        discarded,
    })
}

/// Full procedure: band selection, partition, assignment. A pure function
/// of `(g, cfg)`.
pub fn split_graph(g: &GraphStore, cfg: &SplitConfig) -> Result<OogSplit> {
    let mut rng = rng_for(cfg.seed, "split");
    let unseen = select_unseen(g, cfg, &mut rng)?;
    let partition = partition_meta_sets(&unseen, cfg.ratios, &mut rng);
    build_split(g, &partition)
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestCounts {
    pub entities: usize,
    pub relations: usize,
    pub in_graph_triplets: usize,
    pub unseen_entities: [usize; 3],
    pub associated_triplets: [usize; 3],
    pub cross_set_triplets: usize,
    pub dropped_entities: usize,
    pub discarded_triplets: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestMeta {
    pub format_version: u32,
    pub vocabulary_hash: String,
    pub config: Option<SplitConfig>,
    pub seed: Option<u64>,
    pub counts: ManifestCounts,
    /// SHA-256 of every data file, keyed by file name.
    pub checksums: BTreeMap<String, String>,
}

const VOCAB_ENTITIES: &str = "entities.txt";
const VOCAB_RELATIONS: &str = "relations.txt";
const IN_GRAPH: &str = "in_graph.tsv";
const DISCARDED: &str = "discarded.tsv";
const CROSS_SET: &str = "cross_set.tsv";
const DROPPED: &str = "dropped.entities.txt";

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = impl AsRef<str>>) -> Result<()> {
    let mut s = String::new();
    for l in lines {
        s.push_str(l.as_ref());
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| GenError::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let s = fs::read_to_string(path).map_err(|e| GenError::io(path, e))?;
    Ok(s.lines().filter(|l| !l.is_empty()).map(str::to_owned).collect())
}

fn counts_of(split: &OogSplit, vocab: &Vocabulary) -> ManifestCounts {
    ManifestCounts {
        entities: vocab.num_entities(),
        relations: vocab.num_raw_relations(),
        in_graph_triplets: split.in_graph.len(),
        unseen_entities: MetaSetKind::ALL.map(|k| split.meta_set(k).len()),
        associated_triplets: MetaSetKind::ALL.map(|k| split.meta_set(k).unique_triplets().len()),
        cross_set_triplets: split.cross_set.len(),
        dropped_entities: split.dropped.len(),
        discarded_triplets: split.discarded.len(),
    }
}

/// Writes the split as a manifest directory. Output bytes depend only on
/// the split, vocabulary and config.
pub fn write_manifest(split: &OogSplit, vocab: &Vocabulary, cfg: Option<&SplitConfig>, dir: &Path) -> Result<ManifestMeta> {
    fs::create_dir_all(dir).map_err(|e| GenError::io(dir, e))?;
    let mut files: Vec<String> = vec![VOCAB_ENTITIES.into(), VOCAB_RELATIONS.into()];
    write_lines(&dir.join(VOCAB_ENTITIES), vocab.entity_names())?;
    write_lines(&dir.join(VOCAB_RELATIONS), vocab.relation_names())?;
    write_triplet_file(dir.join(IN_GRAPH), vocab, split.in_graph.raw_triplets())?;
    files.push(IN_GRAPH.into());
    for kind in MetaSetKind::ALL {
        let set = split.meta_set(kind);
        let tsv = format!("{}.tsv", kind.file_stem());
        let ents = format!("{}.entities.txt", kind.file_stem());
        write_triplet_file(dir.join(&tsv), vocab, &set.unique_triplets())?;
        write_lines(&dir.join(&ents), set.entities.iter().map(|u| vocab.entity_name(u.entity)))?;
        files.push(tsv);
        files.push(ents);
    }
    write_triplet_file(dir.join(CROSS_SET), vocab, &split.cross_set)?;
    write_triplet_file(dir.join(DISCARDED), vocab, &split.discarded)?;
    write_lines(&dir.join(DROPPED), split.dropped.iter().map(|&e| vocab.entity_name(e)))?;
    files.extend([CROSS_SET.into(), DISCARDED.into(), DROPPED.into()]);

    let mut checksums = BTreeMap::new();
    for f in files {
        let p = dir.join(&f);
        let bytes = fs::read(&p).map_err(|e| GenError::io(&p, e))?;
        checksums.insert(f, sha256_hex(&bytes));
    }
    let meta = ManifestMeta {
        format_version: MANIFEST_VERSION,
        vocabulary_hash: vocab.hash(),
        config: cfg.cloned(),
        seed: cfg.map(|c| c.seed),
        counts: counts_of(split, vocab),
        checksums,
    };
    let p = dir.join("meta.json");
    let mut json = serde_json::to_vec_pretty(&meta)?;
    json.push(b'\n');
    fs::write(&p, json).map_err(|e| GenError::io(&p, e))?;
    Ok(meta)
}

/// A split read back from disk together with its vocabulary.
#[derive(Clone, Debug)]
pub struct Manifest {
    pub meta: ManifestMeta,
    pub vocab: Vocabulary,
    pub split: OogSplit,
}

impl Manifest {
    pub fn check_vocabulary(&self, expected_hash: &str) -> Result<()> {
        if self.meta.vocabulary_hash != expected_hash {
            return Err(GenError::VocabularyMismatch {
                found: self.meta.vocabulary_hash.clone(),
                expected: expected_hash.to_owned(),
            });
        }
        Ok(())
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let meta_path = dir.join("meta.json");
    let bytes = fs::read(&meta_path).map_err(|e| GenError::io(&meta_path, e))?;
    let meta: ManifestMeta = serde_json::from_slice(&bytes)?;
    if meta.format_version != MANIFEST_VERSION {
        return Err(GenError::VersionMismatch {
            found: meta.format_version,
            expected: MANIFEST_VERSION,
        });
    }
    for (f, sum) in &meta.checksums {
        let p = dir.join(f);
        let bytes = fs::read(&p).map_err(|e| GenError::io(&p, e))?;
        if &sha256_hex(&bytes) != sum {
            return Err(GenError::ChecksumMismatch(f.clone()));
        }
    }
    let vocab = Vocabulary::new(read_lines(&dir.join(VOCAB_ENTITIES))?, read_lines(&dir.join(VOCAB_RELATIONS))?)?;
    if vocab.hash() != meta.vocabulary_hash {
        return Err(GenError::VocabularyMismatch {
            found: vocab.hash(),
            expected: meta.vocabulary_hash.clone(),
        });
    }
    let load = |name: &str| -> Result<Vec<Triplet>> {
        let p = dir.join(name);
        resolve_rows(&vocab, &parse_triplet_file(&p)?, &p)
    };
    let load_entities = |name: &str| -> Result<Vec<EntityId>> {
        let p = dir.join(name);
        read_lines(&p)?
            .iter()
            .enumerate()
            .map(|(i, n)| {
                vocab.entity_id(n).ok_or_else(|| GenError::Parse {
                    path: p.clone(),
                    line: i + 1,
                    message: format!("unknown entity {n:?}"),
                })
            })
            .collect()
    };

    let in_graph = GraphStore::from_triplets(vocab.num_entities(), vocab.num_raw_relations(), load(IN_GRAPH)?, false)?;
    let mut meta_sets: [MetaSet; 3] = Default::default();
    for kind in MetaSetKind::ALL {
        let triplets = load(&format!("{}.tsv", kind.file_stem()))?;
        let ents = load_entities(&format!("{}.entities.txt", kind.file_stem()))?;
        meta_sets[kind.index()].entities = ents
            .into_iter()
            .map(|e| UnseenEntity {
                entity: e,
                triplets: triplets.iter().filter(|t| t.touches(e)).copied().collect(),
            })
            .collect();
    }
    let split = OogSplit {
        in_graph,
        meta_sets,
        cross_set: load(CROSS_SET)?,
        dropped: load_entities(DROPPED)?,
        discarded: load(DISCARDED)?,
    };
    if counts_of(&split, &vocab) != meta.counts {
        return Err(GenError::corrupt("manifest", "counts in meta.json disagree with data files"));
    }
    Ok(Manifest { meta, vocab, split })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::GenRng;
    use rand::SeedableRng;

    fn graph(n: usize, ts: &[(u32, u32, u32)]) -> GraphStore {
        GraphStore::from_triplets(n, 1, ts.iter().map(|&(h, r, t)| Triplet::new(h, r, t)), false).unwrap()
    }

    fn cfg(min: usize, max: usize, n: usize) -> SplitConfig {
        SplitConfig {
            min_degree: min,
            max_degree: max,
            n_unseen: n,
            ratios: [1.0, 1.0, 1.0],
            seed: 1,
        }
    }

    #[test]
    fn select_full_band() {
        let g = graph(3, &[(0, 0, 1), (1, 0, 2)]);
        let mut rng = GenRng::seed_from_u64(0);
        let mut picked = select_unseen(&g, &cfg(1, 1, 2), &mut rng).unwrap();
        picked.sort();
        assert_eq!(picked, vec![EntityId(0), EntityId(2)]);
    }

    #[test]
    fn select_empty_band_errors() {
        let g = graph(3, &[(0, 0, 1), (1, 0, 2)]);
        let mut rng = GenRng::seed_from_u64(0);
        match select_unseen(&g, &cfg(5, 9, 1), &mut rng) {
            Err(GenError::InsufficientEntities { eligible, requested }) => assert_eq!((eligible, requested), (0, 1)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn partition_sizes() {
        let mut rng = GenRng::seed_from_u64(0);
        let ents: Vec<EntityId> = (0..10).map(EntityId).collect();
        let p = partition_meta_sets(&ents, [1.0, 1.0, 1.0], &mut rng);
        assert_eq!([p[0].len(), p[1].len(), p[2].len()], [4, 3, 3]);
        let p = partition_meta_sets(&ents, [1.0, 0.0, 0.0], &mut rng);
        assert_eq!([p[0].len(), p[1].len(), p[2].len()], [10, 0, 0]);
        let ents: Vec<EntityId> = (0..5000).map(EntityId).collect();
        let p = partition_meta_sets(&ents, [2500.0, 1000.0, 1500.0], &mut rng);
        assert_eq!([p[0].len(), p[1].len(), p[2].len()], [2500, 1000, 1500]);
        let mut all: Vec<EntityId> = p.concat();
        all.sort();
        assert_eq!(all, ents);
    }

    #[test]
    fn chain_split() {
        let g = graph(3, &[(0, 0, 1), (1, 0, 2)]);
        let s = build_split(&g, &[vec![], vec![], vec![EntityId(2)]]).unwrap();
        assert_eq!(s.in_graph.triplets(), &[Triplet::new(0, 0, 1)]);
        // a single associated triplet is not enough for support + query
        assert!(s.meta_set(MetaSetKind::Test).is_empty());
        assert_eq!(s.dropped, vec![EntityId(2)]);
        assert_eq!(s.discarded, vec![Triplet::new(1, 0, 2)]);
    }

    #[test]
    fn empty_partition_keeps_everything() {
        let g = graph(3, &[(0, 0, 1), (1, 0, 2)]);
        let s = build_split(&g, &Default::default()).unwrap();
        assert_eq!(s.in_graph.len(), 2);
        assert!(s.meta_sets.iter().all(MetaSet::is_empty));
    }

    #[test]
    fn star_hub_keeps_its_triplets() {
        let g = graph(5, &[(0, 0, 1), (0, 0, 2), (3, 0, 0), (1, 0, 4)]);
        let s = build_split(&g, &[vec![EntityId(0)], vec![], vec![]]).unwrap();
        assert_eq!(s.in_graph.triplets(), &[Triplet::new(1, 0, 4)]);
        let hub = &s.meta_set(MetaSetKind::Train).entities[0];
        assert_eq!(hub.triplets.len(), 3);
        assert!(s.in_graph.triplets().iter().all(|t| !t.touches(EntityId(0))));
    }

    #[test]
    fn cross_set_goes_to_smaller_id() {
        let g = graph(6, &[(1, 0, 4), (1, 0, 2), (4, 0, 3), (4, 0, 5), (1, 0, 3)]);
        let s = build_split(&g, &[vec![EntityId(4)], vec![], vec![EntityId(1)]]).unwrap();
        assert_eq!(s.cross_set, vec![Triplet::new(1, 0, 4)]);
        let test = &s.meta_set(MetaSetKind::Test).entities[0];
        assert!(test.triplets.contains(&Triplet::new(1, 0, 4)));
        let train = &s.meta_set(MetaSetKind::Train).entities[0];
        assert!(!train.triplets.contains(&Triplet::new(1, 0, 4)));
    }
}
