//! Planted-structure graphs for benchmarks and tests.
//!
//! Entities fall into equal clusters. Every relation pairs the clusters
//! off (a random perfect matching, so each relation is symmetric at the
//! cluster level) and each entity links to a few random members of its
//! partner cluster. A handful of support triplets therefore reveal an
//! entity's cluster, which is exactly what the embedding layers must learn
//! to infer.

use rand::seq::{IndexedRandom, SliceRandom};

use crate::error::{GenError, Result};
use crate::graph::{GraphStore, Triplet, Vocabulary};
use crate::model::{Mode, ModelParams, ScoreKind};
use crate::rng::rng_for;
use crate::split::{split_graph, OogSplit, SplitConfig};
use crate::train::{pretrain_in_graph, HyperParams};

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedConfig {
    pub clusters: usize,
    pub cluster_size: usize,
    pub relations: usize,
    /// Outgoing links per entity and relation.
    pub links: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    /// 300 entities in 30 clusters, 8 relations, 21,600 triplets.
    fn default() -> Self {
        PlantedConfig {
            clusters: 30,
            cluster_size: 10,
            relations: 8,
            links: 9,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlantedGraph {
    pub vocab: Vocabulary,
    pub graph: GraphStore,
    /// Cluster of each entity id.
    pub cluster: Vec<usize>,
    /// `partner[r][c]`: the cluster that relation `r` links cluster `c` to.
    pub partner: Vec<Vec<usize>>,
}

pub fn planted_graph(cfg: &PlantedConfig) -> Result<PlantedGraph> {
    if cfg.clusters < 2 || !cfg.clusters.is_multiple_of(2) || cfg.cluster_size < 2 || cfg.relations == 0 || cfg.links == 0 {
        return Err(GenError::InvalidConfig(
            "planted graph needs an even number (>= 2) of clusters of size >= 2, and >= 1 relation and link".into(),
        ));
    }
    if cfg.links >= cfg.cluster_size {
        return Err(GenError::InvalidConfig("links must be smaller than the cluster size".into()));
    }
    let mut rng = rng_for(cfg.seed, "planted");
    let n = cfg.clusters * cfg.cluster_size;
    let cluster: Vec<usize> = (0..n).map(|e| e / cfg.cluster_size).collect();
    let mut partner = Vec::with_capacity(cfg.relations);
    for _ in 0..cfg.relations {
        let mut order: Vec<usize> = (0..cfg.clusters).collect();
        order.shuffle(&mut rng);
        let mut p = vec![0; cfg.clusters];
        for pair in order.chunks(2) {
            p[pair[0]] = pair[1];
            p[pair[1]] = pair[0];
        }
        partner.push(p);
    }

    let mut triplets = Vec::new();
    for a in 0..n {
        for (r, p) in partner.iter().enumerate() {
            let target = p[cluster[a]];
            let members: Vec<usize> = (target * cfg.cluster_size..(target + 1) * cfg.cluster_size).collect();
            for &b in members.choose_multiple(&mut rng, cfg.links) {
                triplets.push(Triplet::new(a as u32, r as u32, b as u32));
            }
        }
    }
    let vocab = Vocabulary::new(
        (0..n).map(|e| format!("e{e:04}")).collect(),
        (0..cfg.relations).map(|r| format!("r{r}")).collect(),
    )?;
    let graph = GraphStore::from_triplets(n, cfg.relations, triplets, false)?;
    Ok(PlantedGraph {
        vocab,
        graph,
        cluster,
        partner,
    })
}

/// 60 unseen entities split 30 / 10 / 20.
pub fn planted_split_config(seed: u64) -> SplitConfig {
    SplitConfig {
        min_degree: 1,
        max_degree: usize::MAX,
        n_unseen: 60,
        ratios: [30.0, 10.0, 20.0],
        seed,
    }
}

/// Small-model settings used for the planted benchmark. Validation is
/// frequent because the validation MRR peaks early and then decays.
pub fn benchmark_hyperparams(mode: Mode, seed: u64) -> HyperParams {
    HyperParams {
        dim: 32,
        num_bases: 8,
        lr: 5e-3,
        margin: 1.0,
        num_neg: 16,
        mc_train: 1,
        mc_test: 10,
        shots: 3,
        task_size: 30,
        max_iteration: 1000,
        curriculum: true,
        dropout: 0.3,
        score: ScoreKind::DistMult,
        mode,
        inverse_relations: true,
        hidden: 0,
        eval_every: 50,
        patience: 4,
        pretrain_steps: 500,
        pretrain_batch: 256,
        seed,
    }
}

/// Everything a benchmark run starts from.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub planted: PlantedGraph,
    pub split: OogSplit,
    /// Random initialization.
    pub init: ModelParams,
    /// `init` after in-graph DistMult pretraining.
    pub pretrained: ModelParams,
}

/// Builds the default planted graph, splits it with `seed`, and pretrains.
pub fn prepare_benchmark(seed: u64) -> Result<Benchmark> {
    let planted = planted_graph(&PlantedConfig::default())?;
    let split = split_graph(&planted.graph, &planted_split_config(seed))?;
    let hp = benchmark_hyperparams(Mode::Inductive, seed);
    let config = hp.model_config(split.num_entities(), split.num_raw_relations());
    let init = ModelParams::init(config, &split.unseen_mask(), &mut rng_for(seed, "init"))?;
    let pretrained = pretrain_in_graph(&split, init.clone(), &hp)?.params;
    Ok(Benchmark {
        planted,
        split,
        init,
        pretrained,
    })
}
