use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use oog_gen::eval::{evaluate_split, report_json, write_ranks_csv, EvalOutput};
use oog_gen::graph::{build_graph, parse_triplet_file, EntityId, NameTriple, RelationId, Triplet, Vocabulary};
use oog_gen::linalg::Matrix;
use oog_gen::model::layers::embed_task;
use oog_gen::model::score::linear_logits;
use oog_gen::model::{triplet_score, ModelConfig, ModelParams, Noise, ScoreKind};
use oog_gen::rng::rng_for;
use oog_gen::split::{read_manifest, split_graph, write_manifest, Manifest, MetaSetKind};
use oog_gen::train::{load_checkpoint_for, meta_train, pretrain_in_graph, save_checkpoint, Checkpoint, HyperParams};

use crate::config::Settings;
use crate::CliError;

/// Common run settings.
struct Run {
    seed: u64,
    threads: usize,
    out: PathBuf,
}

fn run_settings(s: &mut Settings) -> Run {
    let seed = s.get("run.seed").unwrap_or(0);
    let threads = s.get("run.threads").unwrap_or(1);
    if threads == 0 {
        s.error("run.threads: must be >= 1".into());
    }
    Run {
        seed,
        threads,
        out: PathBuf::from(s.raw("run.out")),
    }
}

/// A required input path that must exist.
fn input(s: &mut Settings, key: &str) -> Option<PathBuf> {
    let p = s.path(key, true)?;
    if !p.exists() {
        s.error(format!("{key}: {} does not exist", p.display()));
        return None;
    }
    Some(p)
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn load_manifest(dir: &Path) -> Result<Manifest, CliError> {
    let m = read_manifest(dir)?;
    info!(
        "split {}: {} entities, {} in-graph triplets, unseen {:?}",
        dir.display(),
        m.meta.counts.entities,
        m.meta.counts.in_graph_triplets,
        m.meta.counts.unseen_entities
    );
    Ok(m)
}

pub fn split(mut s: Settings) -> Result<(), CliError> {
    let run = run_settings(&mut s);
    let data = input(&mut s, "data.triplets");
    let cfg = s.split_config(run.seed);
    s.finish()?;
    let (data, cfg) = (data.expect("checked"), cfg.expect("checked"));

    let rows = parse_triplet_file(&data)?;
    let (vocab, graph) = build_graph(&rows, false)?;
    let split = split_graph(&graph, &cfg)?;
    let meta = write_manifest(&split, &vocab, Some(&cfg), &run.out)?;
    let c = &meta.counts;
    println!("entities\t{}", c.entities);
    println!("relations\t{}", c.relations);
    println!("in_graph_triplets\t{}", c.in_graph_triplets);
    for (kind, (n, t)) in MetaSetKind::ALL.iter().zip(c.unseen_entities.iter().zip(&c.associated_triplets)) {
        println!("{}_entities\t{n}", kind.file_stem());
        println!("{}_triplets\t{t}", kind.file_stem());
    }
    println!("cross_set_triplets\t{}", c.cross_set_triplets);
    println!("dropped_entities\t{}", c.dropped_entities);
    println!("discarded_triplets\t{}", c.discarded_triplets);
    Ok(())
}

fn random_init(manifest: &Manifest, hp: &HyperParams) -> Result<ModelParams, CliError> {
    let split = &manifest.split;
    let cfg = hp.model_config(split.num_entities(), split.num_raw_relations());
    Ok(ModelParams::init(cfg, &split.unseen_mask(), &mut rng_for(hp.seed, "init"))?)
}

pub fn pretrain(mut s: Settings) -> Result<(), CliError> {
    let run = run_settings(&mut s);
    let dir = input(&mut s, "data.manifest");
    let hp = s.hyperparams(run.seed);
    s.finish()?;
    let manifest = load_manifest(&dir.expect("checked"))?;

    let init = random_init(&manifest, &hp)?;
    let out = pretrain_in_graph(&manifest.split, init, &hp)?;
    for (i, l) in out.losses.iter().enumerate() {
        info!("pretrain eval {i}: loss {l:.6}");
    }
    create_out(&run.out)?;
    let path = run.out.join("pretrain.ckpt");
    save_checkpoint(
        &path,
        &Checkpoint {
            params: out.params,
            vocabulary_hash: manifest.vocab.hash(),
            hyperparams: Some(hp),
            optimizer: None,
        },
    )?;
    println!("{}", path.display());
    Ok(())
}

/// Differences in the fields that fix tensor shapes.
fn shape_mismatch(found: &ModelConfig, wanted: &ModelConfig) -> Vec<String> {
    let mut out = Vec::new();
    let mut cmp = |name: &str, a: String, b: String| {
        if a != b {
            out.push(format!("{name}: checkpoint has {a}, configuration asks for {b}"));
        }
    };
    cmp("model.dim", found.dim.to_string(), wanted.dim.to_string());
    cmp("model.num_bases", found.num_bases.to_string(), wanted.num_bases.to_string());
    cmp("model.score", found.score.to_string(), wanted.score.to_string());
    cmp("model.inverse_relations", found.inverse_relations.to_string(), wanted.inverse_relations.to_string());
    cmp("model.hidden", found.hidden.to_string(), wanted.hidden.to_string());
    cmp("entities", found.num_entities.to_string(), wanted.num_entities.to_string());
    cmp("relations", found.num_raw_relations.to_string(), wanted.num_raw_relations.to_string());
    out
}

pub fn train(mut s: Settings) -> Result<(), CliError> {
    let run = run_settings(&mut s);
    let dir = input(&mut s, "data.manifest");
    let init_path = match s.path("train.init", false) {
        Some(_) => input(&mut s, "train.init"),
        None => None,
    };
    let hp = s.hyperparams(run.seed);
    s.finish()?;
    let manifest = load_manifest(&dir.expect("checked"))?;

    let init = match init_path {
        Some(p) => {
            let ck = load_checkpoint_for(&p, &manifest.vocab.hash())?;
            let wanted = hp.model_config(manifest.split.num_entities(), manifest.split.num_raw_relations());
            let bad = shape_mismatch(&ck.params.config, &wanted);
            if !bad.is_empty() {
                return Err(CliError::Usage(format!("train.init {}:\n  {}", p.display(), bad.join("\n  "))));
            }
            let mut params = ck.params;
            params.config = wanted;
            params
        }
        None => random_init(&manifest, &hp)?,
    };
    let out = meta_train(&manifest.split, init, &hp, run.threads)?;
    info!("best episode {} (validation {:?})", out.best_episode, out.best_metric);

    create_out(&run.out)?;
    let mut log = String::new();
    for r in &out.log {
        writeln!(log, "{}", serde_json::to_string(r).expect("log record")).expect("write to String");
    }
    write(&run.out.join("train_log.ndjson"), log.as_bytes())?;
    let path = run.out.join("model.ckpt");
    save_checkpoint(
        &path,
        &Checkpoint {
            params: out.params,
            vocabulary_hash: manifest.vocab.hash(),
            hyperparams: Some(hp),
            optimizer: Some(out.optimizer),
        },
    )?;
    println!("{}", path.display());
    Ok(())
}

pub fn eval(mut s: Settings) -> Result<(), CliError> {
    let run = run_settings(&mut s);
    let dir = input(&mut s, "data.manifest");
    let ck_path = input(&mut s, "eval.checkpoint");
    let hp = s.hyperparams(run.seed);
    let kind = s.meta_set();
    let ranks_csv: Option<bool> = s.get("eval.ranks_csv");
    let cfg = s.eval_config(&hp, run.threads);
    s.finish()?;
    let manifest = load_manifest(&dir.expect("checked"))?;
    let ck = load_checkpoint_for(&ck_path.expect("checked"), &manifest.vocab.hash())?;

    let output = evaluate_split(&ck.params, &manifest.split, kind, &cfg)?;
    let mut echo = s.echo();
    if let Some(map) = echo.as_object_mut() {
        // where the report goes and how many workers made it do not change it
        map.remove("run.out");
        map.remove("run.threads");
    }
    let report = report_json(&output, serde_json::json!({ "settings": echo, "shots": cfg.shots, "mc_samples": cfg.mc_samples, "mode": cfg.mode }))?;
    let mut text = serde_json::to_string_pretty(&report).expect("report");
    text.push('\n');
    create_out(&run.out)?;
    write(&run.out.join("report.json"), text.as_bytes())?;
    if let (Some(true), EvalOutput::Entity(ranks)) = (ranks_csv, &output) {
        write_ranks_csv(&run.out.join("ranks.csv"), ranks)?;
    }
    print!("{text}");
    Ok(())
}

/// One parsed query line: a triplet with `?` in exactly one slot.
enum Query {
    Head(RelationId, EntityId),
    Tail(EntityId, RelationId),
    Relation(EntityId, EntityId),
}

impl Query {
    /// The entity whose embedding the query depends on.
    fn anchors(&self) -> Vec<EntityId> {
        match *self {
            Query::Head(_, t) => vec![t],
            Query::Tail(h, _) => vec![h],
            Query::Relation(h, t) => vec![h, t],
        }
    }
}

/// Vocabulary and parameters grown by new entity names, which get zero
/// embedding rows and count as unseen.
struct Extended {
    vocab: Vocabulary,
    params: ModelParams,
    unseen: Vec<bool>,
}

fn extend(manifest: &Manifest, mut params: ModelParams, rows: &[&NameTriple]) -> Result<Extended, CliError> {
    let mut names = manifest.vocab.entity_names().to_vec();
    let mut known: HashSet<String> = names.iter().cloned().collect();
    for (h, _, t) in rows {
        for n in [h, t] {
            if n != "?" && known.insert(n.clone()) {
                names.push(n.clone());
            }
        }
    }
    let added = names.len() - manifest.vocab.num_entities();
    if added > 0 {
        info!("{added} new entities get zero embedding rows");
        let d = params.dim();
        let old = &params.weights.entity_emb;
        let mut grown = Matrix::zeros(names.len(), d);
        grown.as_mut_slice()[..old.as_slice().len()].copy_from_slice(old.as_slice());
        params.weights.entity_emb = grown;
        params.config.num_entities = names.len();
    }
    let mut unseen = manifest.split.unseen_mask();
    unseen.resize(names.len(), true);
    let vocab = Vocabulary::new(names, manifest.vocab.relation_names().to_vec())?;
    Ok(Extended { vocab, params, unseen })
}

fn relation(vocab: &Vocabulary, name: &str, path: &Path, line: usize) -> Result<RelationId, CliError> {
    vocab
        .relation_id(name)
        .ok_or_else(|| CliError::Runtime(format!("{}:{line}: unknown relation {name:?}", path.display())))
}

pub fn predict(mut s: Settings) -> Result<(), CliError> {
    let run = run_settings(&mut s);
    let dir = input(&mut s, "data.manifest");
    let ck_path = input(&mut s, "predict.checkpoint");
    let queries_path = input(&mut s, "predict.queries");
    let support_path = input(&mut s, "predict.support");
    let hp = s.hyperparams(run.seed);
    let top_k: usize = s.get("predict.top_k").unwrap_or(10);
    s.finish()?;
    let (queries_path, support_path) = (queries_path.expect("checked"), support_path.expect("checked"));
    let manifest = load_manifest(&dir.expect("checked"))?;
    let ck = load_checkpoint_for(&ck_path.expect("checked"), &manifest.vocab.hash())?;

    let query_rows = parse_triplet_file(&queries_path)?;
    let support_rows = parse_triplet_file(&support_path)?;
    let all_rows: Vec<&NameTriple> = query_rows.iter().chain(&support_rows).collect();
    let ext = extend(&manifest, ck.params, &all_rows)?;
    let vocab = &ext.vocab;
    let entity = |n: &str| vocab.entity_id(n).expect("extended vocabulary");

    let mut support = Vec::with_capacity(support_rows.len());
    for (i, (h, r, t)) in support_rows.iter().enumerate() {
        if [h, r, t].iter().any(|x| *x == "?") {
            return Err(CliError::Runtime(format!("{}:{}: '?' in a support triplet", support_path.display(), i + 1)));
        }
        support.push(Triplet {
            head: entity(h),
            rel: relation(vocab, r, &support_path, i + 1)?,
            tail: entity(t),
        });
    }
    let mut queries = Vec::with_capacity(query_rows.len());
    for (i, (h, r, t)) in query_rows.iter().enumerate() {
        let q = match (h.as_str(), r.as_str(), t.as_str()) {
            ("?", r, t) if t != "?" && r != "?" => Query::Head(relation(vocab, r, &queries_path, i + 1)?, entity(t)),
            (h, r, "?") if h != "?" && r != "?" => Query::Tail(entity(h), relation(vocab, r, &queries_path, i + 1)?),
            (h, "?", t) if h != "?" && t != "?" => Query::Relation(entity(h), entity(t)),
            _ => {
                return Err(CliError::Runtime(format!(
                    "{}:{}: exactly one field must be '?'",
                    queries_path.display(),
                    i + 1
                )))
            }
        };
        queries.push(q);
    }

    // Unseen anchors are embedded together as one task from their support.
    let task: Vec<EntityId> = queries
        .iter()
        .flat_map(Query::anchors)
        .filter(|e| ext.unseen[e.index()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let supports: Vec<Vec<Triplet>> = task
        .iter()
        .map(|&e| support.iter().copied().filter(|t| t.touches(e)).collect())
        .collect();
    if let Some((e, _)) = task.iter().zip(&supports).find(|(_, s)| s.is_empty()) {
        return Err(CliError::Runtime(format!("no support triplets for unseen entity {:?}", vocab.entity_name(*e))));
    }
    let refs: Vec<&[Triplet]> = supports.iter().map(Vec::as_slice).collect();
    let trace = embed_task(&ext.params, &ext.unseen, &task, &refs, hp.mode, &Noise::none(task.len()))?;
    let zero = vec![0.0; ext.params.dim()];
    let emb = |e: EntityId| -> &[f64] {
        if !ext.unseen[e.index()] {
            return ext.params.weights.entity_emb.row(e.index());
        }
        match trace.index.get(&e) {
            Some(&j) => &trace.entities[j].out,
            None => &zero,
        }
    };

    let mut known = manifest.split.known_triplets(&MetaSetKind::ALL);
    known.extend(support.iter().copied());
    let candidates: Vec<EntityId> = (0..vocab.num_entities() as u32)
        .map(EntityId)
        .filter(|e| !ext.unseen[e.index()] || trace.index.contains_key(e))
        .collect();
    let kind = ext.params.config.score;
    let rel_emb = |r: RelationId| ext.params.weights.relation_emb.row(r.index());
    let score_triplet = |t: &Triplet| triplet_score(kind, emb(t.head), rel_emb(t.rel), emb(t.tail));

    let mut out = String::from("query\trank\thead\trelation\ttail\tscore\tknown\n");
    for (qi, q) in queries.iter().enumerate() {
        let mut scored: Vec<(Triplet, f64)> = match *q {
            Query::Head(r, t) if kind != ScoreKind::Linear => candidates
                .iter()
                .map(|&c| {
                    let x = Triplet { head: c, rel: r, tail: t };
                    (x, score_triplet(&x))
                })
                .collect(),
            Query::Tail(h, r) if kind != ScoreKind::Linear => candidates
                .iter()
                .map(|&c| {
                    let x = Triplet { head: h, rel: r, tail: c };
                    (x, score_triplet(&x))
                })
                .collect(),
            Query::Relation(h, t) => {
                let raw = vocab.num_raw_relations() as u32;
                match ext.params.weights.linear.as_ref() {
                    Some(head) => linear_logits(head, emb(h), emb(t))
                        .into_iter()
                        .enumerate()
                        .map(|(r, l)| (Triplet::new(h.0, r as u32, t.0), l))
                        .collect(),
                    None => (0..raw)
                        .map(|r| {
                            let x = Triplet::new(h.0, r, t.0);
                            (x, score_triplet(&x))
                        })
                        .collect(),
                }
            }
            _ => {
                return Err(CliError::Runtime(format!(
                    "query {}: the linear score predicts relations; put '?' in the relation slot",
                    qi + 1
                )))
            }
        };
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (rank, (t, sc)) in scored.iter().take(top_k).enumerate() {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{sc:.6}\t{}",
                qi + 1,
                rank + 1,
                vocab.entity_name(t.head),
                vocab.relation_name(t.rel),
                vocab.entity_name(t.tail),
                u8::from(known.contains(t))
            )
            .expect("write to String");
        }
    }
    create_out(&run.out)?;
    write(&run.out.join("predictions.tsv"), out.as_bytes())?;
    print!("{out}");
    Ok(())
}
