mod common;

use std::collections::BTreeSet;

use common::oracles::small_split;
use common::*;
use oog_gen::error::GenError;
use oog_gen::graph::EntityId;
use oog_gen::model::{Mode, ModelParams, ScoreKind};
use oog_gen::rng::rng_for;
use oog_gen::split::MetaSetKind;
use oog_gen::train::*;

fn small_hp(mode: Mode) -> HyperParams {
    HyperParams {
        dim: 8,
        num_bases: 2,
        lr: 5e-3,
        num_neg: 4,
        shots: 3,
        task_size: 5,
        max_iteration: 30,
        eval_every: 10,
        patience: 3,
        pretrain_steps: 200,
        pretrain_batch: 64,
        mode,
        seed: 3,
        ..HyperParams::default()
    }
}

fn setup(mode: Mode) -> (oog_gen::split::OogSplit, ModelParams, HyperParams) {
    let (_, split) = small_split(3);
    let hp = small_hp(mode);
    let cfg = hp.model_config(split.num_entities(), split.num_raw_relations());
    let init = ModelParams::init(cfg, &split.unseen_mask(), &mut rng_for(hp.seed, "init")).unwrap();
    (split, init, hp)
}

fn checkpoint(params: ModelParams, hp: Option<HyperParams>) -> Checkpoint {
    Checkpoint {
        params,
        vocabulary_hash: "abc123".into(),
        hyperparams: hp,
        optimizer: None,
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (split, init, hp) = setup(Mode::Stochastic);
    let out = meta_train(&split, init, &hp, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let ck = Checkpoint {
        optimizer: Some(out.optimizer.clone()),
        ..checkpoint(out.params.clone(), Some(hp.clone()))
    };
    save_checkpoint(&path, &ck).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.params, ck.params);
    assert_eq!(back.hyperparams, Some(hp));
    assert_eq!(back.vocabulary_hash, "abc123");
    let opt = back.optimizer.unwrap();
    assert_eq!(opt.step, out.optimizer.step);
    assert_eq!(opt.m, out.optimizer.m);
    assert_eq!(opt.v, out.optimizer.v);
    assert_eq!(checkpoint_bytes(&ck).unwrap(), std::fs::read(&path).unwrap());
}

#[test]
fn vocabulary_mismatch_is_rejected() {
    let (_, init, _) = setup(Mode::Inductive);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &checkpoint(init, None)).unwrap();
    assert!(load_checkpoint_for(&path, "abc123").is_ok());
    assert!(matches!(load_checkpoint_for(&path, "other"), Err(GenError::VocabularyMismatch { .. })));
}

#[test]
fn truncated_or_corrupted_checkpoint_is_rejected() {
    let (_, init, _) = setup(Mode::Inductive);
    let bytes = checkpoint_bytes(&checkpoint(init, None)).unwrap();
    for cut in [0, 4, 8, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(parse_checkpoint(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 1;
    assert!(parse_checkpoint(&flipped).is_err());
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(parse_checkpoint(&longer).is_err());
    let mut version = bytes;
    version[8] = 99;
    assert!(parse_checkpoint(&version).is_err());
}

#[test]
fn failed_load_leaves_existing_file_untouched() {
    let (_, init, _) = setup(Mode::Inductive);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let ck = checkpoint(init, None);
    save_checkpoint(&path, &ck).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
    assert!(load_checkpoint(&path).is_err());
    save_checkpoint(&path, &ck).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn pretraining_loss_decreases_and_unseen_rows_stay_zero() {
    let (split, init, hp) = setup(Mode::Inductive);
    let out = pretrain_in_graph(&split, init, &hp).unwrap();
    assert_eq!(out.losses.len(), 11);
    for w in out.losses.windows(2) {
        assert!(w[1] < w[0], "{:?}", out.losses);
    }
    let unseen = split.unseen_mask();
    for (e, &u) in unseen.iter().enumerate() {
        if u {
            assert!(out.params.weights.entity_emb.row(e).iter().all(|&x| x == 0.0));
        }
    }
}

#[test]
fn zero_steps_return_the_initialization() {
    let (split, init, mut hp) = setup(Mode::Stochastic);
    hp.pretrain_steps = 0;
    assert_eq!(pretrain_in_graph(&split, init.clone(), &hp).unwrap().params, init);
    hp.max_iteration = 0;
    let out = meta_train(&split, init.clone(), &hp, 1).unwrap();
    assert_eq!(out.params, init);
    assert!(out.log.is_empty());
}

#[test]
fn training_is_deterministic() {
    for mode in [Mode::Inductive, Mode::Stochastic] {
        let (split, init, hp) = setup(mode);
        let a = meta_train(&split, init.clone(), &hp, 1).unwrap();
        let b = meta_train(&split, init, &hp, 1).unwrap();
        assert_eq!(a.log, b.log);
        let bytes = |o: &TrainOutcome| checkpoint_bytes(&checkpoint(o.params.clone(), Some(hp.clone()))).unwrap();
        assert_eq!(bytes(&a), bytes(&b));
        assert_eq!(a.log.len(), hp.max_iteration.min(a.log.len()));
        assert!(a.log.iter().all(|r| r.loss >= 0.0));
    }
}

#[test]
fn evaluation_does_not_depend_on_thread_count() {
    let (split, init, hp) = setup(Mode::Stochastic);
    let mut cfg = validation_config(&hp, 1);
    let one = oog_gen::eval::evaluate_split(&init, &split, MetaSetKind::Valid, &cfg).unwrap();
    cfg.threads = 3;
    let three = oog_gen::eval::evaluate_split(&init, &split, MetaSetKind::Valid, &cfg).unwrap();
    assert_eq!(one, three);
}

#[test]
fn entity_rows_outside_the_episode_are_never_updated() {
    for (seed, mode, score) in [(21, Mode::Stochastic, ScoreKind::DistMult), (22, Mode::Inductive, ScoreKind::Linear)] {
        let (params, unseen, ep) = toy_episode(seed, mode, score);
        let (_, grad) = episode_loss_and_grad(&params, &unseen, &ep, mode, TOY_MARGIN).unwrap();
        let mut involved: BTreeSet<EntityId> = BTreeSet::new();
        for (te, negs) in ep.task.entities.iter().zip(&ep.negatives) {
            for t in te.support.iter().chain(&te.query).chain(negs.iter().flatten()) {
                involved.extend([t.head, t.tail]);
            }
        }
        let mut state = OptimizerState::new(&params.config, AdamConfig::default());
        let mut after = params.clone();
        adam_step(&mut after, &grad, &mut state, 1e-2);
        let ck = |p: &ModelParams| parse_checkpoint(&checkpoint_bytes(&checkpoint(p.clone(), None)).unwrap()).unwrap().params;
        let (before, after) = (ck(&params), ck(&after));
        let mut changed = 0;
        for e in 0..TOY_ENTITIES {
            let moved = before.weights.entity_emb.row(e) != after.weights.entity_emb.row(e);
            if moved {
                changed += 1;
                assert!(involved.contains(&EntityId(e as u32)) && !unseen[e], "row {e} moved");
            }
        }
        assert!(changed > 0);
        assert_ne!(before.weights.inductive, after.weights.inductive);
    }
}
