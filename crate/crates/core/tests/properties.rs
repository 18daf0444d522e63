mod common;

use std::collections::HashSet;

use common::oracles::*;
use common::*;
use oog_gen::episode::{corruptible_slot, curriculum_shots, sample_task, with_slot, CurriculumState, EpisodeSampler};
use oog_gen::eval::{aggregate, filtered_rank, roc_auc, Category, RankResult, TieRule};
use oog_gen::graph::{build_graph, Direction, EntityId, GraphStore, RelationId, Triplet};
use oog_gen::model::{inductive_embed, sigma_activation, support_entries, triplet_score, ModelParams, ScoreKind};
use oog_gen::rng::rng_for;
use oog_gen::split::{split_graph, MetaSetKind, SplitConfig};
use oog_gen::train::{bce_loss, hinge_loss};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn triplets_strategy(max_entities: u32, max_rel: u32, max_len: usize) -> impl Strategy<Value = Vec<(u32, u32, u32)>> {
    prop::collection::vec((0..max_entities, 0..max_rel, 0..max_entities), 1..max_len)
}

/// Multiples of 1/8 in [-4, 4]: products and affine maps stay exact.
fn dyadic_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-32i32..=32).prop_map(|k| f64::from(k) / 8.0), len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn neighbour_index_holds_two_entries_per_triplet(raw in triplets_strategy(40, 4, 200), inverses: bool) {
        let g = GraphStore::from_triplets(40, 4, raw.iter().map(|&(h, r, t)| Triplet::new(h, r, t)), inverses).unwrap();
        let entries: usize = (0..40).map(|e| g.neighbors(EntityId(e)).unwrap().len()).sum();
        prop_assert_eq!(entries, 2 * g.len());
        // membership agrees with an exhaustive scan
        for &(h, r, t) in &raw {
            let q = Triplet::new(h, r, t);
            prop_assert_eq!(g.contains(&q), g.triplets().contains(&q));
        }
        let absent = Triplet::new(0, 3, 39);
        prop_assert_eq!(g.contains(&absent), g.triplets().contains(&absent));
    }

    #[test]
    fn inverse_neighbours_mirror_raw_ones(raw in triplets_strategy(30, 3, 120)) {
        let g = GraphStore::from_triplets(30, 3, raw.iter().map(|&(h, r, t)| Triplet::new(h, r, t)), true).unwrap();
        for t in g.raw_triplets() {
            let fwd = g.neighbors(t.head).unwrap().iter().any(|n| n.relation == t.rel && n.entity == t.tail && n.direction == Direction::Outgoing);
            let inv = g.neighbors(t.tail).unwrap().iter().any(|n| n.relation == t.rel.inverse(3) && n.entity == t.head && n.direction == Direction::Outgoing);
            prop_assert!(fwd && inv);
        }
    }

    #[test]
    fn build_graph_is_deterministic(raw in triplets_strategy(30, 3, 80)) {
        let rows: Vec<(String, String, String)> = raw.iter().map(|&(h, r, t)| (format!("e{h}"), format!("r{r}"), format!("e{t}"))).collect();
        let (v1, g1) = build_graph(&rows, true).unwrap();
        let (v2, g2) = build_graph(&rows, true).unwrap();
        prop_assert_eq!(v1.hash(), v2.hash());
        prop_assert_eq!(g1.triplets(), g2.triplets());
    }

    #[test]
    fn split_conserves_triplets(seed in 0u64..10_000, size in 20usize..10_000, frac in 0.05f64..0.5) {
        let g = random_graph(seed, size);
        let eligible = oog_gen::graph::entity_frequency(&g).len();
        let cfg = SplitConfig {
            min_degree: 1,
            max_degree: usize::MAX,
            n_unseen: ((eligible as f64 * frac) as usize).max(3),
            ratios: [2.0, 1.0, 1.0],
            seed,
        };
        let split = split_graph(&g, &cfg).unwrap();
        prop_assert_eq!(conservation_failures(&g, &split), 0);
        // every associated triplet touches its own meta-set
        for set in &split.meta_sets {
            let members: HashSet<EntityId> = set.entities.iter().map(|u| u.entity).collect();
            for u in &set.entities {
                for t in &u.triplets {
                    prop_assert!(t.touches(u.entity));
                    prop_assert!(members.contains(&t.head) || members.contains(&t.tail));
                }
            }
        }
    }

    #[test]
    fn tasks_partition_and_negatives_are_clean(seed in 0u64..1000, k in 1usize..6) {
        let (_, split) = small_split(seed % 20);
        let set = split.meta_set(MetaSetKind::Train);
        let mut sampler = EpisodeSampler::new(rng_for(seed, "tasks"));
        let task = sampler.task(set, 5, k).unwrap();
        let known = split.known_triplets(&[MetaSetKind::Train]);
        for te in &task.entities {
            let all = &set.entities.iter().find(|u| u.entity == te.entity).unwrap().triplets;
            prop_assert_eq!(te.support.len() + te.query.len(), all.len());
            prop_assert!(!te.query.is_empty());
            let mut joined: Vec<_> = te.support.iter().chain(&te.query).copied().collect();
            let mut expected = all.clone();
            joined.sort();
            expected.sort();
            prop_assert_eq!(joined, expected);
        }
        let seen = split.seen_entities();
        let negatives = sampler.negatives(&task, &seen, &known, 4).unwrap();
        let seen_set: HashSet<EntityId> = seen.iter().copied().collect();
        for (te, per_entity) in task.entities.iter().zip(&negatives) {
            for (q, negs) in te.query.iter().zip(per_entity) {
                let slot = corruptible_slot(q, te.entity);
                for n in negs {
                    prop_assert!(!known.contains(n));
                    let swapped = match slot { oog_gen::episode::Slot::Head => n.head, oog_gen::episode::Slot::Tail => n.tail };
                    prop_assert!(seen_set.contains(&swapped));
                    prop_assert_eq!(with_slot(q, slot, swapped), *n);
                }
            }
        }
        // identical seeds give identical task streams
        let a = sample_task(set, 5, k, &mut rng_for(seed, "stream")).unwrap();
        let b = sample_task(set, 5, k, &mut rng_for(seed, "stream")).unwrap();
        prop_assert_eq!(a.entities.iter().map(|t| (t.entity, t.support.clone())).collect::<Vec<_>>(),
                        b.entities.iter().map(|t| (t.entity, t.support.clone())).collect::<Vec<_>>());
    }

    #[test]
    fn curriculum_is_non_increasing(max in 1usize..5000, k in 1usize..8) {
        let mut last = usize::MAX;
        for i in 1..=max {
            let s = curriculum_shots(&CurriculumState { iteration: i, max_iteration: max, target_shots: k, enabled: true });
            prop_assert!(s <= last);
            prop_assert_eq!(s, curriculum_direct(i, max, k));
            last = s;
        }
    }

    #[test]
    fn inductive_embedding_ignores_support_order(seed in 0u64..1000, k in 1usize..6) {
        let mut rng = rng_for(seed, "perm");
        let unseen = toy_unseen();
        let params = ModelParams::init(toy_config(ScoreKind::DistMult), &unseen, &mut rng).unwrap();
        let own = EntityId(0);
        let mut support: Vec<Triplet> = (0..k as u32).map(|j| {
            if j % 2 == 0 { Triplet::new(0, j % 3, 4 + j) } else { Triplet::new(4 + j, j % 3, 0) }
        }).collect();
        let lookup = |e: EntityId| if unseen[e.index()] { None } else { Some(params.weights.entity_emb.row(e.index())) };
        let a = inductive_embed(&params, &support_entries(own, &support), lookup).unwrap();
        support.shuffle(&mut rng);
        let b = inductive_embed(&params, &support_entries(own, &support), lookup).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn distmult_symmetric_transe_not(h in dyadic_vec(6), r in dyadic_vec(6), t in dyadic_vec(6)) {
        prop_assert_eq!(triplet_score(ScoreKind::DistMult, &h, &r, &t), triplet_score(ScoreKind::DistMult, &t, &r, &h));
        let fwd = triplet_score(ScoreKind::TransE, &h, &r, &t);
        let back = triplet_score(ScoreKind::TransE, &t, &r, &h);
        // ‖d + r‖ = ‖r − d‖ with d = h − t exactly when d ⟂ r
        let dot: f64 = h.iter().zip(&t).zip(&r).map(|((a, b), c)| (a - b) * c).sum();
        prop_assert_eq!(fwd == back, dot == 0.0);
    }

    #[test]
    fn effective_weight_is_linear_in_coefficients(seed in 0u64..1000, a1 in dyadic_vec(2), a2 in dyadic_vec(2)) {
        let params = ModelParams::init(toy_config(ScoreKind::DistMult), &toy_unseen(), &mut rng_for(seed, "lin")).unwrap();
        let mut block = params.weights.inductive.clone();
        let r = RelationId(0);
        let mut at = |a: &[f64]| { block.coeffs.row_mut(0).copy_from_slice(a); block.effective_weight(r) };
        let w1 = at(&a1);
        let w2 = at(&a2);
        let sum: Vec<f64> = a1.iter().zip(&a2).map(|(x, y)| x + y).collect();
        let w12 = at(&sum);
        for ((x, y), z) in w1.as_slice().iter().zip(w2.as_slice()).zip(w12.as_slice()) {
            prop_assert!((x + y - z).abs() <= 1e-12 * (1.0 + z.abs()));
        }
    }

    #[test]
    fn sigma_is_positive(x in -1e6f64..1e6) {
        prop_assert!(sigma_activation(x) > 0.0);
    }

    #[test]
    fn losses_are_non_negative(pos in prop::collection::vec(-50.0f64..50.0, 1..6), neg in prop::collection::vec(-50.0f64..50.0, 1..6), margin in 0.0f64..10.0,
                               logits in prop::collection::vec(-40.0f64..40.0, 1..10), bits in prop::collection::vec(any::<bool>(), 10)) {
        let negs: Vec<Vec<f64>> = pos.iter().map(|_| neg.clone()).collect();
        prop_assert!(hinge_loss(&pos, &negs, margin) >= 0.0);
        let labels: Vec<f64> = logits.iter().zip(&bits).map(|(_, &b)| if b { 1.0 } else { 0.0 }).collect();
        prop_assert!(bce_loss(&logits, &labels) >= 0.0);
    }

    #[test]
    fn rank_ignores_increasing_transform(emb in prop::collection::vec(dyadic_vec(4), 30), rel in dyadic_vec(4), q_tail in 1u32..30, filtered in prop::collection::vec(1u32..30, 0..5)) {
        let q = Triplet::new(0, 0, q_tail);
        let known: HashSet<Triplet> = filtered.iter().map(|&t| Triplet::new(0, 0, t)).collect();
        let candidates: Vec<EntityId> = (0..30).map(EntityId).collect();
        let unseen = vec![false; 30];
        let s = |c: EntityId| triplet_score(ScoreKind::DistMult, &emb[0], &rel, &emb[c.index()]);
        let slot = corruptible_slot(&q, EntityId(0));
        let a = filtered_rank(&q, slot, &known, &candidates, &unseen, s);
        let b = filtered_rank(&q, slot, &known, &candidates, &unseen, |c| 2.0 * s(c) + 7.0);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn metric_orderings_hold(ranks in prop::collection::vec((0usize..50, 0usize..5, any::<bool>()), 1..200)) {
        let results: Vec<RankResult> = ranks.iter().map(|&(greater, ties, uu)| RankResult {
            query: Triplet::new(0, 0, 1),
            slot: oog_gen::episode::Slot::Tail,
            greater,
            ties,
            category: if uu { Category::UnseenUnseen } else { Category::SeenUnseen },
        }).collect();
        for rule in TieRule::ALL {
            let rep = aggregate(&results, rule).unwrap();
            for m in [Some(&rep.total), rep.seen_unseen.as_ref(), rep.unseen_unseen.as_ref()].into_iter().flatten() {
                prop_assert!(m.hits_at_1 <= m.mrr && m.mrr <= 1.0);
                prop_assert!(m.hits_at_1 <= m.hits_at_3 && m.hits_at_3 <= m.hits_at_10 && m.hits_at_10 <= 1.0);
            }
        }
    }

    #[test]
    fn roc_matches_pair_count(seed in 0u64..10_000, n in 2usize..1000) {
        let (scores, labels) = random_scored(seed, n);
        let n_pos = labels.iter().filter(|&&l| l).count() as u64;
        let n_neg = labels.len() as u64 - n_pos;
        let got = roc_auc(&scores, &labels);
        if n_pos == 0 || n_neg == 0 {
            prop_assert_eq!(got, None);
        } else {
            prop_assert_eq!(got, Some(mann_whitney_twice(&scores, &labels) as f64 / (2 * n_pos * n_neg) as f64));
        }
    }
}

#[test]
fn ranking_matches_exhaustive_oracle() {
    for seed in 0..5 {
        let (checked, mismatches, _) = ranking_oracle(seed, 100);
        assert!(checked > 0);
        assert_eq!(mismatches, 0, "seed {seed}");
    }
}

#[test]
fn ranking_oracle_sees_ties() {
    let ties: usize = (0..5).map(|s| ranking_oracle(s, 100).2).sum();
    assert!(ties > 0);
}

#[test]
fn curriculum_matches_direct_formula() {
    assert_eq!(curriculum_sweep(0, 1000), 0);
}

#[test]
fn transductive_reduces_to_inductive() {
    assert_eq!(layer_consistency(0, 1000), 0);
}
