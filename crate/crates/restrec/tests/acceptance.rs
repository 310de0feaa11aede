//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured numbers (run with `--nocapture` to see them all).

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use restrec::autodiff::GradSink;
use restrec::data::{split_dataset, Dataset, FeedbackKind, InteractionRecord};
use restrec::graph::{build_counterfactual_pool, GraphStore};
use restrec::metrics::{evaluate, hr_at_k, mae, ndcg_at_k, rmse, ModelScorer};
use restrec::model::{
    self, assemble_batch, compute_loss, total_loss, Ablation, Batch, BatchConfig, BatchSample,
    Model, ModelConfig,
};
use restrec::scm;
use restrec::train::{train, Adam, TrainConfig};
use restrec::viz::hard_code;

/// Criterion 1: on >=100 random discrete SCMs, mutilated-graph enumeration
/// and the adjustment formula agree elementwise to 1e-9, in under a minute.
#[test]
fn criterion_1_identification_identity() {
    let started = std::time::Instant::now();
    let mut worst = 0.0f64;
    let mut cells = 0usize;
    for seed in 0..100u64 {
        let spec = scm::random_spec(seed, 6, 6, 4, 5);
        for g in 0..spec.g_card {
            for v in 0..spec.v_card {
                let res = scm::exact_interventional(&spec, g, v).unwrap();
                assert!(res.skipped_cells.is_empty());
                assert!(
                    res.max_discrepancy <= 1e-9,
                    "spec {seed} (G={g}, v={v}): {}",
                    res.max_discrepancy
                );
                worst = worst.max(res.max_discrepancy);
                cells += 1;
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    println!(
        "criterion 1 PASS: identification identity on 100 random specs ({cells} cells), \
         max discrepancy {worst:.2e}, {elapsed:.2?}"
    );
}

/// Criterion 2: a constructed spec shows selection bias above 0.05 total
/// variation; the inert-exposure spec shows exactly zero.
#[test]
fn criterion_2_selection_bias_demonstration() {
    let biased = scm::demo_biased_spec();
    let mut max_bias = 0.0f64;
    for g in 0..biased.g_card {
        for v in 0..biased.v_card {
            max_bias = max_bias.max(scm::measure_selection_bias(&biased, g, v).unwrap());
        }
    }
    assert!(max_bias > 0.05, "max bias {max_bias}");

    let inert = scm::inert_exposure_spec();
    for g in 0..inert.g_card {
        for v in 0..inert.v_card {
            let bias = scm::measure_selection_bias(&inert, g, v).unwrap();
            assert_eq!(bias, 0.0, "inert spec (G={g}, v={v}) bias {bias}");
        }
    }
    println!(
        "criterion 2 PASS: constructed spec TV bias {max_bias:.4} > 0.05; inert spec exactly 0"
    );
}

fn micro_model(ablation: Ablation) -> Model {
    let cfg = ModelConfig {
        embed_dim: 4,
        rating_dim: 2,
        hidden_dim: 6,
        strategy_blocks: 2,
        strategy_cats: 3,
        ablation,
        init_seed: 11,
        ..ModelConfig::new(5, 6, 5, FeedbackKind::Explicit)
    };
    Model::init(cfg).unwrap()
}

fn micro_batch() -> Batch {
    Batch {
        samples: vec![
            BatchSample {
                user: 0,
                item: 1,
                rating: 4,
                exposed: true,
                item_ctx: vec![(1, 4), (2, 2)],
                social_ctx: vec![1, 2],
                social_negs: vec![3, 4],
            },
            BatchSample {
                user: 1,
                item: 3,
                rating: 3,
                exposed: false,
                item_ctx: vec![(0, 5)],
                social_ctx: vec![0],
                social_negs: vec![2],
            },
            BatchSample {
                user: 2,
                item: 0,
                rating: 5,
                exposed: true,
                item_ctx: vec![(0, 5), (4, 1), (5, 3)],
                social_ctx: vec![],
                social_negs: vec![],
            },
            BatchSample {
                user: 3,
                item: 5,
                rating: 2,
                exposed: false,
                item_ctx: vec![(2, 2)],
                social_ctx: vec![4],
                social_negs: vec![0],
            },
        ],
    }
}

/// Criterion 3: analytic gradients match central finite differences on a
/// micro-model (d=4, B=2, C=3, batch of 4 mixed-exposure samples) to 1e-6
/// relative error (double precision).
#[test]
fn criterion_3_gradient_check() {
    let mut model = micro_model(Ablation::Full);
    let batch = micro_batch();
    let (tau, gamma, seed) = (0.5, 1e-3, 17);
    let mut sink = GradSink::new(model.layout.net_len);
    compute_loss(&model, &batch, tau, gamma, seed, 1, Some(&mut sink)).unwrap();
    let mut dense = vec![0.0; model.params.len()];
    sink.scatter_into(&mut dense);
    let eps = 1e-5;
    let mut worst = 0.0f64;
    #[allow(clippy::needless_range_loop)]
    for i in 0..model.params.len() {
        let orig = model.params[i];
        model.params[i] = orig + eps;
        let fp = total_loss(&model, &batch, tau, gamma, seed).unwrap();
        model.params[i] = orig - eps;
        let fm = total_loss(&model, &batch, tau, gamma, seed).unwrap();
        model.params[i] = orig;
        let fd = (fp - fm) / (2.0 * eps);
        let a = dense[i];
        let err = (a - fd).abs() / f64::max(1.0, a.abs().max(fd.abs()));
        worst = worst.max(err);
        assert!(err <= 1e-6, "param {i}: analytic {a} vs fd {fd} (err {err:.2e})");
    }
    println!(
        "criterion 3 PASS: {} parameters, max FD relative error {worst:.2e} <= 1e-6",
        model.params.len()
    );
}

/// Criterion 4: the objective carries no KL term for the user latent (delta
/// posterior), and independently recomputing the remaining evidence-bound
/// terms on a fixed micro-batch reproduces loss_terms to 1e-6.
#[test]
fn criterion_4_objective_composition() {
    use restrec::model::{
        aggregate_bipartite, aggregate_social, aggregate_strategy_context, encode_strategy,
        encode_user, predict_rating, reconstruct_exposure, reconstruct_social_edge, GumbelNoise,
    };
    let model = micro_model(Ablation::Full);
    let batch = micro_batch();
    let (tau, noise_seed) = (0.7, 13);
    let t = model::loss_terms(&model, &batch, tau, noise_seed).unwrap();

    // The objective decomposes into exactly these four data terms; the user
    // latent contributes no KL because its posterior is a point mass.
    let four_sum = t.kl_s + t.nll_social + t.nll_exposure + t.nll_rating;
    assert!((t.data_total() - four_sum).abs() < 1e-15);

    // Independent recomputation of each term through the public ops.
    let mut kl = 0.0;
    let mut soc = 0.0;
    let mut expo = 0.0;
    let mut rat = 0.0;
    for (idx, s) in batch.samples.iter().enumerate() {
        let (hb, _) = aggregate_bipartite(&model, s.user, &s.item_ctx);
        let (hs, _) = aggregate_social(&model, s.user, &s.social_ctx);
        let h_u = encode_user(&model, &hb, &hs, s.exposed);
        let (hd, _) = aggregate_strategy_context(&model, s.user, &s.item_ctx);
        let per_sample_seed = noise_seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let code = encode_strategy(
            &model,
            &hd,
            s.item,
            s.exposed,
            tau,
            GumbelNoise::Seeded(per_sample_seed),
        )
        .unwrap();
        let c = model.cfg.strategy_cats;
        for block in code.logits.chunks(c) {
            let m = block.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = block.iter().map(|z| (z - m).exp()).collect();
            let sum: f64 = e.iter().sum();
            kl += e
                .iter()
                .map(|v| {
                    let q = v / sum;
                    q * q.ln()
                })
                .sum::<f64>()
                + (c as f64).ln();
        }
        for (&other, target) in s
            .social_ctx
            .iter()
            .map(|o| (o, 1.0f64))
            .chain(s.social_negs.iter().map(|o| (o, 0.0)))
        {
            let p = reconstruct_social_edge(&h_u, model.user_embedding(other));
            soc -= target * p.ln() + (1.0 - target) * (1.0 - p).ln();
        }
        let p_e = reconstruct_exposure(&model, &h_u, s.item, &code.relaxed);
        let target = if s.exposed { 1.0 } else { 0.0 };
        expo -= target * p_e.ln() + (1.0 - target) * (1.0 - p_e).ln();
        let pred = predict_rating(&model, &h_u, s.item, s.exposed);
        rat += (pred - s.rating as f64).powi(2);
    }
    let n = batch.samples.len() as f64;
    let errs = [
        (t.kl_s - kl / n).abs(),
        (t.nll_social - soc / n).abs(),
        (t.nll_exposure - expo / n).abs(),
        (t.nll_rating - rat / n).abs(),
        (t.data_total() - (kl + soc + expo + rat) / n).abs(),
    ];
    for (i, e) in errs.iter().enumerate() {
        assert!(*e <= 1e-6, "term {i} differs by {e:.2e}");
    }
    println!(
        "criterion 4 PASS: no user-KL term; independent recomputation of the four bound terms \
         matches loss_terms, max |delta| {:.2e} <= 1e-6",
        errs.iter().copied().fold(0.0, f64::max)
    );
}

/// Criterion 5: structural invariants: attention normalization, simplex
/// rows, exact branch-isolation zeros, counterfactual pool equals brute force
/// on 50 random graphs.
#[test]
fn criterion_5_structural_invariants() {
    use restrec::model::{aggregate_bipartite, aggregate_social, encode_strategy, GumbelNoise};
    let model = micro_model(Ablation::Full);
    let mut rng = ChaCha8Rng::seed_from_u64(23);

    // Attention weights sum to 1 within 1e-6.
    let mut worst_sum = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..5usize);
        let items: Vec<(u32, u8)> = (0..n)
            .map(|_| (rng.random_range(0..6), rng.random_range(1..=5) as u8))
            .collect();
        let (_, w) = aggregate_bipartite(&model, rng.random_range(0..5), &items);
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
        let m = rng.random_range(1..5usize);
        let neighbors: Vec<u32> = (0..m).map(|_| rng.random_range(0..5)).collect();
        let (_, w) = aggregate_social(&model, rng.random_range(0..5), &neighbors);
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
    }
    assert!(worst_sum <= 1e-6);

    // Relaxed strategy rows on the simplex within 1e-5.
    let mut worst_simplex = 0.0f64;
    for t in 0..20u64 {
        let hd: Vec<f64> = (0..model.cfg.item_ctx_dim())
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let code =
            encode_strategy(&model, &hd, 2, t % 2 == 0, 0.5, GumbelNoise::Seeded(t)).unwrap();
        for block in code.relaxed.chunks(model.cfg.strategy_cats) {
            worst_simplex = worst_simplex.max((block.iter().sum::<f64>() - 1.0).abs());
            assert!(block.iter().all(|&p| p >= 0.0));
        }
    }
    assert!(worst_simplex <= 1e-5);

    // Branch isolation: single-exposure batches leave the inactive heads with
    // exactly zero gradient (data loss, gamma = 0).
    for exposed in [true, false] {
        let batch = Batch {
            samples: micro_batch()
                .samples
                .into_iter()
                .map(|mut s| {
                    s.exposed = exposed;
                    s
                })
                .collect(),
        };
        let mut sink = GradSink::new(model.layout.net_len);
        compute_loss(&model, &batch, 0.5, 0.0, 5, 1, Some(&mut sink)).unwrap();
        let inactive = if exposed { ["g0", "f0", "phi0"] } else { ["g1", "f1", "phi1"] };
        for head in inactive {
            for part in [".w1", ".b1", ".w2", ".b2"] {
                let v = model.layout.view(&format!("{head}{part}"));
                assert!(
                    sink.net[v.offset..v.offset + v.len()].iter().all(|&g| g == 0.0),
                    "{head}{part} gradient not exactly zero"
                );
            }
        }
    }

    // Counterfactual pool equals the brute-force oracle on 50 random graphs.
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n_users = rng.random_range(3..9u32);
        let n_items = rng.random_range(3..10u32);
        let mut pairs = std::collections::HashSet::new();
        for _ in 0..rng.random_range(5..40) {
            pairs.insert((rng.random_range(0..n_users), rng.random_range(0..n_items)));
        }
        let interactions: Vec<InteractionRecord> = pairs
            .iter()
            .map(|&(user, item)| InteractionRecord {
                user,
                item,
                rating: rng.random_range(1..=5) as u8,
                exposed: true,
                timestamp: None,
            })
            .collect();
        let mut social = Vec::new();
        for a in 0..n_users {
            for b in (a + 1)..n_users {
                if rng.random_range(0.0..1.0f64) < 0.4 {
                    social.push((a, b));
                    social.push((b, a));
                }
            }
        }
        let ds = Dataset {
            interactions,
            social_edges: social,
            num_users: n_users,
            num_items: n_items,
            feedback: FeedbackKind::Explicit,
            rating_levels: 5,
        };
        let g = GraphStore::build(&ds);
        // Uncapped pool: per-user sets must equal the brute-force beta set.
        let pool = build_counterfactual_pool(&g, 2, Some(usize::MAX), seed);
        let mut by_user: HashMap<u32, Vec<u32>> = HashMap::new();
        for s in &pool {
            assert!(!s.exposed);
            by_user.entry(s.user).or_default().push(s.item);
        }
        for user in 0..n_users {
            let mut expect = Vec::new();
            for item in 0..n_items {
                if g.is_exposed(user, item) {
                    continue;
                }
                let count = g
                    .neighbors_of(user)
                    .iter()
                    .filter(|&&nb| g.is_exposed(nb, item))
                    .count();
                if count >= 2 {
                    expect.push(item);
                }
            }
            let mut got = by_user.remove(&user).unwrap_or_default();
            got.sort_unstable();
            assert_eq!(got, expect, "user {user} seed {seed}");
        }
    }
    println!(
        "criterion 5 PASS: attention sums off by <= {worst_sum:.2e}; simplex rows off by <= \
         {worst_simplex:.2e}; branch-isolation gradients exactly zero; pool matches brute force \
         on 50 graphs"
    );
}

/// Criterion 6: metric unit values, including NDCG at rank 4 = 1/log2(5).
#[test]
fn criterion_6_metric_units() {
    assert!((mae(&[1.0, 2.0], &[1.0, 4.0]).unwrap() - 1.0).abs() < 1e-12);
    assert!((rmse(&[1.0, 2.0], &[1.0, 4.0]).unwrap() - 2.0f64.sqrt()).abs() < 1e-12);
    // positive = item 0; construct ranks by descending score
    let at_rank = |rank: usize, n: usize| -> Vec<(u32, f64)> {
        (0..n as u32)
            .map(|i| {
                let r = if i == 0 {
                    rank
                } else if (i as usize) < rank {
                    i as usize
                } else {
                    i as usize + 1
                };
                (i, -(r as f64))
            })
            .collect()
    };
    assert_eq!(hr_at_k(&at_rank(1, 10), 0, 5).unwrap(), 1.0);
    assert_eq!(ndcg_at_k(&at_rank(1, 10), 0, 5).unwrap(), 1.0);
    assert_eq!(hr_at_k(&at_rank(6, 10), 0, 5).unwrap(), 0.0);
    assert_eq!(ndcg_at_k(&at_rank(6, 10), 0, 5).unwrap(), 0.0);
    let ndcg4 = ndcg_at_k(&at_rank(4, 10), 0, 5).unwrap();
    assert!((ndcg4 - 1.0 / 5.0f64.log2()).abs() < 1e-12);
    assert!((ndcg4 - 0.43068).abs() < 1e-5);
    println!("criterion 6 PASS: MAE/RMSE/HR/NDCG hand values exact; NDCG rank-4 = {ndcg4:.5}");
}

/// Criterion 7: a 100-interaction set is memorized (reconstruction MSE below
/// 0.05 within 2000 steps) and one optimizer step at lr 1e-5 on a fixed batch
/// strictly decreases the total loss.
#[test]
fn criterion_7_overfit_and_descent() {
    // 25 users x 4 private items with structured ratings.
    let mut interactions = Vec::new();
    for user in 0..25u32 {
        for j in 0..4u32 {
            interactions.push(InteractionRecord {
                user,
                item: user * 4 + j,
                rating: 1 + ((user + j) % 5) as u8,
                exposed: true,
                timestamp: None,
            });
        }
    }
    let ds = Dataset {
        interactions,
        social_edges: vec![],
        num_users: 25,
        num_items: 100,
        feedback: FeedbackKind::Explicit,
        rating_levels: 5,
    };
    let g = GraphStore::build(&ds);
    let mcfg = ModelConfig {
        embed_dim: 16,
        rating_dim: 4,
        hidden_dim: 32,
        strategy_blocks: 2,
        strategy_cats: 3,
        ..ModelConfig::new(25, 100, 5, FeedbackKind::Explicit)
    };
    let mut tcfg = TrainConfig {
        learning_rate: 5e-3,
        max_steps: 2000,
        eval_every: 200,
        patience_steps: 2000,
        seed: 5,
        ..TrainConfig::default()
    };
    tcfg.batch.batch_size = 64;
    tcfg.batch.fanout_items = 8;
    tcfg.batch.fanout_social = 4;
    let out = train(mcfg.clone(), &ds, &ds, &g, &[], None, &tcfg).unwrap();
    let scorer = ModelScorer::new(&out.model, &g);
    let report = evaluate(&scorer, &ds, None, &[]).unwrap();
    let mse = report.get("rmse").unwrap().powi(2);
    assert!(mse < 0.05, "reconstruction mse {mse}");

    // Strict single-step descent at lr 1e-5 on a fixed micro-batch.
    let model = Model::init(mcfg).unwrap();
    let batch = assemble_batch(
        &g,
        &ds.interactions,
        &[],
        &BatchConfig {
            batch_size: 32,
            fanout_items: 6,
            fanout_social: 4,
            counterfactual_ratio: 0.5,
        },
        77,
    );
    let noise_seed = 3;
    let mut sink = GradSink::new(model.layout.net_len);
    let before = compute_loss(&model, &batch, 0.5, 1e-5, noise_seed, 1, Some(&mut sink))
        .unwrap()
        .total();
    let mut dense = vec![0.0; model.params.len()];
    sink.scatter_into(&mut dense);
    let mut stepped = model.clone();
    let mut adam = Adam::new(stepped.params.len());
    adam.step(&mut stepped.params, &dense, 1e-5);
    let after = compute_loss(&stepped, &batch, 0.5, 1e-5, noise_seed, 1, None)
        .unwrap()
        .total();
    assert!(after < before, "{after} !< {before}");
    println!(
        "criterion 7 PASS: overfit mse {mse:.4} < 0.05 within 2000 steps; one step at lr 1e-5 \
         moved loss {before:.6} -> {after:.6}"
    );
}

fn nmi(xs: &[usize], ys: &[usize]) -> f64 {
    let n = xs.len() as f64;
    let mut jx: HashMap<usize, f64> = HashMap::new();
    let mut jy: HashMap<usize, f64> = HashMap::new();
    let mut jxy: HashMap<(usize, usize), f64> = HashMap::new();
    for (&x, &y) in xs.iter().zip(ys) {
        *jx.entry(x).or_default() += 1.0;
        *jy.entry(y).or_default() += 1.0;
        *jxy.entry((x, y)).or_default() += 1.0;
    }
    let mut mi = 0.0;
    for ((x, y), c) in &jxy {
        let pxy = c / n;
        mi += pxy * (pxy / (jx[x] / n * jy[y] / n)).ln();
    }
    let hx: f64 = jx.values().map(|c| {
        let p = c / n;
        -p * p.ln()
    })
    .sum();
    let hy: f64 = jy.values().map(|c| {
        let p = c / n;
        -p * p.ln()
    })
    .sum();
    if hx == 0.0 || hy == 0.0 {
        0.0
    } else {
        mi / (hx * hy).sqrt()
    }
}

/// Criterion 8: on regime-switching synthetic data (~50K logged
/// interactions), the full model's 5-seed mean test RMSE does not exceed the
/// ablation without latent strategies, and the mean strategy-recovery NMI
/// against ground-truth regimes clears the shuffled-label chance level.
#[test]
fn criterion_8_ablation_ordering() {
    let started = std::time::Instant::now();
    let mut spec = scm::demo_biased_spec();
    spec.num_samples = 140_000;
    spec.num_users = 2500;
    spec.num_items = 800;
    spec.num_segments = 12;
    spec.user_activity_segments = 2;
    spec.seed = 21;
    let syn = scm::generate(&spec).unwrap();
    assert!(
        syn.dataset.interactions.len() > 40_000,
        "only {} logged",
        syn.dataset.interactions.len()
    );
    let split = split_dataset(&syn.dataset, &Default::default()).unwrap();
    let graph = GraphStore::build(&split.train);
    let pool = build_counterfactual_pool(&graph, 2, Some(60), 7);

    let mut rec_index = HashMap::new();
    for (i, r) in syn.dataset.interactions.iter().enumerate() {
        rec_index.insert((r.user, r.item), i);
    }

    let mut means = HashMap::new();
    let mut nmi_vals = Vec::new();
    let mut chance_vals = Vec::new();
    for ablation in [Ablation::Full, Ablation::RestS] {
        let mut rmses = Vec::new();
        for seed in 0..5u64 {
            let mcfg = ModelConfig {
                embed_dim: 8,
                rating_dim: 4,
                hidden_dim: 24,
                strategy_blocks: 4,
                strategy_cats: 3,
                ablation,
                ..ModelConfig::new(
                    syn.dataset.num_users,
                    syn.dataset.num_items,
                    5,
                    FeedbackKind::Explicit,
                )
            };
            let mut tcfg = TrainConfig {
                learning_rate: 1e-3,
                gamma: 1e-5,
                tau_start: 0.5,
                max_steps: 1500,
                eval_every: 100,
                patience_steps: 500,
                seed: 100 + seed,
                ..TrainConfig::default()
            };
            tcfg.batch.batch_size = 256;
            tcfg.batch.fanout_items = 8;
            tcfg.batch.fanout_social = 8;
            let out = train(mcfg, &split.train, &split.val, &graph, &pool, None, &tcfg).unwrap();
            let scorer = ModelScorer::new(&out.model, &graph);
            let report = evaluate(&scorer, &split.test, None, &[]).unwrap();
            rmses.push(report.get("rmse").unwrap());

            if ablation == Ablation::Full {
                // Per-interaction hard codes vs ground-truth regimes on 2000
                // test interactions, with a shuffled-label chance baseline.
                let mut raw_codes = Vec::new();
                let mut codes = Vec::new();
                let mut regimes = Vec::new();
                for rec in split.test.interactions.iter().take(2000) {
                    let code = hard_code(&out.model, &graph, rec.user, rec.item).unwrap();
                    let mut label = 0usize;
                    for (b, c) in code.iter().enumerate() {
                        label += c * 3usize.pow(b as u32);
                    }
                    codes.push(label);
                    regimes.push(syn.ledger[rec_index[&(rec.user, rec.item)]].regime);
                    raw_codes.push(code);
                }
                nmi_vals.push(nmi(&codes, &regimes));
                let mut shuffled = codes.clone();
                use rand::seq::SliceRandom;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                shuffled.shuffle(&mut rng);
                chance_vals.push(nmi(&shuffled, &regimes));

                if seed == 0 {
                    // Reported, not asserted: mean Hamming distance between
                    // hard codes within a regime vs across regimes.
                    let (mut within, mut wn, mut across, mut an) = (0.0f64, 0u64, 0.0f64, 0u64);
                    for i in 0..raw_codes.len().min(400) {
                        for j in (i + 1)..raw_codes.len().min(400) {
                            let d = raw_codes[i]
                                .iter()
                                .zip(&raw_codes[j])
                                .filter(|(a, b)| a != b)
                                .count() as f64;
                            if regimes[i] == regimes[j] {
                                within += d;
                                wn += 1;
                            } else {
                                across += d;
                                an += 1;
                            }
                        }
                    }
                    println!(
                        "criterion 8 report: mean code Hamming within-regime {:.3} vs \
                         across-regime {:.3} (seed 100)",
                        within / wn.max(1) as f64,
                        across / an.max(1) as f64
                    );
                }
            }
        }
        let mean: f64 = rmses.iter().sum::<f64>() / rmses.len() as f64;
        means.insert(format!("{ablation:?}"), (mean, rmses));
    }
    let (full_mean, full_rmses) = &means["Full"];
    let (rests_mean, rests_rmses) = &means["RestS"];
    assert!(
        full_mean <= rests_mean,
        "full {full_mean:.6} > rest-s {rests_mean:.6}"
    );
    let nmi_mean: f64 = nmi_vals.iter().sum::<f64>() / nmi_vals.len() as f64;
    let chance_mean: f64 = chance_vals.iter().sum::<f64>() / chance_vals.len() as f64;
    assert!(
        nmi_mean > chance_mean,
        "strategy NMI {nmi_mean:.4} not above chance {chance_mean:.4}"
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 30 * 60, "took {elapsed:?}");
    println!(
        "criterion 8 PASS: test RMSE full {full_mean:.5} <= rest-s {rests_mean:.5} over 5 seeds \
         (full {full_rmses:.4?}, rest-s {rests_rmses:.4?}); strategy-recovery NMI {nmi_mean:.4} \
         vs shuffled chance {chance_mean:.4} (per-seed {nmi_vals:.4?}); {elapsed:.0?}"
    );
}

/// Criterion 9: the desk-scale real-data target needs the Ciao dump, which is
/// not bundled in this environment; per the criterion's own fallback clause,
/// criteria 1-8 constitute acceptance and this item is reported as not run.
#[test]
fn criterion_9_real_data_target_not_run() {
    println!(
        "criterion 9 NOT RUN: Ciao dataset is not bundled; per the fallback clause, criteria 1-8 \
         constitute acceptance. The `prepare`/`train --grid`/`seeds` pipeline accepts the Ciao \
         TSV dumps directly when available."
    );
}
