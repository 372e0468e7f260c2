//! Property tests for the engine's structural invariants.

use proptest::prelude::*;

use cpg_core::data::{batch_iter, gen_synthetic_tasks, Dataset};
use cpg_core::ledger::{self, Ledger, FREE};
use cpg_core::mask::{pack_bits, unpack_bits, PickMode};
use cpg_core::nn::{build_network, LayerKind, LayerSpec, Network};
use cpg_core::prune::select_prune_set;
use cpg_core::session::{Hyper, TaskSession};
use cpg_core::tensor::Tensor;

fn toy_net() -> Network {
    build_network(vec![LayerSpec::dense(3, 5), LayerSpec::dense(5, 2)], 7).unwrap()
}

proptest! {
    /// Owner tags partition the index space at every step of a random
    /// commit/grow interleaving: each index has exactly one tag, tags never
    /// exceed the committed count, and committed sets never change.
    #[test]
    fn ledger_partition_holds_under_commits_and_growth(
        ops in proptest::collection::vec(0u8..4, 1..40),
        picks in proptest::collection::vec(0usize..1000, 40),
    ) {
        let mut net = toy_net();
        let mut ledger = Ledger::new(net.n_params()).unwrap();
        let mut committed_sets: Vec<Vec<usize>> = Vec::new();
        for (step, &op) in ops.iter().enumerate() {
            match op {
                // Commit a pseudo-random slice of the free set.
                0 | 1 => {
                    let free = ledger.free_indices();
                    let take = picks[step % picks.len()] % (free.len() + 1);
                    let survivors: Vec<usize> = free.into_iter().take(take).collect();
                    let task = ledger.committed_tasks() + 1;
                    ledger.commit_task(task, &survivors).unwrap();
                    committed_sets.push(survivors);
                }
                // Grow by a small increment.
                2 => {
                    let added = vec![picks[step % picks.len()] % 3, 0];
                    ledger::grow(&mut ledger, &mut net, &added).unwrap();
                }
                // Claiming an owned index must fail and mutate nothing.
                _ => {
                    if let Some(set) = committed_sets.first() {
                        if let Some(&owned) = set.first() {
                            let before = ledger.clone();
                            prop_assert!(ledger
                                .commit_task(ledger.committed_tasks() + 1, &[owned])
                                .is_err());
                            prop_assert_eq!(&before, &ledger);
                        }
                    }
                }
            }
            ledger.check_partition().unwrap();
            prop_assert_eq!(ledger.len(), net.n_params());
            // Every committed set still holds exactly its original tags.
            let mut from_tags = vec![0usize; ledger.committed_tasks() as usize + 1];
            for i in 0..ledger.len() {
                from_tags[ledger.owner(i) as usize] += 1;
            }
            prop_assert_eq!(
                from_tags.iter().skip(1).sum::<usize>() + ledger.free_count(),
                ledger.len()
            );
            for (t, set) in committed_sets.iter().enumerate() {
                for &i in set {
                    prop_assert_eq!(ledger.owner(i), (t + 1) as u16);
                }
                prop_assert_eq!(ledger.owned_count((t + 1) as u16), set.len());
            }
        }
    }

    /// Selection equals a brute-force stable sort on (|value|, index).
    #[test]
    fn prune_selection_matches_stable_sort(
        values in proptest::collection::vec(-10.0f32..10.0, 1..200),
        fraction in 0.0f32..1.0,
    ) {
        let candidates: Vec<usize> = (0..values.len()).collect();
        let got = select_prune_set(&values, &candidates, fraction).unwrap();
        let mut order = candidates.clone();
        order.sort_by(|&a, &b| values[a].abs().total_cmp(&values[b].abs()).then(a.cmp(&b)));
        let n = (fraction as f64 * candidates.len() as f64).floor() as usize;
        let mut want: Vec<usize> = order[..n].to_vec();
        want.sort_unstable();
        prop_assert_eq!(got, want);
    }

    /// Batches are a permutation of the dataset: every row exactly once.
    #[test]
    fn batches_cover_dataset_exactly_once(
        n in 1usize..60,
        batch_size in 1usize..20,
        seed in 0u64..1000,
    ) {
        let data: Vec<f32> = (0..n).map(|i| i as f32).collect();
        let ds = Dataset::new(
            Tensor::new(vec![n, 1], data).unwrap(),
            vec![0; n],
            1,
        )
        .unwrap();
        let mut seen: Vec<usize> = batch_iter(&ds, batch_size, seed)
            .unwrap()
            .flat_map(|b| b.x.data().iter().map(|&v| v as usize).collect::<Vec<_>>())
            .collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }

    /// Packed masks round-trip bit-exactly.
    #[test]
    fn mask_packing_round_trips(bits in proptest::collection::vec(any::<bool>(), 0..200)) {
        let bytes = pack_bits(&bits);
        prop_assert_eq!(bytes.len(), bits.len().div_ceil(8));
        prop_assert_eq!(unpack_bits(&bytes, bits.len()).unwrap(), bits);
    }

    /// A committed task's frozen view depends only on weights owned by tasks
    /// up to it: mutating free or later-task parameters leaves the view
    /// bit-identical.
    #[test]
    fn frozen_view_ignores_free_and_later_weights(
        noise in proptest::collection::vec(-5.0f32..5.0, 22),
        mask_bits in proptest::collection::vec(any::<bool>(), 5),
    ) {
        let mut ledger = Ledger::new(22).unwrap();
        ledger.commit_task(1, &[0, 2, 4, 6, 8]).unwrap();
        ledger.commit_task(2, &[1, 3, 5]).unwrap();
        let mut params: Vec<f32> = (0..22).map(|i| i as f32 * 0.25 - 2.0).collect();
        let before = ledger.compose_view(&params, 2, &mask_bits, false).unwrap();
        for (i, &v) in noise.iter().enumerate() {
            if ledger.owner(i) == FREE {
                params[i] = v;
            }
        }
        let after = ledger.compose_view(&params, 2, &mask_bits, false).unwrap();
        for (a, b) in before.iter().zip(&after) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

/// Straight-through contract: with the binarization pattern locally
/// constant, the shadow update equals the gradient of the loss with respect
/// to a real-valued multiplicative mask, evaluated at the binarized point.
/// The oracle relaxes the mask to real values and takes central finite
/// differences through an independent f64 forward pass.
#[test]
fn straight_through_matches_relaxed_mask_finite_differences() {
    for seed in [3u64, 17, 91] {
        let net = build_network(
            vec![LayerSpec::dense(4, 5), LayerSpec::relu(5)],
            seed,
        )
        .unwrap();
        let mut ledger = Ledger::new(net.n_params()).unwrap();
        // Task 1 owns an arbitrary scattered subset.
        let survivors: Vec<usize> = (0..net.n_params()).step_by(3).collect();
        ledger.commit_task(1, &survivors).unwrap();

        let tasks = gen_synthetic_tasks(1, 2, 4, 12, 5.0, seed).unwrap();
        let train = &tasks.tasks[0].train;

        // Single batch, zero weight lr, unit mask lr: after one round the
        // shadow moved by exactly minus the straight-through gradient.
        let hyper = Hyper {
            lr: 0.0,
            lr_mask: 1.0,
            batch_size: train.n_samples(),
            ..Hyper::default()
        };
        let mut sess =
            TaskSession::new(&net, &ledger, 2, 2, seed ^ 1, &hyper, PickMode::Learned).unwrap();
        let head = sess.head_params();
        let shadow_before = sess.shadow().shadow().to_vec();
        let bits = sess.mask_bits();
        sess.train_epoch(&ledger, train, &hyper, 0, true).unwrap();
        let shadow_after = sess.shadow().shadow().to_vec();

        // Batch order does not matter for a full-dataset batch, but labels
        // and rows must match what train_epoch saw; rebuild that one batch.
        let batch = batch_iter(train, train.n_samples(), 0)
            .unwrap()
            .next()
            .unwrap();

        // Independent f64 loss of the relaxed-mask network at mask vector m.
        let loss_at = |m: &[f64]| -> f64 {
            let params = net.params();
            let mut eff = vec![0.0f64; net.n_params()];
            let mut j = 0usize;
            for i in 0..net.n_params() {
                eff[i] = match ledger.owner(i) {
                    FREE => params[i] as f64,
                    1 => {
                        let v = m[j] * params[i] as f64;
                        j += 1;
                        v
                    }
                    _ => 0.0,
                };
            }
            let mut total = 0.0f64;
            for r in 0..batch.x.n_rows() {
                let mut x: Vec<f64> =
                    batch.x.row(r).iter().map(|&v| v as f64).collect();
                for (l, spec) in net.specs().iter().enumerate() {
                    match spec.kind {
                        LayerKind::Relu => {
                            for v in &mut x {
                                if *v < 0.0 {
                                    *v = 0.0;
                                }
                            }
                        }
                        _ => {
                            let mut y = vec![0.0f64; spec.out_width];
                            for (o, yo) in y.iter_mut().enumerate() {
                                let mut s = if spec.has_bias {
                                    eff[net.bias_index(l, o)]
                                } else {
                                    0.0
                                };
                                for (i, &xi) in x.iter().enumerate() {
                                    s += eff[net.weight_index(l, o, i)] * xi;
                                }
                                *yo = s;
                            }
                            x = y;
                        }
                    }
                }
                // Task head in f64.
                let feat = x;
                let mut z = vec![0.0f64; head.classes];
                for (c, zc) in z.iter_mut().enumerate() {
                    let mut s = head.bias[c] as f64;
                    for (i, &f) in feat.iter().enumerate() {
                        s += head.weights[c * head.in_width + i] as f64 * f;
                    }
                    *zc = s;
                }
                let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = z.iter().map(|&v| (v - mx).exp()).sum();
                total += sum.ln() + mx - z[batch.labels[r] as usize];
            }
            total / batch.x.n_rows() as f64
        };

        let m0: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let h = 1e-3f64;
        for j in 0..m0.len() {
            let analytic = shadow_before[j] - shadow_after[j]; // lr_mask = 1
            let mut m = m0.clone();
            m[j] = m0[j] + h;
            let up = loss_at(&m);
            m[j] = m0[j] - h;
            let down = loss_at(&m);
            let numeric = ((up - down) / (2.0 * h)) as f32;
            let scale = analytic.abs().max(numeric.abs()).max(1.0);
            assert!(
                (analytic - numeric).abs() / scale < 1e-4,
                "seed {seed} mask position {j}: straight-through {analytic} vs relaxed fd {numeric}"
            );
        }
    }
}
