use bnwdro::dataset::{sample_mixture_labeled, MixtureSpec};
use bnwdro::dpmm::{adjusted_rand_index, cluster, partition, DpmmConfig};
use proptest::prelude::*;

#[test]
fn two_gaussians_recovered_across_seeds() {
    let spec = MixtureSpec::scalar(&[(0.5, -5.0, 1.0), (0.5, 5.0, 1.0)]);
    let mut good = 0;
    for seed in 0..100 {
        let (data, truth) = sample_mixture_labeled(&spec, 200, seed).unwrap();
        let cfg = DpmmConfig { truncation: Some(10), seed, ..DpmmConfig::default() };
        let (post, clustering) = cluster(&data, &cfg).unwrap();
        assert!(post.elbo_trace.windows(2).all(|w| w[1] >= w[0] - 1e-6), "seed {seed}");
        let alive = post.expected_weights.iter().filter(|&&w| w > post.min_cluster_weight).count();
        if alive == 2 && clustering.k() == 2 && adjusted_rand_index(&clustering.labels, &truth) >= 0.95 {
            good += 1;
        }
    }
    assert!(good >= 95, "{good}/100");
}

proptest! {
    #[test]
    fn partition_commutes_with_row_permutation(labels in prop::collection::vec(0usize..5, 1..40), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let n = labels.len();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut bnwdro::rng::stream_rng(seed, 0));
        let base = partition(n, &labels);
        let permuted: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let moved = partition(n, &permuted);
        // same groups of original rows, whatever the numbering
        let mut a: Vec<Vec<usize>> = base.clusters.clone();
        let mut b: Vec<Vec<usize>> = moved.clusters.iter().map(|c| { let mut v: Vec<usize> = c.iter().map(|&i| perm[i]).collect(); v.sort(); v }).collect();
        a.sort(); b.sort();
        prop_assert_eq!(a, b);
        prop_assert_eq!(moved.clusters.iter().map(Vec::len).sum::<usize>(), n);
    }
}
