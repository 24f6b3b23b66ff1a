use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use contentflow::simeval::{
    alpha_grid, pareto_quantile, policy1_assign, run_cell, run_two_link_with_sizes, scale_for_load, ParetoWorkload,
    Policy,
};

#[test]
fn pareto_mean_at_alpha_two() {
    let w = ParetoWorkload::new(2.0, 1.0, 99).unwrap();
    let mean = w.stream().take(1_000_000).sum::<f64>() / 1e6;
    assert!((1.98..=2.02).contains(&mean), "{mean}");
}

#[test]
fn pareto_tail_matches_survival_function() {
    // P(X > x) = (x_m / x)^alpha; check at a few quantiles.
    let (alpha, x_m) = (2.5, 0.3);
    let n = 400_000;
    let samples: Vec<f64> = ParetoWorkload::new(alpha, x_m, 5).unwrap().stream().take(n).collect();
    for p in [0.5, 0.1, 0.01] {
        let x = pareto_quantile(alpha, x_m, p);
        let frac = samples.iter().filter(|&&s| s > x).count() as f64 / n as f64;
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        assert!((frac - p).abs() < 5.0 * sd, "p={p}: {frac}");
    }
}

#[test]
fn scale_gives_offered_load_two_rho() {
    for alpha in alpha_grid(1.1, 2.5, 0.1) {
        for rho in [0.2, 0.5, 0.95] {
            let x_m = scale_for_load(alpha, rho).unwrap();
            let mean = alpha * x_m / (alpha - 1.0);
            assert!((mean - 2.0 * rho).abs() < 1e-12, "alpha {alpha} rho {rho}");
        }
    }
    // Light tail: the sample mean tracks the closed form.
    let w = ParetoWorkload::for_load(2.5, 0.95, 3).unwrap();
    let mean = w.stream().take(1_000_000).sum::<f64>() / 1e6;
    assert!((mean - 1.9).abs() / 1.9 < 0.01, "{mean}");
}

#[test]
fn oblivious_policy_is_a_fair_coin_when_both_busy() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n = 100_000;
    let zeros = (0..n).filter(|_| policy1_assign([3.0, 5.0], &mut rng) == 0).count();
    let f = zeros as f64 / n as f64;
    assert!((f - 0.5).abs() <= 0.01, "{f}");
    let mut again = ChaCha8Rng::seed_from_u64(31);
    let replay = (0..n).filter(|_| policy1_assign([3.0, 5.0], &mut again) == 0).count();
    assert_eq!(zeros, replay);
}

#[test]
fn small_contents_leave_a_bounded_residual() {
    // Sizes at most 1 kb drain within the second they arrive on an empty link.
    let sizes: Vec<f64> = (0..1000).map(|i| 0.2 + 0.8 * ((i * 37 % 100) as f64 / 100.0)).collect();
    for policy in [Policy::Oblivious, Policy::LeastBacklog] {
        let avg = run_two_link_with_sizes(sizes.iter().copied(), 1000, policy, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(avg <= 0.5, "{policy:?}: {avg}");
    }
}

#[test]
fn coupled_cells_favour_least_backlog() {
    for (alpha, seed) in [(1.1, 1), (1.7, 2), (2.5, 3)] {
        let row = run_cell(alpha, 0.95, 10_000, seed).unwrap();
        assert!(row.avg_backlog_p2_kb <= row.avg_backlog_p1_kb);
        assert!(row.gain_pct >= 0.0);
    }
}
