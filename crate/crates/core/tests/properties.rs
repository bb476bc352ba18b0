use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wgraph::graph::{sample_sbm, sample_wgraph};
use wgraph::motifs::{self, builtin_motifs, FrequencyMode, MotifSpec};
use wgraph::posterior::{cell_weights, posterior_mean, posterior_pdf};
use wgraph::simstudy::kl_bernoulli;
use wgraph::vbem::{elbo, fit, fit_from_tau, permute_groups, sort_identifiable, FitConfig, SbmPrior};
use wgraph::{GraphonSpec, VariationalPosterior};

fn config() -> ProptestConfig {
    ProptestConfig { cases: 24, ..ProptestConfig::default() }
}

fn random_posterior(seed: u64, q: usize) -> VariationalPosterior {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let a = (0..q).map(|_| r.random_range(0.5..40.0)).collect();
    let mut eta = vec![vec![0.0; q]; q];
    let mut zeta = vec![vec![0.0; q]; q];
    for x in 0..q {
        for y in x..q {
            eta[x][y] = r.random_range(1.0..80.0);
            zeta[x][y] = r.random_range(1.0..80.0);
            eta[y][x] = eta[x][y];
            zeta[y][x] = zeta[x][y];
        }
    }
    VariationalPosterior::from_parameters(a, eta, zeta).unwrap()
}

fn random_permutation(seed: u64, n: usize) -> Vec<usize> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, r.random_range(0..=i));
    }
    p
}

fn graphon_strategy() -> impl Strategy<Value = GraphonSpec> {
    prop_oneof![
        (0.01f64..1.0, 0.0f64..1.0).prop_map(|(rho, t)| {
            let lambda = 1.0 + t * (1.0 / rho.sqrt() - 1.0);
            GraphonSpec::product_form(rho, lambda).unwrap()
        }),
        (1usize..5, any::<u64>()).prop_map(|(q, seed)| {
            let p = random_posterior(seed, q);
            GraphonSpec::blockwise(p.alpha_mean(), p.pi_mean()).unwrap()
        }),
        (2usize..6, prop::collection::vec(0.0f64..1.0, 36)).prop_map(|(m, raw)| {
            let mut v = vec![0.0; m * m];
            for i in 0..m {
                for j in i..m {
                    v[i * m + j] = raw[i * 6 + j];
                    v[j * m + i] = raw[i * 6 + j];
                }
            }
            GraphonSpec::grid(m, v).unwrap()
        }),
    ]
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn graphon_is_exactly_symmetric(spec in graphon_strategy(), u in 0.0f64..=1.0, v in 0.0f64..=1.0) {
        let w = spec.eval(u, v).unwrap();
        prop_assert_eq!(w, spec.eval(v, u).unwrap());
        prop_assert!((0.0..=1.0).contains(&w));
    }

    #[test]
    fn sampler_matches_blockwise_spec(q in 1usize..5, seed in any::<u64>(), n in 2usize..60) {
        let p = random_posterior(seed, q);
        let (alpha, pi) = (p.alpha_mean(), p.pi_mean());
        let spec = GraphonSpec::blockwise(alpha.clone(), pi.clone()).unwrap();
        let (g1, _) = sample_wgraph(&spec, n, seed).unwrap();
        let (g2, _) = sample_sbm(&alpha, &pi, n, seed).unwrap();
        prop_assert_eq!(g1.edges(), g2.edges());
    }

    #[test]
    fn cell_weights_are_a_distribution(seed in any::<u64>(), q in 1usize..6, u in 0.0f64..=1.0, v in 0.0f64..=1.0) {
        let post = random_posterior(seed, q);
        let cw = cell_weights(u.min(v), u.max(v), &post).unwrap();
        prop_assert!(cw.iter().all(|(_, _, w)| w >= 0.0));
        prop_assert!((cw.sum() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn posterior_mean_is_first_moment_of_pdf(seed in any::<u64>(), q in 1usize..4, u in 0.0f64..=1.0, v in 0.0f64..=1.0) {
        let post = random_posterior(seed, q);
        let cells = 20_000;
        let w: Vec<f64> = (0..cells).map(|i| (i as f64 + 0.5) / cells as f64).collect();
        let pdf = posterior_pdf(u, v, &post, &w).unwrap();
        let first: f64 = w.iter().zip(&pdf).map(|(x, p)| x * p).sum::<f64>() / cells as f64;
        prop_assert!((first - posterior_mean(u, v, &post).unwrap()).abs() < 1e-4);
    }

    #[test]
    fn mean_surface_ignores_labeling_after_sorting(seed in any::<u64>(), q in 2usize..5, u in 0.0f64..=1.0, v in 0.0f64..=1.0) {
        let post = random_posterior(seed, q);
        let perm = random_permutation(seed ^ 1, q);
        let a = sort_identifiable(post.clone());
        let b = sort_identifiable(permute_groups(post, &perm));
        let (ma, mb) = (posterior_mean(u, v, &a).unwrap(), posterior_mean(u, v, &b).unwrap());
        prop_assert!((ma - mb).abs() < 1e-8);
    }

    #[test]
    fn motif_probabilities_ignore_group_order(seed in any::<u64>(), q in 1usize..5) {
        let post = random_posterior(seed, q);
        let perm = random_permutation(seed ^ 2, q);
        let moved = permute_groups(post.clone(), &perm);
        for m in builtin_motifs() {
            let x = motifs::mu_posterior_mean(&post, &m).unwrap();
            let y = motifs::mu_posterior_mean(&moved, &m).unwrap();
            prop_assert!((x - y).abs() <= 1e-10 * x.abs());
            let s = motifs::mu_sbm(&post.alpha_mean(), &post.pi_mean(), &m).unwrap();
            let t = motifs::mu_sbm(&moved.alpha_mean(), &moved.pi_mean(), &m).unwrap();
            prop_assert!((s - t).abs() <= 1e-10 * s.abs());
        }
    }

    #[test]
    fn motif_probabilities_ignore_vertex_order(seed in any::<u64>(), q in 1usize..4) {
        let post = random_posterior(seed, q);
        let (alpha, pi) = (post.alpha_mean(), post.pi_mean());
        let spec = GraphonSpec::blockwise(alpha.clone(), pi.clone()).unwrap();
        let (graph, _) = sample_wgraph(&spec, 25, seed).unwrap();
        for m in builtin_motifs() {
            let r = m.relabeled(&random_permutation(seed ^ 3, m.k())).unwrap();
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1e-300);
            prop_assert!(close(motifs::mu_sbm(&alpha, &pi, &m).unwrap(), motifs::mu_sbm(&alpha, &pi, &r).unwrap()));
            prop_assert!(close(motifs::mu_posterior_mean(&post, &m).unwrap(), motifs::mu_posterior_mean(&post, &r).unwrap()));
            // Same seed, but draws land on different vertices: equal in distribution only.
            let (x, y) = (motifs::mu_numeric(&spec, &m, 4000, seed).unwrap(), motifs::mu_numeric(&spec, &r, 4000, seed).unwrap());
            prop_assert!((x.value - y.value).abs() <= 5.0 * x.se.hypot(y.se) + 1e-12);
            prop_assert_eq!(
                motifs::empirical_frequency(&graph, &m, FrequencyMode::Exhaustive).unwrap().value,
                motifs::empirical_frequency(&graph, &r, FrequencyMode::Exhaustive).unwrap().value
            );
        }
    }

    #[test]
    fn adding_an_edge_never_increases_mu(seed in any::<u64>(), q in 1usize..4, rho in 0.01f64..0.44) {
        let post = random_posterior(seed, q);
        let (alpha, pi) = (post.alpha_mean(), post.pi_mean());
        let spec = GraphonSpec::blockwise(alpha.clone(), pi.clone()).unwrap();
        let (graph, _) = sample_wgraph(&spec, 20, seed).unwrap();
        for m in builtin_motifs() {
            for a in 0..m.k() {
                for b in (a + 1)..m.k() {
                    if m.has_edge(a, b) {
                        continue;
                    }
                    let bigger = m.with_edge(a, b).unwrap();
                    let le = |x: f64, y: f64| y <= x * (1.0 + 1e-12);
                    prop_assert!(le(motifs::mu_sbm(&alpha, &pi, &m).unwrap(), motifs::mu_sbm(&alpha, &pi, &bigger).unwrap()));
                    prop_assert!(le(motifs::mu_posterior_mean(&post, &m).unwrap(), motifs::mu_posterior_mean(&post, &bigger).unwrap()));
                    prop_assert!(le(motifs::mu_product_form(rho, 1.5, &m).unwrap(), motifs::mu_product_form(rho, 1.5, &bigger).unwrap()));
                    prop_assert!(le(
                        motifs::mu_numeric(&spec, &m, 300, seed).unwrap().value,
                        motifs::mu_numeric(&spec, &bigger, 300, seed).unwrap().value
                    ));
                    prop_assert!(le(
                        motifs::empirical_frequency(&graph, &m, FrequencyMode::Exhaustive).unwrap().value,
                        motifs::empirical_frequency(&graph, &bigger, FrequencyMode::Exhaustive).unwrap().value
                    ));
                }
            }
        }
    }

    #[test]
    fn kl_is_nonnegative(p in 0.0f64..=1.0, q in 1e-9f64..(1.0 - 1e-9)) {
        let kl = kl_bernoulli(p, q).unwrap().finite().unwrap();
        prop_assert!(kl >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn sorting_keeps_the_lower_bound(seed in any::<u64>(), q in 2usize..5, n in 20usize..80) {
        let spec = GraphonSpec::product_form(0.2, 2.0).unwrap();
        let (graph, _) = sample_wgraph(&spec, n, seed).unwrap();
        let prior = SbmPrior::uniform(q);
        let post = fit(&graph, q, &prior, &FitConfig { seed, ..FitConfig::default() }).unwrap();
        let perm = random_permutation(seed, q);
        let before = elbo(&graph, &post, &prior).unwrap();
        let after = elbo(&graph, &permute_groups(post.clone(), &perm), &prior).unwrap();
        let sorted = elbo(&graph, &sort_identifiable(post), &prior).unwrap();
        prop_assert!((before - after).abs() <= 1e-10 * before.abs());
        prop_assert!((before - sorted).abs() <= 1e-10 * before.abs());
    }

    #[test]
    fn tau_rows_stay_stochastic(seed in any::<u64>(), q in 1usize..5, n in 10usize..60) {
        let spec = GraphonSpec::product_form(0.3, 1.5).unwrap();
        let (graph, _) = sample_wgraph(&spec, n, seed).unwrap();
        let post = fit(&graph, q, &SbmPrior::uniform(q), &FitConfig { seed, ..FitConfig::default() }).unwrap();
        for row in &post.tau {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&t| t > 0.0));
        }
    }

    #[test]
    fn node_order_does_not_matter(seed in any::<u64>(), n in 20usize..70) {
        let alpha = [0.5, 0.5];
        let pi = vec![vec![0.7, 0.05], vec![0.05, 0.6]];
        let (graph, _) = sample_sbm(&alpha, &pi, n, seed).unwrap();
        let perm = random_permutation(seed, n);
        let moved = graph.permuted(&perm).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let tau: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let t = r.random_range(0.2..0.8);
                vec![t, 1.0 - t]
            })
            .collect();
        let mut tau_moved = vec![Vec::new(); n];
        for (i, row) in tau.iter().enumerate() {
            tau_moved[perm[i]] = row.clone();
        }
        let prior = SbmPrior::uniform(2);
        let tight = FitConfig { tol: 1e-14, max_iter: 5000, ..FitConfig::default() };
        let a = fit_from_tau(&graph, tau, &prior, &tight).unwrap();
        let b = fit_from_tau(&moved, tau_moved, &prior, &tight).unwrap();
        prop_assert!((a.elbo - b.elbo).abs() <= 1e-8 * a.elbo.abs());
    }
}

#[test]
fn edge_density_concentrates_on_the_graphon_integral() {
    let cases = [
        (GraphonSpec::product_form(0.1, 2.0).unwrap(), 0.1),
        (GraphonSpec::product_form(0.05, 3.0).unwrap(), 0.05),
        (GraphonSpec::blockwise(vec![0.3, 0.7], vec![vec![0.8, 0.1], vec![0.1, 0.4]]).unwrap(),
            0.09 * 0.8 + 2.0 * 0.21 * 0.1 + 0.49 * 0.4),
    ];
    for (k, (spec, integral)) in cases.iter().enumerate() {
        let densities: Vec<f64> = (0..200)
            .map(|g| sample_wgraph(spec, 50, 1000 * k as u64 + g).unwrap().0.density())
            .collect();
        let r = densities.len() as f64;
        let mean = densities.iter().sum::<f64>() / r;
        let sd = (densities.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt();
        assert!((mean - integral).abs() <= 3.0 * sd / r.sqrt(), "case {k}: {mean} vs {integral}");
    }
}

#[test]
fn flat_triangle_centers_on_rho_cubed() {
    let spec = GraphonSpec::product_form(0.1, 1.0).unwrap();
    let tri = MotifSpec::parse("triangle").unwrap();
    let est = motifs::mu_numeric(&spec, &tri, 10_000, 3).unwrap();
    assert!((est.value - 1e-3).abs() < 1e-15);
}
