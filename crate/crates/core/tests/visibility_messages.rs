use proptest::prelude::*;
use xltrack::turbo::{chain_marginals, extrinsic, spike_slab_subgraph};

fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean).powi(2) / var)
}

/// Activity marginals by summing the unnormalised joint over all `2^M` patterns.
fn brute_force(obs: &[(f64, f64)], pi: &[f64], slab: &[(f64, f64)], spatial: Option<(f64, f64)>) -> Vec<f64> {
    let m = obs.len();
    let mut weights = Vec::with_capacity(1 << m);
    for pattern in 0usize..(1 << m) {
        let bit = |i: usize| (pattern >> i) & 1;
        let mut w = 1.0f64;
        for i in 0..m {
            let (u, v) = obs[i];
            w *= if bit(i) == 1 {
                pi[i] * ln_normal(u, slab[i].0, slab[i].1 + v).exp()
            } else {
                (1.0 - pi[i]) * ln_normal(u, 0.0, v).exp()
            };
            if let (Some((p01, p10)), true) = (spatial, i > 0) {
                let t = [[1.0 - p01, p01], [p10, 1.0 - p10]];
                w *= t[bit(i - 1)][bit(i)];
            }
        }
        weights.push(w);
    }
    let z: f64 = weights.iter().sum();
    (0..m).map(|i| weights.iter().enumerate().filter(|(s, _)| (s >> i) & 1 == 1).map(|(_, w)| w).sum::<f64>() / z).collect()
}

fn node() -> impl Strategy<Value = ((f64, f64), f64, (f64, f64))> {
    ((-0.5f64..1.5, 0.05f64..1.0), 0.05f64..0.95, (0.2f64..1.5, 0.05f64..1.0))
}

proptest! {
    #[test]
    fn subgraph_matches_enumeration(
        nodes in prop::collection::vec(node(), 1..11),
        p01 in 0.01f64..0.6,
        p10 in 0.01f64..0.6,
        coupled in any::<bool>(),
    ) {
        let obs: Vec<(f64, f64)> = nodes.iter().map(|n| n.0).collect();
        let pi: Vec<f64> = nodes.iter().map(|n| n.1).collect();
        let slab: Vec<(f64, f64)> = nodes.iter().map(|n| n.2).collect();
        let spatial = coupled.then_some((p01, p10));
        let got = spike_slab_subgraph(
            &obs.iter().map(|o| o.0).collect::<Vec<_>>(),
            &obs.iter().map(|o| o.1).collect::<Vec<_>>(),
            &pi,
            &slab.iter().map(|s| s.0).collect::<Vec<_>>(),
            &slab.iter().map(|s| s.1).collect::<Vec<_>>(),
            spatial,
        );
        let want = brute_force(&obs, &pi, &slab, spatial);
        for (a, b) in got.alpha.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        for i in 0..obs.len() {
            prop_assert!(got.u_var[i] > 0.0 && got.beta_var[i] > 0.0);
            let ((u, v), (mu, nu)) = (obs[i], slab[i]);
            let s1 = nu * v / (nu + v);
            let m1 = s1 * (mu / nu + u / v);
            prop_assert!((got.u_mean[i] - want[i] * m1).abs() < 1e-10);
            prop_assert!((got.beta_mean[i] - ((1.0 - want[i]) * mu + want[i] * m1)).abs() < 1e-10);
        }
    }

    #[test]
    fn memoryless_chain_equals_independent_nodes(
        unary in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..30),
        p in 0.01f64..0.99,
    ) {
        // Rows of the transition matrix coincide, so the chain factorises.
        let chained = chain_marginals(&unary, Some((p, 1.0 - p)));
        let shifted: Vec<(f64, f64)> = unary
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| if i == 0 { (a, b) } else { (a + (1.0 - p).ln(), b + p.ln()) })
            .collect();
        let independent = chain_marginals(&shifted, None);
        for (a, b) in chained.iter().zip(&independent) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn extrinsic_recombines_to_posterior(
        pri_mean in -3.0f64..3.0,
        pri_var in 0.1f64..10.0,
        obs_mean in -3.0f64..3.0,
        obs_var in 0.1f64..10.0,
    ) {
        let post_var = 1.0 / (1.0 / pri_var + 1.0 / obs_var);
        let post_mean = post_var * (pri_mean / pri_var + obs_mean / obs_var);
        let (m, v, clamped) = extrinsic(post_mean, post_var, pri_mean, pri_var);
        prop_assert!(!clamped);
        prop_assert!((v - obs_var).abs() < 1e-9 * obs_var);
        prop_assert!((m - obs_mean).abs() < 1e-9 * (1.0 + obs_mean.abs()));
    }
}

#[test]
fn wider_posterior_than_prior_is_flagged() {
    let (_, v, clamped) = extrinsic(0.0, 2.0, 0.0, 1.0);
    assert!(clamped);
    assert!(v >= 1e6);
}
