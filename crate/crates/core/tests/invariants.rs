//! Cross-module invariants: symmetry of the target, detailed balance of the
//! tempering kernel on a grid, the density-ratio sandwich, unbiasedness of the
//! ratio estimator and scale covariance of the inequality suite.

use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use simtemp::diagnostics::{inequality_suite, ks_test};
use simtemp::ladder::{build_ladder, Ladder};
use simtemp::quad::integrate;
use simtemp::rng::stream_rng;
use simtemp::targets::{conditional_label_weights, mixture_gradient, mixture_potential, LocalPotential, MixtureSpec};
use simtemp::tempering::{log_proposal_density, st_level_log_ratio, x_move_log_ratio, ProposalKind};
use simtemp::zconst::estimate_level_ratio;

fn spec_strategy() -> impl Strategy<Value = MixtureSpec> {
    (1usize..4, 1usize..5).prop_flat_map(|(d, k)| {
        (
            prop::collection::vec(0.1f64..1.0, k),
            prop::collection::vec(prop::collection::vec(-4.0f64..4.0, d), k),
            prop_oneof![
                Just(LocalPotential::Isotropic),
                prop::collection::vec(0.5f64..3.0, d).prop_map(|c| LocalPotential::Diagonal { curvatures: c }),
                (0.5f64..1.5, 1.0f64..3.0).prop_map(|(m, r)| LocalPotential::SoftAbs { m, l: m * r }),
            ],
        )
            .prop_map(|(raw, modes, local)| {
                let total: f64 = raw.iter().sum();
                MixtureSpec::new(raw.iter().map(|w| w / total).collect(), modes, local).unwrap()
            })
    })
}

fn point_in_ball(spec: &MixtureSpec, u: &[f64]) -> Vec<f64> {
    let radius = 3.0 * spec.max_mode_norm() + 3.0 / spec.local().convexity().sqrt();
    (0..spec.dim()).map(|k| radius * (2.0 * u[k % u.len()] - 1.0) / (spec.dim() as f64).sqrt()).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

proptest! {
    #[test]
    fn potential_ignores_component_order(spec in spec_strategy(), u in prop::collection::vec(0.0f64..1.0, 3), shift in 0usize..4) {
        let k = spec.num_components();
        let perm: Vec<usize> = (0..k).map(|j| (j + shift) % k).collect();
        let permuted = MixtureSpec::new(
            perm.iter().map(|&j| spec.weights()[j]).collect(),
            perm.iter().map(|&j| spec.modes()[j].clone()).collect(),
            spec.local().clone(),
        ).unwrap();
        let x = point_in_ball(&spec, &u);
        let (a, b) = (mixture_potential(&spec, &x).unwrap(), mixture_potential(&permuted, &x).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn label_argmax_ignores_weight_offsets(spec in spec_strategy(), u in prop::collection::vec(0.0f64..1.0, 3), c in -50.0f64..50.0) {
        let ladder = Ladder::from_betas(vec![0.5, 1.0]).unwrap();
        let x = point_in_ball(&spec, &u);
        for level in 0..2 {
            let w = conditional_label_weights(&spec, &ladder, level, &x).unwrap();
            let shifted: Vec<f64> = (0..spec.num_components())
                .map(|j| spec.log_weights()[j] + c - ladder.beta(level) * spec.component_potential(j, &x))
                .collect();
            let argmax = |v: &[f64]| (0..v.len()).fold(0, |b, j| if v[j] > v[b] { j } else { b });
            let (a, b) = (argmax(&w), argmax(&shifted));
            prop_assert!(a == b || (w[a] - w[b]).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn gradient_deviation_and_smoothness(spec in spec_strategy(), u in prop::collection::vec(0.0f64..1.0, 6)) {
        let l = spec.local().smoothness();
        let x = point_in_ball(&spec, &u[..3]);
        let y = point_in_ball(&spec, &u[3..]);
        let gx = mixture_gradient(&spec, &x).unwrap();
        let fx = spec.local().gradient(&x);
        let dev: Vec<f64> = gx.iter().zip(&fx).map(|(a, b)| a - b).collect();
        let bound = l * spec.max_mode_norm();
        prop_assert!(norm(&dev) <= bound + 1e-9 * bound.max(1.0));
        let (ux, uy) = (mixture_potential(&spec, &x).unwrap(), mixture_potential(&spec, &y).unwrap());
        let lin: f64 = gx.iter().zip(x.iter().zip(&y)).map(|(g, (a, b))| g * (b - a)).sum();
        let diff: Vec<f64> = x.iter().zip(&y).map(|(a, b)| b - a).collect();
        let gap = uy - ux - lin - 0.5 * l * norm(&diff).powi(2);
        prop_assert!(gap <= 1e-9 * ux.abs().max(uy.abs()).max(1.0), "{gap}");
    }
}

/// Kernel of the lazy tempering chain restricted to a 1-D grid of bin
/// centres, built from the move densities and acceptance ratios.
fn grid_kernel(spec: &MixtureSpec, ladder: &Ladder, kind: ProposalKind, h: f64, grid: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (alpha, q_adj) = (0.5, 0.5);
    let t = ladder.num_levels();
    let n = grid.len();
    let dx = grid[1] - grid[0];
    let states: Vec<(usize, usize)> = (0..t).flat_map(|i| (0..n).map(move |k| (i, k))).collect();
    let u: Vec<f64> = grid.iter().map(|&x| mixture_potential(spec, &[x]).unwrap()).collect();
    let g: Vec<Vec<f64>> = grid.iter().map(|&x| mixture_gradient(spec, &[x]).unwrap()).collect();
    let pi: Vec<f64> = states.iter().map(|&(i, k)| (ladder.log_weights()[i] - ladder.beta(i) * u[k]).exp()).collect();
    let mut p = vec![vec![0.0; states.len()]; states.len()];
    for (a, &(i, k)) in states.iter().enumerate() {
        let beta = ladder.beta(i);
        let norm_q = (beta / (4.0 * std::f64::consts::PI * h)).sqrt();
        for (b, &(j, l)) in states.iter().enumerate() {
            if a == b {
                continue;
            }
            let mut rate = 0.0;
            if i == j {
                let q = norm_q * log_proposal_density(kind, h, beta, &[grid[k]], Some(&g[k]), &[grid[l]]).exp() * dx;
                let r = x_move_log_ratio(kind, h, beta, &[grid[k]], u[k], Some(&g[k]), &[grid[l]], u[l], Some(&g[l]));
                rate = (1.0 - alpha) * q * r.min(0.0).exp();
            } else if k == l && (i as i64 - j as i64).abs() == 1 {
                rate = alpha * q_adj * st_level_log_ratio(ladder, i, j, u[k]).min(0.0).exp();
            }
            p[a][b] = 0.5 * rate;
        }
        let off: f64 = p[a].iter().sum();
        p[a][a] = 1.0 - off;
    }
    (pi, p)
}

#[test]
fn tempering_kernel_is_reversible_on_a_grid() {
    let spec = MixtureSpec::new(vec![0.3, 0.7], vec![vec![-2.0], vec![2.5]], LocalPotential::Isotropic).unwrap();
    let ladder = Ladder::with_log_weights(vec![0.2, 0.5, 1.0], vec![0.3, -0.4, 0.1]).unwrap();
    let grid: Vec<f64> = (0..80).map(|k| -6.0 + 12.0 * (k as f64 + 0.5) / 80.0).collect();
    for (kind, h) in [(ProposalKind::Rwm, 0.5), (ProposalKind::Mala, 0.1)] {
        let (pi, p) = grid_kernel(&spec, &ladder, kind, h, &grid);
        let mut worst = 0.0f64;
        for a in 0..pi.len() {
            assert!(p[a][a] >= 0.0);
            for b in 0..pi.len() {
                let (f, r) = (pi[a] * p[a][b], pi[b] * p[b][a]);
                worst = worst.max((f - r).abs() / f.max(r).max(1e-300));
            }
        }
        assert!(worst < 1e-6, "{kind:?}: relative imbalance {worst}");
    }
}

#[test]
fn tempered_mixture_sits_between_weighted_components() {
    // π*(i,x) ∝ π(x)^{β_i} against π(i,x) = Σ_j w_j π_{i,j}(x), both normalized.
    let spec = MixtureSpec::new(vec![0.25, 0.75], vec![vec![-1.5], vec![2.0]], LocalPotential::Isotropic).unwrap();
    let ladder = Ladder::from_betas(vec![0.1, 0.3, 0.6, 1.0]).unwrap();
    let w_min = spec.min_weight();
    let mut rng = stream_rng(11, 0);
    for (i, &beta) in ladder.betas().iter().enumerate() {
        let star = |x: f64| (-beta * mixture_potential(&spec, &[x]).unwrap()).exp();
        let spread = 14.0 / beta.sqrt();
        let z_star = integrate(star, -spread, spread, 1e-12, 0.0).unwrap().value;
        let comp = |x: f64| {
            spec.weights()
                .iter()
                .enumerate()
                .map(|(j, w)| w * (beta / (2.0 * std::f64::consts::PI)).sqrt() * (-beta * spec.component_potential(j, &[x])).exp())
                .sum::<f64>()
        };
        for _ in 0..250 {
            let x: f64 = rng.random_range(-6.0..6.0) / beta.sqrt();
            let ratio = star(x) / z_star / comp(x);
            assert!(ratio >= w_min * (1.0 - 1e-9) && ratio <= (1.0 + 1e-9) / w_min, "level {i}, x {x}: {ratio}");
        }
    }
}

#[test]
fn ratio_estimator_z_scores_are_standard_normal() {
    let d = 2;
    let spec = MixtureSpec::new(vec![1.0], vec![vec![0.0; d]], LocalPotential::Isotropic).unwrap();
    let (beta, beta_next) = (0.5f64, 0.8);
    let exact = (beta / beta_next).powf(d as f64 / 2.0).ln();
    let zs: Vec<f64> = (0..100u64)
        .map(|rep| {
            let mut rng = stream_rng(rep, 99);
            let samples: Vec<Vec<f64>> =
                (0..4000).map(|_| spec.local().sample(beta, &[0.0, 0.0], &mut rng)).collect();
            let e = estimate_level_ratio(&samples, &spec, beta, beta_next).unwrap();
            (e.log_ratio - exact) / e.log_se
        })
        .collect();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let ks = ks_test(&zs, |z| normal.cdf(z));
    assert!(ks.p_value >= 0.01, "KS p = {}", ks.p_value);
}

#[test]
fn inequality_suite_holds_after_rescaling_modes() {
    let base = MixtureSpec::new(vec![0.4, 0.6], vec![vec![1.0, -0.5], vec![-1.2, 0.8]], LocalPotential::Isotropic).unwrap();
    for t in [0.5, 1.0, 2.0, 4.0] {
        let modes = base.modes().iter().map(|m| m.iter().map(|v| v * t).collect()).collect();
        let spec = MixtureSpec::new(base.weights().to_vec(), modes, LocalPotential::Isotropic).unwrap();
        let ladder = build_ladder(1.0, 1.0, 2, spec.max_mode_norm()).unwrap();
        let report = inequality_suite(&spec, &ladder, 1000, &mut stream_rng(5, t.to_bits())).unwrap();
        assert!(report.passed(), "t = {t}: {:?}", report.violations());
        let dev = report.get("mixture_gradient_deviation").unwrap();
        assert!((dev.rhs - t * base.max_mode_norm()).abs() < 1e-12);
    }
}
