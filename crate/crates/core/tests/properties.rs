use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use refsep::dictionary::{grad_f, lipschitz_estimate};
use refsep::image::{conv_adjoint, conv_apply};
use refsep::metrics::{exclusion_transform, psnr};
use refsep::prox::prox_exclusion;
use refsep::solver::POWER_ITERATIONS;
use refsep::{haar_bank, random_dictionary, Kernel2D, Raster, Separator, SolverConfig, SolverState};

fn uniform(h: usize, w: usize, b: usize, rng: &mut ChaCha8Rng) -> Raster {
    Raster::from_fn(h, w, b, |_, _, _| rng.random::<f64>())
}

fn normal(h: usize, w: usize, b: usize, rng: &mut ChaCha8Rng) -> Raster {
    Raster::from_fn(h, w, b, |_, _, _| rng.sample(StandardNormal))
}

fn kernel(input: usize, output: usize, k: usize, rng: &mut ChaCha8Rng) -> Kernel2D {
    let taps = (0..input * output * k * k)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    Kernel2D::new(input, output, k, taps).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_adjoint_identity(h in 1usize..12, w in 1usize..12, cin in 1usize..4, cout in 1usize..4,
                             half in 0usize..3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kern = kernel(cin, cout, 2 * half + 1, &mut rng);
        let x = normal(h, w, cin, &mut rng);
        let y = normal(h, w, cout, &mut rng);
        let lhs = conv_apply(&x, &kern).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&conv_adjoint(&y, &kern).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn conv_is_linear(h in 1usize..10, w in 1usize..10, a in -3.0f64..3.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kern = kernel(2, 3, 5, &mut rng);
        let x = normal(h, w, 2, &mut rng);
        let y = normal(h, w, 2, &mut rng);
        let mut mix = y.clone();
        mix.axpy(a, &x).unwrap();
        let mut expect = conv_apply(&y, &kern).unwrap();
        expect.axpy(a, &conv_apply(&x, &kern).unwrap()).unwrap();
        prop_assert!(conv_apply(&mix, &kern).unwrap().max_abs_diff(&expect).unwrap() <= 1e-10);
    }

    #[test]
    fn wavelet_round_trip_and_linearity(h in 1usize..20, w in 1usize..20, b in 1usize..4,
                                        a in -2.0f64..2.0, seed in any::<u64>()) {
        let bank = haar_bank();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = normal(h, w, b, &mut rng);
        let y = normal(h, w, b, &mut rng);
        let back = bank.synthesize(&bank.analyze(&x).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&x).unwrap() <= 1e-10);

        let mut mix = x.clone();
        mix.axpy(a, &y).unwrap();
        let (px, py, pm) = (bank.analyze(&x).unwrap(), bank.analyze(&y).unwrap(), bank.analyze(&mix).unwrap());
        for ((bx, by), bm) in px.high.iter().chain([&px.low]).zip(py.high.iter().chain([&py.low])).zip(pm.high.iter().chain([&pm.low])) {
            let mut expect = bx.clone();
            expect.axpy(a, by).unwrap();
            prop_assert!(bm.max_abs_diff(&expect).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn decode_is_linear_and_adjoint(h in 2usize..10, w in 2usize..10, channels in prop_oneof![Just(1usize), Just(3)],
                                    atoms in 1usize..6, a in -2.0f64..2.0, seed in any::<u64>()) {
        let d = random_dictionary(atoms, 3, channels, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let z1 = normal(h, w, atoms, &mut rng);
        let z2 = normal(h, w, atoms, &mut rng);
        let mut mix = z1.clone();
        mix.axpy(a, &z2).unwrap();
        let mut expect = d.decode(&z1).unwrap();
        expect.axpy(a, &d.decode(&z2).unwrap()).unwrap();
        prop_assert!(d.decode(&mix).unwrap().max_abs_diff(&expect).unwrap() <= 1e-10);

        let x = normal(h, w, channels, &mut rng);
        let lhs = d.decode(&z1).unwrap().dot(&x).unwrap();
        let rhs = z1.dot(&d.encode_adjoint(&x).unwrap()).unwrap();
        prop_assert!(rel(lhs, rhs) <= 1e-10 || (lhs - rhs).abs() <= 1e-12);
    }

    #[test]
    fn grad_f_matches_directional_difference(h in 3usize..8, w in 3usize..8, seed in any::<u64>()) {
        let d = random_dictionary(3, 3, 1, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let z = normal(h, w, 3, &mut rng);
        let target = uniform(h, w, 1, &mut rng);
        let dir = normal(h, w, 3, &mut rng);
        let f = |z: &Raster| 0.5 * target.sub(&d.decode(z).unwrap()).unwrap().norm_sq();
        let eps = 1e-5;
        let (mut zp, mut zm) = (z.clone(), z.clone());
        zp.axpy(eps, &dir).unwrap();
        zm.axpy(-eps, &dir).unwrap();
        let fd = (f(&zp) - f(&zm)) / (2.0 * eps);
        let analytic = grad_f(&z, &target, &d).unwrap().dot(&dir).unwrap();
        prop_assert!((fd - analytic).abs() <= 1e-4 * analytic.abs().max(1.0));
    }

    #[test]
    fn psnr_falls_with_noise(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clean = uniform(16, 16, 3, &mut rng);
        let noise = normal(16, 16, 3, &mut rng);
        let values: Vec<f64> = [0.01, 0.03, 0.09]
            .iter()
            .map(|s| {
                let mut noisy = clean.clone();
                noisy.axpy(*s, &noise).unwrap();
                psnr(&noisy, &clean).unwrap()
            })
            .collect();
        prop_assert!(values[0] > values[1] && values[1] > values[2]);
    }
}

/// Dense `A^T A` for the decoder on an `h x w` grid.
fn dense_gram(d: &refsep::ConvDictionary, h: usize, w: usize) -> DMatrix<f64> {
    let n = h * w * d.atoms();
    let m = h * w * d.channels();
    let mut a = DMatrix::<f64>::zeros(m, n);
    for col in 0..n {
        let mut e = vec![0.0; n];
        e[col] = 1.0;
        let z = Raster::from_vec(h, w, d.atoms(), e).unwrap();
        for (row, v) in d.decode(&z).unwrap().data().iter().enumerate() {
            a[(row, col)] = *v;
        }
    }
    a.transpose() * a
}

#[test]
fn lipschitz_estimate_matches_dense_eigenvalue() {
    for seed in 0..4u64 {
        let d = random_dictionary(4, 3, 1, seed).unwrap();
        let exact = SymmetricEigen::new(dense_gram(&d, 8, 8)).eigenvalues.max();
        let est = lipschitz_estimate(&d, (8, 8), 500, seed).unwrap();
        assert!(est <= exact * (1.0 + 1e-9), "seed {seed}: {est} > {exact}");
        assert!(rel(est, exact) <= 0.01, "seed {seed}: {est} vs {exact}");
        // The solver's cheaper estimate undershoots, but by less than its
        // 0.9 safety factor, so its code steps stay under 1 / L.
        let short = lipschitz_estimate(&d, (8, 8), POWER_ITERATIONS, seed).unwrap();
        assert!(
            short <= est * (1.0 + 1e-12) && short >= 0.9 * exact,
            "seed {seed}: {short}"
        );
    }
    let d = refsep::dct_dictionary(16, 7, 3).unwrap();
    let exact = SymmetricEigen::new(dense_gram(&d, 8, 8)).eigenvalues.max();
    let est = lipschitz_estimate(&d, (8, 8), 500, 0).unwrap();
    assert!(rel(est, exact) <= 0.01, "dct: {est} vs {exact}");
}

#[test]
fn lipschitz_estimate_grows_with_iterations_and_is_bounded() {
    for seed in 0..4u64 {
        let d = random_dictionary(5, 3, 3, seed).unwrap();
        let max_tap = d.filters().taps().iter().fold(0.0f64, |m, t| m.max(t.abs()));
        let crude = (d.atoms() * d.side() * d.side()) as f64 * max_tap * max_tap;
        let mut last = 0.0;
        for iters in [1, 2, 5, 10, 30, 60] {
            let est = lipschitz_estimate(&d, (9, 7), iters, seed).unwrap();
            assert!(est > 0.0 && est <= crude);
            assert!(est >= last * (1.0 - 1e-12), "seed {seed}, iters {iters}");
            last = est;
        }
    }
}

/// The exclusion step is a thresholding in a redundant transform, so these
/// two properties are checked on fixed seeds rather than assumed.
#[test]
fn exclusion_step_on_seeded_pairs() {
    let bank = haar_bank();
    for seed in 0..40u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (rng.random_range(4..20), rng.random_range(4..20));
        let kappa = rng.random_range(0.05..2.0);
        let a = uniform(h, w, 3, &mut rng);
        let b = uniform(h, w, 3, &mut rng);
        let other = uniform(h, w, 3, &mut rng);

        let out_a = prox_exclusion(&a, &other, kappa, &bank).unwrap();
        let out_b = prox_exclusion(&b, &other, kappa, &bank).unwrap();
        let high_dist = |x: &Raster, y: &Raster| -> f64 {
            let (hx, hy) = (bank.analyze_high(x).unwrap(), bank.analyze_high(y).unwrap());
            hx.iter()
                .zip(&hy)
                .map(|(p, q)| p.sub(q).unwrap().norm_sq())
                .sum::<f64>()
                .sqrt()
        };
        let before = high_dist(&a, &b);
        let after = high_dist(&out_a, &out_b);
        assert!(
            after <= before + 1e-12,
            "seed {seed}: non-expansiveness {after} > {before}"
        );

        let e_in = exclusion_transform(&a, &other, &bank).unwrap();
        let e_out = exclusion_transform(&out_a, &other, &bank).unwrap();
        assert!(e_out <= e_in + 1e-9, "seed {seed}: exclusion rose {e_in} -> {e_out}");
    }
}

fn symmetric_separator() -> Separator {
    let cfg = SolverConfig {
        n_atoms: 4,
        atom_side: 3,
        lambda_t: 0.02,
        lambda_r: 0.02,
        kappa: 0.3,
        ..SolverConfig::desk().with_steps(0.2)
    };
    Separator::from_config(cfg, 3).unwrap()
}

fn random_state(h: usize, w: usize, seed: u64) -> SolverState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SolverState {
        t_hat: uniform(h, w, 3, &mut rng),
        r_hat: uniform(h, w, 3, &mut rng),
        z_t: normal(h, w, 4, &mut rng).scale(0.1),
        z_r: normal(h, w, 4, &mut rng).scale(0.1),
    }
}

#[test]
fn swapping_branches_swaps_the_updates() {
    let sep = symmetric_separator();
    for seed in 0..5u64 {
        let state = random_state(9, 10, seed);
        let input = uniform(9, 10, 3, &mut ChaCha8Rng::seed_from_u64(seed + 100));
        let tau = 0.1;

        let mut direct = state.clone();
        sep.update_transmission_codes(&mut direct, 0.2, tau).unwrap();
        sep.update_reflection_codes(&mut direct, 0.2, tau).unwrap();
        sep.update_transmission(&mut direct, &input, 0.2, tau).unwrap();
        sep.update_reflection(&mut direct, &input, 0.2, tau).unwrap();

        // The mirrored run visits R before T so each image update sees the
        // same partner estimate as in the direct run.
        let mut mirrored = state.swapped();
        sep.update_reflection_codes(&mut mirrored, 0.2, tau).unwrap();
        sep.update_transmission_codes(&mut mirrored, 0.2, tau).unwrap();
        sep.update_reflection(&mut mirrored, &input, 0.2, tau).unwrap();
        sep.update_transmission(&mut mirrored, &input, 0.2, tau).unwrap();
        let mirrored = mirrored.swapped();

        for (a, b) in [
            (&direct.t_hat, &mirrored.t_hat),
            (&direct.r_hat, &mirrored.r_hat),
            (&direct.z_t, &mirrored.z_t),
            (&direct.z_r, &mirrored.z_r),
        ] {
            assert!(a.max_abs_diff(b).unwrap() <= 1e-12, "seed {seed}");
        }
    }
}

#[test]
fn solve_is_deterministic_across_thread_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let input = uniform(24, 20, 3, &mut rng);
    let sep = Separator::from_config(SolverConfig::desk(), 3).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sep.solve(&input, None).unwrap())
    };
    let first = run(1);
    for threads in [1, 4] {
        let again = run(threads);
        assert_eq!(first.transmission, again.transmission);
        assert_eq!(first.reflection, again.reflection);
        assert_eq!(first.trace, again.trace);
    }
}
