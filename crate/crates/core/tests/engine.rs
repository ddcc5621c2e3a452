use approx::assert_relative_eq;
use fmm2d::engine::{
    combine, compute_velocities, downward_sweep, flop_report, prepare, upward_sweep, FmmConfig,
};
use fmm2d::expansion::{self, ExpansionOps, LocalExpansion};
use fmm2d::generate::{uniform_lattice, uniform_random};
use fmm2d::kernel::{biot_savart_farfield, direct_sum_all, KernelParams};
use fmm2d::quadtree::{bin_particles, build_tree, interaction_lists, BoxId, Particle};
use fmm2d::{Complex, ExecMode, FmmError};

fn lattice(levels: u32, per_box: usize) -> Vec<Particle<f64>> {
    uniform_lattice::<f64>(levels, per_box)
}

/// Worst-case relative deviations of `got` from `want`.
fn error_stats(got: &[Complex<f64>], want: &[Complex<f64>]) -> (f64, f64) {
    assert_eq!(got.len(), want.len());
    let mut max_rel = 0f64;
    let mut sum_sq = 0f64;
    for (g, w) in got.iter().zip(want) {
        let rel = (g - w).norm() / w.norm();
        max_rel = max_rel.max(rel);
        sum_sq += rel * rel;
    }
    (max_rel, (sum_sq / got.len() as f64).sqrt())
}

#[test]
fn lattice_run_matches_the_quadratic_reference() {
    let particles = lattice(3, 16);
    assert_eq!(particles.len(), 1024);
    let config = FmmConfig::new(3, 15);
    let (velocities, report) = compute_velocities(&particles, config).unwrap();
    let params = KernelParams::default_for_box_width(0.125f64);
    let reference = direct_sum_all(&particles, params);
    let (max_rel, rms_rel) = error_stats(&velocities, &reference);
    assert!(max_rel <= 1e-3, "max relative error {max_rel}");
    assert!(rms_rel <= 1e-5, "rms relative error {rms_rel}");
    assert_eq!(report.n, 1024);
    assert_eq!(report.levels, 3);
}

#[test]
fn accuracy_improves_with_expansion_order() {
    let particles = uniform_random::<f64>(700, 42);
    let params = KernelParams::default_for_box_width(0.125f64);
    let reference = direct_sum_all(&particles, params);
    let mut maxima = Vec::new();
    for order in [4usize, 8, 15] {
        let (velocities, _) = compute_velocities(&particles, FmmConfig::new(3, order)).unwrap();
        maxima.push(error_stats(&velocities, &reference).0);
    }
    assert!(
        maxima[0] > maxima[1] && maxima[1] > maxima[2],
        "errors did not decrease: {maxima:?}"
    );
}

#[test]
fn single_particle_sees_no_velocity() {
    let particles = [Particle::new(0.3f64, 0.7, 2.5)];
    let (velocities, _) = compute_velocities(&particles, FmmConfig::new(2, 6)).unwrap();
    assert_eq!(velocities, vec![Complex::new(0.0, 0.0)]);
}

#[test]
fn no_particles_is_a_valid_instance() {
    let (velocities, report) = compute_velocities::<f64>(&[], FmmConfig::new(2, 5)).unwrap();
    assert!(velocities.is_empty());
    assert_eq!(report.stage(9).flops, 0);
    assert_eq!(report.stage(4).flops, 0);
}

#[test]
fn modes_agree_bitwise_on_the_serial_path() {
    let particles = uniform_random::<f64>(500, 7);
    let seq = compute_velocities(&particles, FmmConfig::new(3, 10)).unwrap().0;
    let ovl = compute_velocities(
        &particles,
        FmmConfig::new(3, 10).with_mode(ExecMode::Overlapped),
    )
    .unwrap()
    .0;
    assert_eq!(seq, ovl);
}

#[test]
fn invalid_configs_are_rejected() {
    let particles = lattice(2, 4);
    assert!(matches!(
        compute_velocities(&particles, FmmConfig::new(2, 5).with_workers(0)),
        Err(FmmError::InvalidConfig { .. })
    ));
    assert!(matches!(
        compute_velocities(&particles, FmmConfig::new(1, 5)),
        Err(FmmError::InvalidLevels { .. })
    ));
    assert!(matches!(
        compute_velocities(&particles, FmmConfig::new(2, 0)),
        Err(FmmError::InvalidConfig { .. })
    ));
    assert!(matches!(
        compute_velocities(&particles, FmmConfig::new(2, 5).with_sigma(0.0)),
        Err(FmmError::InvalidConfig { .. })
    ));
}

// --- Upward sweep ---------------------------------------------------------

#[test]
fn zero_circulation_produces_zero_expansions() {
    let particles: Vec<Particle<f64>> = lattice(3, 4)
        .into_iter()
        .map(|p| Particle::new(p.position.re, p.position.im, 0.0))
        .collect();
    let tree = build_tree::<f64>(3).unwrap();
    let binning = bin_particles(&tree, &particles).unwrap();
    let mults = upward_sweep(&tree, &binning, &particles, 8).unwrap();
    for level in 2..=3u32 {
        for m in &mults[level as usize] {
            for c in &m.coeffs {
                assert_eq!(*c, Complex::new(0.0, 0.0));
            }
        }
    }
}

#[test]
fn translated_and_direct_expansions_of_one_particle_agree() {
    // M2M is exact on the truncated family, so chaining P2M through every
    // level equals P2M done directly at the coarse center, to rounding.
    let particles = [Particle::new(0.06f64, 0.11, 1.7)];
    let tree = build_tree::<f64>(4).unwrap();
    let binning = bin_particles(&tree, &particles).unwrap();
    let mults = upward_sweep(&tree, &binning, &particles, 12).unwrap();
    let coarse = BoxId::new(2, 0, 0);
    let ops = ExpansionOps::new(12).unwrap();
    let direct = ops.p2m(&particles, tree.center(coarse));
    let swept = &mults[2][coarse.linear()];
    for (s, d) in swept.coeffs.iter().zip(&direct.coeffs) {
        assert_relative_eq!(s.re, d.re, max_relative = 1e-12, epsilon = 1e-14);
        assert_relative_eq!(s.im, d.im, max_relative = 1e-12, epsilon = 1e-14);
    }
}

#[test]
fn monopole_term_is_conserved_up_the_tree() {
    let particles = uniform_random::<f64>(300, 11);
    let total: f64 = particles.iter().map(|p| p.circulation).sum();
    let tree = build_tree::<f64>(3).unwrap();
    let binning = bin_particles(&tree, &particles).unwrap();
    let mults = upward_sweep(&tree, &binning, &particles, 9).unwrap();
    let a0: Complex<f64> = mults[2].iter().map(|m| m.coeffs[0]).sum();
    let expected = Complex::new(0.0, -1.0 / std::f64::consts::TAU) * total;
    assert_relative_eq!(a0.re, expected.re, epsilon = 1e-12);
    assert_relative_eq!(a0.im, expected.im, epsilon = 1e-12);
}

#[test]
fn box_processing_order_does_not_change_expansions() {
    // Recompute level 2 by hand, iterating boxes in reverse, children in
    // their canonical order; values must match the sweep bitwise.
    let particles = uniform_random::<f64>(400, 3);
    let tree = build_tree::<f64>(3).unwrap();
    let binning = bin_particles(&tree, &particles).unwrap();
    let mults = upward_sweep(&tree, &binning, &particles, 7).unwrap();
    let ops = ExpansionOps::new(7).unwrap();
    for lin in (0..16).rev() {
        let parent = BoxId::from_linear(2, lin);
        let mut acc = fmm2d::expansion::MultipoleExpansion::zero(tree.center(parent), 7);
        for child in parent.children() {
            let shifted = ops
                .m2m(&mults[3][child.linear()], tree.center(parent))
                .unwrap();
            acc.accumulate(&shifted).unwrap();
        }
        assert_eq!(acc.coeffs, mults[2][lin].coeffs, "box {lin}");
    }
}

// --- Downward sweep -------------------------------------------------------

#[test]
fn coarsest_locals_seed_from_zero() {
    // Level 1 has no well-separated boxes, so the level-2 locals must be
    // the level-2 M2L sums with nothing inherited from above. With a
    // 2-level tree the sweep output exposes exactly those locals.
    let particles = uniform_random::<f64>(256, 19);
    let tree = build_tree::<f64>(2).unwrap();
    let binning = bin_particles(&tree, &particles).unwrap();
    let mults = upward_sweep(&tree, &binning, &particles, 8).unwrap();
    let lists = interaction_lists(&tree, 2).unwrap();
    let swept = downward_sweep(&tree, &mults, std::slice::from_ref(&lists), 8).unwrap();
    let ops = ExpansionOps::new(8).unwrap();
    for b in tree.boxes(2).unwrap() {
        let mut expected = LocalExpansion::zero(tree.center(b), 8);
        for &p in lists.partners_of(b) {
            let term = ops
                .m2l(&mults[2][p.linear()], tree.center(b), tree.width(2))
                .unwrap();
            expected.accumulate(&term).unwrap();
        }
        assert_eq!(expected.coeffs, swept[b.linear()].coeffs);
    }
}

#[test]
fn finest_local_reproduces_a_far_source() {
    let source = Particle::new(0.03f64, 0.05, 1.3);
    let probe = Complex::new(0.91f64, 0.88);
    let particles = [source, Particle::new(probe.re, probe.im, 0.0)];
    let tree = build_tree::<f64>(3).unwrap();
    let binning = bin_particles(&tree, &particles).unwrap();
    let mults = upward_sweep(&tree, &binning, &particles, 15).unwrap();
    let lists: Vec<_> = (2..=3)
        .map(|l| interaction_lists(&tree, l).unwrap())
        .collect();
    let locals = downward_sweep(&tree, &mults, &lists, 15).unwrap();
    let target_box = tree.locate(probe).unwrap();
    let got = expansion::l2p(&locals[target_box.linear()], probe).unwrap();
    let want = biot_savart_farfield(probe - source.position)
        .unwrap()
        .scale(source.circulation);
    assert_relative_eq!(got.re, want.re, max_relative = 1e-8, epsilon = 1e-12);
    assert_relative_eq!(got.im, want.im, max_relative = 1e-8, epsilon = 1e-12);
}

#[test]
fn locals_are_linear_in_circulation() {
    let particles = uniform_random::<f64>(300, 23);
    let doubled: Vec<Particle<f64>> = particles
        .iter()
        .map(|p| Particle::new(p.position.re, p.position.im, 2.0 * p.circulation))
        .collect();
    let tree = build_tree::<f64>(3).unwrap();
    let lists: Vec<_> = (2..=3)
        .map(|l| interaction_lists(&tree, l).unwrap())
        .collect();
    let run = |set: &[Particle<f64>]| {
        let binning = bin_particles(&tree, set).unwrap();
        let mults = upward_sweep(&tree, &binning, set, 9).unwrap();
        downward_sweep(&tree, &mults, &lists, 9).unwrap()
    };
    let base = run(&particles);
    let twice = run(&doubled);
    // Scaling by 2 is exact in floating point, so equality is bitwise.
    for (b, t) in base.iter().zip(&twice) {
        for (cb, ct) in b.coeffs.iter().zip(&t.coeffs) {
            assert_eq!(cb.scale(2.0), *ct);
        }
    }
}

// --- Combine --------------------------------------------------------------

#[test]
fn combine_is_elementwise_far_plus_near() {
    let far = vec![Complex::new(1.0f64, 2.0), Complex::new(-3.0, 0.5)];
    let near = vec![Complex::new(0.25f64, -1.0), Complex::new(2.0, 2.0)];
    let zeros = vec![Complex::new(0.0f64, 0.0); 2];
    assert_eq!(combine(&far, &zeros).unwrap(), far);
    assert_eq!(combine(&zeros, &near).unwrap(), near);
    let both = combine(&far, &near).unwrap();
    for i in 0..2 {
        assert_eq!(both[i], far[i] + near[i]);
    }
    assert!(matches!(
        combine(&far, &zeros[..1]),
        Err(FmmError::LengthMismatch {
            expected: 2,
            got: 1
        })
    ));
}

// --- Instrumentation ------------------------------------------------------

#[test]
fn near_field_flops_match_the_closed_form_on_lattices() {
    for (levels, per_box, expected) in [(2u32, 10usize, 216_480u64), (3, 16, 2_703_360)] {
        let particles = lattice(levels, per_box);
        let (_, report) = compute_velocities(&particles, FmmConfig::new(levels, 15)).unwrap();
        assert_eq!(report.stage(9).flops, expected);
        let fr = flop_report(&report);
        assert!(fr.direct_consistent, "L={levels} B={per_box}: {fr:?}");
        assert_eq!(fr.counted_direct as f64, fr.predicted_direct);
    }
}

#[test]
fn p2m_flops_follow_the_per_particle_convention() {
    for order in [4usize, 15] {
        let particles = lattice(2, 9);
        let (_, report) = compute_velocities(&particles, FmmConfig::new(2, order)).unwrap();
        let n = particles.len() as u64;
        assert_eq!(report.stage(4).flops, (8 * order as u64 + 3) * n);
        let fr = flop_report(&report);
        assert!(fr.init_consistent);
        assert_eq!(fr.predicted_init, report.stage(4).flops + 2);
    }
}

#[test]
fn near_pair_count_doubles_the_unordered_pairs() {
    let particles = uniform_random::<f64>(600, 31);
    let tree = build_tree::<f64>(3).unwrap();
    let binning = bin_particles(&tree, &particles).unwrap();
    // Brute-force unordered near pairs: distinct particles whose boxes are
    // identical or Chebyshev-adjacent at the finest level.
    let mut unordered = 0u64;
    for i in 0..particles.len() {
        for j in (i + 1)..particles.len() {
            let (a, b) = (binning.box_of(i), binning.box_of(j));
            let near = (a.i as i64 - b.i as i64).abs() <= 1 && (a.j as i64 - b.j as i64).abs() <= 1;
            if near {
                unordered += 1;
            }
        }
    }
    let (_, report) = compute_velocities(&particles, FmmConfig::new(3, 6)).unwrap();
    assert_eq!(report.near_pairs, 2 * unordered);
    assert_eq!(report.stage(9).flops, 22 * 2 * unordered);
}

#[test]
fn stage_report_structure_is_complete() {
    let particles = lattice(3, 4);
    let (_, report) = compute_velocities(&particles, FmmConfig::new(3, 5)).unwrap();
    assert_eq!(report.stage(1).tasks, 1);
    assert_eq!(report.stage(4).tasks, 64);
    assert_eq!(report.stage(5).tasks, 16);
    assert_eq!(report.stage(6).tasks, 80);
    assert_eq!(report.stage(7).tasks, 64);
    assert_eq!(report.stage(9).tasks, 64);
    assert_eq!(report.stage(10).tasks, 1);
    assert_eq!(report.stage(10).flops, 2 * 256);
    assert_eq!(report.stage(8).flops, (8 * 5 + 2) * 256);
    // Stage 6 charges per actual interaction-list entry.
    let m2l_expected: u64 = (2..=3)
        .map(|l| {
            interaction_lists(&build_tree::<f64>(3).unwrap(), l)
                .unwrap()
                .total_entries() as u64
        })
        .sum();
    assert_eq!(report.m2l_entries, m2l_expected);
    assert_eq!(report.stage(6).flops, (2 + 17 * 25) * m2l_expected);
    assert!(report.total_flops() > 0);
}

#[test]
fn workspace_prepare_defaults_sigma_to_a_tenth_of_the_finest_width() {
    let particles = lattice(3, 4);
    let ws = prepare(&particles, FmmConfig::new(3, 5)).unwrap();
    assert_relative_eq!(ws.config().levels as f64, 3.0);
    let explicit = prepare(&particles, FmmConfig::new(3, 5).with_sigma(0.0125)).unwrap();
    let implicit_v = compute_velocities(&particles, FmmConfig::new(3, 5)).unwrap().0;
    let explicit_v = compute_velocities(&particles, FmmConfig::new(3, 5).with_sigma(0.0125))
        .unwrap()
        .0;
    assert_eq!(implicit_v, explicit_v);
    drop((ws, explicit));
}
