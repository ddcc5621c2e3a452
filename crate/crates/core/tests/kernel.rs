use approx::assert_relative_eq;
use fmm2d::generate::uniform_random;
use fmm2d::kernel::{
    biot_savart_farfield, biot_savart_regularized, direct_sum_all, near_field_eval,
    near_pair_count, zeta, KernelParams,
};
use fmm2d::quadtree::{bin_particles, build_tree};
use fmm2d::{Complex, FmmError, Particle64, Velocity64};
use proptest::prelude::*;
use std::f64::consts::PI;

fn params(sigma: f64) -> KernelParams<f64> {
    KernelParams::new(sigma).unwrap()
}

/// Independent double-loop reference written in real arithmetic, with its
/// own cancellation-free branch near zero separation.
fn oracle_direct(particles: &[Particle64], sigma: f64) -> Vec<Velocity64> {
    let mut out = vec![Complex::new(0.0, 0.0); particles.len()];
    for (i, t) in particles.iter().enumerate() {
        for s in particles.iter() {
            let dx = t.position.re - s.position.re;
            let dy = t.position.im - s.position.im;
            let r2 = dx * dx + dy * dy;
            if r2 == 0.0 {
                continue;
            }
            let q = r2 / (2.0 * sigma * sigma);
            let f = if q < 1e-8 {
                (1.0 - q / 2.0) / (2.0 * sigma * sigma)
            } else {
                (1.0 - (-q).exp()) / r2
            } / (2.0 * PI);
            out[i].re += -s.circulation * dy * f;
            out[i].im += s.circulation * dx * f;
        }
    }
    out
}

#[test]
fn invalid_sigma_is_rejected() {
    for bad in [0.0, -0.5, f64::NAN, f64::INFINITY] {
        assert!(matches!(
            KernelParams::new(bad),
            Err(FmmError::InvalidConfig { .. })
        ));
    }
}

#[test]
fn zeta_peak_value_at_coincident_points() {
    let z = Complex::new(0.3, -0.7);
    assert_relative_eq!(
        zeta(z, z, params(1.0)),
        1.0 / (2.0 * PI),
        max_relative = 1e-15
    );
}

#[test]
fn zeta_is_symmetric_in_its_arguments() {
    let ps = uniform_random::<f64>(40, 11);
    for pair in ps.chunks(2) {
        let (x, y) = (pair[0].position, pair[1].position);
        assert_eq!(zeta(x, y, params(0.2)), zeta(y, x, params(0.2)));
    }
}

#[test]
fn zeta_integrates_to_one_over_a_wide_disk() {
    // Midpoint rule on a polar grid centered on the blob; radius 8σ leaves
    // a tail below 1e-13, so the quadrature must recover 1 within 1e-6.
    let sigma = 0.3;
    let center = Complex::new(0.31, -0.17);
    let (nr, ntheta) = (20_000usize, 16usize);
    let rmax = 8.0 * sigma;
    let (dr, dtheta) = (rmax / nr as f64, 2.0 * PI / ntheta as f64);
    let mut integral = 0.0;
    for k in 0..nr {
        let r = (k as f64 + 0.5) * dr;
        for m in 0..ntheta {
            let theta = (m as f64 + 0.5) * dtheta;
            let x = center + Complex::new(r * theta.cos(), r * theta.sin());
            integral += zeta(x, center, params(sigma)) * r * dr * dtheta;
        }
    }
    assert!((integral - 1.0).abs() <= 1e-6, "got {integral}");
}

#[test]
fn regularized_kernel_matches_hand_value() {
    let v = biot_savart_regularized(Complex::new(1.0, 0.0), params(0.1));
    assert_eq!(v.re, 0.0);
    assert_relative_eq!(
        v.im,
        (1.0 - (-50.0f64).exp()) / (2.0 * PI),
        max_relative = 1e-15
    );
}

#[test]
fn regularized_kernel_vanishes_at_origin() {
    let v = biot_savart_regularized(Complex::new(0.0, 0.0), params(0.25));
    assert_eq!((v.re, v.im), (0.0, 0.0));
}

#[test]
fn tiny_separations_stay_finite_and_linear() {
    // Within the series branch the kernel is ~ iz/(4πσ²); the quadratic
    // correction at q = 1e-9 sits at the last few bits.
    let sigma = 0.5;
    let z = Complex::new(1e-9, 0.0);
    let v = biot_savart_regularized(z, params(sigma));
    assert!(v.im > 0.0 && v.re == 0.0);
    assert_relative_eq!(
        v.im,
        1e-9 / (4.0 * PI * sigma * sigma),
        max_relative = 1e-8
    );
}

#[test]
fn farfield_matches_hand_values_and_rejects_origin() {
    let v = biot_savart_farfield(Complex::new(1.0, 0.0)).unwrap();
    assert_eq!(v.re, 0.0);
    assert_relative_eq!(v.im, 1.0 / (2.0 * PI), max_relative = 1e-15);

    let v = biot_savart_farfield(Complex::new(0.0, 2.0)).unwrap();
    assert_relative_eq!(v.re, -1.0 / (4.0 * PI), max_relative = 1e-15);
    assert_eq!(v.im, 0.0);

    assert!(matches!(
        biot_savart_farfield::<f64>(Complex::new(0.0, 0.0)),
        Err(FmmError::SingularPoint)
    ));
}

#[test]
fn farfield_equals_conjugate_analytic_form() {
    for p in uniform_random::<f64>(25, 3) {
        let z = p.position + Complex::new(0.01, 0.02);
        let direct = biot_savart_farfield(z).unwrap();
        let analytic = (Complex::new(0.0, 1.0) / z.conj()) / (2.0 * PI);
        assert_relative_eq!(direct.re, analytic.re, max_relative = 1e-14);
        assert_relative_eq!(direct.im, analytic.im, max_relative = 1e-14);
    }
}

#[test]
fn ten_sigma_separation_closes_the_regularization_gap() {
    let v_reg = biot_savart_regularized(Complex::new(1.0, 0.0), params(0.1));
    let v_far = biot_savart_farfield(Complex::new(1.0, 0.0)).unwrap();
    let rel = (v_reg - v_far).norm() / v_far.norm();
    assert!(rel <= (-50.0f64).exp(), "got {rel}");
}

proptest! {
    #[test]
    fn kernel_is_exactly_antisymmetric(
        x in -1.0f64..1.0,
        y in -1.0f64..1.0,
        sigma in 0.05f64..1.0,
    ) {
        let z = Complex::new(x, y);
        let a = biot_savart_regularized(z, params(sigma));
        let b = biot_savart_regularized(-z, params(sigma));
        prop_assert_eq!(a.re, -b.re);
        prop_assert_eq!(a.im, -b.im);
    }

    #[test]
    fn regularized_converges_to_farfield(
        x in -1.0f64..1.0,
        y in -1.0f64..1.0,
        sigma in 0.05f64..0.5,
    ) {
        let z = Complex::new(x, y);
        prop_assume!(z.norm_sqr() > 1e-4);
        let q = z.norm_sqr() / (2.0 * sigma * sigma);
        let reg = biot_savart_regularized(z, params(sigma));
        let far = biot_savart_farfield(z).unwrap();
        let rel = (reg - far).norm() / far.norm();
        prop_assert!(rel <= (-q).exp() * (1.0 + 1e-12) + 1e-15);
    }
}

#[test]
fn any_pair_with_opposite_circulations_moves_in_lockstep() {
    let particles = vec![
        Particle64::new(0.3, 0.3, 1.0),
        Particle64::new(0.7, 0.7, -1.0),
    ];
    let v = direct_sum_all(&particles, params(0.05));
    assert_eq!((v[0].re, v[0].im), (v[1].re, v[1].im));
    assert!(v[0].norm() > 0.0);
}

#[test]
fn lone_particle_does_not_move_itself() {
    let v = direct_sum_all(&[Particle64::new(0.5, 0.5, 3.0)], params(0.1));
    assert_eq!((v[0].re, v[0].im), (0.0, 0.0));
}

#[test]
fn direct_sum_matches_independent_double_loop() {
    let particles = uniform_random::<f64>(100, 42);
    let sigma = 0.03;
    let ours = direct_sum_all(&particles, params(sigma));
    let reference = oracle_direct(&particles, sigma);
    for (a, b) in ours.iter().zip(&reference) {
        assert_relative_eq!(a.re, b.re, max_relative = 1e-11, epsilon = 1e-13);
        assert_relative_eq!(a.im, b.im, max_relative = 1e-11, epsilon = 1e-13);
    }
}

#[test]
fn direct_sum_is_translation_equivariant() {
    let particles = uniform_random::<f64>(60, 8);
    let shift = Complex::new(0.123, 0.045);
    let shifted: Vec<Particle64> = particles
        .iter()
        .map(|p| Particle64 {
            position: p.position + shift,
            circulation: p.circulation,
        })
        .collect();
    let base = direct_sum_all(&particles, params(0.04));
    let moved = direct_sum_all(&shifted, params(0.04));
    for (a, b) in base.iter().zip(&moved) {
        assert_relative_eq!(a.re, b.re, max_relative = 1e-10, epsilon = 1e-12);
        assert_relative_eq!(a.im, b.im, max_relative = 1e-10, epsilon = 1e-12);
    }
}

#[test]
fn near_field_covers_everything_when_all_share_a_box() {
    // 20 particles inside finest box (0,0) of an L=2 tree.
    let mut particles = uniform_random::<f64>(20, 5);
    for p in &mut particles {
        p.position = p.position * 0.24 + Complex::new(0.001, 0.001);
    }
    let tree = build_tree::<f64>(2).unwrap();
    let bins = bin_particles(&tree, &particles).unwrap();
    let near = near_field_eval(&tree, &bins, &particles, params(0.01)).unwrap();
    let full = direct_sum_all(&particles, params(0.01));
    for (a, b) in near.iter().zip(&full) {
        assert_eq!((a.re, a.im), (b.re, b.im));
    }
}

#[test]
fn isolated_particle_sees_only_its_own_box() {
    let mut particles: Vec<Particle64> = uniform_random::<f64>(12, 17)
        .into_iter()
        .map(|mut p| {
            p.position = p.position * 0.24 + Complex::new(0.001, 0.001);
            p
        })
        .collect();
    particles.push(Particle64::new(0.9, 0.9, 2.0));
    let tree = build_tree::<f64>(2).unwrap();
    let bins = bin_particles(&tree, &particles).unwrap();
    let near = near_field_eval(&tree, &bins, &particles, params(0.01)).unwrap();

    // The far particle's box and neighborhood hold nothing else.
    let lone = near[12];
    assert_eq!((lone.re, lone.im), (0.0, 0.0));

    // The cluster is unaffected by the distant particle's presence.
    let cluster_only = direct_sum_all(&particles[..12], params(0.01));
    for (a, b) in near[..12].iter().zip(&cluster_only) {
        assert_eq!((a.re, a.im), (b.re, b.im));
    }
}

#[test]
fn pair_counts_match_the_uniform_population_formula() {
    // 22 flops/evaluation turns these into the stage-9 work totals quoted
    // by the cost model: 9840 * 22 = 216480 and 122880 * 22 = 2703360.
    for (levels, per_box, expected) in [(2u32, 10usize, 9840u64), (3, 16, 122_880)] {
        let tree = build_tree::<f64>(levels).unwrap();
        let particles = fmm2d::generate::uniform_lattice::<f64>(levels, per_box);
        let bins = bin_particles(&tree, &particles).unwrap();
        assert_eq!(near_pair_count(&tree, &bins).unwrap(), expected);
    }
}

#[test]
fn near_field_rejects_inconsistent_binning() {
    let tree = build_tree::<f64>(2).unwrap();
    let particles = uniform_random::<f64>(10, 1);
    let bins = bin_particles(&tree, &particles).unwrap();
    let fewer = &particles[..9];
    assert!(matches!(
        near_field_eval(&tree, &bins, fewer, params(0.1)),
        Err(FmmError::LengthMismatch { .. })
    ));
}
