use homog2d::cellsolve::{
    corrector_diagnostics, solve_lake_corrector, solve_stiff_corrector, DEFAULT_LADDER,
};
use homog2d::efftensor::{
    b_bar, dilute_cm, duality_check, homogenized_tensor_lake, homogenized_tensor_stiff, m_bar,
    DiluteVariant,
};
use homog2d::error::Error;
use homog2d::microgeom::{
    build_depth_field, rasterize_indicator, sample_random_hardcore, DepthSpec, Inclusion,
    LaminateTerm, Microstructure, RadiusLaw, TrigTerm,
};
use nalgebra::Matrix2;
use proptest::prelude::*;

fn trig(mean: f64, terms: &[([i32; 2], f64, f64)]) -> DepthSpec {
    DepthSpec::trigonometric(
        mean,
        terms
            .iter()
            .map(|&(k, amplitude, phase)| TrigTerm {
                k,
                amplitude,
                phase,
            })
            .collect(),
        4.0,
    )
}

fn lake_tensor(spec: &DepthSpec, n: usize) -> Matrix2<f64> {
    let b = build_depth_field(spec, n).unwrap();
    let sol = solve_lake_corrector(&b, 1e-12).unwrap();
    homogenized_tensor_lake(&b, &sol).unwrap().a_bar
}

/// Quarter turn `x ↦ Rx` applied to a tensor: `R ā Rᵀ`.
fn rotate(a: &Matrix2<f64>) -> Matrix2<f64> {
    let r = Matrix2::new(0.0, -1.0, 1.0, 0.0);
    r * a * r.transpose()
}

#[test]
fn laminate_lake_tensor_matches_quadrature() {
    let spec = DepthSpec::laminate(
        1.2,
        vec![
            LaminateTerm {
                k: 1,
                amplitude: 0.4,
                phase: 0.0,
            },
            LaminateTerm {
                k: 3,
                amplitude: 0.2,
                phase: 1.1,
            },
        ],
        4.0,
    );
    let a = lake_tensor(&spec, 128);
    // midpoint rule on 200000 points of the 1D profile
    let m = 200_000;
    let inv_mean = (0..m)
        .map(|i| {
            let x = (i as f64 + 0.5) / m as f64;
            let b = 1.2
                + 0.4 * (2.0 * std::f64::consts::PI * x).cos()
                + 0.2 * (6.0 * std::f64::consts::PI * x + 1.1).cos();
            1.0 / b
        })
        .sum::<f64>()
        / m as f64;
    assert!((a[(0, 0)] - 1.0 / 1.2).abs() < 1e-10, "{a}");
    assert!((a[(1, 1)] - inv_mean).abs() < 1e-9, "{a} vs {inv_mean}");
    assert!(a[(0, 1)].abs() < 1e-12);
}

#[test]
fn lake_tensor_converges_at_second_order() {
    let spec = trig(1.0, &[([1, 1], 0.35, 0.2), ([1, -2], 0.2, 0.9)]);
    let reference = lake_tensor(&spec, 256);
    let errs: Vec<f64> = [16, 32, 64]
        .iter()
        .map(|&n| (lake_tensor(&spec, n) - reference).norm())
        .collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 1.8, "observed order {order:.2} from {errs:?}");
    }
}

#[test]
fn quarter_turn_equivariance_stiff() {
    let ms = Microstructure {
        inclusions: vec![Inclusion::Ellipse {
            center: [0.0, 0.0],
            radii: [0.25, 0.12],
            angle: 0.3,
        }],
        hardcore: 0.05,
        provenance: Default::default(),
    };
    let ladder = [1e2, 1e3, 1e4];
    let a = homogenized_tensor_stiff(&solve_stiff_corrector(&ms, 64, &ladder, 1e-11).unwrap())
        .unwrap()
        .a_bar;
    let ar = homogenized_tensor_stiff(
        &solve_stiff_corrector(&ms.rotated_quarter(), 64, &ladder, 1e-11).unwrap(),
    )
    .unwrap()
    .a_bar;
    assert!(
        a[(0, 1)].abs() > 1e-3,
        "tilted ellipse should couple the axes: {a}"
    );
    assert!((ar - rotate(&a)).norm() < 1e-8, "{ar} vs {}", rotate(&a));
}

#[test]
fn quarter_turn_equivariance_lake() {
    let terms = [([1, 2], 0.3, 0.4), ([2, 0], 0.2, 0.0)];
    let a = lake_tensor(&trig(1.0, &terms), 64);
    // b(R⁻¹x): the wave vector k turns with the cell.
    let turned: Vec<_> = terms
        .iter()
        .map(|&([k1, k2], a, p)| ([-k2, k1], a, p))
        .collect();
    let ar = lake_tensor(&trig(1.0, &turned), 64);
    assert!((ar - rotate(&a)).norm() < 1e-10, "{ar} vs {}", rotate(&a));
}

#[test]
fn duality_holds_on_a_laminate() {
    let spec = DepthSpec::laminate(
        1.0,
        vec![LaminateTerm {
            k: 2,
            amplitude: 0.6,
            phase: 0.0,
        }],
        4.0,
    );
    let b = build_depth_field(&spec, 128).unwrap();
    let rep = duality_check(&b, 1e-12).unwrap();
    assert!(rep.gap < 1e-10, "{rep:?}");
    let arith = b.mean();
    assert!((rep.direct[(1, 1)] - arith).abs() < 1e-10);
}

#[test]
fn rigid_inclusion_diagnostics() {
    let ms = Microstructure::disk_with_fraction(0.2, 0.05);
    let sol = solve_stiff_corrector(&ms, 128, &DEFAULT_LADDER, 1e-10).unwrap();
    let d = corrector_diagnostics(&sol, Some(&ms));
    let rigid = d.rigidity.unwrap();
    assert!(rigid[0] < 1e-3 && rigid[1] < 1e-3, "{rigid:?}");
    for f in &d.inclusion_flux {
        assert!(f[0].abs() < 1e-3 && f[1].abs() < 1e-3, "{f:?}");
    }
    for m in d.gradient_mean {
        assert!(m[0].abs() < 1e-12 && m[1].abs() < 1e-12);
    }
    let t = homogenized_tensor_stiff(&sol).unwrap();
    // stiff inclusions stiffen the medium; the disk keeps ā isotropic
    assert!(t.a_bar[(0, 0)] > 1.0 && (t.a_bar[(0, 0)] - t.a_bar[(1, 1)]).abs() < 1e-8);
    assert!(t.a_bar[(0, 1)].abs() < 1e-8);
    let m = m_bar(&t.a_bar).unwrap();
    assert_eq!(m[(0, 0)], t.a_bar[(1, 1)]);
}

#[test]
fn inverse_tensor_relations() {
    let a = Matrix2::new(1.5, 0.25, 0.25, 0.8);
    let b = b_bar(&a).unwrap();
    let j = Matrix2::new(0.0, -1.0, 1.0, 0.0);
    assert!((j * b.try_inverse().unwrap() * j.transpose() - a).norm() < 1e-14);
    assert!(matches!(
        b_bar(&Matrix2::new(1.0, 0.0, 0.0, -1.0)),
        Err(Error::Singular(_))
    ));
}

#[test]
fn dilute_expansion_envelope() {
    let d = [Inclusion::disk([0.0, 0.0], 0.1)];
    assert!(dilute_cm(DiluteVariant::Stiff, &d, 0.2).is_err());
    let e = [Inclusion::Ellipse {
        center: [0.0, 0.0],
        radii: [0.1, 0.05],
        angle: 0.0,
    }];
    assert!(matches!(
        dilute_cm(DiluteVariant::Stiff, &e, 0.01),
        Err(Error::Unsupported(_))
    ));
    // equal depths: no correction
    let same = dilute_cm(
        DiluteVariant::Lake {
            alpha: 2.0,
            beta: 2.0,
        },
        &d,
        0.05,
    )
    .unwrap();
    assert!((same - Matrix2::identity() * 0.5).norm() < 1e-15);
}

#[test]
fn sampler_is_reproducible_and_hardcore() {
    let law = RadiusLaw::Uniform {
        min: 0.05,
        max: 0.08,
    };
    let a = sample_random_hardcore(17, 0.25, 0.03, law, 200_000).unwrap();
    let b = sample_random_hardcore(17, 0.25, 0.03, law, 200_000).unwrap();
    assert_eq!(a.microstructure, b.microstructure);
    assert!(a.microstructure.validate().is_valid());
    let c = sample_random_hardcore(18, 0.25, 0.03, law, 200_000).unwrap();
    assert_ne!(a.microstructure, c.microstructure);
    let raster = rasterize_indicator(&a.microstructure, 256, 4)
        .unwrap()
        .mean();
    assert!(
        (raster - a.achieved_fraction).abs() < 5e-3,
        "{raster} vs {}",
        a.achieved_fraction
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn validation_ignores_inclusion_order(
        disks in prop::collection::vec(((-0.5f64..0.5, -0.5f64..0.5), 0.03f64..0.2), 1..6),
        seed in any::<u64>(),
    ) {
        let inclusions: Vec<Inclusion> = disks.iter().map(|&((x, y), r)| Inclusion::disk([x, y], r)).collect();
        let ms = Microstructure { inclusions: inclusions.clone(), hardcore: 0.04, provenance: Default::default() };
        let mut perm: Vec<usize> = (0..inclusions.len()).collect();
        let mut s = seed;
        for i in (1..perm.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let shuffled = Microstructure {
            inclusions: perm.iter().map(|&i| inclusions[i].clone()).collect(),
            ..ms.clone()
        };
        let (r1, r2) = (ms.validate(), shuffled.validate());
        prop_assert_eq!(r1.is_valid(), r2.is_valid());
        prop_assert_eq!(r1.violations.len(), r2.violations.len());
        let mut p1: Vec<(usize, usize)> = r1.hardcore_pairs().iter()
            .map(|&(a, b)| (a.min(b), a.max(b))).collect();
        let mut p2: Vec<(usize, usize)> = r2.hardcore_pairs().iter()
            .map(|&(a, b)| { let (a, b) = (perm[a], perm[b]); (a.min(b), a.max(b)) }).collect();
        p1.sort_unstable();
        p2.sort_unstable();
        prop_assert_eq!(p1, p2);
    }

    #[test]
    fn lake_tensor_lies_between_mean_bounds(a1 in 0.0f64..0.4, a2 in 0.0f64..0.4, p in 0.0f64..6.0) {
        // Voigt/Reuss: (∫b)⁻¹ ≤ ā ≤ ∫b⁻¹ in the Loewner order.
        let spec = trig(1.0, &[([1, 0], a1, p), ([1, 1], a2, 0.0)]);
        let b = build_depth_field(&spec, 32).unwrap();
        let a = lake_tensor(&spec, 32);
        let lower = 1.0 / b.mean();
        let upper = b.map(|v| 1.0 / v).mean();
        let ev = a.symmetric_eigenvalues();
        prop_assert!(ev.min() >= lower - 1e-10, "{} < {}", ev.min(), lower);
        prop_assert!(ev.max() <= upper + 1e-10, "{} > {}", ev.max(), upper);
    }
}
