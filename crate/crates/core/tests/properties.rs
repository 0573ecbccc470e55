use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use rmech::analysis::{hj_energy_check, Grid, GridAxis};
use rmech::control::{closure_rank, symmetric_product};
use rmech::dynamics::{integrate_many, PhaseState};
use rmech::expr::{Dual1, Expression, SymbolTable};
use rmech::geometry::{self, christoffel_at, covariant_derivative_field, eval_field, lie_bracket, metric_at, Covector};
use rmech::holonomic::{project_force, tangent_projector};
use rmech::nonholonomic::{vertical_differential, virtual_velocity_basis};
use rmech::{ExecMode, IntegratorConfig, System};

/// Parameters of a 2-D metric that is positive definite for all of them.
fn metric_params() -> impl Strategy<Value = [f64; 3]> {
    [-0.9..0.9f64, -0.9..0.9f64, -0.9..0.9f64]
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5..1.5f64, 2)
}

fn curved(p: [f64; 3], extra: &[(&str, &str, &str)]) -> System {
    let mut b = System::builder("curved", &["x", "y"]).unwrap();
    b.metric(0, 0, &format!("2 + {}*sin(x)", p[0]))
        .unwrap()
        .metric(0, 1, &format!("0.5*{}*cos(y)", p[1]))
        .unwrap()
        .metric(1, 1, &format!("2 + {}*x*y/(1 + x^2 + y^2)", p[2]))
        .unwrap();
    for (name, fx, fy) in extra {
        b.field(name, 0, fx).unwrap().field(name, 1, fy).unwrap();
        let u = format!("u{name}");
        b.control(&u, 0, fx).unwrap().control(&u, 1, fy).unwrap();
    }
    b.build().unwrap()
}

const FIELDS: [(&str, &str, &str); 3] = [("Y", "1 + x*y", "sin(x)"), ("Z", "cos(y)", "x^2 - y"), ("W", "y", "-x")];

/// Christoffel symbols from central differences of the metric.
fn fd_christoffel(sys: &System, q: &[f64]) -> Vec<Vec<Vec<f64>>> {
    let h = 1e-5;
    let dg: Vec<_> = (0..2)
        .map(|l| {
            let mut a = q.to_vec();
            let mut b = q.to_vec();
            a[l] += h;
            b[l] -= h;
            (metric_at(sys, &a).unwrap() - metric_at(sys, &b).unwrap()) / (2.0 * h)
        })
        .collect();
    let ginv = metric_at(sys, q).unwrap().try_inverse().unwrap();
    (0..2)
        .map(|k| {
            (0..2)
                .map(|i| {
                    (0..2)
                        .map(|j| {
                            (0..2).map(|l| 0.5 * ginv[(k, l)] * (dg[i][(l, j)] + dg[j][(l, i)] - dg[l][(i, j)])).sum()
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn fd_field_jacobian(sys: &System, name: &str, q: &[f64]) -> [[f64; 2]; 2] {
    let h = 1e-6;
    let mut out = [[0.0; 2]; 2];
    for j in 0..2 {
        let mut a = q.to_vec();
        let mut b = q.to_vec();
        a[j] += h;
        b[j] -= h;
        let fa = eval_field(sys, sys.field(name).unwrap(), &a).unwrap().value;
        let fb = eval_field(sys, sys.field(name).unwrap(), &b).unwrap().value;
        for i in 0..2 {
            out[i][j] = (fa[i] - fb[i]) / (2.0 * h);
        }
    }
    out
}

fn expr_strategy() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![Just("x".to_string()), Just("y".to_string()), (-2.0..2.0f64).prop_map(|c| format!("{c:.4}"))];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} * {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} / (2 + sin({b})))")),
            inner.clone().prop_map(|a| format!("cos({a})")),
            inner.clone().prop_map(|a| format!("exp(0.2*sin({a}))")),
            inner.clone().prop_map(|a| format!("log(1 + ({a})^2)")),
            inner.clone().prop_map(|a| format!("sqrt(2 + sin({a}))")),
            inner.prop_map(|a| format!("({a})^3")),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn dual_numbers_match_central_differences(text in expr_strategy(), q in point()) {
        let e = Expression::parse(&text, &SymbolTable::new(["x", "y"])).unwrap();
        let d = e.eval(&[Dual1::variable(q[0], 0, 2), Dual1::variable(q[1], 1, 2)]).unwrap();
        for i in 0..2 {
            let h = 1e-5;
            let mut a = q.clone();
            let mut b = q.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (e.eval::<f64>(&a).unwrap() - e.eval::<f64>(&b).unwrap()) / (2.0 * h);
            prop_assert!((d.d(i) - fd).abs() <= 1e-6 * d.d(i).abs().max(1.0), "{text}: {} vs {fd}", d.d(i));
        }
    }

    #[test]
    fn christoffel_symbols_are_symmetric_and_match_metric(p in metric_params(), q in point()) {
        let sys = curved(p, &[]);
        let gamma = christoffel_at(&sys, &q).unwrap();
        prop_assert_eq!(gamma.max_asymmetry(), 0.0);
        let fd = fd_christoffel(&sys, &q);
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    assert_abs_diff_eq!(gamma.get(k, i, j), fd[k][i][j], epsilon = 1e-7);
                }
            }
        }
    }

    #[test]
    fn connection_is_torsion_free_and_metric_compatible(p in metric_params(), q in point()) {
        let sys = curved(p, &FIELDS);
        let yz = covariant_derivative_field(&sys, "Y", "Z", &q).unwrap().components;
        let zy = covariant_derivative_field(&sys, "Z", "Y", &q).unwrap().components;
        let br = lie_bracket(&sys, sys.field("Y").unwrap(), sys.field("Z").unwrap(), &q).unwrap().components;
        for k in 0..2 {
            assert_abs_diff_eq!(yz[k] - zy[k], br[k], epsilon = 1e-10);
        }
        // W(g(Y, Z)) by central differences along W.
        let inner = |at: &[f64]| {
            let g = metric_at(&sys, at).unwrap();
            let y = eval_field(&sys, sys.field("Y").unwrap(), at).unwrap().value;
            let z = eval_field(&sys, sys.field("Z").unwrap(), at).unwrap().value;
            (0..2).map(|i| (0..2).map(|j| g[(i, j)] * y[i] * z[j]).sum::<f64>()).sum::<f64>()
        };
        let w = eval_field(&sys, sys.field("W").unwrap(), &q).unwrap().value;
        let h = 1e-5;
        let a: Vec<f64> = q.iter().zip(&w).map(|(q, w)| q + h * w).collect();
        let b: Vec<f64> = q.iter().zip(&w).map(|(q, w)| q - h * w).collect();
        let lhs = (inner(&a) - inner(&b)) / (2.0 * h);
        let g = metric_at(&sys, &q).unwrap();
        let dot = |u: &[f64], v: &[f64]| (0..2).map(|i| (0..2).map(|j| g[(i, j)] * u[i] * v[j]).sum::<f64>()).sum::<f64>();
        let y = eval_field(&sys, sys.field("Y").unwrap(), &q).unwrap().value;
        let z = eval_field(&sys, sys.field("Z").unwrap(), &q).unwrap().value;
        let wy = covariant_derivative_field(&sys, "W", "Y", &q).unwrap().components;
        let wz = covariant_derivative_field(&sys, "W", "Z", &q).unwrap().components;
        assert_abs_diff_eq!(lhs, dot(&wy, &z) + dot(&y, &wz), epsilon = 1e-7);
    }

    #[test]
    fn flat_and_sharp_are_inverse(p in metric_params(), q in point(), c in prop::collection::vec(-3.0..3.0f64, 2)) {
        let sys = curved(p, &[]);
        let alpha = Covector { at: q.clone(), components: c.clone() };
        let back = geometry::flat(&sys, &geometry::sharp(&sys, &alpha).unwrap()).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(back.components[i], c[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn symmetric_product_is_symmetric_and_matches_oracle(p in metric_params(), q in point()) {
        let sys = curved(p, &FIELDS);
        let yz = symmetric_product(&sys, "Y", "Z", &q).unwrap().components;
        let zy = symmetric_product(&sys, "Z", "Y", &q).unwrap().components;
        prop_assert_eq!(&yz, &zy);
        let gamma = fd_christoffel(&sys, &q);
        let (dy, dz) = (fd_field_jacobian(&sys, "Y", &q), fd_field_jacobian(&sys, "Z", &q));
        let y = eval_field(&sys, sys.field("Y").unwrap(), &q).unwrap().value;
        let z = eval_field(&sys, sys.field("Z").unwrap(), &q).unwrap().value;
        for k in 0..2 {
            let mut oracle = 0.0;
            for j in 0..2 {
                oracle += dz[k][j] * y[j] + dy[k][j] * z[j];
                for i in 0..2 {
                    oracle += 2.0 * gamma[k][i][j] * y[i] * z[j];
                }
            }
            assert_abs_diff_eq!(yz[k], oracle, epsilon = 1e-6);
        }
    }

    #[test]
    fn closure_rank_grows_with_depth(p in metric_params(), q in point()) {
        let sys = curved(p, &FIELDS);
        let inputs = vec!["uW".to_string()];
        let ranks: Vec<usize> = (1..=3).map(|d| closure_rank(&sys, &inputs, &q, d, false).unwrap().rank).collect();
        prop_assert!(ranks.windows(2).all(|w| w[0] <= w[1]), "{ranks:?}");
        prop_assert!(ranks[2] <= 2);
    }
}

fn sphere_in_plane(p: [f64; 3]) -> System {
    let mut b = System::builder("ring", &["x", "y", "z"]).unwrap();
    b.metric(0, 0, &format!("2 + {}*sin(y)", p[0]))
        .unwrap()
        .metric(1, 1, "2")
        .unwrap()
        .metric(2, 2, &format!("2 + {}*cos(x)", p[1]))
        .unwrap()
        .metric(0, 1, &format!("0.5*{}", p[2]))
        .unwrap()
        .potential("9.8*z")
        .unwrap()
        .holonomic("ball", "x^2 + y^2 + z^2 - 1")
        .unwrap();
    b.build().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projectors_split_orthogonally(p in metric_params(), theta in 0.2..2.9f64, phi in -3.0..3.0f64) {
        let sys = sphere_in_plane(p);
        let q = vec![theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()];
        let pr = tangent_projector(&sys, &q).unwrap();
        let g = metric_at(&sys, &q).unwrap();
        let t2 = &pr.tangent * &pr.tangent;
        let n2 = &pr.normal * &pr.normal;
        let sum = &pr.tangent + &pr.normal;
        let cross = pr.tangent.transpose() * &g * &pr.normal;
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(t2[(i, j)], pr.tangent[(i, j)], epsilon = 1e-12);
                assert_abs_diff_eq!(n2[(i, j)], pr.normal[(i, j)], epsilon = 1e-12);
                assert_abs_diff_eq!(sum[(i, j)], if i == j { 1.0 } else { 0.0 }, epsilon = 1e-12);
                assert_abs_diff_eq!(cross[(i, j)], 0.0, epsilon = 1e-12);
            }
        }
        // Projected forces are tangent to the constraint surface.
        let s = PhaseState::new(0.0, q.clone(), vec![0.0; 3]);
        let f = project_force(&sys, &s).unwrap().components;
        let grad: f64 = (0..3).map(|i| 2.0 * q[i] * f[i]).sum();
        assert_abs_diff_eq!(grad, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn virtual_velocities_annihilate_constraints(
        p in metric_params(),
        q in prop::collection::vec(-2.0..2.0f64, 3),
        v in prop::collection::vec(-2.0..2.0f64, 3),
    ) {
        let mut b = System::builder("skate", &["x", "y", "th"]).unwrap();
        b.metric(0, 0, &format!("2 + {}*sin(th)", p[0]))
            .unwrap()
            .metric(1, 1, "2")
            .unwrap()
            .metric(2, 2, &format!("1 + 0.5*{}^2", p[1]))
            .unwrap()
            .nonholonomic("blade", rmech::ConstraintKind::General, "sin(th)*v_x - cos(th)*v_y + 0.1*v_th^2")
            .unwrap();
        let sys = b.build().unwrap();
        let s = PhaseState::new(0.0, q, v);
        let basis = virtual_velocity_basis(&sys, &s).unwrap();
        prop_assert_eq!(basis.len(), 2);
        let dv = vertical_differential(&sys, &sys.nonholonomic()[0].expr, &s).unwrap().components;
        for w in &basis {
            let pairing: f64 = dv.iter().zip(&w.components).map(|(a, b)| a * b).sum();
            assert_abs_diff_eq!(pairing, 0.0, epsilon = 1e-12);
        }
    }
}

#[test]
fn sequential_and_parallel_agree() {
    let sys = curved([0.3, -0.4, 0.6], &FIELDS);
    let grid = Grid::new(
        vec![GridAxis { coord: 0, lo: -1.0, hi: 1.0, count: 9 }, GridAxis { coord: 1, lo: -1.0, hi: 1.0, count: 9 }],
        vec![0.0, 0.0],
    )
    .unwrap();
    let a = hj_energy_check(&sys, "W", &grid, ExecMode::Sequential).unwrap();
    let b = hj_energy_check(&sys, "W", &grid, ExecMode::Parallel).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));

    let states: Vec<PhaseState> =
        (0..16).map(|i| PhaseState::new(0.0, vec![0.1 * i as f64, -0.05 * i as f64], vec![0.2, 0.1 * i as f64])).collect();
    let cfg = IntegratorConfig::rk4(0.0, 1.0, 1e-2);
    let seq = integrate_many(&sys, &states, &cfg, ExecMode::Sequential);
    let par = integrate_many(&sys, &states, &cfg, ExecMode::Parallel);
    for (s, p) in seq.iter().zip(&par) {
        assert_eq!(format!("{:?}", s.as_ref().unwrap()), format!("{:?}", p.as_ref().unwrap()));
    }
}
