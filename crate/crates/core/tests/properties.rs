use std::sync::OnceLock;

use proptest::prelude::*;

use kamlab::barrier::{peierls_barrier, BarrierMatrix, BarrierParams};
use kamlab::experiment::ExperimentConfig;
use kamlab::hj::{default_dt, SemiLagrangian};
use kamlab::mather::{closedness_operator, tv_distance, MatherPolytope};
use kamlab::models::{builtin_model, velocity_set, ModelParams, VelocitySet};
use kamlab::profile::Profile;
use kamlab::selection::check_operator_lipschitz;
use kamlab::torus::{wrap_point, GridField, PeriodicGrid, TorusPoint};

fn field(grid: PeriodicGrid, values: Vec<f64>) -> GridField {
    GridField::new(grid, values).unwrap()
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, n)
}

fn mechanical(u: &str, n: usize) -> (kamlab::models::ControlModel, PeriodicGrid, VelocitySet, f64) {
    let params = ModelParams { potential_u: Some(u.parse().unwrap()), ..Default::default() };
    let model = builtin_model("mechanical", &params).unwrap();
    let grid = PeriodicGrid::new(1, n).unwrap();
    let vset = velocity_set(3.0, 9, 1).unwrap();
    let dt = default_dt(&grid, &vset);
    (model, grid, vset, dt)
}

struct Selection {
    sigma: GridField,
    barrier: BarrierMatrix,
    polytope: MatherPolytope,
}

fn selection_case() -> &'static Selection {
    static CASE: OnceLock<Selection> = OnceLock::new();
    CASE.get_or_init(|| {
        let (model, grid, vset, dt) = mechanical("cos(1)", 16);
        let (polytope, out) = MatherPolytope::build(&model, grid, &vset, dt, 1e-6).unwrap();
        let c = -out.value;
        let model = model.with_critical_value(c);
        let barrier = peierls_barrier(&model, grid, c, &BarrierParams::default(), dt, &vset).unwrap();
        Selection { sigma: GridField::constant(grid, 1.0), barrier, polytope }
    })
}

fn small_barrier(amp: f64) -> BarrierMatrix {
    let (model, grid, vset, dt) = mechanical(&format!("{amp}*cos(1)"), 8);
    let (_, out) = MatherPolytope::build(&model, grid, &vset, dt, 1e-6).unwrap();
    let model = model.with_critical_value(-out.value);
    peierls_barrier(&model, grid, -out.value, &BarrierParams::default(), dt, &vset).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wrapping_is_idempotent_and_lands_in_unit_cube(x in prop::collection::vec(-50.0..50.0f64, 1..=2)) {
        let p = wrap_point(&x).unwrap();
        prop_assert!(p.coords().iter().all(|c| (0.0..1.0).contains(c)));
        let q = wrap_point(p.coords()).unwrap();
        prop_assert_eq!(p.coords(), q.coords());
    }

    #[test]
    fn integer_shifts_do_not_move_points(x in -5.0..5.0f64, k in -20i32..20) {
        let a = TorusPoint::new(&[x]).unwrap();
        let b = TorusPoint::new(&[x + k as f64]).unwrap();
        prop_assert!(a.distance(&b) < 1e-9);
    }

    #[test]
    fn interpolation_is_exact_at_nodes(v in values(12)) {
        let g = PeriodicGrid::new(1, 12).unwrap();
        let f = field(g, v);
        for i in 0..g.len() {
            prop_assert!((f.interpolate(&g.node(i)) - f.value(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_stays_within_range(v in values(36), x in 0.0..1.0f64, y in 0.0..1.0f64) {
        let g = PeriodicGrid::new(2, 6).unwrap();
        let f = field(g, v);
        let s = f.interpolate(&TorusPoint::new(&[x, y]).unwrap());
        prop_assert!(s >= f.min() - 1e-12 && s <= f.max() + 1e-12);
    }

    #[test]
    fn interpolation_weights_form_a_partition(x in -3.0..3.0f64) {
        let g = PeriodicGrid::new(1, 10).unwrap();
        let w = g.interpolation_weights(&TorusPoint::new(&[x]).unwrap());
        let total: f64 = w.iter().map(|(_, a)| a).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|(i, a)| i < g.len() && a >= -1e-15));
    }

    #[test]
    fn scheme_is_monotone(u in values(16), bump in prop::collection::vec(0.0..1.0f64, 16)) {
        let (model, grid, vset, dt) = mechanical("cos(1)", 16);
        let op = SemiLagrangian::perturbed(&model, grid, &vset, dt, 0.0).unwrap();
        let w: Vec<f64> = u.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let (tu, tw) = (op.apply(&u).values, op.apply(&w).values);
        prop_assert!(tu.iter().zip(&tw).all(|(a, b)| *a <= *b + 1e-12));
    }

    #[test]
    fn scheme_commutes_with_constants(u in values(16), k in -3.0..3.0f64) {
        let (model, grid, vset, dt) = mechanical("cos(1)", 16);
        let op = SemiLagrangian::perturbed(&model, grid, &vset, dt, 0.0).unwrap();
        let shifted: Vec<f64> = u.iter().map(|a| a + k).collect();
        let (tu, ts) = (op.apply(&u).values, op.apply(&shifted).values);
        prop_assert!(tu.iter().zip(&ts).all(|(a, b)| (a + k - b).abs() < 1e-10));
    }

    #[test]
    fn closedness_columns_sum_to_zero(n in 4usize..20, m in 1usize..5, d in 1usize..=2) {
        let g = PeriodicGrid::new(d, n).unwrap();
        let vs = velocity_set(2.0, 2 * m + 1, d).unwrap();
        let op = closedness_operator(&g, &vs, default_dt(&g, &vs));
        for k in 0..op.cols() {
            let s: f64 = op.column(k).map(|(_, a)| a).sum();
            prop_assert!(s.abs() < 1e-12, "column {} sums to {}", k, s);
        }
    }

    #[test]
    fn total_variation_is_a_bounded_symmetric_metric(
        a in prop::collection::vec(0.0..1.0f64, 10),
        b in prop::collection::vec(0.0..1.0f64, 10),
    ) {
        let norm = |v: &[f64]| {
            let s: f64 = v.iter().sum::<f64>().max(1e-12);
            v.iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let (a, b) = (norm(&a), norm(&b));
        let ab = tv_distance(&a, &b);
        prop_assert!((ab - tv_distance(&b, &a)).abs() < 1e-15);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!(tv_distance(&a, &a) == 0.0);
    }

    #[test]
    fn profiles_round_trip_through_display(
        terms in prop::collection::vec((-3.0..3.0f64, 0usize..3, 1i32..4), 1..4),
        x in 0.0..1.0f64,
    ) {
        let text: Vec<String> = terms
            .iter()
            .map(|(c, kind, k)| match kind {
                0 => format!("{c}"),
                1 => format!("{c}*cos({k})"),
                _ => format!("{c}*sin({k})"),
            })
            .collect();
        let p: Profile = text.join(" + ").replace("+ -", "- ").parse().unwrap();
        let q: Profile = p.to_string().parse().unwrap();
        prop_assert_eq!(p.to_string(), q.to_string());
        prop_assert!((p.value(&[x]) - q.value(&[x])).abs() < 1e-12);
    }

    #[test]
    fn configs_round_trip(n in 4usize..64, seed in any::<u64>(), lam in 0.001..1.0f64) {
        let text = format!(
            "kind = \"vanishing_discount\"\nseed = {seed}\n[model]\nname = \"mechanical\"\n\
             [grid]\nd = 1\nn = {n}\n[vset]\nvmax = 2.0\nm = 9\n[solver]\nlambdas = [{}, {lam}]\n",
            lam * 2.0
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        prop_assert_eq!(cfg.to_toml(), again.to_toml());
        prop_assert_eq!(again.seed, seed);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn barriers_satisfy_the_triangle_inequality(amp in 0.2..1.5f64) {
        let h = small_barrier(amp);
        let n = h.nodes();
        let triples: Vec<_> =
            (0..n).flat_map(|x| (0..n).flat_map(move |y| (0..n).map(move |z| (x, y, z)))).collect();
        let defect = h.triangle_defect(&triples);
        prop_assert!(defect <= 1e-6, "defect {}", defect);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn selection_operator_is_nonexpansive(a in values(16), b in values(16)) {
        let case = selection_case();
        let g = *case.polytope.grid();
        let check = check_operator_lipschitz(&case.sigma, &field(g, a), &field(g, b), &case.barrier, &case.polytope)
            .unwrap();
        prop_assert!(check.pass, "{} > {}", check.lhs, check.rhs);
    }
}
