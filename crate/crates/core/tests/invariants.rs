use ndarray::{Array2, Array3};
use proptest::prelude::*;

use epistrata::mixing::{
    geo_weights_gravity, geo_weights_power_decay, normalize_contact, EigenDeformation,
};
use epistrata::oracle::{conditional_covariance, conditional_mean, conditional_variance};
use epistrata::panel::{adjacency_orders, build_distance_matrix, grid_adjacency, Tract, TractTable};
use epistrata::ContactMatrix;

fn symmetric(n: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(0.05f64..20.0, n * (n + 1) / 2).prop_map(move |v| {
        ContactMatrix::from_lower_triangle(n, &v).unwrap().matrix().clone()
    })
}

/// Strictly diagonally dominant, hence positive definite.
fn dominant(n: usize) -> impl Strategy<Value = Array2<f64>> {
    symmetric(n).prop_map(|mut c| {
        for a in 0..c.nrows() {
            let off: f64 = c.row(a).sum() - c[(a, a)];
            c[(a, a)] += off;
        }
        c
    })
}

fn col_sums(w: &Array2<f64>) -> Vec<f64> {
    w.columns().into_iter().map(|c| c.sum()).collect()
}

fn stochastic(n: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(0.01f64..1.0, n * n).prop_map(move |v| {
        let mut w = Array2::from_shape_vec((n, n), v).unwrap();
        let s = col_sums(&w);
        for ((_, c), x) in w.indexed_iter_mut() {
            *x /= s[c];
        }
        w
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn contact_normalization_is_column_stochastic_and_scale_free(
        c in (2usize..6).prop_flat_map(symmetric),
        k in 0.01f64..100.0,
    ) {
        let w = normalize_contact(&ContactMatrix::new(c.clone()).unwrap());
        for s in col_sums(w.matrix()) {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        let scaled = normalize_contact(&ContactMatrix::new(c * k).unwrap());
        for (a, b) in w.matrix().iter().zip(scaled.matrix()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn power_decay_keeps_more_at_home_as_decay_grows(
        rows in 1usize..4, cols in 2usize..5, r1 in 0.0f64..5.0, dr in 0.01f64..3.0,
    ) {
        let orders = adjacency_orders(&grid_adjacency(rows, cols)).unwrap();
        let lo = geo_weights_power_decay(&orders, r1).unwrap();
        let hi = geo_weights_power_decay(&orders, r1 + dr).unwrap();
        for s in col_sums(hi.matrix()) {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        for g in 0..orders.nrows() {
            prop_assert!(hi.matrix()[(g, g)] >= lo.matrix()[(g, g)] - 1e-15);
        }
    }

    #[test]
    fn gravity_weights_are_column_stochastic(
        n in 2usize..5,
        seed in prop::collection::vec(0.1f64..10.0, 25),
        tau in prop::collection::vec(0.1f64..5.0, 5),
        rho in prop::collection::vec(0.1f64..3.0, 5),
    ) {
        let d = Array2::from_shape_fn((n, n), |(a, b)| {
            if a == b { seed[a] * 0.1 } else { seed[a.min(b) * 5 + a.max(b)] }
        });
        let w = geo_weights_gravity(&d, &tau[..n], &rho[..n]).unwrap();
        for s in col_sums(w.matrix()) {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn eigen_weights_at_unit_power_match_normalized_contact(c in (2usize..5).prop_flat_map(dominant)) {
        let e = EigenDeformation::new(&c).unwrap();
        let w = e.weights(1.0).unwrap();
        let direct = normalize_contact(&ContactMatrix::new(c).unwrap());
        for (a, b) in w.matrix().iter().zip(direct.matrix()) {
            prop_assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn conditional_moments_are_well_ordered(
        wg in stochastic(2),
        wi in stochastic(3),
        y in prop::collection::vec(0u32..50, 6),
        phi in prop::collection::vec(0.01f64..2.0, 6),
        delta in prop::collection::vec(0.01f64..5.0, 6),
        theta in 0.0f64..20.0,
        psi in 0.0f64..3.0,
    ) {
        let y = Array2::from_shape_vec((2, 3), y.into_iter().map(f64::from).collect()).unwrap();
        let phi = Array2::from_shape_vec((2, 3), phi).unwrap();
        let delta = Array2::from_shape_vec((2, 3), delta).unwrap();
        let mu = conditional_mean(&delta, &phi, &wg, &wi, &y, 1.0);
        let var = conditional_variance(&delta, &phi, &wg, &wi, &y, 1.0, theta, psi);
        for (m, v) in mu.iter().zip(&var) {
            prop_assert!(*v >= *m * (1.0 + psi * m) * (1.0 - 1e-12));
        }
        for a in 0..6 {
            for b in (a + 1)..6 {
                let c = conditional_covariance((a / 3, a % 3), (b / 3, b % 3), &phi, &wg, &wi, &y, 1.0, theta);
                prop_assert!(c >= 0.0);
            }
        }
    }

    #[test]
    fn distance_matrix_is_symmetric_and_order_free(
        pts in prop::collection::vec((0usize..3, 40.0f64..41.0, -74.5f64..-73.5, 1.0f64..1000.0), 6..20),
        rot in 0usize..20,
    ) {
        prop_assume!((0..3).all(|p| pts.iter().filter(|t| t.0 == p).count() >= 1));
        let tracts: Vec<Tract> = pts
            .iter()
            .map(|&(p, lat, lon, pop)| Tract { puma: format!("P{p}"), lat, lon, pop })
            .collect();
        let (labels, d) = build_distance_matrix(&TractTable::new(tracts.clone()).unwrap()).unwrap();
        prop_assert_eq!(labels.len(), 3);
        for a in 0..3 {
            for b in 0..3 {
                prop_assert!((d[(a, b)] - d[(b, a)]).abs() <= 1e-9 * d[(a, b)].abs().max(1.0));
            }
        }
        let mut shuffled = tracts;
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let (_, d2) = build_distance_matrix(&TractTable::new(shuffled).unwrap()).unwrap();
        for (x, y) in d.iter().zip(&d2) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn panel_and_contact_files_round_trip(
        counts in prop::collection::vec(0u64..500, 3 * 2 * 2),
        pops in prop::collection::vec(100u64..10_000, 4),
        tri in prop::collection::vec(0.01f64..10.0, 3),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let counts = Array3::from_shape_vec((3, 2, 2), counts).unwrap();
        let pops = Array2::from_shape_vec((2, 2), pops).unwrap();
        let panel = epistrata::PanelData::from_counts(counts, pops, 51).unwrap();
        panel.save(dir.path()).unwrap();
        prop_assert_eq!(epistrata::PanelData::load_dir(dir.path()).unwrap(), panel);

        let c = ContactMatrix::from_lower_triangle(2, &tri).unwrap();
        let p = dir.path().join("contact.csv");
        c.save(&p, &["young".into(), "old".into()]).unwrap();
        let (labels, back) = ContactMatrix::load(&p).unwrap();
        prop_assert_eq!(labels, vec!["young".to_string(), "old".to_string()]);
        prop_assert_eq!(back, c);
    }
}
