use std::collections::{HashMap, HashSet};

use proptest::prelude::*;
use rankiv::datamodel::{load_dataset, write_dataset, Dataset, EdgeObservation, Provenance, SchemaMap};
use rankiv::estimator::{cluster_cov, fit_2sls, fit_ols};
use rankiv::linalg::Matrix;
use rankiv::prepare::{aggregate_sessions, sample_one_per_request, DesignMatrix};

fn edge() -> impl Strategy<Value = EdgeObservation> {
    (
        1u64..15,
        1u64..30,
        1u32..11,
        0u8..2,
        proptest::option::of(0u32..5),
        proptest::option::of(0.0f64..1.0),
        proptest::option::of(0u32..5),
    )
        .prop_map(|(request, item, position, outcome, reason, score, depth)| {
            EdgeObservation {
                request_id: request,
                // One user per request keeps arms consistent within users.
                user_id: request + 1000,
                item_id: item,
                position,
                outcome,
                arm: if request % 2 == 0 { "treatment" } else { "control" }.into(),
                reason: reason.map(|r| format!("r{r:02}")),
                relevance_score: score,
                session_depth: depth.map(|d| position + d),
            }
        })
}

fn dataset() -> impl Strategy<Value = Vec<EdgeObservation>> {
    proptest::collection::vec(edge(), 1..60)
}

/// A random IV design with `n` rows in `g` clusters.
fn design() -> impl Strategy<Value = (Vec<[f64; 4]>, u64)> {
    (
        proptest::collection::vec(
            (any::<bool>(), -3.0f64..3.0, -3.0f64..3.0, -1.0f64..1.0),
            40..120,
        ),
        3u64..12,
    )
        .prop_map(|(rows, g)| {
            let rows = rows
                .into_iter()
                .map(|(z, u, x, e)| {
                    let z = f64::from(u8::from(z));
                    let w = 1.0 + 1.5 * z + 0.5 * u + 0.2 * x;
                    let y = 0.3 - 0.2 * w + 0.4 * x + u + e;
                    [y, w, z, x]
                })
                .collect();
            (rows, g)
        })
}

fn build(rows: &[[f64; 4]], g: u64, x_scale: f64, x_shift: f64) -> DesignMatrix {
    let col = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<_>>();
    DesignMatrix::from_parts(
        "y",
        col(0),
        vec![("w".into(), col(1))],
        vec![("z".into(), col(2))],
        vec![(
            "x".into(),
            col(3).iter().map(|x| x * x_scale + x_shift).collect(),
        )],
        (0..rows.len() as u64).map(|i| i % g).collect(),
    )
    .unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip(rows in dataset()) {
        let ds = Dataset::from_rows(&rows, Provenance::new("prop"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path, &SchemaMap::default()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn sampling_keeps_one_row_per_request(rows in dataset(), seed in any::<u64>()) {
        let ds = Dataset::from_rows(&rows, Provenance::new("prop"));
        let s = sample_one_per_request(&ds, seed);
        prop_assert_eq!(s.len(), ds.n_requests());
        let ids: HashSet<u64> = s.request_ids().iter().copied().collect();
        prop_assert_eq!(ids.len(), s.len());
        let all: Vec<EdgeObservation> = ds.rows().collect();
        for r in s.rows() {
            prop_assert!(all.contains(&r));
        }
    }

    #[test]
    fn sampling_ignores_row_order(rows in dataset(), seed in any::<u64>(), shuffle in any::<u64>()) {
        let mut permuted = rows.clone();
        let mut rng = rankiv::rng::SplitMix64::new(shuffle);
        for i in (1..permuted.len()).rev() {
            permuted.swap(i, rng.below(i as u64 + 1) as usize);
        }
        let a = sample_one_per_request(&Dataset::from_rows(&rows, Provenance::new("a")), seed);
        let b = sample_one_per_request(&Dataset::from_rows(&permuted, Provenance::new("b")), seed);
        let mut a: Vec<String> = a.rows().map(|r| format!("{r:?}")).collect();
        let mut b: Vec<String> = b.rows().map(|r| format!("{r:?}")).collect();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn sessions_conserve_outcomes(rows in dataset(), cut in 1u32..10) {
        let ds = Dataset::from_rows(&rows, Provenance::new("prop"));
        let s = aggregate_sessions(&ds, cut);
        let edges: u32 = ds.outcomes().iter().map(|&o| u32::from(o)).sum();
        let sessions: u32 = s.rows.iter().map(|r| r.invite_total).sum();
        prop_assert_eq!(edges, sessions);
        let mut per_request: HashMap<u64, u32> = HashMap::new();
        for &r in ds.request_ids() {
            *per_request.entry(r).or_default() += 1;
        }
        for r in &s.rows {
            prop_assert_eq!(r.n_top_spot + r.n_bottom_spot, per_request[&r.request_id]);
        }
    }

    #[test]
    fn coefficients_ignore_row_order((rows, g) in design(), shuffle in any::<u64>()) {
        // Clusters follow the rows they label.
        let a = fit_2sls(&build(&rows, g, 1.0, 0.0)).unwrap();
        let labelled: Vec<([f64; 4], u64)> = rows.iter().copied().zip((0..rows.len() as u64).map(|i| i % g)).collect();
        let mut shuffled = labelled;
        let mut rng = rankiv::rng::SplitMix64::new(shuffle);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.below(i as u64 + 1) as usize);
        }
        let mut d = build(&shuffled.iter().map(|(r, _)| *r).collect::<Vec<_>>(), g, 1.0, 0.0);
        d.clusters = shuffled.iter().map(|(_, c)| *c).collect();
        let b = fit_2sls(&d).unwrap();
        for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
            prop_assert!(close(*x, *y, 1e-10), "{} vs {}", x, y);
        }
        for (x, y) in a.std_errors.iter().zip(&b.std_errors) {
            prop_assert!(close(*x, *y, 1e-8), "{} vs {}", x, y);
        }
    }

    #[test]
    fn affine_rescaling_of_a_control((rows, g) in design(), scale in 0.01f64..100.0, shift in -50.0f64..50.0) {
        let a = fit_2sls(&build(&rows, g, 1.0, 0.0)).unwrap();
        let b = fit_2sls(&build(&rows, g, scale, shift)).unwrap();
        prop_assert!(close(a.coefficients[0], b.coefficients[0], 1e-9));
        prop_assert!(close(a.coefficients[1], b.coefficients[1] * scale, 1e-9));
        let fitted = |f: &rankiv::FitResult, d: &DesignMatrix| {
            Matrix::hstack(&[&d.endogenous, &d.controls]).matvec(&f.coefficients)
        };
        let fa = fitted(&a, &build(&rows, g, 1.0, 0.0));
        let fb = fitted(&b, &build(&rows, g, scale, shift));
        for (x, y) in fa.iter().zip(&fb) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn duplicated_clusters_leave_coefficients((rows, g) in design()) {
        let a = fit_ols(&build(&rows, g, 1.0, 0.0)).unwrap();
        let twice: Vec<[f64; 4]> = rows.iter().chain(&rows).copied().collect();
        let mut d = build(&twice, g, 1.0, 0.0);
        let n = rows.len() as u64;
        d.clusters = (0..2 * n).map(|i| if i < n { i % g } else { g + (i - n) % g }).collect();
        let b = fit_ols(&d).unwrap();
        for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
            prop_assert!(close(*x, *y, 1e-10));
        }
    }

    #[test]
    fn covariance_is_symmetric_psd((rows, g) in design()) {
        let d = build(&rows, g, 1.0, 0.0);
        let m = Matrix::hstack(&[&d.endogenous, &d.controls]);
        let u: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let v = cluster_cov(&m, &u, &d.clusters).unwrap();
        let k = m.ncols();
        for a in 0..k {
            prop_assert!(v[(a, a)] >= 0.0);
            for b in 0..k {
                prop_assert_eq!(v[(a, b)], v[(b, a)]);
            }
        }
        // x' V x >= 0 along a few directions.
        for dir in [[1.0, -1.0, 0.5], [0.3, 0.3, -2.0], [-1.0, 2.0, 1.0]] {
            let mut q = 0.0;
            for a in 0..k {
                for b in 0..k {
                    q += dir[a] * v[(a, b)] * dir[b];
                }
            }
            prop_assert!(q >= -1e-12 * v[(0, 0)].abs().max(1e-300));
        }
    }
}
