use ve_core::sim::{f_test, generate, power_study, SimDesign, TABLE_RATIOS};
use ve_core::{FullMatch, Stratum, Version, VersionData};

fn swap_versions(fm: &FullMatch) -> FullMatch {
    let strata = fm
        .strata()
        .iter()
        .map(|s| Stratum {
            set_id: s.set_id,
            members: s
                .members
                .iter()
                .map(|u| {
                    let mut u = u.clone();
                    u.version = u.version.map(|v| if v == Version::A { Version::B } else { Version::A });
                    u
                })
                .collect(),
        })
        .collect();
    FullMatch::new(strata).unwrap()
}

fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter()
        .chain(&b)
        .map(|&x| {
            let fa = a.partition_point(|&v| v <= x) as f64 / a.len() as f64;
            let fb = b.partition_point(|&v| v <= x) as f64 / b.len() as f64;
            (fa - fb).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn versions_look_alike_without_a_shift() {
    let d = SimDesign { seed: 2, ..SimDesign::default() };
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for rep in 0..20 {
        for u in generate(&d, rep).unwrap().all.members() {
            match u.version {
                Some(Version::A) => a.push(u.outcome),
                Some(Version::B) => b.push(u.outcome),
                None => {}
            }
        }
    }
    let n = a.len() as f64;
    // two-sample KS critical value at level 0.001
    let critical = 1.95 * (2.0 / n).sqrt();
    assert!(ks_statistic(a, b) < critical);
}

#[test]
fn f_ignores_version_labels() {
    let d = SimDesign { tau_b: 0.3, delta: 0.2, seed: 5, ..SimDesign::default() };
    for rep in 0..10 {
        let v = generate(&d, rep).unwrap();
        let swapped = VersionData::new(swap_versions(&v.all), v.only_b.clone(), v.only_a.clone()).unwrap();
        let (f1, f2) = (f_test(&v, 0.05).unwrap(), f_test(&swapped, 0.05).unwrap());
        assert!((f1.f - f2.f).abs() < 1e-9 * f1.f.max(1.0));
        assert_eq!(f1.reject, f2.reject);
    }
}

#[test]
fn study_is_independent_of_thread_count() {
    let d = SimDesign { tau_b: 0.25, reps: 60, seed: 99, ..SimDesign::default() };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| power_study(&d).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn version_method_has_level_under_the_null() {
    let d = SimDesign { reps: 400, seed: 31, ..SimDesign::default() };
    let r = power_study(&d).unwrap();
    let se = (0.05f64 * 0.95 / 400.0).sqrt();
    assert!((r.power_version.estimate - 0.05).abs() < 3.0 * se, "{:?}", r.power_version);
    assert!((r.power_f.estimate - 0.05).abs() < 3.0 * se, "{:?}", r.power_f);
    assert!(r.coverage_ic.unwrap().estimate >= 0.95 - 3.0 * se);
}

#[test]
fn power_falls_as_version_a_weakens() {
    let reports: Vec<_> = TABLE_RATIOS
        .iter()
        .map(|&ratio| power_study(&SimDesign { reps: 300, seed: 12, ..SimDesign::with_ratio(0.4, ratio) }).unwrap())
        .collect();
    for w in reports.windows(2) {
        let (p, q) = (w[0].power_version, w[1].power_version);
        let band = 2.0 * (p.mc_se.powi(2) + q.mc_se.powi(2)).sqrt();
        assert!(q.estimate <= p.estimate + band, "{} then {}", p.estimate, q.estimate);
    }
}
