use reflow_core::metrics::{assignment, w1_1d};

fn pool() -> Vec<f64> {
    (0..20).map(|i| ((i * 7) % 20) as f64 * 0.37 - 3.1 + if i % 3 == 0 { 0.05 } else { 0.0 }).collect()
}

fn subsets4(n: usize) -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                for d in c + 1..n {
                    out.push([a, b, c, d]);
                }
            }
        }
    }
    out
}

/// Minimum over all 24 matchings of the mean absolute difference.
fn brute_w1(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                for l in 0..4 {
                    if i == j || i == k || i == l || j == k || j == l || k == l {
                        continue;
                    }
                    let c = (a[0] - b[i]).abs() + (a[1] - b[j]).abs() + (a[2] - b[k]).abs() + (a[3] - b[l]).abs();
                    best = best.min(c / 4.0);
                }
            }
        }
    }
    best
}

#[test]
fn w1_matches_brute_force_on_sampled_pairs() {
    let p = pool();
    let sets: Vec<[f64; 4]> = subsets4(20).iter().map(|s| s.map(|i| p[i])).collect();
    for (i, a) in sets.iter().enumerate().step_by(37) {
        for b in sets.iter().skip(i % 11).step_by(53) {
            let w = w1_1d(a, b).unwrap();
            assert!((w - brute_w1(a, b)).abs() < 1e-12);
        }
    }
}

#[test]
fn hungarian_agrees_with_brute_force() {
    let p = pool();
    let sets: Vec<[f64; 4]> = subsets4(20).iter().map(|s| s.map(|i| p[i])).collect();
    for a in sets.iter().step_by(101) {
        for b in sets.iter().step_by(97) {
            let cost: Vec<f64> = (0..16).map(|k| (a[k / 4] - b[k % 4]).abs()).collect();
            let (c, _) = assignment(&cost, 4).unwrap();
            assert!((c / 4.0 - brute_w1(a, b)).abs() < 1e-12);
        }
    }
}

#[test]
fn w1_metric_axioms_on_pool() {
    let p = pool();
    let sets: Vec<[f64; 4]> = subsets4(20).iter().step_by(29).map(|s| s.map(|i| p[i])).collect();
    let n = sets.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] = w1_1d(&sets[i], &sets[j]).unwrap();
        }
    }
    for i in 0..n {
        assert_eq!(d[i * n + i], 0.0);
        for j in 0..n {
            assert_eq!(d[i * n + j], d[j * n + i]);
            if i != j {
                assert!(d[i * n + j] > 0.0);
            }
            for k in 0..n {
                assert!(d[i * n + k] <= d[i * n + j] + d[j * n + k] + 1e-12);
            }
        }
    }
    let a = [1.0, 2.0, 2.0, 3.0];
    let b = [3.0, 2.0, 1.0, 2.0];
    assert_eq!(w1_1d(&a, &b).unwrap(), 0.0);
}
