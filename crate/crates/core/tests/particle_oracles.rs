use midlmc::particle_system::simulate_law;
use midlmc::randomness::draw_bundle;
use midlmc::{make_kuramoto, Model, StreamKey, StreamRole};

fn model() -> Model {
    make_kuramoto(0.4, 1.0, 0.0, 0.2_f64.sqrt(), 0.2).unwrap()
}

/// Plain `O(P²)` Euler–Maruyama for the Kuramoto system, written from the
/// model equations.
fn brute_force(x0: &[f64], xi: &[f64], incs: &[f64], steps: usize, sigma: f64) -> Vec<Vec<f64>> {
    let p = x0.len();
    let dt = 1.0 / steps as f64;
    let mut out = vec![x0.to_vec()];
    for n in 0..steps {
        let x = out[n].clone();
        let next = (0..p)
            .map(|i| {
                let k: f64 = x.iter().map(|y| (x[i] - y).sin()).sum::<f64>() / p as f64;
                x[i] + (xi[i] + k) * dt + sigma * incs[i * steps + n]
            })
            .collect();
        out.push(next);
    }
    out
}

#[test]
fn particle_system_matches_brute_force() {
    let m = model();
    for (seed, p, n) in [(1u64, 7usize, 8usize), (2, 20, 16), (3, 40, 5)] {
        let b = draw_bundle(&StreamKey::new(seed, StreamRole::OuterLaw), &m, p, n).unwrap();
        let law = simulate_law(&m, &b, p, n).unwrap();
        let reference = brute_force(&b.initials, &b.params, &b.wiener_incs, n, 0.4);
        for (k, row) in reference.iter().enumerate() {
            for (i, &x) in row.iter().enumerate() {
                assert!((law.state(k, i)[0] - x).abs() < 1e-12, "seed {seed} step {k} particle {i}");
            }
        }
    }
}

#[test]
fn naive_kernel_path_matches_brute_force() {
    let mut m = model();
    m.use_separable = false;
    let b = draw_bundle(&StreamKey::new(9, StreamRole::OuterLaw), &m, 12, 10).unwrap();
    let law = simulate_law(&m, &b, 12, 10).unwrap();
    let reference = brute_force(&b.initials, &b.params, &b.wiener_incs, 10, 0.4);
    for i in 0..12 {
        assert!((law.state(10, i)[0] - reference[10][i]).abs() < 1e-13);
    }
}

#[test]
fn mean_position_is_zero_by_symmetry() {
    // The law is symmetric under x -> -x, so the particle mean at T is
    // centred; 400 independent systems of 10 particles.
    let m = model();
    let finals: Vec<f64> = (0..400u64)
        .map(|s| {
            let b = draw_bundle(&StreamKey::new(s, StreamRole::OuterLaw), &m, 10, 16).unwrap();
            let law = simulate_law(&m, &b, 10, 16).unwrap();
            law.mean_at(16, 0)
        })
        .collect();
    let n = finals.len() as f64;
    let mean = finals.iter().sum::<f64>() / n;
    let sd = (finals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() < 3.0 * sd / n.sqrt(), "mean {mean}, se {}", sd / n.sqrt());
}

#[test]
fn coupled_time_levels_converge_strongly() {
    // Coarse paths reuse summed fine increments. With additive noise the
    // scheme has strong order one, so the mean squared gap between levels
    // should drop by about τ² = 4 per level.
    let m = model();
    let p = 10;
    let gaps: Vec<f64> = [4usize, 8, 16, 32]
        .iter()
        .map(|&n| {
            let mut acc = 0.0;
            for s in 0..200u64 {
                let b = draw_bundle(&StreamKey::new(s, StreamRole::OuterLaw), &m, p, 2 * n).unwrap();
                let fine = simulate_law(&m, &b, p, 2 * n).unwrap();
                let coarse = simulate_law(&m, &b, p, n).unwrap();
                for i in 0..p {
                    acc += (fine.state(2 * n, i)[0] - coarse.state(n, i)[0]).powi(2);
                }
            }
            acc / (200 * p) as f64
        })
        .collect();
    for w in gaps.windows(2) {
        let ratio = w[0] / w[1];
        assert!((2.5..6.5).contains(&ratio), "gaps {gaps:?}");
    }
}
