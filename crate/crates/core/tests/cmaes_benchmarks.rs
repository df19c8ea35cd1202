use boxdeform::cmaes::CmaState;

fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
        .sum()
}

/// Runs until `target` is reached or the evaluation budget is spent.
fn run(f: fn(&[f64]) -> f64, mean0: &[f64], sigma0: f64, seed: u64, budget: usize, target: f64) -> (CmaState, usize) {
    let mut s = CmaState::new(mean0, sigma0, seed, None).unwrap();
    while s.evaluations() + s.population_size() <= budget {
        let c = s.ask();
        let fit: Vec<f64> = c.iter().map(|x| f(x)).collect();
        s.tell(&c, &fit).unwrap();
        if s.best().unwrap().1 < target {
            break;
        }
    }
    let evals = s.evaluations();
    (s, evals)
}

#[test]
fn sphere_six_dimensions() {
    for seed in 0..5 {
        let (s, evals) = run(sphere, &[3.0; 6], 1.0, seed, 5000, 1e-10);
        let (x, f) = s.best().unwrap();
        assert!(f < 1e-10, "seed {seed}: {f} after {evals}");
        assert!(sphere(x).sqrt() < 1e-5);
    }
}

#[test]
fn rosenbrock_four_dimensions() {
    for seed in 0..5 {
        let (s, evals) = run(rosenbrock, &[0.0; 4], 0.5, seed, 30_000, 1e-6);
        let f = s.best().unwrap().1;
        assert!(f < 1e-6, "seed {seed}: {f} after {evals}");
    }
}

#[test]
fn same_seed_same_trajectory() {
    let (a, _) = run(rosenbrock, &[0.0; 4], 0.5, 17, 3000, 0.0);
    let (b, _) = run(rosenbrock, &[0.0; 4], 0.5, 17, 3000, 0.0);
    assert_eq!(a.distribution(), b.distribution());
    assert_eq!(a.best().unwrap().1.to_bits(), b.best().unwrap().1.to_bits());
}

#[test]
fn monotone_fitness_transform_leaves_state_unchanged() {
    let mut a = CmaState::new(&[2.0; 5], 0.8, 3, None).unwrap();
    let mut b = a.clone();
    for _ in 0..60 {
        let ca = a.ask();
        let cb = b.ask();
        assert_eq!(ca, cb);
        let fa: Vec<f64> = ca.iter().map(|x| rosenbrock(x)).collect();
        let fb: Vec<f64> = fa.iter().map(|f| (f + 1.0).ln() * 7.0 - 3.0).collect();
        a.tell(&ca, &fa).unwrap();
        b.tell(&cb, &fb).unwrap();
    }
    assert_eq!(a.distribution(), b.distribution());
}
