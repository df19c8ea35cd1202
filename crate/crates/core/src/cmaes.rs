//! (μ/μ_w, λ)-CMA-ES with an ask/tell interface.
//!
//! Strategy constants, cumulative step-size adaptation and the rank-one plus
//! rank-μ covariance update follow the standard formulation. Sampling uses a
//! seeded ChaCha stream so that a seed and a fitness function fully
//! determine a run.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

pub const DEFAULT_SIGMA0: f64 = 0.3;
pub const MAX_CONDITION: f64 = 1e14;

#[derive(Debug, Error, PartialEq)]
pub enum CmaError {
    #[error("dimension must be at least 1")]
    Dimension,
    #[error("initial step size must be positive and finite, got {0}")]
    Sigma(f64),
    #[error("population size must be at least 2, got {0}")]
    Population(usize),
    #[error("initial mean has {actual} entries, expected {expected}")]
    MeanLength { expected: usize, actual: usize },
    #[error("expected {expected} fitness values, got {actual}")]
    FitnessCount { expected: usize, actual: usize },
    #[error("no candidates evaluated yet")]
    NoEvaluations,
}

#[derive(Debug, Clone)]
pub struct CmaState {
    dim: usize,
    lambda: usize,
    mu: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
    eigen_interval: usize,

    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    basis: DMatrix<f64>,
    axis_scales: DVector<f64>,
    p_sigma: DVector<f64>,
    p_c: DVector<f64>,
    generation: usize,
    evaluations: usize,
    last_eigen: usize,
    best: Option<(Vec<f64>, f64)>,
    rng: ChaCha8Rng,
}

impl CmaState {
    /// `lambda` defaults to `4 + ⌊3 ln n⌋`.
    pub fn new(
        mean0: &[f64],
        sigma0: f64,
        seed: u64,
        lambda: Option<usize>,
    ) -> Result<Self, CmaError> {
        let n = mean0.len();
        if n == 0 {
            return Err(CmaError::Dimension);
        }
        if !(sigma0.is_finite() && sigma0 > 0.0) {
            return Err(CmaError::Sigma(sigma0));
        }
        let lambda = lambda.unwrap_or_else(|| default_population(n));
        if lambda < 2 {
            return Err(CmaError::Population(lambda));
        }
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let nf = n as f64;
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1)
            .min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        let eigen_interval = ((1.0 / (10.0 * nf * (c_1 + c_mu))).floor() as usize).max(1);

        Ok(CmaState {
            dim: n,
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            eigen_interval,
            mean: DVector::from_column_slice(mean0),
            sigma: sigma0,
            cov: DMatrix::identity(n, n),
            basis: DMatrix::identity(n, n),
            axis_scales: DVector::from_element(n, 1.0),
            p_sigma: DVector::zeros(n),
            p_c: DVector::zeros(n),
            generation: 0,
            evaluations: 0,
            last_eigen: 0,
            best: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn population_size(&self) -> usize {
        self.lambda
    }

    pub fn parents(&self) -> usize {
        self.mu
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn eigen_interval(&self) -> usize {
        self.eigen_interval
    }

    /// Draws `λ` candidates `m + σ·B·D·z`.
    pub fn ask(&mut self) -> Vec<Vec<f64>> {
        (0..self.lambda)
            .map(|_| {
                let z = DVector::from_iterator(
                    self.dim,
                    (0..self.dim).map(|_| StandardNormal.sample(&mut self.rng)),
                );
                let y = &self.basis * z.component_mul(&self.axis_scales);
                (&self.mean + y * self.sigma).as_slice().to_vec()
            })
            .collect()
    }

    /// Updates the distribution from evaluated candidates (lower is better).
    /// Non-finite fitness ranks last; ties keep candidate order.
    pub fn tell(&mut self, candidates: &[Vec<f64>], fitness: &[f64]) -> Result<(), CmaError> {
        if fitness.len() != candidates.len() || candidates.len() != self.lambda {
            return Err(CmaError::FitnessCount {
                expected: self.lambda,
                actual: fitness.len().min(candidates.len()),
            });
        }
        let mut order: Vec<usize> = (0..self.lambda).collect();
        order.sort_by(|&a, &b| {
            let (fa, fb) = (fitness[a], fitness[b]);
            match (fa.is_finite(), fb.is_finite()) {
                (true, true) => fa.total_cmp(&fb),
                (true, false) => std::cmp::Ordering::Less,
                (false, true) => std::cmp::Ordering::Greater,
                (false, false) => std::cmp::Ordering::Equal,
            }
            .then(a.cmp(&b))
        });

        let top = order[0];
        if fitness[top].is_finite()
            && self.best.as_ref().is_none_or(|(_, f)| fitness[top] < *f)
        {
            self.best = Some((candidates[top].clone(), fitness[top]));
        }

        let steps: Vec<DVector<f64>> = order[..self.mu]
            .iter()
            .map(|&k| (DVector::from_column_slice(&candidates[k]) - &self.mean) / self.sigma)
            .collect();
        let mut y_w = DVector::zeros(self.dim);
        for (w, y) in self.weights.iter().zip(&steps) {
            y_w += y * *w;
        }
        self.mean += &y_w * self.sigma;

        // C^{-1/2} y_w = B D^{-1} Bᵀ y_w
        let inv_sqrt_y = &self.basis
            * (self.basis.transpose() * &y_w).component_div(&self.axis_scales);
        self.p_sigma = &self.p_sigma * (1.0 - self.c_sigma)
            + inv_sqrt_y * (self.c_sigma * (2.0 - self.c_sigma) * self.mu_eff).sqrt();

        self.generation += 1;
        self.evaluations += self.lambda;

        let ps_norm = self.p_sigma.norm();
        let decay = 1.0 - (1.0 - self.c_sigma).powi(2 * self.generation as i32);
        let h_sigma = ps_norm / decay.sqrt() < (1.4 + 2.0 / (self.dim as f64 + 1.0)) * self.chi_n;
        let h = if h_sigma { 1.0 } else { 0.0 };

        self.p_c = &self.p_c * (1.0 - self.c_c)
            + &y_w * (h * (self.c_c * (2.0 - self.c_c) * self.mu_eff).sqrt());

        let mut rank_mu = DMatrix::zeros(self.dim, self.dim);
        for (w, y) in self.weights.iter().zip(&steps) {
            rank_mu += y * y.transpose() * *w;
        }
        let old_weight = 1.0 - self.c_1 - self.c_mu
            + (1.0 - h) * self.c_1 * self.c_c * (2.0 - self.c_c);
        self.cov = &self.cov * old_weight
            + &self.p_c * self.p_c.transpose() * self.c_1
            + rank_mu * self.c_mu;

        self.sigma *= ((self.c_sigma / self.d_sigma) * (ps_norm / self.chi_n - 1.0)).exp();

        if self.generation - self.last_eigen >= self.eigen_interval {
            self.refresh_eigen();
        }
        Ok(())
    }

    fn refresh_eigen(&mut self) {
        self.last_eigen = self.generation;
        // Enforce exact symmetry before decomposing.
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let mut values = eig.eigenvalues.clone();
        let max = values.max();
        let floor = max / MAX_CONDITION;
        if values.iter().any(|&v| v < floor) {
            log::warn!("covariance condition number exceeds {MAX_CONDITION:e}; clamping");
            values.apply(|v| *v = v.max(floor));
            self.cov = &eig.eigenvectors
                * DMatrix::from_diagonal(&values)
                * eig.eigenvectors.transpose();
        } else {
            self.cov = (&self.cov + self.cov.transpose()) * 0.5;
        }
        self.basis = eig.eigenvectors;
        self.axis_scales = values.map(f64::sqrt);
    }

    /// Eigenvalues of the covariance used for sampling.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.axis_scales.iter().map(|d| d * d).collect()
    }

    /// Best-ever candidate and fitness.
    pub fn best(&self) -> Result<(&[f64], f64), CmaError> {
        self.best
            .as_ref()
            .map(|(x, f)| (x.as_slice(), *f))
            .ok_or(CmaError::NoEvaluations)
    }

    /// Distribution state without the best-ever record, for comparing runs.
    pub fn distribution(&self) -> (Vec<f64>, f64, Vec<f64>, Vec<f64>, Vec<f64>) {
        (
            self.mean.as_slice().to_vec(),
            self.sigma,
            self.cov.as_slice().to_vec(),
            self.p_sigma.as_slice().to_vec(),
            self.p_c.as_slice().to_vec(),
        )
    }
}

pub fn default_population(n: usize) -> usize {
    4 + (3.0 * (n as f64).ln()).floor() as usize
}

/// Log-space box bounds on scale parameters: `decode(x) = exp(clamp(x))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundedEncoding {
    pub min_scale: f64,
    pub max_scale: f64,
}

impl Default for BoundedEncoding {
    fn default() -> Self {
        BoundedEncoding {
            min_scale: 1.0 / 3.0,
            max_scale: 3.0,
        }
    }
}

impl BoundedEncoding {
    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.min_scale.ln(), self.max_scale.ln())
    }

    pub fn decode(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| self.clamp(v).exp()).collect()
    }

    pub fn encode(&self, scales: &[f64]) -> Vec<f64> {
        scales
            .iter()
            .map(|&s| s.clamp(self.min_scale, self.max_scale).ln())
            .collect()
    }
}

/// Stopping rules for [`minimize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Termination {
    pub max_generations: usize,
    /// Stop when the best fitness improved by less than `stall_tolerance`
    /// over the last `stall_generations` generations.
    pub stall_generations: usize,
    pub stall_tolerance: f64,
}

impl Default for Termination {
    fn default() -> Self {
        Termination {
            max_generations: 150,
            stall_generations: 20,
            stall_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub best: Vec<f64>,
    pub best_fitness: f64,
    pub generations: usize,
    pub trace: Vec<TraceRow>,
}

/// Runs ask/evaluate/tell until a stopping rule fires. `evaluate` scores a
/// whole population at once so callers can parallelize.
pub fn minimize<E, F>(state: &mut CmaState, termination: &Termination, mut evaluate: F) -> Result<Outcome, E>
where
    F: FnMut(&[Vec<f64>]) -> Result<Vec<f64>, E>,
{
    let mut trace = Vec::new();
    let mut history: Vec<f64> = Vec::new();
    for _ in 0..termination.max_generations {
        let candidates = state.ask();
        let fitness = evaluate(&candidates)?;
        state
            .tell(&candidates, &fitness)
            .expect("population size matches");
        let best = state.best().map(|(_, f)| f).unwrap_or(f64::INFINITY);
        let finite: Vec<f64> = fitness.iter().copied().filter(|f| f.is_finite()).collect();
        let mean_fitness = if finite.is_empty() {
            f64::NAN
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        trace.push(TraceRow {
            generation: state.generation(),
            best_fitness: best,
            mean_fitness,
            sigma: state.sigma(),
        });
        history.push(best);
        let g = termination.stall_generations;
        if g > 0 && history.len() > g {
            let then = history[history.len() - 1 - g];
            if then - best < termination.stall_tolerance {
                break;
            }
        }
    }
    let (best, best_fitness) = state
        .best()
        .map(|(x, f)| (x.to_vec(), f))
        .unwrap_or_else(|_| (state.mean().to_vec(), f64::INFINITY));
    Ok(Outcome {
        best,
        best_fitness,
        generations: state.generation(),
        trace,
    })
}

/// Writes `generation,best_fitness,mean_fitness,sigma` rows.
pub fn write_trace_csv(rows: &[TraceRow], out: impl std::io::Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["generation", "best_fitness", "mean_fitness", "sigma"])?;
    for r in rows {
        w.write_record([
            r.generation.to_string(),
            r.best_fitness.to_string(),
            r.mean_fitness.to_string(),
            r.sigma.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn default_population_sizes() {
        // 4 + ⌊3 ln 6⌋ = 4 + ⌊5.375⌋ = 9
        assert_eq!(default_population(6), 9);
        assert_eq!(default_population(1), 4);
        let s = CmaState::new(&[0.0; 6], 0.3, 1, None).unwrap();
        assert_eq!(s.population_size(), 9);
        assert_eq!(s.parents(), 4);
        assert!((s.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_construction() {
        assert_eq!(CmaState::new(&[], 0.3, 0, None).unwrap_err(), CmaError::Dimension);
        assert_eq!(
            CmaState::new(&[0.0], 0.0, 0, None).unwrap_err(),
            CmaError::Sigma(0.0)
        );
    }

    #[test]
    fn tiny_sigma_collapses_onto_mean() {
        let mut s = CmaState::new(&[0.5, -1.0, 2.0], 1e-300, 3, None).unwrap();
        for c in s.ask() {
            assert_eq!(c, vec![0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn cloned_states_ask_identically() {
        let mut a = CmaState::new(&[0.0; 4], 0.3, 42, None).unwrap();
        let mut b = a.clone();
        assert_eq!(a.ask(), b.ask());
    }

    #[test]
    fn sample_mean_matches_distribution_mean() {
        let m = [1.0, -2.0, 0.5];
        let sigma = 0.7;
        let mut s = CmaState::new(&m, sigma, 9, Some(10)).unwrap();
        let mut sum = [0.0; 3];
        let draws = 100_000;
        for _ in 0..draws / 10 {
            for c in s.ask() {
                for k in 0..3 {
                    sum[k] += c[k];
                }
            }
        }
        let tol = 3.0 * sigma / (draws as f64).sqrt();
        for k in 0..3 {
            assert!((sum[k] / draws as f64 - m[k]).abs() < tol);
        }
    }

    #[test]
    fn best_is_running_minimum() {
        let mut s = CmaState::new(&[2.0; 3], 1.0, 5, None).unwrap();
        assert_eq!(s.best().unwrap_err(), CmaError::NoEvaluations);
        let c = s.ask();
        let f: Vec<f64> = c.iter().map(|x| sphere(x)).collect();
        s.tell(&c, &f).unwrap();
        let argmin = (0..f.len()).min_by(|&a, &b| f[a].total_cmp(&f[b])).unwrap();
        assert_eq!(s.best().unwrap().0, c[argmin].as_slice());
        let mut last = s.best().unwrap().1;
        for _ in 0..30 {
            let c = s.ask();
            let f: Vec<f64> = c.iter().map(|x| sphere(x)).collect();
            s.tell(&c, &f).unwrap();
            assert!(s.best().unwrap().1 <= last);
            last = s.best().unwrap().1;
        }
    }

    #[test]
    fn fitness_count_mismatch() {
        let mut s = CmaState::new(&[0.0; 2], 0.3, 0, None).unwrap();
        let c = s.ask();
        assert!(matches!(
            s.tell(&c, &[1.0]),
            Err(CmaError::FitnessCount { .. })
        ));
    }

    #[test]
    fn non_finite_ranks_last() {
        let mut a = CmaState::new(&[1.0; 3], 0.5, 8, None).unwrap();
        let mut b = a.clone();
        let c = a.ask();
        b.ask();
        let mut f: Vec<f64> = c.iter().map(|x| sphere(x)).collect();
        let worst = (0..f.len()).max_by(|&x, &y| f[x].total_cmp(&f[y])).unwrap();
        let mut g = f.clone();
        g[worst] = f64::NAN;
        f[worst] = 1e300;
        a.tell(&c, &f).unwrap();
        b.tell(&c, &g).unwrap();
        assert_eq!(a.distribution(), b.distribution());
    }

    #[test]
    fn constant_fitness_keeps_index_order() {
        let mut s = CmaState::new(&[0.0; 2], 0.5, 4, None).unwrap();
        let c = s.ask();
        let mu = s.parents();
        let w = s.weights().to_vec();
        let mut expected = [0.0; 2];
        for i in 0..mu {
            for k in 0..2 {
                expected[k] += w[i] * c[i][k];
            }
        }
        s.tell(&c, &vec![3.0; c.len()]).unwrap();
        for k in 0..2 {
            assert!((s.mean()[k] - expected[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn eigenvalues_stay_positive() {
        let mut s = CmaState::new(&[1.0; 5], 0.5, 11, None).unwrap();
        let ill = |x: &[f64]| -> f64 {
            x.iter()
                .enumerate()
                .map(|(i, v)| 1e6f64.powf(i as f64 / 4.0) * v * v)
                .sum()
        };
        for _ in 0..300 {
            let c = s.ask();
            let f: Vec<f64> = c.iter().map(|x| ill(x)).collect();
            s.tell(&c, &f).unwrap();
        }
        assert!(s.eigenvalues().iter().all(|&v| v > 0.0));
        assert!(s.sigma() > 0.0);
    }

    #[test]
    fn encoding_laws() {
        let e = BoundedEncoding::default();
        assert_eq!(e.decode(&[0.0]), vec![1.0]);
        let top = e.decode(&[3f64.ln() + 5.0])[0];
        assert!((top - 3.0).abs() < 1e-15);
        let bottom = e.decode(&[-10.0])[0];
        assert!((bottom - 1.0 / 3.0).abs() < 1e-15);
        for x in [-3.0, -1.0, -0.2, 0.0, 0.4, 1.0, 2.5] {
            let back = e.encode(&e.decode(&[x]))[0];
            assert!((back - e.clamp(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn minimize_stops_on_stall() {
        let mut s = CmaState::new(&[0.0; 2], 0.3, 1, None).unwrap();
        let out = minimize::<(), _>(&mut s, &Termination::default(), |pop| {
            Ok(vec![1.0; pop.len()])
        })
        .unwrap();
        assert_eq!(out.generations, 21);
        assert_eq!(out.trace.len(), 21);
    }

    #[test]
    fn trace_csv_header() {
        let rows = vec![TraceRow {
            generation: 1,
            best_fitness: 0.5,
            mean_fitness: 1.0,
            sigma: 0.3,
        }];
        let mut buf = Vec::new();
        write_trace_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("generation,best_fitness,mean_fitness,sigma\n1,0.5,1,0.3"));
    }
}
