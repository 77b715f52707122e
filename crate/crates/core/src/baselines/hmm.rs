//! Per-class hidden Markov models with diagonal Gaussian emissions.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{check_dim, invalid, Result};
use crate::numerics::rng::{seeded_rng, shuffle};

pub const DEFAULT_STATES: usize = 5;
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct HmmConfig {
    pub states: usize,
    pub max_iter: usize,
    /// Stop once the log-likelihood improves by less than this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for HmmConfig {
    fn default() -> Self {
        HmmConfig {
            states: DEFAULT_STATES,
            max_iter: 100,
            tol: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianHmm {
    pub initial: Vec<f64>,
    /// Row-stochastic, `S × S`.
    pub transition: Vec<Vec<f64>>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

/// Result of [`hmm_fit`]: the model plus the total log-likelihood before each M-step.
#[derive(Clone, Debug, PartialEq)]
pub struct HmmFit {
    pub model: GaussianHmm,
    pub log_likelihoods: Vec<f64>,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

impl GaussianHmm {
    pub fn states(&self) -> usize {
        self.initial.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.states();
        if s == 0 {
            return Err(invalid("hmm has no states"));
        }
        let d = self.dim();
        check_dim("hmm transition rows", s, self.transition.len())?;
        check_dim("hmm means", s, self.means.len())?;
        check_dim("hmm variances", s, self.variances.len())?;
        let stochastic = |row: &[f64]| {
            row.iter().all(|&p| (0.0..=1.0 + 1e-9).contains(&p)) && (row.iter().sum::<f64>() - 1.0).abs() < 1e-6
        };
        if !stochastic(&self.initial) {
            return Err(invalid("hmm initial distribution does not sum to 1"));
        }
        for i in 0..s {
            check_dim("hmm transition row", s, self.transition[i].len())?;
            if !stochastic(&self.transition[i]) {
                return Err(invalid(format!("hmm transition row {i} is not a distribution")));
            }
            check_dim("hmm mean", d, self.means[i].len())?;
            check_dim("hmm variance", d, self.variances[i].len())?;
            if self.variances[i].iter().any(|&v| !(v >= VARIANCE_FLOOR * (1.0 - 1e-12))) {
                return Err(invalid(format!("hmm state {i} variance below floor")));
            }
            if self.means[i].iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("hmm state {i} mean not finite")));
            }
        }
        Ok(())
    }

    /// `ln N(x; μ_s, diag σ²_s)`.
    pub fn emission_log(&self, s: usize, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((&xi, &m), &v) in x.iter().zip(&self.means[s]).zip(&self.variances[s]) {
            let d = xi - m;
            acc += (2.0 * PI * v).ln() + d * d / v;
        }
        -0.5 * acc
    }

    fn emissions<X: AsRef<[f64]>>(&self, xs: &[X]) -> Result<Vec<Vec<f64>>> {
        xs.iter()
            .map(|x| {
                check_dim("hmm input", self.dim(), x.as_ref().len())?;
                Ok((0..self.states()).map(|s| self.emission_log(s, x.as_ref())).collect())
            })
            .collect()
    }

    fn forward(&self, em: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let s = self.states();
        let log_a: Vec<Vec<f64>> = self.transition.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect();
        let mut alpha = Vec::with_capacity(em.len());
        alpha.push((0..s).map(|j| self.initial[j].ln() + em[0][j]).collect::<Vec<_>>());
        let mut buf = vec![0.0; s];
        for t in 1..em.len() {
            let prev: &Vec<f64> = &alpha[t - 1];
            let next: Vec<f64> = (0..s)
                .map(|j| {
                    for i in 0..s {
                        buf[i] = prev[i] + log_a[i][j];
                    }
                    log_sum_exp(&buf) + em[t][j]
                })
                .collect();
            alpha.push(next);
        }
        alpha
    }

    fn backward(&self, em: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let s = self.states();
        let t_len = em.len();
        let log_a: Vec<Vec<f64>> = self.transition.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect();
        let mut beta = vec![vec![0.0; s]; t_len];
        let mut buf = vec![0.0; s];
        for t in (0..t_len.saturating_sub(1)).rev() {
            for i in 0..s {
                for j in 0..s {
                    buf[j] = log_a[i][j] + em[t + 1][j] + beta[t + 1][j];
                }
                beta[t][i] = log_sum_exp(&buf);
            }
        }
        beta
    }

    /// `ln p(xs)` by the forward recursion in log space.
    pub fn log_likelihood<X: AsRef<[f64]>>(&self, xs: &[X]) -> Result<f64> {
        if xs.is_empty() {
            return Err(invalid("log-likelihood of an empty sequence"));
        }
        let em = self.emissions(xs)?;
        Ok(log_sum_exp(self.forward(&em).last().expect("nonempty")))
    }
}

fn kmeans_init<X: AsRef<[f64]>>(frames: &[&X], s: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let d = frames[0].as_ref().len();
    let mut rng = seeded_rng(seed);
    let mut order: Vec<usize> = (0..frames.len()).collect();
    shuffle(&mut rng, &mut order);
    let mut centers: Vec<Vec<f64>> = order[..s].iter().map(|&i| frames[i].as_ref().to_vec()).collect();
    let mut assign = vec![0usize; frames.len()];
    for _ in 0..20 {
        let mut changed = false;
        for (n, x) in frames.iter().enumerate() {
            let x = x.as_ref();
            let mut best = (f64::INFINITY, 0);
            for (k, c) in centers.iter().enumerate() {
                let dist: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist < best.0 {
                    best = (dist, k);
                }
            }
            if assign[n] != best.1 {
                assign[n] = best.1;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; d]; s];
        let mut counts = vec![0usize; s];
        for (x, &k) in frames.iter().zip(&assign) {
            counts[k] += 1;
            for (a, &v) in sums[k].iter_mut().zip(x.as_ref()) {
                *a += v;
            }
        }
        for k in 0..s {
            if counts[k] > 0 {
                centers[k] = sums[k].iter().map(|v| v / counts[k] as f64).collect();
            } else {
                // re-seed an empty cluster at a random frame
                centers[k] = frames[rng.random_range(0..frames.len())].as_ref().to_vec();
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (centers, assign)
}

/// Baum-Welch on the sequences of one class.
///
/// States start from a seeded k-means clustering of all frames; iteration
/// stops after `cfg.max_iter` rounds or when the total log-likelihood gains
/// less than `cfg.tol`.
pub fn hmm_fit<X: AsRef<[f64]>>(seqs: &[&[X]], cfg: &HmmConfig) -> Result<HmmFit> {
    let s = cfg.states;
    if s == 0 {
        return Err(invalid("hmm needs at least one state"));
    }
    if seqs.is_empty() {
        return Err(invalid("hmm fit needs at least one sequence"));
    }
    let d = seqs[0].first().map_or(0, |x| x.as_ref().len());
    if d == 0 {
        return Err(invalid("hmm fit on zero-dimensional frames"));
    }
    for (i, seq) in seqs.iter().enumerate() {
        if seq.len() < s {
            return Err(invalid(format!("sequence {i} has {} frames, fewer than {s} states", seq.len())));
        }
        for x in seq.iter() {
            check_dim("hmm training frame", d, x.as_ref().len())?;
            if x.as_ref().iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("sequence {i} contains a non-finite value")));
            }
        }
    }

    let frames: Vec<&X> = seqs.iter().flat_map(|s| s.iter()).collect();
    let (centers, assign) = kmeans_init(&frames, s, cfg.seed);
    let mut global_var = vec![0.0; d];
    {
        let n = frames.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| frames.iter().map(|x| x.as_ref()[j]).sum::<f64>() / n).collect();
        for x in &frames {
            for j in 0..d {
                global_var[j] += (x.as_ref()[j] - mean[j]).powi(2) / n;
            }
        }
    }
    let mut variances = vec![vec![0.0; d]; s];
    let mut counts = vec![0usize; s];
    for (x, &k) in frames.iter().zip(&assign) {
        counts[k] += 1;
        for j in 0..d {
            variances[k][j] += (x.as_ref()[j] - centers[k][j]).powi(2);
        }
    }
    for k in 0..s {
        for j in 0..d {
            let v = if counts[k] >= 2 { variances[k][j] / counts[k] as f64 } else { global_var[j] };
            variances[k][j] = v.max(VARIANCE_FLOOR);
        }
    }
    let transition = (0..s)
        .map(|i| {
            (0..s)
                .map(|j| match (s, i == j) {
                    (1, _) => 1.0,
                    (_, true) => 0.5,
                    _ => 0.5 / (s - 1) as f64,
                })
                .collect()
        })
        .collect();
    let mut model = GaussianHmm {
        initial: vec![1.0 / s as f64; s],
        transition,
        means: centers,
        variances,
    };

    let mut history = Vec::new();
    for _ in 0..cfg.max_iter {
        let mut ll = 0.0;
        let mut pi_acc = vec![0.0; s];
        let mut trans_num = vec![vec![0.0; s]; s];
        let mut trans_den = vec![0.0; s];
        let mut occ = vec![0.0; s];
        let mut mean_acc = vec![vec![0.0; d]; s];
        let mut sq_acc = vec![vec![0.0; d]; s];
        let log_a: Vec<Vec<f64>> = model.transition.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect();

        for seq in seqs {
            let em = model.emissions(seq)?;
            let alpha = model.forward(&em);
            let beta = model.backward(&em);
            let seq_ll = log_sum_exp(alpha.last().expect("nonempty"));
            ll += seq_ll;
            for t in 0..seq.len() {
                let x = seq[t].as_ref();
                for k in 0..s {
                    let g = (alpha[t][k] + beta[t][k] - seq_ll).exp();
                    if t == 0 {
                        pi_acc[k] += g;
                    }
                    if t + 1 < seq.len() {
                        trans_den[k] += g;
                    }
                    occ[k] += g;
                    for j in 0..d {
                        mean_acc[k][j] += g * x[j];
                        sq_acc[k][j] += g * x[j] * x[j];
                    }
                }
                if t + 1 < seq.len() {
                    for i in 0..s {
                        for j in 0..s {
                            trans_num[i][j] +=
                                (alpha[t][i] + log_a[i][j] + em[t + 1][j] + beta[t + 1][j] - seq_ll).exp();
                        }
                    }
                }
            }
        }
        let gain = history.last().map(|&prev| ll - prev);
        history.push(ll);
        if gain.is_some_and(|g| g < cfg.tol) {
            break;
        }

        let pi_sum: f64 = pi_acc.iter().sum();
        model.initial = pi_acc.iter().map(|p| p / pi_sum.max(f64::MIN_POSITIVE)).collect();
        for i in 0..s {
            if trans_den[i] > 1e-300 {
                let row_sum: f64 = trans_num[i].iter().sum();
                model.transition[i] = trans_num[i].iter().map(|v| v / row_sum).collect();
            }
            if occ[i] > 1e-300 {
                for j in 0..d {
                    let m = mean_acc[i][j] / occ[i];
                    let v = sq_acc[i][j] / occ[i] - m * m;
                    model.means[i][j] = m;
                    model.variances[i][j] = v.max(VARIANCE_FLOOR);
                }
            }
        }
    }
    Ok(HmmFit {
        model,
        log_likelihoods: history,
    })
}

/// Index of the model with the highest log-likelihood; ties go to the lowest index.
pub fn hmm_classify<X: AsRef<[f64]>>(models: &[GaussianHmm], xs: &[X]) -> Result<usize> {
    let first = models.first().ok_or_else(|| invalid("no models to classify with"))?;
    let mut best = (f64::NEG_INFINITY, 0);
    for (k, m) in models.iter().enumerate() {
        check_dim("hmm model dimension", first.dim(), m.dim())?;
        let ll = m.log_likelihood(xs)?;
        if ll > best.0 {
            best = (ll, k);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::normal;
    use rand::Rng;

    fn random_model(s: usize, d: usize, seed: u64) -> GaussianHmm {
        let mut rng = seeded_rng(seed);
        let mut dist = |n: usize| {
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let t: f64 = w.iter().sum();
            w.into_iter().map(|v| v / t).collect::<Vec<_>>()
        };
        let initial = dist(s);
        let transition = (0..s).map(|_| dist(s)).collect();
        let mut rng = seeded_rng(seed + 1000);
        GaussianHmm {
            initial,
            transition,
            means: (0..s).map(|_| (0..d).map(|_| normal(&mut rng, 1.0)).collect()).collect(),
            variances: (0..s).map(|_| (0..d).map(|_| rng.random_range(0.2..2.0)).collect()).collect(),
        }
    }

    fn sample(m: &GaussianHmm, t: usize, rng: &mut crate::numerics::SeededRng) -> Vec<Vec<f64>> {
        let pick = |p: &[f64], rng: &mut crate::numerics::SeededRng| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, &v) in p.iter().enumerate() {
                acc += v;
                if u < acc {
                    return i;
                }
            }
            p.len() - 1
        };
        let mut s = pick(&m.initial, rng);
        let mut out = Vec::with_capacity(t);
        for _ in 0..t {
            out.push(
                m.means[s]
                    .iter()
                    .zip(&m.variances[s])
                    .map(|(&mu, &v)| mu + normal(rng, v.sqrt()))
                    .collect(),
            );
            s = pick(&m.transition[s], rng);
        }
        out
    }

    #[test]
    fn forward_matches_path_enumeration() {
        for seed in 0..10 {
            let m = random_model(3, 2, seed);
            m.validate().unwrap();
            let xs = sample(&m, 2, &mut seeded_rng(seed + 50));
            let dens = |s: usize, x: &[f64]| -> f64 {
                let mut p = 1.0;
                for j in 0..x.len() {
                    let v = m.variances[s][j];
                    p *= (-(x[j] - m.means[s][j]).powi(2) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt();
                }
                p
            };
            let mut brute = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    brute += m.initial[a] * dens(a, &xs[0]) * m.transition[a][b] * dens(b, &xs[1]);
                }
            }
            let ll = m.log_likelihood(&xs).unwrap();
            assert!((ll - brute.ln()).abs() < 1e-9, "{ll} vs {}", brute.ln());
        }
    }

    #[test]
    fn likelihood_is_finite_far_from_every_state() {
        let m = random_model(3, 4, 1);
        let xs = vec![vec![1e3; 4]; 500];
        assert!(m.log_likelihood(&xs).unwrap().is_finite());
    }

    #[test]
    fn recovers_two_state_means() {
        let truth = GaussianHmm {
            initial: vec![0.5, 0.5],
            transition: vec![vec![0.9, 0.1], vec![0.1, 0.9]],
            means: vec![vec![0.0, 0.0], vec![3.0, 3.0]],
            variances: vec![vec![0.25, 0.25], vec![0.25, 0.25]],
        };
        let mut rng = seeded_rng(3);
        let data: Vec<Vec<Vec<f64>>> = (0..20).map(|_| sample(&truth, 50, &mut rng)).collect();
        let refs: Vec<&[Vec<f64>]> = data.iter().map(|s| s.as_slice()).collect();
        let fit = hmm_fit(&refs, &HmmConfig { states: 2, seed: 1, ..Default::default() }).unwrap();
        fit.model.validate().unwrap();
        let mut means = fit.model.means.clone();
        means.sort_by(|a, b| a[0].total_cmp(&b[0]));
        for (got, want) in means.iter().zip(&truth.means) {
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() < 0.1, "{means:?}");
            }
        }
        for w in fit.log_likelihoods.windows(2) {
            assert!(w[1] >= w[0] - 1e-7, "{:?}", fit.log_likelihoods);
        }
    }

    #[test]
    fn em_is_monotone_on_mixed_data() {
        let mut rng = seeded_rng(4);
        let data: Vec<Vec<Vec<f64>>> = (0..6)
            .map(|i| sample(&random_model(4, 3, 10 + i), 30, &mut rng))
            .collect();
        let refs: Vec<&[Vec<f64>]> = data.iter().map(|s| s.as_slice()).collect();
        let fit = hmm_fit(&refs, &HmmConfig { seed: 2, ..Default::default() }).unwrap();
        assert!(fit.log_likelihoods.len() >= 2);
        for w in fit.log_likelihoods.windows(2) {
            assert!(w[1] >= w[0] - 1e-7, "{:?}", fit.log_likelihoods);
        }
    }

    #[test]
    fn single_state_is_the_sample_gaussian() {
        let mut rng = seeded_rng(5);
        let data: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|_| (0..17).map(|_| vec![normal(&mut rng, 2.0) + 1.0, normal(&mut rng, 0.5)]).collect())
            .collect();
        let refs: Vec<&[Vec<f64>]> = data.iter().map(|s| s.as_slice()).collect();
        let fit = hmm_fit(&refs, &HmmConfig { states: 1, ..Default::default() }).unwrap();
        let all: Vec<&Vec<f64>> = data.iter().flatten().collect();
        let n = all.len() as f64;
        for j in 0..2 {
            let mean = all.iter().map(|x| x[j]).sum::<f64>() / n;
            assert!((fit.model.means[0][j] - mean).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_data_hits_the_floor() {
        let data = vec![vec![vec![2.0, -1.0]; 12]; 2];
        let refs: Vec<&[Vec<f64>]> = data.iter().map(|s| s.as_slice()).collect();
        let fit = hmm_fit(&refs, &HmmConfig { states: 3, ..Default::default() }).unwrap();
        fit.model.validate().unwrap();
        assert!(fit.model.variances.iter().flatten().all(|&v| v == VARIANCE_FLOOR));
    }

    #[test]
    fn fit_is_deterministic_and_checks_input() {
        let mut rng = seeded_rng(6);
        let data: Vec<Vec<Vec<f64>>> = (0..3).map(|_| sample(&random_model(2, 2, 7), 10, &mut rng)).collect();
        let refs: Vec<&[Vec<f64>]> = data.iter().map(|s| s.as_slice()).collect();
        let cfg = HmmConfig { states: 3, seed: 9, ..Default::default() };
        assert_eq!(hmm_fit(&refs, &cfg).unwrap(), hmm_fit(&refs, &cfg).unwrap());
        let short = [&data[0][..2]];
        assert!(hmm_fit(&short, &cfg).is_err());
        assert!(hmm_fit::<Vec<f64>>(&[], &cfg).is_err());
    }

    #[test]
    fn classify_picks_best_and_breaks_ties_low() {
        let a = random_model(2, 2, 11);
        let mut b = a.clone();
        for m in &mut b.means {
            for v in m {
                *v += 10.0;
            }
        }
        let xs = sample(&b, 20, &mut seeded_rng(12));
        assert_eq!(hmm_classify(&[a.clone(), b.clone()], &xs).unwrap(), 1);
        assert_eq!(hmm_classify(&[a.clone(), a.clone(), a.clone()], &xs).unwrap(), 0);
        assert!(hmm_classify(&[a], &[vec![1.0]]).is_err());
    }
}
