//! Differentiable test objectives.
//!
//! Deterministic landscapes (quadratic, Rosenbrock) return the same
//! `(loss, grad)` for the same θ. The stochastic wrappers perturb only the
//! gradient; the loss they report is always the clean base loss.

use std::fmt;

use crate::error::{Error, Result};
use crate::vecmath::{dot_slices, norm_slice, split_seed, ParamVector, RngStream};

pub trait Landscape: Send + fmt::Debug {
    fn dim(&self) -> usize;

    /// Clean loss at θ. Never consumes randomness.
    fn loss(&self, theta: &ParamVector) -> Result<f64>;

    /// Loss and (possibly perturbed) gradient at θ. Stochastic landscapes
    /// advance their random stream on every call.
    fn evaluate(&mut self, theta: &ParamVector) -> Result<(f64, ParamVector)>;

    /// Restarts every random stream inside this landscape from `seed`.
    fn reseed(&mut self, _seed: u64) {}

    fn boxed_clone(&self) -> Box<dyn Landscape>;
}

impl Clone for Box<dyn Landscape> {
    fn clone(&self) -> Self {
        self.boxed_clone()
    }
}

/// `L(θ) = ½ Σᵢ Aᵢ (θᵢ − bᵢ)²` with diagonal curvature `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    curvature: ParamVector,
    center: ParamVector,
}

impl Quadratic {
    pub fn new(curvature: ParamVector, center: ParamVector) -> Result<Self> {
        Error::check_dims(curvature.len(), center.len())?;
        if let Some(i) = curvature.iter().position(|&a| a <= 0.0) {
            return Err(Error::domain(format!(
                "curvature[{i}] = {} must be > 0",
                curvature[i]
            )));
        }
        Ok(Quadratic { curvature, center })
    }

    /// Curvatures log-spaced from `min` to `max`, minimizer at `center·1`.
    pub fn log_spaced(dim: usize, min: f64, max: f64, center: f64) -> Result<Self> {
        if dim == 0 || !(min > 0.0 && max >= min) {
            return Err(Error::domain("log_spaced needs dim >= 1 and 0 < min <= max"));
        }
        let a = (0..dim)
            .map(|i| {
                if dim == 1 {
                    min
                } else {
                    min * (max / min).powf(i as f64 / (dim - 1) as f64)
                }
            })
            .collect();
        Quadratic::new(ParamVector::new(a)?, ParamVector::filled(dim, center)?)
    }

    pub fn curvature(&self) -> &ParamVector {
        &self.curvature
    }

    pub fn center(&self) -> &ParamVector {
        &self.center
    }

    pub fn max_curvature(&self) -> f64 {
        self.curvature.iter().copied().fold(f64::MIN, f64::max)
    }
}

impl Landscape for Quadratic {
    fn dim(&self) -> usize {
        self.curvature.len()
    }

    fn loss(&self, theta: &ParamVector) -> Result<f64> {
        Error::check_dims(self.dim(), theta.len())?;
        let mut acc = 0.0;
        for ((a, b), x) in self.curvature.iter().zip(self.center.iter()).zip(theta.iter()) {
            let r = x - b;
            acc += a * r * r;
        }
        Ok(0.5 * acc)
    }

    fn evaluate(&mut self, theta: &ParamVector) -> Result<(f64, ParamVector)> {
        let loss = self.loss(theta)?;
        let grad = self
            .curvature
            .iter()
            .zip(self.center.iter())
            .zip(theta.iter())
            .map(|((a, b), x)| a * (x - b))
            .collect();
        Ok((loss, ParamVector::checked("grad", grad)?))
    }

    fn boxed_clone(&self) -> Box<dyn Landscape> {
        Box::new(self.clone())
    }
}

/// `L(θ) = Σᵢ 100 (θᵢ₊₁ − θᵢ²)² + (1 − θᵢ)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rosenbrock {
    dim: usize,
}

impl Rosenbrock {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::domain(format!("rosenbrock needs dim >= 2, got {dim}")));
        }
        Ok(Rosenbrock { dim })
    }
}

impl Landscape for Rosenbrock {
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, theta: &ParamVector) -> Result<f64> {
        Error::check_dims(self.dim, theta.len())?;
        let x = theta.as_slice();
        let mut acc = 0.0;
        for i in 0..self.dim - 1 {
            let valley = x[i + 1] - x[i] * x[i];
            let off = 1.0 - x[i];
            acc += 100.0 * valley * valley + off * off;
        }
        Ok(acc)
    }

    fn evaluate(&mut self, theta: &ParamVector) -> Result<(f64, ParamVector)> {
        let loss = self.loss(theta)?;
        let x = theta.as_slice();
        let mut grad = vec![0.0; self.dim];
        for i in 0..self.dim - 1 {
            let valley = x[i + 1] - x[i] * x[i];
            grad[i] += -400.0 * x[i] * valley - 2.0 * (1.0 - x[i]);
            grad[i + 1] += 200.0 * valley;
        }
        Ok((loss, ParamVector::checked("grad", grad)?))
    }

    fn boxed_clone(&self) -> Box<dyn Landscape> {
        Box::new(self.clone())
    }
}

/// Adds `σ·z`, `z ~ N(0, I)`, to the base gradient.
#[derive(Debug, Clone)]
pub struct Noisy {
    base: Box<dyn Landscape>,
    sigma: f64,
    rng: RngStream,
}

impl Noisy {
    pub fn new(base: Box<dyn Landscape>, sigma: f64, rng: RngStream) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::domain(format!("sigma = {sigma} must be >= 0")));
        }
        Ok(Noisy { base, sigma, rng })
    }
}

impl Landscape for Noisy {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn loss(&self, theta: &ParamVector) -> Result<f64> {
        self.base.loss(theta)
    }

    fn evaluate(&mut self, theta: &ParamVector) -> Result<(f64, ParamVector)> {
        let (loss, grad) = self.base.evaluate(theta)?;
        if self.sigma == 0.0 {
            return Ok((loss, grad));
        }
        let noisy = grad
            .iter()
            .map(|g| g + self.sigma * self.rng.standard_normal())
            .collect();
        Ok((loss, ParamVector::checked("grad", noisy)?))
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = RngStream::new(seed);
        self.base.reseed(split_seed(seed, 1));
    }

    fn boxed_clone(&self) -> Box<dyn Landscape> {
        Box::new(self.clone())
    }
}

/// Synthetic "torqued" gradients.
///
/// Every `period`-th query (queries 5, 10, ... for `period = 5`) adds a spike
/// `κ ‖g‖ u`, where `u` is a random unit vector drawn with `uᵀg < 0`, so the
/// returned gradient points partly against the true one. Other queries pass
/// through unchanged. This is a synthetic stand-in for misaligned mini-batch
/// gradients, not a model of any particular dataset.
#[derive(Debug, Clone)]
pub struct AlternatingAdversary {
    base: Box<dyn Landscape>,
    kappa: f64,
    period: u64,
    rng: RngStream,
    queries: u64,
}

impl AlternatingAdversary {
    pub fn new(base: Box<dyn Landscape>, kappa: f64, period: u64, rng: RngStream) -> Result<Self> {
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::domain(format!("kappa = {kappa} must be >= 0")));
        }
        if period == 0 {
            return Err(Error::domain("period must be >= 1"));
        }
        Ok(AlternatingAdversary {
            base,
            kappa,
            period,
            rng,
            queries: 0,
        })
    }

    /// Whether the `query`-th call (1-based) to `evaluate` carries a spike.
    pub fn is_spike_query(&self, query: u64) -> bool {
        self.kappa > 0.0 && query.is_multiple_of(self.period)
    }

    pub fn queries(&self) -> u64 {
        self.queries
    }

    fn opposing_direction(&mut self, g: &[f64]) -> Vec<f64> {
        loop {
            let mut u = self.rng.normal_vec(g.len());
            let n = norm_slice(&u);
            if n == 0.0 {
                continue;
            }
            u.iter_mut().for_each(|x| *x /= n);
            let proj = dot_slices(&u, g);
            if proj > 0.0 {
                u.iter_mut().for_each(|x| *x = -*x);
            }
            if proj != 0.0 {
                return u;
            }
        }
    }
}

impl Landscape for AlternatingAdversary {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn loss(&self, theta: &ParamVector) -> Result<f64> {
        self.base.loss(theta)
    }

    fn evaluate(&mut self, theta: &ParamVector) -> Result<(f64, ParamVector)> {
        let (loss, grad) = self.base.evaluate(theta)?;
        self.queries += 1;
        if !self.is_spike_query(self.queries) {
            return Ok((loss, grad));
        }
        let gnorm = norm_slice(grad.as_slice());
        if gnorm == 0.0 {
            return Ok((loss, grad));
        }
        let u = self.opposing_direction(grad.as_slice());
        let scale = self.kappa * gnorm;
        let spiked = grad.iter().zip(&u).map(|(g, ui)| g + scale * ui).collect();
        Ok((loss, ParamVector::checked("grad", spiked)?))
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = RngStream::new(seed);
        self.base.reseed(split_seed(seed, 1));
    }

    fn boxed_clone(&self) -> Box<dyn Landscape> {
        Box::new(self.clone())
    }
}

/// Declarative landscape description, built into a live [`Landscape`] with a
/// seed.
#[derive(Debug, Clone, PartialEq)]
pub enum LandscapeSpec {
    Quadratic {
        curvature: Vec<f64>,
        center: Vec<f64>,
    },
    Rosenbrock {
        dim: usize,
    },
    Noisy {
        base: Box<LandscapeSpec>,
        sigma: f64,
    },
    Adversary {
        base: Box<LandscapeSpec>,
        kappa: f64,
        period: u64,
    },
}

impl LandscapeSpec {
    pub fn dim(&self) -> usize {
        match self {
            LandscapeSpec::Quadratic { curvature, .. } => curvature.len(),
            LandscapeSpec::Rosenbrock { dim } => *dim,
            LandscapeSpec::Noisy { base, .. } | LandscapeSpec::Adversary { base, .. } => base.dim(),
        }
    }

    pub fn is_stochastic(&self) -> bool {
        match self {
            LandscapeSpec::Quadratic { .. } | LandscapeSpec::Rosenbrock { .. } => false,
            LandscapeSpec::Noisy { sigma, .. } => *sigma > 0.0,
            LandscapeSpec::Adversary { base, kappa, .. } => *kappa > 0.0 || base.is_stochastic(),
        }
    }

    /// Wrapper layers draw from `seed`, `split_seed(seed, 1)`, ... outermost
    /// first, matching [`Landscape::reseed`].
    pub fn build(&self, seed: u64) -> Result<Box<dyn Landscape>> {
        Ok(match self {
            LandscapeSpec::Quadratic { curvature, center } => Box::new(Quadratic::new(
                ParamVector::checked("curvature", curvature.clone())?,
                ParamVector::checked("center", center.clone())?,
            )?),
            LandscapeSpec::Rosenbrock { dim } => Box::new(Rosenbrock::new(*dim)?),
            LandscapeSpec::Noisy { base, sigma } => Box::new(Noisy::new(
                base.build(split_seed(seed, 1))?,
                *sigma,
                RngStream::new(seed),
            )?),
            LandscapeSpec::Adversary {
                base,
                kappa,
                period,
            } => Box::new(AlternatingAdversary::new(
                base.build(split_seed(seed, 1))?,
                *kappa,
                *period,
                RngStream::new(seed),
            )?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::cosine_similarity;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn fd_grad(l: &dyn Landscape, theta: &[f64], h: f64) -> Vec<f64> {
        (0..theta.len())
            .map(|i| {
                let mut plus = theta.to_vec();
                let mut minus = theta.to_vec();
                plus[i] += h;
                minus[i] -= h;
                (l.loss(&pv(&plus)).unwrap() - l.loss(&pv(&minus)).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn quadratic_examples() {
        let mut q = Quadratic::new(pv(&[1.0, 3.0]), pv(&[0.5, -1.0])).unwrap();
        let (loss, grad) = q.evaluate(&pv(&[0.5, -1.0])).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.is_zero());

        let mut q = Quadratic::new(pv(&[1.0]), pv(&[0.0])).unwrap();
        let (loss, grad) = q.evaluate(&pv(&[2.0])).unwrap();
        assert_eq!(loss, 2.0);
        assert_eq!(grad, pv(&[2.0]));

        assert!(Quadratic::new(pv(&[1.0, 0.0]), pv(&[0.0, 0.0])).is_err());
        assert!(Quadratic::new(pv(&[1.0, -2.0]), pv(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn quadratic_gradient_matches_finite_differences() {
        let mut q = Quadratic::log_spaced(6, 0.5, 20.0, 1.0).unwrap();
        let mut rng = RngStream::new(1);
        for _ in 0..10 {
            let theta = rng.normal_vec(6);
            let (_, g) = q.evaluate(&pv(&theta)).unwrap();
            let fd = fd_grad(&q, &theta, 1e-5);
            for (a, n) in g.iter().zip(&fd) {
                assert!((a - n).abs() / a.abs().max(1.0) < 1e-7);
            }
        }
    }

    #[test]
    fn rosenbrock_examples() {
        let mut r = Rosenbrock::new(4).unwrap();
        let (loss, grad) = r.evaluate(&pv(&[1.0; 4])).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.is_zero());

        let mut r = Rosenbrock::new(2).unwrap();
        let (loss, grad) = r.evaluate(&pv(&[0.0, 0.0])).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(grad, pv(&[-2.0, 0.0]));
        assert!(Rosenbrock::new(1).is_err());
    }

    #[test]
    fn rosenbrock_gradient_matches_finite_differences() {
        let mut r = Rosenbrock::new(5).unwrap();
        let mut rng = RngStream::new(2);
        for _ in 0..10 {
            let theta = rng.normal_vec(5);
            let (_, g) = r.evaluate(&pv(&theta)).unwrap();
            let fd = fd_grad(&r, &theta, 1e-5);
            for (a, n) in g.iter().zip(&fd) {
                assert!((a - n).abs() / a.abs().max(1.0) < 1e-6, "{a} vs {n}");
            }
        }
    }

    #[test]
    fn zero_sigma_noise_is_identity() {
        let q = Quadratic::log_spaced(3, 1.0, 4.0, 0.0).unwrap();
        let mut noisy = Noisy::new(Box::new(q.clone()), 0.0, RngStream::new(0)).unwrap();
        let theta = pv(&[1.0, 2.0, 3.0]);
        assert_eq!(noisy.evaluate(&theta).unwrap(), q.clone().evaluate(&theta).unwrap());
        assert!(Noisy::new(Box::new(q), -1.0, RngStream::new(0)).is_err());
    }

    #[test]
    fn noisy_gradient_is_unbiased() {
        let sigma = 0.7;
        let q = Quadratic::new(pv(&[2.0, 1.0]), pv(&[0.0, 0.0])).unwrap();
        let mut noisy = Noisy::new(Box::new(q), sigma, RngStream::new(99)).unwrap();
        let theta = pv(&[1.0, -3.0]);
        let n = 100_000;
        let mut sum = [0.0; 2];
        for _ in 0..n {
            let (loss, g) = noisy.evaluate(&theta).unwrap();
            assert_eq!(loss, 0.5 * (2.0 + 9.0));
            sum[0] += g[0];
            sum[1] += g[1];
        }
        let tol = 3.0 * sigma / (n as f64).sqrt();
        assert!((sum[0] / n as f64 - 2.0).abs() < tol);
        assert!((sum[1] / n as f64 + 3.0).abs() < tol);
    }

    #[test]
    fn noisy_is_seed_deterministic() {
        let spec = LandscapeSpec::Noisy {
            base: Box::new(LandscapeSpec::Rosenbrock { dim: 3 }),
            sigma: 0.3,
        };
        let mut a = spec.build(4).unwrap();
        let mut b = spec.build(4).unwrap();
        let theta = pv(&[0.1, 0.2, 0.3]);
        for _ in 0..20 {
            assert_eq!(a.evaluate(&theta).unwrap(), b.evaluate(&theta).unwrap());
        }
    }

    #[test]
    fn adversary_without_kappa_is_identity() {
        let q = Quadratic::log_spaced(3, 1.0, 4.0, 0.0).unwrap();
        let mut adv = AlternatingAdversary::new(Box::new(q.clone()), 0.0, 2, RngStream::new(0)).unwrap();
        let theta = pv(&[1.0, 2.0, 3.0]);
        for _ in 0..6 {
            assert_eq!(adv.evaluate(&theta).unwrap(), q.clone().evaluate(&theta).unwrap());
        }
        assert!(AlternatingAdversary::new(Box::new(q), 1.0, 0, RngStream::new(0)).is_err());
    }

    #[test]
    fn adversary_spikes_oppose_the_true_gradient() {
        let mut q = Quadratic::log_spaced(5, 1.0, 10.0, 0.0).unwrap();
        let mut adv =
            AlternatingAdversary::new(Box::new(q.clone()), 3.0, 5, RngStream::new(8)).unwrap();
        let mut rng = RngStream::new(9);
        for k in 1..=50u64 {
            let theta = pv(&rng.normal_vec(5));
            let (loss, g) = adv.evaluate(&theta).unwrap();
            let (base_loss, base) = q.evaluate(&theta).unwrap();
            assert_eq!(loss, base_loss);
            let cos = cosine_similarity(&g, &base).unwrap();
            if k % 5 == 0 {
                assert!(cos < 1.0);
                let spike: Vec<f64> = g.iter().zip(base.iter()).map(|(a, b)| a - b).collect();
                assert!(dot_slices(&spike, base.as_slice()) < 0.0);
                let ratio = norm_slice(&spike) / norm_slice(base.as_slice());
                assert!((ratio - 3.0).abs() < 1e-12);
            } else {
                assert_eq!(g, base);
            }
        }
    }
}
