//! Conditional denoising diffusion over sequence summaries: linear noise
//! schedule, closed-form forward noising, an ε-predicting MLP conditioned on
//! an intent prototype, and ancestral reverse sampling.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::params::{Bound, ParamStore};
use crate::tensor::Matrix;

/// Where the reverse chain starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingInit {
    /// `x_T = q_sample(h, T, ε)`: the source summary pushed through the
    /// forward process.
    NoisedSource,
    /// `x_T ~ N(0, I)`.
    PureNoise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub hidden_width: usize,
    pub time_dim: usize,
    pub init: SamplingInit,
    /// Optimizer steps an augmented view of a training sample stays valid;
    /// 1 regenerates every view on every step.
    pub augment_interval: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            beta_start: 1e-4,
            beta_end: 0.02,
            hidden_width: 128,
            time_dim: 16,
            init: SamplingInit::NoisedSource,
            augment_interval: 1,
        }
    }
}

impl DiffusionConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    /// `alpha_bars[0] = 1`; `alpha_bars[t]` for `t = 1..=T`.
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// β_t for `1 <= t <= T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// ᾱ_t for `0 <= t <= T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    fn check(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::Invalid(format!("diffusion step {t} outside 0..={}", self.steps())));
        }
        Ok(())
    }
}

/// Linear β from `beta_start` to `beta_end` over `steps` steps.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Config("diffusion.steps must be at least 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "diffusion betas need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
        )));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    Ok(schedule_from_betas(betas))
}

pub(crate) fn schedule_from_betas(betas: Vec<f64>) -> NoiseSchedule {
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
    alpha_bars.push(1.0);
    for a in &alphas {
        let prev = *alpha_bars.last().unwrap();
        alpha_bars.push(prev * a);
    }
    NoiseSchedule { betas, alphas, alpha_bars }
}

/// Schedule with explicit β values, for callers that do not want a linear ramp.
pub fn schedule_with_betas(betas: &[f64]) -> Result<NoiseSchedule> {
    if betas.is_empty() || betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
        return Err(Error::Config("every beta must lie in (0, 1)".into()));
    }
    Ok(schedule_from_betas(betas.to_vec()))
}

/// `√ᾱ_t · x_0 + √(1 − ᾱ_t) · ε`. `t = 0` returns `x_0`.
pub fn q_sample(x0: &[f64], t: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    schedule.check(t)?;
    if x0.len() != eps.len() {
        return Err(Error::Shape(format!("x_0 width {} vs noise width {}", x0.len(), eps.len())));
    }
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

/// Row-wise [`q_sample`] with a step per row.
pub fn q_sample_batch(x0: &Matrix, t: &[usize], eps: &Matrix, schedule: &NoiseSchedule) -> Result<Matrix> {
    if x0.shape() != eps.shape() || t.len() != x0.rows() {
        return Err(Error::Shape(format!(
            "q_sample batch: x_0 {:?}, noise {:?}, {} steps",
            x0.shape(),
            eps.shape(),
            t.len()
        )));
    }
    let mut out = Matrix::zeros(x0.rows(), x0.cols());
    for r in 0..x0.rows() {
        let row = q_sample(x0.row(r), t[r], eps.row(r), schedule)?;
        out.row_mut(r).copy_from_slice(&row);
    }
    Ok(out)
}

/// Sinusoidal step embedding of width `dim` (first half sines, second half
/// cosines).
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

fn timestep_matrix(t: &[usize], dim: usize) -> Matrix {
    let mut m = Matrix::zeros(t.len(), dim);
    for (r, &s) in t.iter().enumerate() {
        m.row_mut(r).copy_from_slice(&timestep_embedding(s, dim));
    }
    m
}

/// `f_θ(x_t, s, t)`: MLP over `[x_t ; s ; emb(t)]` with two GELU hidden
/// layers, output width `d`.
#[derive(Clone, Debug)]
pub struct Denoiser {
    pub dim: usize,
    pub hidden: usize,
    pub time_dim: usize,
}

impl Denoiser {
    pub fn new(dim: usize, config: &DiffusionConfig) -> Result<Self> {
        if config.time_dim == 0 || config.time_dim % 2 != 0 {
            return Err(Error::Config(format!("diffusion.time_dim must be even and positive, got {}", config.time_dim)));
        }
        if config.hidden_width == 0 {
            return Err(Error::Config("diffusion.hidden_width must be positive".into()));
        }
        Ok(Self { dim, hidden: config.hidden_width, time_dim: config.time_dim })
    }

    pub fn layers(&self) -> [Linear; 3] {
        [
            Linear::new("denoiser.0", 2 * self.dim + self.time_dim, self.hidden, true),
            Linear::new("denoiser.1", self.hidden, self.hidden, true),
            Linear::new("denoiser.2", self.hidden, self.dim, true),
        ]
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        for l in self.layers() {
            l.init(store, rng);
        }
    }

    /// Predicted noise for row-aligned `x_t`, `s` (`B × d`) at steps `t`.
    pub fn forward(&self, tape: &mut Tape, params: &Bound, x_t: Var, s: Var, t: &[usize]) -> Result<Var> {
        let (xs, ss) = (tape.value(x_t).shape(), tape.value(s).shape());
        if xs != ss || xs.1 != self.dim || t.len() != xs.0 {
            return Err(Error::Shape(format!(
                "denoiser inputs x_t {xs:?}, s {ss:?}, {} steps; expected width {}",
                t.len(),
                self.dim
            )));
        }
        let emb = tape.constant(timestep_matrix(t, self.time_dim));
        let [l0, l1, l2] = self.layers();
        let mut h = tape.concat_cols(&[x_t, s, emb]);
        h = l0.forward(tape, params, h)?;
        h = tape.gelu(h);
        h = l1.forward(tape, params, h)?;
        h = tape.gelu(h);
        l2.forward(tape, params, h)
    }

    /// ε-prediction loss on a fixed noise draw; `x0` and `s` are used as
    /// given (detach them first if they must not receive gradients).
    pub fn loss(
        &self,
        tape: &mut Tape,
        params: &Bound,
        x0: Var,
        s: Var,
        schedule: &NoiseSchedule,
        draw: &NoiseDraw,
    ) -> Result<Var> {
        let x0v = tape.value(x0);
        if x0v.shape() != draw.eps.shape() {
            return Err(Error::Shape(format!("x_0 {:?} vs noise {:?}", x0v.shape(), draw.eps.shape())));
        }
        let signal: Vec<f64> = draw.t.iter().map(|&t| schedule.alpha_bar(t).sqrt()).collect();
        let noise = draw.noise_part(schedule);
        let a = tape.constant(Matrix::from_vec(signal.len(), 1, signal)?);
        let scaled = tape.mul_col(x0, a);
        let n = tape.constant(noise);
        let x_t = tape.add(scaled, n);
        let pred = self.forward(tape, params, x_t, s, &draw.t)?;
        let eps = tape.constant(draw.eps.clone());
        let diff = tape.sub(pred, eps);
        let sq = tape.mul(diff, diff);
        Ok(tape.mean(sq))
    }
}

/// Anything that predicts ε from `(x_t, s, t)` without gradients.
pub trait NoisePredictor {
    fn predict(&self, x_t: &Matrix, s: &Matrix, t: &[usize]) -> Result<Matrix>;
}

/// A denoiser paired with concrete parameter values.
pub struct BoundDenoiser<'a> {
    pub denoiser: &'a Denoiser,
    pub params: &'a ParamStore,
}

impl NoisePredictor for BoundDenoiser<'_> {
    fn predict(&self, x_t: &Matrix, s: &Matrix, t: &[usize]) -> Result<Matrix> {
        let mut tape = Tape::new();
        let mut bound_names = Vec::new();
        for l in self.denoiser.layers() {
            bound_names.push(l.weight_name());
            bound_names.push(l.bias_name());
        }
        let bound = self.params.bind_subset(&mut tape, &bound_names)?;
        let x = tape.constant(x_t.clone());
        let c = tape.constant(s.clone());
        let y = self.denoiser.forward(&mut tape, &bound, x, c, t)?;
        Ok(tape.value(y).clone())
    }
}

/// Single-vector ε prediction.
pub fn predict_noise(x_t: &[f64], s: &[f64], t: usize, denoiser: &Denoiser, params: &ParamStore) -> Result<Vec<f64>> {
    if x_t.len() != s.len() {
        return Err(Error::Shape(format!("x_t width {} vs condition width {}", x_t.len(), s.len())));
    }
    let p = BoundDenoiser { denoiser, params };
    let out = p.predict(&Matrix::row_vector(x_t.to_vec()), &Matrix::row_vector(s.to_vec()), &[t])?;
    Ok(out.into_vec())
}

/// The random part of one diffusion-loss evaluation: a step per row and
/// standard normal noise.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub t: Vec<usize>,
    pub eps: Matrix,
}

impl NoiseDraw {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, batch: usize, dim: usize, schedule: &NoiseSchedule) -> Self {
        let t = (0..batch).map(|_| rng.gen_range(1..=schedule.steps())).collect();
        Self { t, eps: standard_normal(rng, batch, dim) }
    }

    fn noise_part(&self, schedule: &NoiseSchedule) -> Matrix {
        let mut n = self.eps.clone();
        for (r, &t) in self.t.iter().enumerate() {
            let b = (1.0 - schedule.alpha_bar(t)).sqrt();
            n.row_mut(r).iter_mut().for_each(|v| *v *= b);
        }
        n
    }
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

/// Mean squared ε-prediction error for any predictor, on a fixed draw.
pub fn diffusion_loss<P: NoisePredictor + ?Sized>(
    predictor: &P,
    x0: &Matrix,
    s: &Matrix,
    schedule: &NoiseSchedule,
    draw: &NoiseDraw,
) -> Result<f64> {
    if x0.rows() == 0 {
        return Err(Error::Invalid("diffusion loss needs a non-empty batch".into()));
    }
    let x_t = q_sample_batch(x0, &draw.t, &draw.eps, schedule)?;
    let pred = predictor.predict(&x_t, s, &draw.t)?;
    if pred.shape() != draw.eps.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs noise {:?}", pred.shape(), draw.eps.shape())));
    }
    let sq: f64 = pred.data().iter().zip(draw.eps.data()).map(|(p, e)| (p - e) * (p - e)).sum();
    Ok(sq / pred.data().len() as f64)
}

/// Ancestral DDPM chain from `x_T` down to `x̂_0` with `σ_t² = β_t` and no
/// noise on the final step. Rows are independent chains.
pub fn sample_augmentation<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    x_t_init: &Matrix,
    s: &Matrix,
    predictor: &P,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Matrix> {
    if x_t_init.shape() != s.shape() {
        return Err(Error::Shape(format!("x_T {:?} vs condition {:?}", x_t_init.shape(), s.shape())));
    }
    let (b, d) = x_t_init.shape();
    let mut x = x_t_init.clone();
    for t in (1..=schedule.steps()).rev() {
        let eps_hat = predictor.predict(&x, s, &vec![t; b])?;
        let coef = schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt();
        let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
        let sigma = schedule.beta(t).sqrt();
        let z = if t > 1 { Some(standard_normal(rng, b, d)) } else { None };
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            let mut next = inv_sqrt_alpha * (*v - coef * eps_hat.data()[i]);
            if let Some(z) = &z {
                next += sigma * z.data()[i];
            }
            *v = next;
        }
        if !x.is_finite() {
            return Err(Error::SamplingDiverged(t));
        }
    }
    Ok(x)
}

/// One generated view and where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedView {
    pub representation: Vec<f64>,
    pub prototype: usize,
    pub source: usize,
}

/// Generates one view per source row of `h`, conditioned on the centroid of
/// its assigned prototype.
#[allow(clippy::too_many_arguments)]
pub fn augment<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    h: &Matrix,
    labels: &[usize],
    centroids: &Matrix,
    init: SamplingInit,
    predictor: &P,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<AugmentedView>> {
    if labels.len() != h.rows() {
        return Err(Error::Shape(format!("{} labels for {} sources", labels.len(), h.rows())));
    }
    let s = centroids.select_rows(labels);
    let eps = standard_normal(rng, h.rows(), h.cols());
    let x_t = match init {
        SamplingInit::PureNoise => eps,
        SamplingInit::NoisedSource => q_sample_batch(h, &vec![schedule.steps(); h.rows()], &eps, schedule)?,
    };
    let out = sample_augmentation(&x_t, &s, predictor, schedule, rng)?;
    Ok((0..h.rows())
        .map(|r| AugmentedView { representation: out.row(r).to_vec(), prototype: labels[r], source: r })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Zero;
    impl NoisePredictor for Zero {
        fn predict(&self, x_t: &Matrix, _: &Matrix, _: &[usize]) -> Result<Matrix> {
            Ok(Matrix::zeros(x_t.rows(), x_t.cols()))
        }
    }

    #[test]
    fn schedule_products() {
        let s = make_schedule(1, 0.1, 0.1).unwrap();
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        let s = make_schedule(3, 0.1, 0.3).unwrap();
        assert!((s.alpha_bar(3) - 0.504).abs() < 1e-12);
        assert!((s.beta(2) - 0.2).abs() < 1e-15);
        let s = make_schedule(100, 1e-4, 0.02).unwrap();
        let mut prod = 1.0;
        for t in 1..=100 {
            prod *= 1.0 - s.beta(t);
            assert_eq!(s.alpha_bar(t), prod);
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
    }

    #[test]
    fn schedule_rejects_bad_betas() {
        assert!(make_schedule(0, 0.1, 0.2).is_err());
        assert!(make_schedule(5, 0.3, 0.2).is_err());
        assert!(make_schedule(5, 0.0, 0.2).is_err());
        assert!(make_schedule(5, 0.1, 1.0).is_err());
    }

    #[test]
    fn q_sample_cases() {
        let s = schedule_with_betas(&[0.75]).unwrap();
        let x = q_sample(&[1.0, 0.0], 1, &[0.0, 1.0], &s).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-15 && (x[1] - 0.75f64.sqrt()).abs() < 1e-15);
        assert_eq!(q_sample(&[3.0, -2.0], 0, &[9.0, 9.0], &s).unwrap(), vec![3.0, -2.0]);
        assert!(q_sample(&[0.0], 2, &[0.0], &s).is_err());
    }

    #[test]
    fn one_step_reverse_with_zero_denoiser() {
        let s = schedule_with_betas(&[0.2]).unwrap();
        let x1 = Matrix::row_vector(vec![0.4, -1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = sample_augmentation(&x1, &Matrix::zeros(1, 2), &Zero, &s, &mut rng).unwrap();
        let a = 0.8f64.sqrt();
        assert_eq!(out.data(), &[0.4 / a, -1.0 / a]);
    }

    #[test]
    fn divergence_is_reported_with_step() {
        struct Huge;
        impl NoisePredictor for Huge {
            fn predict(&self, x_t: &Matrix, _: &Matrix, _: &[usize]) -> Result<Matrix> {
                Ok(Matrix::filled(x_t.rows(), x_t.cols(), f64::INFINITY))
            }
        }
        let s = make_schedule(4, 0.1, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = sample_augmentation(&Matrix::zeros(1, 2), &Matrix::zeros(1, 2), &Huge, &s, &mut rng).unwrap_err();
        assert_eq!(err.to_string(), "diffusion sampling diverged at step 4");
    }

    #[test]
    fn timestep_embedding_shape() {
        let e = timestep_embedding(0, 8);
        assert_eq!(e, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        assert_ne!(timestep_embedding(3, 8), timestep_embedding(4, 8));
    }
}
