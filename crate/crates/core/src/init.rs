//! Core initializers: uniform, Gaussian, and the tail-sampled Gaussian whose
//! core-chain product approximates `N(0, 1 / (3n))`.
//!
//! The Gaussian closest in KL divergence to `Uniform(a, b)` has mean
//! `(a + b) / 2` and variance `(b - a)^2 / 12`; for the usual
//! `Uniform(-1/sqrt(n), 1/sqrt(n))` embedding init that is `N(0, 1/(3n))`.
//! A product of `d` i.i.d. Gaussians piles mass near zero, so the sampled
//! initializer redraws standard-normal entries until they leave
//! `[-threshold, threshold]` and then rescales each core.

use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::error::{Error, Result};
use crate::table::TtTable;

/// Redraw budget per entry before the sampler gives up.
pub const MAX_REDRAWS: usize = 10_000;

pub const DEFAULT_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingMode {
    /// Divide each entry by `sqrt(target)^(1/d)`.
    DivideRoot,
    /// Multiply each entry by `target^(1/(2d))`.
    Reciprocal,
    /// Like `Reciprocal`, then divide by the RMS of the truncated normal so
    /// the product of `d` entries has second moment `target`.
    MomentCorrected,
    /// Like `MomentCorrected`, then divide core `k` by `sqrt(R_k)` (its
    /// right rank), so each reconstructed row entry, a sum over
    /// `R_1 * ... * R_{d-1}` chain products, has second moment `target`.
    RankCorrected,
}

impl std::str::FromStr for ScalingMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "divide-root" => Ok(Self::DivideRoot),
            "reciprocal" => Ok(Self::Reciprocal),
            "moment-corrected" => Ok(Self::MomentCorrected),
            "rank-corrected" => Ok(Self::RankCorrected),
            other => Err(format!(
                "unknown scaling mode '{other}' (divide-root, reciprocal, moment-corrected, rank-corrected)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectionMode {
    /// Redraw while `|x| <= threshold`.
    TwoSided,
    /// Redraw while `x <= threshold`; keeps only the positive tail.
    OneSided,
}

impl std::str::FromStr for RejectionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "two-sided" => Ok(Self::TwoSided),
            "one-sided" => Ok(Self::OneSided),
            other => Err(format!(
                "unknown rejection mode '{other}' (two-sided, one-sided)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitKind {
    Uniform {
        low: f64,
        high: f64,
    },
    Gaussian {
        mean: f64,
        variance: f64,
    },
    SampledGaussian {
        threshold: f64,
        target_variance: f64,
        scaling: ScalingMode,
        rejection: RejectionMode,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub kind: InitKind,
    /// Embedding dimension `n` of the table being approximated.
    pub fan_in: usize,
}

impl fmt::Display for InitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            InitKind::Uniform { low, high } => write!(f, "uniform({low}, {high})"),
            InitKind::Gaussian { mean, variance } => write!(f, "gaussian({mean}, {variance})"),
            InitKind::SampledGaussian {
                threshold,
                target_variance,
                scaling,
                rejection,
            } => write!(
                f,
                "sampled-gaussian(threshold={threshold}, target={target_variance}, {scaling:?}, {rejection:?})"
            ),
        }
    }
}

/// Mean and variance of the Gaussian closest to `Uniform(a, b)`.
pub fn kl_optimal_gaussian(a: f64, b: f64) -> Result<(f64, f64)> {
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidInit(format!(
            "need a < b, got a = {a}, b = {b}"
        )));
    }
    Ok(((a + b) / 2.0, (b - a) * (b - a) / 12.0))
}

/// `E[X^2 | X in the rejection tail]` for a standard normal `X`.
///
/// Both tail shapes give `1 + t * phi(t) / Q(t)`.
pub fn tail_second_moment(threshold: f64) -> f64 {
    let t = threshold;
    let phi = (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let q = 0.5 * statrs::function::erf::erfc(t / std::f64::consts::SQRT_2);
    1.0 + t * phi / q
}

impl InitSpec {
    /// `Uniform(-1/sqrt(n), 1/sqrt(n))`.
    pub fn uniform_default(fan_in: usize) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            kind: InitKind::Uniform {
                low: -bound,
                high: bound,
            },
            fan_in,
        }
    }

    /// `N(0, 1/(3n))`.
    pub fn kl_gaussian(fan_in: usize) -> Self {
        Self {
            kind: InitKind::Gaussian {
                mean: 0.0,
                variance: 1.0 / (3.0 * fan_in as f64),
            },
            fan_in,
        }
    }

    /// Two-sided rejection at 2, moment-corrected to `1/(3n)`.
    pub fn sampled_gaussian(fan_in: usize) -> Self {
        Self::sampled_gaussian_with(
            fan_in,
            ScalingMode::MomentCorrected,
            RejectionMode::TwoSided,
        )
    }

    pub fn sampled_gaussian_with(
        fan_in: usize,
        scaling: ScalingMode,
        rejection: RejectionMode,
    ) -> Self {
        Self {
            kind: InitKind::SampledGaussian {
                threshold: DEFAULT_THRESHOLD,
                target_variance: 1.0 / (3.0 * fan_in as f64),
                scaling,
                rejection,
            },
            fan_in,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fan_in == 0 {
            return Err(Error::InvalidInit("fan_in must be positive".into()));
        }
        match self.kind {
            InitKind::Uniform { low, high } if !(low < high) => Err(Error::InvalidInit(format!(
                "uniform needs low < high, got ({low}, {high})"
            ))),
            InitKind::Gaussian { variance, .. } if !(variance > 0.0) => Err(Error::InvalidInit(
                format!("variance must be > 0, got {variance}"),
            )),
            InitKind::SampledGaussian {
                threshold,
                target_variance,
                ..
            } if !(threshold > 0.0) || !(target_variance > 0.0) => {
                Err(Error::InvalidInit(format!(
                "threshold and target variance must be > 0, got {threshold} and {target_variance}"
            )))
            }
            _ => Ok(()),
        }
    }

    /// Entry sampler for a chain of `tt_dim` cores.
    pub fn sampler(&self, tt_dim: usize) -> Result<EntrySampler> {
        self.validate()?;
        let d = tt_dim.max(1) as f64;
        Ok(match self.kind {
            InitKind::Uniform { low, high } => EntrySampler::Uniform(
                Uniform::new(low, high).map_err(|e| Error::InvalidInit(e.to_string()))?,
            ),
            InitKind::Gaussian { mean, variance } => EntrySampler::Gaussian(
                Normal::new(mean, variance.sqrt())
                    .map_err(|e| Error::InvalidInit(e.to_string()))?,
            ),
            InitKind::SampledGaussian {
                threshold,
                target_variance,
                scaling,
                rejection,
            } => {
                let scale = match scaling {
                    ScalingMode::DivideRoot => 1.0 / target_variance.sqrt().powf(1.0 / d),
                    ScalingMode::Reciprocal => target_variance.powf(1.0 / (2.0 * d)),
                    ScalingMode::MomentCorrected | ScalingMode::RankCorrected => {
                        target_variance.powf(1.0 / (2.0 * d)) / tail_second_moment(threshold).sqrt()
                    }
                };
                EntrySampler::Tail {
                    threshold,
                    rejection,
                    scale,
                }
            }
        })
    }
}

/// Draws single entries for one [`InitSpec`].
#[derive(Debug, Clone, Copy)]
pub enum EntrySampler {
    Uniform(Uniform<f64>),
    Gaussian(Normal<f64>),
    Tail {
        threshold: f64,
        rejection: RejectionMode,
        scale: f64,
    },
}

impl EntrySampler {
    /// Multiplier applied after drawing; 1 for the i.i.d. kinds.
    pub fn scale(&self) -> f64 {
        match self {
            EntrySampler::Tail { scale, .. } => *scale,
            _ => 1.0,
        }
    }

    /// Unscaled draw; `None` when the redraw budget runs out.
    pub fn draw_raw<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<f64> {
        match *self {
            EntrySampler::Uniform(u) => Some(u.sample(rng)),
            EntrySampler::Gaussian(g) => Some(g.sample(rng)),
            EntrySampler::Tail {
                threshold,
                rejection,
                ..
            } => {
                for _ in 0..=MAX_REDRAWS {
                    let x: f64 = StandardNormal.sample(rng);
                    let keep = match rejection {
                        RejectionMode::TwoSided => x.abs() > threshold,
                        RejectionMode::OneSided => x > threshold,
                    };
                    if keep {
                        return Some(x);
                    }
                }
                None
            }
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<f64> {
        self.draw_raw(rng).map(|x| x * self.scale())
    }
}

/// Per-core RNG stream: same `(seed, core)` always gives the same sequence.
pub fn core_rng(seed: u64, core: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(core as u64);
    rng
}

/// What [`init_tt_cores`] did to each core.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreInitStats {
    pub scale: f64,
    /// Smallest unscaled magnitude drawn.
    pub min_abs_raw: f64,
}

/// Fill every core of `table` from `spec`, deterministically in `seed`.
pub fn init_tt_cores<T: Element>(
    table: &mut TtTable<T>,
    spec: &InitSpec,
    seed: u64,
) -> Result<Vec<CoreInitStats>> {
    let sampler = spec.sampler(table.tt_dim())?;
    let rank_corrected = matches!(
        spec.kind,
        InitKind::SampledGaussian {
            scaling: ScalingMode::RankCorrected,
            ..
        }
    );
    let right_ranks: Vec<usize> = (0..table.tt_dim())
        .map(|k| table.plan().ranks[k + 1])
        .collect();
    let parallel = table.parameter_count() > 1 << 16;
    let fill = |k: usize, core: &mut [T]| -> Result<CoreInitStats> {
        let mut rng = core_rng(seed, k);
        let scale = if rank_corrected {
            sampler.scale() / (right_ranks[k] as f64).sqrt()
        } else {
            sampler.scale()
        };
        let mut min_abs_raw = f64::INFINITY;
        for v in core.iter_mut() {
            let raw = sampler
                .draw_raw(&mut rng)
                .ok_or(Error::RejectionCapExceeded {
                    core: k,
                    cap: MAX_REDRAWS,
                })?;
            min_abs_raw = min_abs_raw.min(raw.abs());
            *v = T::from_f64(raw * scale);
        }
        Ok(CoreInitStats { scale, min_abs_raw })
    };
    let cores = table.cores_mut();
    if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = cores
                .iter_mut()
                .enumerate()
                .map(|(k, core)| scope.spawn(move || fill(k, core)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("init worker panicked"))
                .collect()
        })
    } else {
        cores
            .iter_mut()
            .enumerate()
            .map(|(k, core)| fill(k, core))
            .collect()
    }
}

/// Fixed-width histogram normalized as a probability density.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub low: f64,
    pub high: f64,
    pub counts: Vec<u64>,
    /// Samples drawn, including any outside `[low, high]`.
    pub total: u64,
}

impl Histogram {
    pub fn bin_width(&self) -> f64 {
        (self.high - self.low) / self.counts.len() as f64
    }

    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        let w = self.bin_width();
        (self.low + w * i as f64, self.low + w * (i + 1) as f64)
    }

    pub fn density(&self, i: usize) -> f64 {
        self.counts[i] as f64 / (self.total as f64 * self.bin_width())
    }

    /// CSV with header `bin_left,bin_right,density`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "bin_left,bin_right,density")?;
        for i in 0..self.counts.len() {
            let (l, r) = self.bin_edges(i);
            writeln!(out, "{l},{r},{}", self.density(i))?;
        }
        Ok(())
    }
}

pub const MIN_HISTOGRAM_SAMPLES: usize = 100_000;

/// Empirical density of `X_1 * ... * X_d` with i.i.d. entries drawn (and
/// scaled) as `spec` would for a `d`-core table.
///
/// Without an explicit `range` the bins span the observed min..max.
pub fn product_distribution_histogram(
    spec: &InitSpec,
    d: usize,
    num_samples: usize,
    num_bins: usize,
    range: Option<(f64, f64)>,
    seed: u64,
) -> Result<Histogram> {
    if num_samples < MIN_HISTOGRAM_SAMPLES {
        return Err(Error::InvalidInit(format!(
            "need at least {MIN_HISTOGRAM_SAMPLES} samples, got {num_samples}"
        )));
    }
    if num_bins == 0 || d == 0 {
        return Err(Error::InvalidInit(
            "need at least one bin and one factor".into(),
        ));
    }
    let samples = product_samples(spec, d, num_samples, seed)?;
    let (low, high) = match range {
        Some((l, h)) if l < h => (l, h),
        Some((l, h)) => {
            return Err(Error::InvalidInit(format!(
                "empty histogram range ({l}, {h})"
            )))
        }
        None => {
            let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if lo < hi {
                (lo, hi)
            } else {
                (lo - 0.5, lo + 0.5)
            }
        }
    };
    let mut counts = vec![0u64; num_bins];
    let width = (high - low) / num_bins as f64;
    for &z in &samples {
        if z < low || z > high {
            continue;
        }
        let bin = (((z - low) / width) as usize).min(num_bins - 1);
        counts[bin] += 1;
    }
    Ok(Histogram {
        low,
        high,
        counts,
        total: samples.len() as u64,
    })
}

/// Raw Monte-Carlo draws of the `d`-fold product.
pub fn product_samples(
    spec: &InitSpec,
    d: usize,
    num_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let sampler = spec.sampler(d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..num_samples)
        .map(|_| {
            (0..d).try_fold(1.0, |acc, _| {
                sampler
                    .draw(&mut rng)
                    .map(|x| acc * x)
                    .ok_or(Error::RejectionCapExceeded {
                        core: 0,
                        cap: MAX_REDRAWS,
                    })
            })
        })
        .collect()
}
