//! Synthetic data: uniform samples from regions of a 3-D cone, spirals on a
//! cone, draws through back-fitting with truncated normal residuals, and
//! Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::prelude::*;
use crate::{backfit, HyperconeStage, PncModel, ReconstructionRequest, ResidualKind};

/// Rejection-sampling attempts per draw before giving up.
pub const MAX_REJECTIONS: usize = 10_000;
/// Redraws of an observation whose noisy copy lands on the apex.
pub const MAX_NOISE_RETRIES: usize = 100;

/// A patch of the cone about `e_3`: sizes and base angles are uniform on
/// their ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSpec {
    pub opening: f64,
    pub radial_range: [f64; 2],
    pub angular_range: [f64; 2],
    pub count: usize,
}

impl RegionSpec {
    pub fn validate(&self) -> Result<()> {
        let [r_lo, r_hi] = self.radial_range;
        let [t_lo, t_hi] = self.angular_range;
        if !(r_lo > 0.0 && r_lo <= r_hi && r_hi.is_finite()) {
            return Err(PncError::param(format!("radial range [{r_lo}, {r_hi}] must satisfy 0 < lo ≤ hi")));
        }
        if !(t_lo >= 0.0 && t_lo < t_hi && t_hi <= TAU) {
            return Err(PncError::param(format!("angular range [{t_lo}, {t_hi}] must satisfy 0 ≤ lo < hi ≤ 2π")));
        }
        if !(self.opening > 0.0 && self.opening <= FRAC_PI_2) {
            return Err(PncError::param(format!("opening {} outside (0, π/2]", self.opening)));
        }
        Ok(())
    }
}

/// The three regions of the cone-surface experiment: sizes in `[1, 2]` or
/// `[4, 5]`, base angles in `[0, π]` or `[π, 2π]`.
pub fn figure_regions(opening: f64, count: usize) -> Vec<RegionSpec> {
    let region = |radial_range, angular_range| RegionSpec { opening, radial_range, angular_range, count };
    vec![region([1.0, 2.0], [0.0, PI]), region([4.0, 5.0], [0.0, PI]), region([4.0, 5.0], [PI, TAU])]
}

/// Point of the cone about `e_3` at size `r` and base angle `theta`.
pub fn cone_point(opening: f64, r: f64, theta: f64) -> [f64; 3] {
    let (s, c) = opening.sin_cos();
    [r * s * theta.cos(), r * s * theta.sin(), r * c]
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Samples every region in order; labels are 1-based region indices.
pub fn sample_cone_regions(regions: &[RegionSpec], seed: u64) -> Result<(Matrix, Vec<usize>)> {
    for r in regions {
        r.validate()?;
    }
    let n: usize = regions.iter().map(|r| r.count).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Matrix::zeros(3, n);
    let mut labels = Vec::with_capacity(n);
    let mut j = 0;
    for (k, region) in regions.iter().enumerate() {
        for _ in 0..region.count {
            let r = uniform(&mut rng, region.radial_range[0], region.radial_range[1]);
            let theta = uniform(&mut rng, region.angular_range[0], region.angular_range[1]);
            out.set_column(j, &Vector::from_column_slice(&cone_point(region.opening, r, theta)));
            labels.push(k + 1);
            j += 1;
        }
    }
    Ok((out, labels))
}

/// `n` points with sizes and base angles evenly spaced over their ranges.
pub fn sample_spiral(opening: f64, r_range: [f64; 2], theta_range: [f64; 2], n: usize) -> Result<Matrix> {
    if n < 2 {
        return Err(PncError::param(format!("a spiral needs at least 2 points, got {n}")));
    }
    if !(opening > 0.0 && opening <= FRAC_PI_2) {
        return Err(PncError::param(format!("opening {opening} outside (0, π/2]")));
    }
    if !(r_range[0] > 0.0 && r_range[0] < r_range[1]) {
        return Err(PncError::param("spiral sizes need 0 < lo < hi"));
    }
    if !(theta_range[0] < theta_range[1]) {
        return Err(PncError::param("spiral angles need lo < hi"));
    }
    let mut out = Matrix::zeros(3, n);
    let last = (n - 1) as f64;
    for j in 0..n {
        let t = j as f64 / last;
        let r = r_range[0] + t * (r_range[1] - r_range[0]);
        let theta = theta_range[0] + t * (theta_range[1] - theta_range[0]);
        out.set_column(j, &Vector::from_column_slice(&cone_point(opening, r, theta)));
    }
    Ok(out)
}

/// Truncated normal residual law with standard deviation
/// `sd + sd_per_size·r` and support `±(bound + bound_per_size·r)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualLaw {
    pub sd: f64,
    pub sd_per_size: f64,
    pub bound: f64,
    pub bound_per_size: f64,
}

impl ResidualLaw {
    pub fn constant(sd: f64, bound: f64) -> Self {
        Self { sd, sd_per_size: 0.0, bound, bound_per_size: 0.0 }
    }

    fn validate(&self) -> Result<()> {
        let fields = [self.sd, self.sd_per_size, self.bound, self.bound_per_size];
        if fields.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(PncError::param(format!("residual law {self:?} needs finite nonnegative parameters")));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng, r: f64) -> Result<f64> {
        let sd = self.sd + self.sd_per_size * r;
        let bound = self.bound + self.bound_per_size * r;
        if sd == 0.0 {
            return Ok(0.0);
        }
        let normal = Normal::new(0.0, sd).map_err(|e| PncError::param(format!("{e}")))?;
        for _ in 0..MAX_REJECTIONS {
            let x = normal.sample(rng);
            if x.abs() <= bound {
                return Ok(x);
            }
        }
        Err(PncError::param(format!("truncation to ±{bound} accepts almost no draws from N(0, {sd}²)")))
    }
}

/// Data drawn by back-fitting random residuals through a fixed model.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub model: PncModel,
    /// Sizes are uniform on this range.
    pub size_range: [f64; 2],
    /// One law per residual, in score-column order: `residual_laws[0]`
    /// drives the final stage and the last entry drives stage 1.
    pub residual_laws: Vec<ResidualLaw>,
    pub n: usize,
    pub seed: u64,
}

impl GeneratorSpec {
    /// The four-dimensional design: axes `(½,½,½,½)`, `(1,1,1)/√3`,
    /// `(1,1)/√2`, openings `(π/6, π/4)`, sizes `U(10, 20)`, and residuals
    /// `ξ₁ ~ N(0, (πr/3)²)` on `[−πr, πr]`, `ξ₂ ~ N(0, 1)` on `[−α₂r, α₂r]`,
    /// `ξ₃ ~ N(0, 0.3²)` on `[−α₁r, α₁r]`.
    pub fn table1(n: usize, seed: u64) -> Self {
        let (a1, a2) = (PI / 6.0, PI / 4.0);
        let axis = |xs: &[f64]| {
            let v = Vector::from_column_slice(xs);
            let n = v.norm();
            v / n
        };
        let model = PncModel::new(
            vec![
                HyperconeStage { axis: axis(&[0.5, 0.5, 0.5, 0.5]), opening: a1 },
                HyperconeStage { axis: axis(&[1.0, 1.0, 1.0]), opening: a2 },
                HyperconeStage { axis: axis(&[1.0, 1.0]), opening: 0.0 },
            ],
            ResidualKind::Riemannian,
        )
        .expect("fixed design is a valid model");
        let residual_laws = vec![
            ResidualLaw { sd: 0.0, sd_per_size: PI / 3.0, bound: 0.0, bound_per_size: PI },
            ResidualLaw { sd: 1.0, sd_per_size: 0.0, bound: 0.0, bound_per_size: a2 },
            ResidualLaw { sd: 0.3, sd_per_size: 0.0, bound: 0.0, bound_per_size: a1 },
        ];
        Self { model, size_range: [10.0, 20.0], residual_laws, n, seed }
    }
}

pub fn sample_from_model(spec: &GeneratorSpec) -> Result<Matrix> {
    let d = spec.model.reduced_dim();
    if spec.residual_laws.len() != d {
        return Err(PncError::DimensionMismatch {
            context: "residual laws",
            expected: d,
            found: spec.residual_laws.len(),
        });
    }
    for law in &spec.residual_laws {
        law.validate()?;
    }
    let [lo, hi] = spec.size_range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(PncError::param(format!("size range [{lo}, {hi}] must satisfy 0 < lo ≤ hi")));
    }
    let factors = spec.model.scale_factors();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut scores = Matrix::zeros(spec.n, d);
    let mut sizes = Vector::zeros(spec.n);
    for i in 0..spec.n {
        let r = uniform(&mut rng, lo, hi);
        sizes[i] = r;
        for (j, law) in spec.residual_laws.iter().enumerate() {
            let stage = d - 1 - j;
            scores[(i, j)] = factors[stage] * law.draw(&mut rng, r)?;
        }
    }
    backfit(&ReconstructionRequest { model: &spec.model, scores, sizes, keep: d })
}

/// Adds independent `N(0, σ²)` noise to every coordinate. A column whose
/// noisy copy falls within the apex threshold is redrawn.
pub fn add_ambient_noise(data: &Matrix, sigma: f64, seed: u64) -> Result<Matrix> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(PncError::param(format!("noise level must be positive, got {sigma}")));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| PncError::param(format!("{e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = data.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let original = data.column(j);
        let mut tries = 0;
        loop {
            for (o, x) in col.iter_mut().zip(original.iter()) {
                *o = x + normal.sample(&mut rng);
            }
            if col.norm() >= crate::geometry::APEX_EPS {
                break;
            }
            tries += 1;
            if tries >= MAX_NOISE_RETRIES {
                return Err(PncError::Degenerate(format!(
                    "observation {j} kept landing on the apex after {MAX_NOISE_RETRIES} noise draws"
                )));
            }
        }
    }
    Ok(out)
}
