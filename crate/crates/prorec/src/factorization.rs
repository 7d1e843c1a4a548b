//! Alternating least squares for the regularized full-matrix factorization
//! objective `||X - U Vᵀ||_F² + ζ(||U||_F² + ||V||_F²)`.
//!
//! Zeros are treated as observed zeros, so every half-epoch shares one normal
//! matrix (`VᵀV + ζI` or `UᵀU + ζI`): it is factored once and each embedding
//! row is then solved independently (and in parallel).

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, solve_with_factor};
use crate::model::{FactorModel, InteractionMatrix};

/// Settings for [`als_fit`].
#[derive(Debug, Clone)]
pub struct AlsSettings {
    /// Number of full alternation epochs (one U-solve plus one V-solve each).
    pub n_epochs: usize,
    /// Ridge weight ζ ≥ 0.
    pub zeta: f64,
    /// Seed for the random initialization.
    pub seed: u64,
    /// Standard deviation of the zero-mean normal initialization.
    pub init_scale: f64,
}

impl Default for AlsSettings {
    fn default() -> Self {
        AlsSettings {
            n_epochs: 10,
            zeta: 1e-3,
            seed: 0,
            init_scale: 0.1,
        }
    }
}

impl AlsSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_epochs < 1 {
            return Err(Error::InvalidArgument(
                "als n_epochs must be at least 1".into(),
            ));
        }
        if !self.zeta.is_finite() || self.zeta < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "als zeta must be finite and >= 0, got {}",
                self.zeta
            )));
        }
        if !self.init_scale.is_finite() || self.init_scale <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "als init_scale must be > 0, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }
}

/// Draws a fresh model with N(0, scale²) entries; U is filled row-major
/// first, then V, so a given seed always produces the same model.
pub fn init_model(
    n_users: usize,
    n_items: usize,
    d: usize,
    zeta: f64,
    init_scale: f64,
    seed: u64,
) -> Result<FactorModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, init_scale).map_err(|e| {
        Error::InvalidArgument(format!("invalid init_scale {init_scale}: {e}"))
    })?;
    let u = Array2::from_shape_fn((n_users, d), |_| normal.sample(&mut rng));
    let v = Array2::from_shape_fn((n_items, d), |_| normal.sample(&mut rng));
    FactorModel::new(u, v, zeta)
}

/// Fits a factor model by `settings.n_epochs` exact alternating solves.
///
/// The objective value is non-increasing across epochs because each half-step
/// is the exact ridge-regularized minimizer with the other side fixed.
pub fn als_fit(x: &InteractionMatrix, settings: &AlsSettings, d: usize) -> Result<FactorModel> {
    settings.validate()?;
    if d < 1 {
        return Err(Error::InvalidArgument(
            "embedding dimension d must be at least 1".into(),
        ));
    }
    let mut model = init_model(
        x.n_users(),
        x.n_items(),
        d,
        settings.zeta,
        settings.init_scale,
        settings.seed,
    )?;
    for _ in 0..settings.n_epochs {
        model = als_epoch(model, x)?;
    }
    Ok(model)
}

/// One alternation: solve all user rows against the fixed item matrix, then
/// all item rows against the fresh user matrix. The objective never increases
/// (up to rounding).
pub fn als_epoch(model: FactorModel, x: &InteractionMatrix) -> Result<FactorModel> {
    let (m, n) = (model.n_users(), model.n_items());
    if x.n_users() != m || x.n_items() != n {
        return Err(Error::ShapeMismatch {
            context: "als_epoch",
            expected: (m, n),
            got: (x.n_users(), x.n_items()),
        });
    }
    let zeta = model.zeta();
    let mut model = model;
    {
        let (u, v) = model.parts_mut();
        solve_side(u, v, x, zeta, Side::Users)?;
        solve_side(v, u, x, zeta, Side::Items)?;
    }
    Ok(model)
}

enum Side {
    Users,
    Items,
}

/// Solves `(FᵀF + ζI) tᵢ = Fᵀ xᵢ` for every row `tᵢ` of `target`, where `F`
/// is the fixed side and `xᵢ` is user row / item column `i` of `X`.
fn solve_side(
    target: &mut Array2<f64>,
    fixed: &Array2<f64>,
    x: &InteractionMatrix,
    zeta: f64,
    side: Side,
) -> Result<()> {
    let d = fixed.ncols();
    let mut gram = fixed.t().dot(fixed);
    for k in 0..d {
        gram[[k, k]] += zeta;
    }
    let factor = match cholesky(&gram) {
        Ok(l) => l,
        Err(first_err) if zeta == 0.0 => {
            // A rank-deficient fixed side makes the unregularized normal
            // equations singular; retry once with a tiny ridge so sweeps on
            // degenerate data keep running.
            log::warn!(
                "normal equations singular with zeta = 0 ({first_err}); retrying with ridge 1e-8"
            );
            for k in 0..d {
                gram[[k, k]] += 1e-8;
            }
            cholesky(&gram).map_err(|e| match e {
                Error::Numerical { detail, .. } => Error::Numerical {
                    context: "als_epoch",
                    detail: format!(
                        "normal equations remain singular after ridge retry; offending index from factorization: {detail}"
                    ),
                },
                other => other,
            })?
        }
        Err(e) => {
            return Err(match e {
                Error::Numerical { detail, .. } => Error::Numerical {
                    context: "als_epoch",
                    detail: format!("normal equations singular; {detail}"),
                },
                other => other,
            })
        }
    };

    let fixed_flat = fixed
        .as_slice()
        .expect("embedding matrices use standard layout");
    let out = target
        .as_slice_mut()
        .expect("embedding matrices use standard layout");
    out.par_chunks_mut(d).enumerate().for_each(|(i, row)| {
        row.fill(0.0);
        let entries = match side {
            Side::Users => x.row(i),
            Side::Items => x.col(i),
        };
        for &(j, w) in entries {
            let f = &fixed_flat[j as usize * d..(j as usize + 1) * d];
            for k in 0..d {
                row[k] += w * f[k];
            }
        }
        solve_with_factor(&factor, row);
    });
    Ok(())
}
