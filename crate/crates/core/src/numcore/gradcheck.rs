//! Central finite-difference checks of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Gradients, ParamStore};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Coordinates probed per parameter (all of them when the parameter is smaller).
    pub probes: usize,
    /// Denominator floor of the relative error, so vanishing gradients compare absolutely.
    pub floor: f64,
    /// Relative precision assumed for one loss evaluation. The floor is
    /// raised to `|loss| * loss_noise / step` so gradients that vanish
    /// analytically are not judged against pure roundoff.
    pub loss_noise: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            probes: 25,
            floor: 1e-6,
            loss_noise: 1e-11,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub probes: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }

    pub fn failures(&self, tolerance: f64) -> Vec<&ParamCheck> {
        self.params
            .iter()
            .filter(|p| !(p.max_rel_error < tolerance))
            .collect()
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the gradients returned by `model` against central differences of
/// its loss. `model` evaluates the loss and its analytic gradients at the
/// current parameter values.
pub fn grad_check<F>(
    params: &mut ParamStore<f64>,
    mut model: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>) -> Result<(f64, Gradients<f64>)>,
{
    let (loss, grads) = model(params)?;
    let floor = cfg.floor.max(loss.abs() * cfg.loss_noise / cfg.step);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
    let mut report = Vec::with_capacity(ids.len());
    for id in ids {
        let len = params.get(id).value.len();
        let coords: Vec<usize> = if len <= cfg.probes {
            (0..len).collect()
        } else {
            let mut c = sample(&mut rng, len, cfg.probes).into_vec();
            c.sort_unstable();
            c
        };
        let analytic = grads.get(id).map(|g| g.data().to_vec());
        let mut worst = 0.0f64;
        for &c in &coords {
            let orig = params.get(id).value.data()[c];
            params.get_mut(id).value.data_mut()[c] = orig + cfg.step;
            let (plus, _) = model(params)?;
            params.get_mut(id).value.data_mut()[c] = orig - cfg.step;
            let (minus, _) = model(params)?;
            params.get_mut(id).value.data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic.as_ref().map_or(0.0, |g| g[c]);
            let err = relative_error(a, numeric, floor);
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
        }
        report.push(ParamCheck {
            name: params.get(id).name.clone(),
            probes: coords.len(),
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport { params: report })
}
