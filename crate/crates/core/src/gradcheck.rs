//! Central finite-difference checks for tape gradients.
//!
//! The numeric side never touches the reverse sweep: it only re-runs the
//! forward closure with perturbed parameter values.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{ParamId, ParamStore};

pub const DEFAULT_STEP: f64 = 1e-5;

/// One compared coordinate.
#[derive(Debug, Clone)]
pub struct Probe {
    pub param: String,
    pub offset: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    /// `|a − n| / max(|a|, |n|, floor)`; the floor keeps coordinates with
    /// near-zero gradient from dominating through cancellation noise.
    pub fn relative_error(&self, floor: f64) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs()).max(floor);
        (self.analytic - self.numeric).abs() / scale
    }
}

/// Compares analytic gradients from `forward` against central differences
/// at the given coordinates.
pub fn check<F>(
    store: &mut ParamStore,
    coords: &[(ParamId, usize)],
    step: f64,
    mut forward: F,
) -> Result<Vec<Probe>>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = forward(&mut tape, store)?;
    tape.backward(loss, store)?;
    let analytic: Vec<f64> = coords
        .iter()
        .map(|&(id, k)| store.get(id).grad().map_or(0.0, |g| g[k]))
        .collect();

    let mut probes = Vec::with_capacity(coords.len());
    for (&(id, k), a) in coords.iter().zip(analytic) {
        let orig = store.get(id).data()[k];
        store.get_mut(id).data_mut()[k] = orig + step;
        let plus = eval(store, &mut forward)?;
        store.get_mut(id).data_mut()[k] = orig - step;
        let minus = eval(store, &mut forward)?;
        store.get_mut(id).data_mut()[k] = orig;
        probes.push(Probe {
            param: store.name(id).to_string(),
            offset: k,
            analytic: a,
            numeric: (plus - minus) / (2.0 * step),
        });
    }
    Ok(probes)
}

/// Every coordinate of every parameter.
pub fn all_coords(store: &ParamStore) -> Vec<(ParamId, usize)> {
    store
        .iter()
        .flat_map(|(id, _, t)| (0..t.len()).map(move |k| (id, k)))
        .collect()
}

pub fn max_relative_error(probes: &[Probe], floor: f64) -> f64 {
    probes
        .iter()
        .map(|p| p.relative_error(floor))
        .fold(0.0, f64::max)
}

fn eval<F>(store: &ParamStore, forward: &mut F) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = forward(&mut tape, store)?;
    Ok(tape.scalar(v))
}
