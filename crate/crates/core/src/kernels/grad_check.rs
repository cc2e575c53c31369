use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{KernelError, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates_checked: usize,
}

/// Which coordinates to probe.
#[derive(Debug, Clone, Copy)]
pub enum Coordinates {
    All,
    /// Up to `count` coordinates per parameter, drawn with the given seed.
    Sample { count: usize, seed: u64 },
}

/// Compares the analytic gradient against central finite differences.
///
/// `loss` must evaluate the scalar objective at the current parameter values and
/// write its analytic gradient into the store's gradient slots (the store is
/// zeroed before each call). Error is `|analytic − fd| / max(1, |fd|)`.
pub fn grad_check<F, E>(
    store: &mut ParamStore,
    eps: f64,
    coords: Coordinates,
    mut loss: F,
) -> Result<GradCheckReport, KernelError>
where
    F: FnMut(&mut ParamStore) -> Result<f64, E>,
    E: std::fmt::Display,
{
    let mut eval = |store: &mut ParamStore| -> Result<f64, KernelError> {
        store.zero_grad();
        let v = loss(store).map_err(|e| KernelError::Callback(e.to_string()))?;
        if !v.is_finite() {
            return Err(KernelError::NonFinite("loss".into()));
        }
        Ok(v)
    };

    eval(store)?;
    let analytic: Vec<_> = store.params().iter().map(|p| p.grad.clone()).collect();

    let mut rng = match coords {
        Coordinates::Sample { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Coordinates::All => None,
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates_checked: 0,
    };
    for (idx, grad) in analytic.iter().enumerate() {
        let len = grad.data().len();
        let picks: Vec<usize> = match (&mut rng, coords) {
            (Some(rng), Coordinates::Sample { count, .. }) if count < len => {
                let mut v = sample(rng, len, count).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        for flat in picks {
            let original = store.value(idx).data()[flat];
            store.value_mut(idx).data_mut()[flat] = original + eps;
            let plus = eval(store)?;
            store.value_mut(idx).data_mut()[flat] = original - eps;
            let minus = eval(store)?;
            store.value_mut(idx).data_mut()[flat] = original;

            let fd = (plus - minus) / (2.0 * eps);
            let err = (grad.data()[flat] - fd).abs() / fd.abs().max(1.0);
            report.coordinates_checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.params()[idx].name.clone(), flat));
            }
        }
    }
    // Leave the analytic gradient in place for the caller.
    eval(store)?;
    Ok(report)
}
