//! Central finite-difference check of tape gradients.
//!
//! The numeric side only evaluates forward passes, so it is independent of
//! every backward rule it verifies.

use super::{GradMap, ParamStore, ParamVars, Tape, Var};

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
    /// Entries whose `±step` probes landed on different sides of a kink.
    pub skipped_kinks: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Denominator floor for near-zero gradients.
    pub floor: f64,
    /// Check at most this many entries per parameter tensor (evenly spaced).
    pub max_entries_per_param: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            max_entries_per_param: usize::MAX,
        }
    }
}

/// Analytic gradient of `loss` for every parameter in `store`.
pub fn analytic_grads<E>(
    store: &ParamStore,
    loss: &impl Fn(&mut Tape, &ParamVars) -> Result<Var, E>,
) -> Result<(f64, GradMap), E>
where
    E: From<super::AutodiffError>,
{
    let mut tape = Tape::new();
    let pv = store.bind(&mut tape);
    let l = loss(&mut tape, &pv)?;
    tape.backward(l)?;
    Ok((tape.value(l).item(), pv.grads(&tape)))
}

fn eval<E>(
    store: &ParamStore,
    loss: &impl Fn(&mut Tape, &ParamVars) -> Result<Var, E>,
) -> Result<(f64, u64), E> {
    let mut tape = Tape::new();
    let pv = store.bind(&mut tape);
    let l = loss(&mut tape, &pv)?;
    Ok((tape.value(l).item(), tape.branch_signature()))
}

/// Compares analytic and central-difference gradients of a scalar loss with
/// respect to every parameter entry in `store`.
pub fn check_gradients<E>(
    store: &ParamStore,
    opts: GradCheckOptions,
    loss: impl Fn(&mut Tape, &ParamVars) -> Result<Var, E>,
) -> Result<GradCheckReport, E>
where
    E: From<super::AutodiffError>,
{
    let (_, grads) = analytic_grads(store, &loss)?;
    let mut report = GradCheckReport::default();
    let mut probe = store.clone();
    let names: Vec<String> = store.iter().map(|(k, _)| k.clone()).collect();
    for name in names {
        let n = store.get(&name).unwrap().len();
        let stride = n.div_ceil(opts.max_entries_per_param.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let orig = store.get(&name).unwrap().values()[i];
            probe.get_mut(&name).unwrap().values_mut()[i] = orig + opts.step;
            let (fp, sp) = eval(&probe, &loss)?;
            probe.get_mut(&name).unwrap().values_mut()[i] = orig - opts.step;
            let (fm, sm) = eval(&probe, &loss)?;
            probe.get_mut(&name).unwrap().values_mut()[i] = orig;
            if sp != sm {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * opts.step);
            let analytic = grads[&name][i];
            let rel =
                (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            if rel > report.max_rel_err || report.worst_param.is_empty() {
                report.max_rel_err = rel;
                report.worst_param = name.clone();
                report.worst_index = i;
                report.analytic_at_worst = analytic;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}
