//! Central finite-difference verification of tape gradients.

use std::fmt;

use super::{AutodiffError, ParamSet, ParamVars, Tape, Var};

/// Largest relative error a passing check may report.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Worst entry of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub index: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Per-parameter results, worst first.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < GRADCHECK_TOLERANCE
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<32} {:>10} {:>14} {:>14} {:>10}",
            "parameter", "index", "analytic", "numeric", "rel_err"
        )?;
        for e in &self.entries {
            writeln!(
                f,
                "{:<32} {:>10} {:>14.6e} {:>14.6e} {:>10.2e}",
                e.name,
                format!("({},{})", e.index.0, e.index.1),
                e.analytic,
                e.numeric,
                e.rel_error
            )?;
        }
        Ok(())
    }
}

/// Compares the tape gradient of `loss` against central differences with step `h`.
///
/// `loss` builds a scalar on a fresh tape from the registered parameters and
/// must be deterministic.
pub fn gradient_check<F, E>(params: &ParamSet, h: f64, loss: F) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape, &ParamVars) -> Result<Var, E>,
    E: From<AutodiffError>,
{
    let eval = |p: &ParamSet| -> Result<f64, E> {
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let out = loss(&mut tape, &vars)?;
        if out.shape() != (1, 1) {
            return Err(AutodiffError::NotScalar { shape: out.shape() }.into());
        }
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let out = loss(&mut tape, &vars)?;
    let grads = vars.collect(&tape.backward(out)?);

    let mut probe = params.clone();
    let mut entries = Vec::with_capacity(params.len());
    for (name, value) in params.iter() {
        let analytic = &grads[name];
        let mut worst: Option<GradCheckEntry> = None;
        for i in 0..value.rows() {
            for j in 0..value.cols() {
                let x = value[(i, j)];
                probe.get_mut(name).expect("same keys").as_mut_slice()[i * value.cols() + j] = x + h;
                let up = eval(&probe)?;
                probe.get_mut(name).expect("same keys").as_mut_slice()[i * value.cols() + j] = x - h;
                let down = eval(&probe)?;
                probe.get_mut(name).expect("same keys").as_mut_slice()[i * value.cols() + j] = x;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[(i, j)];
                let err = relative_error(a, numeric);
                if worst.as_ref().is_none_or(|w| err > w.rel_error) {
                    worst = Some(GradCheckEntry {
                        name: name.to_string(),
                        index: (i, j),
                        analytic: a,
                        numeric,
                        rel_error: err,
                    });
                }
            }
        }
        entries.extend(worst);
    }
    entries.sort_by(|a, b| b.rel_error.total_cmp(&a.rel_error));
    Ok(GradCheckReport { entries })
}
