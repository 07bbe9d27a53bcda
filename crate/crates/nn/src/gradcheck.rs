//! Central finite-difference verification of analytic gradients.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::params::{Bound, ParameterSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Gradients keyed by parameter name.
pub type NamedGrads = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Coordinates left out because the stencil straddles a kink.
    pub skipped: usize,
}

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn eval<F>(params: &ParameterSet, f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, params)?;
    let loss = f(&mut tape, &bound)?;
    Ok(tape.value(loss).data()[0])
}

pub fn analytic_gradient<F>(params: &ParameterSet, f: &F) -> Result<NamedGrads>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let mut work = params.clone();
    work.zero_grads();
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, &work)?;
    let loss = f(&mut tape, &bound)?;
    work.backward(&tape, &bound, loss)?;
    Ok(work
        .iter()
        .map(|(n, p)| (n.clone(), p.grad.clone()))
        .collect())
}

pub fn numeric_gradient<F>(params: &ParameterSet, h: f64, f: &F) -> Result<NamedGrads>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let mut work = params.clone();
    let names: Vec<String> = params.names().cloned().collect();
    let mut out = NamedGrads::new();
    for name in names {
        let len = work.get(&name)?.value.len();
        let mut g = Tensor::zeros(work.get(&name)?.value.shape());
        for i in 0..len {
            let orig = work.get(&name)?.value.data()[i];
            work.get_mut(&name)?.value.data_mut()[i] = orig + h;
            let plus = eval(&work, f)?;
            work.get_mut(&name)?.value.data_mut()[i] = orig - h;
            let minus = eval(&work, f)?;
            work.get_mut(&name)?.value.data_mut()[i] = orig;
            g.data_mut()[i] = (plus - minus) / (2.0 * h);
        }
        out.insert(name, g);
    }
    Ok(out)
}

pub fn compare(analytic: &NamedGrads, numeric: &NamedGrads) -> GradCheck {
    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    for (name, a) in analytic {
        let Some(n) = numeric.get(name) else { continue };
        for (i, (av, nv)) in a.data().iter().zip(n.data()).enumerate() {
            let e = relative_error(*av, *nv);
            report.checked += 1;
            if report.worst.is_none() || e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    report
}

/// Compares backward-pass gradients of `f` against central differences
/// with step `h` on every scalar of every parameter.
pub fn finite_diff_check<F>(params: &ParameterSet, h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let analytic = analytic_gradient(params, &f)?;
    let numeric = numeric_gradient(params, h, &f)?;
    Ok(compare(&analytic, &numeric))
}

/// Coordinates whose central differences at `h` and `h/2` disagree by more
/// than `rel_tol·(|c_h| + |c_{h/2}|) + abs_tol`, i.e. where `f` is not
/// differentiable across the stencil (a ReLU or absolute-value kink).
pub fn kinked_coordinates(coarse: &NamedGrads, fine: &NamedGrads, rel_tol: f64, abs_tol: f64) -> BTreeMap<String, Vec<bool>> {
    coarse
        .iter()
        .map(|(name, c)| {
            let f = fine.get(name).map(|t| t.data().to_vec()).unwrap_or_default();
            let mask = c
                .data()
                .iter()
                .zip(f.iter().chain(std::iter::repeat(&f64::NAN)))
                .map(|(a, b)| !((a - b).abs() <= rel_tol * (a.abs() + b.abs()) + abs_tol))
                .collect();
            (name.clone(), mask)
        })
        .collect()
}

/// [`finite_diff_check`] restricted to coordinates where `f` is smooth on
/// the stencil; the rest are counted in [`GradCheck::skipped`]. The screen's
/// absolute tolerance includes the round-off floor `64·ε·|f|/h` of a
/// central difference.
pub fn finite_diff_check_smooth<F>(params: &ParameterSet, h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let analytic = analytic_gradient(params, &f)?;
    let numeric = numeric_gradient(params, h, &f)?;
    let half = numeric_gradient(params, h / 2.0, &f)?;
    let noise = 64.0 * f64::EPSILON * eval(params, &f)?.abs() / h;
    let kinked = kinked_coordinates(&numeric, &half, 1e-6, 1e-9 + noise);
    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    for (name, a) in &analytic {
        let (Some(n), Some(mask)) = (numeric.get(name), kinked.get(name)) else { continue };
        for (i, (av, nv)) in a.data().iter().zip(n.data()).enumerate() {
            if mask[i] {
                report.skipped += 1;
                continue;
            }
            let e = relative_error(*av, *nv);
            report.checked += 1;
            if report.worst.is_none() || e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_setup() -> ParameterSet {
        let mut p = ParameterSet::new(0);
        p.insert("w", Tensor::vector(vec![0.5, -1.5, 2.0])).unwrap();
        p
    }

    fn weighted_sum(tape: &mut Tape, b: &Bound) -> Result<Var> {
        let w = b.var("w")?;
        let c = tape.constant(Tensor::vector(vec![1.0, 2.0, -3.0]))?;
        let y = tape.mul(w, c)?;
        tape.sum(y)
    }

    #[test]
    fn linear_function_is_exact() {
        let r = finite_diff_check(&linear_setup(), 1e-5, weighted_sum).unwrap();
        assert!(r.max_rel_err < 1e-9, "{r:?}");
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let p = linear_setup();
        let mut analytic = analytic_gradient(&p, &weighted_sum).unwrap();
        let numeric = numeric_gradient(&p, 1e-5, &weighted_sum).unwrap();
        for g in analytic.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= 1.01);
        }
        let r = compare(&analytic, &numeric);
        assert!(r.max_rel_err > 1e-3, "{r:?}");
    }

    #[test]
    fn kink_straddling_coordinates_are_skipped() {
        let mut p = ParameterSet::new(0);
        p.insert("w", Tensor::vector(vec![3e-6, 0.7, -0.4])).unwrap();
        let abs_sum = |tape: &mut Tape, b: &Bound| {
            let w = b.var("w")?;
            tape.sum_abs(w)
        };
        let plain = finite_diff_check(&p, 1e-5, abs_sum).unwrap();
        assert!(plain.max_rel_err > 0.1, "{plain:?}");
        let smooth = finite_diff_check_smooth(&p, 1e-5, abs_sum).unwrap();
        assert_eq!(smooth.skipped, 1);
        assert_eq!(smooth.checked, 2);
        assert!(smooth.max_rel_err < 1e-9, "{smooth:?}");

        let mut corrupted = analytic_gradient(&p, &abs_sum).unwrap();
        corrupted.get_mut("w").unwrap().data_mut()[1] *= 1.01;
        let n = numeric_gradient(&p, 1e-5, &abs_sum).unwrap();
        assert!(compare(&corrupted, &n).max_rel_err > 1e-3);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-12);
    }
}
