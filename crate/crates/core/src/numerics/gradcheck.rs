use super::ParamStore;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

pub const DEFAULT_FLOOR: f64 = 1e-8;

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    relative_error_floor(a, b, DEFAULT_FLOOR)
}

pub fn relative_error_floor(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares the gradients currently stored in `store` against central
/// differences `(f(θ+ε) - f(θ-ε)) / 2ε`, one coordinate at a time.
pub fn grad_check(store: &mut ParamStore, eps: f64, f: impl Fn(&ParamStore) -> f64) -> GradCheckReport {
    grad_check_floor(store, eps, DEFAULT_FLOOR, f)
}

/// [`grad_check`] with a custom denominator floor. Losses of order one leave
/// central differences with roundoff near `1e-16 / eps`, so gradients far
/// below that cannot be compared in relative terms.
pub fn grad_check_floor(store: &mut ParamStore, eps: f64, floor: f64, f: impl Fn(&ParamStore) -> f64) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for id in store.ids().collect::<Vec<_>>() {
        for i in 0..store.value(id).len() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + eps;
            let plus = f(store);
            store.value_mut(id).data_mut()[i] = orig - eps;
            let minus = f(store);
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = store.grad(id).data()[i];
            let err = relative_error_floor(analytic, numeric, floor);
            report.coordinates += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.name(id).to_string(), i));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Init;

    #[test]
    fn quadratic_and_linear() {
        let mut s = ParamStore::new(0);
        let id = s.add("t", &[1], Init::Zeros).unwrap();
        s.value_mut(id).data_mut()[0] = 3.0;
        s.grad_mut(id).data_mut()[0] = 6.0;
        let r = grad_check(&mut s, 1e-5, |s| s.value(id).data()[0].powi(2));
        assert!(r.max_rel_error * 6.0 < 1e-9, "{r:?}");

        s.grad_mut(id).data_mut()[0] = 2.5;
        let r = grad_check(&mut s, 1e-5, |s| 2.5 * s.value(id).data()[0] + 1.0);
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let mut s = ParamStore::new(0);
        let id = s.add("t", &[2], Init::Zeros).unwrap();
        s.grad_mut(id).data_mut().copy_from_slice(&[1.0, 0.0]);
        let r = grad_check(&mut s, 1e-5, |s| s.value(id).data()[0] + 2.0 * s.value(id).data()[1]);
        assert!(r.max_rel_error > 0.5);
        assert_eq!(r.worst, Some(("t".to_string(), 1)));
    }
}
