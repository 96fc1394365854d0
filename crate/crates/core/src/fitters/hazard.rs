use crate::error::FitError;

/// Right-continuous step function for a cumulative hazard. Zero before the
/// first knot and flat after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCumHazard {
    knots: Vec<f64>,
    cumvals: Vec<f64>,
}

impl StepCumHazard {
    pub fn new(knots: Vec<f64>, cumvals: Vec<f64>) -> Result<Self, FitError> {
        if knots.len() != cumvals.len() {
            return Err(FitError::Invalid("knots and values differ in length".into()));
        }
        if knots.windows(2).any(|w| w[0] >= w[1] || w[0].is_nan() || w[1].is_nan()) {
            return Err(FitError::Invalid("knots must be strictly increasing".into()));
        }
        if cumvals.first().is_some_and(|v| *v < 0.0) || cumvals.windows(2).any(|w| w[1] < w[0]) {
            return Err(FitError::Invalid("cumulative hazard must be nonnegative and nondecreasing".into()));
        }
        Ok(StepCumHazard { knots, cumvals })
    }

    pub fn zero() -> Self {
        StepCumHazard { knots: vec![], cumvals: vec![] }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn cumvals(&self) -> &[f64] {
        &self.cumvals
    }

    pub fn jumps(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.cumvals
            .iter()
            .map(|v| {
                let j = v - prev;
                prev = *v;
                j
            })
            .collect()
    }

    /// H(t): value at the last knot `<= t`, or 0.
    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.knots.partition_point(|k| *k <= t);
        if idx == 0 {
            0.0
        } else {
            self.cumvals[idx - 1]
        }
    }
}

/// Distinct event times with event counts and risk-set sums of `weight`.
/// Subjects with `time >= t` are at risk at `t`.
pub(crate) fn weighted_step(time: &[f64], event: &[bool], weight: impl Fn(usize) -> f64) -> Result<StepCumHazard, FitError> {
    let n = time.len();
    if event.len() != n {
        return Err(FitError::Invalid("time and event lengths differ".into()));
    }
    if time.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(FitError::Invalid("times must be positive and finite".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| time[b].total_cmp(&time[a]));
    let mut knots = Vec::new();
    let mut jumps = Vec::new();
    let mut risk = 0.0;
    let mut i = 0;
    while i < n {
        let t = time[order[i]];
        let mut d = 0usize;
        while i < n && time[order[i]] == t {
            risk += weight(order[i]);
            d += usize::from(event[order[i]]);
            i += 1;
        }
        if d > 0 {
            if risk.is_nan() || risk <= 0.0 {
                return Err(FitError::EmptyRiskSet(t));
            }
            knots.push(t);
            jumps.push(d as f64 / risk);
        }
    }
    knots.reverse();
    jumps.reverse();
    let mut acc = 0.0;
    let cumvals = jumps
        .iter()
        .map(|j| {
            acc += j;
            acc
        })
        .collect();
    StepCumHazard::new(knots, cumvals)
}

/// Marginal Nelson-Aalen estimator: jump `d_t / n_t` at each event time.
pub fn nelson_aalen(time: &[f64], event: &[bool]) -> Result<StepCumHazard, FitError> {
    weighted_step(time, event, |_| 1.0)
}

/// Breslow baseline cumulative hazard for linear predictors `eta = X beta`.
pub fn breslow_from_eta(time: &[f64], event: &[bool], eta: &[f64]) -> Result<StepCumHazard, FitError> {
    if eta.len() != time.len() {
        return Err(FitError::Invalid("linear predictor length differs from time".into()));
    }
    weighted_step(time, event, |i| eta[i].exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_events() {
        let h = nelson_aalen(&[1.0, 2.0, 3.0], &[true, true, true]).unwrap();
        assert_eq!(h.knots(), &[1.0, 2.0, 3.0]);
        let want = [1.0 / 3.0, 5.0 / 6.0, 11.0 / 6.0];
        for (a, b) in h.cumvals().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(h.eval(0.5), 0.0);
        assert_eq!(h.eval(1.0), h.cumvals()[0]);
        assert_eq!(h.eval(2.5), h.cumvals()[1]);
        assert_eq!(h.eval(99.0), h.cumvals()[2]);
    }

    #[test]
    fn censored_only_is_zero() {
        let h = nelson_aalen(&[1.0, 2.0], &[false, false]).unwrap();
        assert!(h.knots().is_empty());
        assert_eq!(h.eval(5.0), 0.0);
    }

    #[test]
    fn ties_and_censoring() {
        // times 2,2,3(censored),4 with events at both 2s and at 4
        let h = nelson_aalen(&[2.0, 2.0, 3.0, 4.0], &[true, true, false, true]).unwrap();
        assert_eq!(h.knots(), &[2.0, 4.0]);
        assert!((h.jumps()[0] - 0.5).abs() < 1e-15);
        assert!((h.jumps()[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_steps() {
        assert!(StepCumHazard::new(vec![1.0, 2.0], vec![0.5, 0.4]).is_err());
        assert!(StepCumHazard::new(vec![2.0, 1.0], vec![0.1, 0.4]).is_err());
    }
}
