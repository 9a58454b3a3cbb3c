//! Two deliberately one-sided correctors: a constant that nails the mean and
//! nothing else, and the marginal inverse-CDF map that nails the shape while
//! ignoring which judge score belongs to which item.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics;
use crate::Corrector;

/// Emits the anchor reference mean for every input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantCorrector {
    pub value: f64,
}

pub fn constant_corrector(anchors: &Dataset) -> Result<ConstantCorrector> {
    if anchors.is_empty() {
        return Err(Error::InvalidInput(
            "constant corrector needs anchors".into(),
        ));
    }
    Ok(ConstantCorrector {
        value: metrics::mean(&anchors.references()),
    })
}

impl Corrector for ConstantCorrector {
    fn correct(&self, _judge: f64) -> f64 {
        self.value
    }
}

/// Monotone map between the empirical judge and reference quantiles.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileMap {
    pub judge_quantiles: Vec<f64>,
    pub reference_quantiles: Vec<f64>,
}

/// Builds knots at every anchor order statistic. Tied judge knots are merged
/// into one knot carrying the mean of their reference quantiles.
pub fn fit_transport(anchors: &Dataset) -> Result<QuantileMap> {
    if anchors.len() < 2 {
        return Err(Error::InvalidInput(
            "transport needs at least two anchors".into(),
        ));
    }
    let mut judges = anchors.judges()?;
    let mut refs = anchors.references();
    judges.sort_by(f64::total_cmp);
    refs.sort_by(f64::total_cmp);

    let mut jq = Vec::with_capacity(judges.len());
    let mut rq = Vec::with_capacity(judges.len());
    let mut i = 0;
    while i < judges.len() {
        let mut k = i + 1;
        while k < judges.len() && judges[k] == judges[i] {
            k += 1;
        }
        jq.push(judges[i]);
        rq.push(refs[i..k].iter().sum::<f64>() / (k - i) as f64);
        i = k;
    }
    if jq.len() < 2 {
        return Err(Error::Degenerate(
            "all anchor judge scores are equal".into(),
        ));
    }
    Ok(QuantileMap {
        judge_quantiles: jq,
        reference_quantiles: rq,
    })
}

/// Piecewise-linear interpolation between knots, flat beyond the extremes.
pub fn apply_transport(map: &QuantileMap, j_star: f64) -> f64 {
    let xs = &map.judge_quantiles;
    let ys = &map.reference_quantiles;
    let last = xs.len() - 1;
    if j_star <= xs[0] {
        return ys[0];
    }
    if j_star >= xs[last] {
        return ys[last];
    }
    // first knot strictly above j_star; the segment starts one before it
    let hi = xs.partition_point(|&x| x <= j_star);
    let lo = hi - 1;
    let t = (j_star - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + t * (ys[hi] - ys[lo])
}

impl Corrector for QuantileMap {
    fn correct(&self, judge: f64) -> f64 {
        apply_transport(self, judge)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_is_reference_mean() {
        let d = Dataset::from_pairs(&[(1.0, 3.0), (2.0, 4.0), (3.0, 5.0)]);
        let c = constant_corrector(&d).unwrap();
        assert_eq!(c.correct(1.7), 4.0);
        assert_eq!(c.correct(4.9), 4.0);
        assert!(constant_corrector(&Dataset::from_pairs(&[])).is_err());
    }

    #[test]
    fn constant_mean_error_zero_on_anchors() {
        let d = Dataset::from_pairs(&[(1.0, 3.0), (2.0, 4.0), (3.0, 5.0), (2.0, 1.5)]);
        let c = constant_corrector(&d).unwrap();
        let out = c.correct_all(&d.judges().unwrap());
        let me = metrics::mean_error(&out, &d.references()).unwrap();
        assert!(me.abs() < 1e-15);
    }

    #[test]
    fn equal_marginals_give_identity_on_knots() {
        let d = Dataset::from_pairs(&[(2.0, 4.0), (4.0, 2.0), (3.0, 3.0), (1.5, 1.5)]);
        let m = fit_transport(&d).unwrap();
        for (&x, &y) in m.judge_quantiles.iter().zip(&m.reference_quantiles) {
            assert_eq!(x, y);
            assert_eq!(apply_transport(&m, x), x);
        }
    }

    #[test]
    fn shift_case() {
        let pts: Vec<(f64, f64)> = (0..20)
            .map(|i| {
                let y = 2.0 + 0.1 * i as f64;
                (y + 1.0, y)
            })
            .collect();
        let m = fit_transport(&Dataset::from_pairs(&pts)).unwrap();
        for (&x, &y) in m.judge_quantiles.iter().zip(&m.reference_quantiles) {
            assert!((x - 1.0 - y).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_extrapolation_and_interpolation() {
        let m = QuantileMap {
            judge_quantiles: vec![1.0, 2.0, 4.0],
            reference_quantiles: vec![2.0, 3.0, 5.0],
        };
        assert_eq!(apply_transport(&m, 0.0), 2.0);
        assert_eq!(apply_transport(&m, 9.0), 5.0);
        assert_eq!(apply_transport(&m, 1.5), 2.5);
        assert_eq!(apply_transport(&m, 3.0), 4.0);
        assert_eq!(apply_transport(&m, 4.0), 5.0);
    }

    #[test]
    fn tied_judges_merge_and_errors() {
        let d = Dataset::from_pairs(&[(1.0, 1.0), (1.0, 2.0), (3.0, 4.0)]);
        let m = fit_transport(&d).unwrap();
        assert_eq!(m.judge_quantiles, vec![1.0, 3.0]);
        assert_eq!(m.reference_quantiles, vec![1.5, 4.0]);
        assert!(fit_transport(&Dataset::from_pairs(&[(1.0, 1.0)])).is_err());
        assert!(fit_transport(&Dataset::from_pairs(&[(2.0, 1.0), (2.0, 3.0)])).is_err());
    }

    proptest! {
        #[test]
        fn transport_monotone(
            pts in prop::collection::vec((1.0f64..5.0, 1.0f64..5.0), 2..40),
            a in 0.0f64..6.0,
            b in 0.0f64..6.0,
        ) {
            if let Ok(m) = fit_transport(&Dataset::from_pairs(&pts)) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(apply_transport(&m, lo) <= apply_transport(&m, hi));
            }
        }

        #[test]
        fn transport_in_sample_reproduces_reference_multiset(
            pts in prop::collection::vec((1.0f64..5.0, 1.0f64..5.0), 2..60),
        ) {
            let d = Dataset::from_pairs(&pts);
            let mut js = d.judges().unwrap();
            js.sort_by(f64::total_cmp);
            prop_assume!(js.windows(2).all(|w| w[0] < w[1]));
            let m = fit_transport(&d).unwrap();
            let mut out = m.correct_all(&d.judges().unwrap());
            let mut refs = d.references();
            out.sort_by(f64::total_cmp);
            refs.sort_by(f64::total_cmp);
            prop_assert_eq!(out, refs);
        }

        #[test]
        fn constant_mae_is_mean_absolute_deviation(
            pts in prop::collection::vec((1.0f64..5.0, 1.0f64..5.0), 1..60),
        ) {
            let d = Dataset::from_pairs(&pts);
            let c = constant_corrector(&d).unwrap();
            let refs = d.references();
            let mean = refs.iter().sum::<f64>() / refs.len() as f64;
            let mad = refs.iter().map(|y| (y - mean).abs()).sum::<f64>() / refs.len() as f64;
            let got = metrics::mae(&c.correct_all(&d.judges().unwrap()), &refs).unwrap();
            prop_assert!((got - mad).abs() < 1e-12);
        }
    }
}
