use crate::data::Dataset;
use crate::error::{Error, Result};

/// Least-squares line through the anchors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlsFit {
    pub alpha: f64,
    pub beta: f64,
    /// Residual standard deviation with `n - 2` degrees of freedom.
    pub residual_sd: f64,
}

/// Ordinary least squares of reference on judge.
pub fn ols_fit(anchors: &Dataset) -> Result<OlsFit> {
    let js = anchors.judges()?;
    let ys = anchors.references();
    ols_from_slices(&js, &ys)
}

pub(crate) fn ols_from_slices(js: &[f64], ys: &[f64]) -> Result<OlsFit> {
    let n = js.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!(
            "least squares needs at least 3 anchors, got {n}"
        )));
    }
    let nf = n as f64;
    let mj = js.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sjj = 0.0;
    let mut sjy = 0.0;
    for (j, y) in js.iter().zip(ys) {
        sjj += (j - mj) * (j - mj);
        sjy += (j - mj) * (y - my);
    }
    if sjj <= 0.0 {
        return Err(Error::Degenerate(
            "all anchor judge scores are equal".into(),
        ));
    }
    let beta = sjy / sjj;
    let alpha = my - beta * mj;
    let ss: f64 = js
        .iter()
        .zip(ys)
        .map(|(j, y)| (y - alpha - beta * j).powi(2))
        .sum();
    Ok(OlsFit {
        alpha,
        beta,
        residual_sd: (ss / (nf - 2.0)).sqrt(),
    })
}
