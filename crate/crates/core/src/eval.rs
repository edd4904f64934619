//! FIT index and open-loop evaluation of trained models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NnarxModel;
use crate::plant::{Dataset, Split, Trajectory};
use crate::stability::{certify, Verdict};

/// `100 (1 - |pred - truth| / |truth - mean(truth)|)` over flattened sequences.
pub fn fit_index(y_pred: &[f64], y_true: &[f64]) -> Result<f64> {
    if y_pred.len() != y_true.len() {
        return Err(Error::arg(format!(
            "prediction has {} samples, truth has {}",
            y_pred.len(),
            y_true.len()
        )));
    }
    if y_true.len() < 2 {
        return Err(Error::arg("FIT needs at least two samples"));
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let den = y_true.iter().map(|y| (y - mean).powi(2)).sum::<f64>().sqrt();
    if den == 0.0 || !den.is_finite() {
        return Err(Error::UndefinedFit("true signal is constant".into()));
    }
    let num = y_pred
        .iter()
        .zip(y_true)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(100.0 * (1.0 - num / den))
}

/// Signals the metrics were computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Physical,
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub trajectory_id: usize,
    pub diverged: bool,
    /// FIT of all output channels stacked into one vector.
    pub fit_percent: f64,
    pub fit_per_channel: Vec<f64>,
    pub rmse: f64,
    pub max_abs_error: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub split: Split,
    pub washout: usize,
    pub domain: Domain,
    pub verdict: Verdict,
    pub nu: f64,
    pub reports: Vec<EvalReport>,
    /// FIT over the concatenation of all non-diverged trajectories.
    pub aggregate_fit: f64,
    pub mean_fit: f64,
    pub diverged_count: usize,
}

pub const REPORT_HEADER: &str = "trajectory,diverged,fit_percent,rmse,max_abs_error,samples";

impl EvalSummary {
    pub fn to_csv(&self) -> String {
        let p = self.reports.first().map_or(0, |r| r.fit_per_channel.len());
        let mut s = String::from(REPORT_HEADER);
        for j in 1..=p {
            s.push_str(&format!(",fit_y_{j}"));
        }
        s.push('\n');
        for r in &self.reports {
            s.push_str(&format!(
                "{},{},{},{},{},{}",
                r.trajectory_id,
                u8::from(r.diverged),
                r.fit_percent,
                r.rmse,
                r.max_abs_error,
                r.samples
            ));
            for f in &r.fit_per_channel {
                s.push_str(&format!(",{f}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Per-trajectory predictions kept for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotTrace {
    pub trajectory_id: usize,
    pub y_true: Vec<Vec<f64>>,
    pub y_pred: Vec<Vec<f64>>,
}

/// Columns `trajectory,k,y_true_j,y_pred_j,residual_j` for every sample.
pub fn plot_csv(traces: &[PlotTrace]) -> String {
    let p = traces.first().and_then(|t| t.y_true.first()).map_or(0, |y| y.len());
    let mut s = String::from("trajectory,k");
    for j in 1..=p {
        s.push_str(&format!(",y_true_{j},y_pred_{j},residual_{j}"));
    }
    s.push('\n');
    for t in traces {
        for (k, (yt, yp)) in t.y_true.iter().zip(&t.y_pred).enumerate() {
            s.push_str(&format!("{},{k}", t.trajectory_id));
            for (a, b) in yt.iter().zip(yp) {
                s.push_str(&format!(",{a},{b},{}", b - a));
            }
            s.push('\n');
        }
    }
    s
}

/// Predictions `yhat_k = C x_k` in normalized units, from the zero state.
pub fn predict_normalized(model: &NnarxModel, u: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let x0 = model.zero_state();
    let mut out = Vec::with_capacity(u.len());
    if u.is_empty() {
        return Ok(out);
    }
    out.push(x0.newest_output().to_vec());
    if u.len() > 1 {
        out.extend(model.simulate_open_loop(&x0, &u[..u.len() - 1])?);
    }
    Ok(out)
}

/// Metrics of `pred` against `truth` over samples `washout..`.
pub fn score(trajectory_id: usize, pred: &[Vec<f64>], truth: &[Vec<f64>], washout: usize) -> Result<EvalReport> {
    if pred.len() != truth.len() || truth.len() <= washout + 1 {
        return Err(Error::arg("prediction/truth lengths do not leave a scoring window"));
    }
    let p = truth[0].len();
    let window = washout..truth.len();
    let flat = |s: &[Vec<f64>]| s[window.clone()].iter().flatten().copied().collect::<Vec<f64>>();
    let (fp, ft) = (flat(pred), flat(truth));
    let fit_percent = fit_index(&fp, &ft)?;
    let fit_per_channel = (0..p)
        .map(|j| {
            let a: Vec<f64> = pred[window.clone()].iter().map(|v| v[j]).collect();
            let b: Vec<f64> = truth[window.clone()].iter().map(|v| v[j]).collect();
            fit_index(&a, &b)
        })
        .collect::<Result<Vec<_>>>()?;
    let sq: f64 = fp.iter().zip(&ft).map(|(a, b)| (a - b).powi(2)).sum();
    let max_abs_error = fp.iter().zip(&ft).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(EvalReport {
        trajectory_id,
        diverged: false,
        fit_percent,
        fit_per_channel,
        rmse: (sq / fp.len() as f64).sqrt(),
        max_abs_error,
        samples: truth.len() - washout,
    })
}

/// Open-loop evaluation of every trajectory in `split`, in physical units.
///
/// A trajectory whose simulation diverges is flagged rather than aborting the
/// batch.
pub fn evaluate(
    model: &NnarxModel,
    dataset: &Dataset,
    split: Split,
    washout: usize,
) -> Result<(EvalSummary, Vec<PlotTrace>)> {
    let trajs: Vec<&Trajectory> = dataset.split(split).collect();
    if trajs.is_empty() {
        return Err(Error::config(format!("split {} has no trajectories", split.as_str())));
    }
    model.validate()?;
    let cert = certify(model)?;
    let mut reports = Vec::with_capacity(trajs.len());
    let mut traces = Vec::with_capacity(trajs.len());
    let mut all_pred = Vec::new();
    let mut all_true = Vec::new();
    for t in trajs {
        let u_norm: Vec<Vec<f64>> = t.u.iter().map(|u| model.norm.normalize_u(u)).collect();
        match predict_normalized(model, &u_norm) {
            Ok(pred) => {
                let pred: Vec<Vec<f64>> = pred.iter().map(|y| model.norm.denormalize_y(y)).collect();
                let report = score(t.id, &pred, &t.y, washout)?;
                all_pred.extend(pred[washout..].iter().flatten().copied());
                all_true.extend(t.y[washout..].iter().flatten().copied());
                reports.push(report);
                traces.push(PlotTrace {
                    trajectory_id: t.id,
                    y_true: t.y.clone(),
                    y_pred: pred,
                });
            }
            Err(Error::NumericDivergence { .. }) => reports.push(EvalReport {
                trajectory_id: t.id,
                diverged: true,
                fit_percent: f64::NEG_INFINITY,
                fit_per_channel: vec![f64::NEG_INFINITY; model.output_dim],
                rmse: f64::INFINITY,
                max_abs_error: f64::INFINITY,
                samples: t.len().saturating_sub(washout),
            }),
            Err(e) => return Err(e),
        }
    }
    let diverged_count = reports.iter().filter(|r| r.diverged).count();
    let aggregate_fit = if all_true.is_empty() {
        f64::NEG_INFINITY
    } else {
        fit_index(&all_pred, &all_true)?
    };
    let mean_fit = reports.iter().map(|r| r.fit_percent).sum::<f64>() / reports.len() as f64;
    Ok((
        EvalSummary {
            split,
            washout,
            domain: Domain::Physical,
            verdict: cert.verdict,
            nu: cert.nu,
            reports,
            aggregate_fit,
            mean_fit,
            diverged_count,
        },
        traces,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_is_100() {
        let y = [1.0, 3.0, -2.0, 0.5];
        assert_eq!(fit_index(&y, &y).unwrap(), 100.0);
    }

    #[test]
    fn mean_prediction_is_0() {
        let y = [1.0, 3.0, -2.0, 0.5];
        let m = y.iter().sum::<f64>() / 4.0;
        assert!(fit_index(&[m; 4], &y).unwrap().abs() < 1e-12);
    }

    #[test]
    fn hand_worked_values() {
        assert!(fit_index(&[1.0, 1.0], &[0.0, 2.0]).unwrap().abs() < 1e-12);
        let f = fit_index(&[0.0, 1.0], &[0.0, 2.0]).unwrap();
        assert!((f - 100.0 * (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-12);
        assert!((f - 29.289_321_881_345_24).abs() < 1e-9);
    }

    #[test]
    fn constant_truth_is_undefined() {
        assert!(matches!(fit_index(&[1.0, 2.0], &[3.0, 3.0]), Err(Error::UndefinedFit(_))));
        assert!(fit_index(&[1.0], &[1.0]).is_err());
        assert!(fit_index(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn score_uses_window() {
        let truth: Vec<Vec<f64>> = [9.0, 9.0, 1.0, 2.0, 3.0].iter().map(|v| vec![*v]).collect();
        let mut pred = truth.clone();
        pred[0][0] = -100.0;
        let r = score(0, &pred, &truth, 2).unwrap();
        assert_eq!(r.fit_percent, 100.0);
        assert_eq!(r.samples, 3);
        assert_eq!(r.rmse, 0.0);
    }

    #[test]
    fn plot_csv_header() {
        let t = PlotTrace {
            trajectory_id: 4,
            y_true: vec![vec![1.0]],
            y_pred: vec![vec![1.5]],
        };
        assert_eq!(plot_csv(&[t]), "trajectory,k,y_true_1,y_pred_1,residual_1\n4,0,1,1.5,0.5\n");
    }
}
