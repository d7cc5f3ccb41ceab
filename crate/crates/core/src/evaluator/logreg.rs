use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tabular::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerOptions {
    pub l2: f64,
    pub step: f64,
    pub iterations: usize,
}

impl Default for TrainerOptions {
    fn default() -> Self {
        TrainerOptions {
            l2: 1e-4,
            step: 0.5,
            iterations: 2000,
        }
    }
}

/// Binary logistic model over every feature except the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub target: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl LogisticRegression {
    fn logit(&self, row: &[f64]) -> f64 {
        self.bias
            + self
                .weights
                .iter()
                .zip(row)
                .map(|(w, x)| w * x)
                .sum::<f64>()
    }

    pub fn predict_proba(&self, data: &Dataset, i: usize) -> f64 {
        sigmoid(self.logit(&features(data, i, self.target)))
    }

    pub fn predict(&self, data: &Dataset, i: usize) -> bool {
        self.predict_proba(data, i) >= 0.5
    }
}

fn features(data: &Dataset, i: usize, target: usize) -> Vec<f64> {
    data.row(i)
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != target)
        .map(|(_, &v)| v)
        .collect()
}

fn check_target(data: &Dataset, target: usize) -> Result<()> {
    if target >= data.d() {
        return invalid(format!(
            "target index {target} out of range for d={}",
            data.d()
        ));
    }
    if data
        .records()
        .column(target)
        .iter()
        .any(|&v| v != 0.0 && v != 1.0)
    {
        return invalid("target column must be binary {0,1}");
    }
    Ok(())
}

/// Full-batch gradient descent on the L2-penalized mean logistic loss, from zero.
/// The step is halved whenever an update would increase the loss.
pub fn train_logreg(
    train: &Dataset,
    target: usize,
    opts: &TrainerOptions,
) -> Result<LogisticRegression> {
    check_target(train, target)?;
    let n = train.n();
    let x: Vec<Vec<f64>> = (0..n).map(|i| features(train, i, target)).collect();
    let y: Vec<f64> = train.records().column(target).to_vec();
    let p = train.d() - 1;

    let loss = |w: &[f64], b: f64| {
        let data: f64 = x
            .iter()
            .zip(&y)
            .map(|(xi, &yi)| {
                let z = b + w.iter().zip(xi).map(|(a, c)| a * c).sum::<f64>();
                softplus(z) - yi * z
            })
            .sum::<f64>()
            / n as f64;
        data + 0.5 * opts.l2 * w.iter().map(|v| v * v).sum::<f64>()
    };

    let mut w = vec![0.0; p];
    let mut b = 0.0;
    let mut step = opts.step;
    let mut current = loss(&w, b);
    for _ in 0..opts.iterations {
        let mut gw = vec![0.0; p];
        let mut gb = 0.0;
        for (xi, &yi) in x.iter().zip(&y) {
            let z = b + w.iter().zip(xi).map(|(a, c)| a * c).sum::<f64>();
            let r = sigmoid(z) - yi;
            gb += r;
            gw.iter_mut().zip(xi).for_each(|(g, v)| *g += r * v);
        }
        gw.iter_mut()
            .zip(&w)
            .for_each(|(g, wi)| *g = *g / n as f64 + opts.l2 * wi);
        gb /= n as f64;
        loop {
            let nw: Vec<f64> = w.iter().zip(&gw).map(|(wi, g)| wi - step * g).collect();
            let nb = b - step * gb;
            let next = loss(&nw, nb);
            if next <= current || step < 1e-12 {
                w = nw;
                b = nb;
                current = next;
                break;
            }
            step *= 0.5;
            log::debug!("logistic loss increased; halving step to {step}");
        }
    }
    Ok(LogisticRegression {
        target,
        weights: w,
        bias: b,
    })
}

/// F1 of the positive class at threshold 0.5; 0 when there are no true positives.
pub fn f1_score(clf: &LogisticRegression, test: &Dataset, target: usize) -> Result<f64> {
    check_target(test, target)?;
    if clf.target != target || clf.weights.len() + 1 != test.d() {
        return invalid("classifier was trained on a different schema");
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for i in 0..test.n() {
        let truth = test.row(i)[target] == 1.0;
        match (clf.predict(test, i), truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fneg) as f64)
}
