//! Levenberg-Marquardt least squares for `Mlp` weights.

use nalgebra::{DMatrix, DVector};

use crate::forecast::network::{Mlp, NetworkConfig, StopReason};

/// Row-major inputs (`n x m`) and targets, already normalized.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub width: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.width..(i + 1) * self.width]
    }

    pub fn sse(&self, mlp: &Mlp, w: &[f64]) -> f64 {
        (0..self.len())
            .map(|i| (self.targets[i] - mlp.output(w, self.row(i))).powi(2))
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub weights: Vec<f64>,
    pub train_sse: f64,
    pub validation_sse: Option<f64>,
    pub epochs: usize,
    pub stop: StopReason,
    pub sse_history: Vec<f64>,
}

/// Residuals `r = y - f(w)` and Jacobian `J = df/dw`.
fn linearize(mlp: &Mlp, w: &[f64], data: &Dataset) -> (DVector<f64>, DMatrix<f64>) {
    let p = mlp.n_params();
    let mut r = DVector::zeros(data.len());
    let mut j = DMatrix::zeros(data.len(), p);
    let mut g = vec![0.0; p];
    for i in 0..data.len() {
        let y = mlp.output_and_gradient(w, data.row(i), &mut g);
        r[i] = data.targets[i] - y;
        for (c, v) in g.iter().enumerate() {
            j[(i, c)] = *v;
        }
    }
    (r, j)
}

/// Minimizes training SSE from `init`. Each epoch takes one accepted step
/// `(J'J + mu I) d = J'r`, raising `mu` after rejected trials and lowering it
/// after an accepted one. With a non-empty validation set and early stopping
/// enabled the weights with the lowest validation SSE are returned.
pub fn train(mlp: &Mlp, init: Vec<f64>, train: &Dataset, validation: &Dataset, cfg: &NetworkConfig) -> LmOutcome {
    let p = mlp.n_params();
    let mut w = init;
    let mut sse = train.sse(mlp, &w);
    let mut mu = cfg.lm_initial_damping;
    let mut history = vec![sse];

    let use_validation = !validation.is_empty() && cfg.early_stop_patience > 0;
    let mut best_val = if use_validation { validation.sse(mlp, &w) } else { f64::INFINITY };
    let mut best_w = w.clone();
    let mut best_sse = sse;
    let mut stale = 0;

    let mut epochs = 0;
    let stop = 'outer: loop {
        if epochs == cfg.max_epochs {
            break StopReason::MaxEpochs;
        }
        let (r, j) = linearize(mlp, &w, train);
        let g = j.tr_mul(&r);
        if g.amax() <= cfg.gradient_tolerance {
            break StopReason::GradientTolerance;
        }
        let jtj = j.tr_mul(&j);
        loop {
            let mut a = jtj.clone();
            for d in 0..p {
                a[(d, d)] += mu;
            }
            let candidate = a.cholesky().map(|c| c.solve(&g)).map(|d| {
                w.iter().zip(d.iter()).map(|(wi, di)| wi + di).collect::<Vec<f64>>()
            });
            if let Some(wn) = candidate {
                let sn = train.sse(mlp, &wn);
                if sn < sse {
                    w = wn;
                    sse = sn;
                    mu = (mu / cfg.lm_damping_down).max(f64::MIN_POSITIVE);
                    break;
                }
            }
            mu *= cfg.lm_damping_up;
            if mu > cfg.lm_max_damping {
                break 'outer StopReason::DampingLimit;
            }
        }
        epochs += 1;
        history.push(sse);

        if use_validation {
            let v = validation.sse(mlp, &w);
            if v < best_val {
                best_val = v;
                best_w.clone_from(&w);
                best_sse = sse;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.early_stop_patience {
                    break StopReason::EarlyStopping;
                }
            }
        }
    };

    if use_validation {
        LmOutcome {
            weights: best_w,
            train_sse: best_sse,
            validation_sse: Some(best_val),
            epochs,
            stop,
            sse_history: history,
        }
    } else {
        LmOutcome {
            validation_sse: (!validation.is_empty()).then(|| validation.sse(mlp, &w)),
            weights: w,
            train_sse: sse,
            epochs,
            stop,
            sse_history: history,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::network::Activation;
    use crate::rng::{job_rng, standard_normal, uniform};

    fn sample(mlp: &Mlp, truth: &[f64], n: usize, noise: f64, seed: u64) -> Dataset {
        let mut rng = job_rng(seed, &[]);
        let mut d = Dataset { width: mlp.inputs, ..Default::default() };
        for _ in 0..n {
            let x: Vec<f64> = (0..mlp.inputs).map(|_| uniform(&mut rng, -2.0, 2.0)).collect();
            d.targets.push(mlp.output(truth, &x) + noise * standard_normal(&mut rng));
            d.inputs.extend(x);
        }
        d
    }

    #[test]
    fn sse_never_increases() {
        let mlp = Mlp { inputs: 2, hidden: 4, activation: Activation::Logistic };
        let truth = mlp.initial_weights(&mut job_rng(1, &[]));
        let train_set = sample(&mlp, &truth, 120, 0.1, 2);
        let init = mlp.initial_weights(&mut job_rng(3, &[]));
        let cfg = NetworkConfig { early_stop_patience: 0, ..Default::default() };
        let out = train(&mlp, init, &train_set, &Dataset::default(), &cfg);
        assert!(out.sse_history.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(out.sse_history.len(), out.epochs + 1);
        assert_eq!(*out.sse_history.last().unwrap(), out.train_sse);
    }

    #[test]
    fn linear_model_reaches_least_squares() {
        let mlp = Mlp { inputs: 1, hidden: 1, activation: Activation::Identity };
        let truth = [0.0, 1.0, 0.3, 0.7];
        let d = sample(&mlp, &truth, 80, 0.2, 4);
        let cfg = NetworkConfig { early_stop_patience: 0, ..Default::default() };
        let out = train(&mlp, mlp.initial_weights(&mut job_rng(5, &[])), &d, &Dataset::default(), &cfg);
        // Closed form simple regression.
        let n = d.len() as f64;
        let mx = d.inputs.iter().sum::<f64>() / n;
        let my = d.targets.iter().sum::<f64>() / n;
        let sxy: f64 = d.inputs.iter().zip(&d.targets).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = d.inputs.iter().map(|x| (x - mx).powi(2)).sum();
        let slope = sxy / sxx;
        let sse_ls: f64 = d.inputs.iter().zip(&d.targets).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
        assert!((out.train_sse - sse_ls).abs() < 1e-10 * sse_ls, "{} vs {}", out.train_sse, sse_ls);
        assert_ne!(out.stop, StopReason::MaxEpochs);
    }

    #[test]
    fn early_stopping_returns_best_validation_weights() {
        let mlp = Mlp { inputs: 1, hidden: 12, activation: Activation::Logistic };
        let truth = Mlp { inputs: 1, hidden: 1, activation: Activation::Logistic };
        let tw = [0.2, 1.5, 0.0, 1.0];
        let tr = sample(&truth, &tw, 40, 0.5, 6);
        let va = sample(&truth, &tw, 40, 0.5, 7);
        let cfg = NetworkConfig { early_stop_patience: 5, hidden_neurons: 12, ..Default::default() };
        let out = train(&mlp, mlp.initial_weights(&mut job_rng(8, &[])), &tr, &va, &cfg);
        let v = out.validation_sse.unwrap();
        assert_eq!(v, va.sse(&mlp, &out.weights));
        assert_eq!(out.train_sse, tr.sse(&mlp, &out.weights));
        assert_eq!(out.stop, StopReason::EarlyStopping);
    }

    #[test]
    fn epoch_budget_is_reported() {
        let mlp = Mlp { inputs: 1, hidden: 6, activation: Activation::Tanh };
        let d = sample(&Mlp { hidden: 2, ..mlp }, &[0.1, 1.0, -0.4, 2.0, 0.0, 1.0, -1.0], 60, 0.3, 9);
        let cfg = NetworkConfig { max_epochs: 2, early_stop_patience: 0, ..Default::default() };
        let out = train(&mlp, mlp.initial_weights(&mut job_rng(1, &[])), &d, &Dataset::default(), &cfg);
        assert_eq!(out.stop, StopReason::MaxEpochs);
        assert_eq!(out.epochs, 2);
    }
}
