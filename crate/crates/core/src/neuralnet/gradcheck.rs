//! Finite-difference verification of [`BranchNet::backward`].
//!
//! The reference derivative is a Richardson-extrapolated central difference
//! of a separate double-double forward pass, so neither rounding noise nor
//! step truncation masks disagreements at the 1e-6 level.

use nalgebra::DMatrix;

use super::dd::Dd;
use super::net::{cross_entropy, BranchNet, Grads, BN_EPS};

/// Loss applied to the network output for the check.
#[derive(Debug, Clone)]
pub enum Loss {
    /// Mean softmax cross-entropy against class indices.
    CrossEntropy(Vec<usize>),
    /// `0.5 * mean_i ||out_i - target_i||^2`.
    Quadratic(DMatrix<f64>),
}

impl Loss {
    fn grad(&self, out: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Loss::CrossEntropy(t) => cross_entropy(out, t, None).1,
            Loss::Quadratic(t) => (out - t) / out.nrows() as f64,
        }
    }

    fn value(&self, out: &[Vec<Dd>]) -> Dd {
        let n = out.len() as f64;
        let mut total = Dd::ZERO;
        match self {
            Loss::CrossEntropy(t) => {
                for (row, &target) in out.iter().zip(t) {
                    let max = row.iter().copied().fold(row[0], Dd::max);
                    let sum = row.iter().fold(Dd::ZERO, |s, &z| s + (z - max).exp());
                    total = total + max + sum.ln() - row[target];
                }
            }
            Loss::Quadratic(t) => {
                for (r, row) in out.iter().enumerate() {
                    for (c, &z) in row.iter().enumerate() {
                        let d = z - Dd::from_f64(t[(r, c)]);
                        total = total + d * d * 0.5;
                    }
                }
            }
        }
        total / n
    }
}

/// Training-mode forward in double-double, dropout off.
fn forward_dd(net: &BranchNet, params: &[Vec<Dd>], x: &DMatrix<f64>) -> Vec<Vec<Dd>> {
    let spec = net.spec();
    let per_block = if spec.batch_norm { 4 } else { 2 };
    let mut h: Vec<Vec<Dd>> = (0..x.nrows())
        .map(|r| x.row(r).iter().map(|&v| Dd::from_f64(v)).collect())
        .collect();
    for (b, w) in spec.widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let p = &params[b * per_block..(b + 1) * per_block];
        let mut a: Vec<Vec<Dd>> = h
            .iter()
            .map(|row| {
                (0..fan_out)
                    .map(|j| {
                        let z = (0..fan_in).fold(p[1][j], |s, i| s + row[i] * p[0][j * fan_in + i]);
                        if spec.relu {
                            z.max(Dd::ZERO)
                        } else {
                            z
                        }
                    })
                    .collect()
            })
            .collect();
        if spec.batch_norm {
            let n = a.len() as f64;
            for j in 0..fan_out {
                let mean = a.iter().fold(Dd::ZERO, |s, r| s + r[j]) / n;
                let var = a.iter().fold(Dd::ZERO, |s, r| {
                    let d = r[j] - mean;
                    s + d * d
                }) / n;
                let std = (var + Dd::from_f64(BN_EPS)).sqrt();
                for row in &mut a {
                    row[j] = p[2][j] * ((row[j] - mean) / std) + p[3][j];
                }
            }
        }
        h = a;
    }
    h
}

/// Max relative error between analytic and numerical gradients of `loss`
/// over every parameter, with batch statistics and no dropout:
/// `|g_a - g_fd| / max(1e-8, |g_a| + |g_fd|)`.
pub fn gradient_check(net: &BranchNet, batch: &DMatrix<f64>, loss: &Loss, eps: f64) -> f64 {
    gradient_check_with(net, batch, loss, eps, |_| {})
}

/// As [`gradient_check`], letting `tamper` edit the analytic gradients first.
pub fn gradient_check_with(
    net: &BranchNet,
    batch: &DMatrix<f64>,
    loss: &Loss,
    eps: f64,
    tamper: impl FnOnce(&mut Grads),
) -> f64 {
    let (out, cache) = net.forward_train(batch, &Vec::new());
    let mut analytic = net.backward(&cache, &loss.grad(&out));
    tamper(&mut analytic);

    let base: Vec<Vec<Dd>> = net
        .params()
        .iter()
        .map(|p| p.iter().map(|&v| Dd::from_f64(v)).collect())
        .collect();
    let mut params = base.clone();
    let mut eval = |t: usize, i: usize, delta: f64| {
        params[t][i] = base[t][i] + Dd::from_f64(delta);
        let value = loss.value(&forward_dd(net, &params, batch));
        params[t][i] = base[t][i];
        value
    };

    let mut worst = 0.0f64;
    for (t, grads) in analytic.iter().enumerate() {
        for (i, &ga) in grads.iter().enumerate() {
            let central = |e: f64, eval: &mut dyn FnMut(usize, usize, f64) -> Dd| {
                (eval(t, i, e) - eval(t, i, -e)) / (2.0 * e)
            };
            let coarse = central(eps, &mut eval);
            let fine = central(eps / 2.0, &mut eval);
            let fd = ((fine * 4.0 - coarse) / 3.0).to_f64();
            let err = (ga - fd).abs() / (ga.abs() + fd.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::net::NetSpec;
    use crate::seed;
    use rand::Rng;

    fn batch(rows: usize, cols: usize, s: u64) -> DMatrix<f64> {
        let mut rng = seed::rng(s, &[1]);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn dd_forward_matches_f64_forward() {
        let mut rng = seed::rng(11, &[]);
        let net = BranchNet::new(NetSpec::branch(4, (6, 5), 2), &mut rng);
        let x = batch(9, 4, 11);
        let (out, _) = net.forward_train(&x, &Vec::new());
        let params: Vec<Vec<Dd>> = net
            .params()
            .iter()
            .map(|p| p.iter().map(|&v| Dd::from_f64(v)).collect())
            .collect();
        let dd = forward_dd(&net, &params, &x);
        for r in 0..9 {
            for c in 0..2 {
                assert!((dd[r][c].to_f64() - out[(r, c)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_net_quadratic_loss() {
        let mut rng = seed::rng(12, &[]);
        let net = BranchNet::new(NetSpec::linear(&[3, 4, 2]), &mut rng);
        let x = batch(6, 3, 12);
        let target = batch(6, 2, 13);
        let err = gradient_check(&net, &x, &Loss::Quadratic(target), 1e-5);
        assert!(err <= 1e-9, "{err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut rng = seed::rng(14, &[]);
        let net = BranchNet::new(NetSpec::branch(4, (5, 4), 2), &mut rng);
        let x = batch(8, 4, 14);
        let loss = Loss::CrossEntropy((0..8).map(|i| i % 2).collect());
        let clean = gradient_check(&net, &x, &loss, 1e-5);
        assert!(clean <= 1e-6, "{clean}");
        let corrupted = gradient_check_with(&net, &x, &loss, 1e-5, |g| {
            let (i, _) = g[0]
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .unwrap();
            g[0][i] *= 2.0;
        });
        assert!(corrupted >= 0.3, "{corrupted}");
    }
}
