//! A small fully-connected network with hand-written reverse mode:
//! `Linear -> ReLU -> BatchNorm1d [-> Dropout]` blocks and a softmax head.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::NnError;
use crate::dataio::{read_embedding, write_embedding, DataError, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Shape and layer options of a [`BranchNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    /// `[input, hidden..., output]`.
    pub widths: Vec<usize>,
    pub relu: bool,
    pub batch_norm: bool,
    /// Drop probability applied after each block except the last.
    pub dropout: f64,
}

impl NetSpec {
    /// Three blocks with ReLU, batch norm and 0.2 dropout after the first two.
    pub fn branch(input: usize, hidden: (usize, usize), output: usize) -> Self {
        Self {
            widths: vec![input, hidden.0, hidden.1, output],
            relu: true,
            batch_norm: true,
            dropout: 0.2,
        }
    }

    /// Plain affine layers, no activation or normalization.
    pub fn linear(widths: &[usize]) -> Self {
        Self {
            widths: widths.to_vec(),
            relu: false,
            batch_norm: false,
            dropout: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct BatchNorm {
    gamma: DVector<f64>,
    beta: DVector<f64>,
    running_mean: DVector<f64>,
    running_var: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    /// `in x out`, so a batch maps as `X W + b`.
    weight: DMatrix<f64>,
    bias: DVector<f64>,
    bn: Option<BatchNorm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchNet {
    spec: NetSpec,
    blocks: Vec<Block>,
}

/// Gradients in the same flattened order as [`BranchNet::params`].
pub type Grads = Vec<Vec<f64>>;

struct BlockCache {
    input: DMatrix<f64>,
    pre: DMatrix<f64>,
    xhat: Option<DMatrix<f64>>,
    inv_std: Option<DVector<f64>>,
    batch_mean: Option<DVector<f64>>,
    batch_var: Option<DVector<f64>>,
    mask: Option<DMatrix<f64>>,
}

/// Saved activations from a training-mode forward pass.
pub struct ForwardCache {
    blocks: Vec<BlockCache>,
}

/// Per-block dropout keep masks, already scaled by `1 / (1 - p)`.
pub type DropoutMasks = Vec<Option<DMatrix<f64>>>;

impl BranchNet {
    /// Uniform fan-in initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for weights and biases; batch norm starts at identity.
    pub fn new(spec: NetSpec, rng: &mut impl Rng) -> Self {
        let blocks = spec
            .widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight = DMatrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..bound));
                let bias = DVector::from_fn(fan_out, |_, _| rng.random_range(-bound..bound));
                let bn = spec.batch_norm.then(|| BatchNorm {
                    gamma: DVector::from_element(fan_out, 1.0),
                    beta: DVector::zeros(fan_out),
                    running_mean: DVector::zeros(fan_out),
                    running_var: DVector::from_element(fan_out, 1.0),
                });
                Block { weight, bias, bn }
            })
            .collect();
        Self { spec, blocks }
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.spec.widths.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Trainable parameters as flat slices: per block weight, bias and, with
    /// batch norm, gamma and beta.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for b in &self.blocks {
            out.push(b.weight.as_slice());
            out.push(b.bias.as_slice());
            if let Some(bn) = &b.bn {
                out.push(bn.gamma.as_slice());
                out.push(bn.beta.as_slice());
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.blocks {
            out.push(b.weight.as_mut_slice());
            out.push(b.bias.as_mut_slice());
            if let Some(bn) = &mut b.bn {
                out.push(bn.gamma.as_mut_slice());
                out.push(bn.beta.as_mut_slice());
            }
        }
        out
    }

    /// Draws dropout masks for a batch of `rows` samples.
    pub fn sample_masks(&self, rows: usize, rng: &mut impl Rng) -> DropoutMasks {
        let p = self.spec.dropout;
        let last = self.blocks.len() - 1;
        self.blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                (p > 0.0 && i < last).then(|| {
                    let keep = 1.0 / (1.0 - p);
                    DMatrix::from_fn(rows, b.weight.ncols(), |_, _| {
                        if rng.random::<f64>() < p {
                            0.0
                        } else {
                            keep
                        }
                    })
                })
            })
            .collect()
    }

    fn affine(input: &DMatrix<f64>, block: &Block) -> DMatrix<f64> {
        let mut z = input * &block.weight;
        for (j, mut col) in z.column_iter_mut().enumerate() {
            col.add_scalar_mut(block.bias[j]);
        }
        z
    }

    /// Training-mode forward: batch statistics, given dropout masks (pass an
    /// empty vector for none). Returns output logits and the cache.
    pub fn forward_train(&self, x: &DMatrix<f64>, masks: &DropoutMasks) -> (DMatrix<f64>, ForwardCache) {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            let input = h;
            let pre = Self::affine(&input, block);
            let mut a = if self.spec.relu { pre.map(|v| v.max(0.0)) } else { pre.clone() };
            let mut cache = BlockCache {
                input,
                pre,
                xhat: None,
                inv_std: None,
                batch_mean: None,
                batch_var: None,
                mask: None,
            };
            if let Some(bn) = &block.bn {
                let n = a.nrows() as f64;
                let mean = a.row_mean().transpose();
                let mut var = DVector::zeros(a.ncols());
                for j in 0..a.ncols() {
                    var[j] = a.column(j).iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n;
                }
                let inv_std = var.map(|v| 1.0 / (v + BN_EPS).sqrt());
                let mut xhat = a.clone();
                for j in 0..a.ncols() {
                    for r in 0..a.nrows() {
                        xhat[(r, j)] = (a[(r, j)] - mean[j]) * inv_std[j];
                        a[(r, j)] = bn.gamma[j] * xhat[(r, j)] + bn.beta[j];
                    }
                }
                cache.xhat = Some(xhat);
                cache.inv_std = Some(inv_std);
                cache.batch_mean = Some(mean);
                cache.batch_var = Some(var);
            }
            if let Some(Some(mask)) = masks.get(i) {
                a.component_mul_assign(mask);
                cache.mask = Some(mask.clone());
            }
            caches.push(cache);
            h = a;
        }
        (h, ForwardCache { blocks: caches })
    }

    /// Inference forward: running statistics, no dropout. Rows are
    /// processed independently.
    pub fn forward_eval(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = x.clone();
        for block in &self.blocks {
            let mut a = Self::affine(&h, block);
            if self.spec.relu {
                a.apply(|v| *v = v.max(0.0));
            }
            if let Some(bn) = &block.bn {
                for j in 0..a.ncols() {
                    let inv = 1.0 / (bn.running_var[j] + BN_EPS).sqrt();
                    for r in 0..a.nrows() {
                        a[(r, j)] = bn.gamma[j] * (a[(r, j)] - bn.running_mean[j]) * inv + bn.beta[j];
                    }
                }
            }
            h = a;
        }
        h
    }

    /// Folds the batch statistics of a training forward pass into the
    /// running estimates (unbiased variance, momentum 0.1).
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        for (block, c) in self.blocks.iter_mut().zip(&cache.blocks) {
            if let (Some(bn), Some(mean), Some(var)) = (&mut block.bn, &c.batch_mean, &c.batch_var) {
                let n = c.input.nrows() as f64;
                let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                bn.running_mean = &bn.running_mean * (1.0 - BN_MOMENTUM) + mean * BN_MOMENTUM;
                bn.running_var = &bn.running_var * (1.0 - BN_MOMENTUM) + var * (BN_MOMENTUM * unbiased);
            }
        }
    }

    /// Reverse pass from `d_out` (gradient w.r.t. the output logits).
    pub fn backward(&self, cache: &ForwardCache, d_out: &DMatrix<f64>) -> Grads {
        let mut grads: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.blocks.len());
        let mut d = d_out.clone();
        for (block, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            let mut block_grads = Vec::new();
            if let Some(mask) = &c.mask {
                d.component_mul_assign(mask);
            }
            let mut bn_grads = None;
            if let (Some(bn), Some(xhat), Some(inv_std)) = (&block.bn, &c.xhat, &c.inv_std) {
                let n = d.nrows() as f64;
                let mut dgamma = DVector::zeros(d.ncols());
                let mut dbeta = DVector::zeros(d.ncols());
                let mut da = DMatrix::zeros(d.nrows(), d.ncols());
                for j in 0..d.ncols() {
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for r in 0..d.nrows() {
                        dgamma[j] += d[(r, j)] * xhat[(r, j)];
                        dbeta[j] += d[(r, j)];
                        let dxhat = d[(r, j)] * bn.gamma[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat[(r, j)];
                    }
                    for r in 0..d.nrows() {
                        let dxhat = d[(r, j)] * bn.gamma[j];
                        da[(r, j)] =
                            inv_std[j] / n * (n * dxhat - sum_dxhat - xhat[(r, j)] * sum_dxhat_xhat);
                    }
                }
                d = da;
                bn_grads = Some((dgamma, dbeta));
            }
            if self.spec.relu {
                d.zip_apply(&c.pre, |g, z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            let dweight = c.input.tr_mul(&d);
            let dbias = d.row_sum().transpose();
            block_grads.push(dweight.as_slice().to_vec());
            block_grads.push(dbias.as_slice().to_vec());
            if let Some((dg, db)) = bn_grads {
                block_grads.push(dg.as_slice().to_vec());
                block_grads.push(db.as_slice().to_vec());
            }
            d = &d * block.weight.transpose();
            grads.push(block_grads);
        }
        grads.into_iter().rev().flatten().collect()
    }

    /// Writes one EMB1 file per tensor plus `index.csv`
    /// (`name,file,rows,cols`) and `spec.csv`.
    pub fn save(&self, dir: &Path) -> Result<(), NnError> {
        fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        let mut index = String::from("name,file,rows,cols\n");
        let mut put = |name: String, rows: usize, cols: usize, values: Vec<f64>| -> Result<(), NnError> {
            let file = format!("{name}.emb");
            // Row-major on disk.
            let data = (0..rows)
                .flat_map(|r| (0..cols).map(move |c| (r, c)))
                .map(|(r, c)| values[c * rows + r] as f32)
                .collect();
            write_embedding(&Tensor::new(rows, cols, data)?, &dir.join(&file))?;
            index.push_str(&format!("{name},{file},{rows},{cols}\n"));
            Ok(())
        };
        for (i, b) in self.blocks.iter().enumerate() {
            let (r, c) = b.weight.shape();
            put(format!("block{i}_weight"), r, c, b.weight.as_slice().to_vec())?;
            put(format!("block{i}_bias"), b.bias.len(), 1, b.bias.as_slice().to_vec())?;
            if let Some(bn) = &b.bn {
                let n = bn.gamma.len();
                put(format!("block{i}_bn_gamma"), n, 1, bn.gamma.as_slice().to_vec())?;
                put(format!("block{i}_bn_beta"), n, 1, bn.beta.as_slice().to_vec())?;
                put(format!("block{i}_bn_running_mean"), n, 1, bn.running_mean.as_slice().to_vec())?;
                put(format!("block{i}_bn_running_var"), n, 1, bn.running_var.as_slice().to_vec())?;
            }
        }
        let w = |name: &str, body: String| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| DataError::io(&path, e))
        };
        w("index.csv", index)?;
        let widths: Vec<String> = self.spec.widths.iter().map(ToString::to_string).collect();
        w(
            "spec.csv",
            format!(
                "key,value\nwidths,{}\nrelu,{}\nbatch_norm,{}\ndropout,{}\n",
                widths.join(" "),
                self.spec.relu,
                self.spec.batch_norm,
                self.spec.dropout
            ),
        )?;
        Ok(())
    }

    /// Reads a checkpoint written by [`BranchNet::save`] (float32 precision).
    pub fn load(dir: &Path) -> Result<Self, NnError> {
        let path = dir.join("spec.csv");
        let text = fs::read_to_string(&path).map_err(|e| DataError::io(&path, e))?;
        let field = |key: &str| {
            text.lines()
                .find_map(|l| l.strip_prefix(key)?.strip_prefix(','))
                .ok_or_else(|| NnError::Malformed(key.to_string()))
        };
        let widths: Vec<usize> = field("widths")?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| NnError::Malformed("widths".into())))
            .collect::<Result<_, _>>()?;
        let spec = NetSpec {
            widths,
            relu: field("relu")? == "true",
            batch_norm: field("batch_norm")? == "true",
            dropout: field("dropout")?
                .parse()
                .map_err(|_| NnError::Malformed("dropout".into()))?,
        };
        let read = |name: String| -> Result<DMatrix<f64>, NnError> {
            let t = read_embedding(&dir.join(format!("{name}.emb")))?;
            Ok(DMatrix::from_fn(t.rows(), t.cols(), |r, c| f64::from(t.row(r)[c])))
        };
        let vector = |name: String| -> Result<DVector<f64>, NnError> {
            let m = read(name)?;
            Ok(DVector::from_column_slice(m.as_slice()))
        };
        let mut blocks = Vec::new();
        for i in 0..spec.widths.len() - 1 {
            let bn = if spec.batch_norm {
                Some(BatchNorm {
                    gamma: vector(format!("block{i}_bn_gamma"))?,
                    beta: vector(format!("block{i}_bn_beta"))?,
                    running_mean: vector(format!("block{i}_bn_running_mean"))?,
                    running_var: vector(format!("block{i}_bn_running_var"))?,
                })
            } else {
                None
            };
            blocks.push(Block {
                weight: read(format!("block{i}_weight"))?,
                bias: vector(format!("block{i}_bias"))?,
                bn,
            });
        }
        Ok(Self { spec, blocks })
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    for mut row in out.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Weighted mean cross-entropy `sum_i w_i CE_i / sum_i w_i` and its gradient
/// with respect to the logits. With all weights zero the loss and gradient
/// are zero.
pub fn cross_entropy(logits: &DMatrix<f64>, targets: &[usize], weights: Option<&[f64]>) -> (f64, DMatrix<f64>) {
    let n = logits.nrows();
    let probs = softmax_rows(logits);
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..n).map(w).sum();
    let mut grad = DMatrix::zeros(n, logits.ncols());
    if total == 0.0 {
        return (0.0, grad);
    }
    let mut loss = 0.0;
    for i in 0..n {
        let wi = w(i);
        if wi == 0.0 {
            continue;
        }
        let row = logits.row(i);
        let max = row.max();
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += wi * (lse - logits[(i, targets[i])]);
        for j in 0..logits.ncols() {
            let onehot = if j == targets[i] { 1.0 } else { 0.0 };
            grad[(i, j)] = wi * (probs[(i, j)] - onehot) / total;
        }
    }
    (loss / total, grad)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Grads,
    v: Grads,
}

impl Adam {
    pub fn new(net: &BranchNet, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Grads = net.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, net: &mut BranchNet, grads: &Grads) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((param, g), m), v) in net
            .params_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..param.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                param[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
