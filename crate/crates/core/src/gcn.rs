//! A from-scratch graph convolutional network with a sigmoid head.
//!
//! Forward pass: `H0 = X`, `H(i+1) = relu(A_hat * H(i) * W(i) + b(i))`,
//! graph vector = column-wise mean of the final layer, score =
//! `sigmoid(g . w_h + b_h)`. `A_hat` is the symmetric normalization
//! `D^(-1/2) (A + I) D^(-1/2)` of the flattened undirected adjacency.
//!
//! Gradients are exact analytic derivatives of the clamped binary
//! cross-entropy composed with the forward pass; [`gradient_check`]
//! verifies them against central finite differences parameter by
//! parameter. Training is plain SGD with component-wise gradient
//! clipping, fully determined by the config seed.

use crate::decimal::sig9;
use crate::featurize::GraphExample;
use crate::mat::Mat;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GcnError {
    #[error("feature width {features} does not match model input width {expected}")]
    DimensionMismatch { features: usize, expected: usize },
    #[error("gradient shapes do not match model shapes")]
    ShapeMismatch,
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error("example `{case_id}` carries no label")]
    UnlabeledExample { case_id: String },
    #[error("malformed model file {path}: {message}")]
    MalformedFile { path: String, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Model confidence in `[0, 1]` that a report is a false positive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Score(f64);

impl Score {
    pub fn new(value: f64) -> Score {
        assert!((0.0..=1.0).contains(&value), "score out of range: {value}");
        Score(value)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer {
    pub w: Mat,       // f_in x f_out
    pub b: Vec<f64>,  // f_out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    pub layers: Vec<GcnLayer>,
    pub head_w: Vec<f64>,
    pub head_b: f64,
}

/// Training hyperparameters. `hidden` lists the output width of each graph
/// convolution, so its length is the layer count.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub rate: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            rate: 0.05,
            seed: 1,
            hidden: vec![64, 64],
            clip: 5.0,
        }
    }
}

impl GcnModel {
    /// Layer widths from input to final hidden: `[f_0, f_1, ..., f_L]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(|l| l.w.rows).collect();
        w.push(self.layers.last().map_or(self.head_w.len(), |l| l.w.cols));
        w
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(self.head_w.len(), |l| l.w.rows)
    }

    /// Seeded uniform(-0.1, 0.1) initialization in flatten order.
    pub fn init(widths: &[usize], seed: u64) -> GcnModel {
        assert!(widths.len() >= 2, "need at least input and one layer width");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-0.1..0.1)).collect()
        };
        let mut layers = Vec::new();
        for win in widths.windows(2) {
            let (fi, fo) = (win[0], win[1]);
            layers.push(GcnLayer {
                w: Mat {
                    rows: fi,
                    cols: fo,
                    data: draw(fi * fo),
                },
                b: draw(fo),
            });
        }
        let head_w = draw(*widths.last().unwrap());
        let head_b = draw(1)[0];
        GcnModel {
            layers,
            head_w,
            head_b,
        }
    }

    /// All parameters in a fixed order: per layer W row-major then b, then
    /// head weights, then head bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(&l.w.data);
            out.extend(&l.b);
        }
        out.extend(&self.head_w);
        out.push(self.head_b);
        out
    }

    pub fn assign_from_flat(&mut self, flat: &[f64]) {
        let mut k = 0;
        for l in &mut self.layers {
            l.w.data.copy_from_slice(&flat[k..k + l.w.data.len()]);
            k += l.w.data.len();
            l.b.copy_from_slice(&flat[k..k + l.b.len()]);
            k += l.b.len();
        }
        let hw = self.head_w.len();
        self.head_w.copy_from_slice(&flat[k..k + hw]);
        k += hw;
        self.head_b = flat[k];
        assert_eq!(k + 1, flat.len(), "flat parameter count mismatch");
    }

    /// Writes `GCN <L> <widths...>` then one line per parameter row, nine
    /// significant digits per value.
    pub fn save(&self, path: &Path) -> Result<(), GcnError> {
        let mut out = String::new();
        let widths = self.widths();
        out.push_str(&format!("GCN {}", self.layers.len()));
        for w in &widths {
            out.push_str(&format!(" {w}"));
        }
        out.push('\n');
        let push_row = |out: &mut String, row: &[f64]| {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                out.push_str(&sig9(*v));
                first = false;
            }
            out.push('\n');
        };
        for l in &self.layers {
            for r in 0..l.w.rows {
                push_row(&mut out, l.w.row(r));
            }
            push_row(&mut out, &l.b);
        }
        push_row(&mut out, &self.head_w);
        push_row(&mut out, &[self.head_b]);
        let mut f = std::fs::File::create(path).map_err(|e| GcnError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        f.write_all(out.as_bytes()).map_err(|e| GcnError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<GcnModel, GcnError> {
        let file = std::fs::File::open(path).map_err(|e| GcnError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let bad = |message: String| GcnError::MalformedFile {
            path: path.display().to_string(),
            message,
        };
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| bad("missing header".into()))?
            .map_err(|e| GcnError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() < 3 || parts[0] != "GCN" {
            return Err(bad("header must be `GCN <L> <widths...>`".into()));
        }
        let layer_count: usize = parts[1]
            .parse()
            .map_err(|_| bad("bad layer count".into()))?;
        let widths: Vec<usize> = parts[2..]
            .iter()
            .map(|p| p.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad("bad width".into()))?;
        if widths.len() != layer_count + 1 {
            return Err(bad(format!(
                "{} widths for {layer_count} layers",
                widths.len()
            )));
        }

        let mut rows = Vec::new();
        for line in lines {
            let line = line.map_err(|e| GcnError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            if line.is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split(' ')
                .map(|f| f.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad(format!("bad float row `{line}`")))?;
            rows.push(row);
        }

        let mut it = rows.into_iter();
        let mut take_row = |len: usize, what: &str| -> Result<Vec<f64>, GcnError> {
            let row = it.next().ok_or_else(|| bad(format!("missing {what}")))?;
            if row.len() != len {
                return Err(bad(format!(
                    "{what} has {} values, expected {len}",
                    row.len()
                )));
            }
            Ok(row)
        };

        let mut layers = Vec::new();
        for win in widths.windows(2) {
            let (fi, fo) = (win[0], win[1]);
            let mut data = Vec::with_capacity(fi * fo);
            for r in 0..fi {
                data.extend(take_row(fo, &format!("weight row {r}"))?);
            }
            let b = take_row(fo, "bias row")?;
            layers.push(GcnLayer {
                w: Mat {
                    rows: fi,
                    cols: fo,
                    data,
                },
                b,
            });
        }
        let head_w = take_row(*widths.last().unwrap(), "head weights")?;
        let head_b = take_row(1, "head bias")?[0];
        Ok(GcnModel {
            layers,
            head_w,
            head_b,
        })
    }
}

// ---------------------------------------------------------------------------
// Forward and backward
// ---------------------------------------------------------------------------

/// `D^(-1/2) (A + I) D^(-1/2)` over the example's undirected adjacency.
pub fn normalize_adjacency(example: &GraphExample) -> Mat {
    let n = example.features.rows;
    let mut a = Mat::zeros(n, n);
    for i in 0..n {
        a.set(i, i, 1.0);
    }
    for &(u, v) in &example.adjacency {
        a.set(u as usize, v as usize, 1.0);
        a.set(v as usize, u as usize, 1.0);
    }
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
    for i in 0..n {
        for j in 0..n {
            let v = a.get(i, j);
            if v != 0.0 {
                a.set(i, j, v / (deg[i] * deg[j]).sqrt());
            }
        }
    }
    a
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    a_hat: Mat,
    /// Layer inputs: `h[0]` is the feature matrix, `h[i+1]` the activation
    /// after layer `i`.
    h: Vec<Mat>,
    /// Aggregated inputs `A_hat * h[i]`, one per layer.
    ah: Vec<Mat>,
    /// Pre-activations, one per layer.
    z: Vec<Mat>,
    pooled: Vec<f64>,
    score: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scores one example and caches the activations for [`backward`].
pub fn forward(model: &GcnModel, example: &GraphExample) -> Result<(Score, ForwardCache), GcnError> {
    if example.features.cols != model.input_width() {
        return Err(GcnError::DimensionMismatch {
            features: example.features.cols,
            expected: model.input_width(),
        });
    }
    let a_hat = normalize_adjacency(example);
    forward_prepared(model, &example.features, &a_hat)
}

/// As [`forward`] with a precomputed normalized adjacency; the training
/// loop computes each `A_hat` once and reuses it across epochs.
pub fn forward_prepared(
    model: &GcnModel,
    features: &Mat,
    a_hat: &Mat,
) -> Result<(Score, ForwardCache), GcnError> {
    if features.cols != model.input_width() {
        return Err(GcnError::DimensionMismatch {
            features: features.cols,
            expected: model.input_width(),
        });
    }
    let n = features.rows;
    let mut h = vec![features.clone()];
    let mut ah_list = Vec::with_capacity(model.layers.len());
    let mut z_list = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let ah = a_hat.matmul(h.last().unwrap());
        let mut z = ah.matmul(&layer.w);
        for r in 0..z.rows {
            for (zv, bv) in z.row_mut(r).iter_mut().zip(&layer.b) {
                *zv += bv;
            }
        }
        let mut act = z.clone();
        for v in &mut act.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        ah_list.push(ah);
        z_list.push(z);
        h.push(act);
    }
    let last = h.last().unwrap();
    let mut pooled = last.col_sums();
    for v in &mut pooled {
        *v /= n as f64;
    }
    let logit: f64 = pooled
        .iter()
        .zip(&model.head_w)
        .map(|(p, w)| p * w)
        .sum::<f64>()
        + model.head_b;
    let score = sigmoid(logit);
    Ok((
        Score::new(score),
        ForwardCache {
            a_hat: a_hat.clone(),
            h,
            ah: ah_list,
            z: z_list,
            pooled,
            score,
        },
    ))
}

/// Clamp bound for the cross-entropy: scores are clipped to
/// `[EPS, 1 - EPS]` before the logarithms.
pub const BCE_EPS: f64 = 1e-7;

/// Binary cross-entropy with clamped score; `label = true` means the
/// report is a false positive (target 1).
pub fn bce_loss(score: Score, label: bool) -> f64 {
    let s = score.value().clamp(BCE_EPS, 1.0 - BCE_EPS);
    if label {
        -s.ln()
    } else {
        -(1.0 - s).ln()
    }
}

/// Gradients in model shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Mat, Vec<f64>)>,
    pub head_w: Vec<f64>,
    pub head_b: f64,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(&w.data);
            out.extend(b);
        }
        out.extend(&self.head_w);
        out.push(self.head_b);
        out
    }
}

/// Exact gradients of `bce_loss(forward(example), label)` for every
/// parameter. Inside the clamp plateau the loss is locally constant, so the
/// gradient there is zero, matching what finite differences see.
pub fn backward(
    model: &GcnModel,
    example: &GraphExample,
    label: bool,
    cache: &ForwardCache,
) -> Gradients {
    let _ = example;
    let n = cache.h[0].rows as f64;
    let s = cache.score;
    // d loss / d logit; (s - y) through sigmoid + BCE when unclamped.
    let dlogit = if s <= BCE_EPS || s >= 1.0 - BCE_EPS {
        0.0
    } else {
        s - f64::from(u8::from(label))
    };

    let head_w_grad: Vec<f64> = cache.pooled.iter().map(|p| dlogit * p).collect();
    let head_b_grad = dlogit;

    // d loss / d H_L: every row receives w_h * dlogit / n from the mean pool.
    let f_last = cache.pooled.len();
    let rows = cache.h.last().unwrap().rows;
    let mut dh = Mat::zeros(rows, f_last);
    for r in 0..rows {
        for c in 0..f_last {
            dh.set(r, c, dlogit * model.head_w[c] / n);
        }
    }

    let mut layer_grads: Vec<(Mat, Vec<f64>)> = Vec::with_capacity(model.layers.len());
    for (i, layer) in model.layers.iter().enumerate().rev() {
        // Through the relu.
        let mut dz = dh;
        for (v, &z) in dz.data.iter_mut().zip(&cache.z[i].data) {
            if z <= 0.0 {
                *v = 0.0;
            }
        }
        let dw = cache.ah[i].t_matmul(&dz);
        let db = dz.col_sums();
        // d loss / d H_i = A_hat^T (dZ W^T); A_hat is symmetric.
        let d_ah = dz.matmul_t(&layer.w);
        dh = cache.a_hat.matmul(&d_ah);
        layer_grads.push((dw, db));
    }
    layer_grads.reverse();

    Gradients {
        layers: layer_grads,
        head_w: head_w_grad,
        head_b: head_b_grad,
    }
}

/// `p <- p - rate * clamp(grad, -clip..clip)`, component-wise.
pub fn sgd_step(
    model: &mut GcnModel,
    grads: &Gradients,
    rate: f64,
    clip: f64,
) -> Result<(), GcnError> {
    if grads.layers.len() != model.layers.len()
        || grads.head_w.len() != model.head_w.len()
        || model
            .layers
            .iter()
            .zip(&grads.layers)
            .any(|(l, (gw, gb))| l.w.rows != gw.rows || l.w.cols != gw.cols || l.b.len() != gb.len())
    {
        return Err(GcnError::ShapeMismatch);
    }
    let step = |p: &mut f64, g: f64| *p -= rate * g.clamp(-clip, clip);
    for (layer, (gw, gb)) in model.layers.iter_mut().zip(&grads.layers) {
        for (p, &g) in layer.w.data.iter_mut().zip(&gw.data) {
            step(p, g);
        }
        for (p, &g) in layer.b.iter_mut().zip(gb) {
            step(p, g);
        }
    }
    for (p, &g) in model.head_w.iter_mut().zip(&grads.head_w) {
        step(p, g);
    }
    step(&mut model.head_b, grads.head_b);
    Ok(())
}

/// Trains a model with per-epoch reshuffling and returns the mean loss per
/// epoch. Same dataset, same config, same result, bit for bit.
pub fn train(
    dataset: &[GraphExample],
    cfg: &TrainConfig,
) -> Result<(GcnModel, Vec<f64>), GcnError> {
    if dataset.is_empty() {
        return Err(GcnError::EmptyDataset);
    }
    let mut labels = Vec::with_capacity(dataset.len());
    for ex in dataset {
        labels.push(ex.label.ok_or_else(|| GcnError::UnlabeledExample {
            case_id: ex.case_id.clone(),
        })?);
    }
    let f = dataset[0].features.cols;
    for ex in dataset {
        if ex.features.cols != f {
            return Err(GcnError::DimensionMismatch {
                features: ex.features.cols,
                expected: f,
            });
        }
    }

    let mut widths = vec![f];
    widths.extend(&cfg.hidden);
    let mut model = GcnModel::init(&widths, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));

    let a_hats: Vec<Mat> = crate::batch::map_examples(dataset, normalize_adjacency);

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &idx in &order {
            let (score, cache) =
                forward_prepared(&model, &dataset[idx].features, &a_hats[idx])?;
            loss_sum += bce_loss(score, labels[idx]);
            let grads = backward(&model, &dataset[idx], labels[idx], &cache);
            sgd_step(&mut model, &grads, cfg.rate, cfg.clip)?;
        }
        history.push(loss_sum / dataset.len() as f64);
    }
    Ok((model, history))
}

/// Central finite differences (`h = 1e-4`) against the analytic gradients;
/// returns the maximum relative error
/// `|a - n| / max(|a|, |n|, 1e-8)` over all parameters.
pub fn gradient_check(model: &GcnModel, example: &GraphExample, label: bool) -> f64 {
    const H: f64 = 1e-4;
    let (_, cache) = forward(model, example).expect("shapes must match");
    let analytic = backward(model, example, label, &cache).flatten();

    let base = model.flatten();
    let mut perturbed = model.clone();
    let mut max_err: f64 = 0.0;
    for k in 0..base.len() {
        let mut flat = base.clone();
        flat[k] = base[k] + H;
        perturbed.assign_from_flat(&flat);
        let (s_plus, _) = forward(&perturbed, example).unwrap();
        flat[k] = base[k] - H;
        perturbed.assign_from_flat(&flat);
        let (s_minus, _) = forward(&perturbed, example).unwrap();
        let numeric = (bce_loss(s_plus, label) - bce_loss(s_minus, label)) / (2.0 * H);
        let a = analytic[k];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        max_err = max_err.max(err);
    }
    max_err
}
