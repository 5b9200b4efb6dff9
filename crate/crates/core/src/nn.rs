//! Fully-connected ReLU classifier with hand-written backprop, plus the
//! synthetic data and label-permutation tasks it trains on.
//!
//! # Parameter layout
//!
//! θ is flattened layer by layer. For a layer with `n_in` inputs and `n_out`
//! outputs the block is the `n_out × n_in` weight matrix in row-major order
//! (`W[o][i]` at `o * n_in + i`) followed by the `n_out` biases.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::vecmath::{ParamVector, RngStream};

/// Layer widths `[input, hidden..., output]`. Hidden layers use ReLU; the
/// output feeds a softmax cross-entropy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    layer_sizes: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
struct LayerView {
    n_in: usize,
    n_out: usize,
    w_offset: usize,
    b_offset: usize,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::domain("an MLP needs at least input and output sizes"));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::domain("layer sizes must be >= 1"));
        }
        Ok(MlpSpec { layer_sizes })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// `Σ (n_in · n_out + n_out)` over layers.
    pub fn num_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn layers(&self) -> Vec<LayerView> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let view = LayerView {
                    n_in: w[0],
                    n_out: w[1],
                    w_offset: offset,
                    b_offset: offset + w[0] * w[1],
                };
                offset += w[0] * w[1] + w[1];
                view
            })
            .collect()
    }
}

/// He-uniform initialization: weights `U(−√(6/n_in), √(6/n_in))`, drawn in
/// layout order; biases zero.
pub fn init_mlp(spec: &MlpSpec, rng: &mut RngStream) -> ParamVector {
    let mut theta = vec![0.0; spec.num_params()];
    for layer in spec.layers() {
        let bound = (6.0 / layer.n_in as f64).sqrt();
        for w in &mut theta[layer.w_offset..layer.b_offset] {
            *w = rng.uniform_in(-bound, bound);
        }
    }
    ParamVector::checked("theta", theta).expect("finite init")
}

/// Classification data: `len` rows of `dim` features (row-major) and labels
/// in `[0, n_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    n_classes: usize,
    inputs: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(dim: usize, n_classes: usize, inputs: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 || n_classes == 0 {
            return Err(Error::domain("dataset needs dim >= 1 and n_classes >= 1"));
        }
        Error::check_dims(labels.len() * dim, inputs.len())?;
        if let Some(i) = labels.iter().position(|&l| l >= n_classes) {
            return Err(Error::domain(format!(
                "label {} at row {i} outside [0, {n_classes})",
                labels[i]
            )));
        }
        if let Some(i) = inputs.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { field: "inputs", index: i });
        }
        Ok(Dataset {
            dim,
            n_classes,
            inputs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    /// Gathers the given rows into a contiguous batch.
    pub fn gather(&self, indices: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let mut x = Vec::with_capacity(indices.len() * self.dim);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(self.row(i));
            y.push(self.labels[i]);
        }
        (x, y)
    }

    /// Same inputs with every label mapped through `perm`.
    pub fn relabeled(&self, perm: &Permutation) -> Result<Dataset> {
        Error::check_dims(self.n_classes, perm.len())?;
        Ok(Dataset {
            labels: self.labels.iter().map(|&l| perm.apply(l)).collect(),
            ..self.clone()
        })
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Writes `x0,...,x{dim-1},label` with a header row; floats use 17
    /// significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (0..self.dim)
            .map(|i| format!("x{i}"))
            .chain(std::iter::once("label".to_string()))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut line: Vec<String> = self.row(i).iter().map(|v| format!("{v:.16e}")).collect();
            line.push(self.labels[i].to_string());
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Reads the format produced by [`Dataset::write_csv`].
    pub fn read_csv<R: BufRead>(input: R, n_classes: usize) -> Result<Dataset> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty dataset file".into()))??;
        let cols = header.split(',').count();
        if cols < 2 || header.rsplit(',').next() != Some("label") {
            return Err(Error::Parse("header must be x0,...,label".into()));
        }
        let dim = cols - 1;
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols {
                return Err(Error::Parse(format!(
                    "row {} has {} fields, expected {cols}",
                    lineno + 2,
                    fields.len()
                )));
            }
            for f in &fields[..dim] {
                inputs.push(f.trim().parse::<f64>().map_err(|e| {
                    Error::Parse(format!("row {}: `{f}`: {e}", lineno + 2))
                })?);
            }
            let label = fields[dim];
            labels.push(label.trim().parse::<usize>().map_err(|e| {
                Error::Parse(format!("row {}: label `{label}`: {e}", lineno + 2))
            })?);
        }
        Dataset::new(dim, n_classes, inputs, labels)
    }
}

/// Isotropic Gaussian mixture.
///
/// Each class mean is a standard-normal vector in `dim` dimensions; samples
/// are `mean + spread · N(0, I)`. Rows are interleaved by class
/// (`0, 1, ..., C-1, 0, 1, ...`) so every class has exactly `n_per_class`
/// rows. Means are drawn first, then samples, from the same stream. With
/// small `spread` the classes are linearly separable with high probability.
pub fn make_gaussian_mixture(
    n_classes: usize,
    dim: usize,
    n_per_class: usize,
    spread: f64,
    rng: &mut RngStream,
) -> Result<Dataset> {
    if n_classes == 0 || dim == 0 || n_per_class == 0 {
        return Err(Error::domain("gaussian mixture counts must be >= 1"));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::domain(format!("spread = {spread} must be >= 0")));
    }
    let means: Vec<Vec<f64>> = (0..n_classes).map(|_| rng.normal_vec(dim)).collect();
    let mut inputs = Vec::with_capacity(n_classes * n_per_class * dim);
    let mut labels = Vec::with_capacity(n_classes * n_per_class);
    for _ in 0..n_per_class {
        for (c, mean) in means.iter().enumerate() {
            inputs.extend(mean.iter().map(|m| m + spread * rng.standard_normal()));
            labels.push(c);
        }
    }
    Dataset::new(dim, n_classes, inputs, labels)
}

/// Loss, correct-prediction count and optional gradient over one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    /// Mean cross-entropy.
    pub loss: f64,
    /// Samples whose argmax logit (lowest index on ties) equals the label.
    pub correct: usize,
    pub count: usize,
    pub grad: Option<ParamVector>,
}

impl BatchResult {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.count as f64
    }
}

/// Forward pass (and backward pass when `with_grad`) over a row-major batch.
/// Samples are processed in order and gradients summed sequentially before
/// dividing by the batch size.
pub fn evaluate_batch(
    theta: &ParamVector,
    spec: &MlpSpec,
    inputs: &[f64],
    labels: &[usize],
    with_grad: bool,
) -> Result<BatchResult> {
    Error::check_dims(spec.num_params(), theta.len())?;
    let d = spec.input_dim();
    if labels.is_empty() {
        return Err(Error::domain("batch must be nonempty"));
    }
    Error::check_dims(labels.len() * d, inputs.len())?;
    let n_classes = spec.n_classes();
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::domain(format!("label {bad} outside [0, {n_classes})")));
    }

    let layers = spec.layers();
    let w = theta.as_slice();
    let mut grad = if with_grad { vec![0.0; w.len()] } else { Vec::new() };
    // activations[l] is the input to layer l; pre[l] its pre-activation output
    let mut activations: Vec<Vec<f64>> = layers.iter().map(|l| vec![0.0; l.n_in]).collect();
    let mut pre: Vec<Vec<f64>> = layers.iter().map(|l| vec![0.0; l.n_out]).collect();
    let mut total_loss = 0.0;
    let mut correct = 0;

    for (s, &label) in labels.iter().enumerate() {
        activations[0].copy_from_slice(&inputs[s * d..(s + 1) * d]);
        for (li, layer) in layers.iter().enumerate() {
            let (input, z) = (&activations[li], &mut pre[li]);
            for o in 0..layer.n_out {
                let row = &w[layer.w_offset + o * layer.n_in..layer.w_offset + (o + 1) * layer.n_in];
                let mut acc = w[layer.b_offset + o];
                for (wi, xi) in row.iter().zip(input.iter()) {
                    acc += wi * xi;
                }
                z[o] = acc;
            }
            if li + 1 < layers.len() {
                let next: Vec<f64> = pre[li].iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
                activations[li + 1].copy_from_slice(&next);
            }
        }

        let logits = pre.last().unwrap();
        let mut argmax = 0;
        for (k, &v) in logits.iter().enumerate() {
            if v > logits[argmax] {
                argmax = k;
            }
        }
        if argmax == label {
            correct += 1;
        }
        let max = logits[argmax];
        let mut sum_exp = 0.0;
        for &v in logits {
            sum_exp += (v - max).exp();
        }
        let log_norm = max + sum_exp.ln();
        total_loss += log_norm - logits[label];

        if !with_grad {
            continue;
        }
        // dL/dz for the output layer: softmax − onehot
        let mut delta: Vec<f64> = logits.iter().map(|&v| (v - log_norm).exp()).collect();
        delta[label] -= 1.0;
        for li in (0..layers.len()).rev() {
            let layer = layers[li];
            let input = &activations[li];
            for o in 0..layer.n_out {
                let dz = delta[o];
                grad[layer.b_offset + o] += dz;
                if dz == 0.0 {
                    continue;
                }
                let base = layer.w_offset + o * layer.n_in;
                for (i, xi) in input.iter().enumerate() {
                    grad[base + i] += dz * xi;
                }
            }
            if li == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.n_in];
            for o in 0..layer.n_out {
                let dz = delta[o];
                if dz == 0.0 {
                    continue;
                }
                let base = layer.w_offset + o * layer.n_in;
                for (i, p) in prev.iter_mut().enumerate() {
                    *p += w[base + i] * dz;
                }
            }
            // ReLU derivative; ties at exactly zero take 0
            for (p, &z) in prev.iter_mut().zip(pre[li - 1].iter()) {
                if z <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    let count = labels.len();
    let inv = 1.0 / count as f64;
    let grad = if with_grad {
        grad.iter_mut().for_each(|g| *g *= inv);
        Some(ParamVector::checked("grad", grad)?)
    } else {
        None
    };
    let loss = total_loss * inv;
    if !loss.is_finite() {
        return Err(Error::NonFinite { field: "loss", index: 0 });
    }
    Ok(BatchResult {
        loss,
        correct,
        count,
        grad,
    })
}

/// Mean softmax cross-entropy over the batch and its exact gradient.
pub fn forward_backward(
    theta: &ParamVector,
    spec: &MlpSpec,
    inputs: &[f64],
    labels: &[usize],
) -> Result<(f64, ParamVector)> {
    let r = evaluate_batch(theta, spec, inputs, labels, true)?;
    Ok((r.loss, r.grad.expect("gradient requested")))
}

/// Mean cross-entropy over the whole dataset.
pub fn dataset_loss(theta: &ParamVector, spec: &MlpSpec, data: &Dataset) -> Result<f64> {
    Ok(evaluate_batch(theta, spec, data.inputs(), data.labels(), false)?.loss)
}

pub fn dataset_accuracy(theta: &ParamVector, spec: &MlpSpec, data: &Dataset) -> Result<f64> {
    Ok(evaluate_batch(theta, spec, data.inputs(), data.labels(), false)?.accuracy())
}

/// Bijection on class ids; `apply(c)` is the new label of class `c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation((0..n).collect())
    }

    pub fn from_map(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &m in &map {
            if m >= map.len() || seen[m] {
                return Err(Error::domain("permutation map is not a bijection"));
            }
            seen[m] = true;
        }
        Ok(Permutation(map))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn apply(&self, class: usize) -> usize {
        self.0[class]
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.0.len()];
        for (c, &m) in self.0.iter().enumerate() {
            inv[m] = c;
        }
        Permutation(inv)
    }

    /// `self` applied after `first`.
    pub fn after(&self, first: &Permutation) -> Permutation {
        Permutation(first.0.iter().map(|&c| self.0[c]).collect())
    }

    pub fn fixed_points(&self) -> usize {
        self.0.iter().enumerate().filter(|(c, &m)| *c == m).count()
    }

    pub fn moved(&self) -> usize {
        self.len() - self.fixed_points()
    }
}

/// Flips `round(δ·C)` classes chosen uniformly at random by one cyclic shift
/// among them; the rest keep their labels.
///
/// Fails when the rounding yields exactly one class, since a 1-cycle moves
/// nothing.
pub fn label_flip(
    labels: &[usize],
    n_classes: usize,
    delta: f64,
    rng: &mut RngStream,
) -> Result<(Vec<usize>, Permutation)> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::domain(format!("delta = {delta} outside [0, 1]")));
    }
    let k = (delta * n_classes as f64).round() as usize;
    if k == 1 {
        return Err(Error::domain(format!(
            "delta = {delta} with {n_classes} classes selects a single class; a flip needs 0 or >= 2"
        )));
    }
    let mut map: Vec<usize> = (0..n_classes).collect();
    if k >= 2 {
        let chosen = rng.sample_indices(n_classes, k);
        for i in 0..k {
            map[chosen[i]] = chosen[(i + 1) % k];
        }
    }
    let perm = Permutation(map);
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::domain(format!("label {bad} outside [0, {n_classes})")));
    }
    let flipped = labels.iter().map(|&l| perm.apply(l)).collect();
    Ok((flipped, perm))
}

/// Sequence of tasks over one base dataset. Task 0 uses the base labels;
/// each later task applies one more [`label_flip`] on top of the previous
/// task's labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    base: Dataset,
    /// `flips[0]` is the identity; `flips[k]` maps task `k-1` labels to task `k`.
    flips: Vec<Permutation>,
    delta: f64,
}

impl TaskStream {
    pub fn generate(base: Dataset, n_tasks: usize, delta: f64, rng: &mut RngStream) -> Result<Self> {
        if n_tasks == 0 {
            return Err(Error::domain("a task stream needs at least one task"));
        }
        let c = base.n_classes();
        let mut flips = vec![Permutation::identity(c)];
        for _ in 1..n_tasks {
            let (_, perm) = label_flip(&[], c, delta, rng)?;
            flips.push(perm);
        }
        Ok(TaskStream { base, flips, delta })
    }

    pub fn len(&self) -> usize {
        self.flips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flips.is_empty()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn base(&self) -> &Dataset {
        &self.base
    }

    pub fn transition(&self, task: usize) -> &Permutation {
        &self.flips[task]
    }

    /// Composite map from base labels to task `task` labels.
    pub fn mapping(&self, task: usize) -> Permutation {
        self.flips[1..=task]
            .iter()
            .fold(Permutation::identity(self.base.n_classes()), |acc, f| f.after(&acc))
    }

    pub fn task(&self, task: usize) -> Result<Dataset> {
        self.base.relabeled(&self.mapping(task))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(spec: &MlpSpec, theta: &ParamVector, x: &[f64], y: &[usize]) -> f64 {
        let (_, g) = forward_backward(theta, spec, x, y).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..theta.len() {
            let mut p = theta.as_slice().to_vec();
            p[i] += h;
            let lp = forward_backward(&ParamVector::new(p.clone()).unwrap(), spec, x, y).unwrap().0;
            p[i] -= 2.0 * h;
            let lm = forward_backward(&ParamVector::new(p).unwrap(), spec, x, y).unwrap().0;
            let num = (lp - lm) / (2.0 * h);
            worst = worst.max((g[i] - num).abs() / g[i].abs().max(1.0));
        }
        worst
    }

    #[test]
    fn parameter_count() {
        let spec = MlpSpec::new(vec![4, 8, 3]).unwrap();
        assert_eq!(spec.num_params(), 67);
        let theta = init_mlp(&spec, &mut RngStream::new(0));
        assert_eq!(theta.len(), 67);
        // biases: [32..40) and [64..67)
        assert!(theta.as_slice()[32..40].iter().all(|&b| b == 0.0));
        assert!(theta.as_slice()[64..67].iter().all(|&b| b == 0.0));
        assert_eq!(theta, init_mlp(&spec, &mut RngStream::new(0)));
        assert_ne!(theta, init_mlp(&spec, &mut RngStream::new(1)));
    }

    #[test]
    fn invalid_specs() {
        assert!(MlpSpec::new(vec![3]).is_err());
        assert!(MlpSpec::new(vec![3, 0, 2]).is_err());
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let spec = MlpSpec::new(vec![3, 5, 4]).unwrap();
        let theta = ParamVector::zeros(spec.num_params());
        let x = [0.3, -2.0, 1.0, 5.0, 5.0, 5.0];
        let (loss, _) = forward_backward(&theta, &spec, &x, &[1, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn tiny_net_gradient_matches_finite_differences() {
        let spec = MlpSpec::new(vec![2, 2]).unwrap();
        let theta = init_mlp(&spec, &mut RngStream::new(3));
        assert!(fd_check(&spec, &theta, &[0.7, -1.3], &[1]) < 1e-5);
    }

    #[test]
    fn deep_net_gradient_matches_finite_differences() {
        let spec = MlpSpec::new(vec![3, 6, 5, 4, 6, 3]).unwrap();
        let mut rng = RngStream::new(4);
        let theta = init_mlp(&spec, &mut rng);
        let x = rng.normal_vec(3 * 4);
        assert!(fd_check(&spec, &theta, &x, &[0, 2, 1, 2]) < 1e-5);
    }

    #[test]
    fn duplicated_batch_is_unchanged() {
        let spec = MlpSpec::new(vec![3, 4, 2]).unwrap();
        let mut rng = RngStream::new(5);
        let theta = init_mlp(&spec, &mut rng);
        let x = rng.normal_vec(9);
        let y = [0, 1, 1];
        let (l1, g1) = forward_backward(&theta, &spec, &x, &y).unwrap();
        let x2: Vec<f64> = x.iter().chain(x.iter()).copied().collect();
        let y2: Vec<usize> = y.iter().chain(y.iter()).copied().collect();
        let (l2, g2) = forward_backward(&theta, &spec, &x2, &y2).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn batch_order_does_not_change_loss() {
        let spec = MlpSpec::new(vec![2, 3, 3]).unwrap();
        let mut rng = RngStream::new(6);
        let theta = init_mlp(&spec, &mut rng);
        let x = rng.normal_vec(8);
        let y = [0, 2, 1, 2];
        let (l1, _) = forward_backward(&theta, &spec, &x, &y).unwrap();
        let xr: Vec<f64> = x.chunks(2).rev().flatten().copied().collect();
        let yr: Vec<usize> = y.iter().rev().copied().collect();
        let (l2, _) = forward_backward(&theta, &spec, &xr, &yr).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
    }

    #[test]
    fn dimension_errors() {
        let spec = MlpSpec::new(vec![2, 2]).unwrap();
        let theta = ParamVector::zeros(spec.num_params());
        assert!(forward_backward(&theta, &spec, &[1.0, 2.0, 3.0], &[0]).is_err());
        assert!(forward_backward(&ParamVector::zeros(3), &spec, &[1.0, 2.0], &[0]).is_err());
        assert!(forward_backward(&theta, &spec, &[], &[]).is_err());
    }

    #[test]
    fn mixture_is_balanced_and_seeded() {
        let a = make_gaussian_mixture(3, 4, 7, 0.5, &mut RngStream::new(1)).unwrap();
        assert_eq!(a.len(), 21);
        assert_eq!(a.class_counts(), vec![7, 7, 7]);
        let b = make_gaussian_mixture(3, 4, 7, 0.5, &mut RngStream::new(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_round_trip() {
        let data = make_gaussian_mixture(2, 3, 4, 1.0, &mut RngStream::new(2)).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x0,x1,x2,label\n"));
        let back = Dataset::read_csv(std::io::Cursor::new(buf), 2).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn flip_degrees() {
        let mut rng = RngStream::new(10);
        let labels: Vec<usize> = (0..10).cycle().take(100).collect();

        let (same, perm) = label_flip(&labels, 10, 0.0, &mut rng).unwrap();
        assert_eq!(perm, Permutation::identity(10));
        assert_eq!(same, labels);

        let (_, perm) = label_flip(&labels, 10, 1.0, &mut rng).unwrap();
        assert_eq!(perm.fixed_points(), 0);

        let (flipped, perm) = label_flip(&labels, 10, 0.4, &mut rng).unwrap();
        assert_eq!(perm.moved(), 4);
        assert_eq!(perm.fixed_points(), 6);
        let changed = labels.iter().zip(&flipped).filter(|(a, b)| a != b).count();
        let mass: usize = labels.iter().filter(|&&l| perm.apply(l) != l).count();
        assert_eq!(changed, mass);
        assert_eq!(changed, 40);

        let restored: Vec<usize> = flipped.iter().map(|&l| perm.inverse().apply(l)).collect();
        assert_eq!(restored, labels);

        assert!(label_flip(&labels, 10, 0.1, &mut rng).is_err());
        assert!(label_flip(&labels, 10, 1.5, &mut rng).is_err());
    }

    #[test]
    fn task_stream_composes_flips() {
        let base = make_gaussian_mixture(5, 2, 3, 1.0, &mut RngStream::new(3)).unwrap();
        let stream = TaskStream::generate(base.clone(), 4, 0.8, &mut RngStream::new(4)).unwrap();
        assert_eq!(stream.len(), 4);
        assert_eq!(stream.task(0).unwrap(), base);
        for k in 1..4 {
            assert_eq!(stream.transition(k).moved(), 4);
            let prev = stream.task(k - 1).unwrap();
            let cur = stream.task(k).unwrap();
            let expect: Vec<usize> = prev.labels().iter().map(|&l| stream.transition(k).apply(l)).collect();
            assert_eq!(cur.labels(), &expect[..]);
        }
    }
}
