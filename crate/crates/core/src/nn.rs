//! Minimal deterministic feed-forward network with reverse-mode gradients.
//!
//! The network stores a master parameter vector but computes on an
//! *externally supplied* effective weight vector of the same length, so that
//! ownership and masking logic stays outside this module. Every dot product
//! accumulates in ascending input-index order; this fixed order is what makes
//! outputs bit-reproducible and keeps them bit-identical when zero-valued
//! weights are appended by growth.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Relu,
    /// Dense layer producing logits; `loss_and_grad` attaches softmax
    /// cross-entropy here. Must be the last layer when present.
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_width: usize,
    pub out_width: usize,
    pub has_bias: bool,
}

impl LayerSpec {
    pub fn dense(in_width: usize, out_width: usize) -> Self {
        Self {
            kind: LayerKind::Dense,
            in_width,
            out_width,
            has_bias: true,
        }
    }

    pub fn dense_no_bias(in_width: usize, out_width: usize) -> Self {
        Self {
            kind: LayerKind::Dense,
            in_width,
            out_width,
            has_bias: false,
        }
    }

    pub fn relu(width: usize) -> Self {
        Self {
            kind: LayerKind::Relu,
            in_width: width,
            out_width: width,
            has_bias: false,
        }
    }

    pub fn head(in_width: usize, classes: usize) -> Self {
        Self {
            kind: LayerKind::Head,
            in_width,
            out_width: classes,
            has_bias: true,
        }
    }

    pub fn has_params(&self) -> bool {
        !matches!(self.kind, LayerKind::Relu)
    }

    pub fn param_count(&self) -> usize {
        if self.has_params() {
            self.in_width * self.out_width + if self.has_bias { self.out_width } else { 0 }
        } else {
            0
        }
    }
}

/// Flat-index matrices for one layer. `weight` is row-major `out x in`;
/// `bias` has one entry per output unit (empty when the layer has no bias).
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct LayerIndex {
    pub(crate) weight: Vec<u32>,
    pub(crate) bias: Vec<u32>,
}

/// Feed-forward network over a flat, canonically indexed parameter store.
///
/// Initial indices are assigned layer-major then row-major. Growth appends
/// fresh indices at the end of the flat vector and never renumbers existing
/// ones, so a parameter's flat index is stable for the life of the network.
#[derive(Debug, Clone)]
pub struct Network {
    specs: Vec<LayerSpec>,
    index: Vec<LayerIndex>,
    params: Vec<f32>,
    param_layer: Vec<u16>,
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::InvalidSpec("empty layer list".into()));
    }
    for (l, s) in specs.iter().enumerate() {
        if s.in_width == 0 || s.out_width == 0 {
            return Err(Error::InvalidSpec(format!("layer {l} has zero width")));
        }
        if s.kind == LayerKind::Relu && s.in_width != s.out_width {
            return Err(Error::InvalidSpec(format!(
                "relu layer {l} must preserve width"
            )));
        }
        if l > 0 && specs[l - 1].out_width != s.in_width {
            return Err(Error::InvalidSpec(format!(
                "layer {l} expects {} inputs but layer {} yields {}",
                s.in_width,
                l - 1,
                specs[l - 1].out_width
            )));
        }
        if s.kind == LayerKind::Head && l + 1 != specs.len() {
            return Err(Error::InvalidSpec(format!(
                "head layer {l} must be the last layer"
            )));
        }
    }
    Ok(())
}

pub(crate) fn uniform_limit(spec: &LayerSpec) -> f32 {
    (6.0f32 / (spec.in_width + spec.out_width) as f32).sqrt()
}

/// Builds a network with parameters drawn uniformly from
/// `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`, from a seeded generator.
pub fn build_network(specs: Vec<LayerSpec>, seed: u64) -> Result<Network> {
    validate_specs(&specs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    let mut index = Vec::with_capacity(specs.len());
    let mut param_layer = Vec::new();
    for (l, spec) in specs.iter().enumerate() {
        let mut li = LayerIndex {
            weight: Vec::new(),
            bias: Vec::new(),
        };
        if spec.has_params() {
            let a = uniform_limit(spec);
            let n_w = spec.in_width * spec.out_width;
            li.weight.reserve(n_w);
            for _ in 0..n_w {
                li.weight.push(params.len() as u32);
                params.push(a * (2.0 * rng.random::<f32>() - 1.0));
                param_layer.push(l as u16);
            }
            if spec.has_bias {
                for _ in 0..spec.out_width {
                    li.bias.push(params.len() as u32);
                    params.push(a * (2.0 * rng.random::<f32>() - 1.0));
                    param_layer.push(l as u16);
                }
            }
        }
        index.push(li);
    }
    Ok(Network {
        specs,
        index,
        params,
        param_layer,
    })
}

impl Network {
    /// Reassembles a network from serialized parts, revalidating the layer
    /// chain and checking that the index matrices form a bijection onto
    /// `[0, params.len())`.
    pub(crate) fn from_parts(
        specs: Vec<LayerSpec>,
        index: Vec<LayerIndex>,
        params: Vec<f32>,
    ) -> Result<Network> {
        validate_specs(&specs)?;
        if specs.len() != index.len() {
            return Err(Error::Format("layer index count mismatch".into()));
        }
        let n = params.len();
        let mut param_layer = vec![u16::MAX; n];
        let mut seen = vec![false; n];
        let mut total = 0usize;
        for (l, (spec, li)) in specs.iter().zip(&index).enumerate() {
            let want_w = if spec.has_params() {
                spec.in_width * spec.out_width
            } else {
                0
            };
            let want_b = if spec.has_params() && spec.has_bias {
                spec.out_width
            } else {
                0
            };
            if li.weight.len() != want_w || li.bias.len() != want_b {
                return Err(Error::Format(format!("layer {l} index shape mismatch")));
            }
            for &i in li.weight.iter().chain(&li.bias) {
                let i = i as usize;
                if i >= n || seen[i] {
                    return Err(Error::Format(format!(
                        "layer {l} index {i} out of range or duplicated"
                    )));
                }
                seen[i] = true;
                param_layer[i] = l as u16;
                total += 1;
            }
        }
        if total != n {
            return Err(Error::Format(format!(
                "index matrices cover {total} of {n} parameters"
            )));
        }
        Ok(Network {
            specs,
            index,
            params,
            param_layer,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub(crate) fn layer_index(&self) -> &[LayerIndex] {
        &self.index
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn input_width(&self) -> usize {
        self.specs[0].in_width
    }

    /// Width of the last layer's output (the feature width for head-less
    /// backbones, the class count for networks ending in a head).
    pub fn output_width(&self) -> usize {
        self.specs[self.specs.len() - 1].out_width
    }

    /// Layer owning a given flat parameter index.
    pub fn layer_of_param(&self, i: usize) -> usize {
        self.param_layer[i] as usize
    }

    /// Flat index of weight (row, col) of a layer. Rows are output units.
    pub fn weight_index(&self, layer: usize, row: usize, col: usize) -> usize {
        let w = self.specs[layer].in_width;
        self.index[layer].weight[row * w + col] as usize
    }

    pub fn bias_index(&self, layer: usize, row: usize) -> usize {
        self.index[layer].bias[row] as usize
    }

    fn check_effective(&self, effective: &[f32]) -> Result<()> {
        if effective.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                what: "effective weights",
                expected: self.params.len(),
                got: effective.len(),
            });
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.n_rows() == 0 || batch.row_width() != self.input_width() {
            return Err(Error::DimensionMismatch(format!(
                "batch rows of width {} do not match input width {}",
                batch.row_width(),
                self.input_width()
            )));
        }
        Ok(())
    }

    /// Runs all layers, returning every intermediate activation. Entry 0 is
    /// the flattened input; entry `l + 1` is the output of layer `l`.
    fn run_layers(&self, effective: &[f32], batch: &Tensor) -> Vec<Vec<f32>> {
        let b = batch.n_rows();
        let mut acts: Vec<Vec<f32>> = Vec::with_capacity(self.specs.len() + 1);
        acts.push(batch.data().to_vec());
        for (spec, li) in self.specs.iter().zip(&self.index) {
            let x = acts.last().unwrap();
            let (nin, nout) = (spec.in_width, spec.out_width);
            let mut y = vec![0.0f32; b * nout];
            match spec.kind {
                LayerKind::Relu => {
                    for (yi, &xi) in y.iter_mut().zip(x.iter()) {
                        *yi = if xi > 0.0 { xi } else { 0.0 };
                    }
                }
                LayerKind::Dense | LayerKind::Head => {
                    for r in 0..b {
                        let xr = &x[r * nin..(r + 1) * nin];
                        for o in 0..nout {
                            let row = &li.weight[o * nin..(o + 1) * nin];
                            let mut sum = if spec.has_bias {
                                effective[li.bias[o] as usize]
                            } else {
                                0.0
                            };
                            // Ascending input index; the order is load-bearing
                            // for bit-exact replay after growth.
                            for (i, &wi) in row.iter().enumerate() {
                                sum += effective[wi as usize] * xr[i];
                            }
                            y[r * nout + o] = sum;
                        }
                    }
                }
            }
            acts.push(y);
        }
        acts
    }

    /// Forward pass over an effective weight vector; returns logits
    /// (the last layer's raw output).
    pub fn forward(&self, effective: &[f32], batch: &Tensor) -> Result<Tensor> {
        self.check_effective(effective)?;
        self.check_batch(batch)?;
        let acts = self.run_layers(effective, batch);
        let out = acts.into_iter().next_back().unwrap();
        Tensor::new(vec![batch.n_rows(), self.output_width()], out)
    }

    /// Mean softmax cross-entropy and its gradient with respect to the
    /// effective weight vector. Requires the last layer to be a head.
    pub fn loss_and_grad(
        &self,
        effective: &[f32],
        batch: &Tensor,
        labels: &[u32],
    ) -> Result<(f32, Vec<f32>)> {
        self.check_effective(effective)?;
        self.check_batch(batch)?;
        let last = self.specs[self.specs.len() - 1];
        if last.kind != LayerKind::Head {
            return Err(Error::InvalidSpec(
                "loss requires a softmax cross-entropy head as the last layer".into(),
            ));
        }
        let b = batch.n_rows();
        if labels.len() != b {
            return Err(Error::LengthMismatch {
                what: "labels",
                expected: b,
                got: labels.len(),
            });
        }
        let classes = last.out_width;
        for &y in labels {
            if y as usize >= classes {
                return Err(Error::LabelOutOfRange { label: y, classes });
            }
        }

        let acts = self.run_layers(effective, batch);
        let logits = acts.last().unwrap();
        let inv_b = 1.0f32 / b as f32;

        let mut loss = 0.0f32;
        // d(loss)/d(logit), already averaged over the batch.
        let mut delta = vec![0.0f32; b * classes];
        for r in 0..b {
            let z = &logits[r * classes..(r + 1) * classes];
            let m = z.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f32;
            for &zi in z {
                sum += (zi - m).exp();
            }
            let y = labels[r] as usize;
            loss += sum.ln() + m - z[y];
            for c in 0..classes {
                let p = (z[c] - m).exp() / sum;
                delta[r * classes + c] = (p - if c == y { 1.0 } else { 0.0 }) * inv_b;
            }
        }
        loss *= inv_b;

        let mut grad = vec![0.0f32; self.params.len()];
        let mut d_out = delta;
        for (l, (spec, li)) in self.specs.iter().zip(&self.index).enumerate().rev() {
            let (nin, nout) = (spec.in_width, spec.out_width);
            let x = &acts[l];
            match spec.kind {
                LayerKind::Relu => {
                    let mut d_in = d_out;
                    for (di, &xi) in d_in.iter_mut().zip(x.iter()) {
                        if xi <= 0.0 {
                            *di = 0.0;
                        }
                    }
                    d_out = d_in;
                }
                LayerKind::Dense | LayerKind::Head => {
                    let mut d_in = vec![0.0f32; b * nin];
                    for r in 0..b {
                        let xr = &x[r * nin..(r + 1) * nin];
                        let dr = &d_out[r * nout..(r + 1) * nout];
                        for o in 0..nout {
                            let dz = dr[o];
                            if spec.has_bias {
                                grad[li.bias[o] as usize] += dz;
                            }
                            let row = &li.weight[o * nin..(o + 1) * nin];
                            let din_r = &mut d_in[r * nin..(r + 1) * nin];
                            for (i, &wi) in row.iter().enumerate() {
                                grad[wi as usize] += dz * xr[i];
                                din_r[i] += effective[wi as usize] * dz;
                            }
                        }
                    }
                    d_out = d_in;
                }
            }
        }
        Ok((loss, grad))
    }

    /// Appends `added_out[l]` fresh output units to each layer, assigning new
    /// flat indices past the current end and initializing them to zero.
    /// Existing indices are untouched. Returns the appended index range.
    pub fn append_units(&mut self, added_out: &[usize]) -> Result<std::ops::Range<usize>> {
        self.check_growth(added_out)?;
        let start = self.params.len();
        let mut next = start as u32;
        for (l, spec) in self.specs.iter_mut().enumerate() {
            let added_in = if l == 0 { 0 } else { added_out[l - 1] };
            let add_out = added_out[l];
            let (old_in, old_out) = (spec.in_width, spec.out_width);
            let (new_in, new_out) = (old_in + added_in, old_out + add_out);
            if spec.has_params() && (added_in > 0 || add_out > 0) {
                let li = &mut self.index[l];
                let mut weight = vec![0u32; new_out * new_in];
                for o in 0..old_out {
                    weight[o * new_in..o * new_in + old_in]
                        .copy_from_slice(&li.weight[o * old_in..(o + 1) * old_in]);
                }
                // New columns of existing rows, then whole new rows, then new
                // biases: the canonical append order within a layer.
                for o in 0..old_out {
                    for i in old_in..new_in {
                        weight[o * new_in + i] = next;
                        next += 1;
                    }
                }
                for o in old_out..new_out {
                    for i in 0..new_in {
                        weight[o * new_in + i] = next;
                        next += 1;
                    }
                }
                li.weight = weight;
                if spec.has_bias {
                    for _ in old_out..new_out {
                        li.bias.push(next);
                        next += 1;
                    }
                }
            }
            spec.in_width = new_in;
            spec.out_width = new_out;
        }
        let end = next as usize;
        self.params.resize(end, 0.0);
        self.param_layer.resize(end, 0);
        for (l, li) in self.index.iter().enumerate() {
            for &i in li.weight.iter().chain(&li.bias) {
                if (i as usize) >= start {
                    self.param_layer[i as usize] = l as u16;
                }
            }
        }
        Ok(start..end)
    }

    /// Number of parameters `append_units` would add, without mutating.
    pub fn growth_cost(&self, added_out: &[usize]) -> Result<usize> {
        self.check_growth(added_out)?;
        let mut cost = 0usize;
        for (l, spec) in self.specs.iter().enumerate() {
            if !spec.has_params() {
                continue;
            }
            let added_in = if l == 0 { 0 } else { added_out[l - 1] };
            let new_in = spec.in_width + added_in;
            cost += spec.out_width * added_in + added_out[l] * new_in;
            if spec.has_bias {
                cost += added_out[l];
            }
        }
        Ok(cost)
    }

    fn check_growth(&self, added_out: &[usize]) -> Result<()> {
        if added_out.len() != self.specs.len() {
            return Err(Error::LengthMismatch {
                what: "per-layer width increments",
                expected: self.specs.len(),
                got: added_out.len(),
            });
        }
        for (l, spec) in self.specs.iter().enumerate() {
            if spec.kind == LayerKind::Relu {
                let prev = if l == 0 { 0 } else { added_out[l - 1] };
                if added_out[l] != prev {
                    return Err(Error::InvalidSpec(format!(
                        "relu layer {l} increment must match its input layer"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Clones the network and appends a bias-carrying head layer whose
    /// parameters occupy the tail of the flat vector.
    pub fn extended_with_head(&self, weights: &[f32], bias: &[f32]) -> Result<Network> {
        let in_width = self.output_width();
        let classes = bias.len();
        if classes == 0 || weights.len() != in_width * classes {
            return Err(Error::LengthMismatch {
                what: "head weights",
                expected: in_width * classes,
                got: weights.len(),
            });
        }
        let mut net = self.clone();
        let spec = LayerSpec::head(in_width, classes);
        let mut next = net.params.len() as u32;
        let mut li = LayerIndex {
            weight: Vec::with_capacity(weights.len()),
            bias: Vec::with_capacity(classes),
        };
        for _ in 0..weights.len() {
            li.weight.push(next);
            next += 1;
        }
        for _ in 0..classes {
            li.bias.push(next);
            next += 1;
        }
        let layer = net.specs.len() as u16;
        net.params.extend_from_slice(weights);
        net.params.extend_from_slice(bias);
        net.param_layer
            .extend(std::iter::repeat_n(layer, weights.len() + classes));
        net.specs.push(spec);
        net.index.push(li);
        validate_specs(&net.specs)?;
        Ok(net)
    }
}

/// Momentum SGD over a flat parameter vector. Entries with a zero update
/// mask are left bit-identical, as is their momentum state.
pub fn sgd_step(
    params: &mut [f32],
    grad: &[f32],
    update_mask: &[bool],
    lr: f32,
    momentum_state: &mut [f32],
    momentum_coeff: f32,
) -> Result<()> {
    let n = params.len();
    if grad.len() != n {
        return Err(Error::LengthMismatch {
            what: "gradient",
            expected: n,
            got: grad.len(),
        });
    }
    if update_mask.len() != n {
        return Err(Error::LengthMismatch {
            what: "update mask",
            expected: n,
            got: update_mask.len(),
        });
    }
    if momentum_state.len() != n {
        return Err(Error::LengthMismatch {
            what: "momentum state",
            expected: n,
            got: momentum_state.len(),
        });
    }
    if !lr.is_finite() || !momentum_coeff.is_finite() {
        return Err(Error::NonFinite("learning rate"));
    }
    for i in 0..n {
        if update_mask[i] {
            let v = momentum_coeff * momentum_state[i] + grad[i];
            momentum_state[i] = v;
            params[i] -= lr * v;
        }
    }
    Ok(())
}

/// Fraction of rows whose argmax logit matches the label. Ties resolve to
/// the lowest class index.
pub fn accuracy(logits: &Tensor, labels: &[u32]) -> f32 {
    let mut correct = 0usize;
    for (r, &label) in labels.iter().enumerate() {
        let z = logits.row(r);
        let mut best = 0usize;
        for (c, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = c;
            }
        }
        if best == label as usize {
            correct += 1;
        }
    }
    correct as f32 / labels.len() as f32
}
