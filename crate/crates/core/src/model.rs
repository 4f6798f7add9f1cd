//! Executable network: parameter store, dense-block wiring, forward and
//! backward passes, and parameter counting.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::arch::{plan_architecture, ArchitectureTable, DenseNetConfig, BOTTLENECK_WIDTH};
use crate::error::{shape_err, Error, Result};
use crate::layers::{
    avgpool2d, avgpool2d_backward, batchnorm_backward, batchnorm_infer, batchnorm_train, concat_channels,
    conv2d, conv2d_backward, global_avgpool, global_avgpool_backward, linear, linear_backward, relu,
    relu_backward, split_channels, update_running_stats, BnCache, BnStats, BN_EPS, BN_MOMENTUM,
};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    /// Running statistics are stored alongside weights but are not trained.
    pub trainable: bool,
    /// Index of the owning stage in the architecture table.
    pub stage: usize,
}

/// Named parameter tensors in creation order. Names are unique.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn push(&mut self, name: String, tensor: Tensor<T>, trainable: bool, stage: usize) -> Result<usize> {
        if self.find(&name).is_some() {
            return Err(Error::Input(format!("duplicate parameter name `{name}`")));
        }
        self.entries.push(Param { name, tensor, trainable, stage });
        Ok(self.entries.len() - 1)
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|p| p.name == name)
    }

    #[inline]
    pub fn tensor(&self, i: usize) -> &Tensor<T> {
        &self.entries[i].tensor
    }

    #[inline]
    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.entries[i].tensor
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Param<T>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> core::slice::IterMut<'_, Param<T>> {
        self.entries.iter_mut()
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|p| p.trainable).map(|p| p.tensor.numel()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct BnSlot {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

/// BN → ReLU → convolution.
#[derive(Debug, Clone, Copy)]
struct ConvUnit {
    bn: BnSlot,
    weight: usize,
    pad: usize,
}

#[derive(Debug, Clone)]
struct DenseLayer {
    bottleneck: Option<ConvUnit>,
    conv: ConvUnit,
    in_channels: usize,
}

#[derive(Debug, Clone)]
struct DenseBlock {
    layers: Vec<DenseLayer>,
    in_channels: usize,
}

#[derive(Debug, Clone, Copy)]
struct Head {
    bn: BnSlot,
    weight: usize,
    bias: usize,
}

/// Where a dense-block layer draws input maps from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    BlockInput,
    /// Output of an earlier layer of the same block (0-based).
    Layer(usize),
}

/// Concatenation wiring of one dense block: `sources[n]` lists what layer
/// `n` (0-based) consumes, in concatenation order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockWiring {
    pub sources: Vec<Vec<Source>>,
}

impl BlockWiring {
    fn dense(layers: usize) -> Self {
        let sources = (0..layers)
            .map(|n| core::iter::once(Source::BlockInput).chain((0..n).map(Source::Layer)).collect())
            .collect();
        BlockWiring { sources }
    }

    pub fn edge_count(&self) -> usize {
        self.sources.iter().map(Vec::len).sum()
    }
}

struct UnitCache<T> {
    slot: BnSlot,
    bn: BnCache<T>,
    stats: BnStats<T>,
    /// Post-ReLU activation, the convolution input.
    act: Tensor<T>,
}

struct HeadCache<T> {
    bn: BnCache<T>,
    stats: BnStats<T>,
    act: Tensor<T>,
    pooled: Tensor<T>,
}

/// Intermediate values recorded by a train-mode forward pass.
pub struct Tape<T> {
    input: Tensor<T>,
    units: Vec<UnitCache<T>>,
    pool_inputs: Vec<Vec<usize>>,
    head: Option<HeadCache<T>>,
}

impl<T: Real> Tape<T> {
    /// Which ReLU outputs are active, in forward order. Two forward passes
    /// with equal patterns lie on the same smooth piece of the network.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let units = self.units.iter().map(|u| &u.act);
        units
            .chain(self.head.iter().map(|h| &h.act))
            .flat_map(|a| a.data().iter().map(|&v| v > T::zero()))
            .collect()
    }
}

/// Result of [`Model::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    /// Aligned with the model's [`ParamStore`]; `None` for running statistics.
    pub params: Vec<Option<Tensor<T>>>,
    /// Gradient with respect to the network input.
    pub input: Tensor<T>,
    /// `block_input_paths[b][n]`: L2 norm of the gradient reaching block
    /// `b`'s input maps through the input of layer `n`.
    pub block_input_paths: Vec<Vec<f64>>,
}

/// Per-stage and total trainable parameter counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub per_stage: Vec<usize>,
    pub total: usize,
}

#[derive(Debug, Clone)]
pub struct Model<T: Real = f32> {
    config: DenseNetConfig,
    plan: ArchitectureTable,
    params: ParamStore<T>,
    stem: usize,
    blocks: Vec<DenseBlock>,
    transitions: Vec<ConvUnit>,
    head: Head,
    wiring: Vec<BlockWiring>,
}

struct Builder<'a, T> {
    store: ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
}

impl<T: Real> Builder<'_, T> {
    fn kernel(&mut self, name: String, shape: &[usize], fan_in: usize, stage: usize) -> Result<usize> {
        let std = (2.0 / fan_in as f64).sqrt();
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(rng);
            T::lit(z * std)
        });
        self.store.push(name, t, true, stage)
    }

    fn bn(&mut self, prefix: &str, c: usize, stage: usize) -> Result<BnSlot> {
        Ok(BnSlot {
            gamma: self.store.push(format!("{prefix}.gamma"), Tensor::full(&[c], T::one()), true, stage)?,
            beta: self.store.push(format!("{prefix}.beta"), Tensor::zeros(&[c]), true, stage)?,
            mean: self.store.push(format!("{prefix}.running_mean"), Tensor::zeros(&[c]), false, stage)?,
            var: self.store.push(format!("{prefix}.running_var"), Tensor::full(&[c], T::one()), false, stage)?,
        })
    }

    fn unit(&mut self, prefix: &str, cin: usize, cout: usize, kernel: usize, stage: usize) -> Result<ConvUnit> {
        let bn = self.bn(&format!("{prefix}.bn"), cin, stage)?;
        let weight = self.kernel(format!("{prefix}.weight"), &[cout, cin, kernel, kernel], cin * kernel * kernel, stage)?;
        Ok(ConvUnit { bn, weight, pad: kernel / 2 })
    }
}

impl<T: Real> Model<T> {
    /// Builds a network with fan-in scaled normal kernels (`std = √(2/fan_in)`),
    /// `γ = 1`, `β = 0`, running mean 0 and running variance 1. The same
    /// seed and configuration always produce identical parameters.
    pub fn build(config: &DenseNetConfig, seed: u64) -> Result<Self> {
        let plan = plan_architecture(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder { store: ParamStore::default(), rng: &mut rng };
        let k = config.growth_rate;
        let units = plan.units_per_block;

        let stem = b.kernel(
            "stem.weight".into(),
            &[config.first_conv_channels, config.input_channels, 3, 3],
            config.input_channels * 9,
            0,
        )?;
        let mut channels = config.first_conv_channels;
        let mut blocks = Vec::with_capacity(config.blocks);
        let mut transitions = Vec::with_capacity(config.blocks.saturating_sub(1));
        let mut stage = 1;
        for bi in 1..=config.blocks {
            let k0 = channels;
            let mut layers = Vec::with_capacity(units);
            for n in 1..=units {
                let cin = crate::arch::block_input_channels(k0, k, n);
                let prefix = format!("block{bi}.layer{n}");
                let (bottleneck, conv_in) = if config.variant.has_bottleneck() {
                    let width = BOTTLENECK_WIDTH * k;
                    (Some(b.unit(&format!("{prefix}.bottleneck"), cin, width, 1, stage)?), width)
                } else {
                    (None, cin)
                };
                let conv = b.unit(&prefix, conv_in, k, 3, stage)?;
                layers.push(DenseLayer { bottleneck, conv, in_channels: cin });
            }
            blocks.push(DenseBlock { layers, in_channels: k0 });
            channels = k0 + units * k;
            stage += 1;
            if bi < config.blocks {
                let out = crate::arch::transition_output_channels(channels, config.compression)?;
                transitions.push(b.unit(&format!("transition{bi}"), channels, out, 1, stage)?);
                channels = out;
                stage += 1;
            }
        }
        let head = Head {
            bn: b.bn("head.bn", channels, stage)?,
            weight: b.kernel("head.fc.weight".into(), &[config.num_classes, channels], channels, stage)?,
            bias: b.store.push("head.fc.bias".into(), Tensor::zeros(&[config.num_classes]), true, stage)?,
        };
        let wiring = (0..config.blocks).map(|_| BlockWiring::dense(units)).collect();
        Ok(Model { config: config.clone(), plan, params: b.store, stem, blocks, transitions, head, wiring })
    }

    pub fn config(&self) -> &DenseNetConfig {
        &self.config
    }

    pub fn plan(&self) -> &ArchitectureTable {
        &self.plan
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn wiring(&self) -> &[BlockWiring] {
        &self.wiring
    }

    /// Input maps of every dense-block layer, read off the built kernels.
    pub fn layer_input_channels(&self) -> Vec<Vec<usize>> {
        self.blocks
            .iter()
            .map(|b| {
                b.layers
                    .iter()
                    .map(|l| {
                        let first = l.bottleneck.as_ref().unwrap_or(&l.conv);
                        let w = self.params.tensor(first.weight);
                        debug_assert_eq!(w.shape()[1], l.in_channels);
                        w.shape()[1]
                    })
                    .collect()
            })
            .collect()
    }

    /// Input maps of each block, as built.
    pub fn block_input_channels(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.in_channels).collect()
    }

    /// Trainable parameters per architecture stage, summed over the store.
    pub fn count_parameters(&self) -> ParamCount {
        let mut per_stage = vec![0; self.plan.stages.len()];
        for p in self.params.iter().filter(|p| p.trainable) {
            per_stage[p.stage] += p.tensor.numel();
        }
        let total = per_stage.iter().sum();
        ParamCount { per_stage, total }
    }

    /// FNV-1a over the bit patterns of every stored tensor, in store order.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in self.params.iter() {
            for v in p.tensor.data() {
                for byte in v.as_f64().to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Replaces every parameter by name. The set of names and each shape must
    /// match this model exactly, and running variances must be positive.
    pub fn load_params(&mut self, entries: Vec<(String, Tensor<T>)>) -> Result<()> {
        if entries.len() != self.params.len() {
            return Err(Error::Input(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                entries.len()
            )));
        }
        let mut staged: Vec<Option<Tensor<T>>> = vec![None; self.params.len()];
        for (name, t) in entries {
            let i = self
                .params
                .find(&name)
                .ok_or_else(|| Error::Input(format!("unknown parameter `{name}`")))?;
            if self.params.tensor(i).shape() != t.shape() {
                return Err(shape_err!(
                    "parameter `{name}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    self.params.tensor(i).shape()
                ));
            }
            if name.ends_with(".running_var") && t.data().iter().any(|v| v.partial_cmp(&T::zero()) != Some(core::cmp::Ordering::Greater)) {
                return Err(Error::Numeric(format!("`{name}` has a non-positive variance")));
            }
            t.check_finite(&name)?;
            staged[i] = Some(t);
        }
        for (i, t) in staged.into_iter().enumerate() {
            match t {
                Some(t) => *self.params.tensor_mut(i) = t,
                None => return Err(Error::Input(format!("missing parameter `{}`", self.params.iter().nth(i).unwrap().name))),
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        let cfg = &self.config;
        if (c, h, w) != (cfg.input_channels, cfg.input_height, cfg.input_width) {
            return Err(shape_err!(
                "input geometry {c}x{h}x{w} does not match model geometry {}x{}x{}",
                cfg.input_channels,
                cfg.input_height,
                cfg.input_width
            ));
        }
        Ok(())
    }

    fn eps(&self) -> T {
        T::lit(BN_EPS)
    }

    fn unit_forward(&self, u: &ConvUnit, x: &Tensor<T>, tape: Option<&mut Tape<T>>) -> Result<Tensor<T>> {
        let p = &self.params;
        let (gamma, beta) = (p.tensor(u.bn.gamma).data(), p.tensor(u.bn.beta).data());
        let w = p.tensor(u.weight);
        match tape {
            Some(tape) => {
                let (y, bn, stats) = batchnorm_train(x, gamma, beta, self.eps())?;
                let act = relu(&y);
                let out = conv2d(&act, w, 1, u.pad)?;
                tape.units.push(UnitCache { slot: u.bn, bn, stats, act });
                Ok(out)
            }
            None => {
                let (mean, var) = (p.tensor(u.bn.mean).data(), p.tensor(u.bn.var).data());
                let y = batchnorm_infer(x, gamma, beta, mean, var, self.eps())?;
                conv2d(&relu(&y), w, 1, u.pad)
            }
        }
    }

    fn run(&self, x: &Tensor<T>, mut tape: Option<&mut Tape<T>>, shapes: &mut Vec<Vec<usize>>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut cur = conv2d(x, self.params.tensor(self.stem), 1, 0)?;
        shapes.push(cur.shape().to_vec());
        for (bi, block) in self.blocks.iter().enumerate() {
            for layer in &block.layers {
                let h = match &layer.bottleneck {
                    Some(bu) => {
                        let mid = self.unit_forward(bu, &cur, tape.as_deref_mut())?;
                        self.unit_forward(&layer.conv, &mid, tape.as_deref_mut())?
                    }
                    None => self.unit_forward(&layer.conv, &cur, tape.as_deref_mut())?,
                };
                cur = concat_channels(&[&cur, &h])?;
            }
            shapes.push(cur.shape().to_vec());
            if let Some(t) = self.transitions.get(bi) {
                let z = self.unit_forward(t, &cur, tape.as_deref_mut())?;
                if let Some(tape) = tape.as_deref_mut() {
                    tape.pool_inputs.push(z.shape().to_vec());
                }
                cur = avgpool2d(&z)?;
                shapes.push(cur.shape().to_vec());
            }
        }

        let p = &self.params;
        let hd = &self.head;
        let (gamma, beta) = (p.tensor(hd.bn.gamma).data(), p.tensor(hd.bn.beta).data());
        let logits = match tape {
            Some(tape) => {
                let (y, bn, stats) = batchnorm_train(&cur, gamma, beta, self.eps())?;
                let act = relu(&y);
                let pooled = global_avgpool(&act)?;
                let logits = linear(&pooled, p.tensor(hd.weight), p.tensor(hd.bias))?;
                tape.head = Some(HeadCache { bn, stats, act, pooled });
                logits
            }
            None => {
                let (mean, var) = (p.tensor(hd.bn.mean).data(), p.tensor(hd.bn.var).data());
                let y = batchnorm_infer(&cur, gamma, beta, mean, var, self.eps())?;
                let pooled = global_avgpool(&relu(&y))?;
                linear(&pooled, p.tensor(hd.weight), p.tensor(hd.bias))?
            }
        };
        shapes.push(logits.shape().to_vec());
        logits.check_finite("logits")?;
        Ok(logits)
    }

    /// Infer-mode forward: running statistics, no side effects.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(x, None, &mut Vec::new())
    }

    /// Output shape after every stage of an infer-mode pass, in table order
    /// (the last entry is the logits shape).
    pub fn stage_output_shapes(&self, x: &Tensor<T>) -> Result<Vec<Vec<usize>>> {
        let mut shapes = Vec::new();
        self.run(x, None, &mut shapes)?;
        Ok(shapes)
    }

    /// Train-mode forward: batch statistics, running statistics updated.
    /// Returns the logits and the tape needed by [`Model::backward`].
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, Tape<T>)> {
        let mut tape = Tape { input: x.clone(), units: Vec::new(), pool_inputs: Vec::new(), head: None };
        let logits = self.run(x, Some(&mut tape), &mut Vec::new())?;
        let m = T::lit(BN_MOMENTUM);
        let mut apply = |slot: BnSlot, stats: &BnStats<T>| {
            let mut mean = core::mem::replace(self.params.tensor_mut(slot.mean), Tensor::zeros(&[1]));
            update_running_stats(mean.data_mut(), self.params.tensor_mut(slot.var).data_mut(), stats, m);
            *self.params.tensor_mut(slot.mean) = mean;
        };
        for u in &tape.units {
            apply(u.slot, &u.stats);
        }
        if let Some(h) = &tape.head {
            apply(self.head.bn, &h.stats);
        }
        Ok((logits, tape))
    }

    fn unit_backward(
        &self,
        u: &ConvUnit,
        cache: UnitCache<T>,
        dz: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<Tensor<T>> {
        debug_assert_eq!(cache.slot, u.bn);
        let w = self.params.tensor(u.weight);
        let (da, dw) = conv2d_backward(&cache.act, w, dz, 1, u.pad)?;
        let dy = relu_backward(&cache.act, &da)?;
        let gamma = self.params.tensor(u.bn.gamma).data();
        let (dx, dg, db) = batchnorm_backward(&dy, gamma, &cache.bn)?;
        grads[u.weight] = Some(dw);
        grads[u.bn.gamma] = Some(Tensor::new(&[dg.len()], dg)?);
        grads[u.bn.beta] = Some(Tensor::new(&[db.len()], db)?);
        Ok(dx)
    }

    /// Backpropagates `dlogits` through a tape produced by
    /// [`Model::forward_train`] on this model.
    pub fn backward(&self, tape: Tape<T>, dlogits: &Tensor<T>) -> Result<Gradients<T>> {
        let Tape { input, mut units, mut pool_inputs, head } = tape;
        let head_cache = head.ok_or_else(|| Error::Input("tape has no head record".into()))?;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.params.len()];
        let mut pop = || units.pop().ok_or_else(|| Error::Input("tape is shorter than the model".into()));

        let hd = &self.head;
        let (dpooled, dw, db) = linear_backward(&head_cache.pooled, self.params.tensor(hd.weight), dlogits)?;
        grads[hd.weight] = Some(dw);
        grads[hd.bias] = Some(db);
        let dact = global_avgpool_backward(head_cache.act.shape(), &dpooled)?;
        let dy = relu_backward(&head_cache.act, &dact)?;
        let (mut g, dg, dbeta) = batchnorm_backward(&dy, self.params.tensor(hd.bn.gamma).data(), &head_cache.bn)?;
        grads[hd.bn.gamma] = Some(Tensor::new(&[dg.len()], dg)?);
        grads[hd.bn.beta] = Some(Tensor::new(&[dbeta.len()], dbeta)?);

        let mut paths = vec![Vec::new(); self.blocks.len()];
        for bi in (0..self.blocks.len()).rev() {
            if let Some(t) = self.transitions.get(bi) {
                let shape = pool_inputs.pop().ok_or_else(|| Error::Input("tape lost a pooling record".into()))?;
                let dz = avgpool2d_backward(&shape, &g)?;
                g = self.unit_backward(t, pop()?, &dz, &mut grads)?;
            }
            let block = &self.blocks[bi];
            let k0 = block.in_channels;
            let mut norms = vec![0.0; block.layers.len()];
            for (n, layer) in block.layers.iter().enumerate().rev() {
                let prev = layer.in_channels;
                let k = g.shape()[1] - prev;
                let mut parts = split_channels(&g, &[prev, k])?;
                let dnew = parts.pop().unwrap();
                let mut dprev = parts.pop().unwrap();
                let dh = self.unit_backward(&layer.conv, pop()?, &dnew, &mut grads)?;
                let din = match &layer.bottleneck {
                    Some(bu) => self.unit_backward(bu, pop()?, &dh, &mut grads)?,
                    None => dh,
                };
                norms[n] = channel_slice_norm(&din, k0);
                dprev.add_assign(&din)?;
                g = dprev;
            }
            paths[bi] = norms;
        }

        let (dx, dw) = conv2d_backward(&input, self.params.tensor(self.stem), &g, 1, 0)?;
        grads[self.stem] = Some(dw);
        Ok(Gradients { params: grads, input: dx, block_input_paths: paths })
    }
}

/// L2 norm over the first `channels` maps of an NCHW tensor.
fn channel_slice_norm<T: Real>(t: &Tensor<T>, channels: usize) -> f64 {
    let [b, c, h, w] = *t.shape() else { return 0.0 };
    let plane = h * w;
    let mut s = 0.0;
    for n in 0..b {
        for v in &t.data()[n * c * plane..(n * c + channels) * plane] {
            s += v.as_f64() * v.as_f64();
        }
    }
    s.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::Variant;
    use crate::layers::{softmax, softmax_cross_entropy};

    fn small(variant: Variant) -> DenseNetConfig {
        DenseNetConfig {
            variant,
            depth: if variant == Variant::BC { 11 } else { 7 },
            blocks: 2,
            growth_rate: 3,
            compression: if variant == Variant::Plain { 1.0 } else { 0.5 },
            input_channels: 2,
            input_height: 7,
            input_width: 8,
            num_classes: 4,
            first_conv_channels: 4,
        }
    }

    fn batch<T: Real>(cfg: &DenseNetConfig, b: usize, seed: u64) -> Tensor<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[b, cfg.input_channels, cfg.input_height, cfg.input_width], |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::lit(z)
        })
    }

    #[test]
    fn same_seed_same_params() {
        let cfg = small(Variant::C);
        let a = Model::<f32>::build(&cfg, 7).unwrap();
        let b = Model::<f32>::build(&cfg, 7).unwrap();
        let c = Model::<f32>::build(&cfg, 8).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn realized_shapes_match_plan() {
        for v in [Variant::Plain, Variant::C, Variant::BC] {
            let cfg = small(v);
            let m = Model::<f64>::build(&cfg, 1).unwrap();
            let shapes = m.stage_output_shapes(&batch(&cfg, 3, 2)).unwrap();
            let plan = m.plan();
            for (s, shape) in plan.stages.iter().zip(&shapes) {
                let (h, w) = s.output_size;
                let expect = match s.kind {
                    crate::StageKind::Classifier => vec![3, s.output_channels],
                    _ => vec![3, s.output_channels, h, w],
                };
                assert_eq!(shape, &expect, "{v:?} {:?}", s.kind);
            }
        }
    }

    #[test]
    fn wiring_and_channel_bookkeeping() {
        let cfg = small(Variant::BC);
        let m = Model::<f32>::build(&cfg, 0).unwrap();
        let units = m.plan().units_per_block;
        for (b, (wiring, chans)) in m.wiring().iter().zip(m.layer_input_channels()).enumerate() {
            assert_eq!(wiring.edge_count(), crate::arch::block_connection_count(units));
            let k0 = m.block_input_channels()[b];
            for (n, c) in chans.iter().enumerate() {
                assert_eq!(*c, crate::arch::block_input_channels(k0, cfg.growth_rate, n + 1));
            }
        }
    }

    #[test]
    fn graph_count_equals_plan_count() {
        for v in [Variant::Plain, Variant::C, Variant::BC] {
            let m = Model::<f32>::build(&small(v), 0).unwrap();
            let count = m.count_parameters();
            assert_eq!(count.total, m.plan().total_params());
            let planned: Vec<usize> = m.plan().stages.iter().map(|s| s.params).collect();
            assert_eq!(count.per_stage, planned);
        }
    }

    #[test]
    fn identical_frames_identical_rows() {
        let cfg = small(Variant::C);
        let m = Model::<f32>::build(&cfg, 3).unwrap();
        let one = batch::<f32>(&cfg, 1, 5);
        let mut data = one.data().to_vec();
        data.extend_from_slice(one.data());
        let x = Tensor::new(&[2, 2, 7, 8], data).unwrap();
        let y = m.infer(&x).unwrap();
        assert_eq!(&y.data()[..4], &y.data()[4..]);
        let p = softmax(&y).unwrap();
        assert!((p.data()[..4].iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn infer_has_no_side_effects_but_train_does() {
        let cfg = small(Variant::C);
        let mut m = Model::<f32>::build(&cfg, 3).unwrap();
        let x = batch::<f32>(&cfg, 4, 9);
        let before = m.checksum();
        m.infer(&x).unwrap();
        assert_eq!(m.checksum(), before);
        m.forward_train(&x).unwrap();
        assert_ne!(m.checksum(), before);
    }

    #[test]
    fn geometry_mismatch() {
        let cfg = small(Variant::C);
        let m = Model::<f32>::build(&cfg, 3).unwrap();
        let err = m.infer(&Tensor::zeros(&[1, 2, 7, 9])).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn every_layer_path_reaches_block_input() {
        let cfg = small(Variant::BC);
        let mut m = Model::<f64>::build(&cfg, 4).unwrap();
        let x = batch::<f64>(&cfg, 4, 1);
        let (logits, tape) = m.forward_train(&x).unwrap();
        let (_, dlogits) = softmax_cross_entropy(&logits, &[0, 1, 2, 3]).unwrap();
        let g = m.backward(tape, &dlogits).unwrap();
        for block in &g.block_input_paths {
            assert_eq!(block.len(), m.plan().units_per_block);
            assert!(block.iter().all(|&n| n > 0.0), "{block:?}");
        }
        assert!(g.input.data().iter().any(|&v| v != 0.0));
        for (p, gp) in m.params().iter().zip(&g.params) {
            assert_eq!(p.trainable, gp.is_some(), "{}", p.name);
        }
    }

    #[test]
    fn load_params_round_trip_and_rejects_mismatch() {
        let cfg = small(Variant::C);
        let src = Model::<f32>::build(&cfg, 1).unwrap();
        let mut dst = Model::<f32>::build(&cfg, 2).unwrap();
        let entries: Vec<_> = src.params().iter().map(|p| (p.name.clone(), p.tensor.clone())).collect();
        dst.load_params(entries.clone()).unwrap();
        assert_eq!(dst.checksum(), src.checksum());

        let mut bad = entries.clone();
        bad.pop();
        assert!(dst.load_params(bad).is_err());
        let mut bad = entries;
        let i = bad.iter().position(|(n, _)| n.ends_with("running_var")).unwrap();
        bad[i].1 = Tensor::zeros(bad[i].1.shape());
        assert!(dst.load_params(bad).is_err());
    }
}
