use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{join, BatchNorm2d, Conv2d, MaxPool2, Module, Param, Relu, Slot, Upsample2};
use super::tensor::Tensor4;
use super::{CrNetConfig, InitScheme};
use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: &str = "CRN1";

/// 3×3 convolution, batch normalisation, ReLU. The convolution has no bias;
/// batch normalisation would cancel it.
#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
    relu: Relu,
}

impl ConvBnRelu {
    pub fn new(in_channels: usize, out_channels: usize, cfg: &CrNetConfig) -> Self {
        ConvBnRelu {
            conv: Conv2d::without_bias(in_channels, out_channels, 3),
            bn: BatchNorm2d::new(out_channels, cfg.bn_momentum, cfg.bn_eps),
            relu: Relu::default(),
        }
    }

    pub fn forward(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let y = self.conv.forward(x)?;
        let y = self.bn.forward(&y);
        Ok(self.relu.forward(&y))
    }

    pub fn infer(&self, x: &Tensor4) -> Result<Tensor4> {
        Ok(Relu::infer(&self.bn.infer(&self.conv.infer(x)?)))
    }

    pub fn backward(&mut self, grad: &Tensor4) -> Tensor4 {
        let g = self.relu.backward(grad);
        let g = self.bn.backward(&g);
        self.conv.backward(&g)
    }
}

impl Module for ConvBnRelu {
    fn slots<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, Slot<'a>)>) {
        self.conv.slots(&join(prefix, "conv"), out);
        self.bn.slots(&join(prefix, "bn"), out);
    }
}

#[derive(Debug, Clone)]
pub struct DoubleConv {
    pub first: ConvBnRelu,
    pub second: ConvBnRelu,
}

impl DoubleConv {
    pub fn new(in_channels: usize, out_channels: usize, cfg: &CrNetConfig) -> Self {
        DoubleConv {
            first: ConvBnRelu::new(in_channels, out_channels, cfg),
            second: ConvBnRelu::new(out_channels, out_channels, cfg),
        }
    }

    pub fn forward(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let y = self.first.forward(x)?;
        self.second.forward(&y)
    }

    pub fn infer(&self, x: &Tensor4) -> Result<Tensor4> {
        self.second.infer(&self.first.infer(x)?)
    }

    pub fn backward(&mut self, grad: &Tensor4) -> Tensor4 {
        let g = self.second.backward(grad);
        self.first.backward(&g)
    }
}

impl Module for DoubleConv {
    fn slots<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, Slot<'a>)>) {
        self.first.slots(&join(prefix, "0"), out);
        self.second.slots(&join(prefix, "1"), out);
    }
}

/// Residual dense block: densely connected 3×3 conv + ReLU layers of width
/// `g = ⌊c/3⌋`, a 1×1 fusion back to `c` channels, and a residual addition.
#[derive(Debug, Clone)]
pub struct Rdb {
    channels: usize,
    growth: usize,
    pub layers: Vec<Conv2d>,
    relus: Vec<Relu>,
    pub fusion: Conv2d,
}

impl Rdb {
    pub fn new(channels: usize, n_layers: usize) -> Self {
        let growth = CrNetConfig::growth_rate(channels);
        assert!(growth >= 1, "dense block needs at least 3 channels");
        let layers = (0..n_layers)
            .map(|l| Conv2d::new(channels + l * growth, growth, 3))
            .collect();
        Rdb {
            channels,
            growth,
            layers,
            relus: vec![Relu::default(); n_layers],
            fusion: Conv2d::new(channels + n_layers * growth, channels, 1),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn growth(&self) -> usize {
        self.growth
    }

    /// Width of the concatenation fed to the fusion layer.
    pub fn fusion_in_channels(&self) -> usize {
        self.fusion.in_channels()
    }

    fn check(&self, f0: &Tensor4) -> Result<()> {
        if f0.channels() != self.channels {
            return Err(Error::invalid(format!(
                "dense block expects {} channels, got {}",
                self.channels,
                f0.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&mut self, f0: &Tensor4) -> Result<Tensor4> {
        self.check(f0)?;
        let mut feats = vec![f0.clone()];
        for (conv, relu) in self.layers.iter_mut().zip(&mut self.relus) {
            let input = Tensor4::concat_channels(&feats.iter().collect::<Vec<_>>());
            let f = relu.forward(&conv.forward(&input)?);
            feats.push(f);
        }
        let all = Tensor4::concat_channels(&feats.iter().collect::<Vec<_>>());
        let mut out = self.fusion.forward(&all)?;
        out.add_assign(f0);
        Ok(out)
    }

    pub fn infer(&self, f0: &Tensor4) -> Result<Tensor4> {
        self.check(f0)?;
        let mut feats = vec![f0.clone()];
        for conv in &self.layers {
            let input = Tensor4::concat_channels(&feats.iter().collect::<Vec<_>>());
            feats.push(Relu::infer(&conv.infer(&input)?));
        }
        let all = Tensor4::concat_channels(&feats.iter().collect::<Vec<_>>());
        let mut out = self.fusion.infer(&all)?;
        out.add_assign(f0);
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor4) -> Tensor4 {
        let n = self.layers.len();
        let mut counts = vec![self.channels];
        counts.extend(std::iter::repeat_n(self.growth, n));
        let mut feat_grads = self.fusion.backward(grad).split_channels(&counts);
        feat_grads[0].add_assign(grad);
        for l in (0..n).rev() {
            let g = self.relus[l].backward(&feat_grads[l + 1]);
            let g_in = self.layers[l].backward(&g);
            for (acc, part) in feat_grads.iter_mut().zip(g_in.split_channels(&counts[..=l])) {
                acc.add_assign(&part);
            }
        }
        feat_grads.swap_remove(0)
    }
}

impl Module for Rdb {
    fn slots<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, Slot<'a>)>) {
        for (l, conv) in self.layers.iter_mut().enumerate() {
            conv.slots(&join(prefix, &format!("layer{l}")), out);
        }
        self.fusion.slots(&join(prefix, "fusion"), out);
    }
}

/// U-shaped clutter-removal network. Skip features pass through a dense
/// block before joining the decoder.
#[derive(Debug, Clone)]
pub struct CrNetModel {
    config: CrNetConfig,
    pub encoders: Vec<DoubleConv>,
    pools: Vec<MaxPool2>,
    pub bottleneck: DoubleConv,
    pub rdbs: Vec<Rdb>,
    ups: Vec<Upsample2>,
    pub decoders: Vec<DoubleConv>,
    pub head: DoubleConv,
    pub output: Conv2d,
}

impl CrNetModel {
    /// Builds and initialises a model from `config.seed`.
    pub fn new(config: CrNetConfig) -> Result<Self> {
        let mut model = Self::uninitialized(config)?;
        model.initialize();
        Ok(model)
    }

    fn uninitialized(config: CrNetConfig) -> Result<Self> {
        config.validate()?;
        let ladder = config.channel_ladder();
        let depth = config.depth;
        let encoders = (0..depth)
            .map(|i| DoubleConv::new(if i == 0 { 1 } else { ladder[i - 1] }, ladder[i], &config))
            .collect();
        let bottleneck = DoubleConv::new(ladder[depth - 1], ladder[depth], &config);
        let rdbs = (0..depth).map(|i| Rdb::new(ladder[i], config.rdb_layers)).collect();
        let decoders = (0..depth)
            .map(|i| DoubleConv::new(ladder[i] + ladder[i + 1], ladder[i], &config))
            .collect();
        let head = DoubleConv::new(ladder[0], ladder[0], &config);
        Ok(CrNetModel {
            encoders,
            pools: vec![MaxPool2::default(); depth],
            bottleneck,
            rdbs,
            ups: vec![Upsample2::default(); depth],
            decoders,
            head,
            output: Conv2d::new(ladder[0], 1, 1),
            config,
        })
    }

    fn initialize(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let init = self.config.init;
        self.for_each_conv(&mut |conv| {
            let std = init.std(conv.fan_in());
            conv.init_gaussian(&mut rng, std);
        });
    }

    pub fn config(&self) -> &CrNetConfig {
        &self.config
    }

    pub fn channel_ladder(&self) -> Vec<usize> {
        self.config.channel_ladder()
    }

    /// Every convolution, in forward order.
    pub fn for_each_conv(&mut self, f: &mut dyn FnMut(&mut Conv2d)) {
        fn dc(d: &mut DoubleConv, f: &mut dyn FnMut(&mut Conv2d)) {
            f(&mut d.first.conv);
            f(&mut d.second.conv);
        }
        for e in &mut self.encoders {
            dc(e, f);
        }
        dc(&mut self.bottleneck, f);
        for (r, d) in self.rdbs.iter_mut().zip(&mut self.decoders).rev() {
            for conv in &mut r.layers {
                f(conv);
            }
            f(&mut r.fusion);
            dc(d, f);
        }
        dc(&mut self.head, f);
        f(&mut self.output);
    }

    fn for_each_bn(&mut self, f: &mut dyn FnMut(&mut BatchNorm2d)) {
        let mut slots = Vec::new();
        // Borrow each block directly; slots() would also reach the buffers.
        for d in self
            .encoders
            .iter_mut()
            .chain(std::iter::once(&mut self.bottleneck))
            .chain(self.decoders.iter_mut())
            .chain(std::iter::once(&mut self.head))
        {
            slots.push(&mut d.first.bn);
            slots.push(&mut d.second.bn);
        }
        for bn in slots {
            f(bn);
        }
    }

    /// Whether every batch-norm layer has running statistics from training
    /// or a checkpoint.
    pub fn is_trained(&self) -> bool {
        self.encoders
            .iter()
            .chain(std::iter::once(&self.bottleneck))
            .chain(&self.decoders)
            .chain(std::iter::once(&self.head))
            .all(|d| d.first.bn.stats_ready && d.second.bn.stats_ready)
    }

    pub fn check_input(&self, x: &Tensor4) -> Result<()> {
        if x.channels() != 1 {
            return Err(Error::invalid(format!("network input must have 1 channel, got {}", x.channels())));
        }
        let m = self.config.spatial_multiple();
        if !x.height().is_multiple_of(m) || !x.width().is_multiple_of(m) {
            return Err(Error::invalid(format!(
                "input {}x{} is not divisible by {m}; resize or pad the scan first",
                x.height(),
                x.width()
            )));
        }
        Ok(())
    }

    /// Training-mode forward pass; caches activations for [`Self::backward`]
    /// and updates batch-norm running statistics.
    pub fn forward_train(&mut self, x: &Tensor4) -> Result<Tensor4> {
        self.check_input(x)?;
        let depth = self.config.depth;
        let mut skips = Vec::with_capacity(depth);
        let mut z = x.clone();
        for i in 0..depth {
            let s = self.encoders[i].forward(&z)?;
            z = self.pools[i].forward(&s)?;
            skips.push(s);
        }
        z = self.bottleneck.forward(&z)?;
        for i in (0..depth).rev() {
            let r = self.rdbs[i].forward(&skips[i])?;
            let u = self.ups[i].forward(&z);
            z = self.decoders[i].forward(&Tensor4::concat_channels(&[&r, &u]))?;
        }
        let h = self.head.forward(&z)?;
        self.output.forward(&h)
    }

    /// Back-propagates `grad` (shaped like the output), accumulating parameter
    /// gradients. Returns the gradient with respect to the input.
    pub fn backward(&mut self, grad: &Tensor4) -> Tensor4 {
        let depth = self.config.depth;
        let ladder = self.config.channel_ladder();
        let g = self.output.backward(grad);
        let mut g = self.head.backward(&g);
        let mut skip_grads = vec![None; depth];
        for i in 0..depth {
            let parts = self.decoders[i].backward(&g).split_channels(&[ladder[i], ladder[i + 1]]);
            skip_grads[i] = Some(self.rdbs[i].backward(&parts[0]));
            g = self.ups[i].backward(&parts[1]);
        }
        g = self.bottleneck.backward(&g);
        for i in (0..depth).rev() {
            g = self.pools[i].backward(&g);
            g.add_assign(skip_grads[i].as_ref().expect("skip gradient"));
            g = self.encoders[i].backward(&g);
        }
        g
    }

    /// Evaluation-mode forward pass using running statistics. Pure.
    pub fn infer(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check_input(x)?;
        let depth = self.config.depth;
        let mut skips = Vec::with_capacity(depth);
        let mut z = x.clone();
        for i in 0..depth {
            let s = self.encoders[i].infer(&z)?;
            z = MaxPool2::infer(&s)?;
            skips.push(s);
        }
        z = self.bottleneck.infer(&z)?;
        for i in (0..depth).rev() {
            let r = self.rdbs[i].infer(&skips[i])?;
            let u = Upsample2::infer(&z);
            z = self.decoders[i].infer(&Tensor4::concat_channels(&[&r, &u]))?;
        }
        let h = self.head.infer(&z)?;
        self.output.infer(&h)
    }

    /// Trainable parameters, in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.named_slots()
            .into_iter()
            .filter_map(|(_, s)| match s {
                Slot::Param(p) => Some(p),
                Slot::Buffer(_) => None,
            })
            .collect()
    }

    pub fn param_names(&mut self) -> Vec<String> {
        self.named_slots()
            .into_iter()
            .filter(|(_, s)| matches!(s, Slot::Param(_)))
            .map(|(n, _)| n)
            .collect()
    }

    pub fn parameter_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn named_slots(&mut self) -> Vec<(String, Slot<'_>)> {
        let mut out = Vec::new();
        self.slots("", &mut out);
        out
    }

    /// Checkpoint: a `CRN1` line, `key=value` configuration lines,
    /// `groups=K`, then per group a `name count` line followed by `count`
    /// little-endian binary32 values.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let c = &self.config;
        let mut header = format!("{CHECKPOINT_MAGIC}\n");
        header += &format!("base_width={}\n", c.base_width);
        header += &format!("depth={}\n", c.depth);
        header += &format!("rdb_layers={}\n", c.rdb_layers);
        header += &format!("bn_momentum={:?}\n", c.bn_momentum);
        header += &format!("bn_eps={:?}\n", c.bn_eps);
        header += &format!("init={}\n", c.init);
        header += &format!("seed={}\n", c.seed);
        header += &format!("trained={}\n", u8::from(self.is_trained()));
        let mut copy = self.clone();
        let slots = copy.named_slots();
        header += &format!("groups={}\n", slots.len());
        out.write_all(header.as_bytes())?;
        for (name, slot) in slots {
            let values: &[f64] = match &slot {
                Slot::Param(p) => &p.value,
                Slot::Buffer(b) => b,
            };
            out.write_all(format!("{name} {}\n", values.len()).as_bytes())?;
            let mut bytes = Vec::with_capacity(values.len() * 4);
            for &v in values {
                let single = v as f32;
                if !single.is_finite() {
                    return Err(Error::invalid(format!("parameter {name} holds {v}, not representable")));
                }
                bytes.extend_from_slice(&single.to_le_bytes());
            }
            out.write_all(&bytes)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let line = |pos: &mut usize| -> Result<(usize, String)> {
            let start = *pos;
            let end = bytes[start..]
                .iter()
                .position(|&b| b == b'\n')
                .map(|k| start + k)
                .ok_or_else(|| Error::format(start as u64, "unterminated header line"))?;
            let text = std::str::from_utf8(&bytes[start..end])
                .map_err(|_| Error::format(start as u64, "header line is not UTF-8"))?;
            *pos = end + 1;
            Ok((start, text.to_string()))
        };
        let (_, magic) = line(&mut pos)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::format(0, format!("bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}")));
        }
        let mut config = CrNetConfig::default();
        let mut trained = false;
        let groups: usize = loop {
            let (at, text) = line(&mut pos)?;
            let (key, value) = text
                .split_once('=')
                .ok_or_else(|| Error::format(at as u64, format!("expected key=value, got {text:?}")))?;
            let bad = || Error::format(at as u64, format!("cannot parse {key} from {value:?}"));
            match key {
                "base_width" => config.base_width = value.parse().map_err(|_| bad())?,
                "depth" => config.depth = value.parse().map_err(|_| bad())?,
                "rdb_layers" => config.rdb_layers = value.parse().map_err(|_| bad())?,
                "bn_momentum" => config.bn_momentum = value.parse().map_err(|_| bad())?,
                "bn_eps" => config.bn_eps = value.parse().map_err(|_| bad())?,
                "init" => config.init = value.parse::<InitScheme>().map_err(|_| bad())?,
                "seed" => config.seed = value.parse().map_err(|_| bad())?,
                "trained" => trained = value == "1",
                "groups" => break value.parse().map_err(|_| bad())?,
                _ => return Err(Error::format(at as u64, format!("unknown key {key:?}"))),
            }
        };
        let mut model =
            Self::uninitialized(config).map_err(|e| Error::format(0, format!("bad configuration: {e}")))?;
        {
            let slots = model.named_slots();
            if slots.len() != groups {
                return Err(Error::format(
                    pos as u64,
                    format!("checkpoint has {groups} groups, configuration expects {}", slots.len()),
                ));
            }
            for (name, slot) in slots {
                let (at, text) = line(&mut pos)?;
                let (got, count) = text
                    .rsplit_once(' ')
                    .ok_or_else(|| Error::format(at as u64, format!("bad group line {text:?}")))?;
                if got != name {
                    return Err(Error::format(at as u64, format!("expected group {name:?}, found {got:?}")));
                }
                let count: usize = count
                    .parse()
                    .map_err(|_| Error::format(at as u64, format!("bad count in {text:?}")))?;
                let target: &mut Vec<f64> = match slot {
                    Slot::Param(p) => &mut p.value,
                    Slot::Buffer(b) => b,
                };
                if count != target.len() {
                    return Err(Error::format(
                        at as u64,
                        format!("group {name} has {count} values, expected {}", target.len()),
                    ));
                }
                let end = pos + 4 * count;
                if end > bytes.len() {
                    return Err(Error::format(bytes.len() as u64, format!("truncated group {name}")));
                }
                for (k, chunk) in bytes[pos..end].chunks_exact(4).enumerate() {
                    let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
                    if !v.is_finite() {
                        return Err(Error::format((pos + 4 * k) as u64, format!("non-finite value in {name}")));
                    }
                    target[k] = v as f64;
                }
                pos = end;
            }
        }
        if pos != bytes.len() {
            return Err(Error::format(pos as u64, format!("{} trailing bytes", bytes.len() - pos)));
        }
        model.for_each_bn(&mut |bn| bn.stats_ready = trained);
        Ok(model)
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

impl Module for CrNetModel {
    fn slots<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, Slot<'a>)>) {
        for (i, e) in self.encoders.iter_mut().enumerate() {
            e.slots(&join(prefix, &format!("enc{i}")), out);
        }
        self.bottleneck.slots(&join(prefix, "bottleneck"), out);
        for (i, r) in self.rdbs.iter_mut().enumerate() {
            r.slots(&join(prefix, &format!("rdb{i}")), out);
        }
        for (i, d) in self.decoders.iter_mut().enumerate() {
            d.slots(&join(prefix, &format!("dec{i}")), out);
        }
        self.head.slots(&join(prefix, "head"), out);
        self.output.slots(&join(prefix, "out"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_tensor(seed: u64, shape: [usize; 4]) -> Tensor4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_fn(shape, |_| rng.sample(StandardNormal))
    }

    #[test]
    fn zero_dense_block_is_identity() {
        let rdb = Rdb::new(6, 3);
        let f0 = random_tensor(1, [2, 6, 4, 5]);
        assert_eq!(rdb.infer(&f0).unwrap(), f0);
        let mut rdb = rdb;
        assert_eq!(rdb.forward(&f0).unwrap(), f0);
        assert!(rdb.infer(&random_tensor(1, [1, 5, 4, 4])).is_err());
    }

    #[test]
    fn dense_block_widths() {
        let rdb = Rdb::new(64, 3);
        assert_eq!(rdb.growth(), 21);
        assert_eq!(rdb.fusion_in_channels(), 64 + 3 * 21);
        assert_eq!(Rdb::new(8, 3).fusion_in_channels(), 14);
    }

    #[test]
    fn dense_block_input_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rdb = Rdb::new(6, 3);
        for conv in rdb.layers.iter_mut().chain(std::iter::once(&mut rdb.fusion)) {
            let std = 1.0 / (conv.fan_in() as f64).sqrt();
            conv.init_gaussian(&mut rng, std);
            for b in &mut conv.bias.value {
                *b = 0.1 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let f0 = random_tensor(10, [1, 6, 4, 4]);
        let proj = random_tensor(11, [1, 6, 4, 4]);
        let objective = |t: &Tensor4| -> f64 {
            rdb.infer(t).unwrap().data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
        };
        let mut trained = rdb.clone();
        trained.forward(&f0).unwrap();
        let analytic = trained.backward(&proj);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for k in 0..f0.data().len() {
            let mut plus = f0.clone();
            plus.data_mut()[k] += h;
            let mut minus = f0.clone();
            minus.data_mut()[k] -= h;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let a = analytic.data()[k];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
        assert!(worst <= 1e-5, "{worst}");
    }

    #[test]
    fn output_shape_matches_input() {
        let model = CrNetModel::new(CrNetConfig::with_base_width(3)).unwrap();
        let x = random_tensor(2, [1, 1, 256, 64]);
        assert_eq!(model.infer(&x).unwrap().shape(), [1, 1, 256, 64]);
        let mut model = CrNetModel::new(CrNetConfig::with_base_width(4)).unwrap();
        let x = random_tensor(3, [2, 1, 32, 16]);
        assert_eq!(model.forward_train(&x).unwrap().shape(), [2, 1, 32, 16]);
        let g = model.backward(&random_tensor(4, [2, 1, 32, 16]));
        assert_eq!(g.shape(), [2, 1, 32, 16]);
    }

    #[test]
    fn rejects_indivisible_input() {
        let model = CrNetModel::new(CrNetConfig::with_base_width(3)).unwrap();
        let err = model.infer(&Tensor4::zeros([1, 1, 20, 16])).unwrap_err();
        assert!(err.to_string().contains("resize"));
        assert!(model.infer(&Tensor4::zeros([1, 2, 16, 16])).is_err());
    }

    #[test]
    fn ladder_follows_config() {
        let model = CrNetModel::new(CrNetConfig::with_base_width(8)).unwrap();
        assert_eq!(model.channel_ladder(), vec![8, 16, 32, 64, 128]);
        assert_eq!(model.encoders[3].second.conv.out_channels(), 64);
        assert_eq!(model.bottleneck.second.conv.out_channels(), 128);
        assert_eq!(model.decoders[3].first.conv.in_channels(), 64 + 128);
    }

    #[test]
    fn eval_is_deterministic() {
        let mut model = CrNetModel::new(CrNetConfig::with_base_width(4)).unwrap();
        let x = random_tensor(5, [2, 1, 16, 32]);
        model.forward_train(&x).unwrap();
        let a = model.infer(&x).unwrap();
        let b = model.infer(&x).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn same_seed_same_weights() {
        let mut a = CrNetModel::new(CrNetConfig::with_base_width(3)).unwrap();
        let mut b = CrNetModel::new(CrNetConfig::with_base_width(3)).unwrap();
        let pa: Vec<Vec<f64>> = a.params_mut().iter().map(|p| p.value.clone()).collect();
        let pb: Vec<Vec<f64>> = b.params_mut().iter().map(|p| p.value.clone()).collect();
        assert_eq!(pa, pb);
        let names = a.param_names();
        let unique: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut model = CrNetModel::new(CrNetConfig::with_base_width(3)).unwrap();
        let x = random_tensor(6, [2, 1, 16, 16]);
        model.forward_train(&x).unwrap();
        let mut bytes = Vec::new();
        model.write_to(&mut bytes).unwrap();
        assert!(bytes.starts_with(b"CRN1\n"));
        let loaded = CrNetModel::from_bytes(&bytes).unwrap();
        assert!(loaded.is_trained());
        let mut again = Vec::new();
        loaded.write_to(&mut again).unwrap();
        assert_eq!(bytes, again);
        let a = model.infer(&x).unwrap();
        let b = loaded.infer(&x).unwrap();
        let diff = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-4, "{diff}");

        assert!(CrNetModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(CrNetModel::from_bytes(&extra).is_err());
        assert!(CrNetModel::from_bytes(b"CRN2\n").is_err());
    }
}
