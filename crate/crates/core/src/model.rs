//! Shared encoder with a supervised head and a single-layer self-supervised head.
//!
//! Encoder: `stages` blocks of 3x3 stride-2 convolution + ReLU, so the deepest
//! feature map is `input / 2^stages` per side. The segmentation head is a
//! skip-connected decoder (nearest upsample, concat, 3x3 conv + ReLU per level,
//! then a 1x1 classifier at input resolution over the upsampled features and the
//! raw input). The classification head and the self-supervised head both
//! global-average-pool an encoder stage and apply one fully connected layer.
//! With `coord_channels`, normalized x/y planes are appended to the input of
//! the first encoder stage.
//!
//! Parameter groups: the encoder is `theta_a`, the supervised head `theta_b`,
//! the self-supervised head `theta_c`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{self, Conv2d, ConvCache, Linear, Param, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SupervisedTask {
    /// Per-pixel logits over `classes` (background included).
    Segmentation { classes: usize },
    /// Per-image logits over `classes`.
    Classification { classes: usize },
}

impl SupervisedTask {
    pub fn classes(self) -> usize {
        match self {
            SupervisedTask::Segmentation { classes } | SupervisedTask::Classification { classes } => classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub encoder_widths: Vec<usize>,
    /// One width per decoder level, deepest first; length `encoder_widths.len() - 1`.
    pub decoder_widths: Vec<usize>,
    pub supervised: SupervisedTask,
    /// Number of pretext classes (P for jigsaw, K for rotation).
    pub selfsup_classes: usize,
    /// 1-based encoder stage whose output feeds the self-supervised head.
    pub branch_at: usize,
    /// Appends normalized x/y coordinate planes to the first encoder stage's input.
    pub coord_channels: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            encoder_widths: vec![16, 32, 64, 128],
            decoder_widths: vec![32, 16, 16],
            supervised: SupervisedTask::Segmentation { classes: 4 },
            selfsup_classes: 4,
            branch_at: 4,
            coord_channels: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let stages = self.encoder_widths.len();
        if stages == 0 {
            return Err(Error::invalid("encoder needs at least one stage"));
        }
        if self.decoder_widths.len() + 1 != stages {
            return Err(Error::invalid(format!(
                "decoder_widths needs {} entries for {stages} encoder stages",
                stages - 1
            )));
        }
        if self.branch_at == 0 || self.branch_at > stages {
            return Err(Error::invalid(format!("branch_at must be in 1..={stages}")));
        }
        if self.selfsup_classes < 2 || self.supervised.classes() < 2 {
            return Err(Error::invalid("heads need at least two classes"));
        }
        Ok(())
    }

    pub fn downsample_factor(&self) -> usize {
        1 << self.encoder_widths.len()
    }
}

/// Which parameter group a tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    SharedEncoder,
    SupervisedHead,
    SelfSupHead,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [
        ParamGroup::SharedEncoder,
        ParamGroup::SupervisedHead,
        ParamGroup::SelfSupHead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::SharedEncoder => "theta_a",
            ParamGroup::SupervisedHead => "theta_b",
            ParamGroup::SelfSupHead => "theta_c",
        }
    }
}

/// Snapshot of all trainable tensors split into the three groups.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub theta_a: Vec<Param>,
    pub theta_b: Vec<Param>,
    pub theta_c: Vec<Param>,
}

impl ModelParams {
    pub fn group(&self, group: ParamGroup) -> &[Param] {
        match group {
            ParamGroup::SharedEncoder => &self.theta_a,
            ParamGroup::SupervisedHead => &self.theta_b,
            ParamGroup::SelfSupHead => &self.theta_c,
        }
    }

    pub fn count(&self, group: ParamGroup) -> usize {
        self.group(group).iter().map(Param::len).sum()
    }

    /// Order-sensitive FNV-1a digest over the raw bits of every value in a group.
    pub fn checksum(&self, group: ParamGroup) -> u64 {
        group_checksum(self.group(group).iter())
    }
}

pub(crate) fn group_checksum<'a>(params: impl Iterator<Item = &'a Param>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in params {
        for b in p.name.bytes() {
            h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
        }
        for v in &p.value {
            for b in v.to_bits().to_le_bytes() {
                h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    h
}

/// Per-group gradients, each aligned with the group's parameter order.
/// A `None` group was not touched by the backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub theta_a: Option<Vec<Vec<f32>>>,
    pub theta_b: Option<Vec<Vec<f32>>>,
    pub theta_c: Option<Vec<Vec<f32>>>,
}

impl Gradients {
    pub fn group(&self, group: ParamGroup) -> Option<&Vec<Vec<f32>>> {
        match group {
            ParamGroup::SharedEncoder => self.theta_a.as_ref(),
            ParamGroup::SupervisedHead => self.theta_b.as_ref(),
            ParamGroup::SelfSupHead => self.theta_c.as_ref(),
        }
    }

    pub fn is_finite(&self) -> bool {
        ParamGroup::ALL
            .iter()
            .filter_map(|g| self.group(*g))
            .all(|gs| gs.iter().all(|v| v.iter().all(|x| x.is_finite())))
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Encoder {
    stages: Vec<Conv2d>,
    coords: bool,
}

/// Two planes holding x and y in [-1, 1].
fn coordinate_planes(n: usize, h: usize, w: usize) -> Tensor {
    let mut t = Tensor::zeros(n, 2, h, w);
    let scale = |i: usize, len: usize| {
        if len > 1 {
            2.0 * i as f32 / (len - 1) as f32 - 1.0
        } else {
            0.0
        }
    };
    for s in 0..n {
        for y in 0..h {
            for x in 0..w {
                let base = s * 2 * h * w + y * w + x;
                t.data[base] = scale(x, w);
                t.data[base + h * w] = scale(y, h);
            }
        }
    }
    t
}

struct EncoderPass {
    outputs: Vec<Tensor>,
    caches: Vec<ConvCache>,
}

/// Encoder feature maps: skip features per stage and the deepest map.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub skips: Vec<Tensor>,
    pub features: Tensor,
}

impl Encoder {
    fn forward(&self, x: &Tensor, depth: usize) -> EncoderPass {
        let mut outputs: Vec<Tensor> = Vec::with_capacity(depth);
        let mut caches = Vec::with_capacity(depth);
        let augmented = self
            .coords
            .then(|| nn::concat_channels(x, &coordinate_planes(x.n, x.h, x.w)));
        let x = augmented.as_ref().unwrap_or(x);
        for conv in &self.stages[..depth] {
            let input = outputs.last().unwrap_or(x);
            let (mut y, cache) = conv.forward(input);
            nn::relu_inplace(&mut y);
            outputs.push(y);
            caches.push(cache);
        }
        EncoderPass { outputs, caches }
    }

    /// `grads[s]` is the incoming gradient for stage `s`'s output.
    fn backward(&self, pass: &EncoderPass, mut grads: Vec<Option<Tensor>>) -> Vec<Vec<f32>> {
        let depth = pass.outputs.len();
        let mut param_grads = vec![Vec::new(); self.stages.len() * 2];
        for (i, conv) in self.stages.iter().enumerate().skip(depth) {
            param_grads[2 * i] = vec![0.0; conv.weight.len()];
            param_grads[2 * i + 1] = vec![0.0; conv.bias.len()];
        }
        for s in (0..depth).rev() {
            let Some(mut g) = grads[s].take() else {
                let conv = &self.stages[s];
                param_grads[2 * s] = vec![0.0; conv.weight.len()];
                param_grads[2 * s + 1] = vec![0.0; conv.bias.len()];
                continue;
            };
            nn::relu_backward(&pass.outputs[s], &mut g);
            let (dx, pg) = self.stages[s].backward(&pass.caches[s], &g, s > 0);
            param_grads[2 * s] = pg.weight;
            param_grads[2 * s + 1] = pg.bias;
            if let Some(dx) = dx {
                accumulate(&mut grads[s - 1], dx);
            }
        }
        param_grads
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => nn::add_assign(&mut t.data, &g.data),
        None => *slot = Some(g),
    }
}

#[derive(Clone, Debug, PartialEq)]
struct SegDecoder {
    /// Deepest level first.
    blocks: Vec<Conv2d>,
    classifier: Conv2d,
}

struct DecoderPass {
    /// Channel count of the upsampled half of each concat, per block, then final.
    up_channels: Vec<usize>,
    block_caches: Vec<ConvCache>,
    block_outputs: Vec<Tensor>,
    classifier_cache: ConvCache,
}

#[derive(Clone, Debug, PartialEq)]
enum SupervisedHead {
    Segmentation(SegDecoder),
    Classification(Linear),
}

/// Segmentation/classification network with an attached pretext classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    encoder: Encoder,
    supervised: SupervisedHead,
    selfsup: Linear,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut stages = Vec::new();
        let mut in_ch = config.in_channels + if config.coord_channels { 2 } else { 0 };
        for (i, &w) in config.encoder_widths.iter().enumerate() {
            stages.push(Conv2d::new(
                &format!("encoder.stage{}", i + 1),
                in_ch,
                w,
                3,
                2,
                &mut rng,
            ));
            in_ch = w;
        }
        let deepest = in_ch;
        let supervised = match config.supervised {
            SupervisedTask::Segmentation { classes } => {
                let mut blocks = Vec::new();
                let mut cur = deepest;
                let skip_widths = &config.encoder_widths[..config.encoder_widths.len() - 1];
                for (j, (&skip, &out)) in skip_widths.iter().rev().zip(&config.decoder_widths).enumerate() {
                    blocks.push(Conv2d::new(
                        &format!("decoder.block{}", j + 1),
                        cur + skip,
                        out,
                        3,
                        1,
                        &mut rng,
                    ));
                    cur = out;
                }
                let classifier = Conv2d::new("decoder.classifier", cur + config.in_channels, classes, 1, 1, &mut rng);
                SupervisedHead::Segmentation(SegDecoder { blocks, classifier })
            }
            SupervisedTask::Classification { classes } => {
                SupervisedHead::Classification(Linear::new("classifier.fc", deepest, classes, &mut rng))
            }
        };
        let branch_width = config.encoder_widths[config.branch_at - 1];
        let selfsup = Linear::new("selfsup.fc", branch_width, config.selfsup_classes, &mut rng);
        Ok(Self {
            encoder: Encoder {
                stages,
                coords: config.coord_channels,
            },
            config,
            supervised,
            selfsup,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let f = self.config.downsample_factor();
        if x.n == 0 {
            return Err(Error::invalid("empty batch"));
        }
        if x.c != self.config.in_channels {
            return Err(Error::invalid(format!(
                "expected {} input channels, got {}",
                self.config.in_channels, x.c
            )));
        }
        if !x.h.is_multiple_of(f) || !x.w.is_multiple_of(f) || x.h == 0 || x.w == 0 {
            return Err(Error::invalid(format!(
                "input {}x{} not divisible by encoder factor {f}",
                x.h, x.w
            )));
        }
        Ok(())
    }

    pub fn encode(&self, x: &Tensor) -> Result<EncoderOutput> {
        self.check_input(x)?;
        let mut pass = self.encoder.forward(x, self.encoder.stages.len());
        let features = pass.outputs.pop().expect("at least one stage");
        Ok(EncoderOutput {
            skips: pass.outputs,
            features,
        })
    }

    /// Supervised logits: `(n, classes, h, w)` for segmentation, `(n, classes, 1, 1)`
    /// for classification. Reads only `theta_a` and `theta_b`.
    pub fn forward_supervised(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let enc = self.encoder.forward(x, self.encoder.stages.len());
        Ok(match &self.supervised {
            SupervisedHead::Segmentation(dec) => Self::decode(dec, x, &enc.outputs).0,
            SupervisedHead::Classification(fc) => fc.forward(&nn::global_avg_pool(enc.outputs.last().unwrap())),
        })
    }

    /// Pretext logits `(n, selfsup_classes, 1, 1)`. Reads only `theta_a` and `theta_c`.
    pub fn forward_selfsup(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let enc = self.encoder.forward(x, self.config.branch_at);
        Ok(self.selfsup.forward(&nn::global_avg_pool(enc.outputs.last().unwrap())))
    }

    fn decode(dec: &SegDecoder, x: &Tensor, stages: &[Tensor]) -> (Tensor, DecoderPass) {
        let mut cur = stages.last().unwrap().clone();
        let mut up_channels = Vec::new();
        let mut block_caches = Vec::new();
        let mut block_outputs = Vec::new();
        let skips = &stages[..stages.len() - 1];
        for (conv, skip) in dec.blocks.iter().zip(skips.iter().rev()) {
            up_channels.push(cur.c);
            let cat = nn::concat_channels(&nn::upsample2x(&cur), skip);
            let (mut y, cache) = conv.forward(&cat);
            nn::relu_inplace(&mut y);
            block_caches.push(cache);
            block_outputs.push(y.clone());
            cur = y;
        }
        up_channels.push(cur.c);
        let cat = nn::concat_channels(&nn::upsample2x(&cur), x);
        let (logits, classifier_cache) = dec.classifier.forward(&cat);
        (
            logits,
            DecoderPass {
                up_channels,
                block_caches,
                block_outputs,
                classifier_cache,
            },
        )
    }

    /// Cross-entropy on the supervised head and gradients for `theta_a`, `theta_b`.
    /// `targets` holds one class per pixel (segmentation) or per image.
    pub fn supervised_loss_and_grads(&self, x: &Tensor, targets: &[usize]) -> Result<(f32, Gradients)> {
        self.check_input(x)?;
        let depth = self.encoder.stages.len();
        let enc = self.encoder.forward(x, depth);
        let mut stage_grads: Vec<Option<Tensor>> = vec![None; depth];
        let (loss, head_grads) = match &self.supervised {
            SupervisedHead::Segmentation(dec) => {
                if targets.len() != x.n * x.h * x.w {
                    return Err(Error::invalid("segmentation targets must cover every pixel"));
                }
                let (logits, pass) = Self::decode(dec, x, &enc.outputs);
                let (loss, dlogits) = nn::softmax_cross_entropy(&logits, targets);
                let mut grads = vec![Vec::new(); dec.blocks.len() * 2 + 2];
                let (dx, cgrad) = dec.classifier.backward(&pass.classifier_cache, &dlogits, true);
                grads[dec.blocks.len() * 2] = cgrad.weight;
                grads[dec.blocks.len() * 2 + 1] = cgrad.bias;
                let (dup, _) = nn::split_channels(&dx.unwrap(), *pass.up_channels.last().unwrap());
                let mut dcur = nn::upsample2x_backward(&dup);
                for j in (0..dec.blocks.len()).rev() {
                    nn::relu_backward(&pass.block_outputs[j], &mut dcur);
                    let (dcat, g) = dec.blocks[j].backward(&pass.block_caches[j], &dcur, true);
                    grads[2 * j] = g.weight;
                    grads[2 * j + 1] = g.bias;
                    let (dup, dskip) = nn::split_channels(&dcat.unwrap(), pass.up_channels[j]);
                    // block j consumes skip from encoder stage depth-2-j
                    accumulate(&mut stage_grads[depth - 2 - j], dskip);
                    dcur = nn::upsample2x_backward(&dup);
                }
                accumulate(&mut stage_grads[depth - 1], dcur);
                (loss, grads)
            }
            SupervisedHead::Classification(fc) => {
                if targets.len() != x.n {
                    return Err(Error::invalid("classification needs one target per image"));
                }
                let deep = enc.outputs.last().unwrap();
                let pooled = nn::global_avg_pool(deep);
                let logits = fc.forward(&pooled);
                let (loss, dlogits) = nn::softmax_cross_entropy(&logits, targets);
                let (dpooled, g) = fc.backward(&pooled, &dlogits, true);
                accumulate(
                    &mut stage_grads[depth - 1],
                    nn::global_avg_pool_backward(&dpooled.unwrap(), deep.h, deep.w),
                );
                (loss, vec![g.weight, g.bias])
            }
        };
        let encoder_grads = self.encoder.backward(&enc, stage_grads);
        Ok((
            loss,
            Gradients {
                theta_a: Some(encoder_grads),
                theta_b: Some(head_grads),
                theta_c: None,
            },
        ))
    }

    /// `omega`-weighted cross-entropy on the pretext head and gradients for
    /// `theta_a`, `theta_c`. Returns `(weighted loss, unweighted loss, grads)`.
    pub fn selfsup_loss_and_grads(&self, x: &Tensor, labels: &[usize], omega: f32) -> Result<(f32, f32, Gradients)> {
        self.check_input(x)?;
        if labels.len() != x.n {
            return Err(Error::invalid("pretext batch needs one label per image"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.config.selfsup_classes) {
            return Err(Error::invalid(format!(
                "pretext label {bad} out of range for {} classes",
                self.config.selfsup_classes
            )));
        }
        let depth = self.config.branch_at;
        let enc = self.encoder.forward(x, depth);
        let branch = enc.outputs.last().unwrap();
        let pooled = nn::global_avg_pool(branch);
        let logits = self.selfsup.forward(&pooled);
        let (raw_loss, mut dlogits) = nn::softmax_cross_entropy(&logits, labels);
        for g in &mut dlogits.data {
            *g *= omega;
        }
        let (dpooled, g) = self.selfsup.backward(&pooled, &dlogits, true);
        let mut stage_grads: Vec<Option<Tensor>> = vec![None; depth];
        stage_grads[depth - 1] = Some(nn::global_avg_pool_backward(&dpooled.unwrap(), branch.h, branch.w));
        let encoder_grads = self.encoder.backward(&enc, stage_grads);
        Ok((
            omega * raw_loss,
            raw_loss,
            Gradients {
                theta_a: Some(encoder_grads),
                theta_b: None,
                theta_c: Some(vec![g.weight, g.bias]),
            },
        ))
    }

    pub fn group_params(&self, group: ParamGroup) -> Vec<&Param> {
        match group {
            ParamGroup::SharedEncoder => self.encoder.stages.iter().flat_map(|c| [&c.weight, &c.bias]).collect(),
            ParamGroup::SupervisedHead => match &self.supervised {
                SupervisedHead::Segmentation(dec) => dec
                    .blocks
                    .iter()
                    .chain(std::iter::once(&dec.classifier))
                    .flat_map(|c| [&c.weight, &c.bias])
                    .collect(),
                SupervisedHead::Classification(fc) => vec![&fc.weight, &fc.bias],
            },
            ParamGroup::SelfSupHead => vec![&self.selfsup.weight, &self.selfsup.bias],
        }
    }

    pub fn group_params_mut(&mut self, group: ParamGroup) -> Vec<&mut Param> {
        match group {
            ParamGroup::SharedEncoder => self
                .encoder
                .stages
                .iter_mut()
                .flat_map(|c| [&mut c.weight, &mut c.bias])
                .collect(),
            ParamGroup::SupervisedHead => match &mut self.supervised {
                SupervisedHead::Segmentation(dec) => dec
                    .blocks
                    .iter_mut()
                    .chain(std::iter::once(&mut dec.classifier))
                    .flat_map(|c| [&mut c.weight, &mut c.bias])
                    .collect(),
                SupervisedHead::Classification(fc) => vec![&mut fc.weight, &mut fc.bias],
            },
            ParamGroup::SelfSupHead => vec![&mut self.selfsup.weight, &mut self.selfsup.bias],
        }
    }

    pub fn group_checksum(&self, group: ParamGroup) -> u64 {
        group_checksum(self.group_params(group).into_iter())
    }

    /// Disjoint split of every trainable tensor into `theta_a`, `theta_b`, `theta_c`.
    pub fn partition_params(&self) -> ModelParams {
        let clone = |g| self.group_params(g).into_iter().cloned().collect();
        ModelParams {
            theta_a: clone(ParamGroup::SharedEncoder),
            theta_b: clone(ParamGroup::SupervisedHead),
            theta_c: clone(ParamGroup::SelfSupHead),
        }
    }

    /// Overwrites all parameters, checking names and shapes group by group.
    pub fn load_params(&mut self, params: &ModelParams) -> Result<()> {
        for group in ParamGroup::ALL {
            let src = params.group(group);
            let dst = self.group_params_mut(group);
            if src.len() != dst.len() {
                return Err(Error::Checkpoint(format!(
                    "{}: expected {} tensors, found {}",
                    group.name(),
                    dst.len(),
                    src.len()
                )));
            }
            for (d, s) in dst.iter().zip(src) {
                if d.name != s.name || d.shape != s.shape || s.value.len() != d.value.len() {
                    return Err(Error::Checkpoint(format!(
                        "{}: tensor {} {:?} does not match {} {:?}",
                        group.name(),
                        s.name,
                        s.shape,
                        d.name,
                        d.shape
                    )));
                }
            }
        }
        for group in ParamGroup::ALL {
            for (d, s) in self.group_params_mut(group).into_iter().zip(params.group(group)) {
                d.value.copy_from_slice(&s.value);
            }
        }
        Ok(())
    }
}
