//! Embedding classifier: residual conv front-end, parallel global
//! average/standard-deviation pooling, and a two-linear-layer head. The
//! penultimate linear output is the utterance embedding fed to the SVM
//! back-end. Auxiliary embeddings can be fused at the feature level (extra
//! frequency rows, replicated over time) or at the embedding level
//! (concatenated with the pooled vector).

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::layers::{BatchNorm2d, Conv2d, Linear, Relu};
use super::pooling::GapGspPool;
use super::scalar::Scalar;
use super::tensor::Tensor;
use super::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxFusion {
    None,
    FeatLevel,
    EmbLevel,
}

impl AuxFusion {
    pub fn as_str(&self) -> &'static str {
        match self {
            AuxFusion::None => "none",
            AuxFusion::FeatLevel => "feat_level",
            AuxFusion::EmbLevel => "emb_level",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AuxFusion::None),
            "feat_level" => Ok(AuxFusion::FeatLevel),
            "emb_level" => Ok(AuxFusion::EmbLevel),
            other => Err(Error::Config(format!("unknown aux fusion `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResNetEmbedConfig {
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub embed_dim: usize,
    pub n_classes: usize,
    pub aux_fusion: AuxFusion,
    pub aux_dim: usize,
}

impl Default for ResNetEmbedConfig {
    fn default() -> Self {
        ResNetEmbedConfig {
            stage_channels: vec![16, 32, 64, 128],
            blocks_per_stage: vec![2, 2, 2, 2],
            embed_dim: 128,
            n_classes: 2,
            aux_fusion: AuxFusion::None,
            aux_dim: 100,
        }
    }
}

impl ResNetEmbedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.is_empty() || self.stage_channels.len() != self.blocks_per_stage.len() {
            return Err(Error::Config(
                "stage_channels and blocks_per_stage must be non-empty and the same length".into(),
            ));
        }
        if self.stage_channels.iter().any(|&c| c == 0) || self.blocks_per_stage.iter().any(|&b| b == 0)
        {
            return Err(Error::Config("stage sizes must be positive".into()));
        }
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be positive".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("n_classes must be at least 2".into()));
        }
        if self.aux_fusion != AuxFusion::None && self.aux_dim == 0 {
            return Err(Error::Config("aux_dim must be positive when fusion is enabled".into()));
        }
        Ok(())
    }
}

struct BasicBlock<S: Scalar> {
    conv1: Conv2d<S>,
    bn1: BatchNorm2d<S>,
    relu1: Relu<S>,
    conv2: Conv2d<S>,
    bn2: BatchNorm2d<S>,
    down: Option<(Conv2d<S>, BatchNorm2d<S>)>,
    relu_out: Relu<S>,
}

impl<S: Scalar> BasicBlock<S> {
    fn new(in_c: usize, out_c: usize, stride: usize, rng: &mut Rng) -> Self {
        let down = if stride != 1 || in_c != out_c {
            Some((Conv2d::new(in_c, out_c, 1, stride, 0, rng), BatchNorm2d::new(out_c)))
        } else {
            None
        };
        BasicBlock {
            conv1: Conv2d::new(in_c, out_c, 3, stride, 1, rng),
            bn1: BatchNorm2d::new(out_c),
            relu1: Relu::new(),
            conv2: Conv2d::new(out_c, out_c, 3, 1, 1, rng),
            bn2: BatchNorm2d::new(out_c),
            down,
            relu_out: Relu::new(),
        }
    }

    fn forward(&mut self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        let mut main = self.conv1.forward(x)?;
        main = self.bn1.forward(&main, mode)?;
        main = self.relu1.forward(&main)?;
        main = self.conv2.forward(&main)?;
        main = self.bn2.forward(&main, mode)?;
        let shortcut = match &mut self.down {
            Some((conv, bn)) => {
                let s = conv.forward(x)?;
                bn.forward(&s, mode)?
            }
            None => x.clone(),
        };
        let mut sum = main;
        for (a, b) in sum.data_mut().iter_mut().zip(shortcut.data().iter()) {
            *a += *b;
        }
        self.relu_out.forward(&sum)
    }

    fn backward(&mut self, grad: &Tensor<S>) -> Result<Tensor<S>> {
        let ds = self.relu_out.backward(grad)?;
        let mut dmain = self.bn2.backward(&ds)?;
        dmain = self.conv2.backward(&dmain)?;
        dmain = self.relu1.backward(&dmain)?;
        dmain = self.bn1.backward(&dmain)?;
        dmain = self.conv1.backward(&dmain)?;
        let dshort = match &mut self.down {
            Some((conv, bn)) => {
                let d = bn.backward(&ds)?;
                conv.backward(&d)?
            }
            None => ds,
        };
        let mut dx = dmain;
        for (a, b) in dx.data_mut().iter_mut().zip(dshort.data().iter()) {
            *a += *b;
        }
        Ok(dx)
    }

    fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(String, bool, &mut Tensor<S>)) {
        self.conv1.visit_state(&format!("{prefix}.conv1"), f);
        self.bn1.visit_state(&format!("{prefix}.bn1"), f);
        self.conv2.visit_state(&format!("{prefix}.conv2"), f);
        self.bn2.visit_state(&format!("{prefix}.bn2"), f);
        if let Some((conv, bn)) = &mut self.down {
            conv.visit_state(&format!("{prefix}.down_conv"), f);
            bn.visit_state(&format!("{prefix}.down_bn"), f);
        }
    }
}

pub struct ResNetEmbed<S: Scalar> {
    cfg: ResNetEmbedConfig,
    stem_conv: Conv2d<S>,
    stem_bn: BatchNorm2d<S>,
    stem_relu: Relu<S>,
    blocks: Vec<BasicBlock<S>>,
    pool: GapGspPool<S>,
    fc_embed: Linear<S>,
    fc_logits: Linear<S>,
}

impl<S: Scalar> ResNetEmbed<S> {
    pub fn new(cfg: &ResNetEmbedConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let c0 = cfg.stage_channels[0];
        let stem_conv = Conv2d::new(1, c0, 3, 1, 1, rng);
        let stem_bn = BatchNorm2d::new(c0);
        let mut blocks = Vec::new();
        let mut in_c = c0;
        for (stage, (&out_c, &n_blocks)) in cfg
            .stage_channels
            .iter()
            .zip(cfg.blocks_per_stage.iter())
            .enumerate()
        {
            for b in 0..n_blocks {
                // stride-2 downsampling on the first block of every stage
                // after the first
                let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(in_c, out_c, stride, rng));
                in_c = out_c;
            }
        }
        let pooled_dim = 2 * in_c;
        let head_in = match cfg.aux_fusion {
            AuxFusion::EmbLevel => pooled_dim + cfg.aux_dim,
            _ => pooled_dim,
        };
        let fc_embed = Linear::new(head_in, cfg.embed_dim, rng);
        let fc_logits = Linear::new(cfg.embed_dim, cfg.n_classes, rng);
        Ok(ResNetEmbed {
            cfg: cfg.clone(),
            stem_conv,
            stem_bn,
            stem_relu: Relu::new(),
            blocks,
            pool: GapGspPool::new(),
            fc_embed,
            fc_logits,
        })
    }

    pub fn config(&self) -> &ResNetEmbedConfig {
        &self.cfg
    }

    fn check_aux(&self, n: usize, aux: Option<&Tensor<S>>) -> Result<()> {
        match (self.cfg.aux_fusion, aux) {
            (AuxFusion::None, None) => Ok(()),
            (AuxFusion::None, Some(_)) => Err(Error::shape(
                "resnet_embed aux",
                "no aux tensor (fusion disabled)",
                "aux tensor provided",
            )),
            (_, None) => Err(Error::shape(
                "resnet_embed aux",
                format!("[N, {}] aux tensor", self.cfg.aux_dim),
                "missing",
            )),
            (_, Some(a)) => {
                if a.shape() == [n, self.cfg.aux_dim] {
                    Ok(())
                } else {
                    Err(Error::shape(
                        "resnet_embed aux",
                        format!("[{n}, {}]", self.cfg.aux_dim),
                        format!("{:?}", a.shape()),
                    ))
                }
            }
        }
    }

    /// Returns (logits [N, n_classes], embedding [N, embed_dim]).
    pub fn forward(
        &mut self,
        feat: &Tensor<S>,
        aux: Option<&Tensor<S>>,
        mode: Mode,
    ) -> Result<(Tensor<S>, Tensor<S>)> {
        let shape = feat.shape();
        if shape.len() != 4 || shape[1] != 1 {
            return Err(Error::shape("resnet_embed", "[N, 1, bins, frames]", format!("{shape:?}")));
        }
        let (n, h, w) = (shape[0], shape[2], shape[3]);
        self.check_aux(n, aux)?;

        // feature-level fusion: aux vector becomes aux_dim extra frequency
        // rows, identical at every frame
        let stacked;
        let x = if self.cfg.aux_fusion == AuxFusion::FeatLevel {
            let aux = aux.unwrap();
            let ha = h + self.cfg.aux_dim;
            let mut data = vec![S::ZERO; n * ha * w];
            for i in 0..n {
                let src = &feat.data()[i * h * w..(i + 1) * h * w];
                data[i * ha * w..i * ha * w + h * w].copy_from_slice(src);
                for r in 0..self.cfg.aux_dim {
                    let v = aux.data()[i * self.cfg.aux_dim + r];
                    let row = &mut data[i * ha * w + (h + r) * w..i * ha * w + (h + r + 1) * w];
                    row.iter_mut().for_each(|x| *x = v);
                }
            }
            stacked = Tensor::from_vec(&[n, 1, ha, w], data)?;
            &stacked
        } else {
            feat
        };

        let mut t = self.stem_conv.forward(x)?;
        t = self.stem_bn.forward(&t, mode)?;
        t = self.stem_relu.forward(&t)?;
        for block in &mut self.blocks {
            t = block.forward(&t, mode)?;
        }
        let pooled = self.pool.forward(&t)?;

        let head_in = if self.cfg.aux_fusion == AuxFusion::EmbLevel {
            let aux = aux.unwrap();
            let pd = pooled.shape()[1];
            let ad = self.cfg.aux_dim;
            let mut data = vec![S::ZERO; n * (pd + ad)];
            for i in 0..n {
                data[i * (pd + ad)..i * (pd + ad) + pd]
                    .copy_from_slice(&pooled.data()[i * pd..(i + 1) * pd]);
                data[i * (pd + ad) + pd..(i + 1) * (pd + ad)]
                    .copy_from_slice(&aux.data()[i * ad..(i + 1) * ad]);
            }
            Tensor::from_vec(&[n, pd + ad], data)?
        } else {
            pooled
        };

        let embedding = self.fc_embed.forward(&head_in)?;
        let logits = self.fc_logits.forward(&embedding)?;
        Ok((logits, embedding))
    }

    pub fn backward(&mut self, grad_logits: &Tensor<S>) -> Result<()> {
        let g = self.fc_logits.backward(grad_logits)?;
        let g = self.fc_embed.backward(&g)?;
        // drop the aux columns when they were concatenated after pooling
        let g = if self.cfg.aux_fusion == AuxFusion::EmbLevel {
            let n = g.shape()[0];
            let full = g.shape()[1];
            let pd = full - self.cfg.aux_dim;
            let mut data = vec![S::ZERO; n * pd];
            for i in 0..n {
                data[i * pd..(i + 1) * pd].copy_from_slice(&g.data()[i * full..i * full + pd]);
            }
            Tensor::from_vec(&[n, pd], data)?
        } else {
            g
        };
        let mut t = self.pool.backward(&g)?;
        for block in self.blocks.iter_mut().rev() {
            t = block.backward(&t)?;
        }
        let t = self.stem_relu.backward(&t)?;
        let t = self.stem_bn.backward(&t)?;
        self.stem_conv.backward(&t)?;
        Ok(())
    }

    pub fn visit_state(&mut self, f: &mut dyn FnMut(String, bool, &mut Tensor<S>)) {
        self.stem_conv.visit_state("stem.conv", f);
        self.stem_bn.visit_state("stem.bn", f);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.visit_state(&format!("block{i}"), f);
        }
        self.fc_embed.visit_state("fc_embed", f);
        self.fc_logits.visit_state("fc_logits", f);
    }

    pub fn zero_grad(&mut self) {
        self.visit_state(&mut |_, trainable, t| {
            if trainable {
                t.zero_grad();
            }
        });
    }
}
