//! Encoder-decoder grid predictor with skip connections.

use serde::{Deserialize, Serialize};

use super::grid::SemanticGrid;
use super::heatmap::HeatMapStack;
use crate::error::{Error, Result};
use crate::nn::{
    avg_pool2, avg_pool2_backward, concat_channels, prefixed, prefixed_mut, split_channels, upsample2,
    upsample2_backward, Activation, Conv2d, FeatureMap, Param, Parameterized,
};
use crate::rng::NoiseStream;

const ACT: Activation = Activation::Silu;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalNetConfig {
    pub semantic_classes: usize,
    pub history: usize,
    pub future: usize,
    /// Channels per resolution level; the last entry is the bottleneck, so
    /// `channels.len() - 1` down/up blocks are built.
    pub channels: Vec<usize>,
}

impl Default for GoalNetConfig {
    fn default() -> Self {
        Self {
            semantic_classes: 2,
            history: 8,
            future: 12,
            channels: vec![8, 16, 16],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalNet {
    pub encoders: Vec<Conv2d>,
    pub decoders: Vec<Conv2d>,
    pub head: Conv2d,
    semantic_classes: usize,
    history: usize,
}

#[derive(Debug, Clone)]
pub struct GoalNetTape {
    enc_in: Vec<FeatureMap>,
    enc_pre: Vec<FeatureMap>,
    enc_out: Vec<FeatureMap>,
    dec_in: Vec<FeatureMap>,
    dec_pre: Vec<FeatureMap>,
    head_in: FeatureMap,
}

fn activate(x: &FeatureMap) -> FeatureMap {
    FeatureMap {
        data: ACT.forward(&x.data),
        ..x.clone()
    }
}

fn activate_backward(pre: &FeatureMap, dy: &FeatureMap) -> FeatureMap {
    FeatureMap {
        data: ACT.backward(&pre.data, &dy.data),
        ..pre.clone()
    }
}

impl GoalNet {
    pub fn new(cfg: &GoalNetConfig, rng: &mut NoiseStream) -> Result<Self> {
        let ch = &cfg.channels;
        if ch.len() < 2 || ch.contains(&0) {
            return Err(Error::Config("goal net needs at least two positive channel levels".into()));
        }
        let depth = ch.len() - 1;
        let mut encoders = vec![Conv2d::new(cfg.semantic_classes + cfg.history, ch[0], 3, rng)];
        for l in 1..=depth {
            encoders.push(Conv2d::new(ch[l - 1], ch[l], 3, rng));
        }
        // decoders[l] merges the upsampled level l+1 with skip level l.
        let decoders = (0..depth).map(|l| Conv2d::new(ch[l + 1] + ch[l], ch[l], 3, rng)).collect();
        Ok(Self {
            encoders,
            decoders,
            head: Conv2d::new(ch[0], cfg.future, 1, rng),
            semantic_classes: cfg.semantic_classes,
            history: cfg.history,
        })
    }

    pub fn depth(&self) -> usize {
        self.decoders.len()
    }

    pub fn future(&self) -> usize {
        self.head.outputs()
    }

    /// Concatenates semantic channels with peak-scaled history maps.
    pub fn assemble_input(&self, sem: &SemanticGrid, hist: &HeatMapStack) -> Result<FeatureMap> {
        if sem.grid != hist.grid {
            return Err(Error::Invalid("semantic grid and history heat-maps use different grids".into()));
        }
        if sem.classes != self.semantic_classes || hist.channels() != self.history {
            return Err(Error::shape(
                "goal net input channels",
                format!("{} + {}", self.semantic_classes, self.history),
                format!("{} + {}", sem.classes, hist.channels()),
            ));
        }
        let g = sem.grid;
        let unit = 1usize << self.depth();
        if g.height % unit != 0 || g.width % unit != 0 {
            return Err(Error::shape("goal net grid", format!("multiple of {unit}"), format!("{}x{}", g.height, g.width)));
        }
        let sem_map = FeatureMap::from_vec(sem.classes, g.height, g.width, sem.scores.clone())?;
        concat_channels(&sem_map, &hist.peak_scaled().maps)
    }

    /// Returns per-pixel logits with `future` channels.
    pub fn forward(&self, input: &FeatureMap) -> Result<(FeatureMap, GoalNetTape)> {
        let depth = self.depth();
        let mut enc_in = Vec::with_capacity(depth + 1);
        let mut enc_pre = Vec::with_capacity(depth + 1);
        let mut enc_out: Vec<FeatureMap> = Vec::with_capacity(depth + 1);
        for (l, conv) in self.encoders.iter().enumerate() {
            let x = if l == 0 { input.clone() } else { avg_pool2(&enc_out[l - 1])? };
            let pre = conv.forward(&x)?;
            enc_out.push(activate(&pre));
            enc_in.push(x);
            enc_pre.push(pre);
        }
        let mut h = enc_out[depth].clone();
        let mut dec_in = vec![FeatureMap::zeros(0, 0, 0); depth];
        let mut dec_pre = vec![FeatureMap::zeros(0, 0, 0); depth];
        for l in (0..depth).rev() {
            let x = concat_channels(&upsample2(&h), &enc_out[l])?;
            let pre = self.decoders[l].forward(&x)?;
            h = activate(&pre);
            dec_in[l] = x;
            dec_pre[l] = pre;
        }
        let logits = self.head.forward(&h)?;
        Ok((
            logits,
            GoalNetTape {
                enc_in,
                enc_pre,
                enc_out,
                dec_in,
                dec_pre,
                head_in: h,
            },
        ))
    }

    /// Per-pixel probabilities `sigmoid(logits)` as a heat-map stack.
    pub fn predict(&self, sem: &SemanticGrid, hist: &HeatMapStack) -> Result<HeatMapStack> {
        let input = self.assemble_input(sem, hist)?;
        let (logits, _) = self.forward(&input)?;
        Ok(HeatMapStack {
            grid: sem.grid,
            maps: FeatureMap {
                data: Activation::Sigmoid.forward(&logits.data),
                ..logits
            },
            normalized: false,
        })
    }

    pub fn backward(&mut self, tape: &GoalNetTape, d_logits: &FeatureMap) -> Result<()> {
        let depth = self.depth();
        let mut dh = self.head.backward(&tape.head_in, d_logits)?;
        let mut d_skip: Vec<Option<FeatureMap>> = vec![None; depth + 1];
        for l in 0..depth {
            let d_pre = activate_backward(&tape.dec_pre[l], &dh);
            let d_x = self.decoders[l].backward(&tape.dec_in[l], &d_pre)?;
            let up_ch = d_x.channels - tape.enc_out[l].channels;
            let (d_up, d_s) = split_channels(&d_x, up_ch);
            d_skip[l] = Some(d_s);
            dh = upsample2_backward(&d_up);
        }
        // dh is now the gradient on the bottleneck output enc_out[depth].
        for l in (0..=depth).rev() {
            if let Some(s) = d_skip[l].take() {
                for (a, b) in dh.data.iter_mut().zip(&s.data) {
                    *a += b;
                }
            }
            let d_pre = activate_backward(&tape.enc_pre[l], &dh);
            if l > 0 {
                let d_x = self.encoders[l].backward(&tape.enc_in[l], &d_pre)?;
                dh = avg_pool2_backward(&d_x);
            } else {
                self.encoders[0].backward_params(&tape.enc_in[0], &d_pre)?;
            }
        }
        Ok(())
    }
}

impl Parameterized for GoalNet {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut v = Vec::new();
        for (i, c) in self.encoders.iter().enumerate() {
            v.extend(prefixed(&format!("enc{i}"), c.params()));
        }
        for (i, c) in self.decoders.iter().enumerate() {
            v.extend(prefixed(&format!("dec{i}"), c.params()));
        }
        v.extend(prefixed("head", self.head.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut v = Vec::new();
        for (i, c) in self.encoders.iter_mut().enumerate() {
            v.extend(prefixed_mut(&format!("enc{i}"), c.params_mut()));
        }
        for (i, c) in self.decoders.iter_mut().enumerate() {
            v.extend(prefixed_mut(&format!("dec{i}"), c.params_mut()));
        }
        v.extend(prefixed_mut("head", self.head.params_mut()));
        v
    }
}
