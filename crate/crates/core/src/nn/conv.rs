use super::{Param, Parameterized};
use crate::error::{Error, Result};
use crate::rng::NoiseStream;

/// Channel-major stack of 2D planes, `data[c][y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape("feature map", channels * height * width, data.len()));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }
}

/// Offsets `(dst_start, src_start, len)` of a shifted 1D window with zero padding.
fn overlap(len: usize, shift: isize) -> Option<(usize, usize, usize)> {
    let n = len as isize;
    let lo = 0.max(-shift);
    let hi = n.min(n - shift);
    (hi > lo).then(|| (lo as usize, (lo + shift) as usize, (hi - lo) as usize))
}

/// Stride-1 convolution with odd square kernels and zero "same" padding.
/// Weights are `[out, in, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
}

impl Conv2d {
    pub fn new(inputs: usize, outputs: usize, kernel: usize, rng: &mut NoiseStream) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        let fan_in = inputs * kernel * kernel;
        Self {
            weight: Param::uniform(&[outputs, inputs, kernel, kernel], fan_in, rng),
            bias: Param::uniform(&[outputs], fan_in, rng),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape[2]
    }

    fn taps(&self) -> impl Iterator<Item = (usize, isize, isize)> {
        let k = self.kernel();
        let pad = (k / 2) as isize;
        (0..k * k).map(move |t| (t, (t / k) as isize - pad, (t % k) as isize - pad))
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        if x.channels != self.inputs() {
            return Err(Error::shape("conv input channels", self.inputs(), x.channels));
        }
        let (h, w) = (x.height, x.width);
        let kk = self.kernel() * self.kernel();
        let mut out = FeatureMap::zeros(self.outputs(), h, w);
        for o in 0..self.outputs() {
            let plane = out.plane_mut(o);
            plane.iter_mut().for_each(|v| *v = self.bias.value[o]);
            for i in 0..self.inputs() {
                let src = x.plane(i);
                let wbase = (o * self.inputs() + i) * kk;
                for (t, dy, dx) in self.taps() {
                    let wv = self.weight.value[wbase + t];
                    let (Some((y0, sy0, ny)), Some((x0, sx0, nx))) = (overlap(h, dy), overlap(w, dx)) else {
                        continue;
                    };
                    for r in 0..ny {
                        let d = &mut plane[(y0 + r) * w + x0..(y0 + r) * w + x0 + nx];
                        let s = &src[(sy0 + r) * w + sx0..(sy0 + r) * w + sx0 + nx];
                        for (dv, sv) in d.iter_mut().zip(s) {
                            *dv += wv * sv;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, x: &FeatureMap, dy_map: &FeatureMap) -> Result<FeatureMap> {
        self.backward_impl(x, dy_map, true)
    }

    /// Accumulates parameter gradients only, for layers fed directly by data.
    pub fn backward_params(&mut self, x: &FeatureMap, dy_map: &FeatureMap) -> Result<()> {
        self.backward_impl(x, dy_map, false).map(|_| ())
    }

    fn backward_impl(&mut self, x: &FeatureMap, dy_map: &FeatureMap, need_dx: bool) -> Result<FeatureMap> {
        if x.channels != self.inputs() || dy_map.channels != self.outputs() || x.plane_len() != dy_map.plane_len() {
            return Err(Error::shape(
                "conv backward",
                format!("{}x{}", self.inputs(), self.outputs()),
                format!("{}x{}", x.channels, dy_map.channels),
            ));
        }
        let (h, w) = (x.height, x.width);
        let kk = self.kernel() * self.kernel();
        let n_in = self.inputs();
        let mut dx_map = if need_dx { FeatureMap::zeros(n_in, h, w) } else { FeatureMap::zeros(0, 0, 0) };
        let taps: Vec<_> = self.taps().collect();
        for o in 0..self.outputs() {
            let g = dy_map.plane(o);
            self.bias.grad[o] += g.iter().sum::<f64>();
            for i in 0..n_in {
                let src = x.plane(i);
                let wbase = (o * n_in + i) * kk;
                if !need_dx {
                    for &(t, dy, dx) in &taps {
                        let (Some((y0, sy0, ny)), Some((x0, sx0, nx))) = (overlap(h, dy), overlap(w, dx)) else {
                            continue;
                        };
                        let mut acc = 0.0;
                        for r in 0..ny {
                            let gr = &g[(y0 + r) * w + x0..(y0 + r) * w + x0 + nx];
                            let sr = &src[(sy0 + r) * w + sx0..(sy0 + r) * w + sx0 + nx];
                            acc += gr.iter().zip(sr).map(|(a, b)| a * b).sum::<f64>();
                        }
                        self.weight.grad[wbase + t] += acc;
                    }
                    continue;
                }
                let dst = dx_map.plane_mut(i);
                for &(t, dy, dx) in &taps {
                    let wv = self.weight.value[wbase + t];
                    let (Some((y0, sy0, ny)), Some((x0, sx0, nx))) = (overlap(h, dy), overlap(w, dx)) else {
                        continue;
                    };
                    let mut acc = 0.0;
                    for r in 0..ny {
                        let gr = &g[(y0 + r) * w + x0..(y0 + r) * w + x0 + nx];
                        let sr = &src[(sy0 + r) * w + sx0..(sy0 + r) * w + sx0 + nx];
                        let dr = &mut dst[(sy0 + r) * w + sx0..(sy0 + r) * w + sx0 + nx];
                        for ((gv, sv), dv) in gr.iter().zip(sr).zip(dr.iter_mut()) {
                            acc += gv * sv;
                            *dv += wv * gv;
                        }
                    }
                    self.weight.grad[wbase + t] += acc;
                }
            }
        }
        Ok(dx_map)
    }
}

impl Parameterized for Conv2d {
    fn params(&self) -> Vec<(String, &Param)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![("weight".into(), &mut self.weight), ("bias".into(), &mut self.bias)]
    }
}

/// 2x2 average pooling. Height and width must be even.
pub fn avg_pool2(x: &FeatureMap) -> Result<FeatureMap> {
    if x.height % 2 != 0 || x.width % 2 != 0 {
        return Err(Error::shape("avg_pool2 input", "even height and width", format!("{}x{}", x.height, x.width)));
    }
    let (h2, w2) = (x.height / 2, x.width / 2);
    let mut out = FeatureMap::zeros(x.channels, h2, w2);
    for c in 0..x.channels {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h2 {
            for xx in 0..w2 {
                let a = 2 * y * x.width + 2 * xx;
                dst[y * w2 + xx] = 0.25 * (src[a] + src[a + 1] + src[a + x.width] + src[a + x.width + 1]);
            }
        }
    }
    Ok(out)
}

pub fn avg_pool2_backward(dy: &FeatureMap) -> FeatureMap {
    let (h, w) = (dy.height * 2, dy.width * 2);
    let mut dx = FeatureMap::zeros(dy.channels, h, w);
    for c in 0..dy.channels {
        let g = dy.plane(c);
        let dst = dx.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = 0.25 * g[(y / 2) * dy.width + x / 2];
            }
        }
    }
    dx
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2(x: &FeatureMap) -> FeatureMap {
    let (h, w) = (x.height * 2, x.width * 2);
    let mut out = FeatureMap::zeros(x.channels, h, w);
    for c in 0..x.channels {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for xx in 0..w {
                dst[y * w + xx] = src[(y / 2) * x.width + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(dy: &FeatureMap) -> FeatureMap {
    let (h2, w2) = (dy.height / 2, dy.width / 2);
    let mut dx = FeatureMap::zeros(dy.channels, h2, w2);
    for c in 0..dy.channels {
        let g = dy.plane(c);
        let dst = dx.plane_mut(c);
        for y in 0..dy.height {
            for x in 0..dy.width {
                dst[(y / 2) * w2 + x / 2] += g[y * dy.width + x];
            }
        }
    }
    dx
}

pub fn concat_channels(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::shape("channel concat", format!("{}x{}", a.height, a.width), format!("{}x{}", b.height, b.width)));
    }
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    FeatureMap::from_vec(a.channels + b.channels, a.height, a.width, data)
}

/// Inverse of [`concat_channels`]: splits after the first `first` channels.
pub fn split_channels(x: &FeatureMap, first: usize) -> (FeatureMap, FeatureMap) {
    let n = first * x.plane_len();
    (
        FeatureMap {
            channels: first,
            height: x.height,
            width: x.width,
            data: x.data[..n].to_vec(),
        },
        FeatureMap {
            channels: x.channels - first,
            height: x.height,
            width: x.width,
            data: x.data[n..].to_vec(),
        },
    )
}
