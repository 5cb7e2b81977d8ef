//! Minimal CPU layers with hand-written backward passes, and the small
//! encoder-decoder shared by the trainable denoiser and the DIP baseline.
//!
//! Feature maps are `CHW`, `f64`. Parameters live in one flat buffer so the
//! optimizer and the checkpoint writer can treat them uniformly.

use crate::diffusion::checkpoint::NamedArray;
use crate::error::{Error, Result};
use crate::image::{Image, Shape};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Feat {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Feat {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), c * h * w);
        Self { c, h, w, data }
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.h * self.w;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Channel-major copy of an interleaved image.
    pub fn from_image(img: &Image) -> Self {
        let s = img.shape();
        let mut f = Feat::zeros(s.channels, s.height, s.width);
        let n = s.height * s.width;
        for (i, px) in img.data().chunks_exact(s.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                f.data[c * n + i] = v;
            }
        }
        f
    }

    /// Interleaved image of the given shape.
    pub fn to_image(&self, shape: Shape) -> Image {
        let n = self.h * self.w;
        Image::from_fn(shape, |y, x, c| self.data[c * n + y * self.w + x])
    }

    pub fn add_assign(&mut self, other: &Feat) {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }
}

/// Handle to one named array inside [`Params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    dims: Vec<usize>,
    offset: usize,
    len: usize,
}

/// Named parameter arrays stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    entries: Vec<Entry>,
    values: Vec<f64>,
}

impl Params {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, dims: Vec<usize>, init: impl IntoIterator<Item = f64>) -> ParamId {
        let len = dims.iter().product();
        let offset = self.values.len();
        self.values.extend(init.into_iter().take(len));
        assert_eq!(self.values.len(), offset + len, "initializer too short for {name}");
        self.entries.push(Entry {
            name: name.to_string(),
            dims,
            offset,
            len,
        });
        ParamId(self.entries.len() - 1)
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[f64] {
        let e = &self.entries[id.0];
        &self.values[e.offset..e.offset + e.len]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        let e = &self.entries[id.0];
        &mut self.values[e.offset..e.offset + e.len]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same layout, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self.entries.clone(),
            values: vec![0.0; self.values.len()],
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.values.iter_mut().for_each(|x| *x = v);
    }

    pub fn to_arrays(&self) -> Vec<NamedArray> {
        self.entries
            .iter()
            .map(|e| NamedArray::new(e.name.clone(), e.dims.clone(), self.values[e.offset..e.offset + e.len].to_vec()))
            .collect()
    }

    /// Overwrites values from named arrays; names and shapes must match.
    pub fn load_arrays(&mut self, arrays: &[NamedArray]) -> Result<()> {
        for e in &self.entries {
            let a = arrays.iter().find(|a| a.name() == e.name).ok_or_else(|| Error::Format {
                kind: "checkpoint",
                reason: format!("missing parameter {:?}", e.name),
            })?;
            if a.dims() != e.dims.as_slice() {
                return Err(Error::Format {
                    kind: "checkpoint",
                    reason: format!("parameter {:?} has shape {:?}, expected {:?}", e.name, a.dims(), e.dims),
                });
            }
            self.values[e.offset..e.offset + e.len].copy_from_slice(a.data());
        }
        Ok(())
    }
}

impl Default for Params {
    fn default() -> Self {
        Self::new()
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

pub fn silu_feat(x: &Feat) -> Feat {
    Feat::from_vec(x.c, x.h, x.w, x.data.iter().map(|&v| silu(v)).collect())
}

/// `g * silu'(pre)`.
pub fn silu_back(pre: &[f64], g: &[f64]) -> Vec<f64> {
    pre.iter().zip(g).map(|(&p, &gi)| gi * silu_grad(p)).collect()
}

/// 3x3 convolution (correlation) with zero padding; weights `[out, in, 3, 3]`.
pub fn conv3x3(input: &Feat, weight: &[f64], bias: &[f64], out_c: usize) -> Feat {
    let (ic, h, w) = (input.c, input.h, input.w);
    debug_assert_eq!(weight.len(), out_c * ic * 9);
    let mut out = Feat::zeros(out_c, h, w);
    for o in 0..out_c {
        let plane = out.plane_mut(o);
        plane.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..ic {
            let src = input.plane(i);
            let wk = &weight[(o * ic + i) * 9..(o * ic + i) * 9 + 9];
            for dy in 0..3 {
                for dx in 0..3 {
                    let k = wk[dy * 3 + dx];
                    if k == 0.0 {
                        continue;
                    }
                    let (y0, y1) = valid_range(dy, h);
                    let (x0, x1) = valid_range(dx, w);
                    for y in y0..y1 {
                        let sy = y + dy - 1;
                        let dst = &mut plane[y * w + x0..y * w + x1];
                        let s = &src[sy * w + x0 + dx - 1..sy * w + x1 + dx - 1];
                        for (d, v) in dst.iter_mut().zip(s) {
                            *d += k * v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Output rows/columns for which tap offset `d` (0..3) lands inside the input.
#[inline]
fn valid_range(d: usize, n: usize) -> (usize, usize) {
    match d {
        0 => (1, n),
        1 => (0, n),
        _ => (0, n - 1),
    }
}

/// Weight and bias gradient accumulators of one layer, if wanted.
pub type LayerGrads<'a> = Option<(&'a mut [f64], &'a mut [f64])>;

/// Backward of [`conv3x3`]: accumulates weight/bias gradients when given,
/// returns the input gradient when requested.
pub fn conv3x3_back(
    input: &Feat,
    weight: &[f64],
    g_out: &Feat,
    mut grads: LayerGrads<'_>,
    want_input: bool,
) -> Option<Feat> {
    let (ic, h, w) = (input.c, input.h, input.w);
    let out_c = g_out.c;
    let mut g_in = want_input.then(|| Feat::zeros(ic, h, w));
    for o in 0..out_c {
        let go = g_out.plane(o);
        if let Some((_, gb)) = grads.as_mut() {
            gb[o] += go.iter().sum::<f64>();
        }
        for i in 0..ic {
            let src = input.plane(i);
            let base = (o * ic + i) * 9;
            for dy in 0..3 {
                for dx in 0..3 {
                    let (y0, y1) = valid_range(dy, h);
                    let (x0, x1) = valid_range(dx, w);
                    let k = weight[base + dy * 3 + dx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = y + dy - 1;
                        let gro = &go[y * w + x0..y * w + x1];
                        let s = &src[sy * w + x0 + dx - 1..sy * w + x1 + dx - 1];
                        if grads.is_some() {
                            acc += gro.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                        }
                        if let Some(gi) = g_in.as_mut() {
                            let dst = &mut gi.plane_mut(i)[sy * w + x0 + dx - 1..sy * w + x1 + dx - 1];
                            for (d, g) in dst.iter_mut().zip(gro) {
                                *d += k * g;
                            }
                        }
                    }
                    if let Some((gw, _)) = grads.as_mut() {
                        gw[base + dy * 3 + dx] += acc;
                    }
                }
            }
        }
    }
    g_in
}

/// `W x + b` with `W` stored `[out, in]`.
pub fn dense(x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    bias.iter()
        .enumerate()
        .map(|(o, b)| b + weight[o * n_in..(o + 1) * n_in].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect()
}

pub fn dense_back(
    x: &[f64],
    weight: &[f64],
    g_out: &[f64],
    mut grads: LayerGrads<'_>,
    want_input: bool,
) -> Option<Vec<f64>> {
    let n_in = x.len();
    let mut g_in = want_input.then(|| vec![0.0; n_in]);
    for (o, &g) in g_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        if let Some((gw, gb)) = grads.as_mut() {
            gb[o] += g;
            gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x).for_each(|(a, v)| *a += g * v);
        }
        if let Some(gi) = g_in.as_mut() {
            gi.iter_mut()
                .zip(&weight[o * n_in..(o + 1) * n_in])
                .for_each(|(d, w)| *d += g * w);
        }
    }
    g_in
}

pub fn avg_pool2(x: &Feat) -> Feat {
    let (h, w) = (x.h / 2, x.w / 2);
    let mut out = Feat::zeros(x.c, h, w);
    for c in 0..x.c {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for xx in 0..w {
                let i = 2 * y * x.w + 2 * xx;
                dst[y * w + xx] = 0.25 * (src[i] + src[i + 1] + src[i + x.w] + src[i + x.w + 1]);
            }
        }
    }
    out
}

pub fn avg_pool2_back(g: &Feat, h: usize, w: usize) -> Feat {
    let mut out = Feat::zeros(g.c, h, w);
    for c in 0..g.c {
        let src = g.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = 0.25 * src[(y / 2) * g.w + x / 2];
            }
        }
    }
    out
}

pub fn upsample2(x: &Feat) -> Feat {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = Feat::zeros(x.c, h, w);
    for c in 0..x.c {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for xx in 0..w {
                dst[y * w + xx] = src[(y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_back(g: &Feat) -> Feat {
    let (h, w) = (g.h / 2, g.w / 2);
    let mut out = Feat::zeros(g.c, h, w);
    for c in 0..g.c {
        let src = g.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..g.h {
            for x in 0..g.w {
                dst[(y / 2) * w + x / 2] += src[y * g.w + x];
            }
        }
    }
    out
}

/// Sinusoidal features of a scalar position.
pub fn sinusoidal_embedding(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for j in 0..half {
        let freq = (-(10000f64).ln() * j as f64 / half as f64).exp();
        out.push((t * freq).sin());
    }
    for j in 0..half {
        let freq = (-(10000f64).ln() * j as f64 / half as f64).exp();
        out.push((t * freq).cos());
    }
    out
}

/// Layer plan of [`EncDec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncDecConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    /// Channels at full resolution.
    pub width1: usize,
    /// Channels at half resolution.
    pub width2: usize,
    /// Dense bottleneck size.
    pub hidden: usize,
    /// Sinusoidal conditioning size; 0 disables conditioning.
    pub embed_dim: usize,
    pub embed_hidden: usize,
    /// Adds a dense full-resolution path from the bottleneck to the output.
    pub template_head: bool,
}

impl EncDecConfig {
    fn bottleneck_len(&self) -> usize {
        self.width2 * (self.height / 4) * (self.width / 4)
    }

    fn cond_len(&self) -> usize {
        self.width1 + self.width2 + self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        if self.height % 4 != 0 || self.width % 4 != 0 || self.height < 4 || self.width < 4 {
            return Err(Error::invalid(format!(
                "encoder-decoder needs sides divisible by 4, got {}x{}",
                self.height, self.width
            )));
        }
        if [self.in_channels, self.out_channels, self.width1, self.width2, self.hidden].contains(&0) {
            return Err(Error::invalid("encoder-decoder widths must be positive"));
        }
        if self.embed_dim % 2 != 0 || (self.embed_dim > 0 && self.embed_hidden == 0) {
            return Err(Error::invalid("embedding sizes must be even and nonzero when enabled"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Ids {
    t1_w: ParamId,
    t1_b: ParamId,
    t2_w: ParamId,
    t2_b: ParamId,
    c1_w: ParamId,
    c1_b: ParamId,
    c2_w: ParamId,
    c2_b: ParamId,
    d1_w: ParamId,
    d1_b: ParamId,
    d2_w: ParamId,
    d2_b: ParamId,
    c3_w: ParamId,
    c3_b: ParamId,
    c4_w: ParamId,
    c4_b: ParamId,
    th_w: ParamId,
    th_b: ParamId,
}

/// Conv encoder (two pooled stages), dense bottleneck, conv decoder with
/// additive skips, optional per-layer conditioning biases.
#[derive(Debug, Clone)]
pub struct EncDec {
    cfg: EncDecConfig,
    ids: Ids,
}

pub struct EncDecTape {
    input: Feat,
    embed: Vec<f64>,
    t_pre: Vec<f64>,
    t_hidden: Vec<f64>,
    a1: Feat,
    p1: Feat,
    a2: Feat,
    p2: Vec<f64>,
    a3: Vec<f64>,
    b1: Vec<f64>,
    a4: Vec<f64>,
    d2: Feat,
    a5: Feat,
    d1: Feat,
}

impl EncDec {
    /// Builds the layer plan and a freshly initialized parameter set.
    pub fn new(cfg: EncDecConfig, seed: u64, out_scale: f64) -> Result<(Self, Params)> {
        cfg.validate()?;
        let mut r = rng::rng(seed);
        let mut p = Params::new();
        let normal = |n: usize, fan_in: usize, gain: f64, r: &mut rng::SeededRng| -> Vec<f64> {
            let s = gain / (fan_in as f64).sqrt();
            (0..n).map(|_| s * rng::normal(r)).collect()
        };
        let e = cfg.embed_dim.max(1);
        let eh = cfg.embed_hidden.max(1);
        let cond = cfg.cond_len();
        let (ci, co, w1, w2, hd, bl) = (
            cfg.in_channels,
            cfg.out_channels,
            cfg.width1,
            cfg.width2,
            cfg.hidden,
            cfg.bottleneck_len(),
        );
        let (t_e, t_eh, t_c) = if cfg.embed_dim > 0 { (e, eh, cond) } else { (0, 0, 0) };
        let ids = Ids {
            t1_w: p.add("temb.fc1.weight", vec![t_eh, t_e], normal(t_eh * t_e, t_e.max(1), 1.0, &mut r)),
            t1_b: p.add("temb.fc1.bias", vec![t_eh], vec![0.0; t_eh]),
            t2_w: p.add("temb.fc2.weight", vec![t_c, t_eh], normal(t_c * t_eh, t_eh.max(1), 0.5, &mut r)),
            t2_b: p.add("temb.fc2.bias", vec![t_c], vec![0.0; t_c]),
            c1_w: p.add("enc1.weight", vec![w1, ci, 3, 3], normal(w1 * ci * 9, ci * 9, 1.4, &mut r)),
            c1_b: p.add("enc1.bias", vec![w1], vec![0.0; w1]),
            c2_w: p.add("enc2.weight", vec![w2, w1, 3, 3], normal(w2 * w1 * 9, w1 * 9, 1.4, &mut r)),
            c2_b: p.add("enc2.bias", vec![w2], vec![0.0; w2]),
            d1_w: p.add("mid.fc1.weight", vec![hd, bl], normal(hd * bl, bl, 1.4, &mut r)),
            d1_b: p.add("mid.fc1.bias", vec![hd], vec![0.0; hd]),
            d2_w: p.add("mid.fc2.weight", vec![bl, hd], normal(bl * hd, hd, 1.4, &mut r)),
            d2_b: p.add("mid.fc2.bias", vec![bl], vec![0.0; bl]),
            c3_w: p.add("dec2.weight", vec![w1, w2, 3, 3], normal(w1 * w2 * 9, w2 * 9, 1.4, &mut r)),
            c3_b: p.add("dec2.bias", vec![w1], vec![0.0; w1]),
            c4_w: p.add("dec1.weight", vec![co, w1, 3, 3], normal(co * w1 * 9, w1 * 9, out_scale, &mut r)),
            c4_b: p.add("dec1.bias", vec![co], vec![0.0; co]),
            th_w: {
                let n = if cfg.template_head { co * cfg.height * cfg.width } else { 0 };
                p.add("head.weight", vec![n, if n > 0 { hd } else { 0 }], normal(n * hd, hd, out_scale, &mut r))
            },
            th_b: {
                let n = if cfg.template_head { co * cfg.height * cfg.width } else { 0 };
                p.add("head.bias", vec![n], vec![0.0; n])
            },
        };
        Ok((Self { cfg, ids }, p))
    }

    pub fn config(&self) -> &EncDecConfig {
        &self.cfg
    }

    pub fn forward(&self, p: &Params, input: Feat, embed: Option<&[f64]>) -> (Feat, EncDecTape) {
        let cfg = &self.cfg;
        let ids = &self.ids;
        let (h, w) = (cfg.height, cfg.width);
        let (t_pre, t_hidden, cond) = match (cfg.embed_dim > 0, embed) {
            (true, Some(e)) => {
                let pre = dense(e, p.get(ids.t1_w), p.get(ids.t1_b));
                let hid: Vec<f64> = pre.iter().map(|&v| silu(v)).collect();
                let c = dense(&hid, p.get(ids.t2_w), p.get(ids.t2_b));
                (pre, hid, Some(c))
            }
            _ => (Vec::new(), Vec::new(), None),
        };
        let (cb1, cb2, cb3) = match &cond {
            Some(c) => (
                &c[..cfg.width1],
                &c[cfg.width1..cfg.width1 + cfg.width2],
                &c[cfg.width1 + cfg.width2..],
            ),
            None => (&[][..], &[][..], &[][..]),
        };

        let mut a1 = conv3x3(&input, p.get(ids.c1_w), p.get(ids.c1_b), cfg.width1);
        add_channel_bias(&mut a1, cb1);
        let h1 = silu_feat(&a1);
        let p1 = avg_pool2(&h1);
        let mut a2 = conv3x3(&p1, p.get(ids.c2_w), p.get(ids.c2_b), cfg.width2);
        add_channel_bias(&mut a2, cb2);
        let h2 = silu_feat(&a2);
        let p2 = avg_pool2(&h2).data;
        let mut a3 = dense(&p2, p.get(ids.d1_w), p.get(ids.d1_b));
        a3.iter_mut().zip(cb3).for_each(|(a, b)| *a += b);
        let b1: Vec<f64> = a3.iter().map(|&v| silu(v)).collect();
        let a4 = dense(&b1, p.get(ids.d2_w), p.get(ids.d2_b));
        let b2 = Feat::from_vec(cfg.width2, h / 4, w / 4, a4.iter().map(|&v| silu(v)).collect());
        let mut d2 = upsample2(&b2);
        d2.add_assign(&h2);
        let a5 = conv3x3(&d2, p.get(ids.c3_w), p.get(ids.c3_b), cfg.width1);
        let h3 = silu_feat(&a5);
        let mut d1 = upsample2(&h3);
        d1.add_assign(&h1);
        let mut out = conv3x3(&d1, p.get(ids.c4_w), p.get(ids.c4_b), cfg.out_channels);
        if cfg.template_head {
            let tmpl = dense(&b1, p.get(ids.th_w), p.get(ids.th_b));
            out.data.iter_mut().zip(&tmpl).for_each(|(o, v)| *o += v);
        }
        let tape = EncDecTape {
            input,
            embed: if t_pre.is_empty() { Vec::new() } else { embed.unwrap_or_default().to_vec() },
            t_pre,
            t_hidden,
            a1,
            p1,
            a2,
            p2,
            a3,
            b1,
            a4,
            d2,
            a5,
            d1,
        };
        (out, tape)
    }

    /// Accumulates parameter gradients into `grads` (if given) and returns the
    /// input gradient (if requested).
    pub fn backward(
        &self,
        p: &Params,
        tape: &EncDecTape,
        g_out: &Feat,
        grads: Option<&mut Params>,
        want_input: bool,
    ) -> Option<Feat> {
        let cfg = &self.cfg;
        let ids = &self.ids;
        let (h, w) = (cfg.height, cfg.width);
        let mut g = grads;
        let mut g_b1 = vec![0.0; cfg.hidden];
        if cfg.template_head {
            g_b1 = with_grads(&mut g, ids.th_w, ids.th_b, |lg| {
                dense_back(&tape.b1, p.get(ids.th_w), &g_out.data, lg, true).unwrap()
            });
        }
        let g_d1 = with_grads(&mut g, ids.c4_w, ids.c4_b, |lg| {
            conv3x3_back(&tape.d1, p.get(ids.c4_w), g_out, lg, true).unwrap()
        });
        // d1 = up(h3) + h1
        let g_h3 = upsample2_back(&g_d1);
        let g_a5 = Feat::from_vec(cfg.width1, h / 2, w / 2, silu_back(&tape.a5.data, &g_h3.data));
        let g_d2 = with_grads(&mut g, ids.c3_w, ids.c3_b, |lg| {
            conv3x3_back(&tape.d2, p.get(ids.c3_w), &g_a5, lg, true).unwrap()
        });
        // d2 = up(b2) + h2
        let g_b2 = upsample2_back(&g_d2);
        let g_a4 = silu_back(&tape.a4, &g_b2.data);
        let g_b1_mid = with_grads(&mut g, ids.d2_w, ids.d2_b, |lg| {
            dense_back(&tape.b1, p.get(ids.d2_w), &g_a4, lg, true).unwrap()
        });
        g_b1.iter_mut().zip(&g_b1_mid).for_each(|(a, b)| *a += b);
        let g_a3 = silu_back(&tape.a3, &g_b1);
        let g_p2 = with_grads(&mut g, ids.d1_w, ids.d1_b, |lg| {
            dense_back(&tape.p2, p.get(ids.d1_w), &g_a3, lg, true).unwrap()
        });
        let g_p2 = Feat::from_vec(cfg.width2, h / 4, w / 4, g_p2);
        let mut g_h2 = avg_pool2_back(&g_p2, h / 2, w / 2);
        g_h2.add_assign(&g_d2);
        let g_a2 = Feat::from_vec(cfg.width2, h / 2, w / 2, silu_back(&tape.a2.data, &g_h2.data));
        let g_p1 = with_grads(&mut g, ids.c2_w, ids.c2_b, |lg| {
            conv3x3_back(&tape.p1, p.get(ids.c2_w), &g_a2, lg, true).unwrap()
        });
        let mut g_h1 = avg_pool2_back(&g_p1, h, w);
        g_h1.add_assign(&g_d1);
        let g_a1 = Feat::from_vec(cfg.width1, h, w, silu_back(&tape.a1.data, &g_h1.data));
        let g_in = with_grads(&mut g, ids.c1_w, ids.c1_b, |lg| {
            conv3x3_back(&tape.input, p.get(ids.c1_w), &g_a1, lg, want_input)
        });

        if g.is_some() && cfg.embed_dim > 0 && !tape.t_pre.is_empty() {
            // Conditioning biases: per-channel sums of the pre-activation grads.
            let mut g_cond = Vec::with_capacity(cfg.cond_len());
            g_cond.extend((0..cfg.width1).map(|c| g_a1.plane(c).iter().sum::<f64>()));
            g_cond.extend((0..cfg.width2).map(|c| g_a2.plane(c).iter().sum::<f64>()));
            g_cond.extend_from_slice(&g_a3);
            let g_hid = with_grads(&mut g, ids.t2_w, ids.t2_b, |lg| {
                dense_back(&tape.t_hidden, p.get(ids.t2_w), &g_cond, lg, true).unwrap()
            });
            let g_pre = silu_back(&tape.t_pre, &g_hid);
            with_grads(&mut g, ids.t1_w, ids.t1_b, |lg| {
                dense_back(&tape.embed, p.get(ids.t1_w), &g_pre, lg, false);
            });
        }
        g_in
    }
}

fn add_channel_bias(x: &mut Feat, bias: &[f64]) {
    for (c, &b) in bias.iter().enumerate() {
        x.plane_mut(c).iter_mut().for_each(|v| *v += b);
    }
}

/// Runs `f` with the weight and bias gradient slices of one layer, or
/// `None` when parameter gradients are not being collected.
fn with_grads<R>(g: &mut Option<&mut Params>, w: ParamId, b: ParamId, f: impl FnOnce(LayerGrads<'_>) -> R) -> R {
    let Some(g) = g.as_deref_mut() else {
        return f(None);
    };
    let (ew, eb) = (g.entries[w.0].clone(), g.entries[b.0].clone());
    debug_assert!(ew.offset + ew.len <= eb.offset);
    let (lo, hi) = g.values.split_at_mut(eb.offset);
    f(Some((&mut lo[ew.offset..ew.offset + ew.len], &mut hi[..eb.len])))
}
