//! Factorized video field: three feature planes per scale (xy, xt, yt) fused
//! by elementwise product, concatenated across scales, then decoded.
//!
//! Fitting is plain gradient descent with hand-derived gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Frame, FrameSequence, Grid};
use crate::metrics::Charbonnier;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaneAxes {
    Xy,
    Xt,
    Yt,
}

impl PlaneAxes {
    pub const ALL: [PlaneAxes; 3] = [PlaneAxes::Xy, PlaneAxes::Xt, PlaneAxes::Yt];

    /// Projects `(x, y, tau)` onto this plane's two axes.
    #[inline]
    pub fn project(self, q: [f64; 3]) -> (f64, f64) {
        match self {
            PlaneAxes::Xy => (q[0], q[1]),
            PlaneAxes::Xt => (q[0], q[2]),
            PlaneAxes::Yt => (q[1], q[2]),
        }
    }
}

/// One `R_a x R_b x F` plane; node `(i, j)` sits at `(i / (R_a - 1), j / (R_b - 1))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePlane {
    axes: PlaneAxes,
    ra: usize,
    rb: usize,
    features: usize,
    values: Vec<f64>,
}

impl FeaturePlane {
    pub fn new(axes: PlaneAxes, ra: usize, rb: usize, features: usize, values: Vec<f64>) -> Result<Self> {
        if ra < 2 || rb < 2 {
            return Err(Error::InvalidInput(format!(
                "plane resolution must be at least 2 per axis, got {ra}x{rb}"
            )));
        }
        if features == 0 {
            return Err(Error::InvalidInput("plane needs at least one feature".into()));
        }
        if values.len() != ra * rb * features {
            return Err(Error::GeometryMismatch(format!(
                "{} values for a {ra}x{rb}x{features} plane",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite plane value".into()));
        }
        Ok(Self {
            axes,
            ra,
            rb,
            features,
            values,
        })
    }

    pub fn filled(axes: PlaneAxes, ra: usize, rb: usize, features: usize, value: f64) -> Result<Self> {
        Self::new(axes, ra, rb, features, vec![value; ra * rb * features])
    }

    /// Builds a single-feature plane from a function of the node coordinates.
    pub fn from_fn(
        axes: PlaneAxes,
        ra: usize,
        rb: usize,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(ra * rb);
        for j in 0..rb {
            for i in 0..ra {
                values.push(f(i as f64 / (ra - 1) as f64, j as f64 / (rb - 1) as f64));
            }
        }
        Self::new(axes, ra, rb, 1, values)
    }

    pub fn axes(&self) -> PlaneAxes {
        self.axes
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.ra, self.rb)
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> &[f64] {
        let b = (j * self.ra + i) * self.features;
        &self.values[b..b + self.features]
    }

    /// Offsets (into `values`, feature 0) and weights of the four nodes
    /// around `(a, b)`.
    #[inline]
    pub fn corners(&self, a: f64, b: f64) -> [(usize, f64); 4] {
        let (ia, fa) = split(a, self.ra);
        let (ib, fb) = split(b, self.rb);
        let base = |i: usize, j: usize| (j * self.ra + i) * self.features;
        [
            (base(ia, ib), (1.0 - fa) * (1.0 - fb)),
            (base(ia + 1, ib), fa * (1.0 - fb)),
            (base(ia, ib + 1), (1.0 - fa) * fb),
            (base(ia + 1, ib + 1), fa * fb),
        ]
    }

    /// Bilinear sample of all features at `(a, b)` in `[0, 1]^2`.
    pub fn sample(&self, a: f64, b: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.features];
        for (off, w) in self.corners(a, b) {
            for (o, v) in out.iter_mut().zip(&self.values[off..off + self.features]) {
                *o += w * v;
            }
        }
        out
    }
}

#[inline]
fn split(a: f64, r: usize) -> (usize, f64) {
    let u = a * (r - 1) as f64;
    let i = (u.floor() as usize).min(r - 2);
    (i, u - i as f64)
}

/// Maps concatenated features to output channels.
#[derive(Debug, Clone, PartialEq)]
pub enum Decoder {
    /// `out = W f + b`; `weight` is `out x in` row-major.
    Linear {
        inputs: usize,
        outputs: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    /// `out = W2 tanh(W1 f + b1) + b2`.
    Mlp {
        inputs: usize,
        hidden: usize,
        outputs: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
    },
}

impl Decoder {
    pub fn linear(inputs: usize, outputs: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::GeometryMismatch("linear decoder parameter sizes".into()));
        }
        Ok(Decoder::Linear {
            inputs,
            outputs,
            weight,
            bias,
        })
    }

    pub fn mlp(
        inputs: usize,
        hidden: usize,
        outputs: usize,
        (w1, b1): (Vec<f64>, Vec<f64>),
        (w2, b2): (Vec<f64>, Vec<f64>),
    ) -> Result<Self> {
        if w1.len() != hidden * inputs
            || b1.len() != hidden
            || w2.len() != outputs * hidden
            || b2.len() != outputs
        {
            return Err(Error::GeometryMismatch("mlp decoder parameter sizes".into()));
        }
        Ok(Decoder::Mlp {
            inputs,
            hidden,
            outputs,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn inputs(&self) -> usize {
        match self {
            Decoder::Linear { inputs, .. } | Decoder::Mlp { inputs, .. } => *inputs,
        }
    }

    pub fn outputs(&self) -> usize {
        match self {
            Decoder::Linear { outputs, .. } | Decoder::Mlp { outputs, .. } => *outputs,
        }
    }

    /// Hidden width, 0 for the linear decoder.
    pub fn hidden(&self) -> usize {
        match self {
            Decoder::Linear { .. } => 0,
            Decoder::Mlp { hidden, .. } => *hidden,
        }
    }

    /// Parameter blocks in serialization order.
    pub fn blocks(&self) -> Vec<&[f64]> {
        match self {
            Decoder::Linear { weight, bias, .. } => vec![weight, bias],
            Decoder::Mlp { w1, b1, w2, b2, .. } => vec![w1, b1, w2, b2],
        }
    }

    fn blocks_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Decoder::Linear { weight, bias, .. } => vec![weight, bias],
            Decoder::Mlp { w1, b1, w2, b2, .. } => vec![w1, b1, w2, b2],
        }
    }

    fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    fn forward(&self, feat: &[f64], hidden_buf: &mut Vec<f64>, out: &mut [f64]) {
        match self {
            Decoder::Linear {
                inputs,
                weight,
                bias,
                ..
            } => {
                for (o, (row, b)) in out.iter_mut().zip(weight.chunks(*inputs).zip(bias)) {
                    *o = b + dot(row, feat);
                }
            }
            Decoder::Mlp {
                inputs,
                hidden,
                w1,
                b1,
                w2,
                b2,
                ..
            } => {
                hidden_buf.clear();
                hidden_buf.extend(
                    w1.chunks(*inputs)
                        .zip(b1)
                        .map(|(row, b)| (b + dot(row, feat)).tanh()),
                );
                for (o, (row, b)) in out.iter_mut().zip(w2.chunks(*hidden).zip(b2)) {
                    *o = b + dot(row, hidden_buf);
                }
            }
        }
    }

    /// Accumulates parameter gradients into `grad` (decoder layout) and
    /// writes the gradient with respect to the input features into `dfeat`.
    fn backward(&self, feat: &[f64], hidden_val: &[f64], dout: &[f64], grad: &mut [f64], dfeat: &mut [f64]) {
        dfeat.iter_mut().for_each(|v| *v = 0.0);
        match self {
            Decoder::Linear {
                inputs,
                outputs,
                weight,
                ..
            } => {
                let (gw, gb) = grad.split_at_mut(inputs * outputs);
                for (o, &g) in dout.iter().enumerate() {
                    let row = &weight[o * inputs..(o + 1) * inputs];
                    for i in 0..*inputs {
                        gw[o * inputs + i] += g * feat[i];
                        dfeat[i] += g * row[i];
                    }
                    gb[o] += g;
                }
            }
            Decoder::Mlp {
                inputs,
                hidden,
                outputs,
                w1,
                w2,
                ..
            } => {
                let (gw1, rest) = grad.split_at_mut(hidden * inputs);
                let (gb1, rest) = rest.split_at_mut(*hidden);
                let (gw2, gb2) = rest.split_at_mut(outputs * hidden);
                let mut dz = vec![0.0; *hidden];
                for (o, &g) in dout.iter().enumerate() {
                    for h in 0..*hidden {
                        gw2[o * hidden + h] += g * hidden_val[h];
                        dz[h] += g * w2[o * hidden + h];
                    }
                    gb2[o] += g;
                }
                for h in 0..*hidden {
                    let d = dz[h] * (1.0 - hidden_val[h] * hidden_val[h]);
                    for i in 0..*inputs {
                        gw1[h * inputs + i] += d * feat[i];
                        dfeat[i] += d * w1[h * inputs + i];
                    }
                    gb1[h] += d;
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderKind {
    Linear,
    Mlp { hidden: usize },
}

/// Shape of a freshly initialized field.
#[derive(Debug, Clone, PartialEq)]
pub struct KPlaneConfig {
    pub scales: usize,
    /// Spatial resolution of the finest scale; it halves per coarser scale.
    pub spatial_resolution: usize,
    pub temporal_resolution: usize,
    pub features: usize,
    pub outputs: usize,
    pub decoder: DecoderKind,
}

impl Default for KPlaneConfig {
    fn default() -> Self {
        Self {
            scales: 3,
            spatial_resolution: 32,
            temporal_resolution: 16,
            features: 8,
            outputs: 1,
            decoder: DecoderKind::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KPlaneField {
    scales: Vec<[FeaturePlane; 3]>,
    decoder: Decoder,
}

impl KPlaneField {
    pub fn new(scales: Vec<[FeaturePlane; 3]>, decoder: Decoder) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::InvalidInput("field needs at least one scale".into()));
        }
        let f = scales[0][0].features;
        for triple in &scales {
            for (plane, axes) in triple.iter().zip(PlaneAxes::ALL) {
                if plane.axes != axes {
                    return Err(Error::InvalidInput("planes must be ordered xy, xt, yt".into()));
                }
                if plane.features != f {
                    return Err(Error::InvalidInput("all planes need the same feature count".into()));
                }
            }
            let [xy, xt, yt] = triple;
            if xy.ra != xt.ra || xy.rb != yt.ra || xt.rb != yt.rb {
                return Err(Error::GeometryMismatch(
                    "planes of one scale disagree on shared axis resolutions".into(),
                ));
            }
        }
        if decoder.inputs() != f * scales.len() {
            return Err(Error::GeometryMismatch(format!(
                "decoder takes {} inputs, planes provide {}",
                decoder.inputs(),
                f * scales.len()
            )));
        }
        Ok(Self { scales, decoder })
    }

    /// Planes near 1 with small uniform noise; a zero start would leave the
    /// product with no gradient.
    pub fn init(config: &KPlaneConfig, seed: u64) -> Result<Self> {
        if config.scales == 0 || config.features == 0 || config.outputs == 0 {
            return Err(Error::InvalidInput("scales, features and outputs must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = config.features;
        let rt = config.temporal_resolution;
        let mut scales = Vec::with_capacity(config.scales);
        for s in 0..config.scales {
            let r = (config.spatial_resolution >> s).max(2);
            let mut plane = |axes, ra, rb| {
                let values = (0..ra * rb * f)
                    .map(|_| 1.0 + rng.random_range(-0.01..=0.01))
                    .collect();
                FeaturePlane::new(axes, ra, rb, f, values)
            };
            scales.push([
                plane(PlaneAxes::Xy, r, r)?,
                plane(PlaneAxes::Xt, r, rt)?,
                plane(PlaneAxes::Yt, r, rt)?,
            ]);
        }
        let inputs = f * config.scales;
        let decoder = match config.decoder {
            DecoderKind::Linear => Decoder::linear(
                inputs,
                config.outputs,
                vec![0.5 / inputs as f64; inputs * config.outputs],
                vec![0.0; config.outputs],
            )?,
            DecoderKind::Mlp { hidden } => {
                if hidden == 0 {
                    return Err(Error::InvalidInput("mlp decoder needs a hidden layer".into()));
                }
                let a1 = 1.0 / (inputs as f64).sqrt();
                let a2 = 1.0 / (hidden as f64).sqrt();
                let w1 = (0..hidden * inputs).map(|_| rng.random_range(-a1..=a1)).collect();
                let w2 = (0..config.outputs * hidden)
                    .map(|_| rng.random_range(-a2..=a2))
                    .collect();
                Decoder::mlp(
                    inputs,
                    hidden,
                    config.outputs,
                    (w1, vec![0.0; hidden]),
                    (w2, vec![0.5; config.outputs]),
                )?
            }
        };
        Self::new(scales, decoder)
    }

    pub fn scales(&self) -> &[[FeaturePlane; 3]] {
        &self.scales
    }

    pub fn scales_mut(&mut self) -> &mut [[FeaturePlane; 3]] {
        &mut self.scales
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn decoder_mut(&mut self) -> &mut Decoder {
        &mut self.decoder
    }

    pub fn features(&self) -> usize {
        self.scales[0][0].features
    }

    pub fn outputs(&self) -> usize {
        self.decoder.outputs()
    }

    /// Number of plane parameters; decoder parameters follow them in
    /// [`KPlaneField::parameters`].
    pub fn plane_param_count(&self) -> usize {
        self.scales
            .iter()
            .flat_map(|t| t.iter())
            .map(|p| p.values.len())
            .sum()
    }

    pub fn param_count(&self) -> usize {
        self.plane_param_count() + self.decoder.param_count()
    }

    /// All parameters flattened: planes (scale by scale, xy/xt/yt), then the
    /// decoder blocks.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in self.scales.iter().flat_map(|t| t.iter()) {
            out.extend_from_slice(&p.values);
        }
        for b in self.decoder.blocks() {
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::GeometryMismatch(format!(
                "{} parameters for a field with {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for p in self.scales.iter_mut().flat_map(|t| t.iter_mut()) {
            let n = p.values.len();
            p.values.copy_from_slice(&params[off..off + n]);
            off += n;
        }
        for b in self.decoder.blocks_mut() {
            let n = b.len();
            b.copy_from_slice(&params[off..off + n]);
            off += n;
        }
        Ok(())
    }

    fn fused_features(&self, q: [f64; 3], feat: &mut [f64]) {
        let f = self.features();
        for (s, triple) in self.scales.iter().enumerate() {
            let out = &mut feat[s * f..(s + 1) * f];
            out.iter_mut().for_each(|v| *v = 1.0);
            for plane in triple {
                let (a, b) = plane.axes.project(q);
                let mut sampled = [0.0; 64];
                let buf: &mut [f64] = if f <= 64 { &mut sampled[..f] } else { &mut vec![0.0; f] };
                for (off, w) in plane.corners(a, b) {
                    for (o, v) in buf.iter_mut().zip(&plane.values[off..off + f]) {
                        *o += w * v;
                    }
                }
                for (o, v) in out.iter_mut().zip(buf.iter()) {
                    *o *= v;
                }
            }
        }
    }

    /// Decoded value at `q = (x, y, tau)` in the unit cube.
    pub fn query(&self, q: [f64; 3]) -> Result<Vec<f64>> {
        check_query(q)?;
        let mut feat = vec![0.0; self.decoder.inputs()];
        self.fused_features(q, &mut feat);
        let mut out = vec![0.0; self.outputs()];
        self.decoder.forward(&feat, &mut Vec::new(), &mut out);
        Ok(out)
    }

    /// Queries every pixel center `((i + 0.5) / W, (j + 0.5) / H, tau)`.
    pub fn render_frame(&self, tau: f64, width: usize, height: usize) -> Result<Grid> {
        check_query([0.5, 0.5, tau])?;
        let c = self.outputs();
        let rows: Vec<Vec<f64>> = (0..height)
            .into_par_iter()
            .map(|y| {
                let mut feat = vec![0.0; self.decoder.inputs()];
                let mut hidden = Vec::new();
                let mut row = vec![0.0; width * c];
                for x in 0..width {
                    let q = pixel_query(x, y, width, height, tau);
                    self.fused_features(q, &mut feat);
                    self.decoder
                        .forward(&feat, &mut hidden, &mut row[x * c..(x + 1) * c]);
                }
                row
            })
            .collect();
        Grid::new(width, height, c, rows.concat())
    }
}

#[inline]
fn pixel_query(x: usize, y: usize, width: usize, height: usize, tau: f64) -> [f64; 3] {
    [
        (x as f64 + 0.5) / width as f64,
        (y as f64 + 0.5) / height as f64,
        tau,
    ]
}

fn check_query(q: [f64; 3]) -> Result<()> {
    if q.iter().all(|v| (0.0..=1.0).contains(v)) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "query ({}, {}, {}) lies outside the unit cube",
            q[0], q[1], q[2]
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FitLoss {
    L2,
    /// Charbonnier with exponent 1/2, a smoothed L1.
    SmoothL1 { eps: f64 },
}

impl FitLoss {
    #[inline]
    fn value(self, r: f64) -> f64 {
        match self {
            FitLoss::L2 => r * r,
            FitLoss::SmoothL1 { eps } => Charbonnier { eps, beta: 0.5 }.value(r),
        }
    }

    #[inline]
    fn derivative(self, r: f64) -> f64 {
        match self {
            FitLoss::L2 => 2.0 * r,
            FitLoss::SmoothL1 { eps } => Charbonnier { eps, beta: 0.5 }.derivative(r),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub loss: FitLoss,
    pub steps: usize,
    pub plane_step: f64,
    pub decoder_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            loss: FitLoss::L2,
            steps: 500,
            plane_step: 1e-2,
            decoder_step: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Loss before each step, then the loss of the returned parameters.
    pub trace: Vec<f64>,
    /// Set when descent ended above the starting loss and the starting
    /// parameters were restored.
    pub restored_initial: bool,
}

impl FitReport {
    pub fn initial_loss(&self) -> f64 {
        self.trace[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.trace.last().unwrap()
    }
}

/// Samples of a target clip: pixel-center queries and their values.
struct FitTarget<'a> {
    frames: &'a [Frame],
    taus: Vec<f64>,
    width: usize,
    height: usize,
}

impl<'a> FitTarget<'a> {
    fn new(field: &KPlaneField, target: &'a FrameSequence) -> Result<Self> {
        if target.frames()[0].channels() != field.outputs() {
            return Err(Error::GeometryMismatch(format!(
                "target has {} channels, field decodes {}",
                target.frames()[0].channels(),
                field.outputs()
            )));
        }
        let times = target.times();
        let (t0, t1) = (times[0], *times.last().unwrap());
        let taus = times
            .iter()
            .map(|&t| if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 })
            .collect();
        Ok(Self {
            frames: target.frames(),
            taus,
            width: target.width(),
            height: target.height(),
        })
    }

    fn count(&self) -> usize {
        self.frames.len() * self.width * self.height * self.frames[0].channels()
    }
}

/// Mean loss over all target samples and, if `grad` is given, its gradient
/// in [`KPlaneField::parameters`] order.
///
/// Work is split per frame and reduced in frame order, so results do not
/// depend on the thread count.
fn loss_and_gradient(
    field: &KPlaneField,
    target: &FitTarget,
    loss: FitLoss,
    want_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    let n_params = field.param_count();
    let n_plane = field.plane_param_count();
    let partials: Vec<(f64, Option<Vec<f64>>)> = target
        .frames
        .par_iter()
        .zip(target.taus.par_iter())
        .map(|(frame, &tau)| {
            let mut grad = want_grad.then(|| vec![0.0; n_params]);
            let mut total = 0.0;
            let f = field.features();
            let c = field.outputs();
            let inputs = field.decoder.inputs();
            let mut feat = vec![0.0; inputs];
            let mut dfeat = vec![0.0; inputs];
            let mut hidden = Vec::new();
            let mut out = vec![0.0; c];
            let mut dout = vec![0.0; c];
            let mut samples = vec![vec![0.0; f]; 3];
            for y in 0..target.height {
                for x in 0..target.width {
                    let q = pixel_query(x, y, target.width, target.height, tau);
                    field.fused_features(q, &mut feat);
                    field.decoder.forward(&feat, &mut hidden, &mut out);
                    for ch in 0..c {
                        let r = out[ch] - frame.get(x, y, ch);
                        total += loss.value(r);
                        dout[ch] = loss.derivative(r);
                    }
                    let Some(g) = grad.as_mut() else { continue };
                    let (gp, gd) = g.split_at_mut(n_plane);
                    field.decoder.backward(&feat, &hidden, &dout, gd, &mut dfeat);
                    let mut base = 0;
                    for (s, triple) in field.scales.iter().enumerate() {
                        for (k, plane) in triple.iter().enumerate() {
                            let (a, b) = plane.axes.project(q);
                            let sk = &mut samples[k];
                            sk.iter_mut().for_each(|v| *v = 0.0);
                            for (off, w) in plane.corners(a, b) {
                                for (o, v) in sk.iter_mut().zip(&plane.values[off..off + f]) {
                                    *o += w * v;
                                }
                            }
                        }
                        for (k, plane) in triple.iter().enumerate() {
                            let (a, b) = plane.axes.project(q);
                            let (o1, o2) = ((k + 1) % 3, (k + 2) % 3);
                            for (off, w) in plane.corners(a, b) {
                                for ch in 0..f {
                                    let d = dfeat[s * f + ch] * samples[o1][ch] * samples[o2][ch];
                                    gp[base + off + ch] += w * d;
                                }
                            }
                            base += plane.values.len();
                        }
                    }
                }
            }
            (total, grad)
        })
        .collect();

    let scale = 1.0 / target.count() as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; n_params]);
    for (t, g) in partials {
        total += t;
        if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
    }
    if let Some(g) = grad.as_mut() {
        g.iter_mut().for_each(|v| *v *= scale);
    }
    (total * scale, grad)
}

/// Mean loss of `field` against `target`.
pub fn fit_loss(field: &KPlaneField, target: &FrameSequence, loss: FitLoss) -> Result<f64> {
    let t = FitTarget::new(field, target)?;
    Ok(loss_and_gradient(field, &t, loss, false).0)
}

/// Mean loss and its gradient in [`KPlaneField::parameters`] order.
pub fn fit_gradient(field: &KPlaneField, target: &FrameSequence, loss: FitLoss) -> Result<(f64, Vec<f64>)> {
    let t = FitTarget::new(field, target)?;
    let (l, g) = loss_and_gradient(field, &t, loss, true);
    Ok((l, g.unwrap()))
}

/// Fits `field` to the target clip by plain gradient descent. Frame `j` is
/// sampled at `tau = (t_j - t_first) / (t_last - t_first)`.
pub fn fit(field: &mut KPlaneField, target: &FrameSequence, options: &FitOptions) -> Result<FitReport> {
    if options.steps == 0 {
        return Err(Error::InvalidInput("fitting needs at least one step".into()));
    }
    let t = FitTarget::new(field, target)?;
    let n_plane = field.plane_param_count();
    let initial = field.parameters();
    let mut params = initial.clone();
    let mut trace = Vec::with_capacity(options.steps + 1);
    for step in 0..options.steps {
        let (loss, grad) = loss_and_gradient(field, &t, options.loss, true);
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                step,
                what: "fitting loss".into(),
            });
        }
        trace.push(loss);
        for (i, (p, g)) in params.iter_mut().zip(grad.unwrap()).enumerate() {
            let lr = if i < n_plane {
                options.plane_step
            } else {
                options.decoder_step
            };
            *p -= lr * g;
        }
        field.set_parameters(&params)?;
    }
    let final_loss = loss_and_gradient(field, &t, options.loss, false).0;
    if !final_loss.is_finite() {
        return Err(Error::NonFinite {
            step: options.steps,
            what: "fitting loss".into(),
        });
    }
    let restored_initial = final_loss > trace[0];
    if restored_initial {
        field.set_parameters(&initial)?;
        trace.push(trace[0]);
    } else {
        trace.push(final_loss);
    }
    Ok(FitReport {
        trace,
        restored_initial,
    })
}
