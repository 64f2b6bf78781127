//! Single frame plus events to frames at arbitrary times.
//!
//! [`Decompressor::prepare`] does the expensive work once: latent frames at
//! anchor times, latent flow by correlation, and the trajectory fit. Each
//! [`Decompressor::query`] then only splats, synthesizes and fuses.

use std::time::Instant;

use rayon::prelude::*;

use crate::config::KeyValues;
use crate::corr::{argmax_search, extract_features, iterative_refine, FeaturePyramid, DEFAULT_BETA};
use crate::error::{Error, Result};
use crate::events::{ContrastThresholds, EventStream, DEFAULT_LOG_EPS};
use crate::grid::{border_mask, FlowField, Frame, FrameSequence, Grid};
use crate::integrate::{
    direct_integration, estimate_contrast, interpolated_frames, luminance_frame, transfer_luminance,
    ThresholdEstimate,
};
use crate::kplane::{fit, DecoderKind, FitLoss, FitOptions, KPlaneConfig, KPlaneField};
use crate::metrics::{psnr, ssim, MetricsReport, SsimParams};
use crate::trajectory::{fit_coefficients, MotionBasis, TrajectoryField, DEFAULT_BASIS_COUNT};
use crate::voxel::{build_volume, EventVolume, DEFAULT_BINS};
use crate::warp::{build_pyramid, gradient_features, sample_bilinear, splat_pyramid, Pyramid, DEFAULT_DEN_EPS};

pub const DEFAULT_ANCHORS: usize = 8;
pub const DEFAULT_PYRAMID_LEVELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdSetting {
    Fixed(ContrastThresholds),
    /// Calibrate from frame pairs when given, else fall back to the default.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Polynomial,
    Cosine,
}

impl BasisKind {
    pub fn build(self, k: usize) -> Result<MotionBasis> {
        match self {
            BasisKind::Polynomial => MotionBasis::polynomial(k),
            BasisKind::Cosine => MotionBasis::cosine(k),
        }
    }

    fn name(self) -> &'static str {
        match self {
            BasisKind::Polynomial => "polynomial",
            BasisKind::Cosine => "cosine",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthesisMode {
    Integration,
    KPlaneFit,
}

impl SynthesisMode {
    fn name(self) -> &'static str {
        match self {
            SynthesisMode::Integration => "integration",
            SynthesisMode::KPlaneFit => "kplane_fit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    /// Coverage at which warp and synthesis weigh equally.
    pub c0: f64,
    pub sharpness: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            c0: 0.5,
            sharpness: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompressionConfig {
    pub thresholds: ThresholdSetting,
    pub log_eps: f64,
    pub voxel_bins: usize,
    pub basis: BasisKind,
    pub basis_count: usize,
    pub anchors: usize,
    pub pyramid_levels: usize,
    pub synthesis: SynthesisMode,
    pub fusion: FusionParams,
    pub query_times: Vec<f64>,
    /// Descriptor patch radius for matching.
    pub patch_radius: usize,
    /// Per-axis search radius of the argmax seed, around the previous anchor.
    pub max_disp: usize,
    pub refine_steps: usize,
    pub lookup_radius: usize,
    pub beta: f64,
    /// Gradient magnitude below which a pixel's match is not trusted.
    pub min_texture: f64,
    /// Scale of the local affine smoothing of latent flow; 0 disables it.
    pub flow_smoothing: f64,
    pub den_eps: f64,
    pub kplane: KPlaneConfig,
    pub kplane_fit: FitOptions,
    pub kplane_seed: u64,
    /// Run every parallel stage on one thread.
    pub sequential: bool,
}

impl Default for DecompressionConfig {
    fn default() -> Self {
        Self {
            thresholds: ThresholdSetting::Fixed(ContrastThresholds::default()),
            log_eps: DEFAULT_LOG_EPS,
            voxel_bins: DEFAULT_BINS,
            basis: BasisKind::Polynomial,
            basis_count: DEFAULT_BASIS_COUNT,
            anchors: DEFAULT_ANCHORS,
            pyramid_levels: DEFAULT_PYRAMID_LEVELS,
            synthesis: SynthesisMode::Integration,
            fusion: FusionParams::default(),
            query_times: Vec::new(),
            patch_radius: 5,
            max_disp: 3,
            refine_steps: 4,
            lookup_radius: 2,
            beta: DEFAULT_BETA,
            min_texture: 0.02,
            flow_smoothing: 5.0,
            den_eps: DEFAULT_DEN_EPS,
            kplane: KPlaneConfig {
                scales: 2,
                spatial_resolution: 16,
                temporal_resolution: DEFAULT_ANCHORS + 1,
                features: 2,
                outputs: 1,
                decoder: DecoderKind::Linear,
            },
            kplane_fit: FitOptions {
                loss: FitLoss::L2,
                steps: 300,
                plane_step: 20.0,
                decoder_step: 0.5,
            },
            kplane_seed: 0,
            sequential: false,
        }
    }
}

const CONFIG_KEYS: &[&str] = &[
    "thresholds",
    "c_pos",
    "c_neg",
    "log_eps",
    "voxel_bins",
    "basis",
    "basis_count",
    "anchors",
    "pyramid_levels",
    "synthesis",
    "c0",
    "sharpness",
    "times",
    "patch_radius",
    "max_disp",
    "refine_steps",
    "lookup_radius",
    "beta",
    "min_texture",
    "flow_smoothing",
    "kplane_scales",
    "kplane_resolution",
    "kplane_features",
    "kplane_steps",
    "kplane_seed",
    "seq",
];

impl DecompressionConfig {
    /// Reads the keys this config understands; absent keys keep defaults.
    pub fn from_config(kv: &KeyValues) -> Result<Self> {
        kv.check_known(CONFIG_KEYS)?;
        let d = Self::default();
        let thresholds = match kv.get_str("thresholds") {
            None | Some("fixed") => ThresholdSetting::Fixed(ContrastThresholds::new(
                kv.get_or("c_pos", 0.2)?,
                kv.get_or("c_neg", 0.2)?,
            )?),
            Some("auto") => ThresholdSetting::Auto,
            Some(other) => {
                return Err(Error::InvalidInput(format!("thresholds must be fixed or auto, got {other:?}")))
            }
        };
        let basis = match kv.get_str("basis").unwrap_or("polynomial") {
            "polynomial" => BasisKind::Polynomial,
            "cosine" => BasisKind::Cosine,
            other => return Err(Error::InvalidInput(format!("unknown basis {other:?}"))),
        };
        let synthesis = match kv.get_str("synthesis").unwrap_or("integration") {
            "integration" => SynthesisMode::Integration,
            "kplane_fit" => SynthesisMode::KPlaneFit,
            other => return Err(Error::InvalidInput(format!("unknown synthesis mode {other:?}"))),
        };
        let anchors = kv.get_or("anchors", d.anchors)?;
        let cfg = Self {
            thresholds,
            log_eps: kv.get_or("log_eps", d.log_eps)?,
            voxel_bins: kv.get_or("voxel_bins", d.voxel_bins)?,
            basis,
            basis_count: kv.get_or("basis_count", d.basis_count)?,
            anchors,
            pyramid_levels: kv.get_or("pyramid_levels", d.pyramid_levels)?,
            synthesis,
            fusion: FusionParams {
                c0: kv.get_or("c0", d.fusion.c0)?,
                sharpness: kv.get_or("sharpness", d.fusion.sharpness)?,
            },
            query_times: kv.get_list("times")?.unwrap_or_default(),
            patch_radius: kv.get_or("patch_radius", d.patch_radius)?,
            max_disp: kv.get_or("max_disp", d.max_disp)?,
            refine_steps: kv.get_or("refine_steps", d.refine_steps)?,
            lookup_radius: kv.get_or("lookup_radius", d.lookup_radius)?,
            beta: kv.get_or("beta", d.beta)?,
            min_texture: kv.get_or("min_texture", d.min_texture)?,
            flow_smoothing: kv.get_or("flow_smoothing", d.flow_smoothing)?,
            den_eps: d.den_eps,
            kplane: KPlaneConfig {
                scales: kv.get_or("kplane_scales", d.kplane.scales)?,
                spatial_resolution: kv.get_or("kplane_resolution", d.kplane.spatial_resolution)?,
                temporal_resolution: anchors + 1,
                features: kv.get_or("kplane_features", d.kplane.features)?,
                ..d.kplane
            },
            kplane_fit: FitOptions {
                steps: kv.get_or("kplane_steps", d.kplane_fit.steps)?,
                ..d.kplane_fit
            },
            kplane_seed: kv.get_or("kplane_seed", d.kplane_seed)?,
            sequential: kv.get_or("seq", d.sequential)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_config(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        match self.thresholds {
            ThresholdSetting::Fixed(c) => {
                kv.insert("thresholds", "fixed");
                kv.insert("c_pos", c.c_pos);
                kv.insert("c_neg", c.c_neg);
            }
            ThresholdSetting::Auto => kv.insert("thresholds", "auto"),
        }
        kv.insert("log_eps", self.log_eps);
        kv.insert("voxel_bins", self.voxel_bins);
        kv.insert("basis", self.basis.name());
        kv.insert("basis_count", self.basis_count);
        kv.insert("anchors", self.anchors);
        kv.insert("pyramid_levels", self.pyramid_levels);
        kv.insert("synthesis", self.synthesis.name());
        kv.insert("c0", self.fusion.c0);
        kv.insert("sharpness", self.fusion.sharpness);
        if !self.query_times.is_empty() {
            let times: Vec<String> = self.query_times.iter().map(f64::to_string).collect();
            kv.insert("times", times.join(","));
        }
        kv.insert("patch_radius", self.patch_radius);
        kv.insert("max_disp", self.max_disp);
        kv.insert("refine_steps", self.refine_steps);
        kv.insert("lookup_radius", self.lookup_radius);
        kv.insert("beta", self.beta);
        kv.insert("min_texture", self.min_texture);
        kv.insert("flow_smoothing", self.flow_smoothing);
        kv.insert("kplane_scales", self.kplane.scales);
        kv.insert("kplane_resolution", self.kplane.spatial_resolution);
        kv.insert("kplane_features", self.kplane.features);
        kv.insert("kplane_steps", self.kplane_fit.steps);
        kv.insert("kplane_seed", self.kplane_seed);
        kv.insert("seq", self.sequential);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(what.to_string()));
        if self.anchors == 0 {
            return bad("anchors must be positive");
        }
        if self.basis_count == 0 {
            return bad("basis_count must be positive");
        }
        if self.pyramid_levels == 0 {
            return bad("pyramid_levels must be positive");
        }
        if self.voxel_bins == 0 {
            return bad("voxel_bins must be positive");
        }
        if !(self.log_eps > 0.0 && self.log_eps.is_finite()) {
            return bad("log_eps must be positive");
        }
        if !(self.fusion.sharpness > 0.0 && self.fusion.sharpness.is_finite() && self.fusion.c0.is_finite()) {
            return bad("fusion parameters must be finite with positive sharpness");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if !(self.flow_smoothing >= 0.0 && self.flow_smoothing.is_finite()) {
            return bad("flow_smoothing must be non-negative");
        }
        if self.query_times.iter().any(|t| !t.is_finite()) {
            return bad("non-finite query time");
        }
        Ok(())
    }
}

/// Blends the warp and synthesis paths.
///
/// Per pixel `w = sigmoid(sharpness * (coverage - c0))`, zero where coverage
/// is zero, and `out = (w warp + (1 - w) s synth) / (w + (1 - w) s)` with
/// `s = synth_confidence`. With `s = 1` this is `w warp + (1 - w) synth`.
pub fn fuse(
    warp: &Grid,
    coverage: &[f64],
    synth: &Grid,
    synth_confidence: &[f64],
    params: FusionParams,
) -> Result<Grid> {
    if !warp.same_shape(synth) {
        return Err(Error::GeometryMismatch(format!(
            "warp {}x{}x{} vs synthesis {}x{}x{}",
            warp.width(),
            warp.height(),
            warp.channels(),
            synth.width(),
            synth.height(),
            synth.channels()
        )));
    }
    let n = warp.len_pixels();
    if coverage.len() != n || synth_confidence.len() != n {
        return Err(Error::GeometryMismatch(format!(
            "{} coverage and {} confidence values for {n} pixels",
            coverage.len(),
            synth_confidence.len()
        )));
    }
    if coverage.iter().any(|c| !(c.is_finite() && *c >= 0.0))
        || synth_confidence.iter().any(|s| !(s.is_finite() && *s >= 0.0))
    {
        return Err(Error::InvalidInput("coverage and confidence must be finite and non-negative".into()));
    }
    let ch = warp.channels();
    let mut out = synth.clone();
    for (i, (&cov, &s)) in coverage.iter().zip(synth_confidence).enumerate() {
        if cov == 0.0 {
            continue;
        }
        let w = 1.0 / (1.0 + (-params.sharpness * (cov - params.c0)).exp());
        let we = w / (w + (1.0 - w) * s);
        for c in 0..ch {
            let k = i * ch + c;
            out.data_mut()[k] = we * warp.data()[k] + (1.0 - we) * synth.data()[k];
        }
    }
    Ok(out)
}

/// Splat weight per pixel: gradient magnitude of the luminance over its maximum.
pub fn texture_confidence(image: &Grid) -> Vec<f64> {
    let mag = gradient_magnitude(image);
    let max = mag.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return vec![0.0; mag.len()];
    }
    mag.iter().map(|m| m / max).collect()
}

fn gradient_magnitude(image: &Grid) -> Vec<f64> {
    let g = gradient_features(&image.luminance());
    (0..image.len_pixels())
        .map(|i| g.data()[i * 3 + 1].hypot(g.data()[i * 3 + 2]))
        .collect()
}

/// Pixels at least `border` away from the edge whose gradient magnitude in
/// `image` reaches `min_texture`.
pub fn valid_mask(image: &Grid, border: usize, min_texture: f64) -> Vec<bool> {
    let mag = gradient_magnitude(image);
    border_mask(image.width(), image.height(), border)
        .into_iter()
        .zip(mag)
        .map(|(b, m)| b && m >= min_texture)
        .collect()
}

/// Replaces invalid vectors by growing the valid region one ring at a time
/// (mean of already known 4-neighbours), then smooths the filled pixels.
pub fn fill_invalid(flow: &FlowField, valid: &[bool]) -> FlowField {
    let (w, h) = (flow.width(), flow.height());
    if valid.iter().all(|&v| v) || !valid.iter().any(|&v| v) {
        return flow.clone();
    }
    let mut u = flow.u().to_vec();
    let mut v = flow.v().to_vec();
    let mut known = valid.to_vec();
    let neighbours = |i: usize| {
        let (x, y) = (i % w, i / w);
        let mut n = [None; 4];
        if x > 0 {
            n[0] = Some(i - 1);
        }
        if x + 1 < w {
            n[1] = Some(i + 1);
        }
        if y > 0 {
            n[2] = Some(i - w);
        }
        if y + 1 < h {
            n[3] = Some(i + w);
        }
        n
    };
    loop {
        let mut ring = Vec::new();
        for i in 0..w * h {
            if known[i] {
                continue;
            }
            let (mut su, mut sv, mut cnt) = (0.0, 0.0, 0.0);
            for j in neighbours(i).into_iter().flatten() {
                if known[j] {
                    su += u[j];
                    sv += v[j];
                    cnt += 1.0;
                }
            }
            if cnt > 0.0 {
                ring.push((i, su / cnt, sv / cnt));
            }
        }
        if ring.is_empty() {
            break;
        }
        for (i, a, b) in ring {
            u[i] = a;
            v[i] = b;
            known[i] = true;
        }
    }
    for _ in 0..20 {
        let (pu, pv) = (u.clone(), v.clone());
        for i in 0..w * h {
            if valid[i] {
                continue;
            }
            let (mut su, mut sv, mut cnt) = (0.0, 0.0, 0.0);
            for j in neighbours(i).into_iter().flatten() {
                su += pu[j];
                sv += pv[j];
                cnt += 1.0;
            }
            u[i] = su / cnt;
            v[i] = sv / cnt;
        }
    }
    FlowField::from_parts(w, h, u, v).expect("sizes unchanged")
}

/// Replaces each vector by a weighted least-squares affine fit of the flow in
/// a Gaussian window of scale `sigma`, evaluated at the pixel.
///
/// Affine flows are reproduced exactly wherever the fit is determined. A
/// small ridge on the slope terms keeps windows whose weights sit on a line
/// well posed. Pixels whose window carries no weight keep their vector and
/// come back `false` in the returned mask.
pub fn affine_smooth(flow: &FlowField, weights: &[f64], sigma: f64) -> Result<(FlowField, Vec<bool>)> {
    let (w, h) = (flow.width(), flow.height());
    if weights.len() != w * h {
        return Err(Error::GeometryMismatch(format!("{} weights for {w}x{h} flow", weights.len())));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("smoothing scale must be positive, got {sigma}")));
    }
    let r = (2.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let fitted: Vec<Option<(f64, f64)>> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            let mut m = [[0.0; 3]; 3];
            let (mut bu, mut bv) = ([0.0; 3], [0.0; 3]);
            for dy in -r..=r {
                let ny = y + dy;
                if ny < 0 || ny >= h as isize {
                    continue;
                }
                for dx in -r..=r {
                    let nx = x + dx;
                    if nx < 0 || nx >= w as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    let wt = weights[j] * kernel[(dx + r) as usize] * kernel[(dy + r) as usize];
                    if wt == 0.0 {
                        continue;
                    }
                    let phi = [1.0, dx as f64, dy as f64];
                    let (u, v) = (flow.u()[j], flow.v()[j]);
                    for a in 0..3 {
                        for b in 0..3 {
                            m[a][b] += wt * phi[a] * phi[b];
                        }
                        bu[a] += wt * phi[a] * u;
                        bv[a] += wt * phi[a] * v;
                    }
                }
            }
            if m[0][0] <= 0.0 {
                return None;
            }
            let ridge = 1e-3 * m[0][0];
            m[1][1] += ridge;
            m[2][2] += ridge;
            let m = nalgebra::Matrix3::from_fn(|a, b| m[a][b]);
            let lu = m.lu();
            let u = lu.solve(&nalgebra::Vector3::from(bu))?;
            let v = lu.solve(&nalgebra::Vector3::from(bv))?;
            Some((u[0], v[0]))
        })
        .collect();
    let mut out = flow.clone();
    let mut valid = vec![false; w * h];
    for (i, f) in fitted.into_iter().enumerate() {
        if let Some((u, v)) = f {
            out.set(i % w, i / w, u, v);
            valid[i] = true;
        }
    }
    Ok((out, valid))
}

/// One decoded time.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedFrame {
    pub time: f64,
    pub fused: Frame,
    pub warped: Frame,
    pub synthesized: Frame,
    /// Trajectory-field displacement from the initial frame.
    pub flow: FlowField,
    /// Latent flow interpolated linearly between anchors.
    pub latent_flow: FlowField,
    pub coverage: Vec<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimingStats {
    pub prepare_seconds: f64,
    pub query_seconds: Vec<f64>,
}

impl TimingStats {
    pub fn total_query_seconds(&self) -> f64 {
        self.query_seconds.iter().sum()
    }

    pub fn mean_query_seconds(&self) -> f64 {
        if self.query_seconds.is_empty() {
            0.0
        } else {
            self.total_query_seconds() / self.query_seconds.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompressionResult {
    pub frames: Vec<DecodedFrame>,
    pub thresholds: ContrastThresholds,
    pub calibration: Option<ThresholdEstimate>,
    pub anchor_times: Vec<f64>,
    pub trajectory: TrajectoryField,
    pub timing: TimingStats,
    pub warnings: Vec<String>,
}

/// Fitted state that answers queries at any time in the stream span.
#[derive(Debug, Clone)]
pub struct Decompressor {
    config: DecompressionConfig,
    initial: Frame,
    stream: EventStream,
    thresholds: ContrastThresholds,
    calibration: Option<ThresholdEstimate>,
    anchor_times: Vec<f64>,
    latent_flows: Vec<FlowField>,
    trajectory: TrajectoryField,
    pyramid: Pyramid,
    splat_z: Vec<f64>,
    volume: EventVolume,
    kplane: Option<KPlaneField>,
    warnings: Vec<String>,
    prepare_seconds: f64,
}

fn run_maybe_sequential<T: Send>(sequential: bool, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if sequential {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::InvalidInput(format!("cannot build thread pool: {e}")))?;
        pool.install(f)
    } else {
        f()
    }
}

impl Decompressor {
    pub fn prepare(initial: &Frame, stream: &EventStream, config: &DecompressionConfig) -> Result<Self> {
        Self::prepare_with_calibration(initial, stream, config, &[])
    }

    /// Like [`Decompressor::prepare`]; with `ThresholdSetting::Auto` the
    /// `calibration` pairs (grayscale, same geometry) set the thresholds.
    pub fn prepare_with_calibration(
        initial: &Frame,
        stream: &EventStream,
        config: &DecompressionConfig,
        calibration: &[(Frame, Frame)],
    ) -> Result<Self> {
        config.validate()?;
        run_maybe_sequential(config.sequential, || {
            Self::prepare_inner(initial, stream, config, calibration)
        })
    }

    fn prepare_inner(
        initial: &Frame,
        stream: &EventStream,
        config: &DecompressionConfig,
        calibration: &[(Frame, Frame)],
    ) -> Result<Self> {
        let start = Instant::now();
        if initial.width() != stream.width() || initial.height() != stream.height() {
            return Err(Error::GeometryMismatch(format!(
                "initial frame is {}x{}, events are {}x{}",
                initial.width(),
                initial.height(),
                stream.width(),
                stream.height()
            )));
        }
        let (t0, t1) = (stream.t_begin(), stream.t_end());
        if initial.timestamp() != t0 {
            return Err(Error::InvalidInput(format!(
                "initial frame at {} but the stream begins at {t0}",
                initial.timestamp()
            )));
        }
        if !(t1 > t0) {
            return Err(Error::InvalidWindow { t0, t1 });
        }
        let mut warnings = Vec::new();
        if config.anchors < config.basis_count {
            warnings.push(format!(
                "{} anchors for {} basis functions; the trajectory fit is underdetermined",
                config.anchors, config.basis_count
            ));
        }

        let (thresholds, estimate) = match config.thresholds {
            ThresholdSetting::Fixed(c) => (c, None),
            ThresholdSetting::Auto if !calibration.is_empty() => {
                let e = estimate_contrast(calibration, stream, config.log_eps)?;
                (e.thresholds, Some(e))
            }
            ThresholdSetting::Auto => {
                warnings.push("no calibration frames; using thresholds 0.2/0.2".into());
                (ContrastThresholds::default(), None)
            }
        };

        let luma = luminance_frame(initial)?;
        // interval midpoints, so every anchor has later events to interpolate to
        let anchor_times: Vec<f64> = (0..config.anchors)
            .map(|a| t0 + (t1 - t0) * (a as f64 + 0.5) / config.anchors as f64)
            .collect();
        let latents = interpolated_frames(&luma, stream, &anchor_times, thresholds, config.log_eps)?;

        let source = extract_features(luma.grid(), config.patch_radius)?;
        let texture = valid_mask(luma.grid(), 0, config.min_texture);
        let strength: Vec<f64> = gradient_magnitude(luma.grid()).iter().map(|g| g * g).collect();
        let (w, h) = (initial.width(), initial.height());
        let mut latent_flows = Vec::with_capacity(config.anchors);
        let mut prev = FlowField::zeros(w, h);
        for latent in latents.frames() {
            let target = extract_features(latent.grid(), config.patch_radius)?;
            let levels = config.pyramid_levels.min(max_levels(w, h));
            let lookup = FeaturePyramid::new(source.clone(), target, levels)?;
            let seed = argmax_search(&lookup, Some(&prev), config.max_disp);
            let mut init = seed.flow.clone();
            for y in 0..h {
                for x in 0..w {
                    if !seed.valid[y * w + x] {
                        let (u, v) = prev.get(x, y);
                        init.set(x, y, u, v);
                    }
                }
            }
            let refined = iterative_refine(&init, &lookup, config.refine_steps, config.lookup_radius, config.beta)?;
            let trusted: Vec<bool> = seed.valid.iter().zip(&texture).map(|(a, b)| *a && *b).collect();
            let flow = if config.flow_smoothing > 0.0 {
                let weights: Vec<f64> = trusted.iter().zip(&strength).map(|(t, s)| if *t { *s } else { 0.0 }).collect();
                let (smoothed, covered) = affine_smooth(&refined.flow, &weights, config.flow_smoothing)?;
                fill_invalid(&smoothed, &covered)
            } else {
                fill_invalid(&refined.flow, &trusted)
            };
            prev = flow.clone();
            latent_flows.push(flow);
        }

        let basis = config.basis.build(config.basis_count)?;
        let trajectory = fit_coefficients(&basis, t0, t1, &anchor_times, &latent_flows)?.field;

        let pyramid = build_pyramid(initial.grid(), config.pyramid_levels.min(max_levels(w, h)))?;
        let splat_z = texture_confidence(initial.grid());
        let volume = build_volume(stream, t0, t1, config.voxel_bins, true)?;

        let kplane = match config.synthesis {
            SynthesisMode::Integration => None,
            SynthesisMode::KPlaneFit => {
                let mut frames = vec![luma.clone()];
                frames.extend(latents.into_frames());
                let target = FrameSequence::new(frames)?;
                let mut field = KPlaneField::init(&config.kplane, config.kplane_seed)?;
                fit(&mut field, &target, &config.kplane_fit)?;
                Some(field)
            }
        };

        Ok(Self {
            config: config.clone(),
            initial: initial.clone(),
            stream: stream.clone(),
            thresholds,
            calibration: estimate,
            anchor_times,
            latent_flows,
            trajectory,
            pyramid,
            splat_z,
            volume,
            kplane,
            warnings,
            prepare_seconds: start.elapsed().as_secs_f64(),
        })
    }

    pub fn thresholds(&self) -> ContrastThresholds {
        self.thresholds
    }

    pub fn trajectory(&self) -> &TrajectoryField {
        &self.trajectory
    }

    pub fn anchor_times(&self) -> &[f64] {
        &self.anchor_times
    }

    pub fn latent_flows(&self) -> &[FlowField] {
        &self.latent_flows
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn prepare_seconds(&self) -> f64 {
        self.prepare_seconds
    }

    /// Latent flow at `t`, linear between anchors and zero at the stream start.
    pub fn latent_flow_at(&self, t: f64) -> Result<FlowField> {
        let t0 = self.stream.t_begin();
        self.check_time(t)?;
        let (w, h) = (self.initial.width(), self.initial.height());
        let zero = FlowField::zeros(w, h);
        let mut prev_t = t0;
        let mut prev = &zero;
        for (ta, fa) in self.anchor_times.iter().zip(&self.latent_flows) {
            if t <= *ta {
                let s = (t - prev_t) / (ta - prev_t);
                return prev.combine(1.0 - s, fa, s);
            }
            prev_t = *ta;
            prev = fa;
        }
        Ok(prev.clone())
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let (t0, t1) = (self.stream.t_begin(), self.stream.t_end());
        if !(t >= t0 && t <= t1) {
            return Err(Error::OutOfSpan { t, begin: t0, end: t1 });
        }
        Ok(())
    }

    /// Per-pixel confidence of the synthesis path: `1 / (1 + c n)` with `n`
    /// the events in voxel bins that start before `t` and `c` the larger threshold.
    fn synth_confidence(&self, t: f64) -> Vec<f64> {
        let v = &self.volume;
        let (w, h, bins) = (v.width(), v.height(), v.bins());
        let (t0, t1) = v.window();
        let dt = (t1 - t0) / bins as f64;
        let last = (((t - t0) / dt).ceil() as usize).min(bins);
        let c = self.thresholds.max();
        (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                let mut n = 0.0;
                for plane in 0..v.planes() {
                    for b in 0..last {
                        n += v.get(plane, b, x, y).abs();
                    }
                }
                1.0 / (1.0 + c * n)
            })
            .collect()
    }

    pub fn query(&self, t: f64) -> Result<DecodedFrame> {
        run_maybe_sequential(self.config.sequential, || self.query_inner(t))
    }

    fn query_inner(&self, t: f64) -> Result<DecodedFrame> {
        let start = Instant::now();
        self.check_time(t)?;
        let flow = self.trajectory.eval_flow_field(t)?;
        let latent_flow = self.latent_flow_at(t)?;

        let splats = splat_pyramid(&self.pyramid.images, &flow, &self.splat_z, self.config.den_eps)?;
        let coverage = splats[0].coverage.clone();
        let mut warped = splats[0].image.clone();
        fill_holes_from_coarse(&mut warped, &coverage, &splats[1..]);

        let luma_synth = match &self.kplane {
            None => {
                let luma = luminance_frame(&self.initial)?;
                direct_integration(&luma, &self.stream, t, self.thresholds, self.config.log_eps)?
            }
            Some(field) => {
                let (t0, t1) = (self.stream.t_begin(), self.stream.t_end());
                let tau = (t - t0) / (t1 - t0);
                let g = field.render_frame(tau, self.initial.width(), self.initial.height())?;
                Frame::from_grid_clamped(g, t)?
            }
        };
        let synthesized = transfer_luminance(&self.initial, &luma_synth, self.config.log_eps)?;
        let confidence = self.synth_confidence(t);
        let fused = fuse(&warped, &coverage, synthesized.grid(), &confidence, self.config.fusion)?;
        Ok(DecodedFrame {
            time: t,
            fused: Frame::from_grid_clamped(fused, t)?,
            warped: Frame::from_grid_clamped(warped, t)?,
            synthesized,
            flow,
            latent_flow,
            coverage,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    pub fn run(&self, times: &[f64]) -> Result<DecompressionResult> {
        let frames = times.iter().map(|&t| self.query(t)).collect::<Result<Vec<_>>>()?;
        Ok(DecompressionResult {
            timing: TimingStats {
                prepare_seconds: self.prepare_seconds,
                query_seconds: frames.iter().map(|f| f.seconds).collect(),
            },
            frames,
            thresholds: self.thresholds,
            calibration: self.calibration,
            anchor_times: self.anchor_times.clone(),
            trajectory: self.trajectory.clone(),
            warnings: self.warnings.clone(),
        })
    }
}

fn max_levels(w: usize, h: usize) -> usize {
    let mut levels = 1;
    let (mut w, mut h) = (w, h);
    while w >= 4 && h >= 4 {
        w /= 2;
        h /= 2;
        levels += 1;
    }
    levels
}

/// Fills uncovered level-0 pixels from the first coarser splat that covers
/// the corresponding position.
fn fill_holes_from_coarse(image: &mut Grid, coverage: &[f64], coarse: &[crate::warp::Splatted]) {
    let (w, ch) = (image.width(), image.channels());
    for (i, _) in coverage.iter().enumerate().filter(|(_, c)| **c == 0.0) {
        let (x, y) = (i % w, i / w);
        for (l, s) in coarse.iter().enumerate() {
            let scale = (1usize << (l + 1)) as f64;
            let lx = (x as f64 + 0.5) / scale - 0.5;
            let ly = (y as f64 + 0.5) / scale - 0.5;
            let (cw, chh) = (s.image.width(), s.image.height());
            let nx = lx.round().clamp(0.0, (cw - 1) as f64) as usize;
            let ny = ly.round().clamp(0.0, (chh - 1) as f64) as usize;
            if s.coverage[ny * cw + nx] > 0.0 {
                for c in 0..ch {
                    image.data_mut()[i * ch + c] = sample_bilinear(&s.image, lx, ly, c);
                }
                break;
            }
        }
    }
}

/// Prepares once and answers `config.query_times`.
pub fn decompress(initial: &Frame, stream: &EventStream, config: &DecompressionConfig) -> Result<DecompressionResult> {
    Decompressor::prepare(initial, stream, config)?.run(&config.query_times)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameScore {
    pub time: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub frames: Vec<FrameScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl EvaluationReport {
    pub fn to_metrics(&self) -> MetricsReport {
        let mut r = MetricsReport::new();
        for (k, f) in self.frames.iter().enumerate() {
            r.push(format!("frame{k}.time"), f.time);
            r.push(format!("frame{k}.psnr"), f.psnr);
            r.push(format!("frame{k}.ssim"), f.ssim);
        }
        r.push("mean.psnr", self.mean_psnr);
        r.push("mean.ssim", self.mean_ssim);
        r
    }
}

/// PSNR (peak 1) and SSIM of each predicted frame against the ground-truth
/// frame with the same timestamp, both cropped by `border` pixels.
pub fn evaluate_frames(predicted: &[Frame], ground_truth: &FrameSequence, border: usize) -> Result<EvaluationReport> {
    if predicted.is_empty() {
        return Err(Error::InvalidInput("nothing to evaluate".into()));
    }
    let frames = predicted
        .par_iter()
        .map(|p| {
            let gt = ground_truth
                .frames()
                .iter()
                .find(|g| (g.timestamp() - p.timestamp()).abs() <= 1e-9)
                .ok_or_else(|| Error::InvalidInput(format!("no ground truth at t={}", p.timestamp())))?;
            let (a, b) = (p.grid().crop(border)?, gt.grid().crop(border)?);
            Ok(FrameScore {
                time: p.timestamp(),
                psnr: psnr(&a, &b, 1.0)?,
                ssim: ssim(&a, &b, SsimParams::default())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = frames.len() as f64;
    Ok(EvaluationReport {
        mean_psnr: frames.iter().map(|f| f.psnr).sum::<f64>() / n,
        mean_ssim: frames.iter().map(|f| f.ssim).sum::<f64>() / n,
        frames,
    })
}

/// Scores the fused frames of `result`.
pub fn evaluate(result: &DecompressionResult, ground_truth: &FrameSequence, border: usize) -> Result<EvaluationReport> {
    let fused: Vec<Frame> = result.frames.iter().map(|f| f.fused.clone()).collect();
    evaluate_frames(&fused, ground_truth, border)
}
