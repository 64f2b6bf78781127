use std::path::Path;

use crate::config::{parse_list, KeyValues};
use crate::error::{Error, Result};
use crate::grid::FlowField;
use crate::kplane::{Decoder, FeaturePlane, KPlaneField, PlaneAxes};
use crate::trajectory::{CoefficientField, MotionBasis, TrajectoryField};
use crate::voxel::EventVolume;

use super::{put_f32s, put_u32, write_bytes, Reader};

const EVV1: &str = "EVV1";
const FLO1: &str = "FLO1";
const TRJ1: &str = "TRJ1";
const KPF1: &str = "KPF1";

/// `P, B, H, W` then f32 values in plane, bin, row, column order. The time
/// window is not part of the format.
pub fn encode_volume(volume: &EventVolume) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + 4 * volume.data().len());
    out.extend_from_slice(EVV1.as_bytes());
    for d in [volume.planes(), volume.bins(), volume.height(), volume.width()] {
        put_u32(&mut out, EVV1, d)?;
    }
    put_f32s(&mut out, volume.data());
    Ok(out)
}

pub fn decode_volume(data: &[u8], window: (f64, f64)) -> Result<EventVolume> {
    let mut r = Reader::new(EVV1, data)?;
    let (p, b, h, w) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    let n = p
        .checked_mul(b)
        .and_then(|n| n.checked_mul(h))
        .and_then(|n| n.checked_mul(w))
        .ok_or_else(|| Error::format(EVV1, "dimensions overflow"))?;
    let values = r.f32s(n)?;
    r.finish()?;
    EventVolume::from_parts(p, b, w, h, window, values)
}

/// `W, H` then interleaved `(u, v)` f32 pairs in row-major order.
pub fn encode_flow(flow: &FlowField) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + 8 * flow.u().len());
    out.extend_from_slice(FLO1.as_bytes());
    put_u32(&mut out, FLO1, flow.width())?;
    put_u32(&mut out, FLO1, flow.height())?;
    for (&u, &v) in flow.u().iter().zip(flow.v()) {
        put_f32s(&mut out, &[u, v]);
    }
    Ok(out)
}

pub fn decode_flow(data: &[u8]) -> Result<FlowField> {
    let mut r = Reader::new(FLO1, data)?;
    let (w, h) = (r.u32()?, r.u32()?);
    let n = w.checked_mul(h).and_then(|n| n.checked_mul(2));
    let pairs = r.f32s(n.ok_or_else(|| Error::format(FLO1, "dimensions overflow"))?)?;
    r.finish()?;
    let (u, v) = pairs.chunks_exact(2).map(|p| (p[0], p[1])).unzip();
    FlowField::from_parts(w, h, u, v)
}

/// `W, H, K` then `2K` f32 coefficients per pixel, x-coefficients first.
pub fn encode_coefficients(field: &CoefficientField) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 4 * field.data().len());
    out.extend_from_slice(TRJ1.as_bytes());
    for d in [field.width(), field.height(), field.k()] {
        put_u32(&mut out, TRJ1, d)?;
    }
    put_f32s(&mut out, field.data());
    Ok(out)
}

pub fn decode_coefficients(data: &[u8]) -> Result<CoefficientField> {
    let mut r = Reader::new(TRJ1, data)?;
    let (w, h, k) = (r.u32()?, r.u32()?, r.u32()?);
    let n = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(2 * k))
        .ok_or_else(|| Error::format(TRJ1, "dimensions overflow"))?;
    let values = r.f32s(n)?;
    r.finish()?;
    CoefficientField::new(w, h, k, values)
}

/// `kind`, `count`, the time span and, for tabulated bases, one
/// `sample.<k>` list per function.
pub fn basis_descriptor(field: &TrajectoryField) -> KeyValues {
    let mut kv = KeyValues::default();
    let basis = field.basis();
    let (t0, t1) = field.span();
    kv.insert("kind", basis.kind_name());
    kv.insert("count", basis.count());
    kv.insert("t0", t0);
    kv.insert("t1", t1);
    if let MotionBasis::Tabulated { samples } = basis {
        for (k, s) in samples.iter().enumerate() {
            let list: Vec<String> = s.iter().map(f64::to_string).collect();
            kv.insert(format!("sample.{k}"), list.join(","));
        }
    }
    kv
}

pub fn trajectory_from_parts(descriptor: &KeyValues, coefficients: CoefficientField) -> Result<TrajectoryField> {
    let need = |key: &str| -> Result<f64> {
        descriptor
            .get(key)?
            .ok_or_else(|| Error::format("basis", format!("missing {key}")))
    };
    let count: usize = descriptor
        .get("count")?
        .ok_or_else(|| Error::format("basis", "missing count"))?;
    let basis = match descriptor.get_str("kind") {
        Some("polynomial") => MotionBasis::polynomial(count)?,
        Some("cosine") => MotionBasis::cosine(count)?,
        Some("tabulated") => {
            let samples = (0..count)
                .map(|k| {
                    let text = descriptor
                        .get_str(&format!("sample.{k}"))
                        .ok_or_else(|| Error::format("basis", format!("missing sample.{k}")))?;
                    parse_list(text)
                })
                .collect::<Result<Vec<Vec<f64>>>>()?;
            MotionBasis::tabulated(samples)?
        }
        other => return Err(Error::format("basis", format!("unknown kind {other:?}"))),
    };
    if coefficients.k() != count {
        return Err(Error::GeometryMismatch(format!(
            "basis has {count} functions, coefficients K={}",
            coefficients.k()
        )));
    }
    TrajectoryField::new(basis, coefficients, need("t0")?, need("t1")?)
}

pub fn write_trajectory(coefficients: &Path, descriptor: &Path, field: &TrajectoryField) -> Result<()> {
    write_bytes(coefficients, &encode_coefficients(field.coefficients())?)?;
    write_bytes(descriptor, basis_descriptor(field).to_text().as_bytes())
}

pub fn read_trajectory(coefficients: &Path, descriptor: &Path) -> Result<TrajectoryField> {
    let coeffs = decode_coefficients(&std::fs::read(coefficients)?)?;
    trajectory_from_parts(&KeyValues::load(descriptor)?, coeffs)
}

/// Header: scale count, feature count, outputs, decoder hidden width (0 for
/// linear), then `(R_a, R_b)` for the xy, xt and yt plane of every scale.
/// The f32 parameters follow in [`KPlaneField::parameters`] order.
pub fn encode_kplane(field: &KPlaneField) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(KPF1.as_bytes());
    put_u32(&mut out, KPF1, field.scales().len())?;
    put_u32(&mut out, KPF1, field.features())?;
    put_u32(&mut out, KPF1, field.outputs())?;
    put_u32(&mut out, KPF1, field.decoder().hidden())?;
    for plane in field.scales().iter().flat_map(|t| t.iter()) {
        let (ra, rb) = plane.resolution();
        put_u32(&mut out, KPF1, ra)?;
        put_u32(&mut out, KPF1, rb)?;
    }
    put_f32s(&mut out, &field.parameters());
    Ok(out)
}

pub fn decode_kplane(data: &[u8]) -> Result<KPlaneField> {
    let mut r = Reader::new(KPF1, data)?;
    let (scales, features, outputs, hidden) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    if scales == 0 || features == 0 || outputs == 0 || scales > 64 || features > 4096 {
        return Err(Error::format(KPF1, "implausible header"));
    }
    let mut planes = Vec::with_capacity(scales);
    for _ in 0..scales {
        let mut triple = Vec::with_capacity(3);
        for axes in PlaneAxes::ALL {
            let (ra, rb) = (r.u32()?, r.u32()?);
            if ra.saturating_mul(rb).saturating_mul(features) > r.remaining() / 4 {
                return Err(Error::format(KPF1, "plane larger than the file"));
            }
            triple.push(FeaturePlane::filled(axes, ra, rb, features, 0.0)?);
        }
        planes.push(<[FeaturePlane; 3]>::try_from(triple).unwrap());
    }
    let inputs = features * scales;
    let decoder = if hidden == 0 {
        Decoder::linear(inputs, outputs, vec![0.0; inputs * outputs], vec![0.0; outputs])?
    } else {
        Decoder::mlp(
            inputs,
            hidden,
            outputs,
            (vec![0.0; hidden * inputs], vec![0.0; hidden]),
            (vec![0.0; outputs * hidden], vec![0.0; outputs]),
        )?
    };
    let mut field = KPlaneField::new(planes, decoder)?;
    let params = r.f32s(field.param_count())?;
    r.finish()?;
    field.set_parameters(&params)?;
    Ok(field)
}
