//! Frame packets, decoder-side reconstruction and a serial link model.
//!
//! Wire layout (little-endian):
//!
//! | bytes | field |
//! |------:|-------|
//! | 2 | magic `"NV"` |
//! | 1 | version `0x01` |
//! | 4 | frame id |
//! | 24 | pose as the se(3) log `(omega, v)`, six `f32` |
//! | 1 | flags: bit 0 residual present, bit 1 lossless |
//! | 4 | residual length |
//! | n | residual (codec stream) |
//! | 4 | CRC-32 (IEEE) of everything above |

use std::io::Write;

use crate::codec::{self, CodecMode, Planes};
use crate::error::{Error, Result};
use crate::geometry::{se3_exp, se3_log, Intrinsics, Pose, Twist};
use crate::image::Image;
use crate::render::render;
use crate::scene::Scene;

pub const PACKET_MAGIC: &[u8; 2] = b"NV";
pub const PACKET_VERSION: u8 = 0x01;
/// Size of a packet with an empty residual.
pub const HEADER_ONLY_LEN: usize = 2 + 1 + 4 + 24 + 1 + 4 + 4;
const FLAG_RESIDUAL: u8 = 1;
const FLAG_LOSSLESS: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct FramePacket {
    pub frame_id: u32,
    pub pose: [f32; 6],
    pub residual_present: bool,
    pub lossless: bool,
    pub residual: Vec<u8>,
}

/// Wire representation of a pose: its se(3) log rounded to `f32`.
pub fn pose_to_wire(p: &Pose<f64>) -> [f32; 6] {
    se3_log(p).0.map(|v| v as f32)
}

pub fn pose_from_wire(w: &[f32; 6]) -> Pose<f64> {
    se3_exp(&Twist(w.map(f64::from)))
}

/// The pose a decoder will reconstruct from `p`'s wire form.
pub fn wire_rounded(p: &Pose<f64>) -> Pose<f64> {
    pose_from_wire(&pose_to_wire(p))
}

impl FramePacket {
    pub fn new(frame_id: u32, pose: &Pose<f64>, residual: Option<(Vec<u8>, CodecMode)>) -> Self {
        let (residual_present, lossless, residual) = match residual {
            Some((bytes, mode)) => (true, mode == CodecMode::Lossless, bytes),
            None => (false, false, Vec::new()),
        };
        Self { frame_id, pose: pose_to_wire(pose), residual_present, lossless, residual }
    }

    pub fn serialized_len(&self) -> usize {
        HEADER_ONLY_LEN + self.residual.len()
    }
}

pub fn serialize_packet(p: &FramePacket) -> Result<Vec<u8>> {
    let len = u32::try_from(p.residual.len()).map_err(|_| Error::PayloadTooLarge)?;
    if !p.residual_present && len != 0 {
        return Err(Error::InvalidConfig("residual bytes without the residual flag".into()));
    }
    let mut out = Vec::with_capacity(p.serialized_len());
    out.extend_from_slice(PACKET_MAGIC);
    out.push(PACKET_VERSION);
    out.extend_from_slice(&p.frame_id.to_le_bytes());
    for v in p.pose {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push((u8::from(p.residual_present) * FLAG_RESIDUAL) | (u8::from(p.lossless) * FLAG_LOSSLESS));
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&p.residual);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn parse_packet(bytes: &[u8]) -> Result<FramePacket> {
    if bytes.len() < 3 {
        return Err(Error::TruncatedPacket);
    }
    if &bytes[..2] != PACKET_MAGIC || bytes[2] != PACKET_VERSION {
        return Err(Error::UnsupportedPacket);
    }
    if bytes.len() < HEADER_ONLY_LEN {
        return Err(Error::TruncatedPacket);
    }
    let len = u32_at(bytes, 32) as usize;
    let total = HEADER_ONLY_LEN.checked_add(len).ok_or(Error::CorruptPacket)?;
    if bytes.len() < total {
        return Err(Error::TruncatedPacket);
    }
    if bytes.len() > total {
        return Err(Error::CorruptPacket);
    }
    let body = total - 4;
    if crc32fast::hash(&bytes[..body]) != u32_at(bytes, body) {
        return Err(Error::CorruptPacket);
    }
    let flags = bytes[31];
    if flags & !(FLAG_RESIDUAL | FLAG_LOSSLESS) != 0 {
        return Err(Error::UnsupportedPacket);
    }
    let residual_present = flags & FLAG_RESIDUAL != 0;
    if !residual_present && len != 0 {
        return Err(Error::CorruptPacket);
    }
    let pose: [f32; 6] = std::array::from_fn(|i| f32::from_bits(u32_at(bytes, 7 + 4 * i)));
    if pose.iter().any(|v| !v.is_finite()) {
        return Err(Error::CorruptPacket);
    }
    Ok(FramePacket {
        frame_id: u32_at(bytes, 3),
        pose,
        residual_present,
        lossless: flags & FLAG_LOSSLESS != 0,
        residual: bytes[36..body].to_vec(),
    })
}

/// `clamp(rendered + dequantized residual, 0, 1)`; shared by encoder and decoder.
pub fn reconstruct(rendered: &Image<f64>, residual: Option<&Planes>) -> Result<Image<f64>> {
    let Some(planes) = residual else {
        return Ok(rendered.clone());
    };
    rendered.same_shape(&Image::<f64> { width: planes.width, height: planes.height, data: Vec::new() })?;
    let r: Image<f64> = codec::residual_dequantize(planes);
    Ok(Image {
        width: rendered.width,
        height: rendered.height,
        data: rendered.data.iter().zip(&r.data).map(|(a, b)| (a + b).clamp(0.0, 1.0)).collect(),
    })
}

/// Decodes a packet's residual stream, checking it against the packet flags.
pub fn decode_residual(p: &FramePacket) -> Result<Option<Planes>> {
    if !p.residual_present {
        return Ok(None);
    }
    let (params, _, _) = codec::peek_header(&p.residual)?;
    if (params.mode == CodecMode::Lossless) != p.lossless {
        return Err(Error::CorruptPacket);
    }
    Ok(Some(codec::decode(&p.residual)?))
}

pub fn decode_frame(p: &FramePacket, prior: &Scene, k: &Intrinsics<f64>) -> Result<Image<f64>> {
    let rendered = render(prior, &pose_from_wire(&p.pose), k)?;
    let residual = decode_residual(p)?;
    reconstruct(&rendered, residual.as_ref())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LinkRecord {
    pub frame_id: usize,
    pub bytes: f64,
    pub tx_time_s: f64,
    pub cumulative_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinkReport {
    pub records: Vec<LinkRecord>,
    pub total_bytes: f64,
    pub total_time_s: f64,
    pub fps: f64,
}

/// Serial transmission of packets over a constant-rate link.
pub fn simulate_link(packet_sizes: &[f64], bitrate_bps: f64, per_packet_overhead: f64) -> Result<LinkReport> {
    if !(bitrate_bps > 0.0) || !bitrate_bps.is_finite() {
        return Err(Error::InvalidConfig("bitrate must be positive".into()));
    }
    if !(per_packet_overhead >= 0.0) {
        return Err(Error::InvalidConfig("overhead must be non-negative".into()));
    }
    let mut report = LinkReport::default();
    // accumulate bytes rather than times so whole-byte totals stay exact
    let mut on_air_total = 0.0;
    for (i, &size) in packet_sizes.iter().enumerate() {
        let on_air = size + per_packet_overhead;
        if !(on_air > 0.0) || !on_air.is_finite() {
            return Err(Error::InvalidConfig(format!("packet {i} has no transmittable bytes")));
        }
        on_air_total += on_air;
        report.total_bytes += size;
        report.records.push(LinkRecord {
            frame_id: i,
            bytes: size,
            tx_time_s: 8.0 * on_air / bitrate_bps,
            cumulative_s: 8.0 * on_air_total / bitrate_bps,
        });
    }
    report.total_time_s = 8.0 * on_air_total / bitrate_bps;
    if !report.records.is_empty() {
        report.fps = report.records.len() as f64 / report.total_time_s;
    }
    Ok(report)
}

pub fn write_link_csv<W: Write>(report: &LinkReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in &report.records {
        out.serialize(r)?;
    }
    if report.records.is_empty() {
        out.write_record(["frame_id", "bytes", "tx_time_s", "cumulative_s"])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CodecParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_packet(rng: &mut ChaCha8Rng) -> FramePacket {
        let residual_present = rng.gen_bool(0.7);
        let residual = if residual_present { (0..rng.gen_range(0..300)).map(|_| rng.gen()).collect() } else { Vec::new() };
        FramePacket {
            frame_id: rng.gen(),
            pose: std::array::from_fn(|_| rng.gen_range(-3.0f32..3.0)),
            residual_present,
            lossless: residual_present && rng.gen_bool(0.3),
            residual,
        }
    }

    #[test]
    fn header_only_packet_is_forty_bytes() {
        assert_eq!(HEADER_ONLY_LEN, 40);
        let p = FramePacket::new(7, &Pose::identity(), None);
        let bytes = serialize_packet(&p).unwrap();
        assert_eq!(bytes.len(), 40);
        assert_eq!(&bytes[..3], b"NV\x01");
        assert_eq!(parse_packet(&bytes).unwrap(), p);
    }

    #[test]
    fn round_trip_random_packets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let p = random_packet(&mut rng);
            let bytes = serialize_packet(&p).unwrap();
            assert_eq!(bytes.len(), p.serialized_len());
            assert_eq!(parse_packet(&bytes).unwrap(), p);
        }
    }

    #[test]
    fn every_single_bit_flip_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let bytes = serialize_packet(&random_packet(&mut rng)).unwrap();
            for bit in 0..bytes.len() * 8 {
                let mut bad = bytes.clone();
                bad[bit / 8] ^= 1 << (bit % 8);
                assert!(parse_packet(&bad).is_err(), "bit {bit} accepted");
            }
        }
    }

    #[test]
    fn parse_error_kinds() {
        let p = FramePacket::new(1, &Pose::identity(), Some((vec![1, 2, 3], CodecMode::Lossy)));
        let bytes = serialize_packet(&p).unwrap();
        assert!(matches!(parse_packet(&bytes[..bytes.len() - 1]), Err(Error::TruncatedPacket)));
        assert!(matches!(parse_packet(&bytes[..10]), Err(Error::TruncatedPacket)));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(parse_packet(&bad), Err(Error::UnsupportedPacket)));
        let mut bad = bytes.clone();
        bad[2] = 2;
        assert!(matches!(parse_packet(&bad), Err(Error::UnsupportedPacket)));
        let mut bad = bytes.clone();
        bad[37] ^= 0x10;
        assert!(matches!(parse_packet(&bad), Err(Error::CorruptPacket)));
    }

    #[test]
    fn crc_matches_reference_value() {
        // CRC-32/IEEE check value
        assert_eq!(crc32fast::hash(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn wire_pose_is_stable_under_rounding() {
        let p = se3_exp(&Twist([0.3, -0.2, 0.1, 0.5, -1.0, 2.0]));
        let once = wire_rounded(&p);
        assert_eq!(pose_to_wire(&once), pose_to_wire(&p));
        let (deg, dist) = crate::geometry::pose_error(&p, &once);
        assert!(deg < 1e-4 && dist < 1e-5);
    }

    #[test]
    fn reconstruction_with_zero_residual_planes() {
        let img = Image::from_fn(9, 7, |x, y, c| ((x + y + c) % 5) as f64 / 4.0);
        assert_eq!(reconstruct(&img, None).unwrap(), img);
        let zero = Planes::filled(9, 7, 128);
        let r = reconstruct(&img, Some(&zero)).unwrap();
        for (a, b) in img.data.iter().zip(&r.data) {
            assert_eq!(*b, (a + (128.0 / 127.5 - 1.0)).clamp(0.0, 1.0));
        }
        assert!(reconstruct(&img, Some(&Planes::filled(8, 7, 128))).is_err());
    }

    #[test]
    fn residual_flag_must_match_codec_mode() {
        let planes = Planes::filled(8, 8, 128);
        let lossy = codec::encode(&planes, &CodecParams::lossy(50)).unwrap();
        let mut p = FramePacket::new(0, &Pose::identity(), Some((lossy, CodecMode::Lossy)));
        assert_eq!(decode_residual(&p).unwrap(), Some(planes));
        p.lossless = true;
        assert!(matches!(decode_residual(&p), Err(Error::CorruptPacket)));
    }

    #[test]
    fn link_arithmetic() {
        let r = simulate_link(&vec![1250.0; 100], 100_000.0, 0.0).unwrap();
        assert_eq!(r.fps, 10.0);
        assert_eq!(r.total_bytes, 125_000.0);
        assert!(r.records.windows(2).all(|w| w[1].cumulative_s > w[0].cumulative_s));
        let r = simulate_link(&[1218.68], 100_000.0, 0.0).unwrap();
        assert!((r.fps - 100_000.0 / (8.0 * 1218.68)).abs() < 1e-12);
        assert!((r.fps - 10.25).abs() < 0.01);
        let r = simulate_link(&[], 100_000.0, 0.0).unwrap();
        assert!(r.records.is_empty() && r.total_bytes == 0.0 && r.fps == 0.0);
        assert!(simulate_link(&[10.0], 0.0, 0.0).is_err());
        let r = simulate_link(&[100.0, 300.0], 8_000.0, 20.0).unwrap();
        assert_eq!(r.records[0].tx_time_s, 0.12);
        assert!((r.total_time_s - 0.44).abs() < 1e-15);
    }

    #[test]
    fn link_csv_has_header_and_rows() {
        let r = simulate_link(&[40.0, 80.0], 1000.0, 0.0).unwrap();
        let mut buf = Vec::new();
        write_link_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "frame_id,bytes,tx_time_s,cumulative_s");
        assert_eq!(lines.len(), 3);
    }
}
