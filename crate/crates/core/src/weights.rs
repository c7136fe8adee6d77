//! Binary weight bundles and tensor containers.
//!
//! Both share one record layout, little-endian throughout:
//!
//! ```text
//! magic        4 bytes   "ESW1" (weights) or "EST1" (tensors)
//! count        u32       number of records
//! per record:
//!   name_len   u16
//!   name       name_len bytes of UTF-8
//!   rank       u8
//!   extents    rank × u32
//!   data       product(extents) × f32
//! crc          u32       CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! A weight bundle starts with a `meta` record (`[variant code, τ]`), then a
//! `pcen` record (`[α, r, δ, s]`, EdgeSpot only), then the layers in
//! [`manifest`] order.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::dsp::PcenParams;
use crate::error::{Error, Result};
use crate::model::{manifest, ModelConfig, RecordKind, Variant};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"ESW1";
pub const TENSOR_MAGIC: [u8; 4] = *b"EST1";

const META: &str = "meta";
const PCEN: &str = "pcen";

/// A named float tensor as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Record {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::layer(&name, format!("{} values for shape {shape:?}", data.len())));
        }
        Ok(Record {
            name,
            shape: shape.to_vec(),
            data,
        })
    }
}

pub fn encode_records(magic: [u8; 4], records: &[Record]) -> Result<Vec<u8>> {
    let payload: usize = records
        .iter()
        .map(|r| 2 + r.name.len() + 1 + 4 * r.shape.len() + 4 * r.data.len())
        .sum();
    let mut buf = Vec::with_capacity(12 + payload);
    buf.extend_from_slice(&magic);
    buf.extend_from_slice(&u32_len(records.len(), "record count")?.to_le_bytes());
    for r in records {
        let name_len = u16::try_from(r.name.len())
            .map_err(|_| Error::Format(format!("record name too long: {}", r.name)))?;
        let rank = u8::try_from(r.shape.len())
            .map_err(|_| Error::Format(format!("rank too large for {}", r.name)))?;
        buf.extend_from_slice(&name_len.to_le_bytes());
        buf.extend_from_slice(r.name.as_bytes());
        buf.push(rank);
        for &d in &r.shape {
            buf.extend_from_slice(&u32_len(d, &r.name)?.to_le_bytes());
        }
        for v in &r.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

fn u32_len(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} exceeds u32")))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses and checksum-verifies a record container. Never returns partial data.
pub fn decode_records(bytes: &[u8], magic: [u8; 4]) -> Result<Vec<Record>> {
    if bytes.len() < 12 {
        return Err(Error::Format(format!("truncated: {} bytes", bytes.len())));
    }
    if bytes[..4] != magic {
        return Err(if bytes[..3] == magic[..3] {
            Error::Format(format!(
                "unsupported format version {:?}",
                String::from_utf8_lossy(&bytes[..4])
            ))
        } else {
            Error::Format("bad magic".into())
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Format(format!(
            "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }

    let mut cur = Cursor { buf: body, pos: 4 };
    let count = cur.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Format("record name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("record {name} extents overflow")))?;
        let raw = cur.take(
            len.checked_mul(4)
                .ok_or_else(|| Error::Format(format!("record {name} too large")))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        records.push(Record { name, shape, data });
    }
    if cur.pos != body.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after last record",
            body.len() - cur.pos
        )));
    }
    Ok(records)
}

/// Learned weights for one model configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightBundle {
    pub variant: Variant,
    pub tau: usize,
    /// Frontend parameters; present exactly for EdgeSpot bundles.
    pub pcen: Option<PcenParams>,
    /// Layer records in manifest order.
    pub layers: Vec<Record>,
}

impl WeightBundle {
    pub fn config(&self) -> Result<ModelConfig> {
        ModelConfig::new(self.variant, self.tau)
    }

    pub fn get(&self, name: &str) -> Option<&Record> {
        self.layers.iter().find(|r| r.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Record> {
        self.layers.iter_mut().find(|r| r.name == name)
    }

    /// All records as written to disk, `meta` and `pcen` first.
    pub fn records(&self) -> Vec<Record> {
        let mut out = Vec::with_capacity(self.layers.len() + 2);
        out.push(Record {
            name: META.into(),
            shape: vec![2],
            data: vec![self.variant.code() as f32, self.tau as f32],
        });
        if let Some(p) = &self.pcen {
            out.push(Record {
                name: PCEN.into(),
                shape: vec![4],
                data: p.to_array().to_vec(),
            });
        }
        out.extend(self.layers.iter().cloned());
        out
    }

    /// Checks the bundle against `expected`: matching variant and width, every
    /// manifest record present once with the right extents, no unknown
    /// records, finite values, valid frontend parameters.
    pub fn validate(&self, expected: &ModelConfig) -> Result<()> {
        if self.variant != expected.variant || self.tau != expected.tau {
            return Err(Error::Config(format!(
                "bundle is {}-{}, expected {}",
                self.variant,
                self.tau,
                expected.name()
            )));
        }
        match (expected.variant, &self.pcen) {
            (Variant::EdgeSpot, Some(p)) => p.validate()?,
            (Variant::EdgeSpot, None) => return Err(Error::layer(PCEN, "missing")),
            (Variant::BcResNet, Some(_)) => return Err(Error::layer(PCEN, "unexpected for baseline")),
            (Variant::BcResNet, None) => {}
        }
        let specs = manifest(expected);
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for r in &self.layers {
            *seen.entry(r.name.as_str()).or_default() += 1;
        }
        for spec in &specs {
            match seen.remove(spec.name.as_str()) {
                None => return Err(Error::layer(&spec.name, "missing")),
                Some(1) => {}
                Some(n) => return Err(Error::layer(&spec.name, format!("present {n} times"))),
            }
            let r = self.get(&spec.name).expect("seen");
            if r.shape != spec.shape {
                return Err(Error::layer(
                    &spec.name,
                    format!("shape {:?}, expected {:?}", r.shape, spec.shape),
                ));
            }
            if r.data.len() != spec.len() {
                return Err(Error::layer(&spec.name, "payload length mismatch"));
            }
            if r.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::layer(&spec.name, "non-finite value"));
            }
            if spec.kind == RecordKind::Norm {
                let slots = spec.shape[1];
                if r.data[3 * slots..].iter().any(|&v| v < 0.0) {
                    return Err(Error::layer(&spec.name, "negative running variance"));
                }
            }
        }
        if let Some(name) = seen.keys().min() {
            return Err(Error::layer(*name, "unknown layer"));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate(&self.config()?)?;
        encode_records(WEIGHTS_MAGIC, &self.records())
    }

    /// Decodes and validates against `expected`.
    pub fn from_bytes(bytes: &[u8], expected: &ModelConfig) -> Result<Self> {
        let records = decode_records(bytes, WEIGHTS_MAGIC)?;
        let mut iter = records.into_iter().peekable();
        let meta = iter
            .next()
            .filter(|r| r.name == META && r.data.len() == 2)
            .ok_or_else(|| Error::layer(META, "missing or malformed"))?;
        let variant = Variant::from_code(meta.data[0] as u8)
            .filter(|_| meta.data[0].fract() == 0.0)
            .ok_or_else(|| Error::layer(META, format!("unknown variant code {}", meta.data[0])))?;
        if !(meta.data[1] >= 1.0 && meta.data[1].fract() == 0.0) {
            return Err(Error::layer(META, format!("invalid width {}", meta.data[1])));
        }
        let tau = meta.data[1] as usize;
        let pcen = match iter.peek() {
            Some(r) if r.name == PCEN => {
                let r = iter.next().unwrap();
                let v: [f32; 4] = r
                    .data
                    .as_slice()
                    .try_into()
                    .map_err(|_| Error::layer(PCEN, "expected 4 values"))?;
                Some(PcenParams::from_array(v)?)
            }
            _ => None,
        };
        let bundle = WeightBundle {
            variant,
            tau,
            pcen,
            layers: iter.collect(),
        };
        bundle.validate(expected)?;
        Ok(bundle)
    }
}

/// Writes the bundle; returns bytes written.
pub fn save_bundle(bundle: &WeightBundle, sink: &mut impl Write) -> Result<usize> {
    let bytes = bundle.to_bytes()?;
    sink.write_all(&bytes)?;
    Ok(bytes.len())
}

pub fn load_bundle(source: &mut impl Read, expected: &ModelConfig) -> Result<WeightBundle> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    WeightBundle::from_bytes(&bytes, expected)
}

/// Reads a bundle using the configuration recorded in its own header.
pub fn load_bundle_any(bytes: &[u8]) -> Result<WeightBundle> {
    let records = decode_records(bytes, WEIGHTS_MAGIC)?;
    let meta = records
        .first()
        .filter(|r| r.name == META && r.data.len() == 2)
        .ok_or_else(|| Error::layer(META, "missing or malformed"))?;
    let variant = Variant::from_code(meta.data[0] as u8)
        .ok_or_else(|| Error::layer(META, "unknown variant"))?;
    if !(meta.data[1] >= 1.0 && meta.data[1].fract() == 0.0) {
        return Err(Error::layer(META, format!("invalid width {}", meta.data[1])));
    }
    let cfg = ModelConfig::new(variant, meta.data[1] as usize)?;
    WeightBundle::from_bytes(bytes, &cfg)
}

pub fn save_tensors(records: &[Record], sink: &mut impl Write) -> Result<usize> {
    let bytes = encode_records(TENSOR_MAGIC, records)?;
    sink.write_all(&bytes)?;
    Ok(bytes.len())
}

pub fn load_tensors(source: &mut impl Read) -> Result<Vec<Record>> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode_records(&bytes, TENSOR_MAGIC)
}

/// 64-bit linear congruential generator (Knuth's MMIX constants).
///
/// Each step is `state = state·6364136223846793005 + 1442695040888963407
/// (mod 2⁶⁴)`; the top 24 bits `u` map to `2·u/2²⁴ − 1`, which is exact in
/// `f32`, so the stream is identical on every platform.
#[derive(Clone, Debug)]
pub struct Lcg(u64);

impl Lcg {
    pub const MULTIPLIER: u64 = 6_364_136_223_846_793_005;
    pub const INCREMENT: u64 = 1_442_695_040_888_963_407;

    pub fn new(seed: u64) -> Self {
        Lcg(seed)
    }

    pub fn next_u24(&mut self) -> u32 {
        self.0 = self.0.wrapping_mul(Self::MULTIPLIER).wrapping_add(Self::INCREMENT);
        (self.0 >> 40) as u32
    }

    /// Uniform in `[-1, 1)`.
    pub fn symmetric(&mut self) -> f32 {
        2.0 * (self.next_u24() as f32 / 16_777_216.0) - 1.0
    }
}

/// Weights and biases uniform in ±0.1. Norm layers get scale `1 ± 0.1`,
/// shift and mean `±0.1`, variance `1 + [0, 0.1]`. The frontend uses
/// α = 0.98, r = 0.5, δ = 2, s = 0.025.
pub fn random_bundle(cfg: &ModelConfig, seed: u64) -> WeightBundle {
    const SCALE: f32 = 0.1;
    let mut rng = Lcg::new(seed);
    let layers = manifest(cfg)
        .into_iter()
        .map(|spec| {
            let data = match spec.kind {
                RecordKind::Weight | RecordKind::Bias | RecordKind::Slope => {
                    (0..spec.len()).map(|_| SCALE * rng.symmetric()).collect()
                }
                RecordKind::Norm => {
                    let slots = spec.shape[1];
                    let mut v = Vec::with_capacity(4 * slots);
                    v.extend((0..slots).map(|_| 1.0 + SCALE * rng.symmetric()));
                    v.extend((0..2 * slots).map(|_| SCALE * rng.symmetric()));
                    v.extend((0..slots).map(|_| 1.0 + SCALE * rng.symmetric().abs()));
                    v
                }
            };
            Record {
                name: spec.name,
                shape: spec.shape,
                data,
            }
        })
        .collect();
    WeightBundle {
        variant: cfg.variant,
        tau: cfg.tau,
        pcen: (cfg.variant == Variant::EdgeSpot).then(PcenParams::default),
        layers,
    }
}

/// Hand-set, untrained weights under which the network reduces to a fixed
/// linear read-out of the frontend output, so embeddings depend on the
/// input spectrum in a predictable way.
///
/// The stem copies even and odd mel bands into two channels. Every strided
/// transition doubles the number of such carrier channels, so after the
/// third stage carrier `b` at row `k` holds band `8k + b`. The last
/// transition sums adjacent carriers and the head depthwise kernel picks
/// one row per channel, giving 20 features, each the sum of two adjacent
/// bands. The value projection centers those features (subtracts their
/// mean); everything else is identity or zero. The embedding is therefore
/// the centered, time-averaged 20-band profile, padded with zeros.
///
/// Norm layers are identities except the stem norm of the baseline,
/// whose shift moves log-mel values above zero before the ReLU.
pub fn spectral_bundle(cfg: &ModelConfig) -> WeightBundle {
    const PAIRS: usize = 20;
    const LOG_SHIFT: f32 = 14.0;
    let plan = cfg.plan();
    let specs = manifest(cfg);
    let mut layers: Vec<Record> = specs
        .iter()
        .map(|spec| {
            let mut data = vec![0.0; spec.len()];
            if spec.kind == RecordKind::Norm {
                let slots = spec.shape[1];
                data[..slots].fill(1.0);
                data[3 * slots..].fill(1.0);
            }
            Record {
                name: spec.name.clone(),
                shape: spec.shape.clone(),
                data,
            }
        })
        .collect();
    let mut set = |name: &str, index: &[usize], value: f32| {
        let r = layers.iter_mut().find(|r| r.name == name).expect("manifest record");
        let flat = index
            .iter()
            .zip(&r.shape)
            .fold(0, |acc, (&i, &d)| acc * d + i);
        r.data[flat] = value;
    };

    // stem: row i of channel a holds band 2i + a
    set("stem.conv", &[0, 0, 2, 2], 1.0);
    set("stem.conv", &[1, 0, 3, 2], 1.0);
    if cfg.variant == Variant::BcResNet {
        for ch in 0..2 {
            set("stem.bn", &[1, ch], LOG_SHIFT);
        }
    }

    let last_stage = plan.blocks.last().map(|b| b.row);
    let mut carriers = 2;
    for b in plan.blocks.iter().filter(|b| b.has_projection()) {
        let (proj, freq) = (format!("{}.projection.conv", b.name), format!("{}.freq.conv", b.name));
        if Some(b.row) == last_stage {
            // feature q sums carriers 2p and 2p+1 with p = q / 5
            for q in 0..PAIRS {
                let p = q / 5;
                set(&proj, &[q, 2 * p, 0, 0], 1.0);
                set(&proj, &[q, 2 * p + 1, 0, 0], 1.0);
                set(&freq, &[q, 0, 1, 0], 1.0);
            }
        } else if b.freq_stride == 2 {
            // output row j reads input rows 2j (tap 1) and 2j + 1 (tap 2)
            for out in 0..2 * carriers {
                set(&proj, &[out, out % carriers, 0, 0], 1.0);
                set(&freq, &[out, 0, if out < carriers { 1 } else { 2 }, 0], 1.0);
            }
            carriers *= 2;
        } else {
            for c in 0..carriers {
                set(&proj, &[c, c, 0, 0], 1.0);
                set(&freq, &[c, 0, 1, 0], 1.0);
            }
        }
    }

    for q in 0..PAIRS {
        set("head.dw", &[q, 0, q % 5, 2], 1.0);
        set("head.pw", &[q, q, 0, 0], 1.0);
    }
    let centered = |i: usize, j: usize| if i == j { 1.0 - 1.0 / PAIRS as f32 } else { -1.0 / PAIRS as f32 };
    match cfg.variant {
        Variant::EdgeSpot => {
            for i in 0..PAIRS {
                for j in 0..PAIRS {
                    set("attention.w_v", &[i, j], centered(i, j));
                }
            }
            set("attention.prelu", &[0], 1.0);
            for t in 0..crate::model::FRAMES {
                set("aggregate.weight", &[t], 1.0 / crate::model::FRAMES as f32);
            }
        }
        Variant::BcResNet => {
            for i in 0..PAIRS {
                for j in 0..PAIRS {
                    set("proj.weight", &[j, i], centered(i, j));
                }
            }
        }
    }

    WeightBundle {
        variant: cfg.variant,
        tau: cfg.tau,
        pcen: (cfg.variant == Variant::EdgeSpot).then(PcenParams::default),
        layers,
    }
}
