//! Binary checkpoints: every tensor, accumulator, running statistic, config
//! scalar, and the PRNG position, in one CRC-guarded file, so a resumed or
//! reloaded run is bit-identical to one that never stopped.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "KDEH"  u32 version  record*  u32 crc32-of-everything-before
//! record: u32 name_len  name-bytes  u8 rank  u64[rank] dims  f32[prod(dims)]
//! ```
//!
//! Scalars ride along as tensors: integers and booleans as rank-0 values,
//! 64-bit quantities (f64 bit patterns, the seed, the PRNG word position) as
//! vectors of 16-bit limbs, least significant first, which an f32 stores
//! exactly.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{arr0, Array1, Array2, ArrayD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::rmsprop::RmspropState;
use super::TrainConfig;
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::net::{
    BatchNormParams, BiLstmParams, HeadParams, LstmDirectionParams, ModelState, TENSOR_NAMES,
};
use crate::text::PAD_ID;

const MAGIC: &[u8; 4] = b"KDEH";
pub const FORMAT_VERSION: u32 = 1;

/// A full training snapshot. Restoring one and continuing produces the same
/// stream of updates as the original uninterrupted run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Epochs completed when the snapshot was taken.
    pub epoch: usize,
    pub model: ModelState<f32>,
    pub opt: RmspropState<f32>,
    /// Shuffle PRNG, mid-stream.
    pub rng: ChaCha8Rng,
}

fn f64_to_limbs(v: f64) -> Vec<f32> {
    let bits = v.to_bits();
    (0..4).map(|k| ((bits >> (16 * k)) & 0xffff) as f32).collect()
}

fn u64_to_limbs(v: u64) -> Vec<f32> {
    (0..4).map(|k| ((v >> (16 * k)) & 0xffff) as f32).collect()
}

fn u128_to_limbs(v: u128) -> Vec<f32> {
    (0..8).map(|k| ((v >> (16 * k)) & 0xffff) as f32).collect()
}

fn limb_value(name: &str, v: f32) -> Result<u64> {
    if v.fract() != 0.0 || !(0.0..=65535.0).contains(&v) {
        return Err(Error::CorruptFile(format!(
            "record {name}: {v} is not a 16-bit limb"
        )));
    }
    Ok(v as u64)
}

fn limbs_to_u64(name: &str, limbs: &[f32]) -> Result<u64> {
    if limbs.len() != 4 {
        return Err(Error::CorruptFile(format!(
            "record {name}: expected 4 limbs, found {}",
            limbs.len()
        )));
    }
    let mut out = 0u64;
    for (k, &l) in limbs.iter().enumerate() {
        out |= limb_value(name, l)? << (16 * k);
    }
    Ok(out)
}

fn limbs_to_f64(name: &str, limbs: &[f32]) -> Result<f64> {
    Ok(f64::from_bits(limbs_to_u64(name, limbs)?))
}

fn limbs_to_u128(name: &str, limbs: &[f32]) -> Result<u128> {
    if limbs.len() != 8 {
        return Err(Error::CorruptFile(format!(
            "record {name}: expected 8 limbs, found {}",
            limbs.len()
        )));
    }
    let mut out = 0u128;
    for (k, &l) in limbs.iter().enumerate() {
        out |= (limb_value(name, l)? as u128) << (16 * k);
    }
    Ok(out)
}

fn push_record(buf: &mut Vec<u8>, name: &str, dims: &[u64], values: &[f32]) {
    let expected: u64 = dims.iter().product();
    debug_assert_eq!(expected as usize, values.len(), "record {name}");
    buf.write_u32::<LittleEndian>(name.len() as u32).unwrap();
    buf.extend_from_slice(name.as_bytes());
    buf.push(dims.len() as u8);
    for &d in dims {
        buf.write_u64::<LittleEndian>(d).unwrap();
    }
    for &v in values {
        buf.write_f32::<LittleEndian>(v).unwrap();
    }
}

fn push_scalar(buf: &mut Vec<u8>, name: &str, v: f32) {
    push_record(buf, name, &[], &[v]);
}

fn push_usize(buf: &mut Vec<u8>, name: &str, v: usize) {
    // Rank-0 f32 is exact for the sizes that occur here (< 2^24).
    debug_assert!(v < (1 << 24), "{name} = {v} exceeds exact f32 range");
    push_scalar(buf, name, v as f32);
}

fn push_bool(buf: &mut Vec<u8>, name: &str, v: bool) {
    push_scalar(buf, name, if v { 1.0 } else { 0.0 });
}

fn push_f64(buf: &mut Vec<u8>, name: &str, v: f64) {
    push_record(buf, name, &[4], &f64_to_limbs(v));
}

/// Serialize `ckpt` into the on-disk byte layout.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.write_u32::<LittleEndian>(FORMAT_VERSION).unwrap();

    let c = &ckpt.config;
    push_usize(&mut buf, "config.epochs", c.epochs);
    push_usize(&mut buf, "config.batch_size", c.batch_size);
    push_f64(&mut buf, "config.learning_rate", c.learning_rate);
    push_f64(&mut buf, "config.rho", c.rho);
    push_f64(&mut buf, "config.eps", c.eps);
    push_usize(&mut buf, "config.seq_len", c.seq_len);
    push_usize(&mut buf, "config.hidden", c.hidden);
    push_usize(&mut buf, "config.dim", c.dim);
    push_record(&mut buf, "config.seed", &[4], &u64_to_limbs(c.seed));
    push_bool(&mut buf, "config.shuffle", c.shuffle);
    push_bool(&mut buf, "config.clamp_eval", c.clamp_eval);
    push_bool(&mut buf, "config.mean_pool", c.mean_pool);
    push_bool(&mut buf, "config.relu_head", c.relu_head);
    push_f64(&mut buf, "config.bn_epsilon", c.bn_epsilon);
    push_f64(&mut buf, "config.bn_momentum", c.bn_momentum);
    if let Some(cap) = c.clip_norm {
        push_f64(&mut buf, "config.clip_norm", cap);
    }
    push_usize(&mut buf, "epoch", ckpt.epoch);

    for (name, view) in ckpt.model.tensors() {
        let dims: Vec<u64> = view.shape().iter().map(|&d| d as u64).collect();
        let values: Vec<f32> = view.iter().copied().collect();
        push_record(&mut buf, name, &dims, &values);
    }
    let bn = &ckpt.model.bn;
    push_record(
        &mut buf,
        "bn.running_mean",
        &[bn.running_mean.len() as u64],
        bn.running_mean.as_slice().unwrap(),
    );
    push_record(
        &mut buf,
        "bn.running_var",
        &[bn.running_var.len() as u64],
        bn.running_var.as_slice().unwrap(),
    );

    for (k, name) in TENSOR_NAMES.iter().enumerate() {
        let acc = &ckpt.opt.acc[k];
        let dims: Vec<u64> = acc.shape().iter().map(|&d| d as u64).collect();
        let values: Vec<f32> = acc.iter().copied().collect();
        push_record(&mut buf, &format!("opt.{name}"), &dims, &values);
    }

    let seed_vals: Vec<f32> = ckpt.rng.get_seed().iter().map(|&b| b as f32).collect();
    push_record(&mut buf, "rng.seed", &[32], &seed_vals);
    push_record(
        &mut buf,
        "rng.word_pos",
        &[8],
        &u128_to_limbs(ckpt.rng.get_word_pos()),
    );

    let crc = crc32fast::hash(&buf);
    buf.write_u32::<LittleEndian>(crc).unwrap();
    buf
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = encode_checkpoint(ckpt);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

struct Record {
    dims: Vec<u64>,
    values: Vec<f32>,
}

struct RecordSet {
    records: HashMap<String, Record>,
}

impl RecordSet {
    fn take(&mut self, name: &str) -> Result<Record> {
        self.records
            .remove(name)
            .ok_or_else(|| Error::CorruptFile(format!("missing record {name}")))
    }

    fn take_maybe(&mut self, name: &str) -> Option<Record> {
        self.records.remove(name)
    }

    fn scalar(&mut self, name: &str) -> Result<f32> {
        let rec = self.take(name)?;
        if !rec.dims.is_empty() || rec.values.len() != 1 {
            return Err(Error::CorruptFile(format!(
                "record {name}: expected a rank-0 scalar"
            )));
        }
        Ok(rec.values[0])
    }

    fn usize(&mut self, name: &str) -> Result<usize> {
        let v = self.scalar(name)?;
        if v.fract() != 0.0 || v < 0.0 || v > (1u32 << 24) as f32 {
            return Err(Error::CorruptFile(format!(
                "record {name}: {v} is not a valid count"
            )));
        }
        Ok(v as usize)
    }

    fn bool(&mut self, name: &str) -> Result<bool> {
        match self.scalar(name)? {
            v if v == 0.0 => Ok(false),
            v if v == 1.0 => Ok(true),
            v => Err(Error::CorruptFile(format!(
                "record {name}: {v} is not a boolean flag"
            ))),
        }
    }

    fn f64(&mut self, name: &str) -> Result<f64> {
        let rec = self.take(name)?;
        limbs_to_f64(name, &rec.values)
    }

    fn array1(&mut self, name: &str) -> Result<Array1<f32>> {
        let rec = self.take(name)?;
        if rec.dims.len() != 1 {
            return Err(Error::CorruptFile(format!(
                "record {name}: expected rank 1, found rank {}",
                rec.dims.len()
            )));
        }
        Ok(Array1::from_vec(rec.values))
    }

    fn array2(&mut self, name: &str) -> Result<Array2<f32>> {
        let rec = self.take(name)?;
        if rec.dims.len() != 2 {
            return Err(Error::CorruptFile(format!(
                "record {name}: expected rank 2, found rank {}",
                rec.dims.len()
            )));
        }
        let shape = (rec.dims[0] as usize, rec.dims[1] as usize);
        Array2::from_shape_vec(shape, rec.values)
            .map_err(|e| Error::CorruptFile(format!("record {name}: {e}")))
    }

    fn array0(&mut self, name: &str) -> Result<ndarray::Array0<f32>> {
        let rec = self.take(name)?;
        if !rec.dims.is_empty() || rec.values.len() != 1 {
            return Err(Error::CorruptFile(format!(
                "record {name}: expected a rank-0 scalar"
            )));
        }
        Ok(arr0(rec.values[0]))
    }

    fn dyn_array(&mut self, name: &str) -> Result<ArrayD<f32>> {
        let rec = self.take(name)?;
        let shape: Vec<usize> = rec.dims.iter().map(|&d| d as usize).collect();
        ArrayD::from_shape_vec(shape, rec.values)
            .map_err(|e| Error::CorruptFile(format!("record {name}: {e}")))
    }
}

fn parse_records(body: &[u8]) -> Result<RecordSet> {
    let mut records = HashMap::new();
    let mut cur = std::io::Cursor::new(body);
    let total = body.len() as u64;
    while cur.position() < total {
        let name_len = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::CorruptFile("truncated record header".into()))? as usize;
        if name_len == 0 || name_len > 4096 {
            return Err(Error::CorruptFile(format!(
                "record name length {name_len} out of range"
            )));
        }
        let mut name_bytes = vec![0u8; name_len];
        cur.read_exact(&mut name_bytes)
            .map_err(|_| Error::CorruptFile("truncated record name".into()))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::CorruptFile("record name is not UTF-8".into()))?;
        let rank = cur
            .read_u8()
            .map_err(|_| Error::CorruptFile(format!("record {name}: missing rank")))?
            as usize;
        let mut dims = Vec::with_capacity(rank);
        let mut count: u64 = 1;
        for _ in 0..rank {
            let d = cur
                .read_u64::<LittleEndian>()
                .map_err(|_| Error::CorruptFile(format!("record {name}: truncated dims")))?;
            count = count
                .checked_mul(d)
                .filter(|&c| c <= (1 << 32))
                .ok_or_else(|| {
                    Error::CorruptFile(format!("record {name}: implausible element count"))
                })?;
            dims.push(d);
        }
        let mut values = vec![0f32; count as usize];
        cur.read_f32_into::<LittleEndian>(&mut values)
            .map_err(|_| Error::CorruptFile(format!("record {name}: truncated values")))?;
        if records
            .insert(name.clone(), Record { dims, values })
            .is_some()
        {
            return Err(Error::CorruptFile(format!("duplicate record {name}")));
        }
    }
    Ok(RecordSet { records })
}

/// Decode checkpoint bytes: magic, then version (its own error kind), then
/// the trailing CRC over everything before it, then the records.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 12 {
        return Err(Error::CorruptFile(format!(
            "file too short ({} bytes) to be a checkpoint",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::CorruptFile(
            "bad magic: not a checkpoint file".into(),
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let crc_offset = bytes.len() - 4;
    let stored_crc = u32::from_le_bytes(bytes[crc_offset..].try_into().unwrap());
    let actual_crc = crc32fast::hash(&bytes[..crc_offset]);
    if stored_crc != actual_crc {
        return Err(Error::CorruptFile(format!(
            "checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )));
    }
    let mut set = parse_records(&bytes[8..crc_offset])?;

    let config = TrainConfig {
        epochs: set.usize("config.epochs")?,
        batch_size: set.usize("config.batch_size")?,
        learning_rate: set.f64("config.learning_rate")?,
        rho: set.f64("config.rho")?,
        eps: set.f64("config.eps")?,
        seq_len: set.usize("config.seq_len")?,
        hidden: set.usize("config.hidden")?,
        dim: set.usize("config.dim")?,
        seed: {
            let rec = set.take("config.seed")?;
            limbs_to_u64("config.seed", &rec.values)?
        },
        shuffle: set.bool("config.shuffle")?,
        clamp_eval: set.bool("config.clamp_eval")?,
        mean_pool: set.bool("config.mean_pool")?,
        relu_head: set.bool("config.relu_head")?,
        bn_epsilon: set.f64("config.bn_epsilon")?,
        bn_momentum: set.f64("config.bn_momentum")?,
        clip_norm: match set.take_maybe("config.clip_norm") {
            Some(rec) => Some(limbs_to_f64("config.clip_norm", &rec.values)?),
            None => None,
        },
    };
    let epoch = set.usize("epoch")?;

    let weights = set.array2("param.embedding")?;
    let mut row_trainable = vec![true; weights.nrows()];
    if PAD_ID < row_trainable.len() {
        row_trainable[PAD_ID] = false;
    }
    let embedding = EmbeddingTable {
        weights,
        row_trainable,
    };
    let bilstm = BiLstmParams {
        fwd: LstmDirectionParams {
            w: set.array2("param.lstm_fwd.w")?,
            v: set.array2("param.lstm_fwd.v")?,
            b: set.array1("param.lstm_fwd.b")?,
        },
        bwd: LstmDirectionParams {
            w: set.array2("param.lstm_bwd.w")?,
            v: set.array2("param.lstm_bwd.v")?,
            b: set.array1("param.lstm_bwd.b")?,
        },
    };
    let bn = BatchNormParams {
        gamma: set.array1("param.bn.gamma")?,
        beta: set.array1("param.bn.beta")?,
        running_mean: set.array1("bn.running_mean")?,
        running_var: set.array1("bn.running_var")?,
        epsilon: config.bn_epsilon as f32,
        momentum: config.bn_momentum as f32,
    };
    let head = HeadParams {
        weight: set.array1("param.head.weight")?,
        bias: set.array0("param.head.bias")?,
    };
    let model = ModelState {
        config: config.model_config(),
        embedding,
        bilstm,
        bn,
        head,
    };
    check_model_shapes(&model, &config)?;

    let mut acc = Vec::with_capacity(TENSOR_NAMES.len());
    for name in TENSOR_NAMES {
        acc.push(set.dyn_array(&format!("opt.{name}"))?);
    }
    for (k, (name, view)) in model.tensors().into_iter().enumerate() {
        if acc[k].shape() != view.shape() {
            return Err(Error::CorruptFile(format!(
                "opt.{name} shape {:?} does not match its parameter {:?}",
                acc[k].shape(),
                view.shape()
            )));
        }
    }
    let opt = RmspropState { acc };

    let seed_rec = set.take("rng.seed")?;
    if seed_rec.values.len() != 32 {
        return Err(Error::CorruptFile(format!(
            "rng.seed: expected 32 bytes, found {}",
            seed_rec.values.len()
        )));
    }
    let mut seed = [0u8; 32];
    for (dst, &v) in seed.iter_mut().zip(&seed_rec.values) {
        if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
            return Err(Error::CorruptFile(format!(
                "rng.seed: {v} is not a byte value"
            )));
        }
        *dst = v as u8;
    }
    let word_pos_rec = set.take("rng.word_pos")?;
    let word_pos = limbs_to_u128("rng.word_pos", &word_pos_rec.values)?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_word_pos(word_pos);

    Ok(Checkpoint {
        config,
        epoch,
        model,
        opt,
        rng,
    })
}

fn check_model_shapes(model: &ModelState<f32>, config: &TrainConfig) -> Result<()> {
    let h = config.hidden;
    let d = config.dim;
    let checks: [(&str, &[usize], Vec<usize>); 9] = [
        (
            "param.embedding",
            model.embedding.weights.shape(),
            vec![model.embedding.weights.nrows(), d],
        ),
        ("param.lstm_fwd.w", model.bilstm.fwd.w.shape(), vec![4 * h, d]),
        ("param.lstm_fwd.v", model.bilstm.fwd.v.shape(), vec![4 * h, h]),
        ("param.lstm_fwd.b", model.bilstm.fwd.b.shape(), vec![4 * h]),
        ("param.lstm_bwd.w", model.bilstm.bwd.w.shape(), vec![4 * h, d]),
        ("param.lstm_bwd.v", model.bilstm.bwd.v.shape(), vec![4 * h, h]),
        ("param.lstm_bwd.b", model.bilstm.bwd.b.shape(), vec![4 * h]),
        ("param.bn.gamma", model.bn.gamma.shape(), vec![2 * h]),
        ("param.head.weight", model.head.weight.shape(), vec![2 * h]),
    ];
    for (name, found, expected) in checks {
        if found != expected.as_slice() {
            return Err(Error::CorruptFile(format!(
                "{name} has shape {found:?}, config implies {expected:?}"
            )));
        }
    }
    for (name, arr) in [
        ("param.bn.beta", &model.bn.beta),
        ("bn.running_mean", &model.bn.running_mean),
        ("bn.running_var", &model.bn.running_var),
    ] {
        if arr.len() != 2 * h {
            return Err(Error::CorruptFile(format!(
                "{name} has {} features, config implies {}",
                arr.len(),
                2 * h
            )));
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Example;
    use crate::net::{model_forward, Mode};
    use crate::train::tests::{toy_dataset, toy_setup};
    use crate::train::{train, TrainConfig};
    use rand::RngCore;
    use tempfile::tempdir;

    fn trained_checkpoint() -> Checkpoint {
        let config = TrainConfig {
            epochs: 3,
            batch_size: 8,
            learning_rate: 0.01,
            seq_len: 6,
            hidden: 4,
            dim: 5,
            seed: 11,
            clip_norm: Some(5.0),
            ..TrainConfig::default()
        };
        let data = toy_dataset(20, 10, config.seq_len);
        let (model, rng) = toy_setup(&config, 10);
        let out = train(&data, None, model, &config, rng, |_| {}).unwrap();
        Checkpoint {
            config,
            epoch: 3,
            model: out.model,
            opt: out.opt,
            rng: out.rng,
        }
    }

    fn infer(ckpt: &Checkpoint, data: &[Example]) -> Vec<f32> {
        let fwd = model_forward(data, &ckpt.model, Mode::Infer).unwrap();
        fwd.preds.to_vec()
    }

    #[test]
    fn round_trip_is_bitwise_identical() {
        let ckpt = trained_checkpoint();
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &ckpt).unwrap();

        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, ckpt);

        // Same predictions, bit for bit.
        let data = toy_dataset(7, 10, ckpt.config.seq_len);
        let before = infer(&ckpt, &data);
        let after = infer(&loaded, &data);
        assert_eq!(
            before.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            after.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );

        // Re-encoding the loaded state reproduces the file exactly.
        let original = std::fs::read(&path).unwrap();
        assert_eq!(encode_checkpoint(&loaded), original);
    }

    #[test]
    fn rng_position_survives_round_trip() {
        let mut ckpt = trained_checkpoint();
        // Burn some words so the position is mid-block.
        for _ in 0..13 {
            ckpt.rng.next_u32();
        }
        let bytes = encode_checkpoint(&ckpt);
        let mut loaded = decode_checkpoint(&bytes).unwrap();
        assert_eq!(loaded.rng, ckpt.rng);
        let mut expected = ckpt.rng.clone();
        for _ in 0..50 {
            assert_eq!(loaded.rng.next_u64(), expected.next_u64());
        }
    }

    #[test]
    fn clip_norm_none_round_trips() {
        let mut ckpt = trained_checkpoint();
        ckpt.config.clip_norm = None;
        let bytes = encode_checkpoint(&ckpt);
        let loaded = decode_checkpoint(&bytes).unwrap();
        assert_eq!(loaded.config.clip_norm, None);
        assert_eq!(loaded, ckpt);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let ckpt = trained_checkpoint();
        let bytes = encode_checkpoint(&ckpt);
        for cut in [bytes.len() - 1, bytes.len() / 2, 13, 9] {
            let err = decode_checkpoint(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, Error::CorruptFile(_)),
                "cut at {cut}: {err:?}"
            );
        }
    }

    #[test]
    fn corrupted_payload_fails_the_checksum() {
        let ckpt = trained_checkpoint();
        let mut bytes = encode_checkpoint(&ckpt);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        let err = decode_checkpoint(&bytes).unwrap_err();
        assert!(matches!(err, Error::CorruptFile(msg) if msg.contains("checksum")));
    }

    #[test]
    fn future_version_is_reported_as_mismatch() {
        let ckpt = trained_checkpoint();
        let mut bytes = encode_checkpoint(&ckpt);
        bytes[4] = 2; // bump the version field
        // CRC is checked after the version, so no need to re-sign.
        let err = decode_checkpoint(&bytes).unwrap_err();
        assert!(
            matches!(
                err,
                Error::VersionMismatch {
                    expected: 1,
                    found: 2
                }
            ),
            "{err:?}"
        );
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let ckpt = trained_checkpoint();
        let mut bytes = encode_checkpoint(&ckpt);
        bytes[0] = b'X';
        let err = decode_checkpoint(&bytes).unwrap_err();
        assert!(matches!(err, Error::CorruptFile(msg) if msg.contains("magic")));
    }

    #[test]
    fn missing_record_is_named() {
        // Rebuild the byte stream without the head bias record.
        let ckpt = trained_checkpoint();
        let bytes = encode_checkpoint(&ckpt);
        let body = &bytes[8..bytes.len() - 4];
        let mut out = bytes[..8].to_vec();
        let mut cur = std::io::Cursor::new(body);
        while (cur.position() as usize) < body.len() {
            let start = cur.position() as usize;
            let name_len = cur.read_u32::<LittleEndian>().unwrap() as usize;
            let mut name = vec![0u8; name_len];
            cur.read_exact(&mut name).unwrap();
            let rank = cur.read_u8().unwrap() as usize;
            let mut count = 1u64;
            for _ in 0..rank {
                count *= cur.read_u64::<LittleEndian>().unwrap();
            }
            cur.set_position(cur.position() + 4 * count);
            let end = cur.position() as usize;
            if name != b"param.head.bias" {
                out.extend_from_slice(&body[start..end]);
            }
        }
        let crc = crc32fast::hash(&out);
        out.write_u32::<LittleEndian>(crc).unwrap();
        let err = decode_checkpoint(&out).unwrap_err();
        assert!(
            matches!(&err, Error::CorruptFile(msg) if msg.contains("param.head.bias")),
            "{err:?}"
        );
    }

    #[test]
    fn pad_row_is_frozen_after_load() {
        let ckpt = trained_checkpoint();
        let loaded = decode_checkpoint(&encode_checkpoint(&ckpt)).unwrap();
        assert!(!loaded.model.embedding.row_trainable[crate::text::PAD_ID]);
        assert!(loaded.model.embedding.row_trainable[2..].iter().all(|&t| t));
    }
}
