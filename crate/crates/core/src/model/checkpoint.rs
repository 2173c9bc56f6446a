//! ACKP checkpoint format: model configuration, seed, epoch, then every
//! parameter and batch-norm statistic in declaration order as
//! little-endian single-precision arrays tagged with name and shape.

use std::io::{Read, Write};
use std::path::Path;

use super::{build_model, AttentionMode, AttentionSetting, Model, ModelConfig, ModelKind};
use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: [u8; 4] = *b"ACKP";
const CHECKPOINT_VERSION: u16 = 1;

fn kind_tag(kind: ModelKind) -> u8 {
    match kind {
        ModelKind::Acnn => 0,
        ModelKind::KspaceUnet => 1,
        ModelKind::ImageUnet => 2,
    }
}

fn kind_from_tag(tag: u8) -> Result<ModelKind> {
    Ok(match tag {
        0 => ModelKind::Acnn,
        1 => ModelKind::KspaceUnet,
        2 => ModelKind::ImageUnet,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown model kind tag {other}"
            )))
        }
    })
}

fn attention_tag(setting: AttentionSetting) -> u8 {
    match setting {
        AttentionSetting::None => 0,
        AttentionSetting::ChannelOnly => 1,
        AttentionSetting::FrequencyOnly => 2,
        AttentionSetting::Both(AttentionMode::Parallel) => 3,
        AttentionSetting::Both(AttentionMode::ChannelThenFrequency) => 4,
        AttentionSetting::Both(AttentionMode::FrequencyThenChannel) => 5,
    }
}

fn attention_from_tag(tag: u8) -> Result<AttentionSetting> {
    Ok(match tag {
        0 => AttentionSetting::None,
        1 => AttentionSetting::ChannelOnly,
        2 => AttentionSetting::FrequencyOnly,
        3 => AttentionSetting::Both(AttentionMode::Parallel),
        4 => AttentionSetting::Both(AttentionMode::ChannelThenFrequency),
        5 => AttentionSetting::Both(AttentionMode::FrequencyThenChannel),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown attention tag {other}"
            )))
        }
    })
}

pub fn save_checkpoint(path: &Path, model: &Model, epoch: u32) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&CHECKPOINT_MAGIC)?;
    f.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;

    let cfg = &model.config;
    f.write_all(&[kind_tag(cfg.kind)])?;
    f.write_all(&(cfg.s as u32).to_le_bytes())?;
    f.write_all(&(cfg.n_coils as u32).to_le_bytes())?;
    f.write_all(&(cfg.encoder_widths.len() as u32).to_le_bytes())?;
    for w in &cfg.encoder_widths {
        f.write_all(&(*w as u32).to_le_bytes())?;
    }
    f.write_all(&(cfg.bottleneck_width as u32).to_le_bytes())?;
    f.write_all(&(cfg.final_hidden_width as u32).to_le_bytes())?;
    f.write_all(&[attention_tag(cfg.attention)])?;
    f.write_all(&(cfg.input_size as u32).to_le_bytes())?;

    f.write_all(&model.init_seed.to_le_bytes())?;
    f.write_all(&epoch.to_le_bytes())?;

    f.write_all(&(model.graph.params().len() as u32).to_le_bytes())?;
    for p in model.graph.params() {
        let name = p.name.as_bytes();
        f.write_all(&(name.len() as u16).to_le_bytes())?;
        f.write_all(name)?;
        f.write_all(&[p.shape.len() as u8])?;
        for d in &p.shape {
            f.write_all(&(*d as u32).to_le_bytes())?;
        }
        for v in &p.values {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u16(f: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    f.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(f: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    f.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(f: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    f.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_u8(f: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    f.read_exact(&mut b)?;
    Ok(b[0])
}

/// Rebuild the model from a checkpoint; returns the model and the epoch it
/// was saved at.
pub fn load_checkpoint(path: &Path) -> Result<(Model, u32)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let version = read_u16(&mut f)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion { found: version });
    }

    let kind = kind_from_tag(read_u8(&mut f)?)?;
    let s = read_u32(&mut f)? as usize;
    let n_coils = read_u32(&mut f)? as usize;
    let n_widths = read_u32(&mut f)? as usize;
    let mut encoder_widths = Vec::with_capacity(n_widths);
    for _ in 0..n_widths {
        encoder_widths.push(read_u32(&mut f)? as usize);
    }
    let bottleneck_width = read_u32(&mut f)? as usize;
    let final_hidden_width = read_u32(&mut f)? as usize;
    let attention = attention_from_tag(read_u8(&mut f)?)?;
    let input_size = read_u32(&mut f)? as usize;

    let init_seed = read_u64(&mut f)?;
    let epoch = read_u32(&mut f)?;

    let config = ModelConfig {
        kind,
        s,
        n_coils,
        encoder_widths,
        bottleneck_width,
        final_hidden_width,
        attention,
        input_size,
    };
    let mut model = build_model(&config, init_seed)?;

    let n_params = read_u32(&mut f)? as usize;
    if n_params != model.graph.params().len() {
        return Err(Error::InvalidArgument(format!(
            "checkpoint has {n_params} parameters, model declares {}",
            model.graph.params().len()
        )));
    }
    for i in 0..n_params {
        let name_len = read_u16(&mut f)? as usize;
        let mut name = vec![0u8; name_len];
        f.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::InvalidArgument("non-UTF8 parameter name".into()))?;
        let rank = read_u8(&mut f)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut f)? as usize);
        }
        let p = &mut model.graph.params_mut()[i];
        if p.name != name || p.shape != shape {
            return Err(Error::InvalidArgument(format!(
                "checkpoint parameter '{name}' {shape:?} does not match declared '{}' {:?}",
                p.name, p.shape
            )));
        }
        let count: usize = shape.iter().product();
        let mut bytes = vec![0u8; count * 4];
        f.read_exact(&mut bytes).map_err(|_| Error::Truncated {
            expected: (count * 4) as u64,
            found: 0,
        })?;
        for (v, chunk) in p.values.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    Ok((model, epoch))
}
