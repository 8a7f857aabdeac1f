//! Binary model files.
//!
//! Layout, little-endian: magic `DSMD`, `u32` version, `u8` kind
//! (0 turn, 1 sentence), `u32` round, `u32` input dim, `u32` hidden dim,
//! `u32` output count, one length-prefixed (`u8`) UTF-8 name per output in
//! label order, then every parameter as `f32` in flat order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::mlp::{Mlp, OutputKind};
use super::{SentenceModel, TurnModel};
use crate::{Error, Result, Scalar, SectionLabel};

const MAGIC: &[u8; 4] = b"DSMD";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Turn,
    Sentence,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelArtifact<T> {
    Turn(TurnModel<T>),
    Sentence(SentenceModel<T>),
}

impl<T: Scalar> ModelArtifact<T> {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelArtifact::Turn(_) => ModelKind::Turn,
            ModelArtifact::Sentence(_) => ModelKind::Sentence,
        }
    }

    fn net(&self) -> &Mlp<T> {
        match self {
            ModelArtifact::Turn(m) => &m.net,
            ModelArtifact::Sentence(m) => &m.net,
        }
    }

    fn round(&self) -> usize {
        match self {
            ModelArtifact::Turn(_) => 0,
            ModelArtifact::Sentence(m) => m.round,
        }
    }
}

pub fn write_model<T: Scalar, W: Write>(model: &ModelArtifact<T>, mut w: W) -> Result<()> {
    let net = model.net();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[match model.kind() {
        ModelKind::Turn => 0u8,
        ModelKind::Sentence => 1u8,
    }])?;
    for n in [model.round(), net.input_dim(), net.hidden_dim(), net.output_dim()] {
        let n = u32::try_from(n).map_err(|_| Error::ModelFormat("dimension exceeds u32".into()))?;
        w.write_all(&n.to_le_bytes())?;
    }
    for l in SectionLabel::ALL {
        let name = l.as_str().as_bytes();
        w.write_all(&[name.len() as u8])?;
        w.write_all(name)?;
    }
    for p in net.params() {
        w.write_all(&p.to_f32_le())?;
    }
    Ok(())
}

pub fn read_model<T: Scalar, R: Read>(mut r: R) -> Result<ModelArtifact<T>> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::ModelFormat("not a model file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::ModelFormat(format!("unsupported version {version}")));
    }
    let mut kind = [0u8; 1];
    read_exact(&mut r, &mut kind)?;
    let round = read_u32(&mut r)? as usize;
    let input = read_u32(&mut r)? as usize;
    let hidden = read_u32(&mut r)? as usize;
    let outputs = read_u32(&mut r)? as usize;
    if outputs != SectionLabel::COUNT {
        return Err(Error::ModelFormat(format!("expected {} outputs, found {outputs}", SectionLabel::COUNT)));
    }
    for l in SectionLabel::ALL {
        let mut len = [0u8; 1];
        read_exact(&mut r, &mut len)?;
        let mut name = vec![0u8; len[0] as usize];
        read_exact(&mut r, &mut name)?;
        if name != l.as_str().as_bytes() {
            return Err(Error::ModelFormat(format!(
                "output {} is `{}`, expected `{l}`",
                l.index(),
                String::from_utf8_lossy(&name)
            )));
        }
    }
    let n = Mlp::<T>::param_count(input, hidden, outputs);
    let mut bytes = vec![0u8; n * 4];
    read_exact(&mut r, &mut bytes)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::ModelFormat("trailing bytes after parameters".into()));
    }
    let params = bytes
        .chunks_exact(4)
        .map(|c| T::of(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))))
        .collect();
    match kind[0] {
        0 => Ok(ModelArtifact::Turn(TurnModel::from_net(Mlp::from_params(
            input,
            hidden,
            outputs,
            OutputKind::Sigmoid,
            params,
        )?)?)),
        1 => Ok(ModelArtifact::Sentence(SentenceModel::from_net(
            Mlp::from_params(input, hidden, outputs, OutputKind::Softmax, params)?,
            round,
        )?)),
        k => Err(Error::ModelFormat(format!("unknown model kind {k}"))),
    }
}

pub fn save_model<T: Scalar>(model: &ModelArtifact<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<ModelArtifact<T>> {
    read_model(BufReader::new(File::open(path)?))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::ModelFormat("truncated model file".into()),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_f32_parameters() {
        let m = SentenceModel::<f32>::new(7, 3, 4, 1);
        let a = ModelArtifact::Sentence(m.clone());
        let mut buf = Vec::new();
        write_model(&a, &mut buf).unwrap();
        let b: ModelArtifact<f32> = read_model(buf.as_slice()).unwrap();
        assert_eq!(a, b);
        let t = ModelArtifact::Turn(TurnModel::<f64>::new(5, 2, 0));
        let mut buf = Vec::new();
        write_model(&t, &mut buf).unwrap();
        let back: ModelArtifact<f64> = read_model(buf.as_slice()).unwrap();
        assert_eq!(back.kind(), ModelKind::Turn);
    }

    #[test]
    fn truncation_and_trailing_bytes_rejected() {
        let a = ModelArtifact::Sentence(SentenceModel::<f32>::new(4, 2, 1, 1));
        let mut buf = Vec::new();
        write_model(&a, &mut buf).unwrap();
        assert!(read_model::<f32, _>(&buf[..buf.len() - 1]).is_err());
        buf.push(0);
        assert!(read_model::<f32, _>(buf.as_slice()).is_err());
        assert!(read_model::<f32, _>(&b"XXXX"[..]).is_err());
    }
}
