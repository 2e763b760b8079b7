//! Self-describing checkpoint container.
//!
//! Layout: an 8-byte magic, a format version, a JSON header with the
//! model configuration, loss settings, optimizer hyperparameters and the
//! training seed, then the flat parameter vector as little-endian `f64`
//! in the order documented on [`AutoencoderParams::flatten`], and finally
//! the optional optimizer state (step count plus both moment vectors) so
//! training can resume exactly. Writing the same state twice produces
//! byte-identical files.

use std::io::{Read, Write};
use std::path::Path;

use crate::loss::LossConfig;
use crate::model::{AutoencoderParams, ModelConfig};
use crate::optim::{RAdamHyper, RAdamState};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"WFDLCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub hyper: RAdamHyper,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Vec<f64>,
    pub optimizer: Option<RAdamState>,
}

impl Checkpoint {
    pub fn new(
        params: &AutoencoderParams,
        loss: LossConfig,
        hyper: RAdamHyper,
        seed: u64,
        optimizer: Option<RAdamState>,
    ) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                model: params.config.clone(),
                loss,
                hyper,
                seed,
            },
            params: params.flatten(),
            optimizer,
        }
    }

    /// Rebuild the model this checkpoint was taken from.
    pub fn to_model(&self) -> Result<AutoencoderParams> {
        let mut model = AutoencoderParams::init(&self.meta.model, self.meta.seed)?;
        model.load_flat(&self.params)?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.meta)
            .map_err(|e| Error::CheckpointFormat(format!("header encoding failed: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for v in &self.params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        match &self.optimizer {
            None => out.push(0),
            Some(state) => {
                if state.first_moment.len() != self.params.len()
                    || state.second_moment.len() != self.params.len()
                {
                    return Err(Error::CheckpointFormat(
                        "optimizer moments do not match parameter count".into(),
                    ));
                }
                out.push(1);
                out.extend_from_slice(&state.step_count.to_le_bytes());
                for v in state.first_moment.iter().chain(&state.second_moment) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut cursor = std::io::Cursor::new(bytes);
        let mut magic = [0u8; 8];
        read_exact(&mut cursor, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::CheckpointFormat("bad magic".into()));
        }
        let version = read_u32(&mut cursor)?;
        if version != VERSION {
            return Err(Error::CheckpointFormat(format!(
                "unsupported version {version}"
            )));
        }
        let header_len = read_u64(&mut cursor)? as usize;
        let mut header = vec![0u8; header_len];
        read_exact(&mut cursor, &mut header)?;
        let meta: CheckpointMeta = serde_json::from_slice(&header)
            .map_err(|e| Error::CheckpointFormat(format!("header decoding failed: {e}")))?;
        let count = read_u64(&mut cursor)? as usize;
        let params = read_f64s(&mut cursor, count)?;
        let mut flag = [0u8; 1];
        read_exact(&mut cursor, &mut flag)?;
        let optimizer = match flag[0] {
            0 => None,
            1 => {
                let step_count = read_u64(&mut cursor)?;
                let first_moment = read_f64s(&mut cursor, count)?;
                let second_moment = read_f64s(&mut cursor, count)?;
                Some(RAdamState {
                    step_count,
                    first_moment,
                    second_moment,
                })
            }
            other => {
                return Err(Error::CheckpointFormat(format!(
                    "bad optimizer flag {other}"
                )))
            }
        };
        Ok(Checkpoint {
            meta,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        file.write_all(&bytes).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Checkpoint::from_bytes(&bytes)
    }
}

fn read_exact(cursor: &mut std::io::Cursor<&[u8]>, buf: &mut [u8]) -> Result<()> {
    cursor
        .read_exact(buf)
        .map_err(|_| Error::CheckpointFormat("truncated checkpoint".into()))
}

fn read_u32(cursor: &mut std::io::Cursor<&[u8]>) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(cursor, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(cursor: &mut std::io::Cursor<&[u8]>) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(cursor, &mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64s(cursor: &mut std::io::Cursor<&[u8]>, count: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        read_exact(cursor, &mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::radam_init;

    fn sample_checkpoint() -> Checkpoint {
        let config = ModelConfig::tiny();
        let model = AutoencoderParams::init(&config, 5).unwrap();
        let mut state = radam_init(model.param_count());
        state.step_count = 12;
        state.first_moment[3] = 0.25;
        Checkpoint::new(
            &model,
            LossConfig::default(),
            RAdamHyper::default(),
            5,
            Some(state),
        )
    }

    #[test]
    fn round_trip_preserves_everything() {
        let ckpt = sample_checkpoint();
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(ckpt, back);

        let model = ckpt.to_model().unwrap();
        assert_eq!(model.flatten(), ckpt.params);
    }

    #[test]
    fn serialization_is_byte_stable() {
        let ckpt = sample_checkpoint();
        assert_eq!(ckpt.to_bytes().unwrap(), ckpt.to_bytes().unwrap());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = sample_checkpoint();
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"not a checkpoint").is_err());
        let mut bytes = sample_checkpoint().to_bytes().unwrap();
        bytes.truncate(bytes.len() - 4);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
