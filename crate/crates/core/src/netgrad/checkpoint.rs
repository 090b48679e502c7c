//! Binary checkpoint format.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! b"DIFLO\x01"
//! u32 layer_count
//! per layer: u32 rows, u32 cols, rows*cols f64 (row-major weights), rows f64 (biases)
//! u64 metadata_len, metadata_len bytes of JSON
//! ```

use std::io::{Read, Write};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::MlpParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"DIFLO\x01";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub widths: Vec<usize>,
    pub seed: u64,
    pub config_hash: String,
    /// Serialized experiment configuration the network was trained with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<String>,
}

pub fn write_checkpoint<T: Scalar, W: Write>(mut w: W, params: &MlpParams<T>, meta: &CheckpointMeta) -> Result<()> {
    params.validate()?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(params.n_layers() as u32).to_le_bytes())?;
    for (wt, b) in params.layer_weights.iter().zip(&params.layer_biases) {
        w.write_all(&(wt.nrows() as u32).to_le_bytes())?;
        w.write_all(&(wt.ncols() as u32).to_le_bytes())?;
        for v in wt.iter().chain(b.iter()) {
            w.write_all(&v.to_f64_lossy().to_le_bytes())?;
        }
    }
    let json = serde_json::to_vec(meta)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<(MlpParams<T>, CheckpointMeta)> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let n_layers = read_u32(&mut r)? as usize;
    if n_layers == 0 || n_layers > 1024 {
        return Err(Error::Checkpoint(format!("implausible layer count {n_layers}")));
    }
    let mut widths = Vec::with_capacity(n_layers + 1);
    let mut layer_weights = Vec::with_capacity(n_layers);
    let mut layer_biases = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        if l == 0 {
            widths.push(cols);
        } else if cols != widths[l] {
            return Err(Error::Checkpoint(format!(
                "layer {l} expects {cols} inputs but previous layer emits {}",
                widths[l]
            )));
        }
        widths.push(rows);
        let mut wdata = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            wdata.push(T::lit(read_f64(&mut r)?));
        }
        let mut bdata = Vec::with_capacity(rows);
        for _ in 0..rows {
            bdata.push(T::lit(read_f64(&mut r)?));
        }
        layer_weights.push(Array2::from_shape_vec((rows, cols), wdata).map_err(|e| Error::Checkpoint(e.to_string()))?);
        layer_biases.push(Array1::from_vec(bdata));
    }
    let meta_len = read_u64(&mut r)? as usize;
    let mut json = vec![0u8; meta_len];
    r.read_exact(&mut json)
        .map_err(|_| Error::Checkpoint("truncated metadata".into()))?;
    let meta: CheckpointMeta = serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if meta.widths != widths {
        return Err(Error::Checkpoint(format!(
            "metadata widths {:?} disagree with layer shapes {:?}",
            meta.widths, widths
        )));
    }
    let params = MlpParams {
        layer_weights,
        layer_biases,
        widths,
    };
    params.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok((params, meta))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("truncated layer header".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("truncated length".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("truncated tensor data".into()))?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgrad::init_params;
    use crate::rng::{stream_rng, Stream};

    fn sample() -> (MlpParams<f64>, CheckpointMeta) {
        let p = init_params(&mut stream_rng(5, Stream::Init), 2, 2, 6, 2).unwrap();
        let meta = CheckpointMeta {
            widths: p.widths.clone(),
            seed: 5,
            config_hash: "abc".into(),
            config: None,
        };
        (p, meta)
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let (p, meta) = sample();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p, &meta).unwrap();
        let (q, m): (MlpParams<f64>, _) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(p, q);
        assert_eq!(meta, m);
    }

    #[test]
    fn header_layout() {
        let (p, meta) = sample();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p, &meta).unwrap();
        assert_eq!(&buf[..6], b"DIFLO\x01");
        assert_eq!(u32::from_le_bytes(buf[6..10].try_into().unwrap()), 3);
        // first layer is 6 x 5
        assert_eq!(u32::from_le_bytes(buf[10..14].try_into().unwrap()), 6);
        assert_eq!(u32::from_le_bytes(buf[14..18].try_into().unwrap()), 5);
        let w00 = f64::from_le_bytes(buf[18..26].try_into().unwrap());
        assert_eq!(w00, p.layer_weights[0][[0, 0]]);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let (p, meta) = sample();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p, &meta).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_checkpoint::<f64, _>(bad.as_slice()),
            Err(Error::Checkpoint(_))
        ));
        let truncated = &buf[..buf.len() / 2];
        assert!(read_checkpoint::<f64, _>(truncated).is_err());
        let mut wrong_meta = meta.clone();
        wrong_meta.widths = vec![1, 2];
        let mut buf2 = Vec::new();
        write_checkpoint(&mut buf2, &p, &wrong_meta).unwrap();
        assert!(read_checkpoint::<f64, _>(buf2.as_slice()).is_err());
    }
}
