//! Binary model checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes   "STONKFUS"
//! version      u32       1
//! scalar       u32       bytes per float (4 or 8)
//! mode         u8        0 numeric_baseline, 1 sentiment_baseline, 2 concat, 3 attention
//! config hash  32 bytes  sha256 of the model-relevant configuration
//! scaler       u32 dim, dim means, dim stds, u64 rows fitted on
//! fusion flag  u8        1 if a fusion block follows
//!   u32 d_n, d_t, d_model, heads, d_out
//!   f64 dropout, u8 token source (0 article tokens, 1 pooled), u64 init seed
//!   u32 block count, then per block: u32 rows, u32 cols, rows*cols floats
//! head         u32 dim, dim weights, bias
//! ```
//!
//! Floats are written at the scalar width, so a write/read round trip is
//! bitwise.

use std::path::Path;

use ndarray::Array1;

use crate::classifier::LRHead;
use crate::config::ModelMode;
use crate::error::{Error, Result};
use crate::features::Scaler;
use crate::fusion::{FusionConfig, FusionMode, FusionParams, TokenSource};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"STONKFUS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub mode: ModelMode,
    pub config_hash: [u8; 32],
    pub scaler: Scaler<T>,
    pub fusion: Option<(FusionConfig, FusionParams<T>)>,
    pub head: LRHead<T>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, T::BYTES as u32);
        out.push(self.mode.tag());
        out.extend_from_slice(&self.config_hash);

        put_u32(&mut out, self.scaler.means.len() as u32);
        self.scaler.means.iter().for_each(|&v| v.write_le(&mut out));
        self.scaler.stds.iter().for_each(|&v| v.write_le(&mut out));
        out.extend_from_slice(&(self.scaler.fitted_on as u64).to_le_bytes());

        match &self.fusion {
            None => out.push(0),
            Some((cfg, params)) => {
                out.push(1);
                for d in [cfg.d_n, cfg.d_t, cfg.d_model, cfg.heads, cfg.d_out] {
                    put_u32(&mut out, d as u32);
                }
                out.extend_from_slice(&cfg.dropout_p.to_le_bytes());
                out.push(match cfg.token_source {
                    TokenSource::ArticleTokens => 0,
                    TokenSource::PooledSingle => 1,
                });
                out.extend_from_slice(&cfg.seed.to_le_bytes());
                let blocks = params.blocks();
                put_u32(&mut out, blocks.len() as u32);
                for (_, (r, c), vals) in blocks {
                    put_u32(&mut out, r as u32);
                    put_u32(&mut out, c as u32);
                    vals.iter().for_each(|&v| v.write_le(&mut out));
                }
            }
        }

        put_u32(&mut out, self.head.w.len() as u32);
        self.head.w.iter().for_each(|&v| v.write_le(&mut out));
        self.head.b.write_le(&mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Compatibility("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Compatibility(format!(
                "checkpoint version {version}, expected {VERSION}"
            )));
        }
        let width = r.u32()? as usize;
        if width != T::BYTES {
            return Err(Error::Compatibility(format!(
                "checkpoint stores {width}-byte floats, reader uses {}",
                T::BYTES
            )));
        }
        let mode_tag = r.u8()?;
        let mode = ModelMode::from_tag(mode_tag)
            .ok_or_else(|| Error::Compatibility(format!("unknown model kind {mode_tag}")))?;
        let mut config_hash = [0u8; 32];
        config_hash.copy_from_slice(r.take(32)?);

        let dim = r.u32()? as usize;
        let means = r.floats::<T>(dim)?;
        let stds = r.floats::<T>(dim)?;
        let fitted_on = r.u64()? as usize;
        let scaler = Scaler {
            means,
            stds,
            fitted_on,
        };

        let fusion = match r.u8()? {
            0 => None,
            1 => {
                let mut d = [0usize; 5];
                for x in &mut d {
                    *x = r.u32()? as usize;
                }
                let dropout_p = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
                let token_source = match r.u8()? {
                    0 => TokenSource::ArticleTokens,
                    1 => TokenSource::PooledSingle,
                    t => return Err(Error::Compatibility(format!("unknown token source {t}"))),
                };
                let seed = r.u64()?;
                let cfg = FusionConfig {
                    d_n: d[0],
                    d_t: d[1],
                    d_model: d[2],
                    heads: d[3],
                    d_out: d[4],
                    dropout_p,
                    mode: FusionMode::Attention,
                    token_source,
                    seed,
                };
                cfg.validate().map_err(|e| Error::Compatibility(e.to_string()))?;
                let mut params = FusionParams::<T>::zeros(&cfg);
                let shapes: Vec<(usize, usize)> =
                    params.blocks().into_iter().map(|(_, d, _)| d).collect();
                let count = r.u32()? as usize;
                if count != shapes.len() {
                    return Err(Error::Compatibility(format!(
                        "{count} parameter blocks, expected {}",
                        shapes.len()
                    )));
                }
                for (dst, want) in params.blocks_mut().into_iter().zip(shapes) {
                    let got = (r.u32()? as usize, r.u32()? as usize);
                    if got != want {
                        return Err(Error::Compatibility(format!(
                            "parameter block is {got:?}, expected {want:?}"
                        )));
                    }
                    let vals = r.floats::<T>(want.0 * want.1)?;
                    dst.copy_from_slice(&vals);
                }
                Some((cfg, params))
            }
            f => return Err(Error::Compatibility(format!("bad fusion flag {f}"))),
        };

        let dim = r.u32()? as usize;
        let w = Array1::from(r.floats::<T>(dim)?);
        let b = r.floats::<T>(1)?[0];
        if r.pos != bytes.len() {
            return Err(Error::Compatibility("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint {
            mode,
            config_hash,
            scaler,
            fusion,
            head: LRHead { w, b },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::from(e).in_file(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
        Self::from_bytes(&bytes).map_err(|e| e.in_file(path))
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Compatibility("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn floats<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let raw = self.take(n.checked_mul(T::BYTES).ok_or_else(|| {
            Error::Compatibility("checkpoint length overflow".into())
        })?)?;
        Ok(raw.chunks_exact(T::BYTES).map(T::read_le).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::init_params;
    use ndarray::array;

    fn sample<T: Scalar>() -> Checkpoint<T> {
        let cfg = FusionConfig {
            d_model: 8,
            heads: 2,
            d_out: 8,
            ..FusionConfig::attention(8, 3, 99)
        };
        let params = init_params::<T>(&cfg).unwrap();
        Checkpoint {
            mode: ModelMode::Attention,
            config_hash: [7u8; 32],
            scaler: Scaler {
                means: vec![T::of(0.1); 8],
                stds: vec![T::of(1.0 / 3.0); 8],
                fitted_on: 42,
            },
            fusion: Some((cfg, params)),
            head: LRHead {
                w: Array1::from(vec![T::of(-0.25); 8]),
                b: T::of(0.125),
            },
        }
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let c = sample::<f64>();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..8], b"STONKFUS");
        let back = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);

        let c = sample::<f32>();
        assert_eq!(Checkpoint::<f32>::from_bytes(&c.to_bytes()).unwrap(), c);
    }

    #[test]
    fn baseline_without_fusion() {
        let c = Checkpoint {
            mode: ModelMode::NumericBaseline,
            config_hash: [0u8; 32],
            scaler: Scaler {
                means: vec![0.0; 2],
                stds: vec![1.0; 2],
                fitted_on: 3,
            },
            fusion: None,
            head: LRHead { w: array![1.0, -2.0], b: 0.5 },
        };
        assert_eq!(Checkpoint::<f64>::from_bytes(&c.to_bytes()).unwrap(), c);
    }

    #[test]
    fn rejects_damage() {
        let bytes = sample::<f64>().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::<f64>::from_bytes(&bad), Err(Error::Compatibility(_))));
        assert!(Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::<f32>::from_bytes(&bytes).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::<f64>::from_bytes(&long).is_err());
    }
}
