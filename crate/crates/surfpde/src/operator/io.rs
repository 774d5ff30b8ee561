//! Weight file: little-endian binary, bit-exact round trip.
//!
//! Layout: magic "SPOP", u32 version, u8 modulation, u32 embedding width,
//! f64 lambda, f64 input scale, then the three encoders in order (query,
//! band, feature), each as u32 layer count followed by per-layer u32 rows,
//! u32 cols, row-major f64 weights, f64 biases.

use super::{Mlp, Modulation, OperatorParams};
use crate::operator::mlp::Layer;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SPOP";
const VERSION: u32 = 1;
/// Any single dimension beyond this is rejected at load time.
const MAX_DIM: u32 = 1 << 20;
/// Total parameter budget guard against corrupt headers.
const MAX_TOTAL_PARAMS: u64 = 1 << 28;

pub fn save_params_bytes(params: &OperatorParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match params.modulation {
        Modulation::Additive => 0,
        Modulation::Multiplicative => 1,
    });
    out.extend_from_slice(&(params.embedding_dim() as u32).to_le_bytes());
    out.extend_from_slice(&params.lambda.to_le_bytes());
    out.extend_from_slice(&params.input_scale.to_le_bytes());
    for mlp in [&params.theta1, &params.theta2, &params.theta3] {
        out.extend_from_slice(&(mlp.layers.len() as u32).to_le_bytes());
        for layer in &mlp.layers {
            out.extend_from_slice(&(layer.w.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(layer.w.ncols() as u32).to_le_bytes());
            for r in 0..layer.w.nrows() {
                for c in 0..layer.w.ncols() {
                    out.extend_from_slice(&layer.w[(r, c)].to_le_bytes());
                }
            }
            for v in layer.b.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn save_params(params: &OperatorParams, path: &Path) -> Result<()> {
    std::fs::write(path, save_params_bytes(params))?;
    Ok(())
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Weights(format!(
                "truncated file: needed {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_params_bytes(data: &[u8]) -> Result<OperatorParams> {
    let mut r = Reader { data, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Weights("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Weights(format!("unsupported version {version}")));
    }
    let modulation = match r.u8()? {
        0 => Modulation::Additive,
        1 => Modulation::Multiplicative,
        other => return Err(Error::Weights(format!("unknown modulation tag {other}"))),
    };
    let d = r.u32()?;
    if d == 0 || d > MAX_DIM {
        return Err(Error::Weights(format!("embedding width {d} out of range")));
    }
    let lambda = r.f64()?;
    if !lambda.is_finite() {
        return Err(Error::Weights("non-finite lambda".into()));
    }
    let input_scale = r.f64()?;
    if !(input_scale.is_finite() && input_scale > 0.0) {
        return Err(Error::Weights(format!("bad input scale {input_scale}")));
    }

    let mut total: u64 = 0;
    let mut read_mlp = |r: &mut Reader| -> Result<Mlp> {
        let n_layers = r.u32()?;
        if n_layers == 0 || n_layers > 64 {
            return Err(Error::Weights(format!("layer count {n_layers} out of range")));
        }
        let mut layers = Vec::with_capacity(n_layers as usize);
        let mut prev_out: Option<u32> = None;
        for _ in 0..n_layers {
            let rows = r.u32()?;
            let cols = r.u32()?;
            if rows == 0 || cols == 0 || rows > MAX_DIM || cols > MAX_DIM {
                return Err(Error::Weights(format!("layer dims {rows}x{cols} out of range")));
            }
            if let Some(p) = prev_out {
                if p != cols {
                    return Err(Error::Weights(format!(
                        "layer input {cols} does not chain from previous output {p}"
                    )));
                }
            }
            prev_out = Some(rows);
            total += rows as u64 * cols as u64 + rows as u64;
            if total > MAX_TOTAL_PARAMS {
                return Err(Error::Weights("parameter count exceeds sanity cap".into()));
            }
            let mut w = DMatrix::zeros(rows as usize, cols as usize);
            for i in 0..rows as usize {
                for j in 0..cols as usize {
                    let v = r.f64()?;
                    if !v.is_finite() {
                        return Err(Error::Weights("non-finite weight".into()));
                    }
                    w[(i, j)] = v;
                }
            }
            let mut b = DVector::zeros(rows as usize);
            for i in 0..rows as usize {
                let v = r.f64()?;
                if !v.is_finite() {
                    return Err(Error::Weights("non-finite bias".into()));
                }
                b[i] = v;
            }
            layers.push(Layer { w, b });
        }
        Ok(Mlp { layers })
    };

    let theta1 = read_mlp(&mut r)?;
    let theta2 = read_mlp(&mut r)?;
    let theta3 = read_mlp(&mut r)?;
    if r.pos != data.len() {
        return Err(Error::Weights(format!(
            "{} trailing bytes after parameters",
            data.len() - r.pos
        )));
    }

    let params = OperatorParams {
        theta1,
        theta2,
        theta3,
        lambda,
        modulation,
        input_scale,
    };
    params.validate().map_err(|e| match e {
        Error::Config(msg) => Error::Weights(msg),
        other => other,
    })?;
    if params.embedding_dim() != d as usize {
        return Err(Error::Weights(format!(
            "header width {d} does not match encoder output {}",
            params.embedding_dim()
        )));
    }
    Ok(params)
}

pub fn load_params(path: &Path) -> Result<OperatorParams> {
    load_params_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::forward;
    use crate::Vec3;

    #[test]
    fn round_trip_bitwise() {
        let mut params = OperatorParams::new(24, 2, 42, Modulation::Multiplicative);
        params.lambda = 1.7320508075688772;
        let bytes = save_params_bytes(&params);
        let loaded = load_params_bytes(&bytes).unwrap();
        assert_eq!(loaded.lambda.to_bits(), params.lambda.to_bits());
        assert_eq!(loaded.modulation, params.modulation);
        for (a, b) in [
            (&params.theta1, &loaded.theta1),
            (&params.theta2, &loaded.theta2),
            (&params.theta3, &loaded.theta3),
        ] {
            assert_eq!(a, b, "bitwise identical layers");
        }
    }

    #[test]
    fn round_trip_preserves_forward_outputs() {
        let params = OperatorParams::new(16, 2, 7, Modulation::Additive);
        let bytes = save_params_bytes(&params);
        let loaded = load_params_bytes(&bytes).unwrap();
        // identical outputs bitwise on an arbitrary patch
        let patch = crate::operator::tests::synthetic_patch(20, 8, 3);
        let u: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let q = vec![Vec3::new(0.1, -0.05, 0.02)];
        let a = forward(&params, &patch, &u, &q).unwrap();
        let b = forward(&loaded, &patch, &u, &q).unwrap();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
    }

    #[test]
    fn truncated_and_corrupt_files_rejected() {
        let params = OperatorParams::new(8, 1, 1, Modulation::Additive);
        let bytes = save_params_bytes(&params);
        for cut in [0, 3, 8, 9, 20, bytes.len() - 1] {
            assert!(load_params_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(load_params_bytes(&bad_magic).is_err());
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(load_params_bytes(&trailing).is_err());
        // corrupt a dimension field into something absurd
        let mut bad_dim = bytes;
        bad_dim[9] = 0xff;
        bad_dim[10] = 0xff;
        bad_dim[11] = 0xff;
        bad_dim[12] = 0xff;
        assert!(load_params_bytes(&bad_dim).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join("surfpde_weights_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("params.bin");
        let params = OperatorParams::new(12, 2, 9, Modulation::Additive);
        save_params(&params, &path).unwrap();
        let loaded = load_params(&path).unwrap();
        assert_eq!(loaded.theta1, params.theta1);
    }
}

#[cfg(test)]
mod corpus {
    use super::*;

    /// Regenerates the checked-in fuzz corpus seeds for the weight loader;
    /// run with --ignored when the format changes.
    #[test]
    #[ignore]
    fn write_fuzz_corpus_seeds() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../fuzz/corpus/weights_load");
        std::fs::create_dir_all(&dir).unwrap();
        let params = OperatorParams::new(4, 1, 1, Modulation::Additive);
        let bytes = save_params_bytes(&params);
        std::fs::write(dir.join("tiny.bin"), &bytes).unwrap();
        let mut truncated = bytes.clone();
        truncated.truncate(bytes.len() / 2);
        std::fs::write(dir.join("truncated.bin"), &truncated).unwrap();
    }
}
