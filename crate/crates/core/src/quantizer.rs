//! Adaptive uniform quantizer with saturation and a fixed-width level codec.
//!
//! For a coordinate with mid-value `z`, interval size `d` and level parameter
//! `K`, the quantizer outputs one of `K + 2` values: the two saturation levels
//! `z - d` and `z + d`, and the interior levels `z + (2j - K) d / K` for
//! `j = 0..K`. The interior level `j` is selected when
//! `x - z + d` lies in `[2jd/K, 2(j+1)d/K)`.
//!
//! Level indices on the wire: `0` is the lower saturation, `1..=K` are the
//! interior levels `j = 0..K-1`, and `K + 1` is the upper saturation. Note that
//! index 0 and index 1 decode to the same value; the canonical index is the
//! saturation slot only when `x - z < -d`.
//!
//! Wire layout: indices are packed little-endian at `ceil(log2(K + 2))` bits
//! each, coordinate 0 in the least significant bits of byte 0. Bit `b` of the
//! stream is bit `b % 8` of byte `b / 8`; trailing bits of the last byte are
//! zero.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub const DEFAULT_LEVELS: u32 = 5;

/// Quantizer parameters for one (agent, iteration).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    k: u32,
    z: Vec<f64>,
    d: Vec<f64>,
}

impl QuantizerSpec {
    pub fn new(k: u32, z: Vec<f64>, d: Vec<f64>) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidParameter(format!(
                "level parameter K = {k} must be >= 2"
            )));
        }
        Self::unchecked(k, z, d)
    }

    /// Same as [`QuantizerSpec::new`] but accepts `K = 1`. Only meant for fault
    /// injection: with a single interior level the per-coordinate error can
    /// reach `2d`.
    pub fn unchecked(k: u32, z: Vec<f64>, d: Vec<f64>) -> Result<Self> {
        check_dim(z.len(), d.len())?;
        if k == 0 {
            return Err(Error::InvalidParameter(
                "level parameter K must be positive".into(),
            ));
        }
        if let Some(v) = d.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "interval size {v} must be >= 0"
            )));
        }
        Ok(QuantizerSpec { k, z, d })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    /// Bits per coordinate on the wire.
    pub fn bits_per_coordinate(&self) -> u32 {
        bits_per_level(self.k)
    }
}

/// `ceil(log2(K + 2))`.
pub fn bits_per_level(k: u32) -> u32 {
    let symbols = k as u64 + 2;
    64 - (symbols - 1).leading_zeros()
}

/// Size of one encoded message in bits: `n * ceil(log2(K + 2))`.
pub fn payload_bits(n: usize, k: u32) -> u64 {
    n as u64 * bits_per_level(k) as u64
}

fn level_index(z: f64, d: f64, k: u32, x: f64) -> u32 {
    let offset = x - z;
    if offset < -d {
        return 0;
    }
    if offset >= d {
        return k + 1;
    }
    // Here -d <= offset < d, so d > 0.
    let j = ((offset + d) * k as f64 / (2.0 * d)).floor();
    (j.max(0.0) as u32).min(k - 1) + 1
}

fn level_value(z: f64, d: f64, k: u32, index: u32) -> f64 {
    match index {
        // Index 1 is the same value as index 0; spelling it out keeps the two
        // bit-identical so the map stays monotone under rounding.
        0 | 1 => z - d,
        i if i == k + 1 => z + d,
        i => {
            let j = (i - 1) as f64;
            z + (2.0 * j - k as f64) * d / k as f64
        }
    }
}

/// Scalar quantizer `Q(z, d, x)`. A zero interval collapses every input to `z`.
pub fn quantize_scalar(z: f64, d: f64, k: u32, x: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "interval size {d} must be >= 0"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidParameter(
            "level parameter K must be positive".into(),
        ));
    }
    if d == 0.0 {
        return Ok(z);
    }
    Ok(level_value(z, d, k, level_index(z, d, k, x)))
}

/// Coordinate-wise quantizer.
pub fn quantize_vector(spec: &QuantizerSpec, x: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len()];
    quantize_into(spec, x, &mut out)?;
    Ok(out)
}

/// As [`quantize_vector`], writing into `out`.
pub fn quantize_into(spec: &QuantizerSpec, x: &[f64], out: &mut [f64]) -> Result<()> {
    check_dim(spec.dim(), x.len())?;
    check_dim(spec.dim(), out.len())?;
    for (((o, &xi), &zi), &di) in out.iter_mut().zip(x).zip(&spec.z).zip(&spec.d) {
        *o = if di == 0.0 {
            zi
        } else {
            level_value(zi, di, spec.k, level_index(zi, di, spec.k, xi))
        };
    }
    Ok(())
}

/// Per-coordinate level indices for one message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedMessage {
    pub k: u32,
    pub indices: Vec<u32>,
}

impl QuantizedMessage {
    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    pub fn payload_bits(&self) -> u64 {
        payload_bits(self.indices.len(), self.k)
    }

    /// Packs the indices into the documented little-endian layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let width = bits_per_level(self.k) as usize;
        let total = self.indices.len() * width;
        let mut bytes = vec![0u8; total.div_ceil(8)];
        let mut bit = 0usize;
        for &index in &self.indices {
            for b in 0..width {
                if (index >> b) & 1 == 1 {
                    bytes[bit / 8] |= 1 << (bit % 8);
                }
                bit += 1;
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8], n: usize, k: u32) -> Result<Self> {
        let width = bits_per_level(k) as usize;
        let expected = (n * width).div_ceil(8);
        if bytes.len() != expected {
            return Err(Error::CorruptMessage(format!(
                "expected {expected} bytes for {n} coordinates, got {}",
                bytes.len()
            )));
        }
        let mut indices = Vec::with_capacity(n);
        let mut bit = 0usize;
        for coord in 0..n {
            let mut index = 0u32;
            for b in 0..width {
                if (bytes[bit / 8] >> (bit % 8)) & 1 == 1 {
                    index |= 1 << b;
                }
                bit += 1;
            }
            if index > k + 1 {
                return Err(Error::CorruptMessage(format!(
                    "coordinate {coord}: level index {index} exceeds {}",
                    k + 1
                )));
            }
            indices.push(index);
        }
        if n * width < bytes.len() * 8 {
            let last = bytes[bytes.len() - 1];
            if last >> ((n * width) % 8) != 0 {
                return Err(Error::CorruptMessage("nonzero padding bits".into()));
            }
        }
        Ok(QuantizedMessage { k, indices })
    }
}

/// Level indices of `x`; decodes to exactly [`quantize_vector`]'s output.
pub fn encode(spec: &QuantizerSpec, x: &[f64]) -> Result<QuantizedMessage> {
    check_dim(spec.dim(), x.len())?;
    let indices = x
        .iter()
        .zip(&spec.z)
        .zip(&spec.d)
        .map(|((&xi, &zi), &di)| {
            if di == 0.0 {
                // Every level collapses to z; use the first interior slot.
                1
            } else {
                level_index(zi, di, spec.k, xi)
            }
        })
        .collect();
    Ok(QuantizedMessage { k: spec.k, indices })
}

pub fn decode(spec: &QuantizerSpec, msg: &QuantizedMessage) -> Result<Vec<f64>> {
    check_dim(spec.dim(), msg.dim())?;
    if msg.k != spec.k {
        return Err(Error::CorruptMessage(format!(
            "message built for K = {}, decoder has K = {}",
            msg.k, spec.k
        )));
    }
    msg.indices
        .iter()
        .zip(&spec.z)
        .zip(&spec.d)
        .enumerate()
        .map(|(coord, ((&index, &zi), &di))| {
            if index > spec.k + 1 {
                Err(Error::CorruptMessage(format!(
                    "coordinate {coord}: level index {index} exceeds {}",
                    spec.k + 1
                )))
            } else if di == 0.0 {
                Ok(zi)
            } else {
                Ok(level_value(zi, di, spec.k, index))
            }
        })
        .collect()
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} = {v} must be positive"
        )))
    }
}

/// Interval vector `d(t) = (G alpha(t) beta(t) / sigma) * 1`.
pub fn adaptive_interval(
    g_bound: f64,
    sigma_phi: f64,
    alpha_t: f64,
    beta_t: f64,
    n: usize,
) -> Result<Vec<f64>> {
    check_positive("G", g_bound)?;
    check_positive("sigma_phi", sigma_phi)?;
    check_positive("alpha(t)", alpha_t)?;
    check_positive("beta(t)", beta_t)?;
    Ok(vec![g_bound * alpha_t * beta_t / sigma_phi; n])
}

/// `E(t) = G n alpha(t) beta(t) / sigma`, the bound on every `||e_j(t)||`.
pub fn quantization_error_bound(
    g_bound: f64,
    n: usize,
    sigma_phi: f64,
    alpha_t: f64,
    beta_t: f64,
) -> f64 {
    g_bound * n as f64 * alpha_t * beta_t / sigma_phi
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_examples() {
        assert_eq!(quantize_scalar(11.0, 5.0, 5, 7.0).unwrap(), 6.0);
        assert_eq!(quantize_scalar(0.0, 1.0, 4, 5.0).unwrap(), 1.0);
        assert_eq!(quantize_scalar(0.0, 1.0, 4, -5.0).unwrap(), -1.0);
        // x - z = d belongs to the upper saturation branch.
        assert_eq!(quantize_scalar(0.0, 1.0, 4, 1.0).unwrap(), 1.0);
        // x - z = -d is the bottom of interior level j = 0.
        assert_eq!(quantize_scalar(0.0, 1.0, 4, -1.0).unwrap(), -1.0);
    }

    #[test]
    fn scalar_errors_and_degenerate() {
        assert!(matches!(
            quantize_scalar(0.0, -1.0, 4, 0.3),
            Err(Error::InvalidParameter(_))
        ));
        assert_eq!(quantize_scalar(2.5, 0.0, 4, 100.0).unwrap(), 2.5);
    }

    #[test]
    fn vector_examples() {
        let spec = QuantizerSpec::new(4, vec![0.0], vec![1.0]).unwrap();
        assert_eq!(quantize_vector(&spec, &[0.0]).unwrap(), vec![0.0]);

        let z = vec![1.0, -2.0, 3.0];
        let spec = QuantizerSpec::new(5, z.clone(), vec![0.0; 3]).unwrap();
        assert_eq!(quantize_vector(&spec, &[10.0, 10.0, -10.0]).unwrap(), z);

        assert!(matches!(
            quantize_vector(&spec, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(QuantizerSpec::new(1, vec![0.0], vec![1.0]).is_err());
        assert!(QuantizerSpec::unchecked(1, vec![0.0], vec![1.0]).is_ok());
    }

    #[test]
    fn five_level_example_enumerates_levels() {
        let spec = QuantizerSpec::new(5, vec![11.0], vec![5.0]).unwrap();
        let msg = encode(&spec, &[7.0]).unwrap();
        assert_eq!(msg.indices, vec![1]);
        assert_eq!(decode(&spec, &msg).unwrap(), vec![6.0]);
        let levels: Vec<f64> = (0..7).map(|i| level_value(11.0, 5.0, 5, i)).collect();
        assert_eq!(levels, vec![6.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0]);
    }

    #[test]
    fn payload_sizes() {
        assert_eq!(bits_per_level(5), 3);
        assert_eq!(payload_bits(10, 5), 30);
        assert_eq!(bits_per_level(2), 2);
        assert_eq!(bits_per_level(6), 3);
        assert_eq!(bits_per_level(7), 4);
        assert_eq!(bits_per_level(1), 2);
    }

    #[test]
    fn bytes_layout_is_lsb_first() {
        // K = 2 -> 4 symbols -> 2 bits each.
        let msg = QuantizedMessage {
            k: 2,
            indices: vec![3, 0, 1, 2, 1],
        };
        let bytes = msg.to_bytes();
        assert_eq!(bytes, vec![0b1001_0011, 0b0000_0001]);
        assert_eq!(QuantizedMessage::from_bytes(&bytes, 5, 2).unwrap(), msg);
    }

    #[test]
    fn corrupt_messages_rejected() {
        let spec = QuantizerSpec::new(5, vec![0.0; 2], vec![1.0; 2]).unwrap();
        let bad = QuantizedMessage {
            k: 5,
            indices: vec![7, 0],
        };
        assert!(matches!(decode(&spec, &bad), Err(Error::CorruptMessage(_))));
        // 3-bit slots can carry 7 which is outside the 7-symbol alphabet.
        assert!(QuantizedMessage::from_bytes(&[0b0000_0111], 2, 5).is_err());
        assert!(QuantizedMessage::from_bytes(&[0, 0], 2, 5).is_err());
        assert!(QuantizedMessage::from_bytes(&[0b1000_0000], 2, 5).is_err());
    }

    #[test]
    fn interval_and_bound_formulas() {
        assert_eq!(
            adaptive_interval(2.0, 1.0, 1.0, 1.0, 3).unwrap(),
            vec![2.0; 3]
        );
        let a = 1.0 / 2.0; // 1/sqrt(3 + 1)
        assert_eq!(adaptive_interval(1.0, 1.0, a, a, 2).unwrap(), vec![0.25; 2]);
        assert!(adaptive_interval(1.0, 1.0, 1.0, 0.0, 2).is_err());
        assert!(adaptive_interval(-1.0, 1.0, 1.0, 1.0, 2).is_err());
        let tiny = adaptive_interval(1.0, 1.0, 1.0, 1e-300, 1).unwrap();
        assert!(tiny[0] < 1e-299);

        assert_eq!(quantization_error_bound(2.0, 10, 1.0, 0.5, 0.5), 5.0);
        assert_eq!(quantization_error_bound(2.0, 10, 1.0, 0.5, 0.0), 0.0);
    }
}
