use std::io::{Read, Write};

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PRBM";
pub const FORMAT_VERSION: u16 = 1;

/// Index of a parameter inside its [`ParameterSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Tensor,
}

/// Named trainable tensors with gradients of identical shape.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    entries: Vec<Entry>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.id(&name).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        let grad = Tensor::new(value.shape().to_vec(), vec![0.0; value.len()])?;
        self.entries.push(Entry { name, value, grad });
        Ok(ParamId(self.entries.len() - 1))
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.insert(name, Tensor::from_rows(rows, cols, data))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].grad
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries.iter().map(|e| e.grad.sum_sq()).sum::<f64>().sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            let s = max_norm / norm;
            for e in &mut self.entries {
                for g in e.grad.data_mut() {
                    *g *= s;
                }
            }
        }
        norm
    }

    /// Binary layout: magic, `u16` version, then per parameter a `u16` name
    /// length, the UTF-8 name, a `u8` rank, `u32` dims and little-endian f64 data.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for e in &self.entries {
            let name = e.name.as_bytes();
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::Format(format!("parameter name too long: {}", e.name)))?;
            w.write_all(&name_len.to_le_bytes())?;
            w.write_all(name)?;
            let shape = e.value.shape();
            w.write_all(&[shape.len() as u8])?;
            for d in shape {
                let d = u32::try_from(*d)
                    .map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
                w.write_all(&d.to_le_bytes())?;
            }
            for v in e.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes(cur.array()?);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let mut set = ParameterSet::new();
        while cur.pos < bytes.len() {
            let name_len = u16::from_le_bytes(cur.array()?) as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|e| Error::Format(format!("parameter name: {e}")))?
                .to_string();
            let rank = cur.take(1)?[0] as usize;
            let shape = (0..rank)
                .map(|_| Ok(u32::from_le_bytes(cur.array()?) as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| Ok(f64::from_le_bytes(cur.array()?)))
                .collect::<Result<Vec<_>>>()?;
            set.insert(name, Tensor::new(shape, data)?)?;
        }
        Ok(set)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format("truncated parameter file".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParameterSet::new();
        let id = p.insert_uniform("w", 16, 8, 16, &mut rng).unwrap();
        assert!(p.value(id).data().iter().all(|v| v.abs() <= 0.25));
        assert!(p.insert_uniform("w", 1, 1, 1, &mut rng).is_err());
    }

    #[test]
    fn clipping_caps_norm() {
        let mut p = ParameterSet::new();
        let id = p.insert("w", Tensor::zeros(1, 2)).unwrap();
        p.grad_mut(id).data_mut().copy_from_slice(&[30.0, 40.0]);
        assert_eq!(p.clip_grad_norm(10.0), 50.0);
        assert!((p.grad_norm() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn header_layout() {
        let mut p = ParameterSet::new();
        p.insert("ab", Tensor::row_vector(vec![1.0])).unwrap();
        let b = p.to_bytes();
        assert_eq!(&b[..4], b"PRBM");
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(&b[6..8], &[2, 0]);
        assert_eq!(&b[8..10], b"ab");
        assert_eq!(b[10], 2);
        assert_eq!(&b[11..19], &[1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[19..], &1.0f64.to_le_bytes());
        assert!(ParameterSet::from_bytes(&b[..b.len() - 1]).is_err());
        assert!(ParameterSet::from_bytes(b"PRBX\x01\x00").is_err());
    }

    proptest! {
        #[test]
        fn binary_round_trip_is_bit_exact(
            tensors in prop::collection::vec(
                (1usize..4, 1usize..5).prop_flat_map(|(r, c)|
                    (Just(r), Just(c), prop::collection::vec(any::<f64>(), r * c))),
                0..5)
        ) {
            let mut p = ParameterSet::new();
            for (i, (r, c, data)) in tensors.into_iter().enumerate() {
                p.insert(format!("p{i}"), Tensor::from_rows(r, c, data)).unwrap();
            }
            let bytes = p.to_bytes();
            let q = ParameterSet::from_bytes(&bytes).unwrap();
            prop_assert_eq!(q.to_bytes(), bytes);
        }
    }
}
