//! STM1 model checkpoint container.
//!
//! Layout: magic "STM1", u32 LE entry count, then per entry: u16 LE name
//! length, UTF-8 name, u8 rank, rank x u64 LE extents, f32 LE data.
//! Round-trips are bit-exact and entry order is preserved.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{atomic_write, Tensor};

#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn push(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if name.is_empty() || name.len() > u16::MAX as usize {
            return Err(Error::Format(format!("bad entry name length {}", name.len())));
        }
        if self.entries.iter().any(|(n, _)| n == name) {
            return Err(Error::Format(format!("duplicate entry name {:?}", name)));
        }
        self.entries.push((name.to_string(), tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_stm<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"STM1")?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, tensor) in &self.entries {
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[tensor.rank() as u8])?;
            for &e in tensor.shape() {
                w.write_all(&(e as u64).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(tensor.len() * 4);
            for &v in tensor.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_stm<R: Read>(r: &mut R) -> Result<Checkpoint> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"STM1" {
            return Err(Error::Format(format!("bad STM1 magic {:?}", magic)));
        }
        let mut count_b = [0u8; 4];
        r.read_exact(&mut count_b)?;
        let count = u32::from_le_bytes(count_b) as usize;

        let mut ckpt = Checkpoint::new();
        for _ in 0..count {
            let mut len_b = [0u8; 2];
            r.read_exact(&mut len_b)?;
            let name_len = u16::from_le_bytes(len_b) as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|e| Error::Format(format!("entry name not UTF-8: {}", e)))?;

            let mut rank_b = [0u8; 1];
            r.read_exact(&mut rank_b)?;
            let rank = rank_b[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * 4];
            r.read_exact(&mut raw)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            ckpt.push(&name, Tensor::from_vec(&shape, data)?)?;
        }
        Ok(ckpt)
    }

    /// Atomic save (temp file + rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_stm(&mut buf)?;
        atomic_write(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path)?;
        Checkpoint::read_stm(&mut bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn round_trip_preserves_order_and_bits() {
        let mut rng = Rng::new(21);
        let mut ckpt = Checkpoint::new();
        ckpt.push(
            "conv2a.weight",
            Tensor::fill_uniform(&[4, 2, 3, 3, 3], -1.0, 1.0, &mut rng).unwrap(),
        )
        .unwrap();
        ckpt.push("conv2a.bias", Tensor::zeros(&[4]).unwrap()).unwrap();
        ckpt.push(
            "fc6.weight",
            Tensor::fill_uniform(&[8, 4], -0.5, 0.5, &mut rng).unwrap(),
        )
        .unwrap();

        let mut buf = Vec::new();
        ckpt.write_stm(&mut buf).unwrap();
        let back = Checkpoint::read_stm(&mut buf.as_slice()).unwrap();

        assert_eq!(back.len(), 3);
        for ((na, ta), (nb, tb)) in ckpt.entries().iter().zip(back.entries()) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
            let bits_a: Vec<u32> = ta.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = tb.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }

        let mut buf2 = Vec::new();
        back.write_stm(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut ckpt = Checkpoint::new();
        ckpt.push("w", Tensor::zeros(&[1]).unwrap()).unwrap();
        assert!(ckpt.push("w", Tensor::zeros(&[1]).unwrap()).is_err());
    }

    #[test]
    fn bad_magic_rejected() {
        let bytes = b"XXXX\0\0\0\0";
        assert!(matches!(
            Checkpoint::read_stm(&mut bytes.as_slice()),
            Err(Error::Format(_))
        ));
    }
}
