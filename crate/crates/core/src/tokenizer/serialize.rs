//! Binary tokenizer format: little-endian, magic "LATK", version, entry
//! count, length-prefixed UTF-8 pieces with f64 log-probs, specials table,
//! normalization flags. `from_bytes(to_bytes(m)) == m` bit-exactly.

use alloc::string::String;
use alloc::vec::Vec;

use super::{Normalization, SpecialIds, TokenizerError, TokenizerModel};

pub const MAGIC: &[u8; 4] = b"LATK";
pub const VERSION: u32 = 1;

impl TokenizerModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let n = self.normalization();
        out.push(n.nfkc as u8);
        out.push(n.lowercase as u8);
        out.extend_from_slice(&(self.entries().len() as u32).to_le_bytes());
        for (piece, log_prob) in self.entries() {
            out.extend_from_slice(&(piece.len() as u32).to_le_bytes());
            out.extend_from_slice(piece.as_bytes());
            out.extend_from_slice(&log_prob.to_le_bytes());
        }
        let s = self.special_ids();
        for id in [s.bos, s.eos, s.unk, s.pad] {
            out.extend_from_slice(&id.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, TokenizerError> {
        let mut r = Reader { data, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(TokenizerError::Format("bad magic"));
        }
        if r.u32()? != VERSION {
            return Err(TokenizerError::Format("unsupported version"));
        }
        let nfkc = r.u8()? != 0;
        let lowercase = r.u8()? != 0;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let piece = core::str::from_utf8(r.take(len)?)
                .map_err(|_| TokenizerError::Format("piece is not valid UTF-8"))?;
            let log_prob = f64::from_le_bytes(
                r.take(8)?.try_into().map_err(|_| TokenizerError::Format("truncated"))?,
            );
            entries.push((String::from(piece), log_prob));
        }
        let special_ids =
            SpecialIds { bos: r.u32()?, eos: r.u32()?, unk: r.u32()?, pad: r.u32()? };
        if r.pos != data.len() {
            return Err(TokenizerError::Format("trailing bytes"));
        }
        TokenizerModel::new(entries, special_ids, Normalization { nfkc, lowercase })
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TokenizerError> {
        if self.pos + n > self.data.len() {
            return Err(TokenizerError::Format("truncated file"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, TokenizerError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, TokenizerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{model_from_pieces, Normalization, TokenizerModel};
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model_from_pieces(
            &[("ab", -1.5), ("обучение", -2.25), (" ", -0.5)],
            Normalization::default(),
        )
        .unwrap();
        let bytes = m.to_bytes();
        let m2 = TokenizerModel::from_bytes(&bytes).unwrap();
        assert_eq!(m, m2);
        assert_eq!(bytes, m2.to_bytes());
    }

    #[test]
    fn bad_magic_rejected() {
        let m = model_from_pieces(&[("a", -1.0)], Normalization::default()).unwrap();
        let mut bytes = m.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            TokenizerModel::from_bytes(&bytes),
            Err(TokenizerError::Format("bad magic"))
        ));
    }

    #[test]
    fn truncated_file_rejected() {
        let m = model_from_pieces(&[("a", -1.0)], Normalization::default()).unwrap();
        let bytes = m.to_bytes();
        assert!(TokenizerModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
