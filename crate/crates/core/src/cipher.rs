//! One-time-pad encryption and block packing.
//!
//! XOR with a uniform key makes the ciphertext uniform regardless of the
//! message, which is what lets the codec start every block posterior from the
//! uniform distribution. Bits are packed most-significant-first into blocks of
//! `block_bits`; the last block is zero-padded on the right.
//!
//! A key must never be reused across messages.

use crate::error::{Error, Result};
use crate::prob::Rng;

/// Largest supported block size in bits.
pub const MAX_BLOCK_BITS: u32 = 20;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Key {
    bits: Vec<bool>,
}

impl Key {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Key { bits }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Lowercase hex of the MSB-first packed bytes.
    pub fn to_hex(&self) -> String {
        hex::encode(bits_to_bytes(&self.bits))
    }

    /// Parses a hex key of `len` bits; surrounding whitespace is ignored.
    pub fn from_hex(s: &str, len: usize) -> Result<Self> {
        let bytes = hex::decode(s.trim())
            .map_err(|e| Error::InvalidConfig(format!("key is not hex: {e}")))?;
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::LengthMismatch {
                expected: len,
                actual: bytes.len() * 8,
            });
        }
        let mut bits = bytes_to_bits(&bytes);
        bits.truncate(len);
        Ok(Key { bits })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    bits: Vec<bool>,
    block_bits: u32,
    blocks: Vec<u32>,
}

impl Ciphertext {
    pub fn from_bits(bits: Vec<bool>, block_bits: u32) -> Result<Self> {
        check_block_bits(block_bits)?;
        let blocks = pack_blocks(&bits, block_bits);
        Ok(Ciphertext {
            bits,
            block_bits,
            blocks,
        })
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn block_bits(&self) -> u32 {
        self.block_bits
    }

    pub fn blocks(&self) -> &[u32] {
        &self.blocks
    }
}

pub fn check_block_bits(block_bits: u32) -> Result<()> {
    if (1..=MAX_BLOCK_BITS).contains(&block_bits) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "block size must be in 1..={MAX_BLOCK_BITS}, got {block_bits}"
        )))
    }
}

/// Number of blocks needed for `len` bits.
pub fn block_count(len: usize, block_bits: u32) -> usize {
    len.div_ceil(block_bits as usize)
}

pub fn gen_key(len: usize, rng: &mut Rng) -> Key {
    Key {
        bits: random_bits(len, rng),
    }
}

pub fn random_bits(len: usize, rng: &mut Rng) -> Vec<bool> {
    (0..len).map(|_| rng.next_bit()).collect()
}

fn xor(a: &[bool], key: &Key) -> Result<Vec<bool>> {
    if a.len() != key.len() {
        return Err(Error::LengthMismatch {
            expected: key.len(),
            actual: a.len(),
        });
    }
    Ok(a.iter().zip(&key.bits).map(|(x, k)| x ^ k).collect())
}

pub fn encrypt(message: &[bool], key: &Key, block_bits: u32) -> Result<Ciphertext> {
    Ciphertext::from_bits(xor(message, key)?, block_bits)
}

pub fn decrypt(c: &Ciphertext, key: &Key) -> Result<Vec<bool>> {
    xor(&c.bits, key)
}

pub fn pack_blocks(bits: &[bool], block_bits: u32) -> Vec<u32> {
    let b = block_bits as usize;
    bits.chunks(b)
        .map(|chunk| {
            let v = chunk.iter().fold(0u32, |acc, &bit| (acc << 1) | bit as u32);
            v << (b - chunk.len())
        })
        .collect()
}

/// Inverse of [`pack_blocks`]; padding past `len` bits is dropped.
pub fn unpack_blocks(blocks: &[u32], block_bits: u32, len: usize) -> Vec<bool> {
    let mut bits: Vec<bool> = blocks
        .iter()
        .flat_map(|&v| (0..block_bits).rev().map(move |i| (v >> i) & 1 == 1))
        .collect();
    bits.truncate(len);
    bits
}

pub fn bytes_to_bits(bytes: &[u8]) -> Vec<bool> {
    bytes
        .iter()
        .flat_map(|&byte| (0..8).rev().map(move |i| (byte >> i) & 1 == 1))
        .collect()
}

/// MSB-first; a trailing partial byte is zero-padded.
pub fn bits_to_bytes(bits: &[bool]) -> Vec<u8> {
    bits.chunks(8)
        .map(|chunk| {
            chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, &bit)| acc | ((bit as u8) << (7 - i)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::Rng;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn parse(s: &str) -> Vec<bool> {
        s.chars().map(|c| c == '1').collect()
    }

    #[test]
    fn pack_examples() {
        assert_eq!(pack_blocks(&parse("10110011"), 4), vec![11, 3]);
        let bits = parse("1011001110");
        assert_eq!(
            pack_blocks(&bits, 1),
            bits.iter().map(|&b| b as u32).collect::<Vec<_>>()
        );
        // b4 = 1 lands in the top bit of the padded block
        assert_eq!(pack_blocks(&parse("01101"), 4), vec![0b0110, 8]);
        assert_eq!(unpack_blocks(&[0b0110, 8], 4, 5), parse("01101"));
    }

    #[test]
    fn gen_key_lengths_and_determinism() {
        let a = gen_key(8, &mut Rng::new(7));
        assert_eq!(a, gen_key(8, &mut Rng::new(7)));
        assert_eq!(gen_key(80, &mut Rng::new(1)).len(), 80);
        let keys: HashSet<Vec<bool>> = (0..100)
            .map(|s| gen_key(80, &mut Rng::new(s)).bits().to_vec())
            .collect();
        assert_eq!(keys.len(), 100);
    }

    #[test]
    fn encrypt_identities() {
        let m = parse("1100101011");
        let k = Key::from_bits(m.clone());
        assert!(encrypt(&m, &k, 5).unwrap().bits().iter().all(|&b| !b));
        let zero = Key::from_bits(vec![false; 10]);
        assert_eq!(encrypt(&m, &zero, 5).unwrap().bits(), &m[..]);
        assert!(matches!(
            encrypt(&m[..9], &k, 5),
            Err(Error::LengthMismatch {
                expected: 10,
                actual: 9
            })
        ));
        let c = Ciphertext::from_bits(m.clone(), 5).unwrap();
        assert!(decrypt(&c, &Key::from_bits(vec![true; 3])).is_err());
    }

    #[test]
    fn ciphertext_bits_are_balanced() {
        let mut rng = Rng::new(99);
        let len = 16;
        let trials = 10_000;
        let mut ones = vec![0usize; len];
        let message = parse("1111111100000000");
        for _ in 0..trials {
            let key = gen_key(len, &mut rng);
            let c = encrypt(&message, &key, 4).unwrap();
            assert_eq!(decrypt(&c, &key).unwrap(), message);
            for (i, &b) in c.bits().iter().enumerate() {
                ones[i] += b as usize;
            }
        }
        for count in ones {
            assert!((count as f64 / trials as f64 - 0.5).abs() < 0.02);
        }
    }

    #[test]
    fn blocks_are_equidistributed() {
        // fixed message, 4-bit blocks over 10^5 keys; chi-square 15 dof, 0.999 quantile 37.70
        let mut rng = Rng::new(5);
        let message = parse("1010");
        let mut counts = [0usize; 16];
        let trials = 100_000;
        for _ in 0..trials {
            let c = encrypt(&message, &gen_key(4, &mut rng), 4).unwrap();
            counts[c.blocks()[0] as usize] += 1;
        }
        let e = trials as f64 / 16.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        assert!(chi2 < 37.70, "chi2 = {chi2}");
    }

    #[test]
    fn key_hex() {
        let k = Key::from_bits(parse("1010111100000001"));
        assert_eq!(k.to_hex(), "af01");
        assert_eq!(Key::from_hex("af01\n", 16).unwrap(), k);
        assert!(Key::from_hex("af", 16).is_err());
        assert!(Key::from_hex("zz01", 16).is_err());
    }

    #[test]
    fn block_size_validation() {
        assert!(check_block_bits(0).is_err());
        assert!(check_block_bits(21).is_err());
        assert!(check_block_bits(20).is_ok());
    }

    proptest! {
        #[test]
        fn pack_and_xor_invert(
            bits in prop::collection::vec(any::<bool>(), 1..=256),
            b in 1u32..=20,
            seed in any::<u64>(),
        ) {
            let blocks = pack_blocks(&bits, b);
            prop_assert_eq!(blocks.len(), block_count(bits.len(), b));
            prop_assert!(blocks.iter().all(|&v| v < (1 << b)));
            prop_assert_eq!(unpack_blocks(&blocks, b, bits.len()), bits.clone());

            let key = gen_key(bits.len(), &mut Rng::new(seed));
            let c = encrypt(&bits, &key, b).unwrap();
            prop_assert_eq!(decrypt(&c, &key).unwrap(), bits);
        }
    }
}
