//! Scrambled timestamp sequence generation.
//!
//! The STS bit stream is the keystream of a 128-bit block cipher run in
//! counter mode: each 128-bit block encrypts `upper96 || counter`, with the
//! 32-bit counter advancing by one per block. Devices sharing the key and
//! counter state can predict the sequence; nobody else can.

use aes::cipher::{BlockEncrypt, KeyInit};
use aes::Aes128;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STS_BLOCK_BITS: usize = 128;

/// Key and counter state for one packet's STS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StsConfig {
    /// 128-bit session key, big-endian byte order.
    pub key: [u8; 16],
    /// Fixed upper 96 bits of the counter-mode input block, big-endian.
    pub upper96: [u8; 12],
    /// STS V counter; advances by one per ranging packet.
    pub counter: u32,
    /// Total STS length in bits; must be a multiple of 128.
    pub length_bits: usize,
}

impl Default for StsConfig {
    fn default() -> Self {
        Self { key: [0; 16], upper96: [0; 12], counter: 0, length_bits: 4096 }
    }
}

impl StsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.length_bits == 0 || self.length_bits % STS_BLOCK_BITS != 0 {
            return Err(Error::config(format!(
                "STS length {} is not a positive multiple of {STS_BLOCK_BITS}",
                self.length_bits
            )));
        }
        Ok(())
    }

    /// Same configuration with the packet counter advanced by one.
    pub fn next_packet(&self) -> Self {
        Self { counter: self.counter.wrapping_add(1), ..*self }
    }
}

/// Produces `cfg.length_bits` pseudo-random bits (one byte per bit, 0 or 1),
/// MSB-first within each keystream byte.
pub fn generate_sts_bits(cfg: &StsConfig) -> Result<Vec<u8>> {
    cfg.validate()?;
    let cipher = Aes128::new(&cfg.key.into());
    let blocks = cfg.length_bits / STS_BLOCK_BITS;
    let mut bits = Vec::with_capacity(cfg.length_bits);
    for i in 0..blocks {
        let mut block = [0u8; 16];
        block[..12].copy_from_slice(&cfg.upper96);
        block[12..].copy_from_slice(&cfg.counter.wrapping_add(i as u32).to_be_bytes());
        let mut ga = block.into();
        cipher.encrypt_block(&mut ga);
        for byte in ga.iter() {
            for bit in (0..8).rev() {
                bits.push((byte >> bit) & 1);
            }
        }
    }
    Ok(bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    // FIPS-197 appendix C.1 style anchor: AES-128 of the all-zero block
    // under the all-zero key.
    const ZERO_KEY_ZERO_BLOCK: [u8; 16] = [
        0x66, 0xe9, 0x4b, 0xd4, 0xef, 0x8a, 0x2c, 0x3b, 0x88, 0x4c, 0xfa, 0x59, 0xca, 0x34,
        0x2b, 0x2e,
    ];

    fn bits_to_bytes(bits: &[u8]) -> Vec<u8> {
        bits.chunks(8)
            .map(|c| c.iter().fold(0u8, |acc, &b| (acc << 1) | b))
            .collect()
    }

    #[test]
    fn zero_config_first_block_matches_cipher_output() {
        let cfg = StsConfig { length_bits: 128, ..Default::default() };
        let bits = generate_sts_bits(&cfg).unwrap();
        assert_eq!(bits_to_bytes(&bits), ZERO_KEY_ZERO_BLOCK.to_vec());
    }

    #[test]
    fn deterministic_for_equal_configs() {
        let cfg = StsConfig { key: [7; 16], upper96: [3; 12], counter: 42, length_bits: 512 };
        assert_eq!(generate_sts_bits(&cfg).unwrap(), generate_sts_bits(&cfg).unwrap());
    }

    #[test]
    fn counter_bump_changes_first_block() {
        let cfg = StsConfig { key: [9; 16], upper96: [1; 12], counter: 5, length_bits: 256 };
        let a = generate_sts_bits(&cfg).unwrap();
        let b = generate_sts_bits(&cfg.next_packet()).unwrap();
        assert_ne!(a[..128], b[..128]);
    }

    #[test]
    fn consecutive_blocks_use_consecutive_counters() {
        // Block 1 of counter k equals block 0 of counter k+1.
        let cfg = StsConfig { key: [5; 16], upper96: [8; 12], counter: 100, length_bits: 256 };
        let two = generate_sts_bits(&cfg).unwrap();
        let shifted = generate_sts_bits(&StsConfig {
            counter: 101,
            length_bits: 128,
            ..cfg
        })
        .unwrap();
        assert_eq!(two[128..256], shifted[..]);
    }

    #[test]
    fn rejects_non_block_multiple_length() {
        let cfg = StsConfig { length_bits: 100, ..Default::default() };
        assert!(generate_sts_bits(&cfg).is_err());
    }

    #[test]
    fn counter_wraps_across_u32_boundary() {
        let cfg = StsConfig { counter: u32::MAX, length_bits: 256, ..Default::default() };
        let bits = generate_sts_bits(&cfg).unwrap();
        // Second block is counter 0, i.e. the zero-config first block.
        let zero = generate_sts_bits(&StsConfig { length_bits: 128, ..Default::default() })
            .unwrap();
        assert_eq!(bits[128..256], zero[..]);
    }
}
