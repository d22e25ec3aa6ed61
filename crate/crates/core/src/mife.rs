//! Symmetric multi-input functional encryption for the ℓ1 norm.
//!
//! Every input slot `i` is masked with its own key `k_i`; a functional key
//! for a subset `S` of slots is the sum of the keys in `S`. Subtracting the
//! functional key from the sum of the ciphertexts in `S` yields the sum of
//! the plaintexts and nothing else.
//!
//! The ambient group is `Z_q` with `q = 2^64`. Inside that group the additive
//! mask is a perfect one-time pad. Callers must keep `|x| < 2^32` per slot and
//! at most `2^16` slots per sum, so that the true sum never aliases under the
//! centered interpretation of the decrypted residue.

use std::collections::BTreeSet;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub};

use rand::{CryptoRng, RngCore};
use thiserror::Error;

/// Largest plaintext magnitude (exclusive) that decrypts without aliasing.
pub const PLAINTEXT_BOUND: i64 = 1 << 32;

/// Largest number of slots that may be summed under one functional key.
pub const MAX_SUM_SLOTS: usize = 1 << 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MifeError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("slot {index} out of range for a key vector of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("ciphertext slots do not match the functional key")]
    KeyMismatch,
    #[error("key vector encoding is malformed")]
    Malformed,
}

/// A residue modulo `2^64`.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupElement(u64);

impl GroupElement {
    pub const ZERO: Self = Self(0);
    pub const ENCODED_LEN: usize = 8;

    pub const fn new(value: u64) -> Self {
        Self(value)
    }

    /// Embeds a signed integer by two's-complement reduction mod `2^64`.
    pub const fn from_signed(value: i64) -> Self {
        Self(value as u64)
    }

    pub fn random<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Self {
        Self(rng.next_u64())
    }

    pub const fn value(self) -> u64 {
        self.0
    }

    /// The representative in `[-2^63, 2^63)`.
    pub const fn centered(self) -> i64 {
        self.0 as i64
    }

    pub const fn to_le_bytes(self) -> [u8; 8] {
        self.0.to_le_bytes()
    }

    pub const fn from_le_bytes(bytes: [u8; 8]) -> Self {
        Self(u64::from_le_bytes(bytes))
    }
}

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupElement({})", self.0)
    }
}

impl Add for GroupElement {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self(self.0.wrapping_add(rhs.0))
    }
}

impl AddAssign for GroupElement {
    fn add_assign(&mut self, rhs: Self) {
        self.0 = self.0.wrapping_add(rhs.0);
    }
}

impl Sub for GroupElement {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self(self.0.wrapping_sub(rhs.0))
    }
}

impl Neg for GroupElement {
    type Output = Self;
    fn neg(self) -> Self {
        Self(self.0.wrapping_neg())
    }
}

impl Sum for GroupElement {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a GroupElement> for GroupElement {
    fn sum<I: Iterator<Item = &'a Self>>(iter: I) -> Self {
        iter.copied().sum()
    }
}

/// The master key `K = [k_1, ..., k_n]`. Slots are zero-based.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyVector(Vec<GroupElement>);

impl fmt::Debug for KeyVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyVector").field("len", &self.0.len()).finish_non_exhaustive()
    }
}

impl KeyVector {
    pub fn from_elements(keys: Vec<GroupElement>) -> Result<Self, MifeError> {
        if keys.is_empty() {
            return Err(MifeError::InvalidParameter("key vector must not be empty"));
        }
        Ok(Self(keys))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, index: usize) -> Result<GroupElement, MifeError> {
        self.0
            .get(index)
            .copied()
            .ok_or(MifeError::IndexOutOfRange { index, len: self.0.len() })
    }

    pub fn as_slice(&self) -> &[GroupElement] {
        &self.0
    }

    /// 4-byte little-endian length followed by the little-endian elements.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.0.len() * GroupElement::ENCODED_LEN);
        out.extend_from_slice(&(self.0.len() as u32).to_le_bytes());
        for key in &self.0 {
            out.extend_from_slice(&key.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MifeError> {
        let (len, rest) = bytes.split_first_chunk::<4>().ok_or(MifeError::Malformed)?;
        let len = u32::from_le_bytes(*len) as usize;
        if rest.len() != len * GroupElement::ENCODED_LEN {
            return Err(MifeError::Malformed);
        }
        let keys = rest
            .chunks_exact(GroupElement::ENCODED_LEN)
            .map(|c| GroupElement::from_le_bytes(c.try_into().expect("chunk length")))
            .collect();
        Self::from_elements(keys)
    }
}

/// `ct_i = x_i + k_i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    pub index: usize,
    pub body: GroupElement,
}

/// `sk = Σ_{i ∈ S} k_i` together with the slot set `S` it opens.
#[derive(Clone, PartialEq, Eq)]
pub struct FunctionalKey {
    body: GroupElement,
    covered: BTreeSet<usize>,
}

impl fmt::Debug for FunctionalKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FunctionalKey")
            .field("covered", &self.covered)
            .finish_non_exhaustive()
    }
}

impl FunctionalKey {
    /// Assembles a key from an already-summed body, e.g. one received over
    /// the wire. The caller vouches that `body` matches `covered`.
    pub fn from_parts(body: GroupElement, covered: BTreeSet<usize>) -> Result<Self, MifeError> {
        if covered.is_empty() {
            return Err(MifeError::InvalidParameter("functional key must cover at least one slot"));
        }
        Ok(Self { body, covered })
    }

    pub fn body(&self) -> GroupElement {
        self.body
    }

    pub fn covered_indices(&self) -> &BTreeSet<usize> {
        &self.covered
    }

    /// Same coverage, body shifted by `delta` (mod q).
    pub fn shifted(&self, delta: GroupElement) -> Self {
        Self { body: self.body + delta, covered: self.covered.clone() }
    }
}

pub fn setup<R: RngCore + CryptoRng + ?Sized>(n: usize, rng: &mut R) -> Result<KeyVector, MifeError> {
    if n == 0 {
        return Err(MifeError::InvalidParameter("n must be at least 1"));
    }
    Ok(KeyVector((0..n).map(|_| GroupElement::random(rng)).collect()))
}

pub fn encrypt(keys: &KeyVector, index: usize, plaintext: GroupElement) -> Result<Ciphertext, MifeError> {
    let key = keys.get(index)?;
    Ok(Ciphertext { index, body: plaintext + key })
}

pub fn keygen(keys: &KeyVector, subset: &BTreeSet<usize>) -> Result<FunctionalKey, MifeError> {
    if subset.is_empty() {
        return Err(MifeError::InvalidParameter("subset must not be empty"));
    }
    let mut body = GroupElement::ZERO;
    for &index in subset {
        body += keys.get(index)?;
    }
    Ok(FunctionalKey { body, covered: subset.clone() })
}

/// Returns the centered value of `Σ ct_i − sk`. The ciphertext slots must be
/// exactly the key's covered slots, each appearing once.
pub fn decrypt(key: &FunctionalKey, ciphertexts: &[Ciphertext]) -> Result<i64, MifeError> {
    if ciphertexts.len() != key.covered.len() {
        return Err(MifeError::KeyMismatch);
    }
    let mut seen = BTreeSet::new();
    for ct in ciphertexts {
        if !key.covered.contains(&ct.index) || !seen.insert(ct.index) {
            return Err(MifeError::KeyMismatch);
        }
    }
    let total: GroupElement = ciphertexts.iter().map(|ct| ct.body).sum();
    Ok((total - key.body).centered())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn kv(values: &[u64]) -> KeyVector {
        KeyVector::from_elements(values.iter().map(|&v| GroupElement::new(v)).collect()).unwrap()
    }

    fn set(items: &[usize]) -> BTreeSet<usize> {
        items.iter().copied().collect()
    }

    #[test]
    fn setup_lengths_and_rejects_zero() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert_eq!(setup(3, &mut rng).unwrap().len(), 3);
        assert_eq!(setup(1, &mut rng).unwrap().len(), 1);
        assert!(matches!(setup(0, &mut rng), Err(MifeError::InvalidParameter(_))));
    }

    #[test]
    fn independent_setups_differ() {
        let a = setup(3, &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
        let b = setup(3, &mut ChaCha20Rng::seed_from_u64(2)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn encrypt_examples() {
        let keys = kv(&[5, 7]);
        assert_eq!(encrypt(&keys, 0, GroupElement::new(3)).unwrap().body, GroupElement::new(8));
        assert_eq!(encrypt(&keys, 1, GroupElement::new(4)).unwrap().body, GroupElement::new(11));
        let wrap = encrypt(&kv(&[5]), 0, GroupElement::new(u64::MAX)).unwrap();
        assert_eq!(wrap.body, GroupElement::new(4));
        assert_eq!(
            encrypt(&keys, 2, GroupElement::ZERO),
            Err(MifeError::IndexOutOfRange { index: 2, len: 2 })
        );
    }

    #[test]
    fn keygen_examples() {
        assert_eq!(keygen(&kv(&[5, 7]), &set(&[0, 1])).unwrap().body(), GroupElement::new(12));
        assert_eq!(keygen(&kv(&[5, 7]), &set(&[1])).unwrap().body(), GroupElement::new(7));
        assert_eq!(keygen(&kv(&[5, 7, 9]), &set(&[0, 2])).unwrap().body(), GroupElement::new(14));
        assert!(matches!(keygen(&kv(&[5]), &set(&[])), Err(MifeError::InvalidParameter(_))));
        assert!(matches!(keygen(&kv(&[5]), &set(&[3])), Err(MifeError::IndexOutOfRange { .. })));
    }

    #[test]
    fn decrypt_examples() {
        let keys = kv(&[5, 7]);
        let sk = keygen(&keys, &set(&[0, 1])).unwrap();
        let cts = [
            encrypt(&keys, 0, GroupElement::new(3)).unwrap(),
            encrypt(&keys, 1, GroupElement::new(4)).unwrap(),
        ];
        assert_eq!(decrypt(&sk, &cts), Ok(7));

        let single = keygen(&keys, &set(&[1])).unwrap();
        assert_eq!(decrypt(&single, &cts[1..]), Ok(4));
        assert_eq!(decrypt(&single, &cts[..1]), Err(MifeError::KeyMismatch));
        assert_eq!(decrypt(&sk, &cts[..1]), Err(MifeError::KeyMismatch));
        assert_eq!(decrypt(&sk, &[cts[0], cts[0]]), Err(MifeError::KeyMismatch));
    }

    #[test]
    fn decrypt_random_against_plaintext_sum() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let keys = setup(10, &mut rng).unwrap();
        let xs: Vec<i64> = (0..10).map(|_| rng.gen_range(0..PLAINTEXT_BOUND)).collect();
        let expected: i64 = xs.iter().sum();
        let cts: Vec<_> = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| encrypt(&keys, i, GroupElement::from_signed(x)).unwrap())
            .collect();
        let sk = keygen(&keys, &(0..10).collect()).unwrap();
        assert_eq!(decrypt(&sk, &cts), Ok(expected));
    }

    #[test]
    fn negative_sums_are_centered() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let keys = setup(2, &mut rng).unwrap();
        let cts = [
            encrypt(&keys, 0, GroupElement::from_signed(-40)).unwrap(),
            encrypt(&keys, 1, GroupElement::from_signed(15)).unwrap(),
        ];
        let sk = keygen(&keys, &set(&[0, 1])).unwrap();
        assert_eq!(decrypt(&sk, &cts), Ok(-25));
    }

    #[test]
    fn key_vector_bytes() {
        let keys = kv(&[1, u64::MAX]);
        let bytes = keys.to_bytes();
        assert_eq!(&bytes[..4], &2u32.to_le_bytes());
        assert_eq!(&bytes[4..12], &1u64.to_le_bytes());
        assert_eq!(KeyVector::from_bytes(&bytes).unwrap(), keys);
        assert_eq!(KeyVector::from_bytes(&bytes[..11]), Err(MifeError::Malformed));
    }

    /// For a fixed plaintext the ciphertext body over random keys should be
    /// uniform; chi-square over the low 16 bits.
    #[test]
    fn ciphertext_masking_is_uniform() {
        const SAMPLES: usize = 1_000_000;
        const BINS: usize = 1 << 16;
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let x = GroupElement::new(42);
        let mut counts = vec![0u32; BINS];
        for _ in 0..SAMPLES {
            let keys = setup(1, &mut rng).unwrap();
            let ct = encrypt(&keys, 0, x).unwrap();
            counts[(ct.body.value() & 0xffff) as usize] += 1;
        }
        let expected = SAMPLES as f64 / BINS as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // Wilson-Hilferty: (chi2/k)^(1/3) is approximately normal.
        let k = (BINS - 1) as f64;
        let z = ((chi2 / k).powf(1.0 / 3.0) - (1.0 - 2.0 / (9.0 * k))) / (2.0 / (9.0 * k)).sqrt();
        // p > 0.001 (upper tail) corresponds to z < 3.09
        assert!(z < 3.09, "chi2 = {chi2}, z = {z}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn linearity_over_disjoint_subsets(seed: u64, n in 2usize..64, split in 1usize..63) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let keys = setup(n, &mut rng).unwrap();
            let split = split.min(n - 1);
            let left: BTreeSet<usize> = (0..split).collect();
            let right: BTreeSet<usize> = (split..n).collect();
            let all: BTreeSet<usize> = (0..n).collect();
            let sum = keygen(&keys, &left).unwrap().body() + keygen(&keys, &right).unwrap().body();
            prop_assert_eq!(keygen(&keys, &all).unwrap().body(), sum);
        }

        #[test]
        fn decrypts_random_subsets(seed: u64, n in 1usize..=64) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let keys = setup(n, &mut rng).unwrap();
            let xs: Vec<i64> = (0..n).map(|_| rng.gen_range(0..PLAINTEXT_BOUND)).collect();
            let subset: BTreeSet<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
            prop_assume!(!subset.is_empty());
            let cts: Vec<_> = subset
                .iter()
                .map(|&i| encrypt(&keys, i, GroupElement::from_signed(xs[i])).unwrap())
                .collect();
            let expected: i64 = subset.iter().map(|&i| xs[i]).sum();
            prop_assert_eq!(decrypt(&keygen(&keys, &subset).unwrap(), &cts), Ok(expected));
        }
    }
}
