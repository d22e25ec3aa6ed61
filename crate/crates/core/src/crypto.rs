//! Hash, signature and public-key encryption used by every party.
//!
//! Suite: SHA-256 for `H`, Ed25519 signatures, and a hybrid envelope of
//! X25519 ephemeral-static agreement, HKDF-SHA-256 and ChaCha20-Poly1305.

use std::fmt;

use chacha20poly1305::aead::{AeadInPlace, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce, Tag};
use ed25519_dalek::Signer as _;
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use sha2::{Digest as _, Sha256};
use thiserror::Error;
use x25519_dalek::{PublicKey as XPublicKey, StaticSecret};

pub const DIGEST_LEN: usize = 32;
pub const SALT_LEN: usize = 16;
pub const KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;
pub const TAG_LEN: usize = 16;

const ENVELOPE_INFO: &[u8] = b"psfe envelope v1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("envelope is malformed")]
    MalformedEnvelope,
    #[error("envelope failed authentication")]
    Decryption,
    #[error("key bytes are malformed")]
    MalformedKey,
}

/// A 32-byte SHA-256 digest.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(Self)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// `H(a ‖ b ‖ ...)` without materializing the concatenation.
pub fn hash_concat(parts: &[&[u8]]) -> Digest {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
    }
    Digest(hasher.finalize().into())
}

pub fn random_salt<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> [u8; SALT_LEN] {
    let mut salt = [0u8; SALT_LEN];
    rng.fill_bytes(&mut salt);
    salt
}

/// Ed25519 verification key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VerificationKey(pub [u8; KEY_LEN]);

impl VerificationKey {
    /// Stable analyst/party identifier: `H(vk)`.
    pub fn fingerprint(&self) -> Digest {
        hash(&self.0)
    }
}

impl fmt::Debug for VerificationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VerificationKey({})", &hex::encode(self.0)[..16])
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", &hex::encode(self.0)[..16])
    }
}

pub struct SigningKeyPair {
    key: ed25519_dalek::SigningKey,
}

impl fmt::Debug for SigningKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningKeyPair")
            .field("verification_key", &self.verification_key())
            .finish_non_exhaustive()
    }
}

impl SigningKeyPair {
    pub fn generate<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Self {
        let mut seed = [0u8; KEY_LEN];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn from_seed(seed: [u8; KEY_LEN]) -> Self {
        Self { key: ed25519_dalek::SigningKey::from_bytes(&seed) }
    }

    pub fn seed(&self) -> [u8; KEY_LEN] {
        self.key.to_bytes()
    }

    pub fn verification_key(&self) -> VerificationKey {
        VerificationKey(self.key.verifying_key().to_bytes())
    }

    pub fn sign(&self, data: &[u8]) -> Signature {
        Signature(self.key.sign(data).to_bytes())
    }
}

/// Accepts iff `signature` was produced over exactly `data` by the holder of
/// `vk`. Malformed keys are a rejection, not a fault.
pub fn verify(vk: &VerificationKey, data: &[u8], signature: &Signature) -> bool {
    let Ok(key) = ed25519_dalek::VerifyingKey::from_bytes(&vk.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
    key.verify_strict(data, &sig).is_ok()
}

/// X25519 public key of an envelope recipient.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct EncryptionPublicKey(pub [u8; KEY_LEN]);

impl fmt::Debug for EncryptionPublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EncryptionPublicKey({})", &hex::encode(self.0)[..16])
    }
}

pub struct EncryptionKeyPair {
    secret: StaticSecret,
    public: EncryptionPublicKey,
}

impl fmt::Debug for EncryptionKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EncryptionKeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

impl EncryptionKeyPair {
    pub fn generate<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; KEY_LEN];
        rng.fill_bytes(&mut bytes);
        Self::from_secret(bytes)
    }

    pub fn from_secret(bytes: [u8; KEY_LEN]) -> Self {
        let secret = StaticSecret::from(bytes);
        let public = EncryptionPublicKey(XPublicKey::from(&secret).to_bytes());
        Self { secret, public }
    }

    pub fn secret_bytes(&self) -> [u8; KEY_LEN] {
        self.secret.to_bytes()
    }

    pub fn public_key(&self) -> EncryptionPublicKey {
        self.public
    }
}

/// Hybrid ciphertext: ephemeral X25519 share, AEAD tag and body.
#[derive(Clone, PartialEq, Eq)]
pub struct Envelope {
    pub ephemeral: [u8; KEY_LEN],
    pub tag: [u8; TAG_LEN],
    pub ciphertext: Vec<u8>,
}

impl fmt::Debug for Envelope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Envelope").field("len", &self.ciphertext.len()).finish_non_exhaustive()
    }
}

impl Envelope {
    pub const OVERHEAD: usize = KEY_LEN + TAG_LEN;

    /// `ephemeral ‖ tag ‖ ciphertext`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::OVERHEAD + self.ciphertext.len());
        out.extend_from_slice(&self.ephemeral);
        out.extend_from_slice(&self.tag);
        out.extend_from_slice(&self.ciphertext);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < Self::OVERHEAD {
            return Err(CryptoError::MalformedEnvelope);
        }
        Ok(Self {
            ephemeral: bytes[..KEY_LEN].try_into().expect("length checked"),
            tag: bytes[KEY_LEN..Self::OVERHEAD].try_into().expect("length checked"),
            ciphertext: bytes[Self::OVERHEAD..].to_vec(),
        })
    }
}

fn envelope_cipher(shared: &[u8; 32], ephemeral: &[u8; KEY_LEN], recipient: &[u8; KEY_LEN]) -> ChaCha20Poly1305 {
    let hk = Hkdf::<Sha256>::new(None, shared);
    let mut key = [0u8; 32];
    let mut info = Vec::with_capacity(ENVELOPE_INFO.len() + 2 * KEY_LEN);
    info.extend_from_slice(ENVELOPE_INFO);
    info.extend_from_slice(ephemeral);
    info.extend_from_slice(recipient);
    hk.expand(&info, &mut key).expect("32 bytes is a valid HKDF output length");
    ChaCha20Poly1305::new(Key::from_slice(&key))
}

// Each envelope derives a fresh key from a fresh ephemeral share, so a fixed
// nonce never repeats under one key.
const ENVELOPE_NONCE: [u8; 12] = [0u8; 12];

pub fn pk_encrypt<R: RngCore + CryptoRng + ?Sized>(
    recipient: &EncryptionPublicKey,
    plaintext: &[u8],
    rng: &mut R,
) -> Envelope {
    let mut eph_bytes = [0u8; KEY_LEN];
    rng.fill_bytes(&mut eph_bytes);
    let eph = StaticSecret::from(eph_bytes);
    let ephemeral = XPublicKey::from(&eph).to_bytes();
    let shared = eph.diffie_hellman(&XPublicKey::from(recipient.0));
    let cipher = envelope_cipher(shared.as_bytes(), &ephemeral, &recipient.0);
    let mut ciphertext = plaintext.to_vec();
    let tag = cipher
        .encrypt_in_place_detached(Nonce::from_slice(&ENVELOPE_NONCE), &ephemeral, &mut ciphertext)
        .expect("payload within ChaCha20-Poly1305 limits");
    Envelope { ephemeral, tag: tag.into(), ciphertext }
}

pub fn pk_decrypt(keys: &EncryptionKeyPair, envelope: &Envelope) -> Result<Vec<u8>, CryptoError> {
    let shared = keys.secret.diffie_hellman(&XPublicKey::from(envelope.ephemeral));
    if !shared.was_contributory() {
        return Err(CryptoError::Decryption);
    }
    let cipher = envelope_cipher(shared.as_bytes(), &envelope.ephemeral, &keys.public.0);
    let mut plaintext = envelope.ciphertext.clone();
    cipher
        .decrypt_in_place_detached(
            Nonce::from_slice(&ENVELOPE_NONCE),
            &envelope.ephemeral,
            &mut plaintext,
            Tag::from_slice(&envelope.tag),
        )
        .map_err(|_| CryptoError::Decryption)?;
    Ok(plaintext)
}

/// One party's long-term key material.
#[derive(Debug)]
pub struct PartyKeys {
    pub encryption: EncryptionKeyPair,
    pub signing: SigningKeyPair,
}

impl PartyKeys {
    pub fn public(&self) -> PublicIdentity {
        PublicIdentity {
            verification: self.signing.verification_key(),
            encryption: self.encryption.public_key(),
        }
    }
}

/// What other parties need to know about a party.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PublicIdentity {
    pub verification: VerificationKey,
    pub encryption: EncryptionPublicKey,
}

pub fn gen_party_keys<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> PartyKeys {
    PartyKeys {
        encryption: EncryptionKeyPair::generate(rng),
        signing: SigningKeyPair::generate(rng),
    }
}
