//! Party identities and their on-disk key files.
//!
//! A key directory holds one subdirectory per party:
//!
//! ```text
//! keys/
//!   csp/      sign.key  encrypt.key  verify.pub  encrypt.pub
//!   ma/       ...
//!   curator/  ...
//!   analyst/  ...
//! ```
//!
//! Files are raw 32-byte keys. Secret files are created with mode 0600.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use psfe_core::crypto::{
    EncryptionKeyPair, EncryptionPublicKey, PartyKeys, PublicIdentity, SigningKeyPair, VerificationKey, KEY_LEN,
};

pub const SIGN_KEY: &str = "sign.key";
pub const ENCRYPT_KEY: &str = "encrypt.key";
pub const VERIFY_PUB: &str = "verify.pub";
pub const ENCRYPT_PUB: &str = "encrypt.pub";

/// The public keys every party needs to know about the others.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Directory {
    pub curator: PublicIdentity,
    pub csp: PublicIdentity,
    pub ma: PublicIdentity,
    pub analysts: Vec<PublicIdentity>,
}

impl Directory {
    pub fn analyst_vks(&self) -> Vec<VerificationKey> {
        self.analysts.iter().map(|a| a.verification).collect()
    }

    /// Loads `curator`, `csp`, `ma` and every `analyst*` subdirectory.
    pub fn load(root: &Path) -> io::Result<Self> {
        let mut analysts = Vec::new();
        let mut names: Vec<_> = fs::read_dir(root)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| n.starts_with("analyst"))
            .collect();
        names.sort();
        for name in names {
            analysts.push(load_public(&root.join(name))?);
        }
        Ok(Self {
            curator: load_public(&root.join("curator"))?,
            csp: load_public(&root.join("csp"))?,
            ma: load_public(&root.join("ma"))?,
            analysts,
        })
    }
}

fn read_key(path: &Path) -> io::Result<[u8; KEY_LEN]> {
    let bytes = fs::read(path)?;
    bytes.as_slice().try_into().map_err(|_| {
        io::Error::new(io::ErrorKind::InvalidData, format!("{}: expected {KEY_LEN} bytes", path.display()))
    })
}

fn write_file(path: &Path, bytes: &[u8], secret: bool) -> io::Result<()> {
    let mut opts = fs::OpenOptions::new();
    opts.write(true).create(true).truncate(true);
    #[cfg(unix)]
    if secret {
        use std::os::unix::fs::OpenOptionsExt;
        opts.mode(0o600);
    }
    #[cfg(not(unix))]
    let _ = secret;
    opts.open(path)?.write_all(bytes)
}

pub fn save_party(dir: &Path, keys: &PartyKeys) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let public = keys.public();
    write_file(&dir.join(SIGN_KEY), &keys.signing.seed(), true)?;
    write_file(&dir.join(ENCRYPT_KEY), &keys.encryption.secret_bytes(), true)?;
    write_file(&dir.join(VERIFY_PUB), &public.verification.0, false)?;
    write_file(&dir.join(ENCRYPT_PUB), &public.encryption.0, false)
}

pub fn load_party(dir: &Path) -> io::Result<PartyKeys> {
    Ok(PartyKeys {
        signing: SigningKeyPair::from_seed(read_key(&dir.join(SIGN_KEY))?),
        encryption: EncryptionKeyPair::from_secret(read_key(&dir.join(ENCRYPT_KEY))?),
    })
}

pub fn load_public(dir: &Path) -> io::Result<PublicIdentity> {
    Ok(PublicIdentity {
        verification: VerificationKey(read_key(&dir.join(VERIFY_PUB))?),
        encryption: EncryptionPublicKey(read_key(&dir.join(ENCRYPT_PUB))?),
    })
}

pub fn role_dir(root: &Path, role: &str) -> PathBuf {
    root.join(role)
}
