//! Enclave-style sealing: authenticated encryption of every byte stream that
//! leaves the trusted boundary, under keys derived from a platform root secret
//! and a key policy.
//!
//! Keys come from HKDF-SHA-256 over the root with the serialized policy as
//! `info`. An enclave-identity policy binds a key to one measurement; a
//! signing-identity policy binds it to a signer and version, so every module
//! built by that signer derives the same key. User-key blobs are keyed from the
//! data owner's key file instead of the platform root.
//!
//! Blob layout (little-endian):
//!
//! ```text
//! "HSSB" | version u16 | policy kind u8 | policy digest [u8; 32]
//!        | policy version u32 | chunk size u32
//!        | { nonce [u8; 12] | ciphertext | tag [u8; 16] }*
//! ```
//!
//! Every chunk but the last carries exactly `chunk size` ciphertext bytes. Each
//! chunk's AAD is the 47 header bytes, the chunk index (u64) and a final-chunk
//! flag, which pins header, order and truncation under the tag.

use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use aes_gcm::aead::{AeadInPlace, KeyInit};
use aes_gcm::{Aes256Gcm, Nonce, Tag};
use hkdf::Hkdf;
use rand::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"HSSB";
pub const FORMAT_VERSION: u16 = 1;
pub const DEFAULT_CHUNK_SIZE: u32 = 1 << 20;
pub const HEADER_LEN: usize = 47;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

const KDF_SALT: &[u8] = b"hysec-seal-kdf-v1";

#[derive(Debug, Error)]
pub enum SealError {
    #[error("no root secret loaded for key derivation")]
    MissingRoot,
    #[error("not a sealed blob (bad magic)")]
    NotSealed,
    #[error("unsupported sealed blob version {0}")]
    UnsupportedVersion(u16),
    #[error("sealed blob failed authentication")]
    AuthFailure,
    #[error("sealed blob was sealed under a {found} policy, expected {expected}")]
    PolicyMismatch { expected: PolicyKind, found: PolicyKind },
    #[error("key file {path}: {reason}")]
    KeyFile { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    EnclaveIdentity,
    SigningIdentity,
    UserKey,
}

impl PolicyKind {
    fn to_byte(self) -> u8 {
        match self {
            PolicyKind::EnclaveIdentity => 0,
            PolicyKind::SigningIdentity => 1,
            PolicyKind::UserKey => 2,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(PolicyKind::EnclaveIdentity),
            1 => Some(PolicyKind::SigningIdentity),
            2 => Some(PolicyKind::UserKey),
            _ => None,
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::EnclaveIdentity => "enclave-identity",
            PolicyKind::SigningIdentity => "signing-identity",
            PolicyKind::UserKey => "user-key",
        })
    }
}

/// Which identity a sealing key is bound to. Carries ids only, never keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KeyPolicy {
    /// Bound to one enclave build (MRENCLAVE analogue).
    EnclaveIdentity { measure: [u8; 32] },
    /// Shared by every enclave from `signer` at `version` (MRSIGNER analogue).
    SigningIdentity { signer: [u8; 32], version: u32 },
    /// The data owner's key; `key_id` is a digest of the key, not the key.
    UserKey { key_id: [u8; 32] },
}

impl KeyPolicy {
    pub fn enclave(measure: [u8; 32]) -> Self {
        KeyPolicy::EnclaveIdentity { measure }
    }

    pub fn signer(signer: [u8; 32], version: u32) -> Self {
        KeyPolicy::SigningIdentity { signer, version }
    }

    pub fn user(key: &RootSecret) -> Self {
        let mut h = Sha256::new();
        h.update(b"hysec-user-key-id");
        h.update(key.0);
        KeyPolicy::UserKey { key_id: h.finalize().into() }
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            KeyPolicy::EnclaveIdentity { .. } => PolicyKind::EnclaveIdentity,
            KeyPolicy::SigningIdentity { .. } => PolicyKind::SigningIdentity,
            KeyPolicy::UserKey { .. } => PolicyKind::UserKey,
        }
    }

    pub fn digest(&self) -> [u8; 32] {
        match *self {
            KeyPolicy::EnclaveIdentity { measure } => measure,
            KeyPolicy::SigningIdentity { signer, .. } => signer,
            KeyPolicy::UserKey { key_id } => key_id,
        }
    }

    pub fn version(&self) -> u32 {
        match *self {
            KeyPolicy::SigningIdentity { version, .. } => version,
            _ => 0,
        }
    }

    fn kdf_info(&self) -> [u8; 37] {
        let mut info = [0u8; 37];
        info[0] = self.kind().to_byte();
        info[1..33].copy_from_slice(&self.digest());
        info[33..].copy_from_slice(&self.version().to_le_bytes());
        info
    }
}

/// Measurement-style digest of a module name, for building policies in tests
/// and configuration.
pub fn measure(label: &str) -> [u8; 32] {
    Sha256::digest(label.as_bytes()).into()
}

/// 32 bytes of key material: the simulated platform fuse secret or a user key.
#[derive(Clone, PartialEq, Eq)]
pub struct RootSecret([u8; 32]);

impl RootSecret {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn generate() -> Self {
        let mut bytes = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut bytes);
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// Loads a raw 32-byte key file. On Unix the file must not be readable by
    /// group or others.
    pub fn load(path: &Path) -> Result<Self, SealError> {
        let err = |reason: String| SealError::KeyFile {
            path: path.display().to_string(),
            reason,
        };
        let meta = fs::metadata(path).map_err(|e| err(e.to_string()))?;
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            let mode = meta.permissions().mode();
            if mode & 0o077 != 0 {
                return Err(err(format!(
                    "permissions {:o} are too open; expected 600",
                    mode & 0o777
                )));
            }
        }
        if meta.len() != 32 {
            return Err(err(format!("expected 32 bytes, found {}", meta.len())));
        }
        let bytes = fs::read(path).map_err(|e| err(e.to_string()))?;
        let mut key = [0u8; 32];
        key.copy_from_slice(&bytes);
        Ok(Self(key))
    }

    /// Writes the key with owner-only permissions.
    pub fn save(&self, path: &Path) -> Result<(), SealError> {
        let err = |e: io::Error| SealError::KeyFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        };
        let mut opts = fs::OpenOptions::new();
        opts.write(true).create(true).truncate(true);
        #[cfg(unix)]
        {
            use std::os::unix::fs::OpenOptionsExt;
            opts.mode(0o600);
        }
        let mut f = opts.open(path).map_err(err)?;
        f.write_all(&self.0).map_err(err)?;
        Ok(())
    }
}

impl fmt::Debug for RootSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("RootSecret(..)")
    }
}

/// EGETKEY analogue: deterministic in `(root, policy)`.
pub fn derive_key(root: Option<&RootSecret>, policy: &KeyPolicy) -> Result<[u8; 32], SealError> {
    let root = root.ok_or(SealError::MissingRoot)?;
    let hk = Hkdf::<Sha256>::new(Some(KDF_SALT), &root.0);
    let mut okm = [0u8; 32];
    hk.expand(&policy.kdf_info(), &mut okm)
        .expect("32 bytes is a valid HKDF-SHA-256 output length");
    Ok(okm)
}

// 4-byte per-process random prefix + 8-byte counter.
fn next_nonce() -> [u8; NONCE_LEN] {
    static PREFIX: OnceLock<[u8; 4]> = OnceLock::new();
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let prefix = PREFIX.get_or_init(|| {
        let mut p = [0u8; 4];
        rand::rngs::OsRng.fill_bytes(&mut p);
        p
    });
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let mut nonce = [0u8; NONCE_LEN];
    nonce[..4].copy_from_slice(prefix);
    nonce[4..].copy_from_slice(&n.to_be_bytes());
    nonce
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SealHeader {
    pub kind: PolicyKind,
    pub digest: [u8; 32],
    pub policy_version: u32,
    pub chunk_size: u32,
}

impl SealHeader {
    fn encode(kind: u8, digest: &[u8; 32], policy_version: u32, chunk_size: u32) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[..4].copy_from_slice(MAGIC);
        h[4..6].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        h[6] = kind;
        h[7..39].copy_from_slice(digest);
        h[39..43].copy_from_slice(&policy_version.to_le_bytes());
        h[43..47].copy_from_slice(&chunk_size.to_le_bytes());
        h
    }

    /// Parses the fixed header. Anything past the magic that does not parse
    /// is treated as tampering.
    pub fn decode(h: &[u8]) -> Result<Self, SealError> {
        if h.len() < 4 || &h[..4] != MAGIC {
            return Err(SealError::NotSealed);
        }
        if h.len() < HEADER_LEN {
            return Err(SealError::AuthFailure);
        }
        let version = u16::from_le_bytes([h[4], h[5]]);
        if version != FORMAT_VERSION {
            return Err(SealError::UnsupportedVersion(version));
        }
        let kind = PolicyKind::from_byte(h[6]).ok_or(SealError::AuthFailure)?;
        let mut digest = [0u8; 32];
        digest.copy_from_slice(&h[7..39]);
        let policy_version = u32::from_le_bytes(h[39..43].try_into().unwrap());
        let chunk_size = u32::from_le_bytes(h[43..47].try_into().unwrap());
        if chunk_size == 0 {
            return Err(SealError::AuthFailure);
        }
        Ok(Self {
            kind,
            digest,
            policy_version,
            chunk_size,
        })
    }
}

fn chunk_aad(header: &[u8; HEADER_LEN], index: u64, last: bool) -> [u8; HEADER_LEN + 9] {
    let mut aad = [0u8; HEADER_LEN + 9];
    aad[..HEADER_LEN].copy_from_slice(header);
    aad[HEADER_LEN..HEADER_LEN + 8].copy_from_slice(&index.to_le_bytes());
    aad[HEADER_LEN + 8] = u8::from(last);
    aad
}

/// Reads until `buf` is full or EOF; returns bytes read.
fn fill<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// A reader of fixed-size frames that knows whether the current frame is the
/// last one, via a one-frame lookahead.
struct Framer<R> {
    inner: R,
    frame: usize,
    next: Vec<u8>,
    eof: bool,
    done: bool,
}

impl<R: Read> Framer<R> {
    fn new(mut inner: R, frame: usize) -> io::Result<Self> {
        let mut next = vec![0u8; frame];
        let n = fill(&mut inner, &mut next)?;
        next.truncate(n);
        Ok(Self {
            inner,
            frame,
            eof: n < frame,
            next,
            done: false,
        })
    }

    /// Returns the next frame and whether it is the final one. Empty input
    /// yields a single empty final frame.
    fn next_frame(&mut self) -> io::Result<Option<(Vec<u8>, bool)>> {
        if self.done {
            return Ok(None);
        }
        let mut upcoming = vec![0u8; self.frame];
        let n = if self.eof { 0 } else { fill(&mut self.inner, &mut upcoming)? };
        upcoming.truncate(n);
        if n < self.frame {
            self.eof = true;
        }
        let current = std::mem::replace(&mut self.next, upcoming);
        let last = self.next.is_empty();
        self.done = last;
        Ok(Some((current, last)))
    }
}

/// Seals and unseals under keys derived from one root secret.
#[derive(Debug, Clone)]
pub struct Vault {
    root: Option<RootSecret>,
    chunk_size: u32,
}

impl Vault {
    pub fn new(root: RootSecret) -> Self {
        Self {
            root: Some(root),
            chunk_size: DEFAULT_CHUNK_SIZE,
        }
    }

    /// A vault with no root; every operation fails with [`SealError::MissingRoot`].
    pub fn without_root() -> Self {
        Self {
            root: None,
            chunk_size: DEFAULT_CHUNK_SIZE,
        }
    }

    pub fn with_chunk_size(mut self, chunk_size: u32) -> Self {
        assert!(chunk_size > 0, "chunk size must be nonzero");
        self.chunk_size = chunk_size;
        self
    }

    fn cipher(&self, policy: &KeyPolicy) -> Result<Aes256Gcm, SealError> {
        let key = derive_key(self.root.as_ref(), policy)?;
        Ok(Aes256Gcm::new_from_slice(&key).expect("32-byte key"))
    }

    pub fn seal_stream<R: Read, W: Write>(
        &self,
        reader: R,
        mut writer: W,
        policy: &KeyPolicy,
    ) -> Result<u64, SealError> {
        let cipher = self.cipher(policy)?;
        let header = SealHeader::encode(
            policy.kind().to_byte(),
            &policy.digest(),
            policy.version(),
            self.chunk_size,
        );
        writer.write_all(&header)?;
        let mut written = HEADER_LEN as u64;
        let mut framer = Framer::new(reader, self.chunk_size as usize)?;
        let mut index = 0u64;
        while let Some((mut chunk, last)) = framer.next_frame()? {
            let nonce = next_nonce();
            let aad = chunk_aad(&header, index, last);
            let tag = cipher
                .encrypt_in_place_detached(Nonce::from_slice(&nonce), &aad, &mut chunk)
                .map_err(|_| SealError::AuthFailure)?;
            writer.write_all(&nonce)?;
            writer.write_all(&chunk)?;
            writer.write_all(&tag)?;
            written += (NONCE_LEN + chunk.len() + TAG_LEN) as u64;
            index += 1;
        }
        writer.flush()?;
        Ok(written)
    }

    pub fn unseal_stream<R: Read, W: Write>(
        &self,
        mut reader: R,
        mut writer: W,
        policy: &KeyPolicy,
    ) -> Result<u64, SealError> {
        let mut header = [0u8; HEADER_LEN];
        let n = fill(&mut reader, &mut header)?;
        let parsed = SealHeader::decode(&header[..n])?;
        let cipher = self.cipher(policy)?;
        // a blob sealed under another policy kind fails authentication; report
        // the kind mismatch instead since it is the more useful diagnosis
        let fail = || {
            if parsed.kind != policy.kind() {
                SealError::PolicyMismatch {
                    expected: policy.kind(),
                    found: parsed.kind,
                }
            } else {
                SealError::AuthFailure
            }
        };
        let frame = NONCE_LEN + parsed.chunk_size as usize + TAG_LEN;
        let mut framer = Framer::new(reader, frame)?;
        let mut index = 0u64;
        let mut plain_len = 0u64;
        let mut saw_last = false;
        while let Some((mut chunk, last)) = framer.next_frame()? {
            if chunk.len() < NONCE_LEN + TAG_LEN {
                return Err(fail());
            }
            let tag_at = chunk.len() - TAG_LEN;
            let tag = Tag::clone_from_slice(&chunk[tag_at..]);
            let nonce = Nonce::clone_from_slice(&chunk[..NONCE_LEN]);
            chunk.truncate(tag_at);
            let mut body = chunk.split_off(NONCE_LEN);
            let aad = chunk_aad(&header, index, last);
            cipher
                .decrypt_in_place_detached(&nonce, &aad, &mut body, &tag)
                .map_err(|_| fail())?;
            writer.write_all(&body)?;
            plain_len += body.len() as u64;
            index += 1;
            saw_last = last;
        }
        if !saw_last {
            return Err(fail());
        }
        writer.flush()?;
        Ok(plain_len)
    }

    pub fn seal(&self, plaintext: &[u8], policy: &KeyPolicy) -> Result<SealedBlob, SealError> {
        let chunks = plaintext.len() / self.chunk_size as usize + 1;
        let mut out = Vec::with_capacity(HEADER_LEN + plaintext.len() + chunks * (NONCE_LEN + TAG_LEN));
        self.seal_stream(plaintext, &mut out, policy)?;
        Ok(SealedBlob(out))
    }

    pub fn unseal(&self, blob: &[u8], policy: &KeyPolicy) -> Result<Vec<u8>, SealError> {
        let mut out = Vec::with_capacity(blob.len());
        self.unseal_stream(blob, &mut out, policy)?;
        Ok(out)
    }

    pub fn seal_file(&self, plaintext: &[u8], path: &Path, policy: &KeyPolicy) -> Result<(), SealError> {
        let f = fs::File::create(path)?;
        self.seal_stream(plaintext, io::BufWriter::new(f), policy)?;
        Ok(())
    }

    pub fn unseal_file(&self, path: &Path, policy: &KeyPolicy) -> Result<Vec<u8>, SealError> {
        let f = fs::File::open(path)?;
        let mut out = Vec::new();
        self.unseal_stream(io::BufReader::new(f), &mut out, policy)?;
        Ok(out)
    }
}

/// Encrypts a plaintext input (e.g. a reads file) for the data owner, as the
/// service does when a user uploads plaintext.
pub fn user_encrypt_input(plaintext: &[u8], user_key: &RootSecret) -> Result<SealedBlob, SealError> {
    Vault::new(user_key.clone()).seal(plaintext, &KeyPolicy::user(user_key))
}

pub fn user_decrypt(blob: &[u8], user_key: &RootSecret) -> Result<Vec<u8>, SealError> {
    Vault::new(user_key.clone()).unseal(blob, &KeyPolicy::user(user_key))
}

/// Encoded sealed bytes, exactly as written to disk.
#[derive(Clone, PartialEq, Eq)]
pub struct SealedBlob(Vec<u8>);

impl SealedBlob {
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, SealError> {
        SealHeader::decode(&bytes)?;
        Ok(Self(bytes))
    }

    pub fn header(&self) -> SealHeader {
        SealHeader::decode(&self.0).expect("validated on construction")
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl AsRef<[u8]> for SealedBlob {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for SealedBlob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SealedBlob({} bytes)", self.0.len())
    }
}

/// Cheap check for the sealed-blob magic.
pub fn is_sealed(bytes: &[u8]) -> bool {
    bytes.len() >= 4 && &bytes[..4] == MAGIC
}
