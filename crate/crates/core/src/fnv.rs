//! 64-bit FNV-1a hashing, used for dataset fingerprints and RNG stream keys.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Incremental FNV-1a hasher over bytes.
#[derive(Clone, Copy, Debug)]
pub struct Fnv1a64 {
    state: u64,
}

impl Fnv1a64 {
    pub fn new() -> Self {
        Self { state: FNV_OFFSET }
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state ^= u64::from(b);
            self.state = self.state.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn finish(&self) -> u64 {
        self.state
    }
}

impl Default for Fnv1a64 {
    fn default() -> Self {
        Self::new()
    }
}

/// One-shot FNV-1a of a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = Fnv1a64::new();
    h.update(bytes);
    h.finish()
}

/// `std::io::Write` adapter that hashes everything written through it.
///
/// Lets the fingerprint reuse the exact binary serialization path, so the
/// hash and the on-disk bytes cannot drift apart.
pub struct FnvWriter {
    hasher: Fnv1a64,
}

impl FnvWriter {
    pub fn new() -> Self {
        Self {
            hasher: Fnv1a64::new(),
        }
    }

    pub fn finish(&self) -> u64 {
        self.hasher.finish()
    }
}

impl Default for FnvWriter {
    fn default() -> Self {
        Self::new()
    }
}

impl std::io::Write for FnvWriter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.hasher.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}
