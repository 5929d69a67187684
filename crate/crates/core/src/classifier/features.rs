use thiserror::Error;

/// Separator placed between the tokens of a bigram before hashing.
const JOIN: u8 = 0x1f;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub const DEFAULT_HASH_BITS: u32 = 18;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid feature config: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureConfig {
    /// N-gram orders, each in 1..=2.
    pub orders: Vec<u8>,
    pub hash_dim: usize,
    pub signed: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { orders: vec![1, 2], hash_dim: 1 << DEFAULT_HASH_BITS, signed: true }
    }
}

impl FeatureConfig {
    pub fn new(orders: Vec<u8>, hash_dim: usize, signed: bool) -> Result<Self, ConfigError> {
        let config = Self { orders, hash_dim, signed };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.hash_dim.is_power_of_two() || self.hash_dim > u32::MAX as usize {
            return Err(ConfigError(format!("hash_dim must be a power of two, got {}", self.hash_dim)));
        }
        if self.orders.is_empty() {
            return Err(ConfigError("at least one n-gram order is required".into()));
        }
        if let Some(o) = self.orders.iter().find(|o| !(1..=2).contains(*o)) {
            return Err(ConfigError(format!("unsupported n-gram order {o}")));
        }
        Ok(())
    }
}

/// Sparse vector: strictly increasing bucket indices with non-zero values.
pub type Features = Vec<(u32, f64)>;

pub fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    bytes.into_iter().fold(FNV_OFFSET, |h, b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Hash of an n-gram; tokens are joined with a unit separator.
pub fn ngram_hash(tokens: &[impl AsRef<str>]) -> u64 {
    let bytes = tokens.iter().enumerate().flat_map(|(i, t)| {
        let sep = (i > 0).then_some(JOIN);
        sep.into_iter().chain(t.as_ref().bytes())
    });
    fnv1a(bytes)
}

/// Hashed n-gram counts. With signed hashing the top hash bit picks the sign.
pub fn featurize(tokens: &[impl AsRef<str>], config: &FeatureConfig) -> Features {
    let mask = config.hash_dim as u64 - 1;
    let mut raw: Vec<(u32, f64)> = Vec::new();
    for &order in &config.orders {
        for gram in tokens.windows(order as usize) {
            let h = ngram_hash(gram);
            let sign = if config.signed && h >> 63 == 1 { -1.0 } else { 1.0 };
            raw.push(((h & mask) as u32, sign));
        }
    }
    raw.sort_by_key(|(b, _)| *b);
    let mut out: Features = Vec::with_capacity(raw.len());
    for (b, v) in raw {
        match out.last_mut() {
            Some((last, acc)) if *last == b => *acc += v,
            _ => out.push((b, v)),
        }
    }
    out.retain(|(_, v)| *v != 0.0);
    out
}
