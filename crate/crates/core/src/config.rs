use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::{HashKind, SchemeParams};
use crate::oblivious;

/// Counter fields in headers are this wide.
pub const COUNTER_WIDTH: u32 = 64;
pub const LAMBDA: u32 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    FourServer,
    ThreeServer,
    MServer,
    SingleServerBaseline,
    /// Worst-case two-server variant.
    Deamortized,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::FourServer => "four_server",
            Scheme::ThreeServer => "three_server",
            Scheme::MServer => "m_server",
            Scheme::SingleServerBaseline => "single_server_baseline",
            Scheme::Deamortized => "deamortized",
        }
    }

    pub fn parse(s: &str) -> Option<Scheme> {
        Some(match s {
            "four_server" => Scheme::FourServer,
            "three_server" => Scheme::ThreeServer,
            "m_server" => Scheme::MServer,
            "single_server_baseline" | "baseline" => Scheme::SingleServerBaseline,
            "deamortized" => Scheme::Deamortized,
            _ => return None,
        })
    }

    pub fn is_hierarchical(self) -> bool {
        !matches!(self, Scheme::FourServer)
    }
}

/// Per-level hashing collection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hashing {
    /// Standard hashing on the first levels, cuckoo below.
    Mixed,
    Standard,
    Cuckoo,
    TwoTier,
}

/// Safeguards that can be switched off to check that the analyzer notices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    #[default]
    None,
    NoDummySubstitution,
    NoDummyStashPadding,
    NoReencryption,
}

impl Mutation {
    pub fn parse(s: &str) -> Option<Mutation> {
        Some(match s {
            "none" => Mutation::None,
            "no_dummy_substitution" => Mutation::NoDummySubstitution,
            "no_dummy_stash_padding" => Mutation::NoDummyStashPadding,
            "no_reencryption" => Mutation::NoReencryption,
            _ => return None,
        })
    }
}

fn default_lambda() -> u32 {
    LAMBDA
}
fn default_c() -> f64 {
    1.0
}
fn default_m() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(rename = "N")]
    pub n: u64,
    /// Payload bits per block.
    #[serde(rename = "B")]
    pub b: u64,
    pub d: u64,
    #[serde(default)]
    pub k: Option<u64>,
    #[serde(default)]
    pub s: Option<u64>,
    #[serde(rename = "L", default)]
    pub l: Option<u64>,
    #[serde(default = "default_lambda")]
    pub lambda: u32,
    pub scheme: Scheme,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default)]
    pub hashing: Option<Hashing>,
    /// Keep epochs and hash keys encrypted at the servers instead of the client.
    #[serde(default)]
    pub epochs_remote: bool,
    /// m_server: always use server 0 as the builder instead of rotating by level.
    #[serde(default)]
    pub fixed_reshuffler: bool,
    /// De-amortized: use this c_i for every level instead of calibrating.
    #[serde(default)]
    pub rate_constant: Option<f64>,
    #[serde(default)]
    pub mutation: Mutation,
    /// Record PRF/lookup logs and ciphertext fingerprints for audits.
    #[serde(default)]
    pub audit: bool,
}

impl Config {
    pub fn new(scheme: Scheme, n: u64, b: u64, d: u64) -> Config {
        Config {
            n,
            b,
            d,
            k: None,
            s: None,
            l: None,
            lambda: LAMBDA,
            scheme,
            m: if scheme == Scheme::MServer { 2 } else { default_m() },
            seed: 0,
            c: 1.0,
            hashing: None,
            epochs_remote: false,
            fixed_reshuffler: false,
            rate_constant: None,
            mutation: Mutation::None,
            audit: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Config> {
        serde_json::from_str(text).map_err(|e| Error::bad("config", e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Number of hierarchy levels: smallest L with d^L >= N.
    pub fn levels(&self) -> usize {
        ceil_log(self.n, self.d)
    }

    pub fn top_size(&self) -> usize {
        self.k.unwrap_or(self.levels() as u64) as usize
    }

    pub fn stash_size(&self) -> usize {
        self.s.unwrap_or(ceil_log2(self.n) as u64) as usize
    }

    /// Fixed plaintext header width in bits.
    pub fn header_bits(&self) -> u64 {
        header_bits(self.n)
    }

    pub fn payload_bytes(&self) -> usize {
        (self.b / 8) as usize
    }

    pub fn servers(&self) -> usize {
        match self.scheme {
            Scheme::FourServer => 4,
            Scheme::ThreeServer => 3,
            Scheme::MServer => self.m,
            Scheme::SingleServerBaseline => 1,
            Scheme::Deamortized => 2,
        }
    }

    pub fn hashing(&self) -> Hashing {
        self.hashing.unwrap_or(match self.scheme {
            Scheme::ThreeServer => Hashing::Mixed,
            _ => Hashing::TwoTier,
        })
    }

    /// Records held by one table of level `i` (1-based).
    pub fn level_capacity(&self, i: usize) -> usize {
        let k = self.top_size() as u64;
        let base = match self.scheme {
            Scheme::Deamortized => k,
            _ => k + self.stash_size() as u64,
        };
        (self.d.pow(i as u32 - 1) * base) as usize
    }

    pub fn level_kind(&self, i: usize) -> HashKind {
        match self.hashing() {
            Hashing::Standard => HashKind::Standard,
            Hashing::Cuckoo => HashKind::Cuckoo,
            Hashing::TwoTier => HashKind::TwoTier,
            Hashing::Mixed => {
                let small = ceil_log(ceil_log2(self.n).max(2) as u64, self.d);
                if i <= small {
                    HashKind::Standard
                } else {
                    HashKind::Cuckoo
                }
            }
        }
    }

    pub fn level_params(&self, i: usize) -> SchemeParams {
        SchemeParams::new(
            self.level_kind(i),
            self.level_capacity(i),
            self.n,
            self.stash_size(),
        )
    }

    /// Parameters of the bottom table that holds the initial data.
    pub fn base_params(&self) -> SchemeParams {
        SchemeParams::new(
            self.level_kind(self.levels() + 1),
            self.n as usize,
            self.n,
            self.stash_size(),
        )
    }

    /// Largest lookup set over the configured levels.
    pub fn alpha(&self) -> u64 {
        let mut a = self.base_params().c_lookup();
        for i in 1..=self.levels() {
            a = a.max(self.level_params(i).c_lookup());
        }
        a as u64
    }

    /// Largest oblivious build cost per d^{i-1}k input records, in header items.
    pub fn beta(&self) -> f64 {
        let k = self.top_size() as f64;
        let mut best: f64 = 0.0;
        for i in 1..=self.levels() {
            let p = self.level_params(i);
            let cost = oblivious::build_cost(&p, p.n).items() as f64;
            best = best.max(cost / (self.d.pow(i as u32 - 1) as f64 * k));
        }
        best
    }

    /// Minimal payload size for the configured scheme, in bits.
    pub fn min_block_bits(&self) -> Option<(&'static str, u64)> {
        let log_n = (self.n as f64).log2();
        let log_d = (self.d as f64).log2();
        let d = self.d as f64;
        let need = match self.scheme {
            Scheme::ThreeServer => (
                "three_server",
                self.alpha() as f64 * d * log_n + self.stash_size() as f64 * log_d,
            ),
            Scheme::MServer | Scheme::Deamortized => (
                "m_server",
                self.beta() * log_n + self.alpha() as f64 * d * log_n,
            ),
            Scheme::FourServer => {
                let n = ceil_log2(self.n).max(1);
                ("four_server", crate::dpf::share_bits(n, 1) as f64)
            }
            Scheme::SingleServerBaseline => return None,
        };
        Some((need.0, (self.c * need.1).ceil() as u64))
    }

    /// Checks every invariant and fills in derived fields.
    pub fn validate(mut self) -> Result<Config> {
        if self.n < 2 {
            return Err(Error::bad("N", "need at least two blocks"));
        }
        if self.b == 0 || self.b % 8 != 0 {
            return Err(Error::bad("B", "must be a positive multiple of 8"));
        }
        if self.d < 2 {
            return Err(Error::bad("d", "must be at least 2"));
        }
        if self.k == Some(0) {
            return Err(Error::bad("k", "must be at least 1"));
        }
        if self.s == Some(0) {
            return Err(Error::bad("s", "must be at least 1"));
        }
        if self.lambda != LAMBDA {
            return Err(Error::bad("lambda", "only 128 is supported"));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::bad("c", "must be positive"));
        }
        if self.scheme == Scheme::MServer && self.m < 2 {
            return Err(Error::bad("m", "m_server needs at least two servers"));
        }
        let levels = self.levels() as u64;
        if let Some(l) = self.l {
            if l != levels {
                return Err(Error::bad("L", format!("expected ceil(log_d N) = {levels}")));
            }
        }
        if self.n > 1 << 40 {
            return Err(Error::bad("N", "too large for this simulator"));
        }
        if matches!(self.scheme, Scheme::MServer | Scheme::Deamortized | Scheme::SingleServerBaseline)
        {
            let uses_cuckoo = (1..=self.levels() + 1).any(|i| self.level_kind(i) == HashKind::Cuckoo);
            if uses_cuckoo {
                return Err(Error::bad("hashing", "no oblivious cuckoo build is available"));
            }
        }
        if let Some((bound, need)) = self.min_block_bits() {
            if self.b < need {
                return Err(Error::BlockTooSmall {
                    bound,
                    have: self.b,
                    need,
                });
            }
        }
        self.l = Some(levels);
        self.k = Some(self.top_size() as u64);
        self.s = Some(self.stash_size() as u64);
        Ok(self)
    }
}

pub fn header_bits(n: u64) -> u64 {
    2 + (ceil_log2(n) as u64).max(COUNTER_WIDTH as u64) + 1
}

pub fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

/// Smallest e with base^e >= n.
pub fn ceil_log(n: u64, base: u64) -> usize {
    let mut e = 0;
    let mut p: u128 = 1;
    while p < n as u128 {
        p *= base as u128;
        e += 1;
    }
    e
}
