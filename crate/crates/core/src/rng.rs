//! Splittable seed derivation.
//!
//! Every random stream in a run is addressed by a path such as
//! `root/ensemble/member/3`. The seed at a node is a pure function of the
//! parent seed and the child label, so streams do not depend on the order in
//! which they are requested.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A node in the seed derivation tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedTree {
    seed: u64,
    path: String,
}

/// One `(path, seed)` pair, as recorded in run reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub path: String,
    #[serde(with = "seed_serde")]
    pub seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl SeedTree {
    pub fn root(seed: u64) -> Self {
        SeedTree {
            seed,
            path: "root".to_string(),
        }
    }

    pub fn child(&self, label: &str) -> Self {
        SeedTree {
            seed: splitmix64(self.seed ^ fnv1a(label)),
            path: format!("{}/{}", self.path, label),
        }
    }

    pub fn index(&self, i: u64) -> Self {
        SeedTree {
            seed: splitmix64(splitmix64(self.seed).wrapping_add(i)),
            path: format!("{}/{}", self.path, i),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    pub fn record(&self) -> SeedRecord {
        SeedRecord {
            path: self.path.clone(),
            seed: self.seed,
        }
    }
}

/// Serde adapter for `u64` seeds in formats whose integers are signed 64-bit.
///
/// Seeds up to `i64::MAX` are written as integers, larger ones as decimal
/// strings. Both forms are accepted on input.
pub mod seed_serde {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*v) {
            Ok(i) => s.serialize_i64(i),
            Err(_) => s.serialize_str(&v.to_string()),
        }
    }

    struct SeedVisitor;

    impl Visitor<'_> for SeedVisitor {
        type Value = u64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a nonnegative integer or a decimal string")
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<u64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<u64, E> {
            u64::try_from(v).map_err(|_| E::custom(format!("negative seed {v}")))
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<u64, E> {
            v.parse().map_err(|_| E::custom(format!("bad seed {v:?}")))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        d.deserialize_any(SeedVisitor)
    }
}
