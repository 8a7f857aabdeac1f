use crate::seeds::{fnv1a, splitmix64};
use crate::Scalar;

const NS_SENTENCE: u64 = 0x5e47;
const NS_TARGET: u64 = 0x7a29;
const NS_CONTEXT: u64 = 0xc0e7;

/// Hashed bag-of-features embedding.
///
/// Features are word unigrams, word bigrams and character 3- to 5-grams of the lowercased,
/// boundary-padded words. Counts are L2-normalized and mapped to `dim`
/// dimensions by a signed random projection whose signs are a pure function of
/// `(seed, namespace, feature)`, so the projection is fixed once the provider
/// exists and never has to be materialized.
#[derive(Clone, Debug, PartialEq)]
pub struct HashedFeaturizer {
    dim: usize,
    seed: u64,
    target_weight: f64,
    context_weight: f64,
}

impl HashedFeaturizer {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            seed,
            target_weight: 1.0,
            context_weight: 0.5,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Sentence without context.
    pub fn sentence<T: Scalar>(&self, text: &str) -> Vec<T> {
        let mut acc = vec![0.0f64; self.dim];
        self.project_into(&features(text), NS_SENTENCE, 1.0, &mut acc);
        acc.into_iter().map(T::of).collect()
    }

    /// Target sentence features and context features occupy separate hash
    /// namespaces, i.e. the projection of their concatenation.
    pub fn in_context<T: Scalar>(&self, target: &str, context: &str) -> Vec<T> {
        let mut acc = vec![0.0f64; self.dim];
        self.project_into(&features(target), NS_TARGET, self.target_weight, &mut acc);
        self.project_into(&features(context), NS_CONTEXT, self.context_weight, &mut acc);
        acc.into_iter().map(T::of).collect()
    }

    fn project_into(&self, feats: &[(u64, f64)], namespace: u64, weight: f64, acc: &mut [f64]) {
        let scale = weight / (self.dim as f64).sqrt();
        let words = self.dim.div_ceil(64);
        for &(h, v) in feats {
            let mut state = self.seed ^ splitmix64(h ^ namespace.rotate_left(32));
            let a = v * scale;
            for w in 0..words {
                state = splitmix64(state);
                let lo = w * 64;
                let hi = (lo + 64).min(self.dim);
                for (bit, slot) in acc[lo..hi].iter_mut().enumerate() {
                    if (state >> bit) & 1 == 1 {
                        *slot += a;
                    } else {
                        *slot -= a;
                    }
                }
            }
        }
    }
}

/// Sorted `(feature hash, weight)` pairs, L2-normalized.
fn features(text: &str) -> Vec<(u64, f64)> {
    let lower = text.to_lowercase();
    let mut hashes: Vec<u64> = Vec::new();
    let words: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect();
    for pair in words.windows(2) {
        let mut key = Vec::with_capacity(pair[0].len() + pair[1].len() + 2);
        key.push(b'b');
        key.extend_from_slice(pair[0].as_bytes());
        key.push(b' ');
        key.extend_from_slice(pair[1].as_bytes());
        hashes.push(fnv1a(&key));
    }
    for word in words {
        let mut key = Vec::with_capacity(word.len() + 2);
        key.push(b'w');
        key.extend_from_slice(word.as_bytes());
        hashes.push(fnv1a(&key));

        let padded: Vec<char> = std::iter::once('<').chain(word.chars()).chain(std::iter::once('>')).collect();
        for n in 3..=5 {
            if padded.len() < n {
                break;
            }
            for win in padded.windows(n) {
                let mut key = vec![b'c', n as u8];
                let s: String = win.iter().collect();
                key.extend_from_slice(s.as_bytes());
                hashes.push(fnv1a(&key));
            }
        }
    }
    hashes.sort_unstable();
    let mut out: Vec<(u64, f64)> = Vec::new();
    for h in hashes {
        match out.last_mut() {
            Some((last, c)) if *last == h => *c += 1.0,
            _ => out.push((h, 1.0)),
        }
    }
    let norm = out.iter().map(|(_, c)| c * c).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.iter_mut().for_each(|(_, c)| *c /= norm);
    }
    out
}
