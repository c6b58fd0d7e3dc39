//! Token-info embedding: a per-token additive bias over the vocabulary.
//!
//! The bias for token `t` is `row_t(W_E)·W1·W2`. After fitting, the product
//! is materialised once into a lookup table so sampling pays a memory read
//! instead of two projections. Tables can then be pruned to the most
//! frequent tokens; everything else falls back to a zero bias.

use std::io::{Read, Write};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{check_dim, contract, Error, Result};
use crate::models::{one_pass_logits, read_f32s, read_u32, write_f32s, ChainState, Drafter, TargetModel, TokenId};
use crate::numerics::{argmax, gemm, Matrix};

/// Low-rank factors `W1: n×d`, `W2: d×|V|`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenInfoFactors {
    pub w1: Matrix,
    pub w2: Matrix,
}

impl TokenInfoFactors {
    pub fn new(w1: Matrix, w2: Matrix) -> Result<Self> {
        check_dim("TokenInfoFactors inner", w1.cols(), w2.rows())?;
        if w1.cols() > w1.rows() {
            return Err(contract(format!(
                "intermediate dim {} exceeds hidden dim {}",
                w1.cols(),
                w1.rows()
            )));
        }
        Ok(Self { w1, w2 })
    }

    pub fn rank(&self) -> usize {
        self.w1.cols()
    }

    /// `W1·W2`, the `n×|V|` map from embeddings to biases.
    pub fn product(&self) -> Matrix {
        gemm(&self.w1, &self.w2).expect("factor dims checked at construction")
    }
}

/// Storage precision of table rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
}

/// Collapsed token-info embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenInfoTable {
    vocab: usize,
    /// Stored tokens in ascending id order.
    kept: Vec<TokenId>,
    /// Row slot for each token, `None` for cold tokens.
    slot: Vec<Option<u32>>,
    rows: Vec<f32>,
    cold: Vec<f32>,
    precision: Precision,
}

impl TokenInfoTable {
    /// A table with every token cold, i.e. no token information at all.
    pub fn zero(vocab: usize) -> Self {
        Self {
            vocab,
            kept: Vec::new(),
            slot: vec![None; vocab],
            rows: Vec::new(),
            cold: vec![0.0; vocab],
            precision: Precision::F32,
        }
    }

    fn from_kept_rows(vocab: usize, kept: Vec<TokenId>, rows: Vec<f32>) -> Result<Self> {
        check_dim("TokenInfoTable rows", kept.len() * vocab, rows.len())?;
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(contract("token-info rows must be finite"));
        }
        let mut slot = vec![None; vocab];
        for (i, &t) in kept.iter().enumerate() {
            let cell = slot
                .get_mut(t as usize)
                .ok_or_else(|| contract(format!("kept token {t} out of range")))?;
            if cell.replace(i as u32).is_some() {
                return Err(contract(format!("kept token {t} listed twice")));
            }
        }
        if kept.windows(2).any(|w| w[0] >= w[1]) {
            return Err(contract("kept tokens must be strictly ascending"));
        }
        Ok(Self {
            vocab,
            kept,
            slot,
            rows,
            cold: vec![0.0; vocab],
            precision: Precision::F32,
        })
    }

    /// Dense table from explicit per-token rows.
    pub fn from_dense(rows: &Matrix) -> Result<Self> {
        check_dim("TokenInfoTable::from_dense", rows.rows(), rows.cols())?;
        let vocab = rows.rows();
        Self::from_kept_rows(vocab, (0..vocab as TokenId).collect(), rows.data().to_vec())
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn kept_tokens(&self) -> &[TokenId] {
        &self.kept
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn is_hot(&self, t: TokenId) -> bool {
        self.slot.get(t as usize).is_some_and(|s| s.is_some())
    }

    /// Bias row for `t`; cold tokens get the zero fallback.
    pub fn lookup(&self, t: TokenId) -> Result<&[f32]> {
        match self.slot.get(t as usize) {
            Some(Some(i)) => {
                let i = *i as usize;
                Ok(&self.rows[i * self.vocab..(i + 1) * self.vocab])
            }
            Some(None) => Ok(&self.cold),
            None => Err(contract(format!(
                "token {t} out of range for vocabulary {}",
                self.vocab
            ))),
        }
    }

    /// Number of stored scalar entries (`kept × |V|`).
    pub fn stored_entries(&self) -> usize {
        self.rows.len()
    }

    /// Stored entries relative to a dense `|V|×|V|` table.
    pub fn memory_ratio(&self) -> f64 {
        self.stored_entries() as f64 / (self.vocab as f64 * self.vocab as f64)
    }

    /// Binary export: magic `DRTI`, `u32` version, `u32` vocab, `u32` kept
    /// count, the kept ids as `u32`, then kept rows row-major as `f32`. All
    /// little-endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TABLE_MAGIC)?;
        w.write_all(&TABLE_VERSION.to_le_bytes())?;
        w.write_all(&(self.vocab as u32).to_le_bytes())?;
        w.write_all(&(self.kept.len() as u32).to_le_bytes())?;
        for t in &self.kept {
            w.write_all(&t.to_le_bytes())?;
        }
        write_f32s(&mut w, &self.rows)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != TABLE_MAGIC {
            return Err(Error::Format {
                what: "token-info table",
                reason: "bad magic".into(),
            });
        }
        let version = read_u32(&mut r)?;
        if version != TABLE_VERSION {
            return Err(Error::Format {
                what: "token-info table",
                reason: format!("unsupported version {version}"),
            });
        }
        let vocab = read_u32(&mut r)? as usize;
        let count = read_u32(&mut r)? as usize;
        if count > vocab {
            return Err(Error::Format {
                what: "token-info table",
                reason: format!("{count} kept tokens for vocabulary {vocab}"),
            });
        }
        let kept = (0..count)
            .map(|_| read_u32(&mut r))
            .collect::<Result<Vec<_>>>()?;
        let rows = read_f32s(&mut r, count * vocab)?;
        Self::from_kept_rows(vocab, kept, rows)
    }
}

const TABLE_MAGIC: &[u8; 4] = b"DRTI";
const TABLE_VERSION: u32 = 1;

/// Materialises `W_E·W1·W2`, keeping every token.
pub fn collapse(embed: &Matrix, factors: &TokenInfoFactors) -> Result<TokenInfoTable> {
    check_dim("collapse W_E·W1", embed.cols(), factors.w1.rows())?;
    check_dim("collapse vocab", embed.rows(), factors.w2.cols())?;
    let product = gemm(&gemm(embed, &factors.w1)?, &factors.w2)?;
    TokenInfoTable::from_dense(&product)
}

/// Fits `W1·W2` by ridge regression of residual logits on token embeddings,
/// then truncates the solution to rank `d`.
///
/// Solves `min ‖Φ·M − R‖² + ridge·‖M‖²` where row `i` of `Φ` is the
/// embedding of sample token `i` and row `i` of `R` its residual, and keeps
/// the top-`d` singular triplets of `M = U·S·Vᵀ` as `W1 = U_d`,
/// `W2 = S_d·V_dᵀ`.
pub fn fit_factors(
    embed: &Matrix,
    samples: &[(TokenId, Vec<f32>)],
    d: usize,
    ridge: f64,
) -> Result<TokenInfoFactors> {
    let vocab = embed.rows();
    let n = embed.cols();
    if samples.is_empty() {
        return Err(contract("fit_factors needs at least one sample"));
    }
    if d == 0 || d > n {
        return Err(contract(format!("rank {d} must lie in 1..={n}")));
    }
    if !(ridge >= 0.0) {
        return Err(contract("ridge must be >= 0"));
    }

    // Φᵀ·Φ and Φᵀ·R only depend on per-token counts and residual sums.
    let mut counts = vec![0u64; vocab];
    let mut sums = vec![0.0f64; vocab * vocab];
    for (t, r) in samples {
        let t = *t as usize;
        if t >= vocab {
            return Err(contract(format!("sample token {t} out of range")));
        }
        check_dim("fit_factors residual", vocab, r.len())?;
        counts[t] += 1;
        for (s, &v) in sums[t * vocab..(t + 1) * vocab].iter_mut().zip(r) {
            *s += v as f64;
        }
    }
    let mut gram = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DMatrix::<f64>::zeros(n, vocab);
    for t in 0..vocab {
        if counts[t] == 0 {
            continue;
        }
        let e = embed.row(t);
        let c = counts[t] as f64;
        for i in 0..n {
            let ei = e[i] as f64;
            for j in 0..n {
                gram[(i, j)] += c * ei * e[j] as f64;
            }
            for (v, s) in sums[t * vocab..(t + 1) * vocab].iter().enumerate() {
                rhs[(i, v)] += ei * s;
            }
        }
    }
    for i in 0..n {
        gram[(i, i)] += ridge;
    }

    let eig = SymmetricEigen::new(gram.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if !(min > 1e-12 * max.max(f64::MIN_POSITIVE)) {
        return Err(Error::Singular);
    }
    let solution = gram.cholesky().ok_or(Error::Singular)?.solve(&rhs);

    let svd = solution.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut w1 = Matrix::zeros(n, d);
    let mut w2 = Matrix::zeros(d, vocab);
    for (k, &idx) in order.iter().take(d).enumerate() {
        let s = svd.singular_values[idx];
        for i in 0..n {
            w1.set(i, k, u[(i, idx)] as f32);
        }
        for v in 0..vocab {
            w2.set(k, v, (s * v_t[(idx, v)]) as f32);
        }
    }
    TokenInfoFactors::new(w1, w2)
}

/// Training pairs for [`fit_factors`] gathered along the target's greedy
/// trajectory after each prompt.
///
/// At every position the drafter runs a `steps`-long chain; for each drafted
/// depth `j` the sample pairs the true token at depth `j` with the gap
/// between the target's logits and the draft logits at depth `j + 1`. Those
/// are exactly the logits the bias of that token gets added to during tree
/// construction. With `include_root`, the root token is also paired with the
/// (zero) gap at depth 1, where the draft is exact.
pub fn residual_samples<D: Drafter + ?Sized>(
    target: &TargetModel,
    drafter: &D,
    prompts: &[Vec<TokenId>],
    positions: usize,
    steps: usize,
    include_root: bool,
) -> Result<Vec<(TokenId, Vec<f32>)>> {
    if steps == 0 {
        return Err(contract("steps must be >= 1"));
    }
    let mut samples = Vec::new();
    for prompt in prompts {
        let mut state = target.prefill(prompt)?;
        for _ in 0..positions {
            let chain = drafter.chain(&state.hidden, state.last_token, steps)?;
            let draft_logits = one_pass_logits(&chain, target.head())?;
            let mut parent = state.last_token;
            let mut true_state = target.step(&state.hidden, parent)?;
            for (j, drafted) in draft_logits.iter().enumerate() {
                let truth = target.logits(&true_state)?;
                if j > 0 || include_root {
                    let gap = truth.iter().zip(drafted).map(|(a, b)| a - b).collect();
                    samples.push((parent, gap));
                }
                let next = argmax(&truth) as TokenId;
                if j == 0 {
                    state = ChainState {
                        position: state.position + 1,
                        last_token: next,
                        hidden: true_state.clone(),
                    };
                }
                parent = next;
                true_state = target.step(&true_state, parent)?;
            }
        }
    }
    Ok(samples)
}

/// Token frequency statistics over a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyStats {
    counts: Vec<u64>,
    total: u64,
    /// Token ids by descending count, ascending id on ties.
    ranked: Vec<TokenId>,
    /// `prefix[i]` = occurrences of the `i` most frequent tokens.
    prefix: Vec<u64>,
}

impl FrequencyStats {
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn vocab_size(&self) -> usize {
        self.counts.len()
    }

    pub fn ranked(&self) -> &[TokenId] {
        &self.ranked
    }

    /// Share of occurrences covered by the `⌈q·|V|⌉` most frequent tokens.
    pub fn coverage(&self, q: f64) -> f64 {
        let q = q.clamp(0.0, 1.0);
        let top = ((q * self.counts.len() as f64).ceil() as usize).min(self.counts.len());
        self.prefix[top] as f64 / self.total as f64
    }
}

/// Exact per-token counts.
pub fn hot_token_stats(corpus: &[TokenId], vocab: usize) -> Result<FrequencyStats> {
    if corpus.is_empty() {
        return Err(contract("corpus must be nonempty"));
    }
    let mut counts = vec![0u64; vocab];
    for &t in corpus {
        *counts
            .get_mut(t as usize)
            .ok_or_else(|| contract(format!("corpus token {t} outside vocabulary {vocab}")))? += 1;
    }
    let mut ranked: Vec<TokenId> = (0..vocab as TokenId).collect();
    ranked.sort_by(|&a, &b| counts[b as usize].cmp(&counts[a as usize]).then(a.cmp(&b)));
    let mut prefix = Vec::with_capacity(vocab + 1);
    prefix.push(0);
    for &t in &ranked {
        prefix.push(prefix.last().unwrap() + counts[t as usize]);
    }
    Ok(FrequencyStats {
        counts,
        total: corpus.len() as u64,
        ranked,
        prefix,
    })
}

/// Keeps rows only for the `keep` most frequent tokens.
///
/// Tokens already cold in `table` stay cold even if they rank in the top
/// `keep`.
pub fn prune_table(
    table: &TokenInfoTable,
    stats: &FrequencyStats,
    keep: usize,
) -> Result<TokenInfoTable> {
    let vocab = table.vocab;
    check_dim("prune_table vocab", vocab, stats.vocab_size())?;
    if keep == 0 || keep > vocab {
        return Err(contract(format!("keep must lie in 1..={vocab}, got {keep}")));
    }
    let mut kept: Vec<TokenId> = stats.ranked[..keep]
        .iter()
        .copied()
        .filter(|&t| table.is_hot(t))
        .collect();
    kept.sort_unstable();
    let mut rows = Vec::with_capacity(kept.len() * vocab);
    for &t in &kept {
        rows.extend_from_slice(table.lookup(t)?);
    }
    TokenInfoTable::from_kept_rows(vocab, kept, rows)
}

/// Default hot-token budget: `|V|/16` for vocabularies above 4096, else all.
pub fn default_keep(vocab: usize) -> usize {
    if vocab > 4096 {
        vocab / 16
    } else {
        vocab
    }
}

/// Bytes for a dense `vocab × vocab` table.
pub fn table_bytes(vocab: u64, bytes_per_entry: u64) -> Result<u64> {
    if vocab == 0 || bytes_per_entry == 0 {
        return Err(contract("table_bytes arguments must be >= 1"));
    }
    vocab
        .checked_mul(vocab)
        .and_then(|v| v.checked_mul(bytes_per_entry))
        .ok_or_else(|| contract("table size overflows u64"))
}

/// Parses a whitespace-separated stream of decimal token ids.
pub fn parse_corpus(text: &str) -> Result<Vec<TokenId>> {
    text.split_whitespace()
        .enumerate()
        .map(|(i, w)| {
            w.parse::<TokenId>().map_err(|e| Error::Format {
                what: "corpus",
                reason: format!("token #{i} {w:?}: {e}"),
            })
        })
        .collect()
}

/// Writes a corpus as space-separated ids, 32 per line.
pub fn write_corpus<W: Write>(mut w: W, corpus: &[TokenId]) -> Result<()> {
    for line in corpus.chunks(32) {
        let mut first = true;
        for t in line {
            if !first {
                w.write_all(b" ")?;
            }
            first = false;
            write!(w, "{t}")?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_matrix;

    fn factors(n: usize, d: usize, v: usize, seed: u64) -> TokenInfoFactors {
        TokenInfoFactors::new(
            seeded_matrix(n, d, seed, 1.0).unwrap(),
            seeded_matrix(d, v, seed + 1, 1.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn collapse_examples() {
        let embed = seeded_matrix(32, 8, 1, 1.0).unwrap();
        let zero = TokenInfoFactors::new(Matrix::zeros(8, 4), seeded_matrix(4, 32, 2, 1.0).unwrap()).unwrap();
        let t = collapse(&embed, &zero).unwrap();
        assert!((0..32).all(|i| t.lookup(i).unwrap().iter().all(|&v| v == 0.0)));

        let w2 = seeded_matrix(8, 32, 3, 1.0).unwrap();
        let id = TokenInfoFactors::new(Matrix::identity(8), w2.clone()).unwrap();
        let t = collapse(&embed, &id).unwrap();
        let direct = gemm(&embed, &w2).unwrap();
        for i in 0..32 {
            assert_eq!(t.lookup(i as TokenId).unwrap(), direct.row(i));
        }

        let f = factors(8, 4, 32, 4);
        let t = collapse(&embed, &f).unwrap();
        for tok in 0..32usize {
            // Direct three-matrix product per row in f64.
            for v in 0..32 {
                let mut s = 0.0f64;
                for i in 0..8 {
                    for k in 0..4 {
                        s += embed.get(tok, i) as f64 * f.w1.get(i, k) as f64 * f.w2.get(k, v) as f64;
                    }
                }
                assert!((t.lookup(tok as TokenId).unwrap()[v] as f64 - s).abs() <= 1e-5);
            }
        }
        assert!(collapse(&embed, &factors(7, 4, 32, 1)).is_err());
    }

    #[test]
    fn lookup_checks_range() {
        let t = TokenInfoTable::zero(4);
        assert_eq!(t.lookup(3).unwrap(), &[0.0; 4]);
        assert!(t.lookup(4).is_err());
    }

    #[test]
    fn fit_recovers_planted_low_rank_map() {
        let (v, n, d) = (24, 6, 3);
        let embed = seeded_matrix(v, n, 10, 1.0).unwrap();
        let planted = gemm(&seeded_matrix(n, d, 11, 1.0).unwrap(), &seeded_matrix(d, v, 12, 1.0).unwrap()).unwrap();
        let samples: Vec<(TokenId, Vec<f32>)> = (0..60)
            .map(|i| {
                let t = (i * 7 % v) as TokenId;
                (t, planted.vec_mul(embed.row(t as usize)).unwrap())
            })
            .collect();
        let f = fit_factors(&embed, &samples, d, 0.0).unwrap();
        let table = collapse(&embed, &f).unwrap();
        for (t, r) in &samples {
            for (a, b) in table.lookup(*t).unwrap().iter().zip(r) {
                assert!((a - b).abs() <= 1e-4, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn fit_of_zero_residuals_is_zero() {
        let embed = seeded_matrix(10, 4, 1, 1.0).unwrap();
        let samples: Vec<(TokenId, Vec<f32>)> = (0..10).map(|t| (t, vec![0.0; 10])).collect();
        let f = fit_factors(&embed, &samples, 2, 0.1).unwrap();
        assert!(f.product().norm() <= 1e-9);
    }

    #[test]
    fn fit_shrinks_with_large_ridge() {
        let embed = seeded_matrix(10, 4, 2, 1.0).unwrap();
        let samples: Vec<(TokenId, Vec<f32>)> = (0..30)
            .map(|i| (i % 10, seeded_matrix(1, 10, 100 + i as u64, 1.0).unwrap().into_data()))
            .collect();
        let free = fit_factors(&embed, &samples, 4, 0.0).unwrap().product().norm();
        let shrunk = fit_factors(&embed, &samples, 4, 1e6).unwrap().product().norm();
        assert!(shrunk <= 1e-3 * free, "{shrunk} vs {free}");
    }

    #[test]
    fn fit_reports_singular_system() {
        let embed = seeded_matrix(10, 4, 3, 1.0).unwrap();
        // Two samples cannot determine a 4-dimensional map.
        let samples = vec![(0, vec![1.0; 10]), (1, vec![0.5; 10])];
        assert!(matches!(fit_factors(&embed, &samples, 2, 0.0), Err(Error::Singular)));
        assert!(fit_factors(&embed, &samples, 2, 1e-3).is_ok());
        assert!(fit_factors(&embed, &[], 2, 1.0).is_err());
        assert!(fit_factors(&embed, &samples, 5, 1.0).is_err());
    }

    #[test]
    fn stats_examples() {
        let s = hot_token_stats(&[3; 50], 8).unwrap();
        assert_eq!(s.coverage(1.0 / 8.0), 1.0);
        assert_eq!(s.ranked()[0], 3);
        assert!(hot_token_stats(&[], 8).is_err());
        assert!(hot_token_stats(&[9], 8).is_err());

        let uniform: Vec<TokenId> = (0..64 * 10).map(|i| (i % 64) as TokenId).collect();
        let s = hot_token_stats(&uniform, 64).unwrap();
        for q in [0.1, 0.25, 0.5, 0.9] {
            assert!((s.coverage(q) - q).abs() <= 1.0 / 64.0);
        }
        assert_eq!(s.coverage(1.0), 1.0);
        assert_eq!(s.total(), 640);
    }

    #[test]
    fn prune_examples() {
        let embed = seeded_matrix(16, 4, 5, 1.0).unwrap();
        let dense = collapse(&embed, &factors(4, 2, 16, 6)).unwrap();
        let corpus: Vec<TokenId> = vec![5, 5, 5, 2, 2, 9];
        let stats = hot_token_stats(&corpus, 16).unwrap();

        assert_eq!(prune_table(&dense, &stats, 16).unwrap(), dense);

        let one = prune_table(&dense, &stats, 1).unwrap();
        assert_eq!(one.kept_tokens(), &[5]);
        assert_eq!(one.lookup(5).unwrap(), dense.lookup(5).unwrap());
        assert_eq!(one.lookup(2).unwrap(), &[0.0; 16]);
        assert_eq!(one.stored_entries(), 16);

        assert!(prune_table(&dense, &stats, 0).is_err());
        assert!(prune_table(&dense, &stats, 17).is_err());
    }

    #[test]
    fn prune_to_a_sixteenth() {
        let embed = seeded_matrix(512, 8, 7, 1.0).unwrap();
        let dense = collapse(&embed, &factors(8, 4, 512, 8)).unwrap();
        let corpus: Vec<TokenId> = (0..512u32).flat_map(|t| std::iter::repeat_n(t, (t % 13) as usize + 1)).collect();
        let stats = hot_token_stats(&corpus, 512).unwrap();
        let pruned = prune_table(&dense, &stats, 32).unwrap();
        assert_eq!(pruned.stored_entries(), 32 * 512);
        assert_eq!(pruned.memory_ratio(), 1.0 / 16.0);
    }

    #[test]
    fn table_bytes_examples() {
        assert_eq!(table_bytes(128_256, 1).unwrap(), 16_449_601_536);
        assert_eq!(table_bytes(1, 3).unwrap(), 3);
        assert_eq!(table_bytes(32_768, 1).unwrap(), 1 << 30);
        assert!(table_bytes(0, 1).is_err());
    }

    #[test]
    fn default_keep_rule() {
        assert_eq!(default_keep(4096), 4096);
        assert_eq!(default_keep(128_000), 8000);
    }

    #[test]
    fn corpus_text_round_trips() {
        let corpus: Vec<TokenId> = (0..100).map(|i| (i * 37 % 101) as TokenId).collect();
        let mut buf = Vec::new();
        write_corpus(&mut buf, &corpus).unwrap();
        assert_eq!(parse_corpus(std::str::from_utf8(&buf).unwrap()).unwrap(), corpus);
        assert!(parse_corpus("1 2 x").is_err());
        assert_eq!(parse_corpus(" 4\n\t5  ").unwrap(), vec![4, 5]);
    }

    #[test]
    fn table_file_round_trips() {
        let embed = seeded_matrix(20, 4, 9, 1.0).unwrap();
        let dense = collapse(&embed, &factors(4, 2, 20, 10)).unwrap();
        let stats = hot_token_stats(&[1, 1, 4, 7, 7, 7], 20).unwrap();
        let pruned = prune_table(&dense, &stats, 3).unwrap();
        let mut buf = Vec::new();
        pruned.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 3 * 4 + 3 * 20 * 4);
        assert_eq!(TokenInfoTable::read_from(&buf[..]).unwrap(), pruned);
    }
}
