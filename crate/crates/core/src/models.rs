//! Target and draft model contracts with exact synthetic implementations.
//!
//! The target is a token-driven tanh recurrence
//! `h' = tanh(A·h + B·E(t))` read out by `logits = hᵀ·W_head`. The draft
//! keeps the target's embedding, input map and head, but after the first
//! step it advances with a perturbed transition `A' = A + σ·G` and no token
//! input at all, so its hidden-state chain never depends on which tokens get
//! sampled from it.

use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{check_dim, contract, Error, Result};
use crate::numerics::{argmax, gemm, seeded_matrix, softmax, Matrix};

pub type TokenId = u32;
pub type HiddenState = Vec<f32>;

/// Parameters of a synthetic target model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub vocab: usize,
    pub hidden: usize,
    pub seed: u64,
    /// Approximate spectral radius of the transition `A`.
    pub recurrence_gain: f32,
    /// Approximate gain of the token input path `B·E(t)`.
    pub input_gain: f32,
    /// Scale of the readout; larger values give peakier next-token
    /// distributions.
    pub head_gain: f32,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            vocab: 256,
            hidden: 64,
            seed: 1,
            recurrence_gain: 1.2,
            input_gain: 1.0,
            head_gain: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetModel {
    seed: u64,
    embed: Matrix,
    transition: Matrix,
    input: Matrix,
    head: Matrix,
    h_init: HiddenState,
}

/// Position and hidden state of a verified prefix.
///
/// `hidden` is the target state after consuming every token *before*
/// `last_token`; the last token itself is consumed by the next
/// verification.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub position: usize,
    pub last_token: TokenId,
    pub hidden: HiddenState,
}

impl TargetModel {
    /// Builds a model from explicit weights.
    pub fn from_parts(
        seed: u64,
        embed: Matrix,
        transition: Matrix,
        input: Matrix,
        head: Matrix,
        h_init: HiddenState,
    ) -> Result<Self> {
        let vocab = embed.rows();
        let n = embed.cols();
        if vocab < 2 {
            return Err(contract("vocabulary must have at least 2 tokens"));
        }
        check_dim("TargetModel transition rows", n, transition.rows())?;
        check_dim("TargetModel transition cols", n, transition.cols())?;
        check_dim("TargetModel input rows", n, input.rows())?;
        check_dim("TargetModel input cols", n, input.cols())?;
        check_dim("TargetModel head rows", n, head.rows())?;
        check_dim("TargetModel head cols", vocab, head.cols())?;
        check_dim("TargetModel h_init", n, h_init.len())?;
        if h_init.iter().any(|v| !v.is_finite()) {
            return Err(contract("h_init must be finite"));
        }
        Ok(Self {
            seed,
            embed,
            transition,
            input,
            head,
            h_init,
        })
    }

    /// Deterministic synthetic model. Each weight matrix draws from its own
    /// sub-seed of `spec.seed`.
    pub fn synthetic(spec: &ModelSpec) -> Result<Self> {
        let (v, n) = (spec.vocab, spec.hidden);
        if n == 0 {
            return Err(contract("hidden dimension must be >= 1"));
        }
        // Uniform [-s, s] has variance s²/3, so s = g·sqrt(3/n) gives rows of
        // norm ≈ g and a spectral radius ≈ g for the square maps.
        let unit = (3.0 / n as f32).sqrt();
        let seed = spec.seed;
        let embed = seeded_matrix(v, n, sub_seed(seed, 1), 1.0)?;
        let transition = seeded_matrix(n, n, sub_seed(seed, 2), spec.recurrence_gain * unit)?;
        let input = seeded_matrix(n, n, sub_seed(seed, 3), spec.input_gain * 3f32.sqrt() * unit)?;
        let head = seeded_matrix(n, v, sub_seed(seed, 4), spec.head_gain * unit * 3f32.sqrt())?;
        let h_init = seeded_matrix(1, n, sub_seed(seed, 5), 0.5)?.into_data();
        Self::from_parts(seed, embed, transition, input, head, h_init)
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.embed.cols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn embed(&self) -> &Matrix {
        &self.embed
    }

    pub fn transition(&self) -> &Matrix {
        &self.transition
    }

    pub fn input(&self) -> &Matrix {
        &self.input
    }

    pub fn head(&self) -> &Matrix {
        &self.head
    }

    pub fn h_init(&self) -> &[f32] {
        &self.h_init
    }

    fn check_token(&self, t: TokenId) -> Result<()> {
        if (t as usize) < self.vocab_size() {
            Ok(())
        } else {
            Err(contract(format!(
                "token {t} out of range for vocabulary {}",
                self.vocab_size()
            )))
        }
    }

    /// `tanh(A·h + B·E(t))`.
    pub fn step(&self, h: &[f32], t: TokenId) -> Result<HiddenState> {
        self.check_token(t)?;
        recurrence(&self.transition, Some((&self.input, self.embed.row(t as usize))), h)
    }

    /// `hᵀ·W_head`.
    pub fn logits(&self, h: &[f32]) -> Result<Vec<f32>> {
        self.head.vec_mul(h)
    }

    /// Greedy next token from a state.
    pub fn next_token(&self, h: &[f32]) -> Result<TokenId> {
        Ok(argmax(&self.logits(h)?) as TokenId)
    }

    /// Runs the prompt except its final token, returning the state that
    /// the final token will be fed into.
    pub fn prefill(&self, prompt: &[TokenId]) -> Result<ChainState> {
        let (&last, head) = prompt
            .split_last()
            .ok_or_else(|| contract("prompt must be nonempty"))?;
        self.check_token(last)?;
        let mut h = self.h_init.clone();
        for &t in head {
            h = self.step(&h, t)?;
        }
        Ok(ChainState {
            position: prompt.len() - 1,
            last_token: last,
            hidden: h,
        })
    }

    /// Ground-truth greedy continuation of `prompt`.
    pub fn greedy_decode(&self, prompt: &[TokenId], steps: usize) -> Result<Vec<TokenId>> {
        let prefix = self.prefill(prompt)?;
        let mut h = self.step(&prefix.hidden, prefix.last_token)?;
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let t = self.next_token(&h)?;
            out.push(t);
            h = self.step(&h, t)?;
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&(self.vocab_size() as u32).to_le_bytes())?;
        w.write_all(&(self.hidden_dim() as u32).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for m in [&self.embed, &self.transition, &self.input, &self.head] {
            write_f32s(&mut w, m.data())?;
        }
        write_f32s(&mut w, &self.h_init)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(format_err("bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != MODEL_VERSION {
            return Err(format_err(format!("unsupported version {version}")));
        }
        let vocab = read_u32(&mut r)? as usize;
        let n = read_u32(&mut r)? as usize;
        let mut seed = [0u8; 8];
        r.read_exact(&mut seed)?;
        let seed = u64::from_le_bytes(seed);
        let embed = Matrix::from_vec(vocab, n, read_f32s(&mut r, vocab * n)?)?;
        let transition = Matrix::from_vec(n, n, read_f32s(&mut r, n * n)?)?;
        let input = Matrix::from_vec(n, n, read_f32s(&mut r, n * n)?)?;
        let head = Matrix::from_vec(n, vocab, read_f32s(&mut r, n * vocab)?)?;
        let h_init = read_f32s(&mut r, n)?;
        Self::from_parts(seed, embed, transition, input, head, h_init)
    }
}

const MODEL_MAGIC: &[u8; 4] = b"DRTM";
const MODEL_VERSION: u32 = 1;

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "model file",
        reason: reason.into(),
    }
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, xs: &[f32]) -> Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// splitmix64 finaliser, used to derive independent sub-seeds.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn recurrence(transition: &Matrix, input: Option<(&Matrix, &[f32])>, h: &[f32]) -> Result<HiddenState> {
    check_dim("recurrence state", transition.cols(), h.len())?;
    let mut pre = transition.mul_vec(h)?;
    if let Some((b, e)) = input {
        for (p, x) in pre.iter_mut().zip(b.mul_vec(e)?) {
            *p += x;
        }
    }
    Ok(pre.into_iter().map(f32::tanh).collect())
}

/// Produces the hidden-state chain a tree is drafted from.
pub trait Drafter {
    /// `[h1, …, h_steps]`, starting from the verified state `h0` and the
    /// last verified token `t1`.
    fn chain(&self, h0: &[f32], t1: TokenId, steps: usize) -> Result<Vec<HiddenState>>;
}

/// Single-layer hidden-state drafter paired with a target.
#[derive(Debug, Clone)]
pub struct DraftModel {
    target: Arc<TargetModel>,
    transition: Matrix,
    noise: f32,
}

impl DraftModel {
    /// `A' = A + σ·G` with `G` uniform in `[-1, 1]·sqrt(3/n)` drawn from `seed`.
    pub fn perturbed(target: Arc<TargetModel>, noise: f32, seed: u64) -> Result<Self> {
        if !(noise >= 0.0) || !noise.is_finite() {
            return Err(contract(format!("draft noise must be >= 0, got {noise}")));
        }
        let n = target.hidden_dim();
        let transition = if noise == 0.0 {
            target.transition.clone()
        } else {
            let g = seeded_matrix(n, n, sub_seed(seed, 17), (3.0 / n as f32).sqrt())?;
            target.transition.add_scaled(&g, noise)?
        };
        Ok(Self {
            target,
            transition,
            noise,
        })
    }

    /// Draft with an explicit transition matrix.
    pub fn with_transition(target: Arc<TargetModel>, transition: Matrix) -> Result<Self> {
        let n = target.hidden_dim();
        check_dim("DraftModel transition rows", n, transition.rows())?;
        check_dim("DraftModel transition cols", n, transition.cols())?;
        Ok(Self {
            target,
            transition,
            noise: f32::NAN,
        })
    }

    pub fn target(&self) -> &Arc<TargetModel> {
        &self.target
    }

    pub fn transition(&self) -> &Matrix {
        &self.transition
    }

    /// σ used to build the transition; NaN when given explicitly.
    pub fn noise(&self) -> f32 {
        self.noise
    }

    /// First draft state, anchored on the true target recurrence.
    pub fn init_state(&self, h0: &[f32], t1: TokenId) -> Result<HiddenState> {
        self.target.step(h0, t1)
    }

    /// `tanh(A'·h)`; takes no token.
    pub fn step(&self, h: &[f32]) -> Result<HiddenState> {
        recurrence(&self.transition, None, h)
    }
}

impl Drafter for DraftModel {
    fn chain(&self, h0: &[f32], t1: TokenId, steps: usize) -> Result<Vec<HiddenState>> {
        if steps == 0 {
            return Err(contract("draft chain length must be >= 1"));
        }
        let mut out = Vec::with_capacity(steps);
        out.push(self.init_state(h0, t1)?);
        for i in 1..steps {
            let next = self.step(&out[i - 1])?;
            out.push(next);
        }
        Ok(out)
    }
}

/// Logits for a whole chain through one matrix product:
/// `[l_1 … l_k] = [h_1 … h_k]ᵀ·W_head`.
pub fn one_pass_logits<H: AsRef<[f32]>>(states: &[H], head: &Matrix) -> Result<Vec<Vec<f32>>> {
    if states.is_empty() {
        return Err(contract("one_pass_logits needs at least one state"));
    }
    let stacked = Matrix::from_rows(states)?;
    let logits = gemm(&stacked, head)?;
    Ok((0..logits.rows()).map(|r| logits.row(r).to_vec()).collect())
}

/// `α·MSE(h, H) + β·CE(softmax(l'), softmax(L))`, where the second softmax is
/// the target distribution: `CE = −Σ softmax(L)·log softmax(l')`.
pub fn composite_loss(
    draft_hidden: &[f32],
    target_hidden: &[f32],
    draft_logits: &[f32],
    target_logits: &[f32],
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    check_dim("composite_loss hidden", target_hidden.len(), draft_hidden.len())?;
    check_dim("composite_loss logits", target_logits.len(), draft_logits.len())?;
    if !(alpha >= 0.0 && beta >= 0.0) {
        return Err(contract("loss weights must be >= 0"));
    }
    if draft_hidden.is_empty() {
        return Err(contract("composite_loss of empty states"));
    }
    let mse = draft_hidden
        .iter()
        .zip(target_hidden)
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / draft_hidden.len() as f64;
    let pred = softmax(draft_logits)?;
    let want = softmax(target_logits)?;
    let ce = -want
        .iter()
        .zip(&pred)
        .map(|(w, p)| w * p.ln())
        .sum::<f64>();
    Ok(alpha * mse + beta * ce)
}
